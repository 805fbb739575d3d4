//! Attribute accuracy, diversity and augmentation-ablation reports scored by
//! the world's pixel oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::{Codebook, TokenGrid};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::{self, stream};
use crate::sampler::{mask_predict, SamplerParams};
use crate::sequence::{AugmentConfig, Controls, Vocab};
use crate::world::{
    enumerate_specs, oracle_classify, render_partial_text, render_text, write_toml, PartialSpec, ShapeSpec, TextPrompt,
    Verdict, World,
};

/// How generations are conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    TextOnly,
    /// Text plus the first frame of a real clip with its center removed,
    /// frozen through the preservation mask.
    TextPlusPartialImage,
}

/// Per-attribute accuracy in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub shape: f64,
    pub color: f64,
    pub size: f64,
    pub motion: f64,
    pub direction: f64,
    pub average: f64,
    pub samples: usize,
    pub fingerprint: String,
}

impl AccuracyTable {
    /// Builds a table from per-attribute hit counts.
    pub fn from_hits(hits: [usize; 5], samples: usize, fingerprint: String) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Empty("evaluation samples"));
        }
        let acc = hits.map(|h| h as f64 / samples as f64);
        Ok(AccuracyTable {
            shape: acc[0],
            color: acc[1],
            size: acc[2],
            motion: acc[3],
            direction: acc[4],
            average: acc.iter().sum::<f64>() / 5.0,
            samples,
            fingerprint,
        })
    }

    pub fn columns(&self) -> [f64; 5] {
        [self.shape, self.color, self.size, self.motion, self.direction]
    }

    /// Mean of the five columns; equals `average` for any table built here.
    pub fn recomputed_average(&self) -> f64 {
        self.columns().iter().sum::<f64>() / 5.0
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Text table with percentages.
    pub fn render(&self, label: &str) -> String {
        render_rows(&[(label.to_string(), self.clone())])
    }
}

fn render_rows(rows: &[(String, AccuracyTable)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} | Shape  | Color  | Size   | Motion | Dir    | Avg    | N", "Variant");
    let _ = writeln!(s, "{}", "-".repeat(width + 60));
    for (label, t) in rows {
        let _ = write!(s, "{label:<width$}");
        for v in t.columns().iter().chain([t.average].iter()) {
            let _ = write!(s, " | {:>6.2}", 100.0 * v);
        }
        let _ = writeln!(s, " | {}", t.samples);
    }
    s
}

/// Hex SHA-256 of `text`.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shared inputs of every evaluation.
pub struct EvalContext<'a, P: Predictor + ?Sized> {
    pub model: &'a P,
    pub codebook: &'a Codebook,
    pub vocab: &'a Vocab,
    pub world: &'a World,
    pub sampler: &'a SamplerParams,
    /// Token grid geometry `(frames, height, width)` generated per sample.
    pub grid: (usize, usize, usize),
}

/// Record persisted for every evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub prompt: String,
    pub spec: ShapeSpec,
    pub verdict: Verdict,
    pub hits: [bool; 5],
}

/// Generates the evaluation input for one spec: prompt, preservation mask and
/// initial grid.
pub fn condition_for(
    ctx_world: &World,
    codebook: &Codebook,
    grid: (usize, usize, usize),
    spec: &ShapeSpec,
    mode: ConditionMode,
    seed: u64,
) -> Result<(TextPrompt, Vec<bool>, TokenGrid)> {
    let (t, h, w) = grid;
    let prompt = render_text(spec, rng::derive(seed, &[stream::TEXT]));
    match mode {
        ConditionMode::TextOnly => Ok((prompt, vec![false; t * h * w], TokenGrid::filled(t, h, w, 0))),
        ConditionMode::TextPlusPartialImage => {
            let clip = ctx_world.generate_clip(spec, t, rng::derive(seed, &[stream::CLIP]))?;
            let real = codebook.encode(&clip)?;
            let mut init = TokenGrid::filled(t, h, w, 0);
            let mut preserve = vec![false; t * h * w];
            let (y0, y1) = (h / 4, h - h / 4);
            let (x0, x1) = (w / 4, w - w / 4);
            for y in 0..h {
                for x in 0..w {
                    let center = (y0..y1).contains(&y) && (x0..x1).contains(&x);
                    if !center {
                        preserve[y * w + x] = true;
                        init.tokens[y * w + x] = real.tokens[y * w + x];
                    }
                }
            }
            Ok((prompt, preserve, init))
        }
    }
}

/// Samples `n_samples` specs uniformly, generates a video for each and
/// scores the oracle's verdict against the spec. Unrecognizable attributes
/// count as wrong. With `artifacts`, writes one directory per sample.
pub fn attribute_accuracy<P: Predictor + ?Sized>(
    ctx: &EvalContext<'_, P>,
    n_samples: usize,
    mode: ConditionMode,
    seed: u64,
    fingerprint: &str,
    artifacts: Option<&Path>,
) -> Result<(AccuracyTable, Vec<SampleRecord>)> {
    if n_samples == 0 {
        return Err(Error::Empty("evaluation samples"));
    }
    let specs = enumerate_specs();
    let mut hits = [0usize; 5];
    let mut records = Vec::with_capacity(n_samples);
    for index in 0..n_samples {
        let sample_seed = rng::derive(seed, &[stream::EVAL, index as u64]);
        let spec = specs[rng::rng(sample_seed, &[stream::DATASET]).gen_range(0..specs.len())];
        let (prompt, preserve, init) = condition_for(ctx.world, ctx.codebook, ctx.grid, &spec, mode, sample_seed)?;
        let controls = Controls { prompt: prompt.clone(), visual: None };
        let out = mask_predict(ctx.model, ctx.vocab, &controls, &preserve, &init, ctx.sampler, sample_seed)?;
        assert!(preserve.iter().zip(&out.tokens).zip(&init.tokens).all(|((&p, a), b)| !p || a == b));
        let clip = ctx.codebook.decode(&out)?;
        let verdict = oracle_classify(ctx.world, &clip);
        let m = verdict.matches(&spec);
        for (h, &ok) in hits.iter_mut().zip(&m) {
            *h += ok as usize;
        }
        let rec = SampleRecord { index, prompt: prompt.to_text(), spec, verdict, hits: m };
        if let Some(dir) = artifacts {
            let d = dir.join(format!("sample_{index:04}"));
            write_toml(&d.join("record.toml"), &rec)?;
            clip.write_gif(&d.join("video.gif"), 4)?;
        }
        records.push(rec);
    }
    Ok((AccuracyTable::from_hits(hits, n_samples, fingerprint.to_string())?, records))
}

/// Outcome distribution of generations from one underconstrained prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub prompt: String,
    pub samples: usize,
    /// Distinct oracle verdicts (unrecognizable attributes included as such).
    pub distinct_specs: usize,
    pub distinct_ratio: f64,
    /// Samples whose verdict satisfies every constrained attribute.
    pub consistent: usize,
    /// Per unconstrained attribute: verdict word (or "unrecognizable") → count.
    pub distributions: BTreeMap<String, BTreeMap<String, usize>>,
}

fn word<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "unrecognizable".to_string(), |v| v.to_string())
}

/// Generates `n_samples` videos for `partial` and tabulates the verdicts.
pub fn diversity_report<P: Predictor + ?Sized>(
    ctx: &EvalContext<'_, P>,
    partial: &PartialSpec,
    n_samples: usize,
    seed: u64,
) -> Result<DiversityReport> {
    if n_samples == 0 {
        return Err(Error::Empty("diversity samples"));
    }
    let (t, h, w) = ctx.grid;
    let prompt = render_partial_text(partial, seed);
    let controls = Controls { prompt: prompt.clone(), visual: None };
    let init = TokenGrid::filled(t, h, w, 0);
    let preserve = vec![false; t * h * w];
    let mut outcomes = BTreeSet::new();
    let mut consistent = 0;
    let mut distributions: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for i in 0..n_samples {
        let s = rng::derive(seed, &[stream::EVAL, i as u64]);
        let out = mask_predict(ctx.model, ctx.vocab, &controls, &preserve, &init, ctx.sampler, s)?;
        let v = oracle_classify(ctx.world, &ctx.codebook.decode(&out)?);
        let key = (
            word(v.shape),
            word(v.color),
            word(v.size),
            word(v.motion),
            word(v.direction),
        );
        consistent += partial.satisfied_by(&v) as usize;
        let open = [
            ("shape", partial.shape.is_none(), &key.0),
            ("color", partial.color.is_none(), &key.1),
            ("size", partial.size.is_none(), &key.2),
            ("motion", partial.motion.is_none(), &key.3),
            ("direction", partial.direction.is_none(), &key.4),
        ];
        for (name, is_open, value) in open {
            if is_open {
                *distributions.entry(name.to_string()).or_default().entry(value.clone()).or_default() += 1;
            }
        }
        outcomes.insert(key);
    }
    Ok(DiversityReport {
        prompt: prompt.to_text(),
        samples: n_samples,
        distinct_specs: outcomes.len(),
        distinct_ratio: outcomes.len() as f64 / n_samples as f64,
        consistent,
        distributions,
    })
}

/// Video-augmentation subsets compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentVariant {
    None,
    Swap,
    Shuffle,
    Color,
    Affine,
    All,
}

impl AugmentVariant {
    pub const ALL: [AugmentVariant; 6] = [
        AugmentVariant::None,
        AugmentVariant::Swap,
        AugmentVariant::Shuffle,
        AugmentVariant::Color,
        AugmentVariant::Affine,
        AugmentVariant::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentVariant::None => "none",
            AugmentVariant::Swap => "swap",
            AugmentVariant::Shuffle => "shuffle",
            AugmentVariant::Color => "color",
            AugmentVariant::Affine => "affine",
            AugmentVariant::All => "all",
        }
    }

    /// Augmentation probabilities of this variant. `None` disables the
    /// video-consistency objective altogether.
    pub fn augment_config(self, base: &AugmentConfig) -> AugmentConfig {
        let probs = match self {
            AugmentVariant::None => [0.0; 4],
            AugmentVariant::Swap => [1.0, 0.0, 0.0, 0.0],
            AugmentVariant::Shuffle => [0.0, 1.0, 0.0, 0.0],
            AugmentVariant::Color => [0.0, 0.0, 1.0, 0.0],
            AugmentVariant::Affine => [0.0, 0.0, 0.0, 1.0],
            AugmentVariant::All => [0.25; 4],
        };
        AugmentConfig { probs, ..base.clone() }
    }
}

/// Table with one accuracy row per augmentation variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<(AugmentVariant, AccuracyTable)>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let rows: Vec<(String, AccuracyTable)> = self.rows.iter().map(|(v, t)| (v.name().to_string(), t.clone())).collect();
        render_rows(&rows)
    }
}

/// Runs [`attribute_accuracy`] on each variant's model with the same seed.
pub fn ablation_vid<P: Predictor + ?Sized>(
    variants: &[(AugmentVariant, EvalContext<'_, P>)],
    n_samples: usize,
    seed: u64,
) -> Result<AblationTable> {
    let rows = variants
        .iter()
        .map(|(v, ctx)| {
            let (t, _) = attribute_accuracy(ctx, n_samples, ConditionMode::TextOnly, seed, v.name(), None)?;
            Ok((*v, t))
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{fit_codebook, KMeansConfig};
    use crate::model::{init_model, PredictorOutput, TransformerConfig};
    use crate::sequence::TokenSequence;
    use crate::world::{Shape, WorldConfig};

    /// Reads the attribute words back out of the prompt and puts all the mass
    /// on the tokens of a real clip with that spec.
    struct Bypass<'a> {
        world: &'a World,
        codebook: &'a Codebook,
        vocab: &'a Vocab,
    }

    impl Predictor for Bypass<'_> {
        fn predict(&self, seq: &TokenSequence) -> Result<PredictorOutput> {
            let words: Vec<&str> = seq
                .control_ids()
                .iter()
                .filter_map(|&id| id.checked_sub(self.vocab.text_offset))
                .filter_map(|i| self.vocab.words.get(i as usize).map(String::as_str))
                .collect();
            let spec = enumerate_specs()
                .into_iter()
                .find(|s| {
                    [s.shape.word(), s.color.word(), s.size.word(), s.motion.word(), s.direction.word()]
                        .iter()
                        .all(|w| words.contains(w))
                })
                .expect("prompt names a full spec");
            let grid = self.codebook.encode(&self.world.generate_clip(&spec, 8, 3)?)?;
            let k = self.codebook.k();
            let mut logits = vec![0.0f32; grid.len() * k];
            for (i, &t) in grid.tokens.iter().enumerate() {
                logits[i * k + t as usize] = 30.0;
            }
            Ok(PredictorOutput { logits, n: grid.len(), k, rel_logit: 0.0, vid_logit: 0.0 })
        }

        fn video_vocab(&self) -> usize {
            self.codebook.k()
        }
    }

    fn setup() -> (World, Codebook, Vocab) {
        let world = World::new(WorldConfig::default()).unwrap();
        let clips: Vec<_> = enumerate_specs()
            .iter()
            .map(|s| world.generate_clip(s, 8, s.ordinal() as u64).unwrap())
            .collect();
        let codebook = fit_codebook(&clips, 256, 4, 0, KMeansConfig::default()).unwrap();
        let vocab = Vocab::new(codebook.k());
        (world, codebook, vocab)
    }

    fn quick_sampler() -> SamplerParams {
        SamplerParams { beams: 1, ..SamplerParams::default() }
    }

    #[test]
    fn table_average_is_mean_of_columns() {
        let t = AccuracyTable::from_hits([10, 7, 3, 0, 5], 10, fingerprint("cfg")).unwrap();
        assert_eq!(t.columns(), [1.0, 0.7, 0.3, 0.0, 0.5]);
        assert!((t.average - 0.5).abs() < 1e-12);
        assert_eq!(t.average, t.recomputed_average());
        assert_eq!(t.fingerprint.len(), 64);
        assert!(AccuracyTable::from_hits([0; 5], 0, String::new()).is_err());
        let back: AccuracyTable = toml::from_str(&t.to_toml().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bypass_predictor_scores_perfectly_in_both_modes() {
        let (world, codebook, vocab) = setup();
        let sampler = quick_sampler();
        let bypass = Bypass { world: &world, codebook: &codebook, vocab: &vocab };
        let ctx = EvalContext { model: &bypass, codebook: &codebook, vocab: &vocab, world: &world, sampler: &sampler, grid: (8, 8, 8) };
        let dir = tempfile::tempdir().unwrap();
        let (t, records) = attribute_accuracy(&ctx, 12, ConditionMode::TextOnly, 1, "fp", Some(dir.path())).unwrap();
        assert_eq!(t.columns(), [1.0; 5], "{}", t.render("bypass"));
        assert_eq!(records.len(), 12);
        assert!(dir.path().join("sample_0011/record.toml").exists());
        assert!(dir.path().join("sample_0011/video.gif").exists());
        // The frozen border comes from a clip the fixture cannot see, so only
        // the appearance attributes are guaranteed here.
        let (t, _) = attribute_accuracy(&ctx, 6, ConditionMode::TextPlusPartialImage, 2, "fp", None).unwrap();
        assert_eq!(t.columns()[..3], [1.0; 3]);
    }

    #[test]
    fn partial_image_condition_freezes_the_border() {
        let (world, codebook, _) = setup();
        let spec = enumerate_specs()[17];
        let (_, preserve, init) =
            condition_for(&world, &codebook, (8, 8, 8), &spec, ConditionMode::TextPlusPartialImage, 4).unwrap();
        assert_eq!(preserve.iter().filter(|&&p| p).count(), 64 - 16);
        assert!(!preserve[2 * 8 + 2] && !preserve[5 * 8 + 5] && !preserve[8 * 8]);
        assert!(preserve[0] && preserve[7] && preserve[1 * 8 + 3]);
        assert_eq!(init.tokens.len(), 512);
        let (_, preserve, _) = condition_for(&world, &codebook, (8, 8, 8), &spec, ConditionMode::TextOnly, 4).unwrap();
        assert!(preserve.iter().all(|&p| !p));
    }

    #[test]
    fn single_sample_diversity_ratio_is_one() {
        let (world, codebook, vocab) = setup();
        let sampler = quick_sampler();
        let model = init_model(tiny_cfg(&vocab), 0).unwrap();
        let ctx = EvalContext { model: &model, codebook: &codebook, vocab: &vocab, world: &world, sampler: &sampler, grid: (8, 8, 8) };
        let partial = PartialSpec { shape: Some(Shape::Circle), ..PartialSpec::default() };
        let r = diversity_report(&ctx, &partial, 1, 0).unwrap();
        assert_eq!((r.samples, r.distinct_specs, r.distinct_ratio), (1, 1, 1.0));
        assert_eq!(r.distributions.keys().cloned().collect::<Vec<_>>(), ["color", "direction", "motion", "size"]);
        assert!(r.distributions.values().all(|d| d.values().sum::<usize>() == 1));
        assert!(diversity_report(&ctx, &partial, 0, 0).is_err());
    }

    fn tiny_cfg(vocab: &Vocab) -> TransformerConfig {
        TransformerConfig { layers: 1, heads: 1, model_dim: 16, ffn_dim: 32, dropout: 0.0, ..Default::default() }
            .with_vocab(vocab)
    }

    #[test]
    fn untrained_model_is_no_better_than_chance() {
        let (world, codebook, vocab) = setup();
        let sampler = quick_sampler();
        let model = init_model(tiny_cfg(&vocab), 9).unwrap();
        let ctx = EvalContext { model: &model, codebook: &codebook, vocab: &vocab, world: &world, sampler: &sampler, grid: (8, 8, 8) };
        let n = 40;
        let (t, records) = attribute_accuracy(&ctx, n, ConditionMode::TextOnly, 3, "fp", None).unwrap();
        // An attribute is right at best by chance among recognizable verdicts,
        // so each column stays under 1/values plus three binomial deviations.
        let values = [3.0, 4.0, 2.0, 2.0, 8.0];
        for (acc, v) in t.columns().iter().zip(values) {
            let p = 1.0 / v;
            let bound = p + 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!(*acc <= bound, "{acc} > {bound}\n{}", t.render("untrained"));
        }
        assert_eq!(records.len(), n);
    }

    #[test]
    fn augment_variants_isolate_one_augmentation() {
        let base = AugmentConfig::default();
        assert!(!AugmentVariant::None.augment_config(&base).enabled());
        assert_eq!(AugmentVariant::Shuffle.augment_config(&base).probs, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(AugmentVariant::All.augment_config(&base).probs, [0.25; 4]);
        let names: BTreeSet<_> = AugmentVariant::ALL.iter().map(|v| v.name()).collect();
        assert_eq!(names.len(), 6);
    }
}
