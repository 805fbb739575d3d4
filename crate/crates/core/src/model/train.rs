//! Batch construction and the optimization loop.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TransformerConfig;
use super::loss::{LossBreakdown, TrainExample};
use super::transformer::{init_model, Model};
use crate::codebook::{Codebook, TokenGrid};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::sequence::{
    apply_mask, build_sequence, negative_video_augment, sample_msm_plan, swap_conditions, text_dropout, AugmentConfig,
    Controls, MaskingConfig, RelMode, Vocab,
};
use crate::world::{render_text, DatasetClip, ShapeSpec, MAX_PROMPT_WORDS};
use crate::clip::VideoClip;

/// Learning-rate shape after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay to `min_lr_ratio · lr` at the final step.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub schedule: LrSchedule,
    pub min_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub rel_mode: RelMode,
    /// Sentence dropout probability applied to training prompts.
    pub text_dropout: f64,
    pub masking: MaskingConfig,
    pub augment: AugmentConfig,
    pub log_every: usize,
    /// Checkpoint period in steps; 0 saves only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 2,
            lr: 3e-4,
            warmup_steps: 200,
            schedule: LrSchedule::Constant,
            min_lr_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            rel_mode: RelMode::Swap,
            text_dropout: 0.0,
            masking: MaskingConfig::default(),
            augment: AugmentConfig::default(),
            log_every: 50,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &TransformerConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.rel_mode == RelMode::Swap && self.batch_size < 2 {
            return bad("REL swap mode needs batch_size ≥ 2".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("invalid optimizer settings lr={} beta1={} beta2={}", self.lr, self.beta1, self.beta2));
        }
        if !self.augment.enabled() && model.lambda_vid > 0.0 {
            return bad("video augmentation disabled while lambda_vid > 0".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
                let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
                let floor = self.lr * self.min_lr_ratio;
                floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// A training clip with its token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub spec: ShapeSpec,
    pub clip: VideoClip,
    pub grid: TokenGrid,
}

/// Encodes every dataset clip.
pub fn prepare_items(codebook: &Codebook, clips: &[DatasetClip]) -> Result<Vec<TrainItem>> {
    clips
        .iter()
        .map(|c| Ok(TrainItem { spec: c.spec, clip: c.clip.clone(), grid: codebook.encode(&c.clip)? }))
        .collect()
}

/// Builds the training examples of one step: per item a fresh prompt, one
/// masking plan shared by the positive and both negatives, a REL negative
/// with another item's controls and a VID negative from an augmented clip.
pub fn build_batch(
    vocab: &Vocab,
    codebook: &Codebook,
    items: &[TrainItem],
    picks: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<TrainExample>> {
    let controls: Vec<Controls> = picks
        .iter()
        .enumerate()
        .map(|(b, &i)| {
            let prompt = render_text(&items[i].spec, rng::derive(seed, &[stream::TEXT, b as u64]));
            let prompt = text_dropout(&prompt, cfg.text_dropout, rng::derive(seed, &[stream::DROPOUT, b as u64]))?;
            Ok(Controls { prompt, visual: None })
        })
        .collect::<Result<_>>()?;
    let swapped = swap_conditions(&controls, cfg.rel_mode, rng::derive(seed, &[stream::SWAP]))?;
    let mut out = Vec::with_capacity(picks.len());
    for (b, &i) in picks.iter().enumerate() {
        let item = &items[i];
        let grid = &item.grid;
        let plan = (0u64..)
            .map(|attempt| {
                sample_msm_plan(grid.frames, grid.height, grid.width, rng::derive(seed, &[stream::MSM, b as u64, attempt]), &cfg.masking)
            })
            .find(|p| p.masked_count() > 0)
            .expect("some plan masks a position");
        let seq = build_sequence(vocab, &controls[b], grid, MAX_PROMPT_WORDS)?;
        let (positive, masked) = apply_mask(&seq, &plan, vocab)?;
        let targets = masked.iter().map(|&m| grid.tokens[m]).collect();
        let rel_seq = build_sequence(vocab, &swapped[b], grid, MAX_PROMPT_WORDS)?;
        let (rel_negative, _) = apply_mask(&rel_seq, &plan, vocab)?;
        let vid_negative = if cfg.augment.enabled() {
            let mut r = rng::rng(seed, &[stream::AUGMENT, b as u64]);
            let donor = loop {
                let d = r.gen_range(0..items.len());
                if d != i || items.len() == 1 {
                    break d;
                }
            };
            let (aug, _) = negative_video_augment(&item.clip, None, r.gen(), Some(&items[donor].clip), &cfg.augment)?;
            let aug_grid = codebook.encode(&aug)?;
            let vid_seq = build_sequence(vocab, &controls[b], &aug_grid, MAX_PROMPT_WORDS)?;
            apply_mask(&vid_seq, &plan, vocab)?.0
        } else {
            positive.clone()
        };
        out.push(TrainExample { positive, masked, targets, rel_negative, vid_negative });
    }
    Ok(out)
}

/// One metrics-log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub msm: f64,
    pub rel: f64,
    pub vid: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (cfg.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Where training writes its outputs.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.log")
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<MetricRecord>,
}

/// Trains a freshly initialized model for `cfg.steps` steps. Fully
/// deterministic in `seed`. With `outputs`, appends metrics to the log file
/// and writes periodic and final checkpoints.
pub fn train(
    model_cfg: &TransformerConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
    codebook: &Codebook,
    items: &[TrainItem],
    seed: u64,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainOutcome> {
    let model = init_model(model_cfg.clone(), rng::derive(seed, &[stream::INIT]))?;
    train_from(model, cfg, vocab, codebook, items, seed, outputs, |_| {})
}

/// [`train`] starting from given parameters, calling `progress` after each
/// logged step.
#[allow(clippy::too_many_arguments)]
pub fn train_from(
    mut model: Model<f32>,
    cfg: &TrainConfig,
    vocab: &Vocab,
    codebook: &Codebook,
    items: &[TrainItem],
    seed: u64,
    outputs: Option<&TrainOutputs>,
    mut progress: impl FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    cfg.validate(&model.cfg)?;
    if items.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut log_file = match outputs {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            let path = o.metrics();
            Some((OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let start = Instant::now();
    let mut adam = Adam::new(model.param_count());
    let mut grads = vec![0.0f32; model.param_count()];
    let mut log = Vec::new();
    let mut window = LossBreakdown::default();
    let mut window_len = 0usize;
    for step in 0..cfg.steps {
        let step_seed = rng::derive(seed, &[stream::BATCH, step as u64]);
        let mut r = rng::rng(step_seed, &[stream::DATASET]);
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| r.gen_range(0..items.len())).collect();
        let batch = build_batch(vocab, codebook, items, &picks, cfg, step_seed)?;
        grads.fill(0.0);
        let losses = model
            .loss_and_grad(&batch, Some(rng::derive(step_seed, &[stream::LAYER_DROPOUT])), Some(&mut grads))
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("step {step}: {m}")),
                other => other,
            })?;
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("step {step}: gradient of parameter {bad} is not finite")));
        }
        if cfg.grad_clip > 0.0 {
            let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let s = (cfg.grad_clip / norm) as f32;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = cfg.lr_at(step);
        adam.step(&mut model.params, &grads, lr, cfg);
        window.msm += losses.msm;
        window.rel += losses.rel;
        window.vid += losses.vid;
        window_len += 1;

        let last = step + 1 == cfg.steps;
        if cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || last) || (cfg.log_every == 0 && last) {
            let n = window_len as f64;
            let rec = MetricRecord {
                step: step + 1,
                msm: window.msm / n,
                rel: window.rel / n,
                vid: window.vid / n,
                lr,
                wall_time: start.elapsed().as_secs_f64(),
            };
            window = LossBreakdown::default();
            window_len = 0;
            if let Some((f, path)) = log_file.as_mut() {
                writeln!(
                    f,
                    "{{ step = {}, msm = {:.6}, rel = {:.6}, vid = {:.6}, lr = {:e}, wall_time = {:.3} }}",
                    rec.step, rec.msm, rec.rel, rec.vid, rec.lr, rec.wall_time
                )
                .map_err(|e| Error::io(&*path, e))?;
            }
            progress(&rec);
            log.push(rec);
        }
        if let Some(o) = outputs {
            if last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
                Checkpoint { model: model.clone(), step: (step + 1) as u64 }.save(&o.checkpoint())?;
            }
        }
    }
    Ok(TrainOutcome { model, log })
}

/// Parses a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    #[derive(Deserialize)]
    struct Line {
        r: MetricRecord,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            toml::from_str::<Line>(&format!("r = {l}"))
                .map(|line| line.r)
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect()
}
