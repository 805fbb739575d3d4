//! Annealed, beam-searched mask-predict with preservation control.

mod schedule;
mod trace;

pub use schedule::{mask_count, noise_level, AnnealingSchedule};
pub use trace::write_trace;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::TokenGrid;
use crate::error::{Error, Result};
use crate::model::linalg::sigmoid;
use crate::model::{Predictor, PredictorOutput};
use crate::rng::{self, stream, Rng};
use crate::sequence::{build_sequence, Controls, TokenSequence, Vocab};
use crate::world::MAX_PROMPT_WORDS;

/// Everything that steers one mask-predict run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    pub mask_schedule: AnnealingSchedule,
    pub noise_schedule: AnnealingSchedule,
    /// Beam count.
    #[serde(rename = "B")]
    pub beams: usize,
    pub early_stop: bool,
    pub patience: usize,
    /// Keep the tokens of positions that stayed unmasked instead of
    /// resampling them from the re-prediction.
    pub carry_over: bool,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            mask_schedule: AnnealingSchedule::mask_default(),
            noise_schedule: AnnealingSchedule::noise_default(),
            beams: 3,
            early_stop: false,
            patience: 3,
            carry_over: true,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        self.mask_schedule.validate()?;
        self.noise_schedule.validate()?;
        if self.beams == 0 {
            return Err(Error::InvalidArgument("beam count B must be at least 1".into()));
        }
        Ok(())
    }

    /// Same parameters with the noise schedule pinned at σ ≡ 0.
    pub fn without_noise(&self) -> Self {
        SamplerParams {
            noise_schedule: AnnealingSchedule { alpha1: 0.0, beta1: 0.0, alpha2: 0.0, alpha3: 0.0, ..self.noise_schedule },
            ..self.clone()
        }
    }
}

/// Scores read from one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScores {
    pub rel: f64,
    pub vid: f64,
    pub avg: f64,
}

/// `(sigmoid(rel), sigmoid(vid), their mean)`.
pub fn sequence_scores(output: &PredictorOutput) -> SequenceScores {
    let rel = sigmoid(output.rel_logit);
    let vid = sigmoid(output.vid_logit);
    SequenceScores { rel, vid, avg: 0.5 * (rel + vid) }
}

fn gumbel(rng: &mut Rng) -> f64 {
    let u: f64 = rng.gen();
    let u = u.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    -(-u.ln()).ln()
}

/// Perturbed softmax of one logit row: `softmax(logits + σ·g)`, g ~ Gumbel.
fn noisy_probs(row: &[f32], sigma: f64, rng: &mut Rng, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, &l) in out.iter_mut().zip(row) {
        let g = if sigma > 0.0 { sigma * gumbel(rng) } else { 0.0 };
        *o = l as f64 + g;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn categorical(p: &[f64], rng: &mut Rng) -> usize {
    let target = rng.gen::<f64>();
    let mut cum = 0.0;
    let mut last = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 {
            cum += pj;
            last = j;
            if cum > target {
                return j;
            }
        }
    }
    last
}

fn check_logits(logits: &[f32], k: usize) -> Result<usize> {
    if k == 0 || logits.len() % k != 0 {
        return Err(Error::ShapeMismatch(format!("{} logits do not split into rows of {k}", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sampling logits".into()));
    }
    Ok(logits.len() / k)
}

/// Per position: `p = softmax(p̃ + σ·g)`, `z ~ p`, `y = p[z]`.
pub fn sample_token(logits: &[f32], k: usize, sigma: f64, seed: u64) -> Result<(Vec<u16>, Vec<f64>)> {
    sample_token_with(logits, k, sigma, seed, None)
}

/// [`sample_token`] that, for positions where `keep` holds a token, keeps it
/// and reports its probability instead.
fn sample_token_with(
    logits: &[f32],
    k: usize,
    sigma: f64,
    seed: u64,
    keep: Option<&[Option<u16>]>,
) -> Result<(Vec<u16>, Vec<f64>)> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} must be non-negative")));
    }
    let n = check_logits(logits, k)?;
    let mut rng = rng::rng(seed, &[stream::TOKEN]);
    let mut p = vec![0.0; k];
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        noisy_probs(&logits[i * k..(i + 1) * k], sigma, &mut rng, &mut p);
        let draw = categorical(&p, &mut rng);
        let tok = keep.and_then(|kp| kp[i]).map_or(draw, usize::from);
        z.push(tok as u16);
        y.push(p[tok]);
    }
    Ok((z, y))
}

/// Keeps `keep_n` positions drawn without replacement from the non-preserved
/// ones with probability ∝ `y`, then ORs in `preserve`.
pub fn sample_mask(y: &[f64], preserve: &[bool], keep_n: usize, seed: u64) -> Result<Vec<bool>> {
    if y.len() != preserve.len() {
        return Err(Error::ShapeMismatch(format!("{} weights for {} positions", y.len(), preserve.len())));
    }
    let free: Vec<usize> = (0..y.len()).filter(|&i| !preserve[i]).collect();
    if keep_n > free.len() {
        return Err(Error::InvalidArgument(format!("cannot keep {keep_n} of {} free positions", free.len())));
    }
    if let Some(bad) = free.iter().find(|&&i| !(y[i] >= 0.0 && y[i].is_finite())) {
        return Err(Error::InvalidArgument(format!("weight {} at position {bad} is not a probability", y[*bad])));
    }
    let total: f64 = free.iter().map(|&i| y[i]).sum();
    let mut rng = rng::rng(seed, &[stream::MASK]);
    // Exponential-race keys: the keep_n smallest E_i / w_i are a weighted
    // draw without replacement.
    let mut keyed: Vec<(f64, usize)> = free
        .iter()
        .map(|&i| {
            let u: f64 = rng.gen();
            let e = -(1.0 - u).ln();
            let w = if total > 0.0 { y[i] / total } else { 1.0 };
            (if w > 0.0 { e / w } else { f64::INFINITY }, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut m = preserve.to_vec();
    for &(_, i) in keyed.iter().take(keep_n) {
        m[i] = true;
    }
    Ok(m)
}

/// One mask-predict iteration as recorded in a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Kept-position mask of every beam; at iteration 1 the preservation mask.
    pub beam_masks: Vec<Vec<bool>>,
    pub beam_scores: Vec<SequenceScores>,
    pub chosen: usize,
    pub remasked: usize,
    pub sigma: f64,
    /// Tokens after sampling and the preservation merge.
    pub tokens: Vec<u16>,
}

/// Output of [`mask_predict_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPredictRun {
    pub grid: TokenGrid,
    pub trace: Vec<TraceStep>,
    /// Scores of the prediction the final tokens were sampled from.
    pub final_scores: SequenceScores,
    pub forward_calls: usize,
}

/// Generates a token grid for `controls`. Positions with `preserve[i]` keep
/// `z_init`'s token at every iteration.
pub fn mask_predict<P: Predictor + ?Sized>(
    model: &P,
    vocab: &Vocab,
    controls: &Controls,
    preserve: &[bool],
    z_init: &TokenGrid,
    params: &SamplerParams,
    seed: u64,
) -> Result<TokenGrid> {
    Ok(mask_predict_traced(model, vocab, controls, preserve, z_init, params, seed)?.grid)
}

/// [`mask_predict`] with a per-iteration record.
pub fn mask_predict_traced<P: Predictor + ?Sized>(
    model: &P,
    vocab: &Vocab,
    controls: &Controls,
    preserve: &[bool],
    z_init: &TokenGrid,
    params: &SamplerParams,
    seed: u64,
) -> Result<MaskPredictRun> {
    params.validate()?;
    let n = z_init.len();
    if preserve.len() != n {
        return Err(Error::ShapeMismatch(format!("preservation mask covers {} of {n} positions", preserve.len())));
    }
    let k = model.video_vocab();
    if let Some((i, &t)) = z_init.tokens.iter().enumerate().find(|(i, &t)| preserve[*i] && t as usize >= k) {
        return Err(Error::InvalidArgument(format!("preserved position {i} holds token {t} outside the vocabulary of {k}")));
    }
    let frozen = preserve.iter().filter(|&&p| p).count();
    let template = build_sequence(vocab, controls, z_init, MAX_PROMPT_WORDS)?;
    let mut calls = 0usize;
    let mut predict = |kept: &[bool], tokens: &[u16]| -> Result<PredictorOutput> {
        calls += 1;
        let ids: Vec<u32> = tokens
            .iter()
            .zip(kept)
            .map(|(&t, &keep)| if keep { vocab.video_id(t) } else { Ok(vocab.mask) })
            .collect::<Result<_>>()?;
        let seq: TokenSequence = template.with_video_ids(&ids)?;
        let out = model.predict(&seq)?;
        if out.n != n || out.k != k {
            return Err(Error::ShapeMismatch(format!("predictor returned {}×{} logits for {n}×{k}", out.n, out.k)));
        }
        Ok(out)
    };
    let merge = |tokens: &mut Vec<u16>| {
        for (i, t) in tokens.iter_mut().enumerate() {
            if preserve[i] {
                *t = z_init.tokens[i];
            }
        }
    };
    let steps = params.mask_schedule.steps;
    let mut trace = Vec::with_capacity(steps);

    let out = predict(preserve, &z_init.tokens)?;
    let sigma = noise_level(1, &params.noise_schedule)?;
    let (mut z, mut y) = sample_token_with(&out.logits, k, sigma, rng::derive(seed, &[stream::TOKEN, 1]), None)?;
    merge(&mut z);
    let mut final_scores = sequence_scores(&out);
    trace.push(TraceStep {
        iteration: 1,
        beam_masks: vec![preserve.to_vec()],
        beam_scores: vec![final_scores],
        chosen: 0,
        remasked: n - frozen,
        sigma,
        tokens: z.clone(),
    });
    let mut best = final_scores.avg;
    let mut stale = 0usize;

    for i in 2..=steps {
        let remask = mask_count(i, &params.mask_schedule, n, frozen)?;
        let keep_n = n - frozen - remask;
        let mut beams = Vec::with_capacity(params.beams);
        for b in 0..params.beams {
            let m = sample_mask(&y, preserve, keep_n, rng::derive(seed, &[stream::MASK, i as u64, b as u64]))?;
            let out = predict(&m, &z)?;
            beams.push((m, out));
        }
        let scores: Vec<SequenceScores> = beams.iter().map(|(_, o)| sequence_scores(o)).collect();
        let chosen = (1..scores.len()).fold(0, |best, b| if scores[b].avg > scores[best].avg { b } else { best });
        let (m, out) = &beams[chosen];
        let sigma = noise_level(i, &params.noise_schedule)?;
        let keep: Vec<Option<u16>> = if params.carry_over {
            m.iter().zip(&z).map(|(&kept, &t)| kept.then_some(t)).collect()
        } else {
            vec![None; n]
        };
        let (mut zn, yn) =
            sample_token_with(&out.logits, k, sigma, rng::derive(seed, &[stream::TOKEN, i as u64]), Some(&keep))?;
        merge(&mut zn);
        z = zn;
        y = yn;
        final_scores = scores[chosen];
        trace.push(TraceStep {
            iteration: i,
            beam_masks: beams.iter().map(|(m, _)| m.clone()).collect(),
            beam_scores: scores,
            chosen,
            remasked: remask,
            sigma,
            tokens: z.clone(),
        });
        if params.early_stop {
            if final_scores.avg > best {
                best = final_scores.avg;
                stale = 0;
            } else {
                stale += 1;
                if stale >= params.patience {
                    break;
                }
            }
        }
    }
    let grid = TokenGrid::new(z_init.frames, z_init.height, z_init.width, z)?;
    Ok(MaskPredictRun { grid, trace, final_scores, forward_calls: calls })
}

#[cfg(test)]
mod tests;
