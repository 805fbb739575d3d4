//! Masked-token, relevance and video-consistency objectives.

use std::collections::HashSet;

use super::linalg::{sigmoid, softplus, Scalar};
use super::transformer::{HeadGrads, Model, PredictorOutput};
use super::config::TransformerConfig;
use crate::error::{Error, Result};
use crate::sequence::TokenSequence;

/// Mean cross-entropy of `targets` under row-major `rows × k` logits, with
/// the gradient w.r.t. the logits scaled by `weight`.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T], k: usize, targets: &[u16], weight: f64) -> (f64, Vec<T>) {
    let m = targets.len();
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); logits.len()];
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64().unwrap_or(f64::NAN)));
        let sum: f64 = row.iter().map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[t as usize].to_f64().unwrap_or(f64::NAN);
        let g = &mut grad[r * k..(r + 1) * k];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j].to_f64().unwrap_or(f64::NAN) - lse).exp();
            let onehot = if j == t as usize { 1.0 } else { 0.0 };
            *gv = T::lit(weight * (p - onehot) / m as f64);
        }
    }
    (loss / m as f64, grad)
}

/// `−(1/|ℳ|) Σ_{i∈ℳ} log P(target_i)`. `targets` covers every video position;
/// `masked` is the set ℳ of positions scored.
pub fn msm_loss(output: &PredictorOutput, targets: &[u16], masked: &[usize]) -> Result<f64> {
    if masked.is_empty() {
        return Err(Error::Empty("masked position set"));
    }
    if targets.len() != output.n {
        return Err(Error::ShapeMismatch(format!("{} targets for {} positions", targets.len(), output.n)));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(masked.len() * output.k);
    let mut tgt = Vec::with_capacity(masked.len());
    for &i in masked {
        if i >= output.n {
            return Err(Error::InvalidArgument(format!("masked position {i} outside {} positions", output.n)));
        }
        if !seen.insert(i) {
            return Err(Error::InvalidArgument(format!("masked position {i} listed twice")));
        }
        let t = targets[i];
        if t as usize >= output.k {
            return Err(Error::TokenOutOfRange { token: t as u32, size: output.k });
        }
        rows.extend(output.row(i).iter().map(|&v| v as f64));
        tgt.push(t);
    }
    Ok(cross_entropy(&rows, output.k, &tgt, 1.0).0)
}

/// Binary cross-entropy with the positive logit labelled 1 and the negative 0.
pub fn pair_bce(pos_logit: f64, neg_logit: f64) -> f64 {
    softplus(-pos_logit) + softplus(neg_logit)
}

/// Relevance loss read from the `[REL]` logits of a true and a swapped pairing.
pub fn rel_loss(pos: &PredictorOutput, neg: &PredictorOutput) -> f64 {
    pair_bce(pos.rel_logit, neg.rel_logit)
}

/// Video-consistency loss read from the `[VID]` logits of a true and an
/// augmented video.
pub fn vid_loss(pos: &PredictorOutput, neg: &PredictorOutput) -> f64 {
    pair_bce(pos.vid_logit, neg.vid_logit)
}

/// `λ_MSM·msm + λ_REL·rel + λ_VID·vid`.
pub fn total_loss(cfg: &TransformerConfig, msm: f64, rel: f64, vid: f64) -> f64 {
    cfg.lambda_msm * msm + cfg.lambda_rel * rel + cfg.lambda_vid * vid
}

/// One training item: the masked positive sequence and its two negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub positive: TokenSequence,
    /// Masked video positions (the set ℳ), strictly increasing.
    pub masked: Vec<usize>,
    /// Original tokens at `masked`.
    pub targets: Vec<u16>,
    /// Same masked video, controls of another item.
    pub rel_negative: TokenSequence,
    /// Augmented video under the same mask plan, true controls.
    pub vid_negative: TokenSequence,
}

/// Batch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub msm: f64,
    pub rel: f64,
    pub vid: f64,
    pub total: f64,
}

impl<T: Scalar> Model<T> {
    /// Batch-mean losses; with `grads`, also accumulates the gradient of the
    /// total loss. Loss terms with a zero weight are evaluated but not
    /// back-propagated.
    pub fn loss_and_grad(
        &self,
        batch: &[TrainExample],
        dropout_seed: Option<u64>,
        mut grads: Option<&mut [T]>,
    ) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        if let Some(g) = grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::ShapeMismatch(format!("{} gradient slots for {} parameters", g.len(), self.params.len())));
            }
        }
        let cfg = &self.cfg;
        let b = batch.len() as f64;
        let mut out = LossBreakdown::default();
        let seed_for = |item: usize, which: u64| dropout_seed.map(|s| crate::rng::derive(s, &[item as u64, which]));
        for (idx, ex) in batch.iter().enumerate() {
            if ex.masked.is_empty() {
                return Err(Error::Empty("masked position set"));
            }
            if ex.masked.len() != ex.targets.len() {
                return Err(Error::ShapeMismatch("masked positions and targets differ in length".into()));
            }
            if ex.masked.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument("masked positions must be strictly increasing".into()));
            }
            let k = cfg.video_vocab;
            if let Some(&t) = ex.targets.iter().find(|&&t| t as usize >= k) {
                return Err(Error::TokenOutOfRange { token: t as u32, size: k });
            }
            let want = grads.is_some();
            let (pos, pc) = self.run(&ex.positive, &ex.masked, want, seed_for(idx, 0), None)?;
            let (msm, dlogits) = cross_entropy(&pos.logits, k, &ex.targets, cfg.lambda_msm / b);
            let need_rel = want && cfg.lambda_rel > 0.0;
            let need_vid = want && cfg.lambda_vid > 0.0;
            let (rn, rc) = self.run(&ex.rel_negative, &[], need_rel, seed_for(idx, 1), None)?;
            let (vn, vc) = self.run(&ex.vid_negative, &[], need_vid, seed_for(idx, 2), None)?;
            let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
            let (rp, rneg, vp, vneg) = (f(pos.rel), f(rn.rel), f(pos.vid), f(vn.vid));
            let rel = pair_bce(rp, rneg);
            let vid = pair_bce(vp, vneg);
            for (name, v) in [("msm", msm), ("rel", rel), ("vid", vid)] {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("{name} loss of batch item {idx} is {v}")));
                }
            }
            out.msm += msm / b;
            out.rel += rel / b;
            out.vid += vid / b;
            if let Some(g) = grads.as_deref_mut() {
                // d softplus(-x)/dx = sigmoid(x) - 1, d softplus(x)/dx = sigmoid(x)
                let wr = cfg.lambda_rel / b;
                let wv = cfg.lambda_vid / b;
                let head = HeadGrads {
                    logits: (cfg.lambda_msm > 0.0).then_some(&dlogits[..]),
                    rel: T::lit(wr * (sigmoid(rp) - 1.0)),
                    vid: T::lit(wv * (sigmoid(vp) - 1.0)),
                };
                self.backward(pc.as_ref().expect("cache requested"), head, g);
                if let Some(c) = rc {
                    self.backward(&c, HeadGrads { logits: None, rel: T::lit(wr * sigmoid(rneg)), vid: T::zero() }, g);
                }
                if let Some(c) = vc {
                    self.backward(&c, HeadGrads { logits: None, rel: T::zero(), vid: T::lit(wv * sigmoid(vneg)) }, g);
                }
            }
        }
        out.total = total_loss(cfg, out.msm, out.rel, out.vid);
        Ok(out)
    }
}
