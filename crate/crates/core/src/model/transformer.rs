//! Pre-norm bidirectional transformer with a hand-written backward pass.

use rand::Rng as _;

use super::config::TransformerConfig;
use super::linalg::{
    layer_norm, layer_norm_backward, linear, linear_backward, matmul, Scalar, View,
};
use super::params::{init_params, Layout};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::sequence::TokenSequence;

/// Which query→key pairs may attend. The same pattern applies to every
/// layer and head: `[PAD]` keys are hidden from everyone, and the `[VID]` row
/// sees only itself and the video span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionScopeMask {
    pub len: usize,
    /// Keys visible to ordinary query rows.
    pub visible: Vec<bool>,
    pub vid_pos: usize,
    pub video_span: (usize, usize),
}

impl AttentionScopeMask {
    pub fn for_sequence(seq: &TokenSequence, pad: u32) -> Self {
        AttentionScopeMask {
            len: seq.len(),
            visible: seq.ids.iter().map(|&id| id != pad).collect(),
            vid_pos: seq.vid_pos,
            video_span: seq.video_span,
        }
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        if query == self.vid_pos {
            key == query || (self.video_span.0..self.video_span.1).contains(&key)
        } else {
            self.visible[key]
        }
    }

    /// Row-major `len × len` boolean matrix.
    pub fn matrix(&self) -> Vec<bool> {
        (0..self.len * self.len).map(|i| self.allows(i / self.len, i % self.len)).collect()
    }

    /// Additive softmax bias of one query row: 0 where allowed, −∞ elsewhere.
    fn bias<T: Scalar>(&self, query: usize) -> Vec<T> {
        (0..self.len)
            .map(|k| if self.allows(query, k) { T::zero() } else { T::neg_infinity() })
            .collect()
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    /// Row-major `n × k` logits over the video vocabulary, one row per video
    /// position.
    pub logits: Vec<f32>,
    pub n: usize,
    pub k: usize,
    pub rel_logit: f64,
    pub vid_logit: f64,
}

impl PredictorOutput {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.k..(i + 1) * self.k]
    }
}

/// Softmax attention weights of one layer and head over the full sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub len: usize,
    pub weights: Vec<f32>,
}

/// Anything that maps a token sequence to video logits and the two scores.
pub trait Predictor {
    fn predict(&self, seq: &TokenSequence) -> Result<PredictorOutput>;
    fn video_vocab(&self) -> usize;
}

/// Transformer parameters with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub cfg: TransformerConfig,
    pub layout: Layout,
    pub params: Vec<T>,
    /// Id of `[PAD]`, hidden from attention.
    pub pad_id: u32,
}

/// Deterministic initialization from `seed`.
pub fn init_model(cfg: TransformerConfig, seed: u64) -> Result<Model<f32>> {
    Model::init(cfg, seed)
}

/// Gradient requests for one sequence's backward pass.
pub(crate) struct HeadGrads<'a, T> {
    /// Gradient w.r.t. logits of the requested video rows (`rows × K`).
    pub logits: Option<&'a [T]>,
    pub rel: T,
    pub vid: T,
}

struct BlockCache<T> {
    q_rows: Option<Vec<usize>>,
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    drop1: Option<Vec<T>>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    drop2: Option<Vec<T>>,
}

/// Everything a backward pass needs from the forward pass.
pub(crate) struct ForwardCache<T> {
    ids: Vec<usize>,
    mods: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    final_rows: Vec<usize>,
    xhatf: Vec<T>,
    rstdf: Vec<T>,
    hf: Vec<T>,
    logit_rows: Vec<usize>,
    rel_row: usize,
    vid_row: usize,
}

pub(crate) struct RawOutput<T> {
    /// `logit_rows.len() × K`.
    pub logits: Vec<T>,
    pub rel: T,
    pub vid: T,
}

impl<T: Scalar> Model<T> {
    pub fn init(cfg: TransformerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = init_params(&cfg, &layout, seed);
        Ok(Model { cfg, layout, params, pad_id: 0 })
    }

    /// Assembles a model from parts, checking the parameter count.
    pub fn from_params(cfg: TransformerConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Model { cfg, layout, params, pad_id: 0 })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
            pad_id: self.pad_id,
        }
    }

    fn p(&self, offset: usize, len: usize) -> &[T] {
        &self.params[offset..offset + len]
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        if seq.len() > self.cfg.max_seq_len {
            return Err(Error::SequenceTooLong { len: seq.len(), max: self.cfg.max_seq_len });
        }
        if seq.tags.len() != seq.len() {
            return Err(Error::ShapeMismatch(format!("{} tags for {} tokens", seq.tags.len(), seq.len())));
        }
        let v = self.cfg.vocab_size();
        if let Some(&bad) = seq.ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::TokenOutOfRange { token: bad, size: v });
        }
        if seq.vid_pos >= seq.len() || seq.rel_pos >= seq.len() || seq.video_span.1 > seq.len() {
            return Err(Error::ShapeMismatch("sequence spans exceed its length".into()));
        }
        Ok(())
    }

    /// Full forward pass returning logits for every video position.
    pub fn forward(&self, seq: &TokenSequence) -> Result<PredictorOutput> {
        let all: Vec<usize> = (0..seq.video_len()).collect();
        let (raw, _) = self.run(seq, &all, false, None, None)?;
        self.to_output(raw, all.len())
    }

    /// Forward pass that also returns every layer's and head's attention weights.
    pub fn forward_with_attention(&self, seq: &TokenSequence) -> Result<(PredictorOutput, Vec<AttentionMap>)> {
        let all: Vec<usize> = (0..seq.video_len()).collect();
        let mut maps = Vec::new();
        let (raw, _) = self.run(seq, &all, false, None, Some(&mut maps))?;
        Ok((self.to_output(raw, all.len())?, maps))
    }

    fn to_output(&self, raw: RawOutput<T>, n: usize) -> Result<PredictorOutput> {
        let logits: Vec<f32> = raw.logits.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        let rel = raw.rel.to_f64().unwrap_or(f64::NAN);
        let vid = raw.vid.to_f64().unwrap_or(f64::NAN);
        if !rel.is_finite() || !vid.is_finite() || logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward pass produced non-finite outputs".into()));
        }
        Ok(PredictorOutput { logits, n, k: self.cfg.video_vocab, rel_logit: rel, vid_logit: vid })
    }

    /// Forward pass computing logits only for `logit_rows` (indices into the
    /// video span). With `cache`, keeps what [`Model::backward`] needs.
    /// `dropout_seed` enables residual dropout at the configured rate.
    pub(crate) fn run(
        &self,
        seq: &TokenSequence,
        logit_rows: &[usize],
        cache: bool,
        dropout_seed: Option<u64>,
        mut attention: Option<&mut Vec<AttentionMap>>,
    ) -> Result<(RawOutput<T>, Option<ForwardCache<T>>)> {
        self.check(seq)?;
        let cfg = &self.cfg;
        let lay = &self.layout;
        let d = cfg.model_dim;
        let n = seq.len();
        if let Some(&bad) = logit_rows.iter().find(|&&r| r >= seq.video_len()) {
            return Err(Error::InvalidArgument(format!("logit row {bad} outside the video span")));
        }
        let scope = AttentionScopeMask::for_sequence(seq, self.pad_id);
        let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let mods: Vec<usize> = seq.tags.iter().map(|t| t.index()).collect();

        let mut x = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &mut x[i * d..(i + 1) * d];
            let te = self.p(lay.tok_emb + ids[i] * d, d);
            let pe = self.p(lay.pos_emb + i * d, d);
            let me = self.p(lay.mod_emb + mods[i] * d, d);
            for j in 0..d {
                row[j] = te[j] + pe[j] + me[j];
            }
        }

        // The last block only needs the rows that feed an output head.
        let mut final_rows: Vec<usize> = logit_rows.iter().map(|&r| seq.video_span.0 + r).collect();
        final_rows.push(seq.rel_pos);
        final_rows.push(seq.vid_pos);
        final_rows.sort_unstable();
        final_rows.dedup();
        let subset_last = attention.is_none() && final_rows.len() < n;

        let drop_rate = match dropout_seed {
            Some(_) if cfg.dropout > 0.0 => Some(cfg.dropout),
            _ => None,
        };
        let mut drop_rng = dropout_seed.map(|s| rng::rng(s, &[stream::LAYER_DROPOUT]));
        let mut blocks = Vec::new();
        for l in 0..cfg.layers {
            let q_rows = if subset_last && l + 1 == cfg.layers { Some(final_rows.clone()) } else { None };
            let mut masks = [None, None];
            if let (Some(rate), Some(r)) = (drop_rate, drop_rng.as_mut()) {
                let rows = q_rows.as_ref().map_or(n, Vec::len);
                let keep = T::lit(1.0 / (1.0 - rate));
                for m in &mut masks {
                    *m = Some((0..rows * d).map(|_| if r.gen_bool(rate) { T::zero() } else { keep }).collect());
                }
            }
            let [drop1, drop2] = masks;
            let (out, bc) = self.block_forward(l, &x, n, q_rows, &scope, drop1, drop2, attention.as_deref_mut());
            x = out;
            if cache {
                blocks.push(bc);
            }
        }

        // Rows of `x` now correspond to `final_rows` when the subset was taken.
        let rows_now: Vec<usize> = if subset_last { final_rows.clone() } else { (0..n).collect() };
        let index_of = |pos: usize| rows_now.binary_search(&pos).expect("output row kept");
        let (hf, xhatf, rstdf) = layer_norm(&x, d, self.p(lay.lnf_g, d), self.p(lay.lnf_b, d));

        let k = cfg.video_vocab;
        let lrows: Vec<usize> = logit_rows.iter().map(|&r| index_of(seq.video_span.0 + r)).collect();
        let mut gathered = Vec::with_capacity(lrows.len() * d);
        for &r in &lrows {
            gathered.extend_from_slice(&hf[r * d..(r + 1) * d]);
        }
        let logits = linear(&gathered, lrows.len(), self.p(lay.head_w, d * k), self.p(lay.head_b, k), d, k);
        let rel_row = index_of(seq.rel_pos);
        let vid_row = index_of(seq.vid_pos);
        let dot = |row: usize, w: usize, b: usize| {
            let h = &hf[row * d..(row + 1) * d];
            h.iter().zip(self.p(w, d)).fold(self.params[b], |acc, (&a, &c)| acc + a * c)
        };
        let rel = dot(rel_row, lay.rel_w, lay.rel_b);
        let vid = dot(vid_row, lay.vid_w, lay.vid_b);
        let out = RawOutput { logits, rel, vid };
        let fc = cache.then(|| ForwardCache {
            ids,
            mods,
            blocks,
            final_rows: rows_now,
            xhatf,
            rstdf,
            hf,
            logit_rows: lrows,
            rel_row,
            vid_row,
        });
        Ok((out, fc))
    }

    #[allow(clippy::too_many_arguments)]
    fn block_forward(
        &self,
        l: usize,
        x: &[T],
        n: usize,
        q_rows: Option<Vec<usize>>,
        scope: &AttentionScopeMask,
        drop1: Option<Vec<T>>,
        drop2: Option<Vec<T>>,
        attention: Option<&mut Vec<AttentionMap>>,
    ) -> (Vec<T>, BlockCache<T>) {
        let cfg = &self.cfg;
        let s = &self.layout.blocks[l];
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let scale = T::lit(1.0 / (dh as f64).sqrt());

        let (h1, xhat1, rstd1) = layer_norm(x, d, self.p(s.ln1_g, d), self.p(s.ln1_b, d));
        let qkv = linear(&h1, n, self.p(s.wqkv, d * 3 * d), self.p(s.bqkv, 3 * d), d, 3 * d);
        let query_pos: Vec<usize> = q_rows.clone().unwrap_or_else(|| (0..n).collect());
        let nq = query_pos.len();
        let q_src: Vec<T>;
        let (q_buf, q_stride) = match &q_rows {
            None => (&qkv[..], 3 * d),
            Some(rows) => {
                q_src = rows.iter().flat_map(|&r| qkv[r * 3 * d..r * 3 * d + d].iter().copied()).collect();
                (&q_src[..], d)
            }
        };

        let bias = scope.bias::<T>(usize::MAX);
        let vid_bias = scope.bias::<T>(scope.vid_pos);
        let mut probs = vec![T::zero(); heads * nq * n];
        let mut attn = vec![T::zero(); nq * d];
        let mut attention = attention;
        for h in 0..heads {
            let p = &mut probs[h * nq * n..(h + 1) * nq * n];
            matmul(
                q_buf, View::cols_of(nq, q_stride, h * dh, dh), false,
                &qkv, View::cols_of(n, 3 * d, d + h * dh, dh), true,
                p, View::full(nq, n), false,
            );
            for (r, &qpos) in query_pos.iter().enumerate() {
                let bias = if qpos == scope.vid_pos { &vid_bias } else { &bias };
                T::softmax_row(&mut p[r * n..(r + 1) * n], bias, scale);
            }
            matmul(
                p, View::full(nq, n), false,
                &qkv, View::cols_of(n, 3 * d, 2 * d + h * dh, dh), false,
                &mut attn, View::cols_of(nq, d, h * dh, dh), false,
            );
            if let Some(maps) = attention.as_deref_mut() {
                maps.push(AttentionMap {
                    layer: l,
                    head: h,
                    len: n,
                    weights: p.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
                });
            }
        }

        let mut a = linear(&attn, nq, self.p(s.wo, d * d), self.p(s.bo, d), d, d);
        if let Some(m) = &drop1 {
            a.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        let mut x1 = a;
        for (r, &qpos) in query_pos.iter().enumerate() {
            for j in 0..d {
                x1[r * d + j] += x[qpos * d + j];
            }
        }
        let (h2, xhat2, rstd2) = layer_norm(&x1, d, self.p(s.ln2_g, d), self.p(s.ln2_b, d));
        let u = linear(&h2, nq, self.p(s.w1, d * f), self.p(s.b1, f), d, f);
        let mut g = vec![T::zero(); u.len()];
        T::gelu_slice(&u, &mut g);
        let mut ff = linear(&g, nq, self.p(s.w2, f * d), self.p(s.b2, d), f, d);
        if let Some(m) = &drop2 {
            ff.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        for (o, &v) in ff.iter_mut().zip(&x1) {
            *o += v;
        }
        let bc = BlockCache {
            q_rows,
            xhat1,
            rstd1,
            h1,
            qkv,
            probs,
            attn,
            drop1,
            xhat2,
            rstd2,
            h2,
            u,
            g,
            drop2,
        };
        (ff, bc)
    }

    /// Accumulates parameter gradients of a forward pass into `grads`.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, head: HeadGrads<'_, T>, grads: &mut [T]) {
        let cfg = &self.cfg;
        let lay = &self.layout;
        let d = cfg.model_dim;
        let k = cfg.video_vocab;
        let rows = cache.final_rows.len();

        let mut dhf = vec![T::zero(); rows * d];
        if let Some(dl) = head.logits {
            let m = cache.logit_rows.len();
            let mut gathered = Vec::with_capacity(m * d);
            for &r in &cache.logit_rows {
                gathered.extend_from_slice(&cache.hf[r * d..(r + 1) * d]);
            }
            let (gw, gb) = grads[lay.head_w..lay.head_b + k].split_at_mut(d * k);
            let dg = linear_backward(&gathered, dl, m, self.p(lay.head_w, d * k), d, k, gw, gb);
            for (i, &r) in cache.logit_rows.iter().enumerate() {
                for j in 0..d {
                    dhf[r * d + j] += dg[i * d + j];
                }
            }
        }
        for (row, w, b, g) in [(cache.rel_row, lay.rel_w, lay.rel_b, head.rel), (cache.vid_row, lay.vid_w, lay.vid_b, head.vid)] {
            if g == T::zero() {
                continue;
            }
            grads[b] += g;
            for j in 0..d {
                grads[w + j] += g * cache.hf[row * d + j];
                dhf[row * d + j] += g * self.params[w + j];
            }
        }
        let (gg, gb) = grads[lay.lnf_g..lay.lnf_b + d].split_at_mut(d);
        let mut dx = layer_norm_backward(&dhf, &cache.xhatf, &cache.rstdf, d, self.p(lay.lnf_g, d), gg, gb);

        for l in (0..cfg.layers).rev() {
            dx = self.block_backward(l, &cache.blocks[l], &dx, cache.ids.len(), grads);
        }

        for (i, (&id, &m)) in cache.ids.iter().zip(&cache.mods).enumerate() {
            let g = &dx[i * d..(i + 1) * d];
            for j in 0..d {
                grads[lay.tok_emb + id * d + j] += g[j];
                grads[lay.pos_emb + i * d + j] += g[j];
                grads[lay.mod_emb + m * d + j] += g[j];
            }
        }
    }

    fn block_backward(&self, l: usize, c: &BlockCache<T>, dout: &[T], n: usize, grads: &mut [T]) -> Vec<T> {
        let cfg = &self.cfg;
        let s = &self.layout.blocks[l];
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let query_pos: Vec<usize> = c.q_rows.clone().unwrap_or_else(|| (0..n).collect());
        let nq = query_pos.len();

        // Feed-forward branch.
        let mut dff = dout.to_vec();
        if let Some(m) = &c.drop2 {
            dff.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        let dg = {
            let (gw, gb) = grads[s.w2..s.b2 + d].split_at_mut(f * d);
            linear_backward(&c.g, &dff, nq, self.p(s.w2, f * d), f, d, gw, gb)
        };
        let mut du = dg;
        T::gelu_grad_slice(&c.u, &mut du);
        let dh2 = {
            let (gw, gb) = grads[s.w1..s.b1 + f].split_at_mut(d * f);
            linear_backward(&c.h2, &du, nq, self.p(s.w1, d * f), d, f, gw, gb)
        };
        let mut dx1 = {
            let (gg, gb) = grads[s.ln2_g..s.ln2_b + d].split_at_mut(d);
            layer_norm_backward(&dh2, &c.xhat2, &c.rstd2, d, self.p(s.ln2_g, d), gg, gb)
        };
        for (a, &b) in dx1.iter_mut().zip(dout) {
            *a += b;
        }

        // Attention branch.
        let mut da = dx1.clone();
        if let Some(m) = &c.drop1 {
            da.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        let dattn = {
            let (gw, gb) = grads[s.wo..s.bo + d].split_at_mut(d * d);
            linear_backward(&c.attn, &da, nq, self.p(s.wo, d * d), d, d, gw, gb)
        };
        let q_src: Vec<T>;
        let (q_buf, q_stride) = match &c.q_rows {
            None => (&c.qkv[..], 3 * d),
            Some(rows) => {
                q_src = rows.iter().flat_map(|&r| c.qkv[r * 3 * d..r * 3 * d + d].iter().copied()).collect();
                (&q_src[..], d)
            }
        };
        let mut dqkv = vec![T::zero(); n * 3 * d];
        let mut dq = vec![T::zero(); nq * d];
        let mut dp = vec![T::zero(); nq * n];
        for h in 0..heads {
            let p = &c.probs[h * nq * n..(h + 1) * nq * n];
            matmul(
                &dattn, View::cols_of(nq, d, h * dh, dh), false,
                &c.qkv, View::cols_of(n, 3 * d, 2 * d + h * dh, dh), true,
                &mut dp, View::full(nq, n), false,
            );
            matmul(
                p, View::full(nq, n), true,
                &dattn, View::cols_of(nq, d, h * dh, dh), false,
                &mut dqkv, View::cols_of(n, 3 * d, 2 * d + h * dh, dh), false,
            );
            for r in 0..nq {
                T::softmax_grad_row(&p[r * n..(r + 1) * n], &mut dp[r * n..(r + 1) * n], scale);
            }
            matmul(
                &dp, View::full(nq, n), false,
                &c.qkv, View::cols_of(n, 3 * d, d + h * dh, dh), false,
                &mut dq, View::cols_of(nq, d, h * dh, dh), false,
            );
            matmul(
                &dp, View::full(nq, n), true,
                q_buf, View::cols_of(nq, q_stride, h * dh, dh), false,
                &mut dqkv, View::cols_of(n, 3 * d, d + h * dh, dh), false,
            );
        }
        for (r, &qpos) in query_pos.iter().enumerate() {
            dqkv[qpos * 3 * d..qpos * 3 * d + d].copy_from_slice(&dq[r * d..(r + 1) * d]);
        }
        let dh1 = {
            let (gw, gb) = grads[s.wqkv..s.bqkv + 3 * d].split_at_mut(d * 3 * d);
            linear_backward(&c.h1, &dqkv, n, self.p(s.wqkv, d * 3 * d), d, 3 * d, gw, gb)
        };
        let mut dx = {
            let (gg, gb) = grads[s.ln1_g..s.ln1_b + d].split_at_mut(d);
            layer_norm_backward(&dh1, &c.xhat1, &c.rstd1, d, self.p(s.ln1_g, d), gg, gb)
        };
        for (r, &qpos) in query_pos.iter().enumerate() {
            for j in 0..d {
                dx[qpos * d + j] += dx1[r * d + j];
            }
        }
        dx
    }
}

impl Predictor for Model<f32> {
    fn predict(&self, seq: &TokenSequence) -> Result<PredictorOutput> {
        self.forward(seq)
    }

    fn video_vocab(&self) -> usize {
        self.cfg.video_vocab
    }
}
