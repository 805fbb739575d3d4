//! Flat parameter layout and initialization.

use rand_distr::{Distribution, Normal};

use super::config::TransformerConfig;
use super::linalg::Scalar;
use crate::rng::{self, stream};
use crate::sequence::Modality;

/// Offsets of one transformer block's tensors in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub bqkv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// A named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Where every tensor lives. Matrices are row-major `in × out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub mod_emb: usize,
    pub blocks: Vec<BlockSlots>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub rel_w: usize,
    pub rel_b: usize,
    pub vid_w: usize,
    pub vid_b: usize,
    pub total: usize,
    pub tensors: Vec<TensorInfo>,
}

impl Layout {
    pub fn new(cfg: &TransformerConfig) -> Layout {
        let d = cfg.model_dim;
        let f = cfg.ffn_dim;
        let mut tensors: Vec<TensorInfo> = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = total;
            let t = TensorInfo { name, offset, shape };
            total += t.len();
            tensors.push(t);
            offset
        };
        let tok_emb = add("tok_emb".into(), vec![cfg.vocab_size(), d]);
        let pos_emb = add("pos_emb".into(), vec![cfg.max_seq_len, d]);
        let mod_emb = add("mod_emb".into(), vec![Modality::COUNT, d]);
        let blocks = (0..cfg.layers)
            .map(|l| {
                let mut a = |n: &str, shape: Vec<usize>| add(format!("block{l}.{n}"), shape);
                BlockSlots {
                    ln1_g: a("ln1_g", vec![d]),
                    ln1_b: a("ln1_b", vec![d]),
                    wqkv: a("wqkv", vec![d, 3 * d]),
                    bqkv: a("bqkv", vec![3 * d]),
                    wo: a("wo", vec![d, d]),
                    bo: a("bo", vec![d]),
                    ln2_g: a("ln2_g", vec![d]),
                    ln2_b: a("ln2_b", vec![d]),
                    w1: a("w1", vec![d, f]),
                    b1: a("b1", vec![f]),
                    w2: a("w2", vec![f, d]),
                    b2: a("b2", vec![d]),
                }
            })
            .collect();
        let lnf_g = add("lnf_g".into(), vec![d]);
        let lnf_b = add("lnf_b".into(), vec![d]);
        let head_w = add("head_w".into(), vec![d, cfg.video_vocab]);
        let head_b = add("head_b".into(), vec![cfg.video_vocab]);
        let rel_w = add("rel_w".into(), vec![d]);
        let rel_b = add("rel_b".into(), vec![1]);
        let vid_w = add("vid_w".into(), vec![d]);
        let vid_b = add("vid_b".into(), vec![1]);
        Layout {
            tok_emb,
            pos_emb,
            mod_emb,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            rel_w,
            rel_b,
            vid_w,
            vid_b,
            total,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Draws initial parameters: N(0, 0.02) weights and embeddings, output
/// projections of residual branches shrunk by `sqrt(2·layers)`, zero biases,
/// unit layer-norm gains.
pub fn init_params<T: Scalar>(cfg: &TransformerConfig, layout: &Layout, seed: u64) -> Vec<T> {
    let mut p = vec![T::zero(); layout.total];
    let mut rng = rng::rng(seed, &[stream::INIT]);
    let std = 0.02;
    let resid_std = std / (2.0 * cfg.layers as f64).sqrt();
    for t in &layout.tensors {
        let leaf = t.name.rsplit('.').next().unwrap_or(&t.name);
        let sd = match leaf {
            "ln1_g" | "ln2_g" | "lnf_g" => {
                p[t.range()].fill(T::one());
                continue;
            }
            "ln1_b" | "ln2_b" | "lnf_b" | "bqkv" | "bo" | "b1" | "b2" | "head_b" | "rel_b" | "vid_b" => continue,
            "wo" | "w2" => resid_std,
            _ => std,
        };
        let normal = Normal::new(0.0, sd).expect("positive std");
        for v in &mut p[t.range()] {
            *v = T::lit(normal.sample(&mut rng));
        }
    }
    p
}
