use maskvid::codebook::{fit_codebook, Codebook, KMeansConfig};
use maskvid::model::{
    read_metrics, train, Checkpoint, MetricRecord, TrainConfig, TrainItem, TrainOutputs, TransformerConfig,
};
use maskvid::sequence::Vocab;
use maskvid::world::{enumerate_specs, World, WorldConfig, MAX_PROMPT_WORDS};

const K: usize = 32;

struct Fixture {
    vocab: Vocab,
    codebook: Codebook,
    items: Vec<TrainItem>,
    model: TransformerConfig,
}

/// Four 16×16, 2-frame clips of distinct specs and a 32-entry codebook.
fn fixture() -> Fixture {
    let world = World::new(WorldConfig {
        height: 16,
        width: 16,
        frames: 2,
        small_size: 4,
        large_size: 8,
        texture_cell: 4,
        ..WorldConfig::default()
    })
    .unwrap();
    let specs = enumerate_specs();
    let clips: Vec<_> = [0, 95, 190, 285]
        .iter()
        .map(|&i| (specs[i], world.generate_clip(&specs[i], 2, i as u64).unwrap()))
        .collect();
    let all: Vec<_> = clips.iter().map(|c| c.1.clone()).collect();
    let codebook = fit_codebook(&all, K, 4, 0, KMeansConfig::default()).unwrap();
    let items = clips
        .into_iter()
        .map(|(spec, clip)| TrainItem { spec, grid: codebook.encode(&clip).unwrap(), clip })
        .collect();
    let vocab = Vocab::new(K);
    let model = TransformerConfig {
        layers: 2,
        heads: 2,
        model_dim: 32,
        ffn_dim: 64,
        max_seq_len: MAX_PROMPT_WORDS + 2 * 4 * 4 + 2,
        dropout: 0.0,
        ..TransformerConfig::default()
    }
    .with_vocab(&vocab);
    Fixture { vocab, codebook, items, model }
}

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch_size: 4, lr: 3e-3, warmup_steps: 10, log_every: 1, ..TrainConfig::default() }
}

fn mean_msm(log: &[MetricRecord]) -> f64 {
    log.iter().map(|r| r.msm).sum::<f64>() / log.len() as f64
}

#[test]
fn overfits_one_batch() {
    let f = fixture();
    let c = TrainConfig { lr: 1e-2, ..cfg(300) };
    let out = train(&f.model, &c, &f.vocab, &f.codebook, &f.items, 1, None).unwrap();
    let (first, last) = (mean_msm(&out.log[..5]), mean_msm(&out.log[out.log.len() - 10..]));
    assert!(last < 0.1 * first, "msm {first:.3} -> {last:.3}");
}

#[test]
fn zero_weights_freeze_the_heads() {
    let f = fixture();
    let model = TransformerConfig { lambda_rel: 0.0, lambda_vid: 0.0, ..f.model.clone() };
    let init = maskvid::model::init_model(model.clone(), maskvid::rng::derive(2, &[maskvid::rng::stream::INIT])).unwrap();
    let out = train(&model, &cfg(20), &f.vocab, &f.codebook, &f.items, 2, None).unwrap();
    for name in ["rel_w", "rel_b", "vid_w", "vid_b"] {
        let r = init.layout.tensor(name).unwrap().range();
        assert_eq!(out.model.params[r.clone()], init.params[r], "{name} moved");
    }
    let r = init.layout.tensor("head_w").unwrap().range();
    assert_ne!(out.model.params[r.clone()], init.params[r]);
    assert!(out.log.iter().all(|m| m.rel > 0.0 && m.vid > 0.0));
}

#[test]
fn same_seed_same_curve() {
    let f = fixture();
    let run = |seed| train(&f.model, &cfg(15), &f.vocab, &f.codebook, &f.items, seed, None).unwrap();
    let (a, b, c) = (run(3), run(3), run(4));
    let losses = |log: &[MetricRecord]| log.iter().map(|r| (r.msm, r.rel, r.vid)).collect::<Vec<_>>();
    assert_eq!(losses(&a.log), losses(&b.log));
    assert_eq!(a.model.params, b.model.params);
    assert_ne!(losses(&a.log), losses(&c.log));
}

#[test]
fn outputs_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let outputs = TrainOutputs { dir: dir.path().join("train") };
    let c = TrainConfig { log_every: 4, checkpoint_every: 5, ..cfg(10) };
    let out = train(&f.model, &c, &f.vocab, &f.codebook, &f.items, 5, Some(&outputs)).unwrap();
    let logged = read_metrics(&outputs.metrics()).unwrap();
    assert_eq!(logged.iter().map(|r| r.step).collect::<Vec<_>>(), [4, 8, 10]);
    for (a, b) in logged.iter().zip(&out.log) {
        assert!((a.msm - b.msm).abs() < 1e-5 && (a.rel - b.rel).abs() < 1e-5 && (a.vid - b.vid).abs() < 1e-5);
    }
    let ck = Checkpoint::load(&outputs.checkpoint()).unwrap();
    assert_eq!(ck.step, 10);
    assert_eq!(ck.model.params, out.model.params);
    assert_eq!(ck.model.cfg, out.model.cfg);
}

#[test]
fn bad_settings_are_rejected() {
    let f = fixture();
    let run = |c: TrainConfig| train(&f.model, &c, &f.vocab, &f.codebook, &f.items, 0, None);
    assert!(run(TrainConfig { batch_size: 1, ..cfg(1) }).is_err());
    assert!(run(TrainConfig { lr: 0.0, ..cfg(1) }).is_err());
    assert!(train(&f.model, &cfg(1), &f.vocab, &f.codebook, &[], 0, None).is_err());
}
