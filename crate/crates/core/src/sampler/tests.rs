use std::cell::Cell;

use super::*;
use crate::world::parse_prompt;

/// Deterministic stand-in predictor: logits favour token `(position + 1) % k`
/// and the scores depend on how many video positions are masked.
struct Fixed {
    k: usize,
    vocab: Vocab,
    calls: Cell<usize>,
}

impl Predictor for Fixed {
    fn predict(&self, seq: &TokenSequence) -> Result<PredictorOutput> {
        self.calls.set(self.calls.get() + 1);
        let n = seq.video_len();
        let mut logits = vec![0.0f32; n * self.k];
        for i in 0..n {
            logits[i * self.k + (i + 1) % self.k] = 2.0;
        }
        let masked = seq.video_ids().iter().filter(|&&id| id == self.vocab.mask).count();
        Ok(PredictorOutput { logits, n, k: self.k, rel_logit: -(masked as f64) * 0.01, vid_logit: 0.3 })
    }

    fn video_vocab(&self) -> usize {
        self.k
    }
}

fn fixture() -> (Fixed, Controls, TokenGrid) {
    let vocab = Vocab::new(8);
    let controls = Controls { prompt: parse_prompt("a red square").unwrap(), visual: None };
    let grid = TokenGrid::new(2, 2, 2, vec![0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
    (Fixed { k: 8, vocab, calls: Cell::new(0) }, controls, grid)
}

#[test]
fn mask_schedule_values() {
    let s = AnnealingSchedule::mask_default();
    let counts: Vec<usize> = [1, 10, 15, 25].iter().map(|&i| mask_count(i, &s, 512, 0).unwrap()).collect();
    assert_eq!(counts, vec![461, 51, 64, 32]);
    assert_eq!(mask_count(1, &s, 512, 500).unwrap(), 12);
    assert!(mask_count(0, &s, 512, 0).is_err());
}

#[test]
fn noise_schedule_values() {
    let s = AnnealingSchedule::noise_default();
    assert_eq!(noise_level(1, &s).unwrap(), 0.4);
    assert!((noise_level(10, &s).unwrap() - 0.02).abs() < 1e-15);
    assert_eq!(noise_level(12, &s).unwrap(), 0.01);
    assert_eq!(noise_level(20, &s).unwrap(), 0.0);
    assert!(noise_level(0, &s).is_err());
    let single = AnnealingSchedule { phase1: 1, ..s };
    assert_eq!(single.level(1).unwrap(), 0.4);
    assert!(AnnealingSchedule { phase1: 0, ..s }.validate().is_err());
    assert!(AnnealingSchedule { phase2: 20, ..s }.validate().is_err());
}

#[test]
fn saturated_logits_pick_the_winner() {
    let logits: Vec<f32> = (0..100_000).flat_map(|_| [20.0, -20.0]).collect();
    let (z, y) = sample_token(&logits, 2, 0.0, 1).unwrap();
    let zeros = z.iter().filter(|&&t| t == 0).count();
    assert!(zeros as f64 / 1e5 >= 0.9999);
    assert!(y.iter().all(|&v| v > 0.0 && v <= 1.0));
}

#[test]
fn y_gathers_the_sampled_probability() {
    let logits = vec![0.5f32, 1.5, -0.2, 0.0, 0.1, 0.3];
    let (z, y) = sample_token(&logits, 3, 0.0, 4).unwrap();
    for i in 0..2 {
        let row = &logits[i * 3..(i + 1) * 3];
        let sum: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
        assert!((y[i] - (row[z[i] as usize] as f64).exp() / sum).abs() < 1e-12);
    }
    assert!(sample_token(&[f32::NAN, 0.0], 2, 0.0, 0).is_err());
    assert!(sample_token(&[0.0, 0.0], 2, -1.0, 0).is_err());
}

#[test]
fn sample_mask_contracts() {
    let y = [0.4, 0.3, 0.2, 0.1];
    let pc = [true, false, false, false];
    assert_eq!(sample_mask(&y, &pc, 3, 0).unwrap(), vec![true; 4]);
    assert_eq!(sample_mask(&y, &pc, 0, 0).unwrap(), pc.to_vec());
    assert!(sample_mask(&y, &pc, 4, 0).is_err());
    let m = sample_mask(&y, &pc, 2, 9).unwrap();
    assert_eq!(m.iter().filter(|&&b| b).count(), 3);
}

#[test]
fn full_preservation_returns_input() {
    let (model, controls, grid) = fixture();
    let out = mask_predict(&model, &model.vocab, &controls, &[true; 8], &grid, &SamplerParams::default(), 3).unwrap();
    assert_eq!(out, grid);
}

#[test]
fn single_step_single_beam_calls_once() {
    let (model, controls, grid) = fixture();
    let params = SamplerParams {
        mask_schedule: AnnealingSchedule { steps: 1, phase1: 1, phase2: 0, ..AnnealingSchedule::mask_default() },
        noise_schedule: AnnealingSchedule { steps: 1, phase1: 1, phase2: 0, ..AnnealingSchedule::noise_default() },
        beams: 1,
        ..SamplerParams::default()
    };
    let run = mask_predict_traced(&model, &model.vocab, &controls, &[false; 8], &grid, &params, 3).unwrap();
    assert_eq!(model.calls.get(), 1);
    assert_eq!(run.forward_calls, 1);
    assert_eq!(run.trace.len(), 1);
}

#[test]
fn call_count_and_beam_choice() {
    let (model, controls, grid) = fixture();
    let params = SamplerParams::default();
    let pc = [true, false, false, true, false, false, false, false];
    let run = mask_predict_traced(&model, &model.vocab, &controls, &pc, &grid, &params, 5).unwrap();
    assert_eq!(run.forward_calls, 1 + 19 * 3);
    for step in &run.trace {
        let best = step.beam_scores.iter().map(|s| s.avg).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(step.beam_scores[step.chosen].avg, best);
        assert!(step.beam_scores[..step.chosen].iter().all(|s| s.avg < best));
        assert_eq!(step.tokens[0], 0);
        assert_eq!(step.tokens[3], 3);
    }
    let again = mask_predict_traced(&model, &model.vocab, &controls, &pc, &grid, &params, 5).unwrap();
    assert_eq!(again, run);
}

#[test]
fn early_stop_halts_on_stale_scores() {
    let (model, controls, grid) = fixture();
    let params = SamplerParams { early_stop: true, patience: 2, ..SamplerParams::default() };
    let run = mask_predict_traced(&model, &model.vocab, &controls, &[false; 8], &grid, &params, 5).unwrap();
    assert!(run.trace.len() < 20);
}

#[test]
fn scores() {
    let out = PredictorOutput { logits: vec![], n: 0, k: 1, rel_logit: 0.0, vid_logit: 0.0 };
    let s = sequence_scores(&out);
    assert_eq!((s.rel, s.vid, s.avg), (0.5, 0.5, 0.5));
    let hi = sequence_scores(&PredictorOutput { rel_logit: 0.1, ..out.clone() });
    assert!(hi.avg > s.avg);
}

#[test]
fn config_keys() {
    let text = toml::to_string(&SamplerParams::default()).unwrap();
    assert!(text.contains("B = 3"));
    assert!(text.contains("L1 = 10"));
    let back: SamplerParams = toml::from_str(&text).unwrap();
    assert_eq!(back, SamplerParams::default());
}
