use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn maskvid(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskvid"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MASKVID_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> PathBuf {
    let o = maskvid(out, args);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{args:?} failed:\n{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout.lines().find_map(|l| l.strip_prefix("run directory: ")).expect("run directory printed");
    PathBuf::from(line)
}

fn count(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

const SMALL: &[&str] = &[
    "dataset.clips_per_spec=1",
    "codebook.k=32",
    "codebook.fit_clips=48",
    "codebook.max_iters=5",
    "model.layers=1",
    "model.heads=1",
    "model.model_dim=16",
    "model.ffn_dim=32",
    "sampler.B=1",
    "longgen.repeats=1",
    "eval.samples=2",
    "eval.artifacts=false",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn full_pipeline_and_reproducible_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let data = ok(out, &with_small(&["gen-data"]));
    assert!(data.join("dataset/manifest.toml").exists());
    assert!(data.join("config.toml").exists() && data.join("manifest.toml").exists());
    let cb = ok(out, &with_small(&["fit-codebook"]));
    assert!(cb.join("codebook.bin").exists());
    let tr = ok(out, &with_small(&["train", "--steps", "300"]));
    assert!(tr.join("model.ckpt").exists());
    assert!(tr.join("metrics.log").exists());

    let text = "a large red square is moving in straight path towards northeast";
    let gen = ok(out, &with_small(&["generate", "--text", text]));
    assert_eq!(count(&gen, "png"), 8);
    assert_eq!(count(&gen, "gif"), 1);
    assert!(gen.join("verdict.toml").exists());
    let snapshot = std::fs::read_to_string(gen.join("config.toml")).unwrap();
    assert!(snapshot.contains(text));

    let again = ok(out, &["generate", "--config", gen.join("config.toml").to_str().unwrap()]);
    assert_ne!(again, gen);
    assert_eq!(std::fs::read(gen.join("tokens.grid")).unwrap(), std::fs::read(again.join("tokens.grid")).unwrap());
    assert_eq!(std::fs::read_to_string(again.join("config.toml")).unwrap(), snapshot);

    let traced = ok(out, &with_small(&["generate", "--text", text, "generate.trace=true"]));
    assert!(std::fs::read_dir(traced.join("trace")).unwrap().count() > 0);

    let ext = ok(out, &with_small(&["extrapolate", "--text", text]));
    assert_eq!(count(&ext, "png"), 10);
    let int = ok(out, &with_small(&["interpolate", "--text", text]));
    assert_eq!(count(&int, "png"), 15);
    let ev = ok(out, &with_small(&["eval"]));
    let table = std::fs::read_to_string(ev.join("accuracy.toml")).unwrap();
    assert!(table.contains("average"));
    assert!(std::fs::read_to_string(ev.join("accuracy.txt")).unwrap().contains("PSNR"));

    // earlier runs are left untouched
    assert!(gen.join("tokens.grid").exists() && data.join("dataset/manifest.toml").exists());
}

#[test]
fn eval_without_checkpoint_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maskvid(tmp.path(), &["eval", "paths.checkpoint=/nowhere/model.ckpt"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/nowhere/model.ckpt"), "{err}");

    let o = maskvid(tmp.path(), &["eval"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.ckpt"));
}

#[test]
fn bad_override_is_rejected_with_valid_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maskvid(tmp.path(), &["gen-data", "sampler.beams=5"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sampler.beams") && err.contains("sampler.B"), "{err}");
    assert!(std::fs::read_dir(tmp.path()).map_or(true, |mut d| d.next().is_none()));
}

#[test]
fn missing_config_file_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = maskvid(tmp.path(), &["gen-data", "--config", "/nowhere/run.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nowhere/run.toml"));
}
