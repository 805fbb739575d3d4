//! Pipeline commands and the run-directory convention. Every command writes
//! into a fresh timestamped directory under the output root: its outputs, the
//! fully resolved `config.toml` and a `manifest.toml` of output digests.
//! Prerequisites left unset in the config resolve to the newest run that
//! produced them, and the resolved paths land in the snapshot, so re-running
//! a snapshot repeats the command exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clip::{read_png, VideoClip};
use crate::codebook::{fit_codebook, Codebook, TokenGrid};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{attribute_accuracy, diversity_report, fingerprint, EvalContext};
use crate::longgen::{extrapolate, interpolate_chain, write_video};
use crate::model::{prepare_items, train, Checkpoint, Model, TrainOutputs};
use crate::rng::{self, stream};
use crate::sampler::{mask_predict_traced, write_trace, MaskPredictRun};
use crate::sequence::{Controls, Vocab};
use crate::world::{enumerate_specs, generate_dataset, load_dataset, oracle_classify, parse_prompt, write_toml, PartialSpec, World, MANIFEST_FILE};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MASKVID_OUT";
pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_MANIFEST_FILE: &str = "manifest.toml";
pub const CODEBOOK_FILE: &str = "codebook.bin";
pub const VOCAB_FILE: &str = "vocab.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
/// Generated token grid, next to its decoded frames.
pub const TOKENS_FILE: &str = "tokens.grid";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    FitCodebook,
    Train,
    Generate,
    Extrapolate,
    Interpolate,
    Eval,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::GenData,
        Command::FitCodebook,
        Command::Train,
        Command::Generate,
        Command::Extrapolate,
        Command::Interpolate,
        Command::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::FitCodebook => "fit-codebook",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Extrapolate => "extrapolate",
            Command::Interpolate => "interpolate",
            Command::Eval => "eval",
        }
    }
}

/// `$MASKVID_OUT`, or `runs` in the working directory.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<root>/<timestamp>-<command>`, with a numeric suffix when that
/// name is taken. Existing directories are never reused.
pub fn create_run_dir(root: &Path, command: Command) -> Result<PathBuf> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for n in 0..1000 {
        let name = match n {
            0 => format!("{stamp}-{}", command.name()),
            n => format!("{stamp}-{}.{n:03}", command.name()),
        };
        let path = root.join(name);
        match std::fs::create_dir(&path) {
            Ok(()) => return Ok(path),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&path, e)),
        }
    }
    Err(Error::InvalidArgument(format!("no free run directory name under {}", root.display())))
}

/// Newest run of `command` under `root` that holds `file`.
fn latest_artifact(root: &Path, command: Command, file: &str) -> Result<PathBuf> {
    let tag = format!("-{}", command.name());
    let mut best: Option<PathBuf> = None;
    if let Ok(entries) = std::fs::read_dir(root) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let base = name.split('.').next().unwrap_or("");
            let candidate = entry.path().join(file);
            if base.ends_with(&tag) && candidate.exists() && best.as_ref().map_or(true, |b| candidate > *b) {
                best = Some(candidate);
            }
        }
    }
    best.ok_or_else(|| Error::MissingArtifact(root.join(format!("<latest{tag} run>")).join(file)))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn fill(slot: &mut PathBuf, root: &Path, command: Command, file: &str) -> Result<()> {
    if slot.as_os_str().is_empty() {
        *slot = latest_artifact(root, command, file)?;
    }
    if !slot.exists() {
        return Err(Error::MissingArtifact(slot.clone()));
    }
    *slot = absolute(slot)?;
    Ok(())
}

/// Fills and checks the prerequisite paths `command` needs.
pub fn resolve_prerequisites(command: Command, cfg: &mut RunConfig, root: &Path) -> Result<()> {
    let paths = &mut cfg.paths;
    match command {
        Command::GenData => {}
        Command::FitCodebook => fill(&mut paths.dataset, root, Command::GenData, &format!("dataset/{MANIFEST_FILE}"))?,
        Command::Train => {
            fill(&mut paths.dataset, root, Command::GenData, &format!("dataset/{MANIFEST_FILE}"))?;
            fill(&mut paths.codebook, root, Command::FitCodebook, CODEBOOK_FILE)?;
        }
        Command::Generate | Command::Extrapolate | Command::Interpolate | Command::Eval => {
            fill(&mut paths.checkpoint, root, Command::Train, CHECKPOINT_FILE)?;
            fill(&mut paths.codebook, root, Command::FitCodebook, CODEBOOK_FILE)?;
        }
    }
    if !cfg.generate.partial_image.as_os_str().is_empty() {
        if !cfg.generate.partial_image.exists() {
            return Err(Error::MissingArtifact(cfg.generate.partial_image.clone()));
        }
        cfg.generate.partial_image = absolute(&cfg.generate.partial_image)?;
    }
    Ok(())
}

/// One digest line of a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub created: String,
    pub files: Vec<FileDigest>,
}

fn digest_tree(root: &Path, dir: &Path, out: &mut Vec<FileDigest>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            digest_tree(root, &path, out)?;
        } else if path != root.join(RUN_MANIFEST_FILE) {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            out.push(FileDigest { path: rel, bytes: bytes.len() as u64, sha256: hex(&Sha256::digest(&bytes)) });
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// What a finished command produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

/// Resolves prerequisites, creates the run directory, snapshots the config,
/// runs `command` and writes the manifest.
pub fn execute(command: Command, mut cfg: RunConfig, root: &Path) -> Result<RunReport> {
    resolve_prerequisites(command, &mut cfg, root)?;
    let dir = create_run_dir(root, command)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let summary = match command {
        Command::GenData => gen_data(&cfg, &dir)?,
        Command::FitCodebook => fit(&cfg, &dir)?,
        Command::Train => run_train(&cfg, &dir)?,
        Command::Generate => generate(&cfg, &dir)?,
        Command::Extrapolate => run_extrapolate(&cfg, &dir)?,
        Command::Interpolate => run_interpolate(&cfg, &dir)?,
        Command::Eval => run_eval(&cfg, &dir)?,
    };
    let mut files = Vec::new();
    digest_tree(&dir, &dir, &mut files)?;
    let manifest = RunManifest {
        command: command.name().to_string(),
        created: chrono::Local::now().to_rfc3339(),
        files,
    };
    write_toml(&dir.join(RUN_MANIFEST_FILE), &manifest)?;
    Ok(RunReport { dir, summary })
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let world = World::new(cfg.world.clone())?;
    let manifest = generate_dataset(&world, &cfg.dataset, &dir.join("dataset"))?;
    Ok(format!("{} clips", manifest.clips.len()))
}

fn fit(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let (_, clips) = load_dataset(&cfg.paths.dataset)?;
    let stride = (clips.len() / cfg.codebook.fit_clips.max(1)).max(1);
    let fit_set: Vec<VideoClip> = clips.iter().step_by(stride).map(|c| c.clip.clone()).collect();
    let c = &cfg.codebook;
    let codebook = fit_codebook(&fit_set, c.k, c.patch, c.seed, c.kmeans())?;
    codebook.save(&dir.join(CODEBOOK_FILE))?;
    Vocab::new(codebook.k()).save(&dir.join(VOCAB_FILE))?;
    let psnr = codebook.reconstruction_psnr(&fit_set)?;
    write_toml(&dir.join("codebook_report.toml"), &CodebookReport { k: codebook.k(), fit_clips: fit_set.len(), psnr })?;
    Ok(format!("codebook of {} entries fitted on {} clips, reconstruction PSNR {psnr:.2} dB", codebook.k(), fit_set.len()))
}

#[derive(Serialize)]
struct CodebookReport {
    k: usize,
    fit_clips: usize,
    psnr: f64,
}

fn run_train(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let (_, clips) = load_dataset(&cfg.paths.dataset)?;
    let codebook = Codebook::load(&cfg.paths.codebook)?;
    let vocab = Vocab::new(codebook.k());
    let items = prepare_items(&codebook, &clips)?;
    let model_cfg = cfg.model.clone().with_vocab(&vocab);
    let outputs = TrainOutputs { dir: dir.to_path_buf() };
    let outcome = train(&model_cfg, &cfg.train, &vocab, &codebook, &items, cfg.seed, Some(&outputs))?;
    let last = outcome.log.last();
    Ok(format!(
        "trained {} steps; final msm {:.4}",
        cfg.train.steps,
        last.map_or(f64::NAN, |r| r.msm)
    ))
}

/// Everything a generating command needs.
struct Loaded {
    model: Model<f32>,
    codebook: Codebook,
    vocab: Vocab,
    world: World,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let codebook = Codebook::load(&cfg.paths.codebook)?;
    let vocab = Vocab::new(codebook.k());
    let model = Checkpoint::load(&cfg.paths.checkpoint)?.model;
    if model.cfg.video_vocab != codebook.k() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint {} expects {} video tokens, codebook {} has {}",
            cfg.paths.checkpoint.display(),
            model.cfg.video_vocab,
            cfg.paths.codebook.display(),
            codebook.k()
        )));
    }
    Ok(Loaded { model, codebook, vocab, world: World::new(cfg.world.clone())? })
}

impl Loaded {
    fn grid_shape(&self) -> (usize, usize, usize) {
        let p = self.codebook.patch;
        (self.world.config.frames, self.world.config.height / p, self.world.config.width / p)
    }
}

/// Preservation mask and initial grid of the first window: the non-black
/// patches of the partial image, if one is configured, frozen as frame 0.
fn first_window_condition(cfg: &RunConfig, l: &Loaded) -> Result<(Vec<bool>, TokenGrid)> {
    let (t, h, w) = l.grid_shape();
    let mut preserve = vec![false; t * h * w];
    let mut init = TokenGrid::filled(t, h, w, 0);
    let path = &cfg.generate.partial_image;
    if path.as_os_str().is_empty() {
        return Ok((preserve, init));
    }
    let (rgb, iw, ih) = read_png(path)?;
    if (ih, iw) != (l.world.config.height, l.world.config.width) {
        return Err(Error::ShapeMismatch(format!(
            "partial image {} is {iw}x{ih}, expected {}x{}",
            path.display(),
            l.world.config.width,
            l.world.config.height
        )));
    }
    let clip = VideoClip::from_frames(&[&rgb], ih, iw)?;
    let tokens = l.codebook.encode(&clip)?;
    let p = l.codebook.patch;
    for y in 0..h {
        for x in 0..w {
            let observed = (0..p).any(|dy| (0..p).any(|dx| clip.pixel(0, y * p + dy, x * p + dx) != [0, 0, 0]));
            if observed {
                preserve[y * w + x] = true;
                init.tokens[y * w + x] = tokens.tokens[y * w + x];
            }
        }
    }
    Ok((preserve, init))
}

fn first_window(cfg: &RunConfig, l: &Loaded, seed: u64) -> Result<(Controls, MaskPredictRun)> {
    let controls = Controls { prompt: parse_prompt(&cfg.generate.text)?, visual: None };
    let (preserve, init) = first_window_condition(cfg, l)?;
    let run = mask_predict_traced(&l.model, &l.vocab, &controls, &preserve, &init, &cfg.sampler, seed)?;
    Ok((controls, run))
}

fn save_video(l: &Loaded, grid: &TokenGrid, dir: &Path) -> Result<()> {
    grid.save(&dir.join(TOKENS_FILE))?;
    write_video(&l.codebook, grid, dir, l.world.config.fps)
}

fn generate(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let l = load(cfg)?;
    let (_, run) = first_window(cfg, &l, cfg.seed)?;
    let grid = run.grid.clone();
    save_video(&l, &grid, dir)?;
    if cfg.generate.trace {
        write_trace(&run, &l.codebook, &dir.join("trace"))?;
    }
    let verdict = oracle_classify(&l.world, &l.codebook.decode(&grid)?);
    write_toml(&dir.join("verdict.toml"), &verdict)?;
    let wanted = parse_prompt(&cfg.generate.text).ok().map(|p| PartialSpec::from_words(p.words()));
    let agrees = wanted.map_or(String::new(), |w| format!("; matches prompt: {}", w.satisfied_by(&verdict)));
    Ok(format!("{} frames; oracle: {}{agrees}", grid.frames, verdict.describe()))
}

fn run_extrapolate(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let l = load(cfg)?;
    let (controls, first) = first_window(cfg, &l, rng::derive(cfg.seed, &[stream::LONGGEN]))?;
    let first = first.grid;
    let grid = extrapolate(&l.model, &l.vocab, &controls, &first, &cfg.longgen, &cfg.sampler, cfg.seed)?;
    save_video(&l, &grid, dir)?;
    Ok(format!("{} frames", grid.frames))
}

fn run_interpolate(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let l = load(cfg)?;
    let (controls, first) = first_window(cfg, &l, rng::derive(cfg.seed, &[stream::LONGGEN]))?;
    let first = first.grid;
    let window = first.frames;
    let grid = interpolate_chain(&l.model, &l.vocab, &controls, &first, window, &cfg.sampler, cfg.seed)?;
    save_video(&l, &grid, dir)?;
    Ok(format!("{} frames", grid.frames))
}

fn run_eval(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let l = load(cfg)?;
    let ctx = EvalContext {
        model: &l.model,
        codebook: &l.codebook,
        vocab: &l.vocab,
        world: &l.world,
        sampler: &cfg.sampler,
        grid: l.grid_shape(),
    };
    let fp = fingerprint(&cfg.to_toml()?);
    let samples_dir = dir.join("samples");
    let artifacts = cfg.eval.artifacts.then_some(samples_dir.as_path());
    let (table, _) = attribute_accuracy(&ctx, cfg.eval.samples, cfg.eval.mode, cfg.seed, &fp, artifacts)?;
    std::fs::write(dir.join("accuracy.toml"), table.to_toml()?).map_err(|e| Error::io(dir.join("accuracy.toml"), e))?;
    let rendered = table.render(&format!("{:?}", cfg.eval.mode));
    std::fs::write(dir.join("accuracy.txt"), &rendered).map_err(|e| Error::io(dir.join("accuracy.txt"), e))?;
    let mut summary = rendered;
    let probe: Vec<VideoClip> = enumerate_specs()
        .iter()
        .map(|spec| l.world.generate_clip(spec, l.world.config.frames, rng::derive(cfg.seed, &[stream::CLIP, spec.ordinal() as u64])))
        .collect::<Result<_>>()?;
    let psnr = l.codebook.reconstruction_psnr(&probe)?;
    let _ = writeln!(summary, "codebook reconstruction PSNR {psnr:.2} dB on {} fresh clips", probe.len());
    std::fs::write(dir.join("accuracy.txt"), &summary).map_err(|e| Error::io(dir.join("accuracy.txt"), e))?;
    if !cfg.eval.diversity_prompt.is_empty() {
        let partial = PartialSpec::from_words(parse_prompt(&cfg.eval.diversity_prompt)?.words());
        let report = diversity_report(&ctx, &partial, cfg.eval.diversity_samples, cfg.seed)?;
        write_toml(&dir.join("diversity.toml"), &report)?;
        let _ = write!(summary, "diversity: {} distinct of {}", report.distinct_specs, report.samples);
    }
    Ok(summary)
}
