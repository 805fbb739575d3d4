//! On-disk datasets: one directory of PNG frames per clip with a metadata
//! sidecar, listed by a manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{enumerate_specs, ShapeSpec, World, WorldConfig};
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CLIP_META_FILE: &str = "meta.toml";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Clips rendered for every one of the 384 specs.
    pub clips_per_spec: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { clips_per_spec: 16, seed: 0 }
    }
}

/// Sidecar record stored next to a clip's frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub spec: ShapeSpec,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Clip directory relative to the manifest.
    pub dir: String,
    pub spec: ShapeSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub world: WorldConfig,
    pub clips: Vec<ManifestEntry>,
}

/// A loaded dataset clip.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetClip {
    pub spec: ShapeSpec,
    pub seed: u64,
    pub clip: VideoClip,
}

/// Renders `clips_per_spec` clips of every spec under `root` and writes the
/// manifest. Clip seeds derive from `(cfg.seed, spec, copy)`.
pub fn generate_dataset(world: &World, cfg: &DatasetConfig, root: &Path) -> Result<DatasetManifest> {
    if cfg.clips_per_spec == 0 {
        return Err(Error::InvalidArgument("clips_per_spec must be at least 1".into()));
    }
    let frames = world.config.frames;
    let mut clips = Vec::new();
    for spec in enumerate_specs() {
        for copy in 0..cfg.clips_per_spec {
            let seed = rng::derive(cfg.seed, &[spec.ordinal() as u64, copy as u64]);
            let dir = format!("clips/{:03}_{:02}", spec.ordinal(), copy);
            let path = root.join(&dir);
            world.generate_clip(&spec, frames, seed)?.write_png_frames(&path)?;
            let meta = ClipMeta { spec, seed, frames };
            write_toml(&path.join(CLIP_META_FILE), &meta)?;
            clips.push(ManifestEntry { dir, spec, seed });
        }
    }
    let manifest = DatasetManifest { version: DATASET_VERSION, world: world.config.clone(), clips };
    write_toml(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a manifest and every clip it lists.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<DatasetClip>)> {
    let manifest: DatasetManifest = read_toml(manifest_path)?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::format(manifest_path, format!("unsupported dataset version {}", manifest.version)));
    }
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let clips = manifest
        .clips
        .iter()
        .map(|e| {
            let clip = VideoClip::read_png_frames(&root.join(&e.dir))?;
            Ok(DatasetClip { spec: e.spec, seed: e.seed, clip })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, clips))
}

pub(crate) fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let world = World::new(WorldConfig { frames: 2, ..WorldConfig::default() }).unwrap();
        let manifest = generate_dataset(&world, &DatasetConfig { clips_per_spec: 1, seed: 3 }, dir.path()).unwrap();
        assert_eq!(manifest.clips.len(), ShapeSpec::COUNT);
        let (loaded, clips) = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, manifest);
        let e = &clips[17];
        assert_eq!(e.clip, world.generate_clip(&e.spec, 2, e.seed).unwrap());
        let meta: ClipMeta = read_toml(&dir.path().join(&manifest.clips[17].dir).join(CLIP_META_FILE)).unwrap();
        assert_eq!(meta, ClipMeta { spec: e.spec, seed: e.seed, frames: 2 });
    }

    #[test]
    fn missing_manifest_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        match load_dataset(&path) {
            Err(Error::MissingArtifact(p)) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
    }
}
