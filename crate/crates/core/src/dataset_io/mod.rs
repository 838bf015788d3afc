//! Mesh and cloud ingestion, dataset assembly, PLY export and checkpoints.

mod checkpoint;
mod off;
mod ply;
mod sample;
pub mod toy;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Blob, Checkpoint, RngState, Stage, MAGIC, VERSION};
pub use off::{load_off, parse_off, RawModel};
pub use ply::{load_ply, parse_ply, save_ply, to_ply_string};
pub use sample::{mesh_to_cloud, normalize_cloud};

use crate::error::{Error, Result};
use crate::geometry::{fps, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Where clouds come from and how they are shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// ModelNet-style root (`<root>/<class>/<split>/*.off`); `None` selects
    /// the procedural toy set.
    pub root: Option<PathBuf>,
    pub points: usize,
    pub range: (f64, f64),
    pub shuffle_seed: u64,
    /// Posed copies of each toy shape per split.
    pub toy_variants: usize,
    /// Cap on models per split (0 = no cap).
    pub limit: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            root: None,
            points: 1024,
            range: (0.0, 63.0),
            shuffle_seed: 0,
            toy_variants: 1,
            limit: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub clouds: Vec<PointCloud>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

/// Dense surface sample, FPS down to `points`, then normalization into
/// `range`.
pub fn prepare_cloud(model: &RawModel, points: usize, range: (f64, f64), seed: u64) -> Result<PointCloud> {
    let dense = if model.faces.is_empty() {
        PointCloud::new(model.vertices.clone())?
    } else {
        mesh_to_cloud(model, 4 * points, seed)?
    };
    if dense.len() < points {
        return Err(Error::Degenerate(format!(
            "model yields {} points, {points} required",
            dense.len()
        )));
    }
    let idx = fps(dense.points(), points, 0)?;
    normalize_cloud(&dense.subset(&idx), range.0, range.1)
}

fn split_seed(base: u64, split: Split) -> u64 {
    base.wrapping_mul(2).wrapping_add(match split {
        Split::Train => 0,
        Split::Test => 1,
    })
}

pub fn load_dataset(spec: &DatasetSpec, split: Split) -> Result<Dataset> {
    let seed = split_seed(spec.shuffle_seed, split);
    let mut entries: Vec<(String, RawModel)> = match &spec.root {
        None => toy::toy_meshes(spec.toy_variants.max(1), seed),
        Some(root) => modelnet_files(root, split)?
            .into_iter()
            .map(|p| {
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                load_off(&p).map(|m| (name, m))
            })
            .collect::<Result<_>>()?,
    };
    if spec.limit > 0 && entries.len() > spec.limit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        entries.shuffle(&mut rng);
        entries.truncate(spec.limit);
    }
    let mut names = Vec::with_capacity(entries.len());
    let mut clouds = Vec::with_capacity(entries.len());
    for (i, (name, m)) in entries.into_iter().enumerate() {
        clouds.push(prepare_cloud(&m, spec.points, spec.range, seed ^ (i as u64) << 20)?);
        names.push(name);
    }
    if clouds.is_empty() {
        return Err(Error::invalid(format!("dataset split {} is empty", split.as_str())));
    }
    Ok(Dataset { names, clouds })
}

/// Sorted `<root>/<class>/<split>/*.off` paths.
fn modelnet_files(root: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let read = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let mut files = Vec::new();
    for class in read(root)?.into_iter().filter(|p| p.is_dir()) {
        let dir = class.join(split.as_str());
        if !dir.is_dir() {
            continue;
        }
        files.extend(
            read(&dir)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off"))),
        );
    }
    Ok(files)
}
