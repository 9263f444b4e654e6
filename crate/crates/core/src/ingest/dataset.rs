//! On-disk datasets, mask sets and prediction sets.
//!
//! Each collection is a directory holding a JSON-lines manifest (one header
//! line, then one line per item) and one `.m3t` file per tensor. Paths inside
//! manifests are relative to the directory.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ContextWindow, GeoPoint, Mineral, Raster, WindowSpec, NUM_MINERALS};
use crate::ingest::container::{self, DType, Tensor, TensorData};
use crate::ingest::raster::Split;
use crate::masking::{Mask, MaskKind};
use crate::metrics::PredictionGrid;

pub const DATASET_MANIFEST: &str = "manifest.jsonl";
pub const MASKS_MANIFEST: &str = "masks.jsonl";
pub const PREDICTIONS_MANIFEST: &str = "predictions.jsonl";
pub const FORMAT_VERSION: u32 = 1;

fn write_jsonl<H: Serialize, E: Serialize>(path: &Path, header: &H, entries: &[E]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let json = |e: serde_json::Error| Error::Manifest(e.to_string());
    serde_json::to_writer(&mut out, header).map_err(json)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for entry in entries {
        serde_json::to_writer(&mut out, entry).map_err(json)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<H: DeserializeOwned, E: DeserializeOwned>(path: &Path) -> Result<(H, Vec<E>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate().filter(|(_, l)| match l {
        Ok(l) => !l.trim().is_empty(),
        Err(_) => true,
    });
    let bad = |n: usize, e: serde_json::Error| Error::Manifest(format!("{}:{}: {e}", path.display(), n + 1));
    let (n, first) = lines.next().ok_or_else(|| Error::Manifest(format!("{} is empty", path.display())))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: H = serde_json::from_str(&first).map_err(|e| bad(n, e))?;
    let mut entries = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        entries.push(serde_json::from_str(&line).map_err(|e| bad(n, e))?);
    }
    Ok((header, entries))
}

fn load(dir: &Path, rel: &str, dims: &[usize], dtype: DType) -> Result<Tensor> {
    let t = container::read_file(dir.join(rel))?;
    t.expect(dims, dtype)?;
    Ok(t)
}

fn store(dir: &Path, rel: &str, tensor: &Tensor) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    container::write_file(&path, tensor)?;
    Ok(())
}

fn u8_tensor(r: &Raster<u8>) -> Tensor {
    Tensor { dims: r.shape().to_vec(), data: TensorData::U8(r.data.clone()) }
}

fn f32_tensor(r: &Raster<f32>) -> Tensor {
    Tensor { dims: r.shape().to_vec(), data: TensorData::F32(r.data.clone()) }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Global metadata on the first manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: String,
    pub format_version: u32,
    pub seed: u64,
    pub mineral_order: Vec<String>,
    /// Free-form generator and split parameters, echoed for reproducibility.
    pub generator: serde_json::Value,
}

impl DatasetHeader {
    pub fn new(seed: u64, generator: serde_json::Value) -> Self {
        Self {
            kind: "dataset".into(),
            format_version: FORMAT_VERSION,
            seed,
            mineral_order: Mineral::ALL.iter().map(|m| m.name().to_string()).collect(),
            generator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub minerals: usize,
    pub covariates: usize,
    pub agronomic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDescriptor {
    pub index: usize,
    pub origin: GeoPoint,
    pub side_px: usize,
    pub resolution_mi: f64,
    pub channels: ChannelLayout,
    pub split: Split,
    pub minerals: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup_minerals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agronomic: Option<String>,
    /// `(col, row)` on a visualisation lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: DatasetHeader,
    pub windows: Vec<WindowDescriptor>,
}

impl DatasetManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.header, &self.windows)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (header, windows): (DatasetHeader, Vec<WindowDescriptor>) = read_jsonl(path.as_ref())?;
        if header.kind != "dataset" {
            return Err(Error::Manifest(format!("expected a dataset manifest, found {:?}", header.kind)));
        }
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Manifest(format!("unsupported format version {}", header.format_version)));
        }
        Ok(Self { header, windows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub window: ContextWindow,
    pub split: Split,
    pub lattice: Option<(usize, usize)>,
    /// Training copy of the mineral layers after duplicate removal.
    pub dedup_minerals: Option<Raster<u8>>,
}

impl DatasetEntry {
    pub fn new(window: ContextWindow, split: Split) -> Self {
        Self { window, split, lattice: None, dedup_minerals: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &DatasetEntry)> {
        self.entries.iter().enumerate().filter(move |(_, e)| e.split == split)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let mut windows = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let w = &e.window;
            let side = w.side();
            if w.minerals.shape() != [NUM_MINERALS, side, side] {
                return Err(Error::ShapeMismatch {
                    expected: vec![NUM_MINERALS, side, side],
                    found: w.minerals.shape().to_vec(),
                });
            }
            let minerals = format!("windows/{i:06}.minerals.m3t");
            store(dir, &minerals, &u8_tensor(&w.minerals))?;
            let dedup_minerals = match &e.dedup_minerals {
                Some(r) => {
                    let rel = format!("windows/{i:06}.dedup.m3t");
                    store(dir, &rel, &u8_tensor(r))?;
                    Some(rel)
                }
                None => None,
            };
            let covariates = match &w.covariates {
                Some(r) => {
                    let rel = format!("windows/{i:06}.covariates.m3t");
                    store(dir, &rel, &f32_tensor(r))?;
                    Some(rel)
                }
                None => None,
            };
            let agronomic = match &w.agronomic {
                Some(r) => {
                    let rel = format!("windows/{i:06}.agronomic.m3t");
                    store(dir, &rel, &f32_tensor(r))?;
                    Some(rel)
                }
                None => None,
            };
            windows.push(WindowDescriptor {
                index: i,
                origin: w.spec.origin,
                side_px: side,
                resolution_mi: w.spec.resolution_mi,
                channels: ChannelLayout {
                    minerals: NUM_MINERALS,
                    covariates: w.covariate_channels(),
                    agronomic: w.agronomic.as_ref().map_or(0, |a| a.channels),
                },
                split: e.split,
                minerals,
                dedup_minerals,
                covariates,
                agronomic,
                lattice: e.lattice,
            });
        }
        let manifest = DatasetManifest { header: self.header.clone(), windows };
        manifest.write(dir.join(DATASET_MANIFEST))?;
        Ok(manifest)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = DatasetManifest::read(dir.join(DATASET_MANIFEST))?;
        let mut entries = Vec::with_capacity(manifest.windows.len());
        for d in &manifest.windows {
            let side = d.side_px;
            let spec = WindowSpec::new(d.origin, side, d.resolution_mi);
            let mineral_dims = [NUM_MINERALS, side, side];
            let minerals = load(dir, &d.minerals, &mineral_dims, DType::U8)?.into_u8().unwrap();
            let dedup_minerals = match &d.dedup_minerals {
                Some(rel) => Some(Raster::from_vec(
                    NUM_MINERALS,
                    side,
                    load(dir, rel, &mineral_dims, DType::U8)?.into_u8().unwrap(),
                )?),
                None => None,
            };
            let load_f32 = |rel: &Option<String>, channels: usize| -> Result<Option<Raster<f32>>> {
                match rel {
                    Some(rel) => {
                        let data = load(dir, rel, &[channels, side, side], DType::F32)?.into_f32().unwrap();
                        Ok(Some(Raster::from_vec(channels, side, data)?))
                    }
                    None if channels == 0 => Ok(None),
                    None => Err(Error::Manifest(format!(
                        "window {} declares {channels} channels but names no file",
                        d.index
                    ))),
                }
            };
            let window = ContextWindow {
                spec,
                minerals: Raster::from_vec(NUM_MINERALS, side, minerals)?,
                covariates: load_f32(&d.covariates, d.channels.covariates)?,
                agronomic: load_f32(&d.agronomic, d.channels.agronomic)?,
            };
            entries.push(DatasetEntry { window, split: d.split, lattice: d.lattice, dedup_minerals });
        }
        Ok(Self { header: manifest.header, entries })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSetHeader {
    pub kind: String,
    pub format_version: u32,
    pub seed: u64,
    pub aggressiveness: f64,
    /// Sampling law, for replay.
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDescriptor {
    pub index: usize,
    pub file: String,
    pub kind: MaskKind,
    pub aggressiveness: f64,
}

/// Evaluation masks, one per dataset window.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub header: MaskSetHeader,
    pub masks: Vec<Mask>,
}

impl MaskSet {
    pub fn new(seed: u64, aggressiveness: f64, masks: Vec<Mask>) -> Self {
        Self {
            header: MaskSetHeader {
                kind: "masks".into(),
                format_version: FORMAT_VERSION,
                seed,
                aggressiveness,
                policy: crate::masking::SAMPLING_POLICY.into(),
            },
            masks,
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let mut lines = Vec::with_capacity(self.masks.len());
        for (i, m) in self.masks.iter().enumerate() {
            let file = format!("{i:06}.mask.m3t");
            store(dir, &file, &u8_tensor(&m.bits))?;
            lines.push(MaskDescriptor { index: i, file, kind: m.kind, aggressiveness: m.aggressiveness });
        }
        write_jsonl(&dir.join(MASKS_MANIFEST), &self.header, &lines)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (header, lines): (MaskSetHeader, Vec<MaskDescriptor>) = read_jsonl(&dir.join(MASKS_MANIFEST))?;
        if header.kind != "masks" {
            return Err(Error::Manifest(format!("expected a mask manifest, found {:?}", header.kind)));
        }
        let mut masks = Vec::with_capacity(lines.len());
        for d in lines {
            let t = container::read_file(dir.join(&d.file))?;
            let dims = t.dims.clone();
            let (channels, side) = match dims.as_slice() {
                &[c, s, s2] if s == s2 => (c, s),
                _ => {
                    return Err(Error::ShapeMismatch { expected: vec![NUM_MINERALS, 0, 0], found: dims })
                }
            };
            t.expect(&[channels, side, side], DType::U8)?;
            let bits = Raster::from_vec(channels, side, t.into_u8().unwrap())?;
            masks.push(Mask { bits, kind: d.kind, aggressiveness: d.aggressiveness });
        }
        Ok(Self { header, masks })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSetHeader {
    pub kind: String,
    pub format_version: u32,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDescriptor {
    /// Index of the dataset window this grid belongs to.
    pub index: usize,
    pub file: String,
}

/// Per-window probability grids written by any model, float32
/// `[NUM_MINERALS, side, side]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model: String,
    pub grids: Vec<(usize, PredictionGrid)>,
}

impl PredictionSet {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        let mut lines = Vec::with_capacity(self.grids.len());
        for (index, grid) in &self.grids {
            let file = format!("{index:06}.pred.m3t");
            store(dir, &file, &f32_tensor(&grid.probs))?;
            lines.push(PredictionDescriptor { index: *index, file });
        }
        let header = PredictionSetHeader {
            kind: "predictions".into(),
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
        };
        write_jsonl(&dir.join(PREDICTIONS_MANIFEST), &header, &lines)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (header, lines): (PredictionSetHeader, Vec<PredictionDescriptor>) =
            read_jsonl(&dir.join(PREDICTIONS_MANIFEST))?;
        if header.kind != "predictions" {
            return Err(Error::Manifest(format!("expected a prediction manifest, found {:?}", header.kind)));
        }
        let mut grids = Vec::with_capacity(lines.len());
        for d in lines {
            let t = container::read_file(dir.join(&d.file))?;
            let side = match t.dims.as_slice() {
                &[NUM_MINERALS, s, s2] if s == s2 => s,
                _ => {
                    return Err(Error::ShapeMismatch { expected: vec![NUM_MINERALS, 0, 0], found: t.dims })
                }
            };
            t.expect(&[NUM_MINERALS, side, side], DType::F32)?;
            let probs = Raster::from_vec(NUM_MINERALS, side, t.into_f32().unwrap())?;
            grids.push((d.index, PredictionGrid { probs }));
        }
        Ok(Self { model: header.model, grids })
    }
}

/// Writes `value` as pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Manifest(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

pub fn manifest_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(DATASET_MANIFEST)
}
