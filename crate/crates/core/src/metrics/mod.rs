//! Masked-region scoring and the evaluation protocols built on it.

pub mod baselines;
pub mod map;
pub mod protocols;
pub mod srmm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ContextWindow, Mineral, Raster, WindowSpec};
use crate::masking::{apply_mask, Mask};

pub use baselines::{Constant, CopyInput};
pub use map::{map_export, BinnedMap};
pub use protocols::{
    commonality_order, cooccurrence, evaluate, influence_matrix, progressive_unmask_eval,
    InfluenceMatrix, ProgressiveMatrix,
};
pub use srmm::{srmm_loss, SrmmLoss};

/// Clamp used by [`bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Default decision threshold on predicted probabilities.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-pixel, per-mineral probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub probs: Raster<f32>,
}

impl PredictionGrid {
    pub fn constant(layers: usize, side: usize, p: f32) -> Self {
        Self { probs: Raster::from_vec(layers, side, vec![p; layers * side * side]).unwrap() }
    }

    /// Binary decisions `p > threshold`.
    pub fn threshold(&self, threshold: f64) -> Raster<u8> {
        Raster {
            channels: self.probs.channels,
            side: self.probs.side,
            data: self.probs.data.iter().map(|&p| (p as f64 > threshold) as u8).collect(),
        }
    }
}

/// What a model is allowed to see: masked mineral layers (`-1` where
/// removed) plus the never-masked covariates and coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub spec: WindowSpec,
    pub minerals: Raster<i8>,
    pub covariates: Option<Raster<f32>>,
    pub agronomic: Option<Raster<f32>>,
}

impl ModelInput {
    pub fn new(window: &ContextWindow, mask: &Mask) -> Result<Self> {
        Ok(Self {
            spec: window.spec,
            minerals: apply_mask(&window.minerals, mask)?,
            covariates: window.covariates.clone(),
            agronomic: window.agronomic.clone(),
        })
    }
}

/// Anything that maps a masked window to per-pixel probabilities.
pub trait InfillModel {
    fn name(&self) -> String;
    fn predict(&self, input: &ModelInput) -> Result<PredictionGrid>;

    /// Threshold used to binarize this model's probabilities.
    fn threshold(&self) -> f64 {
        DEFAULT_THRESHOLD
    }
}

/// Confusion counts of one layer over a scoring region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl LayerCounts {
    pub fn add(&mut self, other: LayerCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2|A∩B| / (|A| + |B|)`, undefined when both sets are empty.
    pub fn dice(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }

    /// `TP / (TP + FN)`, undefined without true positives in the region.
    pub fn recall(&self) -> Option<f64> {
        let denom = self.tp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn masked_positives(&self) -> u64 {
        self.tp + self.fn_
    }
}

fn check_shape<A, B>(a: &Raster<A>, b: &Raster<B>) -> Result<()> {
    let (sa, sb) = ([a.channels, a.side, a.side], [b.channels, b.side, b.side]);
    if sa != sb {
        return Err(Error::ShapeMismatch { expected: sa.to_vec(), found: sb.to_vec() });
    }
    Ok(())
}

/// Per-layer confusion counts restricted to cells where `region` is nonzero.
pub fn confusion(pred: &Raster<u8>, truth: &Raster<u8>, region: &Raster<u8>) -> Result<Vec<LayerCounts>> {
    check_shape(pred, truth)?;
    check_shape(pred, region)?;
    let n = pred.side * pred.side;
    let mut out = vec![LayerCounts::default(); pred.channels];
    for (layer, counts) in out.iter_mut().enumerate() {
        let r = layer * n..(layer + 1) * n;
        for ((&p, &t), &m) in pred.data[r.clone()].iter().zip(&truth.data[r.clone()]).zip(&region.data[r]) {
            if m == 0 {
                continue;
            }
            match (p != 0, t != 0) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(out)
}

pub fn dice(pred: &Raster<u8>, truth: &Raster<u8>, region: &Raster<u8>) -> Result<Vec<Option<f64>>> {
    Ok(confusion(pred, truth, region)?.iter().map(LayerCounts::dice).collect())
}

pub fn recall(pred: &Raster<u8>, truth: &Raster<u8>, region: &Raster<u8>) -> Result<Vec<Option<f64>>> {
    Ok(confusion(pred, truth, region)?.iter().map(LayerCounts::recall).collect())
}

/// Mean over defined entries.
pub fn macro_mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
pub fn bce(prob: &[f64], truth: &[u8]) -> Result<f64> {
    if prob.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: vec![prob.len()], found: vec![truth.len()] });
    }
    if prob.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = prob
        .iter()
        .zip(truth)
        .map(|(&p, &z)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if z != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / prob.len() as f64)
}

pub fn bce_grid(pred: &PredictionGrid, truth: &Raster<u8>) -> Result<f64> {
    check_shape(&pred.probs, truth)?;
    let p: Vec<f64> = pred.probs.data.iter().map(|&v| v as f64).collect();
    bce(&p, &truth.data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub index: usize,
    pub macro_dice: Option<f64>,
    pub macro_recall: Option<f64>,
}

/// Pooled masked-region scores for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub policy: String,
    pub split: String,
    pub threshold: f64,
    pub minerals: Vec<String>,
    pub counts: Vec<LayerCounts>,
    pub dice: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub macro_dice: Option<f64>,
    pub macro_recall: Option<f64>,
    /// Mean BCE over every cell of every window.
    pub bce: Option<f64>,
    pub windows: usize,
    pub per_window: Vec<WindowScore>,
}

/// Accumulates counts across windows, micro within each mineral.
#[derive(Debug, Clone)]
pub struct Scorer {
    threshold: f64,
    counts: Vec<LayerCounts>,
    bce_sum: f64,
    bce_cells: usize,
    per_window: Vec<WindowScore>,
}

impl Scorer {
    pub fn new(layers: usize, threshold: f64) -> Self {
        Self { threshold, counts: vec![LayerCounts::default(); layers], bce_sum: 0.0, bce_cells: 0, per_window: Vec::new() }
    }

    /// Scores one window on the cells flagged in `region`.
    pub fn add(&mut self, index: usize, pred: &PredictionGrid, truth: &Raster<u8>, region: &Raster<u8>) -> Result<()> {
        let counts = confusion(&pred.threshold(self.threshold), truth, region)?;
        if counts.len() != self.counts.len() {
            return Err(Error::ShapeMismatch { expected: vec![self.counts.len()], found: vec![counts.len()] });
        }
        let n = truth.data.len();
        self.bce_sum += bce_grid(pred, truth)? * n as f64;
        self.bce_cells += n;
        self.per_window.push(WindowScore {
            index,
            macro_dice: macro_mean(&counts.iter().map(LayerCounts::dice).collect::<Vec<_>>()),
            macro_recall: macro_mean(&counts.iter().map(LayerCounts::recall).collect::<Vec<_>>()),
        });
        self.counts.iter_mut().zip(counts).for_each(|(a, b)| a.add(b));
        Ok(())
    }

    pub fn counts(&self) -> &[LayerCounts] {
        &self.counts
    }

    pub fn finish(self, model: &str, policy: &str, split: &str) -> EvalReport {
        let dice: Vec<_> = self.counts.iter().map(LayerCounts::dice).collect();
        let recall: Vec<_> = self.counts.iter().map(LayerCounts::recall).collect();
        let minerals = (0..self.counts.len())
            .map(|i| Mineral::from_index(i).map_or_else(|| format!("layer{i}"), |m| m.name().to_string()))
            .collect();
        EvalReport {
            model: model.into(),
            policy: policy.into(),
            split: split.into(),
            threshold: self.threshold,
            minerals,
            macro_dice: macro_mean(&dice),
            macro_recall: macro_mean(&recall),
            counts: self.counts,
            dice,
            recall,
            bce: (self.bce_cells > 0).then(|| self.bce_sum / self.bce_cells as f64),
            windows: self.per_window.len(),
            per_window: self.per_window,
        }
    }
}
