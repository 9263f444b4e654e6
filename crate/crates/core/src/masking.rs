//! Mineral-kind and spatial-kind ablation masks.
//!
//! A mask bit of 1 removes the cell from the model inputs; removed cells are
//! encoded as -1 in the masked mineral tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Raster;
use crate::synth::rng::SplitMix64;

/// Sampling law, recorded next to persisted masks.
pub const SAMPLING_POLICY: &str = "kind~Bernoulli(0.5); mineral: m~U{1..max(1,floor(A*L))}, uniform m-subset; \
spatial: area fraction~U(0,A], height~U{integer range}, interior placement";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Mineral,
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    /// `[layers, side, side]`, 1 = removed.
    pub bits: Raster<u8>,
    pub kind: MaskKind,
    pub aggressiveness: f64,
}

impl Mask {
    pub fn empty(layers: usize, side: usize) -> Self {
        Self { bits: Raster::zeros(layers, side), kind: MaskKind::Mineral, aggressiveness: 1.0 }
    }

    /// Mineral-kind mask removing exactly the flagged layers.
    pub fn layers(side: usize, removed: &[bool]) -> Self {
        let mut bits = Raster::zeros(removed.len(), side);
        for (layer, &r) in removed.iter().enumerate() {
            if r {
                bits.layer_mut(layer).fill(1);
            }
        }
        Self { bits, kind: MaskKind::Mineral, aggressiveness: 1.0 }
    }

    /// Spatial-kind mask removing rows `r0..r0+h` and columns `c0..c0+w` on
    /// every layer.
    pub fn rectangle(layers: usize, side: usize, r0: usize, c0: usize, h: usize, w: usize) -> Self {
        let mut bits = Raster::zeros(layers, side);
        for layer in 0..layers {
            for row in r0..(r0 + h).min(side) {
                for col in c0..(c0 + w).min(side) {
                    bits.set(layer, row, col, 1);
                }
            }
        }
        Self { bits, kind: MaskKind::Spatial, aggressiveness: 1.0 }
    }

    pub fn layers_count(&self) -> usize {
        self.bits.channels
    }

    pub fn side(&self) -> usize {
        self.bits.side
    }

    #[inline]
    pub fn is_masked(&self, layer: usize, row: usize, col: usize) -> bool {
        self.bits.get(layer, row, col) != 0
    }

    /// Cell-wise union with another mask of the same shape.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.bits.shape() != other.bits.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.bits.shape().to_vec(),
                found: other.bits.shape().to_vec(),
            });
        }
        let mut out = self.clone();
        out.bits.data.iter_mut().zip(&other.bits.data).for_each(|(a, &b)| *a |= b);
        Ok(out)
    }
}

pub fn masked_fraction(mask: &Mask) -> f64 {
    let n = mask.bits.data.len();
    if n == 0 {
        return 0.0;
    }
    mask.bits.data.iter().filter(|&&b| b != 0).count() as f64 / n as f64
}

/// Samples a mask with aggressiveness `aggressiveness` in `(0, 1]`.
///
/// Draw order: one uniform for the kind, then for mineral kind one integer
/// for the layer count and `m` for the subset; for spatial kind one uniform
/// for the area fraction, one integer for the height and two for placement.
pub fn sample_mask(layers: usize, side: usize, aggressiveness: f64, rng: &mut SplitMix64) -> Mask {
    assert!(
        aggressiveness > 0.0 && aggressiveness <= 1.0,
        "aggressiveness must lie in (0, 1], got {aggressiveness}"
    );
    let mut mask = if rng.next_f64() < 0.5 {
        let max_layers = ((aggressiveness * layers as f64 + 1e-9).floor() as usize).max(1);
        let m = rng.range_inclusive(1, max_layers.min(layers));
        let chosen = rng.subset(layers, m);
        let mut removed = vec![false; layers];
        chosen.into_iter().for_each(|l| removed[l] = true);
        Mask::layers(side, &removed)
    } else {
        // Area fraction uniform in (0, A].
        let fraction = aggressiveness * rng.next_f64_open();
        let cells = (side * side) as f64;
        let area = (fraction * cells).max(1.0);
        let h_lo = ((area / side as f64).ceil() as usize).max(1);
        let h_hi = (area.floor() as usize).min(side).max(h_lo);
        let h = rng.range_inclusive(h_lo, h_hi);
        let w = ((area / h as f64).floor() as usize).clamp(1, side);
        let r0 = rng.range_inclusive(0, side - h);
        let c0 = rng.range_inclusive(0, side - w);
        Mask::rectangle(layers, side, r0, c0, h, w)
    };
    mask.aggressiveness = aggressiveness;
    mask
}

/// Masked copy of binary mineral layers: removed cells become -1.
pub fn apply_mask(minerals: &Raster<u8>, mask: &Mask) -> Result<Raster<i8>> {
    apply_mask_signed(&to_signed(minerals), mask)
}

/// Same as [`apply_mask`] for tensors already on `{-1, 0, 1}`.
pub fn apply_mask_signed(values: &Raster<i8>, mask: &Mask) -> Result<Raster<i8>> {
    if values.shape() != mask.bits.shape() {
        return Err(Error::ShapeMismatch {
            expected: values.shape().to_vec(),
            found: mask.bits.shape().to_vec(),
        });
    }
    let data = values
        .data
        .iter()
        .zip(&mask.bits.data)
        .map(|(&v, &b)| if b != 0 { -1 } else { v })
        .collect();
    Ok(Raster { channels: values.channels, side: values.side, data })
}

pub fn to_signed(minerals: &Raster<u8>) -> Raster<i8> {
    Raster {
        channels: minerals.channels,
        side: minerals.side,
        data: minerals.data.iter().map(|&v| v as i8).collect(),
    }
}
