//! Stitching of lattice predictions into coarse binned presence maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PredictionGrid;

/// Binary presence map. Rows advance north, columns east; row 0 is the
/// southern edge of the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMap {
    pub width: usize,
    pub height: usize,
    pub bin_mi: f64,
    /// `height * width`, 1 iff any mineral is predicted in the bin.
    pub any: Vec<u8>,
    /// One `height * width` map per mineral layer.
    pub per_mineral: Vec<Vec<u8>>,
}

impl BinnedMap {
    pub fn positive_bins(&self) -> usize {
        self.any.iter().filter(|&&v| v != 0).count()
    }

    /// Plain-text grid, northern row first.
    pub fn to_text(&self, layer: Option<usize>) -> String {
        let data = layer.map_or(&self.any, |l| &self.per_mineral[l]);
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(if data[row * self.width + col] != 0 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

/// Bins thresholded lattice predictions into `bin_mi`-mile squares.
///
/// `cells` holds `(col, row, grid)` for abutting windows of `resolution_mi`
/// pixels; missing lattice cells read as negative.
pub fn map_export(
    cells: &[(usize, usize, PredictionGrid)],
    resolution_mi: f64,
    bin_mi: f64,
    threshold: f64,
) -> Result<BinnedMap> {
    let misaligned = |msg: String| Err(Error::MisalignedLattice(msg));
    let Some((_, _, first)) = cells.first() else {
        return misaligned("no lattice cells".into());
    };
    let (layers, side) = (first.probs.channels, first.probs.side);
    let ratio = bin_mi / resolution_mi;
    let bin_px = ratio.round() as usize;
    if bin_px == 0 || (ratio - bin_px as f64).abs() > 1e-9 || side % bin_px != 0 {
        return misaligned(format!("{bin_mi} mi bins do not tile {side} px windows at {resolution_mi} mi/px"));
    }
    let per_side = side / bin_px;
    let width = (cells.iter().map(|c| c.0).max().unwrap() + 1) * per_side;
    let height = (cells.iter().map(|c| c.1).max().unwrap() + 1) * per_side;
    let mut per_mineral = vec![vec![0u8; width * height]; layers];
    let mut occupied = vec![false; width * height / (per_side * per_side)];
    let lattice_cols = width / per_side;

    for (col, row, grid) in cells {
        if grid.probs.channels != layers || grid.probs.side != side {
            return misaligned(format!("cell ({col}, {row}) has a different shape"));
        }
        let slot = row * lattice_cols + col;
        if std::mem::replace(&mut occupied[slot], true) {
            return misaligned(format!("cell ({col}, {row}) appears twice"));
        }
        let binary = grid.threshold(threshold);
        for (layer, out) in per_mineral.iter_mut().enumerate() {
            let data = binary.layer(layer);
            for r in 0..side {
                for c in 0..side {
                    if data[r * side + c] != 0 {
                        let y = row * per_side + r / bin_px;
                        let x = col * per_side + c / bin_px;
                        out[y * width + x] = 1;
                    }
                }
            }
        }
    }
    let any = (0..width * height).map(|i| per_mineral.iter().any(|m| m[i] != 0) as u8).collect();
    Ok(BinnedMap { width, height, bin_mi, any, per_mineral })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(side: usize, positives: &[(usize, usize, usize)]) -> PredictionGrid {
        let mut g = PredictionGrid::constant(2, side, 0.0);
        for &(l, r, c) in positives {
            g.probs.set(l, r, c, 0.9);
        }
        g
    }

    #[test]
    fn all_zero() {
        let m = map_export(&[(0, 0, grid_with(10, &[]))], 1.0, 5.0, 0.5).unwrap();
        assert_eq!((m.width, m.height), (2, 2));
        assert_eq!(m.positive_bins(), 0);
    }

    #[test]
    fn single_pixel_single_bin() {
        let m = map_export(&[(0, 0, grid_with(10, &[(1, 7, 2)]))], 1.0, 5.0, 0.5).unwrap();
        assert_eq!(m.positive_bins(), 1);
        assert_eq!(m.any[2], 1);
        assert_eq!(m.per_mineral[1][2], 1);
        assert_eq!(m.per_mineral[0].iter().sum::<u8>(), 0);
    }

    #[test]
    fn manual_binning() {
        let g = grid_with(10, &[(0, 0, 0), (1, 4, 4), (0, 9, 9)]);
        let m = map_export(&[(0, 0, g)], 1.0, 5.0, 0.5).unwrap();
        assert_eq!(m.positive_bins(), 2);
        assert_eq!(m.to_text(None), "01\n10\n");
    }

    #[test]
    fn stitches_lattice() {
        let cells = vec![(0, 0, grid_with(10, &[])), (1, 1, grid_with(10, &[(0, 0, 0)]))];
        let m = map_export(&cells, 1.0, 5.0, 0.5).unwrap();
        assert_eq!((m.width, m.height), (4, 4));
        assert_eq!(m.any[2 * 4 + 2], 1);
    }

    #[test]
    fn misaligned_inputs() {
        assert!(matches!(map_export(&[(0, 0, grid_with(12, &[]))], 1.0, 5.0, 0.5), Err(Error::MisalignedLattice(_))));
        assert!(map_export(&[(0, 0, grid_with(10, &[]))], 1.0, 2.5, 0.5).is_err());
        let dup = vec![(0, 0, grid_with(10, &[])), (0, 0, grid_with(10, &[]))];
        assert!(map_export(&dup, 1.0, 5.0, 0.5).is_err());
        assert!(map_export(&[], 1.0, 5.0, 0.5).is_err());
    }
}
