use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ContextWindow, GeoPoint, Region, WindowSpec};
use crate::ingest::records::OccurrenceRecord;
use crate::synth::rng::SplitMix64;

/// Marks cell `(mineral, row, col)` for every record falling in the window.
/// Multiplicity is ignored: the layers stay binary.
pub fn rasterize(records: &[OccurrenceRecord], spec: WindowSpec) -> ContextWindow {
    rasterize_refs(records.iter(), spec)
}

fn rasterize_refs<'a>(
    records: impl Iterator<Item = &'a OccurrenceRecord>,
    spec: WindowSpec,
) -> ContextWindow {
    let mut window = ContextWindow::empty(spec);
    for r in records {
        if let Some((row, col)) = spec.locate(r.loc) {
            window.minerals.set(r.mineral.index(), row, col, 1);
        }
    }
    window
}

/// Buckets records on a coarse lon/lat grid so that rasterising a window only
/// touches nearby records.
pub struct RecordIndex<'a> {
    cell_deg: f64,
    buckets: HashMap<(i64, i64), Vec<&'a OccurrenceRecord>>,
}

impl<'a> RecordIndex<'a> {
    pub fn new(records: &'a [OccurrenceRecord], cell_deg: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<&OccurrenceRecord>> = HashMap::new();
        for r in records {
            let key = ((r.loc.lon / cell_deg).floor() as i64, (r.loc.lat / cell_deg).floor() as i64);
            buckets.entry(key).or_default().push(r);
        }
        Self { cell_deg, buckets }
    }

    pub fn rasterize(&self, spec: WindowSpec) -> ContextWindow {
        let half = 0.5 * spec.resolution_mi;
        let span = spec.side_px as f64 * spec.resolution_mi;
        // Longitude extent grows toward the pole, so take both edges.
        let corners = [
            spec.origin.offset_miles(-half, -half),
            spec.origin.offset_miles(span - half, -half),
            spec.origin.offset_miles(-half, span - half),
            spec.origin.offset_miles(span - half, span - half),
        ];
        let west = corners.iter().map(|p| p.lon).fold(f64::INFINITY, f64::min);
        let east = corners.iter().map(|p| p.lon).fold(f64::NEG_INFINITY, f64::max);
        let c = self.cell_deg;
        let (x0, x1) = ((west / c).floor() as i64, (east / c).floor() as i64);
        let (y0, y1) = ((corners[0].lat / c).floor() as i64, (corners[3].lat / c).floor() as i64);
        let mut candidates = Vec::new();
        for x in x0..=x1 {
            for y in y0..=y1 {
                if let Some(b) = self.buckets.get(&(x, y)) {
                    candidates.extend(b.iter().copied());
                }
            }
        }
        rasterize_refs(candidates.into_iter(), spec)
    }
}

/// Draws `n` windows whose origins are uniform over `region`, rejecting
/// windows without any resource. Fails after `1000 * n` attempts.
pub fn sample_windows(
    records: &[OccurrenceRecord],
    region: &Region,
    n: usize,
    side_px: usize,
    resolution_mi: f64,
    rng: &mut SplitMix64,
) -> Result<Vec<ContextWindow>> {
    let index = RecordIndex::new(records, 1.0);
    let budget = 1000usize.saturating_mul(n);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts >= budget {
            return Err(Error::SamplingBudgetExceeded { wanted: n, attempts });
        }
        attempts += 1;
        let origin = GeoPoint::new(
            rng.uniform(region.west, region.east),
            rng.uniform(region.south, region.north),
        );
        let window = index.rasterize(WindowSpec::new(origin, side_px, resolution_mi));
        if window.resource_count() > 0 {
            out.push(window);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

/// Square test region about `center`, a square annulus of width `annulus_mi`
/// around it for validation, everything else for training. Membership is
/// decided by the window centre, measured in miles on the axis-aligned plane
/// around `center`.
pub fn split_ood(
    windows: &[WindowSpec],
    center: GeoPoint,
    test_side_mi: f64,
    annulus_mi: f64,
) -> Result<Vec<Split>> {
    if !(test_side_mi > 0.0) || !(annulus_mi >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need test_side_mi > 0 and annulus_mi >= 0, got {test_side_mi}, {annulus_mi}"
        )));
    }
    let half = 0.5 * test_side_mi;
    Ok(windows
        .iter()
        .map(|w| {
            let (east, north) = w.center().miles_from(center);
            let d = east.abs().max(north.abs());
            if d <= half {
                Split::Test
            } else if d <= half + annulus_mi {
                Split::Val
            } else {
                Split::Train
            }
        })
        .collect())
}

/// Random split into train/val/test by fractions, deterministic given `rng`.
pub fn split_random(n: usize, val_frac: f64, test_frac: f64, rng: &mut SplitMix64) -> Vec<Split> {
    let n_val = (n as f64 * val_frac).round() as usize;
    let n_test = ((n as f64 * test_frac).round() as usize).min(n - n_val.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut tags = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_val {
            tags[i] = Split::Val;
        } else if rank < n_val + n_test {
            tags[i] = Split::Test;
        }
    }
    tags
}

/// Window placed on a visualisation lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeCell {
    pub col: usize,
    pub row: usize,
    pub spec: WindowSpec,
}

/// Abutting windows covering `region` in `stride_mi` steps along lines of
/// constant latitude and longitude; partially covered edges get a window.
pub fn viz_grid(
    region: &Region,
    side_px: usize,
    resolution_mi: f64,
    stride_mi: f64,
) -> Result<Vec<LatticeCell>> {
    if !(stride_mi > 0.0) || side_px == 0 || !(resolution_mi > 0.0) {
        return Err(Error::InvalidParameter("stride, side and resolution must be positive".into()));
    }
    let count = |extent: f64| ((extent / stride_mi - 1e-9).ceil() as usize).max(1);
    let (n_cols, n_rows) = (count(region.width_mi()), count(region.height_mi()));
    let sw = region.southwest();
    let half = 0.5 * resolution_mi;
    let mut out = Vec::with_capacity(n_cols * n_rows);
    for row in 0..n_rows {
        for col in 0..n_cols {
            let origin = sw.offset_miles(col as f64 * stride_mi + half, row as f64 * stride_mi + half);
            out.push(LatticeCell { col, row, spec: WindowSpec::new(origin, side_px, resolution_mi) });
        }
    }
    Ok(out)
}
