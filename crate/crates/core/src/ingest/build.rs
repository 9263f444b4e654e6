//! End-to-end dataset construction: sample windows, tag splits, remove
//! duplicated training pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ContextWindow, Deduplicator, GeoPoint, Region};
use crate::ingest::dataset::{Dataset, DatasetEntry, DatasetHeader};
use crate::ingest::raster::{sample_windows, split_ood, split_random, Split};
use crate::ingest::records::OccurrenceRecord;
use crate::synth::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum SplitRule {
    Ood { center: GeoPoint, test_side_mi: f64, annulus_mi: f64 },
    Random { val_frac: f64, test_frac: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub region: Region,
    pub windows: usize,
    pub side_px: usize,
    pub resolution_mi: f64,
    pub split: SplitRule,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub pixels_seen: usize,
    pub pixels_zeroed: usize,
}

/// Samples `params.windows` windows from the "dataset" substream, tags them,
/// then streams the training split through a fresh [`Deduplicator`] in index
/// order. The original layers are kept; the cleaned copy goes to
/// [`DatasetEntry::dedup_minerals`].
pub fn build_dataset(records: &[OccurrenceRecord], params: &BuildParams) -> Result<(Dataset, DedupStats)> {
    let mut rng = SplitMix64::substream(params.seed, "dataset");
    let windows = sample_windows(
        records,
        &params.region,
        params.windows,
        params.side_px,
        params.resolution_mi,
        &mut rng,
    )?;
    let tags = match params.split {
        SplitRule::Ood { center, test_side_mi, annulus_mi } => {
            let specs: Vec<_> = windows.iter().map(|w| w.spec).collect();
            split_ood(&specs, center, test_side_mi, annulus_mi)?
        }
        SplitRule::Random { val_frac, test_frac } => {
            if !(0.0..=1.0).contains(&val_frac) || !(0.0..=1.0).contains(&test_frac) || val_frac + test_frac > 1.0 {
                return Err(Error::InvalidParameter(format!("bad split fractions {val_frac}, {test_frac}")));
            }
            let mut split_rng = SplitMix64::substream(params.seed, "split");
            split_random(windows.len(), val_frac, test_frac, &mut split_rng)
        }
    };
    let generator = serde_json::to_value(params).map_err(|e| Error::Manifest(e.to_string()))?;
    let mut dedup = Deduplicator::new();
    let mut entries = Vec::with_capacity(windows.len());
    for (window, split) in windows.into_iter().zip(tags) {
        let mut entry = DatasetEntry::new(window, split);
        if split == Split::Train {
            entry.dedup_minerals = Some(dedup.process(entry.window.clone())?.minerals);
        }
        entries.push(entry);
    }
    let stats = DedupStats { pixels_seen: dedup.seen(), pixels_zeroed: dedup.zeroed() };
    Ok((Dataset { header: DatasetHeader::new(params.seed, generator), entries }, stats))
}

impl Dataset {
    /// Windows of one split. With `dedup`, entries that carry a cleaned copy
    /// use it in place of their mineral layers.
    pub fn windows(&self, split: Split, dedup: bool) -> Vec<ContextWindow> {
        self.split(split)
            .map(|(_, e)| match (&e.dedup_minerals, dedup) {
                (Some(m), true) => ContextWindow { minerals: m.clone(), ..e.window.clone() },
                _ => e.window.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_synthetic, SynthParams};

    fn params(seed: u64) -> (Vec<OccurrenceRecord>, BuildParams) {
        let region = Region::from_miles(GeoPoint::new(-110.003, 38.004), 60.0, 40.0).unwrap();
        let mut synth = SynthParams::new(region, seed);
        synth.cluster_rate = 30.0;
        let records = gen_synthetic(&synth).unwrap().records;
        let split = SplitRule::Ood { center: region.southwest().offset_miles(45.0, 20.0), test_side_mi: 20.0, annulus_mi: 5.0 };
        (records, BuildParams { region, windows: 40, side_px: 10, resolution_mi: 1.0, split, seed })
    }

    #[test]
    fn deterministic_and_tagged() {
        let (records, p) = params(4);
        let (a, sa) = build_dataset(&records, &p).unwrap();
        let (b, sb) = build_dataset(&records, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(a.entries.len(), 40);
        for e in &a.entries {
            assert_eq!(e.dedup_minerals.is_some(), e.split == Split::Train);
        }
        assert!(sa.pixels_zeroed > 0);
    }

    #[test]
    fn dedup_copy_only_clears() {
        let (records, p) = params(9);
        let (d, _) = build_dataset(&records, &p).unwrap();
        for e in &d.entries {
            if let Some(m) = &e.dedup_minerals {
                assert!(m.data.iter().zip(&e.window.minerals.data).all(|(&c, &o)| c <= o));
            }
        }
        let raw = d.windows(Split::Train, false);
        let clean = d.windows(Split::Train, true);
        assert_eq!(raw.len(), clean.len());
        assert!(clean.iter().zip(&raw).all(|(c, r)| c.spec == r.spec && c.covariates == r.covariates));
    }

    #[test]
    fn random_split_fractions() {
        let (records, mut p) = params(2);
        p.split = SplitRule::Random { val_frac: 0.25, test_frac: 0.25 };
        let (d, _) = build_dataset(&records, &p).unwrap();
        assert_eq!(d.split(Split::Val).count(), 10);
        assert_eq!(d.split(Split::Test).count(), 10);
        p.split = SplitRule::Random { val_frac: 0.8, test_frac: 0.3 };
        assert!(build_dataset(&records, &p).is_err());
    }
}
