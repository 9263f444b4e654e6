use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GeoPoint, Mineral, Region, NUM_MINERALS};
use crate::ingest::records::OccurrenceRecord;
use crate::synth::rng::SplitMix64;

/// Geochemical partners used by the default co-occurrence matrix.
const PARTNERS: [(Mineral, [Mineral; 2]); NUM_MINERALS] = [
    (Mineral::Gold, [Mineral::Silver, Mineral::Copper]),
    (Mineral::Silver, [Mineral::Gold, Mineral::Lead]),
    (Mineral::Zinc, [Mineral::Lead, Mineral::Copper]),
    (Mineral::Lead, [Mineral::Zinc, Mineral::Silver]),
    (Mineral::Copper, [Mineral::Gold, Mineral::Zinc]),
    (Mineral::Nickel, [Mineral::Copper, Mineral::Iron]),
    (Mineral::Iron, [Mineral::Manganese, Mineral::Nickel]),
    (Mineral::Uranium, [Mineral::Lead, Mineral::Iron]),
    (Mineral::Tungsten, [Mineral::Copper, Mineral::Zinc]),
    (Mineral::Manganese, [Mineral::Iron, Mineral::Zinc]),
];

/// 0.7 on the diagonal, 0.15 on each of two partner minerals.
pub fn default_cooccurrence() -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; NUM_MINERALS]; NUM_MINERALS];
    for (primary, partners) in PARTNERS {
        let row = &mut m[primary.index()];
        row[primary.index()] = 0.7;
        for p in partners {
            row[p.index()] += 0.15;
        }
    }
    m
}

/// Clustered-deposit generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub region: Region,
    /// Expected clusters per 10^4 square miles.
    pub cluster_rate: f64,
    pub points_per_cluster_mean: f64,
    /// Isotropic Gaussian spread of records around a cluster centre.
    pub scatter_mi: f64,
    /// Row-stochastic `P(record mineral | cluster primary)`.
    #[serde(default = "default_cooccurrence")]
    pub cooccurrence: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SynthParams {
    pub fn new(region: Region, seed: u64) -> Self {
        Self {
            region,
            cluster_rate: 4.0,
            points_per_cluster_mean: 20.0,
            scatter_mi: 2.0,
            cooccurrence: default_cooccurrence(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.cluster_rate >= 0.0) || !(self.points_per_cluster_mean >= 0.0) || !(self.scatter_mi >= 0.0) {
            return bad("rates and scatter must be non-negative".into());
        }
        if self.cooccurrence.len() != NUM_MINERALS {
            return bad(format!("cooccurrence needs {NUM_MINERALS} rows"));
        }
        for (i, row) in self.cooccurrence.iter().enumerate() {
            if row.len() != NUM_MINERALS || row.iter().any(|&p| !(p >= 0.0)) {
                return bad(format!("cooccurrence row {i} must hold {NUM_MINERALS} non-negative entries"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("cooccurrence row {i} sums to {sum}"));
            }
        }
        Region::new(self.region.west, self.region.south, self.region.east, self.region.north)?;
        Ok(())
    }

    pub fn expected_clusters(&self) -> f64 {
        self.cluster_rate * self.region.area_mi2() / 1e4
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: SynthParams =
            toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("synth config: {e}")))?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<OccurrenceRecord>,
    pub clusters: usize,
}

/// Generates clustered occurrence records.
///
/// Draw order per run: cluster count, then for each cluster its centre
/// (lon, lat), primary mineral and record count, then for each record one
/// uniform for the mineral and one normal pair for the offset. Records whose
/// offset leaves the region are dropped.
pub fn gen_synthetic(params: &SynthParams) -> Result<SynthOutput> {
    params.validate()?;
    let mut rng = SplitMix64::new(params.seed);
    let region = params.region;
    let n_clusters = rng.poisson(params.expected_clusters()) as usize;
    let mut records = Vec::new();
    for c in 0..n_clusters {
        let center = GeoPoint::new(rng.uniform(region.west, region.east), rng.uniform(region.south, region.north));
        let primary = rng.below(NUM_MINERALS as u64) as usize;
        let count = rng.poisson(params.points_per_cluster_mean);
        let row = &params.cooccurrence[primary];
        for i in 0..count {
            let mineral = rng.weighted_index(row).unwrap_or(primary);
            let (dx, dy) = rng.normal_pair();
            let loc = center.offset_miles(dx * params.scatter_mi, dy * params.scatter_mi);
            if region.contains(loc) {
                records.push(OccurrenceRecord {
                    id: format!("c{c}-r{i}"),
                    loc,
                    mineral: Mineral::from_index(mineral).unwrap(),
                });
            }
        }
    }
    Ok(SynthOutput { records, clusters: n_clusters })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> Region {
        Region::from_miles(GeoPoint::new(-118.0, 40.0), 100.0, 100.0).unwrap()
    }

    #[test]
    fn default_matrix_is_row_stochastic() {
        let p = SynthParams::new(region(), 0);
        p.validate().unwrap();
        for (i, row) in p.cooccurrence.iter().enumerate() {
            assert_eq!(row[i], 0.7);
            assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 3);
        }
    }

    #[test]
    fn zero_rate_is_empty() {
        let mut p = SynthParams::new(region(), 3);
        p.cluster_rate = 0.0;
        assert!(gen_synthetic(&p).unwrap().records.is_empty());
    }

    #[test]
    fn deterministic() {
        let p = SynthParams::new(region(), 11);
        assert_eq!(gen_synthetic(&p).unwrap(), gen_synthetic(&p).unwrap());
    }

    #[test]
    fn records_inside_region() {
        for seed in 0..20 {
            let mut p = SynthParams::new(region(), seed);
            p.scatter_mi = 10.0;
            let out = gen_synthetic(&p).unwrap();
            assert!(out.records.iter().all(|r| p.region.contains(r.loc)));
        }
    }

    #[test]
    fn invalid_params() {
        let mut p = SynthParams::new(region(), 0);
        p.cooccurrence[2][2] = 0.5;
        assert!(p.validate().is_err());
        let mut p = SynthParams::new(region(), 0);
        p.cluster_rate = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn toml_config() {
        let text = r#"
            cluster_rate = 2.5
            points_per_cluster_mean = 10.0
            scatter_mi = 1.5
            seed = 7
            [region]
            west = -118.0
            south = 40.0
            east = -116.0
            north = 41.0
        "#;
        let p = SynthParams::from_toml(text).unwrap();
        assert_eq!(p.seed, 7);
        assert_eq!(p.cooccurrence, default_cooccurrence());
    }

    #[test]
    fn mean_cluster_count_matches_rate() {
        // Poisson mean oracle: sample mean within 3 standard errors.
        let p0 = SynthParams::new(region(), 0);
        let lambda = p0.expected_clusters();
        let seeds = 200;
        let mean = (0..seeds)
            .map(|s| {
                let mut p = p0.clone();
                p.seed = s;
                p.points_per_cluster_mean = 1.0;
                gen_synthetic(&p).unwrap().clusters as f64
            })
            .sum::<f64>()
            / seeds as f64;
        let se = (lambda / seeds as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * se, "mean {mean} vs {lambda} (se {se})");
    }

    fn mean_nn_distance(points: &[(f64, f64)]) -> f64 {
        let mut total = 0.0;
        for (i, a) in points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, b) in points.iter().enumerate() {
                if i != j {
                    best = best.min((a.0 - b.0).hypot(a.1 - b.1));
                }
            }
            total += best;
        }
        total / points.len() as f64
    }

    #[test]
    fn records_are_clustered() {
        let base = region();
        let mut clustered = 0;
        for seed in 0..100u64 {
            let mut p = SynthParams::new(base, seed);
            p.points_per_cluster_mean = 8.0;
            let out = gen_synthetic(&p).unwrap();
            let sw = base.southwest();
            let pts: Vec<_> = out.records.iter().map(|r| r.loc.miles_from(sw)).collect();
            if pts.len() < 2 {
                continue;
            }
            let mut rng = SplitMix64::new(seed ^ 0xABCD);
            let uniform: Vec<_> = (0..pts.len())
                .map(|_| (rng.uniform(0.0, base.width_mi()), rng.uniform(0.0, base.height_mi())))
                .collect();
            if mean_nn_distance(&pts) < mean_nn_distance(&uniform) {
                clustered += 1;
            }
        }
        assert!(clustered >= 95, "clustered on {clustered}/100 trials");
    }
}
