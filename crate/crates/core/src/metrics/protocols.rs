//! Evaluation protocols: masked scoring of a model over a window set,
//! progressive unmasking, held-out influence and data co-occurrence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ContextWindow, Raster};
use crate::masking::Mask;
use crate::metrics::{EvalReport, InfillModel, LayerCounts, ModelInput, Scorer};

/// Scores `model` on each window's masked cells.
pub fn evaluate<M: InfillModel + ?Sized>(
    model: &M,
    windows: &[&ContextWindow],
    masks: &[Mask],
    policy: &str,
    split: &str,
) -> Result<EvalReport> {
    if windows.len() != masks.len() {
        return Err(Error::ShapeMismatch { expected: vec![windows.len()], found: vec![masks.len()] });
    }
    let layers = windows.first().map_or(crate::grid::NUM_MINERALS, |w| w.minerals.channels);
    let mut scorer = Scorer::new(layers, model.threshold());
    for (i, (w, mask)) in windows.iter().zip(masks).enumerate() {
        let pred = model.predict(&ModelInput::new(w, mask)?)?;
        scorer.add(i, &pred, &w.minerals, &mask.bits)?;
    }
    Ok(scorer.finish(&model.name(), policy, split))
}

/// Pooled counts of layer `target` over every cell of that layer, with the
/// layers flagged in `removed` masked out of the inputs.
fn target_counts<M: InfillModel + ?Sized>(
    model: &M,
    windows: &[&ContextWindow],
    removed: &[bool],
    target: usize,
) -> Result<LayerCounts> {
    let mut total = LayerCounts::default();
    for w in windows {
        let side = w.side();
        let mask = Mask::layers(side, removed);
        let pred = model.predict(&ModelInput::new(w, &mask)?)?.threshold(model.threshold());
        let truth = &w.minerals;
        let n = side * side;
        let region = Raster { channels: 1, side, data: vec![1u8; n] };
        let single = |r: &Raster<u8>| Raster { channels: 1, side, data: r.layer(target).to_vec() };
        let counts = crate::metrics::confusion(&single(&pred), &single(truth), &region)?;
        total.add(counts[0]);
    }
    Ok(total)
}

/// Per-target metrics as input layers are revealed one at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveMatrix {
    pub order: Vec<usize>,
    /// `dice[target][step]`; step `s < L-1` has the first `s+1` non-target
    /// layers of `order` visible, the last step reveals the target itself.
    pub dice: Vec<Vec<Option<f64>>>,
    pub recall: Vec<Vec<Option<f64>>>,
}

fn check_order(order: &[usize], layers: usize) -> Result<()> {
    let mut seen = vec![false; layers];
    if order.len() != layers || order.iter().any(|&o| o >= layers || std::mem::replace(&mut seen[o], true)) {
        return Err(Error::InvalidParameter(format!("{order:?} is not a permutation of 0..{layers}")));
    }
    Ok(())
}

pub fn progressive_unmask_eval<M: InfillModel + ?Sized>(
    model: &M,
    windows: &[&ContextWindow],
    order: &[usize],
) -> Result<ProgressiveMatrix> {
    let layers = windows.first().map_or(crate::grid::NUM_MINERALS, |w| w.minerals.channels);
    check_order(order, layers)?;
    let mut dice = vec![vec![None; layers]; layers];
    let mut recall = vec![vec![None; layers]; layers];
    for target in 0..layers {
        let reveal: Vec<usize> = order.iter().copied().filter(|&l| l != target).chain([target]).collect();
        for step in 0..layers {
            let mut removed = vec![true; layers];
            reveal[..=step].iter().for_each(|&l| removed[l] = false);
            let counts = target_counts(model, windows, &removed, target)?;
            dice[target][step] = counts.dice();
            recall[target][step] = counts.recall();
        }
    }
    Ok(ProgressiveMatrix { order: order.to_vec(), dice, recall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    /// Dice on each target with only the target masked.
    pub base: Vec<Option<f64>>,
    /// `delta[y][x]` = base Dice on `y` minus Dice on `y` with `x` also held
    /// out. The diagonal is zero.
    pub delta: Vec<Vec<Option<f64>>>,
}

pub fn influence_matrix<M: InfillModel + ?Sized>(model: &M, windows: &[&ContextWindow]) -> Result<InfluenceMatrix> {
    let layers = windows.first().map_or(crate::grid::NUM_MINERALS, |w| w.minerals.channels);
    let mut base = vec![None; layers];
    let mut delta = vec![vec![None; layers]; layers];
    for y in 0..layers {
        let mut removed = vec![false; layers];
        removed[y] = true;
        let full = target_counts(model, windows, &removed, y)?.dice();
        base[y] = full;
        for x in 0..layers {
            if x == y {
                delta[y][x] = full.map(|_| 0.0);
                continue;
            }
            removed[x] = true;
            let held = target_counts(model, windows, &removed, y)?.dice();
            removed[x] = false;
            delta[y][x] = full.zip(held).map(|(a, b)| a - b);
        }
    }
    Ok(InfluenceMatrix { base, delta })
}

/// `P(containing present | test present)` over every pixel; rows whose test
/// mineral never occurs are `None`.
pub fn cooccurrence(windows: &[&ContextWindow]) -> Vec<Vec<Option<f64>>> {
    let layers = windows.first().map_or(crate::grid::NUM_MINERALS, |w| w.minerals.channels);
    let mut present = vec![0u64; layers];
    let mut joint = vec![vec![0u64; layers]; layers];
    let mut active = Vec::with_capacity(layers);
    for w in windows {
        let n = w.side() * w.side();
        for px in 0..n {
            active.clear();
            active.extend((0..layers).filter(|&l| w.minerals.data[l * n + px] != 0));
            for &a in &active {
                present[a] += 1;
                for &b in &active {
                    joint[a][b] += 1;
                }
            }
        }
    }
    (0..layers)
        .map(|t| (0..layers).map(|c| (present[t] > 0).then(|| joint[t][c] as f64 / present[t] as f64)).collect())
        .collect()
}

/// Layer indices sorted by ascending number of positive cells; ties keep
/// layer order.
pub fn commonality_order(windows: &[&ContextWindow]) -> Vec<usize> {
    let layers = windows.first().map_or(crate::grid::NUM_MINERALS, |w| w.minerals.channels);
    let mut counts = vec![0u64; layers];
    for w in windows {
        for (l, c) in counts.iter_mut().enumerate() {
            *c += w.minerals.layer(l).iter().map(|&v| v as u64).sum::<u64>();
        }
    }
    let mut order: Vec<usize> = (0..layers).collect();
    order.sort_by_key(|&l| (counts[l], l));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GeoPoint, WindowSpec};
    use crate::metrics::PredictionGrid;
    use crate::synth::rng::SplitMix64;

    /// Reproduces visible inputs, predicts absence where masked.
    struct Copier;
    impl InfillModel for Copier {
        fn name(&self) -> String {
            "copier".into()
        }
        fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
            let m = &input.minerals;
            let probs = m.data.iter().map(|&v| if v == 1 { 1.0 } else { 0.0 }).collect();
            Ok(PredictionGrid { probs: Raster::from_vec(m.channels, m.side, probs)? })
        }
    }

    struct Zero;
    impl InfillModel for Zero {
        fn name(&self) -> String {
            "zero".into()
        }
        fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
            Ok(PredictionGrid::constant(input.minerals.channels, input.minerals.side, 0.0))
        }
    }

    /// Predicts layer `y` from layer `source` only.
    struct Borrower {
        source: usize,
    }
    impl InfillModel for Borrower {
        fn name(&self) -> String {
            "borrower".into()
        }
        fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
            let m = &input.minerals;
            let src = m.layer(self.source);
            let n = m.side * m.side;
            let probs = (0..m.data.len()).map(|i| if src[i % n] == 1 { 1.0 } else { 0.0 }).collect();
            Ok(PredictionGrid { probs: Raster::from_vec(m.channels, m.side, probs)? })
        }
    }

    fn random_windows(seed: u64, n: usize) -> Vec<ContextWindow> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| {
                let mut w = ContextWindow::empty(WindowSpec::new(GeoPoint::new(-117.0, 41.0), 8, 1.0));
                for (l, v) in w.minerals.data.iter_mut().enumerate() {
                    *v = rng.bernoulli(0.02 + 0.02 * (l / 64) as f64) as u8;
                }
                w
            })
            .collect()
    }

    #[test]
    fn copier_final_step_is_perfect() {
        let ws = random_windows(1, 6);
        let refs: Vec<_> = ws.iter().collect();
        let order = commonality_order(&refs);
        let m = progressive_unmask_eval(&Copier, &refs, &order).unwrap();
        for t in 0..10 {
            assert_eq!(m.dice[t][9], Some(1.0));
            assert_eq!(m.recall[t][9], Some(1.0));
            // Masked target, copier predicts nothing.
            assert_eq!(m.recall[t][8], Some(0.0));
        }
    }

    #[test]
    fn zero_model_scores_zero_or_undefined() {
        let ws = random_windows(2, 3);
        let refs: Vec<_> = ws.iter().collect();
        let m = progressive_unmask_eval(&Zero, &refs, &(0..10).collect::<Vec<_>>()).unwrap();
        assert!(m.dice.iter().flatten().all(|d| d.is_none() || *d == Some(0.0)));
    }

    #[test]
    fn bad_order_rejected() {
        let ws = random_windows(2, 1);
        let refs: Vec<_> = ws.iter().collect();
        assert!(progressive_unmask_eval(&Zero, &refs, &[0, 0, 1, 2, 3, 4, 5, 6, 7, 8]).is_err());
    }

    #[test]
    fn commonality_is_ascending() {
        let ws = random_windows(3, 20);
        let refs: Vec<_> = ws.iter().collect();
        let order = commonality_order(&refs);
        let count = |l: usize| ws.iter().map(|w| w.minerals.layer(l).iter().filter(|&&v| v == 1).count()).sum::<usize>();
        for pair in order.windows(2) {
            assert!(count(pair[0]) <= count(pair[1]));
        }
    }

    #[test]
    fn influence_of_ignored_layer_is_zero() {
        let mut ws = random_windows(4, 5);
        for w in &mut ws {
            let src = w.minerals.layer(2).to_vec();
            w.minerals.layer_mut(0).copy_from_slice(&src);
        }
        let refs: Vec<_> = ws.iter().collect();
        let inf = influence_matrix(&Borrower { source: 2 }, &refs).unwrap();
        // Layer 0 is a copy of layer 2, so hiding 2 destroys it.
        assert_eq!(inf.base[0], Some(1.0));
        assert_eq!(inf.delta[0][2], Some(1.0));
        for y in 0..10 {
            for x in [1, 5, 9] {
                if x != y && inf.delta[y][x].is_some() {
                    assert_eq!(inf.delta[y][x], Some(0.0));
                }
            }
        }
        let again = influence_matrix(&Borrower { source: 2 }, &refs).unwrap();
        assert_eq!(inf, again);
    }

    #[test]
    fn influence_base_matches_progressive_last_masked_step() {
        let ws = random_windows(5, 4);
        let refs: Vec<_> = ws.iter().collect();
        let model = Borrower { source: 3 };
        let inf = influence_matrix(&model, &refs).unwrap();
        let prog = progressive_unmask_eval(&model, &refs, &commonality_order(&refs)).unwrap();
        for y in 0..10 {
            assert_eq!(inf.base[y], prog.dice[y][8]);
        }
    }

    #[test]
    fn cooccurrence_hand_count() {
        // Five pixels: Gold at 0,1,2,3; Silver at 0,1; Zinc at 4.
        let mut w = ContextWindow::empty(WindowSpec::new(GeoPoint::new(-117.0, 41.0), 3, 1.0));
        for px in [0, 1, 2, 3] {
            w.minerals.layer_mut(0)[px] = 1;
        }
        for px in [0, 1] {
            w.minerals.layer_mut(1)[px] = 1;
        }
        w.minerals.layer_mut(2)[4] = 1;
        let c = cooccurrence(&[&w]);
        assert_eq!(c[1][0], Some(1.0));
        assert_eq!(c[0][1], Some(0.5));
        assert_eq!(c[0][2], Some(0.0));
        assert_eq!(c[2][0], Some(0.0));
        assert_eq!(c[0][0], Some(1.0));
        assert!(c[5].iter().all(Option::is_none));
    }

    #[test]
    fn evaluate_on_truth_is_perfect() {
        struct Oracle<'a>(&'a [ContextWindow]);
        impl InfillModel for Oracle<'_> {
            fn name(&self) -> String {
                "oracle".into()
            }
            fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
                let w = self.0.iter().find(|w| w.spec == input.spec).unwrap();
                let probs = w.minerals.data.iter().map(|&v| v as f32).collect();
                Ok(PredictionGrid { probs: Raster::from_vec(10, w.side(), probs)? })
            }
        }
        let mut ws = random_windows(6, 3);
        for (i, w) in ws.iter_mut().enumerate() {
            w.spec.origin.lon += i as f64;
        }
        let refs: Vec<_> = ws.iter().collect();
        let masks: Vec<_> = (0..3).map(|_| Mask::layers(8, &[true; 10])).collect();
        let r = evaluate(&Oracle(&ws), &refs, &masks, "all", "test").unwrap();
        assert_eq!(r.macro_dice, Some(1.0));
        assert_eq!(r.macro_recall, Some(1.0));
    }
}
