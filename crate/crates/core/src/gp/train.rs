//! Initialization, minibatch training, threshold selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::adam::Adam;
use crate::gp::kmeans::kmeans_pp;
use crate::gp::model::{targets, Batch, FeatureLayout, SvgpcModel, DEFAULT_JITTER};
use crate::gp::quadrature::GaussHermite;
use crate::grid::{first_seen_pixels, window_pixel_coords, ContextWindow, MILES_PER_DEGREE};
use crate::masking::{sample_mask, Mask, SAMPLING_POLICY};
use crate::metrics::{evaluate, InfillModel, ModelInput, PredictionGrid, Scorer};
use crate::synth::rng::SplitMix64;

/// Decision thresholds tried by [`sweep_threshold`].
pub const THRESHOLD_GRID: [f64; 11] = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Tiles per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(rename = "E")]
    pub inducing: usize,
    pub seed: u64,
    /// Aggressiveness of the masks drawn for every training tile.
    pub train_aggressiveness: f64,
    /// Initial lengthscale of the lon/lat dimensions.
    pub coord_lengthscale_mi: f64,
    /// Initial lengthscale of mineral and covariate dimensions.
    pub feature_lengthscale: f64,
    pub jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            inducing: 64,
            seed: 0,
            train_aggressiveness: 0.8,
            coord_lengthscale_mi: 10.0,
            feature_lengthscale: 1.0,
            jitter: DEFAULT_JITTER,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("train config: {e}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub elbo: Vec<f64>,
    pub val_dice: Vec<Option<f64>>,
    pub best_epoch: Option<usize>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Prior-initialized model: inducing lon/lat from k-means++ on positive
/// pixels (all pixels when there are too few), other inducing dimensions at
/// zero for minerals and the covariate mean, constant means at the logit of
/// each layer's positive rate. Only first occurrences of each cell count.
pub fn init_model(train: &[&ContextWindow], cfg: &TrainConfig) -> Result<SvgpcModel> {
    let keep = first_seen_pixels(train)?;
    let first = train.first().ok_or_else(|| Error::InvalidParameter("empty training set".into()))?;
    let layout = FeatureLayout { minerals: first.minerals.channels, covariates: first.covariate_channels() };
    let mut positives = Vec::new();
    let mut everything = Vec::new();
    let mut cov_sum = vec![0.0; layout.covariates];
    let mut layer_pos = vec![0u64; layout.minerals];
    let mut pixels = 0u64;
    for (w, keep) in train.iter().zip(&keep) {
        if w.minerals.channels != layout.minerals || w.covariate_channels() != layout.covariates {
            return Err(Error::ShapeMismatch {
                expected: vec![layout.minerals, layout.covariates],
                found: vec![w.minerals.channels, w.covariate_channels()],
            });
        }
        let n = w.side() * w.side();
        for (px, p) in window_pixel_coords(&w.spec).into_iter().enumerate() {
            if !keep[px] {
                continue;
            }
            pixels += 1;
            for (l, c) in layer_pos.iter_mut().enumerate() {
                *c += w.minerals.data[l * n + px] as u64;
            }
            if let Some(cov) = &w.covariates {
                for (c, s) in cov_sum.iter_mut().enumerate() {
                    *s += cov.data[c * n + px] as f64;
                }
            }
            let any = (0..layout.minerals).any(|l| w.minerals.data[l * n + px] != 0);
            if any {
                positives.push(vec![p.lon, p.lat]);
            }
            everything.push(vec![p.lon, p.lat]);
        }
    }
    let mut rng = SplitMix64::substream(cfg.seed, "model");
    let distinct_positive = {
        let mut keys: Vec<(u64, u64)> = positives.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    let pool = if distinct_positive >= cfg.inducing { &positives } else { &everything };
    let centers = kmeans_pp(pool, cfg.inducing, &mut rng)?;

    let c = layout.dim();
    let off = layout.coord_offset();
    let mut z = DMatrix::zeros(cfg.inducing, c);
    for (e, center) in centers.iter().enumerate() {
        for (j, s) in cov_sum.iter().enumerate() {
            z[(e, layout.minerals + j)] = s / pixels as f64;
        }
        z[(e, off)] = center[0];
        z[(e, off + 1)] = center[1];
    }
    let coord_ls = cfg.coord_lengthscale_mi / MILES_PER_DEGREE;
    let ls = DVector::from_fn(c, |d, _| if d >= off { coord_ls } else { cfg.feature_lengthscale });
    let means: Vec<f64> = layer_pos.iter().map(|&p| logit(p as f64 / pixels as f64)).collect();
    SvgpcModel::from_prior(layout, z, ls, &means, cfg.jitter)
}

/// Masked batch features and full targets for a set of tiles.
pub fn assemble_batch(model: &SvgpcModel, tiles: &[(&ContextWindow, Mask)]) -> Result<Batch> {
    assemble_batch_kept(model, tiles, None)
}

/// As [`assemble_batch`], keeping only rows flagged in `keep` (one flag
/// vector per tile) when given.
pub fn assemble_batch_kept(
    model: &SvgpcModel,
    tiles: &[(&ContextWindow, Mask)],
    keep: Option<&[&[bool]]>,
) -> Result<Batch> {
    let c = model.layout.dim();
    let k = model.num_tasks();
    let rows = |i: usize, n: usize| keep.map_or(n, |kp| kp[i].iter().filter(|&&b| b).count());
    let total: usize = tiles.iter().enumerate().map(|(i, (w, _))| rows(i, w.side() * w.side())).sum();
    let mut x = DMatrix::zeros(total, c);
    let mut y = DMatrix::zeros(total, k);
    let mut row = 0;
    for (i, (w, mask)) in tiles.iter().enumerate() {
        let fx = model.layout.features(&ModelInput::new(w, mask)?)?;
        let fy = targets(&w.minerals);
        for px in 0..fx.nrows() {
            if keep.is_some_and(|kp| !kp[i][px]) {
                continue;
            }
            x.row_mut(row).copy_from(&fx.row(px));
            y.row_mut(row).copy_from(&fy.row(px));
            row += 1;
        }
    }
    Ok(Batch { x, y })
}

/// Validation masks drawn once per training run.
pub fn validation_masks(val: &[&ContextWindow], aggressiveness: f64, seed: u64) -> Vec<Mask> {
    let mut rng = SplitMix64::substream(seed, "val-mask");
    val.iter().map(|w| sample_mask(w.minerals.channels, w.side(), aggressiveness, &mut rng)).collect()
}

/// Minibatch ascent on the ELBO. The training tiles are streamed once
/// beforehand and every cell enters the likelihood at its first occurrence
/// only; tiles left with no pixels are dropped. Each tile gets a fresh mask
/// every time it is visited; the model with the best validation macro Dice is returned,
/// the latest such epoch on ties.
pub fn train(
    mut model: SvgpcModel,
    train: &[&ContextWindow],
    val: &[&ContextWindow],
    cfg: &TrainConfig,
) -> Result<(SvgpcModel, History)> {
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("training needs tiles and a positive batch size".into()));
    }
    let keep = first_seen_pixels(train)?;
    let active: Vec<usize> = (0..train.len()).filter(|&i| keep[i].iter().any(|&b| b)).collect();
    let rule = GaussHermite::default();
    let n_total: f64 = keep.iter().map(|k| k.iter().filter(|&&b| b).count() as f64).sum();
    let mut params = model.to_flat();
    let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = SplitMix64::substream(cfg.seed, "train");
    let val_masks = validation_masks(val, cfg.train_aggressiveness, cfg.seed);
    let mut best: Option<(f64, SvgpcModel)> = None;
    let mut order = active;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let tiles: Vec<(&ContextWindow, Mask)> = chunk
                .iter()
                .map(|&i| {
                    let w = train[i];
                    (w, sample_mask(w.minerals.channels, w.side(), cfg.train_aggressiveness, &mut rng))
                })
                .collect();
            let kept: Vec<&[bool]> = chunk.iter().map(|&i| keep[i].as_slice()).collect();
            let batch = assemble_batch_kept(&model, &tiles, Some(&kept))?;
            let (parts, grad) = model.elbo_grad(&batch, n_total, &rule)?;
            let step = history.elbo.len();
            if !parts.elbo.is_finite() {
                return Err(Error::NonFiniteElbo { step, value: parts.elbo });
            }
            history.elbo.push(parts.elbo);
            let neg: Vec<f64> = grad.to_flat().iter().map(|g| -g).collect();
            if neg.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteElbo { step, value: f64::NAN });
            }
            adam.step(&mut params, &neg);
            model.set_flat(&params);
        }
        if val.is_empty() {
            history.val_dice.push(None);
            continue;
        }
        let predictor = model.predictor()?;
        let dice = evaluate(&predictor, val, &val_masks, SAMPLING_POLICY, "val")?.macro_dice;
        history.val_dice.push(dice);
        let score = dice.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| score >= *b) {
            history.best_epoch = Some(epoch);
            best = Some((score, model.clone()));
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => {
            history.best_epoch = Some(cfg.epochs - 1);
            model
        }
    };
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: f64,
    /// Macro Dice at each grid threshold.
    pub dice: Vec<(f64, Option<f64>)>,
}

/// Scores fixed probability grids at every threshold in
/// [`THRESHOLD_GRID`]; ties go to the smallest threshold.
pub fn sweep_grids(preds: &[PredictionGrid], windows: &[&ContextWindow], masks: &[Mask]) -> Result<SweepResult> {
    if preds.is_empty() || preds.len() != windows.len() || masks.len() != windows.len() {
        return Err(Error::InvalidParameter("sweep needs one prediction and mask per window".into()));
    }
    let mut dice = Vec::with_capacity(THRESHOLD_GRID.len());
    let mut best: Option<(f64, f64)> = None;
    for &t in &THRESHOLD_GRID {
        let mut scorer = Scorer::new(windows[0].minerals.channels, t);
        for (i, ((p, w), m)) in preds.iter().zip(windows).zip(masks).enumerate() {
            scorer.add(i, p, &w.minerals, &m.bits)?;
        }
        let d = scorer.finish("", "", "").macro_dice;
        if let Some(d) = d {
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((t, d));
            }
        }
        dice.push((t, d));
    }
    let (best, _) = best.ok_or(Error::AllUndefined)?;
    Ok(SweepResult { best, dice })
}

/// Picks the validation-optimal threshold and stores it in the model.
pub fn sweep_threshold(model: &mut SvgpcModel, val: &[&ContextWindow], masks: &[Mask]) -> Result<SweepResult> {
    let predictor = model.predictor()?;
    let preds = val
        .iter()
        .zip(masks)
        .map(|(w, m)| predictor.predict(&ModelInput::new(w, m)?))
        .collect::<Result<Vec<_>>>()?;
    let result = sweep_grids(&preds, val, masks)?;
    model.threshold = result.best;
    Ok(result)
}
