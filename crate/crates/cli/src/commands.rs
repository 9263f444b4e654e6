use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use infill_core::gp::{self, checkpoint, SvgpcModel, TrainConfig};
use infill_core::ingest::dataset::write_json;
use infill_core::ingest::{
    build_dataset, container, parse_records, viz_grid, write_records, BuildParams, Dataset, DatasetEntry,
    DatasetHeader, MaskSet, PredictionSet, RecordIndex, Split, SplitRule, TensorData,
};
use infill_core::masking::SAMPLING_POLICY;
use infill_core::metrics::{
    commonality_order, cooccurrence, evaluate, influence_matrix, map_export, progressive_unmask_eval, srmm_loss,
    Constant, CopyInput, ModelInput, Scorer, DEFAULT_THRESHOLD,
};
use infill_core::synth::{gen_synthetic, SynthParams};
use infill_core::{masked_fraction, sample_mask, ContextWindow, InfillModel, Mask, Mineral, PredictionGrid, SplitMix64};
use serde::Serialize;
use serde_json::json;

use crate::run::RunManifest;
use crate::{
    BuildArgs, Cli, Command, EvalArgs, MapArgs, MaskArgs, MaskSource, MatrixArgs, MatrixKind, PredictArgs,
    ReplayArgs, SrmmArgs, SweepArgs, SynthArgs, TrainArgs,
};

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, argv),
        Command::Build(a) => build(a, argv),
        Command::Mask(a) => mask(a, argv),
        Command::TrainGp(a) => train_gp(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::SweepAggro(a) => sweep_aggro(a, argv),
        Command::Matrix(a) => matrix(a, argv),
        Command::SrmmLoss(a) => srmm(a, argv),
        Command::Map(a) => map(a, argv),
        Command::Replay(a) => replay(a),
    }
}

fn require(paths: &[(&str, Option<&Path>)]) -> Result<()> {
    for (what, path) in paths {
        if let Some(p) = path {
            ensure!(p.exists(), "{what} {} does not exist", p.display());
        }
    }
    Ok(())
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn refs(windows: &[ContextWindow]) -> Vec<&ContextWindow> {
    windows.iter().collect()
}

fn check_aggro(a: f64) -> Result<()> {
    ensure!(a > 0.0 && a <= 1.0, "aggressiveness must lie in (0, 1], got {a}");
    Ok(())
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    require(&[("config", a.config.as_deref())])?;
    let mut params = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SynthParams::from_toml(&text)?
        }
        None => SynthParams::new(a.region, a.seed),
    };
    params.region = a.region;
    params.seed = a.seed;
    if let Some(v) = a.cluster_rate {
        params.cluster_rate = v;
    }
    if let Some(v) = a.points_per_cluster {
        params.points_per_cluster_mean = v;
    }
    if let Some(v) = a.scatter_mi {
        params.scatter_mi = v;
    }
    params.validate()?;
    create_out(&a.out)?;
    let output = gen_synthetic(&params)?;
    write_records(a.out.join("records.jsonl"), &output.records)?;
    write_json(
        a.out.join("summary.json"),
        &json!({ "seed": a.seed, "records": output.records.len(), "clusters": output.clusters }),
    )?;
    RunManifest::new("synth", argv, Some(a.seed), &json!({ "args": &a, "params": &params }))?.write(&a.out)
}

fn split_counts(ds: &Dataset) -> serde_json::Value {
    let count = |s| ds.split(s).count();
    json!({ "train": count(Split::Train), "val": count(Split::Val), "test": count(Split::Test) })
}

fn build(a: BuildArgs, argv: &[String]) -> Result<()> {
    require(&[("records", Some(&a.records))])?;
    let parsed = parse_records(&a.records)?;
    for m in parsed.malformed.iter().take(5) {
        eprintln!("warning: {}:{}: {}", a.records.display(), m.line, m.reason);
    }
    let malformed: Vec<_> = parsed.malformed.iter().map(|m| json!({ "line": m.line, "reason": m.reason })).collect();
    let (ds, stats) = match a.lattice_stride_mi {
        Some(stride) => {
            let span = a.side_px as f64 * a.resolution_mi;
            ensure!((stride - span).abs() < 1e-9, "lattice windows must abut: stride {stride} mi, window span {span} mi");
            let index = RecordIndex::new(&parsed.records, 1.0);
            let entries = viz_grid(&a.region, a.side_px, a.resolution_mi, stride)?
                .into_iter()
                .map(|c| DatasetEntry { lattice: Some((c.col, c.row)), ..DatasetEntry::new(index.rasterize(c.spec), Split::Test) })
                .collect();
            let generator = json!({ "lattice": { "region": a.region, "side_px": a.side_px, "resolution_mi": a.resolution_mi, "stride_mi": stride } });
            (Dataset { header: DatasetHeader::new(a.seed, generator), entries }, None)
        }
        None => {
            let split = match a.ood_center {
                Some(center) => SplitRule::Ood { center, test_side_mi: a.ood_side_mi, annulus_mi: a.annulus_mi },
                None => SplitRule::Random { val_frac: a.val_frac, test_frac: a.test_frac },
            };
            let params = BuildParams {
                region: a.region,
                windows: a.n,
                side_px: a.side_px,
                resolution_mi: a.resolution_mi,
                split,
                seed: a.seed,
            };
            let (ds, stats) = build_dataset(&parsed.records, &params)?;
            (ds, Some(stats))
        }
    };
    create_out(&a.out)?;
    ds.write(&a.out)?;
    write_json(
        a.out.join("build.json"),
        &json!({
            "seed": a.seed,
            "records": parsed.records.len(),
            "malformed": malformed,
            "windows": ds.entries.len(),
            "splits": split_counts(&ds),
            "dedup": stats,
        }),
    )?;
    RunManifest::new("build", argv, Some(a.seed), &a)?.write(&a.out)
}

/// One mask per dataset window from the "mask" substream.
fn draw_masks(ds: &Dataset, aggro: f64, seed: u64) -> Result<Vec<Mask>> {
    check_aggro(aggro)?;
    let mut rng = SplitMix64::substream(seed, "mask");
    Ok(ds.entries.iter().map(|e| sample_mask(e.window.minerals.channels, e.window.side(), aggro, &mut rng)).collect())
}

fn load_masks(ds: &Dataset, src: &MaskSource) -> Result<Vec<Mask>> {
    let Some(path) = &src.masks else {
        return draw_masks(ds, src.aggro, src.seed);
    };
    let set = MaskSet::read(path)?;
    ensure!(
        set.masks.len() == ds.entries.len(),
        "mask set holds {} masks for {} windows",
        set.masks.len(),
        ds.entries.len()
    );
    Ok(set.masks)
}

fn mask(a: MaskArgs, argv: &[String]) -> Result<()> {
    require(&[("dataset", Some(&a.dataset))])?;
    let ds = Dataset::read(&a.dataset)?;
    let masks = draw_masks(&ds, a.aggro, a.seed)?;
    let mean = masks.iter().map(masked_fraction).sum::<f64>() / masks.len().max(1) as f64;
    MaskSet::new(a.seed, a.aggro, masks).write(&a.out)?;
    write_json(a.out.join("summary.json"), &json!({ "seed": a.seed, "aggressiveness": a.aggro, "mean_masked_fraction": mean }))?;
    RunManifest::new("mask", argv, Some(a.seed), &a)?.write(&a.out)
}

fn train_gp(a: TrainArgs, argv: &[String]) -> Result<()> {
    require(&[("dataset", Some(&a.dataset)), ("config", a.config.as_deref())])?;
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.inducing {
        cfg.inducing = v;
    }
    if let Some(v) = a.aggro {
        cfg.train_aggressiveness = v;
    }
    check_aggro(cfg.train_aggressiveness)?;
    let ds = Dataset::read(&a.dataset)?;
    let train_w = ds.windows(Split::Train, false);
    let val_w = ds.windows(Split::Val, false);
    ensure!(!train_w.is_empty(), "dataset has no training windows");
    let (tr, va) = (refs(&train_w), refs(&val_w));

    let model = gp::init_model(&tr, &cfg)?;
    let (mut model, history) = gp::train(model, &tr, &va, &cfg)?;
    let sweep = if va.is_empty() {
        None
    } else {
        let masks = gp::validation_masks(&va, cfg.train_aggressiveness, cfg.seed);
        match gp::sweep_threshold(&mut model, &va, &masks) {
            Ok(s) => Some(s),
            Err(infill_core::Error::AllUndefined) => None,
            Err(e) => return Err(e.into()),
        }
    };
    create_out(&a.out)?;
    checkpoint::save(&model, &a.out)?;
    write_json(a.out.join("history.json"), &history)?;
    write_json(a.out.join("threshold.json"), &json!({ "threshold": model.threshold, "sweep": sweep }))?;
    RunManifest::new("train-gp", argv, Some(cfg.seed), &json!({ "args": &a, "train": &cfg }))?.write(&a.out)
}

enum Loaded {
    Gp(Box<SvgpcModel>),
    Copy(CopyInput),
    Constant(Constant),
}

impl Loaded {
    fn open(model: Option<&Path>, baseline: Option<&str>) -> Result<Self> {
        match (model, baseline) {
            (Some(dir), None) => Ok(Loaded::Gp(Box::new(checkpoint::load(dir)?))),
            (None, Some("copy-input")) => Ok(Loaded::Copy(CopyInput)),
            (None, Some(b)) => {
                let p = b
                    .strip_prefix("constant:")
                    .ok_or_else(|| anyhow!("unknown baseline {b:?}; expected copy-input or constant:P"))?;
                let p: f32 = p.parse().with_context(|| format!("baseline probability {p:?}"))?;
                ensure!((0.0..=1.0).contains(&p), "baseline probability {p} outside [0, 1]");
                Ok(Loaded::Constant(Constant(p)))
            }
            (None, None) => bail!("give --model or --baseline"),
            (Some(_), Some(_)) => bail!("--model and --baseline are exclusive"),
        }
    }

    fn with<R>(&self, f: impl FnOnce(&dyn InfillModel) -> Result<R>) -> Result<R> {
        match self {
            Loaded::Gp(m) => f(&m.predictor()?),
            Loaded::Copy(m) => f(m),
            Loaded::Constant(m) => f(m),
        }
    }
}

/// Overrides the decision threshold of another model.
struct AtThreshold<'a>(&'a dyn InfillModel, f64);

impl InfillModel for AtThreshold<'_> {
    fn name(&self) -> String {
        self.0.name()
    }

    fn predict(&self, input: &ModelInput) -> infill_core::Result<PredictionGrid> {
        self.0.predict(input)
    }

    fn threshold(&self) -> f64 {
        self.1
    }
}

fn predict(a: PredictArgs, argv: &[String]) -> Result<()> {
    require(&[
        ("dataset", Some(&a.dataset)),
        ("model", a.source.model.as_deref()),
        ("masks", a.masks.masks.as_deref()),
    ])?;
    let ds = Dataset::read(&a.dataset)?;
    let masks = load_masks(&ds, &a.masks)?;
    let loaded = Loaded::open(a.source.model.as_deref(), a.source.baseline.as_deref())?;
    let set = loaded.with(|m| {
        let grids = ds
            .split(a.split)
            .map(|(i, e)| Ok((i, m.predict(&ModelInput::new(&e.window, &masks[i])?)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionSet { model: m.name(), grids })
    })?;
    set.write(&a.out)?;
    RunManifest::new("predict", argv, Some(a.masks.seed), &a)?.write(&a.out)
}

#[derive(Serialize)]
struct EvalOutput {
    seed: u64,
    aggressiveness: f64,
    masks: Option<String>,
    report: infill_core::EvalReport,
}

fn eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    require(&[
        ("dataset", Some(&a.dataset)),
        ("preds", a.preds.as_deref()),
        ("model", a.model.as_deref()),
        ("masks", a.masks.masks.as_deref()),
    ])?;
    let ds = Dataset::read(&a.dataset)?;
    let masks = load_masks(&ds, &a.masks)?;
    let indices: Vec<usize> = ds.split(a.split).map(|(i, _)| i).collect();
    ensure!(!indices.is_empty(), "dataset has no {} windows", a.split.as_str());
    let windows: Vec<&ContextWindow> = indices.iter().map(|&i| &ds.entries[i].window).collect();
    let split_masks: Vec<Mask> = indices.iter().map(|&i| masks[i].clone()).collect();

    let report = match &a.preds {
        Some(dir) => {
            let set = PredictionSet::read(dir)?;
            let grids: HashMap<usize, &PredictionGrid> = set.grids.iter().map(|(i, g)| (*i, g)).collect();
            let mut scorer = Scorer::new(windows[0].minerals.channels, a.grid_t.unwrap_or(DEFAULT_THRESHOLD));
            for ((&i, w), m) in indices.iter().zip(&windows).zip(&split_masks) {
                let grid = grids.get(&i).ok_or_else(|| anyhow!("prediction set has no grid for window {i}"))?;
                scorer.add(i, grid, &w.minerals, &m.bits).with_context(|| format!("window {i}"))?;
            }
            scorer.finish(&set.model, SAMPLING_POLICY, a.split.as_str())
        }
        None => {
            let loaded = Loaded::open(a.model.as_deref(), a.baseline.as_deref())?;
            loaded.with(|m| {
                let t = a.grid_t.unwrap_or_else(|| m.threshold());
                Ok(evaluate(&AtThreshold(m, t), &windows, &split_masks, SAMPLING_POLICY, a.split.as_str())?)
            })?
        }
    };
    create_out(&a.out)?;
    let output = EvalOutput {
        seed: a.masks.seed,
        aggressiveness: a.masks.aggro,
        masks: a.masks.masks.as_ref().map(|p| p.display().to_string()),
        report,
    };
    write_json(a.out.join("report.json"), &output)?;
    RunManifest::new("eval", argv, Some(a.masks.seed), &a)?.write(&a.out)
}

#[derive(Serialize)]
struct SweepRow {
    aggressiveness: f64,
    mean_masked_fraction: f64,
    macro_dice: Option<f64>,
    macro_recall: Option<f64>,
    dice: Vec<Option<f64>>,
    bce: Option<f64>,
}

fn sweep_aggro(a: SweepArgs, argv: &[String]) -> Result<()> {
    require(&[("dataset", Some(&a.dataset)), ("model", a.source.model.as_deref())])?;
    ensure!(!a.grid.is_empty(), "empty aggressiveness grid");
    ensure!(a.draws > 0, "need at least one draw per window");
    a.grid.iter().try_for_each(|&v| check_aggro(v))?;
    let ds = Dataset::read(&a.dataset)?;
    let windows: Vec<&ContextWindow> = ds.split(a.split).map(|(_, e)| &e.window).collect();
    ensure!(!windows.is_empty(), "dataset has no {} windows", a.split.as_str());
    let loaded = Loaded::open(a.source.model.as_deref(), a.source.baseline.as_deref())?;
    let (name, threshold, rows) = loaded.with(|m| {
        let mut rows = Vec::with_capacity(a.grid.len());
        for &aggro in &a.grid {
            let mut rng = SplitMix64::substream(a.seed, &format!("aggro-{aggro}"));
            let mut scorer = Scorer::new(windows[0].minerals.channels, m.threshold());
            let mut fraction = 0.0;
            for draw in 0..a.draws {
                for (i, w) in windows.iter().enumerate() {
                    let mask = sample_mask(w.minerals.channels, w.side(), aggro, &mut rng);
                    fraction += masked_fraction(&mask);
                    let pred = m.predict(&ModelInput::new(w, &mask)?)?;
                    scorer.add(draw * windows.len() + i, &pred, &w.minerals, &mask.bits)?;
                }
            }
            let report = scorer.finish(&m.name(), SAMPLING_POLICY, a.split.as_str());
            rows.push(SweepRow {
                aggressiveness: aggro,
                mean_masked_fraction: fraction / (a.draws * windows.len()) as f64,
                macro_dice: report.macro_dice,
                macro_recall: report.macro_recall,
                dice: report.dice,
                bce: report.bce,
            });
        }
        Ok((m.name(), m.threshold(), rows))
    })?;
    create_out(&a.out)?;
    write_json(
        a.out.join("sweep.json"),
        &json!({
            "model": name,
            "seed": a.seed,
            "split": a.split.as_str(),
            "draws": a.draws,
            "threshold": threshold,
            "policy": SAMPLING_POLICY,
            "rows": rows,
        }),
    )?;
    RunManifest::new("sweep-aggro", argv, Some(a.seed), &a)?.write(&a.out)
}

fn mineral_names(layers: usize) -> Vec<String> {
    (0..layers).map(|i| Mineral::from_index(i).map_or_else(|| format!("layer{i}"), |m| m.name().to_string())).collect()
}

fn matrix(a: MatrixArgs, argv: &[String]) -> Result<()> {
    require(&[("dataset", Some(&a.dataset)), ("model", a.model.as_deref())])?;
    let ds = Dataset::read(&a.dataset)?;
    let windows: Vec<&ContextWindow> = ds.split(a.split).map(|(_, e)| &e.window).collect();
    ensure!(!windows.is_empty(), "dataset has no {} windows", a.split.as_str());
    let names = mineral_names(windows[0].minerals.channels);
    let body = match a.kind {
        MatrixKind::Cooccurrence => json!({ "cooccurrence": cooccurrence(&windows) }),
        MatrixKind::Progressive => {
            let loaded = Loaded::open(a.model.as_deref(), a.baseline.as_deref())?;
            let order = commonality_order(&windows);
            loaded.with(|m| Ok(json!({ "model": m.name(), "progressive": progressive_unmask_eval(m, &windows, &order)? })))?
        }
        MatrixKind::Influence => {
            let loaded = Loaded::open(a.model.as_deref(), a.baseline.as_deref())?;
            loaded.with(|m| Ok(json!({ "model": m.name(), "influence": influence_matrix(m, &windows)? })))?
        }
    };
    create_out(&a.out)?;
    let mut report = json!({ "kind": a.kind, "split": a.split.as_str(), "minerals": names });
    report.as_object_mut().unwrap().extend(body.as_object().unwrap().clone());
    write_json(a.out.join("matrix.json"), &report)?;
    RunManifest::new("matrix", argv, None, &a)?.write(&a.out)
}

fn read_probs(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let t = container::read_file(path).with_context(|| format!("reading {}", path.display()))?;
    let values = match t.data {
        TensorData::F32(v) => v.into_iter().map(f64::from).collect(),
        TensorData::F64(v) => v,
        _ => bail!("{} must hold f32 or f64 values", path.display()),
    };
    Ok((t.dims, values))
}

fn srmm(a: SrmmArgs, argv: &[String]) -> Result<()> {
    require(&[("p-d", Some(&a.p_d)), ("p-phi", Some(&a.p_phi)), ("p-r", Some(&a.p_r)), ("z", Some(&a.z))])?;
    let (d_dims, p_d) = read_probs(&a.p_d)?;
    let (phi_dims, p_phi) = read_probs(&a.p_phi)?;
    let (r_dims, p_r) = read_probs(&a.p_r)?;
    let z = container::read_file(&a.z).with_context(|| format!("reading {}", a.z.display()))?;
    let z_dims = z.dims.clone();
    let z = z.into_u8().ok_or_else(|| anyhow!("{} must hold u8 values", a.z.display()))?;
    ensure!(d_dims == r_dims, "p-d {d_dims:?} and p-r {r_dims:?} differ in shape");
    ensure!(phi_dims == z_dims, "p-phi {phi_dims:?} and z {z_dims:?} differ in shape");
    let loss = srmm_loss(&p_d, &p_phi, &p_r, &z, a.grid_t, a.beta)?;
    create_out(&a.out)?;
    write_json(a.out.join("loss.json"), &json!({ "threshold": a.grid_t, "beta": a.beta, "loss": loss }))?;
    RunManifest::new("srmm-loss", argv, None, &a)?.write(&a.out)
}

fn map(a: MapArgs, argv: &[String]) -> Result<()> {
    require(&[("dataset", Some(&a.dataset)), ("preds", a.preds.as_deref()), ("model", a.model.as_deref())])?;
    let ds = Dataset::read(&a.dataset)?;
    let cells: Vec<(usize, (usize, usize), &ContextWindow)> =
        ds.entries.iter().enumerate().filter_map(|(i, e)| e.lattice.map(|l| (i, l, &e.window))).collect();
    ensure!(!cells.is_empty(), "dataset has no lattice windows; build it with --lattice-stride-mi");
    let resolution = cells[0].2.spec.resolution_mi;

    let (grids, threshold) = match &a.preds {
        Some(dir) => {
            let mut set: HashMap<usize, PredictionGrid> = PredictionSet::read(dir)?.grids.into_iter().collect();
            let grids = cells
                .iter()
                .map(|(i, (c, r), _)| {
                    let g = set.remove(i).ok_or_else(|| anyhow!("prediction set has no grid for window {i}"))?;
                    Ok((*c, *r, g))
                })
                .collect::<Result<Vec<_>>>()?;
            (grids, a.grid_t.unwrap_or(DEFAULT_THRESHOLD))
        }
        None => {
            let loaded = Loaded::open(a.model.as_deref(), a.baseline.as_deref())?;
            loaded.with(|m| {
                let grids = cells
                    .iter()
                    .map(|(_, (c, r), w)| {
                        let mask = Mask::empty(w.minerals.channels, w.side());
                        Ok((*c, *r, m.predict(&ModelInput::new(w, &mask)?)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((grids, a.grid_t.unwrap_or_else(|| m.threshold())))
            })?
        }
    };
    let binned = map_export(&grids, resolution, a.bin_mi, threshold)?;
    create_out(&a.out)?;
    let mut data = binned.any.clone();
    binned.per_mineral.iter().for_each(|m| data.extend_from_slice(m));
    let tensor = infill_core::ingest::Tensor::new(
        vec![1 + binned.per_mineral.len(), binned.height, binned.width],
        TensorData::U8(data),
    )?;
    container::write_file(a.out.join("map.m3t"), &tensor)?;
    let write_text = |name: String, text: String| {
        let path = a.out.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write_text("map.txt".into(), binned.to_text(None))?;
    let names = mineral_names(binned.per_mineral.len());
    for (l, name) in names.iter().enumerate() {
        write_text(format!("map_{name}.txt"), binned.to_text(Some(l)))?;
    }
    let per_mineral: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .zip(&binned.per_mineral)
        .map(|(n, m)| (n.clone(), json!(m.iter().filter(|&&v| v != 0).count())))
        .collect();
    write_json(
        a.out.join("map.json"),
        &json!({
            "width": binned.width,
            "height": binned.height,
            "bin_mi": binned.bin_mi,
            "threshold": threshold,
            "positive_bins": binned.positive_bins(),
            "positive_bins_per_mineral": per_mineral,
            "layers": std::iter::once("any".to_string()).chain(names).collect::<Vec<_>>(),
        }),
    )?;
    RunManifest::new("map", argv, None, &a)?.write(&a.out)
}

fn replay(a: ReplayArgs) -> Result<()> {
    require(&[("manifest", Some(&a.manifest))])?;
    let manifest = RunManifest::read(&a.manifest)?;
    let argv = manifest.replay_argv(a.out.as_deref())?;
    let cli = <Cli as clap::Parser>::try_parse_from(&argv).map_err(|e| anyhow!("recorded arguments do not parse: {e}"))?;
    run(cli.command, &argv)
}
