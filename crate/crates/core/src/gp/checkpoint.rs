//! Model checkpoints: a JSON manifest plus one `.m3t` tensor per parameter
//! block.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::model::{FeatureLayout, SvgpcModel, TaskParams};
use crate::ingest::container::{read_file, write_file, DType, Tensor, TensorData};
use crate::ingest::dataset::{read_json, write_json};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub format_version: u32,
    pub layout: FeatureLayout,
    pub tasks: usize,
    pub inducing: usize,
    pub threshold: f64,
    pub jitter: f64,
    /// Block name to relative file.
    pub tensors: Vec<(String, String)>,
}

fn f64_tensor(dims: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(dims, TensorData::F64(data)).expect("consistent block shape")
}

pub fn save(model: &SvgpcModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (k, e, c) = (model.num_tasks(), model.num_inducing(), model.layout.dim());
    let collect = |f: &dyn Fn(&TaskParams) -> Vec<f64>| model.tasks.iter().flat_map(f).collect::<Vec<f64>>();
    let row_major = |m: &DMatrix<f64>| m.transpose().iter().copied().collect::<Vec<_>>();
    let blocks = vec![
        ("log_lengthscales", f64_tensor(vec![k, c], collect(&|t| t.log_lengthscales.iter().copied().collect()))),
        ("log_scales", f64_tensor(vec![k], collect(&|t| vec![t.log_scale]))),
        ("const_means", f64_tensor(vec![k], collect(&|t| vec![t.mean]))),
        ("q_mean", f64_tensor(vec![k, e], collect(&|t| t.q_mean.iter().copied().collect()))),
        ("q_chol", f64_tensor(vec![k, e, e], collect(&|t| row_major(&t.q_chol)))),
        ("inducing", f64_tensor(vec![e, c], row_major(&model.inducing))),
    ];
    let mut tensors = Vec::new();
    for (name, t) in blocks {
        let file = format!("{name}.m3t");
        write_file(dir.join(&file), &t)?;
        tensors.push((name.to_string(), file));
    }
    let manifest = CheckpointManifest {
        kind: "svgpc".into(),
        format_version: 1,
        layout: model.layout,
        tasks: k,
        inducing: e,
        threshold: model.threshold,
        jitter: model.jitter,
        tensors,
    };
    write_json(dir.join(CHECKPOINT_FILE), &manifest)
}

pub fn load(dir: impl AsRef<Path>) -> Result<SvgpcModel> {
    let dir = dir.as_ref();
    let m: CheckpointManifest = read_json(dir.join(CHECKPOINT_FILE))?;
    let (k, e, c) = (m.tasks, m.inducing, m.layout.dim());
    let block = |name: &str, dims: Vec<usize>| -> Result<Vec<f64>> {
        let file = m
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::Manifest(format!("checkpoint lacks block {name}")))?;
        let t = read_file(dir.join(file))?;
        t.expect(&dims, DType::F64)?;
        t.into_f64().ok_or_else(|| Error::Manifest(format!("block {name} is not f64")))
    };
    let ls = block("log_lengthscales", vec![k, c])?;
    let scales = block("log_scales", vec![k])?;
    let means = block("const_means", vec![k])?;
    let q_mean = block("q_mean", vec![k, e])?;
    let q_chol = block("q_chol", vec![k, e, e])?;
    let inducing = block("inducing", vec![e, c])?;
    let tasks = (0..k)
        .map(|t| TaskParams {
            log_lengthscales: DVector::from_column_slice(&ls[t * c..(t + 1) * c]),
            log_scale: scales[t],
            mean: means[t],
            q_mean: DVector::from_column_slice(&q_mean[t * e..(t + 1) * e]),
            q_chol: DMatrix::from_row_slice(e, e, &q_chol[t * e * e..(t + 1) * e * e]),
        })
        .collect();
    Ok(SvgpcModel {
        layout: m.layout,
        tasks,
        inducing: DMatrix::from_row_slice(e, c, &inducing),
        threshold: m.threshold,
        jitter: m.jitter,
    })
}
