//! Composite discovery/masking/recovery loss evaluator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::bce;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrmmLoss {
    pub total: f64,
    pub m3: f64,
    pub phi: f64,
}

/// `L = BCE(p_r, 1[p_d > T]) + beta * BCE(p_phi, z)`.
pub fn srmm_loss(p_d: &[f64], p_phi: &[f64], p_r: &[f64], z: &[u8], threshold: f64, beta: f64) -> Result<SrmmLoss> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta {beta} must be non-negative")));
    }
    if p_d.len() != p_r.len() {
        return Err(Error::ShapeMismatch { expected: vec![p_d.len()], found: vec![p_r.len()] });
    }
    let target: Vec<u8> = p_d.iter().map(|&p| (p > threshold) as u8).collect();
    let m3 = bce(p_r, &target)?;
    let phi = bce(p_phi, z)?;
    Ok(SrmmLoss { total: m3 + beta * phi, m3, phi })
}
