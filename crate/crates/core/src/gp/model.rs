//! Sparse variational multitask GP classifier with independent tasks.
//!
//! Task `k` has latent `f_k = μ_k + g_k` with `g_k ~ GP(0, a_k² κ_k)`,
//! inducing values `u_k = g_k(Z)` at inducing inputs `Z` shared by all tasks,
//! and `q(u_k) = N(m_k, L_k L_kᵀ)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::kernel;
use crate::gp::quadrature::{expected_log_bernoulli_grad, expected_sigmoid, GaussHermite};
use crate::grid::Raster;
use crate::metrics::{InfillModel, ModelInput, PredictionGrid};

pub const DEFAULT_JITTER: f64 = 1e-6;
const JITTER_ESCALATIONS: usize = 3;

/// Column layout of pixel features: mineral channels, covariates, lon, lat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub minerals: usize,
    pub covariates: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        self.minerals + self.covariates + 2
    }

    pub fn coord_offset(&self) -> usize {
        self.minerals + self.covariates
    }

    /// One row per pixel in row-major order. Mineral channels carry the
    /// masked values `{-1, 0, 1}`.
    pub fn features(&self, input: &ModelInput) -> Result<DMatrix<f64>> {
        let side = input.spec.side_px;
        let n = side * side;
        if input.minerals.channels != self.minerals || input.minerals.side != side {
            return Err(Error::ShapeMismatch {
                expected: vec![self.minerals, side, side],
                found: input.minerals.shape().to_vec(),
            });
        }
        let cov_channels = input.covariates.as_ref().map_or(0, |c| c.channels);
        if cov_channels != self.covariates {
            return Err(Error::ShapeMismatch { expected: vec![self.covariates], found: vec![cov_channels] });
        }
        let coords = crate::grid::window_pixel_coords(&input.spec);
        let mut x = DMatrix::zeros(n, self.dim());
        for l in 0..self.minerals {
            for (px, &v) in input.minerals.layer(l).iter().enumerate() {
                x[(px, l)] = v as f64;
            }
        }
        if let Some(cov) = &input.covariates {
            for c in 0..self.covariates {
                for (px, &v) in cov.layer(c).iter().enumerate() {
                    x[(px, self.minerals + c)] = v as f64;
                }
            }
        }
        let off = self.coord_offset();
        for (px, p) in coords.iter().enumerate() {
            x[(px, off)] = p.lon;
            x[(px, off + 1)] = p.lat;
        }
        Ok(x)
    }
}

/// Targets `N × K` from binary layers.
pub fn targets(truth: &Raster<u8>) -> DMatrix<f64> {
    let n = truth.side * truth.side;
    DMatrix::from_fn(n, truth.channels, |px, k| truth.data[k * n + px] as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    pub log_lengthscales: DVector<f64>,
    pub log_scale: f64,
    pub mean: f64,
    pub q_mean: DVector<f64>,
    /// Lower triangular with positive diagonal.
    pub q_chol: DMatrix<f64>,
}

impl TaskParams {
    pub fn lengthscales(&self) -> DVector<f64> {
        self.log_lengthscales.map(f64::exp)
    }

    pub fn scale2(&self) -> f64 {
        (2.0 * self.log_scale).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgpcModel {
    pub layout: FeatureLayout,
    pub tasks: Vec<TaskParams>,
    /// `E × C`, shared by every task.
    pub inducing: DMatrix<f64>,
    pub threshold: f64,
    pub jitter: f64,
}

/// Factorized prior covariance of one task's inducing values.
#[derive(Debug, Clone)]
pub struct TaskPrior {
    /// `a² R` without jitter.
    pub kernel: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub inverse: DMatrix<f64>,
    pub jitter: f64,
}

/// Cholesky of `k + jitter·I`, escalating the jitter tenfold up to three
/// times.
pub fn factor_with_jitter(k: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut j = jitter;
    for attempt in 0..=JITTER_ESCALATIONS {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += j;
        }
        if let Some(c) = kj.cholesky() {
            return Ok((c, j));
        }
        if attempt < JITTER_ESCALATIONS {
            j *= 10.0;
        }
    }
    Err(Error::Factorization { jitter: j })
}

/// `KL(N(m, L Lᵀ) || N(0, K))` given the Cholesky factor of `K`.
pub fn kl_gaussians(q_mean: &DVector<f64>, q_chol: &DMatrix<f64>, k_chol: &Cholesky<f64, Dyn>) -> f64 {
    let lk = k_chol.l();
    let e = q_mean.len() as f64;
    let a = lk.solve_lower_triangular(q_chol).expect("nonsingular factor");
    let b = lk.solve_lower_triangular(q_mean).expect("nonsingular factor");
    let logdet_k: f64 = 2.0 * lk.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet_s: f64 = 2.0 * q_chol.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    0.5 * (a.norm_squared() + b.norm_squared() - e + logdet_k - logdet_s)
}

/// Predictive means and variances, `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
    /// Variances that came out negative and were clamped to zero.
    pub clamped: usize,
}

/// ELBO and its two components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    /// Scaled expected log likelihood.
    pub ell: f64,
    pub kl: f64,
}

/// Gradient of the ELBO, shaped like the model. `q_chol` diagonal entries
/// hold derivatives with respect to the log of the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub tasks: Vec<TaskParams>,
    pub inducing: DMatrix<f64>,
}

pub struct Batch {
    /// `N × C` features.
    pub x: DMatrix<f64>,
    /// `N × K` binary targets.
    pub y: DMatrix<f64>,
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |i, _| m.row(i).sum())
}

fn col_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum())
}

/// Sum over rows of the elementwise product.
fn rowwise_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[i] += a[(i, j)] * b[(i, j)];
        }
    }
    out
}

impl SvgpcModel {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    /// Model with `q(u) = p(u)` for every task.
    pub fn from_prior(
        layout: FeatureLayout,
        inducing: DMatrix<f64>,
        lengthscales: DVector<f64>,
        means: &[f64],
        jitter: f64,
    ) -> Result<Self> {
        if inducing.ncols() != layout.dim() || lengthscales.len() != layout.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![layout.dim()],
                found: vec![inducing.ncols(), lengthscales.len()],
            });
        }
        let e = inducing.nrows();
        let r = kernel::gram(&inducing, &lengthscales);
        let (chol, _) = factor_with_jitter(&r, jitter)?;
        let tasks = means
            .iter()
            .map(|&mean| TaskParams {
                log_lengthscales: lengthscales.map(f64::ln),
                log_scale: 0.0,
                mean,
                q_mean: DVector::zeros(e),
                q_chol: chol.l(),
            })
            .collect();
        Ok(Self { layout, tasks, inducing, threshold: crate::metrics::DEFAULT_THRESHOLD, jitter })
    }

    pub fn task_prior(&self, k: usize) -> Result<TaskPrior> {
        let t = &self.tasks[k];
        let kernel = kernel::gram(&self.inducing, &t.lengthscales()) * t.scale2();
        let (chol, jitter) = factor_with_jitter(&kernel, self.jitter)?;
        let inverse = chol.inverse();
        Ok(TaskPrior { kernel, chol, inverse, jitter })
    }

    pub fn priors(&self) -> Result<Vec<TaskPrior>> {
        (0..self.num_tasks()).map(|k| self.task_prior(k)).collect()
    }

    pub fn kl(&self, priors: &[TaskPrior]) -> f64 {
        self.tasks.iter().zip(priors).map(|(t, p)| kl_gaussians(&t.q_mean, &t.q_chol, &p.chol)).sum()
    }

    pub fn marginals(&self, x: &DMatrix<f64>) -> Result<Marginals> {
        self.marginals_with(&self.priors()?, x)
    }

    /// Marginals using precomputed priors.
    pub fn marginals_with(&self, priors: &[TaskPrior], x: &DMatrix<f64>) -> Result<Marginals> {
        let n = x.nrows();
        let mut mean = DMatrix::zeros(n, self.num_tasks());
        let mut var = DMatrix::zeros(n, self.num_tasks());
        let mut clamped = 0;
        for (k, (t, p)) in self.tasks.iter().zip(priors).enumerate() {
            let kxz = kernel::cross(x, &self.inducing, &t.lengthscales()) * t.scale2();
            let a = &kxz * &p.inverse;
            let f = &a * &t.q_mean;
            let al = &a * &t.q_chol;
            let v = rowwise_dot(&al, &al) - rowwise_dot(&a, &kxz);
            for i in 0..n {
                mean[(i, k)] = t.mean + f[i];
                let vi = t.scale2() + v[i];
                if vi < 0.0 {
                    clamped += 1;
                }
                var[(i, k)] = vi.max(0.0);
            }
        }
        Ok(Marginals { mean, var, clamped })
    }

    pub fn elbo(&self, batch: &Batch, n_total: f64, rule: &GaussHermite) -> Result<ElboParts> {
        Ok(self.elbo_impl(batch, n_total, None, rule, false)?.0)
    }

    pub fn elbo_grad(&self, batch: &Batch, n_total: f64, rule: &GaussHermite) -> Result<(ElboParts, ModelGrad)> {
        let (parts, grad) = self.elbo_impl(batch, n_total, None, rule, true)?;
        Ok((parts, grad.unwrap()))
    }

    /// As [`Self::elbo_grad`] with per-task likelihood weights.
    pub fn elbo_grad_weighted(
        &self,
        batch: &Batch,
        n_total: f64,
        weights: &[f64],
        rule: &GaussHermite,
    ) -> Result<(ElboParts, ModelGrad)> {
        let (parts, grad) = self.elbo_impl(batch, n_total, Some(weights), rule, true)?;
        Ok((parts, grad.unwrap()))
    }

    fn elbo_impl(
        &self,
        batch: &Batch,
        n_total: f64,
        weights: Option<&[f64]>,
        rule: &GaussHermite,
        want_grad: bool,
    ) -> Result<(ElboParts, Option<ModelGrad>)> {
        let x = &batch.x;
        let n = x.nrows();
        if n == 0 || batch.y.nrows() != n || batch.y.ncols() != self.num_tasks() || x.ncols() != self.layout.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.num_tasks(), self.layout.dim()],
                found: vec![batch.y.nrows(), batch.y.ncols(), x.ncols()],
            });
        }
        let z = &self.inducing;
        let (e, c) = (z.nrows(), z.ncols());
        let base_scale = n_total / n as f64;
        let mut ell_total = 0.0;
        let mut kl_total = 0.0;
        let mut grads = Vec::new();
        let mut grad_z = DMatrix::zeros(e, c);

        for (k, t) in self.tasks.iter().enumerate() {
            let scale = base_scale * weights.map_or(1.0, |w| w[k]);
            let theta = t.lengthscales();
            let a2 = t.scale2();
            let prior = self.task_prior(k)?;
            let kinv = &prior.inverse;
            let kxz = kernel::cross(x, z, &theta) * a2;
            let a = &kxz * kinv;
            let f = &a * &t.q_mean;
            let al = &a * &t.q_chol;
            let v = rowwise_dot(&al, &al) - rowwise_dot(&a, &kxz);

            let mut gf = DVector::zeros(n);
            let mut gv = DVector::zeros(n);
            for i in 0..n {
                let vi = a2 + v[i];
                let (val, dm, dv) = expected_log_bernoulli_grad(rule, t.mean + f[i], vi.max(0.0), batch.y[(i, k)] > 0.5);
                ell_total += scale * val;
                gf[i] = scale * dm;
                gv[i] = if vi < 0.0 { 0.0 } else { scale * dv };
            }
            kl_total += kl_gaussians(&t.q_mean, &t.q_chol, &prior.chol);

            if !want_grad {
                continue;
            }
            let l = &t.q_chol;
            let s = l * l.transpose();
            let kinv_m = kinv * &t.q_mean;

            // Likelihood through A, Kxz and S.
            let mut gv_a = a.clone();
            let mut gv_kxz = kxz.clone();
            for i in 0..n {
                gv_a.row_mut(i).scale_mut(gv[i]);
                gv_kxz.row_mut(i).scale_mut(gv[i]);
            }
            let g_a = &gf * t.q_mean.transpose() - &gv_kxz + (&gv_a * &s) * 2.0;
            let g_kxz = &g_a * kinv - &gv_a;
            let kinv_s_kinv = kinv * &s * kinv;
            let g_kzz = -(a.transpose() * &g_a * kinv)
                - (kinv - &kinv_s_kinv - &kinv_m * kinv_m.transpose()) * 0.5;
            let d_s = a.transpose() * &gv_a;
            let l_inv_t = l
                .solve_lower_triangular(&DMatrix::identity(e, e))
                .ok_or_else(|| Error::Model("singular variational factor".into()))?
                .transpose();
            let mut g_l = (&d_s * l) * 2.0 - (kinv * l - l_inv_t);
            for i in 0..e {
                for j in 0..e {
                    if j > i {
                        g_l[(i, j)] = 0.0;
                    } else if i == j {
                        g_l[(i, j)] *= l[(i, i)];
                    }
                }
            }
            let g_m = a.transpose() * &gf - &kinv_m;
            let g_mean = gf.sum();

            // Kernel hyperparameters and inducing inputs.
            let w_xz = g_kxz.component_mul(&kxz);
            let w_zz = g_kzz.component_mul(&prior.kernel);
            let g_log_scale = 2.0 * (w_xz.sum() + w_zz.sum() + a2 * gv.sum());
            let wx = w_xz.transpose() * x; // E × C
            let wxr = row_sums(&w_xz);
            let wxc = col_sums(&w_xz);
            let wz = &w_zz * z;
            let wzr = row_sums(&w_zz);
            let wzc = col_sums(&w_zz);
            let w_sym = &w_zz + w_zz.transpose();
            let wsz = &w_sym * z;
            let wsr = row_sums(&w_sym);
            let mut g_logl = DVector::zeros(c);
            for d in 0..c {
                let inv2 = 1.0 / (theta[d] * theta[d]);
                let mut q = 0.0;
                for i in 0..n {
                    q += wxr[i] * x[(i, d)] * x[(i, d)];
                }
                for j in 0..e {
                    let zd = z[(j, d)];
                    q += wxc[j] * zd * zd - 2.0 * wx[(j, d)] * zd;
                    q += (wzr[j] + wzc[j]) * zd * zd - 2.0 * wz[(j, d)] * zd;
                    grad_z[(j, d)] += (wx[(j, d)] - wxc[j] * zd) * inv2 - (wsr[j] * zd - wsz[(j, d)]) * inv2;
                }
                g_logl[d] = q * inv2;
            }
            grads.push(TaskParams {
                log_lengthscales: g_logl,
                log_scale: g_log_scale,
                mean: g_mean,
                q_mean: g_m,
                q_chol: g_l,
            });
        }
        let parts = ElboParts { elbo: ell_total - kl_total, ell: ell_total, kl: kl_total };
        Ok((parts, want_grad.then_some(ModelGrad { tasks: grads, inducing: grad_z })))
    }

    /// Number of scalars in [`Self::to_flat`].
    pub fn flat_len(&self) -> usize {
        let (e, c) = (self.num_inducing(), self.layout.dim());
        self.num_tasks() * (c + 2 + e + e * (e + 1) / 2) + e * c
    }

    /// Unconstrained parameter vector; the variational factor's diagonal is
    /// stored as logs.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for t in &self.tasks {
            out.extend(t.log_lengthscales.iter());
            out.push(t.log_scale);
            out.push(t.mean);
            out.extend(t.q_mean.iter());
            let e = t.q_mean.len();
            for i in 0..e {
                for j in 0..i {
                    out.push(t.q_chol[(i, j)]);
                }
                out.push(t.q_chol[(i, i)].ln());
            }
        }
        out.extend(self.inducing.transpose().iter());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flat_len(), "flat parameter length");
        let (e, c) = (self.num_inducing(), self.layout.dim());
        let mut it = flat.iter().copied();
        for t in &mut self.tasks {
            t.log_lengthscales.iter_mut().for_each(|v| *v = it.next().unwrap());
            t.log_scale = it.next().unwrap();
            t.mean = it.next().unwrap();
            t.q_mean.iter_mut().for_each(|v| *v = it.next().unwrap());
            for i in 0..e {
                for j in 0..i {
                    t.q_chol[(i, j)] = it.next().unwrap();
                }
                t.q_chol[(i, i)] = it.next().unwrap().exp();
            }
        }
        for i in 0..e {
            for j in 0..c {
                self.inducing[(i, j)] = it.next().unwrap();
            }
        }
    }

    /// Precomputes everything prediction needs.
    pub fn predictor(&self) -> Result<GpPredictor<'_>> {
        Ok(GpPredictor { model: self, priors: self.priors()?, rule: GaussHermite::default() })
    }
}

impl ModelGrad {
    /// Same order as [`SvgpcModel::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.tasks {
            out.extend(t.log_lengthscales.iter());
            out.push(t.log_scale);
            out.push(t.mean);
            out.extend(t.q_mean.iter());
            let e = t.q_mean.len();
            for i in 0..e {
                for j in 0..=i {
                    out.push(t.q_chol[(i, j)]);
                }
            }
        }
        out.extend(self.inducing.transpose().iter());
        out
    }
}

/// [`SvgpcModel`] with factorized priors, ready to score windows.
pub struct GpPredictor<'a> {
    model: &'a SvgpcModel,
    priors: Vec<TaskPrior>,
    rule: GaussHermite,
}

impl GpPredictor<'_> {
    pub fn marginals(&self, x: &DMatrix<f64>) -> Result<Marginals> {
        self.model.marginals_with(&self.priors, x)
    }

    pub fn probabilities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.marginals(x)?;
        Ok(DMatrix::from_fn(m.mean.nrows(), m.mean.ncols(), |i, k| {
            expected_sigmoid(&self.rule, m.mean[(i, k)], m.var[(i, k)])
        }))
    }
}

impl InfillModel for GpPredictor<'_> {
    fn name(&self) -> String {
        "svgpc".into()
    }

    fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
        let x = self.model.layout.features(input)?;
        let p = self.probabilities(&x)?;
        let side = input.spec.side_px;
        let n = side * side;
        let mut probs = Raster::zeros(self.model.num_tasks(), side);
        for k in 0..self.model.num_tasks() {
            for px in 0..n {
                probs.data[k * n + px] = p[(px, k)] as f32;
            }
        }
        Ok(PredictionGrid { probs })
    }

    fn threshold(&self) -> f64 {
        self.model.threshold
    }
}
