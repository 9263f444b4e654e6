//! ARD radial basis function kernel.

use nalgebra::{DMatrix, DVector};

/// `exp(-½ Σ_d (x_d - y_d)² / θ_d²)`.
pub fn rbf(x: &[f64], y: &[f64], lengthscales: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len(), lengthscales.len());
    let q: f64 = x.iter().zip(y).zip(lengthscales).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
    (-0.5 * q).exp()
}

/// Unit-variance correlation matrix between the rows of `a` and `b`.
pub fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>, lengthscales: &DVector<f64>) -> DMatrix<f64> {
    let inv = lengthscales.map(|l| 1.0 / l);
    let scale = |m: &DMatrix<f64>| {
        let mut s = m.clone();
        for (mut col, &w) in s.column_iter_mut().zip(inv.iter()) {
            col *= w;
        }
        s
    };
    let (sa, sb) = (scale(a), scale(b));
    let na: Vec<f64> = sa.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = sb.row_iter().map(|r| r.norm_squared()).collect();
    let mut k = &sa * sb.transpose();
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let d2 = (na[i] + nb[j] - 2.0 * k[(i, j)]).max(0.0);
            k[(i, j)] = (-0.5 * d2).exp();
        }
    }
    k
}

/// Symmetric correlation matrix of the rows of `z`, computed pairwise so the
/// diagonal is exactly one.
pub fn gram(z: &DMatrix<f64>, lengthscales: &DVector<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let mut q = 0.0;
            for d in 0..z.ncols() {
                let t = (z[(i, d)] - z[(j, d)]) / lengthscales[d];
                q += t * t;
            }
            let v = (-0.5 * q).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rng::SplitMix64;

    #[test]
    fn closed_forms() {
        assert_eq!(rbf(&[0.3, -2.0], &[0.3, -2.0], &[0.5, 2.0]), 1.0);
        assert!((rbf(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0]) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn lengthscale_reparameterization() {
        // Doubling both the inputs and the lengthscales leaves the value fixed.
        let mut rng = SplitMix64::new(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let l: Vec<f64> = (0..4).map(|_| rng.uniform(0.2, 4.0)).collect();
            let d = |v: &[f64]| v.iter().map(|a| 2.0 * a).collect::<Vec<_>>();
            let a = rbf(&x, &y, &l);
            let b = rbf(&d(&x), &d(&y), &d(&l));
            assert!((a - b).abs() < 1e-14);
            assert!((a - rbf(&y, &x, &l)).abs() == 0.0);
            assert!(a > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn matrices_agree_with_scalar() {
        let mut rng = SplitMix64::new(6);
        let a = DMatrix::from_fn(5, 3, |_, _| rng.uniform(-1.0, 1.0));
        let b = DMatrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let l = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        let k = cross(&a, &b, &l);
        let g = gram(&b, &l);
        let row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<_>>();
        for i in 0..5 {
            for j in 0..4 {
                assert!((k[(i, j)] - rbf(&row(&a, i), &row(&b, j), l.as_slice())).abs() < 1e-12);
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert!((g[(i, j)] - rbf(&row(&b, i), &row(&b, j), l.as_slice())).abs() < 1e-15);
            }
        }
    }
}
