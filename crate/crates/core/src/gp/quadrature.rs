//! Gauss-Hermite rules and the Bernoulli-sigmoid expectations built on them.

use std::f64::consts::PI;

/// Default node count.
pub const DEFAULT_NODES: usize = 20;

/// Rule for `∫ e^{-x²} g(x) dx ≈ Σ w_i g(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        Self { nodes: x, weights: w }
    }

    /// `E_{f~N(m, v)}[g(f)]`.
    pub fn expect(&self, m: f64, v: f64, g: impl Fn(f64) -> f64) -> f64 {
        let s = (2.0 * v.max(0.0)).sqrt();
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(m + s * x)).sum::<f64>() / PI.sqrt()
    }
}

impl Default for GaussHermite {
    fn default() -> Self {
        Self::new(DEFAULT_NODES)
    }
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log σ(u)` without overflow.
pub fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

/// `E_{f~N(m,v)}[log Bern(y | σ(f))]`.
pub fn expected_log_bernoulli(rule: &GaussHermite, m: f64, v: f64, y: bool) -> f64 {
    let s = if y { 1.0 } else { -1.0 };
    rule.expect(m, v, |f| log_sigmoid(s * f))
}

/// `(σ(u), σ(-u), log σ(u))` from a single exponential.
#[inline]
fn sigmoid_parts(u: f64) -> (f64, f64, f64) {
    let e = (-u.abs()).exp();
    let r = 1.0 / (1.0 + e);
    let l = e.ln_1p();
    if u >= 0.0 {
        (r, e * r, -l)
    } else {
        (e * r, r, u - l)
    }
}

/// Value and partial derivatives with respect to `m` and `v` of
/// [`expected_log_bernoulli`]'s quadrature sum.
pub fn expected_log_bernoulli_grad(rule: &GaussHermite, m: f64, v: f64, y: bool) -> (f64, f64, f64) {
    let s = if y { 1.0 } else { -1.0 };
    let v = v.max(0.0);
    let root = (2.0 * v).sqrt();
    let small = v <= 1e-12;
    let (mut val, mut dm, mut dv) = (0.0, 0.0, 0.0);
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let u = s * (m + root * x);
        let (sp, sn, ls) = sigmoid_parts(u);
        val += w * ls;
        dm += w * s * sn;
        if small {
            // At v = 0 the chain through sqrt(2v) is singular; the Gaussian
            // identity dE[g]/dv = E[g'']/2 gives the limit.
            dv -= 0.5 * w * sp * sn;
        } else {
            dv += w * s * sn * x / root;
        }
    }
    let norm = PI.sqrt();
    (val / norm, dm / norm, dv / norm)
}

/// `E_{f~N(m,v)}[σ(f)]`.
pub fn expected_sigmoid(rule: &GaussHermite, m: f64, v: f64) -> f64 {
    rule.expect(m, v, sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rng::SplitMix64;

    #[test]
    fn rule_moments() {
        let r = GaussHermite::new(20);
        let sum: f64 = r.weights.iter().sum();
        assert!((sum - PI.sqrt()).abs() < 1e-13);
        let second: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
        assert!((second - PI.sqrt() / 2.0).abs() < 1e-12);
        // E[x^4] under N(0,1) is 3.
        let fourth = r.expect(0.0, 1.0, |f| f.powi(4));
        assert!((fourth - 3.0).abs() < 1e-10);
        assert!(r.nodes.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn odd_rule() {
        let r = GaussHermite::new(5);
        assert_eq!(r.nodes[2], 0.0);
        assert!((r.expect(1.0, 4.0, |f| f * f) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gaussian() {
        let r = GaussHermite::default();
        assert!((expected_log_bernoulli(&r, 0.0, 0.0, true) - 0.5f64.ln()).abs() < 1e-14);
        for m in [-3.0, -0.5, 0.7, 4.0] {
            assert!((expected_log_bernoulli(&r, m, 0.0, false) - log_sigmoid(-m)).abs() < 1e-14);
        }
        assert!((expected_sigmoid(&r, 0.0, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_agreement() {
        let r = GaussHermite::default();
        let mut rng = SplitMix64::new(17);
        let n = 1_000_000;
        let (mut ll, mut p) = (0.0, 0.0);
        for _ in 0..n / 2 {
            let (a, b) = rng.normal_pair();
            for z in [a, b] {
                ll += log_sigmoid(1.0 + z);
                p += sigmoid(1.0 + z);
            }
        }
        assert!((expected_log_bernoulli(&r, 1.0, 1.0, true) - ll / n as f64).abs() < 1e-3);
        assert!((expected_sigmoid(&r, 1.0, 1.0) - p / n as f64).abs() < 1e-3);
    }

    #[test]
    fn monotone_in_mean() {
        let r = GaussHermite::default();
        for v in [0.0, 0.5, 3.0] {
            let vals: Vec<f64> = (-40..=40).map(|i| expected_log_bernoulli(&r, i as f64 * 0.25, v, true)).collect();
            assert!(vals.windows(2).all(|p| p[1] > p[0]));
            let probs: Vec<f64> = (-40..=40).map(|i| expected_sigmoid(&r, i as f64 * 0.25, v)).collect();
            assert!(probs.windows(2).all(|p| p[1] > p[0]));
        }
        assert!(expected_sigmoid(&r, 40.0, 1.0) > 1.0 - 1e-12);
    }

    #[test]
    fn derivatives_match_differences() {
        let r = GaussHermite::default();
        let h = 1e-6;
        for &(m, v, y) in &[(0.3, 0.8, true), (-1.2, 2.5, false), (2.0, 1e-3, true)] {
            let (_, dm, dv) = expected_log_bernoulli_grad(&r, m, v, y);
            let fm = (expected_log_bernoulli(&r, m + h, v, y) - expected_log_bernoulli(&r, m - h, v, y)) / (2.0 * h);
            let fv = (expected_log_bernoulli(&r, m, v + h * v, y) - expected_log_bernoulli(&r, m, v - h * v, y))
                / (2.0 * h * v);
            assert!((dm - fm).abs() < 1e-7, "{dm} {fm}");
            assert!((dv - fv).abs() < 1e-6 * fv.abs().max(1.0), "{dv} {fv}");
        }
        let (_, _, dv0) = expected_log_bernoulli_grad(&r, 0.0, 0.0, true);
        assert!((dv0 + 0.125).abs() < 1e-12);
    }
}
