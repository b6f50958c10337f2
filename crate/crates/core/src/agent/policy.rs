//! Tanh-squashed Gaussian policy head.
//!
//! The actor network emits `[mean, raw_log_std]` per action dimension. The
//! log-std is squashed smoothly into `[LOG_STD_MIN, LOG_STD_MAX]`; actions are
//! `bound · tanh(mean + std · ε)`. Log-probabilities are densities of the
//! normalized action `tanh(mean + std · ε)`, so entropy targets do not depend on
//! the action scale.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh²(u))`, stable for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn squash_log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0)
}

/// Deterministic action `bound · tanh(mean)`.
pub fn mean_action(head: ArrayView2<f64>, bound: f64) -> Array2<f64> {
    let a = head.ncols() / 2;
    head.slice(s![.., ..a]).mapv(|m| bound * m.tanh())
}

/// Reparameterized sample with everything needed for its gradient.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    bound: f64,
    tanh_u: Array2<f64>,
    std: Array2<f64>,
    eps: Array2<f64>,
    raw_log_std: Array2<f64>,
}

pub fn sample(head: ArrayView2<f64>, eps: Array2<f64>, bound: f64) -> PolicySample {
    let a = head.ncols() / 2;
    assert_eq!(head.ncols(), 2 * a);
    assert_eq!(eps.dim(), (head.nrows(), a));
    let mean = head.slice(s![.., ..a]);
    let raw_log_std = head.slice(s![.., a..]).to_owned();
    let log_std = raw_log_std.mapv(squash_log_std);
    let std = log_std.mapv(f64::exp);
    let u = &mean + &(&std * &eps);
    let tanh_u = u.mapv(f64::tanh);
    let actions = tanh_u.mapv(|t| bound * t);

    let mut log_prob = Array1::zeros(head.nrows());
    for (r, lp) in log_prob.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..a {
            let e = eps[[r, j]];
            acc += -0.5 * e * e - log_std[[r, j]] - HALF_LN_2PI - log_one_minus_tanh_sq(u[[r, j]]);
        }
        *lp = acc;
    }
    PolicySample {
        actions,
        log_prob,
        bound,
        tanh_u,
        std,
        eps,
        raw_log_std,
    }
}

impl PolicySample {
    /// Gradient w.r.t. the head outputs of `Σ_r (d_actions[r] · a_r + d_log_prob[r] · log π_r)`.
    pub fn head_grad(&self, d_actions: ArrayView2<f64>, d_log_prob: &Array1<f64>) -> Array2<f64> {
        let (n, a) = self.actions.dim();
        assert_eq!(d_actions.dim(), (n, a));
        assert_eq!(d_log_prob.len(), n);
        let mut out = Array2::zeros((n, 2 * a));
        let spread = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        for r in 0..n {
            let c = d_log_prob[r];
            for j in 0..a {
                let t = self.tanh_u[[r, j]];
                // d log π / du = 2 tanh(u) through the squashing correction
                let du = d_actions[[r, j]] * self.bound * (1.0 - t * t) + c * 2.0 * t;
                let d_log_std = du * self.std[[r, j]] * self.eps[[r, j]] - c;
                let th = self.raw_log_std[[r, j]].tanh();
                out[[r, j]] = du;
                out[[r, a + j]] = d_log_std * spread * (1.0 - th * th);
            }
        }
        out
    }
}

/// Elementwise minimum across equally sized columns.
pub(crate) fn elementwise_min(cols: &[Array1<f64>]) -> Array1<f64> {
    let mut out = cols[0].clone();
    for c in &cols[1..] {
        Zip::from(&mut out).and(c).for_each(|o, &v| *o = o.min(v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_mean_deterministic_action_is_zero() {
        let head = array![[0.0, 0.0, 0.3, -1.0]];
        assert_eq!(mean_action(head.view(), 0.2), array![[0.0, 0.0]]);
    }

    #[test]
    fn stable_log_one_minus_tanh_sq() {
        for u in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn log_prob_matches_change_of_variables() {
        // one dimension: density of tanh(u) with u ~ N(μ, σ²)
        let head = array![[0.3, 0.1]];
        let eps = array![[0.7]];
        let s = sample(head.view(), eps, 0.2);
        let log_std = squash_log_std(0.1);
        let sigma = log_std.exp();
        let u = 0.3 + sigma * 0.7;
        let normal = -0.5 * 0.7f64.powi(2) - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let jac = (1.0 - u.tanh().powi(2)).ln();
        assert!((s.log_prob[0] - (normal - jac)).abs() < 1e-12);
        assert!((s.actions[[0, 0]] - 0.2 * u.tanh()).abs() < 1e-15);
    }

    #[test]
    fn head_grad_matches_finite_differences() {
        let head = array![[0.3, -0.4, 0.2, -0.6], [-1.1, 0.5, 0.9, 0.0]];
        let eps = array![[0.5, -1.2], [0.1, 0.8]];
        let da = array![[0.7, -0.3], [1.5, 0.2]];
        let dlp = array![0.4, -0.9];
        let objective = |h: &Array2<f64>| {
            let s = sample(h.view(), eps.clone(), 0.2);
            (&s.actions * &da).sum() + (&s.log_prob * &dlp).sum()
        };
        let g = sample(head.view(), eps.clone(), 0.2).head_grad(da.view(), &dlp);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..4 {
                let mut hp = head.clone();
                hp[[r, c]] += h;
                let mut hm = head.clone();
                hm[[r, c]] -= h;
                let fd = (objective(&hp) - objective(&hm)) / (2.0 * h);
                assert!((fd - g[[r, c]]).abs() < 1e-7 * (1.0 + fd.abs()), "({r},{c}): {fd} vs {}", g[[r, c]]);
            }
        }
    }
}
