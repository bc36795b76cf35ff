//! Damped least squares (Levenberg–Marquardt) with a forward-difference
//! Jacobian.
//!
//! Cost is `Σ r_i²`. Steps solve `(JᵀJ + λ·diag(JᵀJ)) δ = -Jᵀr`; λ shrinks
//! by 10 after an accepted step and grows by 10 after a rejected one, so the
//! accepted cost sequence is non-increasing. Parameter bounds are the
//! caller's business (fit transformed parameters).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop when `‖δ‖ <= step_tolerance · (‖p‖ + step_tolerance)`.
    pub step_tolerance: f64,
    pub initial_lambda: f64,
    /// Relative forward-difference step, `h = rel_step · max(|p|, 1)`.
    pub rel_step: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-10,
            initial_lambda: 1e-3,
            rel_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian of the residuals at `params`.
    pub jacobian: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

impl LmOutcome {
    /// `(JᵀJ)⁻¹` at the optimum, or `None` if the Jacobian is numerically rank
    /// deficient (after column scaling).
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        covariance(&self.jacobian)
    }
}

/// Computes `(JᵀJ)⁻¹` through an SVD of the column-normalized Jacobian.
pub fn covariance(jacobian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = jacobian.ncols();
    let scales: Vec<f64> = (0..n).map(|j| jacobian.column(j).norm()).collect();
    if scales.iter().any(|s| !s.is_finite() || *s == 0.0) {
        return None;
    }
    let mut scaled = jacobian.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = scaled.svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return None;
    }
    let v_t = svd.v_t?;
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        let s2 = svd.singular_values[k] * svd.singular_values[k];
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += v_t[(k, i)] * v_t[(k, j)] / s2;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] /= scales[i] * scales[j];
        }
    }
    Some(cov)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn eval<F>(f: &mut F, p: &[f64], out: &mut [f64]) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    f(p, out);
    let c = sum_sq(out);
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

pub fn numeric_jacobian<F>(f: &mut F, p: &[f64], r0: &[f64], rel_step: f64) -> DMatrix<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let m = r0.len();
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut pp = p.to_vec();
    let mut r1 = vec![0.0; m];
    for j in 0..n {
        let h = rel_step * p[j].abs().max(1.0);
        pp[j] = p[j] + h;
        f(&pp, &mut r1);
        // exact representable step
        let h_eff = pp[j] - p[j];
        for i in 0..m {
            jac[(i, j)] = (r1[i] - r0[i]) / h_eff;
        }
        pp[j] = p[j];
    }
    jac
}

/// Minimizes `Σ r(p)²` starting from `p0`; `f` writes `m` residuals.
pub fn minimize<F>(mut f: F, p0: &[f64], m: usize, config: &LmConfig) -> LmOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    let mut cost = eval(&mut f, &p, &mut r);
    let initial_cost = cost;
    let mut lambda = config.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut jac = numeric_jacobian(&mut f, &p, &r, config.rel_step);

    if cost == 0.0 {
        converged = true;
    }

    while !converged && iterations < config.max_iterations && cost.is_finite() {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);
        let diag_max = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        let floor = (diag_max * 1e-15).max(f64::MIN_POSITIVE);

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            for i in 0..n {
                trial[i] = p[i] + delta[i];
            }
            let c_trial = eval(&mut f, &trial, &mut r_trial);
            if c_trial < cost {
                let drop = cost - c_trial;
                let step_norm = delta.norm();
                let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                std::mem::swap(&mut p, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if drop <= config.cost_tolerance * cost
                    || step_norm <= config.step_tolerance * (p_norm + config.step_tolerance)
                    || cost == 0.0
                {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
        } else {
            jac = numeric_jacobian(&mut f, &p, &r, config.rel_step);
        }
    }

    LmOutcome {
        params: p,
        cost,
        initial_cost,
        iterations,
        converged,
        jacobian: jac,
        residuals: r,
    }
}
