//! Cumulative-link (proportional odds) models with a logit link.
//!
//! `P(Y ≤ k | x) = F(τ_k − xᵀβ)` over the observed categories. The optimizer
//! works in `φ = (τ_1, δ_2, …, δ_{K-1}, β)` with `τ_k = τ_1 + Σ_{j≤k} exp(δ_j)`,
//! so thresholds stay ordered; standard errors come from the observed
//! information in `(τ, β)`.

use serde::Serialize;

use super::design::{canonical_rows, fixed_columns, FixedTerm};
use super::linalg::{cholesky, cholesky_inverse, dot, spd_solve, Matrix};
use super::table::TrialTable;
use super::{PMethod, StatsError};
use crate::scalar::Scalar;

/// A fitted coefficient is separated when `|β|·range(x)` exceeds this.
const SEPARATION_LIMIT: f64 = 30.0;

#[derive(Clone, Debug)]
pub struct OrdinalOptions {
    pub max_iter: usize,
    /// Largest absolute score component at convergence.
    pub gradient_tol: f64,
    pub p_method: PMethod,
}

impl Default for OrdinalOptions {
    fn default() -> Self {
        OrdinalOptions { max_iter: 200, gradient_tol: 1e-9, p_method: PMethod::Normal }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrdinalCoefficient<T> {
    pub name: String,
    pub b: T,
    pub se: T,
    pub z: T,
    pub p: T,
}

impl<T: Scalar> OrdinalCoefficient<T> {
    /// `b = -2.03, se = 0.24, z = -8.67, p < .001`
    pub fn report(&self) -> String {
        let p = self.p.f64();
        let p_txt = if p < 0.001 {
            "p < .001".to_string()
        } else {
            let s = format!("{p:.3}");
            format!("p = {}", s.strip_prefix('0').unwrap_or(&s))
        };
        format!("b = {:.2}, se = {:.2}, z = {:.2}, {p_txt}", self.b.f64(), self.se.f64(), self.z.f64())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrdinalFit<T> {
    /// Observed response values, ascending; empty scale points are dropped.
    pub categories: Vec<f64>,
    pub thresholds: Vec<T>,
    pub coefficients: Vec<OrdinalCoefficient<T>>,
    pub log_likelihood: T,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
}

impl<T: Scalar> OrdinalFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<&OrdinalCoefficient<T>> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Category probabilities for predictor values `x` (same order as `coefficients`).
    pub fn predict_proba(&self, x: &[T]) -> Vec<T> {
        let beta: Vec<T> = self.coefficients.iter().map(|c| c.b).collect();
        let eta = dot(x, &beta);
        let mut out = Vec::with_capacity(self.categories.len());
        let mut prev = T::zero();
        for tau in &self.thresholds {
            let c = logistic(*tau - eta);
            out.push(c - prev);
            prev = c;
        }
        out.push(T::one() - prev);
        out
    }
}

fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct Problem<T> {
    /// Category index of each observation.
    y: Vec<usize>,
    x: Vec<Vec<T>>,
    k: usize,
    p: usize,
}

struct Eval<T> {
    ll: T,
    /// Score and Hessian in `(τ, β)`.
    grad: Vec<T>,
    hess: Matrix<T>,
}

impl<T: Scalar> Problem<T> {
    fn thresholds(&self, phi: &[T]) -> Vec<T> {
        let mut tau = Vec::with_capacity(self.k - 1);
        tau.push(phi[0]);
        for j in 1..self.k - 1 {
            let prev = tau[j - 1];
            tau.push(prev + phi[j].exp());
        }
        tau
    }

    fn log_likelihood(&self, phi: &[T]) -> T {
        let tau = self.thresholds(phi);
        let beta = &phi[self.k - 1..];
        let mut ll = T::zero();
        for (c, xi) in self.y.iter().zip(&self.x) {
            let eta = dot(xi, beta);
            let hi = if *c < self.k - 1 { logistic(tau[*c] - eta) } else { T::one() };
            let lo = if *c > 0 { logistic(tau[*c - 1] - eta) } else { T::zero() };
            ll += (hi - lo).max(T::min_positive_value()).ln();
        }
        ll
    }

    fn evaluate(&self, phi: &[T]) -> Eval<T> {
        let nt = self.k - 1;
        let dim = nt + self.p;
        let tau = self.thresholds(phi);
        let beta = &phi[nt..];
        let mut ll = T::zero();
        let mut grad = vec![T::zero(); dim];
        let mut hess = Matrix::zeros(dim, dim);
        let two = T::of(2.0);
        let mut gi = vec![T::zero(); dim];
        for (c, xi) in self.y.iter().zip(&self.x) {
            let c = *c;
            let eta = dot(xi, beta);
            // (F, f, f') at the upper and lower cut points.
            let at = |z: T| {
                let f = logistic(z);
                let d = f * (T::one() - f);
                (f, d, d * (T::one() - two * f))
            };
            let (fa, da, dda) = if c < nt { at(tau[c] - eta) } else { (T::one(), T::zero(), T::zero()) };
            let (fb, db, ddb) = if c > 0 { at(tau[c - 1] - eta) } else { (T::zero(), T::zero(), T::zero()) };
            let pr = (fa - fb).max(T::min_positive_value());
            ll += pr.ln();
            // Direction vectors: ∂a/∂θ = e_c − x, ∂b/∂θ = e_{c−1} − x.
            gi.iter_mut().for_each(|v| *v = T::zero());
            if c < nt {
                gi[c] += da / pr;
            }
            if c > 0 {
                gi[c - 1] -= db / pr;
            }
            for (j, &x) in xi.iter().enumerate() {
                gi[nt + j] = -x * (da - db) / pr;
            }
            for (g, v) in grad.iter_mut().zip(&gi) {
                *g += *v;
            }
            let dir = |slot: Option<usize>, r: usize| -> T {
                if r < nt {
                    if Some(r) == slot {
                        T::one()
                    } else {
                        T::zero()
                    }
                } else {
                    -xi[r - nt]
                }
            };
            let sa = (c < nt).then_some(c);
            let sb = if c > 0 { Some(c - 1) } else { None };
            for r in 0..dim {
                let (ar, br) = (dir(sa, r), dir(sb, r));
                for s in 0..=r {
                    let mut h = -gi[r] * gi[s];
                    if c < nt {
                        h += dda * ar * dir(sa, s) / pr;
                    }
                    if c > 0 {
                        h -= ddb * br * dir(sb, s) / pr;
                    }
                    hess[(r, s)] += h;
                }
            }
        }
        for r in 0..dim {
            for s in 0..r {
                hess[(s, r)] = hess[(r, s)];
            }
        }
        Eval { ll, grad, hess }
    }

    /// Score and Hessian mapped from `(τ, β)` into `φ`.
    fn in_phi(&self, phi: &[T], e: &Eval<T>) -> (Vec<T>, Matrix<T>) {
        let nt = self.k - 1;
        let dim = nt + self.p;
        let mut jac = Matrix::zeros(dim, dim);
        for k in 0..nt {
            jac[(k, 0)] = T::one();
            for j in 1..=k {
                jac[(k, j)] = phi[j].exp();
            }
        }
        for j in nt..dim {
            jac[(j, j)] = T::one();
        }
        let g = jac.transpose_vec(&e.grad);
        let mut h = jac.transpose().matmul(&e.hess).matmul(&jac);
        for j in 1..nt {
            let tail: T = (j..nt).map(|k| e.grad[k]).sum();
            h[(j, j)] += tail * phi[j].exp();
        }
        (g, h)
    }
}

/// Fits a cumulative-logit model of the table's response on `predictors`.
pub fn fit_clm_ordinal<T: Scalar>(
    table: &TrialTable,
    predictors: &[FixedTerm],
    opts: &OrdinalOptions,
) -> Result<OrdinalFit<T>, StatsError> {
    let rows = canonical_rows(table);
    let mut categories: Vec<f64> = rows.iter().map(|r| r.response).collect();
    categories.sort_by(f64::total_cmp);
    categories.dedup();
    if categories.len() < 2 {
        return Err(StatsError::TooFewCategories(categories.len()));
    }
    let (names, cols, _) = fixed_columns(predictors, &rows)?;
    let n = rows.len();
    let p = names.len();
    let k = categories.len();
    let y: Vec<usize> = rows
        .iter()
        .map(|r| categories.binary_search_by(|c| c.total_cmp(&r.response)).expect("category present"))
        .collect();
    let x: Vec<Vec<T>> = (0..n).map(|i| cols.iter().map(|c| T::of(c[i])).collect()).collect();
    let prob = Problem { y, x, k, p };
    let nt = k - 1;

    if p > 0 {
        let mut xtx = Matrix::zeros(p + 1, p + 1);
        for xi in &prob.x {
            let row: Vec<T> = std::iter::once(T::one()).chain(xi.iter().copied()).collect();
            for a in 0..=p {
                for b in 0..=p {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        if cholesky(&xtx, T::of(T::EPS.sqrt())).is_none() {
            return Err(StatsError::RankDeficient);
        }
    }

    // Start at the marginal cumulative logits with β = 0.
    let mut counts = vec![0usize; k];
    prob.y.iter().for_each(|&c| counts[c] += 1);
    let mut phi = vec![T::zero(); nt + p];
    let mut cum = 0usize;
    let mut prev_tau = T::zero();
    for j in 0..nt {
        cum += counts[j];
        let q = cum as f64 / n as f64;
        let tau = T::of((q / (1.0 - q)).ln());
        phi[j] = if j == 0 { tau } else { (tau - prev_tau).max(T::of(1e-3)).ln() };
        prev_tau = tau;
    }

    let tol = T::of(opts.gradient_tol.max(T::EPS.sqrt() * 10.0));
    let noise = T::of(100.0 * T::EPS);
    let mut lambda = T::zero();
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = prob.log_likelihood(&phi);
    while iterations < opts.max_iter {
        iterations += 1;
        let e = prob.evaluate(&phi);
        let (g, h) = prob.in_phi(&phi, &e);
        let gmax = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if gmax <= tol * T::of_usize(n).max(T::one()).sqrt() {
            converged = true;
            break;
        }
        // Near the optimum the gain of a Newton step drops below the rounding noise of the
        // log-likelihood, where the line search can no longer see it; take the step and stop.
        let neg_h = Matrix::from_rows(h.rows(), h.cols(), (0..h.rows() * h.cols()).map(|i| -h[(i / h.cols(), i % h.cols())]).collect());
        if let Some(step) = spd_solve(&neg_h, &g) {
            if dot(&g, &step) <= noise * ll.abs().max(T::one()) {
                phi.iter_mut().zip(&step).for_each(|(a, s)| *a += *s);
                converged = true;
                break;
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut neg_h = Matrix::zeros(h.rows(), h.cols());
            for r in 0..h.rows() {
                for s in 0..h.cols() {
                    neg_h[(r, s)] = -h[(r, s)];
                }
                neg_h[(r, r)] += lambda;
            }
            let Some(step) = spd_solve(&neg_h, &g) else {
                lambda = if lambda == T::zero() { T::of(1e-6) } else { lambda * T::of(10.0) };
                continue;
            };
            let mut scale = T::one();
            for _ in 0..30 {
                let trial: Vec<T> = phi.iter().zip(&step).map(|(&a, &s)| a + scale * s).collect();
                let ll_new = prob.log_likelihood(&trial);
                if ll_new.is_finite() && ll_new >= ll {
                    phi = trial;
                    ll = ll_new;
                    accepted = true;
                    break;
                }
                scale *= T::of(0.5);
            }
            if accepted {
                lambda = lambda * T::of(0.1);
                break;
            }
            lambda = if lambda == T::zero() { T::of(1e-6) } else { lambda * T::of(10.0) };
        }
        if !accepted {
            break;
        }
    }

    let beta = &phi[nt..];
    for (j, name) in names.iter().enumerate() {
        let (lo, hi) = cols[j].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if beta[j].abs().f64() * (hi - lo) > SEPARATION_LIMIT {
            return Err(StatsError::Separation(name.clone()));
        }
    }
    if !converged {
        return Err(StatsError::NonConvergence { formula: "cumulative logit".into(), evaluations: iterations });
    }

    let e = prob.evaluate(&phi);
    let mut info = Matrix::zeros(nt + p, nt + p);
    for r in 0..nt + p {
        for s in 0..nt + p {
            info[(r, s)] = -e.hess[(r, s)];
        }
    }
    let l = cholesky(&info, T::zero()).ok_or_else(|| StatsError::Separation("information matrix singular".into()))?;
    let cov = cholesky_inverse(&l);
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let b = beta[j];
            let se = cov[(nt + j, nt + j)].sqrt();
            let z = b / se;
            OrdinalCoefficient { name: name.clone(), b, se, z, p: T::of(opts.p_method.two_sided(z.f64())) }
        })
        .collect();
    Ok(OrdinalFit {
        categories,
        thresholds: prob.thresholds(&phi),
        coefficients,
        log_likelihood: e.ll,
        converged,
        iterations,
        n_obs: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Condition;
    use crate::stats::table::{ResponseKind, TrialRow};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn likert(seed: u64, n: usize, effect: f64) -> TrialTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cuts = [-2.0, -1.2, -0.5, 0.0, 0.6, 1.3, 2.1];
        let rows = (0..n)
            .map(|i| {
                let cond = if i % 2 == 0 { Condition::AffirmedAB } else { Condition::NegatedAB };
                let shift = if cond == Condition::NegatedAB { effect } else { 0.0 };
                let u: f64 = rng.random_range(1e-12..1.0);
                let latent = (u / (1.0 - u)).ln() + shift;
                let v = cuts.iter().filter(|&&c| latent > c).count() as f64;
                TrialRow::new(Some(&format!("s{i}")), &format!("i{}", i % 9), cond, v)
            })
            .collect();
        TrialTable::new(ResponseKind::Likert0to7, rows).unwrap()
    }

    fn cond() -> Vec<FixedTerm> {
        vec![FixedTerm::Condition { reference: Condition::AffirmedAB }]
    }

    #[test]
    fn recovers_shift_with_ordered_thresholds() {
        let fit = fit_clm_ordinal::<f64>(&likert(4, 800, -1.0), &cond(), &OrdinalOptions::default()).unwrap();
        assert!(fit.thresholds.windows(2).all(|w| w[0] < w[1]));
        let b = fit.coefficient("condition[notA->B]").unwrap();
        assert!((b.b + 1.0).abs() < 0.3, "{b:?}");
        assert!(b.z < -2.0);
        for x in [0.0, 1.0, 3.5] {
            let s: f64 = fit.predict_proba(&[x]).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_format() {
        let c = OrdinalCoefficient { name: "x".into(), b: -2.03, se: 0.24, z: -8.67, p: 1e-17 };
        assert_eq!(c.report(), "b = -2.03, se = 0.24, z = -8.67, p < .001");
        let c = OrdinalCoefficient { name: "x".into(), b: 0.5, se: 0.25, z: 2.0, p: 0.0456 };
        assert_eq!(c.report(), "b = 0.50, se = 0.25, z = 2.00, p = .046");
    }

    #[test]
    fn separation_is_reported() {
        let rows = (0..20)
            .map(|i| {
                let c = if i < 10 { Condition::AffirmedAB } else { Condition::NegatedAB };
                TrialRow::new(None, &format!("i{i}"), c, if i < 10 { 1.0 } else { 6.0 })
            })
            .collect();
        let t = TrialTable::new(ResponseKind::Likert0to7, rows).unwrap();
        assert!(matches!(fit_clm_ordinal::<f64>(&t, &cond(), &OrdinalOptions::default()), Err(StatsError::Separation(_))));
    }

    #[test]
    fn single_category_rejected() {
        let rows = vec![TrialRow::new(None, "i", Condition::AffirmedAB, 3.0); 4];
        let t = TrialTable::new(ResponseKind::Likert0to7, rows).unwrap();
        assert!(matches!(fit_clm_ordinal::<f64>(&t, &[], &OrdinalOptions::default()), Err(StatsError::TooFewCategories(1))));
    }

    #[test]
    fn empty_scale_points_do_not_change_fit() {
        // Relabel 5,6,7 -> 7 and compare with data using only the 0..5 labels shifted.
        let t = likert(8, 400, 0.5);
        let squeezed = t.map_responses(|v| v.min(5.0)).unwrap();
        let spread = squeezed.map_responses(|v| if v == 5.0 { 7.0 } else { v }).unwrap();
        let a = fit_clm_ordinal::<f64>(&squeezed, &cond(), &OrdinalOptions::default()).unwrap();
        let b = fit_clm_ordinal::<f64>(&spread, &cond(), &OrdinalOptions::default()).unwrap();
        assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-8);
    }
}
