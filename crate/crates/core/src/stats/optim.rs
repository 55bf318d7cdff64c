//! Bounded Nelder–Mead minimization with seeded restarts.
//!
//! Trial points are projected onto the box before evaluation. After the first
//! run converges, the search restarts from the incumbent with a fresh simplex
//! whose step sizes and orientation come from a fixed seed; the best point over
//! all runs is returned. In double precision a few Newton steps on
//! central-difference derivatives then refine the interior coordinates, so the
//! answer does not depend on where the simplex happened to stop inside the
//! rounding-noise floor of the objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::{spd_solve, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct NelderMeadOptions<T> {
    /// Spread of objective values across the simplex at convergence.
    pub ftol: T,
    /// Largest vertex distance from the best vertex at convergence.
    pub xtol: T,
    /// Evaluation budget shared by all runs.
    pub max_evals: usize,
    pub initial_step: T,
    pub restart_seeds: Vec<u64>,
    /// Finite-difference step for the final Newton refinement; `None` skips it.
    pub polish_step: Option<T>,
}

impl<T: Scalar> Default for NelderMeadOptions<T> {
    fn default() -> Self {
        NelderMeadOptions {
            ftol: T::of(if T::EPS < 1e-10 { 1e-8 } else { 1e-3 }),
            xtol: T::of(if T::EPS < 1e-10 { 1e-9 } else { 1e-4 }),
            max_evals: 10_000,
            initial_step: T::of(0.25),
            restart_seeds: vec![0x5eed_0001, 0x5eed_0002, 0x5eed_0003],
            polish_step: if T::EPS < 1e-10 { Some(T::of(1e-4)) } else { None },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bounds<T> {
    pub lower: Vec<Option<T>>,
    pub upper: Vec<Option<T>>,
}

impl<T: Scalar> Bounds<T> {
    pub fn unbounded(n: usize) -> Self {
        Bounds { lower: vec![None; n], upper: vec![None; n] }
    }

    pub fn project(&self, x: &mut [T]) {
        for (i, v) in x.iter_mut().enumerate() {
            if let Some(Some(lo)) = self.lower.get(i) {
                *v = v.max(*lo);
            }
            if let Some(Some(hi)) = self.upper.get(i) {
                *v = v.min(*hi);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub f: T,
    /// Objective at the (projected) starting point.
    pub f_start: T,
    pub evals: usize,
    pub converged: bool,
    pub runs: usize,
}

struct Counter<'a, T, F> {
    f: &'a mut F,
    bounds: &'a Bounds<T>,
    evals: usize,
}

impl<T: Scalar, F: FnMut(&[T]) -> T> Counter<'_, T, F> {
    fn eval(&mut self, x: &mut [T]) -> T {
        self.bounds.project(x);
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    }
}

pub fn minimize<T, F>(mut f: F, x0: &[T], bounds: &Bounds<T>, opts: &NelderMeadOptions<T>) -> Minimum<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let n = x0.len();
    let mut counter = Counter { f: &mut f, bounds, evals: 0 };
    let mut start = x0.to_vec();
    let f_start = counter.eval(&mut start);
    if n == 0 {
        return Minimum { x: start, f: f_start, f_start, evals: 1, converged: true, runs: 0 };
    }
    let steps = vec![opts.initial_step; n];
    let (mut best_x, mut best_f, mut converged) = run(&mut counter, &start, f_start, &steps, opts);
    let mut runs = 1;
    for &seed in &opts.restart_seeds {
        if counter.evals >= opts.max_evals {
            converged = false;
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps: Vec<T> = (0..n)
            .map(|_| {
                let scale: f64 = rng.random_range(0.5..1.5);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                opts.initial_step * T::of(scale * sign)
            })
            .collect();
        let (x, fx, ok) = run(&mut counter, &best_x, best_f, &steps, opts);
        runs += 1;
        converged = ok;
        if fx < best_f {
            best_x = x;
            best_f = fx;
        }
    }
    if let (true, Some(h)) = (converged, opts.polish_step) {
        let (x, fx) = polish(&mut counter, best_x, best_f, f_start, h);
        best_x = x;
        best_f = fx;
    }
    Minimum { x: best_x, f: best_f, f_start, evals: counter.evals, converged, runs }
}

fn polish<T, F>(c: &mut Counter<'_, T, F>, mut x: Vec<T>, mut fx: T, f_start: T, h: T) -> (Vec<T>, T)
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let bounds = c.bounds;
    let clear = |x: &[T], i: usize| {
        let lo = bounds.lower.get(i).copied().flatten().is_none_or(|lo| x[i] - lo > h * T::of(4.0));
        let hi = bounds.upper.get(i).copied().flatten().is_none_or(|hi| hi - x[i] > h * T::of(4.0));
        lo && hi
    };
    let free: Vec<usize> = (0..x.len()).filter(|&i| clear(&x, i)).collect();
    let m = free.len();
    if m == 0 {
        return (x, fx);
    }
    let slack = T::of(64.0 * T::EPS) * fx.abs().max(T::one());
    for _ in 0..4 {
        let at = |c: &mut Counter<'_, T, F>, moves: &[(usize, T)]| {
            let mut v = x.clone();
            for &(i, d) in moves {
                v[free[i]] += d;
            }
            c.eval(&mut v)
        };
        let mut g = vec![T::zero(); m];
        let mut hess = Matrix::zeros(m, m);
        for i in 0..m {
            let (fp, fm) = (at(c, &[(i, h)]), at(c, &[(i, -h)]));
            // Richardson: the step's fixed point is where this gradient vanishes,
            // so its O(h^2) error would bias the optimum.
            let half = h / T::of(2.0);
            let (fp2, fm2) = (at(c, &[(i, half)]), at(c, &[(i, -half)]));
            g[i] = ((fp2 - fm2) / h * T::of(4.0) - (fp - fm) / (h * T::of(2.0))) / T::of(3.0);
            hess[(i, i)] = (fp - fx * T::of(2.0) + fm) / (h * h);
            for j in 0..i {
                let pp = at(c, &[(i, h), (j, h)]);
                let pm = at(c, &[(i, h), (j, -h)]);
                let mp = at(c, &[(i, -h), (j, h)]);
                let mm = at(c, &[(i, -h), (j, -h)]);
                let v = (pp - pm - mp + mm) / (h * h * T::of(4.0));
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let neg: Vec<T> = g.iter().map(|v| -*v).collect();
        let Some(step) = spd_solve(&hess, &neg) else { break };
        let size = step.iter().fold(T::zero(), |a, s| a.max(s.abs()));
        if !size.is_finite() || size > h * T::of(10.0) {
            break;
        }
        let mut cand = x.clone();
        for (k, &i) in free.iter().enumerate() {
            cand[i] += step[k];
        }
        let fc = c.eval(&mut cand);
        if !(fc <= fx + slack && fc <= f_start) || free.iter().any(|&i| !clear(&cand, i)) {
            break;
        }
        x = cand;
        fx = fc;
        if size <= T::of(1e-12) {
            break;
        }
    }
    (x, fx)
}

fn run<T, F>(
    c: &mut Counter<'_, T, F>,
    x0: &[T],
    f0: T,
    steps: &[T],
    opts: &NelderMeadOptions<T>,
) -> (Vec<T>, T, bool)
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let n = x0.len();
    let half = T::of(0.5);
    let two = T::of(2.0);
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        c.bounds.project(&mut v);
        if (v[i] - x0[i]).abs() < steps[i].abs() * half {
            // Projection collapsed the vertex onto the start; step the other way.
            v[i] = x0[i] - steps[i];
        }
        let fv = c.eval(&mut v);
        simplex.push((v, fv));
    }

    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let spread = if best.is_finite() && worst.is_finite() { worst - best } else { T::infinity() };
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max))
            .fold(T::zero(), T::max);
        if spread <= opts.ftol && size <= opts.xtol {
            return (simplex[0].0.clone(), best, true);
        }
        if c.evals >= opts.max_evals {
            return (simplex[0].0.clone(), best, false);
        }

        let mut centroid = vec![T::zero(); n];
        for (v, _) in &simplex[..n] {
            for (ci, &vi) in centroid.iter_mut().zip(v) {
                *ci += vi;
            }
        }
        let nn = T::of_usize(n);
        centroid.iter_mut().for_each(|ci| *ci /= nn);
        let along = |t: T, from: &[T]| -> Vec<T> {
            centroid.iter().zip(from).map(|(&ci, &wi)| ci + t * (ci - wi)).collect()
        };

        let worst_x = simplex[n].0.clone();
        let mut xr = along(T::one(), &worst_x);
        let fr = c.eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(two, &worst_x);
            let fe = c.eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, fc) = if fr < simplex[n].1 {
            let mut xc = along(half, &worst_x);
            let fc = c.eval(&mut xc);
            (xc, fc)
        } else {
            let mut xc = along(-half, &worst_x);
            let fc = c.eval(&mut xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (std::mem::take(&mut xc), fc);
            continue;
        }
        // Shrink toward the best vertex.
        let best_x = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (vi, &bi) in v.iter_mut().zip(&best_x) {
                *vi = bi + half * (*vi - bi);
            }
            *fv = c.eval(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(rosen, &[-1.2, 1.0], &Bounds::unbounded(2), &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
        assert!(m.f <= m.f_start);
    }

    #[test]
    fn respects_lower_bound() {
        let f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2);
        let b = Bounds { lower: vec![Some(0.0), None], upper: vec![None, None] };
        let m = minimize(f, &[1.0, 0.0], &b, &NelderMeadOptions::default());
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn evaluation_cap_reports_nonconvergence() {
        let opts = NelderMeadOptions { max_evals: 15, ..NelderMeadOptions::default() };
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(rosen, &[-1.2, 1.0], &Bounds::unbounded(2), &opts);
        assert!(!m.converged);
        assert!(m.evals <= 20);
    }

    #[test]
    fn works_in_single_precision() {
        let f = |x: &[f32]| (x[0] - 0.3).powi(2);
        let m = minimize(f, &[1.0_f32], &Bounds::unbounded(1), &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 0.7).powi(4) + x[1].abs();
        let a = minimize(f, &[0.0, 1.0], &Bounds::unbounded(2), &NelderMeadOptions::default());
        let b = minimize(f, &[0.0, 1.0], &Bounds::unbounded(2), &NelderMeadOptions::default());
        assert_eq!(a.x, b.x);
        assert_eq!(a.evals, b.evals);
    }
}
