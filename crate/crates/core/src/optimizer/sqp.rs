//! Bounded quasi-Newton SQP on the unit-scaled box.
//!
//! The objective is maximized by minimizing `g(s) = -f(x(s)) / |f(x0)|` where
//! `s` is the position in the unit box. Each iteration solves the quadratic
//! model over the box exactly, backtracks along the step until the Armijo
//! condition holds, and updates a damped BFGS approximation of the Hessian.
//!
//! The Hessian starts as the identity in curvature-scaled coordinates, i.e. as
//! the diagonal of second differences that the first central-difference
//! gradient yields at no extra cost.

use nalgebra::{DMatrix, DVector};

use super::{Bounds, OptOptions, OptResult, Recorder};
use crate::error::{Error, Result};

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
/// Largest dimension for which the box subproblem enumerates active sets.
const MAX_DIM: usize = 8;

/// Local maximization from `x0` inside `bounds`.
pub fn sqp_local<F>(f: &mut F, x0: &[f64], bounds: &Bounds, opts: &OptOptions) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_problem(x0, bounds, opts)?;
    let mut rec = Recorder::new(f, opts.max_evals);
    let outcome = run(&mut rec, x0, None, bounds, opts);
    rec.finish(outcome)
}

pub(crate) fn check_problem(x0: &[f64], bounds: &Bounds, opts: &OptOptions) -> Result<()> {
    bounds.validate()?;
    opts.validate(bounds.dim())?;
    if bounds.dim() > MAX_DIM {
        return Err(Error::invalid(format!(
            "local optimizer supports at most {MAX_DIM} variables"
        )));
    }
    if !bounds.contains(x0) {
        return Err(Error::invalid(format!("start point {x0:?} outside bounds {bounds:?}")));
    }
    Ok(())
}

/// Runs the iteration through `rec`; `f0` is the already known value at `x0`.
/// Returns whether a convergence test fired.
pub(crate) fn run<F>(rec: &mut Recorder<'_, F>, x0: &[f64], f0: Option<f64>, bounds: &Bounds, opts: &OptOptions) -> Result<bool>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let h = opts.unit_steps(bounds);
    let mut s = DVector::from_vec(bounds.to_unit(x0));
    let fx0 = match f0 {
        Some(v) => v,
        None => rec.eval(&bounds.from_unit(s.as_slice()))?,
    };
    let scale = if fx0 != 0.0 { fx0.abs() } else { 1.0 };
    let mut eval_g = |rec: &mut Recorder<'_, F>, s: &DVector<f64>| -> Result<f64> {
        Ok(-rec.eval(&bounds.from_unit(s.as_slice()))? / scale)
    };

    let mut g = -fx0 / scale;
    let (mut grad, curv) = gradient(rec, &mut eval_g, &s, g, &h)?;
    let mut hess = DMatrix::from_diagonal(&initial_curvature(&curv));

    loop {
        let lo = -&s;
        let hi = s.map(|v| 1.0 - v);
        let p = solve_box_qp(&hess, &grad, &lo, &hi);
        let slope = grad.dot(&p);
        if p.amax() < opts.xtol || slope >= 0.0 {
            return Ok(true);
        }

        let mut alpha = 1.0;
        let (s_new, g_new) = loop {
            let cand = (&s + &p * alpha).map(|v| v.clamp(0.0, 1.0));
            let v = eval_g(rec, &cand)?;
            if v <= g + ARMIJO_C1 * alpha * slope {
                break (cand, v);
            }
            alpha *= BACKTRACK;
            if alpha * p.amax() < opts.xtol {
                return Ok(true);
            }
        };

        let step = &s_new - &s;
        let improvement = g - g_new;
        s = s_new;
        g = g_new;
        if step.amax() < opts.xtol || improvement < opts.ftol * g.abs().max(f64::MIN_POSITIVE) {
            return Ok(true);
        }
        let (grad_new, _) = gradient(rec, &mut eval_g, &s, g, &h)?;
        bfgs_update(&mut hess, &step, &(&grad_new - &grad));
        grad = grad_new;
    }
}

/// Positive second differences as they are; missing or non-positive ones take
/// the largest positive value, or 1 when there is none.
fn initial_curvature(curv: &[Option<f64>]) -> DVector<f64> {
    let fallback = curv
        .iter()
        .flatten()
        .copied()
        .filter(|c| *c > 0.0 && c.is_finite())
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))))
        .unwrap_or(1.0);
    DVector::from_iterator(
        curv.len(),
        curv.iter()
            .map(|c| c.filter(|c| *c > 0.0 && c.is_finite()).unwrap_or(fallback)),
    )
}

/// Central differences, one-sided where a probe would leave the unit box.
/// Also returns the second difference of each central pair.
fn gradient<F, G>(
    rec: &mut Recorder<'_, F>,
    eval_g: &mut G,
    s: &DVector<f64>,
    g: f64,
    h: &[f64],
) -> Result<(DVector<f64>, Vec<Option<f64>>)>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&mut Recorder<'_, F>, &DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(s.len());
    let mut curv = vec![None; s.len()];
    for k in 0..s.len() {
        let up = s[k] + h[k];
        let down = s[k] - h[k];
        let mut probe = s.clone();
        grad[k] = if up <= 1.0 && down >= 0.0 {
            probe[k] = up;
            let gu = eval_g(rec, &probe)?;
            probe[k] = down;
            let gd = eval_g(rec, &probe)?;
            curv[k] = Some((gu - 2.0 * g + gd) / (h[k] * h[k]));
            (gu - gd) / (up - down)
        } else if up > 1.0 {
            probe[k] = down;
            (g - eval_g(rec, &probe)?) / (s[k] - down)
        } else {
            probe[k] = up;
            (eval_g(rec, &probe)? - g) / (up - s[k])
        };
    }
    Ok((grad, curv))
}

/// Powell-damped BFGS update; keeps `b` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let sy = s.dot(y);
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 0.0) {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
    // keep exact symmetry against rounding drift
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
}

/// Minimizes `g'p + p'Bp/2` over `lo <= p <= hi` by trying every assignment of
/// each variable to free, lower or upper, and keeping the best feasible
/// stationary point. Exact for positive definite `B`.
fn solve_box_qp(b: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let model = |p: &DVector<f64>| g.dot(p) + 0.5 * p.dot(&(b * p));
    let mut best = DVector::zeros(n);
    let mut best_val = 0.0;
    for code in 0..3usize.pow(n as u32) {
        let mut p = DVector::zeros(n);
        let mut free = Vec::with_capacity(n);
        let mut c = code;
        for k in 0..n {
            match c % 3 {
                0 => free.push(k),
                1 => p[k] = lo[k],
                _ => p[k] = hi[k],
            }
            c /= 3;
        }
        if !free.is_empty() {
            let m = free.len();
            let mut a = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for (r, &i) in free.iter().enumerate() {
                let mut acc = -g[i];
                for k in 0..n {
                    if !free.contains(&k) {
                        acc -= b[(i, k)] * p[k];
                    }
                }
                rhs[r] = acc;
                for (cidx, &j) in free.iter().enumerate() {
                    a[(r, cidx)] = b[(i, j)];
                }
            }
            let Some(sol) = a.cholesky().map(|ch| ch.solve(&rhs)) else { continue };
            let mut feasible = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                if v < lo[i] - 1e-12 || v > hi[i] + 1e-12 || !v.is_finite() {
                    feasible = false;
                    break;
                }
                p[i] = v.clamp(lo[i], hi[i]);
            }
            if !feasible {
                continue;
            }
        }
        let val = model(&p);
        if val < best_val {
            best_val = val;
            best = p;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_interior_optimum() {
        let a = [30.3, 0.05, -1.1];
        let b = Bounds::sfp_degrees([22.0, -10.0, -180.0], [38.0, 10.0, 180.0]).unwrap();
        let mut f = |x: &[f64]| Ok(-x.iter().zip(&a).map(|(v, c)| (v - c).powi(2)).sum::<f64>());
        let r = sqp_local(&mut f, &b.midpoint(), &b, &OptOptions::default()).unwrap();
        for (v, c) in r.best_x.iter().zip(&a) {
            assert_abs_diff_eq!(v, c, epsilon = 1e-6);
        }
        assert!(r.evals <= 60, "{} evals", r.evals);
        assert!(r.converged);
    }

    #[test]
    fn optimum_on_the_boundary() {
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut f = |x: &[f64]| Ok(-(x[0] - 2.0).powi(2) - (x[1] - 0.3).powi(2));
        let r = sqp_local(&mut f, &[0.2, 0.9], &b, &OptOptions::default()).unwrap();
        assert_eq!(r.best_x[0], 1.0);
        assert_abs_diff_eq!(r.best_x[1], 0.3, epsilon = 1e-6);
    }

    #[test]
    fn accepted_iterates_are_monotone_and_inside() {
        let b = Bounds::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        let mut f = |x: &[f64]| Ok(-((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)));
        let r = sqp_local(&mut f, &[-1.2, 1.0], &b, &OptOptions::default()).unwrap();
        assert!(r.trace.iter().all(|t| b.contains(&t.x)));
        assert_eq!(r.best_value, r.trace.iter().map(|t| t.value).fold(f64::MIN, f64::max));
    }

    #[test]
    fn rosenbrock_minimum() {
        let b = Bounds::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        let mut f = |x: &[f64]| Ok(-((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)));
        let r = sqp_local(&mut f, &[-1.2, 1.0], &b, &OptOptions::default()).unwrap();
        assert_abs_diff_eq!(r.best_x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(r.best_x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn rejects_start_outside() {
        let b = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let mut f = |x: &[f64]| Ok(x[0]);
        assert!(sqp_local(&mut f, &[1.5], &b, &OptOptions::default()).is_err());
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let b = Bounds::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        let mut f = |x: &[f64]| Ok(-((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)));
        let opts = OptOptions {
            max_evals: 20,
            ..OptOptions::default()
        };
        let r = sqp_local(&mut f, &[-1.2, 1.0], &b, &opts).unwrap();
        assert_eq!(r.evals, 20);
        assert!(!r.converged);
    }

    #[test]
    fn box_qp_matches_brute_force() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![-3.0, 1.0]);
        let lo = DVector::from_vec(vec![-0.5, -0.5]);
        let hi = DVector::from_vec(vec![0.5, 0.5]);
        let p = solve_box_qp(&b, &g, &lo, &hi);
        let model = |p0: f64, p1: f64| g[0] * p0 + g[1] * p1 + 0.5 * (2.0 * p0 * p0 + p0 * p1 + p1 * p1);
        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            for j in 0..=1000 {
                best = best.min(model(-0.5 + i as f64 / 1000.0, -0.5 + j as f64 / 1000.0));
            }
        }
        assert!(model(p[0], p[1]) <= best + 1e-12);
    }
}
