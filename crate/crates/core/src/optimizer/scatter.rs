//! Scatter search over a box, with quasi-Newton refinement of the incumbent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sqp;
use super::{Bounds, OptOptions, OptResult, Recorder};
use crate::error::Result;

/// Combination coefficients: `a + c (b - a)` for each reference-set pair.
const COMBINATIONS: [f64; 4] = [-0.25, 0.25, 0.5, 0.75];
/// Unit-box distance under which two solutions count as the same.
const SAME_POINT: f64 = 1e-9;

#[derive(Clone)]
struct Member {
    s: Vec<f64>,
    value: f64,
    fresh: bool,
}

/// Global maximization over `bounds`; deterministic for a fixed `opts.seed`.
pub fn scatter_search<F>(f: &mut F, bounds: &Bounds, opts: &OptOptions) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    sqp::check_problem(&bounds.midpoint(), bounds, opts)?;
    let mut rec = Recorder::new(f, opts.max_evals);
    let outcome = run(&mut rec, bounds, opts);
    rec.finish(outcome)
}

fn run<F>(rec: &mut Recorder<'_, F>, bounds: &Bounds, opts: &OptOptions) -> Result<bool>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pool = Vec::with_capacity(opts.population);
    for s in latin_hypercube(opts.population, bounds.dim(), &mut rng) {
        let value = rec.eval(&bounds.from_unit(&s))?;
        pool.push(Member { s, value, fresh: true });
    }
    let mut refset = initial_refset(pool, opts.ref_set);
    let mut incumbent = refset[0].value;
    if let Some(m) = refine(rec, &refset[0], bounds, opts)? {
        refset = update_refset(refset, vec![m], opts.ref_set);
        incumbent = refset[0].value;
    }

    loop {
        let mut trials = Vec::new();
        for i in 0..refset.len() {
            for j in i + 1..refset.len() {
                if !(refset[i].fresh || refset[j].fresh) {
                    continue;
                }
                for c in COMBINATIONS {
                    let s: Vec<f64> = refset[i]
                        .s
                        .iter()
                        .zip(&refset[j].s)
                        .map(|(a, b)| (a + c * (b - a)).clamp(0.0, 1.0))
                        .collect();
                    if refset.iter().chain(&trials).any(|m| distance(&m.s, &s) < SAME_POINT) {
                        continue;
                    }
                    let value = rec.eval(&bounds.from_unit(&s))?;
                    trials.push(Member { s, value, fresh: true });
                }
            }
        }
        for m in &mut refset {
            m.fresh = false;
        }
        if trials.is_empty() {
            return Ok(true);
        }
        let round_best = trials.iter().map(|m| m.value).fold(f64::NEG_INFINITY, f64::max);
        if round_best > incumbent {
            let top = trials.iter().find(|m| m.value == round_best).cloned();
            if let Some(top) = top {
                if let Some(m) = refine(rec, &top, bounds, opts)? {
                    trials.push(m);
                }
            }
        }
        refset = update_refset(refset, trials, opts.ref_set);
        let improvement = refset[0].value - incumbent;
        let converged = improvement <= opts.ftol * incumbent.abs().max(f64::MIN_POSITIVE);
        incumbent = incumbent.max(refset[0].value);
        if converged {
            return Ok(true);
        }
    }
}

/// Local search from `start`; returns the best point it found when that beats `start`.
fn refine<F>(rec: &mut Recorder<'_, F>, start: &Member, bounds: &Bounds, opts: &OptOptions) -> Result<Option<Member>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let before = rec.evals();
    let x0 = bounds.from_unit(&start.s);
    let outcome = rec.capped(opts.local_max_evals, |r| sqp::run(r, &x0, Some(start.value), bounds, opts));
    match outcome {
        Ok(_) => {}
        // only the nested cap ran out; the global budget is checked by the next evaluation
        Err(e) if super::is_budget(&e) && rec.evals() < opts.max_evals => {}
        Err(e) => return Err(e),
    }
    let best = rec.trace_since(before).max_by(|a, b| a.value.total_cmp(&b.value));
    Ok(best.filter(|t| t.value > start.value).map(|t| Member {
        s: bounds.to_unit(&t.x),
        value: t.value,
        fresh: true,
    }))
}

/// Stratified sample: each variable's `n` strata are used once, in shuffled order.
fn latin_hypercube(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    for k in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, stratum) in points.iter_mut().zip(strata) {
            p[k] = (stratum as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}

/// Half the set by quality, the rest by greedy max-min distance.
fn initial_refset(mut pool: Vec<Member>, size: usize) -> Vec<Member> {
    sort_by_value(&mut pool);
    let size = size.min(pool.len());
    let mut refset: Vec<Member> = pool.drain(..size / 2).collect();
    while refset.len() < size {
        let (pick, _) = pool
            .iter()
            .enumerate()
            .map(|(i, m)| (i, refset.iter().map(|r| distance(&r.s, &m.s)).fold(f64::INFINITY, f64::min)))
            .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        refset.push(pool.remove(pick));
    }
    sort_by_value(&mut refset);
    refset
}

/// Keeps the `size` best distinct solutions of the old set and the newcomers.
fn update_refset(old: Vec<Member>, newcomers: Vec<Member>, size: usize) -> Vec<Member> {
    let mut all = old;
    all.extend(newcomers);
    sort_by_value(&mut all);
    let mut next: Vec<Member> = Vec::with_capacity(size);
    for m in all {
        if next.len() == size {
            break;
        }
        if next.iter().all(|n| distance(&n.s, &m.s) >= SAME_POINT) {
            next.push(m);
        }
    }
    next
}

/// Descending by value; the sort is stable so earlier solutions win ties.
fn sort_by_value(v: &mut [Member]) {
    v.sort_by(|a, b| b.value.total_cmp(&a.value));
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::sqp_local;

    fn two_basin(x: &[f64]) -> f64 {
        let tall = (-(x[0] - 31.0).powi(2) / 2.0).exp();
        let short = 0.6 * (-(x[0] - 12.0).powi(2) / 2.0).exp();
        tall.max(short)
    }

    #[test]
    fn latin_hypercube_uses_every_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(10, 3, &mut rng);
        for k in 0..3 {
            let mut cells: Vec<usize> = pts.iter().map(|p| (p[k] * 10.0) as usize).collect();
            cells.sort();
            assert_eq!(cells, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn refset_mixes_quality_and_diversity() {
        let pool: Vec<Member> = (0..10)
            .map(|i| Member {
                s: vec![i as f64 / 100.0],
                value: i as f64,
                fresh: true,
            })
            .chain(std::iter::once(Member {
                s: vec![0.9],
                value: -5.0,
                fresh: true,
            }))
            .collect();
        let r = initial_refset(pool, 4);
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].value, 9.0);
        assert!(r.iter().any(|m| m.s == vec![0.9]));
    }

    #[test]
    fn finds_taller_peak() {
        let b = Bounds::new(vec![0.0], vec![40.0]).unwrap();
        let mut f = |x: &[f64]| Ok(two_basin(x));
        let r = scatter_search(&mut f, &b, &OptOptions::default()).unwrap();
        assert!((r.best_x[0] - 31.0).abs() < 1e-3, "{:?}", r.best_x);
        let local = sqp_local(&mut f, &[10.0], &b, &OptOptions::default()).unwrap();
        assert!((local.best_x[0] - 12.0).abs() < 1e-3);
    }

    #[test]
    fn convex_quadratic_agrees_with_local_search() {
        let b = Bounds::new(vec![-5.0, -5.0, -5.0], vec![5.0, 5.0, 5.0]).unwrap();
        let mut f = |x: &[f64]| Ok(-(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 2.0).powi(2) - (x[2] - 0.5).powi(2));
        let ss = scatter_search(&mut f, &b, &OptOptions::default()).unwrap();
        let local = sqp_local(&mut f, &b.midpoint(), &b, &OptOptions::default()).unwrap();
        for (a, c) in ss.best_x.iter().zip(&local.best_x) {
            assert!((a - c).abs() < 1e-4);
        }
        assert!(ss.converged);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let b = Bounds::new(vec![0.0, -1.0], vec![40.0, 1.0]).unwrap();
        let mut f = |x: &[f64]| Ok(two_basin(x) - x[1] * x[1]);
        let opts = OptOptions {
            seed: 17,
            ..OptOptions::default()
        };
        let a = scatter_search(&mut f, &b, &opts).unwrap();
        let c = scatter_search(&mut f, &b, &opts).unwrap();
        assert_eq!(a.trace, c.trace);
        let other = scatter_search(&mut f, &b, &OptOptions { seed: 18, ..opts }).unwrap();
        assert_ne!(a.trace, other.trace);
    }

    #[test]
    fn respects_budget() {
        let b = Bounds::new(vec![0.0], vec![40.0]).unwrap();
        let mut f = |x: &[f64]| Ok(two_basin(x));
        let opts = OptOptions {
            max_evals: 45,
            ..OptOptions::default()
        };
        let r = scatter_search(&mut f, &b, &opts).unwrap();
        assert_eq!(r.evals, 45);
        assert!(!r.converged);
    }
}
