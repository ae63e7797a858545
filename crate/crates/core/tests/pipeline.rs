use std::sync::OnceLock;

use savo::geometry::{Intrinsics, SfpParams};
use savo::integrator::GridSpec;
use savo::io::{Dataset, ScenarioConfig, SfpDeg};
use savo::metrics::{MetricId, Roi};
use savo::optimizer::{grid_search, make_sfp_objective, scatter_search, sqp_local, Bounds, OptOptions};
use savo::pipeline::{benchmark_integration, range_values, sweep, SweepVar};

/// The default forest at a quarter of the camera resolution and 36 views.
fn small() -> &'static (Dataset, GridSpec, Roi) {
    static DS: OnceLock<(Dataset, GridSpec, Roi)> = OnceLock::new();
    DS.get_or_init(|| {
        let mut cfg = ScenarioConfig::conifer_sim();
        cfg.aperture.count = 36;
        cfg.intrinsics = Intrinsics::centered(27.5, 80, 64).unwrap();
        cfg.grid = GridSpec::new([0.0, 0.0], [12.0, 12.0], 0.1).unwrap();
        let roi = cfg.roi().unwrap();
        (Dataset::simulate(&cfg).unwrap(), cfg.grid, roi)
    })
}

#[test]
fn optimizers_report_every_evaluation() {
    let (ds, grid, roi) = small();
    let bounds = Bounds::sfp_degrees([26.0, -5.0, -180.0], [34.0, 5.0, 180.0]).unwrap();
    let opts = OptOptions {
        max_evals: 120,
        ..OptOptions::sfp()
    };

    let obj = make_sfp_objective(ds, MetricId::Glv, grid, roi).unwrap();
    let r = sqp_local(&mut obj.as_fn(), &bounds.midpoint(), &bounds, &opts).unwrap();
    assert_eq!(r.evals, obj.evals());
    assert_eq!(r.trace.len(), r.evals);

    let obj = make_sfp_objective(ds, MetricId::Glv, grid, roi).unwrap();
    let r = grid_search(&mut obj.as_fn(), &bounds, &[3, 2, 2]).unwrap();
    assert_eq!((r.evals, obj.evals()), (12, 12));

    let obj = make_sfp_objective(ds, MetricId::Glv, grid, roi).unwrap();
    let r = scatter_search(&mut obj.as_fn(), &bounds, &opts).unwrap();
    assert_eq!(r.evals, obj.evals());
    assert!(r.evals <= opts.max_evals);
    // the recorded best is a real evaluation
    let again = obj.eval_x(&r.best_x).unwrap();
    assert_eq!(again, r.best_value);
}

#[test]
fn objective_matches_direct_integration() {
    let (ds, grid, roi) = small();
    let obj = make_sfp_objective(ds, MetricId::Tenengrad, grid, roi).unwrap();
    let sfp = SfpParams::from_degrees(29.0, 2.0, 45.0).unwrap();
    let img = ds.integrate(&sfp, &grid.crop(roi).unwrap()).unwrap();
    let direct = savo::metrics::focus_metric(MetricId::Tenengrad, &img, &Roi::full(img.width, img.height)).unwrap();
    assert_eq!(obj.eval(&sfp).unwrap(), direct);
    assert_eq!(obj.counter().load(std::sync::atomic::Ordering::Relaxed), 1);
}

#[test]
fn d_sweep_has_truth_and_peaks_near_the_ground() {
    let (ds, grid, roi) = small();
    let values = range_values(26.0, 34.0, 1.0).unwrap();
    let at = SfpDeg {
        d: 30.0,
        theta_deg: 0.0,
        phi_deg: 0.0,
    };
    let table = sweep(ds, SweepVar::D, &values, at, &[MetricId::Glv], grid, roi).unwrap();
    assert_eq!(table.rows.len(), 9);
    let truth = table.truth_column().unwrap();
    assert!(truth.iter().all(|v| (0.0..=1.0).contains(v)));
    let best = (0..truth.len()).fold(0, |b, i| if truth[i] > truth[b] { i } else { b });
    assert_eq!(table.rows[best].vars[0], 30.0);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let (ds, grid, _) = small();
    let sfp = SfpParams::from_degrees(27.0, 4.0, 30.0).unwrap();
    let run = |k| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
        pool.install(|| ds.integrate(&sfp, grid).unwrap())
    };
    let one = run(1);
    for k in [2, 3, 8] {
        let other = run(k);
        assert!(one.mean.iter().zip(&other.mean).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(one.count, other.count);
    }
}

#[test]
fn benchmark_percentiles_are_ordered() {
    let (ds, grid, _) = small();
    let s = benchmark_integration(ds, &SfpParams::level(30.0).unwrap(), grid, 5).unwrap();
    assert_eq!(s.samples.len(), 5);
    assert!(s.min <= s.median && s.median <= s.p95);
    assert_eq!(s.min, *s.samples.iter().min().unwrap());
    assert!(benchmark_integration(ds, &SfpParams::level(30.0).unwrap(), grid, 0).is_err());
}
