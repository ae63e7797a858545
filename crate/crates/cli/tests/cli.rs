use std::fs;
use std::path::{Path, PathBuf};

use savo_cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn savo(args: &[&str]) -> i32 {
    run(std::iter::once("savo").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SCENARIO: &str = r#"{
  "scene": {
    "ground_background": 0.2,
    "ground_noise_stddev": 0.05,
    "targets": [{"shape": {"disk": {"radius": 0.5}}, "center": [1.0, -1.0], "value": 0.9}],
    "layers": [{"height": 15, "density": 0.5, "cell_size": 0.25, "value_mean": 0.35, "value_stddev": 0.05, "seed": 3}],
    "seed": 7
  },
  "aperture": {"count": 16, "area": 100, "altitude": 30, "jitter": 0.2, "jitter_seed": 1},
  "intrinsics": {"fx": 20, "fy": 20, "cx": 19.5, "cy": 15.5, "width": 40, "height": 32},
  "grid": {"center": [0, 0], "extent": [6, 6], "resolution": 0.1}
}
"#;

fn small_dataset(dir: &Path) -> PathBuf {
    let scenario = dir.join("small.json");
    fs::write(&scenario, SMALL_SCENARIO).unwrap();
    let out = dir.join("ds");
    assert_eq!(savo(&["simulate", "--scenario", s(&scenario), "--out", s(&out)]), EXIT_OK);
    out
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(savo(&["--help"]), EXIT_OK);
    assert_eq!(savo(&["--version"]), EXIT_OK);
    assert_eq!(savo(&["optimize", "--help"]), EXIT_OK);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(savo(&[]), EXIT_USAGE);
    assert_eq!(savo(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(savo(&["integrate", "--dataset", "x", "--d", "thirty", "--out", "y"]), EXIT_USAGE);
    assert_eq!(savo(&["validate-model", "--grid", "fine", "--out", "x.csv"]), EXIT_USAGE);
    assert_eq!(savo(&["--workers", "0", "validate-model", "--out", "x.csv"]), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let out = dir.path().join("t.csv");
    let bad = [
        vec!["sweep", "--dataset", s(&ds), "--var", "psi", "--range", "1:2:1"],
        vec!["sweep", "--dataset", s(&ds), "--range", "1:2"],
        vec!["sweep", "--dataset", s(&ds), "--range", "1:2:1", "--metrics", "glv,blur"],
        vec!["optimize", "--dataset", s(&ds), "--method", "sqp", "--bounds", "38:22,-10:10,-180:180"],
        vec!["optimize", "--dataset", s(&ds), "--method", "sqp", "--x0", "50,0,0"],
        vec!["optimize", "--dataset", s(&ds), "--method", "grid", "--steps", "3,0,1"],
    ];
    for args in bad {
        let mut args = args;
        args.extend(["--out", s(&out)]);
        assert_eq!(savo(&args), EXIT_USAGE, "{args:?}");
        assert!(!out.exists(), "{args:?} left output behind");
    }
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("i.pgm");
    assert_eq!(savo(&["integrate", "--dataset", s(&missing), "--d", "30", "--out", s(&out)]), EXIT_DATA);
    assert_eq!(savo(&["simulate", "--scenario", s(&missing), "--out", s(&out)]), EXIT_DATA);
    assert!(!out.exists());

    let broken = dir.path().join("broken.json");
    fs::write(&broken, r#"{"scene": {"ground_background": 0.2}, "apperture": {}}"#).unwrap();
    assert_eq!(savo(&["simulate", "--scenario", s(&broken), "--out", s(&out)]), EXIT_DATA);
}

#[test]
fn commands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    for f in ["dataset.json", "poses.csv", "scenario.json", "images/img0015.pgm"] {
        assert!(ds.join(f).is_file(), "{f}");
    }

    let img = dir.path().join("focus.pgm");
    assert_eq!(savo(&["integrate", "--dataset", s(&ds), "--d", "30", "--theta", "-2", "--phi", "10", "--out", s(&img)]), 0);
    let integral = savo::io::read_pgm16(&img).unwrap();
    let count = savo::io::read_pgm16(&dir.path().join("focus_count.pgm")).unwrap();
    assert_eq!((integral.width, integral.height), (60, 60));
    assert_eq!((count.width, count.height), (60, 60));

    let sweep = dir.path().join("sweep.csv");
    assert_eq!(savo(&["sweep", "--dataset", s(&ds), "--var", "d", "--range", "28:32:1", "--out", s(&sweep)]), 0);
    let text = fs::read_to_string(&sweep).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "d,glv,normalized_variance,squared_gradient,tenengrad,laplacian_energy,modified_laplacian,haar_detail_energy,true_visibility"
    );
    assert_eq!(lines.count(), 5);

    let trace = dir.path().join("trace.csv");
    let args = ["optimize", "--dataset", s(&ds), "--method", "grid", "--steps", "3,1,1", "--out", s(&trace)];
    assert_eq!(savo(&args), 0);
    let text = fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next().unwrap(), "eval_index,d,theta_deg,phi_deg,value");
    assert_eq!(text.lines().count(), 4);

    let model = dir.path().join("model.csv");
    assert_eq!(savo(&["--seed", "5", "validate-model", "--trials", "20000", "--out", s(&model)]), 0);
    assert_eq!(fs::read_to_string(&model).unwrap().lines().count(), 19);

    assert_eq!(savo(&["benchmark", "--dataset", s(&ds), "--repeats", "2"]), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(dir.path());
    let b = dir.path().join("ds2");
    assert_eq!(savo(&["simulate", "--scenario", s(&dir.path().join("small.json")), "--out", s(&b)]), 0);
    for f in ["dataset.json", "poses.csv", "scenario.json", "images/img0000.pgm", "images/img0009.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let outputs = |tag: &str, workers: &str| -> Vec<Vec<u8>> {
        let p = |name: &str| dir.path().join(format!("{tag}_{name}"));
        let (ss_out, sqp_out, cmp_out, img_out, model_out) = (p("ss.csv"), p("sqp.csv"), p("cmp.csv"), p("i.pgm"), p("m.csv"));
        let ss = ["--workers", workers, "--seed", "11", "optimize", "--dataset", s(&a), "--method", "ss"];
        let ss = [&ss[..], &["--bounds", "25:35,-5:5,-180:180", "--max-evals", "60", "--out", s(&ss_out)]].concat();
        assert_eq!(savo(&ss), 0);
        let sqp = ["--workers", workers, "optimize", "--dataset", s(&a), "--method", "sqp", "--bounds"];
        let sqp = [&sqp[..], &["26:34,-5:5,-90:90", "--out", s(&sqp_out)]].concat();
        assert_eq!(savo(&sqp), 0);
        let cmp = ["--workers", workers, "compare-metrics", "--dataset", s(&a), "--range", "28:32:2"];
        assert_eq!(savo(&[&cmp[..], &["--out", s(&cmp_out)]].concat()), 0);
        let int = ["--workers", workers, "integrate", "--dataset", s(&a), "--d", "29", "--out", s(&img_out)];
        assert_eq!(savo(&int), 0);
        let model = ["--workers", workers, "validate-model", "--trials", "5000", "--out", s(&model_out)];
        assert_eq!(savo(&model), 0);
        ["ss.csv", "sqp.csv", "cmp.csv", "i.pgm", "i_count.pgm", "m.csv"]
            .iter()
            .map(|n| fs::read(p(n)).unwrap())
            .collect()
    };
    let first = outputs("a", "1");
    assert_eq!(first, outputs("b", "1"));
    assert_eq!(first, outputs("c", "3"));
}
