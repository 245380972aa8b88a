use std::fs;
use std::path::{Path, PathBuf};

use hflow::flow::{hflow_rhs, read_trajectory, run_flow, write_trajectory, StepControls};
use hflow::grid::{make_chart, ChartSpec};
use hflow::metrics::{make_metric, MetricKind};
use hflow::par;
use hflow::scenario::{prepare, run_scenario, ScenarioConfig};
use hflow::Error;

fn scenarios() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn every_bundled_scenario_validates_and_prepares() {
    let all = scenarios();
    assert!(all.len() >= 8);
    for path in all {
        let cfg = ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let prep = prepare(&cfg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(prep.g0.chart().npoints(), prep.h.chart().npoints());
        let again = ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
    }
}

#[test]
fn sequential_and_parallel_kernels_agree_bitwise() {
    let chart = make_chart(&ChartSpec::torus(3, 16, 2.0 * std::f64::consts::PI)).unwrap();
    let g = make_metric(&chart, &MetricKind::ConformalSines { amplitude: 0.1 }).unwrap();
    let h = hflow::grid::MetricField::euclidean(chart);
    let a = par::sequential(|| hflow_rhs(&g, &h)).unwrap();
    let b = par::with_workers(4, || hflow_rhs(&g, &h)).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn trajectories_survive_persistence() {
    let chart = make_chart(&ChartSpec::torus(3, 8, 2.0 * std::f64::consts::PI)).unwrap();
    let g = make_metric(&chart, &MetricKind::PerturbedFlat { epsilon: 0.05 }).unwrap();
    let h = hflow::grid::MetricField::euclidean(chart);
    let controls = StepControls::default().uniform_snapshots(0.05, 2);
    let traj = run_flow(&g, &h, 0.05, &controls).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_trajectory(dir.path(), &traj).unwrap();
    let back = read_trajectory(dir.path()).unwrap();
    assert_eq!(back.times(), traj.times());
    for (a, b) in traj.snapshots.iter().zip(&back.snapshots) {
        assert_eq!(a.g.sup_diff(&b.g).unwrap(), 0.0);
    }
}

#[test]
fn rerunning_a_scenario_reproduces_every_artifact_but_the_log() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/perturbed-flat.json");
    let cfg = ScenarioConfig::load(&path).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_scenario(&cfg, a.path()).unwrap();
    let sb = run_scenario(&cfg, b.path()).unwrap();
    assert_eq!(sa, sb);
    for f in &sa.outputs {
        if f == "run.log" {
            continue;
        }
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn referential_errors_name_their_field() {
    let text = r#"{
        "version": 1,
        "name": "x",
        "chart": {"kind": "torus", "dim": 3, "shape": [8], "extent": [1.0]},
        "metric": {"family": "smooth", "metric": {"kind": "flat"}},
        "diagnostics": {"codim": {"eps": [0.1, 0.2, 0.4, 0.8]}}
    }"#;
    match ScenarioConfig::from_json(text) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "diagnostics.codim"),
        other => panic!("expected a config error, got {other:?}"),
    }
    let af_on_torus = text.replace(r#""diagnostics": {"codim": {"eps": [0.1, 0.2, 0.4, 0.8]}}"#, r#""flow": {"t_end": 0.1}, "diagnostics": {"mass": {"radii": [1, 2, 3]}}"#);
    match ScenarioConfig::from_json(&af_on_torus) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "diagnostics.mass"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
