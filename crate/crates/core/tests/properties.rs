use std::sync::Arc;

use proptest::prelude::*;

use hflow::afmass::gauss_legendre;
use hflow::curvature::scalar_curvature;
use hflow::diagnostics::{linear_fit, monotonicity_violation};
use hflow::flow::hflow_rhs;
use hflow::grid::io::{read_field, write_field};
use hflow::grid::{make_chart, ChartSpec, GridChart, MetricField};
use hflow::linalg::{sym_index, sym_pairs};
use hflow::metrics::{make_metric, MetricKind};
use hflow::scenario::ScenarioConfig;

fn torus(points: usize) -> Arc<GridChart> {
    make_chart(&ChartSpec::torus(3, points, 2.0 * std::f64::consts::PI)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn packed_index_is_a_bijection(n in 3usize..=4) {
        let pairs = sym_pairs(n);
        prop_assert_eq!(pairs.len(), n * (n + 1) / 2);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            prop_assert!(i <= j);
            prop_assert_eq!(sym_index(i, j, n), k);
            prop_assert_eq!(sym_index(j, i, n), k);
        }
    }

    #[test]
    fn field_files_roundtrip_bitwise(eps in -0.2f64..0.2, axis in 0usize..3, comp in 0usize..3) {
        let chart = torus(8);
        let g = make_metric(&chart, &MetricKind::DiagonalSine { epsilon: eps, axis, component: comp }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.field");
        write_field(&path, &g).unwrap();
        let back: MetricField = read_field(&path).unwrap();
        prop_assert!(g.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn scalar_curvature_scales_inversely(amp in 0.02f64..0.2, c in 0.5f64..2.0) {
        let chart = torus(12);
        let g = make_metric(&chart, &MetricKind::ConformalSines { amplitude: amp }).unwrap();
        let r = scalar_curvature(&g).unwrap();
        let rc = scalar_curvature(&g.scaled(c)).unwrap();
        let scale = r.sup_abs().max(1e-12);
        for p in 0..chart.npoints() {
            prop_assert!((rc.value(p) * c - r.value(p)).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn curvature_commutes_with_lattice_shifts(amp in 0.02f64..0.2, s0 in -5isize..5, s1 in -5isize..5) {
        let chart = torus(12);
        let g = make_metric(&chart, &MetricKind::ConformalSines { amplitude: amp }).unwrap();
        let shift = [s0, s1, 0];
        let a = scalar_curvature(&g.shifted(&shift)).unwrap();
        let b = scalar_curvature(&g).unwrap().shifted(&shift);
        prop_assert!(a.sup_diff(&b).unwrap() <= 1e-13);
    }

    #[test]
    fn rhs_vanishes_for_constant_metrics(d0 in 0.5f64..2.0, d1 in 0.5f64..2.0, d2 in 0.5f64..2.0) {
        let chart = torus(8);
        let g = make_metric(&chart, &MetricKind::ConstantDiag { diag: vec![d0, d1, d2] }).unwrap();
        let rhs = hflow_rhs(&g, &MetricField::euclidean(chart)).unwrap();
        prop_assert!(rhs.sup_abs() == 0.0);
    }

    #[test]
    fn weighted_nonincreasing_series_has_no_violation(
        steps in proptest::collection::vec(0.0f64..1.0, 3..10),
        a in 0.05f64..1.0,
    ) {
        let times: Vec<f64> = (1..=steps.len()).map(|k| 0.01 * k as f64).collect();
        let mut level = 10.0;
        let values: Vec<f64> = times
            .iter()
            .zip(&steps)
            .map(|(t, d)| {
                level *= 1.0 - 0.5 * d;
                level * t.powf(a)
            })
            .collect();
        prop_assert!(monotonicity_violation(&times, &values, a) <= 1e-12 * 10.0);
        let rising: Vec<f64> = values.iter().zip(&times).map(|(v, t)| v + 5.0 * t).collect();
        prop_assert!(monotonicity_violation(&times, &rising, a) >= 0.0);
    }

    #[test]
    fn linear_fit_recovers_lines(m in -5.0f64..5.0, b in -5.0f64..5.0, n in 3usize..12) {
        let x: Vec<f64> = (0..n).map(|k| k as f64 * 0.7 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|x| m * x + b).collect();
        let (fm, fb) = linear_fit(&x, &y).unwrap();
        prop_assert!((fm - m).abs() < 1e-10 && (fb - b).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_weights_are_positive(m in 2usize..40) {
        let (x, w) = gauss_legendre(m);
        prop_assert!(w.iter().all(|w| *w > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        prop_assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn scenario_configs_roundtrip(t_end in 0.01f64..1.0, sigma0 in -3.0f64..=0.0, amp in 0.0f64..0.1, shape in 8usize..40) {
        let text = format!(r#"{{
            "version": 1,
            "name": "prop",
            "chart": {{"kind": "torus", "dim": 3, "shape": [{shape}], "extent": [6.0]}},
            "metric": {{"family": "smooth", "metric": {{"kind": "conformal_sines", "amplitude": {amp}}}}},
            "flow": {{"t_end": {t_end}, "sigma0": {sigma0}}},
            "diagnostics": {{"monotonicity": {{}}, "c0": {{"away_radius": 0.5}}}}
        }}"#);
        let cfg = ScenarioConfig::from_json(&text).unwrap();
        let again = ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.to_json().unwrap(), again.to_json().unwrap());
    }
}
