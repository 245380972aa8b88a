use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stepper::{FlowState, FlowTrajectory, StepControls, StepRecord};
use crate::diagnostics::DiagnosticsSeries;
use crate::error::{Error, Result};
use crate::grid::io::{read_field, read_field_on, read_mask, write_field, write_mask};
use crate::grid::MetricField;

pub const MANIFEST: &str = "manifest.json";
pub const FLOW_CSV: &str = "flow.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryManifest {
    pub version: u32,
    pub times: Vec<f64>,
    pub snapshots: Vec<String>,
    pub background: String,
    #[serde(default)]
    pub mask: Option<String>,
    pub controls: StepControls,
    pub diagnostics: String,
}

pub fn snapshot_name(k: usize) -> String {
    format!("snapshot_{k:04}.field")
}

/// Write snapshots, background, mask, per-step CSV and the manifest into `dir`.
pub fn write_trajectory(dir: &Path, traj: &FlowTrajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (k, s) in traj.snapshots.iter().enumerate() {
        let name = snapshot_name(k);
        write_field(&dir.join(&name), &s.g)?;
        names.push(name);
    }
    write_field(&dir.join("background.field"), &traj.background)?;
    let mask = match traj.initial().g.mask() {
        Some(m) => {
            write_mask(&dir.join("mask.field"), traj.chart(), m)?;
            Some("mask.field".to_string())
        }
        None => None,
    };
    traj.step_series().write_csv(&dir.join(FLOW_CSV))?;
    let manifest = TrajectoryManifest {
        version: crate::grid::io::FORMAT_VERSION,
        times: traj.times(),
        snapshots: names,
        background: "background.field".into(),
        mask,
        controls: traj.controls.clone(),
        diagnostics: FLOW_CSV.into(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_trajectory(dir: &Path) -> Result<FlowTrajectory> {
    let manifest: TrajectoryManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.times.len() != manifest.snapshots.len() {
        return Err(Error::Format("manifest times and snapshots differ in length".into()));
    }
    let background: MetricField = read_field(&dir.join(&manifest.background))?;
    let chart = background.chart().clone();
    let mask = match &manifest.mask {
        Some(name) => {
            let (mc, m) = read_mask(&dir.join(name))?;
            if *mc != *chart {
                return Err(Error::Mismatch("mask chart differs from the background".into()));
            }
            Some(Arc::new(m))
        }
        None => None,
    };
    let mut snapshots = Vec::new();
    for (t, name) in manifest.times.iter().zip(&manifest.snapshots) {
        let g: MetricField = read_field_on(&dir.join(name), &chart)?;
        snapshots.push(FlowState {
            t: *t,
            g: g.with_mask(mask.clone()),
        });
    }
    let series = DiagnosticsSeries::read_csv(&dir.join(&manifest.diagnostics), "flow")?;
    let col = |n: &str| -> Result<Vec<f64>> {
        series
            .column(n)
            .map(|c| c.to_vec())
            .ok_or_else(|| Error::Format(format!("flow CSV lacks column `{n}`")))
    };
    let (vol, dist, dt, lo, hi) = (
        col("volume")?,
        col("sup_dist_to_g0")?,
        col("dt")?,
        col("min_eig_ratio")?,
        col("max_eig_ratio")?,
    );
    let steps = (0..series.len())
        .map(|i| StepRecord {
            t: series.times[i],
            volume: vol[i],
            sup_dist_to_g0: dist[i],
            dt: dt[i],
            min_eig_ratio: lo[i],
            max_eig_ratio: hi[i],
        })
        .collect();
    Ok(FlowTrajectory {
        background,
        snapshots,
        controls: manifest.controls,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::run_flow;
    use crate::grid::{make_chart, ChartSpec};

    #[test]
    fn trajectory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let chart = make_chart(&ChartSpec::torus(3, 8, 6.0)).unwrap();
        let g0 = MetricField::from_fn(chart.clone(), |x, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
            out[0] += 0.03 * x[1].sin();
        });
        let h = MetricField::euclidean(chart);
        let traj = run_flow(&g0, &h, 0.05, &StepControls::default().uniform_snapshots(0.05, 2)).unwrap();
        write_trajectory(dir.path(), &traj).unwrap();
        let back = read_trajectory(dir.path()).unwrap();
        assert_eq!(back.times(), traj.times());
        assert_eq!(back.steps, traj.steps);
        assert_eq!(back.controls, traj.controls);
        for (a, b) in back.snapshots.iter().zip(&traj.snapshots) {
            assert_eq!(a.g.data(), b.g.data());
        }
    }
}
