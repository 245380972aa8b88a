use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hflow::afmass::{mass_extrapolate, MassProbe};
use hflow::curvature::curvature_package;
use hflow::flow::{read_trajectory, run_flow, write_trajectory};
use hflow::grid::io::{read_field, write_field, write_mask};
use hflow::grid::MetricField;
use hflow::scenario::{default_out_dir, diagnose_trajectory, prepare, run_scenario, ScenarioConfig, ScenarioSummary};
use hflow::singular::codimension_fit;
use hflow::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "hflow", version, about = "Ricci-DeTurck flow scenarios on grid charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Reserved; no current code path is random.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct ConfigOut {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the initial metric (and mask) of a scenario.
    MakeMetric(ConfigOut),
    /// Curvature package of a metric field file.
    Curvature {
        #[arg(long)]
        metric: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the flow of a scenario and store the trajectory.
    Flow(ConfigOut),
    /// Evaluate the configured checks on a stored trajectory.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extrapolated ADM mass of a metric field file.
    Mass {
        #[arg(long)]
        metric: PathBuf,
        /// Comma-separated sphere radii; defaults to fractions of the half-width.
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fitted codimension of the singular set of a scenario.
    Codim(ConfigOut),
    /// Full scenario pipeline: construct, flow, diagnose, summarize.
    Run(ConfigOut),
}

/// Outcome of a successful command: whether every check passed.
type Outcome = Result<bool>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::new().parse_filters(level).init();
    log::debug!("seed {} (unused)", cli.seed);
    let workers = cli.workers;
    match hflow::par::with_workers(workers, move || dispatch(cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::MakeMetric(a) => make_metric(&a),
        Command::Curvature { metric, out } => curvature(&metric, out.as_deref()),
        Command::Flow(a) => flow(&a),
        Command::Diagnose { config, trajectory, out } => diagnose(&config, &trajectory, out),
        Command::Mass { metric, radii, out } => mass(&metric, radii, out.as_deref()),
        Command::Codim(a) => codim(&a),
        Command::Run(a) => run(&a),
    }
}

fn out_dir(cfg: &ScenarioConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| default_out_dir(cfg))
}

fn make_metric(a: &ConfigOut) -> Outcome {
    let cfg = ScenarioConfig::load(&a.config)?;
    let prep = prepare(&cfg)?;
    let dir = out_dir(&cfg, &a.out);
    fs::create_dir_all(&dir)?;
    write_field(&dir.join("g0.field"), &prep.g0)?;
    if let Some(m) = &prep.mask {
        write_mask(&dir.join("mask.field"), &prep.chart, m)?;
    }
    println!("wrote {}", dir.join("g0.field").display());
    Ok(true)
}

fn curvature(metric: &Path, out: Option<&Path>) -> Outcome {
    let g: MetricField = read_field(metric)?;
    let pkg = curvature_package(&g)?;
    let live: Vec<f64> = (0..pkg.scalar.npoints())
        .filter(|&p| !pkg.scalar.is_masked(p))
        .map(|p| pkg.scalar.value(p))
        .collect();
    let sup = live.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = hflow::par::pairwise_sum(&live) / live.len().max(1) as f64;
    println!("sup_abs_scalar = {sup:e}");
    println!("mean_scalar = {mean:e}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_field(&dir.join("scalar.field"), &pkg.scalar)?;
        write_field(&dir.join("ricci.field"), &pkg.ricci)?;
        write_field(&dir.join("christoffel.field"), &pkg.christoffel)?;
        write_field(&dir.join("riemann_norm.field"), &pkg.riemann_norm)?;
        let summary = serde_json::json!({ "sup_abs_scalar": sup, "mean_scalar": mean });
        fs::write(dir.join("curvature.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(true)
}

fn flow(a: &ConfigOut) -> Outcome {
    let cfg = ScenarioConfig::load(&a.config)?;
    let flow = cfg
        .flow
        .as_ref()
        .ok_or_else(|| Error::Config {
            path: "flow".into(),
            message: "the flow command needs a flow section".into(),
        })?;
    let prep = prepare(&cfg)?;
    let traj = run_flow(&prep.g0, &prep.h, flow.t_end, &flow.controls)?;
    let dir = out_dir(&cfg, &a.out);
    write_trajectory(&dir, &traj)?;
    println!(
        "flowed to t = {} in {} steps; trajectory in {}",
        traj.last().t,
        traj.steps.len(),
        dir.display()
    );
    Ok(true)
}

fn report(summary: &ScenarioSummary, dir: &Path) -> Outcome {
    for c in &summary.checks {
        println!("{} {} value={:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
    }
    println!("summary: {}", dir.join(hflow::scenario::SUMMARY).display());
    Ok(summary.pass)
}

fn diagnose(config: &Path, trajectory: &Path, out: Option<PathBuf>) -> Outcome {
    let cfg = ScenarioConfig::load(config)?;
    let traj = read_trajectory(trajectory)?;
    let dir = out_dir(&cfg, &out);
    let summary = diagnose_trajectory(&cfg, &traj, &dir)?;
    report(&summary, &dir)
}

fn mass(metric: &Path, radii: Vec<f64>, out: Option<&Path>) -> Outcome {
    let g: MetricField = read_field(metric)?;
    let radii = if radii.is_empty() {
        let hw = g.chart().half_width();
        vec![0.375 * hw, 0.5 * hw, 0.625 * hw, 0.75 * hw]
    } else {
        radii
    };
    let fit = mass_extrapolate(&g, &radii)?;
    let probe = MassProbe::new(&g)?;
    for r in &radii {
        println!("mass(r = {r}) = {:.10}", probe.mass(*r)?.mass);
    }
    println!("extrapolated_mass = {:.10}", fit.m_inf);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("mass.json"), serde_json::to_string_pretty(&fit)? + "\n")?;
    }
    Ok(true)
}

fn codim(a: &ConfigOut) -> Outcome {
    let cfg = ScenarioConfig::load(&a.config)?;
    let spec = cfg.diagnostics.codim.as_ref().ok_or_else(|| Error::Config {
        path: "diagnostics.codim".into(),
        message: "the codim command needs a codim section".into(),
    })?;
    let prep = prepare(&cfg)?;
    let sset = prep.sset.as_ref().expect("validated: singular section");
    let fit = codimension_fit(sset, &MetricField::euclidean(prep.chart.clone()), &spec.eps)?;
    println!("codim = {:.6}", fit.slope);
    println!("intercept = {:.6}", fit.intercept);
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("codim.json"), serde_json::to_string_pretty(&fit)? + "\n")?;
    }
    let ok = spec.min.is_none_or(|m| fit.slope >= m) && spec.max.is_none_or(|m| fit.slope <= m);
    Ok(ok)
}

fn run(a: &ConfigOut) -> Outcome {
    let cfg = ScenarioConfig::load(&a.config)?;
    let dir = out_dir(&cfg, &a.out);
    let summary = run_scenario(&cfg, &dir)?;
    report(&summary, &dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn radii_parse_as_a_list() {
        let cli = Cli::try_parse_from(["hflow", "mass", "--metric", "g.field", "--radii", "1,2.5,4", "--workers", "2"]).unwrap();
        assert_eq!(cli.workers, 2);
        match cli.command {
            Command::Mass { radii, .. } => assert_eq!(radii, vec![1.0, 2.5, 4.0]),
            other => panic!("{other:?}"),
        }
    }
}
