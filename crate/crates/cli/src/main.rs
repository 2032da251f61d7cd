use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaitopt_core::com::com_at_touchdown;
use gaitopt_core::walk::{plan_csv, region_records, run_walk, sweep, WalkConfig, WalkInput};
use gaitopt_core::{Error, TimingVector, Vec2};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gaitopt", version, about = "Heel-to-toe ICP walking planner with step timing adjustment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the ICP plan of a walk and print its summary.
    Plan {
        input: PathBuf,
        /// Directory for plan.csv, corners.json and regions.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the walk sequencer and print the per-step report.
    Walk {
        input: PathBuf,
        /// Keep the input timing and only measure the knees.
        #[arg(long)]
        no_adjust: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Optimizer iterations as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Walk the step-length sweep and print the results grid as CSV.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6")]
        lengths: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.4,0.5")]
        targets: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Io(String),
    Invalid(Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }

    fn report(&self) -> serde_json::Value {
        match self {
            Failure::Io(msg) => serde_json::json!({ "kind": "io", "error": msg }),
            Failure::Invalid(e) => serde_json::json!({ "kind": kind(e), "error": e.to_string() }),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e)
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::EmptyRegion => "empty_region",
        Error::Parse(_) => "parse",
        Error::InvalidConfig(_) => "invalid_config",
        Error::InvalidPlan(_) | Error::MismatchedLengths { .. } => "invalid_plan",
        Error::InvalidParams(_) => "invalid_params",
        Error::Qp(_) => "qp",
        _ => "domain",
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<WalkConfig, Failure> {
    let config = match path {
        Some(p) => WalkConfig::from_json(&read(p)?)?,
        None => WalkConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

/// Writes to stdout, ignoring a reader that went away.
fn emit(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{text}");
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

#[derive(Serialize)]
struct PlanSummary {
    steps: usize,
    swings: usize,
    total_duration: f64,
    initial_icp: Vec2,
    final_objective: Vec2,
    touchdown_com: Vec<Vec2>,
    corner_points: Vec<Vec2>,
}

fn plan(input: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<u8, Failure> {
    let config = load_config(config)?;
    let walk = WalkInput::from_json(&read(input)?)?;
    let icp = walk.icp_plan()?;
    let x0 = walk.start_com(&icp);
    let plan = walk.plan();
    let touchdown_com = (0..plan.swing_count()).map(|s| com_at_touchdown(&icp, x0, s)).collect::<Result<_, _>>()?;
    let summary = PlanSummary {
        steps: plan.step_count(),
        swings: plan.swing_count(),
        total_duration: icp.total_duration,
        initial_icp: icp.initial_icp(),
        final_objective: plan.final_objective().expect("validated plan has footsteps"),
        touchdown_com,
        corner_points: icp.corner_points.clone(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        write(&dir.join("plan.csv"), &plan_csv(&icp, x0, config.sample_dt))?;
        write(&dir.join("corners.json"), &to_json(&icp.corner_points))?;
        let mut regions = String::new();
        for record in region_records(&plan, &walk.robot, config.hip_height_model)? {
            regions.push_str(&serde_json::to_string(&record).expect("regions serialize"));
            regions.push('\n');
        }
        write(&dir.join("regions.jsonl"), &regions)?;
    }
    emit(&to_json(&summary));
    Ok(0)
}

fn walk(
    input: &Path,
    no_adjust: bool,
    config: Option<&Path>,
    csv: Option<&Path>,
    trace: Option<&Path>,
) -> Result<u8, Failure> {
    let config = load_config(config)?;
    let walk = WalkInput::from_json(&read(input)?)?;
    let report = run_walk(&walk, &config, !no_adjust)?;
    if let Some(path) = csv {
        write(path, &report.to_csv())?;
    }
    if let Some(path) = trace {
        write(path, &report.trace_jsonl())?;
    }
    emit(&to_json(&report));
    Ok(if report.summary.all_converged { 0 } else { 3 })
}

fn sweep_grid(lengths: &[f64], targets: &[f64], config: Option<&Path>) -> Result<u8, Failure> {
    let config = load_config(config)?;
    let cells = sweep(lengths, targets, &config)?;
    let mut out =
        String::from("step_length,theta_max,knee_bend_before,knee_bend_after,converged,iterations,total_abs_dt");
    for name in TimingVector::NAMES {
        out.push_str(",dT_");
        out.push_str(name);
    }
    out.push('\n');
    for c in &cells {
        let first = c.steps.first().map(|s| s.delta_t()).unwrap_or([0.0; TimingVector::LEN]);
        let dt: Vec<String> = first.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.step_length,
            c.theta_max,
            c.knee_bend_before,
            c.knee_bend_after,
            c.converged,
            c.iterations,
            c.total_abs_delta_t,
            dt.join(",")
        ));
    }
    emit(out.trim_end());
    Ok(if cells.iter().all(|c| c.converged) { 0 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Plan { input, out, config } => plan(input, out.as_deref(), config.as_deref()),
        Command::Walk { input, no_adjust, config, csv, trace } => {
            walk(input, *no_adjust, config.as_deref(), csv.as_deref(), trace.as_deref())
        }
        Command::Sweep { lengths, targets, config } => sweep_grid(lengths, targets, config.as_deref()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("{}", failure.report());
            ExitCode::from(failure.exit_code())
        }
    }
}
