//! The `cam` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{
    emit_reports, emit_sweep, parse_event_file, run_batch, run_single, run_sweep, write_json, Aggregates, BatchReport,
    EntryStatus, EventRecord, Format, IoError, RunSettings, SweepKind, SCHEMA_VERSION,
};
use crate::conjunction::Constraint;
use crate::scvx::{boundary_sweep, ScvxConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

const FORMATS: [Format; 2] = [Format::Json, Format::Csv];

#[derive(Parser, Debug)]
#[command(name = "cam", version, about = "Fuel-optimal collision avoidance maneuver planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Safety requirement: pc=<p>, pcmax=<p> or miss=<km>.
    #[arg(long, default_value = "pcmax=1e-4", value_parser = parse_constraint)]
    constraint: Constraint,
    /// Start of the maneuver window, in orbits before closest approach.
    #[arg(long, default_value_t = 8.0)]
    lead_orbits: f64,
    /// Length of the maneuver window, in orbits.
    #[arg(long, default_value_t = 2.0)]
    window_orbits: f64,
    /// Spacing of impulse nodes (s).
    #[arg(long, default_value_t = 60.0)]
    dt: f64,
    /// Largest single impulse (m/s).
    #[arg(long, default_value_t = 6e-3)]
    dvmax: f64,
    /// Largest number of impulse nodes.
    #[arg(long, default_value_t = 200)]
    n_max: usize,
    /// Run only the start seeded from the nominal b-plane point.
    #[arg(long)]
    single_start: bool,
    /// Output directory.
    #[arg(long, default_value = "cam-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct EventArgs {
    /// Event file, canonical or table layout.
    #[arg(long)]
    event: PathBuf,
    /// Record to use when the file holds several (default: the first).
    #[arg(long)]
    id: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan a maneuver for one event.
    Solve {
        #[command(flatten)]
        event: EventArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Plan maneuvers for every event of a dataset.
    Batch {
        #[arg(long)]
        dataset: PathBuf,
        /// Worker threads (0 uses every core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solve for each constraint value of the configured kind.
    SweepThreshold {
        #[command(flatten)]
        event: EventArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solve for each window start, in orbits before closest approach.
    SweepLeadtime {
        #[command(flatten)]
        event: EventArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solve for each per-impulse cap (m/s).
    SweepDvmax {
        #[command(flatten)]
        event: EventArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cheapest ΔV to reach each point of the keep-out ellipse.
    BoundarySweep {
        #[command(flatten)]
        event: EventArgs,
        #[arg(long, default_value_t = 300)]
        points: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the summary table of a batch report.
    Stats {
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_constraint(s: &str) -> Result<Constraint, String> {
    let (kind, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected kind=value, got '{s}'"))?;
    let v: f64 = value.trim().parse().map_err(|_| format!("cannot read '{value}' as a number"))?;
    match kind.trim().to_ascii_lowercase().as_str() {
        "pc" => Ok(Constraint::PcApprox(v)),
        "pcmax" => Ok(Constraint::PcMax(v)),
        "miss" => Ok(Constraint::MissDistance(v)),
        other => Err(format!("unknown constraint '{other}' (use pc, pcmax or miss)")),
    }
}

impl RunArgs {
    fn settings(&self) -> RunSettings {
        RunSettings {
            config: ScvxConfig {
                delta_t: self.dt,
                n_max: self.n_max,
                dv_max: self.dvmax * 1e-3,
                constraint: self.constraint,
                dual_start: !self.single_start,
                ..ScvxConfig::default()
            },
            lead_orbits: self.lead_orbits,
            window_orbits: self.window_orbits,
            ..RunSettings::default()
        }
    }
}

enum Failure {
    Parse(String),
    Numerical(String),
    Other(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Parse { .. } | IoError::Validation { .. } => Failure::Parse(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

fn load(args: &EventArgs) -> Result<EventRecord, Failure> {
    let records = parse_event_file(&args.event)?;
    let found = match &args.id {
        Some(id) => records.into_iter().find(|r| &r.id == id),
        None => records.into_iter().next(),
    };
    found.ok_or_else(|| Failure::Parse(format!("{}: no matching event record", args.event.display())))
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn status_name(s: EntryStatus) -> &'static str {
    match s {
        EntryStatus::Converged => "converged",
        EntryStatus::Infeasible => "infeasible",
        EntryStatus::MaxIterations => "max_iterations",
        EntryStatus::Failed => "failed",
    }
}

fn print_aggregates(a: &Aggregates) {
    println!(
        "events {}  converged {}  infeasible {}  max_iterations {}  failed {}",
        a.events, a.converged, a.infeasible, a.max_iterations, a.failed
    );
    println!("{:<18}{:>12}{:>12}{:>12}{:>12}{:>12}", "", "min", "p5", "median", "p95", "max");
    for (name, s) in [
        ("total dV [m/s]", a.total_dv_mps),
        ("active impulses", a.active_impulses),
        ("major iterations", a.major_iterations),
        ("minor per major", a.minor_iterations),
    ] {
        println!(
            "{name:<18}{:>12.5}{:>12.5}{:>12.5}{:>12.5}{:>12.5}",
            s.min, s.p5, s.median, s.p95, s.max
        );
    }
}

fn solve(event: &EventArgs, run: &RunArgs) -> Result<i32, Failure> {
    let record = load(event)?;
    let entry = run_single(&record, &run.settings());
    let report = BatchReport {
        schema_version: SCHEMA_VERSION,
        settings: run.settings(),
        aggregates: Aggregates::of(std::slice::from_ref(&entry)),
        entries: vec![entry.clone()],
    };
    print_files(&emit_reports(&report, &run.out, &FORMATS)?);
    println!(
        "{}: {}  dV {:.6} m/s  impulses {}  major {}  minor {:?}",
        entry.id,
        status_name(entry.status),
        entry.total_dv_mps,
        entry.active_impulses,
        entry.major_iterations,
        entry.minor_iterations
    );
    if let Some(a) = entry.achieved {
        println!(
            "achieved: d2 {:.6}  pc {:.6e}  pcmax {}  miss {:.6} km  tca shift {:.4} s  verified {}",
            a.d2,
            a.pc_approx,
            a.pc_max.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
            a.miss_distance_km,
            a.tca_shift_s,
            a.verified
        );
    }
    Ok(match entry.status {
        EntryStatus::Converged => EXIT_OK,
        EntryStatus::Infeasible => EXIT_INFEASIBLE,
        EntryStatus::MaxIterations => EXIT_NUMERICAL,
        EntryStatus::Failed => {
            eprintln!("error: {}", entry.error.unwrap_or_default());
            EXIT_NUMERICAL
        }
    })
}

fn batch(dataset: &Path, threads: usize, run: &RunArgs) -> Result<i32, Failure> {
    let records = parse_event_file(dataset)?;
    let threads = if threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        threads
    };
    let report = run_batch(&records, &run.settings(), threads);
    print_files(&emit_reports(&report, &run.out, &FORMATS)?);
    for e in &report.entries {
        println!(
            "{:<16}{:<16}{:>12.6} m/s{:>6} impulses{:>4} major",
            e.id,
            status_name(e.status),
            e.total_dv_mps,
            e.active_impulses,
            e.major_iterations
        );
    }
    print_aggregates(&report.aggregates);
    Ok(EXIT_OK)
}

fn sweep(event: &EventArgs, run: &RunArgs, kind: SweepKind, values: &[f64]) -> Result<i32, Failure> {
    let record = load(event)?;
    let report = run_sweep(&record, &run.settings(), kind, values);
    print_files(&emit_sweep(&report, &run.out, &FORMATS)?);
    for r in &report.rows {
        println!(
            "{:>12.6e}  {:<16}{:>12.6} m/s{:>6} impulses",
            r.value,
            status_name(r.status),
            r.total_dv_mps,
            r.active_impulses
        );
    }
    Ok(EXIT_OK)
}

fn ellipse_sweep(event: &EventArgs, run: &RunArgs, points: usize) -> Result<i32, Failure> {
    let record = load(event)?;
    let settings = run.settings();
    let config = settings
        .config_for(&record.event)
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    let result =
        boundary_sweep(&record.event, &config, points, &settings.model).map_err(|e| Failure::Numerical(e.to_string()))?;
    std::fs::create_dir_all(&run.out).map_err(|e| Failure::Other(format!("{}: {e}", run.out.display())))?;
    let json = run.out.join("boundary_sweep.json");
    write_json(&json, &result)?;
    let csv_path = run.out.join("boundary_sweep.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&csv_path)
        .map_err(|e| Failure::Other(e.to_string()))?;
    let write = |w: &mut csv::Writer<std::fs::File>| -> Result<(), csv::Error> {
        w.write_record(["index", "theta_rad", "xi_km", "zeta_km", "dv_mps", "local_minimum"])?;
        for (i, p) in result.points.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.theta.to_string(),
                p.boundary_point.x.to_string(),
                p.boundary_point.y.to_string(),
                p.total_dv.map(|v| (v * 1e3).to_string()).unwrap_or_default(),
                result.local_minima.contains(&i).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| Failure::Other(e.to_string()))?;
    print_files(&[json, csv_path]);
    for &i in &result.local_minima {
        let p = &result.points[i];
        println!(
            "local minimum {i}: ({:.5}, {:.5}) km  dV {:.6} m/s",
            p.boundary_point.x,
            p.boundary_point.y,
            p.total_dv.unwrap_or(f64::NAN) * 1e3
        );
    }
    Ok(EXIT_OK)
}

fn stats(path: &Path) -> Result<i32, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    let report: BatchReport =
        serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    print_aggregates(&Aggregates::of(&report.entries));
    Ok(EXIT_OK)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Solve { event, run } => solve(event, run),
        Command::Batch { dataset, threads, run } => batch(dataset, *threads, run),
        Command::SweepThreshold { event, values, run } => sweep(event, run, SweepKind::Threshold, values),
        Command::SweepLeadtime { event, values, run } => sweep(event, run, SweepKind::LeadTime, values),
        Command::SweepDvmax { event, values, run } => sweep(event, run, SweepKind::DvMax, values),
        Command::BoundarySweep { event, points, run } => ellipse_sweep(event, run, *points),
        Command::Stats { report } => stats(report),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Parse(m)) => {
            eprintln!("error: {m}");
            EXIT_PARSE
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            EXIT_NUMERICAL
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            EXIT_FAILURE
        }
    }
}
