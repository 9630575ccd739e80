use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmabf_core::harness::{self, Experiment, ScenarioConfig, SweepAxis};
use dmabf_core::Error;

const EXIT_IO: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "dmabf", version, about = "Transmit-power minimization for DMA and fully digital arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one Monte-Carlo experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the experiment over a grid of one parameter.
    Sweep {
        /// r-min, k or d-x.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compare single-user digital solves with the closed form.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    frequency_hz: Option<String>,
    #[arg(long)]
    aperture_m: Option<String>,
    #[arg(long)]
    d_x_over_lambda: Option<String>,
    #[arg(long)]
    d_y_over_lambda: Option<String>,
    #[arg(long)]
    gain_exponent: Option<String>,
    /// Comma-separated subset of fd, op1, dma, uw.
    #[arg(long)]
    modes: Option<String>,
    /// Comma-separated user counts.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    r_min: Option<String>,
    #[arg(long)]
    noise_dbm: Option<String>,
    /// near, far or combined.
    #[arg(long)]
    zone: Option<String>,
    #[arg(long)]
    realizations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    gap_tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    outer_iterations: Option<String>,
    #[arg(long)]
    init_retries: Option<String>,
    #[arg(long)]
    randomization_trials: Option<String>,
    /// watts or db.
    #[arg(long)]
    aggregate: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    timing: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 21] {
        [
            ("frequency_hz", &self.frequency_hz),
            ("aperture_m", &self.aperture_m),
            ("d_x_over_lambda", &self.d_x_over_lambda),
            ("d_y_over_lambda", &self.d_y_over_lambda),
            ("gain_exponent", &self.gain_exponent),
            ("modes", &self.modes),
            ("k", &self.k),
            ("r_min", &self.r_min),
            ("noise_dbm", &self.noise_dbm),
            ("zone", &self.zone),
            ("realizations", &self.realizations),
            ("seed", &self.seed),
            ("tol", &self.tol),
            ("gap_tol", &self.gap_tol),
            ("max_iter", &self.max_iter),
            ("outer_iterations", &self.outer_iterations),
            ("init_retries", &self.init_retries),
            ("randomization_trials", &self.randomization_trials),
            ("aggregate", &self.aggregate),
            ("workers", &self.workers),
            ("timing", &self.timing),
        ]
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    for (key, value) in common.overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) | Error::Dimension(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Solver(_) | Error::Infeasible(_) | Error::Singularity { .. } => EXIT_SOLVER,
    }
}

fn ensure_dir(out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

fn print_summary(exp: &Experiment) {
    println!("{:>4} {:>5} {:>6} {:>10} {:>11} {:>7} {:>16}", "K", "mode", "runs", "converged", "infeasible", "failed", "mean_power_dbm");
    for m in &exp.summary.modes {
        let mean = m.mean_power_dbm.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{:>4} {:>5} {:>6} {:>10} {:>11} {:>7} {:>16}",
            m.k, m.mode, m.runs, m.converged, m.infeasible, m.failed, mean
        );
    }
    for g in &exp.summary.gaps {
        let gap = g.mean_gap_db.map(|v| format!("{v:+.4} dB")).unwrap_or_else(|| "n/a".into());
        println!("K={} {} - {}: {} over {} paired draws", g.k, g.to, g.from, gap, g.common);
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let exp = harness::run_experiment(&cfg)?;
            print_summary(&exp);
            if let Some(out) = &common.out {
                ensure_dir(out)?;
                harness::write_csv(&exp.records, &out.join("records.csv"))?;
                harness::write_json(&exp, &out.join("report.json"))?;
            }
            Ok(if exp.has_failures() { EXIT_SOLVER } else { 0 })
        }
        Command::Sweep { axis, values, common } => {
            let cfg = load_config(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("sweep value '{v}': {e}"))))
                .collect::<Result<_, _>>()?;
            let (rows, experiments) = harness::sweep(&cfg, axis, &values)?;
            println!("{:>8} {:>5} {:>4} {:>5} {:>5} {:>10} {:>16}", axis.to_string(), "mode", "K", "N", "dof", "converged", "mean_power_dbm");
            for r in &rows {
                let mean = r.mean_power_dbm.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
                println!(
                    "{:>8} {:>5} {:>4} {:>5} {:>5} {:>10} {:>16}",
                    r.value, r.mode, r.k, r.n_elements, r.dof, r.converged, mean
                );
            }
            if let Some(out) = &common.out {
                ensure_dir(out)?;
                harness::write_sweep_csv(&rows, &out.join("sweep.csv"))?;
            }
            Ok(if experiments.iter().any(Experiment::has_failures) { EXIT_SOLVER } else { 0 })
        }
        Command::Oracle { common } => {
            let cfg = load_config(&common)?;
            let rows = harness::oracle(&cfg)?;
            println!("{:>11} {:>14} {:>14} {:>10}", "realization", "closed_form_W", "solved_W", "rel_err");
            let mut failed = false;
            for r in &rows {
                failed |= r.solved_watts.is_none();
                println!(
                    "{:>11} {:>14.6e} {:>14} {:>10}",
                    r.realization,
                    r.closed_form_watts,
                    r.solved_watts.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into()),
                    r.relative_error.map(|v| format!("{v:.2e}")).unwrap_or_else(|| "n/a".into()),
                );
            }
            if let Some(out) = &common.out {
                ensure_dir(out)?;
                harness::write_oracle_csv(&rows, &out.join("oracle.csv"))?;
            }
            Ok(if failed { EXIT_SOLVER } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
