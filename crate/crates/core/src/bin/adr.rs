use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adr_core::config::{ExperimentConfig, Seeds};
use adr_core::continual::{run_with_observer, write_checkpoints, write_outputs, RunRecord};
use adr_core::datasets::{generate_sbm, save_dataset, SbmSpec};
use adr_core::evaluate::{MetricsReport, PerformanceMatrix};
use adr_core::ham::{check_bank_dir, BankKind};
use adr_core::sweep::{run_sweep, write_sweep, SweepConfig};
use adr_core::AdrError;

#[derive(Parser)]
#[command(name = "adr", version, about = "Analytic continual graph learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics, the performance matrix and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; defaults to `output_dir` from the config, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces all four seeds with ones derived from this value.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every γ × α × seed point of a sweep config on the validation split.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Generate a stochastic block model dataset as TSV files.
    GenSbm {
        /// JSON SBM spec.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check symmetry and positive semidefiniteness of checkpointed banks.
    ValidateBank {
        /// A bank directory, or a run checkpoint directory holding banks.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Recompute metrics from a run directory or a matrix CSV.
    Report {
        /// Run output directory or `matrix.csv`.
        #[arg(long)]
        path: PathBuf,
    },
}

/// Input problems (exit 2) versus failures while doing the work (exit 1).
enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure::Input(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADR_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
            seed,
        } => cmd_run(&config, &overrides, out, seed),
        Command::Sweep {
            config,
            overrides,
            out,
            workers,
        } => cmd_sweep(&config, &overrides, &out, workers),
        Command::GenSbm { config, out, seed } => cmd_gen_sbm(&config, &out, seed),
        Command::ValidateBank { dir } => cmd_validate_bank(&dir),
        Command::Report { path } => cmd_report(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn cmd_run(path: &Path, overrides: &[String], out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(path)
        .and_then(|c| c.with_overrides(overrides))
        .map_err(Failure::input)?;
    if let Some(s) = seed {
        cfg.seeds = Seeds::from_base(s);
    }
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.clone());

    match run_with_observer(&cfg, &mut ()) {
        Ok((record, artifacts)) => {
            write_outputs(&record, &out).map_err(Failure::runtime)?;
            if cfg.save_checkpoints {
                write_checkpoints(&artifacts, cfg.gamma, out.join("checkpoints")).map_err(Failure::runtime)?;
            }
            if let Some(m) = &record.metrics {
                println!("{}", summary_line(&record, m));
            }
            Ok(())
        }
        Err(failure) => {
            if let Err(e) = write_outputs(&failure.partial, &out) {
                log::error!("could not persist partial record: {e}");
            }
            Err(Failure::runtime(&failure))
        }
    }
}

fn summary_line(record: &RunRecord, m: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    format!(
        "{} tasks={} A_avg={} A_f={:.4} A_l={}",
        record.method.name(),
        record.num_tasks,
        opt(m.a_avg),
        m.a_f,
        opt(m.a_l)
    )
}

fn cmd_sweep(path: &Path, overrides: &[String], out: &Path, workers: Option<usize>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(AdrError::io(path, e)))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(Failure::input)?;
    for ov in overrides {
        adr_core::config::apply_override(&mut value, ov).map_err(Failure::input)?;
    }
    let mut cfg: SweepConfig = serde_json::from_value(value).map_err(Failure::input)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(Failure::input)?;
    let table = run_sweep(&cfg, Some(&out.join("runs"))).map_err(Failure::runtime)?;
    write_sweep(&table, out).map_err(Failure::runtime)?;
    let failed = table.rows.iter().filter(|r| r.status != "ok").count();
    for c in table.summary() {
        println!(
            "gamma={} alpha={} A_avg_val={:.4}±{:.4} (n={})",
            c.gamma, c.alpha, c.mean_a_avg_val, c.std_a_avg_val, c.runs
        );
    }
    match table.best() {
        Some(b) => println!("best gamma={} alpha={} A_avg_val={:.4}", b.gamma, b.alpha, b.mean_a_avg_val),
        None => return Err(Failure::runtime("every grid point failed")),
    }
    if failed > 0 {
        eprintln!("{failed} grid point(s) failed; see sweep.csv");
    }
    Ok(())
}

fn cmd_gen_sbm(path: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(AdrError::io(path, e)))?;
    let mut spec: SbmSpec = serde_json::from_str(&text).map_err(Failure::input)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(Failure::input)?;
    let ds = generate_sbm(&spec).map_err(Failure::runtime)?;
    save_dataset(&ds, out).map_err(Failure::runtime)?;
    println!(
        "wrote {} nodes, {} edges, {} classes to {}",
        ds.num_nodes(),
        ds.graph.num_edges(),
        ds.class_count,
        out.display()
    );
    Ok(())
}

fn cmd_validate_bank(dir: &Path) -> Result<(), Failure> {
    let mut bank_dirs = Vec::new();
    if dir.join("manifest.json").is_file() {
        bank_dirs.push(dir.to_path_buf());
    } else {
        for sub in ["encoder_bank", "classifier_bank", "checkpoints/encoder_bank", "checkpoints/classifier_bank"] {
            if dir.join(sub).join("manifest.json").is_file() {
                bank_dirs.push(dir.join(sub));
            }
        }
    }
    if bank_dirs.is_empty() {
        return Err(Failure::Input(format!("no bank manifest found under {}", dir.display())));
    }
    let mut failures = Vec::new();
    for bank in &bank_dirs {
        let (kind, checks) = check_bank_dir(bank).map_err(Failure::input)?;
        let label = match kind {
            BankKind::Encoder => "encoder",
            BankKind::Classifier => "classifier",
        };
        println!("{label} bank {}", bank.display());
        for c in checks {
            let shape = c.shape.map(|(r, k)| format!("{r}x{k}")).unwrap_or_else(|| "?".into());
            let detail = c
                .spectral
                .as_ref()
                .map(|s| format!(" asymmetry={:.3e} min_pivot={:.3e}", s.max_asymmetry, s.min_pivot))
                .unwrap_or_default();
            match &c.failure {
                None => println!("  PASS {} {shape}{detail}", c.name),
                Some(why) => {
                    println!("  FAIL {} {shape}{detail}: {why}", c.name);
                    failures.push(format!("{label}:{}", c.name));
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("bank check failed for {}", failures.join(", "))))
    }
}

fn cmd_report(path: &Path) -> Result<(), Failure> {
    let (csv_path, record_path) = if path.is_dir() {
        (path.join("matrix.csv"), Some(path.join("run_record.json")))
    } else {
        (path.to_path_buf(), None)
    };
    let text = std::fs::read_to_string(&csv_path).map_err(|e| Failure::input(AdrError::io(&csv_path, e)))?;
    let matrix = PerformanceMatrix::from_csv(&text).map_err(Failure::input)?;
    let mut rho = Vec::new();
    let mut drift = None;
    if let Some(rp) = record_path.filter(|p| p.is_file()) {
        let text = std::fs::read_to_string(&rp).map_err(|e| Failure::input(AdrError::io(&rp, e)))?;
        let record: RunRecord = serde_json::from_str(&text).map_err(Failure::input)?;
        if let Some(m) = record.metrics {
            rho = m.rho_t;
            drift = m.drift;
        }
    }
    let report = MetricsReport::from_matrix(&matrix, rho, drift).map_err(Failure::runtime)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Failure::runtime)?);
    Ok(())
}
