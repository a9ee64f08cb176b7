use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlda::data::{Dataset, LoadOptions};
use dlda::evaluation::json;
use dlda::experiment::{self, ExperimentConfig};
use dlda::DldaError;

#[derive(Parser)]
#[command(name = "dlda", version, about = "Latent-diffusion shilling attack laboratory")]
struct Cli {
    /// Worker threads for sampling and evaluation (overrides DLDA_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an interaction file and print its statistics.
    Ingest {
        path: PathBuf,
        /// Directory for the re-indexed dataset and stats.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only rows rated at least this much.
        #[arg(long)]
        min_rating: Option<f64>,
    },
    /// Run the configured attack and train the victims.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write effectiveness and stealth reports for a run directory.
    Evaluate {
        run_dir: PathBuf,
        /// Cutoffs, e.g. `--k 10,50`.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// One DLDA run per dispersive weight.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Compare evaluated runs side by side.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Also write report.md and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(DldaError),
}

impl From<DldaError> for Failure {
    fn from(e: DldaError) -> Self {
        match e {
            DldaError::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

fn load_config(path: &Path, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_file(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    cfg.apply_env()?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    cfg.validate()?;
    experiment::init_threads(cfg.threads);
    Ok(cfg)
}

fn ks(k: &[usize]) -> Option<&[usize]> {
    (!k.is_empty()).then_some(k)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { path, out, min_rating } => {
            let d = Dataset::load(&path, LoadOptions { min_rating })?;
            if d.is_empty() {
                return Err(Failure::Runtime(DldaError::EmptyDataset));
            }
            let stats = d.stats();
            println!("{}", stats.table_line(&path.display().to_string()));
            println!("hash {}", d.fingerprint());
            if let Some(out) = out {
                fs::create_dir_all(&out).map_err(|e| DldaError::io(&out, e))?;
                d.write_tsv(&out.join("dataset.tsv"))?;
                json::write(&out.join("stats.json"), &stats)?;
            }
        }
        Command::Attack { config, out, seed } => {
            let cfg = load_config(&config, out, seed, cli.threads)?;
            let manifest = experiment::run_attack_dir(&cfg)?;
            let fakes: usize = manifest.trials.first().map_or(0, |t| t.fake_users);
            println!(
                "{} run written to {} ({} trials, {fakes} fake users per trial)",
                manifest.method.name(),
                cfg.out_dir.display(),
                manifest.trials.len()
            );
        }
        Command::Evaluate { run_dir, k } => {
            let threads = cli.threads.or_else(|| std::env::var(experiment::THREADS_ENV).ok()?.parse().ok());
            experiment::init_threads(threads);
            let (eff, _) = experiment::evaluate_run_dir(&run_dir, ks(&k))?;
            for (p, d) in eff.mean_poisoned.iter().zip(&eff.mean_delta) {
                println!(
                    "K={}: target H {:.4} N {:.4} | global H {:.4} N {:.4} | delta global H {:+.4} N {:+.4}",
                    p.k, p.target_hit, p.target_ndcg, p.global_hit, p.global_ndcg, d.global_hit, d.global_ndcg
                );
            }
        }
        Command::Sweep { config, values, out, seed, k } => {
            let cfg = load_config(&config, out, seed, cli.threads)?;
            let rows = experiment::sweep(&cfg, &values, ks(&k))?;
            print!("{}", experiment::sweep_csv(&rows));
        }
        Command::Report { run_dirs, out } => {
            let cmp = experiment::compare_runs(&run_dirs)?;
            print!("{}", cmp.to_markdown());
            if let Some(out) = out {
                fs::create_dir_all(&out).map_err(|e| DldaError::io(&out, e))?;
                fs::write(out.join("report.md"), cmp.to_markdown()).map_err(|e| DldaError::io(&out, e))?;
                fs::write(out.join("report.csv"), cmp.to_csv()).map_err(|e| DldaError::io(&out, e))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
