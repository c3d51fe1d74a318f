use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spg::commands::{cmd_probe, cmd_prune, cmd_run, with_threads, Overrides};
use spg::config::RunConfig;
use spg::Result;

#[derive(Parser)]
#[command(name = "spg", version, about = "Continual learning with soft-masked parameter gradients")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every configured method on every seed and write run records.
    Run(Args),
    /// Prune the first task's model by importance rank.
    Prune(Args),
    /// Probe the extractor after each task with a fresh linear head.
    Probe(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long, env = "SPG_THREADS")]
    threads: Option<usize>,
    /// Continue runs from checkpoints in the output directory (`run` only).
    #[arg(long)]
    resume: bool,
}

fn load(a: &Args) -> Result<RunConfig> {
    let o = Overrides { out: a.out.clone(), seeds: a.seeds.clone() };
    o.apply(RunConfig::load(&a.config)?)
}

fn fmt_std(s: Option<f64>) -> String {
    s.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(a) => {
            let cfg = load(&a)?;
            let out = with_threads(a.threads, || cmd_run(&cfg, a.resume))??;
            if let Some(r) = out.records.first() {
                println!("parameters: extractor {}, heads {:?}", r.params.extractor, r.params.heads);
            }
            for row in &out.aggregate {
                println!("{:<16} {:<22} {:.4} ± {} (n={})", row.method, row.metric, row.mean, fmt_std(row.std), row.n);
            }
            println!("wrote {} run records to {}", out.records.len(), cfg.out_dir.display());
        }
        Cmd::Prune(a) => {
            let cfg = load(&a)?;
            let rows = with_threads(a.threads, || cmd_prune(&cfg))??;
            for r in &rows {
                let pct = r.percent.map_or_else(String::new, |p| format!(" {p}%"));
                println!("seed {} {}{}: {:.4} (chance {:.4})", r.seed, r.strategy, pct, r.accuracy, r.chance);
            }
        }
        Cmd::Probe(a) => {
            let cfg = load(&a)?;
            let rows = with_threads(a.threads, || cmd_probe(&cfg))??;
            for r in &rows {
                println!("{} seed {} after {} tasks: {:.4}", r.method, r.seed, r.tasks_learned, r.probe_accuracy);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
