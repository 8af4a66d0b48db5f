use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgcl::experiment::{self, ExperimentConfig, Overrides, SweepGrid};
use fgcl::federated::EvalMode;
use fgcl::gnn::EncoderKind;
use fgcl::graph::{generate_synthetic, SyntheticSpec};
use fgcl::Error;

#[derive(Parser)]
#[command(name = "fgcl", version, about = "Federated graph contrastive learning with edge-level differential privacy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics.csv, summary.json and checkpoint.json.
    Run(RunArgs),
    /// Train over a hyper-parameter grid; writes sweep.csv and failures.csv.
    Sweep(SweepArgs),
    /// Empirical epsilon-DP check of the edge mechanism.
    VerifyDp(VerifyArgs),
    /// Write a synthetic cycles-versus-cliques dataset.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct TrainFlags {
    /// Flat JSON config (a previous summary.json also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines dataset; synthetic data is used when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps1: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    cap_n: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    sampled: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long, value_parser = ["gcn", "tag"])]
    encoder: Option<String>,
    #[arg(long, value_parser = ["clean", "perturbed"])]
    eval_mode: Option<String>,
}

impl TrainFlags {
    fn resolve(&self) -> fgcl::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Overrides {
            dataset: self.dataset.clone(),
            out_dir: self.out.clone(),
            seed: self.seed,
            gamma: self.gamma,
            tau: self.tau,
            eps0: self.eps0,
            eps1: self.eps1,
            k: self.k,
            cap_n: self.cap_n,
            clients: self.clients,
            sampled: self.sampled,
            rounds: self.rounds,
            lr: self.lr,
            encoder: self.encoder.as_deref().map(str::parse::<EncoderKind>).transpose()?,
            eval_mode: self.eval_mode.as_deref().map(str::parse::<EvalMode>).transpose()?,
        }
        .apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// JSON grid file with optional `k`, `gamma`, `eps_pairs`, `eps_values`, `seeds`.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Budgets combined into unordered (eps0, eps1) pairs.
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    /// Repetitions per setting.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0.1,1,10")]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_graphs: Option<usize>,
    #[arg(long)]
    min_nodes: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_run(args: &RunArgs) -> fgcl::Result<()> {
    let cfg = args.train.resolve()?;
    warn_all(&cfg.validate()?);
    let summary = experiment::run(&cfg)?;
    match summary.final_auc {
        Some(auc) => println!(
            "{} rounds, final {:?} macro-AUC {auc:.4}, outputs in {}",
            summary.rounds_completed,
            cfg.train.eval_mode,
            cfg.out_dir.display()
        ),
        None => println!("0 rounds, outputs in {}", cfg.out_dir.display()),
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> fgcl::Result<()> {
    let cfg = args.train.resolve()?;
    warn_all(&cfg.validate()?);
    let mut grid = match &args.grid {
        Some(p) => SweepGrid::load(p)?,
        None => SweepGrid::default(),
    };
    if args.k_grid.is_some() {
        grid.k = args.k_grid.clone();
    }
    if args.gamma_grid.is_some() {
        grid.gamma = args.gamma_grid.clone();
    }
    if args.eps_grid.is_some() {
        grid.eps_values = args.eps_grid.clone();
        grid.eps_pairs = None;
    }
    if let Some(s) = args.seeds {
        grid.seeds = s;
    }
    let outcome = experiment::sweep(&cfg, &grid)?;
    println!(
        "{} runs completed, {} failed, table in {}",
        outcome.rows.len(),
        outcome.failures.len(),
        cfg.out_dir.join("sweep.csv").display()
    );
    for f in &outcome.failures {
        eprintln!("run failed (setting {}, seed {}): {}", f.setting, f.seed_index, f.error);
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> fgcl::Result<bool> {
    let report = experiment::verify_dp(&args.eps, args.samples, args.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &args.out {
        std::fs::write(p, &text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    println!("{text}");
    for r in &report {
        eprintln!(
            "eps {}: {} (max ratio {:.4}, bound {:.4})",
            r.epsilon,
            if r.pass { "PASS" } else { "FAIL" },
            r.max_ratio,
            r.bound
        );
    }
    Ok(report.iter().all(|r| r.pass))
}

fn cmd_generate(args: &GenerateArgs) -> fgcl::Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_graphs: args.n_graphs.unwrap_or(d.n_graphs),
        min_nodes: args.min_nodes.unwrap_or(d.min_nodes),
        max_nodes: args.max_nodes.unwrap_or(d.max_nodes),
        feature_dim: args.feature_dim.unwrap_or(d.feature_dim),
        noise_sd: args.noise_sd.unwrap_or(d.noise_sd),
        ..d
    };
    let data = generate_synthetic(&spec, args.seed)?;
    data.save(&args.out)?;
    println!("{} graphs written to {}", data.len(), args.out.display());
    Ok(())
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_usage() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::VerifyDp(a) => cmd_verify(a),
        Command::Generate(a) => cmd_generate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => exit_for(&e),
    }
}
