use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use robdiff_cli::report::format_float;
use robdiff_cli::{
    compare_rules, run_config, summary_table, write_artifacts, CliError, ExperimentConfig,
    RuleName, RunOptions,
};

const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "robdiff",
    version,
    about = "Robust diffusion learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config and write trace.csv, summary.csv and metadata.json.
    Run(RunArgs),
    /// Run several rules on paired data and print steady-state MSD ratios.
    Compare(CompareArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the Monte-Carlo run count.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads. Output does not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 0 even if some run diverged.
    #[arg(long)]
    allow_divergence: bool,
    /// Run cells that break the neighborhood contamination bound.
    #[arg(long)]
    override_assumption1: bool,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            jobs: self.jobs.max(1),
            override_assumption1: self.override_assumption1,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompareArgs {
    /// One config per rule, or a single base config combined with --rules.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Comma-separated rules applied to a single base config.
    #[arg(long, value_delimiter = ',')]
    rules: Vec<String>,
    #[command(flatten)]
    common: Common,
}

fn default_out(cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| {
        let stem = config_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        PathBuf::from("out").join(stem)
    })
}

fn run(args: RunArgs) -> Result<u8> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.common.apply(&mut cfg);
    let opts = args.common.options();
    let result = run_config(&cfg, &opts)?;
    let dir = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out(&cfg, &args.config));
    let files = write_artifacts(&result, &cfg, &opts, &dir)?;
    print!("{}", summary_table(&result));
    println!("wrote {}", files.trace.display());
    divergence_status(result.divergence_count(), args.common.allow_divergence)
}

fn parse_rule(name: &str) -> Result<RuleName> {
    serde_json::from_value(serde_json::Value::String(name.trim().to_string()))
        .map_err(|_| CliError::config("--rules", format!("unknown rule {name:?}")).into())
}

fn compare(args: CompareArgs) -> Result<u8> {
    let mut cfgs = Vec::new();
    for path in &args.config {
        let mut cfg = ExperimentConfig::load(path)?;
        args.common.apply(&mut cfg);
        cfgs.push(cfg);
    }
    if !args.rules.is_empty() {
        if cfgs.len() != 1 {
            return Err(CliError::config("--rules", "needs exactly one --config").into());
        }
        let base = cfgs.pop().expect("one config");
        for name in &args.rules {
            let mut c = base.clone();
            c.aggregator = Default::default();
            c.aggregator.rule = parse_rule(name)?;
            c.name = Some(name.trim().to_string());
            cfgs.push(c);
        }
    }
    let opts = args.common.options();
    let cmp = compare_rules(&cfgs, &opts)?;
    print!("{}", cmp.table());
    if let Some(dir) = &args.common.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("comparison.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["rule", "sweep_value", "steady_state_msd", "ratio"])?;
        for r in &cmp.rows {
            w.write_record([
                r.label.clone(),
                format_float(r.sweep_value),
                format_float(r.steady_state_msd),
                format_float(r.ratio),
            ])?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    let diverged = cmp.results.iter().map(|r| r.divergence_count()).sum();
    divergence_status(diverged, args.common.allow_divergence)
}

fn divergence_status(diverged: usize, allowed: bool) -> Result<u8> {
    if diverged > 0 {
        eprintln!("{diverged} run(s) diverged");
        if !allowed {
            return Ok(EXIT_DIVERGENCE);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::Validate { config } => ExperimentConfig::load(&config)
            .and_then(|c| c.plan())
            .map(|cells| {
                println!("ok: {} cell(s)", cells.len());
                0
            })
            .map_err(Into::into),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CliError>()
                .map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
