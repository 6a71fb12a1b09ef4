use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use namebias::commands;
use namebias::config::RunConfig;
use namebias::error::exit;
use namebias::race::Group;
use namebias::Error;

#[derive(Debug, Parser)]
#[command(name = "namebias", version, about = "Name-based bias measurement with the Trust Game")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, env = "NAMEBIAS_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config file and NAMEBIAS_OUTPUT_DIR.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Scoring endpoint (`http(s)://...` or `mock:<fixture>`); overrides NAMEBIAS_ENDPOINT.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank census surnames by Pr(name | race) and write per-race lists.
    Curate {
        /// Census surname file (.csv or .csv.gz).
        #[arg(long)]
        census: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Probe the model's race perception of seed surnames and write a pair file.
    Probe {
        #[arg(long)]
        census: Option<PathBuf>,
    },
    /// Ask the construct-validity probing questions for every pairing.
    Verify {
        #[command(flatten)]
        design: DesignArgs,
        /// Only verify the first N pairings.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Play the factorial Trust Game experiments.
    Run {
        #[command(flatten)]
        design: DesignArgs,
    },
    /// Compute ANOVA, post-hoc tests and interaction plots for a run.
    Analyze(AnalyzeArgs),
    /// Print a markdown report of a run.
    Report(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Pair file written by `probe` (race,surname,gender,log-odds...).
    #[arg(long)]
    pair_file: Option<PathBuf>,
    /// Investor group such as "White,M"; repeat for several experiments.
    #[arg(long = "investor")]
    investors: Vec<String>,
    /// Gender-surname pairs used per group (default 17).
    #[arg(long)]
    pairs_per_group: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directory (defaults to the output directory).
    run_dir: Option<PathBuf>,
    /// Analyze a run with failed games.
    #[arg(long)]
    allow_incomplete: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    config.apply_env();
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(endpoint) = &cli.endpoint {
        match &mut config.backend {
            Some(b) => b.endpoint = endpoint.clone(),
            None => {
                return Err(namebias::config::ConfigError::Invalid(
                    "--endpoint needs a config file with a [backend] section".into(),
                )
                .into())
            }
        }
    }
    match &cli.command {
        Command::Curate { census, top_k } => {
            if let Some(c) = census {
                config.census_path = Some(c.clone());
            }
            if let Some(k) = top_k {
                config.curate.top_k = *k;
            }
        }
        Command::Probe { census } => {
            if let Some(c) = census {
                config.census_path = Some(c.clone());
            }
        }
        Command::Verify { design, .. } | Command::Run { design } => {
            if let Some(p) = &design.pair_file {
                config.pair_file = Some(p.clone());
            }
            if !design.investors.is_empty() {
                for s in &design.investors {
                    s.parse::<Group>()
                        .map_err(|e| namebias::config::ConfigError::Invalid(e.to_string()))?;
                }
                config.experiment.investors = design.investors.clone();
            }
            if let Some(n) = design.pairs_per_group {
                config.experiment.pairs_per_group = n;
            }
        }
        Command::Analyze(_) | Command::Report(_) => {}
    }
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Curate { .. } => {
            let report = commands::cmd_curate(&config)?;
            for (race, names) in &report.top {
                println!("{:<16} {}", race.label(), names.join(", "));
            }
            println!("wrote {} lists and {}", report.files.len(), report.summary_file.display());
        }
        Command::Probe { .. } => print_json(&commands::cmd_probe(&config)?),
        Command::Verify { limit, .. } => print_json(&commands::cmd_verify(&config, *limit)?),
        Command::Run { .. } => {
            let report = commands::cmd_run(&config)?;
            print_json(&report);
            if !report.complete {
                log::warn!("run incomplete: {} games failed", report.failures);
            }
        }
        Command::Analyze(args) => {
            let run_dir = args.run_dir.clone().unwrap_or_else(|| config.output_dir.clone());
            let report = commands::cmd_analyze(&config, &run_dir, args.allow_incomplete)?;
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::Report(args) => {
            let run_dir = args.run_dir.clone().unwrap_or_else(|| config.output_dir.clone());
            print!("{}", commands::cmd_report(&config, &run_dir, args.allow_incomplete)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
