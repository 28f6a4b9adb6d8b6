use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cfplacebo::commands::{self, AnalyzeKind, RunOptions};
use cfplacebo::report::{OutputFormat, Table};
use cfplacebo::{exit_code, load_config, Error, ReproduceOptions, Result, Target, EXIT_MISMATCH};

#[derive(Parser)]
#[command(
    name = "cfplacebo",
    version,
    about = "Active-control trials with a counterfactual placebo"
)]
struct Cli {
    /// RNG seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo replicates, or replicates per grid cell for sweeps
    #[arg(long, global = true)]
    replicates: Option<u64>,
    /// Directory for output files
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Cap on worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Power,
    NiCurve,
    ConservativeSurface,
}

#[derive(Subcommand)]
enum Command {
    /// Trial size for a scenario
    Size { config: PathBuf },
    /// Analytic operating characteristics and curves
    Analyze {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::Power)]
        which: Which,
    },
    /// Monte Carlo type-1 error or power
    Simulate { config: PathBuf },
    /// Rejection rates over a (lambda_P, lambda_A) grid
    Sweep { config: PathBuf },
    /// Rerun a bundled target and compare with stored expectations
    Reproduce {
        /// table2, table4, tableA, fig1, fig2, fig3, figA1, figA2, figA3 or all
        target: String,
    },
    /// Print a built-in scenario as TOML
    Scenario { name: String },
}

fn format(f: Format) -> OutputFormat {
    match f {
        Format::Csv => OutputFormat::Csv,
        Format::Table => OutputFormat::Table,
    }
}

fn emit(cli: &Cli, name: &str, table: &Table) -> Result<()> {
    print!("{}", table.render(format(cli.format))?);
    if let Some(dir) = &cli.out {
        table.write_csv(&dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

fn config(cli: &Cli, path: &Path) -> Result<cfplacebo::ScenarioConfig> {
    let mut cfg = load_config(path)?;
    RunOptions {
        seed: cli.seed,
        replicates: cli.replicates,
        threads: cli.threads,
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Size { config: p } => emit(cli, "size", &commands::cmd_size(&config(cli, p)?)?)?,
        Command::Analyze { config: p, which } => {
            let which = match which {
                Which::Power => AnalyzeKind::Power,
                Which::NiCurve => AnalyzeKind::NiCurve,
                Which::ConservativeSurface => AnalyzeKind::ConservativeSurface,
            };
            emit(
                cli,
                "analyze",
                &commands::cmd_analyze(&config(cli, p)?, which)?,
            )?
        }
        Command::Simulate { config: p } => {
            emit(cli, "simulate", &commands::cmd_simulate(&config(cli, p)?)?)?
        }
        Command::Sweep { config: p } => {
            emit(cli, "sweep", &commands::cmd_sweep(&config(cli, p)?)?)?
        }
        Command::Scenario { name } => print!("{}", cfplacebo::named_scenario(name)?.emit()?),
        Command::Reproduce { target } => return reproduce(cli, target),
    }
    Ok(0)
}

fn reproduce(cli: &Cli, target: &str) -> Result<i32> {
    let targets: Vec<Target> = if target == "all" {
        Target::ALL.to_vec()
    } else {
        vec![target.parse()?]
    };
    let opts = ReproduceOptions {
        seed: cli.seed.unwrap_or(ReproduceOptions::default().seed),
        replicates: cli.replicates,
        threads: cli.threads,
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut code = 0;
    for t in targets {
        let report = cfplacebo::reproduce(t, &opts)?;
        report.write(&out)?;
        println!("== {t} ({})", out.join(t.name()).display());
        print!("{}", report.summary_table().render(format(cli.format))?);
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!("{t}: {verdict}");
        if !report.passed() {
            code = EXIT_MISMATCH;
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Infeasible { limiting_power } = e {
                eprintln!("limiting_power={limiting_power}");
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
