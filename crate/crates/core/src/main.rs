use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use micc_core::experiment::{parse_price_grid, run_experiment, ExperimentSpec, Mode, RunMode, SweepKind};
use micc_core::multilink::DistributionFormula;
use micc_core::utility::SigmoidVariant;

#[derive(Parser)]
#[command(name = "micc-sim", version, about = "Congestion-pricing simulator: MICC, subgradient and fixed-price experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate one pricing strategy and write report and trace files.
    Run {
        #[arg(long, value_enum, default_value = "micc")]
        mode: RunArg,
        /// Price for `--mode fixed`.
        #[arg(long)]
        price: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Revenue and flow at every price of a grid.
    Sweep {
        #[arg(long, value_enum, default_value = "progressive")]
        mode: SweepArg,
        #[command(flatten)]
        common: Common,
    },
    /// Check that subgradient prices never exceed the MICC price.
    Verify {
        /// Randomised single-link instances to add.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fit utility parameters to observed rates.
    Calibrate {
        /// JSON file with `fit` and optional `holdout` targets.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the price-5/6 and before/after tables with consistency checks.
    EmitTables {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file, or a bundled name (table1, table3, table4).
    #[arg(long)]
    scenario: Option<String>,
    /// Prices as a:b:step or a comma list.
    #[arg(long, value_parser = |s: &str| parse_price_grid(s).map(Grid))]
    price_grid: Option<Grid>,
    #[arg(long)]
    dwell: Option<u32>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    fidelity: Option<FidelityArg>,
    #[arg(long, value_enum)]
    utility: Option<UtilityArg>,
}

#[derive(Clone)]
struct Grid(Vec<f64>);

#[derive(Copy, Clone, ValueEnum)]
enum RunArg {
    Micc,
    Subgradient,
    Fixed,
    Highest,
    Progressive,
}

#[derive(Copy, Clone, ValueEnum)]
enum SweepArg {
    Progressive,
    Fixed,
}

#[derive(Copy, Clone, ValueEnum)]
enum FidelityArg {
    Normalized,
    Literal,
}

#[derive(Copy, Clone, ValueEnum)]
enum UtilityArg {
    Centered,
    Literal,
}

fn spec_from(mode: Mode, c: Common) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(mode, c.out);
    spec.scenario = c.scenario;
    spec.price_grid = c.price_grid.map(|g| g.0);
    spec.dwell = c.dwell;
    spec.horizon = c.horizon;
    spec.seed = c.seed;
    spec.fidelity = c.fidelity.map(|f| match f {
        FidelityArg::Normalized => DistributionFormula::Normalized,
        FidelityArg::Literal => DistributionFormula::Literal,
    });
    spec.utility = c.utility.map(|u| match u {
        UtilityArg::Centered => SigmoidVariant::CenteredSigmoid,
        UtilityArg::Literal => SigmoidVariant::PaperLiteral,
    });
    spec
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec = match cli.verb {
        Verb::Run { mode, price, common } => {
            let mode = match mode {
                RunArg::Micc => RunMode::Micc,
                RunArg::Subgradient => RunMode::Subgradient,
                RunArg::Fixed => RunMode::Fixed,
                RunArg::Highest => RunMode::Highest,
                RunArg::Progressive => RunMode::Progressive,
            };
            let mut s = spec_from(Mode::Run(mode), common);
            s.price = price;
            s
        }
        Verb::Sweep { mode, common } => {
            let kind = match mode {
                SweepArg::Progressive => SweepKind::Progressive,
                SweepArg::Fixed => SweepKind::Fixed,
            };
            spec_from(Mode::Sweep(kind), common)
        }
        Verb::Verify { instances, common } => {
            let mut s = spec_from(Mode::Verify, common);
            s.instances = instances;
            s
        }
        Verb::Calibrate { targets, common } => {
            let mut s = spec_from(Mode::Calibrate, common);
            s.targets = targets;
            s
        }
        Verb::EmitTables { out } => ExperimentSpec::new(Mode::EmitTables, out),
    };
    match run_experiment(&spec) {
        Ok(out) => {
            // a closed stdout (e.g. piped into head) is not a failure
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.summary);
            for f in &out.files {
                let _ = writeln!(stdout, "  wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
