use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bqr::cli::{self, FileConfig, RunConfig, SimulateParams};

#[derive(Parser)]
#[command(name = "bqr", version, about = "Bayesian geoadditive quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive report: summaries, correlations, quantile bands,
    /// and per-band LOWESS curves
    Describe(ModelArgs),
    /// Fit the model at each requested quantile by MCMC
    Fit(ModelArgs),
    /// Compare DIC across fitted result directories
    Compare {
        /// Result directories produced by `fit` (at least two)
        dirs: Vec<PathBuf>,
    },
    /// Generate a synthetic dataset with known ground truth
    Simulate {
        /// Scenario: a (linear), b (smooth), or c (spatial)
        #[arg(long)]
        scenario: String,
        /// Observations for scenarios a and b
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 58_581)]
        seed: u64,
        /// Lattice side length for scenario c
        #[arg(long, default_value_t = 8)]
        grid_side: usize,
        /// Observations per region for scenario c
        #[arg(long, default_value_t = 10)]
        per_region: usize,
        /// Output directory
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// TOML config file; flags given here override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file
    #[arg(long)]
    data: Option<PathBuf>,
    /// Region adjacency graph file
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Response column
    #[arg(long)]
    response: Option<String>,
    /// Linear covariate columns
    #[arg(long, value_delimiter = ',')]
    linear: Option<Vec<String>>,
    /// Smooth-term covariate columns
    #[arg(long, value_delimiter = ',')]
    smooth: Option<Vec<String>>,
    /// Region identifier column for the spatial term
    #[arg(long)]
    spatial: Option<String>,
    /// Quantiles to fit
    #[arg(long, value_delimiter = ',')]
    quantiles: Option<Vec<f64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $BQR_OUTPUT_ROOT/bqr-output)
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Binary stratifier column for the descriptive report
    #[arg(long)]
    stratifier: Option<String>,
    /// Covariate for the per-band LOWESS curves
    #[arg(long)]
    exposure: Option<String>,
}

impl ModelArgs {
    fn resolve(self) -> bqr::Result<RunConfig> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let defaults = bqr::engine::McmcConfig::default();
        let data = self
            .data
            .or(file.data)
            .ok_or_else(|| bqr::Error::Config("no dataset given (--data)".into()))?;
        let response = self
            .response
            .or(file.response)
            .ok_or_else(|| bqr::Error::Config("no response column given (--response)".into()))?;
        Ok(RunConfig {
            data,
            graph: self.graph.or(file.graph),
            response,
            linear: self.linear.or(file.linear).unwrap_or_default(),
            smooth: self.smooth.or(file.smooth).unwrap_or_default(),
            spatial: self.spatial.or(file.spatial),
            quantiles: self
                .quantiles
                .or(file.quantiles)
                .unwrap_or_else(|| vec![0.15, 0.5, 0.85]),
            iterations: self.iterations.or(file.iterations).unwrap_or(defaults.iterations),
            burn_in: self.burn_in.or(file.burn_in).unwrap_or(defaults.burn_in),
            thin: self.thin.or(file.thin).unwrap_or(defaults.thin),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            output: self
                .output
                .or(file.output)
                .unwrap_or_else(|| cli::default_output_root().join("bqr-output")),
            stratifier: self.stratifier.or(file.stratifier),
            exposure: self.exposure.or(file.exposure),
        })
    }
}

fn run() -> bqr::Result<()> {
    match Cli::parse().command {
        Command::Describe(args) => cli::cmd_describe(&args.resolve()?),
        Command::Fit(args) => cli::cmd_fit(&args.resolve()?),
        Command::Compare { dirs } => {
            let table = cli::cmd_compare(&dirs)?;
            print!("{table}");
            Ok(())
        }
        Command::Simulate {
            scenario,
            n,
            seed,
            grid_side,
            per_region,
            output,
        } => {
            let params = SimulateParams {
                n,
                seed,
                grid_side,
                per_region,
            };
            cli::cmd_simulate(&scenario, &params, &output)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
