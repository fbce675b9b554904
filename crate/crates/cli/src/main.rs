use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lincde::boost::{CarryingKind, TransformChoice};
use lincde::config::RunConfig;

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "lincde",
    version,
    about = "Conditional density estimation with boosted LinCDE trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a boosted model and write it as JSON plus a diagnostics CSV.
    Train {
        /// Training data (CSV with header).
        #[arg(long)]
        data: PathBuf,
        /// Validation data used to pick the number of trees.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Per-iteration log-likelihoods; defaults to `<model>.diagnostics.csv`.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Densities, CDFs or quantiles for every row of a CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Output::Density)]
        kind: Output,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a model on labelled data and print a JSON report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training data for the marginal Gaussian baseline (defaults to the test data).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Simulation spec JSON giving the true distribution.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a simulated data set and a JSON sidecar with its spec.
    Simulate {
        /// Spec JSON, e.g. {"kind":"lgd","n":1000,"d":20,"seed":1}.
        #[arg(long, conflicts_with_all = ["kind", "variant"])]
        spec: Option<PathBuf>,
        /// lgd, lggmd, tree-example, step-example, hetero-example or centering-example.
        #[arg(long, required_unless_present = "spec")]
        kind: Option<String>,
        /// variance, modality or skewness (tree-example and step-example).
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Normalized split-gain importance per feature.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Density,
    Cdf,
    Quantile,
}

/// Config file plus flags mirroring its keys.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    df: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_node: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    carrying: Option<Carrying>,
    #[arg(long, value_enum)]
    transform: Option<Transform>,
    #[arg(long)]
    shift: Option<bool>,
    #[arg(long)]
    centering: Option<bool>,
    #[arg(long)]
    grid_bins: Option<usize>,
    /// Comma-separated levels in (0, 1).
    #[arg(long, value_delimiter = ',')]
    quantile_levels: Option<Vec<f64>>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Carrying {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Transform {
    None,
    Log,
    BoxCox,
}

impl ConfigArgs {
    fn resolve(&self) -> lincde::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_toml(&commands::read_text(p)?)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            response: self.response.clone(),
            k: self.k,
            df: self.df,
            bins: self.bins,
            eta: self.eta,
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_node: self.min_node,
            candidates: self.candidates,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            carrying: self.carrying.map(|c| match c {
                Carrying::Gaussian => CarryingKind::Gaussian,
                Carrying::Uniform => CarryingKind::Uniform,
            }),
            transform: self.transform.map(|t| match t {
                Transform::None => TransformChoice::None,
                Transform::Log => TransformChoice::Log,
                Transform::BoxCox => TransformChoice::BoxCox,
            }),
            shift: self.shift,
            centering: self.centering,
            grid_bins: self.grid_bins,
            quantile_levels: self.quantile_levels.clone(),
            threads: self.threads,
        };
        let cfg = base.overlay(&flags);
        cfg.validate()?;
        if let Some(n) = cfg.threads {
            // fails only if a pool already exists, which cannot happen here
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> lincde::Result<()> {
    match cli.command {
        Command::Train {
            data,
            valid,
            model,
            diagnostics,
            config,
        } => {
            let diagnostics = diagnostics.unwrap_or_else(|| model.with_extension("diagnostics.csv"));
            commands::train(&data, valid.as_deref(), &model, &diagnostics, &config.resolve()?)
        }
        Command::Predict {
            model,
            data,
            kind,
            output,
            config,
        } => commands::predict(&model, &data, kind, output.as_deref(), &config.resolve()?),
        Command::Evaluate {
            model,
            data,
            train,
            oracle,
            output,
            config,
        } => commands::evaluate(
            &model,
            &data,
            train.as_deref(),
            oracle.as_deref(),
            output.as_deref(),
            &config.resolve()?,
        ),
        Command::Simulate {
            spec,
            kind,
            variant,
            n,
            d,
            seed,
            output,
        } => {
            let spec = match spec {
                Some(p) => commands::read_text(&p)?,
                None => {
                    let mut v = serde_json::json!({ "kind": kind, "n": n, "d": d, "seed": seed });
                    if let Some(variant) = variant {
                        v["variant"] = variant.into();
                    }
                    v.to_string()
                }
            };
            commands::simulate(&spec, &output)
        }
        Command::Importance { model, output } => commands::importance(&model, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
