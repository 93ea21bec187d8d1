#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drift_core::bench::{rate_fit, reference_constant, run_experiment, ExperimentConfig, RiskReport};
use drift_core::estimator::{adaptive_fit, default_x_grid, nonadaptive_drift};
use drift_core::invariant::{density_fourier, invariant_density, pinsker_constant};
use drift_core::io::{Table, Tabular, VERSION};
use drift_core::sim::{default_step, simulate_path, DiffusionModel, Init, Path};
use drift_core::spectral::{EcfOptions, DEFAULT_D_LAMBDA};
use drift_core::{Error, Result, UniformGrid};

#[derive(Parser)]
#[command(name = "drift", version, about = "Adaptive drift estimation for scalar diffusions")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a stationary Euler-Maruyama path.
    Simulate {
        #[command(flatten)]
        path: PathArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the invariant density, or its characteristic function with --cf.
    Density {
        #[arg(long, default_value = "ou")]
        model: String,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        cf: bool,
        #[arg(long = "lambda-max", default_value_t = 10.0)]
        lambda_max: f64,
        #[arg(long = "d-lambda", default_value_t = DEFAULT_D_LAMBDA)]
        d_lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the drift from one path.
    Estimate {
        #[command(flatten)]
        path: PathArgs,
        #[command(flatten)]
        spectral: SpectralArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Data-driven weight selection.
        #[arg(long, conflicts_with_all = ["k", "radius"])]
        adaptive: bool,
        /// Smoothness for the minimax weight.
        #[arg(long, requires = "radius")]
        k: Option<u32>,
        /// Sobolev radius for the minimax weight.
        #[arg(long = "R", requires = "k")]
        radius: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every candidate weight and report the selected one.
    Select {
        #[command(flatten)]
        path: PathArgs,
        #[command(flatten)]
        spectral: SpectralArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo risk experiment.
    Bench(BenchArgs),
    /// Print the minimax constant.
    Pinsker {
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long = "R", default_value_t = 1.0)]
        radius: f64,
        /// Also print the constant adjusted for this model's diffusion coefficient.
        #[arg(long)]
        model: Option<String>,
    },
    /// Fit the convergence rate of an existing report.
    Rate {
        report: PathBuf,
        #[arg(long)]
        k: Option<u32>,
    },
}

#[derive(Args)]
struct PathArgs {
    #[arg(long, default_value = "ou")]
    model: String,
    #[arg(long = "T", default_value_t = 1000.0)]
    horizon: f64,
    /// Time step; defaults to the largest admissible step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Read the path from a file written by `simulate` instead.
    #[arg(long = "path", conflicts_with_all = ["horizon", "dt", "seed"])]
    file: Option<PathBuf>,
}

impl PathArgs {
    fn load(&self) -> Result<(DiffusionModel, Path)> {
        let model = DiffusionModel::builtin(&self.model)?;
        let path = match &self.file {
            Some(file) => Path::load(file)?,
            None => {
                let dt = self.dt.unwrap_or_else(|| default_step(self.horizon));
                simulate_path(&model, self.horizon, dt, Init::Stationary, self.seed)?
            }
        };
        Ok((model, path))
    }
}

#[derive(Args)]
struct GridArgs {
    #[arg(long = "x-min", default_value_t = -8.0, allow_negative_numbers = true)]
    x_min: f64,
    #[arg(long = "x-max", default_value_t = 8.0)]
    x_max: f64,
    #[arg(long = "x-points", default_value_t = default_x_grid().len())]
    x_points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<UniformGrid> {
        UniformGrid::new(self.x_min, self.x_max, self.x_points)
    }
}

#[derive(Args)]
struct SpectralArgs {
    /// Defaults to max(T^(1/3), 10).
    #[arg(long = "lambda-max")]
    lambda_max: Option<f64>,
    #[arg(long = "d-lambda", default_value_t = DEFAULT_D_LAMBDA)]
    d_lambda: f64,
}

impl SpectralArgs {
    fn options(&self) -> EcfOptions {
        EcfOptions {
            lambda_max: self.lambda_max,
            d_lambda: self.d_lambda,
            stride: None,
        }
    }
}

/// Every configuration key can be overridden by the flag of the same name.
#[derive(Args)]
struct BenchArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long = "R")]
    radius: Option<String>,
    /// Comma-separated horizons.
    #[arg(long = "T")]
    horizons: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "lambda-max")]
    lambda_max: Option<String>,
    #[arg(long = "d-lambda")]
    d_lambda: Option<String>,
    #[arg(long = "x-min", allow_hyphen_values = true)]
    x_min: Option<String>,
    #[arg(long = "x-max", allow_hyphen_values = true)]
    x_max: Option<String>,
    #[arg(long = "x-points")]
    x_points: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl BenchArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(file) => ExperimentConfig::read(file)?,
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("model", &self.model),
            ("estimator", &self.estimator),
            ("k", &self.k),
            ("R", &self.radius),
            ("T", &self.horizons),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("dt", &self.dt),
            ("lambda-max", &self.lambda_max),
            ("d-lambda", &self.d_lambda),
            ("x-min", &self.x_min),
            ("x-max", &self.x_max),
            ("x-points", &self.x_points),
            ("out", &self.out),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(config)
    }
}

fn emit(table: &Table, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(file) => table.write(file),
        None => table.write_to(io::stdout().lock()).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

/// Records the model and, for simulated paths, the simulation settings.
fn path_meta(table: &mut Table, args: &PathArgs, path: &Path) {
    table.meta("model", &args.model);
    match &args.file {
        Some(file) => table.meta("path_file", file.display()),
        None => table
            .meta_f64("path_T", path.horizon())
            .meta_f64("path_dt", path.dt())
            .meta("path_seed", path.seed()),
    };
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { path, out } => {
            let (_, p) = path.load()?;
            let mut table = p.to_table();
            table.meta("model", &path.model);
            emit(&table, out.as_ref())
        }
        Command::Density {
            model,
            grid,
            cf,
            lambda_max,
            d_lambda,
            out,
        } => {
            let m = DiffusionModel::builtin(&model)?;
            let density = invariant_density(&m, &grid.grid()?)?;
            let table = if cf {
                density_fourier(&density, lambda_max, d_lambda)?.to_table()
            } else {
                density.to_table()
            };
            emit(&table, out.as_ref())
        }
        Command::Estimate {
            path,
            spectral,
            grid,
            adaptive,
            k,
            radius,
            out,
        } => {
            let (model, p) = path.load()?;
            let x_grid = grid.grid()?;
            let options = spectral.options();
            let (est, mode) = match (k, radius) {
                (Some(k), Some(r)) => (nonadaptive_drift(&p, &model, k, r, &x_grid, &options)?, "nonadaptive"),
                _ if adaptive => (adaptive_fit(&p, &model, &x_grid, &options)?.estimate, "adaptive"),
                _ => return Err(Error::InvalidParameter("pass --adaptive or both --k and --R".into())),
            };
            let mut table = est.to_table();
            table.meta("estimator", mode);
            if let (Some(k), Some(r)) = (k, radius) {
                table.meta("k", k).meta_f64("R", r);
            }
            table.meta_f64("d_lambda", options.d_lambda);
            path_meta(&mut table, &path, &p);
            emit(&table, out.as_ref())
        }
        Command::Select { path, spectral, out } => {
            let (model, p) = path.load()?;
            let fit = adaptive_fit(&p, &model, &default_x_grid(), &spectral.options())?;
            let mut table = fit.trace.to_table();
            table.meta_f64("d_lambda", spectral.d_lambda);
            path_meta(&mut table, &path, &p);
            emit(&table, out.as_ref())?;
            let chosen = fit.trace.selected();
            eprintln!(
                "selected i={} j={} alpha={} beta={} score={}",
                chosen.entry.i,
                chosen.entry.j,
                chosen.entry.weight.alpha(),
                chosen.entry.weight.beta(),
                chosen.score
            );
            Ok(())
        }
        Command::Bench(args) => {
            let config = args.config()?;
            let report = run_experiment(&config)?;
            print_report(&report);
            Ok(())
        }
        Command::Pinsker { k, radius, model } => {
            if k == 0 || !(radius > 0.0) {
                return Err(Error::InvalidParameter(format!("need k >= 1 and R > 0 (k = {k}, R = {radius})")));
            }
            println!("P({k}, {radius}) = {}", pinsker_constant(k, radius));
            if let Some(name) = model {
                let m = DiffusionModel::builtin(&name)?;
                println!("{name}: {}", reference_constant(k, radius, &m)?);
            }
            Ok(())
        }
        Command::Rate { report, k } => {
            let report = RiskReport::load(&report)?;
            let k = k.unwrap_or(report.config.k);
            let fit = rate_fit(&report, k)?;
            println!("slope {} (target {})", fit.slope, -2.0 * k as f64 / (2.0 * k as f64 + 1.0));
            println!("intercept {}", fit.intercept);
            for (row, ratio) in report.rows.iter().zip(&fit.ratios) {
                println!("T {} ratio {ratio}", row.horizon);
            }
            Ok(())
        }
    }
}

fn print_report(report: &RiskReport) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "# drift {VERSION}, estimator {}", report.config.estimator);
    let _ = writeln!(out, "{:>10} {:>14} {:>12} {:>5} {:>12} {:>5} {:>9}", "T", "risk", "se", "reps", "mise", "fail", "seconds");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:>10} {:>14.6e} {:>12.4e} {:>5} {:>12.4e} {:>5} {:>9.2}",
            r.horizon, r.mean_risk, r.std_error, r.reps, r.mean_mise, r.failures, r.wall_time
        );
    }
    if let Some(fit) = &report.fit {
        let _ = writeln!(out, "slope {:.4}, intercept {:.4}", fit.slope, fit.intercept);
    }
    for f in &report.failures {
        let _ = writeln!(out, "failed: {f}");
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
