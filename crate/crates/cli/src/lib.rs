//! `mixfact` command-line front end.
//!
//! Exit codes: 0 on success, 2 on a usage error, 1 on any runtime error.

mod biplot;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use biplot::{biplot_csv, biplot_svg, BiplotData};

pub const THREADS_ENV: &str = "MIXFACT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mixfact", version, about = "Mixed continuous/binary factor analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a factor model and write the rotation-fixed model.
    Fit(FitArgs),
    /// Fit the full joint distribution (mu, Sigma, Lambda, G).
    FitGg(FitGgArgs),
    /// Print the log-density of every row under a model.
    Eval(EvalArgs),
    /// Draw samples from a model.
    Sample(SampleArgs),
    /// Choose the latent dimension by BIC.
    SelectDim(SelectDimArgs),
    /// Factor scores and loading arrows as CSV and SVG.
    Biplot(BiplotArgs),
    /// Empirical and model Pearson correlations side by side.
    Corr(CorrArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON list of {name, kind, binarize_rule}.
    #[arg(long)]
    pub schema: PathBuf,
    /// Z-score continuous columns before use.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub ftol: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub dim: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Treat binary columns as numeric 0/1 (quantification baseline).
    #[arg(long)]
    pub quantify: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitGgArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Hold the interaction matrix G at zero.
    #[arg(long)]
    pub fix_g_zero: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Factor model, GG parameters or fit report (JSON).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Without a schema the file columns are read in order, continuous
    /// columns first.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Column names for the output; defaults to x1.., y1..
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectDimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidates as `a..b` (inclusive) or a comma list.
    #[arg(long, value_parser = parse_dims)]
    pub dims: DimList,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// BIC table (CSV); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the selected model here.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BiplotArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Two 1-based latent axes.
    #[arg(long, value_parser = parse_axes, default_value = "1,2")]
    pub axes: (usize, usize),
    /// Numeric column used to color the points.
    #[arg(long)]
    pub color_by: Option<String>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimList(pub Vec<usize>);

fn parse_dims(s: &str) -> Result<DimList, String> {
    let bad = || format!("expected `a..b` or a comma list of positive integers, got `{s}`");
    let dims: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if dims.is_empty() || dims.contains(&0) {
        return Err(bad());
    }
    Ok(DimList(dims))
}

fn parse_axes(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected two distinct 1-based axes like `1,2`, got `{s}`");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 || a == b {
        return Err(bad());
    }
    Ok((a, b))
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                // a pool that already exists keeps its size
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got `{v}`");
                return 2;
            }
        }
    }
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
