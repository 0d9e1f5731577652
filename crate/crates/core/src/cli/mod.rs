//! Command-line front end: `fit`, `simulate` and `gof`.
//!
//! Exit codes: 0 success, 2 parse or validation error, 3 domain error,
//! 4 non-convergence, 5 I/O error. The default rayon thread count can be set
//! with the `CLUSTERCOUNT_THREADS` environment variable.

pub mod dataset;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::fit::{fit_mle, fit_regression_combined, goodness_of_fit, FitFamily, FitOptions};
use crate::model::{CombinedRegression, RateModelSpec};
use crate::simulate::{repeat_sizes, simulate_dataset, Ascertainment, DatasetModel};

pub use dataset::{read_dataset, write_dataset, Dataset};
pub use report::{Report, REGRESSION_MODEL};

pub const THREADS_ENV: &str = "CLUSTERCOUNT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    Parse = 2,
    Domain = 3,
    Convergence = 4,
    Io = 5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Parse,
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Domain,
            message: message.into(),
        }
    }

    pub fn convergence(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Convergence,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Io,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Optimization(_) | Error::Numerical(_) => CliError::convergence(message),
            _ => CliError::domain(message),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "clustercount",
    version,
    about = "Counting-process models for clustered binary data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV dataset and write a JSON report.
    Fit(FitArgs),
    /// Simulate a CSV dataset from a rate model.
    Simulate(SimulateArgs),
    /// Add observed-versus-expected cells and chi-square to a report.
    Gof(GofArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset with columns n, r and optionally m, weight and covariates.
    pub data: PathBuf,
    /// Model family, e.g. susceptible1, combined, beta-binomial.
    #[arg(long, default_value = "combined")]
    pub model: String,
    /// Covariates for the combined-family regression, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub regress: Vec<String>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AscertainMode {
    /// Start the process with `m` affected units.
    Proband,
    /// Simulate from zero and keep clusters with at least `m` affected.
    Rejection,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Rate family, or combined-regression for dose-dependent rates.
    #[arg(long)]
    pub model: String,
    /// Family parameters, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Vec<f64>,
    /// Cluster sizes, as a list (4,5,6) and/or ranges (4-8).
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<String>,
    /// Clusters of each listed size.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Affected units at the start of observation.
    #[arg(long, default_value_t = 0)]
    pub ascertain: usize,
    #[arg(long, value_enum, default_value_t = AscertainMode::Proband)]
    pub ascertain_mode: AscertainMode,
    /// Covariate column name for combined-regression.
    #[arg(long, default_value = "dose")]
    pub covariate: String,
    /// Covariate levels, assigned to clusters in rotation.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Vec<f64>,
    /// Log-alpha coefficients (intercept, slope).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub phi: Vec<f64>,
    /// Log-beta coefficients (intercept, slope).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub psi: Vec<f64>,
    /// Dataset path; the dataset goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GofArgs {
    pub data: PathBuf,
    pub report: PathBuf,
    /// Where to write the augmented report; defaults to rewriting `report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(e.to_string())),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    read_dataset(read_text(path)?.as_bytes())
}

/// Fits and returns the report; the status is `Convergence` when the
/// optimizer did not converge, in which case the report is still produced.
pub fn fit_report(
    data: &Dataset,
    model: &str,
    regress: &[String],
) -> Result<(Report, ExitStatus), CliError> {
    let options = FitOptions::default();
    let report = if regress.is_empty() && model != REGRESSION_MODEL {
        let family: FitFamily = model.parse()?;
        Report::from_fit(&fit_mle(family, &data.rows, &options)?, data.rows.len())
    } else {
        if !matches!(model, "combined" | REGRESSION_MODEL) {
            return Err(CliError::domain(format!(
                "--regress fits the combined family; got --model {model}"
            )));
        }
        let selected = data.select(regress)?;
        Report::from_regression(
            &fit_regression_combined(&selected.rows, regress, &options)?,
            data.rows.len(),
        )
    };
    let status = if report.converged {
        ExitStatus::Ok
    } else {
        ExitStatus::Convergence
    };
    Ok((report, status))
}

pub fn cmd_fit(args: &FitArgs) -> Result<ExitStatus, CliError> {
    let data = load_dataset(&args.data)?;
    let (report, status) = fit_report(&data, &args.model, &args.regress)?;
    emit(args.out.as_deref(), &report.to_json()?)?;
    if args.out.is_some() {
        print!("{}", report.render());
    }
    if status != ExitStatus::Ok {
        eprintln!(
            "warning: optimizer did not converge (gradient norm {:e}); report written anyway",
            report.gradient_norm
        );
    }
    Ok(status)
}

fn parse_sizes(items: &[String]) -> Result<Vec<usize>, CliError> {
    let mut sizes = Vec::new();
    for item in items {
        let bad = || CliError::parse(format!("bad cluster size `{item}`"));
        match item.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                sizes.extend(a..=b);
            }
            None => sizes.push(item.trim().parse().map_err(|_| bad())?),
        }
    }
    Ok(sizes)
}

pub fn simulate_to_dataset(args: &SimulateArgs) -> Result<Dataset, CliError> {
    let sizes = repeat_sizes(&parse_sizes(&args.sizes)?, args.reps);
    let (model, covariate_names) = if args.model == REGRESSION_MODEL {
        if args.levels.is_empty() {
            return Err(CliError::domain("combined-regression needs --levels"));
        }
        if args.phi.len() != 2 || args.psi.len() != 2 {
            return Err(CliError::domain(
                "--phi and --psi each take an intercept and a slope",
            ));
        }
        let model = DatasetModel::CombinedRegression {
            coefficients: CombinedRegression::new(args.phi.clone(), args.psi.clone())?,
            covariates: args.levels.iter().map(|&d| vec![d]).collect(),
        };
        (model, vec![args.covariate.clone()])
    } else {
        let family: FitFamily = args.model.parse()?;
        let Some(rate_family) = family.rate_family() else {
            return Err(CliError::domain(format!(
                "cannot simulate from {family}; use a rate family"
            )));
        };
        let spec = RateModelSpec::new(rate_family, args.params.clone())?;
        (DatasetModel::Rates(spec), Vec::new())
    };
    let policy = match (args.ascertain, args.ascertain_mode) {
        (0, _) => Ascertainment::None,
        (m, AscertainMode::Proband) => Ascertainment::Proband(m),
        (m, AscertainMode::Rejection) => Ascertainment::Rejection(m),
    };
    let rows = simulate_dataset(&model, &sizes, policy, args.seed)?;
    Ok(Dataset {
        covariate_names,
        rows,
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<ExitStatus, CliError> {
    let data = simulate_to_dataset(args)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &data)?;
    emit(
        args.out.as_deref(),
        &String::from_utf8(buf).expect("csv output is utf-8"),
    )?;
    Ok(ExitStatus::Ok)
}

/// Adds the goodness-of-fit section for `data` to `report`.
pub fn gof_report(data: &Dataset, report: &mut Report) -> Result<(), CliError> {
    let (model, n_params) = report.param_model()?;
    let rows = match &report.regression {
        Some(reg) => data.select(&reg.covariates)?.rows,
        None => data.rows.clone(),
    };
    if rows.len() != report.rows {
        return Err(CliError::domain(format!(
            "report was fit to {} rows but the dataset has {}",
            report.rows,
            rows.len()
        )));
    }
    report.set_gof(goodness_of_fit(&model, n_params, &rows)?);
    Ok(())
}

pub fn cmd_gof(args: &GofArgs) -> Result<ExitStatus, CliError> {
    let mut report = Report::from_json(&read_text(&args.report)?)?;
    let data = load_dataset(&args.data)?;
    gof_report(&data, &mut report)?;
    let gof = report.gof.as_ref().expect("set above");
    println!("chi2 = {:.3} over {} cells", gof.chi2, gof.cells.len());
    emit(
        Some(args.out.as_deref().unwrap_or(&args.report)),
        &report.to_json()?,
    )?;
    Ok(ExitStatus::Ok)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().map_err(|_| {
        CliError::parse(format!(
            "{THREADS_ENV} must be a nonnegative integer, got `{value}`"
        ))
    })?;
    // a pool built earlier in the same process wins; that is fine
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitStatus::Parse as i32
            } else {
                0
            };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Gof(a) => cmd_gof(a),
    });
    match result {
        Ok(status) => status as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.status as i32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_accept_lists_and_ranges() {
        let items: Vec<String> = ["4-6", "9"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_sizes(&items).unwrap(), vec![4, 5, 6, 9]);
        assert!(parse_sizes(&["6-4".to_string()]).is_err());
        assert!(parse_sizes(&["x".to_string()]).is_err());
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        let e: CliError = Error::domain("alpha", "negative").into();
        assert_eq!(e.status, ExitStatus::Domain);
        let e: CliError = Error::Optimization("stuck".into()).into();
        assert_eq!(e.status, ExitStatus::Convergence);
        let e: CliError = Error::RankDeficient(vec!["a".into()]).into();
        assert_eq!(e.status, ExitStatus::Domain);
    }

    #[test]
    fn fit_on_covariate_free_data() {
        let data = read_dataset("n,r\n4,1\n4,2\n3,0\n5,3\n2,1\n6,2\n".as_bytes()).unwrap();
        let (report, status) = fit_report(&data, "combined", &[]).unwrap();
        assert_eq!(status, ExitStatus::Ok);
        assert_eq!(report.parameters.len(), 2);
        assert_eq!(report.aic, -2.0 * report.loglik + 4.0);
        assert!(fit_report(&data, "susceptible1", &["dose".into()]).is_err());
        assert_eq!(
            fit_report(&data, "nope", &[]).unwrap_err().status,
            ExitStatus::Domain
        );
    }

    #[test]
    fn gof_rejects_mismatched_report() {
        let data = read_dataset("n,r\n4,1\n4,2\n3,0\n".as_bytes()).unwrap();
        let (mut report, _) = fit_report(&data, "susceptible1", &[]).unwrap();
        let other = read_dataset("n,r\n4,1\n".as_bytes()).unwrap();
        assert_eq!(
            gof_report(&other, &mut report).unwrap_err().status,
            ExitStatus::Domain
        );
        gof_report(&data, &mut report).unwrap();
        let once = report.to_json().unwrap();
        gof_report(&data, &mut report).unwrap();
        assert_eq!(report.to_json().unwrap(), once);
    }
}
