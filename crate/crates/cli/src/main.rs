use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use biconserve_core::conformal::{
    ricci_condition, ricci_tolerance_from_metric, RicciForm, RicciVariant, NESTED_BOUNDARY_LAYER,
};
use biconserve_core::flattener::Method;
use biconserve_core::metric::{gauss_curvature_fd, MetricGrid};
use biconserve_core::pipeline::{
    exit_code_for, parse_stages, run_and_export, Overrides, RunConfig, Stage, EXIT_CHECK, EXIT_OK,
};
use biconserve_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Numerical checks for the intrinsic geometry of biconservative surfaces.
///
/// Set BICONSERVE_LOG (error, warn, info, debug, trace) for log output.
/// Exit codes: 0 all checks pass, 1 a check failed, 2 configuration
/// error, 3 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "biconserve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline and write reports and data files.
    Run(RunArgs),
    /// Check one Ricci-type condition on a metric read from CSV.
    CheckRicci(CheckRicciArgs),
}

/// Flags override values from the config file; unset values take the
/// defaults shown.
#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config file; an empty file gives the defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated stages, or `all` [default: all]
    #[arg(long, value_parser = parse_stage_list)]
    stages: Option<StageList>,
    /// Output directory [default: out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ambient curvature [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    /// Initial curvature K(u0) [default: -1]
    #[arg(long, allow_hyphen_values = true)]
    k0: Option<f64>,
    /// Initial slope K'(u0) [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    kprime0: Option<f64>,
    /// Profile span as `u0,u1` [default: 0,1]
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    u_span: Option<[f64; 2]>,
    /// Half-width of the s range [default: 1]
    #[arg(long)]
    s_extent: Option<f64>,
    /// Samples along u [default: 201]
    #[arg(long)]
    nu: Option<usize>,
    /// Samples along s [default: 201]
    #[arg(long)]
    ns: Option<usize>,
    /// ODE tolerance [default: 1e-10]
    #[arg(long)]
    ode_tol: Option<f64>,
    /// Flatness tolerance relative to max|K| at spacing 1e-2 [default: 1e-3]
    #[arg(long)]
    flat_tol: Option<f64>,
    /// Exponent solver residual target [default: 1e-8 shooting, 1e-6 collocation]
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Exponent solver: shooting or collocation [default: shooting]
    #[arg(long)]
    method: Option<Method>,
    /// Initial exponent data `r,r',r'',r'''` [default: 0.5,0,0,0]
    #[arg(long, value_parser = parse_quad, allow_hyphen_values = true)]
    r_init: Option<[f64; 4]>,
    /// Ricci variant for the conformal checks [default: biconservative]
    #[arg(long)]
    variant: Option<RicciVariant>,
    /// Write plot tables under <out>/plots [default: on]
    #[arg(long, overrides_with = "no_plots")]
    plots: bool,
    #[arg(long, overrides_with = "plots")]
    no_plots: bool,
}

#[derive(Args, Debug)]
struct CheckRicciArgs {
    /// Metric CSV with header u,s,g11,g12,g22 on a uniform grid
    #[arg(long)]
    metric: PathBuf,
    /// Ambient curvature
    #[arg(long, allow_hyphen_values = true)]
    c: f64,
    /// minimal or biconservative
    #[arg(long)]
    variant: RicciVariant,
    /// i, ii, iii or iv (iv needs c = 0)
    #[arg(long)]
    form: RicciForm,
    /// Tolerance on the max residual [default: 1e-3 of the largest term (i),
    /// 1e-3 max|K| (ii), 1e-2 max|K| (iii) or 1e-2 (iv), times (h/1e-2)^2]
    #[arg(long)]
    tol: Option<f64>,
}

// one comma-separated value, not a repeated flag
#[derive(Debug, Clone)]
struct StageList(Vec<Stage>);

fn parse_stage_list(s: &str) -> Result<StageList> {
    parse_stages(s).map(StageList)
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    parse_floats(s)
}

fn parse_quad(s: &str) -> std::result::Result<[f64; 4], String> {
    parse_floats(s)
}

impl RunArgs {
    fn overrides(self) -> Overrides {
        let plots = match (self.plots, self.no_plots) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        };
        Overrides {
            c: self.c,
            k0: self.k0,
            kprime0: self.kprime0,
            u_span: self.u_span,
            s_extent: self.s_extent,
            nu: self.nu,
            ns: self.ns,
            ode_tol: self.ode_tol,
            flat_tol: self.flat_tol,
            solver_tol: self.solver_tol,
            method: self.method,
            r_init: self.r_init,
            variant: self.variant,
            stages: self.stages.map(|l| l.0),
            out: self.out,
            plots,
        }
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(args.overrides());
    let report = run_and_export(&cfg)?;
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = write!(io::stdout(), "{}", report.summary());
    Ok(report.exit_code)
}

fn check_ricci(args: CheckRicciArgs) -> Result<i32> {
    let file = File::open(&args.metric)
        .map_err(|e| Error::Config {
            field: "metric".into(),
            message: format!("{}: {e}", args.metric.display()),
        })?;
    let metric = MetricGrid::read_csv(file, args.c)?;
    let k = gauss_curvature_fd(&metric)?;
    let tol = match args.tol {
        Some(t) => t,
        None => ricci_tolerance_from_metric(&metric, &k, args.c, args.variant, args.form)?,
    };
    // K is itself differenced, so the condition needs the wider layer
    let rep = ricci_condition(
        &metric,
        &k,
        args.c,
        args.variant,
        args.form,
        tol,
        NESTED_BOUNDARY_LAYER,
    )?;
    let _ = writeln!(io::stdout(), "{}", serde_json::to_string_pretty(&rep.to_report())?);
    Ok(if rep.passed { EXIT_OK } else { EXIT_CHECK })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BICONSERVE_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::CheckRicci(a) => check_ricci(a),
    };
    let code = match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    ExitCode::from(code as u8)
}
