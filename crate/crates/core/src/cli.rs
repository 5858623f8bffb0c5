//! Command-line front end.
//!
//! Exit codes: 0 success (classified / verified), 1 usage, 2 numerical
//! failure, 3 undetermined or not verified.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::conditioning::{classify_growth, uniform_queries, ConditioningCurve, GrowthClass, GrowthParams, GrowthReport};
use crate::error::{Error, Result};
use crate::integrators::{integrate, Method, Trajectory};
use crate::io::{format_number, line_chart_svg, read_csv, write_csv, Table};
use crate::linalg::NormKind;
use crate::reference::reference_trajectory;
use crate::studies::{bound_check, convergence_study, regime_experiment_with, RegimeOptions};
use crate::systems::{builtin, builtin_suite, jacobian_discrepancy, System};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_UNDETERMINED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "gecond", version, about = "Conditioning of ODE solutions and global-error bounds for one-step methods")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// List the built-in systems.
    ListSystems(ListArgs),
    /// Integrate a system and write the trajectory as CSV.
    Integrate(IntegrateArgs),
    /// Compute E(t) and write `t,E,logE` plus a JSON sidecar.
    Condition(ConditionArgs),
    /// Classify the growth of an E(t) curve read from CSV.
    Classify(ClassifyArgs),
    /// Observed order of convergence under step halving.
    Convergence(StudyArgs),
    /// Estimate K in the global-error bound at several step sizes.
    BoundCheck(BoundArgs),
    /// Full pipeline: E(t) on the default grid and its growth class.
    Regime(ConditionArgs),
}

#[derive(Args, Debug)]
pub struct ListArgs {
    #[arg(long)]
    pub json: bool,
    /// Seed for the random points of the Jacobian check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// CSV output path; sidecars use the same stem with .json / .svg.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an SVG line chart next to the CSV (needs --out).
    #[arg(long)]
    pub svg: bool,
    /// Print the machine-readable report on stdout instead of the summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    #[arg(long)]
    pub system: String,
    #[arg(long, default_value = "rk4")]
    pub method: String,
    /// Initial state, comma separated; defaults to the system's.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long = "t-final")]
    pub t_final: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ThresholdArgs {
    #[arg(long = "delta-const", default_value_t = 0.05)]
    pub delta_const: f64,
    #[arg(long = "r2-min", default_value_t = 0.99)]
    pub r2_min: f64,
    #[arg(long = "rho-min", default_value_t = 0.1)]
    pub rho_min: f64,
}

impl ThresholdArgs {
    fn params(&self) -> GrowthParams {
        GrowthParams {
            delta_const: self.delta_const,
            r2_min: self.r2_min,
            rho_min: self.rho_min,
        }
    }
}

#[derive(Args, Debug)]
pub struct IntegrateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, required_unless_present = "reference")]
    pub h: Option<f64>,
    /// Emit a certified reference solution sampled at --queries points.
    #[arg(long)]
    pub reference: bool,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ConditionArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    /// Matrix norm inside E: `two` (operator 2-norm) or `frobenius`.
    #[arg(long, default_value = "two")]
    pub norm: String,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// CSV with columns `t,E` and optionally `logE`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub h0: f64,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value_t = 0.01, allow_hyphen_values = true)]
    pub epsilon: f64,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&config, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &config.command {
        Command::ListSystems(a) => list_systems(a, out),
        Command::Integrate(a) => run_integrate(a, out, err),
        Command::Condition(a) => run_condition(a, false, out, err),
        Command::Regime(a) => run_condition(a, true, out, err),
        Command::Classify(a) => run_classify(a, out),
        Command::Convergence(a) => run_convergence(a, out, err),
        Command::BoundCheck(a) => run_bound(a, out, err),
    }
}

fn resolve(problem: &ProblemArgs) -> Result<(System, Method, Vec<f64>)> {
    let system = builtin(&problem.system)?;
    let method: Method = problem.method.parse()?;
    let x0 = problem
        .x0
        .clone()
        .unwrap_or_else(|| system.default_x0().as_slice().to_vec());
    if x0.len() != system.dimension() {
        return Err(Error::usage(format!(
            "--x0 has {} components, system `{}` needs {}",
            x0.len(),
            system.name(),
            system.dimension()
        )));
    }
    Ok((system, method, x0))
}

fn check_output(output: &OutputArgs) -> Result<()> {
    if output.svg && output.out.is_none() {
        return Err(Error::usage("--svg needs --out"));
    }
    Ok(())
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

/// Writes the CSV (to `--out`, or stdout unless `--json`), the SVG and the
/// JSON sidecar. Returns whether the CSV went to stdout.
fn emit(
    output: &OutputArgs,
    csv_text: &str,
    title: &str,
    report: Option<&serde_json::Value>,
    out: &mut dyn Write,
) -> Result<bool> {
    match &output.out {
        Some(path) => {
            fs::write(path, csv_text)?;
            if output.svg {
                let svg = line_chart_svg(&read_csv(csv_text)?, title)?;
                fs::write(sidecar(path, "svg"), svg)?;
            }
            if let Some(r) = report {
                fs::write(sidecar(path, "json"), serde_json::to_string_pretty(r)? + "\n")?;
            }
            Ok(false)
        }
        None if output.json => Ok(false),
        None => {
            out.write_all(csv_text.as_bytes())?;
            Ok(true)
        }
    }
}

/// Summary goes to stdout unless stdout already carries CSV or JSON.
fn finish(
    output: &OutputArgs,
    csv_on_stdout: bool,
    summary: &str,
    report: &serde_json::Value,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    if output.json && !csv_on_stdout {
        writeln!(out, "{}", serde_json::to_string_pretty(report)?)?;
        writeln!(err, "{summary}")?;
    } else if csv_on_stdout {
        writeln!(err, "{summary}")?;
    } else {
        writeln!(out, "{summary}")?;
    }
    Ok(())
}

fn list_systems(args: &ListArgs, out: &mut dyn Write) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut rows = Vec::new();
    for s in builtin_suite() {
        let x0 = s.default_x0().as_slice().to_vec();
        let mut worst = jacobian_discrepancy(&s, 0.0, &x0)?;
        for _ in 0..10 {
            let p: Vec<f64> = x0.iter().map(|v| v + rng.gen_range(-2.0..=2.0)).collect();
            worst = worst.max(jacobian_discrepancy(&s, 0.0, &p)?);
        }
        rows.push((s, x0, worst));
    }
    if args.json {
        let items: Vec<_> = rows
            .iter()
            .map(|(s, x0, worst)| {
                json!({
                    "name": s.name(),
                    "dimension": s.dimension(),
                    "regime": s.regime().to_string(),
                    "default_x0": x0,
                    "has_exact": s.has_exact(),
                    "description": s.description(),
                    "jacobian_check": worst,
                })
            })
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&items)?)?;
    } else {
        writeln!(out, "{:<14}{:>4}  {:<21}{:<24}{:>12}", "name", "dim", "regime", "default_x0", "jac_check")?;
        for (s, x0, worst) in &rows {
            let x0s = x0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            writeln!(
                out,
                "{:<14}{:>4}  {:<21}{:<24}{:>12.2e}",
                s.name(),
                s.dimension(),
                s.regime().to_string(),
                format!("[{x0s}]"),
                worst
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn trajectory_table(tr: &Trajectory) -> Result<Table> {
    let d = tr.dimension();
    let mut headers = vec!["t".to_string()];
    headers.extend((1..=d).map(|i| format!("x{i}")));
    let mut columns = vec![tr.times().to_vec()];
    for i in 0..d {
        columns.push(tr.states().iter().map(|s| s[i]).collect());
    }
    Table::new(headers, columns)
}

fn run_integrate(args: &IntegrateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    check_output(&args.output)?;
    let p = &args.problem;
    let (system, method, x0) = resolve(p)?;
    let (tr, report) = if args.reference {
        if args.queries < 2 {
            return Err(Error::usage("--queries must be at least 2"));
        }
        let q = uniform_queries(p.t0, p.t_final, args.queries);
        let r = reference_trajectory(&system, &x0, p.t0, p.t_final, &q)?;
        let report = json!({
            "system": system.name(),
            "kind": r.trajectory.method_name(),
            "t0": p.t0,
            "t_final": p.t_final,
            "x0": x0,
            "certificate": r.certificate,
            "h_ref": r.h_ref,
            "halvings": r.halvings,
        });
        (r.trajectory, report)
    } else {
        let h = args.h.expect("clap enforces --h");
        let tr = integrate(&method, &system, &x0, p.t0, p.t_final, h)?;
        let report = json!({
            "system": system.name(),
            "method": method.name(),
            "order": method.order(),
            "t0": p.t0,
            "t_final": p.t_final,
            "h": h,
            "x0": x0,
            "steps": tr.steps(),
        });
        (tr, report)
    };
    let csv_text = write_csv(&trajectory_table(&tr)?)?;
    let title = format!("{} ({})", system.name(), tr.method_name());
    let on_stdout = emit(&args.output, &csv_text, &title, Some(&report), out)?;
    let fin: Vec<String> = tr.final_state().iter().map(|v| format_number(*v)).collect();
    let summary = format!(
        "system={} method={} points={} x(T)=[{}]",
        system.name(),
        tr.method_name(),
        tr.len(),
        fin.join(",")
    );
    finish(&args.output, on_stdout, &summary, &report, out, err)?;
    Ok(EXIT_OK)
}

fn curve_table(curve: &ConditioningCurve) -> Result<Table> {
    Table::new(
        vec!["t".into(), "E".into(), "logE".into()],
        vec![curve.query_times.clone(), curve.values.clone(), curve.log_values.clone()],
    )
}

fn growth_json(r: &GrowthReport) -> serde_json::Value {
    serde_json::to_value(r).unwrap_or(serde_json::Value::Null)
}

fn run_condition(args: &ConditionArgs, regime: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    check_output(&args.output)?;
    let p = &args.problem;
    let (system, method, x0) = resolve(p)?;
    let norm: NormKind = args.norm.parse()?;
    let params = args.thresholds.params();
    let mut opts = RegimeOptions::new(p.t_final, args.h);
    opts.method = method.clone();
    opts.t0 = p.t0;
    opts.x0 = Some(x0.clone());
    opts.queries = args.queries;
    opts.params = params;
    opts.norm = norm;
    let (curve, growth) = regime_experiment_with(&system, &opts)?;

    let max_shift = curve
        .requested_times
        .iter()
        .zip(&curve.query_times)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let report = json!({
        "system": system.name(),
        "regime": system.regime().to_string(),
        "method": method.name(),
        "order": method.order(),
        "norm": norm,
        "t0": p.t0,
        "t_final": p.t_final,
        "h": args.h,
        "x0": x0,
        "queries": curve.len(),
        "max_snap_shift": max_shift,
        "requested_times": curve.requested_times,
        "E_final": curve.last_value(),
        "logE_final": curve.log_values.last(),
        "growth": growth_json(&growth),
    });
    let csv_text = write_csv(&curve_table(&curve)?)?;
    let title = format!("E(t) for {} ({}, h={})", system.name(), method.name(), args.h);
    // regime prints only its summary unless asked for files
    let on_stdout = if regime && args.output.out.is_none() {
        false
    } else {
        emit(&args.output, &csv_text, &title, Some(&report), out)?
    };
    let summary = format!(
        "system={} method={} T={} E(T)={} class={} constancy_ratio={:.4} linear_r2={:.6} log_slope={:.6}",
        system.name(),
        method.name(),
        p.t_final,
        format_number(curve.last_value()),
        growth.class,
        growth.constancy_ratio,
        growth.tail_linear_fit.r_squared,
        growth.tail_exp_fit.slope
    );
    finish(&args.output, on_stdout, &summary, &report, out, err)?;
    if regime && growth.class == GrowthClass::Undetermined {
        return Ok(EXIT_UNDETERMINED);
    }
    Ok(EXIT_OK)
}

fn run_classify(args: &ClassifyArgs, out: &mut dyn Write) -> Result<i32> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Error::usage(format!("cannot read {}: {e}", args.input.display())))?;
    let table = read_csv(&text)?;
    let t = table.column("t").ok_or_else(|| Error::usage("CSV needs a `t` column"))?;
    let e = table.column("E").ok_or_else(|| Error::usage("CSV needs an `E` column"))?;
    let log = table.column("logE").map(|l| l.to_vec());
    let curve = ConditioningCurve::from_samples(t.to_vec(), e.to_vec(), log)?;
    let report = classify_growth(&curve, &args.thresholds.params())?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&growth_json(&report))?)?;
    } else {
        writeln!(
            out,
            "class={} constancy_ratio={:.4} linear_r2={:.6} log_slope={:.6}",
            report.class, report.constancy_ratio, report.tail_linear_fit.r_squared, report.tail_exp_fit.slope
        )?;
    }
    Ok(if report.class == GrowthClass::Undetermined {
        EXIT_UNDETERMINED
    } else {
        EXIT_OK
    })
}

fn run_convergence(args: &StudyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    check_output(&args.output)?;
    let p = &args.problem;
    if p.t0 != 0.0 {
        return Err(Error::usage("studies run on [0, T]; --t0 must be 0"));
    }
    let (system, method, x0) = resolve(p)?;
    let study = convergence_study(&system, &method, &x0, p.t_final, args.h0, args.levels)?;
    let mut orders = study.observed_orders.clone();
    orders.resize(study.levels.len(), f64::NAN);
    let table = Table::new(
        vec!["h".into(), "max_error".into(), "observed_order".into()],
        vec![
            study.levels.iter().map(|l| l.h).collect(),
            study.levels.iter().map(|l| l.max_error).collect(),
            orders,
        ],
    )?;
    let verified = study.verified();
    let report = json!({
        "study": study,
        "verified": verified,
        "order_tolerance": crate::studies::ORDER_TOLERANCE,
        "x0": x0,
    });
    let csv_text = write_csv(&table)?;
    let title = format!("convergence: {} / {}", system.name(), method.name());
    let on_stdout = emit(&args.output, &csv_text, &title, Some(&report), out)?;
    let orders: Vec<String> = study.observed_orders.iter().map(|o| format!("{o:.4}")).collect();
    let mut summary = format!(
        "system={} method={} order={} observed_orders=[{}] verified={}",
        system.name(),
        method.name(),
        method.order(),
        orders.join(","),
        verified
    );
    if study.degenerate {
        summary.push_str(" degenerate: exact on this system");
    }
    finish(&args.output, on_stdout, &summary, &report, out, err)?;
    Ok(if verified { EXIT_OK } else { EXIT_UNDETERMINED })
}

fn run_bound(args: &BoundArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let s = &args.study;
    check_output(&s.output)?;
    let p = &s.problem;
    if p.t0 != 0.0 {
        return Err(Error::usage("studies run on [0, T]; --t0 must be 0"));
    }
    let (system, method, x0) = resolve(p)?;
    let report = bound_check(
        &system,
        &method,
        &x0,
        p.t_final,
        s.h0,
        s.levels,
        args.epsilon,
        &args.thresholds.params(),
    )?;
    let table = Table::new(
        vec!["h".into(), "K".into()],
        vec![
            report.per_level.iter().map(|l| l.h).collect(),
            report.per_level.iter().map(|l| l.k).collect(),
        ],
    )?;
    let json_report = json!({
        "system": report.system_name,
        "method": report.method_name,
        "order": report.order,
        "t_final": report.t_final,
        "epsilon": report.epsilon,
        "x0": x0,
        "per_level": report.per_level,
        "k_stability": report.k_stability,
        "k_stability_limit": crate::studies::K_STABILITY_LIMIT,
        "verified": report.verified,
        "growth": report.growth.as_ref().map(growth_json),
        "E_final": report.conditioning.last_value(),
        "failed_levels": report.failed_levels,
        "reference_certificate": report.reference_certificate,
    });
    let csv_text = write_csv(&table)?;
    let title = format!("K(h): {} / {}", system.name(), method.name());
    let on_stdout = emit(&s.output, &csv_text, &title, Some(&json_report), out)?;
    let ks: Vec<String> = report.per_level.iter().map(|l| format!("{:.4e}", l.k)).collect();
    let summary = format!(
        "system={} method={} epsilon={} K=[{}] k_stability={:.4} verified={}",
        system.name(),
        method.name(),
        args.epsilon,
        ks.join(","),
        report.k_stability,
        report.verified
    );
    finish(&s.output, on_stdout, &summary, &json_report, out, err)?;
    Ok(if report.verified { EXIT_OK } else { EXIT_UNDETERMINED })
}
