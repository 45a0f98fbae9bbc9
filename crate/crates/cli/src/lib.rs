//! Commands behind the `gpconv` binary.

pub mod plot;

use std::fs;
use std::io::Write;
use std::path::Path;

use gpconv::experiments::{
    builtin_figure, builtin_figures, figure_expectation, run_convergence, run_dgp_convergence, write_rates_csv,
    write_records_csv, ConvergenceReport, ExperimentConfig, McmcSettings, FIGURE_IDS,
};
use gpconv::{Error, Result};
use rayon::prelude::*;

pub use plot::{render_loglog_svg, PlotRequest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn report_exit(res: Result<()>) -> i32 {
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Read a config file holding one experiment object or an array of them.
pub fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let items = match value {
        serde_json::Value::Array(v) => v,
        v => vec![v],
    };
    items
        .into_iter()
        .map(|v| ExperimentConfig::from_json(&v.to_string()).map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

/// Write `<id>.csv` and one `<id>_<norm>.svg` per norm.
pub fn write_report(out_dir: &Path, report: &ConvergenceReport) -> Result<()> {
    let csv_path = out_dir.join(format!("{}.csv", report.config_id));
    let mut buf = Vec::new();
    write_records_csv(&mut buf, report)?;
    fs::write(&csv_path, buf).map_err(io_err(&csv_path))?;

    let reference_slopes: Vec<f64> =
        figure_expectation(&report.config_id).map(|x| vec![x.expected_rate]).unwrap_or_default();
    if report.records.len() < 2 {
        return Ok(());
    }
    for &(norm, fit) in &report.rates {
        let path = out_dir.join(format!("{}_{}.svg", report.config_id, norm));
        let req = PlotRequest {
            records: report.records.clone(),
            norm,
            rate_fit: fit,
            reference_slopes: reference_slopes.clone(),
            title: format!("{} ({} error)", report.config_id, norm),
            output_path: path.display().to_string(),
        };
        fs::write(&path, render_loglog_svg(&req)?).map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_outputs(out_dir: &Path, reports: &[ConvergenceReport]) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for r in reports {
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        write_report(out_dir, r)?;
    }
    let path = out_dir.join("rates.csv");
    let mut buf = Vec::new();
    write_rates_csv(&mut buf, reports)?;
    fs::write(&path, buf).map_err(io_err(&path))
}

fn run_all(configs: &[ExperimentConfig], seed: u64) -> Result<Vec<ConvergenceReport>> {
    configs.par_iter().map(|c| run_convergence(c, seed)).collect()
}

pub fn run(config_path: &Path, out_dir: &Path, seed: u64) -> Result<Vec<ConvergenceReport>> {
    let configs = load_configs(config_path)?;
    let reports = run_all(&configs, seed)?;
    write_outputs(out_dir, &reports)?;
    Ok(reports)
}

pub fn cmd_run(config_path: &Path, out_dir: &Path, seed: u64) -> i32 {
    report_exit(run(config_path, out_dir, seed).map(|_| ()))
}

/// One line of the figure summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureSummary {
    pub id: String,
    pub expected_rate: f64,
    pub fitted_rate: Option<f64>,
    pub band: String,
    pub pass: bool,
}

pub fn figures(which: &str, out_dir: &Path, seed: u64) -> Result<Vec<FigureSummary>> {
    let configs = if which == "all" {
        builtin_figures()
    } else {
        vec![builtin_figure(which).ok_or_else(|| {
            Error::Config(format!("unknown figure `{which}`; expected all or one of {}", FIGURE_IDS.join(", ")))
        })?]
    };
    let reports = run_all(&configs, seed)?;
    write_outputs(out_dir, &reports)?;
    Ok(reports
        .iter()
        .map(|r| {
            let exp = figure_expectation(&r.config_id).expect("built-in figures have expectations");
            let fitted_rate = r.rate(gpconv::analysis::ErrorNormKind::L2).map(|f| f.slope);
            let band = match exp.upper {
                Some(u) => format!("[{:.1}, {:.1}]", exp.lower, u),
                None => format!(">= {:.1}", exp.lower),
            };
            FigureSummary {
                id: r.config_id.clone(),
                expected_rate: exp.expected_rate,
                fitted_rate,
                band,
                pass: fitted_rate.is_some_and(|s| exp.accepts(s)),
            }
        })
        .collect())
}

pub fn format_summary(rows: &[FigureSummary]) -> String {
    let mut s = format!("{:<20} {:>8} {:>8}  {:<12} {}\n", "config", "expected", "fitted", "band", "result");
    for r in rows {
        let fitted = r.fitted_rate.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        s += &format!(
            "{:<20} {:>8.1} {:>8}  {:<12} {}\n",
            r.id,
            r.expected_rate,
            fitted,
            r.band,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    s
}

pub fn cmd_figures<W: Write>(which: &str, out_dir: &Path, seed: u64, out: &mut W) -> i32 {
    report_exit(figures(which, out_dir, seed).and_then(|rows| {
        out.write_all(format_summary(&rows).as_bytes()).map_err(|e| Error::Io(e.to_string()))
    }))
}

pub fn dgp(config_path: &Path, mcmc: McmcSettings, out_dir: &Path, seed: u64) -> Result<Vec<ConvergenceReport>> {
    let configs = load_configs(config_path)?;
    let reports = configs
        .par_iter()
        .map(|c| run_dgp_convergence(c, mcmc, seed))
        .collect::<Result<Vec<_>>>()?;
    write_outputs(out_dir, &reports)?;
    Ok(reports)
}

pub fn cmd_dgp(config_path: &Path, mcmc: McmcSettings, out_dir: &Path, seed: u64) -> i32 {
    report_exit(dgp(config_path, mcmc, out_dir, seed).map(|_| ()))
}
