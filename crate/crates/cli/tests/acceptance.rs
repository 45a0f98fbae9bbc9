//! Acceptance gate. Each criterion is its own test and prints one PASS/FAIL line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use gpconv::analysis::{error_norm, fit_rate, matern_equivalence_constants, uniform_mesh, DesignSet, ErrorNormKind};
use gpconv::experiments::{
    builtin_figure, builtin_figures, run_convergence, run_dgp_convergence, tdgp_reference, ModelSpec, NoiseModel,
};
use gpconv::kernels::{bell_number, matern_eval, matern_eval_bessel, Builtin};
use gpconv::{fit_with, FitOptions, FunctionHandle, KernelSpec, Precision, TrainingData};
use gpconv_cli::{figures, FigureSummary};
use tempfile::TempDir;

const SEED: u64 = 42;

struct FigureRun {
    dir: TempDir,
    rows: Vec<FigureSummary>,
}

fn figure_run() -> &'static FigureRun {
    static RUN: OnceLock<FigureRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let rows = figures("all", dir.path(), SEED).expect("figure run");
        FigureRun { dir, rows }
    })
}

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn slope_of(id: &str) -> f64 {
    let row = figure_run().rows.iter().find(|r| r.id == id).expect("figure present");
    row.fitted_rate.unwrap_or(f64::NAN)
}

fn check_band(n: u32, id: &str, lo: f64, hi: f64) {
    let s = slope_of(id);
    let pass = s >= lo && s <= hi;
    report(n, pass, &format!("{id} slope {s:.3} in [{lo}, {hi}]"));
    assert!(pass, "{id}: slope {s} outside [{lo}, {hi}]");
}

#[test]
fn criterion_01_warp_rate() {
    check_band(1, "fig_warp", 2.5, 3.5);
}

#[test]
fn criterion_02_smooth_mixture_rate() {
    check_band(2, "fig_mix3_smooth", 1.6, 2.6);
}

#[test]
fn criterion_03_convolution_rate() {
    let s = slope_of("fig_conv");
    let pass = s >= 1.2;
    let info = if (1.5..=2.5).contains(&s) { "inside" } else { "outside" };
    report(3, pass, &format!("fig_conv slope {s:.3} >= 1.2 (informational band [1.5, 2.5]: {info})"));
    assert!(pass, "fig_conv slope {s}");
}

#[test]
fn criterion_04_indicator_mixture_rate() {
    check_band(4, "fig_mix3_indicator", 2.4, 3.6);
}

#[test]
fn criterion_05_noninvertible_warp_rate() {
    check_band(5, "fig_warp_noninv", 1.5, 2.5);
}

#[test]
fn criterion_06_piecewise_warp_rate() {
    check_band(6, "fig_warp_piecewise", 1.5, 2.5);
}

fn figure_kernel(id: &str) -> KernelSpec {
    match builtin_figure(id).unwrap().kernel {
        ModelSpec::Gp(k) => k,
        ModelSpec::Dgp(_) => unreachable!(),
    }
}

fn noise_free_fit(k: &KernelSpec, n: usize) -> (Vec<f64>, Vec<f64>, gpconv::GpPosterior) {
    let design = DesignSet::uniform((0.0, 5.0), n).unwrap();
    let xs = design.points().to_vec();
    let ys: Vec<f64> = xs.iter().map(|u| (2.0 * u).sin()).collect();
    let data = TrainingData::from_1d(&xs, ys.clone(), 0.0).unwrap();
    let post = fit_with(k, &data, FitOptions { jitter: 1e-15, precision: Precision::Extended }).unwrap();
    (xs, ys, post)
}

#[test]
fn criterion_07_interpolation() {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for cfg in builtin_figures() {
        let (xs, ys, post) = noise_free_fit(&figure_kernel(&cfg.id), 256);
        let m = post.posterior_mean_1d(&xs).unwrap();
        let r = m.iter().zip(&ys).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        detail.push(format!("{}={r:.1e}", cfg.id));
        worst = worst.max(r);
    }
    let pass = worst <= 1e-6;
    report(7, pass, &format!("max residual {worst:.2e} <= 1e-6 ({})", detail.join(" ")));
    assert!(pass);
}

#[test]
fn criterion_08_variance_shrinks() {
    let k = figure_kernel("fig_warp");
    let mesh: Vec<Vec<f64>> = uniform_mesh((0.0, 5.0), 4096).unwrap().into_iter().map(|u| vec![u]).collect();
    let mean_var = |n| {
        let (_, _, post) = noise_free_fit(&k, n);
        let v = post.posterior_variance(&mesh).unwrap();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (v64, v256) = (mean_var(64), mean_var(256));
    let pass = v256 <= v64;
    report(8, pass, &format!("fig_warp mean variance N=256 {v256:.3e} <= N=64 {v64:.3e}"));
    assert!(pass);
}

#[test]
fn criterion_09_matern_consistency() {
    let mut worst = 0.0f64;
    for nu in [0.5, 1.5, 2.5, 3.5, 4.5] {
        for i in 0..100 {
            let r = 1e-3 + 8.0 * i as f64 / 99.0;
            let a = matern_eval(nu, 1.3, 1.0, r).unwrap();
            let b = matern_eval_bessel(nu, 1.3, 1.0, r).unwrap();
            worst = worst.max((a - b).abs() / a.abs());
        }
    }
    // set partitions via the Bell triangle, independent of the library's recurrence
    let mut row = vec![1u64];
    let mut bell = vec![1u64];
    for _ in 0..10 {
        let mut next = vec![*row.last().unwrap()];
        for &x in &row {
            next.push(next.last().unwrap() + x);
        }
        bell.push(next[0]);
        row = next;
    }
    let bell_ok = (0..=10u32).all(|n| bell_number(n).unwrap() == bell[n as usize]);
    let (lo, up) = matern_equivalence_constants(0.5, 1.0, 1.0, 1).unwrap();
    let c = 1.0 / std::f64::consts::PI.sqrt();
    let c_err = (lo - c).abs().max((up - c).abs());
    let pass = worst <= 1e-10 && bell_ok && c_err <= 1e-12;
    report(9, pass, &format!("closed form vs Bessel {worst:.1e}, Bell numbers {bell_ok}, constant error {c_err:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_10_norm_oracle() {
    let mesh = uniform_mesh((0.0, 5.0), 4096).unwrap();
    let truth = FunctionHandle::builtin(Builtin::Sin { freq: 2.0 });
    let e = error_norm(&truth, &vec![0.0; mesh.len()], &mesh, ErrorNormKind::L2).unwrap();
    let pass = (e - 1.544_630).abs() <= 1e-4;
    report(10, pass, &format!("L2 norm of sin(2u) on (0, 5) = {e:.6}"));
    assert!(pass);
}

#[test]
fn criterion_11_noisy_regression() {
    let mut cfg = builtin_figure("fig_warp").unwrap();
    cfg.id = "fig_warp_noisy".into();
    cfg.noise = NoiseModel::Fixed { delta_sq: 1e-6, perturb: false };
    cfg.norms = vec![ErrorNormKind::L2];
    let rep = run_convergence(&cfg, SEED).unwrap();
    let noisy = rep.rate(ErrorNormKind::L2).map_or(f64::NAN, |f| f.slope);
    let clean = slope_of("fig_warp");
    let pass = noisy >= 1.0 && noisy <= clean;
    report(11, pass, &format!("fig_warp with delta^2 = 1e-6 slope {noisy:.3} in [1.0, {clean:.3}]"));
    assert!(pass, "noisy slope {noisy}, noise-free slope {clean}");
}

#[test]
fn criterion_12_tdgp_contraction() {
    let (cfg, mcmc) = tdgp_reference();
    let rep = run_dgp_convergence(&cfg, mcmc, SEED).unwrap();
    let e: Vec<f64> = rep.records.iter().map(|r| r.error(ErrorNormKind::L2).unwrap()).collect();
    let ns: Vec<usize> = rep.records.iter().map(|r| r.n).collect();
    let decreasing = e.windows(2).all(|w| w[1] < w[0]);
    let pass = ns == [16, 64, 256] && decreasing && e[2] <= 0.25 * e[0];
    let h: Vec<f64> = rep.records.iter().map(|r| r.fill_distance).collect();
    let slope = fit_rate(&h, &e, 3).map_or(f64::NAN, |f| f.slope);
    let shown: Vec<String> = e.iter().map(|x| format!("{x:.3e}")).collect();
    report(12, pass, &format!("TDGP L2 errors [{}] at N = {ns:?} (slope {slope:.2})", shown.join(", ")));
    assert!(pass, "errors {e:?}");
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_13_determinism() {
    let first = read_dir_bytes(figure_run().dir.path());
    let dir = TempDir::new().unwrap();
    let mut sink = Vec::new();
    assert_eq!(gpconv_cli::cmd_figures("all", dir.path(), SEED, &mut sink), 0);
    let second = read_dir_bytes(dir.path());
    let n_csv = first.keys().filter(|k| k.ends_with(".csv")).count();
    let n_svg = first.keys().filter(|k| k.ends_with(".svg")).count();
    let pass = first == second && n_csv > 0 && n_svg > 0;
    report(13, pass, &format!("{} files ({n_csv} csv, {n_svg} svg) byte-identical across runs", first.len()));
    assert!(pass);
}
