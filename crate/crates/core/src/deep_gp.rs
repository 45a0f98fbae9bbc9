//! Deep and wide Gaussian process priors and function-space MCMC over hidden layers.
//!
//! Hidden layers live on a fixed one-dimensional mesh. Each hidden layer is
//! stored in whitened form ξ with values L ξ, where L is the Cholesky factor of
//! that layer's conditional prior covariance on the mesh. The final layer is
//! never sampled: given the hidden layers it is a GP whose posterior mean and
//! marginal likelihood are available in closed form.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::DiscreteNormKind;
use crate::error::{Error, Result};
use crate::gp::{self, prior_factor, standard_normals, FitOptions, GpPosterior, Precision, TrainingData};
use crate::kernels::{FunctionHandle, KernelSpec};
use crate::linalg::Cholesky;

pub use crate::analysis::discrete_norm;

/// Matérn hyper-parameters of a stationary layer kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaternParams {
    pub nu: f64,
    pub lambda: f64,
    pub sigma_sq: f64,
}

impl MaternParams {
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::matern(self.nu, self.lambda, self.sigma_sq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// k_s(f(u) − f(v)) with f the previous layer.
    Warp,
    /// F(f(u)) F(f(v)) k_s(u, v) with F(x) = x² + η.
    MixtureF,
}

fn default_eta() -> f64 {
    1.0
}

fn default_width() -> usize {
    1
}

/// One conditionally Gaussian layer f^n | f^{n−1}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub construction: Construction,
    pub base_nu: f64,
    pub base_lambda: f64,
    pub base_sigma_sq: f64,
    #[serde(default = "default_eta")]
    pub link_eta: f64,
}

impl LayerSpec {
    fn base(&self) -> KernelSpec {
        KernelSpec::matern(self.base_nu, self.base_lambda, self.base_sigma_sq)
    }
}

/// Norm ball imposed on the penultimate layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub norm_kind: DiscreteNormKind,
    pub order: u32,
    pub radius: f64,
    pub max_rejections: usize,
}

/// Layered prior: f⁰ ~ GP(Matérn), f^n | f^{n−1} per `layers`, final layer f^D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub depth: usize,
    pub layer0: MaternParams,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub rescale_warp: bool,
    /// Applies to the penultimate layer f^{D−1} (f⁰ when D = 1).
    #[serde(default)]
    pub truncation: Option<Truncation>,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.layers.len() != self.depth {
            return Err(Error::Config(format!(
                "depth {} needs {} layer specs, got {}",
                self.depth,
                self.depth,
                self.layers.len()
            )));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be at least 1".into()));
        }
        if self.width > 1 && (self.depth != 1 || self.layers[0].construction != Construction::MixtureF) {
            return Err(Error::Config("width > 1 requires depth 1 with a mixture_f layer".into()));
        }
        self.layer0.kernel().validate()?;
        for l in &self.layers {
            l.base().validate()?;
            if l.construction == Construction::MixtureF && !(l.link_eta > 0.0) {
                return Err(Error::Config(format!("link eta must be positive, got {}", l.link_eta)));
            }
        }
        if let Some(t) = &self.truncation {
            if !(t.radius > 0.0) || t.max_rejections == 0 {
                return Err(Error::Config("truncation needs radius > 0 and max_rejections >= 1".into()));
            }
        }
        Ok(())
    }

    /// Number of whitened coefficient vectors: width copies of f⁰ plus f¹..f^{D−1}.
    fn hidden_blocks(&self) -> usize {
        self.width + self.depth - 1
    }
}

/// Smoothness pair (β, ν_D) of the warping TDGP lemma for a layer-0 smoothness ν₀.
///
/// β = ⌊ν̂₀ − D/2⌋ with ν̂₀ slightly below ν₀ when ν₀ is an integer, and ν_D = β − ½.
pub fn warp_lemma_orders(nu0: f64, depth: usize) -> Result<(u32, f64)> {
    let nu_hat = if nu0.fract() == 0.0 { nu0 - 1e-9 } else { nu0 };
    let beta = (nu_hat - depth as f64 / 2.0).floor();
    if beta < 1.0 {
        return Err(Error::param(format!("nu0 = {nu0} is too rough for depth {depth}")));
    }
    Ok((beta as u32, beta - 0.5))
}

fn link(eta: f64, values: &[f64]) -> Vec<f64> {
    values.iter().map(|x| x * x + eta).collect()
}

fn rescale_onto(values: &[f64], a: f64, b: f64) -> Result<Vec<f64>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Sampling("cannot rescale a constant warp layer".into()));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo) * (b - a) + a).collect())
}

/// Kernel of layer `layer` given the values of the previous layer(s) on the mesh.
fn layer_kernel(spec: &DgpSpec, layer: &LayerSpec, mesh: &[f64], prev: &[Vec<f64>]) -> Result<KernelSpec> {
    match layer.construction {
        Construction::Warp => {
            let vals = if spec.rescale_warp {
                rescale_onto(&prev[0], mesh[0], mesh[mesh.len() - 1])?
            } else {
                prev[0].clone()
            };
            let w = FunctionHandle::interp(mesh.to_vec(), vals)?;
            Ok(KernelSpec::warp(w, layer.base()))
        }
        Construction::MixtureF => {
            let comps = prev
                .iter()
                .map(|p| Ok((FunctionHandle::interp(mesh.to_vec(), link(layer.link_eta, p))?, layer.base())))
                .collect::<Result<Vec<_>>>()?;
            Ok(KernelSpec::mixture(comps))
        }
    }
}

fn check_mesh(mesh: &[f64]) -> Result<Vec<Vec<f64>>> {
    if mesh.len() < 2 {
        return Err(Error::Mesh("hidden-layer mesh needs at least two points".into()));
    }
    if mesh.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Mesh("hidden-layer mesh must be strictly increasing".into()));
    }
    Ok(mesh.iter().map(|&x| vec![x]).collect())
}

fn within_ball(t: &Truncation, values: &[f64], mesh: &[f64]) -> Result<bool> {
    Ok(discrete_norm(values, mesh, t.norm_kind, t.order)? <= t.radius)
}

/// Values of every hidden layer for a whitened state.
struct Decoded {
    /// f⁰ copies (width of them) followed by f¹..f^{D−1}
    hidden: Vec<Vec<f64>>,
    final_kernel: KernelSpec,
    in_ball: bool,
}

fn penultimate_range(spec: &DgpSpec) -> std::ops::Range<usize> {
    if spec.depth == 1 {
        0..spec.width
    } else {
        let i = spec.hidden_blocks() - 1;
        i..i + 1
    }
}

fn decode(spec: &DgpSpec, mesh: &[f64], mesh_v: &[Vec<f64>], l0: &Cholesky<f64>, xi: &[Vec<f64>]) -> Result<Decoded> {
    let mut hidden: Vec<Vec<f64>> = xi[..spec.width].iter().map(|x| l0.mul_vec(x)).collect();
    for n in 1..spec.depth {
        let k = layer_kernel(spec, &spec.layers[n - 1], mesh, &hidden[hidden.len() - 1..])?;
        let l = prior_factor(&k, mesh_v)?;
        hidden.push(l.mul_vec(&xi[spec.width + n - 1]));
    }
    let mut in_ball = true;
    if let Some(t) = &spec.truncation {
        for i in penultimate_range(spec) {
            in_ball &= within_ball(t, &hidden[i], mesh)?;
        }
    }
    let prev = if spec.depth == 1 { &hidden[..] } else { &hidden[hidden.len() - 1..] };
    let final_kernel = layer_kernel(spec, &spec.layers[spec.depth - 1], mesh, prev)?;
    Ok(Decoded { hidden, final_kernel, in_ball })
}

/// Per-layer values of one prior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct DgpPriorDraw {
    /// f⁰ (width copies), hidden layers f¹..f^{D−1}, then the final layer f^D.
    pub layers: Vec<Vec<f64>>,
    /// Accepted over attempted draws of the truncated layer (1 without truncation).
    pub truncation_acceptance: f64,
}

/// Draw every layer of the hierarchy on a sorted mesh.
pub fn sample_dgp_prior(spec: &DgpSpec, mesh: &[f64], seed: u64) -> Result<DgpPriorDraw> {
    spec.validate()?;
    let mesh_v = check_mesh(mesh)?;
    let l0 = prior_factor(&spec.layer0.kernel(), &mesh_v)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xi, acceptance) = initial_state(spec, mesh, &mesh_v, &l0, &mut rng)?;
    let d = decode(spec, mesh, &mesh_v, &l0, &xi)?;
    let lf = prior_factor(&d.final_kernel, &mesh_v)?;
    let z = standard_normals(&mut rng, mesh.len());
    let mut layers = d.hidden;
    layers.push(lf.mul_vec(&z));
    Ok(DgpPriorDraw { layers, truncation_acceptance: acceptance })
}

/// Draw whitened coefficients from the (truncated) prior, layer by layer.
fn initial_state(
    spec: &DgpSpec,
    mesh: &[f64],
    mesh_v: &[Vec<f64>],
    l0: &Cholesky<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let m = mesh.len();
    let pen = penultimate_range(spec);
    let mut xi: Vec<Vec<f64>> = Vec::with_capacity(spec.hidden_blocks());
    let mut prev_layer: Vec<f64> = Vec::new();
    let (mut attempts, mut accepted) = (0usize, 0usize);
    for b in 0..spec.hidden_blocks() {
        let factor_owned;
        let factor = if b < spec.width {
            l0
        } else {
            let k = layer_kernel(spec, &spec.layers[b - spec.width], mesh, std::slice::from_ref(&prev_layer))?;
            factor_owned = prior_factor(&k, mesh_v)?;
            &factor_owned
        };
        let truncated = spec.truncation.filter(|_| pen.contains(&b));
        let mut tries = 0usize;
        loop {
            let x = standard_normals(rng, m);
            let vals = factor.mul_vec(&x);
            let ok = match &truncated {
                Some(t) => {
                    attempts += 1;
                    tries += 1;
                    within_ball(t, &vals, mesh)?
                }
                None => true,
            };
            if ok {
                if truncated.is_some() {
                    accepted += 1;
                }
                xi.push(x);
                prev_layer = vals;
                break;
            }
            if tries >= truncated.map_or(usize::MAX, |t| t.max_rejections) {
                return Err(Error::TruncationFailure {
                    acceptance_rate: accepted as f64 / attempts as f64,
                    attempts,
                });
            }
        }
    }
    let rate = if attempts == 0 { 1.0 } else { accepted as f64 / attempts as f64 };
    Ok((xi, rate))
}

/// One row of the MCMC trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub accepted: bool,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// Proposal left the truncation ball.
    OutsideBall,
    /// Kernel assembly or factorization failed for the proposal.
    Degenerate,
}

/// Iterations between step-size adjustments during burn-in.
pub const TUNE_WINDOW: usize = 25;
/// Target acceptance rate of the step-size tuning.
pub const TARGET_ACCEPTANCE: f64 = 0.25;

enum Init {
    State(Vec<Vec<f64>>),
    Prior(usize),
}

struct Current {
    decoded: Decoded,
    phi: f64,
    mean: Vec<f64>,
}

/// pCN chain over the whitened hidden layers.
pub struct DgpChain {
    spec: DgpSpec,
    data: TrainingData,
    mesh: Vec<f64>,
    mesh_v: Vec<Vec<f64>>,
    l0: Cholesky<f64>,
    xi: Vec<Vec<f64>>,
    beta: f64,
    seed: u64,
    rng: ChaCha8Rng,
    fit_opts: FitOptions,
    current: Current,
    trace: Vec<TraceEntry>,
    accumulator: Vec<f64>,
    n_accum: usize,
    adapt: bool,
    accumulate: bool,
    window_accepts: usize,
    window_len: usize,
    proposals: usize,
    accepts: usize,
    violations: usize,
}

impl DgpChain {
    /// Start from a draw of the truncated prior.
    pub fn new(spec: DgpSpec, data: TrainingData, mesh: Vec<f64>, beta: f64, seed: u64) -> Result<Self> {
        Self::build(spec, data, mesh, beta, seed, Init::Prior(1))
    }

    /// Start from the lowest-Φ of `n_init` independent truncated prior draws.
    pub fn best_of_prior(
        spec: DgpSpec,
        data: TrainingData,
        mesh: Vec<f64>,
        beta: f64,
        seed: u64,
        n_init: usize,
    ) -> Result<Self> {
        if n_init == 0 {
            return Err(Error::param("n_init must be at least 1"));
        }
        Self::build(spec, data, mesh, beta, seed, Init::Prior(n_init))
    }

    /// Start from given whitened coefficients (one vector per hidden block).
    pub fn with_state(
        spec: DgpSpec,
        data: TrainingData,
        mesh: Vec<f64>,
        xi: Vec<Vec<f64>>,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::build(spec, data, mesh, beta, seed, Init::State(xi))
    }

    fn build(
        spec: DgpSpec,
        data: TrainingData,
        mesh: Vec<f64>,
        beta: f64,
        seed: u64,
        init: Init,
    ) -> Result<Self> {
        spec.validate()?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::param(format!("pCN step must lie in [0, 1], got {beta}")));
        }
        if !(data.noise_var() > 0.0) {
            return Err(Error::Data("deep GP conditioning needs a positive noise variance".into()));
        }
        let mesh_v = check_mesh(&mesh)?;
        let l0 = prior_factor(&spec.layer0.kernel(), &mesh_v)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fit_opts = FitOptions { jitter: gp::DEFAULT_JITTER, precision: Precision::Double };
        let (xi, decoded, phi, post) = match init {
            Init::State(x) => {
                if x.len() != spec.hidden_blocks() || x.iter().any(|v| v.len() != mesh.len()) {
                    return Err(Error::Dimension { expected: spec.hidden_blocks() * mesh.len(), got: x.iter().map(Vec::len).sum() });
                }
                let decoded = decode(&spec, &mesh, &mesh_v, &l0, &x)?;
                let (phi, post) = evaluate(&decoded.final_kernel, &data, fit_opts)?;
                (x, decoded, phi, post)
            }
            Init::Prior(k) => {
                let mut best: Option<(Vec<Vec<f64>>, Decoded, f64, GpPosterior)> = None;
                let mut last_err = None;
                for _ in 0..k {
                    let x = initial_state(&spec, &mesh, &mesh_v, &l0, &mut rng)?.0;
                    let cand = decode(&spec, &mesh, &mesh_v, &l0, &x)
                        .and_then(|d| evaluate(&d.final_kernel, &data, fit_opts).map(|(phi, post)| (d, phi, post)));
                    match cand {
                        Ok((d, phi, post)) if best.as_ref().is_none_or(|b| phi < b.2) => best = Some((x, d, phi, post)),
                        Ok(_) => {}
                        Err(e) => last_err = Some(e),
                    }
                }
                match best {
                    Some(b) => b,
                    None => return Err(last_err.expect("at least one initial draw")),
                }
            }
        };
        let mean = post.posterior_mean(&mesh_v)?;
        Ok(DgpChain {
            accumulator: vec![0.0; mesh.len()],
            spec,
            data,
            mesh,
            mesh_v,
            l0,
            xi,
            beta,
            seed,
            rng,
            fit_opts,
            current: Current { decoded, phi, mean },
            trace: Vec::new(),
            n_accum: 0,
            adapt: false,
            accumulate: false,
            window_accepts: 0,
            window_len: 0,
            proposals: 0,
            accepts: 0,
            violations: 0,
        })
    }

    /// Working precision of the conditional GP fits (f64 by default).
    pub fn with_precision(mut self, precision: Precision) -> Result<Self> {
        self.fit_opts.precision = precision;
        let (phi, post) = evaluate(&self.current.decoded.final_kernel, &self.data, self.fit_opts)?;
        self.current.phi = phi;
        self.current.mean = post.posterior_mean(&self.mesh_v)?;
        Ok(self)
    }

    pub fn set_adapt(&mut self, on: bool) {
        self.adapt = on;
    }

    pub fn set_accumulate(&mut self, on: bool) {
        self.accumulate = on;
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn whitened_state(&self) -> &[Vec<f64>] {
        &self.xi
    }

    /// Hidden-layer values of the current state.
    pub fn hidden_layers(&self) -> &[Vec<f64>] {
        &self.current.decoded.hidden
    }

    /// Final-layer kernel induced by the current hidden state.
    pub fn induced_kernel(&self) -> &KernelSpec {
        &self.current.decoded.final_kernel
    }

    /// Conditional posterior mean of the final layer on the mesh, for the current state.
    pub fn conditional_mean(&self) -> &[f64] {
        &self.current.mean
    }

    /// Negative log-likelihood Φ of the current state.
    pub fn phi(&self) -> f64 {
        self.current.phi
    }

    /// Running average of the conditional means, if anything was accumulated.
    pub fn accumulated_mean(&self) -> Option<Vec<f64>> {
        (self.n_accum > 0).then(|| self.accumulator.iter().map(|s| s / self.n_accum as f64).collect())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }

    pub fn violation_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.violations as f64 / self.proposals as f64
        }
    }

    fn reset_counters(&mut self) {
        self.proposals = 0;
        self.accepts = 0;
        self.violations = 0;
    }

    /// Advance the chain by one pCN iteration.
    pub fn pcn_step(&mut self) -> Result<StepOutcome> {
        let m = self.mesh.len();
        let c = (1.0 - self.beta * self.beta).sqrt();
        let proposal: Vec<Vec<f64>> = self
            .xi
            .iter()
            .map(|x| {
                let eta = standard_normals(&mut self.rng, m);
                x.iter().zip(&eta).map(|(a, e)| c * a + self.beta * e).collect()
            })
            .collect();
        let log_u = self.rng.random::<f64>().ln();

        let outcome = match decode(&self.spec, &self.mesh, &self.mesh_v, &self.l0, &proposal) {
            Err(e) if e.is_numerical() => StepOutcome::Degenerate,
            Err(e) => return Err(e),
            Ok(d) if !d.in_ball => StepOutcome::OutsideBall,
            Ok(d) => match evaluate(&d.final_kernel, &self.data, self.fit_opts) {
                Err(e) if e.is_numerical() => StepOutcome::Degenerate,
                Err(e) => return Err(e),
                Ok((phi, post)) => {
                    if log_u < self.current.phi - phi {
                        let mean = post.posterior_mean(&self.mesh_v)?;
                        self.xi = proposal;
                        self.current = Current { decoded: d, phi, mean };
                        StepOutcome::Accepted
                    } else {
                        StepOutcome::Rejected
                    }
                }
            },
        };

        let accepted = outcome == StepOutcome::Accepted;
        self.proposals += 1;
        self.accepts += accepted as usize;
        self.violations += (outcome == StepOutcome::OutsideBall) as usize;
        self.trace.push(TraceEntry {
            iteration: self.trace.len(),
            log_likelihood: -self.current.phi,
            accepted,
            beta: self.beta,
        });

        if self.adapt {
            self.window_accepts += accepted as usize;
            self.window_len += 1;
            if self.window_len == TUNE_WINDOW {
                let rate = self.window_accepts as f64 / TUNE_WINDOW as f64;
                if rate > TARGET_ACCEPTANCE {
                    self.beta = (2.0 * self.beta).min(1.0);
                } else if rate < TARGET_ACCEPTANCE {
                    self.beta *= 0.5;
                }
                self.window_accepts = 0;
                self.window_len = 0;
            }
        }
        if self.accumulate {
            for (s, v) in self.accumulator.iter_mut().zip(&self.current.mean) {
                *s += v;
            }
            self.n_accum += 1;
        }
        Ok(outcome)
    }

    /// Write the trace as CSV with header `iteration,log_likelihood,accepted,beta`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for t in &self.trace {
            wr.serialize(t)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Φ and the conditional posterior for a final-layer kernel.
fn evaluate(kernel: &KernelSpec, data: &TrainingData, opts: FitOptions) -> Result<(f64, GpPosterior)> {
    let post = gp::fit_with(kernel, data, opts)?;
    let phi = post.neg_log_likelihood();
    if !phi.is_finite() {
        return Err(Error::Sampling("non-finite likelihood".into()));
    }
    Ok((phi, post))
}

/// Averaged conditional mean together with chain diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct DgpPosteriorMean {
    pub mean: Vec<f64>,
    pub acceptance_rate: f64,
    pub violation_rate: f64,
    /// More than half of the proposals left the truncation ball.
    pub truncation_warning: bool,
    pub final_beta: f64,
}

/// Burn in with step-size tuning, then average conditional means over `n_iter` iterations.
pub fn dgp_posterior_mean(chain: &mut DgpChain, n_burn: usize, n_iter: usize) -> Result<DgpPosteriorMean> {
    if n_iter == 0 {
        return Err(Error::param("n_iter must be at least 1"));
    }
    chain.set_accumulate(false);
    chain.set_adapt(true);
    for _ in 0..n_burn {
        chain.pcn_step()?;
    }
    chain.set_adapt(false);
    chain.reset_counters();
    chain.set_accumulate(true);
    for _ in 0..n_iter {
        chain.pcn_step()?;
    }
    chain.set_accumulate(false);
    let violation_rate = chain.violation_rate();
    Ok(DgpPosteriorMean {
        mean: chain.accumulated_mean().expect("n_iter >= 1"),
        acceptance_rate: chain.acceptance_rate(),
        violation_rate,
        truncation_warning: violation_rate > 0.5,
        final_beta: chain.beta,
    })
}
