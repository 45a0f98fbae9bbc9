//! Design geometry, discrete norms, error norms and rate fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::FunctionHandle;
use crate::special::gamma;

/// Sorted, pairwise distinct design points in a closed interval.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSet {
    points: Vec<f64>,
    domain: (f64, f64),
}

impl DesignSet {
    /// Sorts the points and checks the invariants.
    pub fn new(mut points: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        let (a, b) = domain;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Design(format!("invalid domain ({a}, {b})")));
        }
        if points.iter().any(|p| !(a..=b).contains(p)) {
            return Err(Error::Design(format!("design point outside [{a}, {b}]")));
        }
        points.sort_by(f64::total_cmp);
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Design("design points must be pairwise distinct".into()));
        }
        Ok(DesignSet { points, domain })
    }

    /// Left-endpoint grid u_n = a + (n−1)(b−a)/N, whose fill distance is (b−a)/N.
    pub fn uniform(domain: (f64, f64), n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Design("uniform design needs n >= 1".into()));
        }
        let (a, b) = domain;
        let pts = (0..n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        Self::new(pts, domain)
    }

    /// n i.i.d. uniform draws on the domain.
    pub fn random(domain: (f64, f64), n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Design("random design needs n >= 1".into()));
        }
        let (a, b) = domain;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<f64> = Vec::with_capacity(n);
        while pts.len() < n {
            let x = rng.random_range(a..b);
            if !pts.contains(&x) {
                pts.push(x);
            }
        }
        Self::new(pts, domain)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points as one-dimensional vectors, the form the GP code expects.
    pub fn as_vectors(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|&x| vec![x]).collect()
    }
}

/// Largest distance from a domain point to the nearest design point.
pub fn fill_distance(design: &DesignSet) -> Result<f64> {
    let p = &design.points;
    if p.is_empty() {
        return Err(Error::Design("fill distance of an empty design".into()));
    }
    let (a, b) = design.domain;
    let mut h = (p[0] - a).max(b - p[p.len() - 1]);
    for w in p.windows(2) {
        h = h.max((w[1] - w[0]) / 2.0);
    }
    Ok(h)
}

/// 2·fill distance / minimum pairwise distance.
pub fn mesh_ratio(design: &DesignSet) -> Result<f64> {
    if design.points.len() < 2 {
        return Err(Error::Design("mesh ratio needs at least two points".into()));
    }
    let q = design
        .points
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    Ok(2.0 * fill_distance(design)? / q)
}

/// m equispaced points including both endpoints.
pub fn uniform_mesh(domain: (f64, f64), m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::Mesh("a mesh needs at least two points".into()));
    }
    let (a, b) = domain;
    let step = (b - a) / (m - 1) as f64;
    let mut mesh: Vec<f64> = (0..m).map(|i| a + step * i as f64).collect();
    mesh[m - 1] = b;
    Ok(mesh)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteNormKind {
    /// Σ_q max |D^q g| over the mesh (integer-order C^p norm).
    HolderDiscrete,
    /// (Σ_q ∫ |D^q g|²)^{1/2} with composite trapezoid quadrature.
    SobolevDiscrete,
}

fn mesh_step(mesh: &[f64]) -> Result<f64> {
    if mesh.len() < 2 {
        return Err(Error::Mesh("a mesh needs at least two points".into()));
    }
    let h = (mesh[mesh.len() - 1] - mesh[0]) / (mesh.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::Mesh("mesh must be increasing".into()));
    }
    for w in mesh.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
            return Err(Error::Mesh("mesh is not uniform".into()));
        }
    }
    Ok(h)
}

/// Second-order finite-difference derivative: central inside, one-sided at the ends.
fn derivative(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    if n == 2 {
        let d = (y[1] - y[0]) / h;
        return vec![d, d];
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (y[i + 1] - y[i - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    d
}

fn trapezoid_sq(y: &[f64], h: f64) -> f64 {
    let n = y.len();
    let inner: f64 = y[1..n - 1].iter().map(|v| v * v).sum();
    h * (inner + 0.5 * (y[0] * y[0] + y[n - 1] * y[n - 1]))
}

/// Discrete Sobolev or Hölder norm of mesh values up to derivative order `order`.
pub fn discrete_norm(values: &[f64], mesh: &[f64], kind: DiscreteNormKind, order: u32) -> Result<f64> {
    if values.len() != mesh.len() {
        return Err(Error::Mesh(format!(
            "{} values on a mesh of {} points",
            values.len(),
            mesh.len()
        )));
    }
    if mesh.len() < order as usize + 2 {
        return Err(Error::Mesh(format!("order {order} needs at least {} mesh points", order + 2)));
    }
    let h = mesh_step(mesh)?;
    let mut d = values.to_vec();
    let mut acc = 0.0;
    for q in 0..=order {
        if q > 0 {
            d = derivative(&d, h);
        }
        acc += match kind {
            DiscreteNormKind::SobolevDiscrete => trapezoid_sq(&d, h),
            DiscreteNormKind::HolderDiscrete => d.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
    }
    Ok(match kind {
        DiscreteNormKind::SobolevDiscrete => acc.sqrt(),
        DiscreteNormKind::HolderDiscrete => acc,
    })
}

/// Norm used to measure approximation error on the evaluation mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorNormKind {
    L2,
    Sobolev { order: u32 },
    Sup,
}

impl ErrorNormKind {
    pub fn name(&self) -> String {
        match self {
            ErrorNormKind::L2 => "l2".into(),
            ErrorNormKind::Sobolev { order } => format!("h{order}"),
            ErrorNormKind::Sup => "sup".into(),
        }
    }
}

impl std::fmt::Display for ErrorNormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for ErrorNormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(ErrorNormKind::L2),
            "sup" => Ok(ErrorNormKind::Sup),
            "h1" => Ok(ErrorNormKind::Sobolev { order: 1 }),
            "h2" => Ok(ErrorNormKind::Sobolev { order: 2 }),
            other => Err(Error::Config(format!("unknown error norm `{other}` (expected l2, h1, h2 or sup)"))),
        }
    }
}

impl Serialize for ErrorNormKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ErrorNormKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Norm of truth − approx over the mesh.
pub fn error_norm(truth: &FunctionHandle, approx: &[f64], mesh: &[f64], kind: ErrorNormKind) -> Result<f64> {
    if approx.len() != mesh.len() {
        return Err(Error::Mesh(format!(
            "{} approximation values on a mesh of {} points",
            approx.len(),
            mesh.len()
        )));
    }
    let diff: Vec<f64> = mesh
        .iter()
        .zip(approx)
        .map(|(&u, &a)| Ok(truth.eval_checked(u)? - a))
        .collect::<Result<_>>()?;
    match kind {
        ErrorNormKind::L2 => discrete_norm(&diff, mesh, DiscreteNormKind::SobolevDiscrete, 0),
        ErrorNormKind::Sobolev { order } => {
            if order > 2 {
                return Err(Error::param("sobolev error norms are limited to order <= 2"));
            }
            discrete_norm(&diff, mesh, DiscreteNormKind::SobolevDiscrete, order)
        }
        ErrorNormKind::Sup => {
            mesh_step(mesh)?;
            Ok(diff.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        }
    }
}

/// Least-squares fit of log(error) against log(h).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Fit the convergence rate on the `tail` entries with the smallest h.
pub fn fit_rate(h_values: &[f64], errors: &[f64], tail: usize) -> Result<RateFit> {
    if h_values.len() != errors.len() {
        return Err(Error::Dimension { expected: h_values.len(), got: errors.len() });
    }
    if tail < 2 || tail > h_values.len() {
        return Err(Error::param(format!(
            "rate fit tail must be in [2, {}], got {tail}",
            h_values.len()
        )));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Data(format!("errors must be positive for a log fit, got {e}")));
    }
    if let Some(h) = h_values.iter().find(|h| !(**h > 0.0)) {
        return Err(Error::Data(format!("fill distances must be positive, got {h}")));
    }
    let mut idx: Vec<usize> = (0..h_values.len()).collect();
    idx.sort_by(|&i, &j| h_values[i].total_cmp(&h_values[j]));
    idx.truncate(tail);

    let xs: Vec<f64> = idx.iter().map(|&i| h_values[i].ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| errors[i].ln()).collect();
    let n = tail as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("rate fit needs distinct fill distances".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept: my - slope * mx, r_squared, points_used: tail })
}

/// Constants (C_low, C_up) relating the Matérn native-space norm to the Sobolev norm.
pub fn matern_equivalence_constants(nu: f64, lambda: f64, sigma_sq: f64, d: u32) -> Result<(f64, f64)> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::param(format!("finite positive nu required, got {nu}")));
    }
    if !(lambda > 0.0 && sigma_sq > 0.0) || d == 0 {
        return Err(Error::param("lambda, sigma_sq and d must be positive"));
    }
    let df = d as f64;
    let base = sigma_sq.sqrt() * gamma(nu + df / 2.0).sqrt() * lambda.powf(df / 2.0)
        * std::f64::consts::PI.powf(-df / 4.0)
        / gamma(nu).sqrt();
    let inv = 1.0 / lambda;
    Ok((base * inv.min(1.0), base * inv.max(1.0)))
}
