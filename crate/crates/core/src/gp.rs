//! Exact Gaussian process conditioning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{gram_packed, KernelSpec};
use crate::linalg::Cholesky;
use crate::numeric::{Dd, Real};

/// Default regularization added to the Gram diagonal.
pub const DEFAULT_JITTER: f64 = 1e-15;
/// Factor applied to the jitter on the single retry after a failed factorization.
pub const JITTER_ESCALATION: f64 = 1000.0;
/// Negative diagonal variances above this are rounding noise and reported as zero.
pub const VARIANCE_CLAMP: f64 = -1e-8;

/// Design points, observations and observation-noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    noise_var: f64,
}

impl TrainingData {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>, noise_var: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("training data needs at least one point".into()));
        }
        if points.len() != values.len() {
            return Err(Error::Dimension { expected: points.len(), got: values.len() });
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::Dimension { expected: d, got: p.len() });
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Data(format!("noise variance must be non-negative, got {noise_var}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("observed values must be finite".into()));
        }
        Ok(TrainingData { points, values, noise_var })
    }

    /// One-dimensional convenience constructor.
    pub fn from_1d(xs: &[f64], values: Vec<f64>, noise_var: f64) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect(), values, noise_var)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same design with different observations.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), values, self.noise_var)
    }
}

/// Arithmetic used for Gram assembly, factorization and prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    Double,
    /// Double-double; needed once the Gram condition number passes ~1e16.
    #[default]
    Extended,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub jitter: f64,
    pub precision: Precision,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { jitter: DEFAULT_JITTER, precision: Precision::Extended }
    }
}

#[derive(Clone, Debug)]
struct State<R> {
    factor: Cholesky<R>,
    weights: Vec<R>,
    values: Vec<R>,
}

#[derive(Clone, Debug)]
enum Fitted {
    Double(State<f64>),
    Extended(State<Dd>),
}

/// Factored posterior for a kernel and training set.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    spec: KernelSpec,
    data: TrainingData,
    jitter: f64,
    jitter_escalated: bool,
    fitted: Fitted,
}

/// Fit with the default jitter and extended precision.
pub fn fit(spec: &KernelSpec, data: &TrainingData, jitter: f64) -> Result<GpPosterior> {
    fit_with(spec, data, FitOptions { jitter, ..FitOptions::default() })
}

pub fn fit_with(spec: &KernelSpec, data: &TrainingData, opts: FitOptions) -> Result<GpPosterior> {
    if !(opts.jitter >= 0.0 && opts.jitter.is_finite()) {
        return Err(Error::param(format!("jitter must be non-negative, got {}", opts.jitter)));
    }
    let attempt = |jitter: f64| -> Result<Fitted> {
        Ok(match opts.precision {
            Precision::Double => Fitted::Double(factor::<f64>(spec, data, jitter)?),
            Precision::Extended => Fitted::Extended(factor::<Dd>(spec, data, jitter)?),
        })
    };
    let (fitted, jitter, jitter_escalated) = match attempt(opts.jitter) {
        Ok(f) => (f, opts.jitter, false),
        Err(Error::SingularGram { .. }) => {
            let j = opts.jitter * JITTER_ESCALATION;
            (attempt(j)?, j, true)
        }
        Err(e) => return Err(e),
    };
    Ok(GpPosterior { spec: spec.clone(), data: data.clone(), jitter, jitter_escalated, fitted })
}

fn factor<R: Real>(spec: &KernelSpec, data: &TrainingData, jitter: f64) -> Result<State<R>> {
    let mut k = gram_packed::<R>(spec, &data.points)?;
    k.add_diagonal(R::from_f64(data.noise_var) + R::from_f64(jitter));
    let factor = Cholesky::new(k)?;
    let values: Vec<R> = data.values.iter().map(|&v| R::from_f64(v)).collect();
    let weights = factor.solve(&values);
    Ok(State { factor, weights, values })
}

impl<R: Real> State<R> {
    fn mean(&self, spec: &KernelSpec, points: &[Vec<f64>], q: &[f64]) -> Result<f64> {
        let mut acc = R::zero();
        for (p, &w) in points.iter().zip(&self.weights) {
            acc += spec.eval_real::<R>(q, p)? * w;
        }
        Ok(acc.to_f64())
    }

    fn whitened(&self, spec: &KernelSpec, points: &[Vec<f64>], q: &[f64]) -> Result<Vec<R>> {
        let k: Vec<R> = points.iter().map(|p| spec.eval_real::<R>(q, p)).collect::<Result<_>>()?;
        Ok(self.factor.forward(&k))
    }

    fn cov(&self, spec: &KernelSpec, points: &[Vec<f64>], u: &[f64], v: &[f64]) -> Result<f64> {
        let kuv = spec.eval_real::<R>(u, v)?;
        let a = self.whitened(spec, points, u)?;
        let b = if u == v { a.clone() } else { self.whitened(spec, points, v)? };
        // summing in a fixed order keeps cov(u, v) == cov(v, u) exactly
        let mut s = R::zero();
        for (x, y) in a.iter().zip(&b) {
            s += *x * *y;
        }
        Ok((kuv - s).to_f64())
    }

    fn neg_log_likelihood(&self) -> f64 {
        let z = self.factor.forward(&self.values);
        let mut quad = R::zero();
        for x in &z {
            quad += *x * *x;
        }
        (R::from_f64(0.5) * (self.factor.logdet() + quad)).to_f64()
    }
}

impl GpPosterior {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    /// Jitter actually used, after any escalation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn jitter_escalated(&self) -> bool {
        self.jitter_escalated
    }

    pub fn precision(&self) -> Precision {
        match self.fitted {
            Fitted::Double(_) => Precision::Double,
            Fitted::Extended(_) => Precision::Extended,
        }
    }

    /// Weights (K + δ²I + jitter·I)⁻¹ y, rounded to `f64`.
    pub fn weights(&self) -> Vec<f64> {
        match &self.fitted {
            Fitted::Double(s) => s.weights.clone(),
            Fitted::Extended(s) => s.weights.iter().map(|w| w.to_f64()).collect(),
        }
    }

    /// Lower factor entries, rounded to `f64`, as a dense row-major matrix.
    pub fn factor_dense(&self) -> Vec<Vec<f64>> {
        let n = self.data.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match &self.fitted {
                        Fitted::Double(s) => s.factor.l(i, j),
                        Fitted::Extended(s) => s.factor.l(i, j).to_f64(),
                    })
                    .collect()
            })
            .collect()
    }

    /// Posterior mean at each query point.
    pub fn posterior_mean(&self, query: &[Vec<f64>]) -> Result<Vec<f64>> {
        let pts = &self.data.points;
        match &self.fitted {
            Fitted::Double(s) => query.iter().map(|q| s.mean(&self.spec, pts, q)).collect(),
            Fitted::Extended(s) => query.iter().map(|q| s.mean(&self.spec, pts, q)).collect(),
        }
    }

    /// Posterior mean on one-dimensional query points.
    pub fn posterior_mean_1d(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let q: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        self.posterior_mean(&q)
    }

    /// Posterior covariance k(u,v) − k(u,U)ᵀ(K+δ²I+jitter·I)⁻¹k(v,U).
    ///
    /// Small negative variances from cancellation are reported as zero.
    pub fn posterior_cov(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let pts = &self.data.points;
        let c = match &self.fitted {
            Fitted::Double(s) => s.cov(&self.spec, pts, u, v)?,
            Fitted::Extended(s) => s.cov(&self.spec, pts, u, v)?,
        };
        if u == v && c < 0.0 {
            if c >= VARIANCE_CLAMP {
                return Ok(0.0);
            }
            return Err(Error::NegativeVariance(c));
        }
        Ok(c)
    }

    pub fn posterior_variance(&self, query: &[Vec<f64>]) -> Result<Vec<f64>> {
        query.iter().map(|q| self.posterior_cov(q, q)).collect()
    }

    /// ½ log det(K + δ²I + jitter·I) + ½ yᵀ(K + δ²I + jitter·I)⁻¹y.
    pub fn neg_log_likelihood(&self) -> f64 {
        match &self.fitted {
            Fitted::Double(s) => s.neg_log_likelihood(),
            Fitted::Extended(s) => s.neg_log_likelihood(),
        }
    }
}

/// Relative jitter added when drawing prior sample paths.
pub const SAMPLE_JITTER: f64 = 1e-12;

/// Cholesky factor of the prior covariance on `mesh`, as used by [`sample_prior`].
pub fn prior_factor(spec: &KernelSpec, mesh: &[Vec<f64>]) -> Result<Cholesky<f64>> {
    if mesh.is_empty() {
        return Err(Error::Sampling("mesh must be nonempty".into()));
    }
    let mut k = gram_packed::<f64>(spec, mesh)?;
    let j = SAMPLE_JITTER * k.max_diagonal().max(0.0);
    k.add_diagonal(j);
    Cholesky::new(k).map_err(|e| match e {
        Error::SingularGram { index, pivot } => Error::Sampling(format!(
            "prior covariance not positive definite after jitter {j:e} (pivot {index} = {pivot:e})"
        )),
        other => other,
    })
}

/// Standard normal vector of length `n` from a seeded stream.
pub fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// One zero-mean draw with covariance gram(spec, mesh) + 1e-12·max diag·I.
pub fn sample_prior(spec: &KernelSpec, mesh: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let l = prior_factor(spec, mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = standard_normals(&mut rng, mesh.len());
    Ok(l.mul_vec(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Builtin, FunctionHandle};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 5.0 / n as f64).collect()
    }

    #[test]
    fn one_point_weights() {
        let d = TrainingData::from_1d(&[0.0], vec![1.0], 0.0).unwrap();
        for precision in [Precision::Double, Precision::Extended] {
            let p = fit_with(&KernelSpec::matern(0.5, 1.0, 1.0), &d, FitOptions { jitter: 0.0, precision })
                .unwrap();
            assert_eq!(p.weights(), vec![1.0]);
            assert_eq!(p.posterior_mean_1d(&[0.0]).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn two_point_gaussian_weights() {
        let d = TrainingData::from_1d(&[0.0, 3.0], vec![1.0, 2.0], 0.0).unwrap();
        let p = fit(&KernelSpec::gaussian(1.0, 1.0), &d, 0.0).unwrap();
        let e = (-4.5f64).exp();
        let det = 1.0 - e * e;
        let want = [(1.0 - 2.0 * e) / det, (2.0 - e) / det];
        let w = p.weights();
        for i in 0..2 {
            assert!((w[i] - want[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_points_are_singular() {
        let d = TrainingData::from_1d(&[0.5, 0.5], vec![1.0, 1.0], 0.0).unwrap();
        let err = fit(&KernelSpec::matern(1.5, 1.0, 1.0), &d, 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularGram { .. }), "{err:?}");
    }

    #[test]
    fn jitter_escalation_is_recorded() {
        let d = TrainingData::from_1d(&[0.5, 0.5], vec![1.0, 1.0], 0.0).unwrap();
        // double-double resolves 1 + 1e-300, so force f64 arithmetic
        let opts = FitOptions { jitter: 1e-20, precision: Precision::Double };
        let p = fit_with(&KernelSpec::matern(1.5, 1.0, 1.0), &d, opts).unwrap_err();
        assert!(matches!(p, Error::SingularGram { .. }));
        // 1 + 1e-17 rounds to 1 but 1 + 1e-14 does not
        let opts = FitOptions { jitter: 1e-17, precision: Precision::Double };
        let p = fit_with(&KernelSpec::matern(1.5, 1.0, 1.0), &d, opts).unwrap();
        assert!(p.jitter_escalated());
        assert_eq!(p.jitter(), 1e-17 * 1000.0);
        let clean = TrainingData::from_1d(&[0.0, 1.0], vec![1.0, 1.0], 0.0).unwrap();
        assert!(!fit(&KernelSpec::matern(1.5, 1.0, 1.0), &clean, 1e-15).unwrap().jitter_escalated());
    }

    #[test]
    fn interpolates_sin_on_eight_points() {
        let xs = grid(8);
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin()).collect();
        let d = TrainingData::from_1d(&xs, ys.clone(), 0.0).unwrap();
        let p = fit(&KernelSpec::matern(2.5, 1.0, 1.0), &d, DEFAULT_JITTER).unwrap();
        let m = p.posterior_mean_1d(&xs).unwrap();
        for (a, b) in m.iter().zip(&ys) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_values_give_zero_mean() {
        let xs = grid(5);
        let d = TrainingData::from_1d(&xs, vec![0.0; 5], 0.0).unwrap();
        let p = fit(&KernelSpec::matern(1.5, 1.0, 1.0), &d, DEFAULT_JITTER).unwrap();
        assert!(p.posterior_mean_1d(&[0.1, 2.2, 4.9]).unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn covariance_examples() {
        let d = TrainingData::from_1d(&[0.0], vec![0.3], 0.0).unwrap();
        let p = fit(&KernelSpec::matern(0.5, 1.0, 1.0), &d, 0.0).unwrap();
        let v = p.posterior_cov(&[1.0], &[1.0]).unwrap();
        assert!((v - (1.0 - (-2f64).exp())).abs() < 1e-15);
        assert!((v - 0.864_665).abs() < 1e-6);
        assert!(p.posterior_cov(&[0.0], &[0.0]).unwrap().abs() < 1e-8);
    }

    #[test]
    fn covariance_is_symmetric() {
        let xs = grid(6);
        let d = TrainingData::from_1d(&xs, vec![1.0; 6], 0.0).unwrap();
        let warp = KernelSpec::warp(FunctionHandle::builtin(Builtin::WarpSquare), KernelSpec::matern(2.5, 1.0, 1.0));
        let p = fit(&warp, &d, DEFAULT_JITTER).unwrap();
        for (u, v) in [(0.3, 4.1), (1.11, 2.2), (4.9, 0.0)] {
            assert_eq!(p.posterior_cov(&[u], &[v]).unwrap(), p.posterior_cov(&[v], &[u]).unwrap());
        }
    }

    #[test]
    fn neg_log_likelihood_closed_form() {
        let d = TrainingData::from_1d(&[0.0], vec![2.0], 0.5).unwrap();
        let p = fit(&KernelSpec::matern(0.5, 1.0, 1.0), &d, 0.0).unwrap();
        let want = 0.5 * 1.5f64.ln() + 0.5 * 4.0 / 1.5;
        assert!((p.neg_log_likelihood() - want).abs() < 1e-14);
    }

    #[test]
    fn sample_prior_single_point_is_standard_normal() {
        let a = sample_prior(&KernelSpec::matern(0.5, 1.0, 1.0), &[vec![0.0]], 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = standard_normals(&mut rng, 1)[0];
        assert!((a[0] - z * (1.0f64 + 1e-12).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sample_prior_is_deterministic() {
        let mesh: Vec<Vec<f64>> = grid(50).into_iter().map(|x| vec![x]).collect();
        let spec = KernelSpec::matern(2.5, 1.0, 1.0);
        assert_eq!(sample_prior(&spec, &mesh, 3).unwrap(), sample_prior(&spec, &mesh, 3).unwrap());
        assert_ne!(sample_prior(&spec, &mesh, 3).unwrap(), sample_prior(&spec, &mesh, 4).unwrap());
    }

    #[test]
    fn empty_mesh_is_a_sampling_error() {
        assert!(matches!(sample_prior(&KernelSpec::gaussian(1.0, 1.0), &[], 0), Err(Error::Sampling(_))));
    }

    #[test]
    fn training_data_validation() {
        assert!(TrainingData::from_1d(&[], vec![], 0.0).is_err());
        assert!(TrainingData::from_1d(&[0.0], vec![1.0, 2.0], 0.0).is_err());
        assert!(TrainingData::from_1d(&[0.0], vec![1.0], -1.0).is_err());
        assert!(TrainingData::new(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0, 1.0], 0.0).is_err());
    }
}
