//! Stationary and non-stationary covariance kernels.

mod function;

pub use function::{Builtin, FunctionHandle, Interp};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PackedSym;
use crate::numeric::Real;
use crate::special;

/// Upper bound for the constant in the Faà di Bruno estimates of the derivative lemmas.
pub const C0: f64 = 1.0866;

/// Largest p for which the half-integer Matérn closed form is used.
const MAX_CLOSED_FORM_P: u32 = 12;

/// Recursive description of a covariance kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Matern {
        nu: f64,
        lambda: f64,
        sigma_sq: f64,
    },
    Gaussian {
        lambda: f64,
        sigma_sq: f64,
    },
    /// k_s(w(u) − w(v)) for a stationary base k_s.
    Warp {
        w: FunctionHandle,
        base: Box<KernelSpec>,
    },
    /// Σ_ℓ σ_ℓ(u) σ_ℓ(v) k_ℓ(u, v).
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// Paciorek-style convolution kernel with scalar length-scale function.
    Convolution {
        lambda_a: FunctionHandle,
        base_iso: Box<KernelSpec>,
        dim: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub sigma_fn: FunctionHandle,
    pub base: KernelSpec,
}

impl KernelSpec {
    pub fn matern(nu: f64, lambda: f64, sigma_sq: f64) -> Self {
        KernelSpec::Matern { nu, lambda, sigma_sq }
    }

    pub fn gaussian(lambda: f64, sigma_sq: f64) -> Self {
        KernelSpec::Gaussian { lambda, sigma_sq }
    }

    pub fn warp(w: FunctionHandle, base: KernelSpec) -> Self {
        KernelSpec::Warp { w, base: Box::new(base) }
    }

    pub fn mixture(components: Vec<(FunctionHandle, KernelSpec)>) -> Self {
        KernelSpec::Mixture {
            components: components
                .into_iter()
                .map(|(sigma_fn, base)| MixtureComponent { sigma_fn, base })
                .collect(),
        }
    }

    pub fn convolution(lambda_a: FunctionHandle, base_iso: KernelSpec, dim: usize) -> Self {
        KernelSpec::Convolution { lambda_a, base_iso: Box::new(base_iso), dim }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self, KernelSpec::Matern { .. } | KernelSpec::Gaussian { .. })
    }

    /// Check structural invariants and parameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Matern { nu, lambda, sigma_sq } => {
                check_matern_params(*nu, *lambda, *sigma_sq)
            }
            KernelSpec::Gaussian { lambda, sigma_sq } => {
                check_matern_params(f64::INFINITY, *lambda, *sigma_sq)
            }
            KernelSpec::Warp { base, .. } => {
                if !base.is_stationary() {
                    return Err(Error::param("warp base kernel must be stationary"));
                }
                base.validate()
            }
            KernelSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::param("mixture needs at least one component"));
                }
                components.iter().try_for_each(|c| c.base.validate())
            }
            KernelSpec::Convolution { base_iso, dim, .. } => {
                if *dim == 0 {
                    return Err(Error::param("convolution dimension must be positive"));
                }
                if !base_iso.is_stationary() {
                    return Err(Error::param("convolution base kernel must be isotropic"));
                }
                base_iso.validate()
            }
        }
    }

    /// Kernel value in `f64`.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.eval_real::<f64>(u, v)
    }

    /// Kernel value in the working precision `R`.
    ///
    /// Arguments are put in a canonical order first, so the result is
    /// symmetric bit for bit.
    pub fn eval_real<R: Real>(&self, u: &[f64], v: &[f64]) -> Result<R> {
        if u.len() != v.len() {
            return Err(Error::Dimension { expected: u.len(), got: v.len() });
        }
        let (u, v) = if u.partial_cmp(v) == Some(std::cmp::Ordering::Greater) {
            (v, u)
        } else {
            (u, v)
        };
        self.eval_ordered(u, v)
    }

    fn eval_ordered<R: Real>(&self, u: &[f64], v: &[f64]) -> Result<R> {
        match self {
            KernelSpec::Matern { .. } | KernelSpec::Gaussian { .. } => {
                let r = distance::<R>(u, v, Ok)?;
                Ok(self.stationary(r))
            }
            KernelSpec::Warp { w, base } => {
                let r = distance::<R>(u, v, |x| w.eval_checked(x))?;
                Ok(base.stationary(r))
            }
            KernelSpec::Mixture { components } => {
                let mut acc = R::zero();
                for c in components {
                    let su = c.sigma_fn.eval_product(u)?;
                    let sv = c.sigma_fn.eval_product(v)?;
                    if su == 0.0 || sv == 0.0 {
                        continue;
                    }
                    acc += R::prod(su, sv) * c.base.eval_ordered::<R>(u, v)?;
                }
                Ok(acc)
            }
            KernelSpec::Convolution { lambda_a, base_iso, dim } => {
                if u.len() != *dim {
                    return Err(Error::Dimension { expected: *dim, got: u.len() });
                }
                let lu = lambda_a.eval_product(u)?;
                let lv = lambda_a.eval_product(v)?;
                for (l, p) in [(lu, u), (lv, v)] {
                    if l <= 0.0 {
                        return Err(Error::Domain(format!(
                            "length scale {} = {l} is not positive at {p:?}",
                            lambda_a.label()
                        )));
                    }
                }
                let s = R::from_f64(lu) + R::from_f64(lv);
                // 2^{d/2} (lu lv)^{d/4} s^{-d/2} = (√2 ⁴√(lu lv) / √s)^d
                let root = R::prod(lu, lv).sqrt().sqrt();
                let pref = (R::from_f64(2.0).sqrt() * root / s.sqrt()).powi(*dim as u32);
                let r = distance::<R>(u, v, Ok)?;
                let scaled = r / (s * R::from_f64(0.5)).sqrt();
                Ok(pref * base_iso.stationary(scaled))
            }
        }
    }

    /// Stationary profile at distance `r`. Only valid for Matérn and Gaussian.
    fn stationary<R: Real>(&self, r: R) -> R {
        match *self {
            KernelSpec::Matern { nu, lambda, sigma_sq } => matern_real(nu, lambda, sigma_sq, r),
            KernelSpec::Gaussian { lambda, sigma_sq } => gaussian_real(lambda, sigma_sq, r),
            _ => unreachable!("validated to be stationary"),
        }
    }

    fn base_gaussian_sigma_sq(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { sigma_sq, .. } => Some(sigma_sq),
            KernelSpec::Matern { nu, sigma_sq, .. } if nu.is_infinite() => Some(sigma_sq),
            _ => None,
        }
    }
}

/// Euclidean distance between `f(u)` and `f(v)` applied coordinatewise, with exact differences.
fn distance<R: Real>(u: &[f64], v: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<R> {
    if u.len() == 1 {
        return Ok(R::diff(f(u[0])?, f(v[0])?).abs());
    }
    let mut acc = R::zero();
    for (&a, &b) in u.iter().zip(v) {
        let d = R::diff(f(a)?, f(b)?);
        acc += d * d;
    }
    Ok(acc.sqrt())
}

fn check_matern_params(nu: f64, lambda: f64, sigma_sq: f64) -> Result<()> {
    if !(nu > 0.0) {
        return Err(Error::param(format!("smoothness nu must be positive, got {nu}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("length scale must be positive, got {lambda}")));
    }
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(Error::param(format!("variance must be positive, got {sigma_sq}")));
    }
    Ok(())
}

/// Matérn covariance at distance `r`. `nu = f64::INFINITY` gives the Gaussian kernel.
pub fn matern_eval(nu: f64, lambda: f64, sigma_sq: f64, r: f64) -> Result<f64> {
    check_matern_params(nu, lambda, sigma_sq)?;
    if !(r >= 0.0) {
        return Err(Error::param(format!("distance must be non-negative, got {r}")));
    }
    Ok(matern_real(nu, lambda, sigma_sq, r))
}

/// Matérn covariance through the Bessel-function form, regardless of ν.
pub fn matern_eval_bessel(nu: f64, lambda: f64, sigma_sq: f64, r: f64) -> Result<f64> {
    check_matern_params(nu, lambda, sigma_sq)?;
    if nu.is_infinite() {
        return Err(Error::param("the Bessel form needs finite nu"));
    }
    if r == 0.0 {
        return Ok(sigma_sq);
    }
    Ok(matern_bessel(nu, lambda, sigma_sq, r))
}

fn matern_bessel(nu: f64, lambda: f64, sigma_sq: f64, r: f64) -> f64 {
    let x = (2.0 * nu).sqrt() * r / lambda;
    let ln = sigma_sq.ln() + (1.0 - nu) * std::f64::consts::LN_2 - special::ln_gamma(nu)
        + nu * x.ln()
        + special::ln_bessel_k(nu, x);
    ln.exp()
}

fn half_integer_order(nu: f64) -> Option<u32> {
    let p = nu - 0.5;
    if p >= 0.0 && p.fract() == 0.0 && p <= MAX_CLOSED_FORM_P as f64 {
        Some(p as u32)
    } else {
        None
    }
}

/// Integer coefficients of the half-integer Matérn polynomial and its normalizer.
///
/// For ν = p + ½ the kernel is σ² e^{-x} P(x) / D with x = √(2ν) r/λ,
/// P(x) = Σ_i (p+i)! / (i!(p−i)!) (2x)^{p−i} and D = (2p)!/p!.
fn half_integer_poly(p: u32) -> (Vec<f64>, f64) {
    let fact = |n: u32| (1..=n).fold(1.0f64, |a, k| a * k as f64);
    // coeffs[j] multiplies x^j
    let mut coeffs = vec![0.0; p as usize + 1];
    for i in 0..=p {
        let c = fact(p + i) / (fact(i) * fact(p - i)) * 2f64.powi((p - i) as i32);
        coeffs[(p - i) as usize] = c;
    }
    (coeffs, fact(2 * p) / fact(p))
}

fn matern_real<R: Real>(nu: f64, lambda: f64, sigma_sq: f64, r: R) -> R {
    if nu.is_infinite() {
        return gaussian_real(lambda, sigma_sq, r);
    }
    if r.to_f64() == 0.0 {
        return R::from_f64(sigma_sq);
    }
    match half_integer_order(nu) {
        Some(p) => {
            let x = R::from_f64(2.0 * nu).sqrt() * r / R::from_f64(lambda);
            let (coeffs, denom) = half_integer_poly(p);
            let mut poly = R::zero();
            for &c in coeffs.iter().rev() {
                poly = poly * x + R::from_f64(c);
            }
            R::from_f64(sigma_sq) * (-x).exp() * poly / R::from_f64(denom)
        }
        None => R::from_f64(matern_bessel(nu, lambda, sigma_sq, r.to_f64())),
    }
}

fn gaussian_real<R: Real>(lambda: f64, sigma_sq: f64, r: R) -> R {
    let z = r / R::from_f64(lambda);
    R::from_f64(sigma_sq) * (-(z * z) * R::from_f64(0.5)).exp()
}

/// Gram matrix in `f64`. Each unordered pair is evaluated once.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let packed = gram_packed::<f64>(spec, points)?;
    let n = points.len();
    Ok(DMatrix::from_fn(n, n, |i, j| packed.get(i, j)))
}

/// Lower triangle of the Gram matrix in working precision `R`.
pub fn gram_packed<R: Real>(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<PackedSym<R>> {
    spec.validate()?;
    let n = points.len();
    let mut data = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            data.push(spec.eval_real::<R>(&points[i], &points[j])?);
        }
    }
    Ok(PackedSym::from_packed(n, data))
}

/// Cross-covariance rows: `out[q][i] = k(query[q], points[i])`.
pub fn cross_real<R: Real>(
    spec: &KernelSpec,
    query: &[Vec<f64>],
    points: &[Vec<f64>],
) -> Result<Vec<Vec<R>>> {
    query
        .iter()
        .map(|q| points.iter().map(|p| spec.eval_real::<R>(q, p)).collect())
        .collect()
}

/// Outcome of a positive-semidefiniteness check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsdCheck {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
}

/// Smallest eigenvalue of the Gram matrix compared against `-tol`.
pub fn check_psd(spec: &KernelSpec, points: &[Vec<f64>], tol: f64) -> Result<PsdCheck> {
    if points.is_empty() {
        return Err(Error::param("check_psd needs at least one point"));
    }
    let k = gram(spec, points)?;
    let eig = SymmetricEigen::new(k);
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PsdCheck { is_psd: min_eigenvalue >= -tol, min_eigenvalue })
}

/// Number of set partitions of an n-element set, for n ≤ 25.
pub fn bell_number(n: u32) -> Result<u64> {
    if n > 25 {
        return Err(Error::Range(format!("bell_number({n}) exceeds the exact range n <= 25")));
    }
    // Bell triangle: each row starts with the last entry of the previous one.
    let mut row: Vec<u128> = vec![1];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let prev = *next.last().unwrap();
            next.push(prev + x);
        }
        row = next;
    }
    Ok(row[0] as u64)
}

/// Function norms consumed by [`derivative_bound_constant`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormInputs {
    /// ‖w‖ in C^{2p}, for warping kernels.
    pub w_c2p: Option<f64>,
    /// max_ℓ ‖σ_ℓ‖ in C^{2p}, for mixtures.
    pub sigma_c2p_max: Option<f64>,
    /// ‖λ_a‖ in C^0, for convolution kernels.
    pub lambda_c0: Option<f64>,
    /// ‖λ_a‖ in C^{2p}, for convolution kernels.
    pub lambda_c2p: Option<f64>,
    /// Positive lower bound c of λ_a on the domain.
    pub lambda_lower: Option<f64>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

fn need(v: Option<f64>, what: &str) -> Result<f64> {
    v.ok_or_else(|| Error::param(format!("norm input `{what}` is required for this kernel")))
}

/// Constant C in the derivative-based error bound for warp, mixture and
/// convolution kernels over a Gaussian base.
///
/// The convolution value is evaluated as written and is informational only;
/// its factor grouping is ambiguous.
pub fn derivative_bound_constant(spec: &KernelSpec, p: u32, norms: &NormInputs) -> Result<f64> {
    if p == 0 {
        return Err(Error::param("p must be a positive integer"));
    }
    let two_p = 2 * p;
    let sqrt_fact = factorial(two_p).sqrt();
    match spec {
        KernelSpec::Warp { w: _, base } => {
            let sigma_sq = base
                .base_gaussian_sigma_sq()
                .ok_or_else(|| Error::Unsupported("warp bound needs a Gaussian base".into()))?;
            let w = need(norms.w_c2p, "w_c2p")?;
            Ok(C0 * sigma_sq * sqrt_fact * bell_number(two_p)? as f64 * w)
        }
        KernelSpec::Mixture { components } => {
            if components.iter().any(|c| c.base.base_gaussian_sigma_sq().is_none()) {
                return Err(Error::Unsupported("mixture bound needs Gaussian components".into()));
            }
            let s = need(norms.sigma_c2p_max, "sigma_c2p_max")?;
            Ok(C0 * two_p as f64 * 2f64.powi(4 * p as i32) * sqrt_fact * s * s)
        }
        KernelSpec::Convolution { base_iso, .. } => {
            let sigma_sq = base_iso
                .base_gaussian_sigma_sq()
                .ok_or_else(|| Error::Unsupported("convolution bound needs a Gaussian base".into()))?;
            let l0 = need(norms.lambda_c0, "lambda_c0")?;
            let l2p = need(norms.lambda_c2p, "lambda_c2p")?;
            let c = need(norms.lambda_lower, "lambda_lower")?;
            if !(c > 0.0) {
                return Err(Error::param("lambda_lower must be positive"));
            }
            let tp = two_p as f64;
            let first = ((1.25 - tp).abs().powf(tp) * l0.max(1.0).powf(0.25 - tp) * l2p).powi(2);
            let second = factorial(4 * p) * 2.0 * C0 * sqrt_fact * l2p * l2p * factorial(two_p)
                * (2.0 * c).powf(-1.0 - tp)
                * l2p;
            let bell = bell_number(two_p)? as f64;
            Ok(std::f64::consts::SQRT_2 * sigma_sq * first * second * bell.powi(5))
        }
        _ => Err(Error::Unsupported(
            "derivative bounds exist only for warp, mixture and convolution kernels".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Dd;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn matern_examples() {
        assert_eq!(matern_eval(f64::INFINITY, 1.0, 1.0, 0.0).unwrap(), 1.0);
        let e = matern_eval(0.5, 1.0, 1.0, 1.0).unwrap();
        assert!((e - (-1f64).exp()).abs() < 1e-15);
        let g = matern_eval(f64::INFINITY, 1.0, 1.0, 1.0).unwrap();
        assert!((g - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g - 0.606_531).abs() < 1e-6);
    }

    #[test]
    fn matern_rejects_bad_parameters() {
        assert!(matches!(matern_eval(0.0, 1.0, 1.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(matern_eval(1.5, -1.0, 1.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(matern_eval(1.5, 1.0, 0.0, 1.0), Err(Error::Parameter(_))));
        assert!(matern_eval(1.5, 1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn half_integer_polynomials() {
        assert_eq!(half_integer_poly(0), (vec![1.0], 1.0));
        assert_eq!(half_integer_poly(1), (vec![2.0, 2.0], 2.0));
        // 1 + x + x²/3 scaled by 12
        assert_eq!(half_integer_poly(2), (vec![12.0, 12.0, 4.0], 12.0));
    }

    #[test]
    fn closed_form_matches_textbook_expressions() {
        for i in 1..100 {
            let r = i as f64 * 0.07;
            let x3 = 3f64.sqrt() * r;
            let x5 = 5f64.sqrt() * r;
            let m32 = (1.0 + x3) * (-x3).exp();
            let m52 = (1.0 + x5 + x5 * x5 / 3.0) * (-x5).exp();
            assert!((matern_eval(1.5, 1.0, 1.0, r).unwrap() - m32).abs() < 1e-15);
            assert!((matern_eval(2.5, 1.0, 1.0, r).unwrap() - m52).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_agrees_with_bessel_form() {
        for nu in [0.5, 1.5, 2.5, 3.5, 7.5] {
            for i in 0..100 {
                let r = 1e-6 * (1e7f64).powf(i as f64 / 99.0);
                let a = matern_eval(nu, 1.3, 0.7, r).unwrap();
                let b = matern_eval_bessel(nu, 1.3, 0.7, r).unwrap();
                assert!(((a - b) / b).abs() < 1e-10, "nu={nu} r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dd_agrees_with_f64() {
        for nu in [0.5, 2.5, 3.0, f64::INFINITY] {
            for r in [0.0, 0.01, 0.3, 2.0] {
                let a = matern_real::<f64>(nu, 1.0, 1.0, r);
                let b = matern_real::<Dd>(nu, 1.0, 1.0, Dd::new(r)).to_f64();
                assert!((a - b).abs() <= 4.0 * f64::EPSILON, "nu={nu} r={r}");
            }
        }
    }

    #[test]
    fn large_nu_approaches_gaussian() {
        // The relative gap at ν = 200 grows past 1e-2 beyond r ≈ 2.55 (2.8% at r = 3),
        // so relative agreement is checked up to 2.5 and absolute agreement up to 3.
        for i in 0..=30 {
            let r = i as f64 * 0.1;
            let m = matern_eval(200.0, 1.0, 1.0, r).unwrap();
            let g = (-r * r / 2.0).exp();
            if r <= 2.5 {
                assert!(((m - g) / g).abs() < 1e-2, "r={r}: {m} vs {g}");
            }
            assert!((m - g).abs() < 2e-3, "r={r}: {m} vs {g}");
        }
        // mpmath reference values at 40 digits
        for (r, want) in [
            (0.5, 0.881_977_864_763_993_93),
            (1.0, 0.605_393_240_790_289_11),
            (3.0, 0.011_418_989_771_429_291),
        ] {
            let m = matern_eval(200.0, 1.0, 1.0, r).unwrap();
            assert!(((m - want) / want).abs() < 1e-12, "r={r}: {m}");
        }
        let gap = |nu: f64| (matern_eval(nu, 1.0, 1.0, 1.0).unwrap() - (-0.5f64).exp()).abs();
        assert!(gap(400.0) < gap(200.0) && gap(200.0) < gap(50.0));
    }

    #[test]
    fn kernel_examples() {
        let warp = KernelSpec::warp(FunctionHandle::identity(), KernelSpec::matern(2.5, 1.0, 1.0));
        assert_eq!(warp.eval(&[0.3], &[0.3]).unwrap(), 1.0);

        let mix = KernelSpec::mixture(vec![(
            FunctionHandle::constant(1.0),
            KernelSpec::matern(0.5, 1.0, 1.0),
        )]);
        assert!((mix.eval(&[0.0], &[1.0]).unwrap() - (-1f64).exp()).abs() < 1e-16);

        let conv = KernelSpec::convolution(
            FunctionHandle::builtin(Builtin::ConvLengthscale),
            KernelSpec::matern(0.5, 1.0, 2.0),
            1,
        );
        for u in [0.0, 1.7, 4.9] {
            assert!((conv.eval(&[u], &[u]).unwrap() - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn convolution_rejects_non_positive_length_scale() {
        let conv = KernelSpec::convolution(
            FunctionHandle::builtin(Builtin::Poly2 { a: 0.0, b: 1.0, c: 0.0 }),
            KernelSpec::gaussian(1.0, 1.0),
            1,
        );
        assert!(matches!(conv.eval(&[0.0], &[1.0]), Err(Error::Domain(_))));
        assert!(conv.eval(&[0.5], &[1.0]).is_ok());
    }

    #[test]
    fn structural_validation() {
        let nested = KernelSpec::warp(
            FunctionHandle::identity(),
            KernelSpec::warp(FunctionHandle::identity(), KernelSpec::gaussian(1.0, 1.0)),
        );
        assert!(nested.validate().is_err());
        assert!(KernelSpec::Mixture { components: vec![] }.validate().is_err());
        // mixtures of non-stationary kernels are allowed
        let deep = KernelSpec::mixture(vec![(
            FunctionHandle::constant(1.0),
            KernelSpec::warp(FunctionHandle::identity(), KernelSpec::gaussian(1.0, 1.0)),
        )]);
        assert!(deep.validate().is_ok());
    }

    #[test]
    fn gram_examples() {
        let m = KernelSpec::matern(0.5, 1.0, 1.0);
        assert_eq!(gram(&m, &pts(&[0.0])).unwrap()[(0, 0)], 1.0);
        let g = gram(&m, &pts(&[0.0, 1.0])).unwrap();
        let e = (-1f64).exp();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        assert!((g[(0, 1)] - e).abs() < 1e-16);
        assert_eq!(g[(0, 1)], g[(1, 0)]);

        let mix = KernelSpec::mixture(vec![(
            FunctionHandle::identity(),
            KernelSpec::matern(f64::INFINITY, 1.0, 1.0),
        )]);
        let g = gram(&mix, &pts(&[0.0, 2.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn psd_examples() {
        let uniform: Vec<f64> = (0..20).map(|i| i as f64 * 5.0 / 20.0).collect();
        let c = check_psd(&KernelSpec::matern(1.5, 1.0, 1.0), &pts(&uniform), 1e-8).unwrap();
        assert!(c.is_psd);

        let scattered: Vec<f64> = (0..20).map(|i| (i as f64 * 0.618_033_988_7).fract() * 5.0).collect();
        let warp = KernelSpec::warp(
            FunctionHandle::builtin(Builtin::WarpSquare),
            KernelSpec::matern(2.5, 1.0, 1.0),
        );
        assert!(check_psd(&warp, &pts(&scattered), 1e-8).unwrap().is_psd);

        let tiny = KernelSpec::matern(1.5, 1.0, 1e-300);
        let c = check_psd(&tiny, &pts(&uniform), 1e-8).unwrap();
        assert!(c.is_psd);
    }

    #[test]
    fn bell_numbers() {
        let want = [1u64, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975];
        for (n, &b) in want.iter().enumerate() {
            assert_eq!(bell_number(n as u32).unwrap(), b);
        }
        assert_eq!(bell_number(25).unwrap(), 4_638_590_332_229_999_353);
        assert!(matches!(bell_number(26), Err(Error::Range(_))));
    }

    #[test]
    fn derivative_bound_examples() {
        let warp = KernelSpec::warp(FunctionHandle::identity(), KernelSpec::gaussian(1.0, 1.0));
        let c = derivative_bound_constant(&warp, 1, &NormInputs { w_c2p: Some(1.0), ..Default::default() })
            .unwrap();
        assert!((c - 1.0866 * 2f64.sqrt() * 2.0).abs() < 1e-12);
        assert!((c - 3.0734).abs() < 1e-4);
        let zero = derivative_bound_constant(&warp, 1, &NormInputs { w_c2p: Some(0.0), ..Default::default() })
            .unwrap();
        assert_eq!(zero, 0.0);

        let mix = KernelSpec::mixture(vec![(FunctionHandle::identity(), KernelSpec::gaussian(1.0, 1.0))]);
        let c = derivative_bound_constant(
            &mix,
            1,
            &NormInputs { sigma_c2p_max: Some(1.0), ..Default::default() },
        )
        .unwrap();
        assert!((c - 49.17).abs() < 0.01);

        assert!(matches!(
            derivative_bound_constant(&KernelSpec::gaussian(1.0, 1.0), 1, &NormInputs::default()),
            Err(Error::Unsupported(_))
        ));
        let matern_warp = KernelSpec::warp(FunctionHandle::identity(), KernelSpec::matern(2.5, 1.0, 1.0));
        assert!(matches!(
            derivative_bound_constant(&matern_warp, 1, &NormInputs { w_c2p: Some(1.0), ..Default::default() }),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn convolution_bound_is_finite_and_positive() {
        let conv = KernelSpec::convolution(FunctionHandle::identity(), KernelSpec::gaussian(1.0, 1.0), 1);
        let norms = NormInputs {
            lambda_c0: Some(2.0),
            lambda_c2p: Some(3.0),
            lambda_lower: Some(0.5),
            ..Default::default()
        };
        let c = derivative_bound_constant(&conv, 1, &norms).unwrap();
        assert!(c.is_finite() && c > 0.0);
        let missing = NormInputs { lambda_c0: Some(2.0), ..Default::default() };
        assert!(derivative_bound_constant(&conv, 1, &missing).is_err());
    }

    #[test]
    fn kernel_spec_json_roundtrip() {
        let spec = KernelSpec::mixture(vec![
            (
                FunctionHandle::builtin(Builtin::Indicator { lo: 0.0, hi: 2.0, scale: 0.5 }),
                KernelSpec::matern(3.0, 1.0, 1.0),
            ),
            (
                FunctionHandle::builtin(Builtin::AffineSq { a: 0.5, b: -0.5, c: 0.5 }),
                KernelSpec::warp(FunctionHandle::builtin(Builtin::WarpSquare), KernelSpec::gaussian(0.3, 1.1)),
            ),
        ]);
        let json = serde_json::to_string(&spec).unwrap();
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn kernel_spec_rejects_unknown_keys() {
        let bad = r#"{"kind":"matern","nu":1.5,"lambda":1.0,"sigma_sq":1.0,"extra":3}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
        let good = r#"{"kind":"warp","w":"warp_square","base":{"kind":"gaussian","lambda":1.0,"sigma_sq":1.0}}"#;
        assert!(serde_json::from_str::<KernelSpec>(good).is_ok());
    }
}
