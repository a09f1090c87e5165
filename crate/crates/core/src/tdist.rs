//! Multivariate t-distributions in two and three dimensions.
//!
//! A distribution is stored by its location `mu`, scale matrix `sigma` and
//! degrees of freedom `nu`. The scale matrix is not the covariance: for
//! `nu > 2` the covariance is `nu / (nu - 2) * sigma`, see
//! [`MvtDist::covariance`]. `nu = +inf` is accepted and gives the Gaussian
//! limit.

use nalgebra::{Cholesky, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::camera::{AffineApprox, Camera};
use crate::error::{Error, Result};

/// Degrees of freedom used throughout unless configured otherwise.
pub const DEFAULT_NU: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvtDist<const D: usize> {
    mu: SVector<f64, D>,
    sigma: SMatrix<f64, D, D>,
    nu: f64,
    chol: SMatrix<f64, D, D>,
}

pub type MvtDist2 = MvtDist<2>;
pub type MvtDist3 = MvtDist<3>;

impl<const D: usize> MvtDist<D> {
    pub fn new(mu: SVector<f64, D>, sigma: SMatrix<f64, D, D>, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidDistribution(format!("nu must be positive, got {nu}")));
        }
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite location".into()));
        }
        if !sigma.iter().all(|v| v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let asym = (sigma - sigma.transpose()).norm();
        if asym >= 1e-12 * (1.0 + sigma.norm()) {
            return Err(Error::InvalidDistribution(format!(
                "scale matrix not symmetric (asymmetry {asym:.3e})"
            )));
        }
        let chol = Cholesky::new(sigma).ok_or(Error::NotPositiveDefinite)?.unpack();
        if (0..D).any(|i| !(chol[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { mu, sigma, nu, chol })
    }

    pub fn mu(&self) -> &SVector<f64, D> {
        &self.mu
    }

    /// Scale matrix.
    pub fn sigma(&self) -> &SMatrix<f64, D, D> {
        &self.sigma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Lower Cholesky factor of the scale matrix.
    pub fn scale_cholesky(&self) -> &SMatrix<f64, D, D> {
        &self.chol
    }

    /// Covariance `nu/(nu-2) * sigma`; undefined for `nu <= 2`.
    pub fn covariance(&self) -> Option<SMatrix<f64, D, D>> {
        if self.nu.is_infinite() {
            Some(self.sigma)
        } else if self.nu > 2.0 {
            Some(self.sigma * (self.nu / (self.nu - 2.0)))
        } else {
            None
        }
    }

    /// Squared Mahalanobis distance `(x-μ)ᵀ Σ⁻¹ (x-μ)`.
    pub fn mahalanobis2(&self, x: &SVector<f64, D>) -> f64 {
        let w = forward_substitute(&self.chol, &(x - self.mu));
        w.norm_squared()
    }

    pub fn log_det_sigma(&self) -> f64 {
        2.0 * (0..D).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }

    /// Negative log density up to an additive constant that depends only on
    /// `nu` and the dimension:
    /// `½ log|Σ| + (ν+d)/2 · log(1 + m²/ν)`.
    pub fn nll(&self, x: &SVector<f64, D>) -> f64 {
        let m2 = self.mahalanobis2(x);
        0.5 * self.log_det_sigma() + robust_term(m2, self.nu, D)
    }

    /// Push the distribution through `x ↦ A x + b`.
    pub fn affine_pushforward<const E: usize>(
        &self,
        a: &SMatrix<f64, E, D>,
        b: &SVector<f64, E>,
    ) -> Result<MvtDist<E>> {
        let s = a * self.sigma * a.transpose();
        let s = (s + s.transpose()) * 0.5;
        MvtDist::new(a * self.mu + b, s, self.nu).map_err(|e| match e {
            Error::NotPositiveDefinite => Error::RankDeficientMap,
            other => other,
        })
    }

    /// One draw `μ + L z √(ν/g)` with `z ~ N(0, I)` and `g ~ χ²_ν`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SVector<f64, D> {
        let z = SVector::<f64, D>::from_fn(|_, _| StandardNormal.sample(rng));
        let scale = if self.nu.is_infinite() {
            1.0
        } else {
            let g: f64 = ChiSquared::new(self.nu)
                .expect("nu validated at construction")
                .sample(rng);
            (self.nu / g).sqrt()
        };
        self.mu + self.chol * z * scale
    }

    /// Deterministic draw number `index` of the stream seeded by `seed`.
    pub fn sample_seeded(&self, seed: u64, index: u64) -> SVector<f64, D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        self.sample(&mut rng)
    }

    /// Squared Mahalanobis radius of the `level` confidence ellipsoid.
    pub fn confidence_radius2(&self, level: f64) -> f64 {
        confidence_radius2(D, self.nu, level)
    }
}

impl MvtDist3 {
    /// Para-perspective image of the distribution in `cam`, in pixels.
    pub fn project_to_camera(&self, cam: &Camera) -> Result<MvtDist2> {
        self.project_with(cam, AffineApprox::RangeScaled)
    }

    pub fn project_with(&self, cam: &Camera, approx: AffineApprox) -> Result<MvtDist2> {
        let map = cam.affine_approx_at(&self.mu, approx)?;
        self.affine_pushforward(&map.a, &map.b)
    }
}

/// `(ν+d)/2 · log(1 + m²/ν)`, with the Gaussian limit `m²/2` at `ν = ∞`.
pub(crate) fn robust_term(m2: f64, nu: f64, dim: usize) -> f64 {
    if nu.is_infinite() {
        0.5 * m2
    } else {
        0.5 * (nu + dim as f64) * (m2 / nu).ln_1p()
    }
}

fn forward_substitute<const D: usize>(l: &SMatrix<f64, D, D>, r: &SVector<f64, D>) -> SVector<f64, D> {
    let mut w = SVector::<f64, D>::zeros();
    for i in 0..D {
        let mut acc = r[i];
        for j in 0..i {
            acc -= l[(i, j)] * w[j];
        }
        w[i] = acc / l[(i, i)];
    }
    w
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fastest for x below the mean a/(a+b).
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// CDF of the squared Mahalanobis distance of a `dim`-variate t with `nu`
/// degrees of freedom: `m²/d ~ F(d, ν)`; chi-square when `nu` is infinite.
pub fn mahalanobis2_cdf(dim: usize, nu: f64, r2: f64) -> f64 {
    if !(r2 > 0.0) {
        return 0.0;
    }
    let d = dim as f64;
    if nu.is_infinite() {
        return gamma_lr(0.5 * d, 0.5 * r2);
    }
    beta_reg(0.5 * d, 0.5 * nu, r2 / (r2 + nu))
}

/// Inverse of [`mahalanobis2_cdf`] by bisection.
pub fn confidence_radius2(dim: usize, nu: f64, level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "confidence level must lie in (0, 1), got {level}");
    let cdf = |r2: f64| mahalanobis2_cdf(dim, nu, r2);
    let mut lo = 0.0;
    let mut hi = dim as f64;
    while cdf(hi) < level {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Matrix2x3, Matrix3, Rotation3, Vector2, Vector3};
    use proptest::prelude::*;
    use rand::Rng;

    fn std3(nu: f64) -> MvtDist3 {
        MvtDist3::new(Vector3::zeros(), Matrix3::identity(), nu).unwrap()
    }

    /// Full log density, normalizing constant included; oracle for `nll`.
    fn log_density(dist: &MvtDist2, x: &Vector2<f64>) -> f64 {
        let d = 2.0;
        let nu = dist.nu();
        let m2 = (x - dist.mu()).transpose() * dist.sigma().try_inverse().unwrap() * (x - dist.mu());
        ln_gamma(0.5 * (nu + d)) - ln_gamma(0.5 * nu)
            - 0.5 * d * (nu * std::f64::consts::PI).ln()
            - 0.5 * dist.sigma().determinant().ln()
            - 0.5 * (nu + d) * (1.0 + m2[(0, 0)] / nu).ln()
    }

    #[test]
    fn nll_examples() {
        assert_eq!(std3(5.0).nll(&Vector3::zeros()), 0.0);

        let d2 = MvtDist2::new(Vector2::zeros(), Matrix2::identity(), 5.0).unwrap();
        let x = Vector2::new(5f64.sqrt(), 0.0);
        assert_relative_eq!(d2.nll(&x), 3.5 * 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(d2.nll(&x), 2.426015, epsilon = 1e-6);
        // Differences of nll agree with differences of the normalized density.
        let origin = Vector2::zeros();
        assert_relative_eq!(
            d2.nll(&x) - d2.nll(&origin),
            log_density(&d2, &origin) - log_density(&d2, &x),
            epsilon = 1e-12
        );

        let d = MvtDist3::new(Vector3::zeros(), Matrix3::identity() * 4.0, 5.0).unwrap();
        assert_relative_eq!(d.nll(&Vector3::zeros()), 1.5 * 4f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(d.nll(&Vector3::zeros()), 2.07944, epsilon = 1e-5);
    }

    #[test]
    fn density_oracle_integrates_to_one() {
        // Sanity check of the oracle itself in 2D on a polar grid.
        let d2 = MvtDist2::new(Vector2::zeros(), Matrix2::identity(), 5.0).unwrap();
        let n = 20_000;
        let r_max = 400.0;
        let h = r_max / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) * h;
            total += 2.0 * std::f64::consts::PI * r * log_density(&d2, &Vector2::new(r, 0.0)).exp() * h;
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(MvtDist3::new(Vector3::zeros(), Matrix3::identity(), 0.0).is_err());
        assert!(matches!(
            MvtDist3::new(Vector3::zeros(), -Matrix3::identity(), 5.0),
            Err(Error::NotPositiveDefinite)
        ));
        let asym = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(MvtDist3::new(Vector3::zeros(), asym, 5.0).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let d = MvtDist3::new(Vector3::new(1.0, 2.0, 3.0), Matrix3::identity(), 5.0).unwrap();
        let same = d.affine_pushforward(&Matrix3::identity(), &Vector3::zeros()).unwrap();
        assert_eq!(same.mu(), d.mu());
        assert_eq!(same.sigma(), d.sigma());
        let scaled = d.affine_pushforward(&(Matrix3::identity() * 2.0), &Vector3::zeros()).unwrap();
        assert_relative_eq!(*scaled.sigma(), Matrix3::identity() * 4.0);
        let rank1 = Matrix2x3::new(1.0, 0.0, 0.0, 2.0, 0.0, 0.0);
        assert!(matches!(
            d.affine_pushforward(&rank1, &Vector2::zeros()),
            Err(Error::RankDeficientMap)
        ));
    }

    fn sample_covariance<const D: usize>(samples: &[SVector<f64, D>]) -> SMatrix<f64, D, D> {
        let n = samples.len() as f64;
        let mean = samples.iter().fold(SVector::<f64, D>::zeros(), |a, s| a + s) / n;
        samples
            .iter()
            .fold(SMatrix::<f64, D, D>::zeros(), |a, s| a + (s - mean) * (s - mean).transpose())
            / (n - 1.0)
    }

    fn assert_cov_close<const D: usize>(got: &SMatrix<f64, D, D>, want: &SMatrix<f64, D, D>, rel: f64) {
        for i in 0..D {
            for j in 0..D {
                let scale = (want[(i, i)] * want[(j, j)]).sqrt();
                assert!(
                    (got[(i, j)] - want[(i, j)]).abs() < rel * scale,
                    "entry ({i},{j}): got {} want {}",
                    got[(i, j)],
                    want[(i, j)]
                );
            }
        }
    }

    #[test]
    fn sample_covariance_matches_scale_factor() {
        let d = std3(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = (0..1_000_000).map(|_| d.sample(&mut rng)).collect();
        let cov = sample_covariance(&samples);
        assert_cov_close(&cov, &(Matrix3::identity() * (5.0 / 3.0)), 0.05);
        assert_relative_eq!(d.covariance().unwrap(), Matrix3::identity() * (5.0 / 3.0));
    }

    #[test]
    fn pushforward_matches_monte_carlo() {
        let sigma = Matrix3::new(2.0, 0.3, -0.4, 0.3, 1.0, 0.2, -0.4, 0.2, 0.5);
        let d = MvtDist3::new(Vector3::new(0.5, -1.0, 2.0), sigma, 5.0).unwrap();
        let a = Matrix2x3::new(0.7, -1.2, 0.4, 0.3, 0.9, -1.5);
        let b = Vector2::new(10.0, -3.0);
        let pushed = d.affine_pushforward(&a, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<_> = (0..1_000_000).map(|_| a * d.sample(&mut rng) + b).collect();
        let cov = sample_covariance(&samples);
        assert_cov_close(&cov, &((5.0 / 3.0) * a * sigma * a.transpose()), 0.05);
        assert_cov_close(&cov, &pushed.covariance().unwrap(), 0.05);
    }

    #[test]
    fn sampling_is_deterministic_and_gaussian_in_the_limit() {
        let d = std3(5.0);
        assert_eq!(d.sample_seeded(42, 3), d.sample_seeded(42, 3));
        assert_ne!(d.sample_seeded(42, 3), d.sample_seeded(42, 4));

        let g = std3(f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..200_000).map(|_| g.sample(&mut rng)).collect();
        let cov = sample_covariance(&samples);
        assert_cov_close(&cov, &Matrix3::identity(), 0.02);
        // Fourth moment of a Gaussian coordinate is 3.
        let m4 = samples.iter().map(|s| s.x.powi(4)).sum::<f64>() / samples.len() as f64;
        assert!((m4 - 3.0).abs() < 0.1, "{m4}");
    }

    /// Test-only F quantile oracle: Simpson quadrature of the F(d, ν) density
    /// in the variable u = x/(1+x), then bisection.
    fn f_quantile_by_quadrature(d1: f64, d2: f64, level: f64) -> f64 {
        let ln_b = ln_gamma(0.5 * d1) + ln_gamma(0.5 * d2) - ln_gamma(0.5 * (d1 + d2));
        // Beta(a, b) density in t; x = d2 t / (d1 (1 - t)).
        let (a, b) = (0.5 * d1, 0.5 * d2);
        let dens = |t: f64| ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - ln_b).exp();
        let cdf_t = |t: f64| {
            // Substitute t = s² to tame the t^(a-1) endpoint when a < 1.
            let n = 4000;
            let h = t.sqrt() / n as f64;
            let g = |s: f64| if s == 0.0 { 0.0 } else { dens(s * s) * 2.0 * s };
            let mut acc = g(0.0) + g(t.sqrt());
            for i in 1..n {
                acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cdf_t(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        d2 * t / (d1 * (1.0 - t))
    }

    #[test]
    fn confidence_radius_examples() {
        let r95 = confidence_radius2(3, 5.0, 0.95);
        assert_relative_eq!(r95, 3.0 * f_quantile_by_quadrature(3.0, 5.0, 0.95), epsilon = 1e-6);
        assert!((r95 - 16.227).abs() < 5e-3);
        // Frozen from an external F(3, 5) quantile table computation.
        assert_relative_eq!(r95, 16.228_353_954, epsilon = 1e-6);
        let r50 = confidence_radius2(2, 5.0, 0.5);
        assert_relative_eq!(r50, 2.0 * f_quantile_by_quadrature(2.0, 5.0, 0.5), epsilon = 1e-6);
        assert_relative_eq!(r50, 1.597_539_554, epsilon = 1e-6);
        assert!(confidence_radius2(3, 5.0, 1e-9) < 1e-4);
        // Gaussian limit: chi-square(3) 95% quantile.
        assert_relative_eq!(confidence_radius2(3, f64::INFINITY, 0.95), 7.814_727_9, epsilon = 1e-6);
    }

    #[test]
    fn confidence_radius_matches_statrs_quantile() {
        use statrs::distribution::{ContinuousCDF, FisherSnedecor};
        for (d, nu, level) in [(3, 5.0, 0.95), (2, 5.0, 0.5), (3, 3.0, 0.9), (2, 30.0, 0.99), (1, 0.7, 0.6)] {
            let f = FisherSnedecor::new(d as f64, nu).unwrap();
            let expected = d as f64 * f.inverse_cdf(level);
            assert_relative_eq!(confidence_radius2(d, nu, level), expected, max_relative = 1e-7);
        }
    }

    #[test]
    fn confidence_radius_matches_monte_carlo() {
        let d = std3(5.0);
        let r2 = d.confidence_radius2(0.95);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 400_000;
        let inside = (0..n).filter(|_| d.mahalanobis2(&d.sample(&mut rng)) <= r2).count();
        let frac = inside as f64 / n as f64;
        assert!((frac - 0.95).abs() < 0.002, "{frac}");
    }

    #[test]
    fn project_to_camera_examples() {
        let unit = Camera::from_parts("u", (1.0, 1.0), (0.0, 0.0), Matrix3::identity(), Vector3::zeros()).unwrap();
        let d = MvtDist3::new(Vector3::new(0.0, 0.0, 1.0), Matrix3::identity(), 5.0).unwrap();
        let p = d.project_to_camera(&unit).unwrap();
        assert_relative_eq!(*p.mu(), Vector2::zeros());
        assert_relative_eq!(*p.sigma(), Matrix2::identity());

        let d = MvtDist3::new(Vector3::new(0.0, 0.0, 2.0), Matrix3::identity(), 5.0).unwrap();
        assert_relative_eq!(*d.project_to_camera(&unit).unwrap().sigma(), Matrix2::identity() / 4.0);

        let cam = Camera::from_parts("f", (100.0, 100.0), (0.0, 0.0), Matrix3::identity(), Vector3::zeros()).unwrap();
        assert_relative_eq!(
            *d.project_to_camera(&cam).unwrap().sigma(),
            Matrix2::identity() * 2500.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn projected_scale_matches_perspective_monte_carlo() {
        // Small scale: perspective-projected samples are nearly t-distributed
        // with the para-perspective scale.
        let cam = Camera::from_parts("f", (100.0, 100.0), (0.0, 0.0), Matrix3::identity(), Vector3::zeros()).unwrap();
        let d = MvtDist3::new(Vector3::new(0.0, 0.0, 2.0), Matrix3::identity() * 1e-6, 5.0).unwrap();
        let projected = d.project_to_camera(&cam).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let samples: Vec<_> = (0..400_000).map(|_| cam.project(&d.sample(&mut rng)).unwrap()).collect();
        let cov = sample_covariance(&samples);
        assert_cov_close(&cov, &projected.covariance().unwrap(), 0.05);
        assert_relative_eq!(projected.sigma()[(0, 0)], 2500.0 * 1e-6, max_relative = 1e-12);
    }

    fn random_spd(seed: u64) -> Matrix3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m * m.transpose() + Matrix3::identity() * 0.1
    }

    proptest! {
        #[test]
        fn nll_invariant_under_rigid_motion(
            seed in 0u64..1000,
            angles in prop::array::uniform3(-3.0f64..3.0),
            shift in prop::array::uniform3(-5.0f64..5.0),
            x in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let sigma = random_spd(seed);
            let mu = Vector3::new(0.2, -0.1, 0.4);
            let x = Vector3::from(x);
            let r = *Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).matrix();
            let t = Vector3::from(shift);
            let d = MvtDist3::new(mu, sigma, 5.0).unwrap();
            let moved = d.affine_pushforward(&r, &t).unwrap();
            prop_assert!((d.nll(&x) - moved.nll(&(r * x + t))).abs() < 1e-10);
        }

        #[test]
        fn confidence_radius_strictly_increasing(a in 0.01f64..0.98, gap in 0.001f64..0.01, nu in 1.0f64..50.0) {
            prop_assert!(confidence_radius2(3, nu, a) < confidence_radius2(3, nu, a + gap));
            prop_assert!(confidence_radius2(2, nu, a) < confidence_radius2(2, nu, a + gap));
        }

        #[test]
        fn gaussian_limit_of_nll_differences(seed in 0u64..1000, x in prop::array::uniform3(-1.0f64..1.0), y in prop::array::uniform3(-1.0f64..1.0)) {
            let sigma = random_spd(seed);
            let t = MvtDist3::new(Vector3::zeros(), sigma, 1e6).unwrap();
            let g = MvtDist3::new(Vector3::zeros(), sigma, f64::INFINITY).unwrap();
            let (x, y) = (Vector3::from(x), Vector3::from(y));
            prop_assume!(t.mahalanobis2(&x) <= 25.0 && t.mahalanobis2(&y) <= 25.0);
            let dt = t.nll(&x) - t.nll(&y);
            let dg = g.nll(&x) - g.nll(&y);
            prop_assert!((dt - dg).abs() < 1e-3);
        }
    }
}
