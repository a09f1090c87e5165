//! Central finite-difference check of the analytic loss gradient on random
//! multi-camera configurations.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{AffineApprox, Camera};
use crate::error::Result;
use crate::estimator::{shifted_elu, total_loss, total_loss_and_gradient, unpack, KeypointParams, ScaleChol};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Gradients smaller than this fraction of `1 + |loss|` are compared in
/// absolute rather than relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

const NU_CHOICES: [f64; 4] = [1.5, 5.0, 30.0, f64::INFINITY];

/// A random scene with every parameter needed by the loss.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub cameras: Vec<Camera>,
    pub labels: Vec<Vec<Option<Vector2<f64>>>>,
    pub params: Vec<KeypointParams>,
    pub nu: f64,
    pub approx: AffineApprox,
}

impl Configuration {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let n_cams = rng.random_range(2..=4);
        let cameras = (0..n_cams)
            .map(|i| {
                let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r = rng.random_range(3.0..6.0);
                let center = Vector3::new(r * az.cos(), r * az.sin(), rng.random_range(-1.0..1.0));
                let target = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
                let f = rng.random_range(200.0..400.0);
                Camera::look_at(format!("g{i}"), (f, f), (128.0, 128.0), center, target, Vector3::z())
            })
            .collect::<Result<Vec<_>>>()?;

        let keypoints = rng.random_range(1..=3);
        let mut params = Vec::with_capacity(keypoints);
        for _ in 0..keypoints {
            let mu = Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8));
            let raw = Vector3::from_fn(|_, _| rng.random_range(-4.0..-0.5));
            let spread = 0.3 * raw.map(shifted_elu).min();
            let off = Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
            params.push(crate::estimator::pack(&mu, &ScaleChol::new(raw, off)));
        }

        let mut labels: Vec<Vec<Option<Vector2<f64>>>> = Vec::with_capacity(n_cams);
        for cam in &cameras {
            let mut row = Vec::with_capacity(keypoints);
            for p in &params {
                let px = cam.project(&unpack(p).0)?;
                let jitter = Vector2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
                row.push((rng.random::<f64>() >= 0.1).then_some(px + jitter));
            }
            labels.push(row);
        }
        if labels.iter().flatten().all(Option::is_none) {
            labels[0][0] = Some(cameras[0].project(&unpack(&params[0]).0)?);
        }

        Ok(Self {
            cameras,
            labels,
            params,
            nu: NU_CHOICES[rng.random_range(0..NU_CHOICES.len())],
            approx: AffineApprox::ALL[rng.random_range(0..AffineApprox::ALL.len())],
        })
    }

    fn loss(&self, params: &[KeypointParams]) -> Result<f64> {
        let (mus, sigmas): (Vec<_>, Vec<_>) = params
            .iter()
            .map(|p| {
                let (mu, chol) = unpack(p);
                (mu, chol.materialize_sigma())
            })
            .unzip();
        total_loss(&mus, &sigmas, &self.labels, &self.cameras, self.nu, self.approx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares every gradient coordinate with a central difference using the
/// input-scaled step `step * max(1, |θ|)`.
pub fn check(config: &Configuration, step: f64) -> Result<Vec<CoordinateCheck>> {
    let (loss, grads) = total_loss_and_gradient(&config.params, &config.labels, &config.cameras, config.nu, config.approx)?;
    let floor = RELATIVE_FLOOR * (1.0 + loss.abs());
    let mut out = Vec::with_capacity(grads.len() * 9);
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let h = step * config.params[k][i].abs().max(1.0);
            let mut plus = config.params.clone();
            let mut minus = config.params.clone();
            plus[k][i] += h;
            minus[k][i] -= h;
            let numeric = (config.loss(&plus)? - config.loss(&minus)?) / (2.0 * h);
            let analytic = g[i];
            let relative_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            out.push(CoordinateCheck {
                analytic,
                numeric,
                relative_error,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub points: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// Configuration and coordinate of the worst agreement.
    pub worst: (usize, usize),
}

/// Checks `points` random configurations drawn from `seed`.
pub fn run(points: usize, seed: u64, step: f64) -> Result<Summary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = Summary {
        points,
        coordinates: 0,
        max_relative_error: 0.0,
        worst: (0, 0),
    };
    for p in 0..points {
        let config = Configuration::random(&mut rng)?;
        for (i, c) in check(&config, step)?.iter().enumerate() {
            summary.coordinates += 1;
            if !(c.relative_error <= summary.max_relative_error) {
                summary.max_relative_error = c.relative_error;
                summary.worst = (p, i);
            }
        }
    }
    Ok(summary)
}
