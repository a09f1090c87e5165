//! Per-keypoint fitting of a 3D multivariate t-distribution to 2D labels.
//!
//! Each keypoint carries a location `μ` (world coordinates) and a scale
//! matrix `Σ = L Lᵀ`, where `L` is lower triangular with diagonal
//! `elu(raw) + 1`. The objective is the mean, over every valid
//! (camera, keypoint) pair, of the negative log density of the 2D label
//! under the para-perspective image of the keypoint's distribution.
//!
//! Parameter vectors are laid out per keypoint as
//! `[μx, μy, μz, raw₁₁, raw₂₂, raw₃₃, L₂₁, L₃₁, L₃₂]`.

use nalgebra::{Matrix2, Matrix3, SVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{AffineApprox, Camera};
use crate::error::{Error, Result};
use crate::tdist::{robust_term, MvtDist3, DEFAULT_NU};
use crate::triangulation::{closest_point_to_rays, triangulate_or_flag, Observation, TriangulationResult};

/// Number of free parameters per keypoint.
pub const PARAMS_PER_KEYPOINT: usize = 9;

pub type KeypointParams = SVector<f64, PARAMS_PER_KEYPOINT>;

/// Diameter assumed for simulated scenes, in scene units.
pub const DEFAULT_SCENE_DIAMETER: f64 = 2.0;

const RMS_DECAY: f64 = 0.9;
const RMS_EPS: f64 = 1e-8;
const GAIN_GROWTH: f64 = 1.2;
const MAX_GAIN: f64 = 1e3;
const MIN_GAIN: f64 = 1e-6;
const MAX_HALVINGS: usize = 50;
const MAX_SHARED_ROUNDS: usize = 100;
const SHARED_ROUND_TOL: f64 = 1e-7;

/// `x ↦ elu(x) + 1`, strictly positive.
pub fn shifted_elu(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

pub fn shifted_elu_derivative(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Inverse of [`shifted_elu`]; `None` unless `y > 0`.
pub fn inverse_shifted_elu(y: f64) -> Option<f64> {
    if !(y > 0.0) {
        None
    } else if y >= 1.0 {
        Some(y - 1.0)
    } else {
        Some(y.ln())
    }
}

/// Unconstrained parameterization of a scale matrix through its Cholesky factor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaleChol {
    pub raw_diag: Vector3<f64>,
    /// Strictly-lower entries `L₂₁, L₃₁, L₃₂`.
    pub off_diag: Vector3<f64>,
}

impl ScaleChol {
    pub fn new(raw_diag: Vector3<f64>, off_diag: Vector3<f64>) -> Self {
        Self { raw_diag, off_diag }
    }

    /// Isotropic factor with `diag(L) = scale`.
    pub fn isotropic(scale: f64) -> Self {
        let raw = inverse_shifted_elu(scale).expect("scale must be positive");
        Self::new(Vector3::repeat(raw), Vector3::zeros())
    }

    /// Recovers the parameters of an SPD matrix from its Cholesky factor.
    pub fn from_sigma(sigma: &Matrix3<f64>) -> Result<Self> {
        let l = nalgebra::Cholesky::new(*sigma).ok_or(Error::NotPositiveDefinite)?.unpack();
        let raw = |i: usize| inverse_shifted_elu(l[(i, i)]).ok_or(Error::NotPositiveDefinite);
        Ok(Self::new(
            Vector3::new(raw(0)?, raw(1)?, raw(2)?),
            Vector3::new(l[(1, 0)], l[(2, 0)], l[(2, 1)]),
        ))
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.raw_diag.x,
            self.raw_diag.y,
            self.raw_diag.z,
            self.off_diag.x,
            self.off_diag.y,
            self.off_diag.z,
        ]
    }

    pub fn lower(&self) -> Matrix3<f64> {
        let d = self.raw_diag.map(shifted_elu);
        let o = &self.off_diag;
        Matrix3::new(d.x, 0.0, 0.0, o.x, d.y, 0.0, o.y, o.z, d.z)
    }

    pub fn materialize_sigma(&self) -> Matrix3<f64> {
        let l = self.lower();
        l * l.transpose()
    }

    /// Chain rule from `∂f/∂Σ` (symmetric) to the six raw parameters.
    fn pull_back(&self, d_sigma: &Matrix3<f64>) -> [f64; 6] {
        let l = self.lower();
        let d_l = 2.0 * d_sigma * l;
        [
            d_l[(0, 0)] * shifted_elu_derivative(self.raw_diag.x),
            d_l[(1, 1)] * shifted_elu_derivative(self.raw_diag.y),
            d_l[(2, 2)] * shifted_elu_derivative(self.raw_diag.z),
            d_l[(1, 0)],
            d_l[(2, 0)],
            d_l[(2, 1)],
        ]
    }
}

pub fn materialize_sigma(p: &ScaleChol) -> Matrix3<f64> {
    p.materialize_sigma()
}

pub fn pack(mu: &Vector3<f64>, chol: &ScaleChol) -> KeypointParams {
    let a = chol.to_array();
    KeypointParams::from_column_slice(&[mu.x, mu.y, mu.z, a[0], a[1], a[2], a[3], a[4], a[5]])
}

pub fn unpack(theta: &KeypointParams) -> (Vector3<f64>, ScaleChol) {
    (
        Vector3::new(theta[0], theta[1], theta[2]),
        ScaleChol::from_array([theta[3], theta[4], theta[5], theta[6], theta[7], theta[8]]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(with = "crate::io::nonfinite")]
    pub nu: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub rel_tol: f64,
    /// Initial `diag(L)`, scene units.
    pub init_scale: f64,
    /// Lower bound on `diag(L)` during optimization, scene units.
    pub scale_floor: f64,
    pub approx: AffineApprox,
    /// How scale matrices are shared when fitting a sequence of frames.
    pub sharing: ScaleSharing,
}

/// Which keypoint-frames share one scale matrix in [`fit_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleSharing {
    /// One scale per keypoint index, shared by every frame.
    #[default]
    PerKeypoint,
    /// An independent scale for every keypoint in every frame.
    PerFrame,
}

impl ScaleSharing {
    pub fn name(self) -> &'static str {
        match self {
            Self::PerKeypoint => "per-keypoint",
            Self::PerFrame => "per-frame",
        }
    }
}

impl FitConfig {
    pub fn for_scene_diameter(diameter: f64) -> Self {
        Self {
            nu: DEFAULT_NU,
            max_iters: 500,
            step_size: 1e-2,
            rel_tol: 1e-8,
            init_scale: 0.01 * diameter,
            scale_floor: 1e-6 * diameter,
            approx: AffineApprox::Linearized,
            sharing: ScaleSharing::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu", self.nu),
            ("step_size", self.step_size),
            ("rel_tol", self.rel_tol),
            ("init_scale", self.init_scale),
            ("scale_floor", self.scale_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if self.init_scale < self.scale_floor {
            return Err(Error::InvalidArgument("init_scale is below scale_floor".into()));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::for_scene_diameter(DEFAULT_SCENE_DIAMETER)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointEstimate {
    pub dist: MvtDist3,
    pub params: ScaleChol,
    pub final_loss: f64,
    pub iterations: usize,
    pub triangulation: TriangulationResult,
    pub converged: bool,
}

impl KeypointEstimate {
    pub fn is_degenerate(&self) -> bool {
        !self.converged || self.triangulation.is_degenerate()
    }
}

/// A 2D label seen by one camera.
#[derive(Debug, Clone, Copy)]
pub struct ViewLabel<'a> {
    pub camera: &'a Camera,
    pub label: Vector2<f64>,
}

impl<'a> ViewLabel<'a> {
    pub fn new(camera: &'a Camera, label: Vector2<f64>) -> Self {
        Self { camera, label }
    }
}

struct ViewTerm {
    loss: f64,
    d_mu: Vector3<f64>,
    d_sigma: Matrix3<f64>,
}

fn view_term(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    view: &ViewLabel<'_>,
    nu: f64,
    approx: AffineApprox,
) -> Result<ViewTerm> {
    let cam = view.camera;
    // Validates the anchor.
    cam.affine_approx_at(mu, approx)?;
    let r = cam.rotation();
    let p = cam.world_to_camera(mu);
    let (fx, fy) = cam.focal();
    let jac = approx.jacobian(fx, fy, &p);
    let mean = approx.anchor_image(fx, fy, &p) + cam.principal_point();

    let s = r * sigma * r.transpose();
    let s = (s + s.transpose()) * 0.5;
    let proj = jac * s * jac.transpose();
    let proj = (proj + proj.transpose()) * 0.5;
    let det = proj.determinant();
    if !(det > 0.0) || !(proj[(0, 0)] > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let w = Matrix2::new(proj[(1, 1)], -proj[(0, 1)], -proj[(1, 0)], proj[(0, 0)]) / det;
    let resid = view.label - mean;
    let wr = w * resid;
    let m2 = resid.dot(&wr);
    let loss = 0.5 * det.ln() + robust_term(m2, nu, 2);

    let g = if nu.is_infinite() { 0.5 } else { 0.5 * (nu + 2.0) / (nu + m2) };
    let d_proj = 0.5 * w - g * wr * wr.transpose();
    let d_mean = -2.0 * g * wr;
    let d_s = jac.transpose() * d_proj * jac;
    let d_jac = 2.0 * d_proj * jac * s;
    let d_p = approx.anchor_image_derivative(fx, fy, &p).transpose() * d_mean
        + approx.contract_jacobian_derivative(fx, fy, &p, &d_jac);
    Ok(ViewTerm {
        loss,
        d_mu: r.transpose() * d_p,
        d_sigma: r.transpose() * d_s * r,
    })
}

/// Negative log density of `label` under the range-scaled para-perspective
/// image of `(mu, sigma, nu)` in `cam`.
pub fn view_loss(mu: &Vector3<f64>, sigma: &Matrix3<f64>, label: &Vector2<f64>, cam: &Camera, nu: f64) -> Result<f64> {
    view_loss_with(mu, sigma, label, cam, nu, AffineApprox::RangeScaled)
}

pub fn view_loss_with(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    label: &Vector2<f64>,
    cam: &Camera,
    nu: f64,
    approx: AffineApprox,
) -> Result<f64> {
    if !label.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite label".into()));
    }
    Ok(view_term(mu, sigma, &ViewLabel::new(cam, *label), nu, approx)?.loss)
}

/// Labels indexed `[camera][keypoint]`; `None` marks a missing label.
pub type LabelGrid = [Vec<Option<Vector2<f64>>>];

fn valid_pairs<'a>(labels: &'a LabelGrid, cams: &'a [Camera], keypoints: usize) -> Result<Vec<(usize, usize, Vector2<f64>)>> {
    if labels.len() != cams.len() {
        return Err(Error::InvalidArgument(format!(
            "{} label rows for {} cameras",
            labels.len(),
            cams.len()
        )));
    }
    let mut pairs = Vec::new();
    for (c, row) in labels.iter().enumerate() {
        if row.len() != keypoints {
            return Err(Error::InvalidArgument(format!(
                "camera {c} has {} labels for {keypoints} keypoints",
                row.len()
            )));
        }
        for (k, l) in row.iter().enumerate() {
            if let Some(l) = l {
                pairs.push((c, k, *l));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoValidObservations);
    }
    Ok(pairs)
}

/// Mean view loss over every valid (camera, keypoint) pair.
pub fn total_loss(
    mus: &[Vector3<f64>],
    sigmas: &[Matrix3<f64>],
    labels: &LabelGrid,
    cams: &[Camera],
    nu: f64,
    approx: AffineApprox,
) -> Result<f64> {
    if mus.len() != sigmas.len() {
        return Err(Error::InvalidArgument("mus and sigmas differ in length".into()));
    }
    let pairs = valid_pairs(labels, cams, mus.len())?;
    let mut sum = 0.0;
    for &(c, k, l) in &pairs {
        sum += view_loss_with(&mus[k], &sigmas[k], &l, &cams[c], nu, approx)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// [`total_loss`] as a function of packed parameters, with its gradient.
pub fn total_loss_and_gradient(
    params: &[KeypointParams],
    labels: &LabelGrid,
    cams: &[Camera],
    nu: f64,
    approx: AffineApprox,
) -> Result<(f64, Vec<KeypointParams>)> {
    let pairs = valid_pairs(labels, cams, params.len())?;
    let unpacked: Vec<_> = params.iter().map(unpack).collect();
    let sigmas: Vec<_> = unpacked.iter().map(|(_, c)| c.materialize_sigma()).collect();
    let mut loss = 0.0;
    let mut d_mu = vec![Vector3::zeros(); params.len()];
    let mut d_sigma = vec![Matrix3::zeros(); params.len()];
    for &(c, k, l) in &pairs {
        let term = view_term(&unpacked[k].0, &sigmas[k], &ViewLabel::new(&cams[c], l), nu, approx)?;
        loss += term.loss;
        d_mu[k] += term.d_mu;
        d_sigma[k] += term.d_sigma;
    }
    let n = pairs.len() as f64;
    let grads = unpacked
        .iter()
        .enumerate()
        .map(|(k, (_, chol))| {
            let raw = chol.pull_back(&d_sigma[k]);
            let mut g = KeypointParams::zeros();
            g.fixed_rows_mut::<3>(0).copy_from(&(d_mu[k] / n));
            for (i, v) in raw.iter().enumerate() {
                g[3 + i] = v / n;
            }
            g
        })
        .collect();
    Ok((loss / n, grads))
}

/// Mean view loss of a single keypoint and its gradient.
pub fn keypoint_loss_and_gradient(
    theta: &KeypointParams,
    views: &[ViewLabel<'_>],
    nu: f64,
    approx: AffineApprox,
) -> Result<(f64, KeypointParams)> {
    if views.is_empty() {
        return Err(Error::NoValidObservations);
    }
    let (mu, chol) = unpack(theta);
    let sigma = chol.materialize_sigma();
    let mut loss = 0.0;
    let mut d_mu = Vector3::zeros();
    let mut d_sigma = Matrix3::zeros();
    for view in views {
        let term = view_term(&mu, &sigma, view, nu, approx)?;
        loss += term.loss;
        d_mu += term.d_mu;
        d_sigma += term.d_sigma;
    }
    let n = views.len() as f64;
    let raw = chol.pull_back(&d_sigma);
    let mut g = KeypointParams::zeros();
    g.fixed_rows_mut::<3>(0).copy_from(&d_mu);
    for (i, v) in raw.iter().enumerate() {
        g[3 + i] = *v;
    }
    Ok((loss / n, g / n))
}

/// Loss value at every accepted iterate, starting with the initial point.
pub type LossTrace = Vec<f64>;

/// Fits one keypoint's distribution to its labels.
pub fn fit_keypoint(views: &[ViewLabel<'_>], cfg: &FitConfig) -> Result<KeypointEstimate> {
    fit_keypoint_traced(views, cfg).map(|(est, _)| est)
}

pub fn fit_keypoint_traced(views: &[ViewLabel<'_>], cfg: &FitConfig) -> Result<(KeypointEstimate, LossTrace)> {
    cfg.validate()?;
    if views.len() < 2 {
        return Err(Error::InsufficientViews {
            needed: 2,
            got: views.len(),
        });
    }
    let observations: Vec<_> = views.iter().map(|v| Observation::new(v.camera, v.label)).collect();
    let triangulation = triangulate_or_flag(&observations)?;
    let init_mu = initial_mean(&triangulation, &observations, views, cfg.approx)?;
    let theta0 = pack(&init_mu, &ScaleChol::isotropic(cfg.init_scale));
    let (theta, trace, iterations, converged) = minimize(theta0, |t| keypoint_loss_and_gradient(t, views, cfg.nu, cfg.approx), cfg, &KeypointParams::repeat(1.0))?;
    let (mu, params) = unpack(&theta);
    let dist = MvtDist3::new(mu, params.materialize_sigma(), cfg.nu)?;
    Ok((
        KeypointEstimate {
            dist,
            params,
            final_loss: *trace.last().expect("trace holds the initial loss"),
            iterations,
            triangulation,
            converged,
        },
        trace,
    ))
}

/// Fits only the mean, holding the scale fixed. Returns the mean, final
/// loss, iteration count and convergence flag.
pub fn fit_mean_with_scale(
    views: &[ViewLabel<'_>],
    scale: &ScaleChol,
    init: &Vector3<f64>,
    cfg: &FitConfig,
) -> Result<(Vector3<f64>, f64, usize, bool)> {
    let mut free = KeypointParams::zeros();
    free.fixed_rows_mut::<3>(0).fill(1.0);
    let eval = |t: &KeypointParams| keypoint_loss_and_gradient(t, views, cfg.nu, cfg.approx);
    let (theta, trace, iterations, converged) = minimize(pack(init, scale), eval, cfg, &free)?;
    Ok((unpack(&theta).0, *trace.last().expect("trace holds the initial loss"), iterations, converged))
}

/// Fits one keypoint across many frames with a single scale matrix shared by
/// all frames and a separate mean per frame.
///
/// Means and the shared scale are updated in alternation; each update cannot
/// increase the summed loss. Frames with fewer than two views, or with no
/// usable starting point, get an error in their slot and do not inform the
/// scale.
pub fn fit_keypoint_shared(frames: &[Vec<ViewLabel<'_>>], cfg: &FitConfig) -> Result<Vec<Result<KeypointEstimate>>> {
    cfg.validate()?;
    let starts: Vec<Result<(Vector3<f64>, TriangulationResult)>> = frames
        .par_iter()
        .map(|views| {
            if views.len() < 2 {
                return Err(Error::InsufficientViews { needed: 2, got: views.len() });
            }
            let observations: Vec<_> = views.iter().map(|v| Observation::new(v.camera, v.label)).collect();
            let triangulation = triangulate_or_flag(&observations)?;
            let mu = initial_mean(&triangulation, &observations, views, cfg.approx)?;
            Ok((mu, triangulation))
        })
        .collect();
    let usable: Vec<usize> = (0..frames.len()).filter(|&f| starts[f].is_ok()).collect();
    if usable.is_empty() {
        return Ok(starts.into_iter().map(|s| s.map(|_| unreachable!())).collect());
    }

    let mut mus: Vec<Vector3<f64>> = usable.iter().map(|&f| starts[f].as_ref().expect("usable").0).collect();
    let mut scale = ScaleChol::isotropic(cfg.init_scale);
    let mut mean_fits: Vec<(f64, usize, bool)> = vec![(f64::INFINITY, 0, false); usable.len()];
    let mut previous = f64::INFINITY;
    let mut converged = false;

    let mut scale_free = KeypointParams::repeat(1.0);
    scale_free.fixed_rows_mut::<3>(0).fill(0.0);

    for _round in 0..MAX_SHARED_ROUNDS {
        let updated: Vec<Result<(Vector3<f64>, f64, usize, bool)>> = usable
            .par_iter()
            .zip(&mus)
            .map(|(&f, mu)| fit_mean_with_scale(&frames[f], &scale, mu, cfg))
            .collect();
        for (i, r) in updated.into_iter().enumerate() {
            let (mu, loss, iterations, ok) = r?;
            mus[i] = mu;
            mean_fits[i] = (loss, mean_fits[i].1 + iterations, ok);
        }

        let eval = |t: &KeypointParams| -> Result<(f64, KeypointParams)> {
            let (_, chol) = unpack(t);
            let parts: Vec<Result<(f64, KeypointParams)>> = usable
                .par_iter()
                .zip(&mus)
                .map(|(&f, mu)| keypoint_loss_and_gradient(&pack(mu, &chol), &frames[f], cfg.nu, cfg.approx))
                .collect();
            let mut loss = 0.0;
            let mut grad = KeypointParams::zeros();
            for p in parts {
                let (l, g) = p?;
                loss += l;
                grad += g;
            }
            let n = usable.len() as f64;
            Ok((loss / n, grad / n))
        };
        let (theta, trace, _, _) = minimize(pack(&Vector3::zeros(), &scale), eval, cfg, &scale_free)?;
        scale = unpack(&theta).1;
        let total = *trace.last().expect("trace holds the initial loss");
        if (previous - total).abs() <= SHARED_ROUND_TOL * total.abs().max(1.0) {
            converged = true;
            break;
        }
        previous = total;
    }

    let sigma = scale.materialize_sigma();
    let mut slots = usable.iter().zip(mus).zip(mean_fits);
    let mut next = slots.next();
    let mut out = Vec::with_capacity(frames.len());
    for (f, start) in starts.into_iter().enumerate() {
        match start {
            Err(e) => out.push(Err(e)),
            Ok((_, triangulation)) => {
                let ((&g, mu), (_, iterations, mean_ok)) = next.take().expect("one slot per usable frame");
                debug_assert_eq!(f, g);
                next = slots.next();
                let dist = MvtDist3::new(mu, sigma, cfg.nu)?;
                let final_loss = keypoint_loss_and_gradient(&pack(&mu, &scale), &frames[f], cfg.nu, cfg.approx)?.0;
                out.push(Ok(KeypointEstimate {
                    dist,
                    params: scale,
                    final_loss,
                    iterations,
                    triangulation,
                    converged: converged && mean_ok,
                }));
            }
        }
    }
    Ok(out)
}

/// Picks the starting mean: the DLT point when it is usable, otherwise the
/// point closest to the rays.
fn initial_mean(
    triangulation: &TriangulationResult,
    observations: &[Observation<'_>],
    views: &[ViewLabel<'_>],
    approx: AffineApprox,
) -> Result<Vector3<f64>> {
    if !triangulation.is_degenerate() && anchor_ok(&triangulation.point, views, approx) {
        return Ok(triangulation.point);
    }
    let fallback = closest_point_to_rays(observations);
    if anchor_ok(&fallback, views, approx) {
        return Ok(fallback);
    }
    if anchor_ok(&triangulation.point, views, approx) {
        return Ok(triangulation.point);
    }
    Err(Error::DegenerateGeometry(
        "no initial point lies in front of every observing camera".into(),
    ))
}

fn anchor_ok(mu: &Vector3<f64>, views: &[ViewLabel<'_>], approx: AffineApprox) -> bool {
    mu.iter().all(|v| v.is_finite()) && views.iter().all(|v| v.camera.affine_approx_at(mu, approx).is_ok())
}

fn project_to_floor(theta: &mut KeypointParams, raw_floor: f64) {
    for i in 3..6 {
        if theta[i] < raw_floor {
            theta[i] = raw_floor;
        }
    }
}

/// RMS-scaled descent with per-coordinate gains and backtracking.
///
/// Each coordinate's step is `step_size * gain * g / rms(g)`. A gain grows
/// while its gradient keeps the same sign and is halved when the sign flips.
/// The whole step is halved until the loss does not increase.
fn minimize(
    theta0: KeypointParams,
    eval: impl Fn(&KeypointParams) -> Result<(f64, KeypointParams)>,
    cfg: &FitConfig,
    free: &KeypointParams,
) -> Result<(KeypointParams, LossTrace, usize, bool)> {
    let raw_floor = inverse_shifted_elu(cfg.scale_floor).expect("validated positive");

    let mut theta = theta0;
    project_to_floor(&mut theta, raw_floor);
    let (mut loss, mut grad) = eval(&theta)?;
    if !loss.is_finite() {
        return Err(Error::DegenerateGeometry("non-finite loss at initialization".into()));
    }
    let mut trace = vec![loss];
    let mut mean_sq = KeypointParams::zeros();
    let mut gain = KeypointParams::repeat(1.0);
    let mut prev_grad = KeypointParams::zeros();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        mean_sq = mean_sq * RMS_DECAY + grad.component_mul(&grad) * (1.0 - RMS_DECAY);
        let bias = 1.0 - RMS_DECAY.powi(iter.min(1000) as i32);
        for i in 0..PARAMS_PER_KEYPOINT {
            let agreement = grad[i] * prev_grad[i];
            if agreement > 0.0 {
                gain[i] = (gain[i] * GAIN_GROWTH).min(MAX_GAIN);
            } else if agreement < 0.0 {
                gain[i] = (gain[i] * 0.5).max(MIN_GAIN);
            }
        }
        let step = KeypointParams::from_fn(|i, _| {
            -free[i] * cfg.step_size * gain[i] * grad[i] / ((mean_sq[i] / bias).sqrt() + RMS_EPS)
        });

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut candidate = theta + step * scale;
            project_to_floor(&mut candidate, raw_floor);
            if let Ok((l, g)) = eval(&candidate) {
                if l.is_finite() && l <= loss {
                    accepted = Some((candidate, l, g));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((candidate, new_loss, new_grad)) = accepted else {
            // No decrease along the scaled direction: stationary to working precision.
            converged = true;
            break;
        };
        if scale < 1.0 {
            gain *= scale.max(MIN_GAIN);
            gain.apply(|g| *g = g.max(MIN_GAIN));
        }
        let change = (loss - new_loss).abs() / loss.abs().max(1.0);
        prev_grad = grad;
        theta = candidate;
        loss = new_loss;
        grad = new_grad;
        trace.push(loss);
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    Ok((theta, trace, iterations, converged))
}

/// Fits every keypoint of one frame. `labels` is indexed `[camera][keypoint]`.
pub fn fit_frame(cams: &[Camera], labels: &LabelGrid, cfg: &FitConfig) -> Result<Vec<Result<KeypointEstimate>>> {
    let keypoints = labels.first().map_or(0, |row| row.len());
    if labels.len() != cams.len() || labels.iter().any(|row| row.len() != keypoints) {
        return Err(Error::InvalidArgument("label grid does not match cameras".into()));
    }
    Ok((0..keypoints)
        .into_par_iter()
        .map(|k| {
            let views: Vec<_> = cams
                .iter()
                .zip(labels)
                .filter_map(|(cam, row)| row[k].map(|l| ViewLabel::new(cam, l)))
                .collect();
            fit_keypoint(&views, cfg)
        })
        .collect())
}

/// Fits every keypoint of a frame sequence seen by a fixed rig.
///
/// `frames[f]` is indexed `[camera][keypoint]`. The result is indexed
/// `[frame][keypoint]`.
pub fn fit_sequence(
    cams: &[Camera],
    frames: &[Vec<Vec<Option<Vector2<f64>>>>],
    cfg: &FitConfig,
) -> Result<Vec<Vec<Result<KeypointEstimate>>>> {
    cfg.validate()?;
    let keypoints = frames.first().and_then(|f| f.first()).map_or(0, |row| row.len());
    for labels in frames {
        if labels.len() != cams.len() || labels.iter().any(|row| row.len() != keypoints) {
            return Err(Error::InvalidArgument("label grid does not match cameras".into()));
        }
    }
    match cfg.sharing {
        ScaleSharing::PerFrame => frames.iter().map(|labels| fit_frame(cams, labels, cfg)).collect(),
        ScaleSharing::PerKeypoint => {
            let per_keypoint: Vec<Vec<Result<KeypointEstimate>>> = (0..keypoints)
                .into_par_iter()
                .map(|k| {
                    let views: Vec<Vec<ViewLabel<'_>>> = frames
                        .iter()
                        .map(|labels| {
                            cams.iter()
                                .zip(labels)
                                .filter_map(|(cam, row)| row[k].map(|l| ViewLabel::new(cam, l)))
                                .collect()
                        })
                        .collect();
                    fit_keypoint_shared(&views, cfg)
                })
                .collect::<Result<_>>()?;
            let mut columns: Vec<_> = per_keypoint.into_iter().map(|v| v.into_iter()).collect();
            Ok((0..frames.len())
                .map(|_| columns.iter_mut().map(|c| c.next().expect("one estimate per frame")).collect())
                .collect())
        }
    }
}
