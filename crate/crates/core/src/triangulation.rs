//! Heatmap soft-argmax and linear (DLT) multi-view triangulation.

use nalgebra::{DMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};

/// Upper bound on the number of views handed to the dense SVD.
pub const MAX_VIEWS: usize = 16;

/// Below this ratio of the two smallest singular values the null space is
/// effectively two-dimensional and the point is flagged degenerate.
pub const DEGENERATE_CONDITION_RATIO: f64 = 10.0;

const MIN_HOMOGENEOUS_W: f64 = 1e-12;
const RAY_PINV_CUTOFF: f64 = 1e-3;

/// A `width × height` grid of logits. `values[j * width + i]` is pixel `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("heatmap must be at least 1×1".into()));
        }
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "heatmap of {width}×{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("heatmap values must be finite".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height)
            .flat_map(|j| (0..width).map(move |i| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    /// Spatial expectation of `softmax(values / temperature)` over pixel
    /// coordinates `(i, j)`.
    pub fn soft_argmax(&self, temperature: f64) -> Vector2<f64> {
        assert!(temperature > 0.0, "temperature must be positive");
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut acc = Vector2::zeros();
        for (idx, v) in self.values.iter().enumerate() {
            let w = ((v - max) / temperature).exp();
            let (i, j) = (idx % self.width, idx / self.width);
            total += w;
            acc += Vector2::new(i as f64, j as f64) * w;
        }
        acc / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationResult {
    pub point: Vector3<f64>,
    pub smallest_singular_value: f64,
    /// Second-smallest over smallest singular value of the design matrix.
    pub condition_ratio: f64,
}

impl TriangulationResult {
    pub fn is_degenerate(&self) -> bool {
        self.condition_ratio < DEGENERATE_CONDITION_RATIO
    }
}

/// One camera's view of a point, with a row weight for the design matrix.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub camera: &'a Camera,
    pub pixel: Vector2<f64>,
    pub weight: f64,
}

impl<'a> Observation<'a> {
    pub fn new(camera: &'a Camera, pixel: Vector2<f64>) -> Self {
        Self {
            camera,
            pixel,
            weight: 1.0,
        }
    }

    pub fn weighted(camera: &'a Camera, pixel: Vector2<f64>, weight: f64) -> Self {
        Self { camera, pixel, weight }
    }
}

/// Total-least-squares triangulation: minimises `‖A y‖` over unit `y ∈ ℝ⁴`.
///
/// Pixels are first mapped through `K⁻¹`, so each view contributes the rows
/// `x·r₃ − r₁` and `y·r₃ − r₂` of its `[R | t]`, scaled by the view weight.
pub fn triangulate_dlt(observations: &[Observation<'_>]) -> Result<TriangulationResult> {
    let (result, w) = solve_homogeneous(observations)?;
    if w.abs() < MIN_HOMOGENEOUS_W {
        return Err(Error::DehomogenizationFailure(w.abs()));
    }
    Ok(result)
}

/// Like [`triangulate_dlt`], but a point at infinity is reported as a
/// degenerate result at the least-squares ray intersection instead of an error.
pub fn triangulate_or_flag(observations: &[Observation<'_>]) -> Result<TriangulationResult> {
    let (mut result, w) = solve_homogeneous(observations)?;
    if w.abs() < MIN_HOMOGENEOUS_W {
        result.point = closest_point_to_rays(observations);
        result.condition_ratio = result.condition_ratio.min(1.0);
    }
    Ok(result)
}

fn solve_homogeneous(observations: &[Observation<'_>]) -> Result<(TriangulationResult, f64)> {
    if observations.len() < 2 {
        return Err(Error::InsufficientViews {
            needed: 2,
            got: observations.len(),
        });
    }
    if observations.len() > MAX_VIEWS {
        return Err(Error::TooManyViews(observations.len()));
    }
    if observations.iter().any(|o| !o.pixel.iter().all(|v| v.is_finite()) || !o.weight.is_finite()) {
        return Err(Error::InvalidArgument("non-finite observation".into()));
    }

    let rows = 2 * observations.len().max(2);
    let mut a = DMatrix::<f64>::zeros(rows.max(4), 4);
    for (i, obs) in observations.iter().enumerate() {
        let cam = obs.camera;
        let n = cam.normalized_from_pixel(&obs.pixel);
        let r = cam.rotation();
        let t = cam.translation();
        let row = |k: usize| [r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]];
        let (r1, r2, r3) = (row(0), row(1), row(2));
        for c in 0..4 {
            a[(2 * i, c)] = obs.weight * (n.x * r3[c] - r1[c]);
            a[(2 * i + 1, c)] = obs.weight * (n.y * r3[c] - r2[c]);
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let (smallest, second) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    let y = v_t.row(order[0]);
    let w = y[3];
    let point = Vector3::new(y[0] / w, y[1] / w, y[2] / w);
    let condition_ratio = if smallest > 0.0 {
        (second / smallest).max(1.0)
    } else if second > 0.0 {
        f64::MAX
    } else {
        1.0
    };
    Ok((
        TriangulationResult {
            point,
            smallest_singular_value: smallest,
            condition_ratio,
        },
        w,
    ))
}

/// Least-squares point nearest to all viewing rays. When the rays are all
/// parallel the solution closest to the mean camera centre is returned.
/// Weighted least-squares point closest to the back-projected rays.
///
/// Directions the rays do not constrain (eigenvalues below `1e-3` of the
/// largest) resolve to the centroid of the camera centers.
pub fn closest_point_to_rays(observations: &[Observation<'_>]) -> Vector3<f64> {
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = Vector3::zeros();
    let mut centroid = Vector3::zeros();
    for obs in observations {
        let cam = obs.camera;
        let n = cam.normalized_from_pixel(&obs.pixel);
        let dir = (cam.rotation().transpose() * Vector3::new(n.x, n.y, 1.0)).normalize();
        let proj = nalgebra::Matrix3::identity() - dir * dir.transpose();
        let c = cam.center();
        let w2 = obs.weight * obs.weight;
        m += proj * w2;
        rhs += proj * c * w2;
        centroid += c;
    }
    centroid /= observations.len() as f64;
    // Solve for the offset from the centroid so the pseudo-inverse picks the
    // minimum-norm correction along unconstrained directions.
    let offset_rhs = rhs - m * centroid;
    let offset = m
        .pseudo_inverse(RAY_PINV_CUTOFF * m.norm().max(f64::MIN_POSITIVE))
        .map(|pinv| pinv * offset_rhs)
        .unwrap_or_else(|_| Vector3::zeros());
    centroid + offset
}
