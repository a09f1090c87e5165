//! Pinhole cameras and the para-perspective affine approximation.
//!
//! Camera frame convention: x right, y down, z along the optical axis. The
//! rotation and translation map world points into this frame,
//! `x_cam = R * x_world + t`.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum camera-frame depth (or range) accepted for projection, in scene units.
pub const EPS_DEPTH: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

/// A calibrated pinhole camera with zero skew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    id: String,
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidCamera {
            id: id.clone(),
            reason,
        };
        if !intrinsics.iter().chain(rotation.iter()).chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(invalid("non-finite entry".into()));
        }
        let (fx, fy) = (intrinsics[(0, 0)], intrinsics[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(invalid(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        let expected_zero = [
            intrinsics[(0, 1)],
            intrinsics[(1, 0)],
            intrinsics[(2, 0)],
            intrinsics[(2, 1)],
        ];
        if expected_zero.iter().any(|v| *v != 0.0) || intrinsics[(2, 2)] != 1.0 {
            return Err(invalid(
                "intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into(),
            ));
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho_err >= ORTHO_TOL {
            return Err(invalid(format!("rotation not orthonormal (|RᵀR − I| = {ortho_err:.3e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(invalid(format!("rotation determinant {det} != 1")));
        }
        Ok(Self {
            id,
            intrinsics,
            rotation,
            translation,
        })
    }

    /// Camera from focal lengths, principal point and world→camera pose.
    pub fn from_parts(
        id: impl Into<String>,
        (fx, fy): (f64, f64),
        (cx, cy): (f64, f64),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(id, k, rotation, translation)
    }

    /// Camera centred at `center` looking at `target`, with world `up` mapped
    /// to the negative image y axis.
    pub fn look_at(
        id: impl Into<String>,
        focal: (f64, f64),
        principal: (f64, f64),
        center: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera {
                id: id.clone(),
                reason: "look-at target coincides with center".into(),
            })?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera {
                id: id.clone(),
                reason: "up vector parallel to viewing direction".into(),
            })?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center);
        Self::from_parts(id, focal, principal, rotation, translation)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.intrinsics[(0, 0)], self.intrinsics[(1, 1)])
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.intrinsics[(0, 2)], self.intrinsics[(1, 2)])
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis (camera +z) expressed in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics * rt
    }

    pub fn world_to_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x_world + self.translation
    }

    /// Pinhole projection to pixel coordinates.
    pub fn project(&self, x_world: &Vector3<f64>) -> Result<Vector2<f64>> {
        let p = self.world_to_camera(x_world);
        if p.z <= EPS_DEPTH {
            return Err(Error::PointBehindCamera {
                camera: self.id.clone(),
                depth: p.z,
            });
        }
        Ok(self.pixel_from_normalized(p.x / p.z, p.y / p.z))
    }

    pub(crate) fn pixel_from_normalized(&self, x: f64, y: f64) -> Vector2<f64> {
        let (fx, fy) = self.focal();
        Vector2::new(fx * x, fy * y) + self.principal_point()
    }

    pub(crate) fn normalized_from_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let (fx, fy) = self.focal();
        let c = self.principal_point();
        Vector2::new((px.x - c.x) / fx, (px.y - c.y) / fy)
    }

    /// Para-perspective map anchored at `mu_world`, using the range-scaled
    /// operator `x ↦ Π x / ‖μ_c‖` composed with the intrinsics.
    pub fn para_perspective_at(&self, mu_world: &Vector3<f64>) -> Result<ParaPerspectiveMap> {
        self.affine_approx_at(mu_world, AffineApprox::RangeScaled)
    }

    /// Affine approximation of the pinhole projection anchored at `mu_world`.
    pub fn affine_approx_at(
        &self,
        mu_world: &Vector3<f64>,
        approx: AffineApprox,
    ) -> Result<ParaPerspectiveMap> {
        let p = self.world_to_camera(mu_world);
        approx.check_anchor(self, &p)?;
        let (fx, fy) = self.focal();
        let jac = approx.jacobian(fx, fy, &p);
        let anchor_image = approx.anchor_image(fx, fy, &p) + self.principal_point();
        // x_world ↦ J (R x + t − p) + m(p)
        let a = jac * self.rotation;
        let b = anchor_image + jac * (self.translation - p);
        Ok(ParaPerspectiveMap { a, b })
    }
}

/// How the pinhole projection is replaced by an affine map around an anchor.
///
/// All three agree exactly for anchors on the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffineApprox {
    /// `x ↦ K₂ Π₂ x / ‖μ_c‖ + c`: orthographic projection scaled by the
    /// anchor's distance from the camera centre.
    #[default]
    RangeScaled,
    /// `x ↦ K₂ Π₂ x / μ_z + c`: scaled orthographic (weak perspective).
    DepthScaled,
    /// First-order Taylor expansion of the pinhole model at the anchor.
    Linearized,
}

impl AffineApprox {
    pub const ALL: [AffineApprox; 3] = [
        AffineApprox::RangeScaled,
        AffineApprox::DepthScaled,
        AffineApprox::Linearized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AffineApprox::RangeScaled => "range-scaled",
            AffineApprox::DepthScaled => "depth-scaled",
            AffineApprox::Linearized => "linearized",
        }
    }

    fn check_anchor(self, cam: &Camera, p: &Vector3<f64>) -> Result<()> {
        let range = p.norm();
        if !(range > EPS_DEPTH) {
            return Err(Error::DegenerateAnchor {
                camera: cam.id.clone(),
                range,
            });
        }
        if self != AffineApprox::RangeScaled && !(p.z > EPS_DEPTH) {
            return Err(Error::DegenerateAnchor {
                camera: cam.id.clone(),
                range: p.z,
            });
        }
        Ok(())
    }

    /// Anchor image without the principal point offset.
    pub(crate) fn anchor_image(self, fx: f64, fy: f64, p: &Vector3<f64>) -> Vector2<f64> {
        let s = match self {
            AffineApprox::RangeScaled => p.norm(),
            AffineApprox::DepthScaled | AffineApprox::Linearized => p.z,
        };
        Vector2::new(fx * p.x / s, fy * p.y / s)
    }

    /// Linear part of the map, with respect to camera-frame coordinates.
    pub(crate) fn jacobian(self, fx: f64, fy: f64, p: &Vector3<f64>) -> Matrix2x3<f64> {
        match self {
            AffineApprox::RangeScaled => {
                let n = p.norm();
                Matrix2x3::new(fx / n, 0.0, 0.0, 0.0, fy / n, 0.0)
            }
            AffineApprox::DepthScaled => Matrix2x3::new(fx / p.z, 0.0, 0.0, 0.0, fy / p.z, 0.0),
            AffineApprox::Linearized => pinhole_jacobian(fx, fy, p),
        }
    }

    /// Derivative of the anchor image with respect to the anchor position.
    pub(crate) fn anchor_image_derivative(self, fx: f64, fy: f64, p: &Vector3<f64>) -> Matrix2x3<f64> {
        match self {
            AffineApprox::RangeScaled => {
                let n = p.norm();
                let n3 = n * n * n;
                Matrix2x3::new(
                    fx * (1.0 / n - p.x * p.x / n3),
                    -fx * p.x * p.y / n3,
                    -fx * p.x * p.z / n3,
                    -fy * p.y * p.x / n3,
                    fy * (1.0 / n - p.y * p.y / n3),
                    -fy * p.y * p.z / n3,
                )
            }
            AffineApprox::DepthScaled | AffineApprox::Linearized => pinhole_jacobian(fx, fy, p),
        }
    }

    /// Contracts `d` (2×3) against the derivative of `jacobian` with respect
    /// to the anchor: returns `v_k = Σ_ij d_ij ∂J_ij/∂p_k`.
    pub(crate) fn contract_jacobian_derivative(
        self,
        fx: f64,
        fy: f64,
        p: &Vector3<f64>,
        d: &Matrix2x3<f64>,
    ) -> Vector3<f64> {
        match self {
            AffineApprox::RangeScaled => {
                let n = p.norm();
                let trace = fx * d[(0, 0)] + fy * d[(1, 1)];
                -p * (trace / (n * n * n))
            }
            AffineApprox::DepthScaled => {
                let trace = fx * d[(0, 0)] + fy * d[(1, 1)];
                Vector3::new(0.0, 0.0, -trace / (p.z * p.z))
            }
            AffineApprox::Linearized => {
                let z2 = p.z * p.z;
                let z3 = z2 * p.z;
                let dx = -fx * d[(0, 2)] / z2;
                let dy = -fy * d[(1, 2)] / z2;
                let dz = fx * (-d[(0, 0)] / z2 + 2.0 * p.x * d[(0, 2)] / z3)
                    + fy * (-d[(1, 1)] / z2 + 2.0 * p.y * d[(1, 2)] / z3);
                Vector3::new(dx, dy, dz)
            }
        }
    }
}

fn pinhole_jacobian(fx: f64, fy: f64, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        fx * iz,
        0.0,
        -fx * p.x * iz * iz,
        0.0,
        fy * iz,
        -fy * p.y * iz * iz,
    )
}

/// Affine map `x ↦ A x + b` from world coordinates to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaPerspectiveMap {
    pub a: Matrix2x3<f64>,
    pub b: Vector2<f64>,
}

impl ParaPerspectiveMap {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector2<f64> {
        self.a * x + self.b
    }
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    id: String,
    intrinsics: [f64; 9],
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(raw: CameraJson) -> Result<Self> {
        Camera::new(
            raw.id,
            Matrix3::from_row_slice(&raw.intrinsics),
            Matrix3::from_row_slice(&raw.rotation),
            Vector3::from(raw.translation),
        )
    }
}

impl From<Camera> for CameraJson {
    fn from(cam: Camera) -> Self {
        let row_major = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[3 * r + c] = m[(r, c)];
                }
            }
            out
        };
        CameraJson {
            intrinsics: row_major(&cam.intrinsics),
            rotation: row_major(&cam.rotation),
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
            id: cam.id,
        }
    }
}
