//! Synthetic multi-camera scenes: camera rigs, an articulated 17-joint body
//! and label noise with uniform outliers.
//!
//! World coordinates are metric with `z` up. Rigs look at the origin and the
//! body is placed inside the 2 m cube centred there.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};

/// Half the edge of the cube that holds every generated joint.
pub const CUBE_HALF_EXTENT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RigKind {
    FourRing,
    TwoSameSide,
    TwoAntipodal,
    /// Cameras supplied directly in a scene file.
    Custom,
}

impl RigKind {
    pub const GENERATED: [RigKind; 3] = [RigKind::FourRing, RigKind::TwoSameSide, RigKind::TwoAntipodal];

    pub fn name(self) -> &'static str {
        match self {
            Self::FourRing => "four-ring",
            Self::TwoSameSide => "two-same-side",
            Self::TwoAntipodal => "two-antipodal",
            Self::Custom => "custom",
        }
    }

    /// Azimuths of the camera centers, degrees.
    fn azimuths(self) -> &'static [f64] {
        match self {
            Self::FourRing => &[0.0, 90.0, 180.0, 270.0],
            Self::TwoSameSide => &[-15.0, 15.0],
            Self::TwoAntipodal => &[0.0, 180.0],
            Self::Custom => &[],
        }
    }
}

impl std::str::FromStr for RigKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "four-ring" | "four_ring" => Ok(Self::FourRing),
            "two-same-side" | "two_same_side" => Ok(Self::TwoSameSide),
            "two-antipodal" | "two_antipodal" => Ok(Self::TwoAntipodal),
            "custom" => Ok(Self::Custom),
            other => Err(Error::InvalidArgument(format!("unknown rig `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub kind: RigKind,
    /// Distance of each camera center from the vertical axis, meters.
    pub radius: f64,
    /// Height of the camera centers, meters.
    pub height: f64,
    pub focal_px: f64,
    pub image_size: (u32, u32),
}

impl RigSpec {
    pub fn new(kind: RigKind) -> Self {
        Self {
            kind,
            radius: 4.0,
            height: 0.0,
            focal_px: 280.0,
            image_size: (256, 256),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!("rig radius must be positive, got {}", self.radius)));
        }
        if !(self.focal_px > 0.0) || !self.focal_px.is_finite() {
            return Err(Error::InvalidArgument(format!("focal length must be positive, got {}", self.focal_px)));
        }
        if !self.height.is_finite() {
            return Err(Error::InvalidArgument("rig height must be finite".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidArgument("image size must be nonzero".into()));
        }
        if self.radius <= CUBE_HALF_EXTENT * 3f64.sqrt() {
            return Err(Error::InvalidArgument(format!(
                "rig radius {} does not clear the subject volume",
                self.radius
            )));
        }
        Ok(())
    }

    pub fn full_image(&self) -> PixelBox {
        PixelBox {
            min: [0.0, 0.0],
            max: [self.image_size.0 as f64, self.image_size.1 as f64],
        }
    }
}

impl Default for RigSpec {
    fn default() -> Self {
        Self::new(RigKind::FourRing)
    }
}

/// Places the rig's cameras on a circle, each looking at the origin.
pub fn build_rig(spec: &RigSpec) -> Result<Vec<Camera>> {
    spec.validate()?;
    if spec.kind == RigKind::Custom {
        return Err(Error::InvalidArgument("custom rigs come from scene files".into()));
    }
    let principal = (spec.image_size.0 as f64 / 2.0, spec.image_size.1 as f64 / 2.0);
    spec.kind
        .azimuths()
        .iter()
        .enumerate()
        .map(|(i, deg)| {
            let a = deg.to_radians();
            let center = Vector3::new(spec.radius * a.cos(), spec.radius * a.sin(), spec.height);
            Camera::look_at(
                format!("cam{i}"),
                (spec.focal_px, spec.focal_px),
                principal,
                center,
                Vector3::zeros(),
                Vector3::z(),
            )
        })
        .collect()
}

/// Axis-aligned pixel rectangle, `min` inclusive and `max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl PixelBox {
    fn validate(&self) -> Result<()> {
        let ok = (0..2).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i]);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("empty outlier box {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector2<f64> {
        Vector2::new(
            rng.random_range(self.min[0]..self.max[0]),
            rng.random_range(self.min[1]..self.max[1]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the isotropic Gaussian label noise, pixels.
    pub pixel_sigma: f64,
    pub outlier_rate: f64,
    pub outlier_box: PixelBox,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(pixel_sigma: f64, outlier_rate: f64, outlier_box: PixelBox, seed: u64) -> Self {
        Self {
            pixel_sigma,
            outlier_rate,
            outlier_box,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_sigma >= 0.0) || !self.pixel_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel sigma must be non-negative, got {}",
                self.pixel_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::InvalidArgument(format!(
                "outlier rate must lie in [0, 1], got {}",
                self.outlier_rate
            )));
        }
        self.outlier_box.validate()
    }
}

/// A kinematic tree of named joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// Parent of each joint; `None` only for the root.
    pub parents: Vec<Option<usize>>,
    pub pelvis_index: usize,
}

pub const HUMAN17_NAMES: [&str; 17] = [
    "Pelvis", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot", "Spine", "Thorax", "Neck", "Head",
    "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
];

const HUMAN17_PARENTS: [Option<usize>; 17] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

/// Bone length from each joint's parent, meters.
const HUMAN17_BONES: [f64; 17] = [
    0.0, 0.13, 0.45, 0.44, 0.13, 0.45, 0.44, 0.23, 0.25, 0.12, 0.12, 0.17, 0.28, 0.25, 0.17, 0.28, 0.25,
];

impl Skeleton {
    pub fn human17() -> Self {
        Self {
            names: HUMAN17_NAMES.iter().map(|s| s.to_string()).collect(),
            parents: HUMAN17_PARENTS.to_vec(),
            pelvis_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.parents.len() != n {
            return Err(Error::InvalidArgument("skeleton names and parents differ in length".into()));
        }
        if self.pelvis_index >= n {
            return Err(Error::IndexOutOfRange {
                index: self.pelvis_index,
                len: n,
            });
        }
        for (i, p) in self.parents.iter().enumerate() {
            match p {
                Some(p) if *p >= i => {
                    return Err(Error::InvalidArgument(format!("joint {i} must follow its parent {p}")));
                }
                None if i != 0 => return Err(Error::InvalidArgument(format!("joint {i} has no parent"))),
                _ => {}
            }
        }
        Ok(())
    }

    /// Lengths of the bones ending at each joint (0 for the root).
    pub fn bone_lengths(&self, joints: &[Vector3<f64>]) -> Vec<f64> {
        self.parents
            .iter()
            .enumerate()
            .map(|(i, p)| p.map_or(0.0, |p| (joints[i] - joints[p]).norm()))
            .collect()
    }
}

/// Motion styles used to group frames in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Standing,
    Walking,
    Reaching,
    Crouching,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Standing, Action::Walking, Action::Reaching, Action::Crouching];

    pub fn name(self) -> &'static str {
        match self {
            Self::Standing => "Standing",
            Self::Walking => "Walking",
            Self::Reaching => "Reaching",
            Self::Crouching => "Crouching",
        }
    }
}

struct AngleRanges {
    thigh: (f64, f64),
    knee: (f64, f64),
    leg_splay: (f64, f64),
    lean: (f64, f64),
    upper_arm: (f64, f64),
    elbow: (f64, f64),
    arm_splay: (f64, f64),
}

impl Action {
    fn ranges(self) -> AngleRanges {
        let base = AngleRanges {
            thigh: (-0.15, 0.15),
            knee: (0.0, 0.2),
            leg_splay: (-0.05, 0.2),
            lean: (-0.05, 0.1),
            upper_arm: (-0.2, 0.3),
            elbow: (0.0, 0.5),
            arm_splay: (0.05, 0.4),
        };
        match self {
            Self::Standing => base,
            Self::Walking => AngleRanges {
                thigh: (-0.5, 0.5),
                knee: (0.0, 0.9),
                upper_arm: (-0.5, 0.5),
                elbow: (0.0, 0.6),
                lean: (0.0, 0.15),
                ..base
            },
            Self::Reaching => AngleRanges {
                upper_arm: (0.5, 2.8),
                elbow: (0.0, 0.4),
                arm_splay: (0.0, 0.6),
                ..base
            },
            Self::Crouching => AngleRanges {
                thigh: (0.8, 1.5),
                knee: (1.2, 2.2),
                leg_splay: (0.05, 0.35),
                lean: (0.2, 0.6),
                ..base
            },
        }
    }
}

/// Direction that starts pointing along `rest` and swings by `forward`
/// toward `f` and by `side` toward `s`.
fn limb_direction(rest: Vector3<f64>, f: Vector3<f64>, s: Vector3<f64>, forward: f64, side: f64) -> Vector3<f64> {
    rest * (forward.cos() * side.cos()) + f * (forward.sin() * side.cos()) + s * side.sin()
}

/// Samples a pose of the 17-joint body with its pelvis at the returned root
/// translation. All joints lie inside the cube of half-extent
/// [`CUBE_HALF_EXTENT`] around the origin.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, action: Action) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let r = action.ranges();
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let yaw: f64 = draw((0.0, std::f64::consts::TAU));
    let forward = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let left = Vector3::z().cross(&forward);
    let down = -Vector3::z();

    let lean = draw(r.lean);
    let torso = limb_direction(Vector3::z(), forward, left, lean, 0.0);
    let mut dirs = [Vector3::zeros(); 17];
    dirs[1] = -left;
    dirs[4] = left;
    for (knee, foot, side) in [(2, 3, -1.0), (5, 6, 1.0)] {
        let thigh = draw(r.thigh);
        let bend = draw(r.knee);
        let splay = draw(r.leg_splay) * side;
        dirs[knee] = limb_direction(down, forward, left, thigh, splay);
        dirs[foot] = limb_direction(down, forward, left, thigh - bend, splay);
    }
    dirs[7] = torso;
    dirs[8] = torso;
    dirs[9] = torso;
    dirs[10] = limb_direction(Vector3::z(), forward, left, lean + draw((-0.3, 0.3)), draw((-0.2, 0.2)));
    dirs[11] = left;
    dirs[14] = -left;
    for (elbow, wrist, side) in [(12, 13, 1.0), (15, 16, -1.0)] {
        let upper = draw(r.upper_arm);
        let bend = draw(r.elbow);
        let splay = draw(r.arm_splay) * side;
        dirs[elbow] = limb_direction(down, forward, left, upper, splay);
        dirs[wrist] = limb_direction(down, forward, left, upper + bend, splay);
    }

    let mut joints = vec![Vector3::zeros(); 17];
    for i in 1..17 {
        let parent = HUMAN17_PARENTS[i].expect("non-root joint");
        joints[i] = joints[parent] + dirs[i].normalize() * HUMAN17_BONES[i];
    }

    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for j in &joints {
        lo = lo.inf(j);
        hi = hi.sup(j);
    }
    // The body spans at most about 1.9 m, so every axis leaves room to move.
    let root = Vector3::from_fn(|i, _| {
        let (min, max) = (-CUBE_HALF_EXTENT - lo[i], CUBE_HALF_EXTENT - hi[i]);
        if max > min {
            rng.random_range(min..max)
        } else {
            0.5 * (min + max)
        }
    });
    for j in &mut joints {
        *j += root;
    }
    (joints, root)
}

/// Labels of every keypoint in one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraLabels {
    pub pixels: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
    pub outlier: Vec<bool>,
}

impl CameraLabels {
    pub fn get(&self, k: usize) -> Option<Vector2<f64>> {
        self.valid[k].then(|| self.pixels[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub action: String,
    pub gt_keypoints: Vec<Vector3<f64>>,
    /// One entry per camera, in rig order.
    pub observations: Vec<CameraLabels>,
}

impl Frame {
    /// Labels indexed `[camera][keypoint]`, `None` where masked.
    pub fn label_grid(&self) -> Vec<Vec<Option<Vector2<f64>>>> {
        self.observations
            .iter()
            .map(|cam| (0..cam.pixels.len()).map(|k| cam.get(k)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rig: Option<RigSpec>,
    pub noise: Option<NoiseSpec>,
    pub cameras: Vec<Camera>,
    pub skeleton: Skeleton,
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn keypoints(&self) -> usize {
        self.skeleton.len()
    }

    pub fn label_grids(&self) -> Vec<Vec<Vec<Option<Vector2<f64>>>>> {
        self.frames.iter().map(Frame::label_grid).collect()
    }

    /// Checks shapes and that the mask never marks a point behind a camera
    /// as valid.
    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let k = self.keypoints();
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.gt_keypoints.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} has {} keypoints, skeleton has {k}",
                    frame.gt_keypoints.len()
                )));
            }
            if frame.observations.len() != self.cameras.len() {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} has labels for {} cameras, scene has {}",
                    frame.observations.len(),
                    self.cameras.len()
                )));
            }
            for (c, labels) in frame.observations.iter().enumerate() {
                if labels.pixels.len() != k || labels.valid.len() != k || labels.outlier.len() != k {
                    return Err(Error::InvalidArgument(format!("frame {f} camera {c}: label arrays must have {k} entries")));
                }
            }
        }
        Ok(())
    }
}

/// Labels every keypoint in every camera. Points behind a camera are masked
/// out; everything else is either a uniform outlier or the exact projection
/// plus Gaussian noise.
pub fn observe<R: Rng + ?Sized>(
    gt: &[Vector3<f64>],
    cameras: &[Camera],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<CameraLabels>> {
    noise.validate()?;
    let normal = Normal::new(0.0, noise.pixel_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let mut labels = CameraLabels {
            pixels: Vec::with_capacity(gt.len()),
            valid: Vec::with_capacity(gt.len()),
            outlier: Vec::with_capacity(gt.len()),
        };
        for p in gt {
            // Draw the same number of variates for every label so masking
            // does not shift later noise.
            let is_outlier = rng.random::<f64>() < noise.outlier_rate;
            let uniform = noise.outlier_box.sample(rng);
            let jitter = Vector2::new(normal.sample(rng), normal.sample(rng));
            match cam.project(p) {
                Ok(px) => {
                    labels.pixels.push(if is_outlier { uniform } else { px + jitter });
                    labels.valid.push(true);
                    labels.outlier.push(is_outlier);
                }
                Err(Error::PointBehindCamera { .. }) => {
                    labels.pixels.push(Vector2::zeros());
                    labels.valid.push(false);
                    labels.outlier.push(false);
                }
                Err(e) => return Err(e),
            }
        }
        out.push(labels);
    }
    Ok(out)
}

/// Generates `frames` frames of the 17-joint body seen by the given rig.
/// One seeded stream drives every random draw.
pub fn simulate(rig: &RigSpec, noise: &NoiseSpec, frames: usize) -> Result<Scene> {
    let cameras = build_rig(rig)?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let action = Action::ALL[rng.random_range(0..Action::ALL.len())];
        let (gt, _) = sample_pose(&mut rng, action);
        let observations = observe(&gt, &cameras, noise, &mut rng)?;
        out.push(Frame {
            action: action.name().to_string(),
            gt_keypoints: gt,
            observations,
        });
    }
    Ok(Scene {
        rig: Some(*rig),
        noise: Some(*noise),
        cameras,
        skeleton: Skeleton::human17(),
        frames: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noise(sigma: f64, rate: f64, seed: u64) -> NoiseSpec {
        NoiseSpec::new(sigma, rate, RigSpec::default().full_image(), seed)
    }

    #[test]
    fn four_ring_geometry() {
        let cams = build_rig(&RigSpec::new(RigKind::FourRing)).unwrap();
        assert_eq!(cams.len(), 4);
        for cam in &cams {
            assert_relative_eq!(cam.center().norm(), 4.0, epsilon = 1e-12);
            // The origin sits on the optical axis.
            let at_origin = cam.world_to_camera(&Vector3::zeros());
            assert!(at_origin.xy().norm() < 1e-9);
            assert!((cam.rotation() * (-cam.center()) - cam.translation()).norm() < 1e-9);
        }
        for (a, b) in cams.iter().zip(cams.iter().skip(1)) {
            assert!(a.optical_axis().dot(&b.optical_axis()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_camera_rigs() {
        let anti = build_rig(&RigSpec::new(RigKind::TwoAntipodal)).unwrap();
        assert_relative_eq!(anti[0].optical_axis().dot(&anti[1].optical_axis()), -1.0, epsilon = 1e-9);

        let same = build_rig(&RigSpec::new(RigKind::TwoSameSide)).unwrap();
        let angle = same[0].center().angle(&same[1].center());
        assert_relative_eq!(angle.to_degrees(), 30.0, epsilon = 1e-9);
        assert!(build_rig(&RigSpec::new(RigKind::Custom)).is_err());
    }

    #[test]
    fn poses_keep_bone_lengths_and_fit_the_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let skeleton = Skeleton::human17();
        for i in 0..2000 {
            let action = Action::ALL[i % 4];
            let (joints, root) = sample_pose(&mut rng, action);
            assert_eq!(joints[skeleton.pelvis_index], root);
            for (len, expected) in skeleton.bone_lengths(&joints).iter().zip(HUMAN17_BONES) {
                assert!((len - expected).abs() < 1e-12);
            }
            assert!(joints.iter().all(|j| j.amax() <= CUBE_HALF_EXTENT));
        }
    }

    #[test]
    fn noiseless_labels_are_exact_projections() {
        let scene = simulate(&RigSpec::default(), &noise(0.0, 0.0, 3), 5).unwrap();
        for frame in &scene.frames {
            for (cam, labels) in scene.cameras.iter().zip(&frame.observations) {
                for (k, p) in frame.gt_keypoints.iter().enumerate() {
                    assert_eq!(labels.get(k), Some(cam.project(p).unwrap()));
                }
            }
        }
    }

    #[test]
    fn fixed_seed_regenerates_the_same_scene() {
        let a = simulate(&RigSpec::default(), &noise(2.0, 0.1, 11), 8).unwrap();
        let b = simulate(&RigSpec::default(), &noise(2.0, 0.1, 11), 8).unwrap();
        assert_eq!(a, b);
        let c = simulate(&RigSpec::default(), &noise(2.0, 0.1, 12), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inlier_noise_and_outlier_rate_match_the_spec() {
        let scene = simulate(&RigSpec::default(), &noise(2.0, 0.1, 5), 1500).unwrap();
        let (mut sum_sq, mut inliers, mut outliers, mut total) = (0.0, 0usize, 0usize, 0usize);
        for frame in &scene.frames {
            for (cam, labels) in scene.cameras.iter().zip(&frame.observations) {
                for (k, p) in frame.gt_keypoints.iter().enumerate() {
                    total += 1;
                    if labels.outlier[k] {
                        outliers += 1;
                    } else {
                        sum_sq += (labels.pixels[k] - cam.project(p).unwrap()).norm_squared();
                        inliers += 1;
                    }
                }
            }
        }
        assert!(inliers * 2 > 100_000);
        let sigma = (sum_sq / (2 * inliers) as f64).sqrt();
        assert!((sigma - 2.0).abs() < 0.03 * 2.0, "sigma {sigma}");
        // 99% binomial interval.
        let p = 0.1;
        let half = 2.576 * (p * (1.0 - p) / total as f64).sqrt();
        let rate = outliers as f64 / total as f64;
        assert!((rate - p).abs() < half, "rate {rate}");
    }

    #[test]
    fn all_outliers_are_uniform_in_the_box() {
        let bbox = PixelBox {
            min: [10.0, 20.0],
            max: [110.0, 70.0],
        };
        let cams = build_rig(&RigSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = vec![Vector3::zeros(); 2500];
        let labels = observe(&gt, &cams, &NoiseSpec::new(2.0, 1.0, bbox, 0), &mut rng).unwrap();
        let mut us: Vec<f64> = labels.iter().flat_map(|c| c.pixels.iter().map(|p| (p.x - 10.0) / 100.0)).collect();
        let mut vs: Vec<f64> = labels.iter().flat_map(|c| c.pixels.iter().map(|p| (p.y - 20.0) / 50.0)).collect();
        assert_eq!(us.len(), 10_000);
        for xs in [&mut us, &mut vs] {
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
                .fold(0.0, f64::max);
            // 1% critical value of the one-sample KS statistic.
            assert!(ks < 1.63 / n.sqrt(), "ks {ks}");
        }
    }

    #[test]
    fn points_behind_a_camera_are_masked() {
        let cams = build_rig(&RigSpec::default()).unwrap();
        let behind = cams[0].center() * 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels = observe(&[behind], &cams, &noise(1.0, 0.0, 0), &mut rng).unwrap();
        assert!(!labels[0].valid[0]);
        assert!(labels[2].valid[0]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(noise(-1.0, 0.0, 0).validate().is_err());
        assert!(noise(1.0, 1.5, 0).validate().is_err());
        let mut rig = RigSpec::default();
        rig.radius = 0.0;
        assert!(build_rig(&rig).is_err());
        assert!("four_ring".parse::<RigKind>().is_ok());
        assert!("hexagon".parse::<RigKind>().is_err());
    }
}
