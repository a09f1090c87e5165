//! Versioned JSON files for scenes and fitted estimates.
//!
//! Floats are written in shortest round-trip form, so every value reads back
//! bit-identical. Non-finite values are written as the strings `"inf"`,
//! `"-inf"` and `"nan"`. Writes go to a temporary file in the target
//! directory and are renamed into place.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::estimator::{FitConfig, KeypointEstimate, ScaleChol};
use crate::simulator::{Frame, NoiseSpec, RigSpec, Scene, Skeleton};
use crate::tdist::MvtDist3;
use crate::triangulation::{TriangulationResult, DEGENERATE_CONDITION_RATIO};

pub const SCHEMA_VERSION: i64 = 1;

/// Largest allowed gap between a stored scale matrix and the one rebuilt
/// from its raw parameters, relative to `max(1, |Σ|∞)`.
pub const SIGMA_INTEGRITY_TOL: f64 = 1e-9;

/// Serde adapter for floats that may be infinite or NaN.
pub(crate) mod nonfinite {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number, got string `{other}`"))),
            },
        }
    }
}

#[derive(Serialize)]
struct SceneOut<'a> {
    schema_version: i64,
    rig: &'a Option<RigSpec>,
    noise: &'a Option<NoiseSpec>,
    cameras: &'a [Camera],
    skeleton: &'a Skeleton,
    frames: &'a [Frame],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneIn {
    #[allow(dead_code)]
    schema_version: i64,
    #[serde(default)]
    rig: Option<RigSpec>,
    #[serde(default)]
    noise: Option<NoiseSpec>,
    cameras: Vec<Camera>,
    skeleton: Skeleton,
    frames: Vec<Frame>,
}

pub fn scene_to_string(scene: &Scene) -> Result<String> {
    let out = SceneOut {
        schema_version: SCHEMA_VERSION,
        rig: &scene.rig,
        noise: &scene.noise,
        cameras: &scene.cameras,
        skeleton: &scene.skeleton,
        frames: &scene.frames,
    };
    serde_json::to_string_pretty(&out).map_err(|e| Error::InvalidArgument(format!("cannot serialize scene: {e}")))
}

pub fn scene_from_str(text: &str, path: &Path) -> Result<Scene> {
    let raw: SceneIn = parse_versioned(text, path)?;
    let scene = Scene {
        rig: raw.rig,
        noise: raw.noise,
        cameras: raw.cameras,
        skeleton: raw.skeleton,
        frames: raw.frames,
    };
    scene.validate().map_err(|e| Error::Integrity {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(scene)
}

pub fn write_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let mut text = scene_to_string(scene)?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    scene_from_str(&read_text(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationRecord {
    pub point: [f64; 3],
    pub smallest_singular_value: f64,
    #[serde(with = "nonfinite")]
    pub condition_ratio: f64,
    pub degenerate: bool,
}

impl From<&TriangulationResult> for TriangulationRecord {
    fn from(t: &TriangulationResult) -> Self {
        Self {
            point: t.point.into(),
            smallest_singular_value: t.smallest_singular_value,
            condition_ratio: t.condition_ratio,
            degenerate: t.is_degenerate(),
        }
    }
}

/// One fitted keypoint as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedRecord {
    pub mu: [f64; 3],
    /// `[raw₁₁, raw₂₂, raw₃₃, L₂₁, L₃₁, L₃₂]`.
    pub l_raw: [f64; 6],
    /// Row-major scale matrix.
    pub sigma: [f64; 9],
    #[serde(with = "nonfinite")]
    pub nu: f64,
    #[serde(with = "nonfinite")]
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub triangulation: TriangulationRecord,
}

impl FittedRecord {
    pub fn from_estimate(e: &KeypointEstimate) -> Self {
        let sigma = e.params.materialize_sigma();
        Self {
            mu: (*e.dist.mu()).into(),
            l_raw: e.params.to_array(),
            sigma: std::array::from_fn(|i| sigma[(i / 3, i % 3)]),
            nu: e.dist.nu(),
            final_loss: e.final_loss,
            iterations: e.iterations,
            converged: e.converged,
            triangulation: (&e.triangulation).into(),
        }
    }

    pub fn mu(&self) -> Vector3<f64> {
        Vector3::from(self.mu)
    }

    pub fn sigma(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.sigma)
    }

    pub fn distribution(&self) -> Result<MvtDist3> {
        MvtDist3::new(self.mu(), self.sigma(), self.nu)
    }

    /// Degenerate when the fit stopped early or its triangulation was
    /// ill-conditioned.
    pub fn is_degenerate(&self) -> bool {
        !self.converged || self.triangulation.degenerate
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err("mean is not finite".into());
        }
        if !(self.nu > 0.0) {
            return Err(format!("nu must be positive, got {}", self.nu));
        }
        let rebuilt = ScaleChol::from_array(self.l_raw).materialize_sigma();
        let stored = self.sigma();
        let scale = stored.amax().max(1.0);
        let gap = (rebuilt - stored).amax();
        if !(gap <= SIGMA_INTEGRITY_TOL * scale) {
            return Err(format!("sigma differs from the matrix rebuilt from l_raw by {gap:.3e}"));
        }
        let flagged = self.triangulation.condition_ratio < DEGENERATE_CONDITION_RATIO;
        if flagged != self.triangulation.degenerate {
            return Err("triangulation degenerate flag disagrees with its condition ratio".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum EstimateRecord {
    Fitted(FittedRecord),
    Failed { error: String },
}

impl EstimateRecord {
    pub fn from_result(r: &Result<KeypointEstimate>) -> Self {
        match r {
            Ok(e) => Self::Fitted(FittedRecord::from_estimate(e)),
            Err(e) => Self::Failed { error: e.to_string() },
        }
    }

    pub fn fitted(&self) -> Option<&FittedRecord> {
        match self {
            Self::Fitted(f) => Some(f),
            Self::Failed { .. } => None,
        }
    }
}

/// Estimates for a sequence of frames, indexed `[frame][keypoint]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatesFile {
    pub keypoints: usize,
    pub config: Option<FitConfig>,
    pub frames: Vec<Vec<EstimateRecord>>,
}

impl EstimatesFile {
    pub fn from_results(keypoints: usize, config: Option<FitConfig>, results: &[Vec<Result<KeypointEstimate>>]) -> Self {
        Self {
            keypoints,
            config,
            frames: results
                .iter()
                .map(|frame| frame.iter().map(EstimateRecord::from_result).collect())
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct EstimatesOut<'a> {
    schema_version: i64,
    n_frames: usize,
    keypoints: usize,
    config: &'a Option<FitConfig>,
    frames: &'a [Vec<EstimateRecord>],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatesIn {
    #[allow(dead_code)]
    schema_version: i64,
    n_frames: usize,
    keypoints: usize,
    #[serde(default)]
    config: Option<FitConfig>,
    frames: Vec<Vec<EstimateRecord>>,
}

pub fn estimates_to_string(file: &EstimatesFile) -> Result<String> {
    let out = EstimatesOut {
        schema_version: SCHEMA_VERSION,
        n_frames: file.frames.len(),
        keypoints: file.keypoints,
        config: &file.config,
        frames: &file.frames,
    };
    serde_json::to_string_pretty(&out).map_err(|e| Error::InvalidArgument(format!("cannot serialize estimates: {e}")))
}

pub fn estimates_from_str(text: &str, path: &Path) -> Result<EstimatesFile> {
    let raw: EstimatesIn = parse_versioned(text, path)?;
    let integrity = |message: String| Error::Integrity {
        path: path.to_path_buf(),
        message,
    };
    if raw.n_frames != raw.frames.len() {
        return Err(integrity(format!("n_frames is {} but {} frames are stored", raw.n_frames, raw.frames.len())));
    }
    for (f, frame) in raw.frames.iter().enumerate() {
        if frame.len() != raw.keypoints {
            return Err(integrity(format!("frame {f} has {} records, expected {}", frame.len(), raw.keypoints)));
        }
        for (k, rec) in frame.iter().enumerate() {
            if let EstimateRecord::Fitted(fit) = rec {
                fit.check().map_err(|m| integrity(format!("frame {f} keypoint {k}: {m}")))?;
            }
        }
    }
    Ok(EstimatesFile {
        keypoints: raw.keypoints,
        config: raw.config,
        frames: raw.frames,
    })
}

pub fn write_estimates(file: &EstimatesFile, path: impl AsRef<Path>) -> Result<()> {
    let mut text = estimates_to_string(file)?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_estimates(path: impl AsRef<Path>) -> Result<EstimatesFile> {
    let path = path.as_ref();
    estimates_from_str(&read_text(path)?, path)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_versioned<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(path, text, e))?;
    let parse = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        column: 1,
        message,
    };
    let Some(obj) = value.as_object() else {
        return Err(parse("expected a JSON object at top level".into()));
    };
    match obj.get("schema_version") {
        None => return Err(parse("missing field `schema_version`".into())),
        Some(v) => {
            let found = v
                .as_i64()
                .ok_or_else(|| parse(format!("field `schema_version` must be an integer, got {v}")))?;
            if found != SCHEMA_VERSION {
                return Err(Error::SchemaVersionMismatch {
                    path: path.to_path_buf(),
                    found,
                    expected: SCHEMA_VERSION,
                });
            }
        }
    }
    serde_json::from_str(text).map_err(|e| parse_error(path, text, e))
}

fn parse_error(path: &Path, text: &str, err: serde_json::Error) -> Error {
    let full = err.to_string();
    let mut message = match full.rfind(" at line ") {
        Some(i) => full[..i].to_string(),
        None => full,
    };
    if err.is_eof() {
        let offset = byte_offset(text, err.line(), err.column());
        if let Some(field) = open_path(&text[..offset]) {
            message = format!("{message}; file ends inside field `{field}`");
        }
    }
    Error::Parse {
        path: path.to_path_buf(),
        line: err.line(),
        column: err.column(),
        message,
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

enum Open {
    Object(Option<String>),
    Array(usize),
}

/// Path of the innermost JSON container still open at the end of `text`,
/// such as `frames[3].gt_keypoints`.
fn open_path(text: &str) -> Option<String> {
    let mut stack: Vec<Open> = Vec::new();
    let mut last_string = String::new();
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                last_string.clear();
                while let Some(c) = chars.next() {
                    match c {
                        '\\' => {
                            chars.next();
                        }
                        '"' => break,
                        c => last_string.push(c),
                    }
                }
            }
            '{' => stack.push(Open::Object(None)),
            '[' => stack.push(Open::Array(0)),
            '}' | ']' => {
                stack.pop();
            }
            ':' => {
                if let Some(Open::Object(key)) = stack.last_mut() {
                    *key = Some(last_string.clone());
                }
            }
            ',' => match stack.last_mut() {
                Some(Open::Array(i)) => *i += 1,
                Some(Open::Object(key)) => *key = None,
                None => {}
            },
            _ => {}
        }
    }
    let mut path = String::new();
    for open in &stack {
        match open {
            Open::Object(Some(key)) => {
                if !path.is_empty() {
                    path.push('.');
                }
                path.push_str(key);
            }
            Open::Object(None) => {}
            Open::Array(i) => path.push_str(&format!("[{i}]")),
        }
    }
    (!path.is_empty()).then_some(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit_sequence, FitConfig};
    use crate::simulator::{simulate, RigKind};

    fn small_scene(seed: u64) -> Scene {
        let rig = RigSpec::new(RigKind::FourRing);
        simulate(&rig, &NoiseSpec::new(2.0, 0.1, rig.full_image(), seed), 3).unwrap()
    }

    #[test]
    fn scene_round_trip_is_exact() {
        let scene = small_scene(1);
        let text = scene_to_string(&scene).unwrap();
        let back = scene_from_str(&text, Path::new("s.json")).unwrap();
        assert_eq!(back, scene);
        assert_eq!(scene_to_string(&back).unwrap(), text);
    }

    #[test]
    fn truncated_scene_names_the_open_field() {
        let text = scene_to_string(&small_scene(2)).unwrap();
        let cut = text.find("\"gt_keypoints\"").unwrap() + 40;
        match scene_from_str(&text[..cut], Path::new("s.json")) {
            Err(Error::Parse { message, line, .. }) => {
                assert!(message.contains("gt_keypoints"), "{message}");
                assert!(line > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&scene_to_string(&small_scene(2)).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("skeleton");
        match scene_from_str(&v.to_string(), Path::new("s.json")) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("skeleton"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let text = scene_to_string(&small_scene(2)).unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 999", 1);
        assert!(matches!(
            scene_from_str(&text, Path::new("s.json")),
            Err(Error::SchemaVersionMismatch { found: 999, expected: 1, .. })
        ));
    }

    fn estimates_for(scene: &Scene) -> EstimatesFile {
        let cfg = FitConfig::default();
        let results = fit_sequence(&scene.cameras, &scene.label_grids(), &cfg).unwrap();
        EstimatesFile::from_results(scene.keypoints(), Some(cfg), &results)
    }

    #[test]
    fn estimates_round_trip_and_integrity() {
        let file = estimates_for(&small_scene(3));
        let text = estimates_to_string(&file).unwrap();
        assert_eq!(estimates_from_str(&text, Path::new("e.json")).unwrap(), file);

        let mut broken = file.clone();
        if let EstimateRecord::Fitted(f) = &mut broken.frames[1][4] {
            f.sigma[4] += 1e-6;
        }
        let text = estimates_to_string(&broken).unwrap();
        assert!(matches!(estimates_from_str(&text, Path::new("e.json")), Err(Error::Integrity { .. })));
    }

    #[test]
    fn empty_estimates_are_valid() {
        let file = EstimatesFile {
            keypoints: 17,
            config: None,
            frames: vec![],
        };
        let text = estimates_to_string(&file).unwrap();
        assert!(text.contains("\"n_frames\": 0"));
        assert_eq!(estimates_from_str(&text, Path::new("e.json")).unwrap(), file);
    }

    #[test]
    fn non_finite_values_survive() {
        let rec = TriangulationRecord {
            point: [0.0; 3],
            smallest_singular_value: 0.0,
            condition_ratio: f64::INFINITY,
            degenerate: false,
        };
        let text = serde_json::to_string(&rec).unwrap();
        assert!(text.contains("\"inf\""));
        let back: TriangulationRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.condition_ratio, f64::INFINITY);
    }

    #[test]
    fn atomic_write_replaces_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        std::fs::write(&path, "old").unwrap();
        let scene = small_scene(4);
        write_scene(&scene, &path).unwrap();
        assert_eq!(read_scene(&path).unwrap(), scene);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(matches!(read_scene(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
