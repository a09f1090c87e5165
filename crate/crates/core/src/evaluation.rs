//! Pelvis-relative joint error, ellipsoid coverage and grouped summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::KeypointEstimate;
use crate::io::{EstimateRecord, EstimatesFile};
use crate::simulator::Scene;
use crate::tdist::{confidence_radius2, MvtDist3};

/// Scene units are meters; reports are in millimeters.
pub const MM_PER_UNIT: f64 = 1000.0;

pub const DEFAULT_LEVELS: [f64; 3] = [0.5, 0.9, 0.95];

/// Group label of the all-frames row.
pub const AVG: &str = "Avg";

/// Distance of each joint from its ground truth after both skeletons are
/// translated so their pelvis sits at the origin.
pub fn aligned_joint_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>], pelvis_index: usize) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted joints for {} ground-truth joints",
            pred.len(),
            gt.len()
        )));
    }
    if pelvis_index >= gt.len() {
        return Err(Error::IndexOutOfRange {
            index: pelvis_index,
            len: gt.len(),
        });
    }
    let (p0, g0) = (pred[pelvis_index], gt[pelvis_index]);
    Ok(pred.iter().zip(gt).map(|(p, g)| ((p - p0) - (g - g0)).norm()).collect())
}

/// Mean pelvis-aligned joint error, pelvis included, in scene units.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], pelvis_index: usize) -> Result<f64> {
    let errors = aligned_joint_errors(pred, gt, pelvis_index)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Count of ground-truth points inside a confidence ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Coverage {
    pub inside: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.inside as f64 / self.total as f64
        }
    }

    fn add(&mut self, other: &Coverage) {
        self.inside += other.inside;
        self.total += other.total;
    }
}

/// Caches ellipsoid radii per degrees-of-freedom value.
#[derive(Debug, Default)]
struct Radii(Vec<(u64, f64)>);

impl Radii {
    fn get(&mut self, nu: f64, level: f64) -> f64 {
        if let Some((_, r)) = self.0.iter().find(|(bits, _)| *bits == nu.to_bits()) {
            return *r;
        }
        let r = confidence_radius2(3, nu, level);
        self.0.push((nu.to_bits(), r));
        r
    }
}

pub fn count_inside<'a>(
    pairs: impl IntoIterator<Item = (&'a MvtDist3, &'a Vector3<f64>)>,
    level: f64,
) -> Result<Coverage> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("coverage level must lie in (0, 1), got {level}")));
    }
    let mut radii = Radii::default();
    let mut cov = Coverage::default();
    for (dist, gt) in pairs {
        let r2 = radii.get(dist.nu(), level);
        cov.total += 1;
        if dist.mahalanobis2(gt) <= r2 {
            cov.inside += 1;
        }
    }
    Ok(cov)
}

/// Fraction of ground-truth points inside the `level` confidence ellipsoid
/// of their estimate.
pub fn coverage(estimates: &[KeypointEstimate], gt: &[Vector3<f64>], level: f64) -> Result<f64> {
    if estimates.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimates for {} ground-truth points",
            estimates.len(),
            gt.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no estimates to score".into()));
    }
    Ok(count_inside(estimates.iter().map(|e| &e.dist).zip(gt), level)?.fraction())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub levels: Vec<f64>,
    /// Drop degenerate estimates from error and coverage.
    pub exclude_degenerate: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            exclude_degenerate: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("at least one coverage level is required".into()));
        }
        for &l in &self.levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidArgument(format!("coverage level must lie in (0, 1), got {l}")));
            }
        }
        Ok(())
    }
}

/// Metrics of one frame. Errors are in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub group: String,
    /// `None` when the pelvis has no usable estimate.
    pub mpjpe_mm: Option<f64>,
    pub dlt_mpjpe_mm: Option<f64>,
    pub joint_errors_mm: Vec<Option<f64>>,
    /// One entry per requested level.
    pub coverage: Vec<Coverage>,
    pub keypoints: usize,
    pub degenerate: usize,
    pub failed: usize,
    pub excluded: usize,
}

pub fn evaluate_frame(
    records: &[EstimateRecord],
    gt: &[Vector3<f64>],
    pelvis_index: usize,
    group: &str,
    opts: &EvalOptions,
) -> Result<FrameMetrics> {
    if records.len() != gt.len() {
        return Err(Error::MismatchedFiles(format!(
            "{} estimates for {} ground-truth keypoints",
            records.len(),
            gt.len()
        )));
    }
    if pelvis_index >= gt.len() {
        return Err(Error::IndexOutOfRange {
            index: pelvis_index,
            len: gt.len(),
        });
    }
    let mut metrics = FrameMetrics {
        group: group.to_string(),
        mpjpe_mm: None,
        dlt_mpjpe_mm: None,
        joint_errors_mm: vec![None; gt.len()],
        coverage: vec![Coverage::default(); opts.levels.len()],
        keypoints: gt.len(),
        degenerate: 0,
        failed: 0,
        excluded: 0,
    };
    let mut usable = Vec::with_capacity(gt.len());
    for rec in records {
        match rec.fitted() {
            None => {
                metrics.failed += 1;
                usable.push(None);
            }
            Some(fit) => {
                let degenerate = fit.is_degenerate();
                if degenerate {
                    metrics.degenerate += 1;
                }
                if degenerate && opts.exclude_degenerate {
                    metrics.excluded += 1;
                    usable.push(None);
                } else {
                    usable.push(Some(fit));
                }
            }
        }
    }

    let dists: Vec<(MvtDist3, &Vector3<f64>)> = usable
        .iter()
        .zip(gt)
        .filter_map(|(fit, g)| fit.map(|f| f.distribution().map(|d| (d, g))))
        .collect::<Result<_>>()?;
    for (cov, &level) in metrics.coverage.iter_mut().zip(&opts.levels) {
        *cov = count_inside(dists.iter().map(|(d, g)| (d, *g)), level)?;
    }

    if let Some(pelvis) = usable[pelvis_index] {
        let (p0, d0, g0) = (pelvis.mu(), Vector3::from(pelvis.triangulation.point), gt[pelvis_index]);
        let (mut sum, mut dlt_sum, mut n) = (0.0, 0.0, 0usize);
        for (k, fit) in usable.iter().enumerate() {
            if let Some(fit) = fit {
                let rel_gt = gt[k] - g0;
                let err = ((fit.mu() - p0) - rel_gt).norm() * MM_PER_UNIT;
                let dlt = ((Vector3::from(fit.triangulation.point) - d0) - rel_gt).norm() * MM_PER_UNIT;
                metrics.joint_errors_mm[k] = Some(err);
                sum += err;
                dlt_sum += dlt;
                n += 1;
            }
        }
        metrics.mpjpe_mm = Some(sum / n as f64);
        metrics.dlt_mpjpe_mm = Some(dlt_sum / n as f64);
    }
    Ok(metrics)
}

/// Running sums behind a [`MetricsReport`] row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub frames: usize,
    pub scored_frames: usize,
    pub mpjpe_sum: f64,
    pub mpjpe_sq_sum: f64,
    pub dlt_sum: f64,
    pub joint_sum: Vec<f64>,
    pub joint_count: Vec<usize>,
    pub coverage: Vec<Coverage>,
    pub keypoints: usize,
    pub degenerate: usize,
    pub failed: usize,
    pub excluded: usize,
}

impl Aggregate {
    fn empty(keypoints: usize, levels: usize) -> Self {
        Self {
            joint_sum: vec![0.0; keypoints],
            joint_count: vec![0; keypoints],
            coverage: vec![Coverage::default(); levels],
            ..Self::default()
        }
    }

    fn add_frame(&mut self, m: &FrameMetrics) {
        self.frames += 1;
        if let (Some(e), Some(d)) = (m.mpjpe_mm, m.dlt_mpjpe_mm) {
            self.scored_frames += 1;
            self.mpjpe_sum += e;
            self.mpjpe_sq_sum += e * e;
            self.dlt_sum += d;
        }
        for (k, e) in m.joint_errors_mm.iter().enumerate() {
            if let Some(e) = e {
                self.joint_sum[k] += e;
                self.joint_count[k] += 1;
            }
        }
        for (c, o) in self.coverage.iter_mut().zip(&m.coverage) {
            c.add(o);
        }
        self.keypoints += m.keypoints;
        self.degenerate += m.degenerate;
        self.failed += m.failed;
        self.excluded += m.excluded;
    }

    fn merge(&mut self, o: &Aggregate) {
        self.frames += o.frames;
        self.scored_frames += o.scored_frames;
        self.mpjpe_sum += o.mpjpe_sum;
        self.mpjpe_sq_sum += o.mpjpe_sq_sum;
        self.dlt_sum += o.dlt_sum;
        for (a, b) in self.joint_sum.iter_mut().zip(&o.joint_sum) {
            *a += b;
        }
        for (a, b) in self.joint_count.iter_mut().zip(&o.joint_count) {
            *a += b;
        }
        for (a, b) in self.coverage.iter_mut().zip(&o.coverage) {
            a.add(b);
        }
        self.keypoints += o.keypoints;
        self.degenerate += o.degenerate;
        self.failed += o.failed;
        self.excluded += o.excluded;
    }

    /// Frame-weighted mean MPJPE, millimeters.
    pub fn mpjpe_mm(&self) -> f64 {
        self.mpjpe_sum / self.scored_frames as f64
    }

    pub fn dlt_mpjpe_mm(&self) -> f64 {
        self.dlt_sum / self.scored_frames as f64
    }

    /// Standard error of the frame-weighted mean.
    pub fn mpjpe_standard_error_mm(&self) -> f64 {
        let n = self.scored_frames as f64;
        if self.scored_frames < 2 {
            return f64::NAN;
        }
        let mean = self.mpjpe_sum / n;
        let var = ((self.mpjpe_sq_sum - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }

    pub fn per_keypoint_mpjpe_mm(&self) -> Vec<f64> {
        self.joint_sum
            .iter()
            .zip(&self.joint_count)
            .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
            .collect()
    }

    pub fn degenerate_fraction(&self) -> f64 {
        self.degenerate as f64 / self.keypoints.max(1) as f64
    }

    pub fn failed_fraction(&self) -> f64 {
        self.failed as f64 / self.keypoints.max(1) as f64
    }
}

/// Aggregated metrics over all frames and per group.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub levels: Vec<f64>,
    pub overall: Aggregate,
    pub groups: BTreeMap<String, Aggregate>,
}

impl MetricsReport {
    pub fn summarize(frames: &[FrameMetrics], levels: &[f64]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot summarize zero frames".into()))?;
        let keypoints = first.joint_errors_mm.len();
        let mut overall = Aggregate::empty(keypoints, levels.len());
        let mut groups: BTreeMap<String, Aggregate> = BTreeMap::new();
        for m in frames {
            if m.joint_errors_mm.len() != keypoints || m.coverage.len() != levels.len() {
                return Err(Error::InvalidArgument("frames disagree on keypoints or levels".into()));
            }
            overall.add_frame(m);
            groups
                .entry(m.group.clone())
                .or_insert_with(|| Aggregate::empty(keypoints, levels.len()))
                .add_frame(m);
        }
        Ok(Self {
            levels: levels.to_vec(),
            overall,
            groups,
        })
    }

    /// Combines two reports as if their frames had been summarized together.
    pub fn merge(&self, other: &MetricsReport) -> Result<Self> {
        if self.levels != other.levels || self.overall.joint_sum.len() != other.overall.joint_sum.len() {
            return Err(Error::InvalidArgument("reports disagree on keypoints or levels".into()));
        }
        let mut out = self.clone();
        out.overall.merge(&other.overall);
        for (name, agg) in &other.groups {
            match out.groups.get_mut(name) {
                Some(g) => g.merge(agg),
                None => {
                    out.groups.insert(name.clone(), agg.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn n_frames(&self) -> usize {
        self.overall.frames
    }

    pub fn mpjpe_mm(&self) -> f64 {
        self.overall.mpjpe_mm()
    }

    /// Mean of the per-group means.
    pub fn group_weighted_mpjpe_mm(&self) -> f64 {
        let means: Vec<f64> = self
            .groups
            .values()
            .filter(|g| g.scored_frames > 0)
            .map(Aggregate::mpjpe_mm)
            .collect();
        means.iter().sum::<f64>() / means.len() as f64
    }

    pub fn per_keypoint_mpjpe(&self) -> Vec<f64> {
        self.overall.per_keypoint_mpjpe_mm()
    }

    pub fn coverage_at(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|&l| l == level)
            .map(|i| self.overall.coverage[i].fraction())
    }

    pub fn degenerate_fraction(&self) -> f64 {
        self.overall.degenerate_fraction()
    }

    /// Long-format CSV with header `group,metric,value,n`.
    pub fn to_csv(&self, joint_names: &[String]) -> String {
        let mut out = String::from("group,metric,value,n\n");
        let mut row = |group: &str, metric: &str, value: f64, n: usize| {
            let _ = writeln!(out, "{group},{metric},{},{n}", format_sig6(value));
        };
        let rows = std::iter::once((AVG, &self.overall)).chain(self.groups.iter().map(|(k, v)| (k.as_str(), v)));
        for (group, agg) in rows {
            row(group, "mpjpe_mm", agg.mpjpe_mm(), agg.scored_frames);
            if group == AVG {
                row(group, "mpjpe_mm_group_weighted", self.group_weighted_mpjpe_mm(), self.groups.len());
            }
            row(group, "mpjpe_se_mm", agg.mpjpe_standard_error_mm(), agg.scored_frames);
            row(group, "dlt_mpjpe_mm", agg.dlt_mpjpe_mm(), agg.scored_frames);
            for (level, cov) in self.levels.iter().zip(&agg.coverage) {
                row(group, &format!("coverage@{level}"), cov.fraction(), cov.total);
            }
            row(group, "degenerate_fraction", agg.degenerate_fraction(), agg.keypoints);
            row(group, "failed_fraction", agg.failed_fraction(), agg.keypoints);
            row(group, "excluded", agg.excluded as f64, agg.keypoints);
        }
        for (k, (mean, n)) in self.per_keypoint_mpjpe().iter().zip(&self.overall.joint_count).enumerate() {
            let name = joint_names.get(k).map_or_else(|| k.to_string(), Clone::clone);
            row(AVG, &format!("joint_mpjpe_mm:{name}"), *mean, *n);
        }
        out
    }
}

/// Fixed-point decimal with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let decimals = |v: f64| (5 - v.abs().log10().floor() as i32).max(0) as usize;
    let d = decimals(x);
    let s = format!("{x:.d$}");
    // Rounding can carry into a new leading digit, e.g. 9.999996 -> 10.00000.
    let rounded: f64 = s.parse().unwrap_or(x);
    let d2 = decimals(rounded);
    if d2 < d {
        format!("{x:.d2$}")
    } else {
        s
    }
}

/// Scores every frame of an estimates file against its scene.
pub fn evaluate(scene: &Scene, estimates: &EstimatesFile, opts: &EvalOptions) -> Result<(Vec<FrameMetrics>, MetricsReport)> {
    opts.validate()?;
    if estimates.frames.len() != scene.frames.len() {
        return Err(Error::MismatchedFiles(format!(
            "estimates cover {} frames, scene has {}",
            estimates.frames.len(),
            scene.frames.len()
        )));
    }
    if estimates.keypoints != scene.keypoints() {
        return Err(Error::MismatchedFiles(format!(
            "estimates have {} keypoints, scene has {}",
            estimates.keypoints,
            scene.keypoints()
        )));
    }
    let frames: Vec<FrameMetrics> = scene
        .frames
        .par_iter()
        .zip(&estimates.frames)
        .map(|(frame, records)| {
            evaluate_frame(records, &frame.gt_keypoints, scene.skeleton.pelvis_index, &frame.action, opts)
        })
        .collect::<Result<_>>()?;
    let report = MetricsReport::summarize(&frames, &opts.levels)?;
    Ok((frames, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::ScaleChol;
    use crate::io::{FittedRecord, TriangulationRecord};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    #[test]
    fn mpjpe_examples() {
        let gt = vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.0, 1.0, 0.0)];
        assert_eq!(mpjpe(&gt, &gt, 0).unwrap(), 0.0);
        let pred = vec![gt[0], gt[1] + Vector3::new(3.0, 4.0, 0.0)];
        assert_relative_eq!(mpjpe(&pred, &gt, 0).unwrap(), 2.5, epsilon = 1e-12);
        let shifted: Vec<_> = pred.iter().map(|p| p + Vector3::new(-7.0, 0.5, 2.0)).collect();
        assert_relative_eq!(mpjpe(&shifted, &gt, 0).unwrap(), 2.5, epsilon = 1e-12);
        assert!(matches!(mpjpe(&gt, &gt, 2), Err(Error::IndexOutOfRange { index: 2, len: 2 })));
    }

    fn dist(mu: Vector3<f64>, s: f64) -> MvtDist3 {
        MvtDist3::new(mu, Matrix3::identity() * s * s, 5.0).unwrap()
    }

    #[test]
    fn coverage_edge_cases() {
        let gts: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 1.0)).collect();
        let centered: Vec<_> = gts.iter().map(|g| dist(*g, 1e-6)).collect();
        for level in [0.01, 0.5, 0.99] {
            assert_eq!(count_inside(centered.iter().zip(&gts), level).unwrap().fraction(), 1.0);
        }
        let off: Vec<_> = gts.iter().map(|g| dist(g + Vector3::new(0.01, 0.0, 0.0), 2e-6)).collect();
        assert_eq!(count_inside(off.iter().zip(&gts), 0.95).unwrap().fraction(), 0.0);
    }

    #[test]
    fn coverage_is_monotone_in_level() {
        let gts: Vec<_> = (0..200).map(|i| Vector3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.0)).collect();
        let ds: Vec<_> = gts.iter().map(|_| dist(Vector3::zeros(), 0.4)).collect();
        let mut last = 0.0;
        for level in [0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99] {
            let c = count_inside(ds.iter().zip(&gts), level).unwrap().fraction();
            assert!(c >= last);
            last = c;
        }
    }

    fn record(mu: Vector3<f64>, degenerate: bool) -> EstimateRecord {
        let chol = ScaleChol::isotropic(0.01);
        let s = chol.materialize_sigma();
        EstimateRecord::Fitted(FittedRecord {
            mu: mu.into(),
            l_raw: chol.to_array(),
            sigma: std::array::from_fn(|i| s[(i / 3, i % 3)]),
            nu: 5.0,
            final_loss: 0.0,
            iterations: 1,
            converged: true,
            triangulation: TriangulationRecord {
                point: mu.into(),
                smallest_singular_value: 1e-3,
                condition_ratio: if degenerate { 1.0 } else { 100.0 },
                degenerate,
            },
        })
    }

    fn frame(group: &str, offset_mm: f64) -> FrameMetrics {
        let gt = [Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)];
        let recs = [record(gt[0], false), record(gt[1] + Vector3::new(offset_mm * 2e-3, 0.0, 0.0), false)];
        evaluate_frame(&recs, &gt, 0, group, &EvalOptions::default()).unwrap()
    }

    #[test]
    fn summary_examples() {
        let one = MetricsReport::summarize(&[frame("A", 10.0)], &DEFAULT_LEVELS).unwrap();
        assert_relative_eq!(one.mpjpe_mm(), 10.0, epsilon = 1e-9);

        let two = MetricsReport::summarize(&[frame("A", 10.0), frame("B", 20.0)], &DEFAULT_LEVELS).unwrap();
        assert_relative_eq!(two.mpjpe_mm(), 15.0, epsilon = 1e-9);
        assert_relative_eq!(two.groups["B"].mpjpe_mm(), 20.0, epsilon = 1e-9);

        // Unequal groups separate the two averages.
        let uneven = [frame("A", 10.0), frame("A", 10.0), frame("A", 10.0), frame("B", 30.0)];
        let r = MetricsReport::summarize(&uneven, &DEFAULT_LEVELS).unwrap();
        assert_relative_eq!(r.mpjpe_mm(), 15.0, epsilon = 1e-9);
        assert_relative_eq!(r.group_weighted_mpjpe_mm(), 20.0, epsilon = 1e-9);
        assert!(MetricsReport::summarize(&[], &DEFAULT_LEVELS).is_err());
    }

    #[test]
    fn merge_matches_joint_summary() {
        let a: Vec<_> = (0..7).map(|i| frame(["A", "B"][i % 2], 3.0 + i as f64)).collect();
        let b: Vec<_> = (0..5).map(|i| frame(["B", "C"][i % 2], 1.0 + 2.0 * i as f64)).collect();
        let whole = MetricsReport::summarize(&[a.clone(), b.clone()].concat(), &DEFAULT_LEVELS).unwrap();
        let merged = MetricsReport::summarize(&a, &DEFAULT_LEVELS)
            .unwrap()
            .merge(&MetricsReport::summarize(&b, &DEFAULT_LEVELS).unwrap())
            .unwrap();
        assert!((whole.mpjpe_mm() - merged.mpjpe_mm()).abs() < 1e-12);
        assert!((whole.group_weighted_mpjpe_mm() - merged.group_weighted_mpjpe_mm()).abs() < 1e-12);
        assert_eq!(whole.overall.coverage, merged.overall.coverage);
        for (g, agg) in &whole.groups {
            assert!((agg.mpjpe_mm() - merged.groups[g].mpjpe_mm()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_estimates_can_be_excluded() {
        let gt = [Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 1.0, 1.0)];
        let recs = [
            record(gt[0], false),
            record(gt[1] + Vector3::new(0.5, 0.0, 0.0), true),
            EstimateRecord::Failed { error: "x".into() },
        ];
        let kept = evaluate_frame(&recs, &gt, 0, "A", &EvalOptions::default()).unwrap();
        assert_eq!((kept.degenerate, kept.failed, kept.excluded), (1, 1, 0));
        assert_relative_eq!(kept.mpjpe_mm.unwrap(), 250.0, epsilon = 1e-9);
        let opts = EvalOptions {
            exclude_degenerate: true,
            ..EvalOptions::default()
        };
        let dropped = evaluate_frame(&recs, &gt, 0, "A", &opts).unwrap();
        assert_eq!((dropped.degenerate, dropped.excluded), (1, 1));
        assert_eq!(dropped.mpjpe_mm, Some(0.0));
        assert_eq!(dropped.coverage[0].total, 1);
    }

    #[test]
    fn csv_layout_and_formatting() {
        let r = MetricsReport::summarize(&[frame("A", 10.0)], &DEFAULT_LEVELS).unwrap();
        let csv = r.to_csv(&["Pelvis".into(), "Head".into()]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("group,metric,value,n"));
        assert_eq!(lines.next(), Some("Avg,mpjpe_mm,10.0000,1"));
        assert!(csv.contains("Avg,coverage@0.95,"));
        assert!(csv.contains("Avg,joint_mpjpe_mm:Head,20.0000,1"));

        assert_eq!(format_sig6(21.6), "21.6000");
        assert_eq!(format_sig6(0.95), "0.950000");
        assert_eq!(format_sig6(9.9999996), "10.0000");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(0.0), "0.00000");
    }
}
