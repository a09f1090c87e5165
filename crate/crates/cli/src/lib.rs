//! Command-line driver for the simulate, fit, eval, sweep and gradcheck
//! workflows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tview_core::estimator::{fit_sequence, ScaleSharing};
use tview_core::evaluation::{self, format_sig6, EvalOptions, MetricsReport, AVG};
use tview_core::io::{self, EstimatesFile};
use tview_core::simulator::{self, Action, NoiseSpec, RigKind, RigSpec, Scene};
use tview_core::{gradcheck, AffineApprox, FitConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TVIEW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tview", version, about = "Multi-view 3D keypoint estimation with t-distributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera scene.
    Simulate(SimulateArgs),
    /// Fit a t-distribution to every keypoint of a scene.
    Fit(FitArgs),
    /// Score estimates against scene ground truth.
    Eval(EvalArgs),
    /// Run simulate, fit and eval over a grid of rigs and noise levels.
    Sweep(SweepArgs),
    /// Compare the analytic loss gradient with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RigArg {
    #[value(alias = "four_ring")]
    FourRing,
    #[value(alias = "two_same_side")]
    TwoSameSide,
    #[value(alias = "two_antipodal")]
    TwoAntipodal,
}

impl From<RigArg> for RigKind {
    fn from(r: RigArg) -> Self {
        match r {
            RigArg::FourRing => RigKind::FourRing,
            RigArg::TwoSameSide => RigKind::TwoSameSide,
            RigArg::TwoAntipodal => RigKind::TwoAntipodal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApproxArg {
    RangeScaled,
    DepthScaled,
    Linearized,
}

impl From<ApproxArg> for AffineApprox {
    fn from(a: ApproxArg) -> Self {
        match a {
            ApproxArg::RangeScaled => AffineApprox::RangeScaled,
            ApproxArg::DepthScaled => AffineApprox::DepthScaled,
            ApproxArg::Linearized => AffineApprox::Linearized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SharingArg {
    PerKeypoint,
    PerFrame,
}

impl From<SharingArg> for ScaleSharing {
    fn from(s: SharingArg) -> Self {
        match s {
            SharingArg::PerKeypoint => ScaleSharing::PerKeypoint,
            SharingArg::PerFrame => ScaleSharing::PerFrame,
        }
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

fn open_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a finite non-negative number, got {v}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RigOptions {
    /// Distance of each camera from the cube center, scene units.
    #[arg(long, default_value_t = 4.0, value_parser = positive)]
    pub radius: f64,
    /// Camera height above the cube center, scene units.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub height: f64,
    /// Focal length, pixels.
    #[arg(long, default_value_t = 280.0, value_parser = positive)]
    pub focal: f64,
}

impl RigOptions {
    fn spec(&self, kind: RigKind) -> RigSpec {
        RigSpec {
            radius: self.radius,
            height: self.height,
            focal_px: self.focal,
            ..RigSpec::new(kind)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "four-ring")]
    pub rig: RigArg,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// Standard deviation of the Gaussian label noise, pixels.
    #[arg(long, default_value_t = 2.0, value_parser = non_negative)]
    pub noise_px: f64,
    /// Fraction of labels replaced by uniform outliers.
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub outlier_rate: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub rig_options: RigOptions,
}

#[derive(Debug, Clone, Args)]
pub struct FitOptions {
    /// Degrees of freedom of the t-distribution; `inf` gives a Gaussian.
    #[arg(long, default_value_t = 5.0, value_parser = positive)]
    pub nu: f64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iters: u64,
    /// Which keypoint-frames share one scale matrix.
    #[arg(long, value_enum, default_value = "per-keypoint")]
    pub sharing: SharingArg,
    /// Affine approximation used for the image of each distribution.
    #[arg(long, value_enum, default_value = "linearized")]
    pub approx: ApproxArg,
    /// Scene diameter, scene units; sets the initial and minimum scale.
    #[arg(long, default_value_t = tview_core::estimator::DEFAULT_SCENE_DIAMETER, value_parser = positive)]
    pub scene_diameter: f64,
}

impl FitOptions {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            nu: self.nu,
            max_iters: self.max_iters as usize,
            approx: self.approx.into(),
            sharing: self.sharing.into(),
            ..FitConfig::for_scene_diameter(self.scene_diameter)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    pub scene: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Accepted for interface symmetry; fitting draws no random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fit: FitOptions,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub estimates: PathBuf,
    pub scene: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Confidence levels for ellipsoid coverage.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.9,0.95", value_parser = open_unit_interval)]
    pub levels: Vec<f64>,
    /// Leave degenerate estimates out of error and coverage.
    #[arg(long)]
    pub exclude_degenerate: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "four-ring,two-same-side,two-antipodal")]
    pub rigs: Vec<RigArg>,
    /// Label noise levels, pixels.
    #[arg(long, value_delimiter = ',', default_value = "2", value_parser = non_negative)]
    pub noise_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0", value_parser = unit_interval)]
    pub outlier_grid: Vec<f64>,
    /// Frames simulated per cell.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.9,0.95", value_parser = open_unit_interval)]
    pub levels: Vec<f64>,
    #[command(flatten)]
    pub rig_options: RigOptions,
    #[command(flatten)]
    pub fit: FitOptions,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Number of random configurations.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub points: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP, value_parser = positive)]
    pub step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE, value_parser = positive)]
    pub tol: f64,
}

/// Reads the thread cap from the environment and installs the global pool.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the thread pool")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
    }
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let rig = a.rig_options.spec(a.rig.into());
    let noise = NoiseSpec::new(a.noise_px, a.outlier_rate, rig.full_image(), a.seed);
    let scene = simulator::simulate(&rig, &noise, a.frames as usize)?;
    io::write_scene(&scene, &a.output)?;
    println!(
        "wrote {}: {} cameras ({}), {} frames, noise {} px, outlier rate {}",
        a.output.display(),
        scene.cameras.len(),
        rig.kind.name(),
        scene.frames.len(),
        a.noise_px,
        a.outlier_rate
    );
    Ok(())
}

/// Summary statistics of a fitted sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSummary {
    pub estimates: usize,
    pub fitted: usize,
    pub converged: usize,
    /// Fitted records flagged degenerate; failed records are not included.
    pub degenerate: usize,
    pub mean_final_loss: f64,
    /// Mean distance between fitted means and ground truth, scene units.
    pub mean_mu_error: f64,
}

impl FitSummary {
    pub fn new(scene: &Scene, file: &EstimatesFile) -> Self {
        let mut s = FitSummary {
            estimates: 0,
            fitted: 0,
            converged: 0,
            degenerate: 0,
            mean_final_loss: 0.0,
            mean_mu_error: 0.0,
        };
        for (frame, records) in scene.frames.iter().zip(&file.frames) {
            for (gt, record) in frame.gt_keypoints.iter().zip(records) {
                s.estimates += 1;
                let Some(r) = record.fitted() else {
                    continue;
                };
                s.fitted += 1;
                s.converged += usize::from(r.converged);
                s.degenerate += usize::from(r.is_degenerate());
                s.mean_final_loss += r.final_loss;
                s.mean_mu_error += (r.mu() - gt).norm();
            }
        }
        if s.fitted > 0 {
            s.mean_final_loss /= s.fitted as f64;
            s.mean_mu_error /= s.fitted as f64;
        }
        s
    }

    pub fn degenerate_fraction(&self) -> f64 {
        self.degenerate as f64 / self.estimates.max(1) as f64
    }
}

fn fit(a: &FitArgs) -> anyhow::Result<()> {
    let scene = io::read_scene(&a.scene)?;
    let cfg = a.fit.config();
    let results = fit_sequence(&scene.cameras, &scene.label_grids(), &cfg)?;
    let file = EstimatesFile::from_results(scene.keypoints(), Some(cfg), &results);
    io::write_estimates(&file, &a.output)?;
    let s = FitSummary::new(&scene, &file);
    println!(
        "wrote {}: {} frames x {} keypoints, sharing {}",
        a.output.display(),
        file.frames.len(),
        file.keypoints,
        cfg.sharing.name()
    );
    println!(
        "mean final loss {}, converged {}/{} ({:.1}%), mean mu error {:.3e}, degenerate_fraction {:.4}, failed {}",
        format_sig6(s.mean_final_loss),
        s.converged,
        s.estimates,
        100.0 * s.converged as f64 / s.estimates.max(1) as f64,
        s.mean_mu_error,
        s.degenerate_fraction(),
        s.estimates - s.fitted
    );
    if s.estimates > 0 && s.degenerate == s.fitted {
        bail!("every estimate failed or is degenerate\n{}", diagnostics(&file));
    }
    Ok(())
}

const MAX_DIAGNOSTIC_FRAMES: usize = 20;

fn diagnostics(file: &EstimatesFile) -> String {
    let mut out = String::new();
    for (f, records) in file.frames.iter().enumerate().take(MAX_DIAGNOSTIC_FRAMES) {
        let failed: Vec<&str> = records
            .iter()
            .filter_map(|r| match r {
                io::EstimateRecord::Failed { error } => Some(error.as_str()),
                io::EstimateRecord::Fitted(_) => None,
            })
            .collect();
        let _ = write!(
            out,
            "frame {f}: {} failed, {} degenerate",
            failed.len(),
            records.len() - failed.len()
        );
        if let Some(first) = failed.first() {
            let _ = write!(out, "; first error: {first}");
        }
        out.push('\n');
    }
    if file.frames.len() > MAX_DIAGNOSTIC_FRAMES {
        let _ = writeln!(out, "... {} more frames", file.frames.len() - MAX_DIAGNOSTIC_FRAMES);
    }
    out
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let estimates = io::read_estimates(&a.estimates)?;
    let scene = io::read_scene(&a.scene)?;
    let opts = EvalOptions {
        levels: a.levels.clone(),
        exclude_degenerate: a.exclude_degenerate,
    };
    let (_, report) = evaluation::evaluate(&scene, &estimates, &opts)?;
    io::write_atomic(&a.output, report.to_csv(&scene.skeleton.names).as_bytes())?;
    println!("wrote {}: {} frames", a.output.display(), report.n_frames());
    println!(
        "MPJPE {} mm (DLT {} mm), degenerate_fraction {}",
        format_sig6(report.mpjpe_mm()),
        format_sig6(report.overall.dlt_mpjpe_mm()),
        format_sig6(report.degenerate_fraction())
    );
    for &level in &report.levels {
        let c = report.coverage_at(level).unwrap_or(f64::NAN);
        println!("coverage@{level} {}", format_sig6(c));
    }
    Ok(())
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub rig: RigKind,
    pub noise_px: f64,
    pub outlier_rate: f64,
    pub seed: u64,
}

/// Cells in rig-major order. Seeds are successive draws of a stream seeded
/// by `base_seed`, so a cell's data does not depend on the thread schedule.
pub fn sweep_cells(rigs: &[RigKind], noise: &[f64], outliers: &[f64], base_seed: u64) -> Vec<Cell> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut cells = Vec::new();
    for &rig in rigs {
        for &noise_px in noise {
            for &outlier_rate in outliers {
                cells.push(Cell {
                    index: cells.len(),
                    rig,
                    noise_px,
                    outlier_rate,
                    seed: rng.random(),
                });
            }
        }
    }
    cells
}

impl Cell {
    pub fn file_stem(&self) -> String {
        format!(
            "cell_{:03}_{}_n{}_o{}",
            self.index,
            self.rig.name(),
            self.noise_px,
            self.outlier_rate
        )
    }

    /// Simulates, fits and scores this cell.
    pub fn run(&self, a: &SweepArgs) -> anyhow::Result<(Scene, MetricsReport)> {
        let rig = a.rig_options.spec(self.rig);
        let noise = NoiseSpec::new(self.noise_px, self.outlier_rate, rig.full_image(), self.seed);
        let scene = simulator::simulate(&rig, &noise, a.trials as usize)?;
        let cfg = a.fit.config();
        let results = fit_sequence(&scene.cameras, &scene.label_grids(), &cfg)?;
        let file = EstimatesFile::from_results(scene.keypoints(), Some(cfg), &results);
        let opts = EvalOptions {
            levels: a.levels.clone(),
            exclude_degenerate: false,
        };
        let (_, report) = evaluation::evaluate(&scene, &file, &opts)?;
        Ok((scene, report))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header of the combined sweep table.
pub fn combined_header(levels: &[f64]) -> String {
    let mut cols: Vec<String> = ["cell", "rig", "noise_px", "outlier_rate", "seed", "status", "frames"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(Action::ALL.iter().map(|a| a.name().to_string()));
    cols.extend([AVG, "avg_group_weighted", "mpjpe_se_mm", "dlt_mpjpe_mm"].map(String::from));
    cols.extend(levels.iter().map(|l| format!("coverage@{l}")));
    cols.extend(["degenerate_fraction", "error"].map(String::from));
    cols.join(",")
}

fn combined_row(cell: &Cell, outcome: &anyhow::Result<(Scene, MetricsReport)>, levels: &[f64]) -> String {
    let mut fields = vec![
        cell.index.to_string(),
        cell.rig.name().to_string(),
        cell.noise_px.to_string(),
        cell.outlier_rate.to_string(),
        cell.seed.to_string(),
    ];
    match outcome {
        Ok((_, report)) => {
            fields.push("ok".into());
            fields.push(report.n_frames().to_string());
            for action in Action::ALL {
                fields.push(
                    report
                        .groups
                        .get(action.name())
                        .filter(|g| g.scored_frames > 0)
                        .map_or_else(String::new, |g| format_sig6(g.mpjpe_mm())),
                );
            }
            fields.push(format_sig6(report.mpjpe_mm()));
            fields.push(format_sig6(report.group_weighted_mpjpe_mm()));
            fields.push(format_sig6(report.overall.mpjpe_standard_error_mm()));
            fields.push(format_sig6(report.overall.dlt_mpjpe_mm()));
            for &l in levels {
                fields.push(format_sig6(report.coverage_at(l).unwrap_or(f64::NAN)));
            }
            fields.push(format_sig6(report.degenerate_fraction()));
            fields.push(String::new());
        }
        Err(e) => {
            fields.push("failed".into());
            fields.push("0".into());
            fields.extend(std::iter::repeat_n(String::new(), Action::ALL.len() + 4 + levels.len() + 1));
            fields.push(csv_field(&format!("{e:#}")));
        }
    }
    fields.join(",")
}

fn prefix_long_rows(out: &mut String, cell: &Cell, csv: &str) {
    for line in csv.lines().skip(1) {
        let _ = writeln!(
            out,
            "{},{},{},{},{line}",
            cell.index,
            cell.rig.name(),
            cell.noise_px,
            cell.outlier_rate
        );
    }
}

fn sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let opts = EvalOptions {
        levels: a.levels.clone(),
        exclude_degenerate: false,
    };
    opts.validate()?;
    let rigs: Vec<RigKind> = a.rigs.iter().map(|&r| r.into()).collect();
    let cells = sweep_cells(&rigs, &a.noise_grid, &a.outlier_grid, a.seed);
    std::fs::create_dir_all(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;

    let outcomes: Vec<anyhow::Result<(Scene, MetricsReport)>> = cells.par_iter().map(|c| c.run(a)).collect();

    let mut combined = combined_header(&a.levels);
    combined.push('\n');
    let mut long = String::from("cell,rig,noise_px,outlier_rate,group,metric,value,n\n");
    let mut failures = 0;
    for (cell, outcome) in cells.iter().zip(&outcomes) {
        combined.push_str(&combined_row(cell, outcome, &a.levels));
        combined.push('\n');
        match outcome {
            Ok((scene, report)) => {
                let csv = report.to_csv(&scene.skeleton.names);
                write_file(&a.output.join(format!("{}.csv", cell.file_stem())), &csv)?;
                prefix_long_rows(&mut long, cell, &csv);
                println!(
                    "cell {} {} noise {} outliers {}: MPJPE {} mm (SE {}), degenerate_fraction {}",
                    cell.index,
                    cell.rig.name(),
                    cell.noise_px,
                    cell.outlier_rate,
                    format_sig6(report.mpjpe_mm()),
                    format_sig6(report.overall.mpjpe_standard_error_mm()),
                    format_sig6(report.degenerate_fraction())
                );
            }
            Err(e) => {
                failures += 1;
                eprintln!("cell {} failed: {e:#}", cell.index);
            }
        }
    }
    write_file(&a.output.join("combined.csv"), &combined)?;
    write_file(&a.output.join("long.csv"), &long)?;
    println!("wrote {} cells to {}", cells.len(), a.output.display());
    if failures == cells.len() {
        bail!("every sweep cell failed");
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> anyhow::Result<()> {
    let s = gradcheck::run(a.points as usize, a.seed, a.step)?;
    let pass = s.max_relative_error < a.tol;
    println!(
        "gradcheck: {} configurations, {} coordinates, max relative error {:.3e} (tolerance {:e}, worst at configuration {} coordinate {}): {}",
        s.points,
        s.coordinates,
        s.max_relative_error,
        a.tol,
        s.worst.0,
        s.worst.1,
        if pass { "PASS" } else { "FAIL" }
    );
    if !pass {
        bail!("analytic gradient disagrees with finite differences");
    }
    Ok(())
}
