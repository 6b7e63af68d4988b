//! Two-concentric-circles laboratory.
//!
//! Class 0 lies on the circle of radius `r₁`, class 1 on radius `r₂`. A
//! 2-6-1 rectifier network with a sigmoid output separates them with a
//! polygonal decision boundary, whose exact distance to the data is the
//! robustness score. The best a regular `n`-gon boundary can do has a closed
//! form, which bounds what training can reach.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::ControlFlow;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{fgsm, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{accuracy, Activation, LossSpec, Model, OptimizerKind};
use crate::training::{train_observed, EpochRecord, Strategy, TrainConfig, TrainReport};

pub const R1: f64 = 0.3;
pub const R2: f64 = 0.7;

/// Points exactly on two concentric circles.
#[derive(Clone, Debug, PartialEq)]
pub struct TccDataset {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub r1: f64,
    pub r2: f64,
    pub seed: u64,
}

impl TccDataset {
    pub fn to_dataset(&self, split: &str) -> Dataset {
        Dataset::new(self.points.clone(), self.labels.clone(), 2, "tcc", split).expect("labels are 0/1")
    }
}

/// Train and test sets with uniform angles; labels alternate so both
/// classes are equally represented.
pub fn gen_two_circles(n_train: usize, n_test: usize, r1: f64, r2: f64, seed: u64) -> Result<(TccDataset, TccDataset)> {
    if !(0.0 < r1 && r1 < r2) {
        return Err(Error::InvalidArgument(format!("radii must satisfy 0 < r1 < r2, got {r1}, {r2}")));
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("both splits need at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |n: usize| {
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut points = Array2::zeros((n, 2));
        for (i, &l) in labels.iter().enumerate() {
            let angle = rng.random_range(0.0..2.0 * PI);
            let r = if l == 0 { r1 } else { r2 };
            points[[i, 0]] = r * angle.cos();
            points[[i, 1]] = r * angle.sin();
        }
        TccDataset { points, labels, r1, r2, seed }
    };
    let train = make(n_train);
    let test = make(n_test);
    Ok((train, test))
}

/// A planar classifier read through its decision function: positive
/// scores mean the outer class.
pub trait DecisionSurface {
    fn scores(&self, points: &Array2<f64>) -> Result<Vec<f64>>;
}

impl DecisionSurface for Model {
    fn scores(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidArgument("boundary distance needs a single-output model".into()));
        }
        Ok(Model::scores(self, points)?.column(0).to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub radius: f64,
}

impl DecisionSurface for Circle {
    fn scores(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(points.rows().into_iter().map(|p| p[0].hypot(p[1]) - self.radius).collect())
    }
}

/// Regular polygon centred at the origin with one vertex at `rotation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularPolygon {
    pub sides: usize,
    pub circumradius: f64,
    pub rotation: f64,
}

impl RegularPolygon {
    /// The polygon whose apothem gap to `r₁` equals its vertex gap to `r₂`.
    pub fn optimal(sides: usize, r1: f64, r2: f64) -> Self {
        Self {
            sides,
            circumradius: (r1 + r2) / (1.0 + (PI / sides as f64).cos()),
            rotation: 0.0,
        }
    }

    fn radius_at(&self, angle: f64) -> f64 {
        let sector = 2.0 * PI / self.sides as f64;
        let local = (angle - self.rotation).rem_euclid(sector) - sector / 2.0;
        self.circumradius * (PI / self.sides as f64).cos() / local.cos()
    }
}

impl DecisionSurface for RegularPolygon {
    fn scores(&self, points: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(points
            .rows()
            .into_iter()
            .map(|p| p[0].hypot(p[1]) - self.radius_at(p[1].atan2(p[0])))
            .collect())
    }
}

/// `r₂ − R` for the optimal regular `n`-gon, `R = (r₁ + r₂)/(1 + cos(π/n))`.
pub fn polygon_bound_radii(sides: usize, r1: f64, r2: f64) -> Result<f64> {
    if sides < 3 {
        return Err(Error::InvalidArgument(format!("a polygon needs at least 3 sides, got {sides}")));
    }
    Ok(r2 - RegularPolygon::optimal(sides, r1, r2).circumradius)
}

pub fn polygon_bound(sides: usize) -> Result<f64> {
    polygon_bound_radii(sides, R1, R2)
}

/// Mesh controls for locating the decision boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryMesh {
    pub rays: usize,
    pub tolerance: f64,
    /// Largest tolerated fraction of rays without a crossing.
    pub max_degenerate: f64,
}

impl Default for BoundaryMesh {
    fn default() -> Self {
        Self {
            rays: 4096,
            tolerance: 1e-8,
            max_degenerate: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    /// Distance of every point to the located boundary.
    pub distances: Vec<f64>,
    /// Polar angle of every point.
    pub angles: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Boundary polyline as `(angle, radius)` for the non-degenerate rays.
    pub boundary: Vec<(f64, f64)>,
    pub degenerate_rays: usize,
}

impl RobustnessReport {
    /// `angle,distance`, sorted by angle.
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "angle,distance")?;
        let mut rows: Vec<(f64, f64)> = self.angles.iter().copied().zip(self.distances.iter().copied()).collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (a, d) in rows {
            writeln!(out, "{a},{d}")?;
        }
        Ok(())
    }

    /// `angle,radius` of the boundary polyline.
    pub fn write_boundary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "angle,radius")?;
        for (a, r) in &self.boundary {
            writeln!(out, "{a},{r}")?;
        }
        Ok(())
    }
}

/// Locates the boundary by bisection along `mesh.rays` rays between the
/// circles `r₁` and `r₂`, then measures each point's distance to the
/// closed polyline through the crossings.
pub fn boundary_distance_with<S: DecisionSurface + ?Sized>(
    surface: &S,
    points: &Array2<f64>,
    r1: f64,
    r2: f64,
    mesh: BoundaryMesh,
) -> Result<RobustnessReport> {
    if points.ncols() != 2 || points.nrows() == 0 {
        return Err(Error::InvalidArgument("boundary distance needs a nonempty (n, 2) point set".into()));
    }
    let m = mesh.rays;
    let dirs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / m as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let at = |radii: &[f64]| -> Result<Vec<f64>> {
        let pts = Array2::from_shape_fn((m, 2), |(k, j)| radii[k] * if j == 0 { dirs[k].0 } else { dirs[k].1 });
        surface.scores(&pts)
    };
    let inner = at(&vec![r1; m])?;
    let outer = at(&vec![r2; m])?;
    let valid: Vec<bool> = inner.iter().zip(&outer).map(|(&a, &b)| a <= 0.0 && b > 0.0).collect();
    let degenerate = valid.iter().filter(|&&v| !v).count();
    if degenerate as f64 > mesh.max_degenerate * m as f64 || degenerate == m {
        return Err(Error::DegenerateBoundary { degenerate, total: m });
    }
    let mut lo = vec![r1; m];
    let mut hi = vec![r2; m];
    let iterations = ((r2 - r1) / mesh.tolerance).log2().ceil().max(1.0) as usize;
    for _ in 0..iterations {
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let s = at(&mid)?;
        for k in 0..m {
            if s[k] > 0.0 {
                hi[k] = mid[k];
            } else {
                lo[k] = mid[k];
            }
        }
    }
    let boundary: Vec<(f64, f64)> = (0..m)
        .filter(|&k| valid[k])
        .map(|k| (2.0 * PI * k as f64 / m as f64, 0.5 * (lo[k] + hi[k])))
        .collect();
    let vertices: Vec<(f64, f64)> = boundary.iter().map(|&(a, r)| (r * a.cos(), r * a.sin())).collect();

    let mut distances = Vec::with_capacity(points.nrows());
    let mut angles = Vec::with_capacity(points.nrows());
    for p in points.rows() {
        let (px, py) = (p[0], p[1]);
        let mut best = f64::INFINITY;
        for i in 0..vertices.len() {
            let a = vertices[i];
            let b = vertices[(i + 1) % vertices.len()];
            best = best.min(segment_distance((px, py), a, b));
        }
        distances.push(best);
        angles.push(py.atan2(px).rem_euclid(2.0 * PI));
    }
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let max = distances.iter().copied().fold(0.0, f64::max);
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    Ok(RobustnessReport {
        distances,
        angles,
        min,
        mean,
        max,
        boundary,
        degenerate_rays: degenerate,
    })
}

pub fn boundary_distance<S: DecisionSurface + ?Sized>(surface: &S, points: &Array2<f64>) -> Result<RobustnessReport> {
    boundary_distance_with(surface, points, R1, R2, BoundaryMesh::default())
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TccStrategy {
    /// Natural training, stopped once training accuracy reaches 100%.
    Nt,
    /// Natural training stopped when the minimum boundary distance
    /// plateaus.
    NtAa,
    /// Restricted AT with an ℓ∞ FGSM budget, stopped once every training
    /// point and its budget AE are classified correctly.
    At { budget: f64 },
    Bat,
}

impl TccStrategy {
    pub fn name(&self) -> String {
        match self {
            TccStrategy::Nt => "nt".into(),
            TccStrategy::NtAa => "nt-aa".into(),
            TccStrategy::At { budget } => format!("at-{budget}"),
            TccStrategy::Bat => "bat".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TccConfig {
    pub strategy: TccStrategy,
    pub n_train: usize,
    pub n_test: usize,
    pub r1: f64,
    pub r2: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub rho: f64,
    /// Epochs between boundary measurements for the robustness history.
    pub track_every: usize,
    /// Window and tolerance of the NT-with-AA plateau rule.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// Start the adversarial strategies from the natural-training model
    /// at its first epoch of 100% training accuracy.
    pub warm_start: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TccConfig {
    fn default() -> Self {
        Self {
            strategy: TccStrategy::Bat,
            n_train: 5000,
            n_test: 1000,
            r1: R1,
            r2: R2,
            hidden: 6,
            epochs: 1000,
            learning_rate: 0.2,
            optimizer: OptimizerKind::Sgd,
            batch_size: 128,
            rho: 0.9,
            track_every: 10,
            plateau_window: 200,
            plateau_tolerance: 1e-3,
            warm_start: true,
            seed: 0,
        }
    }
}

/// One row of the robustness history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessPoint {
    pub epoch: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TccOutcome {
    pub robustness: RobustnessReport,
    pub train: TrainReport,
    pub history: Vec<RobustnessPoint>,
}

impl TccOutcome {
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,min,mean,max")?;
        for h in &self.history {
            writeln!(out, "{},{},{},{}", h.epoch, h.min, h.mean, h.max)?;
        }
        Ok(())
    }
}

pub fn tcc_model(hidden: usize, seed: u64) -> Result<Model> {
    Model::init(&[2, hidden, 1], Activation::Relu, Activation::Sigmoid, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Trains the 2-`hidden`-1 network with `config.strategy` and measures its
/// boundary distance on the training points.
pub fn run_tcc(config: &TccConfig) -> Result<TccOutcome> {
    run_tcc_experiment(config.strategy, config)
}

/// [`run_tcc`] with the strategy given separately.
pub fn run_tcc_experiment(strategy: TccStrategy, config: &TccConfig) -> Result<TccOutcome> {
    if config.track_every == 0 {
        return Err(Error::InvalidArgument("track_every must be positive".into()));
    }
    let (train, _) = gen_two_circles(config.n_train, config.n_test, config.r1, config.r2, config.seed)?;
    let data = train.to_dataset("train");
    let (kind, attack) = match strategy {
        TccStrategy::Nt | TccStrategy::NtAa => (Strategy::Nt, AttackSpec::deepfool()),
        TccStrategy::At { budget } => (Strategy::RestrictedAt, AttackSpec::fgsm(budget).with_range(None)),
        TccStrategy::Bat => (Strategy::Bat, AttackSpec::deepfool()),
    };
    let mut tc = TrainConfig::new(kind, config.epochs, config.learning_rate, LossSpec::squared_error(), config.seed);
    tc.attack = attack;
    tc.rho = config.rho;
    tc.batch_size = config.batch_size;
    tc.optimizer = config.optimizer;
    let mut model = tcc_model(config.hidden, config.seed)?;
    if config.warm_start && matches!(strategy, TccStrategy::At { .. } | TccStrategy::Bat) {
        let mut nt = tc.clone();
        nt.strategy = Strategy::Nt;
        let warm = train_observed(&nt, model, &data, &mut |r, _| {
            Ok(if r.clean_acc == 1.0 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        })?;
        model = warm.model;
    }

    let mut history = Vec::new();
    let mut observer = |r: &EpochRecord, m: &Model| -> Result<ControlFlow<()>> {
        if strategy == TccStrategy::Nt && r.clean_acc == 1.0 {
            return Ok(ControlFlow::Break(()));
        }
        if let (TccStrategy::At { budget }, 1.0) = (strategy, r.clean_acc) {
            let aes = fgsm(m, &data.images, &data.labels, &LossSpec::squared_error(), budget, None)?;
            if accuracy(m, &aes.apply(&data.images)?, &data.labels)? == 1.0 {
                return Ok(ControlFlow::Break(()));
            }
        }
        if r.epoch % config.track_every != 0 {
            return Ok(ControlFlow::Continue(()));
        }
        // Boundaries that do not yet separate the circles score 0.
        let point = match boundary_distance_with(m, &data.images, config.r1, config.r2, BoundaryMesh { rays: 512, ..Default::default() }) {
            Ok(rep) => RobustnessPoint { epoch: r.epoch, min: rep.min, mean: rep.mean, max: rep.max },
            Err(Error::DegenerateBoundary { .. }) => RobustnessPoint { epoch: r.epoch, min: 0.0, mean: 0.0, max: 0.0 },
            Err(e) => return Err(e),
        };
        history.push(point);
        if strategy == TccStrategy::NtAa {
            let span = config.plateau_window.div_ceil(config.track_every).max(2);
            if history.len() >= span && point.min > 0.0 {
                let recent = &history[history.len() - span..];
                let lo = recent.iter().map(|h| h.min).fold(f64::INFINITY, f64::min);
                let hi = recent.iter().map(|h| h.min).fold(f64::NEG_INFINITY, f64::max);
                if hi - lo < config.plateau_tolerance {
                    return Ok(ControlFlow::Break(()));
                }
            }
        }
        Ok(ControlFlow::Continue(()))
    };
    let report = train_observed(&tc, model, &data, &mut observer)?;
    let robustness = boundary_distance_with(
        &report.model,
        &data.images,
        config.r1,
        config.r2,
        BoundaryMesh::default(),
    )?;
    Ok(TccOutcome { robustness, train: report, history })
}
