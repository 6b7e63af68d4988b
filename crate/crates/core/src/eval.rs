//! Adversarial accuracy curves `AA(ε)`, their interval average avg-AA(Θ),
//! mean perturbation norms and black-box transfer evaluation.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{cut, generate, AttackKind, AttackSpec, PerturbationBatch};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LossSpec, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMode {
    /// One unconstrained attack run; each grid point cuts the same `δ`.
    CutL2,
    /// A fresh budgeted attack per grid point.
    Regenerate,
}

impl CurveMode {
    pub fn for_kind(kind: AttackKind) -> Self {
        if kind.is_constrained() {
            CurveMode::Regenerate
        } else {
            CurveMode::CutL2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurveMode::CutL2 => "cut-l2",
            CurveMode::Regenerate => "regenerate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AaCurve {
    pub grid: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub attack: AttackKind,
    pub mode: CurveMode,
}

impl AaCurve {
    pub fn new(grid: Vec<f64>, accuracy: Vec<f64>, attack: AttackKind, mode: CurveMode) -> Result<Self> {
        check_grid(&grid)?;
        if accuracy.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("{} accuracies for {} grid points", accuracy.len(), grid.len())));
        }
        Ok(Self { grid, accuracy, attack, mode })
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.accuracy[0]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,accuracy,attack,mode")?;
        self.write_rows(&mut out)
    }

    /// Rows without the header, for concatenating several curves.
    pub fn write_rows<W: Write>(&self, mut out: W) -> Result<()> {
        for (e, a) in self.grid.iter().zip(&self.accuracy) {
            writeln!(out, "{e},{a},{},{}", self.attack.name(), self.mode.name())?;
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation grid".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidArgument(format!("grid must start at 0, starts at {}", grid[0])));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !grid.iter().all(|g| g.is_finite()) {
        return Err(Error::InvalidArgument("grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// `points` uniformly spaced values on `[0, 1.2·mean_norm]`.
pub fn default_grid(mean_norm: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(mean_norm > 0.0) || !mean_norm.is_finite() {
        return Err(Error::InvalidArgument(format!("grid of {points} points up to 1.2·{mean_norm}")));
    }
    let top = 1.2 * mean_norm;
    Ok((0..points).map(|i| top * i as f64 / (points - 1) as f64).collect())
}

fn fraction_correct(model: &Model, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let pred = model.predict(x)?;
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// AA over `grid` for perturbations already generated against some model,
/// measured on `target`.
pub fn cut_curve(target: &Model, data: &Dataset, deltas: &PerturbationBatch, grid: &[f64], attack: AttackKind) -> Result<AaCurve> {
    check_grid(grid)?;
    let accuracy = grid
        .iter()
        .map(|&eps| fraction_correct(target, &cut(deltas, eps)?.apply(&data.images)?, &data.labels))
        .collect::<Result<Vec<_>>>()?;
    AaCurve::new(grid.to_vec(), accuracy, attack, CurveMode::CutL2)
}

fn curve_against<R: Rng + ?Sized>(
    source: &Model,
    target: &Model,
    data: &Dataset,
    attack: &AttackSpec,
    grid: &[f64],
    loss: &LossSpec,
    rng: &mut R,
) -> Result<AaCurve> {
    check_grid(grid)?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match CurveMode::for_kind(attack.kind) {
        CurveMode::CutL2 => {
            let deltas = generate(source, &data.images, &data.labels, attack, loss, rng)?;
            cut_curve(target, data, &deltas, grid, attack.kind)
        }
        CurveMode::Regenerate => {
            let accuracy = grid
                .iter()
                .map(|&eps| {
                    let spec = attack.clone().with_budget(eps);
                    let deltas = generate(source, &data.images, &data.labels, &spec, loss, rng)?;
                    fraction_correct(target, &deltas.apply(&data.images)?, &data.labels)
                })
                .collect::<Result<Vec<_>>>()?;
            AaCurve::new(grid.to_vec(), accuracy, attack.kind, CurveMode::Regenerate)
        }
    }
}

/// White-box `AA(ε)` for every `ε` in `grid` (which must start at 0).
pub fn aa_curve<R: Rng + ?Sized>(
    model: &Model,
    data: &Dataset,
    attack: &AttackSpec,
    grid: &[f64],
    loss: &LossSpec,
    rng: &mut R,
) -> Result<AaCurve> {
    curve_against(model, model, data, attack, grid, loss, rng)
}

/// Transfer curve: perturbations crafted on `source`, accuracy of `target`.
pub fn blackbox_eval<R: Rng + ?Sized>(
    source: &Model,
    target: &Model,
    data: &Dataset,
    attack: &AttackSpec,
    grid: &[f64],
    loss: &LossSpec,
    rng: &mut R,
) -> Result<AaCurve> {
    if source.input_dim() != target.input_dim() || source.output_dim() != target.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "source {}→{} vs target {}→{}",
            source.input_dim(),
            source.output_dim(),
            target.input_dim(),
            target.output_dim()
        )));
    }
    curve_against(source, target, data, attack, grid, loss, rng)
}

/// `(1/Θ) ∫₀^Θ AA(ε) dε` by the trapezoid rule on the piecewise-linear
/// interpolant of the curve; `Θ = 0` gives `AA(0)`.
pub fn avg_aa(curve: &AaCurve, theta: f64) -> Result<f64> {
    let (g, a) = (&curve.grid, &curve.accuracy);
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument(format!("theta {theta} must be >= 0")));
    }
    if theta == 0.0 {
        return Ok(a[0]);
    }
    let last = *g.last().expect("non-empty grid");
    if theta > last {
        return Err(Error::InvalidArgument(format!("theta {theta} beyond grid end {last}")));
    }
    let mut area = 0.0;
    for i in 1..g.len() {
        let (x0, x1) = (g[i - 1], g[i]);
        if x0 >= theta {
            break;
        }
        let (y0, y1) = (a[i - 1], a[i]);
        if x1 <= theta {
            area += 0.5 * (y0 + y1) * (x1 - x0);
        } else {
            let yt = y0 + (y1 - y0) * (theta - x0) / (x1 - x0);
            area += 0.5 * (y0 + yt) * (theta - x0);
        }
    }
    Ok(area / theta)
}

/// Mean ℓ2 norm of the perturbations an unconstrained attack generates.
pub fn mean_norm<R: Rng + ?Sized>(model: &Model, data: &Dataset, attack: &AttackSpec, loss: &LossSpec, rng: &mut R) -> Result<f64> {
    if attack.kind.is_constrained() {
        return Err(Error::InvalidArgument(format!(
            "mean norm needs an unconstrained attack, got {}",
            attack.kind.name()
        )));
    }
    generate(model, &data.images, &data.labels, attack, loss, rng)?.mean_l2()
}

/// One line of a defense × attack × budget table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub defense: String,
    pub attack: String,
    /// Attack budget, or a label such as `clean`, `avg-aa@0.5` or `norm`.
    pub budget: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn push(&mut self, defense: &str, attack: &str, budget: impl ToString, accuracy: f64) {
        self.rows.push(ReportRow {
            defense: defense.to_string(),
            attack: attack.to_string(),
            budget: budget.to_string(),
            accuracy,
        });
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "defense,attack,budget,accuracy")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.defense, r.attack, r.budget, r.accuracy)?;
        }
        Ok(())
    }
}
