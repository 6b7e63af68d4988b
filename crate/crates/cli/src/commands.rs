use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;

use anyhow::anyhow;
use bat_core::attacks::{generate, AttackSpec, Norm};
use bat_core::data::{apply_overrides, emit, load_idx, parse_config, subset, Dataset, RunConfig};
use bat_core::eval::{avg_aa, blackbox_eval, cut_curve, default_grid, AaCurve, EvalReport};
use bat_core::nn::{accuracy, checkpoint, Model};
use bat_core::tcc::run_tcc;
use bat_core::theory::{convergence_report, figure, figure_file_name, linspace};
use bat_core::training::train_observed;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Command, Common, Failure, TccChoice};

type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(stage: &'static str) -> impl FnOnce(bat_core::Error) -> Failure {
    move |e| Failure::Runtime(anyhow::Error::new(e).context(stage))
}

fn io(stage: String) -> impl FnOnce(std::io::Error) -> Failure {
    move |e| Failure::Runtime(anyhow::Error::new(e).context(stage))
}

pub(crate) fn run(command: Command) -> Outcome {
    match command {
        Command::Train { common } => train(&resolve(&common, &[])?),
        Command::Eval { common } => eval(&resolve(&common, &[])?),
        Command::Blackbox { common } => blackbox(&resolve(&common, &[])?),
        Command::Tcc { common, strategy, budget } => {
            let flag = strategy.map(|s| {
                let v = match s {
                    TccChoice::Nt => "{ kind = \"nt\" }".to_string(),
                    TccChoice::NtAa => "{ kind = \"nt-aa\" }".to_string(),
                    TccChoice::At => format!("{{ kind = \"at\", budget = {budget:?} }}"),
                    TccChoice::Bat => "{ kind = \"bat\" }".to_string(),
                };
                format!("tcc.strategy={v}")
            });
            tcc(&resolve(&common, flag.as_slice())?)
        }
        Command::Theory { common, fig, convergence } => {
            let all = fig.is_empty() && !convergence;
            let figs = if all { vec![7, 8, 9, 10] } else { fig };
            theory(&resolve(&common, &[])?, &figs, all || convergence)
        }
    }
}

/// Config file (or defaults), then `--seed`, subcommand flags, `--set`
/// overrides and `--out`, in that order. Writes the resolved copy.
fn resolve(common: &Common, flags: &[String]) -> Result<RunConfig, Failure> {
    let base = match &common.config {
        Some(path) => parse_config(path).map_err(invalid)?,
        None => RunConfig::with_seed(0),
    };
    let mut sets: Vec<String> = common.seed.map(|s| format!("seed={s}")).into_iter().collect();
    sets.extend(flags.iter().cloned());
    sets.extend(common.set.iter().cloned());
    let mut config = apply_overrides(&base, &sets).map_err(invalid)?;
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    std::fs::create_dir_all(&config.out).map_err(io(format!("creating {}", config.out.display())))?;
    let text = emit(&config).map_err(invalid)?;
    let path = config.out.join("config.toml");
    std::fs::write(&path, text).map_err(io(format!("writing {}", path.display())))?;
    Ok(config)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(io(format!("creating {}", path.display())))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> bat_core::Result<()>) -> Outcome {
    let mut out = create(dir, name)?;
    f(&mut out).map_err(|e| Failure::Runtime(anyhow::Error::new(e).context(format!("writing {name}"))))?;
    out.flush().map_err(io(format!("writing {name}")))
}

fn load_split(config: &RunConfig, train: bool) -> Result<Dataset, Failure> {
    config.data.check_files().map_err(invalid)?;
    let (images, labels) = if train { config.data.train_paths() } else { config.data.test_paths() };
    let full = load_idx(&images, &labels).map_err(runtime("loading data"))?;
    let n = if train { config.data.train_subset } else { config.data.test_subset };
    if n == 0 {
        return Ok(full);
    }
    if n > full.len() {
        return Err(invalid(anyhow!(
            "data.{}_subset: {n} exceeds the {} examples available",
            if train { "train" } else { "test" },
            full.len()
        )));
    }
    subset(&full, n, config.seed).map_err(runtime("subsetting data"))
}

fn load_model(path: &Path, key: &str) -> Result<Model, Failure> {
    if !path.is_file() {
        return Err(invalid(anyhow!("{key}: checkpoint {} does not exist", path.display())));
    }
    checkpoint::load(path).map_err(|e| Failure::Runtime(anyhow::Error::new(e).context(format!("loading {}", path.display()))))
}

fn train(config: &RunConfig) -> Outcome {
    let data = load_split(config, true)?;
    let test = load_split(config, false)?;
    let dims = config.model.dims(data.dim(), data.num_classes);
    let model = Model::init(
        &dims,
        config.model.hidden_activation,
        config.model.output_activation,
        &mut ChaCha8Rng::seed_from_u64(config.seed),
    )
    .map_err(invalid)?;
    let tc = &config.train;
    eprintln!("training {} on {} examples, layers {:?}", tc.strategy.name(), data.len(), dims);
    let report = train_observed(tc, model, &data, &mut |r, _| {
        eprintln!(
            "epoch {}/{}: loss {:.5}, train accuracy {:.4}, mean norm {:.4}, budget {:.4}",
            r.epoch, tc.epochs, r.loss, r.clean_acc, r.mean_norm, r.eps_budget
        );
        Ok(ControlFlow::Continue(()))
    })
    .map_err(runtime("training"))?;
    let test_acc = accuracy(&report.model, &test.images, &test.labels).map_err(runtime("scoring test split"))?;
    eprintln!("test accuracy {test_acc:.4}");

    write_with(&config.out, "history.csv", |w| report.write_csv(w))?;
    let ckpt = config.out.join("model.ckpt");
    checkpoint::save(&report.model, &ckpt).map_err(runtime("saving checkpoint"))?;
    let mut summary = EvalReport::default();
    summary.push(tc.strategy.name(), "none", "clean-train", report.epochs.last().map_or(0.0, |r| r.clean_acc));
    summary.push(tc.strategy.name(), "none", "clean-test", test_acc);
    write_with(&config.out, "summary.csv", |w| summary.write_csv(w))
}

/// Curve and avg-AA horizon for one attack. ℓ2 attacks are generated once
/// and cut; ℓ∞ attacks are regenerated per budget. `reference` reuses the
/// grid and horizon of an earlier curve.
struct Measured {
    curve: AaCurve,
    theta: f64,
    mean_norm: Option<f64>,
}

fn measure(
    config: &RunConfig,
    source: &Model,
    target: &Model,
    data: &Dataset,
    spec: &AttackSpec,
    rng: &mut ChaCha8Rng,
    reference: Option<&Measured>,
) -> bat_core::Result<Measured> {
    let ev = &config.eval;
    let loss = &config.train.loss;
    match spec.norm() {
        Norm::L2 => {
            let deltas = generate(source, &data.images, &data.labels, spec, loss, rng)?;
            let mn = deltas.mean_l2()?;
            let (grid, theta) = match (reference, ev.l2_max) {
                (Some(r), _) => (r.curve.grid.clone(), r.theta),
                (None, Some(m)) => (linspace(0.0, m, ev.grid_points - 1), ev.theta.unwrap_or(mn / 2.0)),
                (None, None) => (default_grid(mn, ev.grid_points)?, ev.theta.unwrap_or(mn / 2.0)),
            };
            let curve = cut_curve(target, data, &deltas, &grid, spec.kind)?;
            Ok(Measured { curve, theta, mean_norm: Some(mn) })
        }
        Norm::Linf => {
            let grid = linspace(0.0, ev.linf_max, ev.grid_points - 1);
            let curve = blackbox_eval(source, target, data, spec, &grid, loss, rng)?;
            Ok(Measured { curve, theta: ev.theta.unwrap_or(ev.linf_max), mean_norm: None })
        }
    }
}

fn summarize(report: &mut EvalReport, defense: &str, m: &Measured) -> bat_core::Result<()> {
    let name = m.curve.attack.name();
    report.push(defense, name, "clean", m.curve.clean_accuracy());
    report.push(defense, name, format!("avg-aa@{}", m.theta), avg_aa(&m.curve, m.theta)?);
    if let Some(n) = m.mean_norm {
        report.push(defense, name, "norm", n);
    }
    Ok(())
}

fn write_curves(config: &RunConfig, curves: &[(&str, &AaCurve)]) -> Outcome {
    write_with(&config.out, "curves.csv", |w| {
        writeln!(w, "setting,epsilon,accuracy,attack,mode")?;
        for (setting, c) in curves {
            for (e, a) in c.grid.iter().zip(&c.accuracy) {
                writeln!(w, "{setting},{e},{a},{},{}", c.attack.name(), c.mode.name())?;
            }
        }
        Ok(())
    })
}

fn eval(config: &RunConfig) -> Outcome {
    let model = load_model(&config.eval.checkpoint, "eval.checkpoint")?;
    let data = load_split(config, false)?;
    let defense = config.eval.checkpoint.display().to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = EvalReport::default();
    let mut measured = Vec::new();
    for spec in &config.eval.attacks {
        eprintln!("white-box {} on {} examples", spec.kind.name(), data.len());
        let m = measure(config, &model, &model, &data, spec, &mut rng, None).map_err(runtime("white-box evaluation"))?;
        summarize(&mut report, &defense, &m).map_err(runtime("avg-AA"))?;
        measured.push(m);
    }
    let curves: Vec<_> = measured.iter().map(|m| ("white-box", &m.curve)).collect();
    write_curves(config, &curves)?;
    write_with(&config.out, "report.csv", |w| report.write_csv(w))
}

fn blackbox(config: &RunConfig) -> Outcome {
    let target = load_model(&config.eval.checkpoint, "eval.checkpoint")?;
    let source = load_model(&config.eval.source_checkpoint, "eval.source_checkpoint")?;
    let data = load_split(config, false)?;
    let defense = config.eval.checkpoint.display().to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = EvalReport::default();
    let mut measured = Vec::new();
    for spec in &config.eval.attacks {
        eprintln!("black-box {} from {}", spec.kind.name(), config.eval.source_checkpoint.display());
        let white = measure(config, &target, &target, &data, spec, &mut rng, None).map_err(runtime("white-box evaluation"))?;
        let black =
            measure(config, &source, &target, &data, spec, &mut rng, Some(&white)).map_err(runtime("black-box evaluation"))?;
        summarize(&mut report, &format!("{defense} (white-box)"), &white).map_err(runtime("avg-AA"))?;
        summarize(&mut report, &format!("{defense} (black-box)"), &black).map_err(runtime("avg-AA"))?;
        let above = white
            .curve
            .accuracy
            .iter()
            .zip(&black.curve.accuracy)
            .filter(|(w, b)| b >= w)
            .count();
        eprintln!("black-box ≥ white-box at {above} of {} grid points", white.curve.grid.len());
        measured.push((white, black));
    }
    let mut curves = Vec::new();
    for (w, b) in &measured {
        curves.push(("white-box", &w.curve));
        curves.push(("black-box", &b.curve));
    }
    write_curves(config, &curves)?;
    write_with(&config.out, "report.csv", |w| report.write_csv(w))
}

fn tcc(config: &RunConfig) -> Outcome {
    let t = &config.tcc;
    eprintln!("tcc {} for up to {} epochs (seed {})", t.strategy.name(), t.epochs, t.seed);
    let outcome = run_tcc(t).map_err(runtime("tcc experiment"))?;
    let r = &outcome.robustness;
    eprintln!(
        "boundary distance min {:.4} mean {:.4} max {:.4} after {} epochs",
        r.min,
        r.mean,
        r.max,
        outcome.train.epochs.len()
    );
    write_with(&config.out, "robustness.csv", |w| r.write_profile_csv(w))?;
    write_with(&config.out, "boundary.csv", |w| r.write_boundary_csv(w))?;
    write_with(&config.out, "history.csv", |w| outcome.write_history_csv(w))?;
    write_with(&config.out, "train.csv", |w| outcome.train.write_csv(w))?;
    write_with(&config.out, "summary.csv", |w| {
        writeln!(w, "strategy,epochs,min,mean,max")?;
        writeln!(w, "{},{},{},{},{}", t.strategy.name(), outcome.train.epochs.len(), r.min, r.mean, r.max)?;
        Ok(())
    })?;
    checkpoint::save(&outcome.train.model, &config.out.join("model.ckpt")).map_err(runtime("saving checkpoint"))
}

fn theory(config: &RunConfig, figs: &[u32], convergence: bool) -> Outcome {
    let th = &config.theory;
    for &n in figs {
        let sweep = figure(n, th.lambda).map_err(runtime("theory sweep"))?;
        if let Some((x, y)) = sweep.argmax() {
            eprintln!("{}: {} rows, max {} = {y} at {} = {x}", figure_file_name(n), sweep.rows.len(), sweep.header[1], sweep.header[0]);
        }
        write_with(&config.out, &figure_file_name(n), |w| sweep.write_csv(w))?;
    }
    if convergence {
        let run = th.two_point_run(config.seed);
        eprintln!("two-point convergence over {} seeds", run.seeds.len());
        let rep = convergence_report(&run, &th.etas, th.rho).map_err(runtime("two-point training"))?;
        let (eta, best) = rep.best_restricted();
        eprintln!(
            "best restricted AT eta {eta}: {best} epochs; on-boundary {} epochs; BAT {} epochs; {} unconverged runs",
            rep.on_boundary, rep.bat, rep.unconverged
        );
        write_with(&config.out, "convergence.csv", |w| rep.write_csv(w))?;
    }
    Ok(())
}
