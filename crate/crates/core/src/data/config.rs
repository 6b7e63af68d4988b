//! Run configuration: one TOML document describing data, model, training,
//! evaluation, the concentric-circles lab and the single-neuron analysis.
//!
//! Every section is optional and falls back to the defaults below; only the
//! top-level `seed` is required. Unknown keys are rejected. [`emit`] writes
//! the fully resolved form, which parses back to the same configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackSpec;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::tcc::TccConfig;
use crate::theory::TwoPointRun;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub tcc: TccConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// IDX files of one dataset and how much of it to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub name: String,
    pub dir: PathBuf,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    /// Stratified subset sizes; 0 keeps the whole split.
    pub train_subset: usize,
    pub test_subset: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            name: "mnist".into(),
            dir: PathBuf::from("data/mnist"),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            train_subset: 10_000,
            test_subset: 2_000,
        }
    }
}

impl DataConfig {
    pub fn train_paths(&self) -> (PathBuf, PathBuf) {
        (self.dir.join(&self.train_images), self.dir.join(&self.train_labels))
    }

    pub fn test_paths(&self) -> (PathBuf, PathBuf) {
        (self.dir.join(&self.test_images), self.dir.join(&self.test_labels))
    }

    /// Fails with the first missing file, naming the key it came from.
    pub fn check_files(&self) -> Result<()> {
        let (tri, trl) = self.train_paths();
        let (tei, tel) = self.test_paths();
        for (key, path) in [
            ("data.train_images", tri),
            ("data.train_labels", trl),
            ("data.test_images", tei),
            ("data.test_labels", tel),
        ] {
            if !path.is_file() {
                return Err(Error::Config(format!("{key}: file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// Dense network: input and output widths come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(output);
        d
    }
}

/// White-box and black-box evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Model under evaluation (the black-box target).
    pub checkpoint: PathBuf,
    /// Model the black-box perturbations are crafted on.
    pub source_checkpoint: PathBuf,
    pub attacks: Vec<AttackSpec>,
    /// Points per AA curve, including ε = 0.
    pub grid_points: usize,
    /// End of the ℓ2 grid; by default 1.2 × the attack's mean norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_max: Option<f64>,
    /// End of the ℓ∞ budget grid.
    pub linf_max: f64,
    /// avg-AA horizon; by default half the mean norm for ℓ2 attacks and
    /// the grid end for ℓ∞ attacks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("runs/model.ckpt"),
            source_checkpoint: PathBuf::from("runs/nt/model.ckpt"),
            attacks: vec![AttackSpec::deepfool()],
            grid_points: 61,
            l2_max: None,
            linf_max: 0.3,
            theta: None,
        }
    }
}

/// Single-neuron analysis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Number of seeds, counted up from the run seed.
    pub seeds: usize,
    pub rho: f64,
    pub etas: Vec<f64>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        let run = TwoPointRun::default();
        Self {
            lambda: run.lambda,
            learning_rate: run.learning_rate,
            max_epochs: run.max_epochs,
            seeds: run.seeds.len(),
            rho: 0.9,
            etas: crate::theory::default_eta_grid(),
        }
    }
}

impl TheoryConfig {
    pub fn two_point_run(&self, seed: u64) -> TwoPointRun {
        TwoPointRun {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            seeds: (seed..seed + self.seeds as u64).collect(),
            ..TwoPointRun::default()
        }
    }
}

impl RunConfig {
    /// Defaults for every section with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self {
            seed,
            out: default_out(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            tcc: TccConfig::default(),
            theory: TheoryConfig::default(),
        };
        c.propagate_seed();
        c
    }

    /// Copies the run seed into the sections that carry their own.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.tcc.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        let field = |key: &str, e: Error| Error::Config(format!("{key}: {e}"));
        self.train.validate().map_err(|e| field("train", e))?;
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden: layer widths must be positive".into()));
        }
        for (i, a) in self.eval.attacks.iter().enumerate() {
            a.validate().map_err(|e| field(&format!("eval.attacks[{i}]"), e))?;
        }
        if self.eval.grid_points < 2 {
            return Err(Error::Config("eval.grid_points: need at least 2".into()));
        }
        if !(self.eval.linf_max > 0.0) {
            return Err(Error::Config("eval.linf_max: must be positive".into()));
        }
        if matches!(self.eval.l2_max, Some(m) if !(m > 0.0)) {
            return Err(Error::Config("eval.l2_max: must be positive".into()));
        }
        if matches!(self.eval.theta, Some(t) if !(t >= 0.0)) {
            return Err(Error::Config("eval.theta: must be >= 0".into()));
        }
        let t = &self.tcc;
        if !(0.0..=1.0).contains(&t.rho) {
            return Err(Error::Config(format!("tcc.rho: {} outside [0, 1]", t.rho)));
        }
        if !(0.0 < t.r1 && t.r1 < t.r2) {
            return Err(Error::Config(format!("tcc.r1, tcc.r2: need 0 < r1 < r2, got {} and {}", t.r1, t.r2)));
        }
        if t.hidden == 0 || t.epochs == 0 || t.batch_size == 0 || t.n_train == 0 || t.track_every == 0 {
            return Err(Error::Config("tcc: hidden, epochs, batch_size, n_train and track_every must be positive".into()));
        }
        if !(t.learning_rate > 0.0) {
            return Err(Error::Config("tcc.learning_rate: must be positive".into()));
        }
        let th = &self.theory;
        if !(th.lambda > 0.0) {
            return Err(Error::Config("theory.lambda: must be positive".into()));
        }
        if !(0.0..=1.0).contains(&th.rho) {
            return Err(Error::Config(format!("theory.rho: {} outside [0, 1]", th.rho)));
        }
        if th.seeds == 0 || th.max_epochs == 0 || th.etas.is_empty() {
            return Err(Error::Config("theory: seeds, max_epochs and etas must be nonempty".into()));
        }
        Ok(())
    }
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    c.propagate_seed();
    c.validate()?;
    Ok(c)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Normalised text of a configuration: every field, defaults included.
pub fn emit(config: &RunConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(e.to_string()))
}

/// Applies dotted `key=value` overrides such as `train.rho=0.8`.
///
/// Each path is resolved against the normalised configuration, so all
/// defaulted keys can be overridden. The parent of the last segment must
/// exist; the last segment itself is then checked against the schema when
/// the result is re-parsed. Values are read as TOML (`0.8`, `true`,
/// `[64, 64]`, `"fgsm"`); anything that is not valid TOML is taken as a
/// bare string.
pub fn apply_overrides(config: &RunConfig, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = toml::from_str(&emit(config)?).map_err(|e| Error::Config(e.to_string()))?;
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{ov}`: expected key=value")))?;
        let key = key.trim();
        let value = parse_value(raw.trim());
        let segments: Vec<&str> = key.split('.').collect();
        let (last, parents) = segments.split_last().expect("split yields at least one segment");
        let mut cursor = &mut table;
        for (depth, seg) in parents.iter().enumerate() {
            let path = segments[..=depth].join(".");
            cursor = match cursor.get_mut(*seg) {
                Some(toml::Value::Table(t)) => t,
                Some(_) => return Err(Error::Config(format!("override `{key}`: `{path}` is not a section"))),
                None => return Err(Error::Config(format!("override `{key}`: unknown key `{path}`"))),
            };
        }
        if last.is_empty() {
            return Err(Error::Config(format!("override `{key}`: empty key")));
        }
        cursor.insert(last.to_string(), value);
    }
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("after overrides: {m}")),
        other => other,
    })
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcc::TccStrategy;

    #[test]
    fn minimal_tcc_config_parses() {
        let c = parse_config_str("seed = 3\n[tcc]\nstrategy = { kind = \"at\", budget = 0.1 }\nepochs = 50\n").unwrap();
        assert_eq!(c.tcc.strategy, TccStrategy::At { budget: 0.1 });
        assert_eq!(c.tcc.epochs, 50);
        assert_eq!(c.tcc.seed, 3);
        assert_eq!(c.train.seed, 3);
    }

    #[test]
    fn seed_is_required() {
        let e = parse_config_str("[tcc]\nepochs = 5\n").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn rho_out_of_range_is_rejected() {
        let e = parse_config_str("seed = 0\n[train]\nstrategy = \"bat\"\nepochs = 1\nlearning_rate = 0.1\nrho = 1.5\nloss = { kind = \"squared-error\" }\n").unwrap_err();
        assert!(e.to_string().contains("rho"), "{e}");
        assert!(parse_config_str("seed = 0\n[tcc]\nrho = 1.5\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let e = parse_config_str("seed = 0\n[model]\nhiden = [3]\n").unwrap_err();
        assert!(e.to_string().contains("hiden"), "{e}");
        let e = parse_config_str("seed = 0\nseeed = 1\n").unwrap_err();
        assert!(e.to_string().contains("seeed"), "{e}");
    }

    #[test]
    fn type_errors_report_the_line() {
        let e = parse_config_str("seed = 0\n[tcc]\nepochs = \"many\"\n").unwrap_err();
        let m = e.to_string();
        assert!(m.contains("epochs") && m.contains('3'), "{m}");
    }

    #[test]
    fn emit_then_parse_round_trips() {
        let c = parse_config_str("seed = 9\n[eval]\nattacks = [{ kind = \"fgsm\", budget = 0.1 }, { kind = \"cw\" }]\ntheta = 0.5\n").unwrap();
        let text = emit(&c).unwrap();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(emit(&back).unwrap(), text);
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::with_seed(4);
        assert_eq!(parse_config_str(&emit(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::with_seed(0);
        let o = apply_overrides(
            &c,
            &["train.rho=0.8".into(), "tcc.strategy.kind=nt".into(), "model.hidden=[64, 32]".into(), "seed=7".into()],
        )
        .unwrap();
        assert_eq!(o.train.rho, 0.8);
        assert_eq!(o.tcc.strategy, TccStrategy::Nt);
        assert_eq!(o.model.hidden, vec![64, 32]);
        assert_eq!((o.seed, o.train.seed), (7, 7));
    }

    #[test]
    fn overrides_must_name_existing_keys() {
        let c = RunConfig::with_seed(0);
        assert!(apply_overrides(&c, &["train.rhoo=0.8".into()]).is_err());
        assert!(apply_overrides(&c, &["trian.rho=0.8".into()]).is_err());
        assert!(apply_overrides(&c, &["train.rho".into()]).is_err());
        assert!(apply_overrides(&c, &["train.rho=2".into()]).is_err());
    }

    #[test]
    fn bare_strings_are_accepted() {
        let o = apply_overrides(&RunConfig::with_seed(0), &["data.name=fashion".into()]).unwrap();
        assert_eq!(o.data.name, "fashion");
    }

    #[test]
    fn missing_data_files_name_the_key() {
        let mut d = DataConfig::default();
        d.dir = PathBuf::from("/nonexistent/dir");
        let e = d.check_files().unwrap_err();
        assert!(e.to_string().contains("data.train_images"), "{e}");
    }
}
