use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    Noise,
    Pgd,
    #[serde(rename = "deepfool")]
    DeepFool,
    #[serde(rename = "cw")]
    CwL2,
}

impl AttackKind {
    pub fn norm(self) -> Norm {
        match self {
            AttackKind::Fgsm | AttackKind::Noise | AttackKind::Pgd => Norm::Linf,
            AttackKind::DeepFool | AttackKind::CwL2 => Norm::L2,
        }
    }

    /// Norm-constrained attacks take a budget; the others search for the
    /// smallest successful perturbation.
    pub fn is_constrained(self) -> bool {
        self.norm() == Norm::Linf
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Noise => "noise",
            AttackKind::Pgd => "pgd",
            AttackKind::DeepFool => "deepfool",
            AttackKind::CwL2 => "cw",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    L2,
    Linf,
}

/// Closed interval inputs must stay in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Full parameterisation of one adversarial-example generator. Defaults
/// follow the usual settings for each attack: PGD 20 steps of ε/10 from a
/// random start of magnitude ε/2; DeepFool 10 steps with 0.02 overshoot;
/// CW 100 steps at learning rate 0.01, confidence 0, 10 binary-search steps
/// with abort-early.
///
/// In configuration files only `kind` is required; every other field falls
/// back to the default for that kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttackSpec")]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// ℓ∞ budget; present iff the attack is norm-constrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    pub steps: usize,
    pub pgd_step_fraction: f64,
    pub pgd_init_fraction: f64,
    pub df_overshoot: f64,
    pub cw_learning_rate: f64,
    pub cw_confidence: f64,
    pub cw_binary_search_steps: usize,
    pub cw_initial_const: f64,
    pub cw_abort_early: bool,
    /// Valid input range. ℓ∞ attacks clip `x + δ` into it, CW optimises
    /// inside it through a tanh change of variables, DeepFool ignores it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<ValueRange>,
}

impl AttackSpec {
    fn base(kind: AttackKind, budget: Option<f64>, steps: usize) -> Self {
        Self {
            kind,
            budget,
            steps,
            pgd_step_fraction: 0.1,
            pgd_init_fraction: 0.5,
            df_overshoot: 0.02,
            cw_learning_rate: 0.01,
            cw_confidence: 0.0,
            cw_binary_search_steps: 10,
            cw_initial_const: 1e-2,
            cw_abort_early: true,
            range: match kind {
                AttackKind::DeepFool => None,
                _ => Some(ValueRange::UNIT),
            },
        }
    }

    pub fn fgsm(budget: f64) -> Self {
        Self::base(AttackKind::Fgsm, Some(budget), 1)
    }

    pub fn noise(budget: f64) -> Self {
        Self::base(AttackKind::Noise, Some(budget), 1)
    }

    pub fn pgd(budget: f64) -> Self {
        Self::base(AttackKind::Pgd, Some(budget), 20)
    }

    pub fn deepfool() -> Self {
        Self::base(AttackKind::DeepFool, None, 10)
    }

    pub fn cw_l2() -> Self {
        Self::base(AttackKind::CwL2, None, 100)
    }

    /// Default parameterisation for `kind`; constrained kinds get budget 0.
    pub fn for_kind(kind: AttackKind) -> Self {
        match kind {
            AttackKind::Fgsm => Self::fgsm(0.0),
            AttackKind::Noise => Self::noise(0.0),
            AttackKind::Pgd => Self::pgd(0.0),
            AttackKind::DeepFool => Self::deepfool(),
            AttackKind::CwL2 => Self::cw_l2(),
        }
    }

    pub fn with_range(mut self, range: Option<ValueRange>) -> Self {
        self.range = range;
        self
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn norm(&self) -> Norm {
        self.kind.norm()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("{} attack: {msg}", self.kind.name())));
        match (self.kind.is_constrained(), self.budget) {
            (true, None) => return bad("budget required".into()),
            (false, Some(_)) => return bad("unconstrained attacks take no budget".into()),
            (true, Some(b)) if !(b >= 0.0) || !b.is_finite() => return bad(format!("budget {b} must be >= 0")),
            _ => {}
        }
        if matches!(self.kind, AttackKind::Pgd | AttackKind::DeepFool | AttackKind::CwL2) && self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.df_overshoot < 0.0 {
            return bad("overshoot must be >= 0".into());
        }
        if let Some(r) = self.range {
            if !(r.lo < r.hi) {
                return bad(format!("empty range [{}, {}]", r.lo, r.hi));
            }
        }
        if self.kind == AttackKind::CwL2 && self.range.is_none() {
            return bad("CW needs a finite input range".into());
        }
        if self.kind == AttackKind::CwL2 && (self.cw_binary_search_steps == 0 || !(self.cw_initial_const > 0.0)) {
            return bad("binary search needs >= 1 step and a positive initial constant".into());
        }
        Ok(())
    }

    pub(crate) fn budget_or_zero(&self) -> f64 {
        self.budget.unwrap_or(0.0)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttackSpec {
    kind: AttackKind,
    budget: Option<f64>,
    steps: Option<usize>,
    pgd_step_fraction: Option<f64>,
    pgd_init_fraction: Option<f64>,
    df_overshoot: Option<f64>,
    cw_learning_rate: Option<f64>,
    cw_confidence: Option<f64>,
    cw_binary_search_steps: Option<usize>,
    cw_initial_const: Option<f64>,
    cw_abort_early: Option<bool>,
    range: Option<ValueRange>,
}

impl TryFrom<RawAttackSpec> for AttackSpec {
    type Error = String;

    fn try_from(raw: RawAttackSpec) -> std::result::Result<Self, String> {
        let mut s = AttackSpec::for_kind(raw.kind);
        if raw.kind.is_constrained() {
            s.budget = Some(raw.budget.ok_or_else(|| format!("{} attack needs a budget", raw.kind.name()))?);
        } else if raw.budget.is_some() {
            return Err(format!("{} attack takes no budget", raw.kind.name()));
        }
        macro_rules! take {
            ($($f:ident),*) => {$( if let Some(v) = raw.$f { s.$f = v; } )*};
        }
        take!(
            steps,
            pgd_step_fraction,
            pgd_init_fraction,
            df_overshoot,
            cw_learning_rate,
            cw_confidence,
            cw_binary_search_steps,
            cw_initial_const,
            cw_abort_early
        );
        if raw.range.is_some() {
            s.range = raw.range;
        }
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_follow_attack_kind() {
        assert_eq!(AttackSpec::fgsm(0.1).norm(), Norm::Linf);
        assert_eq!(AttackSpec::noise(0.1).norm(), Norm::Linf);
        assert_eq!(AttackSpec::pgd(0.1).norm(), Norm::Linf);
        assert_eq!(AttackSpec::deepfool().norm(), Norm::L2);
        assert_eq!(AttackSpec::cw_l2().norm(), Norm::L2);
    }

    #[test]
    fn defaults_match_attack_table() {
        let p = AttackSpec::pgd(0.3);
        assert_eq!((p.steps, p.pgd_step_fraction, p.pgd_init_fraction), (20, 0.1, 0.5));
        let d = AttackSpec::deepfool();
        assert_eq!((d.steps, d.df_overshoot), (10, 0.02));
        let c = AttackSpec::cw_l2();
        assert_eq!(
            (c.steps, c.cw_learning_rate, c.cw_confidence, c.cw_binary_search_steps, c.cw_abort_early),
            (100, 0.01, 0.0, 10, true)
        );
    }

    #[test]
    fn budget_presence_is_checked() {
        assert!(AttackSpec::fgsm(0.1).validate().is_ok());
        assert!(AttackSpec::deepfool().validate().is_ok());
        assert!(AttackSpec::cw_l2().validate().is_ok());
        let mut f = AttackSpec::fgsm(0.1);
        f.budget = None;
        assert!(f.validate().is_err());
        assert!(AttackSpec::deepfool().with_budget(0.2).validate().is_err());
        assert!(AttackSpec::pgd(-0.1).validate().is_err());
    }

    #[test]
    fn config_fields_default_per_kind() {
        let s: AttackSpec = toml::from_str("kind = \"pgd\"\nbudget = 0.3\nsteps = 7").unwrap();
        assert_eq!(s, AttackSpec { steps: 7, ..AttackSpec::pgd(0.3) });
        let d: AttackSpec = toml::from_str("kind = \"deepfool\"").unwrap();
        assert_eq!(d, AttackSpec::deepfool());
        assert!(toml::from_str::<AttackSpec>("kind = \"fgsm\"").is_err());
        assert!(toml::from_str::<AttackSpec>("kind = \"cw\"\nbudget = 1.0").is_err());
        assert!(toml::from_str::<AttackSpec>("kind = \"cw\"\nsteps_typo = 1").is_err());
    }

    #[test]
    fn serialised_form_reads_back() {
        for s in [AttackSpec::fgsm(0.2), AttackSpec::cw_l2(), AttackSpec::deepfool(), AttackSpec::pgd(0.1)] {
            let text = toml::to_string(&s).unwrap();
            assert_eq!(toml::from_str::<AttackSpec>(&text).unwrap(), s);
        }
    }
}
