use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine supported algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam,
    Adamax,
    Nadam,
    Adagrad,
    Rmsprop,
    Adadelta,
    Ftrl,
    Lbfgs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Sgd,
        Algorithm::Adam,
        Algorithm::Adamax,
        Algorithm::Nadam,
        Algorithm::Adagrad,
        Algorithm::Rmsprop,
        Algorithm::Adadelta,
        Algorithm::Ftrl,
        Algorithm::Lbfgs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Adam => "adam",
            Algorithm::Adamax => "adamax",
            Algorithm::Nadam => "nadam",
            Algorithm::Adagrad => "adagrad",
            Algorithm::Rmsprop => "rmsprop",
            Algorithm::Adadelta => "adadelta",
            Algorithm::Ftrl => "ftrl",
            Algorithm::Lbfgs => "lbfgs",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == name.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownOptimizer(name.to_string()))
    }

    /// Full-batch methods consume the exact gradient over the whole training set.
    pub fn is_full_batch(self) -> bool {
        self == Algorithm::Lbfgs
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Adam bias correction.
///
/// `Literal` scales the step by `(1-β2^k)/(1-β1^k)` and keeps ε inside
/// the root; `Standard` is the usual `sqrt(1-β2^k)/(1-β1^k)` with ε added to
/// the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasCorrection {
    #[default]
    Literal,
    Standard,
}

/// Adadelta preconditioner.
///
/// `RmsRatio`: `Δ = -sqrt(ε+δ̃)/sqrt(ε+v) g`.
/// `StrictLiteral`: `Δ = -sqrt(ε+δ̃) (ε+v)^(-1/4) g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdadeltaForm {
    #[default]
    RmsRatio,
    StrictLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsSettings {
    /// Number of stored (s, y) pairs.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_evals: usize,
    /// Pairs with `yᵀs` at or below this are discarded.
    pub curvature_floor: f64,
    /// A gradient norm at or below this counts as converged; the step is a no-op.
    pub grad_tol: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 20,
            curvature_floor: 1e-10,
            grad_tol: 1e-12,
        }
    }
}

/// Hyperparameters shared by all algorithms; each reads the fields it needs.
///
/// `beta` is the momentum weight for SGD and RMSProp, the Nesterov
/// extrapolation weight for Nadam, and the smoothing term of the FTRL
/// schedule. `lambda` is the FTRL L1 weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    #[serde(rename = "eta")]
    pub learning_rate: f64,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub lambda: f64,
    pub amsgrad: bool,
    pub nesterov: bool,
    pub centered: bool,
    pub bias_correction: BiasCorrection,
    pub adadelta_form: AdadeltaForm,
    pub lbfgs: LbfgsSettings,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            rho: 0.9,
            lambda: 0.0,
            amsgrad: false,
            nesterov: false,
            centered: false,
            bias_correction: BiasCorrection::default(),
            adadelta_form: AdadeltaForm::default(),
            lbfgs: LbfgsSettings::default(),
        }
    }
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Default,
    Tuned,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Preset::Default),
            "tuned" => Ok(Preset::Tuned),
            other => Err(Error::invalid("preset", format!("`{other}` is not default or tuned"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Tuned => "tuned",
        }
    }
}

impl HyperParams {
    /// Framework defaults and grid-search winners per algorithm.
    ///
    /// Adadelta, Adagrad, FTRL and L-BFGS were not tuned, so both presets agree.
    pub fn preset(algorithm: Algorithm, preset: Preset) -> Self {
        let base = HyperParams::default();
        let tuned = preset == Preset::Tuned;
        match algorithm {
            Algorithm::Sgd => HyperParams {
                learning_rate: if tuned { 1e-1 } else { 1e-2 },
                beta: if tuned { 0.9 } else { 0.0 },
                nesterov: false,
                ..base
            },
            Algorithm::Adam => HyperParams {
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: if tuned { 0.9999 } else { 0.999 },
                epsilon: if tuned { 1e-8 } else { 1e-7 },
                amsgrad: tuned,
                ..base
            },
            Algorithm::Adamax => HyperParams {
                learning_rate: 1e-3,
                beta1: if tuned { 0.6 } else { 0.9 },
                beta2: if tuned { 0.99 } else { 0.999 },
                epsilon: if tuned { 1e-6 } else { 1e-7 },
                ..base
            },
            Algorithm::Nadam => HyperParams {
                learning_rate: 1e-3,
                beta: 0.9,
                beta1: if tuned { 0.99 } else { 0.9 },
                beta2: if tuned { 0.99 } else { 0.999 },
                epsilon: if tuned { 1e-6 } else { 1e-7 },
                ..base
            },
            Algorithm::Rmsprop => HyperParams {
                learning_rate: if tuned { 1e-3 } else { 1e-2 },
                beta: 0.0,
                rho: 0.9,
                epsilon: if tuned { 1e-6 } else { 1e-7 },
                centered: false,
                ..base
            },
            Algorithm::Adadelta => HyperParams {
                learning_rate: 1e-3,
                rho: 0.95,
                epsilon: 1e-7,
                ..base
            },
            Algorithm::Adagrad => HyperParams {
                learning_rate: 1e-3,
                rho: 0.95,
                epsilon: 1e-7,
                ..base
            },
            Algorithm::Ftrl => HyperParams {
                learning_rate: 1e-3,
                beta: 0.1,
                beta1: 0.0,
                beta2: 0.0,
                lambda: 0.0,
                ..base
            },
            Algorithm::Lbfgs => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| -> Result<()> {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::InvalidHyperParams(format!("{name} = {x} is outside [0, 1)")))
            }
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidHyperParams(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        unit("beta", self.beta)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        unit("rho", self.rho)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("lambda = {} must be nonnegative", self.lambda)));
        }
        let l = &self.lbfgs;
        if l.history == 0 || l.max_evals == 0 {
            return Err(Error::InvalidHyperParams("lbfgs history and max_evals must be positive".into()));
        }
        if !(0.0 < l.c1 && l.c1 < l.c2 && l.c2 < 1.0) {
            return Err(Error::InvalidHyperParams(format!(
                "lbfgs needs 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                l.c1, l.c2
            )));
        }
        if !(l.curvature_floor >= 0.0 && l.grad_tol >= 0.0) {
            return Err(Error::InvalidHyperParams("lbfgs tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_presets() {
        let d = HyperParams::preset(Algorithm::Adam, Preset::Default);
        assert_eq!((d.learning_rate, d.beta1, d.beta2, d.epsilon, d.amsgrad), (1e-3, 0.9, 0.999, 1e-7, false));
        let t = HyperParams::preset(Algorithm::Adam, Preset::Tuned);
        assert_eq!((t.beta2, t.epsilon, t.amsgrad), (0.9999, 1e-8, true));
    }

    #[test]
    fn sgd_and_rmsprop_presets() {
        let t = HyperParams::preset(Algorithm::Sgd, Preset::Tuned);
        assert_eq!((t.learning_rate, t.beta, t.nesterov), (1e-1, 0.9, false));
        let d = HyperParams::preset(Algorithm::Sgd, Preset::Default);
        assert_eq!((d.learning_rate, d.beta), (1e-2, 0.0));
        let r = HyperParams::preset(Algorithm::Rmsprop, Preset::Tuned);
        assert_eq!((r.learning_rate, r.rho, r.epsilon), (1e-3, 0.9, 1e-6));
    }

    #[test]
    fn untuned_presets_agree() {
        for a in [Algorithm::Adadelta, Algorithm::Adagrad, Algorithm::Ftrl, Algorithm::Lbfgs] {
            assert_eq!(HyperParams::preset(a, Preset::Default), HyperParams::preset(a, Preset::Tuned));
        }
    }

    #[test]
    fn every_preset_validates() {
        for a in Algorithm::ALL {
            for p in [Preset::Default, Preset::Tuned] {
                HyperParams::preset(a, p).validate().unwrap();
            }
        }
    }

    #[test]
    fn validation_rejects() {
        let bad = [
            HyperParams { learning_rate: 0.0, ..Default::default() },
            HyperParams { beta1: 1.0, ..Default::default() },
            HyperParams { rho: -0.1, ..Default::default() },
            HyperParams { epsilon: 0.0, ..Default::default() },
            HyperParams { lambda: -1.0, ..Default::default() },
        ];
        for hp in bad {
            assert!(matches!(hp.validate(), Err(Error::InvalidHyperParams(_))), "{hp:?}");
        }
    }

    #[test]
    fn parse_names() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.name()).unwrap(), a);
        }
        assert!(matches!(Algorithm::parse("bogus"), Err(Error::UnknownOptimizer(_))));
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let ok: HyperParams = serde_json::from_str(r#"{"eta": 0.5}"#).unwrap();
        assert_eq!(ok.learning_rate, 0.5);
        assert!(serde_json::from_str::<HyperParams>(r#"{"lr": 0.5}"#).is_err());
    }
}
