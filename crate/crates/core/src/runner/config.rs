use std::fmt::Write as _;
use std::str::FromStr;

use crate::central::{Divergence, FChoice};
use crate::error::{Error, Result};
use crate::model::KlDirection;

/// Which particles score a test example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictMode {
    /// Uniform mixture of every group's particles.
    #[default]
    Ensemble,
    /// Each example is scored by the particles of its own group.
    Group,
    /// The central particles.
    Central,
}

impl PredictMode {
    pub fn name(self) -> &'static str {
        match self {
            PredictMode::Ensemble => "ensemble",
            PredictMode::Group => "group",
            PredictMode::Central => "central",
        }
    }
}

impl FromStr for PredictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(PredictMode::Ensemble),
            "group" => Ok(PredictMode::Group),
            "central" => Ok(PredictMode::Central),
            other => Err(Error::Config(format!("unknown predict_mode {other:?} (expected ensemble|group|central)"))),
        }
    }
}

/// How the meta set enters each group posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetaMode {
    #[default]
    CrossEntropy,
    Surrogate,
}

impl MetaMode {
    pub fn name(self) -> &'static str {
        match self {
            MetaMode::CrossEntropy => "ce",
            MetaMode::Surrogate => "surrogate",
        }
    }
}

impl FromStr for MetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(MetaMode::CrossEntropy),
            "surrogate" => Ok(MetaMode::Surrogate),
            other => Err(Error::Config(format!("unknown meta_mode {other:?} (expected ce|surrogate)"))),
        }
    }
}

fn kl_name(d: KlDirection) -> &'static str {
    match d {
        KlDirection::ModelToPseudo => "model_to_pseudo",
        KlDirection::PseudoToModel => "pseudo_to_model",
    }
}

fn parse_kl(s: &str) -> Result<KlDirection> {
    match s {
        "model_to_pseudo" => Ok(KlDirection::ModelToPseudo),
        "pseudo_to_model" => Ok(KlDirection::PseudoToModel),
        other => Err(Error::Config(format!(
            "unknown kl_direction {other:?} (expected model_to_pseudo|pseudo_to_model)"
        ))),
    }
}

/// Starting point of each epoch's central refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaryInit {
    /// The λ-weighted index-matched mean of the current group clouds.
    #[default]
    Mean,
    /// The previous central cloud.
    Warm,
}

impl BaryInit {
    pub fn name(self) -> &'static str {
        match self {
            BaryInit::Mean => "mean",
            BaryInit::Warm => "warm",
        }
    }
}

impl FromStr for BaryInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(BaryInit::Mean),
            "warm" => Ok(BaryInit::Warm),
            other => Err(Error::Config(format!("unknown bary_init {other:?} (expected mean|warm)"))),
        }
    }
}

/// SVGD kernel bandwidth: the median heuristic or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SvgdBandwidth {
    Median,
    Fixed(f64),
}

/// Every knob of one experiment. Serialized as flat `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `synthetic` or a CSV path.
    pub data: String,
    /// Optional CSV evaluated instead of the training set.
    pub test_data: Option<String>,
    pub synth_n: usize,
    pub synth_test_n: usize,
    pub divergence: Divergence,
    pub f_choice: FChoice,
    pub particles: usize,
    pub beta: f64,
    pub prior_scale: f64,
    /// KDE / MMD bandwidth `h`.
    pub bandwidth: f64,
    pub eps_stab: f64,
    pub svgd_bandwidth: SvgdBandwidth,
    pub step_size: f64,
    pub lambda_fair: f64,
    /// Linear ramp of the fairness weight over this many epochs; 0 disables it.
    pub lambda_anneal_epochs: usize,
    pub baseline: bool,
    pub epochs: usize,
    pub inner_steps: usize,
    pub k_bary: usize,
    pub bary_step: f64,
    pub bary_init: BaryInit,
    pub bias_amount: f64,
    pub bias_group: usize,
    pub symmetric_bias: bool,
    pub meta_fraction: f64,
    pub meta_mode: MetaMode,
    pub kl_direction: KlDirection,
    /// `oracle` (synthetic data only) or a CSV with `row,p1`.
    pub pseudo_labels: Option<String>,
    pub batch_size: usize,
    pub seed: u64,
    pub predict_mode: PredictMode,
    pub threshold: f64,
    pub init_theta_std: f64,
    pub init_weight_jitter: f64,
    /// Store weights relative to `σ⁻¹(β)`.
    pub center_weights: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: "synthetic".into(),
            test_data: None,
            synth_n: 2000,
            synth_test_n: 20000,
            divergence: Divergence::Wasserstein,
            f_choice: FChoice::Js,
            particles: 20,
            beta: 0.005,
            prior_scale: 1.0,
            bandwidth: 0.1,
            eps_stab: 1e-3,
            svgd_bandwidth: SvgdBandwidth::Median,
            step_size: 5e-3,
            lambda_fair: 1.0,
            lambda_anneal_epochs: 0,
            baseline: false,
            epochs: 100,
            inner_steps: 1,
            k_bary: 1,
            bary_step: 1.0,
            bary_init: BaryInit::Mean,
            bias_amount: 0.4,
            bias_group: 1,
            symmetric_bias: false,
            meta_fraction: 0.01,
            meta_mode: MetaMode::CrossEntropy,
            kl_direction: KlDirection::ModelToPseudo,
            pseudo_labels: None,
            batch_size: 0,
            seed: 0,
            predict_mode: PredictMode::Ensemble,
            threshold: 0.5,
            init_theta_std: 0.01,
            init_weight_jitter: 0.01,
            center_weights: true,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty() && value != "none").then(|| value.to_string())
}

impl ExperimentConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = value.to_string(),
            "test_data" => self.test_data = optional(value),
            "synth_n" => self.synth_n = parse(key, value)?,
            "synth_test_n" => self.synth_test_n = parse(key, value)?,
            "divergence" => self.divergence = value.parse()?,
            "f_choice" => self.f_choice = value.parse()?,
            "particles" => self.particles = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "prior_scale" => self.prior_scale = parse(key, value)?,
            "bandwidth" => self.bandwidth = parse(key, value)?,
            "eps_stab" => self.eps_stab = parse(key, value)?,
            "svgd_bandwidth" => {
                self.svgd_bandwidth = match value {
                    "median" => SvgdBandwidth::Median,
                    v => SvgdBandwidth::Fixed(parse(key, v)?),
                }
            }
            "step_size" => self.step_size = parse(key, value)?,
            "lambda_fair" => self.lambda_fair = parse(key, value)?,
            "lambda_anneal_epochs" => self.lambda_anneal_epochs = parse(key, value)?,
            "baseline" => self.baseline = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "inner_steps" => self.inner_steps = parse(key, value)?,
            "k_bary" => self.k_bary = parse(key, value)?,
            "bary_step" => self.bary_step = parse(key, value)?,
            "bary_init" => self.bary_init = value.parse()?,
            "bias_amount" => self.bias_amount = parse(key, value)?,
            "bias_group" => self.bias_group = parse(key, value)?,
            "symmetric_bias" => self.symmetric_bias = parse(key, value)?,
            "meta_fraction" => self.meta_fraction = parse(key, value)?,
            "meta_mode" => self.meta_mode = value.parse()?,
            "kl_direction" => self.kl_direction = parse_kl(value)?,
            "pseudo_labels" => self.pseudo_labels = optional(value),
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "predict_mode" => self.predict_mode = value.parse()?,
            "threshold" => self.threshold = parse(key, value)?,
            "init_theta_std" => self.init_theta_std = parse(key, value)?,
            "init_weight_jitter" => self.init_weight_jitter = parse(key, value)?,
            "center_weights" => self.center_weights = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("particles", self.particles as f64),
            ("bandwidth", self.bandwidth),
            ("eps_stab", self.eps_stab),
            ("step_size", self.step_size),
            ("inner_steps", self.inner_steps as f64),
            ("prior_scale", self.prior_scale),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if !(self.lambda_fair >= 0.0 && self.lambda_fair.is_finite()) {
            return Err(Error::Config(format!("lambda_fair must be nonnegative, got {}", self.lambda_fair)));
        }
        if !(0.0..=1.0).contains(&self.bias_amount) {
            return Err(Error::Config(format!("bias_amount must lie in [0,1], got {}", self.bias_amount)));
        }
        if !(self.meta_fraction > 0.0 && self.meta_fraction < 1.0) {
            return Err(Error::Config(format!("meta_fraction must lie in (0,1), got {}", self.meta_fraction)));
        }
        if let SvgdBandwidth::Fixed(h) = self.svgd_bandwidth {
            if !(h > 0.0) {
                return Err(Error::Config(format!("svgd_bandwidth must be positive, got {h}")));
            }
        }
        if !(self.bary_step > 0.0) || !(self.init_theta_std >= 0.0) || !(self.init_weight_jitter >= 0.0) {
            return Err(Error::Config("bary_step must be positive and init scales nonnegative".into()));
        }
        if self.meta_mode == MetaMode::Surrogate && self.pseudo_labels.is_none() {
            return Err(Error::Config("meta_mode=surrogate needs pseudo_labels".into()));
        }
        Ok(())
    }

    /// Fairness weight in force, after the baseline switch.
    pub fn effective_lambda(&self) -> f64 {
        if self.baseline { 0.0 } else { self.lambda_fair }
    }

    /// Fairness weight used during training epoch `epoch` (1-based).
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        let lambda = self.effective_lambda();
        if self.lambda_anneal_epochs == 0 {
            lambda
        } else {
            lambda * (epoch as f64 / self.lambda_anneal_epochs as f64).min(1.0)
        }
    }

    /// Every field as `(key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: &Option<String>| v.clone().unwrap_or_else(|| "none".into());
        vec![
            ("data", self.data.clone()),
            ("test_data", opt(&self.test_data)),
            ("synth_n", self.synth_n.to_string()),
            ("synth_test_n", self.synth_test_n.to_string()),
            ("divergence", self.divergence.name().into()),
            ("f_choice", self.f_choice.name().into()),
            ("particles", self.particles.to_string()),
            ("beta", self.beta.to_string()),
            ("prior_scale", self.prior_scale.to_string()),
            ("bandwidth", self.bandwidth.to_string()),
            ("eps_stab", self.eps_stab.to_string()),
            (
                "svgd_bandwidth",
                match self.svgd_bandwidth {
                    SvgdBandwidth::Median => "median".into(),
                    SvgdBandwidth::Fixed(h) => h.to_string(),
                },
            ),
            ("step_size", self.step_size.to_string()),
            ("lambda_fair", self.lambda_fair.to_string()),
            ("lambda_anneal_epochs", self.lambda_anneal_epochs.to_string()),
            ("baseline", self.baseline.to_string()),
            ("epochs", self.epochs.to_string()),
            ("inner_steps", self.inner_steps.to_string()),
            ("k_bary", self.k_bary.to_string()),
            ("bary_step", self.bary_step.to_string()),
            ("bary_init", self.bary_init.name().into()),
            ("bias_amount", self.bias_amount.to_string()),
            ("bias_group", self.bias_group.to_string()),
            ("symmetric_bias", self.symmetric_bias.to_string()),
            ("meta_fraction", self.meta_fraction.to_string()),
            ("meta_mode", self.meta_mode.name().into()),
            ("kl_direction", kl_name(self.kl_direction).into()),
            ("pseudo_labels", opt(&self.pseudo_labels)),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("predict_mode", self.predict_mode.name().into()),
            ("threshold", self.threshold.to_string()),
            ("init_theta_std", self.init_theta_std.to_string()),
            ("init_weight_jitter", self.init_weight_jitter.to_string()),
            ("center_weights", self.center_weights.to_string()),
        ]
    }

    /// The `key=value` text accepted by [`parse_str`](Self::parse_str).
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
