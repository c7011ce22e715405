//! End-to-end training loop: per-group SVGD with the fairness pull, a central
//! refresh after every epoch, and a metrics snapshot.

mod config;

pub use config::{BaryInit, ExperimentConfig, MetaMode, PredictMode, SvgdBandwidth};
pub use crate::model::surrogate_meta_loss;

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::central::{barycenter_update, weighted_mean_set, BarycenterConfig, KdeConfig};
use crate::data::{
    carve_meta, inject_label_bias_with, load_dataset, load_soft_labels, BiasMode, Dataset, LabeledExample, MetaSet,
    Schema, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, posterior_predict, weight_distance, EpochRecord, FairnessReport, WeightLayout};
use crate::model::{cross_entropy, prob_of};
use crate::particles::{Particle, ParticleSet};
use crate::posterior::{GroupPosterior, MetaTerm, PriorConfig};
use crate::rng;
use crate::scalar::{logit, sigmoid, Scalar};
use crate::svgd::{fair_score, svgd_step, BandwidthRule, SvgdConfig};
use crate::theory::{check_disparity_bound, check_transfer_bound, Loss};

/// Training data, meta set and evaluation data for one run.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    pub train: Dataset<T>,
    pub meta: MetaSet<T>,
    /// Scored against clean labels.
    pub eval: Dataset<T>,
}

fn with_clean_labels<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    let examples = ds
        .examples()
        .iter()
        .map(|e| LabeledExample { y: e.y_clean, ..e.clone() })
        .collect();
    Dataset::with_groups(examples, ds.num_groups())
}

/// Loads or generates data, injects label bias and carves the meta set.
pub fn prepare_data<T: Scalar>(cfg: &ExperimentConfig) -> Result<PreparedData<T>> {
    let synthetic = cfg.data == "synthetic";
    let spec = SyntheticSpec::two_group(cfg.synth_n);
    let clean: Dataset<T> = if synthetic {
        spec.generate(cfg.seed, "synthetic/train")?
    } else {
        load_dataset(&cfg.data, &Schema::default())?
    };
    let eval = match (&cfg.test_data, synthetic) {
        (Some(path), _) => with_clean_labels(&load_dataset(path, &Schema::default())?)?,
        (None, true) => SyntheticSpec::two_group(cfg.synth_test_n).generate(cfg.seed, "synthetic/test")?,
        (None, false) => with_clean_labels(&clean)?,
    };
    let mode = if cfg.symmetric_bias { BiasMode::Symmetric } else { BiasMode::OneSided };
    let biased = if cfg.bias_amount > 0.0 {
        inject_label_bias_with(&clean, cfg.bias_amount, cfg.bias_group, cfg.seed, mode)?
    } else {
        clean
    };
    let (train, mut meta) = carve_meta(&biased, cfg.meta_fraction, cfg.seed)?;
    if cfg.meta_mode == MetaMode::Surrogate {
        let source = cfg.pseudo_labels.as_deref().unwrap_or("oracle");
        let p1: Vec<f64> = if source == "oracle" {
            if !synthetic {
                return Err(Error::Config("pseudo_labels=oracle needs synthetic data".into()));
            }
            let d = spec.d;
            meta.examples
                .iter()
                .map(|e| {
                    let x: Vec<f64> = e.x.iter().map(|v| v.as_f64()).collect();
                    let z = x.iter().zip(&spec.true_theta).map(|(a, b)| a * b).sum::<f64>() + spec.true_theta[d];
                    sigmoid::<f64>(z)
                })
                .collect()
        } else {
            let table = load_soft_labels(source)?;
            meta.source_rows
                .iter()
                .map(|r| {
                    table
                        .get(r)
                        .copied()
                        .ok_or_else(|| Error::Load(format!("{source}: no pseudo label for row {r}")))
                })
                .collect::<Result<_>>()?
        };
        let labels = p1.iter().map(|&p| [T::lit(1.0 - p), T::lit(p)]).collect();
        meta = meta.with_soft_labels(labels)?;
    }
    Ok(PreparedData { train, meta, eval })
}

/// Particle clouds of every group, the central cloud, and the logged history.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState<T> {
    pub groups: Vec<ParticleSet<T>>,
    pub central: ParticleSet<T>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Effective cross-group loss gap on the central support, per snapshot.
    pub k_eff: Vec<f64>,
    /// Final barycenter objective of each central refresh.
    pub barycenter_objective: Vec<f64>,
}

/// A configured run over prepared data.
#[derive(Debug, Clone)]
pub struct Experiment<T> {
    pub cfg: ExperimentConfig,
    groups: Vec<Vec<LabeledExample<T>>>,
    meta: MetaSet<T>,
    eval: Dataset<T>,
    theta_dim: usize,
    n_max: usize,
    offset: T,
    kde: KdeConfig<T>,
    bary: BarycenterConfig<T>,
    svgd: SvgdConfig<T>,
    prior: PriorConfig<T>,
}

impl<T: Scalar> Experiment<T> {
    pub fn new(cfg: ExperimentConfig, data: PreparedData<T>) -> Result<Self> {
        cfg.validate()?;
        let PreparedData { train, meta, eval } = data;
        if let Some(s) = train.group_sizes().iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!("group {s} has no training examples")));
        }
        if eval.dim() != train.dim() {
            return Err(Error::Dimension { expected: train.dim(), got: eval.dim() });
        }
        let beta = T::lit(cfg.beta);
        let prior = PriorConfig::new(beta)?.with_scale(T::lit(cfg.prior_scale));
        let offset = if cfg.center_weights { logit(beta) } else { T::zero() };
        let kde = KdeConfig::new(T::lit(cfg.bandwidth), T::lit(cfg.eps_stab))?;
        let bary = BarycenterConfig::new(cfg.divergence)
            .with_iters(cfg.k_bary)
            .with_step(T::lit(cfg.bary_step))
            .with_f(cfg.f_choice);
        let rule = match cfg.svgd_bandwidth {
            SvgdBandwidth::Median => BandwidthRule::Median,
            SvgdBandwidth::Fixed(h) => BandwidthRule::Fixed(T::lit(h)),
        };
        let svgd = SvgdConfig::new(T::lit(cfg.step_size))?.with_bandwidth(rule);
        Ok(Self {
            theta_dim: train.dim() + 1,
            n_max: train.n_max(),
            groups: train.split_by_group(),
            cfg,
            meta,
            eval,
            offset,
            kde,
            bary,
            svgd,
            prior,
        })
    }

    /// Generates or loads data per `cfg` and builds the experiment.
    pub fn from_config(cfg: ExperimentConfig) -> Result<Self> {
        let data = prepare_data(&cfg)?;
        Self::new(cfg, data)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    /// `P + N̄`.
    pub fn dim(&self) -> usize {
        self.theta_dim + self.n_max
    }

    pub fn weight_offset(&self) -> T {
        self.offset
    }

    pub fn group_data(&self, s: usize) -> &[LabeledExample<T>] {
        &self.groups[s]
    }

    pub fn eval_data(&self) -> &Dataset<T> {
        &self.eval
    }

    /// The density targeted by group `s`.
    pub fn posterior(&self, s: usize) -> Result<GroupPosterior<'_, T>> {
        let gp = GroupPosterior::new(s, &self.groups[s], &self.meta, self.prior, self.theta_dim, self.n_max)?
            .with_weight_offset(self.offset);
        match self.cfg.meta_mode {
            MetaMode::CrossEntropy => Ok(gp),
            MetaMode::Surrogate => gp.with_meta_term(MetaTerm::Surrogate(self.cfg.kl_direction)),
        }
    }

    fn init_group(&self, s: usize) -> Result<ParticleSet<T>> {
        let n_s = self.groups[s].len();
        let mut rng = rng::stream(self.cfg.seed, &format!("init/{s}"));
        let theta_law = Normal::new(0.0, self.cfg.init_theta_std).map_err(|e| Error::Config(e.to_string()))?;
        let jitter_law = Normal::new(0.0, self.cfg.init_weight_jitter).map_err(|e| Error::Config(e.to_string()))?;
        let base = if self.cfg.center_weights { T::zero() } else { logit(self.prior.beta) };
        let particles = (0..self.cfg.particles)
            .map(|_| {
                let mut z = vec![T::zero(); self.dim()];
                for v in &mut z[..self.theta_dim] {
                    *v = T::lit(theta_law.sample(&mut rng));
                }
                let live = &mut z[self.theta_dim..self.theta_dim + n_s];
                for v in live.iter_mut() {
                    *v = base;
                }
                if self.cfg.init_weight_jitter > 0.0 {
                    for v in live.iter_mut() {
                        *v = *v + T::lit(jitter_law.sample(&mut rng));
                    }
                    let shift = prior_shift(live, self.offset, self.prior.beta * T::count(n_s));
                    live.iter_mut().for_each(|v| *v = *v + shift);
                }
                Particle::new(z)
            })
            .collect();
        ParticleSet::new(particles)
    }

    /// Seeded particles for every group and the central cloud as their λ-weighted mean,
    /// without a metrics snapshot (metrics need at least two groups).
    pub fn initial_state(&self) -> Result<RunState<T>> {
        let groups = (0..self.num_groups()).map(|s| self.init_group(s)).collect::<Result<Vec<_>>>()?;
        let lambda = self.bary.weights(groups.len())?;
        let central = weighted_mean_set(&groups, &lambda)?;
        Ok(RunState { groups, central, epoch: 0, history: Vec::new(), k_eff: Vec::new(), barycenter_objective: Vec::new() })
    }

    /// [`initial_state`](Self::initial_state) plus the epoch-0 snapshot.
    pub fn init_run(&self) -> Result<RunState<T>> {
        let mut state = self.initial_state()?;
        self.snapshot(&mut state)?;
        Ok(state)
    }

    /// Group SVGD steps against the previous central cloud, then one central refresh.
    pub fn advance(&self, state: &mut RunState<T>) -> Result<()> {
        let epoch = state.epoch + 1;
        let lambda = T::lit(self.cfg.lambda_at(epoch));
        let central = &state.central;
        let updated = state
            .groups
            .par_iter()
            .enumerate()
            .map(|(s, ps)| {
                let full = self.posterior(s)?;
                let mut ps = ps.clone();
                for step in 0..self.cfg.inner_steps {
                    let gp = self.batch_posterior(&full, epoch, s, step)?;
                    ps = svgd_step(&ps, fair_score(&gp, central, self.kde, lambda), &self.svgd).map_err(|e| {
                        Error::NonFinite(format!("epoch {epoch}, group {s}: {e}"))
                    })?;
                    if let Some(i) = ps.first_non_finite() {
                        return Err(Error::NonFinite(format!("epoch {epoch}, group {s}, particle {i}")));
                    }
                }
                Ok(ps)
            })
            .collect::<Result<Vec<_>>>()?;
        let start = match self.cfg.bary_init {
            BaryInit::Warm => state.central.clone(),
            BaryInit::Mean => weighted_mean_set(&updated, &self.bary.weights(updated.len())?)?,
        };
        let update = barycenter_update(&updated, &start, &self.bary, &self.kde)?;
        if let Some(i) = update.central.first_non_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}, central particle {i}")));
        }
        state.groups = updated;
        state.barycenter_objective.push(update.final_objective().as_f64());
        state.central = update.central;
        state.epoch = epoch;
        Ok(())
    }

    fn batch_posterior<'a>(
        &self,
        full: &GroupPosterior<'a, T>,
        epoch: usize,
        s: usize,
        step: usize,
    ) -> Result<GroupPosterior<'a, T>> {
        let n = full.group_size();
        if self.cfg.batch_size == 0 || self.cfg.batch_size >= n {
            return Ok(full.clone());
        }
        let mut rng = rng::stream(self.cfg.seed, &format!("batch/{epoch}/{s}/{step}"));
        let mut idx = sample(&mut rng, n, self.cfg.batch_size).into_vec();
        idx.sort_unstable();
        full.clone().with_batch(idx)
    }

    /// One full epoch: [`advance`](Self::advance) followed by a metrics snapshot.
    pub fn train_epoch(&self, state: &mut RunState<T>) -> Result<()> {
        self.advance(state)?;
        self.snapshot(state)
    }

    /// Runs `cfg.epochs` epochs from a fresh initialization.
    pub fn run(&self) -> Result<RunState<T>> {
        let mut state = self.init_run()?;
        for _ in 0..self.cfg.epochs {
            self.train_epoch(&mut state)?;
        }
        Ok(state)
    }

    /// Scores of the evaluation set under the configured prediction mode.
    pub fn predict_eval(&self, state: &RunState<T>) -> Result<Vec<T>> {
        let mixture = match self.cfg.predict_mode {
            PredictMode::Ensemble => Some(ParticleSet::new(
                state.groups.iter().flat_map(|g| g.particles().iter().cloned()).collect(),
            )?),
            PredictMode::Central => Some(state.central.clone()),
            PredictMode::Group => None,
        };
        self.eval
            .examples()
            .par_iter()
            .map(|e| match &mixture {
                Some(ps) => posterior_predict(ps, &e.x),
                None => {
                    let ps = state.groups.get(e.s).ok_or_else(|| {
                        Error::InvalidArgument(format!("evaluation group {} has no particles", e.s))
                    })?;
                    posterior_predict(ps, &e.x)
                }
            })
            .collect()
    }

    pub fn fairness(&self, state: &RunState<T>) -> Result<FairnessReport> {
        evaluate_scores(&self.eval, &self.predict_eval(state)?, T::lit(self.cfg.threshold))
    }

    /// Indices of the two largest groups, larger first.
    fn largest_pair(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.num_groups()).collect();
        order.sort_by(|&a, &b| self.groups[b].len().cmp(&self.groups[a].len()).then(a.cmp(&b)));
        (order.len() >= 2).then(|| (order[0], order[1]))
    }

    /// `W₂` between the effective weights of the two largest groups.
    pub fn weight_distance(&self, state: &RunState<T>) -> Result<T> {
        let Some((a, b)) = self.largest_pair() else {
            return Ok(T::zero());
        };
        let layout = WeightLayout {
            theta_dim: self.theta_dim,
            live: self.groups[a].len().min(self.groups[b].len()),
            offset: self.offset,
        };
        weight_distance(&state.groups[a], &state.groups[b], layout)
    }

    /// Mean unweighted training cross-entropy of each group, as functions of a particle.
    pub fn group_losses(&self) -> Vec<GroupLoss<'_, T>> {
        self.groups.iter().map(|data| GroupLoss { data, theta_dim: self.theta_dim }).collect()
    }

    /// Appends the metrics record and `K_eff` for the current state.
    pub fn snapshot(&self, state: &mut RunState<T>) -> Result<()> {
        let report = self.fairness(state)?;
        let w2 = self.weight_distance(state)?.as_f64();
        let losses = self.group_losses();
        let refs: Vec<&dyn Loss<T>> = losses.iter().map(|l| l as &dyn Loss<T>).collect();
        state.k_eff.push(crate::theory::k_eff(&state.central, &refs).as_f64());
        state.history.push(EpochRecord::new(state.epoch, &report, w2));
        Ok(())
    }

    /// Transfer and disparity bound checks on the current state, under W₂ and under
    /// the configured divergence when it differs.
    pub fn bound_checks(&self, state: &RunState<T>) -> Vec<Value> {
        let losses = self.group_losses();
        let refs: Vec<&dyn Loss<T>> = losses.iter().map(|l| l as &dyn Loss<T>).collect();
        let mut configs = vec![BarycenterConfig::new(crate::central::Divergence::Wasserstein)];
        if self.cfg.divergence != crate::central::Divergence::Wasserstein {
            configs.push(self.bary.clone());
        }
        let mut out = Vec::new();
        for cfg in configs {
            let checks: [(&str, Result<_>); 2] = [
                ("transfer", check_transfer_bound(&state.groups, &state.central, &refs, &cfg, &self.kde)),
                ("disparity", check_disparity_bound(&state.groups, &state.central, &refs, &cfg, &self.kde)),
            ];
            for (kind, r) in checks {
                out.push(match r {
                    Ok(rep) => json!({ "status": if rep.pass { "PASS" } else { "FAIL" }, "report": rep }),
                    Err(Error::NotCheckable(why)) => json!({
                        "kind": kind, "divergence": cfg.divergence.name(), "status": "NOT_CHECKABLE", "reason": why
                    }),
                    Err(e) => json!({
                        "kind": kind, "divergence": cfg.divergence.name(), "status": "ERROR", "reason": e.to_string()
                    }),
                });
            }
        }
        out
    }

    /// Final summary written next to the metrics log.
    pub fn report(&self, state: &RunState<T>) -> Value {
        let config: serde_json::Map<String, Value> =
            self.cfg.entries().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
        json!({
            "config": config,
            "epochs": state.epoch,
            "final": state.history.last(),
            "k_eff": state.k_eff,
            "barycenter_objective": state.barycenter_objective,
            "bounds": self.bound_checks(state),
        })
    }
}

/// Mean cross-entropy of one group's training examples under the θ-block of `z`.
#[derive(Debug, Clone, Copy)]
pub struct GroupLoss<'a, T> {
    data: &'a [LabeledExample<T>],
    theta_dim: usize,
}

impl<T: Scalar> Loss<T> for GroupLoss<'_, T> {
    fn value(&self, z: &[T]) -> T {
        let theta = &z[..self.theta_dim];
        let total: T = self
            .data
            .iter()
            .map(|e| cross_entropy(prob_of(theta, &e.x).0, e.y))
            .sum();
        total / T::count(self.data.len().max(1))
    }
}

/// Constant `c` with `Σ σ(u_i + offset + c) = target`, found by bisection.
fn prior_shift<T: Scalar>(u: &[T], offset: T, target: T) -> T {
    let total = |c: T| u.iter().map(|&v| sigmoid(v + offset + c)).sum::<T>();
    let (mut lo, mut hi) = (T::lit(-60.0), T::lit(60.0));
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / T::lit(2.0)
}
