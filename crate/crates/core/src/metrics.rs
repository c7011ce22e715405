//! Accuracy and group-fairness metrics, plus distances between weight posteriors.
//!
//! `dp` is the gap in positive rates of hard predictions, `ddp` the largest deviation
//! of a group's mean soft score from the overall mean, and `eo` the gap in true
//! positive rates. Gaps are max minus min over groups.

use serde::{Deserialize, Serialize};

use crate::central::solve_ot;
use crate::data::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{predict_prob, ModelParams};
use crate::particles::ParticleSet;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub acc: f64,
    pub dp: f64,
    pub ddp: f64,
    pub eo: f64,
    pub per_group_pos_rate: Vec<f64>,
    /// `None` for groups without positive examples.
    pub per_group_tpr: Vec<Option<f64>>,
}

/// Metrics for a single parameter vector.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>, threshold: T) -> Result<FairnessReport> {
    evaluate_with(data, threshold, |e| predict_prob(params, &e.x))
}

/// Metrics for any probability predictor.
pub fn evaluate_with<T, F>(data: &Dataset<T>, threshold: T, predict: F) -> Result<FairnessReport>
where
    T: Scalar,
    F: Fn(&LabeledExample<T>) -> Result<T>,
{
    let scores = data.examples().iter().map(predict).collect::<Result<Vec<T>>>()?;
    evaluate_scores(data, &scores, threshold)
}

/// Metrics from precomputed scores, one per example of `data` in order.
pub fn evaluate_scores<T: Scalar>(data: &Dataset<T>, scores: &[T], threshold: T) -> Result<FairnessReport> {
    if scores.len() != data.len() {
        return Err(Error::Size(format!("{} scores for {} examples", scores.len(), data.len())));
    }
    let s = data.num_groups();
    if s < 2 {
        return Err(Error::InvalidArgument(format!("fairness metrics need at least 2 groups, got {s}")));
    }
    if let Some(g) = data.group_sizes().iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("group {g} has no examples")));
    }
    if let Some(i) = scores.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("score of example {i}")));
    }

    let mut n = vec![0usize; s];
    let mut pos = vec![0usize; s];
    let mut soft = vec![0f64; s];
    let mut actual = vec![0usize; s];
    let mut true_pos = vec![0usize; s];
    let mut correct = 0usize;
    let mut soft_total = 0f64;
    for (e, &p) in data.examples().iter().zip(scores) {
        let hat = u8::from(p >= threshold);
        n[e.s] += 1;
        pos[e.s] += usize::from(hat);
        soft[e.s] += p.as_f64();
        soft_total += p.as_f64();
        correct += usize::from(hat == e.y);
        if e.y == 1 {
            actual[e.s] += 1;
            true_pos[e.s] += usize::from(hat);
        }
    }

    let rates: Vec<f64> = pos.iter().zip(&n).map(|(&p, &c)| p as f64 / c as f64).collect();
    let overall = soft_total / data.len() as f64;
    let ddp = soft.iter().zip(&n).map(|(&v, &c)| (v / c as f64 - overall).abs()).fold(0.0, f64::max);
    let tprs: Vec<Option<f64>> = true_pos
        .iter()
        .zip(&actual)
        .map(|(&tp, &a)| (a > 0).then(|| tp as f64 / a as f64))
        .collect();
    Ok(FairnessReport {
        acc: correct as f64 / data.len() as f64,
        dp: gap(rates.iter().copied()),
        ddp,
        eo: gap(tprs.iter().flatten().copied()),
        per_group_pos_rate: rates,
        per_group_tpr: tprs,
    })
}

fn gap(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() { hi - lo } else { 0.0 }
}

/// Bayesian model average of `predict_prob` over the θ-blocks of all particles.
pub fn posterior_predict<T: Scalar>(particles: &ParticleSet<T>, x: &[T]) -> Result<T> {
    let p = x.len() + 1;
    if particles.dim() < p {
        return Err(Error::Dimension { expected: p, got: particles.dim() });
    }
    let mut total = T::zero();
    for z in particles.iter() {
        total = total + predict_prob(&ModelParams::new(z.theta(p).to_vec()), x)?;
    }
    Ok(total / T::count(particles.len()))
}

/// Which coordinates of a particle hold live selection weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightLayout<T> {
    pub theta_dim: usize,
    /// Number of leading weight coordinates compared.
    pub live: usize,
    /// Raw weights are `z + offset`.
    pub offset: T,
}

/// `W₂` between the effective-weight vectors `σ(w)` of two particle sets.
pub fn weight_distance<T: Scalar>(a: &ParticleSet<T>, b: &ParticleSet<T>, layout: WeightLayout<T>) -> Result<T> {
    let range = layout.theta_dim..layout.theta_dim + layout.live;
    let map = |v: T| sigmoid(v + layout.offset);
    let pa = a.project(range.clone(), map)?;
    let pb = b.project(range, map)?;
    Ok(solve_ot(&pa, &pb)?.w2())
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub acc: f64,
    pub dp: f64,
    pub ddp: f64,
    pub eo: f64,
    pub w2_weights: f64,
    pub group_pos_rates: Vec<f64>,
    pub group_tprs: Vec<Option<f64>>,
}

impl EpochRecord {
    pub fn new(epoch: usize, report: &FairnessReport, w2_weights: f64) -> Self {
        Self {
            epoch,
            acc: report.acc,
            dp: report.dp,
            ddp: report.ddp,
            eo: report.eo,
            w2_weights,
            group_pos_rates: report.per_group_pos_rate.clone(),
            group_tprs: report.per_group_tpr.clone(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
