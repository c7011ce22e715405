//! Logistic-regression classifier with weighted cross-entropy and closed-form gradients.
//!
//! Parameters are laid out as `theta = [w_1..w_d, b]`, so `P = d + 1`.

use crate::data::{LabeledExample, MetaSet};
use crate::error::{Error, Result};
use crate::scalar::{logit, sigmoid, Scalar};

/// Probability clamp keeping cross-entropy finite.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub theta: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(theta: Vec<T>) -> Self {
        Self { theta }
    }

    pub fn zeros(d: usize) -> Self {
        Self { theta: vec![T::zero(); d + 1] }
    }

    /// Feature dimension `d` (one less than `P`).
    pub fn feature_dim(&self) -> usize {
        self.theta.len().saturating_sub(1)
    }
}

/// Raw (pre-sigmoid) selection weights; the effective weight is `σ(w_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights<T> {
    pub w: Vec<T>,
}

impl<T: Scalar> SampleWeights<T> {
    pub fn new(w: Vec<T>) -> Self {
        Self { w }
    }

    pub fn effective(&self) -> Vec<T> {
        self.w.iter().map(|&v| sigmoid(v)).collect()
    }
}

#[inline]
pub(crate) fn logit_of<T: Scalar>(theta: &[T], x: &[T]) -> T {
    let d = x.len();
    x.iter().zip(&theta[..d]).fold(theta[d], |acc, (&a, &b)| acc + a * b)
}

/// Clamped probability plus whether the clamp was active.
#[inline]
pub(crate) fn prob_of<T: Scalar>(theta: &[T], x: &[T]) -> (T, bool) {
    let eps = T::lit(PROB_EPS);
    let p = sigmoid(logit_of(theta, x));
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

#[inline]
pub(crate) fn cross_entropy<T: Scalar>(p: T, y: u8) -> T {
    if y == 1 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

fn check_dim<T: Scalar>(theta: &[T], x: &[T]) -> Result<()> {
    if theta.len() != x.len() + 1 {
        return Err(Error::Dimension { expected: theta.len().saturating_sub(1), got: x.len() });
    }
    Ok(())
}

/// `σ(θ·[x;1])`, clamped to `[1e-12, 1 - 1e-12]`.
pub fn predict_prob<T: Scalar>(params: &ModelParams<T>, x: &[T]) -> Result<T> {
    check_dim(&params.theta, x)?;
    Ok(prob_of(&params.theta, x).0)
}

/// `Σ_i σ(w_i) · CE(f_θ(x_i), y_i)`.
pub fn weighted_loss<T: Scalar>(
    params: &ModelParams<T>,
    weights: &SampleWeights<T>,
    group_data: &[LabeledExample<T>],
) -> Result<T> {
    if weights.w.len() != group_data.len() {
        return Err(Error::Size(format!(
            "{} weights for {} examples",
            weights.w.len(),
            group_data.len()
        )));
    }
    let mut total = T::zero();
    for (e, &w) in group_data.iter().zip(&weights.w) {
        check_dim(&params.theta, &e.x)?;
        total = total + sigmoid(w) * cross_entropy(prob_of(&params.theta, &e.x).0, e.y);
    }
    Ok(total)
}

/// Unweighted cross-entropy summed over the meta set.
pub fn meta_loss<T: Scalar>(params: &ModelParams<T>, meta: &MetaSet<T>) -> Result<T> {
    let mut total = T::zero();
    for e in &meta.examples {
        check_dim(&params.theta, &e.x)?;
        total = total + cross_entropy(prob_of(&params.theta, &e.x).0, e.y);
    }
    Ok(total)
}

/// Adds `scale · ∂CE/∂θ` for one example into `grad`. The clamp has zero slope.
#[inline]
pub(crate) fn accumulate_ce_grad<T: Scalar>(theta: &[T], e: &LabeledExample<T>, scale: T, grad: &mut [T]) {
    let (p, clamped) = prob_of(theta, &e.x);
    if clamped {
        return;
    }
    let y = if e.y == 1 { T::one() } else { T::zero() };
    let g = scale * (p - y);
    let d = e.x.len();
    for (gk, &xk) in grad[..d].iter_mut().zip(&e.x) {
        *gk = *gk + g * xk;
    }
    grad[d] = grad[d] + g;
}

/// Gradients of the log-likelihood part of the group posterior.
///
/// `grad_theta = -∇_θ[weighted loss + meta CE]`, `grad_w = -∇_w[weighted loss]`
/// with `∂/∂w_i = σ(w_i)(1 - σ(w_i)) · CE_i`.
pub fn grads_log_likelihood<T: Scalar>(
    params: &ModelParams<T>,
    weights: &SampleWeights<T>,
    group_data: &[LabeledExample<T>],
    meta: &MetaSet<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    if weights.w.len() != group_data.len() {
        return Err(Error::Size(format!(
            "{} weights for {} examples",
            weights.w.len(),
            group_data.len()
        )));
    }
    let theta = &params.theta;
    let mut g_theta = vec![T::zero(); theta.len()];
    let mut g_w = Vec::with_capacity(weights.w.len());
    for (e, &w) in group_data.iter().zip(&weights.w) {
        check_dim(theta, &e.x)?;
        let sw = sigmoid(w);
        accumulate_ce_grad(theta, e, -sw, &mut g_theta);
        let ce = cross_entropy(prob_of(theta, &e.x).0, e.y);
        g_w.push(-(sw * (T::one() - sw)) * ce);
    }
    for e in &meta.examples {
        check_dim(theta, &e.x)?;
        accumulate_ce_grad(theta, e, -T::one(), &mut g_theta);
    }
    Ok((g_theta, g_w))
}

/// Direction of the Bernoulli KL used by the pseudo-label surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(p_θ(y|x) ‖ pseudo)`.
    #[default]
    ModelToPseudo,
    /// `KL(pseudo ‖ p_θ(y|x))`.
    PseudoToModel,
}

fn xlogy_ratio<T: Scalar>(a: T, b: T) -> T {
    if a == T::zero() {
        T::zero()
    } else {
        a * (a / b).ln()
    }
}

fn soft_labels<T: Scalar>(pseudo: &MetaSet<T>) -> Result<&[[T; 2]]> {
    let labels = pseudo
        .soft_labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("pseudo meta set has no soft labels".into()))?;
    if labels.len() != pseudo.examples.len() {
        return Err(Error::Size("soft labels and examples differ in length".into()));
    }
    for (i, row) in labels.iter().enumerate() {
        if row.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::InvalidArgument(format!("soft label {i} outside [0,1]")));
        }
    }
    Ok(labels)
}

/// Sum of Bernoulli KL terms between the model and pseudo labels.
pub fn surrogate_meta_loss<T: Scalar>(
    params: &ModelParams<T>,
    pseudo: &MetaSet<T>,
    direction: KlDirection,
) -> Result<T> {
    let labels = soft_labels(pseudo)?;
    let eps = T::lit(PROB_EPS);
    let mut total = T::zero();
    for (e, row) in pseudo.examples.iter().zip(labels) {
        check_dim(&params.theta, &e.x)?;
        let p = prob_of(&params.theta, &e.x).0;
        let q = row[1];
        let kl = match direction {
            KlDirection::ModelToPseudo => {
                let q = q.max(eps).min(T::one() - eps);
                xlogy_ratio(p, q) + xlogy_ratio(T::one() - p, T::one() - q)
            }
            KlDirection::PseudoToModel => xlogy_ratio(q, p) + xlogy_ratio(T::one() - q, T::one() - p),
        };
        total = total + kl;
    }
    Ok(total)
}

/// `∇_θ` of [`surrogate_meta_loss`].
pub fn surrogate_meta_grad<T: Scalar>(
    params: &ModelParams<T>,
    pseudo: &MetaSet<T>,
    direction: KlDirection,
) -> Result<Vec<T>> {
    let labels = soft_labels(pseudo)?;
    let eps = T::lit(PROB_EPS);
    let theta = &params.theta;
    let mut grad = vec![T::zero(); theta.len()];
    for (e, row) in pseudo.examples.iter().zip(labels) {
        check_dim(theta, &e.x)?;
        let (p, clamped) = prob_of(theta, &e.x);
        if clamped {
            continue;
        }
        let q = row[1];
        let dl = match direction {
            KlDirection::ModelToPseudo => {
                let q = q.max(eps).min(T::one() - eps);
                (logit(p) - logit(q)) * p * (T::one() - p)
            }
            KlDirection::PseudoToModel => p - q,
        };
        let d = e.x.len();
        for (gk, &xk) in grad[..d].iter_mut().zip(&e.x) {
            *gk = *gk + dl * xk;
        }
        grad[d] = grad[d] + dl;
    }
    Ok(grad)
}
