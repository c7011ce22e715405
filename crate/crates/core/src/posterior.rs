//! Group log-posterior: weighted training loss, meta loss and the soft weight prior.
//!
//! A particle stores `z = [θ (P entries), u (N̄ entries)]`. The raw selection weight of
//! live slot `i` is `w_i = u_i + weight_offset`; slots `i ≥ N_s` are padding and take no
//! part in the density unless [`PriorRange::Padded`] is selected.

use crate::data::{LabeledExample, MetaSet};
use crate::error::{Error, Result};
use crate::model::{self, accumulate_ce_grad, cross_entropy, prob_of, KlDirection, ModelParams};
use crate::scalar::{sigmoid, Scalar};

/// Sign of the quadratic weight prior inside `log p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorSign {
    /// `-(Σσ(w) - βN)²`: deviation from the target is penalized.
    #[default]
    Penalty,
    /// `+(Σσ(w) - βN)²`, the expression read verbatim.
    Literal,
}

/// Which weight slots the prior sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorRange {
    /// Live slots only, target `β N_s`.
    #[default]
    Live,
    /// All `N̄` slots including padding, target `β N̄`.
    Padded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig<T> {
    pub beta: T,
    pub prior_scale: T,
    pub sign: PriorSign,
    pub range: PriorRange,
}

impl<T: Scalar> PriorConfig<T> {
    pub fn new(beta: T) -> Result<Self> {
        if !(beta > T::zero() && beta < T::one()) {
            return Err(Error::InvalidArgument(format!("beta {beta} outside (0,1)")));
        }
        Ok(Self { beta, prior_scale: T::one(), sign: PriorSign::Penalty, range: PriorRange::Live })
    }

    pub fn with_scale(mut self, scale: T) -> Self {
        self.prior_scale = scale;
        self
    }
}

/// How the meta set enters the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetaTerm {
    /// Unweighted cross-entropy on clean labels.
    #[default]
    CrossEntropy,
    /// Bernoulli KL against the set's soft labels.
    Surrogate(KlDirection),
}

/// `p_s(θ, w) = p(θ, w | D_t^s, D_m)` embedded in `R^{P+N̄}`.
#[derive(Debug, Clone)]
pub struct GroupPosterior<'a, T> {
    pub group: usize,
    data: &'a [LabeledExample<T>],
    meta: &'a MetaSet<T>,
    meta_term: MetaTerm,
    prior: PriorConfig<T>,
    theta_dim: usize,
    n_max: usize,
    weight_offset: T,
    batch: Option<(Vec<usize>, T)>,
}

impl<'a, T: Scalar> GroupPosterior<'a, T> {
    pub fn new(
        group: usize,
        data: &'a [LabeledExample<T>],
        meta: &'a MetaSet<T>,
        prior: PriorConfig<T>,
        theta_dim: usize,
        n_max: usize,
    ) -> Result<Self> {
        if data.len() > n_max {
            return Err(Error::InvalidArgument(format!(
                "group size {} exceeds padded size {n_max}",
                data.len()
            )));
        }
        if let Some(e) = data.iter().chain(&meta.examples).find(|e| e.x.len() + 1 != theta_dim) {
            return Err(Error::Dimension { expected: theta_dim - 1, got: e.x.len() });
        }
        Ok(Self {
            group,
            data,
            meta,
            meta_term: MetaTerm::CrossEntropy,
            prior,
            theta_dim,
            n_max,
            weight_offset: T::zero(),
            batch: None,
        })
    }

    pub fn with_meta_term(mut self, term: MetaTerm) -> Result<Self> {
        if matches!(term, MetaTerm::Surrogate(_)) && self.meta.soft_labels.is_none() {
            return Err(Error::InvalidArgument("surrogate meta term needs soft labels".into()));
        }
        self.meta_term = term;
        Ok(self)
    }

    /// Stores weight coordinates relative to `offset`: `w_i = z[P+i] + offset`.
    pub fn with_weight_offset(mut self, offset: T) -> Self {
        self.weight_offset = offset;
        self
    }

    /// Restricts the training loss to `indices`, scaled by `N_s / |indices|`.
    pub fn with_batch(mut self, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.data.len()) {
            return Err(Error::InvalidArgument("invalid minibatch indices".into()));
        }
        let scale = T::count(self.data.len()) / T::count(indices.len());
        self.batch = Some((indices, scale));
        Ok(self)
    }

    pub fn group_size(&self) -> usize {
        self.data.len()
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `P + N̄`.
    pub fn dim(&self) -> usize {
        self.theta_dim + self.n_max
    }

    pub fn prior(&self) -> &PriorConfig<T> {
        &self.prior
    }

    pub fn weight_offset(&self) -> T {
        self.weight_offset
    }

    pub fn data(&self) -> &'a [LabeledExample<T>] {
        self.data
    }

    fn check(&self, z: &[T]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: z.len() });
        }
        Ok(())
    }

    fn prior_slots(&self) -> (usize, T) {
        match self.prior.range {
            PriorRange::Live => (self.data.len(), self.prior.beta * T::count(self.data.len())),
            PriorRange::Padded => (self.n_max, self.prior.beta * T::count(self.n_max)),
        }
    }

    /// `Σσ(w_i) - target` over the prior's slots.
    pub fn prior_deviation(&self, z: &[T]) -> Result<T> {
        self.check(z)?;
        let (slots, target) = self.prior_slots();
        let w = &z[self.theta_dim..self.theta_dim + slots];
        Ok(w.iter().map(|&u| sigmoid(u + self.weight_offset)).sum::<T>() - target)
    }

    fn sign(&self) -> T {
        match self.prior.sign {
            PriorSign::Penalty => -T::one(),
            PriorSign::Literal => T::one(),
        }
    }

    fn meta_value(&self, theta: &[T]) -> Result<T> {
        let params = ModelParams::new(theta.to_vec());
        match self.meta_term {
            MetaTerm::CrossEntropy => model::meta_loss(&params, self.meta),
            MetaTerm::Surrogate(dir) => model::surrogate_meta_loss(&params, self.meta, dir),
        }
    }

    fn batch_iter(&self) -> Box<dyn Iterator<Item = usize> + '_> {
        match &self.batch {
            Some((idx, _)) => Box::new(idx.iter().copied()),
            None => Box::new(0..self.data.len()),
        }
    }

    fn loss_scale(&self) -> T {
        self.batch.as_ref().map_or(T::one(), |(_, s)| *s)
    }

    /// `-[weighted loss] - [meta loss] ∓ scale·(Σσ(w_i) - βN_s)²`.
    pub fn log_post(&self, z: &[T]) -> Result<T> {
        self.check(z)?;
        let theta = &z[..self.theta_dim];
        let w = &z[self.theta_dim..];
        let mut loss = T::zero();
        for i in self.batch_iter() {
            let e = &self.data[i];
            loss = loss + sigmoid(w[i] + self.weight_offset) * cross_entropy(prob_of(theta, &e.x).0, e.y);
        }
        loss = loss * self.loss_scale();
        let meta = self.meta_value(theta)?;
        let dev = self.prior_deviation(z)?;
        Ok(-loss - meta + self.sign() * self.prior.prior_scale * dev * dev)
    }

    /// Gradient of [`log_post`](Self::log_post); padded slots get exactly 0 under [`PriorRange::Live`].
    pub fn grad_log_post(&self, z: &[T]) -> Result<Vec<T>> {
        self.check(z)?;
        let p = self.theta_dim;
        let theta = &z[..p];
        let mut grad = vec![T::zero(); z.len()];
        let scale = self.loss_scale();

        for i in self.batch_iter() {
            let e = &self.data[i];
            let sw = sigmoid(z[p + i] + self.weight_offset);
            accumulate_ce_grad(theta, e, -(sw * scale), &mut grad[..p]);
            let ce = cross_entropy(prob_of(theta, &e.x).0, e.y);
            grad[p + i] = -(scale * sw * (T::one() - sw) * ce);
        }

        match self.meta_term {
            MetaTerm::CrossEntropy => {
                for e in &self.meta.examples {
                    accumulate_ce_grad(theta, e, -T::one(), &mut grad[..p]);
                }
            }
            MetaTerm::Surrogate(dir) => {
                let g = model::surrogate_meta_grad(&ModelParams::new(theta.to_vec()), self.meta, dir)?;
                for (a, b) in grad[..p].iter_mut().zip(g) {
                    *a = *a - b;
                }
            }
        }

        let (slots, _) = self.prior_slots();
        let dev = self.prior_deviation(z)?;
        let coeff = self.sign() * T::lit(2.0) * self.prior.prior_scale * dev;
        for i in 0..slots {
            let s = sigmoid(z[p + i] + self.weight_offset);
            grad[p + i] = grad[p + i] + coeff * s * (T::one() - s);
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(x: Vec<f64>, y: u8) -> LabeledExample<f64> {
        LabeledExample::new(x, y, 0)
    }

    #[test]
    fn zero_data_on_prior_manifold_is_zero() {
        let meta = MetaSet::empty();
        let data: Vec<LabeledExample<f64>> = Vec::new();
        let gp = GroupPosterior::new(0, &data, &meta, PriorConfig::new(0.25).unwrap(), 2, 3).unwrap();
        let z = vec![0.4, -0.1, 0.7, 0.0, 0.0];
        assert_eq!(gp.log_post(&z).unwrap(), 0.0);
    }

    #[test]
    fn unit_prior_deviation_contributes_minus_one() {
        // Two live examples with zero-loss labels; Σσ(w) = βN_s + 1.
        let data = vec![ex(vec![0.0], 1), ex(vec![0.0], 1)];
        let meta = MetaSet::empty();
        let gp = GroupPosterior::new(0, &data, &meta, PriorConfig::new(0.25).unwrap(), 2, 2).unwrap();
        // target = 0.5, want Σσ = 1.5 -> σ(w) = 0.75 each
        let w = logit(0.75);
        let z = vec![0.0, 1e3, w, w];
        let lp = gp.log_post(&z).unwrap();
        assert!((lp + 1.0).abs() < 1e-11, "{lp}");
    }

    #[test]
    fn hand_summed_two_example_instance() {
        let data = vec![ex(vec![1.0, -0.5], 1), ex(vec![0.3, 2.0], 0)];
        let meta = MetaSet::new(vec![ex(vec![-1.0, 1.0], 1)]);
        let prior = PriorConfig::new(0.3).unwrap().with_scale(2.0);
        let gp = GroupPosterior::new(0, &data, &meta, prior, 3, 4).unwrap();
        let z = vec![0.5, -1.0, 0.25, 0.2, -0.7, 9.0, -9.0];

        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let p1 = sig(0.5 * 1.0 - 1.0 * -0.5 + 0.25);
        let p2 = sig(0.5 * 0.3 - 1.0 * 2.0 + 0.25);
        let pm = sig(0.5 * -1.0 - 1.0 * 1.0 + 0.25);
        let weighted = sig(0.2) * -(p1.ln()) + sig(-0.7) * -((1.0 - p2).ln());
        let meta_ce = -(pm.ln());
        let dev = sig(0.2) + sig(-0.7) - 0.3 * 2.0;
        let expected = -weighted - meta_ce - 2.0 * dev * dev;
        assert!((gp.log_post(&z).unwrap() - expected).abs() < 1e-10);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<LabeledExample<f64>>, MetaSet<f64>, usize, usize) {
        let d = rng.random_range(1..4);
        let n = rng.random_range(1..6);
        let n_max = n + rng.random_range(0..3);
        let data = (0..n)
            .map(|i| ex((0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), (i % 2) as u8))
            .collect();
        let meta = MetaSet::new(
            (0..rng.random_range(0..3))
                .map(|i| ex((0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), (i % 2) as u8))
                .collect(),
        );
        (data, meta, d + 1, n_max)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..100 {
            let (data, meta, p, n_max) = random_instance(&mut rng);
            let prior = PriorConfig::new(rng.random_range(0.05..0.9)).unwrap().with_scale(rng.random_range(0.5..2.0));
            let offset = rng.random_range(-2.0..0.0);
            let gp = GroupPosterior::new(0, &data, &meta, prior, p, n_max).unwrap().with_weight_offset(offset);
            let z: Vec<f64> = (0..p + n_max).map(|_| rng.random_range(-1.5..1.5)).collect();
            let g = gp.grad_log_post(&z).unwrap();
            for k in 0..z.len() {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[k] += h;
                zm[k] -= h;
                let fd = (gp.log_post(&zp).unwrap() - gp.log_post(&zm).unwrap()) / (2.0 * h);
                let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-8);
                assert!(err < 1e-4 || (g[k] - fd).abs() < 1e-9, "k={k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn padded_slots_are_inert() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (data, meta, p, _) = random_instance(&mut rng);
            let n_max = data.len() + 3;
            let gp = GroupPosterior::new(0, &data, &meta, PriorConfig::new(0.1).unwrap(), p, n_max).unwrap();
            let z: Vec<f64> = (0..p + n_max).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = gp.grad_log_post(&z).unwrap();
            assert!(g[p + data.len()..].iter().all(|&v| v == 0.0));
            let mut moved = z.clone();
            for v in &mut moved[p + data.len()..] {
                *v += rng.random_range(-5.0..5.0);
            }
            assert_eq!(gp.log_post(&z).unwrap(), gp.log_post(&moved).unwrap());
            assert_eq!(g, gp.grad_log_post(&moved).unwrap());
        }
    }

    #[test]
    fn prior_gradient_closed_form() {
        let data = vec![ex(vec![0.0], 1); 3];
        let meta = MetaSet::empty();
        let prior = PriorConfig::new(0.2).unwrap().with_scale(1.5);
        let gp = GroupPosterior::new(0, &data, &meta, prior, 2, 3).unwrap();
        // θ making the data loss vanish leaves only the prior in the w-gradient.
        let z = vec![0.0, 1e3, 0.3, -0.4, 1.1];
        let g = gp.grad_log_post(&z).unwrap();
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let dev: f64 = z[2..].iter().map(|&w| sig(w)).sum::<f64>() - 0.2 * 3.0;
        for i in 0..3 {
            let s = sig(z[2 + i]);
            let expected = -2.0 * 1.5 * dev * s * (1.0 - s);
            assert!((g[2 + i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn literal_sign_and_padded_range_are_selectable() {
        let data = vec![ex(vec![0.0], 1)];
        let meta = MetaSet::empty();
        let mut prior = PriorConfig::new(0.5).unwrap();
        prior.sign = PriorSign::Literal;
        prior.range = PriorRange::Padded;
        let gp = GroupPosterior::new(0, &data, &meta, prior, 2, 3).unwrap();
        let z = vec![0.0, 1e3, 3.0, 0.0, 0.0];
        let dev = 1.0 / (1.0 + (-3.0f64).exp()) + 1.0 - 1.5;
        assert!((gp.log_post(&z).unwrap() - dev * dev).abs() < 1e-12);
        assert!(gp.grad_log_post(&z).unwrap()[4] != 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let data = vec![ex(vec![0.0], 1)];
        let meta = MetaSet::empty();
        let gp = GroupPosterior::new(0, &data, &meta, PriorConfig::new(0.5).unwrap(), 2, 2).unwrap();
        assert!(matches!(gp.log_post(&[0.0; 3]), Err(Error::Dimension { .. })));
        assert!(gp.grad_log_post(&[0.0; 5]).is_err());
    }

    #[test]
    fn minibatch_scales_to_full_sum_in_expectation() {
        let data = vec![ex(vec![1.0], 1), ex(vec![1.0], 1)];
        let meta = MetaSet::empty();
        let prior = PriorConfig::new(0.5).unwrap();
        let z = vec![0.2, 0.1, 0.0, 0.0];
        let full = GroupPosterior::new(0, &data, &meta, prior, 2, 2).unwrap();
        let half = full.clone().with_batch(vec![0]).unwrap();
        // identical examples: the scaled half batch equals the full sum
        assert!((full.log_post(&z).unwrap() - half.log_post(&z).unwrap()).abs() < 1e-14);
    }
}
