//! Existence-probability machinery: Gumbel-Softmax sampling of binary
//! masks, the straight-through ablation, mask regularization losses, and
//! the never-sampled pruning rule.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::sigmoid;
use crate::error::{Error, Result};
use crate::real::Real;

/// How binary masks are produced each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Stochastic Gumbel-Softmax sampling with straight-through hard values.
    #[default]
    Gumbel,
    /// Deterministic threshold on the existence probability.
    Ste,
    /// Masks forced to 1; mask logits receive no updates.
    AllOn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskLossKind {
    /// `(mean of mask values)^2`; the default.
    #[default]
    Squared,
    /// `mean of mask values`.
    L1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Gumbel-Softmax temperature; fixed over training.
    pub temperature: f64,
    pub mode: MaskMode,
    /// Existence-probability threshold for [`MaskMode::Ste`]; ties keep.
    pub ste_threshold: f64,
    /// Weight of the mask loss when no schedule entry is active.
    pub lambda: f64,
    pub loss_kind: MaskLossKind,
    /// Initial (present, absent) logits for newly created Gaussians.
    pub init_logits: [f64; 2],
    /// Number of draws in the never-sampled pruning rule.
    pub prune_repeats: usize,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            temperature: 0.5,
            mode: MaskMode::Gumbel,
            ste_threshold: 0.01,
            lambda: 0.0,
            loss_kind: MaskLossKind::Squared,
            // Existence probability starts near 0.95 so training begins
            // close to the unmasked model.
            init_logits: [3.0, 0.0],
            prune_repeats: 10,
            seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter(
                "mask temperature must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter(
                "mask lambda must be non-negative".into(),
            ));
        }
        if self.prune_repeats == 0 {
            return Err(Error::InvalidParameter(
                "prune repeats must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Draw the iteration's masks according to the configured mode.
    pub fn sample<T: Real>(&self, logits: &[Vector2<T>], seed: u64) -> MaskSample<T> {
        match self.mode {
            MaskMode::Gumbel => sample_masks(logits, self.temperature, seed),
            MaskMode::Ste => ste_masks(logits, self.ste_threshold),
            MaskMode::AllOn => MaskSample::all_on(logits.len()),
        }
    }

    /// Chain a gradient on the soft relaxation into the two logits.
    pub fn chain_to_logits<T: Real>(
        &self,
        sample: &MaskSample<T>,
        d_soft: &[T],
    ) -> Vec<Vector2<T>> {
        match self.mode {
            MaskMode::AllOn => vec![Vector2::zeros(); d_soft.len()],
            MaskMode::Gumbel => {
                let inv_tau = T::of(1.0 / self.temperature);
                sample
                    .soft
                    .iter()
                    .zip(d_soft)
                    .map(|(&s, &g)| {
                        let f = g * s * (T::one() - s) * inv_tau;
                        Vector2::new(f, -f)
                    })
                    .collect()
            }
            MaskMode::Ste => sample
                .soft
                .iter()
                .zip(d_soft)
                .map(|(&s, &g)| {
                    let f = g * s * (T::one() - s);
                    Vector2::new(f, -f)
                })
                .collect(),
        }
    }
}

/// One sampled existence mask per Gaussian plus the relaxation used for
/// gradient pass-through.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample<T: Real> {
    /// Binary sample; the value the forward pass consumes.
    pub hard: Vec<bool>,
    /// Relaxed "present" probability carrying the gradient.
    pub soft: Vec<T>,
    /// When set, forward computations consume `hard` exactly.
    pub pass_through: bool,
}

impl<T: Real> MaskSample<T> {
    pub fn all_on(n: usize) -> Self {
        MaskSample {
            hard: vec![true; n],
            soft: vec![T::one(); n],
            pass_through: true,
        }
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    /// Mask values as consumed by the forward pass.
    pub fn forward_values(&self) -> Vec<T> {
        if self.pass_through {
            self.hard
                .iter()
                .map(|&h| if h { T::one() } else { T::zero() })
                .collect()
        } else {
            self.soft.clone()
        }
    }
}

/// Probability that each Gaussian exists: softmax of its two scores,
/// "present" component.
pub fn existence_prob<T: Real>(mask_logits: &[Vector2<T>]) -> Vec<T> {
    mask_logits.iter().map(|z| sigmoid(z.x - z.y)).collect()
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    -(-u.ln()).ln()
}

/// Gumbel-Softmax sample: `hard` is the argmax over the two perturbed
/// scores, `soft` the tempered softmax sharing the same noise. One sample
/// per Gaussian per training iteration, shared by every pixel.
pub fn sample_masks<T: Real>(
    mask_logits: &[Vector2<T>],
    temperature: f64,
    seed: u64,
) -> MaskSample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hard = Vec::with_capacity(mask_logits.len());
    let mut soft = Vec::with_capacity(mask_logits.len());
    for z in mask_logits {
        let gap = (z.x.to_f64() + gumbel(&mut rng)) - (z.y.to_f64() + gumbel(&mut rng));
        hard.push(gap >= 0.0);
        soft.push(T::of(sigmoid(gap / temperature)));
    }
    MaskSample {
        hard,
        soft,
        pass_through: true,
    }
}

/// Deterministic masks: present iff the existence probability reaches the
/// threshold (ties keep); the gradient passes straight through the
/// probability itself.
pub fn ste_masks<T: Real>(mask_logits: &[Vector2<T>], threshold: f64) -> MaskSample<T> {
    let probs = existence_prob(mask_logits);
    MaskSample {
        hard: probs.iter().map(|p| p.to_f64() >= threshold).collect(),
        soft: probs,
        pass_through: true,
    }
}

/// Mask regularization loss over the forward mask values.
pub fn mask_loss<T: Real>(values: &[T], kind: MaskLossKind) -> T {
    assert!(!values.is_empty(), "mask loss needs at least one Gaussian");
    let mean = values.iter().fold(T::zero(), |a, &b| a + b) / T::of(values.len() as f64);
    match kind {
        MaskLossKind::Squared => mean * mean,
        MaskLossKind::L1 => mean,
    }
}

/// Loss plus its gradient with respect to each mask value.
pub fn mask_loss_and_grad<T: Real>(values: &[T], kind: MaskLossKind) -> (T, Vec<T>) {
    let n = T::of(values.len() as f64);
    let mean = values.iter().fold(T::zero(), |a, &b| a + b) / n;
    match kind {
        MaskLossKind::Squared => {
            let g = T::of(2.0) * mean / n;
            (mean * mean, vec![g; values.len()])
        }
        MaskLossKind::L1 => (mean, vec![T::one() / n; values.len()]),
    }
}

/// Keep a Gaussian iff at least one of `repeats` independent Gumbel draws
/// samples it present. Returns the sorted keep set.
pub fn prune_never_sampled<T: Real>(
    mask_logits: &[Vector2<T>],
    repeats: usize,
    seed: u64,
) -> Vec<usize> {
    assert!(repeats >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(mask_logits.len());
    for (i, z) in mask_logits.iter().enumerate() {
        let gap0 = z.x.to_f64() - z.y.to_f64();
        let mut sampled = false;
        for _ in 0..repeats {
            // Drawing both noises keeps the stream layout identical to
            // sample_masks.
            let g = gap0 + gumbel(&mut rng) - gumbel(&mut rng);
            if g >= 0.0 {
                sampled = true;
            }
        }
        if sampled {
            keep.push(i);
        }
    }
    keep
}
