//! Particle belief over object pose with a kernel density estimate,
//! hypothesis subsampling, Bayesian contact updates and KL diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::registration::ScoredPose;
use crate::rng_from_seed;
use crate::se3::{jitter_pose, Pose6D, SE3Kernel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pose: Pose6D,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    particles: Vec<Particle>,
    kernel: SE3Kernel,
}

/// Gaussian jitter applied to resampled particles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// m, per axis
    pub sigma_pos: f64,
    /// rad, RMS geodesic
    pub sigma_rot: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            sigma_pos: 0.005,
            sigma_rot: 2f64.to_radians(),
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        sigma_pos: 0.0,
        sigma_rot: 0.0,
    };
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub belief: BeliefState,
    /// Every particle had zero likelihood; weights were reset to uniform.
    pub degenerate: bool,
    /// Source particle of each output particle.
    pub ancestors: Vec<usize>,
}

/// `k` poses; index 0 is the MLE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub poses: Vec<Pose6D>,
}

impl HypothesisSet {
    pub fn mle(&self) -> &Pose6D {
        &self.poses[0]
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlResult {
    pub value: f64,
    /// A pre-contact probability was clamped to avoid division by zero.
    pub clamped: bool,
}

const KL_EPS: f64 = 1e-12;

impl BeliefState {
    /// Normalizes the given weights. Fails on an empty set, negative or
    /// non-finite weights, or weights summing to zero.
    pub fn new(poses_weights: Vec<(Pose6D, f64)>, kernel: SE3Kernel) -> Result<Self> {
        kernel.validate()?;
        if poses_weights.is_empty() {
            return Err(Error::InvalidInput("belief needs at least one particle".into()));
        }
        if poses_weights.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = poses_weights.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("weights sum to zero".into()));
        }
        Ok(Self {
            particles: poses_weights
                .into_iter()
                .map(|(pose, w)| Particle {
                    pose,
                    weight: w / total,
                })
                .collect(),
            kernel,
        })
    }

    pub fn uniform(poses: Vec<Pose6D>, kernel: SE3Kernel) -> Result<Self> {
        Self::new(poses.into_iter().map(|p| (p, 1.0)).collect(), kernel)
    }

    /// Belief from registration output; invalid or zero-score fits are
    /// dropped.
    pub fn from_scored(fits: &[ScoredPose], kernel: SE3Kernel) -> Result<Self> {
        let pw: Vec<_> = fits
            .iter()
            .filter(|f| f.valid && f.score > 0.0)
            .map(|f| (f.pose, f.score))
            .collect();
        Self::new(pw, kernel)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn kernel(&self) -> &SE3Kernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn density(&self, y: &Pose6D) -> f64 {
        self.particles
            .iter()
            .map(|p| p.weight * self.kernel.eval(y, &p.pose))
            .sum()
    }

    /// `ln density(y)` by log-sum-exp; finite wherever some weight is
    /// positive, even when every kernel term underflows.
    pub fn log_density(&self, y: &Pose6D) -> f64 {
        let terms: Vec<f64> = self
            .particles
            .iter()
            .filter(|p| p.weight > 0.0)
            .map(|p| p.weight.ln() + self.kernel.log_eval(y, &p.pose))
            .collect();
        log_sum_exp(&terms)
    }

    /// Index of the particle with the highest density; first index wins ties.
    pub fn mle_index(&self) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, p) in self.particles.iter().enumerate() {
            let v = self.log_density(&p.pose);
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }

    pub fn mle(&self) -> Pose6D {
        self.particles[self.mle_index()].pose
    }

    /// Weighted mean position.
    pub fn mean_position(&self) -> nalgebra::Vector3<f64> {
        self.particles.iter().map(|p| p.pose.position * p.weight).sum()
    }

    /// MLE first, then `k − 1` weighted draws with replacement. Fails when
    /// `k < 2` or when more draws are requested than there are particles.
    pub fn subsample_hypotheses(&self, k: usize, seed: u64) -> Result<HypothesisSet> {
        if k < 2 {
            return Err(Error::InvalidInput("need at least two hypotheses".into()));
        }
        if k - 1 > self.len() {
            return Err(Error::InvalidInput(format!(
                "cannot draw {} hypotheses from {} particles",
                k - 1,
                self.len()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let cdf = self.cdf();
        let mut poses = Vec::with_capacity(k);
        poses.push(self.mle());
        for _ in 1..k {
            let u: f64 = rng.random();
            poses.push(self.particles[draw(&cdf, u)].pose);
        }
        Ok(HypothesisSet { poses })
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.particles
            .iter()
            .map(|p| {
                acc += p.weight;
                acc
            })
            .collect()
    }

    /// Bayes update `w_j ← η·lik_j·w_j`, followed by low-variance resampling
    /// to `n_out` particles and Gaussian jitter. Output weights are uniform.
    pub fn update(
        &self,
        likelihoods: &[f64],
        n_out: usize,
        jitter: Jitter,
        seed: u64,
    ) -> Result<UpdateOutcome> {
        if likelihoods.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: likelihoods.len(),
            });
        }
        if likelihoods.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidInput("likelihoods must be finite and nonnegative".into()));
        }
        if n_out == 0 {
            return Err(Error::InvalidInput("n_out must be positive".into()));
        }
        let mut weights: Vec<f64> = self
            .particles
            .iter()
            .zip(likelihoods)
            .map(|(p, l)| p.weight * l)
            .collect();
        let total: f64 = weights.iter().sum();
        let degenerate = !(total > 0.0);
        if degenerate {
            weights = vec![1.0 / self.len() as f64; self.len()];
        } else {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        let mut rng = rng_from_seed(seed);
        let ancestors = systematic_resample(&weights, n_out, rng.random());
        let particles = ancestors
            .iter()
            .map(|&a| Particle {
                pose: jitter_pose(&mut rng, &self.particles[a].pose, jitter.sigma_pos, jitter.sigma_rot),
                weight: 1.0 / n_out as f64,
            })
            .collect();
        Ok(UpdateOutcome {
            belief: BeliefState {
                particles,
                kernel: self.kernel,
            },
            degenerate,
            ancestors,
        })
    }

    /// Hypothesis-restricted normalized density: `b̂(p_i) ∝ b(p_i)`.
    pub fn normalized_over(&self, hyp: &HypothesisSet) -> Vec<f64> {
        let logs: Vec<f64> = hyp.poses.iter().map(|p| self.log_density(p)).collect();
        let z = log_sum_exp(&logs);
        logs.iter().map(|l| (l - z).exp()).collect()
    }

    /// CSV rows `t,j,px,py,pz,qw,qx,qy,qz,w`.
    pub fn to_csv_rows(&self, t: usize) -> String {
        let mut s = String::new();
        for (j, p) in self.particles.iter().enumerate() {
            let a = p.pose.to_array();
            let _ = writeln!(
                s,
                "{t},{j},{},{},{},{},{},{},{},{}",
                a[0], a[1], a[2], a[3], a[4], a[5], a[6], p.weight
            );
        }
        s
    }
}

pub const BELIEF_CSV_HEADER: &str = "t,j,px,py,pz,qw,qx,qy,qz,w";

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap();
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}

/// Low-variance resampling: one uniform offset, `n` evenly spaced pointers.
pub fn systematic_resample(weights: &[f64], n: usize, offset: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut acc = weights[0];
    for m in 0..n {
        let u = (offset + m as f64) * step;
        while u >= acc && i + 1 < weights.len() {
            i += 1;
            acc += weights[i];
        }
        out.push(i);
    }
    out
}

/// KL divergence between two discrete distributions, `Σ p ln(p/q)`, with
/// `q` clamped to ε where `p > 0`.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> KlResult {
    let mut clamped = false;
    let mut value = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        let qi = if qi <= 0.0 {
            clamped = true;
            KL_EPS
        } else {
            qi
        };
        value += pi * (pi / qi).ln();
    }
    KlResult {
        value: value.max(0.0),
        clamped,
    }
}

/// KL(post ‖ pre) over the hypothesis-restricted normalized densities.
pub fn kl_divergence(post: &BeliefState, pre: &BeliefState, hyp: &HypothesisSet) -> KlResult {
    kl_discrete(&post.normalized_over(hyp), &pre.normalized_over(hyp))
}
