//! All-coordinate random-walk Metropolis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{metropolis_accept, AcceptanceTally, ScaleTuner};
use crate::error::{Error, Result};
use crate::linalg::DenseCholesky;
use crate::posterior::{EvalCost, Target};

/// Shape of the random-walk proposal covariance. The proposal is
/// `x' = x + N(0, alpha·Sigma)`, where the premultiplier `alpha` is the
/// quantity the scale tuner adapts.
#[derive(Debug, Clone)]
pub enum ProposalCovariance {
    /// Sigma = I.
    Identity,
    /// Sigma = diag(variances).
    Diagonal(Vec<f64>),
    /// Dense row-major covariance matrix (must be symmetric; typically an
    /// empirical covariance estimated from an earlier trace).
    Full(Vec<f64>),
}

/// Proposal covariance plus a ridge added before factorization.
///
/// Empirical covariances from short traces are often singular, so `Full`
/// shapes usually need a small `jitter` on the diagonal; a matrix that is
/// still not positive definite after the ridge is a configuration error.
#[derive(Debug, Clone)]
pub struct ProposalSpec {
    covariance: ProposalCovariance,
    jitter: f64,
}

impl ProposalSpec {
    pub fn identity() -> Self {
        ProposalSpec { covariance: ProposalCovariance::Identity, jitter: 0.0 }
    }

    pub fn diagonal(variances: Vec<f64>) -> Self {
        ProposalSpec { covariance: ProposalCovariance::Diagonal(variances), jitter: 0.0 }
    }

    pub fn full(covariance: Vec<f64>) -> Self {
        ProposalSpec { covariance: ProposalCovariance::Full(covariance), jitter: 0.0 }
    }

    /// Sets the diagonal ridge added before factorization.
    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub(crate) fn prepare(&self, dim: usize) -> Result<PreparedProposal> {
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::config(format!(
                "proposal jitter must be finite and non-negative, got {}",
                self.jitter
            )));
        }
        match &self.covariance {
            ProposalCovariance::Identity => Ok(PreparedProposal::Identity),
            ProposalCovariance::Diagonal(vars) => {
                if vars.len() != dim {
                    return Err(Error::config(format!(
                        "diagonal proposal has {} variances for a {dim}-dimensional target",
                        vars.len()
                    )));
                }
                if vars.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::config(
                        "diagonal proposal variances must be positive finite numbers",
                    ));
                }
                Ok(PreparedProposal::Scales(
                    vars.iter().map(|v| (v + self.jitter).sqrt()).collect(),
                ))
            }
            ProposalCovariance::Full(cov) => {
                if cov.len() != dim * dim {
                    return Err(Error::config(format!(
                        "full proposal covariance has {} entries, expected {dim}×{dim}",
                        cov.len()
                    )));
                }
                let scale = cov
                    .iter()
                    .fold(0.0_f64, |m, v| m.max(v.abs()))
                    .max(1.0);
                for r in 0..dim {
                    for c in 0..r {
                        if (cov[r * dim + c] - cov[c * dim + r]).abs() > 1e-8 * scale {
                            return Err(Error::config(format!(
                                "proposal covariance is not symmetric at ({r}, {c})"
                            )));
                        }
                    }
                }
                let mut ridged = cov.clone();
                for i in 0..dim {
                    ridged[i * dim + i] += self.jitter;
                }
                let chol = DenseCholesky::factor(&ridged, dim).map_err(|_| {
                    Error::config(format!(
                        "proposal covariance is not positive definite (jitter {})",
                        self.jitter
                    ))
                })?;
                Ok(PreparedProposal::Factor(chol))
            }
        }
    }
}

/// Factored proposal ready to colour standard-normal draws.
pub(crate) enum PreparedProposal {
    Identity,
    Scales(Vec<f64>),
    Factor(DenseCholesky),
}

impl PreparedProposal {
    /// Maps iid standard normals `z` to a draw from `N(0, Sigma)`.
    fn colour(&self, z: Vec<f64>) -> Vec<f64> {
        match self {
            PreparedProposal::Identity => z,
            PreparedProposal::Scales(s) => {
                z.iter().zip(s).map(|(zi, si)| zi * si).collect()
            }
            PreparedProposal::Factor(chol) => chol.multiply_lower(&z),
        }
    }
}

/// Random-walk Metropolis over all coordinates at once: one forward
/// evaluation per step, acceptance driven by the joint prior/likelihood
/// ratio. The RNG order per step is `dim` standard normals followed by the
/// acceptance variate when the log-ratio is negative.
pub struct RwmKernel<'a, T: Target> {
    target: &'a T,
    state: Vec<f64>,
    log_prior: f64,
    log_like: f64,
    alpha: f64,
    proposal: PreparedProposal,
    cost: EvalCost,
    tally: AcceptanceTally,
    tuner: Option<ScaleTuner>,
}

impl<'a, T: Target> RwmKernel<'a, T> {
    /// Starts a chain at `init` with covariance premultiplier `alpha`.
    pub fn new(target: &'a T, init: Vec<f64>, alpha: f64, spec: &ProposalSpec) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config(format!(
                "proposal premultiplier must be a positive finite number, got {alpha}"
            )));
        }
        if init.len() != target.dim() {
            return Err(Error::config(format!(
                "initial state has {} coordinates, target has {}",
                init.len(),
                target.dim()
            )));
        }
        let proposal = spec.prepare(init.len())?;
        let log_prior = target.log_prior(&init);
        if log_prior == f64::NEG_INFINITY {
            return Err(Error::config(
                "initial state lies outside the prior support",
            ));
        }
        let mut cost = EvalCost::default();
        let log_like = target.log_likelihood(&init, &mut cost)?;
        if !log_like.is_finite() {
            return Err(Error::config(format!(
                "initial state has log-likelihood {log_like}; the chain cannot start there"
            )));
        }
        Ok(RwmKernel {
            target,
            state: init,
            log_prior,
            log_like,
            alpha,
            proposal,
            cost,
            tally: AcceptanceTally::default(),
            tuner: None,
        })
    }

    /// Rebuilds a chain from checkpointed state without re-running the
    /// forward model: the cached log-likelihood is trusted, the log-prior is
    /// recomputed (it is solver-free).
    pub fn restore(
        target: &'a T,
        state: Vec<f64>,
        log_like: f64,
        alpha: f64,
        spec: &ProposalSpec,
        cost: EvalCost,
        tally: AcceptanceTally,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config(format!(
                "proposal premultiplier must be a positive finite number, got {alpha}"
            )));
        }
        if state.len() != target.dim() {
            return Err(Error::config(format!(
                "checkpoint state has {} coordinates, target has {}",
                state.len(),
                target.dim()
            )));
        }
        if !log_like.is_finite() {
            return Err(Error::config(format!(
                "checkpoint log-likelihood {log_like} is not finite"
            )));
        }
        let proposal = spec.prepare(state.len())?;
        let log_prior = target.log_prior(&state);
        if log_prior == f64::NEG_INFINITY {
            return Err(Error::config(
                "checkpoint state lies outside the prior support",
            ));
        }
        Ok(RwmKernel {
            target,
            state,
            log_prior,
            log_like,
            alpha,
            proposal,
            cost,
            tally,
            tuner: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn log_like(&self) -> f64 {
        self.log_like
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cost(&self) -> EvalCost {
        self.cost
    }

    pub fn tally(&self) -> AcceptanceTally {
        self.tally
    }

    /// The attached tuner, when adaptation is active.
    pub fn tuner(&self) -> Option<&ScaleTuner> {
        self.tuner.as_ref()
    }

    pub fn enable_tuning(&mut self, tuner: ScaleTuner) {
        self.tuner = Some(tuner);
    }

    pub fn freeze_tuning(&mut self) -> Option<ScaleTuner> {
        self.tuner.take()
    }

    /// One Metropolis step over all coordinates.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let dim = self.state.len();
        let z: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let step = self.proposal.colour(z);
        let root = self.alpha.sqrt();
        let proposed: Vec<f64> = self
            .state
            .iter()
            .zip(&step)
            .map(|(x, d)| x + root * d)
            .collect();
        let lp_new = self.target.log_prior(&proposed);
        let accepted = if lp_new == f64::NEG_INFINITY {
            metropolis_accept(rng, f64::NEG_INFINITY)
        } else {
            let ll_new = self.target.log_likelihood(&proposed, &mut self.cost)?;
            let log_r = (lp_new + ll_new) - (self.log_prior + self.log_like);
            if metropolis_accept(rng, log_r) {
                self.state = proposed;
                self.log_prior = lp_new;
                self.log_like = ll_new;
                true
            } else {
                false
            }
        };
        self.tally.record(accepted);
        if let Some(tuner) = &mut self.tuner {
            if let Some(factor) = tuner.record(accepted) {
                self.alpha *= factor;
            }
        }
        Ok(())
    }
}
