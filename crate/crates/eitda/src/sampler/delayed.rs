//! Delayed-acceptance kernels: a surrogate screens proposals so the
//! accurate model is only consulted on promising moves.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{metropolis_accept, AcceptanceTally, ScaleTuner, ScanOrder};
use crate::error::{Error, Result};
use crate::posterior::{EvalCost, Target};

/// Shared chain core for the two delayed-acceptance kernels: current state
/// with its likelihood cached under both fidelities.
struct TwoFidelityChain<'a, TA: Target, TS: Target> {
    accurate: &'a TA,
    surrogate: &'a TS,
    state: Vec<f64>,
    ll_accurate: f64,
    ll_surrogate: f64,
    cost: EvalCost,
}

impl<'a, TA: Target, TS: Target> TwoFidelityChain<'a, TA, TS> {
    fn start(accurate: &'a TA, surrogate: &'a TS, init: Vec<f64>) -> Result<Self> {
        if accurate.dim() != surrogate.dim() {
            return Err(Error::config(format!(
                "accurate and surrogate targets disagree on dimension: {} vs {}",
                accurate.dim(),
                surrogate.dim()
            )));
        }
        if init.len() != accurate.dim() {
            return Err(Error::config(format!(
                "initial state has {} coordinates, target has {}",
                init.len(),
                accurate.dim()
            )));
        }
        if accurate.log_prior(&init) == f64::NEG_INFINITY {
            return Err(Error::config(
                "initial state lies outside the prior support",
            ));
        }
        let mut cost = EvalCost::default();
        let ll_accurate = accurate.log_likelihood(&init, &mut cost)?;
        let ll_surrogate = surrogate.log_likelihood(&init, &mut cost)?;
        if !ll_accurate.is_finite() || !ll_surrogate.is_finite() {
            return Err(Error::config(
                "initial state is not evaluable under both fidelities",
            ));
        }
        Ok(TwoFidelityChain { accurate, surrogate, state: init, ll_accurate, ll_surrogate, cost })
    }

    /// Rebuilds the core from checkpointed caches without consulting either
    /// forward model.
    fn resume(
        accurate: &'a TA,
        surrogate: &'a TS,
        state: Vec<f64>,
        ll_accurate: f64,
        ll_surrogate: f64,
        cost: EvalCost,
    ) -> Result<Self> {
        if accurate.dim() != surrogate.dim() {
            return Err(Error::config(format!(
                "accurate and surrogate targets disagree on dimension: {} vs {}",
                accurate.dim(),
                surrogate.dim()
            )));
        }
        if state.len() != accurate.dim() {
            return Err(Error::config(format!(
                "checkpoint state has {} coordinates, target has {}",
                state.len(),
                accurate.dim()
            )));
        }
        if !ll_accurate.is_finite() || !ll_surrogate.is_finite() {
            return Err(Error::config(
                "checkpoint likelihood caches must be finite",
            ));
        }
        if accurate.log_prior(&state) == f64::NEG_INFINITY {
            return Err(Error::config(
                "checkpoint state lies outside the prior support",
            ));
        }
        Ok(TwoFidelityChain { accurate, surrogate, state, ll_accurate, ll_surrogate, cost })
    }
}

/// Per-site delayed acceptance.
///
/// Each site proposal is first screened with the surrogate likelihood
/// (stage one); only proposals that pass pay for an accurate evaluation
/// and face the correction ratio (stage two)
///
/// ```text
/// log r₂ = [ll_acc(x') − ll_acc(x)] − [ll_surr(x') − ll_surr(x)],
/// ```
///
/// so the number of accurate evaluations equals the number of stage-one
/// passes exactly. When the surrogate coincides with the accurate
/// likelihood, `log r₂` is exactly zero, stage two never consumes a
/// variate, and the kernel reproduces the single-site trajectory bit for
/// bit from the same seed.
///
/// An attached [`ScaleTuner`] adapts `sigma_z` toward a target *stage-one*
/// pass rate: stage one is what the proposal scale controls, and holding
/// its rate fixes the accurate-evaluation budget per sweep.
pub struct DaKernel<'a, TA: Target, TS: Target> {
    chain: TwoFidelityChain<'a, TA, TS>,
    sigma_z: f64,
    order: ScanOrder,
    stage_one: AcceptanceTally,
    stage_two: AcceptanceTally,
    tuner: Option<ScaleTuner>,
}

impl<'a, TA: Target, TS: Target> DaKernel<'a, TA, TS> {
    /// Starts a chain at `init`, paying one evaluation per fidelity for the
    /// initial caches.
    pub fn new(
        accurate: &'a TA,
        surrogate: &'a TS,
        init: Vec<f64>,
        sigma_z: f64,
        order: ScanOrder,
    ) -> Result<Self> {
        check_scale(sigma_z)?;
        Ok(DaKernel {
            chain: TwoFidelityChain::start(accurate, surrogate, init)?,
            sigma_z,
            order,
            stage_one: AcceptanceTally::default(),
            stage_two: AcceptanceTally::default(),
            tuner: None,
        })
    }

    /// Rebuilds a chain from checkpointed caches without consulting either
    /// forward model.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        accurate: &'a TA,
        surrogate: &'a TS,
        state: Vec<f64>,
        ll_accurate: f64,
        ll_surrogate: f64,
        sigma_z: f64,
        order: ScanOrder,
        cost: EvalCost,
        stage_one: AcceptanceTally,
        stage_two: AcceptanceTally,
    ) -> Result<Self> {
        check_scale(sigma_z)?;
        Ok(DaKernel {
            chain: TwoFidelityChain::resume(
                accurate,
                surrogate,
                state,
                ll_accurate,
                ll_surrogate,
                cost,
            )?,
            sigma_z,
            order,
            stage_one,
            stage_two,
            tuner: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.chain.state
    }

    /// Cached accurate log-likelihood of the current state.
    pub fn ll_accurate(&self) -> f64 {
        self.chain.ll_accurate
    }

    /// Cached surrogate log-likelihood of the current state.
    pub fn ll_surrogate(&self) -> f64 {
        self.chain.ll_surrogate
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    pub fn cost(&self) -> EvalCost {
        self.chain.cost
    }

    /// Surrogate-screen decisions (the proposal acceptance rate the tuner
    /// targets).
    pub fn stage_one_tally(&self) -> AcceptanceTally {
        self.stage_one
    }

    /// Accurate-correction decisions among stage-one passes.
    pub fn stage_two_tally(&self) -> AcceptanceTally {
        self.stage_two
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

    /// One sweep: `dim` screened site proposals.
    pub fn sweep(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let m = self.chain.state.len();
        for k in 0..m {
            let site = match self.order {
                ScanOrder::Deterministic => k,
                ScanOrder::Random => rng.gen_range(0..m),
            };
            self.site_step(rng, site)?;
        }
        Ok(())
    }

    fn site_step(&mut self, rng: &mut ChaCha8Rng, site: usize) -> Result<()> {
        let chain = &mut self.chain;
        let z: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_z;
        let v_old = chain.state[site];
        let v_new = v_old + z;
        let prior_ratio = chain.accurate.site_log_prior_ratio(&chain.state, site, v_new);

        let passed = if prior_ratio == f64::NEG_INFINITY {
            // Zero prior mass: neither fidelity is consulted, but the
            // stage-one variate is still consumed.
            metropolis_accept(rng, f64::NEG_INFINITY)
        } else {
            chain.state[site] = v_new;
            let ll_s_new = chain.surrogate.log_likelihood(&chain.state, &mut chain.cost)?;
            let stage_one_r = prior_ratio + ll_s_new - chain.ll_surrogate;
            if metropolis_accept(rng, stage_one_r) {
                // Stage two: one accurate evaluation, grouped per fidelity
                // so an exact surrogate cancels to exactly zero.
                let ll_a_new = chain.accurate.log_likelihood(&chain.state, &mut chain.cost)?;
                let stage_two_r =
                    (ll_a_new - chain.ll_accurate) - (ll_s_new - chain.ll_surrogate);
                let kept = metropolis_accept(rng, stage_two_r);
                if kept {
                    chain.ll_accurate = ll_a_new;
                    chain.ll_surrogate = ll_s_new;
                } else {
                    chain.state[site] = v_old;
                }
                self.stage_two.record(kept);
                true
            } else {
                chain.state[site] = v_old;
                false
            }
        };
        self.stage_one.record(passed);
        if let Some(tuner) = &mut self.tuner {
            if let Some(factor) = tuner.record(passed) {
                self.sigma_z *= factor;
            }
        }
        Ok(())
    }
}

/// Multi-step delayed acceptance.
///
/// One outer step runs `n_step` random-site Metropolis updates against the
/// surrogate, then corrects the *endpoint* with a single accurate
/// evaluation:
///
/// ```text
/// log r = [ll_acc(x') − ll_acc(x)] − [ll_surr(x') − ll_surr(x)].
/// ```
///
/// If the inner chain ends where it started the ratio is exactly one, so
/// the step accepts with no accurate evaluation and no variate — long
/// surrogate excursions that come home are free. With `n_step = 1` the
/// kernel consumes the RNG exactly like [`DaKernel`] with a random scan and
/// reproduces its trajectory bit for bit.
pub struct MsdaKernel<'a, TA: Target, TS: Target> {
    chain: TwoFidelityChain<'a, TA, TS>,
    n_step: usize,
    sigma_z: f64,
    inner: AcceptanceTally,
    outer: AcceptanceTally,
    shortcut_steps: u64,
    tuner: Option<ScaleTuner>,
}

impl<'a, TA: Target, TS: Target> MsdaKernel<'a, TA, TS> {
    /// Starts a chain at `init` making `n_step` surrogate updates per outer
    /// step.
    pub fn new(
        accurate: &'a TA,
        surrogate: &'a TS,
        init: Vec<f64>,
        n_step: usize,
        sigma_z: f64,
    ) -> Result<Self> {
        check_scale(sigma_z)?;
        if n_step == 0 {
            return Err(Error::config("inner chain needs at least one step"));
        }
        Ok(MsdaKernel {
            chain: TwoFidelityChain::start(accurate, surrogate, init)?,
            n_step,
            sigma_z,
            inner: AcceptanceTally::default(),
            outer: AcceptanceTally::default(),
            shortcut_steps: 0,
            tuner: None,
        })
    }

    /// Rebuilds a chain from checkpointed caches without consulting either
    /// forward model.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        accurate: &'a TA,
        surrogate: &'a TS,
        state: Vec<f64>,
        ll_accurate: f64,
        ll_surrogate: f64,
        n_step: usize,
        sigma_z: f64,
        cost: EvalCost,
        inner: AcceptanceTally,
        outer: AcceptanceTally,
        shortcut_steps: u64,
    ) -> Result<Self> {
        check_scale(sigma_z)?;
        if n_step == 0 {
            return Err(Error::config("inner chain needs at least one step"));
        }
        Ok(MsdaKernel {
            chain: TwoFidelityChain::resume(
                accurate,
                surrogate,
                state,
                ll_accurate,
                ll_surrogate,
                cost,
            )?,
            n_step,
            sigma_z,
            inner,
            outer,
            shortcut_steps,
            tuner: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.chain.state
    }

    /// Cached accurate log-likelihood of the current state.
    pub fn ll_accurate(&self) -> f64 {
        self.chain.ll_accurate
    }

    /// Cached surrogate log-likelihood of the current state.
    pub fn ll_surrogate(&self) -> f64 {
        self.chain.ll_surrogate
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    pub fn cost(&self) -> EvalCost {
        self.chain.cost
    }

    /// Surrogate-stage decisions inside the inner chain.
    pub fn inner_tally(&self) -> AcceptanceTally {
        self.inner
    }

    /// Endpoint-correction decisions (no-move shortcuts count as accepts).
    pub fn outer_tally(&self) -> AcceptanceTally {
        self.outer
    }

    /// Outer steps that ended where they started and skipped the accurate
    /// model entirely.
    pub fn shortcut_steps(&self) -> u64 {
        self.shortcut_steps
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

    /// One outer step: an inner surrogate excursion plus endpoint
    /// correction.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let chain = &mut self.chain;
        let m = chain.state.len();
        let mut prop = chain.state.clone();
        let mut ll_s = chain.ll_surrogate;

        for _ in 0..self.n_step {
            let site = rng.gen_range(0..m);
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_z;
            let v_old = prop[site];
            let v_new = v_old + z;
            let prior_ratio = chain.surrogate.site_log_prior_ratio(&prop, site, v_new);
            let accepted = if prior_ratio == f64::NEG_INFINITY {
                metropolis_accept(rng, f64::NEG_INFINITY)
            } else {
                prop[site] = v_new;
                let ll_new = chain.surrogate.log_likelihood(&prop, &mut chain.cost)?;
                let log_r = prior_ratio + ll_new - ll_s;
                if metropolis_accept(rng, log_r) {
                    ll_s = ll_new;
                    true
                } else {
                    prop[site] = v_old;
                    false
                }
            };
            self.inner.record(accepted);
            if let Some(tuner) = &mut self.tuner {
                if let Some(factor) = tuner.record(accepted) {
                    self.sigma_z *= factor;
                }
            }
        }

        if prop == chain.state {
            // Endpoint equals start: the correction ratio is exactly one.
            self.shortcut_steps += 1;
            self.outer.record(true);
            return Ok(());
        }

        let ll_a_new = chain.accurate.log_likelihood(&prop, &mut chain.cost)?;
        let log_r = (ll_a_new - chain.ll_accurate) - (ll_s - chain.ll_surrogate);
        let accepted = metropolis_accept(rng, log_r);
        if accepted {
            chain.state = prop;
            chain.ll_accurate = ll_a_new;
            chain.ll_surrogate = ll_s;
        }
        self.outer.record(accepted);
        Ok(())
    }
}

fn check_scale(sigma_z: f64) -> Result<()> {
    if !(sigma_z.is_finite() && sigma_z > 0.0) {
        return Err(Error::config(format!(
            "proposal scale must be a positive finite number, got {sigma_z}"
        )));
    }
    Ok(())
}
