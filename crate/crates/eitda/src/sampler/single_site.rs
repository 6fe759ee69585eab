//! Componentwise Metropolis kernel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{metropolis_accept, AcceptanceTally, ScaleTuner, ScanOrder};
use crate::error::{Error, Result};
use crate::posterior::{EvalCost, Target};

/// Single-site Metropolis: one sweep makes `dim` proposals, each perturbing
/// one coordinate by `N(0, sigma_z²)` and paying one forward evaluation
/// unless the prior already assigns the proposal zero mass.
///
/// Per site the RNG is consumed in a fixed order: site index (random scan
/// only), perturbation, then the acceptance variate when the log-ratio is
/// negative. Zero-mass proposals skip the forward model but still draw
/// their acceptance variate, so the stream position never depends on which
/// stage rejected.
pub struct SingleSiteKernel<'a, T: Target> {
    target: &'a T,
    state: Vec<f64>,
    log_like: f64,
    sigma_z: f64,
    order: ScanOrder,
    cost: EvalCost,
    tally: AcceptanceTally,
    tuner: Option<ScaleTuner>,
}

impl<'a, T: Target> SingleSiteKernel<'a, T> {
    /// Starts a chain at `init`, paying one forward evaluation for the
    /// initial likelihood. Fails if the initial state has zero posterior
    /// mass or the proposal scale is not a positive finite number.
    pub fn new(target: &'a T, init: Vec<f64>, sigma_z: f64, order: ScanOrder) -> Result<Self> {
        check_scale(sigma_z)?;
        if init.len() != target.dim() {
            return Err(Error::config(format!(
                "initial state has {} coordinates, target has {}",
                init.len(),
                target.dim()
            )));
        }
        if target.log_prior(&init) == f64::NEG_INFINITY {
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
        Ok(SingleSiteKernel {
            target,
            state: init,
            log_like,
            sigma_z,
            order,
            cost,
            tally: AcceptanceTally::default(),
            tuner: None,
        })
    }

    /// Rebuilds a kernel from checkpointed fields without re-evaluating the
    /// likelihood (the cached value must come from this target).
    pub fn restore(
        target: &'a T,
        state: Vec<f64>,
        log_like: f64,
        sigma_z: f64,
        order: ScanOrder,
        cost: EvalCost,
        tally: AcceptanceTally,
    ) -> Result<Self> {
        check_scale(sigma_z)?;
        if state.len() != target.dim() {
            return Err(Error::config(format!(
                "checkpointed state has {} coordinates, target has {}",
                state.len(),
                target.dim()
            )));
        }
        if !log_like.is_finite() {
            return Err(Error::parse(format!(
                "checkpointed log-likelihood {log_like} is not finite"
            )));
        }
        Ok(SingleSiteKernel { target, state, log_like, sigma_z, order, cost, tally, tuner: None })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Cached log-likelihood of the current state.
    pub fn log_like(&self) -> f64 {
        self.log_like
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    pub fn cost(&self) -> EvalCost {
        self.cost
    }

    pub fn tally(&self) -> AcceptanceTally {
        self.tally
    }

    /// Adapts `sigma_z` from now on; used during burn-in only.
    /// The attached tuner, when adaptation is active.
    pub fn tuner(&self) -> Option<&ScaleTuner> {
        self.tuner.as_ref()
    }

    pub fn enable_tuning(&mut self, tuner: ScaleTuner) {
        self.tuner = Some(tuner);
    }

    /// Stops adaptation, returning the tuner so the run can report it.
    pub fn freeze_tuning(&mut self) -> Option<ScaleTuner> {
        self.tuner.take()
    }

    /// One sweep: `dim` site proposals in the configured scan order.
    pub fn sweep(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let m = self.state.len();
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
        let z: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_z;
        let v_old = self.state[site];
        let v_new = v_old + z;
        let prior_ratio = self.target.site_log_prior_ratio(&self.state, site, v_new);
        let accepted = if prior_ratio == f64::NEG_INFINITY {
            // Zero prior mass: no forward evaluation, but the acceptance
            // variate is still consumed (see module docs).
            metropolis_accept(rng, f64::NEG_INFINITY)
        } else {
            self.state[site] = v_new;
            let ll_new = self.target.log_likelihood(&self.state, &mut self.cost)?;
            let log_r = prior_ratio + ll_new - self.log_like;
            if metropolis_accept(rng, log_r) {
                self.log_like = ll_new;
                true
            } else {
                self.state[site] = v_old;
                false
            }
        };
        self.tally.record(accepted);
        if let Some(tuner) = &mut self.tuner {
            if let Some(factor) = tuner.record(accepted) {
                self.sigma_z *= factor;
            }
        }
        Ok(())
    }

    /// Log-likelihood of this kernel's target at a foreign state, counted
    /// against this kernel's cost. Used by the coupled kernel to price
    /// state swaps.
    pub(crate) fn evaluate(&mut self, state: &[f64]) -> Result<f64> {
        self.target.log_likelihood(state, &mut self.cost)
    }

    /// Replaces the chain state and its cached likelihood (swap commit).
    pub(crate) fn replace_state(&mut self, state: Vec<f64>, log_like: f64) {
        debug_assert_eq!(state.len(), self.state.len());
        self.state = state;
        self.log_like = log_like;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{
        empirical_distribution, enumerate_posterior, tv_distance, ToyConfig, ToyFidelity,
        ToyTables,
    };
    use rand::SeedableRng;

    /// Uniform prior on [0,1]^2 with a flat likelihood that counts fine
    /// evaluations — isolates support handling and cost accounting.
    struct BoxTarget;

    impl Target for BoxTarget {
        fn dim(&self) -> usize {
            2
        }

        fn log_prior(&self, state: &[f64]) -> f64 {
            if state.iter().all(|v| (0.0..=1.0).contains(v)) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }

        fn site_log_prior_ratio(&self, _state: &[f64], _i: usize, v_new: f64) -> f64 {
            if (0.0..=1.0).contains(&v_new) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }

        fn log_likelihood(&self, _state: &[f64], cost: &mut EvalCost) -> Result<f64> {
            cost.fine += 1;
            Ok(0.0)
        }
    }

    #[test]
    fn zero_mass_proposals_skip_the_forward_model() {
        let target = BoxTarget;
        let mut kernel =
            SingleSiteKernel::new(&target, vec![0.5, 0.5], 1.0, ScanOrder::Deterministic)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            kernel.sweep(&mut rng).unwrap();
        }
        let tally = kernel.tally();
        assert_eq!(tally.proposals, 100);
        // In-box proposals have log-ratio exactly 0 and are all accepted,
        // each paying one evaluation; out-of-box proposals pay nothing.
        assert_eq!(kernel.cost().fine, 1 + tally.accepts);
        assert!(tally.accepts > 0 && tally.accepts < tally.proposals);
    }

    #[test]
    fn null_perturbation_is_accepted_without_an_acceptance_variate() {
        let target = BoxTarget;
        let mut kernel =
            SingleSiteKernel::new(&target, vec![0.5, 0.5], 1.0, ScanOrder::Deterministic)
                .unwrap();
        kernel.sigma_z = 0.0; // force z = 0 proposals
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut probe = rng.clone();
        kernel.sweep(&mut rng).unwrap();
        assert_eq!(kernel.tally().accepts, 2);
        assert_eq!(kernel.state(), &[0.5, 0.5]);
        // Exactly two standard-normal draws were consumed, no uniforms.
        let _: f64 = probe.sample(StandardNormal);
        let _: f64 = probe.sample(StandardNormal);
        assert_eq!(rng.gen::<u64>(), probe.gen::<u64>());
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let target = tables.target(ToyFidelity::Fine);
        let start = tables.representative(0);
        let mut a =
            SingleSiteKernel::new(&target, start.clone(), 0.8, ScanOrder::Random).unwrap();
        let mut b = SingleSiteKernel::new(&target, start, 0.8, ScanOrder::Random).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let mut rng_c = ChaCha8Rng::seed_from_u64(9);
        rng_c.set_stream(1);
        let mut c_diverged = false;
        let mut c = SingleSiteKernel::new(
            &target,
            tables.representative(0),
            0.8,
            ScanOrder::Random,
        )
        .unwrap();
        for _ in 0..50 {
            a.sweep(&mut rng_a).unwrap();
            b.sweep(&mut rng_b).unwrap();
            c.sweep(&mut rng_c).unwrap();
            assert_eq!(a.state(), b.state());
            c_diverged |= a.state() != c.state();
        }
        assert_eq!(a.cost(), b.cost());
        assert!(c_diverged, "distinct streams should decorrelate the chains");
    }

    #[test]
    fn toy_chain_matches_enumerated_posterior() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let exact = enumerate_posterior(&tables).unwrap();
        let target = tables.target(ToyFidelity::Fine);
        for order in [ScanOrder::Deterministic, ScanOrder::Random] {
            let mut kernel =
                SingleSiteKernel::new(&target, tables.representative(0), 0.8, order).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut visits = Vec::new();
            for sweep in 0..60_000 {
                kernel.sweep(&mut rng).unwrap();
                if sweep >= 5_000 {
                    visits.push(tables.state_index(kernel.state()));
                }
            }
            let emp = empirical_distribution(&visits, tables.state_count());
            let tv = tv_distance(&emp, &exact);
            assert!(tv < 0.05, "TV {tv} too large for {order:?} scan");
        }
    }

    #[test]
    fn tuner_drives_acceptance_toward_target() {
        // An oversized scale on the toy posterior rejects nearly everything;
        // the tuner must walk it down until the rate sits near target.
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let target = tables.target(ToyFidelity::Fine);
        let mut kernel =
            SingleSiteKernel::new(&target, tables.representative(0), 40.0, ScanOrder::Random)
                .unwrap();
        kernel.enable_tuning(ScaleTuner::new(0.3, 100, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2_000 {
            kernel.sweep(&mut rng).unwrap();
        }
        assert!(kernel.sigma_z() < 40.0);
        kernel.freeze_tuning();
        // Measure the frozen rate over fresh sweeps.
        let before = kernel.tally();
        for _ in 0..1_000 {
            kernel.sweep(&mut rng).unwrap();
        }
        let after = kernel.tally();
        let rate = (after.accepts - before.accepts) as f64
            / (after.proposals - before.proposals) as f64;
        assert!(
            (rate - 0.3).abs() < 0.05,
            "frozen acceptance rate {rate} missed the 0.30 target"
        );
    }

    /// Standard normal in `dim` dimensions with a flat (improper) prior —
    /// the classical calibration target for acceptance-rate tuning.
    struct GaussianTarget {
        dim: usize,
    }

    impl Target for GaussianTarget {
        fn dim(&self) -> usize {
            self.dim
        }
        fn log_prior(&self, _state: &[f64]) -> f64 {
            0.0
        }
        fn site_log_prior_ratio(&self, _state: &[f64], _i: usize, _v: f64) -> f64 {
            0.0
        }
        fn log_likelihood(&self, state: &[f64], cost: &mut EvalCost) -> Result<f64> {
            cost.fine += 1;
            Ok(-0.5 * state.iter().map(|v| v * v).sum::<f64>())
        }
    }

    #[test]
    fn tuner_recovers_from_a_hundredfold_oversized_scale() {
        let target = GaussianTarget { dim: 10 };
        // ~2.4 is a good site scale for a unit normal; start 100× beyond.
        let mut kernel =
            SingleSiteKernel::new(&target, vec![0.0; 10], 240.0, ScanOrder::Deterministic)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);

        // Untuned, the oversized scale rejects almost everything.
        for _ in 0..10 {
            kernel.sweep(&mut rng).unwrap();
        }
        let rate0 = kernel.tally().rate();
        assert!(rate0 < 0.05, "expected a saturated chain, rate {rate0}");

        // The tuner must walk the scale down monotonically while the chain
        // is saturated…
        kernel.enable_tuning(ScaleTuner::new(0.3, 100, 1.0).unwrap());
        let mut scales = vec![kernel.sigma_z()];
        for _ in 0..150 {
            for _ in 0..10 {
                kernel.sweep(&mut rng).unwrap(); // one window per 10 sweeps
            }
            scales.push(kernel.sigma_z());
        }
        assert!(
            scales.windows(2).take(3).all(|w| w[1] < w[0]),
            "scale not decreasing over the first windows: {:?}",
            &scales[..4]
        );

        // …and the frozen chain must sit near the target rate.
        kernel.freeze_tuning();
        let before = kernel.tally();
        for _ in 0..1_000 {
            kernel.sweep(&mut rng).unwrap();
        }
        let after = kernel.tally();
        let rate = (after.accepts - before.accepts) as f64
            / (after.proposals - before.proposals) as f64;
        assert!(
            (0.25..=0.35).contains(&rate),
            "terminal rate {rate} outside [0.25, 0.35] (scale {})",
            kernel.sigma_z()
        );
    }

    #[test]
    fn rejects_bad_construction() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let target = tables.target(ToyFidelity::Fine);
        // wrong dimension
        assert!(
            SingleSiteKernel::new(&target, vec![3.0; 3], 0.5, ScanOrder::Deterministic).is_err()
        );
        // outside the prior box
        assert!(
            SingleSiteKernel::new(&target, vec![9.0; 4], 0.5, ScanOrder::Deterministic).is_err()
        );
        // non-positive scale
        assert!(
            SingleSiteKernel::new(&target, vec![3.5; 4], 0.0, ScanOrder::Deterministic).is_err()
        );
    }
}
