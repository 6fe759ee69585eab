//! Multi-step delayed acceptance with an adaptive error model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{metropolis_accept, AcceptanceTally, ScaleTuner};
use crate::error::{Error, Result};
use crate::posterior::{log_likelihood, AdaptiveLikelihood, BiasState, EvalCost, TwoLevel};

/// Multi-step delayed acceptance whose screening density learns the
/// coarse model's error online.
///
/// Structurally this is [`MsdaKernel`](super::MsdaKernel) — an inner
/// random-site chain on a cheap density, then one accurate evaluation to
/// correct the endpoint — but the screening density is not the bare coarse
/// likelihood: it is the coarse prediction shifted by the running mean of
/// observed fine−coarse residuals and widened by their running covariance
/// (see [`AdaptiveLikelihood`]). The first screening density is seeded with
/// the single residual at the initial state (count 1, zero covariance);
/// that seed is then discarded, and the running error model is the
/// mean/covariance of the residuals taken at the post-decision state of
/// outer steps 1, 2, …, updated after **every** outer step — no-move steps
/// reuse the cached predictions, so the update never costs an extra solve.
/// Within an outer step the model is frozen, so each endpoint correction is
/// an exact two-level Metropolis ratio
///
/// ```text
/// log r = [ll_fine(x') − ll_fine(x)] − [screen(x') − screen(x)];
/// ```
///
/// the adaptation between steps diminishes as O(1/k), which keeps the
/// chain's target nailed to the fine posterior.
///
/// No-move excursions accept with neither a fine evaluation nor a fresh
/// residual observation. An attached [`ScaleTuner`] adapts `sigma_z` from
/// the inner acceptance rate.
pub struct AmsdaKernel<'a, P: TwoLevel> {
    problem: &'a P,
    state: Vec<f64>,
    eta_fine: Vec<f64>,
    eta_coarse: Vec<f64>,
    ll_fine: f64,
    ll_screen: f64,
    bias: BiasState,
    screen: AdaptiveLikelihood,
    n_step: usize,
    sigma_z: f64,
    cost: EvalCost,
    inner: AcceptanceTally,
    outer: AcceptanceTally,
    shortcut_steps: u64,
    tuner: Option<ScaleTuner>,
}

impl<'a, P: TwoLevel> AmsdaKernel<'a, P> {
    /// Starts a chain at `init`, paying one fine and one coarse solve to
    /// seed the caches and the error model.
    pub fn new(problem: &'a P, init: Vec<f64>, n_step: usize, sigma_z: f64) -> Result<Self> {
        if !(sigma_z.is_finite() && sigma_z > 0.0) {
            return Err(Error::config(format!(
                "proposal scale must be a positive finite number, got {sigma_z}"
            )));
        }
        if n_step == 0 {
            return Err(Error::config("inner chain needs at least one step"));
        }
        if init.len() != problem.dim() {
            return Err(Error::config(format!(
                "initial state has {} coordinates, target has {}",
                init.len(),
                problem.dim()
            )));
        }
        if problem.log_prior(&init) == f64::NEG_INFINITY {
            return Err(Error::config(
                "initial state lies outside the prior support",
            ));
        }
        if !problem.predictable(&init)? {
            return Err(Error::config(
                "initial state is not evaluable by the forward model",
            ));
        }
        let mut cost = EvalCost::default();
        let eta_fine = problem.eta_fine(&init, &mut cost)?;
        let eta_coarse = problem.eta_coarse(&init, &mut cost)?;
        let residual: Vec<f64> =
            eta_fine.iter().zip(&eta_coarse).map(|(f, c)| f - c).collect();
        // The initial residual seeds the first screening density only; the
        // running error model starts empty and averages residuals from the
        // first outer step onward.
        let seed = BiasState::zero(residual.len()).update(&residual)?;
        let screen = AdaptiveLikelihood::new(problem.noise(), &seed)?;
        let bias = BiasState::zero(residual.len());
        let ll_fine = log_likelihood(problem.data(), &eta_fine, problem.noise())?;
        let ll_screen = screen.log_density(problem.data(), &eta_coarse)?;
        Ok(AmsdaKernel {
            problem,
            state: init,
            eta_fine,
            eta_coarse,
            ll_fine,
            ll_screen,
            bias,
            screen,
            n_step,
            sigma_z,
            cost,
            inner: AcceptanceTally::default(),
            outer: AcceptanceTally::default(),
            shortcut_steps: 0,
            tuner: None,
        })
    }

    /// Rebuilds a kernel from checkpointed fields without any forward
    /// solves: the cached predictions and the error-model state fully
    /// determine the screening density.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        problem: &'a P,
        state: Vec<f64>,
        eta_fine: Vec<f64>,
        eta_coarse: Vec<f64>,
        bias: BiasState,
        n_step: usize,
        sigma_z: f64,
        cost: EvalCost,
        inner: AcceptanceTally,
        outer: AcceptanceTally,
        shortcut_steps: u64,
    ) -> Result<Self> {
        if !(sigma_z.is_finite() && sigma_z > 0.0) || n_step == 0 {
            return Err(Error::parse(
                "checkpointed sampler settings are out of range",
            ));
        }
        if state.len() != problem.dim() {
            return Err(Error::parse(format!(
                "checkpointed state has {} coordinates, target has {}",
                state.len(),
                problem.dim()
            )));
        }
        let n = problem.data().len();
        if eta_fine.len() != n || eta_coarse.len() != n || bias.dim() != n {
            return Err(Error::parse(
                "checkpointed predictions do not match the data dimension",
            ));
        }
        // A zero-count error model means no outer step has run yet: the
        // screen is still the construction-time seed, which is a pure
        // function of the cached predictions.
        let screen = if bias.k() == 0 {
            let residual: Vec<f64> =
                eta_fine.iter().zip(&eta_coarse).map(|(f, c)| f - c).collect();
            let seed = BiasState::zero(n).update(&residual)?;
            AdaptiveLikelihood::new(problem.noise(), &seed)?
        } else {
            AdaptiveLikelihood::new(problem.noise(), &bias)?
        };
        let ll_fine = log_likelihood(problem.data(), &eta_fine, problem.noise())?;
        let ll_screen = screen.log_density(problem.data(), &eta_coarse)?;
        Ok(AmsdaKernel {
            problem,
            state,
            eta_fine,
            eta_coarse,
            ll_fine,
            ll_screen,
            bias,
            screen,
            n_step,
            sigma_z,
            cost,
            inner,
            outer,
            shortcut_steps,
            tuner: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }

    pub fn cost(&self) -> EvalCost {
        self.cost
    }

    /// Current error-model state (residual count, mean, covariance).
    pub fn bias(&self) -> &BiasState {
        &self.bias
    }

    /// Cached fine prediction at the current state.
    pub fn eta_fine(&self) -> &[f64] {
        &self.eta_fine
    }

    /// Cached coarse prediction at the current state.
    pub fn eta_coarse(&self) -> &[f64] {
        &self.eta_coarse
    }

    pub fn inner_tally(&self) -> AcceptanceTally {
        self.inner
    }

    pub fn outer_tally(&self) -> AcceptanceTally {
        self.outer
    }

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

    /// One outer step: inner excursion on the screening density, endpoint
    /// correction against the fine model, then the error-model update at
    /// the post-decision state.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let m = self.state.len();
        let mut prop = self.state.clone();
        let mut etac_prop = self.eta_coarse.clone();
        let mut ll_s = self.ll_screen;

        for _ in 0..self.n_step {
            let site = rng.gen_range(0..m);
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma_z;
            let v_old = prop[site];
            let v_new = v_old + z;
            let mut prior_ratio = self.problem.site_log_prior_ratio(&prop, site, v_new);
            if prior_ratio > f64::NEG_INFINITY {
                prop[site] = v_new;
                if !self.problem.predictable(&prop)? {
                    prop[site] = v_old;
                    prior_ratio = f64::NEG_INFINITY;
                }
            }
            let accepted = if prior_ratio == f64::NEG_INFINITY {
                metropolis_accept(rng, f64::NEG_INFINITY)
            } else {
                // prop[site] already holds v_new
                let etac_new = self.problem.eta_coarse(&prop, &mut self.cost)?;
                let ll_new = self.screen.log_density(self.problem.data(), &etac_new)?;
                let log_r = prior_ratio + ll_new - ll_s;
                if metropolis_accept(rng, log_r) {
                    etac_prop = etac_new;
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

        if prop == self.state {
            // Endpoint equals start: certain acceptance, no fine solve.
            self.shortcut_steps += 1;
            self.outer.record(true);
        } else {
            let eta_f_new = self.problem.eta_fine(&prop, &mut self.cost)?;
            let ll_f_new =
                log_likelihood(self.problem.data(), &eta_f_new, self.problem.noise())?;
            let log_r = (ll_f_new - self.ll_fine) - (ll_s - self.ll_screen);
            let accepted = metropolis_accept(rng, log_r);
            if accepted {
                self.state = prop;
                self.eta_fine = eta_f_new;
                self.eta_coarse = etac_prop;
                self.ll_fine = ll_f_new;
            }
            self.outer.record(accepted);
        }

        // Fold in the residual at the post-decision state — cached, so
        // no-move steps pay nothing — then re-anchor the cached screening
        // density under the updated error model.
        let residual: Vec<f64> = self
            .eta_fine
            .iter()
            .zip(&self.eta_coarse)
            .map(|(f, c)| f - c)
            .collect();
        self.bias = self.bias.update(&residual)?;
        self.screen = AdaptiveLikelihood::new(self.problem.noise(), &self.bias)?;
        self.ll_screen = self.screen.log_density(self.problem.data(), &self.eta_coarse)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{NoiseModel, Target};
    use crate::toy::{
        empirical_distribution, enumerate_posterior, tv_distance, ToyConfig, ToyFidelity,
        ToyTables, ToyTarget,
    };
    use rand::SeedableRng;

    #[test]
    fn construction_seeds_the_first_screen_and_leaves_the_average_empty() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let problem = tables.target(ToyFidelity::Fine);
        let start = tables.representative(0);
        let kernel = AmsdaKernel::new(&problem, start.clone(), 4, 0.8).unwrap();
        assert_eq!(kernel.cost(), EvalCost { fine: 1, approx: 0, coarse: 1 });
        // The running average has seen nothing yet…
        assert_eq!(kernel.bias().k(), 0);
        // …while the active screen carries the initial residual with zero
        // covariance.
        let mut scratch = EvalCost::default();
        let ef = problem.eta_fine(&start, &mut scratch).unwrap();
        let ec = problem.eta_coarse(&start, &mut scratch).unwrap();
        let residual: Vec<f64> = ef.iter().zip(&ec).map(|(f, c)| f - c).collect();
        let seed = BiasState::zero(residual.len()).update(&residual).unwrap();
        let expected = AdaptiveLikelihood::new(problem.noise(), &seed).unwrap();
        assert_eq!(
            kernel.ll_screen,
            expected.log_density(problem.data(), &ec).unwrap()
        );
    }

    #[test]
    fn error_model_counts_every_outer_step_but_solves_only_moves() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let problem = tables.target(ToyFidelity::Fine);
        let mut kernel =
            AmsdaKernel::new(&problem, tables.representative(0), 3, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..300 {
            kernel.step(&mut rng).unwrap();
        }
        assert_eq!(kernel.cost().fine, 1 + 300 - kernel.shortcut_steps());
        // One residual per outer step, no-move steps included.
        assert_eq!(kernel.bias().k(), 300);
    }

    /// Toy problem whose "coarse" model is secretly the fine one, so every
    /// residual is exactly zero.
    struct PerfectSurrogate<'a>(ToyTarget<'a>);

    impl Target for PerfectSurrogate<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn log_prior(&self, state: &[f64]) -> f64 {
            self.0.log_prior(state)
        }
        fn site_log_prior_ratio(&self, state: &[f64], i: usize, v_new: f64) -> f64 {
            self.0.site_log_prior_ratio(state, i, v_new)
        }
        fn log_likelihood(&self, state: &[f64], cost: &mut EvalCost) -> Result<f64> {
            self.0.log_likelihood(state, cost)
        }
    }

    impl TwoLevel for PerfectSurrogate<'_> {
        fn data(&self) -> &[f64] {
            self.0.data()
        }
        fn noise(&self) -> &NoiseModel {
            self.0.noise()
        }
        fn eta_fine(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>> {
            self.0.eta_fine(state, cost)
        }
        fn eta_coarse(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>> {
            let mut scratch = EvalCost::default();
            let eta = self.0.eta_fine(state, &mut scratch)?;
            cost.coarse += 1;
            Ok(eta)
        }
    }

    #[test]
    fn zero_residuals_make_outer_corrections_near_certain() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let problem = PerfectSurrogate(tables.target(ToyFidelity::Fine));
        let mut kernel =
            AmsdaKernel::new(&problem, tables.representative(0), 4, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            kernel.step(&mut rng).unwrap();
        }
        let outer = kernel.outer_tally();
        assert_eq!(outer.proposals, 300);
        // The error model stays at zero mean/covariance, so the screen is
        // the fine likelihood up to factorization round-off.
        assert!(outer.rate() > 0.99, "outer rate {}", outer.rate());
        assert!(kernel.bias().b().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn toy_chain_matches_enumerated_posterior() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let exact = enumerate_posterior(&tables).unwrap();
        let problem = tables.target(ToyFidelity::Fine);
        let mut kernel =
            AmsdaKernel::new(&problem, tables.representative(0), 4, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut visits = Vec::new();
        for step in 0..60_000 {
            kernel.step(&mut rng).unwrap();
            if step >= 8_000 {
                visits.push(tables.state_index(kernel.state()));
            }
        }
        let emp = empirical_distribution(&visits, tables.state_count());
        let tv = tv_distance(&emp, &exact);
        assert!(tv < 0.07, "TV {tv} too large");
    }

    #[test]
    fn restore_resumes_the_exact_trajectory() {
        let tables = ToyTables::build(&ToyConfig::default()).unwrap();
        let problem = tables.target(ToyFidelity::Fine);
        let mut reference =
            AmsdaKernel::new(&problem, tables.representative(0), 3, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..50 {
            reference.step(&mut rng).unwrap();
        }
        // Snapshot mid-run, then continue both and compare.
        let mut resumed = AmsdaKernel::restore(
            &problem,
            reference.state().to_vec(),
            reference.eta_fine().to_vec(),
            reference.eta_coarse().to_vec(),
            reference.bias().clone(),
            3,
            reference.sigma_z(),
            reference.cost(),
            reference.inner_tally(),
            reference.outer_tally(),
            reference.shortcut_steps(),
        )
        .unwrap();
        let mut rng_resumed = rng.clone();
        for _ in 0..50 {
            reference.step(&mut rng).unwrap();
            resumed.step(&mut rng_resumed).unwrap();
            assert_eq!(reference.state(), resumed.state());
        }
        assert_eq!(reference.cost(), resumed.cost());
        assert_eq!(reference.bias().k(), resumed.bias().k());
    }
}
