//! A 2×2-pixel posterior small enough to enumerate exactly.
//!
//! Pixel values live in the usual box [2.5, 4.5] but the posterior is
//! piecewise constant: each coordinate is quantized into q equal cells
//! whose representative values are evenly spaced in [3, 4], and prior and
//! likelihood are evaluated at the representatives. Cell probabilities are
//! then an exact finite sum, so any sampler that walks the continuous state
//! space can be checked against the enumerated distribution in total
//! variation.
//!
//! The likelihood tables come from real forward solves on the 2×2 grid:
//! the fine table from the direct solver, the surrogate table from a
//! single-iteration truncated-CG solve — a genuinely biased approximation,
//! which is exactly what the two-level kernels must correct for.

use crate::error::{Error, Result};
use crate::grid::{ConductivityField, GridSpec};
use crate::posterior::{log_likelihood, EvalCost, NoiseModel, Target, TwoLevel};
use crate::prior::{Prior, TricubePrior, LOWER_BOUND, UPPER_BOUND};
use crate::solver;

/// Maximum enumerable state count.
pub const MAX_STATES: usize = 10_000;

/// Configuration for building the toy tables. Fully deterministic: the
/// data vector is the exact fine prediction at `truth_state` (the
/// discreteness of the state space already spreads the posterior; no
/// synthetic noise is added).
#[derive(Debug, Clone)]
pub struct ToyConfig {
    /// Quantization levels per pixel (q ≥ 2; q⁴ states total).
    pub levels: usize,
    /// State index whose fine prediction becomes the data.
    pub truth_state: usize,
    /// Observation noise sd entering the likelihood.
    pub sigma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        // truth 0b0110 puts the high pixels on the anti-diagonal — the
        // state the smoothing prior likes least — so prior and data pull in
        // different directions; sigma 0.05 balances them so that all 16
        // states carry visible mass (max ≈ 0.14) and sampler errors surface
        // as TV distance. Note the 2×2 layout cannot distinguish 0110 from
        // 1001 (mirror symmetry), so those two states tie exactly.
        ToyConfig { levels: 2, truth_state: 6, sigma: 0.05 }
    }
}

/// Precomputed likelihood/prediction tables over all q⁴ states.
#[derive(Debug, Clone)]
pub struct ToyTables {
    levels: usize,
    reps: Vec<f64>,
    prior: Prior,
    noise: NoiseModel,
    y: Vec<f64>,
    eta_fine: Vec<Vec<f64>>,
    eta_surr: Vec<Vec<f64>>,
    ll_fine: Vec<f64>,
    ll_surr: Vec<f64>,
    grid: GridSpec,
}

impl ToyTables {
    pub fn build(config: &ToyConfig) -> Result<ToyTables> {
        let q = config.levels;
        if q < 2 {
            return Err(Error::config(format!("toy posterior needs ≥ 2 levels, got {q}")));
        }
        let states = q.pow(4);
        if states > MAX_STATES {
            return Err(Error::config(format!(
                "toy state space {states} exceeds the enumerable limit {MAX_STATES}"
            )));
        }
        if config.truth_state >= states {
            return Err(Error::config(format!(
                "truth state {} out of range for {states} states",
                config.truth_state
            )));
        }
        let noise = NoiseModel::new(config.sigma)?;
        let grid = GridSpec::new(2)?;
        let reps: Vec<f64> = (0..q)
            .map(|j| 3.0 + j as f64 / (q - 1) as f64)
            .collect();
        let mut eta_fine = Vec::with_capacity(states);
        let mut eta_surr = Vec::with_capacity(states);
        for s in 0..states {
            let field = ConductivityField::new(grid, Self::rep_state_of(s, q, &reps))?;
            eta_fine.push(solver::solve_fine(&field)?.flat());
            eta_surr.push(solver::solve_approx(&field, 1)?.flat());
        }
        let y = eta_fine[config.truth_state].clone();
        let ll_fine = eta_fine
            .iter()
            .map(|eta| log_likelihood(&y, eta, &noise))
            .collect::<Result<Vec<f64>>>()?;
        let ll_surr = eta_surr
            .iter()
            .map(|eta| log_likelihood(&y, eta, &noise))
            .collect::<Result<Vec<f64>>>()?;
        Ok(ToyTables {
            levels: q,
            reps,
            prior: Prior::Tricube(TricubePrior::default()),
            noise,
            y,
            eta_fine,
            eta_surr,
            ll_fine,
            ll_surr,
            grid,
        })
    }

    fn rep_state_of(s: usize, q: usize, reps: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(4);
        let mut rem = s;
        for _ in 0..4 {
            v.push(reps[rem % q]);
            rem /= q;
        }
        v
    }

    pub fn state_count(&self) -> usize {
        self.levels.pow(4)
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    /// Quantization level of one coordinate value.
    fn level_of(&self, v: f64) -> usize {
        let q = self.levels as f64;
        let cell = ((v - LOWER_BOUND) / ((UPPER_BOUND - LOWER_BOUND) / q)).floor();
        (cell.max(0.0) as usize).min(self.levels - 1)
    }

    /// Flat state index of a continuous 4-vector.
    pub fn state_index(&self, state: &[f64]) -> usize {
        debug_assert_eq!(state.len(), 4);
        let mut idx = 0;
        for (p, v) in state.iter().enumerate() {
            idx += self.level_of(*v) * self.levels.pow(p as u32);
        }
        idx
    }

    /// Representative (cell-center) coordinates of state `s`.
    pub fn representative(&self, s: usize) -> Vec<f64> {
        Self::rep_state_of(s, self.levels, &self.reps)
    }

    fn quantized(&self, state: &[f64]) -> Vec<f64> {
        state.iter().map(|v| self.reps[self.level_of(*v)]).collect()
    }

    fn rep_field(&self, state: &[f64]) -> ConductivityField {
        ConductivityField::new(self.grid, self.quantized(state)).expect("reps are finite")
    }

    /// View of the tables as a sampling target at one fidelity.
    pub fn target(&self, fidelity: ToyFidelity) -> ToyTarget<'_> {
        ToyTarget { tables: self, fidelity }
    }
}

/// Which likelihood table a [`ToyTarget`] reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyFidelity {
    /// Direct-solver table; evaluations count as fine solves.
    Fine,
    /// Single-iteration CG table; evaluations count as approx solves.
    Surrogate,
}

/// The toy posterior as a sampling target (see [`Target`]).
#[derive(Clone, Copy)]
pub struct ToyTarget<'a> {
    tables: &'a ToyTables,
    fidelity: ToyFidelity,
}

impl ToyTarget<'_> {
    pub fn tables(&self) -> &ToyTables {
        self.tables
    }
}

impl Target for ToyTarget<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn log_prior(&self, state: &[f64]) -> f64 {
        if state.iter().any(|v| !(LOWER_BOUND..=UPPER_BOUND).contains(v)) {
            return f64::NEG_INFINITY;
        }
        self.tables.prior.log_prior(&self.tables.rep_field(state))
    }

    fn site_log_prior_ratio(&self, state: &[f64], i: usize, v_new: f64) -> f64 {
        if !(LOWER_BOUND..=UPPER_BOUND).contains(&v_new) {
            return f64::NEG_INFINITY;
        }
        let rep_new = self.tables.reps[self.tables.level_of(v_new)];
        self.tables
            .prior
            .site_log_ratio(&self.tables.rep_field(state), i, rep_new)
            .expect("MRF prior")
    }

    fn log_likelihood(&self, state: &[f64], cost: &mut EvalCost) -> Result<f64> {
        let idx = self.tables.state_index(state);
        Ok(match self.fidelity {
            ToyFidelity::Fine => {
                cost.fine += 1;
                self.tables.ll_fine[idx]
            }
            ToyFidelity::Surrogate => {
                cost.approx += 1;
                self.tables.ll_surr[idx]
            }
        })
    }
}

impl TwoLevel for ToyTarget<'_> {
    fn data(&self) -> &[f64] {
        &self.tables.y
    }

    fn noise(&self) -> &NoiseModel {
        &self.tables.noise
    }

    fn eta_fine(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>> {
        cost.fine += 1;
        Ok(self.tables.eta_fine[self.tables.state_index(state)].clone())
    }

    fn eta_coarse(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>> {
        cost.coarse += 1;
        Ok(self.tables.eta_surr[self.tables.state_index(state)].clone())
    }
}

/// Exact posterior over all states by direct summation, through the same
/// prior/likelihood entry points the samplers call. Refuses state spaces
/// beyond [`MAX_STATES`].
pub fn enumerate_posterior(tables: &ToyTables) -> Result<Vec<f64>> {
    let states = tables.state_count();
    if states > MAX_STATES {
        return Err(Error::config(format!(
            "refusing to enumerate {states} states (limit {MAX_STATES})"
        )));
    }
    let target = tables.target(ToyFidelity::Fine);
    let mut cost = EvalCost::default();
    let mut logs = Vec::with_capacity(states);
    for s in 0..states {
        let state = tables.representative(s);
        let lp = target.log_prior(&state) + target.log_likelihood(&state, &mut cost)?;
        logs.push(lp);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Total-variation distance ½·Σ|p−q| between two distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalized histogram over state indices.
pub fn empirical_distribution(indices: &[usize], states: usize) -> Vec<f64> {
    let mut counts = vec![0.0; states];
    for &i in indices {
        counts[i] += 1.0;
    }
    let total = indices.len() as f64;
    counts.iter().map(|c| c / total).collect()
}
