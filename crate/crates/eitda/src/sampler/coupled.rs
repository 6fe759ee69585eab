//! Metropolis-coupled pair of chains at two fidelities.

use rand_chacha::ChaCha8Rng;

use super::{metropolis_accept, AcceptanceTally, SingleSiteKernel};
use crate::error::{Error, Result};
use crate::posterior::{EvalCost, Target};

/// Two single-site chains — one on the accurate posterior, one on a
/// surrogate — that exchange states through Metropolis swap moves.
///
/// One [`step`](CoupledKernel::step) runs `surrogate_sweeps` sweeps of the
/// surrogate chain, one sweep of the accurate chain, then proposes swapping
/// the two states. Both targets must share the same prior; the prior terms
/// then cancel and the swap ratio reduces to cross-evaluated likelihoods:
///
/// ```text
/// log r = [ll_acc(x_surr) − ll_acc(x_acc)] − [ll_surr(x_surr) − ll_surr(x_acc)]
/// ```
///
/// The bracketed grouping matters: it makes the ratio *exactly* zero both
/// when the chains hold equal states and when the two fidelities coincide,
/// so such swaps always accept without consuming an acceptance variate.
/// Each swap proposal costs exactly one accurate and one surrogate
/// evaluation.
///
/// The sweeps of the two chains are independent between swap barriers, so
/// an implementation may run them concurrently; this one interleaves them
/// on the caller's RNG (surrogate first) to keep runs reproducible from a
/// single seed.
pub struct CoupledKernel<'a, TA: Target, TS: Target> {
    accurate: SingleSiteKernel<'a, TA>,
    surrogate: SingleSiteKernel<'a, TS>,
    surrogate_sweeps: usize,
    swap_tally: AcceptanceTally,
}

impl<'a, TA: Target, TS: Target> CoupledKernel<'a, TA, TS> {
    /// Couples two prebuilt chains; `surrogate_sweeps` is the number of
    /// surrogate sweeps per accurate sweep (≥ 1).
    pub fn new(
        accurate: SingleSiteKernel<'a, TA>,
        surrogate: SingleSiteKernel<'a, TS>,
        surrogate_sweeps: usize,
    ) -> Result<Self> {
        if surrogate_sweeps == 0 {
            return Err(Error::config(
                "coupled kernel needs at least one surrogate sweep per step",
            ));
        }
        if accurate.state().len() != surrogate.state().len() {
            return Err(Error::config(format!(
                "coupled chains disagree on dimension: {} vs {}",
                accurate.state().len(),
                surrogate.state().len()
            )));
        }
        Ok(CoupledKernel {
            accurate,
            surrogate,
            surrogate_sweeps,
            swap_tally: AcceptanceTally::default(),
        })
    }

    /// Rebuilds a coupled pair from checkpointed chains (use
    /// [`SingleSiteKernel::restore`] for each) and the saved swap tally.
    pub fn restore(
        accurate: SingleSiteKernel<'a, TA>,
        surrogate: SingleSiteKernel<'a, TS>,
        surrogate_sweeps: usize,
        swap_tally: AcceptanceTally,
    ) -> Result<Self> {
        let mut kernel = Self::new(accurate, surrogate, surrogate_sweeps)?;
        kernel.swap_tally = swap_tally;
        Ok(kernel)
    }

    /// State of the accurate chain — the one whose samples estimate the
    /// posterior.
    pub fn state(&self) -> &[f64] {
        self.accurate.state()
    }

    pub fn surrogate_state(&self) -> &[f64] {
        self.surrogate.state()
    }

    pub fn accurate_chain(&self) -> &SingleSiteKernel<'a, TA> {
        &self.accurate
    }

    pub fn accurate_chain_mut(&mut self) -> &mut SingleSiteKernel<'a, TA> {
        &mut self.accurate
    }

    pub fn surrogate_chain(&self) -> &SingleSiteKernel<'a, TS> {
        &self.surrogate
    }

    pub fn surrogate_chain_mut(&mut self) -> &mut SingleSiteKernel<'a, TS> {
        &mut self.surrogate
    }

    pub fn swap_tally(&self) -> AcceptanceTally {
        self.swap_tally
    }

    /// Combined evaluation counters of both chains.
    pub fn cost(&self) -> EvalCost {
        let mut c = self.accurate.cost();
        c += self.surrogate.cost();
        c
    }

    /// Surrogate sweeps, one accurate sweep, then a swap proposal.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        for _ in 0..self.surrogate_sweeps {
            self.surrogate.sweep(rng)?;
        }
        self.accurate.sweep(rng)?;

        let x_acc = self.accurate.state().to_vec();
        let x_surr = self.surrogate.state().to_vec();
        let ll_acc_at_surr = self.accurate.evaluate(&x_surr)?;
        let ll_surr_at_acc = self.surrogate.evaluate(&x_acc)?;
        // Grouped per fidelity so degenerate swaps cancel exactly (see
        // struct docs).
        let log_r = (ll_acc_at_surr - self.accurate.log_like())
            - (self.surrogate.log_like() - ll_surr_at_acc);
        let accepted = metropolis_accept(rng, log_r);
        if accepted {
            self.accurate.replace_state(x_surr, ll_acc_at_surr);
            self.surrogate.replace_state(x_acc, ll_surr_at_acc);
        }
        self.swap_tally.record(accepted);
        Ok(())
    }
}
