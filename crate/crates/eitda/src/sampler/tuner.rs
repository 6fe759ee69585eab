//! Windowed stochastic approximation of a proposal scale.

use crate::error::{Error, Result};

/// Robbins–Monro controller that nudges a proposal scale toward a target
/// acceptance rate.
///
/// Outcomes are accumulated over a fixed window of proposals; at the end of
/// a window the driving kernel multiplies its scale by
/// `exp(g * (rate - target))`. The update lives on the log scale, so the
/// scale stays positive and a window that lands exactly on the target
/// leaves it untouched.
///
/// The gain has two regimes. A window whose rate is *saturated* — below
/// half the target or beyond the midpoint between target and one, where the
/// rate barely responds to the scale — applies the full base gain and does
/// not advance the decay schedule, so a chain started many orders of
/// magnitude off travels geometrically until it reaches the responsive
/// zone. Responsive windows then refine with `g = gain / sqrt(t)`, `t`
/// counting responsive windows only; the diminishing adjustments are what
/// let the run freeze the scale after burn-in without a visible seam in the
/// trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTuner {
    target_rate: f64,
    window: u64,
    gain: f64,
    windows_done: u64,
    proposals: u64,
    accepts: u64,
}

impl ScaleTuner {
    /// Default proposals per adaptation window.
    pub const DEFAULT_WINDOW: u64 = 100;
    /// Default base gain.
    pub const DEFAULT_GAIN: f64 = 1.0;

    /// Creates a tuner aiming at `target_rate` with `window` proposals per
    /// adjustment and base gain `gain`.
    pub fn new(target_rate: f64, window: u64, gain: f64) -> Result<Self> {
        if !(target_rate > 0.0 && target_rate < 1.0) {
            return Err(Error::config(format!(
                "tuner target rate must lie strictly inside (0, 1), got {target_rate}"
            )));
        }
        if window == 0 {
            return Err(Error::config("tuner window must be positive"));
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::config(format!(
                "tuner gain must be a positive finite number, got {gain}"
            )));
        }
        Ok(Self {
            target_rate,
            window,
            gain,
            windows_done: 0,
            proposals: 0,
            accepts: 0,
        })
    }

    /// Tuner with default window and gain.
    pub fn with_target(target_rate: f64) -> Result<Self> {
        Self::new(target_rate, Self::DEFAULT_WINDOW, Self::DEFAULT_GAIN)
    }

    /// Rebuilds a tuner mid-schedule from checkpointed counters.
    pub fn restore(
        target_rate: f64,
        window: u64,
        gain: f64,
        windows_done: u64,
        proposals: u64,
        accepts: u64,
    ) -> Result<Self> {
        let mut tuner = Self::new(target_rate, window, gain)?;
        if proposals >= window || accepts > proposals {
            return Err(Error::config(format!(
                "tuner counters out of range: {accepts}/{proposals} in a window of {window}"
            )));
        }
        tuner.windows_done = windows_done;
        tuner.proposals = proposals;
        tuner.accepts = accepts;
        Ok(tuner)
    }

    /// Acceptance rate the tuner steers toward.
    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    /// Proposals per adaptation window.
    pub fn window(&self) -> u64 {
        self.window
    }

    /// Base gain.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Completed responsive (non-saturated) adaptation windows.
    pub fn windows_done(&self) -> u64 {
        self.windows_done
    }

    /// Outcomes recorded in the currently open window, as
    /// `(proposals, accepts)`.
    pub fn pending(&self) -> (u64, u64) {
        (self.proposals, self.accepts)
    }

    /// Records one proposal outcome. At a window boundary, returns the
    /// factor the caller must multiply its scale by; otherwise `None`.
    pub fn record(&mut self, accepted: bool) -> Option<f64> {
        self.proposals += 1;
        if accepted {
            self.accepts += 1;
        }
        if self.proposals < self.window {
            return None;
        }
        let rate = self.accepts as f64 / self.proposals as f64;
        self.proposals = 0;
        self.accepts = 0;
        let saturated =
            rate < self.target_rate / 2.0 || rate > (1.0 + self.target_rate) / 2.0;
        let gain_t = if saturated {
            self.gain
        } else {
            self.windows_done += 1;
            self.gain / (self.windows_done as f64).sqrt()
        };
        Some((gain_t * (rate - self.target_rate)).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive(tuner: &mut ScaleTuner, accepted: usize, total: usize) -> f64 {
        let mut factor = None;
        for i in 0..total {
            if let Some(f) = tuner.record(i < accepted) {
                factor = Some(f);
            }
        }
        factor.expect("window boundary reached")
    }

    #[test]
    fn on_target_window_leaves_scale_essentially_unchanged() {
        let mut tuner = ScaleTuner::new(0.3, 100, 1.0).unwrap();
        let factor = drive(&mut tuner, 30, 100);
        assert!((factor - 1.0).abs() < 0.01, "factor {factor}");
    }

    #[test]
    fn all_rejections_shrink_and_all_accepts_grow_the_scale() {
        let mut tuner = ScaleTuner::new(0.3, 50, 1.0).unwrap();
        let shrink = drive(&mut tuner, 0, 50);
        assert!(shrink < 1.0);
        let grow = drive(&mut tuner, 50, 50);
        assert!(grow > 1.0);
    }

    #[test]
    fn gain_decays_across_responsive_windows() {
        let mut tuner = ScaleTuner::new(0.5, 10, 1.0).unwrap();
        // Rate 0.7 is inside the responsive zone for target 0.5.
        let first = drive(&mut tuner, 7, 10);
        let second = drive(&mut tuner, 7, 10);
        let third = drive(&mut tuner, 7, 10);
        // Same observed rate, diminishing correction.
        assert!(first > second && second > third && third > 1.0);
        let expected = (0.2 / 3.0_f64.sqrt()).exp();
        assert!((third - expected).abs() < 1e-12);
        assert_eq!(tuner.windows_done(), 3);
    }

    #[test]
    fn saturated_windows_keep_full_gain_and_do_not_advance_the_schedule() {
        let mut tuner = ScaleTuner::new(0.3, 10, 1.0).unwrap();
        // Zero acceptance is saturated: full-gain shrink, schedule frozen.
        let first = drive(&mut tuner, 0, 10);
        let second = drive(&mut tuner, 0, 10);
        assert!(((-0.3_f64).exp() - first).abs() < 1e-12);
        assert_eq!(first, second);
        assert_eq!(tuner.windows_done(), 0);
        // Once responsive, the decay starts counting.
        let third = drive(&mut tuner, 3, 10);
        assert!((third - 1.0).abs() < 1e-12);
        assert_eq!(tuner.windows_done(), 1);
    }

    #[test]
    fn restore_resumes_mid_window() {
        let mut original = ScaleTuner::new(0.3, 10, 1.0).unwrap();
        for i in 0..17 {
            original.record(i % 2 == 0);
        }
        let (proposals, accepts) = original.pending();
        let mut copy = ScaleTuner::restore(
            original.target_rate(),
            original.window(),
            original.gain(),
            original.windows_done(),
            proposals,
            accepts,
        )
        .unwrap();
        assert_eq!(copy, original);
        // Both finish the open window with identical factors.
        for i in 0..3 {
            assert_eq!(original.record(i == 0), copy.record(i == 0));
        }
        assert!(ScaleTuner::restore(0.3, 10, 1.0, 0, 10, 0).is_err());
        assert!(ScaleTuner::restore(0.3, 10, 1.0, 0, 3, 4).is_err());
    }

    #[test]
    fn rejects_degenerate_configuration() {
        assert!(ScaleTuner::new(0.0, 10, 1.0).is_err());
        assert!(ScaleTuner::new(1.0, 10, 1.0).is_err());
        assert!(ScaleTuner::new(0.3, 0, 1.0).is_err());
        assert!(ScaleTuner::new(0.3, 10, 0.0).is_err());
        assert!(ScaleTuner::new(0.3, 10, f64::NAN).is_err());
    }
}
