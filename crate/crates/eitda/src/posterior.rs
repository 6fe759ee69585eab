//! Likelihoods and log-posteriors at every solver fidelity, plus the
//! running bias statistics behind the adaptive coarse likelihood.
//!
//! The observation model is y = η(x) + e with isotropic Gaussian noise
//! e ~ N(0, σ²·I) on the n = 256 mean-centered voltages. The adaptive
//! variant models the coarse solver's error with a running mean b and
//! covariance Σ_b of observed fine−coarse residuals, giving
//! N(y; η_c(x) + b, σ²I + Σ_b); its log-density keeps the determinant term
//! (normalized so the empty bias state reduces exactly to the plain
//! likelihood), because Σ_b changes between adaptation steps and dropping
//! the determinant would silently distort acceptance ratios.

use crate::error::{Error, Result};
use crate::grid::{ConductivityField, CoarsenRule, GridSpec};
use crate::linalg::DenseCholesky;
use crate::prior::{expand_latent, ConvolutionPrior, Prior};
use crate::solver;
use std::fmt::Write as _;
use std::path::Path;

/// Length of one flattened voltage observation: 16 drive patterns × 16
/// electrodes.
pub const DATA_DIM: usize = 256;

/// Counts of forward-solver evaluations by fidelity. Every likelihood
/// evaluation increments exactly one counter; samplers report these
/// receipts and the totals must reconcile exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCost {
    pub fine: u64,
    pub approx: u64,
    pub coarse: u64,
}

impl EvalCost {
    pub fn total(&self) -> u64 {
        self.fine + self.approx + self.coarse
    }
}

impl std::ops::AddAssign for EvalCost {
    fn add_assign(&mut self, rhs: EvalCost) {
        self.fine += rhs.fine;
        self.approx += rhs.approx;
        self.coarse += rhs.coarse;
    }
}

/// Isotropic observation noise: Σ_e = σ²·I on the 256-vector of voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::config(format!("noise sd must be positive, got {sigma}")));
        }
        Ok(NoiseModel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Gaussian log-likelihood −‖y − η‖²/(2σ²), up to the x-independent
/// constant (omitted).
pub fn log_likelihood(y: &[f64], eta: &[f64], noise: &NoiseModel) -> Result<f64> {
    if y.len() != eta.len() {
        return Err(Error::config(format!(
            "data length {} does not match prediction length {}",
            y.len(),
            eta.len()
        )));
    }
    let ss: f64 = y.iter().zip(eta).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-ss / (2.0 * noise.sigma * noise.sigma))
}

/// Running mean and covariance of fine−coarse residuals. Functional: the
/// update returns a new state. After k updates, `b` equals the batch mean
/// and `sigma_b` the batch population covariance of the residual stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasState {
    k: u64,
    b: Vec<f64>,
    sigma_b: Vec<f64>, // n×n row-major
}

impl BiasState {
    /// Empty state: k=0, zero mean, zero covariance.
    pub fn zero(n: usize) -> BiasState {
        BiasState { k: 0, b: vec![0.0; n], sigma_b: vec![0.0; n * n] }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn sigma_b(&self) -> &[f64] {
        &self.sigma_b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Folds one residual into the running statistics:
    /// k' = k+1, b' = ((k'−1)·b + r)/k', and the covariance picks up
    /// ((k'−1)/k')·δδᵀ with δ = r − b before rescaling by 1/k'. The
    /// rank-one term uses the symmetric product of the pre- and post-update
    /// centered residual, which keeps the recursion equal to the batch
    /// population covariance (not the lagged variant that would drift from
    /// it).
    pub fn update(&self, residual: &[f64]) -> Result<BiasState> {
        let n = self.b.len();
        if residual.len() != n {
            return Err(Error::config(format!(
                "residual length {} does not match bias dimension {n}",
                residual.len()
            )));
        }
        let kp = self.k + 1;
        let kf = kp as f64;
        let delta: Vec<f64> = residual.iter().zip(&self.b).map(|(r, b)| r - b).collect();
        let b: Vec<f64> = self
            .b
            .iter()
            .zip(residual)
            .map(|(b, r)| ((kf - 1.0) * b + r) / kf)
            .collect();
        let coef = (kf - 1.0) / kf;
        let mut sigma_b = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sigma_b[i * n + j] =
                    ((kf - 1.0) * self.sigma_b[i * n + j] + coef * delta[i] * delta[j]) / kf;
            }
        }
        Ok(BiasState { k: kp, b, sigma_b })
    }

    /// Plain-text checkpoint format: "k n", then b on one line, then n
    /// rows of Σ_b; 17 significant digits, so the round trip is exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.b.len();
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.k, n);
        let _ = writeln!(s, "{}", join_precise(&self.b));
        for row in self.sigma_b.chunks(n) {
            let _ = writeln!(s, "{}", join_precise(row));
        }
        crate::write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<BiasState> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
    }

    pub(crate) fn parse(text: &str) -> std::result::Result<BiasState, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty bias state")?;
        let mut it = header.split_whitespace();
        let k: u64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or("line 1: expected counter k")?;
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or("line 1: expected dimension n")?;
        let parse_row = |line: &str, what: &str| -> std::result::Result<Vec<f64>, String> {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("{what}: non-numeric value"))?;
            if vals.len() != n {
                return Err(format!("{what}: expected {n} values, got {}", vals.len()));
            }
            Ok(vals)
        };
        let b = parse_row(lines.next().ok_or("missing bias mean line")?, "line 2")?;
        let mut sigma_b = Vec::with_capacity(n * n);
        for i in 0..n {
            let row = parse_row(
                lines.next().ok_or_else(|| format!("expected {n} covariance rows, got {i}"))?,
                &format!("line {}", i + 3),
            )?;
            sigma_b.extend(row);
        }
        if k == 0 && (b.iter().any(|v| *v != 0.0) || sigma_b.iter().any(|v| *v != 0.0)) {
            return Err("k=0 state must have zero mean and covariance".into());
        }
        Ok(BiasState { k, b, sigma_b })
    }

    pub(crate) fn serialize(&self) -> String {
        let n = self.b.len();
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.k, n);
        let _ = writeln!(s, "{}", join_precise(&self.b));
        for row in self.sigma_b.chunks(n) {
            let _ = writeln!(s, "{}", join_precise(row));
        }
        s
    }
}

pub(crate) fn join_precise(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ")
}

/// The adaptive coarse likelihood with its covariance factorization cached:
/// N(y; η_c(x) + b, σ²I + Σ_b), determinant term normalized so the empty
/// bias state reproduces [`log_likelihood`] exactly. Build once per
/// adaptation step, evaluate many times.
#[derive(Debug, Clone)]
pub struct AdaptiveLikelihood {
    sigma: f64,
    b: Vec<f64>,
    /// None for the empty (k=0) state — plain likelihood fast path.
    chol: Option<DenseCholesky>,
    half_logdet_norm: f64,
}

impl AdaptiveLikelihood {
    pub fn new(noise: &NoiseModel, bias: &BiasState) -> Result<Self> {
        let n = bias.dim();
        if bias.k() == 0 {
            return Ok(AdaptiveLikelihood {
                sigma: noise.sigma(),
                b: vec![0.0; n],
                chol: None,
                half_logdet_norm: 0.0,
            });
        }
        let s2 = noise.sigma() * noise.sigma();
        let mut m = bias.sigma_b().to_vec();
        for i in 0..n {
            m[i * n + i] += s2;
        }
        let chol = DenseCholesky::factor(&m, n)?;
        let half_logdet_norm = chol.log_diag_sum() - n as f64 * noise.sigma().ln();
        Ok(AdaptiveLikelihood {
            sigma: noise.sigma(),
            b: bias.b().to_vec(),
            chol: Some(chol),
            half_logdet_norm,
        })
    }

    /// −½·(y−η_c−b)ᵀ(σ²I+Σ_b)⁻¹(y−η_c−b) − ½·logdet(I + Σ_b/σ²), up to
    /// the same constant omitted by [`log_likelihood`].
    pub fn log_density(&self, y: &[f64], eta_c: &[f64]) -> Result<f64> {
        if y.len() != self.b.len() || eta_c.len() != self.b.len() {
            return Err(Error::config(format!(
                "adaptive likelihood dimension {} does not match inputs {}/{}",
                self.b.len(),
                y.len(),
                eta_c.len()
            )));
        }
        match &self.chol {
            None => {
                let ss: f64 = y
                    .iter()
                    .zip(eta_c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                Ok(-ss / (2.0 * self.sigma * self.sigma))
            }
            Some(chol) => {
                let mut r: Vec<f64> = y
                    .iter()
                    .zip(eta_c)
                    .zip(&self.b)
                    .map(|((y, e), b)| y - e - b)
                    .collect();
                chol.solve_lower_in_place(&mut r);
                let quad: f64 = r.iter().map(|z| z * z).sum();
                Ok(-0.5 * quad - self.half_logdet_norm)
            }
        }
    }
}

/// One-shot adaptive likelihood evaluation (factors per call; samplers use
/// [`AdaptiveLikelihood`] to reuse the factorization).
pub fn log_likelihood_adaptive(
    y: &[f64],
    eta_c: &[f64],
    noise: &NoiseModel,
    bias: &BiasState,
) -> Result<f64> {
    AdaptiveLikelihood::new(noise, bias)?.log_density(y, eta_c)
}

/// Which forward solver a posterior evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fidelity {
    Fine,
    Approx { iters: usize },
    Coarse { side: usize, rule: CoarsenRule },
    /// Coarse solver wrapped in the adaptive bias-corrected likelihood;
    /// evaluation requires an [`AdaptiveLikelihood`] built from the chain's
    /// current [`BiasState`].
    CoarseAdaptive { side: usize, rule: CoarsenRule },
}

/// A fully specified posterior: data, noise, prior, solver fidelity.
#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    pub y: Vec<f64>,
    pub noise: NoiseModel,
    pub prior: Prior,
    pub fidelity: Fidelity,
}

impl PosteriorSpec {
    pub fn new(y: Vec<f64>, noise: NoiseModel, prior: Prior, fidelity: Fidelity) -> Result<Self> {
        if y.len() != DATA_DIM {
            return Err(Error::config(format!(
                "data must have {DATA_DIM} components, got {}",
                y.len()
            )));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("data must be finite, got {v}")));
        }
        Ok(PosteriorSpec { y, noise, prior, fidelity })
    }

    /// Runs this fidelity's solver on the (fine-grid) field and flattens
    /// the 16×16 voltages; increments exactly one cost counter.
    pub fn eta(&self, x: &ConductivityField, cost: &mut EvalCost) -> Result<Vec<f64>> {
        let v = match self.fidelity {
            Fidelity::Fine => {
                cost.fine += 1;
                solver::solve_fine(x)?
            }
            Fidelity::Approx { iters } => {
                cost.approx += 1;
                solver::solve_approx(x, iters)?
            }
            Fidelity::Coarse { side, rule } | Fidelity::CoarseAdaptive { side, rule } => {
                cost.coarse += 1;
                solver::solve_coarse(x, GridSpec::new(side)?, rule)?
            }
        };
        Ok(v.flat())
    }

    /// log-prior + log-likelihood at this spec's fidelity. Returns −∞
    /// without any solver call when the prior support is violated. The
    /// adaptive fidelity must go through [`Self::log_posterior_adaptive`].
    pub fn log_posterior(&self, x: &ConductivityField, cost: &mut EvalCost) -> Result<f64> {
        if matches!(self.fidelity, Fidelity::CoarseAdaptive { .. }) {
            return Err(Error::config(
                "adaptive fidelity needs a bias state; use log_posterior_adaptive",
            ));
        }
        let lp = self.prior.log_prior(x);
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let eta = self.eta(x, cost)?;
        Ok(lp + log_likelihood(&self.y, &eta, &self.noise)?)
    }

    /// log-prior + adaptive coarse log-likelihood under the supplied
    /// (frozen) bias correction.
    pub fn log_posterior_adaptive(
        &self,
        x: &ConductivityField,
        adaptive: &AdaptiveLikelihood,
        cost: &mut EvalCost,
    ) -> Result<f64> {
        let lp = self.prior.log_prior(x);
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let eta = self.eta(x, cost)?;
        Ok(lp + adaptive.log_density(&self.y, &eta)?)
    }
}

/// What a Metropolis kernel needs from a posterior: prior geometry over a
/// flat coordinate vector plus a likelihood with cost receipts. States are
/// plain `&[f64]` so the same kernels drive pixel fields, latent knot
/// weights, and the enumerable toy problem.
pub trait Target {
    fn dim(&self) -> usize;

    /// Full log-prior, −∞ outside the support.
    fn log_prior(&self, state: &[f64]) -> f64;

    /// log-prior ratio for changing coordinate `i` to `v_new`, from local
    /// terms only; −∞ when `v_new` leaves the support.
    fn site_log_prior_ratio(&self, state: &[f64], i: usize, v_new: f64) -> f64;

    /// Log-likelihood of the state; −∞ for states the forward model cannot
    /// evaluate (counted as no solver call). Increments one counter per
    /// solver run.
    fn log_likelihood(&self, state: &[f64], cost: &mut EvalCost) -> Result<f64>;
}

/// A target that exposes separate fine and coarse predictions, for the
/// adaptive two-level sampler: the fine likelihood is Gaussian around
/// `eta_fine`, the surrogate is the adaptive likelihood around
/// `eta_coarse`, and their difference at visited states feeds
/// [`BiasState::update`].
pub trait TwoLevel: Target {
    fn data(&self) -> &[f64];
    fn noise(&self) -> &NoiseModel;
    fn eta_fine(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>>;
    fn eta_coarse(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>>;

    /// Whether the forward model can evaluate this state. States inside the
    /// prior support can still be unpredictable when a latent
    /// parametrization expands to a non-positive conductivity; such states
    /// carry zero posterior mass and must be rejected before calling the
    /// `eta_*` methods. Costs nothing against the evaluation counters.
    fn predictable(&self, state: &[f64]) -> Result<bool> {
        let _ = state;
        Ok(true)
    }
}

/// How a sampler coordinate vector maps to a conductivity field.
#[derive(Debug, Clone)]
pub enum Parametrization {
    /// Coordinates are the pixel values themselves.
    Pixel,
    /// Coordinates are latent knot weights u; the field is
    /// shift + scale·(kernel expansion of u). Requires a convolution
    /// prior.
    Latent { shift: f64, scale: f64 },
}

/// The EIT posterior as a sampling target.
pub struct EitTarget {
    spec: PosteriorSpec,
    grid: GridSpec,
    param: Parametrization,
    /// Coarse level for two-level sampling (side, rule); present when the
    /// target was built for the adaptive sampler.
    coarse: Option<(usize, CoarsenRule)>,
}

impl EitTarget {
    pub fn new(spec: PosteriorSpec, grid: GridSpec, param: Parametrization) -> Result<Self> {
        if matches!(param, Parametrization::Latent { .. })
            && !matches!(spec.prior, Prior::Convolution(_))
        {
            return Err(Error::config(
                "latent parametrization requires the convolution prior",
            ));
        }
        Ok(EitTarget { spec, grid, param, coarse: None })
    }

    /// Adds a coarse level so the target implements two-level sampling.
    pub fn with_coarse_level(mut self, side: usize, rule: CoarsenRule) -> Result<Self> {
        let fine = self.grid.side();
        if !fine.is_multiple_of(side) {
            return Err(Error::config(format!(
                "coarse side {side} must divide fine side {fine}"
            )));
        }
        self.coarse = Some((side, rule));
        Ok(self)
    }

    pub fn spec(&self) -> &PosteriorSpec {
        &self.spec
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    fn conv_prior(&self) -> &ConvolutionPrior {
        match &self.spec.prior {
            Prior::Convolution(p) => p,
            _ => unreachable!("latent parametrization validated at construction"),
        }
    }

    /// Materializes the conductivity field for a coordinate vector.
    pub fn field(&self, state: &[f64]) -> Result<ConductivityField> {
        match &self.param {
            Parametrization::Pixel => ConductivityField::new(self.grid, state.to_vec()),
            Parametrization::Latent { shift, scale } => {
                let raw = expand_latent(self.conv_prior(), state, self.grid)?;
                let vals = raw.values().iter().map(|v| shift + scale * v).collect();
                ConductivityField::new(self.grid, vals)
            }
        }
    }

    /// A solvable field, or None when the parametrization produced
    /// non-positive conductivities (zero posterior mass, no solver call).
    fn solvable_field(&self, state: &[f64]) -> Result<Option<ConductivityField>> {
        let f = self.field(state)?;
        if f.values().iter().any(|v| !(*v > 0.0)) {
            return Ok(None);
        }
        Ok(Some(f))
    }
}

impl Target for EitTarget {
    fn dim(&self) -> usize {
        match &self.param {
            Parametrization::Pixel => self.grid.cells(),
            Parametrization::Latent { .. } => self.conv_prior().knots().len(),
        }
    }

    fn log_prior(&self, state: &[f64]) -> f64 {
        match &self.param {
            Parametrization::Pixel => {
                let f = match ConductivityField::new(self.grid, state.to_vec()) {
                    Ok(f) => f,
                    Err(_) => return f64::NEG_INFINITY,
                };
                self.spec.prior.log_prior(&f)
            }
            Parametrization::Latent { .. } => self
                .conv_prior()
                .log_latent_density(state)
                .unwrap_or(f64::NEG_INFINITY),
        }
    }

    fn site_log_prior_ratio(&self, state: &[f64], i: usize, v_new: f64) -> f64 {
        if !v_new.is_finite() {
            return f64::NEG_INFINITY;
        }
        match &self.param {
            Parametrization::Pixel => {
                let f = match ConductivityField::new(self.grid, state.to_vec()) {
                    Ok(f) => f,
                    Err(_) => return f64::NEG_INFINITY,
                };
                self.spec
                    .prior
                    .site_log_ratio(&f, i, v_new)
                    .unwrap_or(f64::NEG_INFINITY)
            }
            Parametrization::Latent { .. } => {
                let su = self.conv_prior().sigma_u();
                (state[i] * state[i] - v_new * v_new) / (2.0 * su * su)
            }
        }
    }

    fn log_likelihood(&self, state: &[f64], cost: &mut EvalCost) -> Result<f64> {
        let Some(f) = self.solvable_field(state)? else {
            return Ok(f64::NEG_INFINITY);
        };
        let eta = self.spec.eta(&f, cost)?;
        match self.spec.fidelity {
            Fidelity::CoarseAdaptive { .. } => Err(Error::config(
                "adaptive fidelity is evaluated through the two-level sampler, \
                 not Target::log_likelihood",
            )),
            _ => log_likelihood(&self.spec.y, &eta, &self.spec.noise),
        }
    }
}

impl TwoLevel for EitTarget {
    fn data(&self) -> &[f64] {
        &self.spec.y
    }

    fn noise(&self) -> &NoiseModel {
        &self.spec.noise
    }

    fn eta_fine(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>> {
        let Some(f) = self.solvable_field(state)? else {
            return Err(Error::numerical(
                "fine prediction requested at a non-positive conductivity state",
            ));
        };
        cost.fine += 1;
        Ok(solver::solve_fine(&f)?.flat())
    }

    fn eta_coarse(&self, state: &[f64], cost: &mut EvalCost) -> Result<Vec<f64>> {
        let (side, rule) = self.coarse.ok_or_else(|| {
            Error::config("target was built without a coarse level; call with_coarse_level")
        })?;
        let Some(f) = self.solvable_field(state)? else {
            return Err(Error::numerical(
                "coarse prediction requested at a non-positive conductivity state",
            ));
        };
        cost.coarse += 1;
        Ok(solver::solve_coarse(&f, GridSpec::new(side)?, rule)?.flat())
    }

    fn predictable(&self, state: &[f64]) -> Result<bool> {
        Ok(self.solvable_field(state)?.is_some())
    }
}
