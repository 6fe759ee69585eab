//! Drives a configured sampling run end to end: builds the posterior and
//! kernel a [`RunConfig`] describes, advances the chain until the fine-solve
//! budget is spent, thins the trajectory onto a cost axis, and persists four
//! artifacts into the output directory with atomic renames:
//!
//! * `trace.csv` — thinned samples with cumulative evaluation stamps;
//! * `checkpoint.txt` — everything needed to resume: kernel caches, tuner
//!   counters, RNG stream position. All reals carry 17 significant digits,
//!   so a resumed run continues the uninterrupted trajectory byte for byte.
//! * `receipt.txt` — evaluation counters and acceptance tallies;
//! * `config.txt` — the effective configuration with every key explicit.
//!
//! Budgets count accurate (fine) evaluations in units of the state
//! dimension m: `budget = 2000` on a 144-pixel problem stops once 288 000
//! fine solves have been paid, initialization and adaptation included. One
//! record is cut each time cumulative fine evaluations cross a multiple of
//! `record_every · m` — at most one per kernel step — so traces from
//! kernels with very different per-step costs line up on a common axis.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{
    KernelKind, PriorKind, ProblemKind, ProposalKind, RunConfig, SurrogateKind,
};
use crate::data;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::grid::{CoarsenRule, GridSpec};
use crate::posterior::{
    join_precise, BiasState, EitTarget, EvalCost, Fidelity, NoiseModel, Parametrization,
    PosteriorSpec, Target,
};
use crate::prior::{ConvolutionPrior, GmrfPrior, Prior, TricubePrior};
use crate::sampler::{
    AcceptanceTally, AmsdaKernel, CoupledKernel, DaKernel, MsdaKernel, ProposalSpec, RwmKernel,
    ScaleTuner, ScanOrder, SingleSiteKernel,
};
use crate::solver;
use crate::toy::{ToyConfig, ToyFidelity, ToyTables};
use crate::trace::{Trace, TraceRecord};

/// Starting value for every pixel (and the expansion shift for latent
/// runs): the midpoint between the background and inclusion levels, so the
/// chain begins equidistant from both posterior modes.
pub const INITIAL_PIXEL: f64 = 3.5;

/// A chain that makes no accurate evaluation for this many consecutive
/// steps is declared stuck (a pathological proposal scale can reject every
/// inner proposal forever, and a stalled fine counter would otherwise spin
/// without ever reaching the budget).
const STALL_LIMIT: u64 = 100_000;

const CHECKPOINT_MAGIC: &str = "eitda checkpoint v1";

/// File names a run writes into its output directory.
#[derive(Debug, Clone)]
pub struct OutPaths {
    pub trace: PathBuf,
    pub checkpoint: PathBuf,
    pub receipt: PathBuf,
    pub config: PathBuf,
}

impl OutPaths {
    pub fn new(dir: &Path) -> OutPaths {
        OutPaths {
            trace: dir.join("trace.csv"),
            checkpoint: dir.join("checkpoint.txt"),
            receipt: dir.join("receipt.txt"),
            config: dir.join("config.txt"),
        }
    }
}

/// What [`execute`] hands back after the budget is spent.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub trace: Trace,
    /// Combined evaluation counters (both chains, for the coupled kernel).
    pub cost: EvalCost,
    pub steps: u64,
}

/// Frozen adaptation-schedule counters of a [`ScaleTuner`].
#[derive(Debug, Clone, PartialEq)]
pub struct TunerSnapshot {
    pub target: f64,
    pub window: u64,
    pub gain: f64,
    pub windows_done: u64,
    pub proposals: u64,
    pub accepts: u64,
}

impl TunerSnapshot {
    fn of(t: &ScaleTuner) -> TunerSnapshot {
        let (proposals, accepts) = t.pending();
        TunerSnapshot {
            target: t.target_rate(),
            window: t.window(),
            gain: t.gain(),
            windows_done: t.windows_done(),
            proposals,
            accepts,
        }
    }

    fn build(&self) -> Result<ScaleTuner> {
        ScaleTuner::restore(
            self.target,
            self.window,
            self.gain,
            self.windows_done,
            self.proposals,
            self.accepts,
        )
    }

    fn render(&self) -> String {
        format!(
            "{:.16e} {} {:.16e} {} {} {}",
            self.target, self.window, self.gain, self.windows_done, self.proposals, self.accepts
        )
    }

    fn parse(v: &str, key: &str) -> Result<TunerSnapshot> {
        let t: Vec<&str> = v.split_whitespace().collect();
        if t.len() != 6 {
            return Err(Error::parse(format!(
                "checkpoint {key}: expected 6 fields, got {}",
                t.len()
            )));
        }
        Ok(TunerSnapshot {
            target: parse_real(t[0], key)?,
            window: parse_count(t[1], key)?,
            gain: parse_real(t[2], key)?,
            windows_done: parse_count(t[3], key)?,
            proposals: parse_count(t[4], key)?,
            accepts: parse_count(t[5], key)?,
        })
    }
}

/// Checkpointed caches of the second (surrogate) chain of the coupled
/// kernel.
#[derive(Debug, Clone)]
pub struct ChainTwo {
    pub scale: f64,
    pub state: Vec<f64>,
    pub ll: f64,
    pub cost: EvalCost,
    pub tally: AcceptanceTally,
    pub tuner: Option<TunerSnapshot>,
}

/// Checkpointed caches of the adaptive two-level kernel: the fine and
/// coarse predictions at the current state plus the running error model.
#[derive(Debug, Clone)]
pub struct AdaptiveSnapshot {
    pub eta_fine: Vec<f64>,
    pub eta_coarse: Vec<f64>,
    pub bias: BiasState,
}

/// Everything a resumed run needs beyond its config: kernel caches,
/// bookkeeping counters, and the RNG stream position. Plain-text format,
/// `key = value` lines after a magic first line; the adaptive error model
/// follows a final `bias:` marker.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kernel: KernelKind,
    /// Kernel steps taken so far (sweeps or outer steps).
    pub steps: u64,
    /// Next fine-evaluation count at which a record is cut.
    pub next_record: u64,
    /// ChaCha word position; with the config seed this pins the stream.
    pub rng_word_pos: u128,
    /// Current proposal scale (site sd, or the premultiplier for the
    /// all-coordinate walk) — the tuned value, not the configured one.
    pub scale: f64,
    pub state: Vec<f64>,
    /// Cached accurate log-likelihood; NaN for the adaptive kernel, which
    /// caches predictions instead.
    pub ll_a: f64,
    /// Cached surrogate log-likelihood (two-fidelity kernels only).
    pub ll_s: Option<f64>,
    /// Evaluation counters of the main chain.
    pub cost: EvalCost,
    /// Site/stage-one/inner tally, depending on the kernel.
    pub tally1: AcceptanceTally,
    /// Swap/stage-two/outer tally; unused entries stay zero.
    pub tally2: AcceptanceTally,
    /// Outer steps that skipped their accurate evaluation because the inner
    /// chain returned to its start.
    pub shortcuts: u64,
    pub tuner: Option<TunerSnapshot>,
    pub chain2: Option<ChainTwo>,
    pub adaptive: Option<AdaptiveSnapshot>,
}

fn parse_count(v: &str, key: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::parse(format!("checkpoint {key}: expected an integer, got {v:?}")))
}

fn parse_word_pos(v: &str, key: &str) -> Result<u128> {
    v.parse()
        .map_err(|_| Error::parse(format!("checkpoint {key}: expected an integer, got {v:?}")))
}

fn parse_real(v: &str, key: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::parse(format!("checkpoint {key}: expected a number, got {v:?}")))
}

fn parse_reals(v: &str, key: &str) -> Result<Vec<f64>> {
    v.split_whitespace().map(|t| parse_real(t, key)).collect()
}

fn parse_cost(v: &str, key: &str) -> Result<EvalCost> {
    let t: Vec<&str> = v.split_whitespace().collect();
    if t.len() != 3 {
        return Err(Error::parse(format!(
            "checkpoint {key}: expected 3 counters, got {}",
            t.len()
        )));
    }
    Ok(EvalCost {
        fine: parse_count(t[0], key)?,
        approx: parse_count(t[1], key)?,
        coarse: parse_count(t[2], key)?,
    })
}

fn parse_tally(v: &str, key: &str) -> Result<AcceptanceTally> {
    let t: Vec<&str> = v.split_whitespace().collect();
    if t.len() != 2 {
        return Err(Error::parse(format!(
            "checkpoint {key}: expected 2 counters, got {}",
            t.len()
        )));
    }
    let tally = AcceptanceTally {
        proposals: parse_count(t[0], key)?,
        accepts: parse_count(t[1], key)?,
    };
    if tally.accepts > tally.proposals {
        return Err(Error::parse(format!(
            "checkpoint {key}: more accepts than proposals"
        )));
    }
    Ok(tally)
}

const CHECKPOINT_KEYS: &[&str] = &[
    "kernel",
    "steps",
    "next_record",
    "rng_word_pos",
    "scale",
    "ll_a",
    "ll_s",
    "shortcuts",
    "cost",
    "tally1",
    "tally2",
    "tuner",
    "state",
    "scale2",
    "ll2",
    "cost2",
    "tally3",
    "tuner2",
    "state2",
    "eta_fine",
    "eta_coarse",
];

impl Checkpoint {
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "kernel = {}", self.kernel.name());
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "next_record = {}", self.next_record);
        let _ = writeln!(s, "rng_word_pos = {}", self.rng_word_pos);
        let _ = writeln!(s, "scale = {:.16e}", self.scale);
        let _ = writeln!(s, "ll_a = {:.16e}", self.ll_a);
        if let Some(ll) = self.ll_s {
            let _ = writeln!(s, "ll_s = {ll:.16e}");
        }
        let _ = writeln!(s, "shortcuts = {}", self.shortcuts);
        let _ = writeln!(s, "cost = {} {} {}", self.cost.fine, self.cost.approx, self.cost.coarse);
        let _ = writeln!(s, "tally1 = {} {}", self.tally1.proposals, self.tally1.accepts);
        let _ = writeln!(s, "tally2 = {} {}", self.tally2.proposals, self.tally2.accepts);
        if let Some(t) = &self.tuner {
            let _ = writeln!(s, "tuner = {}", t.render());
        }
        let _ = writeln!(s, "state = {}", join_precise(&self.state));
        if let Some(two) = &self.chain2 {
            let _ = writeln!(s, "scale2 = {:.16e}", two.scale);
            let _ = writeln!(s, "ll2 = {:.16e}", two.ll);
            let _ = writeln!(s, "cost2 = {} {} {}", two.cost.fine, two.cost.approx, two.cost.coarse);
            let _ = writeln!(s, "tally3 = {} {}", two.tally.proposals, two.tally.accepts);
            if let Some(t) = &two.tuner {
                let _ = writeln!(s, "tuner2 = {}", t.render());
            }
            let _ = writeln!(s, "state2 = {}", join_precise(&two.state));
        }
        if let Some(a) = &self.adaptive {
            let _ = writeln!(s, "eta_fine = {}", join_precise(&a.eta_fine));
            let _ = writeln!(s, "eta_coarse = {}", join_precise(&a.eta_coarse));
            let _ = writeln!(s, "bias:");
            s.push_str(&a.bias.serialize());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Checkpoint> {
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or_default();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::parse(format!(
                "not a checkpoint file (first line {magic:?})"
            )));
        }
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        let mut bias_text = String::new();
        let mut in_bias = false;
        for line in lines {
            if in_bias {
                bias_text.push_str(line);
                bias_text.push('\n');
                continue;
            }
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "bias:" {
                in_bias = true;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::parse(format!("checkpoint: expected key = value, got {line:?}"))
                })?;
            if fields.insert(k, v).is_some() {
                return Err(Error::parse(format!("checkpoint: duplicate key {k}")));
            }
        }
        if let Some(k) = fields.keys().find(|k| !CHECKPOINT_KEYS.contains(k)) {
            return Err(Error::parse(format!("checkpoint: unknown key {k}")));
        }
        let take = |key: &'static str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| Error::parse(format!("checkpoint: missing key {key}")))
        };
        let optional = |key: &'static str| fields.get(key).copied();

        let chain2 = if fields.contains_key("state2") {
            Some(ChainTwo {
                scale: parse_real(take("scale2")?, "scale2")?,
                state: parse_reals(take("state2")?, "state2")?,
                ll: parse_real(take("ll2")?, "ll2")?,
                cost: parse_cost(take("cost2")?, "cost2")?,
                tally: parse_tally(take("tally3")?, "tally3")?,
                tuner: match optional("tuner2") {
                    Some(v) => Some(TunerSnapshot::parse(v, "tuner2")?),
                    None => None,
                },
            })
        } else {
            None
        };
        let adaptive = if fields.contains_key("eta_fine") {
            Some(AdaptiveSnapshot {
                eta_fine: parse_reals(take("eta_fine")?, "eta_fine")?,
                eta_coarse: parse_reals(take("eta_coarse")?, "eta_coarse")?,
                bias: BiasState::parse(&bias_text)
                    .map_err(|e| Error::parse(format!("checkpoint bias section: {e}")))?,
            })
        } else {
            None
        };
        Ok(Checkpoint {
            kernel: KernelKind::from_name(take("kernel")?)?,
            steps: parse_count(take("steps")?, "steps")?,
            next_record: parse_count(take("next_record")?, "next_record")?,
            rng_word_pos: parse_word_pos(take("rng_word_pos")?, "rng_word_pos")?,
            scale: parse_real(take("scale")?, "scale")?,
            state: parse_reals(take("state")?, "state")?,
            ll_a: parse_real(take("ll_a")?, "ll_a")?,
            ll_s: match optional("ll_s") {
                Some(v) => Some(parse_real(v, "ll_s")?),
                None => None,
            },
            cost: parse_cost(take("cost")?, "cost")?,
            tally1: parse_tally(take("tally1")?, "tally1")?,
            tally2: parse_tally(take("tally2")?, "tally2")?,
            shortcuts: parse_count(take("shortcuts")?, "shortcuts")?,
            tuner: match optional("tuner") {
                Some(v) => Some(TunerSnapshot::parse(v, "tuner")?),
                None => None,
            },
            chain2,
            adaptive,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, self.render().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
    }

    fn ll_s_required(&self) -> Result<f64> {
        self.ll_s.ok_or_else(|| {
            Error::parse("checkpoint is missing ll_s, required for a two-fidelity kernel")
        })
    }
}

/// Uniform driving interface over the six kernels: one transition, the
/// evaluation receipts, the acceptance rates the trace records, and enough
/// access to tuning and caches for checkpointing.
trait Drive {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()>;
    fn evals(&self) -> EvalCost;
    /// (primary, secondary) acceptance rates for the trace columns:
    /// site/stage-one/inner rate first, swap/stage-two/outer rate second
    /// (NaN when the kernel has no second decision stream).
    fn rates(&self) -> (f64, f64);
    fn coords(&self) -> &[f64];
    fn install_tuner(&mut self, tuner: ScaleTuner);
    fn freeze(&mut self);
    /// Kernel-side checkpoint fields; the caller fills in the bookkeeping
    /// (steps, next_record, rng_word_pos).
    fn snapshot(&self) -> Checkpoint;
}

fn base_checkpoint(kernel: KernelKind) -> Checkpoint {
    Checkpoint {
        kernel,
        steps: 0,
        next_record: 0,
        rng_word_pos: 0,
        scale: 0.0,
        state: Vec::new(),
        ll_a: f64::NAN,
        ll_s: None,
        cost: EvalCost::default(),
        tally1: AcceptanceTally::default(),
        tally2: AcceptanceTally::default(),
        shortcuts: 0,
        tuner: None,
        chain2: None,
        adaptive: None,
    }
}

impl<T: Target> Drive for SingleSiteKernel<'_, T> {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.sweep(rng)
    }
    fn evals(&self) -> EvalCost {
        self.cost()
    }
    fn rates(&self) -> (f64, f64) {
        (self.tally().rate(), f64::NAN)
    }
    fn coords(&self) -> &[f64] {
        self.state()
    }
    fn install_tuner(&mut self, tuner: ScaleTuner) {
        self.enable_tuning(tuner);
    }
    fn freeze(&mut self) {
        self.freeze_tuning();
    }
    fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            scale: self.sigma_z(),
            state: self.state().to_vec(),
            ll_a: self.log_like(),
            cost: self.cost(),
            tally1: self.tally(),
            tuner: self.tuner().map(TunerSnapshot::of),
            ..base_checkpoint(KernelKind::SingleSite)
        }
    }
}

impl<T: Target> Drive for RwmKernel<'_, T> {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.step(rng)
    }
    fn evals(&self) -> EvalCost {
        self.cost()
    }
    fn rates(&self) -> (f64, f64) {
        (self.tally().rate(), f64::NAN)
    }
    fn coords(&self) -> &[f64] {
        self.state()
    }
    fn install_tuner(&mut self, tuner: ScaleTuner) {
        self.enable_tuning(tuner);
    }
    fn freeze(&mut self) {
        self.freeze_tuning();
    }
    fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            scale: self.alpha(),
            state: self.state().to_vec(),
            ll_a: self.log_like(),
            cost: self.cost(),
            tally1: self.tally(),
            tuner: self.tuner().map(TunerSnapshot::of),
            ..base_checkpoint(KernelKind::Rwm)
        }
    }
}

impl<TA: Target, TS: Target> Drive for CoupledKernel<'_, TA, TS> {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.step(rng)
    }
    fn evals(&self) -> EvalCost {
        self.cost()
    }
    fn rates(&self) -> (f64, f64) {
        (self.accurate_chain().tally().rate(), self.swap_tally().rate())
    }
    fn coords(&self) -> &[f64] {
        self.state()
    }
    fn install_tuner(&mut self, tuner: ScaleTuner) {
        self.accurate_chain_mut().enable_tuning(tuner.clone());
        self.surrogate_chain_mut().enable_tuning(tuner);
    }
    fn freeze(&mut self) {
        self.accurate_chain_mut().freeze_tuning();
        self.surrogate_chain_mut().freeze_tuning();
    }
    fn snapshot(&self) -> Checkpoint {
        let a = self.accurate_chain();
        let s = self.surrogate_chain();
        Checkpoint {
            scale: a.sigma_z(),
            state: a.state().to_vec(),
            ll_a: a.log_like(),
            cost: a.cost(),
            tally1: a.tally(),
            tally2: self.swap_tally(),
            tuner: a.tuner().map(TunerSnapshot::of),
            chain2: Some(ChainTwo {
                scale: s.sigma_z(),
                state: s.state().to_vec(),
                ll: s.log_like(),
                cost: s.cost(),
                tally: s.tally(),
                tuner: s.tuner().map(TunerSnapshot::of),
            }),
            ..base_checkpoint(KernelKind::Coupled)
        }
    }
}

impl<TA: Target, TS: Target> Drive for DaKernel<'_, TA, TS> {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.sweep(rng)
    }
    fn evals(&self) -> EvalCost {
        self.cost()
    }
    fn rates(&self) -> (f64, f64) {
        (self.stage_one_tally().rate(), self.stage_two_tally().rate())
    }
    fn coords(&self) -> &[f64] {
        self.state()
    }
    fn install_tuner(&mut self, tuner: ScaleTuner) {
        self.enable_tuning(tuner);
    }
    fn freeze(&mut self) {
        self.freeze_tuning();
    }
    fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            scale: self.sigma_z(),
            state: self.state().to_vec(),
            ll_a: self.ll_accurate(),
            ll_s: Some(self.ll_surrogate()),
            cost: self.cost(),
            tally1: self.stage_one_tally(),
            tally2: self.stage_two_tally(),
            tuner: self.tuner().map(TunerSnapshot::of),
            ..base_checkpoint(KernelKind::Da)
        }
    }
}

impl<TA: Target, TS: Target> Drive for MsdaKernel<'_, TA, TS> {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.step(rng)
    }
    fn evals(&self) -> EvalCost {
        self.cost()
    }
    fn rates(&self) -> (f64, f64) {
        (self.inner_tally().rate(), self.outer_tally().rate())
    }
    fn coords(&self) -> &[f64] {
        self.state()
    }
    fn install_tuner(&mut self, tuner: ScaleTuner) {
        self.enable_tuning(tuner);
    }
    fn freeze(&mut self) {
        self.freeze_tuning();
    }
    fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            scale: self.sigma_z(),
            state: self.state().to_vec(),
            ll_a: self.ll_accurate(),
            ll_s: Some(self.ll_surrogate()),
            cost: self.cost(),
            tally1: self.inner_tally(),
            tally2: self.outer_tally(),
            shortcuts: self.shortcut_steps(),
            tuner: self.tuner().map(TunerSnapshot::of),
            ..base_checkpoint(KernelKind::Msda)
        }
    }
}

impl<P: crate::posterior::TwoLevel> Drive for AmsdaKernel<'_, P> {
    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.step(rng)
    }
    fn evals(&self) -> EvalCost {
        self.cost()
    }
    fn rates(&self) -> (f64, f64) {
        (self.inner_tally().rate(), self.outer_tally().rate())
    }
    fn coords(&self) -> &[f64] {
        self.state()
    }
    fn install_tuner(&mut self, tuner: ScaleTuner) {
        self.enable_tuning(tuner);
    }
    fn freeze(&mut self) {
        self.freeze_tuning();
    }
    fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            scale: self.sigma_z(),
            state: self.state().to_vec(),
            cost: self.cost(),
            tally1: self.inner_tally(),
            tally2: self.outer_tally(),
            shortcuts: self.shortcut_steps(),
            tuner: self.tuner().map(TunerSnapshot::of),
            adaptive: Some(AdaptiveSnapshot {
                eta_fine: self.eta_fine().to_vec(),
                eta_coarse: self.eta_coarse().to_vec(),
                bias: self.bias().clone(),
            }),
            ..base_checkpoint(KernelKind::Amsda)
        }
    }
}

fn scan_order(cfg: &RunConfig) -> ScanOrder {
    if cfg.kernel.random_scan {
        ScanOrder::Random
    } else {
        ScanOrder::Deterministic
    }
}

fn build_prior(cfg: &RunConfig) -> Result<Prior> {
    let p = &cfg.prior;
    Ok(match p.kind {
        PriorKind::Tricube => Prior::Tricube(TricubePrior::new(p.beta, p.scale)?),
        PriorKind::Gmrf => Prior::Gmrf(GmrfPrior::new(p.beta)?),
        PriorKind::Convolution => {
            Prior::Convolution(ConvolutionPrior::new(p.sigma_u, p.kernel_sd)?)
        }
    })
}

fn build_proposal_spec(cfg: &RunConfig) -> Result<ProposalSpec> {
    let k = &cfg.kernel;
    let spec = match k.proposal {
        ProposalKind::Identity => ProposalSpec::identity(),
        ProposalKind::Diagonal => {
            let (d, cov) = diagnostics::load_covariance(Path::new(&k.proposal_file))?;
            let diag = (0..d).map(|i| cov[i * d + i]).collect();
            ProposalSpec::diagonal(diag)
        }
        ProposalKind::Full => {
            let (_, cov) = diagnostics::load_covariance(Path::new(&k.proposal_file))?;
            ProposalSpec::full(cov)
        }
    };
    Ok(spec.with_jitter(k.jitter))
}

fn surrogate_fidelity(cfg: &RunConfig) -> Fidelity {
    match cfg.kernel.surrogate {
        SurrogateKind::Coarse => Fidelity::Coarse {
            side: cfg.problem.coarse_side,
            rule: CoarsenRule::Arithmetic,
        },
        SurrogateKind::Approx => Fidelity::Approx {
            iters: if cfg.kernel.approx_iters == 0 {
                solver::default_approx_iters(cfg.problem.side)
            } else {
                cfg.kernel.approx_iters
            },
        },
    }
}

fn resolved_tracked(cfg: &RunConfig, dim: usize) -> Result<Vec<usize>> {
    if cfg.run.track.is_empty() {
        return Ok((0..dim).collect());
    }
    for &i in &cfg.run.track {
        if i >= dim {
            return Err(Error::config(format!(
                "run.track index {i} is out of range for a {dim}-coordinate state"
            )));
        }
    }
    Ok(cfg.run.track.clone())
}

fn take_coords(state: &[f64], tracked: &[usize]) -> Vec<f64> {
    tracked.iter().map(|&i| state[i]).collect()
}

fn receipt_text(ck: &Checkpoint, records: usize) -> String {
    use std::fmt::Write as _;
    let mut combined = ck.cost;
    if let Some(two) = &ck.chain2 {
        combined += two.cost;
    }
    let mut s = String::new();
    let _ = writeln!(s, "kernel = {}", ck.kernel.name());
    let _ = writeln!(s, "steps = {}", ck.steps);
    let _ = writeln!(s, "records = {records}");
    let _ = writeln!(s, "fine_evals = {}", combined.fine);
    let _ = writeln!(s, "approx_evals = {}", combined.approx);
    let _ = writeln!(s, "coarse_evals = {}", combined.coarse);
    let _ = writeln!(s, "total_evals = {}", combined.total());
    let _ = writeln!(s, "proposals_stage1 = {}", ck.tally1.proposals);
    let _ = writeln!(s, "accepts_stage1 = {}", ck.tally1.accepts);
    let _ = writeln!(s, "acceptance_rate_stage1 = {:.6}", ck.tally1.rate());
    let _ = writeln!(s, "proposals_stage2 = {}", ck.tally2.proposals);
    let _ = writeln!(s, "accepts_stage2 = {}", ck.tally2.accepts);
    let _ = writeln!(s, "acceptance_rate_stage2 = {:.6}", ck.tally2.rate());
    let _ = writeln!(s, "shortcut_steps = {}", ck.shortcuts);
    let _ = writeln!(s, "final_scale = {:.16e}", ck.scale);
    if let Some(two) = &ck.chain2 {
        let _ = writeln!(s, "surrogate_proposals = {}", two.tally.proposals);
        let _ = writeln!(s, "surrogate_accepts = {}", two.tally.accepts);
        let _ = writeln!(s, "surrogate_scale = {:.16e}", two.scale);
    }
    s
}

fn persist<K: Drive>(
    kernel: &K,
    trace: &Trace,
    steps: u64,
    next_record: u64,
    rng: &ChaCha8Rng,
    paths: &OutPaths,
) -> Result<()> {
    let mut ck = kernel.snapshot();
    ck.steps = steps;
    ck.next_record = next_record;
    ck.rng_word_pos = rng.get_word_pos();
    trace.save(&paths.trace)?;
    ck.save(&paths.checkpoint)?;
    crate::write_atomic(&paths.receipt, receipt_text(&ck, trace.len()).as_bytes())
}

/// Advances `kernel` until `budget · m` cumulative fine evaluations, cutting
/// one record per `record_every · m` crossing, then persists the artifacts.
fn launch<K: Drive>(
    mut kernel: K,
    restored: Option<(Checkpoint, Trace)>,
    cfg: &RunConfig,
    paths: &OutPaths,
    out_dir: PathBuf,
) -> Result<RunArtifacts> {
    let dim = kernel.coords().len() as u64;
    let tracked = resolved_tracked(cfg, kernel.coords().len())?;
    let budget = cfg.run.budget.saturating_mul(dim);
    let every = cfg.run.record_every.saturating_mul(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);

    let (mut trace, mut steps, mut next_record) = match restored {
        Some((ck, trace)) => {
            if trace.tracked() != tracked.as_slice() {
                return Err(Error::config(
                    "the saved trace tracks different coordinates than the config requests",
                ));
            }
            rng.set_word_pos(ck.rng_word_pos);
            (trace, ck.steps, ck.next_record)
        }
        None => {
            if cfg.tuning.enabled {
                kernel.install_tuner(ScaleTuner::new(
                    cfg.tuning.target,
                    cfg.tuning.window,
                    cfg.tuning.gain,
                )?);
            }
            let mut trace = Trace::new(tracked.clone())?;
            let cost = kernel.evals();
            let (r1, r2) = kernel.rates();
            trace.push(TraceRecord {
                index: 0,
                cost,
                stage_one_rate: r1,
                stage_two_rate: r2,
                values: take_coords(kernel.coords(), &tracked),
            })?;
            let next = every * (cost.fine / every + 1);
            (trace, 0, next)
        }
    };

    let mut stalled: u64 = 0;
    while kernel.evals().fine < budget {
        let fine_before = kernel.evals().fine;
        kernel.advance(&mut rng)?;
        steps += 1;
        if cfg.tuning.enabled && steps >= cfg.tuning.burn_in {
            kernel.freeze();
        }
        let cost = kernel.evals();
        if cost.fine == fine_before {
            stalled += 1;
            if stalled > STALL_LIMIT {
                return Err(Error::numerical(format!(
                    "no accurate evaluation in {STALL_LIMIT} consecutive steps; \
                     the chain looks stuck (proposal scale far too large?)"
                )));
            }
        } else {
            stalled = 0;
        }
        if cost.fine >= next_record {
            let (r1, r2) = kernel.rates();
            trace.push(TraceRecord {
                index: trace.len() as u64,
                cost,
                stage_one_rate: r1,
                stage_two_rate: r2,
                values: take_coords(kernel.coords(), &tracked),
            })?;
            next_record = every * (cost.fine / every + 1);
            if cfg.run.checkpoint_every > 0
                && (trace.len() as u64).is_multiple_of(cfg.run.checkpoint_every)
            {
                persist(&kernel, &trace, steps, next_record, &rng, paths)?;
            }
        }
    }
    persist(&kernel, &trace, steps, next_record, &rng, paths)?;
    Ok(RunArtifacts { out_dir, cost: kernel.evals(), steps, trace })
}

fn run_toy(
    cfg: &RunConfig,
    restored: Option<(Checkpoint, Trace)>,
    paths: &OutPaths,
    out_dir: PathBuf,
) -> Result<RunArtifacts> {
    let tables = ToyTables::build(&ToyConfig {
        levels: cfg.problem.toy_levels,
        truth_state: cfg.problem.toy_truth_state,
        sigma: cfg.problem.toy_sigma,
    })?;
    let fine = tables.target(ToyFidelity::Fine);
    let surr = tables.target(ToyFidelity::Surrogate);
    let init = tables.representative(0);
    let order = scan_order(cfg);
    let kc = &cfg.kernel;
    match kc.kind {
        KernelKind::SingleSite => {
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = SingleSiteKernel::restore(
                        &fine,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.scale,
                        order,
                        ck.cost,
                        ck.tally1,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => SingleSiteKernel::new(&fine, init, kc.sigma_z, order)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Rwm => {
            let spec = build_proposal_spec(cfg)?;
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = RwmKernel::restore(
                        &fine,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.scale,
                        &spec,
                        ck.cost,
                        ck.tally1,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => RwmKernel::new(&fine, init, kc.alpha, &spec)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Coupled => {
            let kernel = match &restored {
                Some((ck, _)) => restore_coupled(&fine, &surr, ck, order, kc.coupling_sweeps)?,
                None => {
                    let a = SingleSiteKernel::new(&fine, init.clone(), kc.sigma_z, order)?;
                    let s = SingleSiteKernel::new(&surr, init, kc.sigma_z, order)?;
                    CoupledKernel::new(a, s, kc.coupling_sweeps)?
                }
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Da => {
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = DaKernel::restore(
                        &fine,
                        &surr,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.ll_s_required()?,
                        ck.scale,
                        order,
                        ck.cost,
                        ck.tally1,
                        ck.tally2,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => DaKernel::new(&fine, &surr, init, kc.sigma_z, order)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Msda => {
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = MsdaKernel::restore(
                        &fine,
                        &surr,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.ll_s_required()?,
                        kc.n_step,
                        ck.scale,
                        ck.cost,
                        ck.tally1,
                        ck.tally2,
                        ck.shortcuts,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => MsdaKernel::new(&fine, &surr, init, kc.n_step, kc.sigma_z)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Amsda => {
            let kernel = match &restored {
                Some((ck, _)) => restore_amsda(&fine, ck, kc.n_step)?,
                None => AmsdaKernel::new(&fine, init, kc.n_step, kc.sigma_z)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
    }
}

fn restore_coupled<'a, TA: Target, TS: Target>(
    accurate: &'a TA,
    surrogate: &'a TS,
    ck: &Checkpoint,
    order: ScanOrder,
    coupling_sweeps: usize,
) -> Result<CoupledKernel<'a, TA, TS>> {
    let two = ck.chain2.as_ref().ok_or_else(|| {
        Error::parse("checkpoint is missing the surrogate-chain section of a coupled run")
    })?;
    let mut a = SingleSiteKernel::restore(
        accurate,
        ck.state.clone(),
        ck.ll_a,
        ck.scale,
        order,
        ck.cost,
        ck.tally1,
    )?;
    if let Some(t) = &ck.tuner {
        a.enable_tuning(t.build()?);
    }
    let mut s = SingleSiteKernel::restore(
        surrogate,
        two.state.clone(),
        two.ll,
        two.scale,
        order,
        two.cost,
        two.tally,
    )?;
    if let Some(t) = &two.tuner {
        s.enable_tuning(t.build()?);
    }
    CoupledKernel::restore(a, s, coupling_sweeps, ck.tally2)
}

fn restore_amsda<'a, P: crate::posterior::TwoLevel>(
    problem: &'a P,
    ck: &Checkpoint,
    n_step: usize,
) -> Result<AmsdaKernel<'a, P>> {
    let a = ck.adaptive.as_ref().ok_or_else(|| {
        Error::parse("checkpoint is missing the adaptive section (predictions and error model)")
    })?;
    let mut k = AmsdaKernel::restore(
        problem,
        ck.state.clone(),
        a.eta_fine.clone(),
        a.eta_coarse.clone(),
        a.bias.clone(),
        n_step,
        ck.scale,
        ck.cost,
        ck.tally1,
        ck.tally2,
        ck.shortcuts,
    )?;
    if let Some(t) = &ck.tuner {
        k.enable_tuning(t.build()?);
    }
    Ok(k)
}

fn run_eit(
    cfg: &RunConfig,
    restored: Option<(Checkpoint, Trace)>,
    paths: &OutPaths,
    out_dir: PathBuf,
) -> Result<RunArtifacts> {
    let grid = GridSpec::new(cfg.problem.side)?;
    if cfg.problem.data.is_empty() {
        return Err(Error::config(
            "problem.data is required for a measurement-driven run; \
             generate a measurement file first (gen-data) and point problem.data at it",
        ));
    }
    let data_path = Path::new(&cfg.problem.data);
    let (y, file_sigma) = data::load_data(data_path)?;
    let sigma = if cfg.problem.sigma > 0.0 { cfg.problem.sigma } else { file_sigma };
    let noise = NoiseModel::new(sigma).map_err(|_| {
        Error::config(format!(
            "the data file stores sigma = {file_sigma}; set problem.sigma to a \
             positive noise level to sample against exact measurements"
        ))
    })?;
    let prior = build_prior(cfg)?;
    let param = if cfg.prior.latent {
        Parametrization::Latent {
            shift: cfg.prior.latent_shift,
            scale: cfg.prior.latent_scale,
        }
    } else {
        Parametrization::Pixel
    };
    let init = match (&param, &prior) {
        (Parametrization::Latent { .. }, Prior::Convolution(p)) => vec![0.0; p.knots().len()],
        _ => vec![INITIAL_PIXEL; grid.cells()],
    };
    let order = scan_order(cfg);
    let kc = &cfg.kernel;
    let fine_spec = PosteriorSpec::new(y.clone(), noise, prior.clone(), Fidelity::Fine)?;

    match kc.kind {
        KernelKind::SingleSite => {
            let target = EitTarget::new(fine_spec, grid, param)?;
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = SingleSiteKernel::restore(
                        &target,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.scale,
                        order,
                        ck.cost,
                        ck.tally1,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => SingleSiteKernel::new(&target, init, kc.sigma_z, order)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Rwm => {
            let target = EitTarget::new(fine_spec, grid, param)?;
            let spec = build_proposal_spec(cfg)?;
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = RwmKernel::restore(
                        &target,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.scale,
                        &spec,
                        ck.cost,
                        ck.tally1,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => RwmKernel::new(&target, init, kc.alpha, &spec)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Coupled => {
            let accurate = EitTarget::new(fine_spec, grid, param.clone())?;
            let surrogate = EitTarget::new(
                PosteriorSpec::new(y.clone(), noise, prior.clone(), surrogate_fidelity(cfg))?,
                grid,
                param,
            )?;
            let kernel = match &restored {
                Some((ck, _)) => {
                    restore_coupled(&accurate, &surrogate, ck, order, kc.coupling_sweeps)?
                }
                None => {
                    let a = SingleSiteKernel::new(&accurate, init.clone(), kc.sigma_z, order)?;
                    let s = SingleSiteKernel::new(&surrogate, init, kc.sigma_z, order)?;
                    CoupledKernel::new(a, s, kc.coupling_sweeps)?
                }
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Da => {
            let accurate = EitTarget::new(fine_spec, grid, param.clone())?;
            let surrogate = EitTarget::new(
                PosteriorSpec::new(y.clone(), noise, prior.clone(), surrogate_fidelity(cfg))?,
                grid,
                param,
            )?;
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = DaKernel::restore(
                        &accurate,
                        &surrogate,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.ll_s_required()?,
                        ck.scale,
                        order,
                        ck.cost,
                        ck.tally1,
                        ck.tally2,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => DaKernel::new(&accurate, &surrogate, init, kc.sigma_z, order)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Msda => {
            let accurate = EitTarget::new(fine_spec, grid, param.clone())?;
            let surrogate = EitTarget::new(
                PosteriorSpec::new(y.clone(), noise, prior.clone(), surrogate_fidelity(cfg))?,
                grid,
                param,
            )?;
            let kernel = match &restored {
                Some((ck, _)) => {
                    let mut k = MsdaKernel::restore(
                        &accurate,
                        &surrogate,
                        ck.state.clone(),
                        ck.ll_a,
                        ck.ll_s_required()?,
                        kc.n_step,
                        ck.scale,
                        ck.cost,
                        ck.tally1,
                        ck.tally2,
                        ck.shortcuts,
                    )?;
                    if let Some(t) = &ck.tuner {
                        k.enable_tuning(t.build()?);
                    }
                    k
                }
                None => MsdaKernel::new(&accurate, &surrogate, init, kc.n_step, kc.sigma_z)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
        KernelKind::Amsda => {
            let target = EitTarget::new(fine_spec, grid, param)?
                .with_coarse_level(cfg.problem.coarse_side, CoarsenRule::Arithmetic)?;
            let kernel = match &restored {
                Some((ck, _)) => restore_amsda(&target, ck, kc.n_step)?,
                None => AmsdaKernel::new(&target, init, kc.n_step, kc.sigma_z)?,
            };
            launch(kernel, restored, cfg, paths, out_dir)
        }
    }
}

/// Runs the configured experiment. With `resume = true` the output
/// directory must hold a checkpoint and trace from an earlier run of the
/// same kernel; the chain then continues exactly where it stopped (same
/// seed, restored stream position) until the — possibly enlarged — budget
/// is spent. Resuming an already-finished run rewrites its artifacts
/// unchanged.
pub fn execute(cfg: &RunConfig, resume: bool) -> Result<RunArtifacts> {
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.run.out);
    std::fs::create_dir_all(&out_dir)?;
    let paths = OutPaths::new(&out_dir);
    crate::write_atomic(&paths.config, cfg.render().as_bytes())?;
    let restored = if resume {
        let ck = Checkpoint::load(&paths.checkpoint)?;
        if ck.kernel != cfg.kernel.kind {
            return Err(Error::config(format!(
                "checkpoint in {} was written by kernel {}, but the config requests {}",
                out_dir.display(),
                ck.kernel.name(),
                cfg.kernel.kind.name()
            )));
        }
        let trace = Trace::load(&paths.trace)?;
        Some((ck, trace))
    } else {
        None
    };
    match cfg.problem.kind {
        ProblemKind::Toy => run_toy(cfg, restored, &paths, out_dir),
        ProblemKind::Eit => run_eit(cfg, restored, &paths, out_dir),
    }
}
