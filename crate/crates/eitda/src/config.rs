//! Experiment configuration: a line-oriented `key = value` format with
//! `[section]` headers, `#` comments, a default for every key, and a
//! canonical rendering that the run command echoes next to its outputs.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Which posterior a run samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Eit,
    Toy,
}

/// Which Metropolis kernel drives the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Single-site Metropolis sweeps.
    SingleSite,
    /// All-coordinate random-walk Metropolis.
    Rwm,
    /// Metropolis-coupled accurate/surrogate chain pair.
    Coupled,
    /// Per-proposal delayed acceptance.
    Da,
    /// Multi-step delayed acceptance.
    Msda,
    /// Multi-step delayed acceptance with adaptive bias correction.
    Amsda,
}

impl KernelKind {
    /// Canonical name used in config files, checkpoints, and receipts.
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::SingleSite => "ssm",
            KernelKind::Rwm => "rwm",
            KernelKind::Coupled => "coupled",
            KernelKind::Da => "da",
            KernelKind::Msda => "msda",
            KernelKind::Amsda => "amsda",
        }
    }

    pub fn from_name(name: &str) -> Result<KernelKind> {
        Ok(match name {
            "ssm" => KernelKind::SingleSite,
            "rwm" => KernelKind::Rwm,
            "coupled" => KernelKind::Coupled,
            "da" => KernelKind::Da,
            "msda" => KernelKind::Msda,
            "amsda" => KernelKind::Amsda,
            _ => return Err(Error::config(format!("unknown kernel name {name:?}"))),
        })
    }
}

/// Pixel-space MRF priors or the latent convolution prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Tricube,
    Gmrf,
    Convolution,
}

/// Surrogate forward model for the two-level kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    /// Coarsened-grid solve.
    Coarse,
    /// Truncated iterative solve on the fine grid.
    Approx,
}

/// Random-walk proposal shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Identity,
    Diagonal,
    Full,
}

/// `[problem]`: which posterior, at what resolution, against which data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Fine grid side (pixels per edge).
    pub side: usize,
    /// Coarse grid side for two-level kernels.
    pub coarse_side: usize,
    /// Measurement file (see the data module); required for EIT runs.
    pub data: String,
    /// Noise sd override; 0 takes the value stored in the data file.
    pub sigma: f64,
    /// Toy posterior: quantization levels per pixel.
    pub toy_levels: usize,
    /// Toy posterior: which state index generates the data.
    pub toy_truth_state: usize,
    /// Toy posterior: noise sd.
    pub toy_sigma: f64,
}

/// `[prior]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Inverse-temperature weight on the pairwise MRF terms.
    pub beta: f64,
    /// Tricube kernel support width.
    pub scale: f64,
    /// Convolution prior: latent weight sd.
    pub sigma_u: f64,
    /// Convolution prior: smoothing kernel sd.
    pub kernel_sd: f64,
    /// Sample in latent knot coordinates instead of pixels (convolution
    /// prior only).
    pub latent: bool,
    /// Affine map from kernel expansion to conductivity when sampling
    /// latent coordinates: field = shift + scale·expansion.
    pub latent_shift: f64,
    pub latent_scale: f64,
}

/// `[kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Site proposal sd (single-site, coupled, da, msda, amsda).
    pub sigma_z: f64,
    /// Deterministic or random site scan.
    pub random_scan: bool,
    /// Inner surrogate steps per outer step (msda, amsda).
    pub n_step: usize,
    /// Surrogate sweeps per accurate sweep (coupled).
    pub coupling_sweeps: usize,
    /// Surrogate forward model (coupled, da, msda).
    pub surrogate: SurrogateKind,
    /// Iterations for the `approx` surrogate; 0 picks the solver default
    /// for the grid.
    pub approx_iters: usize,
    /// Covariance premultiplier (rwm).
    pub alpha: f64,
    /// Proposal shape (rwm).
    pub proposal: ProposalKind,
    /// Dense covariance file estimated from an earlier trace (rwm
    /// diagonal/full shapes).
    pub proposal_file: String,
    /// Diagonal ridge added to the proposal covariance (rwm).
    pub jitter: f64,
}

/// `[tuning]`: proposal-scale adaptation during burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    pub enabled: bool,
    /// Target acceptance rate (stage one for two-stage kernels).
    pub target: f64,
    /// Proposals per adaptation window.
    pub window: u64,
    /// Base adaptation gain.
    pub gain: f64,
    /// Kernel steps before adaptation freezes (also counted toward the
    /// budget); 0 only when tuning is disabled.
    pub burn_in: u64,
}

/// `[run]`: budgets, seed, outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    /// Fine-solve budget in units of the state dimension m: the run stops
    /// once cumulative fine evaluations reach `budget · m`.
    pub budget: u64,
    /// Thinning: one record per `record_every · m` fine evaluations.
    pub record_every: u64,
    pub seed: u64,
    /// Output directory (trace, checkpoint, effective config, receipt).
    pub out: String,
    /// Coordinates to record: empty tracks the full state, otherwise a
    /// comma-separated index list.
    pub track: Vec<usize>,
    /// Write a checkpoint every this many records (0: only at the end).
    pub checkpoint_every: u64,
}

/// A complete, validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub prior: PriorConfig,
    pub kernel: KernelConfig,
    pub tuning: TuningConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemConfig {
                kind: ProblemKind::Eit,
                side: 12,
                coarse_side: 4,
                data: String::new(),
                sigma: 0.0,
                toy_levels: 2,
                toy_truth_state: 6,
                toy_sigma: 0.05,
            },
            prior: PriorConfig {
                kind: PriorKind::Tricube,
                beta: 0.5,
                scale: 0.3,
                sigma_u: 1.0,
                kernel_sd: 0.11,
                latent: false,
                latent_shift: 3.5,
                latent_scale: 1.0,
            },
            kernel: KernelConfig {
                kind: KernelKind::SingleSite,
                sigma_z: 0.3,
                random_scan: false,
                n_step: 100,
                coupling_sweeps: 1,
                surrogate: SurrogateKind::Coarse,
                approx_iters: 0,
                alpha: 1.0,
                proposal: ProposalKind::Identity,
                proposal_file: String::new(),
                jitter: 0.0,
            },
            tuning: TuningConfig {
                enabled: false,
                target: 0.3,
                window: 100,
                gain: 1.0,
                burn_in: 0,
            },
            run: RunSection {
                budget: 2000,
                record_every: 10,
                seed: 1,
                out: "runs/out".into(),
                track: Vec::new(),
                checkpoint_every: 0,
            },
        }
    }
}

fn parse_usize(v: &str, key: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_u64(v: &str, key: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_f64(v: &str, key: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: expected a number, got {v:?}")))
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn parse_track(v: &str, key: &str) -> Result<Vec<usize>> {
    if v.is_empty() || v == "full" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|t| parse_usize(t.trim(), key))
        .collect::<Result<Vec<usize>>>()
}

impl RunConfig {
    /// Parses a config, starting from the defaults and applying each
    /// `key = value` line; unknown sections or keys are errors, as are
    /// duplicate keys. The result is validated.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header {line:?}")))?;
                if !matches!(name, "problem" | "prior" | "kernel" | "tuning" | "run") {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            if section.is_empty() {
                return Err(at(format!("key {key:?} appears before any [section]")));
            }
            let qualified = format!("{section}.{key}");
            if !seen.insert(qualified.clone()) {
                return Err(at(format!("duplicate key {qualified}")));
            }
            cfg.apply(&qualified, value)
                .map_err(|e| at(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    fn apply(&mut self, qualified: &str, v: &str) -> Result<()> {
        let k = qualified;
        match qualified {
            "problem.kind" => {
                self.problem.kind = match v {
                    "eit" => ProblemKind::Eit,
                    "toy" => ProblemKind::Toy,
                    _ => {
                        return Err(Error::config(format!(
                            "{k}: expected eit or toy, got {v:?}"
                        )))
                    }
                }
            }
            "problem.side" => self.problem.side = parse_usize(v, k)?,
            "problem.coarse_side" => self.problem.coarse_side = parse_usize(v, k)?,
            "problem.data" => self.problem.data = v.to_string(),
            "problem.sigma" => self.problem.sigma = parse_f64(v, k)?,
            "problem.toy_levels" => self.problem.toy_levels = parse_usize(v, k)?,
            "problem.toy_truth_state" => {
                self.problem.toy_truth_state = parse_usize(v, k)?
            }
            "problem.toy_sigma" => self.problem.toy_sigma = parse_f64(v, k)?,
            "prior.kind" => {
                self.prior.kind = match v {
                    "tricube" => PriorKind::Tricube,
                    "gmrf" => PriorKind::Gmrf,
                    "convolution" => PriorKind::Convolution,
                    _ => {
                        return Err(Error::config(format!(
                            "{k}: expected tricube, gmrf, or convolution, got {v:?}"
                        )))
                    }
                }
            }
            "prior.beta" => self.prior.beta = parse_f64(v, k)?,
            "prior.scale" => self.prior.scale = parse_f64(v, k)?,
            "prior.sigma_u" => self.prior.sigma_u = parse_f64(v, k)?,
            "prior.kernel_sd" => self.prior.kernel_sd = parse_f64(v, k)?,
            "prior.latent" => self.prior.latent = parse_bool(v, k)?,
            "prior.latent_shift" => self.prior.latent_shift = parse_f64(v, k)?,
            "prior.latent_scale" => self.prior.latent_scale = parse_f64(v, k)?,
            "kernel.kind" => {
                self.kernel.kind = match v {
                    "ssm" => KernelKind::SingleSite,
                    "rwm" => KernelKind::Rwm,
                    "coupled" => KernelKind::Coupled,
                    "da" => KernelKind::Da,
                    "msda" => KernelKind::Msda,
                    "amsda" => KernelKind::Amsda,
                    _ => {
                        return Err(Error::config(format!(
                            "{k}: expected ssm, rwm, coupled, da, msda, or amsda, \
                             got {v:?}"
                        )))
                    }
                }
            }
            "kernel.sigma_z" => self.kernel.sigma_z = parse_f64(v, k)?,
            "kernel.scan" => {
                self.kernel.random_scan = match v {
                    "deterministic" => false,
                    "random" => true,
                    _ => {
                        return Err(Error::config(format!(
                            "{k}: expected deterministic or random, got {v:?}"
                        )))
                    }
                }
            }
            "kernel.n_step" => self.kernel.n_step = parse_usize(v, k)?,
            "kernel.coupling_sweeps" => {
                self.kernel.coupling_sweeps = parse_usize(v, k)?
            }
            "kernel.surrogate" => {
                self.kernel.surrogate = match v {
                    "coarse" => SurrogateKind::Coarse,
                    "approx" => SurrogateKind::Approx,
                    _ => {
                        return Err(Error::config(format!(
                            "{k}: expected coarse or approx, got {v:?}"
                        )))
                    }
                }
            }
            "kernel.approx_iters" => self.kernel.approx_iters = parse_usize(v, k)?,
            "kernel.alpha" => self.kernel.alpha = parse_f64(v, k)?,
            "kernel.proposal" => {
                self.kernel.proposal = match v {
                    "identity" => ProposalKind::Identity,
                    "diagonal" => ProposalKind::Diagonal,
                    "full" => ProposalKind::Full,
                    _ => {
                        return Err(Error::config(format!(
                            "{k}: expected identity, diagonal, or full, got {v:?}"
                        )))
                    }
                }
            }
            "kernel.proposal_file" => self.kernel.proposal_file = v.to_string(),
            "kernel.jitter" => self.kernel.jitter = parse_f64(v, k)?,
            "tuning.enabled" => self.tuning.enabled = parse_bool(v, k)?,
            "tuning.target" => self.tuning.target = parse_f64(v, k)?,
            "tuning.window" => self.tuning.window = parse_u64(v, k)?,
            "tuning.gain" => self.tuning.gain = parse_f64(v, k)?,
            "tuning.burn_in" => self.tuning.burn_in = parse_u64(v, k)?,
            "run.budget" => self.run.budget = parse_u64(v, k)?,
            "run.record_every" => self.run.record_every = parse_u64(v, k)?,
            "run.seed" => self.run.seed = parse_u64(v, k)?,
            "run.out" => self.run.out = v.to_string(),
            "run.track" => self.run.track = parse_track(v, k)?,
            "run.checkpoint_every" => {
                self.run.checkpoint_every = parse_u64(v, k)?
            }
            _ => {
                return Err(Error::config(format!("unknown key {qualified}")));
            }
        }
        Ok(())
    }

    /// Cross-field consistency; parse runs this automatically.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.side < 2 {
            return Err(Error::config(format!(
                "problem.side must be at least 2, got {}",
                p.side
            )));
        }
        if !(p.sigma.is_finite() && p.sigma >= 0.0) {
            return Err(Error::config(format!(
                "problem.sigma must be finite and non-negative, got {}",
                p.sigma
            )));
        }
        let uses_two_level = matches!(
            self.kernel.kind,
            KernelKind::Coupled | KernelKind::Da | KernelKind::Msda | KernelKind::Amsda
        );
        if p.kind == ProblemKind::Eit
            && uses_two_level
            && (self.kernel.surrogate == SurrogateKind::Coarse
                || self.kernel.kind == KernelKind::Amsda)
            && (p.coarse_side < 2 || !p.side.is_multiple_of(p.coarse_side)) {
                return Err(Error::config(format!(
                    "problem.coarse_side {} must be >= 2 and divide problem.side {}",
                    p.coarse_side, p.side
                )));
            }
        if self.prior.latent && self.prior.kind != PriorKind::Convolution {
            return Err(Error::config(
                "prior.latent = true requires prior.kind = convolution",
            ));
        }
        if self.run.budget == 0 {
            return Err(Error::config("run.budget must be positive"));
        }
        if self.run.record_every == 0 {
            return Err(Error::config("run.record_every must be positive"));
        }
        if self.tuning.enabled && self.tuning.burn_in == 0 {
            return Err(Error::config(
                "tuning.enabled = true requires tuning.burn_in > 0 \
                 (adaptation must freeze eventually)",
            ));
        }
        if matches!(
            self.kernel.proposal,
            ProposalKind::Diagonal | ProposalKind::Full
        ) && self.kernel.kind == KernelKind::Rwm
            && self.kernel.proposal_file.is_empty()
        {
            return Err(Error::config(
                "kernel.proposal diagonal/full requires kernel.proposal_file",
            ));
        }
        Ok(())
    }

    /// Canonical rendering with every key present; `parse(render(c))`
    /// reproduces `c` exactly.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let p = &self.problem;
        let _ = writeln!(s, "[problem]");
        let _ = writeln!(
            s,
            "kind = {}",
            match p.kind {
                ProblemKind::Eit => "eit",
                ProblemKind::Toy => "toy",
            }
        );
        let _ = writeln!(s, "side = {}", p.side);
        let _ = writeln!(s, "coarse_side = {}", p.coarse_side);
        let _ = writeln!(s, "data = {}", p.data);
        let _ = writeln!(s, "sigma = {}", p.sigma);
        let _ = writeln!(s, "toy_levels = {}", p.toy_levels);
        let _ = writeln!(s, "toy_truth_state = {}", p.toy_truth_state);
        let _ = writeln!(s, "toy_sigma = {}", p.toy_sigma);
        let r = &self.prior;
        let _ = writeln!(s, "\n[prior]");
        let _ = writeln!(
            s,
            "kind = {}",
            match r.kind {
                PriorKind::Tricube => "tricube",
                PriorKind::Gmrf => "gmrf",
                PriorKind::Convolution => "convolution",
            }
        );
        let _ = writeln!(s, "beta = {}", r.beta);
        let _ = writeln!(s, "scale = {}", r.scale);
        let _ = writeln!(s, "sigma_u = {}", r.sigma_u);
        let _ = writeln!(s, "kernel_sd = {}", r.kernel_sd);
        let _ = writeln!(s, "latent = {}", r.latent);
        let _ = writeln!(s, "latent_shift = {}", r.latent_shift);
        let _ = writeln!(s, "latent_scale = {}", r.latent_scale);
        let kc = &self.kernel;
        let _ = writeln!(s, "\n[kernel]");
        let _ = writeln!(s, "kind = {}", kc.kind.name());
        let _ = writeln!(s, "sigma_z = {}", kc.sigma_z);
        let _ = writeln!(
            s,
            "scan = {}",
            if kc.random_scan { "random" } else { "deterministic" }
        );
        let _ = writeln!(s, "n_step = {}", kc.n_step);
        let _ = writeln!(s, "coupling_sweeps = {}", kc.coupling_sweeps);
        let _ = writeln!(
            s,
            "surrogate = {}",
            match kc.surrogate {
                SurrogateKind::Coarse => "coarse",
                SurrogateKind::Approx => "approx",
            }
        );
        let _ = writeln!(s, "approx_iters = {}", kc.approx_iters);
        let _ = writeln!(s, "alpha = {}", kc.alpha);
        let _ = writeln!(
            s,
            "proposal = {}",
            match kc.proposal {
                ProposalKind::Identity => "identity",
                ProposalKind::Diagonal => "diagonal",
                ProposalKind::Full => "full",
            }
        );
        let _ = writeln!(s, "proposal_file = {}", kc.proposal_file);
        let _ = writeln!(s, "jitter = {}", kc.jitter);
        let t = &self.tuning;
        let _ = writeln!(s, "\n[tuning]");
        let _ = writeln!(s, "enabled = {}", t.enabled);
        let _ = writeln!(s, "target = {}", t.target);
        let _ = writeln!(s, "window = {}", t.window);
        let _ = writeln!(s, "gain = {}", t.gain);
        let _ = writeln!(s, "burn_in = {}", t.burn_in);
        let u = &self.run;
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "budget = {}", u.budget);
        let _ = writeln!(s, "record_every = {}", u.record_every);
        let _ = writeln!(s, "seed = {}", u.seed);
        let _ = writeln!(s, "out = {}", u.out);
        let _ = writeln!(
            s,
            "track = {}",
            if u.track.is_empty() {
                "full".to_string()
            } else {
                u.track
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        );
        let _ = writeln!(s, "checkpoint_every = {}", u.checkpoint_every);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_parse_back_identically() {
        let cfg = RunConfig::default();
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_and_round_trip() {
        let text = "\
[problem]
kind = toy          # enumerable test posterior
toy_levels = 3
[kernel]
kind = msda
n_step = 8
sigma_z = 0.7
scan = random
[run]
budget = 50
seed = 99
track = 0, 2
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.problem.kind, ProblemKind::Toy);
        assert_eq!(cfg.problem.toy_levels, 3);
        assert_eq!(cfg.kernel.kind, KernelKind::Msda);
        assert_eq!(cfg.kernel.n_step, 8);
        assert!(cfg.kernel.random_scan);
        assert_eq!(cfg.run.budget, 50);
        assert_eq!(cfg.run.track, vec![0, 2]);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.run.record_every, 10);
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::parse("[problem]\nsides = 12\n").is_err());
        assert!(RunConfig::parse("[wrong]\nside = 12\n").is_err());
        assert!(RunConfig::parse("side = 12\n").is_err());
        assert!(RunConfig::parse("[problem]\nside = 12\nside = 16\n").is_err());
        assert!(RunConfig::parse("[problem]\nside 12\n").is_err());
        let err = RunConfig::parse("[problem]\nside = twelve\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn validation_catches_cross_field_mistakes() {
        // Coarse side must divide fine side for two-level EIT kernels.
        let bad = "\
[problem]
side = 12
coarse_side = 5
[kernel]
kind = amsda
";
        assert!(RunConfig::parse(bad).is_err());
        // Same grid sizes are fine for single-site.
        let ok = "\
[problem]
side = 12
coarse_side = 5
";
        assert!(RunConfig::parse(ok).is_ok());
        assert!(RunConfig::parse("[run]\nbudget = 0\n").is_err());
        assert!(RunConfig::parse("[tuning]\nenabled = true\n").is_err());
        assert!(RunConfig::parse("[prior]\nlatent = true\n").is_err());
        assert!(RunConfig::parse(
            "[kernel]\nkind = rwm\nproposal = full\n"
        )
        .is_err());
    }
}
