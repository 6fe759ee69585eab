//! Chain summaries: posterior mean and variance, effective sample size,
//! mode-switch counts, and empirical covariances for proposal design.

use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::Trace;

/// Conductivity midline separating the "low" (3) and "high" (4) modes of
/// the test images; crossings of it operationalize movement between modes.
pub const MODE_MIDLINE: f64 = 3.5;

/// Per-coordinate diagnostics for one tracked pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSummary {
    /// Coordinate index in the sampler state vector.
    pub coordinate: usize,
    pub mean: f64,
    /// Population variance over records.
    pub variance: f64,
    /// Effective sample size from the integrated autocorrelation time.
    pub ess: f64,
    /// Crossings of [`MODE_MIDLINE`] between consecutive records.
    pub mode_switches: u64,
    /// True when the series never moved (ESS is then reported as the record
    /// count by convention and the other numbers are formal).
    pub degenerate: bool,
}

/// Whole-trace diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub records: usize,
    /// Mean per tracked column, in trace column order.
    pub mean: Vec<f64>,
    /// Population variance per tracked column, in trace column order.
    pub variance: Vec<f64>,
    /// Final cumulative acceptance rates (stage two is NaN for one-stage
    /// kernels).
    pub stage_one_rate: f64,
    pub stage_two_rate: f64,
    /// Per-coordinate detail for the requested subset.
    pub coordinates: Vec<CoordinateSummary>,
    /// True when any requested coordinate was degenerate.
    pub degenerate: bool,
}

impl Summary {
    /// Plain-text rendering, one `key = value` line per quantity.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "records = {}", self.records);
        let _ = writeln!(s, "acceptance_rate_stage1 = {:.6}", self.stage_one_rate);
        let _ = writeln!(s, "acceptance_rate_stage2 = {:.6}", self.stage_two_rate);
        let _ = writeln!(s, "degenerate = {}", self.degenerate);
        for c in &self.coordinates {
            let _ = writeln!(
                s,
                "pixel {} : mean = {:.6} variance = {:.6} ess = {:.1} \
                 mode_switches = {}{}",
                c.coordinate,
                c.mean,
                c.variance,
                c.ess,
                c.mode_switches,
                if c.degenerate { " (degenerate)" } else { "" },
            );
        }
        s
    }
}

/// Mean and population variance of a series.
fn moments(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Effective sample size via the integrated autocorrelation time with
/// Geyer's initial-positive-sequence truncation: autocovariances are summed
/// in adjacent pairs until a pair turns non-positive, which is the standard
/// bias/variance compromise for reversible chains.
///
/// Returns `(ess, degenerate)`; a constant series is flagged degenerate and
/// reported as `n` effective samples by convention.
pub fn effective_sample_size(series: &[f64]) -> (f64, bool) {
    let n = series.len();
    if n < 2 {
        return (n as f64, true);
    }
    let (mean, var) = moments(series);
    if var == 0.0 {
        return (n as f64, true);
    }
    let gamma = |k: usize| -> f64 {
        series[..n - k]
            .iter()
            .zip(&series[k..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64
    };
    let mut sum_pairs = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = gamma(k) + gamma(k + 1);
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        k += 2;
    }
    // τ = 2·Σ_pairs/γ₀ − 1 ≥ some floor; the floor guards the antithetic
    // corner where the estimator dips below a defensible value.
    let tau = (2.0 * sum_pairs / var - 1.0).max(1.0 / n as f64);
    (n as f64 / tau, false)
}

/// Counts crossings of `midline` between consecutive entries. Values landing
/// exactly on the midline are attributed to the side they came from, so a
/// touch-and-return is not a crossing.
pub fn mode_switches(series: &[f64], midline: f64) -> u64 {
    let mut switches = 0;
    let mut side = 0i8; // -1 below, +1 above, 0 unseen/on the line
    for v in series {
        let here = if *v > midline {
            1
        } else if *v < midline {
            -1
        } else {
            side
        };
        if side != 0 && here != 0 && here != side {
            switches += 1;
        }
        if here != 0 {
            side = here;
        }
    }
    switches
}

/// Summarizes a trace. `coordinates` selects which tracked coordinates get
/// per-pixel detail (ESS, mode switches); they must be tracked by the
/// trace. Means and variances are computed for every column either way.
pub fn summarize(trace: &Trace, coordinates: &[usize]) -> Result<Summary> {
    if trace.is_empty() {
        return Err(Error::config("cannot summarize an empty trace"));
    }
    let width = trace.tracked().len();
    let mut mean = vec![0.0; width];
    let mut variance = vec![0.0; width];
    for col in 0..width {
        let series: Vec<f64> =
            trace.records().iter().map(|r| r.values[col]).collect();
        let (m, v) = moments(&series);
        mean[col] = m;
        variance[col] = v;
    }
    let mut detail = Vec::with_capacity(coordinates.len());
    for &coordinate in coordinates {
        let series = trace.series(coordinate)?;
        let (m, v) = moments(&series);
        let (ess, degenerate) = effective_sample_size(&series);
        detail.push(CoordinateSummary {
            coordinate,
            mean: m,
            variance: v,
            ess,
            mode_switches: mode_switches(&series, MODE_MIDLINE),
            degenerate,
        });
    }
    let last = trace.records().last().expect("nonempty");
    Ok(Summary {
        records: trace.len(),
        mean,
        variance,
        stage_one_rate: last.stage_one_rate,
        stage_two_rate: last.stage_two_rate,
        degenerate: detail.iter().any(|c| c.degenerate),
        coordinates: detail,
    })
}

/// Dense empirical covariance (row-major, sample convention n−1) of the
/// tracked columns of a trace — the estimate that seeds the random-walk
/// proposal shapes. Needs at least two records.
pub fn covariance_matrix(trace: &Trace) -> Result<Vec<f64>> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::config(format!(
            "covariance estimation needs at least 2 records, trace has {n}"
        )));
    }
    let d = trace.tracked().len();
    let mut mean = vec![0.0; d];
    for r in trace.records() {
        for (m, v) in mean.iter_mut().zip(&r.values) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in trace.records() {
        for i in 0..d {
            let di = r.values[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r.values[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    Ok(cov)
}

/// The diagonal of [`covariance_matrix`]: per-coordinate sample variances.
pub fn variance_diagonal(trace: &Trace) -> Result<Vec<f64>> {
    let cov = covariance_matrix(trace)?;
    let d = trace.tracked().len();
    Ok((0..d).map(|i| cov[i * d + i]).collect())
}

/// Saves a dense row-major `dim × dim` matrix as text — one header line with
/// the dimension, then one row per line at 17 significant digits — for use
/// as a random-walk proposal covariance.
pub fn save_covariance(path: &Path, dim: usize, matrix: &[f64]) -> Result<()> {
    use std::fmt::Write as _;
    if matrix.len() != dim * dim {
        return Err(Error::config(format!(
            "covariance of dimension {dim} needs {} entries, got {}",
            dim * dim,
            matrix.len()
        )));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{dim}");
    for row in matrix.chunks(dim) {
        let row: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    crate::write_atomic(path, s.as_bytes())
}

/// Reads a matrix written by [`save_covariance`]; returns `(dim, matrix)`.
pub fn load_covariance(path: &Path) -> Result<(usize, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let fail = |msg: String| Error::parse(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let dim: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| fail("line 1: expected the matrix dimension".into()))?;
    if dim == 0 {
        return Err(fail("line 1: dimension must be positive".into()));
    }
    let mut matrix = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let line = lines
            .next()
            .ok_or_else(|| fail(format!("expected {dim} matrix rows, found {i}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail(format!("line {}: non-numeric entry", i + 2)))?;
        if row.len() != dim {
            return Err(fail(format!(
                "line {}: expected {dim} entries, got {}",
                i + 2,
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(fail(format!("line {}: non-finite entry", i + 2)));
        }
        matrix.extend(row);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(fail(format!("trailing content after {dim} matrix rows")));
    }
    Ok((dim, matrix))
}
