//! Synthetic measurement generation: a reference truth image, the
//! noise-level rule, and the data-file format the run command consumes.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::MODE_MIDLINE;
use crate::error::{Error, Result};
use crate::grid::{ConductivityField, GridSpec};
use crate::posterior::DATA_DIM;
use crate::solver;

/// Default measurement-noise level as a fraction of the largest-magnitude
/// voltage component: 3 parts noise per 1000 parts signal.
pub const DEFAULT_NOISE_RATIO: f64 = 3.0 / 1000.0;

/// Background ("white") conductivity of the reference truth image.
pub const TRUTH_LOW: f64 = 3.0;
/// Inclusion ("black") conductivity of the reference truth image.
pub const TRUTH_HIGH: f64 = 4.0;

/// The reference truth image at any grid size: background 3 with two
/// conductivity-4 inclusions, a disk centered at (0.30, 0.65) of radius
/// 0.18 and the axis-aligned bar [0.55, 0.85] × [0.15, 0.40], both in
/// unit-square coordinates. A cell takes the inclusion value when its
/// center lies inside either region.
pub fn reference_truth(grid: GridSpec) -> Result<ConductivityField> {
    let mut values = vec![TRUTH_LOW; grid.cells()];
    let n = grid.side();
    for r in 0..n {
        for c in 0..n {
            let (x, y) = grid.cell_center(r, c);
            let in_disk = {
                let dx = x - 0.30;
                let dy = y - 0.65;
                dx * dx + dy * dy <= 0.18 * 0.18
            };
            let in_bar =
                (0.55..=0.85).contains(&x) && (0.15..=0.40).contains(&y);
            if in_disk || in_bar {
                values[r * n + c] = TRUTH_HIGH;
            }
        }
    }
    ConductivityField::new(grid, values)
}

/// Simulates one measurement set from a truth image: runs the exact forward
/// model and adds i.i.d. Gaussian noise with
/// `sigma = noise_ratio · max_j |η_j(truth)|`. Returns `(y, sigma)`.
///
/// `noise_ratio = 0` is the noiseless mode (`y` equals the prediction
/// exactly, no random draws). A truth whose prediction is identically zero
/// carries no signal to scale the noise by and is rejected.
pub fn generate_data(
    truth: &ConductivityField,
    noise_ratio: f64,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if !(noise_ratio.is_finite() && noise_ratio >= 0.0) {
        return Err(Error::config(format!(
            "noise ratio must be finite and non-negative, got {noise_ratio}"
        )));
    }
    let eta = solver::solve_fine(truth)?;
    let peak = eta.max_abs();
    if peak == 0.0 {
        return Err(Error::numerical(
            "truth image predicts identically zero voltages; \
             no signal level to scale the noise by",
        ));
    }
    let sigma = noise_ratio * peak;
    let mut y = eta.flat();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut y {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((y, sigma))
}

/// Writes a measurement file: `sigma = <value>` then one voltage component
/// per line, 17 significant digits throughout.
pub fn save_data(path: &Path, y: &[f64], sigma: f64) -> Result<()> {
    if y.len() != DATA_DIM {
        return Err(Error::config(format!(
            "measurement vector has {} components, expected {DATA_DIM}",
            y.len()
        )));
    }
    let mut s = String::new();
    let _ = writeln!(s, "sigma = {sigma:.16e}");
    for v in y {
        let _ = writeln!(s, "{v:.16e}");
    }
    crate::write_atomic(path, s.as_bytes())
}

/// Reads a measurement file written by [`save_data`].
pub fn load_data(path: &Path) -> Result<(Vec<f64>, f64)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(format!("{}: empty file", path.display())))?;
    let sigma: f64 = header
        .strip_prefix("sigma = ")
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| {
            Error::parse(format!(
                "{}: first line must be \"sigma = <value>\"",
                path.display()
            ))
        })?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::parse(format!(
            "{}: noise sd must be finite and non-negative, got {sigma}",
            path.display()
        )));
    }
    let y: Vec<f64> = lines
        .map(|l| {
            l.trim().parse::<f64>().map_err(|_| {
                Error::parse(format!("{}: bad voltage line {l:?}", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    if y.len() != DATA_DIM {
        return Err(Error::parse(format!(
            "{}: {} voltage components, expected {DATA_DIM}",
            path.display(),
            y.len()
        )));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::parse(format!(
            "{}: voltages must be finite, got {v}",
            path.display()
        )));
    }
    Ok((y, sigma))
}

/// Picks the three pixels whose traces a report tracks, from the truth
/// image: one deep inside the low region (the low cell with no high
/// neighbor farthest from the high cells' centroid), one inside the high
/// region (the high cell nearest that centroid), and one on the interface
/// (the low cell with a high 4-neighbor nearest the centroid). Ties break
/// to the smallest flat index, so the choice is deterministic.
pub fn tracked_pixels(truth: &ConductivityField) -> Result<[usize; 3]> {
    let n = truth.grid().side();
    let high: Vec<usize> = (0..truth.values().len())
        .filter(|i| truth.values()[*i] > MODE_MIDLINE)
        .collect();
    if high.is_empty() || high.len() == truth.values().len() {
        return Err(Error::config(
            "tracked-pixel rule needs a truth image with both low and high \
             regions",
        ));
    }
    let centroid = {
        let (mut r, mut c) = (0.0, 0.0);
        for i in &high {
            r += (i / n) as f64;
            c += (i % n) as f64;
        }
        (r / high.len() as f64, c / high.len() as f64)
    };
    let dist2 = |i: usize| -> f64 {
        let dr = (i / n) as f64 - centroid.0;
        let dc = (i % n) as f64 - centroid.1;
        dr * dr + dc * dc
    };
    let is_high = |i: usize| truth.values()[i] > MODE_MIDLINE;
    let has_high_neighbor = |i: usize| -> bool {
        let (r, c) = (i / n, i % n);
        (r > 0 && is_high(i - n))
            || (r + 1 < n && is_high(i + n))
            || (c > 0 && is_high(i - 1))
            || (c + 1 < n && is_high(i + 1))
    };

    let high_pixel = *high
        .iter()
        .min_by(|a, b| dist2(**a).total_cmp(&dist2(**b)).then(a.cmp(b)))
        .expect("nonempty");
    let boundary_pixel = (0..truth.values().len())
        .filter(|i| !is_high(*i) && has_high_neighbor(*i))
        .min_by(|a, b| dist2(*a).total_cmp(&dist2(*b)).then(a.cmp(b)))
        .ok_or_else(|| {
            Error::config("truth image has no low cell adjacent to a high cell")
        })?;
    let interior_low: Vec<usize> = (0..truth.values().len())
        .filter(|i| !is_high(*i) && !has_high_neighbor(*i))
        .collect();
    let low_pixel = interior_low
        .iter()
        .copied()
        .max_by(|a, b| dist2(*a).total_cmp(&dist2(*b)).then(b.cmp(a)))
        .ok_or_else(|| {
            Error::config("truth image has no low cell away from the interface")
        })?;
    Ok([low_pixel, high_pixel, boundary_pixel])
}
