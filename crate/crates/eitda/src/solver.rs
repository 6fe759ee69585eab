//! Finite-volume forward solver for the electrode-voltage map.
//!
//! Discretizes −∇·x∇v = 0 on the unit square with the no-flux Neumann
//! condition, cell-centered with a 5-point stencil; face transmissibilities
//! are harmonic means of the adjacent cell conductivities, the standard
//! choice for discontinuous coefficients. Electrode currents enter as point
//! sources in their boundary cells, and the measured voltage of an electrode
//! is the potential of its cell, referenced to the mean over the 16
//! electrodes.
//!
//! Three fidelities share the assembly:
//! * [`solve_fine`]: banded Cholesky, factored once per field, one
//!   back-substitution per drive pattern.
//! * [`solve_approx`]: fixed-iteration Jacobi-preconditioned conjugate
//!   gradients on the rank-one gauge-augmented operator, zero initial guess.
//! * [`solve_coarse`]: block-coarsen the field, then solve on the coarse
//!   grid with the coarse electrode layout.
//!
//! The pure-Neumann operator is singular (constants). The iterative path
//! adds γ·(1/m)·ones·onesᵀ with γ the mean diagonal, which selects the
//! zero-sum solution; the direct path factors the system with cell 0's row
//! and column dropped, which yields the same centered electrode voltages on
//! zero-sum drive vectors while keeping the band structure.

use crate::error::{Error, Result};
use crate::grid::{ConductivityField, CoarsenRule, ElectrodeLayout, GridSpec, ELECTRODE_COUNT};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

/// One measurement configuration: the full current `amplitude` flows out
/// through the `drive` electrode and returns evenly, amplitude/15, through
/// each of the other 15. Currents sum to zero up to one rounding of
/// amplitude/15.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivePattern {
    drive: usize,
    amplitude: f64,
}

impl DrivePattern {
    pub fn new(drive: usize, amplitude: f64) -> Result<Self> {
        if drive >= ELECTRODE_COUNT {
            return Err(Error::config(format!("drive electrode {drive} out of range")));
        }
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::config(format!("drive amplitude must be positive, got {amplitude}")));
        }
        Ok(DrivePattern { drive, amplitude })
    }

    /// Unit-amplitude pattern driving electrode `e`.
    pub fn standard(e: usize) -> Self {
        DrivePattern { drive: e, amplitude: 1.0 }
    }

    pub fn all_standard() -> Vec<DrivePattern> {
        (0..ELECTRODE_COUNT).map(DrivePattern::standard).collect()
    }

    pub fn drive_electrode(&self) -> usize {
        self.drive
    }

    pub fn currents(&self) -> [f64; ELECTRODE_COUNT] {
        let ret = self.amplitude / 15.0;
        let mut c = [ret; ELECTRODE_COUNT];
        c[self.drive] = -15.0 * ret;
        c
    }
}

/// Electrode voltages under the 16 standard drive patterns; row p is the
/// response to [`DrivePattern::standard`]`(p)`, mean-centered over the 16
/// electrodes. The flattened n=256 view is pattern-major: entry 16·p + e.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSet {
    rows: [[f64; ELECTRODE_COUNT]; ELECTRODE_COUNT],
}

impl VoltageSet {
    pub fn from_rows(rows: [[f64; ELECTRODE_COUNT]; ELECTRODE_COUNT]) -> Self {
        VoltageSet { rows }
    }

    pub fn row(&self, p: usize) -> &[f64; ELECTRODE_COUNT] {
        &self.rows[p]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV with a header of electrode indices; one row per drive pattern.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let header: Vec<String> = (0..ELECTRODE_COUNT).map(|e| format!("e{e}")).collect();
        let _ = writeln!(s, "{}", header.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        crate::write_atomic(path, s.as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<VoltageSet> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        let mut rows = [[0.0; ELECTRODE_COUNT]; ELECTRODE_COUNT];
        let mut lines = text.lines().enumerate();
        lines.next(); // header
        let mut p = 0usize;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if p >= ELECTRODE_COUNT {
                return Err(Error::parse(format!("line {}: more than 16 voltage rows", i + 1)));
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(format!("line {}: non-numeric voltage", i + 1)))?;
            if vals.len() != ELECTRODE_COUNT {
                return Err(Error::parse(format!(
                    "line {}: expected 16 values, got {}",
                    i + 1,
                    vals.len()
                )));
            }
            rows[p].copy_from_slice(&vals);
            p += 1;
        }
        if p != ELECTRODE_COUNT {
            return Err(Error::parse(format!("expected 16 voltage rows, got {p}")));
        }
        Ok(VoltageSet { rows })
    }
}

/// 5-point stencil in face form: conductance per horizontal/vertical face.
/// Applying the operator accumulates t·(v[a]−v[b]) per face, so constants
/// map to exactly zero.
struct Stencil {
    n: usize,
    diag: Vec<f64>,
    right: Vec<f64>, // face c -> c+1, zero on the right edge
    down: Vec<f64>,  // face c -> c+n, zero on the bottom edge
}

impl Stencil {
    fn build(field: &ConductivityField) -> Stencil {
        let n = field.grid().side();
        let m = n * n;
        let x = field.values();
        let mut diag = vec![0.0; m];
        let mut right = vec![0.0; m];
        let mut down = vec![0.0; m];
        let harm = |a: f64, b: f64| 2.0 * a * b / (a + b);
        for r in 0..n {
            for c in 0..n {
                let i = r * n + c;
                if c + 1 < n {
                    let t = harm(x[i], x[i + 1]);
                    right[i] = t;
                    diag[i] += t;
                    diag[i + 1] += t;
                }
                if r + 1 < n {
                    let t = harm(x[i], x[i + n]);
                    down[i] = t;
                    diag[i] += t;
                    diag[i + n] += t;
                }
            }
        }
        Stencil { n, diag, right, down }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for i in 0..v.len() {
            let t = self.right[i];
            if t != 0.0 {
                let d = t * (v[i] - v[i + 1]);
                out[i] += d;
                out[i + 1] -= d;
            }
            let t = self.down[i];
            if t != 0.0 {
                let d = t * (v[i] - v[i + n]);
                out[i] += d;
                out[i + n] -= d;
            }
        }
    }

    /// Entry A[a][b] of the assembled matrix for a ≥ b.
    fn entry(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.diag[a]
        } else if a == b + 1 && !(b + 1).is_multiple_of(self.n) {
            -self.right[b]
        } else if a == b + self.n {
            -self.down[b]
        } else {
            0.0
        }
    }
}

/// Cholesky factor of the system with cell 0 pinned. Band storage:
/// band[i·(w+1) + d] = L[i][i−d] for d = 0..=w, indices in the pinned
/// numbering (cell index − 1), bandwidth w = grid side.
struct BandedCholesky {
    nd: usize,
    w: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    fn factor(st: &Stencil) -> Result<BandedCholesky> {
        let n = st.n;
        let m = n * n;
        let nd = m - 1;
        let w = n;
        let stride = w + 1;
        let mut band = vec![0.0; nd * stride];
        for i in 0..nd {
            let dmax = w.min(i);
            let kmin = i.saturating_sub(w);
            for d in (0..=dmax).rev() {
                let j = i - d;
                // pinned index -> cell index shift of +1
                let mut sum = st.entry(i + 1, j + 1);
                for k in kmin..j {
                    sum -= band[i * stride + (i - k)] * band[j * stride + (j - k)];
                }
                if d == 0 {
                    if !(sum > 0.0) {
                        return Err(Error::numerical(format!(
                            "Cholesky pivot {sum:e} at pinned row {i} (grid side {n}); \
                             the conductivity field may be degenerate"
                        )));
                    }
                    band[i * stride] = sum.sqrt();
                } else {
                    band[i * stride + d] = sum / band[j * stride];
                }
            }
        }
        Ok(BandedCholesky { nd, w, band })
    }

    /// Solves L Lᵀ x = b in place; b has the pinned dimension m−1.
    fn solve_in_place(&self, b: &mut [f64]) {
        let stride = self.w + 1;
        for i in 0..self.nd {
            let dmax = self.w.min(i);
            let mut s = b[i];
            for d in 1..=dmax {
                s -= self.band[i * stride + d] * b[i - d];
            }
            b[i] = s / self.band[i * stride];
        }
        for i in (0..self.nd).rev() {
            let dmax = self.w.min(self.nd - 1 - i);
            let mut s = b[i];
            for d in 1..=dmax {
                s -= self.band[(i + d) * stride + d] * b[i + d];
            }
            b[i] = s / self.band[i * stride];
        }
    }
}

/// Assembled system for one conductivity field. Immutable after
/// construction; the direct factorization is computed on first use and
/// shared by all 16 right-hand sides.
pub struct SolverHandle {
    grid: GridSpec,
    layout: ElectrodeLayout,
    st: Stencil,
    chol: OnceLock<BandedCholesky>,
}

/// Builds the assembled system for `field` with electrodes at `layout`.
/// Requires strictly positive conductivities (PDE well-posedness).
pub fn assemble(field: &ConductivityField, layout: &ElectrodeLayout) -> Result<SolverHandle> {
    if let Some(v) = field.values().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::numerical(format!(
            "conductivity must be strictly positive to assemble the operator, got {v}"
        )));
    }
    Ok(SolverHandle {
        grid: field.grid(),
        layout: layout.clone(),
        st: Stencil::build(field),
        chol: OnceLock::new(),
    })
}

impl SolverHandle {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Applies the assembled (pre-gauge) operator.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.st.apply(v, &mut out);
        out
    }

    /// Diagonal of the assembled operator.
    pub fn diagonal(&self) -> &[f64] {
        &self.st.diag
    }

    fn chol(&self) -> Result<&BandedCholesky> {
        if self.chol.get().is_none() {
            let f = BandedCholesky::factor(&self.st)?;
            let _ = self.chol.set(f);
        }
        Ok(self.chol.get().expect("factorization just set"))
    }

    fn rhs(&self, currents: &[f64; ELECTRODE_COUNT]) -> Vec<f64> {
        let mut q = vec![0.0; self.grid.cells()];
        for e in 0..ELECTRODE_COUNT {
            q[self.layout.cell(e)] += currents[e];
        }
        q
    }

    fn extract_centered(&self, v: &[f64]) -> [f64; ELECTRODE_COUNT] {
        let mut volts = [0.0; ELECTRODE_COUNT];
        let mut sum = 0.0;
        for e in 0..ELECTRODE_COUNT {
            volts[e] = v[self.layout.cell(e)];
            sum += volts[e];
        }
        let mean = sum / ELECTRODE_COUNT as f64;
        for v in &mut volts {
            *v -= mean;
        }
        volts
    }

    /// Centered electrode voltages for one current vector, direct solve.
    pub fn solve_currents(&self, currents: &[f64; ELECTRODE_COUNT]) -> Result<[f64; ELECTRODE_COUNT]> {
        let chol = self.chol()?;
        let q = self.rhs(currents);
        let mut b = q[1..].to_vec();
        chol.solve_in_place(&mut b);
        let mut v = vec![0.0; self.grid.cells()];
        v[1..].copy_from_slice(&b);
        Ok(self.extract_centered(&v))
    }

    /// All 16 standard patterns through the shared factorization.
    pub fn voltages_direct(&self) -> Result<VoltageSet> {
        let mut rows = [[0.0; ELECTRODE_COUNT]; ELECTRODE_COUNT];
        for p in 0..ELECTRODE_COUNT {
            rows[p] = self.solve_currents(&DrivePattern::standard(p).currents())?;
        }
        Ok(VoltageSet::from_rows(rows))
    }

    /// Fixed-iteration preconditioned CG on the gauge-augmented operator
    /// A + γ·(1/m)·ones·onesᵀ, γ = mean diagonal. Stops early only on exact
    /// convergence (zero residual), so small systems stay finite.
    fn cg_solve(&self, q: &[f64], iters: usize) -> Vec<f64> {
        let m = q.len();
        let gamma: f64 = self.st.diag.iter().sum::<f64>() / m as f64;
        let gm = gamma / m as f64;
        let precond: Vec<f64> = self.st.diag.iter().map(|d| 1.0 / (d + gm)).collect();
        let apply_aug = |v: &[f64], out: &mut Vec<f64>| {
            self.st.apply(v, out);
            let s: f64 = v.iter().sum::<f64>() * gm;
            for o in out.iter_mut() {
                *o += s;
            }
        };
        let mut x = vec![0.0; m];
        let mut r = q.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(r, p)| r * p).collect();
        let mut pdir = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; m];
        for _ in 0..iters {
            if rz <= 0.0 || !rz.is_finite() {
                break;
            }
            apply_aug(&pdir, &mut ap);
            let pap: f64 = pdir.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 || !pap.is_finite() {
                break;
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * pdir[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..m {
                z[i] = r[i] * precond[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                pdir[i] = z[i] + beta * pdir[i];
            }
        }
        x
    }

    /// All 16 standard patterns by truncated CG.
    pub fn voltages_cg(&self, iters: usize) -> Result<VoltageSet> {
        if iters == 0 {
            return Err(Error::config("approx solver needs iters >= 1"));
        }
        let mut rows = [[0.0; ELECTRODE_COUNT]; ELECTRODE_COUNT];
        for p in 0..ELECTRODE_COUNT {
            let q = self.rhs(&DrivePattern::standard(p).currents());
            let v = self.cg_solve(&q, iters);
            rows[p] = self.extract_centered(&v);
        }
        Ok(VoltageSet::from_rows(rows))
    }

    /// Electrode-space response matrix: column j holds the centered
    /// voltages for the unit injection at electrode j projected onto the
    /// zero-sum current subspace (currents e_j − ones/16). With that
    /// projection, T·currents(p) reproduces VoltageSet row p exactly and T
    /// is symmetric.
    pub fn transfer_matrix(&self) -> Result<[[f64; ELECTRODE_COUNT]; ELECTRODE_COUNT]> {
        let mut t = [[0.0; ELECTRODE_COUNT]; ELECTRODE_COUNT];
        for j in 0..ELECTRODE_COUNT {
            let mut currents = [-1.0 / ELECTRODE_COUNT as f64; ELECTRODE_COUNT];
            currents[j] += 1.0;
            let col = self.solve_currents(&currents)?;
            for (i, v) in col.iter().enumerate() {
                t[i][j] = *v;
            }
        }
        Ok(t)
    }
}

/// Direct solve on the field's own grid with its standard electrode layout.
pub fn solve_fine(field: &ConductivityField) -> Result<VoltageSet> {
    let layout = ElectrodeLayout::for_grid(field.grid());
    assemble(field, &layout)?.voltages_direct()
}

/// Truncated-iteration approximate solve; converges to [`solve_fine`] as
/// `iters` grows.
pub fn solve_approx(field: &ConductivityField, iters: usize) -> Result<VoltageSet> {
    let layout = ElectrodeLayout::for_grid(field.grid());
    assemble(field, &layout)?.voltages_cg(iters)
}

/// Default truncation for [`solve_approx`]: enough to put the worst
/// per-component error well below the synthetic-data noise at the shipped
/// presets (measured: the worst pattern needs ~2·side iterations).
pub fn default_approx_iters(side: usize) -> usize {
    4 * side
}

/// Coarsen the field onto `coarse`, then solve there with the coarse
/// layout.
pub fn solve_coarse(
    field: &ConductivityField,
    coarse: GridSpec,
    rule: CoarsenRule,
) -> Result<VoltageSet> {
    let cf = field.coarsen(coarse, rule)?;
    let layout = ElectrodeLayout::for_grid(coarse);
    assemble(&cf, &layout)?.voltages_direct()
}
