//! Square-lattice geometry, conductivity fields, block coarsening, and the
//! electrode layout on the boundary of the unit square.
//!
//! Fields are stored row-major with (row 0, col 0) at the top-left of the
//! image; cell (r, c) covers the square with center
//! ((c + 0.5)/side, 1 − (r + 0.5)/side) in x-right, y-up coordinates.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Cells per side of the unit square Ω = [0,1]².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    side: usize,
}

impl GridSpec {
    pub fn new(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::config(format!("grid side must be >= 2, got {side}")));
        }
        Ok(GridSpec { side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of cells m = side².
    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.side as f64
    }

    /// Center of cell (r, c) in x-right, y-up coordinates.
    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        let h = self.cell_size();
        ((c as f64 + 0.5) * h, 1.0 - (r as f64 + 0.5) * h)
    }
}

/// How a block of fine cells maps to one coarse cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoarsenRule {
    /// Arithmetic block mean (default).
    #[default]
    Arithmetic,
    /// Harmonic block mean; config option for rough fields.
    Harmonic,
}

/// Per-cell conductivities on a [`GridSpec`]. The container only requires
/// finite values: strict positivity is a well-posedness precondition of the
/// forward solver (checked at assembly), and the gray-prior range
/// [2.5, 4.5] is a property of posterior states enforced at proposal time.
/// This keeps the type usable for mean-zero latent-expansion fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::config(format!(
                "field length {} does not match grid with {} cells",
                values.len(),
                grid.cells()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("field values must be finite, got {v}")));
        }
        Ok(ConductivityField { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.cells()])
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Overwrites the value at flat index `i` (single-site MCMC updates).
    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.values[i] = value;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.grid.side() + c]
    }

    /// Block-coarsen onto `coarse`. The coarse side must divide the fine side.
    pub fn coarsen(&self, coarse: GridSpec, rule: CoarsenRule) -> Result<ConductivityField> {
        let nf = self.grid.side();
        let nc = coarse.side();
        if !nf.is_multiple_of(nc) {
            return Err(Error::config(format!(
                "coarse side {nc} does not divide fine side {nf}"
            )));
        }
        let k = nf / nc;
        let inv_block = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; coarse.cells()];
        for cr in 0..nc {
            for cc in 0..nc {
                let mut acc = 0.0;
                for r in cr * k..(cr + 1) * k {
                    for c in cc * k..(cc + 1) * k {
                        let v = self.values[r * nf + c];
                        acc += match rule {
                            CoarsenRule::Arithmetic => v,
                            CoarsenRule::Harmonic => 1.0 / v,
                        };
                    }
                }
                out[cr * nc + cc] = match rule {
                    CoarsenRule::Arithmetic => acc * inv_block,
                    CoarsenRule::Harmonic => 1.0 / (acc * inv_block),
                };
            }
        }
        ConductivityField::new(coarse, out)
    }

    /// Plain-text serialization: first line "rows cols", then one line per
    /// row of whitespace-separated values. Round-trips exactly: values are
    /// printed with the shortest representation that parses back identically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let n = self.grid.side();
        let _ = writeln!(s, "{n} {n}");
        for r in 0..n {
            let row: Vec<String> = (0..n).map(|c| format!("{}", self.get(r, c))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        crate::write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<ConductivityField> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("empty field file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(format!("line 1: expected \"rows cols\", got {header:?}")))?;
        if dims.len() != 2 || dims[0] != dims[1] {
            return Err(Error::parse(format!(
                "line 1: expected a square \"rows cols\" header, got {header:?}"
            )));
        }
        let n = dims[0];
        let grid = GridSpec::new(n)?;
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0usize;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            if rows > n {
                return Err(Error::parse(format!("expected {n} rows, found more")));
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(format!("line {}: non-numeric value", i + 1)))?;
            if row.len() != n {
                return Err(Error::parse(format!(
                    "line {}: expected {n} values per row, got {}",
                    i + 1,
                    row.len()
                )));
            }
            values.extend_from_slice(&row);
        }
        if rows != n {
            return Err(Error::parse(format!("expected {n} rows, got {rows}")));
        }
        ConductivityField::new(grid, values)
    }

    /// PGM (P2) export: values mapped linearly from [2.5, 4.5] to [0, 255]
    /// and clamped.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let n = self.grid.side();
        let mut s = String::new();
        let _ = writeln!(s, "P2");
        let _ = writeln!(s, "{n} {n}");
        let _ = writeln!(s, "255");
        for r in 0..n {
            let row: Vec<String> = (0..n)
                .map(|c| {
                    let g = ((self.get(r, c) - 2.5) / 2.0 * 255.0).round().clamp(0.0, 255.0);
                    format!("{}", g as u32)
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        crate::write_atomic(path, s.as_bytes())
    }
}

pub const ELECTRODE_COUNT: usize = 16;

/// 16 electrodes on ∂Ω, 4 per side, numbered counter-clockwise starting from
/// the bottom edge (bottom left→right, right bottom→top, top right→left,
/// left top→bottom). Per-side boundary-cell slots are floor(side·(2k+1)/8),
/// giving {3, 9, 15, 21} at side 24. The slot rule keeps electrodes off the
/// corners for side ≥ 8; smaller (surrogate) grids may place several
/// electrodes on one boundary cell, which the solver accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectrodeLayout {
    cells: [usize; ELECTRODE_COUNT],
}

impl ElectrodeLayout {
    pub fn for_grid(grid: GridSpec) -> ElectrodeLayout {
        let n = grid.side();
        let q: Vec<usize> = (0..4).map(|k| n * (2 * k + 1) / 8).collect();
        let mut cells = [0usize; ELECTRODE_COUNT];
        for k in 0..4 {
            cells[k] = (n - 1) * n + q[k]; // bottom row, left→right
            cells[4 + k] = (n - 1 - q[k]) * n + (n - 1); // right col, bottom→top
            cells[8 + k] = n - 1 - q[k]; // top row, right→left
            cells[12 + k] = q[k] * n; // left col, top→bottom
        }
        ElectrodeLayout { cells }
    }

    /// Cell index (row-major) hosting electrode `e`.
    pub fn cell(&self, e: usize) -> usize {
        self.cells[e]
    }

    pub fn cells(&self) -> &[usize; ELECTRODE_COUNT] {
        &self.cells
    }
}
