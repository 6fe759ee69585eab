//! Priors over conductivity images.
//!
//! Two pixel-space Markov random field priors share the form
//! log π(x) = β·Σ_{i∼j} u(x_i − x_j) + const over horizontal/vertical
//! nearest-neighbor pairs, with u a similarity bonus (larger = more
//! probable):
//!
//! * [`TricubePrior`]: u(d) = (1/s)·(1 − |d/s|³)³ for |d| < s, else 0 — a
//!   compact plateau that rewards near-equal neighbors and is indifferent
//!   to jumps larger than s, so sharp material boundaries are not
//!   penalized. Support is the box [2.5, 4.5] per pixel.
//! * [`GmrfPrior`]: u(d) = −d², the Gaussian MRF that penalizes every
//!   contrast quadratically; same box support.
//!
//! [`ConvolutionPrior`] is a latent Gaussian process: independent
//! N(0, σ_u²) weights on a fixed knot lattice, smoothed by an isotropic
//! Gaussian kernel. Its pixel expansion is mean-zero and unbounded; when
//! used for conductivities the experiment layer applies a documented affine
//! shift (see the run configuration).

use crate::error::{Error, Result};
use crate::grid::{ConductivityField, GridSpec};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gray-prior support per pixel.
pub const LOWER_BOUND: f64 = 2.5;
/// Gray-prior support per pixel.
pub const UPPER_BOUND: f64 = 4.5;

/// Whether one pixel value lies in the gray-prior support.
pub fn in_bounds(v: f64) -> bool {
    (LOWER_BOUND..=UPPER_BOUND).contains(&v)
}

/// Compact-support neighbor-similarity MRF: bonus (1/s)(1−|d/s|³)³ inside
/// |d| < s, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TricubePrior {
    pub beta: f64,
    pub s: f64,
}

impl Default for TricubePrior {
    fn default() -> Self {
        TricubePrior { beta: 0.5, s: 0.3 }
    }
}

impl TricubePrior {
    pub fn new(beta: f64, s: f64) -> Result<Self> {
        if !(beta > 0.0) || !(s > 0.0) {
            return Err(Error::config(format!(
                "tricube prior needs beta > 0 and s > 0, got beta={beta}, s={s}"
            )));
        }
        Ok(TricubePrior { beta, s })
    }

    /// Kernel value u(d); even, maximal at 0, identically 0 for |d| ≥ s.
    pub fn kernel(&self, d: f64) -> f64 {
        let a = d.abs() / self.s;
        if a >= 1.0 {
            0.0
        } else {
            let t = 1.0 - a * a * a;
            t * t * t / self.s
        }
    }
}

/// Gaussian MRF: quadratic contrast penalty u(d) = −d².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmrfPrior {
    pub beta: f64,
}

impl Default for GmrfPrior {
    fn default() -> Self {
        GmrfPrior { beta: 2.0 }
    }
}

impl GmrfPrior {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::config(format!("GMRF prior needs beta > 0, got {beta}")));
        }
        Ok(GmrfPrior { beta })
    }

    pub fn kernel(&self, d: f64) -> f64 {
        -d * d
    }
}

/// Latent Gaussian process prior: x(s) = Σ_j u_j·k(s − ω_j) with
/// independent u_j ~ N(0, σ_u²) on a fixed knot lattice and an isotropic
/// Gaussian kernel k of standard deviation `kernel_sd`.
///
/// The struct carries the latent vector at which field-space queries are
/// answered; samplers that explore this prior update the latent coordinates
/// (the pixel field is a deterministic function of them).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionPrior {
    knots: Vec<(f64, f64)>,
    sigma_u: f64,
    kernel_sd: f64,
    latent: Vec<f64>,
}

impl ConvolutionPrior {
    /// Standard 10×10 knot lattice at cell-centered positions
    /// ((a+0.5)/10, (b+0.5)/10).
    pub fn new(sigma_u: f64, kernel_sd: f64) -> Result<Self> {
        let mut knots = Vec::with_capacity(100);
        for b in 0..10 {
            for a in 0..10 {
                knots.push(((a as f64 + 0.5) / 10.0, (b as f64 + 0.5) / 10.0));
            }
        }
        Self::with_knots(knots, sigma_u, kernel_sd)
    }

    /// Custom knot locations in the unit square.
    pub fn with_knots(knots: Vec<(f64, f64)>, sigma_u: f64, kernel_sd: f64) -> Result<Self> {
        if !(sigma_u > 0.0) || !(kernel_sd > 0.0) {
            return Err(Error::config(format!(
                "convolution prior needs sigma_u > 0 and kernel_sd > 0, got {sigma_u}, {kernel_sd}"
            )));
        }
        if knots.is_empty() {
            return Err(Error::config("convolution prior needs at least one knot"));
        }
        let latent = vec![0.0; knots.len()];
        Ok(ConvolutionPrior { knots, sigma_u, kernel_sd, latent })
    }

    pub fn with_latent(mut self, latent: Vec<f64>) -> Result<Self> {
        if latent.len() != self.knots.len() {
            return Err(Error::config(format!(
                "latent length {} does not match {} knots",
                latent.len(),
                self.knots.len()
            )));
        }
        self.latent = latent;
        Ok(self)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma_u
    }

    pub fn kernel_sd(&self) -> f64 {
        self.kernel_sd
    }

    /// Bivariate Gaussian density at displacement (dx, dy).
    pub fn kernel(&self, dx: f64, dy: f64) -> f64 {
        let k2 = self.kernel_sd * self.kernel_sd;
        (-(dx * dx + dy * dy) / (2.0 * k2)).exp() / (std::f64::consts::TAU * k2)
    }

    /// Log-density of the latent vector under N(0, σ_u²·I), up to an
    /// additive constant.
    pub fn log_latent_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.knots.len() {
            return Err(Error::config(format!(
                "latent length {} does not match {} knots",
                u.len(),
                self.knots.len()
            )));
        }
        let ss: f64 = u.iter().map(|v| v * v).sum();
        Ok(-ss / (2.0 * self.sigma_u * self.sigma_u))
    }

    /// Exact draw of the latent vector.
    pub fn sample_latent(&self, rng: &mut impl Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, self.sigma_u).expect("validated sd");
        (0..self.knots.len()).map(|_| normal.sample(rng)).collect()
    }
}

/// Evaluates the kernel smoothing x(s) = Σ_j u_j·k(s − ω_j) at every pixel
/// center of `grid`. Linear in `u`; the result is mean-zero in distribution
/// and may be non-positive (the experiment layer shifts it before solving).
pub fn expand_latent(
    prior: &ConvolutionPrior,
    u: &[f64],
    grid: GridSpec,
) -> Result<ConductivityField> {
    if u.len() != prior.knots.len() {
        return Err(Error::config(format!(
            "latent length {} does not match {} knots",
            u.len(),
            prior.knots.len()
        )));
    }
    let n = grid.side();
    let mut values = vec![0.0; grid.cells()];
    for r in 0..n {
        for c in 0..n {
            let (px, py) = grid.cell_center(r, c);
            let mut acc = 0.0;
            for (uj, (kx, ky)) in u.iter().zip(&prior.knots) {
                if *uj != 0.0 {
                    acc += uj * prior.kernel(px - kx, py - ky);
                }
            }
            values[r * n + c] = acc;
        }
    }
    ConductivityField::new(grid, values)
}

/// A prior choice for the experiment layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Tricube(TricubePrior),
    Gmrf(GmrfPrior),
    Convolution(ConvolutionPrior),
}

impl Prior {
    fn mrf_kernel(&self, d: f64) -> f64 {
        match self {
            Prior::Tricube(p) => p.kernel(d),
            Prior::Gmrf(p) => p.kernel(d),
            Prior::Convolution(_) => unreachable!("MRF kernel on latent prior"),
        }
    }

    fn beta(&self) -> f64 {
        match self {
            Prior::Tricube(p) => p.beta,
            Prior::Gmrf(p) => p.beta,
            Prior::Convolution(_) => unreachable!("MRF beta on latent prior"),
        }
    }

    pub fn is_latent(&self) -> bool {
        matches!(self, Prior::Convolution(_))
    }

    /// Log-density up to an additive constant. MRF priors: −∞ outside the
    /// per-pixel box, else β·Σ_{i∼j} u(x_i − x_j). The convolution prior
    /// answers with the Gaussian log-density of its stored latent vector
    /// (the field is a deterministic expansion of it).
    pub fn log_prior(&self, x: &ConductivityField) -> f64 {
        match self {
            Prior::Convolution(p) => p
                .log_latent_density(&p.latent)
                .expect("stored latent matches knots"),
            _ => {
                let v = x.values();
                if v.iter().any(|v| !in_bounds(*v)) {
                    return f64::NEG_INFINITY;
                }
                let n = x.grid().side();
                let mut sum = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        let i = r * n + c;
                        if c + 1 < n {
                            sum += self.mrf_kernel(v[i] - v[i + 1]);
                        }
                        if r + 1 < n {
                            sum += self.mrf_kernel(v[i] - v[i + n]);
                        }
                    }
                }
                self.beta() * sum
            }
        }
    }

    /// log π(x') − log π(x) for x' equal to x except value `xi_new` at flat
    /// site `i`, computed from the ≤4 neighbor terms only. −∞ when xi_new
    /// leaves the support. Unsupported for the convolution prior, whose
    /// latent update is global.
    pub fn site_log_ratio(&self, x: &ConductivityField, i: usize, xi_new: f64) -> Result<f64> {
        if matches!(self, Prior::Convolution(_)) {
            return Err(Error::unsupported(
                "site log-ratio on the convolution prior: its pixel values are coupled \
                 through the latent vector; update the latent coordinates instead",
            ));
        }
        let n = x.grid().side();
        let v = x.values();
        if i >= v.len() {
            return Err(Error::config(format!("site {i} out of range for {} cells", v.len())));
        }
        if !in_bounds(xi_new) {
            return Ok(f64::NEG_INFINITY);
        }
        let (r, c) = (i / n, i % n);
        let xi_old = v[i];
        let mut delta = 0.0;
        let mut add = |j: usize| {
            delta += self.mrf_kernel(xi_new - v[j]) - self.mrf_kernel(xi_old - v[j]);
        };
        if c > 0 {
            add(i - 1);
        }
        if c + 1 < n {
            add(i + 1);
        }
        if r > 0 {
            add(i - n);
        }
        if r + 1 < n {
            add(i + n);
        }
        Ok(self.beta() * delta)
    }

    /// Draws a realization. MRF priors run 5000 deterministic-scan
    /// single-site Metropolis sweeps targeting the prior alone (proposal sd
    /// 0.5, start at the box midpoint); the convolution prior draws its
    /// latent exactly and expands.
    pub fn sample_prior(&self, grid: GridSpec, rng: &mut impl Rng) -> Result<ConductivityField> {
        match self {
            Prior::Convolution(p) => {
                let u = p.sample_latent(rng);
                expand_latent(p, &u, grid)
            }
            _ => {
                let mid = 0.5 * (LOWER_BOUND + UPPER_BOUND);
                let mut x = ConductivityField::constant(grid, mid)?;
                let normal = Normal::new(0.0, 0.5).expect("fixed sd");
                for _ in 0..5000 {
                    for i in 0..grid.cells() {
                        let xi_new = x.values()[i] + normal.sample(rng);
                        let log_r = self.site_log_ratio(&x, i, xi_new)?;
                        let accept = log_r >= 0.0 || rng.gen::<f64>().ln() < log_r;
                        if accept {
                            x.set(i, xi_new);
                        }
                    }
                }
                Ok(x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn tricube_kernel_closed_form() {
        let p = TricubePrior::default();
        assert!((p.kernel(0.0) - 10.0 / 3.0).abs() < 1e-14);
        assert_eq!(p.kernel(0.3), 0.0);
        assert_eq!(p.kernel(-0.3), 0.0);
        assert_eq!(p.kernel(1.0), 0.0);
        // d = s/2: (10/3)·(1 − 1/8)³ = (10/3)·0.669921875
        let expect = (10.0 / 3.0) * 0.669921875;
        assert!((p.kernel(0.15) - expect).abs() < 1e-12);
        assert!((p.kernel(0.15) - 2.2330729166666665).abs() < 1e-12);
    }

    #[test]
    fn tricube_kernel_shape() {
        let p = TricubePrior::default();
        // even, maximal at 0, continuous at the support edge
        for d in [0.05, 0.1, 0.2, 0.29] {
            assert_eq!(p.kernel(d), p.kernel(-d));
            assert!(p.kernel(d) < p.kernel(0.0));
        }
        assert!(p.kernel(0.3 - 1e-12) < 1e-9);
    }

    #[test]
    fn site_ratio_leaving_plateau_is_minus_twenty_thirds() {
        // all-equal 3×3 field: moving the center ≥ s away drops 4 full
        // kernel bonuses: 0.5·(0 − 4·(10/3)) = −20/3
        let x = ConductivityField::constant(grid(3), 3.0).unwrap();
        let p = Prior::Tricube(TricubePrior::default());
        let r = p.site_log_ratio(&x, 4, 3.35).unwrap();
        assert!((r - (-20.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn site_ratio_identity_and_support() {
        let x = ConductivityField::constant(grid(3), 3.0).unwrap();
        for p in [
            Prior::Tricube(TricubePrior::default()),
            Prior::Gmrf(GmrfPrior::default()),
        ] {
            assert_eq!(p.site_log_ratio(&x, 4, 3.0).unwrap(), 0.0);
            assert_eq!(p.site_log_ratio(&x, 4, 4.7).unwrap(), f64::NEG_INFINITY);
            assert_eq!(p.site_log_ratio(&x, 0, 2.3).unwrap(), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn gmrf_site_ratio_matches_quadratic_form() {
        let vals = vec![3.0, 3.2, 2.9, 4.1, 3.5, 3.3, 2.6, 4.4, 3.8];
        let x = ConductivityField::new(grid(3), vals.clone()).unwrap();
        let p = Prior::Gmrf(GmrfPrior::default());
        let i = 4;
        let xi_new = 3.9;
        let neighbors = [3, 5, 1, 7];
        let closed: f64 = 2.0
            * neighbors
                .iter()
                .map(|&j| (vals[i] - vals[j]).powi(2) - (xi_new - vals[j]).powi(2))
                .sum::<f64>();
        assert!((p.site_log_ratio(&x, i, xi_new).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_field_has_zero_mass() {
        let mut vals = vec![3.0; 9];
        vals[7] = 4.6;
        let x = ConductivityField::new(grid(3), vals).unwrap();
        assert_eq!(
            Prior::Tricube(TricubePrior::default()).log_prior(&x),
            f64::NEG_INFINITY
        );
    }

    proptest! {
        #[test]
        fn site_ratio_consistent_with_full_density(
            vals in proptest::collection::vec(2.5f64..4.5, 16),
            i in 0usize..16,
            xi_new in 2.5f64..4.5,
        ) {
            let x = ConductivityField::new(GridSpec::new(4).unwrap(), vals.clone()).unwrap();
            for p in [Prior::Tricube(TricubePrior::default()), Prior::Gmrf(GmrfPrior::default())] {
                let mut vals2 = vals.clone();
                vals2[i] = xi_new;
                let x2 = ConductivityField::new(GridSpec::new(4).unwrap(), vals2).unwrap();
                let local = p.site_log_ratio(&x, i, xi_new).unwrap();
                let global = p.log_prior(&x2) - p.log_prior(&x);
                prop_assert!((local - global).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convolution_rejects_site_ratio() {
        let p = Prior::Convolution(ConvolutionPrior::new(1.0, 0.11).unwrap());
        let x = ConductivityField::constant(grid(4), 3.0).unwrap();
        assert!(p.site_log_ratio(&x, 0, 3.1).is_err());
    }

    #[test]
    fn expansion_is_linear() {
        let p = ConvolutionPrior::new(1.0, 0.11).unwrap();
        let g = grid(12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u1 = p.sample_latent(&mut rng);
        let u2 = p.sample_latent(&mut rng);
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + b * y).collect();
        let e1 = expand_latent(&p, &u1, g).unwrap();
        let e2 = expand_latent(&p, &u2, g).unwrap();
        let ec = expand_latent(&p, &combo, g).unwrap();
        for i in 0..g.cells() {
            let lin = a * e1.values()[i] + b * e2.values()[i];
            assert!((ec.values()[i] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_latent_expands_to_zero_field() {
        let p = ConvolutionPrior::new(1.0, 0.11).unwrap();
        let x = expand_latent(&p, &vec![0.0; 100], grid(8)).unwrap();
        assert!(x.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_knot_expansion_is_the_kernel() {
        let p = ConvolutionPrior::new(1.0, 0.11).unwrap();
        let g = grid(10);
        let mut u = vec![0.0; 100];
        u[37] = 1.0;
        let x = expand_latent(&p, &u, g).unwrap();
        let (kx, ky) = p.knots()[37];
        for r in 0..10 {
            for c in 0..10 {
                let (px, py) = g.cell_center(r, c);
                let expect = p.kernel(px - kx, py - ky);
                assert!((x.get(r, c) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kernel_decays_to_exp_half_at_one_sd() {
        // knot exactly on a pixel center; a pixel 11 cells away on a
        // side-100 grid sits precisely one kernel sd (0.11) from it
        let g = grid(100);
        let (kx, ky) = g.cell_center(50, 40);
        let p = ConvolutionPrior::with_knots(vec![(kx, ky)], 1.0, 0.11).unwrap();
        let x = expand_latent(&p, &[1.0], g).unwrap();
        let ratio = x.get(50, 51) / x.get(50, 40);
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn wide_kernel_gives_near_flat_field() {
        let p = ConvolutionPrior::new(1.0, 25.0).unwrap();
        let x = expand_latent(&p, &vec![1.0; 100], grid(8)).unwrap();
        let max = x.values().iter().cloned().fold(f64::MIN, f64::max);
        let min = x.values().iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / max.abs() < 0.10);
    }

    #[test]
    fn latent_density_is_isotropic_gaussian() {
        let p = ConvolutionPrior::new(2.0, 0.11).unwrap();
        let u = vec![1.0; 100];
        // −Σu²/(2σ²) = −100/(2·4)
        assert!((p.log_latent_density(&u).unwrap() + 12.5).abs() < 1e-12);
        assert!(p.log_latent_density(&[1.0]).is_err());
    }

    #[test]
    fn mrf_realizations_stay_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = Prior::Tricube(TricubePrior::default());
        let x = p.sample_prior(grid(6), &mut rng).unwrap();
        assert!(x.values().iter().all(|v| in_bounds(*v)));
        // same seed, same draw
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(p.sample_prior(grid(6), &mut rng2).unwrap(), x);
    }
}
