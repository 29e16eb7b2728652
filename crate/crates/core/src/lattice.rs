//! Brillouin-zone grids and the pinned phonon dispersion.
//!
//! The fast grid is the uniform torus `{2πj/M}^d`. Points are addressed by a
//! flat index with axis 0 varying fastest; axis 0 is the transport
//! direction throughout the crate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported grid; the addition table is quadratic in the point count.
pub const MAX_GRID_POINTS: usize = 4096;

/// Uniform momentum grid on the d-torus, with tables for the modular
/// arithmetic used to resolve momentum deltas on-grid.
#[derive(Debug, Clone)]
pub struct BrillouinGrid {
    dim: usize,
    points_per_axis: usize,
    /// Number of slow-lattice sites for the finite-N branch, if any.
    slow_size: Option<usize>,
    len: usize,
    /// `coords[i * dim + a]` is the integer coordinate of point `i` on axis `a`.
    coords: Vec<u32>,
    neg: Vec<u32>,
    add: Vec<u32>,
}

impl BrillouinGrid {
    pub fn new(dim: usize, points_per_axis: usize, slow_size: Option<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("grid dimension must be at least 1".into()));
        }
        if points_per_axis < 4 || !points_per_axis.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "points per axis must be even and >= 4, got {points_per_axis}"
            )));
        }
        if let Some(n) = slow_size {
            if n < 2 {
                return Err(Error::InvalidParameter(format!("slow lattice size must be >= 2, got {n}")));
            }
        }
        let m = points_per_axis;
        let len = m
            .checked_pow(dim as u32)
            .filter(|&n| n <= MAX_GRID_POINTS)
            .ok_or_else(|| Error::InvalidParameter(format!("grid {m}^{dim} is too large")))?;

        let mut coords = vec![0u32; len * dim];
        for i in 0..len {
            let mut rest = i;
            for a in 0..dim {
                coords[i * dim + a] = (rest % m) as u32;
                rest /= m;
            }
        }
        let flat = |c: &[u32]| -> usize {
            c.iter().rev().fold(0usize, |acc, &x| acc * m + x as usize)
        };

        let mut neg = vec![0u32; len];
        let mut scratch = vec![0u32; dim];
        for i in 0..len {
            for a in 0..dim {
                scratch[a] = ((m as u32 - coords[i * dim + a]) % m as u32) as u32;
            }
            neg[i] = flat(&scratch) as u32;
        }
        let mut add = vec![0u32; len * len];
        for i in 0..len {
            for j in 0..len {
                for a in 0..dim {
                    scratch[a] = (coords[i * dim + a] + coords[j * dim + a]) % m as u32;
                }
                add[i * len + j] = flat(&scratch) as u32;
            }
        }

        Ok(Self { dim, points_per_axis, slow_size, len, coords, neg, add })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn slow_size(&self) -> Option<usize> {
        self.slow_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Grid spacing `2π/M`.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.points_per_axis as f64
    }

    /// Riemann weight of one grid cell, `(2π/M)^d`.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coord(&self, i: usize, axis: usize) -> usize {
        self.coords[i * self.dim + axis] as usize
    }

    /// Momentum components of point `i`, each in `[0, 2π)`.
    pub fn momentum(&self, i: usize) -> Vec<f64> {
        (0..self.dim).map(|a| self.coord(i, a) as f64 * self.spacing()).collect()
    }

    /// Flat index of the point with the given integer coordinates (reduced mod M).
    pub fn index_of(&self, coords: &[i64]) -> usize {
        let m = self.points_per_axis as i64;
        coords.iter().rev().fold(0usize, |acc, &c| acc * self.points_per_axis + c.rem_euclid(m) as usize)
    }

    /// Index of `-k mod 2π`.
    #[inline]
    pub fn neg(&self, i: usize) -> usize {
        self.neg[i] as usize
    }

    /// Index of `k_i + k_j mod 2π`.
    #[inline]
    pub fn add(&self, i: usize, j: usize) -> usize {
        self.add[i * self.len + j] as usize
    }

    /// Index of `k_i - k_j mod 2π`.
    #[inline]
    pub fn sub(&self, i: usize, j: usize) -> usize {
        self.add(i, self.neg(j))
    }
}

/// Build the fast grid; see [`BrillouinGrid::new`].
pub fn build_grid(dim: usize, points_per_axis: usize, slow_size: Option<usize>) -> Result<BrillouinGrid> {
    BrillouinGrid::new(dim, points_per_axis, slow_size)
}

/// `ω(k) = 2 Σ_i (1 − cos k_i) + m²` for an arbitrary point.
pub fn omega_at(mass_sq: f64, k: &[f64]) -> f64 {
    2.0 * k.iter().map(|&x| 1.0 - x.cos()).sum::<f64>() + mass_sq
}

/// Pinned dispersion tabulated over a grid.
#[derive(Debug, Clone)]
pub struct Dispersion {
    mass_sq: f64,
    dim: usize,
    omega: Vec<f64>,
    /// `velocity[i * dim + a] = ∂ω/∂k_a = 2 sin k_a`
    velocity: Vec<f64>,
}

impl Dispersion {
    pub fn new(grid: &BrillouinGrid, mass_sq: f64) -> Result<Self> {
        if !(mass_sq > 0.0) || !mass_sq.is_finite() {
            return Err(Error::InvalidParameter(format!("m² must be positive, got {mass_sq}")));
        }
        let dim = grid.dim();
        // Cosines come from a per-axis table so that ω(−k) = ω(k) holds bitwise.
        let m = grid.points_per_axis();
        let one_minus_cos: Vec<f64> = (0..m)
            .map(|j| {
                let j = j.min(m - j);
                1.0 - (j as f64 * grid.spacing()).cos()
            })
            .collect();
        let sines: Vec<f64> = (0..m)
            .map(|j| {
                let s = (j.min(m - j) as f64 * grid.spacing()).sin();
                if j > m / 2 {
                    -s
                } else if j == m / 2 || j == 0 {
                    0.0
                } else {
                    s
                }
            })
            .collect();
        let mut omega = Vec::with_capacity(grid.len());
        let mut velocity = Vec::with_capacity(grid.len() * dim);
        for i in 0..grid.len() {
            let mut w = 0.0;
            for a in 0..dim {
                w += one_minus_cos[grid.coord(i, a)];
                velocity.push(2.0 * sines[grid.coord(i, a)]);
            }
            omega.push(2.0 * w + mass_sq);
        }
        Ok(Self { mass_sq, dim, omega, velocity })
    }

    pub fn mass_sq(&self) -> f64 {
        self.mass_sq
    }

    /// Tabulated ω at grid point `i`.
    #[inline]
    pub fn omega(&self, i: usize) -> f64 {
        self.omega[i]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omega
    }

    /// ω at an arbitrary point of the torus.
    pub fn omega_at(&self, k: &[f64]) -> f64 {
        omega_at(self.mass_sq, k)
    }

    /// Group velocity component along `axis` at grid point `i`.
    #[inline]
    pub fn velocity(&self, i: usize, axis: usize) -> f64 {
        self.velocity[i * self.dim + axis]
    }

    /// Group velocity along the transport axis for every grid point.
    pub fn transport_velocity(&self) -> Vec<f64> {
        (0..self.omega.len()).map(|i| self.velocity(i, 0)).collect()
    }

    /// Largest possible frequency `4d + m²`.
    pub fn max_omega(&self) -> f64 {
        4.0 * self.dim as f64 + self.mass_sq
    }

    /// Frequency combinations at slow momentum `p` and fast momentum `k`:
    /// `(½(ω(p+k)² + ω(p−k)²), ω(p+k)² − ω(p−k)²)`.
    pub fn omega_pair(&self, p: &[f64], k: &[f64]) -> (f64, f64) {
        omega_pair(self.mass_sq, p, k)
    }
}

/// See [`Dispersion::omega_pair`]. `p` may be shorter than `k`; missing
/// components are zero.
pub fn omega_pair(mass_sq: f64, p: &[f64], k: &[f64]) -> (f64, f64) {
    let comp = |a: usize| p.get(a).copied().unwrap_or(0.0);
    let plus: Vec<f64> = k.iter().enumerate().map(|(a, &x)| comp(a) + x).collect();
    let minus: Vec<f64> = k.iter().enumerate().map(|(a, &x)| comp(a) - x).collect();
    let wp = omega_at(mass_sq, &plus).powi(2);
    let wm = omega_at(mass_sq, &minus).powi(2);
    (0.5 * (wp + wm), wp - wm)
}

/// How a distribution Δ(x) is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaRule {
    /// `ε / (π (x² + ε²))`
    LorentzianDelta,
    /// `x / (x² + ε²)`
    PrincipalValue,
}

/// Width ε of the regularized resolvent `1/(x + iε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub epsilon: f64,
}

/// Default multiple of the level spacing used for ε.
pub const DEFAULT_EPSILON_FACTOR: f64 = 2.0;

impl Regularization {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("ε must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    /// `factor` times the mean spacing of the sorted grid frequencies.
    pub fn from_level_spacing(dispersion: &Dispersion, factor: f64) -> Result<Self> {
        Self::from_spacing_rule(dispersion, factor, SpacingRule::AllValues)
    }

    pub fn from_spacing_rule(dispersion: &Dispersion, factor: f64, rule: SpacingRule) -> Result<Self> {
        Self::new(factor * rule.spacing(dispersion.omegas()))
    }

    pub fn halved(self) -> Self {
        Self { epsilon: 0.5 * self.epsilon }
    }

    #[inline]
    pub fn delta(&self, x: f64) -> f64 {
        let e = self.epsilon;
        e / (PI * (x * x + e * e))
    }

    #[inline]
    pub fn principal_value(&self, x: f64) -> f64 {
        let e = self.epsilon;
        x / (x * x + e * e)
    }

    pub fn apply(&self, rule: DeltaRule, x: f64) -> f64 {
        match rule {
            DeltaRule::LorentzianDelta => self.delta(x),
            DeltaRule::PrincipalValue => self.principal_value(x),
        }
    }
}

/// Mean gap between consecutive distinct values (ties within 1e-9 relative
/// are merged).
pub fn mean_level_spacing(values: &[f64]) -> f64 {
    SpacingRule::AllValues.spacing(values)
}

/// Which frequency list the level spacing is measured on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingRule {
    /// Every grid point, degenerate values included.
    #[default]
    AllValues,
    /// Distinct levels only.
    DistinctLevels,
}

impl SpacingRule {
    pub fn spacing(self, values: &[f64]) -> f64 {
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let scale = sorted.last().map_or(1.0, |v| v.abs().max(1.0));
        if self == SpacingRule::DistinctLevels {
            sorted.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * scale);
        }
        if sorted.len() < 2 || sorted[sorted.len() - 1] == sorted[0] {
            return scale;
        }
        (sorted[sorted.len() - 1] - sorted[0]) / (sorted.len() - 1) as f64
    }
}
