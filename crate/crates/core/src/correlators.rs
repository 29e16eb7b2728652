//! Pair correlators `Q = <q q>`, `J = <q p>`, `P = <p p>` of the finite chain,
//! the `W_s` combination, reconstruction of `P`, and the heat and number
//! currents.
//!
//! The finite-N branch stores a correlator `G(x, y)` through its double
//! Fourier coefficients `G(a, b)` with `a = p + k`, `b = p − k`:
//!
//! ```text
//! G(x, y) = c Σ_{a,b} e^{i(a·x + b·y)} G(a, b)
//! ```
//!
//! Axis 0 is a ring of `2N` sites, so `a₀, b₀` live on the `π/N` lattice;
//! transverse components satisfy `b⊥ = −a⊥ = −k⊥` (translation invariance).
//! The normalization `c = h² h⊥^{d−1} / (2π)^d` maps a `p = 0` spike of
//! height `1/h` to a translation-invariant kernel.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{BrillouinGrid, Dispersion};

/// Momentum lattice of the finite-N branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowLattice {
    dim: usize,
    n: usize,
    transverse: usize,
    mass_sq: f64,
    /// `omega[i * nt + t]`: ω at axis index `i`, transverse index `t`.
    omega: Vec<f64>,
    neg_t: Vec<usize>,
    add_t: Vec<usize>,
}

impl SlowLattice {
    /// `n` is the chain length N; the axis-0 ring has `2N` sites.
    /// `transverse` is the number of sites per transverse axis (ignored for d = 1).
    pub fn new(dim: usize, n: usize, transverse: usize, mass_sq: f64) -> Result<Self> {
        if dim == 0 || n < 2 {
            return Err(Error::InvalidParameter(format!("need d >= 1 and N >= 2, got d={dim}, N={n}")));
        }
        if dim > 1 && (transverse < 2) {
            return Err(Error::InvalidParameter("transverse size must be >= 2".into()));
        }
        if !(mass_sq > 0.0) {
            return Err(Error::InvalidParameter(format!("m² must be positive, got {mass_sq}")));
        }
        let m = if dim == 1 { 1 } else { transverse };
        let nt = m.pow(dim as u32 - 1);
        if (2 * n) * (2 * n) * nt > 1 << 22 {
            return Err(Error::InvalidParameter("finite-N lattice too large".into()));
        }
        let axis = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|j| 1.0 - (j.min(len - j) as f64 * 2.0 * PI / len as f64).cos())
                .collect()
        };
        let ring = axis(2 * n);
        let perp = axis(m);
        let coords = |t: usize| -> Vec<usize> {
            let mut rest = t;
            (1..dim)
                .map(|_| {
                    let c = rest % m;
                    rest /= m;
                    c
                })
                .collect()
        };
        let flat = |c: &[usize]| c.iter().rev().fold(0, |acc, &x| acc * m + x % m);
        let mut omega = Vec::with_capacity(2 * n * nt);
        for i in 0..2 * n {
            for t in 0..nt {
                let s: f64 = coords(t).iter().map(|&c| perp[c]).sum();
                omega.push(2.0 * (ring[i] + s) + mass_sq);
            }
        }
        let neg_t = (0..nt)
            .map(|t| flat(&coords(t).iter().map(|&c| (m - c) % m).collect::<Vec<_>>()))
            .collect();
        let mut add_t = vec![0; nt * nt];
        for t in 0..nt {
            for u in 0..nt {
                let c: Vec<usize> = coords(t).iter().zip(coords(u)).map(|(a, b)| a + b).collect();
                add_t[t * nt + u] = flat(&c);
            }
        }
        Ok(Self { dim, n, transverse: m, mass_sq, omega, neg_t, add_t })
    }

    /// Slow lattice matching a fast grid built with a slow size.
    pub fn from_grid(grid: &BrillouinGrid, dispersion: &Dispersion) -> Result<Self> {
        let n = grid
            .slow_size()
            .ok_or_else(|| Error::InvalidParameter("grid has no slow lattice size".into()))?;
        Self::new(grid.dim(), n, grid.points_per_axis(), dispersion.mass_sq())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chain_length(&self) -> usize {
        self.n
    }

    pub fn mass_sq(&self) -> f64 {
        self.mass_sq
    }

    /// Ring size `2N` along axis 0.
    pub fn ring(&self) -> usize {
        2 * self.n
    }

    pub fn transverse_size(&self) -> usize {
        self.transverse
    }

    /// Number of transverse momenta `M^{d−1}`.
    pub fn transverse_len(&self) -> usize {
        self.neg_t.len()
    }

    /// Axis-0 spacing `π/N`.
    pub fn spacing(&self) -> f64 {
        PI / self.n as f64
    }

    /// Transverse spacing `2π/M`.
    pub fn transverse_spacing(&self) -> f64 {
        2.0 * PI / self.transverse as f64
    }

    /// Number of `(a, b)` coefficients.
    pub fn len(&self) -> usize {
        self.ring() * self.ring() * self.transverse_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, ia: usize, ib: usize, t: usize) -> usize {
        (ia * self.ring() + ib) * self.transverse_len() + t
    }

    /// Inverse of [`SlowLattice::index`].
    #[inline]
    pub fn split(&self, idx: usize) -> (usize, usize, usize) {
        let nt = self.transverse_len();
        let t = idx % nt;
        let rest = idx / nt;
        (rest / self.ring(), rest % self.ring(), t)
    }

    #[inline]
    pub fn neg_transverse(&self, t: usize) -> usize {
        self.neg_t[t]
    }

    #[inline]
    pub fn add_transverse(&self, t: usize, u: usize) -> usize {
        self.add_t[t * self.transverse_len() + u]
    }

    #[inline]
    pub fn neg_axis(&self, i: usize) -> usize {
        (self.ring() - i) % self.ring()
    }

    /// ω of the momentum with axis index `i` and transverse index `t`.
    #[inline]
    pub fn omega(&self, i: usize, t: usize) -> f64 {
        self.omega[i * self.transverse_len() + t]
    }

    /// Index of `(b, a)` with transverse parts exchanged: the coefficient
    /// of the transposed matrix, i.e. `(p, k) → (p, −k)`.
    #[inline]
    pub fn swapped(&self, idx: usize) -> usize {
        let (ia, ib, t) = self.split(idx);
        self.index(ib, ia, self.neg_t[t])
    }

    /// Index of `(−a, −b)`.
    #[inline]
    pub fn negated(&self, idx: usize) -> usize {
        let (ia, ib, t) = self.split(idx);
        self.index(self.neg_axis(ia), self.neg_axis(ib), self.neg_t[t])
    }

    /// `½(ω(a)² + ω(b)²)` at coefficient `idx`.
    pub fn omega_mean_sq(&self, idx: usize) -> f64 {
        let (ia, ib, t) = self.split(idx);
        0.5 * (self.omega(ia, t).powi(2) + self.omega(ib, self.neg_t[t]).powi(2))
    }

    /// Riemann measure of one `(p, k)` pair, `½ h² h⊥^{d−1}`.
    pub fn pair_measure(&self) -> f64 {
        0.5 * self.spacing().powi(2) * self.transverse_spacing().powi(self.dim as i32 - 1)
    }

    fn position_scale(&self) -> f64 {
        2.0 * self.pair_measure() / (2.0 * PI).powi(self.dim as i32)
    }
}

/// `Q`, `J`, `P` in the `(a, b)` representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCorrelators {
    pub lattice: SlowLattice,
    pub q: Vec<Complex64>,
    pub j: Vec<Complex64>,
    pub p: Vec<Complex64>,
}

impl PairCorrelators {
    pub fn zeros(lattice: SlowLattice) -> Self {
        let n = lattice.len();
        let z = vec![Complex64::new(0.0, 0.0); n];
        Self { lattice, q: z.clone(), j: z.clone(), p: z }
    }

    /// Gibbs state of the harmonic ring: `Q = T ω⁻²`, `J = 0`, `P = T`.
    pub fn equilibrium(lattice: SlowLattice, temperature: f64) -> Self {
        let mut c = Self::zeros(lattice);
        let lat = &c.lattice;
        let h = lat.spacing();
        for ia in 0..lat.ring() {
            for t in 0..lat.transverse_len() {
                let idx = lat.index(ia, lat.neg_axis(ia), t);
                c.q[idx] = Complex64::new(temperature / (lat.omega(ia, t).powi(2) * h), 0.0);
                c.p[idx] = Complex64::new(temperature / h, 0.0);
            }
        }
        c
    }

    /// `W_s` at coefficient `idx`.
    #[inline]
    pub fn w(&self, s: i8, idx: usize) -> Complex64 {
        let (ia, _, t) = self.lattice.split(idx);
        w_combination(self.q[idx], self.j[idx], s, self.lattice.omega(ia, t))
    }

    /// Checks reality of all three matrices, symmetry of `Q` and `P` and
    /// antisymmetry of `J`, to relative tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let lat = &self.lattice;
        for (name, g, sign) in [("Q", &self.q, 1.0), ("J", &self.j, -1.0), ("P", &self.p, 1.0)] {
            if g.len() != lat.len() {
                return Err(Error::ShapeMismatch(format!("{name} has {} entries, expected {}", g.len(), lat.len())));
            }
            let scale = g.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
            for idx in 0..g.len() {
                if (g[idx] - g[lat.negated(idx)].conj()).norm() > tol * scale {
                    return Err(Error::InvariantViolation(format!("{name} is not conjugate-symmetric")));
                }
                if (g[idx] - sign * g[lat.swapped(idx)]).norm() > tol * scale {
                    let kind = if sign > 0.0 { "symmetric" } else { "antisymmetric" };
                    return Err(Error::InvariantViolation(format!("{name} is not {kind}")));
                }
            }
        }
        Ok(())
    }
}

/// `W_s = Q + i s ω⁻¹ J`, with `ω = ω(p + k)`.
#[inline]
pub fn w_combination(q: Complex64, j: Complex64, s: i8, omega: f64) -> Complex64 {
    q + Complex64::new(0.0, f64::from(s) / omega) * j
}

/// Fourier coefficients of the commutator `JΓ − ΓJ`, where `Γ` is diagonal
/// with entry `gamma[x₀]` on every site of axis-0 slice `x₀`.
pub fn friction_commutator(lattice: &SlowLattice, j: &[Complex64], gamma: &[f64]) -> Result<Vec<Complex64>> {
    let n2 = lattice.ring();
    if gamma.len() != n2 || j.len() != lattice.len() {
        return Err(Error::ShapeMismatch(format!(
            "friction profile needs {n2} sites and J {} entries",
            lattice.len()
        )));
    }
    let hat: Vec<Complex64> = (0..n2)
        .map(|c| {
            gamma
                .iter()
                .enumerate()
                .map(|(x, &g)| g * Complex64::from_polar(1.0, -2.0 * PI * (c * x) as f64 / n2 as f64))
                .sum::<Complex64>()
                / n2 as f64
        })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); lattice.len()];
    for ia in 0..n2 {
        for ib in 0..n2 {
            for t in 0..lattice.transverse_len() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, g) in hat.iter().enumerate() {
                    let shift_b = (ib + n2 - c) % n2;
                    let shift_a = (ia + n2 - c) % n2;
                    acc += g * (j[lattice.index(ia, shift_b, t)] - j[lattice.index(shift_a, ib, t)]);
                }
                out[lattice.index(ia, ib, t)] = acc;
            }
        }
    }
    Ok(out)
}

/// `P = ω(p,k)² Q + ½((JΓ − ΓJ) − 𝒩₁₂(p,k) − 𝒩₁₂(p,−k))`.
///
/// `n12` holds the (1,2) component of the closure term on the same
/// coefficients as `corr`; `friction` is the commutator from
/// [`friction_commutator`], or `None` when the baths are off.
pub fn reconstruct_p(corr: &PairCorrelators, n12: &[Complex64], friction: Option<&[Complex64]>) -> Result<Vec<Complex64>> {
    let lat = &corr.lattice;
    if n12.len() != lat.len() || friction.is_some_and(|f| f.len() != lat.len()) {
        return Err(Error::ShapeMismatch("closure or friction array does not match the lattice".into()));
    }
    Ok((0..lat.len())
        .map(|idx| {
            let comm = friction.map_or(Complex64::new(0.0, 0.0), |f| f[idx]);
            lat.omega_mean_sq(idx) * corr.q[idx] + 0.5 * (comm - n12[idx] - n12[lat.swapped(idx)])
        })
        .collect())
}

/// Current kind: `α = 0` counts phonons, `α = 1` carries energy.
fn check_alpha(alpha: u32) -> Result<()> {
    if alpha > 1 {
        return Err(Error::InvalidParameter(format!("current index α must be 0 or 1, got {alpha}")));
    }
    Ok(())
}

/// Finite-N currents `𝒥^α(p) = −i ∫ dk e^{−ip/2} ω(p/2,k)^α sin k₀ J(p/2,k)`
/// for every slow momentum `p = σ π/N`, `σ` taken in `(−N, N]`.
pub fn finite_currents(corr: &PairCorrelators, alpha: u32) -> Result<Vec<Complex64>> {
    check_alpha(alpha)?;
    let lat = &corr.lattice;
    let (n2, h) = (lat.ring(), lat.spacing());
    let weight = h * lat.transverse_spacing().powi(lat.dim() as i32 - 1);
    Ok((0..n2)
        .map(|sigma| {
            let centered = if sigma > n2 / 2 { sigma as f64 - n2 as f64 } else { sigma as f64 };
            let p = centered * h;
            let phase = Complex64::from_polar(1.0, -0.5 * p);
            let mut acc = Complex64::new(0.0, 0.0);
            for ib in 0..n2 {
                let ia = (sigma + n2 - ib) % n2;
                let k0 = 0.5 * p - ib as f64 * h;
                for t in 0..lat.transverse_len() {
                    let idx = lat.index(ia, ib, t);
                    let freq = lat.omega_mean_sq(idx).sqrt().powi(alpha as i32);
                    acc += freq * k0.sin() * corr.j[idx];
                }
            }
            Complex64::new(0.0, -1.0) * phase * acc * weight
        })
        .collect())
}

/// Kinetic current `∫ dk v₀(k) ω(k)^α h(k)`.
pub fn kinetic_current(grid: &BrillouinGrid, dispersion: &Dispersion, h: &[f64], alpha: u32) -> Result<f64> {
    check_alpha(alpha)?;
    if h.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!("deviation has {} entries, grid {}", h.len(), grid.len())));
    }
    Ok(h.iter()
        .enumerate()
        .map(|(k, &x)| dispersion.velocity(k, 0) * dispersion.omega(k).powi(alpha as i32) * x)
        .sum::<f64>()
        * grid.weight())
}

/// Kinetic field `V(x, k)` on a grid of slab positions.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    pub x: Vec<f64>,
    /// `values[i * n_k + k]`
    pub values: Vec<f64>,
    pub coupling: f64,
}

impl KineticState {
    pub fn new(x: Vec<f64>, values: Vec<f64>, coupling: f64) -> Result<Self> {
        if x.is_empty() || !values.len().is_multiple_of(x.len()) {
            return Err(Error::ShapeMismatch("field length is not a multiple of the slab grid".into()));
        }
        Ok(Self { x, values, coupling })
    }

    pub fn modes(&self) -> usize {
        self.values.len() / self.x.len()
    }

    pub fn at(&self, i: usize) -> &[f64] {
        let n = self.modes();
        &self.values[i * n..(i + 1) * n]
    }
}

/// Real position-space matrices, stored as `G[(x₀ · 2N + y₀) · T + r]`
/// with `r` the transverse offset `x⊥ − y⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionCorrelators {
    pub lattice: SlowLattice,
    pub q: Vec<f64>,
    pub j: Vec<f64>,
    pub p: Vec<f64>,
}

fn transverse_phase(lat: &SlowLattice, t: usize, r: usize) -> f64 {
    let m = lat.transverse_size();
    let (mut a, mut b, mut dot) = (t, r, 0usize);
    for _ in 1..lat.dim() {
        dot += (a % m) * (b % m);
        a /= m;
        b /= m;
    }
    2.0 * PI * (dot % m) as f64 / m as f64
}

/// Separable transform of one coefficient array; `sign = +1` goes to
/// position space (without the scale factor).
fn transform(lat: &SlowLattice, g: &[Complex64], sign: f64) -> Vec<Complex64> {
    let (n2, nt) = (lat.ring(), lat.transverse_len());
    let ring: Vec<Complex64> =
        (0..n2).map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / n2 as f64)).collect();
    let perp: Vec<Complex64> = (0..nt * nt)
        .map(|i| Complex64::from_polar(1.0, sign * transverse_phase(lat, i / nt, i % nt)))
        .collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut stage = vec![zero; g.len()];
    for u in 0..n2 {
        for ib in 0..n2 {
            for t in 0..nt {
                stage[lat.index(u, ib, t)] =
                    (0..n2).map(|v| ring[(u * v) % n2] * g[lat.index(v, ib, t)]).sum();
            }
        }
    }
    let mut stage2 = vec![zero; g.len()];
    for x in 0..n2 {
        for u in 0..n2 {
            for t in 0..nt {
                stage2[lat.index(x, u, t)] =
                    (0..n2).map(|v| ring[(u * v) % n2] * stage[lat.index(x, v, t)]).sum();
            }
        }
    }
    if nt == 1 {
        return stage2;
    }
    let mut out = vec![zero; g.len()];
    for x in 0..n2 {
        for y in 0..n2 {
            for r in 0..nt {
                out[lat.index(x, y, r)] = (0..nt).map(|t| perp[t * nt + r] * stage2[lat.index(x, y, t)]).sum();
            }
        }
    }
    out
}

/// Position-space values of one coefficient array, complex in general.
pub fn coefficients_to_position(lat: &SlowLattice, g: &[Complex64]) -> Vec<Complex64> {
    let c = lat.position_scale();
    transform(lat, g, 1.0).into_iter().map(|z| z * c).collect()
}

/// Inverse of [`coefficients_to_position`].
pub fn position_to_coefficients(lat: &SlowLattice, g: &[Complex64]) -> Vec<Complex64> {
    let c = 1.0 / (lat.position_scale() * lat.len() as f64);
    transform(lat, g, -1.0).into_iter().map(|z| z * c).collect()
}

fn real_part(name: &str, g: Vec<Complex64>, tol: f64) -> Result<Vec<f64>> {
    let scale = g.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    if g.iter().any(|z| z.im.abs() > tol * scale) {
        return Err(Error::InvariantViolation(format!("{name} is not real in position space")));
    }
    Ok(g.into_iter().map(|z| z.re).collect())
}

/// Real position-space matrices `Q(x,y)`, `J(x,y)`, `P(x,y)`.
pub fn to_position_space(corr: &PairCorrelators) -> Result<PositionCorrelators> {
    let lat = &corr.lattice;
    let tol = 1e-9;
    Ok(PositionCorrelators {
        lattice: lat.clone(),
        q: real_part("Q", coefficients_to_position(lat, &corr.q), tol)?,
        j: real_part("J", coefficients_to_position(lat, &corr.j), tol)?,
        p: real_part("P", coefficients_to_position(lat, &corr.p), tol)?,
    })
}

pub fn from_position_space(pos: &PositionCorrelators) -> PairCorrelators {
    let lat = &pos.lattice;
    let lift = |g: &[f64]| -> Vec<Complex64> {
        let z: Vec<Complex64> = g.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        position_to_coefficients(lat, &z)
    };
    PairCorrelators { lattice: lat.clone(), q: lift(&pos.q), j: lift(&pos.j), p: lift(&pos.p) }
}
