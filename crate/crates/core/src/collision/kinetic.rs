use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BrillouinGrid, Dispersion, Regularization};
use crate::linear_ops::ZeroModeBasis;
use crate::par::map_indices;

/// Overall constant `9π²/2` of the kinetic collision integral.
pub const KINETIC_PREFACTOR: f64 = 4.5 * PI * PI;

/// Which form of the cubic bracket to use.
///
/// With `k + k₁ → k₂ + k₃`, the `Corrected` bracket is
/// `V₁V₂V₃ − V(V₁V₂ + V₁V₃ − V₂V₃)`, which vanishes on the energy shell for
/// every `V = T/(ω − A)`. `Verbatim` replaces the last product by `V₃V₃`
/// and does not have that family of stationary points; it is kept only to
/// document the difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BracketVariant {
    #[default]
    Corrected,
    Verbatim,
}

#[derive(Debug, Clone, Copy)]
pub struct CollisionConfig {
    pub regularization: Regularization,
    pub bracket: BracketVariant,
    pub prefactor: f64,
    /// Remove the residual number/energy production left by the finite
    /// Lorentzian width (see [`KineticCollision`]).
    pub conservative: bool,
}

impl CollisionConfig {
    pub fn new(regularization: Regularization) -> Self {
        Self {
            regularization,
            bracket: BracketVariant::Corrected,
            prefactor: KINETIC_PREFACTOR,
            conservative: true,
        }
    }
}

/// Discretized four-phonon collision operator `N(V)` on the fast grid.
///
/// For each output point `k` the sum runs over all `(k₁, k₂)` with
/// `k₃ = k + k₁ − k₂` resolved on the grid, weighted by
/// `w² (ω ω₁ ω₂ ω₃)⁻¹ δ_ε(ω + ω₁ − ω₂ − ω₃)`. The summand is symmetric in
/// `k₂ ↔ k₃`, which makes the number moment vanish identically. The
/// Lorentzian width leaves an `O(ε)` energy production; in conservative
/// mode both moments are removed by the ω³-orthogonal projection onto the
/// complement of `{ω⁻², ω⁻³}`, so `Σ N w = Σ ω N w = 0` for every `V`.
#[derive(Debug, Clone)]
pub struct KineticCollision {
    grid: Arc<BrillouinGrid>,
    dispersion: Arc<Dispersion>,
    config: CollisionConfig,
    inv_omega: Vec<f64>,
    modes: ZeroModeBasis,
}

/// Partial derivatives of the bracket with respect to `(V, V₁, V₂, V₃)`.
struct BracketTerms {
    grad: [f64; 4],
}

#[inline(always)]
fn bracket(variant: BracketVariant, v: f64, v1: f64, v2: f64, v3: f64) -> f64 {
    match variant {
        BracketVariant::Corrected => v2 * v3 * (v1 + v) - v * v1 * (v2 + v3),
        // Averaged over k₂ ↔ k₃.
        BracketVariant::Verbatim => {
            v1 * v2 * v3 - v * v1 * (v2 + v3) + 0.5 * v * (v2 * v2 + v3 * v3)
        }
    }
}

#[inline(always)]
fn bracket_terms(variant: BracketVariant, v: f64, v1: f64, v2: f64, v3: f64) -> BracketTerms {
    match variant {
        BracketVariant::Corrected => BracketTerms {
            grad: [
                v2 * v3 - v1 * (v2 + v3),
                v2 * v3 - v * (v2 + v3),
                v3 * (v1 + v) - v * v1,
                v2 * (v1 + v) - v * v1,
            ],
        },
        BracketVariant::Verbatim => BracketTerms {
            grad: [
                -v1 * (v2 + v3) + 0.5 * (v2 * v2 + v3 * v3),
                v2 * v3 - v * (v2 + v3),
                v1 * v3 - v * v1 + v * v2,
                v1 * v2 - v * v1 + v * v3,
            ],
        },
    }
}

impl KineticCollision {
    pub fn new(grid: Arc<BrillouinGrid>, dispersion: Arc<Dispersion>, config: CollisionConfig) -> Result<Self> {
        if dispersion.omegas().len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "dispersion has {} points, grid has {}",
                dispersion.omegas().len(),
                grid.len()
            )));
        }
        if !(config.prefactor > 0.0) {
            return Err(Error::InvalidParameter("collision prefactor must be positive".into()));
        }
        let inv_omega = dispersion.omegas().iter().map(|w| 1.0 / w).collect();
        let modes = ZeroModeBasis::new(&grid, &dispersion)?;
        Ok(Self { grid, dispersion, config, inv_omega, modes })
    }

    pub fn grid(&self) -> &Arc<BrillouinGrid> {
        &self.grid
    }

    pub fn dispersion(&self) -> &Arc<Dispersion> {
        &self.dispersion
    }

    pub fn config(&self) -> &CollisionConfig {
        &self.config
    }

    pub fn zero_modes(&self) -> &ZeroModeBasis {
        &self.modes
    }

    /// Same operator with a different regularization width.
    pub fn with_regularization(&self, regularization: Regularization) -> Self {
        let mut out = self.clone();
        out.config.regularization = regularization;
        out
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid has {}",
                v.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Common factor of every summand for output point `k` and partner `k₁`.
    #[inline(always)]
    fn outer_weight(&self, k: usize, k1: usize) -> f64 {
        let w = self.grid.weight();
        self.config.prefactor * w * w * self.inv_omega[k] * self.inv_omega[k1]
    }

    /// `Σ_{k₁,k₂} weight · b(k₁, k₂, k₃)` for output point `k`.
    #[inline(always)]
    fn row_sum<B: Fn(usize, usize, usize) -> f64>(&self, k: usize, b: B) -> f64 {
        let n = self.grid.len();
        let omega = self.dispersion.omegas();
        let reg = self.config.regularization;
        let wk = omega[k];
        let mut total = 0.0;
        for k1 in 0..n {
            let s = self.grid.add(k, k1);
            let base = self.outer_weight(k, k1);
            let e_in = wk + omega[k1];
            let mut acc = 0.0;
            // k₂ = −j, so k₃ = k + k₁ + j.
            for j in 0..n {
                let k2 = self.grid.neg(j);
                let k3 = self.grid.add(s, j);
                let de = e_in - omega[k2] - omega[k3];
                let kern = self.inv_omega[k2] * self.inv_omega[k3] * reg.delta(de);
                acc += kern * b(k1, k2, k3);
            }
            total += base * acc;
        }
        total
    }

    /// The collision sum before the conservative projection.
    pub fn evaluate_raw(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let variant = self.config.bracket;
        Ok(map_indices(self.grid.len(), |k| {
            self.row_sum(k, |k1, k2, k3| bracket(variant, v[k], v[k1], v[k2], v[k3]))
        }))
    }

    /// `N(V₀ + δ) − N(V₀)`, with the difference taken inside each summand.
    pub fn evaluate_increment(&self, v0: &[f64], dv: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v0)?;
        self.check_len(dv)?;
        let variant = self.config.bracket;
        let v: Vec<f64> = v0.iter().zip(dv).map(|(a, b)| a + b).collect();
        let mut out = map_indices(self.grid.len(), |k| {
            self.row_sum(k, |k1, k2, k3| {
                bracket(variant, v[k], v[k1], v[k2], v[k3]) - bracket(variant, v0[k], v0[k1], v0[k2], v0[k3])
            })
        });
        if self.config.conservative {
            self.modes.project_in_place(&mut out);
        }
        Ok(out)
    }

    /// `N(V)` on the grid.
    pub fn evaluate(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.evaluate_raw(v)?;
        if self.config.conservative {
            self.modes.project_in_place(&mut out);
        }
        Ok(out)
    }

    /// Jacobian `∂N(k)/∂V(j)` at `v`, assembled by differentiating each summand.
    pub fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        self.check_len(v)?;
        let n = self.grid.len();
        let omega = self.dispersion.omegas();
        let reg = self.config.regularization;
        let variant = self.config.bracket;
        let rows: Vec<Vec<f64>> = map_indices(n, |k| {
            let mut row = vec![0.0; n];
            let (vk, wk) = (v[k], omega[k]);
            let mut diag = 0.0;
            for k1 in 0..n {
                let s = self.grid.add(k, k1);
                let base = self.outer_weight(k, k1);
                let e_in = wk + omega[k1];
                let v1 = v[k1];
                let mut d1 = 0.0;
                for j in 0..n {
                    let k2 = self.grid.neg(j);
                    let k3 = self.grid.add(s, j);
                    let de = e_in - omega[k2] - omega[k3];
                    let kern = base * self.inv_omega[k2] * self.inv_omega[k3] * reg.delta(de);
                    let t = bracket_terms(variant, vk, v1, v[k2], v[k3]);
                    diag += kern * t.grad[0];
                    d1 += kern * t.grad[1];
                    row[k2] += kern * t.grad[2];
                    row[k3] += kern * t.grad[3];
                }
                row[k1] += d1;
            }
            row[k] += diag;
            row
        });
        let mut jac = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
        if self.config.conservative {
            for mut col in jac.column_iter_mut() {
                let mut c: Vec<f64> = col.iter().copied().collect();
                self.modes.project_in_place(&mut c);
                col.copy_from_slice(&c);
            }
        }
        Ok(jac)
    }

    /// Local-equilibrium field `V_{T,A}(k) = T/(ω(k) − A)`.
    pub fn equilibrium(&self, temperature: f64, chem: f64) -> Result<Vec<f64>> {
        equilibrium_field(&self.dispersion, temperature, chem)
    }
}

/// `T/(ω(k) − A)` over the grid; requires `T > 0` and `A < m²`.
pub fn equilibrium_field(dispersion: &Dispersion, temperature: f64, chem: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
    }
    if !(chem < dispersion.mass_sq()) {
        return Err(Error::InvalidParameter(format!(
            "chemical potential A = {chem} must stay below m² = {}",
            dispersion.mass_sq()
        )));
    }
    Ok(dispersion.omegas().iter().map(|w| temperature / (w - chem)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn operator(dim: usize, m: usize, variant: BracketVariant) -> KineticCollision {
        let grid = Arc::new(build_grid(dim, m, None).unwrap());
        let disp = Arc::new(Dispersion::new(&grid, 1.0).unwrap());
        let reg = Regularization::from_level_spacing(&disp, 2.0).unwrap();
        let mut cfg = CollisionConfig::new(reg);
        cfg.bracket = variant;
        KineticCollision::new(grid, disp, cfg).unwrap()
    }

    fn random_field(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.2..2.0)).collect()
    }

    #[test]
    fn constant_field_is_annihilated() {
        let op = operator(2, 6, BracketVariant::Corrected);
        let out = op.evaluate(&vec![0.7; op.grid().len()]).unwrap();
        assert!(out.iter().all(|x| x.abs() <= 1e-12));
    }

    #[test]
    fn moments_vanish_for_random_fields() {
        let op = operator(2, 6, BracketVariant::Corrected);
        let w = op.grid().weight();
        let omega = op.dispersion().omegas();
        for seed in 0..3 {
            let v = random_field(op.grid().len(), seed);
            let raw = op.evaluate_raw(&v).unwrap();
            let scale: f64 = raw.iter().map(|x| x.abs() * w).sum();
            let number_raw: f64 = raw.iter().map(|x| x * w).sum();
            assert!(number_raw.abs() <= 1e-12 * scale, "raw number production {number_raw}");
            let out = op.evaluate(&v).unwrap();
            let number: f64 = out.iter().map(|x| x * w).sum();
            let energy: f64 = out.iter().zip(omega).map(|(x, o)| x * o * w).sum();
            assert!(number.abs() <= 1e-12 * scale);
            assert!(energy.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn cubic_homogeneity() {
        let op = operator(2, 6, BracketVariant::Corrected);
        let v = random_field(op.grid().len(), 7);
        let scaled: Vec<f64> = v.iter().map(|x| 1.7 * x).collect();
        let a = op.evaluate(&v).unwrap();
        let b = op.evaluate(&scaled).unwrap();
        let norm = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 1.7f64.powi(3) * x).abs() <= 1e-12 * norm * 5.0);
        }
    }

    #[test]
    fn verbatim_bracket_does_not_annihilate_the_family() {
        // The corrected residual is a pure smearing effect and halves with ε.
        let sup = |x: Vec<f64>| x.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let mut ratios = Vec::new();
        for variant in [BracketVariant::Corrected, BracketVariant::Verbatim] {
            let op = operator(2, 8, variant);
            let fine = op.with_regularization(op.config().regularization.halved());
            let v = op.equilibrium(1.0, 0.2).unwrap();
            ratios.push(sup(fine.evaluate(&v).unwrap()) / sup(op.evaluate(&v).unwrap()));
        }
        assert!(ratios[0] < 0.6, "corrected {ratios:?}");
        assert!(ratios[1] > 0.8, "verbatim {ratios:?}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for variant in [BracketVariant::Corrected, BracketVariant::Verbatim] {
            let op = operator(1, 16, variant);
            let n = op.grid().len();
            let v = random_field(n, 3);
            let dir = random_field(n, 4);
            let jac = op.jacobian(&v).unwrap();
            let h = 1e-4;
            let plus: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
            let np = op.evaluate(&plus).unwrap();
            let nm = op.evaluate(&minus).unwrap();
            let lin = &jac * nalgebra::DVector::from_column_slice(&dir);
            let scale = lin.amax();
            for i in 0..n {
                let fd = (np[i] - nm[i]) / (2.0 * h);
                assert!((fd - lin[i]).abs() <= 1e-7 * scale, "{variant:?} row {i}: {fd} vs {}", lin[i]);
            }
        }
    }

    #[test]
    fn increment_matches_difference_and_vanishes_at_zero() {
        let op = operator(2, 6, BracketVariant::Corrected);
        let n = op.grid().len();
        let v0 = op.equilibrium(1.3, 0.1).unwrap();
        let dv: Vec<f64> = random_field(n, 9).iter().map(|x| 0.1 * x).collect();
        let v1: Vec<f64> = v0.iter().zip(&dv).map(|(a, b)| a + b).collect();
        let inc = op.evaluate_increment(&v0, &dv).unwrap();
        let a = op.evaluate(&v1).unwrap();
        let b = op.evaluate(&v0).unwrap();
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..n {
            assert!((inc[i] - (a[i] - b[i])).abs() <= 1e-11 * scale);
        }
        let zero = op.evaluate_increment(&v0, &vec![0.0; n]).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_shape_and_domain_errors() {
        let op = operator(1, 8, BracketVariant::Corrected);
        assert!(op.evaluate(&[1.0; 3]).is_err());
        assert!(op.equilibrium(1.0, 1.0).is_err());
        assert!(op.equilibrium(-1.0, 0.0).is_err());
    }
}
