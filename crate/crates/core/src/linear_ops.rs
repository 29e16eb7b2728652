//! Linearized collision operator at local equilibrium, its zero modes and
//! the solve on the zero-mode complement.
//!
//! The operator acts on perturbations of `Q = V/ω`: `L = P · ∂N/∂V · diag(ω)`.
//! At a base state `V = T/ω` the right null vectors are `ω⁻²` (temperature)
//! and `ω⁻³` (chemical potential); conservation of number and energy makes
//! `1` and `ω` left null vectors. The inner product
//! `⟨f, g⟩ = Σ f g ω³ w` pairs the two sets: orthogonality to `ω⁻³` is a
//! vanishing number moment and orthogonality to `ω⁻²` a vanishing energy
//! moment.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::collision::KineticCollision;
use crate::error::{Error, Result};
use crate::lattice::{BrillouinGrid, Dispersion};

/// `⟨f, g⟩ = Σ_k f(k) g(k) ω(k)³ w`.
pub fn weighted_inner(dispersion: &Dispersion, weight: f64, f: &[f64], g: &[f64]) -> f64 {
    f.iter()
        .zip(g)
        .zip(dispersion.omegas())
        .map(|((a, b), w)| a * b * w * w * w)
        .sum::<f64>()
        * weight
}

/// The zero-mode pair `{ω⁻², ω⁻³}` and the ω³-orthogonal projector onto
/// its complement.
#[derive(Debug, Clone)]
pub struct ZeroModeBasis {
    omega: Vec<f64>,
    weight: f64,
    modes: [Vec<f64>; 2],
    gram_inv: Matrix2<f64>,
}

impl ZeroModeBasis {
    pub fn new(grid: &BrillouinGrid, dispersion: &Dispersion) -> Result<Self> {
        let omega = dispersion.omegas().to_vec();
        let weight = grid.weight();
        let modes = [
            omega.iter().map(|w| w.powi(-2)).collect::<Vec<_>>(),
            omega.iter().map(|w| w.powi(-3)).collect::<Vec<_>>(),
        ];
        let s = |p: i32| omega.iter().map(|w| w.powi(p)).sum::<f64>() * weight;
        let gram = Matrix2::new(s(-1), s(-2), s(-2), s(-3));
        // The two modes are parallel only when ω is constant on the grid.
        let det = gram.determinant();
        if !(det.abs() > 1e-12 * gram[(0, 0)] * gram[(1, 1)]) {
            return Err(Error::Singular("zero-mode Gram matrix is degenerate on this grid".into()));
        }
        let gram_inv = gram.try_inverse().ok_or_else(|| Error::Singular("zero-mode Gram matrix".into()))?;
        Ok(Self { omega, weight, modes, gram_inv })
    }

    /// `[ω⁻², ω⁻³]`
    pub fn modes(&self) -> &[Vec<f64>; 2] {
        &self.modes
    }

    /// `(⟨f, ω⁻²⟩, ⟨f, ω⁻³⟩) = (Σ ω f w, Σ f w)`.
    pub fn moments(&self, f: &[f64]) -> [f64; 2] {
        let mut e = 0.0;
        let mut n = 0.0;
        for (x, w) in f.iter().zip(&self.omega) {
            e += x * w;
            n += x;
        }
        [e * self.weight, n * self.weight]
    }

    pub fn project_in_place(&self, f: &mut [f64]) {
        let m = self.moments(f);
        let c = self.gram_inv * nalgebra::Vector2::new(m[0], m[1]);
        for ((x, z0), z1) in f.iter_mut().zip(&self.modes[0]).zip(&self.modes[1]) {
            *x -= c[0] * z0 + c[1] * z1;
        }
    }

    /// Component of `f` orthogonal to both zero modes.
    pub fn project_complement(&self, f: &[f64]) -> Vec<f64> {
        let mut out = f.to_vec();
        self.project_in_place(&mut out);
        out
    }
}

/// Dense linearized collision operator at a local-equilibrium base state.
#[derive(Debug, Clone)]
pub struct CollisionOperatorMatrix {
    pub matrix: DMatrix<f64>,
    /// Slow momentum; the kinetic branch only uses `p = 0`.
    pub slow_momentum: f64,
    pub temperature: f64,
    pub chem: f64,
    pub epsilon: f64,
    /// Exponent of ω in the inner-product weight.
    pub weight_exponent: i32,
}

/// Linearize `N` at `V = T/(ω − A)`, in the `Q = V/ω` parametrization.
pub fn linearize(op: &KineticCollision, temperature: f64, chem: f64) -> Result<CollisionOperatorMatrix> {
    let base = op.equilibrium(temperature, chem)?;
    let mut matrix = op.jacobian(&base)?;
    for (j, mut col) in matrix.column_iter_mut().enumerate() {
        col *= op.dispersion().omega(j);
    }
    Ok(CollisionOperatorMatrix {
        matrix,
        slow_momentum: 0.0,
        temperature,
        chem,
        epsilon: op.config().regularization.epsilon,
        weight_exponent: 3,
    })
}

/// Parity blocks of an operator commuting (approximately) with `k → −k`.
#[derive(Debug, Clone)]
pub struct ParityBlocks {
    /// odd → odd (current-carrying sector)
    pub odd: DMatrix<f64>,
    /// even → even
    pub even: DMatrix<f64>,
    /// even → odd
    pub odd_even: DMatrix<f64>,
    /// odd → even
    pub even_odd: DMatrix<f64>,
}

/// Split `matrix` with the projectors `(I ± R)/2`, `R f(k) = f(−k)`.
pub fn parity_blocks(grid: &BrillouinGrid, matrix: &DMatrix<f64>) -> ParityBlocks {
    let n = grid.len();
    let m = matrix;
    // (I + aR) M (I + bR) = M + b MR + a RM + ab RMR, with R a permutation.
    let block = |a: f64, b: f64| {
        DMatrix::from_fn(n, n, |r, c| {
            let (nr, nc) = (grid.neg(r), grid.neg(c));
            0.25 * (m[(r, c)] + b * m[(r, nc)] + a * m[(nr, c)] + a * b * m[(nr, nc)])
        })
    };
    ParityBlocks {
        odd: block(-1.0, -1.0),
        even: block(1.0, 1.0),
        odd_even: block(-1.0, 1.0),
        even_odd: block(1.0, -1.0),
    }
}

/// Null-space diagnostics of a linearized operator.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NullDefects {
    /// `‖L ω⁻²‖∞ / (‖L‖∞ ‖ω⁻²‖∞)`
    pub right_temperature: f64,
    /// `‖L ω⁻³‖∞ / (‖L‖∞ ‖ω⁻³‖∞)`
    pub right_chem: f64,
    /// `‖1ᵀ W L‖∞ / (w ‖L‖∞)`, number conservation
    pub left_number: f64,
    /// `‖ωᵀ W L‖∞ / (w max ω ‖L‖∞)`, energy conservation
    pub left_energy: f64,
    /// `‖L₁₂‖ / ‖L‖` and `‖L₂₁‖ / ‖L‖` (Frobenius)
    pub parity_offdiag: f64,
    /// Relative antisymmetric part of `S ∂N/∂V` with `S = (ω−A)²/T²`;
    /// reported, not asserted.
    pub symmetry_defect: f64,
}

pub fn null_defects(op: &KineticCollision, lin: &CollisionOperatorMatrix) -> NullDefects {
    let grid = op.grid();
    let disp = op.dispersion();
    let l = &lin.matrix;
    let n = grid.len();
    let norm_inf = (0..n).map(|r| l.row(r).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let sup = |v: &DVector<f64>| v.amax();
    let mode_defect = |p: i32| {
        let z = DVector::from_iterator(n, disp.omegas().iter().map(|w| w.powi(p)));
        sup(&(l * &z)) / (norm_inf * sup(&z))
    };
    let w = grid.weight();
    let ones = DVector::from_element(n, w);
    let omegas = DVector::from_iterator(n, disp.omegas().iter().map(|o| o * w));
    let left_number = sup(&(l.transpose() * ones)) / (w * norm_inf);
    let left_energy = sup(&(l.transpose() * omegas)) / (w * disp.max_omega() * norm_inf);
    let blocks = parity_blocks(grid, l);
    let fro = l.norm();
    let parity_offdiag = blocks.odd_even.norm().max(blocks.even_odd.norm()) / fro;
    // ∂N/∂V = L diag(1/ω) is self-adjoint in the weight (ω−A)²/T² for the
    // exact (ε → 0) collision operator.
    let s: Vec<f64> = disp
        .omegas()
        .iter()
        .map(|o| (o - lin.chem).powi(2) / (lin.temperature * lin.temperature))
        .collect();
    let sl = DMatrix::from_fn(n, n, |r, c| s[r] * l[(r, c)] / disp.omega(c));
    let symmetry_defect = (&sl - sl.transpose()).norm() / sl.norm();
    NullDefects {
        right_temperature: mode_defect(-2),
        right_chem: mode_defect(-3),
        left_number,
        left_energy,
        parity_offdiag,
        symmetry_defect,
    }
}

/// Default refusal threshold for the complement solve.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e10;

/// Factorized solver for `L h = r` with `h ⊥ {ω⁻², ω⁻³}`.
///
/// Uses the bordered system `[L Z; ZᵀW₃ 0][h; μ] = [r; 0]`, which is
/// nonsingular exactly when `L` is invertible from the complement onto the
/// zero-moment subspace. For a zero-moment right-hand side `μ = 0`.
pub struct ComplementSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    bordered: DMatrix<f64>,
    modes: ZeroModeBasis,
    condition: f64,
}

impl ComplementSolver {
    pub fn new(lin: &CollisionOperatorMatrix, modes: &ZeroModeBasis, condition_limit: f64) -> Result<Self> {
        let n = lin.matrix.nrows();
        if lin.matrix.ncols() != n || modes.omega.len() != n {
            return Err(Error::ShapeMismatch("operator and zero-mode basis disagree in size".into()));
        }
        let mut b = DMatrix::<f64>::zeros(n + 2, n + 2);
        b.view_mut((0, 0), (n, n)).copy_from(&lin.matrix);
        // Scale the border to the operator so the condition estimate is meaningful.
        let scale = lin.matrix.amax().max(f64::MIN_POSITIVE);
        for (c, z) in modes.modes.iter().enumerate() {
            let zmax = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let w3: Vec<f64> = z
                .iter()
                .zip(&modes.omega)
                .map(|(zz, o)| zz * o.powi(3) * modes.weight)
                .collect();
            let w3max = w3.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for r in 0..n {
                b[(r, n + c)] = z[r] * scale / zmax;
                b[(n + c, r)] = w3[r] * scale / w3max;
            }
        }
        let lu = b.clone().lu();
        let condition = condition_estimate(&b, &lu);
        if !(condition <= condition_limit) {
            return Err(Error::IllConditioned { condition, limit: condition_limit });
        }
        Ok(Self { lu, bordered: b, modes: modes.clone(), condition })
    }

    /// 1-norm condition estimate of the bordered system.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solve for `h ⊥ {ω⁻², ω⁻³}` with `L h = P rhs`, one step of iterative
    /// refinement included.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.modes.omega.len();
        if rhs.len() != n {
            return Err(Error::ShapeMismatch(format!("rhs has {} values, expected {n}", rhs.len())));
        }
        let r = self.modes.project_complement(rhs);
        let mut b = DVector::zeros(n + 2);
        b.rows_mut(0, n).copy_from_slice(&r);
        let mut x = self.lu.solve(&b).ok_or_else(|| Error::Singular("bordered collision system".into()))?;
        let resid = &b - &self.bordered * &x;
        if let Some(dx) = self.lu.solve(&resid) {
            x += dx;
        }
        let mut h: Vec<f64> = x.rows(0, n).iter().copied().collect();
        // Remove roundoff-level components along the modes.
        self.modes.project_in_place(&mut h);
        Ok(h)
    }
}

/// Eigenvalues by real Schur decomposition, sorted by real part
/// descending. Fails after `max_iterations` QR sweeps.
pub fn spectrum(matrix: &DMatrix<f64>, max_iterations: usize) -> Result<Vec<num_complex::Complex64>> {
    let schur = nalgebra::linalg::Schur::try_new(matrix.clone(), f64::EPSILON, max_iterations)
        .ok_or_else(|| Error::NoConvergence { iterations: max_iterations, residual: f64::NAN, history: Vec::new() })?;
    let ev = schur.complex_eigenvalues();
    let mut out: Vec<num_complex::Complex64> = ev.iter().map(|z| num_complex::Complex64::new(z.re, z.im)).collect();
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(out)
}

/// Hager's 1-norm estimate of `‖A‖₁ ‖A⁻¹‖₁` from an LU factorization.
pub fn condition_estimate(a: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = a.nrows();
    let norm1 = (0..n).map(|c| a.column(c).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let lu_t = a.transpose().lu();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0f64;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else { return f64::INFINITY };
        est = est.max(y.iter().map(|v| v.abs()).sum::<f64>());
        let sign = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = lu_t.solve(&sign) else { return f64::INFINITY };
        let j = z.iamax();
        if z[j].abs() <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    if est.is_finite() {
        norm1 * est
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::CollisionConfig;
    use crate::lattice::{build_grid, Regularization};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(dim: usize, m: usize) -> KineticCollision {
        let grid = Arc::new(build_grid(dim, m, None).unwrap());
        let disp = Arc::new(Dispersion::new(&grid, 1.0).unwrap());
        let reg = Regularization::from_level_spacing(&disp, 2.0).unwrap();
        KineticCollision::new(grid, disp, CollisionConfig::new(reg)).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn inner_product_examples() {
        let op = setup(2, 6);
        let disp = op.dispersion();
        let w = op.grid().weight();
        let pow = |p: i32| disp.omegas().iter().map(|o| o.powi(p)).collect::<Vec<_>>();
        let lhs = weighted_inner(disp, w, &pow(-2), &pow(-3));
        let rhs: f64 = disp.omegas().iter().map(|o| o.powi(-2) * w).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
        let ones = vec![1.0; op.grid().len()];
        let number: f64 = ones.iter().map(|_| w).sum::<f64>();
        let pairing = weighted_inner(disp, w, &pow(-3), &ones);
        assert_relative_eq!(pairing, disp.omegas().iter().map(|o| o.powi(0) * w).sum::<f64>(), max_relative = 1e-13);
        assert_relative_eq!(pairing, number, max_relative = 1e-13);
        let f = random(op.grid().len(), 1);
        let g = random(op.grid().len(), 2);
        assert_relative_eq!(weighted_inner(disp, w, &f, &g), weighted_inner(disp, w, &g, &f), max_relative = 1e-14);
    }

    #[test]
    fn projector_examples() {
        let op = setup(2, 6);
        let basis = op.zero_modes();
        let z = &basis.modes()[0];
        let p = basis.project_complement(z);
        assert!(p.iter().all(|x| x.abs() <= 1e-13));
        let f = random(op.grid().len(), 3);
        let once = basis.project_complement(&f);
        let twice = basis.project_complement(&once);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-12);
        }
        let m = basis.moments(&once);
        let scale: f64 = once.iter().map(|x| x.abs()).sum::<f64>() * op.grid().weight();
        assert!(m[0].abs() <= 1e-12 * scale * 10.0 && m[1].abs() <= 1e-12 * scale);
    }

    #[test]
    fn complement_solve_recovers_complement_vectors() {
        let op = setup(2, 8);
        let lin = linearize(&op, 1.0, 0.0).unwrap();
        let solver = ComplementSolver::new(&lin, op.zero_modes(), DEFAULT_CONDITION_LIMIT).unwrap();
        let g = op.zero_modes().project_complement(&random(op.grid().len(), 9));
        let rhs = &lin.matrix * DVector::from_column_slice(&g);
        let h = solver.solve(rhs.as_slice()).unwrap();
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in g.iter().zip(&h) {
            assert!((a - b).abs() <= 1e-8 * gmax);
        }
        let z = op.zero_modes().modes()[0].clone();
        let hz = solver.solve(&z).unwrap();
        assert!(hz.iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn transport_drive_matches_least_squares() {
        let op = setup(2, 8);
        let n = op.grid().len();
        let disp = op.dispersion();
        let lin = linearize(&op, 1.0, 0.0).unwrap();
        let solver = ComplementSolver::new(&lin, op.zero_modes(), DEFAULT_CONDITION_LIMIT).unwrap();
        let g: Vec<f64> = disp.transport_velocity().iter().zip(disp.omegas()).map(|(v, o)| v / o).collect();
        let h = solver.solve(&g).unwrap();

        // Orthonormal basis of the ω³-complement, then an SVD least-squares fit.
        let mut c = DMatrix::zeros(n, 2);
        for (j, z) in op.zero_modes().modes().iter().enumerate() {
            for k in 0..n {
                c[(k, j)] = z[k] * disp.omega(k).powi(3);
            }
        }
        let full = c.clone().svd(true, true).u.unwrap();
        let mut basis = DMatrix::<f64>::identity(n, n);
        for j in 0..2 {
            let u = full.column(j).into_owned();
            basis -= &u * u.transpose();
        }
        let q = basis.svd(true, false).u.unwrap().columns(0, n - 2).into_owned();
        let rhs = DVector::from_vec(op.zero_modes().project_complement(&g));
        let y = (&lin.matrix * &q).svd(true, true).solve(&rhs, 1e-14).unwrap();
        let h_ls = &q * y;
        let scale = h_ls.amax();
        for k in 0..n {
            assert!((h[k] - h_ls[k]).abs() <= 1e-6 * scale, "{k}: {} vs {}", h[k], h_ls[k]);
        }
    }

    #[test]
    fn spectrum_of_small_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = spectrum(&m, 200).unwrap();
        assert!(ev.iter().all(|z| z.re.abs() < 1e-14 && (z.im.abs() - 1.0).abs() < 1e-14));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 0.0, -1.0]));
        let ev = spectrum(&d, 200).unwrap();
        assert_eq!(ev.iter().map(|z| z.re).collect::<Vec<_>>(), vec![0.0, -1.0, -3.0]);
    }

    #[test]
    fn linearized_spectrum_is_dissipative() {
        let op = setup(2, 8);
        let lin = linearize(&op, 1.0, 0.0).unwrap();
        let ev = spectrum(&lin.matrix, 10_000).unwrap();
        let scale = ev.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        // Two near-zero modes, everything else in the left half plane.
        assert!(ev[2].re < 0.0, "{:?}", &ev[..4]);
        assert!(ev[..2].iter().all(|z| z.norm() <= 1e-3 * scale), "{:?}", &ev[..4]);
    }

    #[test]
    fn left_null_and_parity_structure() {
        let op = setup(2, 8);
        let lin = linearize(&op, 1.0, 0.0).unwrap();
        let d = null_defects(&op, &lin);
        assert!(d.left_number <= 1e-12, "{d:?}");
        assert!(d.left_energy <= 1e-12, "{d:?}");
        assert!(d.parity_offdiag <= 1e-12, "{d:?}");
    }

    #[test]
    fn linearize_rejects_chemical_potential_above_gap() {
        let op = setup(1, 8);
        assert!(linearize(&op, 1.0, 1.0).is_err());
    }
}
