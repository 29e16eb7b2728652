//! Finite-N closure term `𝒩(p, k)`.
//!
//! Pairs `(pᵢ, kᵢ)` are addressed by `aᵢ = pᵢ + kᵢ`, `bᵢ = pᵢ − kᵢ` on the
//! lattice of [`SlowLattice`]. The momentum deltas then read
//! `Σ aᵢ = a + b`, `Σ bᵢ = 0` (axis 0) and `a₄ = b`, and the pinning deltas
//! `δ(2pᵢ)` become `aᵢ + bᵢ = 0` on axis 0. After resolving them the free
//! summation variables are `a₁, a₂` and the axis-0 parts of `b₁, b₂`, with
//! Riemann weight `h⁴ h⊥^{2(d−1)} / 16`.

use num_complex::Complex64;

use crate::correlators::{PairCorrelators, SlowLattice};
use crate::error::{Error, Result};
use crate::lattice::Regularization;
use crate::par::map_indices;

#[derive(Debug, Clone, Copy)]
pub struct ClosureConfig {
    /// Anharmonic coupling λ; the term scales as λ².
    pub lambda: f64,
    pub regularization: Regularization,
    /// Keep only sign vectors with `Σ sᵢ = 0`.
    pub zero_sum_signs: bool,
}

impl ClosureConfig {
    pub fn new(lambda: f64, regularization: Regularization) -> Self {
        Self { lambda, regularization, zero_sum_signs: false }
    }
}

/// The four nonzero-capable blocks of `𝒩`; `𝒩₁₁` vanishes identically.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureBlocks {
    pub n12: Vec<Complex64>,
    pub n21: Vec<Complex64>,
    pub n22: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct ClosureEvaluator {
    lattice: SlowLattice,
    config: ClosureConfig,
    signs: Vec<[i8; 4]>,
}

impl ClosureEvaluator {
    pub fn new(lattice: SlowLattice, config: ClosureConfig) -> Result<Self> {
        if !config.lambda.is_finite() {
            return Err(Error::InvalidParameter("λ must be finite".into()));
        }
        let signs = (0..16u8)
            .map(|m| {
                let s = |bit: u8| if m >> bit & 1 == 1 { -1 } else { 1 };
                [s(0), s(1), s(2), s(3)]
            })
            .filter(|s| !config.zero_sum_signs || s.iter().map(|&x| i32::from(x)).sum::<i32>() == 0)
            .collect();
        Ok(Self { lattice, config, signs })
    }

    pub fn lattice(&self) -> &SlowLattice {
        &self.lattice
    }

    fn check(&self, corr: &PairCorrelators) -> Result<()> {
        if corr.lattice != self.lattice || corr.q.len() != self.lattice.len() || corr.j.len() != self.lattice.len() {
            return Err(Error::ShapeMismatch("correlators live on a different lattice".into()));
        }
        Ok(())
    }

    fn weight(&self) -> f64 {
        let lat = &self.lattice;
        self.config.lambda.powi(2) * lat.spacing().powi(4) * lat.transverse_spacing().powi(2 * (lat.dim() as i32 - 1))
            / 16.0
    }

    /// `(N₂₁, N₂₂)` of the one-sided term at coefficient `idx`.
    fn one_sided(&self, w: &[Vec<Complex64>; 2], idx: usize) -> (Complex64, Complex64) {
        let lat = &self.lattice;
        let (n2, nt) = (lat.ring(), lat.transverse_len());
        let eps = self.config.regularization.epsilon;
        let (ia, ib, t) = lat.split(idx);
        let t4 = lat.neg_transverse(t);
        let om4 = lat.omega(ib, t4);
        let inv4 = om4.powi(-2);
        let ws = |s: i8| &w[usize::from(s < 0)];
        let zero = Complex64::new(0.0, 0.0);
        let (mut n21, mut n22) = (zero, zero);
        for i1 in 0..n2 {
            for t1 in 0..nt {
                let om1 = lat.omega(i1, t1);
                for i2 in 0..n2 {
                    let i3 = (2 * n2 + ia - i1 - i2) % n2;
                    for t2 in 0..nt {
                        let t3 = lat.add_transverse(t, lat.neg_transverse(lat.add_transverse(t1, t2)));
                        let (om2, om3) = (lat.omega(i2, t2), lat.omega(i3, t3));
                        let inv3 = om3.powi(-2);
                        for s in &self.signs {
                            let (w1, w2, w3, w4) = (ws(s[0]), ws(s[1]), ws(s[2]), ws(s[3]));
                            let mut acc = zero;
                            for j1 in 0..n2 {
                                let x1 = w1[lat.index(i1, j1, t1)];
                                if x1 == zero {
                                    continue;
                                }
                                for j2 in 0..n2 {
                                    let x2 = w2[lat.index(i2, j2, t2)];
                                    let j4 = (2 * n2 + i3 - j1 - j2) % n2;
                                    let j3 = (2 * n2 + ib - j1 - j2) % n2;
                                    let pinned3 = inv3 * w4[lat.index(ib, j4, t4)];
                                    let pinned4 = inv4 * w3[lat.index(i3, j3, t3)];
                                    acc += x1 * x2 * (pinned3 - pinned4);
                                }
                            }
                            if acc == zero {
                                continue;
                            }
                            let detuning = f64::from(s[0]) * om1
                                + f64::from(s[1]) * om2
                                + f64::from(s[2]) * om3
                                + f64::from(s[3]) * om4;
                            let term = acc * f64::from(s[2]) * om3 / Complex64::new(detuning, eps);
                            n21 += term;
                            n22 += term * f64::from(s[3]);
                        }
                    }
                }
            }
        }
        let c = self.weight();
        (n21 * c, Complex64::new(0.0, om4) * n22 * c)
    }

    fn w_tables(&self, corr: &PairCorrelators) -> [Vec<Complex64>; 2] {
        let n = self.lattice.len();
        [(0..n).map(|i| corr.w(1, i)).collect(), (0..n).map(|i| corr.w(-1, i)).collect()]
    }

    /// `𝒩 = N(p,k) + N(p,−k)ᵀ` on every coefficient.
    pub fn evaluate(&self, corr: &PairCorrelators) -> Result<ClosureBlocks> {
        self.check(corr)?;
        let lat = &self.lattice;
        if self.config.lambda == 0.0 {
            let z = vec![Complex64::new(0.0, 0.0); lat.len()];
            return Ok(ClosureBlocks { n12: z.clone(), n21: z.clone(), n22: z });
        }
        let w = self.w_tables(corr);
        let raw = map_indices(lat.len(), |idx| self.one_sided(&w, idx));
        Ok(ClosureBlocks {
            n12: (0..lat.len()).map(|i| raw[lat.swapped(i)].0).collect(),
            n21: raw.iter().map(|r| r.0).collect(),
            n22: (0..lat.len()).map(|i| raw[i].1 + raw[lat.swapped(i)].1).collect(),
        })
    }

    /// The 2×2 block at a single coefficient.
    pub fn block(&self, corr: &PairCorrelators, idx: usize) -> Result<[[Complex64; 2]; 2]> {
        self.check(corr)?;
        if idx >= self.lattice.len() {
            return Err(Error::InvalidParameter(format!("coefficient {idx} out of range")));
        }
        let zero = Complex64::new(0.0, 0.0);
        if self.config.lambda == 0.0 {
            return Ok([[zero; 2]; 2]);
        }
        let w = self.w_tables(corr);
        let here = self.one_sided(&w, idx);
        let mirror = self.one_sided(&w, self.lattice.swapped(idx));
        Ok([[zero, mirror.0], [here.0, here.1 + mirror.1]])
    }
}

/// `𝒩(p, k)` at coefficient `idx`; see [`ClosureEvaluator::block`].
pub fn closure_term(evaluator: &ClosureEvaluator, corr: &PairCorrelators, idx: usize) -> Result<[[Complex64; 2]; 2]> {
    evaluator.block(corr, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlators::{from_position_space, PositionCorrelators};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_corr(lat: &SlowLattice, seed: u64) -> PairCorrelators {
        let n = lat.ring();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos = PositionCorrelators { lattice: lat.clone(), q: vec![0.0; n * n], j: vec![0.0; n * n], p: vec![0.0; n * n] };
        for x in 0..n {
            for y in 0..=x {
                let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                pos.q[x * n + y] = a;
                pos.q[y * n + x] = a;
                pos.j[x * n + y] = if x == y { 0.0 } else { b };
                pos.j[y * n + x] = -pos.j[x * n + y];
            }
        }
        from_position_space(&pos)
    }

    /// One-sided term by direct enumeration of all eight momenta (d = 1),
    /// each delta checked as a Kronecker symbol of weight `1/h`.
    fn brute_force(lat: &SlowLattice, corr: &PairCorrelators, lambda: f64, eps: f64, ia: usize, ib: usize) -> (Complex64, Complex64) {
        let n2 = lat.ring();
        let h = lat.spacing();
        let om = |i: usize| 2.0 * (1.0 - (i as f64 * h).cos()) + lat.mass_sq();
        let w = |s: f64, i: usize, j: usize| {
            let idx = lat.index(i, j, 0);
            corr.q[idx] + Complex64::new(0.0, s / om(i)) * corr.j[idx]
        };
        let kron = |x: usize| if x.is_multiple_of(n2) { 1.0 / h } else { 0.0 };
        let pair = 0.5 * h * h;
        let zero = Complex64::new(0.0, 0.0);
        let (mut n21, mut n22) = (zero, zero);
        for i4 in 0..n2 {
            let d3 = kron(i4 + n2 - ib);
            if d3 == 0.0 {
                continue;
            }
            for i1 in 0..n2 {
                for i2 in 0..n2 {
                    for i3 in 0..n2 {
                        let d1 = kron(4 * n2 + ia + ib - i1 - i2 - i3 - i4);
                        if d1 == 0.0 {
                            continue;
                        }
                        for j1 in 0..n2 {
                            for j2 in 0..n2 {
                                for j3 in 0..n2 {
                                    for j4 in 0..n2 {
                                        let d2 = kron(j1 + j2 + j3 + j4);
                                        if d2 == 0.0 {
                                            continue;
                                        }
                                        let (pin3, pin4) = (kron(i3 + j3), kron(i4 + j4));
                                        if pin3 == 0.0 && pin4 == 0.0 {
                                            continue;
                                        }
                                        let measure = pair.powi(4) * d1 * d2 * d3;
                                        for m in 0..16 {
                                            let s: Vec<f64> = (0..4).map(|b| if m >> b & 1 == 1 { -1.0 } else { 1.0 }).collect();
                                            let res = 1.0
                                                / Complex64::new(
                                                    s[0] * om(i1) + s[1] * om(i2) + s[2] * om(i3) + s[3] * om(i4),
                                                    eps,
                                                );
                                            let bracket = s[2]
                                                * om(i3)
                                                * (om(i3).powi(-2) * pin3 * w(s[3], i4, j4)
                                                    - om(i4).powi(-2) * pin4 * w(s[2], i3, j3));
                                            let scalar = measure * res * w(s[0], i1, j1) * w(s[1], i2, j2) * bracket;
                                            n21 += scalar;
                                            n22 += scalar * Complex64::new(0.0, s[3] * om(i4));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (n21 * lambda * lambda, n22 * lambda * lambda)
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let lat = SlowLattice::new(1, 4, 0, 1.0).unwrap();
        let corr = random_corr(&lat, 17);
        let (lambda, eps) = (0.7, 0.3);
        let eval = ClosureEvaluator::new(lat.clone(), ClosureConfig::new(lambda, Regularization::new(eps).unwrap())).unwrap();
        for (ia, ib) in [(0, 0), (1, 6), (3, 2), (5, 5)] {
            let idx = lat.index(ia, ib, 0);
            let block = closure_term(&eval, &corr, idx).unwrap();
            let here = brute_force(&lat, &corr, lambda, eps, ia, ib);
            let mirror = brute_force(&lat, &corr, lambda, eps, ib, ia);
            let expect = [here.0, mirror.0, here.1 + mirror.1];
            let got = [block[1][0], block[0][1], block[1][1]];
            for (g, e) in got.iter().zip(expect) {
                assert!((g - e).norm() <= 1e-12 * (1.0 + e.norm()), "({ia},{ib}): {g} vs {e}");
            }
            assert_eq!(block[0][0], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn block_agrees_with_full_evaluation() {
        let lat = SlowLattice::new(2, 2, 4, 1.0).unwrap();
        let mut corr = PairCorrelators::equilibrium(lat.clone(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for z in corr.j.iter_mut() {
            *z = Complex64::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        }
        let eval = ClosureEvaluator::new(lat.clone(), ClosureConfig::new(0.5, Regularization::new(0.5).unwrap())).unwrap();
        let all = eval.evaluate(&corr).unwrap();
        for idx in [0, 7, 29, lat.len() - 1] {
            let b = eval.block(&corr, idx).unwrap();
            assert!((b[0][1] - all.n12[idx]).norm() < 1e-14);
            assert!((b[1][0] - all.n21[idx]).norm() < 1e-14);
            assert!((b[1][1] - all.n22[idx]).norm() < 1e-14);
        }
    }

    #[test]
    fn equilibrium_is_annihilated() {
        for (dim, n, m) in [(1, 4, 0), (2, 2, 4)] {
            let lat = SlowLattice::new(dim, n, m, 1.0).unwrap();
            for t in [0.5, 2.0] {
                let corr = PairCorrelators::equilibrium(lat.clone(), t);
                let eval = ClosureEvaluator::new(lat.clone(), ClosureConfig::new(1.0, Regularization::new(0.2).unwrap())).unwrap();
                let out = eval.evaluate(&corr).unwrap();
                let scale = corr.q.iter().fold(0.0f64, |a, z| a.max(z.norm())).powi(3);
                for z in out.n12.iter().chain(&out.n21).chain(&out.n22) {
                    assert!(z.norm() <= 1e-13 * scale, "{z}");
                }
            }
        }
    }

    #[test]
    fn vanishes_without_coupling() {
        let lat = SlowLattice::new(1, 3, 0, 1.0).unwrap();
        let corr = random_corr(&lat, 2);
        let eval = ClosureEvaluator::new(lat.clone(), ClosureConfig::new(0.0, Regularization::new(0.1).unwrap())).unwrap();
        let out = eval.evaluate(&corr).unwrap();
        assert!(out.n12.iter().chain(&out.n21).chain(&out.n22).all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn quadratic_in_coupling() {
        let lat = SlowLattice::new(1, 3, 0, 1.0).unwrap();
        let corr = random_corr(&lat, 8);
        let reg = Regularization::new(0.4).unwrap();
        let a = ClosureEvaluator::new(lat.clone(), ClosureConfig::new(0.3, reg)).unwrap().evaluate(&corr).unwrap();
        let b = ClosureEvaluator::new(lat.clone(), ClosureConfig::new(0.6, reg)).unwrap().evaluate(&corr).unwrap();
        for (x, y) in a.n22.iter().zip(&b.n22) {
            assert!((4.0 * x - y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn zero_sum_signs_is_a_subset() {
        let lat = SlowLattice::new(1, 3, 0, 1.0).unwrap();
        let corr = random_corr(&lat, 5);
        let reg = Regularization::new(0.4).unwrap();
        let mut cfg = ClosureConfig::new(1.0, reg);
        let full = ClosureEvaluator::new(lat.clone(), cfg).unwrap();
        cfg.zero_sum_signs = true;
        let part = ClosureEvaluator::new(lat.clone(), cfg).unwrap();
        assert_eq!(full.signs.len(), 16);
        assert_eq!(part.signs.len(), 6);
        assert!(part.evaluate(&corr).unwrap() != full.evaluate(&corr).unwrap());
    }

    #[test]
    fn rejects_foreign_lattice() {
        let lat = SlowLattice::new(1, 3, 0, 1.0).unwrap();
        let other = SlowLattice::new(1, 4, 0, 1.0).unwrap();
        let eval = ClosureEvaluator::new(lat, ClosureConfig::new(1.0, Regularization::new(0.1).unwrap())).unwrap();
        assert!(eval.evaluate(&PairCorrelators::zeros(other)).is_err());
    }
}
