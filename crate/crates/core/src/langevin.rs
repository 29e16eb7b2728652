//! Langevin simulation of the pinned anharmonic lattice between two
//! Ornstein–Uhlenbeck baths, and the exact stationary covariance of the
//! harmonic case.
//!
//! Sites form an `N × M^{d−1}` slab: free ends along axis 0, periodic
//! transverse axes. The equations of motion are
//!
//! ```text
//! dq = p dt
//! dp = (−ω² q − λ q³) dt − γ_x p dt + √(2 γ_x T_x) dW
//! ```
//!
//! with `ω² = (−Δ + m²)²` and the baths acting on the first and last slab.
//! Temperature is `T(x) = <p_x²>`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::map_indices;

/// Minimum number of batches for batch-means error bars.
pub const MIN_BATCHES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub dim: usize,
    /// Number of slabs along the transport axis.
    pub length: usize,
    /// Sites per transverse axis (ignored for d = 1).
    pub transverse: usize,
    pub mass_sq: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub t_left: f64,
    pub t_right: f64,
    pub dt: f64,
    pub steps: u64,
    pub burn_in: u64,
    pub sample_every: u64,
    pub batches: usize,
    pub seed: u64,
}

impl ChainConfig {
    /// A d = 1 chain with the default step `0.02 / max ω` and unit friction.
    pub fn chain(length: usize, lambda: f64, t_left: f64, t_right: f64) -> Self {
        let mut c = Self {
            dim: 1,
            length,
            transverse: 1,
            mass_sq: 1.0,
            lambda,
            gamma: 1.0,
            t_left,
            t_right,
            dt: 0.0,
            steps: 2_000_000,
            burn_in: 200_000,
            sample_every: 10,
            batches: 64,
            seed: 0,
        };
        c.dt = c.default_dt();
        c
    }

    /// Upper bound `4d + m²` of the frequency spectrum.
    pub fn max_omega(&self) -> f64 {
        4.0 * self.dim as f64 + self.mass_sq
    }

    pub fn default_dt(&self) -> f64 {
        0.02 / self.max_omega()
    }

    fn transverse_len(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.transverse.pow(self.dim as u32 - 1)
        }
    }

    pub fn sites(&self) -> usize {
        self.length * self.transverse_len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.dim == 0 || self.length < 2 {
            return bad(format!("need d >= 1 and N >= 2, got d={}, N={}", self.dim, self.length));
        }
        if self.dim > 1 && self.transverse == 0 {
            return bad("transverse extent must be positive".into());
        }
        if !(self.mass_sq > 0.0) || !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("need m² > 0 and λ >= 0".into());
        }
        if !(self.gamma > 0.0) || !(self.t_left > 0.0) || !(self.t_right > 0.0) {
            return bad("friction and bath temperatures must be positive".into());
        }
        if !(self.dt > 0.0) || self.dt * self.max_omega() > 0.1 {
            return bad(format!("dt = {} violates dt·max ω <= 0.1", self.dt));
        }
        if self.burn_in >= self.steps || self.sample_every == 0 {
            return bad("burn-in must be shorter than the run and sample_every positive".into());
        }
        if self.batches < MIN_BATCHES || (self.steps - self.burn_in) / self.sample_every < self.batches as u64 {
            return bad(format!("need at least {MIN_BATCHES} batches with one sample each"));
        }
        if self.sites() > 1 << 16 {
            return bad("lattice too large".into());
        }
        Ok(())
    }
}

/// Sparse symmetric operator stored row-wise.
#[derive(Debug, Clone)]
struct Stencil {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Stencil {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, c)| c * x[j]).sum();
        }
    }
}

/// Geometry of the slab and the coupling operator `ω²`.
#[derive(Debug, Clone)]
pub struct ChainLattice {
    length: usize,
    transverse_len: usize,
    omega_sq: Stencil,
    /// For every cut between slabs `c` and `c+1`, the bonds `(x, y, ½ω²_{xy})`
    /// with `x` left of the cut and `y` right of it.
    cuts: Vec<Vec<(usize, usize, f64)>>,
}

impl ChainLattice {
    pub fn new(config: &ChainConfig) -> Self {
        let n = config.length;
        let nt = config.transverse_len();
        let m = config.transverse.max(1);
        let sites = n * nt;
        let site = |x: usize, t: usize| x + n * t;
        // −Δ + m² with free ends along axis 0 and periodic transverse axes.
        let mut lap: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); sites];
        let link = |a: usize, b: usize, lap: &mut Vec<BTreeMap<usize, f64>>| {
            if a != b {
                *lap[a].entry(a).or_insert(0.0) += 1.0;
                *lap[a].entry(b).or_insert(0.0) -= 1.0;
            }
        };
        for t in 0..nt {
            for x in 0..n {
                let s = site(x, t);
                *lap[s].entry(s).or_insert(0.0) += config.mass_sq;
                if x > 0 {
                    link(s, site(x - 1, t), &mut lap);
                }
                if x + 1 < n {
                    link(s, site(x + 1, t), &mut lap);
                }
                let mut stride = 1;
                for _ in 1..config.dim {
                    let c = (t / stride) % m;
                    for nb in [(c + 1) % m, (c + m - 1) % m] {
                        link(s, site(x, t - c * stride + nb * stride), &mut lap);
                    }
                    stride *= m;
                }
            }
        }
        let mut rows = Vec::with_capacity(sites);
        for a in 0..sites {
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            for (&b, &lab) in &lap[a] {
                for (&c, &lbc) in &lap[b] {
                    *row.entry(c).or_insert(0.0) += lab * lbc;
                }
            }
            rows.push(row.into_iter().filter(|(_, v)| *v != 0.0).collect::<Vec<_>>());
        }
        let omega_sq = Stencil { rows };
        let cuts = (0..n - 1)
            .map(|c| {
                let mut bonds = Vec::new();
                for (x, row) in omega_sq.rows.iter().enumerate() {
                    for &(y, w) in row {
                        if x % n <= c && y % n > c {
                            bonds.push((x, y, 0.5 * w));
                        }
                    }
                }
                bonds
            })
            .collect();
        Self { length: n, transverse_len: nt, omega_sq, cuts }
    }

    pub fn sites(&self) -> usize {
        self.length * self.transverse_len
    }

    /// Slab (axis-0 coordinate) of a site.
    pub fn slab(&self, site: usize) -> usize {
        site % self.length
    }

    /// Dense `ω²`.
    pub fn omega_sq_matrix(&self) -> DMatrix<f64> {
        let n = self.sites();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.omega_sq.rows.iter().enumerate() {
            for &(j, c) in row {
                m[(i, j)] = c;
            }
        }
        m
    }

    /// Coupling `ω²_{xy}`.
    pub fn omega_sq(&self, x: usize, y: usize) -> f64 {
        self.omega_sq.rows[x].iter().find(|e| e.0 == y).map_or(0.0, |e| e.1)
    }

    /// Neighbors `y ≠ x` with nonzero `ω²_{xy}`.
    pub fn couplings(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.omega_sq.rows[x].iter().copied().filter(move |&(y, _)| y != x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl ChainState {
    pub fn zeros(sites: usize) -> Self {
        Self { q: vec![0.0; sites], p: vec![0.0; sites] }
    }
}

/// `j_{x→y} = ½ ω²_{xy} (p_x q_y − p_y q_x)`.
#[inline]
pub fn bond_current_between(lattice: &ChainLattice, state: &ChainState, x: usize, y: usize) -> f64 {
    0.5 * lattice.omega_sq(x, y) * (state.p[x] * state.q[y] - state.p[y] * state.q[x])
}

/// Energy current through each cut between consecutive slabs, per
/// transverse site.
pub fn bond_current(lattice: &ChainLattice, state: &ChainState) -> Vec<f64> {
    let norm = 1.0 / lattice.transverse_len as f64;
    lattice
        .cuts
        .iter()
        .map(|bonds| {
            bonds.iter().map(|&(x, y, w)| w * (state.p[x] * state.q[y] - state.p[y] * state.q[x])).sum::<f64>() * norm
        })
        .collect()
}

/// Local energy `½p² + ¼λq⁴ + ½ q (ω²q)` of every site.
pub fn local_energy(lattice: &ChainLattice, lambda: f64, state: &ChainState) -> Vec<f64> {
    let mut wq = vec![0.0; state.q.len()];
    lattice.omega_sq.apply(&state.q, &mut wq);
    (0..state.q.len())
        .map(|x| {
            let q = state.q[x];
            0.5 * state.p[x].powi(2) + 0.25 * lambda * q.powi(4) + 0.5 * q * wq[x]
        })
        .collect()
}

/// Splitting integrator with exact Ornstein–Uhlenbeck bath updates.
#[derive(Debug, Clone)]
pub struct Integrator {
    config: ChainConfig,
    lattice: ChainLattice,
    force: Vec<f64>,
    decay: f64,
    baths: Vec<(usize, f64)>,
    step_count: u64,
}

impl Integrator {
    pub fn new(config: &ChainConfig, state: &ChainState) -> Result<Self> {
        config.validate()?;
        let lattice = ChainLattice::new(config);
        if state.q.len() != lattice.sites() || state.p.len() != lattice.sites() {
            return Err(Error::ShapeMismatch(format!("state does not have {} sites", lattice.sites())));
        }
        let decay = (-config.gamma * config.dt).exp();
        let var = |t: f64| (t * (1.0 - decay * decay)).sqrt();
        let mut baths = Vec::new();
        for s in 0..lattice.sites() {
            match lattice.slab(s) {
                0 => baths.push((s, var(config.t_left))),
                x if x + 1 == config.length => baths.push((s, var(config.t_right))),
                _ => {}
            }
        }
        let mut integ = Self { config: config.clone(), lattice, force: vec![0.0; state.q.len()], decay, baths, step_count: 0 };
        integ.update_force(&state.q);
        Ok(integ)
    }

    pub fn lattice(&self) -> &ChainLattice {
        &self.lattice
    }

    fn update_force(&mut self, q: &[f64]) {
        self.lattice.omega_sq.apply(q, &mut self.force);
        let lambda = self.config.lambda;
        for (f, &x) in self.force.iter_mut().zip(q) {
            *f = -*f - lambda * x * x * x;
        }
    }

    /// Kick–drift–kick, then the bath update.
    pub fn step<R: rand::Rng>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let half = 0.5 * self.config.dt;
        for (p, f) in state.p.iter_mut().zip(&self.force) {
            *p += half * f;
        }
        for (q, p) in state.q.iter_mut().zip(&state.p) {
            *q += self.config.dt * p;
        }
        self.update_force(&state.q);
        for (p, f) in state.p.iter_mut().zip(&self.force) {
            *p += half * f;
        }
        for &(s, sigma) in &self.baths {
            let xi: f64 = StandardNormal.sample(rng);
            state.p[s] = self.decay * state.p[s] + sigma * xi;
        }
        self.step_count += 1;
        if let Some(site) = state.q.iter().zip(&state.p).position(|(q, p)| !(q.abs() < 1e100 && p.abs() < 1e100)) {
            return Err(Error::Divergence { site, step: self.step_count });
        }
        Ok(())
    }
}

/// One integrator step from scratch; see [`Integrator`] for repeated use.
pub fn step<R: rand::Rng>(state: &ChainState, config: &ChainConfig, rng: &mut R) -> Result<ChainState> {
    let mut next = state.clone();
    Integrator::new(config, state)?.step(&mut next, rng)?;
    Ok(next)
}

/// Batch-means estimates of the slab temperatures and cut currents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub t_hat: Vec<f64>,
    pub t_se: Vec<f64>,
    pub j_hat: Vec<f64>,
    pub j_se: Vec<f64>,
    pub samples: u64,
    pub batches: usize,
    /// `(site, step)` of a divergence; the estimates then cover only the
    /// completed batches and are not valid.
    pub divergence: Option<(usize, u64)>,
}

impl TrajectoryStats {
    pub fn is_valid(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Per-batch averages; merging is concatenation.
#[derive(Debug, Clone, Default)]
struct BatchSeries {
    temperature: Vec<Vec<f64>>,
    current: Vec<Vec<f64>>,
    samples: u64,
}

/// Naive batch-means standard error of column `i`.
fn batch_se(series: &[Vec<f64>], i: usize) -> f64 {
    let nb = series.len() as f64;
    let m = series.iter().map(|b| b[i]).sum::<f64>() / nb;
    let var = series.iter().map(|b| (b[i] - m).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0);
    (var / nb).sqrt()
}

/// Means and blocking standard errors: adjacent batches are merged pairwise
/// while at least [`MIN_BATCHES`] remain, and the largest standard error over
/// these levels is kept. Correlation between neighbouring batches otherwise
/// biases the error bar low.
fn mean_and_se(series: &[Vec<f64>], width: usize) -> (Vec<f64>, Vec<f64>) {
    if series.is_empty() {
        return (vec![f64::NAN; width], vec![f64::NAN; width]);
    }
    let nb = series.len() as f64;
    let mean = (0..width).map(|i| series.iter().map(|b| b[i]).sum::<f64>() / nb).collect();
    let mut se: Vec<f64> = (0..width).map(|i| batch_se(series, i)).collect();
    let mut level = series.to_vec();
    while level.len() / 2 >= MIN_BATCHES {
        level = level
            .chunks_exact(2)
            .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| 0.5 * (a + b)).collect())
            .collect();
        for (i, s) in se.iter_mut().enumerate() {
            *s = s.max(batch_se(&level, i));
        }
    }
    (mean, se)
}

fn simulate(config: &ChainConfig) -> Result<(BatchSeries, Option<(usize, u64)>)> {
    let lattice = ChainLattice::new(config);
    let mut state = ChainState::zeros(lattice.sites());
    let mut integ = Integrator::new(config, &state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, nt) = (config.length, config.transverse_len());
    let per_batch = (config.steps - config.burn_in) / config.sample_every / config.batches as u64;
    let mut out = BatchSeries::default();
    let mut temp = vec![0.0; n];
    let mut cur = vec![0.0; n - 1];
    let mut in_batch = 0u64;
    for s in 1..=config.steps {
        if let Err(Error::Divergence { site, step }) = integ.step(&mut state, &mut rng) {
            return Ok((out, Some((site, step))));
        }
        if s <= config.burn_in || !(s - config.burn_in).is_multiple_of(config.sample_every) {
            continue;
        }
        if out.temperature.len() == config.batches {
            continue;
        }
        for (site, p) in state.p.iter().enumerate() {
            temp[site % n] += p * p;
        }
        for (c, j) in cur.iter_mut().zip(bond_current(&lattice, &state)) {
            *c += j;
        }
        in_batch += 1;
        out.samples += 1;
        if in_batch == per_batch {
            let scale = 1.0 / per_batch as f64;
            out.temperature.push(temp.iter().map(|x| x * scale / nt as f64).collect());
            out.current.push(cur.iter().map(|x| x * scale).collect());
            temp.iter_mut().for_each(|x| *x = 0.0);
            cur.iter_mut().for_each(|x| *x = 0.0);
            in_batch = 0;
        }
    }
    Ok((out, None))
}

fn finish(series: BatchSeries, length: usize, divergence: Option<(usize, u64)>) -> TrajectoryStats {
    let (t_hat, t_se) = mean_and_se(&series.temperature, length);
    let (j_hat, j_se) = mean_and_se(&series.current, length - 1);
    TrajectoryStats { t_hat, t_se, j_hat, j_se, samples: series.samples, batches: series.temperature.len(), divergence }
}

/// Burn-in, then sampling every `sample_every` steps into `batches`
/// equal batches.
pub fn run_experiment(config: &ChainConfig) -> Result<TrajectoryStats> {
    let (series, div) = simulate(config)?;
    Ok(finish(series, config.length, div))
}

/// Independent replicas with seeds `seed, seed+1, …`, pooled batch-wise.
pub fn run_replicas(config: &ChainConfig, replicas: usize) -> Result<TrajectoryStats> {
    config.validate()?;
    let runs = map_indices(replicas.max(1), |r| {
        let mut c = config.clone();
        c.seed = config.seed.wrapping_add(r as u64);
        simulate(&c)
    });
    let mut pooled = BatchSeries::default();
    let mut divergence = None;
    for run in runs {
        let (s, d) = run?;
        pooled.temperature.extend(s.temperature);
        pooled.current.extend(s.current);
        pooled.samples += s.samples;
        divergence = divergence.or(d);
    }
    Ok(finish(pooled, config.length, divergence))
}

/// Exact stationary statistics of the harmonic chain.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Covariance of `(q, p)`.
    pub covariance: DMatrix<f64>,
    /// Slab temperatures `<p_x²>`.
    pub temperature: Vec<f64>,
    /// Mean energy current through each cut.
    pub current: Vec<f64>,
}

/// Solves `M Σ + Σ Mᵀ + S = 0` for the drift `M = [[0, I], [−ω², −Γ]]` and
/// noise rate `S = diag(0, 2γ_x T_x)`.
///
/// The continuous equation is mapped to a Stein equation by a Cayley
/// transform and summed by doubling.
pub fn lyapunov_oracle(config: &ChainConfig) -> Result<OracleResult> {
    if config.lambda != 0.0 {
        return Err(Error::InvalidParameter("the oracle requires λ = 0".into()));
    }
    let lattice = ChainLattice::new(config);
    let n = lattice.sites();
    if 2 * n > 4000 {
        return Err(Error::InvalidParameter("chain too large for the dense oracle".into()));
    }
    if !(config.gamma > 0.0) {
        return Err(Error::Singular("no damping: the harmonic chain has no stationary state".into()));
    }
    let w2 = lattice.omega_sq_matrix();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = 1.0;
        for j in 0..n {
            m[(n + i, j)] = -w2[(i, j)];
        }
        let bath = match lattice.slab(i) {
            0 => Some(config.t_left),
            x if x + 1 == config.length => Some(config.t_right),
            _ => None,
        };
        if let Some(t) = bath {
            m[(n + i, n + i)] = -config.gamma;
            s[(n + i, n + i)] = 2.0 * config.gamma * t;
        }
    }
    let shift = config.mass_sq.max(1.0);
    let eye = DMatrix::<f64>::identity(2 * n, 2 * n);
    let lu = (&m - &eye * shift).lu();
    let mut a = lu.solve(&(&m + &eye * shift)).ok_or_else(|| Error::Singular("Cayley transform".into()))?;
    let u_inv = lu.try_inverse().ok_or_else(|| Error::Singular("Cayley transform".into()))?;
    let mut x = &u_inv * &s * u_inv.transpose() * (2.0 * shift);
    let mut converged = false;
    for _ in 0..200 {
        let inc = &a * &x * a.transpose();
        let done = inc.amax() <= 1e-15 * x.amax();
        x += inc;
        if done {
            converged = true;
            break;
        }
        a = &a * &a;
    }
    if !converged {
        return Err(Error::Singular("Lyapunov doubling did not converge; some mode is undamped".into()));
    }
    let x = (&x + x.transpose()) * 0.5;
    let nt = n / config.length;
    let mut temperature = vec![0.0; config.length];
    for i in 0..n {
        temperature[lattice.slab(i)] += x[(n + i, n + i)] / nt as f64;
    }
    let current = lattice
        .cuts
        .iter()
        .map(|bonds| {
            bonds.iter().map(|&(a, b, w)| w * (x[(n + a, b)] - x[(n + b, a)])).sum::<f64>() / nt as f64
        })
        .collect();
    Ok(OracleResult { covariance: x, temperature, current })
}
