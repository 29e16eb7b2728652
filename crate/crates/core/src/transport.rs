//! Diffusion matrix, hydrodynamic profiles and the kinetic boundary-value
//! problem.
//!
//! Currents follow `J = −D ∇(T, A)`, rows ordered (heat, number). With this
//! convention heat flows from hot to cold when `D₀₀ > 0`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;

use crate::collision::{equilibrium_field, KineticCollision};
use crate::correlators::KineticState;
use crate::linear_ops::{linearize, ComplementSolver, DEFAULT_CONDITION_LIMIT};
use crate::par::map_indices;
use crate::{Error, Result};

/// Nodal `(T, A)` profiles on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalEquilibriumProfile {
    pub x: Vec<f64>,
    pub temperature: Vec<f64>,
    pub chem: Vec<f64>,
    pub boundary: Boundary,
}

impl LocalEquilibriumProfile {
    /// Straight line in `β` and in `A` between the walls.
    pub fn linear_beta(boundary: Boundary, cells: usize) -> Self {
        let x: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
        let (b1, b2) = (1.0 / boundary.t_left, 1.0 / boundary.t_right);
        let temperature = x.iter().map(|s| 1.0 / (b1 + s * (b2 - b1))).collect();
        let chem = x.iter().map(|s| boundary.a_left + s * (boundary.a_right - boundary.a_left)).collect();
        Self { x, temperature, chem, boundary }
    }

    pub fn beta(&self) -> Vec<f64> {
        self.temperature.iter().map(|t| 1.0 / t).collect()
    }

    pub fn validate(&self, mass_sq: f64) -> Result<()> {
        let n = self.x.len();
        if self.temperature.len() != n || self.chem.len() != n || n < 2 {
            return Err(Error::ShapeMismatch("profile arrays disagree in length".into()));
        }
        if let Some(i) = self.temperature.iter().position(|t| !(*t > 0.0)) {
            return Err(Error::InvariantViolation(format!("T ≤ 0 at node {i}")));
        }
        if let Some(i) = self.chem.iter().position(|a| !(*a < mass_sq)) {
            return Err(Error::InvariantViolation(format!("A ≥ m² at node {i}")));
        }
        let b = &self.boundary;
        if self.temperature[0] != b.t_left
            || self.temperature[n - 1] != b.t_right
            || self.chem[0] != b.a_left
            || self.chem[n - 1] != b.a_right
        {
            return Err(Error::InvariantViolation("boundary values not attained".into()));
        }
        Ok(())
    }
}

/// Wall values `(T₁, T₂, A₁, A₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Boundary {
    pub t_left: f64,
    pub t_right: f64,
    pub a_left: f64,
    pub a_right: f64,
}

impl Boundary {
    pub fn temperatures(t_left: f64, t_right: f64) -> Self {
        Self { t_left, t_right, a_left: 0.0, a_right: 0.0 }
    }

    fn check(&self, mass_sq: f64) -> Result<()> {
        if !(self.t_left > 0.0 && self.t_right > 0.0) {
            return Err(Error::InvalidParameter("wall temperatures must be positive".into()));
        }
        if !(self.a_left < mass_sq && self.a_right < mass_sq) {
            return Err(Error::InvalidParameter("wall chemical potentials must stay below m²".into()));
        }
        Ok(())
    }
}

/// `D(T, A)` with rows (heat, number) and columns (∂T, ∂A).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionMatrix {
    pub matrix: [[f64; 2]; 2],
    pub temperature: f64,
    pub chem: f64,
    pub coupling: f64,
    pub condition: f64,
    /// Both eigenvalues of the symmetric part of the Onsager matrix positive.
    pub positive_definite: bool,
    /// `|L₀₁ − L₁₀| / max|L|` for the Onsager matrix in the affinities
    /// `(∇β, −∇(βA))`.
    pub onsager_defect: f64,
}

impl DiffusionMatrix {
    fn from_entries(matrix: [[f64; 2]; 2], temperature: f64, chem: f64, coupling: f64, condition: f64) -> Self {
        let d = Matrix2::new(matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
        let t = temperature;
        let onsager = d * Matrix2::new(t * t, 0.0, chem * t, t);
        let scale = onsager.amax().max(f64::MIN_POSITIVE);
        let onsager_defect = (onsager[(0, 1)] - onsager[(1, 0)]).abs() / scale;
        let sym = 0.5 * (onsager + onsager.transpose());
        let positive_definite = sym.symmetric_eigenvalues().iter().all(|e| *e > 0.0);
        Self { matrix, temperature, chem, coupling, condition, positive_definite, onsager_defect }
    }

    /// Heat-heat entry.
    pub fn kappa(&self) -> f64 {
        self.matrix[0][0]
    }

    /// `c` in `κ = c / (R T²)`.
    pub fn c_constant(&self) -> f64 {
        self.kappa() * self.coupling * self.temperature * self.temperature
    }

    /// `−D · (∂T, ∂A)`.
    pub fn currents(&self, dt: f64, da: f64) -> [f64; 2] {
        let m = &self.matrix;
        [-(m[0][0] * dt + m[0][1] * da), -(m[1][0] * dt + m[1][1] * da)]
    }
}

/// Unit-temperature data at one chemical-potential node.
struct Node {
    /// `D · R` at this node.
    unit: [[f64; 2]; 2],
    /// `L_Q(1, A)`.
    matrix: DMatrix<f64>,
    solver: ComplementSolver,
}

/// Collision operator plus a lazily filled table of `D(1, A)` on
/// equally spaced `A` nodes. Temperature dependence is exact:
/// `D_{·T} ∝ T⁻²`, `D_{·A} ∝ T⁻¹`.
pub struct TransportModel {
    op: Arc<KineticCollision>,
    node_spacing: f64,
    condition_limit: f64,
    nodes: Mutex<BTreeMap<i64, Arc<Node>>>,
}

impl TransportModel {
    pub fn new(op: Arc<KineticCollision>) -> Self {
        Self { op, node_spacing: 0.05, condition_limit: DEFAULT_CONDITION_LIMIT, nodes: Mutex::new(BTreeMap::new()) }
    }

    pub fn with_node_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidParameter("node spacing must be positive".into()));
        }
        self.node_spacing = spacing;
        Ok(self)
    }

    pub fn with_condition_limit(mut self, limit: f64) -> Self {
        self.condition_limit = limit;
        self
    }

    pub fn operator(&self) -> &Arc<KineticCollision> {
        &self.op
    }

    pub fn mass_sq(&self) -> f64 {
        self.op.dispersion().mass_sq()
    }

    /// `R · D(T, A)` from the operator linearized at `(T, A)`.
    fn local_solve(&self, temperature: f64, chem: f64) -> Result<Node> {
        let lin = linearize(&self.op, temperature, chem)?;
        let solver = ComplementSolver::new(&lin, self.op.zero_modes(), self.condition_limit)?;
        let disp = self.op.dispersion();
        let v1 = disp.transport_velocity();
        let omega = disp.omegas();
        let w = self.op.grid().weight();
        let g_t: Vec<f64> = v1.iter().zip(omega).map(|(v, o)| v / (o - chem)).collect();
        let g_a: Vec<f64> = v1.iter().zip(omega).map(|(v, o)| v * temperature / ((o - chem) * (o - chem))).collect();
        let mut unit = [[0.0; 2]; 2];
        for (col, g) in [g_t, g_a].iter().enumerate() {
            let h = solver.solve(g)?;
            for (row, alpha) in [2, 1].into_iter().enumerate() {
                let j: f64 = (0..h.len()).map(|k| v1[k] * omega[k].powi(alpha) * h[k] * w).sum();
                unit[row][col] = -j;
            }
        }
        Ok(Node { unit, matrix: lin.matrix, solver })
    }

    fn node_index(&self, chem: f64) -> i64 {
        (chem / self.node_spacing).floor() as i64
    }

    fn node(&self, index: i64) -> Result<Arc<Node>> {
        if let Some(n) = self.nodes.lock().unwrap().get(&index) {
            return Ok(n.clone());
        }
        let chem = index as f64 * self.node_spacing;
        if !(chem < self.mass_sq()) {
            return Err(Error::InvalidParameter(format!("table node A = {chem} reaches m²")));
        }
        let node = Arc::new(self.local_solve(1.0, chem)?);
        Ok(self.nodes.lock().unwrap().entry(index).or_insert(node).clone())
    }

    /// Fill every node needed for `A ∈ [lo, hi]`.
    pub fn prefetch(&self, lo: f64, hi: f64) -> Result<()> {
        let (a, b) = (self.node_index(lo), self.node_index(hi) + 1);
        let missing: Vec<i64> = {
            let nodes = self.nodes.lock().unwrap();
            (a..=b).filter(|i| !nodes.contains_key(i)).collect()
        };
        let built = map_indices(missing.len(), |i| self.node(missing[i]).map(|_| ()));
        built.into_iter().collect()
    }

    /// Number of table nodes computed so far.
    pub fn table_size(&self) -> usize {
        self.nodes.lock().unwrap().len()
    }

    /// Exact `D(T, A)` at coupling `R`.
    pub fn diffusion_matrix(&self, temperature: f64, chem: f64, coupling: f64) -> Result<DiffusionMatrix> {
        check_state(temperature, chem, self.mass_sq())?;
        check_coupling(coupling)?;
        let node = self.local_solve(temperature, chem)?;
        let m = node.unit.map(|row| row.map(|x| x / coupling));
        Ok(DiffusionMatrix::from_entries(m, temperature, chem, coupling, node.solver.condition()))
    }

    /// `D(T, A)` with the `A` dependence interpolated linearly between
    /// table nodes; exact at the nodes.
    pub fn diffusion_interpolated(&self, temperature: f64, chem: f64, coupling: f64) -> Result<[[f64; 2]; 2]> {
        check_state(temperature, chem, self.mass_sq())?;
        let i = self.node_index(chem);
        let lo = self.node(i)?;
        let s = chem / self.node_spacing - i as f64;
        let unit = if s == 0.0 {
            lo.unit
        } else {
            let hi = self.node(i + 1)?;
            let mut u = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    u[r][c] = (1.0 - s) * lo.unit[r][c] + s * hi.unit[r][c];
                }
            }
            u
        };
        Ok(scale_unit(&unit, temperature, coupling))
    }

    /// Nearest table node.
    fn nearest_node(&self, chem: f64) -> Result<Arc<Node>> {
        self.node((chem / self.node_spacing).round() as i64)
    }
}

fn scale_unit(unit: &[[f64; 2]; 2], temperature: f64, coupling: f64) -> [[f64; 2]; 2] {
    let (t1, t2) = (1.0 / (temperature * coupling), 1.0 / (temperature * temperature * coupling));
    [[unit[0][0] * t2, unit[0][1] * t1], [unit[1][0] * t2, unit[1][1] * t1]]
}

fn check_state(temperature: f64, chem: f64, mass_sq: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
    }
    if !(chem < mass_sq) {
        return Err(Error::InvalidParameter(format!("A = {chem} must stay below m² = {mass_sq}")));
    }
    Ok(())
}

fn check_coupling(coupling: f64) -> Result<()> {
    if !(coupling > 0.0 && coupling.is_finite()) {
        return Err(Error::InvalidParameter(format!("coupling R must be positive, got {coupling}")));
    }
    Ok(())
}

/// `D(T, A)` for a given operator; see [`TransportModel::diffusion_matrix`].
pub fn diffusion_matrix(op: &Arc<KineticCollision>, temperature: f64, chem: f64, coupling: f64) -> Result<DiffusionMatrix> {
    TransportModel::new(op.clone()).diffusion_matrix(temperature, chem, coupling)
}

/// Profiles, currents and diagnostics of a stationary solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportResult {
    pub profile: LocalEquilibriumProfile,
    pub beta: Vec<f64>,
    /// Per-cell heat and number fluxes.
    pub heat_flux: Vec<f64>,
    pub number_flux: Vec<f64>,
    pub heat_current: f64,
    pub number_current: f64,
    pub kappa: f64,
    pub c_constant: f64,
    pub coupling: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `max|Jᵢ − J̄| / max|J|` over cells, heat current.
    pub flux_variation: f64,
    pub residual_history: Vec<f64>,
}

impl TransportResult {
    /// Max relative deviation of `β` from the straight line between the walls.
    pub fn beta_linearity(&self) -> f64 {
        let b = &self.beta;
        let n = b.len() - 1;
        let (b1, b2) = (b[0], b[n]);
        let x = &self.profile.x;
        b.iter()
            .zip(x)
            .map(|(bi, s)| {
                let line = b1 + s * (b2 - b1);
                (bi - line).abs() / line
            })
            .fold(0.0, f64::max)
    }

    /// Temperature at `x = 1/2`, interpolated if no node sits there.
    pub fn midpoint_temperature(&self) -> f64 {
        let t = &self.profile.temperature;
        let n = t.len() - 1;
        if n.is_multiple_of(2) {
            t[n / 2]
        } else {
            0.5 * (t[n / 2] + t[n / 2 + 1])
        }
    }
}

/// Settings for [`solve_hydro`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct HydroConfig {
    pub cells: usize,
    pub coupling: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Smallest Newton damping factor before giving up.
    pub damping_floor: f64,
    /// Largest admitted `|T₂ − T₁| / T₁`.
    pub max_relative_gap: f64,
}

impl Default for HydroConfig {
    fn default() -> Self {
        Self { cells: 32, coupling: 1.0, tolerance: 1e-10, max_iterations: 50, damping_floor: 1.0 / 1024.0, max_relative_gap: 0.5 }
    }
}

struct HydroSystem<'a> {
    model: &'a TransportModel,
    boundary: Boundary,
    cells: usize,
    coupling: f64,
    /// Additive flux corrections per cell, `[heat, number]`.
    correction: &'a [[f64; 2]],
}

impl HydroSystem<'_> {
    fn unknowns(&self) -> usize {
        2 * self.cells
    }

    /// Nodal `(T, A)` with the wall values filled in.
    fn nodal(&self, u: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.cells;
        let mut t = vec![0.0; n + 1];
        let mut a = vec![0.0; n + 1];
        t[0] = self.boundary.t_left;
        t[n] = self.boundary.t_right;
        a[0] = self.boundary.a_left;
        a[n] = self.boundary.a_right;
        for i in 1..n {
            t[i] = u[i - 1];
            a[i] = u[n - 1 + i - 1];
        }
        (t, a)
    }

    fn pack(&self, t: &[f64], a: &[f64], flux: [f64; 2]) -> DVector<f64> {
        let n = self.cells;
        let mut u = DVector::zeros(self.unknowns());
        for i in 1..n {
            u[i - 1] = t[i];
            u[n - 1 + i - 1] = a[i];
        }
        u[2 * n - 2] = flux[0];
        u[2 * n - 1] = flux[1];
        u
    }

    fn admissible(&self, u: &DVector<f64>) -> bool {
        let (t, a) = self.nodal(u);
        let m2 = self.model.mass_sq();
        t.iter().all(|x| *x > 0.0 && x.is_finite()) && a.iter().all(|x| *x < m2 && x.is_finite())
    }

    fn cell_fluxes(&self, t: &[f64], a: &[f64]) -> Result<Vec<[f64; 2]>> {
        let n = self.cells;
        let dx = 1.0 / n as f64;
        (0..n)
            .map(|c| {
                let (tc, ac) = (0.5 * (t[c] + t[c + 1]), 0.5 * (a[c] + a[c + 1]));
                let d = self.model.diffusion_interpolated(tc, ac, self.coupling)?;
                let (gt, ga) = ((t[c + 1] - t[c]) / dx, (a[c + 1] - a[c]) / dx);
                let r = self.correction.get(c).copied().unwrap_or([0.0; 2]);
                Ok([-(d[0][0] * gt + d[0][1] * ga) + r[0], -(d[1][0] * gt + d[1][1] * ga) + r[1]])
            })
            .collect()
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.cells;
        let (t, a) = self.nodal(u);
        let fluxes = self.cell_fluxes(&t, &a)?;
        let mut r = DVector::zeros(2 * n);
        for (c, f) in fluxes.iter().enumerate() {
            r[2 * c] = u[2 * n - 2] - f[0];
            r[2 * c + 1] = u[2 * n - 1] - f[1];
        }
        Ok(r)
    }

    fn jacobian(&self, u: &DVector<f64>, r0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = self.unknowns();
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let h = 1e-7 * u[j].abs().max(1e-3);
            let mut up = u.clone();
            up[j] += h;
            let rp = self.residual(&up)?;
            jac.set_column(j, &((rp - r0) / h));
        }
        Ok(jac)
    }
}

/// Damped Newton on the flux-constancy system. Returns the solution vector,
/// residual history and iteration count.
fn newton(sys: &HydroSystem<'_>, mut u: DVector<f64>, cfg: &HydroConfig, scale: f64) -> Result<(DVector<f64>, Vec<f64>, usize)> {
    let mut r = sys.residual(&u)?;
    let mut history = vec![r.amax()];
    for it in 0..cfg.max_iterations {
        if r.amax() <= cfg.tolerance * scale {
            return Ok((u, history, it));
        }
        let jac = sys.jacobian(&u, &r)?;
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| Error::Singular("hydro Newton Jacobian".into()))?;
        let mut alpha = 1.0;
        loop {
            let trial = &u + alpha * &step;
            if sys.admissible(&trial) {
                let rt = sys.residual(&trial)?;
                if rt.amax() < (1.0 - 1e-4 * alpha) * r.amax() || rt.amax() <= cfg.tolerance * scale {
                    u = trial;
                    r = rt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < cfg.damping_floor {
                let (t, a) = sys.nodal(&(&u + 2.0 * alpha * &step));
                let bad = !t.iter().all(|x| *x > 0.0) || !a.iter().all(|x| *x < sys.model.mass_sq());
                if bad {
                    return Err(Error::InvariantViolation("damping floor reached with T ≤ 0 or A ≥ m²".into()));
                }
                return Err(Error::NoConvergence { iterations: it + 1, residual: r.amax(), history });
            }
        }
        history.push(r.amax());
    }
    if r.amax() <= cfg.tolerance * scale {
        return Ok((u, history, cfg.max_iterations));
    }
    Err(Error::NoConvergence { iterations: cfg.max_iterations, residual: r.amax(), history })
}

fn flux_scale(model: &TransportModel, boundary: &Boundary, coupling: f64) -> Result<f64> {
    let d = model.diffusion_interpolated(boundary.t_left, boundary.a_left, coupling)?;
    let dmax = d.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = (boundary.t_right - boundary.t_left).abs() + (boundary.a_right - boundary.a_left).abs();
    Ok(dmax * gap.max(f64::MIN_POSITIVE))
}

fn hydro_with_correction(
    model: &TransportModel,
    boundary: Boundary,
    cfg: &HydroConfig,
    correction: &[[f64; 2]],
    start: Option<&LocalEquilibriumProfile>,
) -> Result<(LocalEquilibriumProfile, [f64; 2], Vec<f64>, usize)> {
    let sys = HydroSystem { model, boundary, cells: cfg.cells, coupling: cfg.coupling, correction };
    let init = match start {
        Some(p) => p.clone(),
        None => LocalEquilibriumProfile::linear_beta(boundary, cfg.cells),
    };
    let lo = init.chem.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = init.chem.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    model.prefetch(lo, hi)?;
    let f0 = sys.cell_fluxes(&init.temperature, &init.chem)?;
    let mean = f0.iter().fold([0.0; 2], |s, f| [s[0] + f[0], s[1] + f[1]]);
    let n = cfg.cells as f64;
    let u0 = sys.pack(&init.temperature, &init.chem, [mean[0] / n, mean[1] / n]);
    let scale = flux_scale(model, &boundary, cfg.coupling)?;
    let (u, history, iterations) = newton(&sys, u0, cfg, scale)?;
    let (t, a) = sys.nodal(&u);
    let profile = LocalEquilibriumProfile { x: init.x.clone(), temperature: t, chem: a, boundary };
    let m = u.len();
    Ok((profile, [u[m - 2], u[m - 1]], history, iterations))
}

fn check_hydro(model: &TransportModel, boundary: &Boundary, cfg: &HydroConfig) -> Result<()> {
    boundary.check(model.mass_sq())?;
    check_coupling(cfg.coupling)?;
    if cfg.cells < 2 {
        return Err(Error::InvalidParameter("need at least two cells".into()));
    }
    let gap = (boundary.t_right - boundary.t_left).abs() / boundary.t_left;
    if gap > cfg.max_relative_gap {
        return Err(Error::InvalidParameter(format!(
            "|ΔT|/T = {gap} exceeds the admitted {}",
            cfg.max_relative_gap
        )));
    }
    Ok(())
}

/// κ from `−J¹ / ∂ₓT` at the midpoint, or from the local matrix when the
/// gradient vanishes.
fn midpoint_kappa(model: &TransportModel, profile: &LocalEquilibriumProfile, heat: f64, coupling: f64) -> Result<(f64, f64)> {
    let n = profile.x.len() - 1;
    let (t, a) = (&profile.temperature, &profile.chem);
    let (tm, am, grad) = if n.is_multiple_of(2) {
        let h = 2.0 / n as f64;
        (t[n / 2], a[n / 2], (t[n / 2 + 1] - t[n / 2 - 1]) / h)
    } else {
        let c = n / 2;
        (0.5 * (t[c] + t[c + 1]), 0.5 * (a[c] + a[c + 1]), (t[c + 1] - t[c]) * n as f64)
    };
    let kappa = if grad != 0.0 { -heat / grad } else { model.diffusion_interpolated(tm, am, coupling)?[0][0] };
    Ok((kappa, kappa * coupling * tm * tm))
}

fn variation(f: &[f64]) -> f64 {
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let dev = f.iter().fold(0.0f64, |m, x| m.max((x - mean).abs()));
    let top = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if top == 0.0 {
        0.0
    } else {
        dev / top
    }
}

/// Stationary hydrodynamic profiles `∂ₓ(D ∇(T, A)) = 0` with wall values.
///
/// After Newton converges on the interpolated table, the fluxes are
/// recomputed with exact `D` at each distinct midpoint `A`; the reported
/// `flux_variation` comes from that pass.
pub fn solve_hydro(model: &TransportModel, boundary: Boundary, cfg: &HydroConfig) -> Result<TransportResult> {
    check_hydro(model, &boundary, cfg)?;
    let (profile, flux, history, iterations) = hydro_with_correction(model, boundary, cfg, &[], None)?;
    let exact = exact_fluxes(model, &profile, cfg.coupling)?;
    let heat: Vec<f64> = exact.iter().map(|f| f[0]).collect();
    let number: Vec<f64> = exact.iter().map(|f| f[1]).collect();
    let (kappa, c_constant) = midpoint_kappa(model, &profile, flux[0], cfg.coupling)?;
    Ok(TransportResult {
        beta: profile.beta(),
        flux_variation: variation(&heat),
        heat_flux: heat,
        number_flux: number,
        heat_current: flux[0],
        number_current: flux[1],
        kappa,
        c_constant,
        coupling: cfg.coupling,
        residual: *history.last().unwrap(),
        iterations,
        residual_history: history,
        profile,
    })
}

/// Cell fluxes with exact `D` at every distinct midpoint state.
fn exact_fluxes(model: &TransportModel, profile: &LocalEquilibriumProfile, coupling: f64) -> Result<Vec<[f64; 2]>> {
    let n = profile.x.len() - 1;
    let dx = 1.0 / n as f64;
    let (t, a) = (&profile.temperature, &profile.chem);
    let mut unit: BTreeMap<u64, [[f64; 2]; 2]> = BTreeMap::new();
    for c in 0..n {
        let ac = 0.5 * (a[c] + a[c + 1]);
        if let std::collections::btree_map::Entry::Vacant(e) = unit.entry(ac.to_bits()) {
            e.insert(model.diffusion_matrix(1.0, ac, 1.0)?.matrix);
        }
    }
    Ok((0..n)
        .map(|c| {
            let (tc, ac) = (0.5 * (t[c] + t[c + 1]), 0.5 * (a[c] + a[c + 1]));
            let d = scale_unit(&unit[&ac.to_bits()], tc, coupling);
            let (gt, ga) = ((t[c + 1] - t[c]) / dx, (a[c + 1] - a[c]) / dx);
            [-(d[0][0] * gt + d[0][1] * ga), -(d[1][0] * gt + d[1][1] * ga)]
        })
        .collect())
}

/// Settings for [`solve_kinetic_bvp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct KineticConfig {
    pub cells: usize,
    pub coupling: f64,
    /// Relative residual of the collision equation off the conserved moments.
    pub tolerance: f64,
    /// Relative spread of the cell currents.
    pub current_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self { cells: 16, coupling: 1.0, tolerance: 1e-8, current_tolerance: 1e-6, max_iterations: 100 }
    }
}

/// Solution of the stationary kinetic equation on cell midpoints.
#[derive(Debug, Clone)]
pub struct KineticSolution {
    pub state: KineticState,
    pub transport: TransportResult,
    /// Relative complement residual per iteration.
    pub residual_history: Vec<f64>,
}

/// Upwind streaming `v₁ ∂ₓ` on cell values with equilibrium inflow
/// (`δV = 0`) through the walls, one half cell away.
struct Streaming {
    cells: usize,
    dx: f64,
    velocity: Vec<f64>,
}

impl Streaming {
    fn apply(&self, f: &[Vec<f64>], c: usize, k: usize) -> f64 {
        let v = self.velocity[k];
        let n = self.cells;
        if v > 0.0 {
            if c == 0 {
                v * f[0][k] / (0.5 * self.dx)
            } else {
                v * (f[c][k] - f[c - 1][k]) / self.dx
            }
        } else if c == n - 1 {
            -v * f[c][k] / (0.5 * self.dx)
        } else {
            v * (f[c + 1][k] - f[c][k]) / self.dx
        }
    }

    /// Diagonal, lower and upper coefficients at cell `c` and mode `k`.
    fn stencil(&self, c: usize, k: usize) -> (f64, f64, f64) {
        let v = self.velocity[k];
        let n = self.cells;
        if v > 0.0 {
            let h = if c == 0 { 0.5 * self.dx } else { self.dx };
            (v / h, -v / self.dx, 0.0)
        } else {
            let h = if c == n - 1 { 0.5 * self.dx } else { self.dx };
            (-v / h, 0.0, v / self.dx)
        }
    }
}

/// Block-tridiagonal Newton matrix for the cell deviations `h_c`
/// (`δV_c = ω h_c`), each block bordered by the zero-mode constraint.
struct BlockSystem {
    n: usize,
    lu: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// `Ã_c⁻¹ C_c`.
    upper: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
}

impl BlockSystem {
    fn build(
        model: &TransportModel,
        stream: &Streaming,
        projector: &DMatrix<f64>,
        cells: &[(f64, f64)],
        coupling: f64,
    ) -> Result<Self> {
        let op = model.operator();
        let omega = op.dispersion().omegas();
        let nk = omega.len();
        let m = nk + 2;
        let w = op.grid().weight();
        let modes = op.zero_modes().modes();
        let mut lu = Vec::with_capacity(cells.len());
        let mut upper: Vec<DMatrix<f64>> = Vec::with_capacity(cells.len());
        let mut lower = Vec::with_capacity(cells.len());
        for (c, &(tc, ac)) in cells.iter().enumerate() {
            let node = model.nearest_node(ac)?;
            let mut a = DMatrix::zeros(m, m);
            let mut b = DMatrix::zeros(m, m);
            let mut u = DMatrix::zeros(m, m);
            let s = coupling * tc * tc;
            for col in 0..nk {
                let (d, lo, up) = stream.stencil(c, col);
                for row in 0..nk {
                    let p = projector[(row, col)] * omega[col];
                    a[(row, col)] = p * d - s * node.matrix[(row, col)];
                    b[(row, col)] = p * lo;
                    u[(row, col)] = p * up;
                }
            }
            let scale = a.view((0, 0), (nk, nk)).amax().max(f64::MIN_POSITIVE);
            for (j, z) in modes.iter().enumerate() {
                let zmax = z.iter().fold(0.0f64, |x, y| x.max(y.abs()));
                let w3: Vec<f64> = z.iter().zip(omega).map(|(zz, o)| zz * o.powi(3) * w).collect();
                let w3max = w3.iter().fold(0.0f64, |x, y| x.max(y.abs()));
                for r in 0..nk {
                    a[(r, nk + j)] = z[r] * scale / zmax;
                    a[(nk + j, r)] = w3[r] * scale / w3max;
                }
            }
            if c > 0 {
                a -= &b * &upper[c - 1];
            }
            let f = a.lu();
            let g = f.solve(&u).ok_or_else(|| Error::Singular("kinetic block".into()))?;
            lu.push(f);
            upper.push(g);
            lower.push(b);
        }
        Ok(Self { n: cells.len(), lu, upper, lower })
    }

    /// Solve for all cells; `rhs[c]` has the `nk` equation rows.
    fn solve(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let nk = rhs[0].len();
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(self.n);
        for c in 0..self.n {
            let mut b = DVector::zeros(nk + 2);
            b.rows_mut(0, nk).copy_from_slice(&rhs[c]);
            if c > 0 {
                b -= &self.lower[c] * &z[c - 1];
            }
            z.push(self.lu[c].solve(&b).ok_or_else(|| Error::Singular("kinetic block".into()))?);
        }
        for c in (0..self.n - 1).rev() {
            let next = z[c + 1].clone();
            z[c] -= &self.upper[c] * next;
        }
        Ok(z.into_iter().map(|y| y.rows(0, nk).iter().copied().collect()).collect())
    }
}

/// `v₁ ∂ₓV = R N(V)` with `V = V_{T(x),A(x)} + δV`.
///
/// Nodal `T`, `A` carry the conserved part and take the wall values; `δV`
/// lives at cell midpoints, vanishes on particles entering through a wall,
/// and solves `P[v₁ ∂ₓV] = R [N(V) − N(V_{T,A})]`. Each iteration takes one
/// Newton step in `δV` and then re-solves the profiles from flux constancy,
/// with the fluxes shifted by the gap between the kinetic and the
/// linear-response currents.
pub fn solve_kinetic_bvp(model: &TransportModel, boundary: Boundary, cfg: &KineticConfig) -> Result<KineticSolution> {
    let hydro_cfg = HydroConfig { cells: cfg.cells, coupling: cfg.coupling, ..HydroConfig::default() };
    check_hydro(model, &boundary, &hydro_cfg)?;
    if cfg.cells < 8 {
        return Err(Error::InvalidParameter("kinetic solve needs at least 8 cells".into()));
    }
    let op = model.operator();
    let disp = op.dispersion();
    let nk = op.grid().len();
    let omega = disp.omegas();
    let v1 = disp.transport_velocity();
    let w = op.grid().weight();
    let n = cfg.cells;
    let dx = 1.0 / n as f64;
    let r = cfg.coupling;
    let stream = Streaming { cells: n, dx, velocity: v1.clone() };
    let mut projector = DMatrix::identity(nk, nk);
    for mut col in projector.column_iter_mut() {
        let mut c: Vec<f64> = col.iter().copied().collect();
        op.zero_modes().project_in_place(&mut c);
        col.copy_from_slice(&c);
    }
    let moments = |f: &[f64]| -> [f64; 2] {
        let mut j = [0.0; 2];
        for k in 0..nk {
            j[0] += v1[k] * omega[k] * f[k] * w;
            j[1] += v1[k] * f[k] * w;
        }
        j
    };

    let (mut profile, _, _, _) = hydro_with_correction(model, boundary, &hydro_cfg, &[], None)?;
    let mut dv = vec![vec![0.0; nk]; n];
    let mut history = Vec::new();
    let mut mixer = Anderson::new(5);
    for iteration in 0..=cfg.max_iterations {
        let (t, a) = (&profile.temperature, &profile.chem);
        let mids: Vec<(f64, f64)> = (0..n).map(|c| (0.5 * (t[c] + t[c + 1]), 0.5 * (a[c] + a[c + 1]))).collect();
        let nodal: Vec<Vec<f64>> = (0..=n).map(|i| equilibrium_field(disp, t[i], a[i])).collect::<Result<_>>()?;
        let mut drive_norm = 0.0f64;
        let mut res_norm = 0.0f64;
        let mut residuals = Vec::with_capacity(n);
        for (c, &(tc, ac)) in mids.iter().enumerate() {
            let v0 = equilibrium_field(disp, tc, ac)?;
            let mut drive: Vec<f64> =
                (0..nk).map(|k| v1[k] * (nodal[c + 1][k] - nodal[c][k]) / dx + stream.apply(&dv, c, k)).collect();
            op.zero_modes().project_in_place(&mut drive);
            let dn = op.evaluate_increment(&v0, &dv[c])?;
            let res: Vec<f64> = drive.iter().zip(&dn).map(|(d, x)| d - r * x).collect();
            drive_norm = drive_norm.max(drive.iter().fold(0.0, |m, x| m.max(x.abs())));
            res_norm = res_norm.max(res.iter().fold(0.0, |m, x| m.max(x.abs())));
            residuals.push(res.iter().map(|x| -x).collect::<Vec<f64>>());
        }
        let rel = if drive_norm > 0.0 { res_norm / drive_norm } else { 0.0 };
        history.push(rel);
        let currents: Vec<[f64; 2]> = dv.iter().map(|d| moments(d)).collect();
        let spread = variation(&currents.iter().map(|j| j[0]).collect::<Vec<_>>());
        if rel <= cfg.tolerance && spread <= cfg.current_tolerance {
            return finish(model, profile, dv, currents, cfg, iteration, history, rel);
        }
        if iteration == cfg.max_iterations {
            break;
        }

        let before = pack_state(&profile, &dv);
        let system = BlockSystem::build(model, &stream, &projector, &mids, r)?;
        let steps = system.solve(&residuals)?;
        for (d, h) in dv.iter_mut().zip(&steps) {
            for k in 0..nk {
                d[k] += omega[k] * h[k];
            }
        }

        let correction: Vec<[f64; 2]> = mids
            .iter()
            .enumerate()
            .map(|(c, &(tc, ac))| {
                let d = model.diffusion_interpolated(tc, ac, r)?;
                let (gt, ga) = ((t[c + 1] - t[c]) / dx, (a[c + 1] - a[c]) / dx);
                let lin = [-(d[0][0] * gt + d[0][1] * ga), -(d[1][0] * gt + d[1][1] * ga)];
                let j = moments(&dv[c]);
                Ok([j[0] - lin[0], j[1] - lin[1]])
            })
            .collect::<Result<_>>()?;
        profile = hydro_with_correction(model, boundary, &hydro_cfg, &correction, Some(&profile))?.0;
        let mapped = pack_state(&profile, &dv);
        let mixed = mixer.update(before, mapped);
        let (trial, trial_dv) = unpack_state(&profile, &mixed, nk);
        if trial.validate(model.mass_sq()).is_ok() {
            profile = trial;
            dv = trial_dv;
        } else {
            mixer.reset();
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iterations,
        residual: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

fn pack_state(profile: &LocalEquilibriumProfile, dv: &[Vec<f64>]) -> DVector<f64> {
    let n = profile.x.len() - 1;
    let inner = n - 1;
    let mut x = Vec::with_capacity(2 * inner + dv.len() * dv[0].len());
    x.extend_from_slice(&profile.temperature[1..n]);
    x.extend_from_slice(&profile.chem[1..n]);
    for d in dv {
        x.extend_from_slice(d);
    }
    DVector::from_vec(x)
}

fn unpack_state(like: &LocalEquilibriumProfile, x: &DVector<f64>, nk: usize) -> (LocalEquilibriumProfile, Vec<Vec<f64>>) {
    let n = like.x.len() - 1;
    let inner = n - 1;
    let mut p = like.clone();
    p.temperature[1..n].copy_from_slice(&x.as_slice()[..inner]);
    p.chem[1..n].copy_from_slice(&x.as_slice()[inner..2 * inner]);
    let dv = x.as_slice()[2 * inner..].chunks(nk).map(|c| c.to_vec()).collect();
    (p, dv)
}

/// Anderson mixing for a fixed-point map `x ↦ g(x)`.
struct Anderson {
    depth: usize,
    last: Option<(DVector<f64>, DVector<f64>)>,
    df: Vec<DVector<f64>>,
    dg: Vec<DVector<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self { depth, last: None, df: Vec::new(), dg: Vec::new() }
    }

    fn reset(&mut self) {
        self.last = None;
        self.df.clear();
        self.dg.clear();
    }

    fn update(&mut self, x: DVector<f64>, g: DVector<f64>) -> DVector<f64> {
        let f = &g - &x;
        if let Some((f_old, g_old)) = self.last.take() {
            self.df.push(&f - f_old);
            self.dg.push(&g - g_old);
            if self.df.len() > self.depth {
                self.df.remove(0);
                self.dg.remove(0);
            }
        }
        self.last = Some((f.clone(), g.clone()));
        if self.df.is_empty() {
            return g;
        }
        let m = self.df.len();
        let a = DMatrix::from_fn(f.len(), m, |r, c| self.df[c][r]);
        let Ok(gamma) = a.svd(true, true).solve(&f, 1e-12) else { return g };
        let mut out = g;
        for (c, dg) in self.dg.iter().enumerate() {
            out -= gamma[c] * dg;
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &TransportModel,
    profile: LocalEquilibriumProfile,
    dv: Vec<Vec<f64>>,
    currents: Vec<[f64; 2]>,
    cfg: &KineticConfig,
    iterations: usize,
    history: Vec<f64>,
    residual: f64,
) -> Result<KineticSolution> {
    let op = model.operator();
    let disp = op.dispersion();
    let n = cfg.cells;
    let (t, a) = (&profile.temperature, &profile.chem);
    let mut x = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * op.grid().len());
    for c in 0..n {
        x.push((c as f64 + 0.5) / n as f64);
        let v0 = equilibrium_field(disp, 0.5 * (t[c] + t[c + 1]), 0.5 * (a[c] + a[c + 1]))?;
        values.extend(v0.iter().zip(&dv[c]).map(|(u, d)| u + d));
    }
    let heat: Vec<f64> = currents.iter().map(|j| j[0]).collect();
    let number: Vec<f64> = currents.iter().map(|j| j[1]).collect();
    let heat_current = heat.iter().sum::<f64>() / n as f64;
    let number_current = number.iter().sum::<f64>() / n as f64;
    let (kappa, c_constant) = midpoint_kappa(model, &profile, heat_current, cfg.coupling)?;
    let transport = TransportResult {
        beta: profile.beta(),
        flux_variation: variation(&heat),
        heat_flux: heat,
        number_flux: number,
        heat_current,
        number_current,
        kappa,
        c_constant,
        coupling: cfg.coupling,
        residual,
        iterations,
        residual_history: history.clone(),
        profile,
    };
    Ok(KineticSolution { state: KineticState::new(x, values, cfg.coupling)?, transport, residual_history: history })
}

/// `max|T_a − T_b| / |T₂ − T₁|` over shared nodes.
pub fn profile_discrepancy(a: &LocalEquilibriumProfile, b: &LocalEquilibriumProfile) -> Result<f64> {
    if a.x != b.x {
        return Err(Error::ShapeMismatch("profiles live on different grids".into()));
    }
    let gap = (a.boundary.t_right - a.boundary.t_left).abs();
    let dev = a.temperature.iter().zip(&b.temperature).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(if gap > 0.0 { dev / gap } else { dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{scaling_transfer, CollisionConfig};
    use crate::lattice::{build_grid, Dispersion, Regularization};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn model(dim: usize, m: usize) -> TransportModel {
        let grid = Arc::new(build_grid(dim, m, None).unwrap());
        let disp = Arc::new(Dispersion::new(&grid, 1.0).unwrap());
        let reg = Regularization::from_level_spacing(&disp, 2.0).unwrap();
        TransportModel::new(Arc::new(KineticCollision::new(grid, disp, CollisionConfig::new(reg)).unwrap()))
    }

    fn shared() -> &'static TransportModel {
        static MODEL: OnceLock<TransportModel> = OnceLock::new();
        MODEL.get_or_init(|| model(2, 8))
    }

    #[test]
    fn kappa_scales_as_inverse_temperature_squared() {
        let m = shared();
        let d1 = m.diffusion_matrix(1.0, 0.0, 1.0).unwrap();
        let d2 = m.diffusion_matrix(2.0, 0.0, 1.0).unwrap();
        assert!((d2.kappa() / d1.kappa() - 0.25).abs() <= 1e-8);
        assert!((d2.c_constant() - d1.c_constant()).abs() <= 1e-8 * d1.c_constant());
        assert!(d1.kappa() > 0.0);
        for r in 0..2 {
            assert!((d2.matrix[r][1] / d1.matrix[r][1] - 0.5).abs() <= 1e-8);
        }
    }

    #[test]
    fn kappa_scales_as_inverse_coupling() {
        let m = shared();
        let (lam, n) = (0.1, 100);
        let a = m.diffusion_matrix(1.0, 0.0, scaling_transfer(lam, n)).unwrap();
        let b = m.diffusion_matrix(1.0, 0.0, scaling_transfer(2.0 * lam, n)).unwrap();
        assert!((b.kappa() / a.kappa() - 0.25).abs() <= 1e-8);
    }

    #[test]
    fn table_is_exact_at_nodes_and_between_in_temperature() {
        let m = shared();
        for (t, a) in [(0.7, 0.0), (1.9, -0.05), (1.3, 0.1)] {
            let exact = m.diffusion_matrix(t, a, 2.0).unwrap().matrix;
            let table = m.diffusion_interpolated(t, a, 2.0).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    assert!((exact[r][c] - table[r][c]).abs() <= 1e-9 * exact[0][0].abs(), "{t} {a}");
                }
            }
        }
    }

    #[test]
    fn diffusion_reports_are_filled() {
        let d = shared().diffusion_matrix(1.0, 0.0, 1.0).unwrap();
        assert!(d.condition.is_finite() && d.condition >= 1.0);
        assert!(d.onsager_defect.is_finite());
        assert!(d.matrix.iter().flatten().all(|x| x.is_finite()));
        assert!(shared().diffusion_matrix(1.0, 1.0, 1.0).is_err());
        assert!(shared().diffusion_matrix(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn hydro_equal_walls_is_equilibrium() {
        let b = Boundary { t_left: 1.3, t_right: 1.3, a_left: 0.1, a_right: 0.1 };
        let r = solve_hydro(shared(), b, &HydroConfig::default()).unwrap();
        assert!(r.profile.temperature.iter().all(|t| *t == 1.3));
        assert!(r.profile.chem.iter().all(|a| *a == 0.1));
        assert_eq!(r.heat_current, 0.0);
        assert_eq!(r.number_current, 0.0);
        assert!(r.kappa > 0.0);
    }

    #[test]
    fn hydro_beta_profile_straightens_with_smaller_gap() {
        let cfg = HydroConfig::default();
        let mut prev = None;
        for dt in [0.25, 0.125, 0.0625] {
            let r = solve_hydro(shared(), Boundary::temperatures(1.0, 1.0 + dt), &cfg).unwrap();
            let beta_mid = 0.5 * (1.0 + 1.0 / (1.0 + dt));
            let mid = r.midpoint_temperature();
            assert!((mid - 1.0 / beta_mid).abs() < (mid - (1.0 + 0.5 * dt)).abs());
            let dev = r.beta_linearity();
            if let Some(p) = prev {
                assert!(p / dev >= 1.4, "{p} → {dev}");
            }
            prev = Some(dev);
            assert!(r.flux_variation <= 1e-10);
            r.profile.validate(1.0).unwrap();
        }
    }

    #[test]
    fn heat_flows_from_hot_to_cold() {
        let m = shared();
        let cfg = HydroConfig { cells: 16, ..HydroConfig::default() };
        let forward = solve_hydro(m, Boundary::temperatures(1.2, 1.0), &cfg).unwrap();
        let backward = solve_hydro(m, Boundary::temperatures(1.0, 1.2), &cfg).unwrap();
        assert!(forward.heat_current > 0.0 && backward.heat_current < 0.0);
        assert!(forward.kappa > 0.0 && backward.kappa > 0.0);
        assert!((forward.heat_current + backward.heat_current).abs() <= 1e-9 * forward.heat_current);
    }

    #[test]
    fn hydro_rejects_bad_input() {
        let m = shared();
        let cfg = HydroConfig::default();
        assert!(solve_hydro(m, Boundary::temperatures(1.0, 2.0), &cfg).is_err());
        assert!(solve_hydro(m, Boundary::temperatures(-1.0, 1.0), &cfg).is_err());
        let b = Boundary { a_left: 1.5, ..Boundary::temperatures(1.0, 1.1) };
        assert!(solve_hydro(m, b, &cfg).is_err());
    }

    #[test]
    fn kinetic_equal_walls_is_local_equilibrium() {
        let m = shared();
        let b = Boundary::temperatures(1.1, 1.1);
        let sol = solve_kinetic_bvp(m, b, &KineticConfig { cells: 8, coupling: 2.0, ..KineticConfig::default() }).unwrap();
        let v0 = equilibrium_field(m.operator().dispersion(), 1.1, 0.0).unwrap();
        for i in 0..sol.state.x.len() {
            assert_eq!(sol.state.at(i), v0.as_slice());
        }
        assert_eq!(sol.transport.heat_current, 0.0);
        assert_eq!(sol.transport.iterations, 0);
    }

    #[test]
    fn kinetic_profiles_approach_hydro_as_coupling_grows() {
        let m = shared();
        let b = Boundary::temperatures(1.0, 1.2);
        let mut prev = f64::INFINITY;
        for r in [1.0, 4.0, 16.0] {
            let k = solve_kinetic_bvp(m, b, &KineticConfig { cells: 8, coupling: r, ..KineticConfig::default() }).unwrap();
            let h = solve_hydro(m, b, &HydroConfig { cells: 8, coupling: r, ..HydroConfig::default() }).unwrap();
            assert!(k.transport.flux_variation <= 1e-6);
            assert!(k.transport.heat_current < 0.0);
            let gap = profile_discrepancy(&h.profile, &k.transport.profile).unwrap();
            assert!(gap < prev, "R = {r}: {gap} after {prev}");
            prev = gap;
        }
        assert!(prev <= 0.05);
    }

    #[test]
    fn kinetic_needs_enough_cells() {
        let cfg = KineticConfig { cells: 4, ..KineticConfig::default() };
        assert!(solve_kinetic_bvp(shared(), Boundary::temperatures(1.0, 1.1), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn temperature_scaling_holds_for_any_base(t in 0.3f64..3.0, s in 0.3f64..3.0) {
            let m = shared();
            let a = m.diffusion_interpolated(t, 0.0, 1.0).unwrap();
            let b = m.diffusion_interpolated(t * s, 0.0, 1.0).unwrap();
            prop_assert!((b[0][0] * s * s - a[0][0]).abs() <= 1e-12 * a[0][0].abs());
            prop_assert!((b[1][1] * s - a[1][1]).abs() <= 1e-12 * a[1][1].abs());
        }

        #[test]
        fn currents_are_linear_in_gradients(gt in -1.0f64..1.0, ga in -1.0f64..1.0) {
            let d = shared().diffusion_matrix(1.0, 0.0, 1.0).unwrap();
            let j = d.currents(gt, ga);
            let (jt, ja) = (d.currents(gt, 0.0), d.currents(0.0, ga));
            prop_assert!((j[0] - jt[0] - ja[0]).abs() <= 1e-12 * d.kappa());
            prop_assert!((j[1] - jt[1] - ja[1]).abs() <= 1e-12 * d.kappa());
        }
    }
}
