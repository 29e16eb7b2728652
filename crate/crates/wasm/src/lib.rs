//! Browser bindings: each entry point takes plain numbers and returns a JSON
//! document for the page to plot.

use std::f64::consts::PI;
use std::sync::Arc;

use fourier_closure::collision::{CollisionConfig, KineticCollision};
use fourier_closure::langevin::{lyapunov_oracle, ChainConfig};
use fourier_closure::lattice::{build_grid, omega_at, Dispersion, Regularization};
use fourier_closure::transport::{solve_hydro, Boundary, HydroConfig, TransportModel};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Keeps a single hydro solve to a few seconds in the browser.
pub const MAX_HYDRO_POINTS: usize = 216;
pub const MAX_ORACLE_LENGTH: usize = 64;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `ω` and `v₁` along the first axis, plus the sorted levels of the grid.
pub fn dispersion_json(dim: usize, points_per_axis: usize, mass_sq: f64, samples: usize) -> Result<Value, String> {
    let grid = build_grid(dim, points_per_axis, None).map_err(err)?;
    let disp = Dispersion::new(&grid, mass_sq).map_err(err)?;
    let samples = samples.clamp(2, 2000);
    let mut k = Vec::with_capacity(samples);
    let mut omega = Vec::with_capacity(samples);
    let mut velocity = Vec::with_capacity(samples);
    for s in 0..samples {
        let k0 = -PI + 2.0 * PI * s as f64 / (samples - 1) as f64;
        let mut point = vec![0.0; dim];
        point[0] = k0;
        k.push(k0);
        omega.push(omega_at(mass_sq, &point));
        velocity.push(2.0 * k0.sin());
    }
    let mut levels = disp.omegas().to_vec();
    levels.sort_by(f64::total_cmp);
    Ok(json!({ "k": k, "omega": omega, "velocity": velocity, "levels": levels }))
}

/// Stationary hydrodynamic profile between two walls at `A = 0`.
pub fn hydro_json(
    dim: usize,
    points_per_axis: usize,
    t_left: f64,
    t_right: f64,
    cells: usize,
    coupling: f64,
) -> Result<Value, String> {
    let grid = Arc::new(build_grid(dim, points_per_axis, None).map_err(err)?);
    if grid.len() > MAX_HYDRO_POINTS {
        return Err(format!("at most {MAX_HYDRO_POINTS} grid points in the browser"));
    }
    let disp = Arc::new(Dispersion::new(&grid, 1.0).map_err(err)?);
    let reg = Regularization::from_level_spacing(&disp, 2.0).map_err(err)?;
    let op = KineticCollision::new(grid, disp, CollisionConfig::new(reg)).map_err(err)?;
    let model = TransportModel::new(Arc::new(op));
    let cfg = HydroConfig { cells, coupling, ..HydroConfig::default() };
    let r = solve_hydro(&model, Boundary::temperatures(t_left, t_right), &cfg).map_err(err)?;
    let equal = t_left == t_right;
    Ok(json!({
        "x": r.profile.x,
        "temperature": r.profile.temperature,
        "beta": r.beta,
        "heat_current": r.heat_current,
        "kappa": if equal { Value::Null } else { json!(r.kappa) },
        "c_constant": if equal { Value::Null } else { json!(r.c_constant) },
        "beta_linearity": r.beta_linearity(),
        "iterations": r.iterations,
    }))
}

/// Exact stationary temperatures and currents of the harmonic chain.
pub fn oracle_json(length: usize, t_left: f64, t_right: f64, gamma: f64) -> Result<Value, String> {
    if length > MAX_ORACLE_LENGTH {
        return Err(format!("at most {MAX_ORACLE_LENGTH} sites in the browser"));
    }
    let mut cfg = ChainConfig::chain(length, 0.0, t_left, t_right);
    cfg.gamma = gamma;
    let r = lyapunov_oracle(&cfg).map_err(err)?;
    Ok(json!({ "temperature": r.temperature, "current": r.current }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn dispersion(dim: usize, points_per_axis: usize, mass_sq: f64, samples: usize) -> Result<String, JsValue> {
    to_js(dispersion_json(dim, points_per_axis, mass_sq, samples))
}

#[wasm_bindgen]
pub fn hydro_profile(
    dim: usize,
    points_per_axis: usize,
    t_left: f64,
    t_right: f64,
    cells: usize,
    coupling: f64,
) -> Result<String, JsValue> {
    to_js(hydro_json(dim, points_per_axis, t_left, t_right, cells, coupling))
}

#[wasm_bindgen]
pub fn oracle_profile(length: usize, t_left: f64, t_right: f64, gamma: f64) -> Result<String, JsValue> {
    to_js(oracle_json(length, t_left, t_right, gamma))
}

#[wasm_bindgen]
pub fn version() -> String {
    fourier_closure::VERSION.to_string()
}
