//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr before asserting; the raw handle bypasses output capture, so the
//! report shows up in a plain `cargo test` run.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use fourier_closure::collision::{scaling_transfer, CollisionConfig, KineticCollision};
use fourier_closure::langevin::{lyapunov_oracle, run_replicas, ChainConfig};
use fourier_closure::lattice::{build_grid, Dispersion, Regularization};
use fourier_closure::linear_ops::{linearize, null_defects};
use fourier_closure::transport::{
    profile_discrepancy, solve_hydro, solve_kinetic_bvp, Boundary, HydroConfig, KineticConfig, TransportModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, ok: bool, detail: String, started: Instant) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let line = format!("{tag} C{id} {name}: {detail} [{:.1}s]\n", started.elapsed().as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "C{id} {name}: {detail}");
}

/// Default width unless `epsilon` is given.
fn operator(dim: usize, m: usize, epsilon: Option<f64>) -> Arc<KineticCollision> {
    let grid = Arc::new(build_grid(dim, m, None).unwrap());
    let disp = Arc::new(Dispersion::new(&grid, 1.0).unwrap());
    let reg = match epsilon {
        Some(e) => Regularization::new(e).unwrap(),
        None => Regularization::from_level_spacing(&disp, 2.0).unwrap(),
    };
    Arc::new(KineticCollision::new(grid, disp, CollisionConfig::new(reg)).unwrap())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ratios(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[0] / w[1]).collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn c01_equilibrium_annihilation() {
    let started = Instant::now();
    let base = operator(3, 8, None);
    let v = base.equilibrium(1.0, 0.2).unwrap();
    let mut reg = base.config().regularization;
    let mut residual = Vec::new();
    for _ in 0..4 {
        residual.push(sup(&base.with_regularization(reg).evaluate(&v).unwrap()));
        reg = reg.halved();
    }
    let q = ratios(&residual);
    let constant = sup(&base.evaluate(&vec![1.0; base.grid().len()]).unwrap());
    let ok = q.iter().all(|r| *r >= 1.4) && constant <= 1e-12;
    report(
        1,
        "equilibrium annihilation",
        ok,
        format!("residual {} ratios {} constant {constant:.2e}", fmt(&residual), fmt(&q)),
        started,
    );
}

#[test]
fn c02_conservation() {
    let started = Instant::now();
    let op = operator(3, 8, None);
    let n = op.grid().len();
    let omega = op.dispersion().omegas();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut number, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        let out = op.evaluate(&v).unwrap();
        let sn: f64 = out.iter().sum();
        let an: f64 = out.iter().map(|x| x.abs()).sum();
        let se: f64 = out.iter().zip(omega).map(|(x, o)| x * o).sum();
        let ae: f64 = out.iter().zip(omega).map(|(x, o)| (x * o).abs()).sum();
        number = number.max(sn.abs() / an);
        energy = energy.max(se.abs() / ae);
    }
    let ok = number <= 1e-12 && energy <= 1e-12;
    report(2, "conservation", ok, format!("number {number:.2e} energy {energy:.2e}"), started);
}

#[test]
fn c03_zero_modes() {
    let started = Instant::now();
    let base = operator(3, 8, None);
    let mut reg = base.config().regularization;
    let (mut rt, mut ra, mut left, mut parity) = (Vec::new(), Vec::new(), 0.0f64, 0.0f64);
    for _ in 0..4 {
        let op = base.with_regularization(reg);
        let lin = linearize(&op, 1.0, 0.0).unwrap();
        let d = null_defects(&op, &lin);
        rt.push(d.right_temperature);
        ra.push(d.right_chem);
        left = left.max(d.left_number).max(d.left_energy);
        parity = parity.max(d.parity_offdiag);
        reg = reg.halved();
    }
    let (qt, qa) = (ratios(&rt), ratios(&ra));
    let ok = qt.iter().chain(&qa).all(|r| *r >= 1.4) && left <= 1e-12 && parity <= 1e-12;
    report(
        3,
        "zero modes",
        ok,
        format!("ratios ω⁻² {} ω⁻³ {} left {left:.2e} parity {parity:.2e}", fmt(&qt), fmt(&qa)),
        started,
    );
}

#[test]
fn c04_linearization_fidelity() {
    let started = Instant::now();
    let op = operator(3, 8, None);
    let (t, a) = (1.0, 0.2);
    let v = op.equilibrium(t, a).unwrap();
    let lin = linearize(&op, t, a).unwrap();
    let omega = op.dispersion().omegas();
    let n = v.len();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..n).map(|r| (0..n).map(|c| lin.matrix[(r, c)] * q[c]).sum()).collect();
        // L acts on Q = V/ω, so the V-direction is ω·q.
        let dir: Vec<f64> = q.iter().zip(omega).map(|(x, o)| x * o).collect();
        let h = 1e-3 * sup(&v) / sup(&dir);
        let shifted = |s: f64| -> Vec<f64> {
            let w: Vec<f64> = v.iter().zip(&dir).map(|(x, d)| x + s * d).collect();
            op.evaluate(&w).unwrap()
        };
        let (plus, minus) = (shifted(h), shifted(-h));
        let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        let diff: Vec<f64> = fd.iter().zip(&action).map(|(f, l)| f - l).collect();
        worst = worst.max(sup(&diff) / sup(&action));
    }
    report(4, "linearization fidelity", worst <= 1e-6, format!("max relative {worst:.2e}"), started);
}

#[test]
fn c05_conductivity_scaling() {
    let started = Instant::now();
    let model8 = TransportModel::new(operator(3, 8, Some(1.0)));
    let k = |t: f64, r: f64| model8.diffusion_matrix(t, 0.0, r).unwrap();
    let temperature = k(2.0, 1.0).kappa() / k(1.0, 1.0).kappa();
    let (lambda, length) = (0.1, 16);
    let r1 = scaling_transfer(lambda, length);
    let r2 = scaling_transfer(2.0 * lambda, length);
    let coupling = k(1.0, r2).kappa() / k(1.0, r1).kappa();
    let c8 = k(1.0, 1.0).c_constant();
    let c12 = TransportModel::new(operator(3, 12, Some(1.0))).diffusion_matrix(1.0, 0.0, 1.0).unwrap().c_constant();
    let spread = (c8 - c12).abs() / c12;
    let ok = (temperature - 0.25).abs() <= 1e-8 && (coupling - 0.25).abs() <= 1e-8 && spread <= 0.1;
    report(
        5,
        "conductivity scaling",
        ok,
        format!("κ(2T)/κ(T) {temperature:.12} κ(2λ)/κ(λ) {coupling:.12} c(M=8) {c8:.4} c(M=12) {c12:.4} spread {spread:.3}"),
        started,
    );
}

#[test]
fn c06_linear_beta_profile() {
    let started = Instant::now();
    let model = TransportModel::new(operator(3, 8, None));
    let cfg = HydroConfig::default();
    let mut deviation = Vec::new();
    let mut closer = true;
    let mut mids = Vec::new();
    for dt in [0.25, 0.125, 0.0625] {
        let (t1, t2) = (1.0, 1.0 + dt);
        let r = solve_hydro(&model, Boundary::temperatures(t1, t2), &cfg).unwrap();
        deviation.push(r.beta_linearity());
        let mid = r.midpoint_temperature();
        let harmonic = 2.0 / (1.0 / t1 + 1.0 / t2);
        let arithmetic = 0.5 * (t1 + t2);
        closer &= (mid - harmonic).abs() < (mid - arithmetic).abs();
        mids.push((mid - harmonic).abs() / (mid - arithmetic).abs());
    }
    let q = ratios(&deviation);
    let ok = q.iter().all(|r| *r >= 1.4) && closer;
    report(
        6,
        "linear beta profile",
        ok,
        format!("deviation {} ratios {} |T−harmonic|/|T−mean| {}", fmt(&deviation), fmt(&q), fmt(&mids)),
        started,
    );
}

#[test]
fn c07_hydro_kinetic_consistency() {
    let started = Instant::now();
    let model = TransportModel::new(operator(3, 6, None));
    let boundary = Boundary::temperatures(1.0, 1.25);
    let mut gap = Vec::new();
    for r in [1.0, 4.0, 16.0] {
        let hydro = solve_hydro(&model, boundary, &HydroConfig { cells: 16, coupling: r, ..HydroConfig::default() }).unwrap();
        let kin = solve_kinetic_bvp(&model, boundary, &KineticConfig { cells: 16, coupling: r, ..KineticConfig::default() })
            .unwrap();
        gap.push(profile_discrepancy(&hydro.profile, &kin.transport.profile).unwrap());
    }
    let ok = gap[0] > gap[1] && gap[1] > gap[2] && gap[2] <= 0.05;
    report(7, "hydro/kinetic consistency", ok, format!("discrepancy at R = 1, 4, 16: {}", fmt(&gap)), started);
}

#[test]
fn c08_harmonic_oracle() {
    let started = Instant::now();
    let mut chain = ChainConfig::chain(16, 0.0, 1.0, 2.0);
    chain.steps = 20_000_000;
    chain.burn_in = 200_000;
    chain.seed = 8;
    let oracle = lyapunov_oracle(&chain).unwrap();
    let stats = run_replicas(&chain, 1).unwrap();
    assert!(stats.is_valid());
    let mut z = 0.0f64;
    for (x, t) in oracle.temperature.iter().enumerate() {
        z = z.max((stats.t_hat[x] - t).abs() / stats.t_se[x]);
    }
    for (x, j) in oracle.current.iter().enumerate() {
        z = z.max((stats.j_hat[x] - j).abs() / stats.j_se[x]);
    }
    let t = &oracle.temperature;
    let bulk = &t[4..=12];
    let spread = bulk.iter().copied().fold(f64::MIN, f64::max) - bulk.iter().copied().fold(f64::MAX, f64::min);
    let flat = spread / (chain.t_right - chain.t_left);
    let j16 = oracle.current[8];
    let long = lyapunov_oracle(&ChainConfig::chain(32, 0.0, 1.0, 2.0)).unwrap();
    let j32 = long.current[16];
    let current_gap = (j16 - j32).abs() / j32.abs();
    let ok = z < 3.0 && flat <= 0.02 && current_gap <= 0.1;
    report(
        8,
        "harmonic oracle",
        ok,
        format!("max z {z:.2} bulk spread {flat:.4} j(16) {j16:.5} j(32) {j32:.5} gap {current_gap:.4}"),
        started,
    );
}

#[test]
fn c09_anharmonic_equipartition() {
    let started = Instant::now();
    let mut chain = ChainConfig::chain(16, 0.1, 1.0, 1.0);
    // Batches much longer than the bulk energy correlation time.
    chain.steps = 100_000_000;
    chain.burn_in = 1_000_000;
    chain.seed = 9;
    let stats = run_replicas(&chain, 1).unwrap();
    assert!(stats.is_valid());
    let z = stats.t_hat.iter().zip(&stats.t_se).map(|(t, se)| (t - 1.0).abs() / se).fold(0.0, f64::max);
    report(9, "anharmonic equipartition", z < 3.0, format!("max z {z:.2}"), started);
}

fn run_cli(dir: &Path, command: &str, config: &str, out: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_fclosure"))
        .args([command, "--config", config, "--out", out])
        .current_dir(dir)
        .status()
        .unwrap();
    assert!(status.success(), "{command} failed");
}

#[test]
fn c10_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let runs = [
        ("langevin", r#"{"length": 8, "lambda": 0.1, "t_left": 1, "t_right": 2, "steps": 200000, "seed": 5}"#, "langevin.csv"),
        ("hydro", r#"{"dim": 2, "points_per_axis": 8, "cells": 16}"#, "profile.csv"),
        ("collision-check", r#"{"dim": 2, "points_per_axis": 8, "seed": 3}"#, "collision_check.csv"),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (i, (command, config, csv)) in runs.iter().enumerate() {
        let cfg = format!("c{i}.json");
        fs::write(dir.path().join(&cfg), config).unwrap();
        let (a, b) = (format!("{i}a"), format!("{i}b"));
        run_cli(dir.path(), command, &cfg, &a);
        run_cli(dir.path(), command, &cfg, &b);
        let same = fs::read(dir.path().join(&a).join(csv)).unwrap() == fs::read(dir.path().join(&b).join(csv)).unwrap();
        ok &= same;
        detail.push(format!("{command} {}", if same { "identical" } else { "differs" }));
    }
    report(10, "determinism", ok, detail.join(", "), started);
}
