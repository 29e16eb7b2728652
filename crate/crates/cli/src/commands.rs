use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use fourier_closure::collision::KineticCollision;
use fourier_closure::export::{langevin_csv, oracle_csv, profile_csv, spectrum_csv, Num};
use fourier_closure::langevin::{lyapunov_oracle, run_replicas};
use fourier_closure::linear_ops::{linearize, null_defects, spectrum, ComplementSolver};
use fourier_closure::transport::{
    profile_discrepancy, solve_hydro, solve_kinetic_bvp, TransportModel, TransportResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{CliError, Command, ErrorKind, Output, Partial, RunConfig};

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Output, Partial> {
    match command {
        Command::Dispersion => dispersion(cfg),
        Command::CollisionCheck => collision_check(cfg),
        Command::ZeroModes => zero_modes(cfg),
        Command::Diffusion => diffusion(cfg),
        Command::Hydro => hydro(cfg),
        Command::Kinetic => kinetic(cfg),
        Command::Langevin => langevin(cfg),
        Command::Oracle => oracle(cfg),
        Command::Compare => compare(cfg),
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ratios(values: &[f64]) -> Vec<Option<f64>> {
    std::iter::once(None).chain(values.windows(2).map(|w| Some(w[0] / w[1]))).collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| Num(v).to_string()).unwrap_or_default()
}

fn grid_json(op: &KineticCollision) -> Value {
    json!({
        "dim": op.grid().dim(),
        "points_per_axis": op.grid().points_per_axis(),
        "points": op.grid().len(),
        "epsilon": op.config().regularization.epsilon,
    })
}

fn dispersion(cfg: &RunConfig) -> Result<Output, Partial> {
    let op = cfg.collision()?;
    let (grid, disp) = (op.grid(), op.dispersion());
    let mut csv = String::from("index");
    for a in 0..grid.dim() {
        let _ = write!(csv, ",k_{a}");
    }
    csv.push_str(",omega,v_1\n");
    for i in 0..grid.len() {
        let _ = write!(csv, "{i}");
        for k in grid.momentum(i) {
            let _ = write!(csv, ",{}", Num(k));
        }
        let _ = writeln!(csv, ",{},{}", Num(disp.omega(i)), Num(disp.velocity(i, 0)));
    }
    let omegas = disp.omegas();
    let lo = omegas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Output::default();
    out.file("dispersion.csv", csv);
    out.summary = json!({ "grid": grid_json(&op), "omega_min": lo, "omega_max": disp.max_omega() });
    Ok(out)
}

fn collision_check(cfg: &RunConfig) -> Result<Output, Partial> {
    let base = cfg.collision()?;
    let v = base.equilibrium(cfg.temperature, cfg.chem)?;
    let mut reg = base.config().regularization;
    let mut eps = Vec::new();
    let mut residual = Vec::new();
    for _ in 0..=cfg.halvings {
        let op = base.with_regularization(reg);
        eps.push(reg.epsilon);
        residual.push(sup(&op.evaluate(&v)?));
        reg = reg.halved();
    }
    let mut csv = String::from("epsilon,residual,ratio\n");
    for ((e, r), q) in eps.iter().zip(&residual).zip(ratios(&residual)) {
        let _ = writeln!(csv, "{},{},{}", Num(*e), Num(*r), opt(q));
    }

    let n = base.grid().len();
    let constant = sup(&base.evaluate(&vec![cfg.temperature; n])?);
    let w = base.grid().weight();
    let omega = base.dispersion().omegas();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut number, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..cfg.random_fields {
        let field: Vec<f64> = (0..n).map(|_| cfg.temperature * rng.random_range(0.2..2.0)).collect();
        let out = base.evaluate(&field)?;
        let scale_n: f64 = out.iter().map(|x| x.abs() * w).sum();
        let scale_e: f64 = out.iter().zip(omega).map(|(x, o)| (x * o).abs() * w).sum();
        let sn: f64 = out.iter().map(|x| x * w).sum();
        let se: f64 = out.iter().zip(omega).map(|(x, o)| x * o * w).sum();
        if scale_n > 0.0 {
            number = number.max(sn.abs() / scale_n);
        }
        if scale_e > 0.0 {
            energy = energy.max(se.abs() / scale_e);
        }
    }
    let mut out = Output::default();
    out.file("collision_check.csv", csv);
    out.summary = json!({
        "grid": grid_json(&base),
        "temperature": cfg.temperature,
        "chem": cfg.chem,
        "epsilon": eps,
        "residual": residual,
        "halving_ratio": ratios(&residual)[1..].to_vec(),
        "constant_field_residual": constant,
        "random_fields": cfg.random_fields,
        "seed": cfg.seed,
        "number_production_relative": number,
        "energy_production_relative": energy,
    });
    Ok(out)
}

fn zero_modes(cfg: &RunConfig) -> Result<Output, Partial> {
    let base = cfg.collision()?;
    let mut reg = base.config().regularization;
    let mut rows = Vec::new();
    let mut spectrum_lin = None;
    for h in 0..=cfg.halvings {
        let op = base.with_regularization(reg);
        let lin = linearize(&op, cfg.temperature, 0.0)?;
        let d = null_defects(&op, &lin);
        let condition = ComplementSolver::new(&lin, op.zero_modes(), f64::INFINITY).map(|s| s.condition()).ok();
        rows.push((reg.epsilon, d, condition));
        if h == 0 {
            spectrum_lin = Some(lin.matrix);
        }
        reg = reg.halved();
    }
    let rt: Vec<f64> = rows.iter().map(|r| r.1.right_temperature).collect();
    let ra: Vec<f64> = rows.iter().map(|r| r.1.right_chem).collect();
    let (qt, qa) = (ratios(&rt), ratios(&ra));
    let mut csv = String::from(
        "epsilon,right_temperature,right_chem,ratio_temperature,ratio_chem,left_number,left_energy,parity_offdiag,symmetry_defect,condition\n",
    );
    for (i, (e, d, c)) in rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            Num(*e),
            Num(d.right_temperature),
            Num(d.right_chem),
            opt(qt[i]),
            opt(qa[i]),
            Num(d.left_number),
            Num(d.left_energy),
            Num(d.parity_offdiag),
            Num(d.symmetry_defect),
            opt(*c)
        );
    }
    let mut out = Output::default();
    out.file("zero_modes.csv", csv);
    let mut spectral = Value::Null;
    if cfg.spectrum {
        let m = spectrum_lin.unwrap();
        match spectrum(&m, 200 * m.nrows()) {
            Ok(ev) => {
                let rest = &ev[2.min(ev.len())..];
                spectral = json!({
                    "leading": ev.iter().take(4).map(|z| [z.re, z.im]).collect::<Vec<_>>(),
                    "max_real_part_beyond_two": rest.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
                });
                out.file("spectrum.csv", spectrum_csv(&ev));
            }
            Err(e) => spectral = json!({ "unavailable": e.to_string() }),
        }
    }
    let condition_limit_ok = rows[0].2.is_some_and(|c| c <= cfg.condition_limit);
    out.summary = json!({
        "grid": grid_json(&base),
        "temperature": cfg.temperature,
        "epsilon": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        "right_null_defects": { "omega_inv2": rt, "omega_inv3": ra },
        "halving_ratios": {
            "omega_inv2": qt[1..].to_vec(),
            "omega_inv3": qa[1..].to_vec(),
        },
        "left_null_defects": {
            "number": rows.iter().map(|r| r.1.left_number).collect::<Vec<_>>(),
            "energy": rows.iter().map(|r| r.1.left_energy).collect::<Vec<_>>(),
        },
        "parity_offdiag": rows.iter().map(|r| r.1.parity_offdiag).collect::<Vec<_>>(),
        "symmetry_defect": rows.iter().map(|r| r.1.symmetry_defect).collect::<Vec<_>>(),
        "condition": rows.iter().map(|r| r.2).collect::<Vec<_>>(),
        "condition_within_limit": condition_limit_ok,
        "spectrum": spectral,
    });
    Ok(out)
}

fn model(cfg: &RunConfig) -> Result<TransportModel, CliError> {
    Ok(TransportModel::new(cfg.collision()?).with_node_spacing(cfg.node_spacing)?.with_condition_limit(cfg.condition_limit))
}

fn diffusion(cfg: &RunConfig) -> Result<Output, Partial> {
    let m = model(cfg)?;
    let r = cfg.coupling()?;
    let mut csv = String::from(
        "T,A,D_heat_T,D_heat_A,D_number_T,D_number_A,kappa,c,condition,positive_definite,onsager_defect\n",
    );
    let mut entries = Vec::new();
    for &t in &cfg.temperatures {
        for &a in &cfg.chems {
            let d = m.diffusion_matrix(t, a, r)?;
            let x = d.matrix;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{}",
                Num(t),
                Num(a),
                Num(x[0][0]),
                Num(x[0][1]),
                Num(x[1][0]),
                Num(x[1][1]),
                Num(d.kappa()),
                Num(d.c_constant()),
                Num(d.condition),
                d.positive_definite,
                Num(d.onsager_defect)
            );
            entries.push(d);
        }
    }
    let mut out = Output::default();
    out.file("diffusion.csv", csv);
    out.summary = json!({ "grid": grid_json(m.operator()), "coupling": r, "entries": entries });
    Ok(out)
}

fn transport_json(cfg: &RunConfig, op: &KineticCollision, r: &TransportResult) -> Value {
    let flat = cfg.t_left == cfg.t_right && cfg.a_left == cfg.a_right;
    let mut v = json!({
        "grid": grid_json(op),
        "cells": cfg.cells,
        "coupling": r.coupling,
        "boundary": r.profile.boundary,
        "heat_current": r.heat_current,
        "number_current": r.number_current,
        "flux_variation": r.flux_variation,
        "beta_linearity": r.beta_linearity(),
        "midpoint_temperature": r.midpoint_temperature(),
        "residual": r.residual,
        "residual_history": r.residual_history,
        "iterations": r.iterations,
    });
    if !flat {
        v["kappa"] = json!(r.kappa);
        v["c_constant"] = json!(r.c_constant);
    }
    v
}

fn hydro(cfg: &RunConfig) -> Result<Output, Partial> {
    let m = model(cfg)?;
    let result = solve_hydro(&m, cfg.boundary(), &cfg.hydro()?)?;
    let mut out = Output::default();
    out.file("profile.csv", profile_csv(&result));
    out.summary = transport_json(cfg, m.operator(), &result);
    Ok(out)
}

fn kinetic(cfg: &RunConfig) -> Result<Output, Partial> {
    let m = model(cfg)?;
    let hydro = solve_hydro(&m, cfg.boundary(), &cfg.hydro()?)?;
    let mut out = Output::default();
    out.file("hydro_profile.csv", profile_csv(&hydro));
    let sol = match solve_kinetic_bvp(&m, cfg.boundary(), &cfg.kinetic()?) {
        Ok(s) => s,
        Err(e) => return Err(Partial { error: e.into(), output: out }),
    };
    out.file("profile.csv", profile_csv(&sol.transport));
    let mut summary = transport_json(cfg, m.operator(), &sol.transport);
    summary["hydro_discrepancy"] = json!(profile_discrepancy(&hydro.profile, &sol.transport.profile)?);
    out.summary = summary;
    Ok(out)
}

fn langevin(cfg: &RunConfig) -> Result<Output, Partial> {
    let chain = cfg.chain()?;
    let stats = run_replicas(&chain, cfg.replicas)?;
    let mut out = Output::default();
    out.file("langevin.csv", langevin_csv(&stats));
    out.summary = json!({
        "chain": chain,
        "replicas": cfg.replicas,
        "samples": stats.samples,
        "batches": stats.batches,
        "seeds": (0..cfg.replicas as u64).map(|r| chain.seed + r).collect::<Vec<_>>(),
    });
    if let Some((site, step)) = stats.divergence {
        let error = CliError::from(fourier_closure::Error::Divergence { site, step });
        out.summary["divergence"] = json!({ "site": site, "step": step });
        return Err(Partial { error, output: out });
    }
    Ok(out)
}

fn oracle(cfg: &RunConfig) -> Result<Output, Partial> {
    let chain = cfg.chain()?;
    let result = lyapunov_oracle(&chain)?;
    let t = &result.temperature;
    let n = t.len();
    let bulk = &t[n / 4..=3 * n / 4];
    let spread = bulk.iter().copied().fold(f64::NEG_INFINITY, f64::max) - bulk.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Output::default();
    out.file("oracle.csv", oracle_csv(&result));
    out.summary = json!({
        "chain": chain,
        "bulk_spread": spread,
        "bulk_spread_relative": spread / (cfg.t_right - cfg.t_left).abs().max(f64::MIN_POSITIVE),
        "current": result.current.iter().sum::<f64>() / result.current.len().max(1) as f64,
    });
    Ok(out)
}

struct Table {
    headers: Vec<String>,
    rows: BTreeMap<String, Vec<Option<f64>>>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.first().map(String::as_str) != Some("x") {
        return Err(CliError::config(format!("{}: first column must be x", path.display())));
    }
    let mut rows = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let values = rec.iter().skip(1).map(|s| s.trim().parse::<f64>().ok()).collect();
        rows.insert(rec[0].trim().to_string(), values);
    }
    Ok(Table { headers, rows })
}

/// Estimate columns paired with their standard-error columns.
fn se_column(name: &str) -> Option<String> {
    name.strip_suffix("_hat").map(|s| format!("{s}_se"))
}

fn compare(cfg: &RunConfig) -> Result<Output, Partial> {
    let (Some(l), Some(r)) = (&cfg.left, &cfg.right) else {
        return Err(CliError::config("compare needs `left` and `right` CSV paths").into());
    };
    let (a, b) = (read_table(l)?, read_table(r)?);
    let col = |t: &Table, name: &str| t.headers.iter().position(|h| h == name).map(|i| i - 1);
    let shared: Vec<String> = a.headers[1..]
        .iter()
        .filter(|h| b.headers.contains(h) && !h.ends_with("_se"))
        .cloned()
        .collect();
    let mut csv = String::from("x,column,left,right,delta,z\n");
    let mut max_z = 0.0f64;
    let mut max_abs: BTreeMap<String, f64> = BTreeMap::new();
    let mut joined = 0usize;
    for (x, ra) in &a.rows {
        let Some(rb) = b.rows.get(x) else { continue };
        joined += 1;
        for name in &shared {
            let (Some(va), Some(vb)) = (ra[col(&a, name).unwrap()], rb[col(&b, name).unwrap()]) else { continue };
            let delta = va - vb;
            let z = se_column(name).and_then(|s| {
                let sa = col(&a, &s).and_then(|i| ra[i]).unwrap_or(0.0);
                let sb = col(&b, &s).and_then(|i| rb[i]).unwrap_or(0.0);
                let se = (sa * sa + sb * sb).sqrt();
                (se > 0.0).then(|| delta.abs() / se)
            });
            if let Some(z) = z {
                max_z = max_z.max(z);
            }
            let e = max_abs.entry(name.clone()).or_insert(0.0);
            *e = e.max(delta.abs());
            let _ = writeln!(csv, "{x},{name},{},{},{},{}", Num(va), Num(vb), Num(delta), opt(z));
        }
    }
    if joined == 0 {
        return Err(CliError { kind: ErrorKind::Config, message: "the two tables share no x values".into() }.into());
    }
    let mut out = Output::default();
    out.file("comparison.csv", csv);
    out.summary = json!({
        "left": l,
        "right": r,
        "rows_joined": joined,
        "max_z": max_z,
        "max_abs_delta": max_abs,
    });
    Ok(out)
}
