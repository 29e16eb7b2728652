//! Plain-text tables for profiles, simulation estimates and spectra.
//!
//! Numbers use the shortest round-trip representation, so identical inputs
//! give byte-identical output.

use std::fmt::{self, Write};

use num_complex::Complex64;

use crate::langevin::{OracleResult, TrajectoryStats};
use crate::transport::TransportResult;

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

pub const PROFILE_HEADER: &str = "x,T,A,beta,J_heat,J_number";
pub const LANGEVIN_HEADER: &str = "x,T_hat,T_se,j_hat,j_se";
pub const SPECTRUM_HEADER: &str = "index,Re,Im";

/// Node-wise profile; the currents at a node average the adjacent cells.
pub fn profile_csv(result: &TransportResult) -> String {
    let p = &result.profile;
    let n = p.x.len() - 1;
    let at_node = |f: &[f64], i: usize| -> f64 {
        match i {
            0 => f[0],
            i if i == n => f[n - 1],
            i => 0.5 * (f[i - 1] + f[i]),
        }
    };
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    for i in 0..=n {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            Num(p.x[i]),
            Num(p.temperature[i]),
            Num(p.chem[i]),
            Num(result.beta[i]),
            Num(at_node(&result.heat_flux, i)),
            Num(at_node(&result.number_flux, i))
        );
    }
    out
}

/// Slab temperatures with the current through the cut to the right of each
/// slab; the last row has no current.
pub fn langevin_csv(stats: &TrajectoryStats) -> String {
    let mut out = String::from(LANGEVIN_HEADER);
    out.push('\n');
    for x in 0..stats.t_hat.len() {
        let _ = write!(out, "{},{},{},", x, Num(stats.t_hat[x]), Num(stats.t_se[x]));
        match (stats.j_hat.get(x), stats.j_se.get(x)) {
            (Some(j), Some(se)) => {
                let _ = writeln!(out, "{},{}", Num(*j), Num(*se));
            }
            _ => out.push_str(",\n"),
        }
    }
    out
}

/// Oracle profile in the simulation layout, standard errors zero.
pub fn oracle_csv(oracle: &OracleResult) -> String {
    let mut out = String::from(LANGEVIN_HEADER);
    out.push('\n');
    for (x, t) in oracle.temperature.iter().enumerate() {
        match oracle.current.get(x) {
            Some(j) => {
                let _ = writeln!(out, "{x},{},0,{},0", Num(*t), Num(*j));
            }
            None => {
                let _ = writeln!(out, "{x},{},0,,", Num(*t));
            }
        }
    }
    out
}

pub fn spectrum_csv(eigenvalues: &[Complex64]) -> String {
    let mut out = String::from(SPECTRUM_HEADER);
    out.push('\n');
    for (i, z) in eigenvalues.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", Num(z.re), Num(z.im));
    }
    out
}
