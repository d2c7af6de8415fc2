//! Shared sweep export schema.
//!
//! Closed-form curves and Monte Carlo sweeps write the same CSV header,
//! `method,N,p,cycles,tpf,tpf_se,oh_var,oh_fix,efficiency`, so analytic and
//! simulated curves overlay directly. Closed-form rows carry `cycles = 0`
//! and `tpf_se = 0`.

use std::io::Write;

use crate::analytics::ParadigmCurve;
use crate::error::Result;
use crate::sim::SimResult;

pub const SWEEP_HEADER: &str = "method,N,p,cycles,tpf,tpf_se,oh_var,oh_fix,efficiency";

/// One row of the shared sweep schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub n: usize,
    pub p: f64,
    pub cycles: u64,
    pub tpf: f64,
    pub tpf_se: f64,
    pub oh_var: f64,
    pub oh_fix: f64,
    pub efficiency: f64,
}

impl SweepRow {
    /// Row for a simulated operating point. Efficiency uses the variable
    /// accounting except for methods with a single query shape, where the
    /// two overhead columns coincide anyway.
    pub fn from_sim(method: &str, n: usize, p: f64, result: &SimResult) -> Self {
        Self {
            method: method.to_string(),
            n,
            p,
            cycles: result.cycles,
            tpf: result.tpf,
            tpf_se: result.tpf_se,
            oh_var: result.oh_variable,
            oh_fix: result.oh_fixed,
            efficiency: result.efficiency_variable(),
        }
    }
}

pub fn write_sweep_header<W: Write>(mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    Ok(())
}

pub fn write_sweep_row<W: Write>(mut w: W, row: &SweepRow) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{}",
        row.method, row.n, row.p, row.cycles, row.tpf, row.tpf_se, row.oh_var, row.oh_fix, row.efficiency
    )?;
    Ok(())
}

/// Writes a closed-form curve under the shared schema.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &ParadigmCurve) -> Result<()> {
    write_sweep_header(&mut w)?;
    let method = curve.method.to_string();
    for s in &curve.samples {
        write_sweep_row(
            &mut w,
            &SweepRow {
                method: method.clone(),
                n: curve.n,
                p: s.p,
                cycles: 0,
                tpf: s.tpf,
                tpf_se: 0.0,
                oh_var: match curve.method {
                    crate::analytics::ParadigmMethod::IsdFixed => {
                        crate::analytics::oh_isd(curve.n, s.p, crate::decode::QueryAccounting::Variable)
                    }
                    _ => s.oh,
                },
                oh_fix: match curve.method {
                    crate::analytics::ParadigmMethod::IsdVariable => {
                        crate::analytics::oh_isd(curve.n, s.p, crate::decode::QueryAccounting::Fixed)
                    }
                    _ => s.oh,
                },
                efficiency: s.efficiency,
            },
        )?;
    }
    Ok(())
}
