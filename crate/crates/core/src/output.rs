//! CSV emitters. Every file starts with `#` comment lines carrying the
//! toolkit version and the resolved configuration, followed by a fixed
//! header row. Numbers use Rust's shortest round-trip formatting, so equal
//! inputs give byte-identical files.

use std::io::Write;

use serde::Serialize;

use crate::diagnostics::ProfileComparison;
use crate::error::Result;
use crate::fokker_planck::PdeDiagnostics;
use crate::limit_ode::LimitState;
use crate::particle::TrajectoryRecord;
use crate::VERSION;

/// Provenance lines written at the top of each file.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub label: String,
    pub config_json: String,
}

impl Provenance {
    pub fn new<C: Serialize>(label: &str, config: &C) -> Result<Self> {
        Ok(Self {
            label: label.to_string(),
            config_json: serde_json::to_string(config)?,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# fhn-toolkit {VERSION}")?;
        writeln!(w, "# run {}", self.label)?;
        writeln!(w, "# config {}", self.config_json)?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_rows<W: Write>(
    mut w: W,
    prov: &Provenance,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    prov.write_to(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header)?;
    for row in rows {
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Columns: `t, mean_v, mean_x, var_v, var_x, m4_v, m4_x`, then the quantiles
/// of `v` and of `x` (`q10_v, q25_v, q75_v, q90_v, q10_x, ...` by default).
pub fn write_record_csv<W: Write>(w: W, record: &TrajectoryRecord, prov: &Provenance) -> Result<()> {
    let rows = record.rows.iter().map(|r| {
        let m = &r.moments;
        let mut row: Vec<String> = [r.t, m.mean_v, m.mean_x, m.var_v, m.var_x, m.m4_v, m.m4_x]
            .iter()
            .map(f64::to_string)
            .collect();
        row.extend(r.quantiles_v.iter().chain(&r.quantiles_x).map(f64::to_string));
        row
    });
    write_rows(w, prov, &record.csv_header(), rows)
}

/// Columns: `t, alpha, beta`.
pub fn write_limit_csv<W: Write>(w: W, traj: &[LimitState], prov: &Provenance) -> Result<()> {
    let header = ["t", "alpha", "beta"].map(String::from);
    let rows = traj
        .iter()
        .map(|s| vec![s.t.to_string(), s.alpha.to_string(), s.beta.to_string()]);
    write_rows(w, prov, &header, rows)
}

/// Columns: `t, current, mass, min_density`.
pub fn write_pde_csv<W: Write>(w: W, series: &[PdeDiagnostics], prov: &Provenance) -> Result<()> {
    let header = ["t", "current", "mass", "min_density"].map(String::from);
    let rows = series.iter().map(|d| {
        vec![
            d.t.to_string(),
            d.current.to_string(),
            d.mass.to_string(),
            d.min_density.to_string(),
        ]
    });
    write_rows(w, prov, &header, rows)
}

/// Columns: `t, sup_error_v, sup_error_x, var_ratio_v, var_ratio_x, mean_error`;
/// empty cells where no profile was computed.
pub fn write_profiles_csv<W: Write>(w: W, comps: &[ProfileComparison], prov: &Provenance) -> Result<()> {
    let header = ["t", "sup_error_v", "sup_error_x", "var_ratio_v", "var_ratio_x", "mean_error"]
        .map(String::from);
    let rows = comps.iter().map(|c| {
        vec![
            c.t.to_string(),
            opt(c.sup_error_v),
            opt(c.sup_error_x),
            c.var_ratio_v.to_string(),
            c.var_ratio_x.to_string(),
            c.mean_error.to_string(),
        ]
    });
    write_rows(w, prov, &header, rows)
}

/// One row per comparison time across the three model levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    pub t: f64,
    pub mean_v_particle: f64,
    pub current_pde: f64,
    pub alpha_ode: f64,
}

/// Columns: `t, mean_v_particle, current_pde, alpha_ode`.
pub fn write_compare_csv<W: Write>(w: W, rows: &[CompareRow], prov: &Provenance) -> Result<()> {
    let header = ["t", "mean_v_particle", "current_pde", "alpha_ode"].map(String::from);
    let it = rows.iter().map(|r| {
        vec![
            r.t.to_string(),
            r.mean_v_particle.to_string(),
            r.current_pde.to_string(),
            r.alpha_ode.to_string(),
        ]
    });
    write_rows(w, prov, &header, it)
}
