//! CSV result tables: metric sweeps and optimizer traces.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricId;
use crate::optimizer::OptResult;
use crate::stat_model::{ModelCheckReport, OcclusionModelParams};

/// One sweep sample: the swept variable values, one value per table metric,
/// and the true visibility when ground truth exists.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub vars: Vec<f64>,
    pub metrics: Vec<f64>,
    pub true_visibility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub var_names: Vec<String>,
    pub metrics: Vec<MetricId>,
    pub with_truth: bool,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = self.var_names.clone();
        h.extend(self.metrics.iter().map(|m| m.as_str().to_string()));
        if self.with_truth {
            h.push("true_visibility".into());
        }
        h
    }

    /// Row index of the maximum of `metric`; the first one on ties.
    pub fn argmax(&self, metric: MetricId) -> Option<usize> {
        let k = self.metrics.iter().position(|m| *m == metric)?;
        let mut best: Option<usize> = None;
        for (i, r) in self.rows.iter().enumerate() {
            if best.map_or(true, |b| r.metrics[k] > self.rows[b].metrics[k]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn column(&self, metric: MetricId) -> Option<Vec<f64>> {
        let k = self.metrics.iter().position(|m| *m == metric)?;
        Some(self.rows.iter().map(|r| r.metrics[k]).collect())
    }

    pub fn truth_column(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.true_visibility).collect()
    }
}

pub fn write_sweep_csv(path: &Path, table: &SweepTable) -> Result<()> {
    for (i, r) in table.rows.iter().enumerate() {
        if r.vars.len() != table.var_names.len()
            || r.metrics.len() != table.metrics.len()
            || r.true_visibility.is_some() != table.with_truth
        {
            return Err(Error::invalid(format!("sweep row {i} does not match the table columns")));
        }
    }
    super::write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(table.header())?;
        for r in &table.rows {
            let cells = r
                .vars
                .iter()
                .chain(&r.metrics)
                .chain(&r.true_visibility)
                .map(|v| format_sig(*v));
            out.write_record(cells)?;
        }
        out.flush()
    })
}

/// `eval_index,d,theta_deg,phi_deg,value` for a focal-plane search.
pub fn write_trace_csv(path: &Path, result: &OptResult) -> Result<()> {
    if result.best_x.len() != 3 {
        return Err(Error::invalid("trace export needs a (d, theta, phi) search"));
    }
    super::write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["eval_index", "d", "theta_deg", "phi_deg", "value"])?;
        for (i, t) in result.trace.iter().enumerate() {
            out.write_record([
                i.to_string(),
                format_sig(t.x[0]),
                format_sig(t.x[1].to_degrees()),
                format_sig(t.x[2].to_degrees()),
                format_sig(t.value),
            ])?;
        }
        out.flush()
    })
}

/// One row per checked parameter set: `D,N,family,closed,mc,stderr,pass`.
pub fn write_model_report_csv(path: &Path, rows: &[(OcclusionModelParams, ModelCheckReport)]) -> Result<()> {
    super::write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["D", "N", "family", "closed", "mc", "stderr", "pass"])?;
        for (p, r) in rows {
            out.write_record([
                format_sig(p.d),
                p.n.to_string(),
                p.family.as_str().to_string(),
                format_sig(r.closed_form_mse),
                format_sig(r.mc_mse),
                format_sig(r.mc_stderr),
                r.pass.to_string(),
            ])?;
        }
        out.flush()
    })
}

/// Nine significant digits; plain decimal for moderate magnitudes, scientific otherwise.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(s)
    } else {
        let s = format!("{v:.8e}");
        match s.split_once('e') {
            Some((m, e)) => format!("{}e{e}", trim_zeros(m.to_string())),
            None => s,
        }
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
