//! Time-series container shared by the mean-field, dTWA and exact solvers,
//! with the common CSV schema.

use crate::error::{Error, Result};
use crate::states::SpinConfiguration;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Conservation / integration diagnostics recorded alongside a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// Relative drift of the conserved energy over the run.
    pub energy_drift: f64,
    /// Relative drift of the conserved magnetization
    /// (sum s_Z, plus |alpha|^2 for the two-channel model).
    pub conserved_sz_drift: f64,
    /// Max deviation of any spin norm from its initial value.
    pub spin_norm_drift: f64,
    /// Set when drifts exceed tolerance (step too large).
    pub step_warning: bool,
    /// Set when the pre-sqrt pair correlator dipped below -1e-12 and was
    /// clamped to zero.
    pub psi_tilde_clamped: bool,
}

/// Observables on a strictly increasing dimensionless time grid.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    /// Dimensionless times (Jt for the one-channel model, Gt or Jt for the
    /// two-channel model depending on configuration).
    pub t: Vec<f64>,
    pub psi: Vec<Complex64>,
    pub psi_tilde: Vec<f64>,
    /// Sum of s_Z over sites.
    pub sz_total: Vec<f64>,
    /// Mean-field energy in the run's dimensionless units.
    pub energy: Vec<f64>,
    /// Oscillator occupation |alpha|^2 (zero for one-channel runs).
    pub n_cm: Vec<f64>,
    /// Per-site snapshots at requested times.
    pub snapshots: Vec<(f64, SpinConfiguration)>,
    pub diagnostics: RunDiagnostics,
}

impl TimeSeries {
    pub fn with_capacity(n: usize) -> Self {
        TimeSeries {
            t: Vec::with_capacity(n),
            psi: Vec::with_capacity(n),
            psi_tilde: Vec::with_capacity(n),
            sz_total: Vec::with_capacity(n),
            energy: Vec::with_capacity(n),
            n_cm: Vec::with_capacity(n),
            snapshots: Vec::new(),
            diagnostics: RunDiagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn abs_psi(&self) -> Vec<f64> {
        self.psi.iter().map(|p| p.norm()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.psi.len() != n
            || self.psi_tilde.len() != n
            || self.sz_total.len() != n
            || self.energy.len() != n
            || self.n_cm.len() != n
        {
            return Err(Error::Validation("time series column lengths disagree".into()));
        }
        for w in self.t.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "time grid not strictly increasing at t = {}",
                    w[1]
                )));
            }
        }
        if let Some(&bad) = self.psi_tilde.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Validation(format!("Psi_tilde must be finite and >= 0, got {}", bad)));
        }
        Ok(())
    }

    /// Snapshot closest to dimensionless time `t`.
    pub fn snapshot_near(&self, t: f64) -> Option<&(f64, SpinConfiguration)> {
        self.snapshots.iter().min_by(|a, b| {
            (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap()
        })
    }

    /// Write the common CSV schema.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t_dimensionless,Re_Psi,Im_Psi,abs_Psi,Psi_tilde,Sz_total,energy,n_cm")?;
        for i in 0..self.len() {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                self.t[i],
                self.psi[i].re,
                self.psi[i].im,
                self.psi[i].norm(),
                self.psi_tilde[i],
                self.sz_total[i],
                self.energy[i],
                self.n_cm[i]
            )?;
        }
        Ok(())
    }

    /// Read a CSV written by [`save_csv`]. Snapshots are not stored in the
    /// CSV and come back empty.
    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<TimeSeries> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.starts_with("t_dimensionless") => {}
            Some((_, Ok(_))) => {
                return Err(Error::Parse { line: 1, message: "missing CSV header".into() })
            }
            _ => return Err(Error::Parse { line: 1, message: "empty file".into() }),
        }
        let mut out = TimeSeries::with_capacity(64);
        for (lineno, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: lineno + 1, message: e.to_string() })?;
            if vals.len() != 8 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected 8 columns, got {}", vals.len()),
                });
            }
            out.t.push(vals[0]);
            out.psi.push(Complex64::new(vals[1], vals[2]));
            out.psi_tilde.push(vals[4]);
            out.sz_total.push(vals[5]);
            out.energy.push(vals[6]);
            out.n_cm.push(vals[7]);
        }
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize) -> TimeSeries {
        let mut ts = TimeSeries::with_capacity(n);
        for i in 0..n {
            let t = i as f64 * 0.25;
            ts.t.push(t);
            ts.psi.push(Complex64::from_polar(0.3, -1.4 * t));
            ts.psi_tilde.push(0.2 + 0.01 * t);
            ts.sz_total.push(-3.5);
            ts.energy.push(1.25);
            ts.n_cm.push(0.5);
        }
        ts
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let ts = synthetic(40);
        ts.save_csv(&path).unwrap();
        let ts2 = TimeSeries::load_csv(&path).unwrap();
        assert_eq!(ts.t, ts2.t);
        assert_eq!(ts.psi, ts2.psi);
        assert_eq!(ts.psi_tilde, ts2.psi_tilde);
    }

    #[test]
    fn rejects_nonmonotone_grid() {
        let mut ts = synthetic(5);
        ts.t[3] = ts.t[2];
        assert!(ts.validate().is_err());
    }

    #[test]
    fn rejects_negative_psi_tilde() {
        let mut ts = synthetic(5);
        ts.psi_tilde[1] = -0.5;
        assert!(ts.validate().is_err());
    }
}
