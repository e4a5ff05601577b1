//! Post-processing: order parameters, dynamical-phase classification,
//! winding numbers via Delaunay triangulation, the dynamical chemical
//! potential mu_inf, the Cooper-pair distribution function and readout.

use crate::crystal::CrystalLayout;
use crate::dynamics::OneChannelParams;
use crate::error::{Error, Result};
use crate::states::{local_axes, SpinConfiguration};
use crate::timeseries::TimeSeries;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Psi = (2/N) sum_j r~_j e^{i phi_j} s-_j.
pub fn order_parameter(state: &SpinConfiguration, layout: &CrystalLayout) -> Complex64 {
    let n = state.len() as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 0..state.len() {
        let sm = state.s_plus(j).conj();
        sum += layout.r_norm[j] * Complex64::from_polar(1.0, layout.phi[j]) * sm;
    }
    2.0 / n * sum
}

/// Pair correlator Psi~ for a product (mean-field) state: the j != k double
/// sum collapses to |sum_j r~_j e^{-i phi_j} s+_j|^2 minus its diagonal.
pub fn psi_tilde(state: &SpinConfiguration, layout: &CrystalLayout) -> f64 {
    let n = state.len() as f64;
    let mut a = Complex64::new(0.0, 0.0);
    let mut diag = 0.0;
    for j in 0..state.len() {
        let sp = state.s_plus(j);
        a += layout.r_norm[j] * Complex64::from_polar(1.0, -layout.phi[j]) * sp;
        diag += layout.r_norm[j] * layout.r_norm[j] * sp.norm_sqr();
    }
    2.0 / n * (a.norm_sqr() - diag).max(0.0).sqrt()
}

/// Counterclockwise triangles over the crystal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub triangles: Vec<[usize; 3]>,
}

/// Delaunay triangulation of the layout. Cocircular quadruples (ubiquitous
/// on symmetric ring crystals) are broken by a deterministic radial jitter
/// of 1e-9 * index applied to the triangulation input only.
pub fn delaunay(layout: &CrystalLayout) -> Result<Triangulation> {
    let n = layout.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("triangulation needs >= 3 ions, got {}", n)));
    }
    let points: Vec<delaunator::Point> = (0..n)
        .map(|j| {
            let f = 1.0 + 1e-9 * j as f64;
            delaunator::Point { x: layout.r_norm[j] * f * layout.phi[j].cos(), y: layout.r_norm[j] * f * layout.phi[j].sin() }
        })
        .collect();
    let tri = delaunator::triangulate(&points);
    if tri.triangles.is_empty() {
        return Err(Error::Degenerate("collinear or degenerate point set".into()));
    }
    let mut triangles = Vec::with_capacity(tri.triangles.len() / 3);
    for t in tri.triangles.chunks(3) {
        let (mut a, mut b, c) = (t[0], t[1], t[2]);
        // Enforce counterclockwise orientation (face normal along +z).
        let cross = (points[b].x - points[a].x) * (points[c].y - points[b].y)
            - (points[b].y - points[a].y) * (points[c].x - points[b].x);
        if cross < 0.0 {
            std::mem::swap(&mut a, &mut b);
        }
        triangles.push([a, b, c]);
    }
    Ok(Triangulation { triangles })
}

/// Signed solid angle of the spherical triangle spanned by three unit
/// vectors: Omega = 2 atan2(u_A . (u_B x u_C), 1 + pairwise dots).
/// Returns `None` for the antipodal degenerate case where the angle is
/// ill-defined.
pub fn solid_angle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Option<f64> {
    let cross = [
        b[1] * c[2] - b[2] * c[1],
        b[2] * c[0] - b[0] * c[2],
        b[0] * c[1] - b[1] * c[0],
    ];
    let triple = a[0] * cross[0] + a[1] * cross[1] + a[2] * cross[2];
    let dots = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
        + b[0] * c[0] + b[1] * c[1] + b[2] * c[2]
        + c[0] * a[0] + c[1] * a[1] + c[2] * a[2];
    let denom = 1.0 + dots;
    if denom <= -1.0 + 1e-9 && triple.abs() < 1e-9 {
        return None;
    }
    Some(2.0 * triple.atan2(denom))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingResult {
    pub w: f64,
    /// Triangles dropped as ill-defined (antipodal degeneracies).
    pub excluded: usize,
    /// Set when any triangle was excluded; the value is then approximate.
    pub approximate: bool,
}

/// Winding number W = (1/4pi) sum of solid angles over the triangulation.
/// `field` holds one vector per site; vectors are normalized internally.
pub fn winding_number(layout: &CrystalLayout, field: &[[f64; 3]]) -> Result<WindingResult> {
    if field.len() != layout.len() {
        return Err(Error::InvalidArgument("field length does not match layout".into()));
    }
    let tri = delaunay(layout)?;
    let unit: Vec<[f64; 3]> = field
        .iter()
        .map(|v| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect();
    let mut total = 0.0;
    let mut excluded = 0;
    for t in &tri.triangles {
        match solid_angle(unit[t[0]], unit[t[1]], unit[t[2]]) {
            Some(o) => total += o,
            None => excluded += 1,
        }
    }
    Ok(WindingResult {
        w: total / (2.0 * crate::constants::TWO_PI),
        excluded,
        approximate: excluded > 0,
    })
}

/// Rotating-frame effective field at each site,
/// B+_j = J r~_j e^{i phi_j} Psi*, B_Z_j = -K r~_j^2 + 2 mu_inf,
/// with Psi evaluated on the snapshot.
pub fn effective_field(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    params: &OneChannelParams,
    mu_inf: f64,
) -> Vec<[f64; 3]> {
    let psi = order_parameter(state, layout);
    (0..layout.len())
        .map(|j| {
            let bp = params.j
                * layout.r_norm[j]
                * Complex64::from_polar(1.0, layout.phi[j])
                * psi.conj();
            let bz = -params.k * layout.r_norm[j] * layout.r_norm[j] + 2.0 * mu_inf;
            [bp.re, bp.im, bz]
        })
        .collect()
}

/// Default |Psi| floor below which mu_inf is considered undefined (Phase I).
pub const MU_INF_PSI_FLOOR: f64 = 1e-3;

fn window_indices(series: &TimeSeries, window: (f64, f64)) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..series.len())
        .filter(|&i| series.t[i] >= window.0 && series.t[i] <= window.1)
        .collect();
    if idx.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "window [{}, {}] selects only {} samples",
            window.0,
            window.1,
            idx.len()
        )));
    }
    Ok(idx)
}

/// Extract (mu_inf, Psi_inf) from the asymptotic rotation of Psi(t):
/// mu_inf = -(1/2) d(arg Psi)/dt by least squares over the window, so
/// clockwise rotation gives mu_inf > 0. Errors when |Psi| sits below the
/// floor (Phase I: mu_inf undefined).
pub fn extract_mu_infty(series: &TimeSeries, window: (f64, f64)) -> Result<(f64, f64)> {
    let idx = window_indices(series, window)?;
    let psi_inf: f64 =
        idx.iter().map(|&i| series.psi[i].norm()).sum::<f64>() / idx.len() as f64;
    if psi_inf < MU_INF_PSI_FLOOR {
        return Err(Error::Validation(format!(
            "|Psi| ~ {:.2e} below floor {:.0e}: mu_inf undefined (Phase I)",
            psi_inf, MU_INF_PSI_FLOOR
        )));
    }
    // Unwrapped phase.
    let mut phases = Vec::with_capacity(idx.len());
    let mut prev = series.psi[idx[0]].arg();
    let mut offset = 0.0;
    for &i in &idx {
        let raw = series.psi[i].arg();
        let mut d = raw - prev;
        while d > std::f64::consts::PI {
            d -= crate::constants::TWO_PI;
        }
        while d < -std::f64::consts::PI {
            d += crate::constants::TWO_PI;
        }
        offset += d;
        prev = raw;
        phases.push(offset);
    }
    // Least-squares slope of phase vs t.
    let n = idx.len() as f64;
    let tm: f64 = idx.iter().map(|&i| series.t[i]).sum::<f64>() / n;
    let pm: f64 = phases.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let dt = series.t[i] - tm;
        num += dt * (phases[k] - pm);
        den += dt * dt;
    }
    let slope = num / den;
    Ok((-0.5 * slope, psi_inf))
}

/// FFT-style cross check: scan frequencies for the peak of
/// |sum Psi(t) e^{+2 i mu t}| and return the maximizing mu.
pub fn extract_mu_infty_fft(series: &TimeSeries, window: (f64, f64)) -> Result<f64> {
    let idx = window_indices(series, window)?;
    let span = series.t[*idx.last().unwrap()] - series.t[idx[0]];
    let dt = span / (idx.len() - 1) as f64;
    let mu_max = std::f64::consts::PI / (2.0 * dt);
    let mut best = (0.0, -1.0);
    let n_scan = 8 * idx.len();
    for k in 0..=n_scan {
        let mu = -mu_max + 2.0 * mu_max * k as f64 / n_scan as f64;
        let amp: Complex64 = idx
            .iter()
            .map(|&i| series.psi[i] * Complex64::from_polar(1.0, 2.0 * mu * series.t[i]))
            .sum();
        if amp.norm() > best.1 {
            best = (mu, amp.norm());
        }
    }
    Ok(best.0)
}

/// Spin-length floor below which CPDF samples are excluded
/// (dTWA ensemble averages shrink spins below 1/2).
pub const CPDF_EPSILON: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct CpdfSample {
    pub r_norm: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cpdf {
    pub samples: Vec<CpdfSample>,
    pub excluded: usize,
}

/// Cooper-pair distribution function: direction cosine of each (ensemble
/// averaged) spin against its local rotating-frame field. Both vectors
/// co-rotate at 2 mu_inf, so the cosine is frame independent and is
/// evaluated directly on the snapshot.
pub fn cpdf(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    params: &OneChannelParams,
    mu_inf: f64,
) -> Result<Cpdf> {
    let field = effective_field(state, layout, params, mu_inf);
    let mut samples = Vec::new();
    let mut excluded = 0;
    for j in 0..state.len() {
        let s = state.s[j];
        let sn = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        if !(sn >= CPDF_EPSILON) {
            excluded += 1;
            continue;
        }
        let b = field[j];
        let bn = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        if !(bn > 0.0) {
            excluded += 1;
            continue;
        }
        let gamma = (s[0] * b[0] + s[1] * b[1] + s[2] * b[2]) / (sn * bn);
        samples.push(CpdfSample { r_norm: layout.r_norm[j], gamma: gamma.clamp(-1.0, 1.0) });
    }
    if samples.is_empty() {
        return Err(Error::Validation("all CPDF samples excluded".into()));
    }
    samples.sort_by(|a, b| a.r_norm.partial_cmp(&b.r_norm).unwrap());
    Ok(Cpdf { samples, excluded })
}

/// Radial bin count for zero-crossing counting (bin width R/20).
pub const CPDF_BINS: usize = 20;

/// Count sign changes of the radially binned CPDF.
pub fn cpdf_zero_crossings(cpdf: &Cpdf) -> usize {
    let mut sums = [0.0_f64; CPDF_BINS];
    let mut counts = [0usize; CPDF_BINS];
    for s in &cpdf.samples {
        let b = ((s.r_norm * CPDF_BINS as f64) as usize).min(CPDF_BINS - 1);
        sums[b] += s.gamma;
        counts[b] += 1;
    }
    let means: Vec<f64> = (0..CPDF_BINS)
        .filter(|&b| counts[b] > 0)
        .map(|b| sums[b] / counts[b] as f64)
        .collect();
    let mut crossings = 0;
    for w in means.windows(2) {
        if w[0].signum() != w[1].signum() && w[0] != 0.0 && w[1] != 0.0 {
            crossings += 1;
        }
    }
    crossings
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
    III,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseThresholds {
    /// Fraction of the series used as the classification window (from the
    /// end).
    pub window_fraction: f64,
    /// Phase-I threshold on mean |Psi| as a fraction of max_t |Psi|.
    pub theta_i: f64,
    /// Phase-III threshold on std/mean of |Psi| in the window.
    pub theta_osc: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        PhaseThresholds { window_fraction: 0.25, theta_i: 0.2, theta_osc: 0.1 }
    }
}

/// Classify the long-time behavior of |Psi(t)|:
/// decay (I), constant (II) or persistent oscillation (III).
pub fn classify_phase(series: &TimeSeries, thresholds: &PhaseThresholds) -> Result<Phase> {
    if series.len() < 8 {
        return Err(Error::InvalidArgument("series too short to classify".into()));
    }
    let abs = series.abs_psi();
    let max = abs.iter().cloned().fold(0.0_f64, f64::max);
    let start = series.len() - ((series.len() as f64 * thresholds.window_fraction) as usize).max(4);
    let window = &abs[start..];
    let m = window.iter().sum::<f64>() / window.len() as f64;
    let var = window.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / window.len() as f64;
    if m < thresholds.theta_i * max {
        Ok(Phase::I)
    } else if var.sqrt() / m > thresholds.theta_osc {
        Ok(Phase::III)
    } else {
        Ok(Phase::II)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Re,
    Im,
}

/// Emulate the experimental readout: apply the initialization drive for
/// several short times, fit the slope of the total s_Z, and convert to the
/// requested quadrature of Psi via -2 slope / (N Omega_0). The Im
/// quadrature rotates about +e_Y'; the Re quadrature about -e_X'.
pub fn emulate_readout(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    quadrature: Quadrature,
    omega0: f64,
    times: &[f64],
) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 rotation times".into()));
    }
    let n = state.len();
    let mut pts = Vec::with_capacity(times.len());
    for &t in times {
        let mut sz_tot = 0.0;
        for j in 0..n {
            let (ex, ey) = local_axes(layout.phi[j]);
            let axis = match quadrature {
                Quadrature::Im => ey,
                Quadrature::Re => [-ex[0], -ex[1], -ex[2]],
            };
            let theta = omega0 * layout.r_norm[j] * t;
            let s = state.s[j];
            // Only the Z component after rotation is needed:
            // s_Z' = s_Z cos(theta) + (axis x s)_Z sin(theta)
            // (axis has no Z component, so the (1 - cos) term vanishes).
            let kxs_z = axis[0] * s[1] - axis[1] * s[0];
            sz_tot += s[2] * theta.cos() + kxs_z * theta.sin();
        }
        pts.push((t, sz_tot));
    }
    let nn = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / nn;
    let zm = pts.iter().map(|p| p.1).sum::<f64>() / nn;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, z) in &pts {
        num += (t - tm) * (z - zm);
        den += (t - tm) * (t - tm);
    }
    let slope = num / den;
    Ok(-2.0 * slope / (n as f64 * omega0))
}

/// Full topology summary for a run, serialized as JSON by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyReport {
    pub q: f64,
    pub w: Option<f64>,
    pub mu_inf: Option<f64>,
    pub psi_inf: Option<f64>,
    pub cpdf_zero_crossings: Option<usize>,
    pub phase: Phase,
    pub excluded_triangles: usize,
    pub excluded_cpdf_sites: usize,
}
