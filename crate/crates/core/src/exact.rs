//! Exact Schrödinger evolution on concentric-ring crystals.
//!
//! Each ring is restricted to its fully symmetric subspace, spanned by the
//! twisted collective operators `J+-_m = sum_{j in m} s+-_j e^{-+ i phi_j}`.
//! States are labelled per ring by the flip count k_m in 0..=N_m (k = 0 is
//! the highest-weight all-up state), giving total dimension
//! D = prod (N_m + 1). In this basis the ring Hamiltonian is real
//! symmetric and sparse; evolution uses a Lanczos/Krylov propagator.

use crate::crystal::RingCrystalSpec;
use crate::dynamics::OneChannelParams;
use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Default cap on the product-basis dimension (M = 5 rings).
pub const DEFAULT_DIM_CAP: usize = 86_450;

#[derive(Debug, Clone)]
pub struct RingBasis {
    pub spec: RingCrystalSpec,
    /// d_m = N_m + 1.
    pub dims: Vec<usize>,
    /// Flat index = sum_m k_m * stride_m.
    pub strides: Vec<usize>,
    pub dim: usize,
}

impl RingBasis {
    pub fn new(spec: RingCrystalSpec) -> Result<Self> {
        Self::with_cap(spec, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(spec: RingCrystalSpec, cap: usize) -> Result<Self> {
        let dims: Vec<usize> = spec.populations.iter().map(|&n| n + 1).collect();
        let dim: usize = dims.iter().product();
        if dim > cap {
            return Err(Error::BasisTooLarge { rings: spec.rings, dim, cap });
        }
        // Innermost ring varies slowest.
        let mut strides = vec![0; dims.len()];
        let mut acc = 1;
        for m in (0..dims.len()).rev() {
            strides[m] = acc;
            acc *= dims[m];
        }
        Ok(RingBasis { spec, dims, strides, dim })
    }

    /// Flip count of ring m at flat index `idx`.
    #[inline]
    pub fn k_of(&self, idx: usize, m: usize) -> usize {
        idx / self.strides[m] % self.dims[m]
    }
}

/// Normalized state vector in the product symmetric basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactState {
    pub amplitudes: Vec<Complex64>,
}

impl ExactState {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Minimal CSR storage for the real symmetric Hamiltonian.
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub data: Vec<f64>,
}

impl SparseSym {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            // Merge duplicate columns.
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some((lc, lv)) if *lc == c => *lv += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                if v != 0.0 {
                    indices.push(c as u32);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseSym { n, indptr, indices, data }
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        for i in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[p] * x[self.indices[p] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[p] as usize)] = self.data[p];
            }
        }
        m
    }
}

/// Ring Hamiltonian together with the data needed for observables.
#[derive(Debug, Clone)]
pub struct RingHamiltonian {
    pub basis: RingBasis,
    /// Normalized ring radii r~_m.
    pub radii: Vec<f64>,
    pub matrix: SparseSym,
    /// Total ion count N.
    pub n_total: usize,
}

fn lower_amp(n: usize, k: usize) -> f64 {
    // J^- |k> = sqrt((k+1)(N - k)) |k+1>
    (((k + 1) * (n - k)) as f64).sqrt()
}

fn build(spec: &RingCrystalSpec, b1: f64, j: f64, counterterm: f64) -> Result<RingHamiltonian> {
    let basis = RingBasis::new(spec.clone())?;
    let radii = spec.radii();
    let n_total = spec.total_ions();
    let nf = n_total as f64;
    let m_rings = spec.rings;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); basis.dim];
    for idx in 0..basis.dim {
        let ks: Vec<usize> = (0..m_rings).map(|m| basis.k_of(idx, m)).collect();
        let mut diag = 0.0;
        for m in 0..m_rings {
            let nm = spec.populations[m];
            let jz = nm as f64 / 2.0 - ks[m] as f64;
            let r2 = radii[m] * radii[m];
            diag += b1 * r2 * jz;
            // Counterterm (J/N) r~^2 (N_m/2 + J_Z) reconciling the
            // unrestricted ring double sum with the j != k site sum.
            diag += counterterm * r2 * (nm as f64 / 2.0 + jz);
            // Intra-ring J+_m J-_m is diagonal: (k+1)(N_m - k).
            diag -= j / nf * r2 * ((ks[m] + 1) * (nm - ks[m])) as f64;
        }
        rows[idx].push((idx, diag));
        // Cross-ring J+_m J-_m' (m != m'): k_m -> k_m - 1, k_m' -> k_m' + 1.
        for m in 0..m_rings {
            if ks[m] == 0 || radii[m] == 0.0 {
                continue;
            }
            for mp in 0..m_rings {
                if mp == m || ks[mp] == spec.populations[mp] || radii[mp] == 0.0 {
                    continue;
                }
                let target = idx - basis.strides[m] + basis.strides[mp];
                let amp = lower_amp(spec.populations[m], ks[m] - 1)
                    * lower_amp(spec.populations[mp], ks[mp]);
                rows[idx].push((target, -j / nf * radii[m] * radii[mp] * amp));
            }
        }
    }
    Ok(RingHamiltonian { basis, radii, matrix: SparseSym::from_rows(rows), n_total })
}

/// Ring Hamiltonian exactly as written for the benchmark:
/// H = B1 sum_m r~_m^2 J_Z_m - (J/N) sum_{m,m'} r~_m r~_m' J+_m J-_m',
/// with the unrestricted double sum (intra-ring j = k terms included).
pub fn build_ring_hamiltonian(spec: &RingCrystalSpec, b1: f64, j: f64) -> Result<RingHamiltonian> {
    build(spec, b1, j, 0.0)
}

/// Ring Hamiltonian matching the one-channel site Hamiltonian (whose
/// pairing sum excludes j = k): the unrestricted form with B1 = K plus the
/// diagonal counterterm (J/N) sum_j r~_j^2 (1/2 + s_Z_j).
pub fn build_ring_hamiltonian_one_channel(
    spec: &RingCrystalSpec,
    params: &OneChannelParams,
) -> Result<RingHamiltonian> {
    if params.n != spec.total_ions() {
        return Err(Error::InvalidArgument(format!(
            "params.n = {} does not match ring crystal N = {}",
            params.n,
            spec.total_ions()
        )));
    }
    build(spec, params.k, params.j, params.j / params.n as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v *= (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Product of per-ring spin coherent states. Ring m is tipped by polar
/// angle theta_m with azimuth chi_m in the twisted collective frame:
/// amplitude of the k-flip state is
/// sqrt(C(N_m, k)) cos(theta/2)^(N_m - k) (sin(theta/2) e^{i chi})^k.
/// Expectation: <J_Z_m> = (N_m / 2) cos(theta_m).
pub fn ring_coherent_state(
    basis: &RingBasis,
    thetas: &[f64],
    chis: &[f64],
) -> Result<ExactState> {
    let m_rings = basis.spec.rings;
    if thetas.len() != m_rings || chis.len() != m_rings {
        return Err(Error::InvalidArgument(format!(
            "expected {} ring angles, got {} / {}",
            m_rings,
            thetas.len(),
            chis.len()
        )));
    }
    if thetas.iter().chain(chis).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("ring angles must be finite".into()));
    }
    let per_ring: Vec<Vec<Complex64>> = (0..m_rings)
        .map(|m| {
            let n = basis.spec.populations[m];
            let c = (thetas[m] / 2.0).cos();
            let s = (thetas[m] / 2.0).sin() * Complex64::from_polar(1.0, chis[m]);
            (0..=n)
                .map(|k| binomial(n, k).sqrt() * c.powi((n - k) as i32) * s.powu(k as u32))
                .collect()
        })
        .collect();
    let mut amplitudes = vec![Complex64::new(1.0, 0.0); basis.dim];
    for idx in 0..basis.dim {
        for m in 0..m_rings {
            amplitudes[idx] *= per_ring[m][basis.k_of(idx, m)];
        }
    }
    Ok(ExactState { amplitudes })
}

/// Ring angles reproducing the BCS texture of `states::make_bcs_state`:
/// theta_m = pi r~_m with azimuth chi = -pi/2 (site states
/// cos(theta/2)|up> - i sin(theta/2) e^{i phi_j} |down>).
pub fn bcs_ring_angles(spec: &RingCrystalSpec) -> (Vec<f64>, Vec<f64>) {
    let thetas: Vec<f64> = spec.radii().iter().map(|&r| std::f64::consts::PI * r).collect();
    let chis = vec![-std::f64::consts::FRAC_PI_2; spec.rings];
    (thetas, chis)
}

/// Apply the twisted lowering operator J^-_m.
fn apply_lower(basis: &RingBasis, m: usize, x: &[Complex64], y: &mut [Complex64]) {
    let n = basis.spec.populations[m];
    for idx in 0..basis.dim {
        let k = basis.k_of(idx, m);
        if k < n {
            y[idx + basis.strides[m]] += lower_amp(n, k) * x[idx];
        }
    }
}

/// Per-ring <J_Z_m>.
pub fn expectation_jz(basis: &RingBasis, psi: &ExactState) -> Vec<f64> {
    let mut out = vec![0.0; basis.spec.rings];
    for idx in 0..basis.dim {
        let w = psi.amplitudes[idx].norm_sqr();
        for m in 0..basis.spec.rings {
            out[m] += w * (basis.spec.populations[m] as f64 / 2.0 - basis.k_of(idx, m) as f64);
        }
    }
    out
}

/// Per-ring <J^-_m>.
pub fn expectation_jminus(basis: &RingBasis, psi: &ExactState) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(basis.spec.rings);
    for m in 0..basis.spec.rings {
        let mut y = vec![Complex64::new(0.0, 0.0); basis.dim];
        apply_lower(basis, m, &psi.amplitudes, &mut y);
        out.push(
            psi.amplitudes
                .iter()
                .zip(&y)
                .map(|(a, b)| a.conj() * b)
                .sum(),
        );
    }
    out
}

struct Observables {
    psi: Complex64,
    psi_tilde: f64,
    sz: f64,
    energy: f64,
    clamped: bool,
}

fn observables(h: &RingHamiltonian, psi: &ExactState) -> Observables {
    let basis = &h.basis;
    let nf = h.n_total as f64;
    let jm = expectation_jminus(basis, psi);
    let jz = expectation_jz(basis, psi);
    let order: Complex64 = (0..basis.spec.rings).map(|m| 2.0 / nf * h.radii[m] * jm[m]).sum();
    // B^- = sum_m r~_m J^-_m; <B^+ B^-> = |B^- psi|^2.
    let mut b = vec![Complex64::new(0.0, 0.0); basis.dim];
    for m in 0..basis.spec.rings {
        if h.radii[m] != 0.0 {
            let mut y = vec![Complex64::new(0.0, 0.0); basis.dim];
            apply_lower(basis, m, &psi.amplitudes, &mut y);
            for (bi, yi) in b.iter_mut().zip(&y) {
                *bi += h.radii[m] * yi;
            }
        }
    }
    let bb: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    let diag: f64 = (0..basis.spec.rings)
        .map(|m| {
            h.radii[m] * h.radii[m] * (basis.spec.populations[m] as f64 / 2.0 + jz[m])
        })
        .sum();
    let corr = bb - diag;
    let mut y = vec![Complex64::new(0.0, 0.0); basis.dim];
    h.matrix.matvec(&psi.amplitudes, &mut y);
    let energy: f64 = psi
        .amplitudes
        .iter()
        .zip(&y)
        .map(|(a, b)| (a.conj() * b).re)
        .sum();
    Observables {
        psi: order,
        psi_tilde: 2.0 / nf * corr.max(0.0).sqrt(),
        sz: jz.iter().sum(),
        energy,
        clamped: corr < -1e-12,
    }
}

const KRYLOV_CAP: usize = 30;
const KRYLOV_TOL: f64 = 1e-10;

/// One Krylov propagation psi -> exp(-i H dt) psi; recursively halves dt
/// when the subspace cannot deliver the per-step tolerance.
fn krylov_step(h: &SparseSym, psi: &mut Vec<Complex64>, dt: f64, depth: usize) -> Result<()> {
    let n = h.n;
    let m_cap = KRYLOV_CAP.min(n);
    let beta0 = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if beta0 == 0.0 {
        return Ok(());
    }
    let mut vs: Vec<Vec<Complex64>> = Vec::with_capacity(m_cap);
    vs.push(psi.iter().map(|a| a / beta0).collect());
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut happy = false;
    for j in 0..m_cap {
        h.matvec(&vs[j], &mut w);
        if j > 0 {
            let b = betas[j - 1];
            for (wi, vi) in w.iter_mut().zip(&vs[j - 1]) {
                *wi -= b * vi;
            }
        }
        let alpha: f64 = vs[j].iter().zip(&w).map(|(v, wi)| (v.conj() * wi).re).sum();
        alphas.push(alpha);
        for (wi, vi) in w.iter_mut().zip(&vs[j]) {
            *wi -= alpha * vi;
        }
        // One round of reorthogonalization keeps the basis clean.
        for v in &vs {
            let c: Complex64 = v.iter().zip(&w).map(|(vi, wi)| vi.conj() * wi).sum();
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
        let beta = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if beta < 1e-14 || j + 1 == m_cap {
            happy = beta < 1e-14;
            break;
        }
        betas.push(beta);
        vs.push(w.iter().map(|a| a / beta).collect());
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for j in 0..m {
        t[(j, j)] = alphas[j];
        if j + 1 < m {
            t[(j, j + 1)] = betas[j];
            t[(j + 1, j)] = betas[j];
        }
    }
    let eig = t.symmetric_eigen();
    // y = U exp(-i dt Lambda) U^T e1 * beta0
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for col in 0..m {
        let phase = Complex64::from_polar(1.0, -dt * eig.eigenvalues[col]);
        let c = eig.eigenvectors[(0, col)];
        for row in 0..m {
            y[row] += eig.eigenvectors[(row, col)] * phase * c * beta0;
        }
    }
    // Last-component magnitude estimates the truncation error.
    let err = if happy { 0.0 } else { y[m - 1].norm() };
    if err > KRYLOV_TOL && depth < 40 {
        krylov_step(h, psi, dt / 2.0, depth + 1)?;
        return krylov_step(h, psi, dt / 2.0, depth + 1);
    }
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in vs.iter().enumerate() {
            acc += y[j] * v[i];
        }
        psi[i] = acc;
    }
    Ok(())
}

/// Evolve `psi0` under the ring Hamiltonian, recording observables at the
/// given strictly increasing dimensionless times (which should start at 0).
pub fn evolve_exact(psi0: &ExactState, h: &RingHamiltonian, times: &[f64]) -> Result<TimeSeries> {
    if psi0.amplitudes.len() != h.basis.dim {
        return Err(Error::InvalidArgument("state dimension does not match basis".into()));
    }
    let norm0 = psi0.norm();
    if (norm0 - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!("initial state norm {} != 1", norm0)));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("need at least one output time".into()));
    }
    let mut ts = TimeSeries::with_capacity(times.len());
    let mut psi = psi0.clone();
    let mut t_now = 0.0;
    for &t in times {
        if t < t_now {
            return Err(Error::InvalidArgument("output times must be increasing from 0".into()));
        }
        if t > t_now {
            krylov_step(&h.matrix, &mut psi.amplitudes, t - t_now, 0)?;
            t_now = t;
        }
        let drift = (psi.norm() - 1.0).abs();
        if drift > 1e-8 {
            return Err(Error::NormDrift { drift, time: t });
        }
        let obs = observables(h, &psi);
        ts.t.push(t);
        ts.psi.push(obs.psi);
        ts.psi_tilde.push(obs.psi_tilde);
        ts.sz_total.push(obs.sz);
        ts.energy.push(obs.energy);
        ts.n_cm.push(0.0);
        if obs.clamped {
            ts.diagnostics.psi_tilde_clamped = true;
        }
    }
    let e0 = ts.energy[0];
    let e1 = *ts.energy.last().unwrap();
    ts.diagnostics.energy_drift = (e1 - e0).abs() / e0.abs().max(1e-30);
    let c0 = ts.sz_total[0];
    let c1 = *ts.sz_total.last().unwrap();
    ts.diagnostics.conserved_sz_drift = (c1 - c0).abs() / c0.abs().max(1.0);
    ts.validate()?;
    Ok(ts)
}
