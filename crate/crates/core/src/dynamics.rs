//! Mean-field and discrete truncated Wigner (dTWA) time evolution of the
//! one-channel and two-channel pairing models.
//!
//! All runs use a fixed-step classical RK4 integrator in dimensionless time
//! (pass K and J, or B1/delta1/G, already scaled by the chosen time unit).
//! dTWA trajectories are keyed by (master seed, trajectory index) and
//! reduced in fixed order, so results do not depend on the worker count.

use crate::crystal::CrystalLayout;
use crate::error::{Error, Result};
use crate::states::SpinConfiguration;
use crate::timeseries::{RunDiagnostics, TimeSeries};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneChannelParams {
    /// Single-particle dispersion coefficient K.
    pub k: f64,
    /// Pairing strength J.
    pub j: f64,
    pub n: usize,
}

impl OneChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("one-channel model needs N >= 2".into()));
        }
        if self.j < 0.0 {
            return Err(Error::InvalidArgument("J must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoChannelParams {
    pub b1: f64,
    pub delta1: f64,
    pub g: f64,
    pub n: usize,
}

impl TwoChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("two-channel model needs N >= 2".into()));
        }
        if self.g < 0.0 {
            return Err(Error::InvalidArgument("G must be >= 0".into()));
        }
        Ok(())
    }

    /// Adiabatic elimination of the oscillator: J = G^2 / delta1,
    /// K = B1 - J/N.
    pub fn one_channel_limit(&self) -> OneChannelParams {
        let j = self.g * self.g / self.delta1;
        OneChannelParams { k: self.b1 - j / self.n as f64, j, n: self.n }
    }
}

/// Off-resonant extensions of the one-channel model: three Hermitian
/// spin-exchange matrices plus per-site Z-field shifts. The extended
/// Hamiltonian gains `sum_{j != k} M_{jk} s+_j s-_k` for each matrix and
/// `sum_j shift_j s_Z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffResonantCouplings {
    /// Achiral exchange.
    pub j5: DMatrix<Complex64>,
    /// Anti-chiral exchange.
    pub j11: DMatrix<Complex64>,
    /// Chiral exchange (single-mode limit reproduces the one-channel term).
    pub j12: DMatrix<Complex64>,
    /// Local Z-field shifts (same rate units as K, J).
    pub z_shift: Vec<f64>,
}

impl OffResonantCouplings {
    pub fn zeros(n: usize) -> Self {
        OffResonantCouplings {
            j5: DMatrix::zeros(n, n),
            j11: DMatrix::zeros(n, n),
            j12: DMatrix::zeros(n, n),
            z_shift: vec![0.0; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, m) in [("J5", &self.j5), ("J11", &self.j11), ("J12", &self.j12)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} must be {}x{}, got {}x{}",
                    name,
                    n,
                    n,
                    m.nrows(),
                    m.ncols()
                )));
            }
            for j in 0..n {
                for k in 0..n {
                    if (m[(j, k)] - m[(k, j)].conj()).norm() > 1e-9 * (1.0 + m[(j, k)].norm()) {
                        return Err(Error::Validation(format!("{} is not Hermitian at ({}, {})", name, j, k)));
                    }
                }
            }
        }
        if self.z_shift.len() != n {
            return Err(Error::InvalidArgument("z_shift length mismatch".into()));
        }
        Ok(())
    }

    /// Total exchange matrix actually applied to the dynamics.
    fn combined(&self) -> DMatrix<Complex64> {
        &self.j5 + &self.j11 + &self.j12
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    OneChannel(OneChannelParams),
    TwoChannel(TwoChannelParams),
}

impl Model {
    pub fn n(&self) -> usize {
        match self {
            Model::OneChannel(p) => p.n,
            Model::TwoChannel(p) => p.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::OneChannel(p) => p.validate(),
            Model::TwoChannel(p) => p.validate(),
        }
    }
}

/// A model together with optional off-resonant couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModel {
    pub model: Model,
    pub couplings: Option<OffResonantCouplings>,
}

/// Attach off-resonant coupling matrices to a model.
pub fn extend_with_offresonant(model: Model, couplings: OffResonantCouplings) -> Result<ExtendedModel> {
    model.validate()?;
    couplings.validate(model.n())?;
    Ok(ExtendedModel { model, couplings: Some(couplings) })
}

impl From<Model> for ExtendedModel {
    fn from(model: Model) -> Self {
        ExtendedModel { model, couplings: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    /// Integrator step in the run's dimensionless time.
    pub step: f64,
    /// Final dimensionless time.
    pub t_final: f64,
    /// Record every this many steps (the initial and final points are
    /// always recorded).
    pub output_every: usize,
    /// dTWA trajectory count.
    pub n_traj: usize,
    /// Master RNG seed for dTWA.
    pub seed: u64,
    /// Sample discrete spin noise (dTWA); off reduces to mean-field.
    pub sample_spins: bool,
    /// Sample oscillator vacuum noise (two-channel dTWA).
    pub sample_oscillator: bool,
    /// Dimensionless times at which to store per-site snapshots.
    pub snapshot_times: Vec<f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            step: 1e-3,
            t_final: 10.0,
            output_every: 100,
            n_traj: 1000,
            seed: 1,
            sample_spins: true,
            sample_oscillator: true,
            snapshot_times: Vec::new(),
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::InvalidArgument("step must be > 0".into()));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::InvalidArgument("t_final must be >= 0".into()));
        }
        if self.n_traj < 1 {
            return Err(Error::InvalidArgument("n_traj must be >= 1".into()));
        }
        if self.output_every == 0 {
            return Err(Error::InvalidArgument("output_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cached layout factors used in the RHS hot loop.
struct LayoutCache {
    /// r~_j
    r: Vec<f64>,
    /// e^{i phi_j}
    eip: Vec<Complex64>,
    /// r~_j e^{i phi_j}
    reip: Vec<Complex64>,
}

impl LayoutCache {
    fn new(layout: &CrystalLayout) -> Self {
        let eip: Vec<Complex64> = layout.phi.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        let reip = layout.r_norm.iter().zip(&eip).map(|(&r, &e)| r * e).collect();
        LayoutCache { r: layout.r_norm.clone(), eip, reip }
    }
}

/// Integrator state: s^+ and s^Z per site plus the oscillator amplitude.
#[derive(Clone)]
struct DynState {
    sp: Vec<Complex64>,
    sz: Vec<f64>,
    alpha: Complex64,
}

impl DynState {
    fn from_config(cfg: &SpinConfiguration) -> Self {
        DynState {
            sp: (0..cfg.len()).map(|j| cfg.s_plus(j)).collect(),
            sz: cfg.s.iter().map(|s| s[2]).collect(),
            alpha: cfg.alpha.unwrap_or(Complex64::new(0.0, 0.0)),
        }
    }

    fn to_config(&self, two_channel: bool) -> SpinConfiguration {
        SpinConfiguration {
            s: self
                .sp
                .iter()
                .zip(&self.sz)
                .map(|(p, &z)| [p.re, p.im, z])
                .collect(),
            alpha: two_channel.then_some(self.alpha),
        }
    }

    fn zeros_like(&self) -> Self {
        DynState {
            sp: vec![Complex64::new(0.0, 0.0); self.sp.len()],
            sz: vec![0.0; self.sz.len()],
            alpha: Complex64::new(0.0, 0.0),
        }
    }

    /// self += c * other
    fn axpy(&mut self, c: f64, other: &DynState) {
        for (a, b) in self.sp.iter_mut().zip(&other.sp) {
            *a += c * b;
        }
        for (a, b) in self.sz.iter_mut().zip(&other.sz) {
            *a += c * b;
        }
        self.alpha += c * other.alpha;
    }
}

/// Chiral collective amplitude A = sum_j r~_j e^{-i phi_j} s+_j = (N/2) Psi*.
fn collective_amplitude(cache: &LayoutCache, sp: &[Complex64]) -> Complex64 {
    cache
        .reip
        .iter()
        .zip(sp)
        .map(|(re, s)| re.conj() * s)
        .sum()
}

/// Order parameter Psi = (2/N) sum_j r~_j e^{i phi_j} s-_j.
fn order_parameter_cached(cache: &LayoutCache, sp: &[Complex64]) -> Complex64 {
    let n = sp.len() as f64;
    2.0 / n * collective_amplitude(cache, sp).conj()
}

/// Pre-sqrt pair correlator |A|^2 - sum_j r~_j^2 |s+_j|^2 (the j != k
/// restricted double sum for a product state).
fn pair_correlator(cache: &LayoutCache, sp: &[Complex64]) -> f64 {
    let a = collective_amplitude(cache, sp);
    let diag: f64 = cache.r.iter().zip(sp).map(|(&r, s)| r * r * s.norm_sqr()).sum();
    a.norm_sqr() - diag
}

fn rhs(ext: &ExtendedModel, cache: &LayoutCache, s: &DynState, ds: &mut DynState) {
    let n = s.sp.len();
    let nf = n as f64;
    match &ext.model {
        Model::OneChannel(p) => {
            let a = collective_amplitude(cache, &s.sp);
            for j in 0..n {
                let r = cache.r[j];
                // Psi*_j excludes the self term.
                let psi_star_j = 2.0 / nf * (a - cache.reip[j].conj() * s.sp[j]);
                ds.sp[j] = Complex64::new(0.0, p.k * r * r) * s.sp[j]
                    + Complex64::new(0.0, p.j * r * s.sz[j]) * cache.eip[j] * psi_star_j;
                ds.sz[j] = -p.j * r * (s.sp[j] * cache.eip[j].conj() * psi_star_j.conj()).im;
            }
            ds.alpha = Complex64::new(0.0, 0.0);
        }
        Model::TwoChannel(p) => {
            let gn = 2.0 * p.g / nf.sqrt();
            for j in 0..n {
                let r = cache.r[j];
                let drive = s.alpha * s.sp[j] * cache.eip[j].conj();
                ds.sp[j] = Complex64::new(0.0, p.b1 * r * r) * s.sp[j]
                    + gn * s.alpha.conj() * s.sz[j] * r * cache.eip[j];
                ds.sz[j] = -gn * r * drive.re;
            }
            let psi = order_parameter_cached(cache, &s.sp);
            ds.alpha = Complex64::new(0.0, -p.delta1) * s.alpha + nf.sqrt() * p.g / 2.0 * psi;
        }
    }
    if let Some(c) = &ext.couplings {
        let m = c.combined();
        for j in 0..n {
            // b+_j = 2 sum_{k != j} M*_{jk} s+_k, b_Z shift from H4/H6.
            let mut bp = Complex64::new(0.0, 0.0);
            for k in 0..n {
                if k != j {
                    bp += m[(j, k)].conj() * s.sp[k];
                }
            }
            bp *= 2.0;
            ds.sp[j] += Complex64::new(0.0, c.z_shift[j]) * s.sp[j]
                - Complex64::new(0.0, s.sz[j]) * bp;
            ds.sz[j] -= (bp * s.sp[j].conj()).im;
        }
    }
}

/// Mean-field energy of the extended model at a state.
fn energy(ext: &ExtendedModel, cache: &LayoutCache, s: &DynState) -> f64 {
    let n = s.sp.len();
    let nf = n as f64;
    let mut e = match &ext.model {
        Model::OneChannel(p) => {
            let kin: f64 = (0..n).map(|j| p.k * cache.r[j] * cache.r[j] * s.sz[j]).sum();
            kin - p.j / nf * pair_correlator(cache, &s.sp)
        }
        Model::TwoChannel(p) => {
            let kin: f64 = (0..n).map(|j| p.b1 * cache.r[j] * cache.r[j] * s.sz[j]).sum();
            let int: f64 = (0..n)
                .map(|j| cache.r[j] * (s.alpha * s.sp[j] * cache.eip[j].conj()).im)
                .sum();
            kin + p.delta1 * s.alpha.norm_sqr() + 2.0 * p.g / nf.sqrt() * int
        }
    };
    if let Some(c) = &ext.couplings {
        let m = c.combined();
        let mut ex = Complex64::new(0.0, 0.0);
        for j in 0..n {
            e += c.z_shift[j] * s.sz[j];
            for k in 0..n {
                if k != j {
                    ex += m[(j, k)] * s.sp[j] * s.sp[k].conj();
                }
            }
        }
        e += ex.re;
    }
    e
}

fn conserved_charge(ext: &ExtendedModel, s: &DynState) -> f64 {
    let sz: f64 = s.sz.iter().sum();
    match ext.model {
        Model::OneChannel(_) => sz,
        Model::TwoChannel(_) => sz + s.alpha.norm_sqr(),
    }
}

fn rk4_step(ext: &ExtendedModel, cache: &LayoutCache, s: &mut DynState, h: f64, work: &mut [DynState; 5]) {
    let [k1, k2, k3, k4, tmp] = work;
    rhs(ext, cache, s, k1);
    tmp.clone_from(s);
    tmp.axpy(0.5 * h, k1);
    rhs(ext, cache, tmp, k2);
    tmp.clone_from(s);
    tmp.axpy(0.5 * h, k2);
    rhs(ext, cache, tmp, k3);
    tmp.clone_from(s);
    tmp.axpy(h, k3);
    rhs(ext, cache, tmp, k4);
    s.axpy(h / 6.0, k1);
    s.axpy(h / 3.0, k2);
    s.axpy(h / 3.0, k3);
    s.axpy(h / 6.0, k4);
}

/// Public wrapper: one-channel mean-field RHS at a configuration.
/// Returns (ds+/dt, ds_Z/dt).
pub fn mf_rhs_one_channel(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    params: &OneChannelParams,
) -> (Vec<Complex64>, Vec<f64>) {
    let cache = LayoutCache::new(layout);
    let s = DynState::from_config(state);
    let mut ds = s.zeros_like();
    rhs(&Model::OneChannel(*params).into(), &cache, &s, &mut ds);
    (ds.sp, ds.sz)
}

/// Public wrapper: two-channel mean-field RHS.
/// Returns (ds+/dt, ds_Z/dt, dalpha/dt).
pub fn mf_rhs_two_channel(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    params: &TwoChannelParams,
) -> (Vec<Complex64>, Vec<f64>, Complex64) {
    let cache = LayoutCache::new(layout);
    let s = DynState::from_config(state);
    let mut ds = s.zeros_like();
    rhs(&Model::TwoChannel(*params).into(), &cache, &s, &mut ds);
    (ds.sp, ds.sz, ds.alpha)
}

struct Recorder {
    ts: TimeSeries,
    record_steps: Vec<usize>,
    snapshot_steps: Vec<usize>,
    next_record: usize,
    next_snapshot: usize,
}

fn schedule(cfg: &EvolveConfig) -> (usize, Vec<usize>, Vec<usize>) {
    let n_steps = (cfg.t_final / cfg.step).round() as usize;
    let mut record_steps: Vec<usize> = (0..=n_steps).step_by(cfg.output_every).collect();
    if record_steps.last() != Some(&n_steps) {
        record_steps.push(n_steps);
    }
    let mut snapshot_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| ((t / cfg.step).round() as usize).min(n_steps))
        .collect();
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();
    (n_steps, record_steps, snapshot_steps)
}

impl Recorder {
    fn new(cfg: &EvolveConfig) -> (Self, usize) {
        let (n_steps, record_steps, snapshot_steps) = schedule(cfg);
        let ts = TimeSeries::with_capacity(record_steps.len());
        (
            Recorder { ts, record_steps, snapshot_steps, next_record: 0, next_snapshot: 0 },
            n_steps,
        )
    }

    fn observe(
        &mut self,
        step: usize,
        t: f64,
        ext: &ExtendedModel,
        cache: &LayoutCache,
        s: &DynState,
    ) {
        if self.record_steps.get(self.next_record) == Some(&step) {
            self.next_record += 1;
            let nf = s.sp.len() as f64;
            self.ts.t.push(t);
            self.ts.psi.push(order_parameter_cached(cache, &s.sp));
            let corr = pair_correlator(cache, &s.sp);
            self.ts.psi_tilde.push(2.0 / nf * corr.max(0.0).sqrt());
            if corr < -1e-12 {
                self.ts.diagnostics.psi_tilde_clamped = true;
            }
            self.ts.sz_total.push(s.sz.iter().sum());
            self.ts.energy.push(energy(ext, cache, s));
            self.ts.n_cm.push(s.alpha.norm_sqr());
        }
        if self.snapshot_steps.get(self.next_snapshot) == Some(&step) {
            self.next_snapshot += 1;
            let two_ch = matches!(ext.model, Model::TwoChannel(_));
            self.ts.snapshots.push((t, s.to_config(two_ch)));
        }
    }
}

fn drift_diagnostics(ext: &ExtendedModel, cache: &LayoutCache, s0: &DynState, s1: &DynState) -> RunDiagnostics {
    let e0 = energy(ext, cache, s0);
    let e1 = energy(ext, cache, s1);
    let c0 = conserved_charge(ext, s0);
    let c1 = conserved_charge(ext, s1);
    let norm_drift = s0
        .sp
        .iter()
        .zip(&s0.sz)
        .zip(s1.sp.iter().zip(&s1.sz))
        .map(|((p0, &z0), (p1, &z1))| {
            let n0 = (p0.norm_sqr() + z0 * z0).sqrt();
            let n1 = (p1.norm_sqr() + z1 * z1).sqrt();
            (n1 - n0).abs()
        })
        .fold(0.0_f64, f64::max);
    let energy_drift = (e1 - e0).abs() / e0.abs().max(1e-30);
    let conserved_sz_drift = (c1 - c0).abs() / c0.abs().max(1.0);
    let step_warning = energy_drift > 1e-6 || conserved_sz_drift > 1e-6 || norm_drift > 1e-6;
    RunDiagnostics {
        energy_drift,
        conserved_sz_drift,
        spin_norm_drift: norm_drift,
        step_warning,
        psi_tilde_clamped: false,
    }
}

fn evolve_single(
    ext: &ExtendedModel,
    cache: &LayoutCache,
    init: DynState,
    cfg: &EvolveConfig,
) -> TimeSeries {
    let (mut rec, n_steps) = Recorder::new(cfg);
    let mut s = init.clone();
    let mut work = [s.zeros_like(), s.zeros_like(), s.zeros_like(), s.zeros_like(), s.zeros_like()];
    rec.observe(0, 0.0, ext, cache, &s);
    for step in 1..=n_steps {
        rk4_step(ext, cache, &mut s, cfg.step, &mut work);
        rec.observe(step, step as f64 * cfg.step, ext, cache, &s);
    }
    let clamped = rec.ts.diagnostics.psi_tilde_clamped;
    rec.ts.diagnostics = drift_diagnostics(ext, cache, &init, &s);
    rec.ts.diagnostics.psi_tilde_clamped = clamped;
    rec.ts
}

/// Deterministic mean-field evolution.
pub fn evolve_mf(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    model: impl Into<ExtendedModel>,
    cfg: &EvolveConfig,
) -> Result<TimeSeries> {
    let ext = model.into();
    ext.model.validate()?;
    if let Some(c) = &ext.couplings {
        c.validate(ext.model.n())?;
    }
    cfg.validate()?;
    if state.len() != layout.len() || state.len() != ext.model.n() {
        return Err(Error::InvalidArgument(format!(
            "size mismatch: state {}, layout {}, model {}",
            state.len(),
            layout.len(),
            ext.model.n()
        )));
    }
    let cache = LayoutCache::new(layout);
    let ts = evolve_single(&ext, &cache, DynState::from_config(state), cfg);
    ts.validate()?;
    Ok(ts)
}

/// Sample one dTWA spin realization around a mean texture: the component
/// along the mean direction stays 1/2, both transverse components are
/// +-1/2 with equal probability (sampled spin length sqrt(3)/2).
pub fn sample_dtwa_spins(mean: &SpinConfiguration, rng: &mut impl Rng) -> SpinConfiguration {
    let mut out = mean.clone();
    for s in out.s.iter_mut() {
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        let par = [s[0] / norm, s[1] / norm, s[2] / norm];
        // Any unit vector not parallel to the mean direction seeds the
        // transverse frame.
        let helper = if par[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let mut p1 = [
            helper[1] * par[2] - helper[2] * par[1],
            helper[2] * par[0] - helper[0] * par[2],
            helper[0] * par[1] - helper[1] * par[0],
        ];
        let n1 = (p1[0] * p1[0] + p1[1] * p1[1] + p1[2] * p1[2]).sqrt();
        for c in p1.iter_mut() {
            *c /= n1;
        }
        let p2 = [
            par[1] * p1[2] - par[2] * p1[1],
            par[2] * p1[0] - par[0] * p1[2],
            par[0] * p1[1] - par[1] * p1[0],
        ];
        let c1: f64 = if rng.gen::<bool>() { 0.5 } else { -0.5 };
        let c2: f64 = if rng.gen::<bool>() { 0.5 } else { -0.5 };
        for i in 0..3 {
            s[i] = 0.5 * par[i] + c1 * p1[i] + c2 * p2[i];
        }
    }
    out
}

/// Sample the oscillator vacuum Wigner distribution: Re and Im independent
/// zero-mean Gaussians with variance 1/4.
pub fn sample_dtwa_oscillator(rng: &mut impl Rng) -> Complex64 {
    // Box-Muller on two uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    let mag = (-2.0 * u1.ln()).sqrt() * 0.5;
    let ang = crate::constants::TWO_PI * u2;
    Complex64::new(mag * ang.cos(), mag * ang.sin())
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trajectory RNG, independent of execution order.
fn trajectory_rng(master_seed: u64, traj: u64) -> ChaCha8Rng {
    let mut state = master_seed ^ traj.wrapping_mul(0xd134_2543_de82_ef95);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Trajectory chunk size for the fixed-order parallel reduction.
const TRAJ_CHUNK: usize = 32;

struct TrajAccum {
    psi: Vec<Complex64>,
    corr: Vec<f64>,
    sz: Vec<f64>,
    energy: Vec<f64>,
    n_cm: Vec<f64>,
    snapshots: Vec<Vec<[f64; 3]>>,
}

impl TrajAccum {
    fn zeros(n_rec: usize, n_snap: usize, n_sites: usize) -> Self {
        TrajAccum {
            psi: vec![Complex64::new(0.0, 0.0); n_rec],
            corr: vec![0.0; n_rec],
            sz: vec![0.0; n_rec],
            energy: vec![0.0; n_rec],
            n_cm: vec![0.0; n_rec],
            snapshots: vec![vec![[0.0; 3]; n_sites]; n_snap],
        }
    }

    fn add(&mut self, other: &TrajAccum) {
        for (a, b) in self.psi.iter_mut().zip(&other.psi) {
            *a += b;
        }
        for (a, b) in self.corr.iter_mut().zip(&other.corr) {
            *a += b;
        }
        for (a, b) in self.sz.iter_mut().zip(&other.sz) {
            *a += b;
        }
        for (a, b) in self.energy.iter_mut().zip(&other.energy) {
            *a += b;
        }
        for (a, b) in self.n_cm.iter_mut().zip(&other.n_cm) {
            *a += b;
        }
        for (sa, sb) in self.snapshots.iter_mut().zip(&other.snapshots) {
            for (a, b) in sa.iter_mut().zip(sb) {
                for c in 0..3 {
                    a[c] += b[c];
                }
            }
        }
    }
}

/// dTWA evolution: trajectory-averaged observables on the common grid.
/// Deterministic given (seed, n_traj, step) independent of thread count.
pub fn evolve_dtwa(
    mean: &SpinConfiguration,
    layout: &CrystalLayout,
    model: impl Into<ExtendedModel>,
    cfg: &EvolveConfig,
) -> Result<TimeSeries> {
    let ext = model.into();
    ext.model.validate()?;
    if let Some(c) = &ext.couplings {
        c.validate(ext.model.n())?;
    }
    cfg.validate()?;
    if mean.len() != layout.len() || mean.len() != ext.model.n() {
        return Err(Error::InvalidArgument("size mismatch between texture, layout and model".into()));
    }
    let cache = LayoutCache::new(layout);
    let (n_steps, record_steps, snapshot_steps) = schedule(cfg);
    let two_ch = matches!(ext.model, Model::TwoChannel(_));
    let n_sites = mean.len();
    let nf = n_sites as f64;

    let run_traj = |traj: usize| -> TrajAccum {
        let mut rng = trajectory_rng(cfg.seed, traj as u64);
        let init_cfg = if cfg.sample_spins {
            sample_dtwa_spins(mean, &mut rng)
        } else {
            mean.clone()
        };
        let mut s = DynState::from_config(&init_cfg);
        if two_ch {
            s.alpha = if cfg.sample_oscillator {
                sample_dtwa_oscillator(&mut rng)
            } else {
                mean.alpha.unwrap_or(Complex64::new(0.0, 0.0))
            };
        }
        let mut acc = TrajAccum::zeros(record_steps.len(), snapshot_steps.len(), n_sites);
        let mut work =
            [s.zeros_like(), s.zeros_like(), s.zeros_like(), s.zeros_like(), s.zeros_like()];
        let mut rec_i = 0;
        let mut snap_i = 0;
        let observe = |step: usize, s: &DynState, acc: &mut TrajAccum, rec_i: &mut usize, snap_i: &mut usize| {
            if record_steps.get(*rec_i) == Some(&step) {
                acc.psi[*rec_i] = order_parameter_cached(&cache, &s.sp);
                acc.corr[*rec_i] = pair_correlator(&cache, &s.sp);
                acc.sz[*rec_i] = s.sz.iter().sum();
                acc.energy[*rec_i] = energy(&ext, &cache, s);
                acc.n_cm[*rec_i] = s.alpha.norm_sqr();
                *rec_i += 1;
            }
            if snapshot_steps.get(*snap_i) == Some(&step) {
                for (a, (p, &z)) in acc.snapshots[*snap_i].iter_mut().zip(s.sp.iter().zip(&s.sz)) {
                    a[0] = p.re;
                    a[1] = p.im;
                    a[2] = z;
                }
                *snap_i += 1;
            }
        };
        observe(0, &s, &mut acc, &mut rec_i, &mut snap_i);
        for step in 1..=n_steps {
            rk4_step(&ext, &cache, &mut s, cfg.step, &mut work);
            observe(step, &s, &mut acc, &mut rec_i, &mut snap_i);
        }
        acc
    };

    // Fixed-order chunked reduction: chunk results are combined in
    // ascending chunk index regardless of which worker produced them.
    let chunk_ids: Vec<usize> = (0..cfg.n_traj.div_ceil(TRAJ_CHUNK)).collect();
    let partials: Vec<TrajAccum> = chunk_ids
        .par_iter()
        .map(|&c| {
            let lo = c * TRAJ_CHUNK;
            let hi = ((c + 1) * TRAJ_CHUNK).min(cfg.n_traj);
            let mut acc = TrajAccum::zeros(record_steps.len(), snapshot_steps.len(), n_sites);
            for traj in lo..hi {
                acc.add(&run_traj(traj));
            }
            acc
        })
        .collect();
    let mut total = TrajAccum::zeros(record_steps.len(), snapshot_steps.len(), n_sites);
    for p in &partials {
        total.add(p);
    }

    let inv = 1.0 / cfg.n_traj as f64;
    let mut ts = TimeSeries::with_capacity(record_steps.len());
    for (i, &step) in record_steps.iter().enumerate() {
        let corr = total.corr[i] * inv;
        if corr < -1e-12 {
            ts.diagnostics.psi_tilde_clamped = true;
        }
        ts.t.push(step as f64 * cfg.step);
        ts.psi.push(total.psi[i] * inv);
        ts.psi_tilde.push(2.0 / nf * corr.max(0.0).sqrt());
        ts.sz_total.push(total.sz[i] * inv);
        ts.energy.push(total.energy[i] * inv);
        ts.n_cm.push(total.n_cm[i] * inv);
    }
    for (i, &step) in snapshot_steps.iter().enumerate() {
        let s = SpinConfiguration {
            s: total.snapshots[i].iter().map(|a| [a[0] * inv, a[1] * inv, a[2] * inv]).collect(),
            alpha: None,
        };
        ts.snapshots.push((step as f64 * cfg.step, s));
    }
    // Ensemble-averaged conservation drifts.
    let e0 = ts.energy.first().copied().unwrap_or(0.0);
    let e1 = ts.energy.last().copied().unwrap_or(0.0);
    ts.diagnostics.energy_drift = (e1 - e0).abs() / e0.abs().max(1e-30);
    let c0 = ts.sz_total.first().copied().unwrap_or(0.0) + if two_ch { ts.n_cm[0] } else { 0.0 };
    let c1 = ts.sz_total.last().copied().unwrap_or(0.0)
        + if two_ch { *ts.n_cm.last().unwrap() } else { 0.0 };
    ts.diagnostics.conserved_sz_drift = (c1 - c0).abs() / c0.abs().max(1.0);
    ts.validate()?;
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::make_ring_crystal;
    use crate::states::{make_bcs_state, SpinConfiguration};
    use approx::assert_abs_diff_eq;

    fn random_state(n: usize, rng: &mut ChaCha8Rng, with_alpha: bool) -> SpinConfiguration {
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..crate::constants::TWO_PI);
            let st = (1.0 - z * z).sqrt();
            s.push([0.5 * st * phi.cos(), 0.5 * st * phi.sin(), 0.5 * z]);
        }
        let alpha = with_alpha
            .then(|| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        SpinConfiguration { s, alpha }
    }

    #[test]
    fn decoupled_limit_precession() {
        let layout = make_ring_crystal(3);
        let state = make_bcs_state(&layout);
        let params = OneChannelParams { k: 2.0, j: 0.0, n: layout.len() };
        let (dsp, dsz) = mf_rhs_one_channel(&state, &layout, &params);
        for j in 0..layout.len() {
            let r2 = layout.r_norm[j] * layout.r_norm[j];
            let expect = Complex64::new(0.0, 2.0 * r2) * state.s_plus(j);
            assert_abs_diff_eq!((dsp[j] - expect).norm(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(dsz[j], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn polarized_state_is_fixed_point() {
        let layout = make_ring_crystal(3);
        let state = SpinConfiguration::polarized_up(layout.len());
        let params = OneChannelParams { k: 1.0, j: 1.0, n: layout.len() };
        let (dsp, dsz) = mf_rhs_one_channel(&state, &layout, &params);
        for j in 0..layout.len() {
            assert_abs_diff_eq!(dsp[j].norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(dsz[j], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_spin_rhs_hand_computed() {
        // Two ions at r~ = 1, phi = 0 and pi; generic spins. Hand-evaluate
        // the EOM term by term.
        let layout = CrystalLayout::from_positions(vec![1.0, -1.0], vec![0.0, 0.0]);
        let state = SpinConfiguration {
            s: vec![[0.3, 0.1, 0.2], [-0.2, 0.25, -0.05]],
            alpha: None,
        };
        let (k, j) = (1.7, 0.9);
        let params = OneChannelParams { k, j, n: 2 };
        let (dsp, dsz) = mf_rhs_one_channel(&state, &layout, &params);
        let e0 = Complex64::new(1.0, 0.0);
        let e1 = Complex64::from_polar(1.0, std::f64::consts::PI);
        let sp = [state.s_plus(0), state.s_plus(1)];
        let sm = [sp[0].conj(), sp[1].conj()];
        let sz = [0.2, -0.05];
        // Psi_0 excludes site 0, so it only sees site 1 and vice versa.
        let psi0 = 1.0 * sm[1] * e1; // (2/N) r~ s- e^{i phi} with N=2
        let psi1 = 1.0 * sm[0] * e0;
        let expect0 = Complex64::new(0.0, k) * sp[0] + Complex64::new(0.0, j * sz[0]) * e0 * psi0.conj();
        let expect1 = Complex64::new(0.0, k) * sp[1] + Complex64::new(0.0, j * sz[1]) * e1 * psi1.conj();
        assert_abs_diff_eq!((dsp[0] - expect0).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((dsp[1] - expect1).norm(), 0.0, epsilon = 1e-14);
        let expz0 = -j * (sp[0] * e0.conj() * psi0).im;
        let expz1 = -j * (sp[1] * e1.conj() * psi1).im;
        assert_abs_diff_eq!(dsz[0], expz0, epsilon = 1e-14);
        assert_abs_diff_eq!(dsz[1], expz1, epsilon = 1e-14);
    }

    #[test]
    fn two_channel_free_limit() {
        let layout = make_ring_crystal(2);
        let mut state = make_bcs_state(&layout);
        state.alpha = Some(Complex64::new(0.4, -0.3));
        let params = TwoChannelParams { b1: 0.5, delta1: 2.0, g: 0.0, n: layout.len() };
        let (_, dsz, dalpha) = mf_rhs_two_channel(&state, &layout, &params);
        let expect = Complex64::new(0.0, -2.0) * Complex64::new(0.4, -0.3);
        assert_abs_diff_eq!((dalpha - expect).norm(), 0.0, epsilon = 1e-15);
        for d in dsz {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
        }
        let cfg = EvolveConfig {
            step: 1e-3,
            t_final: 2.0,
            output_every: 500,
            sample_spins: false,
            sample_oscillator: false,
            ..Default::default()
        };
        let ts = evolve_mf(&state, &layout, Model::TwoChannel(params), &cfg).unwrap();
        // alpha(t) = alpha(0) e^{-i delta1 t}: |alpha|^2 constant.
        for &n in &ts.n_cm {
            assert_abs_diff_eq!(n, 0.25, epsilon = 1e-10);
        }
    }

    #[test]
    fn conserved_quantities_stationary_along_rhs() {
        // Directional derivative of each conserved quantity along the RHS
        // vanishes at random states.
        let layout = make_ring_crystal(3);
        let n = layout.len();
        let cache = LayoutCache::new(&layout);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let two_ch = trial % 2 == 1;
            let ext: ExtendedModel = if two_ch {
                Model::TwoChannel(TwoChannelParams { b1: 0.7, delta1: 1.3, g: 0.8, n }).into()
            } else {
                Model::OneChannel(OneChannelParams { k: 1.2, j: 0.9, n }).into()
            };
            let state = random_state(n, &mut rng, two_ch);
            let s = DynState::from_config(&state);
            let mut ds = s.zeros_like();
            rhs(&ext, &cache, &s, &mut ds);
            // Sum of dsz (+ d|alpha|^2) is exactly the conserved-charge rate.
            let mut rate: f64 = ds.sz.iter().sum();
            if two_ch {
                rate += 2.0 * (s.alpha.conj() * ds.alpha).re;
            }
            assert_abs_diff_eq!(rate, 0.0, epsilon = 1e-10);
            // Energy rate via central difference along the RHS direction.
            let h = 1e-6;
            let mut plus = s.clone();
            plus.axpy(h, &ds);
            let mut minus = s.clone();
            minus.axpy(-h, &ds);
            let de = (energy(&ext, &cache, &plus) - energy(&ext, &cache, &minus)) / (2.0 * h);
            assert_abs_diff_eq!(de, 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn global_phase_covariance() {
        let layout = make_ring_crystal(3);
        let n = layout.len();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = random_state(n, &mut rng, true);
        let theta = 0.83;
        let rot = Complex64::from_polar(1.0, theta);
        let rotated = SpinConfiguration {
            s: state
                .s
                .iter()
                .map(|s| {
                    let p = Complex64::new(s[0], s[1]) * rot;
                    [p.re, p.im, s[2]]
                })
                .collect(),
            // The oscillator rotates with the opposite phase: the
            // interaction couples alpha to s+, so alpha -> e^{-i theta}
            // alpha leaves the Hamiltonian invariant.
            alpha: state.alpha.map(|a| a * rot.conj()),
        };
        let cfg = EvolveConfig {
            step: 1e-3,
            t_final: 3.0,
            output_every: 300,
            sample_spins: false,
            sample_oscillator: false,
            ..Default::default()
        };
        for model in [
            Model::OneChannel(OneChannelParams { k: 1.0, j: 1.0, n }),
            Model::TwoChannel(TwoChannelParams { b1: 0.3, delta1: 1.0, g: 1.0, n }),
        ] {
            let a = evolve_mf(&state, &layout, model.clone(), &cfg).unwrap();
            let b = evolve_mf(&rotated, &layout, model, &cfg).unwrap();
            for (pa, pb) in a.psi.iter().zip(&b.psi) {
                assert_abs_diff_eq!(pa.norm(), pb.norm(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn step_halving_convergence() {
        let layout = make_ring_crystal(3);
        let state = make_bcs_state(&layout);
        let model = Model::OneChannel(OneChannelParams { k: 1.0, j: 1.0, n: layout.len() });
        let run = |step: f64| {
            let cfg = EvolveConfig {
                step,
                t_final: 5.0,
                output_every: (1.0 / step).round() as usize,
                sample_spins: false,
                sample_oscillator: false,
                ..Default::default()
            };
            evolve_mf(&state, &layout, model.clone(), &cfg).unwrap()
        };
        let coarse = run(1e-3);
        let fine = run(5e-4);
        assert_eq!(coarse.len(), fine.len());
        for (a, b) in coarse.psi.iter().zip(&fine.psi) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn conservation_over_long_run() {
        let layout = make_ring_crystal(4);
        let state = make_bcs_state(&layout);
        let cfg = EvolveConfig {
            step: 1e-3,
            t_final: 20.0,
            output_every: 2000,
            sample_spins: false,
            sample_oscillator: false,
            ..Default::default()
        };
        let model = Model::OneChannel(OneChannelParams { k: 1.0, j: 1.0, n: layout.len() });
        let ts = evolve_mf(&state, &layout, model, &cfg).unwrap();
        assert!(ts.diagnostics.energy_drift < 1e-8, "energy drift {}", ts.diagnostics.energy_drift);
        assert!(ts.diagnostics.conserved_sz_drift < 1e-8);
        assert!(ts.diagnostics.spin_norm_drift < 1e-8);
        assert!(!ts.diagnostics.step_warning);
    }

    #[test]
    fn dtwa_sampling_statistics() {
        let layout = make_ring_crystal(2);
        let mean = make_bcs_state(&layout);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n_samp = 10_000;
        let mut acc = vec![[0.0; 3]; mean.len()];
        for _ in 0..n_samp {
            let s = sample_dtwa_spins(&mean, &mut rng);
            for (a, b) in acc.iter_mut().zip(&s.s) {
                for c in 0..3 {
                    a[c] += b[c];
                }
                let norm = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
                assert_abs_diff_eq!(norm, 3.0_f64.sqrt() / 2.0, epsilon = 1e-12);
            }
        }
        // Sample mean within 3 sigma of the mean texture; each transverse
        // component has variance 1/4 per sample.
        let sigma = 0.5 / (n_samp as f64).sqrt() * 2.0_f64.sqrt();
        for (a, b) in acc.iter().zip(&mean.s) {
            for c in 0..3 {
                assert!(
                    (a[c] / n_samp as f64 - b[c]).abs() < 3.5 * sigma,
                    "component {} off: {} vs {}",
                    c,
                    a[c] / n_samp as f64,
                    b[c]
                );
            }
        }
    }

    #[test]
    fn dtwa_oscillator_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut sum_n = 0.0;
        for _ in 0..n {
            let a = sample_dtwa_oscillator(&mut rng);
            sum += a;
            sum_n += a.norm_sqr();
        }
        let mean = sum / n as f64;
        let sigma = 0.5 / (n as f64).sqrt();
        assert!(mean.re.abs() < 3.0 * sigma && mean.im.abs() < 3.0 * sigma);
        // E|alpha|^2 = 1/2; Var(|alpha|^2) = 1/4 for complex Gaussian.
        assert!((sum_n / n as f64 - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn noise_off_dtwa_matches_mf() {
        let layout = make_ring_crystal(3);
        let state = make_bcs_state(&layout);
        let model = Model::OneChannel(OneChannelParams { k: 1.0, j: 1.0, n: layout.len() });
        let cfg = EvolveConfig {
            step: 1e-3,
            t_final: 3.0,
            output_every: 100,
            n_traj: 1,
            sample_spins: false,
            sample_oscillator: false,
            ..Default::default()
        };
        let mf = evolve_mf(&state, &layout, model.clone(), &cfg).unwrap();
        let tw = evolve_dtwa(&state, &layout, model, &cfg).unwrap();
        for (a, b) in mf.psi.iter().zip(&tw.psi) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn dtwa_deterministic_across_thread_counts() {
        let layout = make_ring_crystal(2);
        let state = make_bcs_state(&layout);
        let model = Model::OneChannel(OneChannelParams { k: 1.0, j: 1.0, n: layout.len() });
        let cfg = EvolveConfig {
            step: 1e-2,
            t_final: 1.0,
            output_every: 20,
            n_traj: 70,
            seed: 42,
            snapshot_times: vec![1.0],
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| evolve_dtwa(&state, &layout, model.clone(), &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.psi, b.psi);
        assert_eq!(a.psi_tilde, b.psi_tilde);
        assert_eq!(a.snapshots[0].1.s, b.snapshots[0].1.s);
        // And a fresh identical run is bit-identical.
        let c = run(2);
        assert_eq!(a.psi, c.psi);
    }

    #[test]
    fn zero_couplings_identical_rhs() {
        let layout = make_ring_crystal(3);
        let n = layout.len();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let state = random_state(n, &mut rng, false);
        let params = OneChannelParams { k: 1.0, j: 1.0, n };
        let pure = mf_rhs_one_channel(&state, &layout, &params);
        let ext = extend_with_offresonant(
            Model::OneChannel(params),
            OffResonantCouplings::zeros(n),
        )
        .unwrap();
        let cache = LayoutCache::new(&layout);
        let s = DynState::from_config(&state);
        let mut ds = s.zeros_like();
        rhs(&ext, &cache, &s, &mut ds);
        assert_eq!(pure.0, ds.sp);
        assert_eq!(pure.1, ds.sz);
    }

    #[test]
    fn coupling_dimension_mismatch_rejected() {
        let params = OneChannelParams { k: 1.0, j: 1.0, n: 7 };
        let bad = OffResonantCouplings::zeros(5);
        assert!(extend_with_offresonant(Model::OneChannel(params), bad).is_err());
    }

    #[test]
    fn exchange_extension_conserves_charge_and_energy() {
        // Random Hermitian exchange matrices still conserve sum s_Z and
        // energy; checks the extension's RHS against its Hamiltonian.
        let layout = make_ring_crystal(2);
        let n = layout.len();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut j5 = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in (j + 1)..n {
                let v = Complex64::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
                j5[(j, k)] = v;
                j5[(k, j)] = v.conj();
            }
        }
        let coup = OffResonantCouplings {
            j5,
            j11: DMatrix::zeros(n, n),
            j12: DMatrix::zeros(n, n),
            z_shift: (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        };
        let ext = extend_with_offresonant(
            Model::OneChannel(OneChannelParams { k: 1.0, j: 1.0, n }),
            coup,
        )
        .unwrap();
        let state = make_bcs_state(&layout);
        let cfg = EvolveConfig {
            step: 1e-3,
            t_final: 5.0,
            output_every: 1000,
            sample_spins: false,
            sample_oscillator: false,
            ..Default::default()
        };
        let ts = evolve_mf(&state, &layout, ext, &cfg).unwrap();
        assert!(ts.diagnostics.energy_drift < 1e-8);
        assert!(ts.diagnostics.conserved_sz_drift < 1e-8);
    }

    #[test]
    fn far_detuned_two_channel_matches_one_channel() {
        // delta1^2 / G^2 = 100 with alpha(0) = 0: adiabatic elimination
        // should hold to 10% over Jt in [0, 5].
        let layout = make_ring_crystal(3);
        let n = layout.len();
        let g = 1.0;
        let delta1 = 10.0;
        let j = g * g / delta1;
        let b1 = j; // K/J order unity
        let two = TwoChannelParams { b1, delta1, g, n };
        let one = two.one_channel_limit();
        let mut state = make_bcs_state(&layout);
        state.alpha = Some(Complex64::new(0.0, 0.0));
        // Time unit here is 1/G; Jt = 5 means t = 5/J.
        let t_final = 5.0 / j;
        let cfg = EvolveConfig {
            step: 1e-3 / j,
            t_final,
            output_every: 500,
            sample_spins: false,
            sample_oscillator: false,
            ..Default::default()
        };
        let ts2 = evolve_mf(&state, &layout, Model::TwoChannel(two), &cfg).unwrap();
        let ts1 = evolve_mf(&state, &layout, Model::OneChannel(one), &cfg).unwrap();
        let max1 = ts1.abs_psi().into_iter().fold(0.0_f64, f64::max);
        for (a, b) in ts2.psi.iter().zip(&ts1.psi) {
            assert!(
                (a.norm() - b.norm()).abs() < 0.1 * max1,
                "two-channel deviates: {} vs {}",
                a.norm(),
                b.norm()
            );
        }
    }
}
