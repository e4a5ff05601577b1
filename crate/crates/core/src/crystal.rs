//! Ion-crystal geometries: idealized concentric-ring crystals and
//! equilibrated planar Penning-trap crystals, plus drumhead normal modes.
//!
//! Equilibria minimize the dimensionless rotating-frame energy
//! `Phi = sum_j u_j^2 / 2 + sum_{j<k} 1/|u_j - u_k|`, where positions are
//! scaled by `l0 = (k_e q^2 / (m beta))^(1/3)` and
//! `beta = omega_r (omega_c - omega_r) - omega_z^2 / 2` is the effective
//! radial stiffness of the rotating frame.

use crate::constants::{COULOMB_CONSTANT, ELEMENTARY_CHARGE, HBAR};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Penning-trap operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapConfig {
    /// Crystal rotation frequency (angular, rad/s).
    pub omega_r: f64,
    /// Axial / drumhead c.m. frequency (angular, rad/s).
    pub omega_z: f64,
    /// Cyclotron frequency (angular, rad/s).
    pub omega_c: f64,
    /// Ion mass (kg).
    pub mass: f64,
    /// Number of ions.
    pub n_ions: usize,
    /// Free-text label ("A", "B", ...).
    pub label: String,
}

impl TrapConfig {
    /// Effective radial stiffness `omega_r (omega_c - omega_r) - omega_z^2/2`
    /// in rad^2/s^2. Must be positive for a stable planar crystal.
    pub fn beta(&self) -> f64 {
        self.omega_r * (self.omega_c - self.omega_r) - 0.5 * self.omega_z * self.omega_z
    }

    /// Characteristic length `(k_e q^2 / (m beta))^(1/3)` in meters.
    pub fn length_scale(&self) -> f64 {
        let ke_q2 = COULOMB_CONSTANT * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE;
        (ke_q2 / (self.mass * self.beta())).cbrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_r > 0.0) {
            return Err(Error::InvalidTrap(format!("omega_r = {} must be > 0", self.omega_r)));
        }
        if !(self.omega_z > 0.0) {
            return Err(Error::InvalidTrap(format!("omega_z = {} must be > 0", self.omega_z)));
        }
        if !(self.beta() > 0.0) {
            return Err(Error::InvalidTrap(format!(
                "radially unstable: omega_r (omega_c - omega_r) - omega_z^2/2 = {:.3e} <= 0",
                self.beta()
            )));
        }
        if self.n_ions == 0 {
            return Err(Error::InvalidTrap("n_ions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Planar crystal geometry in the rotating frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalLayout {
    /// Rotating-frame coordinates (m).
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Radii r_j (m).
    pub r: Vec<f64>,
    /// Normalized radii r_j / R.
    pub r_norm: Vec<f64>,
    /// Azimuthal phases phi_j in (-pi, pi].
    pub phi: Vec<f64>,
    /// Crystal radius R = max_j r_j (m).
    pub radius: f64,
}

impl CrystalLayout {
    /// Build a layout from rotating-frame positions in meters.
    pub fn from_positions(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len());
        let r: Vec<f64> = x.iter().zip(&y).map(|(&x, &y)| x.hypot(y)).collect();
        let radius = r.iter().cloned().fold(0.0_f64, f64::max);
        let scale = if radius > 0.0 { radius } else { 1.0 };
        let r_norm = r.iter().map(|&r| r / scale).collect();
        let phi = x
            .iter()
            .zip(&y)
            .map(|(&x, &y)| if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) })
            .collect();
        CrystalLayout { x, y, r, r_norm, phi, radius }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.y.len() != n || self.r.len() != n || self.r_norm.len() != n || self.phi.len() != n {
            return Err(Error::Validation("layout field lengths disagree".into()));
        }
        for (j, &rn) in self.r_norm.iter().enumerate() {
            if !(0.0..=1.0 + 1e-12).contains(&rn) {
                return Err(Error::Validation(format!(
                    "normalized radius out of range at ion {}: r/R = {}",
                    j, rn
                )));
            }
        }
        Ok(())
    }
}

/// Concentric-ring crystal: ring m holds `6(m-1) + delta_{m,1}` ions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingCrystalSpec {
    pub rings: usize,
    pub populations: Vec<usize>,
}

impl RingCrystalSpec {
    pub fn new(rings: usize) -> Self {
        assert!(rings >= 1);
        let populations = (1..=rings)
            .map(|m| if m == 1 { 1 } else { 6 * (m - 1) })
            .collect();
        RingCrystalSpec { rings, populations }
    }

    /// Total ion count N(M) = 1 + 3 M (M - 1).
    pub fn total_ions(&self) -> usize {
        1 + 3 * self.rings * (self.rings - 1)
    }

    /// Normalized ring radii, linear in ring index with r_1 = 0.
    pub fn radii(&self) -> Vec<f64> {
        if self.rings == 1 {
            vec![0.0]
        } else {
            (0..self.rings).map(|m| m as f64 / (self.rings - 1) as f64).collect()
        }
    }

    /// Ring index of each ion, in layout order.
    pub fn ring_of_ion(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_ions());
        for (m, &pop) in self.populations.iter().enumerate() {
            out.extend(std::iter::repeat(m).take(pop));
        }
        out
    }
}

/// Idealized crystal of `rings` concentric rings, unit outer radius.
pub fn make_ring_crystal(rings: usize) -> CrystalLayout {
    let spec = RingCrystalSpec::new(rings);
    let radii = spec.radii();
    let mut x = Vec::with_capacity(spec.total_ions());
    let mut y = Vec::with_capacity(spec.total_ions());
    for (m, &pop) in spec.populations.iter().enumerate() {
        for i in 0..pop {
            let phi = crate::constants::TWO_PI * i as f64 / pop as f64;
            x.push(radii[m] * phi.cos());
            y.push(radii[m] * phi.sin());
        }
    }
    CrystalLayout::from_positions(x, y)
}

/// Drumhead (out-of-plane) normal-mode data.
#[derive(Debug, Clone)]
pub struct ModeData {
    /// Mode frequencies (rad/s), sorted descending; index 0 is the c.m. mode.
    pub omega: Vec<f64>,
    /// Orthonormal mode matrix, column n = eigenvector of mode n.
    pub matrix: DMatrix<f64>,
    /// Lamb-Dicke parameters eta_n = dkz sqrt(hbar / (2 m omega_n)).
    pub eta: Vec<f64>,
}

/// Dimensionless rotating-frame energy and gradient at scaled positions `u`
/// (layout `[x0, y0, x1, y1, ...]`).
pub fn potential_energy_gradient(u: &[f64]) -> (f64, Vec<f64>) {
    let n = u.len() / 2;
    let mut energy = 0.0;
    let mut grad = vec![0.0; 2 * n];
    for j in 0..n {
        let (xj, yj) = (u[2 * j], u[2 * j + 1]);
        energy += 0.5 * (xj * xj + yj * yj);
        grad[2 * j] += xj;
        grad[2 * j + 1] += yj;
        for k in (j + 1)..n {
            let dx = xj - u[2 * k];
            let dy = yj - u[2 * k + 1];
            let d2 = dx * dx + dy * dy;
            let d = d2.sqrt();
            energy += 1.0 / d;
            let w = 1.0 / (d2 * d);
            grad[2 * j] -= w * dx;
            grad[2 * j + 1] -= w * dy;
            grad[2 * k] += w * dx;
            grad[2 * k + 1] += w * dy;
        }
    }
    (energy, grad)
}

fn potential_hessian(u: &[f64]) -> DMatrix<f64> {
    let n = u.len() / 2;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        h[(j, j)] = 1.0;
    }
    for j in 0..n {
        for k in (j + 1)..n {
            let dx = u[2 * j] - u[2 * k];
            let dy = u[2 * j + 1] - u[2 * k + 1];
            let d2 = dx * dx + dy * dy;
            let d5 = d2 * d2 * d2.sqrt();
            // d^2/du^2 of 1/d: (3 e e^T - d^2 I) / d^5
            let hxx = (3.0 * dx * dx - d2) / d5;
            let hyy = (3.0 * dy * dy - d2) / d5;
            let hxy = 3.0 * dx * dy / d5;
            let blocks = [(0, 0, hxx), (0, 1, hxy), (1, 0, hxy), (1, 1, hyy)];
            for &(a, b, v) in &blocks {
                h[(2 * j + a, 2 * j + b)] += v;
                h[(2 * k + a, 2 * k + b)] += v;
                h[(2 * j + a, 2 * k + b)] -= v;
                h[(2 * k + a, 2 * j + b)] -= v;
            }
        }
    }
    h
}

const GRAD_TOL: f64 = 1e-9;
const MAX_NEWTON_ITERS: usize = 500;

/// Hexagonal-lattice seed with a small deterministic perturbation.
fn hexagonal_seed(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r_est = (1.5 * n as f64).cbrt();
    let a = r_est * (crate::constants::TWO_PI / (3.0_f64.sqrt() * n as f64)).sqrt();
    let span = (2.0 * r_est / a).ceil() as i64 + 2;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for i in -span..=span {
        for j in -span..=span {
            let x = a * (i as f64 + 0.5 * j as f64);
            let y = a * 3.0_f64.sqrt() / 2.0 * j as f64;
            pts.push((x, y));
        }
    }
    pts.sort_by(|p, q| {
        let rp = p.0 * p.0 + p.1 * p.1;
        let rq = q.0 * q.0 + q.1 * q.1;
        rp.partial_cmp(&rq).unwrap()
    });
    let mut u = Vec::with_capacity(2 * n);
    for &(x, y) in pts.iter().take(n) {
        u.push(x + 0.02 * a * rng.gen_range(-1.0..1.0));
        u.push(y + 0.02 * a * rng.gen_range(-1.0..1.0));
    }
    u
}

/// Damped-Newton minimization of the rotating-frame energy; returns scaled
/// positions with gradient max-norm below `GRAD_TOL`.
fn minimize(mut u: Vec<f64>) -> Result<Vec<f64>> {
    let n2 = u.len();
    let (mut energy, mut grad) = potential_energy_gradient(&u);
    let mut lambda = 1e-3;
    for _ in 0..MAX_NEWTON_ITERS {
        let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if gmax < GRAD_TOL {
            return Ok(u);
        }
        let hess = potential_hessian(&u);
        let g = DVector::from_column_slice(&grad);
        // Levenberg damping: retry with larger lambda until the step lowers energy.
        let mut stepped = false;
        for _ in 0..60 {
            let mut damped = hess.clone();
            for i in 0..n2 {
                damped[(i, i)] += lambda;
            }
            if let Some(chol) = damped.cholesky() {
                let step = chol.solve(&g);
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(&ui, &si)| ui - si).collect();
                let (e_trial, g_trial) = potential_energy_gradient(&trial);
                if e_trial.is_finite() && e_trial <= energy {
                    u = trial;
                    energy = e_trial;
                    grad = g_trial;
                    lambda = (lambda / 3.0).max(1e-14);
                    stepped = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !stepped {
            break;
        }
    }
    let (_, grad) = potential_energy_gradient(&u);
    let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    if gmax < GRAD_TOL {
        Ok(u)
    } else {
        Err(Error::NoConvergence { iterations: MAX_NEWTON_ITERS, residual: gmax })
    }
}

/// Rotate the layout so the outermost ion sits at phi = 0 (orientation gauge).
fn pin_orientation(u: &mut [f64]) {
    let n = u.len() / 2;
    let mut best = 0;
    let mut best_r2 = -1.0;
    for j in 0..n {
        let r2 = u[2 * j] * u[2 * j] + u[2 * j + 1] * u[2 * j + 1];
        if r2 > best_r2 {
            best_r2 = r2;
            best = j;
        }
    }
    let ang = u[2 * best + 1].atan2(u[2 * best]);
    let (s, c) = (-ang).sin_cos();
    for j in 0..n {
        let (x, y) = (u[2 * j], u[2 * j + 1]);
        u[2 * j] = c * x - s * y;
        u[2 * j + 1] = s * x + c * y;
    }
}

/// Find an equilibrium planar crystal for the trap. `seed_layout`, when
/// given, is used as the starting guess (positions in meters); otherwise a
/// perturbed hexagonal lattice is used, with restarts on failure.
pub fn equilibrate_crystal(trap: &TrapConfig, seed_layout: Option<&CrystalLayout>) -> Result<CrystalLayout> {
    trap.validate()?;
    let n = trap.n_ions;
    let l0 = trap.length_scale();
    if n == 1 {
        return Ok(CrystalLayout::from_positions(vec![0.0], vec![0.0]));
    }
    let mut last_err = None;
    for attempt in 0..8u64 {
        let u0 = match (seed_layout, attempt) {
            (Some(layout), 0) => {
                let mut u = Vec::with_capacity(2 * n);
                for j in 0..layout.len() {
                    u.push(layout.x[j] / l0);
                    u.push(layout.y[j] / l0);
                }
                u
            }
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15 ^ attempt);
                hexagonal_seed(n, &mut rng)
            }
        };
        match minimize(u0) {
            Ok(mut u) => {
                pin_orientation(&mut u);
                let x = (0..n).map(|j| u[2 * j] * l0).collect();
                let y = (0..n).map(|j| u[2 * j + 1] * l0).collect();
                return Ok(CrystalLayout::from_positions(x, y));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

/// Drumhead normal modes of the layout under the trap's axial confinement.
/// `dkz` is the axial difference wavevector used for the Lamb-Dicke
/// parameters (pass 0.0 if not needed).
pub fn drumhead_modes(layout: &CrystalLayout, trap: &TrapConfig, dkz: f64) -> Result<ModeData> {
    trap.validate()?;
    let n = layout.len();
    let l0 = trap.length_scale();
    let beta = trap.beta();
    let wz2 = trap.omega_z * trap.omega_z;
    let mut stiff = DMatrix::zeros(n, n);
    for j in 0..n {
        stiff[(j, j)] = wz2;
    }
    for j in 0..n {
        for k in (j + 1)..n {
            let dx = (layout.x[j] - layout.x[k]) / l0;
            let dy = (layout.y[j] - layout.y[k]) / l0;
            let d = dx.hypot(dy);
            let w = beta / (d * d * d);
            stiff[(j, j)] -= w;
            stiff[(k, k)] -= w;
            stiff[(j, k)] += w;
            stiff[(k, j)] += w;
        }
    }
    let eig = stiff.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let unstable = eig.eigenvalues.iter().filter(|&&v| v <= 0.0).count();
    if unstable > 0 {
        return Err(Error::UnstableCrystal { unstable_modes: unstable });
    }
    let mut omega = Vec::with_capacity(n);
    let mut matrix = DMatrix::zeros(n, n);
    for (col, &idx) in order.iter().enumerate() {
        omega.push(eig.eigenvalues[idx].sqrt());
        let v = eig.eigenvectors.column(idx);
        // Sign gauge: largest-magnitude component positive.
        let mut imax = 0;
        for i in 0..n {
            if v[i].abs() > v[imax].abs() {
                imax = i;
            }
        }
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            matrix[(i, col)] = sign * v[i];
        }
    }
    let eta = omega
        .iter()
        .map(|&w| dkz * (HBAR / (2.0 * trap.mass * w)).sqrt())
        .collect();
    Ok(ModeData { omega, matrix, eta })
}

/// Write a layout file: header `N R_meters`, then rows `index x/R y/R`.
pub fn save_layout<P: AsRef<Path>>(layout: &CrystalLayout, path: P) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{} {}", layout.len(), layout.radius)?;
    let scale = if layout.radius > 0.0 { layout.radius } else { 1.0 };
    for j in 0..layout.len() {
        writeln!(f, "{} {} {}", j, layout.x[j] / scale, layout.y[j] / scale)?;
    }
    Ok(())
}

/// Read a layout file written by [`save_layout`].
pub fn load_layout<P: AsRef<Path>>(path: P) -> Result<CrystalLayout> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let header = header?;
    let mut it = header.split_whitespace();
    let n: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse { line: 1, message: "expected ion count".into() })?;
    let radius: f64 = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse { line: 1, message: "expected crystal radius".into() })?;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut seen = vec![false; n];
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse_err = |msg: &str| Error::Parse { line: lineno + 1, message: msg.into() };
        let idx: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err("expected ion index"))?;
        if idx >= n {
            return Err(parse_err(&format!("ion index {} out of range", idx)));
        }
        let xv: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err("expected x/R"))?;
        let yv: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err("expected y/R"))?;
        let rn = xv.hypot(yv);
        if rn > 1.0 + 1e-9 {
            return Err(Error::Validation(format!(
                "ion {} at r/R = {} exceeds the stated crystal radius (line {})",
                idx,
                rn,
                lineno + 1
            )));
        }
        x[idx] = xv * radius;
        y[idx] = yv * radius;
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Parse { line: n + 1, message: format!("missing row for ion {}", missing) });
    }
    let layout = CrystalLayout::from_positions(x, y);
    layout.validate()?;
    Ok(layout)
}

/// Write a mode file: `N`, then N frequency lines (rad/s), then the N x N
/// mode matrix row by row.
pub fn save_modes<P: AsRef<Path>>(modes: &ModeData, path: P) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = modes.omega.len();
    writeln!(f, "{}", n)?;
    for w in &modes.omega {
        writeln!(f, "{}", w)?;
    }
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| modes.matrix[(i, j)].to_string()).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Read a mode file written by [`save_modes`]. `dkz` recomputes the
/// Lamb-Dicke parameters for the given mass.
pub fn load_modes<P: AsRef<Path>>(path: P, mass: f64, dkz: f64) -> Result<ModeData> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines().enumerate();
    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::Parse { line: i + 1, message: e.to_string() }),
            None => Err(Error::Parse { line: 0, message: format!("unexpected end of file, expected {}", expect) }),
        }
    };
    let (line, header) = next_line("mode count")?;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, message: "expected mode count".into() })?;
    let mut omega: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, l) = next_line("mode frequency")?;
        omega.push(
            l.trim()
                .parse()
                .map_err(|_| Error::Parse { line, message: "expected mode frequency".into() })?,
        );
    }
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        let (line, l) = next_line("matrix row")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { line, message: "expected matrix entries".into() })?;
        if vals.len() != n {
            return Err(Error::Parse { line, message: format!("expected {} entries, got {}", n, vals.len()) });
        }
        for j in 0..n {
            matrix[(i, j)] = vals[j];
        }
    }
    let eta: Vec<f64> = omega.iter().map(|&w| dkz * (HBAR / (2.0 * mass * w)).sqrt()).collect();
    Ok(ModeData { omega, matrix, eta })
}

/// NIST-style trap presets from the reference operating points.
pub fn trap_preset(case: &str, n_ions: usize) -> Result<TrapConfig> {
    let tau = crate::constants::TWO_PI;
    match case.to_ascii_uppercase().as_str() {
        "A" => Ok(TrapConfig {
            omega_r: tau * 180e3,
            omega_z: tau * 1.59e6,
            omega_c: tau * 7.6e6,
            mass: crate::constants::BERYLLIUM_ION_MASS,
            n_ions,
            label: "A".into(),
        }),
        "B" => Ok(TrapConfig {
            omega_r: tau * 900e3,
            omega_z: tau * 3.42e6,
            omega_c: tau * 7.6e6,
            mass: crate::constants::BERYLLIUM_ION_MASS,
            n_ions,
            label: "B".into(),
        }),
        other => Err(Error::InvalidArgument(format!("unknown trap case '{}'", other))),
    }
}
