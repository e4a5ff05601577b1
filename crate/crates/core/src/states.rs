//! Initial spin textures in the rotated spin frame.
//!
//! All Bloch vectors live in the rotated frame where the pairing model is
//! chiral: components are written (s_X, s_Y, s_Z). Textures are prepared by
//! rotating polarized states about site-local axes with a radially shaped
//! Rabi profile `Omega_j = Omega_0 r_j exp(-r_j^2 / w_ODF^2)`.

use crate::crystal::CrystalLayout;
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Classical spin-1/2 configuration (one Bloch vector per ion), plus the
/// oscillator amplitude used by the two-channel model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfiguration {
    /// Per-site (s_X, s_Y, s_Z).
    pub s: Vec<[f64; 3]>,
    /// Center-of-mass mode amplitude; `None` for one-channel states.
    pub alpha: Option<Complex64>,
}

impl SpinConfiguration {
    /// All spins polarized along +Z (s_Z = +1/2).
    pub fn polarized_up(n: usize) -> Self {
        SpinConfiguration { s: vec![[0.0, 0.0, 0.5]; n], alpha: None }
    }

    /// All spins polarized along -Z.
    pub fn polarized_down(n: usize) -> Self {
        SpinConfiguration { s: vec![[0.0, 0.0, -0.5]; n], alpha: None }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// s^+ = s_X + i s_Y at site j.
    pub fn s_plus(&self, j: usize) -> Complex64 {
        Complex64::new(self.s[j][0], self.s[j][1])
    }

    pub fn norms_ok(&self, expected: f64, tol: f64) -> bool {
        self.s.iter().all(|s| {
            let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            (n - expected).abs() < tol
        })
    }
}

/// Texture-preparation protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolKind {
    Bcs,
    Bec,
    DomainWall,
    RawRotation,
}

/// Start polarity before the shaped pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitProtocol {
    pub kind: ProtocolKind,
    /// ODF waist in units of R; `None` means the infinite-waist limit
    /// (Gaussian factor identically 1).
    pub w_odf_over_r: Option<f64>,
    /// Pulse area Omega_0 T (the absolute Rabi scale never enters).
    pub omega0_t: f64,
    /// Domain radius in units of R (domain-wall protocol only).
    pub r_d: Option<f64>,
    pub start: Polarity,
}

/// Site-local transverse axes for the initialization drive.
/// `e_X' = sin(phi) e_X - cos(phi) e_Y`, `e_Y' = cos(phi) e_X + sin(phi) e_Y`,
/// so that `e_X' x e_Y' = e_Z`.
pub fn local_axes(phi: f64) -> ([f64; 3], [f64; 3]) {
    let (s, c) = phi.sin_cos();
    ([s, -c, 0.0], [c, s, 0.0])
}

/// Pulse profile Omega_j T as a function of normalized radius.
fn pulse_area(proto: &InitProtocol, r_norm: f64) -> f64 {
    let gauss = match proto.w_odf_over_r {
        Some(w) => (-r_norm * r_norm / (w * w)).exp(),
        None => 1.0,
    };
    proto.omega0_t * r_norm * gauss
}

fn rotate_about(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kv = [
        axis[1] * v[2] - axis[2] * v[1],
        axis[2] * v[0] - axis[0] * v[2],
        axis[0] * v[1] - axis[1] * v[0],
    ];
    let kdotv = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = v[i] * c + kv[i] * s + axis[i] * kdotv * (1.0 - c);
    }
    out
}

/// Rotate every spin by its local pulse area about its local e_Y' axis.
pub fn apply_init_rotation(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    proto: &InitProtocol,
) -> SpinConfiguration {
    assert_eq!(state.len(), layout.len());
    let mut out = state.clone();
    for j in 0..state.len() {
        let (_, ey) = local_axes(layout.phi[j]);
        let theta = pulse_area(proto, layout.r_norm[j]);
        out.s[j] = rotate_about(state.s[j], ey, theta);
    }
    out
}

/// BCS-like texture: start up, infinite waist, pulse area pi at the rim.
/// The central spin stays up, the outermost flips down, winding Q = 1.
pub fn make_bcs_state(layout: &CrystalLayout) -> SpinConfiguration {
    let proto = InitProtocol {
        kind: ProtocolKind::Bcs,
        w_odf_over_r: None,
        omega0_t: std::f64::consts::PI,
        r_d: None,
        start: Polarity::Up,
    };
    apply_init_rotation(&SpinConfiguration::polarized_up(layout.len()), layout, &proto)
}

/// Waist (units of R) of the BEC protocol.
pub const BEC_WAIST: f64 = 0.3;

/// Omega_0 T that makes the peak pulse area equal `peak` for waist `w`
/// (the profile maximum sits at r = w / sqrt(2)).
pub fn omega0_t_for_peak(peak: f64, w_over_r: f64) -> f64 {
    peak * (2.0 * std::f64::consts::E).sqrt() / w_over_r
}

/// BEC-like texture: start down, waist 0.3 R, peak pulse area pi.
/// Trivial winding, Q = 0.
pub fn make_bec_state(layout: &CrystalLayout) -> SpinConfiguration {
    let proto = InitProtocol {
        kind: ProtocolKind::Bec,
        w_odf_over_r: Some(BEC_WAIST),
        omega0_t: omega0_t_for_peak(std::f64::consts::PI, BEC_WAIST),
        r_d: None,
        start: Polarity::Down,
    };
    apply_init_rotation(&SpinConfiguration::polarized_down(layout.len()), layout, &proto)
}

/// Domain-wall texture: up inside r_d = R/2, down outside, then a weak
/// shaped pulse (waist R/2, peak area 0.1 pi) to seed a small |Psi(0)|.
pub fn make_domain_wall_state(layout: &CrystalLayout) -> SpinConfiguration {
    let r_d = 0.5;
    let w = 0.5;
    let mut state = SpinConfiguration::polarized_up(layout.len());
    for j in 0..layout.len() {
        if layout.r_norm[j] >= r_d {
            state.s[j] = [0.0, 0.0, -0.5];
        }
    }
    let proto = InitProtocol {
        kind: ProtocolKind::DomainWall,
        w_odf_over_r: Some(w),
        omega0_t: omega0_t_for_peak(0.1 * std::f64::consts::PI, w),
        r_d: Some(r_d),
        start: Polarity::Up,
    };
    apply_init_rotation(&state, layout, &proto)
}

/// Write a texture snapshot: rows `index x/R y/R s_X s_Y s_Z`.
pub fn save_texture<P: AsRef<Path>>(
    state: &SpinConfiguration,
    layout: &CrystalLayout,
    path: P,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let scale = if layout.radius > 0.0 { layout.radius } else { 1.0 };
    for j in 0..state.len() {
        writeln!(
            f,
            "{} {} {} {} {} {}",
            j,
            layout.x[j] / scale,
            layout.y[j] / scale,
            state.s[j][0],
            state.s[j][1],
            state.s[j][2]
        )?;
    }
    Ok(())
}

/// Read a texture snapshot written by [`save_texture`]; positions are
/// discarded (the layout travels separately).
pub fn load_texture<P: AsRef<Path>>(path: P, n: usize) -> Result<SpinConfiguration> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut s = vec![[0.0; 3]; n];
    let mut seen = vec![false; n];
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |msg: &str| Error::Parse { line: lineno + 1, message: msg.into() };
        if toks.len() != 6 {
            return Err(parse_err(&format!("expected 6 columns, got {}", toks.len())));
        }
        let idx: usize = toks[0].parse().map_err(|_| parse_err("expected ion index"))?;
        if idx >= n {
            return Err(parse_err(&format!("ion index {} out of range", idx)));
        }
        for c in 0..3 {
            s[idx][c] = toks[3 + c]
                .parse()
                .map_err(|_| parse_err("expected spin component"))?;
        }
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|&x| !x) {
        return Err(Error::Parse { line: 0, message: format!("missing row for ion {}", missing) });
    }
    Ok(SpinConfiguration { s, alpha: None })
}
