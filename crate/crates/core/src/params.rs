//! Experimental-parameter calculator and rotating-wave bookkeeping.
//!
//! Translates trap and laser-beam geometry into the model frequencies
//! (eta_1, eta_x, G, J, B_1, K), evaluates the resonance-condition table
//! used to justify the rotating-wave approximations, and assembles the
//! off-resonant coupling matrices J_5, J_11, J_12 together with the local
//! AC Stark shifts from H_4 and H_6. All frequencies are angular (rad/s).

use crate::constants::{HBAR, SPEED_OF_LIGHT, TWO_PI};
use crate::crystal::{CrystalLayout, ModeData, TrapConfig};
use crate::dynamics::OffResonantCouplings;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Default ODF scattering rate, 2 pi x 38 Hz.
pub const GAMMA_ODF_DEFAULT: f64 = TWO_PI * 38.0;
/// Default Raman scattering rate, 2 pi x 15 Hz.
pub const GAMMA_RAMAN_DEFAULT: f64 = TWO_PI * 15.0;
/// Guard band for accidental resonances in off-resonant denominators.
pub const RESONANCE_GUARD: f64 = TWO_PI * 100.0;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BeamConfig {
    /// ODF Stark-shift strength delta_AC (rad/s).
    pub delta_ac: f64,
    /// Laser wavenumber k (1/m).
    pub k: f64,
    /// ODF beam tilt from the crystal plane (rad).
    pub theta: f64,
    /// In-plane misalignment delta-theta (rad).
    pub delta_theta: f64,
    /// ODF beatnote mu_r (rad/s).
    pub mu_r: f64,
    /// Raman Rabi frequency B_0 (rad/s).
    pub b0: f64,
    /// Raman beam waist w (m).
    pub w: f64,
    /// ODF beam waist (m); infinity means a flat profile.
    pub w_odf: f64,
    /// Spin splitting omega_s (rad/s).
    pub omega_s: f64,
    /// Raman beam tilt theta_R (rad).
    pub theta_r: f64,
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_ac", self.delta_ac),
            ("k", self.k),
            ("theta", self.theta),
            ("mu_r", self.mu_r),
            ("b0", self.b0),
            ("w", self.w),
            ("w_odf", self.w_odf),
            ("omega_s", self.omega_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Validation(format!("{} must be > 0, got {}", name, v)));
            }
        }
        if !(self.delta_theta >= 0.0) || !(self.theta_r >= 0.0) {
            return Err(Error::Validation("delta_theta and theta_r must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ScatteringBudget {
    pub gamma_odf: f64,
    pub gamma_raman: f64,
    pub gamma_tot: f64,
    /// J / Gamma_tot; infinite when the rates vanish.
    pub jt_budget: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DerivedModel {
    /// c.m. Lamb-Dicke parameter eta_1 = 2 k sin(theta) l_zp.
    pub eta_1: f64,
    /// Chiral phase parameter eta_x = k delta_theta sin(theta) R.
    pub eta_x: f64,
    /// Spin-boson coupling G = delta_AC eta_1 eta_x / 4 (rad/s).
    pub g: f64,
    /// c.m. detuning delta_1 = B_0 - mu_r + omega_1 + omega_r (rad/s).
    pub delta_1: f64,
    /// Pairing strength J = G^2 / delta_1 (rad/s).
    pub j: f64,
    /// Transverse-field curvature B_1 = B_0 R^2 / w^2 (rad/s).
    pub b1: f64,
    /// Dispersion coefficient K = B_1 - J/N (rad/s).
    pub k_disp: f64,
    /// Rotational Lamb-Dicke parameter at the crystal edge.
    pub eta_r: f64,
    /// Doppler-shift route to B_1 (rad/s).
    pub b1_doppler: f64,
    pub budget: ScatteringBudget,
}

/// Zero-point length sqrt(hbar / (2 m omega)).
pub fn zero_point_length(mass: f64, omega: f64) -> f64 {
    (HBAR / (2.0 * mass * omega)).sqrt()
}

/// G = delta_AC eta_1 eta_x / 4.
pub fn coupling_g(delta_ac: f64, eta_1: f64, eta_x: f64) -> f64 {
    delta_ac * eta_1 * eta_x / 4.0
}

/// eta_1 = 2 k sin(theta) l_zp.
pub fn eta1_for_theta(theta: f64, k: f64, l_zp: f64) -> f64 {
    2.0 * k * theta.sin() * l_zp
}

/// Inverse of [`eta1_for_theta`]; fails when the requested eta_1 exceeds
/// the geometric bound 2 k l_zp at theta = pi/2.
pub fn theta_for_eta1(eta_1: f64, k: f64, l_zp: f64) -> Result<f64> {
    let x = eta_1 / (2.0 * k * l_zp);
    if x > 1.0 {
        return Err(Error::InfeasibleGeometry(format!(
            "eta_1 = {:.4} exceeds the maximum 2 k l_zp = {:.4}",
            eta_1,
            2.0 * k * l_zp
        )));
    }
    Ok(x.asin())
}

/// eta_x = k delta_theta sin(theta) R.
pub fn eta_x_for_delta_theta(delta_theta: f64, k: f64, theta: f64, r: f64) -> f64 {
    k * delta_theta * theta.sin() * r
}

pub fn delta_theta_for_eta_x(eta_x: f64, k: f64, theta: f64, r: f64) -> f64 {
    eta_x / (k * theta.sin() * r)
}

/// B_1 = B_0 R^2 / w^2.
pub fn b1_for_waist(b0: f64, r: f64, w: f64) -> f64 {
    b0 * r * r / (w * w)
}

/// Raman waist delivering a target B_1: w = R sqrt(B_0 / B_1).
pub fn waist_for_b1(b0: f64, r: f64, b1: f64) -> f64 {
    r * (b0 / b1).sqrt()
}

/// Doppler-shift route to the dispersion: maximum rotational Lamb-Dicke
/// parameter eta_R = (omega_s / c) cos(theta_R) R and the induced
/// curvature B_1 = B_0 eta_R^2 / 4. Validity needs eta_R^2 << 1.
pub fn doppler_b1(beams: &BeamConfig, r: f64) -> (f64, f64) {
    let eta_r = beams.omega_s / SPEED_OF_LIGHT * beams.theta_r.cos() * r;
    (eta_r, beams.b0 * eta_r * eta_r / 4.0)
}

/// Gamma_tot = Gamma_ODF + Gamma_Raman and the usable window Jt = J / Gamma_tot.
pub fn scattering_budget(gamma_odf: f64, gamma_raman: f64, j: f64) -> Result<ScatteringBudget> {
    if gamma_odf < 0.0 || gamma_raman < 0.0 {
        return Err(Error::Validation("scattering rates must be >= 0".into()));
    }
    let gamma_tot = gamma_odf + gamma_raman;
    let jt_budget = if gamma_tot == 0.0 { f64::INFINITY } else { j / gamma_tot };
    Ok(ScatteringBudget { gamma_odf, gamma_raman, gamma_tot, jt_budget })
}

/// Derive the model frequencies from trap, beams, crystal and mode data.
/// The c.m. mode is modes.omega[0]; the detuning follows the tuning rule
/// B_0 - mu_r + omega_1 + omega_r = delta_1.
pub fn derive_model(
    trap: &TrapConfig,
    beams: &BeamConfig,
    layout: &CrystalLayout,
    modes: &ModeData,
) -> Result<DerivedModel> {
    beams.validate()?;
    if modes.omega.is_empty() {
        return Err(Error::InvalidArgument("mode data is empty".into()));
    }
    let omega_1 = modes.omega[0];
    let l_zp = zero_point_length(trap.mass, omega_1);
    let eta_1 = eta1_for_theta(beams.theta, beams.k, l_zp);
    let r = layout.radius;
    let eta_x = eta_x_for_delta_theta(beams.delta_theta, beams.k, beams.theta, r);
    let g = coupling_g(beams.delta_ac, eta_1, eta_x);
    let delta_1 = beams.b0 - beams.mu_r + omega_1 + trap.omega_r;
    if delta_1 == 0.0 {
        return Err(Error::InvalidArgument(
            "delta_1 = 0 (resonant c.m.); J is undefined, use the two-channel model".into(),
        ));
    }
    let j = g * g / delta_1;
    let b1 = b1_for_waist(beams.b0, r, beams.w);
    let k_disp = b1 - j / layout.len() as f64;
    let (eta_r, b1_doppler) = doppler_b1(beams, r);
    let budget = scattering_budget(GAMMA_ODF_DEFAULT, GAMMA_RAMAN_DEFAULT, j)?;
    Ok(DerivedModel { eta_1, eta_x, g, delta_1, j, b1, k_disp, eta_r, b1_doppler, budget })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RwaRow {
    pub label: String,
    /// Minimum over the drumhead spectrum (rad/s).
    pub min: f64,
    /// Maximum over the drumhead spectrum (rad/s).
    pub max: f64,
}

impl RwaRow {
    pub fn min_khz(&self) -> f64 {
        self.min / TWO_PI / 1e3
    }

    pub fn max_khz(&self) -> f64 {
        self.max / TWO_PI / 1e3
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RwaTable {
    pub case_label: String,
    pub rows: Vec<RwaRow>,
}

impl RwaTable {
    pub fn row(&self, label: &str) -> Option<&RwaRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Evaluate the resonance conditions T11..T64 as (min, max) over the
/// drumhead spectrum. The c.m. mode is excluded from T11 only, since that
/// row at the c.m. frequency is the engineered coupling itself.
pub fn rwa_table(trap: &TrapConfig, beams: &BeamConfig, modes: &ModeData) -> Result<RwaTable> {
    if modes.omega.len() < 2 {
        return Err(Error::InvalidArgument("need at least two drumhead modes".into()));
    }
    let b0 = beams.b0;
    let mu = beams.mu_r;
    let wr = trap.omega_r;
    let all = &modes.omega;
    let no_cm = &modes.omega[1..];
    let mut rows = Vec::new();
    let mut push = |label: String, values: Vec<f64>| {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rows.push(RwaRow { label, min, max });
    };
    // T1x: B_0 +- mu_r +- omega_n +- omega_r (AB sin C terms).
    let eight: [(f64, f64, f64); 8] = [
        (-1.0, 1.0, 1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, -1.0, 1.0),
        (-1.0, -1.0, -1.0),
        (1.0, 1.0, 1.0),
        (1.0, 1.0, -1.0),
        (1.0, -1.0, 1.0),
        (1.0, -1.0, -1.0),
    ];
    for (i, &(sm, sn, sr)) in eight.iter().enumerate() {
        let spectrum: &[f64] = if i == 0 { no_cm } else { all };
        push(
            format!("T1{}", i + 1),
            spectrum.iter().map(|&wn| b0 + sm * mu + sn * wn + sr * wr).collect(),
        );
    }
    // T2x: B_0 +- mu_r +- omega_n +- omega_k (B^2 sin C terms), pairs of modes.
    for (i, &(sm, sn, sk)) in eight.iter().enumerate() {
        let mut vals = Vec::with_capacity(all.len() * all.len());
        for &wn in all {
            for &wk in all {
                vals.push(b0 + sm * mu + sn * wn + sk * wk);
            }
        }
        push(format!("T2{}", i + 1), vals);
    }
    // T3x: B_0 +- mu_r +- omega_r +- omega_r (A^2 sin C terms), mode independent.
    for (i, &(sm, s1, s2)) in eight.iter().enumerate() {
        push(format!("T3{}", i + 1), vec![b0 + sm * mu + (s1 + s2) * wr]);
    }
    // T4x: B_0 +- mu_r (sin C terms).
    push("T41".into(), vec![b0 + mu]);
    push("T42".into(), vec![b0 - mu]);
    // T5x: B_0 +- mu_r +- omega_n (B cos C terms).
    let four: [(f64, f64); 4] = [(-1.0, 1.0), (-1.0, -1.0), (1.0, 1.0), (1.0, -1.0)];
    for (i, &(sm, sn)) in four.iter().enumerate() {
        push(
            format!("T5{}", i + 1),
            all.iter().map(|&wn| b0 + sm * mu + sn * wn).collect(),
        );
    }
    // T6x: B_0 +- mu_r +- omega_r (A cos C terms), mode independent.
    for (i, &(sm, sr)) in four.iter().enumerate() {
        push(format!("T6{}", i + 1), vec![b0 + sm * mu + sr * wr]);
    }
    Ok(RwaTable { case_label: trap.label.clone(), rows })
}

fn guard(den: f64, row: &str, mode: usize) -> Result<f64> {
    if den.abs() < RESONANCE_GUARD {
        return Err(Error::AccidentalResonance(format!(
            "{} denominator for mode {} is {:.1} Hz, inside the {:.0} Hz guard band",
            row,
            mode,
            den / TWO_PI,
            RESONANCE_GUARD / TWO_PI
        )));
    }
    Ok(den)
}

/// Assemble the off-resonant exchange matrices J_5 (achiral), J_11
/// (anti-chiral), J_12 (chiral, all modes) and the local Z shifts from the
/// H_4 and H_6 AC Stark terms, restricted to the listed mode indices.
pub fn offresonant_couplings_for_modes(
    layout: &CrystalLayout,
    modes: &ModeData,
    trap: &TrapConfig,
    beams: &BeamConfig,
    derived: &DerivedModel,
    mode_indices: &[usize],
) -> Result<OffResonantCouplings> {
    let n = layout.len();
    if modes.matrix.nrows() != n {
        return Err(Error::InvalidArgument("mode matrix does not match layout size".into()));
    }
    let dac2 = beams.delta_ac * beams.delta_ac;
    let ex2 = derived.eta_x * derived.eta_x;
    let b0 = beams.b0;
    let mu = beams.mu_r;
    let wr = trap.omega_r;
    let mut j5 = DMatrix::zeros(n, n);
    let mut j11 = DMatrix::zeros(n, n);
    let mut j12 = DMatrix::zeros(n, n);
    for &mode in mode_indices {
        let wn = modes.omega[mode];
        let en2 = modes.eta[mode] * modes.eta[mode];
        let delta_n = b0 - mu + wn + wr;
        let d_mu = guard(mu - wn, "J5 (mu_r - omega_n)", mode)?;
        let d_n = guard(delta_n, "J11/J12 (delta_n)", mode)?;
        let d_b = guard(delta_n - 2.0 * b0, "J11 (delta_n - 2 B_0)", mode)?;
        let d_r = guard(delta_n - 2.0 * wr, "J11/J12 (delta_n - 2 omega_r)", mode)?;
        for jj in 0..n {
            let mj = modes.matrix[(jj, mode)];
            for kk in 0..n {
                let mk = modes.matrix[(kk, mode)];
                if jj == kk {
                    j5[(jj, jj)] +=
                        Complex64::from(dac2 * b0 * en2 * mj * mj / (2.0 * d_mu * d_mu));
                    let pre = dac2 * ex2 * layout.r_norm[jj].powi(2) * en2 * mj * mj / 16.0;
                    j11[(jj, jj)] += Complex64::from(pre / d_b);
                    j12[(jj, jj)] += Complex64::from(-pre / d_n);
                } else {
                    j5[(jj, kk)] += Complex64::from(dac2 * en2 * mj * mk / (2.0 * d_mu));
                    let pre = dac2 * ex2 * layout.r_norm[jj] * layout.r_norm[kk] * en2 * mj * mk
                        / 16.0;
                    let dphi = layout.phi[jj] - layout.phi[kk];
                    j11[(jj, kk)] +=
                        -pre * (1.0 / d_b + 1.0 / d_r) * Complex64::from_polar(1.0, dphi);
                    j12[(jj, kk)] +=
                        -pre * (1.0 / d_r + 1.0 / d_n) * Complex64::from_polar(1.0, -dphi);
                }
            }
        }
    }
    // H4: uniform AC Stark shift; H6: radius-dependent shift.
    let h6_pre = dac2 * b0 * ex2 / 4.0
        * (1.0 / ((mu + wr) * (mu + wr)) + 1.0 / ((mu - wr) * (mu - wr)));
    let z_shift = (0..n)
        .map(|jj| dac2 * b0 / (mu * mu) + h6_pre * layout.r_norm[jj].powi(2))
        .collect();
    let couplings = OffResonantCouplings { j5, j11, j12, z_shift };
    couplings.validate(n)?;
    Ok(couplings)
}

/// All drumhead modes, including the c.m. mode.
pub fn offresonant_couplings(
    layout: &CrystalLayout,
    modes: &ModeData,
    trap: &TrapConfig,
    beams: &BeamConfig,
    derived: &DerivedModel,
) -> Result<OffResonantCouplings> {
    let all: Vec<usize> = (0..modes.omega.len()).collect();
    offresonant_couplings_for_modes(layout, modes, trap, beams, derived, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{drumhead_modes, equilibrate_crystal, trap_preset};
    use approx::assert_abs_diff_eq;
    use approx::assert_relative_eq;

    fn beams_case(trap: &TrapConfig, omega_1: f64) -> BeamConfig {
        // 313 nm Raman transition; tuning rule fixes mu_r for
        // delta_1 = 2 pi x 2 kHz.
        let b0 = TWO_PI * 10e3;
        let delta_1 = TWO_PI * 2e3;
        BeamConfig {
            delta_ac: TWO_PI * 40e3,
            k: TWO_PI / 313e-9,
            theta: 0.4,
            delta_theta: 3e-4,
            mu_r: b0 + omega_1 + trap.omega_r - delta_1,
            b0,
            w: 497e-6,
            w_odf: 1e-3,
            omega_s: TWO_PI * 124e9,
            theta_r: 0.0,
        }
    }

    #[test]
    fn g_and_j_reference_values() {
        let g = coupling_g(TWO_PI * 40e3, 0.3, 0.3);
        assert_relative_eq!(g, TWO_PI * 900.0, max_relative = 1e-12);
        let j = g * g / (TWO_PI * 2e3);
        assert_relative_eq!(j, TWO_PI * 405.0, max_relative = 1e-12);
    }

    #[test]
    fn tilt_angles_for_both_cases() {
        let trap_a = trap_preset("A", 200).unwrap();
        let k = TWO_PI / 313e-9;
        let lzp_a = zero_point_length(trap_a.mass, trap_a.omega_z);
        let theta_a = theta_for_eta1(0.3, k, lzp_a).unwrap();
        assert_abs_diff_eq!(theta_a.to_degrees(), 23.4, epsilon = 0.5);
        let trap_b = trap_preset("B", 200).unwrap();
        let lzp_b = zero_point_length(trap_b.mass, trap_b.omega_z);
        let theta_b = theta_for_eta1(0.3, k, lzp_b).unwrap();
        assert_abs_diff_eq!(theta_b.to_degrees(), 35.7, epsilon = 0.5);
        // Round trips.
        assert_relative_eq!(eta1_for_theta(theta_a, k, lzp_a), 0.3, max_relative = 1e-12);
        let dth = delta_theta_for_eta_x(0.3, k, theta_a, 100e-6);
        assert_relative_eq!(
            eta_x_for_delta_theta(dth, k, theta_a, 100e-6),
            0.3,
            max_relative = 1e-12
        );
        let w = waist_for_b1(TWO_PI * 10e3, 100e-6, TWO_PI * 405.0);
        assert_relative_eq!(
            b1_for_waist(TWO_PI * 10e3, 100e-6, w),
            TWO_PI * 405.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn waist_for_reference_b1() {
        let w = waist_for_b1(TWO_PI * 10e3, 100e-6, TWO_PI * 405.0);
        assert_abs_diff_eq!(w * 1e6, 497.0, epsilon = 1.0);
    }

    #[test]
    fn infeasible_tilt_rejected() {
        let err = theta_for_eta1(5.0, TWO_PI / 313e-9, 1e-8).unwrap_err();
        assert!(matches!(err, Error::InfeasibleGeometry(_)));
    }

    #[test]
    fn doppler_route() {
        let trap = trap_preset("A", 200).unwrap();
        let beams = beams_case(&trap, trap.omega_z);
        let (eta_r, b1) = doppler_b1(&beams, 100e-6);
        assert_abs_diff_eq!(eta_r, 0.26, epsilon = 0.01);
        assert_abs_diff_eq!(b1 / TWO_PI, 170.0, epsilon = 5.0);
        // Perpendicular Raman beam removes the Doppler modulation.
        let mut side = beams.clone();
        side.theta_r = std::f64::consts::FRAC_PI_2;
        let (eta_r, b1) = doppler_b1(&side, 100e-6);
        assert_abs_diff_eq!(eta_r, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b1, 0.0, epsilon = 1e-12);
    }

    fn synthetic_modes(omegas_khz: &[f64]) -> ModeData {
        let n = omegas_khz.len();
        ModeData {
            omega: omegas_khz.iter().map(|&v| TWO_PI * v * 1e3).collect(),
            matrix: DMatrix::identity(n, n),
            eta: vec![0.1; n],
        }
    }

    #[test]
    fn rwa_mode_independent_rows_match_closed_forms() {
        // Case A numbers: B_0 = 10 kHz, delta_1 = 2 kHz, omega_1 = 1590 kHz,
        // omega_r = 180 kHz, giving mu_r = 1778 kHz.
        let trap = trap_preset("A", 200).unwrap();
        let modes = synthetic_modes(&[1590.0, 1400.0, 1064.0]);
        let beams = beams_case(&trap, modes.omega[0]);
        assert_abs_diff_eq!(beams.mu_r / TWO_PI / 1e3, 1778.0, epsilon = 1e-9);
        let table = rwa_table(&trap, &beams, &modes).unwrap();
        for (label, khz) in [
            ("T31", -1408.0),
            ("T34", -2128.0),
            ("T35", 2148.0),
            ("T38", 1428.0),
            ("T41", 1788.0),
            ("T42", -1768.0),
            ("T61", -1588.0),
            ("T62", -1948.0),
            ("T63", 1968.0),
            ("T64", 1608.0),
        ] {
            let row = table.row(label).unwrap();
            assert_abs_diff_eq!(row.min_khz(), khz, epsilon = 1e-6);
            assert_abs_diff_eq!(row.max_khz(), khz, epsilon = 1e-6);
        }
        for row in &table.rows {
            assert!(row.min <= row.max, "{}", row.label);
        }
    }

    #[test]
    fn rwa_t11_excludes_cm() {
        let trap = trap_preset("A", 200).unwrap();
        let modes = synthetic_modes(&[1590.0, 1569.0, 1064.0]);
        let beams = beams_case(&trap, modes.omega[0]);
        let table = rwa_table(&trap, &beams, &modes).unwrap();
        // T11 = omega_n - 1588 kHz over non-c.m. modes only.
        let t11 = table.row("T11").unwrap();
        assert_abs_diff_eq!(t11.max_khz(), 1569.0 - 1588.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t11.min_khz(), 1064.0 - 1588.0, epsilon = 1e-6);
        // T13 includes the c.m. mode: min at omega_n = 1590.
        let t13 = table.row("T13").unwrap();
        assert_abs_diff_eq!(t13.min_khz(), -1588.0 - 1590.0, epsilon = 1e-6);
        // T21 ranges over mode pairs including the c.m. mode twice.
        let t21 = table.row("T21").unwrap();
        assert_abs_diff_eq!(t21.max_khz(), 2.0 * 1590.0 - 1768.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t21.min_khz(), 2.0 * 1064.0 - 1768.0, epsilon = 1e-6);
    }

    /// Two-site, single-mode toy system with a c.m.-like mode: the chiral
    /// J_12 matrix reduces to the one-channel coupling.
    #[test]
    fn j12_single_mode_limit() {
        let layout = CrystalLayout::from_positions(vec![60e-6, -100e-6], vec![0.0, 30e-6]);
        let trap = trap_preset("A", 2).unwrap();
        let modes = ModeData {
            omega: vec![trap.omega_z],
            matrix: DMatrix::from_column_slice(2, 1, &[1.0 / 2f64.sqrt(); 2]),
            eta: vec![0.3],
        };
        let beams = beams_case(&trap, trap.omega_z);
        let derived = derive_model(&trap, &beams, &layout, &modes).unwrap();
        let c = offresonant_couplings(&layout, &modes, &trap, &beams, &derived).unwrap();
        let n = 2.0;
        let g2 = (beams.delta_ac * derived.eta_x * modes.eta[0] / 4.0).powi(2);
        let d1 = derived.delta_1;
        let dr = d1 - 2.0 * trap.omega_r;
        for (jj, kk) in [(0usize, 1usize), (1, 0)] {
            let dphi = layout.phi[jj] - layout.phi[kk];
            // Hand-evaluated element, both denominators.
            let expect = -g2 / n
                * layout.r_norm[jj]
                * layout.r_norm[kk]
                * (1.0 / d1 + 1.0 / dr)
                * Complex64::from_polar(1.0, -dphi);
            assert_relative_eq!(c.j12[(jj, kk)].re, expect.re, max_relative = 1e-10);
            assert_relative_eq!(c.j12[(jj, kk)].im, expect.im, max_relative = 1e-10);
            // Far-rotation limit: the 1/delta_1 term alone is the
            // one-channel coupling -(J/N) r~ r~' exp(-i dphi).
            let one_channel = -derived.j / n
                * layout.r_norm[jj]
                * layout.r_norm[kk]
                * Complex64::from_polar(1.0, -dphi)
                * (derived.eta_x * modes.eta[0] / (derived.eta_x * derived.eta_1)).powi(2);
            let correction = (d1 / dr).abs();
            assert!(
                (c.j12[(jj, kk)] - one_channel).norm()
                    <= 1.01 * correction * one_channel.norm()
            );
        }
        // Diagonal elements match the hand formula too (M_j1^2 = 1/2).
        for jj in 0..2 {
            let direct = -(beams.delta_ac.powi(2)
                * derived.eta_x.powi(2)
                * layout.r_norm[jj].powi(2)
                * modes.eta[0].powi(2)
                * 0.5)
                / (16.0 * d1);
            assert_relative_eq!(c.j12[(jj, jj)].re, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn full_case_a_couplings_are_hermitian() {
        let trap = trap_preset("A", 20).unwrap();
        let layout = equilibrate_crystal(&trap, None).unwrap();
        let beams = beams_case(&trap, trap.omega_z);
        let dkz = 2.0 * beams.k * beams.theta.sin();
        let modes = drumhead_modes(&layout, &trap, dkz).unwrap();
        let beams = beams_case(&trap, modes.omega[0]);
        let derived = derive_model(&trap, &beams, &layout, &modes).unwrap();
        let c = offresonant_couplings(&layout, &modes, &trap, &beams, &derived).unwrap();
        // validate() checks Hermiticity internally; do an explicit spot check.
        for (jj, kk) in [(0usize, 5usize), (3, 17), (8, 9)] {
            let scale = c.j11[(jj, kk)].norm().max(1e-30);
            assert!((c.j11[(jj, kk)] - c.j11[(kk, jj)].conj()).norm() < 1e-12 * scale);
            let scale = c.j12[(jj, kk)].norm().max(1e-30);
            assert!((c.j12[(jj, kk)] - c.j12[(kk, jj)].conj()).norm() < 1e-12 * scale);
        }
        assert!(c.z_shift.iter().all(|&z| z > 0.0));
    }

    #[test]
    fn derived_scaling_with_stark_shift() {
        let trap = trap_preset("A", 20).unwrap();
        let layout = equilibrate_crystal(&trap, None).unwrap();
        let beams = beams_case(&trap, trap.omega_z);
        let dkz = 2.0 * beams.k * beams.theta.sin();
        let modes = drumhead_modes(&layout, &trap, dkz).unwrap();
        let beams = beams_case(&trap, modes.omega[0]);
        let base = derive_model(&trap, &beams, &layout, &modes).unwrap();
        let mut doubled = beams.clone();
        doubled.delta_ac *= 2.0;
        let scaled = derive_model(&trap, &doubled, &layout, &modes).unwrap();
        assert_relative_eq!(scaled.g, 2.0 * base.g, max_relative = 1e-12);
        assert_relative_eq!(scaled.j, 4.0 * base.j, max_relative = 1e-12);
        assert_relative_eq!(scaled.b1, base.b1, max_relative = 1e-12);
    }

    #[test]
    fn budget_values() {
        let b = scattering_budget(TWO_PI * 38.0, TWO_PI * 15.0, TWO_PI * 405.0).unwrap();
        assert_abs_diff_eq!(b.gamma_tot / TWO_PI, 53.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.jt_budget, 7.64, epsilon = 0.01);
        // Microwave route drops the Raman rate.
        let mw = scattering_budget(TWO_PI * 38.0, 0.0, TWO_PI * 405.0).unwrap();
        assert_abs_diff_eq!(mw.jt_budget, 405.0 / 38.0, epsilon = 1e-9);
        let free = scattering_budget(0.0, 0.0, TWO_PI * 405.0).unwrap();
        assert!(free.jt_budget.is_infinite());
        assert!(scattering_budget(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn accidental_resonance_guard() {
        let layout = CrystalLayout::from_positions(vec![60e-6, -100e-6], vec![0.0, 30e-6]);
        let trap = trap_preset("A", 2).unwrap();
        let modes = ModeData {
            omega: vec![trap.omega_z],
            matrix: DMatrix::from_column_slice(2, 1, &[1.0 / 2f64.sqrt(); 2]),
            eta: vec![0.3],
        };
        // Tune mu_r so that delta_n - 2 B_0 sits inside the guard band.
        let mut beams = beams_case(&trap, trap.omega_z);
        beams.mu_r = -beams.b0 + trap.omega_z + trap.omega_r + TWO_PI * 50.0;
        let derived = derive_model(&trap, &beams, &layout, &modes).unwrap();
        let err =
            offresonant_couplings(&layout, &modes, &trap, &beams, &derived).unwrap_err();
        match err {
            Error::AccidentalResonance(msg) => assert!(msg.contains("mode 0"), "{}", msg),
            other => panic!("unexpected error {:?}", other),
        }
    }
}
