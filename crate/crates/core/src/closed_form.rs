//! Closed-form moments and uncertainties for coherent spin states and the
//! Phi state under quadratic encoding with collective dephasing.
//!
//! With `n = N - 1`, `c = cos(theta)` and `w = cos(bt) + i c sin(bt)`:
//! `zeta = e^{i phi} w^n` and
//! `Theta = e^{2 i phi} (cos(2bt) + i c sin(2bt))^{N-2}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, FRAC_PI_2};

use crate::error::{domain, Error, Result};

/// Kernel quantities shared by the CSS moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentKernel {
    pub zeta: Complex64,
    pub theta_big: Complex64,
    /// zeta + zeta*.
    pub zeta_sum: f64,
    /// (zeta - zeta*) / i.
    pub zeta_diff: f64,
    /// Theta + Theta*.
    pub theta_sum: f64,
}

/// `e^{i phase} (cos a + i c sin a)^p` through the complex logarithm, so that
/// large powers of a modulus below one do not underflow early.
fn log_polar_power(phase: f64, c: f64, a: f64, p: usize) -> Complex64 {
    let w = Complex64::new(a.cos(), c * a.sin());
    if p == 0 {
        return Complex64::from_polar(1.0, phase);
    }
    if w.norm() == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    (w.ln() * p as f64 + Complex64::new(0.0, phase)).exp()
}

/// Complex route: zeta and Theta from complex powers.
pub fn moment_kernel(theta: f64, phi: f64, bt: f64, n_qubits: usize) -> MomentKernel {
    let c = theta.cos();
    let zeta = log_polar_power(phi, c, bt, n_qubits.saturating_sub(1));
    let theta_big = log_polar_power(2.0 * phi, c, 2.0 * bt, n_qubits.saturating_sub(2));
    MomentKernel {
        zeta,
        theta_big,
        zeta_sum: (zeta + zeta.conj()).re,
        zeta_diff: ((zeta - zeta.conj()) / Complex64::new(0.0, 1.0)).re,
        theta_sum: (theta_big + theta_big.conj()).re,
    }
}

/// `T_n(cos x) = cos(n x)`.
pub fn chebyshev_t(n: usize, x: f64) -> f64 {
    (n as f64 * x).cos()
}

/// `U_{n-1}(cos x) = sin(n x) / sin(x)`, with the limit `n` at `sin x = 0`.
pub fn chebyshev_u_prev(n: usize, x: f64) -> f64 {
    let s = x.sin();
    if s.abs() < 1e-300 {
        let sign = if n.is_multiple_of(2) && x.cos() < 0.0 {
            -1.0
        } else {
            1.0
        };
        return sign * n as f64;
    }
    (n as f64 * x).sin() / s
}

/// `(real part, imaginary part)` of `e^{i phase} (cos a + i c sin a)^p`
/// through Chebyshev polynomials:
/// `2 r^p [cos(phase) T_p(u) - sin(phase) sin(x) U_{p-1}(u)]` and its partner,
/// where `r e^{ix} = cos a + i c sin a` and `u = cos x`.
fn chebyshev_pair(phase: f64, c: f64, a: f64, p: usize) -> (f64, f64) {
    let (sa, ca) = a.sin_cos();
    let r2 = ca * ca + c * c * sa * sa;
    if p == 0 {
        return (2.0 * phase.cos(), 2.0 * phase.sin());
    }
    if r2 == 0.0 {
        return (0.0, 0.0);
    }
    let r = r2.sqrt();
    let x = (c * sa).atan2(ca);
    let rp = (0.5 * p as f64 * r2.ln()).exp();
    let sin_x = c * sa / r;
    let t = chebyshev_t(p, x);
    let su = sin_x * chebyshev_u_prev(p, x);
    let (sp, cp) = phase.sin_cos();
    (2.0 * rp * (cp * t - sp * su), 2.0 * rp * (sp * t + cp * su))
}

/// Chebyshev route: `(zeta + zeta*, (zeta - zeta*)/i, Theta + Theta*)`,
/// real by construction.
pub fn chebyshev_kernel(theta: f64, phi: f64, bt: f64, n_qubits: usize) -> (f64, f64, f64) {
    let c = theta.cos();
    let (zs, zd) = chebyshev_pair(phi, c, bt, n_qubits.saturating_sub(1));
    let (ts, _) = chebyshev_pair(2.0 * phi, c, 2.0 * bt, n_qubits.saturating_sub(2));
    (zs, zd, ts)
}

/// First and second moments of `J_x`, `J_y` for an evolved CSS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CssMoments {
    pub jx: f64,
    pub jy: f64,
    pub jx2: f64,
    pub jy2: f64,
}

impl CssMoments {
    pub fn var_jx(&self) -> f64 {
        self.jx2 - self.jx * self.jx
    }

    pub fn var_jy(&self) -> f64 {
        self.jy2 - self.jy * self.jy
    }
}

/// Moments of CSS(theta, phi) after encoding phase `bt` and decay `kappa`.
pub fn css_moments(
    theta: f64,
    phi: f64,
    bt: f64,
    kappa: f64,
    n_qubits: usize,
) -> Result<CssMoments> {
    if n_qubits < 2 {
        return Err(domain("CSS moments need N >= 2"));
    }
    if !(kappa >= 0.0) {
        return Err(domain(format!("kappa must be non-negative, got {kappa}")));
    }
    let j = n_qubits as f64 / 2.0;
    let (zs, zd, ts) = chebyshev_kernel(theta, phi, bt, n_qubits);
    let s = theta.sin();
    let pre = 0.25 * n_qubits as f64 * (-kappa).exp() * s;
    let base = j * ((1.0 - 2.0 * j) * (2.0 * theta).cos() + 2.0 * j + 3.0);
    let twist = j * (2.0 * j - 1.0) * (-4.0 * kappa).exp() * s * s * ts;
    Ok(CssMoments {
        jx: pre * zs,
        jy: pre * zd,
        jx2: 0.125 * (base + twist),
        jy2: 0.125 * (base - twist),
    })
}

/// `d<J_y>/d(bt)` for a CSS at azimuth `phi`.
pub fn css_jy_slope(theta: f64, phi: f64, bt: f64, kappa: f64, n_qubits: usize) -> f64 {
    let n = (n_qubits - 1) as f64;
    let c = theta.cos();
    let (sa, ca) = bt.sin_cos();
    let r2 = ca * ca + c * c * sa * sa;
    let x = (c * sa).atan2(ca);
    let dlnr = -(1.0 - c * c) * sa * ca / r2;
    let dx = c / r2;
    let rn = (0.5 * n * r2.ln()).exp();
    let arg = phi + n * x;
    let d_diff = 2.0 * n * rn * (dlnr * arg.sin() + dx * arg.cos());
    0.25 * n_qubits as f64 * (-kappa).exp() * theta.sin() * d_diff
}

/// Which expression for the noiseless CSS QFI to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QfiVariant {
    /// `(T t J / 2)(2J-1) sin(theta) [4J-1 + (4J-3) cos(2 theta)]` as printed.
    Printed,
    /// Same with `sin^2(theta)`, equal to `4 nu t^2 Var(J_z^2)`.
    Corrected,
}

/// Total noiseless QFI of a CSS over `nu = T/t` shots.
pub fn css_qfi_noiseless(
    theta: f64,
    n_qubits: usize,
    t: f64,
    t_total: f64,
    variant: QfiVariant,
) -> f64 {
    let j = n_qubits as f64 / 2.0;
    let s = match variant {
        QfiVariant::Printed => theta.sin(),
        QfiVariant::Corrected => theta.sin().powi(2),
    };
    0.5 * t_total
        * t
        * j
        * (2.0 * j - 1.0)
        * s
        * (4.0 * j - 1.0 + (4.0 * j - 3.0) * (2.0 * theta).cos())
}

/// Both variants side by side with the exact-engine value when affordable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CssQfiReport {
    pub printed: f64,
    pub corrected: f64,
    pub exact: Option<f64>,
}

/// Shadow-validated noiseless CSS QFI; the exact value is computed for N <= 512.
pub fn css_qfi_report(theta: f64, n_qubits: usize, t: f64, t_total: f64) -> Result<CssQfiReport> {
    use crate::dicke_engine::{build_initial, qfi_exact, EncodingSpec, StateKind, StateSpec};
    let exact = if n_qubits <= 512 {
        let rho0 = build_initial(&StateSpec {
            kind: StateKind::Css { theta, phi: 0.0 },
            n: n_qubits,
        })?;
        Some(qfi_exact(&rho0, &EncodingSpec::quadratic(0.0, t), 0.0)?.qfi * t_total / t)
    } else {
        None
    };
    Ok(CssQfiReport {
        printed: css_qfi_noiseless(theta, n_qubits, t, t_total, QfiVariant::Printed),
        corrected: css_qfi_noiseless(theta, n_qubits, t, t_total, QfiVariant::Corrected),
        exact,
    })
}

/// `arctan sqrt((2J-1)/(2J-2))`, the maximizer of the corrected QFI (J > 1).
pub fn css_theta_opt(j: f64) -> Result<f64> {
    if j <= 1.0 {
        return Err(domain("optimal angle formula needs J > 1"));
    }
    Ok(((2.0 * j - 1.0) / (2.0 * j - 2.0)).sqrt().atan())
}

/// Which expression for the CSS `J_y`-readout uncertainty to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CssUncertaintyForm {
    /// Exact error propagation of the closed-form moments at `b0 = 0`.
    Exact,
    /// Large-J form `[e^{2k} + 2J s^2 sinh 2k] / (8 J^3 T tau c^2 s^2)`.
    Leading,
    /// `[e^{2k} + 2J - s^2 sinh 2k] / (8 J^3 T tau c^2 s^2)` as printed.
    PrintedGeneral,
    /// `[2J sinh 2k + e^{2k} + cosh 2k] / (T tau J^3)` as printed for
    /// theta = pi/4, returned without a square root.
    PrintedPiOver4,
}

fn check_geometry(theta: f64) -> Result<(f64, f64)> {
    let (s, c) = theta.sin_cos();
    if s.abs() < 1e-12 || c.abs() < 1e-12 {
        return Err(Error::SingularGeometry(format!(
            "theta = {theta} makes the J_y signal vanish"
        )));
    }
    Ok((s, c))
}

/// `J_y`-readout uncertainty at `b0 = 0` with decay `kappa = kappa(tau)`.
pub fn css_noisy_uncertainty(
    theta: f64,
    tau: f64,
    kappa: f64,
    n_qubits: usize,
    t_total: f64,
    form: CssUncertaintyForm,
) -> Result<f64> {
    if !(tau > 0.0) || !(kappa >= 0.0) || n_qubits < 2 {
        return Err(domain("need tau > 0, kappa >= 0, N >= 2"));
    }
    let (s, c) = check_geometry(theta)?;
    let j = n_qubits as f64 / 2.0;
    let (s2, c2) = (s * s, c * c);
    let e2k = (2.0 * kappa).exp();
    let sh = (2.0 * kappa).sinh();
    let tt = t_total * tau;
    Ok(match form {
        CssUncertaintyForm::Exact => {
            let num = e2k + (2.0 * j - 1.0) * s2 * sh;
            let den = 2.0 * tt * j * (2.0 * j - 1.0).powi(2) * s2 * c2;
            (num / den).sqrt()
        }
        CssUncertaintyForm::Leading => {
            ((e2k + 2.0 * j * s2 * sh) / (8.0 * j.powi(3) * tt * c2 * s2)).sqrt()
        }
        CssUncertaintyForm::PrintedGeneral => {
            ((e2k + 2.0 * j - s2 * sh) / (8.0 * j.powi(3) * tt * c2 * s2)).sqrt()
        }
        CssUncertaintyForm::PrintedPiOver4 => {
            (2.0 * j * sh + e2k + (2.0 * kappa).cosh()) / (tt * j.powi(3))
        }
    })
}

/// `J_y`-readout uncertainty at an arbitrary operating point `b0` from the
/// closed-form moments and the analytic slope.
pub fn css_jy_uncertainty(
    theta: f64,
    tau: f64,
    b0: f64,
    kappa: f64,
    n_qubits: usize,
    t_total: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(domain("tau must be positive"));
    }
    let m = css_moments(theta, 0.0, b0 * tau, kappa, n_qubits)?;
    let slope = tau * css_jy_slope(theta, 0.0, b0 * tau, kappa, n_qubits);
    if slope.abs() < 1e-300 {
        return Err(Error::ZeroSignal("d<J_y>/db vanishes".into()));
    }
    Ok((m.var_jy() * tau / t_total).sqrt() / slope.abs())
}

/// Phi-state precision at one encoding time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiUncertainty {
    /// `e^{J^2 kappa} / (sqrt(T tau) J^2)`.
    pub qcrb: f64,
    /// Survival-probability readout at operating point `b0`.
    pub survival: f64,
}

/// Phi-state QCRB and survival-readout uncertainty. Readout:
/// `<O> = D cos(a)`, `<O^2> = 1`, `D = e^{-J^2 kappa}`, `a = J^2 b0 tau`, so
/// `db^2 = (1 - D^2 cos^2 a) / (T tau J^4 D^2 sin^2 a)`.
pub fn phi_uncertainty(
    tau: f64,
    kappa: f64,
    j: f64,
    t_total: f64,
    b0: f64,
) -> Result<PhiUncertainty> {
    if j.fract() != 0.0 || j < 1.0 {
        return Err(Error::UnsupportedState(format!(
            "Phi needs integer J >= 1, got {j}"
        )));
    }
    if !(tau > 0.0) || !(kappa >= 0.0) {
        return Err(domain("need tau > 0 and kappa >= 0"));
    }
    let j2 = j * j;
    let qcrb = (j2 * kappa).exp() / ((t_total * tau).sqrt() * j2);
    let d2 = (-2.0 * j2 * kappa).exp();
    let a = j2 * b0 * tau;
    let sin2 = a.sin().powi(2);
    let survival = if sin2 == 0.0 {
        f64::INFINITY
    } else {
        ((1.0 - d2 * a.cos().powi(2)) / (t_total * tau * j2 * j2 * d2 * sin2)).sqrt()
    };
    Ok(PhiUncertainty { qcrb, survival })
}

/// Survival-readout uncertainty exactly as printed (no squares on the
/// trigonometric factors and no `J^4`), kept for comparison.
pub fn phi_survival_printed(tau: f64, kappa: f64, j: f64, t_total: f64, b0: f64) -> f64 {
    let d2 = (-2.0 * j * j * kappa).exp();
    let a = j * j * b0 * tau;
    ((1.0 - d2 * a.cos()) / (t_total * tau * d2 * a.sin())).sqrt()
}

/// Operating point `b0` with `J^2 b0 tau = pi/2`.
pub fn phi_optimal_operating_point(tau: f64, j: f64) -> f64 {
    FRAC_PI_2 / (j * j * tau)
}

/// Asymptotic optimum `(tau_opt, db_opt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub tau: f64,
    pub theta: Option<f64>,
    pub db: f64,
}

/// Phi, Markovian: `tau = 1/(2 gamma J^2)`, `db = sqrt(gamma/T) sqrt(2e) / J`.
pub fn phi_markov_optimum(gamma: f64, j: f64, t_total: f64) -> Optimum {
    Optimum {
        tau: 1.0 / (2.0 * gamma * j * j),
        theta: None,
        db: (gamma / t_total).sqrt() * (2.0 * E).sqrt() / j,
    }
}

/// Phi, Zeno: `tau = 1/(2 k0 wc J)`, `db = sqrt(2) e^{1/4} sqrt(k0 wc / T) J^{-3/2}`.
pub fn phi_zeno_optimum(kappa0: f64, omega_c: f64, j: f64, t_total: f64) -> Optimum {
    let a = kappa0 * omega_c;
    Optimum {
        tau: 1.0 / (2.0 * a * j),
        theta: None,
        db: 2f64.sqrt() * E.powf(0.25) * (a / t_total).sqrt() * j.powf(-1.5),
    }
}

/// CSS at theta = pi/4, Markovian, leading order:
/// `tau = 3^{1/3}/(2 gamma J^{1/3})`, `db = sqrt(gamma/T) / J`.
pub fn css_markov_pi4_optimum(gamma: f64, j: f64, t_total: f64) -> Optimum {
    Optimum {
        tau: 3f64.cbrt() / (2.0 * gamma * j.cbrt()),
        theta: Some(std::f64::consts::FRAC_PI_4),
        db: (gamma / t_total).sqrt() / j,
    }
}

/// CSS with free angle, Markovian, leading order:
/// `db = sqrt(gamma/(2T)) / J`, `theta = 2^{-1/5} 3^{-1/10} J^{-1/5}`.
pub fn css_markov_free_optimum(gamma: f64, j: f64, t_total: f64) -> Optimum {
    let tau = (3f64.powf(0.4) / 2f64.powf(1.2) * j.powf(-0.2)
        - 2f64.powf(0.4) * 3f64.powf(0.2) / 5.0 * j.powf(-0.6))
        / gamma;
    Optimum {
        tau,
        theta: Some(2f64.powf(-0.2) * 3f64.powf(-0.1) * j.powf(-0.2)),
        db: (gamma / (2.0 * t_total)).sqrt() / j,
    }
}

/// CSS at theta = pi/4, Zeno: `tau = 1/(sqrt(2) k0 wc sqrt(J))`,
/// `db = 2^{1/4} sqrt(k0 wc / T) J^{-5/4}`.
pub fn css_zeno_pi4_optimum(kappa0: f64, omega_c: f64, j: f64, t_total: f64) -> Optimum {
    let a = kappa0 * omega_c;
    Optimum {
        tau: 1.0 / (2f64.sqrt() * a * j.sqrt()),
        theta: Some(std::f64::consts::FRAC_PI_4),
        db: 2f64.powf(0.25) * (a / t_total).sqrt() * j.powf(-1.25),
    }
}

/// CSS with free angle, Zeno: `theta = arccot sqrt(2)`,
/// `tau = sqrt(3)/(2 k0 wc sqrt(J))`, `db = (3^{3/4}/2) sqrt(k0 wc / T) J^{-5/4}`.
pub fn css_zeno_free_optimum(kappa0: f64, omega_c: f64, j: f64, t_total: f64) -> Optimum {
    let a = kappa0 * omega_c;
    Optimum {
        tau: 3f64.sqrt() / (2.0 * a * j.sqrt()),
        theta: Some((1.0 / 2f64.sqrt()).atan()),
        db: 3f64.powf(0.75) / 2.0 * (a / t_total).sqrt() * j.powf(-1.25),
    }
}
