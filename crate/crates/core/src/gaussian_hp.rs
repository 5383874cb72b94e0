//! Holstein-Primakoff phase-space description of properly squeezed
//! one-axis-twisted states under quadratic encoding.
//!
//! Quadratures are taken in the frame of the unrotated state, with
//! `x = -J_x'` and `p = -J_y' / J`, so that the encoded generator is
//! `J cos(theta) + x sin(theta)`. The evolved Wigner function is
//!
//! `W = (pi^2 Q)^{-1/2} exp[-x^2/(J delta) - (J delta / Q) y^2]`,
//! `y = p + 2 eta x + phi u`, `u = 2 sin(theta) (J cos(theta) + x sin(theta))`,
//! `Q = 1 + 4 J delta kappa sin^2(theta)`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{domain, Error, Result};
use crate::noise_model::DecayCoefficient;
use crate::numerics::scan_then_golden;

/// Edge of the properly squeezed band, `mu <= (2J)^{-1/2}`.
pub fn properly_squeezed_band(j: f64) -> f64 {
    (2.0 * j).powf(-0.5)
}

/// Effective squeezing `delta` and displacement `eta` of OATS(mu, beta).
pub fn oats_delta_eta(mu: f64, beta: f64, j: f64) -> (f64, f64) {
    let (s2b, c2b) = (2.0 * beta).sin_cos();
    let sb2 = beta.sin().powi(2);
    let delta = beta.cos().powi(2) + (1.0 + 4.0 * j * j * mu * mu) * sb2 + 2.0 * j * mu * s2b;
    let eta = 2.0 * mu * (c2b + j * mu * s2b) / (2.0 * delta);
    (delta, eta)
}

/// Named squeezing families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqueezingFamily {
    /// mu = 0, beta = pi/2.
    Css,
    /// mu = 2 3^{1/6} N^{-2/3}, beta = pi/2 - 3^{-1/6} N^{-1/3}.
    Ku,
    /// mu = N^{-1/2}, beta = -pi/2.
    Pe,
}

impl SqueezingFamily {
    /// `(mu, beta)` at `J`.
    pub fn params(self, j: f64) -> (f64, f64) {
        let n = 2.0 * j;
        match self {
            SqueezingFamily::Css => (0.0, FRAC_PI_2),
            SqueezingFamily::Ku => (
                2.0 * 3f64.powf(1.0 / 6.0) * n.powf(-2.0 / 3.0),
                FRAC_PI_2 - 3f64.powf(-1.0 / 6.0) * n.powf(-1.0 / 3.0),
            ),
            SqueezingFamily::Pe => (n.powf(-0.5), -FRAC_PI_2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SqueezingFamily::Css => "CSS",
            SqueezingFamily::Ku => "KU",
            SqueezingFamily::Pe => "PE",
        }
    }
}

/// Classification of the low-excitation requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityLevel {
    Valid,
    Warn,
    Invalid,
}

/// `<a^dag a> = [1/delta + delta (1 + 4 J^2 eta^2) + 4 J kappa] / 4` against J.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub excitations: f64,
    pub ratio: f64,
    pub valid: bool,
    pub level: ValidityLevel,
}

pub const VALID_RATIO: f64 = 0.25;
pub const WARN_RATIO: f64 = 0.5;

pub fn validity(j: f64, delta: f64, eta: f64, kappa: f64) -> ValidityReport {
    let excitations =
        0.25 * (1.0 / delta + delta * (1.0 + 4.0 * j * j * eta * eta) + 4.0 * j * kappa);
    let ratio = excitations / j;
    let level = if ratio < VALID_RATIO {
        ValidityLevel::Valid
    } else if ratio <= WARN_RATIO {
        ValidityLevel::Warn
    } else {
        ValidityLevel::Invalid
    };
    ValidityReport {
        excitations,
        ratio,
        valid: level == ValidityLevel::Valid,
        level,
    }
}

/// Gaussian phase-space state at one encoding time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub j: f64,
    pub mu: f64,
    /// Twist orientation as supplied (either sign convention for PE).
    pub beta: f64,
    pub delta: f64,
    pub eta: f64,
    pub theta: f64,
    /// Encoded phase `phi = b t`.
    pub phase: f64,
    pub kappa: f64,
    pub q: f64,
    pub validity: ValidityReport,
    /// mu lies between the band edge and twice the band edge.
    pub beyond_band: bool,
}

/// First and second moments of a Gaussian Wigner function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
    pub cov_xp: f64,
}

/// Builds the state from OATS parameters at decay `kappa_t`, with zero phase.
pub fn from_oats(mu: f64, beta: f64, j: f64, theta: f64, kappa_t: f64) -> Result<GaussianState> {
    if !(j >= 0.5) || (2.0 * j).fract() != 0.0 {
        return Err(domain(format!(
            "J must be a positive half-integer, got {j}"
        )));
    }
    if !(mu >= 0.0) || !beta.is_finite() || !theta.is_finite() {
        return Err(domain("need mu >= 0 and finite angles"));
    }
    if !(kappa_t >= 0.0) {
        return Err(domain(format!("kappa must be non-negative, got {kappa_t}")));
    }
    let band = properly_squeezed_band(j);
    if mu > 2.0 * band {
        return Err(Error::Validity(format!(
            "mu = {mu} exceeds twice the properly squeezed band {band}"
        )));
    }
    let (delta, eta) = oats_delta_eta(mu, beta, j);
    let q = 1.0 + 4.0 * j * delta * kappa_t * theta.sin().powi(2);
    Ok(GaussianState {
        j,
        mu,
        beta,
        delta,
        eta,
        theta,
        phase: 0.0,
        kappa: kappa_t,
        q,
        validity: validity(j, delta, eta, kappa_t),
        beyond_band: mu > band,
    })
}

impl GaussianState {
    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Effective shear `eta + phi sin^2(theta)`.
    pub fn shear(&self) -> f64 {
        self.eta + self.phase * self.theta.sin().powi(2)
    }

    /// Offset `2 phi sin(theta) J cos(theta)` in `y`.
    pub fn offset(&self) -> f64 {
        2.0 * self.phase * self.theta.sin() * self.j * self.theta.cos()
    }

    /// `y = p + 2 eta' x + c0`.
    pub fn y(&self, x: f64, p: f64) -> f64 {
        p + 2.0 * self.shear() * x + self.offset()
    }

    pub fn wigner(&self, x: f64, p: f64) -> f64 {
        let jd = self.j * self.delta;
        let y = self.y(x, p);
        (PI * PI * self.q).powf(-0.5) * (-x * x / jd - jd / self.q * y * y).exp()
    }

    pub fn moments(&self) -> PhaseSpaceMoments {
        let jd = self.j * self.delta;
        let s = self.shear();
        PhaseSpaceMoments {
            mean_x: 0.0,
            mean_p: -self.offset(),
            var_x: 0.5 * jd,
            var_p: self.q / (2.0 * jd) + 2.0 * s * s * jd,
            cov_xp: -s * jd,
        }
    }

    /// Standard deviations of `x` and of `y` (independent Gaussians).
    pub fn sigma_xy(&self) -> (f64, f64) {
        let jd = self.j * self.delta;
        ((0.5 * jd).sqrt(), (self.q / (2.0 * jd)).sqrt())
    }
}

/// Weyl symbol `c + x X + p P + xx X^2 + pp P^2 + xp XP` of a quadratic operator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadForm {
    pub c: f64,
    pub x: f64,
    pub p: f64,
    pub xx: f64,
    pub pp: f64,
    pub xp: f64,
}

impl QuadForm {
    pub fn eval(&self, x: f64, p: f64) -> f64 {
        self.c + self.x * x + self.p * p + self.xx * x * x + self.pp * p * p + self.xp * x * p
    }

    pub fn add(&self, o: &QuadForm) -> QuadForm {
        QuadForm {
            c: self.c + o.c,
            x: self.x + o.x,
            p: self.p + o.p,
            xx: self.xx + o.xx,
            pp: self.pp + o.pp,
            xp: self.xp + o.xp,
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.c,
            0.5 * self.x,
            0.5 * self.p,
            0.5 * self.x,
            self.xx,
            0.5 * self.xp,
            0.5 * self.p,
            0.5 * self.xp,
            self.pp,
        )
    }

    /// Second-order Moyal term of the symmetrized product with `g`,
    /// `-(f_xx g_pp + f_pp g_xx - 2 f_xp g_xp) / 8`.
    pub fn moyal_correction(&self, g: &QuadForm) -> f64 {
        -(2.0 * self.xx * 2.0 * g.pp + 2.0 * self.pp * 2.0 * g.xx - 2.0 * self.xp * g.xp) / 8.0
    }
}

impl PhaseSpaceMoments {
    fn homogeneous(&self) -> (Vector3<f64>, Matrix3<f64>) {
        let m = Vector3::new(1.0, self.mean_x, self.mean_p);
        let s = Matrix3::new(
            0.0,
            0.0,
            0.0,
            0.0,
            self.var_x,
            self.cov_xp,
            0.0,
            self.cov_xp,
            self.var_p,
        );
        (m, s)
    }

    /// `Tr[F rho]` for a quadratic symbol.
    pub fn expect(&self, f: &QuadForm) -> f64 {
        let (m, s) = self.homogeneous();
        let a = f.matrix();
        (a * s).trace() + (m.transpose() * a * m)[0]
    }

    /// `Tr[(F G + G F) rho] / 2` for quadratic symbols.
    pub fn expect_sym_product(&self, f: &QuadForm, g: &QuadForm) -> f64 {
        let (m, s) = self.homogeneous();
        let (a, b) = (f.matrix(), g.matrix());
        let ea = (a * s).trace() + (m.transpose() * a * m)[0];
        let eb = (b * s).trace() + (m.transpose() * b * m)[0];
        let efg =
            ea * eb + 2.0 * (a * s * b * s).trace() + 4.0 * (m.transpose() * a * s * b * m)[0];
        efg + f.moyal_correction(g)
    }
}

/// SLD split into the displacement part `L_A = a y` and the shear part
/// `L_B = b x y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sld {
    pub l_a: QuadForm,
    pub l_b: QuadForm,
    pub a: f64,
    pub b: f64,
}

impl Sld {
    pub fn total(&self) -> QuadForm {
        self.l_a.add(&self.l_b)
    }
}

/// SLD for `b` at the state's phase after encoding time `t`.
pub fn sld(gs: &GaussianState, t: f64) -> Result<Sld> {
    if !(t >= 0.0) {
        return Err(domain("encoding time must be non-negative"));
    }
    let (s, c) = gs.theta.sin_cos();
    let jd = gs.j * gs.delta;
    let a = -4.0 * t * s * jd * gs.j * c / gs.q;
    let b = -4.0 * t * s * jd * s / (gs.q + 1.0);
    let eta = gs.shear();
    let c0 = gs.offset();
    let l_a = QuadForm {
        c: a * c0,
        x: 2.0 * a * eta,
        p: a,
        ..Default::default()
    };
    let l_b = QuadForm {
        x: b * c0,
        xx: 2.0 * b * eta,
        xp: b,
        ..Default::default()
    };
    Ok(Sld { l_a, l_b, a, b })
}

/// Total QFI over `nu = T/t` shots with its two shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpQfi {
    pub total: f64,
    pub f_a: f64,
    pub f_b: f64,
    /// `2 delta J^3 t T sin^2(2 theta) / Q`.
    pub leading: f64,
}

pub fn qfi(gs: &GaussianState, t: f64, t_total: f64) -> Result<HpQfi> {
    if !(t > 0.0) || !(t_total > 0.0) {
        return Err(domain("need t > 0 and T > 0"));
    }
    let (s, c) = gs.theta.sin_cos();
    let (j, d, q) = (gs.j, gs.delta, gs.q);
    let base = 2.0 * d * j * j * t * t_total * s * s;
    let f_a = base * 4.0 * j * c * c / q;
    let f_b = base * 2.0 * d * s * s / (q + 1.0);
    Ok(HpQfi {
        total: f_a + f_b,
        f_a,
        f_b,
        leading: 2.0 * d * j.powi(3) * t * t_total * (2.0 * gs.theta).sin().powi(2) / q,
    })
}

/// Uncertainty from measuring `O = J p + 2 J eta' x` on `nu = T/t` shots.
/// `eta_readout = None` uses the state's `eta`.
pub fn readout_precision(
    gs: &GaussianState,
    t: f64,
    t_total: f64,
    eta_readout: Option<f64>,
) -> Result<f64> {
    if !(t > 0.0) || !(t_total > 0.0) {
        return Err(domain("need t > 0 and T > 0"));
    }
    let er = eta_readout.unwrap_or(gs.eta);
    let o = QuadForm {
        p: gs.j,
        x: 2.0 * gs.j * er,
        ..Default::default()
    };
    let m = gs.moments();
    let var = m.expect_sym_product(&o, &o) - m.expect(&o).powi(2);
    // d<p>/db = -2 t sin(theta) J cos(theta); <x> does not move.
    let sc = gs.theta.sin() * gs.theta.cos();
    let slope = gs.j * (-2.0 * t * sc * gs.j);
    if sc.abs() < 1e-12 {
        return Err(Error::ZeroSignal(
            "d<O>/db vanishes for theta in {0, pi/2}".into(),
        ));
    }
    Ok((var * t / t_total).sqrt() / slope.abs())
}

/// Sample points `(x_i, p_ij)` on a lattice that is uniform in `(x, y)`,
/// with half-widths `extent` standard deviations. Returns points, `dx`, `dy`.
pub fn sheared_lattice(gs: &GaussianState, n: usize, extent: f64) -> (Vec<(f64, f64)>, f64, f64) {
    let (sx, sy) = gs.sigma_xy();
    let dx = 2.0 * extent * sx / (n - 1) as f64;
    let dy = 2.0 * extent * sy / (n - 1) as f64;
    let eta = gs.shear();
    let c0 = gs.offset();
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = -extent * sx + dx * i as f64;
        for k in 0..n {
            let y = -extent * sy + dy * k as f64;
            pts.push((x, y - 2.0 * eta * x - c0));
        }
    }
    (pts, dx, dy)
}

/// Rectangular `(x, p, W)` grid covering `extent` standard deviations.
pub fn wigner_grid(gs: &GaussianState, nx: usize, np: usize, extent: f64) -> Result<Vec<[f64; 3]>> {
    if nx < 2 || np < 2 || !(extent > 0.0) {
        return Err(domain(
            "Wigner grid needs at least 2x2 points and a positive extent",
        ));
    }
    let m = gs.moments();
    let (sx, sp) = (m.var_x.sqrt(), m.var_p.sqrt());
    let rows: Vec<Vec<[f64; 3]>> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let x = m.mean_x - extent * sx + 2.0 * extent * sx * i as f64 / (nx - 1) as f64;
            (0..np)
                .map(|k| {
                    let p = m.mean_p - extent * sp + 2.0 * extent * sp * k as f64 / (np - 1) as f64;
                    [x, p, gs.wigner(x, p)]
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Trapezoidal integral of `f(x, p) W(x, p)` over the sheared lattice.
pub fn phase_space_integral<F: Fn(f64, f64) -> f64 + Sync>(
    gs: &GaussianState,
    n: usize,
    extent: f64,
    f: F,
) -> f64 {
    let (pts, dx, dy) = sheared_lattice(gs, n, extent);
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|k| {
                    let (x, p) = pts[i * n + k];
                    w(i) * w(k) * f(x, p) * gs.wigner(x, p)
                })
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() * dx * dy
}

const D1: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
const D2: [f64; 4] = [-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];

/// Sixth-order central first derivative of `g` at 0 with step `h`.
fn fd1<G: Fn(f64) -> f64>(g: G, h: f64) -> f64 {
    let mut s = 0.0;
    for (k, c) in D1.iter().enumerate() {
        let o = (k + 1) as f64 * h;
        s += c * (g(o) - g(-o));
    }
    s / h
}

/// Sixth-order central second derivative of `g` at 0 with step `h`.
fn fd2<G: Fn(f64) -> f64>(g: G, h: f64) -> f64 {
    let mut s = D2[0] * g(0.0);
    for (k, c) in D2[1..].iter().enumerate() {
        let o = (k + 1) as f64 * h;
        s += c * (g(o) + g(-o));
    }
    s / (h * h)
}

/// A squeezed-state protocol: OATS parameters and signal angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpProtocol {
    pub mu: f64,
    pub beta: f64,
    pub j: f64,
    pub theta: f64,
}

impl HpProtocol {
    /// State after time `t` at true parameter `b`.
    pub fn state(&self, b: f64, t: f64, noise: &DecayCoefficient) -> Result<GaussianState> {
        Ok(from_oats(self.mu, self.beta, self.j, self.theta, noise.kappa(t))?.with_phase(b * t))
    }
}

/// Which diffusion term the Fokker-Planck residual is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FokkerPlanckForm {
    /// Diffusion `kappa_dot d_p^2`, as printed.
    Printed,
    /// Diffusion `kappa_dot sin^2(theta) d_p^2`, which the closed-form
    /// Wigner function satisfies.
    Derived,
}

/// Residual of `d_t W = [2 b s (s x + J c) d_p + D d_p^2] W` evaluated with
/// the closed-form W: sixth-order differences in `p` on an `n x n` sheared
/// lattice, fourth-order differences in time with step `dt`. Returns
/// `max |R| / max |d_t W|`. A second pass with halved spatial step separates
/// discretization error from a genuine mismatch.
pub fn fokker_planck_residual(
    proto: &HpProtocol,
    b: f64,
    noise: &DecayCoefficient,
    t: f64,
    dt: f64,
    n: usize,
    form: FokkerPlanckForm,
) -> Result<f64> {
    if !(t >= 2.0 * dt) || !(dt > 0.0) || n < 8 {
        return Err(domain("need dt > 0, t >= 2 dt and at least 8 grid points"));
    }
    let gs = proto.state(b, t, noise)?;
    let states: Vec<GaussianState> = [-2.0, -1.0, 1.0, 2.0]
        .iter()
        .map(|k| proto.state(b, t + k * dt, noise))
        .collect::<Result<_>>()?;
    let (s, c) = proto.theta.sin_cos();
    let j = proto.j;
    let kd = noise.kappa_dot(t);
    let diff = match form {
        FokkerPlanckForm::Printed => kd,
        FokkerPlanckForm::Derived => kd * s * s,
    };
    let extent = 6.0;
    let (pts, _, dy) = sheared_lattice(&gs, n, extent);
    let pass = |h: f64| -> (f64, f64) {
        pts.par_iter()
            .map(|&(x, p)| {
                let dtw = (8.0 * (states[2].wigner(x, p) - states[1].wigner(x, p))
                    - (states[3].wigner(x, p) - states[0].wigner(x, p)))
                    / (12.0 * dt);
                let wp = fd1(|o| gs.wigner(x, p + o), h);
                let wpp = fd2(|o| gs.wigner(x, p + o), h);
                let rhs = 2.0 * b * s * (s * x + j * c) * wp + diff * wpp;
                ((dtw - rhs).abs(), dtw.abs())
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    };
    let (r1, scale) = pass(dy);
    if scale == 0.0 {
        return Ok(r1);
    }
    let rel = r1 / scale;
    let (r2, _) = pass(0.5 * dy);
    if rel > 1e-4 && r2 / scale < 0.5 * rel {
        return Err(Error::Resolution(format!(
            "residual {rel:e} is dominated by discretization (halved step gives {:e})",
            r2 / scale
        )));
    }
    Ok(rel)
}

/// Residual of the phase-space SLD equation
/// `d_b W = L W - (L_xx W_pp + L_pp W_xx - 2 L_xp W_xp) / 8`
/// on the sheared lattice, relative to `max |d_b W|`.
pub fn sld_weyl_residual(gs: &GaussianState, t: f64, n: usize) -> Result<f64> {
    if !(t > 0.0) || n < 8 {
        return Err(domain("need t > 0 and at least 8 grid points"));
    }
    let l = sld(gs, t)?.total();
    let (sx, sy) = gs.sigma_xy();
    let extent = 6.0;
    let (pts, _, _) = sheared_lattice(gs, n, extent);
    // Steps follow the widths of W along x at fixed p and along p at fixed x.
    let jd = gs.j * gs.delta;
    let sx_cond = (2.0 / jd + 8.0 * gs.shear().powi(2) * jd / gs.q).powf(-0.5);
    let (hx, hp) = (sx_cond / 32.0, sy / 32.0);
    let u_max = 2.0
        * gs.theta.sin().abs()
        * (gs.j * gs.theta.cos().abs() + gs.theta.sin().abs() * extent * sx);
    let hb = 0.02 * sy / (u_max.max(1e-300) * t);
    let (r, scale) = pts
        .par_iter()
        .map(|&(x, p)| {
            let w_at = |b: f64, x: f64, p: f64| gs.with_phase(gs.phase + b * t).wigner(x, p);
            let dbw = fd1(|o| w_at(o, x, p), hb);
            let w = gs.wigner(x, p);
            let wpp = fd2(|o| gs.wigner(x, p + o), hp);
            let wxx = fd2(|o| gs.wigner(x + o, p), hx);
            let wxp = fd1(|o| fd1(|q| gs.wigner(x + o, p + q), hp), hx);
            let rhs =
                l.eval(x, p) * w - (2.0 * l.xx * wpp + 2.0 * l.pp * wxx - 2.0 * l.xp * wxp) / 8.0;
            ((dbw - rhs).abs(), dbw.abs())
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    if scale == 0.0 {
        return Ok(r);
    }
    Ok(r / scale)
}

/// Zeno closed forms `(tau, theta, db)` of the displacement-share QCRB:
/// `tau = 1/(2 k0 wc sin(theta) sqrt(J delta))`, `theta = arccos sqrt(2/3)`,
/// `db = (3 sqrt(3)/4)^{1/2} (k0 wc / T)^{1/2} delta^{-1/4} J^{-5/4}`.
pub fn zeno_closed_form(
    delta: f64,
    j: f64,
    kappa0: f64,
    omega_c: f64,
    t_total: f64,
) -> (f64, f64, f64) {
    let a = kappa0 * omega_c;
    let theta = (2.0f64 / 3.0).sqrt().acos();
    let tau = 1.0 / (2.0 * a * theta.sin() * (j * delta).sqrt());
    let db =
        (3.0 * 3f64.sqrt() / 4.0).sqrt() * (a / t_total).sqrt() * delta.powf(-0.25) * j.powf(-1.25);
    (tau, theta, db)
}

/// Result of a time/angle optimization in the HP picture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpOptimum {
    pub tau: f64,
    pub theta: f64,
    /// `1/sqrt(F)` at the optimum (displacement share only in closed form).
    pub db: f64,
    /// `1/sqrt(F_A + F_B)` at the same `(tau, theta)`.
    pub db_full: f64,
    /// Printed prefactor evaluated with `N` in place of `J`.
    pub db_printed_n_units: Option<f64>,
    pub method: String,
    pub validity: ValidityReport,
    pub flags: Vec<String>,
}

/// Optimal encoding time and angle for OATS(mu, beta) at spin `j`.
/// Zeno decay uses the closed forms, other modes a numeric search over
/// `theta in [1e-3, pi/2 - 1e-3]` and `log tau` in `[1e-4, 1e2]` times a
/// characteristic time.
pub fn optimal_protocol(
    mu: f64,
    beta: f64,
    j: f64,
    noise: &DecayCoefficient,
    t_total: f64,
) -> Result<HpOptimum> {
    noise.validate()?;
    let probe = from_oats(mu, beta, j, FRAC_PI_2, 0.0)?;
    let delta = probe.delta;
    let mut flags = Vec::new();
    if probe.beyond_band {
        flags.push("mu_beyond_band".to_string());
    }
    let full_db = |tau: f64, theta: f64| -> Result<(f64, GaussianState)> {
        let gs = from_oats(mu, beta, j, theta, noise.kappa(tau))?;
        Ok((1.0 / qfi(&gs, tau, t_total)?.total.sqrt(), gs))
    };
    let (tau, theta, db, method, printed) = match *noise {
        DecayCoefficient::ZenoQuadratic { kappa0, omega_c } => {
            if kappa0 == 0.0 {
                return Err(domain("Zeno optimum needs kappa0 > 0"));
            }
            let (tau, theta, db) = zeno_closed_form(delta, j, kappa0, omega_c, t_total);
            let a = kappa0 * omega_c;
            let printed = (3.0 * 3f64.sqrt() / 4.0).sqrt()
                * (a / t_total).sqrt()
                * delta.powf(-0.25)
                * (2.0 * j).powf(-1.25);
            (tau, theta, db, "zeno_closed_form", Some(printed))
        }
        _ => {
            let tc = characteristic_time(noise, j, delta)?;
            let (lo, hi) = ((1e-4 * tc).ln(), (1e2 * tc).ln());
            let inner = |theta: f64| {
                scan_then_golden(
                    |lt: f64| {
                        full_db(lt.exp(), theta)
                            .map(|v| v.0.ln())
                            .unwrap_or(f64::INFINITY)
                    },
                    lo,
                    hi,
                    64,
                    1e-9,
                )
            };
            let (theta, _, _) =
                scan_then_golden(|th| inner(th).1, 1e-3, FRAC_PI_2 - 1e-3, 64, 1e-9);
            let (lt, lf, _) = inner(theta);
            if (lt - hi).abs() < 1e-6 || (lt - lo).abs() < 1e-6 {
                flags.push("tau_at_bracket_edge".to_string());
            }
            if !(1e-3 + 1e-6..=FRAC_PI_2 - 1e-3 - 1e-6).contains(&theta) {
                flags.push("theta_at_bracket_edge".to_string());
            }
            (lt.exp(), theta, lf.exp(), "numeric", None)
        }
    };
    let (db_full, gs) = full_db(tau, theta)?;
    if !gs.validity.valid {
        flags.push(format!("validity_{:?}", gs.validity.level).to_lowercase());
    }
    Ok(HpOptimum {
        tau,
        theta,
        db,
        db_full,
        db_printed_n_units: printed,
        method: method.to_string(),
        validity: gs.validity,
        flags,
    })
}

/// Scale of the optimal encoding time: `1/(k0 wc sqrt(J delta))` for Zeno,
/// `1/(gamma J^{1/3})` for Markovian, and `t*` with `J kappa(t*) = 1` for a
/// tabulated spectrum.
pub fn characteristic_time(noise: &DecayCoefficient, j: f64, delta: f64) -> Result<f64> {
    match *noise {
        DecayCoefficient::ZenoQuadratic { kappa0, omega_c } => {
            Ok(1.0 / (kappa0 * omega_c * (j * delta).sqrt()))
        }
        DecayCoefficient::MarkovianLinear { gamma } if gamma > 0.0 => Ok(1.0 / (gamma * j.cbrt())),
        DecayCoefficient::MarkovianLinear { .. } => {
            Err(domain("Markovian optimum needs gamma > 0"))
        }
        DecayCoefficient::ExactQuadrature { ref table, .. } => {
            let t_max = table[table.len() - 1].0;
            if j * noise.kappa(t_max) < 1.0 {
                return Err(domain("kappa table too short to reach J kappa = 1"));
            }
            Ok(crate::numerics::bisect(
                |t| j * noise.kappa(t) - 1.0,
                0.0,
                t_max,
            ))
        }
    }
}
