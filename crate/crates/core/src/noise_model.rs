//! Stationary Gaussian dephasing noise: spectra, the decay coefficient
//! kappa(t) and sampled trajectories.
//!
//! Conventions: `S(w)` is two-sided and even, `C(t) = (1/2pi) int S(w) e^{iwt} dw`,
//! and
//! `kappa(t) = (1/32pi) int_R sin^2(wt/2)/w^2 S(w) dw`.
//! A Dicke level `m` picks up the phase `-m * sqrt(KAPPA_NORM) * int xi`,
//! which makes the ensemble coherence decay `exp(-kappa (m-m')^2)`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::numerics::{integrate_adaptive, sinc, Quad};

/// Squared coupling between the noise field and a unit `J_z` step.
/// `Var(int_0^t xi) = 64 kappa(t)`, so the coupling `sqrt(1/32)` turns the
/// Gaussian average `exp(-c^2 dm^2 Var / 2)` into `exp(-kappa dm^2)`.
pub const KAPPA_NORM: f64 = 1.0 / 32.0;

const ABS_TOL: f64 = 1e-12;
const REL_TOL: f64 = 1e-10;
const FAIL_TOL: f64 = 1e-10;
const MAX_SPLITS: usize = 20_000;
const SYNTH_MODES: usize = 4096;

/// Two-sided noise power spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpectrum {
    Flat { s0: f64 },
    Lorentzian { g2: f64, gamma_c: f64 },
    HardCutoff { s0: f64, omega_c: f64 },
}

impl NoiseSpectrum {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let good = match *self {
            NoiseSpectrum::Flat { s0 } => ok(s0),
            NoiseSpectrum::Lorentzian { g2, gamma_c } => ok(g2) && ok(gamma_c),
            NoiseSpectrum::HardCutoff { s0, omega_c } => ok(s0) && ok(omega_c),
        };
        if good {
            Ok(())
        } else {
            Err(domain(format!(
                "spectrum parameters must be finite and positive: {self:?}"
            )))
        }
    }

    /// S(w).
    pub fn density(&self, omega: f64) -> f64 {
        match *self {
            NoiseSpectrum::Flat { s0 } => s0,
            NoiseSpectrum::Lorentzian { g2, gamma_c } => {
                2.0 * g2 * gamma_c / (gamma_c * gamma_c + omega * omega)
            }
            NoiseSpectrum::HardCutoff { s0, omega_c } => {
                if omega.abs() <= omega_c {
                    s0
                } else {
                    0.0
                }
            }
        }
    }

    /// Autocorrelation C(t); `None` for the white spectrum.
    pub fn correlation(&self, t: f64) -> Option<f64> {
        match *self {
            NoiseSpectrum::Flat { .. } => None,
            NoiseSpectrum::Lorentzian { g2, gamma_c } => Some(g2 * (-gamma_c * t.abs()).exp()),
            NoiseSpectrum::HardCutoff { s0, omega_c } => {
                Some(s0 * omega_c * sinc(omega_c * t) / PI)
            }
        }
    }

    /// Spectral cutoff frequency, if the spectrum has one.
    pub fn cutoff(&self) -> Option<f64> {
        match *self {
            NoiseSpectrum::Flat { .. } => None,
            NoiseSpectrum::Lorentzian { gamma_c, .. } => Some(gamma_c),
            NoiseSpectrum::HardCutoff { omega_c, .. } => Some(omega_c),
        }
    }

    /// `int_R S(w) dw`, finite except for the white spectrum.
    pub fn total_power(&self) -> Option<f64> {
        match *self {
            NoiseSpectrum::Flat { .. } => None,
            NoiseSpectrum::Lorentzian { g2, .. } => Some(2.0 * PI * g2),
            NoiseSpectrum::HardCutoff { s0, omega_c } => Some(2.0 * s0 * omega_c),
        }
    }

    /// Long-time rate: `kappa(t) ~ S(0) t / 64`.
    pub fn markov_rate(&self) -> f64 {
        self.density(0.0) / 64.0
    }

    /// Short-time curvature `kappa0^2 w_c^2 = int_R S / (128 pi)`.
    pub fn zeno_coefficient(&self) -> Option<f64> {
        self.total_power().map(|p| p / (128.0 * PI))
    }

    fn scale_frequency(&self, t: f64) -> f64 {
        match *self {
            NoiseSpectrum::Flat { .. } => 1.0 / t,
            NoiseSpectrum::Lorentzian { gamma_c, .. } => gamma_c,
            NoiseSpectrum::HardCutoff { omega_c, .. } => omega_c,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kernel {
    /// sin^2(wt/2)/w^2, for kappa.
    SinSq,
    /// sin(wt)/w, for d kappa / dt.
    Sin,
}

/// k-th derivative of `S(w)/w^p` at `w`, for p = 2 (SinSq) or p = 1 (Sin).
fn tail_derivative(spec: &NoiseSpectrum, kernel: Kernel, w: f64, k: u32) -> f64 {
    let fact: f64 = (1..=k).map(f64::from).product();
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    match (*spec, kernel) {
        (NoiseSpectrum::Flat { s0 }, Kernel::SinSq) => {
            s0 * sign * fact * (k + 1) as f64 * w.powi(-(k as i32 + 2))
        }
        (NoiseSpectrum::Flat { s0 }, Kernel::Sin) => s0 * sign * fact * w.powi(-(k as i32 + 1)),
        (NoiseSpectrum::Lorentzian { g2, gamma_c }, _) => {
            let pref = 2.0 * g2 / gamma_c;
            let zm = Complex64::new(w, -gamma_c).powi(-(k as i32 + 1));
            let zp = Complex64::new(w, gamma_c).powi(-(k as i32 + 1));
            match kernel {
                Kernel::SinSq => {
                    let inv_w2 = fact * (k + 1) as f64 * w.powi(-(k as i32 + 2));
                    let lor = ((zm - zp) / Complex64::new(0.0, 2.0 * gamma_c)).re * fact;
                    pref * sign * (inv_w2 - lor)
                }
                Kernel::Sin => {
                    let inv_w = fact * w.powi(-(k as i32 + 1));
                    let lor = 0.5 * (zm + zp).re * fact;
                    pref * sign * (inv_w - lor)
                }
            }
        }
        (NoiseSpectrum::HardCutoff { .. }, _) => 0.0,
    }
}

/// `int_A^inf e^{iwt} g(w) dw` by three integrations by parts, with the
/// magnitude of the next term as error estimate.
fn oscillatory_tail(spec: &NoiseSpectrum, kernel: Kernel, a: f64, t: f64) -> (Complex64, f64) {
    let it = Complex64::new(0.0, t);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sign = 1.0;
    for k in 0..3u32 {
        sum += sign * tail_derivative(spec, kernel, a, k) / it.powi(k as i32 + 1);
        sign = -sign;
    }
    let phase = Complex64::new(0.0, a * t).exp();
    let err = tail_derivative(spec, kernel, a, 3).abs() / t.powi(4);
    (-phase * sum, err)
}

/// `(1/2) int_A^inf S(w)/w^2 dw`.
fn mean_tail(spec: &NoiseSpectrum, a: f64) -> f64 {
    match *spec {
        NoiseSpectrum::Flat { s0 } => 0.5 * s0 / a,
        NoiseSpectrum::Lorentzian { g2, gamma_c } => {
            let z = gamma_c / a;
            let bracket = if z < 0.1 {
                let z2 = z * z;
                z * z2 * (1.0 / 3.0 - z2 / 5.0 + z2 * z2 / 7.0 - z2 * z2 * z2 / 9.0) / gamma_c
            } else {
                1.0 / a - z.atan() / gamma_c
            };
            g2 / gamma_c * bracket
        }
        NoiseSpectrum::HardCutoff { .. } => 0.0,
    }
}

/// `int_0^inf kernel(w, t) S(w) dw` with quadrature panels on `[0, A]`
/// and an analytic tail beyond.
fn half_line_integral(spec: &NoiseSpectrum, t: f64, kernel: Kernel) -> Quad {
    let w_scale = spec.scale_frequency(t);
    let (upper, has_tail) = match *spec {
        NoiseSpectrum::HardCutoff { omega_c, .. } => (omega_c, false),
        _ => ((2.0 * PI * 64.0 / t).max(20.0 * w_scale), true),
    };
    let half_period = PI / t;
    let mut edges: Vec<f64> = Vec::new();
    let n_half = (upper / half_period).floor() as usize;
    edges.extend((0..=n_half).map(|k| k as f64 * half_period));
    for j in -30..=10 {
        let w = w_scale * 2f64.powi(j);
        if w > 0.0 && w < upper {
            edges.push(w);
        }
    }
    edges.push(upper);
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * upper);

    let f = |w: f64| {
        let k = match kernel {
            Kernel::SinSq => 0.25 * t * t * sinc(0.5 * w * t).powi(2),
            Kernel::Sin => t * sinc(w * t),
        };
        spec.density(w) * k
    };
    let q = integrate_adaptive(&f, &edges, ABS_TOL, REL_TOL, MAX_SPLITS);
    if !has_tail {
        return q;
    }
    let (osc, osc_err) = oscillatory_tail(spec, kernel, upper, t);
    let tail = match kernel {
        Kernel::SinSq => mean_tail(spec, upper) - 0.5 * osc.re,
        Kernel::Sin => osc.im,
    };
    Quad {
        value: q.value + tail,
        error: q.error + osc_err,
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(domain(format!(
            "time must be finite and non-negative, got {t}"
        )))
    }
}

fn finish(q: Quad, pref: f64) -> Result<f64> {
    let value = q.value * pref;
    let err = q.error * pref;
    if err > FAIL_TOL.max(FAIL_TOL * value.abs()) {
        Err(Error::Quadrature { estimate: err })
    } else {
        Ok(value)
    }
}

/// kappa(t) by adaptive quadrature of the spectral overlap integral.
pub fn kappa_of_t(spec: &NoiseSpectrum, t: f64) -> Result<f64> {
    spec.validate()?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    finish(
        half_line_integral(spec, t, Kernel::SinSq),
        1.0 / (16.0 * PI),
    )
}

/// d kappa / dt = (1/32pi) int_0^inf sin(wt)/w S(w) dw.
pub fn kappa_dot_of_t(spec: &NoiseSpectrum, t: f64) -> Result<f64> {
    spec.validate()?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    finish(half_line_integral(spec, t, Kernel::Sin), 1.0 / (32.0 * PI))
}

/// How kappa(t) is obtained along a protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecayCoefficient {
    /// Tabulated quadrature: rows of `(t, kappa, kappa_dot)` on a uniform grid,
    /// interpolated by cubic Hermite splines.
    ExactQuadrature {
        spectrum: NoiseSpectrum,
        table: Vec<(f64, f64, f64)>,
    },
    /// kappa = gamma t.
    MarkovianLinear { gamma: f64 },
    /// kappa = kappa0^2 (w_c t)^2.
    ZenoQuadratic { kappa0: f64, omega_c: f64 },
}

impl DecayCoefficient {
    /// Tabulates kappa on `points` uniformly spaced times in `[0, t_max]`.
    pub fn tabulate(spectrum: NoiseSpectrum, t_max: f64, points: usize) -> Result<Self> {
        if !(t_max > 0.0) || points < 2 {
            return Err(domain("tabulation needs t_max > 0 and at least two points"));
        }
        let mut table = Vec::with_capacity(points);
        for i in 0..points {
            let t = t_max * i as f64 / (points - 1) as f64;
            table.push((t, kappa_of_t(&spectrum, t)?, kappa_dot_of_t(&spectrum, t)?));
        }
        Ok(DecayCoefficient::ExactQuadrature { spectrum, table })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DecayCoefficient::ExactQuadrature { spectrum, table } => {
                spectrum.validate()?;
                if table.len() < 2 || table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(domain(
                        "kappa table must hold at least two strictly increasing times",
                    ));
                }
                Ok(())
            }
            DecayCoefficient::MarkovianLinear { gamma } if gamma.is_finite() && *gamma >= 0.0 => {
                Ok(())
            }
            DecayCoefficient::ZenoQuadratic { kappa0, omega_c }
                if kappa0.is_finite()
                    && omega_c.is_finite()
                    && *kappa0 >= 0.0
                    && *omega_c > 0.0 =>
            {
                Ok(())
            }
            other => Err(domain(format!("invalid decay coefficient {other:?}"))),
        }
    }

    fn hermite(table: &[(f64, f64, f64)], t: f64) -> (f64, f64) {
        let last = table[table.len() - 1];
        if t >= last.0 {
            return (last.1 + last.2 * (t - last.0), last.2);
        }
        let i = table.partition_point(|row| row.0 <= t).saturating_sub(1);
        let (t0, k0, d0) = table[i];
        let (t1, k1, d1) = table[i + 1];
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let value = (2.0 * s3 - 3.0 * s2 + 1.0) * k0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * k1
            + (s3 - s2) * h * d1;
        let slope = ((6.0 * s2 - 6.0 * s) * k0 + (-6.0 * s2 + 6.0 * s) * k1) / h
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (3.0 * s2 - 2.0 * s) * d1;
        (value, slope)
    }

    /// kappa(t) for t >= 0.
    pub fn kappa(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            DecayCoefficient::ExactQuadrature { table, .. } => Self::hermite(table, t).0,
            DecayCoefficient::MarkovianLinear { gamma } => gamma * t,
            DecayCoefficient::ZenoQuadratic { kappa0, omega_c } => {
                kappa0 * kappa0 * (omega_c * t).powi(2)
            }
        }
    }

    /// d kappa / dt.
    pub fn kappa_dot(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            DecayCoefficient::ExactQuadrature { table, .. } => Self::hermite(table, t).1,
            DecayCoefficient::MarkovianLinear { gamma } => *gamma,
            DecayCoefficient::ZenoQuadratic { kappa0, omega_c } => {
                2.0 * kappa0 * kappa0 * omega_c * omega_c * t
            }
        }
    }
}

/// One sampled noise realization on the grid `t_i = i dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || samples.len() < 2 {
            return Err(domain("trajectory needs dt > 0 and at least two samples"));
        }
        Ok(Trajectory { dt, samples })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.samples.len() - 1) as f64
    }

    /// `(t, xi(t))` pairs.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, &x)| (i as f64 * self.dt, x))
    }
}

/// `int_0^t xi(s) ds` by the trapezoid rule, with linear interpolation
/// inside the last partial step.
pub fn integrated_phase(traj: &Trajectory, t: f64) -> Result<f64> {
    let horizon = traj.horizon();
    if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
        return Err(Error::Range { t, horizon });
    }
    let t = t.min(horizon);
    let pos = t / traj.dt;
    let full = (pos.floor() as usize).min(traj.samples.len() - 1);
    let s = &traj.samples;
    let mut acc = 0.0;
    for i in 0..full {
        acc += 0.5 * (s[i] + s[i + 1]);
    }
    acc *= traj.dt;
    let frac = pos - full as f64;
    if frac > 0.0 && full + 1 < s.len() {
        let x_t = s[full] + frac * (s[full + 1] - s[full]);
        acc += 0.5 * frac * traj.dt * (s[full] + x_t);
    }
    Ok(acc)
}

#[derive(Debug, Clone)]
enum Synthesis {
    OrnsteinUhlenbeck { g2: f64, gamma: f64 },
    Spectral { omega: Vec<f64>, amp: Vec<f64> },
}

/// Reusable trajectory generator for a fixed spectrum and time grid.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    dt: f64,
    steps: usize,
    method: Synthesis,
}

impl TrajectorySampler {
    pub fn new(spec: &NoiseSpectrum, horizon: f64, dt: f64) -> Result<Self> {
        spec.validate()?;
        if !(dt > 0.0) || !(horizon >= dt) || !horizon.is_finite() {
            return Err(domain(format!(
                "need dt > 0 and horizon >= dt, got dt={dt}, horizon={horizon}"
            )));
        }
        if let Some(wc) = spec.cutoff() {
            if dt * wc > 0.1 {
                return Err(Error::Resolution(format!(
                    "dt * omega_c = {} exceeds 0.1",
                    dt * wc
                )));
            }
        }
        let steps = (horizon / dt - 1e-9).ceil() as usize;
        let method = match *spec {
            NoiseSpectrum::Lorentzian { g2, gamma_c } => {
                Synthesis::OrnsteinUhlenbeck { g2, gamma: gamma_c }
            }
            NoiseSpectrum::Flat { .. } | NoiseSpectrum::HardCutoff { .. } => {
                let w_min = 2.0 * PI / (100.0 * horizon);
                let w_max = match *spec {
                    NoiseSpectrum::HardCutoff { omega_c, .. } => omega_c,
                    _ => 20.0 * (0.1 / dt),
                };
                if w_min >= w_max {
                    return Err(Error::Resolution(format!(
                        "synthesis band [{w_min}, {w_max}] is empty; increase the horizon"
                    )));
                }
                let ratio = (w_max / w_min).ln();
                let edge = |k: usize| w_min * (ratio * k as f64 / SYNTH_MODES as f64).exp();
                let mut omega = Vec::with_capacity(SYNTH_MODES);
                let mut amp = Vec::with_capacity(SYNTH_MODES);
                for k in 0..SYNTH_MODES {
                    let (lo, hi) = (edge(k), edge(k + 1));
                    let w = (lo * hi).sqrt();
                    omega.push(w);
                    amp.push((spec.density(w) * (hi - lo) / PI).sqrt());
                }
                Synthesis::Spectral { omega, amp }
            }
        };
        Ok(TrajectorySampler { dt, steps, method })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Stationary variance of the synthesized process, `C(0)` restricted to the band.
    pub fn band_variance(&self) -> f64 {
        match &self.method {
            Synthesis::OrnsteinUhlenbeck { g2, .. } => *g2,
            Synthesis::Spectral { amp, .. } => amp.iter().map(|a| a * a).sum(),
        }
    }

    /// `Var(int_0^t xi) / 64` for the synthesized band; equals kappa(t) for the
    /// exact OU update.
    pub fn band_kappa(&self, t: f64) -> Option<f64> {
        match &self.method {
            Synthesis::OrnsteinUhlenbeck { .. } => None,
            Synthesis::Spectral { omega, amp } => Some(
                omega
                    .iter()
                    .zip(amp)
                    .map(|(w, a)| a * a * t * t * sinc(0.5 * w * t).powi(2))
                    .sum::<f64>()
                    / 64.0,
            ),
        }
    }

    /// Trajectory number `index` of the stream keyed by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let n = self.steps + 1;
        let mut samples = Vec::with_capacity(n);
        match &self.method {
            Synthesis::OrnsteinUhlenbeck { g2, gamma } => {
                let decay = (-gamma * self.dt).exp();
                let kick = (g2 * (1.0 - decay * decay)).sqrt();
                let z0: f64 = StandardNormal.sample(&mut rng);
                let mut x = g2.sqrt() * z0;
                samples.push(x);
                for _ in 1..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x = x * decay + kick * z;
                    samples.push(x);
                }
            }
            Synthesis::Spectral { omega, amp } => {
                let coef: Vec<Complex64> = amp
                    .iter()
                    .map(|a| {
                        let ca: f64 = StandardNormal.sample(&mut rng);
                        let cb: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(a * ca, -a * cb)
                    })
                    .collect();
                let rot: Vec<Complex64> = omega
                    .iter()
                    .map(|w| Complex64::from_polar(1.0, w * self.dt))
                    .collect();
                let mut z: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); omega.len()];
                for i in 0..n {
                    if i > 0 && i % 256 == 0 {
                        let t = i as f64 * self.dt;
                        for (zk, w) in z.iter_mut().zip(omega) {
                            *zk = Complex64::from_polar(1.0, w * t);
                        }
                    }
                    let x: f64 = coef.iter().zip(&z).map(|(c, zk)| (c * zk).re).sum();
                    samples.push(x);
                    for (zk, r) in z.iter_mut().zip(&rot) {
                        *zk *= r;
                    }
                }
            }
        }
        Trajectory {
            dt: self.dt,
            samples,
        }
    }
}

/// One realization on `[0, horizon]`; deterministic given `seed`.
pub fn sample_trajectory(
    spec: &NoiseSpectrum,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    Ok(TrajectorySampler::new(spec, horizon, dt)?.sample(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson on [a, b] with n (even) intervals.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + h * i as f64);
        }
        s * h / 3.0
    }

    #[test]
    fn kappa_vanishes_at_zero() {
        let spec = NoiseSpectrum::Lorentzian {
            g2: 1.0,
            gamma_c: 1.0,
        };
        assert_eq!(kappa_of_t(&spec, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn flat_spectrum_gives_linear_kappa() {
        let gamma = 0.37;
        let spec = NoiseSpectrum::Flat { s0: 64.0 * gamma };
        for &t in &[0.01, 0.1, 0.5, 1.0, 3.0] {
            let k = kappa_of_t(&spec, t).unwrap();
            assert!((k - gamma * t).abs() < 1e-8 * gamma * t, "t={t}: {k}");
        }
    }

    #[test]
    fn flat_kappa_matches_brute_force_trapezoid() {
        // int_0^W sin^2(wt/2)/w^2 by a fine trapezoid, plus the tail mean 1/(2W).
        let t = 0.8;
        let w_max = 4000.0;
        let n = 4_000_000;
        let h = w_max / n as f64;
        let f = |w: f64| 0.25 * t * t * sinc(0.5 * w * t).powi(2);
        let mut s = 0.5 * (f(0.0) + f(w_max));
        for i in 1..n {
            s += f(h * i as f64);
        }
        let oracle = (s * h + 0.5 / w_max) * 2.0 / (32.0 * PI);
        let k = kappa_of_t(&NoiseSpectrum::Flat { s0: 1.0 }, t).unwrap();
        assert!((k - oracle).abs() < 1e-6 * oracle, "{k} vs {oracle}");
    }

    #[test]
    fn lorentzian_kappa_matches_ou_closed_form() {
        let (g2, gc) = (2.5, 1.7);
        let spec = NoiseSpectrum::Lorentzian { g2, gamma_c: gc };
        for &t in &[1e-3, 0.05, 0.3, 1.0, 4.0, 25.0] {
            let x = gc * t;
            let oracle = 2.0 * g2 / (gc * gc) * (x - 1.0 + (-x).exp()) / 64.0;
            let k = kappa_of_t(&spec, t).unwrap();
            assert!((k - oracle).abs() < 1e-8 * oracle, "t={t}: {k} vs {oracle}");
            let kd = kappa_dot_of_t(&spec, t).unwrap();
            let kd_oracle = 2.0 * g2 / gc * (1.0 - (-x).exp()) / 64.0;
            assert!(
                (kd - kd_oracle).abs() < 1e-8 * kd_oracle,
                "t={t}: {kd} vs {kd_oracle}"
            );
        }
    }

    #[test]
    fn hard_cutoff_kappa_matches_sine_integral_form() {
        let (s0, wc) = (3.0, 2.0);
        let spec = NoiseSpectrum::HardCutoff { s0, omega_c: wc };
        for &t in &[0.1, 1.0, 7.0] {
            let si = simpson(sinc, 0.0, wc * t, 200_000);
            let oracle = s0 / (32.0 * PI) * (t * si - (1.0 - (wc * t).cos()) / wc);
            let k = kappa_of_t(&spec, t).unwrap();
            assert!((k - oracle).abs() < 1e-9 * oracle, "t={t}: {k} vs {oracle}");
        }
    }

    #[test]
    fn hard_cutoff_short_time_is_zeno() {
        let spec = NoiseSpectrum::HardCutoff {
            s0: 1.3,
            omega_c: 5.0,
        };
        let t = 0.01 / 5.0;
        let expected = t * t * spec.total_power().unwrap() / (128.0 * PI);
        let k = kappa_of_t(&spec, t).unwrap();
        assert!((k / expected - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zeno_ratio_converges_for_finite_power_spectra() {
        for spec in [
            NoiseSpectrum::Lorentzian {
                g2: 1.0,
                gamma_c: 2.0,
            },
            NoiseSpectrum::HardCutoff {
                s0: 1.0,
                omega_c: 2.0,
            },
        ] {
            let wc = spec.cutoff().unwrap();
            let r1 = kappa_of_t(&spec, 1e-3 / wc).unwrap() / (1e-3 / wc).powi(2);
            let r2 = kappa_of_t(&spec, 1e-4 / wc).unwrap() / (1e-4 / wc).powi(2);
            assert!(
                r1 > 0.0 && (r1 / r2 - 1.0).abs() < 5e-3,
                "{spec:?}: {r1} {r2}"
            );
        }
    }

    #[test]
    fn markov_limit_over_two_decades() {
        let spec = NoiseSpectrum::Flat { s0: 5.0 };
        let g = spec.markov_rate();
        for i in 0..=20 {
            let t = 0.01 * 10f64.powf(i as f64 / 10.0);
            let k = kappa_of_t(&spec, t).unwrap();
            assert!(((k - g * t) / (g * t)).abs() < 1e-6);
        }
    }

    #[test]
    fn decay_modes_follow_their_laws() {
        let m = DecayCoefficient::MarkovianLinear { gamma: 0.2 };
        assert_eq!(m.kappa(3.0), 0.2 * 3.0);
        let z = DecayCoefficient::ZenoQuadratic {
            kappa0: 0.5,
            omega_c: 2.0,
        };
        assert_eq!(z.kappa(0.3), 0.25 * (0.6f64).powi(2));
        assert_eq!(z.kappa(0.0), 0.0);
    }

    #[test]
    fn tabulated_decay_interpolates_quadrature() {
        let spec = NoiseSpectrum::Lorentzian {
            g2: 1.0,
            gamma_c: 1.0,
        };
        let d = DecayCoefficient::tabulate(spec, 2.0, 41).unwrap();
        assert_eq!(d.kappa(0.0), 0.0);
        for &t in &[0.013, 0.77, 1.91] {
            let exact = kappa_of_t(&spec, t).unwrap();
            assert!(
                (d.kappa(t) - exact).abs() < 1e-9,
                "t={t}: {} vs {exact}",
                d.kappa(t)
            );
        }
    }

    #[test]
    fn spectrum_is_even_and_non_negative() {
        for spec in [
            NoiseSpectrum::Flat { s0: 2.0 },
            NoiseSpectrum::Lorentzian {
                g2: 1.5,
                gamma_c: 0.3,
            },
            NoiseSpectrum::HardCutoff {
                s0: 1.0,
                omega_c: 3.0,
            },
        ] {
            for i in 0..200 {
                let w = -10.0 + 0.1 * i as f64;
                assert_eq!(spec.density(w), spec.density(-w));
                assert!(spec.density(w) >= 0.0);
            }
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(kappa_of_t(&NoiseSpectrum::Flat { s0: -1.0 }, 1.0).is_err());
        assert!(kappa_of_t(&NoiseSpectrum::Flat { s0: 1.0 }, -1.0).is_err());
    }

    #[test]
    fn coarse_dt_is_a_resolution_error() {
        let spec = NoiseSpectrum::Lorentzian {
            g2: 1.0,
            gamma_c: 10.0,
        };
        assert!(matches!(
            sample_trajectory(&spec, 1.0, 0.05, 0),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn trajectories_are_deterministic() {
        for spec in [
            NoiseSpectrum::Lorentzian {
                g2: 1.0,
                gamma_c: 1.0,
            },
            NoiseSpectrum::HardCutoff {
                s0: 1.0,
                omega_c: 1.0,
            },
        ] {
            let a = sample_trajectory(&spec, 2.0, 0.05, 42).unwrap();
            let b = sample_trajectory(&spec, 2.0, 0.05, 42).unwrap();
            let c = sample_trajectory(&spec, 2.0, 0.05, 43).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn integrated_phase_of_constant_and_zero() {
        let zero = Trajectory::new(0.1, vec![0.0; 11]).unwrap();
        assert_eq!(integrated_phase(&zero, 0.73).unwrap(), 0.0);
        let c = Trajectory::new(0.1, vec![2.5; 11]).unwrap();
        assert!((integrated_phase(&c, 0.73).unwrap() - 2.5 * 0.73).abs() < 1e-14);
        assert!((integrated_phase(&c, 1.0).unwrap() - 2.5).abs() < 1e-14);
        assert!(matches!(
            integrated_phase(&c, 1.5),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn integrated_phase_of_a_ramp_is_exact() {
        let samples: Vec<f64> = (0..21).map(|i| 0.3 * i as f64 * 0.05).collect();
        let tr = Trajectory::new(0.05, samples).unwrap();
        let t = 0.612;
        assert!((integrated_phase(&tr, t).unwrap() - 0.15 * t * t).abs() < 1e-14);
    }

    #[test]
    fn ou_autocovariance_matches_exponential() {
        let spec = NoiseSpectrum::Lorentzian {
            g2: 1.0,
            gamma_c: 1.0,
        };
        let sampler = TrajectorySampler::new(&spec, 2.0, 0.01).unwrap();
        let lags = [0usize, 50, 100, 200];
        let m = 10_000;
        let mut prods = vec![Vec::with_capacity(m); lags.len()];
        for i in 0..m {
            let tr = sampler.sample(7, i as u64);
            for (j, &l) in lags.iter().enumerate() {
                prods[j].push(tr.samples[0] * tr.samples[l]);
            }
        }
        for (j, &l) in lags.iter().enumerate() {
            let mean = prods[j].iter().sum::<f64>() / m as f64;
            let var = prods[j].iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            let se = (var / m as f64).sqrt();
            let expected = spec.correlation(l as f64 * 0.01).unwrap();
            assert!(
                (mean - expected).abs() < 3.0 * se,
                "lag {l}: {mean} vs {expected} (se {se})"
            );
        }
    }

    #[test]
    fn flat_synthesis_variance_matches_band_power() {
        let spec = NoiseSpectrum::Flat { s0: 2.0 };
        let dt = 0.01;
        let sampler = TrajectorySampler::new(&spec, 0.5, dt).unwrap();
        let w_min = 2.0 * PI / (100.0 * 0.5);
        let w_max = 2.0 / dt;
        let oracle = 2.0 * (w_max - w_min) / PI;
        assert!((sampler.band_variance() - oracle).abs() < 1e-9 * oracle);
        let m = 2000;
        let xs: Vec<f64> = (0..m).map(|i| sampler.sample(3, i).samples[10]).collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let mean = sq.iter().sum::<f64>() / m as f64;
        let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - oracle).abs() < 3.0 * se,
            "{mean} vs {oracle} (se {se})"
        );
    }

    fn coherence_check(sampler: &TrajectorySampler, kappa: f64, t: f64, seed: u64) {
        let m = 10_000;
        let c = KAPPA_NORM.sqrt();
        for dm in 1..=3 {
            let (mut re, mut im, mut re2, mut im2) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..m {
                let phi = integrated_phase(&sampler.sample(seed, i), t).unwrap();
                let (s, co) = (c * dm as f64 * phi).sin_cos();
                re += co;
                im -= s;
                re2 += co * co;
                im2 += s * s;
            }
            let n = m as f64;
            let (mr, mi) = (re / n, im / n);
            let se_r = ((re2 / n - mr * mr) / (n - 1.0)).sqrt();
            let se_i = ((im2 / n - mi * mi) / (n - 1.0)).sqrt();
            let expected = (-kappa * (dm * dm) as f64).exp();
            assert!(
                (mr - expected).abs() < 3.0 * se_r,
                "dm={dm}: {mr} vs {expected} (se {se_r})"
            );
            assert!(
                mi.abs() < 3.0 * se_i,
                "dm={dm}: imaginary part {mi} (se {se_i})"
            );
        }
    }

    #[test]
    fn ou_coherence_decay_matches_kappa() {
        let spec = NoiseSpectrum::Lorentzian {
            g2: 8.0,
            gamma_c: 1.0,
        };
        let t = 1.5;
        let sampler = TrajectorySampler::new(&spec, t, 0.01).unwrap();
        coherence_check(&sampler, kappa_of_t(&spec, t).unwrap(), t, 11);
    }

    #[test]
    fn spectral_coherence_decay_matches_band_kappa() {
        let spec = NoiseSpectrum::HardCutoff {
            s0: 40.0,
            omega_c: 1.0,
        };
        let t = 2.0;
        let sampler = TrajectorySampler::new(&spec, t, 0.05).unwrap();
        let kb = sampler.band_kappa(t).unwrap();
        let kq = kappa_of_t(&spec, t).unwrap();
        assert!((kb / kq - 1.0).abs() < 0.05);
        coherence_check(&sampler, kb, t, 5);
    }

    proptest! {
        #[test]
        fn kappa_is_nondecreasing(a in 0.0f64..5.0, b in 0.0f64..5.0, g2 in 0.1f64..5.0, gc in 0.1f64..5.0) {
            let spec = NoiseSpectrum::Lorentzian { g2, gamma_c: gc };
            let (t1, t2) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(kappa_of_t(&spec, t1).unwrap() <= kappa_of_t(&spec, t2).unwrap() + 1e-15);
        }

        #[test]
        fn hard_cutoff_kappa_nondecreasing(a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let spec = NoiseSpectrum::HardCutoff { s0: 1.0, omega_c: 1.0 };
            let (t1, t2) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(kappa_of_t(&spec, t1).unwrap() <= kappa_of_t(&spec, t2).unwrap() + 1e-15);
        }
    }
}
