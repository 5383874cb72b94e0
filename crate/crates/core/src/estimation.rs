//! Shot-level sampling, moment-method and ratio estimators, and their
//! analytic uncertainties.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{css_moments, phi_uncertainty, CssMoments};
use crate::dicke_engine::{
    build_initial, observable_matrix, propagate, CMat, DickeDensity, EncodingSpec, Observable,
    StateKind, StateSpec,
};
use crate::error::{domain, Error, Result};
use crate::noise_model::DecayCoefficient;

/// Measurement performed on every shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "eta", rename_all = "snake_case")]
pub enum Readout {
    Jy,
    Jx,
    SurvivalPhi,
    SurvivalPhiPrime,
    Nonlinear(f64),
}

impl Readout {
    pub fn observable(self) -> Observable {
        match self {
            Readout::Jy => Observable::Jy,
            Readout::Jx => Observable::Jx,
            Readout::SurvivalPhi => Observable::SurvivalPhi,
            Readout::SurvivalPhiPrime => Observable::SurvivalPhiPrime,
            Readout::Nonlinear(eta) => Observable::NonlinearReadout(eta),
        }
    }
}

/// One estimation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub b_true: f64,
    pub b0: f64,
    pub tau: f64,
    pub t_total: f64,
    pub readout: Readout,
    pub noise: DecayCoefficient,
}

/// `|b_true - b0| tau` above this is flagged as outside the local regime.
pub const LOCAL_REGIME: f64 = 0.1;

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.t_total >= self.tau) {
            return Err(domain("need tau > 0 and T >= tau (at least one shot)"));
        }
        if !self.b_true.is_finite() || !self.b0.is_finite() {
            return Err(domain("frequencies must be finite"));
        }
        self.noise.validate()
    }

    /// `floor(T / tau)`.
    pub fn nu(&self) -> usize {
        (self.t_total / self.tau).floor() as usize
    }

    pub fn kappa(&self) -> f64 {
        self.noise.kappa(self.tau)
    }

    pub fn local_regime(&self) -> bool {
        (self.b_true - self.b0).abs() * self.tau < LOCAL_REGIME
    }

    /// Noise-averaged state after one encoding period at `b_true`.
    pub fn evolve(&self, state: &StateSpec) -> Result<DickeDensity> {
        let rho0 = build_initial(state)?;
        propagate(
            &rho0,
            &EncodingSpec::quadratic(self.b_true, self.tau),
            self.kappa(),
        )
    }
}

/// Sample mean and unbiased sample variance of `nu` outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotStatistics {
    pub mean: f64,
    pub variance: f64,
    pub nu: usize,
}

/// Born-rule outcome distribution of one readout on one state.
#[derive(Debug, Clone)]
pub struct BornSampler {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl BornSampler {
    /// Eigen-decomposes `obs`; degenerate eigenvalues (within 1e-9) are merged.
    pub fn new(rho: &DickeDensity, obs: &CMat) -> Result<Self> {
        let scale = obs.norm().max(1.0);
        if (obs - obs.adjoint()).norm() > 1e-10 * scale {
            return Err(Error::Internal("readout matrix is not Hermitian".into()));
        }
        if obs.nrows() != rho.dim() {
            return Err(Error::Shape {
                expected: rho.dim(),
                got: obs.nrows(),
            });
        }
        let eig = SymmetricEigen::new(obs.clone());
        let mut pairs: Vec<(f64, f64)> = (0..eig.eigenvalues.len())
            .map(|k| {
                let v = eig.eigenvectors.column(k);
                let p = (v.adjoint() * rho.matrix() * v)[(0, 0)].re.max(0.0);
                (eig.eigenvalues[k], p)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (l, p) in pairs {
            match values.last() {
                Some(&last) if (l - last).abs() <= 1e-9 * scale => *probs.last_mut().unwrap() += p,
                _ => {
                    values.push(l);
                    probs.push(p);
                }
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(BornSampler { values, probs })
    }

    /// Two-outcome sampler with values `+1` / `-1` and `P(+1) = (1 + mean)/2`.
    pub fn two_outcome(mean: f64) -> Self {
        let p = (0.5 * (1.0 + mean)).clamp(0.0, 1.0);
        BornSampler {
            values: vec![-1.0, 1.0],
            probs: vec![1.0 - p, p],
        }
    }

    pub fn for_readout(rho: &DickeDensity, readout: Readout) -> Result<Self> {
        let obs = observable_matrix(readout.observable(), rho.n())?;
        match readout {
            Readout::SurvivalPhi | Readout::SurvivalPhiPrime => Ok(Self::two_outcome(
                crate::dicke_engine::trace_product(rho.matrix(), &obs).re,
            )),
            _ => Self::new(rho, &obs),
        }
    }

    pub fn expectation(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.expectation();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (v - m).powi(2))
            .sum()
    }

    /// Draws `nu` outcomes by sequential binomial splitting.
    pub fn sample(&self, nu: usize, rng: &mut ChaCha8Rng) -> ShotStatistics {
        let mut remaining = nu as u64;
        let mut left = 1.0;
        let (mut s1, mut s2) = (0.0, 0.0);
        let shift = self
            .values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum::<f64>();
        for (k, (&v, &p)) in self.values.iter().zip(&self.probs).enumerate() {
            if remaining == 0 {
                break;
            }
            let count = if k + 1 == self.values.len() || left <= p {
                remaining
            } else {
                let q = (p / left).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .map(|b| b.sample(rng))
                    .unwrap_or(0)
            };
            remaining -= count;
            left -= p;
            let d = v - shift;
            s1 += count as f64 * d;
            s2 += count as f64 * d * d;
        }
        let n = nu as f64;
        let mean_d = s1 / n;
        let variance = if nu > 1 {
            (s2 - n * mean_d * mean_d) / (n - 1.0)
        } else {
            0.0
        };
        ShotStatistics {
            mean: mean_d + shift,
            variance: variance.max(0.0),
            nu,
        }
    }
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `nu` outcomes of `readout` on `rho`, deterministic in `seed`.
pub fn sample_shots(
    rho: &DickeDensity,
    readout: Readout,
    nu: usize,
    seed: u64,
) -> Result<ShotStatistics> {
    if nu == 0 {
        return Err(domain("need at least one shot"));
    }
    let sampler = BornSampler::for_readout(rho, readout)?;
    Ok(sampler.sample(nu, &mut stream_rng(seed, 0)))
}

/// `Delta b^2 = (<O^2> - <O>^2) / (nu (d<O>/db)^2)`.
pub fn error_propagation(mean: f64, second: f64, slope: f64, nu: f64) -> Result<f64> {
    if slope == 0.0 || !slope.is_finite() {
        return Err(Error::ZeroSignal("d<O>/db vanishes".into()));
    }
    Ok(((second - mean * mean).max(0.0) / nu).sqrt() / slope.abs())
}

/// One observable's contribution to a multi-observable estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationTerm {
    pub mean: f64,
    pub second: f64,
    /// `d b_hat / d<O>`.
    pub dbdo: f64,
}

/// `Delta b^2 = nu^{-1} sum_i (d b_hat / d<O_i>)^2 Var(O_i)`.
pub fn error_propagation_multi(terms: &[PropagationTerm], nu: f64) -> Result<f64> {
    if terms.iter().all(|t| t.dbdo == 0.0) {
        return Err(Error::ZeroSignal(
            "estimator is insensitive to every observable".into(),
        ));
    }
    let v: f64 = terms
        .iter()
        .map(|t| t.dbdo * t.dbdo * (t.second - t.mean * t.mean).max(0.0))
        .sum();
    Ok((v / nu).sqrt())
}

/// Noiseless `<J_y>(b)` of CSS(theta, 0) and the half-width of its monotone
/// branch around `b = 0`.
fn css_noiseless_signal(theta: f64, tau: f64, n: usize) -> Result<(impl Fn(f64) -> f64, f64)> {
    let c = theta.cos();
    if n < 2 || c.abs() < 1e-12 || theta.sin().abs() < 1e-12 {
        return Err(Error::SingularGeometry(
            "J_y signal needs N >= 2 and theta not in {0, pi/2}".into(),
        ));
    }
    let nn = (n - 1) as f64;
    // n x(b tau) = pi/2 with tan x = c tan(b tau).
    let half = ((FRAC_PI_2_ / nn).tan() / c.abs()).atan() / tau;
    let f = move |b: f64| {
        css_moments(theta, 0.0, b * tau, 0.0, n)
            .map(|m| m.jy)
            .unwrap_or(f64::NAN)
    };
    Ok((f, half))
}

const FRAC_PI_2_: f64 = std::f64::consts::FRAC_PI_2;

/// Moment-method estimate from the sample mean of `J_y`, inverting the
/// noiseless signal (the decay is deliberately ignored).
pub fn naive_estimator_css(mean_jy: f64, spec: &ProtocolSpec, theta: f64, n: usize) -> Result<f64> {
    let (f, half) = css_noiseless_signal(theta, spec.tau, n)?;
    let (lo, hi) = (f(-half), f(half));
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    if !(mean_jy > lo && mean_jy < hi) {
        return Err(Error::InversionDomain {
            mean: mean_jy,
            lo,
            hi,
        });
    }
    Ok(crate::numerics::bisect(|b| f(b) - mean_jy, -half, half))
}

/// `b_hat = b0 + wrap(atan2(<O'>, <O>) - J^2 b0 tau) / (J^2 tau)`.
pub fn ratio_estimator_phi(
    o: &ShotStatistics,
    o_prime: &ShotStatistics,
    spec: &ProtocolSpec,
    n: usize,
) -> Result<f64> {
    if n % 2 == 1 {
        return Err(Error::UnsupportedState(
            "Phi ratio estimator needs integer J".into(),
        ));
    }
    let j2 = (n as f64 / 2.0).powi(2);
    let r2 = o.mean * o.mean + o_prime.mean * o_prime.mean;
    let floor = 9.0 * (o.variance / o.nu as f64 + o_prime.variance / o_prime.nu as f64);
    if !(r2 > floor) {
        return Err(Error::Indeterminate(format!(
            "<O>^2 + <O'>^2 = {r2:e} is below the shot-noise floor {floor:e}"
        )));
    }
    let a0 = j2 * spec.b0 * spec.tau;
    let d = o_prime.mean.atan2(o.mean) - a0;
    let wrapped = d - (2.0 * std::f64::consts::PI) * (d / (2.0 * std::f64::consts::PI)).round();
    Ok(spec.b0 + wrapped / (j2 * spec.tau))
}

/// `b_hat = atan(<J_y>/<J_x>) / ((N-1) cos(theta) tau)` at operating point 0.
pub fn ratio_estimator_css(
    jx: &ShotStatistics,
    jy: &ShotStatistics,
    spec: &ProtocolSpec,
    theta: f64,
    n: usize,
) -> Result<f64> {
    if spec.b0 != 0.0 {
        return Err(domain("CSS ratio estimator assumes b0 = 0"));
    }
    let c = theta.cos();
    if c.abs() < 1e-12 || theta.sin().abs() < 1e-12 || n < 2 {
        return Err(Error::SingularGeometry(
            "theta in {0, pi/2} or N < 2".into(),
        ));
    }
    if jx.mean.abs() <= 3.0 * (jx.variance / jx.nu as f64).sqrt() {
        return Err(Error::Indeterminate(format!(
            "<J_x> = {} is within shot noise of zero",
            jx.mean
        )));
    }
    Ok((jy.mean / jx.mean).atan() / ((n - 1) as f64 * c * spec.tau))
}

/// Analytic ratio-estimator uncertainty for the CSS with `nu` shots per
/// observable: `[y^2 Var(J_x) + x^2 Var(J_y)] / (nu ((N-1) c tau)^2 (x^2+y^2)^2)`.
pub fn ratio_css_uncertainty(
    theta: f64,
    tau: f64,
    b: f64,
    kappa: f64,
    n: usize,
    nu: f64,
) -> Result<f64> {
    ratio_css_from_moments(
        &css_moments(theta, 0.0, b * tau, kappa, n)?,
        theta,
        tau,
        n,
        nu,
    )
}

/// Same as [`ratio_css_uncertainty`] from precomputed moments.
pub fn ratio_css_from_moments(
    m: &CssMoments,
    theta: f64,
    tau: f64,
    n: usize,
    nu: f64,
) -> Result<f64> {
    let r2 = m.jx * m.jx + m.jy * m.jy;
    let k = (n - 1) as f64 * theta.cos() * tau;
    if r2 == 0.0 || k == 0.0 {
        return Err(Error::ZeroSignal("vanishing CSS ratio signal".into()));
    }
    error_propagation_multi(
        &[
            PropagationTerm {
                mean: m.jx,
                second: m.jx2,
                dbdo: -m.jy / (r2 * k),
            },
            PropagationTerm {
                mean: m.jy,
                second: m.jy2,
                dbdo: m.jx / (r2 * k),
            },
        ],
        nu,
    )
}

/// Analytic ratio-estimator uncertainty for Phi with `nu` shots per
/// observable: `(e^{2 J^2 kappa} - sin^2(2a)/2) / (nu J^4 tau^2)`, `a = J^2 b tau`.
pub fn ratio_phi_uncertainty(j: f64, tau: f64, b: f64, kappa: f64, nu: f64) -> Result<f64> {
    if j.fract() != 0.0 || j < 1.0 {
        return Err(Error::UnsupportedState("Phi needs integer J".into()));
    }
    let j2 = j * j;
    let d = (-j2 * kappa).exp();
    let a = j2 * b * tau;
    let (x, y) = (d * a.cos(), d * a.sin());
    let k = j2 * tau * d * d;
    error_propagation_multi(
        &[
            PropagationTerm {
                mean: x,
                second: 1.0,
                dbdo: -y / k,
            },
            PropagationTerm {
                mean: y,
                second: 1.0,
                dbdo: x / k,
            },
        ],
        nu,
    )
}

/// Summary over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub bias: f64,
    pub bias_se: f64,
    pub std: f64,
    pub std_se: f64,
    pub nu: usize,
    pub replications: usize,
    pub failures: usize,
    /// Shots over all observables in one replication.
    pub total_shots: usize,
    /// Wall time of one replication.
    pub total_time: f64,
    /// Mean over replications of each observable's sample mean.
    pub sample_means: Vec<f64>,
}

fn summarize(
    outcomes: Vec<(Result<f64>, Vec<f64>)>,
    b_true: f64,
    nu: usize,
    observables: usize,
    tau: f64,
) -> Result<EstimatorResult> {
    let replications = outcomes.len();
    let mut est = Vec::with_capacity(replications);
    let mut failures = 0;
    let mut sums = vec![0.0; observables];
    for (r, means) in &outcomes {
        for (s, m) in sums.iter_mut().zip(means) {
            *s += m;
        }
        match r {
            Ok(v) => est.push(*v),
            Err(_) => failures += 1,
        }
    }
    if est.len() < 2 {
        return Err(domain("fewer than two successful replications"));
    }
    let k = est.len() as f64;
    let mean = est.iter().sum::<f64>() / k;
    let var = est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let std = var.sqrt();
    Ok(EstimatorResult {
        estimate: mean,
        bias: mean - b_true,
        bias_se: std / k.sqrt(),
        std,
        std_se: std / (2.0 * (k - 1.0)).sqrt(),
        nu,
        replications,
        failures,
        total_shots: nu * observables,
        total_time: nu as f64 * tau * observables as f64,
        sample_means: sums.iter().map(|s| s / replications as f64).collect(),
    })
}

/// Replications in index order; each uses its own ChaCha stream.
fn replicate<F>(replications: usize, seed: u64, f: F) -> Vec<(Result<f64>, Vec<f64>)>
where
    F: Fn(&mut ChaCha8Rng) -> (Result<f64>, Vec<f64>) + Sync,
{
    (0..replications)
        .into_par_iter()
        .with_min_len(16)
        .map(|r| f(&mut stream_rng(seed, r as u64)))
        .collect()
}

/// Monte Carlo of the naive `J_y` moment-method estimator for CSS(theta, 0).
pub fn run_naive_css(
    spec: &ProtocolSpec,
    theta: f64,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    spec.validate()?;
    let rho = spec.evolve(&StateSpec {
        kind: StateKind::Css { theta, phi: 0.0 },
        n,
    })?;
    let jy = BornSampler::for_readout(&rho, Readout::Jy)?;
    let nu = spec.nu();
    let out = replicate(replications, seed, |rng| {
        let s = jy.sample(nu, rng);
        (naive_estimator_css(s.mean, spec, theta, n), vec![s.mean])
    });
    summarize(out, spec.b_true, nu, 1, spec.tau)
}

/// Monte Carlo of the CSS ratio estimator with `nu` shots of each of
/// `J_x` and `J_y`.
pub fn run_ratio_css(
    spec: &ProtocolSpec,
    theta: f64,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    spec.validate()?;
    let rho = spec.evolve(&StateSpec {
        kind: StateKind::Css { theta, phi: 0.0 },
        n,
    })?;
    let jx = BornSampler::for_readout(&rho, Readout::Jx)?;
    let jy = BornSampler::for_readout(&rho, Readout::Jy)?;
    let nu = spec.nu();
    let out = replicate(replications, seed, |rng| {
        let sx = jx.sample(nu, rng);
        let sy = jy.sample(nu, rng);
        (
            ratio_estimator_css(&sx, &sy, spec, theta, n),
            vec![sx.mean, sy.mean],
        )
    });
    summarize(out, spec.b_true, nu, 2, spec.tau)
}

/// Monte Carlo of the Phi ratio estimator with `nu` shots of each
/// survival readout.
pub fn run_ratio_phi(
    spec: &ProtocolSpec,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    spec.validate()?;
    let rho = spec.evolve(&StateSpec {
        kind: StateKind::Phi,
        n,
    })?;
    let o = BornSampler::for_readout(&rho, Readout::SurvivalPhi)?;
    let op = BornSampler::for_readout(&rho, Readout::SurvivalPhiPrime)?;
    let nu = spec.nu();
    let out = replicate(replications, seed, |rng| {
        let s = o.sample(nu, rng);
        let sp = op.sample(nu, rng);
        (ratio_estimator_phi(&s, &sp, spec, n), vec![s.mean, sp.mean])
    });
    summarize(out, spec.b_true, nu, 2, spec.tau)
}

/// Phi survival-readout uncertainty and QCRB at the protocol's operating point.
pub fn phi_survival_uncertainty(spec: &ProtocolSpec, j: f64) -> Result<(f64, f64)> {
    let u = phi_uncertainty(
        spec.tau,
        spec.kappa(),
        j,
        spec.nu() as f64 * spec.tau,
        spec.b0,
    )?;
    Ok((u.survival, u.qcrb))
}
