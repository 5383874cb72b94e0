//! Time/angle optimization of protocols, N sweeps, scaling fits and the
//! summary table of asymptotic constants.

use std::f64::consts::{E, FRAC_PI_2, FRAC_PI_4};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{css_noisy_uncertainty, phi_uncertainty, CssMoments, CssUncertaintyForm};
use crate::dicke_engine::{
    build_initial, derivative, observable_matrix, propagate, qfi_exact, trace_product, CMat,
    DickeDensity, EncodingSpec, Observable, StateKind, StateSpec,
};
use crate::error::{domain, Error, Result};
use crate::estimation::{
    error_propagation, ratio_css_from_moments, ratio_css_uncertainty, ratio_phi_uncertainty,
};
use crate::gaussian_hp::{self, from_oats, SqueezingFamily, ValidityReport};
use crate::noise_model::DecayCoefficient;
use crate::numerics::{bisect, ols, scan_then_golden};

/// Largest N handled by the exact Dicke path.
pub const EXACT_MAX_N: usize = 512;

/// Input state of a protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateFamily {
    Css,
    Phi,
    Ku,
    Pe,
    Oats { mu: f64, beta: f64 },
}

impl StateFamily {
    pub fn label(&self) -> String {
        match self {
            StateFamily::Css => "CSS".into(),
            StateFamily::Phi => "Phi".into(),
            StateFamily::Ku => "KU".into(),
            StateFamily::Pe => "PE".into(),
            StateFamily::Oats { mu, beta } => format!("OATS(mu={mu},beta={beta})"),
        }
    }

    /// `(mu, beta)` at spin `j`, `None` for Phi.
    pub fn oats_params(&self, j: f64) -> Option<(f64, f64)> {
        match *self {
            StateFamily::Css => Some(SqueezingFamily::Css.params(j)),
            StateFamily::Ku => Some(SqueezingFamily::Ku.params(j)),
            StateFamily::Pe => Some(SqueezingFamily::Pe.params(j)),
            StateFamily::Oats { mu, beta } => Some((mu, beta)),
            StateFamily::Phi => None,
        }
    }
}

/// How the uncertainty is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    ClosedForm,
    GaussianHp,
    ExactDicke,
}

impl Path {
    pub fn label(self) -> &'static str {
        match self {
            Path::ClosedForm => "closed_form",
            Path::GaussianHp => "gaussian_hp",
            Path::ExactDicke => "exact_dicke",
        }
    }
}

/// Which precision figure is optimized.
///
/// `Bound` is what a concrete readout attains: `J_y` for the CSS on the
/// closed-form and exact paths, the displacement share `F_A` (saturated by
/// the nonlinear readout) on the Gaussian path, the QCRB for Phi and for
/// squeezed states on the exact path. `Qfi` is the full QCRB where it is
/// available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Bound,
    Qfi,
    Ratio,
}

/// Shape of kappa(t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Noiseless,
    Markovian,
    Zeno,
    Tabulated,
}

impl Regime {
    pub fn of(noise: &DecayCoefficient) -> Regime {
        match *noise {
            DecayCoefficient::MarkovianLinear { gamma: 0.0 } => Regime::Noiseless,
            DecayCoefficient::ZenoQuadratic { kappa0: 0.0, .. } => Regime::Noiseless,
            DecayCoefficient::MarkovianLinear { .. } => Regime::Markovian,
            DecayCoefficient::ZenoQuadratic { .. } => Regime::Zeno,
            DecayCoefficient::ExactQuadrature { .. } => Regime::Tabulated,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Noiseless => "noiseless",
            Regime::Markovian => "markovian",
            Regime::Zeno => "zeno",
            Regime::Tabulated => "tabulated",
        }
    }
}

/// Natural precision unit: `sqrt(gamma/T)`, `sqrt(k0 wc / T)`, or
/// `(tau T)^{-1/2}` without noise.
pub fn unit_scale(noise: &DecayCoefficient, t_total: f64, tau: f64) -> f64 {
    match *noise {
        _ if Regime::of(noise) == Regime::Noiseless => 1.0 / (tau * t_total).sqrt(),
        DecayCoefficient::MarkovianLinear { gamma } => (gamma / t_total).sqrt(),
        DecayCoefficient::ZenoQuadratic { kappa0, omega_c } => (kappa0 * omega_c / t_total).sqrt(),
        DecayCoefficient::ExactQuadrature { .. } => 1.0 / t_total.sqrt(),
    }
}

/// One optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub state: StateFamily,
    pub noise: DecayCoefficient,
    pub n: usize,
    pub t_total: f64,
    pub path: Path,
    #[serde(default)]
    pub metric: Metric,
}

impl Problem {
    fn j(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.n < 2 || !(self.t_total > 0.0) {
            return Err(domain("need N >= 2 and T > 0"));
        }
        match (self.state, self.path) {
            (StateFamily::Phi, Path::ClosedForm) => {
                if self.n % 2 == 1 {
                    return Err(Error::UnsupportedState("Phi needs even N".into()));
                }
            }
            (StateFamily::Phi, p) => {
                return Err(Error::UnsupportedState(format!(
                    "Phi is only supported on the closed-form path, not {p:?}"
                )))
            }
            (StateFamily::Css, _) => {}
            (_, Path::ClosedForm) => {
                return Err(Error::UnsupportedState(
                    "squeezed states need the Gaussian or exact path".into(),
                ))
            }
            _ => {}
        }
        if self.path == Path::ExactDicke && self.n > EXACT_MAX_N {
            return Err(domain(format!(
                "exact path is capped at N <= {EXACT_MAX_N}"
            )));
        }
        if self.metric == Metric::Ratio
            && !matches!(self.state, StateFamily::Css | StateFamily::Phi)
        {
            return Err(Error::UnsupportedState(
                "ratio estimator exists for CSS and Phi only".into(),
            ));
        }
        if self.metric == Metric::Qfi
            && self.path == Path::ClosedForm
            && self.state == StateFamily::Css
        {
            return Err(Error::UnsupportedState(
                "no closed-form QFI for the noisy CSS".into(),
            ));
        }
        if self.metric == Metric::Ratio && self.path == Path::GaussianHp {
            return Err(Error::UnsupportedState(
                "ratio estimator is not available on the Gaussian path".into(),
            ));
        }
        Ok(())
    }

    /// Scale of the optimal encoding time.
    pub fn characteristic_time(&self) -> Result<f64> {
        let j = self.j();
        if Regime::of(&self.noise) == Regime::Noiseless {
            return Ok(self.t_total);
        }
        match self.state {
            StateFamily::Phi => match self.noise {
                DecayCoefficient::MarkovianLinear { gamma } => Ok(1.0 / (gamma * j * j)),
                DecayCoefficient::ZenoQuadratic { kappa0, omega_c } => {
                    Ok(1.0 / (kappa0 * omega_c * j))
                }
                DecayCoefficient::ExactQuadrature { ref table, .. } => {
                    let t_max = table[table.len() - 1].0;
                    if j * j * self.noise.kappa(t_max) < 1.0 {
                        return Err(domain("kappa table too short to reach J^2 kappa = 1"));
                    }
                    Ok(bisect(|t| j * j * self.noise.kappa(t) - 1.0, 0.0, t_max))
                }
            },
            _ => {
                let (mu, beta) = self.state.oats_params(j).unwrap();
                let delta = gaussian_hp::oats_delta_eta(mu, beta, j).0;
                gaussian_hp::characteristic_time(&self.noise, j, delta)
            }
        }
    }
}

/// Search controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub scan_points: usize,
    /// Golden-section tolerance on `ln tau` and `theta`.
    pub xtol: f64,
    /// Fixed polar angle instead of optimizing it.
    pub theta: Option<f64>,
    pub tau_bracket: Option<(f64, f64)>,
    pub theta_bracket: Option<(f64, f64)>,
    pub audit_probes: usize,
    pub audit_seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            scan_points: 64,
            xtol: 1e-7,
            theta: None,
            tau_bracket: None,
            theta_bracket: None,
            audit_probes: 100,
            audit_seed: 0,
        }
    }
}

/// Outcome of the random-probe audit around an optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub probes: usize,
    pub violations: usize,
    /// Smallest probe value divided by the optimum.
    pub min_ratio: f64,
}

/// Optimized protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptimum {
    pub tau: f64,
    pub theta: Option<f64>,
    pub db: f64,
    pub valid: bool,
    pub validity: Option<ValidityReport>,
    pub audit: Option<Audit>,
    pub flags: Vec<String>,
}

struct ExactOps {
    jx: CMat,
    jy: CMat,
    jx2: CMat,
    jy2: CMat,
}

/// Objective with per-angle preparation.
struct Evaluator<'a> {
    p: &'a Problem,
    ops: Option<ExactOps>,
}

enum Prepared {
    ClosedCss(f64),
    ClosedPhi,
    Hp {
        mu: f64,
        beta: f64,
        theta: f64,
    },
    Exact {
        rho0: DickeDensity,
        theta: f64,
        css: bool,
    },
}

impl<'a> Evaluator<'a> {
    fn new(p: &'a Problem) -> Result<Self> {
        p.validate()?;
        let ops =
            if p.path == Path::ExactDicke && p.state == StateFamily::Css && p.metric != Metric::Qfi
            {
                Some(ExactOps {
                    jx: observable_matrix(Observable::Jx, p.n)?,
                    jy: observable_matrix(Observable::Jy, p.n)?,
                    jx2: observable_matrix(Observable::Jx2, p.n)?,
                    jy2: observable_matrix(Observable::Jy2, p.n)?,
                })
            } else {
                None
            };
        Ok(Evaluator { p, ops })
    }

    fn prepare(&self, theta: f64) -> Result<Prepared> {
        let p = self.p;
        Ok(match (p.path, p.state) {
            (Path::ClosedForm, StateFamily::Phi) => Prepared::ClosedPhi,
            (Path::ClosedForm, _) => Prepared::ClosedCss(theta),
            (Path::GaussianHp, s) => {
                let (mu, beta) = s.oats_params(p.j()).unwrap();
                Prepared::Hp { mu, beta, theta }
            }
            (Path::ExactDicke, s) => {
                let kind = match s {
                    StateFamily::Css => StateKind::Css { theta, phi: 0.0 },
                    _ => {
                        let (mu, beta) = s.oats_params(p.j()).unwrap();
                        StateKind::Oats { mu, beta, theta }
                    }
                };
                Prepared::Exact {
                    rho0: build_initial(&StateSpec { kind, n: p.n })?,
                    theta,
                    css: s == StateFamily::Css,
                }
            }
        })
    }

    fn eval(&self, prep: &Prepared, tau: f64) -> Result<f64> {
        let p = self.p;
        let kappa = p.noise.kappa(tau);
        let nu = p.t_total / tau;
        match prep {
            Prepared::ClosedCss(theta) => match p.metric {
                Metric::Ratio => ratio_css_uncertainty(*theta, tau, 0.0, kappa, p.n, nu),
                _ => css_noisy_uncertainty(
                    *theta,
                    tau,
                    kappa,
                    p.n,
                    p.t_total,
                    CssUncertaintyForm::Exact,
                ),
            },
            Prepared::ClosedPhi => match p.metric {
                Metric::Ratio => ratio_phi_uncertainty(p.j(), tau, 0.0, kappa, nu),
                _ => Ok(phi_uncertainty(tau, kappa, p.j(), p.t_total, 0.0)?.qcrb),
            },
            Prepared::Hp { mu, beta, theta } => {
                let gs = from_oats(*mu, *beta, p.j(), *theta, kappa)?;
                let f = gaussian_hp::qfi(&gs, tau, p.t_total)?;
                let f = if p.metric == Metric::Qfi {
                    f.total
                } else {
                    f.f_a
                };
                if !(f > 0.0) {
                    return Err(Error::ZeroSignal("vanishing Fisher information".into()));
                }
                Ok(1.0 / f.sqrt())
            }
            Prepared::Exact { rho0, theta, css } => {
                let enc = EncodingSpec::quadratic(0.0, tau);
                if !*css || p.metric == Metric::Qfi {
                    let f = qfi_exact(rho0, &enc, kappa)?.qfi * nu;
                    if !(f > 0.0) {
                        return Err(Error::ZeroSignal("vanishing QFI".into()));
                    }
                    return Ok(1.0 / f.sqrt());
                }
                let ops = self.ops.as_ref().unwrap();
                let rho = propagate(rho0, &enc, kappa)?;
                let m = CssMoments {
                    jx: trace_product(rho.matrix(), &ops.jx).re,
                    jy: trace_product(rho.matrix(), &ops.jy).re,
                    jx2: trace_product(rho.matrix(), &ops.jx2).re,
                    jy2: trace_product(rho.matrix(), &ops.jy2).re,
                };
                match p.metric {
                    Metric::Ratio => ratio_css_from_moments(&m, *theta, tau, p.n, nu),
                    _ => {
                        let slope = trace_product(&derivative(&rho, &enc), &ops.jy).re;
                        error_propagation(m.jy, m.jy2, slope, nu)
                    }
                }
            }
        }
    }

    fn validity(&self, tau: f64, theta: f64) -> Option<ValidityReport> {
        match (self.p.path, self.p.state.oats_params(self.p.j())) {
            (Path::GaussianHp, Some((mu, beta))) => {
                from_oats(mu, beta, self.p.j(), theta, self.p.noise.kappa(tau))
                    .ok()
                    .map(|g| g.validity)
            }
            _ => None,
        }
    }
}

fn log_or_inf(v: Result<f64>) -> f64 {
    match v {
        Ok(x) if x.is_finite() && x > 0.0 => x.ln(),
        _ => f64::INFINITY,
    }
}

/// Brackets `(ln tau_lo, ln tau_hi)` and `(theta_lo, theta_hi)` for a problem.
pub fn brackets(problem: &Problem, settings: &Settings) -> Result<((f64, f64), (f64, f64))> {
    let tau = match settings.tau_bracket {
        Some((a, b)) if a > 0.0 && b > a => (a.ln(), b.min(problem.t_total).ln()),
        Some(_) => return Err(domain("tau bracket must satisfy 0 < lo < hi")),
        None => {
            let tc = problem.characteristic_time()?;
            ((1e-4 * tc.min(problem.t_total)).ln(), problem.t_total.ln())
        }
    };
    let theta = settings.theta_bracket.unwrap_or((1e-3, FRAC_PI_2 - 1e-3));
    Ok((tau, theta))
}

/// Nested search: `theta` outer, `ln tau` inner, each a coarse scan followed
/// by golden-section refinement of `ln db`.
pub fn optimize_protocol(problem: &Problem, settings: &Settings) -> Result<ProtocolOptimum> {
    let ev = Evaluator::new(problem)?;
    let ((lo, hi), (th_lo, th_hi)) = brackets(problem, settings)?;
    let points = settings.scan_points.max(4);
    let inner = |prep: &Prepared| {
        scan_then_golden(
            |lt| log_or_inf(ev.eval(prep, lt.exp())),
            lo,
            hi,
            points,
            settings.xtol,
        )
    };
    let angle_free = problem.state != StateFamily::Phi;
    let theta = match (angle_free, settings.theta) {
        (false, _) => None,
        (true, Some(t)) => Some(t),
        (true, None) => {
            let (t, _, _) = scan_then_golden(
                |th| match ev.prepare(th) {
                    Ok(prep) => inner(&prep).1,
                    Err(_) => f64::INFINITY,
                },
                th_lo,
                th_hi,
                points,
                settings.xtol,
            );
            Some(t)
        }
    };
    let prep = ev.prepare(theta.unwrap_or(0.0))?;
    let (lt, lf, profile) = inner(&prep);
    let to_profile = || {
        profile
            .iter()
            .map(|&(x, f)| (x.exp(), f.exp()))
            .collect::<Vec<_>>()
    };
    if !lf.is_finite() {
        return Err(Error::Bracket {
            message: "objective is not finite anywhere in the tau bracket".into(),
            profile: to_profile(),
        });
    }
    let edge = 1e-6 * (hi - lo);
    if lt - lo < edge {
        return Err(Error::Bracket {
            message: format!("optimum at the lower tau edge {:e}", lo.exp()),
            profile: to_profile(),
        });
    }
    let mut flags = Vec::new();
    if hi - lt < edge {
        flags.push("tau_at_resource_cap".to_string());
    }
    if let (Some(t), None) = (theta, settings.theta) {
        if t - th_lo < 1e-6 || th_hi - t < 1e-6 {
            flags.push("theta_at_bracket_edge".to_string());
        }
    }
    let tau = lt.exp();
    let validity = theta.and_then(|t| ev.validity(tau, t));
    let valid = validity.as_ref().is_none_or(|v| v.valid);
    if !valid {
        flags.push("hp_validity_violated".to_string());
    }
    let mut out = ProtocolOptimum {
        tau,
        theta,
        db: lf.exp(),
        valid,
        validity,
        audit: None,
        flags,
    };
    if settings.audit_probes > 0 {
        let a = audit_with(
            &ev,
            &out,
            (lo, hi),
            (th_lo, th_hi),
            settings.audit_probes,
            settings.audit_seed,
            settings.theta.is_some(),
        );
        if a.violations > 0 {
            out.flags.push("audit_violation".to_string());
        }
        out.audit = Some(a);
    }
    Ok(out)
}

fn audit_with(
    ev: &Evaluator,
    opt: &ProtocolOptimum,
    (lo, hi): (f64, f64),
    (th_lo, th_hi): (f64, f64),
    probes: usize,
    seed: u64,
    theta_fixed: bool,
) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..probes {
        let tau = rng.gen_range(lo..hi).exp();
        let theta = match opt.theta {
            Some(t) if theta_fixed => t,
            Some(_) => rng.gen_range(th_lo..th_hi),
            None => 0.0,
        };
        let Ok(prep) = ev.prepare(theta) else {
            continue;
        };
        let Ok(v) = ev.eval(&prep, tau) else { continue };
        let r = v / opt.db;
        min_ratio = min_ratio.min(r);
        if r < 1.0 - 1e-9 {
            violations += 1;
        }
    }
    Audit {
        probes,
        violations,
        min_ratio,
    }
}

/// Uncertainty of a problem at a given `(tau, theta)`.
pub fn evaluate(problem: &Problem, tau: f64, theta: f64) -> Result<f64> {
    let ev = Evaluator::new(problem)?;
    ev.eval(&ev.prepare(theta)?, tau)
}

/// Post-hoc check that no random probe in the brackets beats the optimum.
pub fn audit(problem: &Problem, settings: &Settings, opt: &ProtocolOptimum) -> Result<Audit> {
    let ev = Evaluator::new(problem)?;
    let (tb, thb) = brackets(problem, settings)?;
    Ok(audit_with(
        &ev,
        opt,
        tb,
        thb,
        settings.audit_probes.max(1),
        settings.audit_seed,
        settings.theta.is_some(),
    ))
}

/// Even integers approximately geometric between `n_min` and `n_max`.
pub fn geometric_grid(n_min: usize, n_max: usize, points: usize) -> Result<Vec<usize>> {
    if n_min < 2 || n_max <= n_min || points < 2 {
        return Err(domain(
            "grid needs 2 <= n_min < n_max and at least two points",
        ));
    }
    let r = (n_max as f64 / n_min as f64).ln() / (points - 1) as f64;
    let mut ns: Vec<usize> = (0..points)
        .map(|i| {
            let v = n_min as f64 * (r * i as f64).exp();
            2 * ((v / 2.0).round() as usize).max(1)
        })
        .collect();
    ns.dedup();
    Ok(ns)
}

/// An N sweep of one (state, noise, path) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub ns: Vec<usize>,
    pub state: StateFamily,
    pub noise: DecayCoefficient,
    pub t_total: f64,
    pub path: Path,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub settings: Settings,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.windows(2).any(|w| w[1] <= w[0]) || self.ns[0] == 0 {
            return Err(domain(
                "N grid must be non-empty, positive and strictly increasing",
            ));
        }
        if !(self.t_total > 0.0) {
            return Err(domain("T must be positive"));
        }
        if self.path == Path::ExactDicke && *self.ns.last().unwrap() > EXACT_MAX_N {
            return Err(domain(format!(
                "exact path is capped at N <= {EXACT_MAX_N}"
            )));
        }
        self.noise.validate()
    }

    fn problem(&self, n: usize) -> Problem {
        Problem {
            state: self.state,
            noise: self.noise.clone(),
            n,
            t_total: self.t_total,
            path: self.path,
            metric: self.metric,
        }
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub state: String,
    pub regime: String,
    pub n: usize,
    pub tau_opt: f64,
    pub theta_opt: Option<f64>,
    pub db_opt: f64,
    pub valid: bool,
    pub flags: Vec<String>,
}

/// Optimizes every N of the plan in parallel; rows come back in N order.
pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<SweepPoint>> {
    plan.validate()?;
    let regime = Regime::of(&plan.noise).label().to_string();
    plan.ns
        .par_iter()
        .map(|&n| {
            let o = optimize_protocol(&plan.problem(n), &plan.settings)?;
            Ok(SweepPoint {
                state: plan.state.label(),
                regime: regime.clone(),
                n,
                tau_opt: o.tau,
                theta_opt: o.theta,
                db_opt: o.db,
                valid: o.valid,
                flags: o.flags,
            })
        })
        .collect()
}

/// `{:.16e}`, i.e. 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with columns `state,regime,N,tau_opt,theta_opt,db_opt,valid`.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("state,regime,N,tau_opt,theta_opt,db_opt,valid\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.state,
            p.regime,
            p.n,
            fmt_f64(p.tau_opt),
            p.theta_opt.map(fmt_f64).unwrap_or_default(),
            fmt_f64(p.db_opt),
            p.valid
        ));
    }
    s
}

/// True when every consecutive value is strictly smaller.
pub fn strictly_decreasing(points: &[SweepPoint]) -> bool {
    points.windows(2).all(|w| w[1].db_opt < w[0].db_opt)
}

/// Minimum number of points for an exponent fit.
pub const MIN_FIT_POINTS: usize = 6;
/// Minimum span in decades of N for an exponent fit.
pub const MIN_FIT_DECADES: f64 = 1.8;

/// Log-log fit `db = A N^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub exponent_se: f64,
    /// `db(N_max) / N_max^p`.
    pub prefactor: f64,
    pub prefactor_se: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub points: usize,
    /// Largest relative deviation of a point from the fitted power law.
    pub residual: f64,
}

/// Default window: the first decade is dropped when at least
/// `MIN_FIT_DECADES` remain afterwards, otherwise everything is used.
pub fn default_window(ns: &[f64]) -> (f64, f64) {
    let lo = ns.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ns.iter().cloned().fold(0.0, f64::max);
    if (hi / lo).log10() >= 1.0 + MIN_FIT_DECADES {
        (10.0 * lo, hi)
    } else {
        (lo, hi)
    }
}

/// OLS on `(ln N, ln db)` restricted to `window` (inclusive).
pub fn fit_scaling(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<ScalingFit> {
    let ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    let (wlo, whi) = window.unwrap_or_else(|| default_window(&ns));
    let sel: Vec<(f64, f64)> = points
        .iter()
        .cloned()
        .filter(|&(n, _)| n >= wlo && n <= whi)
        .collect();
    let (n_min, n_max) = sel.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &(n, _)| {
        (a.min(n), b.max(n))
    });
    let decades = if sel.is_empty() {
        0.0
    } else {
        (n_max / n_min).log10()
    };
    if sel.len() < MIN_FIT_POINTS || decades < MIN_FIT_DECADES - 1e-9 {
        return Err(Error::InsufficientSpan(format!(
            "need >= {MIN_FIT_POINTS} points spanning >= {MIN_FIT_DECADES} decades, got {} points over {decades:.2}",
            sel.len()
        )));
    }
    if sel.iter().any(|&(n, d)| !(n > 0.0 && d > 0.0)) {
        return Err(domain("fit needs positive N and db"));
    }
    let x: Vec<f64> = sel.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = sel.iter().map(|p| p.1.ln()).collect();
    let (a, s, _, se_s) = ols(&x, &y);
    let last = sel
        .iter()
        .cloned()
        .fold((0.0, 0.0), |acc, p| if p.0 > acc.0 { p } else { acc });
    let prefactor = last.1 / last.0.powf(s);
    let residual = sel
        .iter()
        .map(|&(n, d)| ((a + s * n.ln()).exp() / d - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(ScalingFit {
        exponent: s,
        exponent_se: se_s,
        prefactor,
        prefactor_se: prefactor * last.0.ln() * se_s,
        n_min,
        n_max,
        points: sel.len(),
        residual,
    })
}

/// Tabulated asymptotic constant `constant * N^exponent` in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub constant: f64,
    pub exponent: f64,
    pub text: String,
    /// Other closed-form constants for the same entry.
    pub alternatives: Vec<(String, f64)>,
}

/// Reference constants of the summary table.
pub fn reference(state: StateFamily, regime: Regime) -> Option<Reference> {
    let r = |c: f64, p: f64, t: &str, alt: Vec<(&str, f64)>| {
        Some(Reference {
            constant: c,
            exponent: p,
            text: t.to_string(),
            alternatives: alt.into_iter().map(|(a, b)| (a.to_string(), b)).collect(),
        })
    };
    match (state, regime) {
        (StateFamily::Css, Regime::Zeno) => r(
            (6.0 * 3f64.sqrt()).sqrt(),
            -1.25,
            "(6 sqrt3)^(1/2) N^(-5/4)",
            vec![
                (
                    "free_angle_closed_form",
                    3f64.powf(0.75) / 2.0 * 2f64.powf(1.25),
                ),
                ("quarter_angle_closed_form", 2f64.powf(1.5)),
            ],
        ),
        (StateFamily::Css, Regime::Markovian) => r(
            2.0,
            -1.0,
            "2 N^(-1)",
            vec![("free_angle_closed_form", 2f64.sqrt())],
        ),
        (StateFamily::Css, Regime::Noiseless) => r(2.0, -1.5, "2 N^(-3/2)", vec![]),
        (StateFamily::Ku, Regime::Zeno) => r(
            2f64.powf(-0.25) * 3f64.powf(2.0 / 3.0),
            -17.0 / 12.0,
            "2^(-1/4) 3^(2/3) N^(-17/12)",
            vec![],
        ),
        (StateFamily::Ku, Regime::Markovian) | (StateFamily::Pe, Regime::Markovian) => {
            r(2.0, -1.0, "2 N^(-1)", vec![])
        }
        (StateFamily::Pe, Regime::Zeno) => r(
            3f64.powf(1.25) / 2f64.powf(0.75),
            -1.5,
            "3^(5/4)/2^(3/4) N^(-3/2)",
            vec![],
        ),
        (StateFamily::Pe, Regime::Noiseless) => r(4.0, -2.0, "4 N^(-2)", vec![]),
        (StateFamily::Phi, Regime::Zeno) => {
            r(4.0 * E.powf(0.25), -1.5, "4 e^(1/4) N^(-3/2)", vec![])
        }
        (StateFamily::Phi, Regime::Markovian) => {
            r(2.0 * (2.0 * E).sqrt(), -1.0, "2 sqrt(2e) N^(-1)", vec![])
        }
        (StateFamily::Phi, Regime::Noiseless) => r(4.0, -2.0, "4 N^(-2)", vec![]),
        _ => None,
    }
}

/// One (state, regime, angle choice) entry of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub state: String,
    pub regime: String,
    pub path: Path,
    /// `theta_free` or `theta_pi4`.
    pub variant: String,
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
    /// `db(N_max) / unit * N_max^{-p_ref}`.
    pub prefactor_at_reference_exponent: Option<f64>,
    /// Same normalization for the full QFI at the optimized `(tau, theta)`
    /// of the Gaussian path.
    pub full_qfi_prefactor: Option<f64>,
    pub n_max: usize,
    pub db_at_n_max: f64,
    pub reference: Option<Reference>,
    pub valid_at_n_max: bool,
    pub flags: Vec<String>,
    pub sweep: Vec<SweepPoint>,
}

/// A disagreement above 10% between a computed and a reference number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub state: String,
    pub regime: String,
    pub variant: String,
    pub quantity: String,
    pub computed: f64,
    pub reference: f64,
    pub relative_deviation: f64,
    pub alternatives: Vec<(String, f64)>,
}

/// Summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub t_total: f64,
    pub kappa0: f64,
    pub omega_c: f64,
    pub gamma: f64,
    pub ns: Vec<usize>,
    pub cells: Vec<Table1Cell>,
    pub discrepancies: Vec<Discrepancy>,
}

/// Threshold above which computed and reference numbers are reported.
pub const DISCREPANCY_THRESHOLD: f64 = 0.10;

/// Default grid: 13 even N from 2^6 to 2^12.
pub fn table1_grid() -> Vec<usize> {
    geometric_grid(64, 4096, 13).unwrap()
}

/// Builds the table on the default grid.
pub fn table1(t_total: f64, kappa0: f64, omega_c: f64, gamma: f64) -> Result<Table1> {
    table1_on(&table1_grid(), t_total, kappa0, omega_c, gamma)
}

/// Builds the table on a given N grid.
pub fn table1_on(
    ns: &[usize],
    t_total: f64,
    kappa0: f64,
    omega_c: f64,
    gamma: f64,
) -> Result<Table1> {
    if !(t_total > 0.0 && kappa0 > 0.0 && omega_c > 0.0 && gamma > 0.0) {
        return Err(domain("table needs T, kappa0, omega_c, gamma > 0"));
    }
    let regimes = [
        (
            Regime::Zeno,
            DecayCoefficient::ZenoQuadratic { kappa0, omega_c },
        ),
        (
            Regime::Markovian,
            DecayCoefficient::MarkovianLinear { gamma },
        ),
        (
            Regime::Noiseless,
            DecayCoefficient::MarkovianLinear { gamma: 0.0 },
        ),
    ];
    let states = [
        (StateFamily::Css, Path::ClosedForm),
        (StateFamily::Ku, Path::GaussianHp),
        (StateFamily::Pe, Path::GaussianHp),
        (StateFamily::Phi, Path::ClosedForm),
    ];
    let mut jobs = Vec::new();
    for &(state, path) in &states {
        for (regime, noise) in &regimes {
            jobs.push((state, path, *regime, noise.clone(), None));
            if *regime == Regime::Markovian && state != StateFamily::Phi {
                jobs.push((state, path, *regime, noise.clone(), Some(FRAC_PI_4)));
            }
        }
    }
    let cells: Vec<Table1Cell> = jobs
        .into_iter()
        .map(|(state, path, regime, noise, theta)| {
            let settings = Settings {
                theta,
                ..Settings::default()
            };
            let plan = SweepPlan {
                ns: ns.to_vec(),
                state,
                noise: noise.clone(),
                t_total,
                path,
                metric: Metric::Bound,
                settings,
            };
            table1_cell(&plan, regime, theta.is_some())
        })
        .collect::<Result<_>>()?;
    let mut discrepancies = Vec::new();
    for c in &cells {
        let Some(r) = &c.reference else { continue };
        let mut push = |quantity: &str, computed: f64, reference: f64| {
            let dev = (computed - reference).abs() / reference.abs();
            if !(dev <= DISCREPANCY_THRESHOLD) {
                discrepancies.push(Discrepancy {
                    state: c.state.clone(),
                    regime: c.regime.clone(),
                    variant: c.variant.clone(),
                    quantity: quantity.to_string(),
                    computed,
                    reference,
                    relative_deviation: dev,
                    alternatives: r
                        .alternatives
                        .iter()
                        .cloned()
                        .chain(
                            c.full_qfi_prefactor
                                .map(|v| ("full_qfi_at_optimum".to_string(), v)),
                        )
                        .collect(),
                });
            }
        };
        if let Some(p) = c.prefactor_at_reference_exponent {
            push("prefactor", p, r.constant);
        }
        if let Some(f) = &c.fit {
            push("exponent", f.exponent, r.exponent);
        }
    }
    Ok(Table1 {
        t_total,
        kappa0,
        omega_c,
        gamma,
        ns: ns.to_vec(),
        cells,
        discrepancies,
    })
}

fn table1_cell(plan: &SweepPlan, regime: Regime, fixed: bool) -> Result<Table1Cell> {
    let sweep = run_sweep(plan)?;
    let pts: Vec<(f64, f64)> = sweep.iter().map(|p| (p.n as f64, p.db_opt)).collect();
    let (fit, fit_error) = match fit_scaling(&pts, None) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let last = sweep.last().unwrap();
    let unit = unit_scale(&plan.noise, plan.t_total, last.tau_opt);
    let reference = if fixed && plan.state != StateFamily::Css && regime == Regime::Markovian {
        reference(plan.state, regime)
    } else if fixed {
        reference(plan.state, regime).map(|mut r| {
            r.alternatives.clear();
            r
        })
    } else {
        reference(plan.state, regime)
    };
    let p_ref = reference.as_ref().map(|r| r.exponent);
    let prefactor = p_ref.map(|p| last.db_opt / unit / (last.n as f64).powf(p));
    let full_qfi_prefactor = match (plan.path, p_ref, last.theta_opt) {
        (Path::GaussianHp, Some(p), Some(th)) => {
            let prob = Problem {
                metric: Metric::Qfi,
                ..plan.problem(last.n)
            };
            Some(evaluate(&prob, last.tau_opt, th)? / unit / (last.n as f64).powf(p))
        }
        _ => None,
    };
    let mut flags: Vec<String> = sweep.iter().flat_map(|p| p.flags.iter().cloned()).collect();
    flags.sort();
    flags.dedup();
    if !strictly_decreasing(&sweep) {
        flags.push("not_strictly_decreasing".to_string());
    }
    Ok(Table1Cell {
        state: plan.state.label(),
        regime: regime.label().to_string(),
        path: plan.path,
        variant: if fixed { "theta_pi4" } else { "theta_free" }.to_string(),
        fit,
        fit_error,
        prefactor_at_reference_exponent: prefactor,
        full_qfi_prefactor,
        n_max: last.n,
        db_at_n_max: last.db_opt,
        reference,
        valid_at_n_max: last.valid,
        flags,
        sweep,
    })
}

/// CSV of the table: one row per cell.
pub fn table1_csv(t: &Table1) -> String {
    let mut s = String::from(
        "state,regime,variant,path,exponent,exponent_se,prefactor_fit,prefactor_at_reference_exponent,reference_constant,reference_exponent,reference_text,valid_at_n_max\n",
    );
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for c in &t.cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.state,
            c.regime,
            c.variant,
            c.path.label(),
            opt(c.fit.as_ref().map(|f| f.exponent)),
            opt(c.fit.as_ref().map(|f| f.exponent_se)),
            opt(c.fit.as_ref().map(|f| {
                let unit = unit_scale_label(
                    &c.regime,
                    t,
                    c.sweep.last().map(|p| p.tau_opt).unwrap_or(1.0),
                );
                f.prefactor / unit
            })),
            opt(c.prefactor_at_reference_exponent),
            opt(c.reference.as_ref().map(|r| r.constant)),
            opt(c.reference.as_ref().map(|r| r.exponent)),
            c.reference
                .as_ref()
                .map(|r| r.text.clone())
                .unwrap_or_else(|| "-".into()),
            c.valid_at_n_max
        ));
    }
    s
}

fn unit_scale_label(regime: &str, t: &Table1, tau: f64) -> f64 {
    match regime {
        "zeno" => (t.kappa0 * t.omega_c / t.t_total).sqrt(),
        "markovian" => (t.gamma / t.t_total).sqrt(),
        _ => 1.0 / (tau * t.t_total).sqrt(),
    }
}
