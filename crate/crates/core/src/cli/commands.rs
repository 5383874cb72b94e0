//! Typed parameters and execution of each command.

use std::f64::consts::FRAC_PI_4;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{pretty, Artifact, CliError, CommandName, RunConfig};
use crate::closed_form::{css_qfi_report, phi_uncertainty};
use crate::dicke_engine::{
    build_initial, expect, propagate, qfi_exact, EncodingSpec, Observable, StateKind, StateSpec,
};
use crate::estimation::{
    ratio_css_uncertainty, ratio_phi_uncertainty, run_naive_css, run_ratio_css, run_ratio_phi,
    EstimatorResult, ProtocolSpec, Readout,
};
use crate::gaussian_hp::{self, from_oats};
use crate::noise_model::{kappa_dot_of_t, kappa_of_t, DecayCoefficient, NoiseSpectrum};
use crate::optimizer::{
    fit_scaling, fmt_f64, geometric_grid, run_sweep, sweep_csv, table1_csv, table1_grid, table1_on,
    Metric, Path, Settings, StateFamily, SweepPlan,
};

/// Noise as given in a config; `spectrum` is tabulated on `[0, t_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Noiseless,
    MarkovianLinear {
        gamma: f64,
    },
    ZenoQuadratic {
        kappa0: f64,
        omega_c: f64,
    },
    Spectrum {
        spectrum: NoiseSpectrum,
        t_max: f64,
        #[serde(default = "default_table_points")]
        points: usize,
    },
}

fn default_table_points() -> usize {
    2001
}

impl NoiseConfig {
    pub fn build(&self) -> crate::Result<DecayCoefficient> {
        let d = match *self {
            NoiseConfig::Noiseless => DecayCoefficient::MarkovianLinear { gamma: 0.0 },
            NoiseConfig::MarkovianLinear { gamma } => DecayCoefficient::MarkovianLinear { gamma },
            NoiseConfig::ZenoQuadratic { kappa0, omega_c } => {
                DecayCoefficient::ZenoQuadratic { kappa0, omega_c }
            }
            NoiseConfig::Spectrum {
                spectrum,
                t_max,
                points,
            } => DecayCoefficient::tabulate(spectrum, t_max, points)?,
        };
        d.validate()?;
        Ok(d)
    }
}

fn parse_params<T: DeserializeOwned + Serialize>(params: &Value) -> Result<(T, Value), CliError> {
    let v = if params.is_null() {
        json!({})
    } else {
        params.clone()
    };
    let t: T = serde_path_to_error::deserialize(v)
        .map_err(|e| CliError::Config(format!("at `parameters.{}`: {}", e.path(), e.inner())))?;
    let resolved = serde_json::to_value(&t).expect("parameters serialize");
    Ok((t, resolved))
}

fn csv(
    name: &str,
    header: &[(&str, &str)],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Vec<Artifact> {
    let mut s = header.iter().map(|h| h.0).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    let legend: serde_json::Map<String, Value> = header
        .iter()
        .map(|(k, d)| (k.to_string(), json!(d)))
        .collect();
    vec![
        Artifact {
            name: format!("{name}.csv"),
            contents: s,
        },
        Artifact {
            name: format!("{name}.columns.json"),
            contents: pretty(&Value::Object(legend)),
        },
    ]
}

pub(super) fn execute(cfg: &RunConfig) -> Result<(Value, Vec<Artifact>), CliError> {
    match cfg.command {
        CommandName::Kappa => kappa(&cfg.parameters),
        CommandName::Evolve => evolve(&cfg.parameters),
        CommandName::Qfi => qfi(&cfg.parameters),
        CommandName::Sweep => sweep(&cfg.parameters),
        CommandName::Table1 => table1(&cfg.parameters),
        CommandName::RatioMc => ratio_mc(&cfg.parameters, cfg.seed),
        CommandName::Wigner => wigner(&cfg.parameters),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KappaParams {
    spectrum: NoiseSpectrum,
    #[serde(default)]
    times: Option<Vec<f64>>,
    #[serde(default = "default_t_max")]
    t_max: f64,
    #[serde(default = "default_points")]
    points: usize,
}

fn default_t_max() -> f64 {
    10.0
}

fn default_points() -> usize {
    101
}

fn kappa(params: &Value) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (KappaParams, _) = parse_params(params)?;
    p.spectrum.validate()?;
    let times = match &p.times {
        Some(t) => t.clone(),
        None => {
            if p.points < 2 || !(p.t_max > 0.0) {
                return Err(crate::error::domain(
                    "kappa grid needs t_max > 0 and at least two points",
                )
                .into());
            }
            (0..p.points)
                .map(|i| p.t_max * i as f64 / (p.points - 1) as f64)
                .collect()
        }
    };
    let rows = times
        .iter()
        .map(|&t| {
            Ok(vec![
                fmt_f64(t),
                fmt_f64(kappa_of_t(&p.spectrum, t)?),
                fmt_f64(kappa_dot_of_t(&p.spectrum, t)?),
            ])
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let header = [
        ("t", "time"),
        ("kappa", "decay coefficient kappa(t)"),
        ("kappa_dot", "d kappa / dt"),
    ];
    Ok((resolved, csv("kappa", &header, rows)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvolveParams {
    state: StateSpec,
    b: f64,
    t: f64,
    noise: NoiseConfig,
}

const MOMENTS: [(Observable, &str); 6] = [
    (Observable::Jx, "Jx"),
    (Observable::Jy, "Jy"),
    (Observable::Jz, "Jz"),
    (Observable::Jx2, "Jx2"),
    (Observable::Jy2, "Jy2"),
    (Observable::Jz2, "Jz2"),
];

fn evolve(params: &Value) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (EvolveParams, _) = parse_params(params)?;
    let noise = p.noise.build()?;
    let rho0 = build_initial(&p.state)?;
    let rho = propagate(&rho0, &EncodingSpec::quadratic(p.b, p.t), noise.kappa(p.t))?;
    let rows = MOMENTS
        .iter()
        .map(|&(o, name)| Ok(vec![name.to_string(), fmt_f64(expect(&rho, o)?)]))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut out = csv(
        "moments",
        &[
            ("observable", "collective spin observable"),
            ("value", "expectation value"),
        ],
        rows,
    );
    out.push(Artifact {
        name: "rho.json".into(),
        contents: pretty(&rho.to_json()),
    });
    Ok((resolved, out))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QfiParams {
    state: StateSpec,
    t: f64,
    t_total: f64,
    noise: NoiseConfig,
    #[serde(default)]
    b0: f64,
}

fn qfi(params: &Value) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (QfiParams, _) = parse_params(params)?;
    if !(p.t > 0.0) || !(p.t_total >= p.t) {
        return Err(crate::error::domain("need t > 0 and T >= t").into());
    }
    let noise = p.noise.build()?;
    let kappa = noise.kappa(p.t);
    let rho0 = build_initial(&p.state)?;
    let enc = EncodingSpec {
        b0: p.b0,
        ..EncodingSpec::quadratic(p.b0, p.t)
    };
    let f = qfi_exact(&rho0, &enc, kappa)?.qfi;
    let nu = p.t_total / p.t;
    let mut out = json!({
        "kappa": kappa,
        "qfi_per_shot": f,
        "shots": nu,
        "qfi_total": f * nu,
        "qcrb": 1.0 / (f * nu).sqrt(),
    });
    match p.state.kind {
        StateKind::Css { theta, .. } if kappa == 0.0 => {
            out["closed_form"] =
                serde_json::to_value(css_qfi_report(theta, p.state.n, p.t, p.t_total)?).unwrap();
        }
        StateKind::Phi => {
            out["closed_form"] = serde_json::to_value(phi_uncertainty(
                p.t,
                kappa,
                p.state.n as f64 / 2.0,
                p.t_total,
                p.b0,
            )?)
            .unwrap();
        }
        StateKind::Oats { mu, beta, theta } => {
            if let Ok(gs) = from_oats(mu, beta, p.state.n as f64 / 2.0, theta, kappa) {
                let h = gaussian_hp::qfi(&gs, p.t, p.t_total)?;
                out["gaussian"] = json!({ "qfi_total": h.total, "f_a": h.f_a, "f_b": h.f_b, "validity": gs.validity });
            }
        }
        _ => {}
    }
    Ok((
        resolved,
        vec![Artifact {
            name: "qfi.json".into(),
            contents: pretty(&out),
        }],
    ))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepParams {
    #[serde(default)]
    ns: Option<Vec<usize>>,
    #[serde(default)]
    grid: Option<GridParams>,
    state: StateFamily,
    noise: NoiseConfig,
    #[serde(default = "one")]
    t_total: f64,
    path: Path,
    #[serde(default)]
    metric: Metric,
    #[serde(default)]
    settings: Settings,
    #[serde(default)]
    fit_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridParams {
    n_min: usize,
    n_max: usize,
    points: usize,
}

fn one() -> f64 {
    1.0
}

fn sweep(params: &Value) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (SweepParams, _) = parse_params(params)?;
    let ns = match (&p.ns, p.grid) {
        (Some(ns), None) => ns.clone(),
        (None, Some(g)) => geometric_grid(g.n_min, g.n_max, g.points)?,
        _ => {
            return Err(CliError::Config(
                "parameters: give exactly one of `ns` and `grid`".into(),
            ))
        }
    };
    let plan = SweepPlan {
        ns,
        state: p.state,
        noise: p.noise.build()?,
        t_total: p.t_total,
        path: p.path,
        metric: p.metric,
        settings: p.settings.clone(),
    };
    let points = run_sweep(&plan)?;
    let xy: Vec<(f64, f64)> = points.iter().map(|q| (q.n as f64, q.db_opt)).collect();
    let fit = match fit_scaling(&xy, p.fit_window) {
        Ok(f) => json!({ "fit": f }),
        Err(e) => json!({ "fit": null, "fit_error": e.to_string() }),
    };
    let legend = json!({
        "state": "input state family",
        "regime": "noise regime",
        "N": "number of qubits",
        "tau_opt": "optimal encoding time",
        "theta_opt": "optimal polar angle (empty when not applicable)",
        "db_opt": "optimized uncertainty of b",
        "valid": "Gaussian validity held at the optimum",
    });
    Ok((
        resolved,
        vec![
            Artifact {
                name: "sweep.csv".into(),
                contents: sweep_csv(&points),
            },
            Artifact {
                name: "sweep.columns.json".into(),
                contents: pretty(&legend),
            },
            Artifact {
                name: "sweep.json".into(),
                contents: pretty(&json!({ "points": points, "scaling": fit })),
            },
        ],
    ))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Table1Params {
    #[serde(default = "one")]
    t_total: f64,
    #[serde(default = "one")]
    kappa0: f64,
    #[serde(default = "one")]
    omega_c: f64,
    #[serde(default = "one")]
    gamma: f64,
    #[serde(default)]
    ns: Option<Vec<usize>>,
}

fn table1(params: &Value) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (Table1Params, _) = parse_params(params)?;
    let ns = p.ns.clone().unwrap_or_else(table1_grid);
    let t = table1_on(&ns, p.t_total, p.kappa0, p.omega_c, p.gamma)?;
    let legend = json!({
        "state": "input state",
        "regime": "noise regime",
        "variant": "theta_free or theta_pi4",
        "path": "evaluation path",
        "exponent": "fitted exponent of N",
        "exponent_se": "standard error of the exponent",
        "prefactor_fit": "prefactor at the largest N with the fitted exponent, natural units",
        "prefactor_at_reference_exponent": "prefactor at the largest N with the reference exponent, natural units",
        "reference_constant": "reference constant",
        "reference_exponent": "reference exponent",
        "reference_text": "reference entry",
        "valid_at_n_max": "Gaussian validity at the largest N",
    });
    Ok((
        resolved,
        vec![
            Artifact {
                name: "table1.json".into(),
                contents: pretty(&serde_json::to_value(&t).unwrap()),
            },
            Artifact {
                name: "table1.csv".into(),
                contents: table1_csv(&t),
            },
            Artifact {
                name: "table1.columns.json".into(),
                contents: pretty(&legend),
            },
        ],
    ))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatioMcParams {
    #[serde(default = "default_mc_n")]
    n: usize,
    #[serde(default = "default_theta")]
    theta: f64,
    #[serde(default = "one")]
    tau: f64,
    /// True frequency for the CSS estimators.
    #[serde(default = "default_b_css")]
    b_true: f64,
    /// True frequency for Phi; default puts `J^2 b tau` at 0.3.
    #[serde(default)]
    phi_b_true: Option<f64>,
    #[serde(default = "default_mc_noise")]
    noise: NoiseConfig,
    #[serde(default = "default_nu")]
    nu: usize,
    #[serde(default = "default_reps")]
    replications: usize,
}

fn default_mc_n() -> usize {
    8
}
fn default_theta() -> f64 {
    FRAC_PI_4
}
fn default_b_css() -> f64 {
    0.03
}
fn default_mc_noise() -> NoiseConfig {
    NoiseConfig::MarkovianLinear { gamma: 0.1 }
}
fn default_nu() -> usize {
    10_000
}
fn default_reps() -> usize {
    1000
}

fn ratio_mc(params: &Value, seed: u64) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (RatioMcParams, _) = parse_params(params)?;
    let noise = p.noise.build()?;
    let j = p.n as f64 / 2.0;
    let spec = |b: f64, readout| ProtocolSpec {
        b_true: b,
        b0: 0.0,
        tau: p.tau,
        t_total: p.tau * p.nu as f64,
        readout,
        noise: noise.clone(),
    };
    let kappa = noise.kappa(p.tau);
    let b_phi = p.phi_b_true.unwrap_or(0.3 / (j * j * p.tau));
    let naive = run_naive_css(
        &spec(p.b_true, Readout::Jy),
        p.theta,
        p.n,
        p.replications,
        seed,
    )?;
    let css = run_ratio_css(
        &spec(p.b_true, Readout::Jx),
        p.theta,
        p.n,
        p.replications,
        seed.wrapping_add(1),
    )?;
    let phi = run_ratio_phi(
        &spec(b_phi, Readout::SurvivalPhi),
        p.n,
        p.replications,
        seed.wrapping_add(2),
    )?;
    let nu = p.nu as f64;
    let css_std = ratio_css_uncertainty(p.theta, p.tau, p.b_true, kappa, p.n, nu)?;
    let phi_std = ratio_phi_uncertainty(j, p.tau, b_phi, kappa, nu)?;
    let row = |name: &str, b: f64, r: &EstimatorResult, analytic: Option<f64>| {
        vec![
            name.to_string(),
            fmt_f64(b),
            fmt_f64(r.estimate),
            fmt_f64(r.bias),
            fmt_f64(r.bias_se),
            fmt_f64(r.bias / r.bias_se),
            fmt_f64(r.std),
            fmt_f64(r.std_se),
            analytic.map(fmt_f64).unwrap_or_default(),
            r.failures.to_string(),
        ]
    };
    let rows = vec![
        row("naive_css", p.b_true, &naive, None),
        row("ratio_css", p.b_true, &css, Some(css_std)),
        row("ratio_phi", b_phi, &phi, Some(phi_std)),
    ];
    let header = [
        ("estimator", "naive_css, ratio_css or ratio_phi"),
        ("b_true", "true frequency"),
        ("estimate", "mean estimate over replications"),
        ("bias", "estimate - b_true"),
        ("bias_se", "Monte Carlo standard error of the bias"),
        ("bias_z", "bias / bias_se"),
        ("std", "empirical standard deviation over replications"),
        ("std_se", "standard error of std"),
        (
            "analytic_std",
            "error-propagation prediction (empty for the naive estimator)",
        ),
        ("failures", "replications whose estimate was undefined"),
    ];
    let mut out = csv("bias", &header, rows);
    out.push(Artifact {
        name: "ratio_mc.json".into(),
        contents: pretty(&json!({
            "kappa": kappa,
            "naive_css": naive,
            "ratio_css": css,
            "ratio_phi": phi,
            "analytic_std": { "ratio_css": css_std, "ratio_phi": phi_std },
        })),
    });
    Ok((resolved, out))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WignerParams {
    n: usize,
    mu: f64,
    beta: f64,
    theta: f64,
    #[serde(default)]
    kappa: f64,
    #[serde(default)]
    phase: f64,
    #[serde(default = "default_grid")]
    nx: usize,
    #[serde(default = "default_grid")]
    np: usize,
    #[serde(default = "default_extent")]
    extent: f64,
}

fn default_grid() -> usize {
    128
}
fn default_extent() -> f64 {
    6.0
}

fn wigner(params: &Value) -> Result<(Value, Vec<Artifact>), CliError> {
    let (p, resolved): (WignerParams, _) = parse_params(params)?;
    let gs = from_oats(p.mu, p.beta, p.n as f64 / 2.0, p.theta, p.kappa)?.with_phase(p.phase);
    let grid = gaussian_hp::wigner_grid(&gs, p.nx, p.np, p.extent)?;
    let rows = grid
        .iter()
        .map(|r| r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>());
    let mut out = csv(
        "wigner",
        &[
            ("x", "position quadrature"),
            ("p", "momentum quadrature"),
            ("w", "Wigner function"),
        ],
        rows,
    );
    let norm = gaussian_hp::phase_space_integral(&gs, 256, 8.0, |_, _| 1.0);
    out.push(Artifact {
        name: "wigner.json".into(),
        contents: pretty(&json!({
            "moments": gs.moments(),
            "validity": gs.validity,
            "normalization": norm,
        })),
    });
    Ok((resolved, out))
}
