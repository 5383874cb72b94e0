//! Exact simulation in the symmetric (Dicke) subspace of N qubits.
//!
//! Basis index `i = 0..=N` corresponds to `m = J - i`. The noise-averaged
//! encoding acts elementwise:
//! `rho_{mm'} -> exp(-i b t (m^k - m'^k)) exp(-kappa (m - m')^2) rho_{mm'}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noise_model::{integrated_phase, NoiseSpectrum, TrajectorySampler, KAPPA_NORM};

pub type CMat = DMatrix<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Initial-state family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateKind {
    /// Coherent spin state pointing along (theta, phi).
    Css { theta: f64, phi: f64 },
    /// `exp(-i theta J_y) exp(-i beta J_z) exp(-i mu J_x^2) |J, J>`.
    Oats { mu: f64, beta: f64, theta: f64 },
    /// `(|J, J> + |J, 0>) / sqrt(2)`.
    Phi,
    /// `(|J, J> + i |J, 0>) / sqrt(2)`.
    PhiPrime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub kind: StateKind,
    /// Number of qubits, N = 2J.
    pub n: usize,
}

/// Density matrix on the (N+1)-dimensional Dicke space.
#[derive(Debug, Clone, PartialEq)]
pub struct DickeDensity {
    n: usize,
    mat: CMat,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct DensityJson {
    J: f64,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl DickeDensity {
    /// Wraps a matrix after checking Hermiticity, trace and positivity.
    pub fn new(n: usize, mat: CMat) -> Result<Self> {
        if mat.nrows() != n + 1 || mat.ncols() != n + 1 {
            return Err(Error::Shape {
                expected: n + 1,
                got: mat.nrows(),
            });
        }
        let rho = DickeDensity { n, mat };
        if rho.hermiticity_defect() > 1e-12 {
            return Err(domain("density matrix is not Hermitian"));
        }
        if (rho.trace() - 1.0).abs() > 1e-12 {
            return Err(domain(format!(
                "density matrix trace {} is not 1",
                rho.trace()
            )));
        }
        if rho.min_eigenvalue() < -1e-10 {
            return Err(domain("density matrix is not positive semidefinite"));
        }
        Ok(rho)
    }

    pub(crate) fn from_raw(n: usize, mat: CMat) -> Self {
        DickeDensity { n, mat }
    }

    pub fn from_pure(n: usize, psi: &DVector<Complex64>) -> Self {
        let norm2: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        let mat = psi * psi.adjoint() / Complex64::new(norm2, 0.0);
        DickeDensity { n, mat }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    /// `rho_{mm'}` addressed by magnetic quantum numbers.
    pub fn element(&self, m: f64, mp: f64) -> Complex64 {
        let i = (self.j() - m).round() as usize;
        let k = (self.j() - mp).round() as usize;
        self.mat[(i, k)]
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.mat - self.mat.adjoint())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = hermitize(&self.mat);
        SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let d = self.dim();
        let rows = |f: &dyn Fn(Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..d)
                .map(|i| (0..d).map(|k| f(self.mat[(i, k)])).collect())
                .collect()
        };
        serde_json::to_value(DensityJson {
            J: self.j(),
            re: rows(&|c| c.re),
            im: rows(&|c| c.im),
        })
        .expect("density serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let parsed: DensityJson =
            serde_json::from_value(value.clone()).map_err(|e| domain(e.to_string()))?;
        let n = (2.0 * parsed.J).round() as usize;
        let d = n + 1;
        if parsed.re.len() != d || parsed.im.len() != d {
            return Err(Error::Shape {
                expected: d,
                got: parsed.re.len(),
            });
        }
        let mut mat = CMat::zeros(d, d);
        for i in 0..d {
            if parsed.re[i].len() != d || parsed.im[i].len() != d {
                return Err(Error::Shape {
                    expected: d,
                    got: parsed.re[i].len(),
                });
            }
            for k in 0..d {
                mat[(i, k)] = Complex64::new(parsed.re[i][k], parsed.im[i][k]);
            }
        }
        DickeDensity::new(n, mat)
    }
}

/// Signal encoding `exp(-i b t J_z^k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub k: u32,
    pub b: f64,
    pub b0: f64,
    pub t: f64,
}

impl EncodingSpec {
    pub fn quadratic(b: f64, t: f64) -> Self {
        EncodingSpec {
            k: 2,
            b,
            b0: 0.0,
            t,
        }
    }

    pub fn delta_b(&self) -> f64 {
        self.b - self.b0
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(domain("nonlinearity order k must be at least 1"));
        }
        if !(self.t >= 0.0) || !self.t.is_finite() || !self.b.is_finite() {
            return Err(domain(format!("invalid encoding {self:?}")));
        }
        Ok(())
    }
}

fn m_of(n: usize, i: usize) -> f64 {
    n as f64 / 2.0 - i as f64
}

fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// `J_z` diagonal.
pub fn jz_diagonal(n: usize) -> Vec<f64> {
    (0..=n).map(|i| m_of(n, i)).collect()
}

/// Real symmetric `J_x` (tridiagonal).
pub fn jx_real(n: usize) -> DMatrix<f64> {
    let j = n as f64 / 2.0;
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for i in 1..=n {
        // <m+1| J_+ |m> with m = J - i.
        let m = m_of(n, i);
        let c = 0.5 * (j * (j + 1.0) - m * (m + 1.0)).sqrt();
        a[(i - 1, i)] = c;
        a[(i, i - 1)] = c;
    }
    a
}

/// Angular-momentum matrices `(J_x, J_y, J_z)`.
pub fn spin_matrices(n: usize) -> (CMat, CMat, CMat) {
    let j = n as f64 / 2.0;
    let d = n + 1;
    let mut jp = CMat::zeros(d, d);
    for i in 1..=n {
        let m = m_of(n, i);
        jp[(i - 1, i)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm) * Complex64::new(0.5, 0.0);
    let jy = (&jp - &jm) * Complex64::new(0.0, -0.5);
    let jz = CMat::from_diagonal(&DVector::from_iterator(
        d,
        jz_diagonal(n).into_iter().map(|m| Complex64::new(m, 0.0)),
    ));
    (jx, jy, jz)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    for i in 1..=n {
        v[i] = v[i - 1] + (i as f64).ln();
    }
    v
}

/// CSS amplitudes `sqrt(C(N, J+m)) cos^{J+m}(theta/2) sin^{J-m}(theta/2) e^{-i m phi}`,
/// evaluated in log form.
pub fn css_amplitudes(n: usize, theta: f64, phi: f64) -> DVector<Complex64> {
    let lf = ln_factorials(n);
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    DVector::from_iterator(
        n + 1,
        (0..=n).map(|i| {
            let up = n - i;
            let down = i;
            let pow = |x: f64, e: usize| -> Option<f64> {
                if e == 0 {
                    Some(0.0)
                } else if x == 0.0 {
                    None
                } else {
                    Some(e as f64 * x.abs().ln())
                }
            };
            let sign = if (c < 0.0 && up % 2 == 1) ^ (s < 0.0 && down % 2 == 1) {
                -1.0
            } else {
                1.0
            };
            match (pow(c, up), pow(s, down)) {
                (Some(a), Some(b)) => {
                    let mag = (0.5 * (lf[n] - lf[up] - lf[down]) + a + b).exp();
                    Complex64::from_polar(sign * mag, -m_of(n, i) * phi)
                }
                _ => C0,
            }
        }),
    )
}

/// Applies `exp(-i f(lambda))` in the eigenbasis of the real symmetric `J_x`.
fn apply_jx_function(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    psi: &DVector<Complex64>,
    f: impl Fn(f64) -> f64,
) -> DVector<Complex64> {
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let mut coeff = v.transpose() * psi;
    for (c, &l) in coeff.iter_mut().zip(eig.eigenvalues.iter()) {
        *c *= Complex64::from_polar(1.0, -f(l));
    }
    v * coeff
}

fn apply_jz_phase(psi: &mut DVector<Complex64>, n: usize, angle: f64) {
    for (i, c) in psi.iter_mut().enumerate() {
        *c *= Complex64::from_polar(1.0, -angle * m_of(n, i));
    }
}

/// OATS amplitudes `exp(-i theta J_y) exp(-i beta J_z) exp(-i mu J_x^2) |J, J>`.
pub fn oats_amplitudes(n: usize, mu: f64, beta: f64, theta: f64) -> DVector<Complex64> {
    let eig = SymmetricEigen::new(jx_real(n));
    let mut psi = DVector::from_element(n + 1, C0);
    psi[0] = Complex64::new(1.0, 0.0);
    let mut psi = apply_jx_function(&eig, &psi, |l| mu * l * l);
    apply_jz_phase(&mut psi, n, beta);
    // exp(-i theta J_y) = exp(-i pi/2 J_z) exp(-i theta J_x) exp(i pi/2 J_z)
    let half_pi = std::f64::consts::FRAC_PI_2;
    apply_jz_phase(&mut psi, n, -half_pi);
    let mut psi = apply_jx_function(&eig, &psi, |l| theta * l);
    apply_jz_phase(&mut psi, n, half_pi);
    psi
}

/// Builds the initial pure state.
pub fn build_initial(spec: &StateSpec) -> Result<DickeDensity> {
    let n = spec.n;
    if n < 1 {
        return Err(domain("need at least one qubit"));
    }
    let psi = match spec.kind {
        StateKind::Css { theta, phi } => {
            if !(0.0..=std::f64::consts::PI).contains(&theta) || !phi.is_finite() {
                return Err(domain(format!(
                    "CSS angles out of range: theta={theta}, phi={phi}"
                )));
            }
            css_amplitudes(n, theta, phi)
        }
        StateKind::Oats { mu, beta, theta } => {
            if !mu.is_finite() || !beta.is_finite() || !theta.is_finite() {
                return Err(domain("OATS parameters must be finite"));
            }
            oats_amplitudes(n, mu, beta, theta)
        }
        StateKind::Phi | StateKind::PhiPrime => {
            if n % 2 == 1 {
                return Err(Error::UnsupportedState(format!(
                    "Phi states need integer J (even N), got N={n}"
                )));
            }
            let mut psi = DVector::from_element(n + 1, C0);
            let r = std::f64::consts::FRAC_1_SQRT_2;
            psi[0] = Complex64::new(r, 0.0);
            psi[n / 2] = if spec.kind == StateKind::Phi {
                Complex64::new(r, 0.0)
            } else {
                Complex64::new(0.0, r)
            };
            psi
        }
    };
    Ok(DickeDensity::from_pure(n, &psi))
}

fn mk(m: f64, k: u32) -> f64 {
    m.powi(k as i32)
}

/// Noise-averaged encoding with decay coefficient `kappa`.
pub fn propagate(rho0: &DickeDensity, enc: &EncodingSpec, kappa: f64) -> Result<DickeDensity> {
    enc.validate()?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(domain(format!("kappa must be non-negative, got {kappa}")));
    }
    let n = rho0.n;
    let ms = jz_diagonal(n);
    let bt = enc.b * enc.t;
    let mat = CMat::from_fn(n + 1, n + 1, |i, k| {
        if i == k {
            return rho0.mat[(i, k)];
        }
        let dm = ms[i] - ms[k];
        let phase = -bt * (mk(ms[i], enc.k) - mk(ms[k], enc.k));
        rho0.mat[(i, k)] * Complex64::from_polar((-kappa * dm * dm).exp(), phase)
    });
    Ok(DickeDensity::from_raw(n, mat))
}

/// `d rho_bar / d b = -i t (m^k - m'^k) rho_bar`.
pub fn derivative(rho_bar: &DickeDensity, enc: &EncodingSpec) -> CMat {
    let ms = jz_diagonal(rho_bar.n);
    CMat::from_fn(rho_bar.dim(), rho_bar.dim(), |i, k| {
        rho_bar.mat[(i, k)] * (-I * enc.t * (mk(ms[i], enc.k) - mk(ms[k], enc.k)))
    })
}

/// Measured observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "eta", rename_all = "snake_case")]
pub enum Observable {
    Jx,
    Jy,
    Jz,
    Jx2,
    Jy2,
    Jz2,
    Jz4,
    /// `2 |Phi><Phi| - 1`.
    SurvivalPhi,
    /// `2 |Phi'><Phi'| - 1`.
    SurvivalPhiPrime,
    /// `exp(i eta J_x^2 / 2) J_y exp(-i eta J_x^2 / 2)`.
    NonlinearReadout(f64),
}

/// Dense matrix of an observable on N qubits.
pub fn observable_matrix(obs: Observable, n: usize) -> Result<CMat> {
    let (jx, jy, jz) = spin_matrices(n);
    let d = n + 1;
    Ok(match obs {
        Observable::Jx => jx,
        Observable::Jy => jy,
        Observable::Jz => jz,
        Observable::Jx2 => &jx * &jx,
        Observable::Jy2 => &jy * &jy,
        Observable::Jz2 => &jz * &jz,
        Observable::Jz4 => {
            let z2 = &jz * &jz;
            &z2 * &z2
        }
        Observable::SurvivalPhi | Observable::SurvivalPhiPrime => {
            if n % 2 == 1 {
                return Err(Error::UnsupportedState(
                    "survival readout needs integer J (even N)".into(),
                ));
            }
            let kind = if obs == Observable::SurvivalPhi {
                StateKind::Phi
            } else {
                StateKind::PhiPrime
            };
            let proj = build_initial(&StateSpec { kind, n })?.mat;
            proj * Complex64::new(2.0, 0.0) - CMat::identity(d, d)
        }
        Observable::NonlinearReadout(eta) => {
            let eig = SymmetricEigen::new(jx_real(n));
            let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
            let phases = DVector::from_iterator(
                d,
                eig.eigenvalues
                    .iter()
                    .map(|l| Complex64::from_polar(1.0, -0.5 * eta * l * l)),
            );
            let u = &v * CMat::from_diagonal(&phases) * v.transpose();
            hermitize(&(u.adjoint() * jy * u))
        }
    })
}

/// `Tr[A B]` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let mut acc = C0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// `Tr[rho O]` for a prepared observable matrix.
pub fn expect_matrix(rho: &DickeDensity, obs: &CMat) -> Result<f64> {
    if obs.nrows() != rho.dim() || obs.ncols() != rho.dim() {
        return Err(Error::Shape {
            expected: rho.dim(),
            got: obs.nrows(),
        });
    }
    Ok(trace_product(&rho.mat, obs).re)
}

/// `Tr[rho O]`.
pub fn expect(rho: &DickeDensity, obs: Observable) -> Result<f64> {
    expect_matrix(rho, &observable_matrix(obs, rho.n)?)
}

/// Per-shot QFI and the symmetric logarithmic derivative.
#[derive(Debug, Clone)]
pub struct QfiResult {
    pub qfi: f64,
    pub sld: CMat,
}

/// QFI and SLD from `rho` and its parameter derivative. Eigenpairs with
/// `p_i + p_j <= 1e-12 max p` are skipped.
pub fn qfi_from_derivative(rho: &CMat, drho: &CMat) -> QfiResult {
    let eig = SymmetricEigen::new(hermitize(rho));
    let p = &eig.eigenvalues;
    let v = &eig.eigenvectors;
    let eps = 1e-12 * p.iter().cloned().fold(0.0, f64::max);
    let d = v.adjoint() * drho * v;
    let dim = p.len();
    let mut l = CMat::zeros(dim, dim);
    let mut qfi = 0.0;
    for i in 0..dim {
        for k in 0..dim {
            let s = p[i] + p[k];
            if s > eps {
                l[(i, k)] = d[(i, k)] * Complex64::new(2.0 / s, 0.0);
                qfi += 2.0 * d[(i, k)].norm_sqr() / s;
            }
        }
    }
    QfiResult {
        qfi,
        sld: v * l * v.adjoint(),
    }
}

/// Per-shot QFI of `b -> rho_bar(b)` at the operating point `enc.b0`.
pub fn qfi_exact(rho0: &DickeDensity, enc: &EncodingSpec, kappa: f64) -> Result<QfiResult> {
    let at = EncodingSpec { b: enc.b0, ..*enc };
    let rho = propagate(rho0, &at, kappa)?;
    let drho = derivative(&rho, &at);
    Ok(qfi_from_derivative(&rho.mat, &drho))
}

/// `||d rho - (L rho + rho L)/2||_F / ||d rho||_F`.
pub fn sld_residual(rho: &CMat, drho: &CMat, sld: &CMat) -> f64 {
    let r = drho - (sld * rho + rho * sld) * Complex64::new(0.5, 0.0);
    r.norm() / drho.norm().max(f64::MIN_POSITIVE)
}

/// Monte Carlo trajectory average with elementwise standard errors.
#[derive(Debug, Clone)]
pub struct TrajectoryAverage {
    pub t: f64,
    pub mean: DickeDensity,
    pub stderr_re: DMatrix<f64>,
    pub stderr_im: DMatrix<f64>,
    pub trajectories: usize,
}

/// Running sums of `X = exp(-i c dm Phi)` for each `dm = 0..=N`.
#[derive(Clone)]
struct PhaseSums {
    count: usize,
    /// Per dm: [Re X, Im X, (Re X)^2, (Im X)^2, Re X Im X].
    s: Vec<[f64; 5]>,
}

impl PhaseSums {
    fn new(n: usize) -> Self {
        PhaseSums {
            count: 0,
            s: vec![[0.0; 5]; n + 1],
        }
    }

    fn push(&mut self, phi: f64) {
        let c = KAPPA_NORM.sqrt();
        for (dm, acc) in self.s.iter_mut().enumerate() {
            let (sn, cs) = (c * dm as f64 * phi).sin_cos();
            let (re, im) = (cs, -sn);
            acc[0] += re;
            acc[1] += im;
            acc[2] += re * re;
            acc[3] += im * im;
            acc[4] += re * im;
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &PhaseSums) {
        self.count += other.count;
        for (a, b) in self.s.iter_mut().zip(&other.s) {
            for q in 0..5 {
                a[q] += b[q];
            }
        }
    }

    fn finish(&self, rho0: &DickeDensity, enc: &EncodingSpec) -> TrajectoryAverage {
        let n = rho0.n;
        let d = n + 1;
        let ms = jz_diagonal(n);
        let m = self.count as f64;
        let bt = enc.b * enc.t;
        let mut mean = CMat::zeros(d, d);
        let mut se_re = DMatrix::zeros(d, d);
        let mut se_im = DMatrix::zeros(d, d);
        for i in 0..d {
            for k in 0..d {
                let dm = ms[i] - ms[k];
                let w = rho0.mat[(i, k)]
                    * Complex64::from_polar(1.0, -bt * (mk(ms[i], enc.k) - mk(ms[k], enc.k)));
                let acc = &self.s[dm.abs().round() as usize];
                let sign = if dm < 0.0 { -1.0 } else { 1.0 };
                let (xr, xi) = (acc[0] / m, sign * acc[1] / m);
                mean[(i, k)] = w * Complex64::new(xr, xi);
                if self.count > 1 && dm != 0.0 {
                    let vr = (acc[2] / m - xr * xr).max(0.0) * m / (m - 1.0);
                    let vi = (acc[3] / m - xi * xi).max(0.0) * m / (m - 1.0);
                    let cov = (sign * acc[4] / m - xr * xi) * m / (m - 1.0);
                    let var_re = w.re * w.re * vr + w.im * w.im * vi - 2.0 * w.re * w.im * cov;
                    let var_im = w.re * w.re * vi + w.im * w.im * vr + 2.0 * w.re * w.im * cov;
                    se_re[(i, k)] = (var_re.max(0.0) / m).sqrt();
                    se_im[(i, k)] = (var_im.max(0.0) / m).sqrt();
                }
            }
        }
        TrajectoryAverage {
            t: enc.t,
            mean: DickeDensity::from_raw(n, mean),
            stderr_re: se_re,
            stderr_im: se_im,
            trajectories: self.count,
        }
    }
}

/// Average of `U_xi rho U_xi^dagger` over given integrated noise phases
/// `Phi = int_0^t xi`.
pub fn average_over_phases(
    rho0: &DickeDensity,
    enc: &EncodingSpec,
    phases: &[f64],
) -> Result<TrajectoryAverage> {
    enc.validate()?;
    if phases.is_empty() {
        return Err(domain("need at least one trajectory"));
    }
    let mut sums = PhaseSums::new(rho0.n);
    for &p in phases {
        sums.push(p);
    }
    Ok(sums.finish(rho0, enc))
}

const CHUNK: usize = 256;

/// Trajectory averages at several encoding times from one set of `m`
/// sampled noise realizations. `dt` defaults to
/// `min(t_max / 1000, 0.05 / omega_c)`.
pub fn trajectory_average_at(
    rho0: &DickeDensity,
    enc: &EncodingSpec,
    noise: &NoiseSpectrum,
    times: &[f64],
    m: usize,
    seed: u64,
    dt: Option<f64>,
) -> Result<Vec<TrajectoryAverage>> {
    enc.validate()?;
    if m < 1 || times.is_empty() {
        return Err(domain("need at least one trajectory and one time"));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    if !(t_max > 0.0) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(domain("times must be non-negative with a positive maximum"));
    }
    let dt = dt.unwrap_or_else(|| {
        let base = t_max / 1000.0;
        noise.cutoff().map_or(base, |wc| base.min(0.05 / wc))
    });
    let sampler = TrajectorySampler::new(noise, t_max, dt)?;
    let chunks = m.div_ceil(CHUNK);
    let partial: Vec<Result<Vec<PhaseSums>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sums = vec![PhaseSums::new(rho0.n); times.len()];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(m) {
                let traj = sampler.sample(seed, idx as u64);
                for (s, &t) in sums.iter_mut().zip(times) {
                    s.push(integrated_phase(&traj, t)?);
                }
            }
            Ok(sums)
        })
        .collect();
    let mut total = vec![PhaseSums::new(rho0.n); times.len()];
    for p in partial {
        for (acc, s) in total.iter_mut().zip(p?.iter()) {
            acc.merge(s);
        }
    }
    Ok(total
        .iter()
        .zip(times)
        .map(|(s, &t)| s.finish(rho0, &EncodingSpec { t, ..*enc }))
        .collect())
}

/// Trajectory average at `enc.t`.
pub fn trajectory_average(
    rho0: &DickeDensity,
    enc: &EncodingSpec,
    noise: &NoiseSpectrum,
    m: usize,
    seed: u64,
) -> Result<TrajectoryAverage> {
    Ok(trajectory_average_at(rho0, enc, noise, &[enc.t], m, seed, None)?.remove(0))
}
