//! Small numerical kernels shared across modules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a quadrature with its error estimate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Quad {
    pub value: f64,
    pub error: f64,
}

/// 15-point Kronrod rule with the embedded 7-point Gauss estimate,
/// error scaled as in QUADPACK.
pub(crate) fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Quad {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    let mut rabs = rk.abs();
    let mut fv = [0.0; 14];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        rk += WGK[j] * (f1 + f2);
        rabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * rk;
    let mut rasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        rasc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let value = rk * h;
    let rabs = rabs * h.abs();
    let rasc = rasc * h.abs();
    let mut err = ((rk - rg) * h).abs();
    if rasc != 0.0 && err != 0.0 {
        err = rasc * (200.0 * err / rasc).powf(1.5).min(1.0);
    }
    if rabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * rabs);
    }
    Quad { value, error: err }
}

struct Segment {
    a: f64,
    b: f64,
    q: Quad,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.q.error == other.q.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.q.error.total_cmp(&other.q.error)
    }
}

/// Globally adaptive GK15 over consecutive panels given by `edges`.
/// Bisects the panel with the largest error until the total error is below
/// `max(abs_tol, rel_tol * |I|)` or `max_splits` bisections were spent.
pub(crate) fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: &F,
    edges: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_splits: usize,
) -> Quad {
    let mut heap = BinaryHeap::with_capacity(edges.len() + 2 * max_splits.min(1 << 16));
    let (mut value, mut error) = (0.0, 0.0);
    for w in edges.windows(2) {
        if w[1] > w[0] {
            let q = gk15(f, w[0], w[1]);
            value += q.value;
            error += q.error;
            heap.push(Segment {
                a: w[0],
                b: w[1],
                q,
            });
        }
    }
    let mut splits = 0;
    while error > abs_tol.max(rel_tol * value.abs()) && splits < max_splits {
        let Some(seg) = heap.pop() else { break };
        let m = 0.5 * (seg.a + seg.b);
        if m <= seg.a || m >= seg.b {
            heap.push(seg);
            break;
        }
        let left = gk15(f, seg.a, m);
        let right = gk15(f, m, seg.b);
        value += left.value + right.value - seg.q.value;
        error += left.error + right.error - seg.q.error;
        heap.push(Segment {
            a: seg.a,
            b: m,
            q: left,
        });
        heap.push(Segment {
            a: m,
            b: seg.b,
            q: right,
        });
        splits += 1;
    }
    let (mut v, mut e) = (0.0, 0.0);
    for s in heap.iter() {
        v += s.q.value;
        e += s.q.error;
    }
    Quad { value: v, error: e }
}

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
/// Returns `(x_min, f(x_min))`.
pub(crate) fn golden_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a, b);
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Coarse scan on a uniform grid followed by golden-section refinement
/// around the best grid point. Returns `(x_min, f_min, profile)`.
pub(crate) fn scan_then_golden<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    points: usize,
    xtol: f64,
) -> (f64, f64, Vec<(f64, f64)>) {
    let step = (b - a) / (points - 1) as f64;
    let profile: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let x = a + step * i as f64;
            (x, f(x))
        })
        .collect();
    let best = profile
        .iter()
        .enumerate()
        .filter(|(_, p)| p.1.is_finite())
        .min_by(|x, y| x.1 .1.total_cmp(&y.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = a + step * best.saturating_sub(1) as f64;
    let hi = a + step * (best + 1).min(points - 1) as f64;
    let (x, fx) = golden_min(&mut f, lo, hi, xtol);
    let (gx, gf) = profile[best];
    if gf < fx {
        (gx, gf, profile)
    } else {
        (x, fx, profile)
    }
}

/// Bisection root of a continuous `f` with a sign change on `[a, b]`.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// sin(x)/x with the removable point handled.
pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Ordinary least squares `y = a + s x`; returns `(a, s, se_a, se_s)`.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let s = sxy / sxx;
    let a = my - s * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - a - s * xi).powi(2))
        .sum();
    let sigma2 = if x.len() > 2 { rss / (n - 2.0) } else { 0.0 };
    let se_s = (sigma2 / sxx).sqrt();
    let se_a = (sigma2 * (1.0 / n + mx * mx / sxx)).sqrt();
    (a, s, se_a, se_s)
}
