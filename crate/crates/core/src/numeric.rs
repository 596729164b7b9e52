//! Shared numerical kernels: compensated summation, quadrature, divided
//! differences, bracketed root finding and small statistical helpers.

use crate::error::{Error, Result};

/// Kahan-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Evaluates `exp(-z) - 1 + z` for `z >= 0` without cancellation near zero.
pub fn exp_rem(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z < 0.5 {
        // sum_{k>=2} (-z)^k / k!
        let mut term = z * z / 2.0;
        let mut acc = Kahan::new();
        acc.add(term);
        for k in 3..30 {
            term *= -z / k as f64;
            acc.add(term);
            if term.abs() < f64::EPSILON * acc.value().abs() {
                break;
            }
        }
        acc.value()
    } else {
        z + (-z).exp_m1()
    }
}

/// `1 - exp(-z)` for `z >= 0`.
pub fn one_minus_exp_neg(z: f64) -> f64 {
    -(-z).exp_m1()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// `tol` is an absolute tolerance on the whole interval; subdivision stops at
/// depth 48 which is past the resolution of f64 spacing for any sane interval.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_step(
        &mut f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol.max(f64::MIN_POSITIVE),
        48,
    )
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss-Legendre quadrature over `[a, b]`; for smooth integrands.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = Kahan::new();
    for (x, w) in nodes.iter().zip(&weights) {
        acc.add(w * f(mid + half * x));
    }
    half * acc.value()
}

/// Newton divided difference of maximal order over the points `(xs, fs)`,
/// together with an estimate of the rounding floor of that value.
///
/// The floor is `eps * sum_i |f_i / prod_{j != i} (x_i - x_j)|`, the growth of
/// the Lagrange weights applied to machine noise on the samples.
pub fn divided_difference(xs: &[f64], fs: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), fs.len());
    assert!(xs.len() >= 2);
    let n = xs.len();
    let mut col: Vec<f64> = fs.to_vec();
    for order in 1..n {
        for i in 0..n - order {
            col[i] = (col[i + 1] - col[i]) / (xs[i + order] - xs[i]);
        }
    }
    let mut floor = 0.0;
    for i in 0..n {
        let mut denom = 1.0;
        for j in 0..n {
            if j != i {
                denom *= xs[i] - xs[j];
            }
        }
        floor += (fs[i] / denom).abs();
    }
    (col[0], f64::EPSILON * floor)
}

/// Outcome of one divided-difference sign probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignProbe {
    /// Sign matches the completely-monotone-derivative pattern.
    Consistent,
    /// Sign violates the pattern and the value is above the rounding floor.
    Violated,
    /// Value is numerically indistinguishable from zero; no verdict.
    Degenerate,
}

/// Checks the alternating sign pattern of divided differences of orders
/// `1..=max_order` for a Bernstein candidate `f` on the geometric grid
/// `q0 * ratio^i`. Order k must satisfy `sign(D^k f) == (-1)^(k+1)`.
pub fn bernstein_sign_probe(
    f: impl Fn(f64) -> f64,
    q0: f64,
    ratio: f64,
    max_order: usize,
) -> Vec<SignProbe> {
    let xs: Vec<f64> = (0..=max_order).map(|i| q0 * ratio.powi(i as i32)).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    (1..=max_order)
        .map(|k| {
            let (dd, floor) = divided_difference(&xs[..=k], &fs[..=k]);
            if dd.abs() <= 10.0 * floor {
                SignProbe::Degenerate
            } else {
                let expected_positive = k % 2 == 1;
                if (dd > 0.0) == expected_positive {
                    SignProbe::Consistent
                } else {
                    SignProbe::Violated
                }
            }
        })
        .collect()
}

/// Solves `f(x) = target` for strictly monotone `f` on `[lo, hi]` by bisection
/// in log space; the bracket endpoints must straddle the target.
pub fn bisect_monotone_log(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    target: f64,
    rel_tol: f64,
) -> Result<f64> {
    assert!(lo > 0.0 && hi > lo);
    let flo = f(lo);
    let fhi = f(hi);
    let increasing = fhi > flo;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    if !((flo - target) * (fhi - target) <= 0.0) {
        return Err(Error::Bracket(format!(
            "target {target:e} not bracketed on [{lo:e}, {hi:e}] (f: {flo:e}..{fhi:e})"
        )));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m.exp());
        let go_right = if increasing { fm < target } else { fm > target };
        if go_right {
            a = m;
        } else {
            b = m;
        }
        if (b - a) <= rel_tol {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Aitken delta-squared extrapolation of three successive estimates
/// (`g2` the most refined). Falls back to `g2` when already converged.
pub fn aitken(g0: f64, g1: f64, g2: f64) -> f64 {
    let denom = g2 - 2.0 * g1 + g0;
    if denom.abs() <= 1e3 * f64::EPSILON * (g0.abs() + g1.abs() + g2.abs()) {
        return g2;
    }
    g2 - (g2 - g1) * (g2 - g1) / denom
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF; samples must be sorted.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let fx = cdf(x);
        d = d.max((fx - i as f64 / n).abs());
        d = d.max(((i as f64 + 1.0) / n - fx).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic; both inputs sorted. Ties (for
/// instance atoms at zero) are consumed from both samples before the ECDFs
/// are compared.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
