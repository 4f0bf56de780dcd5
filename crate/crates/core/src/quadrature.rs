//! One-dimensional quadrature: adaptive Gauss–Kronrod (7/15) with a global error queue,
//! a semi-infinite variant, and fixed Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Subinterval budget for a single adaptive integration.
pub const MAX_SUBINTERVALS: usize = 8192;

/// Stopping rule: accept once the error estimate is below `max(abs, rel * |I|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn absolute(abs: f64) -> Self {
        Tolerance { abs, rel: 0.0 }
    }

    pub const fn relative(rel: f64) -> Self {
        Tolerance { abs: 0.0, rel }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral<T> {
    pub value: T,
    pub error: T,
    pub evaluations: usize,
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Real> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl<T: Real> Eq for Segment<T> {}

impl<T: Real> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(Ordering::Equal)
    }
}

fn kronrod<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> Segment<T> {
    let half = T::lit(0.5);
    let centre = (a + b) * half;
    let half_len = (b - a) * half;
    let fc = f(centre);
    let mut kron = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half_len * T::lit(x);
        let pair = f(centre - dx) + f(centre + dx);
        kron = kron + pair * T::lit(w);
        if j % 2 == 1 {
            gauss = gauss + pair * T::lit(WG[j / 2]);
        }
    }
    let value = kron * half_len;
    let error = ((kron - gauss) * half_len).abs();
    Segment { a, b, value, error }
}

/// Adaptive integral of `f` over `[a, b]`.
pub fn integrate<T, F>(mut f: F, a: T, b: T, tol: Tolerance) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> T,
{
    if a == b {
        return Ok(Integral {
            value: T::zero(),
            error: T::zero(),
            evaluations: 0,
        });
    }
    if b < a {
        let r = integrate(f, b, a, tol)?;
        return Ok(Integral {
            value: -r.value,
            ..r
        });
    }

    let abs_tol = T::tol(tol.abs);
    let rel_tol = T::tol(tol.rel.max(0.0));
    let roundoff = T::epsilon() * T::lit(50.0);

    let first = kronrod(&mut f, a, b);
    let mut evaluations = 15;
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        let target = abs_tol.max(rel_tol * total.abs()).max(roundoff * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= MAX_SUBINTERVALS {
            return Err(Error::numeric(format!(
                "quadrature on [{a}, {b}] did not converge: error {total_err} > {target}"
            )));
        }
        let worst = heap.pop().expect("non-empty queue");
        let mid = (worst.a + worst.b) * T::lit(0.5);
        if mid <= worst.a || mid >= worst.b {
            // Interval collapsed to adjacent floats; keep its contribution as is.
            total_err = total_err - worst.error;
            continue;
        }
        let left = kronrod(&mut f, worst.a, mid);
        let right = kronrod(&mut f, mid, worst.b);
        evaluations += 30;
        total = total - worst.value + left.value + right.value;
        total_err = total_err - worst.error + left.error + right.error;
        heap.push(left);
        heap.push(right);
    }

    // Re-sum to shed the drift accumulated by incremental updates.
    let value = heap.iter().map(|s| s.value).sum();
    Ok(Integral {
        value,
        error: total_err.max(T::zero()),
        evaluations,
    })
}

/// Adaptive integral over `[a, ∞)` via the substitution `x = a + s t / (1 - t)` with
/// `s = max(|a|, 1)`, so that power-law tails starting far out are still resolved.
pub fn integrate_to_infinity<T, F>(mut f: F, a: T, tol: Tolerance) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> T,
{
    let s = a.abs().max(T::one());
    integrate(
        |t: T| {
            let one_minus = T::one() - t;
            let x = a + s * t / one_minus;
            let v = f(x);
            if v == T::zero() {
                T::zero()
            } else {
                s * v / (one_minus * one_minus)
            }
        },
        T::zero(),
        T::one(),
        tol,
    )
}

/// Adaptive integral over consecutive pieces `[p0, p1], [p1, p2], ...`, splitting the
/// absolute tolerance evenly. Use it to put integrand kinks on piece boundaries.
pub fn integrate_pieces<T, F>(mut f: F, breaks: &[T], tol: Tolerance) -> Result<Integral<T>>
where
    T: Real,
    F: FnMut(T) -> T,
{
    let pieces = breaks.len().saturating_sub(1).max(1);
    let piece_tol = Tolerance {
        abs: tol.abs / pieces as f64,
        rel: tol.rel,
    };
    let mut out = Integral {
        value: T::zero(),
        error: T::zero(),
        evaluations: 0,
    };
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let r = integrate(&mut f, w[0], w[1], piece_tol)?;
        out.value = out.value + r.value;
        out.error = out.error + r.error;
        out.evaluations += r.evaluations;
    }
    Ok(out)
}

/// Fixed `n`-point Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct GaussLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let (nodes, weights) = legendre_nodes(order);
        GaussLegendre {
            nodes: nodes.into_iter().map(T::lit).collect(),
            weights: weights.into_iter().map(T::lit).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights on `[-1, 1]`.
    pub fn rule(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: FnMut(T) -> T>(&self, mut f: F, a: T, b: T) -> T {
        let half = T::lit(0.5);
        let c = (a + b) * half;
        let h = (b - a) * half;
        let mut acc = T::zero();
        for (x, w) in self.rule() {
            acc = acc + w * f(c + h * x);
        }
        acc * h
    }
}

// Newton iteration on P_n from the Tricomi initial guesses.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
