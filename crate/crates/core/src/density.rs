//! Radial densities on R^d with heavy (power law) or light (`exp(-ψ)`) tails, their
//! ψ-calculus and the measures of balls, ball complements and boxes under them.
//!
//! Two canonical forms are supported:
//!
//! * heavy tail: `q(x) = C / (1 + |x|^α)` with `α > d`;
//! * light tail: `q(x) = C exp(-ψ(|x|))` with `ψ(z) = (z / scale)^v`, `v > 0`.
//!
//! The light family is subexponential for `v < 1`, exponential for `v = 1` and
//! superexponential for `v > 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::{self, GaussLegendre, Tolerance};
use crate::scalar::Real;

/// Absolute tolerance used for every radial measure.
pub const MEASURE_TOL: f64 = 1e-10;

/// Tail family of a radial density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum TailFamily<T = f64> {
    HeavyTail {
        alpha: T,
    },
    LightTail {
        v: T,
        #[serde(default = "unit_scale")]
        scale: T,
    },
}

fn unit_scale<T: Real>() -> T {
    T::one()
}

fn default_dimension() -> usize {
    2
}

/// Decay class of a density, as used by the connectivity theorems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecayClass {
    HeavyTail,
    Subexponential,
    Exponential,
    Superexponential,
}

impl fmt::Display for DecayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DecayClass::HeavyTail => "heavy-tail",
            DecayClass::Subexponential => "subexponential",
            DecayClass::Exponential => "exponential",
            DecayClass::Superexponential => "superexponential",
        };
        f.write_str(s)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct SpecRepr<T> {
    #[serde(default = "default_dimension")]
    dimension: usize,
    family: TailFamily<T>,
}

/// A normalized radial probability density on R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "SpecRepr<T>",
    into = "SpecRepr<T>",
    bound = "T: Real"
)]
pub struct DensitySpec<T = f64> {
    dimension: usize,
    family: TailFamily<T>,
    norm_constant: T,
    sphere_area: T,
}

impl<T: Real> TryFrom<SpecRepr<T>> for DensitySpec<T> {
    type Error = Error;

    fn try_from(repr: SpecRepr<T>) -> Result<Self> {
        DensitySpec::new(repr.dimension, repr.family)
    }
}

impl<T: Real> From<DensitySpec<T>> for SpecRepr<T> {
    fn from(spec: DensitySpec<T>) -> Self {
        SpecRepr {
            dimension: spec.dimension,
            family: spec.family,
        }
    }
}

/// Surface area `s_{k-1}` of the unit sphere in R^k (`s_0 = 2`).
pub fn unit_sphere_area(k: usize) -> f64 {
    let h = k as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// Volume `ω_k` of the unit ball in R^k.
pub fn unit_ball_volume(k: usize) -> f64 {
    let h = k as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

/// `∫_0^θ sin^k(s) ds`, by the usual reduction formula.
pub fn sin_power_integral<T: Real>(k: usize, theta: T) -> T {
    match k {
        0 => theta,
        1 => T::one() - theta.cos(),
        _ => {
            let kk = T::lit(k as f64);
            let (s, c) = theta.sin_cos();
            -s.powi(k as i32 - 1) * c / kk
                + (kk - T::one()) / kk * sin_power_integral(k - 2, theta)
        }
    }
}

/// Solve `f(z) = y` for a non-decreasing `f` on `[0, ∞)` by bracketing and bisection,
/// to relative tolerance `rel_tol` in `z`.
pub fn invert_increasing<T, F>(f: F, y: T, rel_tol: f64) -> Result<T>
where
    T: Real,
    F: Fn(T) -> T,
{
    let rel = T::tol(rel_tol);
    let mut lo = T::zero();
    let mut hi = T::one();
    let mut grow = 0;
    while f(hi) < y {
        lo = hi;
        hi = hi + hi;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(Error::numeric(format!("no bracket found for inverse at {y}")));
        }
    }
    for _ in 0..400 {
        let mid = (lo + hi) * T::lit(0.5);
        if hi - lo <= rel * hi || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * T::lit(0.5))
}

/// Axis-aligned box `∏ [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox<T = f64> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> AxisBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("box corners must share a positive dimension"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::invalid("degenerate box: every lower bound must be below its upper bound"));
        }
        Ok(AxisBox { lower, upper })
    }

    /// Cube of the given side centred at `centre`.
    pub fn cube(centre: &[T], side: T) -> Result<Self> {
        let h = side * T::lit(0.5);
        Self::new(
            centre.iter().map(|&c| c - h).collect(),
            centre.iter().map(|&c| c + h).collect(),
        )
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> T {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(T::one(), |acc, (&l, &u)| acc * (u - l))
    }

    /// The `2^d` boxes obtained by halving every side.
    pub fn halves(&self) -> Vec<AxisBox<T>> {
        let d = self.dimension();
        let mid: Vec<T> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| (l + u) * T::lit(0.5))
            .collect();
        (0..1usize << d)
            .map(|mask| {
                let mut lower = Vec::with_capacity(d);
                let mut upper = Vec::with_capacity(d);
                for k in 0..d {
                    if mask >> k & 1 == 0 {
                        lower.push(self.lower[k]);
                        upper.push(mid[k]);
                    } else {
                        lower.push(mid[k]);
                        upper.push(self.upper[k]);
                    }
                }
                AxisBox { lower, upper }
            })
            .collect()
    }
}

impl<T: Real> DensitySpec<T> {
    pub fn new(dimension: usize, family: TailFamily<T>) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::invalid(format!("dimension must be at least 2, got {dimension}")));
        }
        let d = dimension as f64;
        let norm = match family {
            TailFamily::HeavyTail { alpha } => {
                let a = alpha.as_f64();
                if !a.is_finite() || a <= d {
                    return Err(Error::invalid(format!(
                        "heavy tail needs alpha > d = {dimension}, got {a}"
                    )));
                }
                // ∫_0^∞ t^{d-1} / (1 + t^α) dt = (π / α) / sin(π d / α)
                a * (std::f64::consts::PI * d / a).sin()
                    / (std::f64::consts::PI * unit_sphere_area(dimension))
            }
            TailFamily::LightTail { v, scale } => {
                let (v, s) = (v.as_f64(), scale.as_f64());
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::invalid(format!("light tail needs v > 0, got {v}")));
                }
                if !s.is_finite() || s <= 0.0 {
                    return Err(Error::invalid(format!("light tail needs scale > 0, got {s}")));
                }
                // ∫_0^∞ t^{d-1} exp(-(t/s)^v) dt = s^d Γ(d/v) / v
                v / (unit_sphere_area(dimension) * s.powf(d) * gamma(d / v))
            }
        };
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::numeric("normalizing constant is not a positive finite number"));
        }
        Ok(DensitySpec {
            dimension,
            family,
            norm_constant: T::lit(norm),
            sphere_area: T::lit(unit_sphere_area(dimension)),
        })
    }

    pub fn heavy(dimension: usize, alpha: T) -> Result<Self> {
        Self::new(dimension, TailFamily::HeavyTail { alpha })
    }

    pub fn light(dimension: usize, v: T, scale: T) -> Result<Self> {
        Self::new(dimension, TailFamily::LightTail { v, scale })
    }

    /// Standard light tail with `ψ(z) = z²`, i.e. `q(x) = π^{-d/2} e^{-|x|²}`.
    pub fn gaussian(dimension: usize) -> Result<Self> {
        Self::light(dimension, T::lit(2.0), T::one())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn family(&self) -> TailFamily<T> {
        self.family
    }

    pub fn norm_constant(&self) -> T {
        self.norm_constant
    }

    pub fn decay_class(&self) -> DecayClass {
        match self.family {
            TailFamily::HeavyTail { .. } => DecayClass::HeavyTail,
            TailFamily::LightTail { v, .. } => {
                if v < T::one() {
                    DecayClass::Subexponential
                } else if v == T::one() {
                    DecayClass::Exponential
                } else {
                    DecayClass::Superexponential
                }
            }
        }
    }

    /// Short label, parseable by [`FromStr`].
    pub fn label(&self) -> String {
        self.family.to_string()
    }

    /// Radial profile `q(radius)`.
    #[inline]
    pub fn eval_density(&self, radius: T) -> T {
        match self.family {
            TailFamily::HeavyTail { alpha } => {
                self.norm_constant / (T::one() + radius.powf(alpha))
            }
            TailFamily::LightTail { v, scale } => {
                self.norm_constant * (-(radius / scale).powf(v)).exp()
            }
        }
    }

    /// Density of `|X|`: `s_{d-1} ρ^{d-1} q(ρ)`.
    #[inline]
    pub fn radial_density(&self, rho: T) -> T {
        self.sphere_area
            * rho.powi(self.dimension as i32 - 1)
            * self.eval_density(rho)
    }

    fn light_params(&self) -> Result<(T, T)> {
        match self.family {
            TailFamily::LightTail { v, scale } => Ok((v, scale)),
            TailFamily::HeavyTail { .. } => {
                Err(Error::invalid("ψ is only defined for light-tail densities"))
            }
        }
    }

    /// `ψ(z) = (z / scale)^v`.
    pub fn psi(&self, z: T) -> Result<T> {
        let (v, scale) = self.light_params()?;
        Ok((z / scale).powf(v))
    }

    pub fn psi_prime(&self, z: T) -> Result<T> {
        let (v, scale) = self.light_params()?;
        Ok(v / scale * (z / scale).powf(v - T::one()))
    }

    /// Exact inverse of ψ on `(0, ∞)`.
    pub fn psi_inverse(&self, y: T) -> Result<T> {
        let (v, scale) = self.light_params()?;
        if !(y > T::zero()) || !y.is_finite() {
            return Err(Error::invalid(format!("ψ^← needs a positive finite argument, got {y}")));
        }
        Ok(scale * y.powf(T::one() / v))
    }

    /// ψ^← by bisection on ψ; agrees with [`psi_inverse`](Self::psi_inverse) to `1e-12`
    /// relative and is what a non-power ψ would use.
    pub fn psi_inverse_bisection(&self, y: T) -> Result<T> {
        let (v, scale) = self.light_params()?;
        if !(y > T::zero()) || !y.is_finite() {
            return Err(Error::invalid(format!("ψ^← needs a positive finite argument, got {y}")));
        }
        invert_increasing(|z: T| (z / scale).powf(v), y, 1e-12)
    }

    /// `ν(B(0, R)^c)`.
    pub fn tail_mass(&self, radius: T) -> Result<T> {
        if !(radius >= T::zero()) {
            return Err(Error::invalid(format!("tail radius must be non-negative, got {radius}")));
        }
        self.tail_mass_with(radius, Tolerance::absolute(MEASURE_TOL))
    }

    pub(crate) fn tail_mass_with(&self, radius: T, tol: Tolerance) -> Result<T> {
        if radius.is_infinite() {
            return Ok(T::zero());
        }
        // Split at the bulk scale so the infinite piece only sees the decaying tail.
        let knee = self.bulk_radius().max(radius);
        let near = quadrature::integrate(|t| self.radial_density(t), radius, knee, tol)?;
        let far = quadrature::integrate_to_infinity(|t| self.radial_density(t), knee, tol)?;
        Ok(clamp_unit(near.value + far.value))
    }

    /// `ν(B(0, R))` computed directly, without going through the complement.
    pub fn ball_mass_centered(&self, radius: T) -> Result<T> {
        if !(radius >= T::zero()) {
            return Err(Error::invalid(format!("ball radius must be non-negative, got {radius}")));
        }
        let r = quadrature::integrate(
            |t| self.radial_density(t),
            T::zero(),
            radius,
            Tolerance::absolute(MEASURE_TOL),
        )?;
        Ok(clamp_unit(r.value))
    }

    /// Surface measure of `{θ ∈ S^{d-1} : t θ ∈ B(y, r)}` for `|y| = rho`.
    fn cap_area(&self, t: T, rho: T, r: T) -> T {
        let d = self.dimension;
        let full = T::lit(unit_sphere_area(d));
        if t + rho <= r {
            return full;
        }
        if t <= T::zero() || rho <= T::zero() {
            return if t < r { full } else { T::zero() };
        }
        let cos = ((t * t + rho * rho - r * r) / (T::lit(2.0) * t * rho))
            .max(-T::one())
            .min(T::one());
        let theta = cos.acos();
        T::lit(unit_sphere_area(d - 1)) * sin_power_integral(d - 2, theta)
    }

    /// `ν(B(y, r))` for any `y` with `|y| = center_radius`.
    pub fn ball_mass(&self, center_radius: T, r: T) -> Result<T> {
        if !(r > T::zero()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {r}")));
        }
        if !(center_radius >= T::zero()) {
            return Err(Error::invalid(format!(
                "centre radius must be non-negative, got {center_radius}"
            )));
        }
        if center_radius == T::zero() {
            return self.ball_mass_centered(r);
        }
        let rho = center_radius;
        let lo = (rho - r).max(T::zero());
        let hi = rho + r;
        let kink = (r - rho).abs();
        let mut breaks = vec![lo];
        if kink > lo && kink < hi {
            breaks.push(kink);
        }
        breaks.push(hi);
        let d = self.dimension as i32;
        let r_val = quadrature::integrate_pieces(
            |t: T| self.eval_density(t) * t.powi(d - 1) * self.cap_area(t, rho, r),
            &breaks,
            Tolerance::absolute(MEASURE_TOL),
        )?;
        Ok(clamp_unit(r_val.value))
    }

    /// `ν(box)` by tensor Gauss–Legendre (8 points per axis) with adaptive halving.
    pub fn cube_mass(&self, region: &AxisBox<T>) -> Result<T> {
        if region.dimension() != self.dimension {
            return Err(Error::invalid(format!(
                "box dimension {} does not match density dimension {}",
                region.dimension(),
                self.dimension
            )));
        }
        let rule = GaussLegendre::<T>::new(8);
        let coarse = self.tensor_gauss(&rule, region);
        let v = self.cube_mass_adaptive(&rule, region, coarse, 0)?;
        Ok(clamp_unit(v))
    }

    fn cube_mass_adaptive(
        &self,
        rule: &GaussLegendre<T>,
        region: &AxisBox<T>,
        coarse: T,
        depth: usize,
    ) -> Result<T> {
        const MAX_DEPTH: usize = 48;
        let halves = region.halves();
        let parts: Vec<T> = halves.iter().map(|h| self.tensor_gauss(rule, h)).collect();
        let refined: T = parts.iter().copied().sum();
        let diff = (refined - coarse).abs();
        if diff <= T::tol(1e-9) * refined.abs() || diff <= T::tol(1e-14) {
            return Ok(refined);
        }
        if depth >= MAX_DEPTH {
            return Err(Error::numeric("box quadrature exceeded its refinement depth"));
        }
        let mut acc = T::zero();
        for (h, c) in halves.iter().zip(parts) {
            acc = acc + self.cube_mass_adaptive(rule, h, c, depth + 1)?;
        }
        Ok(acc)
    }

    fn tensor_gauss(&self, rule: &GaussLegendre<T>, region: &AxisBox<T>) -> T {
        let d = region.dimension();
        let half = T::lit(0.5);
        let centre: Vec<T> = region
            .lower
            .iter()
            .zip(&region.upper)
            .map(|(&l, &u)| (l + u) * half)
            .collect();
        let halfw: Vec<T> = region
            .lower
            .iter()
            .zip(&region.upper)
            .map(|(&l, &u)| (u - l) * half)
            .collect();
        let nodes: Vec<(T, T)> = rule.rule().collect();
        let m = nodes.len();
        let mut idx = vec![0usize; d];
        let mut acc = T::zero();
        loop {
            let mut r2 = T::zero();
            let mut w = T::one();
            for k in 0..d {
                let (x, wk) = nodes[idx[k]];
                let c = centre[k] + halfw[k] * x;
                r2 = r2 + c * c;
                w = w * wk;
            }
            acc = acc + w * self.eval_density(r2.sqrt());
            // odometer over the tensor grid
            let mut k = 0;
            loop {
                if k == d {
                    let jac = halfw.iter().fold(T::one(), |a, &h| a * h);
                    return acc * jac;
                }
                idx[k] += 1;
                if idx[k] < m {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Radius beyond which the density is in its tail regime; used to split integrals.
    pub(crate) fn bulk_radius(&self) -> T {
        match self.family {
            TailFamily::HeavyTail { .. } => T::one(),
            TailFamily::LightTail { v, scale } => {
                let d1 = T::lit(self.dimension as f64 - 1.0);
                scale * (d1 / v).powf(T::one() / v).max(T::one())
            }
        }
    }
}

fn clamp_unit<T: Real>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

impl<T: Real> fmt::Display for TailFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TailFamily::HeavyTail { alpha } => write!(f, "heavy:{alpha}"),
            TailFamily::LightTail { v, scale } => {
                if scale == T::one() && v == T::lit(2.0) {
                    f.write_str("gaussian")
                } else if scale == T::one() && v == T::one() {
                    f.write_str("exponential")
                } else if scale == T::one() {
                    write!(f, "light:{v}")
                } else {
                    write!(f, "light:{v}:{scale}")
                }
            }
        }
    }
}

impl<T: Real> FromStr for TailFamily<T> {
    type Err = Error;

    /// Accepts `gaussian`, `exponential`, `heavy:<alpha>` and `light:<v>[:<scale>]`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |x: &str| -> Result<T> {
            x.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| Error::invalid(format!("`{x}` is not a number in density `{s}`")))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["gaussian"] => Ok(TailFamily::LightTail { v: T::lit(2.0), scale: T::one() }),
            ["exponential"] => Ok(TailFamily::LightTail { v: T::one(), scale: T::one() }),
            ["heavy", a] => Ok(TailFamily::HeavyTail { alpha: num(a)? }),
            ["light", v] => Ok(TailFamily::LightTail { v: num(v)?, scale: T::one() }),
            ["light", v, sc] => Ok(TailFamily::LightTail { v: num(v)?, scale: num(sc)? }),
            _ => Err(Error::invalid(format!(
                "unknown density `{s}` (expected gaussian, exponential, heavy:<alpha> or light:<v>[:<scale>])"
            ))),
        }
    }
}
