//! Analytic side of the connectivity dichotomy: threshold radii, the superexponential
//! threshold `τ(n)`, Poisson–Chernoff bounds, the expected number of isolated vertices
//! and the per-regime disconnection prediction.
//!
//! Intensities enter through `ln n`, so `n` is taken as `f64` even when the geometry runs
//! in `f32`; `n = e^{200}` is fine.

use serde::{Deserialize, Serialize};

use crate::density::{DecayClass, DensitySpec, TailFamily};
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::scalar::Real;

/// Smallest intensity for which `ln ln n` is comfortably positive.
pub const MIN_LIGHT_TAIL_N: f64 = 16.0;

/// Finite-n stand-ins for the asymptotic `o(·)` / `ω(·)` / `O(1)` conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConstants {
    /// `r < c_lo τ` counts as `r = o(τ)`.
    pub c_lo: f64,
    /// `r > c_hi τ` counts as `r = ω(τ)`.
    pub c_hi: f64,
    /// `r ψ'(ψ^←(ln n)) <= k_exp` counts as `O(1)` in the exponential regime.
    pub k_exp: f64,
}

impl Default for ClassifyConstants {
    fn default() -> Self {
        ClassifyConstants {
            c_lo: 0.5,
            c_hi: 2.0,
            k_exp: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    DisconnectedWhp,
    ConcentrationRegime,
    Untheorized,
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Prediction::DisconnectedWhp => "disconnected_whp",
            Prediction::ConcentrationRegime => "concentration",
            Prediction::Untheorized => "untheorized",
        })
    }
}

/// Conditions that held only approximately or not at all for the requested tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// A radius argument was non-positive, so the radius was set to 0.
    PreAsymptotic,
    /// `R^(1) < R^(0)` for this spec and `n`.
    RadiiInverted,
    /// `ψ'(ψ^←(ln n)) γ r <= 1`.
    SideConditionViolated,
    /// `r > 1`, outside the graph model's assumption.
    RadiusAboveOne,
}

/// `w(n) = sqrt(ln ln n)`.
pub fn w_n(n: f64) -> Result<f64> {
    check_light_n(n)?;
    Ok(n.ln().ln().sqrt())
}

fn check_light_n(n: f64) -> Result<()> {
    if !(n >= MIN_LIGHT_TAIL_N) {
        return Err(Error::invalid(format!(
            "light-tail thresholds need n >= {MIN_LIGHT_TAIL_N}, got {n}"
        )));
    }
    Ok(())
}

fn require_light<T: Real>(spec: &DensitySpec<T>) -> Result<T> {
    match spec.family() {
        TailFamily::LightTail { v, .. } => Ok(v),
        TailFamily::HeavyTail { .. } => Err(Error::invalid("operation needs a light-tail density")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LightTailRadii<T = f64> {
    pub r0: T,
    pub r1: T,
    /// `ψ(R^(1))`.
    pub psi_r1: T,
    pub w_n: T,
    pub pre_asymptotic: bool,
}

impl<T: Real> LightTailRadii<T> {
    pub fn ordered(&self) -> bool {
        self.r0 <= self.r1
    }
}

/// `ψ(R^(0)) = ln n` and
/// `ψ(R^(1)) = ln n + (d-1) ln ψ^←(ln n) - ln ψ'(ψ^←(ln n)) - w(n)`.
pub fn light_tail_radii<T: Real>(spec: &DensitySpec<T>, n: f64) -> Result<LightTailRadii<T>> {
    require_light(spec)?;
    check_light_n(n)?;
    let log_n = T::lit(n.ln());
    let w = T::lit(w_n(n)?);
    let d = T::lit(spec.dimension() as f64);
    let r0 = spec.psi_inverse(log_n)?;
    let psi_r1 = log_n + (d - T::one()) * r0.ln() - spec.psi_prime(r0)?.ln() - w;
    let (r1, pre_asymptotic) = if psi_r1 > T::zero() {
        (spec.psi_inverse(psi_r1)?, false)
    } else {
        (T::zero(), true)
    };
    Ok(LightTailRadii {
        r0,
        r1,
        psi_r1,
        w_n: w,
        pre_asymptotic,
    })
}

/// `R^(0) = R^(1) = n^{1/(α - d/2)}`.
pub fn heavy_tail_radii<T: Real>(spec: &DensitySpec<T>, n: f64) -> Result<(T, T)> {
    let TailFamily::HeavyTail { alpha } = spec.family() else {
        return Err(Error::invalid("heavy_tail_radii needs a heavy-tail density"));
    };
    if !(n > 0.0) {
        return Err(Error::invalid(format!("intensity must be positive, got {n}")));
    }
    let exponent = 1.0 / (alpha.as_f64() - spec.dimension() as f64 / 2.0);
    let r = T::lit((exponent * n.ln()).exp());
    Ok((r, r))
}

/// `τ(n) = ln ln n / ψ'(ψ^←(ln n))`, defined for superexponential decay only.
pub fn tau<T: Real>(spec: &DensitySpec<T>, n: f64) -> Result<T> {
    let v = require_light(spec)?;
    if !(v > T::one()) {
        return Err(Error::invalid(format!(
            "τ(n) exists only for superexponential decay (v > 1), got v = {v}"
        )));
    }
    check_light_n(n)?;
    let log_n = T::lit(n.ln());
    Ok(log_n.ln() / spec.psi_prime(spec.psi_inverse(log_n)?)?)
}

/// `ψ'(ψ^←(ln n))`, the inverse length scale of the density at `R^(0)`.
pub fn psi_prime_at_r0<T: Real>(spec: &DensitySpec<T>, n: f64) -> Result<T> {
    require_light(spec)?;
    if !(n > 1.0) {
        return Err(Error::invalid(format!("need n > 1, got {n}")));
    }
    spec.psi_prime(spec.psi_inverse(T::lit(n.ln()))?)
}

/// `H(x) = 1 - x + x ln x`, `H(0) = 1`.
pub fn chernoff_h<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero()) {
        return Err(Error::invalid(format!("H(x) needs x >= 0, got {x}")));
    }
    if x == T::zero() {
        return Ok(T::one());
    }
    Ok(T::one() - x + x * x.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    /// `P(N >= k)`, `k >= n`.
    Upper,
    /// `P(N <= k)`, `k <= n`.
    Lower,
}

/// `exp(-n H(k/n))`, the Chernoff bound on a Poisson(n) tail beyond `k`.
pub fn poisson_tail_bound<T: Real>(n: T, k: T, side: TailSide) -> Result<T> {
    if !(n > T::zero()) || !(k >= T::zero()) {
        return Err(Error::invalid(format!("need n > 0 and k >= 0, got n = {n}, k = {k}")));
    }
    match side {
        TailSide::Upper if k < n => {
            return Err(Error::invalid(format!("upper tail bound needs k >= n ({k} < {n})")))
        }
        TailSide::Lower if k > n => {
            return Err(Error::invalid(format!("lower tail bound needs k <= n ({k} > {n})")))
        }
        _ => {}
    }
    Ok((-n * chernoff_h(k / n)?).exp())
}

/// Expected number of isolated vertices of `G(P_n, r)` inside `B(0, R)`:
/// `n s_{d-1} ∫_0^R exp(-n ν(B(ρ e_1, r))) q(ρ) ρ^{d-1} dρ` (Mecke formula).
pub fn expected_isolated<T: Real>(spec: &DensitySpec<T>, n: f64, r: T, big_r: T) -> Result<T> {
    if !(r > T::zero()) || !(big_r > T::zero()) {
        return Err(Error::invalid(format!("need r > 0 and R > 0, got r = {r}, R = {big_r}")));
    }
    if !(n >= 0.0) {
        return Err(Error::invalid(format!("intensity must be non-negative, got {n}")));
    }
    if n == 0.0 {
        return Ok(T::zero());
    }
    let nn = T::lit(n);
    let mut failure = None;
    let integral = quadrature::integrate(
        |rho: T| {
            let mass = match spec.ball_mass(rho, r) {
                Ok(m) => m,
                Err(e) => {
                    failure.get_or_insert(e);
                    T::zero()
                }
            };
            (-nn * mass).exp() * spec.radial_density(rho)
        },
        T::zero(),
        big_r,
        Tolerance::relative(1e-6),
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(nn * integral.value)
}

/// `P(P_n ∩ B(0, R)^c = ∅) = exp(-n ν(B(0, R)^c))`.
pub fn tail_empty_prob<T: Real>(spec: &DensitySpec<T>, n: f64, big_r: T) -> Result<T> {
    if !(n >= 0.0) {
        return Err(Error::invalid(format!("intensity must be non-negative, got {n}")));
    }
    Ok((-T::lit(n) * spec.tail_mass(big_r)?).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConcentrationRadii<T = f64> {
    pub r0: T,
    pub r1: T,
    pub a_n: T,
    pub b_n: T,
    pub delta: T,
    pub flags: Vec<Flag>,
}

/// Radii of the concentration regime:
/// `A_n = ln n + d ln r + (d+2) ln γ - ln ln((γ r)^{-1} ψ^←(ln n)) - δ`,
/// `B_n = ln n + (d-1) ln ψ^←(ln n) - ln ψ'(ψ^←(ln n)) + ln ln n`,
/// `R^(0) = ψ^←(A_n)`, `R^(1) = ψ^←(B_n)`, with `δ = ln(3d/C) + 1`.
pub fn concentration_radii<T: Real>(
    spec: &DensitySpec<T>,
    n: f64,
    r: T,
    gamma: T,
) -> Result<ConcentrationRadii<T>> {
    let v = require_light(spec)?;
    if !(v > T::one()) {
        return Err(Error::invalid(format!(
            "the concentration regime needs superexponential decay (v > 1), got v = {v}"
        )));
    }
    check_light_n(n)?;
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::invalid(format!("γ must lie in (0, 1), got {gamma}")));
    }
    if !(r > T::zero()) {
        return Err(Error::invalid(format!("r must be positive, got {r}")));
    }
    let d = T::lit(spec.dimension() as f64);
    let log_n = T::lit(n.ln());
    let base = spec.psi_inverse(log_n)?;
    let slope = spec.psi_prime(base)?;
    let delta = (T::lit(3.0) * d / spec.norm_constant()).ln() + T::one();

    let mut flags = Vec::new();
    if !(slope * gamma * r > T::one()) {
        flags.push(Flag::SideConditionViolated);
    }
    if r > T::one() {
        flags.push(Flag::RadiusAboveOne);
    }
    let inner = base / (gamma * r);
    if !(inner > T::one()) {
        return Err(Error::invalid(format!(
            "ln ln((γ r)^-1 ψ^←(ln n)) is undefined: argument {inner} <= 1"
        )));
    }
    let a_n = log_n + d * r.ln() + (d + T::lit(2.0)) * gamma.ln() - inner.ln().ln() - delta;
    let b_n = log_n + (d - T::one()) * base.ln() - slope.ln() + log_n.ln();
    let mut radius = |arg: T| -> Result<T> {
        if arg > T::zero() {
            spec.psi_inverse(arg)
        } else {
            if !flags.contains(&Flag::PreAsymptotic) {
                flags.push(Flag::PreAsymptotic);
            }
            Ok(T::zero())
        }
    };
    let r0 = radius(a_n)?;
    let r1 = radius(b_n)?;
    Ok(ConcentrationRadii {
        r0,
        r1,
        a_n,
        b_n,
        delta,
        flags,
    })
}

/// Everything the theory says about one `(density, n, r, γ)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ThresholdReport<T = f64> {
    pub density: String,
    pub dimension: usize,
    pub n: f64,
    pub r_n: T,
    pub gamma_n: Option<T>,
    pub regime: DecayClass,
    pub r0: T,
    pub r1: T,
    pub tau: Option<T>,
    pub w_n: Option<T>,
    /// `r ψ'(ψ^←(ln n))`, for light tails.
    pub scaled_radius: Option<T>,
    pub a_n: Option<T>,
    pub b_n: Option<T>,
    pub concentration_r0: Option<T>,
    pub concentration_r1: Option<T>,
    pub expected_isolated: T,
    pub tail_empty_prob: T,
    /// `exp(-e^{w(n)})`, the light-tail asymptotic of `tail_empty_prob`.
    pub tail_empty_asymptotic: Option<T>,
    pub prediction: Prediction,
    pub constants: ClassifyConstants,
    pub flags: Vec<Flag>,
}

/// Fills a [`ThresholdReport`] and applies the per-regime prediction rule.
pub fn classify<T: Real>(
    spec: &DensitySpec<T>,
    n: f64,
    r: T,
    gamma: Option<T>,
    constants: ClassifyConstants,
) -> Result<ThresholdReport<T>> {
    if !(r > T::zero()) {
        return Err(Error::invalid(format!("r must be positive, got {r}")));
    }
    let regime = spec.decay_class();
    let mut flags = Vec::new();
    if r > T::one() {
        flags.push(Flag::RadiusAboveOne);
    }
    let mut report = ThresholdReport {
        density: spec.label(),
        dimension: spec.dimension(),
        n,
        r_n: r,
        gamma_n: gamma,
        regime,
        r0: T::zero(),
        r1: T::zero(),
        tau: None,
        w_n: None,
        scaled_radius: None,
        a_n: None,
        b_n: None,
        concentration_r0: None,
        concentration_r1: None,
        expected_isolated: T::zero(),
        tail_empty_prob: T::zero(),
        tail_empty_asymptotic: None,
        prediction: Prediction::Untheorized,
        constants,
        flags: Vec::new(),
    };

    match regime {
        DecayClass::HeavyTail => {
            let (r0, r1) = heavy_tail_radii(spec, n)?;
            report.r0 = r0;
            report.r1 = r1;
            report.prediction = Prediction::DisconnectedWhp;
        }
        _ => {
            let radii = light_tail_radii(spec, n)?;
            report.r0 = radii.r0;
            report.r1 = radii.r1;
            report.w_n = Some(radii.w_n);
            report.tail_empty_asymptotic = Some((-radii.w_n.exp()).exp());
            if radii.pre_asymptotic {
                flags.push(Flag::PreAsymptotic);
            } else if !radii.ordered() {
                flags.push(Flag::RadiiInverted);
            }
            let scaled = r * spec.psi_prime(radii.r0)?;
            report.scaled_radius = Some(scaled);
            report.prediction = match regime {
                DecayClass::Subexponential => Prediction::DisconnectedWhp,
                DecayClass::Exponential => {
                    if scaled <= T::lit(constants.k_exp) {
                        Prediction::DisconnectedWhp
                    } else {
                        Prediction::Untheorized
                    }
                }
                _ => {
                    let t = tau(spec, n)?;
                    report.tau = Some(t);
                    if let Some(g) = gamma {
                        let c = concentration_radii(spec, n, r, g)?;
                        report.a_n = Some(c.a_n);
                        report.b_n = Some(c.b_n);
                        report.concentration_r0 = Some(c.r0);
                        report.concentration_r1 = Some(c.r1);
                        for f in c.flags {
                            if !flags.contains(&f) {
                                flags.push(f);
                            }
                        }
                    }
                    if r < T::lit(constants.c_lo) * t {
                        Prediction::DisconnectedWhp
                    } else if r > T::lit(constants.c_hi) * t {
                        Prediction::ConcentrationRegime
                    } else {
                        Prediction::Untheorized
                    }
                }
            };
        }
    }

    report.tail_empty_prob = tail_empty_prob(spec, n, report.r1)?;
    report.expected_isolated = if report.r0 > T::zero() {
        expected_isolated(spec, n, r, report.r0)?
    } else {
        T::zero()
    };
    report.flags = flags;
    Ok(report)
}
