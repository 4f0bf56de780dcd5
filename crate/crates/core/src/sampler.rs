//! Poisson point processes of intensity `n ν` for a radial density `ν`.
//!
//! Radii are drawn by inverting a tabulated radial tail function (Newton steps inside
//! the bracketing table segment), directions by normalizing a standard Gaussian vector.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::quadrature::{self, GaussLegendre, Tolerance};
use crate::scalar::Real;

/// Largest intensity the default table is built for.
pub const DEFAULT_N_MAX: f64 = 1e7;

/// Probability mass the table may leave beyond its last radius, per unit intensity.
pub const TRUNCATION_BUDGET: f64 = 1e-10;

const CORE_NODES: usize = 1024;
const GEOMETRIC_RATIO: f64 = 1.01;
const SEGMENT_TOL: Tolerance = Tolerance { abs: 0.0, rel: 1e-13 };

/// Tabulated radial marginal `s_{d-1} ρ^{d-1} q(ρ)` of a density.
///
/// The table stores tail masses `ν(B(0, ρ_k)^c)` summed from the far end, so far-tail
/// radii keep full relative precision.
#[derive(Debug, Clone)]
pub struct RadialMeasure<T = f64> {
    spec: DensitySpec<T>,
    radii: Vec<T>,
    tail: Vec<T>,
    truncated_mass: T,
    n_max: f64,
    rule: GaussLegendre<T>,
}

impl<T: Real> RadialMeasure<T> {
    /// Builds the table so that the mass beyond its last radius is below
    /// `TRUNCATION_BUDGET / n_max`.
    pub fn new(spec: DensitySpec<T>, n_max: f64) -> Result<Self> {
        if !(n_max >= 1.0) || !n_max.is_finite() {
            return Err(Error::invalid(format!("n_max must be a finite number >= 1, got {n_max}")));
        }
        let target = T::lit(TRUNCATION_BUDGET / n_max);
        let bulk = spec.bulk_radius();

        let mut r_max = bulk;
        let mut doublings = 0;
        while spec.tail_mass_with(r_max, SEGMENT_TOL)? >= target {
            r_max = r_max + r_max;
            doublings += 1;
            if doublings > 200 {
                return Err(Error::numeric("could not find a truncation radius"));
            }
        }

        let mut radii = Vec::with_capacity(CORE_NODES + 512);
        let step = bulk / T::lit(CORE_NODES as f64);
        for k in 0..=CORE_NODES {
            radii.push(step * T::lit(k as f64));
        }
        let ratio = T::lit(GEOMETRIC_RATIO);
        let mut rho = bulk;
        while rho < r_max {
            rho = (rho * ratio).min(r_max);
            radii.push(rho);
        }

        let truncated_mass = spec.tail_mass_with(r_max, SEGMENT_TOL)?;
        let mut segments = Vec::with_capacity(radii.len() - 1);
        for w in radii.windows(2) {
            let m = quadrature::integrate(|t| spec.radial_density(t), w[0], w[1], SEGMENT_TOL)?;
            segments.push(m.value);
        }
        let mut tail = vec![T::zero(); radii.len()];
        tail[radii.len() - 1] = truncated_mass;
        for k in (0..segments.len()).rev() {
            tail[k] = tail[k + 1] + segments[k];
        }
        if (tail[0] - T::one()).abs() > T::tol(1e-8) {
            return Err(Error::numeric(format!(
                "radial table integrates to {} instead of 1",
                tail[0]
            )));
        }
        // Normalize away the residual quadrature error and keep the tail strictly
        // decreasing; nodes that add no representable mass are dropped.
        let total = tail[0];
        let mut kept_r = Vec::with_capacity(radii.len());
        let mut kept_t = Vec::with_capacity(radii.len());
        for (r, t) in radii.into_iter().zip(tail) {
            let t = t / total;
            if kept_t.last().is_none_or(|&prev: &T| t < prev) {
                kept_r.push(r);
                kept_t.push(t);
            }
        }
        Ok(RadialMeasure {
            spec,
            radii: kept_r,
            tail: kept_t,
            truncated_mass: truncated_mass / total,
            n_max,
            rule: GaussLegendre::new(8),
        })
    }

    pub fn spec(&self) -> &DensitySpec<T> {
        &self.spec
    }

    pub fn n_max(&self) -> f64 {
        self.n_max
    }

    /// `(radius, cumulative radial mass)` pairs.
    pub fn cdf_table(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.radii
            .iter()
            .zip(&self.tail)
            .map(|(&r, &t)| (r, T::one() - t))
    }

    /// `(radius, tail mass)` pairs; radii strictly increase and tails strictly decrease.
    pub fn tail_table(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.radii.iter().copied().zip(self.tail.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Last tabulated radius; samples never exceed it.
    pub fn truncation_radius(&self) -> T {
        *self.radii.last().expect("table is non-empty")
    }

    /// Mass beyond [`truncation_radius`](Self::truncation_radius), which sampling clips.
    pub fn truncated_mass(&self) -> T {
        self.truncated_mass
    }

    /// Radius `ρ` with `ν(B(0, ρ)^c) = w`, for `w ∈ (0, 1]`.
    pub fn radius_for_tail(&self, w: T) -> T {
        // number of nodes whose tail is >= w; tails are strictly decreasing
        let above = self.tail.partition_point(|&t| t >= w);
        if above == 0 {
            return T::zero();
        }
        let k = above - 1;
        if k + 1 >= self.radii.len() {
            return self.truncation_radius();
        }
        let (a, b) = (self.radii[k], self.radii[k + 1]);
        let want = self.tail[k] - w;
        let seg = self.tail[k] - self.tail[k + 1];
        let f = |t: T| self.spec.radial_density(t);
        let rel = T::tol(1e-12);
        let mut lo = a;
        let mut hi = b;
        let mut rho = a + (b - a) * (want / seg);
        for _ in 0..64 {
            let g = self.rule.integrate(f, a, rho) - want;
            if g > T::zero() {
                hi = rho;
            } else {
                lo = rho;
            }
            let slope = f(rho);
            if slope > T::zero() {
                let step = g / slope;
                let next = rho - step;
                if step.abs() <= rel * next.abs() {
                    return next.max(a).min(b);
                }
                if next >= lo && next <= hi {
                    rho = next;
                    continue;
                }
            }
            rho = (lo + hi) * T::lit(0.5);
            if hi - lo <= rel * hi {
                break;
            }
        }
        rho
    }

    /// Cumulative radial mass at `rho` by direct quadrature (not from the table).
    pub fn radial_cdf(&self, rho: T) -> Result<T> {
        self.spec.ball_mass_centered(rho)
    }
}

/// One realization of the Poisson process.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T = f64> {
    dimension: usize,
    coords: Vec<T>,
    intensity_n: f64,
    seed: u64,
    spec: DensitySpec<T>,
}

impl<T: Real> PointCloud<T> {
    /// A cloud from explicit coordinates, laid out point after point.
    pub fn from_coords(
        spec: DensitySpec<T>,
        coords: Vec<T>,
        intensity_n: f64,
        seed: u64,
    ) -> Result<Self> {
        let dimension = spec.dimension();
        if coords.len() % dimension != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not split into points of dimension {dimension}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        Ok(PointCloud {
            dimension,
            coords,
            intensity_n,
            seed,
            spec,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn intensity(&self) -> f64 {
        self.intensity_n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &DensitySpec<T> {
        &self.spec
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dimension)
    }

    pub fn norm(&self, i: usize) -> T {
        norm(self.point(i))
    }

    pub fn radii(&self) -> Vec<T> {
        self.points().map(norm).collect()
    }

    /// CSV with header `x0,...,x{d-1}`, one point per row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((0..self.dimension).map(|k| format!("x{k}")))?;
        for p in self.points() {
            w.write_record(p.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self) -> CloudSidecar<T> {
        CloudSidecar {
            spec: self.spec.clone(),
            n: self.intensity_n,
            seed: self.seed,
            count: self.len(),
        }
    }
}

/// JSON metadata written next to an exported cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CloudSidecar<T = f64> {
    pub spec: DensitySpec<T>,
    pub n: f64,
    pub seed: u64,
    pub count: usize,
}

#[inline]
pub(crate) fn norm<T: Real>(p: &[T]) -> T {
    p.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt()
}

/// Reusable sampler for one density; the table is built once.
#[derive(Debug, Clone)]
pub struct Sampler<T = f64> {
    measure: RadialMeasure<T>,
}

impl<T: Real> Sampler<T> {
    pub fn new(spec: DensitySpec<T>) -> Result<Self> {
        Self::with_n_max(spec, DEFAULT_N_MAX)
    }

    pub fn with_n_max(spec: DensitySpec<T>, n_max: f64) -> Result<Self> {
        Ok(Sampler {
            measure: RadialMeasure::new(spec, n_max)?,
        })
    }

    pub fn measure(&self) -> &RadialMeasure<T> {
        &self.measure
    }

    /// Draws `P_n`: `N ~ Poisson(n)` then `N` i.i.d. points from `ν`.
    pub fn sample(&self, n: f64, seed: u64) -> Result<PointCloud<T>> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid(format!("intensity must be positive and finite, got {n}")));
        }
        if n > self.measure.n_max {
            log::warn!(
                "intensity {n} exceeds the table's n_max {}; truncation bias is above budget",
                self.measure.n_max
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = Poisson::new(n)
            .map_err(|e| Error::invalid(format!("poisson intensity {n}: {e}")))?
            .sample(&mut rng) as usize;
        let coords = self.draw_points(count, &mut rng);
        PointCloud::from_coords(self.measure.spec.clone(), coords, n, seed)
    }

    /// Exactly `count` i.i.d. points, no Poisson count.
    pub fn draw_points<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<T> {
        let d = self.measure.spec.dimension();
        let mut coords = Vec::with_capacity(count * d);
        let mut dir = vec![0f64; d];
        for _ in 0..count {
            // 1 - U lies in (0, 1]
            let w = T::lit(1.0 - rng.random::<f64>());
            let rho = self.measure.radius_for_tail(w);
            loop {
                let mut sq = 0.0;
                for c in dir.iter_mut() {
                    *c = StandardNormal.sample(rng);
                    sq += *c * *c;
                }
                if sq > 0.0 {
                    let inv = 1.0 / sq.sqrt();
                    coords.extend(dir.iter().map(|&c| rho * T::lit(c * inv)));
                    break;
                }
            }
        }
        coords
    }
}

/// Convenience wrapper: builds a default sampler and draws one cloud.
pub fn sample<T: Real>(spec: &DensitySpec<T>, n: f64, seed: u64) -> Result<PointCloud<T>> {
    Sampler::with_n_max(spec.clone(), n.max(DEFAULT_N_MAX))?.sample(n, seed)
}

/// Kolmogorov–Smirnov statistic of a cloud's radii against the exact radial CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsStatistic {
    pub statistic: f64,
    /// Set when the cloud was empty and the statistic is 0 by convention.
    pub empty: bool,
}

pub fn radial_ks_statistic<T: Real>(cloud: &PointCloud<T>) -> Result<KsStatistic> {
    if cloud.is_empty() {
        log::warn!("KS statistic requested for an empty cloud; reporting 0");
        return Ok(KsStatistic {
            statistic: 0.0,
            empty: true,
        });
    }
    let mut radii: Vec<f64> = cloud.radii().into_iter().map(Real::as_f64).collect();
    radii.sort_by(f64::total_cmp);
    let spec64 = DensitySpec::<f64>::new(cloud.spec().dimension(), {
        match cloud.spec().family() {
            crate::density::TailFamily::HeavyTail { alpha } => {
                crate::density::TailFamily::HeavyTail { alpha: alpha.as_f64() }
            }
            crate::density::TailFamily::LightTail { v, scale } => {
                crate::density::TailFamily::LightTail {
                    v: v.as_f64(),
                    scale: scale.as_f64(),
                }
            }
        }
    })?;
    let count = radii.len() as f64;
    let tol = Tolerance::absolute(1e-13);
    let mut cdf = 0.0;
    let mut prev = 0.0;
    let mut worst: f64 = 0.0;
    for (i, &r) in radii.iter().enumerate() {
        if r > prev {
            cdf += quadrature::integrate(|t| spec64.radial_density(t), prev, r, tol)?.value;
            prev = r;
        }
        let c = cdf.min(1.0);
        worst = worst
            .max((i as f64 + 1.0) / count - c)
            .max(c - i as f64 / count);
    }
    Ok(KsStatistic {
        statistic: worst,
        empty: false,
    })
}

/// Seed of trial `trial` in sweep cell `cell` under `master`.
///
/// Injective in `(cell, trial)` for `cell, trial < 2^32` at fixed `master`: the key is
/// packed without overlap and both mixing steps are bijections of `u64`.
pub fn child_seed(master: u64, cell: u64, trial: u64) -> u64 {
    let key = (cell << 32) | (trial & 0xffff_ffff);
    splitmix64(master.wrapping_add(splitmix64(key)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::TailFamily;
    use approx::assert_relative_eq;
    use std::collections::HashSet;

    fn specs(d: usize) -> Vec<DensitySpec> {
        vec![
            DensitySpec::heavy(d, 4.0).unwrap(),
            DensitySpec::light(d, 0.5, 1.0).unwrap(),
            DensitySpec::light(d, 1.0, 1.0).unwrap(),
            DensitySpec::<f64>::gaussian(d).unwrap(),
        ]
    }

    #[test]
    fn table_is_monotone_and_complete() {
        for d in [2, 3] {
            for spec in specs(d) {
                let m = RadialMeasure::new(spec.clone(), DEFAULT_N_MAX).unwrap();
                let rows: Vec<_> = m.tail_table().collect();
                for w in rows.windows(2) {
                    assert!(w[1].0 > w[0].0);
                    assert!(w[1].1 < w[0].1);
                }
                let (_, last_cdf) = m.cdf_table().last().unwrap();
                assert!(last_cdf >= 1.0 - 1e-10);
                assert!(m.truncated_mass() < TRUNCATION_BUDGET / DEFAULT_N_MAX * 1.0001);
                assert_eq!(rows[0], (0.0, 1.0));
            }
        }
    }

    #[test]
    fn table_matches_closed_form_tail() {
        let g = RadialMeasure::new(DensitySpec::<f64>::gaussian(2).unwrap(), 1e4).unwrap();
        for (r, t) in g.tail_table().step_by(37) {
            assert!((t - (-r * r).exp()).abs() <= 1e-12 + 1e-9 * t, "r={r}");
        }
    }

    #[test]
    fn inversion_hits_requested_tail() {
        for spec in specs(3) {
            let m = RadialMeasure::new(spec.clone(), 1e6).unwrap();
            for w in [1.0, 0.9, 0.5, 0.123, 1e-3, 1e-9, 1e-14] {
                let rho = m.radius_for_tail(w);
                let t = spec.tail_mass_with(rho, Tolerance::relative(1e-12)).unwrap();
                assert_relative_eq!(t, w, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        let a = sample(&spec, 500.0, 42).unwrap();
        let b = sample(&spec, 500.0, 42).unwrap();
        assert_eq!(a, b);
        let c = sample(&spec, 500.0, 43).unwrap();
        assert_ne!(a.coords(), c.coords());
    }

    #[test]
    fn rejects_bad_intensity() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        assert!(sample(&spec, 0.0, 1).is_err());
        assert!(sample(&spec, f64::NAN, 1).is_err());
    }

    #[test]
    fn mean_count_is_intensity() {
        let s = Sampler::new(DensitySpec::<f64>::gaussian(2).unwrap()).unwrap();
        let trials = 10_000u64;
        let total: usize = (0..trials).map(|t| s.sample(100.0, t).unwrap().len()).sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 100.0).abs() <= 0.3, "mean {mean}");
    }

    #[test]
    fn expected_count_in_unit_ball() {
        let s = Sampler::new(DensitySpec::<f64>::gaussian(2).unwrap()).unwrap();
        let trials = 1000u64;
        let n = 1000.0;
        let counts: Vec<f64> = (0..trials)
            .map(|t| {
                let c = s.sample(n, 10_000 + t).unwrap();
                c.radii().iter().filter(|&&r| r < 1.0).count() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / trials as f64;
        let want = n * (1.0 - (-1.0f64).exp());
        // Poisson thinning: the count is Poisson(want)
        let se = (want / trials as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * se, "mean {mean} want {want}");
    }

    #[test]
    fn ks_is_small_for_true_law_and_one_for_origin_cloud() {
        let spec = DensitySpec::heavy(2, 4.0).unwrap();
        let cloud = sample(&spec, 20_000.0, 5).unwrap();
        let ks = radial_ks_statistic(&cloud).unwrap();
        assert!(!ks.empty);
        assert!(ks.statistic < 1.95 / (cloud.len() as f64).sqrt());

        let origin = PointCloud::from_coords(spec.clone(), vec![0.0; 200], 100.0, 0).unwrap();
        let ks = radial_ks_statistic(&origin).unwrap();
        assert_relative_eq!(ks.statistic, 1.0, epsilon = 1e-12);

        let empty = PointCloud::from_coords(spec, vec![], 1.0, 0).unwrap();
        let ks = radial_ks_statistic(&empty).unwrap();
        assert!(ks.empty);
        assert_eq!(ks.statistic, 0.0);
    }

    #[test]
    fn ks_of_independent_seeds_uncorrelated() {
        let s = Sampler::new(DensitySpec::<f64>::gaussian(2).unwrap()).unwrap();
        let pairs: Vec<(f64, f64)> = (0..100u64)
            .map(|i| {
                let a = radial_ks_statistic(&s.sample(300.0, child_seed(1, 0, i)).unwrap()).unwrap();
                let b = radial_ks_statistic(&s.sample(300.0, child_seed(1, 1, i)).unwrap()).unwrap();
                (a.statistic, b.statistic)
            })
            .collect();
        let n = pairs.len() as f64;
        let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0 / n, y + p.1 / n));
        let cov: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>();
        let va: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>();
        let vb: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>();
        let corr = cov / (va * vb).sqrt();
        // |corr| < 3/sqrt(n) under independence
        assert!(corr.abs() < 0.3, "corr {corr}");
    }

    #[test]
    fn csv_and_sidecar() {
        let spec = DensitySpec::light(3, 1.5, 2.0).unwrap();
        let cloud = sample(&spec, 20.0, 9).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x0,x1,x2"));
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), cloud.len());
        for (row, p) in rows.iter().zip(cloud.points()) {
            assert_eq!(row.as_slice(), p);
        }
        let side = serde_json::to_value(cloud.sidecar()).unwrap();
        assert_eq!(side["count"], cloud.len());
        assert_eq!(side["seed"], 9);
        assert_eq!(side["spec"]["family"]["light_tail"]["v"], 1.5);
    }

    #[test]
    fn child_seeds_distinct() {
        let mut seen = HashSet::new();
        for cell in 0..10u64 {
            for trial in 0..10_000u64 {
                assert!(seen.insert(child_seed(99, cell, trial)));
            }
        }
    }

    #[test]
    fn f32_cloud() {
        let spec = DensitySpec::<f32>::new(2, TailFamily::LightTail { v: 2.0, scale: 1.0 }).unwrap();
        let cloud = Sampler::with_n_max(spec, 1e4).unwrap().sample(1000.0, 3).unwrap();
        assert!(cloud.len() > 800);
        assert!(cloud.coords().iter().all(|c| c.is_finite()));
    }
}
