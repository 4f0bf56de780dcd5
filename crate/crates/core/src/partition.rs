//! Cube partition of a ball `B(0, R)` and the per-region Poisson concentration check.
//!
//! The grid has side `s` and is anchored so the origin is a cell centre; cell `i` is the
//! closed cube `Q'_i = i s + [-s/2, s/2]^d`. Inner cells lie entirely inside the closed
//! ball. Every other cell meeting the ball is attached to the inner cell whose centre is
//! nearest (ties: lexicographically smallest index), and region `Q_i` is the union of the
//! cells attached to `i`, clipped to the ball.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{AxisBox, DensitySpec};
use crate::error::{Error, Result};
use crate::sampler::{child_seed, norm, PointCloud};
use crate::scalar::Real;

/// Monte Carlo samples per clipped boundary cell.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Grid cell containing `p`: `floor(p / side + 1/2)` per axis.
pub fn cell_index<T: Real>(p: &[T], side: T) -> Vec<i64> {
    let mut idx = Vec::with_capacity(p.len());
    fill_cell_index(p, side, &mut idx);
    idx
}

fn fill_cell_index<T: Real>(p: &[T], side: T, out: &mut Vec<i64>) {
    let half = T::lit(0.5);
    out.clear();
    out.extend(p.iter().map(|&x| (x / side + half).floor().to_i64().unwrap_or(i64::MAX)));
}

fn index_dist2(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CubePartition<T = f64> {
    dimension: usize,
    side: T,
    radius: T,
    seed: u64,
    inner_cells: Vec<Vec<i64>>,
    /// Every cell meeting the closed ball, with its owning inner cell (position in
    /// `inner_cells`) and whether the owner was picked by a tie-break.
    cells: Vec<AttachedCell>,
    #[serde(skip)]
    lookup: HashMap<Vec<i64>, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachedCell {
    pub index: Vec<i64>,
    pub owner: u32,
    pub inner: bool,
    pub tied: bool,
}

impl<T: Real> CubePartition<T> {
    /// Partition of `B(0, radius)` in `dimension` dimensions by cubes of side `side`.
    pub fn build(dimension: usize, radius: T, side: T, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(radius > T::zero() && radius.is_finite()) || !(side > T::zero() && side.is_finite()) {
            return Err(Error::invalid(format!(
                "need finite R > 0 and side > 0, got R = {radius}, side = {side}"
            )));
        }
        let resolution = Error::InsufficientResolution {
            side: side.as_f64(),
            radius: radius.as_f64(),
        };
        if side > radius {
            return Err(resolution);
        }
        let half = T::lit(0.5);
        let r2 = radius * radius;
        let reach = (radius / side + half).ceil().to_i64().unwrap_or(i64::MAX);
        let span = (2 * reach + 1) as f64;
        if span.powi(dimension as i32) > 5e7 {
            return Err(Error::invalid(format!(
                "partition of B(0, {radius}) by side {side} in d = {dimension} has too many cells"
            )));
        }

        let mut meeting = Vec::new();
        let mut is_inner = Vec::new();
        let mut idx = vec![-reach; dimension];
        loop {
            let (mut near, mut far) = (T::zero(), T::zero());
            for &i in &idx {
                let c = T::lit(i.unsigned_abs() as f64) * side;
                let lo = (c - half * side).max(T::zero());
                let hi = c + half * side;
                near = near + lo * lo;
                far = far + hi * hi;
            }
            if near <= r2 {
                meeting.push(idx.clone());
                is_inner.push(far <= r2);
            }
            let mut k = 0;
            loop {
                if k == dimension {
                    break;
                }
                if idx[k] < reach {
                    idx[k] += 1;
                    break;
                }
                idx[k] = -reach;
                k += 1;
            }
            if k == dimension {
                break;
            }
        }

        let inner_cells: Vec<Vec<i64>> = meeting
            .iter()
            .zip(&is_inner)
            .filter(|(_, &inner)| inner)
            .map(|(c, _)| c.clone())
            .collect();
        if inner_cells.is_empty() {
            return Err(resolution);
        }
        let mut sorted_inner: Vec<(Vec<i64>, u32)> = inner_cells
            .iter()
            .enumerate()
            .map(|(k, c)| (c.clone(), k as u32))
            .collect();
        sorted_inner.sort();
        let inner_pos: HashMap<&[i64], u32> =
            inner_cells.iter().enumerate().map(|(k, c)| (c.as_slice(), k as u32)).collect();

        let mut cells = Vec::with_capacity(meeting.len());
        for (index, inner) in meeting.into_iter().zip(is_inner) {
            if inner {
                let owner = inner_pos[index.as_slice()];
                cells.push(AttachedCell {
                    index,
                    owner,
                    inner: true,
                    tied: false,
                });
                continue;
            }
            let (owner, tied) = nearest_inner(&sorted_inner, &index);
            cells.push(AttachedCell {
                index,
                owner,
                inner: false,
                tied,
            });
        }
        let mut partition = CubePartition {
            dimension,
            side,
            radius,
            seed,
            inner_cells,
            cells,
            lookup: HashMap::new(),
        };
        partition.rebuild_lookup();
        Ok(partition)
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .cells
            .iter()
            .map(|c| (c.index.clone(), c.owner))
            .collect();
    }

    /// Restores the cell lookup after deserialization.
    pub fn reindex(mut self) -> Self {
        self.rebuild_lookup();
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn side(&self) -> T {
        self.side
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inner_cells(&self) -> &[Vec<i64>] {
        &self.inner_cells
    }

    pub fn attached_cells(&self) -> &[AttachedCell] {
        &self.cells
    }

    pub fn num_regions(&self) -> usize {
        self.inner_cells.len()
    }

    /// Centre `z_i` of grid cell `index`.
    pub fn centre(&self, index: &[i64]) -> Vec<T> {
        index.iter().map(|&i| T::lit(i as f64) * self.side).collect()
    }

    fn cube(&self, index: &[i64]) -> AxisBox<T> {
        AxisBox::cube(&self.centre(index), self.side).expect("positive side")
    }

    /// Owning region of an attached cell.
    pub fn owner_of_cell(&self, index: &[i64]) -> Option<usize> {
        self.lookup.get(index).map(|&o| o as usize)
    }

    /// Region containing `p`, or `None` outside the closed ball.
    pub fn region_of(&self, p: &[T]) -> Option<usize> {
        let mut buf = Vec::with_capacity(self.dimension);
        self.region_of_with(p, &mut buf)
    }

    fn region_of_with(&self, p: &[T], buf: &mut Vec<i64>) -> Option<usize> {
        if norm(p) > self.radius {
            return None;
        }
        fill_cell_index(p, self.side, buf);
        match self.lookup.get(buf.as_slice()) {
            Some(&o) => Some(o as usize),
            None => {
                // a point of the closed ball on a face shared with a cell that only touches it
                let (o, _) = nearest_attached(&self.cells, p, self.side);
                Some(o as usize)
            }
        }
    }

    /// Points per region plus the number of points outside the ball.
    pub fn count_points(&self, cloud: &PointCloud<T>) -> Result<RegionCounts> {
        self.check_dimension(cloud)?;
        let mut counts = vec![0usize; self.num_regions()];
        let mut overflow = 0;
        let mut buf = Vec::with_capacity(self.dimension);
        for p in cloud.points() {
            match self.region_of_with(p, &mut buf) {
                Some(o) => counts[o] += 1,
                None => overflow += 1,
            }
        }
        Ok(RegionCounts { counts, overflow })
    }

    fn check_dimension(&self, cloud: &PointCloud<T>) -> Result<()> {
        if cloud.dimension() != self.dimension {
            return Err(Error::invalid(format!(
                "cloud has dimension {}, partition {}",
                cloud.dimension(),
                self.dimension
            )));
        }
        Ok(())
    }

    /// `ν(Q_i)` per region: exact cube masses for inner cells, Monte Carlo with
    /// `samples` uniform draws for each clipped boundary cell.
    pub fn region_masses(&self, spec: &DensitySpec<T>, samples: usize) -> Result<RegionMasses<T>> {
        if spec.dimension() != self.dimension {
            return Err(Error::invalid("density and partition dimensions differ"));
        }
        if samples < 2 {
            return Err(Error::invalid("need at least 2 Monte Carlo samples per cell"));
        }
        let mut nu = vec![T::zero(); self.num_regions()];
        let mut var = vec![T::zero(); self.num_regions()];
        let r2 = self.radius * self.radius;
        let half = T::lit(0.5);
        let mut point = vec![T::zero(); self.dimension];
        for (ordinal, cell) in self.cells.iter().enumerate() {
            let cube = self.cube(&cell.index);
            let owner = cell.owner as usize;
            if cell.inner {
                nu[owner] = nu[owner] + spec.cube_mass(&cube)?;
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(self.seed, ordinal as u64, 0));
            let centre = self.centre(&cell.index);
            let (mut sum, mut sum2) = (0.0f64, 0.0f64);
            for _ in 0..samples {
                for (x, &c) in point.iter_mut().zip(&centre) {
                    let u: f64 = rng.random();
                    *x = c + (T::lit(u) - half) * self.side;
                }
                let n2: T = point.iter().map(|&x| x * x).sum();
                let value = if n2 <= r2 { spec.eval_density(n2.sqrt()).as_f64() } else { 0.0 };
                sum += value;
                sum2 += value * value;
            }
            let m = samples as f64;
            let mean = sum / m;
            let sample_var = ((sum2 - m * mean * mean) / (m - 1.0)).max(0.0);
            let vol = cube.volume().as_f64();
            nu[owner] = nu[owner] + T::lit(vol * mean);
            var[owner] = var[owner] + T::lit(vol * vol * sample_var / m);
        }
        Ok(RegionMasses {
            nu,
            std_error: var.into_iter().map(|v| v.sqrt()).collect(),
        })
    }

    /// Compares each region's count with `(1 ± γ) n ν(Q_i)`, widened by three Monte
    /// Carlo standard errors of `n ν`.
    pub fn check_concentration(
        &self,
        cloud: &PointCloud<T>,
        spec: &DensitySpec<T>,
        gamma: T,
    ) -> Result<ConcentrationReport<T>> {
        let masses = self.region_masses(spec, DEFAULT_MC_SAMPLES)?;
        self.check_with_masses(cloud, &masses, gamma)
    }

    /// [`check_concentration`](Self::check_concentration) with precomputed masses.
    pub fn check_with_masses(
        &self,
        cloud: &PointCloud<T>,
        masses: &RegionMasses<T>,
        gamma: T,
    ) -> Result<ConcentrationReport<T>> {
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::invalid(format!("γ must lie in (0, 1), got {gamma}")));
        }
        if masses.nu.len() != self.num_regions() {
            return Err(Error::invalid("masses do not match the partition"));
        }
        let counts = self.count_points(cloud)?;
        let n = T::lit(cloud.intensity());
        let three = T::lit(3.0);
        let mut max_dev = T::zero();
        let cells = self
            .inner_cells
            .iter()
            .enumerate()
            .map(|(k, index)| {
                let mean = n * masses.nu[k];
                let slack = three * n * masses.std_error[k];
                let lower = (T::one() - gamma) * mean - slack;
                let upper = (T::one() + gamma) * mean + slack;
                let count = counts.counts[k];
                let c = T::lit(count as f64);
                if mean > T::zero() {
                    max_dev = max_dev.max((c - mean).abs() / mean);
                }
                CellCheck {
                    index: index.clone(),
                    count,
                    nu: masses.nu[k],
                    lower,
                    upper,
                    violated: c < lower || c > upper,
                }
            })
            .collect();
        Ok(ConcentrationReport {
            gamma,
            n: cloud.intensity(),
            cells,
            overflow: counts.overflow,
            max_relative_deviation: max_dev,
        })
    }

    /// Regions containing `p` straight from the definition: scan every cell meeting the
    /// ball, test closed-cube membership, and attach by brute-force nearest centre.
    /// Ties on shared faces can return several regions.
    pub fn regions_by_definition(&self, p: &[T]) -> Vec<usize> {
        if norm(p) > self.radius {
            return Vec::new();
        }
        let half = T::lit(0.5) * self.side;
        let mut sorted_inner: Vec<(Vec<i64>, u32)> = self
            .inner_cells
            .iter()
            .enumerate()
            .map(|(k, c)| (c.clone(), k as u32))
            .collect();
        sorted_inner.sort();
        let mut found: Vec<usize> = self
            .cells
            .iter()
            .filter(|cell| {
                cell.index
                    .iter()
                    .zip(p)
                    .all(|(&i, &x)| (x - T::lit(i as f64) * self.side).abs() <= half)
            })
            .map(|cell| nearest_inner(&sorted_inner, &cell.index).0 as usize)
            .collect();
        found.sort_unstable();
        found.dedup();
        found
    }
}

fn nearest_inner(sorted_inner: &[(Vec<i64>, u32)], index: &[i64]) -> (u32, bool) {
    let mut best = (i64::MAX, 0u32);
    let mut ties = 0;
    for (c, k) in sorted_inner {
        let d = index_dist2(c, index);
        if d < best.0 {
            best = (d, *k);
            ties = 0;
        } else if d == best.0 {
            ties += 1;
        }
    }
    (best.1, ties > 0)
}

fn nearest_attached<T: Real>(cells: &[AttachedCell], p: &[T], side: T) -> (u32, T) {
    let mut best = (0u32, T::infinity());
    for cell in cells {
        let d: T = cell
            .index
            .iter()
            .zip(p)
            .map(|(&i, &x)| {
                let e = (x - T::lit(i as f64) * side).abs();
                e * e
            })
            .sum();
        if d < best.1 {
            best = (cell.owner, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl RegionCounts {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RegionMasses<T = f64> {
    pub nu: Vec<T>,
    pub std_error: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CellCheck<T = f64> {
    pub index: Vec<i64>,
    pub count: usize,
    pub nu: T,
    pub lower: T,
    pub upper: T,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConcentrationReport<T = f64> {
    pub gamma: T,
    pub n: f64,
    pub cells: Vec<CellCheck<T>>,
    pub overflow: usize,
    pub max_relative_deviation: T,
}

impl<T: Real> ConcentrationReport<T> {
    pub fn violations(&self) -> impl Iterator<Item = &CellCheck<T>> + '_ {
        self.cells.iter().filter(|c| c.violated)
    }

    pub fn num_violations(&self) -> usize {
        self.violations().count()
    }

    /// `Σ_i 2 exp(-n ν(Q_i) γ² / 3)`, the Chernoff bound on the expected number of
    /// violating regions.
    pub fn chernoff_budget(&self) -> T {
        let g2 = self.gamma * self.gamma / T::lit(3.0);
        let n = T::lit(self.n);
        self.cells
            .iter()
            .map(|c| T::lit(2.0) * (-n * c.nu * g2).exp())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::unit_ball_volume;
    use crate::sampler::sample;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn uniform_in_cube(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-half..half)).collect()
    }

    #[test]
    fn origin_cell_is_inner() {
        let p = CubePartition::<f64>::build(2, 1.0, 0.4, 0).unwrap();
        assert!(p.inner_cells().contains(&vec![0, 0]));
        assert_eq!(p.centre(&[0, 0]), vec![0.0, 0.0]);
        let idx = p.owner_of_cell(&[0, 0]).unwrap();
        assert_eq!(p.inner_cells()[idx], vec![0, 0]);
    }

    #[test]
    fn inner_cells_lie_inside_ball() {
        for (d, r, s) in [(2, 1.0, 0.4), (2, 2.04, 0.5), (3, 1.5, 0.3)] {
            let p = CubePartition::<f64>::build(d, r, s, 0).unwrap();
            for c in p.inner_cells() {
                let far: f64 = c.iter().map(|&i| (i.abs() as f64 * s + s / 2.0).powi(2)).sum();
                assert!(far.sqrt() <= r);
            }
            for cell in p.attached_cells() {
                assert_eq!(cell.inner, p.inner_cells()[cell.owner as usize] == cell.index);
            }
        }
    }

    #[test]
    fn insufficient_resolution() {
        assert!(matches!(
            CubePartition::<f64>::build(2, 0.3, 0.5, 0),
            Err(Error::InsufficientResolution { .. })
        ));
        // side <= R but the central cube's corner (0.45, 0.45) sticks out of B(0, 0.6)
        assert!(matches!(
            CubePartition::<f64>::build(2, 0.6, 0.9, 0),
            Err(Error::InsufficientResolution { .. })
        ));
    }

    #[test]
    fn probes_hit_exactly_one_region() {
        let p = CubePartition::<f64>::build(2, 1.0, 0.4, 0).unwrap();
        let q = CubePartition::<f64>::build(3, 1.3, 0.35, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for part in [&p, &q] {
            let d = part.dimension();
            let r = part.radius();
            let mut inside = 0;
            while inside < 100_000 {
                let x = uniform_in_cube(&mut rng, d, r);
                if norm(&x) > r {
                    assert_eq!(part.region_of(&x), None);
                    continue;
                }
                inside += 1;
                let region = part.region_of(&x).expect("assigned");
                assert!(region < part.num_regions());
            }
        }
    }

    #[test]
    fn region_volumes_sum_to_ball_volume() {
        let part = CubePartition::<f64>::build(2, 1.0, 0.4, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples = 10_000_000;
        let mut per_region = vec![0u64; part.num_regions()];
        let mut in_ball = 0u64;
        for _ in 0..samples {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if norm(&x) <= 1.0 {
                in_ball += 1;
            }
            if let Some(k) = part.region_of(&x) {
                per_region[k] += 1;
            }
        }
        let box_vol = 4.0;
        let summed: f64 = per_region.iter().map(|&c| box_vol * c as f64 / samples as f64).sum();
        let ball = box_vol * in_ball as f64 / samples as f64;
        // the regions tile the ball, so the two estimates share every sample
        assert_eq!(summed, ball);
        let p = unit_ball_volume(2) / box_vol;
        let se = box_vol * (p * (1.0 - p) / samples as f64).sqrt();
        assert!((summed - unit_ball_volume(2)).abs() < 4.0 * se);
    }

    #[test]
    fn counts_conserve_and_match_definition() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        let part = CubePartition::build(2, 1.2, 0.3, 0).unwrap();
        let empty = PointCloud::from_coords(spec.clone(), vec![], 10.0, 0).unwrap();
        let c = part.count_points(&empty).unwrap();
        assert!(c.counts.iter().all(|&k| k == 0));
        assert_eq!(c.overflow, 0);

        let cloud = sample(&spec, 10_000.0, 4).unwrap();
        let counts = part.count_points(&cloud).unwrap();
        assert_eq!(counts.total(), cloud.len());
        let mut direct = vec![0usize; part.num_regions()];
        let mut outside = 0;
        for x in cloud.points() {
            let regions = part.regions_by_definition(x);
            match regions.as_slice() {
                [] => outside += 1,
                [k] => direct[*k] += 1,
                _ => panic!("random point on a shared face"),
            }
        }
        assert_eq!(direct, counts.counts);
        assert_eq!(outside, counts.overflow);
    }

    #[test]
    fn masses_sum_to_ball_mass() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        let part = CubePartition::build(2, 1.5, 0.5, 3).unwrap();
        let m = part.region_masses(&spec, 20_000).unwrap();
        let total: f64 = m.nu.iter().sum();
        let se: f64 = m.std_error.iter().map(|s| s * s).sum::<f64>().sqrt();
        let want = 1.0 - (-2.25f64).exp();
        assert!((total - want).abs() < 4.0 * se + 1e-9, "{total} vs {want} (se {se})");
        let again = part.region_masses(&spec, 20_000).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn inner_mass_is_exact_cube_mass() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        // every cell meeting B(0, R) is inner only when R is large; check a tiny inner region
        let part = CubePartition::build(2, 0.75, 0.5, 0).unwrap();
        assert_eq!(part.inner_cells(), &[vec![0, 0]]);
        let m = part.region_masses(&spec, 1000).unwrap();
        let erf = statrs::function::erf::erf(0.25);
        let want = 1.0 - (-0.5625f64).exp();
        assert!((m.nu[0] - want).abs() < 5.0 * m.std_error[0] + 1e-9);
        assert!(m.nu[0] > erf * erf);
    }

    #[test]
    fn constructed_violation_is_reported() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        let part = CubePartition::build(2, 1.0, 0.4, 5).unwrap();
        let masses = part.region_masses(&spec, 10_000).unwrap();
        let n = 1000.0;
        let gamma = 0.5;
        let target = part.owner_of_cell(&[0, 0]).unwrap();
        let count = ((1.0 + 2.0 * gamma) * n * masses.nu[target]).ceil() as usize;
        let coords = vec![0.0; 2 * count];
        let cloud = PointCloud::from_coords(spec.clone(), coords, n, 0).unwrap();
        let report = part.check_with_masses(&cloud, &masses, gamma).unwrap();
        let hits: Vec<_> = report.violations().map(|c| c.index.clone()).collect();
        assert!(hits.contains(&vec![0, 0]));
        assert_relative_eq!(
            report.cells[target].count as f64,
            count as f64
        );
        let json = serde_json::to_value(&report).unwrap();
        for key in ["gamma", "n", "cells", "overflow"] {
            assert!(json.get(key).is_some());
        }
        for key in ["index", "count", "nu", "lower", "upper", "violated"] {
            assert!(json["cells"][0].get(key).is_some());
        }
    }

    #[test]
    fn large_n_has_few_violations() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        let part = CubePartition::build(2, 1.0, 0.5, 5).unwrap();
        let masses = part.region_masses(&spec, 10_000).unwrap();
        let cloud = sample(&spec, 1e5, 9).unwrap();
        let report = part.check_with_masses(&cloud, &masses, 0.5).unwrap();
        assert_eq!(report.num_violations(), 0);
        assert!(report.max_relative_deviation < 0.2);
        assert!(report.chernoff_budget() < 1e-10);
    }

    #[test]
    fn axis_symmetries_permute_cell_counts() {
        let spec = DensitySpec::<f64>::gaussian(2).unwrap();
        let part = CubePartition::build(2, 1.7, 0.45, 0).unwrap();
        let cloud = sample(&spec, 5000.0, 21).unwrap();
        let transforms: [fn(&[f64]) -> Vec<f64>; 3] = [
            |p| vec![p[1], p[0]],
            |p| vec![-p[0], p[1]],
            |p| vec![-p[1], -p[0]],
        ];
        for t in transforms {
            let moved: Vec<f64> = cloud.points().flat_map(t).collect();
            let moved = PointCloud::from_coords(spec.clone(), moved, cloud.intensity(), 0).unwrap();
            let before = part.count_points(&cloud).unwrap();
            let after = part.count_points(&moved).unwrap();
            assert_eq!(before.overflow, after.overflow);
            let has_tie = |k: usize| part.attached_cells().iter().any(|c| c.tied && c.owner as usize == k);
            let mut checked = 0;
            for (k, index) in part.inner_cells().iter().enumerate() {
                let image = t_idx(t, index, &part);
                if has_tie(k) || has_tie(image) {
                    continue;
                }
                checked += 1;
                assert_eq!(before.counts[k], after.counts[image], "cell {index:?}");
            }
            assert!(2 * checked > part.num_regions());
        }
    }

    fn t_idx(t: fn(&[f64]) -> Vec<f64>, index: &[i64], part: &CubePartition<f64>) -> usize {
        let moved: Vec<i64> = t(&index.iter().map(|&i| i as f64).collect::<Vec<_>>())
            .into_iter()
            .map(|x| x as i64)
            .collect();
        part.owner_of_cell(&moved).unwrap()
    }

    #[test]
    fn f32_partition() {
        let p = CubePartition::<f32>::build(2, 1.0, 0.4, 0).unwrap();
        assert!(p.inner_cells().contains(&vec![0, 0]));
        assert_eq!(p.region_of(&[0.05f32, -0.1]), p.owner_of_cell(&[0, 0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn partition_is_total(d in 2usize..=3, r in 0.5f64..2.0, frac in 0.15f64..0.5, seed in any::<u64>()) {
            let side = r * frac;
            let part = CubePartition::<f64>::build(d, r, side, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..500 {
                let x = uniform_in_cube(&mut rng, d, r);
                let got = part.region_of(&x);
                let want = part.regions_by_definition(&x);
                match got {
                    None => prop_assert!(want.is_empty()),
                    Some(k) => prop_assert_eq!(want, vec![k]),
                }
            }
        }
    }
}
