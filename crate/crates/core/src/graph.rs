//! The random geometric graph `G(P_n, r)`: vertices are the cloud's points, with an edge
//! whenever two points are at distance strictly less than `r`.
//!
//! Edges are never stored. A uniform grid with cell side `r` limits candidate pairs to
//! the `3^d` neighbouring cells, and a union-find merges endpoints as pairs are found.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{norm, PointCloud};
use crate::scalar::Real;

/// Disjoint sets over `0..n` with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    sets: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            sets: n,
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Returns `true` when the two sets were distinct.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        self.sets -= 1;
        true
    }

    pub fn num_sets(&self) -> usize {
        self.sets
    }
}

/// Uniform grid over point indices, keyed by integer cell coordinates.
#[derive(Debug, Clone)]
pub struct SpatialGrid<T> {
    side: T,
    dimension: usize,
    cells: HashMap<Vec<i64>, Vec<u32>>,
}

impl<T: Real> SpatialGrid<T> {
    pub fn build(cloud: &PointCloud<T>, side: T) -> Self {
        let dimension = cloud.dimension();
        let mut cells: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        for (i, p) in cloud.points().enumerate() {
            cells.entry(cell_of(p, side)).or_default().push(i as u32);
        }
        SpatialGrid {
            side,
            dimension,
            cells,
        }
    }

    pub fn side(&self) -> T {
        self.side
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    /// Calls `visit(i, j)` once for every unordered pair in the same or adjacent cells.
    /// Cells are visited in sorted key order so the enumeration is deterministic.
    fn for_each_candidate_pair<F: FnMut(u32, u32)>(&self, mut visit: F) {
        let offsets = forward_offsets(self.dimension);
        let mut keys: Vec<&Vec<i64>> = self.cells.keys().collect();
        keys.sort_unstable();
        let mut probe = vec![0i64; self.dimension];
        for key in keys {
            let here = &self.cells[key];
            for (a, &i) in here.iter().enumerate() {
                for &j in &here[a + 1..] {
                    visit(i, j);
                }
            }
            for off in &offsets {
                for k in 0..self.dimension {
                    probe[k] = key[k] + off[k];
                }
                if let Some(there) = self.cells.get(probe.as_slice()) {
                    for &i in here {
                        for &j in there {
                            visit(i, j);
                        }
                    }
                }
            }
        }
    }
}

fn cell_of<T: Real>(p: &[T], side: T) -> Vec<i64> {
    p.iter()
        .map(|&c| (c / side).floor().to_i64().expect("cell index fits in i64"))
        .collect()
}

/// Offsets in `{-1, 0, 1}^d` whose first non-zero entry is positive: half of the
/// neighbourhood, so each adjacent cell pair is met exactly once.
fn forward_offsets(d: usize) -> Vec<Vec<i64>> {
    let total = 3usize.pow(d as u32);
    (0..total)
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let digit = (code % 3) as i64 - 1;
                    code /= 3;
                    digit
                })
                .collect::<Vec<i64>>()
        })
        .filter(|off| off.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0))
        .collect()
}

#[inline]
fn dist2<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// `G(P_n, r)` with its connected components.
#[derive(Debug, Clone)]
pub struct GeometricGraph<'a, T = f64> {
    cloud: &'a PointCloud<T>,
    radius: T,
    component_of: Vec<u32>,
    num_components: usize,
    degree: Vec<u32>,
    grid: SpatialGrid<T>,
}

impl<'a, T: Real> GeometricGraph<'a, T> {
    /// Builds the graph; `radius` must lie in `(0, 1]`.
    pub fn build(cloud: &'a PointCloud<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero() && radius <= T::one()) {
            return Err(Error::invalid(format!("graph radius must lie in (0, 1], got {radius}")));
        }
        Ok(Self::build_unchecked(cloud, radius))
    }

    /// As [`build`](Self::build) without the `r <= 1` restriction, for rescaled inputs.
    pub fn build_any_radius(cloud: &'a PointCloud<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::invalid(format!("graph radius must be positive, got {radius}")));
        }
        Ok(Self::build_unchecked(cloud, radius))
    }

    fn build_unchecked(cloud: &'a PointCloud<T>, radius: T) -> Self {
        let n = cloud.len();
        let grid = SpatialGrid::build(cloud, radius);
        let r2 = radius * radius;
        let mut uf = UnionFind::new(n);
        let mut degree = vec![0u32; n];
        grid.for_each_candidate_pair(|i, j| {
            if dist2(cloud.point(i as usize), cloud.point(j as usize)) < r2 {
                degree[i as usize] += 1;
                degree[j as usize] += 1;
                uf.union(i, j);
            }
        });
        // Labels numbered by first appearance in vertex order.
        let mut label_of_root: HashMap<u32, u32> = HashMap::new();
        let mut component_of = Vec::with_capacity(n);
        for v in 0..n as u32 {
            let root = uf.find(v);
            let next = label_of_root.len() as u32;
            component_of.push(*label_of_root.entry(root).or_insert(next));
        }
        GeometricGraph {
            cloud,
            radius,
            num_components: uf.num_sets(),
            component_of,
            degree,
            grid,
        }
    }

    pub fn cloud(&self) -> &PointCloud<T> {
        self.cloud
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.component_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.component_of.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn is_connected(&self) -> bool {
        self.num_components <= 1
    }

    /// Component label of every vertex, numbered from 0 in order of first appearance.
    pub fn component_of(&self) -> &[u32] {
        &self.component_of
    }

    pub fn degree(&self, v: usize) -> u32 {
        self.degree[v]
    }

    pub fn grid(&self) -> &SpatialGrid<T> {
        &self.grid
    }

    /// Calls `f(u, v)` with `u < v` for every edge.
    pub fn for_each_edge<F: FnMut(u32, u32)>(&self, mut f: F) {
        let r2 = self.radius * self.radius;
        self.grid.for_each_candidate_pair(|i, j| {
            if dist2(self.cloud.point(i as usize), self.cloud.point(j as usize)) < r2 {
                f(i.min(j), i.max(j));
            }
        });
    }

    /// Materialized, sorted edge list.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        self.for_each_edge(|u, v| out.push((u, v)));
        out.sort_unstable();
        out
    }

    /// Edge list as CSV with header `u,v`.
    pub fn write_edge_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v"])?;
        for (u, v) in self.edges() {
            w.write_record([u.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Vertex nearest the origin, ties to the lowest index.
    pub fn origin_vertex(&self) -> Option<usize> {
        origin_vertex(self.cloud)
    }

    /// Connectivity statistics; `probe_radii` select the balls `B(0, R)` in which
    /// isolated vertices are counted.
    pub fn stats(&self, probe_radii: &[T]) -> Result<ConnectivityStats<T>> {
        summarize(
            self.cloud,
            &self.component_of,
            self.num_components,
            |i| self.degree[i] == 0,
            probe_radii,
        )
    }
}

fn origin_vertex<T: Real>(cloud: &PointCloud<T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, p) in cloud.points().enumerate() {
        let r = norm(p);
        if best.is_none_or(|(_, b)| r < b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

fn summarize<T: Real, F: Fn(usize) -> bool>(
    cloud: &PointCloud<T>,
    component_of: &[u32],
    num_components: usize,
    isolated: F,
    probe_radii: &[T],
) -> Result<ConnectivityStats<T>> {
    if let Some(bad) = probe_radii.iter().find(|r| !(**r >= T::zero())) {
        return Err(Error::invalid(format!("probe radii must be non-negative, got {bad}")));
    }
    let Some(origin) = origin_vertex(cloud) else {
        return Ok(ConnectivityStats {
            is_connected: true,
            num_components: 0,
            r_c: T::zero(),
            r_max: T::zero(),
            isolated_within: probe_radii
                .iter()
                .map(|&radius| IsolatedCount { radius, count: 0 })
                .collect(),
            empty: true,
        });
    };
    let origin_label = component_of[origin];
    let mut r_c = T::zero();
    let mut r_max = T::zero();
    let mut isolated_norms = Vec::new();
    for (i, p) in cloud.points().enumerate() {
        let r = norm(p);
        r_max = r_max.max(r);
        if component_of[i] == origin_label {
            r_c = r_c.max(r);
        }
        if isolated(i) {
            isolated_norms.push(r);
        }
    }
    let isolated_within = probe_radii
        .iter()
        .map(|&radius| IsolatedCount {
            radius,
            count: isolated_norms.iter().filter(|&&r| r <= radius).count(),
        })
        .collect();
    Ok(ConnectivityStats {
        is_connected: num_components <= 1,
        num_components,
        r_c,
        r_max,
        isolated_within,
        empty: false,
    })
}

/// The statistics of [`GeometricGraph::stats`] without enumerating edges.
///
/// Points are bucketed into cells of diameter below `r`, so each cell is a clique. Cells
/// are merged with a union-find, and a pair of nearby cells is scanned only until one
/// edge is found, and only when it can still merge two components or reveal a neighbour
/// of a lone point. Cost grows with the number of occupied cells, not edges.
pub fn connectivity_stats<T: Real>(
    cloud: &PointCloud<T>,
    radius: T,
    probe_radii: &[T],
) -> Result<ConnectivityStats<T>> {
    if !(radius > T::zero() && radius <= T::one()) {
        return Err(Error::invalid(format!("graph radius must lie in (0, 1], got {radius}")));
    }
    let d = cloud.dimension();
    let r2 = radius * radius;
    let side = radius / T::lit(d as f64).sqrt() * T::lit(1.0 - 1e-6);

    let mut cell_id: HashMap<Vec<i64>, u32> = HashMap::new();
    let mut members: Vec<Vec<u32>> = Vec::new();
    let mut keys: Vec<Vec<i64>> = Vec::new();
    for (i, p) in cloud.points().enumerate() {
        let key = cell_of(p, side);
        let id = *cell_id.entry(key.clone()).or_insert_with(|| {
            members.push(Vec::new());
            keys.push(key);
            (members.len() - 1) as u32
        });
        members[id as usize].push(i as u32);
    }

    let reach = (radius / side).floor().to_i64().expect("small reach") + 1;
    let offsets: Vec<Vec<i64>> = box_offsets(d, reach)
        .into_iter()
        .filter(|off| {
            let gap: T = off
                .iter()
                .map(|&k| {
                    let g = T::lit((k.abs() - 1).max(0) as f64) * side;
                    g * g
                })
                .sum();
            gap < r2
        })
        .collect();

    let mut uf = UnionFind::new(members.len());
    let mut has_neighbour: Vec<bool> = vec![false; cloud.len()];
    for m in &members {
        if m.len() > 1 {
            for &i in m {
                has_neighbour[i as usize] = true;
            }
        }
    }
    let mut probe = vec![0i64; d];
    for (c, key) in keys.iter().enumerate() {
        for off in &offsets {
            for k in 0..d {
                probe[k] = key[k] + off[k];
            }
            let Some(&other) = cell_id.get(probe.as_slice()) else {
                continue;
            };
            let (here, there) = (&members[c], &members[other as usize]);
            let lonely = |m: &Vec<u32>| m.len() == 1 && !has_neighbour[m[0] as usize];
            if uf.find(c as u32) == uf.find(other) && !lonely(here) && !lonely(there) {
                continue;
            }
            let found = here.iter().find_map(|&i| {
                there
                    .iter()
                    .find(|&&j| dist2(cloud.point(i as usize), cloud.point(j as usize)) < r2)
                    .map(|&j| (i, j))
            });
            if let Some((i, j)) = found {
                uf.union(c as u32, other);
                has_neighbour[i as usize] = true;
                has_neighbour[j as usize] = true;
            }
        }
    }

    let mut label_of_root: HashMap<u32, u32> = HashMap::new();
    let mut component_of = vec![0u32; cloud.len()];
    for (c, m) in members.iter().enumerate() {
        let root = uf.find(c as u32);
        let next = label_of_root.len() as u32;
        let label = *label_of_root.entry(root).or_insert(next);
        for &i in m {
            component_of[i as usize] = label;
        }
    }
    summarize(cloud, &component_of, uf.num_sets(), |i| !has_neighbour[i], probe_radii)
}

/// Offsets in `{-reach..=reach}^d` whose first non-zero entry is positive.
fn box_offsets(d: usize, reach: i64) -> Vec<Vec<i64>> {
    let width = (2 * reach + 1) as usize;
    (0..width.pow(d as u32))
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let digit = (code % width) as i64 - reach;
                    code /= width;
                    digit
                })
                .collect::<Vec<i64>>()
        })
        .filter(|off| off.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IsolatedCount<T = f64> {
    pub radius: T,
    pub count: usize,
}

/// Summary of one graph's connectivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConnectivityStats<T = f64> {
    pub is_connected: bool,
    pub num_components: usize,
    /// Largest `|x|` in the component of the vertex nearest the origin.
    pub r_c: T,
    /// Largest `|x|` over all vertices.
    pub r_max: T,
    /// Isolated vertices (degree 0 in the whole graph) with `|x| <= radius`.
    pub isolated_within: Vec<IsolatedCount<T>>,
    /// Set for the empty graph, which counts as connected.
    pub empty: bool,
}

impl<T: Real> ConnectivityStats<T> {
    pub fn isolated_at(&self, radius: T) -> Option<usize> {
        self.isolated_within
            .iter()
            .find(|c| c.radius == radius)
            .map(|c| c.count)
    }
}
