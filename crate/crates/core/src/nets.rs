//! Epsilon-nets with Voronoi measures.
//!
//! Nets are built by greedy farthest-point sampling over a dense uniform
//! sample, or as regular grids on flat models. Measures are Monte Carlo
//! estimates of the Voronoi cell volumes (grid nets carry exact equal
//! measures instead).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldModel, ManifoldPoint};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    FarthestPoint,
    Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    pub model: ManifoldModel,
    pub kind: NetKind,
    pub points: Vec<ManifoldPoint>,
    /// `mu_i`, once estimated.
    pub measures: Option<Vec<f64>>,
    pub covering_radius_est: f64,
    pub separation_est: f64,
    /// Monte Carlo points behind `measures` (0 for exact grid measures).
    pub mc_samples: usize,
    pub seed: u64,
    pub measure_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    /// Expected number of dense samples per epsilon-ball.
    pub samples_per_ball: f64,
    /// Budget on the dense sample.
    pub max_dense_samples: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { samples_per_ball: 50.0, max_dense_samples: 4_000_000 }
    }
}

/// Default Monte Carlo sample count per net point for measure estimation.
pub const DEFAULT_MC_PER_POINT: usize = 400;

/// Farthest-point epsilon-net with default options.
pub fn build_net(m: &ManifoldModel, target_epsilon: f64, seed: u64) -> Result<Net> {
    build_net_with(m, target_epsilon, seed, &BuildOptions::default())
}

pub fn build_net_with(m: &ManifoldModel, target_epsilon: f64, seed: u64, opts: &BuildOptions) -> Result<Net> {
    m.validate()?;
    let r_inj = m.injectivity_radius();
    if !(target_epsilon > 0.0 && target_epsilon < r_inj) {
        return Err(Error::RadiusOutOfRange { radius: target_epsilon, limit: r_inj });
    }
    let per_ball = m.ball_volume(target_epsilon)?;
    let wanted = (opts.samples_per_ball * m.volume() / per_ball).ceil();
    if wanted > opts.max_dense_samples as f64 {
        return Err(Error::PointBudgetExceeded { budget: opts.max_dense_samples, epsilon: target_epsilon });
    }
    let dense = m.sample_uniform((wanted as usize).max(16), seed);

    let mut nearest_key = vec![f64::INFINITY; dense.len()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut next = 0usize;
    let target_key = m.key_of_distance(target_epsilon);
    let covering_key = loop {
        chosen.push(next);
        let center = dense[next];
        let (key, idx) = nearest_key
            .par_iter_mut()
            .zip(dense.par_iter())
            .enumerate()
            .map(|(i, (k, p))| {
                let d = m.distance_key(&center, p);
                if d < *k {
                    *k = d;
                }
                (*k, i)
            })
            .reduce(|| (f64::NEG_INFINITY, usize::MAX), farthest);
        if key <= target_key || m.distance_of_key(key) <= target_epsilon {
            break key;
        }
        next = idx;
    };

    let points: Vec<ManifoldPoint> = chosen.iter().map(|&i| dense[i]).collect();
    let covering_radius_est = m.distance_of_key(covering_key);
    let separation_est = separation(m, &points);
    Ok(Net {
        model: m.clone(),
        kind: NetKind::FarthestPoint,
        points,
        measures: None,
        covering_radius_est,
        separation_est,
        mc_samples: 0,
        seed,
        measure_seed: None,
    })
}

/// Larger key wins; ties go to the lower index.
fn farthest(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

/// Regular grid net on a circle or flat torus whose exact covering radius is
/// at most `target_epsilon`, with exact equal measures.
pub fn grid_net(m: &ManifoldModel, target_epsilon: f64) -> Result<Net> {
    let periods = m.periods().ok_or_else(|| Error::Unsupported("grid nets need a flat model".into()))?;
    if !(target_epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("target epsilon must be positive, got {target_epsilon}")));
    }
    let d = periods.len() as f64;
    let counts: Vec<usize> = periods.iter().map(|l| (l * d.sqrt() / (2.0 * target_epsilon)).ceil() as usize).collect();
    grid_net_with_counts(m, &counts)
}

/// Regular grid with `counts[a]` points along axis `a`.
pub fn grid_net_with_counts(m: &ManifoldModel, counts: &[usize]) -> Result<Net> {
    let periods = m.periods().ok_or_else(|| Error::Unsupported("grid nets need a flat model".into()))?;
    if counts.len() != periods.len() || counts.contains(&0) {
        return Err(Error::InvalidArgument(format!("grid counts {counts:?} do not match the model")));
    }
    let total: usize = counts.iter().product();
    let steps: Vec<f64> = periods.iter().zip(counts).map(|(l, k)| l / *k as f64).collect();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..total {
        let coords: Vec<f64> = idx.iter().zip(&steps).map(|(i, h)| *i as f64 * h).collect();
        points.push(m.point(&coords)?);
        for (a, i) in idx.iter_mut().enumerate() {
            *i += 1;
            if *i < counts[a] {
                break;
            }
            *i = 0;
        }
    }
    let covering_radius_est = steps.iter().map(|h| 0.25 * h * h).sum::<f64>().sqrt();
    let separation_est = if total == 1 {
        m.diameter()
    } else {
        steps.iter().zip(counts).filter(|(_, k)| **k > 1).map(|(h, _)| *h).fold(f64::INFINITY, f64::min)
    };
    Ok(Net {
        model: m.clone(),
        kind: NetKind::Grid,
        measures: Some(vec![m.volume() / total as f64; total]),
        points,
        covering_radius_est,
        separation_est,
        mc_samples: 0,
        seed: 0,
        measure_seed: None,
    })
}

/// Minimum pairwise distance; the diameter of the model for a single point.
fn separation(m: &ManifoldModel, points: &[ManifoldPoint]) -> f64 {
    if points.len() < 2 {
        return m.diameter();
    }
    // grow the search radius until every point sees a neighbor
    let mut radius = (m.volume() / points.len() as f64).powf(1.0 / m.dim() as f64);
    loop {
        let r = radius.min(m.diameter());
        let index = SpatialIndex::new(m, points, r);
        let best = (0..points.len())
            .into_par_iter()
            .map(|i| {
                let mut best = f64::INFINITY;
                index.for_each_within(&points[i], r, |j, d| {
                    if j != i && d < best {
                        best = d;
                    }
                });
                best
            })
            .reduce(|| f64::INFINITY, f64::min);
        if best.is_finite() || r >= m.diameter() {
            return best.min(m.diameter());
        }
        radius *= 2.0;
    }
}

/// Monte Carlo points together with the index of their Voronoi cell.
#[derive(Clone, Debug)]
pub struct VoronoiAssignment {
    pub samples: Vec<ManifoldPoint>,
    pub owner: Vec<u32>,
    /// `distance(sample, owner)`.
    pub distance: Vec<f64>,
}

impl VoronoiAssignment {
    pub fn counts(&self, n_points: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_points];
        for &o in &self.owner {
            counts[o as usize] += 1;
        }
        counts
    }
}

/// Assigns `count` uniform samples (stream determined by `seed`) to their
/// nearest net point, ties to the lowest index.
pub fn voronoi_assignment(net: &Net, count: usize, seed: u64) -> VoronoiAssignment {
    let m = &net.model;
    let samples = m.sample_stream(count, seed, rng::STREAM_VORONOI);
    let index = SpatialIndex::new(m, &net.points, net.covering_radius_est.max(1e-12));
    let nearest: Vec<(u32, f64)> = samples
        .par_iter()
        .map(|p| {
            let (i, _) = index.nearest(p);
            (i as u32, m.distance(p, &net.points[i]))
        })
        .collect();
    let (owner, distance) = nearest.into_iter().unzip();
    VoronoiAssignment { samples, owner, distance }
}

/// Fills `mu_i = vol(M) count_i / mc_samples` from a Monte Carlo Voronoi
/// assignment. The covering-radius estimate is raised to the largest
/// sample-to-owner distance seen, so every sample lies inside the ball of
/// its cell's center.
pub fn estimate_measures(mut net: Net, mc_samples: usize, seed: u64) -> Result<Net> {
    let n = net.points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("net has no points".into()));
    }
    if mc_samples < 100 * n {
        return Err(Error::InvalidArgument(format!("mc_samples {mc_samples} is below 100 N = {}", 100 * n)));
    }
    let assignment = voronoi_assignment(&net, mc_samples, seed);
    let counts = assignment.counts(n);
    if let Some(index) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyCell { index });
    }
    let vol = net.model.volume();
    net.measures = Some(counts.iter().map(|c| vol * *c as f64 / mc_samples as f64).collect());
    let farthest = assignment.distance.iter().cloned().fold(0.0, f64::max);
    net.covering_radius_est = net.covering_radius_est.max(farthest);
    net.mc_samples = mc_samples;
    net.measure_seed = Some(seed);
    Ok(net)
}

/// Covering radius (max distance from a fresh uniform sample to the net) and
/// separation (min pairwise net distance).
pub fn net_stats(net: &Net, samples: usize, seed: u64) -> (f64, f64) {
    let m = &net.model;
    let fresh = m.sample_stream(samples, seed, rng::STREAM_NET_STATS);
    let index = SpatialIndex::new(m, &net.points, net.covering_radius_est.max(1e-12));
    let covering = fresh
        .par_iter()
        .map(|p| m.distance(p, &net.points[index.nearest(p).0]))
        .reduce(|| 0.0, f64::max);
    (covering, separation(m, &net.points))
}

impl Net {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measures(&self) -> Result<&[f64]> {
        self.measures.as_deref().ok_or(Error::MissingMeasures)
    }

    /// Standard errors of the Monte Carlo measures (zeros for exact measures).
    pub fn measure_std_errors(&self) -> Result<Vec<f64>> {
        let mu = self.measures()?;
        let vol = self.model.volume();
        if self.mc_samples == 0 {
            return Ok(vec![0.0; mu.len()]);
        }
        let s = self.mc_samples as f64;
        Ok(mu.iter().map(|m| { let p = m / vol; vol * (p * (1.0 - p) / s).sqrt() }).collect())
    }

    /// For each net point, the other net points at distance `< radius`, as
    /// `(index, distance)` sorted by index.
    pub fn neighbor_lists(&self, radius: f64) -> Vec<Vec<(usize, f64)>> {
        let index = SpatialIndex::new(&self.model, &self.points, radius);
        (0..self.points.len())
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::new();
                index.for_each_within(&self.points[i], radius, |j, d| {
                    if j != i {
                        out.push((j, d));
                    }
                });
                out.sort_by_key(|e| e.0);
                out
            })
            .collect()
    }

    /// Index of the nearest net point (ties to the lowest index).
    pub fn nearest(&self, p: &ManifoldPoint) -> usize {
        SpatialIndex::new(&self.model, &self.points, self.covering_radius_est.max(1e-12)).nearest(p).0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetDocument = serde_json::from_str(text)?;
        doc.into_net()
    }
}

/// On-disk form of a [`Net`]. Floats use the shortest decimal that parses
/// back to the same `f64`, so documents round-trip bit-exactly.
#[derive(Serialize, Deserialize)]
struct NetDocument {
    model: ManifoldModel,
    kind: NetKind,
    points: Vec<Vec<f64>>,
    measures: Option<Vec<f64>>,
    covering_radius_est: f64,
    separation_est: f64,
    seed: u64,
    mc_samples: usize,
    #[serde(default)]
    measure_seed: Option<u64>,
}

impl From<&Net> for NetDocument {
    fn from(net: &Net) -> Self {
        NetDocument {
            model: net.model.clone(),
            kind: net.kind,
            points: net.points.iter().map(|p| net.model.coords(p).to_vec()).collect(),
            measures: net.measures.clone(),
            covering_radius_est: net.covering_radius_est,
            separation_est: net.separation_est,
            seed: net.seed,
            mc_samples: net.mc_samples,
            measure_seed: net.measure_seed,
        }
    }
}

impl NetDocument {
    fn into_net(self) -> Result<Net> {
        self.model.validate()?;
        let mut points = Vec::with_capacity(self.points.len());
        for c in &self.points {
            if c.len() != self.model.chart_dim() {
                return Err(Error::Parse(format!("point {c:?} has the wrong dimension")));
            }
            let mut p = ManifoldPoint { coords: [0.0; 3] };
            p.coords[..c.len()].copy_from_slice(c);
            if !self.model.contains(&p) {
                return Err(Error::Parse(format!("point {c:?} is not on the model")));
            }
            points.push(p);
        }
        if let Some(mu) = &self.measures {
            if mu.len() != points.len() || mu.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::Parse("measures must be positive, one per point".into()));
            }
        }
        Ok(Net {
            model: self.model,
            kind: self.kind,
            points,
            measures: self.measures,
            covering_radius_est: self.covering_radius_est,
            separation_est: self.separation_est,
            mc_samples: self.mc_samples,
            seed: self.seed,
            measure_seed: self.measure_seed,
        })
    }
}

/// Uniform cell grid over chart coordinates (flat models, periodic) or
/// ambient coordinates (sphere). Cells are at least as wide as the query
/// radius, so radius queries only visit adjacent cells.
pub(crate) struct SpatialIndex<'a> {
    model: &'a ManifoldModel,
    points: &'a [ManifoldPoint],
    axes: usize,
    periodic: bool,
    low: [f64; 3],
    cells: [usize; 3],
    width: [f64; 3],
    starts: Vec<usize>,
    entries: Vec<u32>,
}

const MAX_CELLS: usize = 1 << 21;

impl<'a> SpatialIndex<'a> {
    pub(crate) fn new(model: &'a ManifoldModel, points: &'a [ManifoldPoint], radius: f64) -> Self {
        let (axes, periodic, low, extent) = match model {
            ManifoldModel::Sphere2 { radius: r } => (3, false, [-r; 3], [2.0 * r; 3]),
            _ => {
                let p = model.periods().expect("flat model");
                let mut e = [1.0; 3];
                e[..p.len()].copy_from_slice(p);
                (p.len(), true, [0.0; 3], e)
            }
        };
        // radius in index coordinates (chord on the sphere)
        let reach = model.key_of_distance(radius).sqrt().max(1e-12);
        let mut cells = [1usize; 3];
        let mut width = [1.0; 3];
        let mut scale = 1.0;
        loop {
            let mut total = 1usize;
            for a in 0..axes {
                cells[a] = ((extent[a] / (reach * scale)).floor() as usize).clamp(1, MAX_CELLS);
                total = total.saturating_mul(cells[a]);
            }
            if total <= MAX_CELLS.max(4 * points.len()) {
                break;
            }
            scale *= 1.5;
        }
        for a in 0..axes {
            width[a] = extent[a] / cells[a] as f64;
        }
        let mut index = SpatialIndex {
            model,
            points,
            axes,
            periodic,
            low,
            cells,
            width,
            starts: Vec::new(),
            entries: Vec::new(),
        };
        let total: usize = cells[..axes].iter().product();
        let keys: Vec<usize> = points.iter().map(|p| index.flat_cell(&index.cell_of(p))).collect();
        let mut starts = vec![0usize; total + 1];
        for &k in &keys {
            starts[k + 1] += 1;
        }
        for c in 0..total {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut entries = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i as u32;
            fill[k] += 1;
        }
        index.starts = starts;
        index.entries = entries;
        index
    }

    fn cell_of(&self, p: &ManifoldPoint) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..self.axes {
            let t = ((p.coords[a] - self.low[a]) / self.width[a]).floor();
            c[a] = (t.max(0.0) as usize).min(self.cells[a] - 1);
        }
        c
    }

    fn flat_cell(&self, c: &[usize; 3]) -> usize {
        let mut k = 0;
        for a in (0..self.axes).rev() {
            k = k * self.cells[a] + c[a];
        }
        k
    }

    /// Distinct cell indices along axis `a` within one step of `c`.
    fn axis_range(&self, a: usize, c: usize) -> ([usize; 3], usize) {
        let n = self.cells[a];
        if self.periodic {
            match n {
                1 => ([0, 0, 0], 1),
                2 => ([c, 1 - c, 0], 2),
                _ => ([(c + n - 1) % n, c, (c + 1) % n], 3),
            }
        } else {
            let lo = c.saturating_sub(1);
            let hi = (c + 1).min(n - 1);
            let mut out = [0; 3];
            for (k, v) in (lo..=hi).enumerate() {
                out[k] = v;
            }
            (out, hi - lo + 1)
        }
    }

    fn for_each_candidate(&self, p: &ManifoldPoint, mut f: impl FnMut(usize)) {
        let c = self.cell_of(p);
        let ranges: Vec<([usize; 3], usize)> = (0..self.axes).map(|a| self.axis_range(a, c[a])).collect();
        let mut pos = [0usize; 3];
        loop {
            let mut cell = [0usize; 3];
            for a in 0..self.axes {
                cell[a] = ranges[a].0[pos[a]];
            }
            let k = self.flat_cell(&cell);
            for &e in &self.entries[self.starts[k]..self.starts[k + 1]] {
                f(e as usize);
            }
            let mut a = 0;
            while a < self.axes {
                pos[a] += 1;
                if pos[a] < ranges[a].1 {
                    break;
                }
                pos[a] = 0;
                a += 1;
            }
            if a == self.axes {
                break;
            }
        }
    }

    /// Calls `f(j, d(p, x_j))` for every point with `d(p, x_j) < radius`, where
    /// `radius` must not exceed the radius the index was built for.
    pub(crate) fn for_each_within(&self, p: &ManifoldPoint, radius: f64, mut f: impl FnMut(usize, f64)) {
        let key_limit = self.model.key_of_distance(radius) * (1.0 + 1e-9);
        self.for_each_candidate(p, |j| {
            let q = &self.points[j];
            if self.model.distance_key(p, q) <= key_limit {
                let d = self.model.distance(p, q);
                if d < radius {
                    f(j, d);
                }
            }
        });
    }

    /// Nearest point and its `distance_key`; ties go to the lowest index.
    pub(crate) fn nearest(&self, p: &ManifoldPoint) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        let consider = |j: usize, best: &mut (usize, f64)| {
            let k = self.model.distance_key(p, &self.points[j]);
            if k < best.1 || (k == best.1 && j < best.0) {
                *best = (j, k);
            }
        };
        self.for_each_candidate(p, |j| consider(j, &mut best));
        // anything outside the adjacent cells is at least one cell width away
        let guaranteed = self.width[..self.axes].iter().cloned().fold(f64::INFINITY, f64::min);
        if best.0 == usize::MAX || best.1.sqrt() >= guaranteed {
            best = (usize::MAX, f64::INFINITY);
            for j in 0..self.points.len() {
                consider(j, &mut best);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_nearest(m: &ManifoldModel, pts: &[ManifoldPoint], p: &ManifoldPoint) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, q) in pts.iter().enumerate() {
            let k = m.distance_key(p, q);
            if k < best.1 {
                best = (j, k);
            }
        }
        best.0
    }

    fn models() -> Vec<ManifoldModel> {
        vec![
            ManifoldModel::circle(1.0).unwrap(),
            ManifoldModel::unit_torus(2).unwrap(),
            ManifoldModel::flat_torus(&[1.0, 0.6, 0.8]).unwrap(),
            ManifoldModel::sphere(1.0).unwrap(),
        ]
    }

    #[test]
    fn spatial_index_matches_brute_force() {
        for m in models() {
            let pts = m.sample_uniform(300, 4);
            let mut g = rng::stream(5, 0);
            for radius in [0.05, 0.2, 0.45] {
                let index = SpatialIndex::new(&m, &pts, radius);
                for _ in 0..50 {
                    let p = m.random_point(&mut g);
                    let mut got = Vec::new();
                    index.for_each_within(&p, radius, |j, _| got.push(j));
                    got.sort();
                    let want: Vec<usize> = (0..pts.len()).filter(|&j| m.distance(&p, &pts[j]) < radius).collect();
                    assert_eq!(got, want, "{m:?} r={radius}");
                    assert_eq!(index.nearest(&p).0, brute_nearest(&m, &pts, &p));
                }
            }
        }
    }

    #[test]
    fn circle_net_point_count() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let net = build_net(&m, 0.3, 1).unwrap();
        // two balls of radius 0.3 can cover length 1.2 >= 1; greedy needs at most 4
        assert!((2..=4).contains(&net.len()), "N = {}", net.len());
        assert!(net.covering_radius_est <= 0.3);
    }

    #[test]
    fn coarse_nets_have_one_or_two_points() {
        for m in [ManifoldModel::circle(1.0).unwrap(), ManifoldModel::sphere(1.0).unwrap()] {
            let net = build_net(&m, 0.98 * m.injectivity_radius(), 3).unwrap();
            assert!(net.len() <= 2);
        }
    }

    #[test]
    fn nets_are_deterministic() {
        let m = ManifoldModel::sphere(1.0).unwrap();
        let a = estimate_measures(build_net(&m, 0.3, 9).unwrap(), 20_000, 9).unwrap();
        let b = estimate_measures(build_net(&m, 0.3, 9).unwrap(), 20_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn measures_are_worker_count_independent() {
        let m = ManifoldModel::unit_torus(2).unwrap();
        let net = build_net(&m, 0.1, 2).unwrap();
        let n = net.len();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = single.install(|| estimate_measures(net.clone(), 200 * n, 4).unwrap());
        let b = estimate_measures(net, 200 * n, 4).unwrap();
        assert_eq!(a.measures, b.measures);
    }

    #[test]
    fn build_rejects_bad_epsilon() {
        let m = ManifoldModel::unit_torus(2).unwrap();
        assert!(build_net(&m, 0.6, 1).is_err());
        assert!(matches!(
            build_net_with(&m, 1e-4, 1, &BuildOptions { samples_per_ball: 50.0, max_dense_samples: 10_000 }),
            Err(Error::PointBudgetExceeded { .. })
        ));
    }

    #[test]
    fn partition_and_containment() {
        for m in models() {
            let net = build_net(&m, 0.2 * m.injectivity_radius(), 7).unwrap();
            let mc = 400 * net.len();
            let net = estimate_measures(net, mc, 8).unwrap();
            let mu = net.measures().unwrap();
            assert!(mu.iter().all(|v| *v > 0.0));
            let total: f64 = mu.iter().sum();
            assert!((total - m.volume()).abs() <= 1e-9 * m.volume());
            let a = voronoi_assignment(&net, mc, 8);
            assert_eq!(a.counts(net.len()).iter().sum::<usize>(), mc);
            for (s, o) in a.samples.iter().zip(&a.owner) {
                assert!(m.distance(s, &net.points[*o as usize]) <= net.covering_radius_est + 1e-12);
            }
            assert!(net.separation_est <= 2.0 * net.covering_radius_est);
        }
    }

    #[test]
    fn two_point_circle_measures_split_evenly() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let mut net = grid_net_with_counts(&m, &[2]).unwrap();
        net.measures = None;
        let mc = 200_000;
        let net = estimate_measures(net, mc, 1).unwrap();
        let se = (0.25 / mc as f64).sqrt();
        for mu in net.measures().unwrap() {
            assert!((mu - 0.5).abs() <= 3.0 * se);
        }
    }

    #[test]
    fn single_point_measure_is_total_volume() {
        let m = ManifoldModel::sphere(1.0).unwrap();
        let net = build_net(&m, 3.1, 1).unwrap();
        let single = Net { points: net.points[..1].to_vec(), ..net };
        let est = estimate_measures(single, 1000, 2).unwrap();
        assert_eq!(est.measures().unwrap(), &[m.volume()]);
    }

    #[test]
    fn grid_measures_are_congruent() {
        let m = ManifoldModel::unit_torus(2).unwrap();
        let mut net = grid_net_with_counts(&m, &[5, 5]).unwrap();
        net.measures = None;
        let mc = 250_000;
        let net = estimate_measures(net, mc, 3).unwrap();
        let p: f64 = 1.0 / 25.0;
        let se = (p * (1.0 - p) / mc as f64).sqrt();
        for mu in net.measures().unwrap() {
            assert!((mu - p).abs() <= 3.5 * se, "{mu}");
        }
    }

    #[test]
    fn empty_cells_are_reported() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let mut net = grid_net_with_counts(&m, &[4]).unwrap();
        // a duplicate point never wins a tie, so its cell stays empty
        net.points.push(net.points[0]);
        net.measures = None;
        assert!(matches!(estimate_measures(net, 1000, 1), Err(Error::EmptyCell { index: 4 })));
    }

    #[test]
    fn net_stats_examples() {
        let m = ManifoldModel::circle(2.0).unwrap();
        let net = grid_net_with_counts(&m, &[1]).unwrap();
        let (cov, _) = net_stats(&net, 10_000, 1);
        assert!((cov - 1.0).abs() < 1e-3);

        let t = ManifoldModel::unit_torus(2).unwrap();
        let grid = grid_net_with_counts(&t, &[8, 8]).unwrap();
        let (_, sep) = net_stats(&grid, 1000, 1);
        assert!((sep - 0.125).abs() < 1e-12);

        let coarse = build_net(&t, 0.2, 5).unwrap();
        let fine = build_net(&t, 0.05, 5).unwrap();
        assert!(net_stats(&fine, 20_000, 2).0 <= net_stats(&coarse, 20_000, 2).0);
    }

    #[test]
    fn grid_net_covering_radius_meets_target() {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let net = grid_net(&t, 0.0125).unwrap();
        assert_eq!(net.len(), 57 * 57);
        assert!(net.covering_radius_est <= 0.0125);
        let (cov, _) = net_stats(&net, 50_000, 3);
        assert!(cov <= net.covering_radius_est + 1e-12);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = ManifoldModel::sphere(1.7).unwrap();
        let net = build_net(&m, 0.5, 21).unwrap();
        let net = estimate_measures(net.clone(), 400 * net.len(), 22).unwrap();
        let back = Net::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        for (a, b) in back.measures().unwrap().iter().zip(net.measures().unwrap()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn neighbor_lists_are_symmetric() {
        let m = ManifoldModel::sphere(1.0).unwrap();
        let net = build_net(&m, 0.15, 3).unwrap();
        let lists = net.neighbor_lists(0.4);
        for (i, l) in lists.iter().enumerate() {
            for (j, d) in l {
                assert!(*d < 0.4);
                assert!(lists[*j].iter().any(|(k, _)| *k == i));
            }
        }
    }
}
