//! Closed-form Riemannian geometry of the model manifolds.
//!
//! Three models are supported: a circle of length `L`, a flat torus
//! `R^d / (L_1 Z x ... x L_d Z)` with `d <= 3`, and a round 2-sphere of radius
//! `R`. Circle and torus points are stored as chart coordinates reduced to the
//! fundamental domain; sphere points are ambient 3-vectors of norm `R`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest supported flat-torus dimension.
pub const MAX_TORUS_DIM: usize = 3;

/// Volume of the Euclidean unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * PI / n as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ManifoldModel {
    Circle { length: f64 },
    FlatTorus { lengths: Vec<f64> },
    Sphere2 { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub coords: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    /// Chart components for circle/torus, an ambient vector orthogonal to
    /// `base` for the sphere.
    pub components: [f64; 3],
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        norm3(&self.components)
    }
}

impl ManifoldModel {
    pub fn circle(length: f64) -> Result<Self> {
        let m = ManifoldModel::Circle { length };
        m.validate()?;
        Ok(m)
    }

    pub fn flat_torus(lengths: &[f64]) -> Result<Self> {
        let m = ManifoldModel::FlatTorus { lengths: lengths.to_vec() };
        m.validate()?;
        Ok(m)
    }

    /// The unit-side torus `R^d / Z^d`.
    pub fn unit_torus(d: usize) -> Result<Self> {
        Self::flat_torus(&vec![1.0; d])
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        let m = ManifoldModel::Sphere2 { radius };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self {
            ManifoldModel::Circle { length } if !positive(*length) => {
                Err(Error::InvalidModel(format!("circle length must be positive, got {length}")))
            }
            ManifoldModel::FlatTorus { lengths } => {
                if lengths.is_empty() || lengths.len() > MAX_TORUS_DIM {
                    return Err(Error::InvalidModel(format!(
                        "flat torus dimension must be in 1..={MAX_TORUS_DIM}, got {}",
                        lengths.len()
                    )));
                }
                if let Some(l) = lengths.iter().find(|l| !positive(**l)) {
                    return Err(Error::InvalidModel(format!("torus side lengths must be positive, got {l}")));
                }
                Ok(())
            }
            ManifoldModel::Sphere2 { radius } if !positive(*radius) => {
                Err(Error::InvalidModel(format!("sphere radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }

    /// Intrinsic dimension `n`.
    pub fn dim(&self) -> usize {
        match self {
            ManifoldModel::Circle { .. } => 1,
            ManifoldModel::FlatTorus { lengths } => lengths.len(),
            ManifoldModel::Sphere2 { .. } => 2,
        }
    }

    /// Number of stored coordinates per point.
    pub fn chart_dim(&self) -> usize {
        match self {
            ManifoldModel::Sphere2 { .. } => 3,
            _ => self.dim(),
        }
    }

    /// Side lengths of the periodic chart (circle and torus).
    pub fn periods(&self) -> Option<&[f64]> {
        match self {
            ManifoldModel::Circle { length } => Some(std::slice::from_ref(length)),
            ManifoldModel::FlatTorus { lengths } => Some(lengths),
            ManifoldModel::Sphere2 { .. } => None,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            ManifoldModel::Circle { length } => *length,
            ManifoldModel::FlatTorus { lengths } => lengths.iter().product(),
            ManifoldModel::Sphere2 { radius } => 4.0 * PI * radius * radius,
        }
    }

    /// Largest distance between two points.
    pub fn diameter(&self) -> f64 {
        match self {
            ManifoldModel::Circle { length } => 0.5 * length,
            ManifoldModel::FlatTorus { lengths } => 0.5 * lengths.iter().map(|l| l * l).sum::<f64>().sqrt(),
            ManifoldModel::Sphere2 { radius } => PI * radius,
        }
    }

    /// `(K_M, r_inj)`: bound on |sectional curvature| and injectivity radius.
    pub fn curvature_and_injectivity(&self) -> (f64, f64) {
        match self {
            ManifoldModel::Circle { length } => (0.0, 0.5 * length),
            ManifoldModel::FlatTorus { lengths } => (0.0, 0.5 * lengths.iter().cloned().fold(f64::INFINITY, f64::min)),
            ManifoldModel::Sphere2 { radius } => (1.0 / (radius * radius), PI * radius),
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        self.curvature_and_injectivity().1
    }

    /// Builds a point from coordinates, reducing chart coordinates to the
    /// fundamental domain and projecting ambient vectors onto the sphere.
    pub fn point(&self, coords: &[f64]) -> Result<ManifoldPoint> {
        if coords.len() != self.chart_dim() || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "expected {} finite coordinates, got {coords:?}",
                self.chart_dim()
            )));
        }
        let mut p = [0.0; 3];
        p[..coords.len()].copy_from_slice(coords);
        match self {
            ManifoldModel::Sphere2 { radius } => {
                let n = norm3(&p);
                if n == 0.0 {
                    return Err(Error::InvalidArgument("zero vector is not a sphere point".into()));
                }
                Ok(ManifoldPoint { coords: scale3(&p, radius / n) })
            }
            _ => {
                let periods = self.periods().expect("flat model");
                for (c, l) in p.iter_mut().zip(periods) {
                    *c = c.rem_euclid(*l);
                    // rem_euclid may round up to exactly l
                    if *c >= *l {
                        *c = 0.0;
                    }
                }
                Ok(ManifoldPoint { coords: p })
            }
        }
    }

    /// Coordinates of a point as a slice of length `chart_dim`.
    pub fn coords<'a>(&self, p: &'a ManifoldPoint) -> &'a [f64] {
        &p.coords[..self.chart_dim()]
    }

    /// Whether `p` satisfies the model's point invariants.
    pub fn contains(&self, p: &ManifoldPoint) -> bool {
        match self {
            ManifoldModel::Sphere2 { radius } => (norm3(&p.coords) - radius).abs() <= 1e-12 * radius,
            _ => {
                let periods = self.periods().expect("flat model");
                p.coords.iter().zip(periods).all(|(c, l)| (0.0..*l).contains(c))
                    && p.coords[periods.len()..].iter().all(|c| *c == 0.0)
            }
        }
    }

    /// Chart displacement from `x` to the nearest lift of `y`, each component
    /// in `[-L_i/2, L_i/2)`. Exact half-period differences resolve to the
    /// negative representative. Flat models only.
    pub fn lift_difference(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> [f64; 3] {
        let periods = self.periods().expect("lift_difference on a flat model");
        let mut d = [0.0; 3];
        for (i, l) in periods.iter().enumerate() {
            let mut t = (y.coords[i] - x.coords[i]).rem_euclid(*l);
            if t >= 0.5 * l {
                t -= l;
            }
            d[i] = t;
        }
        d
    }

    pub fn distance(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> f64 {
        match self {
            ManifoldModel::Sphere2 { radius } => {
                let cross = cross3(&x.coords, &y.coords);
                radius * norm3(&cross).atan2(dot3(&x.coords, &y.coords))
            }
            _ => norm3(&self.lift_difference(x, y)),
        }
    }

    /// A quantity that is strictly increasing in `distance(x, y)` and cheaper
    /// to evaluate: the squared chart distance on flat models and the squared
    /// chord on the sphere.
    pub fn distance_key(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> f64 {
        match self {
            ManifoldModel::Sphere2 { .. } => {
                let d = sub3(&x.coords, &y.coords);
                dot3(&d, &d)
            }
            _ => {
                let d = self.lift_difference(x, y);
                dot3(&d, &d)
            }
        }
    }

    /// Converts a geodesic distance to the matching `distance_key` value.
    pub fn key_of_distance(&self, r: f64) -> f64 {
        match self {
            ManifoldModel::Sphere2 { radius } => {
                let chord = 2.0 * radius * (0.5 * r.min(PI * radius) / radius).sin();
                chord * chord
            }
            _ => r * r,
        }
    }

    /// Inverse of `key_of_distance`.
    pub fn distance_of_key(&self, key: f64) -> f64 {
        match self {
            ManifoldModel::Sphere2 { radius } => {
                let half_chord = (0.5 * key.sqrt() / radius).min(1.0);
                2.0 * radius * half_chord.asin()
            }
            _ => key.sqrt(),
        }
    }

    /// Riemannian logarithm `exp_x^{-1}(y)`; defined while
    /// `d(x, y) < r_inj` (the minimizing geodesic is unique).
    pub fn log_map(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector> {
        let d = self.distance(x, y);
        let r_inj = self.injectivity_radius();
        if d >= r_inj {
            return Err(Error::BeyondInjectivity { what: "log_map", distance: d, r_inj });
        }
        let components = match self {
            ManifoldModel::Sphere2 { radius } => {
                let xh = scale3(&x.coords, 1.0 / radius);
                let yh = scale3(&y.coords, 1.0 / radius);
                let c = dot3(&xh, &yh);
                let w = sub3(&yh, &scale3(&xh, c));
                let s = norm3(&w);
                if s == 0.0 {
                    [0.0; 3]
                } else {
                    scale3(&w, d / s)
                }
            }
            _ => {
                // The torus cut locus is reached by any coordinate at exactly half a period.
                let diff = self.lift_difference(x, y);
                let periods = self.periods().expect("flat model");
                if diff.iter().zip(periods).any(|(t, l)| *t == -0.5 * l) {
                    return Err(Error::BeyondInjectivity { what: "log_map", distance: d, r_inj });
                }
                diff
            }
        };
        Ok(TangentVector { base: *x, components })
    }

    /// Riemannian exponential map.
    pub fn exp_map(&self, v: &TangentVector) -> ManifoldPoint {
        match self {
            ManifoldModel::Sphere2 { radius } => {
                let t = v.norm();
                if t == 0.0 {
                    return v.base;
                }
                let angle = t / radius;
                let dir = scale3(&v.components, 1.0 / t);
                let p = add3(&scale3(&v.base.coords, angle.cos()), &scale3(&dir, radius * angle.sin()));
                ManifoldPoint { coords: scale3(&p, radius / norm3(&p)) }
            }
            _ => {
                let p = add3(&v.base.coords, &v.components);
                self.point(&p[..self.chart_dim()]).expect("finite chart coordinates")
            }
        }
    }

    /// Projects an arbitrary vector onto the tangent space at `x`.
    pub fn tangent(&self, x: &ManifoldPoint, v: [f64; 3]) -> TangentVector {
        let components = match self {
            ManifoldModel::Sphere2 { radius } => {
                let xh = scale3(&x.coords, 1.0 / radius);
                sub3(&v, &scale3(&xh, dot3(&xh, &v)))
            }
            _ => {
                let mut c = [0.0; 3];
                c[..self.dim()].copy_from_slice(&v[..self.dim()]);
                c
            }
        };
        TangentVector { base: *x, components }
    }

    /// An orthonormal basis of `T_x M` (ambient components on the sphere).
    pub fn tangent_basis(&self, x: &ManifoldPoint) -> Vec<[f64; 3]> {
        match self {
            ManifoldModel::Sphere2 { .. } => {
                let (e_theta, e_phi) = sphere_frame(self, x);
                vec![e_theta, e_phi]
            }
            _ => (0..self.dim())
                .map(|i| {
                    let mut e = [0.0; 3];
                    e[i] = 1.0;
                    e
                })
                .collect(),
        }
    }

    /// Draws one point from the normalized Riemannian volume.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        match self {
            ManifoldModel::Sphere2 { radius } => {
                // Archimedes: the height is uniform on [-R, R].
                let z: f64 = radius * (2.0 * rng.random::<f64>() - 1.0);
                let phi: f64 = 2.0 * PI * rng.random::<f64>();
                let rho = (radius * radius - z * z).max(0.0).sqrt();
                let p = [rho * phi.cos(), rho * phi.sin(), z];
                ManifoldPoint { coords: scale3(&p, radius / norm3(&p)) }
            }
            _ => {
                let mut p = [0.0; 3];
                for (c, l) in p.iter_mut().zip(self.periods().expect("flat model")) {
                    *c = rng.random::<f64>() * l;
                    if *c >= *l {
                        *c = 0.0;
                    }
                }
                ManifoldPoint { coords: p }
            }
        }
    }

    /// Draws a point uniformly from the geodesic ball `B_r(x)` by pushing a
    /// uniform tangent vector of length `< r` through `exp_x`. The result is
    /// volume-uniform on flat models; on the sphere it is uniform in normal
    /// coordinates.
    pub fn random_point_near<R: Rng + ?Sized>(&self, x: &ManifoldPoint, r: f64, rng: &mut R) -> ManifoldPoint {
        let basis = self.tangent_basis(x);
        loop {
            let mut v = [0.0; 3];
            let mut norm2 = 0.0;
            for e in &basis {
                let c = (2.0 * rng.random::<f64>() - 1.0) * r;
                norm2 += c * c;
                v = add3(&v, &scale3(e, c));
            }
            if norm2 < r * r {
                return self.exp_map(&TangentVector { base: *x, components: v });
            }
        }
    }

    /// `count` points from the normalized Riemannian volume, reproducible for
    /// a fixed `seed`.
    pub fn sample_uniform(&self, count: usize, seed: u64) -> Vec<ManifoldPoint> {
        self.sample_stream(count, seed, rng::STREAM_DENSE_SAMPLE)
    }

    pub(crate) fn sample_stream(&self, count: usize, seed: u64, stream: u64) -> Vec<ManifoldPoint> {
        let mut rng = rng::stream(seed, stream);
        (0..count).map(|_| self.random_point(&mut rng)).collect()
    }

    /// Volume of a geodesic ball of radius `r` (independent of the center).
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        let r_inj = self.injectivity_radius();
        if !(r > 0.0 && r <= r_inj) {
            return Err(Error::RadiusOutOfRange { radius: r, limit: r_inj });
        }
        Ok(match self {
            ManifoldModel::Circle { .. } => 2.0 * r,
            ManifoldModel::FlatTorus { lengths } => unit_ball_volume(lengths.len()) * r.powi(lengths.len() as i32),
            ManifoldModel::Sphere2 { radius } => 2.0 * PI * radius * radius * (1.0 - (r / radius).cos()),
        })
    }
}

/// Distance from the pole below which the spherical frame is evaluated at a
/// point moved along the meridian `phi = 0`.
pub const POLE_GUARD: f64 = 1e-9;

/// The coordinate frame `(e_theta, e_phi)` of the sphere at `x`.
///
/// Points within `POLE_GUARD * R` of a pole use the frame of the point at
/// colatitude `POLE_GUARD` (or `pi - POLE_GUARD`) on the meridian `phi = 0`.
pub fn sphere_frame(m: &ManifoldModel, x: &ManifoldPoint) -> ([f64; 3], [f64; 3]) {
    let radius = match m {
        ManifoldModel::Sphere2 { radius } => *radius,
        _ => panic!("sphere_frame on a flat model"),
    };
    let [px, py, pz] = x.coords;
    let planar = (px * px + py * py).sqrt();
    let (theta, phi) = if planar < POLE_GUARD * radius {
        (if pz > 0.0 { POLE_GUARD } else { PI - POLE_GUARD }, 0.0)
    } else {
        (planar.atan2(pz), py.atan2(px))
    };
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    ([ct * cp, ct * sp, -st], [-sp, cp, 0.0])
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn add3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale3(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn models() -> Vec<ManifoldModel> {
        vec![
            ManifoldModel::circle(2.0 * PI).unwrap(),
            ManifoldModel::unit_torus(2).unwrap(),
            ManifoldModel::flat_torus(&[1.0, 2.0, 0.5]).unwrap(),
            ManifoldModel::sphere(1.0).unwrap(),
            ManifoldModel::sphere(2.5).unwrap(),
        ]
    }

    #[test]
    fn distance_examples() {
        let c = ManifoldModel::circle(2.0 * PI).unwrap();
        assert!((c.distance(&c.point(&[0.0]).unwrap(), &c.point(&[PI]).unwrap()) - PI).abs() < 1e-15);

        let t = ManifoldModel::unit_torus(2).unwrap();
        let d = t.distance(&t.point(&[0.0, 0.0]).unwrap(), &t.point(&[0.9, 0.0]).unwrap());
        assert!((d - 0.1).abs() < 1e-15);

        let s = ManifoldModel::sphere(1.0).unwrap();
        let d = s.distance(&s.point(&[0.0, 0.0, 1.0]).unwrap(), &s.point(&[1.0, 0.0, 0.0]).unwrap());
        // arccos(0) = pi/2
        assert!((d - 0.0f64.acos()).abs() < 1e-15);
    }

    #[test]
    fn log_map_examples() {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let v = t.log_map(&t.point(&[0.0, 0.0]).unwrap(), &t.point(&[0.9, 0.0]).unwrap()).unwrap();
        assert!((v.components[0] + 0.1).abs() < 1e-15 && v.components[1] == 0.0);

        let s = ManifoldModel::sphere(1.0).unwrap();
        let north = s.point(&[0.0, 0.0, 1.0]).unwrap();
        let v = s.log_map(&north, &s.point(&[1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!((v.components[0] - PI / 2.0).abs() < 1e-15);
        assert!(v.components[1].abs() < 1e-15 && v.components[2].abs() < 1e-15);

        for m in models() {
            let mut rng = rng::stream(3, 0);
            let x = m.random_point(&mut rng);
            assert_eq!(m.log_map(&x, &x).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn log_map_rejects_cut_locus() {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let err = t.log_map(&t.point(&[0.0, 0.0]).unwrap(), &t.point(&[0.5, 0.0]).unwrap());
        assert!(matches!(err, Err(Error::BeyondInjectivity { .. })));
        let s = ManifoldModel::sphere(1.0).unwrap();
        let err = s.log_map(&s.point(&[0.0, 0.0, 1.0]).unwrap(), &s.point(&[0.0, 0.0, -1.0]).unwrap());
        assert!(err.is_err());
    }

    #[test]
    fn half_period_tie_takes_negative_lift() {
        let c = ManifoldModel::circle(1.0).unwrap();
        let d = c.lift_difference(&c.point(&[0.0]).unwrap(), &c.point(&[0.5]).unwrap());
        assert_eq!(d[0], -0.5);
    }

    #[test]
    fn ball_volume_examples() {
        let c = ManifoldModel::circle(1.0).unwrap();
        assert!((c.ball_volume(0.3).unwrap() - 0.6).abs() < 1e-15);
        let t = ManifoldModel::unit_torus(2).unwrap();
        assert!((t.ball_volume(0.25).unwrap() - PI * 0.0625).abs() < 1e-15);
        let s = ManifoldModel::sphere(1.0).unwrap();
        assert!((s.ball_volume(PI / 2.0).unwrap() - 2.0 * PI).abs() < 1e-14);
        assert!(t.ball_volume(0.6).is_err());
        assert!(s.ball_volume(4.0).is_err());
    }

    #[test]
    fn curvature_and_injectivity_examples() {
        assert_eq!(ManifoldModel::unit_torus(2).unwrap().curvature_and_injectivity(), (0.0, 0.5));
        assert_eq!(ManifoldModel::sphere(1.0).unwrap().curvature_and_injectivity(), (1.0, PI));
        assert_eq!(ManifoldModel::sphere(2.0).unwrap().curvature_and_injectivity(), (0.25, 2.0 * PI));
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(ManifoldModel::circle(0.0).is_err());
        assert!(ManifoldModel::flat_torus(&[1.0, -1.0]).is_err());
        assert!(ManifoldModel::flat_torus(&[1.0; 4]).is_err());
        assert!(ManifoldModel::sphere(f64::NAN).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_in_domain() {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let a = t.sample_uniform(4, 1);
        assert_eq!(a, t.sample_uniform(4, 1));
        assert!(a.iter().all(|p| t.contains(p)));
        let c = ManifoldModel::circle(3.0).unwrap();
        let p = c.sample_uniform(1, 7);
        assert!(p.len() == 1 && (0.0..3.0).contains(&p[0].coords[0]));
    }

    #[test]
    fn sphere_sample_mean_is_small() {
        let s = ManifoldModel::sphere(2.0).unwrap();
        let pts = s.sample_uniform(100_000, 11);
        let mut mean = [0.0; 3];
        for p in &pts {
            mean = add3(&mean, &p.coords);
        }
        let mean = scale3(&mean, 1.0 / pts.len() as f64);
        // coordinate std is R / sqrt(3); 3-sigma of the mean norm is far below 0.02 R
        assert!(norm3(&mean) <= 0.02 * 2.0);
        assert!(pts.iter().all(|p| s.contains(p)));
    }

    #[test]
    fn distance_symmetry_and_log_consistency() {
        for (k, m) in models().into_iter().enumerate() {
            let mut rng = rng::stream(k as u64, 9);
            for _ in 0..1000 {
                let x = m.random_point(&mut rng);
                let y = m.random_point(&mut rng);
                let d = m.distance(&x, &y);
                assert!((d - m.distance(&y, &x)).abs() <= 1e-12 * d.max(1.0));
                if let Ok(v) = m.log_map(&x, &y) {
                    assert!((v.norm() - d).abs() <= 1e-10 * d);
                    let back = m.exp_map(&v);
                    assert!(m.distance(&back, &y) <= 1e-9 * m.diameter());
                }
            }
        }
    }

    #[test]
    fn ball_volume_matches_monte_carlo() {
        for (k, m) in models().into_iter().enumerate() {
            let r = 0.3 * m.injectivity_radius();
            let exact = m.ball_volume(r).unwrap();
            let mut rng = rng::stream(k as u64, 10);
            let samples = 200_000;
            let pts: Vec<_> = (0..samples).map(|_| m.random_point(&mut rng)).collect();
            for _ in 0..5 {
                let center = m.random_point(&mut rng);
                let hits = pts.iter().filter(|p| m.distance(&center, p) < r).count() as f64;
                let f = hits / samples as f64;
                let se = (f * (1.0 - f) / samples as f64).sqrt() * m.volume();
                assert!((f * m.volume() - exact).abs() <= 3.0 * se, "{m:?}: {} vs {exact}", f * m.volume());
            }
        }
    }

    #[test]
    fn sphere_frame_is_orthonormal_tangent() {
        let s = ManifoldModel::sphere(1.5).unwrap();
        let mut rng = rng::stream(5, 0);
        let mut pts: Vec<_> = (0..200).map(|_| s.random_point(&mut rng)).collect();
        pts.push(s.point(&[0.0, 0.0, 1.0]).unwrap());
        pts.push(s.point(&[0.0, 0.0, -1.0]).unwrap());
        for p in pts {
            let (a, b) = sphere_frame(&s, &p);
            assert!((norm3(&a) - 1.0).abs() < 1e-14 && (norm3(&b) - 1.0).abs() < 1e-14);
            assert!(dot3(&a, &b).abs() < 1e-14);
            assert!(dot3(&a, &p.coords).abs() < 1e-8 && dot3(&b, &p.coords).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn torus_points_reduce_to_fundamental_domain(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let t = ManifoldModel::flat_torus(&[1.0, 0.7]).unwrap();
            let p = t.point(&[x, y]).unwrap();
            prop_assert!(t.contains(&p));
        }

        #[test]
        fn sphere_triangle_inequality(seed in 0u64..500) {
            let s = ManifoldModel::sphere(1.3).unwrap();
            let mut rng = rng::stream(seed, 1);
            let (a, b, c) = (s.random_point(&mut rng), s.random_point(&mut rng), s.random_point(&mut rng));
            prop_assert!(s.distance(&a, &c) <= s.distance(&a, &b) + s.distance(&b, &c) + 1e-12);
        }
    }
}
