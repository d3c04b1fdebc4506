//! Vector bundles with closed-form parallel transport over the model manifolds.
//!
//! Fiber components are always stored as complex numbers; real bundles simply
//! keep zero imaginary parts, so real and complex bundles share one
//! arithmetic path.
//!
//! Conventions:
//! * `transport(x, y)` is `P_xy : E_y -> E_x`, expressed in the canonical
//!   frames at `y` (columns) and `x` (rows).
//! * Flat U(1) bundles over a torus with holonomy `a` transport by
//!   `exp(2 pi i sum_j a_j D_j / L_j)` with `D` the chart displacement of `x`
//!   minus the nearest lift of `y`. The associated covariant derivative is
//!   `d - 2 pi i sum_j (a_j / L_j) dx_j` and the holonomy of the loop that
//!   winds once in direction `j` is `exp(2 pi i a_j)`.
//! * The tangent bundle of the sphere uses the frame `(e_theta, e_phi)`;
//!   see [`sphere_frame`] for the pole convention.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross3, dot3, scale3, sphere_frame, ManifoldModel, ManifoldPoint};
use crate::rng;

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarField {
    Real,
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BundleKind {
    TrivialReal { rank: usize },
    TrivialComplex { rank: usize },
    /// Flat Hermitian line bundle over a flat torus (or circle).
    FlatU1 { holonomy: Vec<f64> },
    /// Tangent bundle of the round 2-sphere with the Levi-Civita connection.
    TangentSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleModel {
    pub base: ManifoldModel,
    pub kind: BundleKind,
}

/// A vector in the fiber over `base`, in the canonical frame there.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberVector {
    pub base: ManifoldPoint,
    pub components: Vec<C64>,
}

impl FiberVector {
    pub fn norm(&self) -> f64 {
        fiber_norm(&self.components)
    }
}

/// `P_xy`: maps frame components at `source` (= y) to frame components at
/// `target` (= x).
#[derive(Clone, Debug, PartialEq)]
pub struct TransportMap {
    pub source: ManifoldPoint,
    pub target: ManifoldPoint,
    pub matrix: DMatrix<C64>,
}

impl TransportMap {
    pub fn apply(&self, v: &FiberVector) -> FiberVector {
        FiberVector { base: self.target, components: apply(&self.matrix, &v.components) }
    }
}

pub(crate) fn apply(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()).collect()
}

pub(crate) fn fiber_norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Operator 2-norm of a small matrix (largest singular value).
pub fn operator_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

impl BundleModel {
    pub fn new(base: ManifoldModel, kind: BundleKind) -> Result<Self> {
        base.validate()?;
        match (&base, &kind) {
            (_, BundleKind::TrivialReal { rank } | BundleKind::TrivialComplex { rank }) if *rank == 0 => {
                return Err(Error::InvalidModel("bundle rank must be at least 1".into()));
            }
            (ManifoldModel::Sphere2 { .. }, BundleKind::FlatU1 { .. }) => {
                return Err(Error::InvalidModel("flat U(1) bundles require a circle or torus base".into()));
            }
            (_, BundleKind::FlatU1 { holonomy }) => {
                if holonomy.len() != base.dim() {
                    return Err(Error::InvalidModel(format!(
                        "holonomy needs {} components, got {}",
                        base.dim(),
                        holonomy.len()
                    )));
                }
                if holonomy.iter().any(|a| !(0.0..1.0).contains(a)) {
                    return Err(Error::InvalidModel(format!("holonomy components must lie in [0,1): {holonomy:?}")));
                }
            }
            (ManifoldModel::Sphere2 { .. }, BundleKind::TangentSphere) => {}
            (_, BundleKind::TangentSphere) => {
                return Err(Error::InvalidModel("the tangent-sphere bundle requires a sphere base".into()));
            }
            _ => {}
        }
        Ok(BundleModel { base, kind })
    }

    pub fn trivial_real(base: ManifoldModel, rank: usize) -> Result<Self> {
        Self::new(base, BundleKind::TrivialReal { rank })
    }

    pub fn trivial_complex(base: ManifoldModel, rank: usize) -> Result<Self> {
        Self::new(base, BundleKind::TrivialComplex { rank })
    }

    pub fn flat_u1(base: ManifoldModel, holonomy: &[f64]) -> Result<Self> {
        Self::new(base, BundleKind::FlatU1 { holonomy: holonomy.to_vec() })
    }

    pub fn tangent_sphere(radius: f64) -> Result<Self> {
        Self::new(ManifoldModel::sphere(radius)?, BundleKind::TangentSphere)
    }

    /// `r(E)`.
    pub fn rank(&self) -> usize {
        match &self.kind {
            BundleKind::TrivialReal { rank } | BundleKind::TrivialComplex { rank } => *rank,
            BundleKind::FlatU1 { .. } => 1,
            BundleKind::TangentSphere => 2,
        }
    }

    pub fn scalar_field(&self) -> ScalarField {
        match self.kind {
            BundleKind::TrivialReal { .. } | BundleKind::TangentSphere => ScalarField::Real,
            BundleKind::TrivialComplex { .. } | BundleKind::FlatU1 { .. } => ScalarField::Complex,
        }
    }

    /// `K_E`: bound on the norm of the curvature of the connection.
    pub fn curvature_norm_bound(&self) -> f64 {
        match (&self.kind, &self.base) {
            (BundleKind::TangentSphere, ManifoldModel::Sphere2 { radius }) => 1.0 / (radius * radius),
            _ => 0.0,
        }
    }

    /// Connection 1-form coefficients `2 pi a_j / L_j` of a flat U(1) bundle.
    fn connection_form(&self) -> [f64; 3] {
        let mut form = [0.0; 3];
        if let BundleKind::FlatU1 { holonomy } = &self.kind {
            let periods = self.base.periods().expect("flat base");
            for (j, (a, l)) in holonomy.iter().zip(periods).enumerate() {
                form[j] = 2.0 * PI * a / l;
            }
        }
        form
    }

    /// Parallel transport `P_xy : E_y -> E_x` along the minimizing geodesic.
    pub fn transport(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<TransportMap> {
        let d = self.base.distance(x, y);
        let r_inj = self.base.injectivity_radius();
        if d >= r_inj {
            return Err(Error::BeyondInjectivity { what: "transport", distance: d, r_inj });
        }
        Ok(TransportMap { source: *y, target: *x, matrix: self.transport_matrix(x, y) })
    }

    /// `transport` without the injectivity check.
    pub(crate) fn transport_matrix(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> DMatrix<C64> {
        match &self.kind {
            BundleKind::TrivialReal { rank } | BundleKind::TrivialComplex { rank } => DMatrix::identity(*rank, *rank),
            BundleKind::FlatU1 { .. } => {
                let lift = self.base.lift_difference(x, y);
                let form = self.connection_form();
                // displacement of x relative to the lift of y is -lift
                let phase = -(0..3).map(|j| form[j] * lift[j]).sum::<f64>();
                DMatrix::from_element(1, 1, C64::from_polar(1.0, phase))
            }
            BundleKind::TangentSphere => sphere_transport(&self.base, x, y),
        }
    }

    /// Evaluates `Gamma_xy(u) = u(x) - P_xy u(y)` given the fiber values at
    /// `x` and `y`.
    pub fn gamma(&self, ux: &FiberVector, uy: &FiberVector) -> Result<FiberVector> {
        let p = self.transport(&ux.base, &uy.base)?;
        let moved = apply(&p.matrix, &uy.components);
        Ok(FiberVector { base: ux.base, components: ux.components.iter().zip(&moved).map(|(a, b)| a - b).collect() })
    }

    /// Sorted eigenvalues `lambda_1 <= ... <= lambda_count` of the connection
    /// Laplacian, with multiplicity.
    ///
    /// The tangent-sphere values come from the Hodge spectrum on 1-forms
    /// (`l(l+1)/R^2`, multiplicity `2(2l+1)`, `l >= 1`) shifted by the Ricci
    /// term `1/R^2` of the Weitzenboeck identity.
    pub fn analytic_spectrum(&self, count: usize) -> Result<Vec<f64>> {
        match (&self.kind, &self.base) {
            (BundleKind::TangentSphere, ManifoldModel::Sphere2 { radius }) => {
                Ok(sphere_series(count, *radius, 1, |l| 2 * (2 * l + 1), |l| (l * (l + 1)) as f64 - 1.0))
            }
            (BundleKind::TrivialReal { rank } | BundleKind::TrivialComplex { rank }, ManifoldModel::Sphere2 { radius }) => {
                Ok(sphere_series(count, *radius, 0, |l| (2 * l + 1) * rank, |l| (l * (l + 1)) as f64))
            }
            (_, ManifoldModel::Sphere2 { .. }) => Err(Error::Unsupported(format!("{:?} over the sphere", self.kind))),
            _ => Ok(flat_modes(self, count)?.into_iter().map(|m| m.eigenvalue).collect()),
        }
    }

    /// The eigensection of the `index`-th (0-based) analytic eigenvalue, for
    /// trivial and flat U(1) bundles over a circle or torus.
    pub fn analytic_eigensection(&self, index: usize) -> Result<FourierSection> {
        if matches!(self.base, ManifoldModel::Sphere2 { .. }) {
            return Err(Error::Unsupported("closed-form eigensections need a flat base".into()));
        }
        Ok(flat_modes(self, index + 1)?.swap_remove(index))
    }

    /// Holonomy of the loop winding once around the torus in direction `dir`,
    /// obtained by composing `steps` short transports.
    pub fn loop_holonomy(&self, dir: usize, steps: usize) -> Result<DMatrix<C64>> {
        let periods = self
            .base
            .periods()
            .ok_or_else(|| Error::Unsupported("loop holonomy needs a flat base".into()))?;
        let l = periods[dir];
        let mut coords = vec![0.0; self.base.chart_dim()];
        let mut prev = self.base.point(&coords)?;
        let mut total = DMatrix::<C64>::identity(self.rank(), self.rank());
        for s in 1..=steps {
            coords[dir] = l * s as f64 / steps as f64;
            let next = self.base.point(&coords)?;
            total = self.transport(&next, &prev)?.matrix * total;
            prev = next;
        }
        Ok(total)
    }
}

fn sphere_series(
    count: usize,
    radius: f64,
    l_min: usize,
    multiplicity: impl Fn(usize) -> usize,
    value: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut l = l_min;
    while out.len() < count {
        let v = value(l) / (radius * radius);
        for _ in 0..multiplicity(l) {
            if out.len() < count {
                out.push(v);
            }
        }
        l += 1;
    }
    out
}

/// Rotation of the sphere carrying `y` to `x` about `y x x`, written in the
/// frames at `y` and `x`.
fn sphere_transport(m: &ManifoldModel, x: &ManifoldPoint, y: &ManifoldPoint) -> DMatrix<C64> {
    let r = match m {
        ManifoldModel::Sphere2 { radius } => *radius,
        _ => unreachable!(),
    };
    let xh = scale3(&x.coords, 1.0 / r);
    let yh = scale3(&y.coords, 1.0 / r);
    let v = cross3(&yh, &xh);
    let c = dot3(&yh, &xh);
    let k = Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0);
    let rot = Matrix3::identity() + k + k * k / (1.0 + c);
    let (xt, xp) = sphere_frame(m, x);
    let (yt, yp) = sphere_frame(m, y);
    let ey = [yt, yp];
    let ex = [xt, xp];
    DMatrix::from_fn(2, 2, |i, j| {
        let col = rot * nalgebra::Vector3::from(ey[j]);
        C64::new(dot3(&ex[i], &[col[0], col[1], col[2]]), 0.0)
    })
}

/// A section that can be evaluated pointwise in the canonical frame.
pub trait Section: Sync {
    fn rank(&self) -> usize;
    fn eval(&self, x: &ManifoldPoint) -> Vec<C64>;
}

/// A constant section of a trivial (or flat, frame-wise) bundle.
#[derive(Clone, Debug)]
pub struct ConstantSection(pub Vec<C64>);

impl Section for ConstantSection {
    fn rank(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, _x: &ManifoldPoint) -> Vec<C64> {
        self.0.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeShape {
    /// `exp(i omega.x)`
    Exponential,
    /// `sqrt(2) cos(omega.x)` (or `1` at `omega = 0`)
    Cosine,
    /// `sqrt(2) sin(omega.x)`
    Sine,
}

/// A Fourier eigensection of a trivial or flat U(1) bundle over a flat base,
/// normalized so that the mean of `|u|^2` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSection {
    pub mode: Vec<i64>,
    pub component: usize,
    pub rank: usize,
    pub shape: ModeShape,
    pub eigenvalue: f64,
    /// `2 pi m_j / L_j`.
    omega: [f64; 3],
    /// `2 pi a_j / L_j`.
    connection: [f64; 3],
}

impl FourierSection {
    fn phase(&self, x: &ManifoldPoint) -> f64 {
        (0..3).map(|j| self.omega[j] * x.coords[j]).sum()
    }

    /// `|nabla u(x)|` in the norm `sum_i |nabla_{e_i} u|^2`.
    pub fn gradient_norm(&self, x: &ManifoldPoint) -> f64 {
        let shifted: f64 = (0..3).map(|j| (self.omega[j] - self.connection[j]).powi(2)).sum::<f64>().sqrt();
        match self.shape {
            ModeShape::Exponential => shifted,
            ModeShape::Cosine if self.mode.iter().all(|m| *m == 0) => 0.0,
            ModeShape::Cosine => 2f64.sqrt() * shifted * self.phase(x).sin().abs(),
            ModeShape::Sine => 2f64.sqrt() * shifted * self.phase(x).cos().abs(),
        }
    }
}

impl Section for FourierSection {
    fn rank(&self) -> usize {
        self.rank
    }

    fn eval(&self, x: &ManifoldPoint) -> Vec<C64> {
        let t = self.phase(x);
        let value = match self.shape {
            ModeShape::Exponential => C64::from_polar(1.0, t),
            ModeShape::Cosine if self.mode.iter().all(|m| *m == 0) => C64::new(1.0, 0.0),
            ModeShape::Cosine => C64::new(2f64.sqrt() * t.cos(), 0.0),
            ModeShape::Sine => C64::new(2f64.sqrt() * t.sin(), 0.0),
        };
        let mut out = vec![C64::new(0.0, 0.0); self.rank];
        out[self.component] = value;
        out
    }
}

/// The `count` lowest Fourier eigensections, sorted by eigenvalue (ties by
/// mode, shape and component).
fn flat_modes(b: &BundleModel, count: usize) -> Result<Vec<FourierSection>> {
    let periods = b.base.periods().ok_or_else(|| Error::Unsupported("flat base required".into()))?.to_vec();
    let connection = b.connection_form();
    let d = periods.len();
    let l_max = periods.iter().cloned().fold(0.0, f64::max);
    let rank = b.rank();
    let real = b.scalar_field() == ScalarField::Real;
    let mut bound: i64 = 1;
    loop {
        let mut out = Vec::new();
        let mut mode = vec![-bound; d];
        loop {
            let mut omega = [0.0; 3];
            for j in 0..d {
                omega[j] = 2.0 * PI * mode[j] as f64 / periods[j];
            }
            let eigenvalue: f64 = (0..d).map(|j| (omega[j] - connection[j]).powi(2)).sum();
            let section = |shape, component| FourierSection {
                mode: mode.clone(),
                component,
                rank,
                shape,
                eigenvalue,
                omega,
                connection,
            };
            let shapes: &[ModeShape] = if !real {
                &[ModeShape::Exponential]
            } else if mode.iter().all(|m| *m == 0) {
                &[ModeShape::Cosine]
            } else if mode.iter().find(|m| **m != 0).is_some_and(|m| *m > 0) {
                // one representative of each +-m pair carries cos and sin
                &[ModeShape::Cosine, ModeShape::Sine]
            } else {
                &[]
            };
            for &shape in shapes {
                for c in 0..rank {
                    out.push(section(shape, c));
                }
            }
            // odometer over [-bound, bound]^d
            let mut j = 0;
            while j < d && mode[j] == bound {
                mode[j] = -bound;
                j += 1;
            }
            if j == d {
                break;
            }
            mode[j] += 1;
        }
        out.sort_by(|a, b| {
            a.eigenvalue
                .total_cmp(&b.eigenvalue)
                .then_with(|| a.mode.cmp(&b.mode))
                .then_with(|| (a.shape as u8).cmp(&(b.shape as u8)))
                .then_with(|| a.component.cmp(&b.component))
        });
        // modes outside the box have some |m_j| > bound and eigenvalue at least
        // (2 pi (bound + 1 - 1) / L_max)^2 since |a_j| < 1
        let excluded = (2.0 * PI * bound as f64 / l_max).powi(2);
        if out.len() >= count && out[count - 1].eigenvalue <= excluded {
            out.truncate(count);
            return Ok(out);
        }
        bound *= 2;
        if bound > 1 << 20 {
            return Err(Error::InvalidArgument(format!("too many eigenvalues requested: {count}")));
        }
    }
}

/// Seeded bounded non-unitary perturbation of a discrete rho-connection.
///
/// The transport between net points `i != j` becomes `P_ij (I + magnitude G_ij)`
/// with `G_ij` drawn entrywise uniform from the unit disk (real bundles: from
/// `[-1, 1]`) and scaled by `1/rank`, so `|G_ij| <= 1`. `G_ij` and `G_ji` are
/// independent, which breaks both unitarity and symmetry. Each ordered pair
/// reads its own block of the ChaCha20 stream, so factors do not depend on
/// evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPerturbation {
    pub magnitude: f64,
    pub seed: u64,
}

impl TransportPerturbation {
    pub fn factor(&self, i: usize, j: usize, n_points: usize, rank: usize, field: ScalarField) -> DMatrix<C64> {
        let mut out = DMatrix::<C64>::identity(rank, rank);
        if i == j {
            return out;
        }
        let mut g = ChaCha20Rng::seed_from_u64(self.seed);
        g.set_stream(rng::STREAM_PERTURBATION);
        // each entry consumes at most 4 u64 draws (rejection loop bounded below)
        let words_per_pair = 16 * (rank * rank) as u128;
        g.set_word_pos((i as u128 * n_points as u128 + j as u128) * words_per_pair);
        let scale = self.magnitude / rank as f64;
        for a in 0..rank {
            for b in 0..rank {
                let z = match field {
                    ScalarField::Real => C64::new(2.0 * g.random::<f64>() - 1.0, 0.0),
                    ScalarField::Complex => {
                        let r = g.random::<f64>().sqrt();
                        C64::from_polar(r, 2.0 * PI * g.random::<f64>())
                    }
                };
                out[(a, b)] += z * scale;
            }
        }
        out
    }
}

/// Deviations between transporting `v in E_z` to `y` directly and through the
/// broken paths `z -> x_i -> y` and `z -> x_j -> x_i -> y`:
/// `(|P_{y xi} P_{xi z} v - P_{yz} v|, |P_{y xi} P_{xi xj} P_{xj z} v - P_{yz} v|)`.
pub fn path_comparison(
    b: &BundleModel,
    xi: &ManifoldPoint,
    xj: &ManifoldPoint,
    y: &ManifoldPoint,
    z: &ManifoldPoint,
    v: &[C64],
) -> Result<(f64, f64)> {
    let direct = apply(&b.transport(y, z)?.matrix, v);
    let p_y_xi = b.transport(y, xi)?.matrix;
    let via_i = apply(&p_y_xi, &apply(&b.transport(xi, z)?.matrix, v));
    let via_ji = apply(&p_y_xi, &apply(&b.transport(xi, xj)?.matrix, &apply(&b.transport(xj, z)?.matrix, v)));
    let dev = |w: &[C64]| fiber_norm(&w.iter().zip(&direct).map(|(a, c)| a - c).collect::<Vec<_>>());
    Ok((dev(&via_i), dev(&via_ji)))
}
