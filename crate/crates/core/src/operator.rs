//! Discrete rho-connection Laplacians on a measured net.
//!
//! For a net `{x_i}` with measures `mu_i`, weights `alpha`, `beta` and
//! transports `P_ij : E_{x_j} -> E_{x_i}` the operator is
//!
//! ```text
//! (A u)_i = 1/(2 alpha_i) sum_{d(x_i,x_j) < rho} beta_ij mu_j
//!           [ (I + P_ji^* P_ji) u_i - (P_ij + P_ji^*) u_j ]
//! ```
//!
//! which is the operator of the form
//! `D(u, v) = 1/2 sum_i sum_j beta_ij mu_i mu_j <Gamma_ij u, Gamma_ij v>`
//! in the inner product `<u, v>_alpha = sum_i alpha_i mu_i <u_i, v_i>`.
//! For unitary symmetric transports it collapses to
//! `1/alpha_i sum_j beta_ij mu_j (u_i - P_ij u_j)`, and unit `alpha` with
//! `beta = 2(n+2)/(nu_n rho^(n+2))` gives the graph connection Laplacian.
//!
//! Pairs are taken with strict inequality `d < rho`. The self pair has
//! `Gamma_ii = 0` and is skipped.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundles::{apply, BundleModel, ScalarField, Section, TransportPerturbation, C64};
use crate::error::{Error, Result};
use crate::geometry::{unit_ball_volume, ManifoldModel, ManifoldPoint};
use crate::nets::{voronoi_assignment, Net, SpatialIndex};
use crate::rng;

/// Square matrix of `r x r` complex blocks in block-CSR layout.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparse {
    n: usize,
    r: usize,
    field: ScalarField,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    /// Blocks in row-major order, `r * r` entries each.
    data: Vec<C64>,
}

impl BlockSparse {
    /// Builds from per-row block lists; each row must be sorted by column
    /// without duplicates.
    pub fn from_rows(n: usize, r: usize, field: ScalarField, rows: Vec<Vec<(usize, DMatrix<C64>)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::InvalidArgument(format!("expected {n} block rows, got {}", rows.len())));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut data = Vec::new();
        for row in rows {
            let mut last = None;
            for (j, b) in row {
                if j >= n || last.is_some_and(|l| j <= l) || b.nrows() != r || b.ncols() != r {
                    return Err(Error::InvalidArgument(format!("malformed block at column {j}")));
                }
                last = Some(j);
                cols.push(j);
                for a in 0..r {
                    for c in 0..r {
                        data.push(b[(a, c)]);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(BlockSparse { n, r, field, row_ptr, cols, data })
    }

    pub fn from_dense(m: &DMatrix<C64>, r: usize, field: ScalarField) -> Result<Self> {
        if m.nrows() != m.ncols() || r == 0 || m.nrows() % r != 0 {
            return Err(Error::InvalidArgument("dense matrix is not square in whole blocks".into()));
        }
        let n = m.nrows() / r;
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let b = m.view((i * r, j * r), (r, r)).into_owned();
                        b.iter().any(|z| *z != C64::new(0.0, 0.0)).then_some((j, b))
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(n, r, field, rows)
    }

    /// Number of block rows `N`.
    pub fn block_dim(&self) -> usize {
        self.n
    }

    /// Block size `r`.
    pub fn block_size(&self) -> usize {
        self.r
    }

    /// Scalar dimension `N r`.
    pub fn dim(&self) -> usize {
        self.n * self.r
    }

    pub fn field(&self) -> ScalarField {
        self.field
    }

    pub fn nnz_blocks(&self) -> usize {
        self.cols.len()
    }

    /// Stored blocks of row `i` as `(column, row-major entries)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &[C64])> {
        let rr = self.r * self.r;
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], &self.data[k * rr..(k + 1) * rr]))
    }

    pub fn block(&self, i: usize, j: usize) -> Option<DMatrix<C64>> {
        let k = self.row_ptr[i] + self.cols[self.row_ptr[i]..self.row_ptr[i + 1]].binary_search(&j).ok()?;
        let rr = self.r * self.r;
        Some(DMatrix::from_row_slice(self.r, self.r, &self.data[k * rr..(k + 1) * rr]))
    }

    /// `y = A x`, parallel over block rows.
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let r = self.r;
        y.par_chunks_mut(r).enumerate().for_each(|(i, out)| {
            out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for (j, b) in self.row(i) {
                let xj = &x[j * r..(j + 1) * r];
                for a in 0..r {
                    let mut acc = out[a];
                    for c in 0..r {
                        acc += b[a * r + c] * xj[c];
                    }
                    out[a] = acc;
                }
            }
        });
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let r = self.r;
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.n {
            for (j, b) in self.row(i) {
                for a in 0..r {
                    for c in 0..r {
                        m[(i * r + a, j * r + c)] = b[a * r + c];
                    }
                }
            }
        }
        m
    }

    /// Largest `|B_ij - B_ji^*|` entry; a missing mirror block counts as zero.
    pub fn hermitian_defect(&self) -> f64 {
        let r = self.r;
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, b) in self.row(i) {
                let mirror = self.block(j, i);
                for a in 0..r {
                    for c in 0..r {
                        let m = mirror.as_ref().map_or(C64::new(0.0, 0.0), |t| t[(c, a)].conj());
                        worst = worst.max((b[a * r + c] - m).norm());
                    }
                }
            }
        }
        worst
    }

    pub fn pattern_is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, _)| self.block(j, i).is_some()))
    }

    /// `D_left A D_right` for diagonal scalings given per block row.
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        let rr = self.r * self.r;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let s = left[i] * right[self.cols[k]];
                out.data[k * rr..(k + 1) * rr].iter_mut().for_each(|z| *z *= s);
            }
        }
        out
    }

    /// `A + s I`.
    pub fn shifted(&self, s: f64) -> Self {
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, DMatrix<C64>)> =
                    self.row(i).map(|(j, b)| (j, DMatrix::from_row_slice(self.r, self.r, b))).collect();
                match row.iter_mut().find(|(j, _)| *j == i) {
                    Some((_, b)) => *b += DMatrix::<C64>::identity(self.r, self.r) * C64::new(s, 0.0),
                    None => {
                        row.push((i, DMatrix::<C64>::identity(self.r, self.r) * C64::new(s, 0.0)));
                        row.sort_by_key(|e| e.0);
                    }
                }
                row
            })
            .collect();
        Self::from_rows(self.n, self.r, self.field, rows).expect("shift keeps the layout valid")
    }

    /// Writes the block-triplet text format:
    ///
    /// ```text
    /// N r nblocks real|complex
    /// i j re im re im ...        (one line per block, r*r entries row-major)
    /// ```
    ///
    /// with every number printed with 17 significant digits.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        let field = match self.field {
            ScalarField::Real => "real",
            ScalarField::Complex => "complex",
        };
        writeln!(w, "{} {} {} {}", self.n, self.r, self.nnz_blocks(), field)?;
        for i in 0..self.n {
            for (j, b) in self.row(i) {
                write!(w, "{i} {j}")?;
                for z in b {
                    write!(w, " {:.16e} {:.16e}", z.re, z.im)?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty triplet file".into()))??;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let (n, r, nb) = (num(h[0])?, num(h[1])?, num(h[2])?);
        let field = match h[3] {
            "real" => ScalarField::Real,
            "complex" => ScalarField::Complex,
            other => return Err(Error::Parse(format!("unknown field {other:?}"))),
        };
        let mut rows: Vec<Vec<(usize, DMatrix<C64>)>> = vec![Vec::new(); n];
        for _ in 0..nb {
            let line = lines.next().ok_or_else(|| Error::Parse("missing block line".into()))??;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 2 + 2 * r * r {
                return Err(Error::Parse(format!("block line has {} fields", t.len())));
            }
            let (i, j) = (num(t[0])?, num(t[1])?);
            if i >= n {
                return Err(Error::Parse(format!("row {i} out of range")));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
            let mut entries = Vec::with_capacity(r * r);
            for k in 0..r * r {
                entries.push(C64::new(f(t[2 + 2 * k])?, f(t[3 + 2 * k])?));
            }
            rows[i].push((j, DMatrix::from_row_slice(r, r, &entries)));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        Self::from_rows(n, r, field, rows)
    }
}

/// Choice of `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaScheme {
    Unit,
    /// `alpha(x) = rho^2 vol(B_rho(x))`.
    VolumeNormalized,
    /// `alpha = theta`, the net quadrature of `k_rho`.
    KernelTheta,
}

/// Choice of `beta` on pairs with `d < rho` (zero beyond).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaScheme {
    /// `2(n+2) / (nu_n rho^(n+2))`.
    Constant,
    UnitIndicator,
    /// `k_rho(x, y)`.
    Kernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub alpha: AlphaScheme,
    pub beta: BetaScheme,
    pub rho: f64,
}

/// `2(n+2) / (nu_n rho^(n+2))`.
pub fn graph_constant(n: usize, rho: f64) -> f64 {
    2.0 * (n as f64 + 2.0) / (unit_ball_volume(n) * rho.powi(n as i32 + 2))
}

impl WeightScheme {
    /// Unit `alpha` and constant `beta`: the graph connection Laplacian.
    pub fn graph(rho: f64) -> Self {
        WeightScheme { alpha: AlphaScheme::Unit, beta: BetaScheme::Constant, rho }
    }

    pub fn beta(&self, n: usize, d: f64) -> f64 {
        if d >= self.rho {
            return 0.0;
        }
        match self.beta {
            BetaScheme::Constant => graph_constant(n, self.rho),
            BetaScheme::UnitIndicator => 1.0,
            BetaScheme::Kernel => k_of_distance(n, self.rho, d),
        }
    }

    pub fn alpha_values(&self, net: &Net) -> Result<Vec<f64>> {
        let alpha = match self.alpha {
            AlphaScheme::Unit => vec![1.0; net.len()],
            AlphaScheme::VolumeNormalized => {
                // the models are homogeneous, so the ball volume is the same at every point
                vec![self.rho * self.rho * net.model.ball_volume(self.rho)?; net.len()]
            }
            AlphaScheme::KernelTheta => theta_on_net(net, self.rho)?,
        };
        if let Some(index) = alpha.iter().position(|a| !(*a > 0.0)) {
            return Err(Error::DegenerateWeight { index });
        }
        Ok(alpha)
    }
}

/// Fiber values at the net points, `rank` components per point.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSection {
    pub rank: usize,
    pub values: Vec<C64>,
}

impl DiscreteSection {
    pub fn zeros(n_points: usize, rank: usize) -> Self {
        DiscreteSection { rank, values: vec![C64::new(0.0, 0.0); n_points * rank] }
    }

    pub fn from_values(rank: usize, values: Vec<C64>) -> Result<Self> {
        if rank == 0 || values.len() % rank != 0 {
            return Err(Error::InvalidArgument("values do not split into whole fibers".into()));
        }
        Ok(DiscreteSection { rank, values })
    }

    /// Pointwise samples of a continuous section.
    pub fn sample(net: &Net, u: &dyn Section) -> Self {
        let values = net.points.par_iter().flat_map_iter(|p| u.eval(p)).collect();
        DiscreteSection { rank: u.rank(), values }
    }

    /// Entries uniform in `[-1, 1]` (real) or the unit disk (complex).
    pub fn random<R: Rng + ?Sized>(n_points: usize, rank: usize, field: ScalarField, g: &mut R) -> Self {
        let values = (0..n_points * rank)
            .map(|_| match field {
                ScalarField::Real => C64::new(2.0 * g.random::<f64>() - 1.0, 0.0),
                ScalarField::Complex => C64::from_polar(g.random::<f64>().sqrt(), std::f64::consts::TAU * g.random::<f64>()),
            })
            .collect();
        DiscreteSection { rank, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.rank
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> &[C64] {
        &self.values[i * self.rank..(i + 1) * self.rank]
    }

    pub fn scaled(&self, s: C64) -> Self {
        DiscreteSection { rank: self.rank, values: self.values.iter().map(|v| v * s).collect() }
    }

    /// `sum_i w_i <u_i, v_i>`, linear in `self`.
    pub fn weighted_inner(&self, other: &Self, w: &[f64]) -> C64 {
        (0..self.len())
            .map(|i| self.value(i).iter().zip(other.value(i)).map(|(a, b)| a * b.conj()).sum::<C64>() * w[i])
            .sum()
    }

    /// `||u||_Gamma = (sum_i mu_i |u_i|^2)^(1/2)`.
    pub fn norm(&self, mu: &[f64]) -> f64 {
        self.weighted_inner(self, mu).re.max(0.0).sqrt()
    }
}

/// An assembled `Delta_{alpha,beta}` together with its inner-product weights.
#[derive(Clone, Debug)]
pub struct ConnectionLaplacian {
    /// Acts on fiber values; self-adjoint in `<., .>_alpha`.
    pub matrix: BlockSparse,
    pub alpha: Vec<f64>,
    pub measures: Vec<f64>,
    pub rho: f64,
    /// `4 * covering radius < rho`; results outside this regime carry no
    /// convergence guarantee.
    pub regime_ok: bool,
}

impl ConnectionLaplacian {
    /// `alpha_i mu_i`.
    pub fn weights(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.measures).map(|(a, m)| a * m).collect()
    }

    pub fn apply(&self, u: &DiscreteSection) -> DiscreteSection {
        DiscreteSection { rank: u.rank, values: self.matrix.matvec(&u.values) }
    }

    /// `<u, v>_alpha`.
    pub fn inner(&self, u: &DiscreteSection, v: &DiscreteSection) -> C64 {
        u.weighted_inner(v, &self.weights())
    }

    /// `W^(1/2) A W^(-1/2)` with `W = diag(alpha_i mu_i)`: a Hermitian matrix
    /// with the same spectrum.
    pub fn hermitian(&self) -> BlockSparse {
        let w = self.weights();
        let left: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        let right: Vec<f64> = left.iter().map(|x| 1.0 / x).collect();
        self.matrix.scaled(&left, &right)
    }

    /// Maps an eigenvector of [`Self::hermitian`] back to fiber values.
    pub fn from_hermitian_coords(&self, v: &[C64]) -> DiscreteSection {
        let w = self.weights();
        let r = self.matrix.block_size();
        let values = v.iter().enumerate().map(|(k, z)| z / w[k / r].sqrt()).collect();
        DiscreteSection { rank: r, values }
    }
}

fn check_radius(net: &Net, rho: f64) -> Result<()> {
    let r_inj = net.model.injectivity_radius();
    if !(rho > 0.0 && rho < r_inj) {
        return Err(Error::RadiusOutOfRange { radius: rho, limit: r_inj });
    }
    Ok(())
}

/// Generic assembly from a transport callback `transport(i, j) = P_ij`.
///
/// `unitary_symmetric` selects the collapsed formula; otherwise the general
/// formula with `P_ji^*` terms is used.
pub fn assemble_with_transport<F>(
    net: &Net,
    weights: &WeightScheme,
    rank: usize,
    field: ScalarField,
    unitary_symmetric: bool,
    transport: F,
) -> Result<ConnectionLaplacian>
where
    F: Fn(usize, usize) -> DMatrix<C64> + Sync,
{
    let rho = weights.rho;
    check_radius(net, rho)?;
    let mu = net.measures()?;
    let alpha = weights.alpha_values(net)?;
    let n = net.model.dim();
    let lists = net.neighbor_lists(rho);
    let id = DMatrix::<C64>::identity(rank, rank);
    let rows: Vec<Vec<(usize, DMatrix<C64>)>> = (0..net.len())
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(lists[i].len() + 1);
            let mut diag_scalar = 0.0;
            let mut diag = DMatrix::<C64>::zeros(rank, rank);
            for &(j, d) in &lists[i] {
                let coef = weights.beta(n, d) * mu[j] / alpha[i];
                let p_ij = transport(i, j);
                if unitary_symmetric {
                    diag_scalar += coef;
                    row.push((j, p_ij * C64::new(-coef, 0.0)));
                } else {
                    let p_ji = transport(j, i);
                    let half = 0.5 * coef;
                    diag += (&id + p_ji.adjoint() * &p_ji) * C64::new(half, 0.0);
                    row.push((j, (p_ij + p_ji.adjoint()) * C64::new(-half, 0.0)));
                }
            }
            if unitary_symmetric {
                diag = &id * C64::new(diag_scalar, 0.0);
            }
            let at = row.partition_point(|(j, _)| *j < i);
            row.insert(at, (i, diag));
            row
        })
        .collect();
    Ok(ConnectionLaplacian {
        matrix: BlockSparse::from_rows(net.len(), rank, field, rows)?,
        alpha,
        measures: mu.to_vec(),
        rho,
        regime_ok: 4.0 * net.covering_radius_est < rho,
    })
}

/// Graph connection Laplacian
/// `c sum_{d(x_i,x_j)<rho} mu_j (u_i - P_ij u_j)`, `c = 2(n+2)/(nu_n rho^(n+2))`.
pub fn assemble_graph_laplacian(b: &BundleModel, net: &Net, rho: f64) -> Result<ConnectionLaplacian> {
    assemble_weighted_laplacian(b, net, &WeightScheme::graph(rho), None)
}

/// `Delta_{alpha,beta}` with optionally perturbed (non-unitary, asymmetric)
/// transports.
pub fn assemble_weighted_laplacian(
    b: &BundleModel,
    net: &Net,
    weights: &WeightScheme,
    perturbation: Option<&TransportPerturbation>,
) -> Result<ConnectionLaplacian> {
    if b.base != net.model {
        return Err(Error::InvalidArgument("bundle and net live on different models".into()));
    }
    let transport = PairTransport::new(b, net, perturbation);
    assemble_with_transport(net, weights, b.rank(), b.scalar_field(), perturbation.is_none(), |i, j| transport.get(i, j))
}

/// Transport between net points, with the optional perturbation applied.
struct PairTransport<'a> {
    b: &'a BundleModel,
    net: &'a Net,
    perturbation: Option<&'a TransportPerturbation>,
}

impl<'a> PairTransport<'a> {
    fn new(b: &'a BundleModel, net: &'a Net, perturbation: Option<&'a TransportPerturbation>) -> Self {
        PairTransport { b, net, perturbation }
    }

    fn get(&self, i: usize, j: usize) -> DMatrix<C64> {
        let p = self.b.transport_matrix(&self.net.points[i], &self.net.points[j]);
        match self.perturbation {
            None => p,
            Some(t) => p * t.factor(i, j, self.net.len(), self.b.rank(), self.b.scalar_field()),
        }
    }
}

/// `Gamma_xy(u) = u(x) - P_xy u(y)` for a continuous section.
pub fn gamma(b: &BundleModel, u: &dyn Section, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<Vec<C64>> {
    let p = b.transport(x, y)?;
    let moved = apply(&p.matrix, &u.eval(y));
    Ok(u.eval(x).iter().zip(&moved).map(|(a, c)| a - c).collect())
}

/// Direct evaluation of
/// `D_beta(u, v) = 1/2 sum_i sum_{j: d<rho} beta_ij mu_i mu_j <Gamma_ij u, Gamma_ij v>`.
pub fn dirichlet_form(
    b: &BundleModel,
    net: &Net,
    weights: &WeightScheme,
    perturbation: Option<&TransportPerturbation>,
    u: &DiscreteSection,
    v: &DiscreteSection,
) -> Result<C64> {
    check_radius(net, weights.rho)?;
    let mu = net.measures()?;
    let n = net.model.dim();
    let transport = PairTransport::new(b, net, perturbation);
    let lists = net.neighbor_lists(weights.rho);
    let rows: Vec<C64> = (0..net.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = C64::new(0.0, 0.0);
            for &(j, d) in &lists[i] {
                let p = transport.get(i, j);
                let gu = difference(u.value(i), &apply(&p, u.value(j)));
                let gv = difference(v.value(i), &apply(&p, v.value(j)));
                let dot: C64 = gu.iter().zip(&gv).map(|(a, c)| a * c.conj()).sum();
                acc += dot * (weights.beta(n, d) * mu[i] * mu[j]);
            }
            acc
        })
        .collect();
    Ok(rows.into_iter().sum::<C64>() * 0.5)
}

/// `D_beta(u, u)` for unperturbed transports.
pub fn dirichlet_energy(b: &BundleModel, net: &Net, weights: &WeightScheme, u: &DiscreteSection) -> Result<f64> {
    Ok(dirichlet_form(b, net, weights, None, u, u)?.re)
}

/// `sum_i sum_{j: d(x_i,x_j)<rho} mu_i mu_j |u_i - P_ij u_j|^2`, the net
/// version of `D^rho`.
pub fn pair_energy(b: &BundleModel, net: &Net, rho: f64, u: &DiscreteSection) -> Result<f64> {
    let w = WeightScheme { alpha: AlphaScheme::Unit, beta: BetaScheme::UnitIndicator, rho };
    Ok(2.0 * dirichlet_energy(b, net, &w, u)?)
}

/// `||delta u||^2 = (n+2)/(nu_n rho^(n+2)) sum_i sum_{j: d<rho} mu_i mu_j |Gamma_ij u|^2`.
pub fn discrete_energy(b: &BundleModel, net: &Net, rho: f64, u: &DiscreteSection) -> Result<f64> {
    Ok(0.5 * graph_constant(net.model.dim(), rho) * pair_energy(b, net, rho, u)?)
}

fn difference(a: &[C64], c: &[C64]) -> Vec<C64> {
    a.iter().zip(c).map(|(x, y)| x - y).collect()
}

/// `(Qu)(x_i)`: the mean of `P_{x_i y} u(y)` over the Monte Carlo samples `y`
/// of the Voronoi cell `V_i`.
///
/// With `quad_samples` and `seed` equal to the ones used for the measures,
/// the cells are exactly those that produced `mu_i`, and the mean equals
/// `(1/mu_i) int_{V_i} P_{x_i y} u(y) dy` under that quadrature. Running
/// means keep constant sections exact.
pub fn discretize_q(b: &BundleModel, net: &Net, u: &dyn Section, quad_samples: usize, seed: u64) -> Result<DiscreteSection> {
    let assignment = voronoi_assignment(net, quad_samples, seed);
    let n = net.len();
    let counts = assignment.counts(n);
    if let Some(index) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyCell { index });
    }
    let mut start = vec![0usize; n + 1];
    for i in 0..n {
        start[i + 1] = start[i] + counts[i];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; quad_samples];
    for (s, &o) in assignment.owner.iter().enumerate() {
        members[fill[o as usize]] = s;
        fill[o as usize] += 1;
    }
    let r = u.rank();
    let cells: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut mean = vec![C64::new(0.0, 0.0); r];
            for (k, &s) in members[start[i]..start[i + 1]].iter().enumerate() {
                let y = &assignment.samples[s];
                let moved = apply(&b.transport_matrix(&net.points[i], y), &u.eval(y));
                let inv = 1.0 / (k + 1) as f64;
                for (m, v) in mean.iter_mut().zip(&moved) {
                    *m += (v - *m) * inv;
                }
            }
            mean
        })
        .collect();
    Ok(DiscreteSection { rank: r, values: cells.into_iter().flatten().collect() })
}

/// `Q^* u(y) = P_{y x_i} u_i` with `x_i` the nearest net point.
pub struct ProlongedSection<'a> {
    bundle: &'a BundleModel,
    net: &'a Net,
    values: &'a DiscreteSection,
    index: SpatialIndex<'a>,
}

pub fn prolong_qstar<'a>(b: &'a BundleModel, net: &'a Net, u: &'a DiscreteSection) -> ProlongedSection<'a> {
    ProlongedSection {
        bundle: b,
        net,
        values: u,
        index: SpatialIndex::new(&net.model, &net.points, net.covering_radius_est.max(1e-12)),
    }
}

impl ProlongedSection<'_> {
    pub fn owner(&self, y: &ManifoldPoint) -> usize {
        self.index.nearest(y).0
    }
}

impl Section for ProlongedSection<'_> {
    fn rank(&self) -> usize {
        self.values.rank
    }

    fn eval(&self, y: &ManifoldPoint) -> Vec<C64> {
        let i = self.owner(y);
        apply(&self.bundle.transport_matrix(y, &self.net.points[i]), self.values.value(i))
    }
}

/// `psi(t) = (n+2)/(2 nu_n) (1 - t^2)` on `[0, 1]`, zero beyond.
pub fn kernel_psi(n: usize, t: f64) -> f64 {
    if (0.0..1.0).contains(&t) {
        (n as f64 + 2.0) / (2.0 * unit_ball_volume(n)) * (1.0 - t * t)
    } else {
        0.0
    }
}

fn k_of_distance(n: usize, rho: f64, d: f64) -> f64 {
    kernel_psi(n, d / rho) / rho.powi(n as i32)
}

/// `k_rho(x, y) = rho^(-n) psi(d(x, y) / rho)`.
pub fn kernel_k_rho(m: &ManifoldModel, rho: f64, x: &ManifoldPoint, y: &ManifoldPoint) -> f64 {
    k_of_distance(m.dim(), rho, m.distance(x, y))
}

/// `theta(x) = sum_j k_rho(x, x_j) mu_j` by net quadrature.
pub fn theta(net: &Net, rho: f64, x: &ManifoldPoint) -> Result<f64> {
    check_radius(net, rho)?;
    let mu = net.measures()?;
    let index = SpatialIndex::new(&net.model, &net.points, rho);
    let mut terms = Vec::new();
    index.for_each_within(x, rho, |j, d| terms.push((j, d)));
    terms.sort_by_key(|t| t.0);
    let n = net.model.dim();
    Ok(terms.iter().map(|(j, d)| k_of_distance(n, rho, *d) * mu[*j]).sum())
}

/// `theta(x_i)` at every net point, including the self term.
pub fn theta_on_net(net: &Net, rho: f64) -> Result<Vec<f64>> {
    check_radius(net, rho)?;
    let mu = net.measures()?;
    let n = net.model.dim();
    let lists = net.neighbor_lists(rho);
    Ok((0..net.len())
        .into_par_iter()
        .map(|i| {
            let mut t = k_of_distance(n, rho, 0.0) * mu[i];
            for &(j, d) in &lists[i] {
                t += k_of_distance(n, rho, d) * mu[j];
            }
            t
        })
        .collect())
}

/// `(I u)_i = theta_i^(-1) sum_j k_rho(x_i, x_j) mu_j P_ij u_j`, self term
/// included.
pub fn smoothing_i(b: &BundleModel, net: &Net, rho: f64, u: &DiscreteSection) -> Result<DiscreteSection> {
    let th = theta_on_net(net, rho)?;
    if let Some(index) = th.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::DegenerateWeight { index });
    }
    let mu = net.measures()?;
    let n = net.model.dim();
    let lists = net.neighbor_lists(rho);
    let r = u.rank;
    let rows: Vec<Vec<C64>> = (0..net.len())
        .into_par_iter()
        .map(|i| {
            let mut acc: Vec<C64> = u.value(i).iter().map(|v| v * (k_of_distance(n, rho, 0.0) * mu[i])).collect();
            for &(j, d) in &lists[i] {
                let moved = apply(&b.transport_matrix(&net.points[i], &net.points[j]), u.value(j));
                let w = k_of_distance(n, rho, d) * mu[j];
                for (a, m) in acc.iter_mut().zip(&moved) {
                    *a += m * w;
                }
            }
            acc.iter().map(|a| a / th[i]).collect()
        })
        .collect();
    Ok(DiscreteSection { rank: r, values: rows.into_iter().flatten().collect() })
}

/// `a = min_i (2 alpha_i)^(-1) sum_j beta_ij mu_j`, self term included. The
/// spectrum below `a` is discrete (below `2a` for unitary symmetric
/// transports).
pub fn essential_gap_bound(net: &Net, weights: &WeightScheme) -> Result<f64> {
    check_radius(net, weights.rho)?;
    let mu = net.measures()?;
    let alpha = weights.alpha_values(net)?;
    let n = net.model.dim();
    let lists = net.neighbor_lists(weights.rho);
    Ok((0..net.len())
        .map(|i| {
            let s = weights.beta(n, 0.0) * mu[i] + lists[i].iter().map(|&(j, d)| weights.beta(n, d) * mu[j]).sum::<f64>();
            s / (2.0 * alpha[i])
        })
        .fold(f64::INFINITY, f64::min))
}

/// One Monte Carlo evaluation of `int_{B_rho} S(x) dx` against
/// `nu_n rho^(n+2)/(n+2) tr S`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallIdentityTrial {
    pub n: usize,
    pub exact: f64,
    pub estimate: f64,
    pub std_error: f64,
}

impl BallIdentityTrial {
    /// `|estimate - exact|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        let d = (self.estimate - self.exact).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Integrates the identity form and `trials` random symmetric forms (entries
/// uniform in `[-1, 1]`) over the Euclidean `rho`-ball by uniform sampling of
/// the enclosing cube.
pub fn ball_identity_check(n: usize, rho: f64, trials: usize, samples: usize, seed: u64) -> Result<Vec<BallIdentityTrial>> {
    if n == 0 || n > 3 || !(rho > 0.0) || samples < 2 {
        return Err(Error::InvalidArgument(format!("ball identity needs 1 <= n <= 3, rho > 0, samples >= 2 (got {n}, {rho}, {samples})")));
    }
    let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
    let mut forms = vec![DMatrix::<f64>::identity(n, n)];
    for _ in 0..trials {
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| 2.0 * g.random::<f64>() - 1.0);
        forms.push((&a + a.transpose()) * 0.5);
    }
    let cube = (2.0 * rho).powi(n as i32);
    let exact_factor = unit_ball_volume(n) * rho.powi(n as i32 + 2) / (n as f64 + 2.0);
    Ok(forms
        .into_iter()
        .map(|s| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut x = [0.0; 3];
            for _ in 0..samples {
                for v in x.iter_mut().take(n) {
                    *v = rho * (2.0 * g.random::<f64>() - 1.0);
                }
                let r2: f64 = x[..n].iter().map(|v| v * v).sum();
                let f = if r2 < rho * rho {
                    let mut q = 0.0;
                    for a in 0..n {
                        for c in 0..n {
                            q += s[(a, c)] * x[a] * x[c];
                        }
                    }
                    cube * q
                } else {
                    0.0
                };
                sum += f;
                sum_sq += f * f;
            }
            let m = samples as f64;
            let mean = sum / m;
            let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
            BallIdentityTrial { n, exact: exact_factor * s.trace(), estimate: mean, std_error: (var / m).sqrt() }
        })
        .collect())
}
