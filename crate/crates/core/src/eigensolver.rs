//! Smallest eigenpairs of Hermitian block-sparse matrices.
//!
//! The iterative path is block Lanczos on `Lambda I - A` (`Lambda` a
//! Gershgorin bound) with full reorthogonalization against the whole basis
//! and Rayleigh-Ritz on the projected matrix. A random start block of size
//! `k + 2` resolves eigenvalue multiplicities up to that size.
//!
//! The dense oracle uses nalgebra's Hermitian eigendecomposition
//! (Householder tridiagonalization followed by implicit QR), in the same
//! complex arithmetic as the iterative path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundles::C64;
use crate::error::{Error, Result};
use crate::operator::BlockSparse;
use crate::rng;

/// Dense oracle size limit.
pub const DENSE_LIMIT: usize = 2000;
/// At or below this dimension `smallest_eigenpairs` solves densely.
pub const DENSE_FALLBACK: usize = 1200;
pub const DEFAULT_TOL: f64 = 1e-8;

pub fn default_max_iter(k: usize) -> usize {
    10 * k + 200
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lanczos,
    Dense,
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    /// `lambda_1 <= ... <= lambda_k`.
    pub eigenvalues: Vec<f64>,
    /// `||A v - lambda v|| / Lambda` per pair, `v` of unit norm.
    pub residual_norms: Vec<f64>,
    /// Block Lanczos steps (0 for the dense path).
    pub iterations: usize,
    pub converged: Vec<bool>,
    pub method: Method,
    /// The Gershgorin bound `Lambda`.
    pub shift: f64,
    /// Smallest Ritz value after each Rayleigh-Ritz step.
    pub ritz_history: Vec<f64>,
    pub eigenvectors: Vec<Vec<C64>>,
}

impl SpectrumResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    /// Block steps; `None` means `10 k + 200`.
    pub max_iter: Option<usize>,
    pub seed: u64,
    /// Skip the dense fallback for small matrices.
    pub force_lanczos: bool,
    /// Defaults to `k + 2`.
    pub block_size: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: DEFAULT_TOL, max_iter: None, seed: 0, force_lanczos: false, block_size: None }
    }
}

/// `max_i sum_j |a_ij|` over scalar rows; at least the largest eigenvalue
/// modulus.
pub fn gershgorin_upper_bound(a: &BlockSparse) -> f64 {
    let r = a.block_size();
    (0..a.block_dim())
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; r];
            for (_, b) in a.row(i) {
                for (k, z) in b.iter().enumerate() {
                    sums[k / r] += z.norm();
                }
            }
            sums.into_iter().fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

pub fn smallest_eigenpairs(a: &BlockSparse, k: usize, tol: f64, max_iter: Option<usize>, seed: u64) -> Result<SpectrumResult> {
    smallest_eigenpairs_with(a, k, &SolverOptions { tol, max_iter, seed, ..SolverOptions::default() })
}

pub fn smallest_eigenpairs_with(a: &BlockSparse, k: usize, opts: &SolverOptions) -> Result<SpectrumResult> {
    let dim = a.dim();
    if k == 0 || k > dim {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={dim}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let shift = gershgorin_upper_bound(a);
    if dim <= DENSE_FALLBACK && !opts.force_lanczos {
        return dense_smallest(a, k, opts.tol, shift);
    }
    lanczos(a, k, opts, shift)
}

fn dense_smallest(a: &BlockSparse, k: usize, tol: f64, shift: f64) -> Result<SpectrumResult> {
    let (values, vectors) = dense_eigenpairs(a)?;
    let eigenvectors: Vec<Vec<C64>> = (0..k).map(|i| vectors.column(i).iter().cloned().collect()).collect();
    let scale = if shift > 0.0 { shift } else { 1.0 };
    let residual_norms: Vec<f64> = eigenvectors.iter().zip(&values).map(|(v, l)| residual(a, v, *l) / scale).collect();
    Ok(SpectrumResult {
        eigenvalues: values[..k].to_vec(),
        converged: residual_norms.iter().map(|r| *r <= tol).collect(),
        residual_norms,
        iterations: 0,
        method: Method::Dense,
        shift,
        ritz_history: vec![values[0]],
        eigenvectors,
    })
}

fn residual(a: &BlockSparse, v: &[C64], lambda: f64) -> f64 {
    let av = a.matvec(v);
    av.iter().zip(v).map(|(x, y)| (x - y * lambda).norm_sqr()).sum::<f64>().sqrt()
}

/// Full sorted spectrum of `a` by dense decomposition.
pub fn dense_reference_spectrum(a: &BlockSparse) -> Result<Vec<f64>> {
    Ok(dense_eigenpairs(a)?.0)
}

/// Sorted eigenvalues with matching unit eigenvectors as columns.
pub fn dense_eigenpairs(a: &BlockSparse) -> Result<(Vec<f64>, DMatrix<C64>)> {
    if a.dim() > DENSE_LIMIT {
        return Err(Error::DimensionTooLarge { dim: a.dim(), limit: DENSE_LIMIT });
    }
    let eig = a.to_dense().symmetric_eigen();
    let mut order: Vec<usize> = (0..a.dim()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.dim(), a.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Largest Rayleigh quotient of `a` over the span of `family`: by min-max,
/// an upper bound for `lambda_k` when the family has `k` independent members.
pub fn max_rayleigh_quotient(a: &BlockSparse, family: &[Vec<C64>]) -> Result<f64> {
    let mut basis: Vec<Vec<C64>> = Vec::new();
    for f in family {
        let mut v = f.clone();
        let before = norm(&v);
        for _ in 0..2 {
            orthogonalize(&mut v, &basis);
        }
        let after = norm(&v);
        if !(after > 1e-10 * before) {
            return Err(Error::InvalidArgument("trial family is linearly dependent".into()));
        }
        v.iter_mut().for_each(|z| *z /= after);
        basis.push(v);
    }
    let images: Vec<Vec<C64>> = basis.iter().map(|v| a.matvec(v)).collect();
    let m = basis.len();
    let h = DMatrix::from_fn(m, m, |i, j| dot(&basis[i], &images[j]));
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    Ok(h.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// `<x, y>` conjugate-linear in `x`.
fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// One classical Gram-Schmidt pass of `v` against an orthonormal basis.
fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) {
    if basis.is_empty() {
        return;
    }
    let coef: Vec<C64> = basis.par_iter().map(|q| dot(q, v)).collect();
    const CHUNK: usize = 1024;
    v.par_chunks_mut(CHUNK).enumerate().for_each(|(c, part)| {
        let off = c * CHUNK;
        for (q, s) in basis.iter().zip(&coef) {
            for (k, z) in part.iter_mut().enumerate() {
                *z -= q[off + k] * s;
            }
        }
    });
}

fn random_vector<R: Rng + ?Sized>(dim: usize, g: &mut R) -> Vec<C64> {
    (0..dim).map(|_| C64::new(2.0 * g.random::<f64>() - 1.0, 2.0 * g.random::<f64>() - 1.0)).collect()
}

/// Orthonormalizes `block` against `basis` and itself (twice), replacing
/// directions lost to breakdown with fresh random vectors.
fn extend_basis<R: Rng + ?Sized>(basis: &mut Vec<Vec<C64>>, block: Vec<Vec<C64>>, dim: usize, g: &mut R) -> usize {
    let mut added = 0;
    for mut v in block {
        if basis.len() >= dim {
            break;
        }
        for attempt in 0..4 {
            let before = norm(&v);
            orthogonalize(&mut v, basis);
            orthogonalize(&mut v, basis);
            let after = norm(&v);
            if after > 1e-10 * before && after > 0.0 {
                v.iter_mut().for_each(|z| *z /= after);
                basis.push(v);
                added += 1;
                break;
            }
            if attempt == 3 {
                return added;
            }
            v = random_vector(dim, g);
        }
    }
    added
}

fn lanczos(a: &BlockSparse, k: usize, opts: &SolverOptions, shift: f64) -> Result<SpectrumResult> {
    let dim = a.dim();
    let block = opts.block_size.unwrap_or(k + 2).clamp(1, dim);
    let max_iter = opts.max_iter.unwrap_or_else(|| default_max_iter(k));
    let scale = if shift > 0.0 { shift } else { 1.0 };
    let mut g = rng::stream(opts.seed, rng::STREAM_LANCZOS);

    // B = shift I - A; Ritz values of A are shift - theta
    let apply_b = |v: &[C64]| -> Vec<C64> { a.matvec(v).iter().zip(v).map(|(av, x)| x * shift - av).collect() };

    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut images: Vec<Vec<C64>> = Vec::new();
    let start: Vec<Vec<C64>> = (0..block).map(|_| random_vector(dim, &mut g)).collect();
    extend_basis(&mut basis, start, dim, &mut g);
    let mut h = DMatrix::<C64>::zeros(0, 0);

    let mut ritz_history = Vec::new();
    let mut next_check = 0usize;
    let mut iterations = 0;
    let mut current: (Vec<f64>, Vec<Vec<C64>>, Vec<f64>);

    loop {
        // images for the newest basis vectors and the matching columns of H
        let old = images.len();
        let fresh: Vec<Vec<C64>> = basis[old..].par_iter().map(|v| apply_b(v)).collect();
        images.extend(fresh);
        let m = basis.len();
        let mut grown = DMatrix::<C64>::zeros(m, m);
        grown.view_mut((0, 0), (old, old)).copy_from(&h);
        let cols: Vec<Vec<C64>> = (old..m).into_par_iter().map(|j| (0..m).map(|i| dot(&basis[i], &images[j])).collect()).collect();
        for (c, j) in (old..m).enumerate() {
            for i in 0..m {
                grown[(i, j)] = cols[c][i];
                grown[(j, i)] = cols[c][i].conj();
            }
        }
        for j in old..m {
            grown[(j, j)] = C64::new(grown[(j, j)].re, 0.0);
        }
        h = grown;
        iterations += 1;

        let exhausted = m >= dim;
        let last = exhausted || iterations > max_iter;
        if m >= next_check || last {
            next_check = m + m / 6 + block;
            let (values, vectors, residuals) = rayleigh_ritz(&h, &basis, &images, k.min(m), shift);
            ritz_history.push(values[0]);
            let done = values.len() == k && residuals.iter().all(|r| *r <= opts.tol * scale);
            current = (values, vectors, residuals);
            if done || last {
                break;
            }
        }

        // next block: B applied to the newest block, orthogonalized
        let newest: Vec<Vec<C64>> = images[old..].to_vec();
        if extend_basis(&mut basis, newest, dim, &mut g) == 0 {
            let fill: Vec<Vec<C64>> = (0..block).map(|_| random_vector(dim, &mut g)).collect();
            if extend_basis(&mut basis, fill, dim, &mut g) == 0 {
                let (values, vectors, residuals) = rayleigh_ritz(&h, &basis, &images, k.min(m), shift);
                ritz_history.push(values[0]);
                current = (values, vectors, residuals);
                break;
            }
        }
    }

    let (mut values, vectors, _) = current;
    // explicit residuals with A itself for the reported pairs
    let residual_norms: Vec<f64> = vectors.iter().zip(&values).map(|(v, l)| residual(a, v, *l) / scale).collect();
    let mut converged: Vec<bool> = residual_norms.iter().map(|r| *r <= opts.tol).collect();
    let mut eigenvectors = vectors;
    let mut residual_norms = residual_norms;
    while values.len() < k {
        values.push(f64::NAN);
        residual_norms.push(f64::INFINITY);
        converged.push(false);
        eigenvectors.push(vec![C64::new(0.0, 0.0); dim]);
    }
    Ok(SpectrumResult {
        eigenvalues: values,
        residual_norms,
        iterations,
        converged,
        method: Method::Lanczos,
        shift,
        ritz_history,
        eigenvectors,
    })
}

/// Smallest `k` Ritz pairs of `A` from the projected `B = shift I - A`, with
/// residual estimates `||B V y - theta V y|| = ||A v - lambda v||`.
fn rayleigh_ritz(h: &DMatrix<C64>, basis: &[Vec<C64>], images: &[Vec<C64>], k: usize, shift: f64) -> (Vec<f64>, Vec<Vec<C64>>, Vec<f64>) {
    let eig = h.clone().symmetric_eigen();
    let m = h.nrows();
    let mut order: Vec<usize> = (0..m).collect();
    // largest theta first, i.e. smallest lambda = shift - theta
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let dim = basis[0].len();
    let pairs: Vec<(f64, Vec<C64>, f64)> = order[..k]
        .par_iter()
        .map(|&c| {
            let y: DVector<C64> = eig.eigenvectors.column(c).into_owned();
            let theta = eig.eigenvalues[c];
            let mut v = vec![C64::new(0.0, 0.0); dim];
            let mut bv = vec![C64::new(0.0, 0.0); dim];
            for (i, yi) in y.iter().enumerate() {
                for ((a, b), (q, p)) in v.iter_mut().zip(bv.iter_mut()).zip(basis[i].iter().zip(&images[i])) {
                    *a += q * yi;
                    *b += p * yi;
                }
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|z| *z /= nv);
            bv.iter_mut().for_each(|z| *z /= nv);
            let res = bv.iter().zip(&v).map(|(b, x)| (b - x * theta).norm_sqr()).sum::<f64>().sqrt();
            (shift - theta, v, res)
        })
        .collect();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for (l, v, r) in pairs {
        values.push(l);
        vectors.push(v);
        residuals.push(r);
    }
    (values, vectors, residuals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundles::{BundleModel, ScalarField};
    use crate::geometry::ManifoldModel;
    use crate::nets::{build_net, estimate_measures, grid_net};
    use crate::operator::{assemble_graph_laplacian, graph_constant, ConnectionLaplacian};

    fn torus_operator(eps: f64, rho: f64, seed: u64) -> ConnectionLaplacian {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let net = build_net(&t, eps, seed).unwrap();
        let mc = 400 * net.len();
        let net = estimate_measures(net, mc, seed).unwrap();
        assemble_graph_laplacian(&BundleModel::flat_u1(t, &[0.3, 0.1]).unwrap(), &net, rho).unwrap()
    }

    fn lanczos_opts(tol: f64, seed: u64) -> SolverOptions {
        SolverOptions { tol, seed, force_lanczos: true, ..SolverOptions::default() }
    }

    #[test]
    fn gershgorin_examples() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(3.0, 0.0)]));
        let a = BlockSparse::from_dense(&diag, 1, ScalarField::Real).unwrap();
        assert!(gershgorin_upper_bound(&a) >= 3.0);
        let zero = BlockSparse::from_rows(3, 2, ScalarField::Real, vec![Vec::new(); 3]).unwrap();
        assert_eq!(gershgorin_upper_bound(&zero), 0.0);
        let spectrum = dense_reference_spectrum(&zero).unwrap();
        assert!(spectrum.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_point_example() {
        let m = ManifoldModel::circle(1.0).unwrap();
        let net = crate::nets::Net {
            points: vec![m.point(&[0.0]).unwrap(), m.point(&[0.3]).unwrap()],
            measures: Some(vec![0.4, 0.6]),
            covering_radius_est: 0.35,
            separation_est: 0.3,
            mc_samples: 0,
            seed: 0,
            measure_seed: None,
            kind: crate::nets::NetKind::FarthestPoint,
            model: m.clone(),
        };
        let op = assemble_graph_laplacian(&BundleModel::trivial_real(m, 1).unwrap(), &net, 0.45).unwrap();
        let s = op.hermitian();
        let c = graph_constant(1, 0.45);
        assert!(gershgorin_upper_bound(&s) >= c * (1.0 - 1e-12));
        for res in [smallest_eigenpairs(&s, 2, 1e-10, None, 1).unwrap(), smallest_eigenpairs_with(&s, 2, &lanczos_opts(1e-10, 1)).unwrap()] {
            assert!(res.eigenvalues[0].abs() < 1e-12 * c);
            assert!((res.eigenvalues[1] - c).abs() < 1e-12 * c);
        }
    }

    #[test]
    fn trivial_bundle_has_constant_kernel() {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let net = grid_net(&t, 0.015).unwrap();
        let op = assemble_graph_laplacian(&BundleModel::trivial_real(t, 1).unwrap(), &net, 0.2).unwrap();
        let s = op.hermitian();
        assert!(s.dim() > DENSE_FALLBACK);
        let res = smallest_eigenpairs(&s, 3, DEFAULT_TOL, None, 4).unwrap();
        assert_eq!(res.method, Method::Lanczos);
        assert!(res.all_converged());
        assert!(res.eigenvalues[0].abs() <= 1e-6 * res.shift);
        let v = op.from_hermitian_coords(&res.eigenvectors[0]);
        let phase = v.values[0];
        for z in &v.values {
            assert!((z - phase).norm() < 1e-6 * phase.norm());
        }
    }

    #[test]
    fn lanczos_matches_dense_oracle() {
        for seed in 0..3 {
            let op = torus_operator(0.08, 0.3, seed);
            let s = op.hermitian();
            let dense = dense_reference_spectrum(&s).unwrap();
            let res = smallest_eigenpairs_with(&s, 10, &lanczos_opts(1e-10, seed)).unwrap();
            assert!(res.all_converged(), "{:?}", res.residual_norms);
            for i in 0..10 {
                assert!((res.eigenvalues[i] - dense[i]).abs() <= 1e-8 * res.shift);
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let s = torus_operator(0.08, 0.3, 9).hermitian();
        let big = gershgorin_upper_bound(&s);
        let base = smallest_eigenpairs_with(&s, 6, &lanczos_opts(1e-9, 2)).unwrap();
        for shift in [0.0, 1.0, big] {
            let res = smallest_eigenpairs_with(&s.shifted(shift), 6, &lanczos_opts(1e-9, 2)).unwrap();
            for (a, b) in res.eigenvalues.iter().zip(&base.eigenvalues) {
                assert!((a - b - shift).abs() <= 1e-8 * (big + shift));
            }
        }
    }

    #[test]
    fn ritz_vectors_are_orthonormal_and_history_is_monotone() {
        let s = torus_operator(0.06, 0.3, 5).hermitian();
        let res = smallest_eigenpairs_with(&s, 8, &lanczos_opts(1e-9, 3)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let d = dot(&res.eigenvectors[i], &res.eigenvectors[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - C64::new(want, 0.0)).norm() < 1e-8);
            }
        }
        for w in res.ritz_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * res.shift, "{:?}", res.ritz_history);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let s = torus_operator(0.04, 0.3, 1).hermitian();
        let opts = SolverOptions { max_iter: Some(1), block_size: Some(2), ..lanczos_opts(1e-12, 1) };
        let res = smallest_eigenpairs_with(&s, 4, &opts).unwrap();
        assert!(!res.all_converged());
        assert_eq!(res.eigenvalues.len(), 4);
    }

    #[test]
    fn argument_errors() {
        let s = torus_operator(0.1, 0.3, 1).hermitian();
        assert!(smallest_eigenpairs(&s, 0, 1e-8, None, 0).is_err());
        assert!(smallest_eigenpairs(&s, s.dim() + 1, 1e-8, None, 0).is_err());
        assert!(smallest_eigenpairs(&s, 2, 0.0, None, 0).is_err());
        let t = ManifoldModel::unit_torus(2).unwrap();
        let net = grid_net(&t, 0.015).unwrap();
        let big = assemble_graph_laplacian(&BundleModel::trivial_real(t, 1).unwrap(), &net, 0.2).unwrap().hermitian();
        assert!(matches!(dense_reference_spectrum(&big), Err(Error::DimensionTooLarge { .. })));
    }

    #[test]
    fn flat_u1_dense_spectrum_is_real() {
        let s = torus_operator(0.1, 0.3, 2).hermitian();
        let d = s.to_dense();
        // Hermitian input: the oracle returns real values and a unitary basis
        let (values, vectors) = dense_eigenpairs(&s).unwrap();
        let recon = &vectors * DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|v| C64::new(*v, 0.0)))) * vectors.adjoint();
        let err = (recon - &d).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * gershgorin_upper_bound(&s));
    }

    #[test]
    fn min_max_upper_bound_holds_for_trial_families() {
        let s = torus_operator(0.08, 0.3, 3).hermitian();
        let res = smallest_eigenpairs_with(&s, 5, &lanczos_opts(1e-9, 3)).unwrap();
        let mut g = rng::stream(8, rng::STREAM_EXPERIMENT);
        for k in 1..=5 {
            let family: Vec<Vec<C64>> = (0..k).map(|_| random_vector(s.dim(), &mut g)).collect();
            let q = max_rayleigh_quotient(&s, &family).unwrap();
            assert!(res.eigenvalues[k - 1] <= q + 1e-8 * res.shift);
            // the exact eigenvectors attain the bound
            let exact = max_rayleigh_quotient(&s, &res.eigenvectors[..k]).unwrap();
            assert!((exact - res.eigenvalues[k - 1]).abs() <= 1e-7 * res.shift);
        }
    }

    #[test]
    fn lanczos_is_reproducible() {
        let s = torus_operator(0.06, 0.3, 4).hermitian();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = pool.install(|| smallest_eigenpairs_with(&s, 5, &lanczos_opts(1e-9, 6)).unwrap());
        let b = pool.install(|| smallest_eigenpairs_with(&s, 5, &lanczos_opts(1e-9, 6)).unwrap());
        assert_eq!(a.eigenvalues, b.eigenvalues);
        let c = smallest_eigenpairs_with(&s, 5, &lanczos_opts(1e-9, 6)).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&c.eigenvalues) {
            assert!((x - y).abs() <= 1e-9 * a.shift);
        }
    }
}
