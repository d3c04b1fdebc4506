use proptest::prelude::*;

use conlap::bundles::{operator_norm, BundleModel, TransportPerturbation};
use conlap::eigensolver::{gershgorin_upper_bound, smallest_eigenpairs_with, SolverOptions};
use conlap::geometry::ManifoldModel;
use conlap::nets::{build_net, estimate_measures, voronoi_assignment};
use conlap::operator::{assemble_graph_laplacian, assemble_weighted_laplacian, dirichlet_form, DiscreteSection, WeightScheme};
use conlap::rng;
use nalgebra::DMatrix;

fn model(which: u8) -> ManifoldModel {
    match which % 4 {
        0 => ManifoldModel::circle(1.3).unwrap(),
        1 => ManifoldModel::flat_torus(&[1.0, 0.8]).unwrap(),
        2 => ManifoldModel::unit_torus(3).unwrap(),
        _ => ManifoldModel::sphere(0.9).unwrap(),
    }
}

fn bundle(which: u8) -> BundleModel {
    match which % 5 {
        0 => BundleModel::trivial_real(ManifoldModel::circle(1.0).unwrap(), 2).unwrap(),
        1 => BundleModel::trivial_complex(ManifoldModel::unit_torus(2).unwrap(), 1).unwrap(),
        2 => BundleModel::flat_u1(ManifoldModel::flat_torus(&[1.0, 1.5]).unwrap(), &[0.3, 0.8]).unwrap(),
        3 => BundleModel::flat_u1(ManifoldModel::circle(2.0).unwrap(), &[0.25]).unwrap(),
        _ => BundleModel::tangent_sphere(1.0).unwrap(),
    }
}

/// Net spacing and a `rho` giving a few dozen points for each bundle.
fn scales(b: &BundleModel) -> (f64, f64) {
    match &b.base {
        ManifoldModel::Circle { length } => (0.03 * length, 0.12 * length),
        ManifoldModel::FlatTorus { .. } => (0.12, 0.35),
        ManifoldModel::Sphere2 { .. } => (0.35, 0.9),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_symmetric_and_matches_log(which in 0u8..4, seed in 0u64..10_000) {
        let m = model(which);
        let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
        let (x, y) = (m.random_point(&mut g), m.random_point(&mut g));
        let (dxy, dyx) = (m.distance(&x, &y), m.distance(&y, &x));
        prop_assert!((dxy - dyx).abs() <= 1e-12 * dxy.max(1.0));
        if let Ok(v) = m.log_map(&x, &y) {
            prop_assert!((v.norm() - dxy).abs() <= 1e-10 * dxy.max(1e-300));
        }
    }

    #[test]
    fn transports_are_unitary_and_symmetric(which in 0u8..5, seed in 0u64..10_000) {
        let b = bundle(which);
        let m = &b.base;
        let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
        let x = m.random_point(&mut g);
        let y = m.random_point_near(&x, 0.9 * m.injectivity_radius(), &mut g);
        let pxy = b.transport(&x, &y).unwrap().matrix;
        let pyx = b.transport(&y, &x).unwrap().matrix;
        let id = DMatrix::identity(b.rank(), b.rank());
        prop_assert!(operator_norm(&(pxy.adjoint() * &pxy - &id)) <= 1e-12);
        prop_assert!(operator_norm(&(&pxy * &pyx - &id)) <= 1e-12);
    }

    #[test]
    fn voronoi_counts_partition_the_samples(which in 0u8..4, seed in 0u64..1000, extra in 0usize..500) {
        let m = model(which);
        let eps = 0.3 * m.diameter();
        let net = build_net(&m, eps, seed).unwrap();
        let count = 100 * net.len() + extra;
        let assignment = voronoi_assignment(&net, count, seed);
        prop_assert_eq!(assignment.counts(net.len()).iter().sum::<usize>(), count);
        if let Ok(net) = estimate_measures(net, count, seed) {
            let total: f64 = net.measures().unwrap().iter().sum();
            prop_assert!((total - m.volume()).abs() <= 1e-12 * m.volume());
            for (p, &owner) in assignment.samples.iter().zip(&assignment.owner) {
                let d = m.distance(p, &net.points[owner as usize]);
                prop_assert!(d <= net.covering_radius_est + 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn form_identity_and_positivity(which in 0u8..5, seed in 0u64..1000, perturb in any::<bool>()) {
        let b = bundle(which);
        let (eps, rho) = scales(&b);
        let net = build_net(&b.base, eps, seed).unwrap();
        let mc = 400 * net.len();
        let net = estimate_measures(net, mc, seed).unwrap();
        let w = WeightScheme::graph(rho);
        let pert = perturb.then_some(TransportPerturbation { magnitude: 0.25, seed });
        let op = assemble_weighted_laplacian(&b, &net, &w, pert.as_ref()).unwrap();
        let weights = op.weights();
        let lambda = gershgorin_upper_bound(&op.hermitian());
        let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
        let u = DiscreteSection::random(net.len(), b.rank(), b.scalar_field(), &mut g);
        let v = DiscreteSection::random(net.len(), b.rank(), b.scalar_field(), &mut g);
        let lhs = op.apply(&u).weighted_inner(&v, &weights);
        let rhs = dirichlet_form(&b, &net, &w, pert.as_ref(), &u, &v).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * u.norm(&weights) * v.norm(&weights) * lambda);
        let uu = dirichlet_form(&b, &net, &w, pert.as_ref(), &u, &u).unwrap();
        prop_assert!(uu.re >= -1e-12 * lambda * u.norm(&weights).powi(2));
    }

    #[test]
    fn spectrum_shifts_with_the_operator(which in 0u8..5, seed in 0u64..1000) {
        let b = bundle(which);
        let (eps, rho) = scales(&b);
        let net = build_net(&b.base, eps, seed).unwrap();
        let mc = 400 * net.len();
        let net = estimate_measures(net, mc, seed).unwrap();
        let s = assemble_graph_laplacian(&b, &net, rho).unwrap().hermitian();
        let lambda = gershgorin_upper_bound(&s);
        let k = 4.min(s.dim());
        let opts = SolverOptions { tol: 1e-10, force_lanczos: true, seed, ..SolverOptions::default() };
        let base = smallest_eigenpairs_with(&s, k, &opts).unwrap();
        prop_assert!(base.eigenvalues[0] >= -1e-9 * lambda);
        for shift in [1.0, lambda] {
            let shifted = smallest_eigenpairs_with(&s.shifted(shift), k, &opts).unwrap();
            for (a, c) in base.eigenvalues.iter().zip(&shifted.eigenvalues) {
                prop_assert!((c - a - shift).abs() <= 1e-8 * (lambda + shift));
            }
        }
    }
}
