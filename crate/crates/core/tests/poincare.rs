mod common;

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use pneumann::corpus::{generate_corpus, smooth_function, CorpusSpec};
use pneumann::grid::{CellField, Grid, GridFunction, RectDomain};
use pneumann::matrix_weight::{MatrixWeightField, Sym2};
use pneumann::neumann::SolverConfig;
use pneumann::poincare::{
    poincare_from_neumann, poincare_p2_eigen, poincare_rayleigh_max, rayleigh_quotient, riesz_pointwise_check,
    riesz_potential, two_weight_chain, EigenConfig, RayleighConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn anisotropic(grid: Grid, scale: f64) -> MatrixWeightField {
    let cells = grid
        .centers()
        .iter()
        .map(|[x, y]| Sym2::new(scale * (1.0 + x), scale * 0.3 * (x - y), scale * (0.5 + y * y)))
        .collect();
    MatrixWeightField::from_cells(grid, cells).unwrap()
}

/// Largest `fᵗ M̃ f / fᵗ K f` over the complement of the kernel of `K`.
fn dense_constant(q: &MatrixWeightField, v: &CellField) -> f64 {
    let k = common::stiffness(q);
    let m = common::mean_free_mass(v);
    let eig = SymmetricEigen::new(k);
    let top = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
    let mut basis = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &(eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
    }
    SymmetricEigen::new(basis.transpose() * m * basis).eigenvalues.max()
}

#[test]
fn eigen_estimate_matches_a_dense_generalized_eigensolve() {
    let grid = Grid::new(RectDomain::new(1.5, 1.0, [0.0, 0.0]).unwrap(), 9, 6).unwrap();
    let q = anisotropic(grid, 1.0);
    let v = grid.sample_cells(|x, y| 1.0 + x * y);
    let est = poincare_p2_eigen(&q, &v, &EigenConfig::default()).unwrap();
    let dense = dense_constant(&q, &v);
    assert!(est.converged);
    assert!((est.constant / dense - 1.0).abs() < 1e-8, "{} vs {dense}", est.constant);
}

#[test]
fn unit_square_and_rectangle_anchors() {
    let grid = Grid::unit_square(64).unwrap();
    let est = poincare_p2_eigen(&MatrixWeightField::identity(grid), &CellField::constant(grid, 1.0), &EigenConfig::default()).unwrap();
    assert!((est.constant * PI * PI - 1.0).abs() < 0.01, "{}", est.constant);
    let grid = Grid::new(RectDomain::new(2.0, 1.0, [0.0, 0.0]).unwrap(), 64, 32).unwrap();
    let est = poincare_p2_eigen(&MatrixWeightField::identity(grid), &CellField::constant(grid, 1.0), &EigenConfig::default()).unwrap();
    assert!((est.constant * PI * PI / 4.0 - 1.0).abs() < 0.01, "{}", est.constant);
}

#[test]
fn scaling_the_matrix_scales_the_constant() {
    let grid = Grid::unit_square(16).unwrap();
    let v = grid.sample_cells(|x, _| 1.0 + x);
    let a = poincare_p2_eigen(&anisotropic(grid, 1.0), &v, &EigenConfig::default()).unwrap().constant;
    let b = poincare_p2_eigen(&anisotropic(grid, 4.0), &v, &EigenConfig::default()).unwrap().constant;
    assert!((a / b - 4.0).abs() < 1e-8);
    // and v → 3v triples it
    let v3 = CellField { grid, values: v.values.iter().map(|w| 3.0 * w).collect() };
    let c = poincare_p2_eigen(&anisotropic(grid, 1.0), &v3, &EigenConfig::default()).unwrap().constant;
    assert!((c / (3.0 * a) - 1.0).abs() < 1e-8);
}

#[test]
fn larger_matrices_give_smaller_constants() {
    let grid = Grid::unit_square(16).unwrap();
    let v = CellField::constant(grid, 1.0);
    let small = anisotropic(grid, 1.0);
    let bigger = MatrixWeightField::from_cells(
        grid,
        small.cells.iter().zip(grid.centers()).map(|(m, [x, _])| Sym2::new(m.xx + x, m.xy, m.yy + 0.5)).collect(),
    )
    .unwrap();
    let k1 = poincare_p2_eigen(&small, &v, &EigenConfig::default()).unwrap().constant;
    let k2 = poincare_p2_eigen(&bigger, &v, &EigenConfig::default()).unwrap().constant;
    assert!(k2 < k1);
}

#[test]
fn rayleigh_ascent_agrees_with_eigen_at_p2() {
    let grid = Grid::unit_square(16).unwrap();
    let q = anisotropic(grid, 1.0);
    let v = grid.sample_cells(|x, y| 0.5 + x + y);
    let eig = poincare_p2_eigen(&q, &v, &EigenConfig::default()).unwrap();
    let ray = poincare_rayleigh_max(&q, &v, 2.0, &RayleighConfig::default()).unwrap();
    assert!((ray.constant / eig.constant - 1.0).abs() < 0.01, "{} vs {}", ray.constant, eig.constant);
    // the ascent's extremizer really attains its value
    let ext = ray.extremizer.unwrap();
    assert!((rayleigh_quotient(&ext, &q, &v, 2.0).unwrap() / ray.constant - 1.0).abs() < 1e-10);
}

#[test]
fn rayleigh_values_bound_every_trial_function() {
    let grid = Grid::unit_square(16).unwrap();
    let q = MatrixWeightField::identity(grid);
    let v = CellField::constant(grid, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in [1.5, 3.0] {
        let est = poincare_rayleigh_max(&q, &v, p, &RayleighConfig::default()).unwrap();
        assert!(est.converged, "p={p}: {:?}", est.flags);
        for _ in 0..20 {
            let f = smooth_function(grid, &mut rng, 4, 1.0);
            assert!(rayleigh_quotient(&f, &q, &v, p).unwrap() <= est.constant * (1.0 + 1e-9));
        }
        let cos = grid.sample_nodes(|x, _| (PI * x).cos());
        assert!(rayleigh_quotient(&cos, &q, &v, p).unwrap() <= est.constant * (1.0 + 1e-9));
    }
}

#[test]
fn lowest_cosine_has_quotient_one_over_pi_squared() {
    let grid = Grid::unit_square(64).unwrap();
    let f = grid.sample_nodes(|x, _| (PI * x).cos());
    let r = rayleigh_quotient(&f, &MatrixWeightField::identity(grid), &CellField::constant(grid, 1.0), 2.0).unwrap();
    assert!((r * PI * PI - 1.0).abs() < 0.01, "{r}");
}

#[test]
fn single_mode_neumann_probe_recovers_the_constant() {
    let grid = Grid::unit_square(64).unwrap();
    let corpus = vec![grid.sample_nodes(|x, _| (PI * x).cos())];
    let rep = poincare_from_neumann(
        &MatrixWeightField::identity(grid),
        &CellField::constant(grid, 1.0),
        2.0,
        &corpus,
        &SolverConfig::default(),
    )
    .unwrap();
    assert!((rep.estimate.constant * PI * PI - 1.0).abs() < 0.05, "{}", rep.estimate.constant);
    let probe = rep.probes[0];
    assert!(probe.identity_defect < 1e-10 && probe.holder_ratio <= 1.0 + 1e-12);
}

#[test]
fn neumann_probes_never_exceed_the_eigen_constant() {
    // every ‖u‖/‖f‖ is a lower bound at p = 2
    let grid = Grid::unit_square(32).unwrap();
    let q = anisotropic(grid, 1.0);
    let v = grid.sample_cells(|x, _| 1.0 + x);
    let corpus = generate_corpus(&CorpusSpec { count: 10, seed: 2, ..Default::default() }, grid, &v).unwrap();
    let rep = poincare_from_neumann(&q, &v, 2.0, &corpus, &SolverConfig::default()).unwrap();
    let eig = poincare_p2_eigen(&q, &v, &EigenConfig::default()).unwrap();
    assert!(rep.estimate.constant <= eig.constant * (1.0 + 1e-9));
    assert!(rep.estimate.constant >= 0.9 * eig.constant);
}

#[test]
fn zero_data_is_skipped() {
    let grid = Grid::unit_square(8).unwrap();
    let corpus = vec![GridFunction::zeros(grid), grid.sample_nodes(|x, _| (PI * x).cos())];
    let rep = poincare_from_neumann(
        &MatrixWeightField::identity(grid),
        &CellField::constant(grid, 1.0),
        2.0,
        &corpus,
        &SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(rep.probes.len(), 1);
    assert_eq!(rep.probes[0].index, 1);
    assert!(poincare_from_neumann(
        &MatrixWeightField::identity(grid),
        &CellField::constant(grid, 1.0),
        2.0,
        &[],
        &SolverConfig::default()
    )
    .is_err());
}

#[test]
fn riesz_potential_is_linear_and_monotone() {
    let grid = Grid::unit_square(12).unwrap();
    let g1 = grid.sample_cells(|x, y| x * y);
    let g2 = grid.sample_cells(|x, y| 1.0 + (3.0 * x).sin() * y);
    let combo = CellField { grid, values: g1.values.iter().zip(&g2.values).map(|(a, b)| 2.0 * a - 0.5 * b).collect() };
    let (p1, p2, pc) = (riesz_potential(&g1), riesz_potential(&g2), riesz_potential(&combo));
    for k in 0..grid.node_count() {
        assert!((pc.values[k] - 2.0 * p1.values[k] + 0.5 * p2.values[k]).abs() < 1e-12);
    }
    let bigger = CellField { grid, values: g1.values.iter().map(|a| a + 0.1).collect() };
    let pb = riesz_potential(&bigger);
    assert!(pb.values.iter().zip(&p1.values).all(|(a, b)| a > b));
}

#[test]
fn riesz_potential_of_one_at_a_corner() {
    // ∫_{[0,1]²} dy/|y| = 2 asinh(1) seen from the corner
    let grid = Grid::unit_square(32).unwrap();
    let pot = riesz_potential(&CellField::constant(grid, 1.0));
    let corner = pot.values[grid.node_index(0, 0)];
    assert!((corner / (2.0 * 1f64.asinh()) - 1.0).abs() < 1e-3, "{corner}");
}

#[test]
fn pointwise_constant_stays_below_the_convex_bound() {
    let grid = Grid::unit_square(24).unwrap();
    let v = CellField::constant(grid, 1.0);
    for f in generate_corpus(&CorpusSpec { count: 5, seed: 9, ..Default::default() }, grid, &v).unwrap() {
        let rep = riesz_pointwise_check(&f).unwrap();
        assert!(rep.constant > 0.0 && rep.constant <= rep.convex_bound, "{rep:?}");
    }
}

#[test]
fn two_weight_chain_holds_on_a_degenerate_pair() {
    let grid = Grid::new(RectDomain::new(1.0, 1.0, [0.5, 0.5]).unwrap(), 24, 24).unwrap();
    let w = grid.sample_cells(|x, y| x.hypot(y).powf(0.5));
    let v = grid.sample_cells(|x, y| x.hypot(y).powf(1.5));
    let corpus = generate_corpus(&CorpusSpec { count: 6, seed: 4, ..Default::default() }, grid, &v).unwrap();
    for p in [2.0, 3.0] {
        let rep = two_weight_chain(&corpus, &w, &v, p).unwrap();
        assert!(rep.holds, "p={p}: {} > {}", rep.max_ratio, rep.bound);
        assert_eq!(rep.ratios.len(), 6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quotient_ignores_constant_shifts(seed in 0u64..1000, c in -10.0f64..10.0, p in 1.2f64..4.0) {
        let grid = Grid::unit_square(8).unwrap();
        let q = anisotropic(grid, 1.0);
        let v = grid.sample_cells(|x, y| 1.0 + x + y);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = smooth_function(grid, &mut rng, 3, 1.0);
        let g = GridFunction { grid, values: f.values.iter().map(|x| x + c).collect() };
        let (a, b) = (rayleigh_quotient(&f, &q, &v, p).unwrap(), rayleigh_quotient(&g, &q, &v, p).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn quotient_is_scale_invariant(seed in 0u64..1000, s in 0.01f64..100.0, p in 1.2f64..4.0) {
        let grid = Grid::unit_square(8).unwrap();
        let q = anisotropic(grid, 1.0);
        let v = CellField::constant(grid, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = smooth_function(grid, &mut rng, 3, 1.0);
        let (a, b) = (rayleigh_quotient(&f, &q, &v, p).unwrap(), rayleigh_quotient(&f.scaled(-s), &q, &v, p).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }
}
