use std::f64::consts::PI;

use pneumann::grid::{lp_norm, CellField, Grid, GridFunction, RectDomain};
use pneumann::matrix_weight::MatrixWeightField;
use pneumann::neumann::{solve, NeumannProblem, SolverConfig};
use pneumann::spectral::{
    big_lambda, cosine_coeffs, l2_bound_check, lambda_mn, solve_poisson_neumann_rect, CosineExpansion, ModalFunction,
};
use proptest::prelude::*;

fn relative_l2(u: &GridFunction, exact: &GridFunction) -> f64 {
    let one = CellField::constant(u.grid, 1.0);
    let d = GridFunction { grid: u.grid, values: u.values.iter().zip(&exact.values).map(|(a, b)| a - b).collect() };
    lp_norm(&d, &one, 2.0).unwrap() / lp_norm(exact, &one, 2.0).unwrap()
}

fn p2_solve(grid: Grid, f: &GridFunction) -> GridFunction {
    let pb = NeumannProblem::new(2.0, MatrixWeightField::identity(grid), CellField::constant(grid, 1.0), f.clone()).unwrap();
    let rep = solve(&pb, &SolverConfig::default()).unwrap();
    assert!(rep.converged);
    rep.solution.u
}

#[test]
fn solver_converges_to_the_cosine_solution_at_second_order() {
    let modal = ModalFunction::parse("cos:kx=2,ky=1").unwrap();
    let errs: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let grid = Grid::unit_square(n).unwrap();
            let f = modal.sample(&grid);
            let exact = GridFunction { grid, values: f.values.iter().map(|x| -x / (5.0 * PI * PI)).collect() };
            relative_l2(&p2_solve(grid, &f), &exact)
        })
        .collect();
    assert!(errs[2] <= 0.02, "{errs:?}");
    let order = (errs[0] / errs[2]).log2() / 2.0;
    assert!((order - 2.0).abs() <= 0.3, "order {order}, {errs:?}");
}

#[test]
fn oracle_solution_is_minus_f_over_lambda() {
    let domain = RectDomain::unit_square();
    let f = ModalFunction::parse("cos:kx=2,ky=1").unwrap().expansion(domain, 8, 8);
    let u = solve_poisson_neumann_rect(&f).unwrap();
    assert!((u.coeff(1, 2) + 1.0 / (5.0 * PI * PI)).abs() < 1e-15);
    for (x, y) in [(0.1, 0.2), (0.5, 0.5), (0.77, 0.03)] {
        let want = -(2.0 * PI * x).cos() * (PI * y).cos() / (5.0 * PI * PI);
        assert!((u.eval(x, y) - want).abs() < 1e-15);
    }
}

#[test]
fn rectangle_solver_matches_the_oracle() {
    let domain = RectDomain::new(2.0, 1.0, [0.0, 0.0]).unwrap();
    let grid = Grid::new(domain, 128, 64).unwrap();
    let modal = ModalFunction::parse("cos:kx=1,ky=0 + cos:kx=3,ky=2,amp=0.5 + cos:kx=0,ky=1,amp=-0.7").unwrap();
    let f = modal.sample(&grid);
    let oracle = solve_poisson_neumann_rect(&modal.expansion(domain, 4, 4)).unwrap();
    assert!(relative_l2(&p2_solve(grid, &f), &oracle.sample(&grid)) < 0.01);
}

#[test]
fn coefficients_of_band_limited_samples_are_exact() {
    let domain = RectDomain::new(1.5, 1.0, [0.0, 0.0]).unwrap();
    let grid = Grid::new(domain, 24, 16).unwrap();
    let modal = ModalFunction::parse("cos:kx=1,ky=1,amp=2 + cos:kx=5,ky=0 + cos:kx=0,ky=16,amp=0.25 + cos:kx=24,ky=3").unwrap();
    let e = cosine_coeffs(&modal.sample(&grid), 16, 24).unwrap();
    let exact = modal.expansion(domain, 16, 24);
    for m in 0..=16 {
        for n in 0..=24 {
            assert!((e.coeff(m, n) - exact.coeff(m, n)).abs() < 1e-12, "({m},{n})");
        }
    }
    assert!(e.tail_bound < 1e-12);
}

#[test]
fn parseval_against_direct_integration() {
    // ∫ (amp cos cos)² = amp² ab / 4 for two nonzero indices
    let domain = RectDomain::new(2.0, 1.0, [0.0, 0.0]).unwrap();
    let e = ModalFunction::parse("cos:kx=1,ky=1,amp=3").unwrap().expansion(domain, 2, 2);
    assert!((e.l2_norm() - (9.0 * 2.0 / 4.0f64).sqrt()).abs() < 1e-14);
    let e = ModalFunction::parse("cos:kx=2,ky=0,amp=1 + cos:kx=0,ky=1,amp=2").unwrap().expansion(domain, 2, 2);
    assert!((e.l2_norm() - (2.0 / 2.0 + 4.0 * 2.0 / 2.0f64).sqrt()).abs() < 1e-14);
    // a fine midpoint rule agrees
    let n = 400;
    let (hx, hy) = (2.0 / n as f64, 1.0 / n as f64);
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            let (x, y) = ((i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy);
            s += e.eval(x, y).powi(2) * hx * hy;
        }
    }
    assert!((s.sqrt() / e.l2_norm() - 1.0).abs() < 1e-5);
}

#[test]
fn single_mode_ratio_is_exact() {
    let domain = RectDomain::new(2.0, 1.0, [0.0, 0.0]).unwrap();
    for (kx, ky) in [(1, 0), (0, 1), (3, 2)] {
        let f = ModalFunction::parse(&format!("cos:kx={kx},ky={ky}")).unwrap().expansion(domain, 4, 4);
        let rep = l2_bound_check(&solve_poisson_neumann_rect(&f).unwrap(), &f).unwrap();
        let want = 1.0 / lambda_mn(ky, kx, 2.0, 1.0).unwrap();
        assert!((rep.ratio - want).abs() < 1e-15 * want.max(1.0));
    }
    let zero = CosineExpansion { domain, coeffs: vec![vec![0.0; 3]; 3], tail_bound: 0.0 };
    assert_eq!(l2_bound_check(&solve_poisson_neumann_rect(&zero).unwrap(), &zero).unwrap().ratio, 0.0);
}

#[test]
fn constant_mode_is_rejected() {
    let domain = RectDomain::unit_square();
    let f = ModalFunction::parse("cos:kx=0,ky=0 + cos:kx=1,ky=0").unwrap().expansion(domain, 2, 2);
    assert!(solve_poisson_neumann_rect(&f).is_err());
    let grid = Grid::unit_square(8).unwrap();
    assert!(cosine_coeffs(&GridFunction::constant(grid, 1.0), 4, 4).is_err());
}

#[test]
fn big_lambda_on_the_unit_square() {
    // Σ_{m+n>0} (m² + n²)^{-2} / π⁴ summed directly to a large radius
    let mut s = 0.0;
    for m in 0..3000i64 {
        for n in 0..3000i64 {
            if m + n > 0 && m * m + n * n <= 3000 * 3000 {
                s += 1.0 / ((m * m + n * n) as f64).powi(2);
            }
        }
    }
    let direct = (s / PI.powi(4)).sqrt();
    assert!((big_lambda(1.0, 1.0) / direct - 1.0).abs() < 1e-6, "{} vs {direct}", big_lambda(1.0, 1.0));
}

#[test]
fn series_bound_can_fail_on_large_rectangles() {
    // C(R) Λ ≥ 1/λ_min only while ab stays small
    let small = RectDomain::unit_square();
    let f = ModalFunction::parse("cos:kx=1,ky=0").unwrap().expansion(small, 2, 2);
    assert!(l2_bound_check(&solve_poisson_neumann_rect(&f).unwrap(), &f).unwrap().within_series);
    let wide = RectDomain::new(4.0, 4.0, [0.0, 0.0]).unwrap();
    let f = ModalFunction::parse("cos:kx=1,ky=0").unwrap().expansion(wide, 2, 2);
    let rep = l2_bound_check(&solve_poisson_neumann_rect(&f).unwrap(), &f).unwrap();
    assert!(rep.within_modewise && !rep.within_series, "{rep:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ratio_never_exceeds_the_lowest_mode(
        a in 0.5f64..3.0,
        b in 0.5f64..3.0,
        coeffs in proptest::collection::vec(-1.0f64..1.0, 25),
    ) {
        let domain = RectDomain::new(a, b, [0.0, 0.0]).unwrap();
        let mut table = vec![vec![0.0; 5]; 5];
        for (k, c) in coeffs.iter().enumerate() {
            let (m, n) = (k / 5, k % 5);
            table[m][n] = if k == 0 { 0.0 } else { *c };
        }
        let f = CosineExpansion { domain, coeffs: table, tail_bound: 0.0 };
        let rep = l2_bound_check(&solve_poisson_neumann_rect(&f).unwrap(), &f).unwrap();
        prop_assert!(rep.within_modewise);
    }

    #[test]
    fn oracle_is_linear(s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let domain = RectDomain::new(1.3, 0.7, [0.0, 0.0]).unwrap();
        let f = ModalFunction::parse("cos:kx=1,ky=2 + cos:kx=3,ky=0,amp=0.4").unwrap().expansion(domain, 4, 4);
        let g = ModalFunction::parse("cos:kx=0,ky=1,amp=-2").unwrap().expansion(domain, 4, 4);
        let combo = CosineExpansion {
            domain,
            coeffs: f.coeffs.iter().zip(&g.coeffs).map(|(r, q)| r.iter().zip(q).map(|(x, y)| s * x + t * y).collect()).collect(),
            tail_bound: 0.0,
        };
        let (uf, ug, uc) = (
            solve_poisson_neumann_rect(&f).unwrap(),
            solve_poisson_neumann_rect(&g).unwrap(),
            solve_poisson_neumann_rect(&combo).unwrap(),
        );
        for m in 0..=4 {
            for n in 0..=4 {
                prop_assert!((uc.coeff(m, n) - s * uf.coeff(m, n) - t * ug.coeff(m, n)).abs() < 1e-14);
            }
        }
    }
}
