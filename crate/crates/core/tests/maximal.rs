mod common;

use common::{dyadic_values, exhaustive_maximal};
use proptest::prelude::*;
use speclab::calculus::{eigendecompose, MultiplierFn};
use speclab::czd::*;
use speclab::grid::{Boundary, Grid};
use speclab::lattice::build_laplacian;
use speclab::weights::{power_weight, Weight};

#[test]
fn fast_maximal_equals_exhaustive_search() {
    let grids = [
        Grid::<f64>::anchored(1, 23, 0.1, Boundary::Dirichlet).unwrap(),
        Grid::<f64>::anchored(1, 20, 0.1, Boundary::Periodic).unwrap(),
        Grid::<f64>::anchored(2, 9, 0.1, Boundary::Dirichlet).unwrap(),
        Grid::<f64>::anchored(2, 8, 0.1, Boundary::Periodic).unwrap(),
        Grid::<f64>::anchored(3, 5, 0.1, Boundary::Dirichlet).unwrap(),
    ];
    for (s, g) in grids.iter().enumerate() {
        let f = dyadic_values(g.len(), s as u64);
        assert_eq!(ball_maximal(&BallFamily::new(g), &f), exhaustive_maximal(g, &f), "grid {s}");
    }
}

#[test]
fn weak_one_one_constant_is_moderate() {
    let g = Grid::<f64>::cell_centered(1, 64, 2.0, Boundary::Dirichlet).unwrap();
    let c1 = weak_qq_constant(&g, 1.0, 30, 3, &[]).unwrap();
    assert!((1.0..=3.0).contains(&c1), "c1 = {c1}");
    let c2 = weak_qq_constant(&g, 2.0, 30, 3, &[]).unwrap();
    assert!(c2 >= 1.0 && c2 <= c1 * 4.0);
}

#[test]
fn cz_properties_on_random_data() {
    let g = Grid::<f64>::cell_centered(2, 16, 1.0, Boundary::Dirichlet).unwrap();
    let f: Vec<f64> = dyadic_values(g.len(), 11).iter().map(|v| v.powi(6) * 40.0).collect();
    let l1: f64 = f.iter().map(|v| v.abs()).sum::<f64>() * g.cell_volume();
    for lambda in [8.0, 16.0, 32.0] {
        let cz = cz_decompose(&f, lambda, &g).unwrap();
        assert!(!cz.degenerate);
        assert!(cz.reconstruction_residual(&f, &g) < 1e-12);
        assert!(cz.good_constant <= 4.0 + 1e-12);
        assert!(cz.bad_constant <= 8.0 + 1e-12);
        assert!(cz.measure_constant <= 1.0 + 1e-12);
        let total: f64 = cz.cubes.iter().map(|q| q.volume(&g)).sum();
        assert!(total <= l1 / lambda + 1e-12);
        for j in 0..cz.cubes.len() {
            let part = cz.bad_part(j, &g);
            assert!(part.iter().sum::<f64>().abs() < 1e-10);
        }
    }
}

#[test]
fn synthetic_good_lambda_chain() {
    let g = Grid::<f64>::cell_centered(1, 64, 2.0, Boundary::Dirichlet).unwrap();
    let f: Vec<f64> = dyadic_values(64, 5).iter().map(|v| v.abs().powi(3) * 4.0).collect();
    let w = power_weight(0.5, &g).unwrap();
    let sc = synthetic_scenario(&g, f.clone(), 4.0, 1.0, w).unwrap();
    let c1 = weak_qq_constant(&g, 1.0, 30, 1, std::slice::from_ref(&f)).unwrap();
    let cq = weak_qq_constant(&g, 4.0, 30, 1, std::slice::from_ref(&f)).unwrap();
    let c0 = c0_constant(1, 4.0, c1, cq);
    let params = select_parameters(1, 1.0, 4.0, 1.0, 1.0, c0, sc.rh_norm()).unwrap();
    let lmax = sc.mf().iter().cloned().fold(0.0, f64::max);
    let rep = good_lambda_check(&sc, &dyadic_lambda_grid(lmax, 20), c0, &params, 1.0).unwrap();
    assert!(rep.pass && rep.ratio_within_bound);
    let rec = recurrence_check(&sc, &params, 1.0, c1);
    assert!(rec.recurrence_holds && rec.sum_holds && rec.envelope_holds, "{rec:?}");
}

#[test]
fn multiplier_pipeline_meets_the_lemma() {
    let g = Grid::<f64>::cell_centered(1, 64, 8.0, Boundary::Dirichlet).unwrap();
    let sd = eigendecompose(&build_laplacian(&g).unwrap()).unwrap();
    let f: Vec<f64> = dyadic_values(64, 9);
    let gfun = MultiplierFn::heat();
    for (weight, q) in [(Weight::constant(&g, 1.0).unwrap(), 4.0), (power_weight(0.5, &g).unwrap(), f64::INFINITY)] {
        let (sc, info) = pipeline_scenario(&sd, &gfun, &f, 2.0, q, 1.0, weight).unwrap();
        assert!(sc.audit().pass() && info.a >= 1.0 && info.g_constant > 0.0);
        let probes = vec![sc.f().to_vec()];
        let c1 = weak_qq_constant(&g, 1.0, 30, 2, &probes).unwrap();
        let cq = weak_qq_constant(&g, q, 30, 2, &probes).unwrap();
        let c0 = c0_constant(1, q, c1, cq);
        let params = select_parameters(1, info.a, q, 1.0, 1.0, c0, sc.rh_norm()).unwrap();
        let lmax = sc.mf().iter().cloned().fold(0.0, f64::max);
        let rep = good_lambda_check(&sc, &dyadic_lambda_grid(lmax, 20), c0, &params, 1.0).unwrap();
        assert!(rep.pass, "{:?}", rep.rows);
        let rec = recurrence_check(&sc, &params, 1.0, c1);
        assert!(rec.recurrence_holds && rec.sum_holds, "{rec:?}");
        for lambda in dyadic_lambda_grid(lmax, 6) {
            assert!(mf_cutoff_check(&sc, lambda, params.k).unwrap().pass);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn maximal_dominates_and_is_sublinear(vals in prop::collection::vec(-4.0f64..4.0, 24), other in prop::collection::vec(-4.0f64..4.0, 24)) {
        let g = Grid::<f64>::anchored(1, 24, 0.25, Boundary::Dirichlet).unwrap();
        let fam = BallFamily::new(&g);
        let m = ball_maximal(&fam, &vals);
        let mo = ball_maximal(&fam, &other);
        let sum: Vec<f64> = vals.iter().zip(&other).map(|(a, b)| a + b).collect();
        let ms = ball_maximal(&fam, &sum);
        for i in 0..24 {
            prop_assert!(m[i] >= vals[i].abs() - 1e-12);
            prop_assert!(ms[i] <= m[i] + mo[i] + 1e-9);
        }
        let sup = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        prop_assert!(m.iter().all(|&v| v <= sup + 1e-12));
    }

    #[test]
    fn cz_cubes_are_disjoint_and_heavy(vals in prop::collection::vec(0.0f64..10.0, 64), lambda in 0.5f64..20.0) {
        let g = Grid::<f64>::anchored(2, 8, 0.125, Boundary::Dirichlet).unwrap();
        let cz = cz_decompose(&vals, lambda, &g).unwrap();
        let mut hit = [false; 64];
        for q in &cz.cubes {
            let cells = q.cells(&g);
            let avg = cells.iter().map(|&i| vals[i]).sum::<f64>() / cells.len() as f64;
            prop_assert!(cz.degenerate || (avg > lambda && avg <= 4.0 * lambda + 1e-9));
            for i in cells {
                prop_assert!(!hit[i]);
                hit[i] = true;
            }
        }
        prop_assert!(cz.good.iter().all(|v| v.abs() <= 4.0 * lambda + 1e-9) || cz.degenerate);
    }

    #[test]
    fn whitney_cubes_tile_and_touch_the_complement(mask in prop::collection::vec(any::<bool>(), 32)) {
        prop_assume!(mask.iter().any(|b| !b));
        let g = Grid::<f64>::anchored(1, 32, 1.0, Boundary::Dirichlet).unwrap();
        let cubes = whitney_decompose(&mask, &g).unwrap();
        let mut count = vec![0usize; 32];
        for q in &cubes {
            for i in q.cells(&g) {
                count[i] += 1;
            }
            prop_assert!((0..32).any(|c| !mask[c] && dilate_contains(q, 4, &g, c)));
        }
        for i in 0..32 {
            prop_assert_eq!(count[i], usize::from(mask[i]));
        }
    }
}
