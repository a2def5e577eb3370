mod support;

use cesim::condsim::{run_ensemble, CondSimConfig, Method};
use cesim::covariance::CovarianceModel;
use cesim::embedding::CirculantEmbedding;
use cesim::eval::metrics::{p95_abs, rel_error_fields};
use cesim::grid::{pad_for_observations, GridField, RegularGrid};
use cesim::kriging::{ObservationSet, SeProblem};
use cesim::linalg::DenseCap;
use cesim::local::{build_local_sampler, local_cond_variance, local_se, locate_neighbors, Neighborhood};
use cesim::rng::stream;
use cesim::Error;
use proptest::prelude::*;
use support::*;

#[test]
fn neighborhoods_match_brute_force_box_rule() {
    let g = RegularGrid::unit_square(61);
    for (k, p) in uniform_points(1000, 4.0, 56.0, 99).into_iter().enumerate() {
        let n_p = 1 + k % 4;
        let got = locate_neighbors(&g, p, n_p).unwrap();
        let r = n_p as f64;
        let mut want = Vec::new();
        for idx in 0..g.len() {
            let (i, j) = g.ij(idx);
            let (x, y) = (i as f64, j as f64);
            if x > p[0] - r && x <= p[0] + r && y > p[1] - r && y <= p[1] + r {
                want.push(idx);
            }
        }
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, want, "point {p:?} order {n_p}");
    }
}

#[test]
fn weight_rows_match_per_observation_dense_solve() {
    let theta = 6.68;
    let locs = uniform_points(35, 0.0, 60.0, 5);
    let g = pad_for_observations(&RegularGrid::unit_square(61), &locs, 3);
    let model = CovarianceModel::exponential(1.0, theta).unwrap();
    let s = build_local_sampler(&g, &locs, &model, 3).unwrap();
    for (i, p) in locs.iter().enumerate() {
        let nb = locate_neighbors(&g, *p, 3).unwrap();
        let nodes: Vec<[f64; 2]> = nb.iter().map(|&k| g.location(k)).collect();
        let k11: Vec<Vec<f64>> = nodes
            .iter()
            .map(|a| nodes.iter().map(|b| exp_cov(theta, *a, *b)).collect())
            .collect();
        let k21: Vec<f64> = nodes.iter().map(|a| exp_cov(theta, *p, *a)).collect();
        let w = spd_solve(&k11, &k21);
        let row = s.row(i);
        for (q, &(col, v)) in row.iter().enumerate() {
            assert_eq!(col, nb[q]);
            assert!((v - w[q]).abs() < 1e-10, "obs {i} entry {q}: {v} vs {}", w[q]);
        }
        let gamma = 1.0 - dot(&k21, &w);
        assert!((s.gamma()[i] - gamma.max(0.0)).abs() < 1e-10);
    }
}

#[test]
fn gamma_at_box_center_matches_dense_conditional_variance() {
    let model = CovarianceModel::new(1.0, 5.0, 1.5).unwrap();
    let g = RegularGrid::unit_square(20);
    let p = [9.5, 9.5];
    let s = build_local_sampler(&g, &[p], &model, 4).unwrap();
    let nodes: Vec<[f64; 2]> = locate_neighbors(&g, p, 4).unwrap().iter().map(|&k| g.location(k)).collect();
    assert_eq!(nodes.len(), 64);
    let k11: Vec<Vec<f64>> = nodes
        .iter()
        .map(|a| nodes.iter().map(|b| model.cov_between(*a, *b)).collect())
        .collect();
    let k21: Vec<f64> = nodes.iter().map(|a| model.cov_between(p, *a)).collect();
    let l = cholesky(&k11);
    let h = forward(&l, &k21);
    let want = 1.0 - dot(&h, &h);
    assert!((s.gamma()[0] - want).abs() < 1e-9, "{} vs {want}", s.gamma()[0]);
}

#[test]
fn synthetic_noise_variance_by_monte_carlo() {
    let model = CovarianceModel::exponential(1.0, 3.0).unwrap();
    let g = RegularGrid::unit_square(10);
    let locs = [[3.3, 4.6], [6.5, 6.5]];
    let tau2 = 0.01;
    let s = build_local_sampler(&g, &locs, &model, 2).unwrap();
    let field = GridField::new(g, (0..g.len()).map(|k| (k as f64 * 0.13).cos()).collect()).unwrap();
    let n = 50_000;
    let mean_pred = s.apply(&field).unwrap();
    let mut ss = [0.0; 2];
    let mut rng = stream(8, 0);
    for _ in 0..n {
        let z = s.sample_offgrid(&field, &[tau2, tau2], &mut rng).unwrap();
        for i in 0..2 {
            ss[i] += (z[i] - mean_pred[i]).powi(2);
        }
    }
    for i in 0..2 {
        let v = ss[i] / n as f64;
        let want = s.gamma()[i] + tau2;
        let se = want * (2.0 / n as f64).sqrt();
        assert!((v - want).abs() < 4.0 * se, "obs {i}: {v} vs {want}");
    }
}

#[test]
fn synthetic_data_covariance_marginal_over_grid_draws() {
    let model = CovarianceModel::exponential(1.0, 4.0).unwrap();
    let g = RegularGrid::unit_square(16);
    let locs = [[4.4, 4.7], [7.3, 5.2], [10.6, 11.1]];
    let tau2 = 0.04;
    let s = build_local_sampler(&g, &locs, &model, 2).unwrap();
    let ce = CirculantEmbedding::build(&g, &model, 3).unwrap();
    let n = 20_000;
    let mut sums = [[0.0; 3]; 3];
    for k in 0..n {
        let mut rng = stream(21, k);
        let f = ce.simulate_one(&mut rng);
        let z = s.sample_offgrid(&f, &[tau2; 3], &mut rng).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                sums[a][b] += z[a] * z[b];
            }
        }
    }
    for a in 0..3 {
        for b in 0..3 {
            let got = sums[a][b] / n as f64;
            let c = model.cov_between(locs[a], locs[b]) + if a == b { tau2 } else { 0.0 };
            let caa = 1.0 + tau2;
            // sd of a product-moment estimate: sqrt((c_aa c_bb + c_ab^2) / n)
            let se = ((caa * caa + c * c) / n as f64).sqrt();
            assert!((got - c).abs() < 4.0 * se, "({a},{b}): {got} vs {c}");
        }
    }
}

#[test]
fn formula_matches_conditional_ensemble_spread() {
    let grid = RegularGrid::unit_square(21);
    let model = CovarianceModel::exponential(1.0, 4.0).unwrap();
    let obs = ObservationSet::with_nugget(
        vec![[4.3, 5.6], [15.2, 4.1], [9.7, 14.4], [16.6, 16.2], [3.1, 17.8]],
        vec![0.3, -0.2, 1.0, 0.0, 0.5],
        0.2,
    )
    .unwrap();
    let mut cfg = CondSimConfig::new(grid, model, 77);
    cfg.method = Method::Local;
    cfg.n_p = 2;
    cfg.draws = 2000;
    let ens = run_ensemble(&cfg, &obs).unwrap();
    let sd = ens.sd.unwrap();
    let se_l = local_cond_variance(&grid, &obs, &model, Neighborhood::Order(2), DenseCap::default()).unwrap();
    let rel_se = (1.0f64 / (2.0 * 1999.0)).sqrt();
    for (k, (a, b)) in sd.iter().zip(&se_l).enumerate() {
        assert!((a - b).abs() < 5.0 * rel_se * b, "node {k}: mc {a} formula {b}");
    }
}

#[test]
fn order_four_is_within_one_percent_on_design_layout() {
    let grid = RegularGrid::unit_square(61);
    let model = CovarianceModel::exponential(1.0, 6.68).unwrap();
    let obs = ObservationSet::locations_only(uniform_points(35, 0.0, 60.0, 41), 0.1).unwrap();
    let p = SeProblem::new(&grid, &obs, &model, DenseCap::default()).unwrap();
    let exact = p.exact_se().unwrap();
    let se4 = local_se(&p, Neighborhood::Order(4)).unwrap();
    let q = p95_abs(&rel_error_fields(&exact, &se4));
    assert!(q < 1.0, "p95 |E_L| = {q}");
}

#[test]
fn node_observations_reproduce_exact_se() {
    let grid = RegularGrid::unit_square(41);
    let model = CovarianceModel::new(1.0, 8.0, 1.5).unwrap();
    let locs: Vec<[f64; 2]> = uniform_points(20, 0.0, 40.0, 2).iter().map(|p| [p[0].round(), p[1].round()]).collect();
    let obs = ObservationSet::locations_only(locs, 0.15).unwrap();
    let p = SeProblem::new(&grid, &obs, &model, DenseCap::default()).unwrap();
    let exact = p.exact_se().unwrap();
    for nb in [Neighborhood::Order(1), Neighborhood::Order(2), Neighborhood::Order(4)] {
        let se = local_se(&p, nb).unwrap();
        for (a, b) in se.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn long_range_rows_sum_to_one() {
    let g = RegularGrid::unit_square(12);
    let model = CovarianceModel::new(1.0, 100.0, 1.5).unwrap();
    let locs = uniform_points(10, 4.0, 7.0, 12);
    let s = build_local_sampler(&g, &locs, &model, 2).unwrap();
    for i in 0..locs.len() {
        let sum: f64 = s.row(i).iter().map(|r| r.1).sum();
        assert!((sum - 1.0).abs() < 1e-3, "row {i}: {sum}");
    }
}

#[test]
fn margin_violations_are_reported() {
    let g = RegularGrid::unit_square(10);
    let model = CovarianceModel::exponential(1.0, 2.0).unwrap();
    match build_local_sampler(&g, &[[5.0, 5.0], [9.5, 5.0]], &model, 1) {
        Err(Error::Margin { index, .. }) => assert_eq!(index, 1),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn neighborhoods_are_complete_and_contain_the_box(x in 4.0f64..15.999, y in 4.0f64..15.999, n_p in 1usize..5) {
        let g = RegularGrid::unit_square(21);
        let nb = locate_neighbors(&g, [x, y], n_p).unwrap();
        prop_assert_eq!(nb.len(), 4 * n_p * n_p);
        let (bi, bj) = (x.floor() as usize, y.floor() as usize);
        for (i, j) in [(bi, bj), (bi + 1, bj), (bi, bj + 1), (bi + 1, bj + 1)] {
            prop_assert!(nb.contains(&g.index(i, j)));
        }
        prop_assert!(nb.iter().all(|&k| k < g.len()));
    }

    #[test]
    fn gamma_is_bounded_and_shrinks_with_order(x in 5.0f64..6.0, y in 5.0f64..6.0, theta in 0.5f64..20.0) {
        let g = RegularGrid::unit_square(12);
        let model = CovarianceModel::exponential(1.0, theta).unwrap();
        let mut prev = 1.0 + 1e-12;
        for n_p in 1..=4 {
            let gm = build_local_sampler(&g, &[[x, y]], &model, n_p).unwrap().gamma()[0];
            prop_assert!(gm >= 0.0 && gm <= prev + 1e-12);
            prev = gm;
        }
    }
}
