mod support;

use cesim::condsim::{
    apply_box_policy, average_boxes, conditional_draw, run_ensemble, shared_boxes, BoxPolicy, CondSimConfig,
    ConditionalSimulator, Method,
};
use cesim::covariance::CovarianceModel;
use cesim::grid::RegularGrid;
use cesim::kriging::{exact_se_grid, krige_predict, ObservationSet};
use cesim::linalg::DenseCap;
use cesim::local::Neighborhood;
use cesim::nn::{build_surrogate, surrogate_grid};
use support::*;

fn setup(method: Method, draws: usize) -> (CondSimConfig, ObservationSet) {
    let grid = RegularGrid::unit_square(21);
    let model = CovarianceModel::exponential(1.0, 4.0).unwrap();
    let obs = ObservationSet::with_nugget(
        vec![[4.3, 5.6], [15.2, 4.1], [9.7, 14.4], [16.6, 16.2], [3.1, 17.8], [10.2, 9.9]],
        vec![0.8, -0.4, 1.2, 0.1, -0.9, 0.5],
        0.15,
    )
    .unwrap();
    let mut cfg = CondSimConfig::new(grid, model, 2024);
    cfg.method = method;
    cfg.n_p = 3;
    cfg.draws = draws;
    (cfg, obs)
}

#[test]
fn ensemble_mean_is_the_kriging_prediction() {
    for method in [Method::Local, Method::NearestNeighbor, Method::Exact] {
        let (cfg, obs) = setup(method, 1000);
        let ens = run_ensemble(&cfg, &obs).unwrap();
        let pred = if method == Method::NearestNeighbor {
            // predicted from the surrogates, whose nugget is the mean observation noise
            let nb = Neighborhood::Order(cfg.n_p);
            let sg = surrogate_grid(&cfg.grid, &obs, nb);
            let set = build_surrogate(&sg, &obs, &cfg.model, nb, 0.15 * 0.15).unwrap();
            set.system(&cfg.model).unwrap().predict_grid(&set.values, &cfg.grid).unwrap()
        } else {
            krige_predict(&obs, &cfg.grid.nodes(), &cfg.model).unwrap()
        };
        for (a, b) in ens.prediction.iter().zip(&pred) {
            assert!((a - b).abs() < 1e-10, "{method}: {a} vs {b}");
        }
        let pred = &ens.prediction;
        let se = ens.mean_se().unwrap();
        let mut z: Vec<f64> = ens.mean.iter().zip(pred).zip(&se).map(|((m, p), s)| (m - p).abs() / s).collect();
        z.sort_by(f64::total_cmp);
        // standardized errors of 441 correlated nodes: median near 0.67, none extreme
        let med = z[z.len() / 2];
        assert!(med < 1.2, "{method}: median |z| = {med}");
        assert!(z[z.len() - 1] < 5.0, "{method}: max |z| = {}", z[z.len() - 1]);
    }
}

#[test]
fn exact_method_spread_converges_to_exact_se() {
    let (cfg, obs) = setup(Method::Exact, 2000);
    let ens = run_ensemble(&cfg, &obs).unwrap();
    let want = exact_se_grid(&obs, &cfg.grid, &cfg.model, DenseCap::default()).unwrap();
    let rel = (1.0f64 / (2.0 * 1999.0)).sqrt();
    for (k, (a, b)) in ens.sd.unwrap().iter().zip(&want).enumerate() {
        assert!((a - b).abs() < 5.0 * rel * b, "node {k}: {a} vs {b}");
    }
}

#[test]
fn setup_is_shared_between_draws() {
    for method in [Method::Local, Method::NearestNeighbor, Method::Exact] {
        let (cfg, obs) = setup(method, 3);
        let sim = ConditionalSimulator::new(&cfg, &obs).unwrap();
        let ens = run_ensemble(&cfg, &obs).unwrap();
        for k in 0..3u64 {
            let cached = sim.draw(k).unwrap().0;
            let fresh = conditional_draw(&cfg, &obs, k).unwrap();
            assert_eq!(cached.values, fresh.values);
            assert_eq!(ens.draws[k as usize].values, fresh.values);
        }
    }
}

#[test]
fn spread_grows_away_from_observations() {
    let grid = RegularGrid::unit_square(41);
    let model = CovarianceModel::exponential(1.0, 6.0).unwrap();
    let obs = ObservationSet::with_nugget(vec![[20.3, 20.4]], vec![1.0], 0.05).unwrap();
    let mut cfg = CondSimConfig::new(grid, model, 3);
    cfg.draws = 400;
    let ens = run_ensemble(&cfg, &obs).unwrap();
    let sd = ens.sd.unwrap();
    // transect along y = 20, outward from the observation
    let t: Vec<f64> = (20..41).step_by(4).map(|i| sd[grid.index(i, 20)]).collect();
    for w in t.windows(2) {
        assert!(w[0] < w[1] + 0.05, "{t:?}");
    }
    assert!(t[0] < 0.4 && t[t.len() - 1] > 0.85, "{t:?}");
}

#[test]
fn noise_free_node_observation_is_honored_by_every_draw() {
    let grid = RegularGrid::unit_square(15);
    let model = CovarianceModel::exponential(1.0, 3.0).unwrap();
    let obs = ObservationSet::with_nugget(vec![[7.0, 6.0], [3.4, 10.7]], vec![1.3, -0.2], 0.0).unwrap();
    for method in [Method::Local, Method::Exact] {
        let mut cfg = CondSimConfig::new(grid, model, 9);
        cfg.method = method;
        cfg.n_p = 2;
        cfg.draws = 5;
        let ens = run_ensemble(&cfg, &obs).unwrap();
        for d in &ens.draws {
            assert!((d.values[grid.index(7, 6)] - 1.3).abs() < 1e-6, "{method}");
        }
    }
}

#[test]
fn box_policies() {
    let grid = RegularGrid::unit_square(10);
    let obs = ObservationSet::new(
        vec![[2.2, 2.3], [2.8, 2.7], [6.5, 6.5]],
        vec![1.0, 3.0, 0.0],
        vec![0.3, 0.4, 0.1],
    )
    .unwrap();
    assert_eq!(shared_boxes(&grid, &obs), 1);
    let avg = average_boxes(&grid, &obs).unwrap();
    assert_eq!(avg.len(), 2);
    let k = avg.values.iter().position(|v| *v == 2.0).unwrap();
    assert!((avg.locations[k][0] - 2.5).abs() < 1e-12 && (avg.locations[k][1] - 2.5).abs() < 1e-12);
    assert!((avg.noise_sd[k] - 0.25).abs() < 1e-12);

    let (g, o) = apply_box_policy(&grid, &obs, BoxPolicy::Refine, 1).unwrap();
    assert_eq!(g.spacing, [0.5, 0.5]);
    assert_eq!(o.len(), 3);
    let (g, o) = apply_box_policy(&grid, &obs, BoxPolicy::Block, 1).unwrap();
    assert_eq!((g, o.len()), (grid, 3));
}

#[test]
fn co_boxed_observations_under_each_policy_give_finite_draws() {
    let (mut cfg, _) = setup(Method::Local, 4);
    let obs = ObservationSet::with_nugget(
        vec![[5.2, 5.3], [5.7, 5.6], [5.5, 5.9], [12.1, 8.4]],
        vec![0.2, 0.4, 0.3, -1.0],
        0.1,
    )
    .unwrap();
    for policy in [BoxPolicy::Block, BoxPolicy::Average, BoxPolicy::Refine] {
        cfg.box_policy = policy;
        let ens = run_ensemble(&cfg, &obs).unwrap();
        assert!(ens.draws.iter().all(|d| d.values.iter().all(|v| v.is_finite())), "{policy}");
        let want = if policy == BoxPolicy::Refine { cfg.grid.refined() } else { cfg.grid };
        assert_eq!(ens.grid, want);
    }
}

#[test]
fn invalid_configuration_is_rejected() {
    let (mut cfg, obs) = setup(Method::Local, 0);
    assert!(run_ensemble(&cfg, &obs).is_err());
    cfg.draws = 1;
    cfg.n_p = 0;
    assert!(run_ensemble(&cfg, &obs).is_err());
    let _ = uniform_points(1, 0.0, 1.0, 0);
}
