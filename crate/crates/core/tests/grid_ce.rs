mod support;

use cesim::covariance::{range_for_correlation, CovarianceModel};
use cesim::embedding::{smooth_even_size, CirculantEmbedding};
use cesim::grid::{GridField, LagTable, RegularGrid};
use cesim::rng::stream;
use proptest::prelude::*;
use support::*;

#[test]
fn general_smoothness_matches_closed_forms() {
    // nu = 5/2: (1 + s + s^2/3) e^-s with s = sqrt(5) d / theta
    let m = CovarianceModel::new(1.0, 2.0, 2.5).unwrap();
    for d in [0.1, 0.5, 1.0, 3.0, 10.0] {
        let s = 5f64.sqrt() * d / 2.0;
        let want = (1.0 + s + s * s / 3.0) * (-s).exp();
        assert!((m.corr(d) - want).abs() < 1e-10, "d={d}");
    }
    // the generic path just off the closed-form smoothness values
    for (nu, d) in [(0.5, 0.7), (1.5, 2.2)] {
        let near = CovarianceModel::new(1.0, 3.0, nu + 1e-9).unwrap().corr(d);
        let exact = CovarianceModel::new(1.0, 3.0, nu).unwrap().corr(d);
        assert!((near - exact).abs() < 1e-7);
    }
}

#[test]
fn unit_smoothness_matches_tabulated_bessel() {
    // nu = 1: x K_1(x) with x = sqrt(2) d / theta; K_1(1), K_1(2) from tables
    let theta = 2f64.sqrt();
    let m = CovarianceModel::new(2.0, theta, 1.0).unwrap();
    assert!((m.cov(1.0) - 2.0 * 0.6019072301972346).abs() < 1e-10);
    assert!((m.cov(2.0) - 2.0 * 2.0 * 0.13986588181652243).abs() < 1e-10);
    assert_eq!(m.cov(0.0), 2.0);
}

#[test]
fn calibrated_ranges() {
    for (d, want) in [(20.0, 6.68), (45.0, 15.02), (70.0, 23.37)] {
        let t = range_for_correlation(0.5, 0.05, d).unwrap();
        assert!((t - want).abs() < 0.01, "{t} vs {want}");
        // exponential oracle: theta = -d / ln(rho)
        assert!((t + d / 0.05f64.ln()).abs() < 1e-6);
    }
    assert!(range_for_correlation(0.5, 1.2, 20.0).is_err());
    assert!(range_for_correlation(0.5, 0.05, -1.0).is_err());
}

#[test]
fn torus_sizes() {
    assert_eq!(smooth_even_size(120), 120);
    assert_eq!(smooth_even_size(122), 128);
    assert_eq!(smooth_even_size(62), 64);
    let ce = CirculantEmbedding::build(&RegularGrid::unit_square(61), &CovarianceModel::exponential(1.0, 6.68).unwrap(), 3)
        .unwrap();
    assert_eq!(ce.dims(), [120, 120]);
    assert!(ce.weight_range().0 >= 0.0);
}

#[test]
fn draws_reproduce_covariance_by_monte_carlo() {
    for nu in [0.5, 1.5] {
        let (lags, worst_mean) = ce_moment_check(nu, 5.0, 32, 4000, 31);
        for (k, (est, se, want)) in lags.iter().enumerate() {
            assert!((est - want).abs() < 4.0 * se, "nu={nu} lag {:?}: {est} vs {want} (se {se})", CE_LAGS[k]);
        }
        // 1024 nodes: the largest standardized mean of a null sample stays well below 5
        assert!(worst_mean < 5.0, "nu={nu}: {worst_mean}");
    }
}

#[test]
fn same_stream_same_draw() {
    let g = RegularGrid::new([10.0, -3.0], [0.5, 0.25], [20, 13]).unwrap();
    let ce = CirculantEmbedding::build(&g, &CovarianceModel::new(1.0, 2.0, 1.0).unwrap(), 3).unwrap();
    let a = ce.simulate_one(&mut stream(5, 3));
    let b = ce.simulate_one(&mut stream(5, 3));
    let c = ce.simulate_one(&mut stream(5, 4));
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
    assert_eq!(a.grid, g);
}

#[test]
fn lag_table_matches_pointwise_covariance() {
    let g = RegularGrid::new([0.0, 0.0], [0.5, 2.0], [7, 5]).unwrap();
    let m = CovarianceModel::new(1.3, 1.7, 1.5).unwrap();
    let t = LagTable::for_grid(&m, &g);
    for a in 0..g.len() {
        for b in 0..g.len() {
            let (ia, ja) = g.ij(a);
            let (ib, jb) = g.ij(b);
            let got = t.get(ia as i64 - ib as i64, ja as i64 - jb as i64);
            assert!((got - m.cov_between(g.location(a), g.location(b))).abs() < 1e-14);
        }
    }
}

#[test]
fn grid_indexing_is_x_fastest() {
    let g = RegularGrid::new([1.0, 2.0], [0.5, 0.25], [4, 3]).unwrap();
    assert_eq!(g.index(3, 0), 3);
    assert_eq!(g.index(0, 1), 4);
    assert_eq!(g.location(5), [1.5, 2.25]);
    let f = GridField::new(g, (0..12).map(f64::from).collect()).unwrap();
    assert_eq!(f.at(1, 2), 9.0);
    assert!(GridField::new(g, vec![0.0; 11]).is_err());
    assert!(RegularGrid::new([0.0, 0.0], [0.0, 1.0], [3, 3]).is_err());
}

proptest! {
    #[test]
    fn covariance_is_bounded_and_decreasing(theta in 0.1f64..50.0, nu in 0.2f64..3.0, d in 0.0f64..100.0) {
        let m = CovarianceModel::new(1.0, theta, nu).unwrap();
        let c = m.corr(d);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(m.corr(d + 0.5) <= c + 1e-12);
    }

    #[test]
    fn smooth_sizes_are_even_and_minimal(n in 1usize..5000) {
        let s = smooth_even_size(n);
        prop_assert!(s >= n && s % 2 == 0);
        let mut r = s;
        for p in [2, 3, 5] { while r % p == 0 { r /= p; } }
        prop_assert_eq!(r, 1);
        for k in (n.max(2)..s).filter(|k| k % 2 == 0) {
            let mut r = k;
            for p in [2, 3, 5] { while r % p == 0 { r /= p; } }
            prop_assert!(r != 1);
        }
    }
}
