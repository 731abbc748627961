use nlcontrol::polyopt::*;
use nlcontrol::Error;
use proptest::prelude::*;

fn params(lambda_t: f64, n: u32, eta: f64, e_ref: f64) -> UpdateParams {
    UpdateParams {
        lambda_t,
        n,
        eta,
        e_ref,
    }
}

/// Dense grid scan of the integrand, independent of the root finder.
fn scan_max(b: &Brackets, p: &UpdateParams, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    (0..=n)
        .map(|k| {
            let x = lo + (hi - lo) * k as f64 / n as f64;
            (integrand(b, p, x), x)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

#[test]
fn roots_of_known_cubics() {
    let r = real_roots([-6.0, 11.0, -6.0, 1.0]);
    assert_eq!(r.len(), 3);
    for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
        assert!((a - b).abs() < 1e-14);
    }
    let r = real_roots([1.0, 0.0, 0.0, 1.0]);
    assert_eq!(r.len(), 1);
    assert!((r[0] + 1.0).abs() < 1e-15);
    assert!(real_roots([1.0, 0.0, 1.0, 0.0]).is_empty());
    assert_eq!(real_roots([-4.0, 2.0, 0.0, 0.0]), vec![2.0]);
    assert!(real_roots([0.0; 4]).is_empty());
    let r = real_roots([0.0, 0.0, 0.0, 2.0]);
    assert_eq!(r, vec![0.0]);
}

#[test]
fn zero_brackets_maximise_at_zero() {
    let x = maximize_p1(&Brackets::default(), &params(1.0, 2, 1.0, 0.3)).unwrap();
    assert_eq!(x, 0.0);
}

#[test]
fn linear_bracket_maximiser() {
    let b = Brackets::new(1.0, 0.0, 0.0);
    let p = params(1.0, 2, 1.0, 0.0);
    let x = maximize_p1(&b, &p).unwrap();
    let expect = -(0.25_f64).cbrt();
    assert!((x - expect).abs() < 1e-12);
    assert!((x + 0.6300).abs() < 1e-4);
    let (_, xs) = scan_max(&b, &p, -2.0, 2.0, 400_000);
    assert!((xs - x).abs() < 2e-5);
}

#[test]
fn n1_with_cubic_coupling_is_rejected() {
    let b = Brackets::new(0.1, 0.0, 0.5);
    assert!(matches!(
        maximize_p1(&b, &params(1.0, 1, 1.0, 0.0)),
        Err(Error::InvalidConfig(_))
    ));
    assert!(matches!(
        maximize_p1(&b, &params(1.0, 3, 1.0, 0.0)),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn implicit_zero_brackets() {
    let x = solve_update_ii(&Brackets::default(), &params(2.0, 2, 1.0, 0.0), 0.0).unwrap();
    assert_eq!(x, 0.0);
}

#[test]
fn implicit_linear_case() {
    let c = 0.37;
    let x = solve_update_ii(&Brackets::new(c, 0.0, 0.0), &params(0.0, 2, 1.0, 0.0), 0.0).unwrap();
    assert!((x + c).abs() < 1e-15);
}

#[test]
fn implicit_n1_may_lack_real_root() {
    // x − 0 + (0.5 + 2 x²) = 0 has no real solution
    let err = solve_update_ii(
        &Brackets::new(0.5, 0.0, 2.0),
        &params(0.0, 1, 1.0, 0.0),
        0.0,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoRealRoot { .. }));
}

#[test]
fn implicit_picks_closest_root() {
    // x² − 4x + 3 = 0: roots 1 and 3
    let b = Brackets::new(3.0, -5.0, 1.0);
    let p = params(0.0, 1, 1.0, 0.0);
    assert!((solve_update_ii(&b, &p, 2.4).unwrap() - 3.0).abs() < 1e-12);
    assert!((solve_update_ii(&b, &p, 1.5).unwrap() - 1.0).abs() < 1e-12);
    // equidistant: smaller magnitude wins
    assert!((solve_update_ii(&b, &p, 2.0).unwrap() - 1.0).abs() < 1e-12);
    // x² − 1 = 0
    let b = Brackets::new(-1.0, -1.0, 1.0);
    assert!((solve_update_ii(&b, &p, -0.2).unwrap() + 1.0).abs() < 1e-12);
    assert!((solve_update_ii(&b, &p, 0.2).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn fixed_point_is_stationary() {
    // choose brackets so that the stationarity condition holds at e
    let (lambda, n, e) = (3.0, 2u32, 0.4_f64);
    let (a, be) = (0.2, -0.7);
    let mu = -(2.0 * n as f64 * lambda * e.powi(3) + 2.0 * a * e + 3.0 * be * e * e);
    let b = Brackets::new(mu, a, be);
    assert!(stationarity_lhs(&b, lambda, n, e).abs() < 1e-15);
    let p = params(lambda, n, 0.5, e);
    assert!((maximize_p1(&b, &p).unwrap() - e).abs() < 1e-9);
    assert!((solve_update_ii(&b, &p, e).unwrap() - e).abs() < 1e-9);
}

#[test]
fn root_tracking_is_continuous() {
    // slowly varying brackets along a synthetic time series
    let mut prev = 0.0;
    let mut path = Vec::new();
    for k in 0..2000 {
        let t = k as f64 / 2000.0;
        let b = Brackets::new(0.3 * (6.0 * t).sin(), 0.1 * t, -0.2);
        let p = params(0.5, 2, 1.0, 0.05 * (3.0 * t).cos());
        prev = solve_update_ii(&b, &p, prev).unwrap();
        path.push(prev);
    }
    let max_jump = path
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    assert!(max_jump < 0.01, "jump {max_jump}");
}

fn draw() -> impl Strategy<Value = (Brackets, UpdateParams, f64)> {
    (
        -2.0..2.0f64,
        -2.0..2.0f64,
        -2.0..2.0f64,
        0.05..5.0f64,
        0.05..3.0f64,
        -1.0..1.0f64,
        -1.0..1.0f64,
    )
        .prop_map(|(m, a, be, l, eta, e, prev)| {
            (Brackets::new(m, a, be), params(l, 2, eta, e), prev)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn maximiser_is_nonnegative((b, p, _) in draw()) {
        let x = maximize_p1(&b, &p).unwrap();
        prop_assert!(integrand(&b, &p, x) >= 0.0);
    }

    #[test]
    fn implicit_root_residual_and_positivity((b, p, prev) in draw()) {
        let x = solve_update_ii(&b, &p, prev).unwrap();
        let scale = 1.0 + x.abs().powi(3) * p.eta * p.lambda_t + x.abs();
        prop_assert!(update_ii_residual(&b, &p, x).abs() < 1e-10 * scale);
        prop_assert!(integrand(&b, &p, x) >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn maximiser_beats_dense_scan((b, p, _) in draw()) {
        let x = maximize_p1(&b, &p).unwrap();
        let (best_scan, _) = scan_max(&b, &p, -4.0, 4.0, 100_000);
        prop_assert!(integrand(&b, &p, x) >= best_scan - 1e-9);
    }
}
