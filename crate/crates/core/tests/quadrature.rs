use cavlab_core::maps::fibonacci_sphere;
use cavlab_core::quadrature::{
    extrapolate, fit_rate, gauss_legendre, integrate_annulus, integrate_ball, integrate_sphere, kahan_sum,
    pairwise_sum, ExtrapolationPolicy, QuadratureSpec, SingularPoint,
};
use cavlab_core::{Error, Mat3, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

fn gamma_half(n2: u32) -> f64 {
    // Gamma(n2 / 2) for a positive integer n2.
    match n2 {
        1 => PI.sqrt(),
        2 => 1.0,
        _ => (n2 as f64 / 2.0 - 1.0) * gamma_half(n2 - 2),
    }
}

/// `int_B x^a y^b z^c` in closed form.
fn ball_moment(a: u32, b: u32, c: u32) -> f64 {
    if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
        return 0.0;
    }
    let d = a + b + c + 3;
    2.0 * gamma_half(a + 1) * gamma_half(b + 1) * gamma_half(c + 1) / (gamma_half(d) * d as f64)
}

#[test]
fn ball_moments_are_exact() {
    let spec = QuadratureSpec::default();
    for (a, b, c) in [(0, 0, 0), (2, 0, 0), (2, 2, 0), (4, 2, 2), (1, 1, 0), (6, 0, 2), (3, 0, 0)] {
        let got = integrate_ball(|x| Ok(x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32)), &spec, &[])
            .unwrap()
            .value;
        let want = ball_moment(a, b, c);
        assert!((got - want).abs() < 1e-12, "x^{a} y^{b} z^{c}: {got} vs {want}");
    }
    assert!((ball_moment(0, 0, 0) - 4.0 * PI / 3.0).abs() < 1e-15);
}

#[test]
fn inverse_power_matches_closed_form() {
    let spec = QuadratureSpec::default();
    let f = |x: Vec3| Ok(x.norm().powf(-2.5));
    let got = integrate_ball(f, &spec, &[SingularPoint::with_exponent(Vec3::ZERO, 0.5)]).unwrap();
    assert!((got.value / (8.0 * PI) - 1.0).abs() < 1e-6, "{got:?}");
}

#[test]
fn off_centre_singularity() {
    // int_B |x - p|^-2 for |p| < 1 equals 2 pi (1 + (1 - p^2)/(2p) ln((1+p)/(1-p))).
    let p = 0.3;
    let c = Vec3::new(0.0, p, 0.0);
    let exact = 2.0 * PI * (1.0 + (1.0 - p * p) / (2.0 * p) * ((1.0 + p) / (1.0 - p)).ln());
    let spec = QuadratureSpec::default();
    let got = integrate_ball(|x| Ok((x - c).norm_squared().recip()), &spec, &[SingularPoint::with_exponent(c, 1.0)]).unwrap();
    assert!((got.value / exact - 1.0).abs() < 1e-5, "{} vs {exact}", got.value);
}

#[test]
fn sphere_area_and_odd_symmetry() {
    let spec = QuadratureSpec::default();
    let c = Vec3::new(0.1, -0.2, 0.3);
    let area = integrate_sphere(|_| Ok(1.0), c, 0.25, &spec).unwrap();
    assert!((area - 4.0 * PI * 0.0625).abs() < 1e-12);
    let odd = integrate_sphere(|y| Ok(((y - c) / 0.25)[0]), c, 0.25, &spec).unwrap();
    assert!(odd.abs() < 1e-12);
    assert!(integrate_sphere(|_| Ok(1.0), Vec3::new(0.9, 0.0, 0.0), 0.2, &spec).is_err());
}

#[test]
fn anisotropic_sphere_average_matches_lattice_oracle() {
    // Dense Fibonacci-lattice average on the sphere of radius 0.1.
    let f0 = Mat3::diag(1.0, 1.0, 2.0);
    let c = Vec3::new(0.2, 0.1, -0.1);
    let eps = 0.1;
    let f = |y: Vec3| Ok((f0 * (y - c)).norm().powi(-3));
    let spec = QuadratureSpec::default();
    let got = integrate_sphere(f, c, eps, &spec).unwrap();
    let n = 1_000_000;
    let lattice = fibonacci_sphere(n).into_iter().map(|d| f(c + d * eps).unwrap());
    let oracle = kahan_sum(lattice) / n as f64 * 4.0 * PI * eps * eps;
    assert!((got / oracle - 1.0).abs() < 1e-4, "{got} vs {oracle}");
    // Closed form: int_{S^2} |F y|^-3 = 4 pi / |det F|, scaled by eps^-1.
    assert!((got - 4.0 * PI / (2.0 * eps)).abs() < 1e-8 * got);
}

#[test]
fn dipole_kernel_is_conditionally_convergent() {
    let spec = QuadratureSpec::default();
    let f = |y: Vec3| {
        let r = y.norm();
        let u = y[0] / r;
        Ok((1.0 - 3.0 * u * u) / (r * r * r))
    };
    let abs: Vec<f64> = [0.2, 0.02, 0.002]
        .iter()
        .map(|&a| integrate_annulus(|y| f(y).map(f64::abs), Vec3::ZERO, a, 2.0 * a, &spec).unwrap())
        .collect();
    assert!(abs.iter().all(|v| *v > 6.0 && (v - abs[0]).abs() < 1e-9));
    let signed = integrate_annulus(f, Vec3::ZERO, 0.01, 0.5, &spec).unwrap();
    assert!(signed.abs() < 1e-8);
    let flagged = integrate_ball(|y| f(y).map(f64::abs), &spec, &[Vec3::ZERO.into()]);
    assert!(matches!(flagged, Err(Error::NonConvergence { .. })), "{flagged:?}");
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let spec = QuadratureSpec::preset("fast").unwrap();
    let f = |x: Vec3| Ok((x[0] + 2.0 * x[1] * x[2]).sin() * x.norm().powf(-2.2));
    let points = [SingularPoint::from(Vec3::ZERO)];
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| integrate_ball(f, &spec, &points).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.value.to_bits(), four.value.to_bits());
    assert_eq!(one.error.to_bits(), four.error.to_bits());
    assert_eq!(one, run(1));
}

#[test]
fn refinement_reduces_error_estimate_for_smooth_fields() {
    let fields: [fn(Vec3) -> f64; 3] = [
        |x| (x[0] * 9.0).cos() * (2.0 * x[1]).exp(),
        |x| 1.0 / (1.05 + x[2]),
        |x| (x.norm_squared() + 0.01).sqrt() * x[0] * x[0],
    ];
    let coarse = QuadratureSpec::preset("fast").unwrap();
    let fine = coarse.refined();
    for f in fields {
        let a = integrate_ball(|x| Ok(f(x)), &coarse, &[]).unwrap();
        let b = integrate_ball(|x| Ok(f(x)), &fine, &[]).unwrap();
        assert!(a.error > 1e-12, "coarse rule already exact: {}", a.error);
        assert!(b.error <= a.error + 1e-14 * b.value.abs(), "{} > {}", b.error, a.error);
    }
}

#[test]
fn presets_round_trip_through_json() {
    for name in ["fast", "default", "paranoid"] {
        let spec = QuadratureSpec::preset(name).unwrap();
        let back: QuadratureSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
    }
    assert!(QuadratureSpec::preset("sloppy").is_err());
}

#[test]
fn rate_fit_examples() {
    let taus = [0.1, 0.05, 0.025, 0.0125];
    let ys: Vec<f64> = taus.iter().map(|t: &f64| 3.0 * t.powf(0.5)).collect();
    let fit = fit_rate(&taus, &ys).unwrap();
    assert!((fit.slope - 0.5).abs() < 1e-6);
    assert!(fit_rate(&taus, &[1.0, 0.0, 1.0, 1.0]).is_err());
}

proptest! {
    #[test]
    fn gauss_legendre_exact_to_degree(n in 1usize..24, k in 0u32..46) {
        prop_assume!((k as usize) < 2 * n);
        let (x, w) = gauss_legendre(n);
        let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
        let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
        prop_assert!((got - want).abs() < 1e-13, "n={} k={}: {} vs {}", n, k, got, want);
    }

    #[test]
    fn summation_agrees(values in proptest::collection::vec(-1e3..1e3f64, 0..300)) {
        let plain: f64 = values.iter().sum();
        let scale = values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((kahan_sum(values.iter().copied()) - plain).abs() <= 1e-12 * scale);
        prop_assert!((pairwise_sum(&values) - plain).abs() <= 1e-12 * scale);
    }

    #[test]
    fn extrapolation_removes_leading_power(c0 in -5.0..5.0f64, c1 in -5.0..5.0f64, theta in 0.3..1.5f64) {
        let radii = [0.02, 0.01, 0.005, 0.0025];
        let values: Vec<f64> = radii.iter().map(|r: &f64| c0 + c1 * r.powf(theta)).collect();
        let policy = ExtrapolationPolicy { exponent_hint: theta, terms: 2, exponent_step: 1.0, log_correction: false };
        let e = extrapolate(&radii, &values, &policy).unwrap();
        prop_assert!((e.value - c0).abs() < 1e-10 * (1.0 + c0.abs() + c1.abs()));
    }
}
