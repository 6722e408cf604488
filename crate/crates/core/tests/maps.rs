use cavlab_core::functionals::{g_field, ExponentConfig};
use cavlab_core::maps::*;
use cavlab_core::ramp::SMOOTHSTEP5_MAX_SLOPE;
use cavlab_core::tensor3::bracket;
use cavlab_core::{Mat3, Vec3};
use proptest::prelude::*;
use std::sync::Arc;

fn shear() -> Arc<dyn MapField> {
    Arc::new(ShearField::default())
}

fn catalogue() -> Vec<DeformationMap> {
    let id = identity_map();
    let bump = bump_map(0.1, 8).unwrap();
    let cavity = radial_map(RadialProfile::Cavity { lambda: 0.4 }).unwrap();
    let held = hold_map(shear(), 0.5).unwrap();
    let phi = TestField::new(Vec3::new(0.1, 0.02, 0.0), 0.08, -Vec3::E1, Mat3::ZERO).unwrap();
    vec![
        id.clone(),
        cavity.clone(),
        radial_map(RadialProfile::Cavity { lambda: 0.2 }).unwrap(),
        radial_map(RadialProfile::Power { p: 2.0 }).unwrap(),
        hold_map(Arc::new(IdentityField), 0.4).unwrap(),
        held.clone(),
        circle_map(&id, 0.3).unwrap(),
        circle_map(&bump, 0.05).unwrap(),
        inner_variation(&bump, &phi, 1e-3).unwrap(),
        bump,
        path_gamma(&held, 0.3, 0.0).unwrap().map,
        path_gamma(&held, 0.3, 0.5).unwrap().map,
        path_gamma(&held, 0.3, 1.0).unwrap().map,
        mollified_blend(&cavity, 3, 128).unwrap().0,
    ]
}

#[test]
fn every_map_fixes_the_boundary_and_meets_its_descriptor() {
    for w in catalogue() {
        let err = boundary_identity_error(&w).unwrap();
        assert!(err < 1e-10, "{}: boundary error {err}", w.label());
        check_descriptor(&w, 10_000).unwrap_or_else(|e| panic!("{}: {e}", w.label()));
    }
}

#[test]
fn analytic_gradients_match_differences() {
    for w in catalogue() {
        let x0 = w.singularity().location;
        let points: Vec<Vec3> = ball_samples(400, x0, 0.05)
            .into_iter()
            .filter(|x| w.interfaces().iter().all(|r| (x.norm() - r).abs() > 0.02))
            .filter(|x| x.norm() > 0.05)
            .take(100)
            .collect();
        let err = gradient_fd_error(&w, &points).unwrap();
        assert!(err < 1e-5, "{}: relative gradient error {err}", w.label());
    }
}

#[test]
fn radial_examples() {
    let sq = radial_map(RadialProfile::Power { p: 2.0 }).unwrap();
    let g = sq.gradient(Vec3::new(0.5, 0.0, 0.0)).unwrap();
    assert!((g - Mat3::diag(1.0, 0.5, 0.5)).max_abs() < 1e-14);
    let same = radial_map(RadialProfile::Identity).unwrap();
    let x = Vec3::new(0.3, -0.1, 0.2);
    assert_eq!(same.value(x).unwrap(), x);
    let bad = RadialProfile::Custom { name: "half".into(), profile: Arc::new(|r| (0.5 * r, 0.5)) };
    assert!(radial_map(bad).is_err());
    assert!(radial_map(RadialProfile::Cavity { lambda: 1.0 }).is_err());
    assert!(radial_map(RadialProfile::Power { p: 0.0 }).is_err());
}

#[test]
fn cavity_map_g_is_the_radial_field() {
    let w = radial_map(RadialProfile::Cavity { lambda: 0.4 }).unwrap();
    for x in ball_samples(200, Vec3::ZERO, 1e-3) {
        let r = x.norm();
        let expected = x / (r * r * r);
        let g = g_field(&w, x).unwrap();
        assert!((g - expected).norm() <= 1e-12 * expected.norm());
    }
}

#[test]
fn hold_examples() {
    let w = hold_map(Arc::new(IdentityField), 0.4).unwrap();
    assert_eq!(w.value(Vec3::new(0.0, 0.0, 0.2)).unwrap(), Vec3::new(0.0, 0.0, 0.4));
    assert!(hold_map(Arc::new(IdentityField), 1.0).is_err());
    assert!(hold_map(Arc::new(IdentityField), 0.0).is_err());
    assert!(ShearField::new(0.3, 0.5).is_err());
}

#[test]
fn unit_value_direction_is_annihilated() {
    // <grad w, wb (x) grad w^T wb> w = 0 pointwise.
    let w = hold_map(shear(), 0.5).unwrap();
    for x in ball_samples(200, Vec3::ZERO, 1e-3) {
        let j = w.jet(x).unwrap();
        let wb = j.value.unit().unwrap();
        let v = bracket(&j.gradient, &wb.outer(j.gradient.transpose() * wb)) * j.value;
        assert!(v.max_abs() < 1e-10, "{x:?}: {v:?}");
    }
}

#[test]
fn circle_map_contract() {
    let id = identity_map();
    assert!(circle_map(&id, 0.0).is_err());
    let w = circle_map(&id, 0.3).unwrap();
    assert_eq!(w.singularity().kind, SingularityKind::Discontinuity { tau0: 0.3 });
    let x = Vec3::new(0.1, 0.0, 0.0);
    assert!((w.value(x).unwrap() - Vec3::new(0.3, 0.0, 0.0)).norm() < 1e-15);
    let far = Vec3::new(0.5, 0.2, 0.0);
    assert_eq!(w.value(far).unwrap(), far);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn circle_projection_preserves_g(x in proptest::array::uniform3(-0.55..0.55f64), tau in 0.02..0.3f64) {
        let x = Vec3(x);
        let bump = bump_map(0.1, 8).unwrap();
        let x0 = bump.singularity().location;
        prop_assume!((x - x0).norm() > 1e-3);
        let level = bump.value(x).unwrap().norm();
        prop_assume!((level - tau).abs() > 1e-6);
        let wc = circle_map(&bump, tau).unwrap();
        let a = g_field(&wc, x).unwrap();
        let b = g_field(&bump, x).unwrap();
        prop_assert!((a - b).norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn test_field_vanishes_off_support(c in proptest::array::uniform3(-0.3..0.3f64), s in 0.05..0.4f64, y in proptest::array::uniform3(-1.0..1.0f64)) {
        let phi = TestField::new(Vec3(c), s, Vec3::new(0.2, -0.5, 0.1), Mat3::diag(0.1, 0.2, -0.3)).unwrap();
        let y = Vec3(y);
        if (y - phi.center).norm() >= s || y.norm() < phi.dead_zone() {
            prop_assert_eq!(phi.value(y), Vec3::ZERO);
        }
        prop_assert!(phi.value(y).norm() <= phi.sup_bound() + 1e-12);
    }
}

#[test]
fn path_velocity_matches_differences() {
    let w = hold_map(shear(), 0.5).unwrap();
    let (tau, h) = (0.3, 1e-4);
    let mut used = 0;
    for t in [0.25, 0.5, 0.75] {
        let p = path_gamma(&w, tau, t).unwrap();
        let plus = path_gamma(&w, tau, t + h).unwrap();
        let minus = path_gamma(&w, tau, t - h).unwrap();
        for x in ball_samples(300, Vec3::ZERO, 0.05) {
            let r = x.norm();
            let level = r.powf(t) * w.value(x * r.powf(-t)).unwrap().norm();
            if (level - tau).abs() < 0.02 || p.map.interfaces().iter().any(|s| (r - s).abs() < 0.02) {
                continue;
            }
            let v = p.field.velocity(x).unwrap();
            let fd = (plus.map.value(x).unwrap() - minus.map.value(x).unwrap()) / (2.0 * h);
            assert!((v - fd).norm() <= 1e-4 * v.norm().max(1e-3), "t = {t}, x = {x:?}: {v:?} vs {fd:?}");
            used += 1;
        }
    }
    assert!(used > 300);
}

#[test]
fn path_endpoints() {
    let w = hold_map(shear(), 0.5).unwrap();
    let start = path_gamma(&w, 0.3, 0.0).unwrap().map;
    let end = path_gamma(&w, 0.3, 1.0).unwrap().map;
    let circled = circle_map(&w, 0.3).unwrap();
    let id_circle = circle_map(&identity_map(), 0.3).unwrap();
    for x in ball_samples(200, Vec3::ZERO, 1e-3) {
        assert!((start.value(x).unwrap() - circled.value(x).unwrap()).norm() < 1e-13);
        assert!((end.value(x).unwrap() - id_circle.value(x).unwrap()).norm() < 1e-13);
    }
    assert!(path_gamma(&w, 0.3, 1.5).is_err());
    assert!(path_gamma(&bump_map(0.1, 8).unwrap(), 0.3, 0.5).is_err());
}

#[test]
fn bump_family_facts() {
    let tau = 0.1;
    let g = bump_map(tau, 8).unwrap();
    assert!(g.value(Vec3::new(tau, 0.0, 0.0)).unwrap().norm() < 1e-12);
    let outside = Vec3::new(0.6, 0.6, 0.0);
    assert_eq!(g.value(outside).unwrap(), outside);
    let b = BumpFamily::new(tau, 8).unwrap();
    assert!(b.bump_gradient_bound() <= 2.0 / (8.0 * tau));
    assert_eq!(b.bump(Vec3::new(0.0, 0.29, 0.0)).0, 1.0);
    assert!(bump_map(tau, 7).is_err());
    assert!(bump_map(0.2, 8).is_err());
    let mut last = f64::INFINITY;
    for tau in [0.1, 0.05, 0.025] {
        let g = bump_map(tau, 8).unwrap();
        let sup = ball_samples(1000, Vec3::ZERO, 0.0)
            .into_iter()
            .map(|x| (g.value(x).unwrap() - x).norm())
            .fold(0.0, f64::max);
        assert!(sup <= tau * (1.0 + 1e-12) && sup < last);
        last = sup;
    }
}

#[test]
fn inner_variation_moves_the_zero() {
    let g = bump_map(0.1, 8).unwrap();
    let x0 = g.singularity().location;
    let phi = TestField::new(x0, 0.08, Vec3::new(-1.0, 0.5, 0.0), Mat3::ZERO).unwrap();
    let eps = 1e-3;
    let moved = inner_variation(&g, &phi, eps).unwrap();
    let x = moved.singularity().location;
    assert!((x + phi.value(x) * eps - x0).norm() < 1e-14);
    assert!(moved.value(x).unwrap().norm() < 1e-12);
    let wide = TestField::new(Vec3::new(0.5, 0.0, 0.0), 0.6, Vec3::E1, Mat3::ZERO);
    assert!(wide.is_err());
}

#[test]
fn blend_branches_and_cutoff_slope() {
    let w = radial_map(RadialProfile::Cavity { lambda: 0.4 }).unwrap();
    assert!(mollified_blend(&w, 3, 64).is_err());
    assert!(mollified_blend(&identity_map(), 3, 128).is_err());
    let j: i32 = 3;
    let (map, blend) = mollified_blend(&w, j as u32, 128).unwrap();
    let inner = 0.5_f64.powi(j + 2);
    let outer = 0.5_f64.powi(j + 1);
    for x in ball_samples(500, Vec3::ZERO, 1e-4) {
        let r = x.norm();
        if r < inner {
            assert_eq!(map.value(x).unwrap(), w.value(x).unwrap());
        } else if r > outer {
            assert_eq!(map.value(x).unwrap(), blend.smoothed(x).unwrap().value);
        }
        let (_, d) = blend.cutoff(x);
        assert!(d.norm() <= SMOOTHSTEP5_MAX_SLOPE * 2f64.powi(j + 2) * (1.0 + 1e-12));
    }
    const { assert!(SMOOTHSTEP5_MAX_SLOPE <= 15.0 / 4.0) };
}

#[test]
fn g_is_well_defined_on_the_catalogue() {
    let cfg = ExponentConfig::default();
    for w in catalogue() {
        let x = Vec3::new(0.37, -0.41, 0.22);
        let g = g_field(&w, x).unwrap();
        assert!(g.norm().is_finite() && cfg.zeta(x).dot(g).is_finite(), "{}", w.label());
    }
}
