use cavlab_core::tensor3::{
    bracket, bracket_full_sum, bracket_kills_direction, cofactor_identity_residual, epsilon_contract, levi_civita,
    unit_split_residual, tangential_residual,
};
use cavlab_core::{Mat3, Vec3};
use proptest::prelude::*;

fn entry() -> impl Strategy<Value = f64> {
    -2.0..2.0f64
}

fn mat() -> impl Strategy<Value = Mat3> {
    proptest::array::uniform3(proptest::array::uniform3(entry())).prop_map(Mat3)
}

fn vec3() -> impl Strategy<Value = Vec3> {
    proptest::array::uniform3(entry()).prop_map(Vec3)
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3().prop_filter_map("nonzero", |v| if v.norm() > 1e-3 { v.unit() } else { None })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn adjugate_polarises(xi in mat(), eta in mat()) {
        let r = (xi + eta).adjugate() - xi.adjugate() - eta.adjugate() - bracket(&xi, &eta);
        prop_assert!(r.max_abs() < 1e-12, "residual {}", r.max_abs());
    }

    #[test]
    fn bracket_is_symmetric_and_bilinear(xi in mat(), eta in mat(), zeta in mat(), s in entry()) {
        prop_assert!((bracket(&xi, &eta) - bracket(&eta, &xi)).max_abs() < 1e-12);
        let lhs = bracket(&(xi + zeta * s), &eta);
        let rhs = bracket(&xi, &eta) + bracket(&zeta, &eta) * s;
        prop_assert!((lhs - rhs).max_abs() < 1e-11);
    }

    #[test]
    fn bracket_matches_index_sum(xi in mat(), eta in mat()) {
        prop_assert!((bracket(&xi, &eta) - bracket_full_sum(&xi, &eta)).max_abs() < 1e-12);
    }

    #[test]
    fn rank_one_update(xi in mat(), u in vec3(), v in vec3()) {
        let uv = u.outer(v);
        prop_assert!(uv.adjugate().max_abs() < 1e-12);
        let r = bracket(&xi, &uv) - ((xi + uv).adjugate() - xi.adjugate());
        prop_assert!(r.max_abs() < 1e-11);
        let id = bracket(&Mat3::IDENTITY, &uv) - (Mat3::IDENTITY * u.dot(v) - uv);
        prop_assert!(id.max_abs() < 1e-12);
    }

    #[test]
    fn unit_direction_identities(f in mat(), v in unit(), t in vec3()) {
        prop_assert!(unit_split_residual(&f, v).max_abs() < 1e-10);
        prop_assert!(tangential_residual(&f, v, t).max_abs() < 1e-10);
        prop_assert!(cofactor_identity_residual(&f, v).abs() < 1e-10);
        prop_assert!(bracket_kills_direction(&f, v).max_abs() < 1e-10);
    }

    #[test]
    fn symmetric_part_has_no_axial_vector(a in mat()) {
        let s = a + a.transpose();
        prop_assert!(epsilon_contract(&s).max_abs() < 1e-15);
    }

    #[test]
    fn adjugate_times_matrix_is_determinant(f in mat()) {
        let r = f.adjugate() * f - Mat3::IDENTITY * f.det();
        prop_assert!(r.max_abs() < 1e-11);
    }
}

#[test]
fn adjugate_examples() {
    assert_eq!(Mat3::IDENTITY.adjugate(), Mat3::IDENTITY);
    assert_eq!(Mat3::diag(1.0, 2.0, 3.0).adjugate(), Mat3::diag(6.0, 3.0, 2.0));
}

#[test]
fn bracket_of_identity_is_twice_identity() {
    assert_eq!(bracket(&Mat3::IDENTITY, &Mat3::IDENTITY), Mat3::IDENTITY * 2.0);
}

#[test]
fn unit_direction_split_on_diagonal_example() {
    // Hand expansion: adj F = diag(15, 10, 6); adj F e2 (x) e2 = 10 e2 (x) e2;
    // <F, e2 (x) 3 e2> = 3 <F, e2 (x) e2> = diag(15, 0, 6).
    let f = Mat3::diag(2.0, 3.0, 5.0);
    let split = bracket(&f, &Vec3::E2.outer(f.transpose() * Vec3::E2));
    assert_eq!(split, Mat3::diag(15.0, 0.0, 6.0));
    assert_eq!(unit_split_residual(&f, Vec3::E2), Mat3::ZERO);
    assert_eq!(unit_split_residual(&Mat3::IDENTITY, Vec3::E1), Mat3::ZERO);
}

#[test]
fn alternating_symbol_contractions() {
    // eps_jab eps_iab = 2 delta_ij
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += levi_civita(j, a, b) * levi_civita(i, a, b);
                }
            }
            assert_eq!(s, if i == j { 2.0 } else { 0.0 });
        }
    }
}
