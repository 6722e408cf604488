use super::{Comparison, MapSpec, Run, ScenarioConfig};
use crate::error::{Error, Result};
use crate::functionals::{
    blend_gradient_error, delta_k_formula, delta_k_report, div_g, g_field, i_functional, ibp_boundary_decay,
    ibp_residual, inner_difference_quotients, innervar_derivative_flux, innervar_derivative_volume, k_difference,
    k_functional, zero_motion_scan, relative, shell_mass, sphere_factor, BracketOrdering, VariationReport, FD_STEPS,
};
use crate::maps::{
    bump_map, ball_samples, identity_map, inner_variation, mollified_blend, path_gamma, DeformationMap,
    SingularityKind, TestField,
};
use crate::quadrature::{fit_rate, integrate_annulus, integrate_ball, QuadratureSpec, SingularPoint};
use crate::tensor3::{
    bracket, bracket_full_sum, bracket_kills_direction, cofactor_identity_residual, epsilon_contract, unit_split_residual,
    tangential_residual, Mat3, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub(super) fn dispatch(config: &ScenarioConfig, run: &mut Run) -> Result<()> {
    let map = config.map.as_ref();
    match config.scenario.as_str() {
        "identity-suite" => identity_suite(run, config.seed.unwrap_or(DEFAULT_SEED), config.samples.unwrap_or(10_000)),
        "radial-suite" => radial_suite(run, map),
        "circle-suite" => circle_suite(run, map, config.tau),
        "stationarity-suite" => stationarity_suite(run, map),
        "path-scan" => path_scan(run, map, config.tau.unwrap_or(0.3), config.ladder.as_deref()),
        "innervar-suite" => innervar_suite(run, map),
        "tau-scan" => tau_scan(run, config.ladder.as_deref()),
        "divergence-probe" => divergence_probe(run),
        "mollifier-suite" => mollifier_suite(run, map),
        "zero-motion-scan" => zero_motion_suite(run, config.ladder.as_deref()),
        other => return Err(Error::Config(format!("unknown scenario {other:?}"))),
    }
    Ok(())
}

const DEFAULT_SEED: u64 = 0x5eed_ca71;
const ALGEBRA_TOL: f64 = 1e-10;
pub(super) const TAU_LADDER: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
pub(super) const T_LADDER: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

fn build(spec: Option<&MapSpec>, fallback: impl FnOnce() -> Result<DeformationMap>) -> Result<DeformationMap> {
    match spec {
        Some(s) => s.build(),
        None => fallback(),
    }
}

fn cavity(lambda: f64) -> Result<DeformationMap> {
    MapSpec::Cavity { lambda }.build()
}

fn held_shear(rho: f64) -> Result<DeformationMap> {
    MapSpec::Hold { rho, base: super::HoldBase::Shear { stretch: 0.25, twist: 0.5 } }.build()
}

// ---------------------------------------------------------------------------

fn identity_suite(run: &mut Run, seed: u64, samples: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mat = |rng: &mut ChaCha8Rng| Mat3(std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0))));
    let vec = |rng: &mut ChaCha8Rng| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let mut worst = [0.0_f64; 10];
    run.timed("algebra", |_| {
        for _ in 0..samples {
            let xi = mat(&mut rng);
            let eta = mat(&mut rng);
            let u = vec(&mut rng);
            let v = vec(&mut rng);
            let n = loop {
                if let Some(n) = vec(&mut rng).unit() {
                    break n;
                }
            };
            let tau = vec(&mut rng);
            let uv = u.outer(v);
            let sym = eta + eta.transpose();
            let residuals = [
                (xi + eta).adjugate() - xi.adjugate() - eta.adjugate() - bracket(&xi, &eta),
                bracket(&xi, &eta) - bracket(&eta, &xi),
                bracket(&xi, &xi) - xi.adjugate() * 2.0,
                bracket(&xi, &uv) - ((xi + uv).adjugate() - xi.adjugate()),
                bracket(&Mat3::IDENTITY, &uv) - (Mat3::IDENTITY * u.dot(v) - uv),
                uv.adjugate(),
                unit_split_residual(&xi, n),
                bracket(&xi, &eta) - bracket_full_sum(&xi, &eta),
            ];
            for (w, r) in worst.iter_mut().zip(residuals.iter()) {
                *w = w.max(r.max_abs());
            }
            worst[8] = worst[8]
                .max(tangential_residual(&xi, n, tau).max_abs())
                .max(bracket_kills_direction(&xi, n).max_abs())
                .max(cofactor_identity_residual(&xi, n).abs());
            worst[9] = worst[9].max(epsilon_contract(&sym).max_abs());
        }
    });
    let names = [
        "adjugate-polarisation",
        "bracket-symmetry",
        "bracket-diagonal",
        "rank-one-update",
        "identity-bracket",
        "rank-one-adjugate",
        "unit-direction-split",
        "bracket-index-sum",
        "normal-direction-identities",
        "symmetric-epsilon-cancellation",
    ];
    for (name, w) in names.iter().zip(worst) {
        run.check(name, Comparison::Abs, Ok(w), 0.0, ALGEBRA_TOL);
    }
    run.measure("samples", samples as f64);
}

/// Sample points at least `margin` from the singular point and from every interface sphere.
fn probe_points(w: &DeformationMap, n: usize, margin: f64) -> Vec<Vec3> {
    ball_samples(4 * n, w.singularity().location, margin)
        .into_iter()
        .filter(|x| w.interfaces().iter().all(|r| (x.norm() - r).abs() >= margin))
        .take(n)
        .collect()
}

fn max_relative_g_gap(a: &DeformationMap, b: &DeformationMap, points: &[Vec3]) -> Result<f64> {
    points.iter().try_fold(0.0_f64, |m, &x| {
        let ga = g_field(a, x)?;
        let gb = g_field(b, x)?;
        Ok(m.max((ga - gb).norm() / gb.norm()))
    })
}

/// `min (f(G(w)) - f(G(i)) - q zeta . (G(w) - G(i))) / f(G(i))` with `f = |.|^q`.
fn pointwise_convexity_gap(run: &Run, w: &DeformationMap, points: &[Vec3]) -> Result<f64> {
    let q = run.cfg.q();
    let id = identity_map();
    points.iter().try_fold(f64::INFINITY, |m, &x| {
        let g = g_field(w, x)?;
        let gi = g_field(&id, x)?;
        let fi = gi.norm().powf(q);
        let gap = g.norm().powf(q) - fi - q * run.cfg.zeta(x).dot(g - gi);
        Ok(m.min(gap / fi))
    })
}

fn radial_suite(run: &mut Run, map: Option<&MapSpec>) {
    let target = run.cfg.identity_value();
    let spec = run.spec.clone();
    let tol = (10.0 * spec.tolerance).max(1e-5);
    let id = identity_map();
    run.timed("identity", |run| {
        let i = i_functional(&id, &run.cfg, &spec);
        let i = run.integral("identity-I", i);
        run.check("identity-I", Comparison::Rel, i, target, tol);
        let k = k_functional(&id, &run.cfg, &spec);
        let k = run.integral("identity-K", k);
        run.check("identity-K", Comparison::Rel, k, target, tol);
    });
    run.timed("identity-paranoid", |run| {
        let paranoid = QuadratureSpec::preset("paranoid").expect("built-in preset");
        let i = i_functional(&id, &run.cfg, &paranoid);
        let i = run.integral("identity-I-paranoid", i);
        run.check("identity-I-paranoid", Comparison::Rel, i, target, 1e-7);
        let k = k_functional(&id, &run.cfg, &paranoid);
        let k = run.integral("identity-K-paranoid", k);
        run.check("identity-K-paranoid", Comparison::Rel, k, target, 1e-7);
    });

    let specs: Vec<MapSpec> = match map {
        Some(m) => vec![m.clone()],
        None => vec![
            MapSpec::Cavity { lambda: 0.2 },
            MapSpec::Cavity { lambda: 0.4 },
            MapSpec::Cavity { lambda: 0.6 },
            MapSpec::Power { p: 2.0 },
        ],
    };
    let q = run.cfg.q();
    for m in &specs {
        let tag = map_tag(m);
        run.timed(&tag, |run| {
            let w = match m.build() {
                Ok(w) => w,
                Err(e) => {
                    run.check(&format!("{tag}-I"), Comparison::Rel, Err(e), target, 1e-4);
                    return;
                }
            };
            let i = i_functional(&w, &run.cfg, &spec);
            let i = run.integral(&format!("{tag}-I"), i);
            run.check(&format!("{tag}-I"), Comparison::Rel, clone_result(&i), target, 1e-4);
            let k = k_functional(&w, &run.cfg, &spec);
            let k = run.integral(&format!("{tag}-K"), k);
            run.check(&format!("{tag}-K"), Comparison::Rel, clone_result(&k), target, 1e-4);
            let gap = i.and_then(|i| k.map(|k| i - target - q * (k - target)));
            run.check(&format!("{tag}-lower-bound-gap"), Comparison::AtLeast, gap, 0.0, 1e-3 * target);
            let pts = probe_points(&w, 200, 1e-3);
            let dev = max_relative_g_gap(&w, &id, &pts);
            run.check(&format!("{tag}-G-equals-identity"), Comparison::Abs, dev, 0.0, 1e-10);
        });
    }

    run.timed("held-shear", |run| {
        let w = held_shear(0.5);
        let i = w.as_ref().map_err(clone_err).and_then(|w| i_functional(w, &run.cfg, &spec));
        let i = run.integral("held-shear-I", i);
        let k = w.as_ref().map_err(clone_err).and_then(|w| k_functional(w, &run.cfg, &spec));
        let k = run.integral("held-shear-K", k);
        if let Ok(k) = k {
            run.measure("held-shear-K", k);
        }
        run.check("held-shear-I-at-least-identity", Comparison::AtLeast, clone_result(&i), target, 1e-3 * target);
        let gap = i.and_then(|i| k.map(|k| i - target - q * (k - target)));
        run.check("held-shear-lower-bound-gap", Comparison::AtLeast, gap, 0.0, 1e-3 * target);
    });
    run.timed("pointwise-convexity", |run| {
        let mut worst = Ok(f64::INFINITY);
        for w in [held_shear(0.5), bump_map(0.1, 8), cavity(0.4)] {
            worst = worst.and_then(|m: f64| {
                let w = w?;
                let pts = probe_points(&w, 200, 1e-3);
                Ok(m.min(pointwise_convexity_gap(run, &w, &pts)?))
            });
        }
        run.check("pointwise-convexity", Comparison::AtLeast, worst, 0.0, 1e-12);
    });
}

fn map_tag(m: &MapSpec) -> String {
    match m {
        MapSpec::Identity => "identity-map".into(),
        MapSpec::Cavity { lambda } => format!("cavity-{lambda}"),
        MapSpec::Power { p } => format!("power-{p}"),
        MapSpec::Hold { rho, .. } => format!("hold-{rho}"),
        MapSpec::Circle { tau, base } => format!("circle-{tau}-{}", map_tag(base)),
        MapSpec::Bump { tau, .. } => format!("bump-{tau}"),
    }
}

fn clone_err(e: &Error) -> Error {
    Error::invalid(e.to_string())
}

fn clone_result(r: &Result<f64>) -> Result<f64> {
    r.as_ref().map(|v| *v).map_err(clone_err)
}

fn circle_suite(run: &mut Run, map: Option<&MapSpec>, tau: Option<f64>) {
    let cases: Vec<(String, Result<DeformationMap>, f64)> = match map {
        Some(m) => vec![(map_tag(m), m.build(), tau.unwrap_or(0.3))],
        None => vec![
            ("identity".into(), Ok(identity_map()), tau.unwrap_or(0.3)),
            ("bump-0.1".into(), bump_map(0.1, 8), tau.unwrap_or(0.05)),
        ],
    };
    let spec = run.spec.clone();
    for (tag, w, tau) in cases {
        run.timed(&tag, |run| {
            let pair = w.and_then(|w| Ok((crate::maps::circle_map(&w, tau)?, w)));
            let (wc, w) = match pair {
                Ok(p) => p,
                Err(e) => {
                    run.check(&format!("{tag}-G-pointwise"), Comparison::Abs, Err(e), 0.0, 1e-8);
                    return;
                }
            };
            let x0 = w.singularity().location;
            let margin = 1e-3;
            let near: Vec<Vec3> = ball_samples(400, Vec3::ZERO, 0.0)
                .into_iter()
                .map(|u| x0 + u * (1.5 * tau))
                .filter(|x| x.norm() < 0.999)
                .collect();
            let mut pts = Vec::new();
            let mut inner = 0usize;
            for x in probe_points(&w, 100, margin).into_iter().chain(near) {
                if pts.len() == 200 {
                    break;
                }
                let v = match w.value(x) {
                    Ok(v) => v.norm(),
                    Err(_) => continue,
                };
                if (x - x0).norm() < margin || (v - tau).abs() < margin {
                    continue;
                }
                if w.interfaces().iter().any(|r| (x.norm() - r).abs() < margin) {
                    continue;
                }
                inner += usize::from(v < tau);
                pts.push(x);
            }
            run.measure(&format!("{tag}-inner-points"), inner as f64);
            run.check(&format!("{tag}-inner-points"), Comparison::AtLeast, Ok(inner as f64), 20.0, 0.0);
            run.check(&format!("{tag}-sample-count"), Comparison::Abs, Ok(pts.len() as f64), 200.0, 0.0);
            let dev = max_relative_g_gap(&wc, &w, &pts);
            run.check(&format!("{tag}-G-pointwise"), Comparison::Abs, dev, 0.0, 1e-8);
            let k = k_functional(&w, &run.cfg, &spec);
            let k = run.integral(&format!("{tag}-K"), k);
            let kc = k_functional(&wc, &run.cfg, &spec);
            let kc = run.integral(&format!("{tag}-K-circle"), kc);
            match k {
                Ok(k) => {
                    run.measure(&format!("{tag}-K"), k);
                    run.check(&format!("{tag}-K-circle"), Comparison::Rel, kc, k, 1e-4);
                }
                Err(e) => {
                    run.check(&format!("{tag}-K-circle"), Comparison::Rel, Err(e), 0.0, 1e-4);
                }
            }
        });
    }
}

fn stationarity_bumps() -> Result<[TestField; 2]> {
    let slope = Mat3::new([[0.2, -0.1, 0.05], [0.0, 0.15, -0.2], [0.1, 0.05, -0.1]]);
    Ok([
        TestField::new(Vec3::new(0.2, 0.1, 0.0), 0.5, Vec3::new(0.3, -0.2, 0.5), slope)?,
        TestField::new(Vec3::new(-0.3, 0.2, 0.25), 0.4, Vec3::new(-0.1, 0.4, 0.2), Mat3::ZERO)?,
    ])
}

/// Relative discrepancy, reported as zero when both sides sit below `floor`.
fn discrepancy(r: &VariationReport, floor: f64) -> f64 {
    if r.analytic.abs() < floor && r.fd_extrapolated.abs() < floor {
        0.0
    } else {
        r.rel_discrepancy
    }
}

fn stationarity_suite(run: &mut Run, map: Option<&MapSpec>) {
    let spec = run.spec.clone();
    let prepared = build(map, || cavity(0.4)).and_then(|w| {
        if !w.singularity().is_discontinuity() {
            return Err(Error::invalid(format!("{} has no discontinuity; the first variation needs |w| >= tau0 > 0", w.label())));
        }
        Ok((w, stationarity_bumps()?))
    });
    let (w, bumps) = match prepared {
        Ok(p) => p,
        Err(e) => {
            run.check("setup", Comparison::Abs, Err(e), 0.0, 0.0);
            return;
        }
    };
    let k = run.timed("K", |run| {
        let k = k_functional(&w, &run.cfg, &spec);
        run.integral("K", k)
    });
    let k_abs = match k {
        Ok(k) => {
            run.measure("K", k);
            k.abs()
        }
        Err(e) => {
            run.check("K", Comparison::Abs, Err(e), 0.0, 0.0);
            return;
        }
    };
    for (n, phi) in bumps.iter().enumerate() {
        let tag = format!("bump-{}", n + 1);
        run.timed(&tag, |run| {
            let report = delta_k_report(&w, phi, &run.cfg, &spec);
            match report {
                Ok(r) => {
                    run.quadrature_errors.insert(format!("{tag}-delta-K"), r.analytic_error);
                    run.measure(&format!("{tag}-delta-K-fd"), r.fd_extrapolated);
                    run.measure(&format!("{tag}-fd-relative-gap"), r.rel_discrepancy);
                    run.check(&format!("{tag}-delta-K"), Comparison::AtMost, Ok(r.analytic.abs()), 5e-4 * k_abs, 0.0);
                    run.check(&format!("{tag}-fd-agreement"), Comparison::AtMost, Ok(discrepancy(&r, 1e-6)), 1e-3, 0.0);
                }
                Err(e) => {
                    let msg = e.to_string();
                    run.check(&format!("{tag}-delta-K"), Comparison::AtMost, Err(e), 5e-4 * k_abs, 0.0);
                    run.check(&format!("{tag}-fd-agreement"), Comparison::AtMost, Err(Error::invalid(msg)), 1e-3, 0.0);
                }
            }
            let ibp = ibp_residual(&w, phi, &run.cfg, &spec, BracketOrdering::UnitFirst).map(|r| r.residual.abs());
            run.check(&format!("{tag}-ibp-residual"), Comparison::AtMost, ibp, 1e-3, 0.0);
        });
    }

    // The two bracket orderings differ on a map whose values are not radial.
    run.timed("ordering", |run| {
        let res = held_shear(0.5).and_then(|h| {
            let phi = &bumps[0];
            let first = ibp_residual(&h, phi, &run.cfg, &spec, BracketOrdering::UnitFirst)?.residual.abs();
            let second = ibp_residual(&h, phi, &run.cfg, &spec, BracketOrdering::UnitSecond)?.residual.abs();
            Ok((first, second))
        });
        match res {
            Ok((first, second)) => {
                run.measure("held-shear-ibp-unit-second", second);
                run.check("held-shear-ibp-residual", Comparison::AtMost, Ok(first), 1e-3, 0.0);
                run.check("held-shear-swapped-ordering-fails", Comparison::AtLeast, Ok(second), 1e-2, 0.0);
            }
            Err(e) => {
                run.check("held-shear-ibp-residual", Comparison::AtMost, Err(e), 1e-3, 0.0);
            }
        }
    });

    // Boundary term of the excised ball. It vanishes for maps that are constant
    // along rays from the singular point, so probe a projected bump map.
    run.timed("boundary-term", |run| {
        let radii = [0.02, 0.01, 0.005, 0.0025];
        let res = bump_map(0.1, 8).and_then(|g| {
            let w = crate::maps::circle_map(&g, 0.05)?;
            let x0 = w.singularity().location;
            let phi = TestField::new(x0 + Vec3::E2 * 0.01, 0.07, Vec3::new(0.3, 0.5, -0.2), Mat3::diag(0.2, -0.1, 0.3))?;
            ibp_boundary_decay(&w, &phi, &run.cfg, &radii, &spec)
        });
        match res {
            Ok((values, fit)) => {
                for (r, v) in radii.iter().zip(&values) {
                    run.measure(&format!("boundary-term-{r}"), *v);
                }
                run.check("boundary-term-nonzero", Comparison::Above, Ok(values[0]), 1e-8, 0.0);
                run.check("boundary-term-decay-rate", Comparison::Above, Ok(fit.slope), 0.0, 0.0);
            }
            Err(e) => {
                run.check("boundary-term-decay-rate", Comparison::Above, Err(e), 0.0, 0.0);
            }
        }
    });
}

fn path_scan(run: &mut Run, map: Option<&MapSpec>, tau: f64, ladder: Option<&[f64]>) {
    let spec = run.spec.clone();
    let target = run.cfg.identity_value();
    let q = run.cfg.q();
    let ts: Vec<f64> = ladder.map(<[f64]>::to_vec).unwrap_or_else(|| T_LADDER.to_vec());
    let w = match build(map, || held_shear(0.5)) {
        Ok(w) => w,
        Err(e) => {
            run.check("setup", Comparison::Abs, Err(e), 0.0, 0.0);
            return;
        }
    };
    let mut ks = Vec::new();
    for &t in &ts {
        let tag = format!("K-t={t}");
        let k = run.timed(&tag, |run| {
            let k = path_gamma(&w, tau, t).and_then(|p| k_functional(&p.map, &run.cfg, &spec));
            run.integral(&tag, k)
        });
        if let Ok(k) = k {
            ks.push(k);
        }
        run.check(&tag, Comparison::Rel, k, target, 5e-4);
    }
    if ks.len() == ts.len() {
        let mean = ks.iter().sum::<f64>() / ks.len() as f64;
        let spread = ks.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - ks.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        run.measure("K-mean", mean);
        run.check("K-relative-spread", Comparison::AtMost, Ok(spread / mean.abs()), 1e-3, 0.0);
    }

    run.timed("endpoints", |run| {
        let i = i_functional(&w, &run.cfg, &spec);
        let i = run.integral("I-w", i);
        let k = k_functional(&w, &run.cfg, &spec);
        let k = run.integral("K-w", k);
        run.check("K-w-equals-identity", Comparison::Rel, clone_result(&k), target, 1e-3);
        run.check("I-w-at-least-identity", Comparison::AtLeast, clone_result(&i), target, 1e-3 * target);
        let gap = i.and_then(|i| k.map(|k| i - target - q * (k - target)));
        run.check("lower-bound-gap", Comparison::AtLeast, gap, 0.0, 1e-3 * target);
    });

    run.timed("velocity", |run| {
        let worst = path_velocity_error(&w, tau, &[0.3, 0.7], 1e-4, 0.02);
        run.check("velocity-fd", Comparison::AtMost, worst, 1e-4, 0.0);
    });
}

/// Largest relative gap between the analytic path velocity and centred differences in `t`.
fn path_velocity_error(w: &DeformationMap, tau: f64, ts: &[f64], h: f64, margin: f64) -> Result<f64> {
    let mut worst = 0.0_f64;
    let mut used = 0usize;
    for &t in ts {
        let path = path_gamma(w, tau, t)?;
        let plus = path_gamma(w, tau, t + h)?;
        let minus = path_gamma(w, tau, t - h)?;
        for x in ball_samples(400, Vec3::ZERO, 0.05) {
            let r = x.norm();
            let alpha = x * r.powf(-t);
            let level = r.powf(t) * w.value(alpha)?.norm();
            let interface_gap = path.map.interfaces().iter().map(|s| (r - s).abs()).fold(f64::INFINITY, f64::min);
            let circle_gap = (level - tau).abs();
            if interface_gap < margin || circle_gap < margin {
                continue;
            }
            let v = path.field.velocity(x)?;
            let fd = (plus.map.value(x)? - minus.map.value(x)?) / (2.0 * h);
            worst = worst.max((v - fd).norm() / v.norm().max(1e-3));
            used += 1;
        }
    }
    if used < 100 {
        return Err(Error::invalid(format!("only {used} velocity probes cleared the interfaces")));
    }
    Ok(worst)
}

/// Test fields around the zero `x0`: pushing it inward, a tilted off-centre
/// field, and the outward mirror of the first.
fn inner_fields(x0: Vec3) -> Result<[TestField; 3]> {
    let d = x0.norm();
    let r = (0.8 * d).min(0.8 * (1.0 - d));
    let dir = x0 / d;
    let (e2, _) = dir.orthonormal_complement();
    let slope = Mat3::new([[0.3, -0.2, 0.1], [0.1, 0.2, -0.3], [-0.1, 0.0, 0.25]]);
    Ok([
        TestField::new(x0, r, -dir, Mat3::ZERO)?,
        TestField::new(x0 + e2 * (0.2 * r), 0.9 * r, dir * 0.5 + e2 * 0.3 + Vec3::E3 * 0.2, slope)?,
        TestField::new(x0, r, dir, Mat3::ZERO)?,
    ])
}

fn innervar_suite(run: &mut Run, map: Option<&MapSpec>) {
    let spec = run.spec.clone();
    let prepared = build(map, || bump_map(0.1, 8)).and_then(|w| {
        let s = *w.singularity();
        if !s.is_zero() || s.location.norm() == 0.0 {
            return Err(Error::invalid(format!("{} needs an isolated zero away from the origin", w.label())));
        }
        Ok((inner_fields(s.location)?, w))
    });
    let (fields, w) = match prepared {
        Ok(p) => p,
        Err(e) => {
            run.check("setup", Comparison::Abs, Err(e), 0.0, 0.0);
            return;
        }
    };
    for (n, phi) in fields[..2].iter().enumerate() {
        let tag = format!("field-{}", n + 1);
        run.timed(&tag, |run| {
            let flux = innervar_derivative_flux(&w, phi, &run.cfg, &spec).map(|f| f.value);
            let volume = innervar_derivative_volume(&w, phi, &run.cfg, &spec);
            let volume_value = run.integral(&format!("{tag}-volume"), clone_integral(&volume));
            let fd = volume.and_then(|v| {
                let quotients = inner_difference_quotients(&w, phi, &run.cfg, &spec, &FD_STEPS)?;
                Ok(VariationReport::new(&v, &FD_STEPS, &quotients)?.fd_extrapolated)
            });
            let all = flux.and_then(|f| Ok((f, volume_value?, fd?)));
            match all {
                Ok((f, v, d)) => {
                    run.measure(&format!("{tag}-flux"), f);
                    run.measure(&format!("{tag}-volume"), v);
                    run.measure(&format!("{tag}-fd"), d);
                    run.check(&format!("{tag}-flux-vs-volume"), Comparison::AtMost, Ok(relative((f - v).abs(), f, v)), 1e-3, 0.0);
                    run.check(&format!("{tag}-flux-vs-fd"), Comparison::AtMost, Ok(relative((f - d).abs(), f, d)), 1e-3, 0.0);
                    run.check(&format!("{tag}-volume-vs-fd"), Comparison::AtMost, Ok(relative((v - d).abs(), v, d)), 1e-3, 0.0);
                }
                Err(e) => {
                    run.check(&format!("{tag}-flux-vs-volume"), Comparison::AtMost, Err(e), 1e-3, 0.0);
                }
            }
        });
    }

    // Moving the zero outward lowers K, moving it inward raises it.
    let eps = 1e-3;
    for (tag, phi, cmp) in [("outward", &fields[0], Comparison::Below), ("inward", &fields[2], Comparison::Above)] {
        run.timed(tag, |run| {
            let flux = innervar_derivative_flux(&w, phi, &run.cfg, &spec).map(|f| f.value);
            run.check(&format!("{tag}-derivative-sign"), cmp, flux, 0.0, 0.0);
            let moved = inner_variation(&w, phi, eps);
            // K(w^eps) - K(w) as one integral after substituting y = x + eps phi(x).
            let gap = inner_difference_quotients(&w, phi, &run.cfg, &spec, &[eps])
                .map(|q| crate::quadrature::Integral { value: q[0].value * eps, error: q[0].error * eps, ..q[0].clone() });
            let gap = run.integral(&format!("{tag}-K-change"), gap);
            run.check(&format!("{tag}-K-change-sign"), cmp, clone_result(&gap), 0.0, 0.0);
            // A diffeomorphism with one zero x0 has K = 4 pi (1 - |x0|^a) / a.
            let a = run.cfg.decay_exponent();
            let closed = moved.as_ref().map(|m| {
                4.0 * PI / a * (w.singularity().location.norm().powf(a) - m.singularity().location.norm().powf(a))
            });
            match closed {
                Ok(c) => {
                    run.check(&format!("{tag}-K-change-closed-form"), Comparison::Rel, gap, c, 1e-3);
                }
                Err(e) => {
                    run.check(&format!("{tag}-K-change-closed-form"), Comparison::Rel, Err(clone_err(e)), 0.0, 1e-3);
                }
            }
            let velocity = moved.map(|m| ((m.singularity().location - w.singularity().location) / eps + phi.value(w.singularity().location)).norm());
            run.check(&format!("{tag}-zero-velocity"), Comparison::AtMost, velocity, 1e-2, 0.0);
        });
    }

    run.timed("sphere-factor", |run| {
        for (tag, f) in [
            ("sphere-factor-diagonal", Mat3::diag(1.0, 1.0, 2.0)),
            ("sphere-factor-general", Mat3::new([[1.2, 0.3, -0.1], [0.2, 0.8, 0.4], [-0.3, 0.1, 1.5]])),
        ] {
            let v = sphere_factor(&f, &spec);
            run.check(tag, Comparison::Rel, v, 4.0 * PI / f.det().abs(), 1e-8);
        }
    });
}

fn clone_integral(r: &Result<crate::quadrature::Integral>) -> Result<crate::quadrature::Integral> {
    r.as_ref().cloned().map_err(clone_err)
}

fn tau_scan(run: &mut Run, ladder: Option<&[f64]>) {
    let spec = run.spec.clone();
    let taus: Vec<f64> = ladder.map(<[f64]>::to_vec).unwrap_or_else(|| TAU_LADDER.to_vec());
    let a = run.cfg.decay_exponent();
    let id = identity_map();
    let mut gaps = Vec::new();
    for &tau in &taus {
        let tag = format!("tau={tau}");
        run.timed(&tag, |run| {
            let g = bump_map(tau, 8);
            let sup = g.as_ref().map_err(clone_err).and_then(|g| {
                ball_samples(1000, Vec3::ZERO, 0.0)
                    .into_iter()
                    .try_fold(0.0_f64, |m, x| Ok(m.max((g.value(x)? - x).norm())))
            });
            run.check(&format!("sup-distance-{tag}"), Comparison::AtMost, sup, tau, 1e-12);
            let gap = g.and_then(|g| k_difference(&g, &id, &run.cfg, &spec));
            let gap = run.integral(&format!("K-gap-{tag}"), gap);
            run.check(&format!("K-gap-sign-{tag}"), Comparison::Below, clone_result(&gap), 0.0, 0.0);
            // Divergence theorem: the gap is minus the potential of zeta at the zero.
            let closed = -4.0 * PI * tau.powf(a) / a;
            run.check(&format!("K-gap-closed-form-{tag}"), Comparison::Rel, clone_result(&gap), closed, 1e-4);
            if let Ok(v) = gap {
                run.measure(&format!("K-gap-{tag}"), v);
                gaps.push((tau, v.abs()));
            }
        });
    }
    if gaps.len() == taus.len() {
        let (xs, ys): (Vec<f64>, Vec<f64>) = gaps.into_iter().unzip();
        let fit = fit_rate(&xs, &ys);
        if let Ok(f) = &fit {
            run.measure("rate-rms-residual", f.rms_residual);
        }
        run.check("K-gap-rate", Comparison::Abs, fit.map(|f| f.slope), a, 0.3);
    }
}

/// `(e1 - 3 y1 yb) . e1 / |y|^3`.
fn dipole(y: Vec3) -> Result<f64> {
    let r = y.norm();
    if r == 0.0 {
        return Err(Error::Singular { point: y, reason: "dipole kernel at the origin".into() });
    }
    let u = y[0] / r;
    Ok((1.0 - 3.0 * u * u) / (r * r * r))
}

fn divergence_probe(run: &mut Run) {
    let spec = run.spec.clone();
    // int_{S^2} |1 - 3 u^2| = 16 pi / (3 sqrt 3), times ln 2 from the radial factor.
    let shell = 16.0 * PI / (3.0 * 3.0_f64.sqrt()) * 2.0_f64.ln();
    run.timed("annuli", |run| {
        let mut abs_values = Vec::new();
        for a in [0.2, 0.1, 0.05, 0.025] {
            let abs = integrate_annulus(|y| dipole(y).map(f64::abs), Vec3::ZERO, a, 2.0 * a, &spec);
            let signed = integrate_annulus(dipole, Vec3::ZERO, a, 2.0 * a, &spec);
            run.check(&format!("signed-annulus-a={a}"), Comparison::Abs, signed, 0.0, 1e-8);
            run.check(&format!("abs-annulus-positive-a={a}"), Comparison::Above, clone_result(&abs), 0.0, 0.0);
            if let Ok(v) = abs {
                run.measure(&format!("abs-annulus-a={a}"), v);
                abs_values.push(v);
            }
        }
        if abs_values.len() == 4 {
            let mean = abs_values.iter().sum::<f64>() / 4.0;
            let spread = abs_values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean;
            run.check("abs-annulus-scale-invariance", Comparison::AtMost, Ok(spread), 1e-6, 0.0);
            run.check("abs-annulus-closed-form", Comparison::Rel, Ok(mean), shell, 1e-3);
        }
    });
    run.timed("ball", |run| {
        let origin = [SingularPoint::from(Vec3::ZERO)];
        let abs = integrate_ball(|y| dipole(y).map(f64::abs), &spec, &origin);
        let flagged = match abs {
            Err(Error::NonConvergence { .. }) => Ok(true),
            Err(e) => Err(e),
            Ok(_) => Ok(false),
        };
        run.flag("abs-ball-flags-nonconvergence", flagged);
        let signed = integrate_ball(dipole, &spec, &origin).map(|i| i.value);
        run.check("signed-ball-converges", Comparison::Abs, signed, 0.0, 1e-6);
    });
    run.timed("outer-variation-near-zero", |run| {
        let refused = TestField::new(Vec3::new(0.1, 0.0, 0.0), 0.3, Vec3::E1, Mat3::ZERO).and_then(|phi| {
            match delta_k_formula(&identity_map(), &phi, &run.cfg, &spec) {
                Err(Error::InvalidParameter(_)) => Ok(true),
                Err(e) => Err(e),
                Ok(_) => Ok(false),
            }
        });
        run.flag("first-variation-refused-at-zero", refused);
    });
    run.timed("divergence-free", |run| {
        let maps: [(&str, Result<DeformationMap>); 4] = [
            ("identity", Ok(identity_map())),
            ("cavity-0.4", cavity(0.4)),
            ("held-shear", held_shear(0.5)),
            ("bump-0.1", bump_map(0.1, 8)),
        ];
        for (tag, w) in maps {
            let worst = w.and_then(|w| {
                let x0 = w.singularity().location;
                probe_points(&w, 50, 0.05).into_iter().try_fold(0.0_f64, |m, x| {
                    let d = (x - x0).norm();
                    let scale = g_field(&w, x)?.norm() / d;
                    Ok(m.max(div_g(&w, x, 1e-4)?.abs() / scale))
                })
            });
            run.check(&format!("divergence-free-{tag}"), Comparison::AtMost, worst, 1e-6, 0.0);
        }
    });
}

fn mollifier_suite(run: &mut Run, map: Option<&MapSpec>) {
    let spec = run.spec.clone();
    let prepared = build(map, || cavity(0.4)).and_then(|w| match w.singularity().kind {
        SingularityKind::Discontinuity { tau0 } if w.singularity().location == Vec3::ZERO => Ok((w, tau0)),
        _ => Err(Error::invalid(format!("{} needs a discontinuity at the origin", w.label()))),
    });
    let (w, tau0) = match prepared {
        Ok(p) => p,
        Err(e) => {
            run.check("setup", Comparison::Abs, Err(e), 0.0, 0.0);
            return;
        }
    };
    let levels = [3u32, 4, 5];
    let mut norms = Vec::new();
    for j in levels {
        let tag = format!("j={j}");
        run.timed(&tag, |run| {
            let blend = match mollified_blend(&w, j, 1 << (j + 4)) {
                Ok((b, _)) => b,
                Err(e) => {
                    run.check(&format!("shell-mass-{tag}"), Comparison::AtMost, Err(e), 0.0, 0.0);
                    return;
                }
            };
            match shell_mass(&w, &blend, j, &spec) {
                Ok(m) => {
                    run.measure(&format!("shell-mass-ratio-{tag}"), m.blend / m.reference);
                    run.check(&format!("shell-mass-{tag}"), Comparison::AtMost, Ok(m.blend), m.reference, 0.0);
                }
                Err(e) => {
                    run.check(&format!("shell-mass-{tag}"), Comparison::AtMost, Err(e), 0.0, 0.0);
                }
            }
            let floor = ball_samples(2000, Vec3::ZERO, 1e-6)
                .into_iter()
                .try_fold(f64::INFINITY, |m, x| Ok::<_, Error>(m.min(blend.value(x)?.norm())));
            run.check(&format!("modulus-floor-{tag}"), Comparison::AtLeast, floor, 0.5 * tau0, 0.0);
            let inner = 0.5_f64.powi(j as i32 + 2);
            let outer = 0.5_f64.powi(j as i32 + 1);
            let branches = (|| -> Result<bool> {
                let x_in = Vec3::new(0.3, -0.4, 0.5) * (0.9 * inner / 0.5_f64.sqrt());
                let kept = (blend.value(x_in)? - w.value(x_in)?).norm() == 0.0;
                let x_out = Vec3::new(0.6, 0.2, -0.3) * (1.1 * outer / 0.49_f64.sqrt());
                let smoothed = (blend.value(x_out)? - w.value(x_out)?).norm() <= 2.0 / (1u64 << (j + 4)) as f64;
                Ok(kept && smoothed)
            })();
            run.flag(&format!("blend-branches-{tag}"), branches);
            let norm = blend_gradient_error(&w, &blend, j, &run.cfg, &spec);
            if let Ok(v) = norm {
                run.measure(&format!("gradient-error-{tag}"), v);
                norms.push(v);
            } else {
                run.check(&format!("gradient-error-{tag}"), Comparison::AtMost, norm, 0.0, 0.0);
            }
        });
    }
    if norms.len() == levels.len() {
        let hs: Vec<f64> = levels.iter().map(|&j| 0.5_f64.powi(j as i32)).collect();
        let target = 3.0 / run.cfg.two_q() - 1.0;
        let fit = fit_rate(&hs, &norms).map(|f| f.slope);
        run.check("gradient-error-rate", Comparison::Abs, fit, target, 0.3);
    }
}

type Profile = Box<dyn Fn(f64) -> f64>;

fn zero_motion_suite(run: &mut Run, ladder: Option<&[f64]>) {
    let spec = run.spec.clone();
    let taus: Vec<f64> = ladder.map(<[f64]>::to_vec).unwrap_or_else(|| TAU_LADDER.to_vec());
    let two_q = run.cfg.two_q();
    let wobble = |t: f64| 2.0 + (1.0 / t).sin();
    let cases: [(&str, Profile, Profile); 3] = [
        ("unit", Box::new(|_| 1.0), Box::new(move |t: f64| 4.0 * PI * t.powf(2.0 - two_q))),
        ("balanced", Box::new(move |t: f64| t.powf(two_q - 2.0)), Box::new(|_| 4.0 * PI)),
        ("oscillating", Box::new(move |t: f64| t.powf(two_q - 2.0) * wobble(t)), Box::new(move |t| 4.0 * PI * wobble(t))),
    ];
    for (tag, f, expected) in cases {
        run.timed(tag, |run| match zero_motion_scan(&f, &taus, 8, &run.cfg, &spec) {
            Ok(rows) => {
                for row in rows {
                    run.measure(&format!("{tag}-constant-tau={}", row.tau), row.constant);
                    run.check(&format!("{tag}-derivative-tau={}", row.tau), Comparison::Rel, Ok(row.derivative), expected(row.tau), 1e-6);
                }
            }
            Err(e) => {
                run.check(&format!("{tag}-derivative"), Comparison::Rel, Err(e), 0.0, 1e-6);
            }
        });
    }
    // Cross-check the flux form by the volume form at the coarsest tau.
    run.timed("volume-cross-check", |run| {
        let tau = taus.iter().copied().fold(0.0, f64::max);
        let res = bump_map(tau, 8).and_then(|w| {
            let x0 = w.singularity().location;
            let phi = TestField::new(x0, 0.8 * tau, Vec3::E1, Mat3::ZERO)?;
            let flux = innervar_derivative_flux(&w, &phi, &run.cfg, &spec)?.value;
            let volume = innervar_derivative_volume(&w, &phi, &run.cfg, &spec)?.value;
            Ok(relative((flux - volume).abs(), flux, volume))
        });
        run.check("flux-vs-volume", Comparison::AtMost, res, 1e-3, 0.0);
    });
}
