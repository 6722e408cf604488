//! The functionals `I(w) = int |G(w)|^q` and `K(w) = int zeta . G(w)` with
//! `G(w) = adj grad w . w/|w|^3` and `zeta(x) = x/|x|^(2q-1)`, their outer and
//! inner variations, and the integration-by-parts identity behind stationarity.

use crate::error::{Error, Result};
use crate::maps::{solve_displacement, DeformationMap, Jet, SingularityKind, TestField};
use crate::quadrature::{
    extrapolate, fit_rate, integrate_annulus, integrate_ball, integrate_sphere, integrate_unit_sphere, ExtrapolationPolicy, Integral,
    QuadratureSpec, RateFit, SingularPoint,
};
use crate::tensor3::{bracket, Mat3, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Exponent `q` with `2 < 2q < 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ExponentConfig {
    q: f64,
}

impl Default for ExponentConfig {
    fn default() -> Self {
        ExponentConfig { q: 1.25 }
    }
}

impl TryFrom<f64> for ExponentConfig {
    type Error = Error;
    fn try_from(q: f64) -> Result<Self> {
        ExponentConfig::new(q)
    }
}

impl From<ExponentConfig> for f64 {
    fn from(c: ExponentConfig) -> f64 {
        c.q
    }
}

impl ExponentConfig {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 1.0 && q < 1.5) {
            return Err(Error::invalid(format!("q must satisfy 2 < 2q < 3, got q = {q}")));
        }
        Ok(ExponentConfig { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn two_q(&self) -> f64 {
        2.0 * self.q
    }

    /// `3 - 2q`, the decay exponent of `int_{B(0, eps)} |x|^-2q`.
    pub fn decay_exponent(&self) -> f64 {
        3.0 - 2.0 * self.q
    }

    /// `I(i) = K(i) = 4 pi / (3 - 2q)`.
    pub fn identity_value(&self) -> f64 {
        4.0 * PI / self.decay_exponent()
    }

    pub fn zeta(&self, x: Vec3) -> Vec3 {
        x * x.norm().powf(1.0 - 2.0 * self.q)
    }

    pub fn zeta_gradient(&self, x: Vec3) -> Mat3 {
        let r = x.norm();
        let xb = x / r;
        (Mat3::IDENTITY - xb.outer(xb) * (2.0 * self.q - 1.0)) * r.powf(1.0 - 2.0 * self.q)
    }
}

const ZERO_W: f64 = 1e-12;

/// `G` from a jet of `w`.
pub fn g_from_jet(j: &Jet, x: Vec3) -> Result<Vec3> {
    let n = j.value.norm();
    if n < ZERO_W {
        return Err(Error::Singular { point: x, reason: format!("|w| = {n:e} too small for G") });
    }
    Ok(j.gradient.adjugate() * j.value / (n * n * n))
}

/// `G(w)(x) = adj grad w(x) . w(x)/|w(x)|^3`.
pub fn g_field(w: &DeformationMap, x: Vec3) -> Result<Vec3> {
    let s = w.singularity();
    if s.kind != SingularityKind::None && (x - s.location).norm() < 1e-14 {
        return Err(Error::Singular { point: x, reason: "G evaluated at the singular point".into() });
    }
    g_from_jet(&w.jet(x)?, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Integrand {
    /// `|G|^q`: behaves like `|x - x0|^-2q` at any singular point.
    Power,
    /// Linear in `G`.
    Linear,
}

fn local_exponent(kind: SingularityKind, integrand: Integrand, cfg: &ExponentConfig) -> f64 {
    match (integrand, kind) {
        (Integrand::Power, _) => cfg.decay_exponent(),
        // odd leading term at a nondegenerate zero
        (Integrand::Linear, SingularityKind::Zero) => 2.0,
        _ => 1.0,
    }
}

/// Singular points and panel interfaces for integrals involving the maps.
fn plan(
    maps: &[&DeformationMap],
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
    integrand: Integrand,
    origin: bool,
) -> (QuadratureSpec, Vec<SingularPoint>) {
    let mut points = Vec::new();
    if origin {
        points.push(SingularPoint::with_exponent(Vec3::ZERO, cfg.decay_exponent()));
    }
    let mut spec = spec.clone();
    for w in maps {
        let s = w.singularity();
        if s.kind != SingularityKind::None && s.location.norm() > 0.0 {
            points.push(SingularPoint::with_exponent(s.location, local_exponent(s.kind, integrand, cfg)));
        }
        spec = spec.with_interfaces(w.interfaces().iter().copied());
    }
    (spec, points)
}

/// `I(w) = int_B |G(w)|^q dx`.
pub fn i_functional(w: &DeformationMap, cfg: &ExponentConfig, spec: &QuadratureSpec) -> Result<Integral> {
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Power, true);
    let q = cfg.q();
    integrate_ball(|x| Ok(g_field(w, x)?.norm().powf(q)), &spec, &points)
}

/// `K(w) = int_B zeta . G(w) dx`.
pub fn k_functional(w: &DeformationMap, cfg: &ExponentConfig, spec: &QuadratureSpec) -> Result<Integral> {
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Linear, true);
    integrate_ball(|x| Ok(cfg.zeta(x).dot(g_field(w, x)?)), &spec, &points)
}

/// `K(a) - K(b)` as a single integral of `zeta . (G(a) - G(b))`.
pub fn k_difference(
    a: &DeformationMap,
    b: &DeformationMap,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    let (spec, points) = plan(&[a, b], cfg, spec, Integrand::Linear, true);
    integrate_ball(|x| Ok(cfg.zeta(x).dot(g_field(a, x)? - g_field(b, x)?)), &spec, &points)
}

fn touches_support(phi: &TestField, p: Vec3) -> bool {
    (p - phi.center).norm() < phi.radius
}

/// Outer variations are only integrable away from zeros of `w`.
fn require_outer_admissible(w: &DeformationMap, phi: &TestField) -> Result<()> {
    let s = w.singularity();
    if s.is_zero() && touches_support(phi, s.location) {
        return Err(Error::invalid(format!(
            "{}: first variation is not integrable near the zero {:?} inside supp phi",
            w.label(),
            s.location
        )));
    }
    Ok(())
}

/// `delta K(w)[phi] = int zeta . { <grad w, grad phi> w/|w|^3 + adj grad w/|w|^3 (1 - 3 wb (x) wb) phi }`.
pub fn delta_k_formula(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    require_outer_admissible(w, phi)?;
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Linear, true);
    integrate_ball(
        |x| {
            let p = phi.jet(x);
            if p.value == Vec3::ZERO && p.gradient == Mat3::ZERO {
                return Ok(0.0);
            }
            let j = w.jet(x)?;
            let n = j.value.norm();
            if n < ZERO_W {
                return Err(Error::Singular { point: x, reason: "w vanishes".into() });
            }
            let wb = j.value / n;
            let n3 = n * n * n;
            let first = bracket(&j.gradient, &p.gradient) * j.value / n3;
            let second = j.gradient.adjugate() * ((Mat3::IDENTITY - wb.outer(wb) * 3.0) * p.value) / n3;
            Ok(cfg.zeta(x).dot(first + second))
        },
        &spec,
        &points,
    )
}

/// Finite-difference step ladder for variations.
pub const FD_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// Analytic value of a variation compared against extrapolated difference quotients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub analytic: f64,
    pub analytic_error: f64,
    pub fd_steps: Vec<f64>,
    pub fd_values: Vec<f64>,
    pub fd_extrapolated: f64,
    pub abs_discrepancy: f64,
    pub rel_discrepancy: f64,
    pub quadrature_errors: Vec<f64>,
}

impl VariationReport {
    /// Extrapolates difference quotients assuming an `O(eps)` expansion.
    pub fn new(analytic: &Integral, steps: &[f64], quotients: &[Integral]) -> Result<Self> {
        let values: Vec<f64> = quotients.iter().map(|q| q.value).collect();
        let policy = ExtrapolationPolicy { exponent_hint: 1.0, terms: 2, exponent_step: 1.0, log_correction: false };
        let fd = extrapolate(steps, &values, &policy)?.value;
        let abs = (analytic.value - fd).abs();
        Ok(VariationReport {
            analytic: analytic.value,
            analytic_error: analytic.error,
            fd_steps: steps.to_vec(),
            fd_values: values,
            fd_extrapolated: fd,
            abs_discrepancy: abs,
            rel_discrepancy: relative(abs, analytic.value, fd),
            quadrature_errors: quotients.iter().map(|q| q.error).collect(),
        })
    }

    /// Relative agreement, or both values below `abs_floor`.
    pub fn agrees(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.rel_discrepancy <= rel_tol || (self.analytic.abs() < abs_floor && self.fd_extrapolated.abs() < abs_floor)
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative(abs: f64, a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        abs / scale
    }
}

/// Difference quotients `(K(w + eps phi) - K(w)) / eps`, each as one integral.
pub fn outer_difference_quotients(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
    steps: &[f64],
) -> Result<Vec<Integral>> {
    require_outer_admissible(w, phi)?;
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Linear, true);
    steps
        .iter()
        .map(|&eps| {
            integrate_ball(
                |x| {
                    let p = phi.jet(x);
                    if p.value == Vec3::ZERO && p.gradient == Mat3::ZERO {
                        return Ok(0.0);
                    }
                    let j = w.jet(x)?;
                    let moved = Jet { value: j.value + p.value * eps, gradient: j.gradient + p.gradient * eps };
                    Ok(cfg.zeta(x).dot(g_from_jet(&moved, x)? - g_from_jet(&j, x)?) / eps)
                },
                &spec,
                &points,
            )
        })
        .collect()
}

/// `delta_k_formula` checked against [`outer_difference_quotients`] on [`FD_STEPS`].
pub fn delta_k_report(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<VariationReport> {
    let analytic = delta_k_formula(w, phi, cfg, spec)?;
    let quotients = outer_difference_quotients(w, phi, cfg, spec, &FD_STEPS)?;
    VariationReport::new(&analytic, &FD_STEPS, &quotients)
}

/// Order of the tensor product inside the bracket term of the
/// integration-by-parts identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketOrdering {
    /// `<wb (x) grad w^T wb, grad w>`.
    UnitFirst,
    /// `<grad w^T wb (x) wb, grad w>`.
    UnitSecond,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpReport {
    pub ordering: BracketOrdering,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub lhs_error: f64,
    pub rhs_error: f64,
}

/// `int zeta . <grad w, grad phi> w/|w|^3` minus
/// `int zeta/|w|^3 . { 2 adj grad w phi - 3 <T, grad w> phi }`.
pub fn ibp_residual(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
    ordering: BracketOrdering,
) -> Result<IbpReport> {
    require_outer_admissible(w, phi)?;
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Linear, true);
    let in_support = |x: Vec3| touches_support(phi, x);
    let lhs = integrate_ball(
        |x| {
            if !in_support(x) {
                return Ok(0.0);
            }
            let j = w.jet(x)?;
            let n = j.value.norm();
            Ok(cfg.zeta(x).dot(bracket(&j.gradient, &phi.jet(x).gradient) * j.value) / (n * n * n))
        },
        &spec,
        &points,
    )?;
    let rhs = integrate_ball(
        |x| {
            if !in_support(x) {
                return Ok(0.0);
            }
            let j = w.jet(x)?;
            let p = phi.value(x);
            let n = j.value.norm();
            let wb = j.value / n;
            let v = j.gradient.transpose() * wb;
            let t = match ordering {
                BracketOrdering::UnitFirst => wb.outer(v),
                BracketOrdering::UnitSecond => v.outer(wb),
            };
            let inner = j.gradient.adjugate() * p * 2.0 - bracket(&t, &j.gradient) * p * 3.0;
            Ok(cfg.zeta(x).dot(inner) / (n * n * n))
        },
        &spec,
        &points,
    )?;
    Ok(IbpReport {
        ordering,
        lhs: lhs.value,
        rhs: rhs.value,
        residual: lhs.value - rhs.value,
        lhs_error: lhs.error,
        rhs_error: rhs.error,
    })
}

/// Boundary term `-int_{dB(x0, eps)} zeta . <grad w, phi (x) nu> w/|w|^3`
/// left over when integrating by parts outside `B(x0, eps)`.
pub fn ibp_boundary_term(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    eps: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let x0 = w.singularity().location;
    integrate_sphere(
        |y| {
            let j = w.jet(y)?;
            let nu = (y - x0) / eps;
            let n = j.value.norm();
            let t = bracket(&j.gradient, &phi.value(y).outer(nu)) * j.value / (n * n * n);
            Ok(-cfg.zeta(y).dot(t))
        },
        x0,
        eps,
        spec,
    )
}

/// `|boundary term|` over an `eps` ladder and its log-log decay rate.
pub fn ibp_boundary_decay(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    radii: &[f64],
    spec: &QuadratureSpec,
) -> Result<(Vec<f64>, RateFit)> {
    let values = radii
        .iter()
        .map(|&e| ibp_boundary_term(w, phi, cfg, e, spec).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_rate(radii, &values)?;
    Ok((values, fit))
}

/// Divergence of `G(w)` at `x` by fourth-order centred differences with step `h`.
pub fn div_g(w: &DeformationMap, x: Vec3, h: f64) -> Result<f64> {
    let mut div = 0.0;
    for k in 0..3 {
        let e = Vec3::basis(k) * h;
        let g = |s: f64| g_field(w, x + e * s).map(|v| v[k]);
        div += (-g(2.0)? + 8.0 * g(1.0)? - 8.0 * g(-1.0)? + g(-2.0)?) / (12.0 * h);
    }
    Ok(div)
}

fn require_inner_admissible(w: &DeformationMap, phi: &TestField) -> Result<Vec3> {
    phi.validate()?;
    let s = w.singularity();
    if s.kind == SingularityKind::None {
        return Err(Error::invalid("inner variation needs a map with a singular point"));
    }
    let x0 = s.location;
    if x0.norm() == 0.0 {
        return Err(Error::invalid("inner variation needs the singular point away from the origin"));
    }
    if !(phi.dead_zone() > 0.0) {
        return Err(Error::invalid("phi must vanish on a ball about the origin"));
    }
    Ok(x0)
}

/// `d/d eps K(w^eps)` at 0 as the two volume integrals
/// `int ((2q-1)(x.phi) x/|x|^(2q+1) - phi/|x|^(2q-1)) . G - int zeta . (grad phi) G`.
pub fn innervar_derivative_volume(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    require_inner_admissible(w, phi)?;
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Linear, false);
    let q = cfg.q();
    integrate_ball(
        |x| {
            let p = phi.jet(x);
            if p.value == Vec3::ZERO && p.gradient == Mat3::ZERO {
                return Ok(0.0);
            }
            let g = g_field(w, x)?;
            let r = x.norm();
            let a = x * ((2.0 * q - 1.0) * x.dot(p.value) * r.powf(-2.0 * q - 1.0)) - p.value * r.powf(1.0 - 2.0 * q);
            Ok(a.dot(g) - cfg.zeta(x).dot(p.gradient * g))
        },
        &spec,
        &points,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    pub value: f64,
    pub det: f64,
    pub zeta_dot_phi: f64,
    pub sphere_integral: f64,
}

/// `det grad w(x0) (zeta . phi)(x0) int_{S^2} |grad w(x0) y|^-3 dH^2(y)` at the zero `x0`.
pub fn innervar_derivative_flux(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<FluxReport> {
    let x0 = require_inner_admissible(w, phi)?;
    if !w.singularity().is_zero() {
        return Err(Error::invalid("flux formula needs a map with an isolated zero"));
    }
    let f0 = w.gradient(x0)?;
    let det = f0.det();
    let zeta_dot_phi = cfg.zeta(x0).dot(phi.value(x0));
    let sphere_integral = sphere_factor(&f0, spec)?;
    Ok(FluxReport { value: det * zeta_dot_phi * sphere_integral, det, zeta_dot_phi, sphere_integral })
}

/// `int_{S^2} |F y|^-3 dH^2(y)`.
pub fn sphere_factor(f: &Mat3, spec: &QuadratureSpec) -> Result<f64> {
    integrate_unit_sphere(
        |y| {
            let n = (*f * y).norm();
            if n == 0.0 {
                return Err(Error::invalid("sphere factor of a singular matrix"));
            }
            Ok(n.powi(-3))
        },
        spec,
    )
}

/// Difference quotients `(K(w^eps) - K(w)) / eps` for the inner variation.
///
/// Substituting `y = x + eps phi(x)` gives
/// `K(w^eps) = int zeta(psi(y)) . (1 + eps grad phi(psi(y)))^-1 G(w)(y) dy`
/// with `psi` the inverse displacement, so each quotient is a single integral
/// singular only where `w` is.
pub fn inner_difference_quotients(
    w: &DeformationMap,
    phi: &TestField,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
    steps: &[f64],
) -> Result<Vec<Integral>> {
    require_inner_admissible(w, phi)?;
    let (spec, points) = plan(&[w], cfg, spec, Integrand::Linear, false);
    let reach = phi.radius + steps.iter().fold(0.0_f64, |m, e| m.max(e.abs())) * phi.sup_bound();
    steps
        .iter()
        .map(|&eps| {
            integrate_ball(
                |y| {
                    if (y - phi.center).norm() >= reach {
                        return Ok(0.0);
                    }
                    let x = solve_displacement(phi, eps, y)?;
                    let a = Mat3::IDENTITY + phi.jet(x).gradient * eps;
                    let a_inv = a.inverse().ok_or_else(|| Error::invalid("displacement not invertible"))?;
                    let g = g_field(w, y)?;
                    Ok((cfg.zeta(x).dot(a_inv * g) - cfg.zeta(y).dot(g)) / eps)
                },
                &spec,
                &points,
            )
        })
        .collect()
}

/// One row of a scan of the inner-variation derivative over `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroMotionRow {
    pub tau: f64,
    pub f: f64,
    pub derivative: f64,
    /// `derivative / (tau^(2-2q) f(tau))`.
    pub constant: f64,
}

/// For each `tau`, the inner variation of the bump map with
/// `phi(tau e1) = f(tau) e1`, and its flux-formula derivative.
pub fn zero_motion_scan(
    f: impl Fn(f64) -> f64,
    taus: &[f64],
    n: u32,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<Vec<ZeroMotionRow>> {
    taus.iter()
        .map(|&tau| {
            let value = f(tau);
            if !(value > 0.0) {
                return Err(Error::invalid(format!("f must be positive on the ladder, f({tau}) = {value}")));
            }
            let w = crate::maps::bump_map(tau, n)?;
            let x0 = w.singularity().location;
            let phi = TestField::new(x0, 0.8 * tau, Vec3::E1 * value, Mat3::ZERO)?;
            let flux = innervar_derivative_flux(&w, &phi, cfg, spec)?;
            let scale = tau.powf(2.0 - cfg.two_q()) * value;
            Ok(ZeroMotionRow { tau, f: value, derivative: flux.value, constant: flux.value / scale })
        })
        .collect()
}

/// Gradient masses on the dyadic shells around the singular point of `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellMass {
    /// `int_{shell(2^-(j+1), 2^-j)} |grad blend|`.
    pub blend: f64,
    /// `int_{shell(2^-(j+2), 2^(1-j))} |grad w|`.
    pub reference: f64,
}

fn blend_center(w: &DeformationMap, j: u32) -> Result<Vec3> {
    let x0 = w.singularity().location;
    if x0.norm() + 0.5f64.powi(j as i32 - 1) > 1.0 {
        return Err(Error::invalid(format!("shells of level {j} around {x0:?} leave the ball")));
    }
    Ok(x0)
}

/// Shell masses of a level-`j` blend against the unmollified map.
pub fn shell_mass(w: &DeformationMap, blend: &DeformationMap, j: u32, spec: &QuadratureSpec) -> Result<ShellMass> {
    let x0 = blend_center(w, j)?;
    let r = |k: i32| 0.5f64.powi(k);
    let j = j as i32;
    let spec = spec.clone().with_interfaces(blend.interfaces().iter().chain(w.interfaces()).copied());
    let blend_mass = integrate_annulus(|x| Ok(blend.gradient(x)?.norm()), x0, r(j + 1), r(j), &spec)?;
    let reference = integrate_annulus(|x| Ok(w.gradient(x)?.norm()), x0, r(j + 2), r(j - 1), &spec)?;
    Ok(ShellMass { blend: blend_mass, reference })
}

/// `||grad blend - grad w||_{L^2q}` over `B \ B(x0, 2^-(j+3))`; needs `x0 = 0`.
pub fn blend_gradient_error(
    w: &DeformationMap,
    blend: &DeformationMap,
    j: u32,
    cfg: &ExponentConfig,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if w.singularity().location != Vec3::ZERO {
        return Err(Error::invalid("blend error norm needs the singular point at the origin"));
    }
    let p = cfg.two_q();
    let spec = spec.clone().with_interfaces(blend.interfaces().iter().chain(w.interfaces()).copied());
    let inner = 0.5f64.powi(j as i32 + 3);
    let mass = integrate_annulus(
        |x| Ok((blend.gradient(x)? - w.gradient(x)?).norm().powf(p)),
        Vec3::ZERO,
        inner,
        1.0,
        &spec,
    )?;
    Ok(mass.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{identity_map, radial_map, RadialProfile};

    #[test]
    fn exponent_range() {
        assert!(ExponentConfig::new(1.0).is_err());
        assert!(ExponentConfig::new(1.5).is_err());
        let c = ExponentConfig::default();
        assert!((c.identity_value() - 8.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn g_of_identity_and_cavity() {
        let x = Vec3::new(0.1, -0.2, 0.15);
        let g = g_field(&identity_map(), x).unwrap();
        assert!((g - x / x.norm().powi(3)).norm() < 1e-12);
        let c = radial_map(RadialProfile::Cavity { lambda: 0.4 }).unwrap();
        let g = g_field(&c, x).unwrap();
        assert!((g - x / x.norm().powi(3)).norm() < 1e-10);
        assert!(g_field(&identity_map(), Vec3::ZERO).is_err());
    }

    #[test]
    fn zeta_gradient_matches_differences() {
        let c = ExponentConfig::default();
        let x = Vec3::new(0.3, 0.1, -0.2);
        let fd = crate::maps::fd_gradient(|y| Ok(c.zeta(y)), x, 1e-6).unwrap();
        assert!((fd - c.zeta_gradient(x)).max_abs() < 1e-7);
    }

    #[test]
    fn identity_sphere_factor() {
        let v = sphere_factor(&Mat3::IDENTITY, &QuadratureSpec::default()).unwrap();
        assert!((v - 4.0 * PI).abs() < 1e-12);
        let d = Mat3::diag(1.0, 1.0, 2.0);
        let v = sphere_factor(&d, &QuadratureSpec::default()).unwrap();
        assert!((v * d.det() - 4.0 * PI).abs() < 1e-8);
    }
}
