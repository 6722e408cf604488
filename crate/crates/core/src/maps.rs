//! Deformation maps of the unit ball with values, gradients and singularity metadata.
//!
//! Every family implements [`MapField`], which returns a [`Jet`] (value and
//! gradient). A [`DeformationMap`] wraps a field together with a
//! [`SingularityDescriptor`] and the origin-centred sphere radii across which
//! the gradient may jump. Outside the closed unit ball every map is extended
//! by the identity.

use crate::error::{Error, Result};
use crate::ramp::{flat_ramp, smooth_transition, smoothstep5};
use crate::tensor3::{Mat3, Vec3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Value and gradient of a vector field at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: Vec3,
    pub gradient: Mat3,
}

impl Jet {
    pub fn identity(x: Vec3) -> Self {
        Jet { value: x, gradient: Mat3::IDENTITY }
    }
}

pub trait MapField: Send + Sync + fmt::Debug {
    fn jet(&self, x: Vec3) -> Result<Jet>;

    fn value(&self, x: Vec3) -> Result<Vec3> {
        Ok(self.jet(x)?.value)
    }
}

/// Condition attached to the single exceptional point of a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingularityKind {
    None,
    /// Discontinuity at the location with `|w| >= tau0` nearby.
    Discontinuity { tau0: f64 },
    /// Isolated zero at the location, locally a diffeomorphism.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularityDescriptor {
    #[serde(flatten)]
    pub kind: SingularityKind,
    pub location: Vec3,
}

impl SingularityDescriptor {
    pub fn none() -> Self {
        SingularityDescriptor { kind: SingularityKind::None, location: Vec3::ZERO }
    }

    pub fn zero_at(location: Vec3) -> Self {
        SingularityDescriptor { kind: SingularityKind::Zero, location }
    }

    pub fn discontinuity_at(location: Vec3, tau0: f64) -> Self {
        SingularityDescriptor { kind: SingularityKind::Discontinuity { tau0 }, location }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, SingularityKind::Zero)
    }

    pub fn is_discontinuity(&self) -> bool {
        matches!(self.kind, SingularityKind::Discontinuity { .. })
    }
}

#[derive(Debug, Clone)]
pub struct DeformationMap {
    field: Arc<dyn MapField>,
    singularity: SingularityDescriptor,
    interfaces: Vec<f64>,
    label: String,
}

impl DeformationMap {
    pub fn new(
        field: Arc<dyn MapField>,
        singularity: SingularityDescriptor,
        interfaces: Vec<f64>,
        label: impl Into<String>,
    ) -> Self {
        let mut interfaces: Vec<f64> = interfaces.into_iter().filter(|r| *r > 0.0 && *r < 1.0).collect();
        interfaces.sort_by(|a, b| a.total_cmp(b));
        interfaces.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        DeformationMap { field, singularity, interfaces, label: label.into() }
    }

    pub fn jet(&self, x: Vec3) -> Result<Jet> {
        if x.norm() > 1.0 {
            return Ok(Jet::identity(x));
        }
        self.field.jet(x)
    }

    pub fn value(&self, x: Vec3) -> Result<Vec3> {
        if x.norm() > 1.0 {
            return Ok(x);
        }
        self.field.value(x)
    }

    pub fn gradient(&self, x: Vec3) -> Result<Mat3> {
        Ok(self.jet(x)?.gradient)
    }

    pub fn singularity(&self) -> &SingularityDescriptor {
        &self.singularity
    }

    /// Origin-centred radii where the gradient may jump.
    pub fn interfaces(&self) -> &[f64] {
        &self.interfaces
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn field(&self) -> &Arc<dyn MapField> {
        &self.field
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Centred-difference gradient of `f` at `x` with step `h`.
pub fn fd_gradient(f: impl Fn(Vec3) -> Result<Vec3>, x: Vec3, h: f64) -> Result<Mat3> {
    let mut cols = [Vec3::ZERO; 3];
    for (j, col) in cols.iter_mut().enumerate() {
        let e = Vec3::basis(j) * h;
        *col = (f(x + e)? - f(x - e)?) / (2.0 * h);
    }
    Ok(Mat3::from_columns(cols[0], cols[1], cols[2]))
}

/// Default finite-difference step at `x`.
pub fn fd_step(x: Vec3) -> f64 {
    1e-6 * x.norm().max(1.0)
}

type ValueFn = dyn Fn(Vec3) -> Result<Vec3> + Send + Sync;

/// A field given only by its values; gradients by centred differences.
pub struct FiniteDifferenceField {
    value: Box<ValueFn>,
    name: String,
}

impl FiniteDifferenceField {
    pub fn new(name: impl Into<String>, value: impl Fn(Vec3) -> Result<Vec3> + Send + Sync + 'static) -> Self {
        FiniteDifferenceField { value: Box::new(value), name: name.into() }
    }
}

impl fmt::Debug for FiniteDifferenceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FiniteDifferenceField({})", self.name)
    }
}

impl MapField for FiniteDifferenceField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let value = (self.value)(x)?;
        let gradient = fd_gradient(|y| (self.value)(y), x, fd_step(x))?;
        Ok(Jet { value, gradient })
    }

    fn value(&self, x: Vec3) -> Result<Vec3> {
        (self.value)(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityField;

impl MapField for IdentityField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        Ok(Jet::identity(x))
    }
}

/// The identity map, recorded as having a nondegenerate zero at the origin.
pub fn identity_map() -> DeformationMap {
    DeformationMap::new(Arc::new(IdentityField), SingularityDescriptor::zero_at(Vec3::ZERO), vec![], "identity")
}

fn singular(x: Vec3, reason: &str) -> Error {
    Error::Singular { point: x, reason: reason.to_string() }
}

// ---------------------------------------------------------------------------
// Radial maps

type ProfileFn = dyn Fn(f64) -> (f64, f64) + Send + Sync;

/// Radial profile `r(R)` returning `(r, r')`.
#[derive(Clone)]
pub enum RadialProfile {
    Identity,
    /// `r(R) = max(lambda, R)`.
    Cavity { lambda: f64 },
    /// `r(R) = R^p`.
    Power { p: f64 },
    Custom { name: String, profile: Arc<ProfileFn> },
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialProfile::Identity => write!(f, "Identity"),
            RadialProfile::Cavity { lambda } => write!(f, "Cavity {{ lambda: {lambda} }}"),
            RadialProfile::Power { p } => write!(f, "Power {{ p: {p} }}"),
            RadialProfile::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl RadialProfile {
    pub fn eval(&self, r: f64) -> (f64, f64) {
        match self {
            RadialProfile::Identity => (r, 1.0),
            RadialProfile::Cavity { lambda } => {
                if r < *lambda {
                    (*lambda, 0.0)
                } else {
                    (r, 1.0)
                }
            }
            RadialProfile::Power { p } => (r.powf(*p), p * r.powf(p - 1.0)),
            RadialProfile::Custom { profile, .. } => profile(r),
        }
    }

    fn interfaces(&self) -> Vec<f64> {
        match self {
            RadialProfile::Cavity { lambda } => vec![*lambda],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone)]
struct RadialField {
    profile: RadialProfile,
}

impl MapField for RadialField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let big_r = x.norm();
        if big_r == 0.0 {
            return match self.profile {
                RadialProfile::Identity => Ok(Jet::identity(x)),
                _ => Err(singular(x, "radial map evaluated at the origin")),
            };
        }
        let (r, dr) = self.profile.eval(big_r);
        let xb = x / big_r;
        let s = r / big_r;
        let gradient = xb.outer(xb) * (dr - s) + Mat3::IDENTITY * s;
        Ok(Jet { value: xb * r, gradient })
    }
}

/// `u(x) = r(|x|) x/|x|`.
pub fn radial_map(profile: RadialProfile) -> Result<DeformationMap> {
    let (r1, _) = profile.eval(1.0);
    if (r1 - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("radial profile must satisfy r(1) = 1, got {r1}")));
    }
    for k in 0..=1000 {
        let (r, dr) = profile.eval(k as f64 / 1000.0);
        if !(r >= 0.0) || !dr.is_finite() && k > 0 {
            return Err(Error::invalid(format!("radial profile invalid at R = {}", k as f64 / 1000.0)));
        }
    }
    if let RadialProfile::Cavity { lambda } = profile {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!("cavity radius must lie in (0, 1), got {lambda}")));
        }
    }
    if let RadialProfile::Power { p } = profile {
        if !(p > 0.0) {
            return Err(Error::invalid(format!("power profile needs p > 0, got {p}")));
        }
    }
    let r0 = profile.eval(0.0).0;
    let singularity = if r0 > 0.0 {
        SingularityDescriptor::discontinuity_at(Vec3::ZERO, r0)
    } else {
        SingularityDescriptor::zero_at(Vec3::ZERO)
    };
    let label = format!("radial {profile:?}");
    let interfaces = profile.interfaces();
    Ok(DeformationMap::new(Arc::new(RadialField { profile }), singularity, interfaces, label))
}

// ---------------------------------------------------------------------------
// Built-in nontrivial diffeomorphism

/// `f = T o S` with `S(x) = (1 + b (1 - |x|^2) x_1) x` and
/// `T(y) = Rot_z(a (1 - |y|^2)^2) y`.
///
/// Fixes the origin and the unit sphere pointwise; a diffeomorphism of the
/// ball for `|b| <= 0.25`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearField {
    pub stretch: f64,
    pub twist: f64,
}

impl Default for ShearField {
    fn default() -> Self {
        ShearField { stretch: 0.25, twist: 0.5 }
    }
}

impl ShearField {
    pub fn new(stretch: f64, twist: f64) -> Result<Self> {
        if !(stretch.abs() <= 0.25) || !twist.is_finite() {
            return Err(Error::invalid(format!("shear needs |stretch| <= 0.25 and finite twist, got ({stretch}, {twist})")));
        }
        Ok(ShearField { stretch, twist })
    }
}

fn rot_z(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

fn rot_z_derivative(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])
}

impl MapField for ShearField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let b = self.stretch;
        let r2 = x.norm_squared();
        let m = 1.0 + b * (1.0 - r2) * x[0];
        let dm = x * (-2.0 * b * x[0]) + Vec3::E1 * (b * (1.0 - r2));
        let y = x * m;
        let ds = Mat3::IDENTITY * m + x.outer(dm);
        let s = y.norm_squared();
        let theta = self.twist * (1.0 - s) * (1.0 - s);
        let dtheta = -2.0 * self.twist * (1.0 - s);
        let rot = rot_z(theta);
        let dt = rot + (rot_z_derivative(theta) * y).outer(y * (2.0 * dtheta));
        Ok(Jet { value: rot * y, gradient: dt * ds })
    }
}

// ---------------------------------------------------------------------------
// Hold maps

#[derive(Debug, Clone)]
struct HoldField {
    f: Arc<dyn MapField>,
    rho: f64,
}

impl MapField for HoldField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let r = x.norm();
        if r >= self.rho {
            return self.f.jet(x);
        }
        if r == 0.0 {
            return Err(singular(x, "hold map is discontinuous at the origin"));
        }
        let xb = x / r;
        let jf = self.f.jet(xb * self.rho)?;
        let gradient = jf.gradient * (Mat3::IDENTITY - xb.outer(xb)) * (self.rho / r);
        Ok(Jet { value: jf.value, gradient })
    }
}

/// Unit directions on a Fibonacci lattice.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let s = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(s * phi.cos(), s * phi.sin(), z)
        })
        .collect()
}

/// The 26 directions `(i, j, k) / |(i, j, k)|`, `i, j, k in {-1, 0, 1}`, not all zero.
pub fn sphere_grid_26() -> Vec<Vec3> {
    let mut out = Vec::with_capacity(26);
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                if (i, j, k) != (0, 0, 0) {
                    out.push(Vec3::new(i as f64, j as f64, k as f64).unit().unwrap());
                }
            }
        }
    }
    out
}

/// `w(x) = f(rho x/|x|)` inside `B(0, rho)`, `f(x)` outside.
pub fn hold_map(f: Arc<dyn MapField>, rho: f64) -> Result<DeformationMap> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("hold map needs 0 < rho < 1, got {rho}")));
    }
    let mut tau0 = f64::INFINITY;
    for d in fibonacci_sphere(2000).into_iter().chain(sphere_grid_26()) {
        tau0 = tau0.min(f.value(d * rho)?.norm());
    }
    let label = format!("hold(rho = {rho}, {f:?})");
    Ok(DeformationMap::new(
        Arc::new(HoldField { f, rho }),
        SingularityDescriptor::discontinuity_at(Vec3::ZERO, tau0),
        vec![rho],
        label,
    ))
}

// ---------------------------------------------------------------------------
// Circle maps

#[derive(Debug, Clone)]
struct CircleField {
    w: DeformationMap,
    tau: f64,
}

/// `tau w/|w|` where `|w| <= tau`, `w` elsewhere, given the jet of `w`.
fn circle_jet(j: Jet, tau: f64, x: Vec3) -> Result<Jet> {
    let n = j.value.norm();
    if n > tau {
        return Ok(j);
    }
    if n < 1e-300 {
        return Err(singular(x, "circle map evaluated at a zero of w"));
    }
    let wb = j.value / n;
    let gradient = (Mat3::IDENTITY - wb.outer(wb)) * j.gradient * (tau / n);
    Ok(Jet { value: wb * tau, gradient })
}

impl MapField for CircleField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        circle_jet(self.w.jet(x)?, self.tau, x)
    }
}

/// Collapses `{|w| <= tau}` onto the sphere of radius `tau`.
///
/// A zero becomes a discontinuity with `tau0 = tau`; an existing
/// discontinuity keeps its location with `tau0 = max(tau0, tau)`.
pub fn circle_map(w: &DeformationMap, tau: f64) -> Result<DeformationMap> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("circle map needs tau > 0, got {tau}")));
    }
    let s = *w.singularity();
    let kind = match s.kind {
        SingularityKind::Zero => SingularityKind::Discontinuity { tau0: tau },
        SingularityKind::Discontinuity { tau0 } => SingularityKind::Discontinuity { tau0: tau0.max(tau) },
        SingularityKind::None => SingularityKind::None,
    };
    Ok(DeformationMap::new(
        Arc::new(CircleField { w: w.clone(), tau }),
        SingularityDescriptor { kind, location: s.location },
        w.interfaces().to_vec(),
        format!("circle(tau = {tau}, {})", w.label()),
    ))
}

// ---------------------------------------------------------------------------
// Paths to the identity

/// `gamma(.; t)`, the circle map of `x -> |x|^t w(x |x|^-t)`.
#[derive(Debug, Clone)]
pub struct PathField {
    w: DeformationMap,
    tau: f64,
    t: f64,
}

struct PathPoint {
    r: f64,
    xb: Vec3,
    alpha: Vec3,
    w: Jet,
    inner: bool,
}

impl PathField {
    fn point(&self, x: Vec3) -> Result<PathPoint> {
        let r = x.norm();
        if r == 0.0 {
            return Err(singular(x, "path map evaluated at the origin"));
        }
        let alpha = x * r.powf(-self.t);
        let w = self.w.jet(alpha)?;
        let inner = r.powf(self.t) * w.value.norm() <= self.tau;
        Ok(PathPoint { r, xb: x / r, alpha, w, inner })
    }

    /// `d gamma / dt` at `x`.
    pub fn velocity(&self, x: Vec3) -> Result<Vec3> {
        let p = self.point(x)?;
        let lnr = p.r.ln();
        let dw_alpha = p.w.gradient * p.alpha;
        if p.inner {
            let n = p.w.value.norm();
            let wb = p.w.value / n;
            Ok((wb.outer(wb) - Mat3::IDENTITY) * dw_alpha * (self.tau * lnr / n))
        } else {
            Ok((p.w.value - dw_alpha) * (p.r.powf(self.t) * lnr))
        }
    }

    /// Whether `x` lies in `U(tau; t) = {|x|^t |w(alpha)| < tau}`.
    pub fn in_inner_region(&self, x: Vec3) -> Result<bool> {
        Ok(self.point(x)?.inner)
    }

    pub fn t(&self) -> f64 {
        self.t
    }
}

impl MapField for PathField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let p = self.point(x)?;
        let t = self.t;
        let proj = Mat3::IDENTITY - p.xb.outer(p.xb) * t;
        if p.inner {
            let n = p.w.value.norm();
            let wb = p.w.value / n;
            let d_alpha = proj * p.r.powf(-t);
            let gradient = (Mat3::IDENTITY - wb.outer(wb)) * p.w.gradient * d_alpha * (self.tau / n);
            Ok(Jet { value: wb * self.tau, gradient })
        } else {
            let value = p.w.value * p.r.powf(t);
            let gradient = p.w.value.outer(p.xb) * (t * p.r.powf(t - 1.0)) + p.w.gradient * proj;
            Ok(Jet { value, gradient })
        }
    }
}

/// A point on the path together with its velocity field.
#[derive(Debug, Clone)]
pub struct PathMap {
    pub map: DeformationMap,
    pub field: Arc<PathField>,
}

/// `gamma(.; t)` for a map `w` whose singularity sits at the origin.
pub fn path_gamma(w: &DeformationMap, tau: f64, t: f64) -> Result<PathMap> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("path parameter t must lie in [0, 1], got {t}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("path needs tau > 0, got {tau}")));
    }
    if w.singularity().location.norm() > 0.0 {
        return Err(Error::invalid("path construction needs the singularity at the origin"));
    }
    let field = Arc::new(PathField { w: w.clone(), tau, t });
    let interfaces = if t < 1.0 {
        w.interfaces().iter().map(|r| r.powf(1.0 / (1.0 - t))).collect()
    } else {
        vec![]
    };
    let map = DeformationMap::new(
        field.clone(),
        SingularityDescriptor::discontinuity_at(Vec3::ZERO, tau),
        interfaces,
        format!("path(t = {t}, tau = {tau}, {})", w.label()),
    );
    Ok(PathMap { map, field })
}

// ---------------------------------------------------------------------------
// Test fields

/// `phi(x) = beta(|x - c| / s) (a + M (x - c))` with a smooth cutoff `beta`
/// equal to 1 on `[0, plateau]` and 0 on `[1, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestField {
    pub center: Vec3,
    pub radius: f64,
    pub amplitude: Vec3,
    #[serde(default)]
    pub slope: Mat3,
    #[serde(default = "default_plateau")]
    pub plateau: f64,
}

fn default_plateau() -> f64 {
    0.0
}

impl TestField {
    pub fn new(center: Vec3, radius: f64, amplitude: Vec3, slope: Mat3) -> Result<Self> {
        let f = TestField { center, radius, amplitude, slope, plateau: default_plateau() };
        f.validate()?;
        Ok(f)
    }

    /// The zero field.
    pub fn zero() -> Self {
        TestField {
            center: Vec3::ZERO,
            radius: 0.5,
            amplitude: Vec3::ZERO,
            slope: Mat3::ZERO,
            plateau: default_plateau(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::invalid("test field radius must be positive"));
        }
        if self.center.norm() + self.radius >= 1.0 {
            return Err(Error::invalid(format!(
                "test field support B({:?}, {}) is not compactly contained in B",
                self.center, self.radius
            )));
        }
        if !(self.plateau >= 0.0 && self.plateau < 1.0) {
            return Err(Error::invalid("test field plateau must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `phi = 0` on `B(0, dead_zone)`.
    pub fn dead_zone(&self) -> f64 {
        (self.center.norm() - self.radius).max(0.0)
    }

    fn cutoff(&self, u: f64) -> (f64, f64) {
        let (v, d) = smooth_transition((1.0 - u) / (1.0 - self.plateau));
        (v, -d / (1.0 - self.plateau))
    }

    pub fn value(&self, x: Vec3) -> Vec3 {
        self.jet(x).value
    }

    pub fn jet(&self, x: Vec3) -> Jet {
        let d = x - self.center;
        let dist = d.norm();
        let u = dist / self.radius;
        if u >= 1.0 {
            return Jet { value: Vec3::ZERO, gradient: Mat3::ZERO };
        }
        let (beta, dbeta) = self.cutoff(u);
        let inner = self.amplitude + self.slope * d;
        let grad_beta = if dist > 0.0 { d * (dbeta / (dist * self.radius)) } else { Vec3::ZERO };
        Jet { value: inner * beta, gradient: self.slope * beta + inner.outer(grad_beta) }
    }

    /// Upper bound for `sup |phi|`.
    pub fn sup_bound(&self) -> f64 {
        self.amplitude.norm() + self.slope.norm() * self.radius
    }

    /// Upper bound for `sup |grad phi|` (Frobenius).
    pub fn gradient_bound(&self) -> f64 {
        // |beta'| of the C-infinity transition stays below 2 / (1 - plateau)
        self.slope.norm() + self.sup_bound() * 2.0 / ((1.0 - self.plateau) * self.radius)
    }
}

/// Solves `x + eps phi(x) = target` by Newton iteration from `x = target`.
pub fn solve_displacement(phi: &TestField, eps: f64, target: Vec3) -> Result<Vec3> {
    let mut x = target;
    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let j = phi.jet(x);
        let r = x + j.value * eps - target;
        residual = r.norm();
        if residual <= 1e-15 * target.norm().max(1.0) {
            return Ok(x);
        }
        let jac = Mat3::IDENTITY + j.gradient * eps;
        let inv = jac.inverse().ok_or(Error::NewtonDivergence { x: target, iterations: 0, residual })?;
        x -= inv * r;
    }
    if residual <= 1e-12 {
        return Ok(x);
    }
    Err(Error::NewtonDivergence { x: target, iterations: 50, residual })
}

#[derive(Debug, Clone)]
struct InnerVariationField {
    w: DeformationMap,
    phi: TestField,
    eps: f64,
}

impl MapField for InnerVariationField {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let p = self.phi.jet(x);
        let j = self.w.jet(x + p.value * self.eps)?;
        Ok(Jet { value: j.value, gradient: j.gradient * (Mat3::IDENTITY + p.gradient * self.eps) })
    }
}

/// `w^eps(x) = w(x + eps phi(x))`.
pub fn inner_variation(w: &DeformationMap, phi: &TestField, eps: f64) -> Result<DeformationMap> {
    phi.validate()?;
    if !eps.is_finite() {
        return Err(Error::invalid("inner variation needs a finite eps"));
    }
    if phi.center.norm() + phi.radius + eps.abs() * phi.sup_bound() >= 1.0 {
        return Err(Error::invalid(format!("eps = {eps} pushes points of the support outside B")));
    }
    if eps.abs() * phi.gradient_bound() >= 1.0 {
        return Err(Error::invalid(format!("x + eps phi(x) is not a diffeomorphism for eps = {eps}")));
    }
    let s = *w.singularity();
    let singularity = match s.kind {
        SingularityKind::None => s,
        _ => SingularityDescriptor { kind: s.kind, location: solve_displacement(phi, eps, s.location)? },
    };
    let (lo, hi) = (phi.center.norm() - phi.radius, phi.center.norm() + phi.radius);
    let interfaces = w.interfaces().iter().copied().filter(|r| *r <= lo || *r >= hi).collect();
    Ok(DeformationMap::new(
        Arc::new(InnerVariationField { w: w.clone(), phi: *phi, eps }),
        singularity,
        interfaces,
        format!("inner(eps = {eps}, {})", w.label()),
    ))
}

// ---------------------------------------------------------------------------
// Bump family

/// `g(.; tau) = rho^-1` with `rho(y) = y + tau phi(y)`, where
/// `phi = e1 (1 - s((|y| - 3 tau) / ((N - 3) tau)))` and `s` is [`flat_ramp`].
///
/// `phi = e1` on `B(0, 3 tau)`, `phi = 0` outside `B(0, N tau)`, and
/// `|grad phi| <= 1.1953 / ((N - 3) tau) <= 2 / (N tau)` once `N >= 8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpFamily {
    pub tau: f64,
    pub n: u32,
}

pub const BUMP_MIN_N: u32 = 8;

impl BumpFamily {
    pub fn new(tau: f64, n: u32) -> Result<Self> {
        if n < BUMP_MIN_N {
            return Err(Error::invalid(format!(
                "N = {n} cannot meet |grad phi| <= 2/(N tau) with phi = e1 on B(0, 3 tau); need N >= {BUMP_MIN_N}"
            )));
        }
        if !(tau > 0.0) || n as f64 * tau >= 1.0 {
            return Err(Error::invalid(format!("need 0 < tau and N tau < 1, got tau = {tau}, N = {n}")));
        }
        Ok(BumpFamily { tau, n })
    }

    /// Scalar profile of the bump and its gradient.
    pub fn bump(&self, y: Vec3) -> (f64, Vec3) {
        let r = y.norm();
        let width = (self.n as f64 - 3.0) * self.tau;
        let (s, ds) = flat_ramp((r - 3.0 * self.tau) / width);
        let grad = if r > 0.0 && ds != 0.0 { y * (-ds / (width * r)) } else { Vec3::ZERO };
        (1.0 - s, grad)
    }

    /// Largest value of `|grad phi|`.
    pub fn bump_gradient_bound(&self) -> f64 {
        crate::ramp::FLAT_RAMP_MAX_SLOPE / ((self.n as f64 - 3.0) * self.tau)
    }

    /// `rho(y) = y + tau phi(y)` and its gradient.
    pub fn forward(&self, y: Vec3) -> Jet {
        let (p, dp) = self.bump(y);
        Jet {
            value: y + Vec3::E1 * (self.tau * p),
            gradient: Mat3::IDENTITY + Vec3::E1.outer(dp) * self.tau,
        }
    }

    pub fn zero_location(&self) -> Vec3 {
        Vec3::E1 * self.tau
    }
}

impl MapField for BumpFamily {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        if x.norm() >= self.n as f64 * self.tau {
            return Ok(Jet::identity(x));
        }
        let mut y = x;
        let mut residual = f64::INFINITY;
        for it in 0..50 {
            let f = self.forward(y);
            let r = f.value - x;
            residual = r.norm();
            let inv = f
                .gradient
                .inverse()
                .ok_or(Error::NewtonDivergence { x, iterations: it, residual })?;
            if residual <= 1e-12 * self.tau {
                return Ok(Jet { value: y, gradient: inv });
            }
            y -= inv * r;
        }
        Err(Error::NewtonDivergence { x, iterations: 50, residual })
    }
}

/// The map `g(.; tau)` with its zero at `tau e1`.
pub fn bump_map(tau: f64, n: u32) -> Result<DeformationMap> {
    let b = BumpFamily::new(tau, n)?;
    if tau * b.bump_gradient_bound() >= 1.0 {
        return Err(Error::invalid("bump perturbation is not a diffeomorphism"));
    }
    Ok(DeformationMap::new(
        Arc::new(b),
        SingularityDescriptor::zero_at(b.zero_location()),
        vec![n as f64 * tau],
        format!("bump(tau = {tau}, N = {n})"),
    ))
}

// ---------------------------------------------------------------------------
// Mollified blends

const TAPS: [f64; 7] = [1.0 / 16.0, 2.0 / 16.0, 3.0 / 16.0, 4.0 / 16.0, 3.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0];

/// `w^(j) = (1 - eta_j) w + eta_j w_l` about the discontinuity `x0` of `w`.
///
/// `w_l` is the trilinear interpolant of grid samples of `w` (spacing
/// `1/(4l)`, nodes at half-integer multiples) smoothed by the separable
/// triangular kernel of radius `1/l`. `eta_j` is the quintic smoothstep in
/// `|x - x0|` from `2^-(j+2)` to `2^-(j+1)`.
#[derive(Debug, Clone)]
pub struct MollifiedBlend {
    w: DeformationMap,
    x0: Vec3,
    inner: f64,
    outer: f64,
    h: f64,
}

impl MollifiedBlend {
    /// The smoothed map `w_l` alone.
    pub fn smoothed(&self, x: Vec3) -> Result<Jet> {
        let h = self.h;
        let u = [x[0] / h - 0.5, x[1] / h - 0.5, x[2] / h - 0.5];
        let base = [u[0].floor(), u[1].floor(), u[2].floor()];
        let frac = [u[0] - base[0], u[1] - base[1], u[2] - base[2]];
        // samples on the 8^3 nodes base-3 ..= base+4
        let mut s = vec![Vec3::ZERO; 512];
        for a in 0..8 {
            for b in 0..8 {
                for c in 0..8 {
                    let node = Vec3::new(
                        (base[0] + a as f64 - 3.0 + 0.5) * h,
                        (base[1] + b as f64 - 3.0 + 0.5) * h,
                        (base[2] + c as f64 - 3.0 + 0.5) * h,
                    );
                    s[(a * 8 + b) * 8 + c] = self.w.value(node)?;
                }
            }
        }
        let mut s0 = [Vec3::ZERO; 2 * 64];
        for ia in 0..2 {
            for bc in 0..64 {
                s0[ia * 64 + bc] = (0..7).fold(Vec3::ZERO, |acc, k| acc + s[(ia + k) * 64 + bc] * TAPS[k]);
            }
        }
        let mut s1 = [Vec3::ZERO; 2 * 2 * 8];
        for ia in 0..2 {
            for ib in 0..2 {
                for c in 0..8 {
                    s1[(ia * 2 + ib) * 8 + c] =
                        (0..7).fold(Vec3::ZERO, |acc, k| acc + s0[ia * 64 + (ib + k) * 8 + c] * TAPS[k]);
                }
            }
        }
        let mut corner = [Vec3::ZERO; 8];
        for ia in 0..2 {
            for ib in 0..2 {
                for ic in 0..2 {
                    corner[(ia * 2 + ib) * 2 + ic] =
                        (0..7).fold(Vec3::ZERO, |acc, k| acc + s1[(ia * 2 + ib) * 8 + ic + k] * TAPS[k]);
                }
            }
        }
        let wt = |i: usize, f: f64| if i == 0 { 1.0 - f } else { f };
        let dwt = |i: usize| if i == 0 { -1.0 } else { 1.0 };
        let mut value = Vec3::ZERO;
        let mut cols = [Vec3::ZERO; 3];
        for ia in 0..2 {
            for ib in 0..2 {
                for ic in 0..2 {
                    let v = corner[(ia * 2 + ib) * 2 + ic];
                    let (wa, wb, wc) = (wt(ia, frac[0]), wt(ib, frac[1]), wt(ic, frac[2]));
                    value += v * (wa * wb * wc);
                    cols[0] += v * (dwt(ia) * wb * wc / h);
                    cols[1] += v * (wa * dwt(ib) * wc / h);
                    cols[2] += v * (wa * wb * dwt(ic) / h);
                }
            }
        }
        Ok(Jet { value, gradient: Mat3::from_columns(cols[0], cols[1], cols[2]) })
    }

    /// `(eta_j, grad eta_j)`.
    pub fn cutoff(&self, x: Vec3) -> (f64, Vec3) {
        let d = x - self.x0;
        let r = d.norm();
        let width = self.outer - self.inner;
        let (v, dv) = smoothstep5((r - self.inner) / width);
        let grad = if r > 0.0 { d * (dv / (width * r)) } else { Vec3::ZERO };
        (v, grad)
    }
}

impl MapField for MollifiedBlend {
    fn jet(&self, x: Vec3) -> Result<Jet> {
        let (eta, deta) = self.cutoff(x);
        if eta == 0.0 {
            return self.w.jet(x);
        }
        let wl = self.smoothed(x)?;
        if eta == 1.0 {
            return Ok(wl);
        }
        let w = self.w.jet(x)?;
        Ok(Jet {
            value: w.value * (1.0 - eta) + wl.value * eta,
            gradient: w.gradient * (1.0 - eta) + wl.gradient * eta + (wl.value - w.value).outer(deta),
        })
    }
}

/// Blend of `w` with its smoothing at scale `1/l` outside `B(x0, 2^-(j+1))`.
pub fn mollified_blend(w: &DeformationMap, j: u32, l: u32) -> Result<(DeformationMap, Arc<MollifiedBlend>)> {
    let SingularityKind::Discontinuity { tau0 } = w.singularity().kind else {
        return Err(Error::invalid("mollified blend needs a map with a discontinuity"));
    };
    if j > 40 {
        return Err(Error::invalid(format!("blend level j = {j} is too large")));
    }
    if (l as u64) <= 1u64 << (j + 3) {
        return Err(Error::invalid(format!("need l > 2^(j+3) = {}, got l = {l}", 1u64 << (j + 3))));
    }
    let x0 = w.singularity().location;
    let inner = 0.5_f64.powi(j as i32 + 2);
    let outer = 0.5_f64.powi(j as i32 + 1);
    let blend = Arc::new(MollifiedBlend { w: w.clone(), x0, inner, outer, h: 0.25 / l as f64 });
    let lf = l as f64;
    let mut interfaces = Vec::new();
    for &r in w.interfaces() {
        interfaces.extend([r, r - 2.0 / lf, r - 1.0 / lf, r + 1.0 / lf, r + 2.0 / lf]);
    }
    if x0.norm() == 0.0 {
        interfaces.extend([inner, outer]);
    }
    let map = DeformationMap::new(
        blend.clone(),
        SingularityDescriptor::discontinuity_at(x0, 0.5 * tau0),
        interfaces,
        format!("blend(j = {j}, l = {l}, {})", w.label()),
    );
    Ok((map, blend))
}

// ---------------------------------------------------------------------------
// Verification helpers

/// Deterministic low-discrepancy points in the ball at distance at least
/// `min_dist` from `avoid`.
pub fn ball_samples(n: usize, avoid: Vec3, min_dist: f64) -> Vec<Vec3> {
    fn halton(mut i: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    let mut out = Vec::with_capacity(n);
    let mut i = 1;
    while out.len() < n {
        let x = Vec3::new(
            2.0 * halton(i, 2) - 1.0,
            2.0 * halton(i, 3) - 1.0,
            2.0 * halton(i, 5) - 1.0,
        );
        i += 1;
        if x.norm() < 0.999 && (x - avoid).norm() >= min_dist {
            out.push(x);
        }
    }
    out
}

/// `max |w(x) - x|` over the 26-point grid on the unit sphere.
pub fn boundary_identity_error(w: &DeformationMap) -> Result<f64> {
    sphere_grid_26()
        .into_iter()
        .try_fold(0.0_f64, |m, d| Ok(m.max((w.value(d)? - d).norm())))
}

/// Largest relative deviation of the gradient from centred differences.
pub fn gradient_fd_error(w: &DeformationMap, points: &[Vec3]) -> Result<f64> {
    let mut worst = 0.0_f64;
    for &x in points {
        let g = w.gradient(x)?;
        let fd = fd_gradient(|y| w.value(y), x, fd_step(x))?;
        worst = worst.max((g - fd).norm() / g.norm().max(1.0));
    }
    Ok(worst)
}

/// Checks the singularity descriptor on `n` sample points.
pub fn check_descriptor(w: &DeformationMap, n: usize) -> Result<()> {
    let s = w.singularity();
    match s.kind {
        SingularityKind::None => Ok(()),
        SingularityKind::Zero => {
            // Radial maps are only defined off the origin; probe the limit instead.
            for u in sphere_grid_26() {
                let v = w.value(s.location + u * 1e-8)?.norm();
                if v >= 1e-6 {
                    return Err(Error::invalid(format!("{}: |w| = {v:e} at distance 1e-8 from the zero", w.label())));
                }
            }
            let Ok(j) = w.jet(s.location) else { return Ok(()) };
            if j.value.norm() >= 1e-12 {
                return Err(Error::invalid(format!("{}: |w(x0)| = {:e}", w.label(), j.value.norm())));
            }
            if !(j.gradient.det() > 0.0) {
                return Err(Error::invalid(format!("{}: det grad w(x0) = {}", w.label(), j.gradient.det())));
            }
            Ok(())
        }
        SingularityKind::Discontinuity { tau0 } => {
            for x in ball_samples(n, s.location, 1e-6) {
                let v = w.value(x)?.norm();
                if v < tau0 * (1.0 - 1e-9) {
                    return Err(Error::invalid(format!("{}: |w({x:?})| = {v} < tau0 = {tau0}", w.label())));
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn radial_square_gradient_in_radial_frame() {
        let u = radial_map(RadialProfile::Power { p: 2.0 }).unwrap();
        let g = u.gradient(Vec3::new(0.5, 0.0, 0.0)).unwrap();
        assert!((g - Mat3::diag(1.0, 0.5, 0.5)).max_abs() < 1e-15);
        let bad = RadialProfile::Custom { name: "half".into(), profile: Arc::new(|r| (0.5 * r, 0.5)) };
        assert!(radial_map(bad).is_err());
    }

    #[test]
    fn hold_of_identity_is_cavity() {
        let w = hold_map(Arc::new(IdentityField), 0.4).unwrap();
        let c = radial_map(RadialProfile::Cavity { lambda: 0.4 }).unwrap();
        assert!(close(w.value(Vec3::new(0.0, 0.0, 0.2)).unwrap(), Vec3::new(0.0, 0.0, 0.4), 1e-15));
        for x in ball_samples(200, Vec3::ZERO, 1e-3) {
            let (a, b) = (w.jet(x).unwrap(), c.jet(x).unwrap());
            assert!(close(a.value, b.value, 1e-14));
            assert!((a.gradient - b.gradient).max_abs() < 1e-12);
        }
        assert!(hold_map(Arc::new(IdentityField), 1.0).is_err());
    }

    #[test]
    fn shear_fixes_boundary_and_origin() {
        let f = ShearField::default();
        assert!(close(f.value(Vec3::ZERO).unwrap(), Vec3::ZERO, 0.0));
        let w = hold_map(Arc::new(f), 0.5).unwrap();
        assert!(boundary_identity_error(&w).unwrap() < 1e-12);
        let pts: Vec<Vec3> = ball_samples(100, Vec3::ZERO, 0.05)
            .into_iter()
            .filter(|x| (x.norm() - 0.5).abs() > 0.01)
            .collect();
        assert!(gradient_fd_error(&w, &pts).unwrap() < 1e-5);
        check_descriptor(&w, 2000).unwrap();
    }

    #[test]
    fn bump_basic_facts() {
        let g = bump_map(0.1, 8).unwrap();
        assert!(g.value(Vec3::E1 * 0.1).unwrap().norm() < 1e-12);
        assert!(close(g.value(Vec3::new(0.6, 0.6, 0.0)).unwrap(), Vec3::new(0.6, 0.6, 0.0), 0.0));
        check_descriptor(&g, 100).unwrap();
        assert!(bump_map(0.1, 4).is_err());
        assert!(bump_map(0.2, 8).is_err());
        let b = BumpFamily::new(0.05, 8).unwrap();
        assert!(b.bump_gradient_bound() <= 2.0 / (8.0 * 0.05));
    }

    #[test]
    fn zero_tracking_under_inner_variation() {
        let phi = TestField::new(Vec3::new(0.1, 0.0, 0.0), 0.08, Vec3::E1, Mat3::ZERO).unwrap();
        let x = solve_displacement(&phi, 1e-3, Vec3::new(0.1, 0.0, 0.0)).unwrap();
        assert!(close(x, Vec3::new(0.1 - 1e-3, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn blend_rejects_small_l() {
        let w = radial_map(RadialProfile::Cavity { lambda: 0.4 }).unwrap();
        assert!(mollified_blend(&w, 3, 64).is_err());
        assert!(mollified_blend(&w, 3, 65).is_ok());
        assert!(mollified_blend(&identity_map(), 3, 128).is_err());
    }
}
