//! Deterministic integration over the unit ball, spheres and spherical annuli.
//!
//! Ball integrals are split with a smooth partition of unity into
//!
//! * an origin-centred piece in spherical coordinates, with dyadic radial
//!   shells toward the origin and panel breaks at every known interface radius;
//! * one local piece per secondary singular point `p`, a ball `B(p, r_p)` in
//!   spherical coordinates centred at `p`, again with dyadic shells.
//!
//! Each singular centre is excised with a ladder of radii `eps_k` and the
//! truncated integrals are extrapolated to `eps -> 0` assuming a tail of the form
//! `c_1 eps^theta + c_2 eps^(theta + step) + ...`. Within a radial panel nodes
//! are summed with Kahan compensation; panels are reduced with a fixed pairwise
//! tree, so results do not depend on how rayon schedules the panels.

use crate::error::{Error, Result};
use crate::ramp::smooth_transition;
use crate::tensor3::Vec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Compensated sum of a slice.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Pairwise (binary tree) reduction; the tree shape depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// How the exclusion-ladder values are extrapolated to zero radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationPolicy {
    /// Leading tail exponent for the origin; `3 - 2q` for the functionals here.
    pub exponent_hint: f64,
    /// Number of tail terms eliminated (1 or 2).
    pub terms: usize,
    /// Exponent increment between successive tail terms.
    pub exponent_step: f64,
    /// Replace the second term by `eps^theta ln eps`.
    pub log_correction: bool,
}

impl Default for ExtrapolationPolicy {
    fn default() -> Self {
        ExtrapolationPolicy {
            exponent_hint: 0.5,
            terms: 2,
            exponent_step: 1.0,
            log_correction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss-Legendre points per radial panel.
    pub radial_order: usize,
    /// Gauss-Legendre points in `cos(theta)` per polar panel.
    pub polar_order: usize,
    /// Uniform azimuthal points.
    pub azimuth_order: usize,
    /// Radial panels per factor-two shell.
    pub panels_per_octave: usize,
    /// Exclusion radii, strictly decreasing, relative to the patch radius.
    pub exclusion_ladder: Vec<f64>,
    pub extrapolation: ExtrapolationPolicy,
    /// Relative tolerance; extrapolants further apart than 100x this are non-convergent.
    pub tolerance: f64,
    /// Origin-centred sphere radii where the integrand may jump; always panel breaks.
    #[serde(default)]
    pub interfaces: Vec<f64>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::preset("default").expect("built-in preset")
    }
}

impl QuadratureSpec {
    pub const PRESETS: [&'static str; 3] = ["fast", "default", "paranoid"];

    /// Named presets:
    ///
    /// | preset   | radial | polar | azimuth | panels/octave | tolerance |
    /// |----------|--------|-------|---------|---------------|-----------|
    /// | fast     | 6      | 16    | 32      | 1             | 1e-4      |
    /// | default  | 8      | 32    | 64      | 2             | 1e-6      |
    /// | paranoid | 12     | 48    | 96      | 3             | 1e-8      |
    ///
    /// All use the ladder `{0.02, 0.01, 0.005, 0.0025}` and two tail terms.
    pub fn preset(name: &str) -> Result<Self> {
        let (radial, polar, azimuth, per_octave, tol) = match name {
            "fast" => (6, 16, 32, 1, 1e-4),
            "default" => (8, 32, 64, 2, 1e-6),
            "paranoid" => (12, 48, 96, 3, 1e-8),
            other => {
                return Err(Error::Config(format!(
                    "unknown quadrature preset '{other}' (expected one of {:?})",
                    Self::PRESETS
                )))
            }
        };
        Ok(QuadratureSpec {
            radial_order: radial,
            polar_order: polar,
            azimuth_order: azimuth,
            panels_per_octave: per_octave,
            exclusion_ladder: vec![0.02, 0.01, 0.005, 0.0025],
            extrapolation: ExtrapolationPolicy::default(),
            tolerance: tol,
            interfaces: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial_order == 0 || self.polar_order == 0 || self.azimuth_order == 0 {
            return Err(Error::invalid("quadrature orders must be positive"));
        }
        if self.panels_per_octave == 0 {
            return Err(Error::invalid("panels_per_octave must be positive"));
        }
        if self.exclusion_ladder.is_empty() {
            return Err(Error::invalid("exclusion ladder must not be empty"));
        }
        if self.exclusion_ladder.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::invalid("exclusion radii must lie in (0, 1)"));
        }
        if self.exclusion_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("exclusion ladder must be strictly decreasing"));
        }
        let p = &self.extrapolation;
        if !(1..=2).contains(&p.terms) {
            return Err(Error::invalid("extrapolation terms must be 1 or 2"));
        }
        if !(p.exponent_hint > 0.0) || !(p.exponent_step > 0.0) {
            return Err(Error::invalid("extrapolation exponents must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.extrapolation.exponent_hint = exponent;
        self
    }

    pub fn with_interfaces(mut self, radii: impl IntoIterator<Item = f64>) -> Self {
        self.interfaces.extend(radii);
        self.interfaces.retain(|r| *r > 0.0 && *r < 1.0);
        self.interfaces.sort_by(|a, b| a.total_cmp(b));
        self.interfaces.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
        self
    }

    /// Same rules with every order roughly doubled.
    pub fn refined(&self) -> Self {
        let mut s = self.clone();
        s.radial_order *= 2;
        s.polar_order *= 2;
        s.azimuth_order *= 2;
        s
    }

    fn coarsened(&self) -> Self {
        let mut s = self.clone();
        s.radial_order = (s.radial_order / 2).max(2);
        s.polar_order = (s.polar_order / 2).max(2);
        s.azimuth_order = (s.azimuth_order / 2).max(3);
        s
    }
}

/// A point where the integrand may be singular, with the leading exponent of
/// `int_{B(p, eps)} f ~ eps^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPoint {
    pub location: Vec3,
    pub exponent: Option<f64>,
}

impl SingularPoint {
    pub fn new(location: Vec3) -> Self {
        SingularPoint { location, exponent: None }
    }

    pub fn with_exponent(location: Vec3, exponent: f64) -> Self {
        SingularPoint { location, exponent: Some(exponent) }
    }
}

impl From<Vec3> for SingularPoint {
    fn from(location: Vec3) -> Self {
        SingularPoint::new(location)
    }
}

/// Result of a ladder-extrapolated integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    /// `extrapolation_error + discretization_error`.
    pub error: f64,
    /// Spread of the last two extrapolants, summed over singular centres.
    pub extrapolation_error: f64,
    /// Difference against the same computation with halved orders.
    pub discretization_error: f64,
}

/// Extrapolation of a ladder of truncated values.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolated {
    pub value: f64,
    pub error: f64,
    pub extrapolants: Vec<f64>,
}

/// Extrapolate `values[k] = V(radii[k])` to radius zero with a sliding window of
/// `terms + 1` rungs. The returned error is the spread of the last two windows.
pub fn extrapolate(radii: &[f64], values: &[f64], policy: &ExtrapolationPolicy) -> Result<Extrapolated> {
    if radii.len() != values.len() || radii.is_empty() {
        return Err(Error::invalid("extrapolation needs matching, non-empty ladders"));
    }
    let terms = policy.terms.min(radii.len() - 1);
    if terms == 0 {
        return Ok(Extrapolated {
            value: values[0],
            error: f64::INFINITY,
            extrapolants: vec![values[0]],
        });
    }
    let theta = policy.exponent_hint;
    let basis = |e: f64, m: usize| -> f64 {
        match (m, policy.log_correction) {
            (0, _) => e.powf(theta),
            (_, true) => e.powf(theta) * e.ln(),
            (m, false) => e.powf(theta + m as f64 * policy.exponent_step),
        }
    };
    let width = terms + 1;
    let mut extrapolants = Vec::new();
    for start in 0..=(radii.len() - width) {
        let rows: Vec<(Vec<f64>, f64)> = (start..start + width)
            .map(|k| {
                let mut row = vec![1.0];
                row.extend((0..terms).map(|m| basis(radii[k], m)));
                (row, values[k])
            })
            .collect();
        extrapolants.push(solve_small(rows)?);
    }
    let n = extrapolants.len();
    let value = extrapolants[n - 1];
    let error = if n >= 2 {
        (extrapolants[n - 1] - extrapolants[n - 2]).abs()
    } else {
        (value - values[values.len() - 1]).abs()
    };
    Ok(Extrapolated { value, error, extrapolants })
}

/// Gaussian elimination with partial pivoting; returns the first unknown.
fn solve_small(mut rows: Vec<(Vec<f64>, f64)>) -> Result<f64> {
    let n = rows.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| rows[a].0[col].abs().total_cmp(&rows[b].0[col].abs()))
            .unwrap();
        rows.swap(col, pivot);
        let p = rows[col].0[col];
        if p.abs() < 1e-300 {
            return Err(Error::invalid("degenerate extrapolation ladder"));
        }
        for r in col + 1..n {
            let f = rows[r].0[col] / p;
            for c in col..n {
                rows[r].0[c] -= f * rows[col].0[c];
            }
            rows[r].1 -= f * rows[col].1;
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = rows[r].1;
        for c in r + 1..n {
            s -= rows[r].0[c] * x[c];
        }
        x[r] = s / rows[r].0[r];
    }
    Ok(x[0])
}

/// Angular product rule about an axis, optionally split into polar panels.
struct AngularRule {
    /// (unit direction, weight) pairs; weights sum to `4 pi`.
    nodes: Vec<(Vec3, f64)>,
}

impl AngularRule {
    fn new(axis: Vec3, polar_breaks: &[f64], polar_order: usize, azimuth_order: usize) -> Self {
        let axis = axis.unit().unwrap_or(Vec3::E3);
        let (t1, t2) = axis.orthonormal_complement();
        let (gx, gw) = gauss_legendre(polar_order);
        let mut breaks = vec![0.0];
        breaks.extend(polar_breaks.iter().copied().filter(|t| *t > 0.0 && *t < PI));
        breaks.push(PI);
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup();
        let dphi = 2.0 * PI / azimuth_order as f64;
        let mut nodes = Vec::with_capacity((breaks.len() - 1) * polar_order * azimuth_order);
        for w in breaks.windows(2) {
            // u = cos(theta) over [cos(theta_hi), cos(theta_lo)]
            let (u_lo, u_hi) = (w[1].cos(), w[0].cos());
            let half = 0.5 * (u_hi - u_lo);
            let mid = 0.5 * (u_hi + u_lo);
            for (x, wt) in gx.iter().zip(&gw) {
                let u = mid + half * x;
                let s = (1.0 - u * u).max(0.0).sqrt();
                for k in 0..azimuth_order {
                    let phi = (k as f64 + 0.5) * dphi;
                    let dir = axis * u + t1 * (s * phi.cos()) + t2 * (s * phi.sin());
                    nodes.push((dir, wt * half * dphi));
                }
            }
        }
        AngularRule { nodes }
    }
}

/// Integral of `f` over the shell `a < |x - center| < b` with the given angular rule.
/// Returns `(int f, int |f|)` over the shell.
fn shell_integral<F>(f: &F, center: Vec3, a: f64, b: f64, radial_order: usize, ang: &AngularRule) -> Result<(f64, f64)>
where
    F: Fn(Vec3) -> Result<f64> + Sync,
{
    let (gx, gw) = gauss_legendre(radial_order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut terms = Vec::with_capacity(radial_order * ang.nodes.len());
    for (x, w) in gx.iter().zip(&gw) {
        let r = mid + half * x;
        let rw = w * half * r * r;
        for (dir, aw) in &ang.nodes {
            let v = f(center + *dir * r)?;
            terms.push(v * rw * aw);
        }
    }
    Ok((kahan_sum(terms.iter().copied()), kahan_sum(terms.iter().map(|t| t.abs()))))
}

/// Radial panel breakpoints covering `[inner, outer]`: dyadic toward `inner`,
/// split `per_octave` times, plus every extra break inside the range.
fn radial_breaks(inner: f64, outer: f64, dyadic: bool, per_octave: usize, extra: &[f64]) -> Vec<f64> {
    let mut b = vec![outer];
    if dyadic {
        let mut r = outer;
        while r * 0.5 > inner * (1.0 + 1e-12) {
            r *= 0.5;
            b.push(r);
        }
    }
    b.push(inner);
    b.extend(extra.iter().copied().filter(|x| *x > inner && *x < outer));
    b.sort_by(|x, y| y.total_cmp(x));
    b.dedup_by(|x, y| (*x - *y).abs() <= 1e-13 * y.abs().max(1e-300));
    if per_octave > 1 {
        let mut refined = Vec::with_capacity(b.len() * per_octave);
        for w in b.windows(2) {
            let (hi, lo) = (w[0], w[1]);
            for k in 0..per_octave {
                let t = k as f64 / per_octave as f64;
                // geometric subdivision when the panel stays away from zero
                let r = if lo > 0.0 { hi * (lo / hi).powf(t) } else { hi + (lo - hi) * t };
                refined.push(r);
            }
        }
        refined.push(*b.last().unwrap());
        b = refined;
    }
    b
}

struct Piece {
    center: Vec3,
    radius: f64,
    axis: Vec3,
    polar_breaks: Vec<f64>,
    extra_breaks: Vec<f64>,
    exponent: f64,
    singular: bool,
}

struct Cutoff {
    center: Vec3,
    radius: f64,
}

impl Cutoff {
    /// 1 on `B(c, r/2)`, 0 outside `B(c, r)`, smooth in between.
    fn weight(&self, x: Vec3) -> f64 {
        let d = (x - self.center).norm();
        smooth_transition((self.radius - d) / (0.5 * self.radius)).0
    }
}

/// Integrates `f` over `B` (or `B` minus a shrinking ball around each
/// singular point, extrapolated).
///
/// The origin is treated as singular only if it appears in `singular_points`.
/// `spec.interfaces` are honoured as radial panel breaks. A point whose
/// exponent is unset uses `spec.extrapolation.exponent_hint`.
///
/// Fails with [`Error::NonConvergence`] when the last two extrapolants of a
/// piece differ by more than `100 * tolerance * max(|value|, int |f|)`.
pub fn integrate_ball<F>(f: F, spec: &QuadratureSpec, singular_points: &[SingularPoint]) -> Result<Integral>
where
    F: Fn(Vec3) -> Result<f64> + Sync,
{
    spec.validate()?;
    let fine = ball_pieces(&f, spec, singular_points)?;
    let coarse = ball_pieces(&f, &spec.coarsened(), singular_points)?;
    let mut value = 0.0;
    let mut ex_err = 0.0;
    let mut pieces_coarse = 0.0;
    for ((fine_piece, scale), (coarse_piece, _)) in fine.iter().zip(&coarse) {
        let threshold = 100.0 * spec.tolerance * fine_piece.value.abs().max(*scale);
        if fine_piece.error > threshold {
            return Err(Error::NonConvergence {
                extrapolants: fine_piece.extrapolants.clone(),
                spread: fine_piece.error,
                threshold,
            });
        }
        value += fine_piece.value;
        ex_err += fine_piece.error;
        pieces_coarse += coarse_piece.value;
    }
    let disc = (value - pieces_coarse).abs();
    Ok(Integral {
        value,
        error: ex_err + disc,
        extrapolation_error: ex_err,
        discretization_error: disc,
    })
}

/// Per-piece extrapolations paired with `int |f|` over the piece, the scale of the convergence threshold.
fn ball_pieces<F>(f: &F, spec: &QuadratureSpec, singular_points: &[SingularPoint]) -> Result<Vec<(Extrapolated, f64)>>
where
    F: Fn(Vec3) -> Result<f64> + Sync,
{
    let origin_singular = singular_points.iter().any(|p| p.location.norm() < 1e-14);
    let mut origin_exponent = spec.extrapolation.exponent_hint;
    let mut secondary: Vec<SingularPoint> = Vec::new();
    for p in singular_points {
        if p.location.norm() < 1e-14 {
            if let Some(e) = p.exponent {
                origin_exponent = e;
            }
            continue;
        }
        if p.location.norm() >= 1.0 {
            return Err(Error::invalid(format!("singular point {:?} outside the ball", p.location)));
        }
        if !secondary.iter().any(|q| (q.location - p.location).norm() < 1e-14) {
            secondary.push(*p);
        }
    }

    // patch radii: at most half the distance to the origin, the boundary and other points
    let mut cutoffs = Vec::new();
    let mut pieces = Vec::new();
    for (i, p) in secondary.iter().enumerate() {
        let loc = p.location;
        let mut r = 0.5 * loc.norm().min(1.0 - loc.norm());
        for (j, q) in secondary.iter().enumerate() {
            if i != j {
                r = r.min(0.5 * (q.location - loc).norm());
            }
        }
        cutoffs.push(Cutoff { center: loc, radius: r });
        pieces.push(Piece {
            center: loc,
            radius: r,
            axis: loc,
            polar_breaks: Vec::new(),
            extra_breaks: Vec::new(),
            exponent: p.exponent.unwrap_or(spec.extrapolation.exponent_hint),
            singular: true,
        });
    }

    let mut origin_radius: f64 = 1.0;
    if origin_singular {
        for c in &cutoffs {
            origin_radius = origin_radius.min(0.5 * c.center.norm());
        }
        for &r in &spec.interfaces {
            origin_radius = origin_radius.min(0.5 * r);
        }
    }
    let mut extra = spec.interfaces.clone();
    let mut polar_breaks = Vec::new();
    let axis = cutoffs.first().map(|c| c.center).unwrap_or(Vec3::E3);
    for c in &cutoffs {
        // geometric grading away from the patch, in radius and in polar angle
        let d = c.center.norm();
        extra.push(d);
        let mut s = 0.5 * c.radius;
        while s < 1.0 {
            extra.extend([d - s, d + s, d - 1.5 * s, d + 1.5 * s]);
            s *= 2.0;
        }
        if (c.center.unit().unwrap() - axis.unit().unwrap()).norm() < 1e-12 {
            let mut a = 0.5 * (c.radius / d).min(1.0).asin();
            while a < PI {
                polar_breaks.extend([a, 1.5 * a]);
                a *= 2.0;
            }
        }
    }
    extra.push(origin_radius);
    pieces.insert(
        0,
        Piece {
            center: Vec3::ZERO,
            radius: 1.0,
            axis,
            polar_breaks,
            extra_breaks: extra,
            exponent: origin_exponent,
            singular: origin_singular,
        },
    );

    let ladder = &spec.exclusion_ladder;
    let mut out = Vec::with_capacity(pieces.len());
    for (k, piece) in pieces.iter().enumerate() {
        let scale = if k == 0 { origin_radius } else { piece.radius };
        let rung_radii: Vec<f64> = ladder.iter().map(|e| e * scale).collect();
        let inner = if piece.singular { *rung_radii.last().unwrap() } else { 0.0 };
        let mut breaks_extra = piece.extra_breaks.clone();
        if piece.singular {
            breaks_extra.extend(rung_radii.iter().copied());
        }
        let breaks = radial_breaks(inner, piece.radius, piece.singular, spec.panels_per_octave, &breaks_extra);
        let ang = AngularRule::new(piece.axis, &piece.polar_breaks, spec.polar_order, spec.azimuth_order);
        let weighted = |x: Vec3| -> Result<f64> {
            let w = if k == 0 {
                1.0 - cutoffs.iter().map(|c| c.weight(x)).sum::<f64>()
            } else {
                cutoffs[k - 1].weight(x)
            };
            if w == 0.0 {
                Ok(0.0)
            } else {
                Ok(w * f(x)?)
            }
        };
        let panels: Vec<(f64, f64)> = breaks.windows(2).map(|w| (w[1], w[0])).collect();
        let sums: Vec<(f64, f64)> = panels
            .par_iter()
            .map(|&(a, b)| shell_integral(&weighted, piece.center, a, b, spec.radial_order, &ang))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = sums.iter().map(|s| s.0).collect();
        let magnitude = pairwise_sum(&sums.iter().map(|s| s.1).collect::<Vec<_>>());
        if !piece.singular {
            let v = pairwise_sum(&values);
            out.push((Extrapolated { value: v, error: 0.0, extrapolants: vec![v] }, magnitude.max(1e-300)));
            continue;
        }
        // truncated integral for each rung: all panels lying outside that rung
        let truncated: Vec<f64> = rung_radii
            .iter()
            .map(|&eps| {
                let kept: Vec<f64> = panels
                    .iter()
                    .zip(&values)
                    .filter(|((a, _), _)| *a >= eps * (1.0 - 1e-12))
                    .map(|(_, v)| *v)
                    .collect();
                pairwise_sum(&kept)
            })
            .collect();
        let policy = ExtrapolationPolicy { exponent_hint: piece.exponent, ..spec.extrapolation.clone() };
        let ex = extrapolate(&rung_radii, &truncated, &policy)?;
        out.push((ex, magnitude.max(1e-300)));
    }
    Ok(out)
}

/// Integral over the annulus `a < |x - center| < b`, `0 <= a < b`, without extrapolation.
pub fn integrate_annulus<F>(f: F, center: Vec3, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(Vec3) -> Result<f64> + Sync,
{
    spec.validate()?;
    if !(a >= 0.0 && b > a) {
        return Err(Error::invalid(format!("annulus needs 0 <= a < b, got ({a}, {b})")));
    }
    let extra: Vec<f64> = spec
        .interfaces
        .iter()
        .map(|r| (r - center.norm()).abs())
        .chain(spec.interfaces.iter().map(|r| r + center.norm()))
        .collect();
    let breaks = radial_breaks(a, b, a > 0.0, spec.panels_per_octave, &extra);
    let ang = AngularRule::new(Vec3::E3, &[], spec.polar_order, spec.azimuth_order);
    let values: Vec<f64> = breaks
        .windows(2)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|w| shell_integral(&f, center, w[1], w[0], spec.radial_order, &ang).map(|s| s.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&values))
}

/// Surface integral over the sphere `|y - center| = radius`, which must lie in the closed unit ball.
pub fn integrate_sphere<F>(f: F, center: Vec3, radius: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(Vec3) -> Result<f64> + Sync,
{
    if !(radius > 0.0) {
        return Err(Error::invalid("sphere radius must be positive"));
    }
    if center.norm() + radius > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "sphere of radius {radius} about {center:?} is not contained in the unit ball"
        )));
    }
    integrate_unit_sphere(|y| f(center + y * radius), spec).map(|v| v * radius * radius)
}

/// Integral over the unit sphere `S^2` with the product rule of `spec`.
pub fn integrate_unit_sphere<F>(f: F, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(Vec3) -> Result<f64> + Sync,
{
    let ang = AngularRule::new(Vec3::E3, &[], spec.polar_order, spec.azimuth_order);
    let terms = ang
        .nodes
        .iter()
        .map(|(d, w)| f(*d).map(|v| v * w))
        .collect::<Result<Vec<_>>>()?;
    Ok(kahan_sum(terms))
}

/// Least-squares power law `y = C x^slope` fitted in log-log coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    /// `ln C`.
    pub intercept: f64,
    pub rms_residual: f64,
    pub max_residual: f64,
}

pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("fit_rate: ladders have different lengths"));
    }
    if xs.len() < 3 {
        return Err(Error::invalid("fit_rate needs at least three points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("fit_rate needs strictly positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit_rate: abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - (intercept + slope * x)).collect();
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let max = res.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(RateFit { slope, intercept, rms_residual: rms, max_residual: max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(f: impl Fn(Vec3) -> f64 + Sync) -> impl Fn(Vec3) -> Result<f64> + Sync {
        move |x| Ok(f(x))
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..20 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn ball_volume() {
        let spec = QuadratureSpec::default();
        let v = integrate_ball(ok(|_| 1.0), &spec, &[]).unwrap();
        assert!((v.value - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_power_with_origin_ladder() {
        let spec = QuadratureSpec::default().with_exponent(0.5);
        let v = integrate_ball(ok(|x| x.norm().powf(-2.5)), &spec, &[Vec3::ZERO.into()]).unwrap();
        assert!((v.value - 8.0 * PI).abs() < 1e-6 * 8.0 * PI, "{v:?}");
    }

    #[test]
    fn sphere_area_and_odd_symmetry() {
        let spec = QuadratureSpec::default();
        let c = Vec3::new(0.1, -0.2, 0.3);
        let a = integrate_sphere(ok(|_| 1.0), c, 0.25, &spec).unwrap();
        assert!((a - 4.0 * PI * 0.0625).abs() < 1e-12);
        let odd = integrate_sphere(ok(move |y| ((y - c) / 0.25).dot(Vec3::E1)), c, 0.25, &spec).unwrap();
        assert!(odd.abs() < 1e-12);
        assert!(integrate_sphere(ok(|_| 1.0), Vec3::new(0.9, 0.0, 0.0), 0.2, &spec).is_err());
    }

    #[test]
    fn extrapolation_recovers_power_tail() {
        let radii = [0.02, 0.01, 0.005, 0.0025];
        let values: Vec<f64> = radii.iter().map(|e: &f64| 3.0 - 2.0 * e.sqrt() + 0.7 * e.powf(1.5)).collect();
        let ex = extrapolate(&radii, &values, &ExtrapolationPolicy::default()).unwrap();
        assert!((ex.value - 3.0).abs() < 1e-12);
        assert!(ex.error < 1e-12);
        let logs: Vec<f64> = radii.iter().map(|e: &f64| 1.0 + e.sqrt() * (2.0 + 0.5 * e.ln())).collect();
        let policy = ExtrapolationPolicy { log_correction: true, ..Default::default() };
        let ex = extrapolate(&radii, &logs, &policy).unwrap();
        assert!((ex.value - 1.0).abs() < 1e-11);
    }

    #[test]
    fn fit_rate_exact_power_law() {
        let xs = [0.1, 0.05, 0.025, 0.0125];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.5)).collect();
        let fit = fit_rate(&xs, &ys).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0_f64.ln()).abs() < 1e-12);
        assert!(fit_rate(&xs, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_rate(&xs[..2], &ys[..2]).is_err());
    }

    #[test]
    fn ladder_validation() {
        let s = QuadratureSpec { exclusion_ladder: vec![0.01, 0.02], ..QuadratureSpec::default() };
        assert!(s.validate().is_err());
        assert!(QuadratureSpec::preset("slow").is_err());
        for p in QuadratureSpec::PRESETS {
            QuadratureSpec::preset(p).unwrap().validate().unwrap();
        }
    }
}
