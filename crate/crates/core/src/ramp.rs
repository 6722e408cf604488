//! One-dimensional transition profiles `s: [0, 1] -> [0, 1]` with `s(0) = 0`, `s(1) = 1`.
//!
//! Each function returns `(s(t), s'(t))` and clamps `t` outside `[0, 1]`.

/// Quintic smoothstep `6t^5 - 15t^4 + 10t^3`. C2, maximum slope 15/8.
pub fn smoothstep5(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let t2 = t * t;
    let v = t2 * t * (10.0 + t * (-15.0 + 6.0 * t));
    let d = 30.0 * t2 * (1.0 - t) * (1.0 - t);
    (v, d)
}

pub const SMOOTHSTEP5_MAX_SLOPE: f64 = 15.0 / 8.0;

const FLAT_NORM: f64 = 1.0 - 2.0 / 9.0 + 1.0 / 17.0;

/// C2 polynomial ramp with slope proportional to `(1 - u^8)^2`, `u = 2t - 1`.
///
/// Nearly linear in the middle, so its maximum slope is only [`FLAT_RAMP_MAX_SLOPE`].
pub fn flat_ramp(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let u = 2.0 * t - 1.0;
    let u8 = u.powi(8);
    let p = |v: f64| v - 2.0 * v.powi(9) / 9.0 + v.powi(17) / 17.0;
    let v = 0.5 * (p(u) + FLAT_NORM) / FLAT_NORM;
    let d = (1.0 - u8) * (1.0 - u8) / FLAT_NORM;
    (v, d)
}

pub const FLAT_RAMP_MAX_SLOPE: f64 = 1.0 / FLAT_NORM;

/// C-infinity transition `e(t) / (e(t) + e(1 - t))` with `e(t) = exp(-1/t)`.
pub fn smooth_transition(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    let da = a / (t * t);
    let db = -b / ((1.0 - t) * (1.0 - t));
    let s = a + b;
    (a / s, (da * b - a * db) / (s * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(profile: fn(f64) -> (f64, f64), max_slope: Option<f64>) {
        assert_eq!(profile(0.0).0, 0.0);
        assert_eq!(profile(1.0).0, 1.0);
        let mut slope = 0.0_f64;
        for k in 1..1000 {
            let t = k as f64 / 1000.0;
            let h = 1e-6;
            let fd = (profile(t + h).0 - profile(t - h).0) / (2.0 * h);
            let (_, d) = profile(t);
            assert!((fd - d).abs() < 1e-6, "t={t} fd={fd} d={d}");
            slope = slope.max(d);
        }
        if let Some(m) = max_slope {
            assert!(slope <= m + 1e-12);
            assert!(slope > m - 1e-3);
        }
    }

    #[test]
    fn profiles_are_consistent() {
        check(smoothstep5, Some(SMOOTHSTEP5_MAX_SLOPE));
        check(flat_ramp, Some(FLAT_RAMP_MAX_SLOPE));
        check(smooth_transition, None);
        const { assert!(FLAT_RAMP_MAX_SLOPE < 1.2) };
        assert!((flat_ramp(0.5).0 - 0.5).abs() < 1e-15);
    }
}
