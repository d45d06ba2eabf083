//! Legendre polynomials and the affine map between flux and `[-1, 1]`.

use crate::error::{invalid, Result};

/// Slack allowed beyond `[-1, 1]` before an argument is rejected.
const DOMAIN_SLACK: f64 = 1e-12;

/// Evaluates the Legendre polynomial `P_m(x)` with the Bonnet recurrence.
///
/// Arguments within `1e-12` of the interval are clamped onto `[-1, 1]`.
pub fn legendre_eval(m: i32, x: f64) -> Result<f64> {
    if m < 0 {
        return invalid(format!("Legendre order must be non-negative, got {m}"));
    }
    if !x.is_finite() || x.abs() > 1.0 + DOMAIN_SLACK {
        return invalid(format!("Legendre argument {x} outside [-1, 1]"));
    }
    let x = x.clamp(-1.0, 1.0);
    Ok(legendre_unchecked(m as usize, x))
}

/// `P_m(x)` without domain checks. The polynomial is evaluated as-is outside
/// `[-1, 1]`.
pub fn legendre_unchecked(m: usize, x: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for k in 1..m {
                let kf = k as f64;
                let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Fills `values[m] = P_m(x)` for `m = 0..values.len()`.
pub fn legendre_series(x: f64, values: &mut [f64]) {
    let len = values.len();
    if len == 0 {
        return;
    }
    values[0] = 1.0;
    if len > 1 {
        values[1] = x;
    }
    for k in 1..len.saturating_sub(1) {
        let kf = k as f64;
        values[k + 1] = ((2.0 * kf + 1.0) * x * values[k] - kf * values[k - 1]) / (kf + 1.0);
    }
}

/// Fills `values[m] = P_m(x)` and `derivs[m] = P_m'(x)`.
///
/// Uses `P'_{m+1} = (m + 1) P_m + x P'_m`, which stays finite at `x = ±1`.
pub fn legendre_series_with_derivative(x: f64, values: &mut [f64], derivs: &mut [f64]) {
    debug_assert_eq!(values.len(), derivs.len());
    legendre_series(x, values);
    if derivs.is_empty() {
        return;
    }
    derivs[0] = 0.0;
    for k in 0..derivs.len() - 1 {
        derivs[k + 1] = (k as f64 + 1.0) * values[k] + x * derivs[k];
    }
}

/// Maps a flux onto the Legendre interval: `2 phi / phi_max - 1`.
#[inline]
pub fn scale_to_unit(phi: f64, phi_max: f64) -> f64 {
    2.0 * phi / phi_max - 1.0
}

/// Inverse of [`scale_to_unit`].
#[inline]
pub fn scale_from_unit(u: f64, phi_max: f64) -> f64 {
    (u + 1.0) * phi_max / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn low_orders() {
        assert_eq!(legendre_eval(0, 0.37).unwrap(), 1.0);
        assert_eq!(legendre_eval(1, -0.5).unwrap(), -0.5);
        assert_relative_eq!(legendre_eval(2, 0.5).unwrap(), -0.125, epsilon = 1e-15);
        assert_relative_eq!(legendre_eval(5, 1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_negative_order_and_far_arguments() {
        assert!(legendre_eval(-1, 0.0).is_err());
        assert!(legendre_eval(2, 1.1).is_err());
        assert!(legendre_eval(2, f64::NAN).is_err());
        // within slack: clamped
        assert_eq!(legendre_eval(3, 1.0 + 1e-13).unwrap(), 1.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut v = [0.0; 9];
        let mut d = [0.0; 9];
        for &x in &[-0.9, -0.3, 0.0, 0.41, 0.77] {
            legendre_series_with_derivative(x, &mut v, &mut d);
            for m in 0..9 {
                let h = 1e-6;
                let fd = (legendre_unchecked(m, x + h) - legendre_unchecked(m, x - h)) / (2.0 * h);
                assert_relative_eq!(d[m], fd, epsilon = 1e-7);
            }
        }
        // P_m'(1) = m (m + 1) / 2
        legendre_series_with_derivative(1.0, &mut v, &mut d);
        for (m, dm) in d.iter().enumerate() {
            assert_relative_eq!(*dm, (m * (m + 1)) as f64 / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_map_endpoints() {
        assert_eq!(scale_to_unit(0.0, 1.0), -1.0);
        assert_eq!(scale_to_unit(1.0, 1.0), 1.0);
        assert_eq!(scale_to_unit(0.5, 1.0), 0.0);
    }

    proptest! {
        #[test]
        fn unit_map_round_trip(phi in 1e-6f64..1e6, phi_max in 1e-3f64..1e3) {
            let back = scale_from_unit(scale_to_unit(phi, phi_max), phi_max);
            prop_assert!(((back - phi) / phi).abs() < 1e-12);
        }

        #[test]
        fn series_agrees_with_single(x in -1.0f64..1.0) {
            let mut v = [0.0; 21];
            legendre_series(x, &mut v);
            for (m, vm) in v.iter().enumerate() {
                prop_assert!((vm - legendre_unchecked(m, x)).abs() < 1e-14);
            }
        }
    }
}
