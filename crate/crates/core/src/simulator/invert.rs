use crate::error::{invalid, Result};
use crate::estimator::eval_monomial;

fn derivative(beta: &[f64], n: f64) -> f64 {
    beta.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (m, b)| acc * n + m as f64 * b)
}

const MONOTONE_SAMPLES: usize = 257;

/// Solves `sum_m beta_m n^m = target` for the reading `n`.
///
/// The bracket grows geometrically around the linear guess until it contains
/// the target; the polynomial must be strictly increasing across it.
/// Bisection keeps the iterate inside the bracket and Newton steps refine it.
pub fn invert_response(target: f64, beta: &[f64]) -> Result<f64> {
    if beta.len() < 2 || !(beta[1] > 0.0) {
        return invalid("response polynomial needs a positive linear coefficient");
    }
    if !target.is_finite() {
        return invalid("target flux is not finite");
    }
    let f = |n: f64| eval_monomial(beta, n) - target;

    let guess = (target - beta[0]) / beta[1];
    let mut width = 1e-3 * (1.0 + guess.abs());
    let (mut lo, mut hi) = (guess - width, guess + width);
    let mut expansions = 0;
    while f(lo) > 0.0 || f(hi) < 0.0 {
        width *= 2.0;
        lo = guess - width;
        hi = guess + width;
        expansions += 1;
        if expansions > 200 {
            return invalid("could not bracket the root of the response polynomial");
        }
    }
    for s in 0..MONOTONE_SAMPLES {
        let n = lo + (hi - lo) * s as f64 / (MONOTONE_SAMPLES - 1) as f64;
        if !(derivative(beta, n) > 0.0) {
            return invalid(format!(
                "response polynomial is not increasing on [{lo}, {hi}]"
            ));
        }
    }

    let mut n = guess.clamp(lo, hi);
    for _ in 0..200 {
        let fn_ = f(n);
        if fn_ == 0.0 {
            return Ok(n);
        }
        if fn_ < 0.0 {
            lo = n;
        } else {
            hi = n;
        }
        let newton = n - fn_ / derivative(beta, n);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - n).abs() <= 4.0 * f64::EPSILON * n.abs().max(1e-300) || hi - lo <= f64::EPSILON * n.abs() {
            n = next;
            break;
        }
        n = next;
    }
    Ok(n)
}
