//! Absolute-error loss, its subgradient, and the exact 1-D line search.

use super::GbdtError;

fn check_lengths(a: usize, b: usize) -> Result<(), GbdtError> {
    if a != b {
        return Err(GbdtError::LengthMismatch(a, b));
    }
    Ok(())
}

/// Mean absolute error `(1/T) Σ |target − prediction|`.
pub fn mae_loss(predictions: &[f64], targets: &[f64]) -> Result<f64, GbdtError> {
    check_lengths(predictions.len(), targets.len())?;
    if predictions.is_empty() {
        return Err(GbdtError::EmptyInput);
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Negative subgradient of the absolute loss with respect to the
/// prediction: `−sign(prediction − target)`, and 0 at ties.
pub fn loss_negative_gradient(predictions: &[f64], targets: &[f64]) -> Result<Vec<f64>, GbdtError> {
    check_lengths(predictions.len(), targets.len())?;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| negative_gradient(*p, *t))
        .collect())
}

pub(crate) fn negative_gradient(prediction: f64, target: f64) -> f64 {
    let d = prediction - target;
    if d > 0.0 {
        -1.0
    } else if d < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Exact minimizer of `Σ |target − (current + α·tree)|` over α.
///
/// The objective is convex and piecewise linear with breakpoints
/// `(target − current)/tree` weighted by `|tree|`, so the minimizers are the
/// weighted medians. When they form an interval the point closest to zero
/// is returned. All-zero `tree_preds` give 0.
pub fn line_search_alpha(
    current_preds: &[f64],
    tree_preds: &[f64],
    targets: &[f64],
) -> Result<f64, GbdtError> {
    check_lengths(current_preds.len(), tree_preds.len())?;
    check_lengths(current_preds.len(), targets.len())?;
    let mut points: Vec<(f64, f64)> = current_preds
        .iter()
        .zip(tree_preds)
        .zip(targets)
        .filter(|((_, h), _)| **h != 0.0)
        .map(|((f, h), y)| ((y - f) / h, h.abs()))
        .collect();
    if points.is_empty() {
        return Ok(0.0);
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = points.iter().map(|p| p.1).sum();
    let half = total / 2.0;

    // Walk distinct breakpoints; the right derivative at b is
    // 2·W(≤ b) − W, the left derivative 2·W(< b) − W.
    let mut below = 0.0;
    let mut i = 0;
    while i < points.len() {
        let b = points[i].0;
        let mut at = 0.0;
        while i < points.len() && points[i].0 == b {
            at += points[i].1;
            i += 1;
        }
        let upto = below + at;
        if upto > half {
            // derivative changes sign at b: unique minimizer
            return Ok(b);
        }
        if upto == half {
            // flat between b and the next breakpoint
            let next = points.get(i).map_or(b, |p| p.0);
            return Ok(closest_to_zero(b, next));
        }
        below = upto;
    }
    Ok(points.last().unwrap().0)
}

fn closest_to_zero(lo: f64, hi: f64) -> f64 {
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else if lo > 0.0 {
        lo
    } else {
        hi
    }
}

/// Median, averaging the two central values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
