//! Error norms and least-squares convergence fits.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} values, {1} weights")]
    Length(usize, usize),
    #[error("volumes must be positive")]
    NonPositiveVolume,
    #[error("need at least two distinct points with positive values")]
    Degenerate,
}

/// `sqrt(Σ V e² / Σ V)`.
pub fn rms_v(errors: &[f64], volumes: &[f64]) -> Result<f64, MetricError> {
    if errors.is_empty() {
        return Err(MetricError::Empty);
    }
    if errors.len() != volumes.len() {
        return Err(MetricError::Length(errors.len(), volumes.len()));
    }
    if volumes.iter().any(|&v| !positive(v)) {
        return Err(MetricError::NonPositiveVolume);
    }
    let (num, den) = errors
        .iter()
        .zip(volumes)
        .fold((0.0, 0.0), |(n, d), (e, v)| (n + v * e * e, d + v));
    Ok((num / den).sqrt())
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::Length(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::Degenerate);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(MetricError::Degenerate);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Convergence order from `(h, error)` pairs: the slope of `log₂ e` against
/// `log₂(1/h)`, negated so that `e ∝ h²` gives 2.
pub fn fit_rate(series: &[(f64, f64)]) -> Result<f64, MetricError> {
    if series.iter().any(|&(h, e)| !positive(h) || !positive(e)) {
        return Err(MetricError::Degenerate);
    }
    let x: Vec<f64> = series.iter().map(|(h, _)| -h.log2()).collect();
    let y: Vec<f64> = series.iter().map(|(_, e)| e.log2()).collect();
    Ok(-fit_slope(&x, &y)?)
}

/// Per-iteration reduction factor fitted to a residual history, with
/// iteration numbers starting at 1.
pub fn fit_reduction_factor(history: &[f64]) -> Result<f64, MetricError> {
    if history.iter().any(|&r| !positive(r)) {
        return Err(MetricError::Degenerate);
    }
    let x: Vec<f64> = (1..=history.len()).map(|k| k as f64).collect();
    let y: Vec<f64> = history.iter().map(|r| r.log2()).collect();
    Ok(2f64.powf(-fit_slope(&x, &y)?))
}

/// `(r₀ / r_k)^(1/k)` for the final iterate.
pub fn mean_reduction_factor(initial: f64, history: &[f64]) -> Result<f64, MetricError> {
    let last = *history.last().ok_or(MetricError::Empty)?;
    if !positive(initial) || !positive(last) {
        return Err(MetricError::Degenerate);
    }
    Ok((initial / last).powf(1.0 / history.len() as f64))
}

/// First 1-based iteration whose value is within `factor` of the final one.
pub fn plateau_iteration(series: &[f64], factor: f64) -> Option<usize> {
    let last = *series.last()?;
    series.iter().position(|&v| v <= factor * last).map(|k| k + 1)
}

/// False for NaN as well as for non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rms_examples() {
        assert_abs_diff_eq!(rms_v(&[2.0; 5], &[0.3; 5]).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            rms_v(&[3.0, 4.0], &[1.0, 1.0]).unwrap(),
            12.5f64.sqrt(),
            epsilon = 1e-15
        );
        let a = rms_v(&[1.0, 5.0], &[1.0, 3.0]).unwrap();
        let b = rms_v(&[1.0, 5.0], &[2.0, 6.0]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        assert_eq!(rms_v(&[], &[]), Err(MetricError::Empty));
        assert_eq!(rms_v(&[1.0], &[0.0]), Err(MetricError::NonPositiveVolume));
    }

    #[test]
    fn rate_examples() {
        let s = [(1.0 / 16.0, 1.0), (1.0 / 32.0, 0.25), (1.0 / 64.0, 0.0625)];
        assert_abs_diff_eq!(fit_rate(&s).unwrap(), 2.0, epsilon = 1e-12);
        let scaled: Vec<_> = s.iter().map(|&(h, e)| (h, 7.0 * e)).collect();
        assert_abs_diff_eq!(fit_rate(&scaled).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(fit_rate(&s[..1]), Err(MetricError::Degenerate));
    }

    #[test]
    fn reference_uniform_series_fits_its_rate() {
        // Reference uniform-grid errors at root sizes 1/32 .. 1/256.
        let e = [
            1.054703933407143e-4,
            1.3958991175765144e-5,
            1.7944367734809868e-6,
            2.27440762767143e-7,
        ];
        let s: Vec<_> = e
            .iter()
            .enumerate()
            .map(|(k, &e)| (1.0 / (32u32 << k) as f64, e))
            .collect();
        assert!((fit_rate(&s).unwrap() - 2.95).abs() < 0.01);
    }

    #[test]
    fn reduction_factor_of_a_geometric_history() {
        let h: Vec<f64> = (1..=6).map(|k| 10f64.powi(-k)).collect();
        assert_abs_diff_eq!(fit_reduction_factor(&h).unwrap(), 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mean_reduction_factor(1.0, &h).unwrap(), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn plateau() {
        assert_eq!(plateau_iteration(&[5.0, 2.0, 1.05, 1.0], 1.1), Some(3));
        assert_eq!(plateau_iteration(&[], 1.1), None);
    }
}
