//! Errors against oracles, cross-sampler comparisons, and coverage
//! statistics behind the tabular outputs.

use crate::linalg::SparseOperator;

/// A relative error, or an absolute one when the reference norm vanishes.
#[derive(Clone, Copy, Debug)]
pub struct ErrorValue {
    pub value: f64,
    pub is_absolute: bool,
}

/// Relative discrete L2 error `sqrt((e, M e) / (u, M u))` with
/// `e = sample - reference`; falls back to the absolute error (flagged)
/// when the reference norm is zero.
pub fn l2_error(sample: &[f64], reference: &[f64], mass: &SparseOperator) -> ErrorValue {
    assert_eq!(sample.len(), reference.len(), "dof spaces must match");
    let e: Vec<f64> = sample.iter().zip(reference).map(|(a, b)| a - b).collect();
    let num = mass.form(&e, &e).max(0.0).sqrt();
    let den = mass.form(reference, reference).max(0.0).sqrt();
    if den == 0.0 {
        ErrorValue {
            value: num,
            is_absolute: true,
        }
    } else {
        ErrorValue {
            value: num / den,
            is_absolute: false,
        }
    }
}

/// Pearson correlation of two frequency vectors over a common candidate
/// enumeration; NaN (with a warning) when either vector has zero variance.
pub fn frequency_correlation(freq_a: &[f64], freq_b: &[f64]) -> f64 {
    assert_eq!(freq_a.len(), freq_b.len(), "frequency vectors must align");
    match crate::bayes::pearson(freq_a, freq_b) {
        Some(c) => c,
        None => {
            eprintln!("warning: frequency correlation undefined (zero variance)");
            f64::NAN
        }
    }
}

/// Fraction of pixels where `|mean - reference| <= k std` for k = 1, 2, 3.
pub fn coverage_check(mean: &[f64], std: &[f64], reference: &[f64]) -> [f64; 3] {
    assert_eq!(mean.len(), std.len());
    assert_eq!(mean.len(), reference.len());
    let n = mean.len() as f64;
    let mut out = [0.0; 3];
    for (k, frac) in out.iter_mut().enumerate() {
        let kf = (k + 1) as f64;
        let hits = mean
            .iter()
            .zip(std)
            .zip(reference)
            .filter(|((m, s), r)| (*m - *r).abs() <= kf * **s)
            .count();
        *frac = hits as f64 / n;
    }
    out
}

/// Trailing moving average of a residual trace, used by the stabilization
/// diagnostics.
pub fn moving_average(trace: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    (0..trace.len())
        .map(|i| {
            let lo = i.saturating_sub(window - 1);
            let s: f64 = trace[lo..=i].iter().sum();
            s / (i - lo + 1) as f64
        })
        .collect()
}
