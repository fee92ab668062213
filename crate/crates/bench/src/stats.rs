use crate::BenchError;

/// Samples dropped from each end: `⌊n·(1−f)/2⌋`.
///
/// `1 − 0.8` is not exact in binary floating point, so `n·(1−f)/2` can land
/// a hair below an integer it mathematically equals; a relative epsilon
/// keeps e.g. n = 10, f = 0.8 at one sample per side instead of zero.
pub fn trim_per_side(n: usize, keep_fraction: f64) -> usize {
    let x = n as f64 * (1.0 - keep_fraction) / 2.0;
    let trimmed = (x + 1e-9 * x.max(1.0)).floor() as usize;
    trimmed.min(n.saturating_sub(1) / 2)
}

/// Mean of the central `keep_fraction` of `samples`.
pub fn trimmed_mean(samples: &[f64], keep_fraction: f64) -> Result<f64, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(BenchError::InvalidScenario(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = trim_per_side(sorted.len(), keep_fraction);
    let kept = &sorted[k..sorted.len() - k];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_ten() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(trimmed_mean(&s, 0.8), Ok(5.5));
    }

    #[test]
    fn single_and_constant() {
        assert_eq!(trimmed_mean(&[42.0], 0.8), Ok(42.0));
        assert_eq!(trimmed_mean(&[3.0; 17], 0.8), Ok(3.0));
    }

    #[test]
    fn thousand_keeps_eight_hundred() {
        assert_eq!(trim_per_side(1000, 0.8), 100);
        assert_eq!(trim_per_side(10, 0.8), 1);
        assert_eq!(trim_per_side(1, 0.8), 0);
        assert_eq!(trim_per_side(7, 1.0), 0);
    }

    #[test]
    fn errors() {
        assert_eq!(trimmed_mean(&[], 0.8), Err(BenchError::EmptyInput));
        assert!(trimmed_mean(&[1.0], 0.0).is_err());
    }
}
