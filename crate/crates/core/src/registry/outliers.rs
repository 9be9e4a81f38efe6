//! Robust outlier marking: modified z-score 0.6745 (x - median) / MAD with
//! a 3.5 cut-off. Values are only marked, never removed.

pub const THRESHOLD: f64 = 3.5;
const CONSISTENCY: f64 = 0.6745;

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One flag per input value. With zero MAD every value that differs from
/// the median is flagged.
pub fn flag_outliers(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&deviations);
    values
        .iter()
        .map(|&x| {
            if mad == 0.0 {
                x != med
            } else {
                (CONSISTENCY * (x - med) / mad).abs() > THRESHOLD
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_example() {
        // median 8, MAD 1, M(80) = 0.6745 * 72 = 48.56
        assert_eq!(
            flag_outliers(&[7.0, 8.0, 8.0, 9.0, 80.0]),
            [false, false, false, false, true]
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(flag_outliers(&[4.2; 6]), [false; 6]);
        assert_eq!(flag_outliers(&[1e9]), [false]);
        assert!(flag_outliers(&[]).is_empty());
        assert_eq!(flag_outliers(&[1.0, 1.0, 1.0, 2.0]), [false, false, false, true]);
    }
}
