//! Quadratic reference for robust outlier marking: order statistics are
//! found by counting instead of sorting.

fn kth(values: &[f64], k: usize) -> f64 {
    for &x in values {
        let below = values.iter().filter(|&&y| y < x).count();
        let equal = values.iter().filter(|&&y| y == x).count();
        if below <= k && k < below + equal {
            return x;
        }
    }
    unreachable!()
}

pub fn median(values: &[f64]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        kth(values, n / 2)
    } else {
        (kth(values, n / 2 - 1) + kth(values, n / 2)) / 2.0
    }
}

pub fn flags(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return vec![];
    }
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    let mad = median(&dev);
    values
        .iter()
        .map(|&x| if mad == 0.0 { x != m } else { (0.6745 * (x - m) / mad).abs() > 3.5 })
        .collect()
}
