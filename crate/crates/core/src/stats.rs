//! Small robust-statistics toolbox shared by the metrics and the aggregator.
//!
//! Conventions used throughout the crate:
//!
//! - the median of an even-length sample is the mean of the two middle
//!   order statistics;
//! - MAD is unscaled, `median(|x - median(x)|)`;
//! - percentiles interpolate linearly between order statistics
//!   (position `p/100 * (n - 1)`);
//! - `std` is the population standard deviation unless stated otherwise.
//!
//! Every function returns `None` on an empty sample rather than panicking.

/// Sorts a copy of `values` with a total order (NaN sorts last).
fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(median_of_sorted(&sorted(values)))
}

/// Median of an already sorted, non-empty slice.
pub fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Unscaled median absolute deviation.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

/// Linear-interpolation percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(percentile_of_sorted(&sorted(values), p))
}

pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p.clamp(0.0, 100.0) / 100.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation.
pub fn std_population(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Sample standard deviation (n - 1 denominator); zero for a single value.
pub fn std_sample(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Some(var.sqrt())
}

/// Root mean square.
pub fn rms(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some((values.iter().map(|x| x * x).sum::<f64>() / values.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[9.0, 10.0, 11.0, 10.0, 12.0]), Some(10.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn mad_is_unscaled() {
        assert!((mad(&[0.9, 1.0, 1.1]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(mad(&[3.0, 3.0, 3.0]), Some(0.0));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 100.0), Some(5.0));
        assert_eq!(percentile(&v, 50.0), Some(3.0));
        assert!((percentile(&v, 95.0).unwrap() - 4.8).abs() < 1e-12);
        assert!((percentile(&[1.0, 2.0], 25.0).unwrap() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn std_variants() {
        let v = [1.0, 1.0, 2.0];
        assert!((std_population(&v).unwrap() - 0.471_404_520_791_031_7).abs() < 1e-12);
        assert!((std_sample(&v).unwrap() - 0.577_350_269_189_625_8).abs() < 1e-12);
        assert_eq!(std_sample(&[5.0]), Some(0.0));
    }
}
