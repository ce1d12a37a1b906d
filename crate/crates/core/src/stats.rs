//! Small descriptive-statistics helpers shared across modules.

/// Neumaier-compensated sum.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(values: &[f64]) -> f64 {
    sum(values.iter().copied()) / values.len() as f64
}

/// Median with midpoint interpolation for even counts. NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-pass standard deviation with divisor `n - ddof`.
pub fn sd(values: &[f64], ddof: usize) -> f64 {
    let n = values.len();
    if n <= ddof {
        return if n == 0 { f64::NAN } else { 0.0 };
    }
    let m = mean(values);
    let ss = sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / (n - ddof) as f64).sqrt()
}

/// Population standard deviation (divisor `n`).
pub fn population_sd(values: &[f64]) -> f64 {
    sd(values, 0)
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    sd(values, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut v = vec![1e16, 1.0, -1e16];
        v.extend(std::iter::repeat(0.1).take(10));
        assert!((sum(v) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn median_midpoint() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn sd_conventions() {
        let v = [1.0, 2.0, 3.0];
        assert!((population_sd(&v) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((sample_sd(&v) - 1.0).abs() < 1e-15);
        assert_eq!(population_sd(&[7.0]), 0.0);
    }
}
