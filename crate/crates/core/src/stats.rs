//! Small replicate statistics helpers.

/// Mean and standard error of the mean. The mean is accumulated on data
/// shifted by the first value, so identical inputs give a zero spread
/// exactly. The standard error is `None` for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let shift = values[0];
    let mean_dev = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let mean = shift + mean_dev;
    if n < 2 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - shift - mean_dev).powi(2)).sum();
    let var = ss / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

/// Component-wise [`mean_stderr`] across replicate vectors.
pub fn columnwise(replicates: &[Vec<f64>]) -> (Vec<f64>, Option<Vec<f64>>) {
    let dim = replicates.first().map_or(0, Vec::len);
    let mut means = Vec::with_capacity(dim);
    let mut errs = Vec::with_capacity(dim);
    for j in 0..dim {
        let col: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
        let (m, s) = mean_stderr(&col);
        means.push(m);
        errs.push(s);
    }
    let errs = errs.into_iter().collect::<Option<Vec<f64>>>();
    (means, errs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_values_have_zero_spread() {
        let v = vec![0.1 + 0.2; 8];
        let (m, s) = mean_stderr(&v);
        assert_eq!(m, 0.1 + 0.2);
        assert_eq!(s, Some(0.0));
    }

    #[test]
    fn known_values() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((s.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[3.0]).1, None);
    }
}
