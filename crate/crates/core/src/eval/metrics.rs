use crate::error::{Error, Result};
use crate::stats;

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Domain(format!("{} observations but {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::Domain("rmse of empty input".into()));
    }
    Ok((stats::sum(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b))) / y.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        let y = [3.0, 7.5, 0.0];
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
        assert!((rmse(&y, &shifted).unwrap() - 0.25).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }
}
