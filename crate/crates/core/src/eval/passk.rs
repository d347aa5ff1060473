//! Unbiased Pass@k estimator.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PassAtKError {
    #[error("k = {k} outside 1..={n}")]
    BadK { n: u64, k: u64 },
    #[error("c = {c} exceeds n = {n}")]
    BadC { n: u64, c: u64 },
}

/// `1 - C(n-c, k) / C(n, k)`, evaluated as `1 - prod_{i=n-c+1}^{n} (1 - k/i)`
/// so no binomial coefficient is ever formed.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, PassAtKError> {
    if k == 0 || k > n {
        return Err(PassAtKError::BadK { n, k });
    }
    if c > n {
        return Err(PassAtKError::BadC { n, c });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let prod: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - prod)
}

/// Mean of per-task estimates over `(n, c)` pairs.
pub fn mean_pass_at_k(tasks: &[(u64, u64)], k: u64) -> Result<f64, PassAtKError> {
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &(n, c) in tasks {
        sum += pass_at_k(n, c, k)?;
    }
    Ok(sum / tasks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_values() {
        assert_eq!(pass_at_k(5, 0, 1).unwrap(), 0.0);
        assert_eq!(pass_at_k(5, 5, 3).unwrap(), 1.0);
        assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
        assert!((pass_at_k(10, 3, 1).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        assert_eq!(pass_at_k(3, 1, 4), Err(PassAtKError::BadK { n: 3, k: 4 }));
        assert_eq!(pass_at_k(3, 1, 0), Err(PassAtKError::BadK { n: 3, k: 0 }));
        assert_eq!(pass_at_k(3, 4, 1), Err(PassAtKError::BadC { n: 3, c: 4 }));
    }

    #[test]
    fn large_n_stays_finite() {
        let v = pass_at_k(200, 13, 10).unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v));
    }

    #[test]
    fn mean() {
        let m = mean_pass_at_k(&[(5, 0), (5, 5)], 1).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_in_c_and_k(n in 1u64..40, c in 0u64..40, k in 1u64..40) {
            prop_assume!(c < n && k < n);
            let base = pass_at_k(n, c, k).unwrap();
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= base - 1e-15);
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= base - 1e-15);
        }
    }
}
