//! Discount weight profiles for the finite-horizon cost functional.
//!
//! A profile assigns a weight `w(k, N) ∈ (0, 1]` to every stage `k` of a
//! horizon-`N` cost sum. `Constant` reproduces the plain undiscounted sum,
//! `Linear` decays from 1 down to `1/N`, and `CustomTable` is an
//! experimental hook for user-supplied weight sequences.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DiscountProfile {
    /// `w(k, N) = 1` for every stage.
    Constant,
    /// `w(k, N) = (N - k) / N`, strictly decreasing from 1 to `1/N`.
    Linear,
    /// `w(k, N) = table[k]`; the table must cover the horizon it is used with.
    CustomTable(Vec<f64>),
}

impl DiscountProfile {
    /// Builds a custom table, validating that every entry lies in `(0, 1]`.
    pub fn custom(table: Vec<f64>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidArgument("custom discount table is empty".into()));
        }
        for (k, &w) in table.iter().enumerate() {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "custom discount entry {k} = {w} outside (0, 1]"
                )));
            }
        }
        Ok(DiscountProfile::CustomTable(table))
    }

    /// Weight of stage `k` in a horizon of `n` stages. Requires `k < n`.
    pub fn weight(&self, k: usize, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if k >= n {
            return Err(Error::InvalidArgument(format!(
                "stage index {k} out of range for horizon {n}"
            )));
        }
        match self {
            DiscountProfile::Constant => Ok(1.0),
            DiscountProfile::Linear => Ok((n - k) as f64 / n as f64),
            DiscountProfile::CustomTable(t) => t.get(k).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "custom discount table of length {} too short for stage {k}",
                    t.len()
                ))
            }),
        }
    }

    /// All `n` stage weights of a horizon-`n` problem.
    pub fn weights(&self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|k| self.weight(k, n)).collect()
    }

    /// Exact sum of the `n` stage weights; closed form where one exists.
    ///
    /// For `Linear` the sum is `(N + 1) / 2`.
    pub fn weight_sum(&self, n: usize) -> f64 {
        match self {
            DiscountProfile::Constant => n as f64,
            DiscountProfile::Linear => (n as f64 + 1.0) / 2.0,
            DiscountProfile::CustomTable(t) => t.iter().take(n).sum(),
        }
    }

    /// Factor `c_N` relating the horizon-`N` cost of a tail to the
    /// horizon-`N-1` cost functional: `J_N(x, u) = w(0,N) l_0 + c_N
    /// J_{N-1}(x_1, tail(u))`. Exists for `Constant` (1) and `Linear`
    /// (`(N-1)/N`); custom tables have no such recursion in general.
    pub fn dpp_factor(&self, n: usize) -> Option<f64> {
        match self {
            DiscountProfile::Constant => Some(1.0),
            DiscountProfile::Linear => {
                if n >= 1 {
                    Some((n as f64 - 1.0) / n as f64)
                } else {
                    None
                }
            }
            DiscountProfile::CustomTable(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiscountProfile::Constant => "constant",
            DiscountProfile::Linear => "linear",
            DiscountProfile::CustomTable(_) => "custom",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_endpoints() {
        let d = DiscountProfile::Linear;
        assert_eq!(d.weight(0, 10).unwrap(), 1.0);
        assert_eq!(d.weight(9, 10).unwrap(), 0.1);
        assert_eq!(d.weight(0, 1).unwrap(), 1.0);
    }

    #[test]
    fn constant_is_one() {
        let d = DiscountProfile::Constant;
        for n in [1usize, 3, 17] {
            for k in 0..n {
                assert_eq!(d.weight(k, n).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn out_of_range_is_an_error() {
        let d = DiscountProfile::Linear;
        assert!(d.weight(10, 10).is_err());
        assert!(d.weight(0, 0).is_err());
    }

    #[test]
    fn weight_sums() {
        assert_eq!(DiscountProfile::Linear.weight_sum(4), 2.5);
        assert_eq!(DiscountProfile::Constant.weight_sum(7), 7.0);
        assert_eq!(DiscountProfile::Linear.weight_sum(1), 1.0);
    }

    #[test]
    fn linear_sum_closed_form_matches_naive_up_to_1e4() {
        let d = DiscountProfile::Linear;
        for n in [1usize, 2, 3, 10, 100, 999, 5000, 10_000] {
            let naive: f64 = (0..n).map(|k| d.weight(k, n).unwrap()).sum();
            let closed = d.weight_sum(n);
            assert_eq!(closed, (n as f64 + 1.0) / 2.0);
            assert!((closed - naive).abs() <= 1e-12 * (n as f64).max(1.0));
        }
    }

    #[test]
    fn linear_sum_diverges() {
        // the scheme needs the weight sum to grow without bound
        for n in [1usize, 10, 1000, 10_000] {
            assert!(DiscountProfile::Linear.weight_sum(n) >= n as f64 / 2.0);
        }
    }

    #[test]
    fn custom_table_rejects_bad_entries() {
        assert!(DiscountProfile::custom(vec![1.0, 0.0]).is_err());
        assert!(DiscountProfile::custom(vec![1.0, 1.5]).is_err());
        assert!(DiscountProfile::custom(vec![]).is_err());
        assert!(DiscountProfile::custom(vec![1.0, 0.5, 0.25]).is_ok());
    }

    proptest! {
        #[test]
        fn shipped_profiles_monotone_nonincreasing(n in 1usize..200) {
            for d in [DiscountProfile::Constant, DiscountProfile::Linear] {
                let w = d.weights(n).unwrap();
                for k in 1..n {
                    prop_assert!(w[k] <= w[k - 1]);
                    prop_assert!(w[k] > 0.0 && w[k] <= 1.0);
                }
            }
        }

        #[test]
        fn linear_closed_form_is_exact(n in 1usize..2000) {
            let d = DiscountProfile::Linear;
            let naive: f64 = d.weights(n).unwrap().iter().sum();
            prop_assert!((d.weight_sum(n) - naive).abs() <= 1e-12 * n as f64);
        }
    }
}
