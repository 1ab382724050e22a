//! Classification losses over vocabulary logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary logits for one example together with the verbalizer set and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitBundle {
    pub logits: Vec<f64>,
    pub verbalizer_ids: Vec<usize>,
    pub label_id: usize,
}

impl LogitBundle {
    pub fn new(logits: Vec<f64>, verbalizer_ids: Vec<usize>, label_id: usize) -> Result<Self> {
        let bundle = Self {
            logits,
            verbalizer_ids,
            label_id,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.verbalizer_ids.is_empty() {
            return Err(Error::InvalidSpec("verbalizer set is empty".into()));
        }
        let v = self.logits.len();
        let mut seen = vec![false; v];
        for &id in &self.verbalizer_ids {
            if id >= v {
                return Err(Error::InvalidSpec(format!(
                    "verbalizer id {id} out of range for vocabulary of size {v}"
                )));
            }
            if seen[id] {
                return Err(Error::InvalidSpec(format!("duplicate verbalizer id {id}")));
            }
            seen[id] = true;
        }
        if !self.verbalizer_ids.contains(&self.label_id) {
            return Err(Error::InvalidLabel {
                label: self.label_id,
            });
        }
        Ok(())
    }

    fn verbalizer_lse(&self) -> f64 {
        log_sum_exp(self.verbalizer_ids.iter().map(|&i| self.logits[i]))
    }
}

/// `log Σ exp(a)` with max-subtraction. Empty input gives `-inf`.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = it.map(|a| (a - max).exp()).sum();
    max + sum.ln()
}

/// Cross-entropy of the label under a softmax restricted to the verbalizers.
pub fn cross_entropy_loss(bundle: &LogitBundle) -> Result<f64> {
    bundle.validate()?;
    let ce = bundle.verbalizer_lse() - bundle.logits[bundle.label_id];
    Ok(ce.max(0.0))
}

/// Cross-entropy plus `beta` times the negative log of the probability mass the
/// full vocabulary softmax puts on the verbalizer set.
pub fn confidence_regularized_loss(bundle: &LogitBundle, beta: f64) -> Result<f64> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be finite and >= 0, got {beta}")));
    }
    let ce = cross_entropy_loss(bundle)?;
    let reg = (log_sum_exp(bundle.logits.iter().copied()) - bundle.verbalizer_lse()).max(0.0);
    Ok(ce + beta * reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bundle(logits: &[f64], w: &[usize], z: usize) -> LogitBundle {
        LogitBundle::new(logits.to_vec(), w.to_vec(), z).unwrap()
    }

    #[test]
    fn symmetric_pair_is_ln2() {
        let b = bundle(&[0.0, 0.0], &[0, 1], 0);
        assert_abs_diff_eq!(cross_entropy_loss(&b).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn margin_two() {
        // log(1 + e^-2)
        let b = bundle(&[2.0, 0.0], &[0, 1], 0);
        assert_abs_diff_eq!(cross_entropy_loss(&b).unwrap(), 0.126_928_011_042_973, epsilon = 1e-12);
    }

    #[test]
    fn label_outside_verbalizers() {
        let err = LogitBundle::new(vec![0.0, 0.0, 0.0], vec![0, 1], 2).unwrap_err();
        assert_eq!(err, Error::InvalidLabel { label: 2 });
        let raw = LogitBundle {
            logits: vec![0.0; 3],
            verbalizer_ids: vec![0, 1],
            label_id: 2,
        };
        assert!(matches!(cross_entropy_loss(&raw), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn empty_and_duplicate_verbalizers() {
        let raw = LogitBundle {
            logits: vec![0.0; 3],
            verbalizer_ids: vec![],
            label_id: 0,
        };
        assert!(matches!(cross_entropy_loss(&raw), Err(Error::InvalidSpec(_))));
        assert!(LogitBundle::new(vec![0.0; 3], vec![1, 1], 1).is_err());
        assert!(LogitBundle::new(vec![0.0; 3], vec![0, 3], 0).is_err());
    }

    #[test]
    fn cr_worked_value() {
        let b = bundle(&[1.0, 1.0, 1.0], &[0, 1], 0);
        let expected = std::f64::consts::LN_2 - (2.0_f64 / 3.0).ln();
        assert_abs_diff_eq!(confidence_regularized_loss(&b, 1.0).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 1.098_612, epsilon = 1e-6);
    }

    #[test]
    fn cr_full_vocabulary_verbalizers() {
        let b = bundle(&[0.3, -1.2, 2.0], &[2, 0, 1], 1);
        let ce = cross_entropy_loss(&b).unwrap();
        for beta in [0.0, 0.5, 10.0, 1e3] {
            assert_abs_diff_eq!(confidence_regularized_loss(&b, beta).unwrap(), ce, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_beta_rejected() {
        let b = bundle(&[0.0, 0.0], &[0, 1], 0);
        assert!(confidence_regularized_loss(&b, -1.0).is_err());
        assert!(confidence_regularized_loss(&b, f64::NAN).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let b = bundle(&[1000.0, 999.0, 1200.0], &[0, 1], 1);
        let v = confidence_regularized_loss(&b, 1.0).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(cross_entropy_loss(&b).unwrap(), (1.0 + (-1.0_f64).exp()).ln() + 1.0 - 0.0, epsilon = 1e-9);
    }

    fn arb_bundle() -> impl Strategy<Value = LogitBundle> {
        (3usize..12)
            .prop_flat_map(|v| {
                (
                    prop::collection::vec(-20.0..20.0f64, v),
                    Just(v),
                    1usize..v,
                    any::<prop::sample::Index>(),
                )
            })
            .prop_map(|(logits, v, nw, label_ix)| {
                let w: Vec<usize> = (0..nw).map(|i| (i * 7 + 3) % v).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
                let z = w[label_ix.index(w.len())];
                LogitBundle::new(logits, w, z).unwrap()
            })
    }

    proptest! {
        #[test]
        fn beta_zero_is_cross_entropy(b in arb_bundle()) {
            prop_assert_eq!(confidence_regularized_loss(&b, 0.0).unwrap(), cross_entropy_loss(&b).unwrap());
        }

        #[test]
        fn shift_invariant(b in arb_bundle(), c in -100.0..100.0f64, beta in 0.0..5.0f64) {
            let mut shifted = b.clone();
            shifted.logits.iter_mut().for_each(|a| *a += c);
            let l0 = confidence_regularized_loss(&b, beta).unwrap();
            let l1 = confidence_regularized_loss(&shifted, beta).unwrap();
            prop_assert!((l0 - l1).abs() <= 1e-9 * (1.0 + l0.abs()));
        }

        #[test]
        fn regularizer_nonnegative_and_monotone(b in arb_bundle(), b1 in 0.0..5.0f64, b2 in 0.0..5.0f64) {
            let ce = cross_entropy_loss(&b).unwrap();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let l_lo = confidence_regularized_loss(&b, lo).unwrap();
            let l_hi = confidence_regularized_loss(&b, hi).unwrap();
            prop_assert!(ce >= 0.0);
            prop_assert!(l_lo - ce >= 0.0);
            prop_assert!(l_hi >= l_lo);
        }
    }
}
