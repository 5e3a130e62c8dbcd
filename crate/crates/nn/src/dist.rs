use rand::Rng;

use crate::{NnError, Real, Result};

/// Log-softmax restricted to `mask`; masked entries are `-inf`.
///
/// Uses max-subtraction over the feasible entries only.
pub fn masked_log_softmax<T: Real>(logits: &[T], mask: &[bool]) -> Result<Vec<T>> {
    if logits.len() != mask.len() {
        return Err(crate::error::shape_err(
            "masked_log_softmax",
            format!("{} logits, {} mask entries", logits.len(), mask.len()),
        ));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .reduce(T::max)
        .ok_or(NnError::EmptySupport)?;
    if !max.is_finite() {
        return Err(NnError::NonFinite("masked_log_softmax"));
    }
    let sum = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(T::zero(), |acc, (&l, _)| acc + (l - max).exp());
    let lse = max + sum.ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { T::neg_infinity() })
        .collect())
}

/// Categorical distribution over the feasible entries of a mask.
#[derive(Debug, Clone)]
pub struct MaskedCategorical<T> {
    log_probs: Vec<T>,
}

impl<T: Real> MaskedCategorical<T> {
    pub fn new(logits: &[T], mask: &[bool]) -> Result<Self> {
        Ok(MaskedCategorical {
            log_probs: masked_log_softmax(logits, mask)?,
        })
    }

    pub fn log_probs(&self) -> &[T] {
        &self.log_probs
    }

    pub fn prob(&self, index: usize) -> T {
        self.log_probs[index].exp()
    }

    pub fn is_feasible(&self, index: usize) -> bool {
        self.log_probs.get(index).is_some_and(|l| l.is_finite())
    }

    pub fn log_prob(&self, index: usize) -> Result<T> {
        if self.is_feasible(index) {
            Ok(self.log_probs[index])
        } else {
            Err(NnError::InfeasibleIndex { index })
        }
    }

    pub fn entropy(&self) -> T {
        self.log_probs
            .iter()
            .filter(|l| l.is_finite())
            .fold(T::zero(), |acc, &l| acc - l.exp() * l)
    }

    /// Highest-probability feasible entry, smallest index on ties.
    pub fn greedy(&self) -> usize {
        let mut best = None;
        for (i, &l) in self.log_probs.iter().enumerate() {
            if !l.is_finite() {
                continue;
            }
            match best {
                Some((_, bl)) if l <= bl => {}
                _ => best = Some((i, l)),
            }
        }
        best.map(|(i, _)| i).expect("masked distribution has a feasible entry")
    }

    /// Inverse-CDF draw; never returns a masked entry.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = None;
        for (i, &l) in self.log_probs.iter().enumerate() {
            if !l.is_finite() {
                continue;
            }
            acc += l.as_f64().exp();
            last = Some(i);
            if u < acc {
                return i;
            }
        }
        last.expect("masked distribution has a feasible entry")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_feasible_entry() {
        let d = MaskedCategorical::new(&[1.0f64, 2.0, 3.0], &[false, true, false]).unwrap();
        assert_eq!(d.prob(0), 0.0);
        assert_eq!(d.prob(1), 1.0);
        assert_eq!(d.prob(2), 0.0);
        assert_eq!(d.entropy(), 0.0);
        assert!(d.log_prob(0).is_err());
    }

    #[test]
    fn equal_logits_are_uniform() {
        let mask = [true, false, true, true, false];
        let d = MaskedCategorical::new(&[0.7f64; 5], &mask).unwrap();
        for (i, &m) in mask.iter().enumerate() {
            let want = if m { 1.0 / 3.0 } else { 0.0 };
            assert!((d.prob(i) - want).abs() < 1e-15);
        }
        assert!((d.entropy() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_masked_is_an_error() {
        assert!(matches!(
            masked_log_softmax(&[1.0f64, 2.0], &[false, false]),
            Err(NnError::EmptySupport)
        ));
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let d = MaskedCategorical::new(&[0.0f64, 3.0, 3.0, 1.0], &[true, true, true, true]).unwrap();
        assert_eq!(d.greedy(), 1);
        let d = MaskedCategorical::new(&[0.0f64, 3.0, 3.0, 1.0], &[true, false, true, true]).unwrap();
        assert_eq!(d.greedy(), 2);
    }

    #[test]
    fn sample_frequencies_within_three_sigma() {
        let logits = [0.2f64, -1.0, 1.3, 0.0, 0.5];
        let mask = [true, true, true, false, true];
        let d = MaskedCategorical::new(&logits, &mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[3], 0);
        for i in 0..5 {
            let p = d.prob(i);
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let dev = (counts[i] as f64 - n as f64 * p).abs();
            assert!(dev <= 3.0 * sigma + 1e-9, "entry {i}: {dev} > 3 * {sigma}");
        }
    }

    proptest! {
        #[test]
        fn shift_invariance(
            logits in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
            seed in any::<u64>(),
        ) {
            let n = logits.len();
            let mut mask: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            mask[(seed as usize) % n] = true;
            let a = MaskedCategorical::new(&logits, &mask).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let b = MaskedCategorical::new(&shifted, &mask).unwrap();
            let total: f64 = (0..n).map(|i| a.prob(i)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for i in 0..n {
                prop_assert!((a.prob(i) - b.prob(i)).abs() <= 1e-12);
                if !mask[i] {
                    prop_assert_eq!(a.prob(i), 0.0);
                }
            }
        }
    }
}
