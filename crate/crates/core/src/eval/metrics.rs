//! Calibration and ranking metrics.

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 10;

/// Bin of a routing confidence `max(s, 1 - s)` among `bins` equal-width bins
/// over `[0.5, 1]`; the last bin is closed on the right.
pub fn confidence_bin(confidence: f64, bins: usize) -> usize {
    let raw = ((confidence - 0.5) * 2.0 * bins as f64).floor();
    (raw.max(0.0) as usize).min(bins - 1)
}

/// Expected calibration error of routing decisions.
///
/// `copy_probs[i]` is the step-0 `[COPY]` probability `s_i`, `truths[i]`
/// whether the gold document was in context. The predicted mode is
/// `s >= 0.5`, its confidence `max(s, 1 - s)`.
pub fn ece(copy_probs: &[f64], truths: &[bool], bins: usize) -> Result<f64> {
    if copy_probs.is_empty() {
        return Err(Error::Empty("calibration samples"));
    }
    if copy_probs.len() != truths.len() {
        return Err(Error::invalid(
            "confidence and truth lists differ in length",
        ));
    }
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    if let Some(s) = copy_probs.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("confidence {s} outside [0, 1]")));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    for (&s, &z) in copy_probs.iter().zip(truths) {
        let conf = s.max(1.0 - s);
        let m = confidence_bin(conf, bins);
        count[m] += 1;
        conf_sum[m] += conf;
        if (s >= 0.5) == z {
            correct[m] += 1;
        }
    }
    let n = copy_probs.len() as f64;
    Ok((0..bins)
        .filter(|&m| count[m] > 0)
        .map(|m| {
            let c = count[m] as f64;
            (c / n) * (correct[m] as f64 / c - conf_sum[m] / c).abs()
        })
        .sum())
}

/// Fraction of `ranks` (1-based, `None` for a miss) that are `<= k`.
pub fn hits_at(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_extremes() {
        assert_eq!(ece(&[1.0; 5], &[true; 5], 10).unwrap(), 0.0);
        assert_eq!(ece(&[1.0; 5], &[false; 5], 10).unwrap(), 1.0);
        assert_eq!(ece(&[1.0, 0.0], &[true, false], 10).unwrap(), 0.0);
    }

    #[test]
    fn bins_are_right_closed_at_one() {
        assert_eq!(confidence_bin(0.5, 10), 0);
        assert_eq!(confidence_bin(0.549, 10), 0);
        assert_eq!(confidence_bin(0.55, 10), 1);
        assert_eq!(confidence_bin(1.0, 10), 9);
    }

    #[test]
    fn half_breaks_toward_copy() {
        // s = 0.5 predicts copy; correct iff gold in context
        assert_eq!(ece(&[0.5], &[true], 10).unwrap(), 0.5);
        assert_eq!(ece(&[0.5], &[false], 10).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ece(&[], &[], 10).is_err());
        assert!(ece(&[0.3], &[true, false], 10).is_err());
        assert!(ece(&[1.2], &[true], 10).is_err());
    }

    #[test]
    fn hits() {
        let r = [Some(1), Some(3), None, Some(11)];
        assert_eq!(hits_at(&r, 1), 0.25);
        assert_eq!(hits_at(&r, 10), 0.5);
    }
}
