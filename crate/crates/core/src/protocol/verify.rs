//! The verification function and MOR accuracy.

use crate::data::Truth;
use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::protocol::claim::TriggerSet;

/// 1 when the model outputs the claimed label and the ground truth differs
/// from it, else 0.
pub fn verify_pair(f_out: usize, y: usize, f_x: Truth) -> u8 {
    u8::from(f_out == y && !f_x.is(y))
}

/// Mean of [`verify_pair`] over predictions, claimed labels and ground truth.
pub fn mor_accuracy_of(predictions: &[usize], y: &[usize], truth: &[Truth]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyTriggerSet);
    }
    if predictions.len() != y.len() || y.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "mor_accuracy",
            left: vec![predictions.len()],
            right: vec![y.len(), truth.len()],
        });
    }
    let hits: usize = predictions
        .iter()
        .zip(y)
        .zip(truth)
        .map(|((&p, &l), &t)| verify_pair(p, l, t) as usize)
        .sum();
    Ok(hits as f64 / predictions.len() as f64)
}

/// MOR accuracy of `model` on a trigger set.
pub fn mor_accuracy(model: &MlpClassifier, trigger: &TriggerSet) -> Result<f64> {
    if trigger.is_empty() {
        return Err(Error::EmptyTriggerSet);
    }
    let pred = model.predict(&trigger.x)?;
    mor_accuracy_of(&pred, &trigger.y, &trigger.truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_pair_examples() {
        assert_eq!(verify_pair(3, 3, Truth::Class(7)), 1);
        assert_eq!(verify_pair(3, 3, Truth::Class(3)), 0);
        assert_eq!(verify_pair(2, 3, Truth::Class(7)), 0);
        assert_eq!(verify_pair(4, 4, Truth::NoClass), 1);
    }

    #[test]
    fn accuracy_arithmetic() {
        let y = vec![1usize; 100];
        let truth = vec![Truth::Class(0); 100];
        let all = vec![1usize; 100];
        assert_eq!(mor_accuracy_of(&all, &y, &truth).unwrap(), 1.0);
        let mut some = vec![2usize; 100];
        for p in some.iter_mut().take(43) {
            *p = 1;
        }
        assert_eq!(mor_accuracy_of(&some, &y, &truth).unwrap(), 0.43);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(mor_accuracy_of(&[], &[], &[]), Err(Error::EmptyTriggerSet)));
    }
}
