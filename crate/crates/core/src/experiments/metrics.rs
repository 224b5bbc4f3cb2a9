use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::LabelledSample;
use crate::network::{self, NetworkParams};
use crate::objectives::LossKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean loss over the test set (the negative log-likelihood for the
    /// logistic loss).
    pub test_nll: f64,
    pub test_acc: f64,
    pub n_test: usize,
}

/// Logistic loss: accuracy counts `sign(f) = y` with `sign(0) := +1`.
/// Squared loss: a prediction counts as correct when `|f − y| ≤ 0.5`.
pub fn evaluate(params: &NetworkParams, test: &[LabelledSample], loss: LossKind) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyBatch("test set"));
    }
    let mut nll = 0.0;
    let mut correct = 0usize;
    for s in test {
        let f = network::forward(params, &s.x)?;
        nll += loss.eval(f, s.y).0;
        let hit = match loss {
            LossKind::Logistic => (if f >= 0.0 { 1.0 } else { -1.0 }) == s.y,
            LossKind::Squared => (f - s.y).abs() <= 0.5,
        };
        correct += usize::from(hit);
    }
    let n = test.len() as f64;
    Ok(Metrics {
        test_nll: nll / n,
        test_acc: correct as f64 / n,
        n_test: test.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Shape;

    fn samples() -> Vec<LabelledSample> {
        vec![
            LabelledSample { z: vec![], x: vec![1.0], y: 1.0 },
            LabelledSample { z: vec![], x: vec![-1.0], y: -1.0 },
        ]
    }

    #[test]
    fn zero_output_gives_log_two() {
        let p = NetworkParams::zeros(1, 1);
        let m = evaluate(&p, &samples(), LossKind::Logistic).unwrap();
        assert!((m.test_nll - std::f64::consts::LN_2).abs() < 1e-15);
        // sign(0) = +1: only the positive sample is counted correct.
        assert_eq!(m.test_acc, 0.5);
    }

    #[test]
    fn confident_separator() {
        // F(x) = 1000·x in the linear ELU region, offset cancelled by c2.
        let p = NetworkParams::from_flat(Shape { d_in: 1, width: 1 }, vec![1000.0, 2000.0, 1.0, -2000.0]).unwrap();
        let m = evaluate(&p, &samples(), LossKind::Logistic).unwrap();
        assert!(m.test_nll < 1e-100);
        assert_eq!(m.test_acc, 1.0);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(evaluate(&NetworkParams::zeros(1, 1), &[], LossKind::Logistic).is_err());
    }
}
