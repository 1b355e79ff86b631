use crate::autodiff::{AutodiffError, Scalar, Tape, Tensor, Var, LOG_CLAMP};

use super::TrainError;

/// One-hot target for a binary label: `[1, 0]` is non-hate, `[0, 1]` is hate.
pub fn one_hot(label: u8) -> [f64; 2] {
    if label == 1 {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

/// `-sum_c h_c ln(max(h_hat_c, 1e-12))` for a one-hot `h`.
pub fn cross_entropy(h_hat: [f64; 2], h: [f64; 2]) -> Result<f64, TrainError> {
    let is_one_hot = h.iter().all(|&x| x == 0.0 || x == 1.0) && h.iter().sum::<f64>() == 1.0;
    if !is_one_hot {
        return Err(TrainError::NotOneHot(h));
    }
    Ok(-h.iter().zip(h_hat).map(|(&t, p)| t * p.max(LOG_CLAMP).ln()).sum::<f64>())
}

/// Cross-entropy of a recorded `[1, 2]` probability row against `label`,
/// optionally scaled by a class weight.
pub fn cross_entropy_on_tape<T: Scalar>(
    tape: &Tape<T>,
    h_hat: Var,
    label: u8,
    weight: f64,
) -> Result<Var, AutodiffError> {
    let target = one_hot(label);
    let target = tape.constant(Tensor::matrix(2, 1, vec![T::of(target[0]), T::of(target[1])]));
    let log_p = tape.log(h_hat)?;
    let picked = tape.matmul(log_p, target)?;
    tape.scale(picked, -weight)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_correct_is_near_zero() {
        assert!(cross_entropy([1.0, 0.0], [1.0, 0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        for h in [[1.0, 0.0], [0.0, 1.0]] {
            assert!((cross_entropy([0.5, 0.5], h).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_prediction() {
        let ce = cross_entropy([0.9, 0.1], [0.0, 1.0]).unwrap();
        assert!((ce - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((ce - -(0.1f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let ce = cross_entropy([1.0, 0.0], [0.0, 1.0]).unwrap();
        assert!((ce - -(1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_soft_targets() {
        assert!(matches!(cross_entropy([0.5, 0.5], [0.5, 0.5]), Err(TrainError::NotOneHot(_))));
        assert!(cross_entropy([0.5, 0.5], [1.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_y() {
        let tape = Tape::<f64>::new();
        let z = tape.param(Tensor::matrix(1, 2, vec![0.3, -1.1]));
        let p = tape.softmax(z, 1).unwrap();
        let loss = cross_entropy_on_tape(&tape, p, 1, 1.0).unwrap();
        let g = tape.gradients(loss, &[z]).unwrap();
        let pv = tape.value(p);
        assert!((g.grads[0].data()[0] - pv.data()[0]).abs() < 1e-12);
        assert!((g.grads[0].data()[1] - (pv.data()[1] - 1.0)).abs() < 1e-12);
        let value = tape.value(loss).item();
        assert!((value - cross_entropy([pv.data()[0], pv.data()[1]], [0.0, 1.0]).unwrap()).abs() < 1e-12);
    }
}
