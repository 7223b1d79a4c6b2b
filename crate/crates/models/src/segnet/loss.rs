//! Soft dice score and its graph form.

use glioaug_core::Scalar;
use glioaug_nn::{Graph, Var};

use crate::error::{Error, Result};

pub const DICE_SMOOTH: f64 = 0.01;

/// `(2<t,p> + c) / (<t,t> + <p,p> + c)`.
pub fn soft_dice<T: Scalar>(y_true: &[T], y_pred: &[T], c: f64) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Core(glioaug_core::Error::ShapeMismatch {
            left: vec![y_true.len()],
            right: vec![y_pred.len()],
        }));
    }
    let (mut tp, mut tt, mut pp) = (0.0, 0.0, 0.0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (t, p) = (t.as_f64(), p.as_f64());
        tp += t * p;
        tt += t * t;
        pp += p * p;
    }
    Ok((2.0 * tp + c) / (tt + pp + c))
}

/// Soft dice of whole tensors as a graph node.
pub fn soft_dice_node<T: Scalar>(g: &mut Graph<T>, y_true: Var, y_pred: Var, c: f64) -> Var {
    let tp = g.mul(y_true, y_pred);
    let tp = g.sum_all(tp);
    let num = g.scale(tp, T::lit(2.0));
    let num = g.add_scalar(num, T::lit(c));
    let tt = g.mul(y_true, y_true);
    let tt = g.sum_all(tt);
    let pp = g.mul(y_pred, y_pred);
    let pp = g.sum_all(pp);
    let den = g.add(tt, pp);
    let den = g.add_scalar(den, T::lit(c));
    g.div(num, den)
}

/// Training loss `1 - soft dice`.
pub fn dice_loss_node<T: Scalar>(g: &mut Graph<T>, y_true: Var, y_pred: Var, c: f64) -> Var {
    let d = soft_dice_node(g, y_true, y_pred, c);
    let neg = g.scale(d, -T::one());
    g.add_scalar(neg, T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use glioaug_nn::Tensor;

    #[test]
    fn spec_examples() {
        let ones = vec![1.0f64; 10];
        assert_eq!(soft_dice(&ones, &ones, DICE_SMOOTH).unwrap(), 1.0);
        let zeros = vec![0.0f64; 10];
        assert_eq!(soft_dice(&zeros, &zeros, DICE_SMOOTH).unwrap(), 1.0);
        let mut t = vec![0.0f64; 12];
        let mut p = vec![0.0f64; 12];
        t[..8].fill(1.0);
        p[4..12].fill(1.0);
        let d = soft_dice(&t, &p, DICE_SMOOTH).unwrap();
        assert!((d - 8.01 / 16.01).abs() < 1e-15);
        assert!((d - 0.5003).abs() < 1e-4);
        assert!(soft_dice(&t, &p[..3], DICE_SMOOTH).is_err());
    }

    #[test]
    fn node_matches_scalar() {
        let t: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let p: Vec<f64> = (0..16).map(|i| (i as f64 * 0.61).sin().abs()).collect();
        let mut g = Graph::new();
        let tv = g.input(Tensor::new([1, 1, 4, 4], t.clone()).unwrap());
        let pv = g.input(Tensor::new([1, 1, 4, 4], p.clone()).unwrap());
        let d = soft_dice_node(&mut g, tv, pv, DICE_SMOOTH);
        assert!((g.value(d).item() - soft_dice(&t, &p, DICE_SMOOTH).unwrap()).abs() < 1e-14);
        let l = dice_loss_node(&mut g, tv, pv, DICE_SMOOTH);
        assert!((g.value(l).item() + g.value(d).item() - 1.0).abs() < 1e-14);
    }
}
