//! Central finite differences over every trainable scalar of a [`LayerStack`].

use crate::error::{Error, Result};
use crate::nn::layer::GradientBundle;
use crate::nn::optim::LayerStack;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `(loss(θ + eps·eᵢ) − loss(θ − eps·eᵢ)) / (2·eps)` for every coordinate `i`,
/// returned in the same layout as a backprop [`GradientBundle`].
pub fn finite_diff_grad<P, F>(mut loss_fn: F, params: &P, eps: f64) -> Result<GradientBundle>
where
    P: LayerStack + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut grads = GradientBundle::zeros_for(&params.layers());
    let mut probe = params.clone();
    let n_layers = grads.layers.len();
    for li in 0..n_layers {
        let n = grads.layers[li].param_count();
        for pi in 0..n {
            let orig = *nth_param(&mut probe, li, pi);
            *nth_param(&mut probe, li, pi) = orig + eps;
            let plus = loss_fn(&probe)?;
            *nth_param(&mut probe, li, pi) = orig - eps;
            let minus = loss_fn(&probe)?;
            *nth_param(&mut probe, li, pi) = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at perturbed coordinate {pi} of layer {li}"
                )));
            }
            *grads.layers[li].params_mut().nth(pi).expect("in range") = (plus - minus) / (2.0 * eps);
        }
    }
    Ok(grads)
}

fn nth_param<P: LayerStack>(p: &mut P, layer: usize, idx: usize) -> &mut f64 {
    p.layers_mut()
        .swap_remove(layer)
        .params_mut()
        .nth(idx)
        .expect("parameter index in range")
}

/// Largest elementwise relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &GradientBundle, b: &GradientBundle, floor: f64) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten().iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Activation, DenseLayer, Mlp};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_param(v: f64) -> Mlp {
        let mut l = DenseLayer::zeros(1, 1);
        l.weight[[0, 0]] = v;
        Mlp {
            layers: vec![l],
            activation: Activation::Identity,
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = scalar_param(1.0);
        let g = finite_diff_grad(|_| Ok(4.2), &p, DEFAULT_EPS).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn square_at_three() {
        let p = scalar_param(3.0);
        let g = finite_diff_grad(|q: &Mlp| Ok(q.layers[0].weight[[0, 0]].powi(2)), &p, 1e-5).unwrap();
        assert_abs_diff_eq!(g.layers[0].weight[[0, 0]], 6.0, epsilon = 1e-6);
        assert_eq!(g.layers[0].bias[0], 0.0);
    }

    #[test]
    fn rejects_non_positive_eps_and_non_finite_loss() {
        let p = scalar_param(0.0);
        assert!(matches!(finite_diff_grad(|_| Ok(0.0), &p, 0.0), Err(Error::Domain(_))));
        let r = finite_diff_grad(|q: &Mlp| Ok(1.0 / q.layers[0].bias[0].abs().min(0.0)), &p, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn agrees_with_backprop_on_mlp_squared_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let x = array![[0.2, -0.4, 1.0], [1.5, 0.3, -0.7]];
        let y = array![[1.0, -1.0], [0.0, 0.5]];
        let loss = |m: &Mlp| -> Result<f64> {
            let acts = m.forward(x.view())?;
            Ok((acts.last() - &y).mapv(|v| v * v).sum())
        };
        let acts = net.forward(x.view()).unwrap();
        let out_grad: Array2<f64> = (acts.last() - &y) * 2.0;
        let analytic = net.backprop(&acts, out_grad.view()).unwrap();
        let numeric = finite_diff_grad(loss, &net, DEFAULT_EPS).unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-6);
    }
}
