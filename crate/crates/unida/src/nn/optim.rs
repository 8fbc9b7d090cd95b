//! SGD with Nesterov momentum and the inverse learning-rate decay.

use crate::error::{Error, Result};
use crate::nn::layer::{DenseLayer, GradientBundle};

/// Anything made of dense layers that an optimizer can update. The first
/// `extractor_len()` layers form the feature extractor and use the extractor
/// learning rate; the rest use the head learning rate.
pub trait LayerStack {
    fn layers(&self) -> Vec<&DenseLayer>;
    fn layers_mut(&mut self) -> Vec<&mut DenseLayer>;
    fn extractor_len(&self) -> usize;

    fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }
}

impl LayerStack for crate::nn::layer::Mlp {
    fn layers(&self) -> Vec<&DenseLayer> {
        self.layers.iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.layers.iter_mut().collect()
    }

    fn extractor_len(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseSchedule {
    pub gamma: f64,
    pub power: f64,
}

impl Default for InverseSchedule {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            power: 0.75,
        }
    }
}

impl InverseSchedule {
    /// `base_lr · (1 + gamma·progress)^(−power)`.
    pub fn lr(&self, base_lr: f64, progress: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&progress) {
            return Err(Error::domain(format!("schedule progress {progress} outside [0, 1]")));
        }
        Ok(base_lr * (1.0 + self.gamma * progress).powf(-self.power))
    }
}

/// Inverse decay with the default constants.
pub fn inverse_schedule(base_lr: f64, progress: f64) -> Result<f64> {
    InverseSchedule::default().lr(base_lr, progress)
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: GradientBundle,
    pub base_lr_extractor: f64,
    pub base_lr_heads: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: InverseSchedule,
    /// Fraction of training completed, in `[0, 1]`.
    pub progress: f64,
}

impl OptimizerState {
    pub fn new<P: LayerStack + ?Sized>(params: &P, base_lr_extractor: f64, base_lr_heads: f64, momentum: f64) -> Self {
        Self {
            velocity: GradientBundle::zeros_for(&params.layers()),
            base_lr_extractor,
            base_lr_heads,
            momentum,
            weight_decay: 0.0,
            schedule: InverseSchedule::default(),
            progress: 0.0,
        }
    }

    pub fn lr_extractor(&self) -> Result<f64> {
        self.schedule.lr(self.base_lr_extractor, self.progress)
    }

    pub fn lr_heads(&self) -> Result<f64> {
        self.schedule.lr(self.base_lr_heads, self.progress)
    }
}

/// One Nesterov step on a flat slice: `v ← μv − lr·g; θ ← θ + μv − lr·g`.
pub fn nesterov_update(theta: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *t += momentum * *v - lr * g;
    }
}

/// Applies one optimizer step in place. Nothing is modified when a gradient
/// entry is non-finite.
pub fn sgd_nesterov_step<P: LayerStack + ?Sized>(
    params: &mut P,
    grads: &GradientBundle,
    state: &mut OptimizerState,
) -> Result<()> {
    let n_extractor = params.extractor_len();
    let mut layers = params.layers_mut();
    if layers.len() != grads.layers.len() || layers.len() != state.velocity.layers.len() {
        return Err(Error::shape("gradient bundle does not match parameter layers"));
    }
    for (l, g) in layers.iter().zip(&grads.layers) {
        if l.weight.dim() != g.weight.dim() || l.bias.len() != g.bias.len() {
            return Err(Error::shape("gradient shape does not match parameter shape"));
        }
    }
    if !grads.is_finite() {
        return Err(Error::numeric("non-finite gradient entry"));
    }
    let lr_ex = state.lr_extractor()?;
    let lr_head = state.lr_heads()?;
    let (mu, wd) = (state.momentum, state.weight_decay);

    for (i, (layer, (g, v))) in layers
        .iter_mut()
        .zip(grads.layers.iter().zip(state.velocity.layers.iter_mut()))
        .enumerate()
    {
        let lr = if i < n_extractor { lr_ex } else { lr_head };
        let mut gw = g.weight.clone();
        if wd != 0.0 {
            gw.scaled_add(wd, &layer.weight);
        }
        nesterov_update(
            layer.weight.as_slice_mut().expect("contiguous weight"),
            gw.as_slice().expect("contiguous gradient"),
            v.weight.as_slice_mut().expect("contiguous velocity"),
            lr,
            mu,
        );
        nesterov_update(
            layer.bias.as_slice_mut().expect("contiguous bias"),
            g.bias.as_slice().expect("contiguous gradient"),
            v.bias.as_slice_mut().expect("contiguous velocity"),
            lr,
            mu,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Activation, Mlp};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(inverse_schedule(0.01, 0.0).unwrap(), 0.01);
        let end = inverse_schedule(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(end, 11f64.powf(-0.75), epsilon = 1e-15);
        assert_abs_diff_eq!(end, 0.16556, epsilon = 1e-5);
    }

    #[test]
    fn schedule_rejects_progress_outside_unit_interval() {
        assert!(matches!(inverse_schedule(0.1, -0.01), Err(Error::Domain(_))));
        assert!(matches!(inverse_schedule(0.1, 1.01), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn schedule_strictly_decreasing(p1 in 0.0f64..1.0, gap in 1e-6f64..1.0) {
            let p2 = (p1 + gap).min(1.0);
            prop_assume!(p2 > p1);
            prop_assert!(inverse_schedule(0.01, p1).unwrap() > inverse_schedule(0.01, p2).unwrap());
        }
    }

    fn small_net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Mlp::new(&[2, 3, 2], Activation::Tanh, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut net = small_net();
        let before = net.clone();
        let mut state = OptimizerState::new(&net, 0.1, 0.1, 0.9);
        let zero = GradientBundle::zeros_for(&net.layers.iter().collect::<Vec<_>>());
        for _ in 0..5 {
            sgd_nesterov_step(&mut net, &zero, &mut state).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn zero_momentum_is_vanilla_sgd() {
        let mut net = small_net();
        let before = net.clone();
        let mut grads = GradientBundle::zeros_for(&net.layers.iter().collect::<Vec<_>>());
        grads.layers[0].weight.fill(0.5);
        grads.layers[1].bias.fill(-2.0);
        let mut state = OptimizerState::new(&net, 0.1, 0.1, 0.0);
        sgd_nesterov_step(&mut net, &grads, &mut state).unwrap();
        for (a, (b, g)) in net.layers.iter().zip(before.layers.iter().zip(&grads.layers)) {
            for ((x, y), gg) in a.weight.iter().zip(b.weight.iter()).zip(g.weight.iter()) {
                assert_abs_diff_eq!(*x, y - 0.1 * gg, epsilon = 1e-15);
            }
            for ((x, y), gg) in a.bias.iter().zip(b.bias.iter()).zip(g.bias.iter()) {
                assert_abs_diff_eq!(*x, y - 0.1 * gg, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn two_nesterov_steps_on_quadratic_match_hand_unroll() {
        // f(θ) = ½ a θ², g = aθ
        let (a, lr, mu) = (3.0, 0.05, 0.9);
        let mut theta = [2.0];
        let mut v = [0.0];
        for _ in 0..2 {
            let g = [a * theta[0]];
            nesterov_update(&mut theta, &g, &mut v, lr, mu);
        }
        // step 1: g0 = 6, v1 = -0.3, θ1 = 2 + 0.9(-0.3) - 0.3 = 1.43
        // step 2: g1 = 4.29, v2 = -0.27 - 0.2145 = -0.4845,
        //         θ2 = 1.43 + 0.9(-0.4845) - 0.2145 = 0.77945
        assert_abs_diff_eq!(v[0], -0.4845, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[0], 0.77945, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_without_touching_params() {
        let mut net = small_net();
        let before = net.clone();
        let mut grads = GradientBundle::zeros_for(&net.layers.iter().collect::<Vec<_>>());
        grads.layers[1].weight[[0, 0]] = f64::NAN;
        let mut state = OptimizerState::new(&net, 0.1, 0.1, 0.9);
        assert!(matches!(
            sgd_nesterov_step(&mut net, &grads, &mut state),
            Err(Error::Numeric(_))
        ));
        assert_eq!(net, before);
    }
}
