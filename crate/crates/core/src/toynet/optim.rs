use crate::error::{Error, Result};
use crate::toynet::network::{Gradients, ParamKind, ToyNet};

/// SGD with heavy-ball momentum and L2 weight decay on weight matrices.
///
/// `v <- momentum * v + (g + 2 lambda theta)`, `theta <- theta - lr * v`. The
/// decay term is the gradient of `lambda * sum_l |W_l|^2`; biases and
/// batch-norm affine parameters are not decayed.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Gradients,
}

impl MomentumSgd {
    pub fn new(net: &ToyNet, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(net),
        })
    }

    pub fn step(&mut self, net: &mut ToyNet, grads: &Gradients) -> Result<()> {
        let shapes_match = |a: Vec<(ParamKind, &[f64])>, b: Vec<(ParamKind, &[f64])>| {
            a.len() == b.len()
                && a.iter()
                    .zip(&b)
                    .all(|(x, y)| x.0 == y.0 && x.1.len() == y.1.len())
        };
        if !shapes_match(net.params(), grads.slices())
            || !shapes_match(net.params(), self.velocity.slices())
        {
            return Err(Error::ShapeMismatch(
                "gradients do not match network parameters".into(),
            ));
        }
        let (lr, mu, lambda) = (self.learning_rate, self.momentum, self.weight_decay);
        for (((kind, theta), (_, g)), (_, v)) in net
            .params_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.velocity.slices_mut())
        {
            let decay = if kind == ParamKind::Weight {
                2.0 * lambda
            } else {
                0.0
            };
            for ((t, g), v) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + decay * *t;
                *t -= lr * *v;
            }
        }
        Ok(())
    }
}

/// `target <- tau * target + (1 - tau) * online`, applied to parameters and
/// batch-norm running statistics.
pub fn ema_update(online: &ToyNet, target: &mut ToyNet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("tau must lie in [0, 1], got {tau}")));
    }
    online.check_same_architecture(target)?;
    let blend = |t: &mut f64, o: f64| *t = tau * *t + (1.0 - tau) * o;
    for ((_, t), (_, o)) in target.params_mut().into_iter().zip(online.params()) {
        t.iter_mut().zip(o).for_each(|(t, o)| blend(t, *o));
    }
    for (t, o) in target.buffers_mut().into_iter().zip(online.buffers()) {
        t.iter_mut().zip(o).for_each(|(t, o)| blend(t, *o));
    }
    Ok(())
}
