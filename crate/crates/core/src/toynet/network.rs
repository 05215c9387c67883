//! Fully connected layers with optional batch-norm and manual reverse mode.
//!
//! A layer computes `act(bn(x W^T + b))`. Activations are stored row-major,
//! one sample per row.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::gaussian_vec;

/// Added to the batch variance before the square root.
pub const BN_EPS: f64 = 1e-5;
/// `running = BN_MOMENTUM * running + (1 - BN_MOMENTUM) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub has_batch_norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        has_batch_norm: bool,
        activation: Activation,
    ) -> Self {
        Self {
            in_dim,
            out_dim,
            has_batch_norm,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out_dim x in_dim`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub layers: Vec<Layer>,
    pub rng_seed: u64,
}

/// Gaussian weights with std `sqrt(2 / in_dim)`, zero biases, identity
/// batch-norm.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<ToyNet> {
    if specs.is_empty() {
        return Err(Error::ShapeMismatch(
            "network needs at least one layer".into(),
        ));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} has a zero dimension"
            )));
        }
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} expects {} inputs but layer {} produces {}",
                s.in_dim,
                i - 1,
                specs[i - 1].out_dim
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|s| {
            let std = (2.0 / s.in_dim as f64).sqrt();
            let w: Vec<f64> = gaussian_vec(&mut rng, s.in_dim * s.out_dim)
                .into_iter()
                .map(|v| v * std)
                .collect();
            Layer {
                weights: Array2::from_shape_vec((s.out_dim, s.in_dim), w).expect("sized above"),
                bias: Array1::zeros(s.out_dim),
                bn: s.has_batch_norm.then(|| BatchNorm::new(s.out_dim)),
                activation: s.activation,
            }
        })
        .collect();
    Ok(ToyNet {
        layers,
        rng_seed: seed,
    })
}

/// Divides every weight matrix by `c`; biases and batch-norm parameters stay.
pub fn cut_initialize(mut net: ToyNet, c: f64) -> Result<ToyNet> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("cut constant must be > 0, got {c}")));
    }
    for layer in &mut net.layers {
        layer.weights.mapv_inplace(|w| w / c);
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm layers.
    Train,
    /// Running statistics in batch-norm layers.
    Eval,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    output: Array2<f64>,
    bn: Option<BnCache>,
}

/// Per-layer values kept by [`ToyNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    mode: Mode,
}

impl ForwardCache {
    /// Output of layer `i` (after its activation).
    pub fn layer_output(&self, i: usize) -> &Array2<f64> {
        &self.layers[i].output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn_gamma: Option<Array1<f64>>,
    pub bn_beta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &ToyNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    bn_gamma: l.bn.as_ref().map(|b| Array1::zeros(b.gamma.len())),
                    bn_beta: l.bn.as_ref().map(|b| Array1::zeros(b.beta.len())),
                })
                .collect(),
        }
    }

    /// Same order as [`ToyNet::params`].
    pub fn slices(&self) -> Vec<(ParamKind, &[f64])> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((
                ParamKind::Weight,
                l.weights.as_slice().expect("standard layout"),
            ));
            out.push((ParamKind::Bias, l.bias.as_slice().expect("standard layout")));
            if let (Some(g), Some(b)) = (&l.bn_gamma, &l.bn_beta) {
                out.push((ParamKind::BnScale, g.as_slice().expect("standard layout")));
                out.push((ParamKind::BnShift, b.as_slice().expect("standard layout")));
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push((
                ParamKind::Weight,
                l.weights.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                ParamKind::Bias,
                l.bias.as_slice_mut().expect("standard layout"),
            ));
            if let (Some(g), Some(b)) = (&mut l.bn_gamma, &mut l.bn_beta) {
                out.push((
                    ParamKind::BnScale,
                    g.as_slice_mut().expect("standard layout"),
                ));
                out.push((
                    ParamKind::BnShift,
                    b.as_slice_mut().expect("standard layout"),
                ));
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| *v == 0.0))
    }
}

impl ToyNet {
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec::new(l.in_dim(), l.out_dim(), l.bn.is_some(), l.activation))
            .collect()
    }

    /// Trainable parameters: per layer weights, bias, then bn scale and shift.
    pub fn params(&self) -> Vec<(ParamKind, &[f64])> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((
                ParamKind::Weight,
                l.weights.as_slice().expect("standard layout"),
            ));
            out.push((ParamKind::Bias, l.bias.as_slice().expect("standard layout")));
            if let Some(bn) = &l.bn {
                out.push((
                    ParamKind::BnScale,
                    bn.gamma.as_slice().expect("standard layout"),
                ));
                out.push((
                    ParamKind::BnShift,
                    bn.beta.as_slice().expect("standard layout"),
                ));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push((
                ParamKind::Weight,
                l.weights.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                ParamKind::Bias,
                l.bias.as_slice_mut().expect("standard layout"),
            ));
            if let Some(bn) = &mut l.bn {
                out.push((
                    ParamKind::BnScale,
                    bn.gamma.as_slice_mut().expect("standard layout"),
                ));
                out.push((
                    ParamKind::BnShift,
                    bn.beta.as_slice_mut().expect("standard layout"),
                ));
            }
        }
        out
    }

    /// Batch-norm running statistics.
    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Some(bn) = &mut l.bn {
                out.push(bn.running_mean.as_slice_mut().expect("standard layout"));
                out.push(bn.running_var.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some(bn) = &l.bn {
                out.push(bn.running_mean.as_slice().expect("standard layout"));
                out.push(bn.running_var.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.bn.is_some())
    }

    pub fn forward(&self, inputs: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network takes {} inputs, batch has {}",
                self.in_dim(),
                inputs.ncols()
            )));
        }
        let b = inputs.nrows();
        if mode == Mode::Train && self.has_batch_norm() && b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = inputs.to_owned();
        for layer in &self.layers {
            let mut h = x.dot(&layer.weights.t()) + &layer.bias;
            let bn_cache = match &layer.bn {
                None => None,
                Some(bn) => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mean = h.mean_axis(Axis(0)).expect("b >= 2");
                            let var = (&h - &mean)
                                .mapv(|v| v * v)
                                .mean_axis(Axis(0))
                                .expect("b >= 2");
                            (mean, var)
                        }
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let x_hat = (&h - &mean) * &inv_std;
                    h = &x_hat * &bn.gamma + &bn.beta;
                    Some(BnCache {
                        x_hat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                    })
                }
            };
            let out = match layer.activation {
                Activation::Relu => h.mapv(|v| v.max(0.0)),
                Activation::Identity => h.clone(),
            };
            caches.push(LayerCache {
                input: x,
                pre_activation: h,
                output: out.clone(),
                bn: bn_cache,
            });
            x = out;
        }
        Ok((
            x,
            ForwardCache {
                layers: caches,
                mode,
            },
        ))
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running statistics.
    pub fn commit_batch_stats(&mut self, cache: &ForwardCache) -> Result<()> {
        self.check_cache(cache)?;
        if cache.mode != Mode::Train {
            return Ok(());
        }
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(bc)) = (&mut layer.bn, &lc.bn) {
                bn.running_mean =
                    &bn.running_mean * BN_MOMENTUM + &bc.batch_mean * (1.0 - BN_MOMENTUM);
                bn.running_var =
                    &bn.running_var * BN_MOMENTUM + &bc.batch_var * (1.0 - BN_MOMENTUM);
            }
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.layers.len() == self.layers.len()
            && self.layers.iter().zip(&cache.layers).all(|(l, c)| {
                c.input.ncols() == l.in_dim()
                    && c.output.ncols() == l.out_dim()
                    && c.bn.is_some() == l.bn.is_some()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "forward cache does not match network".into(),
            ))
        }
    }

    /// Reverse pass. Returns parameter gradients and the gradient with respect
    /// to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache)?;
        let last = &cache.layers.last().expect("non-empty").output;
        if upstream.dim() != last.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                last.dim()
            )));
        }
        let b = upstream.nrows() as f64;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dy = upstream.to_owned();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let mut da = match layer.activation {
                Activation::Relu => {
                    let mut d = dy;
                    d.zip_mut_with(&lc.pre_activation, |g, a| {
                        if *a <= 0.0 {
                            *g = 0.0
                        }
                    });
                    d
                }
                Activation::Identity => dy,
            };
            let (bn_gamma, bn_beta) = match (&layer.bn, &lc.bn) {
                (Some(bn), Some(bc)) => {
                    let dgamma = (&da * &bc.x_hat).sum_axis(Axis(0));
                    let dbeta = da.sum_axis(Axis(0));
                    let dx_hat = &da * &bn.gamma;
                    da = match cache.mode {
                        Mode::Train => {
                            let sum = dx_hat.sum_axis(Axis(0));
                            let dot = (&dx_hat * &bc.x_hat).sum_axis(Axis(0));
                            let centered = &dx_hat * b - &sum - &bc.x_hat * &dot;
                            centered * &bc.inv_std / b
                        }
                        Mode::Eval => dx_hat * &bc.inv_std,
                    };
                    (Some(dgamma), Some(dbeta))
                }
                _ => (None, None),
            };
            grads.push(LayerGrad {
                weights: da.t().dot(&lc.input),
                bias: da.sum_axis(Axis(0)),
                bn_gamma,
                bn_beta,
            });
            dy = da.dot(&layer.weights);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, dy))
    }

    pub fn check_same_architecture(&self, other: &ToyNet) -> Result<()> {
        if self.specs() != other.specs() {
            return Err(Error::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                self.specs(),
                other.specs()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_inputs(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_vec((b, d), gaussian_vec(rng, b * d)).unwrap()
    }

    fn two_layer(d: usize, bn: bool, seed: u64) -> ToyNet {
        let mut net = init_network(
            &[
                LayerSpec::new(d, 5, bn, Activation::Relu),
                LayerSpec::new(5, 3, bn, Activation::Identity),
            ],
            seed,
        )
        .unwrap();
        // Non-trivial bias and affine parameters.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for (kind, p) in net.params_mut() {
            if kind != ParamKind::Weight {
                p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
            }
        }
        for buf in net.buffers_mut() {
            buf.iter_mut()
                .for_each(|v| *v += rng.random_range(0.0..0.5));
        }
        net
    }

    #[test]
    fn init_is_deterministic_and_validated() {
        let spec = [LayerSpec::new(4, 4, false, Activation::Relu)];
        assert_eq!(
            init_network(&spec, 7).unwrap(),
            init_network(&spec, 7).unwrap()
        );
        assert_ne!(
            init_network(&spec, 7).unwrap().layers[0].weights,
            init_network(&spec, 8).unwrap().layers[0].weights
        );
        assert!(matches!(init_network(&[], 1), Err(Error::ShapeMismatch(_))));
        let bad = [
            LayerSpec::new(4, 3, false, Activation::Relu),
            LayerSpec::new(4, 2, false, Activation::Relu),
        ];
        assert!(matches!(
            init_network(&bad, 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let net = init_network(&[LayerSpec::new(200, 200, false, Activation::Relu)], 3).unwrap();
        let w = &net.layers[0].weights;
        let var = w.mapv(|v| v * v).mean().unwrap();
        assert!((var - 0.01).abs() < 0.0005, "{var}");
        assert!(net.layers[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn cut_initialize_examples() {
        let net = two_layer(4, true, 1);
        assert_eq!(cut_initialize(net.clone(), 1.0).unwrap(), net);
        let halved = cut_initialize(net.clone(), 2.0).unwrap();
        for (a, b) in halved.layers.iter().zip(&net.layers) {
            assert_eq!(a.weights, &b.weights / 2.0);
            assert_eq!(a.bias, b.bias);
            assert_eq!(a.bn, b.bn);
        }
        assert!(matches!(cut_initialize(net, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cut_scales_linear_nets_geometrically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for layers in 1..=4 {
            let specs: Vec<_> = (0..layers)
                .map(|_| LayerSpec::new(6, 6, false, Activation::Identity))
                .collect();
            let net = init_network(&specs, 10 + layers as u64).unwrap();
            let x = random_inputs(&mut rng, 5, 6);
            let (before, _) = net.forward(&x, Mode::Eval).unwrap();
            let c = 3.0;
            let (after, _) = cut_initialize(net, c)
                .unwrap()
                .forward(&x, Mode::Eval)
                .unwrap();
            let expected = &before * c.powi(-layers);
            for (a, e) in after.iter().zip(expected.iter()) {
                assert!((a - e).abs() <= 1e-10 * e.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn identity_layer_passes_through() {
        let mut net =
            init_network(&[LayerSpec::new(3, 3, false, Activation::Identity)], 0).unwrap();
        net.layers[0].weights = Array2::eye(3);
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]];
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn batch_norm_on_constant_batch_is_zero() {
        let net = init_network(&[LayerSpec::new(3, 4, true, Activation::Identity)], 0).unwrap();
        let x = Array2::from_elem((5, 3), 0.7);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let single = Array2::from_elem((1, 3), 0.7);
        assert_eq!(
            net.forward(&single, Mode::Train).unwrap_err(),
            Error::BatchTooSmall(1)
        );
        assert!(net.forward(&single, Mode::Eval).is_ok());
    }

    #[test]
    fn forward_matches_per_sample_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = two_layer(4, false, 9);
        let x = random_inputs(&mut rng, 6, 4);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        for r in 0..6 {
            let mut v: Vec<f64> = x.row(r).to_vec();
            for l in &net.layers {
                let mut next = vec![0.0; l.out_dim()];
                for (o, n) in next.iter_mut().enumerate() {
                    *n = l.bias[o]
                        + (0..l.in_dim())
                            .map(|i| l.weights[[o, i]] * v[i])
                            .sum::<f64>();
                    if l.activation == Activation::Relu {
                        *n = n.max(0.0);
                    }
                }
                v = next;
            }
            for (o, val) in v.iter().enumerate() {
                assert!((y[[r, o]] - val).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_stats_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = init_network(&[LayerSpec::new(3, 2, true, Activation::Identity)], 1).unwrap();
        let x = random_inputs(&mut rng, 8, 3);
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        let h = x.dot(&net.layers[0].weights.t());
        let mean = h.mean_axis(Axis(0)).unwrap();
        net.commit_batch_stats(&cache).unwrap();
        let bn = net.layers[0].bn.as_ref().unwrap();
        for k in 0..2 {
            assert!((bn.running_mean[k] - 0.1 * mean[k]).abs() < 1e-12);
            assert!(bn.running_var[k] >= 0.0);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = two_layer(4, true, 3);
        let x = random_inputs(&mut rng, 6, 4);
        let (y, cache) = net.forward(&x, Mode::Train).unwrap();
        let (g, dx) = net.backward(&cache, &Array2::zeros(y.raw_dim())).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_net_quadratic_probe() {
        // y = w x + b, loss = y^2 / 2 summed: dL/dw = sum (w x + b) x, dL/db = sum (w x + b).
        let mut net =
            init_network(&[LayerSpec::new(1, 1, false, Activation::Identity)], 0).unwrap();
        net.layers[0].weights[[0, 0]] = 1.5;
        net.layers[0].bias[0] = -0.5;
        let x = array![[2.0], [-1.0]];
        let (y, cache) = net.forward(&x, Mode::Train).unwrap();
        let (g, _) = net.backward(&cache, &y).unwrap();
        let (x0, x1) = (2.0, -1.0);
        let dw = (1.5 * x0 - 0.5) * x0 + (1.5 * x1 - 0.5) * x1;
        let db = (1.5 * x0 - 0.5) + (1.5 * x1 - 0.5);
        assert!((g.layers[0].weights[[0, 0]] - dw).abs() < 1e-14);
        assert!((g.layers[0].bias[0] - db).abs() < 1e-14);
    }

    fn probe_loss(y: &Array2<f64>, probe: &Array2<f64>) -> f64 {
        (y * probe).sum() + 0.5 * y.mapv(|v| v * v).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10u64 {
            for (bn, mode) in [
                (false, Mode::Train),
                (true, Mode::Train),
                (true, Mode::Eval),
            ] {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let net = two_layer(4, bn, seed);
                let x = random_inputs(&mut rng, 7, 4);
                let (y, cache) = net.forward(&x, mode).unwrap();
                let probe = random_inputs(&mut rng, 7, 3);
                let (g, dx) = net.backward(&cache, &(&probe + &y)).unwrap();

                let h = 1e-5;
                let loss_of = |n: &ToyNet, x: &Array2<f64>| {
                    probe_loss(&n.forward(x, mode).unwrap().0, &probe)
                };
                let analytic: Vec<f64> = g.slices().iter().flat_map(|(_, s)| s.to_vec()).collect();
                let mut idx = 0;
                let n_params: Vec<usize> = net.params().iter().map(|(_, s)| s.len()).collect();
                for (slot, len) in n_params.iter().enumerate() {
                    for k in 0..*len {
                        let mut plus = net.clone();
                        plus.params_mut()[slot].1[k] += h;
                        let mut minus = net.clone();
                        minus.params_mut()[slot].1[k] -= h;
                        let fd = (loss_of(&plus, &x) - loss_of(&minus, &x)) / (2.0 * h);
                        let a = analytic[idx];
                        assert!(
                            (a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()) + 1e-8,
                            "seed {seed} bn {bn} slot {slot}[{k}]: {a} vs {fd}"
                        );
                        idx += 1;
                    }
                }
                for r in 0..7 {
                    for c in 0..4 {
                        let mut xp = x.clone();
                        xp[[r, c]] += h;
                        let mut xm = x.clone();
                        xm[[r, c]] -= h;
                        let fd = (loss_of(&net, &xp) - loss_of(&net, &xm)) / (2.0 * h);
                        assert!(
                            (dx[[r, c]] - fd).abs() <= 1e-5 * fd.abs().max(dx[[r, c]].abs()) + 1e-8
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = two_layer(4, false, 1);
        let b = init_network(&[LayerSpec::new(4, 3, false, Activation::Relu)], 1).unwrap();
        let x = random_inputs(&mut rng, 3, 4);
        let (y, cache) = b.forward(&x, Mode::Train).unwrap();
        assert!(matches!(
            a.backward(&cache, &y),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
