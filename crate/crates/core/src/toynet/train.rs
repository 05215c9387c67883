//! Self-supervised training loop on synthetic data.
//!
//! The encoder is a backbone (`d_in -> hidden`, relu) followed by a one-layer
//! projector (`hidden -> proj_dim`, optional batch-norm). In
//! [`TrainMode::AttractionOnly`] a predictor (`proj_dim -> pred_hidden -> proj_dim`,
//! batch-norm in the middle) sits on the online branch and each view is pulled
//! toward the stop-gradient projection of the other view from an EMA twin of
//! the encoder. [`TrainMode::InfoNce`] uses both views of the batch as one
//! InfoNCE problem with no predictor.

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::toynet::data::SyntheticDataset;
use crate::toynet::knn::knn_accuracy;
use crate::toynet::network::{
    cut_initialize, init_network, Activation, ForwardCache, Gradients, LayerSpec, Mode, ToyNet,
};
use crate::toynet::objective::{attraction_loss, infonce_batch, paired_cosines};
use crate::toynet::optim::{ema_update, MomentumSgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Stop-gradient cosine attraction through a predictor.
    AttractionOnly,
    #[serde(rename = "infonce")]
    InfoNce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub proj_dim: usize,
    pub pred_hidden: usize,
    /// Batch-norm on the projector output.
    pub head_bn: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d_in: 16,
            hidden: 32,
            proj_dim: 16,
            pred_hidden: 8,
            head_bn: false,
        }
    }
}

impl ArchConfig {
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(self.d_in, self.hidden, false, Activation::Relu),
            LayerSpec::new(
                self.hidden,
                self.proj_dim,
                self.head_bn,
                Activation::Identity,
            ),
        ]
    }

    pub fn predictor_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(self.proj_dim, self.pred_hidden, true, Activation::Relu),
            LayerSpec::new(self.pred_hidden, self.proj_dim, false, Activation::Identity),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub ema_tau: f64,
    pub cut_constant: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::InfoNce,
            learning_rate: 0.05,
            weight_decay: 5e-4,
            momentum: 0.9,
            ema_tau: 0.0,
            cut_constant: 1.0,
            epochs: 100,
            batch_size: 32,
            knn_k: 5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_tau) {
            return bad(format!("ema tau must lie in [0, 1], got {}", self.ema_tau));
        }
        if !(self.cut_constant > 0.0 && self.cut_constant.is_finite()) {
            return bad(format!(
                "cut constant must be > 0, got {}",
                self.cut_constant
            ));
        }
        let min_batch = if self.mode == TrainMode::InfoNce {
            3
        } else {
            2
        };
        if self.batch_size < min_batch {
            return bad(format!(
                "batch size must be >= {min_batch}, got {}",
                self.batch_size
            ));
        }
        if self.knn_k == 0 {
            return bad("knn k must be >= 1".into());
        }
        Ok(())
    }
}

/// Online encoder, optional predictor and EMA target encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SslModel {
    pub encoder: ToyNet,
    /// Layers of `encoder` that form the backbone evaluated by k-nn.
    pub backbone_layers: usize,
    pub predictor: Option<ToyNet>,
    pub target: Option<ToyNet>,
}

impl SslModel {
    /// Fresh networks with every weight divided by `cut_constant`. The
    /// target starts as a copy of the cut encoder.
    pub fn new(arch: &ArchConfig, mode: TrainMode, cut_constant: f64, seed: u64) -> Result<Self> {
        let encoder = cut_initialize(
            init_network(&arch.encoder_specs(), derive_seed(seed, 0, 0))?,
            cut_constant,
        )?;
        let (predictor, target) = match mode {
            TrainMode::AttractionOnly => (
                Some(cut_initialize(
                    init_network(&arch.predictor_specs(), derive_seed(seed, 0, 1))?,
                    cut_constant,
                )?),
                Some(encoder.clone()),
            ),
            TrainMode::InfoNce => (None, None),
        };
        Ok(Self {
            encoder,
            backbone_layers: 1,
            predictor,
            target,
        })
    }

    /// Backbone features (eval mode) used for k-nn.
    pub fn backbone_features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, cache) = self.encoder.forward(x, Mode::Eval)?;
        Ok(cache.layer_output(self.backbone_layers - 1).clone())
    }

    /// Projector outputs.
    pub fn embed(&self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        Ok(self.encoder.forward(x, mode)?.0)
    }
}

/// Loss, projector outputs and gradients of one batch of view pairs.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub loss: f64,
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub encoder_grads: Gradients,
    pub predictor_grads: Option<Gradients>,
    encoder_caches: [ForwardCache; 2],
    predictor_caches: Option<[ForwardCache; 2]>,
}

fn add_grads(a: &mut Gradients, b: &Gradients) {
    for ((_, x), (_, y)) in a.slices_mut().into_iter().zip(b.slices()) {
        x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
    }
}

/// Forward and backward over one batch of view pairs.
pub fn batch_pass(
    model: &SslModel,
    x1: &Array2<f64>,
    x2: &Array2<f64>,
    mode: TrainMode,
) -> Result<BatchPass> {
    let (z1, c1) = model.encoder.forward(x1, Mode::Train)?;
    let (z2, c2) = model.encoder.forward(x2, Mode::Train)?;
    match mode {
        TrainMode::InfoNce => {
            let (loss, d1, d2) = infonce_batch(&z1, &z2)?;
            let (mut g, _) = model.encoder.backward(&c1, &d1)?;
            add_grads(&mut g, &model.encoder.backward(&c2, &d2)?.0);
            Ok(BatchPass {
                loss,
                z1,
                z2,
                encoder_grads: g,
                predictor_grads: None,
                encoder_caches: [c1, c2],
                predictor_caches: None,
            })
        }
        TrainMode::AttractionOnly => {
            let (pred, target) = match (&model.predictor, &model.target) {
                (Some(p), Some(t)) => (p, t),
                _ => {
                    return Err(Error::InvalidConfig(
                        "attraction mode needs a predictor and a target encoder".into(),
                    ))
                }
            };
            let (t1, _) = target.forward(x1, Mode::Train)?;
            let (t2, _) = target.forward(x2, Mode::Train)?;
            let (p1, pc1) = pred.forward(&z1, Mode::Train)?;
            let (p2, pc2) = pred.forward(&z2, Mode::Train)?;
            let (loss, dp1, dp2) = attraction_loss(&p1, &p2, &t1, &t2)?;
            let (mut gp, dz1) = pred.backward(&pc1, &dp1)?;
            let (gp2, dz2) = pred.backward(&pc2, &dp2)?;
            add_grads(&mut gp, &gp2);
            let (mut ge, _) = model.encoder.backward(&c1, &dz1)?;
            add_grads(&mut ge, &model.encoder.backward(&c2, &dz2)?.0);
            Ok(BatchPass {
                loss,
                z1,
                z2,
                encoder_grads: ge,
                predictor_grads: Some(gp),
                encoder_caches: [c1, c2],
                predictor_caches: Some([pc1, pc2]),
            })
        }
    }
}

/// Per-epoch diagnostics. Epoch 0 is measured before any update; epoch `e`
/// averages over the training batches of that epoch, and `knn_accuracy` is
/// taken on the held-out split after the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub mean_embedding_norm: f64,
    pub knn_accuracy: f64,
    /// Fraction of positive pairs with angle above pi/2.
    pub opposite_halves_rate: f64,
    /// Fraction of positive pairs with angle above 7 pi / 8.
    pub opposite_halves_rate_strict: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Default)]
struct Accumulator {
    norm_sum: f64,
    norm_count: usize,
    opp: usize,
    opp_strict: usize,
    pairs: usize,
    loss_sum: f64,
    batches: usize,
}

impl Accumulator {
    fn record(&mut self, pass: &BatchPass) -> Result<()> {
        for z in [&pass.z1, &pass.z2] {
            for r in z.rows() {
                self.norm_sum += r.dot(&r).sqrt();
                self.norm_count += 1;
            }
        }
        let strict = (7.0 * PI / 8.0).cos();
        for c in paired_cosines(&pass.z1, &pass.z2)? {
            let phi = c.acos();
            self.opp += usize::from(phi > FRAC_PI_2);
            self.opp_strict += usize::from(c < strict);
            self.pairs += 1;
        }
        self.loss_sum += pass.loss;
        self.batches += 1;
        Ok(())
    }

    fn finish(&self, epoch: usize, knn: f64) -> MetricsRow {
        MetricsRow {
            epoch,
            mean_embedding_norm: self.norm_sum / self.norm_count as f64,
            knn_accuracy: knn,
            opposite_halves_rate: self.opp as f64 / self.pairs as f64,
            opposite_halves_rate_strict: self.opp_strict as f64 / self.pairs as f64,
            mean_loss: self.loss_sum / self.batches as f64,
        }
    }
}

fn batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains `model` in place and returns one metrics row per epoch, starting
/// with epoch 0. `observer` runs after every row with the epoch index.
pub fn train_with_observer<F>(
    model: &mut SslModel,
    train: &SyntheticDataset,
    eval: &SyntheticDataset,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<Vec<MetricsRow>>
where
    F: FnMut(usize, &SslModel) -> Result<()>,
{
    cfg.validate()?;
    if (cfg.mode == TrainMode::AttractionOnly) != model.predictor.is_some() {
        return Err(Error::InvalidConfig(
            "predictor presence does not match the training mode".into(),
        ));
    }
    if train.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "batch size {} exceeds the {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, 0));
    let eval_x = eval.inputs(&(0..eval.len()).collect::<Vec<_>>());
    let eval_labels = eval.labels();
    let knn = |m: &SslModel| knn_accuracy(&m.backbone_features(&eval_x)?, &eval_labels, cfg.knn_k);

    let mut enc_opt = MomentumSgd::new(
        &model.encoder,
        cfg.learning_rate,
        cfg.momentum,
        cfg.weight_decay,
    )?;
    let mut pred_opt = model
        .predictor
        .as_ref()
        .map(|p| MomentumSgd::new(p, cfg.learning_rate, cfg.momentum, cfg.weight_decay))
        .transpose()?;

    let mut rows = Vec::with_capacity(cfg.epochs + 1);
    let mut acc = Accumulator::default();
    for idx in batches(train.len(), cfg.batch_size, &mut rng) {
        let x1 = train.augment(&idx, &mut rng);
        let x2 = train.augment(&idx, &mut rng);
        acc.record(&batch_pass(model, &x1, &x2, cfg.mode)?)?;
    }
    rows.push(acc.finish(0, knn(model)?));
    observer(0, model)?;

    for epoch in 1..=cfg.epochs {
        let mut acc = Accumulator::default();
        for idx in batches(train.len(), cfg.batch_size, &mut rng) {
            let x1 = train.augment(&idx, &mut rng);
            let x2 = train.augment(&idx, &mut rng);
            let pass = batch_pass(model, &x1, &x2, cfg.mode)?;
            acc.record(&pass)?;

            enc_opt.step(&mut model.encoder, &pass.encoder_grads)?;
            for c in &pass.encoder_caches {
                model.encoder.commit_batch_stats(c)?;
            }
            if let (Some(pred), Some(opt), Some(g), Some(caches)) = (
                model.predictor.as_mut(),
                pred_opt.as_mut(),
                pass.predictor_grads.as_ref(),
                pass.predictor_caches.as_ref(),
            ) {
                opt.step(pred, g)?;
                for c in caches {
                    pred.commit_batch_stats(c)?;
                }
            }
            if let Some(target) = model.target.as_mut() {
                ema_update(&model.encoder, target, cfg.ema_tau)?;
            }
        }
        let row = acc.finish(epoch, knn(model)?);
        if ![row.mean_embedding_norm, row.mean_loss]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain(format!("training diverged at epoch {epoch}")));
        }
        rows.push(row);
        observer(epoch, model)?;
    }
    Ok(rows)
}

pub fn train(
    model: &mut SslModel,
    train_data: &SyntheticDataset,
    eval_data: &SyntheticDataset,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>> {
    train_with_observer(model, train_data, eval_data, cfg, |_, _| Ok(()))
}

/// First epoch whose k-nn accuracy reaches `threshold`.
pub fn first_epoch_reaching(rows: &[MetricsRow], threshold: f64) -> Option<usize> {
    rows.iter()
        .find(|r| r.knn_accuracy >= threshold)
        .map(|r| r.epoch)
}

/// One positive pair in a 2-dimensional projector space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSegment {
    pub epoch: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub cos: f64,
}

/// Embeds two augmented views of every sample (eval mode) and returns the
/// segment between them with its cosine similarity.
pub fn export_latent_2d<R: Rng + ?Sized>(
    model: &SslModel,
    data: &SyntheticDataset,
    epoch: usize,
    rng: &mut R,
) -> Result<Vec<LatentSegment>> {
    let out = model.encoder.out_dim();
    if out != 2 {
        return Err(Error::WrongOutputDim(out));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let a = model.embed(&data.augment(&idx, rng), Mode::Eval)?;
    let b = model.embed(&data.augment(&idx, rng), Mode::Eval)?;
    let cos = paired_cosines(&a, &b)?;
    Ok((0..data.len())
        .map(|n| LatentSegment {
            epoch,
            x1: a[[n, 0]],
            y1: a[[n, 1]],
            x2: b[[n, 0]],
            y2: b[[n, 1]],
            cos: cos[n],
        })
        .collect())
}
