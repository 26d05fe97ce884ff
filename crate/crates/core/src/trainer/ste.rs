//! Straight-through-estimator training of a binarized MLP.
//!
//! Real-valued shadow weights are binarized by `sign` in every forward
//! pass; gradients flow through `sign` unchanged wherever the batch-norm
//! output lies in `[-1, 1]` and are zeroed elsewhere. Shadow weights are
//! clipped to `[-1, 1]` after every Adam step.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bnn::{evaluate, fold_batchnorm, BinWeightMatrix, BnnModel, EncodedSet, HiddenLayer, OutputHead};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Learning rate is multiplied by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f32,
    pub lr_decay_every: usize,
    pub seed: u64,
    /// Pixel binarization threshold, as a fraction of full scale.
    pub t_pix: f64,
    pub bn_eps: f32,
    pub bn_momentum: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![512, 512, 512],
            classes: 10,
            epochs: 10,
            batch_size: 100,
            learning_rate: 3e-3,
            lr_decay: 0.5,
            lr_decay_every: 3,
            seed: 1,
            t_pix: 0.5,
            bn_eps: 1e-4,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.batch_size > 1
            && self.learning_rate > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay_every > 0
            && self.classes > 1
            && self.bn_eps > 0.0
            && self.bn_momentum > 0.0
            && self.bn_momentum <= 1.0;
        if !positive || self.hidden.contains(&0) || !(0.0..=1.0).contains(&self.t_pix) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f32 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Real-valued parameters of one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowLayer {
    /// `fan_in x outputs`.
    pub weights: Array2<f32>,
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
}

/// Head: `scale · (x · sign(W)) + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowHead {
    pub weights: Array2<f32>,
    pub scale: f32,
    pub bias: Array1<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowModel {
    pub hidden: Vec<ShadowLayer>,
    pub head: ShadowHead,
    pub bn_eps: f32,
}

#[inline]
fn sign(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f32) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

impl ShadowModel {
    pub fn init(input: usize, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = Vec::with_capacity(config.hidden.len());
        let mut fan_in = input;
        for &n in &config.hidden {
            let limit = (6.0 / (fan_in + n) as f32).sqrt();
            hidden.push(ShadowLayer {
                weights: uniform(rng, fan_in, n, limit),
                gamma: Array1::ones(n),
                beta: Array1::zeros(n),
                running_mean: Array1::zeros(n),
                running_var: Array1::ones(n),
            });
            fan_in = n;
        }
        let limit = (6.0 / (fan_in + config.classes) as f32).sqrt();
        ShadowModel {
            hidden,
            head: ShadowHead {
                weights: uniform(rng, fan_in, config.classes, limit),
                scale: 1.0 / (fan_in as f32).sqrt(),
                bias: Array1::zeros(config.classes),
            },
            bn_eps: config.bn_eps,
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.head.weights.nrows(), |l| l.weights.nrows())
    }

    /// Inference with binarized weights, running statistics and real-valued
    /// batch norm (no threshold folding).
    pub fn predict(&self, x: &Array2<f32>) -> Vec<usize> {
        let mut act = x.clone();
        for layer in &self.hidden {
            let z = act.dot(&layer.weights.mapv(sign));
            let inv_std = layer.running_var.mapv(|v| 1.0 / (v + self.bn_eps).sqrt());
            let a = (&z - &layer.running_mean) * &inv_std * &layer.gamma + &layer.beta;
            act = a.mapv(sign);
        }
        let logits = act.dot(&self.head.weights.mapv(sign)) * self.head.scale + &self.head.bias;
        logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for i in 1..r.len() {
                    if r[i] > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Accuracy of [`ShadowModel::predict`] on a binarized set.
    pub fn accuracy(&self, set: &EncodedSet) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut correct = 0;
        for start in (0..set.len()).step_by(1000) {
            let idx: Vec<usize> = (start..(start + 1000).min(set.len())).collect();
            let x = batch_matrix(set, &idx, self.input_width());
            for (p, &i) in self.predict(&x).iter().zip(&idx) {
                correct += (*p == set.labels[i] as usize) as usize;
            }
        }
        Ok(correct as f64 / set.len() as f64)
    }
}

fn batch_matrix(set: &EncodedSet, idx: &[usize], width: usize) -> Array2<f32> {
    let mut x = Array2::<f32>::from_elem((idx.len(), width), -1.0);
    for (r, &i) in idx.iter().enumerate() {
        let input = &set.inputs[i];
        let mut row = x.row_mut(r);
        for (w, &word) in input.words().iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                row[w * 64 + b] = 1.0;
                bits &= bits - 1;
            }
        }
    }
    x
}

/// Binarizes weights and folds batch norm into even thresholds.
pub fn finalize(shadow: &ShadowModel) -> Result<BnnModel> {
    let to_f64 = |a: &Array1<f32>| a.iter().map(|&v| v as f64).collect::<Vec<_>>();
    let mut hidden = Vec::with_capacity(shadow.hidden.len());
    for layer in &shadow.hidden {
        let (fan_in, n) = layer.weights.dim();
        let folded = fold_batchnorm(
            &to_f64(&layer.gamma),
            &to_f64(&layer.beta),
            &to_f64(&layer.running_mean),
            &to_f64(&layer.running_var),
            shadow.bn_eps as f64,
            fan_in,
        )?;
        let rows = fan_in + folded.padded as usize;
        let w = BinWeightMatrix::from_fn(rows, n, |j, k| {
            if j == fan_in {
                true
            } else {
                (layer.weights[[j, k]] >= 0.0) != folded.flip[k]
            }
        })?;
        hidden.push(HiddenLayer::build(w, folded.thresholds, folded.padded)?);
    }

    let head = &shadow.head;
    let (fan_in, classes) = head.weights.dim();
    if head.scale.is_nan() || head.scale <= 0.0 {
        return Err(Error::DegenerateChannel {
            channel: 0,
            reason: "head scale is not positive",
        });
    }
    let padded = fan_in % 2 == 1;
    let w = BinWeightMatrix::from_fn(fan_in + padded as usize, classes, |j, k| {
        j == fan_in || head.weights[[j, k]] >= 0.0
    })?;
    let bias = head
        .bias
        .iter()
        .map(|&b| ((b / head.scale) as f64).round() as i32 - padded as i32)
        .collect();
    let head = OutputHead::build(w, bias, padded)?;
    BnnModel::new(hidden, head)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
}

const ADAM_B1: f32 = 0.9;
const ADAM_B2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f32>,
        grads: impl Iterator<Item = &'a f32>,
        lr: f32,
        t: i32,
    ) {
        let c1 = 1.0 - ADAM_B1.powi(t);
        let c2 = 1.0 - ADAM_B2.powi(t);
        for (((p, &g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
            *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

struct LayerOpt {
    w: Adam,
    gamma: Adam,
    beta: Adam,
}

struct Optimizer {
    hidden: Vec<LayerOpt>,
    head_w: Adam,
    head_scale: Adam,
    head_bias: Adam,
    t: i32,
}

impl Optimizer {
    fn new(model: &ShadowModel) -> Self {
        Optimizer {
            hidden: model
                .hidden
                .iter()
                .map(|l| LayerOpt {
                    w: Adam::new(l.weights.len()),
                    gamma: Adam::new(l.gamma.len()),
                    beta: Adam::new(l.beta.len()),
                })
                .collect(),
            head_w: Adam::new(model.head.weights.len()),
            head_scale: Adam::new(1),
            head_bias: Adam::new(model.head.bias.len()),
            t: 0,
        }
    }
}

struct LayerCache {
    input: Array2<f32>,
    binary: Array2<f32>,
    zhat: Array2<f32>,
    inv_std: Array1<f32>,
    pre: Array2<f32>,
}

/// One forward/backward/update step on a batch; returns the mean loss.
fn train_step(
    model: &mut ShadowModel,
    opt: &mut Optimizer,
    x: Array2<f32>,
    labels: &[u8],
    lr: f32,
    momentum: f32,
) -> f32 {
    let batch = x.nrows() as f32;
    let eps = model.bn_eps;
    let mut caches = Vec::with_capacity(model.hidden.len());
    let mut act = x;
    for layer in model.hidden.iter_mut() {
        let binary = layer.weights.mapv(sign);
        let z = act.dot(&binary);
        let mean = z.mean_axis(Axis(0)).unwrap();
        let centered = &z - &mean;
        let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let zhat = &centered * &inv_std;
        let pre = &zhat * &layer.gamma + &layer.beta;

        let unbiased = batch / (batch - 1.0);
        Zip::from(&mut layer.running_mean)
            .and(&mean)
            .for_each(|r, &m| *r = (1.0 - momentum) * *r + momentum * m);
        Zip::from(&mut layer.running_var)
            .and(&var)
            .for_each(|r, &v| *r = (1.0 - momentum) * *r + momentum * v * unbiased);

        let next = pre.mapv(sign);
        caches.push(LayerCache {
            input: act,
            binary,
            zhat,
            inv_std,
            pre,
        });
        act = next;
    }

    // head and softmax cross-entropy
    let head_binary = model.head.weights.mapv(sign);
    let z = act.dot(&head_binary);
    let mut probs = &z * model.head.scale + &model.head.bias;
    let mut loss = 0.0f32;
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        loss -= row[label as usize].max(1e-12).ln();
        row[label as usize] -= 1.0;
    }
    let dlogits = probs / batch;

    let dscale = (&dlogits * &z).sum();
    let dbias = dlogits.sum_axis(Axis(0));
    let dz = &dlogits * model.head.scale;
    let dhead_w = act.t().dot(&dz);
    let mut dact = dz.dot(&head_binary.t());

    let mut grads = Vec::with_capacity(caches.len());
    for (li, cache) in caches.iter().enumerate().rev() {
        let layer = &model.hidden[li];
        let mut da = dact;
        Zip::from(&mut da).and(&cache.pre).for_each(|d, &p| {
            if p.abs() > 1.0 {
                *d = 0.0;
            }
        });
        let dgamma = (&da * &cache.zhat).sum_axis(Axis(0));
        let dbeta = da.sum_axis(Axis(0));
        let dzhat = da * &layer.gamma;
        let sum_dzhat = dzhat.sum_axis(Axis(0));
        let sum_dzhat_zhat = (&dzhat * &cache.zhat).sum_axis(Axis(0));
        let mut dz = dzhat;
        Zip::from(dz.rows_mut()).and(cache.zhat.rows()).for_each(|mut d, zh| {
            Zip::from(&mut d)
                .and(&zh)
                .and(&sum_dzhat)
                .and(&sum_dzhat_zhat)
                .and(&cache.inv_std)
                .for_each(|d, &zh, &s1, &s2, &is| {
                    *d = is / batch * (batch * *d - s1 - zh * s2);
                });
        });
        let dw = cache.input.t().dot(&dz);
        dact = if li > 0 {
            dz.dot(&cache.binary.t())
        } else {
            Array2::zeros((0, 0))
        };
        grads.push((li, dw, dgamma, dbeta));
    }

    opt.t += 1;
    let t = opt.t;
    for (li, dw, dgamma, dbeta) in grads {
        let layer = &mut model.hidden[li];
        let lo = &mut opt.hidden[li];
        lo.w.step(layer.weights.iter_mut(), dw.iter(), lr, t);
        layer.weights.mapv_inplace(|w| w.clamp(-1.0, 1.0));
        lo.gamma.step(layer.gamma.iter_mut(), dgamma.iter(), lr, t);
        lo.beta.step(layer.beta.iter_mut(), dbeta.iter(), lr, t);
    }
    let head = &mut model.head;
    opt.head_w.step(head.weights.iter_mut(), dhead_w.iter(), lr, t);
    head.weights.mapv_inplace(|w| w.clamp(-1.0, 1.0));
    // the scale is optimized in log space so it cannot collapse to zero
    let mut log_scale = head.scale.ln();
    let dlog_scale = dscale * head.scale;
    opt.head_scale
        .step(std::iter::once(&mut log_scale), std::iter::once(&dlog_scale), lr, t);
    head.scale = log_scale.exp();
    opt.head_bias.step(head.bias.iter_mut(), dbias.iter(), lr, t);

    loss / batch
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f32,
    pub train_loss: f32,
    /// Accuracy of the finalized integer model on the test set.
    pub test_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub shadow: ShadowModel,
    pub history: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

/// Trains from scratch. `on_epoch` sees each epoch's statistics as they
/// are produced.
pub fn train_ste(
    config: &TrainConfig,
    train: &EncodedSet,
    test: &EncodedSet,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let width = train.inputs[0].len();
    if train
        .labels
        .iter()
        .chain(&test.labels)
        .any(|&l| l as usize >= config.classes)
    {
        return Err(Error::InvalidArgument("label outside the class range".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ShadowModel::init(width, config, &mut rng);
    let mut opt = Optimizer::new(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut warnings = Vec::new();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let x = batch_matrix(train, chunk, width);
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            loss_sum += train_step(&mut model, &mut opt, x, &labels, lr, config.bn_momentum) as f64;
            batches += 1;
        }
        let test_accuracy = evaluate(&finalize(&model)?, test)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss: (loss_sum / batches.max(1) as f64) as f32,
            test_accuracy,
        };
        if epoch + 1 >= 3 && test_accuracy < 0.15 {
            warnings.push(format!(
                "epoch {}: test accuracy {:.2}% suggests training diverged",
                epoch + 1,
                100.0 * test_accuracy
            ));
        }
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        shadow: model,
        history,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::BipolarVec;

    /// Majority vote over the inputs: separable with all-`+1` weights.
    fn separable(n: usize, width: usize, seed: u64) -> EncodedSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let bits: Vec<bool> = (0..width).map(|_| rng.gen()).collect();
            labels.push((2 * bits.iter().filter(|&&b| b).count() > width) as u8);
            inputs.push(BipolarVec::from_bools(bits));
        }
        EncodedSet { inputs, labels }
    }

    /// A single (head-only) layer.
    fn toy_config() -> TrainConfig {
        TrainConfig {
            hidden: vec![],
            classes: 2,
            epochs: 10,
            batch_size: 20,
            learning_rate: 1e-2,
            lr_decay_every: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        // odd width exercises the bias-row padding
        let train = separable(400, 7, 1);
        let outcome = train_ste(&toy_config(), &train, &train, |_| {}).unwrap();
        let model = finalize(&outcome.shadow).unwrap();
        let acc = evaluate(&model, &train).unwrap();
        assert!(acc >= 0.99, "{acc}");
        assert_eq!(outcome.history.len(), 10);
    }

    #[test]
    fn same_seed_same_weights() {
        let train = separable(200, 8, 2);
        let config = TrainConfig {
            epochs: 2,
            ..toy_config()
        };
        let a = train_ste(&config, &train, &train, |_| {}).unwrap();
        let b = train_ste(&config, &train, &train, |_| {}).unwrap();
        assert_eq!(a.shadow, b.shadow);
        assert_eq!(finalize(&a.shadow).unwrap(), finalize(&b.shadow).unwrap());
    }

    #[test]
    fn finalize_matches_hand_folding() {
        // fan-in 2, two outputs; second channel has negative gamma
        let shadow = ShadowModel {
            hidden: vec![ShadowLayer {
                weights: ndarray::arr2(&[[0.3, -0.2], [-0.1, 0.4]]),
                gamma: ndarray::arr1(&[2.0, -1.0]),
                beta: ndarray::arr1(&[1.0, 0.0]),
                running_mean: ndarray::arr1(&[1.0, 0.5]),
                running_var: ndarray::arr1(&[4.0, 1.0]),
            }],
            head: ShadowHead {
                weights: ndarray::arr2(&[[1.0, -1.0], [0.5, 0.5]]),
                scale: 0.5,
                bias: ndarray::arr1(&[1.0, -2.0]),
            },
            bn_eps: 1e-6,
        };
        let model = finalize(&shadow).unwrap();
        let layer = &model.hidden()[0];
        // col 0: T = 1 - 1*2/2 = 0 -> B = 0
        // col 1: T = 0.5, flipped -> -y >= -0.5 -> B = 0, weights negated
        assert_eq!(layer.thresholds().values(), &[0, 0]);
        assert_eq!(layer.weights().to_row_signs(), vec![vec![1, 1], vec![-1, -1]]);
        assert_eq!(model.head().bias(), &[2, -4]);
        assert_eq!(model.head().weights().to_row_signs(), vec![vec![1, -1], vec![1, 1]]);

        // the finalized model agrees with the float shadow on all inputs
        for bits in 0..4u32 {
            let x = BipolarVec::from_bools((0..2).map(|i| bits >> i & 1 == 1));
            let xf = Array2::from_shape_fn((1, 2), |(_, j)| x.get(j) as f32);
            let _ = model.forward(&x).unwrap();
            let shadow_h = shadow.hidden[0].weights.mapv(sign).t().dot(&xf.row(0)).to_vec();
            let int_h = layer.preactivations(&x).unwrap();
            assert_eq!(int_h[0] as f32, shadow_h[0]);
            assert_eq!(int_h[1] as f32, -shadow_h[1]);
        }
    }

    #[test]
    fn finalize_is_idempotent_on_the_binary_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shadow = ShadowModel::init(
            6,
            &TrainConfig {
                hidden: vec![4],
                classes: 3,
                ..TrainConfig::default()
            },
            &mut rng,
        );
        let once = finalize(&shadow).unwrap();
        let mut again = shadow.clone();
        for l in &mut again.hidden {
            l.weights.mapv_inplace(sign);
        }
        again.head.weights.mapv_inplace(sign);
        assert_eq!(finalize(&again).unwrap(), once);
    }

    #[test]
    fn rejects_bad_config() {
        let set = separable(10, 4, 0);
        let config = TrainConfig {
            epochs: 0,
            ..toy_config()
        };
        assert!(train_ste(&config, &set, &set, |_| {}).is_err());
        assert!(train_ste(&toy_config(), &EncodedSet::default(), &set, |_| {}).is_err());
    }

    #[test]
    fn step_decay_schedule() {
        let c = TrainConfig {
            learning_rate: 1.0,
            lr_decay: 0.5,
            lr_decay_every: 2,
            ..TrainConfig::default()
        };
        assert_eq!(
            (0..5).map(|e| c.learning_rate_at(e)).collect::<Vec<_>>(),
            vec![1.0, 1.0, 0.5, 0.5, 0.25]
        );
    }
}
