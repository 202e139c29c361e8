//! Two-layer classification head: affine, tanh, dropout, affine.
//!
//! Trained with mini-batch AdamW on (optionally class-weighted) softmax
//! cross-entropy. Dropout masks are drawn from the training RNG per sample
//! per batch, so training is bit-reproducible for a fixed seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden: usize,
    pub dropout: f64,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            hidden: 64,
            dropout: 0.1,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    /// Epochs, batch size and learning rate used for full language-model
    /// fine-tuning (20 epochs, batch 8, lr 2e-5).
    pub fn fine_tuning_preset() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Gradients with the same layout as the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(head: &ClassifierHead) -> Self {
        Gradients {
            w1: vec![0.0; head.w1.len()],
            b1: vec![0.0; head.b1.len()],
            w2: vec![0.0; head.w2.len()],
            b2: vec![0.0; head.b2.len()],
        }
    }

    /// Concatenation in `w1, b1, w2, b2` order.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    fn scale(&mut self, k: f64) {
        for g in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Output of a two-class head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryPrediction {
    /// Argmax class; ties resolve to 0.
    pub label: usize,
    pub probabilities: [f64; 2],
}

impl BinaryPrediction {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let p = softmax(&logits);
        BinaryPrediction {
            label: argmax(&logits),
            probabilities: [p[0], p[1]],
        }
    }

    /// Probability of class 1.
    pub fn positive_probability(&self) -> f64 {
        self.probabilities[1]
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Linear → tanh → dropout → linear classifier over fixed-length vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    /// `hidden × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `n_classes × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub dropout: f64,
    pub trained: bool,
    pub final_loss: Option<f64>,
    pub seed: u64,
}

/// The two-output head used by both cascade stages.
pub type BinaryHead = ClassifierHead;

impl ClassifierHead {
    /// Parameters drawn like a default-initialized linear layer:
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init(input_dim: usize, hidden: usize, n_classes: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w1 = uniform(hidden * input_dim, input_dim);
        let b1 = uniform(hidden, input_dim);
        let w2 = uniform(n_classes * hidden, hidden);
        let b2 = uniform(n_classes, hidden);
        ClassifierHead {
            input_dim,
            hidden,
            n_classes,
            w1,
            b1,
            w2,
            b2,
            dropout,
            trained: false,
            final_loss: None,
            seed: 0,
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flattened parameters in `w1, b1, w2, b2` order.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_parameters() {
            return Err(Error::dim(self.n_parameters(), flat.len(), "head parameters"));
        }
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        self.hidden_pre_sparse(&nonzeros(x))
    }

    fn hidden_pre_sparse(&self, nz: &[(usize, f64)]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                self.b1[h] + nz.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    fn output(&self, act: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(act).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect()
    }

    /// Inference-mode logits (dropout disabled).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dim(self.input_dim, x.len(), "head input"));
        }
        let act: Vec<f64> = self.hidden_pre(x).into_iter().map(f64::tanh).collect();
        Ok(self.output(&act))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        Ok(softmax(&self.logits(x)?))
    }

    /// Argmax class (ties to the lowest index).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        Ok(argmax(&self.logits(x)?))
    }

    pub fn predict_binary(&self, x: &[f64]) -> Result<BinaryPrediction> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if self.n_classes != 2 {
            return Err(Error::invalid(format!(
                "predict_binary on a {}-class head",
                self.n_classes
            )));
        }
        let z = self.logits(x)?;
        Ok(BinaryPrediction::from_logits([z[0], z[1]]))
    }

    /// Weighted cross-entropy of one sample, accumulating gradients scaled by
    /// `weight`. `mask` multiplies the tanh activations (inverted dropout).
    fn accumulate(&self, nz: &[(usize, f64)], y: usize, weight: f64, mask: Option<&[f64]>, g: &mut Gradients) -> f64 {
        let pre = self.hidden_pre_sparse(nz);
        let act: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
        let dropped: Vec<f64> = match mask {
            Some(m) => act.iter().zip(m).map(|(a, m)| a * m).collect(),
            None => act.clone(),
        };
        let z = self.output(&dropped);
        let p = softmax(&z);
        let loss = -p[y].max(f64::MIN_POSITIVE).ln();

        // dL/dz = p - onehot(y)
        let dz: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(k, &pk)| weight * (pk - if k == y { 1.0 } else { 0.0 }))
            .collect();
        let mut d_dropped = vec![0.0; self.hidden];
        for k in 0..self.n_classes {
            g.b2[k] += dz[k];
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let grow = &mut g.w2[k * self.hidden..(k + 1) * self.hidden];
            for h in 0..self.hidden {
                grow[h] += dz[k] * dropped[h];
                d_dropped[h] += dz[k] * row[h];
            }
        }
        for h in 0..self.hidden {
            let m = mask.map_or(1.0, |m| m[h]);
            let d_pre = d_dropped[h] * m * (1.0 - act[h] * act[h]);
            if d_pre == 0.0 {
                continue;
            }
            g.b1[h] += d_pre;
            let grow = &mut g.w1[h * self.input_dim..(h + 1) * self.input_dim];
            for &(i, xi) in nz {
                grow[i] += d_pre * xi;
            }
        }
        weight * loss
    }

    /// Weighted mean cross-entropy over a batch and its parameter gradients.
    ///
    /// `weights` default to 1; `masks`, when given, hold one dropout mask of
    /// length `hidden` per sample.
    pub fn loss_and_gradients(
        &self,
        xs: &[&[f64]],
        ys: &[usize],
        weights: Option<&[f64]>,
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, Gradients) {
        let mut g = Gradients::zeros_like(self);
        let nzs: Vec<Vec<(usize, f64)>> = xs.iter().map(|x| nonzeros(x)).collect();
        let total = self.batch_into(&nzs, ys, weights, masks, &mut g);
        (total, g)
    }

    /// Batch loss with gradients written into `g`, which is zeroed first.
    fn batch_into(
        &self,
        nzs: &[Vec<(usize, f64)>],
        ys: &[usize],
        weights: Option<&[f64]>,
        masks: Option<&[Vec<f64>]>,
        g: &mut Gradients,
    ) -> f64 {
        for t in [&mut g.w1, &mut g.b1, &mut g.w2, &mut g.b2] {
            t.fill(0.0);
        }
        let mut total = 0.0;
        let mut wsum = 0.0;
        for (i, (nz, &y)) in nzs.iter().zip(ys).enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            total += self.accumulate(nz, y, w, masks.map(|m| m[i].as_slice()), g);
            wsum += w;
        }
        if wsum > 0.0 {
            g.scale(1.0 / wsum);
            total /= wsum;
        }
        total
    }

    /// Mean (unweighted) inference-mode cross-entropy.
    pub fn mean_loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let p = softmax(&self.logits(x)?);
            total -= p[y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / xs.len().max(1) as f64)
    }
}

fn nonzeros(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

struct AdamStep {
    lr: f64,
    wd: f64,
    bc1: f64,
    bc2: f64,
}

impl AdamStep {
    /// Decoupled weight decay followed by the bias-corrected Adam update.
    fn apply(&self, params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        for (((p, &g), m), v) in params.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *p -= self.lr * self.wd * *p;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let mhat = *m / self.bc1;
            let vhat = *v / self.bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn validate_training_data(xs: &[Vec<f64>], ys: &[usize], n_classes: usize) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::dim(xs.len(), ys.len(), "labels vs samples"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("training needs at least two samples"));
    }
    let dim = xs[0].len();
    if dim == 0 {
        return Err(Error::invalid("feature vectors are empty"));
    }
    for (i, x) in xs.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::dim(dim, x.len(), format!("sample {i}")));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("sample {i} contains NaN")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} contains a non-finite value")));
        }
    }
    let mut counts = vec![0usize; n_classes];
    for &y in ys {
        if y >= n_classes {
            return Err(Error::invalid(format!("label {y} out of range for {n_classes} classes")));
        }
        counts[y] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(format!(
            "class {k} has no training samples"
        )));
    }
    Ok(dim)
}

/// Trains a head with `n_classes` outputs.
pub fn train_head(xs: &[Vec<f64>], ys: &[usize], n_classes: usize, cfg: &TrainConfig) -> Result<ClassifierHead> {
    cfg.validate()?;
    if n_classes < 2 {
        return Err(Error::invalid("a classifier needs at least two classes"));
    }
    let dim = validate_training_data(xs, ys, n_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = ClassifierHead::init(dim, cfg.hidden, n_classes, cfg.dropout, &mut rng);
    head.seed = cfg.seed;

    let sample_weights: Option<Vec<f64>> = cfg.class_weighting.then(|| {
        let mut counts = vec![0usize; n_classes];
        ys.iter().for_each(|&y| counts[y] += 1);
        let n = ys.len() as f64;
        ys.iter()
            .map(|&y| n / (n_classes as f64 * counts[y] as f64))
            .collect()
    });

    let sparse: Vec<Vec<(usize, f64)>> = xs.iter().map(|x| nonzeros(x)).collect();
    let mut grads = Gradients::zeros_like(&head);
    let mut m = Gradients::zeros_like(&head);
    let mut v = Gradients::zeros_like(&head);
    let mut step = 0i32;
    let keep = 1.0 - cfg.dropout;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut bx: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cfg.batch_size);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            bx.extend(batch.iter().map(|&i| sparse[i].clone()));
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let bw: Option<Vec<f64>> = sample_weights
                .as_ref()
                .map(|w| batch.iter().map(|&i| w[i]).collect());
            let masks: Option<Vec<Vec<f64>>> = (cfg.dropout > 0.0).then(|| {
                batch
                    .iter()
                    .map(|_| {
                        (0..cfg.hidden)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            });
            head.batch_into(&bx, &by, bw.as_deref(), masks.as_deref(), &mut grads);

            step += 1;
            let adam = AdamStep {
                lr: cfg.learning_rate,
                wd: cfg.weight_decay,
                bc1: 1.0 - BETA1.powi(step),
                bc2: 1.0 - BETA2.powi(step),
            };
            adam.apply(&mut head.w1, &grads.w1, &mut m.w1, &mut v.w1);
            adam.apply(&mut head.b1, &grads.b1, &mut m.b1, &mut v.b1);
            adam.apply(&mut head.w2, &grads.w2, &mut m.w2, &mut v.w2);
            adam.apply(&mut head.b2, &grads.b2, &mut m.b2, &mut v.b2);
        }
    }
    if head.parameters().iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("training diverged to non-finite parameters"));
    }
    head.trained = true;
    head.final_loss = Some(head.mean_loss(xs, ys)?);
    Ok(head)
}

/// Trains a two-class head; labels are 0 or 1 and both must occur.
pub fn train_binary_head(xs: &[Vec<f64>], ys: &[usize], cfg: &TrainConfig) -> Result<BinaryHead> {
    if let Some(&first) = ys.first() {
        if ys.iter().all(|&y| y == first) {
            return Err(Error::MissingClass(format!(
                "all {} labels are {first}; binary training needs both classes",
                ys.len()
            )));
        }
    }
    train_head(xs, ys, 2, cfg)
}
