//! Convolutional autoencoders, one per sampling period.

mod io;
pub mod net;

pub use io::{read_model, write_model, MODEL_MAGIC};
pub use net::{Activation, Gradients, Network, Real, Resample};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::View;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image {m}×{w} is too small; both sides must be at least 4")]
    ShapeUnderflow { m: usize, w: usize },
    #[error("expected a {expected:?} image, got {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("view sampled at period {found} fed to the period-{expected} model")]
    PeriodMismatch { expected: usize, found: usize },
    #[error("invalid autoencoder configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain SGD with classical momentum 0.9.
    Momentum,
    Adam,
}

/// Objective minimised during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingLoss {
    Mse,
    Mae,
}

/// Elementwise deviation used when scoring a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNorm {
    Absolute,
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub m: usize,
    pub w: usize,
    /// Output channels of the five convolutions.
    pub filters: Vec<usize>,
    pub kernel: (usize, usize),
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub training_loss: TrainingLoss,
    pub score_norm: ScoreNorm,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            m: 20,
            w: 50,
            filters: vec![32, 16, 16, 32, 1],
            kernel: (3, 3),
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            training_loss: TrainingLoss::Mse,
            score_norm: ScoreNorm::Absolute,
            patience: 10,
            seed: 0,
        }
    }
}

pub const RESAMPLES: [Resample; 5] =
    [Resample::MaxPool2, Resample::MaxPool2, Resample::Upsample2, Resample::Upsample2, Resample::None];

impl AeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.m < 4 || self.w < 4 {
            return Err(ModelError::ShapeUnderflow { m: self.m, w: self.w });
        }
        if self.kernel != (3, 3) {
            return Err(ModelError::InvalidConfig(format!("only 3×3 kernels are supported, got {:?}", self.kernel)));
        }
        if self.filters.len() != RESAMPLES.len() {
            return Err(ModelError::InvalidConfig(format!("expected 5 layers, got {}", self.filters.len())));
        }
        if self.filters.last() != Some(&1) {
            return Err(ModelError::InvalidConfig("the last layer must have exactly one filter".into()));
        }
        if self.filters.contains(&0) || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("layer widths and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Σ (k_h·k_w·c_in + 1)·c_out over the conv stack.
    pub fn parameter_count(&self) -> usize {
        let mut cin = 1;
        let mut total = 0;
        for &cout in &self.filters {
            total += (self.kernel.0 * self.kernel.1 * cin + 1) * cout;
            cin = cout;
        }
        total
    }
}

/// Element-wise reconstruction error of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    pub m: usize,
    pub w: usize,
    /// Row-major `m × w`.
    pub grid: Vec<f32>,
    pub origin_step: u64,
    pub period: usize,
}

impl LossMatrix {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.grid[row * self.w + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.grid[row * self.w..(row + 1) * self.w]
    }
}

/// `|x - x̂|` (or its square) per cell.
pub fn loss_matrix(view: &View, reconstruction: &[f32], norm: ScoreNorm) -> Result<LossMatrix, ModelError> {
    if reconstruction.len() != view.grid.len() {
        return Err(ModelError::ShapeMismatch {
            expected: (view.m, view.width),
            found: (reconstruction.len() / view.width.max(1), view.width),
        });
    }
    let grid = view
        .grid
        .iter()
        .zip(reconstruction)
        .map(|(&x, &y)| {
            let d = (x - y).abs();
            match norm {
                ScoreNorm::Absolute => d,
                ScoreNorm::Squared => d * d,
            }
        })
        .collect();
    Ok(LossMatrix { m: view.m, w: view.width, grid, origin_step: view.origin_step, period: view.period })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub config: AeConfig,
    pub period: usize,
    pub net: Network<f32>,
    /// Mean training loss per completed epoch.
    pub history: Vec<f64>,
    /// Mean validation loss per completed epoch, when validation data was given.
    pub validation_history: Vec<f64>,
}

impl AeModel {
    /// Fresh model with seeded initial weights.
    pub fn build(config: AeConfig, period: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if period == 0 {
            return Err(ModelError::InvalidConfig("period must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Network::new(config.m, config.w, &config.filters, &RESAMPLES, &mut rng);
        Ok(Self { config, period, net, history: Vec::new(), validation_history: Vec::new() })
    }

    fn check_view(&self, view: &View) -> Result<(), ModelError> {
        if (view.m, view.width) != (self.config.m, self.config.w) || view.grid.len() != view.m * view.width {
            return Err(ModelError::ShapeMismatch {
                expected: (self.config.m, self.config.w),
                found: (view.m, view.width),
            });
        }
        if view.period != self.period {
            return Err(ModelError::PeriodMismatch { expected: self.period, found: view.period });
        }
        Ok(())
    }

    /// Deterministic forward pass of a single view.
    pub fn reconstruct(&self, view: &View) -> Result<View, ModelError> {
        let grid = self.reconstruct_batch(&[view])?.pop().unwrap();
        Ok(View { grid, ..view.clone() })
    }

    /// Reconstructs several views in one pass; returns row-major grids.
    pub fn reconstruct_batch(&self, views: &[&View]) -> Result<Vec<Vec<f32>>, ModelError> {
        for v in views {
            self.check_view(v)?;
        }
        let images: Vec<&[f32]> = views.iter().map(|v| v.grid.as_slice()).collect();
        Ok(self.reconstruct_images(&images))
    }

    pub fn reconstruct_images(&self, images: &[&[f32]]) -> Vec<Vec<f32>> {
        if images.is_empty() {
            return Vec::new();
        }
        let input = self.net.pack_input(images);
        let trace = self.net.forward(&input, images.len());
        (0..images.len()).map(|b| self.net.unpack_output(&trace.output, b)).collect()
    }

    /// Loss matrices for a batch of views.
    pub fn score_batch(&self, views: &[&View]) -> Result<Vec<LossMatrix>, ModelError> {
        let recon = self.reconstruct_batch(views)?;
        views.iter().zip(recon).map(|(v, r)| loss_matrix(v, &r, self.config.score_norm)).collect()
    }

    /// Mini-batch training on attack-free views with early stopping on
    /// `validation` (when non-empty). The best validation weights are kept.
    pub fn train(&mut self, views: &[View], validation: &[View]) -> Result<(), ModelError> {
        for v in views.iter().chain(validation) {
            self.check_view(v)?;
        }
        let images: Vec<&[f32]> = views.iter().map(|v| v.grid.as_slice()).collect();
        let val_images: Vec<&[f32]> = validation.iter().map(|v| v.grid.as_slice()).collect();
        self.train_images(&images, &val_images)
    }

    pub fn train_images(&mut self, images: &[&[f32]], validation: &[&[f32]]) -> Result<(), ModelError> {
        if self.config.epochs == 0 || images.is_empty() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(0x5eed));
        let mut optimizer = OptimizerState::new(&self.net, self.config.optimizer, self.config.learning_rate);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut best: Option<(f64, Network<f32>)> = None;
        let mut stale = 0;
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&[f32]> = chunk.iter().map(|&i| images[i]).collect();
                let input = self.net.pack_input(&batch);
                let trace = self.net.forward(&input, batch.len());
                let loss = self.objective(&input, &trace.output, batch.len());
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                total += loss * batch.len() as f64;
                let grads = self.gradients(&trace, &input);
                optimizer.step(&mut self.net, &grads);
            }
            self.history.push(total / images.len() as f64);
            if validation.is_empty() {
                continue;
            }
            let val = self.evaluate(validation);
            if !val.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            self.validation_history.push(val);
            match &best {
                Some((b, _)) if val >= *b => {
                    stale += 1;
                    if stale >= self.config.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((val, self.net.clone()));
                    stale = 0;
                }
            }
        }
        if let Some((_, net)) = best {
            self.net = net;
        }
        Ok(())
    }

    /// Mean training objective over `images`.
    pub fn evaluate_views(&self, views: &[View]) -> Result<f64, ModelError> {
        for v in views {
            self.check_view(v)?;
        }
        let images: Vec<&[f32]> = views.iter().map(|v| v.grid.as_slice()).collect();
        Ok(self.evaluate(&images))
    }

    fn evaluate(&self, images: &[&[f32]]) -> f64 {
        let mut total = 0.0;
        for chunk in images.chunks(self.config.batch_size.max(64)) {
            let input = self.net.pack_input(chunk);
            let trace = self.net.forward(&input, chunk.len());
            total += self.objective(&input, &trace.output, chunk.len()) * chunk.len() as f64;
        }
        total / images.len().max(1) as f64
    }

    fn objective(&self, input: &[f32], output: &[f32], batch: usize) -> f64 {
        match self.config.training_loss {
            TrainingLoss::Mse => self.net.mse(input, output, batch) as f64,
            TrainingLoss::Mae => mae(&self.net, input, output, batch),
        }
    }

    fn gradients(&self, trace: &net::ForwardTrace<f32>, input: &[f32]) -> Gradients<f32> {
        match self.config.training_loss {
            TrainingLoss::Mse => self.net.backward(trace, input),
            TrainingLoss::Mae => {
                // d|y - x|/dy = sign(y - x); reuse the MSE path with a surrogate target
                // so that 2(y - x') = sign(y - x) scaled identically.
                let surrogate: Vec<f32> = trace
                    .output
                    .iter()
                    .zip(input)
                    .map(|(&y, &x)| y - 0.5 * (y - x).signum() * if y == x { 0.0 } else { 1.0 })
                    .collect();
                self.net.backward(trace, &surrogate)
            }
        }
    }
}

fn mae(net: &Network<f32>, input: &[f32], output: &[f32], batch: usize) -> f64 {
    let (h, w) = (net.padded_rows, net.padded_cols);
    let mut sum = 0.0f64;
    for b in 0..batch {
        for r in 0..net.rows {
            let s = (b * h + r) * w;
            for i in s..s + net.cols {
                sum += (output[i] - input[i]).abs() as f64;
            }
        }
    }
    sum / (batch * net.rows * net.cols) as f64
}

struct OptimizerState {
    kind: Optimizer,
    lr: f32,
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    fn new(net: &Network<f32>, kind: Optimizer, lr: f64) -> Self {
        let shapes: Vec<usize> = net.layers.iter().flat_map(|l| [l.weights.len(), l.bias.len()]).collect();
        Self {
            kind,
            lr: lr as f32,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, net: &mut Network<f32>, grads: &Gradients<f32>) {
        self.step += 1;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-7f32);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let mut slot = 0;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (params, g) in [(&mut layer.weights, &grads.weights[l]), (&mut layer.bias, &grads.bias[l])] {
                let m = &mut self.first[slot];
                let v = &mut self.second[slot];
                match self.kind {
                    Optimizer::Momentum => {
                        for ((p, &g), m) in params.iter_mut().zip(g).zip(m.iter_mut()) {
                            *m = 0.9 * *m + g;
                            *p -= self.lr * *m;
                        }
                    }
                    Optimizer::Adam => {
                        for (((p, &g), m), v) in params.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        }
                    }
                }
                slot += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(m: usize, w: usize, period: usize, fill: impl Fn(usize, usize) -> f32) -> View {
        let grid = (0..m * w).map(|i| fill(i / w, i % w)).collect();
        View { period, width: w, m, grid, origin_step: 0, labels: vec![false; w] }
    }

    fn small_config(m: usize, w: usize) -> AeConfig {
        AeConfig { m, w, epochs: 3, batch_size: 8, ..AeConfig::default() }
    }

    #[test]
    fn output_shape_matches_input() {
        let model = AeModel::build(AeConfig { m: 20, w: 50, ..AeConfig::default() }, 1).unwrap();
        let v = view(20, 50, 1, |r, c| ((r + c) % 7) as f32 / 7.0);
        let out = model.reconstruct(&v).unwrap();
        assert_eq!((out.m, out.width, out.grid.len()), (20, 50, 1000));
        assert!(out.grid.iter().all(|&y| y > 0.0 && y < 1.0));
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let config = AeConfig { m: 20, w: 50, ..AeConfig::default() };
        // (9·1+1)·32 + (9·32+1)·16 + (9·16+1)·16 + (9·16+1)·32 + (9·32+1)·1
        let golden = 320 + 4624 + 2320 + 4640 + 289;
        assert_eq!(config.parameter_count(), golden);
        assert_eq!(AeModel::build(config, 1).unwrap().net.parameter_count(), golden);
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let a = AeModel::build(small_config(8, 12), 1).unwrap();
        let b = AeModel::build(small_config(8, 12), 1).unwrap();
        assert_eq!(a.net, b.net);
        let c = AeModel::build(AeConfig { seed: 1, ..small_config(8, 12) }, 1).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(AeModel::build(small_config(3, 12), 1), Err(ModelError::ShapeUnderflow { .. })));
        let bad = AeConfig { filters: vec![32, 16, 16, 32, 2], ..small_config(8, 8) };
        assert!(matches!(AeModel::build(bad, 1), Err(ModelError::InvalidConfig(_))));
        let bad = AeConfig { kernel: (5, 5), ..small_config(8, 8) };
        assert!(matches!(AeModel::build(bad, 1), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let mut model = AeModel::build(AeConfig { epochs: 0, ..small_config(4, 8) }, 1).unwrap();
        let before = model.net.clone();
        let views: Vec<View> = (0..10).map(|_| view(4, 8, 1, |_, _| 0.3)).collect();
        model.train(&views, &[]).unwrap();
        assert_eq!(before, model.net);
        assert!(model.history.is_empty());
    }

    #[test]
    fn shape_and_period_are_checked() {
        let model = AeModel::build(small_config(4, 8), 5).unwrap();
        assert!(matches!(model.reconstruct(&view(4, 9, 5, |_, _| 0.0)), Err(ModelError::ShapeMismatch { .. })));
        assert!(matches!(model.reconstruct(&view(4, 8, 1, |_, _| 0.0)), Err(ModelError::PeriodMismatch { .. })));
    }

    #[test]
    fn reconstruction_is_pure() {
        let model = AeModel::build(small_config(6, 10), 1).unwrap();
        let v = view(6, 10, 1, |r, c| (r * 10 + c) as f32 / 60.0);
        let a = model.reconstruct(&v).unwrap();
        let b = model.reconstruct(&v).unwrap();
        assert_eq!(a.grid.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.grid.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        // batching does not change individual results
        let batch = model.reconstruct_batch(&[&v, &v]).unwrap();
        assert_eq!(batch[0], a.grid);
        assert_eq!(batch[1], a.grid);
    }

    #[test]
    fn loss_matrix_cases() {
        let v = view(2, 3, 1, |r, c| if (r, c) == (1, 2) { 0.8 } else { 0.25 });
        let zero = loss_matrix(&v, &v.grid, ScoreNorm::Absolute).unwrap();
        assert!(zero.grid.iter().all(|&x| x == 0.0));
        let mut recon = v.grid.clone();
        recon[5] = 0.5;
        let l = loss_matrix(&v, &recon, ScoreNorm::Absolute).unwrap();
        assert!((l.get(1, 2) - 0.3).abs() < 1e-6);
        assert!(matches!(loss_matrix(&v, &recon[..4], ScoreNorm::Absolute), Err(ModelError::ShapeMismatch { .. })));
    }

    #[test]
    fn training_lowers_loss() {
        let mut model = AeModel::build(AeConfig { epochs: 5, ..small_config(8, 12) }, 1).unwrap();
        let views: Vec<View> =
            (0..64).map(|k| view(8, 12, 1, |r, c| 0.5 + 0.4 * (((r + c + k) as f32) * 0.3).sin())).collect();
        model.train(&views, &[]).unwrap();
        assert_eq!(model.history.len(), 5);
        assert!(model.history.last().unwrap() < &model.history[0]);
    }

    #[test]
    fn momentum_optimizer_also_trains() {
        let config = AeConfig { epochs: 5, optimizer: Optimizer::Momentum, learning_rate: 0.05, ..small_config(8, 12) };
        let mut model = AeModel::build(config, 1).unwrap();
        let views: Vec<View> = (0..64).map(|k| view(8, 12, 1, |r, _| 0.2 + 0.05 * ((r + k) % 4) as f32)).collect();
        model.train(&views, &[]).unwrap();
        assert!(model.history.last().unwrap() < &model.history[0]);
    }

    #[test]
    fn early_stopping_keeps_best_weights() {
        let config = AeConfig { epochs: 40, patience: 2, ..small_config(4, 8) };
        let mut model = AeModel::build(config, 1).unwrap();
        let train: Vec<View> = (0..16).map(|_| view(4, 8, 1, |_, _| 0.5)).collect();
        let val: Vec<View> = (0..8).map(|_| view(4, 8, 1, |_, _| 0.9)).collect();
        model.train(&train, &val).unwrap();
        let best = model.validation_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((model.evaluate_views(&val).unwrap() - best).abs() < 1e-9);
        assert!(model.history.len() <= 40);
    }
}
