use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{adnn_forward, adnn_loss, loss_and_grad, Batch};
use super::optim::{adamw_step, cosine_lr, AdamState};
use super::{AdnnModel, LATENT_WIDTH};
use crate::corpus::{FrameFeatures, State};
use crate::error::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Longer sequences are uniformly subsampled to this many frames.
    pub max_frames: usize,
    pub latent_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0004,
            epochs: 5,
            batch_size: 8,
            weight_decay: 0.01,
            seed: 0,
            max_frames: 3000,
            latent_width: LATENT_WIDTH,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.latent_width == 0 {
            return Err(Error::InvalidParameter(
                "epochs, batch size and latent width must be at least 1".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_samples: usize) -> usize {
        self.epochs * n_samples.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone)]
pub struct AdnnTraining {
    pub model: AdnnModel,
    /// Mean training loss before training (index 0) and after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains for exactly `cfg.epochs` epochs. Initialization, shuffling and
/// batching all derive from `cfg.seed`.
pub fn train_adnn(cfg: &TrainConfig, train: &[(FrameFeatures, State)]) -> Result<AdnnModel> {
    Ok(run(cfg, train, false)?.model)
}

/// Like [`train_adnn`], also evaluating the full training loss after every epoch.
pub fn train_adnn_with_history(
    cfg: &TrainConfig,
    train: &[(FrameFeatures, State)],
) -> Result<AdnnTraining> {
    run(cfg, train, true)
}

fn run(cfg: &TrainConfig, train: &[(FrameFeatures, State)], track: bool) -> Result<AdnnTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty);
    }
    if !(train.iter().any(|(_, s)| *s == State::On) && train.iter().any(|(_, s)| *s == State::Off)) {
        return Err(Error::SingleClass);
    }
    let dim = train[0].0.dim();
    if let Some((f, _)) = train.iter().find(|(f, _)| f.dim() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "training sequences of width {dim} and {}",
            f.dim()
        )));
    }

    let capped: Vec<FrameFeatures> = train.iter().map(|(f, _)| f.capped(cfg.max_frames)).collect();
    let seqs: Vec<ArrayView2<f64>> = capped.iter().map(|f| f.values().view()).collect();
    let labels: Vec<usize> = train.iter().map(|(_, s)| s.index()).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut model = AdnnModel::with_width(dim, cfg.latent_width, &mut init_rng);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);

    let mut state = AdamState::new(&model);
    let total = cfg.total_steps(train.len());
    let mut epoch_losses = Vec::new();
    if track {
        epoch_losses.push(mean_loss(&model, &seqs, &labels, cfg.batch_size)?);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_seqs: Vec<ArrayView2<f64>> = chunk.iter().map(|&i| seqs[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = Batch::from_sequences(&batch_seqs)?;
            let (loss, grads) = loss_and_grad(&model, &batch, &batch_labels)?;
            if !loss.is_finite() {
                log::error!("non-finite loss at epoch {epoch}, step {step}");
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let lr = cosine_lr(step, total, cfg.learning_rate)?;
            adamw_step(&mut model, &grads, &mut state, lr, cfg.weight_decay)?;
            step += 1;
        }
        if track {
            epoch_losses.push(mean_loss(&model, &seqs, &labels, cfg.batch_size)?);
        }
    }
    Ok(AdnnTraining {
        model,
        epoch_losses,
    })
}

fn mean_loss(model: &AdnnModel, seqs: &[ArrayView2<f64>], labels: &[usize], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for (s, l) in seqs.chunks(batch_size).zip(labels.chunks(batch_size)) {
        let cache = adnn_forward(model, &Batch::from_sequences(s)?)?;
        total += adnn_loss(&cache.logits, l)? * l.len() as f64;
    }
    Ok(total / labels.len() as f64)
}

impl AdnnModel {
    /// `N x 2` logits, evaluated `batch_size` sequences at a time.
    pub fn logits(&self, seqs: &[ArrayView2<f64>], batch_size: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((seqs.len(), 2));
        let mut at = 0;
        for chunk in seqs.chunks(batch_size.max(1)) {
            let cache = adnn_forward(self, &Batch::from_sequences(chunk)?)?;
            out.slice_mut(ndarray::s![at..at + chunk.len(), ..])
                .assign(&cache.logits);
            at += chunk.len();
        }
        Ok(out)
    }

    /// Predicted state per sequence; a tie between the logits goes to ON.
    pub fn predict(&self, seqs: &[ArrayView2<f64>], batch_size: usize) -> Result<Vec<State>> {
        let logits = self.logits(seqs, batch_size)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| if r[1] >= r[0] { State::On } else { State::Off })
            .collect())
    }
}
