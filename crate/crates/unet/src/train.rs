//! Training loop with early stopping and best-validation-Dice checkpointing.

use std::fmt::Write as _;
use std::path::Path;

use pco_core::augment::Batch;
use pco_core::metrics::SegmentationScores;
use pco_core::{GrayImage, Mask};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::loss::bce_mask;
use crate::model::{UNet, UNetConfig};
use crate::optim::{Adam, AdamParams};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Images per forward call during validation and prediction.
const INFER_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without a validation-Dice improvement before stopping.
    pub early_stop_patience: usize,
    /// Seeds weight initialisation and the augmentation stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            steps_per_epoch: 30,
            batch_size: 4,
            learning_rate: 1e-4,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Loss and validation metrics after one epoch (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_dice: f64,
    pub valid_iou: f64,
    pub valid_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    valid: SegmentationScores,
    history: Vec<EpochRecord>,
}

/// The best-validation snapshot and the full history of the run.
#[derive(Clone, Debug)]
pub struct CheckpointRecord {
    pub model: UNet<f32>,
    /// Epoch at which `model` was saved.
    pub epoch: usize,
    pub valid: SegmentationScores,
    pub history: Vec<EpochRecord>,
}

impl CheckpointRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.model,
            &CheckpointMeta {
                epoch: self.epoch,
                valid: self.valid,
                history: self.history.clone(),
            },
        )
    }

    pub fn load(path: &Path, expected: Option<&UNetConfig>) -> Result<Self> {
        let (model, meta): (UNet<f32>, CheckpointMeta) = load_checkpoint(path, expected)?;
        Ok(Self {
            model,
            epoch: meta.epoch,
            valid: meta.valid,
            history: meta.history,
        })
    }
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,valid_loss,valid_dice,valid_iou,valid_accuracy";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        writeln!(
            s,
            "{},{:.8},{:.8},{:.8},{:.8},{:.8}",
            r.epoch, r.train_loss, r.valid_loss, r.valid_dice, r.valid_iou, r.valid_accuracy
        )
        .expect("write to String");
    }
    s
}

fn check_pair(cfg: &UNetConfig, image: &GrayImage, mask: &Mask) -> Result<()> {
    let s = (cfg.input_size, cfg.input_size);
    if image.shape() != s || mask.shape() != s {
        return Err(Error::shape(
            format!("{s:?}"),
            format!("image {:?}, mask {:?}", image.shape(), mask.shape()),
        ));
    }
    Ok(())
}

/// Probability maps for `images`, in order.
pub fn predict_probs(model: &UNet<f32>, images: &[GrayImage]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFER_CHUNK) {
        let probs = model.forward(&Tensor::from_images(chunk)?)?;
        out.extend((0..chunk.len()).map(|i| probs.sample(i).to_vec()));
    }
    Ok(out)
}

/// Forward pass and 0.5 threshold for each image, order preserved.
pub fn predict(ckpt: &CheckpointRecord, images: &[GrayImage]) -> Result<Vec<Mask>> {
    predict_model(&ckpt.model, images)
}

pub fn predict_model(model: &UNet<f32>, images: &[GrayImage]) -> Result<Vec<Mask>> {
    let s = model.config().input_size;
    predict_probs(model, images)?
        .iter()
        .map(|p| crate::tensor::binarize(p, s, s, 0.5))
        .collect()
}

/// Mean BCE and mean per-image scores of `model` on a labelled set.
pub fn evaluate(model: &UNet<f32>, set: &[(GrayImage, Mask)]) -> Result<(f64, SegmentationScores)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let s = model.config().input_size;
    let images: Vec<GrayImage> = set.iter().map(|(i, _)| i.clone()).collect();
    let probs = predict_probs(model, &images)?;
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(set.len());
    for (p, (_, truth)) in probs.iter().zip(set) {
        loss += bce_mask(p, truth)?;
        let pred = crate::tensor::binarize(p, s, s, 0.5)?;
        scores.push(SegmentationScores::compute(&pred, truth)?);
    }
    let mean = SegmentationScores::mean(&scores).expect("non-empty");
    Ok((loss / set.len() as f64, mean))
}

/// Trains until `cfg.epochs` are done, the stream runs dry, or validation
/// Dice has not improved for `cfg.early_stop_patience` epochs.
pub fn train_model<I>(
    model: UNet<f32>,
    train_stream: I,
    valid_set: &[(GrayImage, Mask)],
    cfg: &TrainConfig,
) -> Result<CheckpointRecord>
where
    I: IntoIterator<Item = Batch>,
{
    cfg.validate()?;
    if valid_set.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    for (image, mask) in valid_set {
        check_pair(model.config(), image, mask)?;
    }
    let mut model = model;
    let mut opt = Adam::new(
        model.param_count(),
        AdamParams {
            learning_rate: cfg.learning_rate,
            ..AdamParams::default()
        },
    );
    let mut stream = train_stream.into_iter();
    let mut grad = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(usize, SegmentationScores, Vec<f32>)> = None;
    let mut stale = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for step in 1..=cfg.steps_per_epoch {
            let Some(batch) = stream.next() else {
                if steps == 0 {
                    break 'epochs;
                }
                break;
            };
            let mut images = Vec::with_capacity(batch.pairs.len());
            let mut masks = Vec::with_capacity(batch.pairs.len());
            for p in batch.pairs {
                check_pair(model.config(), &p.image, &p.mask)?;
                images.push(p.image);
                masks.push(p.mask);
            }
            let x = Tensor::from_images(&images)?;
            let y = Tensor::from_masks(&masks)?;
            let loss = model.loss_and_grad(&x, &y, &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            opt.step(model.params_mut(), &grad);
            loss_sum += loss;
            steps += 1;
        }
        let (valid_loss, scores) = evaluate(&model, valid_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            valid_loss,
            valid_dice: scores.dice,
            valid_iou: scores.iou,
            valid_accuracy: scores.accuracy,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.5} valid_loss {:.5} valid_dice {:.4}",
            record.train_loss,
            record.valid_loss,
            record.valid_dice
        );
        history.push(record);
        if best.as_ref().is_none_or(|(_, b, _)| scores.dice > b.dice) {
            best = Some((epoch, scores, model.params().to_vec()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let Some((epoch, valid, params)) = best else {
        return Err(Error::InvalidArgument(
            "training stream produced no batches".into(),
        ));
    };
    let cfg_net = *model.config();
    Ok(CheckpointRecord {
        model: UNet::from_params(cfg_net, params)?,
        epoch,
        valid,
        history,
    })
}
