//! Minibatch training of the encoder/decoder pair over a simulated channel.

mod checkpoint;
mod optim;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, CheckpointMeta, FORMAT_VERSION,
};
pub use optim::{adam_update, Adam, AdamConfig};

use crate::channel::{Channel, ChannelMode};
use crate::codec::{BandwidthRatio, Model, ModelParams};
use crate::data::{epoch_permutation, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, StreamTag};
use crate::tensor::{FeatureMap, Scalar};

/// `(1/n) * sum (x_i - x_hat_i)^2`.
pub fn mse_distortion<T: Scalar>(x: &FeatureMap<T>, x_hat: &FeatureMap<T>) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::DimensionMismatch {
            context: "distortion operands",
            expected: x.as_slice().len(),
            actual: x_hat.as_slice().len(),
        });
    }
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / x.as_slice().len() as f64)
}

/// Mean of the per-image distortions of a batch.
pub fn batch_loss<T: Scalar>(x: &[FeatureMap<T>], x_hat: &[FeatureMap<T>]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "batch sizes",
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        total += mse_distortion(a, b)?;
    }
    Ok(total / x.len() as f64)
}

/// Training SNR distribution, written `uniform(lo,hi)` or `fixed(v)` in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SnrDistribution {
    Uniform { lo_db: f64, hi_db: f64 },
    Fixed(f64),
}

impl SnrDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { lo_db, hi_db } if !(lo_db.is_finite() && hi_db.is_finite()) => Err(
                Error::InvalidConfig(format!("uniform({lo_db},{hi_db}) bounds must be finite")),
            ),
            Self::Uniform { lo_db, hi_db } if lo_db > hi_db => Err(Error::InvalidConfig(format!(
                "uniform({lo_db},{hi_db}) requires lo <= hi"
            ))),
            Self::Fixed(v) if v.is_nan() => Err(Error::InvalidConfig("fixed SNR is NaN".into())),
            _ => Ok(()),
        }
    }

    /// The single training SNR of a fixed distribution.
    pub fn fixed_value(&self) -> Option<f64> {
        match *self {
            Self::Fixed(v) => Some(v),
            Self::Uniform { .. } => None,
        }
    }
}

impl fmt::Display for SnrDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { lo_db, hi_db } => write!(f, "uniform({lo_db},{hi_db})"),
            Self::Fixed(v) => write!(f, "fixed({v})"),
        }
    }
}

impl FromStr for SnrDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse SNR distribution '{s}'"));
        let s2 = s.trim();
        let open = s2.find('(').ok_or_else(bad)?;
        let args = s2[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let dist = match (&s2[..open], nums.as_slice()) {
            ("uniform", [lo, hi]) => Self::Uniform { lo_db: *lo, hi_db: *hi },
            ("fixed", [v]) => Self::Fixed(*v),
            _ => return Err(bad()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl TryFrom<String> for SnrDistribution {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SnrDistribution> for String {
    fn from(d: SnrDistribution) -> String {
        d.to_string()
    }
}

/// One draw from `dist`.
pub fn sample_snr(dist: &SnrDistribution, rng: &mut impl Rng) -> f64 {
    match *dist {
        SnrDistribution::Fixed(v) => v,
        SnrDistribution::Uniform { lo_db, hi_db } if lo_db == hi_db => lo_db,
        SnrDistribution::Uniform { lo_db, hi_db } => rng.random_range(lo_db..=hi_db),
    }
}

/// Granularity of SNR draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrDraw {
    #[default]
    PerExample,
    PerBatch,
}

/// When to write checkpoints during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckpointCadence {
    #[default]
    EveryEpoch,
    EveryBatches(u64),
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub snr_dist: SnrDistribution,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Required `k/n`; checked against the architecture and the data.
    pub bandwidth_ratio: Option<BandwidthRatio>,
    pub arch_preset: String,
    pub snr_draw: SnrDraw,
    /// Replace the channel by the identity (`sigma^2 = 0`). The AF modules
    /// still see the sampled SNR.
    pub noiseless: bool,
    pub checkpoint: CheckpointCadence,
    /// Directory for checkpoints; nothing is written when `None`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Examples per gradient chunk. Chunks are reduced in a fixed order, so
    /// results do not depend on the number of worker threads.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            snr_dist: SnrDistribution::Uniform { lo_db: 0.0, hi_db: 20.0 },
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 1280,
            seed: 0,
            bandwidth_ratio: None,
            arch_preset: "tiny".into(),
            snr_draw: SnrDraw::PerExample,
            noiseless: false,
            checkpoint: CheckpointCadence::EveryEpoch,
            checkpoint_dir: None,
            chunk_size: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.snr_dist.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk_size must be at least 1".into()));
        }
        if self.checkpoint == CheckpointCadence::EveryBatches(0) {
            return Err(Error::InvalidConfig("checkpoint interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based, matching checkpoint names.
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Per-epoch training history, plus the loss of every step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,seconds,checkpoint_path";

impl TrainLog {
    /// CSV rendering. With `timing` off the seconds column is written as 0 so
    /// repeated runs produce identical files.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.records {
            let secs = if timing { format!("{:.3}", r.seconds) } else { "0".into() };
            let path = r.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            s.push_str(&format!("{},{:.9e},{secs},{path}\n", r.epoch, r.loss));
        }
        s
    }

    pub fn write_csv(&self, path: &Path, timing: bool) -> Result<()> {
        fs::write(path, self.to_csv(timing)).map_err(|e| Error::io(path, e))
    }

    /// Appends one record line, writing the header first if the file is new.
    pub fn append_csv(path: &Path, record: &EpochRecord, timing: bool) -> Result<()> {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut one = TrainLog::default();
        one.records.push(record.clone());
        let csv = one.to_csv(timing);
        let text = if fresh { csv.as_str() } else { csv.split_once('\n').map_or("", |x| x.1) };
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_ratio<T: Scalar>(model: &Model<T>, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let (c, h, w) = data.sample_shape().ok_or_else(|| {
        Error::InvalidConfig("training images must share one shape (or use cropping)".into())
    })?;
    if c != model.arch().input_channels {
        return Err(Error::DimensionMismatch {
            context: "image channels",
            expected: model.arch().input_channels,
            actual: c,
        });
    }
    let k = model.arch().symbols_for(h, w)?;
    if let Some(want) = cfg.bandwidth_ratio {
        let got = BandwidthRatio::new(k as u64, (c * h * w) as u64);
        if got != want {
            return Err(Error::RatioUnreachable(format!(
                "architecture gives k/n = {got} on {h}x{w}x{c} images, config asks for {want}"
            )));
        }
    }
    Ok(())
}

/// Gradient and summed loss of one chunk of examples.
fn chunk_gradient<T: Scalar>(
    model: &Model<T>,
    examples: &[(FeatureMap<T>, f64, Channel)],
    weight: T,
    noiseless: bool,
) -> Result<(ModelParams<T>, f64)> {
    let mut grads = model.params().zeros_like();
    let mut loss = 0.0;
    for (x, snr, channel) in examples {
        let mut channel = channel.clone();
        let channel_snr = if noiseless { f64::INFINITY } else { *snr };
        loss += model
            .accumulate_gradients(x, *snr, channel_snr, &mut channel, weight, &mut grads)?
            .mse;
    }
    Ok((grads, loss))
}

/// Trains `model` on `data`. Every random quantity is drawn from a stream
/// keyed by `cfg.seed` and the step/example indices.
pub fn train<T: Scalar>(
    model: Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    train_with(model, data, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch record is final.
pub fn train_with<T: Scalar>(
    mut model: Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    data.ensure_nonempty()?;
    check_ratio(&model, data, cfg)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut log = TrainLog::default();
    let mut step: u64 = 0;
    let n = data.len();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = epoch_permutation(n, cfg.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        let mut last_ckpt = None;

        for batch in order.chunks(cfg.batch_size) {
            let batch_snr = sample_snr(&cfg.snr_dist, &mut rng::stream(cfg.seed, StreamTag::Snr, &[step]));
            let examples = batch
                .iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let x = data.sample(idx, epoch as u64, cfg.seed)?.to_map::<T>();
                    let snr = match cfg.snr_draw {
                        SnrDraw::PerBatch => batch_snr,
                        SnrDraw::PerExample => sample_snr(
                            &cfg.snr_dist,
                            &mut rng::stream(cfg.seed, StreamTag::Snr, &[step, j as u64 + 1]),
                        ),
                    };
                    let stream = rng::stream(cfg.seed, StreamTag::ChannelNoise, &[step, j as u64]);
                    Ok((x, snr, Channel::from_stream(stream, ChannelMode::Awgn)))
                })
                .collect::<Result<Vec<_>>>()?;

            let weight = T::from_f64_lossy(1.0 / batch.len() as f64);
            let parts = examples
                .par_chunks(cfg.chunk_size)
                .map(|chunk| chunk_gradient(&model, chunk, weight, cfg.noiseless))
                .collect::<Result<Vec<_>>>()?;
            let mut parts = parts.into_iter();
            let (mut grads, mut loss_sum) = parts.next().expect("batches are nonempty");
            for (g, l) in parts {
                grads.accumulate(&g);
                loss_sum += l;
            }
            let loss = loss_sum / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: step as usize,
                    loss,
                });
            }
            adam.step(model.params_mut(), &grads);
            step += 1;
            epoch_loss += loss_sum;
            log.step_losses.push(loss);

            if let (CheckpointCadence::EveryBatches(every), Some(dir)) = (cfg.checkpoint, &cfg.checkpoint_dir) {
                if step.is_multiple_of(every) {
                    let path = dir.join(format!("step_{step:08}.ckpt"));
                    save_checkpoint(&path, &model, &meta(cfg, epoch as u64, step))?;
                    last_ckpt = Some(path);
                }
            }
        }

        if let (CheckpointCadence::EveryEpoch, Some(dir)) = (cfg.checkpoint, &cfg.checkpoint_dir) {
            let path = dir.join(format!("epoch_{:05}.ckpt", epoch + 1));
            save_checkpoint(&path, &model, &meta(cfg, epoch as u64 + 1, step))?;
            last_ckpt = Some(path);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: epoch_loss / n as f64,
            seconds: started.elapsed().as_secs_f64(),
            checkpoint: last_ckpt,
        };
        log::info!(
            "epoch {} loss {:.6e} ({:.1}s)",
            record.epoch,
            record.loss,
            record.seconds
        );
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((model, log))
}

fn meta(cfg: &TrainConfig, epochs: u64, steps: u64) -> CheckpointMeta {
    CheckpointMeta {
        epochs_completed: epochs,
        steps_completed: steps,
        snr_dist: cfg.snr_dist,
        seed: cfg.seed,
    }
}

/// Metadata for a checkpoint written at the end of training.
pub fn final_meta(cfg: &TrainConfig, log: &TrainLog) -> CheckpointMeta {
    meta(cfg, log.records.len() as u64, log.step_losses.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ArchSpec;
    use crate::data::{ImageTensor, Split};

    #[test]
    fn distortion_examples() {
        let a = FeatureMap::from_vec(1, 1, 2, vec![0.0f64, 0.0]).unwrap();
        let b = FeatureMap::from_vec(1, 1, 2, vec![1.0, 1.0]).unwrap();
        let c = FeatureMap::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(mse_distortion(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_distortion(&a, &b).unwrap(), 1.0);
        assert_eq!(mse_distortion(&c, &b).unwrap(), 0.5);
        let d = FeatureMap::from_vec(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert!(mse_distortion(&c, &d).is_err());
    }

    #[test]
    fn batch_loss_examples() {
        let z = FeatureMap::from_vec(1, 1, 5, vec![0.0f64; 5]).unwrap();
        let one = FeatureMap::from_vec(1, 1, 5, vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let two = FeatureMap::from_vec(1, 1, 5, vec![1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let l = batch_loss(&[z.clone(), z.clone()], &[one.clone(), two]).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        assert_eq!(
            batch_loss(&[z.clone()], &[one.clone()]).unwrap(),
            mse_distortion(&z, &one).unwrap()
        );
        assert_eq!(batch_loss(&[one.clone()], &[one]).unwrap(), 0.0);
        assert!(batch_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn snr_distribution_text() {
        assert_eq!(
            "uniform(0, 20)".parse::<SnrDistribution>().unwrap(),
            SnrDistribution::Uniform { lo_db: 0.0, hi_db: 20.0 }
        );
        assert_eq!("fixed(13)".parse::<SnrDistribution>().unwrap(), SnrDistribution::Fixed(13.0));
        assert!("uniform(5,1)".parse::<SnrDistribution>().is_err());
        assert!("gauss(1)".parse::<SnrDistribution>().is_err());
        let d = SnrDistribution::Uniform { lo_db: -2.5, hi_db: 7.0 };
        assert_eq!(d.to_string().parse::<SnrDistribution>().unwrap(), d);
    }

    #[test]
    fn sample_snr_examples() {
        let mut r = rng::stream(0, StreamTag::Snr, &[]);
        for _ in 0..100 {
            assert_eq!(sample_snr(&SnrDistribution::Fixed(7.0), &mut r), 7.0);
            assert_eq!(sample_snr(&SnrDistribution::Uniform { lo_db: 5.0, hi_db: 5.0 }, &mut r), 5.0);
        }
        let dist = SnrDistribution::Uniform { lo_db: 0.0, hi_db: 20.0 };
        let (mut sum, mut lo, mut hi) = (0.0, f64::MAX, f64::MIN);
        let n = 1_000_000;
        for _ in 0..n {
            let v = sample_snr(&dist, &mut r);
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!((sum / n as f64 - 10.0).abs() < 0.05);
        assert!(lo >= 0.0 && hi <= 20.0);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { learning_rate: -1.0, ..ok.clone() },
            TrainConfig { snr_dist: SnrDistribution::Uniform { lo_db: 3.0, hi_db: 1.0 }, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn tiny_data(n: usize, side: usize) -> Dataset {
        let images = (0..n)
            .map(|i| {
                let mut r = rng::stream(i as u64, StreamTag::Init, &[77]);
                let px: Vec<u16> = (0..3 * side * side).map(|_| r.random_range(0..256)).collect();
                ImageTensor::from_planar(3, side, side, &px, 255).unwrap()
            })
            .collect();
        Dataset::new(images, Split::Train, "synthetic")
    }

    #[test]
    fn ratio_mismatch_rejected_before_training() {
        let model = Model::<f32>::init(ArchSpec::preset("tiny", 8, true).unwrap(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            bandwidth_ratio: Some(BandwidthRatio::new(1, 6)),
            ..TrainConfig::default()
        };
        let err = train(model, &tiny_data(2, 8), &cfg).unwrap_err();
        assert!(matches!(err, Error::RatioUnreachable(_)), "{err}");
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = Model::<f32>::init(ArchSpec::preset("tiny", 8, false).unwrap(), 0).unwrap();
        model.params_mut().decoder.layers[0].bias.data[0] = f32::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let err = train(model, &tiny_data(2, 8), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn every_layer_receives_updates() {
        let model = Model::<f64>::init(ArchSpec::preset("tiny", 8, true).unwrap(), 3).unwrap();
        let before = model.params().clone();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (after, _) = train(model, &tiny_data(4, 8), &cfg).unwrap();
        for ((name, a), (_, b)) in before.tensors().iter().zip(after.params().tensors()) {
            assert!(a.data.iter().zip(&b.data).any(|(x, y)| x != y), "{name} did not change");
        }
    }

    #[test]
    fn chunking_does_not_change_results() {
        let data = tiny_data(6, 8);
        let run = |chunk_size| {
            let model = Model::<f64>::init(ArchSpec::preset("tiny", 8, true).unwrap(), 1).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 3,
                chunk_size,
                ..TrainConfig::default()
            };
            train(model, &data, &cfg).unwrap()
        };
        let (m1, l1) = run(1);
        let (m3, l3) = run(3);
        for ((_, a), (_, b)) in m1.params().tensors().iter().zip(m3.params().tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
        assert_eq!(l1.records.len(), l3.records.len());
    }

    #[test]
    fn checkpoints_every_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::init(ArchSpec::preset("tiny", 8, true).unwrap(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let (model, log) = train(model, &tiny_data(2, 8), &cfg).unwrap();
        let last = log.records[1].checkpoint.clone().unwrap();
        let ck = load_checkpoint(&last).unwrap();
        assert_eq!(&ck.params, model.params());
        assert_eq!(ck.meta.epochs_completed, 2);
        assert_eq!(log.to_csv(false).lines().count(), 3);
    }

    #[test]
    fn checkpoints_every_n_batches() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::init(ArchSpec::preset("tiny", 8, false).unwrap(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            checkpoint: CheckpointCadence::EveryBatches(2),
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        train(model, &tiny_data(5, 8), &cfg).unwrap();
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["step_00000002.ckpt", "step_00000004.ckpt"]);
    }
}
