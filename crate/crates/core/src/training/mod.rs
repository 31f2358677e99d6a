//! Optimizer, data pipeline, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod data;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tape;

pub use adam::{lr_schedule, Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, OptimizerState, MAGIC, VERSION};
pub use data::{sample_patch, Augment, Dataset, TrainPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_halving_period: usize,
    pub total_epochs: usize,
    /// LR patch side.
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations_per_epoch: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; the last epoch is always saved.
    pub checkpoint_every: usize,
    /// Emit a loss record every this many iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_halving_period: 200,
            total_epochs: 1000,
            patch_size: 48,
            batch_size: 16,
            iterations_per_epoch: 1000,
            loss: LossKind::L1,
            seed: 0,
            checkpoint_every: 1,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        for (name, v) in [
            ("lr_halving_period", self.lr_halving_period),
            ("epochs", self.total_epochs),
            ("patch_size", self.patch_size),
            ("batch_size", self.batch_size),
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.lr, self.lr_halving_period)
    }
}

/// One line of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.6}\t{:e}",
            self.epoch, self.iteration, self.loss, self.lr
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Everything that evolves during training. Epochs count completed epochs.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    epoch: usize,
    iteration: u64,
}

impl Trainer {
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(model_cfg, cfg.seed)?;
        let adam = Adam::new(model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Keep data sampling off the stream used for initialization.
        rng.set_stream(1);
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            adam,
            rng,
            epoch: 0,
            iteration: 0,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ckpt.to_model()?;
        let adam = ckpt
            .adam()?
            .ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        let mut seed = [0u8; 32];
        let hex: String = ckpt.meta_value("rng_seed")?;
        if hex.len() != 64 {
            return Err(Error::Checkpoint("bad metadata `rng_seed`".into()));
        }
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint("bad metadata `rng_seed`".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(ckpt.meta_value("rng_stream")?);
        rng.set_word_pos(ckpt.meta_value("rng_word_pos")?);
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            adam,
            rng,
            epoch: ckpt.meta_value("epoch")?,
            iteration: ckpt.meta_value("iteration")?,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr_at(self.epoch)
    }

    /// One optimizer update on a freshly sampled batch.
    pub fn step(&mut self, data: &Dataset) -> Result<StepStats> {
        let (x, y) = data.batch::<f32, _>(self.cfg.batch_size, self.cfg.patch_size, &mut self.rng)?;
        self.step_on(&x, &y)
    }

    /// One optimizer update on a given batch.
    pub fn step_on(
        &mut self,
        x: &crate::tensor::Tensor<f32>,
        y: &crate::tensor::Tensor<f32>,
    ) -> Result<StepStats> {
        let lr = self.lr();
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone(), false);
        let out = self.model.forward(&mut tape, &input)?;
        let loss = match self.cfg.loss {
            LossKind::L1 => tape.l1_loss(out, y.clone())?,
            LossKind::L2 => tape.mse_loss(out, y.clone())?,
        };
        let value = tape.value(loss).data()[0] as f64;
        tape.backward(loss)?;
        let grads = tape.param_grads(self.model.params());
        let grad_norm = grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|&g| (g as f64) * (g as f64))
            .sum::<f64>()
            .sqrt();
        if !value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged(format!(
                "iteration {}, epoch {}, lr {lr:e}: loss {value}, grad-norm {grad_norm}",
                self.iteration + 1,
                self.epoch + 1
            )));
        }
        self.adam.step(self.model.params_mut(), &grads, lr)?;
        self.iteration += 1;
        Ok(StepStats {
            loss: value,
            grad_norm,
        })
    }

    /// Run one epoch, reporting a record every `log_every` iterations.
    /// Returns the mean loss.
    pub fn run_epoch(&mut self, data: &Dataset, sink: &mut dyn FnMut(&LossRecord)) -> Result<f64> {
        let lr = self.lr();
        let mut total = 0.0;
        let mut window = 0.0;
        let mut in_window = 0usize;
        for i in 0..self.cfg.iterations_per_epoch {
            let stats = self.step(data)?;
            total += stats.loss;
            window += stats.loss;
            in_window += 1;
            if (i + 1) % self.cfg.log_every == 0 || i + 1 == self.cfg.iterations_per_epoch {
                sink(&LossRecord {
                    epoch: self.epoch + 1,
                    iteration: self.iteration,
                    loss: window / in_window as f64,
                    lr,
                });
                window = 0.0;
                in_window = 0;
            }
        }
        self.epoch += 1;
        let mean = total / self.cfg.iterations_per_epoch as f64;
        log::info!("epoch {} mean loss {mean:.6} lr {lr:e}", self.epoch);
        Ok(mean)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_model(&self.model).with_optimizer(&self.adam);
        for (k, v) in config::train_pairs(&self.cfg) {
            ckpt.meta.insert(format!("train.{k}"), v);
        }
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        ckpt.meta.insert("rng_seed".into(), seed);
        ckpt.meta.insert("rng_stream".into(), self.rng.get_stream().to_string());
        ckpt.meta.insert("rng_word_pos".into(), self.rng.get_word_pos().to_string());
        ckpt.meta.insert("epoch".into(), self.epoch.to_string());
        ckpt.meta.insert("iteration".into(), self.iteration.to_string());
        ckpt
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.xsrn"))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: usize,
    pub last_loss: f64,
    pub checkpoints: Vec<PathBuf>,
}

/// Train until `total_epochs`. With `out_dir`, checkpoints go there and the
/// loss curve is appended to `loss.log`.
pub fn train_loop(
    trainer: &mut Trainer,
    data: &Dataset,
    out_dir: Option<&Path>,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<TrainSummary> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("loss.log");
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, file))
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let mut last_loss = f64::NAN;
    let total = trainer.cfg.total_epochs;
    while trainer.epoch < total {
        let mut write_err = None;
        last_loss = trainer.run_epoch(data, &mut |rec| {
            if let Some((path, file)) = log_file.as_mut() {
                if let Err(e) = writeln!(file, "{rec}") {
                    write_err.get_or_insert_with(|| Error::io(path.clone(), e));
                }
            }
            sink(rec);
        })?;
        if let Some(e) = write_err {
            return Err(e);
        }
        let every = trainer.cfg.checkpoint_every;
        let due = (every > 0 && trainer.epoch.is_multiple_of(every)) || trainer.epoch == total;
        if let (Some(dir), true) = (out_dir, due) {
            let path = checkpoint_path(dir, trainer.epoch);
            trainer.checkpoint().save(&path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainSummary {
        epochs: trainer.epoch,
        last_loss,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn schedule_halves() {
        assert_eq!(lr_schedule(0, 1e-4, 200), 1e-4);
        assert_eq!(lr_schedule(199, 1e-4, 200), 1e-4);
        assert_eq!(lr_schedule(400, 1e-4, 200), 2.5e-5);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::new(Shape::vector(3), vec![1.0, -2.0, 0.5]).unwrap());
        let mut adam = Adam::new(&store);
        let g = Tensor::new(Shape::vector(3), vec![0.3, -5.0, 1e-3]).unwrap();
        adam.step(&mut store, &[g], 0.01).unwrap();
        let w = store.tensors()[0].data();
        for (after, (before, sign)) in w.iter().zip([(1.0, 1.0), (-2.0, -1.0), (0.5, 1.0)]) {
            let delta = after - before;
            assert!(delta * sign < 0.0);
            assert!(delta.abs() <= 0.01 && delta.abs() >= 0.0099, "{delta}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
