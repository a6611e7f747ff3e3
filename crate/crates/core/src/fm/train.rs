use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{fm_loss_grad, TrainItem};
use super::VelocityModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMConfig {
    /// Sample grid C×H×W.
    pub shape: [usize; 3],
    /// Euler steps used when sampling.
    pub integrator_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of synthetic samples per fine-tune batch.
    pub mixture_ratio: f64,
    /// Steps on real data only.
    pub pretrain_steps: usize,
    /// Steps on real/synthetic mixtures.
    pub finetune_steps: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl FMConfig {
    pub fn new(shape: [usize; 3]) -> Self {
        Self {
            shape,
            integrator_steps: 100,
            learning_rate: 3e-3,
            batch_size: 8,
            mixture_ratio: 0.5,
            pretrain_steps: 0,
            finetune_steps: 500,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::invalid("sample shape has a zero dimension"));
        }
        if self.integrator_steps < 1 {
            return Err(Error::invalid("integrator needs at least one step"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mixture_ratio) {
            return Err(Error::invalid(format!("mixture_ratio {} outside [0, 1]", self.mixture_ratio)));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("gradient clip must be positive"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.pretrain_steps + self.finetune_steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub n_real: usize,
    pub n_synthetic: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub real: Vec<TrainItem>,
    pub synthetic: Vec<TrainItem>,
}

/// `(n_real, n_synthetic)` for one batch; fine-tune batches take
/// `floor(mixture_ratio · B)` synthetic samples.
pub fn batch_composition(phase: Phase, batch_size: usize, mixture_ratio: f64) -> (usize, usize) {
    match phase {
        Phase::Pretrain => (batch_size, 0),
        Phase::Finetune => {
            let n_syn = ((mixture_ratio * batch_size as f64).floor() as usize).min(batch_size);
            (batch_size - n_syn, n_syn)
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn check_pool(pool: &[TrainItem], shape: [usize; 3], name: &str) -> Result<()> {
    if let Some(bad) = pool.iter().find(|i| i.sample.shape() != shape) {
        return Err(Error::shape(format!("{shape:?} {name} samples"), format!("{:?}", bad.sample.shape())));
    }
    Ok(())
}

/// Adam on the flow-matching loss: `pretrain_steps` all-real batches, then
/// `finetune_steps` mixed batches. Samples are drawn with replacement.
/// `on_record` sees each record as it is produced.
pub fn train<M: VelocityModel + ?Sized>(
    model: &mut M,
    data: &TrainingSet,
    config: &FMConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    config.validate()?;
    check_pool(&data.real, config.shape, "real")?;
    check_pool(&data.synthetic, config.shape, "synthetic")?;
    let (ft_real, ft_syn) = batch_composition(Phase::Finetune, config.batch_size, config.mixture_ratio);
    if config.pretrain_steps > 0 && data.real.is_empty() {
        return Err(Error::EmptyPool("real"));
    }
    if config.finetune_steps > 0 {
        if ft_real > 0 && data.real.is_empty() {
            return Err(Error::EmptyPool("real"));
        }
        if ft_syn > 0 && data.synthetic.is_empty() {
            return Err(Error::EmptyPool("synthetic"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.params().len());
    let mut records = Vec::with_capacity(config.total_steps());
    for step in 0..config.total_steps() {
        let phase = if step < config.pretrain_steps {
            Phase::Pretrain
        } else {
            Phase::Finetune
        };
        let (n_real, n_syn) = batch_composition(phase, config.batch_size, config.mixture_ratio);
        let mut batch: Vec<&TrainItem> = Vec::with_capacity(config.batch_size);
        for _ in 0..n_real {
            batch.push(&data.real[rng.random_range(0..data.real.len())]);
        }
        for _ in 0..n_syn {
            batch.push(&data.synthetic[rng.random_range(0..data.synthetic.len())]);
        }
        let (loss, mut grad) = fm_loss_grad(&*model, &batch, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        if let Some(clip) = config.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                grad.iter_mut().for_each(|g| *g *= clip / norm);
            }
        }
        adam.update(model.params_mut(), &grad, config.learning_rate);
        let record = TrainRecord {
            step,
            phase,
            loss,
            n_real,
            n_synthetic: n_syn,
        };
        on_record(&record);
        records.push(record);
    }
    Ok(records)
}
