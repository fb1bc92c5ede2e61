use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, DEFAULT_LR};
use super::lstm::{squared_error, Lstm, ReluPlacement, DEFAULT_HIDDEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a lower training loss.
    pub patience: Option<usize>,
    /// Also train on days `1..d` of every sequence, `d = 1..T`.
    pub prefix_augmentation: bool,
    pub relu: ReluPlacement,
    pub hidden: usize,
    pub lr: f64,
    /// Start the head bias at the mean training target instead of a random draw.
    pub init_output_bias_to_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            seed: 0,
            patience: None,
            prefix_augmentation: true,
            relu: ReluPlacement::Output,
            hidden: DEFAULT_HIDDEN,
            lr: DEFAULT_LR,
            init_output_bias_to_mean: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Invalid("hidden size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub inputs: Vec<Vec<f64>>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Lstm,
    /// Mean per-example loss of each completed epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam on mean squared error. The same examples, config and
/// seed always give the same parameters.
pub fn train(examples: &[TrainExample], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    let Some(first) = examples.first() else {
        return Err(Error::EmptyInput("no training examples"));
    };
    let input = first.inputs.first().map(Vec::len).unwrap_or(0);
    if input == 0 {
        return Err(Error::Invalid("training example with no input".into()));
    }

    let expanded: Vec<(&[Vec<f64>], f64)> = examples
        .iter()
        .flat_map(|e| {
            let lens = if config.prefix_augmentation {
                1..=e.inputs.len()
            } else {
                e.inputs.len()..=e.inputs.len()
            };
            lens.map(move |l| (&e.inputs[..l], e.target))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Lstm::init_uniform(input, config.hidden, config.relu, &mut rng);
    if config.init_output_bias_to_mean {
        let mean = examples.iter().map(|e| e.target).sum::<f64>() / examples.len() as f64;
        model.set_b_out(mean);
    }
    let mut adam = Adam::new(model.params.len(), config.lr);

    let mut order: Vec<usize> = (0..expanded.len()).collect();
    let mut grads = vec![0.0; model.params.len()];
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let (seq, target) = expanded[k];
                let cache = model.forward(seq)?;
                total += squared_error(cache.prediction, target);
                model.accumulate_grads(&cache, 2.0 * (cache.prediction - target) * scale, &mut grads);
            }
            adam.step(&mut model.params, &grads);
        }
        let loss = total / expanded.len() as f64;
        if !loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        loss_trace.push(loss);
        if let Some(patience) = config.patience {
            if loss < best {
                best = loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    log::debug!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    Ok(Trained { model, loss_trace })
}

/// Mean squared error of `model` on the full sequences of `examples`.
pub fn evaluate_loss(model: &Lstm, examples: &[TrainExample]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        total += squared_error(model.predict(&e.inputs)?, e.target);
    }
    Ok(total / examples.len().max(1) as f64)
}
