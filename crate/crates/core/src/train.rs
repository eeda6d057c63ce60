//! Mini-batch SGD with momentum on the cross-entropy loss, plus a
//! central-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMapKind;
use crate::nn::{Gradients, Mlp, Workspace, DIGIT_ARCHITECTURE, NUM_CLASSES};
use crate::{Error, Result};

/// Feature vectors (flat, row-major) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl FeatureDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Shape {
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Label(bad));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (
            &self.features[i * self.dim..(i + 1) * self.dim],
            self.labels[i],
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub use_bias: bool,
    pub feature_map: FeatureMapKind,
    /// Layer widths, input first.
    pub dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            use_bias: false,
            feature_map: FeatureMapKind::Identity,
            dims: DIGIT_ARCHITECTURE.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::Config(format!(
                "batch size {} must lie in 1..={dataset_len}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be a non-negative finite number",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    /// Mean per-sample loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialised network. Deterministic in `(config, data order)`.
///
/// A zero learning rate is accepted and leaves the initial parameters untouched.
pub fn train(config: &TrainConfig, data: &FeatureDataset) -> Result<TrainOutcome> {
    config.validate(data.len())?;
    if config.dims.first() != Some(&data.dim()) {
        return Err(Error::Shape {
            expected: config.dims.first().copied().unwrap_or(0),
            actual: data.dim(),
        });
    }
    let mut model = Mlp::init(&config.dims, config.use_bias, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);

    let mut ws = Workspace::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut velocity = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let (x, y) = data.sample(i);
                total += model.accumulate_gradient(x, y, &mut ws, &mut grads);
            }
            let scale = config.learning_rate / batch.len() as f64;
            if !apply_momentum_step(&mut model, &mut velocity, &grads, scale, config.momentum) {
                return Err(Error::Diverged {
                    epoch,
                    loss: total / data.len() as f64,
                });
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        debug_assert_eq!(model.has_bias(), config.use_bias);
        epoch_losses.push(mean);
    }
    assert_eq!(
        model.has_bias(),
        config.use_bias,
        "bias presence changed during training"
    );
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Mixed into the seed so the shuffle stream differs from the init stream.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Fisher-Yates with the given generator.
pub(crate) fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Returns `false` once any parameter is non-finite.
fn apply_momentum_step(
    model: &mut Mlp,
    velocity: &mut Gradients,
    grads: &Gradients,
    scale: f64,
    momentum: f64,
) -> bool {
    let mut finite = true;
    let mut step = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v - scale * g;
            *p += *v;
            finite &= p.is_finite();
        }
    };
    for ((layer, v), g) in model
        .layers_mut()
        .iter_mut()
        .zip(&mut velocity.layers)
        .zip(&grads.layers)
    {
        step(&mut layer.weights, &mut v.weights, &g.weights);
        if let (Some(b), Some(vb), Some(gb)) = (&mut layer.bias, &mut v.bias, &g.bias) {
            step(b, vb, gb);
        }
    }
    finite
}

/// Mean cross-entropy over a dataset.
pub fn mean_loss(model: &Mlp, data: &FeatureDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("mean_loss".into()));
    }
    let mut total = 0.0;
    for (x, y) in data.iter() {
        total += model.loss(x, y)?;
    }
    Ok(total / data.len() as f64)
}

/// Maximum relative error between the analytic gradient and central
/// differences, `|a - n| / max(|a|, |n|, 1e-12)`, over every parameter.
pub fn grad_check(model: &Mlp, features: &[f64], label: usize, step: f64) -> Result<f64> {
    let analytic = model.backward(features, label)?.flatten();
    grad_check_against(model, features, label, step, &analytic)
}

/// Same as [`grad_check`] but against a caller-supplied gradient.
pub fn grad_check_against(
    model: &Mlp,
    features: &[f64],
    label: usize,
    step: f64,
    analytic: &[f64],
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::Config(format!("step {step} outside [1e-7, 1e-3]")));
    }
    let numeric = numeric_gradient(model, features, label, step)?;
    if numeric.len() != analytic.len() {
        return Err(Error::Shape {
            expected: numeric.len(),
            actual: analytic.len(),
        });
    }
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max))
}

/// Central differences of the sample loss with respect to every parameter.
pub fn numeric_gradient(model: &Mlp, features: &[f64], label: usize, step: f64) -> Result<Vec<f64>> {
    let base = model.params();
    let mut probe = model.clone();
    let mut params = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        params[k] = base[k] + step;
        probe.set_params(&params)?;
        let up = probe.loss(features, label)?;
        params[k] = base[k] - step;
        probe.set_params(&params)?;
        let down = probe.loss(features, label)?;
        params[k] = base[k];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(n: usize, dim: usize, seed: u64) -> FeatureDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n * dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let labels = (0..n).map(|i| i % NUM_CLASSES).collect();
        FeatureDataset::new(dim, features, labels).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            dims: vec![6, 4, 10],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialisation() {
        let data = toy_data(40, 6, 1);
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..small_config()
        };
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.model, Mlp::init(&cfg.dims, false, cfg.seed).unwrap());
        assert_eq!(out.epoch_losses.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data(50, 6, 2);
        let cfg = TrainConfig {
            use_bias: true,
            ..small_config()
        };
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        let bits = |m: &Mlp| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        assert!(a.model.has_bias());
    }

    #[test]
    fn config_validation() {
        let data = toy_data(10, 6, 3);
        for cfg in [
            TrainConfig { epochs: 0, ..small_config() },
            TrainConfig { batch_size: 0, ..small_config() },
            TrainConfig { batch_size: 11, ..small_config() },
            TrainConfig { learning_rate: f64::NAN, ..small_config() },
        ] {
            assert!(matches!(train(&cfg, &data), Err(Error::Config(_))));
        }
        let wrong_dim = TrainConfig { dims: vec![5, 10], ..small_config() };
        assert!(matches!(train(&wrong_dim, &data), Err(Error::Shape { .. })));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = toy_data(40, 6, 4);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            ..small_config()
        };
        match train(&cfg, &data) {
            Err(Error::Diverged { epoch, .. }) => assert!((1..=cfg.epochs).contains(&epoch)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_reduces_loss() {
        let data = toy_data(60, 6, 5);
        let cfg = TrainConfig { epochs: 40, ..small_config() };
        let out = train(&cfg, &data).unwrap();
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    }

    #[test]
    fn grad_check_passes_and_detects_faults() {
        let mlp = Mlp::init(&DIGIT_ARCHITECTURE, true, 0).unwrap();
        let data = toy_data(1, 64, 6);
        let (x, y) = data.sample(0);
        assert!(grad_check(&mlp, x, y, 1e-5).unwrap() < 1e-5);

        let mut bad = mlp.backward(x, y).unwrap().flatten();
        let k = bad.iter().position(|g| g.abs() > 1e-3).unwrap();
        bad[k] *= 2.0;
        assert!(grad_check_against(&mlp, x, y, 1e-5, &bad).unwrap() > 1e-2);

        assert!(grad_check(&mlp, x, y, 1e-2).is_err());
    }
}
