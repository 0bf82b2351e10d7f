//! Training loop: full-batch and mini-batch gradient descent with optional
//! momentum, Adam, coupled weight decay and a two-phase learning-rate schedule.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{loss_and_gradients, GradientSet, Head, LinearMoments, Network};
use crate::rng::SeededRng;
use crate::targets::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Full-batch gradient descent.
    Gd,
    /// Mini-batch gradient descent over a fresh permutation each epoch.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Heavy-ball coefficient; 0 disables momentum.
    pub momentum: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Mini-batch size for `sgd` and `adam`; ignored by `gd`.
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Gd,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            momentum: 0.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !unit(self.adam_betas.0) || !unit(self.adam_betas.1) {
            return bad(format!("Adam betas must lie in [0, 1), got {:?}", self.adam_betas));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("Adam epsilon must be positive, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}

/// `main_epochs` at the base rate, then `extra_epochs` at the rate divided by
/// `drop_factor`. Monitors fire every `record_every` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub main_epochs: usize,
    pub drop_factor: f64,
    pub extra_epochs: usize,
    pub record_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { main_epochs: 5_000, drop_factor: 10.0, extra_epochs: 100, record_every: 50 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.main_epochs == 0 {
            return Err(Error::ConfigInvalid("main_epochs must be at least 1".into()));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor.is_finite()) {
            return Err(Error::ConfigInvalid(format!("drop factor must be positive, got {}", self.drop_factor)));
        }
        if self.record_every == 0 {
            return Err(Error::ConfigInvalid("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.main_epochs + self.extra_epochs
    }

    /// Whether monitors fire after `epoch` (epoch 0 is the initial state).
    pub fn records(&self, epoch: usize) -> bool {
        epoch % self.record_every == 0 || epoch == self.total_epochs()
    }
}

/// Network plus optimizer buffers.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: Network,
    /// Momentum buffer, or Adam's first moment.
    velocity: Vec<Vec<f64>>,
    /// Adam's second moment.
    second_moment: Vec<Vec<f64>>,
    pub epoch: usize,
    pub steps: u64,
    /// Continuous time: the sum of learning rates over all steps taken.
    pub flow_time: f64,
    pub rng: SeededRng,
}

impl TrainState {
    pub fn new(net: Network, rng: SeededRng) -> Self {
        let mut net = net;
        let zeros: Vec<Vec<f64>> =
            net.parameter_blocks_mut().iter().map(|(block, _)| vec![0.0; block.len()]).collect();
        TrainState { net, velocity: zeros.clone(), second_moment: zeros, epoch: 0, steps: 0, flow_time: 0.0, rng }
    }

    /// One optimizer update on `batch`; returns the batch loss before the update.
    pub fn step(&mut self, cfg: &OptimizerConfig, batch: &Dataset) -> Result<f64> {
        self.step_with(cfg, cfg.learning_rate, batch, None)
    }

    fn step_with(
        &mut self,
        cfg: &OptimizerConfig,
        lr: f64,
        batch: &Dataset,
        moments: Option<&LinearMoments>,
    ) -> Result<f64> {
        let (loss, grads) = loss_and_gradients(&self.net, batch, moments)?;
        self.apply(cfg, lr, &grads);
        self.steps += 1;
        self.flow_time += lr;
        Ok(loss)
    }

    fn apply(&mut self, cfg: &OptimizerConfig, lr: f64, grads: &GradientSet) {
        let decay = cfg.weight_decay;
        let adam = cfg.kind == OptimizerKind::Adam;
        let (b1, b2) = cfg.adam_betas;
        let t = (self.steps + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let blocks = self.net.parameter_blocks_mut();
        for (k, ((params, decays), g)) in blocks.into_iter().zip(grads.blocks()).enumerate() {
            let vel = &mut self.velocity[k];
            let sec = &mut self.second_moment[k];
            for i in 0..params.len() {
                let w = params[i];
                let gi = if decays { g[i] + decay * w } else { g[i] };
                params[i] = if adam {
                    vel[i] = b1 * vel[i] + (1.0 - b1) * gi;
                    sec[i] = b2 * sec[i] + (1.0 - b2) * gi * gi;
                    w - lr * (vel[i] / c1) / ((sec[i] / c2).sqrt() + cfg.adam_eps)
                } else if cfg.momentum > 0.0 {
                    vel[i] = cfg.momentum * vel[i] + gi;
                    w - lr * vel[i]
                } else {
                    w - lr * gi
                };
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
    }
}

/// Observer called at recorded epochs.
pub trait Monitor {
    fn record(&mut self, state: &TrainState, data: &Dataset) -> Result<()>;

    /// Called once when training aborts on a non-finite loss or parameter.
    fn diverged(&mut self, _epoch: usize) {}
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub epochs: usize,
    pub flow_time: f64,
}

/// Runs the full schedule. Deterministic for a given `rng` state.
///
/// On a non-finite loss or parameter the run stops with
/// [`Error::DivergenceDetected`]; monitors keep whatever they recorded.
pub fn train(
    net: Network,
    data: &Dataset,
    cfg: &OptimizerConfig,
    sched: &Schedule,
    rng: SeededRng,
    monitors: &mut [&mut dyn Monitor],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    sched.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut state = TrainState::new(net, rng);
    for m in monitors.iter_mut() {
        m.record(&state, data)?;
    }
    // A linear-output model under full-batch descent only ever sees the
    // dataset's second moments.
    let moments = (cfg.kind == OptimizerKind::Gd && matches!(state.net.head(), Head::None))
        .then(|| LinearMoments::new(data));
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=sched.total_epochs() {
        let lr = if epoch <= sched.main_epochs {
            cfg.learning_rate
        } else {
            cfg.learning_rate / sched.drop_factor
        };
        let mut finite = true;
        if cfg.kind == OptimizerKind::Gd {
            finite &= state.step_with(cfg, lr, data, moments.as_ref())?.is_finite();
        } else {
            order.shuffle(&mut state.rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = data.subset(chunk)?;
                finite &= state.step_with(cfg, lr, &batch, None)?.is_finite();
            }
        }
        state.epoch = epoch;
        if !finite || !state.is_finite() {
            for m in monitors.iter_mut() {
                m.diverged(epoch);
            }
            return Err(Error::DivergenceDetected { epoch });
        }
        if sched.records(epoch) {
            for m in monitors.iter_mut() {
                m.record(&state, data)?;
            }
        }
    }
    Ok(TrainOutcome { net: state.net, epochs: state.epoch, flow_time: state.flow_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::default_uniform_init;
    use crate::linalg::Matrix;
    use crate::network::{mse_loss, LinearStack};
    use crate::rng::seeded;

    fn scalar_data(xs: Vec<f64>, ys: Vec<f64>) -> Dataset {
        let n = ys.len();
        let d = xs.len() / n;
        Dataset::new(Matrix::from_vec(n, d, xs).unwrap(), Matrix::from_vec(n, 1, ys).unwrap()).unwrap()
    }

    fn one_weight(w: f64) -> Network {
        Network::linear(LinearStack::new(vec![Matrix::from_vec(1, 1, vec![w]).unwrap()], None).unwrap())
    }

    fn gd(lr: f64, decay: f64) -> OptimizerConfig {
        OptimizerConfig { learning_rate: lr, weight_decay: decay, ..OptimizerConfig::default() }
    }

    #[test]
    fn zero_gradient_fixed_point_and_pure_decay() {
        // x = 0 makes the loss gradient vanish for every weight.
        let data = scalar_data(vec![0.0], vec![0.0]);
        let mut state = TrainState::new(one_weight(0.7), seeded(1));
        state.step(&gd(0.1, 0.0), &data).unwrap();
        assert_eq!(state.net.stack().weight(0)[(0, 0)], 0.7);
        state.step(&gd(0.1, 0.5), &data).unwrap();
        assert_eq!(state.net.stack().weight(0)[(0, 0)], (1.0 - 0.1 * 0.5) * 0.7);
    }

    #[test]
    fn quadratic_hand_update() {
        // L(w) = (w·1 − 0)² = w², so w ← w − 0.1·2w = 0.8.
        let data = scalar_data(vec![1.0], vec![0.0]);
        let mut state = TrainState::new(one_weight(1.0), seeded(2));
        state.step(&gd(0.1, 0.0), &data).unwrap();
        assert!((state.net.stack().weight(0)[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_and_adam_first_steps() {
        let data = scalar_data(vec![1.0], vec![0.0]);
        let cfg = OptimizerConfig { momentum: 0.9, learning_rate: 0.1, ..OptimizerConfig::default() };
        let mut state = TrainState::new(one_weight(1.0), seeded(3));
        state.step(&cfg, &data).unwrap();
        state.step(&cfg, &data).unwrap();
        // v₁ = 2, w₁ = 0.8; v₂ = 0.9·2 + 1.6 = 3.4, w₂ = 0.8 − 0.34.
        assert!((state.net.stack().weight(0)[(0, 0)] - 0.46).abs() < 1e-14);

        let cfg = OptimizerConfig { kind: OptimizerKind::Adam, learning_rate: 0.01, ..OptimizerConfig::default() };
        let mut state = TrainState::new(one_weight(1.0), seeded(4));
        state.step(&cfg, &data).unwrap();
        // The first bias-corrected Adam step has magnitude ≈ lr.
        assert!((state.net.stack().weight(0)[(0, 0)] - (1.0 - 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-14);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            OptimizerConfig { learning_rate: 0.0, ..OptimizerConfig::default() },
            OptimizerConfig { weight_decay: -1.0, ..OptimizerConfig::default() },
            OptimizerConfig { momentum: 1.0, ..OptimizerConfig::default() },
            OptimizerConfig { batch_size: 0, ..OptimizerConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
        }
        assert!(Schedule { record_every: 0, ..Schedule::default() }.validate().is_err());
        assert!(Schedule { main_epochs: 0, ..Schedule::default() }.validate().is_err());
    }

    struct Losses(Vec<(usize, f64)>, Option<usize>);

    impl Monitor for Losses {
        fn record(&mut self, state: &TrainState, data: &Dataset) -> Result<()> {
            self.0.push((state.epoch, mse_loss(&state.net, data)?));
            Ok(())
        }

        fn diverged(&mut self, epoch: usize) {
            self.1 = Some(epoch);
        }
    }

    fn linear_problem(seed: u64) -> (Network, Dataset) {
        let mut rng = seeded(seed);
        let stack = default_uniform_init(&[3, 6, 6, 2], &mut rng).unwrap();
        let teacher = default_uniform_init(&[3, 2], &mut rng).unwrap();
        let xs = Matrix::from_fn(32, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        let ys = xs.matmul_t(teacher.weight(0)).unwrap();
        (Network::linear(stack), Dataset::new(xs, ys).unwrap())
    }

    #[test]
    fn descent_is_monotone_and_monitors_fire_on_schedule() {
        let (net, data) = linear_problem(5);
        let sched = Schedule { main_epochs: 300, drop_factor: 10.0, extra_epochs: 25, record_every: 1 };
        let mut losses = Losses(Vec::new(), None);
        train(net, &data, &gd(1e-2, 0.0), &sched, seeded(6), &mut [&mut losses]).unwrap();
        assert_eq!(losses.0.len(), 326);
        assert!(losses.0.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));

        let sparse = Schedule { main_epochs: 10, drop_factor: 10.0, extra_epochs: 3, record_every: 4 };
        let mut rec = Losses(Vec::new(), None);
        let (net, _) = linear_problem(5);
        train(net, &data, &gd(1e-3, 0.0), &sparse, seeded(6), &mut [&mut rec]).unwrap();
        let epochs: Vec<usize> = rec.0.iter().map(|e| e.0).collect();
        assert_eq!(epochs, vec![0, 4, 8, 12, 13]);
    }

    #[test]
    fn interpolating_start_stays_put() {
        let (net, data) = linear_problem(7);
        let ys = data.inputs.matmul_t(&crate::network::end_to_end_jacobian(net.stack())).unwrap();
        let exact = Dataset::new(data.inputs.clone(), ys).unwrap();
        let sched = Schedule { main_epochs: 200, drop_factor: 10.0, extra_epochs: 0, record_every: 20 };
        let mut losses = Losses(Vec::new(), None);
        train(net, &exact, &gd(1e-2, 0.0), &sched, seeded(8), &mut [&mut losses]).unwrap();
        assert!(losses.0.iter().all(|(_, l)| *l <= 1e-12));
    }

    #[test]
    fn sgd_is_deterministic_per_seed() {
        let (net, data) = linear_problem(9);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 5,
            weight_decay: 1e-3,
            ..OptimizerConfig::default()
        };
        let sched = Schedule { main_epochs: 40, drop_factor: 10.0, extra_epochs: 5, record_every: 10 };
        let a = train(net.clone(), &data, &cfg, &sched, seeded(10), &mut []).unwrap();
        let b = train(net, &data, &cfg, &sched, seeded(10), &mut []).unwrap();
        assert_eq!(a.net, b.net);
        // 32 points in batches of 5 → 7 steps per epoch.
        let expected = 40.0 * 7.0 * 1e-2 + 5.0 * 7.0 * 1e-3;
        assert!((a.flow_time - expected).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let (net, data) = linear_problem(11);
        let sched = Schedule { main_epochs: 500, drop_factor: 10.0, extra_epochs: 0, record_every: 10 };
        let mut losses = Losses(Vec::new(), None);
        let err = train(net, &data, &gd(50.0, 0.0), &sched, seeded(12), &mut [&mut losses]).unwrap_err();
        let Error::DivergenceDetected { epoch } = err else { panic!("unexpected {err:?}") };
        assert_eq!(losses.1, Some(epoch));
        assert!(!losses.0.is_empty());
    }
}
