//! Deep-SVDD one-class anomaly detection.
//!
//! A bias-free relu encoder maps inputs (raw observations or the weak
//! agent's latent activations) into an embedding space; training minimizes
//! the mean squared distance to a fixed center `c`, pulling in-distribution
//! points into the tightest hypersphere the encoder can form. The anomaly
//! score of an input is its squared distance to `c`.
//!
//! The encoder has no bias terms and no bounded activations, and `c` is
//! frozen after initialization with every coordinate clamped away from zero;
//! without these constraints the objective admits trivial collapsed minima.
//! Thresholds are upper-tail percentiles of the training-set scores, so the
//! gate's percentile knob `p` again means "ask on ~p% of calibration data".

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{generate_level, Env, GenConfig, Mode};
use crate::gating::nearest_rank;
use crate::neural::{
    adam_step, encoder_backward, encoder_forward, encoder_forward_traced, init_encoder_params,
    AdamParams, AdamState, EncoderSpec, NeuralError, ParamSet, PolicySnapshot,
};
use crate::rng::{stream, ROLE_WEAK};

/// Minimum absolute value of any center coordinate.
pub const CENTER_CLAMP: f64 = 0.1;

/// Which vector the detector scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SvddInputKind {
    /// The flattened environment observation.
    Raw,
    /// The weak policy's designated latent activations.
    Latent,
}

impl SvddInputKind {
    pub fn name(self) -> &'static str {
        match self {
            SvddInputKind::Raw => "raw",
            SvddInputKind::Latent => "latent",
        }
    }
}

impl std::str::FromStr for SvddInputKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(SvddInputKind::Raw),
            "latent" => Ok(SvddInputKind::Latent),
            other => Err(format!("unknown svdd input kind `{other}` (raw|latent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvddTrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SvddTrainConfig {
    fn default() -> Self {
        SvddTrainConfig {
            epochs: 20,
            minibatch: 128,
            lr: 1e-3,
            weight_decay: 1e-6,
            seed: 0,
        }
    }
}

/// Training provenance carried by the model and its sidecar record.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddProvenance {
    pub weak_id: String,
    pub dataset_runs: usize,
    pub dataset_seed_start: u64,
    pub n_vectors: usize,
    pub center_clamp: f64,
    pub config: SvddTrainConfig,
}

/// Trained detector: encoder, frozen center, and input kind.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddModel {
    pub spec: EncoderSpec,
    pub params: ParamSet,
    pub center: Vec<f64>,
    pub input_kind: SvddInputKind,
    pub provenance: SvddProvenance,
}

#[derive(Debug, Error)]
pub enum SvddError {
    #[error("dataset smaller than minibatch ({n} < {minibatch})")]
    DatasetTooSmall { n: usize, minibatch: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl SvddModel {
    /// Embedding of one input under the trained encoder.
    pub fn embed(&self, x: &[f32]) -> Result<Vec<f64>, NeuralError> {
        encoder_forward(&self.spec, &self.params, x)
    }

    /// Anomaly score: squared Euclidean distance of the embedding to the
    /// center.
    pub fn score(&self, x: &[f32]) -> Result<f64, NeuralError> {
        let emb = self.embed(x)?;
        Ok(squared_distance(&emb, &self.center))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Default encoder architecture over inputs of width `input_dim`.
pub fn default_encoder_spec(input_dim: usize) -> EncoderSpec {
    EncoderSpec {
        input_dim,
        hidden: vec![64, 32],
        out_dim: 16,
    }
}

/// Collects one vector per timestep from weak-agent rollouts on train-mode
/// levels: the raw observation or the weak latent, per `input_kind`.
pub fn collect_svdd_dataset(
    weak: &PolicySnapshot,
    input_kind: SvddInputKind,
    env_config: &GenConfig,
    n_runs: usize,
    seed_start: u64,
) -> Vec<Vec<f32>> {
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| seed_start + i).collect();
    let per_episode = crate::exec::ordered_map(&seeds, |&seed| {
        let Ok(level) = generate_level(seed, Mode::Train, env_config) else {
            return Vec::new();
        };
        let (mut env, mut obs) = Env::reset(level, env_config);
        let mut rng = stream(seed, ROLE_WEAK);
        let mut vectors = Vec::new();
        loop {
            let (action, _, out) = weak.act(&obs.data, &mut rng).expect("obs dim fixed");
            vectors.push(match input_kind {
                SvddInputKind::Raw => obs.data.clone(),
                SvddInputKind::Latent => out.latent.iter().map(|&v| v as f32).collect(),
            });
            let step = env.step(crate::env::ActionId::from_index(action)).unwrap();
            obs = step.obs;
            if step.done {
                break;
            }
        }
        vectors
    });
    per_episode.into_iter().flatten().collect()
}

/// Center initialization: mean embedding of the dataset under the initial
/// encoder, with every coordinate clamped to magnitude >= [`CENTER_CLAMP`]
/// (sign preserved, zero treated as positive).
pub fn init_center(spec: &EncoderSpec, params: &ParamSet, dataset: &[Vec<f32>]) -> Vec<f64> {
    assert!(!dataset.is_empty(), "center needs a nonempty dataset");
    let mut mean = vec![0.0; spec.out_dim];
    for x in dataset {
        let emb = encoder_forward(spec, params, x).expect("dataset width fixed");
        for (m, e) in mean.iter_mut().zip(emb.iter()) {
            *m += e;
        }
    }
    for m in mean.iter_mut() {
        *m /= dataset.len() as f64;
        if m.abs() < CENTER_CLAMP {
            *m = if *m < 0.0 { -CENTER_CLAMP } else { CENTER_CLAMP };
        }
    }
    mean
}

/// Trains a Deep-SVDD encoder on `dataset` by minibatch Adam on
/// `mean ||phi(x) - c||^2 + weight_decay * ||W||^2` with `c` held fixed.
pub fn train_svdd(
    weak_id: &str,
    input_kind: SvddInputKind,
    spec: EncoderSpec,
    dataset: &[Vec<f32>],
    dataset_runs: usize,
    dataset_seed_start: u64,
    config: &SvddTrainConfig,
) -> Result<SvddModel, SvddError> {
    if dataset.len() < config.minibatch {
        return Err(SvddError::DatasetTooSmall {
            n: dataset.len(),
            minibatch: config.minibatch,
        });
    }
    let mut params = init_encoder_params(&spec, config.seed);
    let center = init_center(&spec, &params, dataset);
    let mut adam = AdamState::new(&params, AdamParams::with_lr(config.lr));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(config.seed, 0x5d));

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.minibatch) {
            let scale = 1.0 / batch.len() as f64;
            let mut traces = Vec::with_capacity(batch.len());
            let mut d_outs = Vec::with_capacity(batch.len());
            let mut loss = 0.0;
            for &i in batch {
                let (emb, trace) = encoder_forward_traced(&spec, &params, &dataset[i])?;
                loss += squared_distance(&emb, &center) * scale;
                d_outs.push(
                    emb.iter()
                        .zip(center.iter())
                        .map(|(e, c)| 2.0 * (e - c) * scale)
                        .collect::<Vec<f64>>(),
                );
                traces.push(trace);
            }
            if !loss.is_finite() {
                return Err(SvddError::NonFiniteLoss { epoch });
            }
            let mut grads = encoder_backward(&spec, &params, &traces, &d_outs)?;
            if config.weight_decay > 0.0 {
                for (g, p) in grads.tensors.iter_mut().zip(params.tensors.iter()) {
                    for (gv, pv) in g.data.iter_mut().zip(p.data.iter()) {
                        *gv += 2.0 * config.weight_decay * pv;
                    }
                }
            }
            adam_step(&mut params, &grads, &mut adam);
        }
    }

    Ok(SvddModel {
        spec,
        params,
        center,
        input_kind,
        provenance: SvddProvenance {
            weak_id: weak_id.to_string(),
            dataset_runs,
            dataset_seed_start,
            n_vectors: dataset.len(),
            center_clamp: CENTER_CLAMP,
            config: config.clone(),
        },
    })
}

/// Sorted anomaly scores of the calibration dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SvddScoreTable {
    scores: Vec<f64>,
}

impl SvddScoreTable {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Threshold for percentile `p` through the upper tail: the
    /// `(100 - p)`th nearest-rank score, so that ~`p`% of calibration
    /// scores exceed it (ask-when-above direction).
    pub fn threshold_for_percentile(&self, p: f64) -> Result<f64, crate::gating::GatingError> {
        nearest_rank(&self.scores, 100.0 - p)
    }

    /// CSV dump mirroring the gate threshold tables.
    pub fn to_csv(&self, model: &SvddModel) -> String {
        let p = &model.provenance;
        let mut out = format!(
            "# weak={} input_kind={} runs={} seed_start={} samples={}\n",
            p.weak_id,
            model.input_kind.name(),
            p.dataset_runs,
            p.dataset_seed_start,
            self.scores.len()
        );
        out.push_str("metric,rank,value\n");
        for (i, v) in self.scores.iter().enumerate() {
            out.push_str(&format!("svdd_{},{},{}\n", model.input_kind.name(), i + 1, v));
        }
        out
    }
}

/// Scores every calibration vector and returns the sorted table.
pub fn calibrate_svdd(model: &SvddModel, dataset: &[Vec<f32>]) -> SvddScoreTable {
    let mut scores = crate::exec::ordered_map(dataset, |x| model.score(x).expect("width fixed"));
    scores.sort_by(f64::total_cmp);
    SvddScoreTable { scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_params, NetSpec};

    fn toy_spec() -> EncoderSpec {
        EncoderSpec {
            input_dim: 6,
            hidden: vec![8, 4],
            out_dim: 3,
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> Vec<Vec<f32>> {
        use rand::Rng;
        let mut rng = stream(seed, 1);
        (0..n)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect()
    }

    fn toy_model(dataset: &[Vec<f32>], config: &SvddTrainConfig) -> SvddModel {
        train_svdd(
            "weak-test",
            SvddInputKind::Raw,
            toy_spec(),
            dataset,
            0,
            0,
            config,
        )
        .unwrap()
    }

    #[test]
    fn center_coordinates_are_clamped_away_from_zero() {
        let spec = toy_spec();
        let params = init_encoder_params(&spec, 9);
        let data = toy_dataset(32, 3);
        let c = init_center(&spec, &params, &data);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|v| v.abs() >= CENTER_CLAMP));
    }

    #[test]
    fn singleton_dataset_center_is_clamped_embedding() {
        let spec = toy_spec();
        let params = init_encoder_params(&spec, 9);
        let data = toy_dataset(1, 4);
        let emb = encoder_forward(&spec, &params, &data[0]).unwrap();
        let c = init_center(&spec, &params, &data);
        for (ci, ei) in c.iter().zip(emb.iter()) {
            if ei.abs() >= CENTER_CLAMP {
                assert_eq!(ci, ei);
            } else {
                assert_eq!(ci.abs(), CENTER_CLAMP);
            }
        }
    }

    #[test]
    fn training_reduces_mean_score() {
        let data = toy_dataset(64, 5);
        let cfg = SvddTrainConfig {
            epochs: 30,
            minibatch: 16,
            lr: 1e-3,
            weight_decay: 1e-6,
            seed: 2,
        };
        let trained = toy_model(&data, &cfg);
        let initial = toy_model(&data, &SvddTrainConfig { epochs: 0, ..cfg.clone() });
        let mean = |m: &SvddModel| {
            data.iter().map(|x| m.score(x).unwrap()).sum::<f64>() / data.len() as f64
        };
        assert!(
            mean(&trained) < mean(&initial),
            "training did not shrink the sphere: {} vs {}",
            mean(&trained),
            mean(&initial)
        );
    }

    #[test]
    fn zero_epochs_returns_initial_encoder() {
        let data = toy_dataset(32, 6);
        let cfg = SvddTrainConfig {
            epochs: 0,
            minibatch: 8,
            ..SvddTrainConfig::default()
        };
        let model = toy_model(&data, &cfg);
        assert_eq!(model.params, init_encoder_params(&toy_spec(), cfg.seed));
        assert_eq!(
            model.center,
            init_center(&toy_spec(), &model.params, &data)
        );
    }

    #[test]
    fn single_point_overfit_drives_loss_near_zero() {
        let data = toy_dataset(1, 7);
        let cfg = SvddTrainConfig {
            epochs: 3000,
            minibatch: 1,
            lr: 1e-2,
            weight_decay: 0.0,
            seed: 3,
        };
        let model = toy_model(&data, &cfg);
        assert!(
            model.score(&data[0]).unwrap() < 1e-3,
            "residual {}",
            model.score(&data[0]).unwrap()
        );
    }

    #[test]
    fn score_is_squared_distance_to_center() {
        let data = toy_dataset(16, 8);
        let cfg = SvddTrainConfig {
            epochs: 2,
            minibatch: 8,
            ..SvddTrainConfig::default()
        };
        let mut model = toy_model(&data, &cfg);

        // phi(x) = c  =>  score 0.
        let emb = model.embed(&data[0]).unwrap();
        model.center = emb.clone();
        assert_eq!(model.score(&data[0]).unwrap(), 0.0);

        // ||phi(x) - c|| = 2  =>  score 4.
        model.center = emb.clone();
        model.center[0] += 2.0;
        assert!((model.score(&data[0]).unwrap() - 4.0).abs() < 1e-12);

        // Independent oracle: manual squared distance over the embedding.
        model.center = vec![0.3, -0.8, 1.1];
        for x in &data {
            let e = model.embed(x).unwrap();
            let oracle: f64 = e
                .iter()
                .zip(model.center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let got = model.score(x).unwrap();
            assert!((got - oracle).abs() <= 1e-6 * oracle.max(1.0));
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset(48, 9);
        let cfg = SvddTrainConfig {
            epochs: 5,
            minibatch: 16,
            ..SvddTrainConfig::default()
        };
        assert_eq!(toy_model(&data, &cfg), toy_model(&data, &cfg));
    }

    #[test]
    fn dataset_too_small_is_an_error() {
        let data = toy_dataset(4, 10);
        let cfg = SvddTrainConfig {
            minibatch: 8,
            ..SvddTrainConfig::default()
        };
        assert!(matches!(
            train_svdd("w", SvddInputKind::Raw, toy_spec(), &data, 0, 0, &cfg),
            Err(SvddError::DatasetTooSmall { .. })
        ));
    }

    #[test]
    fn score_table_percentile_boundaries() {
        let data = toy_dataset(50, 11);
        let cfg = SvddTrainConfig {
            epochs: 1,
            minibatch: 10,
            ..SvddTrainConfig::default()
        };
        let model = toy_model(&data, &cfg);
        let table = calibrate_svdd(&model, &data);
        assert_eq!(table.scores().len(), data.len());
        let min = table.scores()[0];
        let max = *table.scores().last().unwrap();
        assert_eq!(table.threshold_for_percentile(100.0).unwrap(), min);
        assert_eq!(table.threshold_for_percentile(0.0).unwrap(), max);
    }

    #[test]
    fn dataset_collection_counts_timesteps() {
        let env_cfg = GenConfig::default();
        let spec = NetSpec::policy_default(env_cfg.obs_dim(), 5);
        let weak = PolicySnapshot::new("weak-test", spec, init_params(&spec_dim(&env_cfg), 77));

        // Count episode lengths independently with the same streams.
        let mut expected = 0;
        for seed in 500..502u64 {
            let Ok(level) = generate_level(seed, Mode::Train, &env_cfg) else {
                continue;
            };
            let (mut env, mut obs) = Env::reset(level, &env_cfg);
            let mut rng = stream(seed, ROLE_WEAK);
            loop {
                let (a, _, _) = weak.act(&obs.data, &mut rng).unwrap();
                let out = env.step(crate::env::ActionId::from_index(a)).unwrap();
                obs = out.obs;
                expected += 1;
                if out.done {
                    break;
                }
            }
        }

        let raw = collect_svdd_dataset(&weak, SvddInputKind::Raw, &env_cfg, 2, 500);
        assert_eq!(raw.len(), expected);
        assert_eq!(raw[0].len(), env_cfg.obs_dim());

        let latent = collect_svdd_dataset(&weak, SvddInputKind::Latent, &env_cfg, 2, 500);
        assert_eq!(latent.len(), expected);
        assert_eq!(latent[0].len(), weak.spec.latent_dim());

        assert_eq!(
            collect_svdd_dataset(&weak, SvddInputKind::Raw, &env_cfg, 2, 500),
            raw
        );
    }

    fn spec_dim(cfg: &GenConfig) -> NetSpec {
        NetSpec::policy_default(cfg.obs_dim(), 5)
    }
}
