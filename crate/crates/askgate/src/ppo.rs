//! PPO with clipped surrogate, GAE, entropy bonus, and Adam.
//!
//! One trainer drives three kinds of agents: the weak agent (train-mode
//! levels), the expert agent (test-mode levels), and the skyline
//! meta-policies (a 2-action wrapper environment). Rollout collection fans
//! out over a fixed number of worker segments, each with its own
//! seed-derived streams, and merges them in worker order, so results do not
//! depend on scheduling. Two runs with the same config are bit-identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{generate_level, ActionId, Env, GenConfig, Mode, Outcome};
use crate::neural::{
    adam_step, backward, forward_traced, init_params, log_softmax, AdamParams, AdamState,
    Activation, ForwardTrace, HeadGrad, NetSpec, NeuralError, ParamSet, PolicySnapshot,
};
use crate::rng::{derive_seed, stream, ROLE_WEAK};

const SALT_INIT: u64 = 0x1217;
const SALT_LEVELS: u64 = 0x2aa5;
const SALT_UPDATE: u64 = 0x3b13;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub steps_per_batch: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub n_workers: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs: 3,
            minibatch: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            steps_per_batch: 8192,
            total_steps: 400_000,
            lr: 3e-4,
            seed: 0,
            n_workers: 4,
            hidden: vec![128, 64],
            activation: Activation::Tanh,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PpoError::InvalidConfig("gamma must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(PpoError::InvalidConfig("lambda must be in [0, 1]".into()));
        }
        if self.clip_eps <= 0.0 {
            return Err(PpoError::InvalidConfig("clip_eps must be > 0".into()));
        }
        if self.minibatch == 0 || self.steps_per_batch == 0 || self.n_workers == 0 {
            return Err(PpoError::InvalidConfig("zero batch geometry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in batch {batch}, epoch {epoch}, minibatch {minibatch}; params left unchanged")]
    NonFiniteLoss {
        batch: usize,
        epoch: usize,
        minibatch: usize,
    },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Environment surface the rollout collector drives. Implemented by the
/// base platformer and by the skyline meta-environment.
pub(crate) trait RolloutEnv {
    /// Starts an episode; `None` when the generator rejects the seed.
    fn reset(&mut self, seed: u64) -> Option<Vec<f32>>;
    /// Steps with an action index; returns (obs, reward, done, got_coin).
    fn step(&mut self, action: usize) -> (Vec<f32>, f64, bool, bool);
}

/// Base platformer adapter.
pub(crate) struct BaseRollout<'a> {
    pub mode: Mode,
    pub config: &'a GenConfig,
    env: Option<Env>,
}

impl<'a> BaseRollout<'a> {
    pub fn new(mode: Mode, config: &'a GenConfig) -> Self {
        BaseRollout {
            mode,
            config,
            env: None,
        }
    }
}

impl RolloutEnv for BaseRollout<'_> {
    fn reset(&mut self, seed: u64) -> Option<Vec<f32>> {
        let level = generate_level(seed, self.mode, self.config).ok()?;
        let (env, obs) = Env::reset(level, self.config);
        self.env = Some(env);
        Some(obs.data)
    }

    fn step(&mut self, action: usize) -> (Vec<f32>, f64, bool, bool) {
        let out = self
            .env
            .as_mut()
            .expect("reset before step")
            .step(ActionId::from_index(action))
            .expect("rollout never steps terminal states");
        (out.obs.data, out.reward, out.done, out.outcome == Outcome::Coin)
    }
}

/// A contiguous single-worker slice of the buffer with its bootstrap value.
#[derive(Debug, Clone, Copy)]
struct Segment {
    start: usize,
    len: usize,
    bootstrap: f64,
}

/// Fixed-length on-policy rollout data.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub logp: Vec<f64>,
    pub value: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub episode: Vec<u32>,
    segments: Vec<Segment>,
    /// (total reward, got_coin) per episode completed inside the buffer.
    pub completed: Vec<(f64, bool)>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Hand-built single-segment buffer for tests and oracles.
    pub fn single_segment(
        obs: Vec<Vec<f32>>,
        actions: Vec<usize>,
        logp: Vec<f64>,
        value: Vec<f64>,
        reward: Vec<f64>,
        done: Vec<bool>,
        bootstrap: f64,
    ) -> RolloutBuffer {
        let n = obs.len();
        RolloutBuffer {
            obs,
            actions,
            logp,
            value,
            reward,
            done,
            episode: vec![0; n],
            segments: vec![Segment {
                start: 0,
                len: n,
                bootstrap,
            }],
            completed: Vec::new(),
        }
    }
}

/// Collects `n_steps` transitions of the policy acting on `mode` levels.
/// Deterministic in `(policy, stream_seed, n_workers)`.
pub fn collect_rollout(
    policy: &PolicySnapshot,
    mode: Mode,
    env_config: &GenConfig,
    stream_seed: u64,
    n_steps: usize,
    n_workers: usize,
) -> RolloutBuffer {
    collect_rollout_generic(
        policy,
        |_| BaseRollout::new(mode, env_config),
        |level_seed| stream(level_seed, ROLE_WEAK),
        stream_seed,
        n_steps,
        n_workers,
    )
}

pub(crate) fn collect_rollout_generic<E, M, S>(
    policy: &PolicySnapshot,
    make_env: M,
    episode_stream: S,
    stream_seed: u64,
    n_steps: usize,
    n_workers: usize,
) -> RolloutBuffer
where
    E: RolloutEnv,
    M: Fn(usize) -> E + Sync,
    S: Fn(u64) -> ChaCha8Rng + Sync,
{
    let workers: Vec<usize> = (0..n_workers).collect();
    let quota = n_steps / n_workers;
    let parts = crate::exec::ordered_map(&workers, |&w| {
        let steps = if w == n_workers - 1 {
            n_steps - quota * (n_workers - 1)
        } else {
            quota
        };
        collect_worker(policy, make_env(w), &episode_stream, stream_seed, w, steps)
    });

    let mut merged = RolloutBuffer::default();
    let mut episode_offset = 0u32;
    for part in parts {
        let start = merged.len();
        let max_ep = part.episode.iter().copied().max().unwrap_or(0);
        merged.obs.extend(part.obs);
        merged.actions.extend(part.actions);
        merged.logp.extend(part.logp);
        merged.value.extend(part.value);
        merged.reward.extend(part.reward);
        merged.done.extend(part.done);
        merged
            .episode
            .extend(part.episode.iter().map(|e| e + episode_offset));
        merged.segments.extend(part.segments.iter().map(|s| Segment {
            start: s.start + start,
            ..*s
        }));
        merged.completed.extend(part.completed);
        episode_offset += max_ep + 1;
    }
    merged
}

fn collect_worker<E, S>(
    policy: &PolicySnapshot,
    mut env: E,
    episode_stream: &S,
    stream_seed: u64,
    worker: usize,
    n_steps: usize,
) -> RolloutBuffer
where
    E: RolloutEnv,
    S: Fn(u64) -> ChaCha8Rng,
{
    let level_base = derive_seed(stream_seed, SALT_LEVELS ^ (worker as u64) << 8);
    let mut buf = RolloutBuffer::default();
    let mut attempt = 0u64;
    let mut episode = 0u32;

    'outer: loop {
        let level_seed = derive_seed(level_base, attempt);
        attempt += 1;
        let Some(mut obs) = env.reset(level_seed) else {
            continue;
        };
        let mut rng = episode_stream(level_seed);
        let mut total = 0.0;
        loop {
            let (action, logp, out) = policy.act(&obs, &mut rng).expect("obs dim fixed");
            let (next_obs, reward, done, coin) = env.step(action);
            total += reward;
            buf.obs.push(obs);
            buf.actions.push(action);
            buf.logp.push(logp);
            buf.value.push(out.value);
            buf.reward.push(reward);
            buf.done.push(done);
            buf.episode.push(episode);
            obs = next_obs;
            if buf.len() == n_steps {
                if done {
                    buf.completed.push((total, coin));
                }
                let bootstrap = if done {
                    0.0
                } else {
                    policy.forward(&obs).expect("obs dim fixed").value
                };
                buf.segments.push(Segment {
                    start: 0,
                    len: buf.len(),
                    bootstrap,
                });
                break 'outer;
            }
            if done {
                buf.completed.push((total, coin));
                episode += 1;
                break;
            }
        }
    }
    buf
}

/// Generalized advantage estimation. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = buffer.len();
    let mut adv = vec![0.0; n];
    for seg in &buffer.segments {
        let end = seg.start + seg.len;
        let mut acc = 0.0;
        for t in (seg.start..end).rev() {
            let mask = if buffer.done[t] { 0.0 } else { 1.0 };
            let next_value = if buffer.done[t] {
                0.0
            } else if t + 1 == end {
                seg.bootstrap
            } else {
                buffer.value[t + 1]
            };
            let delta = buffer.reward[t] + gamma * next_value - buffer.value[t];
            acc = delta + gamma * lambda * mask * acc;
            adv[t] = acc;
        }
    }
    let returns = adv
        .iter()
        .zip(buffer.value.iter())
        .map(|(a, v)| a + v)
        .collect();
    (adv, returns)
}

/// In-place per-batch normalization to mean 0, std 1 (epsilon-guarded).
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    unclipped.min(clipped)
}

/// Diagnostics from one PPO update.
#[derive(Debug, Clone)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Max `|ratio - 1|` over the first minibatch of the first epoch,
    /// measured before any parameter change.
    pub initial_ratio_dev: f64,
}

/// One PPO update over the buffer: `epochs` passes of shuffled minibatches.
/// On a non-finite loss the parameters are restored and an error returned.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    spec: &NetSpec,
    params: &mut ParamSet,
    adam: &mut AdamState,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    update_rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, PpoError> {
    let n = buffer.len();
    assert_eq!(advantages.len(), n);
    assert_eq!(returns.len(), n);
    let checkpoint = params.clone();
    let adam_checkpoint = adam.clone();

    let mut indices: Vec<usize> = (0..n).collect();
    let mut policy_loss_sum = 0.0;
    let mut value_loss_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut minibatches = 0.0;
    let mut initial_ratio_dev = 0.0;

    for epoch in 0..config.epochs {
        indices.shuffle(update_rng);
        for (mb_idx, minibatch) in indices.chunks(config.minibatch).enumerate() {
            let first = epoch == 0 && mb_idx == 0;
            match minibatch_step(spec, params, buffer, advantages, returns, config, minibatch) {
                Some(out) => {
                    if first {
                        initial_ratio_dev = out.ratio_dev;
                    }
                    policy_loss_sum += out.policy_loss;
                    value_loss_sum += out.value_loss;
                    entropy_sum += out.entropy;
                    minibatches += 1.0;
                    adam_step(params, &out.grads, adam);
                }
                None => {
                    *params = checkpoint;
                    *adam = adam_checkpoint;
                    return Err(PpoError::NonFiniteLoss {
                        batch: 0,
                        epoch,
                        minibatch: mb_idx,
                    });
                }
            }
        }
    }

    Ok(UpdateStats {
        policy_loss: policy_loss_sum / minibatches,
        value_loss: value_loss_sum / minibatches,
        entropy: entropy_sum / minibatches,
        initial_ratio_dev,
    })
}

struct MinibatchOut {
    grads: ParamSet,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    ratio_dev: f64,
}

/// Loss and gradient of one minibatch, split over worker chunks whose
/// partial sums merge in fixed order.
fn minibatch_step(
    spec: &NetSpec,
    params: &ParamSet,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    minibatch: &[usize],
) -> Option<MinibatchOut> {
    let scale = 1.0 / minibatch.len() as f64;
    let chunk_size = minibatch.len().div_ceil(config.n_workers);
    let chunks: Vec<&[usize]> = minibatch.chunks(chunk_size).collect();

    let parts = crate::exec::ordered_map(&chunks, |chunk| {
        let mut traces: Vec<ForwardTrace> = Vec::with_capacity(chunk.len());
        let mut head_grads: Vec<HeadGrad> = Vec::with_capacity(chunk.len());
        let mut policy_loss = 0.0;
        let mut value_loss = 0.0;
        let mut entropy_acc = 0.0;
        let mut ratio_dev = 0.0f64;
        for &i in chunk.iter().copied().collect::<Vec<_>>().iter() {
            let (out, trace) = forward_traced(spec, params, &buffer.obs[i]).expect("obs dim fixed");
            let logp_all = log_softmax(&out.logits);
            let probs: Vec<f64> = logp_all.iter().map(|l| l.exp()).collect();
            let a = buffer.actions[i];
            let ratio = (logp_all[a] - buffer.logp[i]).exp();
            ratio_dev = ratio_dev.max((ratio - 1.0).abs());
            let adv = advantages[i];

            policy_loss -= clipped_surrogate(ratio, adv, config.clip_eps) * scale;
            let unclipped_active =
                ratio * adv <= ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv;

            let entropy = crate::gating::entropy(&probs);
            entropy_acc += entropy * scale;
            let verr = out.value - returns[i];
            value_loss += verr * verr * scale;

            let mut d_logits = vec![0.0; spec.n_actions];
            for j in 0..spec.n_actions {
                // Clipped-surrogate term (flows only while unclipped).
                if unclipped_active {
                    let indicator = if j == a { 1.0 } else { 0.0 };
                    d_logits[j] -= adv * ratio * (indicator - probs[j]) * scale;
                }
                // Entropy bonus: loss includes -c_H * H.
                let lp = if probs[j] > 0.0 { probs[j].ln() } else { 0.0 };
                d_logits[j] += config.entropy_coef * probs[j] * (lp + entropy) * scale;
            }
            let d_value = config.value_coef * 2.0 * verr * scale;

            traces.push(trace);
            head_grads.push(HeadGrad { d_logits, d_value });
        }
        let grads = backward(spec, params, &traces, &head_grads);
        (grads, policy_loss, value_loss, entropy_acc, ratio_dev)
    });

    let mut grads = ParamSet::zeros_like_shapes(&spec.tensor_shapes());
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy = 0.0;
    let mut ratio_dev = 0.0f64;
    for (g, pl, vl, en, rd) in parts {
        let g = g.ok()?;
        for (gt, pt) in grads.tensors.iter_mut().zip(g.tensors.iter()) {
            for (a, b) in gt.data.iter_mut().zip(pt.data.iter()) {
                *a += b;
            }
        }
        policy_loss += pl;
        value_loss += vl;
        entropy += en;
        ratio_dev = ratio_dev.max(rd);
    }
    let total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy;
    if !total.is_finite() {
        return None;
    }
    Some(MinibatchOut {
        grads,
        policy_loss,
        value_loss,
        entropy,
        ratio_dev,
    })
}

/// Per-batch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatchStats {
    pub batch: usize,
    pub mean_reward: f64,
    pub coin_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Training curve plus the identifier of the resulting snapshot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<TrainBatchStats>,
    pub snapshot_id: String,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch,mean_reward,coin_rate,policy_loss,value_loss,entropy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.batch, r.mean_reward, r.coin_rate, r.policy_loss, r.value_loss, r.entropy
            ));
        }
        out
    }
}

/// Trains an agent on `mode` levels. Returns the final snapshot and the
/// per-batch report. Deterministic in the config.
pub fn train(
    id: &str,
    mode: Mode,
    env_config: &GenConfig,
    config: &PpoConfig,
) -> Result<(PolicySnapshot, TrainReport), PpoError> {
    train_generic(
        id,
        env_config.obs_dim(),
        crate::env::N_ACTIONS,
        |_| BaseRollout::new(mode, env_config),
        |level_seed| stream(level_seed, ROLE_WEAK),
        config,
    )
}

pub(crate) fn train_generic<E, M, S>(
    id: &str,
    obs_dim: usize,
    n_actions: usize,
    make_env: M,
    episode_stream: S,
    config: &PpoConfig,
) -> Result<(PolicySnapshot, TrainReport), PpoError>
where
    E: RolloutEnv,
    M: Fn(usize) -> E + Sync,
    S: Fn(u64) -> ChaCha8Rng + Sync,
{
    config.validate()?;
    let spec = NetSpec {
        input_dim: obs_dim,
        hidden: config.hidden.clone(),
        activation: config.activation,
        n_actions,
        latent_layer: config.hidden.len() - 1,
    };
    spec.validate()?;
    let mut params = init_params(&spec, derive_seed(config.seed, SALT_INIT));
    let mut adam = AdamState::new(&params, AdamParams::with_lr(config.lr));
    let batches = config.total_steps.div_ceil(config.steps_per_batch);
    let mut report = TrainReport {
        rows: Vec::with_capacity(batches),
        snapshot_id: id.to_string(),
    };

    for batch in 0..batches {
        let snapshot = PolicySnapshot::new(id, spec.clone(), params.clone());
        let buffer = collect_rollout_generic(
            &snapshot,
            &make_env,
            &episode_stream,
            derive_seed(config.seed, SALT_LEVELS.wrapping_add(batch as u64)),
            config.steps_per_batch,
            config.n_workers,
        );
        let (mut adv, returns) = compute_gae(&buffer, config.gamma, config.lambda);
        normalize_advantages(&mut adv);
        let mut update_rng = stream(config.seed, SALT_UPDATE.wrapping_add(batch as u64));
        let stats = ppo_update(
            &spec,
            &mut params,
            &mut adam,
            &buffer,
            &adv,
            &returns,
            config,
            &mut update_rng,
        )
        .map_err(|e| match e {
            PpoError::NonFiniteLoss {
                epoch, minibatch, ..
            } => PpoError::NonFiniteLoss {
                batch,
                epoch,
                minibatch,
            },
            other => other,
        })?;

        let episodes = buffer.completed.len().max(1) as f64;
        let mean_reward = buffer.completed.iter().map(|(r, _)| r).sum::<f64>() / episodes;
        let coin_rate =
            buffer.completed.iter().filter(|(_, c)| *c).count() as f64 / episodes;
        report.rows.push(TrainBatchStats {
            batch,
            mean_reward,
            coin_rate,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        });
    }

    Ok((PolicySnapshot::new(id, spec, params), report))
}

/// Evaluation over an explicit seed list. Episodes use per-seed streams
/// derived with `role_salt`, so evaluations pair exactly with harness
/// baselines using the same role.
#[derive(Debug, Clone)]
pub struct EvalResult {
    /// (seed, total reward, got_coin) per non-rejected seed.
    pub episodes: Vec<(u64, f64, bool)>,
    pub mean_reward: f64,
    pub coin_rate: f64,
}

pub fn evaluate(
    policy: &PolicySnapshot,
    mode: Mode,
    env_config: &GenConfig,
    seeds: &[u64],
    role_salt: u64,
) -> EvalResult {
    let episodes: Vec<Option<(u64, f64, bool)>> = crate::exec::ordered_map(seeds, |&seed| {
        let level = generate_level(seed, mode, env_config).ok()?;
        let (mut env, mut obs) = Env::reset(level, env_config);
        let mut rng = stream(seed, role_salt);
        let mut total = 0.0;
        loop {
            let (action, _, _) = policy.act(&obs.data, &mut rng).expect("obs dim fixed");
            let out = env.step(ActionId::from_index(action)).unwrap();
            total += out.reward;
            obs = out.obs;
            if out.done {
                return Some((seed, total, out.outcome == Outcome::Coin));
            }
        }
    });
    let episodes: Vec<(u64, f64, bool)> = episodes.into_iter().flatten().collect();
    let n = episodes.len().max(1) as f64;
    EvalResult {
        mean_reward: episodes.iter().map(|(_, r, _)| r).sum::<f64>() / n,
        coin_rate: episodes.iter().filter(|(_, _, c)| *c).count() as f64 / n,
        episodes,
    }
}
