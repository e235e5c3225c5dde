//! Clipped-surrogate PPO pre-training of the black-box actor-critic.
//!
//! The actor-critic shares one encoder between the policy and value heads.
//! The policy emits a 4-dimensional unsquashed Gaussian over
//! `(charge, discharge, electrolyzer, fuel-cell)`; the environment-side
//! mapping clamps each dimension to `[0, 1]` and scales it to the device
//! power ranges, with battery power = charge − discharge. Log-probabilities
//! are of the unsquashed Gaussian.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{self, Action, EnvModel, MarketSeries};
use crate::error::{Error, Result};
use crate::neural::{
    clip_grad_norm, gaussian_logprob_and_entropy, gaussian_logprob_grads, Activation, AdamState,
    Mlp, MlpGrads,
};

pub const ACTION_DIMS: usize = 4;
pub const OBS_DIMS: usize = 4;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Learning-rate schedule selector. `step` counts optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `base · (1 − step/total)`.
    Adaptive,
    Const1e2,
    Const1e4,
    /// `base · 0.95^step`.
    Decay095,
}

impl LrSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "const_1e-2" | "const1e2" => Ok(Self::Const1e2),
            "const_1e-4" | "const1e4" => Ok(Self::Const1e4),
            "decay_0.95" | "decay095" => Ok(Self::Decay095),
            other => Err(Error::Config(format!("unknown lr schedule: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Adaptive => "adaptive",
            Self::Const1e2 => "const_1e-2",
            Self::Const1e4 => "const_1e-4",
            Self::Decay095 => "decay_0.95",
        }
    }
}

/// Learning rate for a given update index.
pub fn lr_schedule(kind: LrSchedule, step: usize, total_steps: usize, base: f64) -> f64 {
    match kind {
        LrSchedule::Adaptive => {
            let frac = if total_steps == 0 {
                0.0
            } else {
                step as f64 / total_steps as f64
            };
            base * (1.0 - frac)
        }
        LrSchedule::Const1e2 => 1e-2,
        LrSchedule::Const1e4 => 1e-4,
        LrSchedule::Decay095 => base * 0.95f64.powi(step as i32),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    /// Surrogate clip range ξ.
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Value-loss coefficient m1.
    pub value_coef: f64,
    /// Entropy-bonus coefficient m2.
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout_len: usize,
    /// Total environment steps to train for.
    pub total_steps: usize,
    pub lr_schedule: LrSchedule,
    pub base_lr: f64,
    pub grad_clip: f64,
    pub init_log_std: f64,
    /// Training-time reward scaling; evaluation always reports unscaled
    /// rewards.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs: 10,
            minibatch: 64,
            rollout_len: 2048,
            total_steps: 200_000,
            lr_schedule: LrSchedule::Adaptive,
            base_lr: 1e-4,
            grad_clip: 0.5,
            init_log_std: 0.5f64.ln(),
            reward_scale: 10.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip must be in (0, 1), got {}", self.clip)));
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.minibatch == 0 || self.rollout_len == 0 {
            return Err(Error::Config("minibatch and rollout_len must be positive".into()));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Actor-critic network
// ---------------------------------------------------------------------------

/// Shared-encoder actor-critic. The policy mean is exactly
/// `W'·F(s) + b'` with `W', b'` the single linear layer of `policy_mean`
/// — the decomposition the prototype policy builds on.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    /// Encoder F: normalized observation → latent z (tanh output).
    pub encoder: Mlp,
    /// Linear policy head on z.
    pub policy_mean: Mlp,
    /// State-independent log standard deviation per action dimension.
    pub log_std: Vec<f64>,
    /// Linear value head on z.
    pub value: Mlp,
    /// Per-component divisors applied to raw observations before encoding.
    pub obs_scale: [f64; OBS_DIMS],
}

pub const LATENT_WIDTH: usize = 64;

impl ActorCritic {
    pub fn new(obs_scale: [f64; OBS_DIMS], init_log_std: f64, rng: &mut impl Rng) -> Self {
        Self {
            encoder: Mlp::new(&[OBS_DIMS, LATENT_WIDTH, LATENT_WIDTH], Activation::Tanh, rng),
            policy_mean: Mlp::new(&[LATENT_WIDTH, ACTION_DIMS], Activation::Linear, rng),
            log_std: vec![init_log_std; ACTION_DIMS],
            value: Mlp::new(&[LATENT_WIDTH, 1], Activation::Linear, rng),
            obs_scale,
        }
    }

    pub fn normalize_obs(&self, obs: &[f64; OBS_DIMS]) -> [f64; OBS_DIMS] {
        let mut out = [0.0; OBS_DIMS];
        for i in 0..OBS_DIMS {
            out[i] = obs[i] / self.obs_scale[i];
        }
        out
    }

    /// Latent representation z = F(s).
    pub fn encode(&self, obs: &[f64; OBS_DIMS]) -> Vec<f64> {
        let normed = self.normalize_obs(obs);
        self.encoder.forward(&normed).expect("encoder width fixed").output().to_vec()
    }

    pub fn mean_from_latent(&self, z: &[f64]) -> Vec<f64> {
        self.policy_mean.forward(z).expect("latent width fixed").output().to_vec()
    }

    /// Deterministic normalized action: policy mean clamped to `[0, 1]` per
    /// dimension.
    pub fn act_deterministic(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        let mean = self.mean_from_latent(&self.encode(obs));
        clamp_unit(&mean)
    }

    pub fn value_of(&self, obs: &[f64; OBS_DIMS]) -> f64 {
        let z = self.encode(obs);
        self.value.forward(&z).expect("latent width fixed").output()[0]
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.policy_mean.param_count()
            + self.log_std.len()
            + self.value.param_count()
    }

    /// Layout: encoder | policy_mean | log_std | value.
    pub fn flatten_params(&self, out: &mut Vec<f64>) {
        self.encoder.flatten_params(out);
        self.policy_mean.flatten_params(out);
        out.extend_from_slice(&self.log_std);
        self.value.flatten_params(out);
    }

    pub fn unflatten_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        let n = self.encoder.param_count();
        self.encoder.unflatten_params(&flat[off..off + n])?;
        off += n;
        let n = self.policy_mean.param_count();
        self.policy_mean.unflatten_params(&flat[off..off + n])?;
        off += n;
        let n = self.log_std.len();
        self.log_std.copy_from_slice(&flat[off..off + n]);
        off += n;
        let n = self.value.param_count();
        self.value.unflatten_params(&flat[off..off + n])?;
        Ok(())
    }

    // --- checkpoints ------------------------------------------------------

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("pvess-actor-critic v1\n");
        let _ = writeln!(
            out,
            "obs_scale {:?} {:?} {:?} {:?}",
            self.obs_scale[0], self.obs_scale[1], self.obs_scale[2], self.obs_scale[3]
        );
        let stds: Vec<String> = self.log_std.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "log_std {}", stds.join(" "));
        self.encoder.write_text(&mut out);
        self.policy_mean.write_text(&mut out);
        self.value.write_text(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "pvess-actor-critic v1" {
            return Err(Error::Validation(format!("bad checkpoint header: {header}")));
        }
        let parse_floats = |line: &str, tag: &str| -> Result<Vec<f64>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(Error::Validation(format!("expected {tag} line, got: {line}")));
            }
            parts
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad float in {tag}: {s}")))
                })
                .collect()
        };
        let scale = parse_floats(lines.next().unwrap_or_default(), "obs_scale")?;
        if scale.len() != OBS_DIMS {
            return Err(Error::Validation("obs_scale must have 4 entries".into()));
        }
        let log_std = parse_floats(lines.next().unwrap_or_default(), "log_std")?;
        if log_std.len() != ACTION_DIMS {
            return Err(Error::Validation("log_std must have 4 entries".into()));
        }
        let encoder = Mlp::read_text(&mut lines)?;
        let policy_mean = Mlp::read_text(&mut lines)?;
        let value = Mlp::read_text(&mut lines)?;
        Ok(Self {
            encoder,
            policy_mean,
            log_std,
            value,
            obs_scale: [scale[0], scale[1], scale[2], scale[3]],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_text(&text)
    }
}

/// Anything that maps an observation to the normalized 4-dimensional action
/// `(charge, discharge, electrolyzer, fuel-cell)`, each in `[0, 1]`.
pub trait NormalizedPolicy: Sync {
    fn action_norm(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS];
}

impl NormalizedPolicy for ActorCritic {
    fn action_norm(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        self.act_deterministic(obs)
    }
}

pub fn clamp_unit(values: &[f64]) -> [f64; ACTION_DIMS] {
    let mut out = [0.0; ACTION_DIMS];
    for (o, v) in out.iter_mut().zip(values) {
        *o = v.clamp(0.0, 1.0);
    }
    out
}

/// Maps a normalized 4-dimensional action onto physical device powers.
pub fn norm_to_env_action(a: &[f64; ACTION_DIMS], model: &EnvModel) -> Action {
    Action {
        p_bat: a[0] * model.bat_charge_max() - a[1] * model.bat_discharge_max(),
        p_el: a[2] * model.hydrogen.p_el_max,
        p_fc: a[3] * model.hydrogen.p_fc_max,
    }
}

// ---------------------------------------------------------------------------
// GAE and the clipped surrogate
// ---------------------------------------------------------------------------

/// Generalized advantage estimation over a rollout.
///
/// `bootstrap` is the value estimate of the state after the final step; it is
/// ignored whenever the final step terminated. Returns `(advantages,
/// value_targets)`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: values.len().min(dones.len()),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * if dones[t] { 0.0 } else { acc };
        advantages[t] = acc;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, targets))
}

/// One term of the clipped surrogate: `min(Υ·Â, clip(Υ, 1−ξ, 1+ξ)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// One experience tuple as consumed by [`ppo_loss`].
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub obs: [f64; OBS_DIMS],
    pub action: [f64; ACTION_DIMS],
    pub old_logp: f64,
    pub advantage: f64,
    pub value_target: f64,
}

/// Minimized PPO objective over a minibatch:
/// `−E[Lᶜ − m1·(V − V^targ)² + m2·entropy]`.
///
/// Returns the scalar loss and its gradient in the [`ActorCritic`] flat
/// parameter layout.
pub fn ppo_loss(net: &ActorCritic, batch: &[Sample], config: &PpoConfig) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("ppo_loss on empty batch".into()));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut enc_grads = MlpGrads::zeros_like(&net.encoder);
    let mut pol_grads = MlpGrads::zeros_like(&net.policy_mean);
    let mut val_grads = MlpGrads::zeros_like(&net.value);
    let mut std_grads = vec![0.0; ACTION_DIMS];
    let mut loss = 0.0;

    for sample in batch {
        let normed = net.normalize_obs(&sample.obs);
        let enc_cache = net.encoder.forward(&normed)?;
        let z = enc_cache.output().to_vec();
        let pol_cache = net.policy_mean.forward(&z)?;
        let mean = pol_cache.output().to_vec();
        let val_cache = net.value.forward(&z)?;
        let value = val_cache.output()[0];

        let (logp, entropy) = gaussian_logprob_and_entropy(&mean, &net.log_std, &sample.action);
        let ratio = (logp - sample.old_logp).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite("probability ratio"));
        }
        let surr = clipped_surrogate(ratio, sample.advantage, config.clip);
        let value_err = value - sample.value_target;
        let objective = surr - config.value_coef * value_err * value_err + config.entropy_coef * entropy;
        loss -= inv_n * objective;

        // d(−objective)/d logp: the clipped branch has zero gradient exactly
        // when it is the strict minimum (ratio outside the clip range).
        let unclipped = ratio * sample.advantage;
        let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * sample.advantage;
        let dsurr_dlogp = if unclipped <= clipped { unclipped } else { 0.0 };
        let coeff = -inv_n * dsurr_dlogp;

        let mut dlogp_dmean = vec![0.0; ACTION_DIMS];
        let mut dlogp_dstd = vec![0.0; ACTION_DIMS];
        gaussian_logprob_grads(&mean, &net.log_std, &sample.action, &mut dlogp_dmean, &mut dlogp_dstd);
        let grad_mean: Vec<f64> = dlogp_dmean.iter().map(|g| coeff * g).collect();
        for i in 0..ACTION_DIMS {
            // Policy term through log_std plus the entropy bonus (d entropy /
            // d log_std = 1 per dimension).
            std_grads[i] += coeff * dlogp_dstd[i] - inv_n * config.entropy_coef;
        }

        let grad_z_policy = net.policy_mean.backward(&pol_cache, &grad_mean, &mut pol_grads)?;
        let grad_value_out = inv_n * 2.0 * config.value_coef * value_err;
        let grad_z_value = net.value.backward(&val_cache, &[grad_value_out], &mut val_grads)?;

        let grad_z: Vec<f64> = grad_z_policy
            .iter()
            .zip(&grad_z_value)
            .map(|(a, b)| a + b)
            .collect();
        net.encoder.backward(&enc_cache, &grad_z, &mut enc_grads)?;
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite("ppo loss"));
    }
    let mut flat = Vec::with_capacity(net.param_count());
    Mlp::flatten_grads(&enc_grads, &mut flat);
    Mlp::flatten_grads(&pol_grads, &mut flat);
    flat.extend_from_slice(&std_grads);
    Mlp::flatten_grads(&val_grads, &mut flat);
    Ok((loss, flat))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Per-update training curve entry. `mean_reward` is the unscaled mean
/// episode reward over episodes completed during the update's rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub lr: f64,
}

/// Rollout storage plus computed advantages and value targets. Advantages
/// are normalized to zero mean and unit variance before the surrogate sees
/// them.
#[derive(Debug, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<[f64; OBS_DIMS]>,
    pub actions: Vec<[f64; ACTION_DIMS]>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub logps: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

impl RolloutBuffer {
    fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.rewards.clear();
        self.values.clear();
        self.logps.clear();
        self.dones.clear();
        self.advantages.clear();
        self.value_targets.clear();
    }

    fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in &mut self.advantages {
            *a = (*a - mean) / (std + 1e-8);
        }
    }
}

/// Trains the actor-critic with PPO on the given market data. Deterministic
/// given the seed (single-threaded rollouts and updates).
pub fn train(
    series: &MarketSeries,
    model: &EnvModel,
    obs_scale: [f64; OBS_DIMS],
    config: &PpoConfig,
    seed: u64,
) -> Result<(ActorCritic, Vec<UpdateRecord>)> {
    config.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ActorCritic::new(obs_scale, config.init_log_std, &mut rng);
    let mut params = Vec::new();
    net.flatten_params(&mut params);
    let mut adam = AdamState::new(params.len(), config.base_lr);

    let total_updates = config.total_steps / config.rollout_len;
    let mut curve = Vec::with_capacity(total_updates);
    let mut buffer = RolloutBuffer::default();

    let mut state = env::reset(series, model, &mut rng)?;
    let mut episode_return = 0.0;

    for update in 0..total_updates {
        buffer.clear();
        let mut completed: Vec<f64> = Vec::new();

        for _ in 0..config.rollout_len {
            let obs = state.observation();
            let z = net.encode(&obs);
            let mean = net.mean_from_latent(&z);
            let value = net.value.forward(&z)?.output()[0];

            let mut action = [0.0; ACTION_DIMS];
            for i in 0..ACTION_DIMS {
                let noise: f64 = StandardNormal.sample(&mut rng);
                action[i] = mean[i] + net.log_std[i].exp() * noise;
            }
            let (logp, _) = gaussian_logprob_and_entropy(&mean, &net.log_std, &action);

            let env_action = norm_to_env_action(&clamp_unit(&action), model);
            let out = env::step(&state, env_action, series, model)?;
            episode_return += out.reward;

            buffer.obs.push(obs);
            buffer.actions.push(action);
            buffer.rewards.push(out.reward / config.reward_scale);
            buffer.values.push(value);
            buffer.logps.push(logp);
            buffer.dones.push(out.done);

            state = if out.done {
                completed.push(episode_return);
                episode_return = 0.0;
                env::reset(series, model, &mut rng)?
            } else {
                out.next
            };
        }

        let bootstrap = net.value_of(&state.observation());
        let (advantages, targets) = gae_advantages(
            &buffer.rewards,
            &buffer.values,
            &buffer.dones,
            bootstrap,
            config.gamma,
            config.gae_lambda,
        )?;
        buffer.advantages = advantages;
        buffer.value_targets = targets;
        buffer.normalize_advantages();

        adam.lr = lr_schedule(config.lr_schedule, update, total_updates, config.base_lr);
        let mut indices: Vec<usize> = (0..buffer.obs.len()).collect();
        let mut last_loss = 0.0;
        for _ in 0..config.epochs {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(config.minibatch) {
                let batch: Vec<Sample> = chunk
                    .iter()
                    .map(|&i| Sample {
                        obs: buffer.obs[i],
                        action: buffer.actions[i],
                        old_logp: buffer.logps[i],
                        advantage: buffer.advantages[i],
                        value_target: buffer.value_targets[i],
                    })
                    .collect();
                let (loss, mut grads) = ppo_loss(&net, &batch, config)?;
                last_loss = loss;
                clip_grad_norm(&mut grads, config.grad_clip);
                adam.step(&mut params, &grads)?;
                net.unflatten_params(&params)?;
            }
        }

        let mean_reward = if completed.is_empty() {
            f64::NAN
        } else {
            completed.iter().sum::<f64>() / completed.len() as f64
        };
        curve.push(UpdateRecord {
            update,
            mean_reward,
            loss: last_loss,
            lr: adam.lr,
        });
    }
    Ok((net, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SynthProfile;
    use approx::assert_abs_diff_eq;

    /// Brute-force truncated double sum of (γλ)^k δ_{t+k}, restarting at
    /// episode ends. Independent of the recursive implementation.
    pub(crate) fn gae_brute_force(
        rewards: &[f64],
        values: &[f64],
        dones: &[bool],
        bootstrap: f64,
        gamma: f64,
        lambda: f64,
    ) -> Vec<f64> {
        let n = rewards.len();
        let delta = |t: usize| {
            let next = if dones[t] {
                0.0
            } else if t + 1 < n {
                values[t + 1]
            } else {
                bootstrap
            };
            rewards[t] + gamma * next - values[t]
        };
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut weight = 1.0;
                for k in t..n {
                    acc += weight * delta(k);
                    if dones[k] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn gae_single_terminal_step() {
        let (adv, targ) = gae_advantages(&[1.0], &[0.5], &[true], 99.0, 0.99, 0.95).unwrap();
        assert_abs_diff_eq!(adv[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(targ[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gae_zero_inputs() {
        let (adv, _) =
            gae_advantages(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
        assert!(adv.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn gae_matches_brute_force_small() {
        let rewards = [1.0, -0.5, 2.0];
        let values = [0.3, 0.1, -0.2];
        let dones = [false, false, false];
        let (adv, _) = gae_advantages(&rewards, &values, &dones, 0.7, 0.99, 0.95).unwrap();
        let oracle = gae_brute_force(&rewards, &values, &dones, 0.7, 0.99, 0.95);
        for (a, o) in adv.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, o, epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_matches_brute_force_with_episode_breaks() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let n = 16;
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
            let bootstrap = rng.gen_range(-1.0..1.0);
            let (adv, _) =
                gae_advantages(&rewards, &values, &dones, bootstrap, 0.99, 0.95).unwrap();
            let oracle = gae_brute_force(&rewards, &values, &dones, bootstrap, 0.99, 0.95);
            for (a, o) in adv.iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipped_surrogate_examples() {
        assert_abs_diff_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(clipped_surrogate(1.0, -0.37, 0.2), -0.37, epsilon = 1e-12);
        assert_abs_diff_eq!(clipped_surrogate(1.5, -1.0, 0.2), -1.5, epsilon = 1e-12);
    }

    fn toy_net(seed: u64) -> ActorCritic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActorCritic::new([1.0, 60.0, 1.0, 40.0], 0.5f64.ln(), &mut rng)
    }

    fn toy_batch(net: &ActorCritic, rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let obs = [
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..60.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..40.0),
                ];
                let z = net.encode(&obs);
                let mean = net.mean_from_latent(&z);
                let action: [f64; 4] = std::array::from_fn(|i| mean[i] + rng.gen_range(-0.4..0.4));
                let (old_logp, _) = gaussian_logprob_and_entropy(&mean, &net.log_std, &action);
                Sample {
                    obs,
                    action,
                    old_logp,
                    advantage: rng.gen_range(-1.5..1.5),
                    value_target: rng.gen_range(-1.0..1.0),
                }
            })
            .collect()
    }

    /// At θ = θ_old all ratios are 1, so with m1 = m2 = 0 the loss is
    /// −mean(Â).
    #[test]
    fn loss_at_old_params_is_mean_advantage() {
        let net = toy_net(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = toy_batch(&net, &mut rng, 16);
        let config = PpoConfig {
            value_coef: 0.0,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let (loss, _) = ppo_loss(&net, &batch, &config).unwrap();
        let mean_adv = batch.iter().map(|s| s.advantage).sum::<f64>() / batch.len() as f64;
        assert_abs_diff_eq!(loss, -mean_adv, epsilon = 1e-9);
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut net = toy_net(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let batch = toy_batch(&net, &mut rng, 4);
        let config = PpoConfig::default();
        let (_, analytic) = ppo_loss(&net, &batch, &config).unwrap();
        let mut params = Vec::new();
        net.flatten_params(&mut params);
        let shape = net.clone();
        let err = crate::neural::test_util::finite_diff_max_rel_err(
            &mut params,
            &analytic,
            |p| {
                let mut probe = shape.clone();
                probe.unflatten_params(p).unwrap();
                ppo_loss(&probe, &batch, &config).unwrap().0
            },
            1e-6,
        );
        assert!(err < 1e-4, "max rel err {err}");
        net.unflatten_params(&params).unwrap();
    }

    #[test]
    fn lr_schedule_examples() {
        assert_eq!(lr_schedule(LrSchedule::Adaptive, 0, 100, 1e-4), 1e-4);
        assert_eq!(lr_schedule(LrSchedule::Adaptive, 100, 100, 1e-4), 0.0);
        assert_abs_diff_eq!(lr_schedule(LrSchedule::Adaptive, 50, 100, 1e-4), 5e-5, epsilon = 1e-18);
        assert_eq!(lr_schedule(LrSchedule::Const1e2, 7, 100, 1e-4), 1e-2);
        assert_eq!(lr_schedule(LrSchedule::Const1e4, 7, 100, 123.0), 1e-4);
        assert_abs_diff_eq!(
            lr_schedule(LrSchedule::Decay095, 3, 100, 1e-4),
            1e-4 * 0.95f64.powi(3),
            epsilon = 1e-18
        );
        assert!(LrSchedule::parse("nope").is_err());
    }

    #[test]
    fn zero_total_steps_returns_initial_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let series = crate::env::synth_series(2, &mut rng, &SynthProfile::default());
        let model = EnvModel::default();
        let config = PpoConfig {
            total_steps: 0,
            ..PpoConfig::default()
        };
        let (net, curve) = train(&series, &model, [1.0, 60.0, 1.0, 40.0], &config, 3).unwrap();
        let fresh = ActorCritic::new(
            [1.0, 60.0, 1.0, 40.0],
            config.init_log_std,
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert_eq!(net, fresh);
        assert!(curve.is_empty());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let series = crate::env::synth_series(4, &mut rng, &SynthProfile::default());
        let model = EnvModel::default();
        let config = PpoConfig {
            rollout_len: 96,
            total_steps: 192,
            epochs: 2,
            minibatch: 32,
            ..PpoConfig::default()
        };
        let run = || train(&series, &model, [1.0, 60.0, 1.0, 40.0], &config, 21).unwrap();
        let (net_a, curve_a) = run();
        let (net_b, curve_b) = run();
        assert_eq!(net_a, net_b);
        assert_eq!(curve_a, curve_b);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = toy_net(17);
        let restored = ActorCritic::from_text(&net.to_text()).unwrap();
        assert_eq!(net, restored);
    }

    #[test]
    fn advantage_normalization_is_standard() {
        let mut buffer = RolloutBuffer {
            advantages: (0..256).map(|i| (i as f64) * 0.1 - 3.0).collect(),
            ..RolloutBuffer::default()
        };
        buffer.normalize_advantages();
        let n = buffer.advantages.len() as f64;
        let mean = buffer.advantages.iter().sum::<f64>() / n;
        let var = buffer.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
