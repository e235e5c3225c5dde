//! Pre-hoc interpretable prototype policy distilled from the black-box agent.
//!
//! Each action dimension k owns a transformation network H_k over the frozen
//! encoder latent z = F(s) and a cached latent prototype p_k = H_k(F(S_k))
//! for a human-defined prototypical state S_k. Actions are log-similarities
//! to the prototypes, combined through a fixed weight vector W = [1, −1, 1, 1]
//! and scaled to device power ranges, so every decision decomposes into
//! "how much does the current state resemble each prototype".

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{self, Action, EnvModel, MarketSeries};
use crate::error::{Error, Result};
use crate::neural::{Activation, AdamState, Mlp, MlpGrads};
use crate::ppo::{
    clamp_unit, norm_to_env_action, ActorCritic, NormalizedPolicy, ACTION_DIMS, OBS_DIMS,
};

/// Similarity epsilon; caps the score at ln(1/ε) ≈ 11.512925.
pub const SIM_EPSILON: f64 = 1e-5;

/// Maximal similarity score, attained at distance zero.
pub fn sim_max(epsilon: f64) -> f64 {
    (1.0 / epsilon).ln()
}

/// Fixed combination weights: charge, discharge, electrolyzer, fuel cell.
pub const PROTO_WEIGHTS: [f64; ACTION_DIMS] = [1.0, -1.0, 1.0, 1.0];

/// Log-similarity between a transformed latent and a prototype:
/// `log((‖z−p‖² + 1)/(‖z−p‖² + ε))`, strictly decreasing in the squared
/// distance with range `(0, log(1/ε)]`.
pub fn similarity(z: &[f64], p: &[f64], epsilon: f64) -> f64 {
    debug_assert_eq!(z.len(), p.len());
    let d2: f64 = z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    ((d2 + 1.0) / (d2 + epsilon)).ln()
}

// ---------------------------------------------------------------------------
// Prototypical states
// ---------------------------------------------------------------------------

/// A human-defined exemplar observation anchoring one action dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypicalState {
    pub label: String,
    /// Raw observation {price, pv, soc, loh}.
    pub obs: [f64; OBS_DIMS],
}

/// The four exemplars, built from the extremes of the observation box
/// (price ∈ [0, 1], pv ∈ [0, 60], soc ∈ [0, 1], loh ∈ [0, 40]):
/// cheap surplus power with an empty battery (charge), expensive scarce
/// power with a full battery (discharge), cheap surplus with an empty
/// reservoir (electrolyzer), expensive scarce with a full reservoir
/// (fuel cell).
pub fn default_prototypes() -> [PrototypicalState; ACTION_DIMS] {
    [
        PrototypicalState {
            label: "BES-charge".into(),
            obs: [0.0, 60.0, 0.0, 20.0],
        },
        PrototypicalState {
            label: "BES-discharge".into(),
            obs: [1.0, 0.0, 1.0, 0.0],
        },
        PrototypicalState {
            label: "EL-run".into(),
            obs: [0.0, 60.0, 0.5, 0.0],
        },
        PrototypicalState {
            label: "FC-run".into(),
            obs: [1.0, 0.0, 0.5, 40.0],
        },
    ]
}

// ---------------------------------------------------------------------------
// Explanations
// ---------------------------------------------------------------------------

/// One decision, decomposed. Recomposing `contributions` (scaled by
/// `1/sim_max` and the device power ranges) reproduces `action` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub obs: [f64; OBS_DIMS],
    /// Raw similarity scores per dimension.
    pub sims: [f64; ACTION_DIMS],
    /// Similarities divided by sim_max, i.e. the normalized action dims.
    pub normalized: [f64; ACTION_DIMS],
    /// W_k · sim_k per dimension.
    pub contributions: [f64; ACTION_DIMS],
    pub action: Action,
    /// Label of the most similar prototype.
    pub nearest_prototype: String,
}

// ---------------------------------------------------------------------------
// The prototype policy
// ---------------------------------------------------------------------------

/// Frozen encoder + per-dimension transforms + cached prototypes. Inference
/// is pure; only the transforms ψ are ever trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoPolicy {
    /// Frozen copy of the black-box encoder F.
    pub encoder: Mlp,
    pub obs_scale: [f64; OBS_DIMS],
    pub states: [PrototypicalState; ACTION_DIMS],
    /// One transform H_k per action dimension.
    pub transforms: Vec<Mlp>,
    /// Cached latent prototypes p_k = H_k(F(S_k)).
    pub prototypes: Vec<Vec<f64>>,
    pub weights: [f64; ACTION_DIMS],
    pub epsilon: f64,
}

pub const TRANSFORM_HIDDEN: usize = 32;

impl ProtoPolicy {
    /// Fresh policy sharing the pretrained agent's encoder; transforms are
    /// randomly initialized and the prototype cache is immediately valid.
    pub fn new(
        pretrained: &ActorCritic,
        states: [PrototypicalState; ACTION_DIMS],
        rng: &mut impl Rng,
    ) -> Self {
        let width = pretrained.encoder.output_width();
        let transforms: Vec<Mlp> = (0..ACTION_DIMS)
            .map(|_| Mlp::new(&[width, TRANSFORM_HIDDEN, width], Activation::Linear, rng))
            .collect();
        let mut policy = Self {
            encoder: pretrained.encoder.clone(),
            obs_scale: pretrained.obs_scale,
            states,
            transforms,
            prototypes: vec![Vec::new(); ACTION_DIMS],
            weights: PROTO_WEIGHTS,
            epsilon: SIM_EPSILON,
        };
        policy.refresh_cache();
        policy
    }

    /// Latent image of a raw observation under the frozen encoder.
    pub fn encode(&self, obs: &[f64; OBS_DIMS]) -> Vec<f64> {
        let mut normed = [0.0; OBS_DIMS];
        for i in 0..OBS_DIMS {
            normed[i] = obs[i] / self.obs_scale[i];
        }
        self.encoder.forward(&normed).expect("encoder width fixed").output().to_vec()
    }

    /// Recomputes every p_k from the current transforms. Must run after any
    /// parameter update.
    pub fn refresh_cache(&mut self) {
        for k in 0..ACTION_DIMS {
            let latent = self.encode(&self.states[k].obs);
            self.prototypes[k] = self.transforms[k]
                .forward(&latent)
                .expect("transform width fixed")
                .output()
                .to_vec();
        }
    }

    /// Raw similarity scores per dimension.
    pub fn sims(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        let z = self.encode(obs);
        let mut out = [0.0; ACTION_DIMS];
        for k in 0..ACTION_DIMS {
            let z_k = self.transforms[k].forward(&z).expect("transform width fixed");
            out[k] = similarity(z_k.output(), &self.prototypes[k], self.epsilon);
        }
        out
    }

    /// Emits the physical action together with its decomposition.
    pub fn compose_action(&self, obs: &[f64; OBS_DIMS], model: &EnvModel) -> (Action, Explanation) {
        let sims = self.sims(obs);
        let max = sim_max(self.epsilon);
        let mut normalized = [0.0; ACTION_DIMS];
        let mut contributions = [0.0; ACTION_DIMS];
        for k in 0..ACTION_DIMS {
            normalized[k] = sims[k] / max;
            contributions[k] = self.weights[k] * sims[k];
        }
        let action = norm_to_env_action(&normalized, model);
        let nearest = sims
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| self.states[k].label.clone())
            .unwrap_or_default();
        let explanation = Explanation {
            obs: *obs,
            sims,
            normalized,
            contributions,
            action,
            nearest_prototype: nearest,
        };
        (action, explanation)
    }

    pub fn explain(&self, obs: &[f64; OBS_DIMS], model: &EnvModel) -> Explanation {
        self.compose_action(obs, model).1
    }

    /// Number of trainable parameters (the transform networks only).
    pub fn transform_param_count(&self) -> usize {
        self.transforms.iter().map(Mlp::param_count).sum()
    }

    /// Appends the trainable parameters in the [`distill_loss`] gradient
    /// layout.
    pub fn flatten_transforms(&self, out: &mut Vec<f64>) {
        for t in &self.transforms {
            t.flatten_params(out);
        }
    }

    /// Writes back a flat parameter vector produced by
    /// [`ProtoPolicy::flatten_transforms`]; the caller must refresh the
    /// prototype cache afterwards if the policy is used for inference.
    pub fn unflatten_transforms(&mut self, flat: &[f64]) -> Result<()> {
        let mut off = 0;
        for t in &mut self.transforms {
            let n = t.param_count();
            t.unflatten_params(&flat[off..off + n])?;
            off += n;
        }
        if off != flat.len() {
            return Err(Error::Shape { expected: off, got: flat.len() });
        }
        Ok(())
    }

    // --- checkpoints ------------------------------------------------------

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("pvess-proto-policy v1\n");
        let _ = writeln!(
            out,
            "obs_scale {:?} {:?} {:?} {:?}",
            self.obs_scale[0], self.obs_scale[1], self.obs_scale[2], self.obs_scale[3]
        );
        let _ = writeln!(out, "epsilon {:?}", self.epsilon);
        let _ = writeln!(
            out,
            "weights {:?} {:?} {:?} {:?}",
            self.weights[0], self.weights[1], self.weights[2], self.weights[3]
        );
        for s in &self.states {
            let _ = writeln!(
                out,
                "state {} {:?} {:?} {:?} {:?}",
                s.label, s.obs[0], s.obs[1], s.obs[2], s.obs[3]
            );
        }
        self.encoder.write_text(&mut out);
        for t in &self.transforms {
            t.write_text(&mut out);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "pvess-proto-policy v1" {
            return Err(Error::Validation(format!("bad checkpoint header: {header}")));
        }
        let floats_after = |line: &str, tag: &str, skip: usize| -> Result<Vec<f64>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(Error::Validation(format!("expected {tag} line, got: {line}")));
            }
            parts
                .skip(skip)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad float in {tag}: {s}")))
                })
                .collect()
        };
        let scale = floats_after(lines.next().unwrap_or_default(), "obs_scale", 0)?;
        let eps = floats_after(lines.next().unwrap_or_default(), "epsilon", 0)?;
        let weights = floats_after(lines.next().unwrap_or_default(), "weights", 0)?;
        if scale.len() != OBS_DIMS || eps.len() != 1 || weights.len() != ACTION_DIMS {
            return Err(Error::Validation("malformed proto checkpoint preamble".into()));
        }
        let mut states = Vec::with_capacity(ACTION_DIMS);
        for _ in 0..ACTION_DIMS {
            let line = lines.next().unwrap_or_default().to_string();
            let mut parts = line.split_whitespace();
            if parts.next() != Some("state") {
                return Err(Error::Validation(format!("expected state line, got: {line}")));
            }
            let label = parts
                .next()
                .ok_or_else(|| Error::Validation("state line missing label".into()))?
                .to_string();
            let obs: Vec<f64> = parts
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad float in state: {s}")))
                })
                .collect::<Result<_>>()?;
            if obs.len() != OBS_DIMS {
                return Err(Error::Validation("state line must have 4 observation values".into()));
            }
            states.push(PrototypicalState {
                label,
                obs: [obs[0], obs[1], obs[2], obs[3]],
            });
        }
        let encoder = Mlp::read_text(&mut lines)?;
        let transforms: Vec<Mlp> = (0..ACTION_DIMS)
            .map(|_| Mlp::read_text(&mut lines))
            .collect::<Result<_>>()?;
        let states: [PrototypicalState; ACTION_DIMS] =
            states.try_into().expect("length checked above");
        let mut policy = Self {
            encoder,
            obs_scale: [scale[0], scale[1], scale[2], scale[3]],
            states,
            transforms,
            prototypes: vec![Vec::new(); ACTION_DIMS],
            weights: [weights[0], weights[1], weights[2], weights[3]],
            epsilon: eps[0],
        };
        policy.refresh_cache();
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_text(&text)
    }
}

impl NormalizedPolicy for ProtoPolicy {
    fn action_norm(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        let sims = self.sims(obs);
        let max = sim_max(self.epsilon);
        clamp_unit(&[sims[0] / max, sims[1] / max, sims[2] / max, sims[3] / max])
    }
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

/// One imitation pair: observation and the teacher's normalized action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub obs: [f64; OBS_DIMS],
    pub action: [f64; ACTION_DIMS],
}

/// Rolls the pretrained agent (deterministic means) through the environment
/// and records `(s, π'(s))` pairs.
pub fn collect_dataset(
    teacher: &ActorCritic,
    series: &MarketSeries,
    model: &EnvModel,
    n: usize,
    seed: u64,
) -> Result<Vec<Pair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    let mut state = env::reset(series, model, &mut rng)?;
    while pairs.len() < n {
        let obs = state.observation();
        let action = teacher.action_norm(&obs);
        pairs.push(Pair { obs, action });
        let out = env::step(&state, norm_to_env_action(&action, model), series, model)?;
        state = if out.done {
            env::reset(series, model, &mut rng)?
        } else {
            out.next
        };
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            minibatch: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// MSE of the policy's normalized sims against the targets, with gradients
/// over the transform parameters only. The prototype branch p_k = H_k(F(S_k))
/// is differentiated too, since it shares ψ.
pub fn distill_loss(policy: &ProtoPolicy, batch: &[Pair]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("distill_loss on empty batch".into()));
    }
    let max = sim_max(policy.epsilon);
    let inv = 1.0 / (batch.len() * ACTION_DIMS) as f64;
    let state_latents: Vec<Vec<f64>> = policy
        .states
        .iter()
        .map(|s| policy.encode(&s.obs))
        .collect();
    let mut grads: Vec<MlpGrads> = policy.transforms.iter().map(MlpGrads::zeros_like).collect();
    let mut loss = 0.0;

    for pair in batch {
        let z = policy.encode(&pair.obs);
        for k in 0..ACTION_DIMS {
            let cache_z = policy.transforms[k].forward(&z)?;
            let cache_p = policy.transforms[k].forward(&state_latents[k])?;
            let z_k = cache_z.output();
            let p_k = cache_p.output();
            let d2: f64 = z_k.iter().zip(p_k).map(|(a, b)| (a - b) * (a - b)).sum();
            let sim = ((d2 + 1.0) / (d2 + policy.epsilon)).ln();
            let err = sim / max - pair.action[k];
            loss += inv * err * err;

            let g_sim = inv * 2.0 * err / max;
            let g_d2 = g_sim * (1.0 / (d2 + 1.0) - 1.0 / (d2 + policy.epsilon));
            let grad_z: Vec<f64> = z_k
                .iter()
                .zip(p_k)
                .map(|(a, b)| g_d2 * 2.0 * (a - b))
                .collect();
            let grad_p: Vec<f64> = grad_z.iter().map(|g| -g).collect();
            policy.transforms[k].backward(&cache_z, &grad_z, &mut grads[k])?;
            policy.transforms[k].backward(&cache_p, &grad_p, &mut grads[k])?;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("distillation loss"));
    }
    let mut flat = Vec::with_capacity(policy.transform_param_count());
    for g in &grads {
        Mlp::flatten_grads(g, &mut flat);
    }
    Ok((loss, flat))
}

pub(crate) fn digest_f64s(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_bits().to_le_bytes());
    }
    format!("{:x}", hasher.finalize())
}

pub(crate) fn mlp_digest(net: &Mlp) -> String {
    let mut flat = Vec::new();
    net.flatten_params(&mut flat);
    digest_f64s(&flat)
}

/// Trains the transforms ψ by minibatch MSE against the teacher pairs,
/// refreshing the prototype cache after every optimizer step. The encoder F,
/// the weight vector W, and the prototypical states are asserted unchanged
/// via parameter digests. Returns the trained policy and per-epoch mean
/// losses.
pub fn distill(
    pretrained: &ActorCritic,
    dataset: &[Pair],
    states: [PrototypicalState; ACTION_DIMS],
    config: &DistillConfig,
) -> Result<(ProtoPolicy, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Contract("distill requires a nonempty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = ProtoPolicy::new(pretrained, states, &mut rng);
    let encoder_digest = mlp_digest(&policy.encoder);
    let weights_digest = digest_f64s(&policy.weights);
    let states_snapshot = policy.states.clone();

    let mut params = Vec::new();
    policy.flatten_transforms(&mut params);
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(config.minibatch) {
            let batch: Vec<Pair> = chunk.iter().map(|&i| dataset[i]).collect();
            let (loss, grads) = distill_loss(&policy, &batch)?;
            adam.step(&mut params, &grads)?;
            policy.unflatten_transforms(&params)?;
            policy.refresh_cache();
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }

    if mlp_digest(&policy.encoder) != encoder_digest {
        return Err(Error::Contract("distill mutated the frozen encoder".into()));
    }
    if digest_f64s(&policy.weights) != weights_digest {
        return Err(Error::Contract("distill mutated the fixed weight vector".into()));
    }
    if policy.states != states_snapshot {
        return Err(Error::Contract("distill mutated the prototypical states".into()));
    }
    Ok((policy, epoch_losses))
}
