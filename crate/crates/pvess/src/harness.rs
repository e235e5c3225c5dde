//! Experiment orchestration: the four device/cost cases, the 5-trials ×
//! 30-simulations metrics protocol, the learning-rate ablation, JSON
//! configuration, and deterministic report emission.
//!
//! Evaluation always uses deterministic policy means. Independent trials run
//! in parallel when the `parallel` feature is enabled; results are collected
//! in trial order so reports are byte-identical either way.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{train_kmeans, train_variant, KMeansProto, VariantPolicy};
use crate::env::{self, DeviceFlags, EnvModel, MarketSeries, SynthProfile};
use crate::error::{Error, Result};
use crate::ppo::{
    self, norm_to_env_action, ActorCritic, LrSchedule, NormalizedPolicy, PpoConfig, UpdateRecord,
    ACTION_DIMS, OBS_DIMS,
};
use crate::proto::{
    collect_dataset, default_prototypes, distill, DistillConfig, ProtoPolicy, PrototypicalState,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Top-level experiment configuration, loadable from JSON. Every knob the
/// harness touches lives here so a config digest pins a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Master seed: market data, training, and trial seeds derive from it.
    pub seed: u64,
    /// Days of synthetic market data.
    pub days: usize,
    pub synth: SynthProfile,
    /// Per-component observation divisors {price, pv, soc, loh}.
    pub obs_scale: [f64; OBS_DIMS],
    pub model: EnvModel,
    pub ppo: PpoConfig,
    pub distill: DistillConfig,
    /// Imitation dataset size for distillation and the baselines.
    pub dataset_size: usize,
    pub trials: usize,
    pub sims_per_trial: usize,
    /// Overrides the built-in prototypical states when present.
    pub prototypes: Option<Vec<PrototypicalState>>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            days: 30,
            synth: SynthProfile::default(),
            obs_scale: [1.0, 60.0, 1.0, 40.0],
            // The benchmark teacher trains on the cost-free configuration so
            // it exercises both storage devices; case flags are applied on
            // top of this model at evaluation time.
            model: EnvModel {
                flags: DeviceFlags {
                    bes_enabled: true,
                    bes_cost_enabled: false,
                    hes_enabled: true,
                    hes_cost_enabled: false,
                },
                ..EnvModel::default()
            },
            ppo: PpoConfig {
                total_steps: 98_304,
                base_lr: 1e-3,
                ..PpoConfig::default()
            },
            distill: DistillConfig {
                epochs: 5,
                ..DistillConfig::default()
            },
            dataset_size: 10_000,
            trials: 5,
            sims_per_trial: 30,
            prototypes: None,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.ppo.validate()?;
        if self.days == 0 {
            return Err(Error::Config("days must be positive".into()));
        }
        if self.trials == 0 || self.sims_per_trial == 0 {
            return Err(Error::Config("trials and sims_per_trial must be positive".into()));
        }
        if self.dataset_size == 0 {
            return Err(Error::Config("dataset_size must be positive".into()));
        }
        for s in self.obs_scale {
            if !(s > 0.0) {
                return Err(Error::Config("obs_scale entries must be positive".into()));
            }
        }
        if let Some(protos) = &self.prototypes {
            if protos.len() != ACTION_DIMS {
                return Err(Error::Config(format!(
                    "prototype override must list exactly {ACTION_DIMS} states, got {}",
                    protos.len()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        atomic_write(path.as_ref(), text.as_bytes())
    }

    /// The run's synthetic market data, derived from the master seed.
    pub fn series(&self) -> MarketSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        env::synth_series(self.days, &mut rng, &self.synth)
    }

    pub fn prototype_states(&self) -> [PrototypicalState; ACTION_DIMS] {
        match &self.prototypes {
            Some(list) => {
                let mut out = default_prototypes();
                for (slot, state) in out.iter_mut().zip(list) {
                    *slot = state.clone();
                }
                out
            }
            None => default_prototypes(),
        }
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

// ---------------------------------------------------------------------------
// Cases
// ---------------------------------------------------------------------------

/// One of the four experimental device/cost combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub id: u8,
    pub flags: DeviceFlags,
}

impl CaseSpec {
    /// Case 1: both devices with both cost terms. Case 2: both devices, no
    /// costs. Case 3: battery only, with its cost. Case 4: hydrogen only,
    /// with its cost.
    pub fn new(id: u8) -> Result<Self> {
        let flags = match id {
            1 => DeviceFlags {
                bes_enabled: true,
                bes_cost_enabled: true,
                hes_enabled: true,
                hes_cost_enabled: true,
            },
            2 => DeviceFlags {
                bes_enabled: true,
                bes_cost_enabled: false,
                hes_enabled: true,
                hes_cost_enabled: false,
            },
            3 => DeviceFlags {
                bes_enabled: true,
                bes_cost_enabled: true,
                hes_enabled: false,
                hes_cost_enabled: false,
            },
            4 => DeviceFlags {
                bes_enabled: false,
                bes_cost_enabled: false,
                hes_enabled: true,
                hes_cost_enabled: true,
            },
            other => return Err(Error::Config(format!("case id must be 1..=4, got {other}"))),
        };
        Ok(Self { id, flags })
    }

    /// The configured environment with this case's flags applied.
    pub fn apply(&self, model: &EnvModel) -> EnvModel {
        EnvModel {
            flags: self.flags,
            ..model.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Methods and trained artifacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Blackbox,
    Proto,
    ProtoVariant,
    Kmeans,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blackbox" => Ok(Self::Blackbox),
            "proto" => Ok(Self::Proto),
            "proto-variant" | "proto_variant" => Ok(Self::ProtoVariant),
            "kmeans" => Ok(Self::Kmeans),
            other => Err(Error::Config(format!("unknown method: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Blackbox => "blackbox",
            Self::Proto => "proto",
            Self::ProtoVariant => "proto_variant",
            Self::Kmeans => "kmeans",
        }
    }

    pub const ALL: [Method; 4] = [
        Method::Blackbox,
        Method::Proto,
        Method::ProtoVariant,
        Method::Kmeans,
    ];
}

/// Everything trained for one configuration: the PPO teacher and the three
/// interpretable students distilled from the same dataset.
pub struct Artifacts {
    pub teacher: ActorCritic,
    pub proto: ProtoPolicy,
    pub variant: VariantPolicy,
    pub kmeans: KMeansProto,
    pub training_curve: Vec<UpdateRecord>,
}

impl Artifacts {
    pub fn policy(&self, method: Method) -> &dyn NormalizedPolicy {
        match method {
            Method::Blackbox => &self.teacher,
            Method::Proto => &self.proto,
            Method::ProtoVariant => &self.variant,
            Method::Kmeans => &self.kmeans,
        }
    }
}

/// Trains the teacher with PPO on the configured model, collects the
/// imitation dataset under its deterministic policy, and fits all three
/// interpretable students from it.
pub fn train_artifacts(config: &Config) -> Result<Artifacts> {
    config.validate()?;
    let series = config.series();
    let (teacher, training_curve) = ppo::train(
        &series,
        &config.model,
        config.obs_scale,
        &config.ppo,
        config.seed,
    )?;
    let dataset = collect_dataset(
        &teacher,
        &series,
        &config.model,
        config.dataset_size,
        config.seed.wrapping_add(1),
    )?;
    let (proto, _) = distill(&teacher, &dataset, config.prototype_states(), &config.distill)?;
    let (variant, _) = train_variant(&teacher, &dataset, &config.distill)?;
    let kmeans = train_kmeans(&teacher, &dataset, config.distill.seed)?;
    Ok(Artifacts {
        teacher,
        proto,
        variant,
        kmeans,
        training_curve,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mean action dissimilarity: average over steps and dimensions of the
/// squared difference.
pub fn compute_mse(a: &[[f64; ACTION_DIMS]], b: &[[f64; ACTION_DIMS]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Contract("compute_mse on empty sequences".into()));
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (a.len() * ACTION_DIMS) as f64)
}

/// Evaluation metrics for one method on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub case_id: u8,
    pub method: String,
    pub trials: usize,
    pub sims_per_trial: usize,
    /// Mean episode reward over all trials.
    pub mean_reward: f64,
    /// Standard error of the per-trial mean rewards.
    pub reward_se: f64,
    pub trial_rewards: Vec<f64>,
    /// Action MSE against the black-box teacher on the visited states;
    /// absent for the black-box itself.
    pub action_mse_mean: Option<f64>,
    pub action_mse_se: Option<f64>,
    pub trial_seeds: Vec<u64>,
    pub config_digest: String,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Stable per-trial seed derivation (splitmix64 over master seed, case, and
/// trial index).
fn trial_seed(master: u64, case_id: u8, trial: u64) -> u64 {
    let mut x = master
        .wrapping_add((case_id as u64).wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(trial.wrapping_mul(0xbf58476d1ce4e5b9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    x
}

struct TrialOutcome {
    mean_reward: f64,
    mse: f64,
}

fn run_trial(
    policy: &dyn NormalizedPolicy,
    teacher: &ActorCritic,
    series: &MarketSeries,
    model: &EnvModel,
    sims: usize,
    seed: u64,
) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut policy_actions = Vec::new();
    let mut teacher_actions = Vec::new();
    for _ in 0..sims {
        let mut state = env::reset(series, model, &mut rng)?;
        loop {
            let obs = state.observation();
            let action = policy.action_norm(&obs);
            policy_actions.push(action);
            teacher_actions.push(teacher.action_norm(&obs));
            let out = env::step(&state, norm_to_env_action(&action, model), series, model)?;
            total += out.reward;
            if out.done {
                break;
            }
            state = out.next;
        }
    }
    Ok(TrialOutcome {
        mean_reward: total / sims as f64,
        mse: compute_mse(&policy_actions, &teacher_actions)?,
    })
}

/// One evaluation trial: `sims` episodes under the deterministic policy.
/// Returns the mean episode reward and the action MSE against the teacher
/// over the visited states.
pub fn evaluate_policy(
    policy: &dyn NormalizedPolicy,
    teacher: &ActorCritic,
    series: &MarketSeries,
    model: &EnvModel,
    sims: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let outcome = run_trial(policy, teacher, series, model, sims, seed)?;
    Ok((outcome.mean_reward, outcome.mse))
}

/// Evaluates one method on one case: `trials` independent trials of
/// `sims_per_trial` episodes each, deterministic policy means throughout.
pub fn run_case(
    config: &Config,
    case: CaseSpec,
    method: Method,
    artifacts: &Artifacts,
) -> Result<MetricsReport> {
    config.validate()?;
    let series = config.series();
    let model = case.apply(&config.model);
    let policy = artifacts.policy(method);
    let seeds: Vec<u64> = (0..config.trials as u64)
        .map(|t| trial_seed(config.seed, case.id, t))
        .collect();

    let trial = |seed: &u64| {
        run_trial(
            policy,
            &artifacts.teacher,
            &series,
            &model,
            config.sims_per_trial,
            *seed,
        )
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<TrialOutcome> = seeds.par_iter().map(trial).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<TrialOutcome> = seeds.iter().map(trial).collect::<Result<_>>()?;

    let rewards: Vec<f64> = outcomes.iter().map(|o| o.mean_reward).collect();
    let (mean_reward, reward_se) = mean_and_se(&rewards);
    let (mse_mean, mse_se) = if method == Method::Blackbox {
        (None, None)
    } else {
        let mses: Vec<f64> = outcomes.iter().map(|o| o.mse).collect();
        let (m, s) = mean_and_se(&mses);
        (Some(m), Some(s))
    };
    Ok(MetricsReport {
        case_id: case.id,
        method: method.name().to_string(),
        trials: config.trials,
        sims_per_trial: config.sims_per_trial,
        mean_reward,
        reward_se,
        trial_rewards: rewards,
        action_mse_mean: mse_mean,
        action_mse_se: mse_se,
        trial_seeds: seeds,
        config_digest: config.digest(),
    })
}

// ---------------------------------------------------------------------------
// Learning-rate ablation
// ---------------------------------------------------------------------------

pub const LR_SCHEDULES: [LrSchedule; 4] = [
    LrSchedule::Adaptive,
    LrSchedule::Const1e2,
    LrSchedule::Const1e4,
    LrSchedule::Decay095,
];

/// Trains one agent per schedule on identical data and seeds and returns the
/// per-update reward curves.
pub fn lr_ablation(config: &Config) -> Result<Vec<(LrSchedule, Vec<UpdateRecord>)>> {
    config.validate()?;
    let series = config.series();
    let mut curves = Vec::with_capacity(LR_SCHEDULES.len());
    for schedule in LR_SCHEDULES {
        let ppo = PpoConfig {
            lr_schedule: schedule,
            ..config.ppo
        };
        let (_, curve) = ppo::train(&series, &config.model, config.obs_scale, &ppo, config.seed)?;
        curves.push((schedule, curve));
    }
    Ok(curves)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("report")
        )),
        None => Path::new(&format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("report")
        ))
        .to_path_buf(),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// JSON report with a trailing newline, written atomically. Byte-identical
/// across runs with equal inputs.
pub fn emit_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path.as_ref(), text.as_bytes())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Plot-ready CSV for one report: one row per trial.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("trial,seed,mean_reward,action_mse_mean\n");
    for (i, (reward, seed)) in report
        .trial_rewards
        .iter()
        .zip(&report.trial_seeds)
        .enumerate()
    {
        let mse = report
            .action_mse_mean
            .map(|m| format!("{m}"))
            .unwrap_or_default();
        out.push_str(&format!("{i},{seed},{reward},{mse}\n"));
    }
    out
}

/// Training-curve CSV: `update,mean_reward,loss`.
pub fn training_curve_csv(curve: &[UpdateRecord]) -> String {
    let mut out = String::from("update,mean_reward,loss\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.update, r.mean_reward, r.loss));
    }
    out
}

/// Ablation CSV: the update index plus one mean-reward column per schedule.
pub fn ablation_csv(curves: &[(LrSchedule, Vec<UpdateRecord>)]) -> String {
    let mut out = String::from("update");
    for (schedule, _) in curves {
        out.push(',');
        out.push_str(schedule.name());
    }
    out.push('\n');
    let rows = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        out.push_str(&i.to_string());
        for (_, curve) in curves {
            out.push(',');
            if let Some(r) = curve.get(i) {
                out.push_str(&r.mean_reward.to_string());
            }
        }
        out.push('\n');
    }
    out
}
