//! Command-line front end for the PV-ESS scheduling laboratory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pvess::baselines::{train_kmeans, train_variant, KMeansProto, VariantPolicy};
use pvess::env::{save_series, synth_series};
use pvess::harness::{
    ablation_csv, atomic_write, emit_json, lr_ablation, report_csv, run_case, train_artifacts,
    training_curve_csv, Artifacts, CaseSpec, Config, Method,
};
use pvess::ppo::{self, ActorCritic, LrSchedule};
use pvess::proto::{collect_dataset, distill, ProtoPolicy};

#[derive(Parser)]
#[command(
    name = "pvess",
    about = "PV + battery + hydrogen scheduling lab: train, distill, evaluate, explain",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic market data as CSV (hour,price,pv).
    SynthData {
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the black-box agent with PPO.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Case id 1..=4 selecting device/cost flags.
        #[arg(long, default_value_t = 1)]
        case: u8,
        /// Overrides the configured schedule: adaptive, const_1e-2,
        /// const_1e-4, or decay_0.95.
        #[arg(long)]
        lr_schedule: Option<String>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional training-curve CSV output.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Distill an interpretable policy from a trained checkpoint.
    Distill {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        /// proto, proto-variant, or kmeans.
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a method on a case and emit a metrics report.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        case: u8,
        /// blackbox, proto, proto-variant, or kmeans.
        #[arg(long)]
        method: String,
        /// Teacher checkpoint; trained in-run when absent.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Student policy file for the chosen method; distilled in-run when
        /// absent.
        #[arg(long)]
        pset: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Explain one decision of a distilled prototype policy.
    Explain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pset: PathBuf,
        /// Comma-separated observation: price,pv,soc,loh.
        #[arg(long)]
        obs: String,
    },
    /// Train everything and evaluate one case (optionally all methods).
    RunCase {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        case: u8,
        #[arg(long, conflicts_with = "method")]
        all_methods: bool,
        #[arg(long)]
        method: Option<String>,
        /// Output directory for reports.
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
    },
    /// Train one agent per learning-rate schedule and emit the curves.
    AblateLr {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Curves CSV output path.
        #[arg(long, default_value = "lr_ablation.csv")]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

/// Builds the full artifact bundle around an existing teacher, loading the
/// requested student from `pset` when given and fitting the rest from a
/// freshly collected dataset.
fn artifacts_from_files(
    config: &Config,
    ckpt: &Path,
    method: Method,
    pset: &Option<PathBuf>,
) -> anyhow::Result<Artifacts> {
    let teacher = ActorCritic::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let series = config.series();
    let dataset = collect_dataset(
        &teacher,
        &series,
        &config.model,
        config.dataset_size,
        config.seed.wrapping_add(1),
    )?;
    let mut proto = None;
    let mut variant = None;
    let mut kmeans = None;
    if let Some(path) = pset {
        match method {
            Method::Proto => proto = Some(ProtoPolicy::load(path)?),
            Method::ProtoVariant => variant = Some(VariantPolicy::load(path)?),
            Method::Kmeans => kmeans = Some(KMeansProto::load(path)?),
            Method::Blackbox => bail!("--pset is not applicable to the blackbox method"),
        }
    }
    let proto = match proto {
        Some(p) => p,
        None => distill(&teacher, &dataset, config.prototype_states(), &config.distill)?.0,
    };
    let variant = match variant {
        Some(v) => v,
        None => train_variant(&teacher, &dataset, &config.distill)?.0,
    };
    let kmeans = match kmeans {
        Some(k) => k,
        None => train_kmeans(&teacher, &dataset, config.distill.seed)?,
    };
    Ok(Artifacts {
        teacher,
        proto,
        variant,
        kmeans,
        training_curve: Vec::new(),
    })
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::SynthData { days, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let series = synth_series(days, &mut rng, &Default::default());
            save_series(&series, &out)?;
            println!("wrote {} hours to {}", series.len(), out.display());
        }
        Command::Train {
            config,
            case,
            lr_schedule,
            out,
            curve,
        } => {
            let config = load_config(&config)?;
            let case = CaseSpec::new(case)?;
            let mut ppo_config = config.ppo;
            if let Some(kind) = lr_schedule {
                ppo_config.lr_schedule = LrSchedule::parse(&kind)?;
            }
            let model = case.apply(&config.model);
            let series = config.series();
            let (net, records) =
                ppo::train(&series, &model, config.obs_scale, &ppo_config, config.seed)?;
            net.save(&out)?;
            if let Some(curve_path) = curve {
                atomic_write(&curve_path, training_curve_csv(&records).as_bytes())?;
            }
            let last = records.last().map(|r| r.mean_reward).unwrap_or(f64::NAN);
            println!(
                "trained {} updates (final mean episode reward {last:.3}), checkpoint at {}",
                records.len(),
                out.display()
            );
        }
        Command::Distill {
            config,
            ckpt,
            method,
            out,
        } => {
            let config = load_config(&config)?;
            let method = Method::parse(&method)?;
            let teacher =
                ActorCritic::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let series = config.series();
            let dataset = collect_dataset(
                &teacher,
                &series,
                &config.model,
                config.dataset_size,
                config.seed.wrapping_add(1),
            )?;
            match method {
                Method::Proto => {
                    let (policy, losses) =
                        distill(&teacher, &dataset, config.prototype_states(), &config.distill)?;
                    policy.save(&out)?;
                    println!(
                        "distilled proto policy ({} epochs, final loss {:.6}) to {}",
                        losses.len(),
                        losses.last().copied().unwrap_or(f64::NAN),
                        out.display()
                    );
                }
                Method::ProtoVariant => {
                    let (policy, losses) = train_variant(&teacher, &dataset, &config.distill)?;
                    policy.save(&out)?;
                    println!(
                        "trained learned-prototype variant ({} epochs, final loss {:.6}) to {}",
                        losses.len(),
                        losses.last().copied().unwrap_or(f64::NAN),
                        out.display()
                    );
                }
                Method::Kmeans => {
                    let policy = train_kmeans(&teacher, &dataset, config.distill.seed)?;
                    policy.save(&out)?;
                    println!("fitted k-means prototype policy to {}", out.display());
                }
                Method::Blackbox => bail!("distill expects proto, proto-variant, or kmeans"),
            }
        }
        Command::Eval {
            config,
            case,
            method,
            ckpt,
            pset,
            report,
        } => {
            let config = load_config(&config)?;
            let case = CaseSpec::new(case)?;
            let method = Method::parse(&method)?;
            let artifacts = match &ckpt {
                Some(path) => artifacts_from_files(&config, path, method, &pset)?,
                None => train_artifacts(&config)?,
            };
            let metrics = run_case(&config, case, method, &artifacts)?;
            emit_json(&metrics, &report)?;
            let csv_path = report.with_extension("csv");
            atomic_write(&csv_path, report_csv(&metrics).as_bytes())?;
            println!(
                "case {} {}: mean reward {:.3} ± {:.3} ({} trials × {} sims) -> {}",
                metrics.case_id,
                metrics.method,
                metrics.mean_reward,
                metrics.reward_se,
                metrics.trials,
                metrics.sims_per_trial,
                report.display()
            );
        }
        Command::Explain { config, pset, obs } => {
            let config = load_config(&config)?;
            let policy =
                ProtoPolicy::load(&pset).with_context(|| format!("loading {}", pset.display()))?;
            let values: Vec<f64> = obs
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("parsing --obs {obs:?}"))?;
            if values.len() != 4 {
                bail!("--obs needs exactly 4 comma-separated values (price,pv,soc,loh)");
            }
            let observation = [values[0], values[1], values[2], values[3]];
            let explanation = policy.explain(&observation, &config.model);
            println!("{}", serde_json::to_string_pretty(&explanation)?);
        }
        Command::RunCase {
            config,
            case,
            all_methods,
            method,
            out_dir,
        } => {
            let config = load_config(&config)?;
            let case = CaseSpec::new(case)?;
            let methods: Vec<Method> = if all_methods {
                Method::ALL.to_vec()
            } else {
                vec![Method::parse(method.as_deref().unwrap_or("blackbox"))?]
            };
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let artifacts = train_artifacts(&config)?;
            for m in methods {
                let metrics = run_case(&config, case, m, &artifacts)?;
                let stem = format!("case{}_{}", case.id, m.name());
                emit_json(&metrics, out_dir.join(format!("{stem}.json")))?;
                atomic_write(
                    &out_dir.join(format!("{stem}.csv")),
                    report_csv(&metrics).as_bytes(),
                )?;
                println!(
                    "case {} {}: mean reward {:.3} ± {:.3}",
                    case.id,
                    m.name(),
                    metrics.mean_reward,
                    metrics.reward_se
                );
            }
        }
        Command::AblateLr { config, out } => {
            let config = load_config(&config)?;
            let curves = lr_ablation(&config)?;
            atomic_write(&out, ablation_csv(&curves).as_bytes())?;
            for (schedule, curve) in &curves {
                let last = curve.last().map(|r| r.mean_reward).unwrap_or(f64::NAN);
                println!("{}: final mean episode reward {last:.3}", schedule.name());
            }
            println!("curves written to {}", out.display());
        }
    }
    Ok(())
}
