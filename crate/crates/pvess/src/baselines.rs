//! Comparison policies: the learned-prototype single-transform variant and
//! the K-Means prototype policy.
//!
//! Both reuse the frozen black-box encoder and the same imitation dataset as
//! the main prototype policy, so metric differences isolate the design
//! choices: per-dimension transforms + human prototypes (main) versus one
//! shared transform + learned prototypes (variant) versus clustering + a
//! linear read-out (K-Means).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neural::{Activation, AdamState, Mlp, MlpGrads};
use crate::ppo::{clamp_unit, ActorCritic, NormalizedPolicy, ACTION_DIMS, OBS_DIMS};
use crate::proto::{
    digest_f64s, mlp_digest, sim_max, similarity, DistillConfig, Pair, PROTO_WEIGHTS, SIM_EPSILON,
    TRANSFORM_HIDDEN,
};

// ---------------------------------------------------------------------------
// K-Means clustering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after each Lloyd update step (non-increasing).
    pub inertia_history: Vec<f64>,
}

fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_dist(p, &centroids[a]))
        .sum()
}

/// Lloyd's algorithm from seeded random-point initialization, run to an
/// assignment fixpoint or `max_iter`. Empty clusters are reseeded to the
/// point farthest from its current centroid.
pub fn kmeans_cluster(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult> {
    if points.len() < k {
        return Err(Error::Contract(format!(
            "k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    if k == 0 {
        return Err(Error::Contract("k-means needs k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init: Vec<usize> = (0..points.len()).collect();
    init.shuffle(&mut rng);
    let mut centroids: Vec<Vec<f64>> = init[..k].iter().map(|&i| points[i].clone()).collect();

    let mut assignments: Vec<usize> = points
        .iter()
        .map(|p| nearest_centroid(p, &centroids))
        .collect();
    let mut history = vec![inertia(points, &centroids, &assignments)];

    for _ in 0..max_iter {
        // Update step: centroids move to the mean of their members.
        let dim = centroids[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Reseed an empty cluster to the point farthest from its
                // currently assigned centroid.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, a), (i2, b)| {
                        squared_dist(a, &centroids[assignments[*i]])
                            .total_cmp(&squared_dist(b, &centroids[assignments[*i2]]))
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids[j] = points[far].clone();
            } else {
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }

        let next: Vec<usize> = points
            .iter()
            .map(|p| nearest_centroid(p, &centroids))
            .collect();
        history.push(inertia(points, &centroids, &next));
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia_history: history,
    })
}

/// Index of the dataset state whose latent is nearest the centroid; ties go
/// to the lowest index.
pub fn map_centroid_to_state(centroid: &[f64], latents: &[Vec<f64>]) -> Result<usize> {
    if latents.is_empty() {
        return Err(Error::Contract("map_centroid_to_state on empty dataset".into()));
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, z) in latents.iter().enumerate() {
        let d = squared_dist(centroid, z);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Linear last layer
// ---------------------------------------------------------------------------

/// Solves the square system `a·x = b` by Gaussian elimination with partial
/// pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Validation("singular design matrix beyond ridge rescue".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Ridge least squares (λ = 1e-6) of `targets ≈ features · weightsᵀ`,
/// solved per output dimension by the normal equations. Returns
/// `weights[out][feature]`.
pub fn fit_last_layer(features: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::Contract(format!(
            "fit_last_layer needs matching nonempty features/targets, got {}/{}",
            features.len(),
            targets.len()
        )));
    }
    let d = features[0].len();
    let out_dims = targets[0].len();
    const RIDGE: f64 = 1e-6;

    let mut gram = vec![vec![0.0; d]; d];
    for f in features {
        if f.len() != d {
            return Err(Error::Shape { expected: d, got: f.len() });
        }
        for i in 0..d {
            for j in 0..d {
                gram[i][j] += f[i] * f[j];
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += RIDGE;
    }

    let mut weights = Vec::with_capacity(out_dims);
    for k in 0..out_dims {
        let mut rhs = vec![0.0; d];
        for (f, t) in features.iter().zip(targets) {
            if t.len() != out_dims {
                return Err(Error::Shape { expected: out_dims, got: t.len() });
            }
            for i in 0..d {
                rhs[i] += f[i] * t[k];
            }
        }
        weights.push(solve_linear(gram.clone(), rhs)?);
    }
    Ok(weights)
}

// ---------------------------------------------------------------------------
// K-Means prototype policy
// ---------------------------------------------------------------------------

/// Clustering-derived baseline: similarity features against four latent
/// centroids feed a least-squares linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansProto {
    pub encoder: Mlp,
    pub obs_scale: [f64; OBS_DIMS],
    pub centroids: Vec<Vec<f64>>,
    /// Observation of the dataset state nearest each centroid (for display).
    pub centroid_states: Vec<[f64; OBS_DIMS]>,
    /// `weights[out][centroid]` over similarity features.
    pub weights: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl KMeansProto {
    pub fn encode(&self, obs: &[f64; OBS_DIMS]) -> Vec<f64> {
        let mut normed = [0.0; OBS_DIMS];
        for i in 0..OBS_DIMS {
            normed[i] = obs[i] / self.obs_scale[i];
        }
        self.encoder.forward(&normed).expect("encoder width fixed").output().to_vec()
    }

    pub fn sim_features(&self, obs: &[f64; OBS_DIMS]) -> Vec<f64> {
        let z = self.encode(obs);
        self.centroids
            .iter()
            .map(|c| similarity(&z, c, self.epsilon))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("pvess-kmeans-proto v1\n");
        let _ = writeln!(
            out,
            "obs_scale {:?} {:?} {:?} {:?}",
            self.obs_scale[0], self.obs_scale[1], self.obs_scale[2], self.obs_scale[3]
        );
        let _ = writeln!(out, "epsilon {:?}", self.epsilon);
        let _ = writeln!(out, "centroids {}", self.centroids.len());
        for c in &self.centroids {
            let vals: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        for s in &self.centroid_states {
            let _ = writeln!(out, "centroid_state {:?} {:?} {:?} {:?}", s[0], s[1], s[2], s[3]);
        }
        for w in &self.weights {
            let vals: Vec<String> = w.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "weights_row {}", vals.join(" "));
        }
        self.encoder.write_text(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().unwrap_or_default() != "pvess-kmeans-proto v1" {
            return Err(Error::Validation("bad k-means checkpoint header".into()));
        }
        let tagged = |line: &str, tag: &str| -> Result<Vec<f64>> {
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
        let scale = tagged(lines.next().unwrap_or_default(), "obs_scale")?;
        let eps = tagged(lines.next().unwrap_or_default(), "epsilon")?;
        let count = tagged(lines.next().unwrap_or_default(), "centroids")?;
        if scale.len() != OBS_DIMS || eps.len() != 1 || count.len() != 1 {
            return Err(Error::Validation("malformed k-means checkpoint preamble".into()));
        }
        let k = count[0] as usize;
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            let vals: Vec<f64> = lines
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad centroid value: {s}")))
                })
                .collect::<Result<_>>()?;
            centroids.push(vals);
        }
        let mut centroid_states = Vec::with_capacity(k);
        for _ in 0..k {
            let vals = tagged(lines.next().unwrap_or_default(), "centroid_state")?;
            if vals.len() != OBS_DIMS {
                return Err(Error::Validation("centroid_state must have 4 values".into()));
            }
            centroid_states.push([vals[0], vals[1], vals[2], vals[3]]);
        }
        let mut weights = Vec::with_capacity(ACTION_DIMS);
        for _ in 0..ACTION_DIMS {
            weights.push(tagged(lines.next().unwrap_or_default(), "weights_row")?);
        }
        let encoder = Mlp::read_text(&mut lines)?;
        Ok(Self {
            encoder,
            obs_scale: [scale[0], scale[1], scale[2], scale[3]],
            centroids,
            centroid_states,
            weights,
            epsilon: eps[0],
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

impl NormalizedPolicy for KMeansProto {
    fn action_norm(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        let feats = self.sim_features(obs);
        let mut raw = [0.0; ACTION_DIMS];
        for k in 0..ACTION_DIMS {
            raw[k] = self.weights[k].iter().zip(&feats).map(|(w, f)| w * f).sum();
        }
        clamp_unit(&raw)
    }
}

/// Clusters the dataset latents (k = 4, matching the main method's prototype
/// count), maps each centroid to its nearest dataset state, and fits the
/// linear read-out against the teacher's actions.
pub fn train_kmeans(
    teacher: &ActorCritic,
    dataset: &[Pair],
    seed: u64,
) -> Result<KMeansProto> {
    if dataset.is_empty() {
        return Err(Error::Contract("train_kmeans requires a nonempty dataset".into()));
    }
    let latents: Vec<Vec<f64>> = dataset.iter().map(|p| teacher.encode(&p.obs)).collect();
    let clustering = kmeans_cluster(&latents, ACTION_DIMS, seed, 100)?;
    let centroid_states = clustering
        .centroids
        .iter()
        .map(|c| map_centroid_to_state(c, &latents).map(|i| dataset[i].obs))
        .collect::<Result<Vec<_>>>()?;

    let mut policy = KMeansProto {
        encoder: teacher.encoder.clone(),
        obs_scale: teacher.obs_scale,
        centroids: clustering.centroids,
        centroid_states,
        weights: Vec::new(),
        epsilon: SIM_EPSILON,
    };
    let features: Vec<Vec<f64>> = dataset.iter().map(|p| policy.sim_features(&p.obs)).collect();
    let targets: Vec<Vec<f64>> = dataset.iter().map(|p| p.action.to_vec()).collect();
    policy.weights = fit_last_layer(&features, &targets)?;
    Ok(policy)
}

// ---------------------------------------------------------------------------
// Learned-prototype variant
// ---------------------------------------------------------------------------

/// Ablated prototype policy: one shared transform H for all dimensions and
/// the four latent prototypes learned as free parameters instead of being
/// anchored to human-defined states.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantPolicy {
    pub encoder: Mlp,
    pub obs_scale: [f64; OBS_DIMS],
    /// The single shared transform.
    pub transform: Mlp,
    /// Learned latent prototypes, one per action dimension.
    pub prototypes: Vec<Vec<f64>>,
    /// Observation of the dataset state nearest each prototype (for display).
    pub prototype_states: Vec<[f64; OBS_DIMS]>,
    pub weights: [f64; ACTION_DIMS],
    pub epsilon: f64,
}

impl VariantPolicy {
    pub fn new(pretrained: &ActorCritic, rng: &mut impl Rng) -> Self {
        let width = pretrained.encoder.output_width();
        let normal = rand_distr::Normal::new(0.0, 0.1).expect("valid stddev");
        let prototypes = (0..ACTION_DIMS)
            .map(|_| {
                (0..width)
                    .map(|_| rand_distr::Distribution::sample(&normal, rng))
                    .collect()
            })
            .collect();
        Self {
            encoder: pretrained.encoder.clone(),
            obs_scale: pretrained.obs_scale,
            transform: Mlp::new(&[width, TRANSFORM_HIDDEN, width], Activation::Linear, rng),
            prototypes,
            prototype_states: Vec::new(),
            weights: PROTO_WEIGHTS,
            epsilon: SIM_EPSILON,
        }
    }

    pub fn encode(&self, obs: &[f64; OBS_DIMS]) -> Vec<f64> {
        let mut normed = [0.0; OBS_DIMS];
        for i in 0..OBS_DIMS {
            normed[i] = obs[i] / self.obs_scale[i];
        }
        self.encoder.forward(&normed).expect("encoder width fixed").output().to_vec()
    }

    pub fn sims(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        let z = self.encode(obs);
        let h = self.transform.forward(&z).expect("transform width fixed");
        let mut out = [0.0; ACTION_DIMS];
        for k in 0..ACTION_DIMS {
            out[k] = similarity(h.output(), &self.prototypes[k], self.epsilon);
        }
        out
    }

    /// Number of trainable parameters (shared transform plus prototypes).
    pub fn param_count(&self) -> usize {
        self.transform.param_count() + self.prototypes.iter().map(Vec::len).sum::<usize>()
    }

    /// Appends the trainable parameters in the [`variant_loss`] gradient
    /// layout.
    pub fn flatten(&self, out: &mut Vec<f64>) {
        self.transform.flatten_params(out);
        for p in &self.prototypes {
            out.extend_from_slice(p);
        }
    }

    /// Writes back a flat parameter vector produced by
    /// [`VariantPolicy::flatten`].
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = self.transform.param_count();
        self.transform.unflatten_params(&flat[..off])?;
        for p in &mut self.prototypes {
            let n = p.len();
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("pvess-proto-variant v1\n");
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
        let _ = writeln!(out, "prototype_states {}", self.prototype_states.len());
        for s in &self.prototype_states {
            let _ = writeln!(out, "{:?} {:?} {:?} {:?}", s[0], s[1], s[2], s[3]);
        }
        for p in &self.prototypes {
            let vals: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "prototype {}", vals.join(" "));
        }
        self.encoder.write_text(&mut out);
        self.transform.write_text(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().unwrap_or_default() != "pvess-proto-variant v1" {
            return Err(Error::Validation("bad variant checkpoint header".into()));
        }
        let tagged = |line: &str, tag: &str| -> Result<Vec<f64>> {
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
        let scale = tagged(lines.next().unwrap_or_default(), "obs_scale")?;
        let eps = tagged(lines.next().unwrap_or_default(), "epsilon")?;
        let weights = tagged(lines.next().unwrap_or_default(), "weights")?;
        let n_states = tagged(lines.next().unwrap_or_default(), "prototype_states")?;
        if scale.len() != OBS_DIMS
            || eps.len() != 1
            || weights.len() != ACTION_DIMS
            || n_states.len() != 1
        {
            return Err(Error::Validation("malformed variant checkpoint preamble".into()));
        }
        let mut prototype_states = Vec::new();
        for _ in 0..n_states[0] as usize {
            let vals: Vec<f64> = lines
                .next()
                .unwrap_or_default()
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Validation(format!("bad state value: {s}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != OBS_DIMS {
                return Err(Error::Validation("prototype state must have 4 values".into()));
            }
            prototype_states.push([vals[0], vals[1], vals[2], vals[3]]);
        }
        let mut prototypes = Vec::with_capacity(ACTION_DIMS);
        for _ in 0..ACTION_DIMS {
            prototypes.push(tagged(lines.next().unwrap_or_default(), "prototype")?);
        }
        let encoder = Mlp::read_text(&mut lines)?;
        let transform = Mlp::read_text(&mut lines)?;
        Ok(Self {
            encoder,
            obs_scale: [scale[0], scale[1], scale[2], scale[3]],
            transform,
            prototypes,
            prototype_states,
            weights: [weights[0], weights[1], weights[2], weights[3]],
            epsilon: eps[0],
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

impl NormalizedPolicy for VariantPolicy {
    fn action_norm(&self, obs: &[f64; OBS_DIMS]) -> [f64; ACTION_DIMS] {
        let sims = self.sims(obs);
        let max = sim_max(self.epsilon);
        clamp_unit(&[sims[0] / max, sims[1] / max, sims[2] / max, sims[3] / max])
    }
}

/// Same MSE objective as the main distillation, but over the shared
/// transform and the free prototype parameters jointly.
pub fn variant_loss(policy: &VariantPolicy, batch: &[Pair]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("variant_loss on empty batch".into()));
    }
    let max = sim_max(policy.epsilon);
    let inv = 1.0 / (batch.len() * ACTION_DIMS) as f64;
    let mut net_grads = MlpGrads::zeros_like(&policy.transform);
    let mut proto_grads: Vec<Vec<f64>> =
        policy.prototypes.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut loss = 0.0;

    for pair in batch {
        let z = policy.encode(&pair.obs);
        let cache = policy.transform.forward(&z)?;
        let h = cache.output();
        let mut grad_h = vec![0.0; h.len()];
        for k in 0..ACTION_DIMS {
            let p_k = &policy.prototypes[k];
            let d2: f64 = h.iter().zip(p_k).map(|(a, b)| (a - b) * (a - b)).sum();
            let sim = ((d2 + 1.0) / (d2 + policy.epsilon)).ln();
            let err = sim / max - pair.action[k];
            loss += inv * err * err;
            let g_d2 = inv * 2.0 * err / max * (1.0 / (d2 + 1.0) - 1.0 / (d2 + policy.epsilon));
            for i in 0..h.len() {
                let g = g_d2 * 2.0 * (h[i] - p_k[i]);
                grad_h[i] += g;
                proto_grads[k][i] -= g;
            }
        }
        policy.transform.backward(&cache, &grad_h, &mut net_grads)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("variant loss"));
    }
    let mut flat = Vec::with_capacity(policy.param_count());
    Mlp::flatten_grads(&net_grads, &mut flat);
    for g in &proto_grads {
        flat.extend_from_slice(g);
    }
    Ok((loss, flat))
}

/// Trains the variant on the same teacher dataset and budget as the main
/// distillation, then maps each learned prototype to the nearest dataset
/// state for reporting. The frozen encoder and the fixed weight vector are
/// digest-checked.
pub fn train_variant(
    pretrained: &ActorCritic,
    dataset: &[Pair],
    config: &DistillConfig,
) -> Result<(VariantPolicy, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Contract("train_variant requires a nonempty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = VariantPolicy::new(pretrained, &mut rng);
    let encoder_digest = mlp_digest(&policy.encoder);
    let weights_digest = digest_f64s(&policy.weights);

    let mut params = Vec::new();
    policy.flatten(&mut params);
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(config.minibatch) {
            let batch: Vec<Pair> = chunk.iter().map(|&i| dataset[i]).collect();
            let (loss, grads) = variant_loss(&policy, &batch)?;
            adam.step(&mut params, &grads)?;
            policy.unflatten(&params)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }

    if mlp_digest(&policy.encoder) != encoder_digest {
        return Err(Error::Contract("train_variant mutated the frozen encoder".into()));
    }
    if digest_f64s(&policy.weights) != weights_digest {
        return Err(Error::Contract("train_variant mutated the fixed weight vector".into()));
    }

    // Map each learned prototype to the nearest transformed dataset latent.
    let transformed: Vec<Vec<f64>> = dataset
        .iter()
        .map(|p| {
            let z = policy.encode(&p.obs);
            Ok(policy.transform.forward(&z)?.output().to_vec())
        })
        .collect::<Result<_>>()?;
    policy.prototype_states = policy
        .prototypes
        .iter()
        .map(|p| map_centroid_to_state(p, &transformed).map(|i| dataset[i].obs))
        .collect::<Result<_>>()?;
    Ok((policy, epoch_losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kmeans_four_distinct_points() {
        let points = vec![
            vec![0.0, 0.0],
            vec![5.0, 0.0],
            vec![0.0, 5.0],
            vec![5.0, 5.0],
        ];
        let result = kmeans_cluster(&points, 4, 1, 50).unwrap();
        assert_abs_diff_eq!(*result.inertia_history.last().unwrap(), 0.0, epsilon = 1e-12);
        let mut sorted = result.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_two_blobs() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ];
        let result = kmeans_cluster(&points, 2, 3, 50).unwrap();
        let mut centroids = result.centroids.clone();
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_abs_diff_eq!(centroids[0][0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(centroids[0][1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(centroids[1][0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(centroids[1][1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_deterministic_and_inertia_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a = kmeans_cluster(&points, 4, 7, 100).unwrap();
        let b = kmeans_cluster(&points, 4, 7, 100).unwrap();
        assert_eq!(a, b);
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        assert!(kmeans_cluster(&[vec![0.0]], 2, 0, 10).is_err());
    }

    #[test]
    fn centroid_mapping_rules() {
        let latents = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(map_centroid_to_state(&[1.0, 0.0], &latents).unwrap(), 1);
        // Equidistant to indices 0 and 1 → lowest index wins.
        assert_eq!(map_centroid_to_state(&[0.5, 0.0], &latents).unwrap(), 0);
        assert_eq!(map_centroid_to_state(&[99.0, 0.0], &latents[..1].to_vec()).unwrap(), 0);
        assert!(map_centroid_to_state(&[0.0], &[]).is_err());
    }

    #[test]
    fn last_layer_recovers_known_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = [
            vec![0.3, -1.2, 0.7, 0.0],
            vec![1.0, 0.5, -0.5, 2.0],
            vec![0.0, 0.0, 1.0, -1.0],
            vec![-0.4, 0.9, 0.1, 0.2],
        ];
        let features: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                truth
                    .iter()
                    .map(|w| w.iter().zip(f).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let fitted = fit_last_layer(&features, &targets).unwrap();
        for (fw, tw) in fitted.iter().zip(&truth) {
            for (a, b) in fw.iter().zip(tw) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn last_layer_zero_targets_give_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let features: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets = vec![vec![0.0; 4]; 50];
        let fitted = fit_last_layer(&features, &targets).unwrap();
        for row in fitted {
            for w in row {
                assert!(w.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn last_layer_constant_interpolation() {
        let features = vec![vec![1.0]; 10];
        let targets = vec![vec![2.5]; 10];
        let fitted = fit_last_layer(&features, &targets).unwrap();
        assert_abs_diff_eq!(fitted[0][0], 2.5, epsilon = 1e-6);
    }

    /// Independent classical Gram-Schmidt QR least-squares oracle.
    fn qr_residual(features: &[Vec<f64>], targets: &[f64]) -> f64 {
        let n = features.len();
        let d = features[0].len();
        let mut cols: Vec<Vec<f64>> = (0..d).map(|j| features.iter().map(|f| f[j]).collect()).collect();
        let mut q: Vec<Vec<f64>> = Vec::new();
        for col in cols.iter_mut() {
            let mut v = col.clone();
            for u in &q {
                let proj: f64 = u.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                q.push(v.iter().map(|x| x / norm).collect());
            }
        }
        let mut residual = targets.to_vec();
        for u in &q {
            let proj: f64 = u.iter().zip(targets).map(|(a, b)| a * b).sum();
            for (r, ui) in residual.iter_mut().zip(u) {
                *r -= proj * ui;
            }
        }
        let _ = n;
        residual.iter().map(|x| x * x).sum()
    }

    #[test]
    fn last_layer_residual_matches_qr_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let features: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-1.0..1.0)])
            .collect();
        let fitted = fit_last_layer(&features, &targets).unwrap();
        let residual: f64 = features
            .iter()
            .zip(&targets)
            .map(|(f, t)| {
                let pred: f64 = fitted[0].iter().zip(f).map(|(w, x)| w * x).sum();
                (pred - t[0]) * (pred - t[0])
            })
            .sum();
        let flat_targets: Vec<f64> = targets.iter().map(|t| t[0]).collect();
        let oracle = qr_residual(&features, &flat_targets);
        assert_abs_diff_eq!(residual, oracle, epsilon = 1e-8);
    }

    fn teacher(seed: u64) -> ActorCritic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActorCritic::new([1.0, 60.0, 1.0, 40.0], 0.5f64.ln(), &mut rng)
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pair> {
        (0..n)
            .map(|_| Pair {
                obs: [
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..60.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..40.0),
                ],
                action: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            })
            .collect()
    }

    #[test]
    fn variant_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut policy = VariantPolicy::new(&teacher(1), &mut rng);
        let batch = random_dataset(&mut rng, 4);
        let (_, analytic) = variant_loss(&policy, &batch).unwrap();
        let mut params = Vec::new();
        policy.flatten(&mut params);
        let shape = policy.clone();
        let err = crate::neural::test_util::finite_diff_max_rel_err(
            &mut params,
            &analytic,
            |p| {
                let mut probe = shape.clone();
                probe.unflatten(p).unwrap();
                variant_loss(&probe, &batch).unwrap().0
            },
            1e-6,
        );
        assert!(err < 1e-4, "max rel err {err}");
        policy.unflatten(&params).unwrap();
    }

    #[test]
    fn variant_zero_epochs_is_initialization() {
        let net = teacher(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dataset = random_dataset(&mut rng, 8);
        let config = DistillConfig {
            epochs: 0,
            ..DistillConfig::default()
        };
        let (policy, losses) = train_variant(&net, &dataset, &config).unwrap();
        let mut fresh_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fresh = VariantPolicy::new(&net, &mut fresh_rng);
        assert!(losses.is_empty());
        // The untouched parameters match; the trained copy additionally
        // carries the display mapping.
        fresh.prototype_states = policy.prototype_states.clone();
        assert_eq!(policy, fresh);
    }

    #[test]
    fn variant_training_reduces_loss_and_maps_states() {
        let net = teacher(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dataset = random_dataset(&mut rng, 256);
        let config = DistillConfig {
            epochs: 6,
            ..DistillConfig::default()
        };
        let (policy, losses) = train_variant(&net, &dataset, &config).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        assert_eq!(policy.prototype_states.len(), ACTION_DIMS);
        for s in &policy.prototype_states {
            assert!(dataset.iter().any(|p| p.obs == *s));
        }
    }

    #[test]
    fn kmeans_policy_trains_and_roundtrips() {
        let net = teacher(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let dataset = random_dataset(&mut rng, 128);
        let policy = train_kmeans(&net, &dataset, 5).unwrap();
        assert_eq!(policy.centroids.len(), ACTION_DIMS);
        for s in &policy.centroid_states {
            assert!(dataset.iter().any(|p| p.obs == *s));
        }
        let restored = KMeansProto::from_text(&policy.to_text()).unwrap();
        assert_eq!(policy, restored);
        let a = policy.action_norm(&dataset[0].obs);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn variant_checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut policy = VariantPolicy::new(&teacher(1), &mut rng);
        policy.prototype_states = vec![[0.1, 2.0, 0.3, 4.0]; 4];
        let restored = VariantPolicy::from_text(&policy.to_text()).unwrap();
        assert_eq!(policy, restored);
    }
}
