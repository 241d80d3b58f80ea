//! Watermark initialization and protection-time injection.
//!
//! Initialization picks a natural in-manifold target embedding, selects
//! well-separated anchors by farthest point sampling (maximin greedy against
//! the target and the anchors chosen so far), and calibrates one quantile
//! radius per anchor so each neighborhood covers roughly the same fraction
//! of the clean set. Protection then pulls every embedding that falls inside
//! at least one anchor neighborhood toward the shared target, exactly once,
//! and renormalizes.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{self, Vector};

/// Default anchor count.
pub const DEFAULT_K: usize = 5;
/// Default local coverage ratio.
pub const DEFAULT_RHO: f64 = 0.04;
/// Default injection strength.
pub const DEFAULT_LAMBDA: f64 = 0.4;

/// Radii at or below this are degenerate.
const RADIUS_EPS: f64 = 1e-12;

/// An ordered collection of uniquely-identified embeddings sharing one
/// dimensionality. The normalizing constructor is the ingestion path used
/// everywhere in the pipeline; `from_raw_entries` skips normalization for
/// callers that need non-unit geometry (tests, feature-space data).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    entries: Vec<(String, Vector)>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl EmbeddingSet {
    /// Ingests entries, normalizing every vector to unit length.
    pub fn new(entries: Vec<(String, Vector)>) -> Result<Self> {
        let normalized = entries
            .into_iter()
            .map(|(id, v)| Ok((id, vecmath::normalize(&v)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw_entries(normalized)
    }

    /// Builds a set without normalizing. Ids must be unique and dimensions
    /// consistent.
    pub fn from_raw_entries(entries: Vec<(String, Vector)>) -> Result<Self> {
        let dim = entries.first().map(|(_, v)| v.dim()).unwrap_or(0);
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (id, v)) in entries.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingSet {
            entries,
            index,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(String, Vector)] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.index.get(id).map(|&i| &self.entries[i].1)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn vectors(&self) -> impl Iterator<Item = &Vector> {
        self.entries.iter().map(|(_, v)| v)
    }
}

/// Anchor selection strategy. `Random` realizes the no-FPS ablation: anchors
/// are drawn uniformly instead of by maximin separation, with radii
/// calibrated identically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorStrategy {
    Fps,
    Random,
}

impl std::fmt::Display for AnchorStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorStrategy::Fps => write!(f, "fps"),
            AnchorStrategy::Random => write!(f, "random"),
        }
    }
}

impl std::str::FromStr for AnchorStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fps" => Ok(AnchorStrategy::Fps),
            "random" => Ok(AnchorStrategy::Random),
            other => Err(Error::InvalidParameter(format!(
                "unknown anchor strategy {other:?} (expected fps or random)"
            ))),
        }
    }
}

/// The provider's secret material: shared target, anchors, per-anchor radii,
/// and injection parameters. Treat serialized copies as sensitive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WatermarkSecret {
    pub version: u32,
    pub dim: usize,
    pub target_id: String,
    pub target_w: Vector,
    pub anchor_ids: Vec<String>,
    pub anchors: Vec<Vector>,
    #[serde(rename = "radii")]
    pub radii_tau: Vec<f64>,
    #[serde(rename = "lambda")]
    pub lambda_strength: f64,
    #[serde(rename = "rho")]
    pub rho_coverage: f64,
    #[serde(rename = "k")]
    pub k_anchors: usize,
    #[serde(rename = "strategy")]
    pub anchor_strategy: AnchorStrategy,
    pub seed: u64,
}

impl WatermarkSecret {
    /// Re-checks structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.anchors.len() != self.k_anchors || self.radii_tau.len() != self.k_anchors {
            return Err(Error::InvalidParameter(format!(
                "secret has k={} but {} anchors / {} radii",
                self.k_anchors,
                self.anchors.len(),
                self.radii_tau.len()
            )));
        }
        if self.anchor_ids.len() != self.k_anchors {
            return Err(Error::InvalidParameter(
                "anchor_ids length differs from k".into(),
            ));
        }
        if self.anchor_ids.iter().any(|a| *a == self.target_id) {
            return Err(Error::InvalidParameter(
                "target id appears among anchor ids".into(),
            ));
        }
        if self.target_w.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: self.target_w.dim(),
            });
        }
        for a in &self.anchors {
            if a.dim() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    actual: a.dim(),
                });
            }
        }
        if !(self.lambda_strength > 0.0) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        if !(self.rho_coverage > 0.0 && self.rho_coverage < 1.0) {
            return Err(Error::RhoOutOfRange(self.rho_coverage));
        }
        if self.radii_tau.iter().any(|t| *t <= 0.0) {
            return Err(Error::InvalidParameter(
                "secret contains a non-positive radius".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON serialization. Identifies the
    /// secret in reports without leaking it.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("secret serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Result of protecting a whole set: the protected embeddings plus the
/// per-id activation record.
#[derive(Clone, Debug)]
pub struct ProtectionOutcome {
    pub protected: EmbeddingSet,
    pub activation_mask: BTreeMap<String, Vec<usize>>,
}

impl ProtectionOutcome {
    /// Fraction of ids with a nonempty activation list.
    pub fn activated_fraction(&self) -> f64 {
        if self.activation_mask.is_empty() {
            return 0.0;
        }
        let activated = self
            .activation_mask
            .values()
            .filter(|v| !v.is_empty())
            .count();
        activated as f64 / self.activation_mask.len() as f64
    }
}

/// Uniformly picks the id of the embedding that becomes the shared target.
pub fn select_target(embeddings: &EmbeddingSet, seed: u64) -> Result<String> {
    if embeddings.len() < 2 {
        return Err(Error::EmptySet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rng.random_range(0..embeddings.len());
    Ok(embeddings.entries()[idx].0.clone())
}

/// Greedy maximin anchor selection: starting from the target, each step picks
/// the embedding farthest (in minimum distance) from everything selected so
/// far. Ties break toward the lexicographically smallest id. Returns ids in
/// selection order.
pub fn fps_anchors(embeddings: &EmbeddingSet, target_id: &str, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if embeddings.len() < k + 1 {
        return Err(Error::TooFewEmbeddings {
            needed: k + 1,
            actual: embeddings.len(),
        });
    }
    let target = embeddings
        .get(target_id)
        .ok_or_else(|| Error::IdMismatch(format!("target id {target_id:?} not in set")))?;

    let entries = embeddings.entries();
    // Minimum distance from each candidate to the selected set.
    let mut min_dist: Vec<f64> = entries
        .iter()
        .map(|(_, v)| vecmath::distance_slices(v.as_slice(), target.as_slice()))
        .collect();
    let mut selected: Vec<String> = Vec::with_capacity(k);
    let mut taken: HashSet<usize> = HashSet::with_capacity(k + 1);
    if let Some(target_idx) = entries.iter().position(|(id, _)| id == target_id) {
        taken.insert(target_idx);
    }

    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, (id, _)) in entries.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    let better = min_dist[i] > min_dist[b]
                        || (min_dist[i] == min_dist[b] && *id < entries[b].0);
                    if better {
                        best = Some(i);
                    }
                }
            }
        }
        let chosen = best.expect("candidate remains by the k+1 <= n precondition");
        taken.insert(chosen);
        selected.push(entries[chosen].0.clone());
        let chosen_vec = entries[chosen].1.clone();
        for (i, (_, v)) in entries.iter().enumerate() {
            let d = vecmath::distance_slices(v.as_slice(), chosen_vec.as_slice());
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    Ok(selected)
}

/// Calibrates one radius per anchor as the lower rho-quantile of distances
/// from the anchor to the clean set. At most one zero-distance entry (the
/// anchor's own) is excluded from each distance multiset so a self-distance
/// cannot drag the radius to zero; a radius that still comes out at or below
/// 1e-12 (duplicated embeddings) is rejected as degenerate.
pub fn calibrate_radii(
    embeddings: &EmbeddingSet,
    anchors: &[Vector],
    rho: f64,
) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::RhoOutOfRange(rho));
    }
    let mut radii = Vec::with_capacity(anchors.len());
    for (k, anchor) in anchors.iter().enumerate() {
        if !embeddings.is_empty() && anchor.dim() != embeddings.dim() {
            return Err(Error::DimMismatch {
                expected: embeddings.dim(),
                actual: anchor.dim(),
            });
        }
        let mut dists: Vec<f64> = embeddings
            .vectors()
            .map(|v| vecmath::distance_slices(v.as_slice(), anchor.as_slice()))
            .collect();
        if let Some(self_pos) = dists.iter().position(|d| *d <= RADIUS_EPS) {
            dists.swap_remove(self_pos);
        }
        if dists.is_empty() {
            return Err(Error::EmptyInput);
        }
        let tau = vecmath::quantile(&dists, rho)?;
        if tau <= RADIUS_EPS {
            return Err(Error::DegenerateRadius {
                anchor_index: k,
                tau,
            });
        }
        radii.push(tau);
    }
    Ok(radii)
}

/// Indices of anchors whose neighborhood contains `e`; boundary equality
/// counts as inside. Indices are zero-based positions into `secret.anchors`.
pub fn activation_set(e: &Vector, secret: &WatermarkSecret) -> Result<Vec<usize>> {
    if e.dim() != secret.dim {
        return Err(Error::DimMismatch {
            expected: secret.dim,
            actual: e.dim(),
        });
    }
    let mut activated = Vec::new();
    for (k, (anchor, tau)) in secret.anchors.iter().zip(&secret.radii_tau).enumerate() {
        if vecmath::distance_slices(e.as_slice(), anchor.as_slice()) <= *tau {
            activated.push(k);
        }
    }
    Ok(activated)
}

/// Applies the shared-target injection to one embedding. The pull toward the
/// target is applied exactly once no matter how many anchors activated; a
/// non-activated embedding is returned bitwise unchanged.
pub fn inject(e_o: &Vector, secret: &WatermarkSecret) -> Result<(Vector, Vec<usize>)> {
    let norm = e_o.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "inject requires a unit-norm input (got norm {norm})"
        )));
    }
    let activated = activation_set(e_o, secret)?;
    if activated.is_empty() {
        return Ok((e_o.clone(), activated));
    }
    let pulled = e_o.add(&secret.target_w.scaled(secret.lambda_strength));
    Ok((vecmath::normalize(&pulled)?, activated))
}

/// Protects a whole set element-wise, recording per-id activations.
pub fn protect_set(embeddings: &EmbeddingSet, secret: &WatermarkSecret) -> Result<ProtectionOutcome> {
    if !embeddings.is_empty() && embeddings.dim() != secret.dim {
        return Err(Error::DimMismatch {
            expected: secret.dim,
            actual: embeddings.dim(),
        });
    }
    let protected_entries: Vec<(String, Vector, Vec<usize>)> = embeddings
        .entries()
        .par_iter()
        .map(|(id, v)| {
            let (e_p, activated) = inject(v, secret)?;
            Ok((id.clone(), e_p, activated))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mask = BTreeMap::new();
    let mut entries = Vec::with_capacity(protected_entries.len());
    for (id, v, activated) in protected_entries {
        mask.insert(id.clone(), activated);
        entries.push((id, v));
    }
    Ok(ProtectionOutcome {
        protected: EmbeddingSet::from_raw_entries(entries)?,
        activation_mask: mask,
    })
}

/// Samples disjoint backdoor (clean embedding activates) and benign (clean
/// embedding activates nowhere) id sets, excluding the target id from both.
pub fn build_verification_sets(
    embeddings: &EmbeddingSet,
    secret: &WatermarkSecret,
    n_backdoor: usize,
    n_benign: usize,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if n_backdoor == 0 || n_benign == 0 {
        return Err(Error::InvalidParameter(
            "verification set sizes must be >= 1".into(),
        ));
    }
    let activations: Vec<(usize, bool)> = embeddings
        .entries()
        .par_iter()
        .enumerate()
        .map(|(i, (_, v))| Ok((i, !activation_set(v, secret)?.is_empty())))
        .collect::<Result<Vec<_>>>()?;

    let mut backdoor_pool = Vec::new();
    let mut benign_pool = Vec::new();
    for (i, activated) in activations {
        let id = &embeddings.entries()[i].0;
        if *id == secret.target_id {
            continue;
        }
        if activated {
            backdoor_pool.push(id.clone());
        } else {
            benign_pool.push(id.clone());
        }
    }

    if backdoor_pool.len() < n_backdoor || benign_pool.len() < n_benign {
        return Err(Error::InsufficientSamples {
            requested_backdoor: n_backdoor,
            requested_benign: n_benign,
            available_backdoor: backdoor_pool.len(),
            available_benign: benign_pool.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (backdoor, _) = backdoor_pool.partial_shuffle(&mut rng, n_backdoor);
    let backdoor = backdoor.to_vec();
    let (benign, _) = benign_pool.partial_shuffle(&mut rng, n_benign);
    let benign = benign.to_vec();
    Ok((backdoor, benign))
}

/// Parameters for [`initialize_secret`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecretParams {
    pub k: usize,
    pub rho: f64,
    pub lambda: f64,
    pub strategy: AnchorStrategy,
    pub seed: u64,
}

impl Default for SecretParams {
    fn default() -> Self {
        SecretParams {
            k: DEFAULT_K,
            rho: DEFAULT_RHO,
            lambda: DEFAULT_LAMBDA,
            strategy: AnchorStrategy::Fps,
            seed: 0,
        }
    }
}

/// Runs target selection, anchor selection (FPS or the random ablation), and
/// radius calibration against a clean embedding set.
pub fn initialize_secret(embeddings: &EmbeddingSet, params: &SecretParams) -> Result<WatermarkSecret> {
    if params.k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let target_id = select_target(embeddings, params.seed)?;
    let anchor_ids = match params.strategy {
        AnchorStrategy::Fps => fps_anchors(embeddings, &target_id, params.k)?,
        AnchorStrategy::Random => {
            random_anchors(embeddings, &target_id, params.k, params.seed)?
        }
    };
    let anchors: Vec<Vector> = anchor_ids
        .iter()
        .map(|id| embeddings.get(id).expect("anchor id from set").clone())
        .collect();
    let radii = calibrate_radii(embeddings, &anchors, params.rho)?;
    let target_w = embeddings.get(&target_id).expect("target from set").clone();

    let secret = WatermarkSecret {
        version: 1,
        dim: embeddings.dim(),
        target_id,
        target_w,
        anchor_ids,
        anchors,
        radii_tau: radii,
        lambda_strength: params.lambda,
        rho_coverage: params.rho,
        k_anchors: params.k,
        anchor_strategy: params.strategy,
        seed: params.seed,
    };
    secret.validate()?;
    Ok(secret)
}

fn random_anchors(
    embeddings: &EmbeddingSet,
    target_id: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if embeddings.len() < k + 1 {
        return Err(Error::TooFewEmbeddings {
            needed: k + 1,
            actual: embeddings.len(),
        });
    }
    let mut pool: Vec<String> = embeddings
        .ids()
        .filter(|id| *id != target_id)
        .map(|s| s.to_string())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0x616e_6368));
    let (chosen, _) = pool.partial_shuffle(&mut rng, k);
    Ok(chosen.to_vec())
}
