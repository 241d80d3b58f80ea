//! Desk-scale extraction simulator: a seeded synthetic embedding provider
//! over a non-uniform mixture manifold, corpus generation, and a two-layer
//! MLP surrogate trained with MSE and Adam on (protected) embeddings.
//!
//! The provider maps feature vectors through a fixed random two-layer tanh
//! network, then pulls each output toward one of several mode centers. Mode
//! membership is a locality-sensitive hash of the features: the argmax of
//! weight-offset random projections, so nearby inputs share a mode almost
//! surely while the skewed mixing weights yield the non-uniform density the
//! radius calibration is designed for.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{self, Vector};
use crate::watermark::EmbeddingSet;

pub const DEFAULT_INPUT_DIM: usize = 32;
pub const DEFAULT_OUTPUT_DIM: usize = 256;
pub const DEFAULT_N_MODES: usize = 8;

/// Hidden width of the provider's fixed nonlinear map.
const MAP_HIDDEN: usize = 96;
/// Strength of the pull toward the selected mode center.
const MODE_PULL: f64 = 0.8;
/// Scale applied to ln(weight) offsets in the mode hash scores.
const MODE_OFFSET_SCALE: f64 = 1.25;
/// Ratio between the largest and smallest mixing weight.
const MIXING_RATIO: f64 = 4.0;

/// One attacker-side query input: an id plus a feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFeature {
    pub id: String,
    pub features: Vector,
}

/// Seeded deterministic map from input features to unit embeddings on a
/// non-uniform mixture manifold.
#[derive(Clone, Debug)]
pub struct SyntheticProvider {
    pub seed: u64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub n_modes: usize,
    mode_centers: Vec<Vector>,
    mixing_weights: Vec<f64>,
    score_dirs: Vec<Vector>,
    map_w1: Vec<f64>,
    map_b1: Vec<f64>,
    map_w2: Vec<f64>,
    map_b2: Vec<f64>,
}

/// Constructs a provider. Same seed, same provider, bit for bit.
pub fn make_provider(seed: u64, p: usize, d: usize, n_modes: usize) -> Result<SyntheticProvider> {
    if p < 4 {
        return Err(Error::BadDims(format!("input dim {p} < 4")));
    }
    if d < 16 {
        return Err(Error::BadDims(format!("output dim {d} < 16")));
    }
    if n_modes < 2 {
        return Err(Error::BadDims(format!(
            "n_modes {n_modes} < 2: a single mode makes the manifold uniform"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0x70726f76));
    let mut unit = |dim: usize, rng: &mut ChaCha8Rng| -> Vector {
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let v = Vector::new(raw).expect("finite normals");
            if v.norm() > 1e-9 {
                return vecmath::normalize(&v).expect("nonzero");
            }
        }
    };

    let mode_centers: Vec<Vector> = (0..n_modes).map(|_| unit(d, &mut rng)).collect();
    let score_dirs: Vec<Vector> = (0..n_modes).map(|_| unit(p, &mut rng)).collect();

    // Geometric mixing weights with a fixed max/min ratio.
    let raw: Vec<f64> = (0..n_modes)
        .map(|i| MIXING_RATIO.powf(i as f64 / (n_modes - 1) as f64))
        .collect();
    let total: f64 = raw.iter().sum();
    let mixing_weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let lim1 = (3.0 / p as f64).sqrt();
    let lim2 = (3.0 / MAP_HIDDEN as f64).sqrt();
    let map_w1 = (0..MAP_HIDDEN * p)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * lim1)
        .collect();
    let map_b1 = (0..MAP_HIDDEN)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 0.3)
        .collect();
    let map_w2 = (0..d * MAP_HIDDEN)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * lim2)
        .collect();
    let map_b2 = (0..d).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 0.05).collect();

    Ok(SyntheticProvider {
        seed,
        input_dim: p,
        output_dim: d,
        n_modes,
        mode_centers,
        mixing_weights,
        score_dirs,
        map_w1,
        map_b1,
        map_w2,
        map_b2,
    })
}

impl SyntheticProvider {
    pub fn mixing_weights(&self) -> &[f64] {
        &self.mixing_weights
    }

    /// Hex SHA-256 over all provider parameters.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for dims in [self.input_dim, self.output_dim, self.n_modes] {
            hasher.update((dims as u64).to_le_bytes());
        }
        for v in self.mode_centers.iter().chain(&self.score_dirs) {
            hasher.update(v.to_le_bytes());
        }
        for arr in [&self.map_w1, &self.map_b1, &self.map_w2, &self.map_b2] {
            for x in arr.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        for w in &self.mixing_weights {
            hasher.update(w.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Mode selected for a feature vector: argmax of weight-offset random
    /// projections. Ties cannot occur for generic inputs; equal scores fall
    /// back to the lower index.
    pub fn mode_of(&self, features: &Vector) -> usize {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, dir) in self.score_dirs.iter().enumerate() {
            let score = MODE_OFFSET_SCALE * self.mixing_weights[i].ln()
                + dir.dot_unchecked(features);
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }
}

/// Applies the provider's fixed nonlinear map, adds the mode pull, and
/// normalizes. Deterministic in (provider, features).
pub fn encode(provider: &SyntheticProvider, x: &InputFeature) -> Result<Vector> {
    if x.features.dim() != provider.input_dim {
        return Err(Error::DimMismatch {
            expected: provider.input_dim,
            actual: x.features.dim(),
        });
    }
    let feats = x.features.as_slice();
    let p = provider.input_dim;
    let d = provider.output_dim;

    let mut hidden = vec![0.0f64; MAP_HIDDEN];
    for i in 0..MAP_HIDDEN {
        let row = &provider.map_w1[i * p..(i + 1) * p];
        hidden[i] = (dot(row, feats) + provider.map_b1[i]).tanh();
    }
    let mut z = vec![0.0f64; d];
    for i in 0..d {
        let row = &provider.map_w2[i * MAP_HIDDEN..(i + 1) * MAP_HIDDEN];
        z[i] = dot(row, &hidden) + provider.map_b2[i];
    }
    let z = vecmath::normalize(&Vector::new(z)?)?;

    let mode = provider.mode_of(&x.features);
    let pulled = z.add(&provider.mode_centers[mode].scaled(MODE_PULL));
    vecmath::normalize(&pulled)
}

/// Encodes a whole corpus into an embedding set keyed by input id.
pub fn encode_corpus(provider: &SyntheticProvider, corpus: &[InputFeature]) -> Result<EmbeddingSet> {
    let entries: Vec<(String, Vector)> = corpus
        .par_iter()
        .map(|x| Ok((x.id.clone(), encode(provider, x)?)))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_raw_entries(entries)
}

/// Draws n standard-normal feature vectors with ids "x000001"... .
pub fn sample_corpus(provider: &SyntheticProvider, n: usize, seed: u64) -> Result<Vec<InputFeature>> {
    if n == 0 {
        return Err(Error::InvalidParameter("corpus size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0x636f7270));
    (1..=n)
        .map(|i| {
            let feats: Vec<f64> = (0..provider.input_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            Ok(InputFeature {
                id: format!("x{i:06}"),
                features: Vector::new(feats)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Surrogate model
// ---------------------------------------------------------------------------

/// Training hyperparameters. The defaults are the frozen desk-scale
/// configuration used by the pipeline and the acceptance suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            batch: 64,
            hidden: 512,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub first_epoch_loss: f64,
    pub final_loss: f64,
    pub warning: Option<String>,
}

/// Two-layer tanh MLP (input -> hidden -> output) trained by the simulated
/// attacker. Outputs are raw (not renormalized); verification normalizes.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub meta: TrainingMeta,
}

impl SurrogateModel {
    fn init(p: usize, hidden: usize, d: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, 0x696e6974));
        let lim1 = (6.0 / (p + hidden) as f64).sqrt();
        let lim2 = (6.0 / (hidden + d) as f64).sqrt();
        SurrogateModel {
            input_dim: p,
            hidden_dim: hidden,
            output_dim: d,
            w1: (0..hidden * p)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * lim1)
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..d * hidden)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * lim2)
                .collect(),
            b2: vec![0.0; d],
            meta: TrainingMeta {
                epochs: cfg.epochs,
                lr: cfg.lr,
                batch: cfg.batch,
                seed: cfg.seed,
                first_epoch_loss: f64::NAN,
                final_loss: f64::NAN,
                warning: None,
            },
        }
    }

    /// Total number of scalar parameters, in flat order w1, b1, w2, b2.
    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        let (arr, off) = self.locate(i);
        match arr {
            0 => self.w1[off],
            1 => self.b1[off],
            2 => self.w2[off],
            _ => self.b2[off],
        }
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        let (arr, off) = self.locate(i);
        match arr {
            0 => self.w1[off] = value,
            1 => self.b1[off] = value,
            2 => self.w2[off] = value,
            _ => self.b2[off] = value,
        }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let mut i = i;
        for (idx, len) in [self.w1.len(), self.b1.len(), self.w2.len(), self.b2.len()]
            .iter()
            .enumerate()
        {
            if i < *len {
                return (idx, i);
            }
            i -= len;
        }
        panic!("parameter index out of range");
    }

    fn forward_into(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let p = self.input_dim;
        let h = self.hidden_dim;
        for i in 0..h {
            hidden[i] = (dot(&self.w1[i * p..(i + 1) * p], x) + self.b1[i]).tanh();
        }
        for j in 0..self.output_dim {
            out[j] = dot(&self.w2[j * h..(j + 1) * h], hidden) + self.b2[j];
        }
    }

    /// Mean over samples of the squared L2 error (summed over output dims).
    pub fn loss_on(&self, inputs: &[Vector], targets: &[Vector]) -> Result<f64> {
        let (loss, _) = self.loss_and_grad_on(inputs, targets, false)?;
        Ok(loss)
    }

    /// Loss plus (optionally) the analytic gradient as one flat vector in
    /// parameter order. Used by training and by finite-difference checks.
    pub fn loss_and_grad_on(
        &self,
        inputs: &[Vector],
        targets: &[Vector],
        want_grad: bool,
    ) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::InvalidParameter(
                "inputs and targets must be equal-length and nonempty".into(),
            ));
        }
        for x in inputs {
            if x.dim() != self.input_dim {
                return Err(Error::DimMismatch {
                    expected: self.input_dim,
                    actual: x.dim(),
                });
            }
        }
        for t in targets {
            if t.dim() != self.output_dim {
                return Err(Error::DimMismatch {
                    expected: self.output_dim,
                    actual: t.dim(),
                });
            }
        }

        let refs: Vec<(&Vector, &Vector)> = inputs.iter().zip(targets).collect();
        let mut acc = GradAccum::new(self, want_grad);
        for chunk in refs.chunks(GRAD_CHUNK) {
            acc.accumulate_chunk(self, chunk);
        }
        let inv = 1.0 / inputs.len() as f64;
        let loss = acc.loss * inv;
        let mut grad = acc.into_flat();
        if want_grad {
            for g in grad.iter_mut() {
                *g *= inv;
            }
        }
        Ok((loss, grad))
    }
}

/// Per-worker gradient and loss accumulator.
struct GradAccum {
    loss: f64,
    want_grad: bool,
    gw1: Vec<f64>,
    gb1: Vec<f64>,
    gw2: Vec<f64>,
    gb2: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
    dy: Vec<f64>,
    dh: Vec<f64>,
}

impl GradAccum {
    fn new(model: &SurrogateModel, want_grad: bool) -> Self {
        let glen = |n: usize| if want_grad { vec![0.0; n] } else { Vec::new() };
        GradAccum {
            loss: 0.0,
            want_grad,
            gw1: glen(model.w1.len()),
            gb1: glen(model.b1.len()),
            gw2: glen(model.w2.len()),
            gb2: glen(model.b2.len()),
            hidden: vec![0.0; model.hidden_dim],
            out: vec![0.0; model.output_dim],
            dy: vec![0.0; model.output_dim],
            dh: vec![0.0; model.hidden_dim],
        }
    }

    fn accumulate(&mut self, model: &SurrogateModel, x: &[f64], t: &[f64]) {
        let p = model.input_dim;
        let h = model.hidden_dim;
        let d = model.output_dim;
        model.forward_into(x, &mut self.hidden, &mut self.out);

        let mut sample_loss = 0.0;
        for j in 0..d {
            let r = self.out[j] - t[j];
            sample_loss += r * r;
            self.dy[j] = 2.0 * r;
        }
        self.loss += sample_loss;
        if !self.want_grad {
            return;
        }

        // dW2[j,:] += dy_j * hidden ; dh = W2^T dy ; db2 += dy
        self.dh.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..d {
            let dyj = self.dy[j];
            axpy(dyj, &self.hidden, &mut self.gw2[j * h..(j + 1) * h]);
            axpy(dyj, &model.w2[j * h..(j + 1) * h], &mut self.dh);
            self.gb2[j] += dyj;
        }
        // Through tanh: dz = dh * (1 - hidden^2); dW1[i,:] += dz_i * x
        for i in 0..h {
            let dz = self.dh[i] * (1.0 - self.hidden[i] * self.hidden[i]);
            if dz != 0.0 {
                axpy(dz, x, &mut self.gw1[i * p..(i + 1) * p]);
            }
            self.gb1[i] += dz;
        }
    }

    fn merge(&mut self, other: &GradAccum) {
        self.loss += other.loss;
        if self.want_grad {
            for (a, b) in self.gw1.iter_mut().zip(&other.gw1) {
                *a += b;
            }
            for (a, b) in self.gb1.iter_mut().zip(&other.gb1) {
                *a += b;
            }
            for (a, b) in self.gw2.iter_mut().zip(&other.gw2) {
                *a += b;
            }
            for (a, b) in self.gb2.iter_mut().zip(&other.gb2) {
                *a += b;
            }
        }
    }

    fn into_flat(self) -> Vec<f64> {
        if !self.want_grad {
            return Vec::new();
        }
        let mut flat = Vec::with_capacity(
            self.gw1.len() + self.gb1.len() + self.gw2.len() + self.gb2.len(),
        );
        flat.extend_from_slice(&self.gw1);
        flat.extend_from_slice(&self.gb1);
        flat.extend_from_slice(&self.gw2);
        flat.extend_from_slice(&self.gb2);
        flat
    }
}

use crate::vecmath::{axpy, dot};

/// Samples per parallel gradient chunk. Fixed so the reduction order (and
/// therefore every bit of the result) does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Trains the surrogate on (corpus features -> target embeddings) pairs with
/// MSE loss and Adam. Mini-batches are reshuffled each epoch from the seeded
/// stream; gradient chunks fan out across threads and are merged in fixed
/// order, so training is bit-reproducible on one platform.
pub fn train_surrogate(
    corpus: &[InputFeature],
    targets: &EmbeddingSet,
    cfg: &TrainConfig,
) -> Result<SurrogateModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput);
    }
    if corpus.len() != targets.len() {
        return Err(Error::IdMismatch(format!(
            "corpus has {} inputs but targets has {}",
            corpus.len(),
            targets.len()
        )));
    }
    if corpus.len() < cfg.batch {
        return Err(Error::TooFewPoints {
            needed: cfg.batch,
            actual: corpus.len(),
        });
    }
    if cfg.epochs == 0 || cfg.batch == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidParameter(
            "epochs, batch and hidden must be >= 1".into(),
        ));
    }

    // Pair inputs with targets by id; order follows the corpus.
    let pairs: Vec<(&Vector, &Vector)> = corpus
        .iter()
        .map(|x| {
            let t = targets
                .get(&x.id)
                .ok_or_else(|| Error::IdMismatch(format!("target missing for id {}", x.id)))?;
            Ok((&x.features, t))
        })
        .collect::<Result<Vec<_>>>()?;

    let p = corpus[0].features.dim();
    let d = targets.dim();
    let mut model = SurrogateModel::init(p, cfg.hidden, d, cfg);
    let n_params = model.param_count();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(cfg.seed, 0x73687566));
    let mut first_epoch_loss = f64::NAN;
    let mut last_epoch_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_sq_err = 0.0;
        for batch_idx in order.chunks(cfg.batch) {
            let batch: Vec<(&Vector, &Vector)> = batch_idx.iter().map(|&i| pairs[i]).collect();

            // Parallel gradient over fixed-size chunks, merged in order.
            let partials: Vec<GradAccum> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut acc = GradAccum::new(&model, true);
                    for (x, t) in chunk {
                        acc.accumulate(&model, x.as_slice(), t.as_slice());
                    }
                    acc
                })
                .collect();
            let mut total = GradAccum::new(&model, true);
            for part in &partials {
                total.merge(part);
            }
            epoch_sq_err += total.loss;
            if !total.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }

            let inv_b = 1.0 / batch.len() as f64;
            let grad = total.into_flat();
            adam.t += 1;
            let bc1 = 1.0 - beta1.powi(adam.t as i32);
            let bc2 = 1.0 - beta2.powi(adam.t as i32);
            apply_adam(
                &mut model,
                &grad,
                &mut adam,
                cfg.lr,
                beta1,
                beta2,
                eps,
                bc1,
                bc2,
                inv_b,
            );
        }

        let epoch_loss = epoch_sq_err / pairs.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if epoch == 0 {
            first_epoch_loss = epoch_loss;
        }
        last_epoch_loss = epoch_loss;
    }

    model.meta.first_epoch_loss = first_epoch_loss;
    model.meta.final_loss = last_epoch_loss;
    if cfg.lr == 0.0 {
        model.meta.warning = Some("learning rate is zero; model equals its initialization".into());
    }
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn apply_adam(
    model: &mut SurrogateModel,
    grad: &[f64],
    adam: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
    grad_scale: f64,
) {
    let mut offset = 0usize;
    for arr_idx in 0..4 {
        let arr: &mut [f64] = match arr_idx {
            0 => &mut model.w1,
            1 => &mut model.b1,
            2 => &mut model.w2,
            _ => &mut model.b2,
        };
        for (i, w) in arr.iter_mut().enumerate() {
            let g = grad[offset + i] * grad_scale;
            let m = &mut adam.m[offset + i];
            let v = &mut adam.v[offset + i];
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset += arr.len();
    }
}

/// Forward pass of the surrogate. The output is intentionally not
/// renormalized; verification metrics normalize.
pub fn surrogate_encode(model: &SurrogateModel, x: &InputFeature) -> Result<Vector> {
    if x.features.dim() != model.input_dim {
        return Err(Error::DimMismatch {
            expected: model.input_dim,
            actual: x.features.dim(),
        });
    }
    let mut hidden = vec![0.0; model.hidden_dim];
    let mut out = vec![0.0; model.output_dim];
    model.forward_into(x.features.as_slice(), &mut hidden, &mut out);
    Vector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provider() -> SyntheticProvider {
        make_provider(1, 16, 32, 4).unwrap()
    }

    #[test]
    fn make_provider_is_deterministic() {
        let a = make_provider(5, 32, 256, 8).unwrap();
        let b = make_provider(5, 32, 256, 8).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = make_provider(6, 32, 256, 8).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn make_provider_guards_degenerate_configs() {
        assert!(matches!(make_provider(0, 3, 256, 8), Err(Error::BadDims(_))));
        assert!(matches!(make_provider(0, 32, 8, 8), Err(Error::BadDims(_))));
        assert!(matches!(make_provider(0, 32, 256, 1), Err(Error::BadDims(_))));
    }

    #[test]
    fn mixing_weights_are_skewed_simplex() {
        let p = make_provider(3, 32, 256, 8).unwrap();
        let w = p.mixing_weights();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min >= 3.0);
    }

    #[test]
    fn encode_is_deterministic_and_unit() {
        let p = provider();
        let corpus = sample_corpus(&p, 10, 0).unwrap();
        for x in &corpus {
            let a = encode(&p, x).unwrap();
            let b = encode(&p, x).unwrap();
            assert_eq!(a.as_slice(), b.as_slice());
            assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_is_locally_lipschitz() {
        let p = make_provider(1, DEFAULT_INPUT_DIM, DEFAULT_OUTPUT_DIM, DEFAULT_N_MODES).unwrap();
        let corpus = sample_corpus(&p, 200, 3).unwrap();
        for x in &corpus {
            let mut bumped = x.features.as_slice().to_vec();
            for c in bumped.iter_mut() {
                *c += 1e-9;
            }
            let x2 = InputFeature {
                id: x.id.clone(),
                features: Vector::new(bumped).unwrap(),
            };
            let c = vecmath::cosine(&encode(&p, x).unwrap(), &encode(&p, &x2).unwrap()).unwrap();
            assert!(c >= 0.999, "perturbed cosine {c}");
        }
    }

    #[test]
    fn mode_occupancy_is_non_uniform() {
        let p = make_provider(1, DEFAULT_INPUT_DIM, DEFAULT_OUTPUT_DIM, DEFAULT_N_MODES).unwrap();
        let corpus = sample_corpus(&p, 5000, 1).unwrap();
        let mut counts = vec![0usize; p.n_modes];
        for x in &corpus {
            counts[p.mode_of(&x.features)] += 1;
        }
        let max = *counts.iter().max().unwrap() as f64;
        let min = *counts.iter().min().unwrap().max(&1) as f64;
        assert!(
            max / min >= 3.0,
            "occupancy ratio {} too uniform: {counts:?}",
            max / min
        );
    }

    #[test]
    fn sample_corpus_contract() {
        let p = provider();
        assert!(matches!(
            sample_corpus(&p, 0, 0),
            Err(Error::InvalidParameter(_))
        ));
        let a = sample_corpus(&p, 50, 9).unwrap();
        let b = sample_corpus(&p, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].id, "x000001");
        assert_eq!(a[49].id, "x000050");
    }

    #[test]
    fn distinct_seeds_give_distinct_corpora() {
        let p = provider();
        let a = sample_corpus(&p, 300, 1).unwrap();
        let b = sample_corpus(&p, 300, 2).unwrap();
        let mut near_dupes = 0usize;
        for (x, y) in a.iter().zip(&b) {
            if vecmath::cosine(&x.features, &y.features).unwrap() > 0.99 {
                near_dupes += 1;
            }
        }
        assert!((near_dupes as f64) < 0.01 * a.len() as f64);
    }

    fn tiny_training_setup(seed: u64) -> (Vec<InputFeature>, EmbeddingSet, TrainConfig) {
        let p = provider();
        let corpus = sample_corpus(&p, 96, seed).unwrap();
        let targets = encode_corpus(&p, &corpus).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch: 32,
            hidden: 64,
            seed,
        };
        (corpus, targets, cfg)
    }

    #[test]
    fn training_reduces_loss_and_is_bit_reproducible() {
        let (corpus, targets, cfg) = tiny_training_setup(4);
        let m1 = train_surrogate(&corpus, &targets, &cfg).unwrap();
        let m2 = train_surrogate(&corpus, &targets, &cfg).unwrap();
        assert!(m1.meta.final_loss < m1.meta.first_epoch_loss);
        assert_eq!(m1.w1, m2.w1);
        assert_eq!(m1.w2, m2.w2);
        assert_eq!(m1.b1, m2.b1);
        assert_eq!(m1.b2, m2.b2);
    }

    #[test]
    fn zero_learning_rate_returns_init_with_warning() {
        let (corpus, targets, mut cfg) = tiny_training_setup(5);
        cfg.lr = 0.0;
        cfg.epochs = 3;
        let trained = train_surrogate(&corpus, &targets, &cfg).unwrap();
        let init = SurrogateModel::init(
            corpus[0].features.dim(),
            cfg.hidden,
            targets.dim(),
            &cfg,
        );
        assert_eq!(trained.w1, init.w1);
        assert_eq!(trained.w2, init.w2);
        assert!(trained.meta.warning.is_some());
        assert!((trained.meta.final_loss - trained.meta.first_epoch_loss).abs() < 1e-12);
    }

    #[test]
    fn surrogate_encode_is_deterministic_and_checks_dims() {
        let (corpus, targets, cfg) = tiny_training_setup(6);
        let model = train_surrogate(&corpus, &targets, &cfg).unwrap();
        let a = surrogate_encode(&model, &corpus[0]).unwrap();
        let b = surrogate_encode(&model, &corpus[0]).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let bad = InputFeature {
            id: "bad".into(),
            features: Vector::new(vec![0.0, 1.0]).unwrap(),
        };
        assert!(matches!(
            surrogate_encode(&model, &bad),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (corpus, targets, cfg) = tiny_training_setup(7);
        let mut model = train_surrogate(
            &corpus,
            &targets,
            &TrainConfig {
                epochs: 2,
                ..cfg.clone()
            },
        )
        .unwrap();
        let xs: Vec<Vector> = corpus.iter().take(8).map(|c| c.features.clone()).collect();
        let ts: Vec<Vector> = corpus
            .iter()
            .take(8)
            .map(|c| targets.get(&c.id).unwrap().clone())
            .collect();
        let (_, grad) = model.loss_and_grad_on(&xs, &ts, true).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let i = rng.random_range(0..model.param_count());
            let orig = model.param(i);
            let eps = 1e-5 * orig.abs().max(1.0);
            model.set_param(i, orig + eps);
            let (lp, _) = model.loss_and_grad_on(&xs, &ts, false).unwrap();
            model.set_param(i, orig - eps);
            let (lm, _) = model.loss_and_grad_on(&xs, &ts, false).unwrap();
            model.set_param(i, orig);
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = numeric.abs().max(grad[i].abs()).max(1e-8);
            let rel = (numeric - grad[i]).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {i}: analytic {} vs numeric {numeric} (rel {rel})",
                grad[i]
            );
        }
    }
}
