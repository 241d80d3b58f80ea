//! Dense 64-bit vector numerics shared by every other module: norms,
//! similarities, quantiles, k-means clustering, and principal components.
//!
//! All operations are pure functions over immutable inputs and are safe to
//! call from any number of threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-30;

/// A finite, dense vector of 64-bit floats with at least two components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector {
    components: Vec<f64>,
}

impl Vector {
    /// Builds a vector, rejecting non-finite components and dimensions < 2.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::InvalidDimension(components.len()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Vector { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.components
    }

    pub fn into_components(self) -> Vec<f64> {
        self.components
    }

    pub fn norm(&self) -> f64 {
        dot(&self.components, &self.components).sqrt()
    }

    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &Vector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(distance_slices(&self.components, &other.components))
    }

    pub(crate) fn scaled(&self, factor: f64) -> Vector {
        Vector {
            components: self.components.iter().map(|c| c * factor).collect(),
        }
    }

    pub(crate) fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub(crate) fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub(crate) fn dot_unchecked(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        dot(&self.components, &other.components)
    }

    /// Raw little-endian bytes of every component, in order. Used by
    /// persistence and fingerprinting.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.components.len() * 8);
        for c in &self.components {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.components
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.components[i]
    }
}

/// An orthonormal set of vectors sharing one dimensionality. May be empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentBasis {
    vectors: Vec<Vector>,
    dim: usize,
}

impl ComponentBasis {
    /// Validates pairwise orthogonality (dot products within 1e-8 of zero)
    /// and unit norms (within 1e-10 of one).
    pub fn new(vectors: Vec<Vector>, dim: usize) -> Result<Self> {
        for v in &vectors {
            if v.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if (v.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::DegenerateData(format!(
                    "basis vector norm {} is not 1",
                    v.norm()
                )));
            }
        }
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                let d = vectors[i].dot_unchecked(&vectors[j]);
                if d.abs() > 1e-8 {
                    return Err(Error::DegenerateData(format!(
                        "basis vectors {i} and {j} are not orthogonal (dot={d:e})"
                    )));
                }
            }
        }
        Ok(ComponentBasis { vectors, dim })
    }

    pub fn empty(dim: usize) -> Self {
        ComponentBasis {
            vectors: Vec::new(),
            dim,
        }
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Kernels. Eight accumulators so the compiler can keep wide FMA pipes busy.
// ---------------------------------------------------------------------------

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let (a8, a_tail) = a.split_at(a.len() - a.len() % 8);
    let (b8, b_tail) = b.split_at(a8.len());
    for (ca, cb) in a8.chunks_exact(8).zip(b8.chunks_exact(8)) {
        for lane in 0..8 {
            acc[lane] += ca[lane] * cb[lane];
        }
    }
    let tail: f64 = a_tail.iter().zip(b_tail).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + (acc[4] + acc[5]) + (acc[6] + acc[7]) + tail
}

/// y += alpha * x
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn distance_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

fn check_dims(u: &Vector, v: &Vector) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(Error::DimMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

/// Returns v / ||v||. The output norm is within 1e-12 of one.
pub fn normalize(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if n <= ZERO_NORM_EPS {
        return Err(Error::ZeroVector);
    }
    Ok(v.scaled(1.0 / n))
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    check_dims(u, v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu <= ZERO_NORM_EPS || nv <= ZERO_NORM_EPS {
        return Err(Error::ZeroVector);
    }
    Ok((u.dot_unchecked(v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// L2 distance between the normalized arguments; lies in [0, 2] and satisfies
/// dist^2 = 2 - 2*cosine within 1e-9.
pub fn l2_unit_distance(u: &Vector, v: &Vector) -> Result<f64> {
    check_dims(u, v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu <= ZERO_NORM_EPS || nv <= ZERO_NORM_EPS {
        return Err(Error::ZeroVector);
    }
    let mut acc = 0.0;
    for (a, b) in u.as_slice().iter().zip(v.as_slice()) {
        let d = a / nu - b / nv;
        acc += d * d;
    }
    Ok(acc.sqrt().min(2.0))
}

/// Lower empirical quantile: the ceil(rho*N)-th order statistic, so the
/// returned value is always an observed one and at least a rho-fraction of
/// the values are <= it.
pub fn quantile(values: &[f64], rho: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::RhoOutOfRange(rho));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let rank = ((rho * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

/// Output of [`kmeans`]: per-point cluster index plus centroids.
#[derive(Clone, Debug)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vector>,
}

/// Lloyd's iteration with k-means++ seeding. Deterministic for fixed inputs;
/// empty clusters are re-seeded from the point farthest from its centroid.
pub fn kmeans(
    points: &[Vector],
    n_clusters: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansResult> {
    if n_clusters == 0 {
        return Err(Error::InvalidParameter("n_clusters must be >= 1".into()));
    }
    if points.len() < n_clusters {
        return Err(Error::TooFewPoints {
            needed: n_clusters,
            actual: points.len(),
        });
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: p.dim(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, n_clusters, &mut rng);
    let mut assignments = vec![0usize; points.len()];

    for _ in 0..max_iters.max(1) {
        // Assignment step; ties go to the lowest cluster index.
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_distance(p.as_slice(), centroid.as_slice());
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        // Update step.
        let mut sums = vec![vec![0.0f64; dim]; n_clusters];
        let mut counts = vec![0usize; n_clusters];
        for (i, p) in points.iter().enumerate() {
            axpy(1.0, p.as_slice(), &mut sums[assignments[i]]);
            counts[assignments[i]] += 1;
        }
        for c in 0..n_clusters {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids[c] = Vector {
                    components: sums[c].iter().map(|s| s * inv).collect(),
                };
            } else {
                // Re-seed from the point farthest from its own centroid.
                let (mut far_i, mut far_d) = (0usize, -1.0f64);
                for (i, p) in points.iter().enumerate() {
                    let d = sq_distance(p.as_slice(), centroids[assignments[i]].as_slice());
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[c] = points[far_i].clone();
                assignments[far_i] = c;
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }

    // Final assignment so every centroid is the mean of its points.
    for (i, p) in points.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_distance(p.as_slice(), centroid.as_slice());
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignments[i] = best;
    }
    let mut sums = vec![vec![0.0f64; dim]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (i, p) in points.iter().enumerate() {
        axpy(1.0, p.as_slice(), &mut sums[assignments[i]]);
        counts[assignments[i]] += 1;
    }
    for c in 0..n_clusters {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            centroids[c] = Vector {
                components: sums[c].iter().map(|s| s * inv).collect(),
            };
        }
    }

    Ok(KmeansResult {
        assignments,
        centroids,
    })
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn plus_plus_seed(points: &[Vector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| sq_distance(p.as_slice(), points[first].as_slice()))
        .collect();

    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let next = if total <= ZERO_NORM_EPS {
            // All remaining mass is on already-chosen points; pick uniformly.
            rng.random_range(0..points.len())
        } else {
            let draw = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in min_d.iter().enumerate() {
                cum += d;
                if draw < cum {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_distance(p.as_slice(), points[next].as_slice());
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    centroids
}

// ---------------------------------------------------------------------------
// Principal components
// ---------------------------------------------------------------------------

const POWER_ITER_TOL: f64 = 1e-10;
const POWER_ITER_MAX: usize = 1000;

/// Top-n principal components of the mean-centered sample, by power
/// iteration with deflation. Components come back in descending eigenvalue
/// order with the sign fixed so the largest-magnitude coordinate is positive.
/// Returns fewer than n components when the remaining variance is
/// numerically zero (rank-deficient data).
pub fn top_principal_components(points: &[Vector], n: usize) -> Result<ComponentBasis> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            actual: points.len(),
        });
    }
    let dim = points[0].dim();
    if n > dim {
        return Err(Error::InvalidParameter(format!(
            "requested {n} components but dim is {dim}"
        )));
    }
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: p.dim(),
            });
        }
    }
    if n == 0 {
        return Ok(ComponentBasis::empty(dim));
    }

    let m = points.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for p in points {
        axpy(1.0, p.as_slice(), &mut mean);
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            p.as_slice()
                .iter()
                .zip(&mean)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();

    let cov = scatter_matrix(&centered, dim, 1.0 / (m - 1.0));
    power_iteration_basis(cov, dim, n)
}

/// Top-n principal directions of the *uncentered* second-moment matrix
/// (1/m) * sum x x^T. Unlike [`top_principal_components`] this keeps any
/// common (mean) direction in the extracted subspace.
pub fn principal_directions_uncentered(points: &[Vector], n: usize) -> Result<ComponentBasis> {
    if points.is_empty() {
        return Err(Error::TooFewPoints {
            needed: 1,
            actual: 0,
        });
    }
    let dim = points[0].dim();
    if n > dim {
        return Err(Error::InvalidParameter(format!(
            "requested {n} components but dim is {dim}"
        )));
    }
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: p.dim(),
            });
        }
    }
    if n == 0 {
        return Ok(ComponentBasis::empty(dim));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.as_slice().to_vec()).collect();
    let moment = scatter_matrix(&rows, dim, 1.0 / points.len() as f64);
    power_iteration_basis(moment, dim, n)
}

fn scatter_matrix(rows: &[Vec<f64>], dim: usize, scale: f64) -> Vec<f64> {
    let mut mat = vec![0.0f64; dim * dim];
    for row in rows {
        for i in 0..dim {
            let ri = row[i];
            if ri != 0.0 {
                axpy(ri, row, &mut mat[i * dim..(i + 1) * dim]);
            }
        }
    }
    for v in mat.iter_mut() {
        *v *= scale;
    }
    mat
}

fn power_iteration_basis(mut mat: Vec<f64>, dim: usize, n: usize) -> Result<ComponentBasis> {
    let initial_scale: f64 = mat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if initial_scale <= ZERO_NORM_EPS {
        return Err(Error::DegenerateData(
            "covariance is numerically zero".into(),
        ));
    }

    let mut components: Vec<Vector> = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e0_3779b9);
    for _ in 0..n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        // Orthogonalize the start against found components so deflation
        // residue cannot re-attract the iteration.
        gram_schmidt(&mut v, &components);
        let vn = dot(&v, &v).sqrt();
        if vn <= ZERO_NORM_EPS {
            break;
        }
        for x in v.iter_mut() {
            *x /= vn;
        }

        let mut converged = false;
        for _ in 0..POWER_ITER_MAX {
            let mut next = mat_vec(&mat, dim, &v);
            gram_schmidt(&mut next, &components);
            let norm = dot(&next, &next).sqrt();
            if norm <= initial_scale * 1e-12 {
                converged = false;
                break;
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            let delta = distance_slices(&next, &v);
            v = next;
            if delta < POWER_ITER_TOL {
                converged = true;
                break;
            }
        }

        let av = mat_vec(&mat, dim, &v);
        let eigenvalue = dot(&v, &av);
        if !converged && eigenvalue.abs() <= initial_scale * 1e-12 {
            break; // remaining variance is numerically zero
        }
        if eigenvalue <= initial_scale * 1e-14 {
            break;
        }

        // Sign rule: largest-magnitude coordinate positive.
        let mut idx = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[idx].abs() {
                idx = i;
            }
        }
        if v[idx] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }

        // Deflate: mat -= eigenvalue * v v^T
        for i in 0..dim {
            let vi = v[i];
            axpy(-eigenvalue * vi, &v, &mut mat[i * dim..(i + 1) * dim]);
        }

        let norm = dot(&v, &v).sqrt();
        components.push(Vector {
            components: v.iter().map(|x| x / norm).collect(),
        });
    }

    if components.is_empty() {
        return Err(Error::DegenerateData(
            "no principal component with nonzero variance".into(),
        ));
    }
    let dim_out = dim;
    ComponentBasis::new(components, dim_out)
}

fn gram_schmidt(v: &mut [f64], basis: &[Vector]) {
    for b in basis {
        let proj = dot(v, b.as_slice());
        axpy(-proj, b.as_slice(), v);
    }
}

fn mat_vec(mat: &[f64], dim: usize, v: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|i| dot(&mat[i * dim..(i + 1) * dim], v))
        .collect()
}

/// v minus its projection onto the basis span; the result is orthogonal to
/// every basis vector within 1e-9.
pub fn project_out(v: &Vector, basis: &ComponentBasis) -> Result<Vector> {
    if basis.is_empty() {
        return Ok(v.clone());
    }
    if v.dim() != basis.dim() {
        return Err(Error::DimMismatch {
            expected: basis.dim(),
            actual: v.dim(),
        });
    }
    let mut out = v.as_slice().to_vec();
    for b in basis.vectors() {
        let proj = dot(&out, b.as_slice());
        axpy(-proj, b.as_slice(), &mut out);
    }
    Ok(Vector { components: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(components: &[f64]) -> Vector {
        Vector::new(components.to_vec()).unwrap()
    }

    #[test]
    fn normalize_unit_is_identity() {
        let out = normalize(&v(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_three_four_five() {
        let out = normalize(&v(&[3.0, 4.0, 0.0])).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        assert!((out[1] - 0.8).abs() < 1e-15);
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_errors() {
        assert!(matches!(
            normalize(&v(&[0.0, 0.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn cosine_orthogonal_identity_antipodal() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[0.6, 0.8]), &v(&[0.6, 0.8])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn cosine_dim_mismatch() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn l2_unit_distance_cases() {
        let u = v(&[1.0, 0.0]);
        assert_eq!(l2_unit_distance(&u, &u).unwrap(), 0.0);
        let w = v(&[0.0, 1.0]);
        assert!((l2_unit_distance(&u, &w).unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
        let a = v(&[-1.0, 0.0]);
        assert!((l2_unit_distance(&u, &a).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_order_statistics() {
        let vals = [1.0, 2.0, 3.0, 4.0, 5.0];
        // ceil(0.2 * 5) = 1 -> first order statistic.
        assert_eq!(quantile(&vals, 0.2).unwrap(), 1.0);
        assert_eq!(quantile(&[7.0], 0.5).unwrap(), 7.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.999).unwrap(), 4.0);
    }

    #[test]
    fn quantile_rejects_bad_inputs() {
        assert!(matches!(quantile(&[], 0.5), Err(Error::EmptyInput)));
        assert!(matches!(
            quantile(&[1.0], 0.0),
            Err(Error::RhoOutOfRange(_))
        ));
        assert!(matches!(
            quantile(&[1.0], 1.0),
            Err(Error::RhoOutOfRange(_))
        ));
        assert!(matches!(
            quantile(&[f64::NAN, 1.0], 0.5),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn kmeans_square_corners() {
        let pts = vec![
            v(&[0.0, 0.0]),
            v(&[0.0, 10.0]),
            v(&[10.0, 0.0]),
            v(&[10.0, 10.0]),
        ];
        let res = kmeans(&pts, 4, 50, 3).unwrap();
        // Each point its own cluster; centroids equal points.
        let mut seen = res.assignments.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(&res.centroids[res.assignments[i]], p);
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts = vec![v(&[0.0, 0.0]), v(&[2.0, 0.0]), v(&[1.0, 3.0])];
        let res = kmeans(&pts, 1, 10, 0).unwrap();
        assert!((res.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((res.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    // Brute-force oracle: enumerate every 2-partition and minimize
    // within-cluster SSE.
    fn best_two_partition_sse(points: &[Vector]) -> Vec<usize> {
        let n = points.len();
        let mut best_sse = f64::INFINITY;
        let mut best = vec![0usize; n];
        for mask in 1..(1u32 << n) - 1 {
            let (mut sum_a, mut sum_b) = (vec![0.0; points[0].dim()], vec![0.0; points[0].dim()]);
            let (mut na, mut nb) = (0usize, 0usize);
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    axpy(1.0, points[i].as_slice(), &mut sum_a);
                    na += 1;
                } else {
                    axpy(1.0, points[i].as_slice(), &mut sum_b);
                    nb += 1;
                }
            }
            let mean_a: Vec<f64> = sum_a.iter().map(|s| s / na as f64).collect();
            let mean_b: Vec<f64> = sum_b.iter().map(|s| s / nb as f64).collect();
            let mut sse = 0.0;
            for i in 0..n {
                let m = if mask & (1 << i) != 0 { &mean_a } else { &mean_b };
                sse += sq_distance(points[i].as_slice(), m);
            }
            if sse < best_sse {
                best_sse = sse;
                best = (0..n)
                    .map(|i| if mask & (1 << i) != 0 { 0 } else { 1 })
                    .collect();
            }
        }
        best
    }

    #[test]
    fn kmeans_matches_exhaustive_two_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = Vec::new();
        for _ in 0..6 {
            pts.push(v(&[
                rng.random::<f64>() * 0.5,
                rng.random::<f64>() * 0.5 + 0.1,
            ]));
        }
        for _ in 0..6 {
            pts.push(v(&[
                rng.random::<f64>() * 0.5 + 8.0,
                rng.random::<f64>() * 0.5 + 8.0,
            ]));
        }
        let oracle = best_two_partition_sse(&pts);
        let res = kmeans(&pts, 2, 100, 5).unwrap();
        // Same partition up to label swap.
        let direct: bool = oracle == res.assignments;
        let swapped: bool = oracle
            .iter()
            .zip(&res.assignments)
            .all(|(a, b)| *a == 1 - *b);
        assert!(direct || swapped, "kmeans disagrees with SSE oracle");
    }

    #[test]
    fn kmeans_two_blobs_match_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        for _ in 0..20 {
            pts.push(v(&[rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]));
        }
        for _ in 0..20 {
            pts.push(v(&[
                rng.random::<f64>() - 0.5 + 20.0,
                rng.random::<f64>() - 0.5 + 20.0,
            ]));
        }
        let res = kmeans(&pts, 2, 100, 1).unwrap();
        let first = res.assignments[0];
        assert!(res.assignments[..20].iter().all(|&a| a == first));
        assert!(res.assignments[20..].iter().all(|&a| a != first));
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vector> = (0..40)
            .map(|_| v(&[rng.random(), rng.random(), rng.random()]))
            .collect();
        let a = kmeans(&pts, 5, 60, 42).unwrap();
        let b = kmeans(&pts, 5, 60, 42).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn pca_line_through_origin() {
        let pts: Vec<Vector> = (-3..=3)
            .map(|i| v(&[i as f64 * 2.0, i as f64 * 1.0, i as f64 * -0.5]))
            .collect();
        let basis = top_principal_components(&pts, 1).unwrap();
        assert_eq!(basis.len(), 1);
        let dir = normalize(&v(&[2.0, 1.0, -0.5])).unwrap();
        let c = cosine(&basis.vectors()[0], &dir).unwrap().abs();
        assert!(c > 1.0 - 1e-9, "component not parallel to line: cos={c}");
        // Sign rule: largest-magnitude coordinate positive.
        assert!(basis.vectors()[0][0] > 0.0);
    }

    #[test]
    fn pca_zero_components_is_empty() {
        let pts = vec![v(&[1.0, 2.0]), v(&[3.0, 4.0])];
        let basis = top_principal_components(&pts, 0).unwrap();
        assert!(basis.is_empty());
    }

    #[test]
    fn pca_degenerate_data_errors() {
        let pts = vec![v(&[1.0, 1.0]); 5];
        assert!(matches!(
            top_principal_components(&pts, 1),
            Err(Error::DegenerateData(_))
        ));
    }

    // Jacobi rotation eigensolver: independent oracle for small dense
    // symmetric matrices.
    pub(crate) fn jacobi_eigen(mat: &[f64], dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut a = mat.to_vec();
        let mut vecs = vec![0.0f64; dim * dim];
        for i in 0..dim {
            vecs[i * dim + i] = 1.0;
        }
        for _sweep in 0..200 {
            let mut off = 0.0;
            for p in 0..dim {
                for q in (p + 1)..dim {
                    off += a[p * dim + q] * a[p * dim + q];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..dim {
                for q in (p + 1)..dim {
                    let apq = a[p * dim + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a[p * dim + p];
                    let aqq = a[q * dim + q];
                    let theta = 0.5 * (aqq - app) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..dim {
                        let akp = a[k * dim + p];
                        let akq = a[k * dim + q];
                        a[k * dim + p] = c * akp - s * akq;
                        a[k * dim + q] = s * akp + c * akq;
                    }
                    for k in 0..dim {
                        let apk = a[p * dim + k];
                        let aqk = a[q * dim + k];
                        a[p * dim + k] = c * apk - s * aqk;
                        a[q * dim + k] = s * apk + c * aqk;
                    }
                    for k in 0..dim {
                        let vkp = vecs[k * dim + p];
                        let vkq = vecs[k * dim + q];
                        vecs[k * dim + p] = c * vkp - s * vkq;
                        vecs[k * dim + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..dim)
            .map(|j| {
                (
                    a[j * dim + j],
                    (0..dim).map(|i| vecs[i * dim + j]).collect(),
                )
            })
            .collect();
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
        (
            pairs.iter().map(|p| p.0).collect(),
            pairs.into_iter().map(|p| p.1).collect(),
        )
    }

    #[test]
    fn pca_matches_jacobi_on_anisotropic_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sds = [3.0, 1.0, 0.1];
        let pts: Vec<Vector> = (0..800)
            .map(|_| {
                let g = |rng: &mut ChaCha8Rng| {
                    // Box-Muller
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                };
                v(&[g(&mut rng) * sds[0], g(&mut rng) * sds[1], g(&mut rng) * sds[2]])
            })
            .collect();

        let basis = top_principal_components(&pts, 2).unwrap();

        // Oracle: exact covariance eigendecomposition via Jacobi rotations.
        let m = pts.len() as f64;
        let mut mean = [0.0f64; 3];
        for p in &pts {
            for i in 0..3 {
                mean[i] += p[i];
            }
        }
        for x in mean.iter_mut() {
            *x /= m;
        }
        let mut cov = vec![0.0f64; 9];
        for p in &pts {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i * 3 + j] += (p[i] - mean[i]) * (p[j] - mean[j]);
                }
            }
        }
        for x in cov.iter_mut() {
            *x /= m - 1.0;
        }
        let (_vals, vecs) = jacobi_eigen(&cov, 3);

        for (k, b) in basis.vectors().iter().enumerate() {
            let oracle = Vector::new(vecs[k].clone()).unwrap();
            let c = cosine(b, &oracle).unwrap().abs();
            let angle = c.acos().to_degrees();
            assert!(angle < 5.0, "component {k} off by {angle} degrees");
        }
    }

    #[test]
    fn project_out_cases() {
        let e1 = v(&[1.0, 0.0, 0.0]);
        let basis = ComponentBasis::new(vec![e1.clone()], 3).unwrap();
        let out = project_out(&v(&[1.0, 1.0, 0.0]), &basis).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 1.0, 0.0]);

        let empty = ComponentBasis::empty(3);
        let orig = v(&[1.0, 2.0, 3.0]);
        assert_eq!(project_out(&orig, &empty).unwrap(), orig);

        let in_span = project_out(&v(&[2.5, 0.0, 0.0]), &basis).unwrap();
        assert!(in_span.norm() < 1e-12);
    }

    #[test]
    fn full_rank_pca_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vector> = (0..50)
            .map(|_| {
                v(&[
                    rng.random::<f64>() * 4.0,
                    rng.random::<f64>() * 2.0,
                    rng.random::<f64>(),
                    rng.random::<f64>() * 0.3,
                ])
            })
            .collect();
        let basis = top_principal_components(&pts, 4).unwrap();
        assert_eq!(basis.len(), 4);

        let m = pts.len() as f64;
        let mut mean = vec![0.0f64; 4];
        for p in &pts {
            axpy(1.0, p.as_slice(), &mut mean);
        }
        for x in mean.iter_mut() {
            *x /= m;
        }
        for p in &pts {
            let centered: Vec<f64> = p.as_slice().iter().zip(&mean).map(|(a, b)| a - b).collect();
            let mut recon = vec![0.0f64; 4];
            for b in basis.vectors() {
                let coeff = dot(&centered, b.as_slice());
                axpy(coeff, b.as_slice(), &mut recon);
            }
            let err = distance_slices(&recon, &centered);
            let scale = dot(&centered, &centered).sqrt().max(1e-12);
            assert!(err / scale < 1e-6, "reconstruction err {err} scale {scale}");
        }
    }

    proptest! {
        #[test]
        fn dist_sq_is_two_minus_two_cos(
            pair in (3usize..8).prop_flat_map(|n| (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )),
        ) {
            let (a, b) = pair;
            let u = Vector::new(a).unwrap();
            let w = Vector::new(b).unwrap();
            prop_assume!(u.norm() > 1e-6 && w.norm() > 1e-6);
            let d = l2_unit_distance(&u, &w).unwrap();
            let c = cosine(&u, &w).unwrap();
            prop_assert!((d * d - (2.0 - 2.0 * c)).abs() < 1e-9);
        }

        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            s in 0.001f64..1000.0,
        ) {
            let u = Vector::new(a).unwrap();
            let w = Vector::new(b).unwrap();
            prop_assume!(u.norm() > 1e-6 && w.norm() > 1e-6);
            let c1 = cosine(&u, &w).unwrap();
            let c2 = cosine(&u.scaled(s), &w).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }

        #[test]
        fn quantile_is_member_and_covers(
            vals in proptest::collection::vec(-100.0f64..100.0, 1..60),
            rho in 0.01f64..0.99,
        ) {
            let q = quantile(&vals, rho).unwrap();
            prop_assert!(vals.contains(&q));
            let below = vals.iter().filter(|v| **v <= q).count();
            prop_assert!(below as f64 >= rho * vals.len() as f64 - 1e-9);
        }

        #[test]
        fn project_out_is_idempotent(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let x = Vector::new(a).unwrap();
            let pts = vec![
                Vector::new(vec![1.0, 0.4, 0.0, 0.0]).unwrap(),
                Vector::new(vec![-1.0, 0.2, 0.1, 0.0]).unwrap(),
                Vector::new(vec![0.5, -0.8, 0.05, 0.0]).unwrap(),
                Vector::new(vec![0.1, 0.9, -0.02, 0.0]).unwrap(),
            ];
            let basis = top_principal_components(&pts, 2).unwrap();
            let once = project_out(&x, &basis).unwrap();
            let twice = project_out(&once, &basis).unwrap();
            let d = distance_slices(once.as_slice(), twice.as_slice());
            prop_assert!(d < 1e-9);
            for b in basis.vectors() {
                prop_assert!(once.dot_unchecked(b).abs() < 1e-9);
            }
        }
    }
}
