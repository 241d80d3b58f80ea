//! Ownership verification: group discrepancies and the one-sided two-sample
//! Kolmogorov-Smirnov test over cosine similarities to the suspicious
//! model's own rendering of the watermark target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{self, Vector};
use crate::watermark::WatermarkSecret;

/// Default significance threshold for the infringement verdict.
pub const DEFAULT_P_THRESHOLD: f64 = 0.05;

/// Evidence assembled from one verification run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub p_value: f64,
    pub delta_cos: f64,
    pub delta_l2: f64,
    pub ks_statistic: f64,
    pub n_backdoor: usize,
    pub n_benign: usize,
    pub verdict: bool,
    pub threshold: f64,
    pub per_sample_cos_backdoor: Vec<f64>,
    pub per_sample_cos_benign: Vec<f64>,
}

/// Report plus provenance, as serialized to disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportDocument {
    #[serde(flatten)]
    pub report: VerificationReport,
    pub metadata: ReportMetadata,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub secret_fingerprint: String,
    pub timestamp_unix: u64,
    pub attack_label: String,
}

impl ReportDocument {
    pub fn new(report: VerificationReport, secret: &WatermarkSecret, attack_label: &str) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ReportDocument {
            report,
            metadata: ReportMetadata {
                secret_fingerprint: secret.fingerprint(),
                timestamp_unix,
                attack_label: attack_label.to_string(),
            },
        }
    }

    pub const CSV_HEADER: &'static str =
        "attack,p_value,delta_cos,delta_l2,ks_statistic,n_backdoor,n_benign,verdict";

    /// One row matching [`Self::CSV_HEADER`]. Fields never contain commas.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{},{},{},{}",
            self.metadata.attack_label,
            self.report.p_value,
            self.report.delta_cos,
            self.report.delta_l2,
            self.report.ks_statistic,
            self.report.n_backdoor,
            self.report.n_benign,
            self.report.verdict
        )
    }
}

/// Mean cosine to `w_hat` over the backdoor group minus the benign group.
pub fn delta_cos(backdoor: &[Vector], benign: &[Vector], w_hat: &Vector) -> Result<f64> {
    group_mean_diff(backdoor, benign, w_hat, vecmath::cosine)
}

/// Mean normalized-L2 distance to `w_hat` over the backdoor group minus the
/// benign group. Negative values indicate backdoor samples sit closer.
pub fn delta_l2(backdoor: &[Vector], benign: &[Vector], w_hat: &Vector) -> Result<f64> {
    group_mean_diff(backdoor, benign, w_hat, vecmath::l2_unit_distance)
}

fn group_mean_diff(
    backdoor: &[Vector],
    benign: &[Vector],
    w_hat: &Vector,
    metric: fn(&Vector, &Vector) -> Result<f64>,
) -> Result<f64> {
    if backdoor.is_empty() || benign.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mean = |group: &[Vector]| -> Result<f64> {
        let mut acc = 0.0;
        for v in group {
            acc += metric(v, w_hat)?;
        }
        Ok(acc / group.len() as f64)
    };
    Ok(mean(backdoor)? - mean(benign)?)
}

/// One-sided two-sample KS test with the alternative "backdoor similarities
/// are stochastically larger". Returns the signed statistic
/// D = sup_t (F_benign(t) - F_backdoor(t)) clamped to >= 0 and the asymptotic
/// p-value exp(-2 D^2 mn/(m+n)) clamped to [0, 1].
pub fn ks_one_sided(backdoor_sims: &[f64], benign_sims: &[f64]) -> Result<(f64, f64)> {
    if backdoor_sims.is_empty() || benign_sims.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut b = backdoor_sims.to_vec();
    let mut n = benign_sims.to_vec();
    b.sort_by(|x, y| x.total_cmp(y));
    n.sort_by(|x, y| x.total_cmp(y));

    let (mut ib, mut in_) = (0usize, 0usize);
    let (mut cdf_b, mut cdf_n) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while ib < b.len() || in_ < n.len() {
        let t = match (b.get(ib), n.get(in_)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => break,
        };
        while ib < b.len() && b[ib] <= t {
            ib += 1;
        }
        while in_ < n.len() && n[in_] <= t {
            in_ += 1;
        }
        cdf_b = ib as f64 / b.len() as f64;
        cdf_n = in_ as f64 / n.len() as f64;
        let gap = cdf_n - cdf_b;
        if gap > d {
            d = gap;
        }
    }
    debug_assert!((cdf_b - 1.0).abs() < 1e-12 && (cdf_n - 1.0).abs() < 1e-12);

    let m = backdoor_sims.len() as f64;
    let nn = benign_sims.len() as f64;
    let p = (-2.0 * d * d * (m * nn) / (m + nn)).exp().clamp(0.0, 1.0);
    Ok((d, p))
}

/// Queries the suspicious model on both verification groups and the target
/// id, then assembles the full report. Cosines are computed against the
/// model's own rendering of the target, not the secret target itself.
/// Queries fan out in parallel; results are aggregated in id order so the
/// report does not depend on scheduling.
pub fn verify<F>(
    surrogate_query: F,
    secret: &WatermarkSecret,
    backdoor_ids: &[String],
    benign_ids: &[String],
) -> Result<VerificationReport>
where
    F: Fn(&str) -> Result<Vector> + Sync,
{
    verify_with_threshold(
        surrogate_query,
        secret,
        backdoor_ids,
        benign_ids,
        DEFAULT_P_THRESHOLD,
    )
}

/// [`verify`] with an explicit verdict threshold.
pub fn verify_with_threshold<F>(
    surrogate_query: F,
    secret: &WatermarkSecret,
    backdoor_ids: &[String],
    benign_ids: &[String],
    threshold: f64,
) -> Result<VerificationReport>
where
    F: Fn(&str) -> Result<Vector> + Sync,
{
    if backdoor_ids.is_empty() || benign_ids.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if let Some(shared) = backdoor_ids.iter().find(|id| benign_ids.contains(id)) {
        return Err(Error::IdMismatch(format!(
            "id {shared:?} appears in both verification groups"
        )));
    }

    let w_hat = surrogate_query(&secret.target_id)
        .map_err(|_| Error::QueryFailure(secret.target_id.clone()))?;

    let fetch = |ids: &[String]| -> Result<Vec<Vector>> {
        ids.par_iter()
            .map(|id| surrogate_query(id).map_err(|_| Error::QueryFailure(id.clone())))
            .collect()
    };
    let backdoor = fetch(backdoor_ids)?;
    let benign = fetch(benign_ids)?;

    let cos_of = |group: &[Vector]| -> Result<Vec<f64>> {
        group.iter().map(|v| vecmath::cosine(v, &w_hat)).collect()
    };
    let per_sample_cos_backdoor = cos_of(&backdoor)?;
    let per_sample_cos_benign = cos_of(&benign)?;

    let (ks_statistic, p_value) = ks_one_sided(&per_sample_cos_backdoor, &per_sample_cos_benign)?;
    let dc = delta_cos(&backdoor, &benign, &w_hat)?;
    let dl = delta_l2(&backdoor, &benign, &w_hat)?;

    Ok(VerificationReport {
        p_value,
        delta_cos: dc,
        delta_l2: dl,
        ks_statistic,
        n_backdoor: backdoor.len(),
        n_benign: benign.len(),
        verdict: p_value < threshold,
        threshold,
        per_sample_cos_backdoor,
        per_sample_cos_benign,
    })
}
