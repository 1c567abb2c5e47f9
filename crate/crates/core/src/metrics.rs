//! Threshold-free detection metrics. Higher score means more likely OOD;
//! OOD samples are the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{NodiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split_name: String,
    pub auroc: f64,
    pub fpr_at_95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(NodiError::Metric(format!(
            "need nonempty score lists, got {} ID and {} OOD",
            id.len(),
            ood.len()
        )));
    }
    if id.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(NodiError::Metric("non-finite score".into()));
    }
    Ok(())
}

/// `P(ood > id) + ½·P(ood = id)`, via midranks of the pooled sample.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of OOD ranks, ties sharing the average rank. Ranks are doubled to
    // stay in integers.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j, midrank (i+1+j)/2
        let twice_mid = (i + 1 + j) as u128;
        let positives = pooled[i..j].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j;
    }
    let n_ood = ood_scores.len() as u128;
    let n_id = id_scores.len() as u128;
    // Mann-Whitney U for the OOD sample, doubled
    let twice_u = twice_rank_sum - n_ood * (n_ood + 1);
    Ok(twice_u as f64 / (2 * n_ood * n_id) as f64)
}

/// FPR on ID samples at the largest threshold whose OOD true-positive rate
/// reaches `tpr_target`. A sample is flagged when `score >= threshold`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(NodiError::Metric(format!("tpr target {tpr_target} outside (0, 1]")));
    }
    let mut ood = ood_scores.to_vec();
    ood.sort_by(|a, b| b.total_cmp(a));
    let n = ood.len();
    // smallest k with k/n >= target; the epsilon absorbs 0.95·n round-off
    let k = ((tpr_target * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let threshold = ood[k - 1];
    let flagged = id_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(flagged as f64 / id_scores.len() as f64)
}

pub fn report(split_name: &str, id_scores: &[f64], ood_scores: &[f64]) -> Result<MetricsReport> {
    report_at(split_name, id_scores, ood_scores, 0.95)
}

pub fn report_at(split_name: &str, id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        split_name: split_name.to_string(),
        auroc: auroc(id_scores, ood_scores)?,
        fpr_at_95: fpr_at_tpr(id_scores, ood_scores, tpr_target)?,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
    })
}
