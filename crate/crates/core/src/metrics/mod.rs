//! Accuracy-family, ranking and fairness metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics for one evaluated model. Metrics that were not computed are
/// omitted from the JSON rather than defaulted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub consistency: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gap_rms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gap_max: BTreeMap<String, f64>,
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Undefined("empty input".into()));
    }
    Ok(())
}

fn binary(labels: &[usize]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Label(format!("label {l} is not binary")));
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("labels contain a single class".into()));
    }
    Ok((pos, neg))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    same_len(preds.len(), labels.len())?;
    let hit = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hit as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class recall over classes `0..=max(label, pred)`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    same_len(preds.len(), labels.len())?;
    let k = 1 + preds.iter().chain(labels).copied().max().unwrap_or(0);
    let mut support = vec![0usize; k];
    let mut hit = vec![0usize; k];
    for (&p, &l) in preds.iter().zip(labels) {
        support[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    if let Some(c) = support.iter().position(|&s| s == 0) {
        return Err(Error::Undefined(format!("class {c} absent from labels")));
    }
    Ok(hit.iter().zip(&support).map(|(&h, &s)| h as f64 / s as f64).sum::<f64>() / k as f64)
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    let (pos, neg) = binary(labels)?;
    // Rank-sum with midranks for ties.
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Sum over descending score thresholds of (ΔRecall × Precision).
pub fn average_precision(scores: &[f64], labels: &[usize]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    let (pos, _) = binary(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        // Tied scores enter together at one threshold.
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

/// F1 of the rule `score >= 0.5`.
pub fn f1(scores: &[f64], labels: &[usize]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    binary(labels)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

/// Fraction of indices whose predicted class is unchanged.
pub fn consistency(original: &[usize], flipped: &[usize]) -> Result<f64> {
    accuracy(original, flipped)
}

/// Equalized-odds gaps between groups 0 and 1: returns
/// `(sqrt((ΔTPR² + ΔTNR²)/2), max(|ΔTPR|, |ΔTNR|))`.
pub fn gap_metrics(preds: &[usize], labels: &[usize], group: &[usize]) -> Result<(f64, f64)> {
    same_len(preds.len(), labels.len())?;
    same_len(preds.len(), group.len())?;
    // [group][label] -> (count, correct)
    let mut cells = [[(0usize, 0usize); 2]; 2];
    for ((&p, &l), &g) in preds.iter().zip(labels).zip(group) {
        if p > 1 || l > 1 || g > 1 {
            return Err(Error::Label(format!(
                "gap metrics need binary inputs, got pred {p}, label {l}, group {g}"
            )));
        }
        let c = &mut cells[g][l];
        c.0 += 1;
        c.1 += (p == l) as usize;
    }
    let mut rate = [[0.0; 2]; 2];
    for g in 0..2 {
        for l in 0..2 {
            let (n, k) = cells[g][l];
            if n == 0 {
                return Err(Error::Undefined(format!("empty cell: group {g}, label {l}")));
            }
            rate[g][l] = k as f64 / n as f64;
        }
    }
    let d_tpr = rate[0][1] - rate[1][1];
    let d_tnr = rate[0][0] - rate[1][0];
    Ok((
        ((d_tpr * d_tpr + d_tnr * d_tnr) / 2.0).sqrt(),
        d_tpr.abs().max(d_tnr.abs()),
    ))
}
