use crate::error::{Error, Result};

/// Twice the Mann-Whitney U statistic (positives outranking negatives, ties
/// counted one half) together with the class sizes. Doubling keeps the
/// statistic integral.
pub fn twice_u(scores: &[f64], labels: &[bool]) -> Result<(u128, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC of NaN scores"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks (1-based) over positives.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share the midrank (i+1+j)/2.
        let mid2 = (i + 1 + j) as u128;
        let p = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += p * mid2;
        i = j;
    }
    let p = pos as u128;
    Ok((rank2_sum - p * (p + 1), pos, neg))
}

/// Area under the ROC curve by the rank definition.
pub fn compute_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (u2, pos, neg) = twice_u(scores, labels)?;
    Ok(u2 as f64 / (2 * pos as u128 * neg as u128) as f64)
}
