//! ROC-AUC with average-rank tie handling.

/// Area under the ROC curve for binary `labels` (0/1) and real `scores`.
///
/// Computed from the Mann-Whitney rank sum; tied scores share their average
/// rank, which credits each tied positive/negative pair with one half.
/// Returns `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // rank sums are kept doubled so that average ranks stay integral
    let mut pos_rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share (i + j + 2) / 2
        let avg_x2 = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        pos_rank_sum_x2 += avg_x2 * pos_in_group;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
    Some(u_x2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Mean of the defined per-task AUCs; `None` if no task could be scored.
pub fn macro_average(per_task: &[Option<f64>]) -> Option<f64> {
    let scored: Vec<f64> = per_task.iter().flatten().copied().collect();
    if scored.is_empty() {
        None
    } else {
        Some(scored.iter().sum::<f64>() / scored.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[1, 0]), Some(1.0));
        assert_eq!(roc_auc(&[0.2, 0.8, 0.6], &[1, 0, 1]), Some(0.0));
        assert_eq!(roc_auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]), Some(0.5));
        assert_eq!(roc_auc(&[0.3, 0.4], &[1, 1]), None);
    }

    #[test]
    fn macro_skips_undefined_tasks() {
        assert_eq!(macro_average(&[Some(1.0), None, Some(0.5)]), Some(0.75));
        assert_eq!(macro_average(&[None]), None);
    }
}
