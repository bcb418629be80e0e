//! Independent oracles shared by the integration suites.
//!
//! Everything here recomputes expected values from first principles
//! (exhaustive enumeration, scalar arithmetic, dynamic programming written
//! from the definitions) and must stay independent of the library's
//! implementation paths.

#![allow(dead_code)]

use kws::tensor::Tensor;

/// Remove repeats, then blanks: the CTC collapse of an alignment path.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Softmax per row, plain arithmetic.
pub fn softmax_rows_oracle(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Total probability of a label sequence by enumerating every C^T alignment
/// path and summing those whose collapse equals `labels`. Only viable for
/// tiny shapes.
pub fn ctc_prob_brute_force(logits: &Tensor, labels: &[usize], blank: usize) -> f64 {
    let probs = softmax_rows_oracle(logits);
    let (t_len, classes) = (logits.rows(), logits.cols());
    let mut total = 0.0;
    let n_paths = classes.pow(t_len as u32);
    for code in 0..n_paths {
        let mut path = Vec::with_capacity(t_len);
        let mut c = code;
        for _ in 0..t_len {
            path.push(c % classes);
            c /= classes;
        }
        if collapse(&path, blank) == labels {
            total += path.iter().enumerate().map(|(t, &k)| probs[t][k]).product::<f64>();
        }
    }
    total
}

/// Every distinct collapsed label sequence reachable from a `T×C` grid.
pub fn all_label_sequences(t_len: usize, classes: usize, blank: usize) -> Vec<Vec<usize>> {
    let mut seen = std::collections::BTreeSet::new();
    let n_paths = classes.pow(t_len as u32);
    for code in 0..n_paths {
        let mut path = Vec::with_capacity(t_len);
        let mut c = code;
        for _ in 0..t_len {
            path.push(c % classes);
            c /= classes;
        }
        seen.insert(collapse(&path, blank));
    }
    seen.into_iter().collect()
}

/// One LSTM cell step in scalar arithmetic, gate order (i, f, g, o).
/// `wx` is `d×4u` row-major, `wh` is `u×4u`, `b` is `4u`.
pub fn lstm_step_oracle(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    wx: &[f64],
    wh: &[f64],
    b: &[f64],
    units: usize,
) -> (Vec<f64>, Vec<f64>) {
    let four_u = 4 * units;
    let mut gates = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..four_u {
            gates[j] += xi * wx[i * four_u + j];
        }
    }
    for (i, &hi) in h.iter().enumerate() {
        for j in 0..four_u {
            gates[j] += hi * wh[i * four_u + j];
        }
    }
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut h_next = vec![0.0; units];
    let mut c_next = vec![0.0; units];
    for u in 0..units {
        let i_g = sigmoid(gates[u]);
        let f_g = sigmoid(gates[units + u]);
        let g_g = gates[2 * units + u].tanh();
        let o_g = sigmoid(gates[3 * units + u]);
        c_next[u] = f_g * c[u] + i_g * g_g;
        h_next[u] = o_g * c_next[u].tanh();
    }
    (h_next, c_next)
}

/// Subsequence DTW cost of aligning `template` to the best-matching segment
/// of `utterance` (free start and end on the utterance axis), normalized by
/// template length. Lower = better match.
pub fn dtw_subsequence_cost(template: &Tensor, utterance: &Tensor) -> f64 {
    let (n, m) = (template.rows(), utterance.rows());
    let dist = |i: usize, j: usize| -> f64 {
        template
            .row(i)
            .iter()
            .zip(utterance.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut prev = vec![0.0; m];
    for j in 0..m {
        prev[j] = dist(0, j); // free start anywhere in the utterance
    }
    let mut cur = vec![0.0; m];
    for i in 1..n {
        for j in 0..m {
            let mut best = prev[j];
            if j > 0 {
                best = best.min(prev[j - 1]).min(cur[j - 1]);
            }
            cur[j] = dist(i, j) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev.iter().cloned().fold(f64::INFINITY, f64::min) / n as f64
}

/// Area under the ROC curve by the rank statistic (ties count half).
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos_scores {
        for &n in neg_scores {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos_scores.len() as f64 * neg_scores.len() as f64)
}
