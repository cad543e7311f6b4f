//! Scalar reference evaluation of the importance-aware loss.
//!
//! Deliberately shares nothing with the production path: class ranks come
//! from a linear scan of the group lists, matrix cells are derived inline and
//! every term is written out per pixel as nested loops.

use crate::hierarchy::ImportanceHierarchy;
use crate::maps::{LabelMap, ProbMap};

use super::ClassWeights;

pub fn naive_loss_oracle(
    prob: &ProbMap,
    labels: &LabelMap,
    hierarchy: &ImportanceHierarchy,
    weights: &ClassWeights,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let (batch, height, width, classes) = prob.dims();
    let groups = hierarchy.groups();
    let num_groups = groups.len();
    let data = prob.data();

    let rank_lookup = |class: u32| -> usize {
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                if m == class {
                    return g + 1;
                }
            }
        }
        0
    };

    // Group-split weighted cross-entropy.
    let mut ce = vec![0.0f64; num_groups + 1];
    let mut scored = 0.0f64;
    for b in 0..batch {
        for i in 0..height {
            for j in 0..width {
                let y = labels.get(b, i, j);
                if Some(y) == hierarchy.ignore_id() {
                    continue;
                }
                scored += 1.0;
                let offset = ((b * height + i) * width + j) * classes;
                let mut term = 0.0;
                for c in 0..classes {
                    let q = if c as u32 == y { 1.0 } else { 0.0 };
                    if q != 0.0 {
                        let p = if data[offset + c] < 1e-12 { 1e-12 } else { data[offset + c] };
                        term += weights.weights()[c] * q * p.ln();
                    }
                }
                ce[rank_lookup(y)] -= term;
            }
        }
    }
    if scored > 0.0 {
        for v in ce.iter_mut() {
            *v /= scored;
        }
    }

    // Dynamic weights f_2..f_G from matrices M_1..M_{G-1}.
    let mut f = vec![0.0f64; num_groups + 1];
    for t in 1..num_groups {
        let mut sum = 0.0;
        let mut norm = 0.0;
        for b in 0..batch {
            for i in 0..height {
                for j in 0..width {
                    let y = labels.get(b, i, j);
                    if Some(y) == hierarchy.ignore_id() {
                        continue;
                    }
                    let r = rank_lookup(y);
                    let (m, care) = if r < t {
                        (0.0, 0.0)
                    } else if r == t {
                        (0.0, 1.0)
                    } else {
                        (1.0, 1.0)
                    };
                    if r >= t {
                        norm += 1.0;
                    }
                    let p_c = data[((b * height + i) * width + j) * classes + y as usize];
                    let bracket = (m + lambda).powf(0.5) * (p_c - m) * care;
                    sum += bracket * bracket;
                }
            }
        }
        f[t + 1] = if norm > 0.0 { sum / norm } else { 0.0 };
    }

    let mut total = 0.0;
    for g in 1..=num_groups {
        let mut coeff = 1.0;
        for ft in f.iter().take(g + 1).skip(2) {
            coeff *= ft + alpha;
        }
        total += coeff * ce[g];
    }
    total
}
