//! Post-hoc node selection: credible weight scores, Bayesian false discovery
//! rate thresholding and structural pruning of dead hidden nodes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::normal_cdf;
use crate::state::GlobalVariational;

/// `max(Q(W > 0), Q(W < 0)) = Phi(|m| / sqrt(var))` under `N(m, var)`.
pub fn weight_score(m: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::Domain(format!("weight variance must be positive, got {var}")));
    }
    Ok(normal_cdf(m.abs() / libm::sqrt(var)))
}

/// Estimated false discovery rate of selecting every score strictly above
/// `kappa`; zero when nothing is selected.
pub fn fdr_estimate(scores: &[f64], kappa: f64) -> f64 {
    let (num, count) = scores
        .iter()
        .filter(|&&q| q > kappa)
        .fold((0.0, 0usize), |(s, c), &q| (s + (1.0 - q), c + 1));
    if count == 0 {
        0.0
    } else {
        num / count as f64
    }
}

/// Kept weights and surviving hidden nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMask {
    /// Layer widths `[D_0, ..., D_{L+1}]`.
    pub dims: Vec<usize>,
    /// Per weight layer, row-major over `(d, j)`.
    pub keep: Vec<Vec<bool>>,
    /// Per hidden layer `1..=L`.
    pub node_alive: Vec<Vec<bool>>,
    /// Scores in the same layout as `keep`.
    pub scores: Vec<Vec<f64>>,
    /// Selection threshold: kept scores are all `>= kappa_hat`.
    pub kappa_hat: f64,
    pub target_alpha: f64,
}

impl SparseMask {
    /// Mask keeping everything.
    pub fn full(dims: &[usize]) -> Self {
        let keep = (1..dims.len()).map(|l| vec![true; dims[l] * dims[l - 1]]).collect();
        let node_alive = dims[1..dims.len() - 1].iter().map(|&w| vec![true; w]).collect();
        let scores = (1..dims.len()).map(|l| vec![1.0; dims[l] * dims[l - 1]]).collect();
        SparseMask { dims: dims.to_vec(), keep, node_alive, scores, kappa_hat: 0.5, target_alpha: 1.0 }
    }

    /// Whether weight `(l, d, j)` of weight layer `l` (1-based) is kept.
    pub fn is_kept(&self, l: usize, d: usize, j: usize) -> bool {
        self.keep[l - 1][d * self.dims[l - 1] + j]
    }

    pub fn kept_per_layer(&self) -> Vec<usize> {
        self.keep.iter().map(|k| k.iter().filter(|&&b| b).count()).collect()
    }

    pub fn kept_count(&self) -> usize {
        self.kept_per_layer().iter().sum()
    }

    pub fn total_weights(&self) -> usize {
        self.keep.iter().map(|k| k.len()).sum()
    }

    pub fn alive_per_layer(&self) -> Vec<usize> {
        self.node_alive.iter().map(|k| k.iter().filter(|&&b| b).count()).collect()
    }

    /// Copy of `global` with dropped weights replaced by a point mass at zero.
    pub fn apply(&self, global: &GlobalVariational) -> Result<GlobalVariational> {
        if global.dims() != self.dims {
            return Err(Error::Dimension(format!("mask for {:?}, model is {:?}", self.dims, global.dims())));
        }
        let mut out = global.clone();
        for (li, layer) in out.layers.iter_mut().enumerate() {
            let in_dim = self.dims[li];
            for (d, row) in layer.rows.iter_mut().enumerate() {
                for j in 0..in_dim {
                    if !self.keep[li][d * in_dim + j] {
                        row.m[j + 1] = 0.0;
                        for k in 0..row.m.len() {
                            row.b[(j + 1, k)] = 0.0;
                            row.b[(k, j + 1)] = 0.0;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Score of every weight in `global`, in mask layout.
pub fn weight_scores(global: &GlobalVariational) -> Result<Vec<Vec<f64>>> {
    global
        .layers
        .iter()
        .map(|layer| {
            let in_dim = layer.in_dim();
            let mut s = Vec::with_capacity(layer.out_dim() * in_dim);
            for row in &layer.rows {
                for j in 0..in_dim {
                    s.push(weight_score(row.m[j + 1], row.b[(j + 1, j + 1)])?);
                }
            }
            Ok(s)
        })
        .collect()
}

/// Drops every hidden node lacking a kept incoming or a kept outgoing weight,
/// together with all its remaining weights, until nothing changes. Returns the
/// surviving-node flags.
pub fn structural_pass(dims: &[usize], keep: &mut [Vec<bool>]) -> Vec<Vec<bool>> {
    let depth = dims.len() - 2;
    let mut alive: Vec<Vec<bool>> = dims[1..=depth].iter().map(|&w| vec![true; w]).collect();
    loop {
        let mut changed = false;
        for l in (1..=depth).rev() {
            for d in 0..dims[l] {
                if !alive[l - 1][d] {
                    continue;
                }
                let fan_in = dims[l - 1];
                let incoming = (0..fan_in).any(|j| keep[l - 1][d * fan_in + j]);
                let outgoing = (0..dims[l + 1]).any(|k| keep[l][k * dims[l] + d]);
                if !(incoming && outgoing) {
                    alive[l - 1][d] = false;
                    changed = true;
                    (0..fan_in).for_each(|j| keep[l - 1][d * fan_in + j] = false);
                    (0..dims[l + 1]).for_each(|k| keep[l][k * dims[l] + d] = false);
                }
            }
        }
        if !changed {
            return alive;
        }
    }
}

/// Threshold selection on precomputed scores followed by the structural pass.
///
/// Scores are ranked in decreasing order; the selection is the longest prefix,
/// taken in whole groups of equal scores, whose mean of `1 - Q` stays below
/// `alpha`. When even the top group fails, nothing is kept and `kappa_hat = 1`.
pub fn select_from_scores(dims: &[usize], scores: Vec<Vec<f64>>, alpha: f64) -> Result<SparseMask> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut flat: Vec<f64> = scores.iter().flatten().copied().collect();
    flat.sort_by(|a, b| b.total_cmp(a));
    let mut kappa_hat = 1.0;
    let mut sum = 0.0;
    let mut i = 0;
    while i < flat.len() {
        let q = flat[i];
        let mut j = i;
        while j < flat.len() && flat[j] == q {
            sum += 1.0 - flat[j];
            j += 1;
        }
        if sum / j as f64 >= alpha {
            break;
        }
        kappa_hat = q;
        i = j;
    }
    let selected_any = i > 0;
    let mut keep: Vec<Vec<bool>> =
        scores.iter().map(|s| s.iter().map(|&q| selected_any && q >= kappa_hat).collect()).collect();
    let node_alive = structural_pass(dims, &mut keep);
    Ok(SparseMask { dims: dims.to_vec(), keep, node_alive, scores, kappa_hat, target_alpha: alpha })
}

/// Node selection on a trained model at error rate `alpha`. Biases are never pruned.
pub fn select_nodes(global: &GlobalVariational, alpha: f64) -> Result<SparseMask> {
    select_from_scores(&global.dims(), weight_scores(global)?, alpha)
}
