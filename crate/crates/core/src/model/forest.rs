//! Random-forest regression: bootstrap ensembles of variance-reduction
//! trees with random feature subsets at each split.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureRow, ModelError};

const CORE: [&str; 4] = ["dist_center_m", "size_sqm", "year_built", "nfeatures"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `⌈p/3⌉`.
    pub mtry: Option<usize>,
    /// Nodes smaller than this are not split.
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_node_size: 5,
            max_depth: None,
        }
    }
}

/// Maps a feature row to the forest's numeric inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureEncoder {
    /// Distance, size, year built and amenity count.
    Simple,
    /// Adds rooms (−1 when missing), one indicator per amenity and a one-hot
    /// postal code over the training levels.
    Extended { n_amenities: usize, plz_levels: Vec<String> },
}

impl FeatureEncoder {
    pub fn extended(rows: &[FeatureRow]) -> Self {
        let mut plz_levels: Vec<String> = rows.iter().filter_map(|r| r.plz.clone()).collect();
        plz_levels.sort();
        plz_levels.dedup();
        FeatureEncoder::Extended {
            n_amenities: rows.first().map_or(0, |r| r.amenities.len()),
            plz_levels,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = CORE.iter().map(|s| s.to_string()).collect();
        if let FeatureEncoder::Extended { n_amenities, plz_levels } = self {
            out.push("rooms".into());
            out.extend((0..*n_amenities).map(|i| format!("amenity:{i}")));
            out.extend(plz_levels.iter().map(|p| format!("plz:{p}")));
        }
        out
    }

    pub fn encode(&self, row: &FeatureRow) -> Vec<f64> {
        let mut out = vec![row.dist_center_m, row.size_sqm, row.year_built, row.nfeatures as f64];
        if let FeatureEncoder::Extended { n_amenities, plz_levels } = self {
            out.push(row.rooms.unwrap_or(-1.0));
            out.extend((0..*n_amenities).map(|i| match row.amenities.get(i) {
                Some(true) => 1.0,
                _ => 0.0,
            }));
            out.extend(plz_levels.iter().map(|p| if row.plz.as_ref() == Some(p) { 1.0 } else { 0.0 }));
        }
        out
    }
}

/// Flat tree node; `left == 0` marks a leaf (the root is never a child).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.left == 0 {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.left == 0 {
                0
            } else {
                1 + go(t, n.left as usize).max(go(t, n.right as usize))
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub encoder: FeatureEncoder,
    pub seed: u64,
    pub trees: Vec<Tree>,
    pub oob_rmse: Option<f64>,
    pub train_rmse: f64,
    pub n_train: usize,
}

impl ForestModel {
    pub fn predict(&self, row: &FeatureRow) -> f64 {
        let x = self.encoder.encode(row);
        self.predict_encoded(&x)
    }

    pub fn predict_encoded(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    mtry: usize,
    min_node: usize,
    max_depth: usize,
}

impl Builder<'_> {
    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng, nodes: &mut Vec<TreeNode>) -> u32 {
        let me = nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        nodes.push(TreeNode {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: mean,
        });
        if idx.len() < self.min_node || depth >= self.max_depth {
            return me as u32;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return me as u32;
        };
        let mut lo = 0;
        for k in 0..idx.len() {
            if self.x[idx[k]][feature] <= threshold {
                idx.swap(lo, k);
                lo += 1;
            }
        }
        let (l, r) = idx.split_at_mut(lo);
        let left = self.grow(l, depth + 1, rng, nodes);
        let right = self.grow(r, depth + 1, rng, nodes);
        nodes[me] = TreeNode {
            feature: feature as u32,
            threshold,
            left,
            right,
            value: mean,
        };
        me as u32
    }

    /// Largest reduction in squared error; ties go to the lowest feature,
    /// then the lowest threshold.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let p = self.x[0].len();
        let mut feats = sample(rng, p, self.mtry).into_vec();
        feats.sort_unstable();
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / n;
        let mut best: Option<(usize, f64)> = None;
        let mut best_gain = 1e-12 * (1.0 + base.abs());
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(idx.len());
        for f in feats {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 0..pairs.len() - 1 {
                left += pairs[k].1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right = total - left;
                let gain = left * left / nl + right * right / (n - nl) - base;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, 0.5 * (pairs[k].0 + pairs[k + 1].0)));
                }
            }
        }
        best
    }
}

/// Trees are grown in parallel; tree `t` draws from its own stream of the
/// seeded generator, so results do not depend on the thread count.
pub fn fit_random_forest(
    rows: &[FeatureRow],
    encoder: FeatureEncoder,
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::Validation("no training rows".into()));
    }
    if params.n_trees == 0 || params.min_node_size == 0 {
        return Err(ModelError::Validation("n_trees and min_node_size must be positive".into()));
    }
    if let Some(r) = rows.iter().find(|r| !r.target.is_finite()) {
        return Err(ModelError::Validation(format!("row {}: non-finite target {}", r.id, r.target)));
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| encoder.encode(r)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.target).collect();
    let p = x[0].len();
    let mtry = params.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p);
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("constant target {}: forest is degenerate", y[0]);
    }
    let builder = Builder {
        x: &x,
        y: &y,
        mtry,
        min_node: params.min_node_size,
        max_depth: params.max_depth.unwrap_or(usize::MAX),
    };
    let n = rows.len();
    let grown: Vec<(Tree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut counts = vec![0u32; n];
            let mut idx: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    counts[i] += 1;
                    i
                })
                .collect();
            let mut nodes = Vec::new();
            builder.grow(&mut idx, 0, &mut rng, &mut nodes);
            (Tree { nodes }, counts)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_cnt = vec![0usize; n];
    for (tree, counts) in &grown {
        for i in 0..n {
            if counts[i] == 0 {
                oob_sum[i] += tree.predict(&x[i]);
                oob_cnt[i] += 1;
            }
        }
    }
    let oob: Vec<f64> = (0..n)
        .filter(|&i| oob_cnt[i] > 0)
        .map(|i| (oob_sum[i] / oob_cnt[i] as f64 - y[i]).powi(2))
        .collect();
    let oob_rmse = (!oob.is_empty()).then(|| (oob.iter().sum::<f64>() / oob.len() as f64).sqrt());

    let mut model = ForestModel {
        params: params.clone(),
        encoder,
        seed,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_rmse,
        train_rmse: 0.0,
        n_train: n,
    };
    let sse: f64 = x.iter().zip(&y).map(|(xi, yi)| (model.predict_encoded(xi) - yi).powi(2)).sum();
    model.train_rmse = (sse / n as f64).sqrt();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, target: f64, dist: f64) -> FeatureRow {
        FeatureRow {
            id: format!("r{i}"),
            target,
            dist_center_m: dist,
            size_sqm: 40.0 + (i % 7) as f64,
            year_built: 1950.0 + (i % 11) as f64,
            nfeatures: (i % 3) as u32,
            rooms: Some(2.0),
            amenities: vec![i.is_multiple_of(2), false],
            plz: Some(format!("0410{}", i % 3)),
        }
    }

    #[test]
    fn constant_target_predicts_constant() {
        let rows: Vec<_> = (0..60).map(|i| row(i, 7.5, i as f64)).collect();
        let m = fit_random_forest(&rows, FeatureEncoder::Simple, &ForestParams { n_trees: 20, ..Default::default() }, 1).unwrap();
        for r in &rows {
            assert_eq!(m.predict(r), 7.5);
        }
        assert_eq!(m.trees[0].nodes.len(), 1);
    }

    #[test]
    fn same_seed_same_forest() {
        let rows: Vec<_> = (0..120).map(|i| row(i, (i as f64 / 10.0).sin(), i as f64)).collect();
        let params = ForestParams { n_trees: 30, ..Default::default() };
        let a = fit_random_forest(&rows, FeatureEncoder::extended(&rows), &params, 7).unwrap();
        let b = fit_random_forest(&rows, FeatureEncoder::extended(&rows), &params, 7).unwrap();
        assert_eq!(a, b);
        let c = fit_random_forest(&rows, FeatureEncoder::extended(&rows), &params, 8).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn ties_prefer_lowest_feature_and_threshold() {
        // columns 0 and 1 are identical, so every split ties across them
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![4.0, 4.0]];
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let b = Builder {
            x: &x,
            y: &y,
            mtry: 2,
            min_node: 1,
            max_depth: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.best_split(&[0, 1, 2, 3], &mut rng), Some((0, 2.5)));
        // symmetric target: thresholds 1.5 and 3.5 tie, lowest wins
        let y2 = vec![1.0, 0.0, 0.0, 1.0];
        let b2 = Builder { y: &y2, ..b };
        let (f, t) = b2.best_split(&[0, 1, 2, 3], &mut rng).unwrap();
        assert_eq!((f, t), (0, 1.5));
    }

    #[test]
    fn encoder_layout() {
        let rows: Vec<_> = (0..6).map(|i| row(i, 1.0, 0.0)).collect();
        let e = FeatureEncoder::extended(&rows);
        assert_eq!(e.names().len(), 4 + 1 + 2 + 3);
        let mut r = rows[1].clone();
        r.rooms = None;
        r.plz = Some("99999".into());
        let v = e.encode(&r);
        assert_eq!(v[4], -1.0);
        assert_eq!(&v[7..], &[0.0, 0.0, 0.0]);
    }
}
