//! Holdout evaluation and train/test splitting.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureRow, FittedModel, ModelBody, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    /// Root mean squared error in €/m².
    pub rmse: f64,
    /// Plain coefficient of determination on the holdout.
    pub r2: f64,
    /// Adjusted with the training degrees of freedom; GAMs only.
    pub r2_adj: Option<f64>,
}

/// Holdout metrics. Errors if the holdout shares ids with the training set.
pub fn evaluate(model: &FittedModel, holdout: &[FeatureRow]) -> Result<Evaluation, ModelError> {
    if holdout.is_empty() {
        return Err(ModelError::Validation("empty holdout".into()));
    }
    let train: HashSet<&str> = model.train_ids.iter().map(String::as_str).collect();
    let shared = holdout.iter().filter(|r| train.contains(r.id.as_str())).count();
    if shared > 0 {
        return Err(ModelError::Overlap(shared));
    }
    let n = holdout.len() as f64;
    let mut sse = 0.0;
    for r in holdout {
        sse += (model.predict(r)? - r.target).powi(2);
    }
    let mean = holdout.iter().map(|r| r.target).sum::<f64>() / n;
    let sst: f64 = holdout.iter().map(|r| (r.target - mean).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN };
    let r2_adj = match &model.body {
        ModelBody::Gam(g) => Some(1.0 - (sse / (n - g.edf_total)) / (sst / (n - 1.0))),
        ModelBody::Forest(_) => None,
    };
    Ok(Evaluation {
        n: holdout.len(),
        rmse: (sse / n).sqrt(),
        r2,
        r2_adj,
    })
}

/// Seeded random sample of `n_train` rows; the rest form the holdout. Both
/// keep the input order.
pub fn split_train_test(rows: &[FeatureRow], n_train: usize, seed: u64) -> (Vec<FeatureRow>, Vec<FeatureRow>) {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut in_train = vec![false; rows.len()];
    for &i in idx.iter().take(n_train) {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in rows.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    (train, test)
}
