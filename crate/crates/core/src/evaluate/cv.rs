use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logreg::{train_logreg, LogRegOptions};
use super::roc::roc_auc;
use crate::error::{PaceError, Result};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_L2_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// Stratified fold assignment: positives and negatives are shuffled
/// separately and dealt round-robin, negatives continuing where the
/// positives stopped, so every fold holds `floor` or `ceil` of each class's
/// share. Returns the fold index of every sample.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(PaceError::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < folds || neg.len() < folds {
        return Err(PaceError::SingleClass(format!(
            "cannot stratify {} positives and {} negatives into {folds} folds with both classes",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignment = vec![0; labels.len()];
    for (k, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignment[i] = k % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_l2: f64,
    /// Mean validation AUC per grid value, grid order.
    pub mean_auc: Vec<f64>,
}

fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Picks the grid value with the best mean validation ROC AUC over
/// stratified folds; ties go to the stronger penalty.
pub fn grid_search_cv(
    x: ArrayView2<'_, f64>,
    y: &[bool],
    l2_grid: &[f64],
    folds: usize,
    seed: u64,
    opts: &LogRegOptions,
) -> Result<CvResult> {
    if l2_grid.is_empty() {
        return Err(PaceError::Config("empty l2 grid".into()));
    }
    if x.nrows() != y.len() {
        return Err(PaceError::Shape(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    let assignment = stratified_folds(y, folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| assignment[i] == f);
            (train, val)
        })
        .collect();

    let mut mean_auc = Vec::with_capacity(l2_grid.len());
    for &l2 in l2_grid {
        let mut total = 0.0;
        for (train, val) in &splits {
            let xt = take_rows(x, train);
            let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let fit = train_logreg(xt.view(), &yt, l2, opts)?;
            let xv = take_rows(x, val);
            let yv: Vec<bool> = val.iter().map(|&i| y[i]).collect();
            total += roc_auc(fit.model.decision(xv.view()).as_slice().expect("contiguous"), &yv)?;
        }
        mean_auc.push(total / folds as f64);
    }

    let mut best = 0;
    for i in 1..l2_grid.len() {
        let better = mean_auc[i] > mean_auc[best]
            || (mean_auc[i] == mean_auc[best] && l2_grid[i] > l2_grid[best]);
        if better {
            best = i;
        }
    }
    Ok(CvResult {
        best_l2: l2_grid[best],
        mean_auc,
    })
}
