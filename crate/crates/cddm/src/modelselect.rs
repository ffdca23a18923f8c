//! Hyperparameter selection: 10-fold cross-validation over a grid of
//! neighborhood sizes k' and node counts m.

use rayon::prelude::*;

use crate::dataset::{Dataset, Normalizer, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::{self, derive_seed, TrainConfig, TrainError, TrainMode};

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan<F> {
    pub folds: usize,
    pub k_prime_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub repetitions: usize,
    pub master_seed: u64,
    /// Held fixed across CD-DM cells.
    pub theta0: F,
    pub stall_q: usize,
    /// Small neighborhoods (k < n) are tolerated during selection so the
    /// grid can range below the input dimension.
    pub allow_small_k: bool,
}

impl<F: Scalar> CvPlan<F> {
    /// Ten folds over the stock grids; single repetition.
    pub fn with_default_grid(master_seed: u64) -> Self {
        CvPlan {
            folds: 10,
            k_prime_grid: vec![5, 8, 10, 15, 20, 25, 30, 35, 40, 50],
            m_grid: vec![25, 50, 100, 150, 200, 250, 300, 400, 500],
            repetitions: 1,
            master_seed,
            theta0: F::from_f64_lossy(-0.01),
            stall_q: 50,
            allow_small_k: true,
        }
    }
}

/// Mean validation RMSE of one (k', m) cell, with the raw per-fold scores
/// (fold-major, repetitions within a fold adjacent).
#[derive(Debug, Clone, PartialEq)]
pub struct CvCellScore<F> {
    pub k_prime: usize,
    pub m: usize,
    pub fold_scores: Vec<F>,
    pub mean: F,
}

#[derive(Debug, Clone)]
pub struct CvOutcome<F> {
    pub best_k_prime: usize,
    pub best_m: usize,
    pub table: Vec<CvCellScore<F>>,
    pub fold_of: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Seeded permutation chunked into near-equal folds; returns each sample's
/// fold id in 0..folds. Fold sizes differ by at most one.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > n {
        return Err(Error::Config(format!(
            "fold count {folds} must satisfy 2 <= folds <= N (N={n})"
        )));
    }
    use rand::prelude::*;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut fold_of = vec![0usize; n];
    let mut pos = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < extra);
        for &sample in &order[pos..pos + size] {
            fold_of[sample] = fold;
        }
        pos += size;
    }
    Ok(fold_of)
}

fn subset<F: Scalar>(ds: &Dataset<F>, fold_of: &[usize], fold: usize, keep_fold: bool) -> Result<Dataset<F>> {
    let samples: Vec<Sample<F>> = ds
        .samples()
        .iter()
        .zip(fold_of)
        .filter(|(_, &f)| (f == fold) == keep_fold)
        .map(|(s, _)| s.clone())
        .collect();
    Dataset::new(ds.name(), samples)
}

/// Evaluates every feasible grid cell by k-fold cross-validation and returns
/// the argmin, ties broken toward smaller k', then smaller m. Cell seeds are
/// derived from the (k', m) values, so duplicated cells score identically.
pub fn cross_validate<F: Scalar>(
    train: &Dataset<F>,
    plan: &CvPlan<F>,
    mode: TrainMode,
) -> Result<CvOutcome<F>> {
    if plan.k_prime_grid.is_empty() || plan.m_grid.is_empty() {
        return Err(Error::Config("cross-validation grid is empty".into()));
    }
    if plan.repetitions < 1 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let n = train.len();
    let fold_of = assign_folds(n, plan.folds, derive_seed(plan.master_seed, 0xF01D))?;
    let mut fold_sizes = vec![0usize; plan.folds];
    for &f in &fold_of {
        fold_sizes[f] += 1;
    }
    let min_fold_train = n - fold_sizes.iter().copied().max().unwrap_or(0);

    let cells: Vec<(usize, usize)> = plan
        .k_prime_grid
        .iter()
        .flat_map(|&kp| plan.m_grid.iter().map(move |&m| (kp, m)))
        .collect();

    let evaluated: Vec<std::result::Result<CvCellScore<F>, String>> = cells
        .par_iter()
        .map(|&(k_prime, m)| {
            let k = k_prime.saturating_sub(1);
            if k < 1 || k + 1 > min_fold_train {
                return Err(format!(
                    "cell (k'={k_prime}, m={m}) skipped: k={k} infeasible for fold-train size {min_fold_train}"
                ));
            }
            let cell_seed = derive_seed(derive_seed(plan.master_seed, k_prime as u64), m as u64);
            let mut fold_scores = Vec::with_capacity(plan.folds * plan.repetitions);
            for fold in 0..plan.folds {
                for rep in 0..plan.repetitions {
                    let seed =
                        derive_seed(cell_seed, (fold * plan.repetitions + rep) as u64);
                    let fit = subset(train, &fold_of, fold, false)
                        .map_err(|e| format!("cell (k'={k_prime}, m={m}): {e}"))?;
                    let val = subset(train, &fold_of, fold, true)
                        .map_err(|e| format!("cell (k'={k_prime}, m={m}): {e}"))?;
                    let cfg = TrainConfig {
                        mode,
                        m,
                        k,
                        theta0: plan.theta0,
                        stall_q: plan.stall_q,
                        seed,
                        max_candidates: 0,
                        allow_small_k: plan.allow_small_k,
                        naive_pinv: false,
                    };
                    let norm = Normalizer::identity(train.input_dim());
                    let model = match trainer::train(&fit, &cfg, None, &norm) {
                        Ok((model, _)) => model,
                        // A capped partial model is still a usable scoring
                        // candidate; hard errors disqualify the cell.
                        Err(TrainError::CandidateCap { partial, .. }) => partial.0,
                        Err(TrainError::Base(e)) => {
                            return Err(format!("cell (k'={k_prime}, m={m}) fold {fold}: {e}"))
                        }
                    };
                    if model.node_count() == 0 {
                        return Err(format!(
                            "cell (k'={k_prime}, m={m}) fold {fold}: no nodes accepted"
                        ));
                    }
                    let preds = model
                        .predict_dataset(&val)
                        .map_err(|e| format!("cell (k'={k_prime}, m={m}) fold {fold}: {e}"))?;
                    let score = crate::network::rmse(&preds, &val.targets())
                        .map_err(|e| format!("cell (k'={k_prime}, m={m}) fold {fold}: {e}"))?;
                    fold_scores.push(score);
                }
            }
            let mean = fold_scores.iter().copied().sum::<F>()
                / F::from_usize_lossy(fold_scores.len());
            Ok(CvCellScore {
                k_prime,
                m,
                fold_scores,
                mean,
            })
        })
        .collect();

    let mut table = Vec::new();
    let mut warnings = Vec::new();
    for cell in evaluated {
        match cell {
            Ok(score) => table.push(score),
            Err(w) => warnings.push(w),
        }
    }
    if table.is_empty() {
        return Err(Error::Config(
            "no feasible cross-validation cells (all skipped)".into(),
        ));
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            a.mean
                .partial_cmp(&b.mean)
                .expect("finite scores")
                .then(a.k_prime.cmp(&b.k_prime))
                .then(a.m.cmp(&b.m))
        })
        .expect("non-empty table");
    Ok(CvOutcome {
        best_k_prime: best.k_prime,
        best_m: best.m,
        table,
        fold_of,
        warnings,
    })
}
