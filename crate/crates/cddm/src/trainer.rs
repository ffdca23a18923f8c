//! The two training procedures: D-DM builds m hidden nodes unconditionally
//! and solves the output weights once; CD-DM grows the hidden layer one
//! accepted candidate at a time under an adaptive error-change threshold.
//! Also the seeded multi-trial runner with percentile aggregation.

use std::fmt;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::linalg::{self, IncrementalLS, Matrix};
use crate::neighborhood::NeighborIndex;
use crate::network::{hidden_column, ModelMeta, NetworkModel};
use crate::nodegen::{self, HiddenNode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Ddm,
    Cddm,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Ddm => "ddm",
            TrainMode::Cddm => "cddm",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddm" => Ok(TrainMode::Ddm),
            "cddm" => Ok(TrainMode::Cddm),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected 'ddm' or 'cddm')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F> {
    pub mode: TrainMode,
    /// Target hidden-node count.
    pub m: usize,
    /// Neighbor count; the neighborhood size including the anchor is k' = k+1.
    pub k: usize,
    /// Initial error-change threshold, <= 0.
    pub theta0: F,
    /// Consecutive-rejection threshold Q triggering a halving of theta.
    pub stall_q: usize,
    pub seed: u64,
    /// Candidate-draw safety cap; 0 selects the default of 200 * m.
    pub max_candidates: usize,
    /// Permit k < n (fewer neighbors than input dimensions).
    pub allow_small_k: bool,
    /// Literal reference path: rebuild H and solve via pinv at every step.
    pub naive_pinv: bool,
}

impl<F: Scalar> TrainConfig<F> {
    pub fn new(mode: TrainMode, m: usize, k_prime: usize, seed: u64) -> Self {
        TrainConfig {
            mode,
            m,
            k: k_prime.saturating_sub(1),
            theta0: F::from_f64_lossy(-0.01),
            stall_q: 50,
            seed,
            max_candidates: 0,
            allow_small_k: false,
            naive_pinv: false,
        }
    }

    pub fn k_prime(&self) -> usize {
        self.k + 1
    }

    pub fn effective_max_candidates(&self) -> usize {
        if self.max_candidates == 0 {
            200 * self.m
        } else {
            self.max_candidates
        }
    }

    pub fn validate(&self, train: &Dataset<F>) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("node count m must be at least 1".into()));
        }
        if self.stall_q < 1 {
            return Err(Error::Config("stall threshold Q must be at least 1".into()));
        }
        if self.theta0 > F::zero() || self.theta0.is_nan() {
            return Err(Error::Config(format!(
                "theta0 must be <= 0, got {}",
                self.theta0
            )));
        }
        let n_samples = train.len();
        if self.k < 1 || self.k > n_samples.saturating_sub(1) {
            return Err(Error::Config(format!(
                "neighbor count k={} must satisfy 1 <= k <= N-1 (N={n_samples}); k' = k+1",
                self.k
            )));
        }
        let n = train.input_dim();
        if self.k < n && !self.allow_small_k {
            return Err(Error::Config(format!(
                "neighbor count k={} is below the input dimension n={n}; the hyperplane fit \
                 is underdetermined. Pass allow_small_k (--allow-small-k) to proceed anyway",
                self.k
            )));
        }
        Ok(())
    }
}

/// One accepted node's entry in the construction log.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedRow<F> {
    /// 1-based accepted-node index.
    pub node_index: usize,
    /// Candidates drawn up to and including this acceptance.
    pub candidates_so_far: usize,
    pub train_rmse: F,
    pub test_rmse: Option<F>,
    /// Threshold in force when the node was accepted (0 for D-DM).
    pub theta: F,
}

/// One candidate's entry in the threshold trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaStep<F> {
    /// 1-based candidate index.
    pub candidate_index: usize,
    /// Threshold in force when the candidate was judged.
    pub theta: F,
    pub accepted: bool,
}

/// Full per-trial construction log.
#[derive(Debug, Clone)]
pub struct TrialRecord<F> {
    pub rows: Vec<AcceptedRow<F>>,
    /// Empty for D-DM (no accept/reject loop).
    pub theta_steps: Vec<ThetaStep<F>>,
    pub candidates_total: usize,
    pub final_train_rmse: F,
    pub final_test_rmse: Option<F>,
    pub wall_time: Duration,
}

/// Training failure: either an underlying error, or the candidate cap was
/// reached first, in which case the partially built model is carried along.
#[derive(Debug)]
pub enum TrainError<F> {
    Base(Error),
    CandidateCap {
        accepted: usize,
        requested: usize,
        cap: usize,
        partial: Box<(NetworkModel<F>, TrialRecord<F>)>,
    },
}

impl<F> From<Error> for TrainError<F> {
    fn from(e: Error) -> Self {
        TrainError::Base(e)
    }
}

impl<F: Scalar> fmt::Display for TrainError<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Base(e) => e.fmt(f),
            TrainError::CandidateCap {
                accepted,
                requested,
                cap,
                ..
            } => write!(
                f,
                "candidate cap {cap} reached with {accepted} of {requested} nodes accepted"
            ),
        }
    }
}

impl<F: Scalar + fmt::Debug> std::error::Error for TrainError<F> {}

/// Acceptance slack when theta has decayed to exactly zero: reject only
/// clear increases, not rounding noise.
pub fn zero_theta_slack<F: Scalar>() -> F {
    F::from_f64_lossy(1e-14).max(F::epsilon() * F::from_f64_lossy(4.0))
}

/// Splitmix-style derivation of per-trial seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds hidden nodes from anchors: neighborhood, hyperplane, sigmoid.
struct NodeFactory<'a, F: Scalar> {
    train: &'a Dataset<F>,
    index: NeighborIndex<'a, F>,
    k: usize,
}

impl<'a, F: Scalar> NodeFactory<'a, F> {
    fn new(train: &'a Dataset<F>, k: usize) -> Self {
        NodeFactory {
            train,
            index: NeighborIndex::new(train),
            k,
        }
    }

    fn node_at(&self, anchor: usize) -> Result<HiddenNode<F>> {
        let neighbors = self.index.knn(anchor, self.k)?;
        let mut xs: Vec<&[F]> = Vec::with_capacity(self.k + 1);
        let mut ys: Vec<F> = Vec::with_capacity(self.k + 1);
        xs.push(self.train.input(anchor));
        ys.push(self.train.target(anchor));
        for &i in &neighbors {
            xs.push(self.train.input(i));
            ys.push(self.train.target(i));
        }
        let plane = nodegen::fit_hyperplane(&xs, &ys)?;
        nodegen::make_node(&plane, self.train.input(anchor))
    }
}

/// Caches committed nodes' activations on the evaluation set so the test
/// RMSE at each acceptance costs O(N_test * nodes).
struct EvalCache<'a, F: Scalar> {
    eval: Option<&'a Dataset<F>>,
    cols: Vec<Vec<F>>,
    targets: Vec<F>,
}

impl<'a, F: Scalar> EvalCache<'a, F> {
    fn new(eval: Option<&'a Dataset<F>>) -> Self {
        EvalCache {
            eval,
            cols: Vec::new(),
            targets: eval.map(|ds| ds.targets()).unwrap_or_default(),
        }
    }

    fn push(&mut self, node: &HiddenNode<F>) -> Result<()> {
        if let Some(ds) = self.eval {
            self.cols.push(hidden_column(node, ds)?);
        }
        Ok(())
    }

    fn rmse(&self, beta: &[F]) -> Result<Option<F>> {
        let Some(_) = self.eval else {
            return Ok(None);
        };
        let mut preds = vec![F::zero(); self.targets.len()];
        for (col, &b) in self.cols.iter().zip(beta) {
            for (p, &h) in preds.iter_mut().zip(col) {
                *p += b * h;
            }
        }
        crate::network::rmse(&preds, &self.targets).map(Some)
    }
}

fn check_compatible<F: Scalar>(train: &Dataset<F>, eval: Option<&Dataset<F>>) -> Result<()> {
    if let Some(ds) = eval {
        if ds.input_dim() != train.input_dim() {
            return Err(Error::Dimension {
                context: "evaluation set input dimension",
                expected: train.input_dim(),
                got: ds.input_dim(),
            });
        }
    }
    Ok(())
}

fn make_meta<F: Scalar>(cfg: &TrainConfig<F>, pinv_tol: F) -> ModelMeta<F> {
    ModelMeta {
        mode: cfg.mode.as_str().to_string(),
        k_prime: cfg.k_prime(),
        theta0: cfg.theta0,
        stall_q: cfg.stall_q,
        seed: cfg.seed,
        pinv_tol,
    }
}

/// Dispatches on `cfg.mode`.
pub fn train<F: Scalar>(
    train: &Dataset<F>,
    cfg: &TrainConfig<F>,
    eval: Option<&Dataset<F>>,
    normalizer: &Normalizer<F>,
) -> std::result::Result<(NetworkModel<F>, TrialRecord<F>), TrainError<F>> {
    match cfg.mode {
        TrainMode::Ddm => train_ddm(train, cfg, eval, normalizer),
        TrainMode::Cddm => train_cddm(train, cfg, eval, normalizer),
    }
}

/// Non-constructive baseline: draw m anchors with replacement, build all m
/// nodes, fit the output weights once. The record still contains the
/// convergence curve (output weights re-solved for every node prefix).
pub fn train_ddm<F: Scalar>(
    train_set: &Dataset<F>,
    cfg: &TrainConfig<F>,
    eval: Option<&Dataset<F>>,
    normalizer: &Normalizer<F>,
) -> std::result::Result<(NetworkModel<F>, TrialRecord<F>), TrainError<F>> {
    cfg.validate(train_set)?;
    check_compatible(train_set, eval)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let anchors: Vec<usize> = (0..cfg.m)
        .map(|_| rng.random_range(0..train_set.len()))
        .collect();
    let factory = NodeFactory::new(train_set, cfg.k);
    let targets = train_set.targets();
    let sqrt_n = F::from_usize_lossy(train_set.len()).sqrt();

    let mut nodes: Vec<HiddenNode<F>> = Vec::with_capacity(cfg.m);
    let mut rows: Vec<AcceptedRow<F>> = Vec::with_capacity(cfg.m);
    let mut cache = EvalCache::new(eval);
    let mut beta: Vec<F> = Vec::new();
    let pinv_tol;

    if cfg.naive_pinv {
        let mut h_cols: Vec<Vec<F>> = Vec::with_capacity(cfg.m);
        pinv_tol = linalg::default_rank_tolerance::<F>(train_set.len(), cfg.m);
        for (j, &anchor) in anchors.iter().enumerate() {
            let node = factory.node_at(anchor)?;
            h_cols.push(hidden_column(&node, train_set)?);
            let (b, train_rmse) = naive_solve(&h_cols, &targets)?;
            cache.push(&node)?;
            let test_rmse = cache.rmse(&b)?;
            rows.push(AcceptedRow {
                node_index: j + 1,
                candidates_so_far: j + 1,
                train_rmse,
                test_rmse,
                theta: F::zero(),
            });
            nodes.push(node);
            beta = b;
        }
    } else {
        let mut ils = IncrementalLS::new(targets)?;
        for (j, &anchor) in anchors.iter().enumerate() {
            let node = factory.node_at(anchor)?;
            let col = hidden_column(&node, train_set)?;
            let cand = ils.append_column(&col)?;
            let b = ils.candidate_beta()?;
            ils.commit()?;
            cache.push(&node)?;
            let test_rmse = cache.rmse(&b)?;
            rows.push(AcceptedRow {
                node_index: j + 1,
                candidates_so_far: j + 1,
                train_rmse: cand.residual_norm / sqrt_n,
                test_rmse,
                theta: F::zero(),
            });
            nodes.push(node);
            beta = b;
        }
        pinv_tol = ils.rank_tolerance();
    }

    let last = rows.last().expect("m >= 1");
    let record = TrialRecord {
        final_train_rmse: last.train_rmse,
        final_test_rmse: last.test_rmse,
        rows,
        theta_steps: Vec::new(),
        candidates_total: cfg.m,
        wall_time: start.elapsed(),
    };
    let model = NetworkModel::new(nodes, beta, normalizer.clone(), make_meta(cfg, pinv_tol))?;
    Ok((model, record))
}

fn naive_solve<F: Scalar>(h_cols: &[Vec<F>], targets: &[F]) -> Result<(Vec<F>, F)> {
    let rows = targets.len();
    let h = Matrix::from_fn(rows, h_cols.len(), |l, j| h_cols[j][l]);
    let beta = linalg::pinv(&h, None)?.mul_vec(targets)?;
    let preds = h.mul_vec(&beta)?;
    let rmse = crate::network::rmse(&preds, targets)?;
    Ok((beta, rmse))
}

/// Constructive variant: candidates are drawn one at a time and kept only
/// when they lower the training RMSE by at least |theta|; theta is halved
/// whenever Q iterations pass without an acceptance.
pub fn train_cddm<F: Scalar>(
    train_set: &Dataset<F>,
    cfg: &TrainConfig<F>,
    eval: Option<&Dataset<F>>,
    normalizer: &Normalizer<F>,
) -> std::result::Result<(NetworkModel<F>, TrialRecord<F>), TrainError<F>> {
    cfg.validate(train_set)?;
    check_compatible(train_set, eval)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factory = NodeFactory::new(train_set, cfg.k);
    let targets = train_set.targets();
    let n_samples = train_set.len();
    let sqrt_n = F::from_usize_lossy(n_samples).sqrt();
    let cap = cfg.effective_max_candidates();
    let slack = zero_theta_slack::<F>();
    let two = F::from_f64_lossy(2.0);

    let mut ils = IncrementalLS::new(targets.clone())?;
    let mut naive_cols: Vec<Vec<F>> = Vec::new();
    let mut cache = EvalCache::new(eval);
    let mut nodes: Vec<HiddenNode<F>> = Vec::new();
    let mut rows: Vec<AcceptedRow<F>> = Vec::new();
    let mut theta_steps: Vec<ThetaStep<F>> = Vec::new();
    let mut beta: Vec<F> = Vec::new();

    let mut theta = cfg.theta0;
    let mut q = 1usize;
    let mut rmse_prev = F::one();
    let mut candidates = 0usize;

    while nodes.len() < cfg.m {
        if candidates >= cap {
            let pinv_tol = if cfg.naive_pinv {
                linalg::default_rank_tolerance::<F>(n_samples, nodes.len().max(1))
            } else {
                ils.rank_tolerance()
            };
            let record = TrialRecord {
                final_train_rmse: rows.last().map(|r| r.train_rmse).unwrap_or(rmse_prev),
                final_test_rmse: rows.last().and_then(|r| r.test_rmse),
                rows,
                theta_steps,
                candidates_total: candidates,
                wall_time: start.elapsed(),
            };
            let model =
                NetworkModel::new(nodes, beta, normalizer.clone(), make_meta(cfg, pinv_tol))?;
            return Err(TrainError::CandidateCap {
                accepted: model.node_count(),
                requested: cfg.m,
                cap,
                partial: Box::new((model, record)),
            });
        }
        candidates += 1;
        let anchor = rng.random_range(0..n_samples);
        let node = factory.node_at(anchor)?;
        let col = hidden_column(&node, train_set)?;

        // Candidate training RMSE with the tentative column in place.
        let (rmse_i, cand_beta) = if cfg.naive_pinv {
            naive_cols.push(col);
            let (b, r) = naive_solve(&naive_cols, &targets)?;
            (r, Some(b))
        } else {
            let cand = ils.append_column(&col)?;
            (cand.residual_norm / sqrt_n, None)
        };

        let delta = rmse_i - rmse_prev;
        let theta_now = theta;
        let accepted = if theta_now == F::zero() {
            delta <= slack
        } else {
            delta <= theta_now
        };

        q += 1;
        if accepted {
            let b = match cand_beta {
                Some(b) => b,
                None => {
                    let b = ils.candidate_beta()?;
                    ils.commit()?;
                    b
                }
            };
            cache.push(&node)?;
            let test_rmse = cache.rmse(&b)?;
            nodes.push(node);
            rows.push(AcceptedRow {
                node_index: nodes.len(),
                candidates_so_far: candidates,
                train_rmse: rmse_i,
                test_rmse,
                theta: theta_now,
            });
            beta = b;
            rmse_prev = rmse_i;
            q = 1;
        } else if cfg.naive_pinv {
            naive_cols.pop();
        } else {
            ils.discard()?;
        }
        theta_steps.push(ThetaStep {
            candidate_index: candidates,
            theta: theta_now,
            accepted,
        });
        if q >= cfg.stall_q {
            theta /= two;
        }
    }

    let pinv_tol = if cfg.naive_pinv {
        linalg::default_rank_tolerance::<F>(n_samples, cfg.m)
    } else {
        ils.rank_tolerance()
    };
    let last = rows.last().expect("m >= 1 and loop exits on m acceptances");
    let record = TrialRecord {
        final_train_rmse: last.train_rmse,
        final_test_rmse: last.test_rmse,
        rows,
        theta_steps,
        candidates_total: candidates,
        wall_time: start.elapsed(),
    };
    let model = NetworkModel::new(nodes, beta, normalizer.clone(), make_meta(cfg, pinv_tol))?;
    Ok((model, record))
}

/// Mechanical audit of a CD-DM record: replays the q/theta automaton from
/// the accepted flags and confirms the recorded thresholds, the halving
/// points, and every accepted step's error change.
pub fn verify_cddm_record<F: Scalar>(
    record: &TrialRecord<F>,
    theta0: F,
    stall_q: usize,
) -> std::result::Result<(), String> {
    let slack = zero_theta_slack::<F>();
    let mut theta = theta0;
    let mut q = 1usize;
    let mut rmse_prev = F::one();
    let mut rows = record.rows.iter();
    let mut next_row = rows.next();
    for (i, step) in record.theta_steps.iter().enumerate() {
        if step.candidate_index != i + 1 {
            return Err(format!(
                "candidate {} recorded with index {}",
                i + 1,
                step.candidate_index
            ));
        }
        if step.theta != theta {
            return Err(format!(
                "candidate {}: recorded theta {} but replay gives {}",
                i + 1,
                step.theta,
                theta
            ));
        }
        q += 1;
        if step.accepted {
            let row = match next_row {
                Some(r) => r,
                None => return Err("more accepted steps than rows".into()),
            };
            if row.candidates_so_far != step.candidate_index || row.theta != theta {
                return Err(format!("row/step mismatch at candidate {}", i + 1));
            }
            let delta = row.train_rmse - rmse_prev;
            let ok = if theta == F::zero() {
                delta <= slack
            } else {
                delta <= theta
            };
            if !ok {
                return Err(format!(
                    "accepted node {} has delta {} above theta {}",
                    row.node_index, delta, theta
                ));
            }
            rmse_prev = row.train_rmse;
            next_row = rows.next();
            q = 1;
        }
        if q >= stall_q {
            theta /= F::one() + F::one();
        }
    }
    if next_row.is_some() {
        return Err("fewer accepted steps than rows".into());
    }
    for (j, row) in record.rows.iter().enumerate() {
        if row.node_index != j + 1 {
            return Err(format!("row {} has node_index {}", j + 1, row.node_index));
        }
    }
    Ok(())
}

/// Per-trial data: normalized train/test sets plus the normalizer that
/// produced them (stored into each trial's model).
pub struct TrialData<F> {
    pub train: Dataset<F>,
    pub test: Dataset<F>,
    pub normalizer: Normalizer<F>,
}

/// Supplies the data for one trial; synthetic sources regenerate, file-backed
/// sources re-split, both driven by the given seed.
pub trait TrialDataSource<F: Scalar>: Sync {
    fn trial_data(&self, data_seed: u64) -> Result<TrialData<F>>;
}

/// Why a trial produced no full model.
#[derive(Debug)]
pub enum TrainFailure {
    Error(Error),
    Partial {
        accepted: usize,
        requested: usize,
        cap: usize,
    },
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainFailure::Error(e) => e.fmt(f),
            TrainFailure::Partial {
                accepted,
                requested,
                cap,
            } => write!(
                f,
                "candidate cap {cap} reached with {accepted} of {requested} nodes accepted"
            ),
        }
    }
}

#[derive(Debug)]
pub struct TrialOutcome<F> {
    pub trial: usize,
    pub data_seed: u64,
    pub train_seed: u64,
    pub result: std::result::Result<TrialRecord<F>, TrainFailure>,
}

/// Sorted-sample percentiles with linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread<F> {
    pub median: F,
    pub p10: F,
    pub p25: F,
    pub p75: F,
    pub p90: F,
}

impl<F: Scalar> Spread<F> {
    pub fn iqr(&self) -> F {
        self.p75 - self.p25
    }
}

/// Linearly interpolated quantile of an ascending-sorted slice.
pub fn quantile<F: Scalar>(sorted: &[F], p: f64) -> F {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = F::from_f64_lossy(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn spread_of<F: Scalar>(values: &[F]) -> Option<Spread<F>> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rmse values"));
    Some(Spread {
        median: quantile(&sorted, 0.5),
        p10: quantile(&sorted, 0.1),
        p25: quantile(&sorted, 0.25),
        p75: quantile(&sorted, 0.75),
        p90: quantile(&sorted, 0.9),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow<F> {
    pub node_count: usize,
    pub train: Spread<F>,
    pub test: Option<Spread<F>>,
}

#[derive(Debug, Clone)]
pub struct Aggregate<F> {
    pub final_train: Option<Spread<F>>,
    pub final_test: Option<Spread<F>>,
    /// Percentiles of train/test RMSE at each accepted-node count.
    pub convergence: Vec<ConvergenceRow<F>>,
    pub median_candidates: Option<f64>,
    pub median_nodes: Option<f64>,
}

/// Percentile aggregation over the successful records.
pub fn aggregate_records<F: Scalar>(records: &[&TrialRecord<F>]) -> Aggregate<F> {
    let final_train: Vec<F> = records.iter().map(|r| r.final_train_rmse).collect();
    let final_test: Vec<F> = records.iter().filter_map(|r| r.final_test_rmse).collect();
    let max_nodes = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    let mut convergence = Vec::with_capacity(max_nodes);
    for count in 1..=max_nodes {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in records {
            if let Some(row) = r.rows.get(count - 1) {
                train.push(row.train_rmse);
                if let Some(t) = row.test_rmse {
                    test.push(t);
                }
            }
        }
        if let Some(train) = spread_of(&train) {
            convergence.push(ConvergenceRow {
                node_count: count,
                train,
                test: spread_of(&test),
            });
        }
    }
    let mut candidate_counts: Vec<f64> = records.iter().map(|r| r.candidates_total as f64).collect();
    candidate_counts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut node_counts: Vec<f64> = records.iter().map(|r| r.rows.len() as f64).collect();
    node_counts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Aggregate {
        final_train: spread_of(&final_train),
        final_test: spread_of(&final_test),
        convergence,
        median_candidates: if candidate_counts.is_empty() {
            None
        } else {
            Some(quantile(&candidate_counts, 0.5))
        },
        median_nodes: if node_counts.is_empty() {
            None
        } else {
            Some(quantile(&node_counts, 0.5))
        },
    }
}

/// Smallest node count whose median test RMSE is at or below `level`.
pub fn first_node_reaching<F: Scalar>(convergence: &[ConvergenceRow<F>], level: F) -> Option<usize> {
    convergence
        .iter()
        .find(|row| row.test.map(|s| s.median <= level).unwrap_or(false))
        .map(|row| row.node_count)
}

#[derive(Debug)]
pub struct TrialsOutcome<F> {
    pub trials: Vec<TrialOutcome<F>>,
    /// Model from the first successful trial, kept for plots and model dumps.
    pub first_model: Option<NetworkModel<F>>,
    pub aggregate: Aggregate<F>,
    pub warnings: Vec<String>,
}

impl<F: Scalar> TrialsOutcome<F> {
    pub fn success_count(&self) -> usize {
        self.trials.iter().filter(|t| t.result.is_ok()).count()
    }

    pub fn records(&self) -> Vec<&TrialRecord<F>> {
        self.trials
            .iter()
            .filter_map(|t| t.result.as_ref().ok())
            .collect()
    }
}

/// Runs independent seeded trials (in parallel) and aggregates. Each trial
/// draws its data seed and training seed from the master seed; `cfg.seed`
/// is ignored here. Failed trials are recorded and skipped in aggregation.
pub fn run_trials<F: Scalar>(
    source: &dyn TrialDataSource<F>,
    cfg: &TrainConfig<F>,
    trials: usize,
    master_seed: u64,
) -> Result<TrialsOutcome<F>> {
    if trials < 1 {
        return Err(Error::Config("trial count must be at least 1".into()));
    }
    let mut results: Vec<(TrialOutcome<F>, Option<NetworkModel<F>>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let data_seed = derive_seed(master_seed, 2 * t as u64);
            let train_seed = derive_seed(master_seed, 2 * t as u64 + 1);
            let mut trial_cfg = cfg.clone();
            trial_cfg.seed = train_seed;
            let outcome = source.trial_data(data_seed).map_err(TrainFailure::Error).and_then(
                |data| match train(&data.train, &trial_cfg, Some(&data.test), &data.normalizer) {
                    Ok((model, record)) => Ok((model, record)),
                    Err(TrainError::Base(e)) => Err(TrainFailure::Error(e)),
                    Err(TrainError::CandidateCap {
                        accepted,
                        requested,
                        cap,
                        ..
                    }) => Err(TrainFailure::Partial {
                        accepted,
                        requested,
                        cap,
                    }),
                },
            );
            let (result, model) = match outcome {
                Ok((model, record)) => (Ok(record), if t == 0 { Some(model) } else { None }),
                Err(f) => (Err(f), None),
            };
            (
                TrialOutcome {
                    trial: t,
                    data_seed,
                    train_seed,
                    result,
                },
                model,
            )
        })
        .collect();
    results.sort_by_key(|(o, _)| o.trial);

    let mut trials_out = Vec::with_capacity(trials);
    let mut first_model = None;
    let mut warnings = Vec::new();
    for (outcome, model) in results {
        if let Err(f) = &outcome.result {
            warnings.push(format!("trial {} failed: {f}", outcome.trial));
        }
        if outcome.trial == 0 {
            first_model = model;
        }
        trials_out.push(outcome);
    }
    let records: Vec<&TrialRecord<F>> = trials_out
        .iter()
        .filter_map(|t| t.result.as_ref().ok())
        .collect();
    if records.len() < trials {
        warnings.push(format!(
            "aggregating {} of {trials} trials",
            records.len()
        ));
    }
    let aggregate = aggregate_records(&records);
    Ok(TrialsOutcome {
        trials: trials_out,
        first_model,
        aggregate,
        warnings,
    })
}
