//! Experiment orchestration: key=value config files, per-trial data sources,
//! the artifact writers behind `run` and `crossval`, and the plot-data
//! extractors. Everything here is concrete f64; the generic core lives in
//! the other modules.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::dataset::{self, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::modelselect::{self, CvPlan};
use crate::network::{self, NetworkModel};
use crate::nodegen;
use crate::trainer::{
    self, derive_seed, spread_of, Spread, TrainConfig, TrainFailure, TrainMode, TrialData,
    TrialDataSource, TrialsOutcome,
};

/// Parsed key=value file with '#' comments; every key must be consumed.
struct KvMap {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KvMap {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line_no = line_no + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(path, line_no, "expected 'key = value'"));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(path, line_no, "empty key"));
            }
            if let Some((_, first)) = entries.insert(key.clone(), (value, line_no)) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("duplicate key '{key}' (first at line {first})"),
                ));
            }
        }
        Ok(KvMap {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn take_required(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| {
            Error::Config(format!(
                "{}: missing required key '{key}'",
                self.path.display()
            ))
        })
    }

    fn take_parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| {
                Error::parse(&self.path, line, format!("key '{key}': '{v}': {e}"))
            }),
        }
    }

    fn take_parse_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take_parse(key)?.unwrap_or(default))
    }

    fn take_required_parse<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_parse(key)? {
            Some(v) => Ok(v),
            None => Err(Error::Config(format!(
                "{}: missing required key '{key}'",
                self.path.display()
            ))),
        }
    }

    fn take_usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|tok| tok.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| Error::parse(&self.path, line, format!("key '{key}': '{v}': {e}"))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config(format!(
                "{}: unknown key '{key}' at line {line}",
                self.path.display()
            )));
        }
        Ok(())
    }
}

/// What data an experiment runs on: a synthetic generator or a KEEL file.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Tf1,
    Tf2,
    Keel(PathBuf),
}

impl DataSpec {
    pub fn parse(s: &str) -> DataSpec {
        match s {
            "tf1" => DataSpec::Tf1,
            "tf2" => DataSpec::Tf2,
            other => DataSpec::Keel(PathBuf::from(other)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DataSpec::Tf1 => "tf1".into(),
            DataSpec::Tf2 => "tf2".into(),
            DataSpec::Keel(p) => p.display().to_string(),
        }
    }

    pub fn is_synthetic(&self) -> bool {
        !matches!(self, DataSpec::Keel(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DataSpec,
    pub mode: TrainMode,
    pub m: usize,
    pub k_prime: usize,
    pub theta0: f64,
    pub stall_q: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub train_fraction: f64,
    pub max_candidates: usize,
    pub allow_small_k: bool,
    pub naive_pinv: bool,
    /// Draw a fresh train/test split (or synthetic sample) per trial.
    pub resplit_per_trial: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KvMap::load(path)?;
        let dataset = DataSpec::parse(&kv.take_required("dataset")?);
        let (def_train, def_test) = match dataset {
            DataSpec::Tf1 => (1000, 300),
            DataSpec::Tf2 => (5000, 5000),
            DataSpec::Keel(_) => (0, 0),
        };
        let cfg = ExperimentConfig {
            mode: kv.take_required_parse("mode")?,
            m: kv.take_required_parse("m")?,
            k_prime: kv.take_required_parse("k_prime")?,
            theta0: kv.take_parse_or("theta0", -0.01)?,
            stall_q: kv.take_parse_or("Q", 50)?,
            trials: kv.take_required_parse("trials")?,
            master_seed: kv.take_required_parse("master_seed")?,
            output_dir: PathBuf::from(kv.take_required("output_dir")?),
            n_train: kv.take_parse_or("n_train", def_train)?,
            n_test: kv.take_parse_or("n_test", def_test)?,
            noise: kv.take_parse_or("noise", 0.2)?,
            train_fraction: kv.take_parse_or("train_fraction", 0.75)?,
            max_candidates: kv.take_parse_or("max_candidates", 0)?,
            allow_small_k: kv.take_parse_or("allow_small_k", false)?,
            naive_pinv: kv.take_parse_or("naive_pinv", false)?,
            resplit_per_trial: kv.take_parse_or("resplit_per_trial", true)?,
            dataset,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.k_prime < 2 {
            return Err(Error::Config("k_prime must be at least 2".into()));
        }
        if self.theta0 > 0.0 || self.theta0.is_nan() {
            return Err(Error::Config(format!(
                "theta0 must be <= 0, got {}",
                self.theta0
            )));
        }
        if self.stall_q < 1 {
            return Err(Error::Config("Q must be at least 1".into()));
        }
        if self.dataset.is_synthetic() && (self.n_train < 1 || self.n_test < 1) {
            return Err(Error::Config(
                "n_train and n_test must be at least 1 for synthetic data".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            mode: self.mode,
            m: self.m,
            k: self.k_prime - 1,
            theta0: self.theta0,
            stall_q: self.stall_q,
            seed: self.master_seed,
            max_candidates: self.max_candidates,
            allow_small_k: self.allow_small_k,
            naive_pinv: self.naive_pinv,
        }
    }

    fn echo_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.label()),
            ("mode", self.mode.to_string()),
            ("m", self.m.to_string()),
            ("k_prime", self.k_prime.to_string()),
            ("theta0", self.theta0.to_string()),
            ("Q", self.stall_q.to_string()),
            ("trials", self.trials.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("noise", self.noise.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("max_candidates", self.max_candidates.to_string()),
            ("allow_small_k", self.allow_small_k.to_string()),
            ("naive_pinv", self.naive_pinv.to_string()),
            ("resplit_per_trial", self.resplit_per_trial.to_string()),
        ]
    }

    /// One-line audit echo for CSV headers.
    pub fn echo(&self) -> String {
        self.echo_pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Multi-line form written to config.txt (re-parseable).
    pub fn config_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.echo_pairs() {
            writeln!(out, "{k} = {v}").expect("writing to string");
        }
        out
    }
}

struct SyntheticSource {
    spec: DataSpec,
    n_train: usize,
    n_test: usize,
    noise: f64,
    fixed_seed: Option<u64>,
}

impl TrialDataSource<f64> for SyntheticSource {
    fn trial_data(&self, data_seed: u64) -> Result<TrialData<f64>> {
        let seed = self.fixed_seed.unwrap_or(data_seed);
        let (train, test, dim) = match self.spec {
            DataSpec::Tf1 => {
                let (tr, te) = dataset::generate_tf1(self.n_train, self.n_test, seed)?;
                (tr, te, 1)
            }
            DataSpec::Tf2 => {
                let (tr, te) = dataset::generate_tf2(self.n_train, self.n_test, self.noise, seed)?;
                (tr, te, 2)
            }
            DataSpec::Keel(_) => {
                return Err(Error::Config("synthetic source built for a file".into()))
            }
        };
        Ok(TrialData {
            train,
            test,
            normalizer: Normalizer::identity(dim),
        })
    }
}

struct KeelSource {
    data: Dataset<f64>,
    train_fraction: f64,
    fixed_seed: Option<u64>,
}

impl TrialDataSource<f64> for KeelSource {
    fn trial_data(&self, data_seed: u64) -> Result<TrialData<f64>> {
        let seed = self.fixed_seed.unwrap_or(data_seed);
        let (raw_train, raw_test) = dataset::split(&self.data, self.train_fraction, seed)?;
        let normalizer = Normalizer::fit(&raw_train);
        Ok(TrialData {
            train: normalizer.apply(&raw_train)?,
            test: normalizer.apply(&raw_test)?,
            normalizer,
        })
    }
}

/// Builds the per-trial data source; KEEL files are loaded eagerly so data
/// errors surface before any trial starts.
pub fn build_source(cfg: &ExperimentConfig) -> Result<Box<dyn TrialDataSource<f64>>> {
    let fixed_seed = if cfg.resplit_per_trial {
        None
    } else {
        Some(derive_seed(cfg.master_seed, 0xDA7A))
    };
    match &cfg.dataset {
        DataSpec::Keel(path) => Ok(Box::new(KeelSource {
            data: dataset::load_keel(path)?,
            train_fraction: cfg.train_fraction,
            fixed_seed,
        })),
        spec => Ok(Box::new(SyntheticSource {
            spec: spec.clone(),
            n_train: cfg.n_train,
            n_test: cfg.n_test,
            noise: cfg.noise,
            fixed_seed,
        })),
    }
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_header(echo: &str, columns: &str, stamp: u64) -> String {
    format!("# generated {stamp}\n# config {echo}\n{columns}\n")
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn trials_csv(outcome: &TrialsOutcome<f64>, echo: &str, stamp: u64) -> String {
    let mut out = csv_header(
        echo,
        "trial,node_count,candidates_so_far,theta,train_rmse,test_rmse",
        stamp,
    );
    for trial in &outcome.trials {
        if let Ok(record) = &trial.result {
            for row in &record.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    trial.trial,
                    row.node_index,
                    row.candidates_so_far,
                    row.theta,
                    row.train_rmse,
                    opt_cell(row.test_rmse)
                )
                .expect("writing to string");
            }
        }
    }
    out
}

fn convergence_csv_from_rows(rows: &[trainer::ConvergenceRow<f64>], echo: &str, stamp: u64) -> String {
    let mut out = csv_header(
        echo,
        "node_count,train_median,train_p10,train_p90,test_median,test_p10,test_p90",
        stamp,
    );
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.node_count,
            row.train.median,
            row.train.p10,
            row.train.p90,
            opt_cell(row.test.map(|s| s.median)),
            opt_cell(row.test.map(|s| s.p10)),
            opt_cell(row.test.map(|s| s.p90)),
        )
        .expect("writing to string");
    }
    out
}

fn theta_csv(record: &trainer::TrialRecord<f64>, echo: &str, stamp: u64) -> String {
    let mut out = csv_header(echo, "candidate_index,theta,accepted", stamp);
    for step in &record.theta_steps {
        writeln!(
            out,
            "{},{},{}",
            step.candidate_index,
            step.theta,
            u8::from(step.accepted)
        )
        .expect("writing to string");
    }
    out
}

fn fmt_spread(s: &Spread<f64>) -> String {
    format!(
        "median {:.6}  IQR {:.6}  p10 {:.6}  p90 {:.6}",
        s.median,
        s.iqr(),
        s.p10,
        s.p90
    )
}

fn summary_text(cfg: &ExperimentConfig, outcome: &TrialsOutcome<f64>) -> String {
    let mut out = String::new();
    let successes = outcome.success_count();
    writeln!(
        out,
        "dataset: {}   mode: {}   trials: {} ({} ok)",
        cfg.dataset.label(),
        cfg.mode,
        cfg.trials,
        successes
    )
    .expect("writing to string");
    writeln!(
        out,
        "parameters: m={} k'={} theta0={} Q={} master_seed={}",
        cfg.m, cfg.k_prime, cfg.theta0, cfg.stall_q, cfg.master_seed
    )
    .expect("writing to string");
    if let Some(s) = &outcome.aggregate.final_test {
        writeln!(out, "test RMSE:  {}", fmt_spread(s)).expect("writing to string");
        writeln!(
            out,
            "table row:  {:.4} \u{00b1} {:.4} ({}, m={}, k'={})",
            s.median,
            s.iqr(),
            cfg.mode,
            cfg.m,
            cfg.k_prime
        )
        .expect("writing to string");
    }
    if let Some(s) = &outcome.aggregate.final_train {
        writeln!(out, "train RMSE: {}", fmt_spread(s)).expect("writing to string");
    }
    if let (Some(nodes), Some(cands)) = (
        outcome.aggregate.median_nodes,
        outcome.aggregate.median_candidates,
    ) {
        writeln!(
            out,
            "median accepted nodes: {nodes}   median candidates: {cands}"
        )
        .expect("writing to string");
    }
    let conv = &outcome.aggregate.convergence;
    if let Some(best) = conv
        .iter()
        .filter_map(|r| r.test.map(|s| (r.node_count, s.median)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite medians"))
    {
        writeln!(
            out,
            "node efficiency: min median test RMSE {:.6} at {} nodes",
            best.1, best.0
        )
        .expect("writing to string");
        if let Some(first) = trainer::first_node_reaching(conv, best.1 * 1.05) {
            writeln!(out, "first within 5% of min: {first} nodes").expect("writing to string");
        }
    }
    for w in &outcome.warnings {
        writeln!(out, "warning: {w}").expect("writing to string");
    }
    out
}

#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub summary_text: String,
    pub trials: usize,
    pub successes: usize,
    pub warnings: Vec<String>,
    /// True when every trial failed by hitting the candidate cap.
    pub all_failures_partial: bool,
}

/// Runs the configured experiment and writes config.txt, summary.txt,
/// trials.csv, convergence.csv, theta_trial000.csv (CD-DM) and
/// model_trial000.txt into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let source = build_source(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let outcome = trainer::run_trials(
        source.as_ref(),
        &cfg.train_config(),
        cfg.trials,
        cfg.master_seed,
    )?;
    let echo = cfg.echo();
    let stamp = timestamp();

    write_file(&cfg.output_dir.join("config.txt"), &cfg.config_text())?;
    write_file(
        &cfg.output_dir.join("trials.csv"),
        &trials_csv(&outcome, &echo, stamp),
    )?;
    write_file(
        &cfg.output_dir.join("convergence.csv"),
        &convergence_csv_from_rows(&outcome.aggregate.convergence, &echo, stamp),
    )?;
    if cfg.mode == TrainMode::Cddm {
        if let Some(record) = outcome.trials.iter().find_map(|t| t.result.as_ref().ok()) {
            write_file(
                &cfg.output_dir.join("theta_trial000.csv"),
                &theta_csv(record, &echo, stamp),
            )?;
        }
    }
    if let Some(model) = &outcome.first_model {
        network::save_model(model, &cfg.output_dir.join("model_trial000.txt"))?;
    }
    let text = format!(
        "# generated {stamp}\n# config {echo}\n\n{}",
        summary_text(cfg, &outcome)
    );
    write_file(&cfg.output_dir.join("summary.txt"), &text)?;

    let successes = outcome.success_count();
    let all_failures_partial = successes == 0
        && outcome
            .trials
            .iter()
            .all(|t| matches!(t.result, Err(TrainFailure::Partial { .. })));
    Ok(RunSummary {
        output_dir: cfg.output_dir.clone(),
        summary_text: summary_text(cfg, &outcome),
        trials: cfg.trials,
        successes,
        warnings: outcome.warnings,
        all_failures_partial,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub dataset: DataSpec,
    pub mode: TrainMode,
    pub folds: usize,
    pub k_prime_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub repetitions: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub theta0: f64,
    pub stall_q: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub train_fraction: f64,
    pub allow_small_k: bool,
}

impl CvConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KvMap::load(path)?;
        let dataset = DataSpec::parse(&kv.take_required("dataset")?);
        let (def_train, def_test) = match dataset {
            DataSpec::Tf1 => (1000, 300),
            DataSpec::Tf2 => (5000, 5000),
            DataSpec::Keel(_) => (0, 0),
        };
        let stock: CvPlan<f64> = CvPlan::with_default_grid(0);
        let cfg = CvConfig {
            mode: kv.take_required_parse("mode")?,
            folds: kv.take_parse_or("folds", 10)?,
            k_prime_grid: kv
                .take_usize_list("k_prime_grid")?
                .unwrap_or(stock.k_prime_grid),
            m_grid: kv.take_usize_list("m_grid")?.unwrap_or(stock.m_grid),
            repetitions: kv.take_parse_or("repetitions", 1)?,
            master_seed: kv.take_required_parse("master_seed")?,
            output_dir: PathBuf::from(kv.take_required("output_dir")?),
            theta0: kv.take_parse_or("theta0", -0.01)?,
            stall_q: kv.take_parse_or("Q", 50)?,
            n_train: kv.take_parse_or("n_train", def_train)?,
            n_test: kv.take_parse_or("n_test", def_test)?,
            noise: kv.take_parse_or("noise", 0.2)?,
            train_fraction: kv.take_parse_or("train_fraction", 0.75)?,
            allow_small_k: kv.take_parse_or("allow_small_k", true)?,
            dataset,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_prime_grid.is_empty() || self.m_grid.is_empty() {
            return Err(Error::Config("cross-validation grid is empty".into()));
        }
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.theta0 > 0.0 || self.theta0.is_nan() {
            return Err(Error::Config(format!(
                "theta0 must be <= 0, got {}",
                self.theta0
            )));
        }
        if self.stall_q < 1 {
            return Err(Error::Config("Q must be at least 1".into()));
        }
        if self.dataset.is_synthetic() && (self.n_train < 1 || self.n_test < 1) {
            return Err(Error::Config(
                "n_train and n_test must be at least 1 for synthetic data".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn plan(&self) -> CvPlan<f64> {
        CvPlan {
            folds: self.folds,
            k_prime_grid: self.k_prime_grid.clone(),
            m_grid: self.m_grid.clone(),
            repetitions: self.repetitions,
            master_seed: self.master_seed,
            theta0: self.theta0,
            stall_q: self.stall_q,
            allow_small_k: self.allow_small_k,
        }
    }

    fn echo_pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("dataset", self.dataset.label()),
            ("mode", self.mode.to_string()),
            ("folds", self.folds.to_string()),
            ("k_prime_grid", list(&self.k_prime_grid)),
            ("m_grid", list(&self.m_grid)),
            ("repetitions", self.repetitions.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("theta0", self.theta0.to_string()),
            ("Q", self.stall_q.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("noise", self.noise.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("allow_small_k", self.allow_small_k.to_string()),
        ]
    }

    pub fn echo(&self) -> String {
        self.echo_pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The training split a cross-validation runs on (normalized for KEEL data,
/// as-generated for synthetic data).
pub fn crossval_train_set(cfg: &CvConfig) -> Result<Dataset<f64>> {
    match &cfg.dataset {
        DataSpec::Keel(path) => {
            let data = dataset::load_keel(path)?;
            let (raw_train, _) =
                dataset::split(&data, cfg.train_fraction, derive_seed(cfg.master_seed, 0xDA7A))?;
            let normalizer = Normalizer::fit(&raw_train);
            normalizer.apply(&raw_train)
        }
        DataSpec::Tf1 => {
            let (train, _) =
                dataset::generate_tf1(cfg.n_train, cfg.n_test, derive_seed(cfg.master_seed, 0xCF))?;
            Ok(train)
        }
        DataSpec::Tf2 => {
            let (train, _) = dataset::generate_tf2(
                cfg.n_train,
                cfg.n_test,
                cfg.noise,
                derive_seed(cfg.master_seed, 0xCF),
            )?;
            Ok(train)
        }
    }
}

#[derive(Debug)]
pub struct CvRunSummary {
    pub output_dir: PathBuf,
    pub best_k_prime: usize,
    pub best_m: usize,
    pub cells: usize,
    pub warnings: Vec<String>,
    pub summary_text: String,
}

/// Runs the configured cross-validation and writes cv_scores.csv and
/// cv_summary.txt into the output directory.
pub fn run_crossval(cfg: &CvConfig) -> Result<CvRunSummary> {
    cfg.validate()?;
    let train = crossval_train_set(cfg)?;
    let out = modelselect::cross_validate(&train, &cfg.plan(), cfg.mode)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let echo = cfg.echo();
    let stamp = timestamp();

    let mut scores = csv_header(&echo, "k_prime,m,fold,rmse", stamp);
    for cell in &out.table {
        for (i, score) in cell.fold_scores.iter().enumerate() {
            let fold = i / cfg.repetitions;
            writeln!(scores, "{},{},{},{}", cell.k_prime, cell.m, fold, score)
                .expect("writing to string");
        }
    }
    write_file(&cfg.output_dir.join("cv_scores.csv"), &scores)?;

    let mut text = format!("# generated {stamp}\n# config {echo}\n\n");
    writeln!(
        text,
        "selected: k_prime={} m={} (mean validation RMSE over {} folds x {} repetitions)",
        out.best_k_prime, out.best_m, cfg.folds, cfg.repetitions
    )
    .expect("writing to string");
    let mut ranked: Vec<_> = out.table.iter().collect();
    ranked.sort_by(|a, b| a.mean.partial_cmp(&b.mean).expect("finite means"));
    for cell in ranked.iter().take(10) {
        writeln!(
            text,
            "cell k_prime={} m={}: mean rmse {:.6}",
            cell.k_prime, cell.m, cell.mean
        )
        .expect("writing to string");
    }
    for w in &out.warnings {
        writeln!(text, "warning: {w}").expect("writing to string");
    }
    write_file(&cfg.output_dir.join("cv_summary.txt"), &text)?;

    Ok(CvRunSummary {
        output_dir: cfg.output_dir.clone(),
        best_k_prime: out.best_k_prime,
        best_m: out.best_m,
        cells: out.table.len(),
        warnings: out.warnings,
        summary_text: text,
    })
}

fn read_csv_rows(path: &Path, expect_header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line != expect_header {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected header '{expect_header}', found '{line}'"),
                ));
            }
            header_seen = true;
            continue;
        }
        rows.push(line.split(',').map(|c| c.trim().to_string()).collect());
    }
    if !header_seen {
        return Err(Error::parse(path, 0, format!("missing header '{expect_header}'")));
    }
    Ok(rows)
}

fn parse_cell<T: FromStr>(path: &Path, row_idx: usize, cell: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    cell.parse().map_err(|e| {
        Error::parse(
            path,
            row_idx,
            format!("{what}: '{cell}': {e}"),
        )
    })
}

/// Recomputes the convergence percentile curves from a run's trials.csv.
pub fn plot_convergence(records_dir: &Path) -> Result<String> {
    let path = records_dir.join("trials.csv");
    let rows = read_csv_rows(
        &path,
        "trial,node_count,candidates_so_far,theta,train_rmse,test_rmse",
    )?;
    // node_count -> (train values, test values)
    let mut by_count: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 6 {
            return Err(Error::parse(&path, i + 1, "expected 6 columns"));
        }
        let count: usize = parse_cell(&path, i + 1, &row[1], "node_count")?;
        let train: f64 = parse_cell(&path, i + 1, &row[4], "train_rmse")?;
        let entry = by_count.entry(count).or_default();
        entry.0.push(train);
        if !row[5].is_empty() {
            entry.1.push(parse_cell(&path, i + 1, &row[5], "test_rmse")?);
        }
    }
    if by_count.is_empty() {
        return Err(Error::Config(format!(
            "{}: no trial rows to aggregate",
            path.display()
        )));
    }
    let mut out =
        String::from("node_count,train_median,train_p10,train_p90,test_median,test_p10,test_p90\n");
    for (count, (train, test)) in by_count {
        let train = spread_of(&train).expect("non-empty by construction");
        let test = spread_of(&test);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            count,
            train.median,
            train.p10,
            train.p90,
            opt_cell(test.map(|s| s.median)),
            opt_cell(test.map(|s| s.p10)),
            opt_cell(test.map(|s| s.p90)),
        )
        .expect("writing to string");
    }
    Ok(out)
}

/// Re-emits the first CD-DM trial's threshold trajectory.
pub fn plot_theta(records_dir: &Path) -> Result<String> {
    let path = records_dir.join("theta_trial000.csv");
    let rows = read_csv_rows(&path, "candidate_index,theta,accepted")?;
    let mut out = String::from("candidate_index,theta,accepted\n");
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::parse(&path, i + 1, "expected 3 columns"));
        }
        let idx: usize = parse_cell(&path, i + 1, &row[0], "candidate_index")?;
        let theta: f64 = parse_cell(&path, i + 1, &row[1], "theta")?;
        let accepted: u8 = parse_cell(&path, i + 1, &row[2], "accepted")?;
        writeln!(out, "{idx},{theta},{accepted}").expect("writing to string");
    }
    Ok(out)
}

/// Evaluates the stored first-trial model over a 300-point grid on [0, 1]:
/// x, analytic target, fitted value, and each node's weighted contribution.
pub fn plot_fitcurve(records_dir: &Path) -> Result<String> {
    let model: NetworkModel<f64> = network::load_model(&records_dir.join("model_trial000.txt"))?;
    if model.input_dim() != 1 {
        return Err(Error::Dimension {
            context: "fitcurve input dimension",
            expected: 1,
            got: model.input_dim(),
        });
    }
    let mut kv = KvMap::load(&records_dir.join("config.txt"))?;
    let dataset = DataSpec::parse(&kv.take_required("dataset")?);
    if dataset != DataSpec::Tf1 {
        return Err(Error::Config(format!(
            "fitcurve needs the tf1 dataset (analytic target); records are for '{}'",
            dataset.label()
        )));
    }

    let mut header = String::from("x,target,fitted");
    for j in 1..=model.node_count() {
        write!(header, ",node{j}").expect("writing to string");
    }
    let mut out = header;
    out.push('\n');
    let points = 300;
    for i in 0..points {
        let x = i as f64 / (points - 1) as f64;
        let target = dataset::target_tf1(x);
        let mut fitted = 0.0;
        let mut cells = String::new();
        for (node, beta) in model.nodes.iter().zip(&model.beta) {
            let contribution = beta * nodegen::sigmoid_response(node, &[x])?;
            fitted += contribution;
            write!(cells, ",{contribution}").expect("writing to string");
        }
        writeln!(out, "{x},{target},{fitted}{cells}").expect("writing to string");
    }
    Ok(out)
}

/// Reads prediction inputs: optional header, then rows of n (or n+1, the
/// trailing target being ignored) comma-separated values.
pub fn read_inputs_csv(path: &Path, n: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut inputs = Vec::new();
    let mut first_data_line = true;
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if first_data_line && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            // Header row.
            first_data_line = false;
            continue;
        }
        first_data_line = false;
        if cells.len() != n && cells.len() != n + 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {n} (or {}) values, found {}", n + 1, cells.len()),
            ));
        }
        let mut row = Vec::with_capacity(n);
        for cell in cells.iter().take(n) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("not numeric: '{cell}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, format!("not finite: '{cell}'")));
            }
            row.push(v);
        }
        inputs.push(row);
    }
    if inputs.is_empty() {
        return Err(Error::parse(path, 0, "no input rows"));
    }
    Ok(inputs)
}

/// Formats prediction output: the inputs echoed back plus a y_pred column.
pub fn predictions_csv(inputs: &[Vec<f64>], predictions: &[f64]) -> String {
    let n = inputs.first().map(|r| r.len()).unwrap_or(0);
    let mut header: Vec<String> = (1..=n).map(|j| format!("x{j}")).collect();
    header.push("y_pred".into());
    let mut out = header.join(",");
    out.push('\n');
    for (row, pred) in inputs.iter().zip(predictions) {
        for v in row {
            write!(out, "{v},").expect("writing to string");
        }
        writeln!(out, "{pred}").expect("writing to string");
    }
    out
}
