//! Datasets: in-memory samples, the two synthetic target functions, the KEEL
//! file loader, train/test splitting and min-max normalization.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F> {
    pub x: Vec<F>,
    pub y: F,
}

/// An ordered collection of samples with a common input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    name: String,
    samples: Vec<Sample<F>>,
    input_dim: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(name: impl Into<String>, samples: Vec<Sample<F>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("dataset must contain at least one sample".into()));
        }
        let input_dim = samples[0].x.len();
        if input_dim == 0 {
            return Err(Error::Config("dataset inputs must have at least one dimension".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != input_dim {
                return Err(Error::Dimension {
                    context: "dataset sample input",
                    expected: input_dim,
                    got: s.x.len(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) || !s.y.is_finite() {
                return Err(Error::Numerical(format!(
                    "sample {i} contains a non-finite value"
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            samples,
            input_dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn samples(&self) -> &[Sample<F>] {
        &self.samples
    }

    pub fn input(&self, i: usize) -> &[F] {
        &self.samples[i].x
    }

    pub fn target(&self, i: usize) -> F {
        self.samples[i].y
    }

    pub fn targets(&self) -> Vec<F> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Plain CSV dump (header `x1,...,xn,y`) for inspection and plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut header: Vec<String> = (1..=self.input_dim).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        writeln!(file, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for s in &self.samples {
            let mut cells: Vec<String> = s.x.iter().map(|v| format!("{v}")).collect();
            cells.push(format!("{}", s.y));
            writeln!(file, "{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// First synthetic target: a flat baseline with three narrow Gaussian bumps
/// of very different widths on [0, 1].
pub fn target_tf1<F: Scalar>(x: F) -> F {
    let c = |a: f64| F::from_f64_lossy(a);
    let sq = |v: F| v * v;
    c(0.2) * (-sq(c(10.0) * x - c(4.0))).exp()
        + c(0.5) * (-sq(c(80.0) * x - c(40.0))).exp()
        + c(0.3) * (-sq(c(80.0) * x - c(20.0))).exp()
}

/// Second synthetic target: a strongly oscillating two-variable surface
/// whose local frequency grows toward x = 1.
pub fn target_tf2<F: Scalar>(x1: F, x2: F) -> F {
    let c = |a: f64| F::from_f64_lossy(a);
    (c(20.0) * x1.exp()).sin() * x1 * x1 + (c(20.0) * x2.exp()).sin() * x2 * x2
}

/// Noise-free 1-D benchmark: `n_train` uniform points on [0, 1] and an
/// `n_test` regular grid including both endpoints.
pub fn generate_tf1<F: Scalar>(
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("tf1 sample counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<Sample<F>> = (0..n_train)
        .map(|_| {
            let x = F::from_f64_lossy(rng.random::<f64>());
            Sample {
                x: vec![x],
                y: target_tf1(x),
            }
        })
        .collect();
    let test: Vec<Sample<F>> = (0..n_test)
        .map(|i| {
            let t = if n_test == 1 {
                0.0
            } else {
                i as f64 / (n_test - 1) as f64
            };
            let x = F::from_f64_lossy(t);
            Sample {
                x: vec![x],
                y: target_tf1(x),
            }
        })
        .collect();
    Ok((Dataset::new("tf1-train", train)?, Dataset::new("tf1-test", test)?))
}

/// Noisy 2-D benchmark: both sets drawn uniformly on the unit square,
/// targets min-max normalized over the pooled clean values of both sets,
/// then perturbed with uniform noise on [-noise, noise].
pub fn generate_tf2<F: Scalar>(
    n_train: usize,
    n_test: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("tf2 sample counts must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!(
            "tf2 noise half-width must be finite and non-negative, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<(Vec<F>, F)> {
        (0..count)
            .map(|_| {
                let x1 = F::from_f64_lossy(rng.random::<f64>());
                let x2 = F::from_f64_lossy(rng.random::<f64>());
                let y = target_tf2(x1, x2);
                (vec![x1, x2], y)
            })
            .collect()
    };
    let raw_train = draw(n_train);
    let raw_test = draw(n_test);

    let mut y_min = F::infinity();
    let mut y_max = F::neg_infinity();
    for (_, y) in raw_train.iter().chain(&raw_test) {
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    let range = y_max - y_min;
    let normalize = |y: F| {
        if range > F::zero() {
            (y - y_min) / range
        } else {
            F::zero()
        }
    };
    let finish = |raw: Vec<(Vec<F>, F)>, rng: &mut ChaCha8Rng| -> Vec<Sample<F>> {
        raw.into_iter()
            .map(|(x, y)| {
                let e = if noise > 0.0 {
                    F::from_f64_lossy(rng.random_range(-noise..noise))
                } else {
                    F::zero()
                };
                Sample {
                    x,
                    y: normalize(y) + e,
                }
            })
            .collect()
    };
    let train = finish(raw_train, &mut rng);
    let test = finish(raw_test, &mut rng);
    Ok((Dataset::new("tf2-train", train)?, Dataset::new("tf2-test", test)?))
}

/// Loads a KEEL-format `.dat` file: `@`-prefixed header lines (the
/// `@attribute` lines fix the column order), then comma-separated rows after
/// `@data`. The last attribute is the regression target.
pub fn load_keel<F: Scalar>(path: &Path) -> Result<Dataset<F>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "keel".into());
    let mut attribute_count = 0usize;
    let mut in_data = false;
    let mut samples: Vec<Sample<F>> = Vec::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !in_data {
            if let Some(rest) = trimmed.strip_prefix('@') {
                let keyword = rest.split_whitespace().next().unwrap_or("").to_lowercase();
                match keyword.as_str() {
                    "relation" => {
                        if let Some(n) = rest.split_whitespace().nth(1) {
                            name = n.to_string();
                        }
                    }
                    "attribute" => attribute_count += 1,
                    "data" => {
                        if attribute_count < 2 {
                            return Err(Error::parse(
                                path,
                                line_no,
                                format!(
                                    "needs at least 2 attributes before @data, found {attribute_count}"
                                ),
                            ));
                        }
                        in_data = true;
                    }
                    "inputs" | "input" | "outputs" | "output" => {}
                    other => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unknown header keyword '@{other}'"),
                        ))
                    }
                }
            } else {
                return Err(Error::parse(
                    path,
                    line_no,
                    "expected '@'-prefixed header line before @data".to_string(),
                ));
            }
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cells.len() != attribute_count {
            return Err(Error::parse(
                path,
                line_no,
                format!(
                    "expected {attribute_count} comma-separated values, found {}",
                    cells.len()
                ),
            ));
        }
        let mut values = Vec::with_capacity(attribute_count);
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(
                    path,
                    line_no,
                    format!("column {} is not numeric: '{cell}'", col + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("column {} is not finite: '{cell}'", col + 1),
                ));
            }
            values.push(F::from_f64_lossy(v));
        }
        let y = values.pop().expect("at least two attributes");
        samples.push(Sample { x: values, y });
    }
    if !in_data {
        return Err(Error::parse(path, 0, "no @data section found".to_string()));
    }
    if samples.is_empty() {
        return Err(Error::parse(path, 0, "no data rows after @data".to_string()));
    }
    Dataset::new(name, samples)
}

/// Random train/test split. The train side gets round(fraction * N) samples
/// chosen by a seeded shuffle; both sides preserve the original sample order.
pub fn split<F: Scalar>(
    ds: &Dataset<F>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = ds.len();
    let train_size = (train_fraction * n as f64).round() as usize;
    if train_size == 0 || train_size >= n {
        return Err(Error::Config(format!(
            "split of {n} samples at fraction {train_fraction} leaves one side empty"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = indices[..train_size].to_vec();
    let mut test_idx: Vec<usize> = indices[train_size..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| -> Vec<Sample<F>> {
        idx.iter().map(|&i| ds.samples()[i].clone()).collect()
    };
    Ok((
        Dataset::new(format!("{}-train", ds.name()), pick(&train_idx))?,
        Dataset::new(format!("{}-test", ds.name()), pick(&test_idx))?,
    ))
}

/// Per-column min-max bounds fitted on a training set, mapping inputs and
/// target to [0, 1]. Columns with zero range map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<F> {
    pub input_bounds: Vec<(F, F)>,
    pub target_bounds: (F, F),
}

impl<F: Scalar> Normalizer<F> {
    pub fn fit(ds: &Dataset<F>) -> Self {
        let n = ds.input_dim();
        let mut input_bounds = vec![(F::infinity(), F::neg_infinity()); n];
        let mut target_bounds = (F::infinity(), F::neg_infinity());
        for s in ds.samples() {
            for (b, &v) in input_bounds.iter_mut().zip(&s.x) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
            target_bounds.0 = target_bounds.0.min(s.y);
            target_bounds.1 = target_bounds.1.max(s.y);
        }
        Normalizer {
            input_bounds,
            target_bounds,
        }
    }

    /// Bounds that make both directions the identity map.
    pub fn identity(input_dim: usize) -> Self {
        Normalizer {
            input_bounds: vec![(F::zero(), F::one()); input_dim],
            target_bounds: (F::zero(), F::one()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_bounds.len()
    }

    fn forward(v: F, (lo, hi): (F, F)) -> F {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            F::zero()
        }
    }

    fn backward(v: F, (lo, hi): (F, F)) -> F {
        if hi > lo {
            lo + v * (hi - lo)
        } else {
            lo
        }
    }

    pub fn normalize_input(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.input_bounds.len() {
            return Err(Error::Dimension {
                context: "normalize_input",
                expected: self.input_bounds.len(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.input_bounds)
            .map(|(&v, &b)| Self::forward(v, b))
            .collect())
    }

    pub fn normalize_target(&self, y: F) -> F {
        Self::forward(y, self.target_bounds)
    }

    pub fn denormalize_target(&self, y: F) -> F {
        Self::backward(y, self.target_bounds)
    }

    pub fn apply(&self, ds: &Dataset<F>) -> Result<Dataset<F>> {
        let samples = ds
            .samples()
            .iter()
            .map(|s| {
                Ok(Sample {
                    x: self.normalize_input(&s.x)?,
                    y: self.normalize_target(s.y),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(ds.name(), samples)
    }

    /// Undoes `apply`; columns with zero range recover their constant value.
    pub fn invert(&self, ds: &Dataset<F>) -> Result<Dataset<F>> {
        if ds.input_dim() != self.input_bounds.len() {
            return Err(Error::Dimension {
                context: "normalizer invert",
                expected: self.input_bounds.len(),
                got: ds.input_dim(),
            });
        }
        let samples = ds
            .samples()
            .iter()
            .map(|s| Sample {
                x: s.x
                    .iter()
                    .zip(&self.input_bounds)
                    .map(|(&v, &b)| Self::backward(v, b))
                    .collect(),
                y: self.denormalize_target(s.y),
            })
            .collect();
        Dataset::new(ds.name(), samples)
    }
}
