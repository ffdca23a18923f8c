//! The assembled network: hidden nodes plus output weights, batch prediction,
//! RMSE, and a versioned plain-text model file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::{Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nodegen::{sigmoid_response, HiddenNode};
use crate::scalar::Scalar;

const MODEL_MAGIC: &str = "cddm-model";
const MODEL_VERSION: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta<F> {
    /// "ddm" or "cddm".
    pub mode: String,
    pub k_prime: usize,
    pub theta0: F,
    pub stall_q: usize,
    pub seed: u64,
    pub pinv_tol: F,
}

/// A trained single-hidden-layer network with its input/target normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<F> {
    pub nodes: Vec<HiddenNode<F>>,
    pub beta: Vec<F>,
    pub normalizer: Normalizer<F>,
    pub meta: ModelMeta<F>,
}

impl<F: Scalar> NetworkModel<F> {
    pub fn new(
        nodes: Vec<HiddenNode<F>>,
        beta: Vec<F>,
        normalizer: Normalizer<F>,
        meta: ModelMeta<F>,
    ) -> Result<Self> {
        if beta.len() != nodes.len() {
            return Err(Error::Dimension {
                context: "output weight count",
                expected: nodes.len(),
                got: beta.len(),
            });
        }
        let n = normalizer.input_dim();
        for node in &nodes {
            if node.weights.len() != n {
                return Err(Error::Dimension {
                    context: "hidden node input dimension",
                    expected: n,
                    got: node.weights.len(),
                });
            }
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("output weights"));
        }
        Ok(NetworkModel {
            nodes,
            beta,
            normalizer,
            meta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.normalizer.input_dim()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Network output for one normalized input.
    pub fn predict(&self, x: &[F]) -> Result<F> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "predict input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut acc = F::zero();
        for (node, &b) in self.nodes.iter().zip(&self.beta) {
            acc += b * sigmoid_response(node, x)?;
        }
        Ok(acc)
    }

    pub fn predict_batch(&self, inputs: &[Vec<F>]) -> Result<Vec<F>> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn predict_dataset(&self, ds: &Dataset<F>) -> Result<Vec<F>> {
        (0..ds.len()).map(|i| self.predict(ds.input(i))).collect()
    }
}

/// Hidden-layer output matrix: entry (l, j) is node j evaluated at sample l.
/// Every entry lies strictly inside (0, 1).
pub fn hidden_outputs<F: Scalar>(nodes: &[HiddenNode<F>], ds: &Dataset<F>) -> Result<Matrix<F>> {
    let mut h = Matrix::zeros(ds.len(), nodes.len());
    for l in 0..ds.len() {
        let x = ds.input(l);
        for (j, node) in nodes.iter().enumerate() {
            h[(l, j)] = sigmoid_response(node, x)?;
        }
    }
    Ok(h)
}

/// One node's activation over a whole dataset, as a column vector.
pub fn hidden_column<F: Scalar>(node: &HiddenNode<F>, ds: &Dataset<F>) -> Result<Vec<F>> {
    (0..ds.len())
        .map(|l| sigmoid_response(node, ds.input(l)))
        .collect()
}

/// Root-mean-square error between predictions and targets.
pub fn rmse<F: Scalar>(predictions: &[F], targets: &[F]) -> Result<F> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension {
            context: "rmse",
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Config("rmse of an empty sample set".into()));
    }
    let sum: F = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .fold(F::zero(), |a, b| a + b);
    Ok((sum / F::from_usize_lossy(predictions.len())).sqrt())
}

fn fmt_float<F: Scalar>(v: F) -> String {
    format!("{:e}", v.to_f64().unwrap_or(f64::NAN))
}

/// Writes the model as versioned plain text. Floats are printed in
/// round-trippable scientific notation, one logical field per line.
pub fn save_model<F: Scalar>(model: &NetworkModel<F>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let n = model.input_dim();
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}").map_err(io_err)?;
    writeln!(w, "n {n}").map_err(io_err)?;
    writeln!(w, "nodes {}", model.node_count()).map_err(io_err)?;
    writeln!(w, "mode {}", model.meta.mode).map_err(io_err)?;
    writeln!(w, "k_prime {}", model.meta.k_prime).map_err(io_err)?;
    writeln!(w, "theta0 {}", fmt_float(model.meta.theta0)).map_err(io_err)?;
    writeln!(w, "Q {}", model.meta.stall_q).map_err(io_err)?;
    writeln!(w, "seed {}", model.meta.seed).map_err(io_err)?;
    writeln!(w, "pinv_tol {}", fmt_float(model.meta.pinv_tol)).map_err(io_err)?;
    writeln!(w, "input_bounds").map_err(io_err)?;
    for &(lo, hi) in &model.normalizer.input_bounds {
        writeln!(w, "{} {}", fmt_float(lo), fmt_float(hi)).map_err(io_err)?;
    }
    writeln!(w, "target_bounds").map_err(io_err)?;
    let (lo, hi) = model.normalizer.target_bounds;
    writeln!(w, "{} {}", fmt_float(lo), fmt_float(hi)).map_err(io_err)?;
    writeln!(w, "hidden").map_err(io_err)?;
    for node in &model.nodes {
        let mut cells: Vec<String> = node.weights.iter().map(|&v| fmt_float(v)).collect();
        cells.push(fmt_float(node.bias));
        cells.extend(node.anchor.iter().map(|&v| fmt_float(v)));
        writeln!(w, "{}", cells.join(" ")).map_err(io_err)?;
    }
    writeln!(w, "beta").map_err(io_err)?;
    for &b in &model.beta {
        writeln!(w, "{}", fmt_float(b)).map_err(io_err)?;
    }
    writeln!(w, "end").map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

struct ModelReader<'a> {
    path: &'a Path,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl<'a> ModelReader<'a> {
    fn next_line(&mut self) -> Result<String> {
        loop {
            match self.lines.next() {
                None => {
                    return Err(Error::ModelTruncated(format!(
                        "{}: file ends at line {}",
                        self.path.display(),
                        self.line_no
                    )))
                }
                Some(line) => {
                    self.line_no += 1;
                    let line = line.map_err(|e| Error::io(self.path, e))?;
                    if !line.trim().is_empty() {
                        return Ok(line.trim().to_string());
                    }
                }
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        match line.strip_prefix(key) {
            Some(rest) if rest.starts_with(' ') || rest.is_empty() => Ok(rest.trim().to_string()),
            _ => Err(Error::parse(
                self.path,
                self.line_no,
                format!("expected '{key} ...', found '{line}'"),
            )),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let s = self.keyed(key)?;
        self.parse_usize(&s)
    }

    fn keyed_float<F: Scalar>(&mut self, key: &str) -> Result<F> {
        let s = self.keyed(key)?;
        self.parse_float(&s)
    }

    fn parse_err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line_no, msg.into())
    }

    fn parse_float<F: Scalar>(&self, s: &str) -> Result<F> {
        let v: f64 = s
            .parse()
            .map_err(|_| self.parse_err(format!("not a number: '{s}'")))?;
        if !v.is_finite() {
            return Err(Error::NonFinite("model file value"));
        }
        Ok(F::from_f64_lossy(v))
    }

    fn parse_usize(&self, s: &str) -> Result<usize> {
        s.parse()
            .map_err(|_| self.parse_err(format!("not a count: '{s}'")))
    }
}

/// Reads a model back; rejects unknown versions and truncated files.
pub fn load_model<F: Scalar>(path: &Path) -> Result<NetworkModel<F>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = ModelReader {
        path,
        lines: BufReader::new(file).lines(),
        line_no: 0,
    };

    let header = r.next_line()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(r.parse_err(format!("not a {MODEL_MAGIC} file")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| r.parse_err("missing format version"))?;
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }

    let n = r.keyed_usize("n")?;
    let node_count = r.keyed_usize("nodes")?;
    let mode = r.keyed("mode")?;
    let k_prime = r.keyed_usize("k_prime")?;
    let theta0: F = r.keyed_float("theta0")?;
    let stall_q = r.keyed_usize("Q")?;
    let seed: u64 = {
        let s = r.keyed("seed")?;
        s.parse()
            .map_err(|_| r.parse_err(format!("not a seed: '{s}'")))?
    };
    let pinv_tol: F = r.keyed_float("pinv_tol")?;

    r.keyed("input_bounds")?;
    let mut input_bounds = Vec::with_capacity(n);
    for _ in 0..n {
        let line = r.next_line()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 2 {
            return Err(r.parse_err("expected 'min max'"));
        }
        input_bounds.push((r.parse_float::<F>(vals[0])?, r.parse_float::<F>(vals[1])?));
    }
    r.keyed("target_bounds")?;
    let line = r.next_line()?;
    let vals: Vec<&str> = line.split_whitespace().collect();
    if vals.len() != 2 {
        return Err(r.parse_err("expected 'min max'"));
    }
    let target_bounds = (r.parse_float::<F>(vals[0])?, r.parse_float::<F>(vals[1])?);

    r.keyed("hidden")?;
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let line = r.next_line()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 2 * n + 1 {
            return Err(r.parse_err(format!(
                "expected {} values per hidden node, found {}",
                2 * n + 1,
                vals.len()
            )));
        }
        let weights = vals[..n]
            .iter()
            .map(|s| r.parse_float::<F>(s))
            .collect::<Result<Vec<F>>>()?;
        let bias = r.parse_float::<F>(vals[n])?;
        let anchor = vals[n + 1..]
            .iter()
            .map(|s| r.parse_float::<F>(s))
            .collect::<Result<Vec<F>>>()?;
        nodes.push(HiddenNode {
            weights,
            bias,
            anchor,
        });
    }
    r.keyed("beta")?;
    let mut beta = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let line = r.next_line()?;
        beta.push(r.parse_float::<F>(&line)?);
    }
    let tail = r.next_line()?;
    if tail != "end" {
        return Err(r.parse_err(format!("expected 'end', found '{tail}'")));
    }

    NetworkModel::new(
        nodes,
        beta,
        Normalizer {
            input_bounds,
            target_bounds,
        },
        ModelMeta {
            mode,
            k_prime,
            theta0,
            stall_q,
            seed,
            pinv_tol,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::linalg::default_rank_tolerance;

    fn toy_model() -> NetworkModel<f64> {
        let nodes = vec![
            HiddenNode {
                weights: vec![4.0, -2.0],
                bias: 0.5,
                anchor: vec![0.1, 0.2],
            },
            HiddenNode {
                weights: vec![-1.0, 3.0],
                bias: -0.25,
                anchor: vec![0.9, 0.8],
            },
        ];
        let beta = vec![1.5, -0.75];
        NetworkModel::new(
            nodes,
            beta,
            Normalizer::identity(2),
            ModelMeta {
                mode: "cddm".into(),
                k_prime: 5,
                theta0: -0.01,
                stall_q: 50,
                seed: 42,
                pinv_tol: default_rank_tolerance::<f64>(10, 2),
            },
        )
        .unwrap()
    }

    #[test]
    fn predict_is_weighted_sigmoid_sum() {
        let model = toy_model();
        let x = [0.3, 0.6];
        let h1 = crate::nodegen::stable_sigmoid(4.0 * 0.3 - 2.0 * 0.6 + 0.5);
        let h2 = crate::nodegen::stable_sigmoid(-0.3 + 3.0 * 0.6 - 0.25);
        let expect = 1.5 * h1 - 0.75 * h2;
        assert!((model.predict(&x).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let model = toy_model();
        assert!(model.predict(&[0.1]).is_err());
    }

    #[test]
    fn mismatched_beta_length_rejected() {
        let m = toy_model();
        assert!(NetworkModel::new(m.nodes.clone(), vec![1.0], m.normalizer.clone(), m.meta).is_err());
    }

    #[test]
    fn hidden_outputs_strictly_inside_unit_interval() {
        let nodes = vec![
            HiddenNode {
                weights: vec![4000.0],
                bias: 0.0,
                anchor: vec![0.0],
            },
            HiddenNode {
                weights: vec![-4000.0],
                bias: 0.0,
                anchor: vec![0.0],
            },
        ];
        let samples: Vec<Sample<f64>> = (0..5)
            .map(|i| Sample {
                x: vec![i as f64 / 4.0],
                y: 0.0,
            })
            .collect();
        let ds = Dataset::new("sat", samples).unwrap();
        let h = hidden_outputs(&nodes, &ds).unwrap();
        for l in 0..5 {
            for j in 0..2 {
                assert!(h[(l, j)] > 0.0 && h[(l, j)] < 1.0);
            }
        }
    }

    #[test]
    fn rmse_reference_values() {
        // Residuals (1, -1): RMSE = 1. Residuals (3, 4): RMSE = sqrt(12.5).
        assert_eq!(rmse(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let r = rmse(&[3.0f64, 4.0], &[0.0, 0.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        // Oracle: sqrt(0.5) for residuals (1, 0).
        let r = rmse(&[1.0f64, 0.0], &[0.0, 0.0]).unwrap();
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-16);
    }

    #[test]
    fn rmse_rejects_empty_and_mismatched() {
        assert!(rmse::<f64>(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn model_file_round_trips_exactly() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let back: NetworkModel<f64> = load_model(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn model_round_trip_preserves_awkward_floats() {
        let mut model = toy_model();
        model.beta = vec![1.0 / 3.0, -1.0e-17];
        model.nodes[0].weights[0] = f64::MIN_POSITIVE;
        model.nodes[1].bias = 12345.678901234567;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let back: NetworkModel<f64> = load_model(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn unknown_version_rejected() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replace("cddm-model 1", "cddm-model 99");
        std::fs::write(&path, bumped).unwrap();
        match load_model::<f64>(&path) {
            Err(Error::ModelVersion { found: 99, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, cut).unwrap();
        match load_model::<f64>(&path) {
            Err(Error::ModelTruncated(_)) | Err(Error::Parse { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_end_marker_rejected() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.replace("\nend\n", "\n");
        std::fs::write(&path, cut).unwrap();
        assert!(load_model::<f64>(&path).is_err());
    }
}
