//! Hidden-node construction: fits a local hyperplane to a neighborhood and
//! turns it into sigmoid parameters placing the inflection point at the
//! anchor with a matching local slope.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// Local linear model y ~ slopes . x + intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane<F> {
    pub slopes: Vec<F>,
    pub intercept: F,
}

/// One sigmoid hidden node h(x) = sigma(weights . x + bias).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenNode<F> {
    pub weights: Vec<F>,
    pub bias: F,
    /// The training point the node was anchored at; kept for diagnostics.
    pub anchor: Vec<F>,
}

/// Least-squares hyperplane through the neighborhood points.
///
/// The fit is centered: slopes solve the minimum-norm least-squares problem
/// on mean-shifted data, and the intercept is recovered from the means. With
/// fewer points than dimensions, or coincident points, the minimum-norm
/// solution keeps the slopes finite (all-coincident inputs give zero slopes
/// and the mean target as intercept).
pub fn fit_hyperplane<F: Scalar>(xs: &[&[F]], ys: &[F]) -> Result<Hyperplane<F>> {
    let count = xs.len();
    if count < 2 {
        return Err(Error::Config(format!(
            "hyperplane fit needs at least 2 points, got {count}"
        )));
    }
    if ys.len() != count {
        return Err(Error::Dimension {
            context: "fit_hyperplane targets",
            expected: count,
            got: ys.len(),
        });
    }
    let n = xs[0].len();
    for x in xs {
        if x.len() != n {
            return Err(Error::Dimension {
                context: "fit_hyperplane inputs",
                expected: n,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fit_hyperplane inputs"));
        }
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit_hyperplane targets"));
    }

    let denom = F::from_usize_lossy(count);
    let mut x_mean = vec![F::zero(); n];
    for x in xs {
        for (m, &v) in x_mean.iter_mut().zip(*x) {
            *m += v;
        }
    }
    for m in x_mean.iter_mut() {
        *m /= denom;
    }
    let y_mean = ys.iter().copied().sum::<F>() / denom;

    let design = Matrix::from_fn(count, n, |i, j| xs[i][j] - x_mean[j]);
    let rhs: Vec<F> = ys.iter().map(|&y| y - y_mean).collect();
    let slopes = linalg::lstsq(&design, &rhs)?;
    let intercept = y_mean - linalg::dot(&slopes, &x_mean);
    Ok(Hyperplane { slopes, intercept })
}

/// Sigmoid parameters from a fitted hyperplane and its anchor: the weights
/// are four times the local slopes so the sigmoid's tangent at the anchor
/// matches them, and the bias puts the inflection point (value 1/2) at the
/// anchor.
pub fn make_node<F: Scalar>(plane: &Hyperplane<F>, anchor: &[F]) -> Result<HiddenNode<F>> {
    if plane.slopes.len() != anchor.len() {
        return Err(Error::Dimension {
            context: "make_node anchor",
            expected: plane.slopes.len(),
            got: anchor.len(),
        });
    }
    let four = F::from_f64_lossy(4.0);
    let weights: Vec<F> = plane.slopes.iter().map(|&a| four * a).collect();
    let bias = -linalg::dot(&weights, anchor);
    Ok(HiddenNode {
        weights,
        bias,
        anchor: anchor.to_vec(),
    })
}

/// Logistic sigmoid evaluated without overflow, clamped to the open unit
/// interval so hidden-layer outputs never hit exactly 0 or 1.
pub fn stable_sigmoid<F: Scalar>(z: F) -> F {
    let s = if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    };
    s.max(F::min_positive_value())
        .min(F::one() - F::epsilon())
}

/// Node activation h(x) = sigma(weights . x + bias).
pub fn sigmoid_response<F: Scalar>(node: &HiddenNode<F>, x: &[F]) -> Result<F> {
    if x.len() != node.weights.len() {
        return Err(Error::Dimension {
            context: "sigmoid_response input",
            expected: node.weights.len(),
            got: x.len(),
        });
    }
    Ok(stable_sigmoid(linalg::dot(&node.weights, x) + node.bias))
}
