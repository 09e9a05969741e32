//! Scalar objectives with analytic partial derivatives.

use nalgebra::DMatrix;
use thiserror::Error;

pub const DEFAULT_MMTG_LAMBDA: f64 = 0.5;
pub const DEFAULT_PLAIN_LAMBDA: f64 = 1.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("label {label} out of range for {len} logits")]
    IndexOutOfRange { label: usize, len: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
}

/// A loss value and its gradient with respect to the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<G = Vec<f64>> {
    pub value: f64,
    pub grad: G,
}

/// Gradients of the alignment loss with respect to both embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub geo: DMatrix<f64>,
    pub text: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub temperature: f64,
    pub batch_size: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            batch_size: 64,
        }
    }
}

/// Mean absolute error; the subgradient at an exact tie is 0.
pub fn mae_loss(preds: &[f64], targets: &[f64]) -> Result<LossValue, LossError> {
    if preds.len() != targets.len() {
        return Err(LossError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(LossError::Empty);
    }
    let n = preds.len() as f64;
    let mut value = 0.0;
    let grad = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let r = p - t;
            value += r.abs();
            if r > 0.0 {
                1.0 / n
            } else if r < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue { value: value / n, grad })
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `-log softmax(logits)[label]`, max-shifted for stability.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<LossValue, LossError> {
    if label >= logits.len() {
        return Err(LossError::IndexOutOfRange {
            label,
            len: logits.len(),
        });
    }
    let value = log_sum_exp(logits) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok(LossValue { value, grad })
}

/// `lambda * l_mae + l_ce`; gradient is `[d/dl_mae, d/dl_ce]`.
pub fn plain_combined(l_mae: f64, l_ce: f64, lambda: f64) -> LossValue {
    LossValue {
        value: lambda * l_mae + l_ce,
        grad: vec![lambda, 1.0],
    }
}

/// Max–min tanh-gated combination `L_max * (2 - lambda * tanh(L_min))`.
///
/// Gradient is `[d/dl_mae, d/dl_ce]`. When the two losses are equal,
/// `l_mae` takes the role of `L_max`.
pub fn mmtg_combined(l_mae: f64, l_ce: f64, lambda: f64) -> LossValue {
    debug_assert!(lambda > 0.0 && lambda <= 1.0, "lambda must lie in (0, 1]");
    let mae_is_max = l_mae >= l_ce;
    let (big, small) = if mae_is_max { (l_mae, l_ce) } else { (l_ce, l_mae) };
    let t = small.tanh();
    let value = big * (2.0 - lambda * t);
    let d_big = 2.0 - lambda * t;
    let d_small = -lambda * big * (1.0 - t * t);
    let grad = if mae_is_max {
        vec![d_big, d_small]
    } else {
        vec![d_small, d_big]
    };
    LossValue { value, grad }
}

fn normalize_rows(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>), LossError> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(LossError::ZeroNormRow(i));
        }
        row /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

/// Back-propagates through row normalisation `u = x / |x|`.
fn normalize_backward(unit: &DMatrix<f64>, norms: &[f64], grad_unit: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = grad_unit.clone();
    for i in 0..unit.nrows() {
        let u = unit.row(i);
        let g = grad_unit.row(i);
        let proj = u.dot(&g);
        let row = (g - u * proj) / norms[i];
        out.set_row(i, &row);
    }
    out
}

/// Symmetric InfoNCE over cosine similarities scaled by `1 / temperature`;
/// row `i` of `geo` and of `text` form the positive pair.
pub fn info_nce(
    geo: &DMatrix<f64>,
    text: &DMatrix<f64>,
    temperature: f64,
) -> Result<LossValue<PairGrad>, LossError> {
    if geo.shape() != text.shape() {
        return Err(LossError::ShapeMismatch(geo.shape(), text.shape()));
    }
    if !(temperature > 0.0) {
        return Err(LossError::NonPositiveTemperature(temperature));
    }
    let b = geo.nrows();
    if b == 0 {
        return Err(LossError::Empty);
    }
    let (g, gn) = normalize_rows(geo)?;
    let (t, tn) = normalize_rows(text)?;
    let s = &g * t.transpose() / temperature;
    let bf = b as f64;

    let mut value = 0.0;
    let mut ds = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        let row: Vec<f64> = s.row(i).iter().copied().collect();
        value += log_sum_exp(&row) - s[(i, i)];
        for (j, p) in softmax(&row).into_iter().enumerate() {
            ds[(i, j)] += p;
        }
    }
    for j in 0..b {
        let col: Vec<f64> = s.column(j).iter().copied().collect();
        value += log_sum_exp(&col) - s[(j, j)];
        for (i, p) in softmax(&col).into_iter().enumerate() {
            ds[(i, j)] += p;
        }
    }
    for i in 0..b {
        ds[(i, i)] -= 2.0;
    }
    ds /= 2.0 * bf;
    let value = value / (2.0 * bf);

    let grad_g = &ds * &t / temperature;
    let grad_t = ds.transpose() * &g / temperature;
    Ok(LossValue {
        value,
        grad: PairGrad {
            geo: normalize_backward(&g, &gn, &grad_g),
            text: normalize_backward(&t, &tn, &grad_t),
        },
    })
}
