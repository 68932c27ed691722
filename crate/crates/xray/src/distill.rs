//! Weak-to-strong distillation loss arithmetic on plain numeric tensors.
//!
//! The head loss combines a student-first KL divergence over classification
//! distributions with an MSE over regression outputs; the feature loss is an
//! MSE over (already projected) backbone maps; the total blends heads,
//! feature, and an externally supplied detection scalar with the three
//! lambda weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TEACHER_EPS: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("tensor data length {got} does not match shape product {want}")]
    BadDataLength { got: usize, want: usize },
    #[error("tensor contains a non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("class slice {slice} sums to {sum}, not 1 within {SIMPLEX_TOL}")]
    NotNormalized { slice: usize, sum: f64 },
    #[error("class slice {slice} has a negative entry")]
    NegativeProbability { slice: usize },
    #[error("tensor has no axes; a class axis is required")]
    NoClassAxis,
    #[error("detection loss must be nonnegative, got {0}")]
    NegativeDetectionLoss(f64),
    #[error("projection dims mismatch: features {0:?}, weights {1:?}, bias {2:?}")]
    ProjectionDims(Vec<usize>, Vec<usize>, Vec<usize>),
}

/// Dense row-major tensor of finite f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DistillError> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(DistillError::BadDataLength { got: data.len(), want });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DistillError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<(), DistillError> {
        if self.shape != other.shape {
            return Err(DistillError::ShapeMismatch(self.shape.clone(), other.shape.clone()));
        }
        Ok(())
    }
}

/// The alpha/lambda weights of the loss blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillationConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self { alpha1: 2.0, alpha2: 1.0, lambda1: 0.7, lambda2: 0.3, lambda3: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_heads: f64,
    pub l_kd_cls: f64,
    pub l_kd_reg: f64,
    pub l_feat: f64,
    pub l_det: f64,
    pub total: f64,
}

/// Mean over all elements of the squared difference.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64, DistillError> {
    a.check_same_shape(b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

fn validate_simplex(t: &Tensor, classes: usize) -> Result<(), DistillError> {
    for (s, chunk) in t.data.chunks_exact(classes).enumerate() {
        let mut sum = 0.0;
        for &v in chunk {
            if v < 0.0 {
                return Err(DistillError::NegativeProbability { slice: s });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(DistillError::NotNormalized { slice: s, sum });
        }
    }
    Ok(())
}

/// Student-first KL divergence, averaged over all non-class positions. The
/// last axis is the class axis; terms with s = 0 contribute zero and the
/// teacher probability is clamped below at 1e-12.
pub fn kl_divergence(s: &Tensor, t: &Tensor) -> Result<f64, DistillError> {
    s.check_same_shape(t)?;
    let classes = *s.shape.last().ok_or(DistillError::NoClassAxis)?;
    if classes == 0 || s.is_empty() {
        return Ok(0.0);
    }
    validate_simplex(s, classes)?;
    validate_simplex(t, classes)?;
    let slices = s.len() / classes;
    let mut total = 0.0;
    for (sc, tc) in s.data.chunks_exact(classes).zip(t.data.chunks_exact(classes)) {
        for (&sv, &tv) in sc.iter().zip(tc) {
            if sv > 0.0 {
                total += sv * (sv / tv.max(TEACHER_EPS)).ln();
            }
        }
    }
    Ok(total / slices as f64)
}

/// Analytic gradient of a single-slice student-first KL with respect to the
/// student probabilities: d/ds_c = ln(s_c / t_c) + 1 where s_c > 0.
pub fn kl_gradient_slice(s: &[f64], t: &[f64]) -> Vec<f64> {
    s.iter()
        .zip(t)
        .map(|(&sv, &tv)| if sv > 0.0 { (sv / tv.max(TEACHER_EPS)).ln() + 1.0 } else { 0.0 })
        .collect()
}

/// alpha1 * KL(s_cls || t_cls) + alpha2 * MSE(s_reg, t_reg).
pub fn heads_loss(
    s_cls: &Tensor,
    t_cls: &Tensor,
    s_reg: &Tensor,
    t_reg: &Tensor,
    cfg: &DistillationConfig,
) -> Result<f64, DistillError> {
    Ok(cfg.alpha1 * kl_divergence(s_cls, t_cls)? + cfg.alpha2 * mse(s_reg, t_reg)?)
}

/// Feature-map MSE; the channel projection must already be applied.
pub fn feature_loss(t_back: &Tensor, s_back_projected: &Tensor) -> Result<f64, DistillError> {
    mse(t_back, s_back_projected)
}

/// Fixed per-location linear channel map (1x1 convolution):
/// out[c',h,w] = sum_c weights[c',c] * features[c,h,w] + bias[c'].
pub fn project_channels(
    features: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, DistillError> {
    let dims_err = || {
        DistillError::ProjectionDims(
            features.shape.clone(),
            weights.shape.clone(),
            bias.shape.clone(),
        )
    };
    let [c, h, w] = features.shape[..] else { return Err(dims_err()) };
    let [c_out, c_in] = weights.shape[..] else { return Err(dims_err()) };
    if c_in != c || bias.shape != vec![c_out] {
        return Err(dims_err());
    }
    let hw = h * w;
    let mut out = vec![0.0; c_out * hw];
    for co in 0..c_out {
        let b = bias.data[co];
        for ci in 0..c {
            let wgt = weights.data[co * c_in + ci];
            for p in 0..hw {
                out[co * hw + p] += wgt * features.data[ci * hw + p];
            }
        }
        for p in 0..hw {
            out[co * hw + p] += b;
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

/// Blends heads, feature, and detection components into the total loss.
pub fn total_loss(
    l_heads: f64,
    l_kd_cls: f64,
    l_kd_reg: f64,
    l_feat: f64,
    l_det: f64,
    cfg: &DistillationConfig,
) -> Result<LossBreakdown, DistillError> {
    if l_det < 0.0 {
        return Err(DistillError::NegativeDetectionLoss(l_det));
    }
    Ok(LossBreakdown {
        l_heads,
        l_kd_cls,
        l_kd_reg,
        l_feat,
        l_det,
        total: cfg.lambda1 * l_heads + cfg.lambda2 * l_feat + cfg.lambda3 * l_det,
    })
}

/// Convenience wrapper computing every component from raw tensors.
#[allow(clippy::too_many_arguments)]
pub fn full_breakdown(
    s_cls: &Tensor,
    t_cls: &Tensor,
    s_reg: &Tensor,
    t_reg: &Tensor,
    s_back_projected: &Tensor,
    t_back: &Tensor,
    l_det: f64,
    cfg: &DistillationConfig,
) -> Result<LossBreakdown, DistillError> {
    let l_kd_cls = kl_divergence(s_cls, t_cls)?;
    let l_kd_reg = mse(s_reg, t_reg)?;
    let l_heads = cfg.alpha1 * l_kd_cls + cfg.alpha2 * l_kd_reg;
    let l_feat = feature_loss(t_back, s_back_projected)?;
    total_loss(l_heads, l_kd_cls, l_kd_reg, l_feat, l_det, cfg)
}
