use serde::{Deserialize, Serialize};

use super::adam::ema_corrected;
use super::{AdamHyper, OptimError, Result};
use crate::tensor::{dot, norm};

/// Tolerance on `|w| = 1` accepted by the sphere operations.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// First moment vector and the single second-moment scalar of one weight
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMoments {
    pub m: Vec<f64>,
    pub v: f64,
}

impl VectorMoments {
    pub fn zeros(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: 0.0,
        }
    }
}

/// Result of one vector step.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStep {
    /// The renormalized weight vector.
    pub w: Vec<f64>,
    /// The displaced vector before renormalization.
    pub w_bar: Vec<f64>,
    pub moments: VectorMoments,
    /// Bias-corrected first moment.
    pub m_hat: Vec<f64>,
    pub m_hat_norm: f64,
    pub v_hat_sqrt: f64,
}

impl VectorStep {
    /// `lr * |m_hat| / sqrt(v_hat)`, the first-order size of the step
    /// relative to the unit weight.
    pub fn predicted_rel_update(&self, lr: f64) -> f64 {
        lr * self.m_hat_norm / self.v_hat_sqrt
    }
}

fn check_unit(w: &[f64]) -> Result<()> {
    let n = norm(w);
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(OptimError::NotUnitNorm { norm: n });
    }
    Ok(())
}

/// Tangent component `g - (g . w) w` of `g_raw` at the unit vector `w`.
pub fn project_to_sphere(g_raw: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if g_raw.len() != w.len() {
        return Err(OptimError::Length(g_raw.len(), w.len()));
    }
    check_unit(w)?;
    let radial = dot(g_raw, w);
    Ok(g_raw.iter().zip(w).map(|(g, wi)| g - radial * wi).collect())
}

/// One ND-Adam update of a unit weight vector at 1-based step `t`.
///
/// The gradient is projected onto the tangent space, the moments are
/// updated (one second-moment scalar from `|g|^2`), bias corrected, and the
/// displaced vector is renormalized. `moments` is left untouched on error.
pub fn nd_adam_vector_step(
    w: &[f64],
    g_raw: &[f64],
    moments: &VectorMoments,
    hyper: &AdamHyper,
    t: u64,
    lr: f64,
) -> Result<VectorStep> {
    if moments.m.len() != w.len() {
        return Err(OptimError::Length(moments.m.len(), w.len()));
    }
    let g = project_to_sphere(g_raw, w)?;
    let AdamHyper { beta1, beta2, epsilon } = *hyper;
    let (m, m_hat): (Vec<f64>, Vec<f64>) = moments
        .m
        .iter()
        .zip(&g)
        .map(|(&m, &gi)| ema_corrected(m, gi, beta1, t))
        .unzip();
    let (v, v_hat) = ema_corrected(moments.v, dot(&g, &g), beta2, t);
    let v_hat_sqrt = v_hat.sqrt();
    let denom = v_hat_sqrt + epsilon;

    // A zero denominator only arises with zero moments and epsilon = 0; the
    // update is then zero.
    let w_bar: Vec<f64> = if denom == 0.0 {
        w.to_vec()
    } else {
        w.iter().zip(&m_hat).map(|(wi, mh)| wi - lr * mh / denom).collect()
    };
    let n = norm(&w_bar);
    let m_hat_norm = norm(&m_hat);
    if !(n > 0.0) || !n.is_finite() {
        return Err(OptimError::DegenerateUpdate {
            step: t,
            name: String::new(),
            vector: 0,
            m_hat_norm,
            v_hat_sqrt,
            lr,
        });
    }
    Ok(VectorStep {
        w: w_bar.iter().map(|x| x / n).collect(),
        w_bar,
        moments: VectorMoments { m, v },
        m_hat,
        m_hat_norm,
        v_hat_sqrt,
    })
}

/// `|after - before| / |before|`.
pub fn relative_update_magnitude(w_before: &[f64], w_after: &[f64]) -> Result<f64> {
    if w_before.len() != w_after.len() {
        return Err(OptimError::Length(w_before.len(), w_after.len()));
    }
    let n = norm(w_before);
    if n == 0.0 {
        return Err(OptimError::ZeroVector);
    }
    let d: f64 = w_before
        .iter()
        .zip(w_after)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    Ok(d / n)
}
