//! Update-magnitude, projection-ratio and softmax-gradient measurements.
//!
//! Everything here works on snapshots taken around an optimizer step; the
//! optimizers themselves carry no instrumentation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::UpdateParts;
use crate::params::{vectors_of, Param};
use crate::tensor::{dot, norm, Tensor};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{0} must be nonzero")]
    Zero(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("invalid probe input: {0}")]
    Probe(String),
    #[error(
        "logits {a} and {b} tie for the largest non-target logit; at eta = {eta} the ratios \
         are only meaningful for pairwise distinct logits"
    )]
    TiedMaximum { a: usize, b: usize, eta: f64 },
    #[error("writing diagnostics: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing diagnostics: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// Components of `g` parallel and orthogonal to `w`.
pub fn decompose_gradient(g: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if g.len() != w.len() {
        return Err(DiagnosticsError::Length(g.len(), w.len()));
    }
    let n = norm(w);
    if n == 0.0 {
        return Err(DiagnosticsError::Zero("weight vector"));
    }
    let unit: Vec<f64> = w.iter().map(|x| x / n).collect();
    let c = dot(g, &unit);
    let par: Vec<f64> = unit.iter().map(|u| c * u).collect();
    let perp = g.iter().zip(&par).map(|(a, b)| a - b).collect();
    Ok((par, perp))
}

/// Scalar projection of `delta_l` on `delta_p`, normalized by `|delta_p|`:
/// `(delta_l . delta_p) / |delta_p|^2`. Near -1 when the loss part cancels
/// the decay part.
pub fn projection_ratio(delta_l: &[f64], delta_p: &[f64]) -> Result<f64> {
    if delta_l.len() != delta_p.len() {
        return Err(DiagnosticsError::Length(delta_l.len(), delta_p.len()));
    }
    let pp = dot(delta_p, delta_p);
    if pp == 0.0 {
        return Err(DiagnosticsError::Zero("decay displacement"));
    }
    Ok(dot(delta_l, delta_p) / pp)
}

/// Equilibrium prediction `(|l_perp| / |l_par|) * alpha * lambda` for the
/// relative update of a weight vector under SGD with L2 decay.
pub fn expected_rel_update_sgd(l_perp_norm: f64, l_par_norm: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if l_par_norm == 0.0 {
        return Err(DiagnosticsError::Zero("parallel gradient norm"));
    }
    Ok(l_perp_norm / l_par_norm * alpha * lambda)
}

/// Logit scalings at or above this are treated as the large-scale regime,
/// where tied non-target maxima are rejected.
pub const LARGE_ETA: f64 = 1.0;

/// `|dL/dz_c| / |dL/dz_target|` for every non-target class `c`, in class
/// order, where `L` is the cross-entropy of `softmax(eta * z)`.
///
/// With `p = softmax(eta * z)` both gradients carry the factor `eta`, and
/// `|dL/dz_target| = eta * sum_{c != target} p_c`, so the ratios are a softmax
/// of `eta * z` over the non-target classes alone. They are evaluated in that
/// form, which stays finite for any `eta`.
pub fn softmax_grad_ratio_probe(logits: &[f64], target: usize, eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(DiagnosticsError::Probe(format!("eta must be positive, got {eta}")));
    }
    if logits.len() < 2 {
        return Err(DiagnosticsError::Probe("need at least two classes".into()));
    }
    if target >= logits.len() {
        return Err(DiagnosticsError::Probe(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(DiagnosticsError::Probe("logits must be finite".into()));
    }
    let others: Vec<usize> = (0..logits.len()).filter(|&c| c != target).collect();
    let mut best = others[0];
    for &c in &others[1..] {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    if eta >= LARGE_ETA {
        if let Some(&tie) = others.iter().find(|&&c| c != best && logits[c] == logits[best]) {
            return Err(DiagnosticsError::TiedMaximum {
                a: best.min(tie),
                b: best.max(tie),
                eta,
            });
        }
    }
    let top = logits[best];
    let e: Vec<f64> = others.iter().map(|&c| (eta * (logits[c] - top)).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// One measurement row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub layer_id: String,
    pub rel_update: f64,
    /// NaN when the step exposes no decay displacement.
    pub proj_ratio: f64,
    pub l_par_norm: f64,
    pub l_perp_norm: f64,
}

pub const CSV_HEADER: [&str; 6] = ["step", "layer_id", "rel_update", "proj_ratio", "l_par_norm", "l_perp_norm"];

/// Which layers to sample and how often.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Hidden-layer indices (0-based); empty selects every hidden layer.
    pub layers: Vec<usize>,
    /// Sample on steps that are multiples of this.
    pub stride: u64,
    /// Emit one row per unit as well as the layer mean.
    pub per_unit: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            stride: 10,
            per_unit: false,
        }
    }
}

impl DiagnosticsConfig {
    pub fn samples(&self, step: u64) -> bool {
        self.stride > 0 && step.is_multiple_of(self.stride)
    }

    pub fn selects(&self, layer: usize) -> bool {
        self.layers.is_empty() || self.layers.contains(&layer)
    }
}

/// Per-unit quantities for one weight matrix across one optimizer step.
///
/// `grad` is the loss gradient at `before`, `parts` the loss/decay split of
/// the displacement when the optimizer provides one.
pub fn measure_units(before: &Param, after: &Param, grad: &Tensor, parts: Option<&UpdateParts>) -> Result<Vec<[f64; 4]>> {
    let gv = vectors_of(grad);
    let split = parts.map(|p| (vectors_of(&p.loss), vectors_of(&p.decay)));
    let mut out = Vec::with_capacity(before.vector_count());
    for (j, g) in gv.iter().enumerate() {
        let (w0, w1) = (before.vector(j), after.vector(j));
        let rel = crate::optim::relative_update_magnitude(&w0, &w1).map_err(|_| DiagnosticsError::Zero("weight vector"))?;
        let (par, perp) = decompose_gradient(g, &w0)?;
        let ratio = match &split {
            Some((l, p)) if dot(&p[j], &p[j]) > 0.0 => projection_ratio(&l[j], &p[j])?,
            _ => f64::NAN,
        };
        out.push([rel, ratio, norm(&par), norm(&perp)]);
    }
    Ok(out)
}

/// Append-only record stream.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsRecorder {
    pub config: DiagnosticsConfig,
    records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsRecorder {
    pub fn new(config: DiagnosticsConfig) -> Self {
        Self {
            config,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn push(&mut self, record: DiagnosticsRecord) {
        self.records.push(record);
    }

    /// Record the layer mean (and per-unit rows if configured) for one layer.
    pub fn record_layer(&mut self, step: u64, layer_id: &str, units: &[[f64; 4]]) {
        if units.is_empty() {
            return;
        }
        let mean = |k: usize| {
            let vals: Vec<f64> = units.iter().map(|u| u[k]).filter(|x| !x.is_nan()).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        self.records.push(DiagnosticsRecord {
            step,
            layer_id: layer_id.to_string(),
            rel_update: mean(0),
            proj_ratio: mean(1),
            l_par_norm: mean(2),
            l_perp_norm: mean(3),
        });
        if self.config.per_unit {
            for (j, u) in units.iter().enumerate() {
                self.records.push(DiagnosticsRecord {
                    step,
                    layer_id: format!("{layer_id}:{j}"),
                    rel_update: u[0],
                    proj_ratio: u[1],
                    l_par_norm: u[2],
                    l_perp_norm: u[3],
                });
            }
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.layer_id.clone(),
                r.rel_update.to_string(),
                r.proj_ratio.to_string(),
                r.l_par_norm.to_string(),
                r.l_perp_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
