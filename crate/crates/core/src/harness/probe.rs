use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::diagnostics::softmax_grad_ratio_probe;

pub const DEFAULT_ETAS: [f64; 5] = [1e-4, 1e-2, 1.0, 1e2, 1e3];

/// Where the probed logits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub classes: usize,
    pub etas: Vec<f64>,
    #[serde(default)]
    pub target: usize,
    /// Explicit logits; drawn from a standard normal with `seed` otherwise.
    #[serde(default)]
    pub logits: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            etas: DEFAULT_ETAS.to_vec(),
            target: 0,
            logits: None,
            seed: 0,
        }
    }

    pub fn resolve_logits(&self) -> Result<Vec<f64>> {
        match &self.logits {
            Some(z) if z.len() != self.classes => Err(HarnessError::Config(format!(
                "{} logits given for {} classes",
                z.len(),
                self.classes
            ))),
            Some(z) => Ok(z.clone()),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok((0..self.classes).map(|_| StandardNormal.sample(&mut rng)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub eta: f64,
    pub class: usize,
    pub ratio: f64,
}

/// One row per `(eta, non-target class)`, classes in ascending order.
pub fn probe_softmax(config: &ProbeConfig) -> Result<Vec<ProbeRow>> {
    if config.etas.is_empty() {
        return Err(HarnessError::Config("no eta values to probe".into()));
    }
    if let Some(e) = config.etas.iter().find(|e| !(**e > 0.0)) {
        return Err(HarnessError::Config(format!("eta values must be positive, got {e}")));
    }
    let z = config.resolve_logits()?;
    let classes: Vec<usize> = (0..z.len()).filter(|&c| c != config.target).collect();
    let mut rows = Vec::new();
    for &eta in &config.etas {
        let r = softmax_grad_ratio_probe(&z, config.target, eta)?;
        rows.extend(classes.iter().zip(r).map(|(&class, ratio)| ProbeRow { eta, class, ratio }));
    }
    Ok(rows)
}

pub fn probe_csv(rows: &[ProbeRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eta", "class", "ratio"])?;
    for r in rows {
        w.write_record([r.eta.to_string(), r.class.to_string(), r.ratio.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_class_limits() {
        let rows = probe_softmax(&ProbeConfig::new(10)).unwrap();
        assert_eq!(rows.len(), 5 * 9);
        let at = |eta: f64| rows.iter().filter(move |r| r.eta == eta).map(|r| r.ratio);
        assert!(at(1e-4).all(|r| (r - 1.0 / 9.0).abs() < 1e-3));
        let mut big: Vec<f64> = at(1e3).collect();
        big.sort_by(f64::total_cmp);
        assert!((big[8] - 1.0).abs() < 1e-6);
        assert!(big[..8].iter().all(|&r| r < 1e-6));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = ProbeConfig::new(3);
        c.etas = vec![1.0, -1.0];
        assert!(probe_softmax(&c).is_err());
        c.etas = vec![1.0];
        c.logits = Some(vec![1.0, 2.0]);
        assert!(probe_softmax(&c).is_err());
    }

    #[test]
    fn csv_has_one_row_per_pair() {
        let mut c = ProbeConfig::new(3);
        c.logits = Some(vec![0.0, 1.0, 2.0]);
        c.etas = vec![1.0];
        let text = probe_csv(&probe_softmax(&c).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("eta,class,ratio\n1,1,"));
    }
}
