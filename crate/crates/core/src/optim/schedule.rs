use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// `alpha0 * (1 + cos(pi * t / T)) / 2`, no restarts.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub alpha0: f64,
    pub total_steps: u64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn constant(alpha0: f64) -> Self {
        Self {
            alpha0,
            total_steps: u64::MAX,
            kind: ScheduleKind::Constant,
        }
    }

    pub fn cosine(alpha0: f64, total_steps: u64) -> Self {
        Self {
            alpha0,
            total_steps,
            kind: ScheduleKind::Cosine,
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.alpha0,
            ScheduleKind::Cosine => {
                if self.total_steps == 0 || t >= self.total_steps {
                    return 0.0;
                }
                let frac = t as f64 / self.total_steps as f64;
                self.alpha0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    /// Rate for the 1-based optimizer step `t`.
    pub(crate) fn for_step(&self, t: u64) -> f64 {
        self.at(t.saturating_sub(1))
    }
}

pub fn lr_at(schedule: &LrSchedule, t: u64) -> f64 {
    schedule.at(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = LrSchedule::cosine(0.4, 100);
        assert_eq!(lr_at(&s, 0), 0.4);
        assert_eq!(lr_at(&s, 100), 0.0);
        assert!((lr_at(&s, 50) - 0.2).abs() < 1e-15);
        assert_eq!(lr_at(&s, 150), 0.0);
    }

    #[test]
    fn cosine_is_nonincreasing() {
        let s = LrSchedule::cosine(1.0, 37);
        let rates: Vec<f64> = (0..=37).map(|t| s.at(t)).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
        assert!(rates.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn constant_ignores_time() {
        let s = LrSchedule {
            alpha0: 0.1,
            total_steps: 10,
            kind: ScheduleKind::Constant,
        };
        assert_eq!(s.at(0), 0.1);
        assert_eq!(s.at(10), 0.1);
        assert_eq!(s.at(11), 0.1);
    }
}
