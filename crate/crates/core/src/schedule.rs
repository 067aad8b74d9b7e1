//! Exploration schedules.

use serde::{Deserialize, Serialize};

/// Linear ramp from `start` to `end` over the first `fraction` of the run,
/// then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearDecay {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl LinearDecay {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let span = self.fraction * total_steps as f64;
        if span <= 0.0 {
            return self.end;
        }
        let progress = step as f64 / span;
        if progress >= 1.0 {
            return self.end;
        }
        self.start + (self.end - self.start) * progress
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramps_then_holds() {
        let d = LinearDecay { start: 1.0, end: 0.05, fraction: 0.5 };
        assert_eq!(d.value(0, 100), 1.0);
        assert!((d.value(25, 100) - 0.525).abs() < 1e-12);
        assert_eq!(d.value(50, 100), 0.05);
        assert_eq!(d.value(99, 100), 0.05);
        assert_eq!(d.value(3, 0), 0.05);
    }
}
