//! Sampling-efficiency summary of a trajectory log.

use std::fmt::Write as _;

use pic_core::harness::TrajectoryLog;

/// Steps whose ESS falls below this fraction of the sample count are flagged.
pub const ESS_FLAG_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub min: f64,
    pub mean: f64,
    pub last: f64,
}

impl SeriesStats {
    fn of(values: &[f64]) -> Option<Self> {
        let last = *values.last()?;
        Some(SeriesStats {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            last,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub steps: usize,
    /// Steps that carry sampling diagnostics.
    pub sampled_steps: usize,
    pub ess: Option<SeriesStats>,
    pub entropy: Option<SeriesStats>,
    /// `(step, ess, threshold)` for every flagged step.
    pub flagged: Vec<(usize, f64, f64)>,
}

pub fn diagnose(log: &TrajectoryLog) -> Diagnosis {
    let mut ess = Vec::new();
    let mut entropy = Vec::new();
    let mut flagged = Vec::new();
    for r in log.rows() {
        if let Some(d) = &r.diagnostics {
            ess.push(d.ess);
            entropy.push(d.weight_entropy);
            let threshold = ESS_FLAG_FRACTION * d.num_samples as f64;
            if d.ess < threshold {
                flagged.push((r.step, d.ess, threshold));
            }
        }
    }
    Diagnosis {
        steps: log.len(),
        sampled_steps: ess.len(),
        ess: SeriesStats::of(&ess),
        entropy: SeriesStats::of(&entropy),
        flagged,
    }
}

pub fn render(d: &Diagnosis) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "steps: {} ({} with sampling diagnostics)", d.steps, d.sampled_steps);
    match (&d.ess, &d.entropy) {
        (Some(e), Some(h)) => {
            let _ = writeln!(out, "ess: min {:.4} mean {:.4} final {:.4}", e.min, e.mean, e.last);
            let _ = writeln!(
                out,
                "weight_entropy: min {:.4} mean {:.4} final {:.4}",
                h.min, h.mean, h.last
            );
            let _ = writeln!(
                out,
                "flagged steps (ess < {} K): {}",
                ESS_FLAG_FRACTION,
                d.flagged.len()
            );
            for (step, ess, thr) in &d.flagged {
                let _ = writeln!(out, "  step {step}: ess {ess:.4} < {thr:.4}");
            }
        }
        _ => {
            let _ = writeln!(out, "no sampling diagnostics in this log");
        }
    }
    out
}
