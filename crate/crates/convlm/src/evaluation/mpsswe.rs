//! Matched-pairs significance test on per-segment (per-utterance) error
//! counts: Z = mean(d) * sqrt(n) / std(d) over the paired differences, with
//! a two-tailed p-value from the standard normal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpssweResult {
    pub z: f64,
    pub p_value: f64,
    pub n: usize,
    pub mean_diff: f64,
    pub std_diff: f64,
    /// All paired differences were zero; p is 1.0 by convention.
    pub degenerate: bool,
}

/// Two-tailed standard-normal p-value.
fn two_tailed_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Matched pairs test on per-segment error counts of systems A and B.
/// Differences are `errors_a[i] - errors_b[i]`; a positive Z means system A
/// makes more errors.
pub fn mpsswe(errors_a: &[f64], errors_b: &[f64]) -> Result<MpssweResult> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::data(format!(
            "mpsswe: {} vs {} segments",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let n = errors_a.len();
    if n < 2 {
        return Err(Error::data(format!("mpsswe needs >= 2 segments, got {n}")));
    }
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(MpssweResult {
            z: 0.0,
            p_value: 1.0,
            n,
            mean_diff: mean,
            std_diff: 0.0,
            degenerate: true,
        });
    }
    let z = mean * (n as f64).sqrt() / std;
    Ok(MpssweResult {
        z,
        p_value: two_tailed_p(z),
        n,
        mean_diff: mean,
        std_diff: std,
        degenerate: false,
    })
}
