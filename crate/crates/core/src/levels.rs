//! The fragmentation-level grid shared by sweeps, entropy curves and reports.

use crate::error::{Error, Result};

/// Levels are compared through an integer key in thousandths so that
/// `0.1 + 0.2` and `0.3` land in the same bucket.
pub fn level_key(level: f64) -> i64 {
    (level * 1000.0).round() as i64
}

pub fn same_level(a: f64, b: f64) -> bool {
    level_key(a) == level_key(b)
}

/// The eleven-level grid `0.0, 0.1, ..., 1.0`.
pub fn default_levels() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Parses `start:end:step` (inclusive) or a comma-separated list of levels.
pub fn parse_levels(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    let levels = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::arg(format!("level range `{text}` is not start:end:step")));
        }
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::arg(format!("level range `{text}`: {e}")))?;
        let (start, end, step) = (nums[0], nums[1], nums[2]);
        if step <= 0.0 || end < start {
            return Err(Error::arg(format!("level range `{text}` is empty")));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| round6(start + i as f64 * step))
            .collect::<Vec<_>>()
    } else {
        text.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::arg(format!("level `{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    if levels.is_empty() {
        return Err(Error::arg("no levels given"));
    }
    if let Some(bad) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::arg(format!("level {bad} outside [0, 1]")));
    }
    Ok(levels)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}
