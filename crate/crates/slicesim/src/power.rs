//! Linear per-slice power model and the derived energy-saving metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twin::Action;

/// Linear power model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// Static base power (W).
    pub p_static_w: f64,
    /// Bandwidth cost (W/MHz).
    pub c_bw_w_per_mhz: f64,
    /// CPU cost (W/GHz).
    pub c_cpu_w_per_ghz: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            p_static_w: 5.0,
            c_bw_w_per_mhz: 0.5,
            c_cpu_w_per_ghz: 0.2,
        }
    }
}

impl PowerParams {
    pub fn validate(&self) -> Result<()> {
        if self.p_static_w < 0.0 || self.c_bw_w_per_mhz < 0.0 || self.c_cpu_w_per_ghz < 0.0 {
            return Err(Error::Config("power coefficients must be >= 0".into()));
        }
        Ok(())
    }
}

/// Power draw of an allocation.
pub fn power_w(action: Action, params: &PowerParams) -> f64 {
    params.p_static_w
        + params.c_bw_w_per_mhz * action.bandwidth_mhz
        + params.c_cpu_w_per_ghz * action.cpu_ghz
}

/// Fractional power saving of `final_action` relative to `baseline`.
/// Negative when the final allocation draws more power than the baseline.
pub fn energy_saving_fraction(
    final_action: Action,
    baseline: Action,
    params: &PowerParams,
) -> Result<f64> {
    let base = power_w(baseline, params);
    if base <= 0.0 {
        return Err(Error::Parameter(format!(
            "baseline power must be > 0, got {base}"
        )));
    }
    Ok((base - power_w(final_action, params)) / base)
}
