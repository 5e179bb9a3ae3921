use serde::{Deserialize, Serialize};

use super::{ScvxConfig, ScvxError};
use crate::conjunction::ConjunctionEvent;

/// Uniform impulse grid ending in a ballistic coast to closest approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// N + 1 node epochs (s); impulses are applied at nodes 0..N−1.
    pub node_times: Vec<f64>,
    pub n: usize,
    /// Nominal closest approach (s).
    pub t_ca: f64,
}

impl TimeGrid {
    pub fn t0(&self) -> f64 {
        self.node_times[0]
    }

    /// Length of the coast from the last node to closest approach (s).
    pub fn coast(&self) -> f64 {
        self.t_ca - self.node_times[self.n]
    }
}

/// Nodes t_i = t_CA − (K − i)Δt for i = 0..N, with K = ⌊lead/Δt⌋ and
/// N = min(K, N_max). The window opens `lead_time` before closest approach;
/// when the node cap binds, the grid ends early and a coast follows.
pub fn build_grid(event: &ConjunctionEvent, config: &ScvxConfig) -> Result<TimeGrid, ScvxError> {
    if !(config.delta_t > 0.0 && config.lead_time > 0.0) || !config.lead_time.is_finite() {
        return Err(ScvxError::InvalidConfig(format!(
            "lead time {} s and step {} s must be positive",
            config.lead_time, config.delta_t
        )));
    }
    let ratio = config.lead_time / config.delta_t;
    // Absorb round-off in exact multiples before taking the floor.
    let k = (ratio * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
    let n = k.min(config.n_max);
    if n < 1 {
        return Err(ScvxError::GridTooShort {
            lead_time: config.lead_time,
            delta_t: config.delta_t,
        });
    }
    let t_ca = event.primary.epoch;
    let node_times = (0..=n).map(|i| t_ca - (k - i) as f64 * config.delta_t).collect();
    Ok(TimeGrid { node_times, n, t_ca })
}
