use serde::{Deserialize, Serialize};

use crate::error::ExoError;
use crate::model::ExoMdpModel;
use crate::Result;

/// Joint state spaces above this size are refused unless the caller raises
/// the cap explicitly.
pub const DEFAULT_STATE_CAP: u128 = 10_000_000;

/// Episodes a single run may draw in total before sampling is refused.
pub const DEFAULT_EPISODE_CAP: u64 = 50_000_000;

/// Default leading constant for the sample-size rules below.
pub const DEFAULT_C_CONST: f64 = 4.0;

/// Resource ceilings threaded through every sampling entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Caps {
    pub state_cap: u128,
    pub episode_cap: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            state_cap: DEFAULT_STATE_CAP,
            episode_cap: DEFAULT_EPISODE_CAP,
        }
    }
}

/// Running tally of episodes drawn against a cap. Refuses the charge that
/// would cross the cap rather than truncating it.
#[derive(Debug, Clone)]
pub struct BudgetMeter {
    cap: u64,
    used: u64,
}

impl BudgetMeter {
    pub fn new(cap: u64) -> Self {
        BudgetMeter { cap, used: 0 }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn charge(&mut self, episodes: u64) -> Result<()> {
        let total = self.used.saturating_add(episodes);
        if total > self.cap {
            return Err(ExoError::EpisodeBudget {
                requested: total,
                cap: self.cap,
            });
        }
        self.used = total;
        Ok(())
    }
}

/// Sampling knobs shared by the cover-construction and policy-search phases.
/// `n_override`, when set, replaces the computed per-round sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleConfig {
    pub eps: f64,
    pub delta: f64,
    pub c_const: f64,
    pub n_override: Option<u64>,
}

impl SampleConfig {
    pub fn new(eps: f64, delta: f64) -> Self {
        SampleConfig {
            eps,
            delta,
            c_const: DEFAULT_C_CONST,
            n_override: None,
        }
    }

    pub fn with_c_const(mut self, c_const: f64) -> Self {
        self.c_const = c_const;
        self
    }

    pub fn with_n_override(mut self, n: Option<u64>) -> Self {
        self.n_override = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(ExoError::InvalidArgument(format!(
                "accuracy parameter must be positive, got {}",
                self.eps
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ExoError::InvalidArgument(format!(
                "failure probability must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.c_const > 0.0) {
            return Err(ExoError::InvalidArgument(format!(
                "sample-size constant must be positive, got {}",
                self.c_const
            )));
        }
        Ok(())
    }

    /// Per-round episode count for the backward cover and policy-search
    /// loops: ceil(C * A * S^{4k} * H^2 * k^3 * ln(d*S*A*H/delta) / eps^2),
    /// with k and the log floored at 1 so degenerate inputs stay positive.
    pub fn round_episodes(&self, model: &ExoMdpModel) -> u64 {
        self.n_override.unwrap_or_else(|| {
            let a = model.a_count() as f64;
            let s = model.s_per_factor() as f64;
            let k = (model.k().max(1)) as f64;
            let h = model.horizon() as f64;
            let d = model.d() as f64;
            let log = (d * s * a * h / self.delta).ln().max(1.0);
            let n = self.c_const * a * s.powi(4 * model.k() as i32) * h * h * k.powi(3) * log
                / (self.eps * self.eps);
            n.ceil() as u64
        })
    }

    /// Per-cell estimation accuracy implied by a round accuracy `eps`:
    /// eps / (2 * S^k * H).
    pub fn cell_eps(&self, model: &ExoMdpModel) -> f64 {
        let s_k = (model.s_per_factor() as f64).powi(model.k() as i32);
        self.eps / (2.0 * s_k * model.horizon() as f64)
    }
}

/// Sample size for the standalone occupancy-estimator calibration:
/// ceil(C * A * S^{2k} * k * ln(d*S*A/delta) / eps^2).
pub fn estimator_episodes(
    c_const: f64,
    a_count: usize,
    s_per_factor: usize,
    k: usize,
    d: usize,
    delta: f64,
    eps: f64,
) -> u64 {
    let a = a_count as f64;
    let s = s_per_factor as f64;
    let kf = (k.max(1)) as f64;
    let log = ((d as f64) * s * a / delta).ln().max(1.0);
    let n = c_const * a * s.powi(2 * k as i32) * kf * log / (eps * eps);
    n.ceil() as u64
}
