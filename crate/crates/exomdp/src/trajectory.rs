use serde::{Deserialize, Serialize};

use crate::state::FactoredState;

/// One sampled episode. States are 1-indexed by convention: `states[0]` is
/// s_1 and `states[t-1]` pairs with `actions[t-1]` and `rewards[t-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trajectory {
    pub states: Vec<FactoredState>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    /// Which mixture member generated the roll-in, when one was drawn.
    pub member_index: Option<usize>,
    /// Which rollout policy was played after the roll-in, when one was drawn.
    pub rollout_index: Option<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// State at 1-indexed timestep `t`.
    pub fn state_at(&self, t: usize) -> &FactoredState {
        &self.states[t - 1]
    }

    pub fn action_at(&self, t: usize) -> u8 {
        self.actions[t - 1]
    }

    pub fn reward_at(&self, t: usize) -> f64 {
        self.rewards[t - 1]
    }

    /// Sum of rewards over timesteps `t..=h` inclusive.
    pub fn return_over(&self, t: usize, h: usize) -> f64 {
        self.rewards[t - 1..h].iter().sum()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}
