//! Importance-weighted occupancy and value estimation, represented
//! implicitly: tensors aggregate indicator counts (or return mass) per
//! switch-state restriction and action, so the estimate for EVERY one-step
//! policy on a covered factor set is available by per-group lookup, never
//! by enumerating the policy class.
//!
//! Occupancy tensors store integer counts and apply the importance scale
//! `A * |psi| / N` once on read; an estimate therefore equals the direct
//! per-record weighted sum exactly, and count aggregates marginalize
//! without float error.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::ExoError;
use crate::factor::FactorSet;
use crate::model::ExoMdpModel;
use crate::policy::OneStepPolicy;
use crate::sampler::{OssrDataset, PsdpDataset};
use crate::state::{restriction_count, StateIndex};
use crate::Result;

/// Records per parallel aggregation chunk; merges run in chunk order so
/// float accumulation never depends on the worker count.
const CHUNK_RECORDS: usize = 4096;

/// Sparse importance-sampling counts over `(x, a, psi, y)`: switch-state
/// restriction to `acts_on`, switch action, rollout index, and target-layer
/// restriction to `targets`.
#[derive(Debug, Clone)]
pub struct WeightTensor {
    pub acts_on: FactorSet,
    pub targets: FactorSet,
    pub psi_count: usize,
    pub n: u64,
    a_count: usize,
    s_per_factor: usize,
    x_count: usize,
    y_count: usize,
    counts: HashMap<u64, u64>,
}

impl WeightTensor {
    pub fn build(
        ds: &OssrDataset,
        model: &ExoMdpModel,
        acts_on: &FactorSet,
        targets: &FactorSet,
    ) -> Result<Self> {
        acts_on.validate(model.d())?;
        targets.validate(model.d())?;
        let s = model.s_per_factor();
        let x_count = restriction_count(acts_on.len(), s);
        let y_count = restriction_count(targets.len(), s);
        let key = |x: usize, a: usize, psi: usize, y: usize| -> u64 {
            (((x * model.a_count() + a) * ds.psi_count + psi) * y_count + y) as u64
        };
        let partials: Vec<HashMap<u64, u64>> = ds
            .records
            .par_chunks(CHUNK_RECORDS)
            .map(|chunk| {
                let mut local: HashMap<u64, u64> = HashMap::new();
                for r in chunk {
                    let x = r.s_t.restrict(acts_on, s);
                    let y = r.s_h.restrict(targets, s);
                    *local
                        .entry(key(x, r.a_t as usize, r.psi_index, y))
                        .or_insert(0) += 1;
                }
                local
            })
            .collect();
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for local in partials {
            for (k, v) in local {
                *counts.entry(k).or_insert(0) += v;
            }
        }
        Ok(WeightTensor {
            acts_on: acts_on.clone(),
            targets: targets.clone(),
            psi_count: ds.psi_count,
            n: ds.records.len() as u64,
            a_count: model.a_count(),
            s_per_factor: model.s_per_factor(),
            x_count,
            y_count,
            counts,
        })
    }

    /// Importance scale `A * |psi| / N` applied to raw counts.
    pub fn scale(&self) -> f64 {
        (self.a_count * self.psi_count) as f64 / self.n as f64
    }

    fn cell(&self, x: usize, a: usize, psi: usize, y: usize) -> u64 {
        let key = (((x * self.a_count + a) * self.psi_count + psi) * self.y_count + y) as u64;
        self.counts.get(&key).copied().unwrap_or(0)
    }

    fn check_query(&self, pi_set: &FactorSet, psi_index: usize, y: StateIndex) -> Result<()> {
        if !pi_set.is_subset_of(&self.acts_on) {
            return Err(ExoError::InvalidArgument(format!(
                "policy factor set {pi_set} is not contained in tensor set {}",
                self.acts_on
            )));
        }
        if psi_index >= self.psi_count {
            return Err(ExoError::PsiIndexOutOfRange {
                index: psi_index,
                count: self.psi_count,
            });
        }
        if y >= self.y_count {
            return Err(ExoError::InvalidArgument(format!(
                "target restriction {y} out of range (tensor has {})",
                self.y_count
            )));
        }
        Ok(())
    }

    /// Raw matching-record count for one policy, rollout, and target value.
    pub fn raw_count(&self, pi: &OneStepPolicy, psi_index: usize, y: StateIndex) -> Result<u64> {
        self.check_query(&pi.acts_on, psi_index, y)?;
        let mut total = 0u64;
        for x in 0..self.x_count {
            let a = pi.action_for_restriction(x, &self.acts_on) as usize;
            total += self.cell(x, a, psi_index, y);
        }
        Ok(total)
    }

    /// Estimated occupancy `d_h(y; mu at t, pi, then rollout psi)` for a
    /// one-step policy on any subset of the tensor's factor set. Equals the
    /// per-record importance-weighted sum exactly.
    pub fn estimate_occupancy(
        &self,
        pi: &OneStepPolicy,
        psi_index: usize,
        y: StateIndex,
    ) -> Result<f64> {
        let count = self.raw_count(pi, psi_index, y)?;
        Ok((count * (self.a_count * self.psi_count) as u64) as f64 / self.n as f64)
    }

    /// Best estimated occupancy over ALL one-step policies on `acts_on`
    /// (which must be a subset of the tensor's set), via independent
    /// per-group argmax; ties break toward the smaller action.
    pub fn implicit_argmax_occupancy(
        &self,
        acts_on: &FactorSet,
        psi_index: usize,
        y: StateIndex,
    ) -> Result<(OneStepPolicy, f64)> {
        self.check_query(acts_on, psi_index, y)?;
        let group_count = restriction_count(acts_on.len(), self.s_per_factor);
        let mut agg = vec![0u64; group_count * self.a_count];
        for x in 0..self.x_count {
            let g = crate::state::project_restriction(x, &self.acts_on, acts_on, self.s_per_factor);
            for a in 0..self.a_count {
                agg[g * self.a_count + a] += self.cell(x, a, psi_index, y);
            }
        }
        let mut table = Vec::with_capacity(group_count);
        let mut total = 0u64;
        for g in 0..group_count {
            let row = &agg[g * self.a_count..(g + 1) * self.a_count];
            let (best_a, best) = row
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
                .expect("a_count >= 1");
            table.push(best_a as u8);
            total += best;
        }
        let pi = OneStepPolicy {
            acts_on: acts_on.clone(),
            s_per_factor: self.s_per_factor,
            table,
        };
        let value = (total * (self.a_count * self.psi_count) as u64) as f64 / self.n as f64;
        Ok((pi, value))
    }
}

/// Dense importance-weighted return mass per `(x, a)`: switch-state
/// restriction to `acts_on` and switch action.
#[derive(Debug, Clone)]
pub struct QTensor {
    pub acts_on: FactorSet,
    pub n: u64,
    a_count: usize,
    s_per_factor: usize,
    x_count: usize,
    sums: Vec<f64>,
}

impl QTensor {
    /// Aggregates return mass `sum of r_{t'} for t' in t..=H` per cell.
    pub fn build(ds: &PsdpDataset, model: &ExoMdpModel, acts_on: &FactorSet) -> Result<Self> {
        acts_on.validate(model.d())?;
        let s = model.s_per_factor();
        let x_count = restriction_count(acts_on.len(), s);
        let a_count = model.a_count();
        let partials: Vec<Vec<f64>> = ds
            .records
            .par_chunks(CHUNK_RECORDS)
            .map(|chunk| {
                let mut local = vec![0.0f64; x_count * a_count];
                for r in chunk {
                    let x = r.s_t.restrict(acts_on, s);
                    let mass: f64 = r.rewards[ds.t - 1..].iter().sum();
                    local[x * a_count + r.a_t as usize] += mass;
                }
                local
            })
            .collect();
        let mut sums = vec![0.0f64; x_count * a_count];
        for local in partials {
            for (slot, v) in sums.iter_mut().zip(&local) {
                *slot += v;
            }
        }
        Ok(QTensor {
            acts_on: acts_on.clone(),
            n: ds.records.len() as u64,
            a_count,
            s_per_factor: model.s_per_factor(),
            x_count,
            sums,
        })
    }

    fn check_subset(&self, pi_set: &FactorSet) -> Result<()> {
        if !pi_set.is_subset_of(&self.acts_on) {
            return Err(ExoError::InvalidArgument(format!(
                "policy factor set {pi_set} is not contained in tensor set {}",
                self.acts_on
            )));
        }
        Ok(())
    }

    /// Estimated value `V(mu at t, pi, then the fixed suffix)` for a
    /// one-step policy on any subset of the tensor's factor set.
    pub fn estimate_value(&self, pi: &OneStepPolicy) -> Result<f64> {
        self.check_subset(&pi.acts_on)?;
        let mut total = 0.0;
        for x in 0..self.x_count {
            let a = pi.action_for_restriction(x, &self.acts_on) as usize;
            total += self.sums[x * self.a_count + a];
        }
        Ok(total * self.a_count as f64 / self.n as f64)
    }

    /// Best estimated value over all one-step policies on `acts_on`, by
    /// per-group argmax; ties break toward the smaller action.
    pub fn implicit_argmax_value(&self, acts_on: &FactorSet) -> Result<(OneStepPolicy, f64)> {
        self.check_subset(acts_on)?;
        let group_count = restriction_count(acts_on.len(), self.s_per_factor);
        let mut agg = vec![0.0f64; group_count * self.a_count];
        for x in 0..self.x_count {
            let g = crate::state::project_restriction(x, &self.acts_on, acts_on, self.s_per_factor);
            for a in 0..self.a_count {
                agg[g * self.a_count + a] += self.sums[x * self.a_count + a];
            }
        }
        let mut table = Vec::with_capacity(group_count);
        let mut total = 0.0;
        for g in 0..group_count {
            let row = &agg[g * self.a_count..(g + 1) * self.a_count];
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for (a, &v) in row.iter().enumerate() {
                if v > best {
                    best = v;
                    best_a = a;
                }
            }
            table.push(best_a as u8);
            total += best;
        }
        let pi = OneStepPolicy {
            acts_on: acts_on.clone(),
            s_per_factor: self.s_per_factor,
            table,
        };
        Ok((pi, total * self.a_count as f64 / self.n as f64))
    }
}
