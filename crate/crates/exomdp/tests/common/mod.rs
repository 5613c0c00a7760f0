//! Test-side ground truth, implemented independently of the library's
//! dynamic programming: exhaustive enumeration of complete trajectories and
//! of whole policy classes. Only the model's raw tables and the policy
//! action lookup are borrowed from the crate.

use exomdp::factor::FactorSet;
use exomdp::model::{ExoMdpModel, ModelParts};
use exomdp::policy::{NonstationaryPolicy, OneStepPolicy};
use exomdp::state::FactoredState;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Packs the coordinates at `indices` (ascending) into a mixed-radix integer
/// with the first index most significant.
pub fn pack_on(coords: &[u8], indices: &[usize], s: usize) -> usize {
    indices.iter().fold(0, |acc, &i| acc * s + coords[i] as usize)
}

/// Every joint state in canonical order.
pub fn all_joint_states(d: usize, s: usize) -> Vec<FactoredState> {
    let total = s.pow(d as u32);
    (0..total)
        .map(|mut x| {
            let mut coords = vec![0u8; d];
            for pos in (0..d).rev() {
                coords[pos] = (x % s) as u8;
                x /= s;
            }
            FactoredState::new(coords)
        })
        .collect()
}

/// Exhaustive-trajectory ground truth for one model: the joint initial
/// distribution, per-action sparse successor lists, and per-state rewards,
/// all rebuilt here from the oracle tables with local digit arithmetic.
pub struct PathOracle {
    pub horizon: usize,
    s: usize,
    states: Vec<FactoredState>,
    init: Vec<f64>,
    /// trans[a][x] lists the positive-probability successors of x under a.
    trans: Vec<Vec<Vec<(usize, f64)>>>,
    reward: Vec<Vec<f64>>,
}

impl PathOracle {
    pub fn new(model: &ExoMdpModel) -> Self {
        let oracle = model.oracle();
        let d = model.d();
        let s = model.s_per_factor();
        let a_count = model.a_count();
        let en_idx: Vec<usize> = oracle.i_star().iter().collect();
        let ex_idx: Vec<usize> = oracle.i_exo().iter().collect();
        let states = all_joint_states(d, s);
        let n = states.len();

        let en_of: Vec<usize> = states
            .iter()
            .map(|st| pack_on(&st.coords, &en_idx, s))
            .collect();
        let ex_of: Vec<usize> = states
            .iter()
            .map(|st| pack_on(&st.coords, &ex_idx, s))
            .collect();

        let init: Vec<f64> = (0..n)
            .map(|x| oracle.d1_en()[en_of[x]] * oracle.d1_ex()[ex_of[x]])
            .collect();
        let reward: Vec<Vec<f64>> = (0..n)
            .map(|x| (0..a_count).map(|a| oracle.r_en()[en_of[x]][a]).collect())
            .collect();
        let mut trans = vec![vec![Vec::new(); n]; a_count];
        for a in 0..a_count {
            for x in 0..n {
                for y in 0..n {
                    let p = oracle.t_en()[en_of[x]][a][en_of[y]] * oracle.t_ex()[ex_of[x]][ex_of[y]];
                    if p > 0.0 {
                        trans[a][x].push((y, p));
                    }
                }
            }
        }
        PathOracle {
            horizon: model.horizon(),
            s,
            states,
            init,
            trans,
            reward,
        }
    }

    /// Expected total reward of a deterministic policy, summed over every
    /// complete trajectory.
    pub fn policy_return(&self, policy: &NonstationaryPolicy) -> f64 {
        let mut total = 0.0;
        for (x, &p) in self.init.iter().enumerate() {
            if p > 0.0 {
                self.walk_return(policy, 1, x, p, 0.0, &mut total);
            }
        }
        total
    }

    fn walk_return(
        &self,
        policy: &NonstationaryPolicy,
        t: usize,
        x: usize,
        p: f64,
        acc: f64,
        total: &mut f64,
    ) {
        let a = policy.action_at(t, &self.states[x]).unwrap() as usize;
        let acc = acc + self.reward[x][a];
        if t == self.horizon {
            *total += p * acc;
            return;
        }
        for &(y, q) in &self.trans[a][x] {
            self.walk_return(policy, t + 1, y, p * q, acc, total);
        }
    }

    /// Uniform-mixture expected return.
    pub fn mixture_return(&self, members: &[NonstationaryPolicy]) -> f64 {
        let sum: f64 = members.iter().map(|m| self.policy_return(m)).sum();
        sum / members.len() as f64
    }

    /// Probability of each restriction value of `target` at layer `h` under
    /// a uniform mixture, summed over every trajectory prefix.
    pub fn occupancy(
        &self,
        members: &[NonstationaryPolicy],
        h: usize,
        target: &FactorSet,
    ) -> Vec<f64> {
        let idx: Vec<usize> = target.iter().collect();
        let mut out = vec![0.0; self.s.pow(idx.len() as u32)];
        for m in members {
            for (x, &p) in self.init.iter().enumerate() {
                if p > 0.0 {
                    self.walk_occupancy(m, 1, x, p / members.len() as f64, h, &idx, &mut out);
                }
            }
        }
        out
    }

    fn walk_occupancy(
        &self,
        policy: &NonstationaryPolicy,
        t: usize,
        x: usize,
        p: f64,
        h: usize,
        idx: &[usize],
        out: &mut [f64],
    ) {
        if t == h {
            out[pack_on(&self.states[x].coords, idx, self.s)] += p;
            return;
        }
        let a = policy.action_at(t, &self.states[x]).unwrap() as usize;
        for &(y, q) in &self.trans[a][x] {
            self.walk_occupancy(policy, t + 1, y, p * q, h, idx, out);
        }
    }
}

fn positive_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.r#gen::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// A random small instance built from scratch: arbitrary dense stochastic
/// tables (the exogenous block need not factor further), a random hidden
/// set, dimensions within enumeration reach.
pub fn random_small_model(rng: &mut ChaCha8Rng) -> ExoMdpModel {
    let d = rng.gen_range(1..=4usize);
    let s = rng.gen_range(2..=3usize);
    let a = rng.gen_range(1..=2usize);
    let h = rng.gen_range(1..=3usize);
    let k = rng.gen_range(1..=d);
    let size = rng.gen_range(1..=k);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let i_star = FactorSet::from_indices(order.into_iter().take(size));

    let s_en = s.pow(size as u32);
    let s_ex = s.pow((d - size) as u32);
    let t_en = (0..s_en)
        .map(|_| (0..a).map(|_| positive_row(rng, s_en)).collect())
        .collect();
    let r_en = (0..s_en)
        .map(|_| (0..a).map(|_| rng.r#gen::<f64>()).collect())
        .collect();
    let t_ex = (0..s_ex).map(|_| positive_row(rng, s_ex)).collect();
    ExoMdpModel::new(ModelParts {
        d,
        k,
        s_per_factor: s,
        a_count: a,
        horizon: h,
        i_star,
        t_en,
        t_ex,
        r_en,
        d1_en: positive_row(rng, s_en),
        d1_ex: positive_row(rng, s_ex),
    })
    .expect("constructed tables satisfy the structural contract")
}

/// Like [`random_small_model`] but small enough that the whole joint policy
/// class can be enumerated: at most 4 joint states, 2 actions.
pub fn random_tiny_model(rng: &mut ChaCha8Rng) -> ExoMdpModel {
    loop {
        let model = random_small_model(rng);
        let joint = model.joint_state_count();
        if joint <= 4 && model.a_count() == 2 {
            return model;
        }
    }
}

/// A random deterministic policy acting on the full factor set every step.
pub fn random_full_policy(model: &ExoMdpModel, rng: &mut ChaCha8Rng) -> NonstationaryPolicy {
    let d = model.d();
    let s = model.s_per_factor();
    let full = FactorSet::from_indices(0..d);
    let n = s.pow(d as u32);
    let steps = (0..model.horizon())
        .map(|_| {
            let table: Vec<u8> = (0..n)
                .map(|_| rng.gen_range(0..model.a_count() as u8))
                .collect();
            OneStepPolicy::new(full.clone(), s, table).unwrap()
        })
        .collect();
    NonstationaryPolicy::new(1, steps)
}

/// Every deterministic nonstationary policy over the full joint state, all
/// `A^(n*H)` of them. The caller keeps the count tiny.
pub fn all_joint_policies(model: &ExoMdpModel) -> Vec<NonstationaryPolicy> {
    let d = model.d();
    let s = model.s_per_factor();
    let a = model.a_count();
    let h = model.horizon();
    let n = s.pow(d as u32);
    let digits = n * h;
    let total = (a as u64).pow(digits as u32);
    assert!(total <= 1 << 20, "policy class too large to enumerate");
    let full = FactorSet::from_indices(0..d);
    (0..total)
        .map(|mut code| {
            let mut steps = Vec::with_capacity(h);
            for _ in 0..h {
                let table: Vec<u8> = (0..n)
                    .map(|_| {
                        let digit = (code % a as u64) as u8;
                        code /= a as u64;
                        digit
                    })
                    .collect();
                steps.push(OneStepPolicy::new(full.clone(), s, table).unwrap());
            }
            NonstationaryPolicy::new(1, steps)
        })
        .collect()
}

/// Every one-step policy acting on `set`, all `A^(S^|set|)` of them.
pub fn all_one_step_policies(set: &FactorSet, s: usize, a: usize) -> Vec<OneStepPolicy> {
    let n = s.pow(set.len() as u32);
    let total = (a as u64).pow(n as u32);
    assert!(total <= 1 << 20, "one-step class too large to enumerate");
    (0..total)
        .map(|mut code| {
            let table: Vec<u8> = (0..n)
                .map(|_| {
                    let digit = (code % a as u64) as u8;
                    code /= a as u64;
                    digit
                })
                .collect();
            OneStepPolicy::new(set.clone(), s, table).unwrap()
        })
        .collect()
}

/// A random subset of the factors (possibly empty).
pub fn random_subset(d: usize, rng: &mut ChaCha8Rng) -> FactorSet {
    FactorSet::from_indices((0..d).filter(|_| rng.r#gen::<bool>()))
}
