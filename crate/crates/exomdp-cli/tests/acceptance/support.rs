//! Ground-truth helpers for the acceptance suite, kept deliberately
//! independent of the library's dynamic programming: joint tables are
//! rebuilt with local mixed-radix arithmetic and every probability is
//! obtained by exhaustive trajectory enumeration.

use exomdp::{
    ExoMdpModel, FactorSet, FactoredState, MixturePolicy, ModelParts, NonstationaryPolicy,
    OneStepPolicy,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Packs `coords[indices]` with the smallest index most significant.
pub fn pack(coords: &[u8], indices: &[usize], s: usize) -> usize {
    let mut v = 0usize;
    for &i in indices {
        v = v * s + coords[i] as usize;
    }
    v
}

/// Every joint coordinate vector, in packed order.
pub fn all_states(d: usize, s: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * s);
        for prefix in &out {
            for c in 0..s as u8 {
                let mut row = prefix.clone();
                row.push(c);
                next.push(row);
            }
        }
        out = next;
    }
    out
}

/// Dense joint-chain view of a model: initial distribution, per-action
/// transition rows, and rewards, all indexed by the joint packed state.
pub struct Enumerator {
    pub s: usize,
    pub horizon: usize,
    pub states: Vec<Vec<u8>>,
    pub init: Vec<f64>,
    /// trans[a][x][y]
    pub trans: Vec<Vec<Vec<f64>>>,
    /// reward[x][a]
    pub reward: Vec<Vec<f64>>,
}

impl Enumerator {
    pub fn new(model: &ExoMdpModel) -> Self {
        let o = model.oracle();
        let d = model.d();
        let s = model.s_per_factor();
        let a_count = model.a_count();
        let states = all_states(d, s);
        let en: Vec<usize> = o.i_star().indices().to_vec();
        let ex: Vec<usize> = o.i_exo().indices().to_vec();
        let n = states.len();

        let init: Vec<f64> = states
            .iter()
            .map(|x| o.d1_en()[pack(x, &en, s)] * o.d1_ex()[pack(x, &ex, s)])
            .collect();
        let reward: Vec<Vec<f64>> = states
            .iter()
            .map(|x| {
                (0..a_count)
                    .map(|a| o.r_en()[pack(x, &en, s)][a])
                    .collect()
            })
            .collect();
        let mut trans = vec![vec![vec![0.0; n]; n]; a_count];
        for (xi, x) in states.iter().enumerate() {
            for (yi, y) in states.iter().enumerate() {
                let p_ex = o.t_ex()[pack(x, &ex, s)][pack(y, &ex, s)];
                for (a, rows) in trans.iter_mut().enumerate() {
                    let p_en = o.t_en()[pack(x, &en, s)][a][pack(y, &en, s)];
                    rows[xi][yi] = p_en * p_ex;
                }
            }
        }
        Enumerator {
            s,
            horizon: model.horizon(),
            states,
            init,
            trans,
            reward,
        }
    }

    /// Expected return of a deterministic layer-indexed decision rule,
    /// summed over every trajectory.
    pub fn return_of(&self, act: &dyn Fn(usize, &[u8]) -> u8) -> f64 {
        let mut total = 0.0;
        for (xi, p) in self.init.iter().enumerate() {
            if *p > 0.0 {
                total += p * self.suffix_return(act, 1, xi);
            }
        }
        total
    }

    fn suffix_return(&self, act: &dyn Fn(usize, &[u8]) -> u8, t: usize, xi: usize) -> f64 {
        let a = act(t, &self.states[xi]) as usize;
        let mut v = self.reward[xi][a];
        if t < self.horizon {
            for (yi, p) in self.trans[a][xi].iter().enumerate() {
                if *p > 0.0 {
                    v += p * self.suffix_return(act, t + 1, yi);
                }
            }
        }
        v
    }

    /// Probability of each restricted value of `target` at layer `h`,
    /// accumulated over every trajectory prefix.
    pub fn occupancy(&self, act: &dyn Fn(usize, &[u8]) -> u8, h: usize, target: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.s.pow(target.len() as u32)];
        for (xi, p) in self.init.iter().enumerate() {
            if *p > 0.0 {
                self.push_forward(act, 1, h, xi, *p, target, &mut out);
            }
        }
        out
    }

    fn push_forward(
        &self,
        act: &dyn Fn(usize, &[u8]) -> u8,
        t: usize,
        h: usize,
        xi: usize,
        p: f64,
        target: &[usize],
        out: &mut [f64],
    ) {
        if t == h {
            out[pack(&self.states[xi], target, self.s)] += p;
            return;
        }
        let a = act(t, &self.states[xi]) as usize;
        for (yi, q) in self.trans[a][xi].iter().enumerate() {
            if *q > 0.0 {
                self.push_forward(act, t + 1, h, yi, p * q, target, out);
            }
        }
    }

    pub fn mixture_return(&self, mix: &MixturePolicy) -> f64 {
        let total: f64 = mix
            .members
            .iter()
            .map(|m| self.return_of(&act_of(m)))
            .sum();
        total / mix.members.len() as f64
    }
}

/// Adapter from a policy to the enumerator's decision-rule shape.
pub fn act_of(policy: &NonstationaryPolicy) -> impl Fn(usize, &[u8]) -> u8 + '_ {
    |t, coords| {
        let state = FactoredState::new(coords.to_vec());
        policy.action_at(t, &state).expect("covered step")
    }
}

fn stochastic_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// A dense random instance in the desk range d <= 4, S <= 3, A <= 2,
/// H <= 3 with an arbitrary (non-factorized) exogenous joint chain.
pub fn random_model(rng: &mut ChaCha8Rng) -> ExoMdpModel {
    let d = rng.gen_range(1..=4usize);
    let s = rng.gen_range(2..=3usize);
    let a = rng.gen_range(1..=2usize);
    let h = rng.gen_range(1..=3usize);
    let star_len = rng.gen_range(1..=d.min(2));
    let mut picks: Vec<usize> = (0..d).collect();
    for i in (1..picks.len()).rev() {
        picks.swap(i, rng.gen_range(0..=i));
    }
    picks.truncate(star_len);
    let i_star = FactorSet::from_indices(picks);
    let s_en = s.pow(i_star.len() as u32);
    let s_ex = s.pow((d - i_star.len()) as u32);

    let t_en = (0..s_en)
        .map(|_| (0..a).map(|_| stochastic_row(rng, s_en)).collect())
        .collect();
    let t_ex = (0..s_ex).map(|_| stochastic_row(rng, s_ex)).collect();
    let r_en = (0..s_en)
        .map(|_| (0..a).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let parts = ModelParts {
        d,
        k: i_star.len(),
        s_per_factor: s,
        a_count: a,
        horizon: h,
        i_star,
        t_en,
        t_ex,
        r_en,
        d1_en: stochastic_row(rng, s_en),
        d1_ex: stochastic_row(rng, s_ex),
    };
    ExoMdpModel::new(parts).expect("random parts are valid by construction")
}

/// A uniformly random deterministic policy reading the full joint state.
pub fn random_policy(model: &ExoMdpModel, rng: &mut ChaCha8Rng) -> NonstationaryPolicy {
    let full = FactorSet::from_indices(0..model.d());
    let cells = model.s_per_factor().pow(model.d() as u32);
    let steps = (0..model.horizon())
        .map(|_| {
            let table = (0..cells)
                .map(|_| rng.gen_range(0..model.a_count()) as u8)
                .collect();
            OneStepPolicy::new(full.clone(), model.s_per_factor(), table)
                .expect("full table has the right size")
        })
        .collect();
    NonstationaryPolicy::new(1, steps)
}

/// All one-step policies over `acts_on` (A^(S^|acts_on|) tables).
pub fn all_one_step_policies(acts_on: &FactorSet, s: usize, a: usize) -> Vec<OneStepPolicy> {
    let cells = s.pow(acts_on.len() as u32);
    let count = (a as u64).pow(cells as u32);
    (0..count)
        .map(|mut code| {
            let table = (0..cells)
                .map(|_| {
                    let digit = (code % a as u64) as u8;
                    code /= a as u64;
                    digit
                })
                .collect();
            OneStepPolicy::new(acts_on.clone(), s, table).expect("table sized to acts_on")
        })
        .collect()
}
