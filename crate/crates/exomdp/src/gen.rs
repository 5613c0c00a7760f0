//! Instance generators: random certified instances, the combination-lock
//! family, and a low-Bellman-rank family with its rank diagnostic.
//!
//! All generators return the model together with a [`Provenance`] record
//! describing how it was built, so saved instances stay reproducible and
//! downstream diagnostics can recognize what they are looking at.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::ExoError;
use crate::exact::ExactDp;
use crate::factor::{subsets_up_to, FactorSet};
use crate::files::Provenance;
use crate::model::{ExoMdpModel, ModelParts};
use crate::policy::{NonstationaryPolicy, OneStepPolicy};
use crate::state::{merge_restrictions, unpack_joint, FactoredState, StateIndex};
use crate::Result;

/// Mass mixed toward the uniform row in every sampled distribution, keeping
/// all entries strictly positive so reachability floors are attainable.
pub const DIRICHLET_FLOOR: f64 = 0.05;

/// Attempts before [`gen_random_exo_mdp`] gives up on certifying the
/// requested reachability floor.
pub const GENERATION_RETRY_CAP: usize = 40;

/// Singular values above this threshold count toward the numeric rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Exogenous blocks are kept small enough that a block's joint state count
/// stays at or below this, so block tables remain cheap to draw and expand.
const MAX_BLOCK_STATES: usize = 16;

/// Draws a strictly positive distribution over `n` outcomes: a normalized
/// exponential draw mixed toward uniform so every entry is at least about
/// `per_entry_floor` (the mix weight is capped at 0.9 to keep the draw
/// non-degenerate).
fn floored_simplex(rng: &mut ChaCha8Rng, n: usize, per_entry_floor: f64) -> Vec<f64> {
    debug_assert!(n >= 1);
    let raw: Vec<f64> = (0..n)
        .map(|_| -(rng.r#gen::<f64>().max(1e-300)).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let lambda = (per_entry_floor * n as f64).min(0.9);
    let unif = 1.0 / n as f64;
    raw.iter()
        .map(|v| (1.0 - lambda) * (v / total) + lambda * unif)
        .collect()
}

/// Partitions `count` exogenous coordinates into contiguous blocks whose
/// joint state counts stay within [`MAX_BLOCK_STATES`]. Contiguity matters:
/// consecutive coordinates occupy consecutive digit positions in the packed
/// restriction, so the joint table is a straight Kronecker product of the
/// block tables.
fn block_sizes(rng: &mut ChaCha8Rng, count: usize, s_per_factor: usize) -> Vec<usize> {
    let mut cap = 1usize;
    while cap < count
        && s_per_factor
            .checked_pow((cap + 1) as u32)
            .is_some_and(|n| n <= MAX_BLOCK_STATES)
    {
        cap += 1;
    }
    let mut sizes = Vec::new();
    let mut remaining = count;
    while remaining > 0 {
        let take = rng.gen_range(1..=cap.min(remaining));
        sizes.push(take);
        remaining -= take;
    }
    sizes
}

/// Kronecker product of per-block transition matrices, in block order. Row
/// `x` of the result is the distribution of the joint next state given joint
/// source `x`, with earlier blocks in the more significant digit positions,
/// matching the packed-restriction convention.
fn kron_rows(blocks: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut acc: Vec<Vec<f64>> = vec![vec![1.0]];
    for block in blocks {
        let mut next = Vec::with_capacity(acc.len() * block.len());
        for row_a in &acc {
            for row_b in block {
                let mut row = Vec::with_capacity(row_a.len() * row_b.len());
                for &pa in row_a {
                    for &pb in row_b {
                        row.push(pa * pb);
                    }
                }
                next.push(row);
            }
        }
        acc = next;
    }
    acc
}

/// Kronecker product of per-block initial distributions, in block order.
fn kron_vec(blocks: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![1.0];
    for block in blocks {
        let mut next = Vec::with_capacity(acc.len() * block.len());
        for &pa in &acc {
            for &pb in block {
                next.push(pa * pb);
            }
        }
        acc = next;
    }
    acc
}

fn draw_candidate(
    rng: &mut ChaCha8Rng,
    d: usize,
    k: usize,
    s_per_factor: usize,
    a_count: usize,
    horizon: usize,
) -> Result<ExoMdpModel> {
    let candidates: Vec<FactorSet> = subsets_up_to(d, k, &FactorSet::empty())
        .into_iter()
        .filter(|c| !c.is_empty())
        .collect();
    let i_star = candidates[rng.gen_range(0..candidates.len())].clone();

    let en_states = s_per_factor.pow(i_star.len() as u32);
    let en_floor = DIRICHLET_FLOOR / s_per_factor as f64;
    let t_en: Vec<Vec<Vec<f64>>> = (0..en_states)
        .map(|_| {
            (0..a_count)
                .map(|_| floored_simplex(rng, en_states, en_floor))
                .collect()
        })
        .collect();
    let r_en: Vec<Vec<f64>> = (0..en_states)
        .map(|_| (0..a_count).map(|_| rng.r#gen::<f64>()).collect())
        .collect();
    let d1_en = floored_simplex(rng, en_states, en_floor);

    let exo_count = d - i_star.len();
    let sizes = block_sizes(rng, exo_count, s_per_factor);
    let mut mats = Vec::with_capacity(sizes.len());
    let mut inits = Vec::with_capacity(sizes.len());
    for &size in &sizes {
        let states = s_per_factor.pow(size as u32);
        let floor = DIRICHLET_FLOOR / states as f64;
        mats.push(
            (0..states)
                .map(|_| floored_simplex(rng, states, floor))
                .collect::<Vec<_>>(),
        );
        inits.push(floored_simplex(rng, states, floor));
    }
    let t_ex = kron_rows(&mats);
    let d1_ex = kron_vec(&inits);

    ExoMdpModel::new(ModelParts {
        d,
        k,
        s_per_factor,
        a_count,
        horizon,
        i_star,
        t_en,
        t_ex,
        r_en,
        d1_en,
        d1_ex,
    })
}

/// Computes the best-case reach probability of every `(step, hidden-block
/// value)` cell and checks the floor condition: each cell is either reachable
/// with probability at least `eta_floor` or unreachable outright. Returns
/// whether the check passed and the smallest nonzero reach found.
fn certify_reachability(model: &ExoMdpModel, eta_floor: f64) -> Result<(bool, f64)> {
    let dp = ExactDp::new(model)?;
    let i_star = model.oracle().i_star();
    let en_states = model.oracle().s_en_count();
    let cells: Vec<(usize, StateIndex)> = (1..=model.horizon())
        .flat_map(|h| (0..en_states).map(move |x| (h, x)))
        .collect();
    let reaches = cells
        .par_iter()
        .map(|&(h, x)| dp.max_reach(h, i_star, x))
        .collect::<Result<Vec<f64>>>()?;

    let mut min_nonzero = f64::INFINITY;
    let mut ok = true;
    for &r in &reaches {
        if r <= 1e-12 {
            continue;
        }
        if r < min_nonzero {
            min_nonzero = r;
        }
        if r < eta_floor {
            ok = false;
        }
    }
    if !min_nonzero.is_finite() {
        min_nonzero = 0.0;
        ok = false;
    }
    Ok((ok, min_nonzero))
}

fn params_from(value: serde_json::Value) -> serde_json::Map<String, serde_json::Value> {
    match value {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("generator params are always a JSON object"),
    }
}

/// Draws a random instance and certifies its reachability floor.
///
/// The hidden set is uniform over nonempty sets of at most `k` factors.
/// Hidden-block transition rows, the hidden initial distribution, and the
/// per-block exogenous tables are floored random distributions; rewards are
/// uniform on `[0, 1]`. The exogenous coordinates are split into contiguous
/// independent blocks and the joint table is their Kronecker product.
///
/// Each draw is certified with exact dynamic programming: every `(step,
/// hidden value)` pair must be reachable with probability at least
/// `eta_floor` or not at all. Draws failing the check are retried up to
/// [`GENERATION_RETRY_CAP`] times before reporting
/// [`ExoError::RetryCapExhausted`] with the best floor seen.
pub fn gen_random_exo_mdp(
    d: usize,
    k: usize,
    s_per_factor: usize,
    a_count: usize,
    horizon: usize,
    eta_floor: f64,
    seed: u64,
) -> Result<(ExoMdpModel, Provenance)> {
    if d == 0 || k == 0 || k > d {
        return Err(ExoError::InvalidArgument(format!(
            "need 1 <= k <= d, got d={d}, k={k}"
        )));
    }
    if s_per_factor < 2 {
        return Err(ExoError::InvalidArgument(
            "need at least two states per factor".into(),
        ));
    }
    if a_count == 0 || horizon == 0 {
        return Err(ExoError::InvalidArgument(
            "need at least one action and a positive horizon".into(),
        ));
    }
    if !(0.0..1.0).contains(&eta_floor) {
        return Err(ExoError::InvalidArgument(format!(
            "reachability floor must lie in [0, 1), got {eta_floor}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..GENERATION_RETRY_CAP {
        let model = draw_candidate(&mut rng, d, k, s_per_factor, a_count, horizon)?;
        let (certified, min_reach) = certify_reachability(&model, eta_floor)?;
        if min_reach > best {
            best = min_reach;
        }
        if certified {
            let provenance = Provenance {
                generator: "random".into(),
                params: params_from(serde_json::json!({
                    "d": d,
                    "k": k,
                    "S": s_per_factor,
                    "A": a_count,
                    "H": horizon,
                    "etaFloor": eta_floor,
                })),
                seed: Some(seed),
                eta: Some(min_reach),
            };
            return Ok((model, provenance));
        }
    }
    Err(ExoError::RetryCapExhausted {
        retries: GENERATION_RETRY_CAP,
        achieved: best,
        floor: eta_floor,
    })
}

/// Builds a combination-lock instance: reward is earned only by playing a
/// hidden action sequence of length `h_chain` without a single mistake.
///
/// The hidden block is a chain over `m` factors, where `m` is the smallest
/// count with `S^m >= h_chain + 1` codes (so the chain position fits in the
/// hidden restriction); the call is rejected unless `m <= k <= d`. The
/// horizon is `h_chain + 1`: the final step collects the unit reward at the
/// end of the chain. A wrong action resets the chain to the start. The
/// remaining `d - m` coordinates are independent flip chains that mix each
/// step with probability `noise_exo` and never influence reward, and every
/// reachable chain position is reachable with probability one.
///
/// The drawn action sequence is recorded in the provenance parameters under
/// `actionSequence`.
pub fn gen_combo_lock(
    d: usize,
    k: usize,
    h_chain: usize,
    s_per_factor: usize,
    a_count: usize,
    noise_exo: f64,
    seed: u64,
) -> Result<(ExoMdpModel, Provenance)> {
    if h_chain == 0 {
        return Err(ExoError::InvalidArgument(
            "lock chain must have at least one step".into(),
        ));
    }
    if s_per_factor < 2 || a_count < 2 {
        return Err(ExoError::InvalidArgument(
            "a lock needs at least two states per factor and two actions".into(),
        ));
    }
    if a_count > u8::MAX as usize {
        return Err(ExoError::InvalidArgument(
            "action count must fit in a byte".into(),
        ));
    }
    if !(0.0..=1.0).contains(&noise_exo) {
        return Err(ExoError::InvalidArgument(format!(
            "exogenous noise must lie in [0, 1], got {noise_exo}"
        )));
    }
    let mut m = 1usize;
    let mut codes = s_per_factor;
    while codes < h_chain + 1 {
        m += 1;
        codes = codes.saturating_mul(s_per_factor);
    }
    if m > k || k > d {
        return Err(ExoError::InvalidArgument(format!(
            "chain of {h_chain} steps needs {m} hidden factors; require {m} <= k <= d (got k={k}, d={d})"
        )));
    }

    let horizon = h_chain + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequence: Vec<u8> = (0..h_chain).map(|_| rng.gen_range(0..a_count as u8)).collect();

    let en_states = s_per_factor.pow(m as u32);
    let mut t_en = vec![vec![vec![0.0; en_states]; a_count]; en_states];
    let mut r_en = vec![vec![0.0; a_count]; en_states];
    for en in 0..en_states {
        for a in 0..a_count {
            // position < h_chain: advance on the correct action, reset on a
            // wrong one; the terminal position absorbs; junk codes reset.
            let target = if en < h_chain {
                if a == sequence[en] as usize {
                    en + 1
                } else {
                    0
                }
            } else if en == h_chain {
                en
            } else {
                0
            };
            t_en[en][a][target] = 1.0;
            r_en[en][a] = if en == h_chain { 1.0 } else { 0.0 };
        }
    }
    let mut d1_en = vec![0.0; en_states];
    d1_en[0] = 1.0;

    let exo_count = d - m;
    let off = noise_exo / s_per_factor as f64;
    let flip: Vec<Vec<f64>> = (0..s_per_factor)
        .map(|i| {
            (0..s_per_factor)
                .map(|j| if i == j { 1.0 - noise_exo + off } else { off })
                .collect()
        })
        .collect();
    let uniform = vec![1.0 / s_per_factor as f64; s_per_factor];
    let mats = vec![flip; exo_count];
    let inits = vec![uniform; exo_count];
    let t_ex = kron_rows(&mats);
    let d1_ex = kron_vec(&inits);

    let model = ExoMdpModel::new(ModelParts {
        d,
        k,
        s_per_factor,
        a_count,
        horizon,
        i_star: FactorSet::from_indices(0..m),
        t_en,
        t_ex,
        r_en,
        d1_en,
        d1_ex,
    })?;
    let provenance = Provenance {
        generator: "combolock".into(),
        params: params_from(serde_json::json!({
            "d": d,
            "k": k,
            "S": s_per_factor,
            "A": a_count,
            "H": horizon,
            "hChain": h_chain,
            "noiseExo": noise_exo,
            "actionSequence": sequence,
        })),
        seed: Some(seed),
        eta: Some(1.0),
    };
    Ok((model, provenance))
}

/// A dense state-action value function over the joint state space, used as a
/// member of a candidate function class.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionFunction {
    d: usize,
    s_per_factor: usize,
    a_count: usize,
    full_set: FactorSet,
    table: Vec<f64>,
}

impl StateActionFunction {
    /// `table` is indexed by `joint_state * a_count + action`.
    pub fn new(d: usize, s_per_factor: usize, a_count: usize, table: Vec<f64>) -> Result<Self> {
        let joint = s_per_factor
            .checked_pow(d as u32)
            .ok_or_else(|| ExoError::InvalidArgument("joint state count overflows".into()))?;
        if table.len() != joint * a_count {
            return Err(ExoError::InvalidArgument(format!(
                "function table has {} entries, expected {}",
                table.len(),
                joint * a_count
            )));
        }
        Ok(StateActionFunction {
            d,
            s_per_factor,
            a_count,
            full_set: FactorSet::from_indices(0..d),
            table,
        })
    }

    pub fn factor_count(&self) -> usize {
        self.d
    }

    pub fn value_packed(&self, x: StateIndex, a: usize) -> f64 {
        self.table[x * self.a_count + a]
    }

    pub fn value(&self, state: &FactoredState, a: usize) -> f64 {
        self.value_packed(state.restrict(&self.full_set, self.s_per_factor), a)
    }

    /// The stationary greedy policy: at every step and state, the smallest
    /// action attaining the row maximum.
    pub fn greedy_policy(&self, horizon: usize) -> Result<NonstationaryPolicy> {
        let joint = self.table.len() / self.a_count;
        let mut actions = Vec::with_capacity(joint);
        for x in 0..joint {
            let mut best_a = 0usize;
            let mut best_v = self.value_packed(x, 0);
            for a in 1..self.a_count {
                let v = self.value_packed(x, a);
                if v > best_v {
                    best_v = v;
                    best_a = a;
                }
            }
            actions.push(best_a as u8);
        }
        let step = OneStepPolicy::new(self.full_set.clone(), self.s_per_factor, actions)?;
        Ok(NonstationaryPolicy::new(1, vec![step; horizon]))
    }
}

/// A finite class of candidate value functions for the rank diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionClass {
    pub functions: Vec<StateActionFunction>,
}

impl FunctionClass {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Index sets of the `-1` entries in rows `1..d` of the order-`d` Sylvester
/// Hadamard matrix. Each set has `d/2` elements and any two distinct sets
/// intersect in exactly `d/4`.
fn hadamard_negative_sets(d: usize) -> Vec<Vec<bool>> {
    let mut signs: Vec<Vec<i8>> = vec![vec![1]];
    while signs.len() < d {
        let n = signs.len();
        let mut next = vec![vec![0i8; 2 * n]; 2 * n];
        for (r, row) in signs.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                next[r][c] = v;
                next[r][c + n] = v;
                next[r + n][c] = v;
                next[r + n][c + n] = -v;
            }
        }
        signs = next;
    }
    signs
        .into_iter()
        .skip(1)
        .map(|row| row.into_iter().map(|v| v < 0).collect())
        .collect()
}

/// Builds the low-rank counterexample family: a one-step hidden block that
/// any single-set scan solves, paired with a function class whose joint
/// Bellman-error matrix has rank `d - 1` even though the hidden block has
/// only three states.
///
/// `d` (a power of two, at most 8) is the number of exogenous coordinates;
/// the model has `d + 1` factors, horizon 2, three states per factor, and
/// two actions. The exogenous state is frozen at one of `d` one-hot atoms
/// drawn uniformly at the start. The class contains the true value function
/// `f_0` and `d - 1` distractors patterned on Hadamard rows; the distractors
/// read the exogenous atom, so their greedy policies differ across atoms
/// while all Bellman errors against the first step vanish.
pub fn gen_bellman_rank_instance(d: usize) -> Result<(ExoMdpModel, FunctionClass, Provenance)> {
    if d < 2 || !d.is_power_of_two() {
        return Err(ExoError::InvalidArgument(format!(
            "exogenous dimension must be a power of two, at least 2, got {d}"
        )));
    }
    if d > 8 {
        return Err(ExoError::InvalidArgument(
            "exogenous dimension above 8 makes the dense joint table impractical".into(),
        ));
    }

    let factors = d + 1;
    let s_per_factor = 3usize;
    let a_count = 2usize;
    let horizon = 2usize;

    // Hidden block: state 0 branches on the action to state 1 (low arm) or
    // state 2 (high arm); both arms absorb. Rewards are action-independent.
    let t_en = vec![
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]],
        vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
    ];
    let r_en = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![0.75, 0.75]];
    let d1_en = vec![1.0, 0.0, 0.0];

    let s_ex = s_per_factor.pow(d as u32);
    let t_ex: Vec<Vec<f64>> = (0..s_ex)
        .map(|i| {
            let mut row = vec![0.0; s_ex];
            row[i] = 1.0;
            row
        })
        .collect();
    let mut d1_ex = vec![0.0; s_ex];
    for i in 0..d {
        // one-hot atom e_i: exogenous coordinate i is 1, the rest are 0
        d1_ex[s_per_factor.pow((d - 1 - i) as u32)] = 1.0 / d as f64;
    }

    let model = ExoMdpModel::new(ModelParts {
        d: factors,
        k: 1,
        s_per_factor,
        a_count,
        horizon,
        i_star: FactorSet::singleton(0),
        t_en,
        t_ex,
        r_en,
        d1_en,
        d1_ex,
    })?;

    let joint = s_per_factor.pow(factors as u32);
    let negative = hadamard_negative_sets(d);

    // Position of the single exogenous coordinate equal to 1, if the
    // exogenous part is exactly a one-hot atom.
    let hot_position = |state: &FactoredState| -> Option<usize> {
        let mut hot = None;
        for (pos, &c) in state.coords[1..].iter().enumerate() {
            match c {
                0 => {}
                1 => {
                    if hot.is_some() {
                        return None;
                    }
                    hot = Some(pos);
                }
                _ => return None,
            }
        }
        hot
    };

    let mut functions = Vec::with_capacity(d);
    // f_0: the true value function. Branch values 0.5 and 0.75 make the high
    // arm optimal everywhere.
    let mut table = Vec::with_capacity(joint * a_count);
    for x in 0..joint {
        let state = unpack_joint(x, factors, s_per_factor);
        match state.coords[0] {
            0 => table.extend_from_slice(&[0.5, 0.75]),
            1 => table.extend_from_slice(&[0.5, 0.5]),
            _ => table.extend_from_slice(&[0.75, 0.75]),
        }
    }
    functions.push(StateActionFunction::new(
        factors,
        s_per_factor,
        a_count,
        table,
    )?);

    // Distractors: on the atoms in the Hadamard set the low arm looks worth
    // 1.5, elsewhere -0.5, so each distractor's greedy policy picks the low
    // arm on exactly its own set of atoms. Non-atom exogenous states carry
    // the true values; they never receive probability mass.
    for neg in &negative {
        let mut table = Vec::with_capacity(joint * a_count);
        for x in 0..joint {
            let state = unpack_joint(x, factors, s_per_factor);
            let arm = hot_position(&state).map(|i| if neg[i] { 1.5 } else { -0.5 });
            match state.coords[0] {
                0 => table.extend_from_slice(&[arm.unwrap_or(0.5), 0.75]),
                1 => {
                    let v = arm.unwrap_or(0.5);
                    table.extend_from_slice(&[v, v]);
                }
                _ => table.extend_from_slice(&[0.75, 0.75]),
            }
        }
        functions.push(StateActionFunction::new(
            factors,
            s_per_factor,
            a_count,
            table,
        )?);
    }

    let provenance = Provenance {
        generator: "bellman".into(),
        params: params_from(serde_json::json!({ "d": d })),
        seed: None,
        eta: Some(1.0),
    };
    Ok((model, FunctionClass { functions }, provenance))
}

/// One-step Bellman error of `f` under its own greedy action at joint state
/// `x` and step `h`: `f(x, a) - r(x, a) - E[f(x', a')]` with `a'` greedy at
/// the next step; the continuation term is dropped at the final step.
fn residual_at(
    model: &ExoMdpModel,
    f: &StateActionFunction,
    greedy: &NonstationaryPolicy,
    h: usize,
    x: StateIndex,
) -> Result<f64> {
    let oracle = model.oracle();
    let d = model.d();
    let s = model.s_per_factor();
    let state = unpack_joint(x, d, s);
    let a = greedy.action_at(h, &state)? as usize;
    let mut v = f.value_packed(x, a) - oracle.reward(&state, a);
    if h < model.horizon() {
        let en = oracle.en_index_of(&state);
        let ex = oracle.ex_index_of(&state);
        let i_star = oracle.i_star();
        let i_exo = oracle.i_exo();
        let en_row = &oracle.t_en()[en][a];
        let ex_row = &oracle.t_ex()[ex];
        for (en2, &pe) in en_row.iter().enumerate() {
            if pe == 0.0 {
                continue;
            }
            for (ex2, &px) in ex_row.iter().enumerate() {
                if px == 0.0 {
                    continue;
                }
                let (_, joint2) = merge_restrictions(i_star, en2, i_exo, ex2, s);
                let next = unpack_joint(joint2, d, s);
                let a2 = greedy.action_at(h + 1, &next)? as usize;
                v -= pe * px * f.value_packed(joint2, a2);
            }
        }
    }
    Ok(v)
}

/// Average Bellman-error matrices `E_h[i][j]`: the expected one-step error
/// of function `j` (acting greedily) over the step-`h` state distribution
/// induced by rolling in with function `i`'s greedy policy. One matrix per
/// step, computed with exact occupancies.
pub fn bellman_error_matrices(
    model: &ExoMdpModel,
    class: &FunctionClass,
) -> Result<Vec<DMatrix<f64>>> {
    let n = class.len();
    if n == 0 {
        return Err(ExoError::InvalidArgument(
            "function class must be nonempty".into(),
        ));
    }
    for f in &class.functions {
        if f.factor_count() != model.d() {
            return Err(ExoError::InvalidArgument(format!(
                "function over {} factors does not match a model with {}",
                f.factor_count(),
                model.d()
            )));
        }
    }
    let joint = model.joint_state_count();
    if joint > usize::MAX as u128 {
        return Err(ExoError::InvalidArgument(
            "joint state space too large to enumerate".into(),
        ));
    }
    let joint = joint as usize;
    let dp = ExactDp::new(model)?;
    let full = FactorSet::from_indices(0..model.d());
    let greedy: Vec<NonstationaryPolicy> = class
        .functions
        .iter()
        .map(|f| f.greedy_policy(model.horizon()))
        .collect::<Result<_>>()?;

    let mut matrices = Vec::with_capacity(model.horizon());
    for h in 1..=model.horizon() {
        let occupancies = greedy
            .par_iter()
            .map(|p| dp.occupancy(p, h, &full))
            .collect::<Result<Vec<_>>>()?;
        // residuals are roll-in independent, so cache per (function, state)
        let mut cache: Vec<HashMap<StateIndex, f64>> = vec![HashMap::new(); n];
        let mut m = DMatrix::zeros(n, n);
        for (i, occ) in occupancies.iter().enumerate() {
            let alive: Vec<(StateIndex, f64)> = (0..joint)
                .filter_map(|x| {
                    let mass = occ.value_at(x);
                    if mass > 0.0 {
                        Some((x, mass))
                    } else {
                        None
                    }
                })
                .collect();
            for j in 0..n {
                let mut e = 0.0;
                for &(x, mass) in &alive {
                    let r = match cache[j].get(&x) {
                        Some(&v) => v,
                        None => {
                            let v = residual_at(model, &class.functions[j], &greedy[j], h, x)?;
                            cache[j].insert(x, v);
                            v
                        }
                    };
                    e += mass * r;
                }
                m[(i, j)] = e;
            }
        }
        matrices.push(m);
    }
    Ok(matrices)
}

/// Numeric rank: singular values above [`RANK_TOLERANCE`].
pub fn numeric_rank(m: &DMatrix<f64>) -> usize {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&v| v > RANK_TOLERANCE)
        .count()
}

/// The largest numeric rank among the per-step Bellman-error matrices.
pub fn bellman_rank(model: &ExoMdpModel, class: &FunctionClass) -> Result<usize> {
    let matrices = bellman_error_matrices(model, class)?;
    Ok(matrices.iter().map(numeric_rank).max().unwrap_or(0))
}
