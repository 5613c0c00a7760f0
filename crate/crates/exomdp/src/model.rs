use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::ExoError;
use crate::factor::FactorSet;
use crate::state::{restriction_count, FactoredState};
use crate::Result;

/// Row-sum tolerance for probability tables.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Raw ingredients for an [`ExoMdpModel`]; validated on construction.
///
/// `t_en` is indexed `[en][a][en']`, `t_ex` is `[ex][ex']`, `r_en` is
/// `[en][a]`, where `en` packs the restriction to the endogenous factors and
/// `ex` packs the restriction to the rest. `t_ex` is a joint table over all
/// exogenous coordinates: exogenous factors may be arbitrarily correlated
/// with each other, only independence from actions and from the endogenous
/// block is structural.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub d: usize,
    pub k: usize,
    pub s_per_factor: usize,
    pub a_count: usize,
    pub horizon: usize,
    pub i_star: FactorSet,
    pub t_en: Vec<Vec<Vec<f64>>>,
    pub t_ex: Vec<Vec<f64>>,
    pub r_en: Vec<Vec<f64>>,
    pub d1_en: Vec<f64>,
    pub d1_ex: Vec<f64>,
}

/// A factored MDP with a hidden controllable block.
///
/// The state is `(s_1, .., s_d)` with each coordinate in `[0, S)`. A hidden
/// factor set `I*` with `|I*| ≤ k` carries all of the action's influence and
/// all reward; the complementary coordinates evolve independently of both.
/// Learner-facing code sees only the dimensions and the sampling interface
/// ([`ExoMdpModel::step`], [`ExoMdpModel::sample_initial`]); the tables and
/// `I*` itself are reachable only through [`ExoMdpModel::oracle`], which
/// exact DP, diagnostics, and tests use.
#[derive(Debug, Clone)]
pub struct ExoMdpModel {
    d: usize,
    k: usize,
    s_per_factor: usize,
    a_count: usize,
    horizon: usize,
    i_star: FactorSet,
    i_exo: FactorSet,
    t_en: Vec<Vec<Vec<f64>>>,
    t_ex: Vec<Vec<f64>>,
    r_en: Vec<Vec<f64>>,
    d1_en: Vec<f64>,
    d1_ex: Vec<f64>,
}

fn check_distribution(row: &[f64], len: usize, path: &str) -> Result<()> {
    if row.len() != len {
        return Err(ExoError::InvalidModel(format!(
            "{path}: expected {len} entries, found {}",
            row.len()
        )));
    }
    let mut sum = 0.0;
    for (i, &p) in row.iter().enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(ExoError::InvalidModel(format!(
                "{path}[{i}]: probability {p} not a finite nonnegative number"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(ExoError::InvalidModel(format!(
            "{path}: row sums to {sum}, outside 1 ± {ROW_SUM_TOL}"
        )));
    }
    Ok(())
}

impl ExoMdpModel {
    pub fn new(parts: ModelParts) -> Result<Self> {
        let ModelParts {
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
        } = parts;
        if d == 0 || s_per_factor == 0 || a_count == 0 || horizon == 0 {
            return Err(ExoError::InvalidModel(
                "d, S, A, H must all be positive".into(),
            ));
        }
        i_star.validate(d)?;
        if !(i_star.len() <= k && k <= d) {
            return Err(ExoError::InvalidModel(format!(
                "need |I*| ≤ k ≤ d, got |I*|={}, k={k}, d={d}",
                i_star.len()
            )));
        }
        let s_en = restriction_count(i_star.len(), s_per_factor);
        let s_ex = restriction_count(d - i_star.len(), s_per_factor);
        if t_en.len() != s_en {
            return Err(ExoError::InvalidModel(format!(
                "tEn: expected {s_en} rows, found {}",
                t_en.len()
            )));
        }
        for (en, per_action) in t_en.iter().enumerate() {
            if per_action.len() != a_count {
                return Err(ExoError::InvalidModel(format!(
                    "tEn[{en}]: expected {a_count} action rows, found {}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                check_distribution(row, s_en, &format!("tEn[{en}][{a}]"))?;
            }
        }
        if t_ex.len() != s_ex {
            return Err(ExoError::InvalidModel(format!(
                "tEx: expected {s_ex} rows, found {}",
                t_ex.len()
            )));
        }
        for (ex, row) in t_ex.iter().enumerate() {
            check_distribution(row, s_ex, &format!("tEx[{ex}]"))?;
        }
        if r_en.len() != s_en {
            return Err(ExoError::InvalidModel(format!(
                "rEn: expected {s_en} rows, found {}",
                r_en.len()
            )));
        }
        for (en, row) in r_en.iter().enumerate() {
            if row.len() != a_count {
                return Err(ExoError::InvalidModel(format!(
                    "rEn[{en}]: expected {a_count} entries, found {}",
                    row.len()
                )));
            }
            for (a, &r) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&r) {
                    return Err(ExoError::InvalidModel(format!(
                        "rEn[{en}][{a}]: reward {r} outside [0, 1]"
                    )));
                }
            }
        }
        check_distribution(&d1_en, s_en, "d1En")?;
        check_distribution(&d1_ex, s_ex, "d1Ex")?;
        let i_exo = i_star.complement(d);
        Ok(ExoMdpModel {
            d,
            k,
            s_per_factor,
            a_count,
            horizon,
            i_star,
            i_exo,
            t_en,
            t_ex,
            r_en,
            d1_en,
            d1_ex,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Known upper bound on the number of endogenous factors.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s_per_factor(&self) -> usize {
        self.s_per_factor
    }

    pub fn a_count(&self) -> usize {
        self.a_count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of joint states `S^d`, saturating at `u128` width.
    pub fn joint_state_count(&self) -> u128 {
        (self.s_per_factor as u128).pow(self.d as u32)
    }

    /// Draws `s_1` from the factorized initial distribution.
    pub fn sample_initial(&self, rng: &mut ChaCha8Rng) -> FactoredState {
        let en = sample_index(&self.d1_en, rng);
        let ex = sample_index(&self.d1_ex, rng);
        self.assemble(en, ex)
    }

    /// Samples a transition and returns the reward collected at `(s, a)`.
    ///
    /// The two blocks transition independently: the controllable block
    /// through its action-indexed row, the rest through its own row.
    pub fn step(&self, s: &FactoredState, a: usize, rng: &mut ChaCha8Rng) -> (FactoredState, f64) {
        debug_assert!(a < self.a_count);
        let en = s.restrict(&self.i_star, self.s_per_factor);
        let ex = s.restrict(&self.i_exo, self.s_per_factor);
        let r = self.r_en[en][a];
        let en_next = sample_index(&self.t_en[en][a], rng);
        let ex_next = sample_index(&self.t_ex[ex], rng);
        (self.assemble(en_next, ex_next), r)
    }

    /// Rebuilds a joint state from packed block restrictions.
    fn assemble(&self, en: usize, ex: usize) -> FactoredState {
        let mut coords = vec![0u8; self.d];
        scatter(&self.i_star, en, self.s_per_factor, &mut coords);
        scatter(&self.i_exo, ex, self.s_per_factor, &mut coords);
        FactoredState::new(coords)
    }

    /// Ground-truth access for exact DP, diagnostics, and tests.
    ///
    /// Learning code paths must not call this; the sampled pipeline sees the
    /// model only through dimensions and rollouts.
    pub fn oracle(&self) -> OracleView<'_> {
        OracleView { model: self }
    }
}

fn scatter(set: &FactorSet, packed: usize, s_per_factor: usize, coords: &mut [u8]) {
    let digits = crate::state::unpack_restriction(packed, set.len(), s_per_factor);
    for (pos, i) in set.iter().enumerate() {
        coords[i] = digits[pos];
    }
}

/// Inverse-CDF draw from an explicit probability row.
fn sample_index(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.r#gen();
    for (i, &p) in row.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // float slack: attribute the residual tail to the last positive entry
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Read-only window onto the hidden structure of a model.
#[derive(Clone, Copy)]
pub struct OracleView<'a> {
    model: &'a ExoMdpModel,
}

impl<'a> OracleView<'a> {
    pub fn i_star(&self) -> &'a FactorSet {
        &self.model.i_star
    }

    /// Complement of `I*`: the action-independent coordinates.
    pub fn i_exo(&self) -> &'a FactorSet {
        &self.model.i_exo
    }

    pub fn t_en(&self) -> &'a [Vec<Vec<f64>>] {
        &self.model.t_en
    }

    pub fn t_ex(&self) -> &'a [Vec<f64>] {
        &self.model.t_ex
    }

    pub fn r_en(&self) -> &'a [Vec<f64>] {
        &self.model.r_en
    }

    pub fn d1_en(&self) -> &'a [f64] {
        &self.model.d1_en
    }

    pub fn d1_ex(&self) -> &'a [f64] {
        &self.model.d1_ex
    }

    pub fn s_en_count(&self) -> usize {
        self.model.d1_en.len()
    }

    pub fn s_ex_count(&self) -> usize {
        self.model.d1_ex.len()
    }

    pub fn en_index_of(&self, s: &FactoredState) -> usize {
        s.restrict(&self.model.i_star, self.model.s_per_factor)
    }

    pub fn ex_index_of(&self, s: &FactoredState) -> usize {
        s.restrict(&self.model.i_exo, self.model.s_per_factor)
    }

    pub fn reward(&self, s: &FactoredState, a: usize) -> f64 {
        self.model.r_en[self.en_index_of(s)][a]
    }
}
