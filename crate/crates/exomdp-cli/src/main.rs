//! Operator surface for the exomdp crate: instance generation, exact and
//! sampled cover construction, the full learning pipeline, the enumeration
//! baseline, policy evaluation, and structural diagnostics.
//!
//! Every run writes a machine-first JSON summary document (path printed on
//! stdout, overridable with `--summary`). The process exits 0 only when the
//! run completed with a PASS verdict; verdict failures exit 1 and errors,
//! including schema problems and budget refusals, exit 2.
//!
//! All randomness flows from `--seed`; repeating an invocation with the same
//! seed and a different `--threads` produces byte-identical output files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use exomdp::config::{Caps, BudgetMeter, SampleConfig};
use exomdp::diag::{
    check_bellman_rank, check_decoupling, check_density_ratio, check_ladder, check_restriction,
};
use exomdp::driver::{
    baseline_subset_enumeration, behavioral_endogeneity, exo_rl, BaselineConfig, ExoRlConfig,
};
use exomdp::exact::{ExactDp, RewardSpec};
use exomdp::factor::subsets_up_to;
use exomdp::files::{self, PolicyFile, Provenance};
use exomdp::gen::{gen_bellman_rank_instance, gen_combo_lock, gen_random_exo_mdp};
use exomdp::{ExoError, ExoMdpModel, FactorSet, MixturePolicy, PolicyCover, PolicyRef};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exact covers are tight up to DP rounding; anything above this is a defect.
const EXACT_DEFICIENCY_TOL: f64 = 1e-9;
/// Slack added to sampled-run verdict comparisons to absorb float rounding.
const VERDICT_SLACK: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "exomdp", version, about = "Exogenous-factor MDP toolkit")]
struct Cli {
    /// Worker threads for parallel phases (default: all cores). Outputs do
    /// not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Progress notes on stderr.
    #[arg(long, global = true)]
    verbose: bool,

    /// Where to write the run summary document. Defaults to the primary
    /// output path with a `.summary.json` extension, or
    /// `<subcommand>-summary.json` for runs without an output file.
    #[arg(long, global = true)]
    summary: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model file with a provenance block.
    Gen(GenArgs),
    /// Build the exact cover chain for a layer and report deficiencies.
    Exact(ExactArgs),
    /// Build sampled policy covers for every layer from rollouts alone.
    Ossr(OssrArgs),
    /// Run the full pipeline: sampled covers, then reward optimization.
    Exorl(ExorlArgs),
    /// Subset-enumeration baseline under an explicit episode budget.
    Baseline(BaselineArgs),
    /// Evaluate a policy file exactly against a model.
    Eval(EvalArgs),
    /// Structural diagnostics with pass/fail verdicts.
    Diag(DiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// Block-structured random instance with certified reachability.
    Random,
    /// Deterministic combination-lock chain plus exogenous noise.
    Combolock,
    /// Fixed two-step instance whose function class has large Bellman rank.
    Bellman,
}

#[derive(Args)]
struct GenArgs {
    /// Instance family.
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Number of state factors (for `bellman`: must be a power of two).
    #[arg(long)]
    d: usize,
    /// Endogenous-set size bound. Defaults to 1 for `random` and to the
    /// smallest feasible bound for `combolock`; ignored by `bellman`.
    #[arg(long)]
    k: Option<usize>,
    /// States per factor (ignored by `bellman`, which fixes 3).
    #[arg(long = "S", default_value_t = 2)]
    s: usize,
    /// Actions (ignored by `bellman`, which fixes 2).
    #[arg(long = "A", default_value_t = 2)]
    a: usize,
    /// Horizon (ignored by `bellman`, which fixes 2). The combination lock
    /// uses a chain of H-1 steps with the reward at the final layer.
    #[arg(long = "H", default_value_t = 3)]
    h: usize,
    /// Reachability floor the generator must certify (`random` only).
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-step flip probability of each exogenous factor (`combolock`).
    #[arg(long, default_value_t = 0.25)]
    noise_exo: f64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    model: PathBuf,
    /// Layer to cover; the chain is built for every layer up to this one.
    #[arg(long)]
    h: usize,
    /// Cover file to write (default: the model path with a `.cover.json`
    /// extension).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OssrArgs {
    #[arg(long)]
    model: PathBuf,
    /// Target accuracy; each layer runs at min(eps, eta/2).
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    /// Reachability parameter of the instance.
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    seed: u64,
    /// Episodes per backward step, overriding the theoretical schedule.
    #[arg(long)]
    n_override: Option<u64>,
    /// Leading constant in the episode schedule.
    #[arg(long)]
    c_const: Option<f64>,
    /// Cover file to write (final layer).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExorlArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    seed: u64,
    /// Episodes per round, overriding the theoretical schedule.
    #[arg(long)]
    n_override: Option<u64>,
    /// Policy file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comparator tolerance: the verdict checks J >= J* - 2*eps.
    #[arg(long)]
    eps: f64,
    /// Total episode budget across learning and candidate evaluation.
    #[arg(long)]
    budget: u64,
    #[arg(long)]
    seed: u64,
    /// Policy file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Policy file produced by `exorl`, `baseline`, or by hand.
    #[arg(long)]
    policy: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagCheck {
    /// Joint occupancies factor into endogenous times exogenous parts.
    Decoupling,
    /// Occupancies of factor subsets are recovered by restricted models.
    Restriction,
    /// Exact-cover mixtures dominate every policy's occupancy within 2*S^k.
    DensityRatio,
    /// Tolerance ladder arithmetic across k = 1..10 and both multipliers.
    Ladder,
    /// Generated counterexample instances have Bellman rank >= d-1.
    BellmanRank,
}

#[derive(Args)]
struct DiagArgs {
    /// Model file; required by every check except `ladder`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    check: DiagCheck,
    /// Random policies drawn for the decoupling and restriction checks.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reachability threshold below which density-ratio cells are skipped.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            match e {
                ExoError::EpisodeBudget { .. } | ExoError::StateSpaceTooLarge { .. } => {
                    eprintln!("refused: {e}")
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> exomdp::Result<bool> {
    let caps = caps_from_env()?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Exact(a) => cmd_exact(cli, a, &caps),
        Command::Ossr(a) => cmd_ossr(cli, a, &caps),
        Command::Exorl(a) => cmd_exorl(cli, a, &caps),
        Command::Baseline(a) => cmd_baseline(cli, a, &caps),
        Command::Eval(a) => cmd_eval(cli, a, &caps),
        Command::Diag(a) => cmd_diag(cli, a),
    }
}

/// Budget caps, with environment overrides applied on top of the defaults.
fn caps_from_env() -> exomdp::Result<Caps> {
    let mut caps = Caps::default();
    if let Some(v) = read_env("EXOMDP_STATE_CAP")? {
        caps.state_cap = v
            .parse::<u128>()
            .map_err(|_| ExoError::InvalidArgument(format!("EXOMDP_STATE_CAP={v} is not a count")))?;
    }
    if let Some(v) = read_env("EXOMDP_EPISODE_CAP")? {
        caps.episode_cap = v.parse::<u64>().map_err(|_| {
            ExoError::InvalidArgument(format!("EXOMDP_EPISODE_CAP={v} is not a count"))
        })?;
    }
    Ok(caps)
}

fn read_env(name: &str) -> exomdp::Result<Option<String>> {
    match std::env::var(name) {
        Ok(v) if v.is_empty() => Ok(None),
        Ok(v) => Ok(Some(v)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(ExoError::InvalidArgument(format!("{name}: {e}"))),
    }
}

fn summary_path(cli: &Cli, primary_out: Option<&Path>, fallback: &str) -> PathBuf {
    if let Some(p) = &cli.summary {
        return p.clone();
    }
    match primary_out {
        Some(out) => out.with_extension("summary.json"),
        None => PathBuf::from(fallback),
    }
}

fn write_summary(path: &Path, doc: &serde_json::Value) -> exomdp::Result<()> {
    files::save_json(path, doc)?;
    println!("summary: {}", path.display());
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn note(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose {
        eprintln!("[exomdp] {}", msg.as_ref());
    }
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> exomdp::Result<bool> {
    let (model, prov, kind) = match a.kind {
        GenKind::Random => {
            let k = a.k.unwrap_or(1);
            note(cli, format!("drawing random instance d={} k={k}", a.d));
            let (m, p) = gen_random_exo_mdp(a.d, k, a.s, a.a, a.h, a.eta, a.seed)?;
            (m, p, "random")
        }
        GenKind::Combolock => {
            if a.h < 2 {
                return Err(ExoError::InvalidArgument(format!(
                    "combolock needs a horizon of at least 2, got {}",
                    a.h
                )));
            }
            let h_chain = a.h - 1;
            let k = a.k.unwrap_or_else(|| min_chain_factors(a.s, h_chain));
            note(cli, format!("building combolock chain of {h_chain} steps"));
            let (m, p) = gen_combo_lock(a.d, k, h_chain, a.s, a.a, a.noise_exo, a.seed)?;
            (m, p, "combolock")
        }
        GenKind::Bellman => {
            note(cli, format!("building rank counterexample d={}", a.d));
            let (m, _, p) = gen_bellman_rank_instance(a.d)?;
            (m, p, "bellman")
        }
    };
    files::save_model(&a.out, &model, Some(&prov))?;
    println!("model: {}", a.out.display());
    let doc = json!({
        "command": "gen",
        "kind": kind,
        "out": a.out.display().to_string(),
        "seed": a.seed,
        "provenance": prov,
        "jointStateCount": model.joint_state_count().to_string(),
        "horizon": model.horizon(),
        "pass": true,
    });
    write_summary(&summary_path(cli, Some(&a.out), ""), &doc)?;
    println!("gen: PASS");
    Ok(true)
}

/// Smallest number of chain factors whose joint range covers the chain.
fn min_chain_factors(s: usize, h_chain: usize) -> usize {
    let mut m = 1usize;
    let mut span = s;
    while span < h_chain + 1 {
        m += 1;
        span = span.saturating_mul(s);
    }
    m
}

fn cmd_exact(cli: &Cli, a: &ExactArgs, caps: &Caps) -> exomdp::Result<bool> {
    let (model, _) = files::load_model(&a.model)?;
    let dp = ExactDp::with_cap(&model, caps.state_cap)?;
    let mut covers: Vec<PolicyCover> = vec![PolicyCover::trivial(1, model.s_per_factor())];
    if a.h == 0 || a.h > model.horizon() {
        return Err(ExoError::TimestepOutOfRange {
            t: a.h,
            lo: 1,
            hi: model.horizon(),
        });
    }
    for layer in 2..=a.h {
        note(cli, format!("refining layer {layer}"));
        let next = dp.layer_cover(&covers, layer)?;
        covers.push(next);
    }
    let mut layers = Vec::new();
    let mut pass = true;
    for c in &covers {
        let deficiency = dp.cover_deficiency(c)?;
        pass &= deficiency <= EXACT_DEFICIENCY_TOL;
        layers.push(json!({
            "h": c.h,
            "factorSet": c.factor_set,
            "policies": c.policies.len(),
            "deficiency": deficiency,
        }));
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.model.with_extension("cover.json"));
    files::save_cover(&out, covers.last().expect("layer 1 always present"))?;
    println!("cover: {}", out.display());
    let doc = json!({
        "command": "exact",
        "model": a.model.display().to_string(),
        "h": a.h,
        "out": out.display().to_string(),
        "deficiencyTolerance": EXACT_DEFICIENCY_TOL,
        "layers": layers,
        "pass": pass,
    });
    write_summary(&summary_path(cli, Some(&out), ""), &doc)?;
    println!("exact cover chain: {}", verdict(pass));
    Ok(pass)
}

fn cmd_ossr(cli: &Cli, a: &OssrArgs, caps: &Caps) -> exomdp::Result<bool> {
    let (model, _) = files::load_model(&a.model)?;
    let layer_eps = a.eps.min(a.eta / 2.0);
    let mut config = SampleConfig::new(layer_eps, a.delta).with_n_override(a.n_override);
    if let Some(c) = a.c_const {
        config = config.with_c_const(c);
    }
    config.validate()?;
    let mut meter = BudgetMeter::new(caps.episode_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut covers = vec![PolicyCover::trivial(1, model.s_per_factor())];
    let mut steps = Vec::new();
    for h in 2..=model.horizon() {
        note(cli, format!("covering layer {h}"));
        let out = exomdp::ossr::ossr_h(&model, &covers, h, &config, &mut meter, &mut rng)?;
        steps.extend(out.steps);
        covers.push(out.cover);
    }
    files::save_cover(&a.out, covers.last().expect("layer 1 always present"))?;
    println!("cover: {}", a.out.display());

    // Oracle verdict only when the joint state space is tractable.
    let mut pass = true;
    let mut layers = Vec::new();
    if model.joint_state_count() <= caps.state_cap {
        let dp = ExactDp::with_cap(&model, caps.state_cap)?;
        for c in &covers {
            let deficiency = dp.cover_deficiency(c)?;
            pass &= deficiency <= a.eta / 2.0 + VERDICT_SLACK;
            layers.push(json!({
                "h": c.h,
                "factorSet": c.factor_set,
                "policies": c.policies.len(),
                "deficiency": deficiency,
            }));
        }
    } else {
        for c in &covers {
            layers.push(json!({
                "h": c.h,
                "factorSet": c.factor_set,
                "policies": c.policies.len(),
                "deficiency": null,
            }));
        }
    }
    let doc = json!({
        "command": "ossr",
        "model": a.model.display().to_string(),
        "eps": a.eps,
        "delta": a.delta,
        "eta": a.eta,
        "layerEps": layer_eps,
        "seed": a.seed,
        "out": a.out.display().to_string(),
        "episodesPerRound": config.round_episodes(&model),
        "totalEpisodes": meter.used(),
        "rounds": steps,
        "layers": layers,
        "pass": pass,
    });
    write_summary(&summary_path(cli, Some(&a.out), ""), &doc)?;
    println!("sampled covers: {}", verdict(pass));
    Ok(pass)
}

fn cmd_exorl(cli: &Cli, a: &ExorlArgs, caps: &Caps) -> exomdp::Result<bool> {
    let (model, _) = files::load_model(&a.model)?;
    let mut cfg = ExoRlConfig::new(a.eps, a.delta, a.eta);
    cfg.n_override = a.n_override;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    note(cli, "running cover construction and policy search");
    let mut outcome = exo_rl(&model, &cfg, caps, &mut rng)?;
    outcome.summary.instance = Some(a.model.display().to_string());
    outcome.summary.seed = Some(a.seed);
    files::save_policy(
        &a.out,
        &PolicyFile::Deterministic {
            policy: outcome.policy,
        },
    )?;
    println!("policy: {}", a.out.display());
    let pass = match (outcome.summary.j_hat, outcome.summary.j_star) {
        (Some(j_hat), Some(j_star)) => j_hat >= j_star - a.eps - VERDICT_SLACK,
        _ => true,
    };
    let doc = json!({
        "command": "exorl",
        "model": a.model.display().to_string(),
        "eps": a.eps,
        "delta": a.delta,
        "eta": a.eta,
        "seed": a.seed,
        "out": a.out.display().to_string(),
        "run": outcome.summary,
        "pass": pass,
    });
    write_summary(&summary_path(cli, Some(&a.out), ""), &doc)?;
    println!("learned policy: {}", verdict(pass));
    Ok(pass)
}

fn cmd_baseline(cli: &Cli, a: &BaselineArgs, caps: &Caps) -> exomdp::Result<bool> {
    let (model, _) = files::load_model(&a.model)?;
    if a.budget > caps.episode_cap {
        return Err(ExoError::EpisodeBudget {
            requested: a.budget,
            cap: caps.episode_cap,
        });
    }
    let candidate_count = subsets_up_to(model.d(), model.k(), &FactorSet::empty()).len() as u64;
    let config = BaselineConfig::from_total_budget(a.budget, candidate_count)?;
    let mut meter = BudgetMeter::new(a.budget);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    note(cli, format!("evaluating {candidate_count} candidate subsets"));
    let outcome = baseline_subset_enumeration(&model, &config, &mut meter, &mut rng)?;

    let (j_hat, j_star, mut pass) = if model.joint_state_count() <= caps.state_cap {
        let dp = ExactDp::with_cap(&model, caps.state_cap)?;
        let j_hat = dp.policy_return(&outcome.policy)?;
        let j_star = dp.joint_value_iteration(&RewardSpec::Model).value;
        let ok = j_hat >= j_star - 2.0 * a.eps - VERDICT_SLACK;
        (Some(j_hat), Some(j_star), ok)
    } else {
        (None, None, true)
    };
    pass &= outcome.candidates.len() as u64 == candidate_count;
    files::save_policy(
        &a.out,
        &PolicyFile::Deterministic {
            policy: outcome.policy,
        },
    )?;
    println!("policy: {}", a.out.display());
    let doc = json!({
        "command": "baseline",
        "model": a.model.display().to_string(),
        "eps": a.eps,
        "budget": a.budget,
        "seed": a.seed,
        "out": a.out.display().to_string(),
        "learnEpisodes": config.learn_episodes,
        "evalEpisodesPerCandidate": config.eval_episodes,
        "totalEpisodes": meter.used(),
        "candidateCount": candidate_count,
        "candidates": outcome.candidates,
        "chosen": outcome.chosen,
        "jHat": j_hat,
        "jStar": j_star,
        "pass": pass,
    });
    write_summary(&summary_path(cli, Some(&a.out), ""), &doc)?;
    println!("baseline policy: {}", verdict(pass));
    Ok(pass)
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, caps: &Caps) -> exomdp::Result<bool> {
    let (model, _) = files::load_model(&a.model)?;
    let file = files::load_policy(&a.policy)?;
    let dp = ExactDp::with_cap(&model, caps.state_cap)?;

    // A one-member uniform mixture is the policy itself, so both file kinds
    // evaluate through the same path.
    let mix = MixturePolicy::new(file.members().to_vec())?;
    let value = dp.policy_return(&mix)?;
    let mut endo = true;
    for member in file.members() {
        endo &= behavioral_endogeneity(&model, member)?;
    }

    // Occupancies of the factors the policy actually reads, layer by layer.
    let mut acted = FactorSet::empty();
    for member in file.members() {
        for step in &member.steps {
            acted = acted.union(&step.acts_on);
        }
    }
    note(cli, format!("reporting occupancies over {acted}"));
    let mut occupancies = Vec::new();
    for h in 1..=model.horizon() {
        let table = dp.occupancy(PolicyRef::from(&mix), h, &acted)?;
        occupancies.push(json!({ "h": h, "values": table.values }));
    }

    println!("exact return: {value}");
    println!("behavioral endogeneity: {}", if endo { "yes" } else { "no" });
    let doc = json!({
        "command": "eval",
        "model": a.model.display().to_string(),
        "policy": a.policy.display().to_string(),
        "exactReturn": value,
        "behavioralEndogeneity": endo,
        "actsOn": acted,
        "occupancies": occupancies,
        "pass": true,
    });
    write_summary(&summary_path(cli, None, "eval-summary.json"), &doc)?;
    Ok(true)
}

fn cmd_diag(cli: &Cli, a: &DiagArgs) -> exomdp::Result<bool> {
    let needs_model = !matches!(a.check, DiagCheck::Ladder);
    let loaded: Option<(ExoMdpModel, Option<Provenance>)> = match (&a.model, needs_model) {
        (Some(path), _) => Some(files::load_model(path)?),
        (None, false) => None,
        (None, true) => {
            return Err(ExoError::InvalidArgument(
                "this check needs --model".into(),
            ))
        }
    };
    let model = loaded.as_ref().map(|(m, _)| m);
    note(cli, "running structural check");
    let report = match a.check {
        DiagCheck::Decoupling => {
            check_decoupling(model.expect("guarded above"), a.trials, a.seed)?
        }
        DiagCheck::Restriction => {
            check_restriction(model.expect("guarded above"), a.trials, a.seed)?
        }
        DiagCheck::DensityRatio => check_density_ratio(model.expect("guarded above"), a.eps)?,
        DiagCheck::Ladder => check_ladder()?,
        DiagCheck::BellmanRank => {
            let (m, prov) = loaded.as_ref().expect("guarded above");
            let prov = prov.as_ref().ok_or_else(|| {
                ExoError::InvalidArgument(
                    "bellman-rank needs a model file with a generator provenance block".into(),
                )
            })?;
            check_bellman_rank(m, prov)?
        }
    };
    println!(
        "check {}: {} (worst residual {:.3e})",
        report.check,
        verdict(report.pass),
        report.worst_residual
    );
    let pass = report.pass;
    let doc = json!({
        "command": "diag",
        "model": a.model.as_ref().map(|p| p.display().to_string()),
        "report": report,
        "pass": pass,
    });
    write_summary(&summary_path(cli, None, "diag-summary.json"), &doc)?;
    Ok(pass)
}
