//! Acceptance suite: ten go/no-go checks covering the exact oracles, the
//! structural identities, the sampled pipeline, the baseline, the rank
//! counterexample, the tolerance ladder, and CLI determinism. Each test
//! prints one `criterion N: PASS`/`FAIL` line and pins its tolerances in
//! code next to the check.

mod support;

use std::process::Command;
use std::time::{Duration, Instant};

use exomdp::config::{estimator_episodes, BudgetMeter, Caps, SampleConfig};
use exomdp::diag::{check_decoupling, check_density_ratio, check_restriction};
use exomdp::driver::{
    baseline_subset_enumeration, behavioral_endogeneity, exo_rl, full_joint_value_iteration,
    BaselineConfig, ExoRlConfig,
};
use exomdp::estimator::WeightTensor;
use exomdp::exact::ExactDp;
use exomdp::factor::subsets_up_to;
use exomdp::gen::{
    bellman_error_matrices, bellman_rank, gen_bellman_rank_instance, gen_combo_lock,
    gen_random_exo_mdp,
};
use exomdp::ossr::ossr_h;
use exomdp::sampler::collect_ossr_dataset;
use exomdp::search::EpsLadder;
use exomdp::{
    ExoMdpModel, FactorSet, MixturePolicy, NonstationaryPolicy, PolicyCover,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool) -> bool {
    println!("criterion {n}: {}", if pass { "PASS" } else { "FAIL" });
    pass
}

/// The shared sampled-pipeline instance: d=4, k=1, S=2, A=2, H=3 with
/// certified reachability at least 0.3 (the generator retries until the
/// floor holds, and the fixed seed is known to certify at ~0.39).
fn pipeline_instance() -> ExoMdpModel {
    let (model, prov) = gen_random_exo_mdp(4, 1, 2, 2, 3, 0.3, 1).expect("generation certifies");
    assert!(prov.eta.expect("certified eta recorded") >= 0.3);
    model
}

#[test]
fn criterion_01_exact_oracles_match_trajectory_enumeration() {
    const TOL: f64 = 1e-12;
    const LIMIT: Duration = Duration::from_secs(60);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let model = support::random_model(&mut rng);
        let truth = support::Enumerator::new(&model);
        let dp = ExactDp::new(&model).expect("desk-scale instance");
        let p1 = support::random_policy(&model, &mut rng);
        let p2 = support::random_policy(&model, &mut rng);
        for policy in [&p1, &p2] {
            let gap = (dp.policy_return(policy).unwrap()
                - truth.return_of(&support::act_of(policy)))
            .abs();
            worst = worst.max(gap);

            let mut targets = vec![
                FactorSet::empty(),
                FactorSet::from_indices(0..model.d()),
                model.oracle().i_star().clone(),
            ];
            targets.push(FactorSet::from_indices(
                (0..model.d()).filter(|_| rng.gen_bool(0.5)),
            ));
            for target in &targets {
                for h in 1..=model.horizon() {
                    let got = dp.occupancy(policy, h, target).unwrap().values;
                    let want = truth.occupancy(&support::act_of(policy), h, target.indices());
                    for (g, w) in got.iter().zip(&want) {
                        worst = worst.max((g - w).abs());
                    }
                }
            }
        }
        let mix = MixturePolicy::new(vec![p1, p2]).unwrap();
        worst = worst.max((dp.policy_return(&mix).unwrap() - truth.mixture_return(&mix)).abs());
    }
    let elapsed = start.elapsed();
    let pass = report(1, worst < TOL && elapsed < LIMIT);
    assert!(
        pass,
        "worst oracle gap {worst:.3e} (tol {TOL:.0e}), elapsed {elapsed:?} (limit {LIMIT:?})"
    );
}

#[test]
fn criterion_02_structural_lemma_residuals() {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut ratio_ok = true;
    // 20 instances x 10 policies per lemma = 200 draws each.
    for i in 0..20 {
        let model = support::random_model(&mut rng);
        let dec = check_decoupling(&model, 10, 1000 + i).unwrap();
        let res = check_restriction(&model, 10, 2000 + i).unwrap();
        worst = worst.max(dec.worst_residual).max(res.worst_residual);
        let ratio = check_density_ratio(&model, 0.0).unwrap();
        ratio_ok &= ratio.pass;
    }
    let pass = report(2, worst < TOL && ratio_ok);
    assert!(
        pass,
        "worst lemma residual {worst:.3e} (tol {TOL:.0e}), density ratio ok: {ratio_ok}"
    );
}

#[test]
fn criterion_03_exact_cover_chains_are_endogenous_and_tight() {
    const TOL: f64 = 1e-9;
    let mut instances: Vec<ExoMdpModel> = Vec::new();
    for (d, k, s, a, h, eta, seed) in [
        (2, 1, 2, 2, 2, 0.05, 1),
        (3, 1, 2, 2, 3, 0.05, 2),
        (3, 2, 2, 2, 3, 0.02, 3),
        (4, 1, 2, 2, 3, 0.05, 4),
        (4, 2, 3, 2, 3, 0.02, 5),
        (5, 2, 2, 3, 4, 0.02, 6),
        (6, 2, 2, 2, 3, 0.02, 7),
    ] {
        instances.push(gen_random_exo_mdp(d, k, s, a, h, eta, seed).unwrap().0);
    }
    instances.push(gen_combo_lock(3, 2, 2, 2, 2, 0.25, 11).unwrap().0);
    instances.push(gen_combo_lock(4, 2, 3, 2, 2, 0.2, 12).unwrap().0);
    instances.push(gen_combo_lock(3, 1, 1, 3, 2, 0.3, 13).unwrap().0);
    instances.push(gen_bellman_rank_instance(2).unwrap().0);
    instances.push(gen_bellman_rank_instance(4).unwrap().0);

    let mut pass = true;
    let mut detail = String::new();
    for (idx, model) in instances.iter().enumerate() {
        assert!(model.joint_state_count() <= 100_000);
        let dp = ExactDp::new(model).unwrap();
        let covers = dp.cover_chain().unwrap();
        for cover in &covers {
            let endo = cover.factor_set.is_subset_of(model.oracle().i_star());
            let deficiency = dp.cover_deficiency(cover).unwrap();
            if !endo || deficiency >= TOL {
                pass = false;
                detail = format!(
                    "instance {idx} layer {}: set {} endo={endo} deficiency {deficiency:.3e}",
                    cover.h, cover.factor_set
                );
            }
        }
    }
    let pass = report(3, pass);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_04_estimator_calibration() {
    const EPS: f64 = 0.1;
    const DELTA: f64 = 0.1;
    const RESAMPLES: usize = 200;
    const LIMIT: Duration = Duration::from_secs(600);
    let start = Instant::now();

    let model = pipeline_instance();
    let s = model.s_per_factor();
    let a = model.a_count();
    let n = estimator_episodes(4.0, a, s, model.k(), model.d(), DELTA, EPS);
    assert_eq!(n, 16241, "episode schedule at C=4 is pinned");

    // Cells: every candidate subset I, every explicit one-step policy on I,
    // every target subset J, every restricted value y, all at (t=1, h=2).
    let full = FactorSet::from_indices(0..model.d());
    let candidates = subsets_up_to(model.d(), model.k(), &FactorSet::empty());
    let dp = ExactDp::new(&model).unwrap();
    let mut cells: Vec<(usize, NonstationaryPolicy, usize, f64)> = Vec::new();
    for (ji, target) in candidates.iter().enumerate() {
        for set in &candidates {
            for pi in support::all_one_step_policies(set, s, a) {
                let rollout = NonstationaryPolicy::new(1, vec![pi]);
                let exact = dp.occupancy(&rollout, 2, target).unwrap().values;
                for (y, want) in exact.into_iter().enumerate() {
                    cells.push((ji, rollout.clone(), y, want));
                }
            }
        }
    }

    let mu = MixturePolicy::trivial();
    let rollout_set = PolicyCover::trivial(1, s);
    let mut sums = vec![0.0f64; cells.len()];
    let mut sq_sums = vec![0.0f64; cells.len()];
    let mut simultaneous = 0usize;
    for r in 0..RESAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + r as u64);
        let ds = collect_ossr_dataset(&model, &mu, &rollout_set, 1, 2, n, &mut rng).unwrap();
        let tensors: Vec<WeightTensor> = candidates
            .iter()
            .map(|j| WeightTensor::build(&ds, &model, &full, j).unwrap())
            .collect();
        let mut all_within = true;
        for (idx, (ji, rollout, y, want)) in cells.iter().enumerate() {
            let est = tensors[*ji]
                .estimate_occupancy(&rollout.steps[0], 0, *y)
                .unwrap();
            sums[idx] += est;
            sq_sums[idx] += est * est;
            all_within &= (est - want).abs() <= EPS;
        }
        simultaneous += all_within as usize;
    }

    let mut worst_z = 0.0f64;
    for (idx, (_, _, _, want)) in cells.iter().enumerate() {
        let mean = sums[idx] / RESAMPLES as f64;
        let var = (sq_sums[idx] - sums[idx] * mean).max(0.0) / (RESAMPLES - 1) as f64;
        let sd_mean = (var / RESAMPLES as f64).sqrt();
        if sd_mean > 1e-12 {
            worst_z = worst_z.max((mean - want).abs() / sd_mean);
        } else {
            // Zero-variance cells must sit exactly on the truth.
            assert!((mean - want).abs() <= 1e-12);
        }
    }
    let needed = ((1.0 - DELTA) * RESAMPLES as f64).ceil() as usize;
    let elapsed = start.elapsed();
    let pass = report(4, worst_z <= 3.0 && simultaneous >= needed && elapsed < LIMIT);
    assert!(
        pass,
        "worst |z| {worst_z:.2} (limit 3), simultaneous {simultaneous}/{RESAMPLES} \
         (need {needed}), elapsed {elapsed:?} (limit {LIMIT:?})"
    );
}

#[test]
fn criterion_05_sampled_covers_succeed_on_most_seeds() {
    const SEEDS: u64 = 100;
    const NEEDED: usize = 90;
    const ETA: f64 = 0.3;
    const LIMIT: Duration = Duration::from_secs(1200);
    let start = Instant::now();

    let model = pipeline_instance();
    let dp = ExactDp::new(&model).unwrap();
    let i_star = model.oracle().i_star().clone();
    let config = SampleConfig::new(ETA / 2.0, 0.1).with_n_override(Some(50_000));
    let mut successes = 0usize;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut meter = BudgetMeter::new(Caps::default().episode_cap);
        let mut covers = vec![PolicyCover::trivial(1, model.s_per_factor())];
        let mut ok = true;
        for h in 2..=model.horizon() {
            match ossr_h(&model, &covers, h, &config, &mut meter, &mut rng) {
                Ok(out) => covers.push(out.cover),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            for cover in &covers {
                ok &= cover.factor_set.is_subset_of(&i_star);
                ok &= dp.cover_deficiency(cover).unwrap() <= ETA / 2.0;
            }
        }
        successes += ok as usize;
    }
    let elapsed = start.elapsed();
    let pass = report(5, successes >= NEEDED && elapsed < LIMIT);
    assert!(
        pass,
        "{successes}/{SEEDS} seeds produced endogenous covers with deficiency <= {:.2}, \
         elapsed {elapsed:?} (limit {LIMIT:?})",
        ETA / 2.0
    );
}

#[test]
fn criterion_06_exorl_learns_near_optimal_endogenous_policies() {
    const SEEDS: u64 = 100;
    const NEEDED: usize = 90;
    const EPS: f64 = 0.1;
    let model = pipeline_instance();
    let dp = ExactDp::new(&model).unwrap();
    let (j_star, _) = full_joint_value_iteration(&model).unwrap();
    let caps = Caps::default();
    let mut cfg = ExoRlConfig::new(EPS, 0.1, 0.3);
    cfg.n_override = Some(50_000);
    let mut successes = 0usize;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ok = match exo_rl(&model, &cfg, &caps, &mut rng) {
            Ok(out) => {
                let j_hat = dp.policy_return(&out.policy).unwrap();
                j_hat >= j_star - EPS - 1e-9 && behavioral_endogeneity(&model, &out.policy).unwrap()
            }
            Err(_) => false,
        };
        successes += ok as usize;
    }
    let pass = report(6, successes >= NEEDED);
    assert!(
        pass,
        "{successes}/{SEEDS} seeds reached J* - {EPS} with endogenous behavior (J* = {j_star:.4})"
    );
}

fn binomial(n: usize, r: usize) -> u64 {
    if r > n {
        return 0;
    }
    let mut out = 1u64;
    for i in 0..r {
        out = out * (n - i) as u64 / (i + 1) as u64;
    }
    out
}

#[test]
fn criterion_07_baseline_is_two_eps_optimal_with_exact_candidate_count() {
    const EPS: f64 = 0.1;
    const BUDGET: u64 = 400_000;
    let instances = vec![
        pipeline_instance(),
        gen_random_exo_mdp(3, 2, 2, 2, 3, 0.05, 2).unwrap().0,
    ];
    let mut pass = true;
    let mut detail = String::new();
    for model in &instances {
        let expected: u64 = (0..=model.k()).map(|r| binomial(model.d(), r)).sum();
        let config = BaselineConfig::from_total_budget(BUDGET, expected).unwrap();
        let mut meter = BudgetMeter::new(BUDGET);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = baseline_subset_enumeration(model, &config, &mut meter, &mut rng).unwrap();
        let dp = ExactDp::new(model).unwrap();
        let j_hat = dp.policy_return(&out.policy).unwrap();
        let (j_star, _) = full_joint_value_iteration(model).unwrap();
        let count_ok = out.candidates.len() as u64 == expected;
        let value_ok = j_hat >= j_star - 2.0 * EPS - 1e-9;
        if !count_ok || !value_ok {
            pass = false;
            detail = format!(
                "d={} k={}: {} candidates (expected {expected}), J {j_hat:.4} vs J* {j_star:.4}",
                model.d(),
                model.k(),
                out.candidates.len()
            );
        }
    }
    let pass = report(7, pass);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_08_bellman_rank_counterexample_at_d4_and_d8() {
    const E1_TOL: f64 = 1e-12;
    let mut pass = true;
    let mut detail = String::new();
    for d in [4usize, 8] {
        let (model, class, _) = gen_bellman_rank_instance(d).unwrap();
        let mats = bellman_error_matrices(&model, &class).unwrap();
        let e1 = &mats[0];
        let e2 = &mats[1];
        let mut worst_e1 = 0.0f64;
        for v in e1.iter() {
            worst_e1 = worst_e1.max(v.abs());
        }
        let mut e2_exact = true;
        for j in 0..d {
            for k in 0..d {
                let want = if j == k && j > 0 { 0.5 } else { 0.0 };
                e2_exact &= e2[(j, k)] == want;
            }
        }
        let rank = bellman_rank(&model, &class).unwrap();
        if worst_e1 > E1_TOL || !e2_exact || rank < d - 1 {
            pass = false;
            detail = format!(
                "d={d}: worst E1 {worst_e1:.3e}, E2 exact: {e2_exact}, rank {rank} (need {})",
                d - 1
            );
        }
    }
    let pass = report(8, pass);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_09_tolerance_ladder_sweep() {
    let mut pass = true;
    let mut detail = String::new();
    for k in 1..=10usize {
        for mult in [1.0, 5.0] {
            for eps in [0.02, 0.1, 0.4] {
                let ladder = EpsLadder::new(k, eps, mult).unwrap();
                let rungs = ladder.rungs();
                let mut ok = rungs.len() == k + 1;
                ok &= rungs.windows(2).all(|w| w[0] > w[1]);
                ok &= (ladder.eps_at(k) - mult * eps).abs() <= 1e-12 * mult * eps;
                ok &= ladder.min_separation_margin() > 0.0;
                if !ok {
                    pass = false;
                    detail = format!("k={k} mult={mult} eps={eps}: rungs {rungs:?}");
                }
            }
        }
    }
    let pass = report(9, pass);
    assert!(pass, "{detail}");
}

fn run_cli(dir: &std::path::Path, threads: &str, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_exomdp"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .status()
        .expect("binary runs");
    assert!(status.success(), "exomdp {args:?} failed in {dir:?}");
}

#[test]
fn criterion_10_cli_outputs_identical_across_thread_counts() {
    let scenarios: Vec<Vec<&str>> = vec![
        vec![
            "gen", "--kind", "random", "--d", "3", "--k", "1", "--S", "2", "--A", "2", "--H", "3",
            "--eta", "0.1", "--seed", "11", "--out", "m.json",
        ],
        vec![
            "ossr", "--model", "m.json", "--eps", "0.2", "--delta", "0.1", "--eta", "0.3",
            "--seed", "5", "--n-override", "20000", "--out", "cover.json",
        ],
        vec![
            "exorl", "--model", "m.json", "--eps", "0.2", "--delta", "0.1", "--eta", "0.3",
            "--seed", "5", "--n-override", "20000", "--out", "policy.json",
        ],
        vec![
            "baseline", "--model", "m.json", "--eps", "0.2", "--budget", "100000", "--seed", "5",
            "--out", "base.json",
        ],
        vec!["eval", "--model", "m.json", "--policy", "policy.json"],
        vec!["exact", "--model", "m.json", "--h", "3"],
    ];
    let root = tempfile::tempdir().unwrap();
    let dirs = [root.path().join("t1"), root.path().join("t4")];
    for (dir, threads) in dirs.iter().zip(["1", "4"]) {
        std::fs::create_dir_all(dir).unwrap();
        for scenario in &scenarios {
            run_cli(dir, threads, scenario);
        }
    }
    let mut pass = true;
    let mut detail = String::new();
    let mut names: Vec<String> = std::fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 10, "expected a full set of outputs: {names:?}");
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        let b = std::fs::read(dirs[1].join(name)).unwrap();
        if a != b {
            pass = false;
            detail = format!("{name} differs between thread counts");
        }
    }
    let pass = report(10, pass);
    assert!(pass, "{detail}");
}
