//! Builds one instance from each generator family, prints what was drawn,
//! and round-trips the files through the on-disk schema.

use exomdp::files::{load_model, save_model};
use exomdp::gen::{gen_bellman_rank_instance, gen_combo_lock, gen_random_exo_mdp};

fn main() -> exomdp::Result<()> {
    let dir = std::env::temp_dir();

    let (random, prov) = gen_random_exo_mdp(5, 2, 2, 2, 4, 0.05, 17)?;
    println!(
        "random: d={} hidden set {} certified eta {:.3} ({} joint states)",
        random.d(),
        random.oracle().i_star(),
        prov.eta.unwrap(),
        random.joint_state_count()
    );
    let path = dir.join("exomdp-random.json");
    save_model(&path, &random, Some(&prov))?;
    let (reloaded, _) = load_model(&path)?;
    assert_eq!(reloaded.joint_state_count(), random.joint_state_count());
    println!("        round-tripped through {}", path.display());

    let (lock, prov) = gen_combo_lock(4, 2, 3, 2, 2, 0.25, 17)?;
    println!(
        "lock:   d={} hidden set {} horizon {} (open with the right 3-step sequence)",
        lock.d(),
        lock.oracle().i_star(),
        lock.horizon()
    );
    save_model(dir.join("exomdp-lock.json"), &lock, Some(&prov))?;

    let (rank, class, prov) = gen_bellman_rank_instance(4)?;
    println!(
        "rank:   {} factors carrying a {}-function class over {} joint states",
        rank.d(),
        class.len(),
        rank.joint_state_count()
    );
    save_model(dir.join("exomdp-rank.json"), &rank, Some(&prov))?;
    Ok(())
}
