//! Runs the structural diagnostics on a generated instance: occupancy
//! decoupling, restriction consistency, the density-ratio bound for exact
//! covers, and the tolerance-ladder arithmetic.

use exomdp::diag::{check_decoupling, check_density_ratio, check_ladder, check_restriction};
use exomdp::gen::gen_random_exo_mdp;

fn main() -> exomdp::Result<()> {
    let (model, _) = gen_random_exo_mdp(4, 2, 2, 2, 3, 0.05, 31)?;
    for report in [
        check_decoupling(&model, 25, 1)?,
        check_restriction(&model, 25, 2)?,
        check_density_ratio(&model, 0.0)?,
        check_ladder()?,
    ] {
        println!(
            "{:<14} {}  worst residual {:.3e}  ({})",
            report.check,
            if report.pass { "ok" } else { "VIOLATED" },
            report.worst_residual,
            report.detail
        );
    }
    Ok(())
}
