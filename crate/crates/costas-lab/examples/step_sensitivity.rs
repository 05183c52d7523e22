//! Fixed-step RK4 verdicts for a loop sitting next to a semistable cycle.

use costas_lab::ode_engine::{example_semistable as ex, step_sensitivity_probe};

fn main() -> anyhow::Result<()> {
    let model = ex::model(ex::DELTA_OMEGA0);
    let report = step_sensitivity_probe(&model, ex::state0(), &[2e-2, 1e-2, 5e-3, 1e-3], ex::T_END)?;
    for v in &report.fixed {
        println!(
            "h = {:<6} locked = {:<5} slips = {:<5} mean rate over last 20% = {:.3} rad/s",
            v.h, v.locked, v.cycle_slips, v.mean_rate
        );
    }
    println!(
        "adaptive default: locked = {}, tightened: locked = {}, solver-sensitive = {}",
        report.rk45_default_locked, report.rk45_tight_locked, report.solver_sensitive
    );
    Ok(())
}
