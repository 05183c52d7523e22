//! Steady phase error of the classic phase model against the sample-level
//! loop started from identical data, for the nominal LPF and a wider one.

use costas_lab::signal_sim::{averaging_gap_experiment, GapExperiment};

fn main() -> anyhow::Result<()> {
    let base = GapExperiment::reference();
    for (label, scale) in [("nominal omega3", 1.0), ("10x omega3", 10.0)] {
        let exp = GapExperiment { omega3: base.omega3 * scale, ..base };
        let r = averaging_gap_experiment(&exp)?;
        println!(
            "{label:>14}: phase model {:.4} rad, signal model {:.4} rad, gap {:.4} rad (mod pi: {:.4})",
            r.phase_model, r.signal_model, r.discrepancy, r.discrepancy_mod_period
        );
    }
    Ok(())
}
