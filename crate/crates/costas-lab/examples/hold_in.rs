//! Hold-in ranges of the lead-lag BPSK loop on both sides of the LPF corner
//! threshold, and the unbounded range of the PI loop.

use costas_lab::analysis::{design, hold_in_leadlag, hold_in_pi, DesignSpec};
use costas_lab::core_types::LoopVariant;

fn main() -> anyhow::Result<()> {
    let p = design(&DesignSpec::new(400e3, 100e3, LoopVariant::CONVENTIONAL_BPSK))?;
    let pi = hold_in_pi(&p);
    println!("PI filter: {:?} ({})", pi.intervals, pi.case);
    let (k0, kd, tau1, tau2) = (1.0e6, 1.0, 1e-4, 1e-5);
    let threshold = (tau1 - tau2) / (tau1 * tau2);
    for scale in [2.0, 0.5, 0.05] {
        let h = hold_in_leadlag(k0, kd, tau1, tau2, scale * threshold)?;
        println!(
            "lead-lag, omega3 = {scale} x threshold: {:?} [{}; cross-checked {}] {}",
            h.intervals, h.case, h.cross_checked, h.note
        );
    }
    Ok(())
}
