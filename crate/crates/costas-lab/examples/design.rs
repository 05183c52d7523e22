//! Loop constants for a 400 kHz carrier at 100 kBd, for every primary variant.

use costas_lab::analysis::{design, lock_in_range, lock_time, DesignSpec};
use costas_lab::core_types::LoopVariant;
use std::f64::consts::PI;

fn main() -> anyhow::Result<()> {
    println!("variant      K0 [1/s]    tau1 [s]   tau2 [s]    omega3 [rad/s]   omega_n   zeta   lock-in [kHz]  T_L [us]");
    for v in LoopVariant::PRIMARY {
        let p = design(&DesignSpec::new(400e3, 100e3, v))?;
        let w3 = p.omega3.map_or("-".to_string(), |w| format!("{w:.0}"));
        println!(
            "{:<10} {:>11.0} {:>10.2e} {:>10.3e} {:>16} {:>9.0} {:>6.3} {:>14.1} {:>9.1}",
            v.short_name(),
            p.k0,
            p.tau1,
            p.tau2,
            w3,
            p.omega_n,
            p.zeta,
            lock_in_range(&p, v) / (2.0 * PI * 1e3),
            lock_time(&p) * 1e6
        );
    }
    Ok(())
}
