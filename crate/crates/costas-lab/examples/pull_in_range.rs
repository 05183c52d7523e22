//! Measured pull-in range of the conventional loops by bisection on the lock
//! verdict, against the closed form; modified loops at multiples of lock-in.

use costas_lab::analysis::{design, lock_in_range, pull_in_range, DesignSpec};
use costas_lab::core_types::LoopVariant;
use costas_lab::signal_sim::{locks_within, measure_pull_in_range, LockBudget, SignalSimConfig};
use std::f64::consts::PI;

fn main() -> anyhow::Result<()> {
    for (v, search) in [(LoopVariant::CONVENTIONAL_BPSK, (100e3, 200e3)), (LoopVariant::CONVENTIONAL_QPSK, (40e3, 120e3))] {
        let p = design(&DesignSpec::new(400e3, 100e3, v))?;
        let closed = pull_in_range(&p, v)?.finite().unwrap_or(f64::INFINITY) / (2.0 * PI);
        let tpl = SignalSimConfig::designed(v, 400e3, 100e3, 8, 0.0, 0xACE1, 0.0)?;
        let measured = measure_pull_in_range(&tpl, search, LockBudget::DEFAULT)?;
        println!("{}: measured {:.1} kHz, closed form {:.1} kHz", v.short_name(), measured / 1e3, closed / 1e3);
    }
    for v in [LoopVariant::MODIFIED_BPSK, LoopVariant::MODIFIED_QPSK] {
        let p = design(&DesignSpec::new(400e3, 100e3, v))?;
        let dfl = lock_in_range(&p, v) / (2.0 * PI);
        let tpl = SignalSimConfig::designed(v, 400e3, 100e3, 32, 0.0, 0xACE1, 0.0)?;
        for k in [2.0, 5.0, 10.0] {
            let t = locks_within(&tpl, k * dfl, LockBudget::DEFAULT)?;
            println!("{} at {k:>4}x lock-in ({:.0} kHz): lock after {:?} us", v.short_name(), k * dfl / 1e3, t.map(|t| t * 1e6));
        }
    }
    Ok(())
}
