//! One sample-level run of the conventional QPSK loop: lock time, cycle slips,
//! recovered symbols, and the trace written to CSV.

use costas_lab::core_types::LoopVariant;
use costas_lab::signal_sim::{demod_ber, run_config, SignalSimConfig};

fn main() -> anyhow::Result<()> {
    let cfg = SignalSimConfig::designed(LoopVariant::CONVENTIONAL_QPSK, 400e3, 100e3, 8, 40e3, 0xACE1, 400e-6)?;
    let run = run_config(&cfg)?;
    let r = &run.result;
    println!(
        "locked = {}, t_lock = {:?} us, cycle slips = {}, final frequency error = {:.1} rad/s",
        r.locked,
        r.t_lock.map(|t| t * 1e6),
        r.cycle_slips,
        r.final_freq_error
    );
    println!("symbol error rate after lock: {}", demod_ber(&run, &cfg.source)?);
    let path = std::env::temp_dir().join("qpsk_trace.csv");
    std::fs::write(&path, run.trace.to_csv(4))?;
    println!("trace written to {}", path.display());
    Ok(())
}
