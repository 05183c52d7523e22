//! Pull-in time tables: closed-form theory against the median of a seed
//! ensemble of sample-level runs.

use costas_lab::analysis::{design, pull_in_time_formula, DesignSpec};
use costas_lab::core_types::LoopVariant;
use costas_lab::signal_sim::{pull_in_time_ensemble, SignalSimConfig, DEFAULT_SEEDS};

const N_MOD: u32 = 32;

fn main() -> anyhow::Result<()> {
    let tables: [(LoopVariant, u32, [f64; 3]); 4] = [
        (LoopVariant::CONVENTIONAL_BPSK, 8, [50e3, 70e3, 100e3]),
        (LoopVariant::CONVENTIONAL_QPSK, 8, [40e3, 50e3, 60e3]),
        (LoopVariant::MODIFIED_BPSK, N_MOD, [50e3, 100e3, 200e3]),
        (LoopVariant::MODIFIED_QPSK, N_MOD, [50e3, 100e3, 200e3]),
    ];
    for (variant, n, offsets) in tables {
        let params = design(&DesignSpec::new(400e3, 100e3, variant))?;
        println!("{variant} (sampling {} MHz)", n as f64 * 0.4);
        println!("  offset kHz   theory us   sim median us   per-seed us");
        for f in offsets {
            let theory = pull_in_time_formula(&params, variant, 2.0 * std::f64::consts::PI * f).ok();
            let cfg = SignalSimConfig::designed(variant, 400e3, 100e3, n, f, 0, 1.5e-3)?;
            let e = pull_in_time_ensemble(&cfg, f, &DEFAULT_SEEDS)?;
            let us = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.1}", v * 1e6));
            println!(
                "  {:>10.0}   {:>9}   {:>13}   {}",
                f / 1e3,
                us(theory),
                us(e.median),
                e.times.iter().map(|t| us(*t)).collect::<Vec<_>>().join(" ")
            );
        }
    }
    Ok(())
}
