//! Grid of initial states around the semistable example: some trajectories
//! lock, others settle on a running cycle. Writes the bundle as CSV.

use costas_lab::ode_engine::{example_semistable as ex, phase_portrait, LimitClass};

fn main() -> anyhow::Result<()> {
    let model = ex::model(ex::DELTA_OMEGA0);
    let cfg = ex::portrait_config();
    let result = phase_portrait(&model, &cfg)?;
    let count = |c: LimitClass| result.trajectories.iter().filter(|t| t.class == c).count();
    println!(
        "eq: {}  cycle: {}  undecided: {}",
        count(LimitClass::Eq),
        count(LimitClass::Cycle),
        count(LimitClass::Undecided)
    );
    if let Some(rate) = result.cycle_rate {
        println!("running cycle mean phase rate: {rate:.3} rad/s");
    }
    for b in &result.boundary {
        println!("basin boundary between {:?} (eq) and {:?} (cycle)", b.eq_side, b.cycle_side);
    }
    println!("offset outside pull-in range: {}", result.outside_pull_in);
    let path = std::env::temp_dir().join("portrait.csv");
    std::fs::write(&path, result.to_csv())?;
    println!("wrote {}", path.display());
    Ok(())
}
