//! Closed-form acquisition figures and the averaged-model pull-in time next to
//! the linearized formula.

use costas_lab::analysis::{design, lock_in_range, predict, DesignSpec};
use costas_lab::baseband::{averaged_transit_time, AveragedModel};
use costas_lab::core_types::LoopVariant;
use std::f64::consts::PI;

fn main() -> anyhow::Result<()> {
    for v in LoopVariant::PRIMARY {
        let p = design(&DesignSpec::new(400e3, 100e3, v))?;
        let offsets: Vec<f64> = [50e3, 70e3, 100e3].iter().map(|f| 2.0 * PI * f).collect();
        let report = predict(&p, v, &offsets, None)?;
        let range = report.delta_f_p.map_or("unbounded".to_string(), |f| format!("{:.1} kHz", f / 1e3));
        println!("{}: lock-in {:.1} kHz, pull-in {range}", v.short_name(), report.delta_f_l / 1e3);
        let model = AveragedModel::new(p, v);
        let dwl = lock_in_range(&p, v);
        for &(dw, tp) in &report.t_p.samples {
            let avg = averaged_transit_time(&model, dw, dwl).map_or("-".into(), |t| format!("{:.1}", t * 1e6));
            println!("  {:>6.0} kHz: formula {:>7.1} us, averaged ODE {:>7} us", dw / (2.0 * PI * 1e3), tp * 1e6, avg);
        }
    }
    Ok(())
}
