//! Discretizes the loop filter and the arm low-pass with and without
//! prewarping and compares the responses with the analog ones.

use costas_lab::filters::{bilinear, freq_response, make_lpf1, make_pi_filter};

fn main() -> anyhow::Result<()> {
    let fs = 3.2e6;
    let t = 1.0 / fs;
    let omega3 = 1.2566e6;
    let lpf = make_lpf1(omega3)?;
    let plain = bilinear(&lpf, t, None)?;
    let warped = bilinear(&lpf, t, Some(omega3))?;
    println!("first-order LPF, corner {omega3:.0} rad/s, sampled at {:.1} MHz", fs / 1e6);
    for w in [0.25, 0.5, 1.0, 2.0, 4.0].map(|k| k * omega3) {
        println!(
            "  omega {:>9.0}: analog {:.4}  tustin {:.4}  prewarped {:.4}",
            w,
            freq_response(&lpf, w)?.norm(),
            plain.response_at(w).norm(),
            warped.response_at(w).norm()
        );
    }
    let pi = bilinear(&make_pi_filter(20e-6, 3.979e-6)?, t, None)?;
    println!("PI filter coefficients: {}", pi.to_json());
    println!("PI filter poles: {:?}", pi.poles());
    Ok(())
}
