//! Dress rehearsal for the synthesized-pulse quality gates: runs the stock
//! π and π/2 synthesis configs from seed 1 and reports zero-error fidelity,
//! worst box fidelity, and wall time for each.

use std::time::Instant;

use spinroc::pulse::ErrorPoint;
use spinroc::roc::{controlled_propagator, optimize, RocConfig, RocInit};
use spinroc::state::{average_gate_fidelity, transfer_population};
use spinroc::units::TWO_PI;

fn main() {
    let omega = TWO_PI * 10.0e6;

    let t0 = Instant::now();
    let cfg = RocConfig::pi_pulse(omega);
    let result = optimize(&cfg, RocInit::Seed(1)).unwrap();
    let dt_pi = t0.elapsed().as_secs_f64();
    let u0 = controlled_propagator(&result.waveform, &ErrorPoint::ZERO).unwrap();
    let f00 = transfer_population(&u0, 0, 1);
    let mut worst = 1.0f64;
    let mut worst_gate = 1.0f64;
    let n = 17;
    for i in 0..n {
        for j in 0..n {
            let a = -0.1 + 0.2 * i as f64 / (n - 1) as f64;
            let b = -0.1 + 0.2 * j as f64 / (n - 1) as f64;
            let u = controlled_propagator(&result.waveform, &ErrorPoint::new(a * omega, b)).unwrap();
            worst = worst.min(transfer_population(&u, 0, 1));
            worst_gate = worst_gate.min(average_gate_fidelity(&u, &cfg.target));
        }
    }
    println!(
        "pi:     iters={} fitness={:.7} f00={:.7} box17={:.6} gate_box17={:.6} ({:.0}s)",
        result.fitness_trace.len() - 1,
        result.final_fitness,
        f00,
        worst,
        worst_gate,
        dt_pi
    );
    result
        .waveform
        .write_file(std::path::Path::new("/root/proto/wave_pi_pinned.txt"))
        .unwrap();

    let t1 = Instant::now();
    let cfg2 = RocConfig::half_pi_pulse(omega);
    let result2 = optimize(&cfg2, RocInit::Seed(1)).unwrap();
    let dt_half = t1.elapsed().as_secs_f64();
    let u0 = controlled_propagator(&result2.waveform, &ErrorPoint::ZERO).unwrap();
    let g00 = average_gate_fidelity(&u0, &cfg2.target);
    let mut worst2 = 1.0f64;
    for i in 0..n {
        for j in 0..n {
            let a = -0.1 + 0.2 * i as f64 / (n - 1) as f64;
            let b = -0.1 + 0.2 * j as f64 / (n - 1) as f64;
            let u = controlled_propagator(&result2.waveform, &ErrorPoint::new(a * omega, b)).unwrap();
            worst2 = worst2.min(average_gate_fidelity(&u, &cfg2.target));
        }
    }
    println!(
        "halfpi: iters={} fitness={:.7} g00={:.7} gate_box17={:.6} ({:.0}s)",
        result2.fitness_trace.len() - 1,
        result2.final_fitness,
        g00,
        worst2,
        dt_half
    );
    result2
        .waveform
        .write_file(std::path::Path::new("/root/proto/wave_halfpi_pinned.txt"))
        .unwrap();
}
