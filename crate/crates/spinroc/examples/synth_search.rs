//! Tuning utility for the robust-pulse synthesizer: runs the optimizer in
//! chunks, reporting fitness, zero-error transfer fidelity, and the worst
//! transfer fidelity over the ±10% detuning × drive-error box after each
//! chunk, then writes the best waveform found.
//!
//! Usage:
//!   synth_search <eps1_frac> <eps2> <mu1_det> <mu1_rab> <mu2_det> <mu2_rab> \
//!                <mu12> <seed> <total_iters> <chunk> [out_path] [slice_count]

use std::time::Instant;

use spinroc::linalg::ComplexMatrix;
use spinroc::pulse::{ErrorPoint, Waveform};
use spinroc::roc::{optimize, controlled_propagator, rotation_target, MuWeights, RocConfig, RocInit};
use spinroc::state::{average_gate_fidelity, transfer_population};
use spinroc::units::TWO_PI;

/// Worst fidelity over the ±10% detuning × drive-error box: transfer
/// population for π targets, average gate fidelity otherwise.
fn box_min(wave: &Waveform, target: &ComplexMatrix, omega: f64, half_points: usize, gate: bool) -> f64 {
    let n = 2 * half_points + 1;
    let mut worst = 1.0f64;
    for i in 0..n {
        for j in 0..n {
            let a = -0.1 + 0.2 * i as f64 / (n - 1) as f64;
            let b = -0.1 + 0.2 * j as f64 / (n - 1) as f64;
            let u = controlled_propagator(wave, &ErrorPoint::new(a * omega, b)).unwrap();
            let f = if gate {
                average_gate_fidelity(&u, target)
            } else {
                transfer_population(&u, 0, 1)
            };
            worst = worst.min(f);
        }
    }
    worst
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 10 {
        eprintln!("need: eps1_frac eps2 mu1_det mu1_rab mu2_det mu2_rab mu12 seed total chunk [out]");
        std::process::exit(2);
    }
    let f: Vec<f64> = args[..7].iter().map(|s| s.parse().unwrap()).collect();
    let total: usize = args[8].parse().unwrap();
    let chunk: usize = args[9].parse().unwrap();
    let out = args.get(10).cloned();

    let omega = TWO_PI * 10.0e6;
    let mut cfg = RocConfig::pi_pulse(omega);
    cfg.epsilon1 = f[0] * omega;
    cfg.epsilon2 = f[1];
    cfg.mu = MuWeights {
        first: [f[2], f[3]],
        second: [f[4], f[5]],
        second_mixed: f[6],
    };
    cfg.max_iters = chunk;
    cfg.stall_window = chunk.max(400);
    if let Some(l) = args.get(11) {
        cfg.slice_count = l.parse().unwrap();
    }
    let mut gate_score = false;
    if let Some(deg) = args.get(12) {
        let theta = deg.parse::<f64>().unwrap().to_radians();
        cfg.target = rotation_target(theta, 0.0);
        gate_score = (theta - std::f64::consts::PI).abs() > 1e-9;
    }

    let t0 = Instant::now();
    let mut init = if let Ok(seed) = args[7].parse::<u64>() {
        RocInit::Seed(seed)
    } else {
        RocInit::Waveform(Waveform::read_file(std::path::Path::new(&args[7])).unwrap())
    };
    let mut done = 0;
    let mut best_box = 0.0f64;
    let mut best_wave: Option<Waveform> = None;
    while done < total {
        let result = optimize(&cfg, init).expect("optimize failed");
        let accepted = result.fitness_trace.len().saturating_sub(1);
        done += accepted.max(1);
        let u0 = controlled_propagator(&result.waveform, &ErrorPoint::ZERO).unwrap();
        let f00 = if gate_score {
            average_gate_fidelity(&u0, &cfg.target)
        } else {
            transfer_population(&u0, 0, 1)
        };
        let bx = box_min(&result.waveform, &cfg.target, omega, 4, gate_score);
        if bx > best_box {
            best_box = bx;
            best_wave = Some(result.waveform.clone());
        }
        println!(
            "iters={done} fitness={:.7} f00={:.6} box9={:.6} ({:.0}s)",
            result.final_fitness,
            f00,
            bx,
            t0.elapsed().as_secs_f64()
        );
        init = RocInit::Waveform(result.waveform);
        if accepted == 0 {
            println!("stationary point; stopping");
            break;
        }
    }
    if let (Some(path), Some(wave)) = (out.as_deref(), best_wave.as_ref()) {
        wave.write_file(std::path::Path::new(path)).unwrap();
        println!("wrote best (box9={best_box:.6}) to {path}");
    }
}
