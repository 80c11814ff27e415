//! Scratch probe: RB decay fits for square and shaped pulse families at the
//! benchmark error points, swept over suite seeds. Not part of the shipped
//! toolchain.

use std::time::Instant;

use spinroc::noise::{GaussianDetuning, LorentzianRabi, NoiseEnsemble};
use spinroc::pulse::{ErrorPoint, Waveform};
use spinroc::rb::{
    generate_rb_suite, simulate_rb, PulseFamily, RBNoise, DEFAULT_LENGTHS, DEFAULT_N_G,
    DEFAULT_N_P,
};
use spinroc::units::TWO_PI;

fn main() {
    let omega = TWO_PI * 10.0e6;
    let dt = 1e-9;
    let corner = ErrorPoint { delta0: 0.1 * omega, delta1: 0.1, delta_phi: 0.0 };
    let square = PulseFamily::square(omega, dt).unwrap();
    let pi = Waveform::from_text(&std::fs::read_to_string("/root/proto/wave_pi_pinned.txt").unwrap()).unwrap();
    let half_pi = Waveform::from_text(&std::fs::read_to_string("/root/proto/wave_halfpi_pinned.txt").unwrap()).unwrap();
    let shaped = PulseFamily::shaped("roc", pi, half_pi).unwrap();
    let ens = NoiseEnsemble {
        detuning: GaussianDetuning { sigma: TWO_PI * 0.226e6 },
        rabi: LorentzianRabi { gamma: 1.0 / 50.01e-6 },
        omega,
        sample_count: 60,
        seed: 4,
    };

    let short_lengths = [2usize, 4, 8, 16, 32];
    let (n_g, n_p): (usize, usize) = (
        std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_N_G),
        std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_N_P),
    );
    for seed in 1..=10u64 {
        let t0 = Instant::now();
        let short = generate_rb_suite(&short_lengths, n_g, n_p, seed).unwrap();
        let full = generate_rb_suite(&DEFAULT_LENGTHS, DEFAULT_N_G, DEFAULT_N_P, seed).unwrap();
        let sq_corner = simulate_rb(
            &short,
            &square,
            &RBNoise::Ensemble { ensemble: &ens, center: corner },
        )
        .unwrap()
        .fit
        .unwrap();
        let roc_corner = simulate_rb(
            &short,
            &shaped,
            &RBNoise::Ensemble { ensemble: &ens, center: corner },
        )
        .unwrap()
        .fit
        .unwrap();
        let sq_res = simulate_rb(
            &full,
            &square,
            &RBNoise::Ensemble { ensemble: &ens, center: ErrorPoint::ZERO },
        )
        .unwrap()
        .fit
        .unwrap();
        println!(
            "seed {seed:2}: square corner {:.5} (+-{:.5}) | roc corner {:.5} (+-{:.5}) | square res+ens {:.5} (+-{:.5}) [{:.2}s]",
            sq_corner.f_a, sq_corner.f_a_sigma,
            roc_corner.f_a, roc_corner.f_a_sigma,
            sq_res.f_a, sq_res.f_a_sigma,
            t0.elapsed().as_secs_f64()
        );
    }
}
