use spinroc::noise::{GaussianDetuning, LorentzianRabi, NoiseEnsemble};
use spinroc::pulse::{square_pulse, ErrorPoint, Waveform};
use spinroc::sensing::*;
use spinroc::units::{GAMMA_C13_RADPS_PER_GAUSS, TWO_PI};
use std::f64::consts::PI;

fn profile(spec: &Spectrum, lo: f64, hi: f64, label: &str) {
    println!("--- profile {label} [{:.2},{:.2}] MHz", lo / 1e6, hi / 1e6);
    for (i, &f) in spec.frequency_axis.iter().enumerate() {
        if (lo..hi).contains(&f) {
            println!("  f={:.5} p={:.4}", f / 1e6, spec.population[i]);
        }
    }
}

fn main() {
    let omega = TWO_PI * 10e6;
    let square_pi = square_pulse(PI, 0.0, omega, 1e-9).unwrap();
    let roc_pi = Waveform::read_file(std::path::Path::new("/root/proto/wave_pi_pinned.txt")).unwrap();
    let spin = NuclearSpinParams::from_couplings(TWO_PI * 305e3, TWO_PI * 136e3).unwrap();
    let intrinsic = NoiseEnsemble {
        detuning: GaussianDetuning { sigma: TWO_PI * 0.226e6 },
        rabi: LorentzianRabi { gamma: 1.0 / 50.01e-6 },
        omega,
        sample_count: 40,
        seed: 7,
    };
    let base = SensingConfig {
        b0: 510.0,
        gamma_n: GAMMA_C13_RADPS_PER_GAUSS,
        spins: vec![spin],
        sequence: DDKind::Xy4,
        repeats: 40,
        pi_pulse: square_pi.clone(),
        omega,
        err: ErrorPoint::ZERO,
        noise: None,
        tau_axis: taus_for_frequencies(&default_frequency_axis()).unwrap(),
    };

    // (i) noiseless square: true dip position/depth, spurious absence
    let clean = simulate_spectrum(&base).unwrap();
    profile(&clean, 0.66e6, 0.75e6, "noiseless square XY4x40: true region");
    profile(&clean, 1.36e6, 1.42e6, "noiseless square XY4x40: spurious region");

    // (ii) errored square with ensemble
    let mut sq = base.clone();
    sq.err = ErrorPoint::new(0.08 * omega, 0.08);
    sq.noise = Some(intrinsic);
    let sq_spec = simulate_spectrum(&sq).unwrap();
    profile(&sq_spec, 0.63e6, 0.76e6, "sq 8%+8% ens: true region");
    profile(&sq_spec, 1.33e6, 1.46e6, "sq 8%+8% ens: spurious region");

    // quiet reference bands for local-baseline reasoning
    let band_stats = |spec: &Spectrum, lo: f64, hi: f64| -> (f64, f64) {
        let vals: Vec<f64> = spec
            .frequency_axis
            .iter()
            .zip(&spec.population)
            .filter(|(f, _)| (lo..hi).contains(*f))
            .map(|(_, p)| *p)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        (mean, min)
    };
    for (lo, hi, label) in [
        (0.85e6, 1.15e6, "0.85-1.15 (quiet)"),
        (0.685e6, 0.705e6, "true window"),
        (1.37e6, 1.41e6, "spurious window"),
    ] {
        let (m, mn) = band_stats(&sq_spec, lo, hi);
        println!("sq ens band {label}: mean {:.4} min {:.4}", m, mn);
    }

    // (iii) ROC pi with same errors; 350 ns pulse caps the axis at 1.42 MHz
    let capped: Vec<f64> = default_frequency_axis()
        .into_iter()
        .filter(|&f| f <= 1.42e6)
        .collect();
    let mut roc = sq.clone();
    roc.pi_pulse = roc_pi;
    roc.tau_axis = taus_for_frequencies(&capped).unwrap();
    let t0 = std::time::Instant::now();
    let roc_spec = simulate_spectrum(&roc).unwrap();
    println!("roc ensemble run: {:.2?}", t0.elapsed());
    profile(&roc_spec, 0.66e6, 0.75e6, "roc 8%+8% ens: true region");
    profile(&roc_spec, 1.36e6, 1.42e6, "roc 8%+8% ens: spurious region");
    for (lo, hi, label) in [
        (0.85e6, 1.15e6, "0.85-1.15 (quiet)"),
        (0.685e6, 0.705e6, "true window"),
        (1.37e6, 1.41e6, "spurious window"),
    ] {
        let (m, mn) = band_stats(&roc_spec, lo, hi);
        println!("roc ens band {label}: mean {:.4} min {:.4}", m, mn);
    }

    // noiseless ROC for the ideal-depth anchor
    let mut roc_clean = base.clone();
    roc_clean.pi_pulse = roc.pi_pulse.clone();
    roc_clean.tau_axis = roc.tau_axis.clone();
    let roc_clean_spec = simulate_spectrum(&roc_clean).unwrap();
    profile(&roc_clean_spec, 0.66e6, 0.75e6, "roc noiseless: true region");
    profile(&roc_clean_spec, 1.36e6, 1.42e6, "roc noiseless: spurious region");
    for (lo, hi, label) in [
        (0.85e6, 1.15e6, "0.85-1.15 (quiet)"),
        (0.685e6, 0.705e6, "true window"),
        (1.37e6, 1.41e6, "spurious window"),
    ] {
        let (m, mn) = band_stats(&roc_clean_spec, lo, hi);
        println!("roc clean band {label}: mean {:.4} min {:.4}", m, mn);
    }
    for (lo, hi, label) in [
        (0.85e6, 1.15e6, "0.85-1.15 (quiet)"),
        (0.685e6, 0.705e6, "true window"),
        (1.37e6, 1.41e6, "spurious window"),
    ] {
        let (m, mn) = band_stats(&clean, lo, hi);
        println!("sq clean band {label}: mean {:.4} min {:.4}", m, mn);
    }
}
