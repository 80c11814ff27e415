//! Feasibility probe: maximize the mean state-transfer fidelity over a grid
//! of error points directly (exact adjoint gradient, backtracking ascent,
//! unit-disc clipping). This bounds what any 150-slice unit-amplitude pulse
//! can achieve over the ±10% error box, independent of the derivative-penalty
//! functional used by the synthesizer.
//!
//! Usage: direct_probe <seed|path.txt> <iters> <chunk> [out_path] [gate]
//!
//! With a final `gate` argument the objective becomes the mean squared
//! target-gate overlap |Tr(U(err) R†)|²/4 instead of the transfer fidelity.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use spinroc::linalg::ComplexMatrix;
use spinroc::pulse::{ErrorPoint, Waveform};
use spinroc::roc::controlled_propagator;
use spinroc::state::{spin_x, spin_y, spin_z, transfer_population};
use spinroc::units::TWO_PI;

const OMEGA: f64 = TWO_PI * 10.0e6;
const DT: f64 = 1e-9;
const L: usize = 150;

struct Ops {
    sx: ComplexMatrix,
    sy: ComplexMatrix,
    sz: ComplexMatrix,
}

fn slice_exp(ops: &Ops, ux: f64, uy: f64, e: &ErrorPoint) -> ComplexMatrix {
    let drive = 1.0 + e.delta1;
    let h = ops
        .sx
        .scale(Complex64::new(OMEGA * drive * ux, 0.0))
        .add(&ops.sy.scale(Complex64::new(OMEGA * drive * uy, 0.0)))
        .add(&ops.sz.scale(Complex64::new(e.delta0, 0.0)));
    h.expm_i_hermitian(DT)
}

fn frechet(a: &ComplexMatrix, e: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    let mut big = ComplexMatrix::zeros(2 * n);
    big.set_block(0, 0, a);
    big.set_block(n, n, a);
    big.set_block(0, n, e);
    big.expm().block(0, n, n)
}

/// Mean fidelity over the error grid and its exact gradient. `gate` selects
/// the squared target-overlap objective; otherwise the transfer fidelity.
fn objective(
    samples: &[[f64; 2]],
    pts: &[ErrorPoint],
    ops: &Ops,
    gate: bool,
    r_dag: &ComplexMatrix,
) -> (f64, Vec<[f64; 2]>) {
    let count = samples.len();
    let mut total = 0.0;
    let mut grad = vec![[0.0f64; 2]; count];
    for e in pts {
        let xs: Vec<ComplexMatrix> = samples
            .iter()
            .map(|s| slice_exp(ops, s[0], s[1], e))
            .collect();
        let mut prefix = Vec::with_capacity(count + 1);
        prefix.push(ComplexMatrix::identity(2));
        for x in &xs {
            prefix.push(x.mul(prefix.last().unwrap()));
        }
        let mut suffix = vec![ComplexMatrix::identity(2); count + 1];
        for l in (0..count).rev() {
            suffix[l] = suffix[l + 1].mul(&xs[l]);
        }
        let u10 = prefix[count][(1, 0)];
        let tr = prefix[count].mul(r_dag).trace();
        total += if gate { tr.norm_sqr() / 4.0 } else { u10.norm_sqr() };
        let drive = Complex64::new(OMEGA * (1.0 + e.delta1) * DT, 0.0);
        let dgen_x = ops.sx.scale(Complex64::new(0.0, -1.0) * drive);
        let dgen_y = ops.sy.scale(Complex64::new(0.0, -1.0) * drive);
        for l in 0..count {
            let p = &prefix[l];
            let s = &suffix[l + 1];
            let cot = if gate {
                // d|Tr(U R†)|²/4 = Re Tr(C dX), C = (1/2) conj(Tr) P R† S.
                let scalar = Complex64::new(0.5, 0.0) * tr.conj();
                p.mul(r_dag).mul(s).scale(scalar).dagger()
            } else {
                // d|U10|² = Re Tr(C dX), C_{ba} = 2 conj(U10) S_{1a} P_{b0}.
                let mut c = ComplexMatrix::zeros(2);
                let scalar = Complex64::new(2.0, 0.0) * u10.conj();
                for b in 0..2 {
                    for a in 0..2 {
                        c[(b, a)] = scalar * s[(1, a)] * p[(b, 0)];
                    }
                }
                c.dagger()
            };
            // A = -i dt H(err); rebuild from the slice exponential's generator.
            let drive_f = 1.0 + e.delta1;
            let h = ops
                .sx
                .scale(Complex64::new(OMEGA * drive_f * samples[l][0], 0.0))
                .add(&ops.sy.scale(Complex64::new(OMEGA * drive_f * samples[l][1], 0.0)))
                .add(&ops.sz.scale(Complex64::new(e.delta0, 0.0)));
            let a_dag = h.scale(Complex64::new(0.0, -DT)).dagger();
            let k = frechet(&a_dag, &cot);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    gx += (k[(i, j)].conj() * dgen_x[(i, j)]).re;
                    gy += (k[(i, j)].conj() * dgen_y[(i, j)]).re;
                }
            }
            grad[l][0] += gx;
            grad[l][1] += gy;
        }
    }
    let norm = 1.0 / pts.len() as f64;
    for g in grad.iter_mut() {
        g[0] *= norm;
        g[1] *= norm;
    }
    (total * norm, grad)
}

fn objective_only(
    samples: &[[f64; 2]],
    pts: &[ErrorPoint],
    ops: &Ops,
    gate: bool,
    r_dag: &ComplexMatrix,
) -> f64 {
    let mut total = 0.0;
    for e in pts {
        let mut u = ComplexMatrix::identity(2);
        for s in samples {
            u = slice_exp(ops, s[0], s[1], e).mul(&u);
        }
        total += if gate {
            u.mul(r_dag).trace().norm_sqr() / 4.0
        } else {
            u[(1, 0)].norm_sqr()
        };
    }
    total / pts.len() as f64
}

fn project(samples: &mut [[f64; 2]]) {
    for s in samples.iter_mut() {
        let r2 = s[0] * s[0] + s[1] * s[1];
        if r2 > 1.0 {
            let inv = 1.0 / r2.sqrt();
            s[0] *= inv;
            s[1] *= inv;
        }
    }
}

fn box_min(wave: &Waveform, half_points: usize) -> f64 {
    let n = 2 * half_points + 1;
    let mut worst = 1.0f64;
    for i in 0..n {
        for j in 0..n {
            let a = -0.1 + 0.2 * i as f64 / (n - 1) as f64;
            let b = -0.1 + 0.2 * j as f64 / (n - 1) as f64;
            let u = controlled_propagator(wave, &ErrorPoint::new(a * OMEGA, b)).unwrap();
            worst = worst.min(transfer_population(&u, 0, 1));
        }
    }
    worst
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        eprintln!("need: seed|path iters chunk [out]");
        std::process::exit(2);
    }
    let iters: usize = args[1].parse().unwrap();
    let chunk: usize = args[2].parse().unwrap();
    let out = args.get(3).cloned();
    let gate = args.get(4).map(|s| s == "gate").unwrap_or(false);
    let r_dag = spinroc::roc::rotation_target(std::f64::consts::PI, 0.0).dagger();

    let mut samples: Vec<[f64; 2]> = if let Ok(seed) = args[0].parse::<u64>() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..L)
            .map(|_| [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)])
            .collect()
    } else {
        Waveform::read_file(std::path::Path::new(&args[0]))
            .unwrap()
            .samples
    };
    project(&mut samples);

    let ops = Ops {
        sx: spin_x(),
        sy: spin_y(),
        sz: spin_z(),
    };
    // 5×5 box grid plus heavier corners.
    let mut pts = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let a = -0.1 + 0.05 * i as f64;
            let b = -0.1 + 0.05 * j as f64;
            pts.push(ErrorPoint::new(a * OMEGA, b));
        }
    }
    for &(a, b) in &[(0.1, 0.1), (0.1, -0.1), (-0.1, 0.1), (-0.1, -0.1)] {
        pts.push(ErrorPoint::new(a * OMEGA, b));
    }

    let t0 = Instant::now();
    let (mut j0, mut grad) = objective(&samples, &pts, &ops, gate, &r_dag);
    let mut alpha = 1e-9;
    for it in 1..=iters {
        let mut accepted = false;
        while alpha > 1e-20 {
            let mut cand = samples.clone();
            for (s, g) in cand.iter_mut().zip(&grad) {
                s[0] += alpha * g[0];
                s[1] += alpha * g[1];
            }
            project(&mut cand);
            let jn = objective_only(&cand, &pts, &ops, gate, &r_dag);
            if jn > j0 {
                samples = cand;
                j0 = jn;
                alpha *= 1.5;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            println!("stationary at it={it}");
            break;
        }
        if it % chunk == 0 || it == iters {
            let wave = Waveform {
                dt: DT,
                omega_max: OMEGA,
                samples: samples.clone(),
            };
            println!(
                "it={it} meanF={:.7} box9={:.6} ({:.0}s)",
                j0,
                box_min(&wave, 4),
                t0.elapsed().as_secs_f64()
            );
        }
        if accepted && it < iters {
            let g = objective(&samples, &pts, &ops, gate, &r_dag);
            j0 = g.0;
            grad = g.1;
        }
    }
    let wave = Waveform {
        dt: DT,
        omega_max: OMEGA,
        samples,
    };
    println!("final box17={:.6}", box_min(&wave, 8));
    if let Some(path) = out {
        wave.write_file(std::path::Path::new(&path)).unwrap();
        println!("wrote {path}");
    }
}
