//! Randomized benchmarking: sequence generation in the Pauli-dressed style
//! (random π/2 computational gates interleaved with random Pauli π gates, a
//! deterministic recovery rotation, and a final Pauli), simulation of those
//! sequences with physical pulse waveforms under control errors, and the
//! two-parameter decay fit that extracts the average gate fidelity and the
//! preparation/readout offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use num_complex::Complex64;

use crate::error::{Result, SpinError};
use crate::fitting::nelder_mead;
use crate::linalg::ComplexMatrix;
use crate::noise::NoiseEnsemble;
use crate::pulse::{bb1_pulse, pulse_propagator, square_pulse, ErrorPoint, Waveform};

const PI: f64 = std::f64::consts::PI;

/// Default sequence lengths (counts of computational π/2 gates).
pub const DEFAULT_LENGTHS: [usize; 7] = [2, 4, 8, 16, 32, 64, 128];
/// Default number of random computational-gate strings.
pub const DEFAULT_N_G: usize = 10;
/// Default number of random Pauli dressings per truncation.
pub const DEFAULT_N_P: usize = 4;

/// Gate class: Pauli gates are π-type (e^{±iσ_b π/2}), Clifford gates are
/// π/2-type (e^{±iσ_u π/4}).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RBKind {
    Pauli,
    Clifford,
}

/// Rotation axis. `I` (σ₀) appears only in Pauli gates, where the gate is a
/// global phase; `Z` Paulis and the z-axis recovery are realized virtually
/// as frame-phase updates on subsequent pulses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RBAxis {
    I,
    X,
    Y,
    Z,
}

/// One gate of a benchmarking sequence: e^{i·sign·σ_axis·π/2} for Pauli
/// kind, e^{i·sign·σ_axis·π/4} for Clifford kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RBGate {
    pub kind: RBKind,
    pub sign: i8,
    pub axis: RBAxis,
}

impl RBGate {
    pub fn validate(&self) -> Result<()> {
        if self.sign != 1 && self.sign != -1 {
            return Err(SpinError::config("gate sign must be +1 or -1"));
        }
        if self.kind == RBKind::Clifford && self.axis == RBAxis::I {
            return Err(SpinError::config("identity axis is only valid for Pauli gates"));
        }
        Ok(())
    }

    /// Exact unitary of the gate, global phase included.
    pub fn ideal_unitary(&self) -> ComplexMatrix {
        let half_angle = match self.kind {
            RBKind::Pauli => PI / 2.0,
            RBKind::Clifford => PI / 4.0,
        } * self.sign as f64;
        let (c, s) = (half_angle.cos(), half_angle.sin());
        let mut u = ComplexMatrix::zeros(2);
        match self.axis {
            RBAxis::I => {
                u[(0, 0)] = Complex64::new(c, s);
                u[(1, 1)] = Complex64::new(c, s);
            }
            RBAxis::X => {
                u[(0, 0)] = Complex64::new(c, 0.0);
                u[(1, 1)] = Complex64::new(c, 0.0);
                u[(0, 1)] = Complex64::new(0.0, s);
                u[(1, 0)] = Complex64::new(0.0, s);
            }
            RBAxis::Y => {
                u[(0, 0)] = Complex64::new(c, 0.0);
                u[(1, 1)] = Complex64::new(c, 0.0);
                u[(0, 1)] = Complex64::new(s, 0.0);
                u[(1, 0)] = Complex64::new(-s, 0.0);
            }
            RBAxis::Z => {
                u[(0, 0)] = Complex64::new(c, s);
                u[(1, 1)] = Complex64::new(c, -s);
            }
        }
        u
    }
}

/// A full benchmarking sequence in temporal order:
/// P₁ G₁ P₂ G₂ … P_l G_l P_{l+1} R P_{l+2}, where the G are random π/2
/// computational gates, the P random Pauli gates, and R the deterministic
/// π/2 recovery (at index `gates.len() - 2`) chosen so the ideal final
/// state is a σ_z eigenstate.
#[derive(Clone, Debug)]
pub struct RBSequence {
    pub gates: Vec<RBGate>,
    /// Count of computational π/2 gates (excludes the recovery).
    pub length: usize,
    /// Basis index (0 or 1) of the ideal final state.
    pub expected_final: usize,
}

impl RBSequence {
    /// Ideal final state of the sequence applied to |0⟩.
    pub fn ideal_final_state(&self) -> [Complex64; 2] {
        let mut psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        for g in &self.gates {
            let u = g.ideal_unitary();
            psi = apply(&u, &psi);
        }
        psi
    }

    /// True when the ideal final state is a σ_z eigenstate matching
    /// `expected_final` to the given tolerance.
    pub fn ends_in_expected_eigenstate(&self, tol: f64) -> bool {
        let psi = self.ideal_final_state();
        let p = psi[self.expected_final].norm_sqr();
        (p - 1.0).abs() < tol
    }
}

fn apply(u: &ComplexMatrix, psi: &[Complex64; 2]) -> [Complex64; 2] {
    [
        u[(0, 0)] * psi[0] + u[(0, 1)] * psi[1],
        u[(1, 0)] * psi[0] + u[(1, 1)] * psi[1],
    ]
}

/// Ordered recovery candidates: π/2 rotations about ±z, ±x, ±y. The z
/// candidates come first so states already on the pole take the virtual
/// (zero-duration) recovery.
const RECOVERY_CANDIDATES: [(RBAxis, i8); 6] = [
    (RBAxis::Z, 1),
    (RBAxis::Z, -1),
    (RBAxis::X, 1),
    (RBAxis::X, -1),
    (RBAxis::Y, 1),
    (RBAxis::Y, -1),
];

/// Generate the benchmarking suite: for each of `n_g` random computational
/// strings, truncate at every requested length, wrap each truncation in
/// `n_p` random Pauli dressings, and append the deterministic recovery and
/// final Pauli. Fully determined by `seed`.
pub fn generate_rb_suite(
    lengths: &[usize],
    n_g: usize,
    n_p: usize,
    seed: u64,
) -> Result<Vec<RBSequence>> {
    if lengths.is_empty() {
        return Err(SpinError::config("need at least one sequence length"));
    }
    if lengths[0] == 0 {
        return Err(SpinError::config("sequence lengths must be at least 1"));
    }
    if !lengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(SpinError::config("sequence lengths must be strictly increasing"));
    }
    if n_g == 0 || n_p == 0 {
        return Err(SpinError::config("n_g and n_p must be positive"));
    }
    let l_max = *lengths.last().unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut suite = Vec::with_capacity(n_g * n_p * lengths.len());
    for _ in 0..n_g {
        let string: Vec<RBGate> = (0..l_max).map(|_| random_clifford(&mut rng)).collect();
        for &l in lengths {
            for _ in 0..n_p {
                let paulis: Vec<RBGate> = (0..l + 2).map(|_| random_pauli(&mut rng)).collect();
                suite.push(assemble_sequence(&string[..l], &paulis));
            }
        }
    }
    Ok(suite)
}

fn random_clifford(rng: &mut ChaCha12Rng) -> RBGate {
    let axis = if rng.gen::<bool>() { RBAxis::X } else { RBAxis::Y };
    let sign = if rng.gen::<bool>() { 1 } else { -1 };
    RBGate { kind: RBKind::Clifford, sign, axis }
}

fn random_pauli(rng: &mut ChaCha12Rng) -> RBGate {
    let axis = match rng.gen_range(0..4u8) {
        0 => RBAxis::I,
        1 => RBAxis::X,
        2 => RBAxis::Y,
        _ => RBAxis::Z,
    };
    let sign = if rng.gen::<bool>() { 1 } else { -1 };
    RBGate { kind: RBKind::Pauli, sign, axis }
}

/// Interleave Paulis and computational gates, then pick the first recovery
/// candidate that sends the ideal state to a pole of the Bloch sphere.
fn assemble_sequence(string: &[RBGate], paulis: &[RBGate]) -> RBSequence {
    let l = string.len();
    debug_assert_eq!(paulis.len(), l + 2);
    let mut gates = Vec::with_capacity(2 * l + 3);
    for k in 0..l {
        gates.push(paulis[k]);
        gates.push(string[k]);
    }
    gates.push(paulis[l]);

    let mut psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    for g in &gates {
        psi = apply(&g.ideal_unitary(), &psi);
    }
    let mut recovery = None;
    for (axis, sign) in RECOVERY_CANDIDATES {
        let gate = RBGate { kind: RBKind::Clifford, sign, axis };
        let out = apply(&gate.ideal_unitary(), &psi);
        let p0 = out[0].norm_sqr();
        if p0 > 1.0 - 1e-9 || p0 < 1e-9 {
            recovery = Some(gate);
            break;
        }
    }
    // The pre-recovery state always lies on a Bloch axis (every gate maps
    // the axis set to itself), so one of the six candidates matches.
    let recovery = recovery.expect("no recovery candidate reaches a pole");
    gates.push(recovery);
    gates.push(paulis[l + 1]);

    let mut full = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    for g in &gates {
        full = apply(&g.ideal_unitary(), &full);
    }
    let expected_final = if full[0].norm_sqr() > 0.5 { 0 } else { 1 };
    RBSequence { gates, length: l, expected_final }
}

/// Realization of z-axis Pauli gates (e^{±iσ_z π/2}), which have no direct
/// drive term. `CompositePi` plays two physical π pulses about x and y
/// (exactly e^{+iσ_z π/2} = R(π, π/2)·R(π, 0) at zero error, global phase
/// included), so z gates carry the same pulse errors as any other π gate.
/// `Virtual` updates the phase frame of all subsequent pulses and is
/// error-free by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZPauliMode {
    CompositePi,
    Virtual,
}

/// Physical pulse realizations for one benchmarking run: a π waveform and a
/// π/2 waveform, both for rotation axis +x; other xy axes are realized by
/// rotating the drive phase, z Paulis per `z_pauli`. `idle_duration` is the
/// free-evolution time consumed by identity Pauli gates (0 = instantaneous).
#[derive(Clone, Debug)]
pub struct PulseFamily {
    pub label: String,
    pub pi: Waveform,
    pub half_pi: Waveform,
    pub idle_duration: f64,
    pub z_pauli: ZPauliMode,
}

impl PulseFamily {
    pub fn new(label: &str, pi: Waveform, half_pi: Waveform) -> Result<PulseFamily> {
        pi.validate()
            .map_err(|_| SpinError::config("pulse family is missing a valid pi waveform"))?;
        half_pi
            .validate()
            .map_err(|_| SpinError::config("pulse family is missing a valid pi/2 waveform"))?;
        Ok(PulseFamily {
            label: label.to_string(),
            pi,
            half_pi,
            idle_duration: 0.0,
            z_pauli: ZPauliMode::CompositePi,
        })
    }

    /// Plain resonant square pulses.
    pub fn square(omega: f64, dt: f64) -> Result<PulseFamily> {
        PulseFamily::new(
            "square",
            square_pulse(PI, 0.0, omega, dt)?,
            square_pulse(PI / 2.0, 0.0, omega, dt)?,
        )
    }

    /// Composite pulses correcting drive-amplitude errors.
    pub fn bb1(omega: f64, dt: f64) -> Result<PulseFamily> {
        PulseFamily::new("bb1", bb1_pulse(PI, omega, dt)?, bb1_pulse(PI / 2.0, omega, dt)?)
    }

    /// Optimized shaped pulses, e.g. from the robust-pulse synthesizer.
    pub fn shaped(label: &str, pi: Waveform, half_pi: Waveform) -> Result<PulseFamily> {
        PulseFamily::new(label, pi, half_pi)
    }
}

/// Error model for a benchmarking simulation: one fixed error point, or a
/// quasi-static ensemble averaged shot by shot around a deliberate working
/// point (`center` adds to every draw, mirroring the ensemble-population
/// helpers in the noise module).
#[derive(Clone, Debug)]
pub enum RBNoise<'a> {
    Fixed(ErrorPoint),
    Ensemble {
        ensemble: &'a NoiseEnsemble,
        center: ErrorPoint,
    },
}

/// Decay-fit result: average computational-gate fidelity and the
/// preparation/readout offset, with 1-σ intervals from the Jacobian at the
/// optimum. `identifiable` is false when the data pin the decay rate too
/// weakly to mean anything (fidelities indistinguishable from 1/2).
#[derive(Clone, Copy, Debug)]
pub struct RBFit {
    pub f_a: f64,
    pub d_if: f64,
    pub f_a_sigma: f64,
    pub d_if_sigma: f64,
    pub identifiable: bool,
}

/// Mean sequence fidelity per length plus the decay fit.
#[derive(Clone, Debug)]
pub struct RBCurve {
    pub lengths: Vec<usize>,
    pub mean_fidelities: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub fit: Option<RBFit>,
}

impl RBCurve {
    /// CSV rows: length, mean_fidelity, std_error.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,mean_fidelity,std_error\n");
        for i in 0..self.lengths.len() {
            out.push_str(&format!(
                "{},{:.9e},{:.9e}\n",
                self.lengths[i], self.mean_fidelities[i], self.std_errors[i]
            ));
        }
        out
    }
}

impl RBFit {
    /// JSON object with the estimates and their 1-σ intervals.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"f_a\":{:.12e},\"f_a_sigma\":{:.6e},\"d_if\":{:.12e},\"d_if_sigma\":{:.6e},\"identifiable\":{}}}",
            self.f_a, self.f_a_sigma, self.d_if, self.d_if_sigma, self.identifiable
        )
    }
}

/// Propagators of the four phase variants of each pulse plus the identity
/// idle, for a single error point.
struct PropCache {
    pi: [ComplexMatrix; 4],
    half_pi: [ComplexMatrix; 4],
    idle: ComplexMatrix,
}

fn build_cache(family: &PulseFamily, err: &ErrorPoint) -> Result<PropCache> {
    let quarter = |w: &Waveform, q: usize| -> Result<ComplexMatrix> {
        pulse_propagator(&w.rotate_phase(q as f64 * PI / 2.0), err)
    };
    let pi = [
        quarter(&family.pi, 0)?,
        quarter(&family.pi, 1)?,
        quarter(&family.pi, 2)?,
        quarter(&family.pi, 3)?,
    ];
    let half_pi = [
        quarter(&family.half_pi, 0)?,
        quarter(&family.half_pi, 1)?,
        quarter(&family.half_pi, 2)?,
        quarter(&family.half_pi, 3)?,
    ];
    // Free evolution: only the detuning acts while the drive is off.
    let mut idle = ComplexMatrix::zeros(2);
    let half = 0.5 * err.delta0 * family.idle_duration;
    idle[(0, 0)] = Complex64::from_polar(1.0, -half);
    idle[(1, 1)] = Complex64::from_polar(1.0, half);
    Ok(PropCache { pi, half_pi, idle })
}

/// Drive phase of an x/y gate in quarter turns: e^{i·s·σ_u·θ/2} equals the
/// driven rotation R(θ, φ_u + π·[s>0]) exactly, with φ_x = 0, φ_y = π/2.
fn gate_quarter_phase(axis: RBAxis, sign: i8) -> i64 {
    let base = match axis {
        RBAxis::X => 0i64,
        RBAxis::Y => 1,
        _ => unreachable!("z and identity gates have no drive phase"),
    };
    base + if sign > 0 { 2 } else { 0 }
}

/// Measured population of the expected final basis state for one sequence
/// under the cached propagators. The virtual frame phase advances on
/// virtual z gates and shifts the drive phase of every later pulse; it is
/// tracked in exact quarter-turn arithmetic.
fn sequence_fidelity(seq: &RBSequence, cache: &PropCache, family: &PulseFamily) -> f64 {
    let has_idle = family.idle_duration > 0.0;
    let mut psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let mut frame_quarters: i64 = 0;
    for g in &seq.gates {
        match (g.kind, g.axis) {
            (RBKind::Pauli, RBAxis::I) => {
                if has_idle {
                    psi = apply(&cache.idle, &psi);
                }
            }
            (RBKind::Pauli, RBAxis::Z) => match family.z_pauli {
                ZPauliMode::Virtual => {
                    // e^{i·s·σ_z·π/2}: a π z-rotation of the frame.
                    frame_quarters += 2 * g.sign as i64;
                }
                ZPauliMode::CompositePi => {
                    // e^{+iσ_z π/2} = R(π, π/2)·R(π, 0): drive x then y;
                    // the opposite order gives the − sign.
                    let qx = frame_quarters.rem_euclid(4) as usize;
                    let qy = (frame_quarters + 1).rem_euclid(4) as usize;
                    if g.sign > 0 {
                        psi = apply(&cache.pi[qx], &psi);
                        psi = apply(&cache.pi[qy], &psi);
                    } else {
                        psi = apply(&cache.pi[qy], &psi);
                        psi = apply(&cache.pi[qx], &psi);
                    }
                }
            },
            (RBKind::Clifford, RBAxis::Z) => {
                // The deterministic recovery about z stays virtual in every
                // mode: e^{i·s·σ_z·π/4} is a π/2 z-rotation of the frame.
                frame_quarters += g.sign as i64;
            }
            (kind, axis) => {
                let q = (gate_quarter_phase(axis, g.sign) + frame_quarters).rem_euclid(4) as usize;
                let u = match kind {
                    RBKind::Pauli => &cache.pi[q],
                    RBKind::Clifford => &cache.half_pi[q],
                };
                psi = apply(u, &psi);
            }
        }
    }
    psi[seq.expected_final].norm_sqr()
}

/// Simulate a suite with the given pulse family and error model, average
/// per length, and fit the decay when three or more lengths are present.
pub fn simulate_rb(
    suite: &[RBSequence],
    family: &PulseFamily,
    noise: &RBNoise,
) -> Result<RBCurve> {
    if suite.is_empty() {
        return Err(SpinError::config("benchmarking suite is empty"));
    }
    if family.idle_duration < 0.0 {
        return Err(SpinError::config("idle duration must be nonnegative"));
    }

    let per_sequence: Vec<f64> = match noise {
        RBNoise::Fixed(err) => {
            let cache = build_cache(family, err)?;
            suite
                .par_iter()
                .map(|seq| sequence_fidelity(seq, &cache, family))
                .collect()
        }
        RBNoise::Ensemble { ensemble, center } => {
            ensemble.validate()?;
            let draws = ensemble.sample_all();
            let mut acc = vec![0.0f64; suite.len()];
            for draw in &draws {
                let err = ErrorPoint {
                    delta0: center.delta0 + draw.delta0,
                    delta1: center.delta1 + draw.delta1,
                    delta_phi: center.delta_phi + draw.delta_phi,
                };
                let cache = build_cache(family, &err)?;
                let shot: Vec<f64> = suite
                    .par_iter()
                    .map(|seq| sequence_fidelity(seq, &cache, family))
                    .collect();
                for (a, s) in acc.iter_mut().zip(&shot) {
                    *a += s;
                }
            }
            let inv = 1.0 / draws.len() as f64;
            acc.iter().map(|a| a * inv).collect()
        }
    };

    let mut lengths: Vec<usize> = suite.iter().map(|s| s.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut means = Vec::with_capacity(lengths.len());
    let mut errs = Vec::with_capacity(lengths.len());
    for &l in &lengths {
        let vals: Vec<f64> = suite
            .iter()
            .zip(&per_sequence)
            .filter(|(s, _)| s.length == l)
            .map(|(_, f)| *f)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        means.push(mean);
        errs.push((var / n).sqrt());
    }

    let fit = if lengths.len() >= 3 {
        Some(fit_rb(&lengths, &means)?)
    } else {
        None
    };
    Ok(RBCurve {
        lengths,
        mean_fidelities: means,
        std_errors: errs,
        fit,
    })
}

/// Decay model for the mean sequence fidelity at length l.
pub fn rb_decay(l: f64, f_a: f64, d_if: f64) -> f64 {
    0.5 + 0.5 * (1.0 - d_if) * (2.0 * f_a - 1.0).powf(l)
}

/// Fit the two-parameter decay to mean fidelities by bounded least squares
/// (F_a ∈ [1/2, 1], d_if ∈ [0, 1]), with 1-σ intervals from the Jacobian.
pub fn fit_rb(lengths: &[usize], means: &[f64]) -> Result<RBFit> {
    if lengths.len() != means.len() {
        return Err(SpinError::config("lengths and fidelities must align"));
    }
    if lengths.len() < 3 {
        return Err(SpinError::config("decay fit needs at least 3 lengths"));
    }

    // Degenerate data: everything at the depolarized floor.
    if means.iter().all(|m| (m - 0.5).abs() < 1e-9) {
        return Ok(RBFit {
            f_a: 0.5,
            d_if: 1.0,
            f_a_sigma: f64::INFINITY,
            d_if_sigma: f64::INFINITY,
            identifiable: false,
        });
    }

    // Moment-style initialization from the first and last points.
    let (l0, ll) = (lengths[0] as f64, *lengths.last().unwrap() as f64);
    let (m0, ml) = (
        (means[0] - 0.5).max(1e-12),
        (means[means.len() - 1] - 0.5).max(1e-12),
    );
    let p0 = (ml / m0).powf(1.0 / (ll - l0)).clamp(1e-6, 1.0);
    let fa0 = (0.5 * (1.0 + p0)).clamp(0.5, 1.0);
    let dif0 = (1.0 - 2.0 * m0 / p0.powf(l0)).clamp(0.0, 1.0);

    let clamp = |x: &[f64]| (x[0].clamp(0.5, 1.0), x[1].clamp(0.0, 1.0));
    let sse = |x: &[f64]| -> f64 {
        let (fa, dif) = clamp(x);
        let mut s = 0.0;
        for (l, m) in lengths.iter().zip(means) {
            let r = rb_decay(*l as f64, fa, dif) - m;
            s += r * r;
        }
        // Pull strays back into the box so the simplex cannot wander.
        let over = (x[0] - x[0].clamp(0.5, 1.0)).abs() + (x[1] - x[1].clamp(0.0, 1.0)).abs();
        s + over * over
    };
    let (best, _) = nelder_mead(&sse, &[fa0, dif0], &[0.02, 0.05], 600, 1e-16);
    let (f_a, d_if) = clamp(&best);

    // 1-σ intervals from the Gauss-Newton covariance at the optimum.
    let n = lengths.len() as f64;
    let mut jtj = [[0.0f64; 2]; 2];
    let mut sse_opt = 0.0;
    let q = 2.0 * f_a - 1.0;
    for (l, m) in lengths.iter().zip(means) {
        let lf = *l as f64;
        let model = rb_decay(lf, f_a, d_if);
        let d_fa = (1.0 - d_if) * lf * q.powf(lf - 1.0);
        let d_dif = -0.5 * q.powf(lf);
        jtj[0][0] += d_fa * d_fa;
        jtj[0][1] += d_fa * d_dif;
        jtj[1][0] += d_fa * d_dif;
        jtj[1][1] += d_dif * d_dif;
        sse_opt += (model - m).powi(2);
    }
    let sigma2 = sse_opt / (n - 2.0).max(1.0);
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let (f_a_sigma, d_if_sigma) = if det.abs() > 1e-300 {
        (
            (sigma2 * jtj[1][1] / det).max(0.0).sqrt(),
            (sigma2 * jtj[0][0] / det).max(0.0).sqrt(),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    // The decay rate is meaningless once the curve has fully floored.
    let identifiable = q.powf(lengths[0] as f64) > 1e-9;
    Ok(RBFit {
        f_a,
        d_if,
        f_a_sigma,
        d_if_sigma,
        identifiable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::density_from_ket;
    use crate::units::TWO_PI;

    const OMEGA: f64 = TWO_PI * 10.0e6;
    const DT: f64 = 1e-9;

    #[test]
    fn shortest_instance_has_expected_shape() {
        let suite = generate_rb_suite(&[1], 1, 1, 7).unwrap();
        assert_eq!(suite.len(), 1);
        let seq = &suite[0];
        assert_eq!(seq.length, 1);
        // One computational gate, three Paulis, one recovery.
        assert_eq!(seq.gates.len(), 5);
        let paulis = seq.gates.iter().filter(|g| g.kind == RBKind::Pauli).count();
        let cliffords = seq.gates.iter().filter(|g| g.kind == RBKind::Clifford).count();
        assert_eq!(paulis, 3);
        assert_eq!(cliffords, 2);
        assert!(seq.ends_in_expected_eigenstate(1e-12));
    }

    #[test]
    fn all_sequences_end_in_sigma_z_eigenstates() {
        let suite = generate_rb_suite(&[2, 4, 8, 16], 6, 3, 42).unwrap();
        assert_eq!(suite.len(), 6 * 3 * 4);
        for seq in &suite {
            assert!(seq.ends_in_expected_eigenstate(1e-10));
        }
    }

    #[test]
    fn gate_count_bookkeeping_matches_structure() {
        let suite = generate_rb_suite(&[2, 8, 32], 3, 2, 5).unwrap();
        for seq in &suite {
            let l = seq.length;
            let paulis = seq.gates.iter().filter(|g| g.kind == RBKind::Pauli).count();
            let cliffords = seq.gates.iter().filter(|g| g.kind == RBKind::Clifford).count();
            assert_eq!(paulis, l + 2, "Pauli count at length {l}");
            // Computational gates plus the recovery rotation.
            assert_eq!(cliffords, l + 1, "Clifford count at length {l}");
            assert_eq!(seq.gates.len(), 2 * l + 3);
            // Recovery sits between the two final Paulis.
            assert_eq!(seq.gates[seq.gates.len() - 2].kind, RBKind::Clifford);
        }
    }

    #[test]
    fn suite_generation_is_deterministic() {
        let a = generate_rb_suite(&[2, 4], 3, 2, 99).unwrap();
        let b = generate_rb_suite(&[2, 4], 3, 2, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.gates, y.gates);
            assert_eq!(x.expected_final, y.expected_final);
        }
    }

    #[test]
    fn invalid_length_lists_are_rejected() {
        assert!(generate_rb_suite(&[], 1, 1, 0).is_err());
        assert!(generate_rb_suite(&[0, 2], 1, 1, 0).is_err());
        assert!(generate_rb_suite(&[2, 2], 1, 1, 0).is_err());
        assert!(generate_rb_suite(&[4, 2], 1, 1, 0).is_err());
    }

    #[test]
    fn error_free_square_pulses_reproduce_every_sequence_exactly() {
        let suite = generate_rb_suite(&[1, 2, 4, 8], 4, 2, 11).unwrap();
        let family = PulseFamily::square(OMEGA, DT).unwrap();
        let curve = simulate_rb(&suite, &family, &RBNoise::Fixed(ErrorPoint::ZERO)).unwrap();
        for (l, m) in curve.lengths.iter().zip(&curve.mean_fidelities) {
            assert!((m - 1.0).abs() < 1e-10, "length {l} mean {m}");
        }
    }

    #[test]
    fn both_z_realizations_match_ideal_unitaries_per_sequence() {
        // Spot-check single sequences against direct ideal-unitary products
        // at zero error, where the pulses realize their gates exactly: the
        // two-pulse composite and the virtual frame update must both land
        // on the expected eigenstate with certainty.
        let suite = generate_rb_suite(&[3], 5, 3, 23).unwrap();
        let mut family = PulseFamily::square(OMEGA, DT).unwrap();
        for mode in [ZPauliMode::CompositePi, ZPauliMode::Virtual] {
            family.z_pauli = mode;
            let cache = build_cache(&family, &ErrorPoint::ZERO).unwrap();
            for seq in &suite {
                let f = sequence_fidelity(seq, &cache, &family);
                assert!((f - 1.0).abs() < 1e-10, "mode {mode:?}");
            }
        }
    }

    #[test]
    fn forward_decay_value_matches_closed_form() {
        // 1/2 + 0.45·0.998¹⁰, evaluated independently.
        let f = rb_decay(10.0, 0.999, 0.1);
        assert!((f - 0.941_080_569_508_377).abs() < 1e-12, "got {f}");
    }

    #[test]
    fn noiseless_synthetic_curve_fit_recovers_parameters() {
        let lengths: Vec<usize> = DEFAULT_LENGTHS.to_vec();
        let means: Vec<f64> = lengths.iter().map(|l| rb_decay(*l as f64, 0.999, 0.1)).collect();
        let fit = fit_rb(&lengths, &means).unwrap();
        assert!(fit.identifiable);
        assert!((fit.f_a - 0.999).abs() < 1e-6, "f_a {}", fit.f_a);
        assert!((fit.d_if - 0.1).abs() < 1e-5, "d_if {}", fit.d_if);
        assert!(fit.f_a_sigma < 1e-6);
    }

    #[test]
    fn perfect_gates_give_flat_unit_curve() {
        let lengths = [1usize, 5, 25];
        let means: Vec<f64> = lengths.iter().map(|l| rb_decay(*l as f64, 1.0, 0.0)).collect();
        assert!(means.iter().all(|m| (m - 1.0).abs() < 1e-15));
        let fit = fit_rb(&lengths, &means).unwrap();
        assert!((fit.f_a - 1.0).abs() < 1e-9);
        assert!(fit.d_if.abs() < 1e-6);
    }

    #[test]
    fn depolarized_floor_is_flagged_unidentifiable() {
        let lengths = [2usize, 4, 8];
        let means = [0.5, 0.5, 0.5];
        let fit = fit_rb(&lengths, &means).unwrap();
        assert!(!fit.identifiable);
        assert!((fit.f_a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_toy_channel_recovers_its_strength() {
        // Density-matrix composition with a depolarizing channel of strength
        // p after every computational gate; Paulis and recovery are perfect.
        // The fitted decay (2F_a − 1) must match (1 − p).
        let p = 0.1;
        let lengths = [1usize, 2, 4, 8];
        let suite = generate_rb_suite(&lengths, 6, 2, 31).unwrap();
        let mut means = Vec::new();
        for &l in &lengths {
            let mut acc = 0.0;
            let mut count = 0usize;
            for seq in suite.iter().filter(|s| s.length == l) {
                let ket = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
                let mut rho = density_from_ket(&ket);
                let recovery_idx = seq.gates.len() - 2;
                for (i, g) in seq.gates.iter().enumerate() {
                    let u = g.ideal_unitary();
                    rho = u.mul(&rho).mul(&u.dagger());
                    // Depolarize after computational gates only, never
                    // after the recovery or the Paulis.
                    if g.kind == RBKind::Clifford && i != recovery_idx {
                        let mixed = ComplexMatrix::identity(2)
                            .scale(Complex64::new(0.5 * p, 0.0))
                            .add(&rho.scale(Complex64::new(1.0 - p, 0.0)));
                        rho = mixed;
                    }
                }
                acc += rho[(seq.expected_final, seq.expected_final)].re;
                count += 1;
            }
            means.push(acc / count as f64);
        }
        let fit = fit_rb(&lengths, &means).unwrap();
        let decay = 2.0 * fit.f_a - 1.0;
        assert!(
            (decay - (1.0 - p)).abs() < 0.02 * (1.0 - p),
            "decay {decay} vs {}",
            1.0 - p
        );
    }

    #[test]
    fn fit_intervals_cover_truth_under_synthetic_noise() {
        // 100 noisy synthetic curves; the fitted F_a must land within three
        // reported sigma of the truth in at least 95 of them.
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha12Rng::seed_from_u64(314);
        let normal = Normal::new(0.0, 0.005).unwrap();
        let lengths: Vec<usize> = DEFAULT_LENGTHS.to_vec();
        let truth = (0.992, 0.08);
        let mut covered = 0;
        for _ in 0..100 {
            let means: Vec<f64> = lengths
                .iter()
                .map(|l| rb_decay(*l as f64, truth.0, truth.1) + normal.sample(&mut rng))
                .collect();
            let fit = fit_rb(&lengths, &means).unwrap();
            if (fit.f_a - truth.0).abs() <= 3.0 * fit.f_a_sigma {
                covered += 1;
            }
        }
        assert!(covered >= 95, "covered {covered}/100");
    }

    #[test]
    fn resonant_square_benchmark_matches_reference_fidelity() {
        // Square pulses at the nominal working point under the intrinsic
        // quasi-static noise of the modeled system (Gaussian detuning with
        // sigma = 2π·0.226 MHz, Lorentzian drive spread with 50 µs decay):
        // the fitted per-step fidelity lands at 0.9994 within 5e-4.
        use crate::noise::{GaussianDetuning, LorentzianRabi};
        let suite = generate_rb_suite(&DEFAULT_LENGTHS, DEFAULT_N_G, DEFAULT_N_P, 3).unwrap();
        let family = PulseFamily::square(OMEGA, DT).unwrap();
        let ens = NoiseEnsemble {
            detuning: GaussianDetuning { sigma: TWO_PI * 0.226e6 },
            rabi: LorentzianRabi { gamma: 1.0 / 50.01e-6 },
            omega: OMEGA,
            sample_count: 60,
            seed: 4,
        };
        let curve = simulate_rb(
            &suite,
            &family,
            &RBNoise::Ensemble { ensemble: &ens, center: ErrorPoint::ZERO },
        )
        .unwrap();
        let fit = curve.fit.unwrap();
        assert!(fit.identifiable);
        assert!((fit.f_a - 0.9994).abs() < 5e-4, "F_a {}", fit.f_a);
    }

    #[test]
    fn off_resonant_square_benchmark_matches_reference_fidelity() {
        // Square pulses at 10% detuning and 10% drive error: the fitted
        // per-step fidelity drops to 0.96 within 0.01. The fast decay
        // floors near l = 48, so the informative lengths stop at 32.
        let suite = generate_rb_suite(&[2, 4, 8, 16, 32], DEFAULT_N_G, DEFAULT_N_P, 3).unwrap();
        let family = PulseFamily::square(OMEGA, DT).unwrap();
        let corner = ErrorPoint { delta0: 0.1 * OMEGA, delta1: 0.1, delta_phi: 0.0 };
        let curve = simulate_rb(&suite, &family, &RBNoise::Fixed(corner)).unwrap();
        let fit = curve.fit.unwrap();
        assert!(fit.identifiable);
        assert!((fit.f_a - 0.96).abs() < 0.01, "F_a {}", fit.f_a);
    }

    #[test]
    fn fit_json_exposes_estimates_and_intervals() {
        let fit = RBFit {
            f_a: 0.999,
            d_if: 0.1,
            f_a_sigma: 1e-4,
            d_if_sigma: 2e-3,
            identifiable: true,
        };
        let json = fit.to_json();
        assert!(json.contains("\"f_a\":"));
        assert!(json.contains("\"identifiable\":true"));
        let f_a_field: f64 = json
            .split("\"f_a\":")
            .nth(1)
            .unwrap()
            .split(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!((f_a_field - 0.999).abs() < 1e-12);
    }

    #[test]
    fn curve_csv_round_trips_structure() {
        let curve = RBCurve {
            lengths: vec![2, 4],
            mean_fidelities: vec![0.99, 0.97],
            std_errors: vec![0.001, 0.002],
            fit: None,
        };
        let csv = curve.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "length,mean_fidelity,std_error");
        assert_eq!(csv.lines().count(), 3);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "2");
        assert!((row[1].parse::<f64>().unwrap() - 0.99).abs() < 1e-12);
    }
}
