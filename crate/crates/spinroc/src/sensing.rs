//! Nuclear-spin detection through dynamical decoupling.
//!
//! A periodically π-pulsed electron spin acts as a lock-in filter: when the
//! inter-pulse spacing 2τ matches half the precession period of a coupled
//! ¹³C nucleus, the electron picks up a conditional phase that survives the
//! echo train, and the readout population dips. Sweeping τ therefore traces
//! out a spectrum whose dips encode the hyperfine couplings.
//!
//! The simulation works in the joint 4-dimensional space electron ⊗ nucleus
//! with basis order |e,n⟩ → index 2e+n. Within the electron rotating frame
//! the always-on part of the Hamiltonian is
//!
//!   H = ω_l (1 ⊗ I_z) + |1⟩⟨1| ⊗ (a_∥ I_z + a_⊥ I_x),
//!
//! i.e. the nucleus precesses at the bare Larmor rate when the electron is
//! in |0⟩ and about a tilted, shifted axis when it is in |1⟩. Drive errors
//! enter exactly as in the 2-level pulse model: a static detuning δ₀ on the
//! electron and a relative Rabi-amplitude error δ₁ on every pulse.
//!
//! Control pulses are *finite-width* waveforms; the hyperfine coupling stays
//! on while they run. Because the pulse propagators do not depend on τ they
//! are computed once per spin, and each τ point costs just two small matrix
//! exponentials (the two distinct delay lengths) plus a handful of 4×4
//! products — a full spectrum is cheap even for shaped pulses.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Result, SpinError};
use crate::fitting::nelder_mead;
use crate::linalg::ComplexMatrix;
use crate::noise::NoiseEnsemble;
use crate::pulse::{sequence_propagator, square_pulse, ErrorPoint, PulseSequence, Segment, Waveform};
use crate::units::TWO_PI;

/// Multi-spin coherence composition falls back to the raw product of
/// single-spin factors when the electron-only reference coherence is
/// smaller than this (the normalisation would blow up on ~0/0).
pub const COHERENCE_FLOOR: f64 = 1e-6;

/// A dip must be at least this deep (population units, relative to the
/// median baseline) before a hyperfine fit is attempted.
pub const MIN_FIT_DEPTH: f64 = 1e-5;

/// Hyperfine coupling of one nuclear spin, in polar form: coupling
/// magnitude `omega_h` (rad/s) and polar angle `theta` (rad) between the
/// electron quantisation axis and the hyperfine field. The parallel and
/// transverse components are a_∥ = ω_h·cosθ and a_⊥ = ω_h·sinθ; restricting
/// θ to [0, π] keeps a_⊥ ≥ 0, which costs nothing because the sign of the
/// transverse coupling is a nuclear-frame gauge choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuclearSpinParams {
    pub omega_h: f64,
    pub theta: f64,
}

impl NuclearSpinParams {
    pub fn new(omega_h: f64, theta: f64) -> Result<Self> {
        let p = NuclearSpinParams { omega_h, theta };
        p.validate()?;
        Ok(p)
    }

    /// Build from Cartesian couplings (rad/s). `a_perp` must be ≥ 0; its
    /// sign is not observable.
    pub fn from_couplings(a_par: f64, a_perp: f64) -> Result<Self> {
        if !a_par.is_finite() || !a_perp.is_finite() {
            return Err(SpinError::config("hyperfine couplings must be finite"));
        }
        if a_perp < 0.0 {
            return Err(SpinError::config(
                "transverse hyperfine coupling must be non-negative (its sign is a gauge choice)",
            ));
        }
        NuclearSpinParams::new(a_par.hypot(a_perp), a_perp.atan2(a_par))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega_h.is_finite() || self.omega_h < 0.0 {
            return Err(SpinError::config(format!(
                "hyperfine magnitude must be finite and non-negative, got {}",
                self.omega_h
            )));
        }
        if !self.theta.is_finite() || self.theta < 0.0 || self.theta > PI {
            return Err(SpinError::config(format!(
                "hyperfine polar angle must lie in [0, pi], got {}",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn a_par(&self) -> f64 {
        self.omega_h * self.theta.cos()
    }

    pub fn a_perp(&self) -> f64 {
        self.omega_h * self.theta.sin()
    }
}

/// Decoupling family: phase pattern of the π pulses within one unit.
/// Both have unit span 8τ: XY4 applies 4 pulses per unit, XY8 applies 8
/// with half the spacing-per-pulse bookkeeping handled by the caller
/// (here a unit is always 8τ long and contains `unit_pattern().len()`
/// pulses at spacing 2τ, so XY8's unit is simply two XY4 spans with the
/// second half phase-reversed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DDKind {
    Xy4,
    Xy8,
}

impl DDKind {
    /// Pulse phases within one unit, as quarter-turn indices into {x, y}:
    /// 0 → phase 0 (x), 1 → phase π/2 (y).
    pub fn unit_pattern(&self) -> &'static [usize] {
        match self {
            DDKind::Xy4 => &[0, 1, 0, 1],
            DDKind::Xy8 => &[0, 1, 0, 1, 1, 0, 1, 0],
        }
    }

    /// Duration of one unit in multiples of τ.
    pub fn unit_tau_span(&self) -> f64 {
        2.0 * self.unit_pattern().len() as f64
    }

    pub fn label(&self) -> &'static str {
        match self {
            DDKind::Xy4 => "xy4",
            DDKind::Xy8 => "xy8",
        }
    }
}

/// Everything needed to simulate one detection spectrum.
#[derive(Debug, Clone)]
pub struct SensingConfig {
    /// Static field (gauss); sets the bare nuclear Larmor rate.
    pub b0: f64,
    /// Nuclear gyromagnetic ratio (rad/s per gauss).
    pub gamma_n: f64,
    /// Coupled nuclear spins. May be empty (pulse-error baseline only).
    pub spins: Vec<NuclearSpinParams>,
    pub sequence: DDKind,
    /// Number of unit repetitions (≥ 1).
    pub repeats: usize,
    /// The π pulse applied throughout the train (square, composite, or
    /// optimised — any waveform).
    pub pi_pulse: Waveform,
    /// Nominal Rabi rate (rad/s) for the square π/2 readout sandwich.
    pub omega: f64,
    /// Deliberate static drive errors applied to the electron for the
    /// whole sequence (e.g. an intentional 8 % detuning + amplitude bias).
    pub err: ErrorPoint,
    /// Optional quasi-static intrinsic noise. When present, each spectrum
    /// point is the mean over the seeded draws, every draw adding its
    /// (δ₀, δ₁) sample on top of `err`. This is what washes the coherent
    /// pulse-error fringes out of a long errored train while the nuclear
    /// resonances — whose positions are set by the nuclear precession, not
    /// the drive — survive, as they do in a real shot-averaged measurement.
    pub noise: Option<NoiseEnsemble>,
    /// Inter-pulse half-spacings τ (s) to sweep. Each τ must be at least
    /// half the π-pulse duration so the pulses fit between the echoes.
    pub tau_axis: Vec<f64>,
}

impl SensingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.b0.is_finite() || self.b0 <= 0.0 {
            return Err(SpinError::config("static field must be positive"));
        }
        if !self.gamma_n.is_finite() || self.gamma_n <= 0.0 {
            return Err(SpinError::config("gyromagnetic ratio must be positive"));
        }
        if self.repeats == 0 {
            return Err(SpinError::config("repeat count must be at least 1"));
        }
        if !self.omega.is_finite() || self.omega <= 0.0 {
            return Err(SpinError::config("nominal Rabi rate must be positive"));
        }
        self.pi_pulse.validate()?;
        self.err.validate()?;
        if let Some(ens) = &self.noise {
            ens.validate()?;
        }
        for s in &self.spins {
            s.validate()?;
        }
        if self.tau_axis.is_empty() {
            return Err(SpinError::config("tau axis must contain at least one point"));
        }
        let min_tau = 0.5 * self.pi_pulse.duration();
        for &tau in &self.tau_axis {
            if !tau.is_finite() || tau <= 0.0 {
                return Err(SpinError::config("tau values must be positive"));
            }
            if tau < min_tau {
                return Err(SpinError::config(format!(
                    "tau = {:.3e} s is shorter than half the pi-pulse duration ({:.3e} s)",
                    tau, min_tau
                )));
            }
        }
        Ok(())
    }

    /// Bare nuclear Larmor rate ω_l = γ_n·B₀ (rad/s).
    pub fn omega_larmor(&self) -> f64 {
        self.gamma_n * self.b0
    }
}

/// Default filter-frequency axis: 721 points linear in f over
/// 0.4–1.6 MHz. The filter frequency of an ideal train with half-spacing τ
/// is f = 1/(4τ).
pub fn default_frequency_axis() -> Vec<f64> {
    let n = 721;
    let (f_lo, f_hi) = (0.4e6, 1.6e6);
    (0..n)
        .map(|i| f_lo + (f_hi - f_lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Convert filter frequencies (Hz) to half-spacings τ = 1/(4f).
pub fn taus_for_frequencies(freqs: &[f64]) -> Result<Vec<f64>> {
    freqs
        .iter()
        .map(|&f| {
            if !f.is_finite() || f <= 0.0 {
                Err(SpinError::config("filter frequencies must be positive"))
            } else {
                Ok(1.0 / (4.0 * f))
            }
        })
        .collect()
}

/// One detected resonance: dip position on the frequency axis (Hz) and dip
/// depth below the baseline (population units, positive downward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub frequency: f64,
    pub depth: f64,
}

/// Simulated detection spectrum, ordered by ascending filter frequency.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub tau_axis: Vec<f64>,
    /// f = 1/(4τ), Hz, ascending.
    pub frequency_axis: Vec<f64>,
    /// Probability of finding the electron in |1⟩ after the full sequence,
    /// starting from |0⟩ with the nucleus maximally mixed.
    pub population: Vec<f64>,
    /// Filled by `detect_peaks` when the caller stores its result here;
    /// `simulate_spectrum` leaves it empty.
    pub peaks: Vec<Peak>,
}

impl Spectrum {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau_s,frequency_hz,population\n");
        for i in 0..self.population.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e}\n",
                self.tau_axis[i], self.frequency_axis[i], self.population[i]
            ));
        }
        out
    }
}

/// Joint drift Hamiltonian for one nuclear spin (see module docs), in the
/// basis |e,n⟩ → 2e+n.
pub fn hyperfine_drift(omega_l: f64, spin: &NuclearSpinParams) -> ComplexMatrix {
    let (a_par, a_perp) = (spin.a_par(), spin.a_perp());
    let mut h = ComplexMatrix::zeros(4);
    h[(0, 0)] = Complex64::new(0.5 * omega_l, 0.0);
    h[(1, 1)] = Complex64::new(-0.5 * omega_l, 0.0);
    h[(2, 2)] = Complex64::new(0.5 * (omega_l + a_par), 0.0);
    h[(3, 3)] = Complex64::new(-0.5 * (omega_l + a_par), 0.0);
    h[(2, 3)] = Complex64::new(0.5 * a_perp, 0.0);
    h[(3, 2)] = Complex64::new(0.5 * a_perp, 0.0);
    h
}

/// First-order (k = 1) resonance rate of the echo filter for one spin:
/// the mean of the two conditional nuclear precession rates,
/// ω₀ = [ω_l + √((ω_l+a_∥)² + a_⊥²)]/2. The k-th order dip of an ideal
/// train sits at 2τ = kπ/ω₀ (odd k), i.e. at filter frequency
/// f = ω₀/(2πk).
pub fn resonance_rate(omega_l: f64, spin: &NuclearSpinParams) -> f64 {
    let tilted = ((omega_l + spin.a_par()).powi(2) + spin.a_perp().powi(2)).sqrt();
    0.5 * (omega_l + tilted)
}

fn pulse_segment(wave: &Waveform, phase: f64) -> Segment {
    Segment::Pulse {
        wave: wave.clone(),
        phase,
    }
}

/// Full pulse sequence for one sweep point: square (π/2)ₓ readout sandwich
/// around `repeats` units of the chosen family. Within a unit the π-pulse
/// *centers* are spaced exactly 2τ apart and the unit spans exactly 8τ·
/// (pulses per unit)/4 even for finite-width pulses: the edge delays are
/// τ − t_π/2 and the interior delays 2τ − t_π.
pub fn build_dd_sequence(
    kind: DDKind,
    repeats: usize,
    tau: f64,
    pi_pulse: &Waveform,
    omega: f64,
) -> Result<PulseSequence> {
    if repeats == 0 {
        return Err(SpinError::config("repeat count must be at least 1"));
    }
    pi_pulse.validate()?;
    let width = pi_pulse.duration();
    if !tau.is_finite() || tau < 0.5 * width {
        return Err(SpinError::config(format!(
            "tau = {:.3e} s is shorter than half the pi-pulse duration ({:.3e} s)",
            tau,
            0.5 * width
        )));
    }
    let half = square_pulse(FRAC_PI_2, 0.0, omega, pi_pulse.dt)?;
    let edge = tau - 0.5 * width;
    let mid = 2.0 * tau - width;
    let pattern = kind.unit_pattern();

    let mut seq: PulseSequence = Vec::new();
    let push_delay = |seq: &mut PulseSequence, duration: f64| {
        if duration > 0.0 {
            seq.push(Segment::Delay { duration });
        }
    };
    seq.push(pulse_segment(&half, 0.0));
    for _ in 0..repeats {
        push_delay(&mut seq, edge);
        for (i, &axis) in pattern.iter().enumerate() {
            seq.push(pulse_segment(pi_pulse, axis as f64 * FRAC_PI_2));
            let gap = if i + 1 == pattern.len() { edge } else { mid };
            push_delay(&mut seq, gap);
        }
    }
    seq.push(pulse_segment(&half, 0.0));
    Ok(seq)
}

/// U_unit and powers thereof act temporally left-to-right in storage order,
/// so the product accumulates as `step · acc`.
fn apply(acc: &mut ComplexMatrix, step: &ComplexMatrix) {
    *acc = step.mul(acc);
}

fn mat_pow(m: &ComplexMatrix, mut k: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::identity(m.dim());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            out = base.mul(&out);
        }
        k >>= 1;
        if k > 0 {
            base = base.mul(&base);
        }
    }
    out
}

/// τ-independent propagators for one propagation context (either one
/// spin's 4-dimensional space or the bare electron) at one effective error
/// point, plus the drift needed for the per-τ delay exponentials.
struct TrainOps {
    err: ErrorPoint,
    drift: Option<ComplexMatrix>,
    /// π pulse at phase 0 (x) and π/2 (y).
    pi: [ComplexMatrix; 2],
    half: ComplexMatrix,
}

impl TrainOps {
    fn build(cfg: &SensingConfig, drift: Option<ComplexMatrix>, err: ErrorPoint) -> Result<TrainOps> {
        let half_wave = square_pulse(FRAC_PI_2, 0.0, cfg.omega, cfg.pi_pulse.dt)?;
        let prop = |wave: &Waveform, phase: f64| -> Result<ComplexMatrix> {
            sequence_propagator(&vec![pulse_segment(wave, phase)], &err, drift.as_ref())
        };
        Ok(TrainOps {
            pi: [prop(&cfg.pi_pulse, 0.0)?, prop(&cfg.pi_pulse, FRAC_PI_2)?],
            half: prop(&half_wave, 0.0)?,
            err,
            drift,
        })
    }

    /// Full-sequence propagator at one τ: two delay exponentials, then a
    /// fold over one unit, a fast power for the repeats, and the sandwich.
    fn total(&self, cfg: &SensingConfig, tau: f64) -> Result<ComplexMatrix> {
        let width = cfg.pi_pulse.duration();
        let dim = self.half.dim();
        let delay = |duration: f64| -> Result<ComplexMatrix> {
            if duration <= 0.0 {
                return Ok(ComplexMatrix::identity(dim));
            }
            sequence_propagator(
                &vec![Segment::Delay { duration }],
                &self.err,
                self.drift.as_ref(),
            )
        };
        let d_edge = delay(tau - 0.5 * width)?;
        let d_mid = delay(2.0 * tau - width)?;

        let pattern = cfg.sequence.unit_pattern();
        let mut unit = ComplexMatrix::identity(dim);
        apply(&mut unit, &d_edge);
        for (i, &axis) in pattern.iter().enumerate() {
            apply(&mut unit, &self.pi[axis]);
            apply(
                &mut unit,
                if i + 1 == pattern.len() { &d_edge } else { &d_mid },
            );
        }
        let mut total = self.half.clone();
        apply(&mut total, &mat_pow(&unit, cfg.repeats));
        apply(&mut total, &self.half);
        Ok(total)
    }
}

/// Probability of ending in electron |1⟩ starting from |0⟩ with the
/// nucleus maximally mixed: average the |0,n⟩ columns over both nuclear
/// basis states.
fn excited_population_4(u: &ComplexMatrix) -> f64 {
    let mut p = 0.0;
    for n_in in 0..2 {
        for n_out in 0..2 {
            p += u[(2 + n_out, n_in)].norm_sqr();
        }
    }
    0.5 * p
}

/// Populations at one effective error point, in `tau_axis` input order.
fn populations_at(cfg: &SensingConfig, omega_l: f64, err: ErrorPoint) -> Result<Vec<f64>> {
    let electron = TrainOps::build(cfg, None, err)?;
    let spins: Vec<TrainOps> = cfg
        .spins
        .iter()
        .map(|s| TrainOps::build(cfg, Some(hyperfine_drift(omega_l, s)), err))
        .collect::<Result<_>>()?;

    cfg.tau_axis
        .par_iter()
        .map(|&tau| -> Result<f64> {
            let p_e = {
                let u = electron.total(cfg, tau)?;
                u[(1, 0)].norm_sqr()
            };
            let c0 = 2.0 * p_e - 1.0;
            let population = if spins.is_empty() {
                p_e
            } else {
                let mut w = 1.0;
                for ops in &spins {
                    let u = ops.total(cfg, tau)?;
                    w *= 2.0 * excited_population_4(&u) - 1.0;
                }
                if c0.abs() >= COHERENCE_FLOOR {
                    // c₀·∏(W_j/c₀), written to divide only n−1 times.
                    w /= c0.powi(spins.len() as i32 - 1);
                }
                0.5 * (1.0 + w)
            };
            Ok(population.clamp(0.0, 1.0))
        })
        .collect()
}

/// Simulate the detection spectrum. Output rows are sorted by ascending
/// filter frequency f = 1/(4τ) regardless of the input τ order.
///
/// Each coupled spin is simulated independently in its joint 4-dimensional
/// space, giving a coherence factor W_j = 2p_j − 1; the bare electron run
/// gives the pulse-error baseline c₀ = 2p_e − 1. The composite coherence is
/// W = c₀·∏(W_j/c₀) — exact for one spin, and the standard product
/// approximation beyond — with a plain product fallback when |c₀| is below
/// `COHERENCE_FLOOR`. Reported population is (1+W)/2, clamped to [0, 1].
///
/// With `noise` set, the spectrum is the mean over the ensemble draws,
/// each draw's (δ₀, δ₁) sample added on top of the deliberate `err` bias.
pub fn simulate_spectrum(cfg: &SensingConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let omega_l = cfg.omega_larmor();

    let error_points: Vec<ErrorPoint> = match &cfg.noise {
        None => vec![cfg.err],
        Some(ens) => ens
            .sample_all()
            .into_iter()
            .map(|draw| ErrorPoint {
                delta0: cfg.err.delta0 + draw.delta0,
                delta1: cfg.err.delta1 + draw.delta1,
                delta_phi: cfg.err.delta_phi + draw.delta_phi,
            })
            .collect(),
    };

    let mut mean = vec![0.0; cfg.tau_axis.len()];
    for err in &error_points {
        let p = populations_at(cfg, omega_l, *err)?;
        for (m, v) in mean.iter_mut().zip(&p) {
            *m += v;
        }
    }
    let n = error_points.len() as f64;

    let mut rows: Vec<(f64, f64, f64)> = cfg
        .tau_axis
        .iter()
        .zip(&mean)
        .map(|(&tau, &m)| (tau, 1.0 / (4.0 * tau), m / n))
        .collect();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));

    Ok(Spectrum {
        tau_axis: rows.iter().map(|r| r.0).collect(),
        frequency_axis: rows.iter().map(|r| r.1).collect(),
        population: rows.iter().map(|r| r.2).collect(),
        peaks: Vec::new(),
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Find resonance dips: local minima at least `prominence` below the
/// median baseline, with sub-bin refinement of the dip position by a
/// parabola through the minimum and its two neighbours. `prominence` is an
/// absolute population depth in (0, 1). Returned sorted by frequency.
pub fn detect_peaks(spec: &Spectrum, prominence: f64) -> Result<Vec<Peak>> {
    if !(prominence > 0.0 && prominence < 1.0) {
        return Err(SpinError::config("peak prominence must lie in (0, 1)"));
    }
    let p = &spec.population;
    let f = &spec.frequency_axis;
    if p.len() < 3 {
        return Err(SpinError::config(
            "peak detection needs at least three spectrum points",
        ));
    }
    let baseline = median(p);
    let mut peaks = Vec::new();
    for i in 1..p.len() - 1 {
        // First point of a flat-bottomed dip counts; interior plateau
        // points do not.
        let is_min = p[i] < p[i - 1] && p[i] <= p[i + 1];
        if !is_min || baseline - p[i] < prominence {
            continue;
        }
        // Quadratic through the three points (Newton form, handles uneven
        // spacing); vertex gives the refined dip position.
        let d1 = (p[i] - p[i - 1]) / (f[i] - f[i - 1]);
        let d2 = (p[i + 1] - p[i]) / (f[i + 1] - f[i]);
        let c2 = (d2 - d1) / (f[i + 1] - f[i - 1]);
        let (mut f_star, mut p_star) = (f[i], p[i]);
        if c2 > 0.0 {
            let v = 0.5 * (f[i - 1] + f[i]) - d1 / (2.0 * c2);
            if v > f[i - 1] && v < f[i + 1] {
                f_star = v;
                p_star = p[i - 1] + d1 * (v - f[i - 1]) + c2 * (v - f[i - 1]) * (v - f[i]);
            }
        }
        peaks.push(Peak {
            frequency: f_star,
            depth: baseline - p_star,
        });
    }
    Ok(peaks)
}

/// Result of a single-resonance hyperfine fit.
#[derive(Debug, Clone, Copy)]
pub struct HyperfineFit {
    pub params: NuclearSpinParams,
    /// 1σ intervals from the finite-difference Gauss–Newton curvature at
    /// the optimum (infinite when the window does not constrain a
    /// direction).
    pub omega_h_sigma: f64,
    pub theta_sigma: f64,
    pub sse: f64,
    pub window_points: usize,
}

impl HyperfineFit {
    pub fn to_json(&self) -> String {
        format!(
            concat!(
                "{{\n",
                "  \"omega_h_rad_per_s\": {:.9e},\n",
                "  \"theta_rad\": {:.9e},\n",
                "  \"omega_h_sigma_rad_per_s\": {:.9e},\n",
                "  \"theta_sigma_rad\": {:.9e},\n",
                "  \"sse\": {:.9e},\n",
                "  \"window_points\": {}\n",
                "}}\n"
            ),
            self.params.omega_h,
            self.params.theta,
            self.omega_h_sigma,
            self.theta_sigma,
            self.sse,
            self.window_points
        )
    }
}

/// Linear interpolation of the frequency where the population crosses
/// `target` between samples j and j+step (step = ±1), walking from a dip.
fn crossing(f: &[f64], p: &[f64], start: usize, step: isize, target: f64) -> f64 {
    let mut j = start as isize;
    loop {
        let next = j + step;
        if next < 0 || next as usize >= p.len() {
            return f[j as usize];
        }
        if p[next as usize] >= target {
            let (j, n) = (j as usize, next as usize);
            let t = (target - p[j]) / (p[n] - p[j]);
            return f[j] + t * (f[n] - f[j]);
        }
        j = next;
    }
}

/// Fit one isolated first-order resonance dip to a single nuclear spin.
///
/// `peak` selects the dip (as returned by `detect_peaks`); the fit window
/// spans ±3 linewidths (half-width at half depth) around it, widened to at
/// least 9 samples.
/// The forward model re-simulates the window with `cfg`'s sequence, pulse,
/// and errors but a single candidate spin, so no secular or short-pulse
/// approximation is baked in. Fails when the dip is too shallow, when
/// another dip lies within three linewidths (the single-spin model would
/// be biased), or when the window leaves the parameters unconstrained.
pub fn fit_hyperfine(spec: &Spectrum, peak: &Peak, cfg: &SensingConfig) -> Result<HyperfineFit> {
    cfg.validate()?;
    let (f, p) = (&spec.frequency_axis, &spec.population);
    if p.len() < 9 {
        return Err(SpinError::config("hyperfine fit needs at least nine spectrum points"));
    }
    if p.len() != f.len() || p.len() != spec.tau_axis.len() {
        return Err(SpinError::config("spectrum axes have mismatched lengths"));
    }
    let baseline = median(p);

    // Locate the sample-level dip near the requested peak.
    let nearest = f
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - peak.frequency).abs().total_cmp(&(b.1 - peak.frequency).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let lo = nearest.saturating_sub(2);
    let hi = (nearest + 2).min(p.len() - 1);
    let i_min = (lo..=hi).min_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    let depth = baseline - p[i_min];
    if depth <= MIN_FIT_DEPTH {
        return Err(SpinError::numerical(format!(
            "resonance dip near {:.4e} Hz is too shallow to fit (depth {:.2e})",
            peak.frequency, depth
        )));
    }

    // Linewidth (half-width at half depth) from the half-depth crossings,
    // floored at one bin.
    let half_target = baseline - 0.5 * depth;
    let f_left = crossing(f, p, i_min, -1, half_target);
    let f_right = crossing(f, p, i_min, 1, half_target);
    let bin = (f[f.len() - 1] - f[0]).abs() / (f.len() - 1) as f64;
    let lw = (0.5 * (f_right - f_left)).max(bin);

    // Isolation: no *other* dip of comparable depth within three linewidths.
    let others = detect_peaks(spec, (0.3 * depth).clamp(1e-9, 0.999))?;
    for o in &others {
        let sep = (o.frequency - f[i_min]).abs();
        if sep > 1.5 * lw && sep <= 3.0 * lw {
            return Err(SpinError::numerical(format!(
                "resonance at {:.4e} Hz is not isolated: another dip at {:.4e} Hz is within three linewidths",
                f[i_min], o.frequency
            )));
        }
    }

    // Fit window: ±3 linewidths, widened symmetrically to at least 9 samples.
    let mut w_lo = i_min;
    let mut w_hi = i_min;
    while w_lo > 0 && f[i_min] - f[w_lo - 1] <= 3.0 * lw {
        w_lo -= 1;
    }
    while w_hi + 1 < p.len() && f[w_hi + 1] - f[i_min] <= 3.0 * lw {
        w_hi += 1;
    }
    while w_hi - w_lo + 1 < 9 && (w_lo > 0 || w_hi + 1 < p.len()) {
        if w_lo > 0 {
            w_lo -= 1;
        }
        if w_hi + 1 < p.len() && w_hi - w_lo + 1 < 9 {
            w_hi += 1;
        }
    }
    let window_taus: Vec<f64> = spec.tau_axis[w_lo..=w_hi].to_vec();
    let data: Vec<f64> = p[w_lo..=w_hi].to_vec();
    let n_pts = data.len();

    let omega_l = cfg.omega_larmor();
    let model_cfg = |wh: f64, th: f64| -> SensingConfig {
        SensingConfig {
            spins: vec![NuclearSpinParams { omega_h: wh, theta: th }],
            tau_axis: window_taus.clone(),
            ..cfg.clone()
        }
    };
    let residuals = |wh: f64, th: f64| -> Result<Vec<f64>> {
        let m = simulate_spectrum(&model_cfg(wh, th))?;
        Ok(m.population.iter().zip(&data).map(|(a, b)| a - b).collect())
    };
    // Bounded objective: clamp into the physical box and add a quadratic
    // pull-back so the simplex cannot wander into invalid parameters.
    let wh_cap = 40.0 * omega_l;
    let objective = |x: &[f64]| -> f64 {
        let wh = x[0].clamp(0.0, wh_cap);
        let th = x[1].clamp(0.0, PI);
        let penalty = ((x[0] - wh) / (0.01 * omega_l)).powi(2) + ((x[1] - th) / 0.01).powi(2);
        match residuals(wh, th) {
            Ok(r) => r.iter().map(|v| v * v).sum::<f64>() + penalty,
            Err(_) => 1e6 + penalty,
        }
    };

    // The window is treated as a first-order (k = 1) resonance:
    // 2πf₀ ≈ ω_l + a_∥/2 seeds the parallel coupling, and a spread of
    // transverse guesses seeds the multi-start.
    let a_par0 = 2.0 * (TWO_PI * f[i_min] - omega_l);
    let s = (0.5 * a_par0.abs()).max(TWO_PI * 30e3);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for a_perp0 in [0.3 * s, s, 2.5 * s] {
        let seed = NuclearSpinParams::from_couplings(a_par0, a_perp0)?;
        let steps = [(0.15 * seed.omega_h).max(TWO_PI * 10e3), 0.2];
        let (x, v) = nelder_mead(&objective, &[seed.omega_h, seed.theta], &steps, 260, 1e-14);
        if best.as_ref().map_or(true, |b| v < b.1) {
            best = Some((x, v));
        }
    }
    let (x0, _) = best.unwrap();
    let polish_steps = [(0.02 * x0[0].abs()).max(TWO_PI * 2e3), 0.02];
    let (x, sse) = nelder_mead(&objective, &x0, &polish_steps, 500, 1e-16);
    let params = NuclearSpinParams::new(x[0].clamp(0.0, wh_cap), x[1].clamp(0.0, PI))?;

    // 1σ from the Gauss–Newton curvature with central finite differences.
    let h_wh = (1e-5 * params.omega_h).max(TWO_PI * 5.0);
    let h_th = 1e-4;
    let jac = |h: [f64; 2]| -> Result<Vec<f64>> {
        let fwd = residuals(params.omega_h + h[0], (params.theta + h[1]).clamp(0.0, PI))?;
        let bwd = residuals((params.omega_h - h[0]).max(0.0), (params.theta - h[1]).clamp(0.0, PI))?;
        let scale = 2.0 * h[0].max(h[1]);
        Ok(fwd.iter().zip(&bwd).map(|(a, b)| (a - b) / scale).collect())
    };
    let j_wh = jac([h_wh, 0.0])?;
    let j_th = jac([0.0, h_th])?;
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    for i in 0..n_pts {
        a11 += j_wh[i] * j_wh[i];
        a12 += j_wh[i] * j_th[i];
        a22 += j_th[i] * j_th[i];
    }
    let det = a11 * a22 - a12 * a12;
    let dof = n_pts.saturating_sub(2);
    let (omega_h_sigma, theta_sigma) = if det > 0.0 && dof > 0 {
        let var = sse.max(0.0) / dof as f64;
        ((var * a22 / det).sqrt(), (var * a11 / det).sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    Ok(HyperfineFit {
        params,
        omega_h_sigma,
        theta_sigma,
        sse,
        window_points: n_pts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{GaussianDetuning, LorentzianRabi};
    use crate::units::GAMMA_C13_RADPS_PER_GAUSS;

    const B0: f64 = 510.0;

    fn larmor() -> f64 {
        GAMMA_C13_RADPS_PER_GAUSS * B0
    }

    /// The worked example throughout: a_∥/2π = 305 kHz, a_⊥/2π = 136 kHz.
    fn example_spin() -> NuclearSpinParams {
        NuclearSpinParams::from_couplings(TWO_PI * 305e3, TWO_PI * 136e3).unwrap()
    }

    fn square_pi(omega: f64) -> Waveform {
        square_pulse(PI, 0.0, omega, 1e-9).unwrap()
    }

    /// Very fast, very short square π — a stand-in for an instantaneous
    /// pulse (2 ns against τ of hundreds of ns).
    fn hard_pi() -> (Waveform, f64) {
        let omega = TWO_PI * 250e6;
        (square_pulse(PI, 0.0, omega, 1e-10).unwrap(), omega)
    }

    fn base_config(pi_pulse: Waveform, omega: f64, spins: Vec<NuclearSpinParams>) -> SensingConfig {
        SensingConfig {
            b0: B0,
            gamma_n: GAMMA_C13_RADPS_PER_GAUSS,
            spins,
            sequence: DDKind::Xy4,
            repeats: 1,
            pi_pulse,
            omega,
            err: ErrorPoint::ZERO,
            noise: None,
            tau_axis: vec![400e-9],
        }
    }

    /// The intrinsic quasi-static ensemble used for shot averaging: the
    /// calibrated Gaussian detuning spread and Lorentzian amplitude spread.
    fn shot_noise(omega: f64) -> NoiseEnsemble {
        NoiseEnsemble {
            detuning: GaussianDetuning { sigma: TWO_PI * 0.226e6 },
            rabi: LorentzianRabi { gamma: 1.0 / 50.01e-6 },
            omega,
            sample_count: 40,
            seed: 7,
        }
    }

    #[test]
    fn parameter_forms_round_trip_and_validate() {
        let s = example_spin();
        assert!((s.a_par() - TWO_PI * 305e3).abs() < 1e-6);
        assert!((s.a_perp() - TWO_PI * 136e3).abs() < 1e-6);
        assert!(NuclearSpinParams::new(-1.0, 0.3).is_err());
        assert!(NuclearSpinParams::new(1.0, 3.2).is_err());
        assert!(NuclearSpinParams::from_couplings(1.0, -0.5).is_err());
        // θ > π/2 encodes a negative parallel coupling.
        let neg = NuclearSpinParams::from_couplings(-TWO_PI * 46e3, TWO_PI * 1e3).unwrap();
        assert!(neg.theta > FRAC_PI_2 && neg.a_par() < 0.0);
    }

    /// With the drive off, the joint propagator must be the direct sum of
    /// the two conditional nuclear propagators: the electron state only
    /// selects which field the nucleus sees.
    #[test]
    fn free_evolution_is_block_diagonal_in_the_electron_state() {
        let spin = example_spin();
        let omega_l = larmor();
        let drift = hyperfine_drift(omega_l, &spin);
        let t = 0.731e-6;
        let u = sequence_propagator(
            &vec![Segment::Delay { duration: t }],
            &ErrorPoint::ZERO,
            Some(&drift),
        )
        .unwrap();

        let mut h0 = ComplexMatrix::zeros(2);
        h0[(0, 0)] = Complex64::new(0.5 * omega_l, 0.0);
        h0[(1, 1)] = Complex64::new(-0.5 * omega_l, 0.0);
        let mut h1 = ComplexMatrix::zeros(2);
        h1[(0, 0)] = Complex64::new(0.5 * (omega_l + spin.a_par()), 0.0);
        h1[(1, 1)] = Complex64::new(-0.5 * (omega_l + spin.a_par()), 0.0);
        h1[(0, 1)] = Complex64::new(0.5 * spin.a_perp(), 0.0);
        h1[(1, 0)] = Complex64::new(0.5 * spin.a_perp(), 0.0);
        let u0 = h0.expm_i_hermitian(t);
        let u1 = h1.expm_i_hermitian(t);

        for i in 0..2 {
            for j in 0..2 {
                assert!((u[(i, j)] - u0[(i, j)]).norm() < 1e-10);
                assert!((u[(2 + i, 2 + j)] - u1[(i, j)]).norm() < 1e-10);
                assert!(u[(i, 2 + j)].norm() < 1e-10);
                assert!(u[(2 + i, j)].norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sequence_layout_matches_the_phase_patterns() {
        let (pi, omega) = hard_pi();
        let seq = build_dd_sequence(DDKind::Xy4, 1, 400e-9, &pi, omega).unwrap();
        let n_pulses = seq
            .iter()
            .filter(|s| matches!(s, Segment::Pulse { .. }))
            .count();
        assert_eq!(n_pulses, 4 + 2);
        // First and last segments are the readout sandwich; the π phases
        // in between must follow the family pattern.
        let pi_phases: Vec<f64> = seq
            .iter()
            .skip(1)
            .take(seq.len() - 2)
            .filter_map(|s| match s {
                Segment::Pulse { phase, .. } => Some(*phase),
                _ => None,
            })
            .collect();
        assert_eq!(pi_phases, vec![0.0, FRAC_PI_2, 0.0, FRAC_PI_2]);

        let seq8 = build_dd_sequence(DDKind::Xy8, 2, 400e-9, &pi, omega).unwrap();
        let pi8: Vec<f64> = seq8
            .iter()
            .skip(1)
            .take(seq8.len() - 2)
            .filter_map(|s| match s {
                Segment::Pulse { phase, .. } => Some(*phase),
                _ => None,
            })
            .collect();
        let x = 0.0;
        let y = FRAC_PI_2;
        let unit = [x, y, x, y, y, x, y, x];
        let expected: Vec<f64> = unit.iter().chain(unit.iter()).copied().collect();
        assert_eq!(pi8, expected);
    }

    /// The body (everything between the π/2 sandwich) must span exactly
    /// 8τ per XY4 unit — finite pulse widths are absorbed by the delays.
    #[test]
    fn body_duration_is_eight_tau_per_unit() {
        let omega = TWO_PI * 10e6;
        let pi = square_pi(omega);
        let tau = 373e-9;
        for (kind, repeats) in [(DDKind::Xy4, 3), (DDKind::Xy8, 2)] {
            let seq = build_dd_sequence(kind, repeats, tau, &pi, omega).unwrap();
            let body: f64 = seq[1..seq.len() - 1]
                .iter()
                .map(|s| match s {
                    Segment::Pulse { wave, .. } => wave.duration(),
                    Segment::Delay { duration } => *duration,
                })
                .sum();
            let expected = kind.unit_tau_span() * tau * repeats as f64 * 4.0 / 4.0;
            assert!(
                (body - expected).abs() < 1e-15,
                "{}x{} body {:.6e} != {:.6e}",
                kind.label(),
                repeats,
                body,
                expected
            );
        }
    }

    #[test]
    fn too_short_tau_is_rejected() {
        let omega = TWO_PI * 10e6;
        let pi = square_pi(omega); // 50 ns long
        assert!(build_dd_sequence(DDKind::Xy4, 1, 20e-9, &pi, omega).is_err());
        let mut cfg = base_config(pi, omega, vec![]);
        cfg.tau_axis = vec![20e-9];
        assert!(simulate_spectrum(&cfg).is_err());
        cfg.tau_axis = vec![400e-9];
        cfg.repeats = 0;
        assert!(simulate_spectrum(&cfg).is_err());
    }

    /// The cached per-τ composition must agree with brute-force propagation
    /// of the full built sequence — same physics, different bookkeeping.
    #[test]
    fn cached_composition_matches_direct_sequence_propagation() {
        let omega = TWO_PI * 10e6;
        let pi = square_pi(omega);
        let spin = example_spin();
        let err = ErrorPoint::new(0.02 * omega, -0.03);
        let tau = 360e-9;
        let mut cfg = base_config(pi.clone(), omega, vec![spin]);
        cfg.err = err;
        cfg.repeats = 2;
        cfg.tau_axis = vec![tau];
        let spec = simulate_spectrum(&cfg).unwrap();

        let seq = build_dd_sequence(DDKind::Xy4, 2, tau, &pi, omega).unwrap();
        let drift = hyperfine_drift(cfg.omega_larmor(), &spin);
        let u = sequence_propagator(&seq, &err, Some(&drift)).unwrap();
        let direct = excited_population_4(&u);
        assert!(
            (spec.population[0] - direct).abs() < 1e-10,
            "cached {} vs direct {}",
            spec.population[0],
            direct
        );
    }

    /// No coupled nucleus, no pulse errors: the sandwich makes a full π
    /// rotation and the train is transparent — population stays 1.
    #[test]
    fn error_free_train_without_nuclei_returns_unit_population() {
        let (pi, omega) = hard_pi();
        let mut cfg = base_config(pi, omega, vec![]);
        cfg.repeats = 10;
        cfg.tau_axis = taus_for_frequencies(&[0.5e6, 0.9e6, 1.3e6]).unwrap();
        let spec = simulate_spectrum(&cfg).unwrap();
        for &p in &spec.population {
            assert!((p - 1.0).abs() < 1e-9, "population {}", p);
        }
    }

    /// For near-instantaneous perfect π pulses the first- and third-order
    /// dips of a weakly coupled spin sit at filter frequencies ω₀/(2πk)
    /// within one axis bin.
    #[test]
    fn weak_spin_dips_sit_at_odd_harmonics_of_the_mean_precession_rate() {
        let (pi, omega) = hard_pi();
        let spin = NuclearSpinParams::from_couplings(TWO_PI * 50e3, TWO_PI * 10e3).unwrap();
        let f0 = resonance_rate(larmor(), &spin) / TWO_PI;

        for k in [1.0, 3.0] {
            let center = f0 / k;
            let step = 0.5e3;
            let freqs: Vec<f64> = (-20..=20).map(|i| center + i as f64 * step).collect();
            let mut cfg = base_config(pi.clone(), omega, vec![spin]);
            cfg.repeats = 20;
            cfg.tau_axis = taus_for_frequencies(&freqs).unwrap();
            let spec = simulate_spectrum(&cfg).unwrap();
            let i_min = (0..spec.population.len())
                .min_by(|&a, &b| spec.population[a].total_cmp(&spec.population[b]))
                .unwrap();
            let depth = 1.0 - spec.population[i_min];
            assert!(depth > 0.05, "k={}ment dip too shallow: {}", k, depth);
            assert!(
                (spec.frequency_axis[i_min] - center).abs() <= step * 1.0001,
                "k={}: dip at {:.6e}, predicted {:.6e}",
                k,
                spec.frequency_axis[i_min],
                center
            );
        }
    }

    /// Perfect pulses produce no dip near twice the resonance frequency;
    /// that artifact needs pulse errors.
    #[test]
    fn no_spurious_dip_without_pulse_errors() {
        let (pi, omega) = hard_pi();
        let spin = example_spin();
        let f0 = resonance_rate(larmor(), &spin) / TWO_PI;
        let freqs: Vec<f64> = (0..161).map(|i| 2.0 * f0 - 80e3 + i as f64 * 1e3).collect();
        let mut cfg = base_config(pi, omega, vec![spin]);
        cfg.repeats = 40;
        cfg.tau_axis = taus_for_frequencies(&freqs).unwrap();
        let spec = simulate_spectrum(&cfg).unwrap();
        let peaks = detect_peaks(&spec, 0.02).unwrap();
        assert!(
            peaks.is_empty(),
            "unexpected dips with perfect pulses: {:?}",
            peaks
        );
    }

    /// With 8 % detuning and amplitude biases on the square pulses the
    /// half-resonance artifact appears and deepens as the train gets longer.
    #[test]
    fn spurious_dip_grows_with_pulse_count() {
        let omega = TWO_PI * 10e6;
        let pi = square_pi(omega);
        let spin = example_spin();
        let f0 = resonance_rate(larmor(), &spin) / TWO_PI;
        let freqs: Vec<f64> = (0..81).map(|i| 2.0 * f0 - 60e3 + i as f64 * 1.5e3).collect();
        let mut depths = Vec::new();
        for repeats in [10, 20, 40] {
            let mut cfg = base_config(pi.clone(), omega, vec![spin]);
            cfg.err = ErrorPoint::new(0.08 * omega, 0.08);
            cfg.noise = Some(shot_noise(omega));
            cfg.repeats = repeats;
            cfg.tau_axis = taus_for_frequencies(&freqs).unwrap();
            let spec = simulate_spectrum(&cfg).unwrap();
            let p_min = spec.population.iter().cloned().fold(f64::INFINITY, f64::min);
            depths.push(1.0 - p_min);
        }
        assert!(
            depths[0] < depths[1] && depths[1] < depths[2],
            "artifact depths not monotone over repeats: {:?}",
            depths
        );
    }

    /// The worked example: a_∥/2π = 305 kHz, a_⊥/2π = 136 kHz at 510 G
    /// under XY4×40 square pulses biased by 8 % in both detuning and
    /// amplitude, shot-averaged over the intrinsic noise ensemble, shows
    /// the real resonance near 0.695 MHz and the pulse-error artifact near
    /// 1.39 MHz on the default axis.
    #[test]
    fn example_spin_spectrum_shows_resonance_and_artifact() {
        let omega = TWO_PI * 10e6;
        let mut cfg = base_config(square_pi(omega), omega, vec![example_spin()]);
        cfg.err = ErrorPoint::new(0.08 * omega, 0.08);
        cfg.noise = Some(shot_noise(omega));
        cfg.repeats = 40;
        cfg.tau_axis = taus_for_frequencies(&default_frequency_axis()).unwrap();
        let spec = simulate_spectrum(&cfg).unwrap();
        let peaks = detect_peaks(&spec, 0.02).unwrap();
        let near = |target: f64, tol: f64| {
            peaks
                .iter()
                .filter(|pk| (pk.frequency - target).abs() <= tol)
                .max_by(|a, b| a.depth.total_cmp(&b.depth))
                .copied()
        };
        let true_dip = near(0.695e6, 0.01e6);
        let artifact = near(1.39e6, 0.02e6);
        assert!(true_dip.is_some(), "no resonance near 0.695 MHz: {:?}", peaks);
        assert!(artifact.is_some(), "no artifact near 1.39 MHz: {:?}", peaks);
    }

    #[test]
    fn populations_stay_physical_with_errors_and_multiple_spins() {
        let omega = TWO_PI * 10e6;
        let spins = vec![
            example_spin(),
            NuclearSpinParams::from_couplings(-TWO_PI * 46e3, TWO_PI * 1.4e3).unwrap(),
        ];
        let mut cfg = base_config(square_pi(omega), omega, spins);
        cfg.err = ErrorPoint::new(0.05 * omega, 0.08);
        cfg.repeats = 8;
        let freqs: Vec<f64> = (0..61).map(|i| 0.4e6 + i as f64 * 20e3).collect();
        cfg.tau_axis = taus_for_frequencies(&freqs).unwrap();
        let spec = simulate_spectrum(&cfg).unwrap();
        for &p in &spec.population {
            assert!((0.0..=1.0).contains(&p), "population {} out of range", p);
        }
        // Rows must be sorted by ascending frequency.
        for w in spec.frequency_axis.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn flat_spectrum_yields_no_peaks_and_rejects_bad_prominence() {
        let n = 101;
        let freqs: Vec<f64> = (0..n).map(|i| 0.4e6 + 1e3 * i as f64).collect();
        let spec = Spectrum {
            tau_axis: taus_for_frequencies(&freqs).unwrap(),
            frequency_axis: freqs,
            population: vec![0.97; n],
            peaks: Vec::new(),
        };
        assert!(detect_peaks(&spec, 0.05).unwrap().is_empty());
        assert!(detect_peaks(&spec, 0.0).is_err());
        assert!(detect_peaks(&spec, 1.0).is_err());
    }

    #[test]
    fn synthetic_dip_is_located_within_one_bin() {
        let n = 201;
        let step = 1e3;
        let f0 = 0.5e6;
        let center = 0.5503e6; // deliberately off-grid
        let freqs: Vec<f64> = (0..n).map(|i| f0 + step * i as f64).collect();
        let population: Vec<f64> = freqs
            .iter()
            .map(|&f| 1.0 - 0.4 * (-((f - center) / 8e3).powi(2)).exp())
            .collect();
        let spec = Spectrum {
            tau_axis: taus_for_frequencies(&freqs).unwrap(),
            frequency_axis: freqs,
            population,
            peaks: Vec::new(),
        };
        let peaks = detect_peaks(&spec, 0.1).unwrap();
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].frequency - center).abs() < step);
        assert!((peaks[0].depth - 0.4).abs() < 0.02);
    }

    /// Round trip on a strongly coupled spin: simulate noiselessly, detect
    /// the first-order dip, fit, and recover the generating parameters.
    #[test]
    fn hyperfine_fit_recovers_a_strong_spin() {
        let omega = TWO_PI * 10e6;
        let truth = NuclearSpinParams::new(TWO_PI * 360e3, 56f64.to_radians()).unwrap();
        let mut cfg = base_config(square_pi(omega), omega, vec![truth]);
        cfg.sequence = DDKind::Xy8;
        cfg.repeats = 2;
        cfg.tau_axis = taus_for_frequencies(&default_frequency_axis()).unwrap();
        let spec = simulate_spectrum(&cfg).unwrap();

        let f0 = resonance_rate(cfg.omega_larmor(), &truth) / TWO_PI;
        let peaks = detect_peaks(&spec, 0.02).unwrap();
        let peak = peaks
            .iter()
            .filter(|pk| (pk.frequency - f0).abs() < 40e3)
            .max_by(|a, b| a.depth.total_cmp(&b.depth))
            .copied()
            .expect("first-order dip not detected");

        let fit = fit_hyperfine(&spec, &peak, &cfg).unwrap();
        assert!(
            (fit.params.omega_h - truth.omega_h).abs() < TWO_PI * 9e3,
            "omega_h/2pi fitted {:.3} kHz vs true 360 kHz",
            fit.params.omega_h / TWO_PI / 1e3
        );
        assert!(
            (fit.params.theta - truth.theta).abs() < 2f64.to_radians(),
            "theta fitted {:.2} deg vs true 56 deg",
            fit.params.theta.to_degrees()
        );
        assert!(fit.sse < 1e-6);
    }

    #[test]
    fn fit_rejects_a_flat_spectrum() {
        let omega = TWO_PI * 10e6;
        let cfg = base_config(square_pi(omega), omega, vec![]);
        let n = 101;
        let freqs: Vec<f64> = (0..n).map(|i| 0.6e6 + 1e3 * i as f64).collect();
        let spec = Spectrum {
            tau_axis: taus_for_frequencies(&freqs).unwrap(),
            frequency_axis: freqs,
            population: vec![1.0; n],
            peaks: Vec::new(),
        };
        let fake = Peak {
            frequency: 0.65e6,
            depth: 0.5,
        };
        assert!(fit_hyperfine(&spec, &fake, &cfg).is_err());
    }

    #[test]
    fn spectrum_csv_has_one_row_per_point() {
        let (pi, omega) = hard_pi();
        let mut cfg = base_config(pi, omega, vec![example_spin()]);
        cfg.tau_axis = taus_for_frequencies(&[0.5e6, 0.7e6, 0.9e6]).unwrap();
        let spec = simulate_spectrum(&cfg).unwrap();
        let csv = spec.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("tau_s,frequency_hz,population\n"));
    }
}
