//! Piecewise-constant control pulses and timed sequences.
//!
//! A [`Waveform`] is a pair of normalized in-phase/quadrature envelopes
//! sampled on a uniform grid; the physical drive amplitude is
//! `omega_max · (ux, uy)`. Square, three-segment detuning-compensating and
//! five-segment amplitude-compensating pulse shapes are generated in closed
//! form. [`sequence_propagator`] turns a sequence of pulses and delays into
//! the total unitary under a static error point.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Result, SpinError};
use crate::linalg::ComplexMatrix;
use crate::state::{spin_x, spin_y, spin_z};

/// Static error affecting one experimental shot: a detuning offset (rad/s),
/// a fractional drive-amplitude error, and a drive-phase error (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorPoint {
    pub delta0: f64,
    pub delta1: f64,
    pub delta_phi: f64,
}

impl ErrorPoint {
    pub const ZERO: ErrorPoint = ErrorPoint {
        delta0: 0.0,
        delta1: 0.0,
        delta_phi: 0.0,
    };

    pub fn new(delta0: f64, delta1: f64) -> Self {
        ErrorPoint {
            delta0,
            delta1,
            delta_phi: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta0.is_finite() && self.delta1.is_finite() && self.delta_phi.is_finite()) {
            return Err(SpinError::config("error point must be finite"));
        }
        if self.delta1 <= -1.0 {
            return Err(SpinError::config(
                "fractional amplitude error must exceed -1",
            ));
        }
        Ok(())
    }
}

/// Normalized piecewise-constant drive envelope on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub dt: f64,
    pub omega_max: f64,
    /// Per-slice (in-phase, quadrature) pairs, each component in [−1, 1].
    pub samples: Vec<[f64; 2]>,
}

/// Component amplitudes may exceed 1 by at most this much (roundoff slack).
pub const AMPLITUDE_TOL: f64 = 1e-12;

impl Waveform {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(SpinError::config("waveform dt must be positive"));
        }
        if self.omega_max <= 0.0 || !self.omega_max.is_finite() {
            return Err(SpinError::config("waveform omega_max must be positive"));
        }
        if self.samples.is_empty() {
            return Err(SpinError::config("waveform must contain at least one slice"));
        }
        for (l, s) in self.samples.iter().enumerate() {
            if !(s[0].is_finite() && s[1].is_finite()) {
                return Err(SpinError::config(format!("slice {l} is not finite")));
            }
            if s[0].abs() > 1.0 + AMPLITUDE_TOL || s[1].abs() > 1.0 + AMPLITUDE_TOL {
                return Err(SpinError::config(format!(
                    "slice {l} exceeds the unit amplitude constraint"
                )));
            }
        }
        Ok(())
    }

    /// Slice-wise rotation of (ux, uy) by `phi`; preserves |u| per slice.
    pub fn rotate_phase(&self, phi: f64) -> Waveform {
        let (c, s) = (phi.cos(), phi.sin());
        let samples = self
            .samples
            .iter()
            .map(|u| [u[0] * c - u[1] * s, u[0] * s + u[1] * c])
            .collect();
        Waveform {
            dt: self.dt,
            omega_max: self.omega_max,
            samples,
        }
    }

    /// Serialize to the plain-text exchange format: a header with the grid
    /// step and amplitude scale, then one `ux uy` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# dt_ns={:.12} omega_max_radps={:.6}",
            self.dt * 1e9,
            self.omega_max
        );
        for s in &self.samples {
            let _ = writeln!(out, "{:.17e} {:.17e}", s[0], s[1]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Waveform> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SpinError::parse("empty waveform file"))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| SpinError::parse("waveform header must start with '#'"))?;
        let mut dt = None;
        let mut omega = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("dt_ns=") {
                dt = Some(
                    v.parse::<f64>()
                        .map_err(|e| SpinError::parse(format!("bad dt_ns: {e}")))?
                        * 1e-9,
                );
            } else if let Some(v) = tok.strip_prefix("omega_max_radps=") {
                omega = Some(
                    v.parse::<f64>()
                        .map_err(|e| SpinError::parse(format!("bad omega_max_radps: {e}")))?,
                );
            }
        }
        let (dt, omega_max) = match (dt, omega) {
            (Some(d), Some(o)) => (d, o),
            _ => return Err(SpinError::parse("waveform header missing dt_ns/omega_max_radps")),
        };
        let mut samples = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let ux: f64 = it
                .next()
                .ok_or_else(|| SpinError::parse(format!("line {}: missing ux", ln + 2)))?
                .parse()
                .map_err(|e| SpinError::parse(format!("line {}: {e}", ln + 2)))?;
            let uy: f64 = it
                .next()
                .ok_or_else(|| SpinError::parse(format!("line {}: missing uy", ln + 2)))?
                .parse()
                .map_err(|e| SpinError::parse(format!("line {}: {e}", ln + 2)))?;
            samples.push([ux, uy]);
        }
        let w = Waveform {
            dt,
            omega_max,
            samples,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Waveform> {
        let text = std::fs::read_to_string(path)?;
        Waveform::from_text(&text)
    }
}

/// Append the slices realizing a rotation by `theta` about the equatorial
/// axis with azimuth `phi`: full-amplitude slices plus, when the angle does
/// not divide evenly, one reduced-amplitude slice carrying the exact
/// residual. Total rotation angle is exact; duration rounds up to whole
/// slices.
fn push_segment(samples: &mut Vec<[f64; 2]>, theta: f64, phi: f64, omega: f64, dt: f64) {
    let slices = theta / (omega * dt);
    let n_full = (slices + 1e-9).floor() as usize;
    let rem = slices - n_full as f64;
    let (c, s) = (phi.cos(), phi.sin());
    for _ in 0..n_full {
        samples.push([c, s]);
    }
    if rem > 1e-9 {
        samples.push([rem * c, rem * s]);
    }
}

/// Constant-amplitude rotation (θ)_φ as a waveform.
pub fn square_pulse(theta: f64, phi: f64, omega: f64, dt: f64) -> Result<Waveform> {
    if theta <= 0.0 || omega <= 0.0 || dt <= 0.0 {
        return Err(SpinError::config("square pulse requires positive theta, omega, dt"));
    }
    let mut samples = Vec::new();
    push_segment(&mut samples, theta, phi, omega, dt);
    let w = Waveform {
        dt,
        omega_max: omega,
        samples,
    };
    w.validate()?;
    Ok(w)
}

/// Three-segment detuning-compensating composite rotation:
/// (θ1)_0 − (θ2)_π − (θ3)_0 with
/// θ1 = 2π + θ/2 − arcsin(sin(θ/2)/2), θ2 = 2π − 2·arcsin(sin(θ/2)/2),
/// θ3 = θ/2 − arcsin(sin(θ/2)/2).
pub fn corpse_pulse(theta: f64, omega: f64, dt: f64) -> Result<Waveform> {
    if !(theta > 0.0 && theta <= std::f64::consts::PI) {
        return Err(SpinError::config("composite rotation requires 0 < theta <= pi"));
    }
    let k = ((theta / 2.0).sin() / 2.0).asin();
    let th1 = 2.0 * std::f64::consts::PI + theta / 2.0 - k;
    let th2 = 2.0 * std::f64::consts::PI - 2.0 * k;
    let th3 = theta / 2.0 - k;
    let mut samples = Vec::new();
    push_segment(&mut samples, th1, 0.0, omega, dt);
    push_segment(&mut samples, th2, std::f64::consts::PI, omega, dt);
    if th3 > 1e-12 {
        push_segment(&mut samples, th3, 0.0, omega, dt);
    }
    let w = Waveform {
        dt,
        omega_max: omega,
        samples,
    };
    w.validate()?;
    Ok(w)
}

/// Five-segment amplitude-compensating composite rotation:
/// (θ/2)_0 − (π)_φ − (2π)_{3φ} − (π)_φ − (θ/2)_0 with φ = arccos(−θ/(4π)).
pub fn bb1_pulse(theta: f64, omega: f64, dt: f64) -> Result<Waveform> {
    if !(theta > 0.0 && theta <= std::f64::consts::PI) {
        return Err(SpinError::config("composite rotation requires 0 < theta <= pi"));
    }
    let phi = (-theta / (4.0 * std::f64::consts::PI)).acos();
    let pi = std::f64::consts::PI;
    let mut samples = Vec::new();
    push_segment(&mut samples, theta / 2.0, 0.0, omega, dt);
    push_segment(&mut samples, pi, phi, omega, dt);
    push_segment(&mut samples, 2.0 * pi, 3.0 * phi, omega, dt);
    push_segment(&mut samples, pi, phi, omega, dt);
    push_segment(&mut samples, theta / 2.0, 0.0, omega, dt);
    let w = Waveform {
        dt,
        omega_max: omega,
        samples,
    };
    w.validate()?;
    Ok(w)
}

/// One element of a timed sequence: a shaped pulse played with an extra
/// phase offset, or a free-evolution delay.
#[derive(Clone, Debug)]
pub enum Segment {
    Pulse { wave: Waveform, phase: f64 },
    Delay { duration: f64 },
}

pub type PulseSequence = Vec<Segment>;

/// Hamiltonian terms for one propagation context: the spin operators the
/// drive couples to (already lifted to the full Hilbert space when a drift
/// is present) plus an always-on drift term.
struct PropagationOps {
    sx: ComplexMatrix,
    sy: ComplexMatrix,
    sz: ComplexMatrix,
    drift: ComplexMatrix,
    dim: usize,
}

impl PropagationOps {
    fn build(drift: Option<&ComplexMatrix>) -> Result<Self> {
        match drift {
            None => Ok(PropagationOps {
                sx: spin_x(),
                sy: spin_y(),
                sz: spin_z(),
                drift: ComplexMatrix::zeros(2),
                dim: 2,
            }),
            Some(d) => {
                let dim = d.dim();
                if dim % 2 != 0 || dim < 2 {
                    return Err(SpinError::config(format!(
                        "drift dimension {dim} is not an even spin⊗bath dimension"
                    )));
                }
                let idn = ComplexMatrix::identity(dim / 2);
                Ok(PropagationOps {
                    sx: spin_x().kron(&idn),
                    sy: spin_y().kron(&idn),
                    sz: spin_z().kron(&idn),
                    drift: d.clone(),
                    dim,
                })
            }
        }
    }

    fn slice_hamiltonian(&self, ux: f64, uy: f64, err: &ErrorPoint, omega: f64) -> ComplexMatrix {
        let amp = omega * (1.0 + err.delta1);
        let mut h = self.sz.scale(Complex64::new(err.delta0, 0.0));
        h = h.add(&self.sx.scale(Complex64::new(amp * ux, 0.0)));
        h = h.add(&self.sy.scale(Complex64::new(amp * uy, 0.0)));
        h.add(&self.drift)
    }

    fn delay_hamiltonian(&self, err: &ErrorPoint) -> ComplexMatrix {
        self.sz
            .scale(Complex64::new(err.delta0, 0.0))
            .add(&self.drift)
    }
}

/// Total propagator of a pulse sequence at a static error point.
///
/// Pulse slices evolve under
/// H = δ0·S_z + Ω(1+δ1)(u′_x·S_x + u′_y·S_y) + drift, with (u′_x, u′_y) the
/// slice control rotated by the segment phase plus the phase error; delays
/// evolve under H = δ0·S_z + drift. Runs of identical consecutive slices are
/// coalesced into a single exponential, so a flat pulse costs one.
pub fn sequence_propagator(
    seq: &PulseSequence,
    err: &ErrorPoint,
    drift: Option<&ComplexMatrix>,
) -> Result<ComplexMatrix> {
    err.validate()?;
    let ops = PropagationOps::build(drift)?;
    let mut u = ComplexMatrix::identity(ops.dim);
    for segment in seq {
        match segment {
            Segment::Delay { duration } => {
                if *duration < 0.0 {
                    return Err(SpinError::config("delay duration must be >= 0"));
                }
                if *duration > 0.0 {
                    let h = ops.delay_hamiltonian(err);
                    u = h.expm_i_hermitian(*duration).mul(&u);
                }
            }
            Segment::Pulse { wave, phase } => {
                wave.validate()?;
                let rot = phase + err.delta_phi;
                let (c, s) = (rot.cos(), rot.sin());
                let mut l = 0;
                while l < wave.samples.len() {
                    let cur = wave.samples[l];
                    let mut run = 1;
                    while l + run < wave.samples.len() && wave.samples[l + run] == cur {
                        run += 1;
                    }
                    let ux = cur[0] * c - cur[1] * s;
                    let uy = cur[0] * s + cur[1] * c;
                    let h = ops.slice_hamiltonian(ux, uy, err, wave.omega_max);
                    u = h.expm_i_hermitian(run as f64 * wave.dt).mul(&u);
                    l += run;
                }
            }
        }
    }
    Ok(u)
}

/// Propagator of a single pulse waveform (no extra phase, no drift).
pub fn pulse_propagator(wave: &Waveform, err: &ErrorPoint) -> Result<ComplexMatrix> {
    sequence_propagator(
        &vec![Segment::Pulse {
            wave: wave.clone(),
            phase: 0.0,
        }],
        err,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::transfer_population;
    use crate::units::mhz_to_radps;

    const OMEGA: f64 = 62_831_853.071_795_86; // 2π × 10 MHz
    const DT: f64 = 1e-9;
    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn square_pi_is_fifty_slices_at_reference_rate() {
        let w = square_pulse(PI, 0.0, mhz_to_radps(10.0), DT).unwrap();
        assert_eq!(w.len(), 50);
        assert!((w.duration() - 50e-9).abs() < 1e-18);
        assert!(w.samples.iter().all(|s| *s == [1.0, 0.0]));
    }

    #[test]
    fn square_pi_transfers_fully_on_resonance() {
        let w = square_pulse(PI, 0.0, OMEGA, DT).unwrap();
        let u = pulse_propagator(&w, &ErrorPoint::ZERO).unwrap();
        assert!((transfer_population(&u, 0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rotation_returns_start_up_to_sign() {
        let w = square_pulse(2.0 * PI, 0.0, OMEGA, DT).unwrap();
        let u = pulse_propagator(&w, &ErrorPoint::ZERO).unwrap();
        // exp(−i·2π·S_x) = −1
        let minus_one = ComplexMatrix::identity(2).scale(Complex64::new(-1.0, 0.0));
        assert!(u.max_abs_diff(&minus_one) < 1e-12);
    }

    #[test]
    fn detuned_square_matches_analytic_transfer() {
        // P(|1⟩) = Ω²/(Ω²+Δ²) · sin²(√(Ω²+Δ²)·t/2) at t = π/Ω, Δ = Ω
        let w = square_pulse(PI, 0.0, OMEGA, DT).unwrap();
        let err = ErrorPoint::new(OMEGA, 0.0);
        let u = pulse_propagator(&w, &err).unwrap();
        let p = transfer_population(&u, 0, 1);
        let expected = 0.5 * (PI * std::f64::consts::SQRT_2 / 2.0).sin().powi(2);
        assert!((p - expected).abs() < 1e-9, "p={p} expected={expected}");
    }

    #[test]
    fn composite_segment_angles_are_exact() {
        // Total rotation angle is preserved by the remainder-slice scheme:
        // a 13π/3 x-axis rotation budget realized over three segments.
        let w = corpse_pulse(PI, OMEGA, DT).unwrap();
        let total_angle: f64 = w
            .samples
            .iter()
            .map(|s| (s[0].powi(2) + s[1].powi(2)).sqrt() * OMEGA * DT)
            .sum();
        assert!((total_angle - 13.0 * PI / 3.0).abs() < 1e-9);
        // Realized duration exceeds the ideal 13π/(3Ω) by at most one slice
        // per segment.
        let ideal = 13.0 * PI / (3.0 * OMEGA);
        assert!(w.duration() >= ideal - 1e-15);
        assert!(w.duration() <= ideal + 3.0 * DT);
    }

    #[test]
    fn composite_pulses_transfer_on_resonance() {
        for w in [
            corpse_pulse(PI, OMEGA, DT).unwrap(),
            bb1_pulse(PI, OMEGA, DT).unwrap(),
        ] {
            let u = pulse_propagator(&w, &ErrorPoint::ZERO).unwrap();
            let p = transfer_population(&u, 0, 1);
            assert!((p - 1.0).abs() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn bb1_duration_is_exact_at_reference_rate() {
        let w = bb1_pulse(PI, OMEGA, DT).unwrap();
        assert_eq!(w.len(), 250);
        let phi = (-0.25f64).acos();
        assert!((phi - 1.823_476_581_936_975).abs() < 1e-12);
    }

    #[test]
    fn rotate_phase_round_trip() {
        let w = bb1_pulse(PI, OMEGA, DT).unwrap();
        let back = w.rotate_phase(1.234).rotate_phase(-1.234);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn waveform_text_round_trip() {
        let w = corpse_pulse(PI, OMEGA, DT).unwrap();
        let parsed = Waveform::from_text(&w.to_text()).unwrap();
        assert_eq!(parsed.len(), w.len());
        assert!((parsed.dt - w.dt).abs() < 1e-21);
        assert!((parsed.omega_max - w.omega_max).abs() < 1e-6);
        for (a, b) in w.samples.iter().zip(&parsed.samples) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_sequence_is_identity() {
        let u = sequence_propagator(&Vec::new(), &ErrorPoint::ZERO, None).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn delay_accumulates_detuning_phase() {
        let seq = vec![Segment::Delay { duration: 1e-6 }];
        let err = ErrorPoint::new(mhz_to_radps(1.0), 0.0);
        let u = sequence_propagator(&seq, &err, None).unwrap();
        // exp(−i δ0 S_z t): diagonal phases ∓δ0·t/2
        let expected = (mhz_to_radps(1.0) * 1e-6) / 2.0;
        assert!((u[(0, 0)].arg() + expected).abs() < 1e-9);
        assert!((u[(1, 1)].arg() - expected).abs() < 1e-9);
    }
}
