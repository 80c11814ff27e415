//! State-transfer fidelity landscapes of π-pulse waveforms over a
//! detuning × drive-amplitude error grid, with 1-D detuning cuts and
//! contour-area summaries for comparing pulse families.

use rayon::prelude::*;

use crate::error::SpinError;
use crate::pulse::{pulse_propagator, ErrorPoint, Waveform};
use crate::state::transfer_population;
use crate::Result;

/// Grid of state-transfer fidelities |⟨1|U(Δ, δ1)|0⟩|² with the axes that
/// generated it. Rows follow the detuning axis, columns the fractional
/// drive-error axis.
#[derive(Clone, Debug)]
pub struct FidelityLandscape {
    /// Detuning values in rad/s.
    pub detuning_axis: Vec<f64>,
    /// Fractional drive-amplitude errors.
    pub rabi_axis: Vec<f64>,
    /// values[i][j] at (detuning_axis[i], rabi_axis[j]); all in [0, 1].
    pub values: Vec<Vec<f64>>,
    pub pulse_label: String,
}

fn linspace(half_width: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64)
        .collect()
}

/// Transfer fidelity of the waveform at one error point.
fn transfer_at(w: &Waveform, err: &ErrorPoint) -> Result<f64> {
    let u = pulse_propagator(w, err)?;
    Ok(transfer_population(&u, 0, 1).clamp(0.0, 1.0))
}

/// Scan the state-transfer fidelity over ±`detuning_frac`·Ω × ±`rabi_frac`
/// on an n×n grid. Grid points are independent and evaluated in parallel;
/// the result is deterministic.
pub fn scan(
    w: &Waveform,
    label: &str,
    detuning_frac: f64,
    rabi_frac: f64,
    n: usize,
) -> Result<FidelityLandscape> {
    w.validate()?;
    if n < 2 {
        return Err(SpinError::config("grid needs at least 2 points per axis"));
    }
    if !(detuning_frac > 0.0) || !(rabi_frac > 0.0) {
        return Err(SpinError::config("scan ranges must be positive"));
    }
    let detuning_axis = linspace(detuning_frac * w.omega_max, n);
    let rabi_axis = linspace(rabi_frac, n);
    let values: Result<Vec<Vec<f64>>> = detuning_axis
        .par_iter()
        .map(|&delta0| {
            rabi_axis
                .iter()
                .map(|&delta1| transfer_at(w, &ErrorPoint::new(delta0, delta1)))
                .collect()
        })
        .collect();
    Ok(FidelityLandscape {
        detuning_axis,
        rabi_axis,
        values: values?,
        pulse_label: label.to_string(),
    })
}

/// 1-D fidelity cut along detuning at zero drive error, over ±`range_frac`·Ω.
pub fn detuning_cut(w: &Waveform, range_frac: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    w.validate()?;
    if n < 2 {
        return Err(SpinError::config("cut needs at least 2 points"));
    }
    if !(range_frac > 0.0) {
        return Err(SpinError::config("cut range must be positive"));
    }
    linspace(range_frac * w.omega_max, n)
        .par_iter()
        .map(|&delta0| Ok((delta0, transfer_at(w, &ErrorPoint::new(delta0, 0.0))?)))
        .collect()
}

/// Fraction of grid cells with fidelity ≥ `level`.
pub fn contour_area(map: &FidelityLandscape, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SpinError::config("contour level must lie in (0, 1)"));
    }
    let total: usize = map.values.iter().map(|row| row.len()).sum();
    if total == 0 {
        return Err(SpinError::config("landscape has no values"));
    }
    let above: usize = map
        .values
        .iter()
        .flat_map(|row| row.iter())
        .filter(|&&v| v >= level)
        .count();
    Ok(above as f64 / total as f64)
}

impl FidelityLandscape {
    /// CSV with one header line, then the drive-error axis as the first row,
    /// the detuning axis as the first column, and fidelities to 9
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# pulse={} rows=detuning cols=rabi\n",
            self.pulse_label
        ));
        let fmt = |v: f64| format!("{:.8e}", v);
        let mut header: Vec<String> = vec![String::new()];
        header.extend(self.rabi_axis.iter().map(|&v| fmt(v)));
        out.push_str(&header.join(","));
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            let mut cells = vec![fmt(self.detuning_axis[i])];
            cells.extend(row.iter().map(|&v| fmt(v)));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
