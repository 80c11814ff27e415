//! Curve fitting: a compact Nelder–Mead simplex minimizer plus the specific
//! least-squares fits the experiments need (Gaussian-envelope dephasing,
//! exponential-envelope driven oscillations).

use crate::error::{Result, SpinError};

/// Minimize `f` by the Nelder–Mead simplex method starting at `x0` with
/// per-coordinate initial steps `steps`. Returns (argmin, min).
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    max_iters: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    assert_eq!(steps.len(), n);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iters {
        // Order ascending by value.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if (fvals[worst] - fvals[best]).abs() <= tol * (1.0 + fvals[best].abs()) {
            break;
        }
        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for j in 0..n {
                centroid[j] += simplex[i][j] / n as f64;
            }
        }
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + alpha * (centroid[j] - simplex[worst][j]))
            .collect();
        let f_reflect = f(&reflect);
        if f_reflect < fvals[best] {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                .collect();
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                fvals[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                fvals[worst] = f_reflect;
            }
        } else if f_reflect < fvals[second_worst] {
            simplex[worst] = reflect;
            fvals[worst] = f_reflect;
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + rho * (simplex[worst][j] - centroid[j]))
                .collect();
            let f_contract = f(&contract);
            if f_contract < fvals[worst] {
                simplex[worst] = contract;
                fvals[worst] = f_contract;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for j in 0..n {
                        simplex[i][j] = best_point[j] + sigma * (simplex[i][j] - best_point[j]);
                    }
                    fvals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if fvals[i] < fvals[best] {
            best = i;
        }
    }
    (simplex[best].clone(), fvals[best])
}

/// Fit P(t) = 1/2 − 1/2·e^{−(t/T)²}·cos(Δt) to a free-induction curve.
/// Returns (T, Δ). Initial guesses must be roughly right (the oscillation
/// frequency is not searched globally).
pub fn fit_fid_t2star(
    ts: &[f64],
    ps: &[f64],
    t_init: f64,
    delta_init: f64,
) -> Result<(f64, f64)> {
    if ts.len() != ps.len() || ts.len() < 4 {
        return Err(SpinError::config("fid fit needs matched curves, >= 4 points"));
    }
    let objective = |x: &[f64]| -> f64 {
        let (t2, delta) = (x[0], x[1]);
        if t2 <= 0.0 {
            return 1e12;
        }
        ts.iter()
            .zip(ps)
            .map(|(&t, &p)| {
                let model = 0.5 - 0.5 * (-(t / t2).powi(2)).exp() * (delta * t).cos();
                (model - p).powi(2)
            })
            .sum()
    };
    let (x, _) = nelder_mead(
        &objective,
        &[t_init, delta_init],
        &[0.1 * t_init, 0.02 * delta_init.abs().max(1.0)],
        2000,
        1e-14,
    );
    let (x, _) = nelder_mead(
        &objective,
        &x,
        &[1e-3 * x[0], 1e-4 * x[1].abs().max(1.0)],
        2000,
        1e-16,
    );
    Ok((x[0], x[1]))
}

/// Fit P(t) = 1/2 − 1/2·e^{−γt}·cos(Ωt) to a driven-oscillation curve.
/// Returns (γ, Ω).
pub fn fit_rabi_decay(
    ts: &[f64],
    ps: &[f64],
    gamma_init: f64,
    omega_init: f64,
) -> Result<(f64, f64)> {
    if ts.len() != ps.len() || ts.len() < 4 {
        return Err(SpinError::config("rabi fit needs matched curves, >= 4 points"));
    }
    let objective = |x: &[f64]| -> f64 {
        let (gamma, omega) = (x[0], x[1]);
        if gamma < 0.0 || omega <= 0.0 {
            return 1e12;
        }
        ts.iter()
            .zip(ps)
            .map(|(&t, &p)| {
                let model = 0.5 - 0.5 * (-gamma * t).exp() * (omega * t).cos();
                (model - p).powi(2)
            })
            .sum()
    };
    // Two passes: the (γ, Ω) valley is narrow and curved, so restart the
    // simplex at the first result with tighter steps.
    let (x, _) = nelder_mead(
        &objective,
        &[gamma_init, omega_init],
        &[0.1 * gamma_init.max(1.0), 1e-4 * omega_init],
        2000,
        1e-16,
    );
    let (x, _) = nelder_mead(&objective, &x, &[1e-3 * x[0].max(1.0), 1e-7 * x[1]], 2000, 1e-18);
    Ok((x[0], x[1]))
}
