//! Fixed-step classical Runge-Kutta for autonomous systems `θ' = v(θ)`.

use crate::error::{Error, Result};

/// One RK4 step of size `dt`.
pub fn rk4_step(
    field: &mut impl FnMut(&[f64]) -> Result<Vec<f64>>,
    state: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let n = state.len();
    let k1 = field(state)?;
    let mid: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k1[i]).collect();
    let k2 = field(&mid)?;
    let mid: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k2[i]).collect();
    let k3 = field(&mid)?;
    let end: Vec<f64> = (0..n).map(|i| state[i] + dt * k3[i]).collect();
    let k4 = field(&end)?;
    Ok((0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// States at `t = 0, dt, 2dt, …, horizon`. `horizon` must be an integer
/// multiple of `dt` (to 1e-9 relative).
pub fn rk4_trajectory(
    mut field: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    theta0: &[f64],
    dt: f64,
    horizon: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let steps = step_count(dt, horizon)?;
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = theta0.to_vec();
    out.push((0.0, state.clone()));
    for k in 1..=steps {
        state = rk4_step(&mut field, &state, dt)?;
        let t = k as f64 * dt;
        if !super::linalg::all_finite(&state) {
            return Err(Error::BlowUp { time: t });
        }
        out.push((t, state.clone()));
    }
    Ok(out)
}

pub(crate) fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(Error::invalid(format!(
            "need dt > 0 and horizon >= dt (dt = {dt}, horizon = {horizon})"
        )));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::invalid(format!(
            "horizon {horizon} is not a multiple of dt {dt}"
        )));
    }
    Ok(steps as usize)
}
