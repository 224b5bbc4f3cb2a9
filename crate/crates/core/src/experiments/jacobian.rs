//! Small-`ε` behaviour of the consistency term at a single sample.
//!
//! For each instance the Monte-Carlo estimate `ε⁻² mean |F(Φ(z+εω)) − F(Φ(z))|²`
//! is compared with the exact limit `‖Jₖᵀ∇F‖²` and, on the same draws, with
//! the linearised estimate `mean (∇Fᵀ J ω)²`. The second comparison removes
//! the sampling noise common to both and leaves the `ε`-dependent bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::make_manifold_map;
use crate::network::init_network;
use crate::numerics::Rng;
use crate::objectives::{jacobian_penalty_exact, jacobian_penalty_mc_with_draws, latent_draws, linearised_penalty_with_draws};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianLimitConfig {
    pub instances: usize,
    pub epsilons: Vec<f64>,
    pub draws: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub ambient_dim: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for JacobianLimitConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            epsilons: vec![1e-1, 1e-2, 1e-3],
            draws: 100_000,
            latent_dim: 10,
            hidden_dim: 30,
            ambient_dim: 100,
            width: 16,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianInstance {
    pub exact: f64,
    pub linearised: f64,
    /// Monte-Carlo estimate for each configured `ε`.
    pub mc: Vec<f64>,
}

impl JacobianInstance {
    /// `|mc − linearised| / linearised` for each `ε`.
    pub fn bias(&self) -> Vec<f64> {
        self.mc.iter().map(|m| (m - self.linearised).abs() / self.linearised).collect()
    }

    /// `|mc − exact| / exact` at the smallest configured `ε`.
    pub fn rel_error_smallest(&self, epsilons: &[f64]) -> f64 {
        let i = argmin(epsilons);
        (self.mc[i] - self.exact).abs() / self.exact
    }
}

fn argmin(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |best, i| if xs[i] < xs[best] { i } else { best })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianLimitReport {
    pub epsilons: Vec<f64>,
    pub instances: Vec<JacobianInstance>,
    /// Mean relative bias over instances, per `ε`.
    pub mean_bias: Vec<f64>,
    /// Least-squares slope of `log mean_bias` against `log ε`.
    pub bias_slope: f64,
    pub max_rel_error: f64,
}

impl JacobianLimitReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,epsilon,exact,linearised,mc,rel_bias\n");
        for (i, inst) in self.instances.iter().enumerate() {
            for ((eps, mc), b) in self.epsilons.iter().zip(&inst.mc).zip(inst.bias()) {
                out.push_str(&format!("{i},{eps},{},{},{mc},{b}\n", inst.exact, inst.linearised));
            }
        }
        out
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn jacobian_limit_study(cfg: &JacobianLimitConfig) -> Result<JacobianLimitReport> {
    if cfg.instances == 0 || cfg.draws == 0 || cfg.epsilons.len() < 2 {
        return Err(Error::invalid("need instances, draws and at least two epsilons"));
    }
    if cfg.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("epsilons must be positive"));
    }
    let mut rng = Rng::new(cfg.seed, 0);
    let d = cfg.latent_dim;
    let mut instances = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let map = make_manifold_map(&mut rng, d, cfg.hidden_dim, cfg.ambient_dim)?;
        let mut params = init_network(&mut rng, cfg.ambient_dim, cfg.width)?;
        for b in params.c1_mut() {
            *b = rng.gaussian();
        }
        let z = rng.gaussian_vector(d)?;
        let draws = latent_draws(&mut rng, d, d, cfg.draws)?;
        let mc = cfg
            .epsilons
            .iter()
            .map(|&eps| jacobian_penalty_mc_with_draws(&params, &map, &z, eps, &draws))
            .collect::<Result<Vec<_>>>()?;
        instances.push(JacobianInstance {
            exact: jacobian_penalty_exact(&params, &map, &z, d)?,
            linearised: linearised_penalty_with_draws(&params, &map, &z, &draws)?,
            mc,
        });
    }
    let mean_bias: Vec<f64> = (0..cfg.epsilons.len())
        .map(|i| instances.iter().map(|inst| inst.bias()[i]).sum::<f64>() / instances.len() as f64)
        .collect();
    let log_eps: Vec<f64> = cfg.epsilons.iter().map(|e| e.ln()).collect();
    let log_bias: Vec<f64> = mean_bias.iter().map(|b| b.ln()).collect();
    Ok(JacobianLimitReport {
        bias_slope: ls_slope(&log_eps, &log_bias),
        max_rel_error: instances
            .iter()
            .map(|i| i.rel_error_smallest(&cfg.epsilons))
            .fold(0.0, f64::max),
        epsilons: cfg.epsilons.clone(),
        instances,
        mean_bias,
    })
}
