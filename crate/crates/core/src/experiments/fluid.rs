//! Full-batch SGD against the RK4 gradient-flow path on frozen augmentation
//! draws. The SGD path is read as the piecewise-constant process
//! `θ̄(t) = θ_⌊t/η⌋` and compared on the RK4 time grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::hmm::HmmConfig;
use crate::manifold::{AugmentMode, Augmentation, AugmentationSpec};
use crate::network::{init_network, NetworkParams};
use crate::numerics::linalg;
use crate::numerics::rng::streams;
use crate::numerics::Rng;
use crate::objectives::{ConsistencyOutput, LossKind};
use crate::training::{full_batch_sgd_path, gradient_flow_trajectory, FrozenObjective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidLimitConfig {
    pub task: HmmConfig,
    pub etas: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub draws_per_sample: usize,
    pub width: usize,
    pub output: ConsistencyOutput,
    pub seeds: Vec<u64>,
}

impl Default for FluidLimitConfig {
    fn default() -> Self {
        Self {
            task: HmmConfig {
                n_labelled: 10,
                n_unlabelled: 50,
                n_test: 2,
                ..HmmConfig::default()
            },
            etas: vec![0.02, 0.01, 0.005],
            dt: 0.005,
            horizon: 5.0,
            lambda: 10.0,
            epsilon: 0.3,
            draws_per_sample: 2,
            width: 16,
            output: ConsistencyOutput::Probability,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidLimitRow {
    pub eta: f64,
    pub mean_distance: f64,
    pub per_seed: Vec<f64>,
}

pub const FLUID_HEADER: &str = "eta,mean_sup_distance,seed_distances";

pub fn fluid_csv(rows: &[FluidLimitRow]) -> String {
    let mut out = format!("{FLUID_HEADER}\n");
    for r in rows {
        let seeds: Vec<String> = r.per_seed.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("{},{},{}\n", r.eta, r.mean_distance, seeds.join(";")));
    }
    out
}

/// `η / dt` as an integer, or an error when `η` is not a multiple of `dt`.
fn ratio(eta: f64, dt: f64) -> Result<usize> {
    let r = eta / dt;
    if !(r >= 1.0) || (r - r.round()).abs() > 1e-9 * r {
        return Err(Error::invalid(format!("eta {eta} must be a positive multiple of dt {dt}")));
    }
    Ok(r.round() as usize)
}

/// `sup_j ‖θ̄(j·dt) − θ_ode(j·dt)‖` with `θ̄(t) = path[⌊t/η⌋]`.
pub fn time_rescaled_sup_distance(path: &[Vec<f64>], eta: f64, flow: &[Vec<f64>], dt: f64) -> Result<f64> {
    let r = ratio(eta, dt)?;
    let needed = (flow.len() - 1) / r + 1;
    if path.len() < needed {
        return Err(Error::invalid(format!(
            "SGD path has {} states, {} needed to cover the flow",
            path.len(),
            needed
        )));
    }
    Ok(flow
        .iter()
        .enumerate()
        .map(|(j, f)| linalg::distance(&path[j / r], f))
        .fold(0.0, f64::max))
}

/// Frozen problem and initial parameters for one seed.
pub fn fluid_problem(config: &FluidLimitConfig, seed: u64) -> Result<(FrozenObjective, NetworkParams)> {
    let task = config.task.build()?;
    let data = task.dataset(seed)?;
    let augmenter = Augmentation::new(
        &task.map,
        AugmentationSpec {
            epsilon: config.epsilon,
            k: config.task.latent_dim,
            mode: AugmentMode::Manifold,
        },
    );
    let mut problem = FrozenObjective::freeze(
        &data,
        &augmenter,
        config.draws_per_sample,
        &mut Rng::new(seed, streams::FROZEN_DRAWS),
        config.lambda,
        LossKind::Logistic,
        config.width,
    )?;
    problem.output = config.output;
    let theta0 = init_network(&mut Rng::new(seed, streams::INIT), data.ambient_dim(), config.width)?;
    Ok((problem, theta0))
}

pub fn fluid_limit_experiment(config: &FluidLimitConfig) -> Result<Vec<FluidLimitRow>> {
    if config.etas.is_empty() || config.seeds.is_empty() {
        return Err(Error::invalid("fluid-limit experiment needs learning rates and seeds"));
    }
    for &eta in &config.etas {
        ratio(eta, config.dt)?;
    }
    let mut per_eta = vec![Vec::with_capacity(config.seeds.len()); config.etas.len()];
    for &seed in &config.seeds {
        let (problem, theta0) = fluid_problem(config, seed)?;
        let flow: Vec<Vec<f64>> = gradient_flow_trajectory(&problem, &theta0, config.dt, config.horizon)?
            .into_iter()
            .map(|(_, p)| p.into_flat())
            .collect();
        for (i, &eta) in config.etas.iter().enumerate() {
            let path: Vec<Vec<f64>> = full_batch_sgd_path(&problem, &theta0, eta, config.horizon)?
                .into_iter()
                .map(NetworkParams::into_flat)
                .collect();
            per_eta[i].push(time_rescaled_sup_distance(&path, eta, &flow, config.dt)?);
        }
    }
    Ok(config
        .etas
        .iter()
        .zip(per_eta)
        .map(|(&eta, per_seed)| FluidLimitRow {
            eta,
            mean_distance: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            per_seed,
        })
        .collect())
}
