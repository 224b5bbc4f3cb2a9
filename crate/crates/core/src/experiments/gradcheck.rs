//! Finite-difference audit of every analytic gradient on random small
//! instances.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manifold::{make_manifold_map, ManifoldMap};
use crate::network::{init_network, NetworkParams};
use crate::numerics::{finite_diff_grad, Rng};
use crate::objectives::{
    consistency_batch_eval, dirichlet_energy_grad, jacobian_penalty_exact_grad, jacobian_penalty_mc_grad, latent_draws,
    supervised_batch, ConsistencyBatch, ConsistencyItem, ConsistencyOutput, LossKind, LossValueGrad,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub max_d_in: usize,
    pub max_width: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_d_in: 10,
            max_width: 8,
            h: 1e-5,
            tolerance: 1e-6,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub objective: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub const GRADCHECK_HEADER: &str = "objective,instances,max_rel_error,passed";

pub fn gradcheck_csv(rows: &[GradcheckRow]) -> String {
    let mut out = format!("{GRADCHECK_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.objective, r.instances, r.max_rel_error, r.passed));
    }
    out
}

pub const OBJECTIVES: [&str; 7] = [
    "supervised_logistic",
    "supervised_squared",
    "consistency_logit",
    "consistency_probability",
    "jacobian_penalty_exact",
    "jacobian_penalty_mc",
    "dirichlet_energy",
];

struct Instance {
    params: NetworkParams,
    map: ManifoldMap,
    latents: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    targets: Vec<f64>,
    draws: Vec<Vec<f64>>,
    k: usize,
}

fn instance(rng: &mut Rng, cfg: &GradcheckConfig) -> Result<Instance> {
    let d_in = 1 + rng.below(cfg.max_d_in);
    let width = 1 + rng.below(cfg.max_width);
    let d = 1 + rng.below(d_in);
    let hidden = 1 + rng.below(6);
    let map = make_manifold_map(rng, d, hidden, d_in)?;
    let mut params = init_network(rng, d_in, width)?;
    // Nonzero biases so both ELU branches are exercised.
    for b in params.c1_mut() {
        *b = rng.gaussian();
    }
    *params.c2_mut() = rng.gaussian();
    let n = 3;
    let latents = (0..n).map(|_| rng.gaussian_vector(d)).collect::<Result<Vec<_>>>()?;
    let inputs = (0..n).map(|_| rng.gaussian_vector(d_in)).collect::<Result<Vec<_>>>()?;
    let labels = (0..n).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
    let targets = (0..n).map(|_| rng.gaussian()).collect();
    let k = 1 + rng.below(d);
    let draws = latent_draws(rng, d, k, 4)?;
    Ok(Instance {
        params,
        map,
        latents,
        inputs,
        labels,
        targets,
        draws,
        k,
    })
}

fn objective(name: &str, inst: &Instance, p: &NetworkParams) -> Result<LossValueGrad> {
    let batch = |output| ConsistencyBatch {
        items: inst
            .targets
            .iter()
            .zip(&inst.inputs)
            .map(|(t, x)| ConsistencyItem {
                target: *t,
                augmented: vec![x.clone(), x.iter().map(|v| 0.9 * v + 0.1).collect()],
            })
            .collect(),
        weight: 1.3,
        output,
    };
    let supervised = |loss| supervised_batch(p, inst.inputs.iter().map(|x| x.as_slice()).zip(inst.labels.iter().copied()), loss);
    match name {
        "supervised_logistic" => supervised(LossKind::Logistic),
        "supervised_squared" => supervised(LossKind::Squared),
        "consistency_logit" => consistency_batch_eval(p, &batch(ConsistencyOutput::Logit)),
        "consistency_probability" => consistency_batch_eval(p, &batch(ConsistencyOutput::Probability)),
        "jacobian_penalty_exact" => jacobian_penalty_exact_grad(p, &inst.map, &inst.latents[0], inst.k),
        "jacobian_penalty_mc" => jacobian_penalty_mc_grad(p, &inst.map, &inst.latents[0], 0.1, &inst.draws),
        "dirichlet_energy" => dirichlet_energy_grad(p, &inst.map, &inst.latents),
        other => unreachable!("unknown objective {other}"),
    }
}

/// Relative error scaled by the larger of the two gradients' sup norms, with
/// a floor of `1e-8` so that near-zero gradients compare absolutely.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-8, f64::max);
    num / scale
}

pub fn gradcheck_suite(cfg: &GradcheckConfig) -> Result<Vec<GradcheckRow>> {
    let mut rng = Rng::new(cfg.seed, 0);
    let instances = (0..cfg.instances).map(|_| instance(&mut rng, cfg)).collect::<Result<Vec<_>>>()?;
    OBJECTIVES
        .iter()
        .map(|&name| {
            let mut worst = 0.0f64;
            for inst in &instances {
                let analytic = objective(name, inst, &inst.params)?;
                let shape = inst.params.shape();
                let fd = finite_diff_grad(
                    |theta| {
                        let q = NetworkParams::from_flat(shape, theta.to_vec()).expect("same shape");
                        objective(name, inst, &q).map(|o| o.value).unwrap_or(f64::NAN)
                    },
                    inst.params.as_slice(),
                    cfg.h,
                )?;
                worst = worst.max(rel_err(analytic.grads.as_slice(), &fd));
            }
            Ok(GradcheckRow {
                objective: name.to_string(),
                instances: instances.len(),
                max_rel_error: worst,
                passed: worst <= cfg.tolerance,
            })
        })
        .collect()
}
