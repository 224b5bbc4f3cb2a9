//! Unit-square experiment: `Φ` is the identity on `R²`, labels sit on the
//! vertical edges (`y = 0` at `u = 0`, `y = 1` at `u = 1`) and the Π-model
//! with squared loss is expected to approach the harmonic interpolant
//! `f(u, v) = u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{AugmentMode, Augmentation, AugmentationSpec, Dataset, IdentityMap, LabelledSample, UnlabelledSample};
use crate::network::{self, init_network, NetworkParams};
use crate::numerics::rng::streams;
use crate::numerics::Rng;
use crate::objectives::{dirichlet_energy, ConsistencyOutput, GradientRoute, LossKind, RegularizerKind};
use crate::training::{train_observed, Method, TrainConfig, TrainRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicConfig {
    pub boundary_per_side: usize,
    pub n_unlabelled: usize,
    pub width: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_unlabelled: usize,
    pub draws_per_sample: usize,
    /// Points per side of the evaluation grid (spacing `1 / (grid − 1)`).
    pub grid: usize,
    pub seed: u64,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self {
            boundary_per_side: 20,
            n_unlabelled: 1000,
            width: 100,
            lambda: 10.0,
            epsilon: 0.02,
            epochs: 2000,
            warmup_epochs: 20,
            learning_rate: 0.003,
            momentum: 0.9,
            batch_unlabelled: 100,
            draws_per_sample: 4,
            grid: 21,
            seed: 1,
        }
    }
}

impl HarmonicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.boundary_per_side == 0 || self.n_unlabelled == 0 {
            return Err(Error::invalid("harmonic experiment needs boundary and interior points"));
        }
        if self.grid < 3 {
            return Err(Error::invalid(format!("grid must have at least 3 points per side, got {}", self.grid)));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: Method::PiModel,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_labelled: 2 * self.boundary_per_side,
            batch_unlabelled: self.batch_unlabelled,
            augmentation: AugmentationSpec {
                epsilon: self.epsilon,
                k: 2,
                mode: AugmentMode::Manifold,
            },
            draws_per_sample: self.draws_per_sample,
            width: self.width,
            loss: LossKind::Squared,
            consistency_output: ConsistencyOutput::Logit,
            regularizer: RegularizerKind::Pooled,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.grid - 1) as f64
    }

    /// Grid points in row-major order over `(u, v)`, `u` varying slowest.
    pub fn grid_points(&self) -> Vec<[f64; 2]> {
        let h = self.spacing();
        (0..self.grid)
            .flat_map(|i| (0..self.grid).map(move |j| [i as f64 * h, j as f64 * h]))
            .collect()
    }
}

pub fn analytic_solution(u: f64, _v: f64) -> f64 {
    u
}

/// Boundary labels, uniform interior points, and the evaluation grid as the
/// test set with targets from the analytic solution.
pub fn harmonic_dataset(config: &HarmonicConfig) -> Result<Dataset> {
    let n = config.boundary_per_side;
    let mut labelled = Vec::with_capacity(2 * n);
    for i in 0..n {
        let v = (i as f64 + 0.5) / n as f64;
        for (u, y) in [(0.0, 0.0), (1.0, 1.0)] {
            labelled.push(LabelledSample {
                z: vec![u, v],
                x: vec![u, v],
                y,
            });
        }
    }
    let mut rng = Rng::new(config.seed, streams::DATASET);
    let unlabelled = (0..config.n_unlabelled)
        .map(|_| {
            let p = vec![rng.uniform(), rng.uniform()];
            UnlabelledSample { z: p.clone(), x: p }
        })
        .collect();
    let test = config
        .grid_points()
        .into_iter()
        .map(|[u, v]| LabelledSample {
            z: vec![u, v],
            x: vec![u, v],
            y: analytic_solution(u, v),
        })
        .collect();
    Ok(Dataset {
        labelled,
        unlabelled,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub u: f64,
    pub v: f64,
    pub f: f64,
    pub analytic: f64,
    pub abs_err: f64,
}

pub const GRID_HEADER: &str = "u,v,f,analytic,abs_err";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub rows: Vec<GridRow>,
    pub rms_error: f64,
    /// Mean `|Δf|` over interior grid points, 5-point stencil.
    pub mean_abs_laplacian: f64,
}

pub fn grid_summary(params: &NetworkParams, config: &HarmonicConfig) -> Result<GridSummary> {
    let g = config.grid;
    let h = config.spacing();
    let rows = config
        .grid_points()
        .into_iter()
        .map(|[u, v]| {
            let f = network::forward(params, &[u, v])?;
            let analytic = analytic_solution(u, v);
            Ok(GridRow {
                u,
                v,
                f,
                analytic,
                abs_err: (f - analytic).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rms_error = (rows.iter().map(|r| r.abs_err * r.abs_err).sum::<f64>() / rows.len() as f64).sqrt();
    let at = |i: usize, j: usize| rows[i * g + j].f;
    let mut lap = 0.0;
    for i in 1..g - 1 {
        for j in 1..g - 1 {
            lap += ((at(i + 1, j) + at(i - 1, j) + at(i, j + 1) + at(i, j - 1) - 4.0 * at(i, j)) / (h * h)).abs();
        }
    }
    Ok(GridSummary {
        rows,
        rms_error,
        mean_abs_laplacian: lap / ((g - 2) * (g - 2)) as f64,
    })
}

impl GridSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{GRID_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.u, r.v, r.f, r.analytic, r.abs_err));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicReport {
    pub params: NetworkParams,
    pub initial: GridSummary,
    pub trained: GridSummary,
    /// `(epoch, energy)`; epoch 0 is the initialization. The energy is the
    /// mean of `‖∇f‖²` over the interior grid points (1 for `f = u`).
    pub dirichlet_energy: Vec<(usize, f64)>,
    pub records: Vec<TrainRecord>,
}

impl HarmonicReport {
    pub fn energy_csv(&self) -> String {
        let mut out = String::from("epoch,dirichlet_energy\n");
        for (e, v) in &self.dirichlet_energy {
            out.push_str(&format!("{e},{v}\n"));
        }
        out
    }
}

fn interior_points(config: &HarmonicConfig) -> Vec<Vec<f64>> {
    let h = config.spacing();
    (1..config.grid - 1)
        .flat_map(|i| (1..config.grid - 1).map(move |j| vec![i as f64 * h, j as f64 * h]))
        .collect()
}

pub fn harmonic_experiment(config: &HarmonicConfig) -> Result<HarmonicReport> {
    config.validate()?;
    let data = harmonic_dataset(config)?;
    let map = IdentityMap { dim: 2 };
    let train = config.train_config();
    let augmenter = Augmentation::new(&map, train.augmentation);
    let probes = interior_points(config);
    let energy = |p: &NetworkParams| dirichlet_energy(p, &map, &probes, 1.0, GradientRoute::Exact);

    let init = init_network(&mut Rng::new(config.seed, streams::INIT), 2, config.width)?;
    let mut trajectory = vec![(0, energy(&init)?)];
    let steps_per_epoch = config.n_unlabelled.div_ceil(config.batch_unlabelled);
    let mut energy_error = None;
    let out = train_observed(&train, &data, Some(&augmenter), &mut |view| {
        if view.step % steps_per_epoch == 0 && energy_error.is_none() {
            match energy(view.params) {
                Ok(e) => trajectory.push((view.epoch, e)),
                Err(e) => energy_error = Some(e),
            }
        }
    })?;
    if let Some(e) = energy_error {
        return Err(e);
    }
    Ok(HarmonicReport {
        initial: grid_summary(&init, config)?,
        trained: grid_summary(&out.params, config)?,
        params: out.params,
        dirichlet_energy: trajectory,
        records: out.records,
    })
}
