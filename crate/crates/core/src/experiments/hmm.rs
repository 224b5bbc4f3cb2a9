use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manifold::{generate_dataset, make_manifold_map, Dataset, ManifoldMap, TaskSpec};
use crate::numerics::rng::streams;
use crate::numerics::Rng;

/// Dimensions and counts of a Hidden Manifold Model task.
///
/// The map `Φ` and the class means are drawn once from `task_seed`; each run
/// seed then draws its own labelled, unlabelled and test samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub ambient_dim: usize,
    pub separation: f64,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub n_test: usize,
    pub task_seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            hidden_dim: 30,
            ambient_dim: 100,
            separation: 5.0,
            n_labelled: 10,
            n_unlabelled: 1000,
            n_test: 2000,
            task_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HmmTask {
    pub config: HmmConfig,
    pub map: ManifoldMap,
    pub task: TaskSpec,
}

impl HmmConfig {
    pub fn build(&self) -> Result<HmmTask> {
        let mut rng = Rng::new(self.task_seed, streams::TASK);
        let map = make_manifold_map(&mut rng, self.latent_dim, self.hidden_dim, self.ambient_dim)?;
        let task = TaskSpec::random(
            &mut rng,
            self.latent_dim,
            self.separation,
            self.n_labelled,
            self.n_unlabelled,
            self.n_test,
        )?;
        Ok(HmmTask {
            config: self.clone(),
            map,
            task,
        })
    }
}

impl HmmTask {
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        generate_dataset(&mut Rng::new(seed, streams::DATASET), &self.map, &self.task)
    }
}
