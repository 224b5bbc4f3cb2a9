//! Optimization drivers: SGD with momentum, the supervised baseline, the
//! Π-model and the Mean Teacher, plus the deterministic full-batch gradient
//! flow used for the fluid-limit comparison.
//!
//! Random streams are split by purpose (see [`crate::numerics::rng::streams`]):
//! initialization, batch sampling and augmentation each draw from their own
//! stream, so a Π-model run with `λ = 0` or `ε = 0` replays the supervised
//! baseline exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::metrics::evaluate;
use crate::manifold::{AugmentMode, AugmentationSpec, Augmenter, Dataset};
use crate::network::{self, init_network, NetworkGrads, NetworkParams, Shape};
use crate::numerics::linalg;
use crate::numerics::rng::streams;
use crate::numerics::{rk4_trajectory, Rng};
use crate::objectives::{
    consistency_batch_eval, weighted_regularizer, supervised_batch, ConsistencyBatch, ConsistencyItem,
    ConsistencyOutput, LatentPoint, LossKind, LossValueGrad, RegularizerKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Supervised,
    PiModel,
    MeanTeacher,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::PiModel => "pi_model",
            Method::MeanTeacher => "mean_teacher",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "supervised" | "sup" => Ok(Method::Supervised),
            "pi" | "pi_model" => Ok(Method::PiModel),
            "mt" | "mean_teacher" => Ok(Method::MeanTeacher),
            other => Err(format!("unknown method {other:?} (supervised|pi|mt)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta_mt: f64,
    pub batch_labelled: usize,
    pub batch_unlabelled: usize,
    pub augmentation: AugmentationSpec,
    pub draws_per_sample: usize,
    pub width: usize,
    pub loss: LossKind,
    pub consistency_output: ConsistencyOutput,
    pub regularizer: RegularizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PiModel,
            epochs: 200,
            warmup_epochs: 25,
            lambda: 10.0,
            learning_rate: 0.01,
            momentum: 0.9,
            beta_mt: 0.99,
            batch_labelled: 10,
            batch_unlabelled: 100,
            augmentation: AugmentationSpec {
                epsilon: 0.3,
                k: 10,
                mode: AugmentMode::Manifold,
            },
            draws_per_sample: 1,
            width: 64,
            loss: LossKind::Logistic,
            consistency_output: ConsistencyOutput::Probability,
            regularizer: RegularizerKind::Balanced,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return fail(format!("warmup_epochs {} exceeds epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta_mt) {
            return fail(format!("beta_mt must lie in [0, 1), got {}", self.beta_mt));
        }
        if self.batch_labelled == 0 || self.batch_unlabelled == 0 {
            return fail("batch sizes must be >= 1".into());
        }
        if !(self.augmentation.epsilon >= 0.0) {
            return fail(format!("epsilon must be >= 0, got {}", self.augmentation.epsilon));
        }
        if self.augmentation.k == 0 {
            return fail("augmentation k must be >= 1".into());
        }
        if self.draws_per_sample == 0 || self.width == 0 {
            return fail("draws_per_sample and width must be >= 1".into());
        }
        Ok(())
    }
}

/// Heavy-ball momentum: `v ← βv + g`, `θ ← θ − ηv`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub velocity: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptState {
    pub fn new(params: &NetworkParams, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: vec![0.0; params.as_slice().len()],
            learning_rate,
            momentum,
        }
    }
}

pub fn sgd_momentum_step(opt: &mut OptState, params: &mut NetworkParams, grads: &NetworkGrads) -> Result<()> {
    let g = grads.as_slice();
    crate::error::check_dim("optimizer step", opt.velocity.len(), g.len())?;
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient block {} (flat index {i})",
            grads.shape().block_name(i)
        )));
    }
    let (lr, beta) = (opt.learning_rate, opt.momentum);
    for ((v, gi), p) in opt.velocity.iter_mut().zip(g).zip(params.as_mut_slice()) {
        *v = beta * *v + gi;
        *p -= lr * *v;
    }
    Ok(())
}

/// Exponential moving average of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub avg: NetworkParams,
    pub coeff: f64,
}

impl EmaState {
    pub fn new(params: &NetworkParams, coeff: f64) -> Self {
        Self {
            avg: params.clone(),
            coeff,
        }
    }
}

/// `avg ← β·avg + (1 − β)·θ`
pub fn ema_update(ema: &mut EmaState, params: &NetworkParams) -> Result<()> {
    crate::error::check_dim("ema update", ema.avg.as_slice().len(), params.as_slice().len())?;
    let b = ema.coeff;
    for (a, p) in ema.avg.as_mut_slice().iter_mut().zip(params.as_slice()) {
        *a = b * *a + (1.0 - b) * p;
    }
    Ok(())
}

/// `‖a − b‖ / ‖b‖`
pub fn relative_gap(a: &NetworkParams, b: &NetworkParams) -> f64 {
    linalg::distance(a.as_slice(), b.as_slice()) / b.norm().max(f64::MIN_POSITIVE)
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub epoch: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub k: usize,
    pub beta_mt: Option<f64>,
    pub train_loss: f64,
    pub test_nll: f64,
    pub test_acc: f64,
    pub consistency_value: f64,
}

pub const RECORD_HEADER: &str =
    "run_id,method,seed,epoch,lambda,epsilon,k,beta_mt,train_loss,test_nll,test_acc,consistency_value";

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.method,
            self.seed,
            self.epoch,
            self.lambda,
            self.epsilon,
            self.k,
            self.beta_mt.map(|b| b.to_string()).unwrap_or_default(),
            self.train_loss,
            self.test_nll,
            self.test_acc,
            self.consistency_value
        )
    }
}

pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub ema: Option<NetworkParams>,
    pub records: Vec<TrainRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &TrainRecord {
        self.records.last().expect("training always records at least one epoch")
    }
}

/// Per-step view handed to a training observer.
pub struct StepView<'a> {
    pub epoch: usize,
    pub step: usize,
    pub joint: bool,
    pub params: &'a NetworkParams,
    pub teacher: Option<&'a NetworkParams>,
}

fn labelled_points(data: &Dataset) -> Vec<LatentPoint<'_>> {
    data.labelled.iter().map(|s| LatentPoint { z: &s.z, x: &s.x }).collect()
}

fn unlabelled_points(data: &Dataset) -> Vec<LatentPoint<'_>> {
    data.unlabelled.iter().map(|s| LatentPoint { z: &s.z, x: &s.x }).collect()
}

fn full_labelled_loss(params: &NetworkParams, data: &Dataset, loss: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for s in &data.labelled {
        total += loss.eval(network::forward(params, &s.x)?, s.y).0;
    }
    Ok(total / data.labelled.len() as f64)
}

/// The shared training loop. `augmenter = None` runs the supervised baseline.
/// Epoch = one pass over the shuffled unlabelled set in batches of
/// `batch_unlabelled`; the labelled batch is resampled at every step.
pub fn train_observed(
    config: &TrainConfig,
    data: &Dataset,
    augmenter: Option<&dyn Augmenter>,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.labelled.is_empty() {
        return Err(Error::EmptyBatch("labelled set"));
    }
    if data.unlabelled.is_empty() {
        return Err(Error::EmptyBatch("unlabelled set"));
    }
    let method = if augmenter.is_none() { Method::Supervised } else { config.method };
    let regularized = method != Method::Supervised && config.lambda > 0.0;

    let mut params = init_network(&mut Rng::new(config.seed, streams::INIT), data.ambient_dim(), config.width)?;
    let mut opt = OptState::new(&params, config.learning_rate, config.momentum);
    let mut ema: Option<EmaState> = None;
    let mut batch_rng = Rng::new(config.seed, streams::BATCHES);
    let mut aug_rng = Rng::new(config.seed, streams::AUGMENT);

    let lab_points = labelled_points(data);
    let unl_points = unlabelled_points(data);
    let n_l = lab_points.len();
    let b_l = config.batch_labelled.min(n_l);
    let reg_weights = config.regularizer.weights(n_l, unl_points.len());
    let mut lab_idx: Vec<usize> = (0..n_l).collect();
    let mut unl_idx: Vec<usize> = (0..unl_points.len()).collect();

    let mut records = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let joint = epoch > config.warmup_epochs;
        if joint && method == Method::MeanTeacher && ema.is_none() {
            ema = Some(EmaState::new(&params, config.beta_mt));
        }
        batch_rng.shuffle(&mut unl_idx);
        let mut consistency_sum = 0.0;
        let mut consistency_steps = 0usize;
        for chunk in unl_idx.chunks(config.batch_unlabelled) {
            batch_rng.shuffle(&mut lab_idx);
            let lab_batch = &lab_idx[..b_l];
            let sup = supervised_batch(
                &params,
                lab_batch.iter().map(|&i| (data.labelled[i].x.as_slice(), data.labelled[i].y)),
                config.loss,
            )?;
            let mut grads = sup.grads;
            if joint && regularized {
                let augmenter = augmenter.expect("regularized runs carry an augmenter");
                let lab: Vec<LatentPoint> = lab_batch.iter().map(|&i| lab_points[i]).collect();
                let unl: Vec<LatentPoint> = chunk.iter().map(|&i| unl_points[i]).collect();
                let teacher = ema.as_ref().map_or(&params, |e| &e.avg);
                let reg = weighted_regularizer(
                    &params,
                    teacher,
                    &lab,
                    &unl,
                    augmenter,
                    &mut aug_rng,
                    config.draws_per_sample,
                    config.consistency_output,
                    reg_weights,
                )?;
                grads.add_scaled(config.lambda, &reg.grads)?;
                consistency_sum += reg.value;
                consistency_steps += 1;
            }
            sgd_momentum_step(&mut opt, &mut params, &grads)?;
            if let Some(e) = ema.as_mut() {
                ema_update(e, &params)?;
            }
            step += 1;
            observer(&StepView {
                epoch,
                step,
                joint,
                params: &params,
                teacher: ema.as_ref().map(|e| &e.avg),
            });
        }
        let metrics = evaluate(&params, &data.test, config.loss)?;
        records.push(TrainRecord {
            run_id: String::new(),
            method,
            seed: config.seed,
            epoch,
            lambda: if method == Method::Supervised { 0.0 } else { config.lambda },
            epsilon: config.augmentation.epsilon,
            k: config.augmentation.k,
            beta_mt: (method == Method::MeanTeacher).then_some(config.beta_mt),
            train_loss: full_labelled_loss(&params, data, config.loss)?,
            test_nll: metrics.test_nll,
            test_acc: metrics.test_acc,
            consistency_value: if consistency_steps > 0 {
                consistency_sum / consistency_steps as f64
            } else {
                0.0
            },
        });
    }
    Ok(TrainOutcome {
        params,
        ema: ema.map(|e| e.avg),
        records,
    })
}

/// Mini-batch SGD on the labelled loss only. `lambda` is ignored.
pub fn train_supervised(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    train_observed(config, data, None, &mut |_| {})
}

/// Warmup epochs on the labelled loss, then labelled loss plus `λ` times the
/// balanced consistency term with targets from the current parameters.
pub fn train_pi_model(config: &TrainConfig, data: &Dataset, augmenter: &dyn Augmenter) -> Result<TrainOutcome> {
    let config = TrainConfig {
        method: Method::PiModel,
        ..config.clone()
    };
    train_observed(&config, data, Some(augmenter), &mut |_| {})
}

/// As the Π-model, with targets from an EMA of the parameters that starts at
/// the end of warmup and is updated after every optimizer step.
pub fn train_mean_teacher(
    config: &TrainConfig,
    data: &Dataset,
    augmenter: &dyn Augmenter,
    beta_mt: f64,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        method: Method::MeanTeacher,
        beta_mt,
        ..config.clone()
    };
    train_observed(&config, data, Some(augmenter), &mut |_| {})
}

/// Dispatches on `config.method`.
pub fn train(config: &TrainConfig, data: &Dataset, augmenter: &dyn Augmenter) -> Result<TrainOutcome> {
    match config.method {
        Method::Supervised => train_supervised(config, data),
        Method::PiModel => train_pi_model(config, data, augmenter),
        Method::MeanTeacher => train_mean_teacher(config, data, augmenter, config.beta_mt),
    }
}

/// Full-batch objective `L_L(θ) + λ R̂(θ)` where `R̂` uses a fixed, finite set
/// of augmented copies per sample. Targets are the current outputs on the
/// clean inputs, held constant for differentiation.
#[derive(Clone, Debug)]
pub struct FrozenObjective {
    pub shape: Shape,
    pub lambda: f64,
    pub loss: LossKind,
    pub output: ConsistencyOutput,
    pub labelled: Vec<(Vec<f64>, f64)>,
    pub labelled_augmented: Vec<Vec<Vec<f64>>>,
    pub unlabelled: Vec<Vec<f64>>,
    pub unlabelled_augmented: Vec<Vec<Vec<f64>>>,
}

impl FrozenObjective {
    /// Draws `draws_per_sample` augmented copies of every sample once.
    pub fn freeze(
        data: &Dataset,
        augmenter: &dyn Augmenter,
        draws_per_sample: usize,
        rng: &mut Rng,
        lambda: f64,
        loss: LossKind,
        width: usize,
    ) -> Result<Self> {
        if draws_per_sample == 0 {
            return Err(Error::invalid("draws_per_sample must be >= 1"));
        }
        if data.labelled.is_empty() || data.unlabelled.is_empty() {
            return Err(Error::EmptyBatch("frozen objective needs labelled and unlabelled samples"));
        }
        let mut draw = |z: &[f64], x: &[f64]| -> Result<Vec<Vec<f64>>> {
            (0..draws_per_sample).map(|_| augmenter.augment(z, x, rng)).collect()
        };
        let labelled_augmented = data.labelled.iter().map(|s| draw(&s.z, &s.x)).collect::<Result<_>>()?;
        let unlabelled_augmented = data.unlabelled.iter().map(|s| draw(&s.z, &s.x)).collect::<Result<_>>()?;
        Ok(Self {
            shape: Shape {
                d_in: data.ambient_dim(),
                width,
            },
            lambda,
            loss,
            output: ConsistencyOutput::Logit,
            labelled: data.labelled.iter().map(|s| (s.x.clone(), s.y)).collect(),
            labelled_augmented,
            unlabelled: data.unlabelled.iter().map(|s| s.x.clone()).collect(),
            unlabelled_augmented,
        })
    }

    fn consistency(&self, params: &NetworkParams, clean: &[Vec<f64>], augmented: &[Vec<Vec<f64>>]) -> Result<LossValueGrad> {
        let items = clean
            .iter()
            .zip(augmented)
            .map(|(x, aug)| {
                Ok(ConsistencyItem {
                    target: network::forward(params, x)?,
                    augmented: aug.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        consistency_batch_eval(
            params,
            &ConsistencyBatch {
                items,
                weight: 1.0,
                output: self.output,
            },
        )
    }

    pub fn objective(&self, params: &NetworkParams) -> Result<LossValueGrad> {
        let mut total = supervised_batch(params, self.labelled.iter().map(|(x, y)| (x.as_slice(), *y)), self.loss)?;
        if self.lambda > 0.0 {
            let clean: Vec<Vec<f64>> = self.labelled.iter().map(|(x, _)| x.clone()).collect();
            for part in [
                self.consistency(params, &clean, &self.labelled_augmented)?,
                self.consistency(params, &self.unlabelled, &self.unlabelled_augmented)?,
            ] {
                total.value += self.lambda * part.value;
                total.grads.add_scaled(self.lambda, &part.grads)?;
            }
        }
        Ok(total)
    }

    /// `−∇(L_L + λR̂)` at a flat parameter vector.
    pub fn field(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let params = NetworkParams::from_flat(self.shape, theta.to_vec())?;
        let mut g = self.objective(&params)?.grads.into_flat();
        g.iter_mut().for_each(|v| *v = -*v);
        Ok(g)
    }
}

/// RK4 states of `θ' = −∇(L_L + λR̂)(θ)` at `t = 0, dt, …, horizon`.
pub fn gradient_flow_trajectory(
    problem: &FrozenObjective,
    theta0: &NetworkParams,
    dt: f64,
    horizon: f64,
) -> Result<Vec<(f64, NetworkParams)>> {
    rk4_trajectory(|t| problem.field(t), theta0.as_slice(), dt, horizon)?
        .into_iter()
        .map(|(t, v)| Ok((t, NetworkParams::from_flat(problem.shape, v)?)))
        .collect()
}

/// Plain full-batch SGD `θ_{k+1} = θ_k − η∇(L_L + λR̂)(θ_k)` for
/// `k = 0 … horizon/η`.
pub fn full_batch_sgd_path(
    problem: &FrozenObjective,
    theta0: &NetworkParams,
    eta: f64,
    horizon: f64,
) -> Result<Vec<NetworkParams>> {
    let steps = crate::numerics::ode::step_count(eta, horizon)?;
    let mut path = Vec::with_capacity(steps + 1);
    let mut theta = theta0.as_slice().to_vec();
    path.push(theta0.clone());
    for k in 1..=steps {
        let v = problem.field(&theta)?;
        linalg::axpy(eta, &v, &mut theta);
        if !linalg::all_finite(&theta) {
            return Err(Error::BlowUp { time: k as f64 * eta });
        }
        path.push(NetworkParams::from_flat(problem.shape, theta.clone())?);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{generate_dataset, make_manifold_map, Augmentation, ManifoldMap, TaskSpec};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn small_problem(seed: u64) -> (ManifoldMap, Dataset) {
        let mut rng = Rng::new(seed, streams::TASK);
        let map = make_manifold_map(&mut rng, 4, 8, 12).unwrap();
        let task = TaskSpec::random(&mut rng, 4, 3.0, 6, 40, 40).unwrap();
        let data = generate_dataset(&mut Rng::new(seed, streams::DATASET), &map, &task).unwrap();
        (map, data)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            warmup_epochs: 2,
            batch_labelled: 6,
            batch_unlabelled: 16,
            width: 8,
            augmentation: AugmentationSpec {
                epsilon: 0.3,
                k: 4,
                mode: AugmentMode::Manifold,
            },
            ..TrainConfig::default()
        }
    }

    fn trajectory(config: &TrainConfig, data: &Dataset, aug: Option<&dyn Augmenter>) -> Vec<Vec<f64>> {
        let mut steps = Vec::new();
        train_observed(config, data, aug, &mut |v| steps.push(v.params.as_slice().to_vec())).unwrap();
        steps
    }

    #[test]
    fn momentum_step_examples() {
        let mut p = NetworkParams::zeros(1, 1);
        let mut g = p.zero_grads();
        g.as_mut_slice().iter_mut().for_each(|v| *v = 2.0);
        let mut opt = OptState::new(&p, 1.0, 0.0);
        sgd_momentum_step(&mut opt, &mut p, &g).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == -2.0));

        let mut p = NetworkParams::zeros(1, 1);
        g.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        let mut opt = OptState::new(&p, 1.0, 0.9);
        sgd_momentum_step(&mut opt, &mut p, &g).unwrap();
        sgd_momentum_step(&mut opt, &mut p, &g).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v + 2.9).abs() < 1e-15));

        // Zero gradient: velocity decays geometrically and θ converges.
        let zero = p.zero_grads();
        let mut last = p.clone();
        for _ in 0..400 {
            last = p.clone();
            sgd_momentum_step(&mut opt, &mut p, &zero).unwrap();
        }
        assert!(linalg::distance(p.as_slice(), last.as_slice()) < 1e-15);
        // Limit: −2.9 − 1.9·0.9/(1 − 0.9) = −20
        assert!((p.as_slice()[0] + 20.0).abs() < 1e-12);
    }

    #[test]
    fn momentum_rejects_non_finite() {
        let mut p = NetworkParams::zeros(2, 2);
        let mut g = p.zero_grads();
        g.c2_mut().clone_from(&f64::NAN);
        let mut opt = OptState::new(&p, 0.1, 0.9);
        let err = sgd_momentum_step(&mut opt, &mut p, &g).unwrap_err();
        assert!(err.to_string().contains("c2"), "{err}");
    }

    #[test]
    fn ema_examples() {
        let mut ema = EmaState::new(&NetworkParams::zeros(1, 1), 0.9);
        let mut theta = NetworkParams::zeros(1, 1);
        theta.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        ema_update(&mut ema, &theta).unwrap();
        assert!(ema.avg.as_slice().iter().all(|&v| (v - 0.1).abs() < 1e-15));

        let mut ema = EmaState::new(&NetworkParams::zeros(1, 1), 0.995);
        for _ in 0..1000 {
            ema_update(&mut ema, &theta).unwrap();
        }
        let gap = 1.0 - ema.avg.as_slice()[0];
        assert!(gap <= 0.995f64.powi(1000) * (1.0 + 1e-9));
        assert!(gap >= 0.995f64.powi(1000) * (1.0 - 1e-9));
    }

    #[test]
    fn supervised_interpolates_labels() {
        let (_, data) = small_problem(1);
        let config = TrainConfig {
            epochs: 200,
            warmup_epochs: 0,
            ..small_config()
        };
        let out = train_supervised(&config, &data).unwrap();
        assert!(out.final_record().train_loss < 0.05, "{}", out.final_record().train_loss);
        // λ has no effect on the baseline.
        let other = train_supervised(&TrainConfig { lambda: 123.0, ..config.clone() }, &data).unwrap();
        assert_eq!(out.params, other.params);
        let again = train_supervised(&config, &data).unwrap();
        assert_eq!(out.records, again.records);
    }

    #[test]
    fn pi_model_reduces_to_supervised() {
        let (map, data) = small_problem(2);
        let config = small_config();
        let sup = trajectory(&config, &data, None);

        let aug = Augmentation::new(&map, config.augmentation);
        let lambda0 = trajectory(&TrainConfig { lambda: 0.0, ..config.clone() }, &data, Some(&aug));
        assert_eq!(sup, lambda0);

        let eps0 = Augmentation::new(&map, AugmentationSpec { epsilon: 0.0, ..config.augmentation });
        assert_eq!(sup, trajectory(&config, &data, Some(&eps0)));

        // Warmup steps match bit for bit; joint steps then diverge.
        let pi = trajectory(&config, &data, Some(&aug));
        let warm_steps = config.warmup_epochs * data.unlabelled.len().div_ceil(config.batch_unlabelled);
        assert_eq!(sup[..warm_steps], pi[..warm_steps]);
        assert_ne!(sup[warm_steps], pi[warm_steps]);
    }

    #[test]
    fn mean_teacher_with_zero_beta_is_pi_model() {
        let (map, data) = small_problem(3);
        let config = small_config();
        let aug = Augmentation::new(&map, config.augmentation);
        let pi = trajectory(&config, &data, Some(&aug));
        let mt = trajectory(
            &TrainConfig {
                method: Method::MeanTeacher,
                beta_mt: 0.0,
                ..config.clone()
            },
            &data,
            Some(&aug),
        );
        assert_eq!(pi, mt);
    }

    #[test]
    fn mean_teacher_starts_ema_after_warmup() {
        let (map, data) = small_problem(4);
        let config = TrainConfig {
            method: Method::MeanTeacher,
            beta_mt: 0.9,
            ..small_config()
        };
        let aug = Augmentation::new(&map, config.augmentation);
        let mut seen = Vec::new();
        train_observed(&config, &data, Some(&aug), &mut |v| seen.push((v.joint, v.teacher.is_some()))).unwrap();
        assert!(seen.iter().all(|&(joint, has_teacher)| joint == has_teacher));
    }

    struct Spy<'a> {
        inner: Augmentation<'a>,
        calls: AtomicUsize,
    }

    impl Augmenter for Spy<'_> {
        fn augment(&self, z: &[f64], x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.augment(z, x, rng)
        }
    }

    #[test]
    fn one_target_and_one_draw_per_sample_per_step() {
        let (map, data) = small_problem(5);
        let config = TrainConfig {
            draws_per_sample: 2,
            ..small_config()
        };
        let spy = Spy {
            inner: Augmentation::new(&map, config.augmentation),
            calls: AtomicUsize::new(0),
        };
        let mut per_step = Vec::new();
        let mut last = 0;
        train_observed(&config, &data, Some(&spy), &mut |v| {
            let now = spy.calls.load(Ordering::SeqCst);
            per_step.push((v.joint, now - last));
            last = now;
        })
        .unwrap();
        let n_u = data.unlabelled.len();
        let steps_per_epoch = n_u.div_ceil(config.batch_unlabelled);
        for (i, (joint, calls)) in per_step.iter().enumerate() {
            let b_u = if (i + 1) % steps_per_epoch == 0 && n_u % config.batch_unlabelled != 0 {
                n_u % config.batch_unlabelled
            } else {
                config.batch_unlabelled
            };
            let expected = if *joint { 2 * (config.batch_labelled + b_u) } else { 0 };
            assert_eq!(*calls, expected, "step {i}");
        }
    }

    #[test]
    fn records_csv_header_and_rows() {
        let (map, data) = small_problem(6);
        let config = TrainConfig { epochs: 2, warmup_epochs: 1, ..small_config() };
        let out = train_pi_model(&config, &data, &Augmentation::new(&map, config.augmentation)).unwrap();
        let csv = records_to_csv(&out.records);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RECORD_HEADER);
        assert_eq!(lines.count(), 2);
        assert_eq!(out.records[0].consistency_value, 0.0);
        assert!(out.records[1].consistency_value > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { warmup_epochs: 500, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..TrainConfig::default() }.validate().is_err());
    }

    fn frozen(seed: u64, lambda: f64) -> (FrozenObjective, NetworkParams) {
        let (map, data) = small_problem(seed);
        let aug = Augmentation::new(&map, small_config().augmentation);
        let problem =
            FrozenObjective::freeze(&data, &aug, 2, &mut Rng::new(seed, streams::FROZEN_DRAWS), lambda, LossKind::Logistic, 5)
                .unwrap();
        let theta0 = init_network(&mut Rng::new(seed, streams::INIT), data.ambient_dim(), 5).unwrap();
        (problem, theta0)
    }

    #[test]
    fn frozen_objective_gradient_is_stop_gradient_field() {
        // The field equals −(∇L + λ∇R̂) with targets frozen at the current θ:
        // check against finite differences of the objective with constant targets.
        let (problem, theta) = frozen(7, 2.0);
        let targets_at = |p: &NetworkParams| -> (Vec<f64>, Vec<f64>) {
            (
                problem.labelled.iter().map(|(x, _)| network::forward(p, x).unwrap()).collect(),
                problem.unlabelled.iter().map(|x| network::forward(p, x).unwrap()).collect(),
            )
        };
        let (tl, tu) = targets_at(&theta);
        let fixed_objective = |flat: &[f64]| {
            let q = NetworkParams::from_flat(problem.shape, flat.to_vec()).unwrap();
            let sup: f64 = problem
                .labelled
                .iter()
                .map(|(x, y)| LossKind::Logistic.eval(network::forward(&q, x).unwrap(), *y).0)
                .sum::<f64>()
                / problem.labelled.len() as f64;
            let part = |targets: &[f64], aug: &[Vec<Vec<f64>>]| {
                targets
                    .iter()
                    .zip(aug)
                    .map(|(t, draws)| {
                        draws.iter().map(|xt| (network::forward(&q, xt).unwrap() - t).powi(2)).sum::<f64>()
                            / draws.len() as f64
                    })
                    .sum::<f64>()
                    / targets.len() as f64
            };
            sup + 2.0 * (part(&tl, &problem.labelled_augmented) + part(&tu, &problem.unlabelled_augmented))
        };
        let fd = crate::numerics::finite_diff_grad(fixed_objective, theta.as_slice(), 1e-5).unwrap();
        let field = problem.field(theta.as_slice()).unwrap();
        let neg: Vec<f64> = field.iter().map(|v| -v).collect();
        assert!(crate::numerics::relative_error(&neg, &fd) < 1e-6);
    }

    #[test]
    fn gradient_flow_at_critical_point_is_constant() {
        // Zero network with zero targets and λ = 0 under squared loss on y = 0 labels.
        let (mut problem, _) = frozen(8, 0.0);
        problem.loss = LossKind::Squared;
        problem.labelled.iter_mut().for_each(|(_, y)| *y = 0.0);
        let theta0 = NetworkParams::zeros(problem.shape.d_in, problem.shape.width);
        let traj = gradient_flow_trajectory(&problem, &theta0, 0.05, 0.5).unwrap();
        assert!(traj.iter().all(|(_, p)| p == &theta0));
        let path = full_batch_sgd_path(&problem, &theta0, 0.05, 0.5).unwrap();
        assert!(path.iter().all(|p| p == &theta0));
    }

    #[test]
    fn full_batch_sgd_approaches_flow_as_eta_shrinks() {
        let (problem, theta0) = frozen(9, 1.0);
        let flow = gradient_flow_trajectory(&problem, &theta0, 0.01, 1.0).unwrap();
        let gap = |eta: f64| {
            let path = full_batch_sgd_path(&problem, &theta0, eta, 1.0).unwrap();
            let stride = (eta / 0.01).round() as usize;
            path.iter()
                .enumerate()
                .map(|(k, p)| linalg::distance(p.as_slice(), flow[k * stride].1.as_slice()))
                .fold(0.0, f64::max)
        };
        let (g1, g2) = (gap(0.04), gap(0.02));
        assert!(g2 < g1 && g1 / g2 > 1.3, "{g1} {g2}");
    }
}
