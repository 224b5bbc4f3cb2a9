//! Scalar objectives and their exact gradients.
//!
//! With a scalar output and `ω ~ N(0, I_k)` acting on the leading `k` latent
//! coordinates, the small-`ε` limit of the consistency term reduces to
//!
//! ```text
//! lim ε⁻² E_ω |F(Φ(z + εω)) − F(Φ(z))|² = E_ω |gᵀ J ω|² = ‖Jₖᵀ g‖²
//! ```
//!
//! where `g = ∇_x F(Φ(z))` and `Jₖ` holds the first `k` columns of the
//! Jacobian of `Φ` at `z`: the covariance of `Jω` is `Jₖ Jₖᵀ`, so the trace
//! of covariance against `g gᵀ` collapses to the squared norm above. The
//! gradient with respect to `θ` of `‖Tᵀ g‖²` is `2 ∇_θ ⟨u, g⟩` with
//! `u = T Tᵀ g` held fixed, which [`network::accumulate_input_jacobian_vjp`]
//! provides.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::manifold::{Augmenter, Manifold};
use crate::network::{self, NetworkGrads, NetworkParams};
use crate::numerics::linalg::{self, Matrix};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `log(1 + exp(−y f))`, labels ±1.
    Logistic,
    /// `½ (f − y)²`
    Squared,
}

impl LossKind {
    pub fn eval(self, f: f64, y: f64) -> (f64, f64) {
        match self {
            LossKind::Logistic => logistic_loss(f, y),
            LossKind::Squared => squared_loss(f, y),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logistic" => Ok(LossKind::Logistic),
            "squared" => Ok(LossKind::Squared),
            other => Err(format!("unknown loss {other:?} (logistic|squared)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Logistic => "logistic",
            LossKind::Squared => "squared",
        })
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Value and `d/df` of `log(1 + exp(−y f))`.
pub fn logistic_loss(f: f64, y: f64) -> (f64, f64) {
    let margin = -y * f;
    let value = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    (value, -y * sigmoid(margin))
}

pub fn squared_loss(f: f64, y: f64) -> (f64, f64) {
    let r = f - y;
    (0.5 * r * r, r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grads: NetworkGrads,
}

/// Mean loss over `(x, y)` pairs and its exact gradient.
pub fn supervised_batch<'a>(
    params: &NetworkParams,
    batch: impl IntoIterator<Item = (&'a [f64], f64)>,
    loss: LossKind,
) -> Result<LossValueGrad> {
    let mut grads = params.zero_grads();
    let mut value = 0.0;
    let mut count = 0usize;
    for (x, y) in batch {
        let f = network::forward(params, x)?;
        let (l, dl) = loss.eval(f, y);
        value += l;
        network::accumulate_backward(params, x, dl, &mut grads)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyBatch("supervised batch"));
    }
    let inv = 1.0 / count as f64;
    grads.scale(inv);
    Ok(LossValueGrad {
        value: value * inv,
        grads,
    })
}

/// One clean sample with its frozen target `f⋆` and one or more augmented
/// copies. The per-item consistency value is the mean over the copies.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyItem {
    pub target: f64,
    pub augmented: Vec<Vec<f64>>,
}

/// Where the consistency residual is measured: on the raw output, or on the
/// class probability `σ(F)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyOutput {
    #[default]
    Logit,
    Probability,
}

impl ConsistencyOutput {
    /// Transformed output and its derivative with respect to `f`.
    pub fn apply(self, f: f64) -> (f64, f64) {
        match self {
            ConsistencyOutput::Logit => (f, 1.0),
            ConsistencyOutput::Probability => {
                let p = if f >= 0.0 {
                    1.0 / (1.0 + (-f).exp())
                } else {
                    let e = f.exp();
                    e / (1.0 + e)
                };
                (p, p * (1.0 - p))
            }
        }
    }
}

impl std::fmt::Display for ConsistencyOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConsistencyOutput::Logit => "logit",
            ConsistencyOutput::Probability => "probability",
        })
    }
}

impl std::str::FromStr for ConsistencyOutput {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logit" => Ok(ConsistencyOutput::Logit),
            "probability" => Ok(ConsistencyOutput::Probability),
            other => Err(format!("unknown consistency output {other:?} (logit|probability)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyBatch {
    pub items: Vec<ConsistencyItem>,
    pub weight: f64,
    pub output: ConsistencyOutput,
}

/// `weight · mean_i mean_draws (g(F_θ(x̃)) − g(f⋆_i))²` with `g` the identity
/// or the sigmoid. The targets are plain numbers, so no gradient flows
/// through them.
pub fn consistency_batch_eval(params: &NetworkParams, batch: &ConsistencyBatch) -> Result<LossValueGrad> {
    if batch.items.is_empty() {
        return Err(Error::EmptyBatch("consistency batch"));
    }
    let mut grads = params.zero_grads();
    let mut value = 0.0;
    let per_item = batch.weight / batch.items.len() as f64;
    for item in &batch.items {
        if item.augmented.is_empty() {
            return Err(Error::EmptyBatch("augmented draws of a consistency item"));
        }
        let scale = per_item / item.augmented.len() as f64;
        let target = batch.output.apply(item.target).0;
        for xt in &item.augmented {
            let (g, dg) = batch.output.apply(network::forward(params, xt)?);
            let r = g - target;
            value += scale * r * r;
            network::accumulate_backward(params, xt, 2.0 * scale * r * dg, &mut grads)?;
        }
    }
    Ok(LossValueGrad { value, grads })
}

/// A sample as seen by the augmentation oracle: latent and ambient
/// coordinates. The network only reads `x`.
#[derive(Clone, Copy, Debug)]
pub struct LatentPoint<'a> {
    pub z: &'a [f64],
    pub x: &'a [f64],
}

/// Evaluates each target once with `target_params`, then draws
/// `draws_per_sample` augmented copies.
pub fn build_consistency_batch(
    target_params: &NetworkParams,
    points: &[LatentPoint<'_>],
    augmenter: &dyn Augmenter,
    rng: &mut Rng,
    draws_per_sample: usize,
    weight: f64,
) -> Result<ConsistencyBatch> {
    if draws_per_sample == 0 {
        return Err(Error::invalid("draws_per_sample must be >= 1"));
    }
    let items = points
        .iter()
        .map(|p| {
            let target = network::forward(target_params, p.x)?;
            let augmented = (0..draws_per_sample)
                .map(|_| augmenter.augment(p.z, p.x, rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(ConsistencyItem { target, augmented })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyBatch {
        items,
        weight,
        output: ConsistencyOutput::Logit,
    })
}

/// How the labelled and unlabelled halves of the consistency regularizer
/// are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    /// Each population averaged over its own size, then summed.
    #[default]
    Balanced,
    /// One average over the pooled labelled and unlabelled samples, estimated
    /// by weighting each batch mean with its population share.
    Pooled,
}

impl RegularizerKind {
    /// Weights of the labelled and unlabelled batch means.
    pub fn weights(self, n_labelled: usize, n_unlabelled: usize) -> (f64, f64) {
        match self {
            RegularizerKind::Balanced => (1.0, 1.0),
            RegularizerKind::Pooled => {
                let n = (n_labelled + n_unlabelled) as f64;
                (n_labelled as f64 / n, n_unlabelled as f64 / n)
            }
        }
    }
}

impl std::fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegularizerKind::Balanced => "balanced",
            RegularizerKind::Pooled => "pooled",
        })
    }
}

impl std::str::FromStr for RegularizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "balanced" => Ok(RegularizerKind::Balanced),
            "pooled" => Ok(RegularizerKind::Pooled),
            other => Err(format!("unknown regularizer {other:?} (balanced|pooled)")),
        }
    }
}

/// Balanced consistency regularizer: the labelled and unlabelled populations
/// are each averaged over their own size and then summed. Targets come from
/// `target_params` (the current parameters for the Π-model, the moving
/// average for the Mean Teacher). Draws for the labelled batch come first.
pub fn balanced_regularizer(
    params: &NetworkParams,
    target_params: &NetworkParams,
    labelled: &[LatentPoint<'_>],
    unlabelled: &[LatentPoint<'_>],
    augmenter: &dyn Augmenter,
    rng: &mut Rng,
    draws_per_sample: usize,
    output: ConsistencyOutput,
) -> Result<LossValueGrad> {
    weighted_regularizer(
        params,
        target_params,
        labelled,
        unlabelled,
        augmenter,
        rng,
        draws_per_sample,
        output,
        (1.0, 1.0),
    )
}

/// `w_L · mean_labelled + w_U · mean_unlabelled` of the consistency term.
#[allow(clippy::too_many_arguments)]
pub fn weighted_regularizer(
    params: &NetworkParams,
    target_params: &NetworkParams,
    labelled: &[LatentPoint<'_>],
    unlabelled: &[LatentPoint<'_>],
    augmenter: &dyn Augmenter,
    rng: &mut Rng,
    draws_per_sample: usize,
    output: ConsistencyOutput,
    (w_l, w_u): (f64, f64),
) -> Result<LossValueGrad> {
    if labelled.is_empty() {
        return Err(Error::EmptyBatch("labelled half of the consistency regularizer"));
    }
    if unlabelled.is_empty() {
        return Err(Error::EmptyBatch("unlabelled half of the consistency regularizer"));
    }
    let mut lab = build_consistency_batch(target_params, labelled, augmenter, rng, draws_per_sample, w_l)?;
    let mut unl = build_consistency_batch(target_params, unlabelled, augmenter, rng, draws_per_sample, w_u)?;
    lab.output = output;
    unl.output = output;
    let mut total = consistency_batch_eval(params, &lab)?;
    let other = consistency_batch_eval(params, &unl)?;
    total.value += other.value;
    total.grads.add_scaled(1.0, &other.grads)?;
    Ok(total)
}

fn tangent(map: &dyn Manifold, z: &[f64], k: usize) -> Result<Matrix> {
    let d = map.latent_dim();
    if k == 0 || k > d {
        return Err(Error::invalid(format!("augmentation dimension k = {k} outside [1, {d}]")));
    }
    Ok(map.jacobian(z)?.leading_columns(k))
}

/// `‖Tᵀ ∇_x F(x)‖²` and its gradient, for an `R^D × k` tangent matrix `T`.
fn tangent_penalty(params: &NetworkParams, x: &[f64], t: &Matrix) -> Result<LossValueGrad> {
    let g = network::input_jacobian(params, x)?;
    let v = t.matvec_t(&g)?;
    let u = t.matvec(&v)?;
    let mut grads = params.zero_grads();
    network::accumulate_input_jacobian_vjp(params, x, &u, 2.0, &mut grads)?;
    Ok(LossValueGrad {
        value: linalg::dot(&v, &v),
        grads,
    })
}

/// Exact small-`ε` limit of the consistency term at `x = Φ(z)` for an
/// augmentation that explores the first `k` latent directions.
pub fn jacobian_penalty_exact(params: &NetworkParams, map: &dyn Manifold, z: &[f64], k: usize) -> Result<f64> {
    Ok(jacobian_penalty_exact_grad(params, map, z, k)?.value)
}

pub fn jacobian_penalty_exact_grad(
    params: &NetworkParams,
    map: &dyn Manifold,
    z: &[f64],
    k: usize,
) -> Result<LossValueGrad> {
    let x = map.forward(z)?;
    tangent_penalty(params, &x, &tangent(map, z, k)?)
}

/// Draws `n` latent perturbations `ω[k]` (zeros past coordinate `k`).
pub fn latent_draws(rng: &mut Rng, d: usize, k: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("augmentation dimension k = {k} outside [1, {d}]")));
    }
    Ok((0..n)
        .map(|_| {
            let mut w = vec![0.0; d];
            for wi in w.iter_mut().take(k) {
                *wi = rng.gaussian();
            }
            w
        })
        .collect())
}

/// `ε⁻² · mean_ω |F(Φ(z + εω)) − F(Φ(z))|²` with fresh manifold draws.
pub fn jacobian_penalty_mc(
    params: &NetworkParams,
    map: &dyn Manifold,
    z: &[f64],
    k: usize,
    epsilon: f64,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let draws = latent_draws(rng, map.latent_dim(), k, n_samples)?;
    jacobian_penalty_mc_with_draws(params, map, z, epsilon, &draws)
}

/// Same estimator on caller-supplied draws (common random numbers across an
/// `ε` sweep).
pub fn jacobian_penalty_mc_with_draws(
    params: &NetworkParams,
    map: &dyn Manifold,
    z: &[f64],
    epsilon: f64,
    draws: &[Vec<f64>],
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    if draws.is_empty() {
        return Err(Error::invalid("need at least one draw"));
    }
    let base = network::forward(params, &map.forward(z)?)?;
    let mut acc = 0.0;
    for w in draws {
        check_dim("latent draw", z.len(), w.len())?;
        let shifted: Vec<f64> = z.iter().zip(w).map(|(a, b)| a + epsilon * b).collect();
        let r = network::forward(params, &map.forward(&shifted)?)? - base;
        acc += r * r;
    }
    Ok(acc / (draws.len() as f64 * epsilon * epsilon))
}

/// Gradient of the Monte-Carlo penalty for frozen draws. Unlike the
/// consistency term, both branches depend on `θ` here.
pub fn jacobian_penalty_mc_grad(
    params: &NetworkParams,
    map: &dyn Manifold,
    z: &[f64],
    epsilon: f64,
    draws: &[Vec<f64>],
) -> Result<LossValueGrad> {
    if !(epsilon > 0.0) || draws.is_empty() {
        return Err(Error::invalid("need epsilon > 0 and at least one draw"));
    }
    let x = map.forward(z)?;
    let base = network::forward(params, &x)?;
    let scale = 1.0 / (draws.len() as f64 * epsilon * epsilon);
    let mut grads = params.zero_grads();
    let mut value = 0.0;
    let mut base_upstream = 0.0;
    for w in draws {
        check_dim("latent draw", z.len(), w.len())?;
        let shifted: Vec<f64> = z.iter().zip(w).map(|(a, b)| a + epsilon * b).collect();
        let xt = map.forward(&shifted)?;
        let r = network::forward(params, &xt)? - base;
        value += scale * r * r;
        network::accumulate_backward(params, &xt, 2.0 * scale * r, &mut grads)?;
        base_upstream -= 2.0 * scale * r;
    }
    network::accumulate_backward(params, &x, base_upstream, &mut grads)?;
    Ok(LossValueGrad { value, grads })
}

/// `mean_ω (gᵀ J ω)²` on the same draws: the estimator's `ε → 0` limit for a
/// fixed sample, used to isolate the bias of [`jacobian_penalty_mc_with_draws`].
pub fn linearised_penalty_with_draws(
    params: &NetworkParams,
    map: &dyn Manifold,
    z: &[f64],
    draws: &[Vec<f64>],
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::invalid("need at least one draw"));
    }
    let g = network::input_jacobian(params, &map.forward(z)?)?;
    let jg = map.jacobian(z)?.matvec_t(&g)?;
    Ok(draws.iter().map(|w| linalg::dot(&jg, w).powi(2)).sum::<f64>() / draws.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientRoute {
    /// Chain rule through `Φ` and `F`.
    Exact,
    /// Central differences of `F ∘ Φ` in each latent coordinate.
    FiniteDifference,
}

/// Monte-Carlo Dirichlet energy `mean_z ‖∇_z (F ∘ Φ)(z)‖²`. `h` is only read
/// by the finite-difference route.
pub fn dirichlet_energy(
    params: &NetworkParams,
    map: &dyn Manifold,
    latents: &[Vec<f64>],
    h: f64,
    route: GradientRoute,
) -> Result<f64> {
    if latents.is_empty() {
        return Err(Error::invalid("dirichlet energy needs at least one latent sample"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid(format!("probe step must be > 0, got {h}")));
    }
    let mut acc = 0.0;
    for z in latents {
        let grad = match route {
            GradientRoute::Exact => {
                let g = network::input_jacobian(params, &map.forward(z)?)?;
                map.jacobian(z)?.matvec_t(&g)?
            }
            GradientRoute::FiniteDifference => {
                let mut probe = z.clone();
                let mut out = Vec::with_capacity(z.len());
                for i in 0..z.len() {
                    probe[i] = z[i] + h;
                    let plus = network::forward(params, &map.forward(&probe)?)?;
                    probe[i] = z[i] - h;
                    let minus = network::forward(params, &map.forward(&probe)?)?;
                    probe[i] = z[i];
                    out.push((plus - minus) / (2.0 * h));
                }
                out
            }
        };
        acc += linalg::dot(&grad, &grad);
    }
    Ok(acc / latents.len() as f64)
}

/// Exact Dirichlet energy and its parameter gradient.
pub fn dirichlet_energy_grad(params: &NetworkParams, map: &dyn Manifold, latents: &[Vec<f64>]) -> Result<LossValueGrad> {
    if latents.is_empty() {
        return Err(Error::invalid("dirichlet energy needs at least one latent sample"));
    }
    let mut total = LossValueGrad {
        value: 0.0,
        grads: params.zero_grads(),
    };
    let inv = 1.0 / latents.len() as f64;
    for z in latents {
        let term = jacobian_penalty_exact_grad(params, map, z, map.latent_dim())?;
        total.value += inv * term.value;
        total.grads.add_scaled(inv, &term.grads)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{make_manifold_map, Augmentation, AugmentMode, AugmentationSpec, IdentityMap};
    use crate::network::{init_network, NetworkParams};
    use crate::numerics::{finite_diff_grad, relative_error};

    /// `F(x) = wᵀx` realised with ELU units kept in their linear region:
    /// unit j carries `w_j` on input j, bias `B`, output weight 1, and
    /// `c₂ = −dim·B` cancels the offsets.
    fn linear_network(w: &[f64]) -> NetworkParams {
        let dim = w.len();
        let big = 1e3;
        let mut p = NetworkParams::zeros(dim, dim);
        for j in 0..dim {
            p.w1_mut()[j * dim + j] = w[j];
            p.c1_mut()[j] = big;
            p.w2_mut()[j] = 1.0;
        }
        *p.c2_mut() = -(dim as f64) * big;
        p
    }

    fn random_params(seed: u64, d_in: usize, width: usize) -> NetworkParams {
        let mut rng = Rng::new(seed, 0);
        let mut p = init_network(&mut rng, d_in, width).unwrap();
        for v in p.c1_mut() {
            *v = 0.5 * rng.gaussian();
        }
        *p.c2_mut() = rng.gaussian();
        p
    }

    fn fd_of(p: &NetworkParams, f: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
        finite_diff_grad(
            |theta| f(&NetworkParams::from_flat(p.shape(), theta.to_vec()).unwrap()),
            p.as_slice(),
            1e-5,
        )
        .unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn logistic_values() {
        assert!((logistic_loss(0.0, 1.0).0 - 0.6931472).abs() < 1e-7);
        assert!((logistic_loss(0.0, -1.0).0 - 0.6931472).abs() < 1e-7);
        assert!((logistic_loss(2.0, -1.0).0 - 2.1269280).abs() < 1e-7);
        let (v, d) = logistic_loss(50.0, 1.0);
        assert!(v < 1e-20 && v >= 0.0 && d.is_finite());
        let (v, d) = logistic_loss(-800.0, 1.0);
        assert!((v - 800.0).abs() < 1e-9 && (d + 1.0).abs() < 1e-12);
        let fd = (logistic_loss(0.3 + 1e-6, -1.0).0 - logistic_loss(0.3 - 1e-6, -1.0).0) / 2e-6;
        assert!((logistic_loss(0.3, -1.0).1 - fd).abs() < 1e-8);
    }

    #[test]
    fn squared_values() {
        assert_eq!(squared_loss(1.0, 1.0).0, 0.0);
        assert_eq!(squared_loss(0.0, 1.0).0, 0.5);
        assert_eq!(squared_loss(3.0, 1.0).1, 2.0);
    }

    #[test]
    fn supervised_cases() {
        let p = random_params(1, 4, 3);
        let xs: Vec<Vec<f64>> = (0..5).map(|i| Rng::new(i, 9).gaussian_vector(4).unwrap()).collect();
        let ys = [1.0, -1.0, 1.0, 1.0, -1.0];
        let batch = || xs.iter().map(|x| x.as_slice()).zip(ys.iter().copied());
        let out = supervised_batch(&p, batch(), LossKind::Logistic).unwrap();
        let fd = fd_of(&p, |q| supervised_batch(q, batch(), LossKind::Logistic).unwrap().value);
        assert!(relative_error(out.grads.as_slice(), &fd) < 1e-6);

        let doubled = supervised_batch(&p, batch().chain(batch()), LossKind::Logistic).unwrap();
        assert!((doubled.value - out.value).abs() < 1e-14);
        assert!(relative_error(doubled.grads.as_slice(), out.grads.as_slice()) < 1e-14);

        let f = network::forward(&p, &xs[0]).unwrap();
        let exact = supervised_batch(&p, [(xs[0].as_slice(), f)], LossKind::Squared).unwrap();
        assert_eq!(exact.value, 0.0);
        assert!(exact.grads.as_slice().iter().all(|&g| g == 0.0));

        assert!(supervised_batch(&p, std::iter::empty(), LossKind::Squared).is_err());
    }

    #[test]
    fn consistency_identity_and_constant_network() {
        let p = random_params(2, 3, 4);
        let x = vec![0.2, -0.4, 1.0];
        let f = network::forward(&p, &x).unwrap();
        let batch = ConsistencyBatch {
            items: vec![ConsistencyItem { target: f, augmented: vec![x.clone()] }],
            weight: 1.0,
            output: ConsistencyOutput::Logit,
        };
        let out = consistency_batch_eval(&p, &batch).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads.as_slice().iter().all(|&g| g == 0.0));

        let mut flat = p.clone();
        flat.w2_mut().iter_mut().for_each(|v| *v = 0.0);
        let target = network::forward(&flat, &x).unwrap();
        let batch = ConsistencyBatch {
            items: vec![ConsistencyItem { target, augmented: vec![vec![5.0, 5.0, 5.0]] }],
            weight: 1.0,
            output: ConsistencyOutput::Logit,
        };
        assert_eq!(consistency_batch_eval(&flat, &batch).unwrap().value, 0.0);
        assert!(consistency_batch_eval(&p, &ConsistencyBatch { items: vec![], weight: 1.0, output: ConsistencyOutput::Logit }).is_err());
    }

    #[test]
    fn probability_output_is_a_stable_sigmoid() {
        let (p, dp) = ConsistencyOutput::Probability.apply(0.0);
        assert_eq!((p, dp), (0.5, 0.25));
        let (p, dp) = ConsistencyOutput::Probability.apply(-800.0);
        assert!(p >= 0.0 && p < 1e-300 && dp.is_finite());
        let (p, _) = ConsistencyOutput::Probability.apply(800.0);
        assert_eq!(p, 1.0);
        assert_eq!(ConsistencyOutput::Logit.apply(3.5), (3.5, 1.0));
    }

    #[test]
    fn consistency_linear_region() {
        let w = [0.5, -1.0, 2.0];
        let p = linear_network(&w);
        let x = [0.1, 0.2, 0.3];
        let xt = [0.4, -0.2, 0.35];
        let target = network::forward(&p, &x).unwrap();
        let batch = ConsistencyBatch {
            items: vec![ConsistencyItem { target, augmented: vec![xt.to_vec()] }],
            weight: 1.0,
            output: ConsistencyOutput::Logit,
        };
        let expected: f64 = w.iter().zip(xt.iter().zip(&x)).map(|(wi, (a, b))| wi * (a - b)).sum::<f64>().powi(2);
        assert!((consistency_batch_eval(&p, &batch).unwrap().value - expected).abs() < 1e-9);
    }

    #[test]
    fn consistency_gradient_treats_targets_as_constants() {
        let p = random_params(3, 4, 3);
        let mut rng = Rng::new(4, 0);
        let items: Vec<ConsistencyItem> = (0..4)
            .map(|_| ConsistencyItem {
                target: rng.gaussian(),
                augmented: vec![rng.gaussian_vector(4).unwrap(), rng.gaussian_vector(4).unwrap()],
            })
            .collect();
        for output in [ConsistencyOutput::Logit, ConsistencyOutput::Probability] {
            let batch = ConsistencyBatch { items: items.clone(), weight: 0.7, output };
            let out = consistency_batch_eval(&p, &batch).unwrap();
            let fd = fd_of(&p, |q| consistency_batch_eval(q, &batch).unwrap().value);
            assert!(relative_error(out.grads.as_slice(), &fd) < 1e-6, "{output}");
        }
    }

    #[test]
    fn stop_gradient_network_targets_equal_constant_targets() {
        // Targets produced by a network and the same numbers typed in as
        // constants give identical gradients.
        let p = random_params(5, 3, 4);
        let map = IdentityMap { dim: 3 };
        let spec = AugmentationSpec { epsilon: 0.2, k: 3, mode: AugmentMode::Manifold };
        let aug = Augmentation::new(&map, spec);
        let xs: Vec<Vec<f64>> = (0..3).map(|i| Rng::new(i, 1).gaussian_vector(3).unwrap()).collect();
        let pts: Vec<LatentPoint> = xs.iter().map(|x| LatentPoint { z: x, x }).collect();
        let built = build_consistency_batch(&p, &pts, &aug, &mut Rng::new(7, 0), 2, 1.0).unwrap();
        let mut constants = built.clone();
        for (item, x) in constants.items.iter_mut().zip(&xs) {
            item.target = network::forward(&p, x).unwrap();
        }
        assert_eq!(
            consistency_batch_eval(&p, &built).unwrap(),
            consistency_batch_eval(&p, &constants).unwrap()
        );
    }

    #[test]
    fn balanced_regularizer_cases() {
        let mut rng = Rng::new(6, 0);
        let map = make_manifold_map(&mut rng, 4, 6, 5).unwrap();
        let p = random_params(7, 5, 4);
        let zs: Vec<Vec<f64>> = (0..6).map(|_| rng.gaussian_vector(4).unwrap()).collect();
        let xs: Vec<Vec<f64>> = zs.iter().map(|z| map.forward(z).unwrap()).collect();
        let pts: Vec<LatentPoint> = zs.iter().zip(&xs).map(|(z, x)| LatentPoint { z, x }).collect();
        let spec = AugmentationSpec { epsilon: 0.3, k: 4, mode: AugmentMode::Manifold };
        let aug = Augmentation::new(&map, spec);

        // Same draws for both halves: exactly twice the single-population value.
        let mut r1 = Rng::new(8, 0);
        let single = build_consistency_batch(&p, &pts, &aug, &mut r1, 1, 1.0).unwrap();
        let single = consistency_batch_eval(&p, &single).unwrap();
        let mut r2 = Rng::new(8, 0);
        let mut r2b = r2.clone();
        let half = build_consistency_batch(&p, &pts, &aug, &mut r2, 1, 1.0).unwrap();
        let other = build_consistency_batch(&p, &pts, &aug, &mut r2b, 1, 1.0).unwrap();
        let both = consistency_batch_eval(&p, &half).unwrap().value + consistency_batch_eval(&p, &other).unwrap().value;
        assert!((both - 2.0 * single.value).abs() < 1e-14);

        let zero = Augmentation::new(&map, AugmentationSpec { epsilon: 0.0, ..spec });
        let out = balanced_regularizer(&p, &p, &pts[..2], &pts[2..], &zero, &mut rng, 1, ConsistencyOutput::Logit).unwrap();
        assert_eq!(out.value, 0.0);

        assert!(balanced_regularizer(&p, &p, &[], &pts, &aug, &mut rng, 1, ConsistencyOutput::Logit).is_err());
        assert!(balanced_regularizer(&p, &p, &pts, &[], &aug, &mut rng, 1, ConsistencyOutput::Logit).is_err());
    }

    #[test]
    fn balanced_regularizer_is_permutation_invariant() {
        let mut rng = Rng::new(16, 0);
        let map = make_manifold_map(&mut rng, 3, 5, 4).unwrap();
        let p = random_params(17, 4, 3);
        let zs: Vec<Vec<f64>> = (0..7).map(|_| rng.gaussian_vector(3).unwrap()).collect();
        let xs: Vec<Vec<f64>> = zs.iter().map(|z| map.forward(z).unwrap()).collect();
        let pts: Vec<LatentPoint> = zs.iter().zip(&xs).map(|(z, x)| LatentPoint { z, x }).collect();
        let aug = Augmentation::new(&map, AugmentationSpec { epsilon: 0.0, k: 3, mode: AugmentMode::Manifold });
        // With ε = 0 the value is draw-independent; use ambient-free exact targets from a
        // different network so the terms are non-zero.
        let q = random_params(18, 4, 3);
        let a = balanced_regularizer(&p, &q, &pts[..3], &pts[3..], &aug, &mut rng, 1, ConsistencyOutput::Logit).unwrap();
        let mut lab = pts[..3].to_vec();
        lab.reverse();
        let mut unl = pts[3..].to_vec();
        unl.rotate_left(2);
        let b = balanced_regularizer(&p, &q, &lab, &unl, &aug, &mut rng, 1, ConsistencyOutput::Logit).unwrap();
        assert!((a.value - b.value).abs() < 1e-13);
        assert!(relative_error(a.grads.as_slice(), b.grads.as_slice()) < 1e-12);
    }

    #[test]
    fn exact_penalty_closed_forms() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let p = linear_network(&w);
        let map = IdentityMap { dim: 4 };
        let z = [0.3, 0.1, -0.2, 0.4];
        let full = jacobian_penalty_exact(&p, &map, &z, 4).unwrap();
        assert!((full - w.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-9);
        let partial = jacobian_penalty_exact(&p, &map, &z, 2).unwrap();
        assert!((partial - (0.25 + 1.0)).abs() < 1e-9);
        let mut flat = p.clone();
        flat.w2_mut().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(jacobian_penalty_exact(&flat, &map, &z, 4).unwrap(), 0.0);
        assert!(jacobian_penalty_exact(&p, &map, &z, 5).is_err());
    }

    #[test]
    fn mc_penalty_linear_case_is_unbiased() {
        // Linear F, Φ = id: ε⁻²(wᵀεω)² = (wᵀω)² for any ε.
        let w = [0.5, -1.0, 2.0];
        let p = linear_network(&w);
        let map = IdentityMap { dim: 3 };
        let draws = latent_draws(&mut Rng::new(3, 0), 3, 3, 2000).unwrap();
        let lin = linearised_penalty_with_draws(&p, &map, &[0.0; 3], &draws).unwrap();
        for eps in [1e-3, 0.1, 1.0] {
            let mc = jacobian_penalty_mc_with_draws(&p, &map, &[0.0; 3], eps, &draws).unwrap();
            assert!((mc - lin).abs() < 1e-6 * lin, "eps {eps}: {mc} vs {lin}");
        }
        let exact = jacobian_penalty_exact(&p, &map, &[0.0; 3], 3).unwrap();
        assert!((lin - exact).abs() < 0.1 * exact);
    }

    #[test]
    fn mc_penalty_approaches_exact() {
        let mut rng = Rng::new(31, 0);
        let map = make_manifold_map(&mut rng, 4, 8, 6).unwrap();
        let p = random_params(32, 6, 5);
        let z = rng.gaussian_vector(4).unwrap();
        let exact = jacobian_penalty_exact(&p, &map, &z, 4).unwrap();
        let mc = jacobian_penalty_mc(&p, &map, &z, 4, 1e-3, 100_000, &mut rng).unwrap();
        assert!(((mc - exact) / exact).abs() < 0.02, "{mc} vs {exact}");

        let draws = latent_draws(&mut rng, 4, 4, 20_000).unwrap();
        let lin = linearised_penalty_with_draws(&p, &map, &z, &draws).unwrap();
        let bias: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&e| (jacobian_penalty_mc_with_draws(&p, &map, &z, e, &draws).unwrap() - lin).abs())
            .collect();
        assert!(bias[0] > bias[1] && bias[1] > bias[2], "{bias:?}");
    }

    #[test]
    fn penalty_gradients_match_finite_differences() {
        let mut rng = Rng::new(41, 0);
        let map = make_manifold_map(&mut rng, 3, 5, 6).unwrap();
        let p = random_params(42, 6, 4);
        let z = rng.gaussian_vector(3).unwrap();

        let ex = jacobian_penalty_exact_grad(&p, &map, &z, 2).unwrap();
        let fd = fd_of(&p, |q| jacobian_penalty_exact(q, &map, &z, 2).unwrap());
        assert!(relative_error(ex.grads.as_slice(), &fd) < 1e-6);

        let draws = latent_draws(&mut rng, 3, 3, 8).unwrap();
        let mc = jacobian_penalty_mc_grad(&p, &map, &z, 0.1, &draws).unwrap();
        let fd = fd_of(&p, |q| jacobian_penalty_mc_with_draws(q, &map, &z, 0.1, &draws).unwrap());
        assert!(relative_error(mc.grads.as_slice(), &fd) < 1e-6);

        let latents: Vec<Vec<f64>> = (0..5).map(|_| rng.gaussian_vector(3).unwrap()).collect();
        let de = dirichlet_energy_grad(&p, &map, &latents).unwrap();
        let fd = fd_of(&p, |q| dirichlet_energy(q, &map, &latents, 1e-4, GradientRoute::Exact).unwrap());
        assert!(relative_error(de.grads.as_slice(), &fd) < 1e-6);
    }

    #[test]
    fn dirichlet_energy_cases() {
        let map = IdentityMap { dim: 3 };
        let latents: Vec<Vec<f64>> = (0..4).map(|i| Rng::new(i, 2).gaussian_vector(3).unwrap()).collect();
        let flat = NetworkParams::zeros(3, 2);
        assert_eq!(dirichlet_energy(&flat, &map, &latents, 1e-4, GradientRoute::Exact).unwrap(), 0.0);

        let w = [1.0, 2.0, -0.5];
        let p = linear_network(&w);
        let e = dirichlet_energy(&p, &map, &latents, 1e-4, GradientRoute::Exact).unwrap();
        assert!((e - 5.25).abs() < 1e-9);

        let mut rng = Rng::new(51, 0);
        let hmm = make_manifold_map(&mut rng, 3, 6, 5).unwrap();
        let q = random_params(52, 5, 4);
        let exact = dirichlet_energy(&q, &hmm, &latents, 1e-5, GradientRoute::Exact).unwrap();
        let fd = dirichlet_energy(&q, &hmm, &latents, 1e-5, GradientRoute::FiniteDifference).unwrap();
        assert!(((exact - fd) / exact).abs() < 1e-6);
    }
}
