//! The learner `F_θ(x) = c₂ + w₂ · elu(W₁ x + c₁)` with a scalar output.
//!
//! Parameters live in one flat vector laid out as
//! `[W₁ (row-major, N × D_in) | c₁ (N) | w₂ (N) | c₂]`, which keeps the
//! optimizer, the EMA, the ODE integrator and the finite-difference oracle
//! free of any knowledge about blocks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::manifold::{elu, elu_prime, elu_second};
use crate::numerics::linalg;
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub d_in: usize,
    pub width: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.width * self.d_in + 2 * self.width + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn c1_offset(&self) -> usize {
        self.width * self.d_in
    }

    fn w2_offset(&self) -> usize {
        self.c1_offset() + self.width
    }

    fn c2_offset(&self) -> usize {
        self.w2_offset() + self.width
    }

    /// Name of the block containing flat index `i`.
    pub fn block_name(&self, i: usize) -> &'static str {
        if i < self.c1_offset() {
            "W1"
        } else if i < self.w2_offset() {
            "c1"
        } else if i < self.c2_offset() {
            "w2"
        } else {
            "c2"
        }
    }
}

macro_rules! flat_blocks {
    ($t:ty) => {
        impl $t {
            pub fn shape(&self) -> Shape {
                self.shape
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn w1(&self) -> &[f64] {
                &self.data[..self.shape.c1_offset()]
            }

            pub fn w1_row(&self, j: usize) -> &[f64] {
                let d = self.shape.d_in;
                &self.data[j * d..(j + 1) * d]
            }

            pub fn c1(&self) -> &[f64] {
                &self.data[self.shape.c1_offset()..self.shape.w2_offset()]
            }

            pub fn w2(&self) -> &[f64] {
                &self.data[self.shape.w2_offset()..self.shape.c2_offset()]
            }

            pub fn c2(&self) -> f64 {
                self.data[self.shape.c2_offset()]
            }

            pub fn w1_mut(&mut self) -> &mut [f64] {
                let end = self.shape.c1_offset();
                &mut self.data[..end]
            }

            pub fn c1_mut(&mut self) -> &mut [f64] {
                let (a, b) = (self.shape.c1_offset(), self.shape.w2_offset());
                &mut self.data[a..b]
            }

            pub fn w2_mut(&mut self) -> &mut [f64] {
                let (a, b) = (self.shape.w2_offset(), self.shape.c2_offset());
                &mut self.data[a..b]
            }

            pub fn c2_mut(&mut self) -> &mut f64 {
                let i = self.shape.c2_offset();
                &mut self.data[i]
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    shape: Shape,
    data: Vec<f64>,
}

/// Gradient with the same layout as [`NetworkParams`]. Only produced by the
/// backward passes in this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads {
    shape: Shape,
    data: Vec<f64>,
}

flat_blocks!(NetworkParams);
flat_blocks!(NetworkGrads);

impl NetworkParams {
    pub fn zeros(d_in: usize, width: usize) -> Self {
        let shape = Shape { d_in, width };
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_flat(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_dim("network parameter vector", shape.len(), data.len())?;
        Ok(Self { shape, data })
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn zero_grads(&self) -> NetworkGrads {
        NetworkGrads {
            shape: self.shape,
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.data)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim("network input", self.shape.d_in, x.len())
    }

    fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.shape.width)
            .map(|j| linalg::dot(self.w1_row(j), x) + self.c1()[j])
            .collect()
    }
}

impl NetworkGrads {
    pub fn from_flat(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_dim("network gradient vector", shape.len(), data.len())?;
        Ok(Self { shape, data })
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// `self += a · other`
    pub fn add_scaled(&mut self, a: f64, other: &NetworkGrads) -> Result<()> {
        check_dim("gradient accumulation", self.data.len(), other.data.len())?;
        linalg::axpy(a, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }
}

/// `W₁` entries `N(0,1)/√D_in`, `w₂` entries `N(0,1)/√N`, zero biases.
pub fn init_network(rng: &mut Rng, d_in: usize, width: usize) -> Result<NetworkParams> {
    if d_in == 0 || width == 0 {
        return Err(Error::invalid("network dimensions must be >= 1"));
    }
    let mut params = NetworkParams::zeros(d_in, width);
    let s1 = 1.0 / (d_in as f64).sqrt();
    for w in params.w1_mut() {
        *w = rng.gaussian() * s1;
    }
    let s2 = 1.0 / (width as f64).sqrt();
    for w in params.w2_mut() {
        *w = rng.gaussian() * s2;
    }
    Ok(params)
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<f64> {
    params.check_input(x)?;
    let w2 = params.w2();
    Ok(params
        .preactivation(x)
        .into_iter()
        .zip(w2)
        .fold(params.c2(), |acc, (p, w)| acc + w * elu(p)))
}

/// Gradient of `upstream · F_θ(x)` with respect to every parameter.
pub fn backward(params: &NetworkParams, x: &[f64], upstream: f64) -> Result<NetworkGrads> {
    let mut grads = params.zero_grads();
    accumulate_backward(params, x, upstream, &mut grads)?;
    Ok(grads)
}

/// `grads += ∇_θ (upstream · F_θ(x))`, returning `F_θ(x)`.
pub fn accumulate_backward(
    params: &NetworkParams,
    x: &[f64],
    upstream: f64,
    grads: &mut NetworkGrads,
) -> Result<f64> {
    params.check_input(x)?;
    check_dim("gradient buffer", params.data.len(), grads.data.len())?;
    let shape = params.shape;
    let pre = params.preactivation(x);
    let w2 = params.w2().to_vec();
    let mut out = params.c2();
    for j in 0..shape.width {
        let a = elu(pre[j]);
        out += w2[j] * a;
        let back = upstream * w2[j] * elu_prime(pre[j]);
        grads.w2_mut()[j] += upstream * a;
        grads.c1_mut()[j] += back;
        let row = &mut grads.w1_mut()[j * shape.d_in..(j + 1) * shape.d_in];
        linalg::axpy(back, x, row);
    }
    *grads.c2_mut() += upstream;
    Ok(out)
}

/// `∇_x F_θ(x) = W₁ᵀ (w₂ ⊙ elu'(W₁ x + c₁))`.
pub fn input_jacobian(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let pre = params.preactivation(x);
    let mut g = vec![0.0; params.shape.d_in];
    for (j, p) in pre.iter().enumerate() {
        let coeff = params.w2()[j] * elu_prime(*p);
        linalg::axpy(coeff, params.w1_row(j), &mut g);
    }
    Ok(g)
}

/// Given a direction `u ∈ R^{D_in}`, accumulates
/// `scale · ∇_θ ⟨u, ∇_x F_θ(x)⟩` into `grads`. This is the only second-order
/// quantity the Jacobian penalties need.
pub fn accumulate_input_jacobian_vjp(
    params: &NetworkParams,
    x: &[f64],
    u: &[f64],
    scale: f64,
    grads: &mut NetworkGrads,
) -> Result<()> {
    params.check_input(x)?;
    check_dim("jacobian direction", params.shape.d_in, u.len())?;
    let d = params.shape.d_in;
    let pre = params.preactivation(x);
    for j in 0..params.shape.width {
        let r = linalg::dot(params.w1_row(j), u);
        let w2 = params.w2()[j];
        let s = elu_prime(pre[j]);
        let s2 = elu_second(pre[j]);
        grads.w2_mut()[j] += scale * s * r;
        grads.c1_mut()[j] += scale * w2 * s2 * r;
        let row = &mut grads.w1_mut()[j * d..(j + 1) * d];
        linalg::axpy(scale * w2 * s, u, row);
        linalg::axpy(scale * w2 * s2 * r, x, row);
    }
    Ok(())
}

pub const CHECKPOINT_FORMAT: &str = "manifold-ssl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    nonlinearity: String,
    layout: String,
    d_in: usize,
    width: usize,
    params: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        nonlinearity: "elu".to_string(),
        layout: "W1 row-major (width x d_in), c1, w2, c2".to_string(),
        d_in: params.shape.d_in,
        width: params.shape.width,
        params: params.data.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ck)? + "\n")?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<NetworkParams> {
    let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
        });
    }
    NetworkParams::from_flat(Shape { d_in: ck.d_in, width: ck.width }, ck.params)
}
