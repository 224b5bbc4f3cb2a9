//! The Hidden Manifold Model: a fixed random one-hidden-layer map
//! `Φ(z) = A¹² elu(A⁰¹ z + b¹)` from a `d`-dimensional latent space into
//! `R^D`, two Gaussian latent clusters, and augmentations that either stay on
//! the manifold (`Φ(z + εω)`) or jitter in ambient space (`x + εξ`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::linalg::{self, Matrix};
use crate::numerics::Rng;

#[inline]
pub fn elu(t: f64) -> f64 {
    if t >= 0.0 {
        t
    } else {
        t.exp_m1()
    }
}

#[inline]
pub fn elu_prime(t: f64) -> f64 {
    if t >= 0.0 {
        1.0
    } else {
        t.exp()
    }
}

#[inline]
pub fn elu_second(t: f64) -> f64 {
    if t >= 0.0 {
        0.0
    } else {
        t.exp()
    }
}

/// A smooth parametrisation of the data manifold.
pub trait Manifold: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;
    /// `D × d` Jacobian at `z`.
    fn jacobian(&self, z: &[f64]) -> Result<Matrix>;
}

/// `Φ(z) = A¹² elu(A⁰¹ z + b¹)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMap {
    pub a01: Matrix,
    pub a12: Matrix,
    pub b1: Vec<f64>,
}

impl ManifoldMap {
    /// Weights i.i.d. `N(0,1)` scaled by `1/√d` and `1/√H`; `b¹` i.i.d.
    /// `N(0,1)`.
    pub fn random(rng: &mut Rng, d: usize, hidden: usize, ambient: usize) -> Result<Self> {
        if d == 0 || hidden == 0 || ambient == 0 {
            return Err(Error::invalid("manifold dimensions must be >= 1"));
        }
        let s01 = 1.0 / (d as f64).sqrt();
        let s12 = 1.0 / (hidden as f64).sqrt();
        let a01 = Matrix::from_fn(hidden, d, |_, _| rng.gaussian() * s01);
        let a12 = Matrix::from_fn(ambient, hidden, |_, _| rng.gaussian() * s12);
        let b1 = rng.gaussian_vector(hidden)?;
        Ok(Self { a01, a12, b1 })
    }

    pub fn from_parts(a01: Matrix, a12: Matrix, b1: Vec<f64>) -> Result<Self> {
        check_dim("ManifoldMap hidden width (A12 cols)", a01.rows(), a12.cols())?;
        check_dim("ManifoldMap hidden width (b1)", a01.rows(), b1.len())?;
        Ok(Self { a01, a12, b1 })
    }

    pub fn hidden_dim(&self) -> usize {
        self.a01.rows()
    }

    fn preactivation(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("phi latent input", self.latent_dim(), z.len())?;
        let mut pre = self.a01.matvec(z)?;
        linalg::axpy(1.0, &self.b1, &mut pre);
        Ok(pre)
    }
}

pub fn make_manifold_map(rng: &mut Rng, d: usize, hidden: usize, ambient: usize) -> Result<ManifoldMap> {
    ManifoldMap::random(rng, d, hidden, ambient)
}

impl Manifold for ManifoldMap {
    fn latent_dim(&self) -> usize {
        self.a01.cols()
    }

    fn ambient_dim(&self) -> usize {
        self.a12.rows()
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let hidden: Vec<f64> = self.preactivation(z)?.into_iter().map(elu).collect();
        self.a12.matvec(&hidden)
    }

    fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        let slopes: Vec<f64> = self.preactivation(z)?.into_iter().map(elu_prime).collect();
        let mut inner = self.a01.clone();
        inner.scale_rows(&slopes);
        self.a12.matmul(&inner)
    }
}

/// `Φ = id` on `R^dim`, used by the unit-square experiment and by the
/// closed-form checks of the penalties.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityMap {
    pub dim: usize,
}

impl Manifold for IdentityMap {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn ambient_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("identity map input", self.dim, z.len())?;
        Ok(z.to_vec())
    }

    fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        check_dim("identity map input", self.dim, z.len())?;
        Ok(Matrix::identity(self.dim))
    }
}

/// Binary class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    Positive,
    Negative,
}

impl Class {
    pub fn sign(self) -> f64 {
        match self {
            Class::Positive => 1.0,
            Class::Negative => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub n_test: usize,
}

impl TaskSpec {
    /// Class means `±(separation/2)·u` for a uniformly random unit vector `u`.
    pub fn random(
        rng: &mut Rng,
        d: usize,
        separation: f64,
        n_labelled: usize,
        n_unlabelled: usize,
        n_test: usize,
    ) -> Result<Self> {
        if !(separation > 0.0) {
            return Err(Error::invalid(format!("class separation must be > 0, got {separation}")));
        }
        let u = rng.unit_vector(d)?;
        let half = 0.5 * separation;
        let task = Self {
            mu_plus: u.iter().map(|v| half * v).collect(),
            mu_minus: u.iter().map(|v| -half * v).collect(),
            n_labelled,
            n_unlabelled,
            n_test,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_plus.len()
    }

    pub fn separation(&self) -> f64 {
        linalg::distance(&self.mu_plus, &self.mu_minus)
    }

    pub fn mean(&self, class: Class) -> &[f64] {
        match class {
            Class::Positive => &self.mu_plus,
            Class::Negative => &self.mu_minus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("task class means", self.mu_plus.len(), self.mu_minus.len())?;
        if self.n_labelled == 0 || self.n_labelled % 2 != 0 {
            return Err(Error::invalid(format!(
                "n_labelled must be even and positive for a balanced task, got {}",
                self.n_labelled
            )));
        }
        if self.n_test % 2 != 0 {
            return Err(Error::invalid(format!("n_test must be even, got {}", self.n_test)));
        }
        if !(self.separation() > 0.0) {
            return Err(Error::invalid("class means must differ"));
        }
        Ok(())
    }
}

/// `z ~ N(μ_class, I_d)`.
pub fn sample_latent(rng: &mut Rng, class: Class, task: &TaskSpec) -> Vec<f64> {
    task.mean(class).iter().map(|m| m + rng.gaussian()).collect()
}

/// A point on the manifold with its latent coordinates. `y` is `±1` for the
/// classification task and a real target for regression presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledSample {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlabelledSample {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

/// Latent coordinates are retained so an augmentation oracle can act in
/// latent space; the learner only ever reads `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labelled: Vec<LabelledSample>,
    pub unlabelled: Vec<UnlabelledSample>,
    pub test: Vec<LabelledSample>,
}

impl Dataset {
    pub fn latent_dim(&self) -> usize {
        self.labelled.first().map_or(0, |s| s.z.len())
    }

    pub fn ambient_dim(&self) -> usize {
        self.labelled.first().map_or(0, |s| s.x.len())
    }
}

/// Labelled and test sets alternate `+,−,+,−,…` so both are exactly
/// balanced. Unlabelled points come from the same two-cluster mixture, also
/// balanced, with the class discarded.
pub fn generate_dataset(rng: &mut Rng, map: &dyn Manifold, task: &TaskSpec) -> Result<Dataset> {
    task.validate()?;
    check_dim("task latent dimension", map.latent_dim(), task.latent_dim())?;
    let class_of = |i: usize| if i % 2 == 0 { Class::Positive } else { Class::Negative };
    let labelled_set = |rng: &mut Rng, n: usize| -> Result<Vec<LabelledSample>> {
        (0..n)
            .map(|i| {
                let class = class_of(i);
                let z = sample_latent(rng, class, task);
                let x = map.forward(&z)?;
                Ok(LabelledSample { z, x, y: class.sign() })
            })
            .collect()
    };
    let labelled = labelled_set(rng, task.n_labelled)?;
    let unlabelled = (0..task.n_unlabelled)
        .map(|i| {
            let z = sample_latent(rng, class_of(i), task);
            let x = map.forward(&z)?;
            Ok(UnlabelledSample { z, x })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = labelled_set(rng, task.n_test)?;
    Ok(Dataset {
        labelled,
        unlabelled,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// `Φ(z + ε ω[k])`
    Manifold,
    /// `x + ε ξ`, `ξ ~ N(0, I_D)`
    Ambient,
}

impl std::str::FromStr for AugmentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "manifold" => Ok(AugmentMode::Manifold),
            "ambient" => Ok(AugmentMode::Ambient),
            other => Err(format!("unknown augmentation mode {other:?} (manifold|ambient)")),
        }
    }
}

impl std::fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugmentMode::Manifold => "manifold",
            AugmentMode::Ambient => "ambient",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub epsilon: f64,
    /// Number of leading latent coordinates explored (manifold mode).
    pub k: usize,
    pub mode: AugmentMode,
}

/// One augmented draw. In manifold mode the perturbation is
/// `ω[k] = (ξ₁,…,ξ_k,0,…,0)` and the result lies exactly on the manifold.
pub fn augment(
    map: &dyn Manifold,
    z: &[f64],
    x: &[f64],
    spec: &AugmentationSpec,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    match spec.mode {
        AugmentMode::Manifold => {
            let d = map.latent_dim();
            check_dim("augment latent input", d, z.len())?;
            if spec.k == 0 || spec.k > d {
                return Err(Error::invalid(format!(
                    "augmentation dimension k = {} outside [1, {d}]",
                    spec.k
                )));
            }
            let mut shifted = z.to_vec();
            for zi in shifted.iter_mut().take(spec.k) {
                *zi += spec.epsilon * rng.gaussian();
            }
            map.forward(&shifted)
        }
        AugmentMode::Ambient => {
            check_dim("augment ambient input", map.ambient_dim(), x.len())?;
            Ok(x.iter().map(|v| v + spec.epsilon * rng.gaussian()).collect())
        }
    }
}

/// Source of augmented inputs for the consistency term.
pub trait Augmenter: Sync {
    fn augment(&self, z: &[f64], x: &[f64], rng: &mut Rng) -> Result<Vec<f64>>;
}

/// [`augment`] bound to a manifold and a spec.
pub struct Augmentation<'a> {
    pub map: &'a dyn Manifold,
    pub spec: AugmentationSpec,
}

impl<'a> Augmentation<'a> {
    pub fn new(map: &'a dyn Manifold, spec: AugmentationSpec) -> Self {
        Self { map, spec }
    }
}

impl Augmenter for Augmentation<'_> {
    fn augment(&self, z: &[f64], x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        augment(self.map, z, x, &self.spec, rng)
    }
}

pub const DATASET_FORMAT: &str = "manifold-ssl-dataset";
pub const DATASET_VERSION: u32 = 1;

/// `header.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub hidden_dim: Option<usize>,
    pub task_seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub task: Option<TaskSpec>,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub n_test: usize,
}

impl DatasetHeader {
    pub fn for_dataset(data: &Dataset) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            latent_dim: data.latent_dim(),
            ambient_dim: data.ambient_dim(),
            hidden_dim: None,
            task_seed: None,
            data_seed: None,
            task: None,
            n_labelled: data.labelled.len(),
            n_unlabelled: data.unlabelled.len(),
            n_test: data.test.len(),
        }
    }
}

/// Writes `header.json` plus `labelled.csv`, `unlabelled.csv` and `test.csv`
/// into `dir`. CSV columns are `z0..z{d-1},x0..x{D-1}[,y]`; floats use the
/// shortest representation that round-trips exactly.
pub fn write_dataset(dir: &Path, header: &DatasetHeader, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("header.json"), serde_json::to_string_pretty(header)? + "\n")?;
    let (d, dd) = (header.latent_dim, header.ambient_dim);
    let column_names = |with_y: bool| {
        let mut cols: Vec<String> = (0..d).map(|i| format!("z{i}")).collect();
        cols.extend((0..dd).map(|i| format!("x{i}")));
        if with_y {
            cols.push("y".to_string());
        }
        cols.join(",")
    };
    let write_rows = |name: &str, rows: &mut dyn Iterator<Item = (&[f64], &[f64], Option<f64>)>, with_y: bool| -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
        writeln!(out, "{}", column_names(with_y))?;
        for (z, x, y) in rows {
            let mut fields: Vec<String> = z.iter().chain(x).map(|v| v.to_string()).collect();
            if let Some(y) = y {
                fields.push(y.to_string());
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    };
    write_rows(
        "labelled.csv",
        &mut data.labelled.iter().map(|s| (s.z.as_slice(), s.x.as_slice(), Some(s.y))),
        true,
    )?;
    write_rows(
        "unlabelled.csv",
        &mut data.unlabelled.iter().map(|s| (s.z.as_slice(), s.x.as_slice(), None)),
        false,
    )?;
    write_rows(
        "test.csv",
        &mut data.test.iter().map(|s| (s.z.as_slice(), s.x.as_slice(), Some(s.y))),
        true,
    )?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetHeader, Dataset)> {
    let header_path = dir.join("header.json");
    let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(&header_path)?)?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Format {
            path: header_path.display().to_string(),
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let (d, dd) = (header.latent_dim, header.ambient_dim);
    let read_rows = |name: &str, with_y: bool| -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path)?;
        let width = d + dd + usize::from(with_y);
        let bad = |line: usize, message: String| Error::Format {
            path: path.display().to_string(),
            message: format!("line {line}: {message}"),
        };
        text.lines()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let vals = line
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|e| bad(i + 1, e.to_string()))?;
                if vals.len() != width {
                    return Err(bad(i + 1, format!("expected {width} fields, got {}", vals.len())));
                }
                let y = if with_y { vals[d + dd] } else { 0.0 };
                Ok((vals[..d].to_vec(), vals[d..d + dd].to_vec(), y))
            })
            .collect()
    };
    let to_labelled = |rows: Vec<(Vec<f64>, Vec<f64>, f64)>| {
        rows.into_iter().map(|(z, x, y)| LabelledSample { z, x, y }).collect::<Vec<_>>()
    };
    let labelled = to_labelled(read_rows("labelled.csv", true)?);
    let unlabelled = read_rows("unlabelled.csv", false)?
        .into_iter()
        .map(|(z, x, _)| UnlabelledSample { z, x })
        .collect();
    let test = to_labelled(read_rows("test.csv", true)?);
    Ok((header, Dataset { labelled, unlabelled, test }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn scalar_map() -> ManifoldMap {
        ManifoldMap::from_parts(
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
        )
        .unwrap()
    }

    fn default_task(rng: &mut Rng) -> TaskSpec {
        TaskSpec::random(rng, 10, 3.0, 10, 1000, 2000).unwrap()
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) + 0.6321206).abs() < 1e-7);
        assert!((elu_prime(-1.0) - 0.3678794).abs() < 1e-7);
        assert_eq!(elu_prime(2.0), 1.0);
    }

    #[test]
    fn map_shapes_and_scaling() {
        let map = make_manifold_map(&mut Rng::new(5, 0), 10, 30, 100).unwrap();
        assert_eq!((map.a01.rows(), map.a01.cols()), (30, 10));
        assert_eq!((map.a12.rows(), map.a12.cols()), (100, 30));
        assert_eq!(map.b1.len(), 30);
        let v = map.a01.as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((var - 0.1).abs() < 0.03, "variance {var}");
        let again = make_manifold_map(&mut Rng::new(5, 0), 10, 30, 100).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn zero_map_is_zero() {
        let map = ManifoldMap::from_parts(Matrix::zeros(3, 2), Matrix::zeros(4, 3), vec![0.0; 3]).unwrap();
        assert_eq!(map.forward(&[1.5, -2.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn scalar_chain() {
        let map = scalar_map();
        assert!((map.forward(&[-1.0]).unwrap()[0] + 0.6321206).abs() < 1e-7);
        assert!((map.jacobian(&[-1.0]).unwrap()[(0, 0)] - 0.3678794).abs() < 1e-7);
        assert!(map.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn forward_matches_elementwise_oracle() {
        let map = make_manifold_map(&mut Rng::new(42, 0), 2, 3, 2).unwrap();
        let z = [0.3, -1.7];
        let mut oracle = [0.0; 2];
        for (o, out) in oracle.iter_mut().enumerate() {
            for h in 0..3 {
                let mut pre = map.b1[h];
                for j in 0..2 {
                    pre += map.a01[(h, j)] * z[j];
                }
                let act = if pre >= 0.0 { pre } else { pre.exp() - 1.0 };
                *out += map.a12[(o, h)] * act;
            }
        }
        let got = map.forward(&z).unwrap();
        for i in 0..2 {
            assert!((got[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_in_linear_region() {
        let mut map = make_manifold_map(&mut Rng::new(1, 0), 3, 4, 5).unwrap();
        map.b1 = vec![100.0; 4];
        let j = map.jacobian(&[0.1, 0.2, -0.3]).unwrap();
        assert_eq!(j, map.a12.matmul(&map.a01).unwrap());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let map = make_manifold_map(&mut Rng::new(11, 0), 4, 7, 6).unwrap();
        let z = Rng::new(12, 0).gaussian_vector(4).unwrap();
        let jac = map.jacobian(&z).unwrap();
        for row in 0..6 {
            let fd = finite_diff_grad(|zz| map.forward(zz).unwrap()[row], &z, 1e-6).unwrap();
            let exact: Vec<f64> = (0..4).map(|c| jac[(row, c)]).collect();
            let rel = crate::numerics::relative_error(&exact, &fd);
            assert!(rel < 1e-6, "row {row}: {rel}");
        }
    }

    #[test]
    fn latent_sampling_moments() {
        let mut rng = Rng::new(2, 0);
        let task = default_task(&mut rng);
        assert!((task.separation() - 3.0).abs() < 1e-12);
        let n = 100_000;
        let mut mean_p = vec![0.0; 10];
        let mut mean_m = vec![0.0; 10];
        for _ in 0..n {
            linalg::axpy(1.0 / n as f64, &sample_latent(&mut rng, Class::Positive, &task), &mut mean_p);
            linalg::axpy(1.0 / n as f64, &sample_latent(&mut rng, Class::Negative, &task), &mut mean_m);
        }
        assert!((linalg::distance(&mean_p, &mean_m) - 3.0).abs() < 0.05);
        for i in 0..10 {
            assert!((mean_p[i] - task.mu_plus[i]).abs() < 0.02);
        }
    }

    #[test]
    fn dataset_counts_balance_and_consistency() {
        let mut rng = Rng::new(3, 0);
        let map = make_manifold_map(&mut rng, 10, 30, 100).unwrap();
        let task = default_task(&mut rng);
        let data = generate_dataset(&mut rng, &map, &task).unwrap();
        assert_eq!(data.labelled.len(), 10);
        assert_eq!(data.labelled.iter().filter(|s| s.y > 0.0).count(), 5);
        assert_eq!(data.unlabelled.len(), 1000);
        assert_eq!(data.test.iter().filter(|s| s.y > 0.0).count(), 1000);
        for s in &data.labelled {
            assert_eq!(map.forward(&s.z).unwrap(), s.x);
        }
        for s in &data.unlabelled {
            assert_eq!(map.forward(&s.z).unwrap(), s.x);
        }
    }

    #[test]
    fn odd_labelled_count_rejected() {
        let mut rng = Rng::new(3, 0);
        let map = make_manifold_map(&mut rng, 10, 30, 100).unwrap();
        let mut task = default_task(&mut rng);
        task.n_labelled = 9;
        assert!(generate_dataset(&mut rng, &map, &task).is_err());
    }

    #[test]
    fn coordinates_are_order_one() {
        let mut rng = Rng::new(8, 0);
        let map = make_manifold_map(&mut rng, 10, 30, 100).unwrap();
        let n = 10_000;
        let mut sum = vec![0.0; 100];
        let mut sq = vec![0.0; 100];
        for _ in 0..n {
            let x = map.forward(&rng.gaussian_vector(10).unwrap()).unwrap();
            for i in 0..100 {
                sum[i] += x[i];
                sq[i] += x[i] * x[i];
            }
        }
        for i in 0..100 {
            let m = sum[i] / n as f64;
            let sd = (sq[i] / n as f64 - m * m).sqrt();
            assert!(sd > 0.1 && sd < 10.0, "coordinate {i}: sd {sd}");
        }
    }

    #[test]
    fn augmentation_identity_and_support() {
        let mut rng = Rng::new(4, 0);
        let map = make_manifold_map(&mut rng, 10, 30, 100).unwrap();
        let z = rng.gaussian_vector(10).unwrap();
        let x = map.forward(&z).unwrap();
        for mode in [AugmentMode::Manifold, AugmentMode::Ambient] {
            let spec = AugmentationSpec { epsilon: 0.0, k: 10, mode };
            assert_eq!(augment(&map, &z, &x, &spec, &mut rng).unwrap(), x);
        }
        // k = 3: only the leading three latent coordinates move.
        let spec = AugmentationSpec { epsilon: 0.5, k: 3, mode: AugmentMode::Manifold };
        let mut probe = rng.clone();
        let got = augment(&map, &z, &x, &spec, &mut rng).unwrap();
        let mut shifted = z.clone();
        for zi in shifted.iter_mut().take(3) {
            *zi += 0.5 * probe.gaussian();
        }
        assert_eq!(got, map.forward(&shifted).unwrap());
        assert!(shifted[3..] == z[3..]);
        let bad = AugmentationSpec { epsilon: 0.5, k: 11, mode: AugmentMode::Manifold };
        assert!(augment(&map, &z, &x, &bad, &mut rng).is_err());
        let bad = AugmentationSpec { epsilon: 0.5, k: 0, mode: AugmentMode::Manifold };
        assert!(augment(&map, &z, &x, &bad, &mut rng).is_err());
    }

    #[test]
    fn small_epsilon_linearisation_is_second_order() {
        let mut rng = Rng::new(21, 0);
        let map = make_manifold_map(&mut rng, 10, 30, 100).unwrap();
        let z = rng.gaussian_vector(10).unwrap();
        let omega = rng.gaussian_vector(10).unwrap();
        let x = map.forward(&z).unwrap();
        let jw = map.jacobian(&z).unwrap().matvec(&omega).unwrap();
        let residual = |eps: f64| {
            let zz: Vec<f64> = z.iter().zip(&omega).map(|(a, b)| a + eps * b).collect();
            let xe = map.forward(&zz).unwrap();
            let lin: Vec<f64> = x.iter().zip(&jw).map(|(a, b)| a + eps * b).collect();
            linalg::distance(&xe, &lin)
        };
        let eps = [1e-2, 1e-3, 1e-4];
        let r: Vec<f64> = eps.iter().map(|&e| residual(e)).collect();
        let slope = ((r[0] / r[2]).ln()) / ((eps[0] / eps[2]).ln());
        assert!((slope - 2.0).abs() < 0.1, "slope {slope} residuals {r:?}");
    }

    #[test]
    fn dataset_round_trip() {
        let mut rng = Rng::new(6, 0);
        let map = make_manifold_map(&mut rng, 3, 5, 4).unwrap();
        let task = TaskSpec::random(&mut rng, 3, 2.0, 4, 6, 4).unwrap();
        let data = generate_dataset(&mut rng, &map, &task).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let header = DatasetHeader::for_dataset(&data);
        write_dataset(dir.path(), &header, &data).unwrap();
        let (h2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(h2, header);
        assert_eq!(back, data);
    }
}
