use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{sample_target, FrozenWideStack, TargetLayer, TargetNetwork};
use crate::rng::{derive_seed, normal_vec, seeded_rng, WeightDist};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// Relative error allowed between backpropagated and finite-difference gradients.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine annealing from the base rate to zero over all epochs.
    Cosine,
    /// The base rate times `decay^epoch`.
    Exponential,
}

fn default_decay() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Rescale each minibatch gradient to at most this Euclidean norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            schedule: Schedule::Constant,
            decay: default_decay(),
            clip_norm: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "SGD needs a positive learning rate, batch size and epoch count".into(),
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            Schedule::Exponential => self.learning_rate * self.decay.powi(epoch as i32),
        }
    }
}

/// Labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    pub fn max_input_norm(&self) -> f64 {
        self.inputs
            .iter()
            .map(|x| crate::tensor::vector::norm2(x).to_f64_lossy())
            .fold(0.0, f64::max)
    }
}

/// Per-epoch mean training loss. `diverged` is set when a non-finite loss
/// stopped training; the parameters are then those from before the failing
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub epoch_losses: Vec<f64>,
    pub diverged: bool,
}

/// Mean squared error over samples and outputs.
pub fn mse<T: Real>(predict: impl Fn(&[T]) -> Result<Vec<T>>, data: &Dataset<T>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let out = predict(x)?;
        for (o, t) in out.iter().zip(y) {
            let e = (*o - *t).to_f64_lossy();
            sum += e * e;
        }
        count += y.len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// `out += Wᵀ v`.
fn add_transpose_matvec<T: Real>(w: &Matrix<T>, v: &[T], out: &mut [T]) {
    for (i, &vi) in v.iter().enumerate() {
        if vi == T::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o = *o + wij * vi;
        }
    }
}

fn check_batch<T: Real>(input_dim: usize, output_dim: usize, batch: &Dataset<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if batch.inputs.iter().any(|x| x.len() != input_dim) || batch.targets.iter().any(|y| y.len() != output_dim) {
        return Err(Error::shape("sgd", "sample dimensions differ from the network"));
    }
    Ok(())
}

/// Normalization parameters of `f` as one vector: for each layer, its scales
/// followed by its shifts.
pub fn bn_parameters<T: Real>(f: &FrozenWideStack<T>) -> Vec<T> {
    f.layers
        .iter()
        .flat_map(|l| l.norm.scale.iter().chain(&l.norm.shift).copied())
        .collect()
}

pub fn set_bn_parameters<T: Real>(f: &mut FrozenWideStack<T>, params: &[T]) -> Result<()> {
    if params.len() != f.trainable_parameters() {
        return Err(Error::shape("set_bn_parameters", "parameter count differs"));
    }
    let mut offset = 0;
    for layer in &mut f.layers {
        let w = layer.out_dim();
        layer.norm.scale.copy_from_slice(&params[offset..offset + w]);
        layer.norm.shift.copy_from_slice(&params[offset + w..offset + 2 * w]);
        offset += 2 * w;
    }
    Ok(())
}

/// Mean squared error of `f` on `batch` and its gradient with respect to
/// [`bn_parameters`], by backpropagation through the frozen stack.
pub fn bn_gradient<T: Real>(f: &FrozenWideStack<T>, batch: &Dataset<T>) -> Result<(f64, Vec<T>)> {
    check_batch(f.input_dim, f.output_dim(), batch)?;
    let offsets: Vec<usize> = f
        .layers
        .iter()
        .scan(0, |acc, l| {
            let at = *acc;
            *acc += 2 * l.out_dim();
            Some(at)
        })
        .collect();
    let mut grad = vec![T::zero(); f.trainable_parameters()];
    let norm = T::lit(1.0 / (batch.len() * f.output_dim()) as f64);
    let mut loss = 0.0;
    let last = f.layers.len() - 1;
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let mut normalized: Vec<Vec<T>> = Vec::with_capacity(f.layers.len());
        let mut pre: Vec<Vec<T>> = Vec::with_capacity(f.layers.len());
        let mut h = x.clone();
        for (li, layer) in f.layers.iter().enumerate() {
            let u = layer.weight.matvec(&h)?;
            let n: Vec<T> = (0..u.len())
                .map(|k| (u[k] - layer.norm.mean[k]) / layer.norm.variance[k])
                .collect();
            let z: Vec<T> = (0..u.len())
                .map(|k| layer.norm.scale[k] * n[k] + layer.norm.shift[k])
                .collect();
            h = if li == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(T::zero())).collect()
            };
            normalized.push(n);
            pre.push(z);
        }
        let mut dz: Vec<T> = h
            .iter()
            .zip(y)
            .map(|(&o, &t)| {
                let e = o - t;
                loss += e.to_f64_lossy().powi(2);
                T::lit(2.0) * e * norm
            })
            .collect();
        for li in (0..f.layers.len()).rev() {
            let layer = &f.layers[li];
            let w = layer.out_dim();
            let at = offsets[li];
            for k in 0..w {
                grad[at + k] = grad[at + k] + dz[k] * normalized[li][k];
                grad[at + w + k] = grad[at + w + k] + dz[k];
            }
            if li == 0 {
                break;
            }
            let du: Vec<T> = (0..w)
                .map(|k| dz[k] * layer.norm.scale[k] / layer.norm.variance[k])
                .collect();
            let mut dh = vec![T::zero(); layer.in_dim()];
            add_transpose_matvec(&layer.weight, &du, &mut dh);
            for (g, &z) in dh.iter_mut().zip(&pre[li - 1]) {
                if z <= T::zero() {
                    *g = T::zero();
                }
            }
            dz = dh;
        }
    }
    Ok((loss / (batch.len() * f.output_dim()) as f64, grad))
}

/// Trainable parameters of a dense network: for each layer, its weight
/// (row-major) followed by its shift. Scales are held fixed.
pub fn dense_parameters<T: Real>(g: &TargetNetwork<T>) -> Vec<T> {
    g.layers
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(&l.shift).copied())
        .collect()
}

fn dense_parameter_count<T: Real>(g: &TargetNetwork<T>) -> usize {
    g.layers.iter().map(|l| l.out_dim() * (l.in_dim() + 1)).sum()
}

pub fn set_dense_parameters<T: Real>(g: &mut TargetNetwork<T>, params: &[T]) -> Result<()> {
    if params.len() != dense_parameter_count(g) {
        return Err(Error::shape("set_dense_parameters", "parameter count differs"));
    }
    let mut offset = 0;
    for layer in &mut g.layers {
        let (rows, cols) = layer.weight.shape();
        layer.weight = Matrix::new(rows, cols, params[offset..offset + rows * cols].to_vec())?;
        offset += rows * cols;
        layer.shift.copy_from_slice(&params[offset..offset + rows]);
        offset += rows;
    }
    Ok(())
}

/// Mean squared error of `g` on `batch` and its gradient with respect to
/// [`dense_parameters`].
pub fn dense_gradient<T: Real>(g: &TargetNetwork<T>, batch: &Dataset<T>) -> Result<(f64, Vec<T>)> {
    check_batch(g.input_dim, g.output_dim(), batch)?;
    let offsets: Vec<usize> = g
        .layers
        .iter()
        .scan(0, |acc, l| {
            let at = *acc;
            *acc += l.out_dim() * (l.in_dim() + 1);
            Some(at)
        })
        .collect();
    let mut grad = vec![T::zero(); dense_parameter_count(g)];
    let norm = T::lit(1.0 / (batch.len() * g.output_dim()) as f64);
    let mut loss = 0.0;
    let last = g.layers.len() - 1;
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let mut inputs: Vec<Vec<T>> = Vec::with_capacity(g.layers.len());
        let mut pre: Vec<Vec<T>> = Vec::with_capacity(g.layers.len());
        let mut h = x.clone();
        for (li, layer) in g.layers.iter().enumerate() {
            let z = layer.apply(&h)?;
            inputs.push(h);
            h = if li == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(T::zero())).collect()
            };
            pre.push(z);
        }
        let mut dz: Vec<T> = h
            .iter()
            .zip(y)
            .map(|(&o, &t)| {
                let e = o - t;
                loss += e.to_f64_lossy().powi(2);
                T::lit(2.0) * e * norm
            })
            .collect();
        for li in (0..g.layers.len()).rev() {
            let layer = &g.layers[li];
            let (rows, cols) = layer.weight.shape();
            let at = offsets[li];
            let du: Vec<T> = (0..rows).map(|k| dz[k] * layer.scale[k]).collect();
            for k in 0..rows {
                let row = &mut grad[at + k * cols..at + (k + 1) * cols];
                for (gk, &hj) in row.iter_mut().zip(&inputs[li]) {
                    *gk = *gk + du[k] * hj;
                }
                grad[at + rows * cols + k] = grad[at + rows * cols + k] + dz[k];
            }
            if li == 0 {
                break;
            }
            let mut dh = vec![T::zero(); cols];
            add_transpose_matvec(&layer.weight, &du, &mut dh);
            for (gk, &z) in dh.iter_mut().zip(&pre[li - 1]) {
                if z <= T::zero() {
                    *gk = T::zero();
                }
            }
            dz = dh;
        }
    }
    Ok((loss / (batch.len() * g.output_dim()) as f64, grad))
}

/// Shared minibatch loop over a flat parameter vector.
fn train_loop<T: Real>(
    params: &mut Vec<T>,
    data: &Dataset<T>,
    cfg: &SgdConfig,
    seed: u64,
    mut step: impl FnMut(&[T], &Dataset<T>) -> Result<(f64, Vec<T>)>,
) -> Result<TrainCurve> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = TrainCurve {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        diverged: false,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let rate = T::lit(cfg.rate_at(epoch));
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let (loss, grad) = step(params, &batch)?;
            let rate = match cfg.clip_norm {
                Some(clip) => {
                    let norm = crate::tensor::vector::norm2(&grad).to_f64_lossy();
                    if norm > clip {
                        rate * T::lit(clip / norm)
                    } else {
                        rate
                    }
                }
                None => rate,
            };
            let next: Vec<T> = params.iter().zip(&grad).map(|(&p, &g)| p - rate * g).collect();
            if !loss.is_finite() || next.iter().any(|v| !v.is_finite()) {
                curve.diverged = true;
                curve.epoch_losses.push(f64::INFINITY);
                return Ok(curve);
            }
            *params = next;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        curve.epoch_losses.push(total / seen as f64);
    }
    Ok(curve)
}

/// Minibatch SGD on the normalization parameters of `f` only; frozen weights
/// and statistics are untouched.
pub fn sgd_train_bn<T: Real>(
    f: &mut FrozenWideStack<T>,
    data: &Dataset<T>,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<TrainCurve> {
    let mut params = bn_parameters(f);
    let mut scratch = f.clone();
    let curve = train_loop(&mut params, data, cfg, seed, |p, batch| {
        set_bn_parameters(&mut scratch, p)?;
        bn_gradient(&scratch, batch)
    })?;
    set_bn_parameters(f, &params)?;
    Ok(curve)
}

/// Minibatch SGD on every weight and shift of a dense network.
pub fn sgd_train_dense<T: Real>(
    g: &mut TargetNetwork<T>,
    data: &Dataset<T>,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<TrainCurve> {
    let mut params = dense_parameters(g);
    let mut scratch = g.clone();
    let curve = train_loop(&mut params, data, cfg, seed, |p, batch| {
        set_dense_parameters(&mut scratch, p)?;
        dense_gradient(&scratch, batch)
    })?;
    set_dense_parameters(g, &params)?;
    Ok(curve)
}

/// Outcome of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradientCheck {
    pub fn passes(&self) -> bool {
        self.max_rel_error <= GRADIENT_TOLERANCE
    }
}

/// Central difference of `loss` in coordinate `i`.
///
/// With one coordinate varying, the training losses are piecewise quadratic,
/// so a central difference is exact away from activation kinks. The step
/// starts large to keep cancellation small and is halved until the
/// differences at `h` and `h / 2` agree, i.e. until no kink lies within `h`.
fn central_difference(
    probe: &mut [f64],
    i: usize,
    loss_at: &mut impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let origin = probe[i];
    let mut diff = |h: f64, probe: &mut [f64]| -> Result<f64> {
        probe[i] = origin + h;
        let up = loss_at(probe)?;
        probe[i] = origin - h;
        let down = loss_at(probe)?;
        probe[i] = origin;
        Ok((up - down) / (2.0 * h))
    };
    let mut h = 1e-3 * origin.abs().max(1.0);
    let mut coarse = diff(h, probe)?;
    for _ in 0..12 {
        let fine = diff(h / 2.0, probe)?;
        if (fine - coarse).abs() <= 1e-7 * fine.abs().max(coarse.abs()).max(1e-8) {
            return Ok(fine);
        }
        coarse = fine;
        h /= 2.0;
    }
    Ok(coarse)
}

fn finite_difference_check(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    mut loss_at: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradientCheck> {
    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for &i in indices {
        let numeric = central_difference(&mut probe, i, &mut loss_at)?;
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(GradientCheck {
        checked: indices.len(),
        max_rel_error: worst,
    })
}

fn pick_indices(total: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..total).collect();
    all.shuffle(&mut seeded_rng(seed));
    all.truncate(count.min(total));
    all
}

/// Checks [`bn_gradient`] against central differences on `count` random parameters.
pub fn gradient_check_bn(
    f: &FrozenWideStack<f64>,
    batch: &Dataset<f64>,
    count: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let params = bn_parameters(f);
    let (_, grad) = bn_gradient(f, batch)?;
    let mut scratch = f.clone();
    finite_difference_check(&params, &grad, &pick_indices(params.len(), count, seed), |p| {
        set_bn_parameters(&mut scratch, p)?;
        mse(|x| scratch.forward(x), batch)
    })
}

/// Checks [`dense_gradient`] against central differences on `count` random parameters.
pub fn gradient_check_dense(
    g: &TargetNetwork<f64>,
    batch: &Dataset<f64>,
    count: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let params = dense_parameters(g);
    let (_, grad) = dense_gradient(g, batch)?;
    let mut scratch = g.clone();
    finite_difference_check(&params, &grad, &pick_indices(params.len(), count, seed), |p| {
        set_dense_parameters(&mut scratch, p)?;
        mse(|x| scratch.forward(x), batch)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub bn: GradientCheck,
    pub dense: GradientCheck,
}

/// Gradient checks for both trainers on small random networks with
/// non-trivial normalization parameters. Fails with
/// [`Error::GradientCheck`] when either exceeds [`GRADIENT_TOLERANCE`].
pub fn gradient_gate(params_checked: usize, seed: u64) -> Result<GateReport> {
    let d = 4;
    let mut rng = seeded_rng(derive_seed(seed, 0));
    let inputs: Vec<Vec<f64>> = (0..24).map(|_| normal_vec(&mut rng, d)).collect();
    let targets: Vec<Vec<f64>> = (0..24).map(|_| normal_vec(&mut rng, 2)).collect();
    let batch = Dataset { inputs, targets };

    let mut f = FrozenWideStack::sample(&[d, 12, 6, 2], WeightDist::Uniform, derive_seed(seed, 1))?;
    let mut prng = seeded_rng(derive_seed(seed, 2));
    let perturbed: Vec<f64> = bn_parameters(&f)
        .iter()
        .map(|&p| p + 0.5 * crate::rng::normal::<f64>(&mut prng))
        .collect();
    set_bn_parameters(&mut f, &perturbed)?;
    let bn = gradient_check_bn(&f, &batch, params_checked, derive_seed(seed, 3))?;

    let mut g: TargetNetwork<f64> = sample_target(d, 2, derive_seed(seed, 4))?;
    let head = Matrix::from_fn(2, d, |i, j| if (i + j) % 2 == 0 { 1.0 } else { -0.5 });
    g.layers.push(TargetLayer::affine(head, vec![0.1, -0.2])?);
    let dense = gradient_check_dense(&g, &batch, params_checked, derive_seed(seed, 5))?;

    for (trainer, check) in [("sgd_train_bn", &bn), ("sgd_train_dense", &dense)] {
        if !check.passes() {
            return Err(Error::GradientCheck {
                trainer,
                rel_error: check.max_rel_error,
            });
        }
    }
    Ok(GateReport { bn, dense })
}
