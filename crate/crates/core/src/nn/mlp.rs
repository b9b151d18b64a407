//! Fully connected classifier: `[Dense -> BatchNorm -> ReLU -> Dropout] x k -> Dense`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng::{rng_from, tag, EngineRng};
use crate::scalar::{lit, Scalar};

pub const DEFAULT_HIDDEN: [usize; 5] = [1024, 512, 256, 128, 128];
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine layer; `weight` is `fan_in x fan_out` so a batch maps as `x . W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    dims: Vec<usize>,
    /// `hidden + 1` affine layers, the last one producing logits.
    pub dense: Vec<Dense<T>>,
    /// One per hidden layer.
    pub norms: Vec<BatchNorm<T>>,
    dropout: f64,
    penultimate: usize,
}

/// Gradients laid out like the model parameters.
#[derive(Clone, Debug)]
pub struct MlpGrads<T> {
    pub dense: Vec<Dense<T>>,
    /// `(d gamma, d beta)` per hidden layer.
    pub norms: Vec<(Array1<T>, Array1<T>)>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.dense.len() + 2 * self.norms.len());
        for d in &self.dense {
            out.push(d.weight.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
        }
        for (g, b) in &self.norms {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Intermediate values of a train-mode forward pass needed for backprop.
pub struct ForwardCache<T> {
    /// Input to each affine layer (`hidden + 1` entries).
    inputs: Vec<Array2<T>>,
    xhat: Vec<Array2<T>>,
    inv_std: Vec<Array1<T>>,
    /// Batch-norm outputs before ReLU.
    pre_relu: Vec<Array2<T>>,
    /// Scaled keep-masks, absent when dropout is off.
    dropout: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Mlp<T> {
    /// `layer_dims = [input, hidden.., classes]`, at least one hidden layer.
    pub fn new(layer_dims: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::invalid("an MLP needs at least one hidden layer"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid(format!("non-positive layer width in {layer_dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = rng_from(seed, &[tag::MODEL_INIT]);
        let n_layers = layer_dims.len() - 1;
        let dense = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
                // He-uniform for ReLU layers, Glorot-uniform for the logits.
                let bound = if l + 1 < n_layers {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_in, fan_out), || lit(dist.sample(&mut rng))),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        let norms = layer_dims[1..n_layers].iter().map(|&w| BatchNorm::new(w)).collect();
        Ok(Mlp {
            dims: layer_dims.to_vec(),
            dense,
            norms,
            dropout: dropout_rate,
            penultimate: n_layers - 2,
        })
    }

    /// Rebuilds a model from explicit parameters (used by checkpoints and tests).
    pub fn from_parts(dense: Vec<Dense<T>>, norms: Vec<BatchNorm<T>>, dropout_rate: f64) -> Result<Self> {
        if dense.len() < 2 || norms.len() != dense.len() - 1 {
            return Err(Error::invalid("need k+1 affine layers and k batch-norm layers, k >= 1"));
        }
        let mut dims = vec![dense[0].weight.nrows()];
        for (l, d) in dense.iter().enumerate() {
            if d.weight.nrows() != *dims.last().unwrap() || d.bias.len() != d.weight.ncols() {
                return Err(Error::invalid(format!("layer {l} shape mismatch")));
            }
            dims.push(d.weight.ncols());
        }
        for (l, n) in norms.iter().enumerate() {
            let w = dims[l + 1];
            if [n.gamma.len(), n.beta.len(), n.running_mean.len(), n.running_var.len()] != [w; 4] {
                return Err(Error::invalid(format!("batch-norm {l} width mismatch")));
            }
        }
        let penultimate = dense.len() - 2;
        Ok(Mlp {
            dims,
            dense,
            norms,
            dropout: dropout_rate,
            penultimate,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_hidden(&self) -> usize {
        self.norms.len()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    /// Index of the hidden layer whose activations feed activation-space replay.
    pub fn penultimate_index(&self) -> usize {
        self.penultimate
    }

    pub fn penultimate_width(&self) -> usize {
        self.dims[self.penultimate + 1]
    }

    pub fn num_parameters(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass. Train mode normalises with batch statistics, samples
    /// dropout from `rng` and updates the running statistics.
    pub fn forward(&mut self, x: ArrayView2<T>, mode: Mode, rng: &mut EngineRng) -> Result<Array2<T>> {
        match mode {
            Mode::Eval => self.predict(x),
            Mode::Train => self.forward_train(x, rng).map(|(logits, _)| logits),
        }
    }

    /// Eval-mode logits: running statistics, no dropout.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let eps = lit::<T>(BN_EPS);
        let mut a = x.to_owned();
        for (l, dense) in self.dense.iter().enumerate() {
            let mut z = a.dot(&dense.weight) + &dense.bias;
            if let Some(bn) = self.norms.get(l) {
                let scale = Zip::from(&bn.gamma)
                    .and(&bn.running_var)
                    .map_collect(|&g, &v| g / (v + eps).sqrt());
                let shift = Zip::from(&bn.beta)
                    .and(&bn.running_mean)
                    .and(&scale)
                    .map_collect(|&b, &m, &s| b - m * s);
                z = z * &scale + &shift;
                z.mapv_inplace(relu);
            }
            a = z;
        }
        Ok(a)
    }

    /// Train-mode forward pass returning the cache for [`Mlp::backward`].
    pub fn forward_train(&mut self, x: ArrayView2<T>, rng: &mut EngineRng) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(&x)?;
        let rows = x.nrows();
        let n = T::from_usize(rows).unwrap();
        let eps = lit::<T>(BN_EPS);
        let momentum = lit::<T>(BN_MOMENTUM);
        let keep = 1.0 - self.dropout;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.dense.len()),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            pre_relu: Vec::new(),
            dropout: Vec::new(),
        };
        let mut a = x.to_owned();
        for l in 0..self.dense.len() {
            let dense = &self.dense[l];
            let z = a.dot(&dense.weight) + &dense.bias;
            cache.inputs.push(a);
            if l == self.norms.len() {
                return Ok((z, cache));
            }
            let mean = z.sum_axis(Axis(0)) / n;
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
            let xhat = &centered * &inv_std;
            let bn = &mut self.norms[l];
            let y = &xhat * &bn.gamma + &bn.beta;

            let unbias = if rows > 1 {
                n / (n - T::one())
            } else {
                T::one()
            };
            Zip::from(&mut bn.running_mean)
                .and(&mean)
                .for_each(|r, &m| *r = (T::one() - momentum) * *r + momentum * m);
            Zip::from(&mut bn.running_var)
                .and(&var)
                .for_each(|r, &v| *r = (T::one() - momentum) * *r + momentum * v * unbias);

            let mut h = y.mapv(relu);
            let mask = if self.dropout > 0.0 {
                let scale = lit::<T>(1.0 / keep);
                let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                });
                h = h * &m;
                Some(m)
            } else {
                None
            };
            cache.xhat.push(xhat);
            cache.inv_std.push(inv_std);
            cache.pre_relu.push(y);
            cache.dropout.push(mask);
            a = h;
        }
        unreachable!("the output layer returns from the loop")
    }

    /// Backpropagates `d_logits` through a cached train-mode pass.
    pub fn backward(&self, cache: &ForwardCache<T>, d_logits: Array2<T>) -> MlpGrads<T> {
        let rows = d_logits.nrows();
        let n = T::from_usize(rows).unwrap();
        let mut dense_grads = Vec::with_capacity(self.dense.len());
        let mut norm_grads = Vec::with_capacity(self.norms.len());
        let mut delta = d_logits;
        for l in (0..self.dense.len()).rev() {
            if l < self.norms.len() {
                // delta is d(output of hidden block l); walk back through dropout, ReLU, BN.
                if let Some(mask) = &cache.dropout[l] {
                    delta = delta * mask;
                }
                Zip::from(&mut delta)
                    .and(&cache.pre_relu[l])
                    .for_each(|d, &y| {
                        if y <= T::zero() {
                            *d = T::zero()
                        }
                    });
                let xhat = &cache.xhat[l];
                let d_gamma = (&delta * xhat).sum_axis(Axis(0));
                let d_beta = delta.sum_axis(Axis(0));
                let d_xhat = &delta * &self.norms[l].gamma;
                let sum_dx = d_xhat.sum_axis(Axis(0));
                let sum_dx_xhat = (&d_xhat * xhat).sum_axis(Axis(0));
                let mut dz = d_xhat * n - &sum_dx - &(xhat * &sum_dx_xhat);
                dz = dz * &(&cache.inv_std[l] / n);
                norm_grads.push((d_gamma, d_beta));
                delta = dz;
            }
            let input = &cache.inputs[l];
            let d_weight = input.t().dot(&delta);
            let d_bias = delta.sum_axis(Axis(0));
            let next = if l > 0 {
                Some(delta.dot(&self.dense[l].weight.t()))
            } else {
                None
            };
            dense_grads.push(Dense {
                weight: d_weight,
                bias: d_bias,
            });
            if let Some(next) = next {
                delta = next;
            }
        }
        dense_grads.reverse();
        norm_grads.reverse();
        MlpGrads {
            dense: dense_grads,
            norms: norm_grads,
        }
    }

    /// Post-ReLU activations of hidden layer `layer` with batch norm skipped
    /// entirely and no dropout. Depends only on parameters and the input rows.
    pub fn extract_activations(&self, x: ArrayView2<T>, layer: usize) -> Result<Array2<T>> {
        self.check_input(&x)?;
        if layer >= self.num_hidden() {
            return Err(Error::LayerOutOfRange {
                index: layer,
                hidden: self.num_hidden(),
            });
        }
        let mut a = x.to_owned();
        for dense in &self.dense[..=layer] {
            a = a.dot(&dense.weight) + &dense.bias;
            a.mapv_inplace(relu);
        }
        Ok(a)
    }

    /// Parameter slices in a fixed order: every affine `(W, b)` then every
    /// batch-norm `(gamma, beta)`. Matches [`MlpGrads::slices`].
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for d in &self.dense {
            out.push(d.weight.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
        }
        for n in &self.norms {
            out.push(n.gamma.as_slice().expect("standard layout"));
            out.push(n.beta.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for d in &mut self.dense {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        for n in &mut self.norms {
            out.push(n.gamma.as_slice_mut().expect("standard layout"));
            out.push(n.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[inline]
fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// `mlp_init` with the default hidden widths.
pub fn default_dims(input: usize, classes: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(DEFAULT_HIDDEN);
    dims.push(classes);
    dims
}

/// Draws from `rng` so callers can keep a dropout stream per step.
pub fn step_rng(seed: u64, epoch: usize, step: usize) -> EngineRng {
    rng_from(seed, &[tag::TRAIN, epoch as u64, step as u64])
}

/// Convenience wrapper for tests that need a throwaway generator.
pub fn scratch_rng(seed: u64) -> EngineRng {
    rng_from(seed, &[])
}
