//! Dual-branch convolutional scoring network.
//!
//! Two CNNs read the same 90 s window: one with a short first filter (fine
//! temporal detail) and one with a long first filter (fine frequency
//! detail). Their flattened outputs are concatenated into a feature vector
//! that feeds a softmax layer over the five stages.
//!
//! Each branch is `conv → bn → relu → maxpool → dropout → 3 × (conv → bn →
//! relu) → maxpool`; a second dropout sits between the concatenated features
//! and the softmax layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, BatchNormCache, BatchNormState, BnMode, Padding, Param, ParamKind, ParamSet, PoolOutput, Real, Tensor,
    WindowGeometry,
};
use crate::stage::NUM_STAGES;

/// Seconds per scored epoch.
pub const EPOCH_SECONDS: usize = 30;
/// Epochs per input window (previous, center, next).
pub const WINDOW_EPOCHS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub first_conv: ConvSpec,
    pub first_pool: PoolSpec,
    pub convs: Vec<ConvSpec>,
    pub last_pool: PoolSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub sample_rate: usize,
    pub small: BranchConfig,
    pub large: BranchConfig,
    pub num_classes: usize,
    /// Drop probability at both dropout points.
    pub dropout: f64,
    /// Dropout after each branch's first max-pool.
    pub dropout_after_first_pool: bool,
    /// Dropout on the concatenated features before the softmax layer.
    pub dropout_before_softmax: bool,
    pub padding: Padding,
    pub bn_decay: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::for_sample_rate(100)
    }
}

impl ArchitectureConfig {
    /// Layer sizes scaled from the sampling rate `fs`: the small branch opens
    /// with a `fs/2` filter at stride `fs/16`, the large branch with a `4·fs`
    /// filter at stride `fs/2`.
    pub fn for_sample_rate(fs: usize) -> Self {
        let small = BranchConfig {
            first_conv: ConvSpec {
                kernel: fs / 2,
                filters: 64,
                stride: (fs / 16).max(1),
            },
            first_pool: PoolSpec { size: 8, stride: 8 },
            convs: vec![
                ConvSpec {
                    kernel: 8,
                    filters: 128,
                    stride: 1
                };
                3
            ],
            last_pool: PoolSpec { size: 4, stride: 4 },
        };
        let large = BranchConfig {
            first_conv: ConvSpec {
                kernel: fs * 4,
                filters: 64,
                stride: (fs / 2).max(1),
            },
            first_pool: PoolSpec { size: 4, stride: 4 },
            convs: vec![
                ConvSpec {
                    kernel: 6,
                    filters: 128,
                    stride: 1
                };
                3
            ],
            last_pool: PoolSpec { size: 2, stride: 2 },
        };
        Self {
            sample_rate: fs,
            small,
            large,
            num_classes: NUM_STAGES,
            dropout: 0.5,
            dropout_after_first_pool: true,
            dropout_before_softmax: true,
            padding: Padding::Same,
            bn_decay: nn::batchnorm::DEFAULT_DECAY,
            bn_epsilon: nn::batchnorm::DEFAULT_EPSILON,
        }
    }

    /// Same topology with every filter count divided by `divisor`.
    pub fn narrowed(mut self, divisor: usize) -> Self {
        let div = divisor.max(1);
        for branch in [&mut self.small, &mut self.large] {
            branch.first_conv.filters = (branch.first_conv.filters / div).max(1);
            for c in &mut branch.convs {
                c.filters = (c.filters / div).max(1);
            }
        }
        self
    }

    /// Samples per input window.
    pub fn input_len(&self) -> usize {
        self.sample_rate * EPOCH_SECONDS * WINDOW_EPOCHS
    }

    /// Walks both branches and returns the per-layer summary, failing if a
    /// layer would produce an empty output.
    pub fn layer_plan(&self) -> Result<Vec<LayerSummary>> {
        let mut rows = Vec::new();
        let mut branch_out = [0usize; 2];
        for (bi, (name, branch)) in [("small", &self.small), ("large", &self.large)].into_iter().enumerate() {
            let mut len = self.input_len();
            let mut ch = 1usize;
            let convs = core::iter::once(&branch.first_conv).chain(branch.convs.iter());
            for (ci, conv) in convs.enumerate() {
                let g = WindowGeometry::new(len, conv.kernel, conv.stride, self.padding)
                    .map_err(|e| Error::InvalidConfig(format!("{name}.conv{}: {e}", ci + 1)))?;
                len = g.out_len;
                let weights = conv.kernel * ch * conv.filters;
                ch = conv.filters;
                rows.push(LayerSummary {
                    name: format!("{name}.conv{} (k={}, s={})", ci + 1, conv.kernel, conv.stride),
                    output_shape: vec![len, ch],
                    params: weights + 2 * ch,
                });
                if ci == 0 {
                    let p = branch.first_pool;
                    let g = WindowGeometry::new(len, p.size, p.stride, self.padding)
                        .map_err(|e| Error::InvalidConfig(format!("{name}.pool1: {e}")))?;
                    len = g.out_len;
                    rows.push(LayerSummary {
                        name: format!("{name}.pool1 ({}, {})", p.size, p.stride),
                        output_shape: vec![len, ch],
                        params: 0,
                    });
                    if self.dropout_after_first_pool {
                        rows.push(LayerSummary {
                            name: format!("{name}.dropout (p={})", self.dropout),
                            output_shape: vec![len, ch],
                            params: 0,
                        });
                    }
                }
            }
            let p = branch.last_pool;
            let g = WindowGeometry::new(len, p.size, p.stride, self.padding)
                .map_err(|e| Error::InvalidConfig(format!("{name}.pool2: {e}")))?;
            len = g.out_len;
            rows.push(LayerSummary {
                name: format!("{name}.pool2 ({}, {})", p.size, p.stride),
                output_shape: vec![len, ch],
                params: 0,
            });
            branch_out[bi] = len * ch;
        }
        let features = branch_out[0] + branch_out[1];
        rows.push(LayerSummary {
            name: String::from("concat"),
            output_shape: vec![features],
            params: 0,
        });
        if self.dropout_before_softmax {
            rows.push(LayerSummary {
                name: format!("dropout (p={})", self.dropout),
                output_shape: vec![features],
                params: 0,
            });
        }
        rows.push(LayerSummary {
            name: String::from("softmax"),
            output_shape: vec![self.num_classes],
            params: features * self.num_classes + self.num_classes,
        });
        Ok(rows)
    }

    /// Trainable parameter count; a pure function of the configuration.
    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.layer_plan()?.iter().map(|r| r.params).sum())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "sample_rate {} / num_classes {}",
                self.sample_rate, self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {}", self.dropout)));
        }
        self.layer_plan().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics, dropout active, running statistics updated.
    Train,
    /// Running statistics, no dropout.
    Infer,
    /// Running statistics with dropout active (Monte Carlo sampling).
    Mc,
}

impl Mode {
    fn bn(self) -> BnMode {
        match self {
            Mode::Train => BnMode::Batch,
            Mode::Infer | Mode::Mc => BnMode::Running,
        }
    }

    fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::Mc)
    }
}

/// Intermediate values of one forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<F> {
    /// Small-branch features `[batch, |h_S|]`.
    pub h_small: Tensor<F>,
    /// Large-branch features `[batch, |h_L|]`.
    pub h_large: Tensor<F>,
    /// Concatenated features `[batch, |h_S| + |h_L|]` (before dropout).
    pub features: Tensor<F>,
    /// `[batch, K]`.
    pub logits: Tensor<F>,
    /// Row-wise softmax of `logits`.
    pub probs: Tensor<F>,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv { filters: usize, stride: usize },
    BatchNorm { gamma: usize, beta: usize, state: usize },
    Relu,
    Pool { size: usize, stride: usize },
    Dropout,
}

#[derive(Debug)]
enum Cache<F> {
    Conv { input: Tensor<F> },
    BatchNorm(BatchNormCache<F>),
    Relu { input: Tensor<F> },
    Pool(PoolOutput<F>),
    Dropout { mask: Vec<F> },
}

#[derive(Debug)]
struct BranchCache<F> {
    caches: Vec<Cache<F>>,
    out_shape: [usize; 3],
}

/// Per-layer values retained by a training forward pass.
#[derive(Debug)]
pub struct BackwardCache<F> {
    small: BranchCache<F>,
    large: BranchCache<F>,
    head_mask: Option<Vec<F>>,
    head_input: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct Model<F> {
    cfg: ArchitectureConfig,
    params: ParamSet<F>,
    bn_names: Vec<String>,
    bn_states: Vec<BatchNormState<F>>,
    small: Vec<Layer>,
    large: Vec<Layer>,
    head_weights: usize,
    head_bias: usize,
    small_features: usize,
    large_features: usize,
}

fn uniform_tensor<F: Real, R: RngCore + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64_lossy((rng.random::<f64>() * 2.0 - 1.0) * limit))
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}

impl<F: Real> Model<F> {
    /// Builds a freshly initialized network. Convolution filters use a
    /// fan-in scaled uniform `±sqrt(6 / fan_in)`, the softmax layer
    /// `±sqrt(3 / fan_in)`; biases and batch-norm shifts start at zero and
    /// scales at one.
    pub fn build<R: RngCore + ?Sized>(cfg: ArchitectureConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut bn_names = Vec::new();
        let mut bn_states = Vec::new();
        let mut branch_layers = |name: &str, branch: &BranchConfig, rng: &mut R| {
            let mut layers = Vec::new();
            let mut ch = 1usize;
            let convs = core::iter::once(&branch.first_conv).chain(branch.convs.iter());
            for (ci, conv) in convs.enumerate() {
                let prefix = format!("{name}.conv{}", ci + 1);
                let fan_in = (conv.kernel * ch) as f64;
                let w = uniform_tensor(
                    &[conv.kernel, ch, conv.filters],
                    num_traits::Float::sqrt(6.0 / fan_in),
                    rng,
                );
                let filters = params.push(Param::new(format!("{prefix}.filters"), ParamKind::Weight, w));
                let gamma = params.push(Param::new(
                    format!("{prefix}.bn.gamma"),
                    ParamKind::Scale,
                    Tensor::filled(&[conv.filters], F::one()),
                ));
                let beta = params.push(Param::new(
                    format!("{prefix}.bn.beta"),
                    ParamKind::Shift,
                    Tensor::zeros(&[conv.filters]),
                ));
                bn_names.push(format!("{prefix}.bn"));
                bn_states.push(BatchNormState::new(conv.filters, cfg.bn_decay, cfg.bn_epsilon));
                layers.push(Layer::Conv {
                    filters,
                    stride: conv.stride,
                });
                layers.push(Layer::BatchNorm {
                    gamma,
                    beta,
                    state: bn_states.len() - 1,
                });
                layers.push(Layer::Relu);
                ch = conv.filters;
                if ci == 0 {
                    layers.push(Layer::Pool {
                        size: branch.first_pool.size,
                        stride: branch.first_pool.stride,
                    });
                    if cfg.dropout_after_first_pool {
                        layers.push(Layer::Dropout);
                    }
                }
            }
            layers.push(Layer::Pool {
                size: branch.last_pool.size,
                stride: branch.last_pool.stride,
            });
            layers
        };
        let small = branch_layers("small", &cfg.small, rng);
        let large = branch_layers("large", &cfg.large, rng);
        let plan = cfg.layer_plan()?;
        let feature_of = |prefix: &str| {
            plan.iter()
                .rev()
                .find(|r| r.name.starts_with(prefix))
                .map(|r| r.output_shape.iter().product::<usize>())
                .unwrap_or(0)
        };
        let small_features = feature_of("small.pool2");
        let large_features = feature_of("large.pool2");
        let features = small_features + large_features;
        let w = uniform_tensor(
            &[features, cfg.num_classes],
            num_traits::Float::sqrt(3.0 / features as f64),
            rng,
        );
        let head_weights = params.push(Param::new("softmax.weights", ParamKind::Weight, w));
        let head_bias = params.push(Param::new(
            "softmax.bias",
            ParamKind::Bias,
            Tensor::zeros(&[cfg.num_classes]),
        ));
        Ok(Self {
            cfg,
            params,
            bn_names,
            bn_states,
            small,
            large,
            head_weights,
            head_bias,
            small_features,
            large_features,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// `(name, state)` for every batch-norm layer, in network order.
    pub fn batchnorm_states(&self) -> impl Iterator<Item = (&str, &BatchNormState<F>)> {
        self.bn_names.iter().map(String::as_str).zip(self.bn_states.iter())
    }

    pub fn batchnorm_state_mut(&mut self, name: &str) -> Option<&mut BatchNormState<F>> {
        let idx = self.bn_names.iter().position(|n| n == name)?;
        Some(&mut self.bn_states[idx])
    }

    /// Feature lengths `(|h_S|, |h_L|)`.
    pub fn feature_split(&self) -> (usize, usize) {
        (self.small_features, self.large_features)
    }

    pub fn summary(&self) -> Vec<LayerSummary> {
        self.cfg.layer_plan().expect("validated at build")
    }

    /// Copies parameter values and running statistics from `other`, which
    /// must share the architecture. Optimizer moments are left alone.
    pub fn load_state_from(&mut self, other: &Model<F>) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::InvalidConfig("architecture mismatch".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            dst.value = src.value.clone();
        }
        self.bn_states.clone_from(&other.bn_states);
        Ok(())
    }

    /// Packs windows of `input_len` samples into an input tensor.
    pub fn input_tensor<'a, I>(&self, windows: I) -> Result<Tensor<F>>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let len = self.cfg.input_len();
        let mut data = Vec::new();
        let mut b = 0;
        for w in windows {
            if w.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "window has {} samples, model expects {len}",
                    w.len()
                )));
            }
            data.extend(w.iter().map(|&v| F::from_f64_lossy(v as f64)));
            b += 1;
        }
        Tensor::new(&[b, len, 1], data)
    }

    /// Forward pass in inference or Monte Carlo mode; never mutates the model.
    /// `Mode::Train` is rejected here; use [`Model::forward_train`].
    pub fn forward<R: RngCore + ?Sized>(&self, input: &Tensor<F>, mode: Mode, rng: &mut R) -> Result<ForwardTrace<F>> {
        self.forward_with_rate(input, mode, self.cfg.dropout, rng)
    }

    /// Like [`Model::forward`] with an explicit drop probability for the
    /// dropout layers.
    pub fn forward_with_rate<R: RngCore + ?Sized>(
        &self,
        input: &Tensor<F>,
        mode: Mode,
        dropout: f64,
        rng: &mut R,
    ) -> Result<ForwardTrace<F>> {
        if mode == Mode::Train {
            return Err(Error::InvalidArgument(
                "training forward needs exclusive access; use forward_train".into(),
            ));
        }
        let (trace, _) = self.run(input, mode, dropout, rng, None, false)?;
        Ok(trace)
    }

    /// Training-mode forward: batch statistics, active dropout, running
    /// statistics updated. Returns the cache needed by [`Model::backward`].
    pub fn forward_train<R: RngCore + ?Sized>(
        &mut self,
        input: &Tensor<F>,
        rng: &mut R,
    ) -> Result<(ForwardTrace<F>, BackwardCache<F>)> {
        let mut states = core::mem::take(&mut self.bn_states);
        let res = self.run(input, Mode::Train, self.cfg.dropout, rng, Some(&mut states), true);
        self.bn_states = states;
        let (trace, cache) = res?;
        Ok((trace, cache.expect("cache requested")))
    }

    fn run<R: RngCore + ?Sized>(
        &self,
        input: &Tensor<F>,
        mode: Mode,
        dropout: f64,
        rng: &mut R,
        mut train_states: Option<&mut Vec<BatchNormState<F>>>,
        keep_cache: bool,
    ) -> Result<(ForwardTrace<F>, Option<BackwardCache<F>>)> {
        input.expect_rank(3, "model input")?;
        let (b, len, ch) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if len != self.cfg.input_len() || ch != 1 {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, model expects [batch, {}, 1]",
                input.shape(),
                self.cfg.input_len()
            )));
        }
        if b == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        let (hs, small_cache) = self.run_branch(
            &self.small,
            input,
            mode,
            dropout,
            rng,
            train_states.as_deref_mut(),
            keep_cache,
        )?;
        let (hl, large_cache) = self.run_branch(&self.large, input, mode, dropout, rng, train_states, keep_cache)?;
        let (ns, nl) = (self.small_features, self.large_features);
        let mut features = Vec::with_capacity(b * (ns + nl));
        for (s, l) in hs.data().chunks_exact(ns).zip(hl.data().chunks_exact(nl)) {
            features.extend_from_slice(s);
            features.extend_from_slice(l);
        }
        let features = Tensor::new(&[b, ns + nl], features)?;
        let (head_input, head_mask) = if self.cfg.dropout_before_softmax {
            let (x, mask) = nn::dropout(&features, dropout, mode.dropout_active(), rng)?;
            (x, Some(mask))
        } else {
            (features.clone(), None)
        };
        let logits = nn::dense(
            &head_input,
            &self.params.get(self.head_weights).value,
            &self.params.get(self.head_bias).value,
        )?;
        logits.check_finite("softmax layer")?;
        let k = self.cfg.num_classes;
        let mut probs = Vec::with_capacity(b * k);
        for row in logits.data().chunks_exact(k) {
            probs.extend(nn::softmax(row));
        }
        let probs = Tensor::new(&[b, k], probs)?;
        let trace = ForwardTrace {
            h_small: hs.reshape(&[b, ns])?,
            h_large: hl.reshape(&[b, nl])?,
            features,
            logits,
            probs,
        };
        let cache = keep_cache.then(|| BackwardCache {
            small: small_cache.expect("cache kept"),
            large: large_cache.expect("cache kept"),
            head_mask,
            head_input,
        });
        Ok((trace, cache))
    }

    #[allow(clippy::too_many_arguments)]
    fn run_branch<R: RngCore + ?Sized>(
        &self,
        layers: &[Layer],
        input: &Tensor<F>,
        mode: Mode,
        dropout: f64,
        rng: &mut R,
        mut train_states: Option<&mut Vec<BatchNormState<F>>>,
        keep_cache: bool,
    ) -> Result<(Tensor<F>, Option<BranchCache<F>>)> {
        let mut caches = Vec::new();
        let mut x = input.clone();
        for layer in layers {
            let (y, cache) = match *layer {
                Layer::Conv { filters, stride } => {
                    let y = nn::conv1d(&x, &self.params.get(filters).value, stride, self.cfg.padding)?;
                    (y, Cache::Conv { input: x })
                }
                Layer::BatchNorm { gamma, beta, state } => {
                    let (g, bt) = (&self.params.get(gamma).value, &self.params.get(beta).value);
                    let (y, c) = match (mode.bn(), train_states.as_deref_mut()) {
                        (BnMode::Batch, Some(states)) => nn::batchnorm(&x, g, bt, &mut states[state], BnMode::Batch)?,
                        (BnMode::Batch, None) => unreachable!("training forward always owns states"),
                        (BnMode::Running, _) => nn::batchnorm_running(&x, g, bt, &self.bn_states[state])?,
                    };
                    (y, Cache::BatchNorm(c))
                }
                Layer::Relu => (nn::relu(&x), Cache::Relu { input: x }),
                Layer::Pool { size, stride } => {
                    let p = nn::maxpool1d(&x, size, stride, self.cfg.padding)?;
                    (p.output.clone(), Cache::Pool(p))
                }
                Layer::Dropout => {
                    let (y, mask) = nn::dropout(&x, dropout, mode.dropout_active(), rng)?;
                    (y, Cache::Dropout { mask })
                }
            };
            if keep_cache {
                caches.push(cache);
            }
            x = y;
        }
        let s = x.shape();
        let out_shape = [s[0], s[1], s[2]];
        Ok((x, keep_cache.then_some(BranchCache { caches, out_shape })))
    }

    /// Accumulates parameter gradients from `grad_logits [batch, K]` into
    /// the gradient slots (which are overwritten, not summed across calls).
    pub fn backward(&mut self, grad_logits: &Tensor<F>, cache: &BackwardCache<F>) -> Result<()> {
        self.params.zero_grad();
        let (gx, gw, gb) = nn::dense_backward(
            grad_logits,
            &cache.head_input,
            &self.params.get(self.head_weights).value,
        )?;
        self.params.get_mut(self.head_weights).grad = gw;
        self.params.get_mut(self.head_bias).grad = gb;
        let g_features = match &cache.head_mask {
            Some(mask) => nn::dropout::dropout_backward(&gx, mask),
            None => gx,
        };
        let b = g_features.shape()[0];
        let (ns, nl) = (self.small_features, self.large_features);
        let mut gs = Vec::with_capacity(b * ns);
        let mut gl = Vec::with_capacity(b * nl);
        for row in g_features.data().chunks_exact(ns + nl) {
            gs.extend_from_slice(&row[..ns]);
            gl.extend_from_slice(&row[ns..]);
        }
        let gs = Tensor::new(&cache.small.out_shape, gs)?;
        let gl = Tensor::new(&cache.large.out_shape, gl)?;
        let small = core::mem::take(&mut self.small);
        let large = core::mem::take(&mut self.large);
        let r1 = self.backward_branch(&small, gs, &cache.small);
        let r2 = self.backward_branch(&large, gl, &cache.large);
        self.small = small;
        self.large = large;
        r1.and(r2)
    }

    fn backward_branch(&mut self, layers: &[Layer], grad: Tensor<F>, cache: &BranchCache<F>) -> Result<()> {
        let mut g = grad;
        for (i, (layer, c)) in layers.iter().zip(&cache.caches).enumerate().rev() {
            g = match (layer, c) {
                (Layer::Conv { filters, stride }, Cache::Conv { input }) => {
                    let w = &self.params.get(*filters).value;
                    if i == 0 {
                        let gw = nn::conv1d_filter_grad(&g, input, w, *stride, self.cfg.padding)?;
                        self.params.get_mut(*filters).grad = gw;
                        break;
                    }
                    let (gi, gw) = nn::conv1d_backward(&g, input, w, *stride, self.cfg.padding)?;
                    self.params.get_mut(*filters).grad = gw;
                    gi
                }
                (Layer::BatchNorm { gamma, beta, .. }, Cache::BatchNorm(bc)) => {
                    let (gi, gg, gbt) = nn::batchnorm_backward(&g, &self.params.get(*gamma).value, bc)?;
                    self.params.get_mut(*gamma).grad = gg;
                    self.params.get_mut(*beta).grad = gbt;
                    gi
                }
                (Layer::Relu, Cache::Relu { input }) => nn::relu_backward(&g, input),
                (Layer::Pool { .. }, Cache::Pool(p)) => nn::maxpool1d_backward(&g, p)?,
                (Layer::Dropout, Cache::Dropout { mask }) => nn::dropout::dropout_backward(&g, mask),
                _ => unreachable!("cache recorded in layer order"),
            };
        }
        Ok(())
    }
}
