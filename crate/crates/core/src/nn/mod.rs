//! Hierarchical graph encoder and its training loops.
//!
//! Three GCN blocks (widths d, 2d, 3d) separated by Top-K pooling, with
//! centerline aggregation collecting node features onto N centerline points
//! at every level. The fused centerline features feed a 4-layer head that
//! predicts per-point flow and pressure for physics-guided pretraining, and
//! a mean-pooled embedding feeds a small classifier for fine-tuning.
//!
//! Everything runs in f64 on the CPU with hand-derived backward rules; each
//! rule is unit-checked against central finite differences.

mod checkpoint;
mod encoder;
mod ops;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoder::{
    backward, classify, forward, forward_traced, model_input_from_graph, ModelInput,
    Prediction, Trace,
};
pub use ops::{CaSelection, Linear, Propagation};
pub use train::{
    evaluate_loss, finetune, prepare_sample, pretrain, FinetuneRecord, FinetuneResult,
    OptimConfig, PretrainSample, TrainRecord,
};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::MMHG;

fn nn_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Nn(msg.into()))
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Base feature width; blocks widen to 2d and 3d.
    pub d: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub pool_ratio: f64,
    /// Neighbors gathered per centerline point.
    pub k_ca: usize,
    /// Output points along the centerline.
    pub n_centerline: usize,
    /// Scale applied to the raw pressure output (dyne/cm²) so fresh models
    /// predict physiological pressures.
    pub pressure_scale: f64,
    /// Use max pooling instead of mean pooling for the artery embedding.
    pub classifier_max_pool: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            blocks: 3,
            layers_per_block: 4,
            pool_ratio: 0.5,
            k_ca: 8,
            n_centerline: 500,
            pressure_scale: 100.0 * MMHG,
            classifier_max_pool: false,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Desk-scale variant for tests and examples.
    pub fn desk(d: usize, n_centerline: usize, seed: u64) -> Self {
        Self {
            d,
            n_centerline,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return nn_err("d must be >= 1");
        }
        if self.blocks < 1 {
            return nn_err("need at least one block");
        }
        if self.layers_per_block < 1 {
            return nn_err("need at least one layer per block");
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return nn_err("pool_ratio must be in (0, 1]");
        }
        if self.k_ca < 1 {
            return nn_err("k_ca must be >= 1");
        }
        if self.n_centerline < 3 {
            return nn_err("n_centerline must be >= 3");
        }
        if self.pressure_scale <= 0.0 {
            return nn_err("pressure_scale must be positive");
        }
        Ok(())
    }

    /// Node-feature width entering the first block.
    pub const IN_FEATURES: usize = 5;

    /// Output width of block `b` (0-based): `(b+1)·d`.
    pub fn block_width(&self, b: usize) -> usize {
        (b + 1) * self.d
    }

    /// Input width of layer `l` inside block `b`.
    pub fn layer_in_width(&self, b: usize, l: usize) -> usize {
        if l == 0 {
            if b == 0 {
                Self::IN_FEATURES
            } else {
                self.block_width(b - 1)
            }
        } else {
            self.block_width(b)
        }
    }

    /// Widths of the fused centerline feature and of the fusion MLP layers.
    pub fn fused_width(&self) -> usize {
        self.blocks * self.d
    }

    pub fn concat_width(&self) -> usize {
        (0..self.blocks).map(|b| self.block_width(b)).sum()
    }

    /// Layer widths of the prediction head, `fused → … → 2`.
    pub fn head_dims(&self) -> Vec<usize> {
        let top = self.fused_width();
        vec![
            top,
            (2 * top) / 3,
            top / 3,
            (top / 6).max(2),
            2,
        ]
    }

    /// Layer widths of the classifier, `fused → d → 1`.
    pub fn classifier_dims(&self) -> Vec<usize> {
        vec![self.fused_width(), self.d, 1]
    }
}

/// All learnable tensors of the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `blocks[b][l]` is GCN layer `l` of block `b`.
    pub blocks: Vec<Vec<Linear>>,
    /// Pooling projection vectors between consecutive blocks.
    pub pools: Vec<Array1<f64>>,
    /// Per-level centerline-aggregation mixing layers, `(D+3) → D`.
    pub ca_mix: Vec<Linear>,
    /// Fusion MLP over the concatenated level features.
    pub fusion: Vec<Linear>,
    /// Prediction head, final layer linear.
    pub head: Vec<Linear>,
    /// Classification head on the pooled embedding.
    pub classifier: Vec<Linear>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f64) -> Array2<f64> {
    let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl EncoderParams {
    /// Seeded Xavier-uniform initialization. Hidden biases start slightly
    /// positive so rectifier units are alive at depth (the propagated
    /// features are nonnegative after the first rectifier, and dead units
    /// cascade). The final head layer starts small with unit biases so
    /// fresh predictions sit near Q ≈ 1 cm³/s and P ≈ `pressure_scale`.
    pub fn init(cfg: &EncoderConfig) -> Result<Self> {
        const LIVE_BIAS: f64 = 0.1;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let mut layers = Vec::with_capacity(cfg.layers_per_block);
            for l in 0..cfg.layers_per_block {
                let (inw, outw) = (cfg.layer_in_width(b, l), cfg.block_width(b));
                layers.push(Linear {
                    w: xavier(&mut rng, inw, outw, 1.0),
                    b: Array1::from_elem(outw, LIVE_BIAS),
                });
            }
            blocks.push(layers);
        }
        let pools = (0..cfg.blocks - 1)
            .map(|b| {
                let w = cfg.block_width(b);
                Array1::from_shape_fn(w, |_| rng.random_range(-1.0..1.0f64) / (w as f64).sqrt())
            })
            .collect();
        let ca_mix = (0..cfg.blocks)
            .map(|b| {
                let d = cfg.block_width(b);
                Linear {
                    w: xavier(&mut rng, d + 3, d, 1.0),
                    b: Array1::from_elem(d, LIVE_BIAS),
                }
            })
            .collect();
        let fusion = vec![
            Linear {
                w: xavier(&mut rng, cfg.concat_width(), cfg.fused_width(), 1.0),
                b: Array1::from_elem(cfg.fused_width(), LIVE_BIAS),
            },
            Linear {
                w: xavier(&mut rng, cfg.fused_width(), cfg.fused_width(), 1.0),
                b: Array1::from_elem(cfg.fused_width(), LIVE_BIAS),
            },
        ];
        let dims = cfg.head_dims();
        let mut head = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let gain = if last { 0.1 } else { 1.0 };
            let mut lin = Linear {
                w: xavier(&mut rng, dims[i], dims[i + 1], gain),
                b: Array1::from_elem(dims[i + 1], LIVE_BIAS),
            };
            if last {
                lin.b.fill(1.0); // raw (q, p) priors
            }
            head.push(lin);
        }
        let cdims = cfg.classifier_dims();
        let classifier = (0..cdims.len() - 1)
            .map(|i| Linear {
                w: xavier(&mut rng, cdims[i], cdims[i + 1], 1.0),
                b: Array1::zeros(cdims[i + 1]),
            })
            .collect();
        Ok(Self {
            blocks,
            pools,
            ca_mix,
            fusion,
            head,
            classifier,
        })
    }

    /// Zero tensors with the same shapes; the gradient container.
    pub fn zeros_like(&self) -> Self {
        let zl = |l: &Linear| Linear {
            w: Array2::zeros(l.w.raw_dim()),
            b: Array1::zeros(l.b.raw_dim()),
        };
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|ls| ls.iter().map(zl).collect())
                .collect(),
            pools: self.pools.iter().map(|p| Array1::zeros(p.raw_dim())).collect(),
            ca_mix: self.ca_mix.iter().map(zl).collect(),
            fusion: self.fusion.iter().map(zl).collect(),
            head: self.head.iter().map(zl).collect(),
            classifier: self.classifier.iter().map(zl).collect(),
        }
    }

    /// Visits every tensor in a fixed order as `(name, flattened values)`.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, Vec<usize>, Box<dyn Iterator<Item = f64> + 'a>)) {
        for (b, layers) in self.blocks.iter().enumerate() {
            for (l, lin) in layers.iter().enumerate() {
                f(
                    format!("block{b}.layer{l}.w"),
                    lin.w.shape().to_vec(),
                    Box::new(lin.w.iter().cloned()),
                );
                f(
                    format!("block{b}.layer{l}.b"),
                    lin.b.shape().to_vec(),
                    Box::new(lin.b.iter().cloned()),
                );
            }
        }
        for (i, p) in self.pools.iter().enumerate() {
            f(format!("pool{i}.p"), p.shape().to_vec(), Box::new(p.iter().cloned()));
        }
        for (i, lin) in self.ca_mix.iter().enumerate() {
            f(format!("ca{i}.w"), lin.w.shape().to_vec(), Box::new(lin.w.iter().cloned()));
            f(format!("ca{i}.b"), lin.b.shape().to_vec(), Box::new(lin.b.iter().cloned()));
        }
        for (i, lin) in self.fusion.iter().enumerate() {
            f(format!("fusion{i}.w"), lin.w.shape().to_vec(), Box::new(lin.w.iter().cloned()));
            f(format!("fusion{i}.b"), lin.b.shape().to_vec(), Box::new(lin.b.iter().cloned()));
        }
        for (i, lin) in self.head.iter().enumerate() {
            f(format!("head{i}.w"), lin.w.shape().to_vec(), Box::new(lin.w.iter().cloned()));
            f(format!("head{i}.b"), lin.b.shape().to_vec(), Box::new(lin.b.iter().cloned()));
        }
        for (i, lin) in self.classifier.iter().enumerate() {
            f(format!("classifier{i}.w"), lin.w.shape().to_vec(), Box::new(lin.w.iter().cloned()));
            f(format!("classifier{i}.b"), lin.b.shape().to_vec(), Box::new(lin.b.iter().cloned()));
        }
    }

    /// Concatenation of all tensors in visit order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|_, _, values| out.extend(values));
        out
    }

    pub fn n_params(&self) -> usize {
        self.flatten().len()
    }

    fn tensors_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        for layers in self.blocks.iter_mut() {
            for lin in layers.iter_mut() {
                out.extend(lin.w.iter_mut());
                out.extend(lin.b.iter_mut());
            }
        }
        for p in self.pools.iter_mut() {
            out.extend(p.iter_mut());
        }
        for lin in self.ca_mix.iter_mut() {
            out.extend(lin.w.iter_mut());
            out.extend(lin.b.iter_mut());
        }
        for lin in self.fusion.iter_mut() {
            out.extend(lin.w.iter_mut());
            out.extend(lin.b.iter_mut());
        }
        for lin in self.head.iter_mut() {
            out.extend(lin.w.iter_mut());
            out.extend(lin.b.iter_mut());
        }
        for lin in self.classifier.iter_mut() {
            out.extend(lin.w.iter_mut());
            out.extend(lin.b.iter_mut());
        }
        out
    }

    /// Writes `flat` (in visit order) back into the tensors.
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let slots = self.tensors_mut();
        assert_eq!(slots.len(), flat.len(), "flat parameter size mismatch");
        for (slot, v) in slots.into_iter().zip(flat) {
            *slot = *v;
        }
    }

    /// In-place `self += alpha · other` over all tensors.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        let flat = other.flatten();
        for (slot, g) in self.tensors_mut().into_iter().zip(flat) {
            *slot += alpha * g;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Shape-checks against a config, naming the first mismatch.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let reference = EncoderParams::init(&EncoderConfig {
            seed: 0,
            ..*cfg
        })?;
        let mut shapes = Vec::new();
        reference.visit(|name, shape, _| shapes.push((name, shape)));
        let mut i = 0;
        let mut bad = None;
        self.visit(|name, shape, _| {
            if bad.is_none() {
                if i >= shapes.len() {
                    bad = Some(format!("unexpected tensor {name}"));
                } else if shapes[i] != (name.clone(), shape.clone()) {
                    bad = Some(format!(
                        "tensor {name} has shape {shape:?}, config expects {} with shape {:?}",
                        shapes[i].0, shapes[i].1
                    ));
                }
            }
            i += 1;
        });
        if bad.is_none() && i != shapes.len() {
            bad = Some(format!("found {i} tensors, config expects {}", shapes.len()));
        }
        match bad {
            Some(msg) => nn_err(msg),
            None => Ok(()),
        }
    }
}
