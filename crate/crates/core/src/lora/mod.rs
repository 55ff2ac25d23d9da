//! Low-rank adapters over frozen weight matrices.
//!
//! A frozen weight `W: k×d` maps `d` inputs to `k` outputs. An adapter adds
//! `ΔW = (alpha / r) · B·A` with `A: r×d` and `B: k×r`; only `A` and `B` are
//! trained. `B` starts at zero, so a fresh adapter leaves the layer unchanged.

mod format;

pub use format::{load_bundle, read_bundle, save_bundle, write_bundle, BundleHeader, ModuleHeader, LORB_MAGIC, LORB_VERSION};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("rank {r} must satisfy 0 < r <= min(d={d}, k={k})")]
    RankOutOfRange { r: usize, d: usize, k: usize },
    #[error("adapter dimensions must be positive (d={d}, k={k})")]
    NonPositiveDim { d: usize, k: usize },
    #[error("alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("dropout probability must lie in [0, 1), got {0}")]
    InvalidDropout(f64),
    #[error("adapter target '{0}' does not name a weight of the model")]
    UnknownTarget(String),
    #[error("adapter for '{target}' expects weight shape {expected:?}, model has {found:?}")]
    ShapeConflict {
        target: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("duplicate adapter target '{0}'")]
    DuplicateTarget(String),
    #[error("adapter bundle '{0}' is not attached")]
    NotAttached(String),
    #[error("adapter bundle '{0}' is already active; detach it before attaching another")]
    AlreadyActive(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("adapter file: {0}")]
    Format(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LoraError>;

/// One adapter bound to a named frozen weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraModule {
    pub target_name: String,
    a: Tensor,
    b: Tensor,
    alpha: f64,
    dropout_p: f64,
    pub trainable: bool,
}

fn check_hparams(d: usize, k: usize, r: usize, alpha: f64, dropout_p: f64) -> Result<()> {
    if d == 0 || k == 0 {
        return Err(LoraError::NonPositiveDim { d, k });
    }
    if r == 0 || r > d.min(k) {
        return Err(LoraError::RankOutOfRange { r, d, k });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(LoraError::InvalidAlpha(alpha));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(LoraError::InvalidDropout(dropout_p));
    }
    Ok(())
}

/// Creates an adapter for a `k×d` weight: `A ~ U(-1/√d, 1/√d)` from `seed`,
/// `B = 0`.
pub fn create_adapter(
    target_name: &str,
    d: usize,
    k: usize,
    r: usize,
    alpha: f64,
    dropout_p: f64,
    seed: u64,
) -> Result<LoraModule> {
    check_hparams(d, k, r, alpha, dropout_p)?;
    let bound = 1.0 / (d as f64).sqrt();
    Ok(LoraModule {
        target_name: target_name.to_string(),
        a: Tensor::uniform_seeded(&[r, d], bound, seed),
        b: Tensor::zeros(&[k, r]),
        alpha,
        dropout_p,
        trainable: true,
    })
}

impl LoraModule {
    /// Builds a module from explicit factors (`a: r×d`, `b: k×r`).
    pub fn from_parts(target_name: &str, a: Tensor, b: Tensor, alpha: f64, dropout_p: f64) -> Result<Self> {
        let (r, d) = a.dims2("lora A")?;
        let (k, r2) = b.dims2("lora B")?;
        if r != r2 {
            return Err(TensorError::ShapeMismatch {
                op: "lora factors",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            }
            .into());
        }
        check_hparams(d, k, r, alpha, dropout_p)?;
        Ok(Self {
            target_name: target_name.to_string(),
            a,
            b,
            alpha,
            dropout_p,
            trainable: true,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    /// Input width of the adapted weight.
    pub fn d(&self) -> usize {
        self.a.shape()[1]
    }

    /// Output width of the adapted weight.
    pub fn k(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    /// Effective multiplier `alpha / r` applied to `B·A`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Tensor {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Tensor {
        &mut self.b
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        check_hparams(self.d(), self.k(), self.rank(), alpha, self.dropout_p)?;
        self.alpha = alpha;
        Ok(())
    }

    /// Number of trainable scalars, `r·(d + k)`.
    pub fn param_count(&self) -> usize {
        self.rank() * (self.d() + self.k())
    }

    /// Shape `[k, d]` of the weight this module adapts.
    pub fn target_shape(&self) -> [usize; 2] {
        [self.k(), self.d()]
    }

    /// Dense `ΔW = scale · B·A`.
    pub fn delta_weight(&self) -> Tensor {
        self.b.matmul(&self.a).expect("factor shapes checked at construction").scale(self.scale())
    }

    pub(crate) fn check_weight(&self, w: &Tensor) -> Result<()> {
        if w.shape() != self.target_shape() {
            return Err(LoraError::ShapeConflict {
                target: self.target_name.clone(),
                expected: self.target_shape().to_vec(),
                found: w.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Inverted-dropout keep mask: each entry is `0` with probability `p`,
/// otherwise `1 / (1 - p)`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Records `x·Wᵀ + scale · (x̃·Aᵀ)·Bᵀ` on the tape, where `x̃` is `x` times
/// the optional dropout mask. The frozen path never sees the mask.
pub fn lora_linear(
    tape: &mut Tape,
    x: Var,
    w: Var,
    a: Var,
    b: Var,
    scale: f64,
    dropout: Option<Vec<f64>>,
) -> std::result::Result<Var, TensorError> {
    let base = tape.matmul_bt(x, w)?;
    let xin = match dropout {
        Some(mask) => tape.mask_mul(x, mask)?,
        None => x,
    };
    let down = tape.matmul_bt(xin, a)?;
    let up = tape.matmul_bt(down, b)?;
    let delta = tape.scale(up, scale);
    tape.add(base, delta)
}

/// Applies the adapted layer to `x` (shape `[d]` or `[n, d]`).
///
/// Dropout on the adapter input is active only when `training` is set and
/// `dropout_p > 0`; its mask is drawn from `seed`.
pub fn adapted_forward(w: &Tensor, module: &LoraModule, x: &Tensor, training: bool, seed: u64) -> Result<Tensor> {
    module.check_weight(w)?;
    let vector = x.shape().len() == 1;
    let x2 = if vector {
        x.clone().reshape(vec![1, x.numel()])?
    } else {
        x.clone()
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x2, false);
    let wv = tape.leaf(w.clone(), false);
    let av = tape.leaf(module.a.clone(), false);
    let bv = tape.leaf(module.b.clone(), false);
    let mask = (training && module.dropout_p > 0.0)
        .then(|| dropout_mask(tape.value(xv).numel(), module.dropout_p, seed));
    let y = lora_linear(&mut tape, xv, wv, av, bv, module.scale(), mask)?;
    let out = tape.value(y).clone();
    Ok(if vector {
        let n = out.numel();
        out.reshape(vec![n])?
    } else {
        out
    })
}

/// Folds the adapter into a plain weight: `W + scale · B·A`.
pub fn merge(w: &Tensor, module: &LoraModule) -> Result<Tensor> {
    module.check_weight(w)?;
    Ok(w.add(&module.delta_weight())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trainable: usize,
    pub frozen: usize,
    pub fraction: f64,
}

/// Trainable adapter scalars against a frozen base of `base_param_total`.
pub fn param_counts(base_param_total: usize, bundle: &AdapterBundle) -> ParamCounts {
    let trainable: usize = bundle.modules.values().map(LoraModule::param_count).sum();
    let fraction = if base_param_total == 0 {
        0.0
    } else {
        trainable as f64 / base_param_total as f64
    };
    ParamCounts {
        trainable,
        frozen: base_param_total,
        fraction,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    /// Task tags the bundle was trained on, e.g. `["FWD", "REAG"]`.
    #[serde(default)]
    pub tasks: Vec<String>,
}

/// A named, swappable set of adapters (one per target weight).
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBundle {
    pub name: String,
    pub modules: BTreeMap<String, LoraModule>,
    pub meta: BundleMeta,
}

impl AdapterBundle {
    pub fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            modules: BTreeMap::new(),
            meta: BundleMeta {
                seed,
                tasks: Vec::new(),
            },
        }
    }

    pub fn insert(&mut self, module: LoraModule) -> Result<()> {
        if self.modules.contains_key(&module.target_name) {
            return Err(LoraError::DuplicateTarget(module.target_name));
        }
        self.modules.insert(module.target_name.clone(), module);
        Ok(())
    }

    /// Creates fresh adapters for `(target_name, weight_shape)` pairs. Each
    /// module's `A` is drawn from a seed derived from `seed` and its position.
    pub fn for_targets(
        name: &str,
        targets: &[(String, [usize; 2])],
        r: usize,
        alpha: f64,
        dropout_p: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut bundle = Self::new(name, seed);
        for (i, (target, [k, d])) in targets.iter().enumerate() {
            let m = create_adapter(target, *d, *k, r, alpha, dropout_p, crate::derive_seed(seed, &[i as u64]))?;
            bundle.insert(m)?;
        }
        Ok(bundle)
    }

    pub fn trainable_params(&self) -> usize {
        self.modules.values().map(LoraModule::param_count).sum()
    }
}
