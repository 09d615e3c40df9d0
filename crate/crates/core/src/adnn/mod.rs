//! Attention-based sequence classifier.
//!
//! A linear projection lifts each frame into a 1024-wide latent space; one
//! single-head self-attention layer mixes information across the whole
//! utterance; the sample-level head applies layer normalization, average
//! pooling over valid frames, Swish, and a final linear layer producing two
//! logits (index 0 = OFF, 1 = ON).
//!
//! Everything runs in `f64` with hand-derived gradients; see
//! [`network::loss_and_grad`].

mod network;
mod optim;
mod train;

pub use network::{adnn_backward, adnn_forward, adnn_loss, loss_and_grad, Batch, ForwardCache};
pub use optim::{adamw_step, cosine_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{train_adnn, train_adnn_with_history, AdnnTraining, TrainConfig};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Width of the latent space.
pub const LATENT_WIDTH: usize = 1024;
pub const N_CLASSES: usize = 2;

/// Model parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct AdnnModel {
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub query_w: Array2<f64>,
    pub query_b: Array1<f64>,
    pub key_w: Array2<f64>,
    pub key_b: Array1<f64>,
    pub value_w: Array2<f64>,
    pub value_b: Array1<f64>,
    pub norm_gain: Array1<f64>,
    pub norm_shift: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

const BLOCK_NAMES: [&str; 12] = [
    "proj.weight",
    "proj.bias",
    "attn.query.weight",
    "attn.query.bias",
    "attn.key.weight",
    "attn.key.bias",
    "attn.value.weight",
    "attn.value.bias",
    "norm.gain",
    "norm.shift",
    "head.weight",
    "head.bias",
];

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn uniform_vector(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

impl AdnnModel {
    /// Random initialization with the standard 1024-wide latent space.
    pub fn new(input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_width(input_dim, LATENT_WIDTH, rng)
    }

    /// Weights and biases are drawn from `U(−1/√fan_in, 1/√fan_in)`;
    /// normalization gain is 1 and shift 0.
    pub fn with_width(input_dim: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        AdnnModel {
            proj_w: uniform_matrix(rng, input_dim, width),
            proj_b: uniform_vector(rng, input_dim, width),
            query_w: uniform_matrix(rng, width, width),
            query_b: uniform_vector(rng, width, width),
            key_w: uniform_matrix(rng, width, width),
            key_b: uniform_vector(rng, width, width),
            value_w: uniform_matrix(rng, width, width),
            value_b: uniform_vector(rng, width, width),
            norm_gain: Array1::ones(width),
            norm_shift: Array1::zeros(width),
            head_w: uniform_matrix(rng, width, N_CLASSES),
            head_b: uniform_vector(rng, width, N_CLASSES),
        }
    }

    /// All-zero parameters shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, block) in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    pub fn input_dim(&self) -> usize {
        self.proj_w.nrows()
    }

    pub fn width(&self) -> usize {
        self.proj_w.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `(rows, cols)` of each block; vectors are `(len, 1)`.
    pub fn shapes(&self) -> [(usize, usize); 12] {
        let (d, w) = (self.input_dim(), self.width());
        [
            (d, w),
            (w, 1),
            (w, w),
            (w, 1),
            (w, w),
            (w, 1),
            (w, w),
            (w, 1),
            (w, 1),
            (w, 1),
            (w, N_CLASSES),
            (N_CLASSES, 1),
        ]
    }

    /// Named flat views of every parameter block, in a fixed order.
    pub fn blocks(&self) -> [(&'static str, &[f64]); 12] {
        fn flat(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are kept in standard layout")
        }
        [
            (BLOCK_NAMES[0], flat(self.proj_w.as_slice())),
            (BLOCK_NAMES[1], flat(self.proj_b.as_slice())),
            (BLOCK_NAMES[2], flat(self.query_w.as_slice())),
            (BLOCK_NAMES[3], flat(self.query_b.as_slice())),
            (BLOCK_NAMES[4], flat(self.key_w.as_slice())),
            (BLOCK_NAMES[5], flat(self.key_b.as_slice())),
            (BLOCK_NAMES[6], flat(self.value_w.as_slice())),
            (BLOCK_NAMES[7], flat(self.value_b.as_slice())),
            (BLOCK_NAMES[8], flat(self.norm_gain.as_slice())),
            (BLOCK_NAMES[9], flat(self.norm_shift.as_slice())),
            (BLOCK_NAMES[10], flat(self.head_w.as_slice())),
            (BLOCK_NAMES[11], flat(self.head_b.as_slice())),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 12] {
        fn flat(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameters are kept in standard layout")
        }
        [
            (BLOCK_NAMES[0], flat(self.proj_w.as_slice_mut())),
            (BLOCK_NAMES[1], flat(self.proj_b.as_slice_mut())),
            (BLOCK_NAMES[2], flat(self.query_w.as_slice_mut())),
            (BLOCK_NAMES[3], flat(self.query_b.as_slice_mut())),
            (BLOCK_NAMES[4], flat(self.key_w.as_slice_mut())),
            (BLOCK_NAMES[5], flat(self.key_b.as_slice_mut())),
            (BLOCK_NAMES[6], flat(self.value_w.as_slice_mut())),
            (BLOCK_NAMES[7], flat(self.value_b.as_slice_mut())),
            (BLOCK_NAMES[8], flat(self.norm_gain.as_slice_mut())),
            (BLOCK_NAMES[9], flat(self.norm_shift.as_slice_mut())),
            (BLOCK_NAMES[10], flat(self.head_w.as_slice_mut())),
            (BLOCK_NAMES[11], flat(self.head_b.as_slice_mut())),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.n_params() + 12 * 40);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(BLOCK_NAMES.len() as u32).to_le_bytes());
        for ((name, values), (rows, cols)) in self.blocks().iter().zip(self.shapes()) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(rows as u32).to_le_bytes());
            buf.extend_from_slice(&(cols as u32).to_le_bytes());
            for v in values.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AdnnModel> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "ADNN" });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadVersion(version));
        }
        let input_dim = r.u32()? as usize;
        let n_blocks = r.u32()? as usize;
        if n_blocks != BLOCK_NAMES.len() {
            return Err(Error::MalformedFeatures(format!(
                "checkpoint holds {n_blocks} blocks, expected {}",
                BLOCK_NAMES.len()
            )));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for expected in BLOCK_NAMES {
            let len = r.u32()? as usize;
            let name = r.take(len)?;
            if name != expected.as_bytes() {
                return Err(Error::MalformedFeatures(format!(
                    "expected block {expected}, found {}",
                    String::from_utf8_lossy(name)
                )));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(8 * rows * cols)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(((rows, cols), values));
        }
        if r.pos != bytes.len() {
            return Err(Error::DimensionMismatch("trailing bytes after checkpoint".into()));
        }
        let mut it = blocks.into_iter();
        let mut matrix = || -> Result<Array2<f64>> {
            let ((rows, cols), v) = it.next().unwrap();
            Array2::from_shape_vec((rows, cols), v).map_err(|e| Error::DimensionMismatch(e.to_string()))
        };
        let vector = |m: Array2<f64>| -> Array1<f64> { Array1::from(m.into_raw_vec_and_offset().0) };
        let model = AdnnModel {
            proj_w: matrix()?,
            proj_b: vector(matrix()?),
            query_w: matrix()?,
            query_b: vector(matrix()?),
            key_w: matrix()?,
            key_b: vector(matrix()?),
            value_w: matrix()?,
            value_b: vector(matrix()?),
            norm_gain: vector(matrix()?),
            norm_shift: vector(matrix()?),
            head_w: matrix()?,
            head_b: vector(matrix()?),
        };
        if model.input_dim() != input_dim || model.shapes() != model.recorded_shapes() {
            return Err(Error::DimensionMismatch("inconsistent checkpoint block shapes".into()));
        }
        if !model.is_finite() {
            return Err(Error::MalformedFeatures("non-finite parameter in checkpoint".into()));
        }
        Ok(model)
    }

    fn recorded_shapes(&self) -> [(usize, usize); 12] {
        [
            self.proj_w.dim(),
            (self.proj_b.len(), 1),
            self.query_w.dim(),
            (self.query_b.len(), 1),
            self.key_w.dim(),
            (self.key_b.len(), 1),
            self.value_w.dim(),
            (self.value_b.len(), 1),
            (self.norm_gain.len(), 1),
            (self.norm_shift.len(), 1),
            self.head_w.dim(),
            (self.head_b.len(), 1),
        ]
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ADNN";
const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::DimensionMismatch("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
