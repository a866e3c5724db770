//! Hierarchical ANN-LSTM regressor: a time-distributed ReLU dense layer, a
//! bidirectional LSTM, a second LSTM and a per-step linear head producing
//! (SBP, DBP).
//!
//! All parameters live in one flat `Vec<f64>`; gradients and Adam moments
//! share that layout. Order (row-major, LSTM gate blocks `i, f, g, o`):
//!
//! ```text
//! dense W (input x dense), dense b
//! bi-forward  W (dense x 4H), U (H x 4H), b (4H)
//! bi-backward W (dense x 4H), U (H x 4H), b (4H)
//! lstm2       W (2H x 4H),    U (H x 4H), b (4H)
//! head W (H x 2), head b (2)
//! ```

mod network;
mod optim;
mod train;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use network::{backward, forward, lstm_sequence, mse, Batch, ForwardCache};
pub use optim::{adam_step, clip_gradient_norm, global_norm, AdamState};
pub use train::{
    default_clip_norm, train, EpochStats, TrainConfig, TrainHistory, TrainedModel,
    DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE,
};

use crate::segmentation::FEATURE_DIM;

/// Number of regression outputs per step.
pub const OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub dense: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input: FEATURE_DIM,
            dense: 128,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstmLayer {
    /// Left-to-right half of the bidirectional layer.
    Forward,
    /// Right-to-left half of the bidirectional layer.
    Backward,
    Second,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmLayout {
    pub input: usize,
    pub hidden: usize,
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub dense_w: Range<usize>,
    pub dense_b: Range<usize>,
    pub fwd: LstmLayout,
    pub bwd: LstmLayout,
    pub second: LstmLayout,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

impl ModelDims {
    pub(crate) fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, h) = (self.dense, self.hidden);
        let dense_w = take(self.input * d);
        let dense_b = take(d);
        let mut lstm = |input: usize| LstmLayout {
            input,
            hidden: h,
            w: take(input * 4 * h),
            u: take(h * 4 * h),
            b: take(4 * h),
        };
        let fwd = lstm(d);
        let bwd = lstm(d);
        let second = lstm(2 * h);
        let head_w = take(h * OUTPUTS);
        let head_b = take(OUTPUTS);
        Layout {
            dense_w,
            dense_b,
            fwd,
            bwd,
            second,
            head_w,
            head_b,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.input == 0 || self.dense == 0 || self.hidden == 0 {
            return Err(crate::Error::InvalidParameter(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Read-only view of one LSTM cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmView<'a> {
    pub input: usize,
    pub hidden: usize,
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

/// Network parameters (also used for gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            values: vec![0.0; dims.param_count()],
        }
    }

    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> crate::Result<Self> {
        if values.len() != dims.param_count() {
            return Err(crate::Error::ShapeMismatch(format!(
                "{} parameters for dims {dims:?}, expected {}",
                values.len(),
                dims.param_count()
            )));
        }
        Ok(ModelParams { dims, values })
    }

    /// Glorot-uniform weights (per gate for LSTM matrices), zero biases except
    /// the LSTM forget gates, which start at 1.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(dims);
        let layout = dims.layout();
        let mut glorot = |values: &mut [f64], fan_in: usize, fan_out: usize| {
            let bound = glorot_bound(fan_in, fan_out);
            values
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-bound..=bound));
        };
        glorot(
            &mut p.values[layout.dense_w.clone()],
            dims.input,
            dims.dense,
        );
        for l in [&layout.fwd, &layout.bwd, &layout.second] {
            glorot(&mut p.values[l.w.clone()], l.input, l.hidden);
            glorot(&mut p.values[l.u.clone()], l.hidden, l.hidden);
            let h = l.hidden;
            p.values[l.b.start + h..l.b.start + 2 * h].fill(1.0);
        }
        glorot(&mut p.values[layout.head_w.clone()], dims.hidden, OUTPUTS);
        p
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn dense(&self) -> (&[f64], &[f64]) {
        let l = self.dims.layout();
        (&self.values[l.dense_w], &self.values[l.dense_b])
    }

    pub fn head(&self) -> (&[f64], &[f64]) {
        let l = self.dims.layout();
        (&self.values[l.head_w], &self.values[l.head_b])
    }

    pub fn lstm(&self, layer: LstmLayer) -> LstmView<'_> {
        let layout = self.dims.layout();
        let l = match layer {
            LstmLayer::Forward => layout.fwd,
            LstmLayer::Backward => layout.bwd,
            LstmLayer::Second => layout.second,
        };
        LstmView {
            input: l.input,
            hidden: l.hidden,
            w: &self.values[l.w],
            u: &self.values[l.u],
            b: &self.values[l.b],
        }
    }

    /// Forget-gate bias of an LSTM cell.
    pub fn forget_bias(&self, layer: LstmLayer) -> &[f64] {
        let v = self.lstm(layer);
        &v.b[v.hidden..2 * v.hidden]
    }

    /// Sets the head bias, i.e. the output of a network whose head weights
    /// are zero.
    pub fn set_output_bias(&mut self, bias: [f64; OUTPUTS]) {
        let r = self.dims.layout().head_b;
        self.values[r].copy_from_slice(&bias);
    }

    /// Exchanges the two halves of the bidirectional layer.
    pub fn swap_directions(&mut self) {
        let l = self.dims.layout();
        let (a, b) = (l.fwd.w.start..l.fwd.b.end, l.bwd.w.start..l.bwd.b.end);
        let (head, tail) = self.values.split_at_mut(b.start);
        head[a].swap_with_slice(&mut tail[..b.len()]);
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
