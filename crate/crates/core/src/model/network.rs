//! Batched forward pass and backpropagation through time.
//!
//! Activations are stored time-major: row `t * batch + b` holds step `t` of
//! batch member `b`, so each step is one contiguous `batch x width` block and
//! every layer reduces to a handful of GEMMs.

use super::{LstmLayer, LstmView, ModelDims, ModelParams, OUTPUTS};
use crate::error::{Error, Result};
use crate::segmentation::{FeatureVector, SequenceSample};

/// `c = a * b + beta * c` for row-major operands; `ta` / `tb` mean the
/// stored buffer holds the transpose (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe matrices that lie inside the checked
    // slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_bias(rows: usize, bias: &[f64], out: &mut [f64]) {
    for row in out.chunks_exact_mut(bias.len()).take(rows) {
        row.copy_from_slice(bias);
    }
}

fn column_sums(x: &[f64], width: usize, out: &mut [f64]) {
    for row in x.chunks_exact(width) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `steps` sequences of `size` members, inputs and optional targets stored
/// time-major.
#[derive(Debug, Clone)]
pub struct Batch {
    pub steps: usize,
    pub size: usize,
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Option<Vec<f64>>,
}

impl Batch {
    pub fn from_raw(
        steps: usize,
        size: usize,
        input_dim: usize,
        inputs: Vec<f64>,
        targets: Option<Vec<f64>>,
    ) -> Result<Self> {
        if steps == 0 || size == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        if inputs.len() != steps * size * input_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for {steps} steps x {size} x {input_dim}",
                inputs.len()
            )));
        }
        if let Some(t) = &targets {
            if t.len() != steps * size * OUTPUTS {
                return Err(Error::ShapeMismatch(format!("{} targets", t.len())));
            }
        }
        Ok(Batch {
            steps,
            size,
            input_dim,
            inputs,
            targets,
        })
    }

    pub fn from_inputs(sequences: &[&[FeatureVector]]) -> Result<Self> {
        let size = sequences.len();
        let steps = sequences.first().map_or(0, |s| s.len());
        if sequences.iter().any(|s| s.len() != steps) {
            return Err(Error::ShapeMismatch(
                "sequences of unequal length in batch".into(),
            ));
        }
        let dim = sequences
            .first()
            .and_then(|s| s.first())
            .map_or(0, |v| v.values().len());
        let mut inputs = Vec::with_capacity(steps * size * dim);
        for t in 0..steps {
            for s in sequences {
                inputs.extend_from_slice(s[t].values());
            }
        }
        Self::from_raw(steps, size, dim, inputs, None)
    }

    pub fn from_samples(samples: &[&SequenceSample]) -> Result<Self> {
        let seqs: Vec<&[FeatureVector]> = samples.iter().map(|s| s.inputs.as_slice()).collect();
        let mut batch = Self::from_inputs(&seqs)?;
        let mut targets = Vec::with_capacity(batch.steps * batch.size * OUTPUTS);
        for t in 0..batch.steps {
            for s in samples {
                let pair = s.targets.get(t).ok_or_else(|| {
                    Error::ShapeMismatch("fewer targets than inputs in sequence".into())
                })?;
                targets.extend_from_slice(&[pair.sbp, pair.dbp]);
            }
        }
        batch.targets = Some(targets);
        Ok(batch)
    }

    fn rows(&self) -> usize {
        self.steps * self.size
    }
}

/// Activations of one LSTM cell over a batch.
#[derive(Debug, Clone)]
struct LstmCache {
    /// Post-activation gates `i, f, g, o` (rows x 4H).
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn step_order(s: usize, steps: usize, reverse: bool) -> usize {
    if reverse {
        steps - 1 - s
    } else {
        s
    }
}

fn lstm_forward(
    v: LstmView<'_>,
    x: &[f64],
    steps: usize,
    batch: usize,
    reverse: bool,
) -> LstmCache {
    let (nin, nh) = (v.input, v.hidden);
    let g4 = 4 * nh;
    let rows = steps * batch;
    let mut a = vec![0.0; rows * g4];
    add_bias(rows, v.b, &mut a);
    gemm(rows, nin, g4, x, false, v.w, false, &mut a, 1.0);
    let mut c = vec![0.0; rows * nh];
    let mut h = vec![0.0; rows * nh];
    for s in 0..steps {
        let t = step_order(s, steps, reverse);
        let cur = t * batch..(t + 1) * batch;
        let prev = (s > 0).then(|| step_order(s - 1, steps, reverse));
        if let Some(p) = prev {
            let hp = &h[p * batch * nh..(p + 1) * batch * nh];
            gemm(
                batch,
                nh,
                g4,
                hp,
                false,
                v.u,
                false,
                &mut a[cur.start * g4..cur.end * g4],
                1.0,
            );
        }
        for (b, r) in cur.enumerate() {
            let gate = &mut a[r * g4..(r + 1) * g4];
            for j in 0..nh {
                let i = sigmoid(gate[j]);
                let f = sigmoid(gate[nh + j]);
                let g = gate[2 * nh + j].tanh();
                let o = sigmoid(gate[3 * nh + j]);
                gate[j] = i;
                gate[nh + j] = f;
                gate[2 * nh + j] = g;
                gate[3 * nh + j] = o;
                let c_prev = prev.map_or(0.0, |p| c[(p * batch + b) * nh + j]);
                let ct = f * c_prev + i * g;
                c[r * nh + j] = ct;
                h[r * nh + j] = o * ct.tanh();
            }
        }
    }
    LstmCache { gates: a, c, h }
}

struct LstmGrads {
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
}

/// Accumulates `dL/dx` into `dx` and returns the parameter gradients.
#[allow(clippy::too_many_arguments)]
fn lstm_backward(
    v: LstmView<'_>,
    x: &[f64],
    cache: &LstmCache,
    dh_out: &[f64],
    steps: usize,
    batch: usize,
    reverse: bool,
    dx: &mut [f64],
) -> LstmGrads {
    let (nin, nh) = (v.input, v.hidden);
    let g4 = 4 * nh;
    let rows = steps * batch;
    let mut da = vec![0.0; rows * g4];
    let mut du = vec![0.0; nh * g4];
    let mut dh_next = vec![0.0; batch * nh];
    let mut dc_next = vec![0.0; batch * nh];
    for s in (0..steps).rev() {
        let t = step_order(s, steps, reverse);
        let prev = (s > 0).then(|| step_order(s - 1, steps, reverse));
        for b in 0..batch {
            let r = t * batch + b;
            let gate = &cache.gates[r * g4..(r + 1) * g4];
            let dgate = &mut da[r * g4..(r + 1) * g4];
            for j in 0..nh {
                let (i, f, g, o) = (gate[j], gate[nh + j], gate[2 * nh + j], gate[3 * nh + j]);
                let tc = cache.c[r * nh + j].tanh();
                let dh = dh_out[r * nh + j] + dh_next[b * nh + j];
                let dc = dc_next[b * nh + j] + dh * o * (1.0 - tc * tc);
                let c_prev = prev.map_or(0.0, |p| cache.c[(p * batch + b) * nh + j]);
                dgate[j] = dc * g * i * (1.0 - i);
                dgate[nh + j] = dc * c_prev * f * (1.0 - f);
                dgate[2 * nh + j] = dc * i * (1.0 - g * g);
                dgate[3 * nh + j] = dh * tc * o * (1.0 - o);
                dc_next[b * nh + j] = dc * f;
            }
        }
        if let Some(p) = prev {
            let da_t = &da[t * batch * g4..(t + 1) * batch * g4];
            let h_prev = &cache.h[p * batch * nh..(p + 1) * batch * nh];
            gemm(batch, g4, nh, da_t, false, v.u, true, &mut dh_next, 0.0);
            gemm(nh, batch, g4, h_prev, true, da_t, false, &mut du, 1.0);
        }
    }
    let mut dw = vec![0.0; nin * g4];
    gemm(nin, rows, g4, x, true, &da, false, &mut dw, 0.0);
    let mut db = vec![0.0; g4];
    column_sums(&da, g4, &mut db);
    gemm(rows, g4, nin, &da, false, v.w, true, dx, 1.0);
    LstmGrads {
        w: dw,
        u: du,
        b: db,
    }
}

/// Hidden-state sequence (rows x hidden, time-major) of one LSTM cell
/// started from zero state.
pub fn lstm_sequence(
    v: LstmView<'_>,
    inputs: &[f64],
    steps: usize,
    batch: usize,
    reverse: bool,
) -> Vec<f64> {
    assert_eq!(inputs.len(), steps * batch * v.input, "input shape");
    lstm_forward(v, inputs, steps, batch, reverse).h
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: ModelDims,
    steps: usize,
    batch: usize,
    inputs: Vec<f64>,
    dense: Vec<f64>,
    fwd: LstmCache,
    bwd: LstmCache,
    bi: Vec<f64>,
    second: LstmCache,
    outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Concatenated bidirectional-layer output (rows x 2H, time-major).
    pub fn bidirectional_output(&self) -> &[f64] {
        &self.bi
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

/// Runs the network on a batch. Returns the per-step outputs (rows x 2,
/// time-major) and the activation cache.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<(Vec<f64>, ForwardCache)> {
    let dims = params.dims();
    if batch.input_dim != dims.input {
        return Err(Error::ShapeMismatch(format!(
            "batch inputs have {} features, model expects {}",
            batch.input_dim, dims.input
        )));
    }
    let (steps, size, rows) = (batch.steps, batch.size, batch.rows());
    let (nd, nh) = (dims.dense, dims.hidden);

    let (dw, db) = params.dense();
    let mut dense = vec![0.0; rows * nd];
    add_bias(rows, db, &mut dense);
    gemm(
        rows,
        dims.input,
        nd,
        &batch.inputs,
        false,
        dw,
        false,
        &mut dense,
        1.0,
    );
    dense.iter_mut().for_each(|v| *v = v.max(0.0));

    let fwd = lstm_forward(params.lstm(LstmLayer::Forward), &dense, steps, size, false);
    let bwd = lstm_forward(params.lstm(LstmLayer::Backward), &dense, steps, size, true);
    let mut bi = vec![0.0; rows * 2 * nh];
    for r in 0..rows {
        bi[r * 2 * nh..r * 2 * nh + nh].copy_from_slice(&fwd.h[r * nh..(r + 1) * nh]);
        bi[r * 2 * nh + nh..(r + 1) * 2 * nh].copy_from_slice(&bwd.h[r * nh..(r + 1) * nh]);
    }
    let second = lstm_forward(params.lstm(LstmLayer::Second), &bi, steps, size, false);

    let (hw, hb) = params.head();
    let mut outputs = vec![0.0; rows * OUTPUTS];
    add_bias(rows, hb, &mut outputs);
    gemm(
        rows,
        nh,
        OUTPUTS,
        &second.h,
        false,
        hw,
        false,
        &mut outputs,
        1.0,
    );
    if let Some(bad) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation {
            step: bad / OUTPUTS / size,
        });
    }

    let cache = ForwardCache {
        dims,
        steps,
        batch: size,
        inputs: batch.inputs.clone(),
        dense,
        fwd,
        bwd,
        bi,
        second,
        outputs: outputs.clone(),
    };
    Ok((outputs, cache))
}

/// Mean squared error over every step, batch member and output.
pub fn mse(outputs: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(outputs.len(), targets.len());
    outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| (y - t).powi(2))
        .sum::<f64>()
        / outputs.len() as f64
}

/// Exact gradients of the mean-squared loss with respect to every parameter.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    targets: &[f64],
) -> Result<(ModelParams, f64)> {
    let dims = params.dims();
    if dims != cache.dims {
        return Err(Error::ShapeMismatch(format!(
            "cache from a {:?} model, parameters are {dims:?}",
            cache.dims
        )));
    }
    let (steps, size) = (cache.steps, cache.batch);
    let rows = steps * size;
    if targets.len() != rows * OUTPUTS {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {rows} output rows",
            targets.len()
        )));
    }
    let (nd, nh) = (dims.dense, dims.hidden);
    let layout = dims.layout();
    let mut grads = ModelParams::zeros(dims);

    let loss = mse(&cache.outputs, targets);
    let scale = 2.0 / cache.outputs.len() as f64;
    let dy: Vec<f64> = cache
        .outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| scale * (y - t))
        .collect();

    let (hw, _) = params.head();
    {
        let g = grads.values_mut();
        gemm(
            nh,
            rows,
            OUTPUTS,
            &cache.second.h,
            true,
            &dy,
            false,
            &mut g[layout.head_w.clone()],
            0.0,
        );
        column_sums(&dy, OUTPUTS, &mut g[layout.head_b.clone()]);
    }
    let mut dh2 = vec![0.0; rows * nh];
    gemm(rows, OUTPUTS, nh, &dy, false, hw, true, &mut dh2, 0.0);

    let mut dbi = vec![0.0; rows * 2 * nh];
    let g2 = lstm_backward(
        params.lstm(LstmLayer::Second),
        &cache.bi,
        &cache.second,
        &dh2,
        steps,
        size,
        false,
        &mut dbi,
    );
    let (mut dhf, mut dhb) = (vec![0.0; rows * nh], vec![0.0; rows * nh]);
    for r in 0..rows {
        dhf[r * nh..(r + 1) * nh].copy_from_slice(&dbi[r * 2 * nh..r * 2 * nh + nh]);
        dhb[r * nh..(r + 1) * nh].copy_from_slice(&dbi[r * 2 * nh + nh..(r + 1) * 2 * nh]);
    }
    let mut ddense = vec![0.0; rows * nd];
    let gf = lstm_backward(
        params.lstm(LstmLayer::Forward),
        &cache.dense,
        &cache.fwd,
        &dhf,
        steps,
        size,
        false,
        &mut ddense,
    );
    let gb = lstm_backward(
        params.lstm(LstmLayer::Backward),
        &cache.dense,
        &cache.bwd,
        &dhb,
        steps,
        size,
        true,
        &mut ddense,
    );
    // ReLU gate: the stored activation is positive exactly where the
    // pre-activation was.
    ddense.iter_mut().zip(&cache.dense).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0
        }
    });

    let g = grads.values_mut();
    gemm(
        dims.input,
        rows,
        nd,
        &cache.inputs,
        true,
        &ddense,
        false,
        &mut g[layout.dense_w.clone()],
        0.0,
    );
    column_sums(&ddense, nd, &mut g[layout.dense_b.clone()]);
    for (lg, l) in [(gf, &layout.fwd), (gb, &layout.bwd), (g2, &layout.second)] {
        g[l.w.clone()].copy_from_slice(&lg.w);
        g[l.u.clone()].copy_from_slice(&lg.u);
        g[l.b.clone()].copy_from_slice(&lg.b);
    }
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(hidden: usize) -> ModelDims {
        ModelDims {
            input: 6,
            dense: 5,
            hidden,
        }
    }

    fn random_batch(dims: ModelDims, steps: usize, size: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..steps * size * dims.input)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        let targets = (0..steps * size * OUTPUTS)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Batch::from_raw(steps, size, dims.input, inputs, Some(targets)).unwrap()
    }

    fn scramble(p: &mut ModelParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.8..0.8));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let d = tiny(3);
        let b = random_batch(d, 4, 2, 1);
        let (y, _) = forward(&ModelParams::zeros(d), &b).unwrap();
        assert_eq!(y.len(), 4 * 2 * OUTPUTS);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_per_sequence_length() {
        let d = tiny(3);
        let p = ModelParams::init(d, 3);
        for m in [1, 10, 32] {
            let (y, cache) = forward(&p, &random_batch(d, m, 1, 2)).unwrap();
            assert_eq!(y.len(), m * OUTPUTS);
            assert_eq!(cache.bidirectional_output().len(), m * 2 * d.hidden);
        }
    }

    #[test]
    fn scalar_cell_matches_hand_computation() {
        // x = 1, every gate weight 1, biases 0, one step
        let (w, u, b) = ([1.0; 4], [1.0; 4], [0.0; 4]);
        let v = LstmView {
            input: 1,
            hidden: 1,
            w: &w,
            u: &u,
            b: &b,
        };
        let h = lstm_sequence(v, &[1.0], 1, 1, false);
        let s = sigmoid(1.0);
        let expected = (s * 1f64.tanh()).tanh() * s;
        assert!((h[0] - expected).abs() < 1e-15);
        assert!((h[0] - 0.3696).abs() < 1e-4);
    }

    #[test]
    fn perfect_targets_give_zero_loss_and_gradient() {
        let d = tiny(4);
        let p = ModelParams::init(d, 5);
        let b = random_batch(d, 3, 2, 6);
        let (y, cache) = forward(&p, &b).unwrap();
        let (g, loss) = backward(&p, &cache, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubled_errors_quadruple_loss() {
        let d = tiny(4);
        let p = ModelParams::init(d, 5);
        let b = random_batch(d, 3, 2, 6);
        let (y, cache) = forward(&p, &b).unwrap();
        let t = b.targets.unwrap();
        let t2: Vec<f64> = y.iter().zip(&t).map(|(y, t)| y - 2.0 * (y - t)).collect();
        let (_, l1) = backward(&p, &cache, &t).unwrap();
        let (_, l2) = backward(&p, &cache, &t2).unwrap();
        assert!((l2 - 4.0 * l1).abs() <= 1e-12 * l2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = tiny(4);
        let mut p = ModelParams::zeros(d);
        scramble(&mut p, 11);
        let b = random_batch(d, 3, 2, 12);
        let t = b.targets.clone().unwrap();
        let (_, cache) = forward(&p, &b).unwrap();
        let (g, _) = backward(&p, &cache, &t).unwrap();
        let loss_at = |q: &ModelParams| mse(&forward(q, &b).unwrap().0, &t);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-5;
        for _ in 0..20 {
            let k = rng.gen_range(0..p.len());
            let mut q = p.clone();
            q.values_mut()[k] += h;
            let up = loss_at(&q);
            q.values_mut()[k] -= 2.0 * h;
            let down = loss_at(&q);
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.values()[k];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                assert!(
                    (analytic - numeric).abs() / scale <= 1e-5,
                    "coord {k}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn bidirectional_reversal() {
        let d = tiny(3);
        let mut p = ModelParams::zeros(d);
        scramble(&mut p, 21);
        let (m, size) = (5, 2);
        let b = random_batch(d, m, size, 22);
        let mut rev = b.clone();
        let w = size * d.input;
        for t in 0..m {
            rev.inputs[t * w..(t + 1) * w].copy_from_slice(&b.inputs[(m - 1 - t) * w..(m - t) * w]);
        }
        let mut swapped = p.clone();
        swapped.swap_directions();
        let (_, c1) = forward(&p, &b).unwrap();
        let (_, c2) = forward(&swapped, &rev).unwrap();
        let width = size * 2 * d.hidden;
        for t in 0..m {
            let a = &c1.bidirectional_output()[t * width..(t + 1) * width];
            let r = &c2.bidirectional_output()[(m - 1 - t) * width..(m - t) * width];
            for row in 0..size {
                let h = d.hidden;
                let (af, ab) = a[row * 2 * h..(row + 1) * 2 * h].split_at(h);
                let (rf, rb) = r[row * 2 * h..(row + 1) * 2 * h].split_at(h);
                for (x, y) in af.iter().zip(rb).chain(ab.iter().zip(rf)) {
                    assert!((x - y).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn overflow_is_reported_with_step() {
        let d = tiny(2);
        let mut p = ModelParams::init(d, 1);
        let b = random_batch(d, 3, 1, 2);
        p.set_output_bias([0.0, f64::INFINITY]);
        assert!(matches!(
            forward(&p, &b),
            Err(Error::NonFiniteActivation { step: 0 })
        ));
        p.set_output_bias([0.0, 0.0]);
        assert!(forward(&p, &b).is_ok());
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let p = ModelParams::init(tiny(2), 1);
        let q = ModelParams::init(tiny(3), 1);
        let b = random_batch(tiny(2), 2, 1, 2);
        let (y, cache) = forward(&p, &b).unwrap();
        assert!(backward(&q, &cache, &y).is_err());
        assert!(backward(&p, &cache, &y[1..]).is_err());
    }
}
