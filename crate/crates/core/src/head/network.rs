use super::weights::{NetworkWeights, AANN, LSTM_B, LSTM_WH, LSTM_WX, PANN};
use crate::data::SeverityVector;
use crate::{Error, Matrix, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (x, y) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = W x + b` for row-major `W` (rows × cols).
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + dot(row, x);
    }
}

/// `out += W x`.
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += dot(row, x);
    }
}

/// `dx += Wᵀ dy`.
fn matvec_t_add(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += a * g;
        }
    }
}

/// `dW += dy ⊗ x`.
fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, v) in row.iter_mut().zip(x) {
            *d += g * v;
        }
    }
}

/// Softmax with the maximum subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone)]
struct LstmCache {
    /// T × 4H post-activation gates (i, f, g, o).
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct AnnCache {
    /// Post-ReLU hidden activations per step.
    a0: Vec<Vec<f64>>,
    a1: Vec<Vec<f64>>,
}

/// Everything computed by [`forward`], kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// T × H top-layer hidden states.
    pub hidden: Matrix,
    /// T × M per-step estimates.
    pub per_time_scores: Matrix,
    pub attention_logits: Vec<f64>,
    pub attention: Vec<f64>,
    pub prediction: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    lstm: [LstmCache; 2],
    p_ann: AnnCache,
    a_ann: AnnCache,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.attention.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attention.is_empty()
    }
}

fn lstm_forward(weights: &NetworkWeights, layer: usize, inputs: &[Vec<f64>]) -> Result<LstmCache> {
    let h = weights.shape().hidden;
    let wx = weights.block(LSTM_WX[layer]);
    let wh = weights.block(LSTM_WH[layer]);
    let b = weights.block(LSTM_B[layer]);
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut cache = LstmCache {
        gates: Vec::with_capacity(inputs.len()),
        cells: Vec::with_capacity(inputs.len()),
        hidden: Vec::with_capacity(inputs.len()),
    };
    let mut z = vec![0.0; 4 * h];
    for (t, x) in inputs.iter().enumerate() {
        affine(wx, b, x, &mut z);
        matvec_add(wh, &h_prev, &mut z);
        let mut gates = vec![0.0; 4 * h];
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let g_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            gates[j] = i_g;
            gates[h + j] = f_g;
            gates[2 * h + j] = g_g;
            gates[3 * h + j] = o_g;
            c[j] = f_g * c_prev[j] + i_g * g_g;
            hn[j] = o_g * c[j].tanh();
        }
        if hn.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("LSTM layer {layer} at time step {t}")));
        }
        h_prev.clone_from(&hn);
        c_prev.clone_from(&c);
        cache.gates.push(gates);
        cache.cells.push(c);
        cache.hidden.push(hn);
    }
    Ok(cache)
}

/// Three affine layers with ReLU after the first two.
fn ann_forward(weights: &NetworkWeights, base: usize, x: &[f64], out: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let h = weights.shape().hidden;
    let mut a0 = vec![0.0; h];
    affine(weights.block(base), weights.block(base + 1), x, &mut a0);
    a0.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut a1 = vec![0.0; h];
    affine(weights.block(base + 2), weights.block(base + 3), &a0, &mut a1);
    a1.iter_mut().for_each(|v| *v = v.max(0.0));
    affine(weights.block(base + 4), weights.block(base + 5), &a1, out);
    (a0, a1)
}

/// Runs the head on a T × K input sequence.
pub fn forward(inputs: &Matrix, weights: &NetworkWeights) -> Result<ForwardTrace> {
    let shape = weights.shape();
    let (t_n, k) = inputs.shape();
    if t_n == 0 {
        return Err(Error::Empty("input sequence".into()));
    }
    if k != shape.input {
        return Err(Error::dims("network input width", shape.input, k));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    let rows: Vec<Vec<f64>> = (0..t_n).map(|t| inputs.row(t).iter().copied().collect()).collect();
    let l0 = lstm_forward(weights, 0, &rows)?;
    let l1 = lstm_forward(weights, 1, &l0.hidden)?;

    let (h, m) = (shape.hidden, shape.outputs);
    let mut per_time = Matrix::zeros(t_n, m);
    let mut logits = vec![0.0; t_n];
    let mut p_cache = AnnCache { a0: vec![], a1: vec![] };
    let mut a_cache = AnnCache { a0: vec![], a1: vec![] };
    let mut y_t = vec![0.0; m];
    for t in 0..t_n {
        let top = &l1.hidden[t];
        let (p0, p1) = ann_forward(weights, PANN, top, &mut y_t);
        let mut e = [0.0];
        let (q0, q1) = ann_forward(weights, AANN, top, &mut e);
        if y_t.iter().chain(&e).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output networks at time step {t}")));
        }
        for j in 0..m {
            per_time[(t, j)] = y_t[j];
        }
        logits[t] = e[0];
        p_cache.a0.push(p0);
        p_cache.a1.push(p1);
        a_cache.a0.push(q0);
        a_cache.a1.push(q1);
    }
    let attention = softmax(&logits);
    debug_assert!(
        attention.iter().all(|a| *a >= 0.0) && (attention.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
        "attention is not a distribution: {attention:?}"
    );
    let prediction: Vec<f64> = (0..m)
        .map(|j| (0..t_n).map(|t| attention[t] * per_time[(t, j)]).sum())
        .collect();
    let hidden = Matrix::from_fn(t_n, h, |t, j| l1.hidden[t][j]);
    Ok(ForwardTrace {
        hidden,
        per_time_scores: per_time,
        attention_logits: logits,
        attention,
        prediction,
        inputs: rows,
        lstm: [l0, l1],
        p_ann: p_cache,
        a_ann: a_cache,
    })
}

/// `Σ_observed (ŷₘ − yₘ)²` with targets given directly (`None` = unobserved).
pub fn masked_mse_targets(trace: &ForwardTrace, targets: &[Option<f64>]) -> Result<f64> {
    if targets.len() != trace.prediction.len() {
        return Err(Error::dims("score count", trace.prediction.len(), targets.len()));
    }
    Ok(trace
        .prediction
        .iter()
        .zip(targets)
        .filter_map(|(p, y)| y.map(|y| (p - y).powi(2)))
        .sum())
}

/// Squared error summed over observed scores only.
pub fn masked_mse(trace: &ForwardTrace, y: &SeverityVector) -> Result<f64> {
    masked_mse_targets(trace, &y.values())
}

/// Gradients of the masked loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as [`NetworkWeights::params`].
    pub weights: Vec<f64>,
    /// T × K.
    pub inputs: Matrix,
}

fn ann_backward(
    weights: &NetworkWeights,
    base: usize,
    x: &[f64],
    a0: &[f64],
    a1: &[f64],
    d_out: &[f64],
    grad: &mut [f64],
    dx: &mut [f64],
) {
    let h = weights.shape().hidden;
    let layout = weights.layout();
    let off = |i: usize| layout[base + i].range();

    outer_add(&mut grad[off(4)], d_out, a1);
    for (g, d) in grad[off(5)].iter_mut().zip(d_out) {
        *g += d;
    }
    let mut d1 = vec![0.0; h];
    matvec_t_add(weights.block(base + 4), d_out, &mut d1);
    for (d, a) in d1.iter_mut().zip(a1) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    outer_add(&mut grad[off(2)], &d1, a0);
    for (g, d) in grad[off(3)].iter_mut().zip(&d1) {
        *g += d;
    }
    let mut d0 = vec![0.0; h];
    matvec_t_add(weights.block(base + 2), &d1, &mut d0);
    for (d, a) in d0.iter_mut().zip(a0) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    outer_add(&mut grad[off(0)], &d0, x);
    for (g, d) in grad[off(1)].iter_mut().zip(&d0) {
        *g += d;
    }
    matvec_t_add(weights.block(base), &d0, dx);
}

/// Backpropagation through time for one LSTM layer. Returns the gradient
/// with respect to the layer's inputs.
fn lstm_backward(
    weights: &NetworkWeights,
    layer: usize,
    inputs: &[Vec<f64>],
    cache: &LstmCache,
    d_hidden: &[Vec<f64>],
    grad: &mut [f64],
) -> Vec<Vec<f64>> {
    let h = weights.shape().hidden;
    let in_dim = inputs[0].len();
    let layout = weights.layout();
    let wx_r = layout[LSTM_WX[layer]].range();
    let wh_r = layout[LSTM_WH[layer]].range();
    let b_r = layout[LSTM_B[layer]].range();
    let wx = weights.block(LSTM_WX[layer]);
    let wh = weights.block(LSTM_WH[layer]);
    let t_n = inputs.len();
    let zeros = vec![0.0; h];

    let mut dx = vec![vec![0.0; in_dim]; t_n];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..t_n).rev() {
        let g = &cache.gates[t];
        let c = &cache.cells[t];
        let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &cache.hidden[t - 1] } else { &zeros };
        for j in 0..h {
            let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let dh = d_hidden[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let d_o = dh * tc;
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g_g * i_g * (1.0 - i_g);
            dz[h + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
            dz[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
            dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        outer_add(&mut grad[wx_r.clone()], &dz, &inputs[t]);
        outer_add(&mut grad[wh_r.clone()], &dz, h_prev);
        for (gb, d) in grad[b_r.clone()].iter_mut().zip(&dz) {
            *gb += d;
        }
        matvec_t_add(wx, &dz, &mut dx[t]);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(wh, &dz, &mut dh_next);
    }
    dx
}

/// Reverse-mode gradients of the masked loss with targets given directly.
pub fn backward_targets(trace: &ForwardTrace, weights: &NetworkWeights, targets: &[Option<f64>]) -> Result<Gradients> {
    let shape = weights.shape();
    let (h, m, k) = (shape.hidden, shape.outputs, shape.input);
    let t_n = trace.len();
    if targets.len() != m || trace.prediction.len() != m {
        return Err(Error::dims("score count", m, targets.len()));
    }
    if trace.hidden.ncols() != h || trace.inputs.first().map(|x| x.len()) != Some(k) {
        return Err(Error::dims("trace/weights", format!("hidden {h}, input {k}"), format!("hidden {}", trace.hidden.ncols())));
    }
    let mut grad = vec![0.0; weights.len()];
    let d_pred: Vec<f64> = trace
        .prediction
        .iter()
        .zip(targets)
        .map(|(p, y)| y.map_or(0.0, |y| 2.0 * (p - y)))
        .collect();
    if d_pred.iter().all(|v| *v == 0.0) {
        return Ok(Gradients {
            weights: grad,
            inputs: Matrix::zeros(t_n, k),
        });
    }

    // Attention: ŷ = Σ aᵗ ŷᵗ, a = softmax(e).
    let a = &trace.attention;
    let d_att: Vec<f64> = (0..t_n)
        .map(|t| (0..m).map(|j| d_pred[j] * trace.per_time_scores[(t, j)]).sum())
        .collect();
    let mean: f64 = a.iter().zip(&d_att).map(|(x, y)| x * y).sum();
    let d_logit: Vec<f64> = (0..t_n).map(|t| a[t] * (d_att[t] - mean)).collect();

    let l1 = &trace.lstm[1];
    let mut d_top = vec![vec![0.0; h]; t_n];
    for t in 0..t_n {
        let d_yt: Vec<f64> = d_pred.iter().map(|d| a[t] * d).collect();
        let x = &l1.hidden[t];
        ann_backward(weights, PANN, x, &trace.p_ann.a0[t], &trace.p_ann.a1[t], &d_yt, &mut grad, &mut d_top[t]);
        ann_backward(weights, AANN, x, &trace.a_ann.a0[t], &trace.a_ann.a1[t], &[d_logit[t]], &mut grad, &mut d_top[t]);
    }
    let d_mid = lstm_backward(weights, 1, &trace.lstm[0].hidden, l1, &d_top, &mut grad);
    let d_in = lstm_backward(weights, 0, &trace.inputs, &trace.lstm[0], &d_mid, &mut grad);
    let inputs = Matrix::from_fn(t_n, k, |t, j| d_in[t][j]);
    Ok(Gradients { weights: grad, inputs })
}

/// Gradients of [`masked_mse`] with respect to every weight and every input.
pub fn backward(trace: &ForwardTrace, weights: &NetworkWeights, y: &SeverityVector) -> Result<Gradients> {
    backward_targets(trace, weights, &y.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::NetworkShape;
    use crate::linalg::{gaussian_matrix, rng_stream};
    use proptest::prelude::*;

    fn shape(k: usize, h: usize, m: usize) -> NetworkShape {
        NetworkShape { input: k, hidden: h, outputs: m }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let e = [0.3, -1.2, 4.0, 0.0];
        let a = softmax(&e);
        let shifted: Vec<f64> = e.iter().map(|v| v + 123.4).collect();
        for (x, y) in a.iter().zip(softmax(&shifted)) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[1e308, 1e308]), vec![0.5, 0.5]);
    }

    #[test]
    fn single_step_attention_is_one() {
        let w = NetworkWeights::init(shape(3, 6, 2), 1, 0);
        let tr = forward(&Matrix::from_element(1, 3, 0.5), &w).unwrap();
        assert_eq!(tr.attention, vec![1.0]);
        assert_eq!(tr.prediction, vec![tr.per_time_scores[(0, 0)], tr.per_time_scores[(0, 1)]]);
    }

    #[test]
    fn zero_attention_output_weights_give_uniform_attention() {
        let mut w = NetworkWeights::init(shape(3, 6, 2), 2, 0);
        w.tensor_mut("a_ann.w2").unwrap().fill(0.0);
        let x = gaussian_matrix(&mut rng_stream(1, 0), 5, 3);
        let tr = forward(&x, &w).unwrap();
        for a in &tr.attention {
            assert_eq!(*a, 0.2);
        }
    }

    #[test]
    fn single_unit_trace_by_hand() {
        // One input, one hidden unit, one output; zero input and zero biases.
        let s = shape(1, 1, 1);
        let mut w = NetworkWeights::zeros(s);
        let set = |w: &mut NetworkWeights, name: &str, v: &[f64]| w.tensor_mut(name).unwrap().copy_from_slice(v);
        set(&mut w, "lstm0.w_x", &[0.3, -0.2, 0.5, 0.1]);
        set(&mut w, "lstm0.w_h", &[0.4, 0.6, -0.7, 0.2]);
        set(&mut w, "lstm1.w_x", &[1.0, 0.5, 2.0, -1.0]);
        set(&mut w, "lstm1.w_h", &[0.1, 0.1, 0.1, 0.1]);
        set(&mut w, "p_ann.w0", &[1.0]);
        set(&mut w, "p_ann.w1", &[1.0]);
        set(&mut w, "p_ann.w2", &[2.0]);
        set(&mut w, "p_ann.b2", &[0.25]);
        let tr = forward(&Matrix::zeros(2, 1), &w).unwrap();
        // With x = 0 and zero biases every gate pre-activation is a multiple
        // of h_prev = 0 at t = 0, so i = f = o = ½ and g = 0: c = h = 0. The
        // recursion stays at zero for both layers and both steps.
        assert_eq!(tr.hidden, Matrix::zeros(2, 1));
        // P-ANN on a zero state: ReLU(0) → ReLU(0) → 2·0 + 0.25.
        assert_eq!(tr.prediction, vec![0.25]);

        // Bias the cell candidate of layer 0 to get a nonzero trajectory.
        set(&mut w, "lstm0.b", &[0.0, 0.0, 1.0, 0.0]);
        let tr = forward(&Matrix::zeros(2, 1), &w).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        // Layer 0, t = 0.
        let g0 = 1f64.tanh();
        let c0 = 0.5 * g0;
        let h0 = 0.5 * c0.tanh();
        // Layer 0, t = 1.
        let (i1, f1, g1, o1) = (sig(0.4 * h0), sig(0.6 * h0), (1.0 - 0.7 * h0).tanh(), sig(0.2 * h0));
        let c1 = f1 * c0 + i1 * g1;
        let h1 = o1 * c1.tanh();
        // Layer 1 on (h0, h1).
        let step = |x: f64, hp: f64, cp: f64| {
            let (i, f, g, o) = (sig(x + 0.1 * hp), sig(0.5 * x + 0.1 * hp), (2.0 * x + 0.1 * hp).tanh(), sig(-x + 0.1 * hp));
            let c = f * cp + i * g;
            (o * c.tanh(), c)
        };
        let (u0, k0) = step(h0, 0.0, 0.0);
        let (u1, _) = step(h1, u0, k0);
        assert!((tr.hidden[(0, 0)] - u0).abs() < 1e-15);
        assert!((tr.hidden[(1, 0)] - u1).abs() < 1e-15);
        // Attention logits are zero (all A-ANN weights zero) → uniform.
        let y = |u: f64| 2.0 * u.max(0.0) + 0.25;
        assert!((tr.prediction[0] - 0.5 * (y(u0) + y(u1))).abs() < 1e-15);
    }

    #[test]
    fn masked_loss_values() {
        let w = NetworkWeights::init(shape(2, 4, 2), 3, 0);
        let tr = forward(&Matrix::from_element(3, 2, 0.1), &w).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let exact = SeverityVector::observed_all(names.clone(), tr.prediction.clone()).unwrap();
        assert_eq!(masked_mse(&tr, &exact).unwrap(), 0.0);
        let one = SeverityVector::new(names.clone(), vec![Some(tr.prediction[0] - 2.0), None]).unwrap();
        assert!((masked_mse(&tr, &one).unwrap() - 4.0).abs() < 1e-12);
        let none = SeverityVector::new(names, vec![None, None]).unwrap();
        assert_eq!(masked_mse(&tr, &none).unwrap(), 0.0);
        let g = backward(&tr, &w, &none).unwrap();
        assert!(g.weights.iter().all(|v| *v == 0.0));
        assert!(g.inputs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unobserved_slots_do_not_matter() {
        let w = NetworkWeights::init(shape(2, 4, 2), 3, 0);
        let tr = forward(&Matrix::from_element(3, 2, 0.1), &w).unwrap();
        let a = masked_mse_targets(&tr, &[Some(1.0), None]).unwrap();
        let ga = backward_targets(&tr, &w, &[Some(1.0), None]).unwrap();
        // Same observed entry, garbage in the other slot of a different vector.
        let names = vec!["a".to_string(), "b".to_string()];
        let v = SeverityVector::new(names, vec![Some(1.0), None]).unwrap();
        assert_eq!(masked_mse(&tr, &v).unwrap(), a);
        assert_eq!(backward(&tr, &w, &v).unwrap(), ga);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences_small() {
        let s = shape(3, 5, 2);
        let w = NetworkWeights::init(s, 7, 0);
        let x = gaussian_matrix(&mut rng_stream(8, 0), 4, 3).map(f64::abs);
        let targets = [Some(0.7), Some(-0.4)];
        let tr = forward(&x, &w).unwrap();
        let g = backward_targets(&tr, &w, &targets).unwrap();
        let loss = |w: &NetworkWeights, x: &Matrix| masked_mse_targets(&forward(x, w).unwrap(), &targets).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.params_mut()[i] += h;
            wm.params_mut()[i] -= h;
            let fd = (loss(&wp, &x) - loss(&wm, &x)) / (2.0 * h);
            assert!(rel_err(fd, g.weights[i]) < 1e-4, "param {i}: {fd} vs {}", g.weights[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&w, &xp) - loss(&w, &xm)) / (2.0 * h);
            assert!(rel_err(fd, g.inputs[i]) < 1e-4, "input {i}: {fd} vs {}", g.inputs[i]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = NetworkWeights::init(shape(3, 4, 1), 1, 0);
        assert!(forward(&Matrix::zeros(0, 3), &w).is_err());
        assert!(forward(&Matrix::zeros(2, 2), &w).is_err());
        let mut x = Matrix::zeros(2, 3);
        x[(1, 1)] = f64::NAN;
        assert!(forward(&x, &w).is_err());
    }

    proptest! {
        #[test]
        fn attention_is_a_distribution(seed in 0u64..200, t in 1usize..12, scale in 0.0f64..20.0) {
            let w = NetworkWeights::init(shape(3, 6, 2), seed, 0);
            let x = gaussian_matrix(&mut rng_stream(seed, 1), t, 3) * scale;
            let tr = forward(&x, &w).unwrap();
            prop_assert!(tr.attention.iter().all(|a| *a >= 0.0));
            prop_assert!((tr.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let again = forward(&x, &w).unwrap();
            prop_assert_eq!(tr.prediction, again.prediction);
        }
    }
}
