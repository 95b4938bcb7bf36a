//! Bidirectional LSTM parameters, forward pass, and backpropagation through
//! time.
//!
//! Two stacked bidirectional layers: layer 1 reads the raw window, layer 2
//! reads the per-step concatenation of layer 1's forward and backward hidden
//! states (after inverted dropout when training). The network output is a
//! dense tanh layer over the concatenated final forward / final backward
//! hidden state of layer 2, followed by a linear scalar.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetError;

/// One gate's weights: input projection (H x in), recurrent projection
/// (H x H), and bias (H).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub w_x: Vec<Vec<f64>>,
    pub w_h: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl GateWeights {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_x: vec![vec![0.0; input]; hidden],
            w_h: vec![vec![0.0; hidden]; hidden],
            b: vec![0.0; hidden],
        }
    }

    fn init(hidden: usize, input: usize, k: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut g = Self::zeros(hidden, input);
        for row in &mut g.w_x {
            for v in row.iter_mut() {
                *v = rng.gen_range(-k..k);
            }
        }
        for row in &mut g.w_h {
            for v in row.iter_mut() {
                *v = rng.gen_range(-k..k);
            }
        }
        for v in &mut g.b {
            *v = rng.gen_range(-k..k);
        }
        g
    }
}

/// Input, forget, cell, and output gates of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub input: GateWeights,
    pub forget: GateWeights,
    pub cell: GateWeights,
    pub output: GateWeights,
}

impl LstmCellParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            input: GateWeights::zeros(hidden, input),
            forget: GateWeights::zeros(hidden, input),
            cell: GateWeights::zeros(hidden, input),
            output: GateWeights::zeros(hidden, input),
        }
    }

    fn init(hidden: usize, input: usize, k: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut c = Self {
            input: GateWeights::init(hidden, input, k, rng),
            forget: GateWeights::init(hidden, input, k, rng),
            cell: GateWeights::init(hidden, input, k, rng),
            output: GateWeights::init(hidden, input, k, rng),
        };
        // Open forget gates at the start of training.
        for b in &mut c.forget.b {
            *b = 1.0;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLayerParams {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

/// Full parameter set of the two-layer bidirectional forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub fc: usize,
    pub layer1: BiLayerParams,
    pub layer2: BiLayerParams,
    /// Dense head: fc x 2H weights and fc bias, tanh activation.
    pub fc_w: Vec<Vec<f64>>,
    pub fc_b: Vec<f64>,
    /// Linear output over the dense activations.
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize, fc: usize) -> Self {
        Self {
            input_dim,
            hidden,
            fc,
            layer1: BiLayerParams {
                forward: LstmCellParams::zeros(hidden, input_dim),
                backward: LstmCellParams::zeros(hidden, input_dim),
            },
            layer2: BiLayerParams {
                forward: LstmCellParams::zeros(hidden, 2 * hidden),
                backward: LstmCellParams::zeros(hidden, 2 * hidden),
            },
            fc_w: vec![vec![0.0; 2 * hidden]; fc],
            fc_b: vec![0.0; fc],
            out_w: vec![0.0; fc],
            out_b: 0.0,
        }
    }

    /// Seeded uniform(-k, k) initialization with k = 1/sqrt(hidden);
    /// forget-gate biases start at 1.
    pub fn init(input_dim: usize, hidden: usize, fc: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden, fc);
        p.layer1 = BiLayerParams {
            forward: LstmCellParams::init(hidden, input_dim, k, rng),
            backward: LstmCellParams::init(hidden, input_dim, k, rng),
        };
        p.layer2 = BiLayerParams {
            forward: LstmCellParams::init(hidden, 2 * hidden, k, rng),
            backward: LstmCellParams::init(hidden, 2 * hidden, k, rng),
        };
        for row in &mut p.fc_w {
            for v in row.iter_mut() {
                *v = rng.gen_range(-k..k);
            }
        }
        for v in &mut p.fc_b {
            *v = rng.gen_range(-k..k);
        }
        for v in &mut p.out_w {
            *v = rng.gen_range(-k..k);
        }
        p.out_b = rng.gen_range(-k..k);
        p
    }

    fn rows(&self) -> Vec<&Vec<f64>> {
        let mut rows = Vec::new();
        for layer in [&self.layer1, &self.layer2] {
            for cell in [&layer.forward, &layer.backward] {
                for gate in [&cell.input, &cell.forget, &cell.cell, &cell.output] {
                    rows.extend(gate.w_x.iter());
                    rows.extend(gate.w_h.iter());
                    rows.push(&gate.b);
                }
            }
        }
        rows.extend(self.fc_w.iter());
        rows.push(&self.fc_b);
        rows.push(&self.out_w);
        rows
    }

    fn rows_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut rows = Vec::new();
        for layer in [&mut self.layer1, &mut self.layer2] {
            for cell in [&mut layer.forward, &mut layer.backward] {
                for gate in [
                    &mut cell.input,
                    &mut cell.forget,
                    &mut cell.cell,
                    &mut cell.output,
                ] {
                    rows.extend(gate.w_x.iter_mut());
                    rows.extend(gate.w_h.iter_mut());
                    rows.push(&mut gate.b);
                }
            }
        }
        rows.extend(self.fc_w.iter_mut());
        rows.push(&mut self.fc_b);
        rows.push(&mut self.out_w);
        rows
    }

    pub fn n_params(&self) -> usize {
        self.rows().iter().map(|r| r.len()).sum::<usize>() + 1
    }

    /// Deterministic flat layout: layers, directions, gates (input, forget,
    /// cell, output; within a gate w_x, w_h, b row-major), then the head.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        for row in self.rows() {
            flat.extend_from_slice(row);
        }
        flat.push(self.out_b);
        flat
    }

    pub fn unflatten_into(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut at = 0;
        for row in self.rows_mut() {
            let len = row.len();
            row.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        self.out_b = flat[at];
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden, self.fc)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate and state activations of one direction at one time step.
#[derive(Debug, Clone)]
pub struct StepState {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn matvec(m: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    for (row, o) in m.iter().zip(out.iter_mut()) {
        let mut acc = 0.0;
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        *o += acc;
    }
}

fn cell_step(
    p: &LstmCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    time: usize,
) -> Result<StepState, NetError> {
    let hidden = p.input.b.len();
    let mut pre = [
        p.input.b.clone(),
        p.forget.b.clone(),
        p.cell.b.clone(),
        p.output.b.clone(),
    ];
    for (gate, z) in [&p.input, &p.forget, &p.cell, &p.output]
        .into_iter()
        .zip(pre.iter_mut())
    {
        matvec(&gate.w_x, x, z);
        matvec(&gate.w_h, h_prev, z);
    }
    let [zi, zf, zg, zo] = pre;
    let i: Vec<f64> = zi.into_iter().map(sigmoid).collect();
    let f: Vec<f64> = zf.into_iter().map(sigmoid).collect();
    let g: Vec<f64> = zg.into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = zo.into_iter().map(sigmoid).collect();
    let mut c = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for k in 0..hidden {
        c[k] = f[k] * c_prev[k] + i[k] * g[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteActivation {
            time_step: time,
            what: "cell state",
        });
    }
    Ok(StepState {
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    })
}

/// Run one direction over the window. `order` gives the processing sequence
/// of time indices; states are stored by time index.
fn run_direction(
    p: &LstmCellParams,
    xs: &[Vec<f64>],
    order: impl Iterator<Item = usize>,
) -> Result<Vec<StepState>, NetError> {
    let hidden = p.input.b.len();
    let mut states: Vec<Option<StepState>> = vec![None; xs.len()];
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for t in order {
        let s = cell_step(p, &xs[t], &h, &c, t)?;
        h.clone_from(&s.h);
        c.clone_from(&s.c);
        states[t] = Some(s);
    }
    Ok(states.into_iter().map(|s| s.unwrap()).collect())
}

#[derive(Debug, Clone)]
struct LayerCache {
    xs: Vec<Vec<f64>>,
    fwd: Vec<StepState>,
    bwd: Vec<StepState>,
}

/// Everything needed to backpropagate one sample.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer1: LayerCache,
    layer2: LayerCache,
    /// Per-step keep/scale factors (0 or 1/(1-rate)); identity when absent.
    dp1_mask: Option<Vec<Vec<f64>>>,
    dp2_mask: Option<Vec<f64>>,
    h_drop: Vec<f64>,
    a_fc: Vec<f64>,
    pub y_hat: f64,
}

/// Draw an inverted-dropout mask: entries are 1/(1-rate) with probability
/// 1-rate, else 0.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

/// Forward pass over one window (features x w). Training mode applies
/// inverted dropout after layer 1 (per step) and on the final concatenated
/// state; `rng` is only consulted when training with a positive rate.
pub fn forward(
    params: &LstmParams,
    input: &[Vec<f64>],
    dropout: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardCache, NetError> {
    let w = input.first().map(|r| r.len()).unwrap_or(0);
    if input.len() != params.input_dim {
        return Err(NetError::InputDimMismatch {
            expected: params.input_dim,
            got: input.len(),
        });
    }
    if w == 0 {
        return Err(NetError::EmptyWindow);
    }
    let hidden = params.hidden;
    let drop_on = training && dropout > 0.0;

    let xs1: Vec<Vec<f64>> = (0..w)
        .map(|t| input.iter().map(|row| row[t]).collect())
        .collect();
    let l1f = run_direction(&params.layer1.forward, &xs1, 0..w)?;
    let l1b = run_direction(&params.layer1.backward, &xs1, (0..w).rev())?;

    let dp1_mask = drop_on.then(|| {
        (0..w)
            .map(|_| dropout_mask(2 * hidden, dropout, rng))
            .collect::<Vec<_>>()
    });
    let xs2: Vec<Vec<f64>> = (0..w)
        .map(|t| {
            let mut v: Vec<f64> = l1f[t].h.iter().chain(l1b[t].h.iter()).copied().collect();
            if let Some(masks) = &dp1_mask {
                for (x, m) in v.iter_mut().zip(&masks[t]) {
                    *x *= m;
                }
            }
            v
        })
        .collect();

    let l2f = run_direction(&params.layer2.forward, &xs2, 0..w)?;
    let l2b = run_direction(&params.layer2.backward, &xs2, (0..w).rev())?;

    // Final state: last forward step and last backward step (time index 0).
    let h_cat: Vec<f64> = l2f[w - 1].h.iter().chain(l2b[0].h.iter()).copied().collect();
    let dp2_mask = drop_on.then(|| dropout_mask(2 * hidden, dropout, rng));
    let h_drop: Vec<f64> = match &dp2_mask {
        Some(m) => h_cat.iter().zip(m).map(|(v, s)| v * s).collect(),
        None => h_cat,
    };

    let mut z_fc = params.fc_b.clone();
    matvec(&params.fc_w, &h_drop, &mut z_fc);
    let a_fc: Vec<f64> = z_fc.into_iter().map(f64::tanh).collect();
    let mut y_hat = params.out_b;
    for (w_o, a) in params.out_w.iter().zip(&a_fc) {
        y_hat += w_o * a;
    }
    if !y_hat.is_finite() {
        return Err(NetError::NonFiniteActivation {
            time_step: w - 1,
            what: "output",
        });
    }

    Ok(ForwardCache {
        layer1: LayerCache {
            xs: xs1,
            fwd: l1f,
            bwd: l1b,
        },
        layer2: LayerCache {
            xs: xs2,
            fwd: l2f,
            bwd: l2b,
        },
        dp1_mask,
        dp2_mask,
        h_drop,
        a_fc,
        y_hat,
    })
}

struct GateGrads<'a> {
    dz: Vec<f64>,
    gate: &'a mut GateWeights,
}

/// BPTT through one direction. `dh_out[t]` is the loss gradient on this
/// direction's hidden state at time t; returns the gradient on the layer
/// inputs per time step and accumulates parameter gradients.
fn bptt_direction(
    p: &LstmCellParams,
    states: &[StepState],
    xs: &[Vec<f64>],
    dh_out: &[Vec<f64>],
    order: &[usize],
    grads: &mut LstmCellParams,
) -> Vec<Vec<f64>> {
    let w = xs.len();
    let hidden = p.input.b.len();
    let in_dim = xs[0].len();
    let zeros = vec![0.0; hidden];
    let mut dxs = vec![vec![0.0; in_dim]; w];
    let mut dh_carry = vec![0.0; hidden];
    let mut dc_carry = vec![0.0; hidden];

    for pos in (0..w).rev() {
        let t = order[pos];
        let prev = if pos > 0 { Some(order[pos - 1]) } else { None };
        let (h_prev, c_prev) = match prev {
            Some(pt) => (&states[pt].h, &states[pt].c),
            None => (&zeros, &zeros),
        };
        let s = &states[t];

        let mut dh = dh_out[t].clone();
        for (v, c) in dh.iter_mut().zip(&dh_carry) {
            *v += c;
        }

        let mut dzs = [
            vec![0.0; hidden], // input
            vec![0.0; hidden], // forget
            vec![0.0; hidden], // cell
            vec![0.0; hidden], // output
        ];
        let mut dc = vec![0.0; hidden];
        for k in 0..hidden {
            let do_k = dh[k] * s.tanh_c[k];
            dzs[3][k] = do_k * s.o[k] * (1.0 - s.o[k]);
            dc[k] = dc_carry[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let di_k = dc[k] * s.g[k];
            dzs[0][k] = di_k * s.i[k] * (1.0 - s.i[k]);
            let dg_k = dc[k] * s.i[k];
            dzs[2][k] = dg_k * (1.0 - s.g[k] * s.g[k]);
            let df_k = dc[k] * c_prev[k];
            dzs[1][k] = df_k * s.f[k] * (1.0 - s.f[k]);
        }

        dh_carry.iter_mut().for_each(|v| *v = 0.0);
        let [dz_i, dz_f, dz_g, dz_o] = dzs;
        let gate_grads = [
            GateGrads { dz: dz_i, gate: &mut grads.input },
            GateGrads { dz: dz_f, gate: &mut grads.forget },
            GateGrads { dz: dz_g, gate: &mut grads.cell },
            GateGrads { dz: dz_o, gate: &mut grads.output },
        ];
        for (gg, gate_params) in gate_grads
            .into_iter()
            .zip([&p.input, &p.forget, &p.cell, &p.output])
        {
            for k in 0..hidden {
                let dz = gg.dz[k];
                if dz == 0.0 {
                    continue;
                }
                let wx_row = &mut gg.gate.w_x[k];
                for (acc, x) in wx_row.iter_mut().zip(&xs[t]) {
                    *acc += dz * x;
                }
                let wh_row = &mut gg.gate.w_h[k];
                for (acc, h) in wh_row.iter_mut().zip(h_prev) {
                    *acc += dz * h;
                }
                gg.gate.b[k] += dz;
                for (dx, wv) in dxs[t].iter_mut().zip(&gate_params.w_x[k]) {
                    *dx += dz * wv;
                }
                for (dhp, wv) in dh_carry.iter_mut().zip(&gate_params.w_h[k]) {
                    *dhp += dz * wv;
                }
            }
        }

        for k in 0..hidden {
            dc_carry[k] = dc[k] * s.f[k];
        }
    }
    dxs
}

/// Backpropagate `d_y = dL/dy_hat` through the cached forward pass,
/// accumulating parameter gradients into `grads`.
pub fn backward(params: &LstmParams, cache: &ForwardCache, d_y: f64, grads: &mut LstmParams) {
    let w = cache.layer1.xs.len();
    let hidden = params.hidden;

    // Head.
    let mut dz_fc = vec![0.0; params.fc];
    for j in 0..params.fc {
        grads.out_w[j] += d_y * cache.a_fc[j];
        let da = d_y * params.out_w[j];
        dz_fc[j] = da * (1.0 - cache.a_fc[j] * cache.a_fc[j]);
    }
    grads.out_b += d_y;
    let mut dh_drop = vec![0.0; 2 * hidden];
    for j in 0..params.fc {
        let dz = dz_fc[j];
        grads.fc_b[j] += dz;
        for k in 0..2 * hidden {
            grads.fc_w[j][k] += dz * cache.h_drop[k];
            dh_drop[k] += params.fc_w[j][k] * dz;
        }
    }
    let dh_cat: Vec<f64> = match &cache.dp2_mask {
        Some(m) => dh_drop.iter().zip(m).map(|(v, s)| v * s).collect(),
        None => dh_drop,
    };

    // Layer 2: loss reaches only the final forward and final backward steps.
    let mut dh2f = vec![vec![0.0; hidden]; w];
    let mut dh2b = vec![vec![0.0; hidden]; w];
    dh2f[w - 1].copy_from_slice(&dh_cat[..hidden]);
    dh2b[0].copy_from_slice(&dh_cat[hidden..]);

    let fwd_order: Vec<usize> = (0..w).collect();
    let bwd_order: Vec<usize> = (0..w).rev().collect();
    let dx2_f = bptt_direction(
        &params.layer2.forward,
        &cache.layer2.fwd,
        &cache.layer2.xs,
        &dh2f,
        &fwd_order,
        &mut grads.layer2.forward,
    );
    let dx2_b = bptt_direction(
        &params.layer2.backward,
        &cache.layer2.bwd,
        &cache.layer2.xs,
        &dh2b,
        &bwd_order,
        &mut grads.layer2.backward,
    );

    // Through DP1 into layer 1's per-step outputs.
    let mut dh1f = vec![vec![0.0; hidden]; w];
    let mut dh1b = vec![vec![0.0; hidden]; w];
    for t in 0..w {
        for k in 0..2 * hidden {
            let mut d = dx2_f[t][k] + dx2_b[t][k];
            if let Some(masks) = &cache.dp1_mask {
                d *= masks[t][k];
            }
            if k < hidden {
                dh1f[t][k] = d;
            } else {
                dh1b[t][k - hidden] = d;
            }
        }
    }

    bptt_direction(
        &params.layer1.forward,
        &cache.layer1.fwd,
        &cache.layer1.xs,
        &dh1f,
        &fwd_order,
        &mut grads.layer1.forward,
    );
    bptt_direction(
        &params.layer1.backward,
        &cache.layer1.bwd,
        &cache.layer1.xs,
        &dh1b,
        &bwd_order,
        &mut grads.layer1.backward,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(features: usize, w: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..features)
            .map(|_| (0..w).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let params = LstmParams::zeros(3, 4, 4);
        let input = random_input(3, 5, &mut rng(1));
        let out = forward(&params, &input, 0.0, false, &mut rng(0)).unwrap();
        assert_eq!(out.y_hat, 0.0);
    }

    #[test]
    fn dropout_zero_training_equals_inference() {
        let mut r = rng(2);
        let params = LstmParams::init(2, 4, 3, &mut r);
        let input = random_input(2, 4, &mut r);
        let train = forward(&params, &input, 0.0, true, &mut rng(7)).unwrap();
        let infer = forward(&params, &input, 0.0, false, &mut rng(8)).unwrap();
        assert_eq!(train.y_hat, infer.y_hat);
    }

    #[test]
    fn window_reversal_changes_output() {
        let mut r = rng(3);
        let params = LstmParams::init(2, 4, 3, &mut r);
        let input = random_input(2, 5, &mut r);
        let reversed: Vec<Vec<f64>> = input
            .iter()
            .map(|row| row.iter().rev().copied().collect())
            .collect();
        let a = forward(&params, &input, 0.0, false, &mut rng(0)).unwrap();
        let b = forward(&params, &reversed, 0.0, false, &mut rng(0)).unwrap();
        assert_ne!(a.y_hat, b.y_hat);
    }

    #[test]
    fn flatten_round_trips() {
        let mut r = rng(4);
        let params = LstmParams::init(3, 5, 4, &mut r);
        let flat = params.flatten();
        let mut rebuilt = LstmParams::zeros(3, 5, 4);
        rebuilt.unflatten_into(&flat);
        assert_eq!(params, rebuilt);
    }

    /// Analytic gradients against central finite differences on small seeded
    /// instances. Entries where both gradients are below 1e-7 are treated as
    /// zero (finite differencing has no signal there).
    #[test]
    fn gradient_check_against_finite_differences() {
        for seed in 0..5 {
            let max_rel = gradient_check(seed, 4, 3, 2);
            assert!(max_rel < 1e-4, "seed {seed}: max relative error {max_rel}");
        }
    }

    fn gradient_check(seed: u64, hidden: usize, w: usize, features: usize) -> f64 {
        let mut r = rng(seed);
        let params = LstmParams::init(features, hidden, hidden, &mut r);
        let input = random_input(features, w, &mut r);
        let target = r.gen_range(-1.0..1.0);

        let loss = |p: &LstmParams| -> f64 {
            let out = forward(p, &input, 0.0, false, &mut rng(0)).unwrap();
            (out.y_hat - target).powi(2)
        };

        let cache = forward(&params, &input, 0.0, true, &mut rng(0)).unwrap();
        let mut grads = params.zeros_like();
        backward(&params, &cache, 2.0 * (cache.y_hat - target), &mut grads);
        let analytic = grads.flatten();

        let eps = 1e-5;
        let flat = params.flatten();
        let mut scratch = params.clone();
        let mut max_rel: f64 = 0.0;
        for idx in 0..flat.len() {
            let mut bumped = flat.clone();
            bumped[idx] += eps;
            scratch.unflatten_into(&bumped);
            let up = loss(&scratch);
            bumped[idx] -= 2.0 * eps;
            scratch.unflatten_into(&bumped);
            let down = loss(&scratch);
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs());
            if denom > 1e-7 {
                max_rel = max_rel.max((a - numeric).abs() / denom);
            }
        }
        max_rel
    }

    #[test]
    fn zero_loss_zeroes_output_layer_gradient() {
        let mut r = rng(6);
        let params = LstmParams::init(2, 4, 3, &mut r);
        let input = random_input(2, 3, &mut r);
        let cache = forward(&params, &input, 0.0, true, &mut rng(0)).unwrap();
        let mut grads = params.zeros_like();
        backward(&params, &cache, 0.0, &mut grads);
        assert!(grads.out_w.iter().all(|&v| v == 0.0));
        assert_eq!(grads.out_b, 0.0);
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_linear_in_residual() {
        let mut r = rng(7);
        let params = LstmParams::init(2, 4, 3, &mut r);
        let input = random_input(2, 3, &mut r);
        let cache = forward(&params, &input, 0.0, true, &mut rng(0)).unwrap();
        let mut g1 = params.zeros_like();
        backward(&params, &cache, 0.7, &mut g1);
        let mut g2 = params.zeros_like();
        backward(&params, &cache, 1.4, &mut g2);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert_eq!(2.0 * a, b);
        }
    }

    /// With every backward-direction parameter zeroed, the network equals a
    /// purely forward two-layer LSTM with the same forward parameters.
    #[test]
    fn zeroed_backward_direction_degenerates_to_forward_lstm() {
        let mut r = rng(8);
        let mut params = LstmParams::init(2, 4, 4, &mut r);
        let hidden = params.hidden;
        params.layer1.backward = LstmCellParams::zeros(hidden, params.input_dim);
        params.layer2.backward = LstmCellParams::zeros(hidden, 2 * hidden);
        let input = random_input(2, 5, &mut r);
        let full = forward(&params, &input, 0.0, false, &mut rng(0)).unwrap();

        // Independent forward-only evaluation.
        let w = input[0].len();
        let step = |p: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let hdim = p.input.b.len();
            let mut new_h = vec![0.0; hdim];
            let mut new_c = vec![0.0; hdim];
            for k in 0..hdim {
                let pre = |g: &GateWeights| -> f64 {
                    // Same accumulation order as the library: each dot
                    // product sums separately before joining the bias.
                    let mut z = g.b[k];
                    let mut acc = 0.0;
                    for (wv, xv) in g.w_x[k].iter().zip(x) {
                        acc += wv * xv;
                    }
                    z += acc;
                    let mut acc = 0.0;
                    for (wv, hv) in g.w_h[k].iter().zip(h) {
                        acc += wv * hv;
                    }
                    z += acc;
                    z
                };
                let i = sigmoid(pre(&p.input));
                let f = sigmoid(pre(&p.forget));
                let g = pre(&p.cell).tanh();
                let o = sigmoid(pre(&p.output));
                new_c[k] = f * c[k] + i * g;
                new_h[k] = o * new_c[k].tanh();
            }
            (new_h, new_c)
        };

        let mut h1 = vec![0.0; hidden];
        let mut c1 = vec![0.0; hidden];
        let mut h2 = vec![0.0; hidden];
        let mut c2 = vec![0.0; hidden];
        for t in 0..w {
            let x1: Vec<f64> = input.iter().map(|row| row[t]).collect();
            let (nh1, nc1) = step(&params.layer1.forward, &x1, &h1, &c1);
            h1 = nh1;
            c1 = nc1;
            let mut x2 = h1.clone();
            x2.resize(2 * hidden, 0.0);
            let (nh2, nc2) = step(&params.layer2.forward, &x2, &h2, &c2);
            h2 = nh2;
            c2 = nc2;
        }
        let mut h_cat = h2.clone();
        h_cat.resize(2 * hidden, 0.0);
        let mut y = params.out_b;
        for (j, row) in params.fc_w.iter().enumerate() {
            let mut z = params.fc_b[j];
            let mut acc = 0.0;
            for (wv, hv) in row.iter().zip(&h_cat) {
                acc += wv * hv;
            }
            z += acc;
            y += params.out_w[j] * z.tanh();
        }
        assert_eq!(full.y_hat, y);
    }

    /// Keep probability and inverted scaling hold statistically.
    #[test]
    fn dropout_mask_statistics() {
        let rate = 0.3;
        let n = 10_000;
        let mut r = rng(9);
        let mask = dropout_mask(n, rate, &mut r);
        let kept = mask.iter().filter(|&&v| v > 0.0).count() as f64 / n as f64;
        let sigma = (rate * (1.0 - rate) / n as f64).sqrt();
        assert!(
            (kept - (1.0 - rate)).abs() < 3.0 * sigma,
            "keep fraction {kept}"
        );
        // Inverted scaling keeps the expected activation at 1.
        let mean: f64 = mask.iter().sum::<f64>() / n as f64;
        let scale_sigma = sigma / (1.0 - rate);
        assert!((mean - 1.0).abs() < 3.0 * scale_sigma, "mask mean {mean}");
    }
}
