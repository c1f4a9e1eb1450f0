use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParamId, ParamStore, Tensor, Var};

/// Weights of one LSTM layer. Gate blocks are laid out `[input, forget,
/// candidate, output]` along the `4 * hidden` axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input_weights: ParamId,
    pub hidden_weights: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    /// Uniform weights, zero bias except `+1` on the forget gate.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NumericsError> {
        let input_weights = store.register_uniform(
            format!("{prefix}.w_input"),
            &[input_dim, 4 * hidden_dim],
            rng,
        )?;
        let hidden_weights = store.register_uniform(
            format!("{prefix}.w_hidden"),
            &[hidden_dim, 4 * hidden_dim],
            rng,
        )?;
        let mut b = vec![0.0; 4 * hidden_dim];
        b[hidden_dim..2 * hidden_dim].fill(1.0);
        let bias = store.register(format!("{prefix}.bias"), Tensor::vector(b)?)?;
        Ok(Self {
            input_weights,
            hidden_weights,
            bias,
            input_dim,
            hidden_dim,
        })
    }
}

/// One cell update from the raw input `x` (`1 x input_dim`).
pub fn lstm_step(
    g: &mut Graph,
    p: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NumericsError> {
    let wx = g.param(p.input_weights);
    let b = g.param(p.bias);
    let projected = g.affine(x, wx, b)?;
    lstm_step_projected(g, p, projected, h, c)
}

/// One cell update where `x W_input + bias` has already been computed.
pub fn lstm_step_projected(
    g: &mut Graph,
    p: &LstmParams,
    projected: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NumericsError> {
    let k = p.hidden_dim;
    if g.value(h).len() != k || g.value(c).len() != k || g.value(projected).len() != 4 * k {
        return Err(NumericsError::Dimension {
            context: "lstm state",
            left: vec![4 * k],
            right: vec![g.value(projected).len(), g.value(h).len(), g.value(c).len()],
        });
    }
    let wh = g.param(p.hidden_weights);
    let recurrent = g.matmul(h, wh)?;
    let gates = g.add(projected, recurrent)?;
    let i = g.slice_cols(gates, 0, k)?;
    let i = g.sigmoid(i);
    let f = g.slice_cols(gates, k, k)?;
    let f = g.sigmoid(f);
    let cand = g.slice_cols(gates, 2 * k, k)?;
    let cand = g.tanh(cand);
    let o = g.slice_cols(gates, 3 * k, k)?;
    let o = g.sigmoid(o);
    let kept = g.mul(f, c)?;
    let written = g.mul(i, cand)?;
    let c_next = g.add(kept, written)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Runs the layer over the rows of `inputs` (`T x input_dim`), returning the
/// hidden state after every step and the final cell state.
pub fn run_lstm(
    g: &mut Graph,
    p: &LstmParams,
    inputs: Var,
    h0: Var,
    c0: Var,
) -> Result<(Vec<Var>, Var), NumericsError> {
    let wx = g.param(p.input_weights);
    let b = g.param(p.bias);
    let projected = g.affine(inputs, wx, b)?;
    let steps = g.value(projected).rows();
    let (mut h, mut c) = (h0, c0);
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let row = g.slice_rows(projected, t, 1)?;
        (h, c) = lstm_step_projected(g, p, row, h, c)?;
        hs.push(h);
    }
    Ok((hs, c))
}
