//! Network building blocks. Each block owns its parameters as [`Param`]
//! arrays and is executed by binding those parameters onto a [`Graph`] as
//! leaves (`bind`), running the block's ops (`forward`), and after a
//! backward pass scattering leaf gradients back (`collect_grads`).
//!
//! Weight matrices are stored `input x output` so a batch forward is a
//! single `x . W` product without transposition.

use rand::RngExt;

use crate::graph::{Graph, Var};
use crate::{NnError, Real};

/// A learned tensor and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> Param<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            rows,
            cols,
            value: vec![F::zero(); rows * cols],
            grad: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, value: Vec<F>) -> Self {
        assert_eq!(value.len(), rows * cols);
        Param { rows, cols, grad: vec![F::zero(); value.len()], value }
    }

    /// He-style uniform init: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn he_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl rand::Rng) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let value = (0..rows * cols)
            .map(|_| F::from_f64(rng.random_range(-limit..limit)))
            .collect();
        Param { rows, cols, grad: vec![F::zero(); rows * cols], value }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = F::zero();
        }
    }

    pub fn fill(&mut self, v: F) {
        for x in &mut self.value {
            *x = v;
        }
    }
}

fn bind_param<F: Real>(g: &mut Graph<F>, p: &Param<F>) -> Var {
    g.leaf(p.rows, p.cols, p.value.clone()).expect("param shape is valid")
}

fn collect_param<F: Real>(g: &Graph<F>, v: Var, p: &mut Param<F>) {
    let gr = g.grad(v);
    for (d, &s) in p.grad.iter_mut().zip(gr.iter()) {
        *d += s;
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

fn activate<F: Real>(g: &mut Graph<F>, a: Activation, x: Var) -> Var {
    match a {
        Activation::Identity => x,
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// Dense layer `y = x . W + b`.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
}

pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl<F: Real> Linear<F> {
    pub fn new(input: usize, output: usize, rng: &mut impl rand::Rng) -> Self {
        Linear {
            w: Param::he_uniform(input, output, input, rng),
            b: Param::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols
    }

    pub fn bind(&self, g: &mut Graph<F>) -> LinearVars {
        LinearVars { w: bind_param(g, &self.w), b: bind_param(g, &self.b) }
    }

    pub fn forward(g: &mut Graph<F>, vars: &LinearVars, x: Var) -> Result<Var, NnError> {
        let xw = g.matmul(x, vars.w)?;
        g.add_row(xw, vars.b)
    }

    pub fn collect_grads(&mut self, g: &Graph<F>, vars: &LinearVars) {
        collect_param(g, vars.w, &mut self.w);
        collect_param(g, vars.b, &mut self.b);
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Shape of a feed-forward stack: hidden layers share one activation,
/// the head gets its own.
#[derive(Clone, Debug)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub hidden_act: Activation,
    pub out_act: Activation,
}

impl MlpSpec {
    pub fn relu(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        MlpSpec { input, hidden, output, hidden_act: Activation::Relu, out_act: Activation::Identity }
    }
}

#[derive(Clone, Debug)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
    pub hidden_act: Activation,
    pub out_act: Activation,
}

pub struct MlpVars {
    pub layers: Vec<LinearVars>,
}

impl<F: Real> Mlp<F> {
    pub fn new(spec: &MlpSpec, rng: &mut impl rand::Rng) -> Self {
        let mut dims = vec![spec.input];
        dims.extend_from_slice(&spec.hidden);
        dims.push(spec.output);
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp { layers, hidden_act: spec.hidden_act, out_act: spec.out_act }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim())
    }

    pub fn bind(&self, g: &mut Graph<F>) -> MlpVars {
        MlpVars { layers: self.layers.iter().map(|l| l.bind(g)).collect() }
    }

    pub fn forward(&self, g: &mut Graph<F>, vars: &MlpVars, x: Var) -> Result<Var, NnError> {
        let (_, c) = g.shape(x);
        if c != self.input_dim() {
            return Err(NnError::DimMismatch {
                op: "mlp_forward",
                lhs: (1, self.input_dim()),
                rhs: (1, c),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, lv) in vars.layers.iter().enumerate() {
            h = Linear::forward(g, lv, h)?;
            h = activate(g, if i == last { self.out_act } else { self.hidden_act }, h);
        }
        Ok(h)
    }

    /// Convenience inference path: run one batch through a scratch graph.
    pub fn infer(&self, x: &[F], rows: usize) -> Result<Vec<F>, NnError> {
        if x.len() != rows * self.input_dim() {
            return Err(NnError::DimMismatch {
                op: "mlp_infer",
                lhs: (rows, self.input_dim()),
                rhs: (1, x.len()),
            });
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let xv = g.leaf_slice(rows, self.input_dim(), x)?;
        let y = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(y).to_vec())
    }

    pub fn collect_grads(&mut self, g: &Graph<F>, vars: &MlpVars) {
        for (l, lv) in self.layers.iter_mut().zip(vars.layers.iter()) {
            l.collect_grads(g, lv);
        }
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Single-layer LSTM cell, gates ordered input, forget, cell, output.
/// The forget-gate bias starts at one so early sequences pass state through.
#[derive(Clone, Debug)]
pub struct Lstm<F> {
    pub input: usize,
    pub hidden: usize,
    /// Input-to-gate weights, each `input x hidden`.
    pub wx: [Param<F>; 4],
    /// Hidden-to-gate weights, each `hidden x hidden`.
    pub wh: [Param<F>; 4],
    /// Gate biases, each `1 x hidden`.
    pub b: [Param<F>; 4],
}

pub struct LstmVars {
    pub wx: [Var; 4],
    pub wh: [Var; 4],
    pub b: [Var; 4],
}

impl<F: Real> Lstm<F> {
    pub fn new(input: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        let wx = std::array::from_fn(|_| Param::he_uniform(input, hidden, input, rng));
        let wh = std::array::from_fn(|_| Param::he_uniform(hidden, hidden, hidden, rng));
        let mut b = [
            Param::zeros(1, hidden),
            Param::zeros(1, hidden),
            Param::zeros(1, hidden),
            Param::zeros(1, hidden),
        ];
        b[1].fill(F::one());
        Lstm { input, hidden, wx, wh, b }
    }

    pub fn bind(&self, g: &mut Graph<F>) -> LstmVars {
        let bp = |g: &mut Graph<F>, ps: &[Param<F>; 4]| {
            [
                bind_param(g, &ps[0]),
                bind_param(g, &ps[1]),
                bind_param(g, &ps[2]),
                bind_param(g, &ps[3]),
            ]
        };
        LstmVars { wx: bp(g, &self.wx), wh: bp(g, &self.wh), b: bp(g, &self.b) }
    }

    fn gate(
        &self,
        g: &mut Graph<F>,
        vars: &LstmVars,
        k: usize,
        x: Var,
        h: Var,
    ) -> Result<Var, NnError> {
        let xz = g.matmul(x, vars.wx[k])?;
        let hz = g.matmul(h, vars.wh[k])?;
        let z = g.add(xz, hz)?;
        g.add_row(z, vars.b[k])
    }

    /// One cell step on a batch: `x` is `B x input`, state is `B x hidden`.
    pub fn step(
        &self,
        g: &mut Graph<F>,
        vars: &LstmVars,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), NnError> {
        let zi = self.gate(g, vars, 0, x, h)?;
        let zf = self.gate(g, vars, 1, x, h)?;
        let zc = self.gate(g, vars, 2, x, h)?;
        let zo = self.gate(g, vars, 3, x, h)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cc = g.tanh(zc);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c)?;
        let ic = g.mul(i, cc)?;
        let c_next = g.add(fc, ic)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over `seq` (each element `B x input`) from a zero
    /// state and returns the hidden state after every step. An empty
    /// sequence yields no states; the caller treats the zero state as the
    /// encoding of nothing.
    pub fn forward_sequence_states(
        &self,
        g: &mut Graph<F>,
        vars: &LstmVars,
        seq: &[Var],
        batch: usize,
    ) -> Result<Vec<Var>, NnError> {
        let mut h = g.zeros(batch, self.hidden)?;
        let mut c = g.zeros(batch, self.hidden)?;
        let mut states = Vec::with_capacity(seq.len());
        for &x in seq {
            let (hn, cn) = self.step(g, vars, x, h, c)?;
            h = hn;
            c = cn;
            states.push(h);
        }
        Ok(states)
    }

    /// Final hidden state of a sequence; the zero vector for an empty one.
    pub fn forward_sequence(
        &self,
        g: &mut Graph<F>,
        vars: &LstmVars,
        seq: &[Var],
        batch: usize,
    ) -> Result<Var, NnError> {
        let states = self.forward_sequence_states(g, vars, seq, batch)?;
        match states.last() {
            Some(&h) => Ok(h),
            None => g.zeros(batch, self.hidden),
        }
    }

    pub fn collect_grads(&mut self, g: &Graph<F>, vars: &LstmVars) {
        for k in 0..4 {
            collect_param(g, vars.wx[k], &mut self.wx[k]);
            collect_param(g, vars.wh[k], &mut self.wh[k]);
            collect_param(g, vars.b[k], &mut self.b[k]);
        }
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut ps = Vec::with_capacity(12);
        for k in 0..4 {
            ps.push(&self.wx[k]);
            ps.push(&self.wh[k]);
            ps.push(&self.b[k]);
        }
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut ps = Vec::with_capacity(12);
        let (wx, wh, b) = (&mut self.wx, &mut self.wh, &mut self.b);
        for ((x, h), bb) in wx.iter_mut().zip(wh.iter_mut()).zip(b.iter_mut()) {
            ps.push(x);
            ps.push(h);
            ps.push(bb);
        }
        ps
    }
}

/// Permutation-invariant set encoder: embed each element with an MLP,
/// score each embedding with a second MLP, softmax the scores, and return
/// the weighted sum of embeddings. A single attention head.
#[derive(Clone, Debug)]
pub struct AttentionPool<F> {
    pub embed: Mlp<F>,
    pub head: Mlp<F>,
}

pub struct AttentionPoolVars {
    pub embed: MlpVars,
    pub head: MlpVars,
}

impl<F: Real> AttentionPool<F> {
    pub fn new(embed: Mlp<F>, head: Mlp<F>) -> Result<Self, NnError> {
        if head.input_dim() != embed.output_dim() || head.output_dim() != 1 {
            return Err(NnError::Contract(format!(
                "attention head must map embed dim {} to a scalar score, got {} -> {}",
                embed.output_dim(),
                head.input_dim(),
                head.output_dim()
            )));
        }
        Ok(AttentionPool { embed, head })
    }

    pub fn element_dim(&self) -> usize {
        self.embed.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.embed.output_dim()
    }

    pub fn bind(&self, g: &mut Graph<F>) -> AttentionPoolVars {
        AttentionPoolVars { embed: self.embed.bind(g), head: self.head.bind(g) }
    }

    /// Pools an `n x element_dim` set into a `1 x output_dim` vector.
    /// `set` of `None` encodes the empty set and pools to zeros.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        vars: &AttentionPoolVars,
        set: Option<Var>,
    ) -> Result<Var, NnError> {
        let set = match set {
            Some(s) => s,
            None => return g.zeros(1, self.output_dim()),
        };
        let emb = self.embed.forward(g, &vars.embed, set)?;
        let scores = self.head.forward(g, &vars.head, emb)?;
        Self::pool_scored(g, emb, scores)
    }

    /// Softmax-weighted sum given precomputed embeddings (`n x d`) and
    /// scores (`n x 1`). Exposed so callers can share embeddings across
    /// growing prefixes of one set.
    pub fn pool_scored(g: &mut Graph<F>, emb: Var, scores: Var) -> Result<Var, NnError> {
        let st = g.transpose(scores);
        let lse = g.logsumexp_rows(st);
        let centred = g.sub_scalar(st, lse)?;
        let weights = g.exp(centred);
        g.matmul(weights, emb)
    }

    pub fn collect_grads(&mut self, g: &Graph<F>, vars: &AttentionPoolVars) {
        self.embed.collect_grads(g, &vars.embed);
        self.head.collect_grads(g, &vars.head);
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        let mut ps = self.embed.params();
        ps.extend(self.head.params());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut ps: Vec<&mut Param<F>> = self.embed.params_mut();
        ps.extend(self.head.params_mut());
        ps
    }
}
