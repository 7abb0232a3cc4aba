//! Token embedding lookup and the GRU that turns it into the memory matrix.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Uniform initialization bound for weight matrices.
pub const INIT_BOUND: f64 = 0.1;

/// `[D, n]` matrix whose column `j` is the vector of `tokens[j]`.
pub fn embed(tokens: &[String], table: &EmbeddingTable) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::domain("embed", "empty sentence"));
    }
    let (dim, n) = (table.dim(), tokens.len());
    let mut data = vec![0.0; dim * n];
    for (j, tok) in tokens.iter().enumerate() {
        for (i, &v) in table.lookup(tok).iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    Tensor::matrix(dim, n, data)
}

const GATES: [&str; 3] = ["z", "r", "h"];

/// Parameter handles of one GRU: input weights `w_*` `[hidden, input]`,
/// recurrent weights `u_*` `[hidden, hidden]` and biases `b_*` `[hidden]`
/// for the update gate, reset gate and candidate state.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

impl GruParams {
    /// Adds freshly initialized parameters named `{prefix}.w_z`, … to `store`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        for gate in GATES {
            store.insert(format!("{prefix}.w_{gate}"), Tensor::uniform(&[hidden, input], INIT_BOUND, rng), true)?;
            store.insert(format!("{prefix}.u_{gate}"), Tensor::uniform(&[hidden, hidden], INIT_BOUND, rng), true)?;
            store.insert(format!("{prefix}.b_{gate}"), Tensor::zeros(&[hidden]), true)?;
        }
        Self::resolve(store, prefix, input, hidden)
    }

    /// Looks up existing parameters, checking their shapes.
    pub fn resolve(store: &ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let get = |name: String, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            let actual = store.get(id).value.shape();
            if actual != shape {
                return Err(Error::Config(format!("parameter {name} has shape {actual:?}, expected {shape:?}")));
            }
            Ok(id)
        };
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(get(format!("{prefix}.w_{gate}"), &[hidden, input])?);
            u.push(get(format!("{prefix}.u_{gate}"), &[hidden, hidden])?);
            b.push(get(format!("{prefix}.b_{gate}"), &[hidden])?);
        }
        Ok(GruParams {
            input,
            hidden,
            w: w.try_into().expect("three gates"),
            u: u.try_into().expect("three gates"),
            b: b.try_into().expect("three gates"),
        })
    }

    pub fn scalar_count(input: usize, hidden: usize) -> usize {
        3 * (hidden * input + hidden * hidden + hidden)
    }

    /// Runs left to right over the columns of `x` (`[input, n]`) from `h₀ = 0`
    /// and returns the `[hidden, n]` matrix of states.
    ///
    /// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
    /// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 2 || xs[0] != self.input {
            return Err(Error::shape("gru", &xs, &[self.input, 0]));
        }
        let n = xs[1];
        let [wz, wr, wh] = self.w.map(|id| g.param(store, id));
        let [uz, ur, uh] = self.u.map(|id| g.param(store, id));
        let [bz, br, bh] = self.b.map(|id| g.param(store, id));
        let xz = g.matmul(wz, x)?;
        let xr = g.matmul(wr, x)?;
        let xh = g.matmul(wh, x)?;

        let mut h = g.constant(Tensor::zeros(&[self.hidden]));
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let gate = |g: &mut Graph, xw: NodeId, u: NodeId, b: NodeId, prev: NodeId| -> Result<NodeId> {
                let col = g.column(xw, t)?;
                let rec = g.matmul(u, prev)?;
                let s = g.add(col, rec)?;
                g.add(s, b)
            };
            let z_pre = gate(g, xz, uz, bz, h)?;
            let z = g.sigmoid(z_pre);
            let r_pre = gate(g, xr, ur, br, h)?;
            let r = g.sigmoid(r_pre);
            let rh = g.mul(r, h)?;
            let cand_pre = gate(g, xh, uh, bh, rh)?;
            let cand = g.tanh(cand_pre);
            let keep = g.affine(z, -1.0, 1.0);
            let old = g.mul(keep, h)?;
            let new = g.mul(z, cand)?;
            h = g.add(old, new)?;
            states.push(h);
        }
        g.stack_cols(&states)
    }
}
