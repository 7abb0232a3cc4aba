use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    pub rel_tol: f64,
    /// Entries whose analytic/numeric difference is below this pass regardless
    /// of relative error.
    pub abs_floor: f64,
    /// Check at most this many scalars per parameter (sampled with `seed`);
    /// `None` checks every scalar.
    pub max_per_param: Option<usize>,
    pub seed: u64,
    /// Negative control: add 1.0 to the first analytic gradient entry of the
    /// named parameter before comparing.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
            max_per_param: None,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    /// Largest relative error among entries not covered by the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn scalars_checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    /// Parameters ordered from worst to best relative error.
    pub fn worst(&self, n: usize) -> Vec<&GradCheckEntry> {
        let mut v: Vec<&GradCheckEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| {
            b.max_rel_error
                .total_cmp(&a.max_rel_error)
                .then(b.max_abs_error.total_cmp(&a.max_abs_error))
        });
        v.truncate(n);
        v
    }
}

/// Compares accumulated gradients with central finite differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every trainable scalar (or a sample).
///
/// `loss` builds a fresh graph from the current parameter values and returns
/// the scalar loss node. Parameter gradients in `store` are zeroed first and
/// hold the analytic gradient on return.
pub fn finite_diff_check<F>(store: &mut ParamStore, mut loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, NodeId)>,
{
    if opts.epsilon <= 0.0 {
        return Err(Error::domain("finite_diff_check", "epsilon must be positive"));
    }
    store.zero_grad();
    let (graph, node) = loss(store)?;
    graph.backward(node, store)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.get(id).value.len();
        let indices: Vec<usize> = match opts.max_per_param {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let name = store.get(id).name.clone();
        let mut analytic_grad = store.get(id).grad.data().to_vec();
        if opts.corrupt.as_deref() == Some(name.as_str()) {
            analytic_grad[indices[0]] += 1.0;
        }

        let mut entry = GradCheckEntry {
            name,
            checked: indices.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: indices[0],
            analytic: analytic_grad[indices[0]],
            numeric: f64::NAN,
            passed: true,
        };
        let mut worst_score = f64::NEG_INFINITY;
        for &i in &indices {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + opts.epsilon;
            let plus = eval(&mut loss, store)?;
            store.get_mut(id).value.data_mut()[i] = original - opts.epsilon;
            let minus = eval(&mut loss, store)?;
            store.get_mut(id).value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let analytic = analytic_grad[i];
            let abs_err = (analytic - numeric).abs();
            let scale = analytic.abs().max(numeric.abs());
            let rel_err = if abs_err <= opts.abs_floor || scale == 0.0 {
                0.0
            } else {
                abs_err / scale
            };
            if !(rel_err < opts.rel_tol || abs_err <= opts.abs_floor) {
                entry.passed = false;
            }
            entry.max_abs_error = entry.max_abs_error.max(abs_err);
            let score = rel_err + abs_err * 1e-12;
            if score > worst_score {
                worst_score = score;
                entry.max_rel_error = entry.max_rel_error.max(rel_err);
                entry.worst_index = i;
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        entries.push(entry);
    }
    Ok(GradCheckReport {
        entries,
        rel_tol: opts.rel_tol,
        abs_floor: opts.abs_floor,
    })
}

fn eval<F>(loss: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Graph, NodeId)>,
{
    let (g, node) = loss(store)?;
    Ok(g.value(node).item())
}
