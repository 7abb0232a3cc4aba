//! The full network: parameters, per-sentence forward graph and objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::corpus::{sentence_label_one_hot, GoldChannels, TermKind};
use crate::decoder::{self, TermSpan};
use crate::embeddings::EmbeddingTable;
use crate::encoder::{embed, GruParams, INIT_BOUND};
use crate::error::{Error, Result};
use crate::heads::{self, LossReport};
use crate::memory;
use crate::sharing::{self, Family, SharingConfig, TensorSharing};
use crate::tensor::Tensor;
use crate::train::Dropout;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word embedding size `D`.
    pub embed_dim: usize,
    /// Memory size `d`.
    pub hidden_dim: usize,
    /// Interaction slices per tensor `K`.
    pub interactions: usize,
    /// Shared basis size `m` of the factored tensors.
    pub factor_rank: usize,
    /// Memory layers `T`.
    pub layers: usize,
    /// Number of categories `C`.
    pub categories: usize,
    pub sharing: SharingConfig,
    /// Fine-tune word vectors instead of keeping them fixed.
    pub train_embeddings: bool,
}

impl ModelConfig {
    /// Full-size settings: `D = 150`, `d = 50`, `K = 20`, `T = 2`.
    pub fn full_size(categories: usize, factor_rank: usize) -> Self {
        ModelConfig {
            embed_dim: 150,
            hidden_dim: 50,
            interactions: 20,
            factor_rank,
            layers: 2,
            categories,
            sharing: SharingConfig::full(),
            train_embeddings: false,
        }
    }

    /// Smallest configuration that exercises every path.
    pub fn tiny(embed_dim: usize, categories: usize) -> Self {
        ModelConfig {
            embed_dim,
            hidden_dim: 4,
            interactions: 2,
            factor_rank: 2,
            layers: 2,
            categories,
            sharing: SharingConfig::full(),
            train_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("interactions", self.interactions),
            ("factor_rank", self.factor_rank),
            ("layers", self.layers),
            ("categories", self.categories),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars; `embedding_rows` only counts
    /// when embeddings are trained.
    ///
    /// ```text
    /// 3(dD + d² + d)               encoder GRU
    /// + 2·3(2·(2K)² + 2K)          aspect and opinion feature GRUs
    /// + 2·2K + 2d² + 2·3·2K        v, Q and token heads
    /// + 2Cd + C·2·2d               prototypes and sentence heads
    /// + 4·(KMd² + KCm)             factored tensors, or
    ///   4·CKd² (independent), 4·Kd² (single shared)
    /// ```
    pub fn param_count(&self, embedding_rows: usize) -> usize {
        let (dd, d, k, m, c) = (
            self.embed_dim,
            self.hidden_dim,
            self.interactions,
            self.factor_rank,
            self.categories,
        );
        let encoder = 3 * (d * dd + d * d + d);
        let features = 6 * (8 * k * k + 2 * k);
        let shared = 4 * k + 2 * d * d + 12 * k;
        let per_category = 2 * c * d + 4 * c * d;
        let tensors = match self.sharing.tensor_sharing {
            TensorSharing::Factored => 4 * (k * m * d * d + k * c * m),
            TensorSharing::Independent => 4 * c * k * d * d,
            TensorSharing::SingleShared => 4 * k * d * d,
        };
        let emb = if self.train_embeddings { embedding_rows * dd } else { 0 };
        encoder + features + shared + per_category + tensors + emb
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TensorParams {
    Factored { basis: [ParamId; 4], weights: [ParamId; 4] },
    Independent(Vec<[ParamId; 4]>),
    Shared([ParamId; 4]),
}

/// Parameter handles resolved from a store.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embeddings: Option<ParamId>,
    encoder: GruParams,
    feature_a: GruParams,
    feature_p: GruParams,
    v_a: ParamId,
    v_p: ParamId,
    q_a: ParamId,
    q_p: ParamId,
    w_a: ParamId,
    w_p: ParamId,
    u_a: Vec<ParamId>,
    u_p: Vec<ParamId>,
    sentence_w: Vec<ParamId>,
    tensors: TensorParams,
}

fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
    let actual = store.get(id).value.shape();
    if actual != shape {
        return Err(Error::Config(format!("parameter {name} has shape {actual:?}, expected {shape:?}")));
    }
    Ok(id)
}

fn family_ids(f: impl Fn(Family) -> Result<ParamId>) -> Result<[ParamId; 4]> {
    Ok([f(Family::GA)?, f(Family::GP)?, f(Family::DA)?, f(Family::DP)?])
}

impl Layout {
    fn register(cfg: &ModelConfig, table: &EmbeddingTable, store: &mut ParamStore, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dd, d, k, m, c) = (cfg.embed_dim, cfg.hidden_dim, cfg.interactions, cfg.factor_rank, cfg.categories);
        let b = INIT_BOUND;
        if cfg.train_embeddings {
            store.insert("embeddings", table.matrix(), true)?;
        }
        GruParams::register(store, "encoder", dd, d, &mut rng)?;
        GruParams::register(store, "feature_gru.aspect", 2 * k, 2 * k, &mut rng)?;
        GruParams::register(store, "feature_gru.opinion", 2 * k, 2 * k, &mut rng)?;
        store.insert("attention.v_a", Tensor::uniform(&[2 * k], b, &mut rng), true)?;
        store.insert("attention.v_p", Tensor::uniform(&[2 * k], b, &mut rng), true)?;
        store.insert("prototype.q_a", Tensor::uniform(&[d, d], b, &mut rng), true)?;
        store.insert("prototype.q_p", Tensor::uniform(&[d, d], b, &mut rng), true)?;
        store.insert("head.w_a", Tensor::uniform(&[3, 2 * k], b, &mut rng), true)?;
        store.insert("head.w_p", Tensor::uniform(&[3, 2 * k], b, &mut rng), true)?;
        for cat in 0..c {
            store.insert(format!("category.{cat}.u_a"), Tensor::uniform(&[d], b, &mut rng), true)?;
            store.insert(format!("category.{cat}.u_p"), Tensor::uniform(&[d], b, &mut rng), true)?;
            store.insert(
                format!("category.{cat}.sentence_w"),
                Tensor::uniform(&[2, 2 * d], b, &mut rng),
                true,
            )?;
        }
        match cfg.sharing.tensor_sharing {
            TensorSharing::Factored => {
                let basis_bound = b / (m as f64).sqrt();
                for f in Family::ALL {
                    let name = f.name();
                    store.insert(
                        format!("tensor.{name}.basis"),
                        Tensor::uniform(&[k, m, d, d], basis_bound, &mut rng),
                        true,
                    )?;
                    store.insert(format!("tensor.{name}.weights"), Tensor::uniform(&[k, c, m], b, &mut rng), true)?;
                }
            }
            TensorSharing::Independent => {
                for cat in 0..c {
                    for f in Family::ALL {
                        store.insert(
                            format!("category.{cat}.tensor.{}", f.name()),
                            Tensor::uniform(&[k, d, d], b, &mut rng),
                            true,
                        )?;
                    }
                }
            }
            TensorSharing::SingleShared => {
                for f in Family::ALL {
                    store.insert(
                        format!("tensor.{}.shared", f.name()),
                        Tensor::uniform(&[k, d, d], b, &mut rng),
                        true,
                    )?;
                }
            }
        }
        Ok(())
    }

    fn resolve(cfg: &ModelConfig, table: &EmbeddingTable, store: &ParamStore) -> Result<Self> {
        let (dd, d, k, m, c) = (cfg.embed_dim, cfg.hidden_dim, cfg.interactions, cfg.factor_rank, cfg.categories);
        let embeddings = if cfg.train_embeddings {
            Some(lookup(store, "embeddings", &[table.rows(), dd])?)
        } else {
            None
        };
        let per_cat = |suffix: &str, shape: &[usize]| -> Result<Vec<ParamId>> {
            (0..c).map(|cat| lookup(store, &format!("category.{cat}.{suffix}"), shape)).collect()
        };
        let tensors = match cfg.sharing.tensor_sharing {
            TensorSharing::Factored => TensorParams::Factored {
                basis: family_ids(|f| lookup(store, &format!("tensor.{}.basis", f.name()), &[k, m, d, d]))?,
                weights: family_ids(|f| lookup(store, &format!("tensor.{}.weights", f.name()), &[k, c, m]))?,
            },
            TensorSharing::Independent => TensorParams::Independent(
                (0..c)
                    .map(|cat| {
                        family_ids(|f| lookup(store, &format!("category.{cat}.tensor.{}", f.name()), &[k, d, d]))
                    })
                    .collect::<Result<_>>()?,
            ),
            TensorSharing::SingleShared => TensorParams::Shared(family_ids(|f| {
                lookup(store, &format!("tensor.{}.shared", f.name()), &[k, d, d])
            })?),
        };
        Ok(Layout {
            embeddings,
            encoder: GruParams::resolve(store, "encoder", dd, d)?,
            feature_a: GruParams::resolve(store, "feature_gru.aspect", 2 * k, 2 * k)?,
            feature_p: GruParams::resolve(store, "feature_gru.opinion", 2 * k, 2 * k)?,
            v_a: lookup(store, "attention.v_a", &[2 * k])?,
            v_p: lookup(store, "attention.v_p", &[2 * k])?,
            q_a: lookup(store, "prototype.q_a", &[d, d])?,
            q_p: lookup(store, "prototype.q_p", &[d, d])?,
            w_a: lookup(store, "head.w_a", &[3, 2 * k])?,
            w_p: lookup(store, "head.w_p", &[3, 2 * k])?,
            u_a: per_cat("u_a", &[d])?,
            u_p: per_cat("u_p", &[d])?,
            sentence_w: per_cat("sentence_w", &[2, 2 * d])?,
            tensors,
        })
    }
}

/// Graph nodes of one (category, channel) pair within a layer.
#[derive(Clone, Copy, Debug)]
pub struct ChannelNodes {
    /// Interaction features before the feature GRU.
    pub interaction: NodeId,
    /// Feature GRU output `r`.
    pub features: NodeId,
    /// Task-mixed features `r̃` (after dropout during training).
    pub refined: NodeId,
    pub scores: NodeId,
    pub attention: NodeId,
    pub summary: NodeId,
    pub summary_mixed: NodeId,
    pub prototype: NodeId,
    pub next_prototype: NodeId,
}

#[derive(Clone, Debug)]
pub struct LayerNodes {
    pub aspect: Vec<ChannelNodes>,
    pub opinion: Vec<ChannelNodes>,
    /// `None` when feature sharing is off.
    pub similarity_a: Option<NodeId>,
    pub similarity_p: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub input: NodeId,
    pub memory: NodeId,
    pub layers: Vec<LayerNodes>,
    pub y_a: Vec<NodeId>,
    pub y_p: Vec<NodeId>,
    pub l: Vec<NodeId>,
}

/// Concrete values of one channel's intermediates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    pub interaction: Tensor,
    pub features: Tensor,
    pub refined: Tensor,
    pub scores: Tensor,
    pub attention: Tensor,
    pub summary: Tensor,
    pub summary_mixed: Tensor,
    pub prototype: Tensor,
    pub next_prototype: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub aspect: Vec<ChannelState>,
    pub opinion: Vec<ChannelState>,
    /// Identity when feature sharing is off.
    pub similarity_a: Tensor,
    pub similarity_p: Tensor,
}

impl LayerState {
    pub fn channel(&self, kind: TermKind) -> &[ChannelState] {
        match kind {
            TermKind::Aspect => &self.aspect,
            TermKind::Opinion => &self.opinion,
        }
    }
}

/// Final predictions for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceOutput {
    /// Per category, `[3, n]` aspect-channel label distributions.
    pub y_a: Vec<Tensor>,
    pub y_p: Vec<Tensor>,
    /// Per category, (absent, present) distribution.
    pub l: Vec<Tensor>,
}

/// A built forward graph together with its named nodes.
pub struct Forward {
    pub graph: Graph,
    pub nodes: ForwardNodes,
}

impl Forward {
    pub fn output(&self) -> SentenceOutput {
        let vals = |ids: &[NodeId]| ids.iter().map(|&id| self.graph.value(id).clone()).collect();
        SentenceOutput {
            y_a: vals(&self.nodes.y_a),
            y_p: vals(&self.nodes.y_p),
            l: vals(&self.nodes.l),
        }
    }

    pub fn memory(&self) -> &Tensor {
        self.graph.value(self.nodes.memory)
    }

    pub fn layer_states(&self) -> Vec<LayerState> {
        let g = &self.graph;
        let chan = |n: &ChannelNodes| ChannelState {
            interaction: g.value(n.interaction).clone(),
            features: g.value(n.features).clone(),
            refined: g.value(n.refined).clone(),
            scores: g.value(n.scores).clone(),
            attention: g.value(n.attention).clone(),
            summary: g.value(n.summary).clone(),
            summary_mixed: g.value(n.summary_mixed).clone(),
            prototype: g.value(n.prototype).clone(),
            next_prototype: g.value(n.next_prototype).clone(),
        };
        self.nodes
            .layers
            .iter()
            .map(|layer| {
                let c = layer.aspect.len();
                let sim = |s: Option<NodeId>| s.map_or_else(|| Tensor::eye(c), |id| g.value(id).clone());
                LayerState {
                    aspect: layer.aspect.iter().map(chan).collect(),
                    opinion: layer.opinion.iter().map(chan).collect(),
                    similarity_a: sim(layer.similarity_a),
                    similarity_p: sim(layer.similarity_p),
                }
            })
            .collect()
    }
}

/// Loss nodes added on top of a forward graph.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub token: NodeId,
    pub sentence: Option<NodeId>,
    pub total: NodeId,
    pub lambda: f64,
}

impl LossNodes {
    pub fn report(&self, g: &Graph) -> LossReport {
        LossReport {
            token: g.value(self.token).item(),
            sentence: self.sentence.map(|s| g.value(s).item()),
            lambda: self.lambda,
            total: g.value(self.total).item(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    categories: Vec<String>,
    embeddings: EmbeddingTable,
    store: ParamStore,
    layout: Layout,
}

impl Model {
    /// A freshly initialized model. `categories` names each category index.
    pub fn new(config: ModelConfig, categories: Vec<String>, embeddings: EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        check_categories(&config, &categories)?;
        if embeddings.dim() != config.embed_dim {
            return Err(Error::Config(format!(
                "embedding dimension {} does not match configured {}",
                embeddings.dim(),
                config.embed_dim
            )));
        }
        let mut store = ParamStore::new();
        Layout::register(&config, &embeddings, &mut store, seed)?;
        Self::from_store(config, categories, embeddings, store)
    }

    /// Wraps existing parameters, checking every expected name and shape.
    pub fn from_store(
        config: ModelConfig,
        categories: Vec<String>,
        embeddings: EmbeddingTable,
        store: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        check_categories(&config, &categories)?;
        let layout = Layout::resolve(&config, &embeddings, &store)?;
        let expected = config.param_count(embeddings.rows());
        if store.scalar_count() != expected {
            return Err(Error::Config(format!(
                "parameter store holds {} values, configuration implies {expected}",
                store.scalar_count()
            )));
        }
        Ok(Model {
            config,
            categories,
            embeddings,
            store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Rebuilds under a different sharing configuration. Parameters whose
    /// name and shape survive are carried over; the rest are freshly
    /// initialized from `seed`.
    pub fn with_sharing(&self, sharing: SharingConfig, seed: u64) -> Result<Model> {
        let config = ModelConfig {
            sharing,
            ..self.config.clone()
        };
        let mut fresh = Model::new(config, self.categories.clone(), self.embeddings.clone(), seed)?;
        for p in fresh.store.iter_mut() {
            if let Some(old) = self.store.by_name(&p.name) {
                if old.value.shape() == p.value.shape() {
                    p.value = old.value.clone();
                }
            }
        }
        Ok(fresh)
    }

    /// Builds the forward graph for one sentence from the parameters in
    /// `store`. Dropout masks are drawn from `dropout` when given.
    pub fn build(&self, store: &ParamStore, tokens: &[String], dropout: Option<&mut Dropout>) -> Result<Forward> {
        self.build_inner(store, tokens, dropout, None)
    }

    /// Like [`Self::build`] without dropout, but with every similarity
    /// matrix replaced by the constant `similarity` when feature sharing is on.
    pub fn build_with_similarity(&self, store: &ParamStore, tokens: &[String], similarity: &Tensor) -> Result<Forward> {
        let c = self.config.categories;
        if similarity.shape() != [c, c] {
            return Err(Error::shape("similarity", similarity.shape(), &[c, c]));
        }
        self.build_inner(store, tokens, None, Some(similarity))
    }

    fn build_inner(
        &self,
        store: &ParamStore,
        tokens: &[String],
        mut dropout: Option<&mut Dropout>,
        fixed_similarity: Option<&Tensor>,
    ) -> Result<Forward> {
        if tokens.is_empty() {
            return Err(Error::domain("forward", "empty sentence"));
        }
        let cfg = &self.config;
        let lay = &self.layout;
        let c_count = cfg.categories;
        let mut g = Graph::new();

        let input = match lay.embeddings {
            Some(id) => {
                let table = g.param(store, id);
                g.gather(table, &self.embeddings.rows_for(tokens))?
            }
            None => g.constant(embed(tokens, &self.embeddings)?),
        };
        let x = match dropout.as_deref_mut() {
            Some(d) => d.apply(&mut g, input)?,
            None => input,
        };
        let memory = lay.encoder.forward(&mut g, store, x)?;

        let tensors: Vec<[NodeId; 4]> = match &lay.tensors {
            TensorParams::Factored { basis, weights } => {
                let basis = basis.map(|id| g.param(store, id));
                let weights = weights.map(|id| g.param(store, id));
                (0..c_count)
                    .map(|c| {
                        let mut out = [memory; 4];
                        for f in 0..4 {
                            out[f] = g.materialize(weights[f], basis[f], c)?;
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?
            }
            TensorParams::Independent(per_cat) => per_cat.iter().map(|ids| ids.map(|id| g.param(store, id))).collect(),
            TensorParams::Shared(ids) => vec![ids.map(|id| g.param(store, id)); c_count],
        };

        let v_a = g.param(store, lay.v_a);
        let v_p = g.param(store, lay.v_p);
        let q_a = g.param(store, lay.q_a);
        let q_p = g.param(store, lay.q_p);
        let mut u_a: Vec<NodeId> = lay.u_a.iter().map(|&id| g.param(store, id)).collect();
        let mut u_p: Vec<NodeId> = lay.u_p.iter().map(|&id| g.param(store, id)).collect();

        let (ga, gp, da, dp) = (Family::GA.index(), Family::GP.index(), Family::DA.index(), Family::DP.index());
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let mut inter_a = Vec::with_capacity(c_count);
            let mut inter_p = Vec::with_capacity(c_count);
            let mut r_a = Vec::with_capacity(c_count);
            let mut r_p = Vec::with_capacity(c_count);
            for c in 0..c_count {
                let t = &tensors[c];
                let ia = memory::interact(&mut g, memory, t[ga], t[da], u_a[c], u_p[c])?;
                let ip = memory::interact(&mut g, memory, t[gp], t[dp], u_a[c], u_p[c])?;
                r_a.push(lay.feature_a.forward(&mut g, store, ia)?);
                r_p.push(lay.feature_p.forward(&mut g, store, ip)?);
                inter_a.push(ia);
                inter_p.push(ip);
            }
            let (s_a, s_p) = if let (true, Some(fixed)) = (cfg.sharing.feature_sharing, fixed_similarity) {
                (Some(g.constant(fixed.clone())), Some(g.constant(fixed.clone())))
            } else if cfg.sharing.feature_sharing {
                (
                    Some(sharing::task_similarity(&mut g, &u_a)?),
                    Some(sharing::task_similarity(&mut g, &u_p)?),
                )
            } else {
                (None, None)
            };
            let mut refined_a = match s_a {
                Some(s) => sharing::mix(&mut g, s, &r_a)?,
                None => r_a.clone(),
            };
            let mut refined_p = match s_p {
                Some(s) => sharing::mix(&mut g, s, &r_p)?,
                None => r_p.clone(),
            };
            if let Some(d) = dropout.as_deref_mut() {
                for r in refined_a.iter_mut().chain(refined_p.iter_mut()) {
                    *r = d.apply(&mut g, *r)?;
                }
            }

            let attn = |g: &mut Graph, refined: &[NodeId], v: NodeId| -> Result<Vec<(NodeId, NodeId, NodeId)>> {
                refined
                    .iter()
                    .map(|&r| {
                        let (e, a) = memory::attend(g, r, v)?;
                        let o = memory::summarize(g, memory, a)?;
                        Ok((e, a, o))
                    })
                    .collect()
            };
            let att_a = attn(&mut g, &refined_a, v_a)?;
            let att_p = attn(&mut g, &refined_p, v_p)?;
            let o_a: Vec<NodeId> = att_a.iter().map(|t| t.2).collect();
            let o_p: Vec<NodeId> = att_p.iter().map(|t| t.2).collect();
            let mixed_a = match s_a {
                Some(s) => sharing::mix(&mut g, s, &o_a)?,
                None => o_a.clone(),
            };
            let mixed_p = match s_p {
                Some(s) => sharing::mix(&mut g, s, &o_p)?,
                None => o_p.clone(),
            };

            let mut aspect = Vec::with_capacity(c_count);
            let mut opinion = Vec::with_capacity(c_count);
            let mut next_a = Vec::with_capacity(c_count);
            let mut next_p = Vec::with_capacity(c_count);
            for c in 0..c_count {
                let na = memory::update_prototype(&mut g, q_a, u_a[c], mixed_a[c])?;
                let np = memory::update_prototype(&mut g, q_p, u_p[c], mixed_p[c])?;
                aspect.push(ChannelNodes {
                    interaction: inter_a[c],
                    features: r_a[c],
                    refined: refined_a[c],
                    scores: att_a[c].0,
                    attention: att_a[c].1,
                    summary: o_a[c],
                    summary_mixed: mixed_a[c],
                    prototype: u_a[c],
                    next_prototype: na,
                });
                opinion.push(ChannelNodes {
                    interaction: inter_p[c],
                    features: r_p[c],
                    refined: refined_p[c],
                    scores: att_p[c].0,
                    attention: att_p[c].1,
                    summary: o_p[c],
                    summary_mixed: mixed_p[c],
                    prototype: u_p[c],
                    next_prototype: np,
                });
                next_a.push(na);
                next_p.push(np);
            }
            u_a = next_a;
            u_p = next_p;
            layers.push(LayerNodes {
                aspect,
                opinion,
                similarity_a: s_a,
                similarity_p: s_p,
            });
        }

        let last = layers.last().expect("at least one layer");
        let w_a = g.param(store, lay.w_a);
        let w_p = g.param(store, lay.w_p);
        let mut y_a = Vec::with_capacity(c_count);
        let mut y_p = Vec::with_capacity(c_count);
        let mut l = Vec::with_capacity(c_count);
        for c in 0..c_count {
            let (a, p) = (last.aspect[c], last.opinion[c]);
            y_a.push(heads::token_probs(&mut g, w_a, a.refined)?);
            y_p.push(heads::token_probs(&mut g, w_p, p.refined)?);
            let wc = g.param(store, lay.sentence_w[c]);
            l.push(heads::sentence_probs(&mut g, wc, a.summary_mixed, p.summary_mixed)?);
        }
        Ok(Forward {
            graph: g,
            nodes: ForwardNodes {
                input,
                memory,
                layers,
                y_a,
                y_p,
                l,
            },
        })
    }

    /// Adds the objective against `gold` to a built forward graph.
    pub fn attach_loss(&self, fwd: &mut Forward, gold: &GoldChannels, lambda: f64) -> Result<LossNodes> {
        if gold.num_categories() != self.config.categories {
            return Err(Error::shape(
                "loss",
                &[gold.num_categories()],
                &[self.config.categories],
            ));
        }
        let n = fwd.graph.value(fwd.nodes.memory).cols();
        let targets_a: Vec<Tensor> = gold.aspect.iter().map(|ch| ch.one_hot()).collect();
        let targets_p: Vec<Tensor> = gold.opinion.iter().map(|ch| ch.one_hot()).collect();
        if targets_a.iter().chain(&targets_p).any(|t| t.cols() != n) {
            return Err(Error::domain("loss", "gold channel length differs from sentence length"));
        }
        let mut pairs = Vec::with_capacity(2 * self.config.categories);
        for c in 0..self.config.categories {
            pairs.push((fwd.nodes.y_a[c], &targets_a[c]));
            pairs.push((fwd.nodes.y_p[c], &targets_p[c]));
        }
        let g = &mut fwd.graph;
        let token = heads::summed_cross_entropy(g, &pairs)?;
        let sentence = if self.config.sharing.auxiliary_task {
            let labels: Vec<Tensor> = crate::corpus::derive_sentence_labels(gold)
                .into_iter()
                .map(sentence_label_one_hot)
                .collect();
            let pairs: Vec<(NodeId, &Tensor)> = fwd.nodes.l.iter().copied().zip(labels.iter()).collect();
            Some(heads::summed_cross_entropy(g, &pairs)?)
        } else {
            None
        };
        let total = heads::combined_loss(g, token, sentence, lambda)?;
        Ok(LossNodes {
            token,
            sentence,
            total,
            lambda,
        })
    }

    /// Forward graph plus objective, built from `store`.
    pub fn loss_graph(
        &self,
        store: &ParamStore,
        tokens: &[String],
        gold: &GoldChannels,
        lambda: f64,
        dropout: Option<&mut Dropout>,
    ) -> Result<(Forward, LossNodes)> {
        let mut fwd = self.build(store, tokens, dropout)?;
        let loss = self.attach_loss(&mut fwd, gold, lambda)?;
        Ok((fwd, loss))
    }

    /// Evaluation-mode forward pass with the model's own parameters.
    pub fn forward(&self, tokens: &[String]) -> Result<Forward> {
        self.build(&self.store, tokens, None)
    }

    pub fn predict(&self, tokens: &[String]) -> Result<SentenceOutput> {
        Ok(self.forward(tokens)?.output())
    }

    pub fn decode(&self, tokens: &[String]) -> Result<Vec<TermSpan>> {
        let out = self.predict(tokens)?;
        decoder::decode_spans(&out.y_a, &out.y_p)
    }
}

fn check_categories(config: &ModelConfig, categories: &[String]) -> Result<()> {
    if categories.len() != config.categories {
        return Err(Error::Config(format!(
            "{} category names given for {} categories",
            categories.len(),
            config.categories
        )));
    }
    Ok(())
}
