//! The classifier network: a bidirectional GRU EDU encoder feeding a
//! convolutional sequence branch and a relational graph attention branch,
//! fused by a GRU with global attention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocab;
use crate::discourse::{expand_graph, Channel, ChannelSpace, ExpandedGraph};
use crate::pipeline::{Granularity, PreparedDoc};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("document has no EDUs")]
    EmptyDocument,
    #[error("EDU {0} is empty")]
    EmptyEdu(usize),
    #[error("graph has {graph} nodes but the document has {edus} EDUs")]
    NodeMismatch { graph: usize, edus: usize },
    #[error("channel {0} is not part of the model's channel space")]
    UnknownChannel(String),
    #[error("token id {id} outside a vocabulary of {size}")]
    TokenId { id: usize, size: usize },
    #[error("parameter set does not match the model layout: {0}")]
    Layout(String),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub emb_dim: usize,
    /// Hidden size per encoder direction; EDU vectors have twice this width.
    pub gru_hidden: usize,
    /// Output width of both branches.
    pub filters: usize,
    pub window: usize,
    pub padding: usize,
    pub n_bases: usize,
    pub leaky_slope: f64,
    pub attn_slope: f64,
    pub dropout: f64,
    /// Hidden size of the fusion GRU, which is also the text vector width.
    pub fusion_hidden: usize,
    pub rgat_layers: usize,
    pub use_seq_branch: bool,
    pub use_graph_branch: bool,
    pub use_gru_ga: bool,
    pub add_inverse: bool,
    pub add_self: bool,
    pub granularity: Granularity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            emb_dim: 100,
            gru_hidden: 64,
            filters: 100,
            window: 3,
            padding: 1,
            n_bases: 8,
            leaky_slope: 0.01,
            attn_slope: 0.2,
            dropout: 0.2,
            fusion_hidden: 100,
            rgat_layers: 1,
            use_seq_branch: true,
            use_graph_branch: true,
            use_gru_ga: true,
            add_inverse: true,
            add_self: true,
            granularity: Granularity::Edu,
        }
    }
}

impl ModelConfig {
    pub fn edu_dim(&self) -> usize {
        2 * self.gru_hidden
    }

    pub fn channel_space(&self) -> ChannelSpace {
        match self.granularity {
            Granularity::Edu => ChannelSpace::taxonomy(self.add_inverse, self.add_self),
            Granularity::Sentence => ChannelSpace::generic(self.add_inverse, self.add_self),
        }
    }

    /// Width of the fused EDU matrix.
    pub fn fused_dim(&self) -> usize {
        self.filters * (usize::from(self.use_seq_branch) + usize::from(self.use_graph_branch))
    }

    /// Width of the text vector fed to the classifier.
    pub fn text_dim(&self) -> usize {
        if self.use_gru_ga {
            self.fusion_hidden
        } else {
            self.fused_dim()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, message: String| Err(ModelError::Config { field, message });
        for (field, v) in [
            ("emb_dim", self.emb_dim),
            ("gru_hidden", self.gru_hidden),
            ("filters", self.filters),
            ("fusion_hidden", self.fusion_hidden),
            ("rgat_layers", self.rgat_layers),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        if self.window != 3 {
            return bad("window", format!("must be 3, got {}", self.window));
        }
        if self.padding != 1 {
            return bad("padding", format!("must be 1, got {}", self.padding));
        }
        let channels = self.channel_space().len();
        if self.n_bases == 0 || self.n_bases > channels {
            return bad(
                "n_bases",
                format!("must lie in 1..={channels} for this channel space, got {}", self.n_bases),
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        for (field, v) in [("leaky_slope", self.leaky_slope), ("attn_slope", self.attn_slope)] {
            if !v.is_finite() || v < 0.0 {
                return bad(field, format!("must be finite and non-negative, got {v}"));
            }
        }
        if !self.use_seq_branch && !self.use_graph_branch {
            return bad("use_seq_branch", "at least one branch must be enabled".into());
        }
        Ok(())
    }
}

/// The controlled comparison variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-edu")]
    NoEdu,
    #[serde(rename = "no-rgat")]
    NoRgat,
    #[serde(rename = "no-c")]
    NoC,
    #[serde(rename = "no-g")]
    NoG,
    #[serde(rename = "no-c-no-g")]
    NoCNoG,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoEdu,
        Variant::NoRgat,
        Variant::NoC,
        Variant::NoG,
        Variant::NoCNoG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEdu => "no-edu",
            Variant::NoRgat => "no-rgat",
            Variant::NoC => "no-c",
            Variant::NoG => "no-g",
            Variant::NoCNoG => "no-c-no-g",
        }
    }

    /// The base configuration with this variant's component removed.
    /// Sentence granularity has a single untyped relation, so inverse
    /// channels are dropped and the basis count is capped to the channels.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoEdu => {
                c.granularity = Granularity::Sentence;
                c.add_inverse = false;
                c.n_bases = c.n_bases.min(c.channel_space().len());
            }
            Variant::NoRgat => c.use_graph_branch = false,
            Variant::NoC => c.use_seq_branch = false,
            Variant::NoG => c.use_gru_ga = false,
            Variant::NoCNoG => {
                c.use_seq_branch = false;
                c.use_gru_ga = false;
            }
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct GruIdx {
    w: [usize; 3],
    u: [usize; 3],
    b: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RgatIdx {
    bases: usize,
    coeff: usize,
    attn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    embedding: usize,
    enc_fwd: GruIdx,
    enc_bwd: GruIdx,
    conv: Option<(usize, usize)>,
    rgat: Vec<RgatIdx>,
    fusion: Option<GruIdx>,
    wy: usize,
    by: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(f64),
    Xavier(usize, usize),
    Zeros,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> GruIdx {
        let mut idx = GruIdx {
            w: [0; 3],
            u: [0; 3],
            b: [0; 3],
        };
        for (g, gate) in ["z", "r", "n"].iter().enumerate() {
            idx.w[g] = self.add(format!("{prefix}.w_{gate}"), vec![input, hidden], Init::Xavier(input, hidden));
            idx.u[g] = self.add(format!("{prefix}.u_{gate}"), vec![hidden, hidden], Init::Xavier(hidden, hidden));
            idx.b[g] = self.add(format!("{prefix}.b_{gate}"), vec![hidden], Init::Zeros);
        }
        idx
    }
}

fn plan(config: &ModelConfig, vocab_size: usize) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let (e, h, m, f) = (config.emb_dim, config.gru_hidden, config.edu_dim(), config.filters);
    let channels = config.channel_space().len();
    let embedding = b.add("embedding".into(), vec![vocab_size, e], Init::Uniform(0.05));
    let enc_fwd = b.gru("encoder.fwd", e, h);
    let enc_bwd = b.gru("encoder.bwd", e, h);
    let conv = config.use_seq_branch.then(|| {
        (
            b.add("conv.filters".into(), vec![f, config.window, m], Init::Xavier(config.window * m, f)),
            b.add("conv.bias".into(), vec![f], Init::Zeros),
        )
    });
    let mut rgat = Vec::new();
    if config.use_graph_branch {
        for l in 0..config.rgat_layers {
            let input = if l == 0 { m } else { f };
            rgat.push(RgatIdx {
                bases: b.add(
                    format!("rgat.{l}.bases"),
                    vec![config.n_bases, f, input],
                    Init::Xavier(input, f),
                ),
                coeff: b.add(
                    format!("rgat.{l}.coeff"),
                    vec![channels, config.n_bases],
                    Init::Xavier(config.n_bases, channels),
                ),
                attn: b.add(format!("rgat.{l}.attn"), vec![channels, 2 * f], Init::Uniform(0.05)),
            });
        }
    }
    let fusion = config
        .use_gru_ga
        .then(|| b.gru("fusion", config.fused_dim(), config.fusion_hidden));
    let d = config.text_dim();
    let wy = b.add("classifier.w".into(), vec![d, 2], Init::Xavier(d, 2));
    let by = b.add("classifier.b".into(), vec![2], Init::Zeros);
    (
        Layout {
            embedding,
            enc_fwd,
            enc_bwd,
            conv,
            rgat,
            fusion,
            wy,
            by,
        },
        b,
    )
}

/// One document in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Vocabulary ids per EDU, in reading order.
    pub tokens: Vec<Vec<usize>>,
    pub graph: ExpandedGraph,
}

impl ModelInput {
    pub fn from_prepared(doc: &PreparedDoc, vocab: &Vocab, config: &ModelConfig) -> Self {
        Self {
            tokens: doc
                .edus
                .iter()
                .map(|e| e.iter().map(|t| vocab.lookup(t)).collect())
                .collect(),
            graph: expand_graph(&doc.graph, config.add_inverse, config.add_self),
        }
    }
}

/// Attention weight of one neighbour at one receiving node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttention {
    pub layer: usize,
    pub channel: Channel,
    pub source: usize,
    pub receiver: usize,
    pub alpha: f64,
}

impl EdgeAttention {
    /// `(head, dep)` of the dependency edge this weight travels along.
    pub fn head_dep(&self) -> (usize, usize) {
        match self.channel {
            Channel::Inverse(_) => (self.receiver, self.source),
            _ => (self.source, self.receiver),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[P(real), P(fake)]`.
    pub probs: [f64; 2],
    /// Text vector before the classifier.
    pub z: Vec<f64>,
    pub edge_attention: Vec<EdgeAttention>,
    /// Fusion attention over EDUs; absent when pooling replaces fusion.
    pub fusion_alpha: Option<Vec<f64>>,
}

/// Gradients for one document. The embedding gradient is kept sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    /// Dense gradient per parameter; `None` at the embedding slot and for
    /// parameters the document did not reach.
    pub dense: Vec<Option<Vec<f64>>>,
    /// `(row id, gradient row)` for embedding rows used by the document.
    pub embedding: Vec<(usize, Vec<f64>)>,
}

/// Tape handles of one GRU's weights.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w: [Var; 3],
    pub u: [Var; 3],
    pub b: [Var; 3],
}

/// Tape handles of one graph attention layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct RgatVars {
    /// `B x out x in`.
    pub bases: Var,
    /// `channels x B`.
    pub coeff: Var,
    /// `channels x 2 out`.
    pub attn: Var,
}

fn row(t: &mut Tape, x: Var, i: usize) -> Result<Var> {
    let r = t.gather(x, &[i])?;
    let w = t.shape(x)[1..].iter().product::<usize>();
    Ok(t.reshape(r, &[w])?)
}

/// Runs a GRU over the rows of `x` and returns the hidden state after each
/// row, listed in row order. `reverse` reads the rows bottom-up.
pub fn gru_states(t: &mut Tape, x: Var, g: &GruVars, reverse: bool) -> Result<Vec<Var>> {
    let steps = t.shape(x)[0];
    let hidden = t.shape(g.u[0])[0];
    let mut proj = [x; 3];
    for k in 0..3 {
        let xw = t.matmul(x, g.w[k])?;
        proj[k] = t.add(xw, g.b[k])?;
    }
    let mut h = t.leaf(Tensor::zeros(&[hidden]));
    let mut states = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for i in order {
        let xz = row(t, proj[0], i)?;
        let xr = row(t, proj[1], i)?;
        let xn = row(t, proj[2], i)?;
        let hz = t.matmul(h, g.u[0])?;
        let z = t.add(xz, hz)?;
        let z = t.sigmoid(z);
        let hr = t.matmul(h, g.u[1])?;
        let r = t.add(xr, hr)?;
        let r = t.sigmoid(r);
        let rh = t.mul(r, h)?;
        let hn = t.matmul(rh, g.u[2])?;
        let n = t.add(xn, hn)?;
        let n = t.tanh(n);
        let d = t.sub(h, n)?;
        let zd = t.mul(z, d)?;
        h = t.add(n, zd)?;
        states[i] = h;
    }
    Ok(states)
}

/// Encodes each EDU by max-pooling the concatenated forward and backward
/// GRU states over its tokens. `table` holds the embedding rows addressed
/// by `edus`. Returns the stacked `|U| x 2h` matrix.
pub fn encode_edus(t: &mut Tape, table: Var, edus: &[Vec<usize>], fwd: &GruVars, bwd: &GruVars) -> Result<Var> {
    if edus.is_empty() {
        return Err(ModelError::EmptyDocument);
    }
    let mut rows = Vec::with_capacity(edus.len());
    for (i, ids) in edus.iter().enumerate() {
        if ids.is_empty() {
            return Err(ModelError::EmptyEdu(i));
        }
        let x = t.gather(table, ids)?;
        let f = gru_states(t, x, fwd, false)?;
        let b = gru_states(t, x, bwd, true)?;
        let f = t.stack(&f)?;
        let b = t.stack(&b)?;
        let both = t.concat_cols(f, b)?;
        rows.push(t.max_pool_rows(both, None)?);
    }
    Ok(t.stack(&rows)?)
}

/// Plain evaluation of the basis combination: `W_r = sum_b coeff[r][b] V_b`
/// for every channel row of `coeff`.
pub fn relation_weights(bases: &Tensor, coeff: &Tensor) -> Vec<Tensor> {
    let (nb, out, inp) = (bases.shape()[0], bases.shape()[1], bases.shape()[2]);
    let width = out * inp;
    (0..coeff.shape()[0])
        .map(|r| {
            let mut w = vec![0.0; width];
            for b in 0..nb {
                let c = coeff.data()[r * nb + b];
                if c == 0.0 {
                    continue;
                }
                for (o, v) in w.iter_mut().zip(&bases.data()[b * width..(b + 1) * width]) {
                    *o += c * v;
                }
            }
            Tensor::new(vec![out, inp], w).expect("shape matches data")
        })
        .collect()
}

/// One relational graph attention layer over `x` (`|U| x in`).
///
/// For each channel the projection `P = X W_rᵀ` is scored per edge by
/// `leaky(a_r · [P_u | P_v])`, normalised over each receiver's neighbours,
/// and aggregated. Channel messages are summed and passed through the node
/// activation. Returns the output matrix and every attention weight.
pub fn rgat_layer(
    t: &mut Tape,
    x: Var,
    graph: &ExpandedGraph,
    space: &ChannelSpace,
    w: &RgatVars,
    attn_slope: f64,
    node_slope: f64,
    layer: usize,
) -> Result<(Var, Vec<EdgeAttention>)> {
    let n = graph.n_nodes();
    if t.shape(x)[0] != n {
        return Err(ModelError::NodeMismatch {
            graph: n,
            edus: t.shape(x)[0],
        });
    }
    let bshape = t.shape(w.bases).to_vec();
    let (nb, out, inp) = (bshape[0], bshape[1], bshape[2]);
    let flat = t.reshape(w.bases, &[nb, out * inp])?;
    let mut messages: Vec<Vec<Var>> = vec![Vec::new(); n];
    let mut records = Vec::new();
    for ch in &graph.channels {
        let c = space
            .index_of(ch.channel)
            .ok_or_else(|| ModelError::UnknownChannel(ch.channel.name()))?;
        let coeff = row(t, w.coeff, c)?;
        let wr = t.matmul(coeff, flat)?;
        let wr = t.reshape(wr, &[out, inp])?;
        let wt = t.transpose(wr)?;
        let p = t.matmul(x, wt)?;
        let a = row(t, w.attn, c)?;
        let a = t.reshape(a, &[2, out])?;
        let at = t.transpose(a)?;
        let s = t.matmul(p, at)?;
        let s = t.transpose(s)?;
        // s[u] scores a receiver, s[n + v] a neighbour
        let s = t.reshape(s, &[2 * n])?;
        for (u, nbrs) in ch.neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let recv = t.gather(s, &vec![u; nbrs.len()])?;
            let src: Vec<usize> = nbrs.iter().map(|v| n + v).collect();
            let src = t.gather(s, &src)?;
            let e = t.add(recv, src)?;
            let e = t.leaky_relu(e, attn_slope);
            let alpha = t.softmax(e)?;
            for (&v, &a) in nbrs.iter().zip(t.value(alpha).data()) {
                records.push(EdgeAttention {
                    layer,
                    channel: ch.channel,
                    source: v,
                    receiver: u,
                    alpha: a,
                });
            }
            let pv = t.gather(p, nbrs)?;
            messages[u].push(t.matmul(alpha, pv)?);
        }
    }
    let mut rows = Vec::with_capacity(n);
    for msgs in messages {
        let r = match msgs.split_first() {
            None => t.leaf(Tensor::zeros(&[out])),
            Some((&first, rest)) => {
                let mut acc = first;
                for &m in rest {
                    acc = t.add(acc, m)?;
                }
                acc
            }
        };
        rows.push(r);
    }
    let stacked = t.stack(&rows)?;
    Ok((t.leaky_relu(stacked, node_slope), records))
}

/// GRU over the rows of `x` followed by global attention against the
/// final state. Returns the text vector and the attention weights.
pub fn gru_ga(t: &mut Tape, x: Var, g: &GruVars) -> Result<(Var, Var)> {
    if t.shape(x)[0] == 0 {
        return Err(ModelError::EmptyDocument);
    }
    let states = gru_states(t, x, g, false)?;
    let last = *states.last().expect("non-empty");
    let h = t.stack(&states)?;
    let scores = t.matmul(h, last)?;
    let alpha = t.softmax(scores)?;
    let z = t.matmul(alpha, h)?;
    Ok((z, alpha))
}

struct Trace {
    probs: Var,
    z: Var,
    fusion_alpha: Option<Var>,
    edge_attention: Vec<EdgeAttention>,
    leaves: Vec<Option<Var>>,
    emb_leaf: Var,
    emb_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    vocab_size: usize,
    space: ChannelSpace,
    layout: Layout,
    params: Params,
}

impl Model {
    /// Fresh model with seeded initialisation.
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, b) = plan(&config, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(shape, init)| {
                let len: usize = shape.iter().product();
                let data = match *init {
                    Init::Zeros => vec![0.0; len],
                    Init::Uniform(a) => (0..len).map(|_| rng.gen_range(-a..=a)).collect(),
                    Init::Xavier(fi, fo) => {
                        let a = (6.0 / (fi + fo) as f64).sqrt();
                        (0..len).map(|_| rng.gen_range(-a..=a)).collect()
                    }
                };
                Tensor::new(shape.clone(), data).expect("planned shape")
            })
            .collect();
        Ok(Self {
            space: config.channel_space(),
            config,
            vocab_size,
            layout,
            params: Params::new(b.names, tensors),
        })
    }

    /// Model around existing parameters, which must match the planned
    /// names and shapes exactly.
    pub fn from_params(config: ModelConfig, vocab_size: usize, params: Params) -> Result<Self> {
        config.validate()?;
        let (layout, b) = plan(&config, vocab_size);
        if params.names() != b.names.as_slice() {
            return Err(ModelError::Layout("parameter names differ".into()));
        }
        for ((name, t), shape) in params.names().iter().zip(params.tensors()).zip(&b.shapes) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Layout(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            space: config.channel_space(),
            config,
            vocab_size,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn space(&self) -> &ChannelSpace {
        &self.space
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    /// Index of the embedding table in [`Params`].
    pub fn embedding_index(&self) -> usize {
        self.layout.embedding
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.tokens.is_empty() {
            return Err(ModelError::EmptyDocument);
        }
        if input.graph.n_nodes() != input.tokens.len() {
            return Err(ModelError::NodeMismatch {
                graph: input.graph.n_nodes(),
                edus: input.tokens.len(),
            });
        }
        for (i, e) in input.tokens.iter().enumerate() {
            if e.is_empty() {
                return Err(ModelError::EmptyEdu(i));
            }
            if let Some(&id) = e.iter().find(|&&id| id >= self.vocab_size) {
                return Err(ModelError::TokenId {
                    id,
                    size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn trace<R: Rng + ?Sized>(&self, t: &mut Tape, input: &ModelInput, training: bool, rng: &mut R) -> Result<Trace> {
        self.check_input(input)?;
        let cfg = &self.config;
        let mut leaves: Vec<Option<Var>> = vec![None; self.params.len()];
        let mut leaf = |t: &mut Tape, i: usize| -> Var {
            *leaves[i].get_or_insert_with(|| t.leaf(self.params.tensors[i].clone()))
        };

        // embedding rows used by this document, addressed locally
        let mut emb_ids: Vec<usize> = input.tokens.iter().flatten().copied().collect();
        emb_ids.sort_unstable();
        emb_ids.dedup();
        let table = &self.params.tensors[self.layout.embedding];
        let e = cfg.emb_dim;
        let mut sub = Vec::with_capacity(emb_ids.len() * e);
        for &id in &emb_ids {
            sub.extend_from_slice(table.row(id));
        }
        let emb_leaf = t.leaf(Tensor::new(vec![emb_ids.len(), e], sub)?);
        let local: Vec<Vec<usize>> = input
            .tokens
            .iter()
            .map(|ids| ids.iter().map(|id| emb_ids.binary_search(id).expect("collected")).collect())
            .collect();

        let mut gru = |t: &mut Tape, g: &GruIdx| GruVars {
            w: g.w.map(|i| leaf(t, i)),
            u: g.u.map(|i| leaf(t, i)),
            b: g.b.map(|i| leaf(t, i)),
        };
        let fwd = gru(t, &self.layout.enc_fwd);
        let bwd = gru(t, &self.layout.enc_bwd);
        let fusion = self.layout.fusion.map(|g| gru(t, &g));
        let x0 = encode_edus(t, emb_leaf, &local, &fwd, &bwd)?;
        let x0 = t.dropout(x0, cfg.dropout, training, rng)?;

        let xc = match self.layout.conv {
            Some((f, b)) => {
                let filters = leaf(t, f);
                let bias = leaf(t, b);
                let c = t.conv1d_seq(x0, filters, cfg.padding)?;
                let c = t.add(c, bias)?;
                Some(t.leaky_relu(c, cfg.leaky_slope))
            }
            None => None,
        };

        let mut edge_attention = Vec::new();
        let mut xg = None;
        let mut h = x0;
        for (l, idx) in self.layout.rgat.iter().enumerate() {
            let w = RgatVars {
                bases: leaf(t, idx.bases),
                coeff: leaf(t, idx.coeff),
                attn: leaf(t, idx.attn),
            };
            let (out, rec) = rgat_layer(t, h, &input.graph, &self.space, &w, cfg.attn_slope, cfg.leaky_slope, l)?;
            edge_attention.extend(rec);
            h = out;
            xg = Some(out);
        }

        let fused = match (xc, xg) {
            (Some(c), Some(g)) => t.concat_cols(c, g)?,
            (Some(c), None) => c,
            (None, Some(g)) => g,
            (None, None) => unreachable!("validated config enables a branch"),
        };
        let (z, fusion_alpha) = match fusion {
            Some(g) => {
                let (z, a) = gru_ga(t, fused, &g)?;
                (z, Some(a))
            }
            None => (t.max_pool_rows(fused, None)?, None),
        };
        let z = t.dropout(z, cfg.dropout, training, rng)?;
        let wy = leaf(t, self.layout.wy);
        let by = leaf(t, self.layout.by);
        let logits = t.matmul(z, wy)?;
        let logits = t.add(logits, by)?;
        let probs = t.softmax(logits)?;
        Ok(Trace {
            probs,
            z,
            fusion_alpha,
            edge_attention,
            leaves,
            emb_leaf,
            emb_ids,
        })
    }

    /// Runs the network. Dropout is active only when `training` is set.
    pub fn forward<R: Rng + ?Sized>(&self, input: &ModelInput, training: bool, rng: &mut R) -> Result<ForwardOutput> {
        let mut t = Tape::new();
        let tr = self.trace(&mut t, input, training, rng)?;
        let p = t.value(tr.probs).data();
        Ok(ForwardOutput {
            probs: [p[0], p[1]],
            z: t.value(tr.z).data().to_vec(),
            edge_attention: tr.edge_attention,
            fusion_alpha: tr.fusion_alpha.map(|a| t.value(a).data().to_vec()),
        })
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, input: &ModelInput) -> Result<ForwardOutput> {
        self.forward(input, false, &mut rand::rngs::mock::StepRng::new(0, 0))
    }

    /// Loss of one document.
    pub fn loss<R: Rng + ?Sized>(&self, input: &ModelInput, label: u8, training: bool, rng: &mut R) -> Result<f64> {
        let mut t = Tape::new();
        let tr = self.trace(&mut t, input, training, rng)?;
        let loss = t.bce(tr.probs, label)?;
        Ok(t.value(loss).item())
    }

    /// Loss and parameter gradients of one document.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        input: &ModelInput,
        label: u8,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, ParamGrads)> {
        let mut t = Tape::new();
        let tr = self.trace(&mut t, input, training, rng)?;
        let loss = t.bce(tr.probs, label)?;
        let g = t.backward(loss)?;
        let dense = tr
            .leaves
            .iter()
            .map(|v| v.and_then(|v| g.get(v).map(<[f64]>::to_vec)))
            .collect();
        let e = self.config.emb_dim;
        let sub = g.get_or_zeros(tr.emb_leaf, tr.emb_ids.len() * e);
        let embedding = tr
            .emb_ids
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, sub[k * e..(k + 1) * e].to_vec()))
            .collect();
        Ok((t.value(loss).item(), ParamGrads { dense, embedding }))
    }
}
