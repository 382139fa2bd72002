//! The cross-modal encoder: unimodal transformer layers followed by fusion
//! layers that pair a transformer layer with a relation-aware GNN layer and
//! exchange information through the interaction token and node.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::numerics::{Binding, ParamGroup, ParamId, ParamStore, Real, Tensor, Var};
use crate::retrieval::{LocalKG, LocalNode};
use crate::rng::{Rng, SeedStream};
use crate::text::TextSegment;

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// Interaction token and node exchange information in every fusion layer.
    Bidirectional,
    /// Text and graph are encoded independently; modalities meet only in the task head.
    ConcatAtEnd,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Bidirectional => "bidirectional",
            Fusion::ConcatAtEnd => "concat_at_end",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bidirectional" => Some(Fusion::Bidirectional),
            "concat_at_end" | "concat" => Some(Fusion::ConcatAtEnd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_text_layers: usize,
    pub n_fusion_layers: usize,
    pub d_text: usize,
    pub d_node: usize,
    pub heads_text: usize,
    pub heads_gnn: usize,
    pub d_ff: usize,
    pub d_mint_hidden: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub max_nodes: usize,
    pub fusion: Fusion,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_text_layers: 2,
            n_fusion_layers: 3,
            d_text: 128,
            d_node: 64,
            heads_text: 4,
            heads_gnn: 2,
            d_ff: 512,
            d_mint_hidden: 400,
            dropout: 0.1,
            max_seq_len: 128,
            max_nodes: 32,
            fusion: Fusion::Bidirectional,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_fusion_layers == 0 {
            return bad("n_fusion_layers must be at least 1".into());
        }
        if self.heads_text == 0 || self.d_text % self.heads_text != 0 {
            return bad(format!("d_text {} not divisible by heads_text {}", self.d_text, self.heads_text));
        }
        if self.heads_gnn == 0 || self.d_node % self.heads_gnn != 0 {
            return bad(format!("d_node {} not divisible by heads_gnn {}", self.d_node, self.heads_gnn));
        }
        if self.d_node % 2 != 0 {
            return bad("d_node must be even".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_seq_len < 2 || self.max_nodes == 0 || self.d_ff == 0 || self.d_mint_hidden == 0 {
            return bad("max_seq_len, max_nodes, d_ff and d_mint_hidden must be positive".into());
        }
        Ok(())
    }
}

/// Vocabulary sizes that fix embedding table shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSizes {
    pub tokens: usize,
    pub entities: usize,
    pub relations: usize,
}

/// Registers parameters with a per-name seeded stream so that models sharing
/// parameter names start from identical values.
pub struct Initializer<'a, F: Real> {
    pub store: &'a mut ParamStore<F>,
    pub seeds: SeedStream,
}

impl<F: Real> Initializer<'_, F> {
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, group: ParamGroup) -> Result<ParamId> {
        let mut rng = self.seeds.rng(&format!("init/{name}"));
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let t = Tensor::from_fn(shape, |_| F::of(dist.sample(&mut rng)));
        Ok(self.store.insert(name, t, group)?)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, group: ParamGroup) -> Result<ParamId> {
        use rand::Rng as _;
        let mut rng = self.seeds.rng(&format!("init/{name}"));
        let t = Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..bound)));
        Ok(self.store.insert(name, t, group)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, group: ParamGroup) -> Result<ParamId> {
        Ok(self.store.insert(name, Tensor::full(shape, F::of(value)), group)?)
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, group: ParamGroup) -> Result<Linear> {
        Ok(Linear {
            w: self.normal(&format!("{name}.w"), &[d_in, d_out], INIT_STD, group)?,
            b: self.constant(&format!("{name}.b"), &[d_out], 0.0, group)?,
        })
    }

    pub fn norm(&mut self, name: &str, d: usize, group: ParamGroup) -> Result<Norm> {
        Ok(Norm {
            gain: self.constant(&format!("{name}.gain"), &[d], 1.0, group)?,
            bias: self.constant(&format!("{name}.bias"), &[d], 0.0, group)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn apply<'t, F: Real>(&self, p: &Binding<'t, '_, F>, x: Var<'t, F>) -> crate::numerics::Result<Var<'t, F>> {
        x.matmul(p.var(self.w))?.add_row(p.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn apply<'t, F: Real>(&self, p: &Binding<'t, '_, F>, x: Var<'t, F>) -> crate::numerics::Result<Var<'t, F>> {
        x.layer_norm(p.var(self.gain), p.var(self.bias), F::of(LN_EPS))
    }
}

type TResult<T> = crate::numerics::Result<T>;

fn dropout<'t, F: Real>(x: Var<'t, F>, rate: f64, rng: &mut Option<&mut Rng>) -> TResult<Var<'t, F>> {
    match rng {
        Some(r) if rate > 0.0 => x.dropout(rate, *r),
        _ => Ok(x),
    }
}

#[derive(Debug, Clone)]
struct TransformerLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln_attn: Norm,
    ff_in: Linear,
    ff_out: Linear,
    ln_ff: Norm,
}

impl TransformerLayer {
    fn new<F: Real>(init: &mut Initializer<F>, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let (d, g) = (cfg.d_text, ParamGroup::Lm);
        Ok(Self {
            query: init.linear(&format!("{name}.attn.query"), d, d, g)?,
            key: init.linear(&format!("{name}.attn.key"), d, d, g)?,
            value: init.linear(&format!("{name}.attn.value"), d, d, g)?,
            out: init.linear(&format!("{name}.attn.out"), d, d, g)?,
            ln_attn: init.norm(&format!("{name}.attn.ln"), d, g)?,
            ff_in: init.linear(&format!("{name}.ff.in"), d, cfg.d_ff, g)?,
            ff_out: init.linear(&format!("{name}.ff.out"), cfg.d_ff, d, g)?,
            ln_ff: init.norm(&format!("{name}.ff.ln"), d, g)?,
        })
    }

    fn forward<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        x: Var<'t, F>,
        heads: usize,
        rate: f64,
        rng: &mut Option<&mut Rng>,
    ) -> TResult<Var<'t, F>> {
        let d = x.shape()[1];
        let dh = d / heads;
        let q = self.query.apply(p, x)?;
        let k = self.key.apply(p, x)?;
        let v = self.value.apply(p, x)?;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.slice(1, h * dh, dh)?;
            let kh = k.slice(1, h * dh, dh)?;
            let vh = v.slice(1, h * dh, dh)?;
            let attn = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax(1)?;
            outs.push(attn.matmul(vh)?);
        }
        let merged = if heads == 1 { outs[0] } else { Var::concat(&outs, 1)? };
        let a = dropout(self.out.apply(p, merged)?, rate, rng)?;
        let x1 = self.ln_attn.apply(p, x.add(a)?)?;
        let f = self.ff_out.apply(p, self.ff_in.apply(p, x1)?.gelu()?)?;
        let f = dropout(f, rate, rng)?;
        self.ln_ff.apply(p, x1.add(f)?)
    }
}

/// A directed message edge as seen by the GNN, including reversed copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageEdge {
    pub src: usize,
    pub dst: usize,
    pub rel: RelationId,
    /// True when the message runs against the stored edge direction.
    pub reversed: bool,
}

impl MessageEdge {
    fn type_index(&self) -> usize {
        self.rel.0 * 2 + usize::from(self.reversed)
    }
}

/// Every stored edge contributes a forward and a reversed message.
pub fn message_edges(local: &LocalKG) -> Vec<MessageEdge> {
    local
        .edges
        .iter()
        .flat_map(|e| {
            [
                MessageEdge {
                    src: e.head,
                    dst: e.tail,
                    rel: e.rel,
                    reversed: false,
                },
                MessageEdge {
                    src: e.tail,
                    dst: e.head,
                    rel: e.rel,
                    reversed: true,
                },
            ]
        })
        .collect()
}

#[derive(Debug, Clone)]
struct GnnLayer {
    message: Linear,
    query: Linear,
    key: Linear,
    out: Linear,
    ln: Norm,
}

impl GnnLayer {
    fn new<F: Real>(init: &mut Initializer<F>, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let (d, g) = (cfg.d_node, ParamGroup::Other);
        Ok(Self {
            message: init.linear(&format!("{name}.message"), 2 * d, d, g)?,
            query: init.linear(&format!("{name}.query"), d, d, g)?,
            key: init.linear(&format!("{name}.key"), d, d, g)?,
            out: init.linear(&format!("{name}.out"), d, d, g)?,
            ln: init.norm(&format!("{name}.ln"), d, g)?,
        })
    }

    /// Returns updated node states and per-edge, per-head attention weights.
    fn forward<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        nodes: Var<'t, F>,
        rel_table: Var<'t, F>,
        edges: &[MessageEdge],
        heads: usize,
    ) -> TResult<(Var<'t, F>, Vec<Vec<f64>>)> {
        let n = nodes.shape()[0];
        let d = nodes.shape()[1];
        let dh = d / heads;
        if edges.is_empty() {
            let upd = self.out.apply(p, nodes.tape().constant(Tensor::zeros(&[n, d])))?.gelu()?;
            return Ok((self.ln.apply(p, nodes.add(upd)?)?, Vec::new()));
        }
        let src: Vec<usize> = edges.iter().map(|e| e.src).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.dst).collect();
        let types: Vec<usize> = edges.iter().map(MessageEdge::type_index).collect();
        let msg_in = Var::concat(&[nodes.gather_rows(&src)?, rel_table.gather_rows(&types)?], 1)?;
        let messages = self.message.apply(p, msg_in)?;
        let queries = self.query.apply(p, nodes)?.gather_rows(&dst)?;
        let keys = self.key.apply(p, messages)?;
        let ne = edges.len();
        let keep: Vec<bool> = (0..n).flat_map(|v| dst.iter().map(move |&t| t == v)).collect();
        let ones = nodes.tape().constant(Tensor::full(&[n, 1], F::one()));
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut aggs = Vec::with_capacity(heads);
        let mut weights = vec![vec![0.0; heads]; ne];
        for h in 0..heads {
            let qh = queries.slice(1, h * dh, dh)?;
            let kh = keys.slice(1, h * dh, dh)?;
            let logits = qh.mul(kh)?.sum_axis(1)?.scale(scale)?.reshape(&[1, ne])?;
            let attn = ones.matmul(logits)?.masked_softmax(1, &keep)?;
            let a = attn.value();
            for (e, w) in weights.iter_mut().enumerate() {
                w[h] = a.at(dst[e], e).to_f64_lossy();
            }
            aggs.push(attn.matmul(messages.slice(1, h * dh, dh)?)?);
        }
        let agg = if heads == 1 { aggs[0] } else { Var::concat(&aggs, 1)? };
        let upd = self.out.apply(p, agg)?.gelu()?;
        Ok((self.ln.apply(p, nodes.add(upd)?)?, weights))
    }
}

#[derive(Debug, Clone)]
struct Mint {
    hidden: Linear,
    out: Linear,
}

impl Mint {
    fn forward<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        h_int: Var<'t, F>,
        v_int: Var<'t, F>,
    ) -> TResult<(Var<'t, F>, Var<'t, F>)> {
        let dt = h_int.shape()[1];
        let dn = v_int.shape()[1];
        let z = Var::concat(&[h_int, v_int], 1)?;
        let u = self.out.apply(p, self.hidden.apply(p, z)?.gelu()?)?;
        let parts = u.split(1, &[dt, dn])?;
        Ok((h_int.add(parts[0])?, v_int.add(parts[1])?))
    }
}

#[derive(Debug, Clone)]
struct FusionLayer {
    text: TransformerLayer,
    gnn: GnnLayer,
    mint: Option<Mint>,
}

/// Attention weights of one fusion layer's GNN.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention {
    pub layer: usize,
    pub edges: Vec<MessageEdge>,
    /// `weights[e][h]`: weight of edge `e` in its destination's neighborhood under head `h`.
    pub weights: Vec<Vec<f64>>,
}

pub struct EncoderOutput<'t, F: Real> {
    /// `[I + 1, d_text]`, row 0 is the interaction token.
    pub tokens: Var<'t, F>,
    /// `[J + 1, d_node]`, row 0 is the interaction node.
    pub nodes: Var<'t, F>,
    pub attention: Vec<LayerAttention>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub sizes: VocabSizes,
    token_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: Norm,
    text_layers: Vec<TransformerLayer>,
    node_emb: ParamId,
    int_node: ParamId,
    rel_emb: ParamId,
    fusion_layers: Vec<FusionLayer>,
}

impl Encoder {
    /// Registers all encoder parameters in `store`.
    pub fn new<F: Real>(
        config: EncoderConfig,
        sizes: VocabSizes,
        store: &mut ParamStore<F>,
        seeds: SeedStream,
    ) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer { store, seeds };
        let (lm, other) = (ParamGroup::Lm, ParamGroup::Other);
        let token_emb = init.normal("lm.token_emb", &[sizes.tokens, config.d_text], INIT_STD, lm)?;
        let pos_emb = init.normal("lm.pos_emb", &[config.max_seq_len, config.d_text], INIT_STD, lm)?;
        let emb_ln = init.norm("lm.emb_ln", config.d_text, lm)?;
        let text_layers = (0..config.n_text_layers)
            .map(|i| TransformerLayer::new(&mut init, &format!("lm.layer{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let node_emb = init.normal("node.emb", &[sizes.entities.max(1), config.d_node], INIT_STD, other)?;
        let int_node = init.normal("node.interaction", &[1, config.d_node], INIT_STD, other)?;
        let rel_emb = init.normal("gnn.rel_emb", &[sizes.relations * 2, config.d_node], INIT_STD, other)?;
        let mut fusion_layers = Vec::with_capacity(config.n_fusion_layers);
        for m in 0..config.n_fusion_layers {
            let k = config.n_text_layers + m;
            let text = TransformerLayer::new(&mut init, &format!("lm.layer{k}"), &config)?;
            let gnn = GnnLayer::new(&mut init, &format!("gnn.layer{m}"), &config)?;
            let mint = match config.fusion {
                Fusion::Bidirectional => {
                    let d = config.d_text + config.d_node;
                    Some(Mint {
                        hidden: init.linear(&format!("mint.layer{m}.hidden"), d, config.d_mint_hidden, other)?,
                        out: init.linear(&format!("mint.layer{m}.out"), config.d_mint_hidden, d, other)?,
                    })
                }
                Fusion::ConcatAtEnd => None,
            };
            fusion_layers.push(FusionLayer { text, gnn, mint });
        }
        Ok(Self {
            config,
            sizes,
            token_emb,
            pos_emb,
            emb_ln,
            text_layers,
            node_emb,
            int_node,
            rel_emb,
            fusion_layers,
        })
    }

    pub fn check_input(&self, seg: &TextSegment, local: &LocalKG) -> Result<()> {
        if seg.len() > self.config.max_seq_len || seg.ids.is_empty() {
            return Err(Error::Bounds {
                what: "sequence length",
                id: seg.len(),
                len: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = seg.ids.iter().find(|&&t| t as usize >= self.sizes.tokens) {
            return Err(Error::Bounds {
                what: "token",
                id: bad as usize,
                len: self.sizes.tokens,
            });
        }
        if local.nodes.len() > self.config.max_nodes + 1 {
            return Err(Error::Bounds {
                what: "node count",
                id: local.nodes.len(),
                len: self.config.max_nodes + 1,
            });
        }
        for n in &local.nodes {
            if let LocalNode::Entity(e) = n {
                if e.0 >= self.sizes.entities {
                    return Err(Error::Bounds {
                        what: "entity",
                        id: e.0,
                        len: self.sizes.entities,
                    });
                }
            }
        }
        for e in &local.edges {
            if e.rel.0 >= self.sizes.relations || e.head >= local.nodes.len() || e.tail >= local.nodes.len() {
                return Err(Error::Bounds {
                    what: "edge",
                    id: e.rel.0,
                    len: self.sizes.relations,
                });
            }
        }
        Ok(())
    }

    fn embed_tokens<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        seg: &TextSegment,
        rng: &mut Option<&mut Rng>,
    ) -> Result<Var<'t, F>> {
        let ids: Vec<usize> = seg.ids.iter().map(|&t| t as usize).collect();
        let pos: Vec<usize> = (0..ids.len()).collect();
        let x = (|| {
            let x = p.var(self.token_emb).gather_rows(&ids)?.add(p.var(self.pos_emb).gather_rows(&pos)?)?;
            dropout(self.emb_ln.apply(p, x)?, self.config.dropout, rng)
        })();
        x.map_err(Error::in_layer("lm.embeddings"))
    }

    fn embed_nodes<'t, F: Real>(&self, p: &Binding<'t, '_, F>, local: &LocalKG) -> Result<Var<'t, F>> {
        if local.is_dummy {
            return Ok(p.tape().constant(Tensor::zeros(&[local.nodes.len(), self.config.d_node])));
        }
        let ids: Vec<usize> = local.nodes[1..]
            .iter()
            .map(|n| match n {
                LocalNode::Entity(e) => e.0,
                _ => 0,
            })
            .collect();
        let v = (|| {
            let ents = p.var(self.node_emb).gather_rows(&ids)?;
            Var::concat(&[p.var(self.int_node), ents], 0)
        })();
        v.map_err(Error::in_layer("node.embeddings"))
    }

    /// Runs the full encoder. `rng` drives dropout and is only consulted in train mode.
    pub fn encode<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        seg: &TextSegment,
        local: &LocalKG,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<EncoderOutput<'t, F>> {
        self.check_input(seg, local)?;
        let mut rng = if mode == Mode::Train { rng } else { None };
        let cfg = &self.config;
        let mut h = self.embed_tokens(p, seg, &mut rng)?;
        for (i, layer) in self.text_layers.iter().enumerate() {
            h = layer
                .forward(p, h, cfg.heads_text, cfg.dropout, &mut rng)
                .map_err(Error::in_layer(format!("lm.layer{i}")))?;
        }
        let mut v = self.embed_nodes(p, local)?;
        let edges = message_edges(local);
        let rel_table = p.var(self.rel_emb);
        let mut attention = Vec::new();
        let n_tokens = seg.len();
        for (m, layer) in self.fusion_layers.iter().enumerate() {
            let k = cfg.n_text_layers + m;
            h = layer
                .text
                .forward(p, h, cfg.heads_text, cfg.dropout, &mut rng)
                .map_err(Error::in_layer(format!("lm.layer{k}")))?;
            if !local.is_dummy {
                let (nv, weights) = layer
                    .gnn
                    .forward(p, v, rel_table, &edges, cfg.heads_gnn)
                    .map_err(Error::in_layer(format!("gnn.layer{m}")))?;
                v = nv;
                attention.push(LayerAttention {
                    layer: m,
                    edges: edges.clone(),
                    weights,
                });
            }
            if let Some(mint) = &layer.mint {
                let step = || -> TResult<(Var<'t, F>, Var<'t, F>)> {
                    let h_int = h.slice(0, 0, 1)?;
                    let v_int = v.slice(0, 0, 1)?;
                    let (h_int, v_int) = mint.forward(p, h_int, v_int)?;
                    let h = if n_tokens > 1 {
                        Var::concat(&[h_int, h.slice(0, 1, n_tokens - 1)?], 0)?
                    } else {
                        h_int
                    };
                    if local.is_dummy {
                        return Ok((h, v));
                    }
                    let n = v.shape()[0];
                    let v = Var::concat(&[v_int, v.slice(0, 1, n - 1)?], 0)?;
                    Ok((h, v))
                };
                (h, v) = step().map_err(Error::in_layer(format!("mint.layer{m}")))?;
            }
        }
        Ok(EncoderOutput {
            tokens: h,
            nodes: v,
            attention,
        })
    }

}
