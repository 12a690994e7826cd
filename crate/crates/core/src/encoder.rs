//! Contextual message passing over an observed fact set, plus the
//! query-side pass that produces representations for masked slots.
//!
//! The graph pass reads only observed facts, so candidate representations
//! never depend on queries. The query pass reads the graph pass's layer
//! `l-1` tables and writes only mask rows.

use std::ops::Range;
use std::rc::Rc;

use rand::Rng;

use crate::config::{Ablations, ModelConfig};
use crate::data::{Fact, Kind, MaskedQuery, Role, SlotState};
use crate::error::{Error, Result};
use crate::numerics::nn::{LayerNorm, Linear, Mlp, MultiHeadAttention};
use crate::numerics::{truncated_normal, Bound, ParamId, ParamTree, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub enum Side {
    Entity,
    Relation,
}

/// Pre-LN attention block followed by a Pre-LN MLP, both residual.
#[derive(Clone, Copy, Debug)]
struct Block {
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: Mlp,
}

#[derive(Clone, Copy, Debug)]
struct LayerParams {
    role: [Linear; 3],
    msg: Mlp,
    w_ent: Linear,
    w_rel: Linear,
    ent: Block,
    rel: Block,
}

#[derive(Clone, Copy, Debug)]
enum LayerZero {
    Shared { z_ent: ParamId, z_rel: ParamId },
    Individual { ent: ParamId, rel: ParamId },
}

/// Parameter layout of the encoder. Tensors live in a [`ParamTree`].
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub config: ModelConfig,
    pub ablations: Ablations,
    pub n_ent: usize,
    pub n_rel: usize,
    zero: LayerZero,
    x_ent: ParamId,
    x_rel: ParamId,
    layers: Vec<LayerParams>,
}

/// Relation/entity row indices of every pair, grouped by role.
#[derive(Clone, Debug)]
pub struct PairIndex<T> {
    n_facts: usize,
    role_ranges: [Range<usize>; 3],
    role_rel: [Rc<Vec<usize>>; 3],
    role_ent: [Rc<Vec<usize>>; 3],
    rel_rows: Rc<Vec<usize>>,
    ent_rows: Rc<Vec<usize>>,
    fact_of: Rc<Vec<usize>>,
    inv_len: Rc<Vec<T>>,
}

impl<T: Scalar> PairIndex<T> {
    /// Each item lists one fact's `(relation row, entity row, role)` pairs.
    pub fn from_pairs<I>(facts: I) -> PairIndex<T>
    where
        I: IntoIterator<Item = Vec<(usize, usize, Role)>>,
    {
        let mut by_role: [Vec<(usize, usize, usize)>; 3] = Default::default();
        let mut n_facts = 0;
        let mut lens = Vec::new();
        for (f, pairs) in facts.into_iter().enumerate() {
            lens.push(pairs.len());
            for (r, e, role) in pairs {
                by_role[role.index()].push((r, e, f));
            }
            n_facts = f + 1;
        }
        let mut role_ranges: [Range<usize>; 3] = Default::default();
        let (mut rel_rows, mut ent_rows, mut fact_of, mut inv_len) = (vec![], vec![], vec![], vec![]);
        let mut role_rel: [Rc<Vec<usize>>; 3] = Default::default();
        let mut role_ent: [Rc<Vec<usize>>; 3] = Default::default();
        for (k, pairs) in by_role.iter().enumerate() {
            let start = rel_rows.len();
            for &(r, e, f) in pairs {
                rel_rows.push(r);
                ent_rows.push(e);
                fact_of.push(f);
                // n_qualifiers + 1 = pairs - 1
                inv_len.push(T::one() / T::from_usize(lens[f].saturating_sub(1).max(1)).expect("len"));
            }
            role_ranges[k] = start..rel_rows.len();
            role_rel[k] = Rc::new(rel_rows[start..].to_vec());
            role_ent[k] = Rc::new(ent_rows[start..].to_vec());
        }
        PairIndex {
            n_facts,
            role_ranges,
            role_rel,
            role_ent,
            rel_rows: Rc::new(rel_rows),
            ent_rows: Rc::new(ent_rows),
            fact_of: Rc::new(fact_of),
            inv_len: Rc::new(inv_len),
        }
    }

    pub fn from_facts<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> PairIndex<T> {
        PairIndex::from_pairs(facts.into_iter().map(|f| {
            f.decompose()
                .into_iter()
                .map(|(r, e, role)| (r.index(), e.index(), role))
                .collect()
        }))
    }

    pub fn n_pairs(&self) -> usize {
        self.rel_rows.len()
    }

    pub fn n_facts(&self) -> usize {
        self.n_facts
    }

    /// Entity row of each pair in processing order.
    pub fn ent_rows(&self) -> &Rc<Vec<usize>> {
        &self.ent_rows
    }

    pub fn rel_rows(&self) -> &Rc<Vec<usize>> {
        &self.rel_rows
    }

    /// Fact of every pair.
    pub fn fact_of(&self) -> &Rc<Vec<usize>> {
        &self.fact_of
    }

    /// `1 / (pairs in the fact - 1)` per pair, the context-mean scale.
    pub fn inv_len(&self) -> &Rc<Vec<T>> {
        &self.inv_len
    }
}

/// Where a masked slot's representation lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskRef {
    pub query: usize,
    pub position: usize,
    pub kind: Kind,
    /// Row in the entity-mask or relation-mask table, by `kind`.
    pub row: usize,
}

/// Pair structure of a batch of masked queries. Mask rows are addressed
/// after the vocabulary rows: entity mask `j` is entity row `n_ent + j`.
#[derive(Clone, Debug)]
pub struct QueryLayout<T> {
    pub slots: Vec<MaskRef>,
    pub n_ent_masks: usize,
    pub n_rel_masks: usize,
    pairs: PairIndex<T>,
    ent_msg_pairs: Rc<Vec<usize>>,
    ent_msg_seg: Rc<Vec<usize>>,
    rel_msg_pairs: Rc<Vec<usize>>,
    rel_msg_seg: Rc<Vec<usize>>,
}

impl<T: Scalar> QueryLayout<T> {
    pub fn build(queries: &[MaskedQuery], n_ent: usize, n_rel: usize) -> Result<QueryLayout<T>> {
        let mut slots = Vec::new();
        let (mut ne, mut nr) = (0usize, 0usize);
        let mut facts = Vec::with_capacity(queries.len());
        for (qi, q) in queries.iter().enumerate() {
            let mut rows = Vec::with_capacity(q.len());
            for pos in 0..q.len() {
                let kind = Kind::at_position(pos);
                let (size, counter) = match kind {
                    Kind::Entity => (n_ent, &mut ne),
                    Kind::Relation => (n_rel, &mut nr),
                };
                let row = match q.state(pos) {
                    SlotState::Known(id) => {
                        if id as usize >= size {
                            return Err(Error::OutOfVocab {
                                kind: kind.as_str(),
                                index: id as usize,
                                size,
                            });
                        }
                        id as usize
                    }
                    SlotState::Masked => {
                        slots.push(MaskRef {
                            query: qi,
                            position: pos,
                            kind,
                            row: *counter,
                        });
                        *counter += 1;
                        size + *counter - 1
                    }
                };
                rows.push(row);
            }
            let mut pairs = vec![(rows[1], rows[0], Role::Head), (rows[1], rows[2], Role::Tail)];
            for i in 0..q.n_qualifiers() {
                pairs.push((rows[3 + 2 * i], rows[4 + 2 * i], Role::Qual));
            }
            facts.push(pairs);
        }
        let pairs = PairIndex::from_pairs(facts);
        let (mut ep, mut es, mut rp, mut rs) = (vec![], vec![], vec![], vec![]);
        for i in 0..pairs.n_pairs() {
            if pairs.ent_rows[i] >= n_ent {
                ep.push(i);
                es.push(pairs.ent_rows[i] - n_ent);
            }
            if pairs.rel_rows[i] >= n_rel {
                rp.push(i);
                rs.push(pairs.rel_rows[i] - n_rel);
            }
        }
        Ok(QueryLayout {
            slots,
            n_ent_masks: ne,
            n_rel_masks: nr,
            pairs,
            ent_msg_pairs: Rc::new(ep),
            ent_msg_seg: Rc::new(es),
            rel_msg_pairs: Rc::new(rp),
            rel_msg_seg: Rc::new(rs),
        })
    }
}

/// Representation tables at one layer.
#[derive(Clone, Copy, Debug)]
pub struct EncodingState {
    pub entities: Var,
    pub relations: Var,
    pub ent_masks: Var,
    pub rel_masks: Var,
    pub layer: usize,
}

/// Entity and relation tables at every layer `0..=L` of the graph pass.
#[derive(Clone, Debug)]
pub struct GraphEncoding {
    pub ent: Vec<Var>,
    pub rel: Vec<Var>,
}

impl GraphEncoding {
    pub fn final_entities(&self) -> Var {
        *self.ent.last().expect("layer 0 present")
    }

    pub fn final_relations(&self) -> Var {
        *self.rel.last().expect("layer 0 present")
    }

    /// Detached copy of every layer, reusable across tapes.
    pub fn freeze<T: Scalar>(&self, tape: &Tape<T>) -> GraphCache<T> {
        GraphCache {
            ent: self.ent.iter().map(|&v| tape.value(v).clone()).collect(),
            rel: self.rel.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }
}

/// Graph-pass outputs held outside any tape.
#[derive(Clone, Debug)]
pub struct GraphCache<T> {
    pub ent: Vec<Tensor<T>>,
    pub rel: Vec<Tensor<T>>,
}

impl<T: Scalar> GraphCache<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> GraphEncoding {
        GraphEncoding {
            ent: self.ent.iter().map(|t| tape.constant(t.clone())).collect(),
            rel: self.rel.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn final_entities(&self) -> &Tensor<T> {
        self.ent.last().expect("layer 0 present")
    }

    pub fn final_relations(&self) -> &Tensor<T> {
        self.rel.last().expect("layer 0 present")
    }
}

fn has_rows<T: Scalar>(seg: &[usize], n: usize) -> Rc<Vec<T>> {
    let mut has = vec![T::zero(); n];
    for &t in seg {
        has[t] = T::one();
    }
    Rc::new(has)
}

impl Block {
    fn new<T: Scalar, R: Rng + ?Sized>(
        tree: &mut ParamTree<T>,
        name: &str,
        cfg: &ModelConfig,
        heads: usize,
        rng: &mut R,
    ) -> Result<Block> {
        let d = cfg.d;
        Ok(Block {
            ln_q: LayerNorm::new(tree, &format!("{name}.ln_query"), d, false)?,
            ln_kv: LayerNorm::new(tree, &format!("{name}.ln_messages"), d, false)?,
            attn: MultiHeadAttention::new(tree, &format!("{name}.attn"), d, heads, cfg.weight_init(), rng)?,
            ln_ffn: LayerNorm::new(tree, &format!("{name}.ln_mlp"), d, cfg.decay_pre_mlp_ln)?,
            ffn: Mlp::new(tree, &format!("{name}.mlp"), d, d * cfg.ffn_mult, d, cfg.weight_init(), rng)?,
        })
    }
}

impl EncoderParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        config: &ModelConfig,
        ablations: &Ablations,
        n_ent: usize,
        n_rel: usize,
        tree: &mut ParamTree<T>,
        rng: &mut R,
    ) -> Result<EncoderParams> {
        config.validate()?;
        let (d, std, init) = (config.d, config.token_std, config.weight_init());
        let zero = if ablations.individual_init {
            LayerZero::Individual {
                ent: tree.add("embed.entities", truncated_normal(n_ent, d, std, rng), true)?,
                rel: tree.add("embed.relations", truncated_normal(n_rel, d, std, rng), true)?,
            }
        } else {
            LayerZero::Shared {
                z_ent: tree.add("tokens.entity", truncated_normal(1, d, std, rng), true)?,
                z_rel: tree.add("tokens.relation", truncated_normal(1, d, std, rng), true)?,
            }
        };
        let (x_ent, x_rel) = match (zero, config.tied_tokens) {
            (LayerZero::Shared { z_ent, z_rel }, true) => (z_ent, z_rel),
            _ => (
                tree.add("tokens.mask_entity", truncated_normal(1, d, std, rng), true)?,
                tree.add("tokens.mask_relation", truncated_normal(1, d, std, rng), true)?,
            ),
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let n = format!("layer{l}");
            layers.push(LayerParams {
                role: [
                    Linear::new(tree, &format!("{n}.role_head"), 2 * d, d, init, rng)?,
                    Linear::new(tree, &format!("{n}.role_tail"), 2 * d, d, init, rng)?,
                    Linear::new(tree, &format!("{n}.role_qual"), 2 * d, d, init, rng)?,
                ],
                msg: Mlp::new(tree, &format!("{n}.context_mlp"), d, d, d, init, rng)?,
                w_ent: Linear::new(tree, &format!("{n}.to_entity"), 2 * d, d, init, rng)?,
                w_rel: Linear::new(tree, &format!("{n}.to_relation"), 2 * d, d, init, rng)?,
                ent: Block::new(tree, &format!("{n}.entity"), config, config.heads_ent, rng)?,
                rel: Block::new(tree, &format!("{n}.relation"), config, config.heads_rel, rng)?,
            });
        }
        Ok(EncoderParams {
            config: config.clone(),
            ablations: *ablations,
            n_ent,
            n_rel,
            zero,
            x_ent,
            x_rel,
            layers,
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn mask_token(&self, kind: Kind) -> ParamId {
        match kind {
            Kind::Entity => self.x_ent,
            Kind::Relation => self.x_rel,
        }
    }

    fn layer(&self, l: usize) -> Result<&LayerParams> {
        if l == 0 || l > self.layers.len() {
            return Err(Error::Config(format!("layer {l} outside 1..={}", self.layers.len())));
        }
        Ok(&self.layers[l - 1])
    }

    /// Layer-0 tables: shared (or per-item) tokens for the vocabulary and
    /// mask tokens for `ent_masks` + `rel_masks` slots.
    pub fn init_representations<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        ent_masks: usize,
        rel_masks: usize,
    ) -> Result<EncodingState> {
        let (entities, relations) = match self.zero {
            LayerZero::Shared { z_ent, z_rel } => (
                tape.broadcast_row(p.var(z_ent), self.n_ent)?,
                tape.broadcast_row(p.var(z_rel), self.n_rel)?,
            ),
            LayerZero::Individual { ent, rel } => (p.var(ent), p.var(rel)),
        };
        Ok(EncodingState {
            entities,
            relations,
            ent_masks: tape.broadcast_row(p.var(self.x_ent), ent_masks)?,
            rel_masks: tape.broadcast_row(p.var(self.x_rel), rel_masks)?,
            layer: 0,
        })
    }

    /// `W_role [p; e] + b`, row-wise.
    pub fn pair_repr<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        l: usize,
        p_rep: Var,
        e_rep: Var,
        role: Role,
    ) -> Result<Var> {
        let cat = tape.concat_cols(p_rep, e_rep)?;
        self.layer(l)?.role[role.index()].forward(tape, p, cat)
    }

    /// Sum of pair rows per fact: row `f` adds every pair `i` with `fact_of[i] == f`.
    pub fn fact_repr<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        pair_reps: Var,
        fact_of: Rc<Vec<usize>>,
        n_facts: usize,
    ) -> Result<Var> {
        if tape.shape(pair_reps)[0] == 0 {
            return Err(Error::shape("fact_repr", "no pairs"));
        }
        tape.scatter_add_rows(pair_reps, fact_of, n_facts)
    }

    /// Input to the context MLP: `(z_fact - z_pair) * inv_len`, or
    /// `z_fact * inv_len` when context exclusion is ablated.
    pub fn context_input<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        fact_rep: Var,
        pair_rep: Var,
        inv_len: Rc<Vec<T>>,
    ) -> Result<Var> {
        let diff = if self.ablations.no_context_msg {
            fact_rep
        } else {
            tape.sub(fact_rep, pair_rep)?
        };
        tape.scale_rows(diff, inv_len)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn context_message<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        l: usize,
        fact_rep: Var,
        pair_rep: Var,
        inv_len: Rc<Vec<T>>,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let x = self.context_input(tape, fact_rep, pair_rep, inv_len)?;
        self.layer(l)?.msg.forward(tape, p, x, self.config.dropout, rng, training)
    }

    /// `(W_ENT [m; p], W_REL [m; e])`.
    pub fn component_messages<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        l: usize,
        ctx: Var,
        p_rep: Var,
        e_rep: Var,
    ) -> Result<(Var, Var)> {
        let lp = self.layer(l)?;
        let to_e = tape.concat_cols(ctx, p_rep)?;
        let to_p = tape.concat_cols(ctx, e_rep)?;
        Ok((lp.w_ent.forward(tape, p, to_e)?, lp.w_rel.forward(tape, p, to_p)?))
    }

    /// Residual attention over incoming messages then residual MLP. Row `t`
    /// of `reps` receives messages `j` with `seg[j] == t`; rows receiving none
    /// are returned unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn aggregate_update<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        l: usize,
        side: Side,
        reps: Var,
        incoming: Var,
        seg: Rc<Vec<usize>>,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let lp = self.layer(l)?;
        let block = match side {
            Side::Entity => &lp.ent,
            Side::Relation => &lp.rel,
        };
        let n = tape.shape(reps)[0];
        if seg.is_empty() {
            return Ok(reps);
        }
        let has = has_rows::<T>(&seg, n);
        let rate = self.config.dropout;
        let kv = block.ln_kv.forward(tape, p, incoming)?;
        let a = if self.ablations.mean_pool_attention {
            tape.segment_mean(kv, seg, n)?
        } else {
            let h = block.ln_q.forward(tape, p, reps)?;
            block.attn.forward_segments(tape, p, h, kv, kv, seg)?
        };
        let a = tape.dropout(a, rate, rng, training)?;
        let a = tape.scale_rows(a, has.clone())?;
        let r1 = tape.add(reps, a)?;
        let h = block.ln_ffn.forward(tape, p, r1)?;
        let f = block.ffn.forward(tape, p, h, rate, rng, training)?;
        let f = tape.dropout(f, rate, rng, training)?;
        let f = tape.scale_rows(f, has)?;
        tape.add(r1, f)
    }

    /// Entity and relation messages for every pair of `idx`, in pair order,
    /// reading representations from the given tables.
    #[allow(clippy::too_many_arguments)]
    fn layer_messages<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        l: usize,
        ent_tab: Var,
        rel_tab: Var,
        idx: &PairIndex<T>,
        rng: &mut R,
        training: bool,
    ) -> Result<(Var, Var)> {
        let (mut zs, mut ps, mut es) = (vec![], vec![], vec![]);
        for role in Role::ALL {
            let k = role.index();
            if idx.role_ranges[k].is_empty() {
                continue;
            }
            let pr = tape.gather_rows(rel_tab, idx.role_rel[k].clone())?;
            let er = tape.gather_rows(ent_tab, idx.role_ent[k].clone())?;
            zs.push(self.pair_repr(tape, p, l, pr, er, role)?);
            ps.push(pr);
            es.push(er);
        }
        let z = tape.stack_rows(&zs)?;
        let p_all = tape.stack_rows(&ps)?;
        let e_all = tape.stack_rows(&es)?;
        let zf = self.fact_repr(tape, z, idx.fact_of.clone(), idx.n_facts)?;
        let zf_pair = tape.gather_rows(zf, idx.fact_of.clone())?;
        let ctx = self.context_message(tape, p, l, zf_pair, z, idx.inv_len.clone(), rng, training)?;
        self.component_messages(tape, p, l, ctx, p_all, e_all)
    }

    /// Graph pass over the observed facts indexed by `graph`.
    pub fn encode_graph<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        graph: &PairIndex<T>,
        rng: &mut R,
        training: bool,
    ) -> Result<GraphEncoding> {
        let s0 = self.init_representations(tape, p, 0, 0)?;
        let mut enc = GraphEncoding {
            ent: vec![s0.entities],
            rel: vec![s0.relations],
        };
        if let Some(&bad) = graph.ent_rows.iter().find(|&&e| e >= self.n_ent) {
            return Err(Error::OutOfVocab {
                kind: "entity",
                index: bad,
                size: self.n_ent,
            });
        }
        if let Some(&bad) = graph.rel_rows.iter().find(|&&r| r >= self.n_rel) {
            return Err(Error::OutOfVocab {
                kind: "relation",
                index: bad,
                size: self.n_rel,
            });
        }
        for l in 1..=self.n_layers() {
            let (e_prev, r_prev) = (enc.ent[l - 1], enc.rel[l - 1]);
            if graph.n_pairs() == 0 {
                enc.ent.push(e_prev);
                enc.rel.push(r_prev);
                continue;
            }
            let (me, mr) = self.layer_messages(tape, p, l, e_prev, r_prev, graph, rng, training)?;
            let e = self.aggregate_update(tape, p, l, Side::Entity, e_prev, me, graph.ent_rows.clone(), rng, training)?;
            let r = self.aggregate_update(tape, p, l, Side::Relation, r_prev, mr, graph.rel_rows.clone(), rng, training)?;
            enc.ent.push(e);
            enc.rel.push(r);
        }
        Ok(enc)
    }

    /// Query pass: mask rows after `L` layers, each layer reading the graph
    /// tables of the previous layer and the masks of the same query.
    pub fn encode_queries<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        graph: &GraphEncoding,
        layout: &QueryLayout<T>,
        rng: &mut R,
        training: bool,
    ) -> Result<(Var, Var)> {
        let mut me = tape.broadcast_row(p.var(self.x_ent), layout.n_ent_masks)?;
        let mut mr = tape.broadcast_row(p.var(self.x_rel), layout.n_rel_masks)?;
        if layout.slots.is_empty() {
            return Ok((me, mr));
        }
        for l in 1..=self.n_layers() {
            let ent_tab = tape.stack_rows(&[graph.ent[l - 1], me])?;
            let rel_tab = tape.stack_rows(&[graph.rel[l - 1], mr])?;
            let (m_ent, m_rel) = self.layer_messages(tape, p, l, ent_tab, rel_tab, &layout.pairs, rng, training)?;
            let new_me = if layout.n_ent_masks > 0 {
                let msgs = tape.gather_rows(m_ent, layout.ent_msg_pairs.clone())?;
                self.aggregate_update(tape, p, l, Side::Entity, me, msgs, layout.ent_msg_seg.clone(), rng, training)?
            } else {
                me
            };
            let new_mr = if layout.n_rel_masks > 0 {
                let msgs = tape.gather_rows(m_rel, layout.rel_msg_pairs.clone())?;
                self.aggregate_update(tape, p, l, Side::Relation, mr, msgs, layout.rel_msg_seg.clone(), rng, training)?
            } else {
                mr
            };
            me = new_me;
            mr = new_mr;
        }
        Ok((me, mr))
    }

    /// Full forward: graph pass over `observed`, then the query pass.
    pub fn encode<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        observed: &PairIndex<T>,
        layout: &QueryLayout<T>,
        rng: &mut R,
        training: bool,
    ) -> Result<EncodingState> {
        let graph = self.encode_graph(tape, p, observed, rng, training)?;
        let (ent_masks, rel_masks) = self.encode_queries(tape, p, &graph, layout, rng, training)?;
        Ok(EncodingState {
            entities: graph.final_entities(),
            relations: graph.final_relations(),
            ent_masks,
            rel_masks,
            layer: self.n_layers(),
        })
    }
}
