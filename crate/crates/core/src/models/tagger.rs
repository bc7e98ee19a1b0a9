//! Encoder tagger with a BIO entity head and a bilinear relation head.

use super::layers::{add_encoder, encode, linear};
use super::optim::{train_loop, TrainConfig};
use super::params::{Binder, Params};
use super::{check_batch, ModelConfig, ModelError, Result, PAD};
use crate::autodiff::{NodeId, Tensor};
use crate::metrics::{EntitySpan, RelationInstance};
use crate::store::{TensorKind, ZoneTag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ENTITY_LABELS: [&str; 3] = ["kpi", "cy", "py"];
/// `O`, then `B-`/`I-` for each entity label.
pub const TAG_LABELS: [&str; 7] = ["O", "B-kpi", "I-kpi", "B-cy", "I-cy", "B-py", "I-py"];
/// Index 0 means "no relation".
pub const RELATION_LABELS: [&str; 3] = ["none", "kpi-cy", "kpi-py"];

/// A sentence with gold entities (token positions) and relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingExample {
    pub tokens: Vec<usize>,
    pub entities: Vec<EntitySpan>,
    pub relations: Vec<RelationInstance>,
}

impl TaggingExample {
    /// BIO tag ids per token.
    pub fn tags(&self) -> Vec<usize> {
        let mut tags = vec![0; self.tokens.len()];
        for e in &self.entities {
            let base = 1 + 2 * label_index(&e.label).expect("known entity label");
            for (k, &pos) in e.token_ids.iter().enumerate() {
                tags[pos as usize] = if k == 0 { base } else { base + 1 };
            }
        }
        tags
    }

    /// Relation label index for every ordered pair of gold entities.
    fn pair_targets(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for h in &self.entities {
            for t in &self.entities {
                if std::ptr::eq(h, t) {
                    continue;
                }
                let label = self
                    .relations
                    .iter()
                    .find(|r| r.head == *h && r.tail == *t)
                    .map_or(0, |r| RELATION_LABELS.iter().position(|l| *l == r.label).expect("known relation label"));
                out.push(label);
            }
        }
        out
    }
}

fn label_index(label: &str) -> Option<usize> {
    ENTITY_LABELS.iter().position(|l| *l == label)
}

/// An ordered pair of entity spans within one sentence of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanPair {
    pub sentence: usize,
    pub head: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerOutput {
    /// `[batch, seq, TAG_LABELS.len()]`
    pub tag_logits: Tensor,
    /// `[pairs.len(), RELATION_LABELS.len()]`, one row per entry of `pairs`.
    pub relation_logits: Tensor,
    pub spans: Vec<Vec<EntitySpan>>,
    pub pairs: Vec<SpanPair>,
}

/// Decodes BIO tags into labeled spans. An `I-x` that does not continue an
/// open `x` span starts a new one; `PAD` positions are skipped.
pub fn decode_tags(tags: &[usize], tokens: &[usize]) -> Vec<EntitySpan> {
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut open: Option<usize> = None;
    for (pos, (&tag, &tok)) in tags.iter().zip(tokens).enumerate() {
        if tag == 0 || tok == PAD {
            open = None;
            continue;
        }
        let label = (tag - 1) / 2;
        let begin = (tag - 1) % 2 == 0;
        match open {
            Some(l) if l == label && !begin => {
                spans.last_mut().unwrap().token_ids.insert(pos as u32);
            }
            _ => {
                spans.push(EntitySpan::new([pos as u32], ENTITY_LABELS[label]));
                open = Some(label);
            }
        }
    }
    spans
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub config: ModelConfig,
    pub params: Params,
}

struct Built {
    tag_logits: NodeId,
    relation_logits: Option<NodeId>,
    pairs: Vec<SpanPair>,
}

impl TaggerModel {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        add_encoder(&mut params, &config, &mut rng);
        let d = config.model_dim;
        let head = ZoneTag::head();
        params.add_linear("head.tag", d, TAG_LABELS.len(), head, &mut rng);
        params.add_linear("head.rel.head", d, d, head, &mut rng);
        params.add_linear("head.rel.tail", d, d, head, &mut rng);
        params.add_random("head.rel.bilinear.weight", TensorKind::Weight, head, &[d, d * RELATION_LABELS.len()], &mut rng);
        params.insert("head.rel.bias", TensorKind::Bias, head, Tensor::zeros(&[RELATION_LABELS.len()]));
        Ok(Self { config, params })
    }

    fn build(&self, b: &mut Binder, tokens: &[Vec<usize>], spans: Option<&[Vec<EntitySpan>]>) -> (Built, Vec<Vec<EntitySpan>>) {
        let (batch, len) = (tokens.len(), tokens[0].len());
        let d = self.config.model_dim;
        let hidden = encode(b, &self.config, tokens);
        let tag_logits = linear(b, hidden, "head.tag");
        let spans: Vec<Vec<EntitySpan>> = match spans {
            Some(s) => s.to_vec(),
            None => {
                let tags = b.g.value(tag_logits).argmax_rows();
                tokens.iter().enumerate().map(|(i, row)| decode_tags(&tags[i * len..(i + 1) * len], row)).collect()
            }
        };

        // Mean-pool each span, then score every ordered pair bilinearly.
        let mut offsets = Vec::with_capacity(batch);
        let mut n_spans = 0;
        for s in &spans {
            offsets.push(n_spans);
            n_spans += s.len();
        }
        let mut pairs = Vec::new();
        for (i, s) in spans.iter().enumerate() {
            for h in 0..s.len() {
                for t in 0..s.len() {
                    if h != t {
                        pairs.push(SpanPair { sentence: i, head: h, tail: t });
                    }
                }
            }
        }
        if pairs.is_empty() {
            return (Built { tag_logits, relation_logits: None, pairs }, spans);
        }
        let mut pool = vec![0.0; n_spans * batch * len];
        for (i, s) in spans.iter().enumerate() {
            for (k, span) in s.iter().enumerate() {
                let w = 1.0 / span.len() as f64;
                for &pos in &span.token_ids {
                    pool[(offsets[i] + k) * batch * len + i * len + pos as usize] = w;
                }
            }
        }
        let pool = b.g.constant(Tensor::new(vec![n_spans, batch * len], pool));
        let flat = b.g.reshape(hidden, &[batch * len, d]);
        let pooled = b.g.matmul(pool, flat);
        let heads = linear(b, pooled, "head.rel.head");
        let tails = linear(b, pooled, "head.rel.tail");
        let select = |which: &dyn Fn(&SpanPair) -> usize| {
            let mut m = vec![0.0; pairs.len() * n_spans];
            for (r, p) in pairs.iter().enumerate() {
                m[r * n_spans + offsets[p.sentence] + which(p)] = 1.0;
            }
            Tensor::new(vec![pairs.len(), n_spans], m)
        };
        let sel_h = b.g.constant(select(&|p| p.head));
        let sel_t = b.g.constant(select(&|p| p.tail));
        let h = b.g.matmul(sel_h, heads);
        let t = b.g.matmul(sel_t, tails);
        let n_rel = RELATION_LABELS.len();
        let bil = b.p("head.rel.bilinear.weight");
        let u = b.g.matmul(h, bil);
        let t_tiled = b.g.concat(&vec![t; n_rel]);
        let prod = b.g.mul(u, t_tiled);
        let mut block = vec![0.0; d * n_rel * n_rel];
        for r in 0..n_rel {
            for k in 0..d {
                block[(r * d + k) * n_rel + r] = 1.0;
            }
        }
        let block = b.g.constant(Tensor::new(vec![d * n_rel, n_rel], block));
        let scores = b.g.matmul(prod, block);
        let bias = b.p("head.rel.bias");
        let relation_logits = Some(b.g.add(scores, bias));
        (Built { tag_logits, relation_logits, pairs }, spans)
    }

    fn output(&self, tokens: &[Vec<usize>], spans: Option<&[Vec<EntitySpan>]>) -> Result<TaggerOutput> {
        check_batch(&self.config, tokens)?;
        if let Some(s) = spans {
            check_spans(tokens, s)?;
        }
        let mut b = Binder::new(&self.params);
        let (built, spans) = self.build(&mut b, tokens, spans);
        let relation_logits = match built.relation_logits {
            Some(id) => b.g.value(id).clone(),
            None => Tensor::zeros(&[0, RELATION_LABELS.len()]),
        };
        Ok(TaggerOutput { tag_logits: b.g.value(built.tag_logits).clone(), relation_logits, spans, pairs: built.pairs })
    }

    /// Tag logits, plus relation logits over the entity spans decoded from them.
    pub fn forward(&self, tokens: &[Vec<usize>]) -> Result<TaggerOutput> {
        self.output(tokens, None)
    }

    /// Like [`forward`](Self::forward) but scoring the given spans.
    pub fn forward_with_spans(&self, tokens: &[Vec<usize>], spans: &[Vec<EntitySpan>]) -> Result<TaggerOutput> {
        self.output(tokens, Some(spans))
    }

    /// Predicted relations for each sentence of a batch.
    pub fn predict(&self, tokens: &[Vec<usize>]) -> Result<Vec<Vec<RelationInstance>>> {
        let out = self.forward(tokens)?;
        let mut rels = vec![Vec::new(); tokens.len()];
        for (p, label) in out.pairs.iter().zip(out.relation_logits.argmax_rows()) {
            if label != 0 {
                let s = &out.spans[p.sentence];
                rels[p.sentence].push(RelationInstance::new(RELATION_LABELS[label], s[p.head].clone(), s[p.tail].clone()));
            }
        }
        Ok(rels)
    }

    /// Tag cross-entropy plus relation cross-entropy over gold spans; returns
    /// the graph, the loss node and the binder's parameter leaves.
    fn loss_graph<'a>(&'a self, examples: &[&TaggingExample]) -> Result<(Binder<'a>, NodeId)> {
        let tokens = pad_batch(examples.iter().map(|e| e.tokens.as_slice()));
        check_batch(&self.config, &tokens)?;
        let spans: Vec<Vec<EntitySpan>> = examples.iter().map(|e| e.entities.clone()).collect();
        check_spans(&tokens, &spans)?;
        let mut b = Binder::new(&self.params);
        let (built, _) = self.build(&mut b, &tokens, Some(&spans));
        let len = tokens[0].len();
        let mut tag_targets = Vec::with_capacity(tokens.len() * len);
        for e in examples {
            let tags = e.tags();
            tag_targets.extend((0..len).map(|i| tags.get(i).copied()));
        }
        let flat = b.g.reshape(built.tag_logits, &[tokens.len() * len, TAG_LABELS.len()]);
        let mut loss = b.g.cross_entropy(flat, &tag_targets);
        if let Some(rel) = built.relation_logits {
            let targets: Vec<Option<usize>> = examples.iter().flat_map(|e| e.pair_targets()).map(Some).collect();
            let rl = b.g.cross_entropy(rel, &targets);
            loss = b.g.add(loss, rl);
        }
        Ok((b, loss))
    }

    /// Training loss on a batch of examples (no parameter update).
    pub fn loss(&self, examples: &[TaggingExample]) -> Result<f64> {
        let refs: Vec<&TaggingExample> = examples.iter().collect();
        let (b, loss) = self.loss_graph(&refs)?;
        Ok(b.g.value(loss).item())
    }

    /// Mean loss over `data` in chunks of `batch`.
    pub fn eval_loss(&self, data: &[TaggingExample], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        for chunk in data.chunks(batch.max(1)) {
            total += self.loss(chunk)? * chunk.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Loss and parameter gradients on a batch.
    pub fn loss_and_grads(&self, examples: &[&TaggingExample]) -> Result<(f64, std::collections::HashMap<String, Tensor>)> {
        let (b, loss) = self.loss_graph(examples)?;
        let grads = b.g.backward(loss)?;
        Ok((b.g.value(loss).item(), grads.into_params()))
    }

    /// Adam training on `data`; returns per-step losses.
    pub fn train(&mut self, data: &[TaggingExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
        let config = self.config.clone();
        train_loop(&mut self.params, data.len(), cfg, |params, idx| {
            let model = TaggerModel { config: config.clone(), params: params.clone() };
            let batch: Vec<&TaggingExample> = idx.iter().map(|&i| &data[i]).collect();
            model.loss_and_grads(&batch)
        })
    }
}

/// Right-pads sequences with `PAD` to a common length.
pub fn pad_batch<'a>(seqs: impl Iterator<Item = &'a [usize]>) -> Vec<Vec<usize>> {
    let seqs: Vec<&[usize]> = seqs.collect();
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter().map(|s| s.iter().copied().chain(std::iter::repeat(PAD)).take(len).collect()).collect()
}

fn check_spans(tokens: &[Vec<usize>], spans: &[Vec<EntitySpan>]) -> Result<()> {
    if spans.len() != tokens.len() {
        return Err(ModelError::Shape(format!("{} span lists for {} sentences", spans.len(), tokens.len())));
    }
    for (row, ss) in tokens.iter().zip(spans) {
        for s in ss {
            if s.is_empty() || s.token_ids.iter().any(|&p| p as usize >= row.len()) {
                return Err(ModelError::Shape(format!("span {:?} outside sentence of length {}", s.token_ids, row.len())));
            }
            if label_index(&s.label).is_none() {
                return Err(ModelError::Shape(format!("unknown entity label {}", s.label)));
            }
        }
    }
    Ok(())
}
