//! Transformer building blocks over a [`Binder`].

use super::params::{Binder, Params};
use super::{ModelConfig, PAD};
use crate::autodiff::{NodeId, Tensor};
use crate::store::{TensorKind, ZoneTag};
use rand::Rng;

/// Additive attention mask value; `exp` of it underflows to exactly zero.
const MASKED: f64 = -1e9;

/// `[batch, q_len, k_len]` additive mask hiding padded keys and, if `causal`,
/// keys after the query position.
pub(crate) fn attention_mask(keys: &[Vec<usize>], q_len: usize, causal: bool) -> Tensor {
    let k_len = keys.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(keys.len() * q_len * k_len);
    for row in keys {
        for q in 0..q_len {
            for (k, &tok) in row.iter().enumerate() {
                let hidden = tok == PAD || (causal && k > q);
                data.push(if hidden { MASKED } else { 0.0 });
            }
        }
    }
    Tensor::new(vec![keys.len(), q_len, k_len], data)
}

pub(crate) fn add_embeddings<R: Rng>(p: &mut Params, prefix: &str, cfg: &ModelConfig, zone: ZoneTag, rng: &mut R) {
    p.add_random(&format!("{prefix}.emb.weight"), TensorKind::Embedding, zone, &[cfg.vocab, cfg.model_dim], rng);
    p.add_random(&format!("{prefix}.pos.weight"), TensorKind::Embedding, zone, &[cfg.max_len, cfg.model_dim], rng);
    p.add_layer_norm(&format!("{prefix}.emb_ln"), cfg.model_dim, zone);
}

pub(crate) fn add_attention<R: Rng>(p: &mut Params, prefix: &str, d: usize, zone: ZoneTag, rng: &mut R) {
    for proj in ["q", "k", "v", "o"] {
        p.add_linear(&format!("{prefix}.{proj}"), d, d, zone, rng);
    }
}

pub(crate) fn add_ffn<R: Rng>(p: &mut Params, prefix: &str, d: usize, zone: ZoneTag, rng: &mut R) {
    p.add_linear(&format!("{prefix}.up"), d, d * super::FFN_MULT, zone, rng);
    p.add_linear(&format!("{prefix}.down"), d * super::FFN_MULT, d, zone, rng);
}

pub(crate) fn linear(b: &mut Binder, x: NodeId, prefix: &str) -> NodeId {
    let w = b.p(&format!("{prefix}.weight"));
    let bias = b.p(&format!("{prefix}.bias"));
    let y = b.g.matmul(x, w);
    b.g.add(y, bias)
}

pub(crate) fn layer_norm(b: &mut Binder, x: NodeId, prefix: &str) -> NodeId {
    let gain = b.p(&format!("{prefix}.gain"));
    let bias = b.p(&format!("{prefix}.bias"));
    let n = b.g.layer_norm(x);
    let y = b.g.mul(n, gain);
    b.g.add(y, bias)
}

/// Token plus position embeddings, normalized: `[batch, len, d]`.
pub(crate) fn embed(b: &mut Binder, tokens: &[Vec<usize>], prefix: &str) -> NodeId {
    let (batch, len) = (tokens.len(), tokens[0].len());
    let flat: Vec<usize> = tokens.iter().flatten().copied().collect();
    let table = b.p(&format!("{prefix}.emb.weight"));
    let e = b.g.embed(table, &flat);
    let d = b.g.shape(e)[1];
    let e = b.g.reshape(e, &[batch, len, d]);
    let pos_table = b.p(&format!("{prefix}.pos.weight"));
    let positions: Vec<usize> = (0..len).collect();
    let pos = b.g.embed(pos_table, &positions);
    let x = b.g.add(e, pos);
    layer_norm(b, x, &format!("{prefix}.emb_ln"))
}

/// Multi-head attention of `queries` `[B, Tq, d]` over `keys` `[B, Tk, d]`.
pub(crate) fn attention(b: &mut Binder, queries: NodeId, keys: NodeId, mask: NodeId, prefix: &str, heads: usize) -> NodeId {
    let q = linear(b, queries, &format!("{prefix}.q"));
    let k = linear(b, keys, &format!("{prefix}.k"));
    let v = linear(b, keys, &format!("{prefix}.v"));
    let d = *b.g.shape(q).last().unwrap();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = if heads == 1 { q } else { b.g.slice(q, lo, hi) };
        let kh = if heads == 1 { k } else { b.g.slice(k, lo, hi) };
        let vh = if heads == 1 { v } else { b.g.slice(v, lo, hi) };
        let kt = b.g.transpose(kh);
        let s = b.g.matmul(qh, kt);
        let s = b.g.scale(s, scale);
        let s = b.g.add(s, mask);
        let a = b.g.softmax(s);
        outs.push(b.g.matmul(a, vh));
    }
    let cat = if heads == 1 { outs[0] } else { b.g.concat(&outs) };
    linear(b, cat, &format!("{prefix}.o"))
}

fn feed_forward(b: &mut Binder, x: NodeId, prefix: &str) -> NodeId {
    let h = linear(b, x, &format!("{prefix}.up"));
    let h = b.g.gelu(h);
    linear(b, h, &format!("{prefix}.down"))
}

/// Post-norm encoder block.
pub(crate) fn encoder_block(b: &mut Binder, x: NodeId, mask: NodeId, prefix: &str, heads: usize) -> NodeId {
    let a = attention(b, x, x, mask, &format!("{prefix}.attn"), heads);
    let x = b.g.add(x, a);
    let x = layer_norm(b, x, &format!("{prefix}.ln1"));
    let f = feed_forward(b, x, &format!("{prefix}.ffn"));
    let x = b.g.add(x, f);
    layer_norm(b, x, &format!("{prefix}.ln2"))
}

/// Post-norm decoder block: causal self-attention, cross-attention, FFN.
pub(crate) fn decoder_block(b: &mut Binder, x: NodeId, memory: NodeId, self_mask: NodeId, cross_mask: NodeId, prefix: &str, heads: usize) -> NodeId {
    let a = attention(b, x, x, self_mask, &format!("{prefix}.self"), heads);
    let x = b.g.add(x, a);
    let x = layer_norm(b, x, &format!("{prefix}.ln1"));
    let c = attention(b, x, memory, cross_mask, &format!("{prefix}.cross"), heads);
    let x = b.g.add(x, c);
    let x = layer_norm(b, x, &format!("{prefix}.ln2"));
    let f = feed_forward(b, x, &format!("{prefix}.ffn"));
    let x = b.g.add(x, f);
    layer_norm(b, x, &format!("{prefix}.ln3"))
}

pub(crate) fn add_encoder<R: Rng>(p: &mut Params, cfg: &ModelConfig, rng: &mut R) {
    let d = cfg.model_dim;
    add_embeddings(p, "enc", cfg, ZoneTag::new(crate::store::ZoneComponent::Encoder), rng);
    for l in 0..cfg.layers {
        let zone = ZoneTag::encoder(l as u32);
        add_attention(p, &format!("enc.{l}.attn"), d, zone, rng);
        p.add_layer_norm(&format!("enc.{l}.ln1"), d, zone);
        add_ffn(p, &format!("enc.{l}.ffn"), d, zone, rng);
        p.add_layer_norm(&format!("enc.{l}.ln2"), d, zone);
    }
}

/// Runs the encoder stack over a rectangular, `PAD`-padded batch.
pub(crate) fn encode(b: &mut Binder, cfg: &ModelConfig, tokens: &[Vec<usize>]) -> NodeId {
    let len = tokens[0].len();
    let mask = b.g.constant(attention_mask(tokens, len, false));
    let mut x = embed(b, tokens, "enc");
    for l in 0..cfg.layers {
        x = encoder_block(b, x, mask, &format!("enc.{l}"), cfg.heads);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_layout() {
        let m = attention_mask(&[vec![5, 6, PAD]], 3, true);
        assert_eq!(m.shape, vec![1, 3, 3]);
        let hidden: Vec<bool> = m.data.iter().map(|&v| v < 0.0).collect();
        #[rustfmt::skip]
        assert_eq!(hidden, [
            false, true, true,
            false, false, true,
            false, false, true,
        ]);
    }
}
