//! Encoder-decoder transformer with greedy decoding.

use super::layers::{add_attention, add_embeddings, add_encoder, add_ffn, attention_mask, decoder_block, embed, encode, linear};
use super::optim::{train_loop, TrainConfig};
use super::params::{Binder, Params};
use super::tagger::pad_batch;
use super::{check_batch, ModelConfig, ModelError, Result};
use crate::autodiff::{NodeId, Tensor};
use crate::store::{ZoneComponent, ZoneTag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// A source sequence and the target the decoder should emit (without
/// `BOS`/`EOS`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqExample {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub params: Params,
}

impl Seq2SeqModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.decoder_layers == 0 {
            return Err(ModelError::InvalidConfig("seq2seq model needs decoder_layers >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        add_encoder(&mut params, &config, &mut rng);
        let d = config.model_dim;
        let dec = ZoneTag::new(ZoneComponent::Decoder);
        add_embeddings(&mut params, "dec", &config, dec, &mut rng);
        for l in 0..config.decoder_layers {
            let zone = ZoneTag::decoder(l as u32);
            add_attention(&mut params, &format!("dec.{l}.self"), d, zone, &mut rng);
            params.add_layer_norm(&format!("dec.{l}.ln1"), d, zone);
            add_attention(&mut params, &format!("dec.{l}.cross"), d, zone, &mut rng);
            params.add_layer_norm(&format!("dec.{l}.ln2"), d, zone);
            add_ffn(&mut params, &format!("dec.{l}.ffn"), d, zone, &mut rng);
            params.add_layer_norm(&format!("dec.{l}.ln3"), d, zone);
        }
        params.add_linear("dec.lm", d, config.vocab, dec, &mut rng);
        Ok(Self { config, params })
    }

    /// `[B, T_prefix, vocab]` logits given encoder output `memory`.
    fn decode_logits(&self, b: &mut Binder, memory: NodeId, src: &[Vec<usize>], prefix: &[Vec<usize>]) -> NodeId {
        let t = prefix[0].len();
        let self_mask = b.g.constant(attention_mask(prefix, t, true));
        let cross_mask = b.g.constant(attention_mask(src, t, false));
        let mut x = embed(b, prefix, "dec");
        for l in 0..self.config.decoder_layers {
            x = decoder_block(b, x, memory, self_mask, cross_mask, &format!("dec.{l}"), self.config.heads);
        }
        linear(b, x, "dec.lm")
    }

    /// Next-token logits at every prefix position: `[batch, prefix_len, vocab]`.
    pub fn forward(&self, src: &[Vec<usize>], tgt_prefix: &[Vec<usize>]) -> Result<Tensor> {
        check_batch(&self.config, src)?;
        check_batch(&self.config, tgt_prefix)?;
        if src.len() != tgt_prefix.len() {
            return Err(ModelError::Shape(format!("{} sources but {} prefixes", src.len(), tgt_prefix.len())));
        }
        let mut b = Binder::new(&self.params);
        let memory = encode(&mut b, &self.config, src);
        let logits = self.decode_logits(&mut b, memory, src, tgt_prefix);
        Ok(b.g.value(logits).clone())
    }

    /// Greedy decoding of one source; stops at `EOS` (not emitted) or after
    /// `max_steps` tokens.
    pub fn greedy_decode(&self, src: &[usize], max_steps: usize) -> Result<Vec<usize>> {
        Ok(self.greedy_decode_batch(&[src.to_vec()], max_steps)?.remove(0))
    }

    /// Greedy decoding of several sources in lock step. `max_steps` is also
    /// capped by the positional table (`max_len`).
    pub fn greedy_decode_batch(&self, srcs: &[Vec<usize>], max_steps: usize) -> Result<Vec<Vec<usize>>> {
        if srcs.is_empty() {
            return Ok(Vec::new());
        }
        let src = pad_batch(srcs.iter().map(Vec::as_slice));
        check_batch(&self.config, &src)?;
        let steps = max_steps.min(self.config.max_len);
        let mut out = vec![Vec::new(); srcs.len()];
        if steps == 0 {
            return Ok(out);
        }
        let mut b = Binder::new(&self.params);
        let memory = encode(&mut b, &self.config, &src);
        let mut prefix = vec![vec![BOS]; srcs.len()];
        let mut done = vec![false; srcs.len()];
        for _ in 0..steps {
            let logits = self.decode_logits(&mut b, memory, &src, &prefix);
            let lv = b.g.value(logits);
            let (t, v) = (prefix[0].len(), self.config.vocab);
            for (i, row) in prefix.iter_mut().enumerate() {
                let last = &lv.data[(i * t + t - 1) * v..(i * t + t) * v];
                let next = Tensor::new(vec![1, v], last.to_vec()).argmax_rows()[0];
                if !done[i] {
                    if next == EOS {
                        done[i] = true;
                    } else {
                        out[i].push(next);
                    }
                }
                row.push(next);
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    fn loss_graph<'a>(&'a self, examples: &[&Seq2SeqExample]) -> Result<(Binder<'a>, NodeId)> {
        let src = pad_batch(examples.iter().map(|e| e.source.as_slice()));
        let inputs: Vec<Vec<usize>> = examples.iter().map(|e| std::iter::once(BOS).chain(e.target.iter().copied()).collect()).collect();
        let prefix = pad_batch(inputs.iter().map(Vec::as_slice));
        check_batch(&self.config, &src)?;
        check_batch(&self.config, &prefix)?;
        let t = prefix[0].len();
        let mut targets = Vec::with_capacity(examples.len() * t);
        for e in examples {
            let labels: Vec<usize> = e.target.iter().copied().chain(std::iter::once(EOS)).collect();
            targets.extend((0..t).map(|i| labels.get(i).copied()));
        }
        let mut b = Binder::new(&self.params);
        let memory = encode(&mut b, &self.config, &src);
        let logits = self.decode_logits(&mut b, memory, &src, &prefix);
        let flat = b.g.reshape(logits, &[examples.len() * t, self.config.vocab]);
        let loss = b.g.cross_entropy(flat, &targets);
        Ok((b, loss))
    }

    /// Teacher-forced token cross-entropy on a batch.
    pub fn loss(&self, examples: &[Seq2SeqExample]) -> Result<f64> {
        let refs: Vec<&Seq2SeqExample> = examples.iter().collect();
        let (b, loss) = self.loss_graph(&refs)?;
        Ok(b.g.value(loss).item())
    }

    /// Mean loss over `data` in chunks of `batch`.
    pub fn eval_loss(&self, data: &[Seq2SeqExample], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        for chunk in data.chunks(batch.max(1)) {
            total += self.loss(chunk)? * chunk.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn loss_and_grads(&self, examples: &[&Seq2SeqExample]) -> Result<(f64, HashMap<String, Tensor>)> {
        let (b, loss) = self.loss_graph(examples)?;
        let grads = b.g.backward(loss)?;
        Ok((b.g.value(loss).item(), grads.into_params()))
    }

    pub fn train(&mut self, data: &[Seq2SeqExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
        let config = self.config.clone();
        train_loop(&mut self.params, data.len(), cfg, |params, idx| {
            let model = Seq2SeqModel { config: config.clone(), params: params.clone() };
            let batch: Vec<&Seq2SeqExample> = idx.iter().map(|&i| &data[i]).collect();
            model.loss_and_grads(&batch)
        })
    }
}
