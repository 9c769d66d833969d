//! Tape-based training path. Builds the same function as the inference
//! forward on the autodiff tape, so the two can be cross-checked exactly,
//! and runs the batched optimization loop with optional per-parameter
//! importance accumulation (sum of |gradient * weight| before each update).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::optim::{GradMap, Optimizer, ParamMap};
use crate::rng::rng_for;
use crate::tensor::Tensor;

use super::{ArchKind, Model, UnitKind};

/// Builds the forward graph for `inputs` and returns (logits, mean
/// cross-entropy against `targets`). Persisted unit masks are applied as
/// constant multiplicative masks, matching inference semantics.
pub fn sequence_graph(
    tape: &mut Tape,
    model: &Model,
    inputs: &[usize],
    targets: &[usize],
) -> Result<(NodeId, NodeId)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Input(format!(
            "graph wants equal non-empty inputs/targets, got {}/{}",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.len() > model.config.context_len {
        return Err(Error::Input(format!(
            "sequence length {} exceeds context {}",
            inputs.len(),
            model.config.context_len
        )));
    }
    let cfg = &model.config;
    let n = inputs.len();
    let _ = cfg.width;
    let mut nodes: BTreeMap<&str, NodeId> = BTreeMap::new();
    for (name, tensor) in &model.params {
        nodes.insert(name, tape.param(name, tensor));
    }
    let get = |nodes: &BTreeMap<&str, NodeId>, name: &str| {
        *nodes.get(name).unwrap_or_else(|| panic!("missing param {name}"))
    };

    let tok_embed = tape.embedding(get(&nodes, "embed"), inputs)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos_embed = tape.embedding(get(&nodes, "pos_embed"), &positions)?;
    let mut x = tape.add(tok_embed, pos_embed)?;

    let hd = cfg.head_dim();
    for l in 0..cfg.layers {
        let name = |s: &str| format!("layer{l:02}.{s}");
        let ln1 = tape.layer_norm(x, get(&nodes, &name("ln1.gain")), get(&nodes, &name("ln1.bias")))?;
        let q = tape.matmul(ln1, get(&nodes, &name("attn.wq")))?;
        let k = tape.matmul(ln1, get(&nodes, &name("attn.wk")))?;
        let v = tape.matmul(ln1, get(&nodes, &name("attn.wv")))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let vh = tape.slice_cols(v, h * hd, hd)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scaled = tape.scale(scores, 1.0 / (hd as f64).sqrt());
            let probs = tape.causal_softmax(scaled)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let attn = tape.matmul(merged, get(&nodes, &name("attn.wo")))?;
        x = tape.add(x, attn)?;

        let ln2 = tape.layer_norm(x, get(&nodes, &name("ln2.gain")), get(&nodes, &name("ln2.bias")))?;
        let ffn = match cfg.arch {
            ArchKind::Dense => {
                let pre = tape.matmul(ln2, get(&nodes, &name("ffn.w1")))?;
                let pre = tape.add_bias(pre, get(&nodes, &name("ffn.b1")))?;
                let mut hidden = tape.gelu(pre);
                if !model.masked_units.is_empty() {
                    let gw = cfg.group_width();
                    let mut mask = vec![1.0; n * cfg.ffn_hidden];
                    let mut any = false;
                    for g in 0..cfg.neuron_groups {
                        let unit = super::UnitId {
                            layer: l as u16,
                            index: g as u16,
                            kind: UnitKind::NeuronGroup,
                        };
                        if model.masked_units.contains(&unit) {
                            any = true;
                            for i in 0..n {
                                for j in g * gw..(g + 1) * gw {
                                    mask[i * cfg.ffn_hidden + j] = 0.0;
                                }
                            }
                        }
                    }
                    if any {
                        let mask = tape.constant(n, cfg.ffn_hidden, mask)?;
                        hidden = tape.mul(hidden, mask)?;
                    }
                }
                tape.matmul(hidden, get(&nodes, &name("ffn.w2")))?
            }
            ArchKind::Moe => {
                let rl = tape.matmul(ln2, get(&nodes, &name("router.w")))?;
                let mut gates = tape.top_k_softmax(rl, cfg.active_experts)?;
                if !model.masked_units.is_empty() {
                    let mut mask = vec![1.0; n * cfg.experts];
                    let mut any = false;
                    for e in 0..cfg.experts {
                        let unit = super::UnitId {
                            layer: l as u16,
                            index: e as u16,
                            kind: UnitKind::Expert,
                        };
                        if model.masked_units.contains(&unit) {
                            any = true;
                            for i in 0..n {
                                mask[i * cfg.experts + e] = 0.0;
                            }
                        }
                    }
                    if any {
                        let mask = tape.constant(n, cfg.experts, mask)?;
                        gates = tape.mul(gates, mask)?;
                    }
                }
                // Each expert runs only on the rows that route to it, like
                // the inference path. Zero-gate rows contribute exactly zero
                // forward and backward (the top-k softmax drops gradients at
                // unselected entries), so skipping them is exact.
                let gate_values = tape.values(gates).to_vec();
                let mut acc: Option<NodeId> = None;
                for e in 0..cfg.experts {
                    let active: Vec<usize> =
                        (0..n).filter(|&i| gate_values[i * cfg.experts + e] != 0.0).collect();
                    if active.is_empty() {
                        continue;
                    }
                    let q = |s: &str| format!("layer{l:02}.expert{e:02}.{s}");
                    let sub = tape.gather_rows(ln2, &active)?;
                    let pre = tape.matmul(sub, get(&nodes, &q("w1")))?;
                    let pre = tape.add_bias(pre, get(&nodes, &q("b1")))?;
                    let hid = tape.gelu(pre);
                    let y = tape.matmul(hid, get(&nodes, &q("w2")))?;
                    let y = tape.add_bias(y, get(&nodes, &q("b2")))?;
                    let gate = tape.slice_cols(gates, e, 1)?;
                    let gate = tape.gather_rows(gate, &active)?;
                    let scaled = tape.row_scale(y, gate)?;
                    let contrib = tape.scatter_rows(scaled, &active, n)?;
                    acc = Some(match acc {
                        None => contrib,
                        Some(a) => tape.add(a, contrib)?,
                    });
                }
                match acc {
                    Some(a) => a,
                    // Every expert masked: the block contributes nothing.
                    None => tape.constant(n, cfg.width, vec![0.0; n * cfg.width])?,
                }
            }
        };
        x = tape.add(x, ffn)?;
    }

    let out = tape.layer_norm(x, get(&nodes, "final_ln.gain"), get(&nodes, "final_ln.bias"))?;
    let logits = tape.matmul(out, get(&nodes, "unembed"))?;
    let loss = tape.cross_entropy(logits, targets)?;
    Ok((logits, loss))
}

/// Mean next-token loss and gradients for one token sequence.
pub fn sequence_loss(model: &Model, tokens: &[usize]) -> Result<(f64, GradMap)> {
    if tokens.len() < 2 {
        return Err(Error::Input("training sequence needs at least two tokens".into()));
    }
    let mut tape = Tape::new();
    let (_, loss) = sequence_graph(&mut tape, model, &tokens[..tokens.len() - 1], &tokens[1..])?;
    let value = tape.values(loss)[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

/// Mean loss and mean gradients over a batch. Sequences are evaluated in
/// parallel but reduced in index order, so results are identical for any
/// worker count.
pub fn batch_grads(model: &Model, batch: &[&[usize]]) -> Result<(f64, GradMap)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let per_seq: Vec<Result<(f64, GradMap)>> =
        batch.par_iter().map(|tokens| sequence_loss(model, tokens)).collect();
    let scale = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut sums: GradMap = BTreeMap::new();
    for item in per_seq {
        let (loss, grads) = item?;
        total_loss += loss;
        for (name, g) in grads {
            match sums.get_mut(&name) {
                None => {
                    sums.insert(name, g);
                }
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
            }
        }
    }
    for g in sums.values_mut() {
        for x in g.data.iter_mut() {
            *x *= scale;
        }
    }
    Ok((total_loss * scale, sums))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Accumulates elementwise sum of |gradient * weight| across optimizer
/// steps, always using the pre-update weights.
#[derive(Debug, Clone, Default)]
pub struct ImportanceAccumulator {
    pub per_param: ParamMap,
    pub steps: usize,
}

impl ImportanceAccumulator {
    fn record(&mut self, params: &ParamMap, grads: &GradMap) {
        for (name, theta) in params {
            let g = &grads[name];
            let acc = self
                .per_param
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(theta.shape.clone()));
            for i in 0..theta.len() {
                acc.data[i] += (g.data[i] * theta.data[i]).abs();
            }
        }
        self.steps += 1;
    }
}

/// Runs the optimization loop over `corpus` (token sequences), mutating the
/// model in place. When an accumulator is supplied, importance is recorded
/// at every step before the update touches the weights.
pub fn train(
    model: &mut Model,
    corpus: &[Vec<usize>],
    opts: &mut TrainOptions,
    mut importance: Option<&mut ImportanceAccumulator>,
) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut report = TrainReport::default();
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        use rand::seq::SliceRandom;
        let mut rng = rng_for(opts.shuffle_seed, "epoch-shuffle", &epoch.to_string());
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| corpus[i].as_slice()).collect();
            let (loss, grads) = batch_grads(model, &batch)?;
            if let Some(acc) = importance.as_deref_mut() {
                acc.record(&model.params, &grads);
            }
            opts.optimizer.step(&mut model.params, &grads)?;
            epoch_loss += loss;
            batches += 1;
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok(report)
}
