use std::sync::Arc;

use serde_yaml::Value;

use super::layers::{FcStack, HyperParams, Linear};
use super::{expect_batch, ids_of, BuildContext, Encoded, Encoder, EncoderFactory, Forward, ModelError};
use crate::autodiff::{ReduceKind, Tensor, UnaryKind, Var};
use crate::config::{ComponentEntry, Params, Registry, RegistryError};
use crate::features::FeatureType;

fn params(pairs: &[(&str, Value)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn sizes(v: &[u64]) -> Value {
    Value::Sequence(v.iter().map(|&n| Value::from(n)).collect())
}

fn entry<E: Encoder + 'static>(
    defaults: Params,
    build: impl Fn(&mut BuildContext, &HyperParams) -> Result<E, ModelError> + Send + Sync + 'static,
) -> ComponentEntry<EncoderFactory> {
    let factory: EncoderFactory = Arc::new(move |ctx, p| {
        let hp = HyperParams::new(format!("input_features.{}", ctx.feature), p);
        Ok(Box::new(build(ctx, &hp)?) as Box<dyn Encoder>)
    });
    ComponentEntry::new(defaults, factory)
}

pub(super) fn register(reg: &mut Registry<ComponentEntry<EncoderFactory>>) -> Result<(), RegistryError> {
    use FeatureType::*;
    let fc = |n: &[u64]| params(&[("fc_sizes", sizes(n)), ("activation", "relu".into())]);
    for t in [Binary, Numerical] {
        reg.register(Some(t), "passthrough", entry(fc(&[]), Passthrough::build))?;
    }
    reg.register(
        Some(Category),
        "embed",
        entry(params(&[("embedding_size", 64.into())]), CategoryEmbed::build),
    )?;
    for t in [Sequence, Text] {
        reg.register(
            Some(t),
            "embed",
            entry(
                params(&[("embedding_size", 64.into()), ("reduce_output", "mean".into())]),
                SequenceEmbed::build,
            ),
        )?;
        reg.register(
            Some(t),
            "rnn",
            entry(
                params(&[("embedding_size", 32.into()), ("state_size", 32.into())]),
                Rnn::build,
            ),
        )?;
        reg.register(
            Some(t),
            "cnn",
            entry(
                params(&[
                    ("embedding_size", 32.into()),
                    ("filter_sizes", sizes(&[3, 5])),
                    ("num_filters", 32.into()),
                    ("activation", "relu".into()),
                ]),
                Cnn::build,
            ),
        )?;
    }
    reg.register(
        Some(Set),
        "embed_sum",
        entry(params(&[("embedding_size", 64.into())]), EmbedSum::build),
    )?;
    reg.register(Some(Vector), "dense", entry(fc(&[32]), Dense::build))?;
    Ok(())
}

fn vocab_len(ctx: &BuildContext) -> Result<usize, ModelError> {
    ctx.metadata()?
        .vocab()
        .map(|v| v.len())
        .ok_or_else(|| ModelError::Contract(format!("`{}` has no vocabulary", ctx.feature)))
}

fn table(ctx: &mut BuildContext, rows: usize, width: usize) -> Result<String, ModelError> {
    ctx.glorot("embeddings", &[rows, width], rows, width)
}

/// Scalar or vector inputs, optionally through an fc stack.
struct Passthrough {
    input: usize,
    fc: FcStack,
}

impl Passthrough {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let input = ctx.metadata()?.tensor_width();
        let fc = FcStack::build(ctx, "fc", input, &hp.sizes("fc_sizes")?, hp.activation("activation")?)?;
        Ok(Self { input, fc })
    }
}

impl Encoder for Passthrough {
    fn output_width(&self) -> usize {
        self.fc.output_width()
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        expect_batch(input, self.input, "passthrough")?;
        let x = f.tape.constant(input.clone());
        Ok(Encoded {
            hidden: self.fc.apply(f, x)?,
            states: None,
        })
    }
}

struct Dense(Passthrough);

impl Dense {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        Passthrough::build(ctx, hp).map(Dense)
    }
}

impl Encoder for Dense {
    fn output_width(&self) -> usize {
        self.0.output_width()
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        self.0.encode(f, input)
    }
}

struct CategoryEmbed {
    table: String,
    width: usize,
}

impl CategoryEmbed {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let width = hp.positive("embedding_size")?;
        let rows = vocab_len(ctx)?;
        Ok(Self {
            table: table(ctx, rows, width)?,
            width,
        })
    }
}

impl Encoder for CategoryEmbed {
    fn output_width(&self) -> usize {
        self.width
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        expect_batch(input, 1, "category embed")?;
        let t = f.param(&self.table)?;
        Ok(Encoded {
            hidden: f.tape.embedding(t, &ids_of(input)?)?,
            states: None,
        })
    }
}

/// Id matrix `[b×s]` with its padding mask.
struct Tokens {
    batch: usize,
    len: usize,
    ids: Vec<usize>,
    /// 1.0 at real tokens, 0.0 at padding.
    mask: Vec<f64>,
}

impl Tokens {
    fn read(input: &Tensor, len: usize, pad: Option<usize>, what: &str) -> Result<Self, ModelError> {
        let batch = expect_batch(input, len, what)?;
        let ids = ids_of(input)?;
        let mask = ids
            .iter()
            .map(|&i| if Some(i) == pad { 0.0 } else { 1.0 })
            .collect();
        Ok(Self {
            batch,
            len,
            ids,
            mask,
        })
    }

    fn column(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| self.ids[b * self.len + t]).collect()
    }

    fn mask_column(&self, t: usize) -> Vec<f64> {
        (0..self.batch).map(|b| self.mask[b * self.len + t]).collect()
    }

    /// Positions past this one are padding in every row.
    fn used_len(&self) -> usize {
        (0..self.len)
            .rev()
            .find(|&t| self.mask_column(t).iter().any(|&m| m > 0.0))
            .map_or(1, |t| t + 1)
    }

    /// Mask broadcast over a trailing width, `[b×s×w]`.
    fn mask_tensor(&self, width: usize) -> Tensor {
        let data = self
            .mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, width))
            .collect();
        Tensor::new(vec![self.batch, self.len, width], data).expect("positive dims")
    }
}

struct SeqShape {
    len: usize,
    pad: Option<usize>,
    vocab: usize,
}

impl SeqShape {
    fn of(ctx: &BuildContext) -> Result<Self, ModelError> {
        let vocab = ctx
            .metadata()?
            .vocab()
            .ok_or_else(|| ModelError::Contract(format!("`{}` has no vocabulary", ctx.feature)))?;
        Ok(Self {
            len: vocab.max_sequence_length,
            pad: vocab.pad_id(),
            vocab: vocab.len(),
        })
    }

    fn tokens(&self, input: &Tensor, what: &str) -> Result<Tokens, ModelError> {
        Tokens::read(input, self.len, self.pad, what)
    }
}

fn embed_all(f: &mut Forward, table: &str, tok: &Tokens, width: usize) -> Result<Var, ModelError> {
    let t = f.param(table)?;
    let flat = f.tape.embedding(t, &tok.ids)?;
    Ok(f.tape.reshape(flat, &[tok.batch, tok.len, width])?)
}

#[derive(Clone, Copy)]
enum SeqReduce {
    Mean,
    Sum,
    Max,
}

/// Token embeddings reduced over time; padding is excluded from sum and mean.
struct SequenceEmbed {
    shape: SeqShape,
    table: String,
    width: usize,
    reduce: SeqReduce,
}

impl SequenceEmbed {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let reduce = match hp.string("reduce_output")? {
            "mean" => SeqReduce::Mean,
            "sum" => SeqReduce::Sum,
            "max" => SeqReduce::Max,
            _ => return Err(ModelError::Config(format!(
                "input_features.{}.reduce_output: expected one of mean, sum, max",
                ctx.feature
            ))),
        };
        let width = hp.positive("embedding_size")?;
        let shape = SeqShape::of(ctx)?;
        Ok(Self {
            table: table(ctx, shape.vocab, width)?,
            shape,
            width,
            reduce,
        })
    }
}

impl Encoder for SequenceEmbed {
    fn output_width(&self) -> usize {
        self.width
    }

    fn state_width(&self) -> Option<usize> {
        Some(self.width)
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        let tok = self.shape.tokens(input, "sequence embed")?;
        let states = embed_all(f, &self.table, &tok, self.width)?;
        let hidden = match self.reduce {
            SeqReduce::Max => f.tape.reduce(ReduceKind::Max, states, 1)?,
            kind => {
                let mask = f.tape.constant(tok.mask_tensor(self.width));
                let masked = f.tape.mul(states, mask)?;
                let sum = f.tape.reduce(ReduceKind::Sum, masked, 1)?;
                if let SeqReduce::Mean = kind {
                    let inv: Vec<f64> = (0..tok.batch)
                        .flat_map(|b| {
                            let n: f64 = tok.mask[b * tok.len..(b + 1) * tok.len].iter().sum();
                            std::iter::repeat_n(1.0 / n.max(1.0), self.width)
                        })
                        .collect();
                    let inv = f.tape.constant(Tensor::new(vec![tok.batch, self.width], inv)?);
                    f.tape.mul(sum, inv)?
                } else {
                    sum
                }
            }
        };
        Ok(Encoded {
            hidden,
            states: Some(states),
        })
    }
}

/// Elman recurrence over token embeddings. At padding positions the state
/// is carried over unchanged, so the final state is that of the last token.
struct Rnn {
    shape: SeqShape,
    table: String,
    input: Linear,
    recurrent: String,
    state: usize,
}

impl Rnn {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let emb = hp.positive("embedding_size")?;
        let state = hp.positive("state_size")?;
        let shape = SeqShape::of(ctx)?;
        Ok(Self {
            table: table(ctx, shape.vocab, emb)?,
            input: Linear::build(ctx, "input", emb, state)?,
            recurrent: ctx.glorot("recurrent", &[state, state], state, state)?,
            shape,
            state,
        })
    }
}

impl Encoder for Rnn {
    fn output_width(&self) -> usize {
        self.state
    }

    fn state_width(&self) -> Option<usize> {
        Some(self.state)
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        let tok = self.shape.tokens(input, "rnn")?;
        let (table, u) = (f.param(&self.table)?, f.param(&self.recurrent)?);
        let dims = [tok.batch, self.state];
        let mut h = f.tape.constant(Tensor::zeros(&dims));
        let mut states = Vec::with_capacity(tok.len);
        for t in 0..tok.used_len() {
            let x = f.tape.embedding(table, &tok.column(t))?;
            let xw = self.input.apply(f, x)?;
            let hu = f.tape.matmul(h, u)?;
            let pre = f.tape.add(xw, hu)?;
            let next = f.tape.unary(UnaryKind::Tanh, pre)?;
            let m = tok.mask_column(t);
            h = if m.iter().all(|&v| v > 0.0) {
                next
            } else {
                let keep: Vec<f64> = m.iter().flat_map(|&v| std::iter::repeat_n(v, self.state)).collect();
                let hold: Vec<f64> = keep.iter().map(|v| 1.0 - v).collect();
                let keep = f.tape.constant(Tensor::new(dims.to_vec(), keep)?);
                let hold = f.tape.constant(Tensor::new(dims.to_vec(), hold)?);
                let a = f.tape.mul(next, keep)?;
                let b = f.tape.mul(h, hold)?;
                f.tape.add(a, b)?
            };
            states.push(h);
        }
        // trailing all-padding steps would only repeat the final state
        states.resize(tok.len, h);
        Ok(Encoded {
            hidden: h,
            states: Some(f.tape.stack(&states, 1)?),
        })
    }
}

/// Parallel same-padded convolutions, max-pooled over time and concatenated.
struct Cnn {
    shape: SeqShape,
    table: String,
    emb: usize,
    filters: Vec<(String, String)>,
    num_filters: usize,
    activation: UnaryKind,
}

impl Cnn {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let emb = hp.positive("embedding_size")?;
        let widths = hp.sizes("filter_sizes")?;
        if widths.is_empty() {
            return Err(ModelError::Config(format!(
                "input_features.{}.filter_sizes: needs at least one width",
                ctx.feature
            )));
        }
        let num_filters = hp.positive("num_filters")?;
        let activation = hp.activation("activation")?;
        let shape = SeqShape::of(ctx)?;
        let table = table(ctx, shape.vocab, emb)?;
        let mut filters = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            filters.push((
                ctx.glorot(&format!("conv.{i}.filters"), &[w, emb, num_filters], w * emb, num_filters)?,
                ctx.zeros(&format!("conv.{i}.bias"), &[num_filters])?,
            ));
        }
        Ok(Self {
            shape,
            table,
            emb,
            filters,
            num_filters,
            activation,
        })
    }
}

impl Encoder for Cnn {
    fn output_width(&self) -> usize {
        self.filters.len() * self.num_filters
    }

    fn state_width(&self) -> Option<usize> {
        Some(self.output_width())
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        let tok = self.shape.tokens(input, "cnn")?;
        let x = embed_all(f, &self.table, &tok, self.emb)?;
        let mut maps = Vec::with_capacity(self.filters.len());
        let mut pooled = Vec::with_capacity(self.filters.len());
        for (filters, bias) in &self.filters {
            let (w, b) = (f.param(filters)?, f.param(bias)?);
            let conv = f.tape.conv1d(x, w, b)?;
            let act = f.tape.unary(self.activation, conv)?;
            pooled.push(f.tape.reduce(ReduceKind::Max, act, 1)?);
            maps.push(act);
        }
        Ok(Encoded {
            hidden: f.tape.concat(&pooled, 1)?,
            states: Some(f.tape.concat(&maps, 2)?),
        })
    }
}

/// Multi-hot row times an embedding table.
struct EmbedSum {
    vocab: usize,
    table: String,
    width: usize,
}

impl EmbedSum {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let width = hp.positive("embedding_size")?;
        let vocab = vocab_len(ctx)?;
        Ok(Self {
            table: table(ctx, vocab, width)?,
            vocab,
            width,
        })
    }
}

impl Encoder for EmbedSum {
    fn output_width(&self) -> usize {
        self.width
    }

    fn encode(&self, f: &mut Forward, input: &Tensor) -> Result<Encoded, ModelError> {
        expect_batch(input, self.vocab, "embed_sum")?;
        let x = f.tape.constant(input.clone());
        let t = f.param(&self.table)?;
        Ok(Encoded {
            hidden: f.tape.matmul(x, t)?,
            states: None,
        })
    }
}
