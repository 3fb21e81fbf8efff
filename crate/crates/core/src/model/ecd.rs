use std::collections::BTreeMap;

use super::{
    build_dependency_order, default_decoder, default_encoder, BuildContext, Combiner, Decoded, Decoder,
    DecoderNode, Encoder, Forward, ModelError, DEFAULT_COMBINER,
};
use crate::autodiff::{seeded_rng, Gradients, ParameterStore, Tape, Tensor, Var};
use crate::config::{resolve_defaults, DependencyPayload, ModelDefinition, Registries};
use crate::features::{FeatureMetadata, FeatureType};

struct InputSlot {
    name: String,
    encoder: Box<dyn Encoder>,
}

struct OutputSlot {
    name: String,
    ftype: FeatureType,
    decoder: Box<dyn Decoder>,
    dependencies: Vec<String>,
    payload: DependencyPayload,
    weight: f64,
    input_width: usize,
}

/// A built encoder-combiner-decoder model and its parameters.
pub struct EcdModel {
    inputs: Vec<InputSlot>,
    combiner: Box<dyn Combiner>,
    combiner_width: usize,
    /// Decoders in dependency order.
    outputs: Vec<OutputSlot>,
    /// Input whose per-timestep states feed a tagger.
    sequence_input: Option<usize>,
    params: ParameterStore,
    seed: u64,
}

fn lookup_meta<'a>(
    metadata: &'a BTreeMap<String, FeatureMetadata>,
    name: &str,
) -> Result<&'a FeatureMetadata, ModelError> {
    metadata
        .get(name)
        .ok_or_else(|| ModelError::Contract(format!("no metadata for feature `{name}`")))
}

impl EcdModel {
    /// Builds every component in a fixed order (encoders in declaration
    /// order, the combiner, decoders in dependency order) from one seeded
    /// generator, so equal seeds give equal initial parameters.
    pub fn build(
        def: &ModelDefinition,
        metadata: &BTreeMap<String, FeatureMetadata>,
        registries: &Registries,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let def = resolve_defaults(def, registries);
        let mut rng = seeded_rng(seed);
        let mut params = ParameterStore::new();

        let mut inputs = Vec::with_capacity(def.input_features.len());
        let mut sequence_input = None;
        for f in &def.input_features {
            let name = f.encoder.as_deref().unwrap_or(default_encoder(f.ftype));
            let entry = registries.encoders.get(Some(f.ftype), name)?;
            let mut ctx = BuildContext::new(format!("encoders.{}", f.name), &f.name, &mut params, &mut rng);
            ctx.ftype = Some(f.ftype);
            ctx.metadata = Some(lookup_meta(metadata, &f.name)?);
            let encoder = (entry.factory)(&mut ctx, &entry.merged(&f.params))?;
            if f.ftype.is_sequential() && sequence_input.is_none() && encoder.state_width().is_some() {
                sequence_input = Some(inputs.len());
            }
            inputs.push(InputSlot {
                name: f.name.clone(),
                encoder,
            });
        }

        let section = def.combiner.clone().unwrap_or_default();
        let kind = section.kind.as_deref().unwrap_or(DEFAULT_COMBINER);
        let entry = registries.combiners.get(None, kind)?;
        let mut ctx = BuildContext::new("combiner", "combiner", &mut params, &mut rng);
        ctx.input_widths = inputs.iter().map(|i| i.encoder.output_width()).collect();
        let combiner = (entry.factory)(&mut ctx, &entry.merged(&section.params))?;
        let combiner_width = combiner.output_width();

        let nodes: Vec<DecoderNode> = def
            .output_features
            .iter()
            .map(|f| DecoderNode {
                name: f.name.clone(),
                dependencies: f.dependencies.clone(),
            })
            .collect();
        let order = build_dependency_order(&nodes)?;
        let state_width = sequence_input.and_then(|i| inputs[i].encoder.state_width());
        let mut outputs: Vec<OutputSlot> = Vec::with_capacity(order.len());
        for name in &order {
            let f = def.output(name).expect("order only holds declared outputs");
            let decoder_name = f
                .decoder
                .as_deref()
                .or_else(|| default_decoder(f.ftype))
                .ok_or_else(|| ModelError::Config(format!("output_features.{name}: no decoder for {} outputs", f.ftype)))?;
            let entry = registries.decoders.get(Some(f.ftype), decoder_name)?;
            let mut widths = vec![combiner_width];
            for dep in &f.dependencies {
                let origin = outputs
                    .iter()
                    .find(|o| &o.name == dep)
                    .expect("dependencies precede their dependents");
                widths.push(payload_width(origin)?);
            }
            let mut ctx = BuildContext::new(format!("decoders.{name}"), name, &mut params, &mut rng);
            ctx.ftype = Some(f.ftype);
            ctx.metadata = Some(lookup_meta(metadata, name)?);
            ctx.input_widths = widths;
            ctx.state_width = state_width;
            let input_width = ctx.input_width();
            let decoder = (entry.factory)(&mut ctx, &entry.merged(&f.params))?;
            outputs.push(OutputSlot {
                name: name.clone(),
                ftype: f.ftype,
                decoder,
                dependencies: f.dependencies.clone(),
                payload: f.payload(),
                weight: f.loss_weight(),
                input_width,
            });
        }

        Ok(Self {
            inputs,
            combiner,
            combiner_width,
            outputs,
            sequence_input,
            params,
            seed,
        })
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn combiner_width(&self) -> usize {
        self.combiner_width
    }

    /// Output feature names in the order their decoders run.
    pub fn decoder_order(&self) -> Vec<&str> {
        self.outputs.iter().map(|o| o.name.as_str()).collect()
    }

    /// Width of the tensor entering a decoder: the combiner output plus
    /// every dependency payload.
    pub fn decoder_input_width(&self, name: &str) -> Option<usize> {
        self.outputs.iter().find(|o| o.name == name).map(|o| o.input_width)
    }

    pub fn loss_weights(&self) -> BTreeMap<String, f64> {
        self.outputs.iter().map(|o| (o.name.clone(), o.weight)).collect()
    }

    pub fn output_type(&self, name: &str) -> Option<FeatureType> {
        self.outputs.iter().find(|o| o.name == name).map(|o| o.ftype)
    }

    /// Runs encode, combine and decode on one batch of preprocessed
    /// `[b×w]` tensors. With targets, per-feature and combined losses are
    /// recorded too.
    pub fn forward(
        &self,
        batch: &BTreeMap<String, Tensor>,
        targets: Option<&BTreeMap<String, Tensor>>,
    ) -> Result<ForwardOutput, ModelError> {
        let mut f = Forward::new(&self.params);
        let mut hiddens = Vec::with_capacity(self.inputs.len());
        let mut states = None;
        for (i, slot) in self.inputs.iter().enumerate() {
            let t = batch
                .get(&slot.name)
                .ok_or_else(|| ModelError::Contract(format!("batch is missing input feature `{}`", slot.name)))?;
            let enc = slot.encoder.encode(&mut f, t)?;
            if Some(i) == self.sequence_input {
                states = enc.states;
            }
            hiddens.push(enc.hidden);
        }
        let rows: Vec<usize> = hiddens.iter().map(|&h| f.value(h).dims()[0]).collect();
        if rows.windows(2).any(|w| w[0] != w[1]) {
            return Err(ModelError::Contract(format!("input features disagree on batch size: {rows:?}")));
        }
        let combined = self.combiner.combine(&mut f, &hiddens)?;

        let mut outputs: BTreeMap<String, Decoded> = BTreeMap::new();
        let mut losses = BTreeMap::new();
        for slot in &self.outputs {
            let mut parts = vec![combined];
            for dep in &slot.dependencies {
                let origin = &outputs[dep];
                let kind = self.outputs.iter().find(|o| &o.name == dep).map(|o| o.payload);
                parts.push(match kind {
                    Some(DependencyPayload::Probabilities) => origin.probabilities,
                    _ => origin.last_hidden,
                });
            }
            let input = if parts.len() == 1 {
                combined
            } else {
                f.tape.concat(&parts, 1)?
            };
            let decoded = slot.decoder.decode(&mut f, input, states)?;
            if let Some(targets) = targets {
                let t = targets
                    .get(&slot.name)
                    .ok_or_else(|| ModelError::Contract(format!("targets are missing output feature `{}`", slot.name)))?;
                losses.insert(slot.name.clone(), slot.decoder.loss(&mut f, &decoded, t)?);
            }
            outputs.insert(slot.name.clone(), decoded);
        }
        let total = match targets {
            Some(_) => Some(combined_loss(&mut f.tape, &losses, &self.loss_weights())?),
            None => None,
        };
        Ok(ForwardOutput {
            pass: f,
            outputs,
            losses,
            total,
        })
    }
}

fn payload_width(origin: &OutputSlot) -> Result<usize, ModelError> {
    if origin.decoder.uses_sequence_states() {
        return Err(ModelError::Config(format!(
            "output_features.{}: sequence outputs cannot be dependency origins",
            origin.name
        )));
    }
    Ok(match origin.payload {
        DependencyPayload::Probabilities => origin.decoder.probabilities_width(),
        DependencyPayload::LastHidden => origin.decoder.hidden_width(),
    })
}

/// Result of one forward pass, holding the tape for a backward pass.
pub struct ForwardOutput {
    pub pass: Forward,
    pub outputs: BTreeMap<String, Decoded>,
    pub losses: BTreeMap<String, Var>,
    pub total: Option<Var>,
}

impl ForwardOutput {
    pub fn tape(&self) -> &Tape {
        &self.pass.tape
    }

    pub fn probabilities(&self, name: &str) -> Option<&Tensor> {
        self.outputs.get(name).map(|d| self.pass.value(d.probabilities))
    }

    pub fn logits(&self, name: &str) -> Option<&Tensor> {
        self.outputs.get(name).map(|d| self.pass.value(d.logits))
    }

    pub fn last_hidden(&self, name: &str) -> Option<&Tensor> {
        self.outputs.get(name).map(|d| self.pass.value(d.last_hidden))
    }

    pub fn loss(&self, name: &str) -> Option<f64> {
        self.losses.get(name).map(|&v| self.pass.value(v).item())
    }

    pub fn total_loss(&self) -> Option<f64> {
        self.total.map(|v| self.pass.value(v).item())
    }

    pub fn backward(&self) -> Result<Gradients, ModelError> {
        let total = self
            .total
            .ok_or_else(|| ModelError::Contract("backward needs a forward pass with targets".into()))?;
        Ok(self.pass.tape.backward(total)?)
    }
}

/// `Σ weight·loss` over output features; both maps must have the same keys.
pub fn combined_loss(
    tape: &mut Tape,
    losses: &BTreeMap<String, Var>,
    weights: &BTreeMap<String, f64>,
) -> Result<Var, ModelError> {
    if !losses.keys().eq(weights.keys()) {
        return Err(ModelError::Contract(format!(
            "loss features {:?} do not match weight features {:?}",
            losses.keys().collect::<Vec<_>>(),
            weights.keys().collect::<Vec<_>>()
        )));
    }
    let mut total: Option<Var> = None;
    for (name, &loss) in losses {
        let term = tape.scale(loss, weights[name])?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| ModelError::Contract("no losses to combine".into()))
}
