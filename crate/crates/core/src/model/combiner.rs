use std::sync::Arc;

use serde_yaml::Value;

use super::layers::{FcStack, HyperParams};
use super::{BuildContext, Combiner, CombinerFactory, Forward, ModelError};
use crate::autodiff::Var;
use crate::config::{ComponentEntry, Registry, RegistryError};

pub const CONCAT: &str = "concat";

pub(super) fn register(reg: &mut Registry<ComponentEntry<CombinerFactory>>) -> Result<(), RegistryError> {
    let defaults = [
        ("fc_sizes".to_string(), Value::Sequence(Vec::new())),
        ("activation".to_string(), Value::from("relu")),
    ]
    .into_iter()
    .collect();
    let factory: CombinerFactory = Arc::new(|ctx, p| {
        let hp = HyperParams::new("combiner", p);
        Ok(Box::new(Concat::build(ctx, &hp)?) as Box<dyn Combiner>)
    });
    reg.register(None, CONCAT, ComponentEntry::new(defaults, factory))
}

/// Concatenates encoder outputs side by side, then an fc stack.
pub struct Concat {
    fc: FcStack,
}

impl Concat {
    fn build(ctx: &mut BuildContext, hp: &HyperParams) -> Result<Self, ModelError> {
        let input = ctx.input_width();
        Ok(Self {
            fc: FcStack::build(ctx, "fc", input, &hp.sizes("fc_sizes")?, hp.activation("activation")?)?,
        })
    }
}

impl Combiner for Concat {
    fn output_width(&self) -> usize {
        self.fc.output_width()
    }

    fn combine(&self, f: &mut Forward, hiddens: &[Var]) -> Result<Var, ModelError> {
        let joined = match hiddens {
            [] => return Err(ModelError::Contract("combiner needs at least one input".into())),
            [one] => *one,
            many => f.tape.concat(many, 1)?,
        };
        self.fc.apply(f, joined)
    }
}
