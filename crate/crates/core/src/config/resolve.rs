use super::{
    CombinerSection, LossSpec, ModelDefinition, OptimizerSection, Params, Registries, SplitPolicy,
    SplitSection, TrainingSection,
};
use crate::autodiff::{OptimizerConfig, OptimizerKind};
use crate::model::{default_decoder, default_encoder, LossKind, DEFAULT_COMBINER};

fn fill(params: &mut Params, defaults: &Params) {
    for (k, v) in defaults {
        params.entry(k.clone()).or_insert_with(|| v.clone());
    }
}

/// Fills every absent value with its default. User-provided values are
/// never changed and resolving twice is the same as resolving once.
pub fn resolve_defaults(def: &ModelDefinition, registries: &Registries) -> ModelDefinition {
    let mut out = def.clone();

    for f in &mut out.input_features {
        let encoder = f
            .encoder
            .get_or_insert_with(|| default_encoder(f.ftype).to_string())
            .clone();
        if let Ok(entry) = registries.encoders.get(Some(f.ftype), &encoder) {
            fill(&mut f.params, &entry.defaults);
        }
        f.preprocessing = Some(def.preprocessing_for(f.ftype, f.preprocessing.as_ref()).into());
    }

    let combiner = out.combiner.get_or_insert_with(CombinerSection::default);
    let kind = combiner
        .kind
        .get_or_insert_with(|| DEFAULT_COMBINER.to_string())
        .clone();
    if let Ok(entry) = registries.combiners.get(None, &kind) {
        fill(&mut combiner.params, &entry.defaults);
    }

    for f in &mut out.output_features {
        if f.decoder.is_none() {
            f.decoder = default_decoder(f.ftype).map(str::to_string);
        }
        if let Some(entry) = f
            .decoder
            .as_deref()
            .and_then(|d| registries.decoders.get(Some(f.ftype), d).ok())
        {
            fill(&mut f.params, &entry.defaults);
        }
        let loss = f.loss.get_or_insert_with(LossSpec::default);
        if loss.kind.is_none() {
            loss.kind = LossKind::default_for(f.ftype).map(|k| k.name().to_string());
        }
        loss.weight.get_or_insert(1.0);
        f.dependency_payload.get_or_insert(f.payload());
        f.preprocessing = Some(def.preprocessing_for(f.ftype, f.preprocessing.as_ref()).into());
    }

    let first_output = out.output_features[0].name.clone();
    let t = out.training.get_or_insert_with(TrainingSection::default);
    let effective = TrainingParams::from_section(t, &first_output);
    t.epochs = Some(effective.epochs);
    t.batch_size = Some(effective.batch_size);
    let opt = t.optimizer.get_or_insert_with(OptimizerSection::default);
    opt.kind = Some(effective.optimizer.kind);
    opt.learning_rate = Some(effective.optimizer.learning_rate);
    opt.beta1 = Some(effective.optimizer.beta1);
    opt.beta2 = Some(effective.optimizer.beta2);
    opt.epsilon = Some(effective.optimizer.epsilon);
    t.learning_rate_decay = Some(effective.learning_rate_decay);
    t.patience = Some(effective.patience);
    t.seed = Some(effective.seed);
    let split = t.split.get_or_insert_with(SplitSection::default);
    if let SplitPolicy::Random {
        train,
        validation,
        test,
    } = effective.split
    {
        split.train = Some(train);
        split.validation = Some(validation);
        split.test = Some(test);
    }
    t.validation_field = Some(effective.validation_field);
    t.validation_metric = Some(effective.validation_metric);
    out
}

/// Concrete training parameters with every default applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub learning_rate_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub split: SplitPolicy,
    pub validation_field: String,
    pub validation_metric: String,
}

pub const DEFAULT_SEED: u64 = 42;

impl TrainingParams {
    pub fn from_definition(def: &ModelDefinition) -> Self {
        Self::from_section(&def.training(), &def.output_features[0].name)
    }

    fn from_section(t: &TrainingSection, first_output: &str) -> Self {
        let opt = t.optimizer.clone().unwrap_or_default();
        let kind = opt.kind.unwrap_or(OptimizerKind::Adam);
        let base = OptimizerConfig::adam(kind.default_learning_rate());
        TrainingParams {
            epochs: t.epochs.unwrap_or(100),
            batch_size: t.batch_size.unwrap_or(128),
            optimizer: OptimizerConfig {
                kind,
                learning_rate: opt.learning_rate.unwrap_or(base.learning_rate),
                beta1: opt.beta1.unwrap_or(base.beta1),
                beta2: opt.beta2.unwrap_or(base.beta2),
                epsilon: opt.epsilon.unwrap_or(base.epsilon),
            },
            learning_rate_decay: t.learning_rate_decay.unwrap_or(1.0),
            patience: t.patience.unwrap_or(5),
            seed: t.seed.unwrap_or(DEFAULT_SEED),
            split: t.split.clone().unwrap_or_default().policy(),
            validation_field: t
                .validation_field
                .clone()
                .unwrap_or_else(|| first_output.to_string()),
            validation_metric: t
                .validation_metric
                .clone()
                .unwrap_or_else(|| "loss".to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_model_definition;
    use crate::features::FeatureType;

    const MINIMAL: &str = "input_features:\n  - name: text\n    type: text\noutput_features:\n  - name: class\n    type: category\n";

    fn resolved(text: &str) -> ModelDefinition {
        resolve_defaults(&parse_model_definition(text).unwrap(), &Registries::builtin())
    }

    #[test]
    fn default_combiner_is_concat() {
        let def = resolved(MINIMAL);
        assert_eq!(def.combiner.unwrap().kind.as_deref(), Some("concat"));
    }

    #[test]
    fn default_encoder_and_decoder() {
        let def = resolved(MINIMAL);
        assert_eq!(def.input_features[0].encoder.as_deref(), Some("embed"));
        assert_eq!(def.output_features[0].decoder.as_deref(), Some("classifier"));
        assert_eq!(
            def.output_features[0].loss.as_ref().unwrap().kind.as_deref(),
            Some("softmax_cross_entropy")
        );
        assert!(def.input_features[0].params.contains_key("embedding_size"));
    }

    #[test]
    fn feature_level_preprocessing_wins() {
        let text = "input_features:\n  - name: title\n    type: text\n    preprocessing:\n      max_sequence_length: 20\n  - name: body\n    type: text\noutput_features:\n  - name: class\n    type: category\npreprocessing:\n  text:\n    max_sequence_length: 100\n    vocab_size: 50\n";
        let def = resolved(text);
        let title = def.input_features[0].preprocessing.as_ref().unwrap();
        let body = def.input_features[1].preprocessing.as_ref().unwrap();
        assert_eq!(title.max_sequence_length, Some(20));
        assert_eq!(title.vocab_size, Some(50));
        assert_eq!(body.max_sequence_length, Some(100));
        assert_eq!(
            def.preprocessing_for(FeatureType::Text, def.input_features[0].preprocessing.as_ref())
                .max_sequence_length,
            20
        );
    }

    #[test]
    fn training_defaults() {
        let def = resolved(MINIMAL);
        let t = TrainingParams::from_definition(&def);
        assert_eq!(t.epochs, 100);
        assert_eq!(t.batch_size, 128);
        assert_eq!(t.optimizer.kind, OptimizerKind::Adam);
        assert_eq!(t.optimizer.learning_rate, 1e-3);
        assert_eq!(t.learning_rate_decay, 1.0);
        assert_eq!(t.patience, 5);
        assert_eq!(
            t.split,
            SplitPolicy::Random {
                train: 0.7,
                validation: 0.1,
                test: 0.2
            }
        );
        assert_eq!(t.validation_field, "class");
        assert_eq!(t.validation_metric, "loss");
    }

    #[test]
    fn sgd_gets_its_own_learning_rate_default() {
        let def = resolved(&format!("{MINIMAL}training:\n  optimizer:\n    type: sgd\n"));
        assert_eq!(TrainingParams::from_definition(&def).optimizer.learning_rate, 1e-2);
    }

    #[test]
    fn idempotent_and_preserves_user_values() {
        let text = format!(
            "{MINIMAL}combiner:\n  fc_sizes: [7]\ntraining:\n  epochs: 3\n  optimizer:\n    learning_rate: 0.5\n"
        )
        .replace("type: text\n", "type: text\n    encoder: rnn\n    state_size: 9\n");
        let user = parse_model_definition(&text).unwrap();
        let reg = Registries::builtin();
        let once = resolve_defaults(&user, &reg);
        assert_eq!(resolve_defaults(&once, &reg), once);
        assert_eq!(once.input_features[0].encoder.as_deref(), Some("rnn"));
        assert_eq!(once.input_features[0].params["state_size"], serde_yaml::Value::from(9));
        assert_eq!(once.combiner.as_ref().unwrap().params["fc_sizes"], user.combiner.as_ref().unwrap().params["fc_sizes"]);
        let t = once.training.as_ref().unwrap();
        assert_eq!(t.epochs, Some(3));
        assert_eq!(t.optimizer.as_ref().unwrap().learning_rate, Some(0.5));
    }

    #[test]
    fn column_split_kept() {
        let def = resolved(&format!("{MINIMAL}training:\n  split:\n    column: fold\n"));
        assert_eq!(
            TrainingParams::from_definition(&def).split,
            SplitPolicy::Column("fold".into())
        );
    }
}
