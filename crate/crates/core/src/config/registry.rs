//! Name → component maps that make encoders, decoders, combiners and the
//! other pluggable strategies addressable from a model definition.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::Params;
use crate::features::FeatureType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    Encoder,
    Decoder,
    Combiner,
    Tokenizer,
    Metric,
    Loss,
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentKind::Encoder => "encoder",
            ComponentKind::Decoder => "decoder",
            ComponentKind::Combiner => "combiner",
            ComponentKind::Tokenizer => "tokenizer",
            ComponentKind::Metric => "metric",
            ComponentKind::Loss => "loss",
        })
    }
}

/// Lookup scope: a feature type, or `None` for type-independent components.
pub type Scope = Option<FeatureType>;

fn scope_suffix(scope: Scope) -> String {
    scope.map(|t| format!(" for {t}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("cannot register a {kind} with an empty name")]
    EmptyName { kind: ComponentKind },
    #[error("{kind} `{name}` is already registered{}", scope_suffix(*scope))]
    Duplicate {
        kind: ComponentKind,
        scope: Scope,
        name: String,
    },
    #[error("unknown {kind} `{name}`{}; available: {}", scope_suffix(*scope), available.join(", "))]
    Missing {
        kind: ComponentKind,
        scope: Scope,
        name: String,
        available: Vec<String>,
    },
}

/// A registered component together with the default values of every
/// keyword it accepts.
pub struct ComponentEntry<F> {
    pub defaults: Params,
    pub factory: F,
}

impl<F> ComponentEntry<F> {
    pub fn new(defaults: Params, factory: F) -> Self {
        Self { defaults, factory }
    }

    pub fn accepts(&self, keyword: &str) -> bool {
        self.defaults.contains_key(keyword)
    }

    /// User keywords layered over the defaults.
    pub fn merged(&self, user: &Params) -> Params {
        let mut out = self.defaults.clone();
        out.extend(user.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }
}

pub struct Registry<T> {
    kind: ComponentKind,
    entries: BTreeMap<(Scope, String), T>,
    order: Vec<(Scope, String)>,
}

impl<T> Registry<T> {
    pub fn new(kind: ComponentKind) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
            order: Vec::new(),
        }
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    /// Adds `entry` under `name`; an existing name in the same scope is an
    /// error, never an override.
    pub fn register(&mut self, scope: Scope, name: &str, entry: T) -> Result<(), RegistryError> {
        if name.trim().is_empty() {
            return Err(RegistryError::EmptyName { kind: self.kind });
        }
        let key = (scope, name.to_string());
        if self.entries.contains_key(&key) {
            return Err(RegistryError::Duplicate {
                kind: self.kind,
                scope,
                name: name.to_string(),
            });
        }
        self.entries.insert(key.clone(), entry);
        self.order.push(key);
        Ok(())
    }

    pub fn get(&self, scope: Scope, name: &str) -> Result<&T, RegistryError> {
        self.entries
            .get(&(scope, name.to_string()))
            .ok_or_else(|| RegistryError::Missing {
                kind: self.kind,
                scope,
                name: name.to_string(),
                available: self.names(scope),
            })
    }

    pub fn contains(&self, scope: Scope, name: &str) -> bool {
        self.entries.contains_key(&(scope, name.to_string()))
    }

    /// Names registered in `scope`, in registration order.
    pub fn names(&self, scope: Scope) -> Vec<String> {
        self.order
            .iter()
            .filter(|(s, _)| *s == scope)
            .map(|(_, n)| n.clone())
            .collect()
    }
}

impl<T> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.order)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_then_lookup() {
        let mut r = Registry::new(ComponentKind::Encoder);
        r.register(Some(FeatureType::Text), "myenc", 1).unwrap();
        assert_eq!(*r.get(Some(FeatureType::Text), "myenc").unwrap(), 1);
        assert!(r.get(Some(FeatureType::Sequence), "myenc").is_err());
    }

    #[test]
    fn duplicate_rejected() {
        let mut r = Registry::new(ComponentKind::Encoder);
        r.register(Some(FeatureType::Text), "rnn", 1).unwrap();
        let err = r.register(Some(FeatureType::Text), "rnn", 2).unwrap_err();
        assert!(matches!(err, RegistryError::Duplicate { .. }));
        assert_eq!(*r.get(Some(FeatureType::Text), "rnn").unwrap(), 1);
        // a different scope is a different name
        r.register(Some(FeatureType::Sequence), "rnn", 3).unwrap();
    }

    #[test]
    fn miss_lists_available() {
        let mut r = Registry::new(ComponentKind::Encoder);
        for n in ["embed", "rnn", "cnn"] {
            r.register(Some(FeatureType::Text), n, ()).unwrap();
        }
        let msg = r.get(Some(FeatureType::Text), "rrn").unwrap_err().to_string();
        assert!(msg.contains("embed, rnn, cnn"), "{msg}");
    }

    #[test]
    fn empty_name_rejected() {
        let mut r = Registry::new(ComponentKind::Metric);
        assert!(r.register(None, " ", ()).is_err());
    }

    #[test]
    fn merged_params_keep_user_values() {
        let e = ComponentEntry::new(
            Params::from([("a".into(), 1.into()), ("b".into(), 2.into())]),
            (),
        );
        let m = e.merged(&Params::from([("b".into(), 5.into())]));
        assert_eq!(m["a"], serde_yaml::Value::from(1));
        assert_eq!(m["b"], serde_yaml::Value::from(5));
        assert!(e.accepts("a") && !e.accepts("c"));
    }
}
