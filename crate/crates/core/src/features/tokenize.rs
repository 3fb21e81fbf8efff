use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    Space,
    Character,
}

impl TokenizerKind {
    pub const ALL: [TokenizerKind; 2] = [TokenizerKind::Space, TokenizerKind::Character];

    pub fn name(self) -> &'static str {
        match self {
            TokenizerKind::Space => "space",
            TokenizerKind::Character => "character",
        }
    }
}

impl FromStr for TokenizerKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FeatureError::Registry {
                kind: "tokenizer",
                name: s.to_string(),
                available: Self::ALL.iter().map(|k| k.name().to_string()).collect(),
            })
    }
}

pub fn tokenize(text: &str, kind: TokenizerKind) -> Vec<String> {
    match kind {
        TokenizerKind::Space => text.split_whitespace().map(str::to_string).collect(),
        TokenizerKind::Character => text.chars().map(String::from).collect(),
    }
}
