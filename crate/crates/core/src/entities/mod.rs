//! Person mentions, alias clustering and `CHARn` canonicalization.

mod canonical;
mod dealias;
mod distance;
mod mentions;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use canonical::{canonicalize, CanonicalSentence, CharMention};
pub use dealias::{
    apply_overrides, dealias, parse_overrides, AliasEntry, AliasTable, DealiasConfig, DealiasError,
};
pub use distance::{levenshtein, name_distance, normalized_levenshtein};
pub use mentions::{detect_mentions, Gazetteer, Mention, PersonTagger};

/// Canonical character identifier, rendered as `CHARn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CharacterId(pub u32);

impl fmt::Display for CharacterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CHAR{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a character id: {0:?}")]
pub struct ParseCharacterIdError(String);

impl FromStr for CharacterId {
    type Err = ParseCharacterIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        crate::text::parse_char_id(s).map(CharacterId).ok_or_else(|| ParseCharacterIdError(s.to_owned()))
    }
}

impl Serialize for CharacterId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CharacterId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
