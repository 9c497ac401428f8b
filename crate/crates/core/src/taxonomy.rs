//! Taxonomy-path labels and the hierarchy predicate that gates re-classification.
//!
//! Labels travel as semicolon-delimited seven-field strings
//! (`kingdom;class;order;family;genus;species;common name`) plus the two
//! sentinel tokens `blank` and `unknown`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const BLANK_TOKEN: &str = "blank";
const UNKNOWN_TOKEN: &str = "unknown";
const FIELD_COUNT: usize = 7;
const RANK_COUNT: usize = 6;

/// Taxonomic rank, ordered from coarsest to finest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Kingdom,
    Class,
    Order,
    Family,
    Genus,
    Species,
}

impl Rank {
    pub const ALL: [Rank; RANK_COUNT] = [
        Rank::Kingdom,
        Rank::Class,
        Rank::Order,
        Rank::Family,
        Rank::Genus,
        Rank::Species,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rank::Kingdom => "kingdom",
            Rank::Class => "class",
            Rank::Order => "order",
            Rank::Family => "family",
            Rank::Genus => "genus",
            Rank::Species => "species",
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A taxonomy path filled left to right, with a free-text common name.
///
/// Rank fields are lowercase; a non-empty kingdom is required.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaxonPath {
    ranks: [String; RANK_COUNT],
    common_name: String,
}

impl TaxonPath {
    /// Builds a path from rank fields (coarsest first) and a common name.
    ///
    /// Fewer than six ranks leaves the finer ranks empty.
    pub fn new<S: AsRef<str>>(ranks: &[S], common_name: &str) -> Result<Self> {
        if ranks.len() > RANK_COUNT {
            return Err(malformed(
                ranks
                    .iter()
                    .map(|s| s.as_ref())
                    .collect::<Vec<_>>()
                    .join(";"),
                "more than six rank fields",
            ));
        }
        let mut fields: [String; RANK_COUNT] = Default::default();
        for (slot, value) in fields.iter_mut().zip(ranks) {
            *slot = value.as_ref().trim().to_lowercase();
        }
        let path = TaxonPath {
            ranks: fields,
            common_name: common_name.trim().to_string(),
        };
        path.validate()?;
        Ok(path)
    }

    fn validate(&self) -> Result<()> {
        if self.ranks[0].is_empty() {
            return Err(malformed(self.render(), "kingdom field is empty"));
        }
        let mut seen_empty = false;
        for (rank, value) in Rank::ALL.iter().zip(&self.ranks) {
            if value.is_empty() {
                seen_empty = true;
            } else if seen_empty {
                return Err(malformed(
                    self.render(),
                    &format!("{rank} is set after an empty coarser rank"),
                ));
            }
            if value.contains(';') {
                return Err(malformed(self.render(), "rank field contains ';'"));
            }
        }
        if self.common_name.contains(';') {
            return Err(malformed(self.render(), "common name contains ';'"));
        }
        Ok(())
    }

    pub fn rank(&self, rank: Rank) -> &str {
        &self.ranks[rank.index()]
    }

    pub fn kingdom(&self) -> &str {
        self.rank(Rank::Kingdom)
    }

    pub fn class(&self) -> &str {
        self.rank(Rank::Class)
    }

    pub fn species(&self) -> &str {
        self.rank(Rank::Species)
    }

    pub fn common_name(&self) -> &str {
        &self.common_name
    }

    /// Deepest non-empty rank.
    pub fn level(&self) -> Rank {
        Rank::ALL
            .iter()
            .rev()
            .copied()
            .find(|r| !self.ranks[r.index()].is_empty())
            .unwrap_or(Rank::Kingdom)
    }

    pub fn is_species_level(&self) -> bool {
        self.level() == Rank::Species
    }

    /// Copy of this path cut back to `rank` (finer ranks cleared).
    ///
    /// The common name is kept only when nothing was cut.
    pub fn truncate(&self, rank: Rank) -> TaxonPath {
        if rank >= self.level() {
            return self.clone();
        }
        let mut ranks = self.ranks.clone();
        for slot in ranks.iter_mut().skip(rank.index() + 1) {
            slot.clear();
        }
        TaxonPath {
            ranks,
            common_name: String::new(),
        }
    }

    /// Rank fields only, semicolon-joined; identifies the taxon regardless of common name.
    pub fn rank_key(&self) -> String {
        self.ranks.join(";")
    }

    /// True when both paths carry identical rank fields; the common name is ignored.
    pub fn same_taxon(&self, other: &TaxonPath) -> bool {
        self.ranks == other.ranks
    }

    /// True when every non-empty rank of `self` equals the same rank of `other`.
    pub fn is_ancestor_or_self_of(&self, other: &TaxonPath) -> bool {
        self.ranks
            .iter()
            .zip(&other.ranks)
            .all(|(mine, theirs)| mine.is_empty() || mine == theirs)
    }

    /// Semicolon-delimited seven-field form.
    pub fn render(&self) -> String {
        let mut out = self.ranks.join(";");
        out.push(';');
        out.push_str(&self.common_name);
        out
    }

    /// The generic kingdom-level "animal" label used by the conservative fallback.
    pub fn animal() -> TaxonPath {
        TaxonPath::new(&["animalia"], "animal").expect("static label is valid")
    }

    /// Class-level mammal label.
    pub fn mammal() -> TaxonPath {
        TaxonPath::new(&["animalia", "mammalia"], "mammal").expect("static label is valid")
    }

    /// Class-level bird label assigned by the bird override.
    pub fn bird() -> TaxonPath {
        TaxonPath::new(&["animalia", "aves"], "bird").expect("static label is valid")
    }
}

impl fmt::Display for TaxonPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl PartialOrd for TaxonPath {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TaxonPath {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.render().cmp(&other.render())
    }
}

impl FromStr for TaxonPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match parse_label(s)? {
            Label::Taxon(path) => Ok(path),
            other => Err(malformed(
                s.to_string(),
                &format!("expected a taxon path, got {other}"),
            )),
        }
    }
}

/// A detection label: a taxon, or one of the two sentinels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Taxon(TaxonPath),
    Blank,
    Unknown,
}

impl Label {
    pub fn as_taxon(&self) -> Option<&TaxonPath> {
        match self {
            Label::Taxon(path) => Some(path),
            _ => None,
        }
    }

    /// Level of the taxon, `None` for the sentinels.
    pub fn level(&self) -> Option<Rank> {
        self.as_taxon().map(TaxonPath::level)
    }

    pub fn is_species_level(&self) -> bool {
        self.level() == Some(Rank::Species)
    }

    pub fn render(&self) -> String {
        match self {
            Label::Taxon(path) => path.render(),
            Label::Blank => BLANK_TOKEN.to_string(),
            Label::Unknown => UNKNOWN_TOKEN.to_string(),
        }
    }

    /// Short human-readable name: the common name when present, otherwise the deepest rank.
    pub fn display_name(&self) -> String {
        match self {
            Label::Taxon(path) if !path.common_name().is_empty() => path.common_name().to_string(),
            Label::Taxon(path) => path.rank(path.level()).to_string(),
            Label::Blank => BLANK_TOKEN.to_string(),
            Label::Unknown => UNKNOWN_TOKEN.to_string(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl From<TaxonPath> for Label {
    fn from(path: TaxonPath) -> Self {
        Label::Taxon(path)
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_label(&text).map_err(serde::de::Error::custom)
    }
}

impl Serialize for TaxonPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for TaxonPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

fn malformed(text: String, reason: &str) -> Error {
    Error::MalformedLabel {
        text,
        reason: reason.to_string(),
    }
}

/// Parses the wire form of a label.
pub fn parse_label(text: &str) -> Result<Label> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(malformed(text.to_string(), "empty label"));
    }
    match trimmed {
        BLANK_TOKEN => return Ok(Label::Blank),
        UNKNOWN_TOKEN => return Ok(Label::Unknown),
        _ => {}
    }
    let fields: Vec<&str> = trimmed.split(';').collect();
    if fields.len() > FIELD_COUNT {
        return Err(malformed(
            text.to_string(),
            &format!("{} fields, at most {FIELD_COUNT} allowed", fields.len()),
        ));
    }
    let rank_fields = &fields[..fields.len().min(RANK_COUNT)];
    let common_name = fields.get(RANK_COUNT).copied().unwrap_or("");
    if rank_fields.iter().all(|f| f.trim().is_empty()) {
        return Err(malformed(text.to_string(), "no rank fields set"));
    }
    TaxonPath::new(rank_fields, common_name)
        .map(Label::Taxon)
        .map_err(|e| match e {
            Error::MalformedLabel { reason, .. } => malformed(text.to_string(), &reason),
            other => other,
        })
}

/// Whether `candidate` is consistent with everything `original` already asserts.
///
/// Blank and Unknown originals carry no constraint.
pub fn hierarchy_match(original: &Label, candidate: &TaxonPath) -> bool {
    match original {
        Label::Taxon(path) => path.is_ancestor_or_self_of(candidate),
        Label::Blank | Label::Unknown => true,
    }
}

pub fn is_bird(path: &TaxonPath) -> bool {
    path.class() == "aves"
}
