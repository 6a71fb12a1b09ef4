//! Race and gender keys shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five single-race categories reported by the census surname file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    Asian,
    Black,
    Hispanic,
    NativeAmerican,
    White,
}

impl Race {
    /// Canonical order, used for vectors indexed by race and for plot axes.
    pub const ALL: [Race; 5] = [
        Race::Asian,
        Race::Black,
        Race::Hispanic,
        Race::NativeAmerican,
        Race::White,
    ];

    pub fn index(self) -> usize {
        match self {
            Race::Asian => 0,
            Race::Black => 1,
            Race::Hispanic => 2,
            Race::NativeAmerican => 3,
            Race::White => 4,
        }
    }

    /// Stable lowercase key used in file names and tabular columns.
    pub fn key(self) -> &'static str {
        match self {
            Race::Asian => "asian",
            Race::Black => "black",
            Race::Hispanic => "hispanic",
            Race::NativeAmerican => "native_american",
            Race::White => "white",
        }
    }

    /// Column name in the 2010 census surname table.
    pub fn census_column(self) -> &'static str {
        match self {
            Race::Asian => "pctapi",
            Race::Black => "pctblack",
            Race::Hispanic => "pcthispanic",
            Race::NativeAmerican => "pctaian",
            Race::White => "pctwhite",
        }
    }

    /// Human-readable label for tables and plots.
    pub fn label(self) -> &'static str {
        match self {
            Race::Asian => "Asian",
            Race::Black => "Black",
            Race::Hispanic => "Hispanic",
            Race::NativeAmerican => "Native American",
            Race::White => "White",
        }
    }

    /// Default phrase substituted into the race-membership probe.
    pub fn default_phrase(self) -> &'static str {
        match self {
            Race::Asian => "Asian",
            Race::Black => "African American",
            Race::Hispanic => "Hispanic",
            Race::NativeAmerican => "Native American",
            Race::White => "White",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct ParseKeyError {
    kind: &'static str,
    value: String,
}

impl FromStr for Race {
    type Err = ParseKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "asian" | "api" | "pctapi" => Ok(Race::Asian),
            "black" | "africanamerican" | "pctblack" => Ok(Race::Black),
            "hispanic" | "pcthispanic" => Ok(Race::Hispanic),
            "nativeamerican" | "native" | "aian" | "pctaian" => Ok(Race::NativeAmerican),
            "white" | "pctwhite" => Ok(Race::White),
            _ => Err(ParseKeyError {
                kind: "race",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::M, Gender::F];

    pub fn title(self) -> &'static str {
        match self {
            Gender::M => "Mr.",
            Gender::F => "Ms.",
        }
    }

    pub fn subject_pronoun(self) -> &'static str {
        match self {
            Gender::M => "he",
            Gender::F => "she",
        }
    }

    pub fn possessive_pronoun(self) -> &'static str {
        match self {
            Gender::M => "his",
            Gender::F => "her",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Gender {
    type Err = ParseKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" | "MR" | "MR." => Ok(Gender::M),
            "F" | "FEMALE" | "MS" | "MS." => Ok(Gender::F),
            _ => Err(ParseKeyError {
                kind: "gender",
                value: s.to_string(),
            }),
        }
    }
}

/// A (race, gender) experimental group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    pub race: Race,
    pub gender: Gender,
}

impl Group {
    pub fn new(race: Race, gender: Gender) -> Self {
        Group { race, gender }
    }

    /// All ten groups, race-major then gender (M before F).
    pub fn all() -> Vec<Group> {
        Race::ALL
            .iter()
            .flat_map(|&race| Gender::ALL.iter().map(move |&gender| Group { race, gender }))
            .collect()
    }

    /// `white_M` style identifier for file names.
    pub fn slug(self) -> String {
        format!("{}_{}", self.race.key(), self.gender.key())
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.race.label(), self.gender.key())
    }
}

impl FromStr for Group {
    type Err = ParseKeyError;

    /// Accepts `"White,M"`, `"white_m"` or `"Asian F"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s
            .rfind([',', '_', ' ', ':'])
            .ok_or_else(|| ParseKeyError {
                kind: "group",
                value: s.to_string(),
            })?;
        let race = s[..split].parse()?;
        let gender = s[split + 1..].parse()?;
        Ok(Group { race, gender })
    }
}

/// Title-case an uppercase census surname for prompt rendering (`MCCARTHY` -> `Mccarthy`).
pub fn title_case(surname: &str) -> String {
    let mut out = String::with_capacity(surname.len());
    let mut start = true;
    for c in surname.chars() {
        if start {
            out.extend(c.to_uppercase());
        } else {
            out.extend(c.to_lowercase());
        }
        start = !c.is_alphanumeric();
    }
    out
}
