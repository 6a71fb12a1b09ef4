//! Refining census surname lists into per-model gender-surname pairs.
//!
//! Each (title, surname) pair is asked one True/False question per race. The
//! log-odds `log Pr(True) - log Pr(False)` over the two answer strings measure
//! how strongly the model associates the pair with that race. A pair is a
//! candidate for its census race only if that race has the largest log-odds;
//! per gender the candidates with the largest gap between the top two races
//! are kept.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::Serialize;

use crate::backend::{BackendError, PromptStyle, ScoreRequest, ScoringClient};
use crate::census::RacePosterior;
use crate::race::{title_case, Gender, Race};
use crate::template::{render, TemplateError, TemplateSet};

/// Bayesian surnames taken into each seed list.
pub const SEED_FROM_POSTERIOR: usize = 300;
/// Pairs kept per gender for each race.
pub const PAIRS_PER_GENDER: usize = 17;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("probe configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("shortfall for {race}: {}", format_deficits(.deficits))]
    Shortfall {
        race: Race,
        /// (gender, qualifying, required)
        deficits: Vec<(Gender, usize, usize)>,
    },
    #[error("pair file line {line}: {message}")]
    PairFile { line: u64, message: String },
    /// Every probe failed at the transport level: the backend is down, not
    /// merely unsure about some names.
    #[error("backend unavailable: every probe failed ({0})")]
    Unavailable(BackendError),
}

fn format_deficits(d: &[(Gender, usize, usize)]) -> String {
    d.iter()
        .map(|(g, have, need)| format!("{g}: {have} of {need} qualifying pairs ({} short)", need - have))
        .collect::<Vec<_>>()
        .join(", ")
}

/// A title plus surname, with the model's per-race log-odds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenderSurnamePair {
    /// Uppercase surname.
    pub surname: String,
    pub gender: Gender,
    pub assigned_race: Race,
    /// Only races whose probe succeeded are present.
    pub log_odds: BTreeMap<Race, f64>,
    pub spread: f64,
}

impl GenderSurnamePair {
    pub fn new(surname: &str, gender: Gender, assigned_race: Race, log_odds: BTreeMap<Race, f64>) -> Self {
        let spread = spread_of(&log_odds);
        GenderSurnamePair {
            surname: surname.to_ascii_uppercase(),
            gender,
            assigned_race,
            log_odds,
            spread,
        }
    }

    pub fn title(&self) -> &'static str {
        self.gender.title()
    }

    /// "Ms. Lopez".
    pub fn display(&self) -> String {
        format!("{} {}", self.title(), title_case(&self.surname))
    }

    /// Race with the largest log-odds.
    pub fn top_race(&self) -> Option<Race> {
        self.log_odds
            .iter()
            .fold(None, |best: Option<(Race, f64)>, (&r, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((r, v)),
            })
            .map(|(r, _)| r)
    }

    /// Refinement gate: the census race must also be the model's strict top
    /// race. Pairs with a failed probe for any race cannot be ranked and never
    /// qualify.
    pub fn qualifies(&self) -> bool {
        self.log_odds.len() == Race::ALL.len() && self.spread > 0.0 && self.top_race() == Some(self.assigned_race)
    }
}

/// Top-1 minus top-2 log-odds; zero with fewer than two races.
fn spread_of(log_odds: &BTreeMap<Race, f64>) -> f64 {
    let mut v: Vec<f64> = log_odds.values().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    match v.as_slice() {
        [a, b, ..] => a - b,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeedList {
    pub race: Race,
    pub surnames: Vec<String>,
}

/// Top Bayesian surnames followed by `extra`, de-duplicated case-insensitively.
pub fn build_seed_list(posterior: &RacePosterior, extra: &[String], from_posterior: usize) -> SeedList {
    let mut seen = HashSet::new();
    let surnames = posterior
        .ranked
        .iter()
        .take(from_posterior)
        .map(|r| r.surname.as_str())
        .chain(extra.iter().map(String::as_str))
        .map(|s| s.trim().to_ascii_uppercase())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect();
    SeedList {
        race: posterior.race,
        surnames,
    }
}

/// Race phrases substituted into probes, with a per-run override map.
pub fn race_phrases(overrides: &BTreeMap<Race, String>) -> BTreeMap<Race, String> {
    Race::ALL
        .into_iter()
        .map(|r| {
            let phrase = overrides.get(&r).cloned().unwrap_or_else(|| r.default_phrase().to_string());
            (r, phrase)
        })
        .collect()
}

pub fn render_race_probe(
    templates: &TemplateSet,
    surname: &str,
    gender: Gender,
    race_phrase: &str,
    style: PromptStyle,
) -> Result<String, ProbeError> {
    let template = match style {
        PromptStyle::BaseLlamaMistral => &templates.probe_llama_mistral,
        PromptStyle::BasePhi => &templates.probe_phi,
        PromptStyle::Instruct => {
            return Err(ProbeError::Config(
                "instruction-tuned models are not probed; reuse the base model's pair file".into(),
            ))
        }
    };
    let vars = BTreeMap::from([
        ("title", gender.title().to_string()),
        ("surname", title_case(surname)),
        ("race", race_phrase.to_string()),
    ]);
    Ok(render(style.key(), template, &vars)?)
}

/// One race-membership probe result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaceProbe {
    pub log_odds: f64,
    /// `Pr(True) + Pr(False)` before renormalization, when the backend reports
    /// normalized log-probabilities.
    pub valid_mass: Option<f64>,
}

/// Log-odds from the two raw answer scores.
///
/// Renormalizing over {True, False} subtracts the same constant from both log
/// probabilities, so the difference of raw scores is the renormalized log-odds.
pub fn log_odds_from_scores(score_true: f64, score_false: f64) -> f64 {
    score_true - score_false
}

/// Probe one gender-surname pair against every race in `phrases`.
///
/// A failed race is reported as `Err` rather than as zero log-odds.
pub fn probe_log_odds(
    client: &ScoringClient,
    templates: &TemplateSet,
    style: PromptStyle,
    surname: &str,
    gender: Gender,
    phrases: &BTreeMap<Race, String>,
) -> Result<BTreeMap<Race, Result<RaceProbe, BackendError>>, ProbeError> {
    let (yes, no) = style
        .answer_tokens()
        .ok_or_else(|| ProbeError::Config(format!("no answer tokens for style {style}")))?;
    let mut out = BTreeMap::new();
    for (&race, phrase) in phrases {
        let prompt = render_race_probe(templates, surname, gender, phrase, style)?;
        let result = ScoreRequest::new(prompt, vec![yes.to_string(), no.to_string()])
            .and_then(|req| client.score(&req))
            .map(|resp| RaceProbe {
                log_odds: log_odds_from_scores(resp.scores[0], resp.scores[1]),
                valid_mass: resp.valid_mass(),
            });
        out.insert(race, result);
    }
    Ok(out)
}

/// Keep the `per_gender` qualifying pairs per gender with the largest spread.
///
/// Ties are broken by the larger log-odds for the assigned race, then by
/// surname. Output lists all M pairs, then all F pairs, each in rank order.
pub fn select_pairs(
    race: Race,
    candidates: &[GenderSurnamePair],
    per_gender: usize,
) -> Result<Vec<GenderSurnamePair>, ProbeError> {
    let mut selected = Vec::with_capacity(2 * per_gender);
    let mut deficits = Vec::new();
    for gender in Gender::ALL {
        let mut pool: Vec<&GenderSurnamePair> = candidates
            .iter()
            .filter(|p| p.gender == gender && p.assigned_race == race && p.qualifies())
            .collect();
        if pool.len() < per_gender {
            deficits.push((gender, pool.len(), per_gender));
            continue;
        }
        pool.sort_by(|a, b| {
            let own = |p: &GenderSurnamePair| p.log_odds.get(&race).copied().unwrap_or(f64::NEG_INFINITY);
            b.spread
                .total_cmp(&a.spread)
                .then(own(b).total_cmp(&own(a)))
                .then_with(|| a.surname.cmp(&b.surname))
        });
        selected.extend(pool.into_iter().take(per_gender).cloned());
    }
    if deficits.is_empty() {
        Ok(selected)
    } else {
        Err(ProbeError::Shortfall { race, deficits })
    }
}

/// One line of the probe log.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeLogEntry {
    pub surname: String,
    pub gender: Gender,
    pub assigned_race: Race,
    pub probed_race: Race,
    pub log_odds: Option<f64>,
    pub valid_mass: Option<f64>,
    pub error: Option<String>,
}

/// Probe both genders of every seed surname; returns candidate pairs in seed
/// order (M before F for each surname) and the full probe log.
pub fn probe_seed_list(
    client: &ScoringClient,
    templates: &TemplateSet,
    style: PromptStyle,
    seeds: &SeedList,
    phrases: &BTreeMap<Race, String>,
) -> Result<(Vec<GenderSurnamePair>, Vec<ProbeLogEntry>), ProbeError> {
    let tasks: Vec<(&str, Gender)> = seeds
        .surnames
        .iter()
        .flat_map(|s| Gender::ALL.map(|g| (s.as_str(), g)))
        .collect();
    let results = client.map_parallel(&tasks, |&(surname, gender)| {
        probe_log_odds(client, templates, style, surname, gender, phrases)
    });
    let mut pairs = Vec::with_capacity(tasks.len());
    let mut log = Vec::new();
    let mut first_transport_error = None;
    for (&(surname, gender), result) in tasks.iter().zip(results) {
        let per_race = result?;
        let mut log_odds = BTreeMap::new();
        for (race, r) in per_race {
            let (lo, vm, err) = match r {
                Ok(p) => {
                    log_odds.insert(race, p.log_odds);
                    (Some(p.log_odds), p.valid_mass, None)
                }
                Err(e) => {
                    log::warn!("probe {surname}/{gender}/{race} failed: {e}");
                    if e.is_retryable() && first_transport_error.is_none() {
                        first_transport_error = Some(e.clone());
                    }
                    (None, None, Some(e.to_string()))
                }
            };
            log.push(ProbeLogEntry {
                surname: surname.to_string(),
                gender,
                assigned_race: seeds.race,
                probed_race: race,
                log_odds: lo,
                valid_mass: vm,
                error: err,
            });
        }
        pairs.push(GenderSurnamePair::new(surname, gender, seeds.race, log_odds));
    }
    if !log.is_empty() && log.iter().all(|e| e.error.is_some()) {
        if let Some(e) = first_transport_error {
            return Err(ProbeError::Unavailable(e));
        }
    }
    Ok((pairs, log))
}

const PAIR_HEADER: [&str; 9] = [
    "race",
    "surname",
    "gender",
    "log_odds_asian",
    "log_odds_black",
    "log_odds_hispanic",
    "log_odds_native_american",
    "log_odds_white",
    "spread",
];

/// Write pairs as `race,surname,gender,log_odds_<race>...,spread`.
pub fn write_pair_file<W: Write>(out: W, pairs: &[GenderSurnamePair]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PAIR_HEADER)?;
    for p in pairs {
        let mut row = vec![
            p.assigned_race.key().to_string(),
            p.surname.clone(),
            p.gender.key().to_string(),
        ];
        for r in Race::ALL {
            row.push(p.log_odds.get(&r).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(if p.log_odds.is_empty() { String::new() } else { p.spread.to_string() });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a pair file. Log-odds columns may be blank (reference lists carry none).
pub fn read_pair_file<R: Read>(input: R) -> Result<Vec<GenderSurnamePair>, ProbeError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| ProbeError::PairFile { line: 1, message: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != PAIR_HEADER {
        return Err(ProbeError::PairFile {
            line: 1,
            message: format!("expected header {}", PAIR_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| ProbeError::PairFile {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| ProbeError::PairFile { line, message };
        let race: Race = row[0].parse().map_err(|e: crate::race::ParseKeyError| bad(e.to_string()))?;
        let gender: Gender = row[2].parse().map_err(|e: crate::race::ParseKeyError| bad(e.to_string()))?;
        let mut log_odds = BTreeMap::new();
        for (i, r) in Race::ALL.into_iter().enumerate() {
            let cell = &row[3 + i];
            if !cell.is_empty() {
                let v: f64 = cell.parse().map_err(|_| bad(format!("bad log-odds `{cell}`")))?;
                log_odds.insert(r, v);
            }
        }
        out.push(GenderSurnamePair::new(&row[1], gender, race, log_odds));
    }
    Ok(out)
}
