#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use namebias::backend::{FixtureFile, FixtureRule};
use namebias::race::{title_case, Gender, Race};

pub const CENSUS_HEADER: &str =
    "name,rank,count,prop100k,cum_prop100k,pctwhite,pctblack,pctapi,pctaian,pct2prace,pcthispanic";

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn shipped_census() -> PathBuf {
    repo_root().join("data/census/Names_2010Census.csv.gz")
}

pub fn reference_pairs(model: &str) -> PathBuf {
    repo_root().join(format!("data/reference/pairs/{model}.csv"))
}

/// Letters-only surname for synthetic race `race`, index `k`.
pub fn synthetic_surname(race: Race, k: usize) -> String {
    let stem = match race {
        Race::Asian => "ASIA",
        Race::Black => "BLAC",
        Race::Hispanic => "HISP",
        Race::NativeAmerican => "NATI",
        Race::White => "WHIT",
    };
    let a = (b'A' + (k / 26) as u8) as char;
    let b = (b'A' + (k % 26) as u8) as char;
    format!("{stem}{a}{b}")
}

/// A census file with `per_race` distinctive surnames for each race.
pub fn write_synthetic_census(path: &Path, per_race: usize) {
    let mut text = String::from(CENSUS_HEADER);
    text.push('\n');
    let mut rank = 1;
    for race in Race::ALL {
        for k in 0..per_race {
            // 90% own race, 2% each other race, 2% multiracial.
            let pct = |r: Race| if r == race { 90.0 } else { 2.0 };
            text.push_str(&format!(
                "{},{rank},{},0,0,{},{},{},{},2,{}\n",
                synthetic_surname(race, k),
                5000 - k,
                pct(Race::White),
                pct(Race::Black),
                pct(Race::Asian),
                pct(Race::NativeAmerican),
                pct(Race::Hispanic),
            ));
            rank += 1;
        }
    }
    fs::write(path, text).unwrap();
}

/// Probe fixture under which every synthetic surname is perceived as its own
/// race, except (optionally) female names of `weak_race` beyond index
/// `weak_keep`, which get no boost and therefore fail the gate.
pub fn probe_fixture(per_race: usize, weak: Option<(Race, usize)>) -> FixtureFile {
    let mut rules = Vec::new();
    for race in Race::ALL {
        for k in 0..per_race {
            let surname = title_case(&synthetic_surname(race, k));
            for gender in Gender::ALL {
                if let Some((weak_race, keep)) = weak {
                    if weak_race == race && gender == Gender::F && k >= keep {
                        continue;
                    }
                }
                let prompt = format!("{} {surname} is {}.", gender.title(), race.default_phrase());
                rules.push(FixtureRule::new(prompt, Some(" True"), -0.1 - 0.01 * k as f64));
            }
        }
    }
    rules.push(FixtureRule::new("", Some(" True"), -3.0));
    rules.push(FixtureRule::new("", Some(" False"), -0.5));
    FixtureFile { normalized: false, rules }
}

/// Every candidate gets the same score: uniform distributions everywhere.
pub fn constant_fixture() -> FixtureFile {
    FixtureFile {
        normalized: false,
        rules: vec![FixtureRule::new("", None, -1.0)],
    }
}

pub fn write_fixture(path: &Path, fixture: &FixtureFile) {
    fs::write(path, serde_json::to_string_pretty(fixture).unwrap()).unwrap();
}

/// Write a run config. `extra` is appended verbatim (TOML).
pub fn write_config(dir: &Path, fixture: &Path, pair_file: Option<&Path>, census: Option<&Path>, extra: &str) -> PathBuf {
    let mut text = String::new();
    if let Some(c) = census {
        text.push_str(&format!("census_path = {:?}\n", c.display().to_string()));
    }
    if let Some(p) = pair_file {
        text.push_str(&format!("pair_file = {:?}\n", p.display().to_string()));
    }
    text.push_str(&format!("output_dir = {:?}\n", dir.join("out").display().to_string()));
    text.push_str(&format!(
        "\n[backend]\nendpoint = {:?}\nprompt_style = \"base-phi\"\nmodel_id = \"mock-model\"\nmax_parallel = 4\nretry_backoff_ms = 1\n",
        format!("mock:{}", fixture.display())
    ));
    text.push_str(extra);
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}
