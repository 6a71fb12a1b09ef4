//! Census surname ingestion and Bayesian ranking of surnames per race.
//!
//! The census table gives, for every surname, its frequency and the share of
//! its bearers in each race, i.e. `Pr(race | name)`. Normalizing the counts
//! gives `Pr(name)`, and ranking by
//!
//! ```text
//! Pr(name | race) = Pr(race | name) Pr(name) / sum_n Pr(race | n) Pr(n)
//! ```
//!
//! favours surnames that are both distinctive and common.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::Serialize;

use crate::race::Race;

/// Slack for sums of values parsed from the file when suppressed cells must absorb the remainder.
pub const FILE_SUM_TOLERANCE: f64 = 1e-6;
/// Structural tolerance for quantities produced by this module.
pub const STRUCTURAL_TOLERANCE: f64 = 1e-9;
/// The census publishes percentages at two decimals, so an unsuppressed row of
/// six columns can sum to 100 ± 0.03. Rows within this slack are accepted as-is.
pub const ROUNDING_TOLERANCE: f64 = 0.05;

/// Surname used by the census for the aggregate of all rare surnames.
pub const AGGREGATE_ROW: &str = "ALL OTHER NAMES";

const MULTIRACE_COLUMN: &str = "pct2prace";
const IGNORED_COLUMNS: [&str; 3] = ["rank", "prop100k", "cum_prop100k"];
const SUPPRESSED_MARK: &str = "(S)";

#[derive(Debug, thiserror::Error)]
pub enum CensusError {
    #[error("cannot read census file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("census schema error: {0}")]
    Schema(String),
    #[error("census parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("data-integrity error for {surname}: known percentages sum to {sum} (> 100)")]
    Integrity { surname: String, sum: f64 },
    #[error("{surname} still has suppressed cells; impute before renormalizing")]
    NotImputed { surname: String },
    #[error("degenerate record {surname}: all five race percentages are zero")]
    Degenerate { surname: String },
    #[error("census table is empty or has zero total count")]
    Empty,
}

/// One percentage cell of the census table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Pct {
    Known(f64),
    /// Cell published as `(S)`.
    Suppressed,
}

impl Pct {
    pub fn value(self) -> Option<f64> {
        match self {
            Pct::Known(v) => Some(v),
            Pct::Suppressed => None,
        }
    }
}

/// One census row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurnameRecord {
    /// Uppercase surname.
    pub surname: String,
    pub count: u64,
    /// Indexed by [`Race::index`].
    pub races: [Pct; 5],
    /// Multiracial share; `None` once the column has been dropped.
    pub two_plus: Option<Pct>,
}

impl SurnameRecord {
    pub fn pct(&self, race: Race) -> Pct {
        self.races[race.index()]
    }

    /// Races whose cell was suppressed.
    pub fn suppressed(&self) -> Vec<Race> {
        Race::ALL
            .into_iter()
            .filter(|r| self.races[r.index()] == Pct::Suppressed)
            .collect()
    }

    fn cells(&self) -> impl Iterator<Item = Pct> + '_ {
        self.races.iter().copied().chain(self.two_plus)
    }

    pub fn is_fully_known(&self) -> bool {
        self.cells().all(|c| c != Pct::Suppressed)
    }

    /// Sum over every known cell, including the multiracial column when present.
    pub fn known_sum(&self) -> f64 {
        self.cells().filter_map(Pct::value).sum()
    }

    /// The five race shares as plain numbers (suppressed cells read as zero).
    pub fn race_vector(&self) -> [f64; 5] {
        self.races.map(|c| c.value().unwrap_or(0.0))
    }
}

/// Surnames ranked by `Pr(name | race)` for one race.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RacePosterior {
    pub race: Race,
    pub ranked: Vec<RankedSurname>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSurname {
    pub surname: String,
    pub posterior: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Name,
    Count,
    Race(Race),
    TwoPlus,
    Ignored,
}

fn classify_header(name: &str) -> Option<Column> {
    let name = name.trim().to_ascii_lowercase();
    match name.as_str() {
        "name" => Some(Column::Name),
        "count" => Some(Column::Count),
        MULTIRACE_COLUMN => Some(Column::TwoPlus),
        n if IGNORED_COLUMNS.contains(&n) => Some(Column::Ignored),
        n => Race::ALL
            .into_iter()
            .find(|r| r.census_column() == n)
            .map(Column::Race),
    }
}

/// Read a census surname table (plain or `.gz`) in file order.
///
/// Header order does not matter. `rank`, `prop100k` and `cum_prop100k` from the
/// published file are accepted and ignored; any other unknown column is a schema error.
pub fn parse_census(path: &Path) -> Result<Vec<SurnameRecord>, CensusError> {
    let io_err = |source| CensusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    parse_census_reader(reader)
}

pub fn parse_census_reader<R: Read>(reader: R) -> Result<Vec<SurnameRecord>, CensusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| CensusError::Schema(e.to_string()))?
        .clone();
    let mut columns = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        match classify_header(h) {
            Some(c) => {
                if c != Column::Ignored && columns.contains(&c) {
                    return Err(CensusError::Schema(format!("duplicate column `{h}`")));
                }
                columns.push(c);
            }
            None => return Err(CensusError::Schema(format!("unknown column `{h}`"))),
        }
    }
    let required = [Column::Name, Column::Count, Column::TwoPlus]
        .into_iter()
        .chain(Race::ALL.into_iter().map(Column::Race));
    for c in required {
        if !columns.contains(&c) {
            return Err(CensusError::Schema(format!("missing column {c:?}")));
        }
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CensusError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != columns.len() {
            return Err(CensusError::Parse {
                line,
                message: format!("expected {} columns, found {}", columns.len(), row.len()),
            });
        }
        let mut surname = String::new();
        let mut count = 0u64;
        let mut races = [Pct::Known(0.0); 5];
        let mut two_plus = Pct::Known(0.0);
        for (col, cell) in columns.iter().zip(row.iter()) {
            match col {
                Column::Name => surname = cell.to_ascii_uppercase(),
                Column::Count => {
                    count = cell.replace(',', "").parse().map_err(|_| CensusError::Parse {
                        line,
                        message: format!("non-numeric count `{cell}`"),
                    })?
                }
                Column::Race(r) => races[r.index()] = parse_pct(cell, line)?,
                Column::TwoPlus => two_plus = parse_pct(cell, line)?,
                Column::Ignored => {}
            }
        }
        if surname.is_empty() {
            return Err(CensusError::Parse {
                line,
                message: "empty surname".into(),
            });
        }
        out.push(SurnameRecord {
            surname,
            count,
            races,
            two_plus: Some(two_plus),
        });
    }
    Ok(out)
}

fn parse_pct(cell: &str, line: u64) -> Result<Pct, CensusError> {
    if cell == SUPPRESSED_MARK {
        return Ok(Pct::Suppressed);
    }
    let v: f64 = cell.parse().map_err(|_| CensusError::Parse {
        line,
        message: format!("non-numeric percentage `{cell}`"),
    })?;
    if !(0.0..=100.0).contains(&v) {
        return Err(CensusError::Parse {
            line,
            message: format!("percentage {v} outside [0, 100]"),
        });
    }
    Ok(Pct::Known(v))
}

/// Fill every suppressed cell with an equal share of what is missing from 100%.
pub fn impute_suppressed(record: &SurnameRecord) -> Result<SurnameRecord, CensusError> {
    let missing = record.cells().filter(|c| *c == Pct::Suppressed).count();
    let sum = record.known_sum();
    let slack = if missing == 0 {
        ROUNDING_TOLERANCE
    } else {
        FILE_SUM_TOLERANCE
    };
    if sum > 100.0 + slack {
        return Err(CensusError::Integrity {
            surname: record.surname.clone(),
            sum,
        });
    }
    if missing == 0 {
        return Ok(record.clone());
    }
    let fill = ((100.0 - sum) / missing as f64).max(0.0);
    let fill_cell = |c: Pct| match c {
        Pct::Suppressed => Pct::Known(fill),
        known => known,
    };
    Ok(SurnameRecord {
        surname: record.surname.clone(),
        count: record.count,
        races: record.races.map(fill_cell),
        two_plus: record.two_plus.map(fill_cell),
    })
}

/// Drop the multiracial column and rescale the five races to sum to 100.
pub fn drop_multirace_renormalize(record: &SurnameRecord) -> Result<SurnameRecord, CensusError> {
    if !record.is_fully_known() {
        return Err(CensusError::NotImputed {
            surname: record.surname.clone(),
        });
    }
    let values = record.race_vector();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(CensusError::Degenerate {
            surname: record.surname.clone(),
        });
    }
    Ok(SurnameRecord {
        surname: record.surname.clone(),
        count: record.count,
        races: values.map(|v| Pct::Known(v / total * 100.0)),
        two_plus: None,
    })
}

/// `Pr(name | race)` for every record, row-aligned with the input.
fn posterior_matrix(records: &[SurnameRecord]) -> Result<Vec<[f64; 5]>, CensusError> {
    let total: f64 = records.iter().map(|r| r.count as f64).sum();
    if records.is_empty() || total <= 0.0 {
        return Err(CensusError::Empty);
    }
    let mut joint = Vec::with_capacity(records.len());
    let mut marginal = [0.0f64; 5];
    for r in records {
        if !r.is_fully_known() {
            return Err(CensusError::NotImputed {
                surname: r.surname.clone(),
            });
        }
        let prior = r.count as f64 / total;
        let row = r.race_vector().map(|pct| pct / 100.0 * prior);
        for (m, j) in marginal.iter_mut().zip(row) {
            *m += j;
        }
        joint.push(row);
    }
    Ok(joint
        .into_iter()
        .map(|row| {
            let mut out = [0.0; 5];
            for i in 0..5 {
                out[i] = if marginal[i] > 0.0 { row[i] / marginal[i] } else { 0.0 };
            }
            out
        })
        .collect())
}

fn rank(race: Race, mut ranked: Vec<RankedSurname>) -> RacePosterior {
    ranked.sort_by(|a, b| {
        b.posterior
            .total_cmp(&a.posterior)
            .then(b.count.cmp(&a.count))
            .then_with(|| a.surname.cmp(&b.surname))
    });
    RacePosterior { race, ranked }
}

/// Rank every surname by `Pr(name | race)` for each of the five races.
///
/// Records must already be imputed and renormalized.
pub fn compute_posteriors(
    records: &[SurnameRecord],
) -> Result<BTreeMap<Race, RacePosterior>, CensusError> {
    let matrix = posterior_matrix(records)?;
    Ok(Race::ALL
        .into_iter()
        .map(|race| {
            let ranked = records
                .iter()
                .zip(&matrix)
                .map(|(r, p)| RankedSurname {
                    surname: r.surname.clone(),
                    posterior: p[race.index()],
                    count: r.count,
                })
                .collect();
            (race, rank(race, ranked))
        })
        .collect())
}

/// Race whose posterior is largest for the given row; ties go to the earlier race.
fn dominant_race(row: &[f64; 5]) -> Race {
    let mut best = 0;
    for i in 1..5 {
        if row[i] > row[best] {
            best = i;
        }
    }
    Race::ALL[best]
}

/// Per-race rankings where each surname is listed only under the race for
/// which its `Pr(name | race)` is largest.
///
/// Posterior values are those of [`compute_posteriors`]; only membership differs.
/// Without this step very common surnames such as Smith or Johnson lead the
/// White and Native American lists as well as the Black one.
pub fn exclusive_rankings(
    records: &[SurnameRecord],
) -> Result<BTreeMap<Race, RacePosterior>, CensusError> {
    let matrix = posterior_matrix(records)?;
    let mut buckets: BTreeMap<Race, Vec<RankedSurname>> =
        Race::ALL.into_iter().map(|r| (r, Vec::new())).collect();
    for (r, p) in records.iter().zip(&matrix) {
        let race = dominant_race(p);
        buckets.get_mut(&race).expect("all races present").push(RankedSurname {
            surname: r.surname.clone(),
            posterior: p[race.index()],
            count: r.count,
        });
    }
    Ok(buckets
        .into_iter()
        .map(|(race, ranked)| (race, rank(race, ranked)))
        .collect())
}

pub fn top_k(posterior: &RacePosterior, k: usize) -> Vec<String> {
    posterior
        .ranked
        .iter()
        .take(k)
        .map(|r| r.surname.clone())
        .collect()
}

/// Result of running the full curation pipeline over a parsed census table.
#[derive(Debug, Clone)]
pub struct Curation {
    /// Original rows, keyed by surname, for reporting raw percentages.
    pub raw: HashMap<String, SurnameRecord>,
    /// Imputed and renormalized rows that entered the ranking.
    pub cleaned: Vec<SurnameRecord>,
    /// Rows left out, with the reason.
    pub excluded: Vec<(String, String)>,
    pub posteriors: BTreeMap<Race, RacePosterior>,
    pub curated: BTreeMap<Race, RacePosterior>,
}

/// Impute, drop the multiracial column, renormalize and rank.
///
/// The census aggregate row and degenerate rows are excluded and logged.
pub fn curate(records: Vec<SurnameRecord>) -> Result<Curation, CensusError> {
    let mut cleaned = Vec::with_capacity(records.len());
    let mut excluded = Vec::new();
    for r in &records {
        if r.surname == AGGREGATE_ROW {
            log::info!("excluding census aggregate row `{AGGREGATE_ROW}`");
            excluded.push((r.surname.clone(), "aggregate row".to_string()));
            continue;
        }
        let imputed = impute_suppressed(r)?;
        match drop_multirace_renormalize(&imputed) {
            Ok(rec) => cleaned.push(rec),
            Err(e @ CensusError::Degenerate { .. }) => {
                log::warn!("{e}; record excluded");
                excluded.push((r.surname.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let posteriors = compute_posteriors(&cleaned)?;
    let curated = exclusive_rankings(&cleaned)?;
    let raw = records
        .into_iter()
        .map(|r| (r.surname.clone(), r))
        .collect();
    Ok(Curation {
        raw,
        cleaned,
        excluded,
        posteriors,
        curated,
    })
}

/// Write `rank,surname,posterior,count` for the first `k` entries.
pub fn write_ranked_csv<W: std::io::Write>(
    out: W,
    posterior: &RacePosterior,
    k: usize,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "surname", "posterior", "count"])?;
    for (i, r) in posterior.ranked.iter().take(k).enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.surname.clone(),
            format!("{:e}", r.posterior),
            r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "name,count,pctapi,pctblack,pcthispanic,pctaian,pctwhite,pct2prace\n";

    fn parse(body: &str) -> Result<Vec<SurnameRecord>, CensusError> {
        parse_census_reader(format!("{HEADER}{body}").as_bytes())
    }

    fn record(name: &str, count: u64, pcts: [f64; 5], two_plus: f64) -> SurnameRecord {
        SurnameRecord {
            surname: name.into(),
            count,
            races: pcts.map(Pct::Known),
            two_plus: Some(Pct::Known(two_plus)),
        }
    }

    #[test]
    fn parses_smith_row() {
        let recs = parse("SMITH,2442977,0.5,23.11,2.4,0.89,70.9,2.19\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].count, 2_442_977);
        assert_eq!(recs[0].pct(Race::White), Pct::Known(70.90));
        assert!(recs[0].suppressed().is_empty());
    }

    #[test]
    fn parses_suppressed_cells() {
        let recs = parse("DORIOTT,100,(S),0.00,(S),0.00,89.00,5.00\n").unwrap();
        assert_eq!(recs[0].suppressed(), vec![Race::Asian, Race::Hispanic]);
    }

    #[test]
    fn header_order_is_irrelevant() {
        let text = "pctwhite,name,pct2prace,count,pctaian,pcthispanic,pctblack,pctapi,rank\n\
                    70.9,smith,2.19,2442977,0.89,2.4,23.11,0.5,1\n";
        let recs = parse_census_reader(text.as_bytes()).unwrap();
        assert_eq!(recs[0].surname, "SMITH");
        assert_eq!(recs[0].pct(Race::Black), Pct::Known(23.11));
    }

    #[test]
    fn empty_table_is_empty_list() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_name_their_line() {
        match parse("SMITH,2442977,0.5,23.11,2.4,0.89,70.9,2.19\nJONES,12,1\n") {
            Err(CensusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse("SMITH,lots,0.5,23.11,2.4,0.89,70.9,2.19\n") {
            Err(CensusError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("count"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_header_is_schema_error() {
        let text = "name,count,pctapi,pctblack,pcthispanic,pctaian,pctwhite,pct2prace,shoe_size\n";
        assert!(matches!(
            parse_census_reader(text.as_bytes()),
            Err(CensusError::Schema(_))
        ));
        assert!(matches!(
            parse_census_reader("name,count\n".as_bytes()),
            Err(CensusError::Schema(_))
        ));
    }

    #[test]
    fn doriott_imputation() {
        let recs = parse("DORIOTT,100,(S),0.00,(S),0.00,89.00,5.00\n").unwrap();
        let imp = impute_suppressed(&recs[0]).unwrap();
        assert_eq!(imp.pct(Race::Asian), Pct::Known(3.0));
        assert_eq!(imp.pct(Race::Hispanic), Pct::Known(3.0));
        assert!((imp.known_sum() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn imputation_identity_and_forced_zero() {
        let r = record("DONLEA", 100, [0.0, 0.0, 6.0, 0.0, 94.0], 0.0);
        assert_eq!(impute_suppressed(&r).unwrap(), r);

        let mut full = record("FULL", 100, [0.0, 0.0, 60.0, 0.0, 40.0], 0.0);
        full.races[0] = Pct::Suppressed;
        full.races[1] = Pct::Suppressed;
        let imp = impute_suppressed(&full).unwrap();
        assert_eq!(imp.pct(Race::Asian), Pct::Known(0.0));
        assert_eq!(imp.pct(Race::Black), Pct::Known(0.0));
    }

    #[test]
    fn imputation_rejects_excess_known_mass() {
        let mut r = record("OVER", 10, [50.0, 50.0, 10.0, 0.0, 0.0], 0.0);
        r.races[3] = Pct::Suppressed;
        assert!(matches!(
            impute_suppressed(&r),
            Err(CensusError::Integrity { .. })
        ));
    }

    #[test]
    fn renormalize_doriott_matches_hand_values() {
        let recs = parse("DORIOTT,100,(S),0.00,(S),0.00,89.00,5.00\n").unwrap();
        let r = drop_multirace_renormalize(&impute_suppressed(&recs[0]).unwrap()).unwrap();
        let expected = [300.0 / 95.0, 0.0, 300.0 / 95.0, 0.0, 8900.0 / 95.0];
        for (got, want) in r.race_vector().iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(r.two_plus.is_none());
    }

    #[test]
    fn renormalize_cases() {
        let r = record("X", 1, [20.0, 20.0, 20.0, 20.0, 10.0], 10.0);
        let v = drop_multirace_renormalize(&r).unwrap().race_vector();
        for (got, want) in v.iter().zip([200.0 / 9.0, 200.0 / 9.0, 200.0 / 9.0, 200.0 / 9.0, 100.0 / 9.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        let r = record("Y", 1, [10.0, 20.0, 30.0, 15.0, 25.0], 0.0);
        assert_eq!(drop_multirace_renormalize(&r).unwrap().race_vector(), r.race_vector());

        let r = record("Z", 1, [0.0; 5], 100.0);
        assert!(matches!(
            drop_multirace_renormalize(&r),
            Err(CensusError::Degenerate { .. })
        ));
        let mut r = record("S", 1, [0.0; 5], 100.0);
        r.races[0] = Pct::Suppressed;
        assert!(matches!(
            drop_multirace_renormalize(&r),
            Err(CensusError::NotImputed { .. })
        ));
    }

    #[test]
    fn singleton_posterior_is_one() {
        let r = drop_multirace_renormalize(&record("ONLY", 7, [10.0, 20.0, 30.0, 15.0, 25.0], 0.0)).unwrap();
        let post = compute_posteriors(&[r]).unwrap();
        for race in Race::ALL {
            assert_eq!(post[&race].ranked[0].posterior, 1.0);
        }
    }

    #[test]
    fn ties_break_by_count_then_name() {
        // Same joint mass: posterior ties only when pct*count ties.
        let recs = vec![
            drop_multirace_renormalize(&record("BETA", 100, [50.0, 0.0, 0.0, 0.0, 50.0], 0.0)).unwrap(),
            drop_multirace_renormalize(&record("ALPHA", 100, [50.0, 0.0, 0.0, 0.0, 50.0], 0.0)).unwrap(),
            drop_multirace_renormalize(&record("GAMMA", 200, [25.0, 0.0, 0.0, 0.0, 75.0], 0.0)).unwrap(),
        ];
        let post = compute_posteriors(&recs).unwrap();
        assert_eq!(top_k(&post[&Race::Asian], 3), ["GAMMA", "ALPHA", "BETA"]);
        assert_eq!(top_k(&post[&Race::Asian], 10).len(), 3);
    }

    #[test]
    fn compute_posteriors_rejects_empty() {
        assert!(matches!(compute_posteriors(&[]), Err(CensusError::Empty)));
    }

    #[test]
    fn curate_drops_aggregate_and_degenerate_rows() {
        let recs = parse(
            "SMITH,2442977,0.5,23.11,2.4,0.89,70.9,2.19\n\
             ODD,100,0,0,0,0,0,100\n\
             ALL OTHER NAMES,29312001,7.97,8.53,13.67,0.86,66.65,2.32\n",
        )
        .unwrap();
        let c = curate(recs).unwrap();
        assert_eq!(c.cleaned.len(), 1);
        assert_eq!(c.excluded.len(), 2);
        assert_eq!(c.raw.len(), 3);
    }
}
