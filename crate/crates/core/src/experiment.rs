//! The 2×5 factorial Trust Game experiments: enumeration, execution,
//! persistence of raw outcomes and matrix exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{CompletionDistribution, PromptStyle, ScoringClient};
use crate::probe::GenderSurnamePair;
use crate::race::{Gender, Group, Race};
use crate::template::TemplateSet;
use crate::trust_game::{predict_investment, verify_prompt, GameSpec, Player};

pub const DEFAULT_PAIRS_PER_GROUP: usize = 17;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const OUTCOMES_DIR: &str = "outcomes";
pub const EXPORTS_DIR: &str = "exports";

/// The two investor groups used by default: White men and Asian women.
pub fn default_investors() -> Vec<Group> {
    vec![Group::new(Race::White, Gender::M), Group::new(Race::Asian, Gender::F)]
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("design error: {0}")]
    Design(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("run directory {0} is locked by another invocation (remove {LOCK_FILE} if stale)")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub investor_group: Group,
    pub trustee_groups: Vec<Group>,
    pub pairs_per_group: usize,
    pub amt_a: u32,
    pub amt_b: u32,
    pub style: PromptStyle,
    pub model_id: String,
    pub run_id: String,
}

impl ExperimentDesign {
    pub fn new(
        investor_group: Group,
        pairs_per_group: usize,
        amt_a: u32,
        amt_b: u32,
        style: PromptStyle,
        model_id: impl Into<String>,
        run_id: impl Into<String>,
    ) -> Result<Self, ExperimentError> {
        if pairs_per_group < 2 {
            return Err(ExperimentError::Design(format!(
                "need at least two pairs per group, got {pairs_per_group}"
            )));
        }
        Ok(ExperimentDesign {
            investor_group,
            trustee_groups: Group::all(),
            pairs_per_group,
            amt_a,
            amt_b,
            style,
            model_id: model_id.into(),
            run_id: run_id.into(),
        })
    }

    /// Identifier used for file names, e.g. `white_M`.
    pub fn id(&self) -> String {
        self.investor_group.slug()
    }

    pub fn games_per_cell(&self) -> usize {
        self.pairs_per_group * self.pairs_per_group - self.pairs_per_group
    }

    pub fn total_games(&self) -> usize {
        self.games_per_cell() * self.trustee_groups.len()
    }
}

/// One scheduled game with its position in the investor × trustee matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedGame {
    pub i: usize,
    pub j: usize,
    pub spec: GameSpec,
}

/// All investor/trustee index pairs except the diagonal `i == j`.
///
/// The same 17 index pairs are removed from every cell, so that same-group
/// cells never pit a name against itself and all cells stay balanced.
pub fn enumerate_games(
    investors: &[Player],
    trustees: &[Player],
    pairs_per_group: usize,
    amt_a: u32,
    amt_b: u32,
    style: PromptStyle,
) -> Result<Vec<IndexedGame>, ExperimentError> {
    for (role, list) in [("investor", investors), ("trustee", trustees)] {
        if list.len() != pairs_per_group {
            return Err(ExperimentError::Design(format!(
                "{role} list has {} pairs, expected {pairs_per_group}",
                list.len()
            )));
        }
    }
    let mut games = Vec::with_capacity(pairs_per_group * pairs_per_group - pairs_per_group);
    for (i, investor) in investors.iter().enumerate() {
        for (j, trustee) in trustees.iter().enumerate() {
            if i == j {
                continue;
            }
            let spec = GameSpec::new(investor.clone(), trustee.clone(), amt_a, amt_b, style)
                .map_err(|e| ExperimentError::Design(format!("game ({i}, {j}): {e}")))?;
            games.push(IndexedGame { i, j, spec });
        }
    }
    Ok(games)
}

/// Players grouped by (race, gender) in pair-file order.
pub fn players_by_group(pairs: &[GenderSurnamePair]) -> BTreeMap<Group, Vec<Player>> {
    let mut out: BTreeMap<Group, Vec<Player>> = BTreeMap::new();
    for pair in pairs {
        let player = Player::from_pair(pair);
        out.entry(player.group).or_default().push(player);
    }
    out
}

/// The roster for one design: the first `pairs_per_group` players of each group.
pub fn roster(
    pairs: &[GenderSurnamePair],
    pairs_per_group: usize,
) -> Result<BTreeMap<Group, Vec<Player>>, ExperimentError> {
    let mut by_group = players_by_group(pairs);
    for group in Group::all() {
        let list = by_group.entry(group).or_default();
        if list.len() < pairs_per_group {
            return Err(ExperimentError::Config(format!(
                "pair file has {} pairs for {group}, need {pairs_per_group}",
                list.len()
            )));
        }
        list.truncate(pairs_per_group);
    }
    Ok(by_group)
}

/// One persisted game result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub experiment: String,
    pub trustee_group: Group,
    pub i: usize,
    pub j: usize,
    pub investor: Player,
    pub trustee: Player,
    pub distribution: CompletionDistribution,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFailure {
    pub experiment: String,
    pub trustee_group: Group,
    pub i: usize,
    pub j: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub trustee_group: Group,
    pub outcomes: Vec<OutcomeRecord>,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
}

impl CellResult {
    pub fn from_outcomes(trustee_group: Group, outcomes: Vec<OutcomeRecord>) -> Self {
        let values: Vec<f64> = outcomes.iter().map(|o| o.mean).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        CellResult {
            trustee_group,
            outcomes,
            mean,
            sd,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.mean).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub design: ExperimentDesign,
    /// Ten cells in `Group::all()` order.
    pub cells: Vec<CellResult>,
    pub failures: Vec<GameFailure>,
}

impl ExperimentResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
            && self
                .cells
                .iter()
                .all(|c| c.outcomes.len() == self.design.games_per_cell())
    }

    pub fn records(&self) -> impl Iterator<Item = &OutcomeRecord> {
        self.cells.iter().flat_map(|c| c.outcomes.iter())
    }

    /// Group cell records back into an experiment (used when reloading a run).
    pub fn from_records(
        design: ExperimentDesign,
        records: Vec<OutcomeRecord>,
        failures: Vec<GameFailure>,
    ) -> Self {
        let mut by_cell: BTreeMap<Group, Vec<OutcomeRecord>> = BTreeMap::new();
        for r in records {
            by_cell.entry(r.trustee_group).or_default().push(r);
        }
        let cells = design
            .trustee_groups
            .iter()
            .map(|&g| {
                let mut outcomes = by_cell.remove(&g).unwrap_or_default();
                outcomes.sort_by_key(|o| (o.i, o.j));
                CellResult::from_outcomes(g, outcomes)
            })
            .collect();
        ExperimentResult {
            design,
            cells,
            failures,
        }
    }
}

/// Play every game of the design. Games run concurrently on the client's
/// pool; failures are recorded rather than aborting the run.
///
/// With `gate_on_verification`, a pairing that fails the probing questions is
/// recorded as a failed game instead of being played.
pub fn run_experiment(
    design: &ExperimentDesign,
    roster: &BTreeMap<Group, Vec<Player>>,
    client: &ScoringClient,
    templates: &TemplateSet,
    gate_on_verification: bool,
) -> Result<ExperimentResult, ExperimentError> {
    let investors = roster
        .get(&design.investor_group)
        .ok_or_else(|| ExperimentError::Config(format!("no pairs for investor group {}", design.investor_group)))?;
    let mut jobs = Vec::with_capacity(design.total_games());
    for &group in &design.trustee_groups {
        let trustees = roster
            .get(&group)
            .ok_or_else(|| ExperimentError::Config(format!("no pairs for trustee group {group}")))?;
        for game in enumerate_games(
            investors,
            trustees,
            design.pairs_per_group,
            design.amt_a,
            design.amt_b,
            design.style,
        )? {
            jobs.push((group, game));
        }
    }
    templates
        .validate()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let experiment = design.id();
    let results = client.map_parallel(&jobs, |(_, game)| {
        if gate_on_verification {
            let report = verify_prompt(client, templates, &game.spec).map_err(|e| e.to_string())?;
            if !report.pass {
                return Err("pairing failed the probing-question verification".to_string());
            }
        }
        predict_investment(client, templates, &game.spec).map_err(|e| e.to_string())
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((group, game), result) in jobs.into_iter().zip(results) {
        match result {
            Ok(outcome) => records.push(OutcomeRecord {
                experiment: experiment.clone(),
                trustee_group: group,
                i: game.i,
                j: game.j,
                investor: outcome.spec.investor,
                trustee: outcome.spec.trustee,
                distribution: outcome.distribution,
                mean: outcome.mean,
            }),
            Err(error) => {
                log::warn!("{experiment} {group} game ({}, {}) failed: {error}", game.i, game.j);
                failures.push(GameFailure {
                    experiment: experiment.clone(),
                    trustee_group: group,
                    i: game.i,
                    j: game.j,
                    error,
                });
            }
        }
    }
    Ok(ExperimentResult::from_records(design.clone(), records, failures))
}

/// Write records as JSON lines, in cell then (i, j) order. Floats keep their
/// shortest round-trip representation, so a reload is bit-identical.
pub fn write_outcomes(path: &Path, records: &[&OutcomeRecord]) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut out = BufWriter::new(file);
        for r in records {
            let line = serde_json::to_string(r).expect("outcome records serialize");
            writeln!(out, "{line}").map_err(io_err(&tmp))?;
        }
        out.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRecord>, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ExperimentError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn outcomes_path(run_dir: &Path, experiment: &str) -> PathBuf {
    run_dir.join(OUTCOMES_DIR).join(format!("{experiment}.jsonl"))
}

/// Investor × trustee matrix of mean investments, 4 decimals, diagonal empty.
pub fn export_matrix(cell: &CellResult, investors: &[Player], trustees: &[Player]) -> String {
    let lookup: BTreeMap<(usize, usize), f64> = cell.outcomes.iter().map(|o| ((o.i, o.j), o.mean)).collect();
    let mut out = String::from("investor");
    for t in trustees {
        write!(out, ",{}", t.display).unwrap();
    }
    out.push('\n');
    for (i, inv) in investors.iter().enumerate() {
        out.push_str(&inv.display);
        for j in 0..trustees.len() {
            out.push(',');
            if let Some(v) = lookup.get(&(i, j)) {
                write!(out, "{v:.4}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Players of one group reconstructed from the records, ordered by index.
pub fn players_from_records(cell: &CellResult, investor_side: bool) -> Vec<Player> {
    let mut by_index: BTreeMap<usize, Player> = BTreeMap::new();
    for o in &cell.outcomes {
        if investor_side {
            by_index.entry(o.i).or_insert_with(|| o.investor.clone());
        } else {
            by_index.entry(o.j).or_insert_with(|| o.trustee.clone());
        }
    }
    by_index.into_values().collect()
}

/// Marker file preventing two invocations from using one run directory.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(ExperimentError::Locked(run_dir.to_path_buf())),
            Err(e) => Err(ExperimentError::Io { path, source: e }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub id: String,
    pub design: ExperimentDesign,
    pub outcome_file: String,
    pub outcomes: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    pub backend_identity: String,
    pub pair_file: String,
    pub pair_file_sha256: String,
    /// Effective configuration at launch.
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub experiments: Vec<ExperimentEntry>,
    pub failures: Vec<GameFailure>,
    pub upstream_calls: usize,
    pub complete: bool,
}

impl RunManifest {
    pub fn write(&self, run_dir: &Path) -> Result<(), ExperimentError> {
        let path = run_dir.join(MANIFEST_FILE);
        let tmp = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text + "\n").map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn read(run_dir: &Path) -> Result<Self, ExperimentError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Record {
            path,
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Reload every experiment of a run from its raw outcome files.
pub fn load_run(run_dir: &Path) -> Result<(RunManifest, Vec<ExperimentResult>), ExperimentError> {
    let manifest = RunManifest::read(run_dir)?;
    let mut experiments = Vec::new();
    for entry in &manifest.experiments {
        let records = read_outcomes(&run_dir.join(&entry.outcome_file))?;
        let failures = manifest
            .failures
            .iter()
            .filter(|f| f.experiment == entry.id)
            .cloned()
            .collect();
        experiments.push(ExperimentResult::from_records(entry.design.clone(), records, failures));
    }
    Ok((manifest, experiments))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn players(group: Group, n: usize) -> Vec<Player> {
        (0..n)
            .map(|k| {
                Player::from_pair(&GenderSurnamePair::new(
                    &format!("{}{k}", group.race.key().to_ascii_uppercase()),
                    group.gender,
                    group.race,
                    BTreeMap::new(),
                ))
            })
            .collect()
    }

    #[test]
    fn games_per_cell_formula() {
        let d = ExperimentDesign::new(default_investors()[0], 17, 10, 2, PromptStyle::BasePhi, "m", "r").unwrap();
        assert_eq!(d.games_per_cell(), 272);
        assert_eq!(d.trustee_groups.len(), 10);
        assert_eq!(d.total_games(), 2720);
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let g = Group::new(Race::Black, Gender::F);
        for n in 2..=17 {
            let ps = players(g, n);
            let games = enumerate_games(&ps, &ps, n, 10, 2, PromptStyle::BasePhi).unwrap();
            let mut brute = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        brute.push((i, j));
                    }
                }
            }
            let got: Vec<_> = games.iter().map(|g| (g.i, g.j)).collect();
            assert_eq!(got, brute);
            assert_eq!(games.len(), n * n - n);
            assert!(games.iter().all(|g| g.spec.investor.display != g.spec.trustee.display));
        }
    }

    #[test]
    fn wrong_list_length_is_a_design_error() {
        let g = Group::new(Race::Black, Gender::F);
        let err = enumerate_games(&players(g, 16), &players(g, 17), 17, 10, 2, PromptStyle::BasePhi);
        assert!(matches!(err, Err(ExperimentError::Design(_))));
    }

    #[test]
    fn matrix_export_leaves_diagonal_empty() {
        let g = Group::new(Race::White, Gender::M);
        let ps = players(g, 3);
        let outcomes = enumerate_games(&ps, &ps, 3, 10, 2, PromptStyle::BasePhi)
            .unwrap()
            .into_iter()
            .map(|game| OutcomeRecord {
                experiment: "white_M".into(),
                trustee_group: g,
                i: game.i,
                j: game.j,
                investor: game.spec.investor,
                trustee: game.spec.trustee,
                distribution: CompletionDistribution { entries: vec![] },
                mean: 4.46349,
            })
            .collect();
        let cell = CellResult::from_outcomes(g, outcomes);
        let csv = export_matrix(&cell, &ps, &ps);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "investor,Mr. White0,Mr. White1,Mr. White2");
        assert_eq!(lines[1], "Mr. White0,,4.4635,4.4635");
        assert_eq!(lines[2], "Mr. White1,4.4635,,4.4635");
        assert_eq!(players_from_records(&cell, true), ps);
        assert!((cell.mean - 4.46349).abs() < 1e-12);
        assert!(cell.sd.abs() < 1e-12);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(ExperimentError::Locked(_))));
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
