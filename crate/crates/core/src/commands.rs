//! The CLI subcommands as library functions. Each validates its whole
//! configuration before creating any file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backend::ScoringClient;
use crate::census::{curate, parse_census, Curation, Pct, RacePosterior};
use crate::config::{AnalysisSettings, Needs, RunConfig};
use crate::error::Error;
use crate::experiment::{
    enumerate_games, export_matrix, load_run, outcomes_path, roster, run_experiment,
    write_outcomes, ExperimentDesign, ExperimentEntry, ExperimentResult, RunLock, RunManifest, EXPORTS_DIR,
    OUTCOMES_DIR,
};
use crate::plot::InteractionPlot;
use crate::probe::{
    build_seed_list, probe_seed_list, race_phrases, read_pair_file, select_pairs, write_pair_file, GenderSurnamePair,
    ProbeError,
};
use crate::race::{Gender, Group, Race};
use crate::stats::{gender_contrasts, interaction_summary, two_way_anova, AnovaTable, CellSummary, GenderContrast};
use crate::trust_game::verify_prompt;

pub const CURATED_DIR: &str = "curated";
pub const PAIRS_DIR: &str = "pairs";
pub const VERIFICATION_DIR: &str = "verification";
pub const ANALYSIS_DIR: &str = "analysis";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.md";
/// Rows in the top-surnames summary table.
pub const SUMMARY_TOP: usize = 3;

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(Error::io(path))
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn model_slug(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn load_pairs(path: &Path) -> Result<Vec<GenderSurnamePair>, Error> {
    let file = File::open(path).map_err(Error::io(path))?;
    Ok(read_pair_file(file)?)
}

// ---------------------------------------------------------------- curate

#[derive(Debug, Clone, Serialize)]
pub struct CurateReport {
    pub files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub top: BTreeMap<Race, Vec<String>>,
    pub surnames_ranked: usize,
    pub excluded: usize,
}

fn pct_cell(p: Pct) -> String {
    match p {
        Pct::Known(v) => format!("{v}"),
        Pct::Suppressed => "(S)".to_string(),
    }
}

/// Top surnames per race with their census count and original composition.
fn summary_table(curation: &Curation, top: usize) -> String {
    let columns = [Race::Asian, Race::Black, Race::Hispanic, Race::NativeAmerican, Race::White];
    let mut out = String::from("race,rank,surname,count");
    for r in columns {
        write!(out, ",{}", r.census_column()).unwrap();
    }
    out.push('\n');
    for (race, posterior) in &curation.curated {
        for (rank, entry) in posterior.ranked.iter().take(top).enumerate() {
            write!(out, "{},{},{},{}", race.key(), rank + 1, entry.surname, entry.count).unwrap();
            let raw = curation.raw.get(&entry.surname);
            for r in columns {
                out.push(',');
                if let Some(rec) = raw {
                    out.push_str(&pct_cell(rec.pct(r)));
                }
            }
            out.push('\n');
        }
    }
    out
}

fn ranked_csv(posterior: &RacePosterior, k: usize) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    crate::census::write_ranked_csv(&mut buf, posterior, k).map_err(Error::csv("<memory>"))?;
    Ok(buf)
}

/// Rank surnames per race and write `curated/<race>.csv` plus `curated/summary.csv`.
pub fn cmd_curate(config: &RunConfig) -> Result<CurateReport, Error> {
    config.validate(Needs::Curate)?;
    let census = config.census_path.as_ref().expect("validated");
    let records = parse_census(census)?;
    let curation = curate(records)?;

    // Everything is computed before the first write, so failures leave no output.
    let k = config.curate.top_k;
    let mut outputs = Vec::new();
    for (race, posterior) in &curation.curated {
        outputs.push((format!("{}.csv", race.key()), ranked_csv(posterior, k)?));
    }
    let summary = summary_table(&curation, SUMMARY_TOP);

    let dir = config.output_dir.join(CURATED_DIR);
    create_dir(&dir)?;
    let mut files = Vec::new();
    for (name, bytes) in outputs {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(Error::io(&path))?;
        files.push(path);
    }
    let summary_file = dir.join("summary.csv");
    write_file(&summary_file, &summary)?;
    let top = curation
        .curated
        .iter()
        .map(|(race, p)| (*race, crate::census::top_k(p, SUMMARY_TOP)))
        .collect();
    log::info!(
        "ranked {} surnames, excluded {}",
        curation.cleaned.len(),
        curation.excluded.len()
    );
    Ok(CurateReport {
        files,
        summary_file,
        top,
        surnames_ranked: curation.cleaned.len(),
        excluded: curation.excluded.len(),
    })
}

// ---------------------------------------------------------------- probe

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub pair_file: PathBuf,
    pub probe_log: PathBuf,
    pub pairs_per_race: BTreeMap<Race, usize>,
    pub upstream_calls: usize,
}

fn read_name_list(path: &Path) -> Result<Vec<String>, Error> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Probe seed surnames with the model and keep the best-separated pairs.
///
/// The probe log is always written; the pair file only when every race has
/// enough qualifying pairs.
pub fn cmd_probe(config: &RunConfig) -> Result<ProbeReport, Error> {
    config.validate(Needs::Probe)?;
    let templates = config.templates()?;
    let backend = config.effective_backend()?;
    let style = backend.prompt_style;
    if style.answer_tokens().is_none() {
        return Err(ProbeError::Config(format!(
            "prompt style {style} cannot be probed; reuse the base model's pair file"
        ))
        .into());
    }
    let mut extras = BTreeMap::new();
    for (race, path) in &config.probe.extra_surnames {
        extras.insert(*race, read_name_list(path)?);
    }
    let census = config.census_path.as_ref().expect("validated");
    let curation = curate(parse_census(census)?)?;
    let client = ScoringClient::from_config(&backend)?;
    let phrases = race_phrases(&config.race_phrases);

    let mut log_entries = Vec::new();
    let mut selected = Vec::new();
    let mut shortfall = None;
    for race in Race::ALL {
        let posterior = &curation.curated[&race];
        let extra = extras.get(&race).cloned().unwrap_or_default();
        let seeds = build_seed_list(posterior, &extra, config.probe.seed_from_posterior);
        let (candidates, log) = probe_seed_list(&client, &templates, style, &seeds, &phrases)?;
        log_entries.extend(log);
        match select_pairs(race, &candidates, config.probe.pairs_per_gender) {
            Ok(pairs) => selected.extend(pairs),
            Err(e @ ProbeError::Shortfall { .. }) => {
                log::error!("{e}");
                shortfall.get_or_insert(e);
            }
            Err(e) => return Err(e.into()),
        }
    }

    let model = model_slug(&config.model_id());
    let log_path = config.output_dir.join(PAIRS_DIR).join(format!("{model}.probe_log.jsonl"));
    let mut log_text = String::new();
    for entry in &log_entries {
        log_text.push_str(&serde_json::to_string(entry).expect("log entries serialize"));
        log_text.push('\n');
    }
    write_file(&log_path, &log_text)?;
    if let Some(e) = shortfall {
        return Err(e.into());
    }

    let pair_path = config.output_dir.join(PAIRS_DIR).join(format!("{model}.csv"));
    let mut buf = Vec::new();
    write_pair_file(&mut buf, &selected).map_err(Error::csv(&pair_path))?;
    fs::write(&pair_path, buf).map_err(Error::io(&pair_path))?;
    let mut pairs_per_race = BTreeMap::new();
    for p in &selected {
        *pairs_per_race.entry(p.assigned_race).or_insert(0) += 1;
    }
    Ok(ProbeReport {
        pair_file: pair_path,
        probe_log: log_path,
        pairs_per_race,
        upstream_calls: client.upstream_calls(),
    })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub table: PathBuf,
    pub rows: usize,
    pub passed: usize,
    pub pass_rate: f64,
    pub pairings: usize,
    pub pairings_passed: usize,
}

/// Ask the probing questions for every game of the configured design
/// (or its first `limit` pairings) and tabulate one row per amount.
pub fn cmd_verify(config: &RunConfig, limit: Option<usize>) -> Result<VerifyReport, Error> {
    config.validate(Needs::Verify)?;
    let templates = config.templates()?;
    let backend = config.effective_backend()?;
    let investors = config.investor_groups()?;
    let pair_file = config.pair_file.as_ref().expect("validated");
    let players = roster(&load_pairs(pair_file)?, config.experiment.pairs_per_group)?;
    let client = ScoringClient::from_config(&backend)?;

    let e = &config.experiment;
    let mut specs = Vec::new();
    for inv in &investors {
        for trustee in Group::all() {
            for game in enumerate_games(&players[inv], &players[&trustee], e.pairs_per_group, e.amt_a, e.amt_b, backend.prompt_style)? {
                specs.push(game.spec);
            }
        }
    }
    if let Some(n) = limit {
        specs.truncate(n);
    }
    let reports = client.map_parallel(&specs, |spec| verify_prompt(&client, &templates, spec));

    let path = config
        .output_dir
        .join(VERIFICATION_DIR)
        .join(format!("{}.csv", model_slug(&config.model_id())));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "investor", "trustee", "amt", "q1_ok", "q2_ok", "q3_ok", "answer_q1", "answer_q2", "answer_q3",
        "expected_q1", "expected_q2", "expected_q3", "pass", "errors",
    ])
    .map_err(Error::csv(&path))?;
    let (mut rows, mut passed, mut pairings_passed) = (0, 0, 0);
    for report in reports {
        let report = report?;
        pairings_passed += report.pass as usize;
        for check in &report.per_amt {
            let opt = |v: Option<u32>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                report.spec.investor.display.clone(),
                report.spec.trustee.display.clone(),
                check.amt.to_string(),
                check.q1_ok.to_string(),
                check.q2_ok.to_string(),
                check.q3_ok.to_string(),
                opt(check.answers[0]),
                opt(check.answers[1]),
                opt(check.answers[2]),
                check.expected[0].to_string(),
                check.expected[1].to_string(),
                check.expected[2].to_string(),
                check.pass().to_string(),
                check.errors.join("; "),
            ])
            .map_err(Error::csv(&path))?;
            rows += 1;
            passed += check.pass() as usize;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Refused(e.to_string()))?;
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(&path, bytes).map_err(Error::io(&path))?;
    Ok(VerifyReport {
        table: path,
        rows,
        passed,
        pass_rate: if rows == 0 { 0.0 } else { passed as f64 / rows as f64 },
        pairings: specs.len(),
        pairings_passed,
    })
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub run_id: String,
    pub experiments: Vec<(String, usize)>,
    pub failures: usize,
    pub complete: bool,
    pub upstream_calls: usize,
}

/// Play every configured experiment and persist raw outcomes, matrix exports
/// and the run manifest under `output_dir`.
pub fn cmd_run(config: &RunConfig) -> Result<RunReport, Error> {
    config.validate(Needs::Run)?;
    let templates = config.templates()?;
    let backend = config.effective_backend()?;
    let investors = config.investor_groups()?;
    let pair_file = config.pair_file.as_ref().expect("validated");
    let players = roster(&load_pairs(pair_file)?, config.experiment.pairs_per_group)?;
    let pair_hash = sha256_file(pair_file)?;
    let model_id = config.model_id();
    let snapshot = config.snapshot();
    let run_id = {
        let mut h = Sha256::new();
        h.update(snapshot.to_string().as_bytes());
        h.update(pair_hash.as_bytes());
        hex::encode(h.finalize())[..12].to_string()
    };
    let e = &config.experiment;
    let designs = investors
        .iter()
        .map(|&g| ExperimentDesign::new(g, e.pairs_per_group, e.amt_a, e.amt_b, backend.prompt_style, &model_id, &run_id))
        .collect::<Result<Vec<_>, _>>()?;

    let run_dir = &config.output_dir;
    let _lock = RunLock::acquire(run_dir)?;
    let client = ScoringClient::from_config(&backend)?;
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        model_id,
        backend_identity: client.identity().to_string(),
        pair_file: pair_file.display().to_string(),
        pair_file_sha256: pair_hash,
        config: snapshot,
        started_at: now(),
        finished_at: None,
        experiments: designs
            .iter()
            .map(|d| ExperimentEntry {
                id: d.id(),
                design: d.clone(),
                outcome_file: format!("{OUTCOMES_DIR}/{}.jsonl", d.id()),
                outcomes: 0,
                expected: d.total_games(),
            })
            .collect(),
        failures: Vec::new(),
        upstream_calls: 0,
        complete: false,
    };
    manifest.write(run_dir)?;

    let mut summary = Vec::new();
    for (design, entry) in designs.iter().zip(manifest.experiments.iter_mut()) {
        log::info!("experiment {}: {} games", design.id(), design.total_games());
        let result = run_experiment(design, &players, &client, &templates, e.gate_on_verification)?;
        let records: Vec<_> = result.records().collect();
        write_outcomes(&outcomes_path(run_dir, &design.id()), &records)?;
        entry.outcomes = records.len();
        summary.push((design.id(), records.len()));
        export_cells(run_dir, &result, &players)?;
        manifest.failures.extend(result.failures.iter().cloned());
    }
    manifest.complete = manifest.failures.is_empty() && manifest.experiments.iter().all(|x| x.outcomes == x.expected);
    manifest.upstream_calls = client.upstream_calls();
    manifest.finished_at = Some(now());
    manifest.write(run_dir)?;
    Ok(RunReport {
        run_dir: run_dir.clone(),
        run_id,
        experiments: summary,
        failures: manifest.failures.len(),
        complete: manifest.complete,
        upstream_calls: manifest.upstream_calls,
    })
}

fn export_cells(
    run_dir: &Path,
    result: &ExperimentResult,
    players: &BTreeMap<Group, Vec<crate::trust_game::Player>>,
) -> Result<(), Error> {
    let dir = run_dir.join(EXPORTS_DIR).join(result.design.id());
    create_dir(&dir)?;
    let investors = &players[&result.design.investor_group];
    for cell in &result.cells {
        let csv = export_matrix(cell, investors, &players[&cell.trustee_group]);
        write_file(&dir.join(format!("{}.csv", cell.trustee_group.slug())), &csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, Serialize)]
pub struct EffectFlag {
    pub effect: String,
    pub f: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentAnalysis {
    pub id: String,
    pub investor: Group,
    pub complete: bool,
    pub observations: usize,
    pub cells: Vec<CellSummary>,
    pub anova: Option<AnovaTable>,
    /// Why the ANOVA was skipped, for incomplete runs.
    pub anova_skipped: Option<String>,
    pub flags: Vec<EffectFlag>,
    pub gender_contrasts: Vec<GenderContrast>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub run_id: String,
    pub model_id: String,
    pub alpha_anova: f64,
    pub alpha_posthoc: f64,
    pub experiments: Vec<ExperimentAnalysis>,
}

/// All statistics for one experiment, derived from its raw outcomes only.
pub fn analyze_experiment(result: &ExperimentResult, settings: &AnalysisSettings) -> Result<ExperimentAnalysis, Error> {
    let values: Vec<(Group, Vec<f64>)> = result.cells.iter().map(|c| (c.trustee_group, c.values())).collect();
    let cells: Vec<(Group, &[f64])> = values.iter().map(|(g, v)| (*g, v.as_slice())).collect();
    let summaries = interaction_summary(&cells)?;
    let observations: Vec<(Gender, Race, f64)> = values
        .iter()
        .flat_map(|(g, v)| v.iter().map(move |&y| (g.gender, g.race, y)))
        .collect();
    let (anova, anova_skipped) = match two_way_anova(&observations) {
        Ok(t) => (Some(t), None),
        Err(e) if !result.is_complete() => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let flags = anova
        .as_ref()
        .map(|t| {
            t.effects()
                .iter()
                .map(|(name, row)| EffectFlag {
                    effect: name.to_string(),
                    f: row.f,
                    p: row.p,
                    significant: row.p < settings.alpha_anova,
                })
                .collect()
        })
        .unwrap_or_default();
    let contrasts = gender_contrasts(&cells, settings.alpha_posthoc)?;
    Ok(ExperimentAnalysis {
        id: result.design.id(),
        investor: result.design.investor_group,
        complete: result.is_complete(),
        observations: observations.len(),
        cells: summaries,
        anova,
        anova_skipped,
        flags,
        gender_contrasts: contrasts,
    })
}

fn anova_csv(a: &ExperimentAnalysis, alpha: f64) -> String {
    let mut out = String::from("effect,sum_of_squares,df,mean_square,f,p,significant\n");
    if let Some(t) = &a.anova {
        for (name, row) in t.effects() {
            writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                row.sum_of_squares,
                row.df,
                row.mean_square,
                row.f,
                row.p,
                row.p < alpha
            )
            .unwrap();
        }
        let r = &t.residual;
        writeln!(out, "residual,{},{},{},,,", r.sum_of_squares, r.df, r.mean_square).unwrap();
    }
    out
}

fn cells_csv(a: &ExperimentAnalysis) -> String {
    let mut out = String::from("race,gender,n,mean,sd,ci95_half_width\n");
    for c in &a.cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.group.race.key(),
            c.group.gender.key(),
            c.n,
            c.mean,
            c.sd,
            c.ci_half_width
        )
        .unwrap();
    }
    out
}

fn posthoc_csv(a: &ExperimentAnalysis) -> String {
    let mut out = String::from("race,group_a,group_b,mean_diff,t,df,p,cohens_d,significant\n");
    for c in &a.gender_contrasts {
        let t = &c.test;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.race.key(),
            t.group_a,
            t.group_b,
            t.mean_diff,
            t.t,
            t.df,
            t.p,
            t.cohens_d,
            c.significant
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub analysis_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: AnalysisSummary,
}

/// Compute the analysis of a run without writing anything.
pub fn analysis_summary(run_dir: &Path, settings: &AnalysisSettings, allow_incomplete: bool) -> Result<AnalysisSummary, Error> {
    let (manifest, experiments) = load_run(run_dir)?;
    let incomplete: Vec<String> = experiments.iter().filter(|e| !e.is_complete()).map(|e| e.design.id()).collect();
    if (!manifest.complete || !incomplete.is_empty()) && !allow_incomplete {
        return Err(Error::Refused(format!(
            "run {} is incomplete ({} failed games; incomplete experiments: {}); rerun it or pass --allow-incomplete",
            run_dir.display(),
            manifest.failures.len(),
            if incomplete.is_empty() { "none".to_string() } else { incomplete.join(", ") }
        )));
    }
    let experiments = experiments
        .iter()
        .map(|e| analyze_experiment(e, settings))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AnalysisSummary {
        run_id: manifest.run_id,
        model_id: manifest.model_id,
        alpha_anova: settings.alpha_anova,
        alpha_posthoc: settings.alpha_posthoc,
        experiments,
    })
}

fn plot_title(model: &str, investor: Group) -> String {
    let gender = match investor.gender {
        Gender::M => "male",
        Gender::F => "female",
    };
    format!("{model}: {} {gender} investors", investor.race.label())
}

/// Write ANOVA, post-hoc and cell tables, interaction plots and a summary
/// document under `<run_dir>/analysis`.
pub fn cmd_analyze(config: &RunConfig, run_dir: &Path, allow_incomplete: bool) -> Result<AnalyzeReport, Error> {
    config.validate(Needs::Analyze)?;
    let summary = analysis_summary(run_dir, &config.analysis, allow_incomplete)?;
    let dir = run_dir.join(ANALYSIS_DIR);
    create_dir(&dir)?;
    let mut files = Vec::new();
    for a in &summary.experiments {
        let plot = InteractionPlot::from_summaries(plot_title(&summary.model_id, a.investor), &a.cells);
        for (name, contents) in [
            (format!("{}_anova.csv", a.id), anova_csv(a, summary.alpha_anova)),
            (format!("{}_posthoc.csv", a.id), posthoc_csv(a)),
            (format!("{}_cells.csv", a.id), cells_csv(a)),
            (format!("{}_interaction.svg", a.id), plot.to_svg()),
        ] {
            let path = dir.join(name);
            write_file(&path, &contents)?;
            files.push(path);
        }
    }
    let path = dir.join(SUMMARY_FILE);
    let file = File::create(&path).map_err(Error::io(&path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Error::Refused(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(Error::io(&path))?;
    files.push(path);
    Ok(AnalyzeReport {
        analysis_dir: dir,
        files,
        summary,
    })
}

// ---------------------------------------------------------------- report

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Markdown report of a run, recomputed from its raw outcomes and written to
/// `<run_dir>/report.md`.
pub fn cmd_report(config: &RunConfig, run_dir: &Path, allow_incomplete: bool) -> Result<String, Error> {
    config.validate(Needs::Analyze)?;
    let s = analysis_summary(run_dir, &config.analysis, allow_incomplete)?;
    let mut out = String::new();
    writeln!(out, "# Trust Game bias report: {}\n", s.model_id).unwrap();
    writeln!(out, "Run `{}`.\n", s.run_id).unwrap();
    for a in &s.experiments {
        writeln!(out, "## {} investors ({} observations)\n", a.investor, a.observations).unwrap();
        if !a.complete {
            writeln!(out, "**Incomplete run: statistics cover the games that finished.**\n").unwrap();
        }
        writeln!(out, "| Trustee race | Male mean | Male 95% CI | Female mean | Female 95% CI |").unwrap();
        writeln!(out, "|---|---|---|---|---|").unwrap();
        for race in Race::ALL {
            let cell = |g| a.cells.iter().find(|c| c.group == Group::new(race, g));
            let (m, f) = (cell(Gender::M), cell(Gender::F));
            let show = |c: Option<&CellSummary>| {
                c.map(|c| (format!("{:.4}", c.mean), format!("±{:.4}", c.ci_half_width)))
                    .unwrap_or_default()
            };
            let ((mm, mc), (fm, fc)) = (show(m), show(f));
            writeln!(out, "| {} | {mm} | {mc} | {fm} | {fc} |", race.label()).unwrap();
        }
        out.push('\n');
        match &a.anova {
            Some(t) => {
                writeln!(out, "| Effect | F | df | p | significant (α = {}) |", s.alpha_anova).unwrap();
                writeln!(out, "|---|---|---|---|---|").unwrap();
                for (name, row) in t.effects() {
                    writeln!(
                        out,
                        "| {name} | {:.4} | ({}, {}) | {} | {} |",
                        row.f,
                        row.df,
                        t.residual.df,
                        fmt_p(row.p),
                        if row.p < s.alpha_anova { "yes" } else { "no" }
                    )
                    .unwrap();
                }
            }
            None => {
                writeln!(out, "ANOVA skipped: {}", a.anova_skipped.as_deref().unwrap_or("unknown")).unwrap();
            }
        }
        out.push('\n');
        writeln!(out, "| Race | t (F − M) | df | p | Cohen's d | significant (α = {}) |", s.alpha_posthoc).unwrap();
        writeln!(out, "|---|---|---|---|---|---|").unwrap();
        for c in &a.gender_contrasts {
            writeln!(
                out,
                "| {} | {:.4} | {} | {} | {:.4} | {} |",
                c.race.label(),
                c.test.t,
                c.test.df,
                fmt_p(c.test.p),
                c.test.cohens_d,
                if c.significant { "yes" } else { "no" }
            )
            .unwrap();
        }
        out.push('\n');
    }
    let matrices: Vec<_> = s.experiments.iter().map(|a| a.id.clone()).collect();
    writeln!(out, "Matrix exports: {}", matrices.iter().map(|m| format!("`{EXPORTS_DIR}/{m}/`")).collect::<Vec<_>>().join(", ")).unwrap();
    write_file(&run_dir.join(REPORT_FILE), &out)?;
    Ok(out)
}
