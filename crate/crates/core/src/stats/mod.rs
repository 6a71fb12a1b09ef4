//! Two-way fixed-effects ANOVA, pooled two-sample t-tests, Cohen's d and the
//! per-cell summaries behind the interaction plots.

mod special;

use serde::{Deserialize, Serialize};

use crate::race::{Gender, Group, Race};

pub use special::{beta_reg, f_sf, ln_beta, ln_gamma, t_two_sided};

pub const DEFAULT_ALPHA_ANOVA: f64 = 0.001;
pub const DEFAULT_ALPHA_POSTHOC: f64 = 0.01;
/// Normal-approximation multiplier for 95% confidence intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("design error: {0}")]
    Design(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// One line of an ANOVA table for a tested effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub sum_of_squares: f64,
    pub df: u32,
    pub mean_square: f64,
    /// `+inf` when the residual variance is zero but the effect is not;
    /// NaN when both vanish.
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub sum_of_squares: f64,
    pub df: u32,
    pub mean_square: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    /// First factor (trustee gender in the experiments).
    pub factor_a: EffectRow,
    /// Second factor (trustee race).
    pub factor_b: EffectRow,
    pub interaction: EffectRow,
    pub residual: ResidualRow,
    pub total_sum_of_squares: f64,
    pub n: usize,
    pub per_cell: usize,
}

impl AnovaTable {
    pub fn gender(&self) -> &EffectRow {
        &self.factor_a
    }

    pub fn race(&self) -> &EffectRow {
        &self.factor_b
    }

    /// `(effect name, row)` in presentation order.
    pub fn effects(&self) -> [(&'static str, &EffectRow); 3] {
        [
            ("gender", &self.factor_a),
            ("race", &self.factor_b),
            ("gender:race", &self.interaction),
        ]
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sum of squared deviations from the mean.
fn centered_ss(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Squared-error level below which a sum of squares is treated as rounding
/// noise rather than real variation.
fn noise_floor(values: impl Iterator<Item = f64>) -> f64 {
    let (n, scale) = values.fold((0usize, 0f64), |(n, s), v| (n + 1, s.max(v.abs())));
    let unit = 64.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    n as f64 * unit * unit
}

fn effect_row(ss: f64, df: u32, residual: &ResidualRow, residual_is_zero: bool, floor: f64) -> EffectRow {
    let ms = ss / df as f64;
    let (f, p) = if residual_is_zero {
        if ss <= floor {
            (f64::NAN, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ms / residual.mean_square;
        (f, f_sf(f, df as f64, residual.df as f64))
    };
    EffectRow { sum_of_squares: ss, df, mean_square: ms, f, p }
}

/// Balanced two-way ANOVA with interaction over integer-coded levels.
///
/// `observations` holds `(level_a, level_b, value)` with `level_a < levels_a`
/// and `level_b < levels_b`. Every cell must hold the same number of
/// observations, and at least two of them.
pub fn two_way_anova_indexed(
    levels_a: usize,
    levels_b: usize,
    observations: &[(usize, usize, f64)],
) -> Result<AnovaTable, StatsError> {
    if levels_a < 2 || levels_b < 2 {
        return Err(StatsError::Design(format!(
            "each factor needs at least two levels (got {levels_a} and {levels_b})"
        )));
    }
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); levels_a * levels_b];
    for &(a, b, y) in observations {
        if a >= levels_a || b >= levels_b {
            return Err(StatsError::Input(format!("level ({a}, {b}) out of range")));
        }
        if !y.is_finite() {
            return Err(StatsError::Input(format!("non-finite observation {y}")));
        }
        cells[a * levels_b + b].push(y);
    }
    let per_cell = cells[0].len();
    if let Some((idx, cell)) = cells.iter().enumerate().find(|(_, c)| c.len() != per_cell) {
        return Err(StatsError::Design(format!(
            "unbalanced design: cell ({}, {}) has {} observations, cell (0, 0) has {per_cell}",
            idx / levels_b,
            idx % levels_b,
            cell.len()
        )));
    }
    if per_cell < 2 {
        return Err(StatsError::Design(format!(
            "every cell needs at least two observations (got {per_cell})"
        )));
    }

    let n = observations.len();
    let nf = per_cell as f64;
    let cell_means: Vec<f64> = cells.iter().map(|c| mean(c)).collect();
    let grand = mean(&cell_means);
    let a_means: Vec<f64> = (0..levels_a)
        .map(|a| mean(&cell_means[a * levels_b..(a + 1) * levels_b]))
        .collect();
    let b_means: Vec<f64> = (0..levels_b)
        .map(|b| (0..levels_a).map(|a| cell_means[a * levels_b + b]).sum::<f64>() / levels_a as f64)
        .collect();

    let ss_a = nf * levels_b as f64 * a_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = nf * levels_a as f64 * b_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    for a in 0..levels_a {
        for b in 0..levels_b {
            let r = cell_means[a * levels_b + b] - a_means[a] - b_means[b] + grand;
            ss_ab += r * r;
        }
    }
    ss_ab *= nf;
    let ss_e: f64 = cells.iter().map(|c| centered_ss(c)).sum();
    let ss_total: f64 = observations.iter().map(|o| (o.2 - grand).powi(2)).sum();

    let df_a = (levels_a - 1) as u32;
    let df_b = (levels_b - 1) as u32;
    let df_ab = df_a * df_b;
    let df_e = (n - levels_a * levels_b) as u32;
    let ms_e = ss_e / df_e as f64;

    let floor = noise_floor(observations.iter().map(|o| o.2 - grand));
    let residual_is_zero = ss_e <= floor;
    let residual = ResidualRow { sum_of_squares: ss_e, df: df_e, mean_square: ms_e };
    let row = |ss: f64, df: u32| effect_row(ss, df, &residual, residual_is_zero, floor);

    Ok(AnovaTable {
        factor_a: row(ss_a, df_a),
        factor_b: row(ss_b, df_b),
        interaction: row(ss_ab, df_ab),
        residual,
        total_sum_of_squares: ss_total,
        n,
        per_cell,
    })
}

/// Gender × race ANOVA over trustee observations. All ten cells must be
/// present and equally sized.
pub fn two_way_anova(observations: &[(Gender, Race, f64)]) -> Result<AnovaTable, StatsError> {
    let indexed: Vec<(usize, usize, f64)> = observations
        .iter()
        .map(|&(g, r, y)| (gender_index(g), r.index(), y))
        .collect();
    two_way_anova_indexed(2, Race::ALL.len(), &indexed)
}

fn gender_index(g: Gender) -> usize {
    match g {
        Gender::M => 0,
        Gender::F => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub group_a: String,
    pub group_b: String,
    pub t: f64,
    pub df: u32,
    pub p: f64,
    pub cohens_d: f64,
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
}

struct Pooled {
    mean_diff: f64,
    pooled_var: f64,
    df: u32,
    na: f64,
    nb: f64,
    zero_var: bool,
}

fn pooled(a: &[f64], b: &[f64]) -> Result<Pooled, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::Input(format!(
            "both samples need at least two values (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::Input("non-finite sample value".into()));
    }
    let df = (a.len() + b.len() - 2) as u32;
    let ss = centered_ss(a) + centered_ss(b);
    let center = (mean(a) + mean(b)) / 2.0;
    let floor = noise_floor(a.iter().chain(b).map(|v| v - center));
    Ok(Pooled {
        mean_diff: mean(a) - mean(b),
        pooled_var: ss / df as f64,
        df,
        na: a.len() as f64,
        nb: b.len() as f64,
        zero_var: ss <= floor,
    })
}

fn signed_ratio(diff: f64, denom: f64, zero_var: bool) -> f64 {
    if zero_var {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / denom
    }
}

/// Cohen's d of `a` minus `b`, using the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let p = pooled(a, b)?;
    Ok(signed_ratio(p.mean_diff, p.pooled_var.sqrt(), p.zero_var))
}

/// Pooled-variance (Student) two-sample t-test with a two-sided p-value.
pub fn t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    t_test_labeled("a", a, "b", b)
}

pub fn t_test_labeled(label_a: &str, a: &[f64], label_b: &str, b: &[f64]) -> Result<TTestResult, StatsError> {
    let p = pooled(a, b)?;
    let se = (p.pooled_var * (1.0 / p.na + 1.0 / p.nb)).sqrt();
    let t = signed_ratio(p.mean_diff, se, p.zero_var);
    let d = signed_ratio(p.mean_diff, p.pooled_var.sqrt(), p.zero_var);
    Ok(TTestResult {
        group_a: label_a.to_string(),
        group_b: label_b.to_string(),
        t,
        df: p.df,
        p: t_two_sided(t, p.df as f64),
        cohens_d: d,
        mean_diff: p.mean_diff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub group: Group,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    /// `1.96 · sd / √n`.
    pub ci_half_width: f64,
}

pub fn summarize_cell(group: Group, values: &[f64]) -> Result<CellSummary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Input(format!("cell {} is empty", group.slug())));
    }
    let n = values.len();
    let m = mean(values);
    let sd = if n > 1 { (centered_ss(values) / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(CellSummary { group, n, mean: m, sd, ci_half_width: Z_95 * sd / (n as f64).sqrt() })
}

/// Mean and 95% CI for each trustee cell, ordered race-major then M before F.
pub fn interaction_summary(cells: &[(Group, &[f64])]) -> Result<Vec<CellSummary>, StatsError> {
    let mut out = Vec::with_capacity(cells.len());
    for group in Group::all() {
        let matching: Vec<_> = cells.iter().filter(|(g, _)| *g == group).collect();
        match matching.as_slice() {
            [] => return Err(StatsError::Design(format!("missing cell {}", group.slug()))),
            [(g, values)] => out.push(summarize_cell(*g, values)?),
            _ => return Err(StatsError::Design(format!("duplicate cell {}", group.slug()))),
        }
    }
    if cells.len() != out.len() {
        return Err(StatsError::Design(format!("expected {} cells, got {}", out.len(), cells.len())));
    }
    Ok(out)
}

/// Per-race post-hoc comparison of female against male trustees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderContrast {
    pub race: Race,
    pub test: TTestResult,
    pub significant: bool,
}

pub fn gender_contrasts(cells: &[(Group, &[f64])], alpha: f64) -> Result<Vec<GenderContrast>, StatsError> {
    let find = |group: Group| {
        cells
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, v)| *v)
            .ok_or_else(|| StatsError::Design(format!("missing cell {}", group.slug())))
    };
    Race::ALL
        .iter()
        .map(|&race| {
            let f = Group::new(race, Gender::F);
            let m = Group::new(race, Gender::M);
            let test = t_test_labeled(&f.slug(), find(f)?, &m.slug(), find(m)?)?;
            let significant = test.p < alpha;
            Ok(GenderContrast { race, test, significant })
        })
        .collect()
}
