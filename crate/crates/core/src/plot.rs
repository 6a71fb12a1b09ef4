//! Interaction plots: mean investment by trustee race, one line per trustee
//! gender, with 95% confidence bars. Output is plain SVG with the plotted
//! numbers embedded as JSON metadata so plots can be diffed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::race::{Gender, Race};
use crate::stats::CellSummary;

/// All styling lives here so golden files only change when these do.
pub mod style {
    pub const WIDTH: f64 = 640.0;
    pub const HEIGHT: f64 = 420.0;
    pub const MARGIN_LEFT: f64 = 70.0;
    pub const MARGIN_RIGHT: f64 = 120.0;
    pub const MARGIN_TOP: f64 = 50.0;
    pub const MARGIN_BOTTOM: f64 = 60.0;
    pub const FONT: &str = "Helvetica, Arial, sans-serif";
    pub const FONT_SIZE: f64 = 12.0;
    pub const TITLE_SIZE: f64 = 15.0;
    pub const COLOR_M: &str = "#1f77b4";
    pub const COLOR_F: &str = "#d62728";
    pub const DASH_F: &str = "6,3";
    pub const LINE_WIDTH: f64 = 2.0;
    pub const MARKER_RADIUS: f64 = 4.0;
    pub const CAP_HALF_WIDTH: f64 = 5.0;
    pub const AXIS_COLOR: &str = "#333333";
    pub const GRID_COLOR: &str = "#dddddd";
    pub const Y_TICKS: usize = 5;
    pub const DECIMALS: usize = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub race: Race,
    pub mean: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub gender: Gender,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionPlot {
    pub title: String,
    pub races: Vec<Race>,
    pub series: Vec<Series>,
    pub y_min: f64,
    pub y_max: f64,
}

impl InteractionPlot {
    /// Build from the ten cell summaries; values are taken verbatim.
    pub fn from_summaries(title: impl Into<String>, summaries: &[CellSummary]) -> Self {
        let series: Vec<Series> = Gender::ALL
            .iter()
            .map(|&gender| Series {
                gender,
                points: Race::ALL
                    .iter()
                    .filter_map(|&race| {
                        summaries
                            .iter()
                            .find(|s| s.group.race == race && s.group.gender == gender)
                            .map(|s| SeriesPoint {
                                race,
                                mean: s.mean,
                                ci_half_width: s.ci_half_width,
                            })
                    })
                    .collect(),
            })
            .collect();
        let (lo, hi) = series
            .iter()
            .flat_map(|s| s.points.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.mean - p.ci_half_width), hi.max(p.mean + p.ci_half_width))
            });
        let (y_min, y_max) = nice_range(lo, hi);
        InteractionPlot {
            title: title.into(),
            races: Race::ALL.to_vec(),
            series,
            y_min,
            y_max,
        }
    }

    pub fn to_svg(&self) -> String {
        use style::*;
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let n = self.races.len().max(1) as f64;
        let x_of = |idx: usize| MARGIN_LEFT + plot_w * (idx as f64 + 0.5) / n;
        let span = self.y_max - self.y_min;
        let y_of = |v: f64| MARGIN_TOP + plot_h * (1.0 - (v - self.y_min) / span);

        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="{FONT}" font-size="{FONT_SIZE}">"#
        )
        .unwrap();
        let metadata = serde_json::to_string(self).expect("plot data serializes");
        writeln!(s, "<metadata>{}</metadata>", xml_escape(&metadata)).unwrap();
        writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="{TITLE_SIZE}">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            MARGIN_TOP / 2.0 + 5.0,
            xml_escape(&self.title)
        )
        .unwrap();

        for k in 0..=Y_TICKS {
            let v = self.y_min + span * k as f64 / Y_TICKS as f64;
            let y = y_of(v);
            writeln!(
                s,
                r#"<line x1="{MARGIN_LEFT:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="{GRID_COLOR}"/>"#,
                MARGIN_LEFT + plot_w
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
                MARGIN_LEFT - 8.0,
                y + 4.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<path d="M{MARGIN_LEFT:.1},{MARGIN_TOP:.1}V{:.1}H{:.1}" fill="none" stroke="{AXIS_COLOR}"/>"#,
            MARGIN_TOP + plot_h,
            MARGIN_LEFT + plot_w
        )
        .unwrap();
        for (idx, race) in self.races.iter().enumerate() {
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x_of(idx),
                MARGIN_TOP + plot_h + 20.0,
                race.label()
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Trustee race</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 15.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">Mean investment ($)</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0
        )
        .unwrap();

        for series in &self.series {
            let (color, dash, label) = match series.gender {
                Gender::M => (COLOR_M, "", "Male trustee"),
                Gender::F => (COLOR_F, DASH_F, "Female trustee"),
            };
            let dash_attr = if dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{dash}""#)
            };
            let idx_of = |race: Race| self.races.iter().position(|&r| r == race).unwrap_or(0);
            let points: Vec<String> = series
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", x_of(idx_of(p.race)), y_of(p.mean)))
                .collect();
            writeln!(
                s,
                r#"<g class="series" data-gender="{}">"#,
                series.gender.key()
            )
            .unwrap();
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{LINE_WIDTH}"{dash_attr}/>"#,
                points.join(" ")
            )
            .unwrap();
            for p in &series.points {
                let x = x_of(idx_of(p.race));
                let (top, bottom) = (y_of(p.mean + p.ci_half_width), y_of(p.mean - p.ci_half_width));
                writeln!(
                    s,
                    r#"<path d="M{x:.2},{top:.2}V{bottom:.2}M{:.2},{top:.2}H{:.2}M{:.2},{bottom:.2}H{:.2}" stroke="{color}"/>"#,
                    x - CAP_HALF_WIDTH,
                    x + CAP_HALF_WIDTH,
                    x - CAP_HALF_WIDTH,
                    x + CAP_HALF_WIDTH
                )
                .unwrap();
                writeln!(
                    s,
                    r#"<circle cx="{x:.2}" cy="{:.2}" r="{MARKER_RADIUS}" fill="{color}"><title>{} {}: {:.prec$} ± {:.prec$}</title></circle>"#,
                    y_of(p.mean),
                    p.race.label(),
                    series.gender.key(),
                    p.mean,
                    p.ci_half_width,
                    prec = DECIMALS
                )
                .unwrap();
            }
            let legend_y = MARGIN_TOP + 20.0 * (series.gender == Gender::F) as u8 as f64;
            let legend_x = MARGIN_LEFT + plot_w + 15.0;
            writeln!(
                s,
                r#"<line x1="{legend_x:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{color}" stroke-width="{LINE_WIDTH}"{dash_attr}/>"#,
                legend_x + 20.0
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{label}</text>"#,
                legend_x + 26.0,
                legend_y + 4.0
            )
            .unwrap();
            s.push_str("</g>\n");
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Extract the embedded plot data from an SVG produced by [`InteractionPlot::to_svg`].
pub fn read_metadata(svg: &str) -> Option<InteractionPlot> {
    let start = svg.find("<metadata>")? + "<metadata>".len();
    let end = svg[start..].find("</metadata>")? + start;
    serde_json::from_str(&xml_unescape(&svg[start..end])).ok()
}

/// Pad the data range and widen degenerate ranges so the plot stays readable.
fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.1;
    (lo - pad, hi + pad)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::race::Group;

    fn summaries() -> Vec<CellSummary> {
        Group::all()
            .into_iter()
            .map(|group| CellSummary {
                group,
                n: 272,
                mean: 4.0 + group.race.index() as f64 * 0.25 + (group.gender == Gender::F) as u8 as f64 * 0.1,
                sd: 1.0,
                ci_half_width: 0.1188,
            })
            .collect()
    }

    #[test]
    fn series_follow_summaries_exactly() {
        let s = summaries();
        let plot = InteractionPlot::from_summaries("White male investors", &s);
        assert_eq!(plot.series.len(), 2);
        for series in &plot.series {
            assert_eq!(series.points.len(), 5);
            for p in &series.points {
                let cell = s.iter().find(|c| c.group == Group::new(p.race, series.gender)).unwrap();
                assert_eq!(p.mean, cell.mean);
                assert_eq!(p.ci_half_width, cell.ci_half_width);
            }
        }
        assert!(plot.y_min < 4.0 - 0.1188 && plot.y_max > 5.1 + 0.1188);
    }

    #[test]
    fn metadata_round_trips() {
        let plot = InteractionPlot::from_summaries("A & B <test>", &summaries());
        let svg = plot.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("A &amp; B &lt;test&gt;"));
        assert_eq!(read_metadata(&svg).unwrap(), plot);
        assert_eq!(svg.matches("<circle").count(), 10);
        // Deterministic output.
        assert_eq!(svg, plot.to_svg());
    }

    #[test]
    fn flat_data_gets_a_usable_range() {
        let flat: Vec<CellSummary> = summaries()
            .into_iter()
            .map(|mut c| {
                c.mean = 3.0;
                c.ci_half_width = 0.0;
                c
            })
            .collect();
        let plot = InteractionPlot::from_summaries("flat", &flat);
        assert_eq!((plot.y_min, plot.y_max), (2.5, 3.5));
        assert!(!plot.to_svg().contains("NaN"));
    }
}
