//! SVG figures of an audit run.
//!
//! Every mark that carries data is a `<rect>` with `data-*` attributes holding the
//! plotted values, so the figures can be checked by parsing rather than by eye.

use std::fmt::Write as _;

use uu_audit::characterize::{CharacterizationReport, DEFAULT_CLIP};
use uu_audit::evalcv::{EvalReport, Split, Spread};
use uu_audit::grouping::{Group, GroupAssignment, PrevalenceSummary};

pub const BA_FIGURE: &str = "balanced_accuracy.svg";
pub const PROBABILITY_FIGURE: &str = "probabilities.svg";
pub const PREVALENCE_FIGURE: &str = "prevalence.svg";
pub const COEFFICIENT_FIGURE: &str = "coefficients.svg";

pub const HISTOGRAM_BINS: usize = 20;

const PASSED_FILL: &str = "#4c78a8";
const FAILED_FILL: &str = "#e45756";

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn esc(raw: &str) -> String {
    raw.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Svg {
        let mut svg = Svg {
            width,
            height,
            body: String::new(),
        };
        svg.text(width / 2.0, 20.0, "middle", title, "title");
        svg
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, label: &str, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<text class="{class}" x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="11">{}</text>"#,
            esc(label)
        );
    }

    fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), class: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black"{extra}/>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, style: &str, data: &[(&str, String)]) {
        let _ = write!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" {style}"#
        );
        for (k, v) in data {
            let _ = write!(self.body, r#" data-{k}="{}""#, esc(v));
        }
        self.body.push_str("/>\n");
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

/// Vertical value axis from 0 to 1 with ticks every 0.25.
fn unit_axis(svg: &mut Svg, left: f64, top: f64, plot_h: f64, right: f64) {
    let bottom = top + plot_h;
    svg.line((left, top), (left, bottom), "axis", "");
    svg.line((left, bottom), (right, bottom), "axis", "");
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = bottom - v * plot_h;
        svg.line((left - 4.0, y), (left, y), "tick", "");
        svg.text(left - 6.0, y + 4.0, "end", &format!("{v:.2}"), "tick-label");
    }
}

/// Mean balanced accuracy per split with min/max whiskers over the outer folds.
pub fn balanced_accuracy_svg(report: &EvalReport) -> String {
    let (left, top, plot_h, slot) = (50.0, 40.0, 200.0, 90.0);
    let mut svg = Svg::new(left + 3.0 * slot + 20.0, top + plot_h + 50.0, &format!("Balanced accuracy ({})", report.model_id));
    unit_axis(&mut svg, left, top, plot_h, left + 3.0 * slot);
    let spreads: [(Split, Option<Spread>); 3] = [
        (Split::Train, report.train),
        (Split::Validation, report.validation),
        (Split::Test, report.test),
    ];
    let bottom = top + plot_h;
    for (i, (split, spread)) in spreads.into_iter().enumerate() {
        let x = left + i as f64 * slot + 20.0;
        let w = slot - 40.0;
        svg.text(x + w / 2.0, bottom + 16.0, "middle", split.as_str(), "x-label");
        let Some(s) = spread else { continue };
        let h = s.mean * plot_h;
        svg.rect(
            x,
            bottom - h,
            w,
            h,
            r##"class="bar" fill="#9ecae1" stroke="black""##,
            &[
                ("split", split.as_str().to_string()),
                ("mean", s.mean.to_string()),
                ("min", s.min.to_string()),
                ("max", s.max.to_string()),
            ],
        );
        let cx = x + w / 2.0;
        let (y_min, y_max) = (bottom - s.min * plot_h, bottom - s.max * plot_h);
        svg.line((cx, y_min), (cx, y_max), "whisker", "");
        svg.line((cx - 6.0, y_min), (cx + 6.0, y_min), "whisker", "");
        svg.line((cx - 6.0, y_max), (cx + 6.0, y_max), "whisker", "");
    }
    svg.finish()
}

/// Counts of test probabilities per bin, split by true outcome (passed, failed).
pub fn probability_bins(assignments: &[(Split, GroupAssignment)], bins: usize) -> Vec<(usize, usize)> {
    let mut counts = vec![(0, 0); bins];
    for (_, a) in assignments.iter().filter(|(s, _)| *s == Split::Test) {
        let i = ((a.p * bins as f64) as usize).min(bins - 1);
        if a.y == 0 {
            counts[i].0 += 1;
        } else {
            counts[i].1 += 1;
        }
    }
    counts
}

/// Histogram of test failure probabilities with the trust band `0.5 ± δ` marked.
pub fn probability_histogram_svg(assignments: &[(Split, GroupAssignment)], delta: f64) -> String {
    let bins = probability_bins(assignments, HISTOGRAM_BINS);
    let (left, top, plot_w, plot_h) = (50.0, 40.0, 400.0, 200.0);
    let mut svg = Svg::new(left + plot_w + 20.0, top + plot_h + 50.0, "Predicted failure probability (test)");
    let bottom = top + plot_h;
    svg.line((left, top), (left, bottom), "axis", "");
    svg.line((left, bottom), (left + plot_w, bottom), "axis", "");
    let max = bins.iter().map(|(a, b)| (*a).max(*b)).max().unwrap_or(0).max(1) as f64;
    svg.text(left - 6.0, top + 4.0, "end", &format!("{max}"), "tick-label");
    let bin_w = plot_w / HISTOGRAM_BINS as f64;
    for (i, (passed, failed)) in bins.iter().enumerate() {
        let lo = i as f64 / HISTOGRAM_BINS as f64;
        let hi = (i + 1) as f64 / HISTOGRAM_BINS as f64;
        for (j, (outcome, count, fill)) in [("passed", passed, PASSED_FILL), ("failed", failed, FAILED_FILL)]
            .into_iter()
            .enumerate()
        {
            let h = *count as f64 / max * plot_h;
            svg.rect(
                left + i as f64 * bin_w + j as f64 * bin_w / 2.0,
                bottom - h,
                bin_w / 2.0,
                h,
                &format!(r#"class="bin" fill="{fill}""#),
                &[
                    ("outcome", outcome.to_string()),
                    ("lo", lo.to_string()),
                    ("hi", hi.to_string()),
                    ("count", count.to_string()),
                ],
            );
        }
    }
    for edge in [0.5 - delta, 0.5 + delta] {
        let x = left + edge * plot_w;
        svg.line((x, top), (x, bottom), "trust-band", r#" stroke-dasharray="4 3""#);
    }
    for v in [0.0, 0.5, 1.0] {
        svg.text(left + v * plot_w, bottom + 16.0, "middle", &format!("{v:.1}"), "x-label");
    }
    svg.finish()
}

/// Group prevalence per split; passed students are solid bars and failed students dashed.
///
/// Every (split, group, outcome) bar is drawn, with zero height when empty.
pub fn prevalence_svg(prevalence: &PrevalenceSummary) -> String {
    let (left, top, plot_h, bar_w) = (50.0, 40.0, 200.0, 18.0);
    let group_w = 2.0 * bar_w + 10.0;
    let split_w = 3.0 * group_w + 30.0;
    let splits: Vec<Split> = Split::ALL.into_iter().filter(|s| prevalence.splits.contains_key(s)).collect();
    let width = left + splits.len().max(1) as f64 * split_w + 20.0;
    let mut svg = Svg::new(width, top + plot_h + 70.0, &format!("Group prevalence at δ = {}", prevalence.delta));
    unit_axis(&mut svg, left, top, plot_h, width - 20.0);
    let bottom = top + plot_h;
    for (si, split) in splits.iter().enumerate() {
        let sp = &prevalence.splits[split];
        let x0 = left + 15.0 + si as f64 * split_w;
        svg.text(x0 + 1.5 * group_w, bottom + 32.0, "middle", split.as_str(), "x-label");
        for (gi, group) in Group::ALL.into_iter().enumerate() {
            let share = sp.groups.get(&group).copied().unwrap_or_default();
            let gx = x0 + gi as f64 * group_w;
            svg.text(gx + bar_w, bottom + 16.0, "middle", group.short(), "x-label");
            for (oi, (outcome, s, style)) in [
                ("passed", share.passed, format!(r#"class="bar" fill="{PASSED_FILL}" stroke="black""#)),
                (
                    "failed",
                    share.failed,
                    format!(r#"class="bar" fill="white" stroke="{FAILED_FILL}" stroke-width="2" stroke-dasharray="4 2""#),
                ),
            ]
            .into_iter()
            .enumerate()
            {
                let h = s.fraction * plot_h;
                svg.rect(
                    gx + oi as f64 * bar_w,
                    bottom - h,
                    bar_w,
                    h,
                    &style,
                    &[
                        ("split", split.as_str().to_string()),
                        ("group", group.short().to_string()),
                        ("outcome", outcome.to_string()),
                        ("count", s.count.to_string()),
                        ("fraction", s.fraction.to_string()),
                    ],
                );
            }
        }
    }
    svg.finish()
}

/// Horizontal bars of the clipped coefficients, in report order (|γ| descending).
pub fn coefficients_svg(report: &CharacterizationReport) -> String {
    let (lo, hi) = DEFAULT_CLIP;
    let (left, top, half_w, row_h) = (140.0, 40.0, 160.0, 14.0);
    let n = report.coefficients.len();
    let mut svg = Svg::new(
        left + 2.0 * half_w + 40.0,
        top + n as f64 * row_h + 50.0,
        &format!("Coefficients ({} target, R² = {:.3})", report.target_mode.as_str(), report.r2),
    );
    let zero = left + half_w;
    let bottom = top + n as f64 * row_h;
    svg.line((zero, top), (zero, bottom), "axis", "");
    svg.line((left, bottom), (left + 2.0 * half_w, bottom), "axis", "");
    for v in [lo, lo / 2.0, 0.0, hi / 2.0, hi] {
        let x = zero + v / hi.max(-lo) * half_w;
        svg.text(x, bottom + 16.0, "middle", &format!("{v}"), "x-label");
    }
    for (i, c) in report.coefficients.iter().enumerate() {
        let y = top + i as f64 * row_h;
        let w = c.clipped.abs() / hi.max(-lo) * half_w;
        let x = if c.clipped < 0.0 { zero - w } else { zero };
        let significant = c.p.is_some_and(|p| p < 0.05);
        let fill = if c.clipped >= 0.0 { FAILED_FILL } else { PASSED_FILL };
        let opacity = if significant { "1" } else { "0.4" };
        svg.rect(
            x,
            y + 2.0,
            w,
            row_h - 4.0,
            &format!(r#"class="coef" fill="{fill}" fill-opacity="{opacity}""#),
            &[
                ("id", c.id.clone()),
                ("gamma", c.gamma.to_string()),
                ("clipped", c.clipped.to_string()),
                ("p", c.p.map(|p| p.to_string()).unwrap_or_default()),
            ],
        );
        svg.text(left - 6.0, y + row_h - 3.0, "end", &c.id, "y-label");
    }
    svg.finish()
}
