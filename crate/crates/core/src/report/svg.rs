//! Hand-written SVG figures. Output depends only on the inputs, so two runs
//! over the same data give identical bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{competition_ranks, deviation_from_mean, filtered_deviation_from_mean, ResultGrid};
use crate::prompt::{enumerate_formats, FactorLevel};
use crate::significance::LmmFit;

const FONT: &str = "font-family=\"Helvetica,Arial,sans-serif\"";
const GREY: &str = "#bdbdbd";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One decimal, with negative zero printed as "0.0".
pub fn label(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

fn open(w: f64, h: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(s, "<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>");
    s
}

fn text(s: &mut String, x: f64, y: f64, size: u32, anchor: &str, body: &str) {
    let _ = writeln!(
        s,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
        esc(body)
    );
}

fn line(s: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
    let _ = writeln!(
        s,
        "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.1}\"/>"
    );
}

/// Linear-interpolation quantile (the common "type 7" definition).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    pub model: String,
    pub ranks: Vec<usize>,
    /// min, q1, median, q3, max
    pub five: [f64; 5],
}

/// Per-model competition ranks across the 48 formats.
pub fn rank_distribution(grid: &ResultGrid, dataset: &str) -> Result<Vec<RankSummary>> {
    let models = grid.models_for(dataset);
    if models.is_empty() {
        return Err(Error::MissingCells(vec![format!("*/{dataset}/*")]));
    }
    let cells = models
        .iter()
        .map(|m| grid.complete_cells(m, dataset))
        .collect::<Result<Vec<_>>>()?;
    let mut per_model: Vec<Vec<usize>> = vec![Vec::with_capacity(48); models.len()];
    for f in 0..enumerate_formats().len() {
        let scores: Vec<f64> = cells.iter().map(|c| c[f].1.accuracy).collect();
        for (m, r) in competition_ranks(&scores).into_iter().enumerate() {
            per_model[m].push(r);
        }
    }
    Ok(models
        .into_iter()
        .zip(per_model)
        .map(|(model, ranks)| {
            let mut sorted: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
            sorted.sort_by(f64::total_cmp);
            let five = [
                sorted[0],
                quantile(&sorted, 0.25),
                quantile(&sorted, 0.5),
                quantile(&sorted, 0.75),
                sorted[sorted.len() - 1],
            ];
            RankSummary { model, ranks, five }
        })
        .collect())
}

pub fn rank_boxplot(grid: &ResultGrid, dataset: &str) -> Result<String> {
    let summaries = rank_distribution(grid, dataset)?;
    let m = summaries.len();
    let (left, top, plot_h, step) = (60.0, 50.0, 260.0, 80.0);
    let width = left + step * m as f64 + 20.0;
    let height = top + plot_h + 70.0;
    let y = |rank: f64| top + (rank - 1.0) / ((m.max(2) - 1) as f64) * plot_h;
    let mut s = open(width, height);
    text(&mut s, width / 2.0, 24.0, 15, "middle", &format!("Rank distribution over 48 prompt formats: {dataset}"));
    for r in 1..=m {
        let yy = y(r as f64);
        line(&mut s, left - 5.0, yy, width - 20.0, yy, "#eeeeee", 1.0);
        text(&mut s, left - 10.0, yy + 4.0, 11, "end", &r.to_string());
    }
    line(&mut s, left, top, left, top + plot_h, "#333333", 1.0);
    text(&mut s, 16.0, top + plot_h / 2.0, 12, "middle", "Rank");
    for (i, sm) in summaries.iter().enumerate() {
        let cx = left + step * (i as f64 + 0.5);
        let [lo, q1, med, q3, hi] = sm.five;
        line(&mut s, cx, y(lo), cx, y(q1), "#333333", 1.0);
        line(&mut s, cx, y(q3), cx, y(hi), "#333333", 1.0);
        line(&mut s, cx - 12.0, y(lo), cx + 12.0, y(lo), "#333333", 1.0);
        line(&mut s, cx - 12.0, y(hi), cx + 12.0, y(hi), "#333333", 1.0);
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"40.00\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"#333333\"/>",
            cx - 20.0,
            y(q1),
            (y(q3) - y(q1)).max(1.0)
        );
        line(&mut s, cx - 20.0, y(med), cx + 20.0, y(med), "#d62728", 2.0);
        text(&mut s, cx, top + plot_h + 24.0, 11, "middle", &sm.model);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (end, w) = if t < 0.0 {
        ((59.0, 76.0, 192.0), -t)
    } else {
        ((180.0, 4.0, 38.0), t)
    };
    let mix = |a: f64| (255.0 + (a - 255.0) * w).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

/// Model × level deviations in pp. `None` marks levels with no retained
/// cells after coverage filtering.
pub fn deviation_matrix(
    grid: &ResultGrid,
    dataset: &str,
    coverage_threshold: Option<f64>,
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    grid.models_for(dataset)
        .into_iter()
        .map(|m| {
            let row = match coverage_threshold {
                None => deviation_from_mean(grid, &m, dataset)?
                    .into_iter()
                    .map(|d| Some(d.deviation))
                    .collect(),
                Some(t) => filtered_deviation_from_mean(grid, &m, dataset, t)?
                    .into_iter()
                    .map(|(_, d)| d)
                    .collect(),
            };
            Ok((m, row))
        })
        .collect()
}

pub fn deviation_heatmap(grid: &ResultGrid, dataset: &str, coverage_threshold: Option<f64>) -> Result<String> {
    let matrix = deviation_matrix(grid, dataset, coverage_threshold)?;
    if matrix.is_empty() {
        return Err(Error::MissingCells(vec![format!("*/{dataset}/*")]));
    }
    let levels = FactorLevel::all();
    let (left, top, cw, ch) = (110.0, 90.0, 62.0, 28.0);
    let width = left + cw * levels.len() as f64 + 20.0;
    let height = top + ch * matrix.len() as f64 + 40.0;
    let scale = matrix
        .iter()
        .flat_map(|(_, r)| r.iter().flatten())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let mut s = open(width, height);
    let title = match coverage_threshold {
        Some(t) => format!("Deviation from mean accuracy [pp], coverage >= {:.0}%: {dataset}", 100.0 * t),
        None => format!("Deviation from mean accuracy [pp]: {dataset}"),
    };
    text(&mut s, width / 2.0, 24.0, 15, "middle", &title);
    for (j, l) in levels.iter().enumerate() {
        let x = left + cw * (j as f64 + 0.5);
        text(&mut s, x, top - 28.0, 10, "middle", l.factor().name());
        text(&mut s, x, top - 12.0, 10, "middle", l.name());
    }
    for (i, (model, row)) in matrix.iter().enumerate() {
        let y = top + ch * i as f64;
        text(&mut s, left - 8.0, y + ch / 2.0 + 4.0, 11, "end", model);
        for (j, v) in row.iter().enumerate() {
            let x = left + cw * j as f64;
            let (fill, body) = match v {
                Some(v) => (
                    diverging(if scale > 0.0 { v / scale } else { 0.0 }),
                    label(*v),
                ),
                None => (GREY.to_string(), "n/a".to_string()),
            };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{fill}\" stroke=\"#ffffff\"/>"
            );
            text(&mut s, x + cw / 2.0, y + ch / 2.0 + 4.0, 10, "middle", &body);
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Fixed effects with 95% intervals; the intercept is left out.
pub fn effects_chart(fit: &LmmFit) -> String {
    let effects: Vec<_> = fit.effects.iter().filter(|e| e.level != "intercept").collect();
    let (left, top, plot_w, rh) = (130.0, 50.0, 420.0, 26.0);
    let width = left + plot_w + 30.0;
    let height = top + rh * effects.len() as f64 + 50.0;
    let span = effects
        .iter()
        .map(|e| e.ci_lo.abs().max(e.ci_hi.abs()))
        .fold(1.0f64, f64::max)
        .ceil();
    let x = |v: f64| left + (v + span) / (2.0 * span) * plot_w;
    let mut s = open(width, height);
    text(&mut s, width / 2.0, 24.0, 15, "middle", "Fixed effects vs. base format [pp], 95% CI");
    let bottom = top + rh * effects.len() as f64;
    line(&mut s, x(0.0), top - 6.0, x(0.0), bottom, "#333333", 1.0);
    for tick in [-span, -span / 2.0, span / 2.0, span] {
        line(&mut s, x(tick), bottom, x(tick), bottom + 4.0, "#333333", 1.0);
        text(&mut s, x(tick), bottom + 16.0, 10, "middle", &label(tick));
    }
    text(&mut s, x(0.0), bottom + 16.0, 10, "middle", "0.0");
    for (i, e) in effects.iter().enumerate() {
        let yc = top + rh * (i as f64 + 0.5);
        text(&mut s, left - 8.0, yc + 4.0, 11, "end", &e.level);
        let (x0, x1) = (x(0.0).min(x(e.estimate)), x(0.0).max(x(e.estimate)));
        let fill = match (e.significant, e.estimate < 0.0) {
            (true, true) => "#3b4cc0",
            (true, false) => "#b40426",
            (false, _) => GREY,
        };
        let _ = writeln!(
            s,
            "<rect x=\"{x0:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
            yc - rh * 0.3,
            x1 - x0,
            rh * 0.6
        );
        line(&mut s, x(e.ci_lo), yc, x(e.ci_hi), yc, "#000000", 1.2);
        line(&mut s, x(e.ci_lo), yc - 5.0, x(e.ci_lo), yc + 5.0, "#000000", 1.2);
        line(&mut s, x(e.ci_hi), yc - 5.0, x(e.ci_hi), yc + 5.0, "#000000", 1.2);
    }
    s.push_str("</svg>\n");
    s
}
