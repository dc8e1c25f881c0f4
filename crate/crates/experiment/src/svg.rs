//! Self-contained SVG plots. Output depends only on the data: no
//! timestamps, no generated ids.

use std::fmt::Write;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::config::{HeatmapMetric, HeatmapMode};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapGrid;
use crate::records::CurveRow;

const VIRIDIS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let s = t * (VIRIDIS.len() - 1) as f64;
    let i = (s as usize).min(VIRIDIS.len() - 2);
    let f = s - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn metric_name(m: HeatmapMetric) -> &'static str {
    match m {
        HeatmapMetric::Feedback => "feedback",
        HeatmapMetric::Feedforward => "feedforward",
    }
}

fn mode_name(m: HeatmapMode) -> &'static str {
    match m {
        HeatmapMode::UniformGrid => "uniform_grid",
        HeatmapMode::VisitedStates => "visited_states",
    }
}

/// Heatmap with one `rect` per cell. Exact values ride along in `data-*`
/// attributes so the grid can be recovered with [`read_heatmap_svg`]; empty
/// cells are grey and carry `data-empty="1"`.
pub fn heatmap_svg(g: &HeatmapGrid, title: &str) -> String {
    let (cw, ch) = (24.0, 24.0);
    let (left, top) = (60.0, 40.0);
    let w = left + cw * g.bins[0] as f64 + 120.0;
    let h = top + ch * g.bins[1] as f64 + 50.0;
    let (lo, hi) = g.value_range().unwrap_or((0.0, 0.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-dim-x="{}" data-dim-y="{}" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" data-bins-x="{}" data-bins-y="{}" data-metric="{}" data-mode="{}">"#,
        g.dims[0],
        g.dims[1],
        g.ranges[0][0],
        g.ranges[0][1],
        g.ranges[1][0],
        g.ranges[1][1],
        g.bins[0],
        g.bins[1],
        metric_name(g.metric),
        mode_name(g.mode),
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for iy in 0..g.bins[1] {
        for ix in 0..g.bins[0] {
            let i = g.index(ix, iy);
            // y grows upwards in state space.
            let x = left + cw * ix as f64;
            let y = top + ch * (g.bins[1] - 1 - iy) as f64;
            match g.values[i] {
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{}" data-ix="{ix}" data-iy="{iy}" data-value="{v}" data-count="{}"/>"#,
                        color(t),
                        g.counts[i]
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="#d9d9d9" data-ix="{ix}" data-iy="{iy}" data-empty="1" data-count="{}"/>"##,
                        g.counts[i]
                    );
                }
            }
        }
    }
    let gx = left + cw * g.bins[0] as f64;
    let gy = top + ch * g.bins[1] as f64;
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}" font-family="sans-serif" font-size="11">x{} in [{:.3}, {:.3}]</text>"#,
        gy + 18.0,
        g.dims[0],
        g.ranges[0][0],
        g.ranges[0][1]
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}" font-family="sans-serif" font-size="11">x{} in [{:.3}, {:.3}] (vertical)</text>"#,
        gy + 34.0,
        g.dims[1],
        g.ranges[1][0],
        g.ranges[1][1]
    );
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let y = top + (1.0 - t) * (gy - top - 10.0);
        let _ = writeln!(s, r#"<rect x="{}" y="{y:.3}" width="16" height="{:.3}" fill="{}"/>"#, gx + 20.0, (gy - top) / 11.0, color(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{:.4}</text>"#, gx + 40.0, top + 10.0, hi);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{:.4}</text>"#, gx + 40.0, gy, lo);
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn attr<'a>(attrs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn need<T: std::str::FromStr>(attrs: &[(String, String)], key: &str) -> Result<T> {
    attr(attrs, key)
        .ok_or_else(|| Error::format("heatmap svg", format!("missing {key}")))?
        .parse()
        .map_err(|_| Error::format("heatmap svg", format!("bad {key}")))
}

/// Recovers the grid written by [`heatmap_svg`].
pub fn read_heatmap_svg(text: &str) -> Result<HeatmapGrid> {
    let mut reader = Reader::from_str(text);
    let mut grid: Option<HeatmapGrid> = None;
    loop {
        let event = reader.read_event().map_err(|e| Error::format("heatmap svg", e))?;
        let el = match &event {
            Event::Start(e) | Event::Empty(e) => e,
            Event::Eof => break,
            _ => continue,
        };
        let attrs: Vec<(String, String)> = el
            .attributes()
            .map(|a| {
                let a = a.map_err(|e| Error::format("heatmap svg", e))?;
                let v = a.unescape_value().map_err(|e| Error::format("heatmap svg", e))?;
                Ok((String::from_utf8_lossy(a.key.as_ref()).into_owned(), v.into_owned()))
            })
            .collect::<Result<_>>()?;
        match el.name().as_ref() {
            b"svg" => {
                let metric = match attr(&attrs, "data-metric") {
                    Some("feedback") => HeatmapMetric::Feedback,
                    Some("feedforward") => HeatmapMetric::Feedforward,
                    _ => return Err(Error::format("heatmap svg", "bad data-metric")),
                };
                let mode = match attr(&attrs, "data-mode") {
                    Some("uniform_grid") => HeatmapMode::UniformGrid,
                    Some("visited_states") => HeatmapMode::VisitedStates,
                    _ => return Err(Error::format("heatmap svg", "bad data-mode")),
                };
                grid = Some(HeatmapGrid::empty(
                    [need(&attrs, "data-dim-x")?, need(&attrs, "data-dim-y")?],
                    [
                        [need(&attrs, "data-x-min")?, need(&attrs, "data-x-max")?],
                        [need(&attrs, "data-y-min")?, need(&attrs, "data-y-max")?],
                    ],
                    [need(&attrs, "data-bins-x")?, need(&attrs, "data-bins-y")?],
                    metric,
                    mode,
                ));
            }
            b"rect" if attr(&attrs, "data-ix").is_some() => {
                let g = grid.as_mut().ok_or_else(|| Error::format("heatmap svg", "cell before header"))?;
                let (ix, iy): (usize, usize) = (need(&attrs, "data-ix")?, need(&attrs, "data-iy")?);
                if ix >= g.bins[0] || iy >= g.bins[1] {
                    return Err(Error::format("heatmap svg", "cell out of range"));
                }
                let i = g.index(ix, iy);
                g.counts[i] = need(&attrs, "data-count")?;
                g.values[i] = match attr(&attrs, "data-empty") {
                    Some(_) => None,
                    None => Some(need(&attrs, "data-value")?),
                };
            }
            _ => {}
        }
    }
    grid.ok_or_else(|| Error::format("heatmap svg", "no svg element"))
}

/// One plotted quantity of [`CurveRow`].
#[derive(Debug, Clone, Copy)]
struct Panel {
    title: &'static str,
    mean: fn(&CurveRow) -> f64,
    std: fn(&CurveRow) -> f64,
}

const PANELS: [Panel; 4] = [
    Panel { title: "total reward", mean: |r| r.return_mean, std: |r| r.return_std },
    Panel { title: "feedback norm", mean: |r| r.feedback_mean, std: |r| r.feedback_std },
    Panel { title: "feedforward norm", mean: |r| r.feedforward_mean, std: |r| r.feedforward_std },
    Panel { title: "energy", mean: |r| r.energy_mean, std: |r| r.energy_std },
];

/// Learning curves: one panel per metric, one line per arm, with a shaded
/// band of one standard deviation across seeds. The horizontal unit is the
/// training epoch.
pub fn curves_svg(rows: &[CurveRow], title: &str) -> String {
    let mut arms: Vec<&str> = Vec::new();
    for r in rows {
        if !arms.contains(&r.arm.as_str()) {
            arms.push(&r.arm);
        }
    }
    let (pw, ph, gap) = (520.0, 180.0, 50.0);
    let left = 70.0;
    let w = left + pw + 160.0;
    let h = 40.0 + PANELS.len() as f64 * (ph + gap);
    let max_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;
    let min_epoch = rows.iter().map(|r| r.epoch).min().unwrap_or(0) as f64;
    let x_of = |e: usize| {
        let span = (max_epoch - min_epoch).max(1.0);
        left + (e as f64 - min_epoch) / span * pw
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for (p, panel) in PANELS.iter().enumerate() {
        let top = 40.0 + p as f64 * (ph + gap);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in rows {
            let (m, sd) = ((panel.mean)(r), (panel.std)(r));
            if m.is_finite() && sd.is_finite() {
                lo = lo.min(m - sd);
                hi = hi.max(m + sd);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi <= lo {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let y_of = |v: f64| top + ph - (v - lo) / (hi - lo) * ph;
        let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(s, r#"<text x="{left}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, top - 6.0, panel.title);
        let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{hi:.4}</text>"#, top + 10.0);
        let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{lo:.4}</text>"#, top + ph);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">epoch</text>"#,
            left + pw / 2.0,
            top + ph + 14.0
        );
        for (a, arm) in arms.iter().enumerate() {
            let c = PALETTE[a % PALETTE.len()];
            let pts: Vec<&CurveRow> = rows.iter().filter(|r| r.arm == *arm).collect();
            if pts.is_empty() {
                continue;
            }
            let mut band = String::new();
            for r in &pts {
                let _ = write!(band, "{:.3},{:.3} ", x_of(r.epoch), y_of((panel.mean)(r) + (panel.std)(r)));
            }
            for r in pts.iter().rev() {
                let _ = write!(band, "{:.3},{:.3} ", x_of(r.epoch), y_of((panel.mean)(r) - (panel.std)(r)));
            }
            let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
            let line: Vec<String> = pts
                .iter()
                .map(|r| format!("{:.3},{:.3}", x_of(r.epoch), y_of((panel.mean)(r))))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, line.join(" "));
            if p == 0 {
                let ly = top + 14.0 + 16.0 * a as f64;
                let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="4" fill="{c}"/>"#, left + pw + 12.0, ly - 4.0);
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11">{}</text>"#,
                    left + pw + 30.0,
                    escape(arm)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
