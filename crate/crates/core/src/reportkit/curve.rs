use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surgery::Depth;
use crate::trainer::{retention, roles, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveY {
    Accuracy,
    Retention,
}

impl std::str::FromStr for CurveY {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "retention" => Ok(Self::Retention),
            _ => Err(Error::InvalidArgument(format!("curve y must be accuracy or retention, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub depth: usize,
    /// Mean over replicates.
    pub value: f64,
    pub run_ids: Vec<String>,
    pub baseline_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub role: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub tag: String,
    pub y: CurveY,
    pub series: Vec<CurveSeries>,
}

const CURVE_ROLES: [&str; 3] = [roles::TRANSFER, roles::CONTROL, roles::REVERSE];

/// Collects depth curves for `tag`. Retention is recomputed from each
/// record's final accuracy and its linked baseline record.
pub fn curve_data(records: &[RunRecord], tag: &str, y: CurveY) -> Result<CurveData> {
    let by_id: BTreeMap<&str, &RunRecord> = records.iter().map(|r| (r.run_id.as_str(), r)).collect();
    let mut groups: BTreeMap<(&str, usize), Vec<(&RunRecord, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.tag == tag && r.is_completed()) {
        let Some(role) = CURVE_ROLES.iter().find(|&&role| role == r.role) else {
            continue;
        };
        let Some(Depth::N(depth)) = r.plan_summary.as_ref().map(|p| p.depth_n) else {
            continue;
        };
        let value = match y {
            CurveY::Accuracy => r.final_acc,
            CurveY::Retention => {
                let base = r
                    .baseline_ref
                    .as_deref()
                    .and_then(|id| by_id.get(id))
                    .ok_or_else(|| Error::Format(format!("run {} has no resolvable baseline", r.run_id)))?;
                retention(r.final_acc, base.final_acc)?
            }
        };
        groups.entry((role, depth)).or_default().push((r, value));
    }
    if groups.is_empty() {
        return Err(Error::NoRecords(tag.to_string()));
    }
    let mut series: Vec<CurveSeries> = Vec::new();
    for ((role, depth), runs) in groups {
        let point = CurvePoint {
            depth,
            value: runs.iter().map(|(_, v)| v).sum::<f64>() / runs.len() as f64,
            run_ids: runs.iter().map(|(r, _)| r.run_id.clone()).collect(),
            baseline_refs: runs.iter().filter_map(|(r, _)| r.baseline_ref.clone()).collect(),
        };
        match series.iter_mut().find(|s| s.role == role) {
            Some(s) => s.points.push(point),
            None => series.push(CurveSeries {
                role: role.to_string(),
                points: vec![point],
            }),
        }
    }
    series.sort_by_key(|s| CURVE_ROLES.iter().position(|r| *r == s.role));
    Ok(CurveData {
        tag: tag.to_string(),
        y,
        series,
    })
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Line chart of depth against the chosen y.
pub fn render_svg(data: &CurveData) -> String {
    let points = data.series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.depth as f64);
        x1 = x1.max(p.depth as f64);
        y0 = y0.min(p.value);
        y1 = y1.max(p.value);
    }
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = ((y1 - y0) * 0.1).max(0.01);
    y0 -= pad;
    y1 += pad;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{right}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            left - 6.0,
            y + 4.0
        );
    }
    let mut depths: Vec<usize> = data.series.iter().flat_map(|s| s.points.iter().map(|p| p.depth)).collect();
    depths.sort_unstable();
    depths.dedup();
    for d in depths {
        let x = sx(d as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#,
            bottom + 18.0
        );
    }
    let ylabel = match data.y {
        CurveY::Accuracy => "accuracy",
        CurveY::Retention => "retention",
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">depth n</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(&data.tag)
    );
    for (i, series) in data.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = series
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.depth as f64), sy(p.value)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            path.join(" ")
        );
        for p in &series.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#,
                sx(p.depth as f64),
                sy(p.value)
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            right - 110.0,
            right - 90.0,
            right - 84.0,
            ly + 4.0,
            escape(&series.role)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<out>/<tag>_<y>.svg` and the plotted points as `.json`.
pub fn curve_plot(records: &[RunRecord], tag: &str, y: CurveY, out: &Path) -> Result<(PathBuf, PathBuf, CurveData)> {
    let data = curve_data(records, tag, y)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stem = format!("{tag}_{}", if y == CurveY::Accuracy { "accuracy" } else { "retention" });
    let svg = out.join(format!("{stem}.svg"));
    let json = out.join(format!("{stem}.json"));
    std::fs::write(&svg, render_svg(&data)).map_err(|e| Error::io(&svg, e))?;
    std::fs::write(&json, serde_json::to_string_pretty(&data)?).map_err(|e| Error::io(&json, e))?;
    Ok((svg, json, data))
}
