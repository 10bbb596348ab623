//! Corpus summary statistics and SVG rendering. The same drawing routines
//! back the CLI `report` subcommand and the browser demo: scenario plots,
//! histograms, and an origin-aligned trajectory fan.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::{PolylineKind, RoadMap, Scenario, FRAME_COUNT, FRAME_DT, HISTORY_END};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl HistogramData {
    pub fn build(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0usize; bins];
        let w = (hi - lo) / bins as f64;
        for v in values {
            let idx = (((v - lo) / w) as isize).clamp(0, bins as isize - 1) as usize;
            counts[idx] += 1;
        }
        HistogramData { lo, hi, counts }
    }
}

/// The corpus summary trio: agent-count histogram, speed histogram, and
/// origin-aligned per-vehicle trajectories (heading-aligned, colored by
/// mean speed in the SVG rendering).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub scenario_count: usize,
    pub agent_counts: HistogramData,
    pub speeds: HistogramData,
    pub trajectories: Vec<TrajectoryFanEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFanEntry {
    pub points: Vec<[f64; 2]>,
    pub mean_speed: f64,
}

const FAN_CAP: usize = 400;

pub fn corpus_summary(scenarios: &[Scenario]) -> CorpusSummary {
    let agent_counts = HistogramData::build(
        scenarios.iter().map(|s| s.tracks.len() as f64),
        0.0,
        33.0,
        33,
    );

    let mut speeds: Vec<f64> = Vec::new();
    for s in scenarios {
        for t in &s.tracks {
            for w in t.states.windows(2) {
                if w[0].valid && w[1].valid {
                    let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
                    speeds.push(d / FRAME_DT);
                }
            }
        }
    }
    let speed_hist = HistogramData::build(speeds.into_iter(), 0.0, 40.0, 40);

    let mut trajectories = Vec::new();
    'outer: for s in scenarios {
        for t in &s.tracks {
            if trajectories.len() >= FAN_CAP {
                break 'outer;
            }
            let valid: Vec<&crate::model::AgentState> =
                t.states.iter().filter(|st| st.valid).collect();
            if valid.len() < 2 {
                continue;
            }
            let origin = valid[0];
            let (sin_h, cos_h) = origin.heading.sin_cos();
            let points: Vec<[f64; 2]> = valid
                .iter()
                .map(|st| {
                    let dx = st.x - origin.x;
                    let dy = st.y - origin.y;
                    [cos_h * dx + sin_h * dy, -sin_h * dx + cos_h * dy]
                })
                .collect();
            let total: f64 = points
                .windows(2)
                .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
                .sum();
            let mean_speed = total / ((valid.len() - 1) as f64 * FRAME_DT);
            trajectories.push(TrajectoryFanEntry { points, mean_speed });
        }
    }

    CorpusSummary {
        scenario_count: scenarios.len(),
        agent_counts,
        speeds: speed_hist,
        trajectories,
    }
}

// --- tiny SVG builder -------------------------------------------------------

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            x, y, w, h, fill
        ));
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        self.body.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"{:.2}\"/>",
            x1, y1, x2, y2, stroke, width
        ));
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, dashed: bool) {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                d.push(' ');
            }
            d.push_str(&format!("{:.2},{:.2}", x, y));
        }
        let dash = if dashed { " stroke-dasharray=\"6,6\"" } else { "" };
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{:.2}\"{}/>",
            d, stroke, width, dash
        ));
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        self.body.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"{:.1}\" font-family=\"monospace\" fill=\"#333\">{}</text>",
            x, y, size, content
        ));
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {:.0} {:.0}\" width=\"{:.0}\" height=\"{:.0}\"><rect width=\"100%\" height=\"100%\" fill=\"#fafafa\"/>{}</svg>",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

fn speed_color(speed: f64, max_speed: f64) -> String {
    let t = (speed / max_speed.max(1e-9)).clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t) as u8;
    let g = (60.0 + 120.0 * (1.0 - t)) as u8;
    let b = (200.0 * (1.0 - t) + 30.0) as u8;
    format!("#{:02x}{:02x}{:02x}", r, g, b)
}

pub fn histogram_svg(hist: &HistogramData, title: &str, unit: &str) -> String {
    let (w, h, margin) = (640.0, 360.0, 46.0);
    let mut svg = Svg::new(w, h);
    let max = hist.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let plot_w = w - 2.0 * margin;
    let plot_h = h - 2.0 * margin;
    let bar_w = plot_w / hist.counts.len() as f64;
    for (i, &c) in hist.counts.iter().enumerate() {
        let bh = plot_h * c as f64 / max;
        svg.rect(
            margin + i as f64 * bar_w,
            h - margin - bh,
            bar_w * 0.9,
            bh,
            "#4878b0",
        );
    }
    svg.line(margin, h - margin, w - margin, h - margin, "#333", 1.0);
    svg.line(margin, margin, margin, h - margin, "#333", 1.0);
    svg.text(margin, margin - 14.0, 14.0, title);
    svg.text(margin, h - margin + 28.0, 11.0, &format!("{:.0} {}", hist.lo, unit));
    svg.text(
        w - margin - 50.0,
        h - margin + 28.0,
        11.0,
        &format!("{:.0} {}", hist.hi, unit),
    );
    svg.text(margin - 40.0, margin + 6.0, 11.0, &format!("{}", max as usize));
    svg.finish()
}

pub fn trajectory_fan_svg(summary: &CorpusSummary) -> String {
    let (w, h, margin) = (640.0, 360.0, 30.0);
    let mut svg = Svg::new(w, h);
    let mut max_x: f64 = 10.0;
    let mut max_abs_y: f64 = 2.0;
    let mut max_speed: f64 = 1.0;
    for t in &summary.trajectories {
        for p in &t.points {
            max_x = max_x.max(p[0]);
            max_abs_y = max_abs_y.max(p[1].abs());
        }
        max_speed = max_speed.max(t.mean_speed);
    }
    let sx = (w - 2.0 * margin) / max_x;
    let sy = (h - 2.0 * margin) / (2.0 * max_abs_y);
    for t in &summary.trajectories {
        let pts: Vec<(f64, f64)> = t
            .points
            .iter()
            .map(|p| (margin + p[0] * sx, h / 2.0 - p[1] * sy))
            .collect();
        svg.polyline(&pts, &speed_color(t.mean_speed, max_speed), 1.0, false);
    }
    svg.text(margin, margin - 8.0, 14.0, "trajectories from origin (color = mean speed)");
    svg.finish()
}

/// Render a scenario over its map. Trajectories are drawn full-length with
/// the history portion emphasized; invalid frames break the polyline.
pub fn scenario_svg(scenario: &Scenario, map: &RoadMap, title: &str) -> String {
    let (w, h) = (860.0, 320.0);
    let margin = 24.0;

    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for p in map.polylines.iter().flat_map(|p| p.points.iter()) {
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    for st in scenario
        .tracks
        .iter()
        .flat_map(|t| t.states.iter())
        .filter(|s| s.valid)
    {
        min_x = min_x.min(st.x);
        max_x = max_x.max(st.x);
        min_y = min_y.min(st.y);
        max_y = max_y.max(st.y);
    }
    if !min_x.is_finite() {
        min_x = 0.0;
        max_x = 100.0;
    }
    min_x -= 10.0;
    max_x += 10.0;
    min_y -= 2.0;
    max_y += 2.0;

    let sx = (w - 2.0 * margin) / (max_x - min_x);
    let sy = (h - 2.0 * margin) / (max_y - min_y);
    let to = |x: f64, y: f64| (margin + (x - min_x) * sx, h - margin - (y - min_y) * sy);

    let mut svg = Svg::new(w, h);
    for poly in &map.polylines {
        let pts: Vec<(f64, f64)> = poly.points.iter().map(|p| to(p[0], p[1])).collect();
        match poly.kind {
            PolylineKind::Centerline => svg.polyline(&pts, "#d8d8d8", 1.0, false),
            PolylineKind::BoundaryDashed => svg.polyline(&pts, "#9a9a9a", 1.0, true),
            PolylineKind::BoundarySolid => svg.polyline(&pts, "#9a9a9a", 1.2, false),
            PolylineKind::RoadEdge => svg.polyline(&pts, "#444", 1.8, false),
        }
    }

    let mut max_speed: f64 = 1.0;
    for t in &scenario.tracks {
        for win in t.states.windows(2) {
            if win[0].valid && win[1].valid {
                let d =
                    ((win[1].x - win[0].x).powi(2) + (win[1].y - win[0].y).powi(2)).sqrt();
                max_speed = max_speed.max(d / FRAME_DT);
            }
        }
    }

    for track in &scenario.tracks {
        // Split into contiguous valid runs so gaps stay visible.
        let mut run: Vec<(f64, f64)> = Vec::new();
        let mut run_speed = 0.0;
        let flush = |run: &mut Vec<(f64, f64)>, run_speed: f64, svg: &mut Svg| {
            if run.len() >= 2 {
                svg.polyline(run, &speed_color(run_speed, max_speed), 1.6, false);
            }
            run.clear();
        };
        for f in 0..FRAME_COUNT.min(track.states.len()) {
            let st = &track.states[f];
            if st.valid {
                let p = to(st.x, st.y);
                if let Some(last) = run.last() {
                    let d = ((p.0 - last.0).powi(2) + (p.1 - last.1).powi(2)).sqrt();
                    run_speed = d / (FRAME_DT * sx.max(1e-9));
                }
                run.push(p);
            } else {
                flush(&mut run, run_speed, &mut svg);
            }
        }
        flush(&mut run, run_speed, &mut svg);

        // Box at the current frame.
        if let Some(st) = track.states.get(HISTORY_END).filter(|s| s.valid) {
            let (cx, cy) = to(st.x, st.y);
            svg.rect(
                cx - track.length / 2.0 * sx,
                cy - track.width / 2.0 * sy,
                track.length * sx,
                track.width * sy,
                "#222",
            );
        }
    }
    svg.text(margin, 16.0, 13.0, title);
    svg.finish()
}

/// Results table in the usual column order.
pub fn render_results_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>10} {:>10} {:>12} {:>10} {:>10}\n",
        "Method", "Realism", "Kinematic", "Interactive", "Map-Based", "minADE"
    ));
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<24} {:>10.4} {:>10.4} {:>12.4} {:>10.4} {:>10.4}\n",
            name, r.realism, r.kinematic, r.interactive, r.map_based, r.min_ade
        ));
    }
    out
}

pub fn write_summary(
    summary: &CorpusSummary,
    dir: &std::path::Path,
) -> Result<()> {
    use crate::error::Error;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(dir.join("summary.json"), json)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    std::fs::write(
        dir.join("agent_counts.svg"),
        histogram_svg(&summary.agent_counts, "vehicles per scenario", "agents"),
    )
    .map_err(|e| Error::io(dir.display().to_string(), e))?;
    std::fs::write(
        dir.join("speeds.svg"),
        histogram_svg(&summary.speeds, "speed distribution", "m/s"),
    )
    .map_err(|e| Error::io(dir.display().to_string(), e))?;
    std::fs::write(dir.join("trajectory_fan.svg"), trajectory_fan_svg(summary))
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(())
}
