use std::fmt::Write as _;
use std::path::Path;

use super::{AttentionTrace, InterpretError};
use crate::corpus::{label_name, AlignmentTiers, CvClass};
use crate::dsp::PitchContour;

pub const FIGURE_WIDTH: f64 = 1200.0;
pub const FIGURE_HEIGHT: f64 = 600.0;
pub const PLOT_LEFT: f64 = 90.0;
pub const PLOT_RIGHT: f64 = 1170.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 560.0;
const GAP: f64 = 30.0;

const VOWEL_FILL: &str = "#e4572e";
const CONSONANT_FILL: &str = "#4c9bd6";
const SILENCE_FILL: &str = "#d9d9d9";
const WORD_FILL: &str = "#f2f2f2";

struct Axis {
    t1: f64,
}

impl Axis {
    fn x(&self, t: f64) -> f64 {
        PLOT_LEFT + (PLOT_RIGHT - PLOT_LEFT) * (t / self.t1).clamp(0.0, 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open_track(out: &mut String, name: &str, axis: &Axis, y0: f64, y1: f64) {
    let _ = writeln!(
        out,
        "<g class=\"track\" id=\"{name}\" data-x0=\"{PLOT_LEFT:.2}\" data-x1=\"{PLOT_RIGHT:.2}\" data-t0=\"0.0000\" data-t1=\"{:.4}\">",
        axis.t1
    );
    let _ = writeln!(
        out,
        "<rect x=\"{PLOT_LEFT:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#999999\"/>",
        PLOT_RIGHT - PLOT_LEFT,
        y1 - y0
    );
}

fn track_label(out: &mut String, text: &str, y0: f64, y1: f64) {
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"end\">{text}</text>",
        PLOT_LEFT - 8.0,
        (y0 + y1) / 2.0 + 4.0
    );
}

fn attention_track(out: &mut String, trace: &AttentionTrace, axis: &Axis, y0: f64, y1: f64) {
    open_track(out, "attention", axis, y0, y1);
    track_label(out, "attention", y0, y1);
    // each trace is scaled to its own peak
    let peak = trace.weights.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let y = |w: f64| y1 - (y1 - y0) * (w / peak);
    let mut area = String::new();
    let mut line = String::new();
    if let (Some(first), Some(last)) = (trace.frame_times.first(), trace.frame_times.last()) {
        let _ = write!(area, "{:.2},{:.2} ", axis.x(*first), y1);
        for (t, w) in trace.frame_times.iter().zip(&trace.weights) {
            let _ = write!(area, "{:.2},{:.2} ", axis.x(*t), y(*w));
            let _ = write!(line, "{:.2},{:.2} ", axis.x(*t), y(*w));
        }
        let _ = write!(area, "{:.2},{:.2}", axis.x(*last), y1);
    }
    let _ = writeln!(
        out,
        "<polygon points=\"{area}\" fill=\"#c9dcf0\" stroke=\"none\"/>"
    );
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f4e99\" stroke-width=\"1.5\"/>",
        line.trim_end()
    );
    out.push_str("</g>\n");
}

fn interval(out: &mut String, axis: &Axis, start: f64, end: f64, y0: f64, y1: f64, fill: &str, class: &str, token: &str) {
    let (x0, x1) = (axis.x(start), axis.x(end));
    let _ = writeln!(
        out,
        "<rect class=\"{class}\" x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\" stroke=\"#ffffff\"/>",
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        (y0 + y1) / 2.0 + 3.5,
        escape(token)
    );
}

fn token_track(out: &mut String, tiers: &AlignmentTiers, axis: &Axis, y0: f64, y1: f64) {
    open_track(out, "tokens", axis, y0, y1);
    track_label(out, "words / phones", y0, y1);
    let mid = (y0 + y1) / 2.0;
    for w in &tiers.words {
        interval(out, axis, w.start, w.end, y0, mid, WORD_FILL, "word", &w.token);
    }
    for p in &tiers.phones {
        let (fill, class) = match p.class {
            CvClass::Vowel => (VOWEL_FILL, "vowel"),
            CvClass::Consonant => (CONSONANT_FILL, "consonant"),
            CvClass::Silence => (SILENCE_FILL, "silence"),
        };
        interval(out, axis, p.start, p.end, mid, y1, fill, class, &p.token);
    }
    out.push_str("</g>\n");
}

fn pitch_track(out: &mut String, pitch: &PitchContour, axis: &Axis, y0: f64, y1: f64) {
    open_track(out, "pitch", axis, y0, y1);
    track_label(out, "F0 (Hz)", y0, y1);
    let top = pitch.voiced_f0().fold(0.0, f64::max);
    let top = if top > 0.0 { (top * 1.2 / 50.0).ceil() * 50.0 } else { 500.0 };
    let y = |f: f64| y1 - (y1 - y0) * (f / top);
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{top:.0}</text>",
        PLOT_LEFT - 4.0,
        y0 + 10.0
    );
    // one polyline per voiced run
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if !run.is_empty() {
            let _ = writeln!(
                out,
                "<polyline class=\"voiced\" points=\"{}\" fill=\"none\" stroke=\"#2a9d4b\" stroke-width=\"2\"/>",
                run.trim_end()
            );
            run.clear();
        }
    };
    for i in 0..pitch.len() {
        if pitch.voiced[i] {
            let _ = write!(run, "{:.2},{:.2} ", axis.x(pitch.times[i]), y(pitch.f0[i]));
        } else {
            flush(&mut run, out);
        }
    }
    flush(&mut run, out);
    out.push_str("</g>\n");
}

fn time_axis(out: &mut String, axis: &Axis, y: f64) {
    let step = if axis.t1 > 4.0 { 0.5 } else if axis.t1 > 1.5 { 0.2 } else { 0.1 };
    let ticks = (axis.t1 / step).floor() as usize;
    for k in 0..=ticks {
        let t = k as f64 * step;
        let x = axis.x(t);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#666666\"/>",
            y + 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{t:.1}</text>",
            y + 18.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">time (s)</text>",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        y + 34.0
    );
}

/// SVG text with stacked, time-aligned attention, token and pitch tracks.
/// The token track is dropped when `tiers` is empty.
pub fn render_svg(
    trace: &AttentionTrace,
    tiers: &AlignmentTiers,
    pitch: &PitchContour,
) -> Result<String, InterpretError> {
    if trace.weights.is_empty() {
        return Err(InterpretError::EmptyTrace);
    }
    let end = trace.frame_times.last().copied().unwrap_or(0.0);
    let axis = Axis {
        t1: trace.duration.max(end).max(1e-3),
    };
    let with_tokens = !tiers.is_empty();
    let tracks = if with_tokens { 3.0 } else { 2.0 };
    let h = (BOTTOM - TOP - GAP * (tracks - 1.0)) / tracks;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 {FIGURE_WIDTH:.0} {FIGURE_HEIGHT:.0}\" width=\"{FIGURE_WIDTH:.0}\" height=\"{FIGURE_HEIGHT:.0}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<text id=\"title\" x=\"{:.2}\" y=\"32\" font-size=\"18\" text-anchor=\"middle\">{} | context {} | predicted {} | reference {}</text>",
        FIGURE_WIDTH / 2.0,
        escape(&trace.utterance_id),
        trace.spec,
        label_name(trace.prediction),
        label_name(trace.reference)
    );
    let mut y = TOP;
    attention_track(&mut out, trace, &axis, y, y + h);
    y += h + GAP;
    if with_tokens {
        token_track(&mut out, tiers, &axis, y, y + h);
        y += h + GAP;
    }
    pitch_track(&mut out, pitch, &axis, y, y + h);
    time_axis(&mut out, &axis, y + h);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Writes the figure to `path`.
pub fn render_figure(
    trace: &AttentionTrace,
    tiers: &AlignmentTiers,
    pitch: &PitchContour,
    path: &Path,
) -> Result<(), InterpretError> {
    let svg = render_svg(trace, tiers, pitch)?;
    std::fs::write(path, svg).map_err(|source| InterpretError::Write {
        path: path.to_path_buf(),
        source,
    })
}
