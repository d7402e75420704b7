//! Attention traces, frame-to-token aggregation and SVG figures.

mod figure;

use std::fmt::Write as _;

use thiserror::Error;

use crate::ablation::{skip_context, SkipSpec};
use crate::corpus::{AlignmentTiers, CvClass};
use crate::dsp::FrameConfig;
use crate::model::{predict, ModelError, ModelParams};
use crate::numerics::Scalar;
use crate::training::Example;

pub use figure::{render_figure, render_svg, FIGURE_HEIGHT, FIGURE_WIDTH, PLOT_LEFT, PLOT_RIGHT};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("utterance {id}: {source}")]
    Model { id: String, source: ModelError },
    #[error("empty trace")]
    EmptyTrace,
    #[error("cannot write figure {path}: {source}")]
    Write {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Per-frame attention of one utterance under one skip spec.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub utterance_id: String,
    pub spec: SkipSpec,
    /// Start times of the surviving frames, in seconds from the original
    /// utterance start.
    pub frame_times: Vec<f64>,
    pub weights: Vec<f64>,
    pub prediction: usize,
    pub reference: usize,
    /// Whether the spec actually cut frames.
    pub modified: bool,
    /// Length of the original utterance in seconds.
    pub duration: f64,
}

impl AttentionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_time,weight\n");
        for (t, w) in self.frame_times.iter().zip(&self.weights) {
            let _ = writeln!(out, "{t:.4},{w:.8}");
        }
        out
    }
}

/// Skips context, runs the model and keeps the attention weights.
pub fn attention_trace<T: Scalar>(
    params: &ModelParams<T>,
    example: &Example,
    spec: SkipSpec,
    duration: f64,
) -> Result<AttentionTrace, InterpretError> {
    let (features, modified) = skip_context(&example.features, spec);
    let pred = predict(params, &features).map_err(|source| InterpretError::Model {
        id: example.id.clone(),
        source,
    })?;
    Ok(AttentionTrace {
        utterance_id: example.id.clone(),
        spec,
        frame_times: features.frame_times().to_vec(),
        weights: pred.weights,
        prediction: pred.class,
        reference: example.label,
        modified,
        duration,
    })
}

/// Aggregated attention on one word or phone.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWeight {
    pub start: f64,
    pub end: f64,
    pub token: String,
    /// Set for phones only.
    pub class: Option<CvClass>,
    pub weight: f64,
}

/// Attention mass per token for both tiers. Each tier's token weights plus
/// its out-of-token mass add up to the trace total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenWeights {
    pub words: Vec<TokenWeight>,
    pub phones: Vec<TokenWeight>,
    pub words_outside: f64,
    pub phones_outside: f64,
}

impl TokenWeights {
    /// Share of the attention mass that falls on vowel phones.
    pub fn vowel_share(&self) -> f64 {
        self.phones
            .iter()
            .filter(|p| p.class == Some(CvClass::Vowel))
            .map(|p| p.weight)
            .sum()
    }
}

const BOUNDARY_EPS: f64 = 1e-9;

/// Index of the token containing time `c`; a time on a shared boundary
/// belongs to the earlier token. `spans` must be sorted.
fn locate(spans: &[(f64, f64)], c: f64) -> Option<usize> {
    spans
        .iter()
        .position(|&(s, e)| c >= s - BOUNDARY_EPS && c <= e + BOUNDARY_EPS)
}

fn aggregate(trace: &AttentionTrace, half_window: f64, spans: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let mut mass = vec![0.0; spans.len()];
    let mut outside = 0.0;
    for (t, w) in trace.frame_times.iter().zip(&trace.weights) {
        match locate(spans, t + half_window) {
            Some(i) => mass[i] += w,
            None => outside += w,
        }
    }
    (mass, outside)
}

/// Assigns each frame to the token containing its centre time.
pub fn align_frames(trace: &AttentionTrace, tiers: &AlignmentTiers, frame: &FrameConfig) -> TokenWeights {
    let half = frame.window_samples() as f64 / frame.sample_rate as f64 / 2.0;

    let mut words: Vec<_> = tiers.words.iter().collect();
    words.sort_by(|a, b| a.start.total_cmp(&b.start));
    let spans: Vec<_> = words.iter().map(|w| (w.start, w.end)).collect();
    let (word_mass, words_outside) = aggregate(trace, half, &spans);

    let mut phones: Vec<_> = tiers.phones.iter().collect();
    phones.sort_by(|a, b| a.start.total_cmp(&b.start));
    let spans: Vec<_> = phones.iter().map(|p| (p.start, p.end)).collect();
    let (phone_mass, phones_outside) = aggregate(trace, half, &spans);

    TokenWeights {
        words: words
            .iter()
            .zip(word_mass)
            .map(|(w, weight)| TokenWeight {
                start: w.start,
                end: w.end,
                token: w.token.clone(),
                class: None,
                weight,
            })
            .collect(),
        phones: phones
            .iter()
            .zip(phone_mass)
            .map(|(p, weight)| TokenWeight {
                start: p.start,
                end: p.end,
                token: p.token.clone(),
                class: Some(p.class),
                weight,
            })
            .collect(),
        words_outside,
        phones_outside,
    }
}
