//! Context skipping: drop frames from the start/end of each test segment
//! and measure how scores move.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::dsp::FeatureSequence;
use crate::metrics::{score, MetricsError};
use crate::model::{predict, ModelError, ModelParams};
use crate::numerics::Scalar;
use crate::training::Example;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("bad skip spec `{0}`: expected L-R with non-negative integers")]
    BadSpec(String),
    #[error("no specs given")]
    NoSpecs,
    #[error("empty test split")]
    EmptySplit,
    #[error("utterance {id}: {source}")]
    Utterance { id: String, source: ModelError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Frames removed from the segment start (`left`) and end (`right`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkipSpec {
    pub left: usize,
    pub right: usize,
}

impl SkipSpec {
    pub const BASELINE: SkipSpec = SkipSpec { left: 0, right: 0 };

    pub fn new(left: usize, right: usize) -> Self {
        Self { left, right }
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::BASELINE
    }

    /// Whether a segment of `frames` frames is long enough to be cut.
    pub fn modifies(&self, frames: usize) -> bool {
        frames > self.left + self.right
    }

    /// Comma-separated `L-R` list.
    pub fn parse_list(s: &str) -> Result<Vec<SkipSpec>, AblationError> {
        let specs = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        if specs.is_empty() {
            return Err(AblationError::NoSpecs);
        }
        Ok(specs)
    }
}

impl fmt::Display for SkipSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.left, self.right)
    }
}

impl FromStr for SkipSpec {
    type Err = AblationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AblationError::BadSpec(s.to_string());
        let (l, r) = s.trim().split_once('-').ok_or_else(bad)?;
        Ok(Self {
            left: l.parse().map_err(|_| bad())?,
            right: r.parse().map_err(|_| bad())?,
        })
    }
}

/// One line of an ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub spec: SkipSpec,
    pub ua: f64,
    pub wa: f64,
    /// Share of segments actually cut; absent for the baseline.
    pub segs_percent: Option<f64>,
}

/// Frames `[left, T−right)` when `T > left + right`, otherwise the input
/// unchanged. The flag says whether anything was removed.
pub fn skip_context(features: &FeatureSequence, spec: SkipSpec) -> (FeatureSequence, bool) {
    let t = features.len();
    if spec.is_baseline() || !spec.modifies(t) {
        return (features.clone(), false);
    }
    (features.slice(spec.left, t - spec.right), true)
}

/// Percentage (one decimal) of segments the spec modifies; `None` for the
/// baseline and for an empty list.
pub fn segs_percent(lengths: &[usize], spec: SkipSpec) -> Option<f64> {
    if spec.is_baseline() || lengths.is_empty() {
        return None;
    }
    let cut = lengths.iter().filter(|&&t| spec.modifies(t)).count();
    let pct = 100.0 * cut as f64 / lengths.len() as f64;
    Some((pct * 10.0).round() / 10.0)
}

/// Baseline first (if present), then the remaining specs in input order.
pub fn order_specs(specs: &[SkipSpec]) -> Vec<SkipSpec> {
    let mut out: Vec<SkipSpec> = specs.iter().copied().filter(SkipSpec::is_baseline).take(1).collect();
    out.extend(specs.iter().copied().filter(|s| !s.is_baseline()));
    out
}

/// Scores the test split under every spec.
pub fn ablation_grid<T: Scalar>(
    params: &ModelParams<T>,
    test: &[Example],
    specs: &[SkipSpec],
) -> Result<Vec<AblationRow>, AblationError> {
    if specs.is_empty() {
        return Err(AblationError::NoSpecs);
    }
    if test.is_empty() {
        return Err(AblationError::EmptySplit);
    }
    let classify = |ex: &Example, features: &FeatureSequence| {
        predict(params, features)
            .map(|p| p.class)
            .map_err(|source| AblationError::Utterance {
                id: ex.id.clone(),
                source,
            })
    };
    // unmodified utterances reuse the baseline prediction
    let baseline: Vec<usize> = test
        .par_iter()
        .map(|ex| classify(ex, &ex.features))
        .collect::<Result<_, _>>()?;
    let references: Vec<usize> = test.iter().map(|ex| ex.label).collect();
    let lengths: Vec<usize> = test.iter().map(|ex| ex.features.len()).collect();
    let classes = params.config().num_classes;

    order_specs(specs)
        .into_iter()
        .map(|spec| {
            let predictions: Vec<usize> = test
                .par_iter()
                .zip(&baseline)
                .map(|(ex, &base)| match skip_context(&ex.features, spec) {
                    (cut, true) => classify(ex, &cut),
                    (_, false) => Ok(base),
                })
                .collect::<Result<_, _>>()?;
            let (ua, wa) = score(&predictions, &references, classes)?;
            Ok(AblationRow {
                spec,
                ua,
                wa,
                segs_percent: segs_percent(&lengths, spec),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize) -> FeatureSequence {
        FeatureSequence::new((0..t * 2).map(|v| v as f64).collect(), 2, 0.0, 0.01, 0).unwrap()
    }

    #[test]
    fn boundary_at_sum() {
        let spec = SkipSpec::new(200, 100);
        let (out, modified) = skip_context(&seq(300), spec);
        assert!(!modified);
        assert_eq!(out.len(), 300);
        let (out, modified) = skip_context(&seq(301), spec);
        assert!(modified);
        assert_eq!(out.len(), 1);
        assert_eq!(out.frame(0), seq(301).frame(200));
        assert!((out.frame_times()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn baseline_is_identity() {
        for t in [1, 5, 400] {
            let (out, modified) = skip_context(&seq(t), SkipSpec::BASELINE);
            assert!(!modified);
            assert_eq!(out, seq(t));
        }
    }

    #[test]
    fn segs_examples() {
        let spec = SkipSpec::new(200, 100);
        assert_eq!(segs_percent(&[100, 350, 400], spec), Some(66.7));
        assert_eq!(segs_percent(&[100, 350], SkipSpec::BASELINE), None);
        assert_eq!(segs_percent(&[10; 7], SkipSpec::new(0, 30)), Some(0.0));
    }

    #[test]
    fn spec_syntax() {
        let s: SkipSpec = "20-200".parse().unwrap();
        assert_eq!(s, SkipSpec::new(20, 200));
        assert_eq!(s.to_string(), "20-200");
        assert!("20".parse::<SkipSpec>().is_err());
        assert!("-1-2".parse::<SkipSpec>().is_err());
        assert!("a-2".parse::<SkipSpec>().is_err());
        let list = SkipSpec::parse_list("0-0,0-30, 0-100,0-200").unwrap();
        assert_eq!(list.len(), 4);
        assert!(SkipSpec::parse_list("").is_err());
    }

    #[test]
    fn baseline_moves_first() {
        let specs = SkipSpec::parse_list("0-30,0-0,20-0").unwrap();
        let ordered: Vec<String> = order_specs(&specs).iter().map(|s| s.to_string()).collect();
        assert_eq!(ordered, ["0-0", "0-30", "20-0"]);
    }
}
