//! Confusion matrices, UA/WA scores and ablation report rendering.
//!
//! Naming follows the source convention: UA is overall accuracy
//! (trace / total), WA is the mean recall over classes with support.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ablation::AblationRow;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {references} references")]
    LengthMismatch {
        predictions: usize,
        references: usize,
    },
    #[error("nothing to score")]
    Empty,
    #[error("class {value} out of range for {classes} classes")]
    ClassOutOfRange { value: usize, classes: usize },
    #[error("no reference class has support")]
    NoSupport,
}

/// C×C counts; rows are reference labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, prediction: usize) -> u64 {
        self.counts[reference * self.classes + prediction]
    }

    pub fn record(&mut self, reference: usize, prediction: usize) -> Result<(), MetricsError> {
        for value in [reference, prediction] {
            if value >= self.classes {
                return Err(MetricsError::ClassOutOfRange {
                    value,
                    classes: self.classes,
                });
            }
        }
        self.counts[reference * self.classes + prediction] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Number of utterances whose reference is `class`.
    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    /// `None` when the class has no support.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n = self.support(class);
        (n > 0).then(|| self.get(class, class) as f64 / n as f64)
    }
}

pub fn confusion(
    predictions: &[usize],
    references: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &r) in predictions.iter().zip(references) {
        cm.record(r, p)?;
    }
    Ok(cm)
}

/// Overall fraction correct.
pub fn unweighted_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Mean recall over reference classes with nonzero support.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let recalls: Vec<f64> = (0..cm.classes()).filter_map(|c| cm.recall(c)).collect();
    if recalls.is_empty() {
        return Err(MetricsError::NoSupport);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// UA and WA straight from prediction/reference lists.
pub fn score(
    predictions: &[usize],
    references: &[usize],
    classes: usize,
) -> Result<(f64, f64), MetricsError> {
    let cm = confusion(predictions, references, classes)?;
    Ok((unweighted_accuracy(&cm)?, weighted_accuracy(&cm)?))
}

fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn segs(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |s| format!("{s:.1}"))
}

/// CSV report for one corpus: `context,ua,wa,segs`, percentages.
pub fn render_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("context,ua,wa,segs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.spec,
            percent(r.ua),
            percent(r.wa),
            segs(r.segs_percent)
        );
    }
    out
}

/// Aligned text table: one UA, WA and SEGS% column per corpus.
/// All corpora must have been evaluated on the same spec list.
pub fn render_table(corpora: &[(&str, &[AblationRow])]) -> String {
    let n_rows = corpora.first().map_or(0, |(_, rows)| rows.len());
    let mut header = vec!["Context".to_string()];
    for metric in ["UA%", "WA%", "SEGS%"] {
        for (name, _) in corpora {
            header.push(format!("{metric} {name}"));
        }
    }
    let mut table = vec![header];
    for i in 0..n_rows {
        let mut line = vec![corpora[0].1[i].spec.to_string()];
        line.extend(corpora.iter().map(|(_, rows)| percent(rows[i].ua)));
        line.extend(corpora.iter().map(|(_, rows)| percent(rows[i].wa)));
        line.extend(corpora.iter().map(|(_, rows)| segs(rows[i].segs_percent)));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();

    let mut out = String::from(
        "# UA = correct / total; WA = mean per-class recall (classes without support excluded)\n",
    );
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::SkipSpec;

    #[test]
    fn four_pair_example() {
        let cm = confusion(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(2, 2)), (1, 1, 1));
        assert_eq!(cm.get(1, 0), 1);
        assert_eq!(unweighted_accuracy(&cm).unwrap(), 0.75);
        let wa = weighted_accuracy(&cm).unwrap();
        assert!((wa - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_pair() {
        let cm = confusion(&[2], &[0], 3).unwrap();
        assert_eq!(cm.get(0, 2), 1);
        assert_eq!(cm.total(), 1);
        assert_eq!(unweighted_accuracy(&cm).unwrap(), 0.0);
    }

    #[test]
    fn perfect_is_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.trace(), cm.total());
        assert_eq!(unweighted_accuracy(&cm).unwrap(), 1.0);
        assert_eq!(weighted_accuracy(&cm).unwrap(), 1.0);
    }

    #[test]
    fn binary_weighted_accuracy() {
        // class 1 positive: TP=3, FN=1; class 0 negative: TN=2, FP=1
        let refs = [1, 1, 1, 1, 0, 0, 0];
        let preds = [1, 1, 1, 0, 0, 0, 1];
        let (_, wa) = score(&preds, &refs, 2).unwrap();
        assert!((wa - 17.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(
            confusion(&[0], &[0, 1], 2).unwrap_err(),
            MetricsError::LengthMismatch {
                predictions: 1,
                references: 2
            }
        );
        assert_eq!(confusion(&[], &[], 2).unwrap_err(), MetricsError::Empty);
        assert!(confusion(&[3], &[0], 3).is_err());
        let empty = ConfusionMatrix::new(3);
        assert_eq!(unweighted_accuracy(&empty).unwrap_err(), MetricsError::Empty);
        assert_eq!(weighted_accuracy(&empty).unwrap_err(), MetricsError::NoSupport);
    }

    #[test]
    fn zero_support_class_excluded() {
        let (_, wa) = score(&[0, 1, 1], &[0, 1, 0], 4).unwrap();
        assert!((wa - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rendering() {
        let rows = vec![
            AblationRow {
                spec: SkipSpec::new(0, 0),
                ua: 0.7330,
                wa: 0.5429,
                segs_percent: None,
            },
            AblationRow {
                spec: SkipSpec::new(0, 30),
                ua: 0.5,
                wa: 0.25,
                segs_percent: Some(100.0),
            },
        ];
        let csv = render_csv(&rows);
        assert_eq!(csv, "context,ua,wa,segs\n0-0,73.30,54.29,-\n0-30,50.00,25.00,100.0\n");
        let text = render_table(&[("MOS", &rows[..1])]);
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains("73.30"));
        assert!(lines[1].ends_with('-'));
    }
}
