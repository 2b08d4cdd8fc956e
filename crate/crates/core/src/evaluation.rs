//! Detection F-measure and mean Dice against ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labeling::InstanceLabeling;
use crate::peaks::MatchCounts;

/// Harmonic mean of precision and recall; 0 when there are no true
/// positives. All-zero counts are rejected since nothing was measured.
pub fn f_measure(tp: usize, fp: usize, fn_: usize) -> Result<f64> {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Err(Error::InvalidArgument("f-measure of all-zero counts".into()));
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * p * r / (p + r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScores {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl DetectionScores {
    pub fn from_counts(counts: MatchCounts) -> Result<Self> {
        let MatchCounts { tp, fp, fn_ } = counts;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok(DetectionScores {
            counts,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f_measure: f_measure(tp, fp, fn_)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellScore {
    pub truth_id: u32,
    /// Predicted cell assigned to this truth cell, if any overlaps it.
    pub pred_id: Option<u32>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegScores {
    pub cells: Vec<CellScore>,
    pub mdice: f64,
    pub detection: Option<DetectionScores>,
}

/// Score a predicted labeling against the truth. Each truth cell takes the
/// predicted cell with the largest overlap (lowest id on ties); a predicted
/// cell may serve several truth cells.
///
/// With no truth cells, mDice is 1 for an empty prediction and 0 otherwise.
pub fn mdice(pred: &InstanceLabeling, truth: &InstanceLabeling) -> Result<SegScores> {
    if pred.dims() != truth.dims() {
        return Err(Error::InvalidArgument(format!(
            "prediction is {:?}, truth is {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let truth_ids = truth.distinct();
    let pred_ids = pred.distinct();
    let t_index = |id: u32| truth_ids.binary_search(&id).unwrap();
    let p_index = |id: u32| pred_ids.binary_search(&id).unwrap();

    let mut overlap = vec![vec![0usize; pred_ids.len()]; truth_ids.len()];
    let mut truth_area = vec![0usize; truth_ids.len()];
    let mut pred_area = vec![0usize; pred_ids.len()];
    for (&t, &p) in truth.labels().iter().zip(pred.labels()) {
        if t != 0 {
            truth_area[t_index(t)] += 1;
        }
        if p != 0 {
            pred_area[p_index(p)] += 1;
        }
        if t != 0 && p != 0 {
            overlap[t_index(t)][p_index(p)] += 1;
        }
    }

    let cells: Vec<CellScore> = truth_ids
        .iter()
        .enumerate()
        .map(|(ti, &truth_id)| {
            let mut best: Option<usize> = None;
            for pi in 0..pred_ids.len() {
                let o = overlap[ti][pi];
                if o > 0 && best.is_none_or(|b| o > overlap[ti][b]) {
                    best = Some(pi);
                }
            }
            match best {
                None => CellScore {
                    truth_id,
                    pred_id: None,
                    tp: 0,
                    fp: 0,
                    fn_: truth_area[ti],
                    dice: 0.0,
                },
                Some(pi) => {
                    let tp = overlap[ti][pi];
                    let fp = pred_area[pi] - tp;
                    let fn_ = truth_area[ti] - tp;
                    CellScore {
                        truth_id,
                        pred_id: Some(pred_ids[pi]),
                        tp,
                        fp,
                        fn_,
                        dice: 2.0 * tp as f64 / (2 * tp + fn_ + fp) as f64,
                    }
                }
            }
        })
        .collect();
    let mdice = if cells.is_empty() {
        if pred_ids.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        cells.iter().map(|c| c.dice).sum::<f64>() / cells.len() as f64
    };
    Ok(SegScores {
        cells,
        mdice,
        detection: None,
    })
}

/// One image's scores as CSV rows (no header).
pub fn score_rows(image: &str, scores: &SegScores) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{image},mdice,{}", scores.mdice);
    let _ = writeln!(s, "{image},cells,{}", scores.cells.len());
    if let Some(d) = &scores.detection {
        let _ = writeln!(s, "{image},precision,{}", d.precision);
        let _ = writeln!(s, "{image},recall,{}", d.recall);
        let _ = writeln!(s, "{image},f_measure,{}", d.f_measure);
    }
    s
}

pub const CSV_HEADER: &str = "image,metric,value\n";

/// Pooled scores over many images: mDice averages over all truth cells,
/// detection counts are summed before the F-measure is taken.
pub fn aggregate(per_image: &[SegScores]) -> Result<SegScores> {
    let cells: Vec<CellScore> = per_image.iter().flat_map(|s| s.cells.iter().copied()).collect();
    let mdice = if cells.is_empty() {
        per_image.iter().map(|s| s.mdice).sum::<f64>() / per_image.len().max(1) as f64
    } else {
        cells.iter().map(|c| c.dice).sum::<f64>() / cells.len() as f64
    };
    let detection = if per_image.iter().any(|s| s.detection.is_some()) {
        let mut total = MatchCounts::default();
        for d in per_image.iter().filter_map(|s| s.detection.as_ref()) {
            total.tp += d.counts.tp;
            total.fp += d.counts.fp;
            total.fn_ += d.counts.fn_;
        }
        if total == MatchCounts::default() {
            None
        } else {
            Some(DetectionScores::from_counts(total)?)
        }
    } else {
        None
    };
    Ok(SegScores { cells, mdice, detection })
}

/// Aligned plain-text table, one row per image plus the pooled row.
pub fn scores_table(rows: &[(String, SegScores)], total: &SegScores) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).chain(["all".len(), "image".len()]).max().unwrap();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<name_w$}  {:>6}  {:>9}  {:>6}  {:>9}  {:>6}",
        "image", "cells", "precision", "recall", "f-measure", "mDice"
    );
    let mut line = |name: &str, sc: &SegScores| {
        let (p, r, f) = match &sc.detection {
            Some(d) => (
                format!("{:.3}", d.precision),
                format!("{:.3}", d.recall),
                format!("{:.3}", d.f_measure),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>6}  {:>9}  {:>6}  {:>9}  {:>6.3}",
            name,
            sc.cells.len(),
            p,
            r,
            f,
            sc.mdice
        );
    };
    for (n, sc) in rows {
        line(n, sc);
    }
    line("all", total);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(w: usize, h: usize, v: &[u32]) -> InstanceLabeling {
        InstanceLabeling::from_vec(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn f_measure_examples() {
        assert_eq!(f_measure(10, 0, 0).unwrap(), 1.0);
        assert_eq!(f_measure(0, 3, 2).unwrap(), 0.0);
        assert!((f_measure(8, 2, 2).unwrap() - 0.8).abs() < 1e-15);
        assert!(f_measure(0, 0, 0).is_err());
    }

    #[test]
    fn dice_three_quarters() {
        let truth = lab(3, 2, &[1, 1, 0, 1, 1, 0]);
        let pred = lab(3, 2, &[5, 5, 5, 5, 0, 0]);
        let s = mdice(&pred, &truth).unwrap();
        assert_eq!(s.cells[0].tp, 3);
        assert_eq!(s.cells[0].fp, 1);
        assert_eq!(s.cells[0].fn_, 1);
        assert_eq!(s.mdice, 0.75);
    }

    #[test]
    fn identity_and_miss() {
        let truth = lab(4, 1, &[1, 1, 0, 2]);
        assert_eq!(mdice(&truth, &truth).unwrap().mdice, 1.0);
        let s = mdice(&lab(4, 1, &[0; 4]), &truth).unwrap();
        assert_eq!(s.mdice, 0.0);
        assert_eq!(s.cells[1].fn_, 1);
        assert!(mdice(&lab(2, 1, &[0, 0]), &truth).is_err());
    }

    #[test]
    fn overlap_ties_take_lowest_pred() {
        let truth = lab(4, 1, &[1, 1, 0, 0]);
        let pred = lab(4, 1, &[3, 2, 0, 0]);
        assert_eq!(mdice(&pred, &truth).unwrap().cells[0].pred_id, Some(2));
    }

    #[test]
    fn csv_and_table() {
        let truth = lab(2, 1, &[1, 0]);
        let mut s = mdice(&truth, &truth).unwrap();
        s.detection = Some(DetectionScores::from_counts(MatchCounts { tp: 1, fp: 0, fn_: 0 }).unwrap());
        assert_eq!(
            score_rows("a", &s),
            "a,mdice,1\na,cells,1\na,precision,1\na,recall,1\na,f_measure,1\n"
        );
        let total = aggregate(std::slice::from_ref(&s)).unwrap();
        let t = scores_table(&[("a".into(), s)], &total);
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().all(|l| l.len() == t.lines().next().unwrap().len()));
    }
}
