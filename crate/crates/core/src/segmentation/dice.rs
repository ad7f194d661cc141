//! Per-class Dice overlap and the weighted total.

use std::fmt::Write as _;

use crate::data::LabelMask;
use crate::error::{Error, Result};

/// Weights of RNFL, GCIPL and CL in the total score.
pub const DICE_WEIGHTS: [f64; 3] = [0.4, 0.3, 0.3];

/// `2|P ∩ G| / (|P| + |G|)` for class `cls`; 1.0 when the class is absent
/// from both masks.
pub fn dice(pred: &LabelMask, gt: &LabelMask, cls: u8) -> Result<f64> {
    if pred.extents() != gt.extents() {
        let (a, b) = (pred.extents(), gt.extents());
        return Err(Error::shape("dice", &[a.0, a.1], &[b.0, b.1]));
    }
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.classes().iter().zip(gt.classes()) {
        let (ia, ib) = (a == cls, b == cls);
        inter += usize::from(ia && ib);
        p += usize::from(ia);
        g += usize::from(ib);
    }
    Ok(if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceReport {
    pub rnfl: f64,
    pub gcipl: f64,
    pub cl: f64,
    pub total: f64,
}

impl DiceReport {
    pub fn from_classes(rnfl: f64, gcipl: f64, cl: f64) -> Self {
        let [a, b, c] = DICE_WEIGHTS;
        Self {
            rnfl,
            gcipl,
            cl,
            total: a * rnfl + b * gcipl + c * cl,
        }
    }

    /// Component-wise mean; the total stays the weighted sum of the means.
    pub fn mean(reports: &[DiceReport]) -> DiceReport {
        let n = reports.len() as f64;
        let avg = |f: fn(&DiceReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self::from_classes(avg(|r| r.rnfl), avg(|r| r.gcipl), avg(|r| r.cl))
    }
}

pub fn total_dice(pred: &LabelMask, gt: &LabelMask) -> Result<DiceReport> {
    Ok(DiceReport::from_classes(dice(pred, gt, 1)?, dice(pred, gt, 2)?, dice(pred, gt, 3)?))
}

/// Per-image reports plus their mean, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<(String, DiceReport)>,
    pub mean: DiceReport,
}

impl EvalReport {
    pub fn new(rows: Vec<(String, DiceReport)>) -> Self {
        let reports: Vec<DiceReport> = rows.iter().map(|(_, r)| *r).collect();
        Self {
            mean: DiceReport::mean(&reports),
            rows,
        }
    }

    /// Tab-separated rows `(image, rnfl, gcipl, cl, total)` under a header,
    /// followed by a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("image\tdice_rnfl\tdice_gcipl\tdice_cl\tdice_total\n");
        let mut row = |name: &str, r: &DiceReport| {
            writeln!(s, "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", r.rnfl, r.gcipl, r.cl, r.total).unwrap();
        };
        for (name, r) in &self.rows {
            row(name, r);
        }
        row("mean", &self.mean);
        s
    }
}
