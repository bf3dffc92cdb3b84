//! PLCC, SRCC and degradation accuracies.

use crate::labels::{DegradationClass, SeverityLevel};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::UndefinedMetric(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedMetric("need at least two samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite input".into()));
    }
    for (name, v) in [("x", x), ("y", y)] {
        if v.iter().all(|a| *a == v[0]) {
            return Err(Error::UndefinedMetric(format!("{name} has zero variance")));
        }
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(pearson(x, y))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank-order correlation (Pearson on average ranks).
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: DegradationClass,
    pub n: usize,
    pub deg_acc: f64,
    /// Absent for the null class.
    pub lev_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n: usize,
    pub deg_acc: f64,
    /// Over distorted ground truths only; absent when there are none.
    pub lev_acc: Option<f64>,
    /// Class accuracy over the same distorted subset as `lev_acc`.
    pub deg_acc_distorted: Option<f64>,
    pub per_class: Vec<ClassAccuracy>,
}

/// `None` predictions are parse failures and count as wrong.
pub fn class_level_accuracy(
    preds: &[Option<(DegradationClass, SeverityLevel)>],
    gts: &[(DegradationClass, SeverityLevel)],
) -> Result<AccuracyReport> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "need equal non-empty lists, got {} and {}",
            preds.len(),
            gts.len()
        )));
    }
    #[derive(Default, Clone, Copy)]
    struct Tally {
        n: usize,
        cls: usize,
        lev: usize,
    }
    let mut per = [Tally::default(); 5];
    for (p, &(gc, gs)) in preds.iter().zip(gts) {
        let t = &mut per[gc.index()];
        t.n += 1;
        if let Some((pc, ps)) = *p {
            if pc == gc {
                t.cls += 1;
                if ps == gs {
                    t.lev += 1;
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| a as f64 / b as f64;
    let all = per.iter().fold(Tally::default(), |a, t| Tally {
        n: a.n + t.n,
        cls: a.cls + t.cls,
        lev: a.lev + t.lev,
    });
    let distorted = DegradationClass::DISTORTED
        .iter()
        .map(|c| per[c.index()])
        .fold(Tally::default(), |a, t| Tally {
            n: a.n + t.n,
            cls: a.cls + t.cls,
            lev: a.lev + t.lev,
        });
    let per_class = DegradationClass::ALL
        .iter()
        .filter(|c| per[c.index()].n > 0)
        .map(|&c| {
            let t = per[c.index()];
            ClassAccuracy {
                class: c,
                n: t.n,
                deg_acc: ratio(t.cls, t.n),
                lev_acc: (c != DegradationClass::Null).then(|| ratio(t.lev, t.n)),
            }
        })
        .collect();
    Ok(AccuracyReport {
        n: all.n,
        deg_acc: ratio(all.cls, all.n),
        lev_acc: (distorted.n > 0).then(|| ratio(distorted.lev, distorted.n)),
        deg_acc_distorted: (distorted.n > 0).then(|| ratio(distorted.cls, distorted.n)),
        per_class,
    })
}

/// Evaluation summary. Absent fields mean the metric is undefined on the
/// data (no samples of that task, or zero variance).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub n_score: usize,
    pub n_degradation: usize,
    pub n_comparison: usize,
    /// Responses whose answer could not be parsed. Score samples among them
    /// are left out of PLCC/SRCC; the accuracies count them as wrong.
    pub parse_failures: usize,
    /// Input records that could not be used at all.
    pub malformed: usize,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub deg_acc: Option<f64>,
    pub lev_acc: Option<f64>,
    pub comp_acc: Option<f64>,
    /// Fraction of score samples earning the score reward.
    pub scr_hit_rate: Option<f64>,
    /// Fraction of all samples earning the format reward.
    pub fmt_rate: Option<f64>,
    pub per_class: Vec<ClassAccuracy>,
}

const CSV_COLUMNS: [&str; 13] = [
    "n",
    "n_score",
    "n_degradation",
    "n_comparison",
    "parse_failures",
    "malformed",
    "plcc",
    "srcc",
    "deg_acc",
    "lev_acc",
    "comp_acc",
    "scr_hit_rate",
    "fmt_rate",
];

impl MetricReport {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// Flat CSV row matching [`MetricReport::csv_header`]; absent values are empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.n.to_string(),
            self.n_score.to_string(),
            self.n_degradation.to_string(),
            self.n_comparison.to_string(),
            self.parse_failures.to_string(),
            self.malformed.to_string(),
            opt(self.plcc),
            opt(self.srcc),
            opt(self.deg_acc),
            opt(self.lev_acc),
            opt(self.comp_acc),
            opt(self.scr_hit_rate),
            opt(self.fmt_rate),
        ]
        .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use DegradationClass::*;
    use SeverityLevel::*;

    #[test]
    fn correlation_examples() {
        assert!((plcc(&[1., 2., 3.], &[1., 2., 3.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-15);
        assert!((plcc(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
        assert!((srcc(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
        let x = [0.3, 1.0, 2.5, 7.0, 9.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((srcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            srcc(&[1., 2., 3.], &[4., 4., 4.]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(plcc(&[1.], &[1.]).is_err());
        assert!(plcc(&[1., 2.], &[1.]).is_err());
        assert!(plcc(&[0.1; 3], &[1., 2., 3.]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10., 20., 10., 30.]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(average_ranks(&[5., 5., 5.]), vec![2.0; 3]);
    }

    #[test]
    fn accuracy_examples() {
        let gts = [
            (Noise, Slight),
            (Blur, Serious),
            (DegradationClass::Null, SeverityLevel::Null),
        ];
        let exact: Vec<_> = gts.iter().map(|g| Some(*g)).collect();
        let r = class_level_accuracy(&exact, &gts).unwrap();
        assert_eq!((r.deg_acc, r.lev_acc), (1.0, Some(1.0)));

        let wrong_levels = [Some((Noise, Moderate)), Some((Blur, Slight))];
        let r = class_level_accuracy(&wrong_levels, &gts[..2]).unwrap();
        assert_eq!((r.deg_acc, r.lev_acc), (1.0, Some(0.0)));

        let nulls = [(DegradationClass::Null, SeverityLevel::Null); 3];
        let preds = [Some((DegradationClass::Null, SeverityLevel::Null)); 3];
        let r = class_level_accuracy(&preds, &nulls).unwrap();
        assert_eq!((r.deg_acc, r.lev_acc), (1.0, None));
        assert_eq!(r.per_class[0].lev_acc, None);
    }

    #[test]
    fn parse_failures_count_as_wrong() {
        let r = class_level_accuracy(&[None, Some((Jpeg, Obvious))], &[(Jpeg, Obvious), (Jpeg, Obvious)]).unwrap();
        assert_eq!(r.deg_acc, 0.5);
        assert_eq!(r.per_class.len(), 1);
    }

    #[test]
    fn csv_row_leaves_absent_fields_empty() {
        let m = MetricReport {
            n: 3,
            deg_acc: Some(0.5),
            ..Default::default()
        };
        assert_eq!(m.csv_row(), "3,0,0,0,0,0,,,0.5,,,,");
        assert_eq!(MetricReport::csv_header().split(',').count(), 13);
    }
}
