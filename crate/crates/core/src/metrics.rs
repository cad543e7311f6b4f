//! Confusion-matrix metrics and per-group comparison reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::ImportanceHierarchy;
use crate::maps::LabelMap;

/// `C × C` pixel counts; cell `(g, p)` = ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds per-pixel counts. Pixels whose label is `ignore_id` are skipped.
    pub fn accumulate(
        &mut self,
        labels: &LabelMap,
        predictions: &LabelMap,
        ignore_id: Option<u32>,
    ) -> Result<()> {
        if labels.ids().len() != predictions.ids().len() {
            return Err(Error::Shape(format!(
                "{} labels vs {} predictions",
                labels.ids().len(),
                predictions.ids().len()
            )));
        }
        let c = self.num_classes;
        for (flat, (&t, &p)) in labels.ids().iter().zip(predictions.ids()).enumerate() {
            if ignore_id == Some(t) {
                continue;
            }
            if t as usize >= c || p as usize >= c {
                let (n, i, j) = labels.position(flat);
                return Err(Error::UnknownClass {
                    id: t.max(p),
                    n,
                    i,
                    j,
                });
            }
            self.counts[t as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape("cannot merge confusion matrices of different size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Precision, recall and IoU of one class; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let c = cm.num_classes();
    (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| cm.get(k, p)).sum();
            let fp: u64 = (0..c).filter(|&t| t != k).map(|t| cm.get(t, k)).sum();
            ClassMetrics {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                iou: ratio(tp, tp + fp + fn_),
            }
        })
        .collect()
}

/// Arithmetic means over the defined values of each metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_metrics<'a>(members: impl Iterator<Item = &'a ClassMetrics> + Clone) -> MeanMetrics {
    MeanMetrics {
        precision: mean_defined(members.clone().map(|m| m.precision)),
        recall: mean_defined(members.clone().map(|m| m.recall)),
        iou: mean_defined(members.map(|m| m.iou)),
    }
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

impl MeanMetrics {
    pub fn minus(&self, baseline: &MeanMetrics) -> MeanMetrics {
        MeanMetrics {
            precision: delta(self.precision, baseline.precision),
            recall: delta(self.recall, baseline.recall),
            iou: delta(self.iou, baseline.iou),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub id: u32,
    pub name: String,
    pub group: usize,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    /// 1-based rank, `G1` least important.
    pub group: usize,
    pub classes: Vec<u32>,
    pub mean: MeanMetrics,
    /// Present when the report was built against a baseline: this − baseline.
    pub delta: Option<MeanMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub run_id: String,
    pub classes: Vec<ClassRow>,
    pub groups: Vec<GroupRow>,
    pub overall: MeanMetrics,
    pub overall_delta: Option<MeanMetrics>,
    pub scored_pixels: u64,
}

pub fn group_report(
    run_id: &str,
    cm: &ConfusionMatrix,
    hierarchy: &ImportanceHierarchy,
    baseline: Option<&GroupReport>,
) -> Result<GroupReport> {
    if cm.num_classes() != hierarchy.num_classes() {
        return Err(Error::Shape(format!(
            "confusion matrix over {} classes, hierarchy has {}",
            cm.num_classes(),
            hierarchy.num_classes()
        )));
    }
    let per_class = class_metrics(cm);
    let classes: Vec<ClassRow> = hierarchy
        .classes()
        .iter()
        .map(|c| ClassRow {
            id: c.id,
            name: c.name.clone(),
            group: hierarchy.rank_of(c.id).expect("hierarchy class"),
            metrics: per_class[c.id as usize],
        })
        .collect();
    let groups: Vec<GroupRow> = hierarchy
        .groups()
        .iter()
        .enumerate()
        .map(|(g, members)| GroupRow {
            group: g + 1,
            classes: members.clone(),
            mean: mean_metrics(members.iter().map(|&id| &per_class[id as usize])),
            delta: None,
        })
        .collect();
    let mut report = GroupReport {
        run_id: run_id.to_string(),
        overall: mean_metrics(per_class.iter()),
        classes,
        groups,
        overall_delta: None,
        scored_pixels: cm.total(),
    };
    if let Some(base) = baseline {
        report.apply_baseline(base)?;
    }
    Ok(report)
}

impl GroupReport {
    /// Fills in the `delta` fields as `self − baseline`.
    pub fn apply_baseline(&mut self, baseline: &GroupReport) -> Result<()> {
        if baseline.groups.len() != self.groups.len() {
            return Err(Error::InvalidArgument(format!(
                "baseline has {} groups, report has {}",
                baseline.groups.len(),
                self.groups.len()
            )));
        }
        for (row, base) in self.groups.iter_mut().zip(&baseline.groups) {
            row.delta = Some(row.mean.minus(&base.mean));
        }
        self.overall_delta = Some(self.overall.minus(&baseline.overall));
        Ok(())
    }

    pub fn group(&self, rank: usize) -> &GroupRow {
        &self.groups[rank - 1]
    }

    /// One row per class: `id,name,group,precision,recall,iou` (empty when undefined).
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("id,name,group,precision,recall,iou\n");
        for row in &self.classes {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.id,
                row.name,
                row.group,
                fmt(row.metrics.precision),
                fmt(row.metrics.recall),
                fmt(row.metrics.iou)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `"G3 recall: +4.4 points"`-style lines, one per group and metric, most
    /// important group first. Requires deltas.
    pub fn verdict_lines(&self) -> Vec<String> {
        let pts = |d: Option<f64>| match d {
            Some(v) => format!("{:+.1} points", 100.0 * v),
            None => "undefined".to_string(),
        };
        let mut lines = Vec::new();
        for row in self.groups.iter().rev() {
            let Some(d) = row.delta else { continue };
            lines.push(format!("G{} recall: {}", row.group, pts(d.recall)));
            lines.push(format!("G{} precision: {}", row.group, pts(d.precision)));
            lines.push(format!("G{} IoU: {}", row.group, pts(d.iou)));
        }
        if let Some(d) = self.overall_delta {
            lines.push(format!("mean recall: {}", pts(d.recall)));
            lines.push(format!("mean precision: {}", pts(d.precision)));
            lines.push(format!("mean IoU: {}", pts(d.iou)));
        }
        lines
    }
}
