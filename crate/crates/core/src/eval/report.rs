//! Summary report over several scored datasets.
//!
//! JSON layout (keys always in this order):
//!
//! ```text
//! {
//!   "in_distribution": "<name>",
//!   "metrics": ["log_px", "latent_score", "recon_l0", ...],
//!   "datasets": [{"name", "count", "metrics": [{"metric", "mean", "std"}]}],
//!   "comparisons": [{"reference", "other",
//!                    "auroc": [{"metric", "value"}], "ks": [{"metric", "value"}]}],
//!   "histograms": [{"metric", "edges": [..], "counts": [{"dataset", "counts": [..]}]}]
//! }
//! ```
//!
//! `std` is the sample standard deviation. Comparisons pair the in-distribution
//! set with every other set; `auroc` is `P(reference > other)` after orienting
//! each metric so larger means more in-distribution (reconstruction losses are
//! negated). Histograms share edges across datasets: equal-width bins over the
//! pooled range of all sets.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{auroc, equal_width_edges, histogram_with_edges, ks_statistic, mean_std};
use super::{Metric, SampleScore};
use crate::error::{invalid_arg, shape_err, Error, Result};

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub count: usize,
    pub metrics: Vec<MetricStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub other: String,
    pub auroc: Vec<MetricValue>,
    pub ks: Vec<MetricValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub dataset: String,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricHistogram {
    pub metric: String,
    pub edges: Vec<f64>,
    pub counts: Vec<DatasetCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OoDReport {
    pub in_distribution: String,
    pub metrics: Vec<String>,
    pub datasets: Vec<DatasetStats>,
    pub comparisons: Vec<Comparison>,
    pub histograms: Vec<MetricHistogram>,
}

fn lookup(values: &[MetricValue], metric: Metric) -> Option<f64> {
    let name = metric.to_string();
    values.iter().find(|v| v.metric == name).map(|v| v.value)
}

impl OoDReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<OoDReport> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn stats(&self, dataset: &str, metric: Metric) -> Option<&MetricStats> {
        let name = metric.to_string();
        self.datasets.iter().find(|d| d.name == dataset)?.metrics.iter().find(|m| m.metric == name)
    }

    pub fn comparison(&self, other: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.other == other)
    }

    pub fn auroc(&self, other: &str, metric: Metric) -> Option<f64> {
        lookup(&self.comparison(other)?.auroc, metric)
    }

    pub fn ks(&self, other: &str, metric: Metric) -> Option<f64> {
        lookup(&self.comparison(other)?.ks, metric)
    }

    /// Writes one `hist_<metric>.csv` per metric (`lower,upper,<dataset>...`)
    /// into `dir` and returns the paths.
    pub fn write_histogram_csvs(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for h in &self.histograms {
            let path = dir.as_ref().join(format!("hist_{}.csv", h.metric));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(&path, e);
            write!(w, "lower,upper").map_err(io)?;
            for c in &h.counts {
                write!(w, ",{}", c.dataset).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
            for (b, pair) in h.edges.windows(2).enumerate() {
                write!(w, "{},{}", pair[0], pair[1]).map_err(io)?;
                for c in &h.counts {
                    write!(w, ",{}", c.counts[b]).map_err(io)?;
                }
                writeln!(w).map_err(io)?;
            }
            w.flush().map_err(io)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Assembles the report. `sets` are `(name, scores)` pairs in report order;
/// `in_distribution` names the reference set.
pub fn summarize(sets: &[(String, Vec<SampleScore>)], in_distribution: &str, bins: usize) -> Result<OoDReport> {
    let reference = sets
        .iter()
        .find(|(name, _)| name == in_distribution)
        .ok_or_else(|| invalid_arg!("in-distribution set {in_distribution:?} is not among the scored sets"))?;
    let layers = reference.1.first().map_or(0, |s| s.recon_by_layer.len());
    for (name, scores) in sets {
        if scores.is_empty() {
            return Err(invalid_arg!("score set {name:?} is empty"));
        }
        if scores.iter().any(|s| s.recon_by_layer.len() != layers) {
            return Err(shape_err!("score set {name:?} does not have {layers} reconstruction layers"));
        }
    }
    let metrics = Metric::all(layers);
    let values = |scores: &[SampleScore], m: Metric, oriented: bool| -> Vec<f64> {
        scores.iter().map(|s| if oriented { m.oriented(s) } else { m.value(s) }).collect()
    };
    for (name, scores) in sets {
        for &m in &metrics {
            if let Some(v) = values(scores, m, false).into_iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{m} of set {name:?} is {v}")));
            }
        }
    }

    let datasets = sets
        .iter()
        .map(|(name, scores)| DatasetStats {
            name: name.clone(),
            count: scores.len(),
            metrics: metrics
                .iter()
                .map(|&m| {
                    let (mean, std) = mean_std(&values(scores, m, false));
                    MetricStats { metric: m.to_string(), mean, std }
                })
                .collect(),
        })
        .collect();

    let mut comparisons = Vec::new();
    for (name, scores) in sets.iter().filter(|(name, _)| name != in_distribution) {
        let mut auc = Vec::new();
        let mut ks = Vec::new();
        for &m in &metrics {
            auc.push(MetricValue {
                metric: m.to_string(),
                value: auroc(&values(&reference.1, m, true), &values(scores, m, true))?,
            });
            ks.push(MetricValue {
                metric: m.to_string(),
                value: ks_statistic(&values(&reference.1, m, false), &values(scores, m, false))?,
            });
        }
        comparisons.push(Comparison { reference: in_distribution.to_string(), other: name.clone(), auroc: auc, ks });
    }

    let mut histograms = Vec::new();
    for &m in &metrics {
        let pooled: Vec<f64> = sets.iter().flat_map(|(_, s)| values(s, m, false)).collect();
        let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edges = equal_width_edges(lo, hi, bins)?;
        let counts = sets
            .iter()
            .map(|(name, s)| {
                Ok(DatasetCounts { dataset: name.clone(), counts: histogram_with_edges(&values(s, m, false), &edges)?.counts })
            })
            .collect::<Result<_>>()?;
        histograms.push(MetricHistogram { metric: m.to_string(), edges, counts });
    }

    Ok(OoDReport {
        in_distribution: in_distribution.to_string(),
        metrics: metrics.iter().map(Metric::to_string).collect(),
        datasets,
        comparisons,
        histograms,
    })
}
