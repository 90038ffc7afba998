//! Per-sample OoD scores, separation statistics, reports and diagnostics.

pub mod diagnostics;
pub mod report;
pub mod stats;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::network::Network;
use crate::render::{prior_score, recon_losses, recon_term, render, Granularity};
use crate::tensor::Tensor;

pub use diagnostics::{mean_latents, tile_channels, top_activations, topk_indices, write_pnm, Order};
pub use report::{summarize, OoDReport};
pub use stats::{auroc, histogram, ks_statistic, mean_std, Bins, Histogram};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub index: usize,
    /// Predicted label used for every metric.
    pub y_star: usize,
    /// Pixel-level likelihood lower bound.
    pub log_px: f64,
    /// Structured-prior score of the sample's rendering path.
    pub latent_score: f64,
    /// `|g(x;k) - h(y*, z*; k)|^2` for `k = 0..=L`.
    pub recon_by_layer: Vec<f64>,
}

/// Scores `x` (`[C, H, W]` or `[1, C, H, W]`) from one forward pass and one render.
pub fn score_sample(net: &Network, x: &Tensor, index: usize) -> Result<SampleScore> {
    let trace = net.forward_trace(x)?;
    if trace.batch() != 1 {
        return Err(shape_err!("expected a single sample, got a batch of {}", trace.batch()));
    }
    let y_star = trace.predictions[0];
    let rendered = render(net, y_star, &trace.latents, 0)?;
    let recon_by_layer = recon_losses(net, &trace, &rendered, Granularity::Block)?;
    let latent_score = prior_score(net, &trace.latents, &rendered)?;
    let log_px = recon_term(recon_by_layer[0], net.sigma()) + latent_score;
    Ok(SampleScore { index, y_star, log_px, latent_score, recon_by_layer })
}

/// One score per image, in dataset order.
pub fn score_dataset(net: &Network, ds: &Dataset) -> Result<Vec<SampleScore>> {
    if ds.sample_shape() != net.input_shape() {
        return Err(shape_err!(
            "dataset {:?} has images {:?} but the network takes {:?}",
            ds.name,
            ds.sample_shape(),
            net.input_shape()
        ));
    }
    (0..ds.len()).into_par_iter().map(|i| score_sample(net, &ds.image(i), i)).collect()
}

/// A scalar extracted from a [`SampleScore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    LogPx,
    LatentScore,
    Recon(usize),
}

impl Metric {
    /// `log_px`, `latent_score`, then `recon_l0..=recon_l{layers-1}`.
    pub fn all(recon_layers: usize) -> Vec<Metric> {
        let mut m = vec![Metric::LogPx, Metric::LatentScore];
        m.extend((0..recon_layers).map(Metric::Recon));
        m
    }

    pub fn value(&self, s: &SampleScore) -> f64 {
        match *self {
            Metric::LogPx => s.log_px,
            Metric::LatentScore => s.latent_score,
            Metric::Recon(k) => s.recon_by_layer[k],
        }
    }

    /// Value oriented so that larger means more in-distribution.
    pub fn oriented(&self, s: &SampleScore) -> f64 {
        match self {
            Metric::Recon(_) => -self.value(s),
            _ => self.value(s),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::LogPx => f.write_str("log_px"),
            Metric::LatentScore => f.write_str("latent_score"),
            Metric::Recon(k) => write!(f, "recon_l{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        match s {
            "log_px" => Ok(Metric::LogPx),
            "latent_score" => Ok(Metric::LatentScore),
            _ => s
                .strip_prefix("recon_l")
                .and_then(|k| k.parse().ok())
                .map(Metric::Recon)
                .ok_or_else(|| invalid_arg!("unknown metric {s:?}")),
        }
    }
}

pub fn metric_values(scores: &[SampleScore], metric: Metric) -> Result<Vec<f64>> {
    if let (Metric::Recon(k), Some(s)) = (metric, scores.first()) {
        if k >= s.recon_by_layer.len() {
            return Err(invalid_arg!("metric {metric} needs layer {k}, scores have {}", s.recon_by_layer.len()));
        }
    }
    Ok(scores.iter().map(|s| metric.value(s)).collect())
}

fn recon_layers(scores: &[SampleScore]) -> Result<usize> {
    let layers = scores.first().map_or(0, |s| s.recon_by_layer.len());
    if scores.iter().any(|s| s.recon_by_layer.len() != layers) {
        return Err(shape_err!("scores disagree on the number of reconstruction layers"));
    }
    Ok(layers)
}

/// Writes `index,y_star,log_px,latent_score,recon_l0,...`; floats use the
/// shortest representation that parses back to the same value.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: &[SampleScore]) -> Result<()> {
    let path = path.as_ref();
    let layers = recon_layers(scores)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = "index,y_star,log_px,latent_score".to_string();
    for k in 0..layers {
        header.push_str(&format!(",recon_l{k}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for s in scores {
        write!(w, "{},{},{},{}", s.index, s.y_star, s.log_px, s.latent_score).map_err(io)?;
        for r in &s.recon_by_layer {
            write!(w, ",{r}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<SampleScore>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let fixed = ["index", "y_star", "log_px", "latent_score"];
    if headers.len() < fixed.len() + 1 || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Malformed(format!("{}: unexpected score header {:?}", path.display(), headers)));
    }
    for (k, h) in headers.iter().skip(fixed.len()).enumerate() {
        if h != format!("recon_l{k}") {
            return Err(Error::Malformed(format!("{}: column {h:?} should be recon_l{k}", path.display())));
        }
    }
    let bad = |row: usize, col: &str| Error::Malformed(format!("{}: row {row}, column {col}", path.display()));
    let mut scores = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let int = |i: usize| record[i].parse::<usize>().map_err(|_| bad(row, &headers[i]));
        let float = |i: usize| record[i].parse::<f64>().map_err(|_| bad(row, &headers[i]));
        scores.push(SampleScore {
            index: int(0)?,
            y_star: int(1)?,
            log_px: float(2)?,
            latent_score: float(3)?,
            recon_by_layer: (fixed.len()..record.len()).map(float).collect::<Result<_>>()?,
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    #[test]
    fn metric_names_roundtrip() {
        for m in Metric::all(4) {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert!("recon".parse::<Metric>().is_err());
        assert!("likelihood".parse::<Metric>().is_err());
    }

    #[test]
    fn scores_satisfy_bound_identity_and_csv_roundtrip() {
        let net = Network::build(NetworkSpec::reference([1, 8, 8], 3).with_sigma(0.6), 2).unwrap();
        let ds = crate::data::synthetic_blobs(5, 3, [1, 8, 8], 0.2, 4).unwrap();
        let scores = score_dataset(&net, &ds).unwrap();
        assert_eq!(scores, score_dataset(&net, &ds).unwrap());
        for (i, s) in scores.iter().enumerate() {
            assert_eq!(s.index, i);
            assert_eq!(s.log_px, -s.recon_by_layer[0] / (2.0 * 0.6 * 0.6) + s.latent_score);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_scores_csv(&path, &scores).unwrap();
        assert_eq!(read_scores_csv(&path).unwrap(), scores);
    }

    #[test]
    fn wrong_shape_names_dataset() {
        let net = Network::build(NetworkSpec::reference([1, 8, 8], 3), 2).unwrap();
        let ds = crate::data::synthetic_blobs(2, 2, [1, 4, 4], 0.2, 4).unwrap().with_name("tiny");
        let err = score_dataset(&net, &ds).unwrap_err().to_string();
        assert!(err.contains("tiny"), "{err}");
    }
}
