//! Command-line interface. Exit codes: 0 success, 1 usage, 2 data or format, 3 numeric.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{expand_channels, load_cifar_binary, load_idx, synthetic_blobs, variance_scale, write_idx, Dataset};
use crate::error::{invalid_arg, Error, Result};
use crate::eval::report::DEFAULT_BINS;
use crate::eval::{
    mean_latents, read_scores_csv, score_dataset, summarize, tile_channels, top_activations, topk_indices,
    write_pnm, write_scores_csv, Metric, Order,
};
use crate::network::{Checkpoint, Network, NetworkSpec};
use crate::render::render_with_label;
use crate::train::{fit, TrainConfig};

/// Training configuration file: `{"network": {..}, "train": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Parser, Debug)]
#[command(name = "nrm", version, about = "Neural rendering model: training, OoD scoring and diagnostics")]
struct Cli {
    /// JSON run configuration (`network` and `train` sections)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// IDX image file
    #[arg(long, conflicts_with = "cifar")]
    images: Option<PathBuf>,
    /// IDX label file
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// CIFAR binary batch files
    #[arg(long, num_args = 1..)]
    cifar: Vec<PathBuf>,
    /// Multiply every pixel by this factor in (0, 1]
    #[arg(long)]
    scale: Option<f64>,
    /// Dataset name used in output file names
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    Highest,
    Lowest,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network; writes checkpoint.nrmc and metrics.csv
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score every image; writes <name>.csv
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Summarize score files; writes report.json and hist_<metric>.csv
    Report {
        /// Score CSV files; each set is named after its file stem
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// Name of the in-distribution set
        #[arg(long)]
        in_dist: String,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Dump inputs and their renderings, optionally from a false label or
    /// for the images ranked highest or lowest by a metric
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Render from this label instead of the predicted one
        #[arg(long)]
        label: Option<usize>,
        /// Rank images by this metric (log_px, latent_score, recon_l<k>)
        #[arg(long)]
        rank_by: Option<String>,
        #[arg(long, value_enum, default_value_t = OrderArg::Highest)]
        order: OrderArg,
        /// Number of images to dump
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Per-layer mean of the rendering masks; writes latents_l<k>.csv and .pgm
    DumpLatents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Images with the highest activation per feature channel
    TopActivations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        layer: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        features: Vec<usize>,
        #[arg(long, default_value_t = 9)]
        top: usize,
    },
    /// Generate a synthetic blob dataset as IDX files <name>-images.idx and <name>-labels.idx
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Image side length (single-channel square images)
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long)]
        name: String,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let mut ds = match (&self.images, self.cifar.is_empty()) {
            (Some(images), true) => load_idx(images, self.labels.as_deref())?,
            (None, false) => load_cifar_binary(&self.cifar)?,
            _ => return Err(invalid_arg!("give either --images or --cifar")),
        };
        if let Some(f) = self.scale {
            ds = variance_scale(&ds, f)?;
        }
        if let Some(name) = &self.name {
            ds.name = name.clone();
        }
        Ok(ds)
    }

    /// Loads the data, replicating grayscale images to the network's channel count.
    fn load_for(&self, net: &Network) -> Result<Dataset> {
        let ds = self.load()?;
        expand_channels(&ds, net.input_shape()[0])
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let out = cli.out.as_path();
    create_dir(out)?;
    match cli.command {
        Command::Train { data } => {
            let path = cli.config.as_deref().ok_or_else(|| invalid_arg!("train needs --config"))?;
            let mut config = RunConfig::load(path)?;
            if let Some(seed) = cli.seed {
                config.train.seed = seed;
            }
            let ds = data.load()?;
            let ds = expand_channels(&ds, config.network.input_shape.first().copied().unwrap_or(1))?;
            let net = Network::build(config.network, config.train.seed)?;
            let (checkpoint, log) = fit(net, &ds, &config.train)?;
            checkpoint.save(out.join("checkpoint.nrmc"))?;
            log.write_csv(out.join("metrics.csv"))?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "epoch {} ce {:.4} recon {:.4} neg {:.4} acc {:.4}",
                    last.epoch, last.ce, last.recon, last.neg, last.acc
                );
            }
        }
        Command::Score { checkpoint, data } => {
            let net = Checkpoint::load(&checkpoint)?.network;
            let ds = data.load_for(&net)?;
            let scores = score_dataset(&net, &ds)?;
            let path = out.join(format!("{}.csv", ds.name));
            write_scores_csv(&path, &scores)?;
            println!("{} samples scored -> {}", scores.len(), path.display());
        }
        Command::Report { scores, in_dist, bins } => {
            let sets = scores
                .iter()
                .map(|p| Ok((stem(p), read_scores_csv(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = summarize(&sets, &in_dist, bins)?;
            write_text(&out.join("report.json"), &report.to_json()?)?;
            report.write_histogram_csvs(out)?;
        }
        Command::Render { checkpoint, data, label, rank_by, order, count } => {
            let net = Checkpoint::load(&checkpoint)?.network;
            let ds = data.load_for(&net)?;
            if let Some(y) = label {
                if y >= net.classes() {
                    return Err(invalid_arg!("label {y} out of range for {} classes", net.classes()));
                }
            }
            let count = count.min(ds.len());
            let (selected, values) = match rank_by {
                Some(name) => {
                    let metric: Metric = name.parse()?;
                    let scores = score_dataset(&net, &ds)?;
                    let values = crate::eval::metric_values(&scores, metric)?;
                    let order = match order {
                        OrderArg::Highest => Order::Highest,
                        OrderArg::Lowest => Order::Lowest,
                    };
                    (topk_indices(&values, count, order)?, Some(values))
                }
                None => ((0..count).collect(), None),
            };
            let index_path = out.join("render_index.csv");
            let file = File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(&index_path, e);
            writeln!(w, "rank,index,y_star,label,score").map_err(io)?;
            for (rank, &i) in selected.iter().enumerate() {
                let x = ds.image(i);
                let y_star = net.predict(&x)?[0];
                let y = label.unwrap_or(y_star);
                let rendered = render_with_label(&net, &x, y)?;
                write_pnm(out.join(format!("render_{rank:03}_input.pnm")), &x)?;
                write_pnm(out.join(format!("render_{rank:03}_label{y}.pnm")), &rendered.map(|v| v.clamp(-1.0, 1.0)))?;
                let score = values.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
                writeln!(w, "{rank},{i},{y_star},{y},{score}").map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        Command::DumpLatents { checkpoint, data } => {
            let net = Checkpoint::load(&checkpoint)?.network;
            let ds = data.load_for(&net)?;
            for (l, mean) in mean_latents(&net, &ds)?.iter().enumerate() {
                let layer = l + 1;
                let path = out.join(format!("latents_l{layer}.csv"));
                let [_, h, w] = net.architecture().blocks[l].conv_shape;
                let mut text = String::from("channel,row,col,mean\n");
                for (k, v) in mean.data().iter().enumerate() {
                    text.push_str(&format!("{},{},{},{v}\n", k / (h * w), (k / w) % h, k % w));
                }
                write_text(&path, &text)?;
                let grid = tile_channels(&mean.map(|m| 2.0 * m - 1.0), -1.0)?;
                write_pnm(out.join(format!("latents_l{layer}.pgm")), &grid)?;
            }
        }
        Command::TopActivations { checkpoint, data, layer, features, top } => {
            let net = Checkpoint::load(&checkpoint)?.network;
            let ds = data.load_for(&net)?;
            let ranking = top_activations(&net, &ds, layer, &features, top)?;
            let mut text = String::from("feature,rank,index\n");
            for (f, list) in features.iter().zip(&ranking) {
                for (rank, &i) in list.iter().enumerate() {
                    text.push_str(&format!("{f},{rank},{i}\n"));
                    write_pnm(out.join(format!("top_f{f}_r{rank:02}.pnm")), &ds.image(i))?;
                }
            }
            write_text(&out.join("top_activations.csv"), &text)?;
        }
        Command::Synth { n, classes, side, noise, name } => {
            let ds = synthetic_blobs(n, classes, [1, side, side], noise, cli.seed.unwrap_or(0))?;
            let labels = out.join(format!("{name}-labels.idx"));
            write_idx(&ds, out.join(format!("{name}-images.idx")), Some(&labels))?;
        }
    }
    Ok(())
}
