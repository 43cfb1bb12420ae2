use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use cyclebnn::data::{load_idx, Dataset};
use cyclebnn::nn::checkpoint::load_checkpoint;
use cyclebnn::nn::packed::{load_packed, save_packed, PackedModel};
use cyclebnn::train::{accuracy, predict, predict_with};
use cyclebnn::Error;

use crate::config::TrainConfig;
use crate::train::EVAL_CHUNK;
use crate::CliError;

#[derive(Args)]
pub struct EvalArgs {
    /// CBNN checkpoint written by `train`.
    checkpoint: PathBuf,
    /// Training config whose dataset (and architecture) to evaluate against.
    #[arg(long)]
    config: Option<PathBuf>,
    /// IDX image file, instead of the config's dataset.
    #[arg(long, requires = "labels", conflicts_with = "config")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Which split of the config's dataset to use.
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,
    /// Also run the bit-packed path and require identical logits. Takes a CBNP
    /// file written by `pack`; without a value (or `-`) the checkpoint is packed in memory.
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    packed: Option<PathBuf>,
}

fn dataset(args: &EvalArgs) -> Result<(Dataset, Option<TrainConfig>), CliError> {
    if let (Some(images), Some(labels)) = (&args.images, &args.labels) {
        return Ok((load_idx(images, labels)?, None));
    }
    let Some(path) = &args.config else {
        return Err(CliError::usage("eval needs --config or --images/--labels"));
    };
    let cfg = TrainConfig::load(path)?;
    let data = cfg.data()?;
    let d = if args.split == "train" { data.train } else { data.test };
    Ok((d, Some(cfg)))
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let (net, arch) = load_checkpoint(&args.checkpoint)?;
    let (data, cfg) = dataset(args)?;
    if arch.input_dims != data.sample_dims() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint expects inputs {:?}, dataset has {:?}",
            arch.input_dims,
            data.sample_dims()
        ))
        .into());
    }
    if let Some(cfg) = &cfg {
        if cfg.layers(data.sample_dims(), data.classes) != arch.layers {
            return Err(Error::CheckpointMismatch("checkpoint architecture differs from the config's".into()).into());
        }
    }

    let start = Instant::now();
    let logits = predict(&net, &data, EVAL_CHUNK)?;
    let float_secs = start.elapsed().as_secs_f64();
    println!("samples: {}", data.len());
    println!("accuracy: {}", accuracy(&logits, &data.labels));
    println!("float-throughput: {:.1} samples/s", data.len() as f64 / float_secs.max(1e-9));

    if let Some(packed_path) = &args.packed {
        let model = if packed_path.as_os_str() == "-" {
            PackedModel::from_network(&net)?
        } else {
            load_packed(packed_path)?
        };
        let start = Instant::now();
        let packed_logits = predict_with(|x| model.forward(x), &data, EVAL_CHUNK)?;
        let packed_secs = start.elapsed().as_secs_f64();
        let agree = packed_logits == logits;
        println!("packed-throughput: {:.1} samples/s", data.len() as f64 / packed_secs.max(1e-9));
        println!("paths-agree: {agree}");
        if !agree {
            return Err(CliError::numerical("packed logits differ from the float path"));
        }
    }
    Ok(())
}

pub fn pack(checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let (net, _) = load_checkpoint(checkpoint)?;
    let model = PackedModel::from_network(&net)?;
    save_packed(out, &model)?;
    let size = std::fs::metadata(out)?.len();
    println!("wrote {} ({size} bytes)", out.display());
    Ok(())
}
