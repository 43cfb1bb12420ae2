use std::io::{self, Write};
use std::path::PathBuf;

use clap::{ArgGroup, Args};
use cyclebnn::nn::checkpoint::load_checkpoint;
use cyclebnn::nn::Layer;
use cyclebnn::quant::{fit_gaussian_histogram, quantization_error, DensityAt, GaussianFit, QeConfig};

use crate::CliError;

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["fits", "checkpoint"])))]
pub struct QeArgs {
    /// CSV of `A,mu,sigma` rows (a non-numeric header line and `#` comments are skipped).
    #[arg(long)]
    fits: Option<PathBuf>,
    /// Fit a Gaussian to each binary layer's latent-weight histogram instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Bit widths: a range `2-12` or a list `1,2,4`.
    #[arg(long, default_value = "2-12")]
    bits: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Integration range `lo,hi`.
    #[arg(long, default_value = "-15,15", allow_hyphen_values = true)]
    range: String,
    /// Quantizer clamp range `min,max`.
    #[arg(long, default_value = "-1,1", allow_hyphen_values = true)]
    quant_range: String,
    /// Midpoint-rule panels.
    #[arg(long, default_value_t = 300_000)]
    steps: usize,
    /// Evaluate the density at the quantized weight (`quantized`) or the weight itself (`weight`).
    #[arg(long, default_value = "quantized", value_parser = ["quantized", "weight"])]
    density: String,
}

pub fn parse_bits(s: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::usage(format!("invalid --bits `{s}`"));
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
    let bits: Vec<u32> = match s.split_once('-') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => s.split(',').map(num).collect::<Result<_, _>>()?,
    };
    if bits.is_empty() || bits.iter().any(|b| !(1..=32).contains(b)) {
        return Err(bad());
    }
    Ok(bits)
}

fn parse_pair(s: &str, flag: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::usage(format!("invalid --{flag} `{s}`, expected `lo,hi`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn parse_fits(text: &str) -> Result<Vec<GaussianFit>, CliError> {
    let mut fits = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match nums {
            Ok(v) if v.len() == 3 => fits.push(GaussianFit::new(v[0], v[1], v[2])?),
            Err(_) if fits.is_empty() && i == 0 => continue,
            _ => return Err(CliError::usage(format!("fits line {}: expected `A,mu,sigma`", i + 1))),
        }
    }
    if fits.is_empty() {
        return Err(CliError::usage("fits file contains no fits"));
    }
    Ok(fits)
}

fn column_name(i: usize) -> String {
    if i < 26 {
        char::from(b'a' + i as u8).to_string()
    } else {
        format!("fit_{i}")
    }
}

/// Columns as `(name, fit or None when degenerate)`.
fn columns(args: &QeArgs) -> Result<Vec<(String, Option<GaussianFit>)>, CliError> {
    if let Some(path) = &args.fits {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        return Ok(parse_fits(&text)?.into_iter().enumerate().map(|(i, f)| (column_name(i), Some(f))).collect());
    }
    let path = args.checkpoint.as_ref().expect("clap enforces a source");
    let (net, _) = load_checkpoint(path)?;
    let mut cols = Vec::new();
    for layer in net.layers() {
        let weight = match layer {
            Layer::BinaryConv { weight, .. } | Layer::BinaryLinear { weight, .. } => weight,
            _ => continue,
        };
        let fit = match fit_gaussian_histogram(weight.real.data(), HISTOGRAM_BINS) {
            Ok(f) => Some(f),
            Err(e) if e.code() == "zero-variance-weights" => None,
            Err(e) => return Err(e.into()),
        };
        cols.push((weight.name.clone(), fit));
    }
    if cols.is_empty() {
        return Err(CliError::usage("checkpoint has no binary layers"));
    }
    Ok(cols)
}

pub fn run(args: &QeArgs) -> Result<(), CliError> {
    let bits = parse_bits(&args.bits)?;
    let (lo, hi) = parse_pair(&args.range, "range")?;
    let (quant_min, quant_max) = parse_pair(&args.quant_range, "quant-range")?;
    let cfg = QeConfig {
        alpha: args.alpha,
        lo,
        hi,
        steps: args.steps,
        quant_min,
        quant_max,
        density_at: if args.density == "weight" { DensityAt::Weight } else { DensityAt::Quantized },
    };
    cfg.validate()?;
    let cols = columns(args)?;

    let mut out = io::BufWriter::new(io::stdout().lock());
    let header: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
    writeln!(out, "bits,{}", header.join(","))?;
    for &b in &bits {
        let mut row = vec![b.to_string()];
        for (_, fit) in &cols {
            row.push(match fit {
                Some(f) => quantization_error(f, b, &cfg)?.to_string(),
                None => "degenerate".to_string(),
            });
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
