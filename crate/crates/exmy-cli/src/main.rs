//! Command line front end: exponent analysis, format emulation, container
//! encode/decode and manifest inspection over raw little-endian tensors.
//!
//! Exit codes: 0 success, 1 internal inconsistency, 2 user or input error.
//! Diagnostics go to stderr; data goes to stdout or the requested file, and
//! files are written atomically (temp then rename).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exmy::{
    decode_tensor, emulate_tensor, encode_tensor, open_file, write_container, AnalysisReport,
    BlockShape, ExponentHistogram, FormatSpec, Scheme, Tensor, DEFAULT_MANTISSA_CANDIDATES,
};

#[derive(Parser)]
#[command(name = "exmy", version, about = "Sub-byte float emulation, packing and analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Histogram a tensor's exponent distribution and recommend formats
    Analyze {
        input: PathBuf,
        #[command(flatten)]
        tensor: TensorArgs,
        /// Fraction of nonzero values allowed outside the exponent window
        #[arg(long, default_value_t = 0.001)]
        budget: f64,
        #[arg(long, value_enum, default_value_t = ReportKind::Json)]
        report: ReportKind,
        /// Write the report here instead of stdout
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Quantize-dequantize a raw tensor, writing raw f32
    Emulate {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        quant: QuantArgs,
        #[command(flatten)]
        tensor: TensorArgs,
    },
    /// Quantize and pack a raw tensor into an EXMY container
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        quant: QuantArgs,
        #[command(flatten)]
        tensor: TensorArgs,
        /// Entry name recorded in the container
        #[arg(long, default_value = "tensor")]
        name: String,
    },
    /// Unpack one container entry back to raw f32
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Entry to decode (required when the container holds several)
        #[arg(long)]
        name: Option<String>,
    },
    /// List a container's manifest in write order
    Info { input: PathBuf },
}

#[derive(Args)]
struct TensorArgs {
    /// Tensor dimensions, comma separated (default: one flat row)
    #[arg(long)]
    shape: Option<Shape>,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    dtype: Dtype,
}

#[derive(Args)]
struct QuantArgs {
    /// Target format, e.g. e4m3
    #[arg(long)]
    format: FormatSpec,
    /// Block metadata scheme: max-before, max-after or float-scale
    #[arg(long, default_value = "max-before")]
    scheme: Scheme,
    /// Elements sharing one metadata record: tensor, row, col, subrow:L, tile:RxC
    #[arg(long, default_value = "tensor")]
    block: BlockShape,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dtype {
    F32,
    Bf16,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    Json,
    Csv,
    Text,
}

#[derive(Clone)]
struct Shape(Vec<usize>);

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|d| {
                d.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad dimension '{d}'"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Shape)
    }
}

/// User errors exit 2; internal inconsistencies (a validated container that
/// fails to decode, for example) exit 1.
enum Failure {
    User(String),
    Internal(String),
}

type CliResult<T> = Result<T, Failure>;

impl From<exmy::Error> for Failure {
    fn from(e: exmy::Error) -> Self {
        Failure::User(format!("{}: {e}", e.name()))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Analyze { input, tensor, budget, report, output } => {
            let t = load_tensor(&input, &tensor)?;
            let analysis =
                AnalysisReport::new(ExponentHistogram::from_tensor(&t), budget, DEFAULT_MANTISSA_CANDIDATES)?;
            let text = match report {
                ReportKind::Json => analysis.to_json(),
                ReportKind::Csv => analysis.histogram.to_csv(),
                ReportKind::Text => render_text(&analysis),
            };
            match output {
                Some(path) => write_atomic(&path, text.as_bytes()),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Cmd::Emulate { input, output, quant, tensor } => {
            let t = load_tensor(&input, &tensor)?;
            let w = emulate_tensor(&t, quant.format, quant.block, quant.scheme)?;
            write_atomic(&output, &f32_bytes(w.data()))
        }
        Cmd::Encode { input, output, quant, tensor, name } => {
            let t = load_tensor(&input, &tensor)?;
            let packed = encode_tensor(&t, quant.format, quant.block, quant.scheme)?;
            let mut bytes = Vec::new();
            write_container(&mut bytes, &[(name.as_str(), &packed)])?;
            eprintln!(
                "{name}: {} elements -> {} payload bytes, ratio {:.2}x vs fp32",
                packed.num_elements(),
                packed.payload_bytes(),
                packed.compression_ratio()
            );
            write_atomic(&output, &bytes)
        }
        Cmd::Decode { input, output, name } => {
            let mut reader = open_file(&input)?;
            let entry = match name {
                Some(n) => n,
                None if reader.len() == 1 => reader.entries().next().unwrap().name.clone(),
                None => {
                    return Err(Failure::User(format!(
                        "container holds {} tensors; pass --name",
                        reader.len()
                    )))
                }
            };
            let packed = reader.read_tensor(&entry)?;
            // The container validated structure and checksums, so a decode
            // failure here means the library broke its own invariants.
            let t = decode_tensor(&packed)
                .map_err(|e| Failure::Internal(format!("validated entry failed to decode: {e}")))?;
            write_atomic(&output, &f32_bytes(t.data()))
        }
        Cmd::Info { input } => {
            let reader = open_file(&input)?;
            for e in reader.entries() {
                let dims: Vec<String> = e.dims.iter().map(ToString::to_string).collect();
                println!(
                    "{}  dims={}  format={}  scheme={}  block={}  raw={}B  payload={}B  specials={}  ratio={:.2}x",
                    e.name,
                    dims.join("x"),
                    e.fmt,
                    e.scheme,
                    e.shape,
                    e.num_elements() * 4,
                    e.payload_bytes,
                    e.num_specials,
                    e.compression_ratio()
                );
            }
            Ok(())
        }
    }
}

fn load_tensor(path: &Path, args: &TensorArgs) -> CliResult<Tensor> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::User(format!("cannot read {}: {e}", path.display())))?;
    if bytes.is_empty() {
        return Err(Failure::User(format!("empty tensor: {}", path.display())));
    }
    let word = match args.dtype {
        Dtype::F32 => 4,
        Dtype::Bf16 => 2,
    };
    if bytes.len() % word != 0 {
        return Err(Failure::User(format!(
            "{} is {} bytes, not a multiple of the {word}-byte element size",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = match args.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::Bf16 => bytes
            .chunks_exact(2)
            .map(|c| f32::from_bits(u32::from(u16::from_le_bytes([c[0], c[1]])) << 16))
            .collect(),
    };
    let shape = match &args.shape {
        Some(Shape(dims)) => {
            if dims.iter().product::<usize>() != data.len() {
                return Err(Failure::User(format!(
                    "shape {dims:?} wants {} elements but the file holds {}",
                    dims.iter().product::<usize>(),
                    data.len()
                )));
            }
            dims.clone()
        }
        None => vec![data.len()],
    };
    Ok(Tensor::new(shape, data)?)
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes via a dot-prefixed sibling temp file and renames it into place, so
/// readers never observe a half-written output.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Failure::User(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)
        .map_err(|e| Failure::User(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Failure::User(format!("cannot move output into {}: {e}", path.display()))
    })
}

fn render_text(r: &AnalysisReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let h = &r.histogram;
    let s = &r.stats;
    let _ = writeln!(out, "elements {} (specials {})", h.total(), h.specials());
    match s.used_range() {
        Some((lo, hi)) => {
            let peak = s.peak_exponent.unwrap_or(lo);
            let _ = writeln!(out, "exponent fields {lo}..={hi}, peak {peak}");
        }
        None => {
            let _ = writeln!(out, "no finite values");
        }
    }
    let _ = writeln!(
        out,
        "populated bins {}, lossless exponent bits {}",
        s.populated_bins, s.lossless_exponent_bits
    );
    let _ = writeln!(out, "recommended formats:");
    for rec in &r.recommendations {
        let _ = writeln!(
            out,
            "  {}  block {}  modeled rmse {:.3e}",
            rec.format, rec.block_hint, rec.modeled_rmse
        );
    }
    let _ = write!(out, "note: {}", r.note);
    out
}
