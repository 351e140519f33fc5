//! `lumaflux` command-line front end.
//!
//! Exit codes: 0 ok, 2 I/O or malformed input, 3 configuration, 4 numerical
//! failure (including failed adapter-demo checks).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lumaflux_core::io::{config_hash, digest_file, encode_pfm_gray, read_frame, sidecar_path, write_frame, write_json, Provenance};
use lumaflux_core::pipeline::{self, adapter_demo, fit_expand, phys_features, summarize_features, synthesize};
use lumaflux_core::rqs::RqsDocument;
use lumaflux_core::tensor::Tensor;
use lumaflux_core::tonemap::default_operators;
use lumaflux_core::{metric_report, Crf, Error, PipelineConfig, ToneOperator};

#[derive(Parser)]
#[command(name = "lumaflux", version, about = "SDR synthesis, spline expansion, features and metrics for HDR frames")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override keys of the `--config` document.
#[derive(Args)]
struct Overrides {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short = 'o', global = true)]
    output_dir: Option<PathBuf>,
    /// Tone operator label (repeatable), e.g. reinhard or bt2390_eetf_gm.
    #[arg(long = "tmo", global = true, value_parser = parse_tmo)]
    tmos: Vec<ToneOperator>,
    /// CRF level 23, 31 or 39, or `none` to skip the codec (repeatable).
    #[arg(long = "crf", global = true, value_parser = parse_crf)]
    crfs: Vec<Option<Crf>>,
    /// Spline bins K.
    #[arg(long, global = true)]
    bins: Option<usize>,
    #[arg(long, global = true)]
    lambda_l1: Option<f64>,
    #[arg(long, global = true)]
    lambda_rgb: Option<f64>,
    #[arg(long, global = true)]
    lambda_smooth: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Spectral bands.
    #[arg(long, global = true)]
    bands: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a PQ BT.2020 frame over the operator × CRF grid.
    Synthesize { input: PathBuf },
    /// Fit a luminance spline from SDR onto a reference and expand the SDR frame.
    FitExpand { sdr: PathBuf, reference: PathBuf },
    /// PU21 PSNR and ΔE_ITP report.
    Metrics {
        reference: PathBuf,
        test: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Physical and spectral feature summary.
    Features {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the luminance, log-gradient and saturation maps as PFM into the output directory.
        #[arg(long)]
        dump_maps: bool,
    },
    /// Preservation, rank and gradient checks on a seeded toy block.
    AdapterDemo,
}

fn parse_tmo(s: &str) -> Result<ToneOperator, String> {
    let ops = default_operators();
    ops.iter().find(|op| op.label() == s).cloned().ok_or_else(|| {
        let labels: Vec<String> = ops.iter().map(|o| o.label()).collect();
        format!("unknown operator {s:?}; expected one of {}", labels.join(", "))
    })
}

fn parse_crf(s: &str) -> Result<Option<Crf>, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: u32 = s.parse().map_err(|_| format!("not a CRF level: {s:?}"))?;
    Crf::new(v).map(Some).map_err(|e| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) | Error::Json(_) | Error::Dimension { .. } | Error::Tag { .. } => 2,
            Error::Config(_) | Error::Index { .. } => 3,
            Error::Numerical(_) | Error::NonFinite { .. } | Error::Domain { .. } | Error::Diverged { .. } => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_context(path: &Path, e: Error) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn load_config(o: &Overrides) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &o.config {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_context(path, e.into()))?;
            PipelineConfig::from_json(&text).map_err(|e| io_context(path, e))?
        }
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.output_dir {
        cfg.output_dir = v.display().to_string();
    }
    if !o.tmos.is_empty() {
        cfg.tmos = o.tmos.clone();
    }
    if !o.crfs.is_empty() {
        cfg.crfs = o.crfs.clone();
    }
    if let Some(v) = o.bins {
        cfg.fit.bins = v;
    }
    if let Some(v) = o.lambda_l1 {
        cfg.fit.lambda_l1 = v;
    }
    if let Some(v) = o.lambda_rgb {
        cfg.lambda_rgb = v;
    }
    if let Some(v) = o.lambda_smooth {
        cfg.fit.lambda_smooth = v;
    }
    if let Some(v) = o.max_iters {
        cfg.fit.max_iters = v;
    }
    if let Some(v) = o.bands {
        cfg.bands = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Run {
    cfg: PipelineConfig,
    config_sha256: String,
}

impl Run {
    fn provenance(&self, command: &str, seed: u64, inputs: &[&Path]) -> Result<Provenance, Failure> {
        let digests = inputs
            .iter()
            .map(|p| digest_file(p).map_err(|e| io_context(p, e)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Provenance::new(command, self.config_sha256.clone(), seed, digests))
    }

    fn output_dir(&self) -> Result<PathBuf, Failure> {
        let dir = PathBuf::from(&self.cfg.output_dir);
        fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e.into()))?;
        Ok(dir)
    }
}

fn read(path: &Path) -> Result<lumaflux_core::TaggedImage, Failure> {
    read_frame(path).map(|(img, _)| img).map_err(|e| io_context(path, e))
}

/// Writes a non-frame output plus a `<file>.json` provenance sidecar.
fn write_with_provenance(path: &Path, bytes: &[u8], prov: &Provenance) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_context(path, e.into()))?;
    write_json(&sidecar_path(path), prov).map_err(|e| io_context(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn trace_csv(trace: &[f64]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure {
        code: 2,
        message: format!("loss trace: {e}"),
    };
    w.write_record(["iteration", "loss"]).map_err(io)?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:e}")]).map_err(io)?;
    }
    w.into_inner().map_err(|e| Failure {
        code: 2,
        message: format!("loss trace: {e}"),
    })
}

fn cmd_synthesize(run: &Run, input: &Path) -> Result<(), Failure> {
    let hdr = read(input)?;
    let frames = synthesize(&hdr, &run.cfg, pipeline::worker_threads()?)?;
    let dir = run.output_dir()?;
    let mut written = Vec::with_capacity(frames.len());
    for f in &frames {
        let path = dir.join(format!("{}.pfm", f.file_stem()));
        let prov = run.provenance("synthesize", f.spec.seed, &[input])?;
        let detail = serde_json::to_value(&f.spec).map_err(Error::from)?;
        write_frame(&path, &f.image, Some(prov), Some(detail)).map_err(|e| io_context(&path, e))?;
        written.push(path.display().to_string());
    }
    print_json(&serde_json::json!({ "frames": written }))
}

fn cmd_fit_expand(run: &Run, sdr_path: &Path, ref_path: &Path) -> Result<(), Failure> {
    let sdr = read(sdr_path)?;
    let reference = read(ref_path)?;
    let dir = run.output_dir()?;
    let inputs = [sdr_path, ref_path];
    let trace_path = dir.join("loss_trace.csv");
    let result = match fit_expand(&sdr, &reference, &run.cfg) {
        Ok(r) => r,
        Err(Error::Diverged { reason, trace }) => {
            let prov = run.provenance("fit-expand", run.cfg.seed, &inputs)?;
            write_with_provenance(&trace_path, &trace_csv(&trace)?, &prov)?;
            return Err(Failure {
                code: 4,
                message: format!("fit diverged: {reason} (loss trace in {})", trace_path.display()),
            });
        }
        Err(e) => return Err(e.into()),
    };
    for w in &result.fit.warnings {
        eprintln!("warning: {w}");
    }
    let prov = run.provenance("fit-expand", run.cfg.seed, &inputs)?;
    let hdr_path = dir.join("expanded.pfm");
    let detail = serde_json::json!({
        "chroma_mix": result.chroma_mix,
        "luma_l1": result.luma_l1,
        "rgb_l1": result.rgb_l1,
        "objective": result.objective,
    });
    write_frame(&hdr_path, &result.hdr, Some(prov.clone()), Some(detail.clone())).map_err(|e| io_context(&hdr_path, e))?;
    let rqs_path = dir.join("rqs.json");
    let doc = RqsDocument::from_fit(&result.fit, &run.cfg.fit);
    let mut rqs_bytes = serde_json::to_vec_pretty(&doc).map_err(Error::from)?;
    rqs_bytes.push(b'\n');
    write_with_provenance(&rqs_path, &rqs_bytes, &prov)?;
    write_with_provenance(&trace_path, &trace_csv(&result.fit.loss_trace)?, &prov)?;
    print_json(&serde_json::json!({
        "expanded": hdr_path.display().to_string(),
        "spline": rqs_path.display().to_string(),
        "loss_trace": trace_path.display().to_string(),
        "iterations": result.fit.loss_trace.len() - 1,
        "final_loss": result.fit.loss_trace.last(),
        "metrics": detail,
    }))
}

fn cmd_metrics(run: &Run, ref_path: &Path, test_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let report = metric_report(&read(ref_path)?, &read(test_path)?)?;
    if let Some(out) = out {
        let mut bytes = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
        bytes.push(b'\n');
        let prov = run.provenance("metrics", run.cfg.seed, &[ref_path, test_path])?;
        write_with_provenance(out, &bytes, &prov)?;
    }
    print_json(&report)
}

fn cmd_features(run: &Run, input: &Path, out: Option<&Path>, dump_maps: bool) -> Result<(), Failure> {
    let img = read(input)?;
    let feats = phys_features(&img, &run.cfg)?;
    let dump = summarize_features(&img, &feats, &run.cfg)?;
    let prov = run.provenance("features", run.cfg.seed, &[input])?;
    if dump_maps {
        let dir = run.output_dir()?;
        let maps: [(&str, &Tensor); 3] = [("y", &feats.y_map), ("loggrad", &feats.loggrad_map), ("sat", &feats.sat_map)];
        for (name, map) in maps {
            let path = dir.join(format!("{name}.pfm"));
            let bytes = encode_pfm_gray(img.height(), img.width(), map.data())?;
            write_with_provenance(&path, &bytes, &prov)?;
        }
    }
    if let Some(out) = out {
        let mut bytes = serde_json::to_vec_pretty(&dump).map_err(Error::from)?;
        bytes.push(b'\n');
        write_with_provenance(out, &bytes, &prov)?;
    }
    print_json(&dump)
}

fn cmd_adapter_demo(run: &Run) -> Result<(), Failure> {
    let report = adapter_demo(&run.cfg.toy, run.cfg.seed)?;
    print_json(&report)?;
    if report.passed {
        Ok(())
    } else {
        let mut failed = Vec::new();
        if !report.preservation.passed {
            failed.push("preservation".to_string());
        }
        if !report.rank.passed {
            failed.push("rank".to_string());
        }
        failed.extend(report.gradients.failures().iter().map(|g| format!("gradient {g}")));
        Err(Failure {
            code: 4,
            message: format!("adapter checks failed: {}", failed.join(", ")),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.overrides)?;
    // where outputs land does not change them
    let hashed = PipelineConfig {
        output_dir: String::new(),
        ..cfg.clone()
    };
    let run = Run {
        config_sha256: config_hash(&hashed)?,
        cfg,
    };
    match &cli.command {
        Command::Synthesize { input } => cmd_synthesize(&run, input),
        Command::FitExpand { sdr, reference } => cmd_fit_expand(&run, sdr, reference),
        Command::Metrics { reference, test, out } => cmd_metrics(&run, reference, test, out.as_deref()),
        Command::Features { input, out, dump_maps } => cmd_features(&run, input, out.as_deref(), *dump_maps),
        Command::AdapterDemo => cmd_adapter_demo(&run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
