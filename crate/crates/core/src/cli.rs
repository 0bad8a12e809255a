//! Command-line front end. Exit codes: 0 on success, 2 on argument errors
//! (detected before any computation), 1 on runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Result, TdvError};
use crate::io::{read_video, write_video, VideoFormat};
use crate::pipeline::{
    compare_report, line_search_params, rof2dt_denoise, rule_of_thumb, tdv_denoise_with_weights,
    write_report_csv, DenoiseParams, SearchConfig,
};
use crate::solver::{write_trace_csv, SolveReport, SolverConfig};
use crate::structure_tensor::{build_weight_field, write_weight_csv};
use crate::volume::{add_gaussian_noise_video, franke_video, psnr, psnr_per_frame, MultiChannelVideo, NoiseSpec, PEAK};

#[derive(Parser, Debug)]
#[command(name = "tdv", version, about = "Total directional variation video denoising", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add unclipped Gaussian noise.
    Noise(NoiseArgs),
    /// Denoise with TDV or ROF 2D+t.
    Denoise(DenoiseArgs),
    /// PSNR against a reference.
    Psnr(PsnrArgs),
    /// PSNR-maximising parameter search against a reference.
    Tune(TuneArgs),
    /// Global and per-frame PSNR of several results as CSV.
    Compare(CompareArgs),
    /// Print dimensions and channel count.
    Info(InfoArgs),
    /// Generate the moving Franke test video.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output path (.y4m, .tdv, or a directory for image sequences).
    #[arg(short, long)]
    output: PathBuf,
    /// Output format, overriding the extension.
    #[arg(long, value_parser = parse_format)]
    format: Option<VideoFormat>,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    input: PathBuf,
    #[command(flatten)]
    out: OutputArgs,
    /// Noise standard deviation on the 0..255 scale.
    #[arg(long)]
    std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Tdv,
    Rof2dt,
}

#[derive(Args, Debug, Clone, Copy)]
struct ParamArgs {
    #[arg(long, requires_all = ["rho", "eta"], conflicts_with = "auto_std")]
    sigma: Option<f64>,
    #[arg(long, requires_all = ["sigma", "eta"], conflicts_with = "auto_std")]
    rho: Option<f64>,
    #[arg(long, conflicts_with = "auto_std")]
    eta: Option<f64>,
    /// Derive (σ, ρ, η) from the noise level with the rule of thumb.
    #[arg(long)]
    auto_std: Option<f64>,
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    maxiter: usize,
    /// Bound on the squared operator norm.
    #[arg(long, default_value_t = 24.0)]
    lsq: f64,
}

impl SolverArgs {
    fn config(&self, trace: bool) -> Result<SolverConfig> {
        Ok(SolverConfig::new(self.lsq, self.tol, self.maxiter)?.with_trace(trace))
    }
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    input: PathBuf,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long, value_enum, default_value_t = Method::Tdv)]
    method: Method,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Reference video; adds PSNR lines to the report.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Write the run report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-iteration residual and energy CSV (first channel).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-cell weight field CSV (first channel, TDV only).
    #[arg(long)]
    weights_csv: Option<PathBuf>,
    /// key=value file of default flags; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PsnrArgs {
    input: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Also print one value per frame.
    #[arg(long)]
    per_frame: bool,
}

#[derive(Args, Debug)]
struct TuneArgs {
    input: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = 50)]
    budget: usize,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 0.5)]
    shrink: f64,
    /// Starting point; defaults to the rule of thumb for --auto-std.
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the best denoised video.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Evaluation log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Noisy input, listed as method `input`.
    #[arg(long)]
    noisy: Option<PathBuf>,
    /// Results as NAME=PATH.
    #[arg(required = true, value_parser = parse_named)]
    methods: Vec<(String, PathBuf)>,
    /// CSV destination (stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InfoArgs {
    input: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    /// Radius of the circular motion of the origin.
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
}

fn parse_format(s: &str) -> std::result::Result<VideoFormat, String> {
    VideoFormat::from_name(s).ok_or_else(|| format!("unknown format {s:?} (y4m, raw, png, pgm)"))
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<TdvError> for Failure {
    fn from(e: TdvError) -> Self {
        match e {
            TdvError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Inserts the entries of a `--config` file as flags directly after the
/// subcommand so that later command-line occurrences override them.
fn expand_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let pos = argv.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else { return Ok(argv) };
    let arg = argv[pos].to_string_lossy().into_owned();
    let (path, consumed) = match arg.strip_prefix("--config=") {
        Some(p) => (PathBuf::from(p), 1),
        None => match argv.get(pos + 1) {
            Some(p) => (PathBuf::from(p), 2),
            None => return Err("--config requires a path".into()),
        },
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let key = key.trim().replace('_', "-");
        flags.push(OsString::from(format!("--{key}")));
        flags.push(OsString::from(value.trim()));
    }
    let mut out = argv;
    out.drain(pos..pos + consumed);
    // argv[0] is the program, argv[1] the subcommand.
    let at = out.len().min(2);
    out.splice(at..at, flags);
    Ok(out)
}

fn run(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Noise(a) => noise(a),
        Command::Denoise(a) => denoise(a),
        Command::Psnr(a) => psnr_cmd(a),
        Command::Tune(a) => tune(a),
        Command::Compare(a) => compare(a),
        Command::Info(a) => info(a),
        Command::Synth(a) => synth(a),
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn emit_report(report: &str, path: Option<&Path>) -> std::result::Result<(), Failure> {
    print!("{report}");
    if let Some(p) = path {
        fs::write(p, report)?;
    }
    Ok(())
}

fn noise(a: NoiseArgs) -> std::result::Result<(), Failure> {
    let spec = NoiseSpec::new(a.std, a.seed)?;
    let v = read_video(&a.input)?;
    let noisy = add_gaussian_noise_video(&v, &spec);
    write_video(&a.out.output, &noisy, a.out.format)?;
    println!("std={}\nseed={}", a.std, a.seed);
    Ok(())
}

/// Parameters from flags: explicit (σ, ρ, η), or the rule of thumb.
fn resolve_params(p: &ParamArgs, method: Method) -> Result<DenoiseParams> {
    match (p.auto_std, p.sigma, p.rho, p.eta) {
        (Some(std), ..) => rule_of_thumb(std),
        (None, Some(s), Some(r), Some(e)) => DenoiseParams::new(s, r, e),
        (None, None, None, Some(e)) if method == Method::Rof2dt => {
            // Smoothing scales are unused by ROF.
            DenoiseParams::new(1.0, 1.0, e)
        }
        _ => Err(TdvError::invalid("give --sigma, --rho and --eta, or --auto-std")),
    }
}

fn denoise(a: DenoiseArgs) -> std::result::Result<(), Failure> {
    let params = resolve_params(&a.params, a.method)?;
    let cfg = a.solver.config(a.trace.is_some())?;
    let noisy = read_video(&a.input)?;
    let reference = a.reference.as_deref().map(read_video).transpose()?;

    let (out, reports): (MultiChannelVideo, Vec<SolveReport>) = match a.method {
        Method::Tdv => {
            let smoothing = params.smoothing()?;
            let mut channels = Vec::new();
            let mut reports = Vec::new();
            for (c, ch) in noisy.channels().iter().enumerate() {
                let weights = build_weight_field(ch, &smoothing)?;
                if c == 0 {
                    if let Some(p) = &a.weights_csv {
                        write_weight_csv(&weights, BufWriter::new(File::create(p)?))?;
                    }
                }
                let (u, r) = tdv_denoise_with_weights(ch, &weights, params.eta, &cfg)?;
                channels.push(u);
                reports.push(r);
            }
            (MultiChannelVideo::new(channels)?, reports)
        }
        Method::Rof2dt => rof2dt_denoise(&noisy, params.eta, &cfg)?,
    };
    write_video(&a.out.output, &out, a.out.format)?;
    if let Some(p) = &a.trace {
        write_trace_csv(&reports[0].trace, BufWriter::new(File::create(p)?))?;
    }

    let mut rep = String::new();
    let method = match a.method {
        Method::Tdv => "tdv",
        Method::Rof2dt => "rof2dt",
    };
    let _ = writeln!(rep, "method={method}");
    if a.method == Method::Tdv {
        let _ = writeln!(rep, "sigma={:.6}\nrho={:.6}", params.sigma, params.rho);
    }
    let _ = writeln!(rep, "eta={:.6}", params.eta);
    if let Some(s) = a.params.auto_std {
        let _ = writeln!(rep, "auto_std={s}");
    }
    let _ = writeln!(rep, "tol={}\nmaxiter={}\nlsq={}", cfg.tol, cfg.maxiter, cfg.l_sq);
    for (c, r) in reports.iter().enumerate() {
        let _ = writeln!(
            rep,
            "channel{c}.iterations={}\nchannel{c}.residual={:.3e}\nchannel{c}.energy={:.6}\nchannel{c}.converged={}",
            r.iterations, r.final_residual, r.final_energy, r.converged
        );
    }
    if let Some(clean) = &reference {
        let _ = writeln!(rep, "psnr_input={}", fmt_db(psnr(&noisy, clean, PEAK)?));
        let _ = writeln!(rep, "psnr_output={}", fmt_db(psnr(&out, clean, PEAK)?));
    }
    emit_report(&rep, a.report.as_deref())
}

fn psnr_cmd(a: PsnrArgs) -> std::result::Result<(), Failure> {
    let u = read_video(&a.input)?;
    let r = read_video(&a.reference)?;
    println!("psnr={}", fmt_db(psnr(&u, &r, PEAK)?));
    if a.per_frame {
        for (k, p) in psnr_per_frame(&u, &r, PEAK)?.into_iter().enumerate() {
            println!("frame{k}={}", fmt_db(p));
        }
    }
    Ok(())
}

fn tune(a: TuneArgs) -> std::result::Result<(), Failure> {
    let init = resolve_params(&a.params, Method::Tdv)?;
    let search = SearchConfig::new(a.radius, a.shrink, a.budget)?;
    let cfg = a.solver.config(false)?;
    let noisy = read_video(&a.input)?;
    let clean = read_video(&a.reference)?;
    let state = line_search_params(&noisy, &clean, &init, &search, &cfg)?;

    if let Some(p) = &a.log {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "evaluation,sigma,rho,eta,psnr_db")?;
        for (n, (q, s)) in state.log.iter().enumerate() {
            writeln!(w, "{n},{},{},{},{}", q.sigma, q.rho, q.eta, fmt_db(*s))?;
        }
        w.flush()?;
    }
    if let Some(out) = &a.output {
        let (u, _) = crate::pipeline::tdv_denoise(&noisy, &state.best, &cfg)?;
        write_video(out, &u, None)?;
    }
    let mut rep = String::new();
    let _ = writeln!(rep, "init={:.6},{:.6},{:.6}", init.sigma, init.rho, init.eta);
    let _ = writeln!(rep, "budget={}\nradius={}\nshrink={}", a.budget, a.radius, a.shrink);
    let _ = writeln!(rep, "tol={}\nmaxiter={}\nlsq={}", cfg.tol, cfg.maxiter, cfg.l_sq);
    let _ = writeln!(rep, "evaluations={}", state.log.len());
    let b = state.best;
    let _ = writeln!(rep, "sigma={:.6}\nrho={:.6}\neta={:.6}", b.sigma, b.rho, b.eta);
    let _ = writeln!(rep, "psnr_search={}", fmt_db(state.best_psnr));
    if let Some(p) = state.rescored_psnr {
        let _ = writeln!(rep, "psnr_final={}", fmt_db(p));
    }
    emit_report(&rep, a.report.as_deref())
}

fn compare(a: CompareArgs) -> std::result::Result<(), Failure> {
    let clean = read_video(&a.reference)?;
    let noisy = a.noisy.as_deref().map(read_video).transpose()?;
    let outputs = a
        .methods
        .iter()
        .map(|(name, p)| Ok((name.clone(), read_video(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_report(&clean, noisy.as_ref(), &outputs)?;
    match &a.output {
        Some(p) => write_report_csv(&rows, BufWriter::new(File::create(p)?))?,
        None => write_report_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn info(a: InfoArgs) -> std::result::Result<(), Failure> {
    let v = read_video(&a.input)?;
    let d = v.dims();
    let (lo, hi) = v
        .channels()
        .iter()
        .map(|c| c.min_max())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
    println!("rows={}\ncols={}\nframes={}\nchannels={}\nmin={lo}\nmax={hi}", d.rows, d.cols, d.frames, v.num_channels());
    Ok(())
}

fn synth(a: SynthArgs) -> std::result::Result<(), Failure> {
    let v = franke_video(a.rows, a.cols, a.frames, a.amplitude)?;
    write_video(&a.out.output, &MultiChannelVideo::grey(v), a.out.format)?;
    println!("rows={}\ncols={}\nframes={}\namplitude={}", a.rows, a.cols, a.frames, a.amplitude);
    Ok(())
}
