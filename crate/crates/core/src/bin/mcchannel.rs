//! `mcchannel`: evaluate, simulate, synthesize, fit and compare channel
//! responses.
//!
//! Values are resolved as command-line flags, then the `--config` JSON file,
//! then built-in defaults taken from the reference experiment (10 cm link,
//! isopropyl alcohol D = 0.0993 cm^2/s, 11 s fitting window).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mcchannel::channel::{diffusion_response, DiffusionParams, VerticalChannelParams};
use mcchannel::commands::{self, Baseline, ModelSpec, Pipeline, TrialInput};
use mcchannel::fit::FitConfig;
use mcchannel::manifest::{InputDigest, RunManifest};
use mcchannel::reference;
use mcchannel::sim::{self, SimConfig};
use mcchannel::trace::{parse_trace, serialize_trace, TimeSeries};
use mcchannel::Error;

#[derive(Parser, Debug)]
#[command(
    name = "mcchannel",
    version,
    about = "Molecular communication channel models, fitting and simulation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Directory for output files and manifest.json. Without it, data goes
    /// to standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// RNG seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Data format of emitted files [default: csv]
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// JSON file supplying defaults for the subcommand's flags (keys are
    /// flag names with underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelKind {
    Diffusion,
    Vertical,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a channel model on a uniform time grid.
    Eval(EvalArgs),
    /// Generate synthetic vertical-model trials with Gaussian noise.
    Synth(SynthArgs),
    /// Fit (a, b, e) to trace files and average the trials.
    Fit(FitArgs),
    /// Align averaged experiment traces with a model, both peak-normalized.
    Compare(CompareArgs),
    /// Run the particle random walk from a JSON configuration.
    Simulate(SimulateArgs),
}

/// Model parameters shared by `eval` and `compare`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelArgs {
    /// Model to evaluate [default: vertical]
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Vertical-model amplitude a [default: 1.8788, reference fit]
    #[arg(long)]
    a: Option<f64>,
    /// Vertical-model spread b [default: 60.4567, reference fit]
    #[arg(long)]
    b: Option<f64>,
    /// Vertical-model gravity slope e [default: 0.0301, reference fit]
    #[arg(long)]
    e: Option<f64>,
    /// Link distance [default: 10 (cm) for diffusion; 0.1 for vertical, the
    /// unit the reference coefficients were fitted in]
    #[arg(long)]
    d: Option<f64>,
    /// Released molecules M for the diffusion model [default: 1]
    #[arg(long)]
    molecules: Option<f64>,
    /// Diffusion coefficient D, cm^2/s [default: 0.0993, isopropyl alcohol]
    #[arg(long)]
    diffusion_coefficient: Option<f64>,
    /// Spatial dimension n of the diffusion model [default: 1]
    #[arg(long)]
    dimension: Option<u32>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridArgs {
    /// Grid starts after this time, s [default: 0]
    #[arg(long)]
    t_start: Option<f64>,
    /// Last grid time, s [default: 11]
    #[arg(long)]
    t_end: Option<f64>,
    /// Sampling rate, Hz [default: 10; the sensor rate is a guess]
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    grid: GridArgs,
    /// Write negative vertical-model values as 0 (plotting convenience)
    #[arg(long)]
    #[serde(default)]
    clamp_negative: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    e: Option<f64>,
    /// Link distance [default: 0.1]
    #[arg(long)]
    d: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    grid: GridArgs,
    /// Standard deviation of the additive Gaussian noise [default: 0]
    #[arg(long)]
    noise: Option<f64>,
    /// Number of trials [default: 1]
    #[arg(long)]
    trials: Option<usize>,
    /// Constant sensor offset added to every sample [default: 0]
    #[arg(long)]
    baseline_offset: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineArgs {
    /// Baseline removal: none, auto (mean of the first --baseline-samples
    /// values) or a number [default: none]
    #[arg(long)]
    baseline: Option<String>,
    /// Samples averaged by --baseline auto [default: 5]
    #[arg(long)]
    baseline_samples: Option<usize>,
    /// Window start, exclusive, s [default: 0]
    #[arg(long)]
    window_start: Option<f64>,
    /// Window end, inclusive, s [default: 11, the reference fitting window]
    #[arg(long)]
    window_end: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
struct FitArgs {
    /// Trace CSV files, one per trial
    #[serde(default)]
    files: Vec<PathBuf>,
    /// Link distance [default: the trace's distance_cm metadata]
    #[arg(long)]
    d: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pipeline: PipelineArgs,
    /// Divide each windowed trace by its maximum before fitting
    #[arg(long)]
    #[serde(default)]
    normalize: bool,
    /// Report converged trials even if others fail
    #[arg(long)]
    #[serde(default)]
    keep_going: bool,
    /// LM iteration budget [default: 200]
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Initial guess "a,b,e" [default: derived from the trace peak]
    #[arg(long, value_delimiter = ',')]
    initial: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
struct CompareArgs {
    /// Trace CSV files, averaged as trials
    #[serde(default)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation configuration (JSON); --config is accepted as well
    sim_config: Option<PathBuf>,
}

/// An error in the user's invocation; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn flag_for(name: &str) -> &str {
    match name {
        "amplitude" => "--a",
        "spread" => "--b",
        "gravity_slope" => "--e",
        "distance" => "--d",
        "molecule_count" => "--molecules",
        "diffusion_coefficient" => "--diffusion-coefficient",
        "dimension" => "--dimension",
        "t_end" => "--t-end",
        "rate" => "--rate",
        "grid" => "--t-start/--t-end/--rate",
        "noise_sigma" => "--noise",
        "window" => "--window-start/--window-end",
        "max_iterations" => "--max-iterations",
        "initial_guess" => "--initial",
        other => other,
    }
}

/// Converts library parameter errors into usage errors that name the flag.
fn usage(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidParameter { name, reason } => {
            UsageError(format!("invalid {}: {reason}", flag_for(name))).into()
        }
        other => other.into(),
    }
}

struct Run {
    started: Instant,
    manifest: RunManifest,
    output: Option<PathBuf>,
    format: Format,
    seed: u64,
    seed_flag: Option<u64>,
}

impl Run {
    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let dir = self.output.as_ref().expect("write requires --output");
        std::fs::write(dir.join(name), bytes)
            .with_context(|| format!("writing {}", dir.join(name).display()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest
            .inputs
            .push(InputDigest::of_bytes(path.display().to_string(), &bytes));
        Ok(bytes)
    }

    fn finish(mut self, success: bool) -> anyhow::Result<bool> {
        if let Some(dir) = self.output.clone() {
            self.manifest.success = success;
            self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
            let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
            std::fs::write(dir.join("manifest.json"), text)?;
        }
        Ok(success)
    }
}

/// Flags override the config file; unset flags (None, false, empty lists)
/// fall through to it.
fn layered<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: Option<&Value>,
    section: &str,
) -> anyhow::Result<T> {
    let mut merged = match file {
        Some(Value::Object(m)) => {
            let mut m = m.clone();
            m.remove("seed");
            m.remove("format");
            m
        }
        Some(_) => bail!(UsageError("--config must hold a JSON object".into())),
        None => Default::default(),
    };
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            let unset = v.is_null()
                || v == Value::Bool(false)
                || v.as_array().is_some_and(|a| a.is_empty());
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_path_to_error::deserialize(Value::Object(merged)).map_err(|e| {
        UsageError(format!(
            "config error for {section} at `{}`: {}",
            e.path(),
            e.inner()
        ))
        .into()
    })
}

fn resolve_model(m: &ModelArgs) -> anyhow::Result<ModelSpec> {
    let model = match m.model.unwrap_or(ModelKind::Vertical) {
        ModelKind::Vertical => ModelSpec::Vertical(VerticalChannelParams {
            amplitude: m.a.unwrap_or(reference::A),
            spread: m.b.unwrap_or(reference::B),
            gravity_slope: m.e.unwrap_or(reference::E),
            distance: m.d.unwrap_or(reference::FIT_DISTANCE),
        }),
        ModelKind::Diffusion => ModelSpec::Diffusion(DiffusionParams {
            molecule_count: m.molecules.unwrap_or(1.0),
            diffusion_coefficient: m
                .diffusion_coefficient
                .unwrap_or(reference::DIFFUSION_COEFFICIENT),
            dimension: m.dimension.unwrap_or(1),
            distance: m.d.unwrap_or(reference::DISTANCE_CM),
        }),
    };
    model.validate().map_err(usage)?;
    Ok(model)
}

fn resolve_grid(g: &GridArgs) -> anyhow::Result<(Vec<f64>, Value)> {
    let (t0, t1, rate) = (
        g.t_start.unwrap_or(0.0),
        g.t_end.unwrap_or(reference::FIT_WINDOW_S),
        g.rate.unwrap_or(10.0),
    );
    let grid = sim::uniform_grid(t0, t1, rate).map_err(usage)?;
    Ok((grid, json!({"t_start": t0, "t_end": t1, "rate": rate})))
}

fn resolve_pipeline(p: &PipelineArgs, normalize: bool) -> anyhow::Result<Pipeline> {
    let mut baseline: Baseline = p
        .baseline
        .as_deref()
        .unwrap_or("none")
        .parse()
        .map_err(|e| UsageError(format!("invalid --baseline: {e}")))?;
    if let Baseline::Auto { samples } = &mut baseline {
        *samples = p.baseline_samples.unwrap_or(5);
        if *samples == 0 {
            bail!(UsageError(
                "invalid --baseline-samples: must be at least 1".into()
            ));
        }
    }
    let window = (
        p.window_start.unwrap_or(0.0),
        p.window_end.unwrap_or(reference::FIT_WINDOW_S),
    );
    if !(window.0 < window.1) {
        bail!(UsageError(format!(
            "invalid --window-start/--window-end: ({}, {}] is empty",
            window.0, window.1
        )));
    }
    Ok(Pipeline {
        baseline,
        window,
        normalize,
    })
}

fn emit_trace(run: &mut Run, name: &str, ts: &TimeSeries) -> anyhow::Result<()> {
    let (file, body) = match run.format {
        Format::Csv => (format!("{name}.csv"), serialize_trace(ts)),
        Format::Json => (
            format!("{name}.json"),
            serde_json::to_string_pretty(ts)? + "\n",
        ),
    };
    if run.output.is_some() {
        run.write(&file, body.as_bytes())
    } else {
        print!("{body}");
        Ok(())
    }
}

fn cmd_eval(run: &mut Run, args: &EvalArgs) -> anyhow::Result<bool> {
    let model = resolve_model(&args.model)?;
    let (grid, grid_cfg) = resolve_grid(&args.grid)?;
    run.manifest.config =
        json!({"model": model, "grid": grid_cfg, "clamp_negative": args.clamp_negative});
    let ts = commands::eval_model(&model, &grid, args.clamp_negative).map_err(usage)?;
    emit_trace(run, "eval", &ts)?;
    Ok(true)
}

fn cmd_synth(run: &mut Run, args: &SynthArgs) -> anyhow::Result<bool> {
    let params = VerticalChannelParams {
        amplitude: args.a.unwrap_or(reference::A),
        spread: args.b.unwrap_or(reference::B),
        gravity_slope: args.e.unwrap_or(reference::E),
        distance: args.d.unwrap_or(reference::FIT_DISTANCE),
    };
    params.validate().map_err(usage)?;
    let (grid, grid_cfg) = resolve_grid(&args.grid)?;
    let noise = args.noise.unwrap_or(0.0);
    let trials = args.trials.unwrap_or(1);
    let offset = args.baseline_offset.unwrap_or(0.0);
    if trials == 0 {
        bail!(UsageError("invalid --trials: must be at least 1".into()));
    }
    if trials > 1 && run.output.is_none() {
        bail!(UsageError("--trials > 1 needs --output".into()));
    }
    run.manifest.config = json!({
        "params": params, "grid": grid_cfg, "noise": noise, "trials": trials,
        "baseline_offset": offset, "seed": run.seed,
    });
    // Trial k draws its noise from the k-th output of the master generator.
    let mut master = rand_chacha::ChaCha8Rng::seed_from_u64(run.seed);
    for k in 1..=trials {
        let mut ts =
            sim::synthetic_trace(&params, &grid, noise, master.next_u64()).map_err(usage)?;
        if offset != 0.0 {
            ts = TimeSeries::from_pairs(
                ts.samples().iter().map(|s| (s.t, s.v + offset)),
                ts.meta.clone(),
            )?;
            ts.meta.units = mcchannel::trace::Units::RawAnalog;
        }
        ts.meta.trial_id = Some(format!("trial_{k}"));
        emit_trace(run, &format!("trial_{k}"), &ts)?;
    }
    Ok(true)
}

fn trial_id_for(path: &Path, ts: Option<&TimeSeries>) -> String {
    ts.and_then(|t| t.meta.trial_id.clone()).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

fn load_traces(run: &mut Run, files: &[PathBuf]) -> anyhow::Result<Vec<TrialInput>> {
    if files.is_empty() {
        bail!(UsageError("at least one trace file is required".into()));
    }
    let mut out = Vec::new();
    for f in files {
        let bytes = run.read_input(f)?;
        let parsed = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Degenerate(format!("not UTF-8: {e}")))
            .and_then(parse_trace);
        out.push((trial_id_for(f, parsed.as_ref().ok()), parsed));
    }
    Ok(out)
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_fit(run: &mut Run, args: &FitArgs) -> anyhow::Result<bool> {
    let pipeline = resolve_pipeline(&args.pipeline, args.normalize)?;
    let cfg = FitConfig {
        initial_guess: match &args.initial {
            Some(v) if v.len() == 3 => Some([v[0], v[1], v[2]]),
            Some(_) => bail!(UsageError("invalid --initial: expected a,b,e".into())),
            None => None,
        },
        max_iterations: args.max_iterations.unwrap_or(200),
        ..FitConfig::default()
    };
    cfg.validate().map_err(usage)?;
    if let Some(d) = args.d {
        if !(d > 0.0 && d.is_finite()) {
            bail!(UsageError(format!(
                "invalid --d: must be finite and > 0, got {d}"
            )));
        }
    }
    run.manifest.config = json!({
        "files": args.files, "d": args.d, "pipeline": pipeline, "fit": cfg,
        "keep_going": args.keep_going,
    });
    let inputs = load_traces(run, &args.files)?;
    let (report, fitted) = commands::fit_trials(inputs, args.d, &pipeline, &cfg, args.keep_going)
        .map_err(anyhow::Error::new)?;

    for e in &report.errors {
        eprintln!("trial {}: {}", e.trial_id, e.message);
    }
    match run.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            println!("trial_id,a,b,e,rss,iterations,converged");
            for t in &report.trials {
                println!(
                    "{},{},{},{},{},{},{}",
                    t.trial_id, t.a, t.b, t.e, t.rss, t.iterations, t.converged
                );
            }
            if let Some(avg) = &report.average {
                println!("average,{},{},{},,,", avg.a, avg.b, avg.e);
            }
        }
    }
    if run.output.is_some() {
        run.write(
            "fit_report.json",
            (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
        )?;
        for f in &fitted {
            let curve = f.fitted_curve();
            run.write(
                &format!("fitted_{}.csv", safe_name(&f.trial_id)),
                serialize_trace(&curve).as_bytes(),
            )?;
        }
    }
    Ok(report.success())
}

fn cmd_compare(run: &mut Run, args: &CompareArgs) -> anyhow::Result<bool> {
    let model = resolve_model(&args.model)?;
    let pipeline = resolve_pipeline(&args.pipeline, false)?;
    run.manifest.config = json!({"files": args.files, "model": model, "pipeline": pipeline});
    let inputs = load_traces(run, &args.files)?;
    let traces = inputs
        .into_iter()
        .map(|(id, r)| r.with_context(|| format!("trial {id}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cmp = commands::compare(&traces, &pipeline, &model)?;
    let summary = json!({
        "experiment_peak_s": cmp.experiment_peak_s,
        "model_peak_s": cmp.model_peak_s,
        "peak_lag_s": cmp.peak_lag_s,
    });
    let (name, body) = match run.format {
        Format::Csv => ("compare.csv", cmp.to_csv()),
        Format::Json => ("compare.json", serde_json::to_string_pretty(&cmp)? + "\n"),
    };
    eprintln!("peak_lag_s={}", cmp.peak_lag_s);
    if run.output.is_some() {
        run.write(name, body.as_bytes())?;
        run.write(
            "compare_summary.json",
            (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
        )?;
    } else {
        print!("{body}");
    }
    Ok(true)
}

fn cmd_simulate(
    run: &mut Run,
    args: &SimulateArgs,
    fallback: Option<&PathBuf>,
) -> anyhow::Result<bool> {
    let path = args
        .sim_config
        .as_ref()
        .or(fallback)
        .ok_or_else(|| UsageError("simulate needs a JSON configuration file".into()))?
        .clone();
    if run.output.is_none() {
        bail!(UsageError("simulate needs --output".into()));
    }
    let bytes = run.read_input(&path)?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let mut cfg: SimConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| UsageError(format!("config error at `{}`: {}", e.path(), e.inner())))?;
    if let Some(seed) = run.seed_flag {
        cfg.rng_seed = seed;
    }
    cfg.validate().map_err(|e| match e {
        Error::InvalidParameter { name, reason } => {
            UsageError(format!("config error at `{name}`: {reason}")).into()
        }
        other => anyhow::Error::from(other),
    })?;
    run.manifest.config = serde_json::to_value(&cfg)?;
    let profiles = sim::simulate(&cfg)?;
    let mut summary = Vec::new();
    for (i, p) in profiles.iter().enumerate() {
        let name = format!("profile_{i}");
        emit_trace(run, &name, &p.to_trace())?;
        let l1 = (p.time > 0.0).then(|| {
            let shift = cfg.drift * p.time;
            p.l1_distance(|x| {
                let dp = DiffusionParams {
                    molecule_count: 1.0,
                    diffusion_coefficient: cfg.diffusion_coefficient,
                    dimension: 1,
                    distance: (x - shift).abs(),
                };
                diffusion_response(&dp, p.time).unwrap_or(f64::NAN)
            })
        });
        let row = json!({
            "time": p.time,
            "mean_position": p.mean_position,
            "position_variance": p.position_variance,
            "out_of_range": p.out_of_range,
            "receiver_concentration": p.concentration_at(cfg.measurement_distance),
            "l1_vs_analytic": l1,
        });
        println!("{}", serde_json::to_string(&row)?);
        summary.push(row);
    }
    run.write(
        "summary.json",
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    Ok(true)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let file_cfg: Option<Value> = match (&cli.common.config, &cli.command) {
        (Some(_), Command::Simulate(_)) | (None, _) => None,
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?,
            )
        }
    };
    let from_file = |key: &str| file_cfg.as_ref().and_then(|c| c.get(key)).cloned();
    let seed = match cli.common.seed {
        Some(s) => Some(s),
        None => from_file("seed")
            .map(|v| {
                v.as_u64()
                    .ok_or_else(|| UsageError("config `seed` must be an unsigned integer".into()))
            })
            .transpose()?,
    };
    let format = match cli.common.format {
        Some(f) => f,
        None => from_file("format")
            .map(|v| {
                serde_json::from_value(v).map_err(|e| UsageError(format!("config `format`: {e}")))
            })
            .transpose()?
            .unwrap_or(Format::Csv),
    };
    if let Some(dir) = &cli.common.output {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = match &cli.command {
        Command::Eval(_) => "eval",
        Command::Synth(_) => "synth",
        Command::Fit(_) => "fit",
        Command::Compare(_) => "compare",
        Command::Simulate(_) => "simulate",
    };
    let mut run = Run {
        started: Instant::now(),
        manifest: RunManifest::new(name, Value::Null),
        output: cli.common.output.clone(),
        format,
        seed: seed.unwrap_or(0),
        seed_flag: seed,
    };
    let fc = file_cfg.as_ref();
    let ok = match &cli.command {
        Command::Eval(a) => cmd_eval(&mut run, &layered(a, fc, "eval")?),
        Command::Synth(a) => cmd_synth(&mut run, &layered(a, fc, "synth")?),
        Command::Fit(a) => cmd_fit(&mut run, &layered(a, fc, "fit")?),
        Command::Compare(a) => cmd_compare(&mut run, &layered(a, fc, "compare")?),
        Command::Simulate(a) => cmd_simulate(&mut run, a, cli.common.config.as_ref()),
    }?;
    run.finish(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
