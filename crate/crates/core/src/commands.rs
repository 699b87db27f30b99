//! Pipelines behind the CLI subcommands, kept free of I/O so they can be
//! tested and reused directly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    diffusion_response, vertical_response, DiffusionParams, VerticalChannelParams,
};
use crate::error::{invalid, Error, Result};
use crate::fit::{average_fit, fit_vertical_model, FitConfig, FitResult};
use crate::trace::{
    estimate_baseline, normalize_peak, subtract_baseline, window, TimeSeries, TraceMeta, TrialSet,
    Units,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Diffusion(DiffusionParams),
    Vertical(VerticalChannelParams),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Diffusion(p) => p.validate(),
            ModelSpec::Vertical(p) => p.validate(),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        match self {
            ModelSpec::Diffusion(p) => diffusion_response(p, t),
            ModelSpec::Vertical(p) => vertical_response(p, t),
        }
    }

    pub fn distance(&self) -> f64 {
        match self {
            ModelSpec::Diffusion(p) => p.distance,
            ModelSpec::Vertical(p) => p.distance,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Diffusion(_) => "diffusion",
            ModelSpec::Vertical(_) => "vertical",
        }
    }
}

/// Samples a model on `grid`. With `clamp_negative`, values below zero are
/// written as zero; this only affects the emitted samples.
pub fn eval_model(model: &ModelSpec, grid: &[f64], clamp_negative: bool) -> Result<TimeSeries> {
    model.validate()?;
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    let pairs = grid
        .iter()
        .map(|&t| {
            let v = model.eval(t)?;
            Ok((t, if clamp_negative { v.max(0.0) } else { v }))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = TraceMeta {
        trial_id: Some(format!("{}-model", model.name())),
        distance_cm: Some(model.distance()),
        units: match model {
            ModelSpec::Diffusion(_) => Units::RawAnalog,
            ModelSpec::Vertical(_) => Units::Normalized,
        },
        ..Default::default()
    };
    TimeSeries::from_pairs(pairs, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Mean of the first `samples` values of the raw trace.
    Auto {
        samples: usize,
    },
    Fixed(f64),
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Baseline::None),
            "auto" => Ok(Baseline::Auto { samples: 5 }),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Baseline::Fixed)
                .ok_or_else(|| format!("expected `none`, `auto` or a number, got `{other}`")),
        }
    }
}

/// Per-trace preprocessing: baseline removal on the raw trace, then the
/// `(start, end]` window, then optional peak normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub baseline: Baseline,
    pub window: (f64, f64),
    pub normalize: bool,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self {
            baseline: Baseline::None,
            window: (0.0, crate::reference::FIT_WINDOW_S),
            normalize: false,
        }
    }
}

impl Pipeline {
    pub fn apply(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        let based = match self.baseline {
            Baseline::None => ts.clone(),
            Baseline::Auto { samples } => subtract_baseline(ts, estimate_baseline(ts, samples)),
            Baseline::Fixed(b) => subtract_baseline(ts, b),
        };
        let windowed = window(&based, self.window.0, self.window.1)?;
        if self.normalize {
            normalize_peak(&windowed)
        } else {
            Ok(windowed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFit {
    pub trial_id: String,
    pub a: f64,
    pub b: f64,
    pub e: f64,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub trial_id: String,
    pub message: String,
}

/// JSON fit report, schema version 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    pub distance: Option<f64>,
    pub trials: Vec<TrialFit>,
    pub average: Option<Coefficients>,
    pub errors: Vec<TrialError>,
}

impl FitReport {
    pub fn success(&self) -> bool {
        self.errors.is_empty() && !self.trials.is_empty() && self.trials.iter().all(|t| t.converged)
    }
}

/// One processed and fitted trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTrial {
    pub trial_id: String,
    pub processed: TimeSeries,
    pub fit: FitResult,
}

impl FittedTrial {
    /// The fitted model sampled on the processed trace's timestamps.
    pub fn fitted_curve(&self) -> TimeSeries {
        let pairs = self
            .processed
            .times()
            .map(|t| (t, crate::channel::vertical_unchecked(&self.fit.params, t)));
        let meta = TraceMeta {
            trial_id: Some(format!("{}-fit", self.trial_id)),
            ..self.processed.meta.clone()
        };
        TimeSeries::from_pairs(pairs, meta).expect("timestamps come from a valid trace")
    }
}

/// Input to [`fit_trials`]: a trial id and its parsed trace, or the error
/// that prevented parsing it.
pub type TrialInput = (String, Result<TimeSeries>);

/// Runs the pipeline and the fitter on every trial and averages the
/// converged coefficients. Without `keep_going` the first failure (parse
/// error, pipeline error or non-converged fit) aborts with that trial's id.
pub fn fit_trials(
    inputs: Vec<TrialInput>,
    distance: Option<f64>,
    pipeline: &Pipeline,
    cfg: &FitConfig,
    keep_going: bool,
) -> std::result::Result<(FitReport, Vec<FittedTrial>), TrialFailure> {
    let outcomes: Vec<(String, Result<FittedTrial>)> = inputs
        .into_par_iter()
        .map(|(id, parsed)| {
            let out = parsed.and_then(|ts| {
                let d = distance.or(ts.meta.distance_cm).ok_or_else(|| {
                    invalid(
                        "distance",
                        "no --d given and the trace has no distance_cm metadata",
                    )
                })?;
                let processed = pipeline.apply(&ts)?;
                let fit = fit_vertical_model(&processed, d, cfg)?;
                if !fit.converged && !keep_going {
                    return Err(Error::NoConvergence {
                        what: "vertical-model fit",
                        iterations: fit.iterations,
                    });
                }
                Ok(FittedTrial {
                    trial_id: id.clone(),
                    processed,
                    fit,
                })
            });
            (id, out)
        })
        .collect();

    let mut fitted = Vec::new();
    let mut errors = Vec::new();
    for (id, out) in outcomes {
        match out {
            Ok(f) => fitted.push(f),
            Err(e) if keep_going => errors.push(TrialError {
                trial_id: id,
                message: e.to_string(),
            }),
            Err(e) => {
                return Err(TrialFailure {
                    trial_id: id,
                    error: e,
                })
            }
        }
    }

    let converged: Vec<FitResult> = fitted
        .iter()
        .filter(|f| f.fit.converged)
        .map(|f| f.fit.clone())
        .collect();
    let average = if converged.is_empty() {
        None
    } else {
        match average_fit(&converged) {
            Ok(p) => Some(Coefficients {
                a: p.amplitude,
                b: p.spread,
                e: p.gravity_slope,
            }),
            Err(e) if keep_going => {
                errors.push(TrialError {
                    trial_id: "average".into(),
                    message: e.to_string(),
                });
                None
            }
            Err(e) => {
                return Err(TrialFailure {
                    trial_id: "average".into(),
                    error: e,
                })
            }
        }
    };
    let report = FitReport {
        schema: "1".into(),
        distance: converged.first().map(|r| r.params.distance),
        trials: fitted
            .iter()
            .map(|f| TrialFit {
                trial_id: f.trial_id.clone(),
                a: f.fit.params.amplitude,
                b: f.fit.params.spread,
                e: f.fit.params.gravity_slope,
                rss: f.fit.residual_sum_of_squares,
                iterations: f.fit.iterations,
                converged: f.fit.converged,
            })
            .collect(),
        average,
        errors,
    };
    Ok((report, fitted))
}

#[derive(Debug, thiserror::Error)]
#[error("trial {trial_id}")]
pub struct TrialFailure {
    pub trial_id: String,
    #[source]
    pub error: Error,
}

/// Aligned, peak-normalized experiment average and model columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub t: Vec<f64>,
    pub experiment: Vec<f64>,
    pub model: Vec<f64>,
    pub experiment_peak_s: f64,
    pub model_peak_s: f64,
    /// `experiment_peak_s - model_peak_s`; positive when the model peaks
    /// first.
    pub peak_lag_s: f64,
}

/// Windows every trial, resamples them onto the first trial's timestamps,
/// averages, and normalizes both the average and the model on that grid.
/// The pipeline's `normalize` flag is ignored; both columns are always
/// normalized.
pub fn compare(
    traces: &[TimeSeries],
    pipeline: &Pipeline,
    model: &ModelSpec,
) -> Result<Comparison> {
    model.validate()?;
    let first = traces.first().ok_or(Error::EmptyTrace)?;
    let pre = Pipeline {
        normalize: false,
        ..*pipeline
    };
    let processed = traces
        .iter()
        .map(|t| pre.apply(t))
        .collect::<Result<Vec<_>>>()?;
    let grid: Vec<f64> = processed[0].times().collect();
    let (g0, g1) = processed[0].span();
    for (k, p) in processed.iter().enumerate().skip(1) {
        let (s0, s1) = p.span();
        if s0 > g0 || s1 < g1 {
            return Err(Error::GridMismatch(format!(
                "trial {} spans [{s0}, {s1}] but trial {} spans [{g0}, {g1}]",
                traces[k]
                    .meta
                    .trial_id
                    .as_deref()
                    .unwrap_or(&format!("#{k}")),
                first.meta.trial_id.as_deref().unwrap_or("#0"),
            )));
        }
    }
    let set = TrialSet::resampled(&processed, &grid)?;
    let experiment = normalize_peak(&crate::trace::average_trials(&set)?)?;
    let model_trace = normalize_peak(&eval_model(model, &grid, false)?)?;
    let experiment_peak_s = experiment.argmax().1.t;
    let model_peak_s = model_trace.argmax().1.t;
    Ok(Comparison {
        t: grid,
        experiment: experiment.values().collect(),
        model: model_trace.values().collect(),
        experiment_peak_s,
        model_peak_s,
        peak_lag_s: experiment_peak_s - model_peak_s,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        use crate::trace::format_sig9 as f;
        let mut out = String::from("t,experiment,model\n");
        for i in 0..self.t.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                f(self.t[i]),
                f(self.experiment[i]),
                f(self.model[i])
            ));
        }
        out
    }
}
