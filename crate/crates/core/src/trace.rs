//! Sensor traces and their preprocessing.
//!
//! The on-disk format is a two-column CSV:
//!
//! ```text
//! # trial_id=trial_1
//! # distance_cm=0.1
//! # units=normalized
//! 0.1,0.000154857431
//! 0.2,0.0841069128
//! ```
//!
//! Comment lines start with `#` and may carry `key=value` metadata. Rows
//! are `t_seconds,value` with a `.` decimal separator. Values are written
//! with 9 significant digits, so `parse(serialize(ts)) == ts` whenever the
//! samples are themselves 9-digit decimals (true of anything parsed from a
//! file) and re-serializing a parsed file reproduces it byte for byte.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseErrorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    #[default]
    RawAnalog,
    Normalized,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::RawAnalog => "raw-analog",
            Units::Normalized => "normalized",
        }
    }
}

impl std::str::FromStr for Units {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw-analog" => Ok(Units::RawAnalog),
            "normalized" => Ok(Units::Normalized),
            other => Err(format!("unknown units `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub trial_id: Option<String>,
    pub distance_cm: Option<f64>,
    pub units: Units,
    /// Set on the output of [`average_trials`].
    pub averaged_trials: Option<usize>,
    /// Other `key=value` pairs, in file order.
    pub extra: Vec<(String, String)>,
}

/// An ordered sensor trace: strictly increasing, finite timestamps and
/// finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    samples: Vec<Sample>,
    pub meta: TraceMeta,
}

impl TimeSeries {
    pub fn new(samples: Vec<Sample>, meta: TraceMeta) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() || !s.v.is_finite() {
                return Err(Error::Parse {
                    line: i + 1,
                    kind: ParseErrorKind::NonFinite(format!("{},{}", s.t, s.v)),
                });
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(Error::Parse {
                    line: i + 1,
                    kind: ParseErrorKind::Ordering {
                        previous: samples[i - 1].t,
                        current: s.t,
                    },
                });
            }
        }
        Ok(Self { samples, meta })
    }

    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (f64, f64)>,
        meta: TraceMeta,
    ) -> Result<Self> {
        Self::new(
            pairs.into_iter().map(|(t, v)| Sample { t, v }).collect(),
            meta,
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.v)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    /// Index and sample of the first maximum value.
    pub fn argmax(&self) -> (usize, Sample) {
        let mut best = 0;
        for (i, s) in self.samples.iter().enumerate() {
            if s.v > self.samples[best].v {
                best = i;
            }
        }
        (best, self.samples[best])
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample { t: s.t, v: f(s.v) })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    /// Every value multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        self.map_values(|v| k * v)
    }
}

/// Formats `x` with 9 significant digits in the shortest of fixed or
/// exponent notation, with trailing zeros removed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        trim_fraction(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes a trace in the CSV format. Metadata keys come first in a fixed
/// order: `trial_id`, `distance_cm`, `units`, `averaged_trials`, then any
/// extra pairs.
pub fn serialize_trace(ts: &TimeSeries) -> String {
    let mut out = String::with_capacity(ts.len() * 24 + 64);
    let m = &ts.meta;
    if let Some(id) = &m.trial_id {
        let _ = writeln!(out, "# trial_id={id}");
    }
    if let Some(d) = m.distance_cm {
        let _ = writeln!(out, "# distance_cm={}", format_sig9(d));
    }
    let _ = writeln!(out, "# units={}", m.units.as_str());
    if let Some(n) = m.averaged_trials {
        let _ = writeln!(out, "# averaged_trials={n}");
    }
    for (k, v) in &m.extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    for s in &ts.samples {
        let _ = writeln!(out, "{},{}", format_sig9(s.t), format_sig9(s.v));
    }
    out
}

fn parse_number(field: &str, line: usize) -> Result<f64> {
    let f = field.trim();
    let looks_numeric = !f.is_empty()
        && f.chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    let v: f64 = if looks_numeric { f.parse().ok() } else { None }.ok_or_else(|| Error::Parse {
        line,
        kind: ParseErrorKind::NonNumeric(field.to_string()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            kind: ParseErrorKind::NonFinite(field.to_string()),
        });
    }
    Ok(v)
}

/// Parses the trace CSV format.
pub fn parse_trace(input: &str) -> Result<TimeSeries> {
    let mut meta = TraceMeta::default();
    let mut samples: Vec<Sample> = Vec::new();
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.trim().is_empty() {
            continue;
        }
        if let Some(comment) = row.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                apply_meta(&mut meta, k.trim(), v.trim(), line)?;
            }
            continue;
        }
        let mut fields = row.split(',');
        let (Some(tf), Some(vf), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line,
                kind: ParseErrorKind::MalformedRow(row.to_string()),
            });
        };
        let t = parse_number(tf, line)?;
        let v = parse_number(vf, line)?;
        if let Some(prev) = samples.last() {
            if t <= prev.t {
                return Err(Error::Parse {
                    line,
                    kind: ParseErrorKind::Ordering {
                        previous: prev.t,
                        current: t,
                    },
                });
            }
        }
        samples.push(Sample { t, v });
    }
    TimeSeries::new(samples, meta)
}

fn apply_meta(meta: &mut TraceMeta, key: &str, value: &str, line: usize) -> Result<()> {
    let bad = |msg: String| Error::Parse {
        line,
        kind: ParseErrorKind::BadMetadata(msg),
    };
    match key {
        "trial_id" => meta.trial_id = Some(value.to_string()),
        "distance_cm" => {
            let d: f64 = value
                .parse()
                .map_err(|_| bad(format!("distance_cm `{value}` is not a number")))?;
            meta.distance_cm = Some(d);
        }
        "units" => meta.units = value.parse().map_err(bad)?,
        "averaged_trials" => {
            meta.averaged_trials = Some(
                value
                    .parse()
                    .map_err(|_| bad(format!("averaged_trials `{value}` is not a count")))?,
            )
        }
        _ => meta.extra.push((key.to_string(), value.to_string())),
    }
    Ok(())
}

/// Mean of the first `k` samples (or all of them, if fewer).
pub fn estimate_baseline(ts: &TimeSeries, k: usize) -> f64 {
    let k = k.clamp(1, ts.len());
    ts.samples[..k].iter().map(|s| s.v).sum::<f64>() / k as f64
}

pub fn subtract_baseline(ts: &TimeSeries, baseline: f64) -> TimeSeries {
    ts.map_values(|v| v - baseline)
}

/// Divides every value by the trace maximum.
pub fn normalize_peak(ts: &TimeSeries) -> Result<TimeSeries> {
    let (_, peak) = ts.argmax();
    if !(peak.v > 0.0) {
        return Err(Error::Degenerate(format!(
            "maximum value {} is not positive",
            peak.v
        )));
    }
    let mut out = ts.map_values(|v| v / peak.v);
    out.meta.units = Units::Normalized;
    Ok(out)
}

/// Keeps samples with `t_start < t <= t_end`.
pub fn window(ts: &TimeSeries, t_start: f64, t_end: f64) -> Result<TimeSeries> {
    if !(t_start < t_end) {
        return Err(crate::error::invalid(
            "window",
            format!("start {t_start} must be below end {t_end}"),
        ));
    }
    let samples: Vec<Sample> = ts
        .samples
        .iter()
        .copied()
        .filter(|s| s.t > t_start && s.t <= t_end)
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyWindow {
            start: t_start,
            end: t_end,
        });
    }
    Ok(TimeSeries {
        samples,
        meta: ts.meta.clone(),
    })
}

/// Linear interpolation onto `grid`. No extrapolation.
pub fn resample(ts: &TimeSeries, grid: &[f64]) -> Result<TimeSeries> {
    let (first, last) = ts.span();
    let s = &ts.samples;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        if !(t >= first && t <= last) {
            return Err(Error::OutOfSpan { t, first, last });
        }
        let i = s.partition_point(|x| x.t < t);
        let v = if s[i].t == t {
            s[i].v
        } else {
            let (a, b) = (s[i - 1], s[i]);
            a.v + (b.v - a.v) * ((t - a.t) / (b.t - a.t))
        };
        out.push(Sample { t, v });
    }
    TimeSeries::new(out, ts.meta.clone())
}

/// Traces that share a distance and a sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    traces: Vec<TimeSeries>,
}

impl TrialSet {
    pub fn new(traces: Vec<TimeSeries>) -> Result<Self> {
        let first = traces.first().ok_or(Error::EmptyTrace)?;
        let d = first.meta.distance_cm;
        if let Some(t) = traces.iter().find(|t| t.meta.distance_cm != d) {
            return Err(Error::GridMismatch(format!(
                "trials mix distances {:?} and {:?}",
                d, t.meta.distance_cm
            )));
        }
        Ok(Self { traces })
    }

    /// Resamples every trace onto `grid` before building the set.
    pub fn resampled(traces: &[TimeSeries], grid: &[f64]) -> Result<Self> {
        let traces = traces
            .iter()
            .map(|t| {
                resample(t, grid).map_err(|e| match e {
                    Error::OutOfSpan { first, last, .. } => Error::GridMismatch(format!(
                        "trial {} spans [{first}, {last}] but the grid spans [{}, {}]",
                        t.meta.trial_id.as_deref().unwrap_or("?"),
                        grid.first().copied().unwrap_or(f64::NAN),
                        grid.last().copied().unwrap_or(f64::NAN),
                    )),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(traces)
    }

    pub fn traces(&self) -> &[TimeSeries] {
        &self.traces
    }
}

/// Pointwise mean of the trials. The grids must match exactly.
pub fn average_trials(set: &TrialSet) -> Result<TimeSeries> {
    let first = &set.traces[0];
    for (k, tr) in set.traces.iter().enumerate().skip(1) {
        if tr.len() != first.len() || tr.times().zip(first.times()).any(|(a, b)| a != b) {
            return Err(Error::GridMismatch(format!(
                "trial {k} is not sampled on the grid of trial 0"
            )));
        }
    }
    let n = set.traces.len();
    let samples = (0..first.len())
        .map(|i| Sample {
            t: first.samples[i].t,
            v: set.traces.iter().map(|tr| tr.samples[i].v).sum::<f64>() / n as f64,
        })
        .collect();
    let meta = TraceMeta {
        trial_id: Some("average".into()),
        averaged_trials: Some(n),
        ..first.meta.clone()
    };
    TimeSeries::new(samples, meta)
}
