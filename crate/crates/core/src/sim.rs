//! Monte Carlo random walk of 1-D diffusion with optional constant drift.
//!
//! Walkers start at the origin and take Euler-Maruyama steps
//! `x += drift dt + sqrt(2 D dt) xi`, `xi ~ N(0, 1)`. For constant
//! coefficients the increments are exact, so the step size only sets the
//! snapshot granularity.
//!
//! Randomness: walker `i` draws from ChaCha8 keyed by
//! `ChaCha8Rng::seed_from_u64(rng_seed)` on stream `i`, with standard normal
//! deviates from the ziggurat sampler in `rand_distr`. Walkers are processed
//! in fixed chunks and the per-chunk tallies are summed in chunk order, so
//! results are bit-identical for any number of worker threads.
//!
//! The drift here is a physical transport term. It is a different
//! abstraction from the lumped `-e t` loss of the vertical channel model
//! and no equivalence between the two is implied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{vertical_response, VerticalChannelParams};
use crate::error::{invalid, Result};
use crate::trace::{Sample, TimeSeries, TraceMeta, Units};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub particle_count: u64,
    /// Step size, s.
    pub time_step: f64,
    /// Total simulated time, s.
    pub duration: f64,
    /// cm^2/s
    pub diffusion_coefficient: f64,
    /// cm/s; negative values drift toward `-x`.
    #[serde(default)]
    pub drift: f64,
    pub rng_seed: u64,
    /// Receiver position, cm. Used to report the concentration seen at the
    /// receiver for each snapshot.
    #[serde(default)]
    pub measurement_distance: f64,
    /// Histogram bin width, cm.
    pub bin_width: f64,
    /// Snapshot times, s. Empty means a single snapshot at `duration`.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Half-width of the histogram range, cm. Defaults to six standard
    /// deviations of the final spread plus the drift displacement.
    #[serde(default)]
    pub histogram_half_width: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            particle_count: 100_000,
            time_step: 0.01,
            duration: 1.0,
            diffusion_coefficient: crate::reference::DIFFUSION_COEFFICIENT,
            drift: 0.0,
            rng_seed: 0,
            measurement_distance: 0.0,
            bin_width: 0.05,
            snapshot_times: Vec::new(),
            histogram_half_width: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particle_count == 0 {
            return Err(invalid("particle_count", "must be at least 1"));
        }
        let positive = [
            ("time_step", self.time_step),
            ("duration", self.duration),
            ("diffusion_coefficient", self.diffusion_coefficient),
            ("bin_width", self.bin_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.duration < self.time_step {
            return Err(invalid("duration", "must be at least one time_step"));
        }
        if !self.drift.is_finite() {
            return Err(invalid("drift", "must be finite"));
        }
        if !self.measurement_distance.is_finite() {
            return Err(invalid("measurement_distance", "must be finite"));
        }
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.duration) {
                return Err(invalid(
                    "snapshot_times",
                    format!("{t} is outside [0, duration]"),
                ));
            }
        }
        if let Some(w) = self.histogram_half_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("histogram_half_width", "must be finite and > 0"));
            }
        }
        if self.steps() > u32::MAX as u64 {
            return Err(invalid("time_step", "too many steps"));
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.time_step).round().max(1.0) as u64
    }

    /// Step indices of the requested snapshots, sorted and de-duplicated.
    fn snapshot_steps(&self) -> Vec<u64> {
        let n = self.steps();
        let mut steps: Vec<u64> = if self.snapshot_times.is_empty() {
            vec![n]
        } else {
            self.snapshot_times
                .iter()
                .map(|t| ((t / self.time_step).round() as u64).min(n))
                .collect()
        };
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    fn half_bins(&self) -> i64 {
        let width = self.histogram_half_width.unwrap_or_else(|| {
            6.0 * (2.0 * self.diffusion_coefficient * self.duration).sqrt()
                + self.drift.abs() * self.duration
        });
        (width / self.bin_width).ceil().max(0.0) as i64
    }
}

/// Histogram of walker positions at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub time: f64,
    pub bin_width: f64,
    /// Bin centers, cm. Bin `k` covers `[(k - 1/2) w, (k + 1/2) w)`.
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// Walkers outside the histogram range.
    pub out_of_range: u64,
    pub particle_count: u64,
    pub mean_position: f64,
    pub position_variance: f64,
}

impl ConcentrationProfile {
    /// `count / (particle_count * bin_width)` per bin.
    pub fn concentrations(&self) -> Vec<f64> {
        let norm = self.particle_count as f64 * self.bin_width;
        self.counts.iter().map(|&c| c as f64 / norm).collect()
    }

    /// Estimated concentration in the bin that contains `x`, or zero outside
    /// the range.
    pub fn concentration_at(&self, x: f64) -> f64 {
        let k = (x / self.bin_width).round();
        let half = (self.centers.len() / 2) as f64;
        if k.abs() > half {
            return 0.0;
        }
        self.counts[(k + half) as usize] as f64 / (self.particle_count as f64 * self.bin_width)
    }

    /// `sum_bins |c_k - f(x_k)| w` against a density `f`.
    pub fn l1_distance(&self, density: impl Fn(f64) -> f64) -> f64 {
        self.centers
            .iter()
            .zip(self.concentrations())
            .map(|(&x, c)| (c - density(x)).abs() * self.bin_width)
            .sum()
    }

    /// The profile as a trace keyed by position (the `t` column holds the
    /// bin center).
    pub fn to_trace(&self) -> TimeSeries {
        let samples = self
            .centers
            .iter()
            .zip(self.concentrations())
            .map(|(&t, v)| Sample { t, v })
            .collect();
        let meta = TraceMeta {
            trial_id: Some(format!(
                "snapshot_t={}",
                crate::trace::format_sig9(self.time)
            )),
            units: Units::RawAnalog,
            extra: vec![
                ("snapshot_time".into(), crate::trace::format_sig9(self.time)),
                ("particle_count".into(), self.particle_count.to_string()),
                ("out_of_range".into(), self.out_of_range.to_string()),
            ],
            ..Default::default()
        };
        TimeSeries::new(samples, meta).expect("bin centers increase")
    }
}

#[derive(Clone)]
struct Tally {
    counts: Vec<Vec<u64>>,
    out_of_range: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Tally {
    fn new(snapshots: usize, bins: usize) -> Self {
        Self {
            counts: vec![vec![0; bins]; snapshots],
            out_of_range: vec![0; snapshots],
            sum: vec![0.0; snapshots],
            sum_sq: vec![0.0; snapshots],
        }
    }
}

/// Runs the random walk and returns one profile per snapshot time.
pub fn simulate(cfg: &SimConfig) -> Result<Vec<ConcentrationProfile>> {
    cfg.validate()?;
    let snapshots = cfg.snapshot_steps();
    let half = cfg.half_bins();
    let bins = (2 * half + 1) as usize;
    let sigma = (2.0 * cfg.diffusion_coefficient * cfg.time_step).sqrt();
    let mean_step = cfg.drift * cfg.time_step;
    let master = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = cfg.particle_count;
    let chunk_count = n.div_ceil(CHUNK as u64);

    let walk_chunk = |c: u64| {
        let mut tally = Tally::new(snapshots.len(), bins);
        let start = c * CHUNK as u64;
        let end = (start + CHUNK as u64).min(n);
        for particle in start..end {
            let mut rng = master.clone();
            rng.set_stream(particle);
            let mut x = 0.0f64;
            let mut step = 0u64;
            for (s, &target) in snapshots.iter().enumerate() {
                while step < target {
                    let xi: f64 = rng.sample(StandardNormal);
                    x += mean_step + sigma * xi;
                    step += 1;
                }
                let k = (x / cfg.bin_width).round();
                if k.abs() <= half as f64 {
                    tally.counts[s][(k as i64 + half) as usize] += 1;
                } else {
                    tally.out_of_range[s] += 1;
                }
                tally.sum[s] += x;
                tally.sum_sq[s] += x * x;
            }
        }
        tally
    };
    let partials: Vec<Tally> = (0..chunk_count).into_par_iter().map(walk_chunk).collect();

    let mut total = Tally::new(snapshots.len(), bins);
    for p in &partials {
        for s in 0..snapshots.len() {
            for (dst, src) in total.counts[s].iter_mut().zip(&p.counts[s]) {
                *dst += src;
            }
            total.out_of_range[s] += p.out_of_range[s];
            total.sum[s] += p.sum[s];
            total.sum_sq[s] += p.sum_sq[s];
        }
    }

    let centers: Vec<f64> = (-half..=half).map(|k| k as f64 * cfg.bin_width).collect();
    let nf = n as f64;
    Ok(snapshots
        .iter()
        .enumerate()
        .map(|(s, &step)| {
            let mean = total.sum[s] / nf;
            let variance = if n > 1 {
                (total.sum_sq[s] - nf * mean * mean) / (nf - 1.0)
            } else {
                0.0
            };
            ConcentrationProfile {
                time: step as f64 * cfg.time_step,
                bin_width: cfg.bin_width,
                centers: centers.clone(),
                counts: total.counts[s].clone(),
                out_of_range: total.out_of_range[s],
                particle_count: n,
                mean_position: mean,
                position_variance: variance.max(0.0),
            }
        })
        .collect())
}

/// Samples the vertical model on `grid` and adds seeded Gaussian noise.
pub fn synthetic_trace(
    params: &VerticalChannelParams,
    grid: &[f64],
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<TimeSeries> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid(
            "noise_sigma",
            format!("must be finite and >= 0, got {noise_sigma}"),
        ));
    }
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::with_capacity(grid.len());
    for &t in grid {
        let clean = vertical_response(params, t)?;
        let v = if noise_sigma > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            clean + noise_sigma * xi
        } else {
            clean
        };
        samples.push(Sample { t, v });
    }
    let meta = TraceMeta {
        distance_cm: Some(params.distance),
        units: Units::Normalized,
        ..Default::default()
    };
    TimeSeries::new(samples, meta).map_err(|_| invalid("grid", "times must be strictly increasing"))
}

/// `k / rate` for `k = 1..=round((t_end - t_start) rate)`, offset by
/// `t_start`; the half-open window `(t_start, t_end]` at `rate` Hz.
pub fn uniform_grid(t_start: f64, t_end: f64, rate_hz: f64) -> Result<Vec<f64>> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(invalid("rate", "must be finite and > 0"));
    }
    if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
        return Err(invalid(
            "t_end",
            format!("window ({t_start}, {t_end}] is empty"),
        ));
    }
    let n = ((t_end - t_start) * rate_hz).round() as u64;
    if n == 0 {
        return Err(invalid("rate", "grid has no points"));
    }
    Ok((1..=n).map(|k| t_start + k as f64 / rate_hz).collect())
}
