use serde::{Deserialize, Serialize};

use super::{OracleConfig, OracleError, TraceSample};

/// Uniformly spaced series: `values[i]` is the value at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Series {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Forward difference quotient, timestamped at the midpoint of each pair.
    pub fn derivative(&self) -> Series {
        Series {
            t0: self.t0 + self.dt / 2.0,
            dt: self.dt,
            values: self.values.windows(2).map(|w| (w[1] - w[0]) / self.dt).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicSeries {
    /// Speed resampled on the jerk interval.
    pub v: Series,
    pub a: Series,
    pub jerk: Series,
    /// rad/s.
    pub yaw_rate: Series,
    pub jerk_avg: Series,
    /// rad/s.
    pub yaw_avg: Series,
}

pub(crate) fn check_trace(trace: &[TraceSample]) -> Result<(), OracleError> {
    if trace.len() < 3 {
        return Err(OracleError::TooFewSamples(trace.len()));
    }
    for (i, s) in trace.iter().enumerate() {
        if ![s.t, s.x, s.y, s.v, s.heading].iter().all(|v| v.is_finite()) {
            return Err(OracleError::NonFinite(i));
        }
        if i > 0 && s.t <= trace[i - 1].t {
            return Err(OracleError::NonMonotonicTime(i));
        }
    }
    Ok(())
}

/// Heading with 2π jumps removed.
pub fn unwrap_angles(h: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len());
    let mut shift = 0.0;
    for (i, &a) in h.iter().enumerate() {
        if i > 0 {
            let d = a - h[i - 1];
            if d > std::f64::consts::PI {
                shift -= 2.0 * std::f64::consts::PI;
            } else if d < -std::f64::consts::PI {
                shift += 2.0 * std::f64::consts::PI;
            }
        }
        out.push(a + shift);
    }
    out
}

/// Linear interpolation of `(t, y)` onto a uniform grid of step `dt`.
pub fn resample(t: &[f64], y: &[f64], dt: f64) -> Series {
    let t0 = t[0];
    let n = ((t[t.len() - 1] - t0) / dt + 1e-9).floor() as usize + 1;
    let mut values = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let ti = t0 + i as f64 * dt;
        while k + 2 < t.len() && t[k + 1] < ti {
            k += 1;
        }
        let (ta, tb) = (t[k], t[k + 1]);
        let f = ((ti - ta) / (tb - ta)).clamp(0.0, 1.0);
        values.push(y[k] + f * (y[k + 1] - y[k]));
    }
    Series { t0, dt, values }
}

/// Mean of the last `N = round(window / dt)` samples at each point; the first
/// `N - 1` points average over the samples available so far.
pub fn moving_average(series: &Series, window: f64) -> Series {
    let n = ((window / series.dt).round() as usize).max(1);
    let values = (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(n);
            series.values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect();
    Series {
        t0: series.t0,
        dt: series.dt,
        values,
    }
}

pub fn compute_kinematics(trace: &[TraceSample], jerk_interval: f64) -> Result<KinematicSeries, OracleError> {
    compute_kinematics_with(trace, jerk_interval, &OracleConfig::default())
}

/// Acceleration, jerk and yaw rate by finite differences on a grid of step
/// `jerk_interval`, plus their moving averages over `cfg.window`.
pub fn compute_kinematics_with(trace: &[TraceSample], jerk_interval: f64, cfg: &OracleConfig) -> Result<KinematicSeries, OracleError> {
    let [lo, hi] = cfg.jerk_interval_band;
    if !(jerk_interval >= lo - 1e-12 && jerk_interval <= hi + 1e-12) {
        return Err(OracleError::InvalidInterval(jerk_interval));
    }
    check_trace(trace)?;
    let t: Vec<f64> = trace.iter().map(|s| s.t).collect();
    let v = resample(&t, &trace.iter().map(|s| s.v).collect::<Vec<_>>(), jerk_interval);
    if v.len() < 3 {
        return Err(OracleError::TooFewSamples(v.len()));
    }
    let heading = resample(&t, &unwrap_angles(&trace.iter().map(|s| s.heading).collect::<Vec<_>>()), jerk_interval);
    let a = v.derivative();
    let jerk = a.derivative();
    let yaw_rate = heading.derivative();
    let jerk_avg = moving_average(&jerk, cfg.window);
    let yaw_avg = moving_average(&yaw_rate, cfg.window);
    Ok(KinematicSeries {
        v,
        a,
        jerk,
        yaw_rate,
        jerk_avg,
        yaw_avg,
    })
}

/// Maximal runs of indices where `pred` holds, as `(first, last)` pairs.
pub fn spans(values: &[f64], pred: impl Fn(f64) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (pred(v), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, values.len() - 1));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub start: f64,
    pub end: f64,
    /// Signed jerk of largest magnitude in the span (m/s³).
    pub peak_jerk: f64,
}

fn peak(values: &[f64]) -> f64 {
    values.iter().cloned().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m })
}

/// One event per maximal span where |jerk| exceeds `threshold`.
pub fn detect_collision(series: &KinematicSeries, threshold: f64) -> Vec<CollisionEvent> {
    let j = &series.jerk;
    spans(&j.values, |v| v.abs() > threshold)
        .into_iter()
        .map(|(s, e)| CollisionEvent {
            start: j.time(s),
            end: j.time(e),
            peak_jerk: peak(&j.values[s..=e]),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessMetric {
    Jerk,
    YawRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpan {
    pub metric: SmoothnessMetric,
    pub start: f64,
    pub end: f64,
    /// Averaged value of largest magnitude (m/s³, or deg/s for yaw rate).
    pub peak: f64,
    /// The acceptable interval that was left.
    pub interval: [f64; 2],
}

/// Spans where the averaged jerk magnitude exceeds `cfg.smooth_jerk` or the
/// averaged yaw rate magnitude exceeds `cfg.smooth_yaw_deg`.
pub fn assess_smoothness(series: &KinematicSeries, cfg: &OracleConfig) -> Vec<SmoothnessSpan> {
    let mut out: Vec<SmoothnessSpan> = spans(&series.jerk_avg.values, |v| v.abs() > cfg.smooth_jerk)
        .into_iter()
        .map(|(s, e)| SmoothnessSpan {
            metric: SmoothnessMetric::Jerk,
            start: series.jerk_avg.time(s),
            end: series.jerk_avg.time(e),
            peak: peak(&series.jerk_avg.values[s..=e]),
            interval: [0.0, cfg.smooth_jerk],
        })
        .collect();
    let yaw_deg: Vec<f64> = series.yaw_avg.values.iter().map(|v| v.to_degrees()).collect();
    out.extend(spans(&yaw_deg, |v| v.abs() > cfg.smooth_yaw_deg).into_iter().map(|(s, e)| SmoothnessSpan {
        metric: SmoothnessMetric::YawRate,
        start: series.yaw_avg.time(s),
        end: series.yaw_avg.time(e),
        peak: peak(&yaw_deg[s..=e]),
        interval: [-cfg.smooth_yaw_deg, cfg.smooth_yaw_deg],
    }));
    out
}
