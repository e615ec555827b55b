//! Curvature from tracked marker points.
//!
//! Each video frame gives four marker positions along the actuator. A circle
//! is fitted to them, the per-frame curvature is smoothed, and the response
//! time is read off with a relative rolling-window settling rule.

use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MARKERS_PER_FRAME: usize = 4;
pub const DEFAULT_SAMPLE_RATE: f64 = 240.0;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 20;

/// Marker positions of one frame, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    /// s
    pub t: f64,
    pub points: [(f64, f64); MARKERS_PER_FRAME],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcFit {
    /// mm; `None` when the points are collinear.
    pub center: Option<(f64, f64)>,
    /// mm; infinite when degenerate.
    pub radius: f64,
    /// Signed, 1/mm. Positive when the points run counterclockwise about the center.
    pub curvature: f64,
    /// RMS geometric distance of the points from the fitted arc, mm.
    pub rms_residual: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Smallest accepted ratio of singular values of the algebraic system.
    pub cond_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            cond_tol: 1e-9,
            max_iter: 100,
        }
    }
}

/// Least-squares circle through `points` with default options.
pub fn fit_arc(points: &[(f64, f64)]) -> Result<ArcFit> {
    fit_arc_with(points, &FitOptions::default())
}

/// Geometric least-squares circle: algebraic (Kåsa) seed on centred and
/// scaled coordinates, refined by Levenberg–Marquardt on Σ(‖pᵢ − c‖ − r)².
pub fn fit_arc_with(points: &[(f64, f64)], options: &FitOptions) -> Result<ArcFit> {
    if points.len() < 3 {
        return Err(Error::Input(format!(
            "arc fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::Input("arc fit points must be finite".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let scale = (points
        .iter()
        .map(|(x, y)| (x - mx).powi(2) + (y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if scale == 0.0 {
        return Err(Error::Input("all arc fit points coincide".into()));
    }
    let local: Vec<(f64, f64)> = points
        .iter()
        .map(|(x, y)| ((x - mx) / scale, (y - my) / scale))
        .collect();

    let a = DMatrix::from_fn(local.len(), 3, |i, j| match j {
        0 => local[i].0,
        1 => local[i].1,
        _ => 1.0,
    });
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if s_min <= options.cond_tol * s_max {
        // Distance to the total-least-squares line through the centroid.
        let pts = DMatrix::from_fn(local.len(), 2, |i, j| if j == 0 { local[i].0 } else { local[i].1 });
        let line_rms = pts.svd(false, false).singular_values.min() / n.sqrt();
        return Ok(ArcFit {
            center: None,
            radius: f64::INFINITY,
            curvature: 0.0,
            rms_residual: line_rms * scale,
            degenerate: true,
        });
    }
    let rhs = DMatrix::from_fn(local.len(), 1, |i, _| -(local[i].0.powi(2) + local[i].1.powi(2)));
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Singular(format!("algebraic circle fit: {e}")))?;
    let (ca, cb, cc) = (sol[0], sol[1], sol[2]);
    let mut c = Vector3::new(-0.5 * ca, -0.5 * cb, 0.0);
    c[2] = (c[0] * c[0] + c[1] * c[1] - cc).max(0.0).sqrt();

    let cost = |c: &Vector3<f64>| -> f64 {
        local
            .iter()
            .map(|(x, y)| ((x - c[0]).hypot(y - c[1]) - c[2]).powi(2))
            .sum()
    };
    let mut current = cost(&c);
    let mut lambda = 1e-3;
    for _ in 0..options.max_iter {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (x, y) in &local {
            let d = (x - c[0]).hypot(y - c[1]);
            if d == 0.0 {
                continue;
            }
            let j = Vector3::new(-(x - c[0]) / d, -(y - c[1]) / d, -1.0);
            let r = d - c[2];
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = c + step;
            let trial_cost = cost(&trial);
            if trial_cost <= current {
                let small = step.norm() <= 1e-15 * (1.0 + c.norm());
                c = trial;
                current = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let radius = c[2].abs() * scale;
    let center = (mx + c[0] * scale, my + c[1] * scale);
    // Net angle swept about the center; stays correct for arcs beyond half a turn.
    let swept: f64 = points
        .windows(2)
        .map(|w| {
            let (ax, ay) = (w[0].0 - center.0, w[0].1 - center.1);
            let (bx, by) = (w[1].0 - center.0, w[1].1 - center.1);
            (ax * by - ay * bx).atan2(ax * bx + ay * by)
        })
        .sum();
    let sign = if swept >= 0.0 { 1.0 } else { -1.0 };
    Ok(ArcFit {
        center: Some(center),
        radius,
        curvature: sign / radius,
        rms_residual: (current / n).sqrt() * scale,
        degenerate: false,
    })
}

/// `n_points` equally spaced points along an arc starting at the origin,
/// tangent to +x, in mm.
pub fn synthesize_markers(curvature: f64, arc_length: f64, n_points: usize) -> Result<Vec<(f64, f64)>> {
    if !(arc_length > 0.0 && arc_length.is_finite() && curvature.is_finite()) {
        return Err(Error::Input(format!(
            "arc length must be positive and finite, got {arc_length}"
        )));
    }
    if n_points < 2 {
        return Err(Error::Input("need at least two marker points".into()));
    }
    Ok((0..n_points)
        .map(|i| {
            let s = arc_length * i as f64 / (n_points - 1) as f64;
            let (x, y) = if curvature == 0.0 {
                (s, 0.0)
            } else {
                let phi = curvature * s;
                (phi.sin() / curvature, 2.0 * (0.5 * phi).sin().powi(2) / curvature)
            };
            (x * 1e3, y * 1e3)
        })
        .collect())
}

/// Uniformly sampled curvature, 1/mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSeries {
    /// Hz
    pub sample_rate: f64,
    /// (t in s, curvature)
    pub samples: Vec<(f64, f64)>,
}

impl CurvatureSeries {
    /// Samples at t = t0 + k / sample_rate.
    pub fn from_values(sample_rate: f64, t0: f64, values: &[f64]) -> Self {
        CurvatureSeries {
            sample_rate,
            samples: values
                .iter()
                .enumerate()
                .map(|(k, &v)| (t0 + k as f64 / sample_rate, v))
                .collect(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }
}

/// Centred moving average, length preserving.
///
/// An odd window is a plain uniform kernel. An even window `w` uses `w + 1`
/// taps with half weight on the two end taps, so it still averages over `w`
/// frames. Near the ends the kernel is cut off and renormalised.
pub fn smooth(series: &CurvatureSeries, window: usize) -> Result<CurvatureSeries> {
    if series.samples.is_empty() {
        return Err(Error::Input("cannot smooth an empty series".into()));
    }
    if window == 0 {
        return Err(Error::Input("smoothing window must be at least 1".into()));
    }
    let half = window / 2;
    let weights: Vec<f64> = (0..=2 * half)
        .map(|k| {
            if window % 2 == 0 && (k == 0 || k == 2 * half) {
                0.5
            } else {
                1.0
            }
        })
        .collect();
    let values = series.values();
    let n = values.len();
    let samples = (0..n)
        .map(|i| {
            let mut sum = 0.0;
            let mut wsum = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let Some(j) = (i + k).checked_sub(half) else { continue };
                if j < n {
                    sum += w * values[j];
                    wsum += w;
                }
            }
            (series.samples[i].0, sum / wsum)
        })
        .collect();
    Ok(CurvatureSeries {
        sample_rate: series.sample_rate,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseOptions {
    /// Relative change over the window below which the response counts as settled.
    pub rate_threshold: f64,
    /// s
    pub window: f64,
    /// Onset when |κ| first exceeds this fraction of the series maximum.
    pub start_fraction: f64,
    /// Floor of the relative-change denominator, 1/mm.
    pub kappa_floor: f64,
}

impl Default for ResponseOptions {
    fn default() -> Self {
        ResponseOptions {
            rate_threshold: 0.05,
            window: 0.4,
            start_fraction: 0.02,
            kappa_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    /// s
    pub start_time: f64,
    /// s
    pub response_time: f64,
    /// 1/mm (same unit as the series)
    pub final_curvature: f64,
}

pub fn extract_response(series: &CurvatureSeries, options: &ResponseOptions) -> Result<Response> {
    let rate = series.sample_rate;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Input(format!("sample rate must be positive, got {rate}")));
    }
    let w = (options.window * rate).round() as usize;
    if w == 0 {
        return Err(Error::Input("settling window is shorter than one frame".into()));
    }
    let s = &series.samples;
    if s.len() <= w {
        return Err(Error::Input(format!(
            "series of {} samples is not longer than the {w}-sample window",
            s.len()
        )));
    }
    let peak = s.iter().fold(0.0f64, |m, v| m.max(v.1.abs()));
    if peak == 0.0 {
        return Err(Error::NoDeformation);
    }
    let start = s
        .iter()
        .position(|v| v.1.abs() > options.start_fraction * peak)
        .ok_or(Error::NoDeformation)?;
    let end = (start + w..s.len())
        .find(|&i| {
            let change = (s[i].1 - s[i - w].1).abs();
            change / s[i].1.abs().max(options.kappa_floor) < options.rate_threshold
        })
        .ok_or(Error::Unsettled)?;
    Ok(Response {
        start_time: s[start].0,
        response_time: s[end].0 - s[start].0,
        final_curvature: s[end].1,
    })
}

/// Per-frame fits, smoothed series and response of one marker track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackAnalysis {
    pub fits: Vec<ArcFit>,
    pub raw: CurvatureSeries,
    pub smoothed: CurvatureSeries,
    pub response: Result<Response, String>,
}

/// Sample rate of uniformly spaced frames.
pub fn frame_rate(frames: &[MarkerFrame]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Input("need at least two frames".into()));
    }
    let n = frames.len();
    let dt = (frames[n - 1].t - frames[0].t) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Input("frame times must increase".into()));
    }
    for (k, pair) in frames.windows(2).enumerate() {
        let step = pair[1].t - pair[0].t;
        if (step - dt).abs() > 1e-3 * dt {
            return Err(Error::Input(format!(
                "frames {k} and {} are not uniformly spaced ({step} s vs {dt} s)",
                k + 1
            )));
        }
    }
    Ok(1.0 / dt)
}

pub fn analyze_track(
    frames: &[MarkerFrame],
    smoothing_window: usize,
    fit: &FitOptions,
    response: &ResponseOptions,
) -> Result<TrackAnalysis> {
    let rate = frame_rate(frames)?;
    let fits = frames
        .par_iter()
        .map(|f| fit_arc_with(&f.points, fit))
        .collect::<Result<Vec<_>>>()?;
    let raw = CurvatureSeries {
        sample_rate: rate,
        samples: frames.iter().zip(&fits).map(|(f, a)| (f.t, a.curvature)).collect(),
    };
    let smoothed = smooth(&raw, smoothing_window)?;
    let response = extract_response(&smoothed, response).map_err(|e| e.to_string());
    Ok(TrackAnalysis {
        fits,
        raw,
        smoothed,
        response,
    })
}

const MARKER_HEADER: [&str; 9] = ["t", "x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4"];

/// Reads a marker track with header `t,x1,y1,x2,y2,x3,y3,x4,y4`.
pub fn read_marker_csv(reader: impl Read) -> Result<Vec<MarkerFrame>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut frames = Vec::new();
    let mut header_seen = false;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if !header_seen {
            let fields: Vec<&str> = record.iter().collect();
            if fields != MARKER_HEADER {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header `{}`", MARKER_HEADER.join(",")),
                });
            }
            header_seen = true;
            continue;
        }
        if record.len() != MARKER_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", MARKER_HEADER.len(), record.len()),
            });
        }
        let mut v = [0.0; 9];
        for (k, field) in record.iter().enumerate() {
            v[k] = field.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("field `{}` is not a finite number: `{field}`", MARKER_HEADER[k]),
            })?;
        }
        frames.push(MarkerFrame {
            t: v[0],
            points: [(v[1], v[2]), (v[3], v[4]), (v[5], v[6]), (v[7], v[8])],
        });
    }
    if !header_seen {
        return Err(Error::Parse {
            line: 1,
            message: "empty marker file".into(),
        });
    }
    Ok(frames)
}

pub fn write_marker_csv(frames: &[MarkerFrame], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(MARKER_HEADER).map_err(io)?;
    for f in frames {
        let mut row = vec![f.t.to_string()];
        for (x, y) in f.points {
            row.push(x.to_string());
            row.push(y.to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
