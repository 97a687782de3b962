//! Data ingestion and preparation: read event timestamps or durations from
//! CSV, remove the deterministic time-of-day pattern, and produce descriptive
//! statistics.
//!
//! Input format: UTF-8, comma-separated, header row required, with either a
//! `timestamp` column (seconds since midnight, nondecreasing) or a `duration`
//! column (positive reals). An optional `price` column is carried through.

use std::path::Path;

use crate::acd::DurationSeries;
use crate::error::{Error, Result};
use crate::spline::CubicSpline;
use crate::stats;

/// One tick: a timestamp in seconds since midnight, optionally with a price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub timestamp: f64,
    pub price: Option<f64>,
}

/// Result of loading a file: durations, the start time of each duration when
/// timestamps were available, and the number of dropped nonpositive gaps.
#[derive(Debug, Clone)]
pub struct LoadedSeries {
    pub durations: DurationSeries,
    /// Start time (previous event time) of each kept duration.
    pub start_times: Option<Vec<f64>>,
    pub dropped_nonpositive: usize,
}

/// Load a CSV of events. A `timestamp` column is converted to durations by
/// first differencing, dropping zero gaps with a count; a `duration` column
/// is taken as is. Malformed rows name their 1-based line number.
pub fn load_events(path: impl AsRef<Path>) -> Result<LoadedSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cannot open {}", path.as_ref().display()),
            )),
            _ => Error::Parse {
                line: 1,
                message: e.to_string(),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let ts_col = col("timestamp");
    let dur_col = col("duration");
    let price_col = col("price");
    if ts_col.is_none() && dur_col.is_none() {
        return Err(Error::Parse {
            line: 1,
            message: "need a `timestamp` or `duration` column".into(),
        });
    }

    let parse_field = |record: &csv::StringRecord, idx: usize, line: usize| -> Result<f64> {
        let raw = record.get(idx).ok_or(Error::Parse {
            line,
            message: format!("missing column {idx}"),
        })?;
        raw.parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse `{raw}` as a number"),
        })
    };

    let mut ticks: Vec<TickRecord> = Vec::new();
    let mut durations: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, counting the header
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if let Some(c) = ts_col {
            let t = parse_field(&record, c, line)?;
            if let Some(prev) = ticks.last() {
                if t < prev.timestamp {
                    return Err(Error::Parse {
                        line,
                        message: format!(
                            "timestamps must be nondecreasing ({t} after {})",
                            prev.timestamp
                        ),
                    });
                }
            }
            let price = match price_col {
                Some(pc) => Some(parse_field(&record, pc, line)?),
                None => None,
            };
            ticks.push(TickRecord {
                timestamp: t,
                price,
            });
        } else if let Some(c) = dur_col {
            let d = parse_field(&record, c, line)?;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("durations must be positive, got {d}"),
                });
            }
            durations.push(d);
        }
    }

    if ts_col.is_some() {
        if ticks.len() < 2 {
            return Err(Error::InsufficientData(
                "need at least two timestamps to form durations".into(),
            ));
        }
        let mut kept = Vec::with_capacity(ticks.len() - 1);
        let mut starts = Vec::with_capacity(ticks.len() - 1);
        let mut dropped = 0;
        for w in ticks.windows(2) {
            let gap = w[1].timestamp - w[0].timestamp;
            if gap > 0.0 {
                kept.push(gap);
                starts.push(w[0].timestamp);
            } else {
                dropped += 1;
            }
        }
        Ok(LoadedSeries {
            durations: DurationSeries::new(kept)?,
            start_times: Some(starts),
            dropped_nonpositive: dropped,
        })
    } else {
        if durations.is_empty() {
            return Err(Error::InsufficientData("empty duration file".into()));
        }
        Ok(LoadedSeries {
            durations: DurationSeries::new(durations)?,
            start_times: None,
            dropped_nonpositive: 0,
        })
    }
}

/// Durations with the time-of-day pattern divided out.
#[derive(Debug, Clone)]
pub struct AdjustedDurations {
    pub raw: DurationSeries,
    pub adjusted: DurationSeries,
    pub start_times: Vec<f64>,
    /// Diurnal factor evaluated at each duration's start time.
    pub factor_at: Vec<f64>,
    /// Spline knots `(time-of-day, mean duration)` the factor was built from.
    pub knots: Vec<(f64, f64)>,
}

/// Remove intraday seasonality: bin the durations by start time into
/// `knot_spacing`-second bins, fit a cubic spline through the nonempty bin
/// means, normalize the fitted curve to average one over its span, and divide
/// each duration by the factor at its start time.
pub fn diurnal_adjust(events: &LoadedSeries, knot_spacing: f64) -> Result<AdjustedDurations> {
    let Some(starts) = &events.start_times else {
        return Err(Error::InsufficientData(
            "diurnal adjustment needs timestamps, not bare durations".into(),
        ));
    };
    if !(knot_spacing > 0.0) {
        return Err(Error::domain(format!(
            "knot spacing must be positive, got {knot_spacing}"
        )));
    }
    let y = events.durations.values();

    // bin means over time of day; empty bins simply contribute no knot
    let mut sums: std::collections::BTreeMap<i64, (f64, usize)> = std::collections::BTreeMap::new();
    for (t, d) in starts.iter().zip(y) {
        let bin = (t / knot_spacing).floor() as i64;
        let e = sums.entry(bin).or_insert((0.0, 0));
        e.0 += d;
        e.1 += 1;
    }
    let knots: Vec<(f64, f64)> = sums
        .iter()
        .map(|(bin, (sum, count))| {
            (
                (*bin as f64 + 0.5) * knot_spacing,
                sum / *count as f64,
            )
        })
        .collect();
    if knots.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "diurnal adjustment needs at least 2 nonempty bins, got {}",
            knots.len()
        )));
    }
    let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
    let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
    let spline = CubicSpline::fit(&xs, &ys)?;
    let (lo, hi) = spline.span();
    let avg = spline.integral() / (hi - lo);
    if !(avg > 0.0) {
        return Err(Error::domain(
            "diurnal factor has nonpositive average".into(),
        ));
    }
    // the spline can dip negative between knots on rough data; floor the
    // factor at a small positive fraction of the average
    let floor = 1e-6 * avg;
    let factor_at: Vec<f64> = starts
        .iter()
        .map(|t| (spline.eval(*t) / avg).max(floor))
        .collect();
    let adjusted: Vec<f64> = y
        .iter()
        .zip(&factor_at)
        .map(|(d, f)| d / f)
        .collect();
    Ok(AdjustedDurations {
        raw: events.durations.clone(),
        adjusted: DurationSeries::new(adjusted)?,
        start_times: starts.clone(),
        factor_at,
        knots,
    })
}

/// Descriptive statistics in the convention of the data summaries: type-7
/// percentiles, n-1 standard deviation, coefficient of variation in percent,
/// moment skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DescribeTable {
    pub n: usize,
    pub min: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
    pub mean: f64,
    pub max: f64,
    pub sd: f64,
    pub cv_percent: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn describe(y: &DurationSeries) -> Result<DescribeTable> {
    if y.len() < 2 {
        return Err(Error::InsufficientData(
            "describe needs at least two observations".into(),
        ));
    }
    let mut sorted = y.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = stats::mean(y.values());
    let sd = stats::sample_sd(y.values());
    Ok(DescribeTable {
        n: y.len(),
        min: sorted[0],
        p10: stats::percentile_type7(&sorted, 0.10),
        median: stats::percentile_type7(&sorted, 0.50),
        p90: stats::percentile_type7(&sorted, 0.90),
        mean,
        max: *sorted.last().unwrap(),
        sd,
        cv_percent: 100.0 * sd / mean,
        skewness: stats::skewness(y.values()),
        excess_kurtosis: stats::kurtosis_excess(y.values()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("qacd_ingest_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!(
            "t{}.csv",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn timestamps_to_durations() {
        let p = write_temp("timestamp\n100\n103\n110\n");
        let loaded = load_events(&p).unwrap();
        assert_eq!(loaded.durations.values(), &[3.0, 7.0]);
        assert_eq!(loaded.start_times.as_deref(), Some(&[100.0, 103.0][..]));
        assert_eq!(loaded.dropped_nonpositive, 0);
    }

    #[test]
    fn duplicate_timestamps_dropped_with_count() {
        let p = write_temp("timestamp\n100\n100\n105\n");
        let loaded = load_events(&p).unwrap();
        assert_eq!(loaded.durations.values(), &[5.0]);
        assert_eq!(loaded.dropped_nonpositive, 1);
    }

    #[test]
    fn malformed_row_names_line() {
        let p = write_temp("timestamp\n100\nnot_a_number\n");
        match load_events(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let p = write_temp("timestamp\n100\n90\n");
        assert!(matches!(load_events(&p), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn duration_column_direct() {
        let p = write_temp("duration\n1.5\n0.5\n2.0\n");
        let loaded = load_events(&p).unwrap();
        assert_eq!(loaded.durations.values(), &[1.5, 0.5, 2.0]);
        assert!(loaded.start_times.is_none());
    }

    #[test]
    fn missing_column_and_empty_file() {
        let p = write_temp("foo\n1\n");
        assert!(matches!(load_events(&p), Err(Error::Parse { line: 1, .. })));
        let p2 = write_temp("duration\n");
        assert!(load_events(&p2).is_err());
    }

    #[test]
    fn flat_profile_leaves_durations_unchanged() {
        // constant durations over the day: factor is identically one
        let mut csv = String::from("timestamp\n");
        let mut t = 0.0;
        for _ in 0..500 {
            csv.push_str(&format!("{t}\n"));
            t += 2.0;
        }
        let loaded = load_events(&write_temp(&csv)).unwrap();
        let adj = diurnal_adjust(&loaded, 100.0).unwrap();
        for (a, r) in adj.adjusted.values().iter().zip(adj.raw.values()) {
            assert!((a - r).abs() < 1e-9, "{a} vs {r}");
        }
        for f in &adj.factor_at {
            assert!((f - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn u_shaped_intensity_is_flattened() {
        // slow durations midday, fast at the edges
        let mut csv = String::from("timestamp\n");
        let mut t = 0.0_f64;
        while t < 20_000.0 {
            let phase = t / 20_000.0;
            let level = 1.0 + 4.0 * (std::f64::consts::PI * phase).sin();
            csv.push_str(&format!("{t}\n"));
            t += level;
        }
        let loaded = load_events(&write_temp(&csv)).unwrap();
        let adj = diurnal_adjust(&loaded, 1000.0).unwrap();
        // regressing adjusted durations on time of day should give a much
        // flatter profile than the raw ones: compare binned spreads
        let spread = |y: &[f64], starts: &[f64]| -> f64 {
            let mut bins: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
            for (s, d) in starts.iter().zip(y) {
                let e = bins.entry((s / 1000.0) as i64).or_insert((0.0, 0));
                e.0 += d;
                e.1 += 1;
            }
            let means: Vec<f64> = bins.values().map(|(s, c)| s / *c as f64).collect();
            let m = stats::mean(&means);
            means.iter().map(|v| (v - m).abs()).fold(0.0, f64::max) / m
        };
        let raw_spread = spread(adj.raw.values(), &adj.start_times);
        let adj_spread = spread(adj.adjusted.values(), &adj.start_times);
        assert!(
            adj_spread < 0.25 * raw_spread,
            "raw {raw_spread} adj {adj_spread}"
        );
        // positivity and time ordering preserved
        assert!(adj.adjusted.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn adjustment_requires_timestamps() {
        let p = write_temp("duration\n1\n2\n");
        let loaded = load_events(&p).unwrap();
        assert!(diurnal_adjust(&loaded, 1800.0).is_err());
    }

    #[test]
    fn describe_symmetric_triple() {
        let y = DurationSeries::new(vec![1.0, 2.0, 3.0]).unwrap();
        let d = describe(&y).unwrap();
        assert_eq!(d.mean, 2.0);
        assert_eq!(d.median, 2.0);
        assert_eq!(d.sd, 1.0);
        assert_eq!(d.cv_percent, 50.0);
        assert_eq!(d.skewness, 0.0);
    }

    #[test]
    fn describe_repeated_value_sentinels() {
        let y = DurationSeries::new(vec![2.5; 8]).unwrap();
        let d = describe(&y).unwrap();
        assert_eq!(d.sd, 0.0);
        assert_eq!(d.cv_percent, 0.0);
        assert!(d.skewness.is_nan());
        assert!(d.excess_kurtosis.is_nan());
    }

    #[test]
    fn describe_exponential_moments() {
        use rand::Rng as _;
        use rand::SeedableRng as _;
        let mut rng = crate::Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..100_000)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let y = DurationSeries::new(vals).unwrap();
        let d = describe(&y).unwrap();
        assert!((d.mean - 1.0).abs() < 0.02);
        assert!((d.cv_percent - 100.0).abs() < 2.0);
        assert!((d.skewness - 2.0).abs() < 0.15);
        assert!((d.excess_kurtosis - 6.0).abs() < 1.0);
    }
}
