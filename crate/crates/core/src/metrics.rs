//! Mode coverage and the per-epoch records written to `metrics.csv` and
//! `coverage.csv`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Samples assigned to each mode by nearest center; sums to `total`.
    pub counts: Vec<usize>,
    /// Assigned samples lying within 3σ of their center.
    pub near_counts: Vec<usize>,
    pub covered_modes: usize,
    pub high_quality_fraction: f64,
    pub total: usize,
}

/// Assigns every sample to its nearest center. A mode is covered when at
/// least `threshold_count` of its samples lie within `3σ` of it;
/// `high_quality_fraction` is the share of all samples within `3σ` of their
/// assigned center.
pub fn mode_coverage(samples: &Matrix, centers: &Matrix, sigma: f64, threshold_count: usize) -> Result<CoverageReport> {
    if samples.rows() == 0 || centers.rows() == 0 {
        return Err(Error::InvalidArgument("mode coverage needs samples and centers".into()));
    }
    if samples.cols() != centers.cols() {
        return Err(Error::shape("coverage sample width", centers.cols(), samples.cols()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let radius_sq = (3.0 * sigma) * (3.0 * sigma);
    let mut counts = vec![0; centers.rows()];
    let mut near_counts = vec![0; centers.rows()];
    for row in samples.iter_rows() {
        let mut best = (0, f64::INFINITY);
        for (m, c) in centers.iter_rows().enumerate() {
            let d: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (m, d);
            }
        }
        counts[best.0] += 1;
        if best.1 <= radius_sq {
            near_counts[best.0] += 1;
        }
    }
    let covered_modes = near_counts.iter().filter(|&&n| n >= threshold_count.max(1)).count();
    let near: usize = near_counts.iter().sum();
    Ok(CoverageReport {
        counts,
        near_counts,
        covered_modes,
        high_quality_fraction: near as f64 / samples.rows() as f64,
        total: samples.rows(),
    })
}

/// One row of `metrics.csv`. `user` is `None` for the generator's row, whose
/// `work_units` counts generator updates instead of real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub user: Option<usize>,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub work_units: u64,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: [&str; 6] = ["epoch", "user_id", "d_loss", "g_loss", "work_units", "wall_ms"];
pub const COVERAGE_HEADER: [&str; 3] = ["epoch", "covered_modes", "quality"];
pub const GENERATOR_SENTINEL: &str = "generator";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(METRICS_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        self.inner.write_record([
            r.epoch.to_string(),
            r.user.map_or_else(|| GENERATOR_SENTINEL.to_string(), |u| u.to_string()),
            opt(r.d_loss),
            opt(r.g_loss),
            r.work_units.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = MetricsWriter::new(out)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected metrics header {header:?}")));
    }
    let parse_f = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("bad number `{s}` in metrics")))
        }
    };
    let parse_u = |s: &str| -> Result<u64> {
        s.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad integer `{s}` in metrics")))
    };
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        out.push(MetricsRecord {
            epoch: parse_u(&rec[0])?,
            user: if &rec[1] == GENERATOR_SENTINEL {
                None
            } else {
                Some(parse_u(&rec[1])? as usize)
            },
            d_loss: parse_f(&rec[2])?,
            g_loss: parse_f(&rec[3])?,
            work_units: parse_u(&rec[4])?,
            wall_ms: parse_f(&rec[5])?.unwrap_or(0.0),
        });
    }
    Ok(out)
}

/// One row of `coverage.csv`; `epoch` counts completed training epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePoint {
    pub epoch: u64,
    pub covered_modes: usize,
    pub quality: f64,
}

pub fn write_coverage_csv<W: Write>(points: &[CoveragePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COVERAGE_HEADER)?;
    for p in points {
        w.write_record([p.epoch.to_string(), p.covered_modes.to_string(), p.quality.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coverage_csv<R: Read>(input: R) -> Result<Vec<CoveragePoint>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let bad = |s: &str| Error::InvalidArgument(format!("bad coverage value `{s}`"));
        out.push(CoveragePoint {
            epoch: rec[0].parse().map_err(|_| bad(&rec[0]))?,
            covered_modes: rec[1].parse().map_err(|_| bad(&rec[1]))?,
            quality: rec[2].parse().map_err(|_| bad(&rec[2]))?,
        });
    }
    Ok(out)
}
