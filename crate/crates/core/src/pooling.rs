//! Clip-level pooling of frame features into one fixed-length vector.
//!
//! The pooled layout is `[max of slots 0..68, min of slots 0..68, mean of slots 0..68]`.
//! Pitch and harmonic slots are pooled over voiced frames only (zero when a clip has
//! none); every other slot, including the voicing flag, is pooled over all frames.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::{self, FrameFeatureVector, FRAME_DIM, REFERENCE_FRAME_DIM};

pub const N_STATISTICS: usize = 3;
pub const POOLED_DIM: usize = pooled_dim(FRAME_DIM);
/// Pooled width under the full 74-slot reference layout.
pub const REFERENCE_POOLED_DIM: usize = pooled_dim(REFERENCE_FRAME_DIM);

pub const fn pooled_dim(frame_dim: usize) -> usize {
    N_STATISTICS * frame_dim
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    Max,
    Min,
    Mean,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Max => "max",
            Statistic::Min => "min",
            Statistic::Mean => "mean",
        }
    }
}

/// Splits a pooled dimension into its statistic and frame slot.
pub fn describe_dim(dim: usize) -> (Statistic, usize) {
    assert!(dim < POOLED_DIM, "pooled dimension {dim} out of range");
    let stat = match dim / FRAME_DIM {
        0 => Statistic::Max,
        1 => Statistic::Min,
        _ => Statistic::Mean,
    };
    (stat, dim % FRAME_DIM)
}

/// Column name used in pooled CSV headers (`f1`..`f204`).
pub fn column_name(dim: usize) -> String {
    format!("f{}", dim + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeatureVector {
    pub clip_id: String,
    pub label: Option<String>,
    pub values: Vec<f64>,
}

impl PooledFeatureVector {
    pub fn max(&self, slot: usize) -> f64 {
        self.values[slot]
    }

    pub fn min(&self, slot: usize) -> f64 {
        self.values[FRAME_DIM + slot]
    }

    pub fn mean(&self, slot: usize) -> f64 {
        self.values[2 * FRAME_DIM + slot]
    }
}

pub fn pool(clip_id: &str, frames: &[FrameFeatureVector]) -> Result<PooledFeatureVector> {
    if frames.is_empty() {
        return Err(Error::Degenerate(format!(
            "clip {clip_id:?} has no frames to pool"
        )));
    }
    let mut values = vec![0.0; POOLED_DIM];
    for slot in 0..FRAME_DIM {
        let voiced_only = features::is_voiced_only(slot);
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for f in frames.iter().filter(|f| !voiced_only || f.voiced()) {
            let v = f[slot];
            max = max.max(v);
            min = min.min(v);
            sum += v;
            count += 1;
        }
        if count > 0 {
            // Clamp the mean into [min, max] against summation rounding.
            let mean = (sum / count as f64).clamp(min, max);
            values[slot] = max;
            values[FRAME_DIM + slot] = min;
            values[2 * FRAME_DIM + slot] = mean;
        }
    }
    Ok(PooledFeatureVector {
        clip_id: clip_id.to_string(),
        label: None,
        values,
    })
}

/// Writes pooled vectors as `clip_id,label,f1..f204`.
pub fn write_pooled_csv<W: Write>(writer: W, rows: &[PooledFeatureVector]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["clip_id".to_string(), "label".to_string()];
    header.extend((0..POOLED_DIM).map(column_name));
    csv.write_record(&header)?;
    for r in rows {
        if r.values.len() != POOLED_DIM {
            return Err(Error::DimensionMismatch {
                expected: POOLED_DIM,
                got: r.values.len(),
            });
        }
        let mut row = vec![r.clip_id.clone(), r.label.clone().unwrap_or_default()];
        row.extend(r.values.iter().map(|v| v.to_string()));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io("<pooled features>", e))?;
    Ok(())
}

/// Reads a pooled CSV. Any feature width is accepted as long as every row agrees
/// with the header; an empty label column becomes `None`.
pub fn read_pooled_csv<R: Read>(reader: R) -> Result<Vec<PooledFeatureVector>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.len() < 3 || &header[0] != "clip_id" || &header[1] != "label" {
        return Err(Error::Row {
            row: 0,
            message: "expected header clip_id,label,f1,...".into(),
        });
    }
    let width = header.len() - 2;
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| Error::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        let values = rec
            .iter()
            .skip(2)
            .enumerate()
            .map(|(j, s)| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Row {
                        row: row_no,
                        message: format!("column {}: invalid number {s:?}", column_name(j)),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != width {
            return Err(Error::Row {
                row: row_no,
                message: format!("expected {width} features, found {}", values.len()),
            });
        }
        let label = rec.get(1).map(str::trim).filter(|s| !s.is_empty());
        rows.push(PooledFeatureVector {
            clip_id: rec[0].to_string(),
            label: label.map(String::from),
            values,
        });
    }
    Ok(rows)
}
