//! Line-delimited JSON outputs.
//!
//! Metrics: one object per (epoch, split) with fields in the order
//! `epoch, split, loss, error`. Predictions: one object per video with
//! fields `id, label, argmax, probs`, ordered by video id.

use std::io::Write;

use rrn_core::inference::VideoPrediction;
use rrn_core::train::EpochRecord;
use serde::Serialize;

#[derive(Serialize)]
struct MetricLine<'a> {
    epoch: usize,
    split: &'a str,
    loss: f64,
    error: f64,
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: usize,
    label: usize,
    argmax: usize,
    probs: &'a [f64],
}

pub fn metric_line(r: &EpochRecord) -> String {
    serde_json::to_string(&MetricLine {
        epoch: r.epoch,
        split: &r.split,
        loss: r.loss,
        error: r.error,
    })
    .expect("plain struct serializes")
}

pub fn prediction_line(id: usize, p: &VideoPrediction) -> String {
    serde_json::to_string(&PredictionLine {
        id,
        label: p.label,
        argmax: p.predicted,
        probs: &p.probs,
    })
    .expect("plain struct serializes")
}

pub fn write_predictions(out: &mut impl Write, predictions: &[VideoPrediction]) -> std::io::Result<()> {
    for (id, p) in predictions.iter().enumerate() {
        writeln!(out, "{}", prediction_line(id, p))?;
    }
    Ok(())
}
