use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coupledflow::eval::{Accuracy, GpFit, SweepReport};
use coupledflow::{Error, Result};
use serde::Serialize;

use crate::Format;

#[derive(Debug, Serialize)]
pub struct FiberOut {
    pub middle: String,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
pub struct RecordCounts {
    pub data_lines: usize,
    pub malformed: usize,
    pub records: usize,
    pub p_records: usize,
    pub q_records: usize,
    pub dropped: usize,
}

#[derive(Debug, Serialize)]
pub struct DetectReport {
    pub alpha: f64,
    pub score_algorithmic: f64,
    pub score_exact: f64,
    pub iterations: usize,
    pub priority_updates: usize,
    pub block_mass: f64,
    pub sources: Vec<String>,
    pub middles: Vec<String>,
    pub destinations: Vec<String>,
    pub fibers: Vec<FiberOut>,
    pub input: RecordCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Accuracy>,
}

#[derive(Debug, Serialize)]
pub struct SurpriseReport {
    pub observed_mass: f64,
    pub sources: usize,
    pub middles: usize,
    pub destinations: usize,
    pub samples: usize,
    pub epsilon: f64,
    pub threshold: f64,
    pub shape: f64,
    pub scale: f64,
    pub log_likelihood: f64,
    pub surprisingness: f64,
}

impl SurpriseReport {
    pub fn new(observed_mass: f64, size: [usize; 3], fit: &GpFit, surprisingness: f64) -> Self {
        SurpriseReport {
            observed_mass,
            sources: size[0],
            middles: size[1],
            destinations: size[2],
            samples: fit.n_samples,
            epsilon: fit.epsilon,
            threshold: fit.threshold,
            shape: fit.shape,
            scale: fit.scale,
            log_likelihood: fit.log_likelihood,
            surprisingness,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub requested: usize,
    pub entries: usize,
    pub fibers: usize,
    pub iterations: usize,
    pub seconds: f64,
}

pub fn write_out(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| io_error(p, e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from(path),
        source,
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn list(out: &mut String, name: &str, ids: &[String]) {
    let _ = writeln!(out, "{name} ({}): {}", ids.len(), ids.join(" "));
}

pub fn render_detect(r: &DetectReport, format: Format) -> String {
    if format == Format::Json {
        return json(r);
    }
    let mut out = String::new();
    let _ = writeln!(out, "alpha: {}", r.alpha);
    let _ = writeln!(out, "score_algorithmic: {}", r.score_algorithmic);
    let _ = writeln!(out, "score_exact: {}", r.score_exact);
    let _ = writeln!(out, "iterations: {}", r.iterations);
    let _ = writeln!(out, "priority_updates: {}", r.priority_updates);
    let _ = writeln!(out, "block_mass: {}", r.block_mass);
    list(&mut out, "sources", &r.sources);
    list(&mut out, "middles", &r.middles);
    list(&mut out, "destinations", &r.destinations);
    let _ = writeln!(out, "fibers ({}):", r.fibers.len());
    for f in &r.fibers {
        let attrs: Vec<String> = f.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "  {} {}", f.middle, attrs.join(" "));
    }
    let c = &r.input;
    let _ = writeln!(
        out,
        "input: {} lines, {} malformed, {} records, {} in P, {} in Q, {} dropped",
        c.data_lines, c.malformed, c.records, c.p_records, c.q_records, c.dropped
    );
    if let Some(e) = &r.evaluation {
        let _ = writeln!(out, "precision: {}", e.precision);
        let _ = writeln!(out, "recall: {}", e.recall);
        let _ = writeln!(out, "f_measure: {}", e.f_measure);
    }
    out
}

pub fn render_sweep(r: &SweepReport, format: Format) -> String {
    if format == Format::Json {
        return json(r);
    }
    let mut out = String::new();
    let _ = writeln!(out, "fauc: {}", r.fauc);
    let _ = writeln!(out, "points: {}", r.outcomes.len());
    let _ = writeln!(
        out,
        "index\tsweep_value\traw_density\tdensity\tprecision\trecall\tf_measure\tscore"
    );
    for o in &r.outcomes {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.index,
            o.sweep_value,
            o.raw_density,
            o.point.density,
            o.accuracy.precision,
            o.accuracy.recall,
            o.point.f_measure,
            o.score_algorithmic
        );
    }
    out
}

pub fn render_surprise(r: &SurpriseReport, format: Format) -> String {
    if format == Format::Json {
        return json(r);
    }
    let mut out = String::new();
    let _ = writeln!(out, "observed_mass: {}", r.observed_mass);
    let _ = writeln!(out, "flow_size: {} {} {}", r.sources, r.middles, r.destinations);
    let _ = writeln!(out, "samples: {}", r.samples);
    let _ = writeln!(out, "epsilon: {}", r.epsilon);
    let _ = writeln!(out, "threshold: {}", r.threshold);
    let _ = writeln!(out, "shape: {}", r.shape);
    let _ = writeln!(out, "scale: {}", r.scale);
    let _ = writeln!(out, "log_likelihood: {}", r.log_likelihood);
    let _ = writeln!(out, "surprisingness: {}", r.surprisingness);
    out
}

pub fn render_bench(rows: &[BenchRow], format: Format) -> String {
    if format == Format::Json {
        return json(&rows);
    }
    let mut out = String::from("requested\tentries\tfibers\titerations\tseconds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}",
            r.requested, r.entries, r.fibers, r.iterations, r.seconds
        );
    }
    out
}
