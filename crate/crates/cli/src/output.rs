//! CSV and JSON writers and the samples.csv reader.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use sas_core::sampler::MoveCounters;
use sas_core::{ChainDiagnostics, Label, MoveKind, SampleLog, SamplerConfig};
use serde::Serialize;

use crate::CliError;

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `chain,step,label,x1,...,xn`, one row per logged state; label 1 is off
/// the surface, 2 on it.
pub fn write_samples(path: &Path, logs: &[SampleLog<f64>]) -> Result<(), CliError> {
    let dim = logs.first().map_or(0, SampleLog::dim);
    let mut w = create(path)?;
    write!(w, "chain,step,label")?;
    for k in 1..=dim {
        write!(w, ",x{k}")?;
    }
    writeln!(w)?;
    for (chain, log) in logs.iter().enumerate() {
        for i in 0..log.len() {
            write!(w, "{chain},{},{}", log.steps[i], log.labels[i].index())?;
            for col in &log.coords {
                write!(w, ",{}", col[i])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads samples.csv back into one log per chain, ordered by chain index.
pub fn read_samples(path: &Path) -> Result<Vec<SampleLog<f64>>, CliError> {
    let bad = |m: String| CliError::Samples(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let dim = headers.len().saturating_sub(3);
    let expected: Vec<String> = ["chain", "step", "label"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=dim).map(|k| format!("x{k}")))
        .collect();
    if dim == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!("expected header {}", expected.join(","))));
    }
    let mut chains: BTreeMap<usize, SampleLog<f64>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let row = line + 2;
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let chain: usize = field(0)
            .parse()
            .map_err(|_| bad(format!("row {row}: bad chain index")))?;
        let step: u64 = field(1).parse().map_err(|_| bad(format!("row {row}: bad step")))?;
        let label = field(2)
            .parse::<u8>()
            .ok()
            .and_then(Label::from_index)
            .ok_or_else(|| bad(format!("row {row}: label must be 1 or 2")))?;
        let mut x = DVector::zeros(dim);
        for k in 0..dim {
            let v: f64 = field(3 + k)
                .parse()
                .map_err(|_| bad(format!("row {row}: bad value for x{}", k + 1)))?;
            if !v.is_finite() {
                return Err(bad(format!("row {row}: non-finite x{}", k + 1)));
            }
            x[k] = v;
        }
        chains
            .entry(chain)
            .or_insert_with(|| SampleLog::new(dim))
            .push(step, label, &x);
    }
    if chains.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok(chains.into_values().collect())
}

#[derive(Debug, Serialize)]
struct MoveSummary {
    proposed: u64,
    accepted: u64,
    newton_failures: u64,
    reverse_check_failures: u64,
    other_failures: u64,
    acceptance_rate: f64,
    mean_acceptance_probability: f64,
}

impl From<&MoveCounters> for MoveSummary {
    fn from(c: &MoveCounters) -> Self {
        Self {
            proposed: c.proposed,
            accepted: c.accepted,
            newton_failures: c.newton_failures,
            reverse_check_failures: c.reverse_check_failures,
            other_failures: c.other_failures,
            acceptance_rate: c.acceptance_rate(),
            mean_acceptance_probability: c.mean_acceptance_probability(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Occupancy {
    ambient: u64,
    surface: u64,
    ambient_fraction: f64,
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile<'a, E: Serialize> {
    n_chains: usize,
    steps: u64,
    moves: BTreeMap<&'static str, MoveSummary>,
    occupancy: Occupancy,
    config: &'a SamplerConfig<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<E>,
}

pub fn write_diagnostics<E: Serialize>(
    path: &Path,
    diag: &ChainDiagnostics,
    config: &SamplerConfig<f64>,
    n_chains: usize,
    extra: Option<E>,
) -> Result<(), CliError> {
    let moves = MoveKind::ALL
        .iter()
        .map(|k| (k.name(), MoveSummary::from(diag.counters(*k))))
        .collect();
    let file = DiagnosticsFile {
        n_chains,
        steps: diag.steps(),
        moves,
        occupancy: Occupancy {
            ambient: diag.occupancy_ambient,
            surface: diag.occupancy_surface,
            ambient_fraction: diag.ambient_fraction(),
        },
        config,
        extra,
    };
    write_json(path, &file)
}

/// Writes rows of already formatted fields under `header`.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
