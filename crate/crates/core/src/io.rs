//! File formats.
//!
//! * Series CSV: a single column with header `y`, UTF-8, `\n` line endings,
//!   one value per row, conditioning rows first. Values are written in the
//!   shortest form that parses back to the identical `f64`.
//! * Model JSON: `n_regimes`, `ar_order`, `transition` (array of columns,
//!   `transition[j][i] = P(next = i | current = j)`), `regimes`
//!   (`{coeffs, sigma}` each) and `initial_dist`.
//! * Truth JSON: seed, 1-based hidden path and the generating model.
//! * Filter trace CSV: `step,scale,q_1..q_N`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::run_filter_with;
use crate::model::{ObservationSeries, SwitchingModel};
use crate::simulate::SimOutput;

pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Raw values of a series CSV.
pub fn read_values<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?;
    if headers.len() != 1 || headers.get(0).map(str::trim) != Some("y") {
        return Err(Error::InvalidSeries(format!(
            "expected a single column with header `y`, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut values = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = record.get(0).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| Error::InvalidSeries(format!("row {}: cannot parse {field:?}", row + 1)))?;
        values.push(v);
    }
    Ok(values)
}

pub fn read_series_csv(path: &Path, ar_order: usize) -> Result<ObservationSeries> {
    let file = std::fs::File::open(path)?;
    ObservationSeries::new(read_values(file)?, ar_order)
}

pub fn write_values<W: Write>(mut writer: W, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 20 + 2);
    out.push_str("y\n");
    for &v in values {
        out.push_str(&format_f64(v));
        out.push('\n');
    }
    writer.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_series_csv(path: &Path, values: &[f64]) -> Result<()> {
    write_values(std::fs::File::create(path)?, values)
}

pub fn read_model_json(path: &Path) -> Result<SwitchingModel> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Sidecar written next to a simulated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub seed: u64,
    pub n_emissions: usize,
    /// Regime (1-based) driving each emission.
    pub hidden_path: Vec<usize>,
    pub model: SwitchingModel,
}

impl TruthFile {
    pub fn new(sim: &SimOutput, model: &SwitchingModel) -> Self {
        Self {
            seed: sim.seed,
            n_emissions: sim.hidden_path.len(),
            hidden_path: sim.hidden_path.iter().map(|r| r + 1).collect(),
            model: model.clone(),
        }
    }
}

/// `data.csv` -> `data.truth.json`
pub fn truth_path(data_path: &Path) -> std::path::PathBuf {
    data_path.with_extension("truth.json")
}

/// Runs the filter and writes one row per emission: step, normalization
/// constant and the normalized state filter.
pub fn write_filter_trace<W: Write>(mut writer: W, model: &SwitchingModel, series: &ObservationSeries) -> Result<()> {
    let mut out = String::from("step,scale");
    for i in 1..=model.n_regimes() {
        out.push_str(&format!(",q_{i}"));
    }
    out.push('\n');
    run_filter_with(model, series, |state, log_inc| {
        out.push_str(&format!("{},{}", state.steps(), format_f64(log_inc.exp())));
        for q in state.q().as_slice() {
            out.push(',');
            out.push_str(&format_f64(*q));
        }
        out.push('\n');
    })?;
    writer.write_all(out.as_bytes())?;
    Ok(())
}
