//! File formats.
//!
//! CSV files are comma separated with a header row and start with `#`
//! comment lines carrying the run's [`Meta`]. JSON files are objects with a
//! `meta` key next to the payload. Floats use Rust's shortest round-trip
//! formatting, so output bytes depend only on the values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gt_core::design::{PoolingDesign, RawDesign};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{sha256_hex, Meta};
use crate::{CliError, CliResult};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

pub fn digest_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub fn fmt_f64(x: f64) -> String {
    x.to_string()
}

fn fmt_bool(x: bool) -> String {
    u8::from(x).to_string()
}

/// Loads and validates a design file written by `gt design`.
pub fn load_design(path: &Path) -> CliResult<PoolingDesign> {
    let bytes = read_bytes(path)?;
    let mut value: Value = serde_json::from_slice(&bytes).map_err(|e| CliError::input(path, e))?;
    if let Value::Object(map) = &mut value {
        map.remove("meta");
    }
    let raw: RawDesign = serde_json::from_value(value).map_err(|e| CliError::input(path, e))?;
    PoolingDesign::try_from(raw).map_err(|e| CliError::input(path, e))
}

/// Header and rows of a CSV file, skipping `#` comment lines.
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let bytes = read_bytes(path)?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::input(path, e))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((headers, rows))
}

/// The named column parsed as floats.
pub fn read_f64_column(path: &Path, column: &str) -> CliResult<Vec<f64>> {
    let (headers, rows) = read_table(path)?;
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::input(path, format!("no column {column:?}")))?;
    rows.iter()
        .enumerate()
        .map(|(line, row)| {
            row[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::input(path, format!("row {line}: {e}")))
        })
        .collect()
}

/// An `index,value` file of 0/1 values with indices `0..n` in order.
pub fn read_indexed_bools(path: &Path) -> CliResult<Vec<bool>> {
    let (headers, rows) = read_table(path)?;
    if headers != ["index", "value"] {
        return Err(CliError::input(path, "expected header index,value"));
    }
    rows.iter()
        .enumerate()
        .map(|(expected, row)| {
            if row[0].trim() != expected.to_string() {
                return Err(CliError::input(path, format!("row {expected}: index {:?} out of order", row[0])));
            }
            match row[1].trim() {
                "0" | "false" => Ok(false),
                "1" | "true" => Ok(true),
                other => Err(CliError::input(path, format!("row {expected}: value {other:?} is not 0 or 1"))),
            }
        })
        .collect()
}

/// Writes outputs into one directory, stamping each with the run's meta.
pub struct OutputDir {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(dir: &Path, meta: Meta) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            written: Vec::new(),
        })
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        let config = serde_json::to_string(&self.meta.config).unwrap_or_default();
        let mut lines = vec![
            format!("tool: {}", self.meta.tool),
            format!("command: {}", self.meta.command),
            format!("seed: {}", self.meta.seed),
            format!("config_hash: {}", self.meta.config_hash),
            format!("config: {config}"),
        ];
        if !self.meta.inputs.is_empty() {
            lines.push(format!("inputs: {}", serde_json::to_string(&self.meta.inputs).unwrap_or_default()));
        }
        for line in lines {
            writeln!(out, "# {line}").map_err(io_err(&path))?;
        }
        let mut writer = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| CliError::input(&path, e);
        writer.write_record(header).map_err(csv_err)?;
        for row in rows {
            writer.write_record(&row).map_err(csv_err)?;
        }
        writer.flush().map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    /// `payload` should serialise to an object; anything else is stored
    /// under `data`.
    pub fn json<T: Serialize>(&mut self, name: &str, payload: &T) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut object = match serde_json::to_value(payload).map_err(|e| CliError::input(&path, e))? {
            Value::Object(map) => map,
            other => {
                let mut map = Map::new();
                map.insert("data".into(), other);
                map
            }
        };
        object.insert(
            "meta".into(),
            serde_json::to_value(&self.meta).map_err(|e| CliError::input(&path, e))?,
        );
        let mut text = serde_json::to_string_pretty(&Value::Object(object)).map_err(|e| CliError::input(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    pub fn indexed_bools(&mut self, name: &str, values: &[bool]) -> CliResult<()> {
        let rows = values.iter().enumerate().map(|(i, &v)| vec![i.to_string(), fmt_bool(v)]);
        self.csv(name, &["index", "value"], rows)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn bool_cell(x: bool) -> String {
    fmt_bool(x)
}
