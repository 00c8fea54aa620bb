//! Output files, written atomically through a temporary sibling and a
//! rename so concurrent jobs never see partial files.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::config::Format;
use crate::CliResult;

pub struct Outputs {
    dir: PathBuf,
    format: Format,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Converts the header-plus-rows CSV produced by the core writers into an
/// array of records; numeric cells become numbers.
pub fn csv_to_json(csv: &str) -> Value {
    let mut lines = csv.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    let rows = lines
        .map(|line| {
            let mut obj = Map::new();
            for (k, cell) in header.iter().zip(line.split(',')) {
                let v = match cell.parse::<f64>() {
                    Ok(x) if x.is_finite() => Value::from(x),
                    _ => match cell {
                        "true" => Value::Bool(true),
                        "false" => Value::Bool(false),
                        other => Value::String(other.to_string()),
                    },
                };
                obj.insert((*k).to_string(), v);
            }
            Value::Object(obj)
        })
        .collect();
    Value::Array(rows)
}

impl Outputs {
    pub fn new(dir: &Path, format: Format) -> CliResult<Outputs> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            format,
        })
    }

    /// Writes a table given as CSV, converted when JSON output is selected.
    pub fn table(&self, stem: &str, csv: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(format!("{stem}.{}", self.format.extension()));
        match self.format {
            Format::Csv => write_atomic(&path, csv)?,
            Format::Json => {
                let text = String::from_utf8_lossy(csv);
                let body = serde_json::to_vec_pretty(&csv_to_json(&text)).expect("table serializes");
                write_atomic(&path, &body)?;
            }
        }
        Ok(path)
    }

    pub fn json(&self, stem: &str, value: &Value) -> CliResult<PathBuf> {
        let path = self.dir.join(format!("{stem}.json"));
        let body = serde_json::to_vec_pretty(value).expect("summary serializes");
        write_atomic(&path, &body)?;
        Ok(path)
    }
}
