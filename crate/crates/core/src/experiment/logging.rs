use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::models::{ModelSpec, Parameters, Role};

use super::train::Observer;

/// Scalar columns, in order, at the start of every CSV row.
pub const BASE_COLUMNS: [&str; 9] = [
    "step",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
    "lr",
    "dead_units",
    "attention_rank",
    "rewarm",
];

/// Per-tensor and per-layer column groups, each sorted by name, appended
/// after the base columns as `<prefix>/<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LogSchema {
    pub elr: Vec<String>,
    pub norm: Vec<String>,
    pub update: Vec<String>,
    pub delta_c: Vec<String>,
    pub delta_a: Vec<String>,
}

impl LogSchema {
    pub fn for_model(model: &ModelSpec, params: &Parameters) -> Self {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        let layers = {
            let mut l = model.feature_layers();
            l.sort();
            l
        };
        Self {
            elr: params
                .iter()
                .filter(|(_, p)| matches!(p.role, Role::Weight | Role::Head | Role::Embedding))
                .map(|(n, _)| n.to_string())
                .collect(),
            norm: names.clone(),
            update: names,
            delta_c: layers.clone(),
            delta_a: layers,
        }
    }

    fn groups(&self) -> [(&'static str, &Vec<String>); 5] {
        [
            ("elr", &self.elr),
            ("norm", &self.norm),
            ("update", &self.update),
            ("delta_c", &self.delta_c),
            ("delta_a", &self.delta_a),
        ]
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        for (prefix, names) in self.groups() {
            h.extend(names.iter().map(|n| format!("{prefix}/{n}")));
        }
        h
    }

    pub fn from_header(header: &[String]) -> std::result::Result<Self, String> {
        if header.len() < BASE_COLUMNS.len() || header[..BASE_COLUMNS.len()] != BASE_COLUMNS {
            return Err(format!("header must start with {}", BASE_COLUMNS.join(",")));
        }
        let mut schema = LogSchema::default();
        for col in &header[BASE_COLUMNS.len()..] {
            let (prefix, name) = col.split_once('/').ok_or_else(|| format!("unknown column `{col}`"))?;
            let group = match prefix {
                "elr" => &mut schema.elr,
                "norm" => &mut schema.norm,
                "update" => &mut schema.update,
                "delta_c" => &mut schema.delta_c,
                "delta_a" => &mut schema.delta_a,
                _ => return Err(format!("unknown column group `{prefix}`")),
            };
            group.push(name.to_string());
        }
        if schema.header() != header {
            return Err("columns are not in canonical order".into());
        }
        Ok(schema)
    }

    fn maps<'r>(&self, r: &'r MetricRecord) -> [&'r BTreeMap<String, f64>; 5] {
        [&r.elr, &r.param_norm, &r.update_norm, &r.delta_c, &r.delta_a]
    }

    /// Row cells; a missing per-layer value is an empty cell.
    pub fn row(&self, r: &MetricRecord) -> Result<Vec<String>> {
        let mut row = vec![
            r.step.to_string(),
            fmt(r.train_loss),
            fmt(r.train_acc),
            fmt(r.test_loss),
            fmt(r.test_acc),
            fmt(r.lr),
            r.dead_units.to_string(),
            r.attention_rank.map(fmt).unwrap_or_default(),
            r.rewarm.to_string(),
        ];
        for ((prefix, names), map) in self.groups().into_iter().zip(self.maps(r)) {
            if let Some(extra) = map.keys().find(|k| !names.contains(k)) {
                return Err(Error::Contract(format!("record has `{prefix}/{extra}` which is not in the log schema")));
            }
            row.extend(names.iter().map(|n| map.get(n).copied().map(fmt).unwrap_or_default()));
        }
        Ok(row)
    }

    pub fn parse_row(&self, cells: &[&str]) -> std::result::Result<MetricRecord, String> {
        let width = self.header().len();
        if cells.len() != width {
            return Err(format!("expected {width} cells, got {}", cells.len()));
        }
        let f = |i: usize| -> std::result::Result<f64, String> {
            cells[i]
                .parse::<f64>()
                .map_err(|e| format!("column `{}`: {e}", BASE_COLUMNS[i]))
        };
        let mut r = MetricRecord {
            step: cells[0].parse().map_err(|e| format!("column `step`: {e}"))?,
            train_loss: f(1)?,
            train_acc: f(2)?,
            test_loss: f(3)?,
            test_acc: f(4)?,
            lr: f(5)?,
            dead_units: cells[6].parse().map_err(|e| format!("column `dead_units`: {e}"))?,
            attention_rank: if cells[7].is_empty() { None } else { Some(f(7)?) },
            rewarm: cells[8].parse().map_err(|e| format!("column `rewarm`: {e}"))?,
            ..Default::default()
        };
        let mut i = BASE_COLUMNS.len();
        let groups: Vec<(&str, Vec<String>)> = self.groups().iter().map(|(p, n)| (*p, (*n).clone())).collect();
        for (prefix, names) in groups {
            let map = match prefix {
                "elr" => &mut r.elr,
                "norm" => &mut r.param_norm,
                "update" => &mut r.update_norm,
                "delta_c" => &mut r.delta_c,
                _ => &mut r.delta_a,
            };
            for n in names {
                if !cells[i].is_empty() {
                    let v = cells[i].parse::<f64>().map_err(|e| format!("column `{prefix}/{n}`: {e}"))?;
                    map.insert(n, v);
                }
                i += 1;
            }
        }
        Ok(r)
    }
}

/// Shortest representation that parses back to the same bits.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub const CSV_FILE: &str = "metrics.csv";
pub const JSONL_FILE: &str = "metrics.jsonl";

/// Append-only CSV + JSONL sink, flushed after every record.
pub struct LogWriter {
    schema: LogSchema,
    csv_path: PathBuf,
    jsonl_path: PathBuf,
    csv: csv::Writer<File>,
    jsonl: BufWriter<File>,
}

impl LogWriter {
    /// Creates both files in `dir` and writes the CSV header.
    pub fn create(dir: &Path, schema: LogSchema) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(CSV_FILE);
        let jsonl_path = dir.join(JSONL_FILE);
        let csv_file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let jsonl_file = File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?;
        let mut w = Self {
            csv: csv::Writer::from_writer(csv_file),
            jsonl: BufWriter::new(jsonl_file),
            schema,
            csv_path,
            jsonl_path,
        };
        let header = w.schema.header();
        w.csv.write_record(&header).map_err(|e| csv_error(&w.csv_path, e))?;
        w.flush()?;
        Ok(w)
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        let row = self.schema.row(record)?;
        self.csv.write_record(&row).map_err(|e| csv_error(&self.csv_path, e))?;
        let line = serde_json::to_string(record).map_err(|e| Error::Log {
            path: self.jsonl_path.clone(),
            reason: e.to_string(),
        })?;
        writeln!(self.jsonl, "{line}").map_err(|e| Error::io(&self.jsonl_path, e))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.csv.flush().map_err(|e| Error::io(&self.csv_path, e))?;
        self.jsonl.flush().map_err(|e| Error::io(&self.jsonl_path, e))
    }
}

impl Observer for LogWriter {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.write(record)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Log {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Writes `records` to `dir` in one go.
pub fn emit_logs(dir: &Path, schema: &LogSchema, records: &[MetricRecord]) -> Result<()> {
    let mut w = LogWriter::create(dir, schema.clone())?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

/// Reads a metrics CSV back into records.
pub fn read_csv_log(path: &Path) -> Result<(LogSchema, Vec<MetricRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let schema = LogSchema::from_header(&header).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })?;
    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let corrupt = |reason: String| Error::CorruptRecord {
            path: path.to_path_buf(),
            index,
            reason,
        };
        let row = row.map_err(|e| corrupt(e.to_string()))?;
        let cells: Vec<&str> = row.iter().collect();
        records.push(schema.parse_row(&cells).map_err(corrupt)?);
    }
    Ok((schema, records))
}

/// Reads a metrics JSONL file back into records.
pub fn read_jsonl_log(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::CorruptRecord {
            path: path.to_path_buf(),
            index,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LogSchema {
        LogSchema {
            elr: vec!["head".into(), "hidden0".into()],
            norm: vec!["head".into(), "hidden0".into(), "hidden0.scale".into()],
            update: vec!["head".into(), "hidden0".into(), "hidden0.scale".into()],
            delta_c: vec!["hidden0".into()],
            delta_a: vec!["hidden0".into()],
        }
    }

    fn record(step: u64) -> MetricRecord {
        let m = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        MetricRecord {
            step,
            train_loss: 0.1 + step as f64 / 3.0,
            train_acc: 0.5,
            test_loss: 1.0 / 7.0,
            test_acc: 0.25,
            lr: 1e-3,
            elr: m(&[("hidden0", 1e-4 / 3.0), ("head", 2.5e-17)]),
            param_norm: m(&[("head", 3.0), ("hidden0", 2.0f64.sqrt()), ("hidden0.scale", 8.0)]),
            update_norm: m(&[("head", 0.0), ("hidden0", 1e-300), ("hidden0.scale", 0.1)]),
            delta_c: m(&[("hidden0", 0.01)]),
            delta_a: m(&[("hidden0", 0.125)]),
            dead_units: 3,
            attention_rank: if step % 2 == 0 { Some(std::f64::consts::E) } else { None },
            rewarm: step == 2,
        }
    }

    #[test]
    fn empty_run_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_logs(dir.path(), &schema(), &[]).unwrap();
        let text = std::fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (s, recs) = read_csv_log(&dir.path().join(CSV_FILE)).unwrap();
        assert_eq!(s, schema());
        assert!(recs.is_empty());
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<MetricRecord> = (0..4).map(record).collect();
        emit_logs(dir.path(), &schema(), &recs).unwrap();
        let (_, back) = read_csv_log(&dir.path().join(CSV_FILE)).unwrap();
        assert_eq!(back, recs);
        assert_eq!(read_jsonl_log(&dir.path().join(JSONL_FILE)).unwrap(), recs);
    }

    #[test]
    fn missing_values_are_empty_cells() {
        let mut r = record(1);
        r.elr.remove("head");
        let dir = tempfile::tempdir().unwrap();
        emit_logs(dir.path(), &schema(), &[r.clone()]).unwrap();
        let (_, back) = read_csv_log(&dir.path().join(CSV_FILE)).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn unknown_record_keys_are_rejected() {
        let mut r = record(1);
        r.delta_a.insert("ghost".into(), 0.0);
        assert!(matches!(schema().row(&r), Err(Error::Contract(_))));
    }

    #[test]
    fn malformed_logs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CSV_FILE);
        std::fs::write(&path, "step,loss\n1,2\n").unwrap();
        assert!(matches!(read_csv_log(&path), Err(Error::Format { .. })));

        emit_logs(dir.path(), &schema(), &[record(0)]).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("5,abc\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_csv_log(&path), Err(Error::CorruptRecord { index: 1, .. })));
        assert!(matches!(read_csv_log(&dir.path().join("absent.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn header_order_is_fixed() {
        let h = schema().header().join(",");
        assert_eq!(
            h,
            "step,train_loss,train_acc,test_loss,test_acc,lr,dead_units,attention_rank,rewarm,\
             elr/head,elr/hidden0,norm/head,norm/hidden0,norm/hidden0.scale,\
             update/head,update/hidden0,update/hidden0.scale,delta_c/hidden0,delta_a/hidden0"
        );
        let mut shuffled = schema().header();
        shuffled.swap(0, 1);
        assert!(LogSchema::from_header(&shuffled).is_err());
    }
}
