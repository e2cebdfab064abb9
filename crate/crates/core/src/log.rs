//! CSV rendering of step logs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::PortId;
use crate::engine::{StepLog, StepSink};
use crate::value::Value;

/// Reals with nine decimals, booleans as `1`/`0`.
pub fn format_value(v: &Value) -> String {
    match v {
        Value::Real(r) => format!("{r:.9}"),
        Value::Integer(i) => i.to_string(),
        Value::Boolean(b) => if *b { "1" } else { "0" }.to_string(),
        Value::String(s) => s.clone(),
    }
}

enum Column {
    Port(PortId),
    Latch(String),
}

/// Writes a header once, then one row per step. Columns absent from a step
/// are left empty.
pub struct CsvLog<W: Write> {
    writer: csv::Writer<W>,
    columns: Vec<Column>,
}

impl<W: Write> CsvLog<W> {
    /// `columns` excludes the leading `time` column.
    pub fn new(inner: W, columns: &[String]) -> io::Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(inner);
        writer.write_record(std::iter::once("time").chain(columns.iter().map(String::as_str)))?;
        let columns = columns
            .iter()
            .map(|c| match c.parse::<PortId>() {
                Ok(p) => Column::Port(p),
                Err(_) => Column::Latch(c.clone()),
            })
            .collect();
        Ok(CsvLog { writer, columns })
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.writer.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> StepSink for CsvLog<W> {
    fn record(&mut self, log: &StepLog) -> io::Result<()> {
        let mut row = Vec::with_capacity(self.columns.len() + 1);
        row.push(format!("{:.9}", log.time));
        for c in &self.columns {
            row.push(match c {
                Column::Port(p) => log.values.get(p).map(format_value).unwrap_or_default(),
                Column::Latch(name) => log
                    .latches
                    .get(name)
                    .map(|&b| if b { "1" } else { "0" }.to_string())
                    .unwrap_or_default(),
            });
        }
        self.writer.write_record(&row)?;
        Ok(())
    }
}

/// Path of segment `generation` for output `base`: the base path itself for
/// the first segment, `<base>.seg<n>.csv` afterwards.
pub fn segment_path(base: &Path, generation: u32) -> PathBuf {
    if generation == 0 {
        base.to_path_buf()
    } else {
        PathBuf::from(format!("{}.seg{}.csv", base.display(), generation + 1))
    }
}

/// Starts a new file, with its own header, whenever the configuration
/// generation changes. Used when later column sets are not known up front.
pub struct SegmentedCsv {
    base: PathBuf,
    current: Option<(u32, CsvLog<BufWriter<File>>)>,
    written: Vec<PathBuf>,
}

impl SegmentedCsv {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        SegmentedCsv {
            base: base.into(),
            current: None,
            written: Vec::new(),
        }
    }

    pub fn segments(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn finish(&mut self) -> io::Result<()> {
        if let Some((_, log)) = &mut self.current {
            log.flush()?;
        }
        Ok(())
    }
}

impl StepSink for SegmentedCsv {
    fn record(&mut self, log: &StepLog) -> io::Result<()> {
        if self.current.as_ref().map(|(g, _)| *g) != Some(log.generation) {
            self.finish()?;
            let path = segment_path(&self.base, log.generation);
            let mut columns: Vec<String> = log.values.keys().map(|p| p.to_string()).collect();
            columns.extend(log.latches.keys().cloned());
            let file = BufWriter::new(File::create(&path)?);
            self.current = Some((log.generation, CsvLog::new(file, &columns)?));
            self.written.push(path);
        }
        self.current.as_mut().expect("segment open").1.record(log)
    }
}
