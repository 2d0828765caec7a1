//! Decoded CAN signal logs: parsing, catalog construction and splitting.
//!
//! Two on-disk layouts are understood. The canonical layout carries one
//! column per tracked signal; the SynCAN layout carries up to four signal
//! slots per row that are mapped onto global signal indices through a
//! [`SyncanLayout`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while reading or organising signal logs.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header does not match the {format} layout: {found}")]
    BadHeader { format: LogFormat, found: String },
    #[error("line {line}: message id `{msg_id}` changed its signal set")]
    InconsistentId { line: u64, msg_id: String },
    #[error("message id `{0}` is not part of the SynCAN layout")]
    UnknownId(String),
    #[error("record stream is empty")]
    EmptyStream,
    #[error("expected {declared} signals, found {found}")]
    CardinalityMismatch { declared: usize, found: usize },
    #[error("signal indices overlap or leave gaps: {0}")]
    BadPartition(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("attack-labelled record at index {index} falls in the {split} split")]
    AttackInTraining { index: usize, split: &'static str },
}

/// Ground-truth label of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Label {
    #[default]
    Normal,
    Attack,
}

impl Label {
    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }

    fn as_digit(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Attack => 1,
        }
    }
}

/// One decoded CAN message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    /// Seconds since the start of the capture.
    pub time: f64,
    pub msg_id: String,
    /// `(signal_index, value)` pairs for the signals this message carries.
    pub values: Vec<(usize, f64)>,
    pub label: Label,
}

/// Supported log layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    SyncanCsv,
    CanonicalCsv,
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogFormat::SyncanCsv => "syncan_csv",
            LogFormat::CanonicalCsv => "canonical_csv",
        })
    }
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "syncan_csv" | "syncan" => Ok(LogFormat::SyncanCsv),
            "canonical_csv" | "canonical" => Ok(LogFormat::CanonicalCsv),
            other => Err(format!("unknown log format `{other}`")),
        }
    }
}

/// A row that could not be parsed and was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    /// 1-based line number in the source file.
    pub line: u64,
    pub reason: String,
}

const SYNCAN_HEADER: [&str; 7] = [
    "Label",
    "Time",
    "ID",
    "Signal1_of_ID",
    "Signal2_of_ID",
    "Signal3_of_ID",
    "Signal4_of_ID",
];

/// Mapping from SynCAN message ids to global signal indices.
///
/// Signal slot `k` of id `id` maps to `offsets[id] + k`. Ids are ordered
/// naturally (`id2` before `id10`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncanLayout {
    ids: Vec<(String, usize)>,
}

impl SyncanLayout {
    /// Builds a layout from `(msg_id, signal_count)` pairs.
    pub fn new(mut ids: Vec<(String, usize)>) -> Self {
        ids.sort_by(|a, b| natural_cmp(&a.0, &b.0));
        Self { ids }
    }

    /// The published SynCAN layout: ten ids carrying twenty signals.
    pub fn standard() -> Self {
        let counts = [2, 3, 2, 1, 2, 2, 2, 1, 1, 4];
        Self::new(
            counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("id{}", i + 1), c))
                .collect(),
        )
    }

    /// Infers the layout from a file by counting the populated slots of each id.
    pub fn scan(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let mut reader = csv_reader(File::open(path)?);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for row in reader.records() {
            let Ok(row) = row else { continue };
            if row.len() != SYNCAN_HEADER.len() {
                continue;
            }
            let used = (3..7).filter(|&c| !row[c].trim().is_empty()).count();
            let entry = counts.entry(row[2].trim().to_string()).or_default();
            *entry = (*entry).max(used);
        }
        Ok(Self::new(counts.into_iter().collect()))
    }

    pub fn signal_count(&self) -> usize {
        self.ids.iter().map(|(_, c)| c).sum()
    }

    /// Global indices of `msg_id`'s slots.
    pub fn indices(&self, msg_id: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for (id, count) in &self.ids {
            if id == msg_id {
                return Some(offset..offset + count);
            }
            offset += count;
        }
        None
    }

    pub fn signal_names(&self) -> Vec<String> {
        self.ids
            .iter()
            .flat_map(|(id, count)| (1..=*count).map(move |k| format!("{id}_s{k}")))
            .collect()
    }
}

/// Orders strings so that embedded numbers compare numerically.
pub fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let digits = s.len() - s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (head, tail) = s.split_at(s.len() - digits);
        (head, tail.parse().ok())
    }
    let (ha, na) = split(a);
    let (hb, nb) = split(b);
    ha.cmp(hb).then(na.cmp(&nb)).then(a.cmp(b))
}

fn csv_reader<R: Read>(inner: R) -> csv::Reader<BufReader<R>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(inner))
}

/// Streaming reader over a decoded signal log.
///
/// Malformed rows are skipped and collected in [`LogReader::malformed`]; an
/// id that changes its signal set ends the stream with an error.
pub struct LogReader<R: Read> {
    rows: csv::StringRecordsIntoIter<BufReader<R>>,
    format: LogFormat,
    layout: Option<SyncanLayout>,
    signal_names: Vec<String>,
    id_signals: HashMap<String, Vec<usize>>,
    malformed: Vec<MalformedRow>,
    failed: bool,
}

impl LogReader<File> {
    /// Opens a canonical log, or a SynCAN log whose layout is inferred from the file.
    pub fn open(path: impl AsRef<Path>, format: LogFormat) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let layout = match format {
            LogFormat::SyncanCsv => Some(SyncanLayout::scan(path)?),
            LogFormat::CanonicalCsv => None,
        };
        Self::new(File::open(path)?, format, layout)
    }
}

impl<R: Read> LogReader<R> {
    /// Wraps an arbitrary reader. `layout` is required for SynCAN input and
    /// defaults to [`SyncanLayout::standard`] when absent.
    pub fn new(inner: R, format: LogFormat, layout: Option<SyncanLayout>) -> Result<Self, IngestError> {
        let mut reader = csv_reader(inner);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let (layout, signal_names) = match format {
            LogFormat::SyncanCsv => {
                if header.iter().map(String::as_str).ne(SYNCAN_HEADER) {
                    return Err(IngestError::BadHeader { format, found: header.join(",") });
                }
                let layout = layout.unwrap_or_else(SyncanLayout::standard);
                let names = layout.signal_names();
                (Some(layout), names)
            }
            LogFormat::CanonicalCsv => {
                if header.len() < 4 || header[0] != "time" || header[1] != "msg_id" || header[2] != "label" {
                    return Err(IngestError::BadHeader { format, found: header.join(",") });
                }
                (None, header[3..].to_vec())
            }
        };
        Ok(Self {
            rows: reader.into_records(),
            format,
            layout,
            signal_names,
            id_signals: HashMap::new(),
            malformed: Vec::new(),
            failed: false,
        })
    }

    pub fn signal_names(&self) -> &[String] {
        &self.signal_names
    }

    /// Rows skipped so far.
    pub fn malformed(&self) -> &[MalformedRow] {
        &self.malformed
    }

    fn parse_row(&self, row: &csv::StringRecord) -> Result<SignalRecord, String> {
        match self.format {
            LogFormat::CanonicalCsv => {
                let expected = 3 + self.signal_names.len();
                if row.len() != expected {
                    return Err(format!("expected {expected} columns, found {}", row.len()));
                }
                let time = parse_f64(&row[0], "time")?;
                let label = parse_label(&row[2])?;
                let mut values = Vec::new();
                for (k, cell) in row.iter().skip(3).enumerate() {
                    if !cell.is_empty() {
                        values.push((k, parse_f64(cell, "signal")?));
                    }
                }
                Ok(SignalRecord { time, msg_id: row[1].to_string(), values, label })
            }
            LogFormat::SyncanCsv => {
                if row.len() != SYNCAN_HEADER.len() {
                    return Err(format!("expected 7 columns, found {}", row.len()));
                }
                let label = parse_label(&row[0])?;
                let time = parse_f64(&row[1], "time")? / 1000.0;
                let msg_id = row[2].to_string();
                let slots = self
                    .layout
                    .as_ref()
                    .and_then(|l| l.indices(&msg_id))
                    .ok_or_else(|| format!("unknown message id `{msg_id}`"))?;
                let mut values = Vec::new();
                for (slot, cell) in row.iter().skip(3).enumerate() {
                    if cell.is_empty() {
                        continue;
                    }
                    if slot >= slots.len() {
                        return Err(format!("id `{msg_id}` has no signal slot {}", slot + 1));
                    }
                    values.push((slots.start + slot, parse_f64(cell, "signal")?));
                }
                Ok(SignalRecord { time, msg_id, values, label })
            }
        }
    }
}

fn parse_f64(cell: &str, what: &str) -> Result<f64, String> {
    let v: f64 = cell.parse().map_err(|_| format!("non-numeric {what} `{cell}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what} `{cell}`"))
    }
}

fn parse_label(cell: &str) -> Result<Label, String> {
    match cell {
        "0" | "" => Ok(Label::Normal),
        "1" => Ok(Label::Attack),
        other => Err(format!("invalid label `{other}`")),
    }
}

impl<R: Read> Iterator for LogReader<R> {
    type Item = Result<SignalRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let row = match self.rows.next()? {
                Ok(row) => row,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    self.malformed.push(MalformedRow { line, reason: e.to_string() });
                    continue;
                }
            };
            let line = row.position().map_or(0, |p| p.line());
            let record = match self.parse_row(&row) {
                Ok(r) => r,
                Err(reason) => {
                    self.malformed.push(MalformedRow { line, reason });
                    continue;
                }
            };
            // The first row of an id fixes its signal set; later rows may omit
            // cells but never add new ones.
            let indices: Vec<usize> = record.values.iter().map(|&(i, _)| i).collect();
            match self.id_signals.get(&record.msg_id) {
                Some(known) => {
                    if indices.iter().any(|i| !known.contains(i)) {
                        self.failed = true;
                        return Some(Err(IngestError::InconsistentId { line, msg_id: record.msg_id }));
                    }
                }
                None => {
                    self.id_signals.insert(record.msg_id.clone(), indices);
                }
            }
            return Some(Ok(record));
        }
    }
}

/// A fully parsed log.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<SignalRecord>,
    pub signal_names: Vec<String>,
    pub malformed: Vec<MalformedRow>,
}

/// Reads a whole log into memory.
pub fn parse_log(path: impl AsRef<Path>, format: LogFormat) -> Result<ParsedLog, IngestError> {
    let mut reader = LogReader::open(path, format)?;
    collect(&mut reader)
}

/// Reads a whole log from any reader.
pub fn parse_reader<R: Read>(
    inner: R,
    format: LogFormat,
    layout: Option<SyncanLayout>,
) -> Result<ParsedLog, IngestError> {
    let mut reader = LogReader::new(inner, format, layout)?;
    collect(&mut reader)
}

fn collect<R: Read>(reader: &mut LogReader<R>) -> Result<ParsedLog, IngestError> {
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(ParsedLog {
        records,
        signal_names: reader.signal_names().to_vec(),
        malformed: reader.malformed().to_vec(),
    })
}

/// Writes records in the canonical layout. Floats use shortest round-trip
/// formatting so re-parsing reproduces them bit for bit.
pub fn write_canonical<W: Write>(
    out: W,
    signal_names: &[String],
    records: &[SignalRecord],
) -> Result<(), IngestError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["time".to_string(), "msg_id".to_string(), "label".to_string()];
    header.extend(signal_names.iter().cloned());
    writer.write_record(&header)?;
    let m = signal_names.len();
    let mut row = vec![String::new(); 3 + m];
    for record in records {
        row.iter_mut().for_each(String::clear);
        row[0] = format!("{}", record.time);
        row[1].push_str(&record.msg_id);
        row[2] = record.label.as_digit().to_string();
        for &(i, v) in &record.values {
            row[3 + i] = format!("{v}");
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_canonical_file(
    path: impl AsRef<Path>,
    signal_names: &[String],
    records: &[SignalRecord],
) -> Result<(), IngestError> {
    let file = std::io::BufWriter::new(File::create(path)?);
    write_canonical(file, signal_names, records)
}

/// Tracked signals and the ids that carry them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalCatalog {
    pub m: usize,
    /// Sorted by message id.
    pub id_to_signals: BTreeMap<String, Vec<usize>>,
    pub signal_names: Vec<String>,
    /// Per-signal `(min, max)` over the stream the catalog was built from.
    pub value_range: Vec<(f64, f64)>,
    /// Signals whose observed range is a single value.
    pub constant: Vec<bool>,
}

impl SignalCatalog {
    pub fn with_names(mut self, names: &[String]) -> Self {
        if names.len() == self.m {
            self.signal_names = names.to_vec();
        }
        self
    }
}

/// Scans a record stream and derives the signal catalog.
pub fn build_catalog<'a, I>(records: I, declared_m: usize) -> Result<SignalCatalog, IngestError>
where
    I: IntoIterator<Item = &'a SignalRecord>,
{
    let mut id_to_signals: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut ranges: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut seen_any = false;
    for record in records {
        seen_any = true;
        let entry = id_to_signals.entry(record.msg_id.clone()).or_default();
        for &(i, v) in &record.values {
            if !entry.contains(&i) {
                entry.push(i);
            }
            let r = ranges.entry(i).or_insert((v, v));
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    if !seen_any {
        return Err(IngestError::EmptyStream);
    }
    for signals in id_to_signals.values_mut() {
        signals.sort_unstable();
    }
    let found = ranges.len();
    if found != declared_m {
        return Err(IngestError::CardinalityMismatch { declared: declared_m, found });
    }
    let mut owner = vec![None::<&str>; declared_m];
    for (id, signals) in &id_to_signals {
        for &i in signals {
            match owner.get_mut(i) {
                None => return Err(IngestError::BadPartition(format!("signal {i} outside [0, {declared_m})"))),
                Some(Some(other)) => {
                    return Err(IngestError::BadPartition(format!("signal {i} carried by `{other}` and `{id}`")))
                }
                Some(slot) => *slot = Some(id),
            }
        }
    }
    let value_range: Vec<(f64, f64)> = ranges.into_values().collect();
    let constant = value_range.iter().map(|(lo, hi)| lo >= hi).collect();
    Ok(SignalCatalog {
        m: declared_m,
        id_to_signals,
        signal_names: (0..declared_m).map(|i| format!("s{i}")).collect(),
        value_range,
        constant,
    })
}

/// Contiguous train / validation / test partitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<SignalRecord>,
    pub val: Vec<SignalRecord>,
    pub test: Vec<SignalRecord>,
}

/// Splits a record sequence by contiguous position, never shuffling.
///
/// Attack-labelled records in the train or validation partitions are rejected
/// unless `allow_attacks_in_training` is set.
pub fn split(
    records: Vec<SignalRecord>,
    fractions: (f64, f64, f64),
    allow_attacks_in_training: bool,
) -> Result<Splits, IngestError> {
    let (a, b, c) = fractions;
    let valid = [a, b, c].iter().all(|f| f.is_finite() && *f >= 0.0) && ((a + b + c) - 1.0).abs() < 1e-9;
    if !valid {
        return Err(IngestError::BadFractions(fractions));
    }
    let n = records.len();
    let train_end = ((a * n as f64).round() as usize).min(n);
    let val_end = (((a + b) * n as f64).round() as usize).clamp(train_end, n);
    if !allow_attacks_in_training {
        if let Some(index) = records[..val_end].iter().position(|r| r.label.is_attack()) {
            let split = if index < train_end { "train" } else { "validation" };
            return Err(IngestError::AttackInTraining { index, split });
        }
    }
    let mut records = records;
    let test = records.split_off(val_end);
    let val = records.split_off(train_end);
    Ok(Splits { train: records, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: f64, id: &str, values: &[(usize, f64)], label: Label) -> SignalRecord {
        SignalRecord { time, msg_id: id.into(), values: values.to_vec(), label }
    }

    #[test]
    fn syncan_row_maps_slots_to_catalog_indices() {
        let text = "Label,Time,ID,Signal1_of_ID,Signal2_of_ID,Signal3_of_ID,Signal4_of_ID\n0,1000,id5,0.5,0.25,,\n";
        let log = parse_reader(text.as_bytes(), LogFormat::SyncanCsv, None).unwrap();
        assert!(log.malformed.is_empty());
        let layout = SyncanLayout::standard();
        let slots = layout.indices("id5").unwrap();
        assert_eq!(slots.len(), 2);
        assert_eq!(
            log.records,
            vec![rec(1.0, "id5", &[(slots.start, 0.5), (slots.start + 1, 0.25)], Label::Normal)]
        );
    }

    #[test]
    fn standard_layout_has_twenty_signals() {
        let layout = SyncanLayout::standard();
        assert_eq!(layout.signal_count(), 20);
        assert_eq!(layout.indices("id1"), Some(0..2));
        assert_eq!(layout.indices("id10"), Some(16..20));
        assert_eq!(layout.indices("id2"), Some(2..5));
    }

    #[test]
    fn empty_file_after_header_gives_empty_stream() {
        let text = "time,msg_id,label,s0,s1\n";
        let log = parse_reader(text.as_bytes(), LogFormat::CanonicalCsv, None).unwrap();
        assert!(log.records.is_empty());
        assert!(log.malformed.is_empty());
    }

    #[test]
    fn malformed_middle_row_is_skipped_and_reported() {
        let text = "time,msg_id,label,s0,s1\n0.0,a,0,0.1,\n0.1,a,0,abc,\n0.2,b,0,,0.3\n";
        let log = parse_reader(text.as_bytes(), LogFormat::CanonicalCsv, None).unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.malformed.len(), 1);
        assert_eq!(log.malformed[0].line, 3);
    }

    #[test]
    fn wrong_column_count_is_malformed() {
        let text = "time,msg_id,label,s0,s1\n0.0,a,0,0.1\n0.2,b,1,,0.3\n";
        let log = parse_reader(text.as_bytes(), LogFormat::CanonicalCsv, None).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].label, Label::Attack);
        assert_eq!(log.malformed.len(), 1);
    }

    #[test]
    fn id_changing_signal_set_is_fatal() {
        let text = "time,msg_id,label,s0,s1\n0.0,a,0,0.1,\n0.1,a,0,,0.2\n0.2,a,0,0.3,\n";
        let mut reader = LogReader::new(text.as_bytes(), LogFormat::CanonicalCsv, None).unwrap();
        assert!(reader.next().unwrap().is_ok());
        assert!(matches!(reader.next(), Some(Err(IngestError::InconsistentId { line: 3, .. }))));
        assert!(reader.next().is_none());
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let text = "Label,Time,ID\n";
        assert!(matches!(
            LogReader::new(text.as_bytes(), LogFormat::SyncanCsv, None),
            Err(IngestError::BadHeader { .. })
        ));
    }

    #[test]
    fn catalog_of_three_id_fixture() {
        let records = vec![
            rec(0.0, "b", &[(2, 0.4)], Label::Normal),
            rec(0.1, "a", &[(0, 1.0), (1, -2.0)], Label::Normal),
            rec(0.2, "c", &[(3, 7.0)], Label::Normal),
            rec(0.3, "a", &[(0, 3.0), (1, 5.0)], Label::Normal),
            rec(0.4, "b", &[(2, 0.1)], Label::Normal),
        ];
        let cat = build_catalog(&records, 4).unwrap();
        // brute-force min/max per signal
        for i in 0..4 {
            let vals: Vec<f64> =
                records.iter().flat_map(|r| r.values.iter()).filter(|(j, _)| *j == i).map(|&(_, v)| v).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(cat.value_range[i], (lo, hi));
        }
        assert_eq!(cat.id_to_signals.keys().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(cat.constant, vec![false, false, false, true]);
    }

    #[test]
    fn catalog_single_constant_signal() {
        let records = vec![rec(0.0, "x", &[(0, 2.0)], Label::Normal), rec(1.0, "x", &[(0, 2.0)], Label::Normal)];
        let cat = build_catalog(&records, 1).unwrap();
        assert_eq!(cat.m, 1);
        assert!(cat.constant[0]);
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(build_catalog(&[], 1), Err(IngestError::EmptyStream)));
        let records = vec![rec(0.0, "x", &[(0, 2.0)], Label::Normal)];
        assert!(matches!(build_catalog(&records, 2), Err(IngestError::CardinalityMismatch { declared: 2, found: 1 })));
        let shared = vec![rec(0.0, "x", &[(0, 2.0)], Label::Normal), rec(0.0, "y", &[(0, 2.0)], Label::Normal)];
        assert!(matches!(build_catalog(&shared, 1), Err(IngestError::BadPartition(_))));
    }

    #[test]
    fn catalog_is_independent_of_record_order() {
        let mut records = vec![
            rec(0.0, "b", &[(1, 0.4)], Label::Normal),
            rec(0.1, "a", &[(0, 1.0)], Label::Normal),
        ];
        let first = build_catalog(&records, 2).unwrap();
        records.reverse();
        assert_eq!(first, build_catalog(&records, 2).unwrap());
    }

    fn normal_records(n: usize) -> Vec<SignalRecord> {
        (0..n).map(|i| rec(i as f64, "a", &[(0, i as f64)], Label::Normal)).collect()
    }

    #[test]
    fn split_is_contiguous() {
        let s = split(normal_records(100), (0.8, 0.1, 0.1), false).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s.train.last().unwrap().time, 79.0);
        assert_eq!(s.val[0].time, 80.0);
        assert_eq!(s.test[0].time, 90.0);
    }

    #[test]
    fn split_identity() {
        let s = split(normal_records(17), (1.0, 0.0, 0.0), false).unwrap();
        assert_eq!(s.train.len(), 17);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_rejects_attacks_in_training() {
        let mut records = normal_records(100);
        records[40].label = Label::Attack;
        assert!(matches!(
            split(records.clone(), (0.8, 0.1, 0.1), false),
            Err(IngestError::AttackInTraining { index: 40, split: "train" })
        ));
        assert!(split(records, (0.8, 0.1, 0.1), true).is_ok());
        assert!(matches!(split(normal_records(3), (0.5, 0.1, 0.1), false), Err(IngestError::BadFractions(_))));
    }

    #[test]
    fn natural_ordering_of_ids() {
        let mut ids = vec!["id10", "id2", "id1", "abc"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, ["abc", "id1", "id2", "id10"]);
    }
}
