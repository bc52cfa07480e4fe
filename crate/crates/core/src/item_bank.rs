//! Items, participants and response logs, with ingestion from CSV / JSONL
//! and the guesser filter.
//!
//! A bank is immutable once built; filters return new banks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Participants whose median response time falls strictly below this are
/// treated as random guessers.
pub const GUESSER_THRESHOLD_MS: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Lab,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    /// Picks the format from the file extension (`.jsonl` / `.json` vs
    /// anything else).
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => FileFormat::Jsonl,
            _ => FileFormat::Csv,
        }
    }
}

/// Number of whitespace-separated tokens; punctuation stays attached.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub text: String,
    pub truth: bool,
    pub source: Source,
    pub word_count: usize,
    pub embedding: Option<Vec<f64>>,
}

impl Item {
    pub fn new(id: impl Into<String>, text: impl Into<String>, truth: bool, source: Source) -> Result<Item> {
        let id = id.into();
        let text = text.into();
        let wc = word_count(&text);
        if wc == 0 {
            return Err(Error::invalid(format!("item `{id}` has empty text")));
        }
        Ok(Item {
            id,
            text,
            truth,
            source,
            word_count: wc,
            embedding: None,
        })
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Item {
        self.embedding = Some(embedding);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant_id: String,
    pub item_id: String,
    pub response: bool,
    pub correct: bool,
    pub rt_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantProfile {
    pub id: String,
    pub grade: Option<i32>,
    pub records: Vec<ResponseRecord>,
}

/// Median response time of one participant.
pub fn participant_median_rt(profile: &ParticipantProfile) -> Result<f64> {
    let rts: Vec<f64> = profile.records.iter().map(|r| r.rt_ms).collect();
    stats::median(&rts)
        .ok_or_else(|| Error::InsufficientData(format!("participant `{}` has no records", profile.id)))
}

/// One raw response row before correctness is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub participant_id: String,
    pub item_id: String,
    pub response: bool,
    pub rt_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<i32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemBank {
    items: BTreeMap<String, Item>,
    participants: BTreeMap<String, ParticipantProfile>,
}

impl ItemBank {
    pub fn from_items(items: impl IntoIterator<Item = Item>) -> Result<ItemBank> {
        let mut map = BTreeMap::new();
        for item in items {
            if item.word_count == 0 || item.word_count != word_count(&item.text) {
                return Err(Error::invalid(format!("item `{}` has inconsistent word count", item.id)));
            }
            if map.contains_key(&item.id) {
                return Err(Error::DuplicateId(item.id));
            }
            map.insert(item.id.clone(), item);
        }
        Ok(ItemBank {
            items: map,
            participants: BTreeMap::new(),
        })
    }

    /// Adds response rows, deriving correctness from the item truth value.
    /// Rows are grouped per participant in the order given.
    pub fn with_responses(mut self, rows: impl IntoIterator<Item = ResponseRow>) -> Result<ItemBank> {
        for (idx, row) in rows.into_iter().enumerate() {
            let record = self.make_record(&row, idx + 1)?;
            let profile = self
                .participants
                .entry(row.participant_id.clone())
                .or_insert_with(|| ParticipantProfile {
                    id: row.participant_id.clone(),
                    grade: None,
                    records: Vec::new(),
                });
            if profile.grade.is_none() {
                profile.grade = row.grade;
            }
            profile.records.push(record);
        }
        Ok(self)
    }

    fn make_record(&self, row: &ResponseRow, line: usize) -> Result<ResponseRecord> {
        let item = self.items.get(&row.item_id).ok_or_else(|| Error::UnknownItem {
            item_id: row.item_id.clone(),
            line,
        })?;
        if !(row.rt_ms > 0.0) || !row.rt_ms.is_finite() {
            return Err(Error::invalid(format!(
                "line {line}: rt_ms must be positive, got {}",
                row.rt_ms
            )));
        }
        Ok(ResponseRecord {
            participant_id: row.participant_id.clone(),
            item_id: row.item_id.clone(),
            response: row.response,
            correct: row.response == item.truth,
            rt_ms: row.rt_ms,
        })
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn items_from(&self, source: Source) -> impl Iterator<Item = &Item> {
        self.items.values().filter(move |i| i.source == source)
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Participants in id order.
    pub fn participants(&self) -> impl Iterator<Item = &ParticipantProfile> {
        self.participants.values()
    }

    pub fn participant(&self, id: &str) -> Option<&ParticipantProfile> {
        self.participants.get(id)
    }

    pub fn n_participants(&self) -> usize {
        self.participants.len()
    }

    pub fn n_records(&self) -> usize {
        self.participants.values().map(|p| p.records.len()).sum()
    }

    /// Every response time in the bank, pooled across participants.
    pub fn all_rts(&self) -> Vec<f64> {
        self.participants
            .values()
            .flat_map(|p| p.records.iter().map(|r| r.rt_ms))
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &ResponseRecord> {
        self.participants.values().flat_map(|p| p.records.iter())
    }

    /// Attaches embeddings by item id; ids not in the bank are an error.
    pub fn attach_embeddings(&mut self, embeddings: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<()> {
        for (id, e) in embeddings {
            let item = self.items.get_mut(&id).ok_or(Error::UnknownItem { item_id: id, line: 0 })?;
            item.embedding = Some(e);
        }
        Ok(())
    }

    fn filtered_participants(&self, keep: impl Fn(&ParticipantProfile) -> bool) -> ItemBank {
        ItemBank {
            items: self.items.clone(),
            participants: self
                .participants
                .iter()
                .filter(|(_, p)| keep(p))
                .map(|(k, p)| (k.clone(), p.clone()))
                .collect(),
        }
    }
}

/// Removes participants whose median response time is strictly below
/// `threshold_ms`. A participant at exactly the threshold is kept.
pub fn filter_guessers(bank: &ItemBank, threshold_ms: f64) -> ItemBank {
    bank.filtered_participants(|p| match participant_median_rt(p) {
        Ok(m) => m >= threshold_ms,
        Err(_) => false,
    })
}

#[derive(Debug, Deserialize, Serialize)]
struct ItemCsvRow {
    id: String,
    text: String,
    truth: bool,
    source: Source,
    #[serde(default)]
    embedding: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ItemJsonRow {
    id: String,
    text: String,
    truth: bool,
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

fn parse_embedding_list(s: &str) -> std::result::Result<Option<Vec<f64>>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.split(';')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("embedding value `{t}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Some)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Reads `(line, row)` pairs from a CSV (header row required) or JSONL file.
fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, format: FileFormat) -> Result<Vec<(usize, T)>> {
    let file = open(path)?;
    let mut out = Vec::new();
    match format {
        FileFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let headers = match rdr.headers() {
                Ok(h) => h.clone(),
                Err(e) => return Err(csv_error(path, 1, e)),
            };
            for rec in rdr.records() {
                let rec = rec.map_err(|e| csv_error(path, 0, e))?;
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
                let row: T = rec.deserialize(Some(&headers)).map_err(|e| csv_error(path, line, e))?;
                out.push((line, row));
            }
        }
        FileFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                out.push((idx + 1, row));
            }
        }
    }
    Ok(out)
}

/// Loads an items file into a bank without participants.
pub fn load_items(path: &Path, format: FileFormat) -> Result<ItemBank> {
    let mut items = Vec::new();
    match format {
        FileFormat::Csv => {
            for (line, row) in read_rows::<ItemCsvRow>(path, format)? {
                let embedding = parse_embedding_list(row.embedding.as_deref().unwrap_or(""))
                    .map_err(|message| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message,
                    })?;
                items.push((line, row.id, row.text, row.truth, row.source, embedding));
            }
        }
        FileFormat::Jsonl => {
            for (line, row) in read_rows::<ItemJsonRow>(path, format)? {
                items.push((line, row.id, row.text, row.truth, row.source, row.embedding));
            }
        }
    }
    let mut built = Vec::with_capacity(items.len());
    for (line, id, text, truth, source, embedding) in items {
        let mut item = Item::new(id, text, truth, source).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        item.embedding = embedding;
        built.push(item);
    }
    ItemBank::from_items(built)
}

/// Loads a responses file against the items already in `bank` and returns
/// the bank extended with the participants.
pub fn load_responses(bank: &ItemBank, path: &Path, format: FileFormat) -> Result<ItemBank> {
    let rows = read_rows::<ResponseRow>(path, format)?;
    let mut out = bank.clone();
    for (line, row) in rows {
        let record = out.make_record(&row, line).map_err(|e| match e {
            Error::UnknownItem { item_id, .. } => Error::UnknownItem { item_id, line },
            other => Error::Parse {
                path: path.to_path_buf(),
                line,
                message: other.to_string(),
            },
        })?;
        let profile = out
            .participants
            .entry(row.participant_id.clone())
            .or_insert_with(|| ParticipantProfile {
                id: row.participant_id.clone(),
                grade: None,
                records: Vec::new(),
            });
        if profile.grade.is_none() {
            profile.grade = row.grade;
        }
        profile.records.push(record);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, 0, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_items<'a>(path: &Path, format: FileFormat, items: impl IntoIterator<Item = &'a Item>) -> Result<()> {
    match format {
        FileFormat::Csv => write_csv(
            path,
            items.into_iter().map(|i| ItemCsvRow {
                id: i.id.clone(),
                text: i.text.clone(),
                truth: i.truth,
                source: i.source,
                embedding: i.embedding.as_deref().map(join_embedding),
            }),
        ),
        FileFormat::Jsonl => write_jsonl(
            path,
            items.into_iter().map(|i| ItemJsonRow {
                id: i.id.clone(),
                text: i.text.clone(),
                truth: i.truth,
                source: i.source,
                embedding: i.embedding.clone(),
            }),
        ),
    }
}

pub fn write_responses(path: &Path, format: FileFormat, rows: &[ResponseRow]) -> Result<()> {
    match format {
        FileFormat::Csv => write_csv(path, rows.iter()),
        FileFormat::Jsonl => write_jsonl(path, rows.iter()),
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct EmbeddingCsvRow {
    item_id: String,
    embedding: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct EmbeddingJsonRow {
    item_id: String,
    embedding: Vec<f64>,
}

fn join_embedding(e: &[f64]) -> String {
    e.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Reads an embeddings file: `item_id,embedding` with `;`-separated values
/// (CSV) or `{"item_id", "embedding": [..]}` objects (JSONL).
pub fn load_embeddings(path: &Path, format: FileFormat) -> Result<Vec<(String, Vec<f64>)>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    match format {
        FileFormat::Csv => read_rows::<EmbeddingCsvRow>(path, format)?
            .into_iter()
            .map(|(line, row)| match parse_embedding_list(&row.embedding) {
                Ok(Some(e)) => Ok((row.item_id, e)),
                Ok(None) => Err(parse_err(line, format!("item `{}` has an empty embedding", row.item_id))),
                Err(message) => Err(parse_err(line, message)),
            })
            .collect(),
        FileFormat::Jsonl => read_rows::<EmbeddingJsonRow>(path, format)?
            .into_iter()
            .map(|(line, row)| {
                if row.embedding.is_empty() {
                    return Err(parse_err(line, format!("item `{}` has an empty embedding", row.item_id)));
                }
                Ok((row.item_id, row.embedding))
            })
            .collect(),
    }
}

pub fn write_embeddings<'a>(
    path: &Path,
    format: FileFormat,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    match format {
        FileFormat::Csv => write_csv(
            path,
            rows.into_iter().map(|(id, e)| EmbeddingCsvRow {
                item_id: id.to_string(),
                embedding: join_embedding(e),
            }),
        ),
        FileFormat::Jsonl => write_jsonl(
            path,
            rows.into_iter().map(|(id, e)| EmbeddingJsonRow {
                item_id: id.to_string(),
                embedding: e.to_vec(),
            }),
        ),
    }
}
