//! File formats for transactions, serialized corpora and vocabularies.

use std::io::{BufRead, Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{Basket, ItemIdx, ItemVocab, SplitCorpus, Transaction, UserRecord};
use crate::error::{Error, Result};

/// Where a basket's chronological position comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSource {
    /// ISO-8601 timestamp column.
    Timestamp(String),
    /// Integer order column.
    BasketOrder(String),
    /// Use whichever of `timestamp` or `basket_order` is present; exactly one
    /// must be.
    Detect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub user_id: String,
    pub basket_id: String,
    pub item_id: String,
    pub order: OrderSource,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            user_id: "user_id".into(),
            basket_id: "basket_id".into(),
            item_id: "item_id".into(),
            order: OrderSource::Detect,
        }
    }
}

enum OrderColumn {
    Timestamp(usize),
    Integer(usize),
}

/// Reads a transaction CSV with a header row. Row numbers in errors count
/// the header as row 1.
pub fn read_transactions_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Vec<Transaction>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let user_col = find(&columns.user_id)?;
    let basket_col = find(&columns.basket_id)?;
    let item_col = find(&columns.item_id)?;
    let order_col = match &columns.order {
        OrderSource::Timestamp(name) => OrderColumn::Timestamp(find(name)?),
        OrderSource::BasketOrder(name) => OrderColumn::Integer(find(name)?),
        OrderSource::Detect => match (find("timestamp").ok(), find("basket_order").ok()) {
            (Some(t), None) => OrderColumn::Timestamp(t),
            (None, Some(o)) => OrderColumn::Integer(o),
            (None, None) => return Err(Error::MissingColumn("timestamp or basket_order".into())),
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "both `timestamp` and `basket_order` columns present; choose one explicitly".into(),
                ))
            }
        },
    };

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let field = |col: usize, name: &str| -> Result<String> {
            match record.get(col).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v.to_owned()),
                _ => Err(Error::MalformedRow {
                    row,
                    message: format!("empty or missing `{name}`"),
                }),
            }
        };
        let user_id = field(user_col, &columns.user_id)?;
        let basket_id = field(basket_col, &columns.basket_id)?;
        let item_id = field(item_col, &columns.item_id)?;
        let basket_order = match order_col {
            OrderColumn::Integer(col) => {
                let raw = field(col, "basket_order")?;
                raw.parse::<i64>().map_err(|_| Error::MalformedRow {
                    row,
                    message: format!("basket_order `{raw}` is not an integer"),
                })?
            }
            OrderColumn::Timestamp(col) => {
                let raw = field(col, "timestamp")?;
                parse_timestamp(&raw).ok_or_else(|| Error::MalformedRow {
                    row,
                    message: format!("timestamp `{raw}` is not ISO-8601"),
                })?
            }
        };
        out.push(Transaction {
            user_id,
            basket_id,
            basket_order,
            item_id,
        });
    }
    Ok(out)
}

/// Parses an ISO-8601 date or date-time into microseconds since the epoch.
/// Date-times without an offset are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp_micros());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp_micros());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_micros())
}

/// Writes transactions with an explicit `basket_order` column.
pub fn write_transactions_csv<W: Write>(writer: W, rows: &[Transaction]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["user_id", "basket_id", "basket_order", "item_id"])?;
    for row in rows {
        wtr.write_record([
            row.user_id.as_str(),
            row.basket_id.as_str(),
            &row.basket_order.to_string(),
            row.item_id.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct UserLine {
    user_id: String,
    history: Vec<Vec<ItemIdx>>,
    test: Vec<ItemIdx>,
}

/// One JSON object per user: `{"user_id", "history", "test"}`.
pub fn write_corpus_ndjson<W: Write>(mut writer: W, corpus: &SplitCorpus) -> Result<()> {
    for user in &corpus.users {
        let line = UserLine {
            user_id: user.user_id.clone(),
            history: user.history.iter().map(|b| b.items().to_vec()).collect(),
            test: user.test_basket.items().to_vec(),
        };
        serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_corpus_ndjson<R: BufRead>(reader: R, vocab: ItemVocab) -> Result<SplitCorpus> {
    let n_items = vocab.len();
    let mut users = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            line: line_no,
            message,
        };
        let parsed: UserLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let to_basket = |items: Vec<ItemIdx>| -> Result<Basket> {
            if items.is_empty() {
                return Err(malformed("empty basket".into()));
            }
            if let Some(&bad) = items.iter().find(|&&i| i as usize >= n_items) {
                return Err(malformed(format!("item index {bad} out of range for {n_items} items")));
            }
            Ok(Basket::new(items))
        };
        let history = parsed.history.into_iter().map(to_basket).collect::<Result<Vec<_>>>()?;
        if history.is_empty() {
            return Err(malformed("empty history".into()));
        }
        users.push(UserRecord {
            user_id: parsed.user_id,
            history,
            test_basket: to_basket(parsed.test)?,
        });
    }
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    if let Some(w) = users.windows(2).find(|w| w[0].user_id == w[1].user_id) {
        return Err(Error::DuplicateUser(w[0].user_id.clone()));
    }
    Ok(SplitCorpus { vocab, users })
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    n_items: usize,
    /// Item id at each dense index.
    items: Vec<String>,
}

pub fn write_vocab_json<W: Write>(writer: W, vocab: &ItemVocab) -> Result<()> {
    let file = VocabFile {
        n_items: vocab.len(),
        items: vocab.ids().to_vec(),
    };
    serde_json::to_writer_pretty(writer, &file).map_err(std::io::Error::from)?;
    Ok(())
}

pub fn read_vocab_json<R: Read>(reader: R) -> Result<ItemVocab> {
    let file: VocabFile = serde_json::from_reader(reader).map_err(|e| Error::MalformedLine {
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.items.len() != file.n_items {
        return Err(Error::InvalidConfig(format!(
            "vocab declares {} items but lists {}",
            file.n_items,
            file.items.len()
        )));
    }
    let vocab = ItemVocab::from_ids(file.items.iter().cloned());
    if vocab.ids() != file.items.as_slice() {
        return Err(Error::InvalidConfig(
            "vocab items must be unique and in lexicographic order".into(),
        ));
    }
    Ok(vocab)
}
