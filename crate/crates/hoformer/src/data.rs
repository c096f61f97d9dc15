//! Dataset handling: price bars, daily text embeddings, 5-day window
//! samples with movement-threshold labels, and contiguous temporal splits.
//!
//! External formats:
//!
//! - Price CSV: header `stock,date,adj_close,high,low`, ISO-8601 dates,
//!   UTF-8.
//! - Embedding file (binary, little-endian throughout): magic `HOEM`,
//!   `u32` version (1), `u32` record count, then one record per
//!   (stock, day): `u16` stock-id byte length, the UTF-8 bytes, date as
//!   days since 1970-01-01 (`i32`), then 768 `f32` values. The reader
//!   upcasts to `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::tensor::DenseTensor;

/// Feature width of the embedding file format.
pub const EMBEDDING_DIM: usize = 768;
const EMBEDDING_MAGIC: &[u8; 4] = b"HOEM";
const EMBEDDING_VERSION: u32 = 1;

pub const PRICE_CSV_HEADER: &str = "stock,date,adj_close,high,low";

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Io(String),
    Parse { line: usize, message: String },
    Format(String),
    Validation(String),
    Empty(&'static str),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "io error: {e}"),
            DataError::Parse { line, message } => write!(f, "line {line}: {message}"),
            DataError::Format(e) => write!(f, "format error: {e}"),
            DataError::Validation(e) => write!(f, "invalid data: {e}"),
            DataError::Empty(what) => write!(f, "empty {what}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

// ---------------------------------------------------------------------------
// Calendar dates
// ---------------------------------------------------------------------------

/// Calendar date stored as days since 1970-01-01 (proleptic Gregorian).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date(i32);

impl Date {
    pub fn from_days(days: i32) -> Self {
        Date(days)
    }

    pub fn days(&self) -> i32 {
        self.0
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(DataError::Validation(format!("month {month} out of range")));
        }
        let dim = days_in_month(year, month);
        if !(1..=dim).contains(&day) {
            return Err(DataError::Validation(format!("day {day} out of range for {year}-{month:02}")));
        }
        Ok(Date(days_from_civil(year, month, day)))
    }

    /// Parse `YYYY-MM-DD`.
    pub fn parse_iso(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(DataError::Validation(format!("bad date `{s}`")));
        }
        let bad = |_| DataError::Validation(format!("bad date `{s}`"));
        let year: i32 = parts[0].parse().map_err(bad)?;
        let month: u32 = parts[1].parse().map_err(bad)?;
        let day: u32 = parts[2].parse().map_err(bad)?;
        Date::from_ymd(year, month, day)
    }

    pub fn ymd(&self) -> (i32, u32, u32) {
        civil_from_days(self.0)
    }

    pub fn to_iso(&self) -> String {
        let (y, m, d) = self.ymd();
        format!("{y:04}-{m:02}-{d:02}")
    }

    pub fn succ(&self, days: i32) -> Self {
        Date(self.0 + days)
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_iso())
    }
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

fn days_from_civil(y: i32, m: u32, d: u32) -> i32 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as i64;
    let mp = ((m as i64) + 9) % 12;
    let doy = (153 * mp + 2) / 5 + (d as i64) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    (era as i64 * 146_097 + doe - 719_468) as i32
}

fn civil_from_days(z: i32) -> (i32, u32, u32) {
    let z = z as i64 + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = if m <= 2 { y + 1 } else { y };
    (y as i32, m, d)
}

// ---------------------------------------------------------------------------
// Price bars and labels
// ---------------------------------------------------------------------------

/// One daily bar: adjusted close, high and low in currency units.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBar {
    pub stock: String,
    pub date: Date,
    pub adj_close: f64,
    pub high: f64,
    pub low: f64,
}

impl PriceBar {
    fn validate(&self) -> Result<()> {
        if !(self.adj_close > 0.0) {
            return Err(DataError::Validation(format!(
                "{} {}: adj_close must be positive",
                self.stock, self.date
            )));
        }
        if self.low > self.high {
            return Err(DataError::Validation(format!(
                "{} {}: low above high",
                self.stock, self.date
            )));
        }
        Ok(())
    }
}

/// Parse the price CSV format.
pub fn parse_prices_csv(text: &str) -> Result<Vec<PriceBar>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == PRICE_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(DataError::Format(format!(
                "expected header `{PRICE_CSV_HEADER}`, found `{}`",
                header.trim()
            )))
        }
        None => return Err(DataError::Empty("price csv")),
    }
    let mut bars = Vec::new();
    let mut last_date: BTreeMap<String, Date> = BTreeMap::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(DataError::Parse { line: idx + 1, message: format!("expected 5 fields, got {}", fields.len()) });
        }
        let parse_f = |s: &str, name: &str| -> Result<f64> {
            s.parse().map_err(|_| DataError::Parse {
                line: idx + 1,
                message: format!("bad {name} `{s}`"),
            })
        };
        let bar = PriceBar {
            stock: fields[0].to_string(),
            date: Date::parse_iso(fields[1]).map_err(|e| DataError::Parse { line: idx + 1, message: e.to_string() })?,
            adj_close: parse_f(fields[2], "adj_close")?,
            high: parse_f(fields[3], "high")?,
            low: parse_f(fields[4], "low")?,
        };
        bar.validate().map_err(|e| DataError::Parse { line: idx + 1, message: e.to_string() })?;
        if let Some(prev) = last_date.get(&bar.stock) {
            if bar.date <= *prev {
                return Err(DataError::Parse {
                    line: idx + 1,
                    message: format!("dates not strictly increasing for {}", bar.stock),
                });
            }
        }
        last_date.insert(bar.stock.clone(), bar.date);
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(DataError::Empty("price csv"));
    }
    Ok(bars)
}

pub fn read_prices_csv(path: &Path) -> Result<Vec<PriceBar>> {
    parse_prices_csv(&std::fs::read_to_string(path)?)
}

pub fn format_prices_csv(bars: &[PriceBar]) -> String {
    let mut out = String::from(PRICE_CSV_HEADER);
    out.push('\n');
    for b in bars {
        out.push_str(&format!("{},{},{},{},{}\n", b.stock, b.date, b.adj_close, b.high, b.low));
    }
    out
}

/// Movement classification outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Discarded,
}

/// Movement thresholds in percent. Movements at or above `positive` are
/// positive, at or below `negative` are negative, anything strictly between
/// is discarded. The negative threshold is read as a signed value (-0.5
/// means "at or below -0.5%").
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelThresholds {
    pub positive: f64,
    pub negative: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self { positive: 0.55, negative: -0.5 }
    }
}

/// Threshold labeling of a signed movement percentage.
pub fn label(movement_pct: f64, thresholds: &LabelThresholds) -> Label {
    if movement_pct >= thresholds.positive {
        Label::Positive
    } else if movement_pct <= thresholds.negative {
        Label::Negative
    } else {
        Label::Discarded
    }
}

/// The simple up/down rule: 1 unless the close strictly decreased. Kept for
/// documentation of the task semantics; the threshold rule governs the
/// training pipeline.
pub fn simple_movement_label(prev_close: f64, close: f64) -> u8 {
    if close < prev_close {
        0
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// Text embedding store and binary format
// ---------------------------------------------------------------------------

/// Per-(stock, day) embedding vectors, keyed deterministically.
#[derive(Debug, Clone, Default)]
pub struct TextStore {
    pub dim: usize,
    map: BTreeMap<(String, Date), Vec<f64>>,
}

impl TextStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, map: BTreeMap::new() }
    }

    pub fn insert(&mut self, stock: &str, date: Date, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(DataError::Validation(format!(
                "embedding width {} does not match store dim {}",
                vector.len(),
                self.dim
            )));
        }
        self.map.insert((stock.to_string(), date), vector);
        Ok(())
    }

    pub fn get(&self, stock: &str, date: Date) -> Option<&[f64]> {
        self.map.get(&(stock.to_string(), date)).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, Date), &Vec<f64>)> {
        self.map.iter()
    }
}

/// Serialize a 768-wide store into the binary embedding format.
pub fn write_embeddings(path: &Path, store: &TextStore) -> Result<()> {
    if store.dim != EMBEDDING_DIM {
        return Err(DataError::Format(format!(
            "embedding file format is fixed at {EMBEDDING_DIM} dims, store has {}",
            store.dim
        )));
    }
    let mut buf: Vec<u8> = Vec::with_capacity(16 + store.len() * (8 + EMBEDDING_DIM * 4));
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for ((stock, date), vector) in store.iter() {
        let name = stock.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(DataError::Format(format!("stock id `{stock}` too long")));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&date.days().to_le_bytes());
        for &v in vector {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read the binary embedding format, upcasting values to `f64`.
pub fn read_embeddings(path: &Path) -> Result<TextStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(DataError::Format("truncated embedding file".into()));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != EMBEDDING_MAGIC {
        return Err(DataError::Format("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(DataError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let mut store = TextStore::new(EMBEDDING_DIM);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| DataError::Format("stock id is not UTF-8".into()))?;
        let days = i32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        let mut vector = Vec::with_capacity(EMBEDDING_DIM);
        for _ in 0..EMBEDDING_DIM {
            let v = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
            vector.push(v as f64);
        }
        store.insert(&name, Date::from_days(days), vector)?;
    }
    if off != bytes.len() {
        return Err(DataError::Format("trailing bytes after records".into()));
    }
    Ok(store)
}

// ---------------------------------------------------------------------------
// Date feature encoding
// ---------------------------------------------------------------------------

/// `[day/31, month/12, year min-max scaled over the dataset span]`.
pub fn encode_date_features(date: Date, year_range: (i32, i32)) -> [f64; 3] {
    let (y, m, d) = date.ymd();
    let span = (year_range.1 - year_range.0).max(1) as f64;
    let year_feat = if year_range.1 == year_range.0 {
        0.0
    } else {
        (y - year_range.0) as f64 / span
    };
    [d as f64 / 31.0, m as f64 / 12.0, year_feat]
}

/// Inverse of [`encode_date_features`] up to rounding; used to verify the
/// encoding round-trips.
pub fn decode_date_features(features: [f64; 3], year_range: (i32, i32)) -> (u32, u32, i32) {
    let day = (features[0] * 31.0).round() as u32;
    let month = (features[1] * 12.0).round() as u32;
    let span = (year_range.1 - year_range.0).max(1) as f64;
    let year = if year_range.1 == year_range.0 {
        year_range.0
    } else {
        (features[2] * span).round() as i32 + year_range.0
    };
    (day, month, year)
}

// ---------------------------------------------------------------------------
// Window samples
// ---------------------------------------------------------------------------

/// One multimodal sample: the stocks with full price coverage over `T`
/// consecutive trading days, their pre-projection price features, the text
/// tensor with a per-day presence mask, and next-day movement labels where
/// the label day and threshold rule admit one.
#[derive(Debug, Clone)]
pub struct WindowSample {
    /// Stock names present in this window.
    pub stocks: Vec<String>,
    /// Indices into the dataset's global stock table.
    pub stock_ids: Vec<usize>,
    /// The `T` trading days covered.
    pub dates: Vec<Date>,
    /// Next trading day, when the calendar has one.
    pub label_date: Option<Date>,
    /// `(N, T, 6)`: close/high/low ratios plus date features.
    pub prices: DenseTensor,
    /// `(N, T, text_dim)`, zero where no text exists.
    pub text: DenseTensor,
    /// `(N, T)` with 1.0 where text exists.
    pub mask: DenseTensor,
    /// `(N)`: 1.0 positive, 0.0 negative; meaningful only where valid.
    pub labels: Vec<f64>,
    /// Per-stock label validity (label day present and movement outside the
    /// discard band).
    pub label_valid: Vec<bool>,
}

#[derive(Debug, Clone)]
struct WindowMeta {
    start_day: usize,
    label_day: Option<usize>,
    stock_ids: Vec<usize>,
    prices: DenseTensor,
    mask: DenseTensor,
    labels: Vec<f64>,
    label_valid: Vec<bool>,
}

/// Windowed multimodal dataset. Window metadata is precomputed; the text
/// tensor of a sample is materialized on demand to keep memory proportional
/// to the number of (stock, day) embeddings rather than windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub stocks: Vec<String>,
    pub window: usize,
    pub text_dim: usize,
    pub thresholds: LabelThresholds,
    days: Vec<Date>,
    year_range: (i32, i32),
    metas: Vec<WindowMeta>,
    text: TextStore,
}

impl Dataset {
    /// Build all window positions from sorted bars and a text store.
    ///
    /// Every geometric window position is emitted (one sample per
    /// position); stocks missing any price day are dropped from that
    /// window, and positions whose label day is off the calendar carry
    /// invalid labels throughout.
    pub fn build(
        bars: &[PriceBar],
        text: TextStore,
        window: usize,
        thresholds: LabelThresholds,
    ) -> Result<Self> {
        if window == 0 {
            return Err(DataError::Validation("window must be positive".into()));
        }
        if bars.is_empty() {
            return Err(DataError::Empty("price bars"));
        }
        // per-stock series, validated monotone
        let mut series: BTreeMap<String, BTreeMap<Date, (f64, f64, f64)>> = BTreeMap::new();
        for bar in bars {
            bar.validate()?;
            let entry = series.entry(bar.stock.clone()).or_default();
            if entry.insert(bar.date, (bar.adj_close, bar.high, bar.low)).is_some() {
                return Err(DataError::Validation(format!(
                    "duplicate bar for {} on {}",
                    bar.stock, bar.date
                )));
            }
        }
        let stocks: Vec<String> = series.keys().cloned().collect();
        let mut day_set: std::collections::BTreeSet<Date> = std::collections::BTreeSet::new();
        for per_stock in series.values() {
            day_set.extend(per_stock.keys().cloned());
        }
        let days: Vec<Date> = day_set.into_iter().collect();
        let years: Vec<i32> = days.iter().map(|d| d.ymd().0).collect();
        let year_range = (*years.iter().min().unwrap(), *years.iter().max().unwrap());

        if days.len() < window {
            return Err(DataError::Validation(format!(
                "calendar has {} trading days, window needs {window}",
                days.len()
            )));
        }

        let mut metas = Vec::new();
        for start in 0..=(days.len() - window) {
            let label_day = if start + window < days.len() { Some(start + window) } else { None };
            let mut stock_ids = Vec::new();
            for (sid, stock) in stocks.iter().enumerate() {
                let per_stock = &series[stock];
                let covered = (0..window).all(|k| per_stock.contains_key(&days[start + k]));
                if covered {
                    stock_ids.push(sid);
                }
            }
            if stock_ids.is_empty() {
                continue;
            }
            let n = stock_ids.len();
            let mut prices = DenseTensor::zeros(&[n, window, 6]);
            let mut mask = DenseTensor::zeros(&[n, window]);
            let mut labels = vec![0.0; n];
            let mut label_valid = vec![false; n];
            for (row, &sid) in stock_ids.iter().enumerate() {
                let per_stock = &series[&stocks[sid]];
                for k in 0..window {
                    let date = days[start + k];
                    let (close, high, low) = per_stock[&date];
                    // normalize by the previous day's close, window-locally;
                    // the first day is normalized by its own close
                    let base = if k == 0 {
                        close
                    } else {
                        per_stock[&days[start + k - 1]].0
                    };
                    let date_feats = encode_date_features(date, year_range);
                    prices.set(&[row, k, 0], close / base);
                    prices.set(&[row, k, 1], high / base);
                    prices.set(&[row, k, 2], low / base);
                    prices.set(&[row, k, 3], date_feats[0]);
                    prices.set(&[row, k, 4], date_feats[1]);
                    prices.set(&[row, k, 5], date_feats[2]);
                    if text.get(&stocks[sid], date).is_some() {
                        mask.set(&[row, k], 1.0);
                    }
                }
                if let Some(ld) = label_day {
                    if let Some(&(next_close, _, _)) = per_stock.get(&days[ld]) {
                        let last_close = per_stock[&days[start + window - 1]].0;
                        let movement = (next_close / last_close - 1.0) * 100.0;
                        match label(movement, &thresholds) {
                            Label::Positive => {
                                labels[row] = 1.0;
                                label_valid[row] = true;
                            }
                            Label::Negative => {
                                labels[row] = 0.0;
                                label_valid[row] = true;
                            }
                            Label::Discarded => {}
                        }
                    }
                }
            }
            metas.push(WindowMeta { start_day: start, label_day, stock_ids, prices, mask, labels, label_valid });
        }

        let text_dim = text.dim;
        Ok(Self { stocks, window, text_dim, thresholds, days, year_range, metas, text })
    }

    pub fn len(&self) -> usize {
        self.metas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metas.is_empty()
    }

    pub fn trading_days(&self) -> &[Date] {
        &self.days
    }

    pub fn year_range(&self) -> (i32, i32) {
        self.year_range
    }

    /// Materialize sample `idx`, filling the text tensor from the store.
    pub fn sample(&self, idx: usize) -> WindowSample {
        let meta = &self.metas[idx];
        let n = meta.stock_ids.len();
        let t = self.window;
        let mut text = DenseTensor::zeros(&[n, t, self.text_dim]);
        for (row, &sid) in meta.stock_ids.iter().enumerate() {
            for k in 0..t {
                if let Some(v) = self.text.get(&self.stocks[sid], self.days[meta.start_day + k]) {
                    for (c, &value) in v.iter().enumerate() {
                        text.set(&[row, k, c], value);
                    }
                }
            }
        }
        WindowSample {
            stocks: meta.stock_ids.iter().map(|&sid| self.stocks[sid].clone()).collect(),
            stock_ids: meta.stock_ids.clone(),
            dates: (0..t).map(|k| self.days[meta.start_day + k]).collect(),
            label_date: meta.label_day.map(|ld| self.days[ld]),
            prices: meta.prices.clone(),
            text,
            mask: meta.mask.clone(),
            labels: meta.labels.clone(),
            label_valid: meta.label_valid.clone(),
        }
    }

    /// First and last calendar-day index touched by sample `idx`, label day
    /// included.
    fn span_days(&self, idx: usize) -> (usize, usize) {
        let meta = &self.metas[idx];
        let end = meta.label_day.unwrap_or(meta.start_day + self.window - 1);
        (meta.start_day, end)
    }

    /// Number of valid labels across all samples.
    pub fn valid_label_count(&self) -> usize {
        self.metas.iter().map(|m| m.label_valid.iter().filter(|&&v| v).count()).sum()
    }

    /// FNV-1a content hash covering everything that influences a run.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.str_(&format!("window={};text_dim={}", self.window, self.text_dim));
        h.f64_(self.thresholds.positive);
        h.f64_(self.thresholds.negative);
        for s in &self.stocks {
            h.str_(s);
        }
        for d in &self.days {
            h.i32_(d.days());
        }
        for meta in &self.metas {
            h.u64_(meta.start_day as u64);
            h.u64_(meta.label_day.map(|d| d as u64 + 1).unwrap_or(0));
            for &sid in &meta.stock_ids {
                h.u64_(sid as u64);
            }
            for &v in meta.prices.data() {
                h.f64_(v);
            }
            for &v in meta.mask.data() {
                h.f64_(v);
            }
            for (&l, &valid) in meta.labels.iter().zip(&meta.label_valid) {
                h.f64_(l);
                h.u64_(valid as u64);
            }
        }
        for ((stock, date), vector) in self.text.iter() {
            h.str_(stock);
            h.i32_(date.days());
            for &v in vector {
                h.f64_(v);
            }
        }
        h.finish()
    }
}

/// Collect every window sample eagerly. Thin wrapper over [`Dataset::build`]
/// for small inputs and tests.
pub fn make_windows(
    bars: &[PriceBar],
    text: TextStore,
    window: usize,
    thresholds: LabelThresholds,
) -> Result<Vec<WindowSample>> {
    let ds = Dataset::build(bars, text, window, thresholds)?;
    Ok((0..ds.len()).map(|i| ds.sample(i)).collect())
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }
    fn bytes(&mut self, bs: &[u8]) {
        for &b in bs {
            self.byte(b);
        }
    }
    fn str_(&mut self, s: &str) {
        self.bytes(s.as_bytes());
        self.byte(0);
    }
    fn u64_(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn i32_(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64_(&mut self, v: f64) {
        self.bytes(&v.to_bits().to_le_bytes());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Temporal splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Samples spanning a split boundary, dropped.
    pub dropped: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Contiguous date-based split. The trading-day calendar is cut at the
/// given ratios; a sample belongs to a split only when its full span
/// (label day included) lies inside one region, otherwise it is dropped.
pub fn temporal_split(dataset: &Dataset, ratios: (f64, f64, f64)) -> Result<SplitResult> {
    if dataset.is_empty() {
        return Err(DataError::Empty("dataset"));
    }
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val < 0.0 || r_test < 0.0 || (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(DataError::Validation(format!("bad split ratios {ratios:?}")));
    }
    let k = dataset.trading_days().len();
    let cut1 = ((k as f64) * r_train).round() as usize;
    let cut2 = ((k as f64) * (r_train + r_val)).round() as usize;
    let cut1 = cut1.clamp(1, k);
    let cut2 = cut2.clamp(cut1, k);

    let region = |day: usize| -> usize {
        if day < cut1 {
            0
        } else if day < cut2 {
            1
        } else {
            2
        }
    };

    let mut out = SplitResult::default();
    for idx in 0..dataset.len() {
        let (start, end) = dataset.span_days(idx);
        let (rs, re) = (region(start), region(end));
        if rs != re {
            out.dropped.push(idx);
            continue;
        }
        match rs {
            0 => out.train.push(idx),
            1 => out.val.push(idx),
            _ => out.test.push(idx),
        }
    }
    if out.train.is_empty() {
        out.warnings.push("train split is empty".into());
    }
    if out.val.is_empty() {
        out.warnings.push("val split is empty".into());
    }
    if out.test.is_empty() {
        out.warnings.push("test split is empty".into());
    }
    Ok(out)
}
