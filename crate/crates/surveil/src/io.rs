//! CSV and JSON formats: transaction panels, calendars, PSE registries and
//! the generic writers used for run artifacts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use surveil_core::panel::{
    sort_events, Direction, EventType, InvestorType, PanelBuilder, PriceFields, PseEvent, TransactionPanel,
    TransactionRecord,
};

use crate::error::{AppError, AppResult};

pub const PANEL_COLUMNS: [&str; 17] = [
    "investor_id",
    "investor_type",
    "venue",
    "stock",
    "day",
    "buy_volume",
    "sell_volume",
    "buy_amount",
    "sell_amount",
    "buy_contracts",
    "sell_contracts",
    "first_price",
    "last_price",
    "min_price",
    "max_price",
    "avg_buy_price",
    "avg_sell_price",
];

const REQUIRED_PANEL_COLUMNS: usize = 11;

pub const PSE_COLUMNS: [&str; 6] = ["stock", "type", "pse_date", "ref_start", "offer_price", "direction"];

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Deserialize)]
struct PanelRow {
    investor_id: String,
    investor_type: String,
    venue: String,
    stock: String,
    day: String,
    buy_volume: f64,
    sell_volume: f64,
    buy_amount: f64,
    sell_amount: f64,
    buy_contracts: u64,
    sell_contracts: u64,
    #[serde(default)]
    first_price: Option<f64>,
    #[serde(default)]
    last_price: Option<f64>,
    #[serde(default)]
    min_price: Option<f64>,
    #[serde(default)]
    max_price: Option<f64>,
    #[serde(default)]
    avg_buy_price: Option<f64>,
    #[serde(default)]
    avg_sell_price: Option<f64>,
}

impl PanelRow {
    fn into_record(self) -> Result<TransactionRecord, String> {
        let investor_type = InvestorType::parse(&self.investor_type)
            .ok_or_else(|| format!("unknown investor_type {:?}", self.investor_type))?;
        let day = parse_date(&self.day)?;
        let record = TransactionRecord {
            investor_id: self.investor_id.trim().to_string(),
            investor_type,
            venue: self.venue.trim().to_string(),
            stock: self.stock.trim().to_string(),
            day,
            buy_volume: self.buy_volume,
            sell_volume: self.sell_volume,
            buy_amount: self.buy_amount,
            sell_amount: self.sell_amount,
            buy_contracts: self.buy_contracts,
            sell_contracts: self.sell_contracts,
            prices: PriceFields {
                first: self.first_price,
                last: self.last_price,
                min: self.min_price,
                max: self.max_price,
                avg_buy: self.avg_buy_price,
                avg_sell: self.avg_sell_price,
            },
        };
        record.validate().map_err(|e| e.to_string())?;
        Ok(record)
    }
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| format!("invalid ISO-8601 date {s:?}"))
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source)
}

fn check_header(headers: &csv::StringRecord, required: &[&str], what: &str) -> Result<(), String> {
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!("{what} header is missing column(s): {}", missing.join(", ")))
    }
}

fn budget_error(what: &str, diagnostics: &[Diagnostic], budget: usize) -> AppError {
    let shown: Vec<String> = diagnostics
        .iter()
        .take(10)
        .map(|d| format!("  line {}: {}", d.line, d.message))
        .collect();
    let more = diagnostics.len().saturating_sub(shown.len());
    let mut msg = format!(
        "{what}: {} malformed row(s) exceed the error budget of {budget}\n{}",
        diagnostics.len(),
        shown.join("\n")
    );
    if more > 0 {
        msg.push_str(&format!("\n  ... and {more} more"));
    }
    AppError::Data(msg)
}

/// Parses a transaction CSV (any column order) into a venue-aggregated
/// panel. Rows failing to parse or validate are dropped with a diagnostic;
/// more than `error_budget` of them fails the whole file.
pub fn parse_panel<R: Read>(
    source: R,
    calendar: &[NaiveDate],
    error_budget: usize,
) -> AppResult<(TransactionPanel, IngestReport)> {
    let mut rdr = reader(source);
    let headers = rdr
        .headers()
        .map_err(|e| AppError::Data(format!("unreadable header: {e}")))?
        .clone();
    check_header(&headers, &PANEL_COLUMNS[..REQUIRED_PANEL_COLUMNS], "transaction").map_err(AppError::Data)?;

    let mut builder = PanelBuilder::new().with_calendar(calendar.iter().copied());
    let mut report = IngestReport {
        rows_read: 0,
        rows_kept: 0,
        rows_dropped: 0,
        diagnostics: Vec::new(),
    };
    let mut raw = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut raw) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rows_read += 1;
                report.diagnostics.push(Diagnostic {
                    line: e.position().map_or(line, |p| p.line()),
                    message: e.to_string(),
                });
                continue;
            }
        }
        report.rows_read += 1;
        let line = raw.position().map_or(line, |p| p.line());
        let parsed = raw
            .deserialize::<PanelRow>(Some(&headers))
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => match err.field() {
                    Some(f) => format!("column {}: {}", headers.get(f as usize).unwrap_or("?"), err.kind()),
                    None => err.kind().to_string(),
                },
                _ => e.to_string(),
            })
            .and_then(PanelRow::into_record);
        match parsed {
            Ok(rec) => {
                builder.push(rec)?;
                report.rows_kept += 1;
            }
            Err(message) => report.diagnostics.push(Diagnostic { line, message }),
        }
    }
    report.rows_dropped = report.rows_read - report.rows_kept;
    if report.diagnostics.len() > error_budget {
        return Err(budget_error("transactions", &report.diagnostics, error_budget));
    }
    let panel = builder.build()?;
    Ok((panel, report))
}

pub fn read_panel(path: &Path, calendar: &[NaiveDate], error_budget: usize) -> AppResult<(TransactionPanel, IngestReport)> {
    let file = File::open(path).map_err(AppError::io(path))?;
    parse_panel(file, calendar, error_budget).map_err(|e| match e {
        AppError::Data(m) => AppError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Canonical snapshot: one aggregated row per cell, sorted by investor,
/// stock and day.
pub fn write_panel<W: Write>(panel: &TransactionPanel, out: W) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| AppError::Data(e.to_string());
    w.write_record(PANEL_COLUMNS).map_err(map)?;
    for r in panel.to_records() {
        w.write_record([
            r.investor_id,
            r.investor_type.code().to_string(),
            r.venue,
            r.stock,
            r.day.to_string(),
            r.buy_volume.to_string(),
            r.sell_volume.to_string(),
            r.buy_amount.to_string(),
            r.sell_amount.to_string(),
            r.buy_contracts.to_string(),
            r.sell_contracts.to_string(),
            fmt_opt(r.prices.first),
            fmt_opt(r.prices.last),
            fmt_opt(r.prices.min),
            fmt_opt(r.prices.max),
            fmt_opt(r.prices.avg_buy),
            fmt_opt(r.prices.avg_sell),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| AppError::Data(e.to_string()))?;
    Ok(())
}

pub fn read_calendar(path: &Path) -> AppResult<Vec<NaiveDate>> {
    let file = File::open(path).map_err(AppError::io(path))?;
    let mut rdr = reader(file);
    let headers = rdr.headers().map_err(AppError::csv(path))?.clone();
    check_header(&headers, &["day"], "calendar").map_err(AppError::Data)?;
    let col = headers.iter().position(|h| h == "day").unwrap();
    let mut days = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(AppError::csv(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let day = parse_date(rec.get(col).unwrap_or(""))
            .map_err(|m| AppError::Data(format!("{}: line {line}: {m}", path.display())))?;
        days.push(day);
    }
    Ok(days)
}

pub fn write_calendar<W: Write>(days: &[NaiveDate], out: W) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| AppError::Data(e.to_string());
    w.write_record(["day"]).map_err(map)?;
    for d in days {
        w.write_record([d.to_string()]).map_err(map)?;
    }
    w.flush().map_err(|e| AppError::Data(e.to_string()))?;
    Ok(())
}

#[derive(Deserialize)]
struct PseRow {
    stock: String,
    #[serde(rename = "type")]
    event_type: String,
    pse_date: String,
    ref_start: String,
    #[serde(default)]
    ref_end: Option<String>,
    offer_price: f64,
    direction: String,
}

impl PseRow {
    fn into_event(self) -> Result<PseEvent, String> {
        let event_type =
            EventType::parse(&self.event_type).ok_or_else(|| format!("unknown event type {:?}", self.event_type))?;
        let direction =
            Direction::parse(&self.direction).ok_or_else(|| format!("unknown direction {:?}", self.direction))?;
        let pse_date = parse_date(&self.pse_date)?;
        let ref_start = parse_date(&self.ref_start)?;
        let ev = PseEvent::new(self.stock.trim(), event_type, pse_date, ref_start, self.offer_price, direction)
            .map_err(|e| e.to_string())?;
        if let Some(end) = self.ref_end.as_deref().filter(|s| !s.trim().is_empty()) {
            ev.check_reference_end(parse_date(end)?).map_err(|e| e.to_string())?;
        }
        Ok(ev)
    }
}

/// Loads a PSE registry; rejected rows count against `error_budget`.
pub fn parse_pse<R: Read>(source: R, error_budget: usize) -> AppResult<(Vec<PseEvent>, Vec<Diagnostic>)> {
    let mut rdr = reader(source);
    let headers = rdr
        .headers()
        .map_err(|e| AppError::Data(format!("unreadable header: {e}")))?
        .clone();
    check_header(&headers, &PSE_COLUMNS, "PSE registry").map_err(AppError::Data)?;
    let mut events = Vec::new();
    let mut diagnostics = Vec::new();
    for rec in rdr.records() {
        let (line, parsed) = match rec {
            Ok(rec) => (
                rec.position().map_or(0, |p| p.line()),
                rec.deserialize::<PseRow>(Some(&headers))
                    .map_err(|e| e.to_string())
                    .and_then(PseRow::into_event),
            ),
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        match parsed {
            Ok(ev) => events.push(ev),
            Err(message) => diagnostics.push(Diagnostic { line, message }),
        }
    }
    if diagnostics.len() > error_budget {
        return Err(budget_error("PSE registry", &diagnostics, error_budget));
    }
    Ok((sort_events(events)?, diagnostics))
}

pub fn read_pse(path: &Path, error_budget: usize) -> AppResult<Vec<PseEvent>> {
    let file = File::open(path).map_err(AppError::io(path))?;
    parse_pse(file, error_budget)
        .map(|(events, _)| events)
        .map_err(|e| match e {
            AppError::Data(m) => AppError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
}

pub fn write_pse<W: Write>(events: &[PseEvent], out: W) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| AppError::Data(e.to_string());
    w.write_record(PSE_COLUMNS).map_err(map)?;
    for ev in events {
        w.write_record([
            ev.stock.clone(),
            ev.event_type.as_str().to_string(),
            ev.pse_date.to_string(),
            ev.ref_start.to_string(),
            ev.offer_price.to_string(),
            ev.direction.as_str().to_string(),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| AppError::Data(e.to_string()))?;
    Ok(())
}

/// Picks the event for `stock`, or the only event when no stock is given.
pub fn select_event(events: &[PseEvent], stock: Option<&str>) -> AppResult<PseEvent> {
    match stock {
        Some(s) => events
            .iter()
            .rfind(|e| e.stock == s)
            .cloned()
            .ok_or_else(|| AppError::Data(format!("no price sensitive event for stock {s} in the registry"))),
        None => match events {
            [one] => Ok(one.clone()),
            [] => Err(AppError::Data("the PSE registry is empty".into())),
            _ => Err(AppError::Usage(
                "the PSE registry lists several events; choose one with --stock".into(),
            )),
        },
    }
}

pub fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(AppError::io(path))
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact types serialise");
    bytes.push(b'\n');
    bytes
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let bytes = std::fs::read(path).map_err(AppError::io(path))?;
    serde_json::from_slice(&bytes).map_err(AppError::json(path))
}

/// Builds CSV text in memory.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory flush")
    }
}

/// Empty for `None`, shortest round-trip decimal otherwise.
pub fn opt(v: Option<f64>) -> String {
    fmt_opt(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "investor_id,investor_type,venue,stock,day,buy_volume,sell_volume,buy_amount,sell_amount,buy_contracts,sell_contracts\n";

    #[test]
    fn venues_are_aggregated() {
        let csv = format!(
            "{HEADER}A,H,MTA,X,2020-01-02,100,0,1000,0,1,0\nA,H,EQD,X,2020-01-02,50,10,500,100,1,1\nB,L,MTA,X,2020-01-03,0,5,0,50,0,1\n"
        );
        let (panel, report) = parse_panel(csv.as_bytes(), &[], 0).unwrap();
        assert_eq!(report.rows_kept, 3);
        assert_eq!(panel.cells().len(), 2);
        let c = panel.cells_of(0)[0];
        assert_eq!((c.buy_volume, c.sell_volume, c.buy_amount, c.sell_amount), (150.0, 10.0, 1500.0, 100.0));
    }

    #[test]
    fn header_only_is_an_empty_panel() {
        let err = parse_panel(HEADER.as_bytes(), &[], 0).unwrap_err();
        assert_eq!(err.to_string(), "empty panel");
    }

    #[test]
    fn invariant_violations_are_reported_with_line_numbers() {
        let csv = format!("{HEADER}A,H,MTA,X,2020-01-02,100,0,0,0,1,0\nB,H,MTA,X,2020-01-02,1,0,10,0,1,0\n");
        let err = parse_panel(csv.as_bytes(), &[], 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("buy_amount"), "{msg}");
        let (panel, report) = parse_panel(csv.as_bytes(), &[], 1).unwrap();
        assert_eq!(panel.n_investors(), 1);
        assert_eq!(report.diagnostics, vec![Diagnostic { line: 2, message: "invalid record: buy_volume > 0 requires buy_amount > 0".into() }]);
    }

    #[test]
    fn unknown_type_and_bad_numbers_are_row_errors() {
        let csv = format!("{HEADER}A,Q,MTA,X,2020-01-02,1,0,10,0,1,0\nB,H,MTA,X,2020-01-02,abc,0,10,0,1,0\nC,H,MTA,X,2020-01-02,1,0,10,0,1,0\n");
        let (_, report) = parse_panel(csv.as_bytes(), &[], 2).unwrap();
        assert_eq!(report.diagnostics.len(), 2);
        assert!(report.diagnostics[0].message.contains("investor_type"));
        assert!(report.diagnostics[1].message.contains("buy_volume"));
        assert_eq!(report.diagnostics[1].line, 3);
    }

    #[test]
    fn duplicates_reject_the_file() {
        let csv = format!("{HEADER}A,H,MTA,X,2020-01-02,1,0,10,0,1,0\nA,H,MTA,X,2020-01-02,1,0,10,0,1,0\n");
        assert!(matches!(
            parse_panel(csv.as_bytes(), &[], 5),
            Err(AppError::Core(surveil_core::Error::DuplicateRecord { .. }))
        ));
    }

    #[test]
    fn column_order_is_free_and_snapshot_round_trips() {
        let csv = "day,stock,venue,investor_type,investor_id,sell_contracts,buy_contracts,sell_amount,buy_amount,sell_volume,buy_volume,min_price,max_price\n\
                   2020-01-02,X,MTA,H,A,0,1,0,1234.5,0,100,12.1,12.6\n\
                   2020-01-06,Y,MTA,IF,B,2,0,333.25,0,30,0,,\n";
        let cal = [NaiveDate::from_ymd_opt(2020, 1, 3).unwrap()];
        let (panel, _) = parse_panel(csv.as_bytes(), &cal, 0).unwrap();
        assert_eq!(panel.n_days(), 3);
        let mut snap = Vec::new();
        write_panel(&panel, &mut snap).unwrap();
        let (again, _) = parse_panel(snap.as_slice(), &cal, 0).unwrap();
        assert_eq!(again, panel);
        let mut snap2 = Vec::new();
        write_panel(&again, &mut snap2).unwrap();
        assert_eq!(snap, snap2);
    }

    #[test]
    fn pse_registry_rows() {
        let csv = "stock,type,pse_date,ref_start,ref_end,offer_price,direction\n\
                   IMA,takeover_bid,2020-07-28,2020-06-29,2020-07-28,68.0,buy\n\
                   BAD,merger,2020-07-28,2020-06-29,,10,buy\n\
                   OFF,takeover_bid,2020-07-28,2020-06-29,2020-07-27,10,buy\n";
        assert!(parse_pse(csv.as_bytes(), 0).is_err());
        let (events, diags) = parse_pse(csv.as_bytes(), 2).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].offer_price, 68.0);
        assert_eq!(diags.len(), 2);
        assert!(diags[0].message.contains("event type"));
        assert!(diags[1].message.contains("reference period ends"));
        assert!(select_event(&events, Some("MISSING")).is_err());
        assert_eq!(select_event(&events, None).unwrap().stock, "IMA");
    }
}
