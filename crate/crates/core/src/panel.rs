//! Transaction panels, position proxies and price sensitive events.
//!
//! Records arrive per (investor, stock, venue, day) and are summed across
//! venues into one [`Cell`] per (investor, stock, day). Investors, stocks
//! and the trading calendar are interned into dense indices so downstream
//! code works on `u32` handles.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InvestorType {
    #[serde(rename = "H")]
    Household,
    #[serde(rename = "IF")]
    InvestmentFirm,
    #[serde(rename = "L")]
    LegalEntity,
}

impl InvestorType {
    pub const ALL: [InvestorType; 3] = [
        InvestorType::Household,
        InvestorType::InvestmentFirm,
        InvestorType::LegalEntity,
    ];

    pub fn code(self) -> &'static str {
        match self {
            InvestorType::Household => "H",
            InvestorType::InvestmentFirm => "IF",
            InvestorType::LegalEntity => "L",
        }
    }

    pub fn parse(code: &str) -> Option<Self> {
        match code.trim() {
            "H" => Some(InvestorType::Household),
            "IF" => Some(InvestorType::InvestmentFirm),
            "L" => Some(InvestorType::LegalEntity),
            _ => None,
        }
    }
}

impl fmt::Display for InvestorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Optional per-record price information (Euro/share). Carried through
/// ingestion but not consumed by any detector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceFields {
    pub first: Option<f64>,
    pub last: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub avg_buy: Option<f64>,
    pub avg_sell: Option<f64>,
}

/// One reported row: an investor's daily activity on one stock and venue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub investor_id: String,
    pub investor_type: InvestorType,
    pub venue: String,
    pub stock: String,
    pub day: NaiveDate,
    pub buy_volume: f64,
    pub sell_volume: f64,
    pub buy_amount: f64,
    pub sell_amount: f64,
    pub buy_contracts: u64,
    pub sell_contracts: u64,
    #[serde(default)]
    pub prices: PriceFields,
}

impl TransactionRecord {
    /// Checks the row-level invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRecord(msg));
        if self.investor_id.is_empty() || self.stock.is_empty() {
            return bad("empty investor or stock identifier".into());
        }
        for (name, v) in [
            ("buy_volume", self.buy_volume),
            ("sell_volume", self.sell_volume),
            ("buy_amount", self.buy_amount),
            ("sell_amount", self.sell_amount),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a finite non-negative number (got {v})"));
            }
        }
        if self.buy_volume > 0.0 && self.buy_amount <= 0.0 {
            return bad("buy_volume > 0 requires buy_amount > 0".into());
        }
        if self.sell_volume > 0.0 && self.sell_amount <= 0.0 {
            return bad("sell_volume > 0 requires sell_amount > 0".into());
        }
        if let (Some(lo), Some(hi)) = (self.prices.min, self.prices.max) {
            if lo > hi {
                return bad(format!("min_price {lo} exceeds max_price {hi}"));
            }
            let slack = 1e-9 * hi.abs().max(1.0);
            for (name, avg) in [("avg_buy_price", self.prices.avg_buy), ("avg_sell_price", self.prices.avg_sell)] {
                if let Some(p) = avg {
                    if p < lo - slack || p > hi + slack {
                        return bad(format!("{name} {p} outside [{lo}, {hi}]"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Investor {
    pub id: String,
    pub kind: InvestorType,
}

/// Venue-aggregated activity of one investor on one stock on one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub investor: u32,
    pub stock: u32,
    pub day: u32,
    pub buy_volume: f64,
    pub sell_volume: f64,
    pub buy_amount: f64,
    pub sell_amount: f64,
    pub buy_contracts: u64,
    pub sell_contracts: u64,
    pub prices: PriceFields,
}

impl Cell {
    /// Traded at least one share.
    #[inline]
    pub fn is_active(&self) -> bool {
        self.buy_volume + self.sell_volume > 0.0
    }

    #[inline]
    pub fn net_amount(&self) -> f64 {
        self.buy_amount - self.sell_amount
    }

    #[inline]
    pub fn gross_amount(&self) -> f64 {
        self.buy_amount + self.sell_amount
    }
}

/// Immutable, indexed transaction panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionPanel {
    calendar: Vec<NaiveDate>,
    investors: Vec<Investor>,
    stocks: Vec<String>,
    /// Sorted by (investor, stock, day).
    cells: Vec<Cell>,
    /// `cells[offsets[i]..offsets[i + 1]]` belong to investor `i`.
    offsets: Vec<usize>,
}

impl TransactionPanel {
    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn investors(&self) -> &[Investor] {
        &self.investors
    }

    pub fn stocks(&self) -> &[String] {
        &self.stocks
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_investors(&self) -> usize {
        self.investors.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn investor(&self, idx: u32) -> &Investor {
        &self.investors[idx as usize]
    }

    pub fn investor_index(&self, id: &str) -> Option<u32> {
        self.investors
            .binary_search_by(|inv| inv.id.as_str().cmp(id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn stock_index(&self, isin: &str) -> Option<u32> {
        self.stocks
            .binary_search_by(|s| s.as_str().cmp(isin))
            .ok()
            .map(|i| i as u32)
    }

    pub fn require_stock(&self, isin: &str) -> Result<u32> {
        self.stock_index(isin)
            .ok_or_else(|| Error::UnknownStock(isin.to_string()))
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// First calendar index whose date is `>= date`.
    pub fn first_day_on_or_after(&self, date: NaiveDate) -> Option<usize> {
        let idx = self.calendar.partition_point(|d| *d < date);
        (idx < self.calendar.len()).then_some(idx)
    }

    /// Last calendar index whose date is `<= date`.
    pub fn last_day_on_or_before(&self, date: NaiveDate) -> Option<usize> {
        let idx = self.calendar.partition_point(|d| *d <= date);
        idx.checked_sub(1)
    }

    /// All cells of one investor, across stocks, sorted by (stock, day).
    pub fn cells_of(&self, investor: u32) -> &[Cell] {
        let i = investor as usize;
        &self.cells[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Cells of one investor on one stock, sorted by day.
    pub fn cells_on(&self, investor: u32, stock: u32) -> &[Cell] {
        let all = self.cells_of(investor);
        let lo = all.partition_point(|c| c.stock < stock);
        let hi = all.partition_point(|c| c.stock <= stock);
        &all[lo..hi]
    }

    /// Number of distinct days with non-zero volume on `stock`.
    pub fn active_days(&self, investor: u32, stock: u32) -> usize {
        self.cells_on(investor, stock)
            .iter()
            .filter(|c| c.is_active())
            .count()
    }

    /// Investors with at least one cell on `stock`, ascending.
    pub fn investors_on(&self, stock: u32) -> Vec<u32> {
        (0..self.investors.len() as u32)
            .filter(|&i| !self.cells_on(i, stock).is_empty())
            .collect()
    }

    /// Expands the panel back into one record per cell (venue `AGG`).
    pub fn to_records(&self) -> Vec<TransactionRecord> {
        self.cells
            .iter()
            .map(|c| {
                let inv = &self.investors[c.investor as usize];
                TransactionRecord {
                    investor_id: inv.id.clone(),
                    investor_type: inv.kind,
                    venue: AGGREGATED_VENUE.to_string(),
                    stock: self.stocks[c.stock as usize].clone(),
                    day: self.calendar[c.day as usize],
                    buy_volume: c.buy_volume,
                    sell_volume: c.sell_volume,
                    buy_amount: c.buy_amount,
                    sell_amount: c.sell_amount,
                    buy_contracts: c.buy_contracts,
                    sell_contracts: c.sell_contracts,
                    prices: c.prices,
                }
            })
            .collect()
    }
}

/// Venue label written for venue-aggregated snapshot rows.
pub const AGGREGATED_VENUE: &str = "AGG";

/// Accumulates validated records and builds a [`TransactionPanel`].
#[derive(Debug, Default)]
pub struct PanelBuilder {
    records: Vec<TransactionRecord>,
    calendar: Vec<NaiveDate>,
}

impl PanelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds trading days that must appear in the calendar even without
    /// records (e.g. an exchange calendar).
    pub fn with_calendar(mut self, days: impl IntoIterator<Item = NaiveDate>) -> Self {
        self.calendar.extend(days);
        self
    }

    /// Validates and queues a record.
    pub fn push(&mut self, record: TransactionRecord) -> Result<()> {
        record.validate()?;
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn build(self) -> Result<TransactionPanel> {
        let PanelBuilder {
            mut records,
            calendar: extra,
        } = self;
        if records.is_empty() {
            return Err(Error::EmptyPanel);
        }

        let mut roster: BTreeMap<&str, InvestorType> = BTreeMap::new();
        for r in &records {
            match roster.get(r.investor_id.as_str()) {
                Some(kind) if *kind != r.investor_type => {
                    return Err(Error::ConflictingInvestorType {
                        investor: r.investor_id.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    roster.insert(r.investor_id.as_str(), r.investor_type);
                }
            }
        }
        let investors: Vec<Investor> = roster
            .into_iter()
            .map(|(id, kind)| Investor {
                id: id.to_string(),
                kind,
            })
            .collect();

        let mut stocks: Vec<String> = records.iter().map(|r| r.stock.clone()).collect();
        stocks.sort();
        stocks.dedup();

        let mut calendar: Vec<NaiveDate> = records.iter().map(|r| r.day).chain(extra).collect();
        calendar.sort();
        calendar.dedup();

        records.sort_by(|a, b| {
            (&a.investor_id, &a.stock, a.day, &a.venue).cmp(&(&b.investor_id, &b.stock, b.day, &b.venue))
        });
        for pair in records.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.investor_id == b.investor_id && a.stock == b.stock && a.day == b.day && a.venue == b.venue {
                return Err(Error::DuplicateRecord {
                    investor: a.investor_id.clone(),
                    stock: a.stock.clone(),
                    venue: a.venue.clone(),
                    day: a.day.to_string(),
                });
            }
        }

        let find = |v: &[String], key: &str| v.binary_search_by(|s| s.as_str().cmp(key)).unwrap() as u32;
        let mut cells: Vec<Cell> = Vec::with_capacity(records.len());
        for r in &records {
            let investor = investors
                .binary_search_by(|inv| inv.id.as_str().cmp(&r.investor_id))
                .unwrap() as u32;
            let stock = find(&stocks, &r.stock);
            let day = calendar.binary_search(&r.day).unwrap() as u32;
            match cells.last_mut() {
                Some(c) if c.investor == investor && c.stock == stock && c.day == day => {
                    merge_cell(c, r);
                }
                _ => {
                    cells.push(Cell {
                        investor,
                        stock,
                        day,
                        buy_volume: r.buy_volume,
                        sell_volume: r.sell_volume,
                        buy_amount: r.buy_amount,
                        sell_amount: r.sell_amount,
                        buy_contracts: r.buy_contracts,
                        sell_contracts: r.sell_contracts,
                        prices: r.prices,
                    });
                }
            }
        }

        let mut offsets = Vec::with_capacity(investors.len() + 1);
        offsets.push(0);
        let mut pos = 0;
        for i in 0..investors.len() as u32 {
            while pos < cells.len() && cells[pos].investor == i {
                pos += 1;
            }
            offsets.push(pos);
        }

        Ok(TransactionPanel {
            calendar,
            investors,
            stocks,
            cells,
            offsets,
        })
    }
}

/// Adds a second venue's record into an aggregated cell. First/last prices
/// lose their meaning across venues and are dropped; averages are
/// recomputed from the summed amounts.
fn merge_cell(c: &mut Cell, r: &TransactionRecord) {
    c.buy_volume += r.buy_volume;
    c.sell_volume += r.sell_volume;
    c.buy_amount += r.buy_amount;
    c.sell_amount += r.sell_amount;
    c.buy_contracts += r.buy_contracts;
    c.sell_contracts += r.sell_contracts;
    let min_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    };
    let max_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    };
    c.prices = PriceFields {
        first: None,
        last: None,
        min: min_opt(c.prices.min, r.prices.min),
        max: max_opt(c.prices.max, r.prices.max),
        avg_buy: (c.buy_volume > 0.0).then(|| c.buy_amount / c.buy_volume),
        avg_sell: (c.sell_volume > 0.0).then(|| c.sell_amount / c.sell_volume),
    };
}

/// Cumulative Euro position proxy `alpha_t` of every investor on one stock,
/// assumed zero before the first calendar day. Stored as change points.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSeries {
    stock: u32,
    n_days: usize,
    /// Per investor: `(day, alpha after that day's flow)` at each day with a
    /// cell; constant in between.
    changes: Vec<Vec<(u32, f64)>>,
}

impl PositionSeries {
    pub fn stock(&self) -> u32 {
        self.stock
    }

    /// `alpha_t` for `investor` at calendar index `day`.
    pub fn value(&self, investor: u32, day: usize) -> f64 {
        let ch = &self.changes[investor as usize];
        let idx = ch.partition_point(|&(d, _)| d as usize <= day);
        if idx == 0 {
            0.0
        } else {
            ch[idx - 1].1
        }
    }

    /// Full daily series.
    pub fn dense(&self, investor: u32) -> Vec<f64> {
        (0..self.n_days).map(|t| self.value(investor, t)).collect()
    }

    /// `(max_t |alpha_t|, alpha at the earliest argmax)` over the inclusive
    /// day range.
    pub fn max_abs_in(&self, investor: u32, start: usize, end: usize) -> (f64, f64) {
        let ch = &self.changes[investor as usize];
        let mut best_abs = libm::fabs(self.value(investor, start));
        let mut best = self.value(investor, start);
        let lo = ch.partition_point(|&(d, _)| (d as usize) <= start);
        for &(d, v) in &ch[lo..] {
            if d as usize > end {
                break;
            }
            if libm::fabs(v) > best_abs {
                best_abs = libm::fabs(v);
                best = v;
            }
        }
        (best_abs, best)
    }
}

/// Running sum of daily net Euro flows on `stock` for every investor.
pub fn build_positions(panel: &TransactionPanel, stock: u32) -> Result<PositionSeries> {
    if stock as usize >= panel.stocks.len() {
        return Err(Error::UnknownStock(format!("#{stock}")));
    }
    let changes = (0..panel.n_investors() as u32)
        .map(|i| {
            let mut alpha = 0.0;
            panel
                .cells_on(i, stock)
                .iter()
                .map(|c| {
                    alpha += c.net_amount();
                    (c.day, alpha)
                })
                .collect()
        })
        .collect();
    Ok(PositionSeries {
        stock,
        n_days: panel.n_days(),
        changes,
    })
}

/// Share and Euro totals of one investor on one stock over a day range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TradeTotals {
    pub bought_shares: f64,
    pub sold_shares: f64,
    pub buy_amount: f64,
    pub sell_amount: f64,
    pub active_days: u32,
}

impl TradeTotals {
    /// Volume-aggregated directionality, `None` without share volume.
    pub fn directionality(&self) -> Option<f64> {
        let total = self.bought_shares + self.sold_shares;
        (total > 0.0).then(|| (self.bought_shares - self.sold_shares) / total)
    }
}

impl TransactionPanel {
    /// Totals over the inclusive calendar range `[start, end]`.
    pub fn totals(&self, investor: u32, stock: u32, start: usize, end: usize) -> TradeTotals {
        let mut t = TradeTotals::default();
        for c in self.cells_on(investor, stock) {
            let d = c.day as usize;
            if d < start || d > end {
                continue;
            }
            t.bought_shares += c.buy_volume;
            t.sold_shares += c.sell_volume;
            t.buy_amount += c.buy_amount;
            t.sell_amount += c.sell_amount;
            t.active_days += u32::from(c.is_active());
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionReport {
    pub min_days: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Share of the stock's traded volume (shares bought + sold) carried by
    /// the retained investors.
    pub retained_volume_share: f64,
}

/// Keeps investors with at least `min_days` distinct active days on `stock`
/// (all of their cells, on every stock, are retained).
pub fn restrict_active(
    panel: &TransactionPanel,
    stock: u32,
    min_days: usize,
) -> Result<(TransactionPanel, RestrictionReport)> {
    if min_days == 0 {
        return Err(Error::InvalidParameter("min_days must be >= 1".into()));
    }
    if stock as usize >= panel.stocks.len() {
        return Err(Error::UnknownStock(format!("#{stock}")));
    }
    let mut keep = Vec::new();
    let (mut kept_volume, mut total_volume) = (0.0, 0.0);
    for i in 0..panel.n_investors() as u32 {
        let cells = panel.cells_on(i, stock);
        let volume: f64 = cells.iter().map(|c| c.buy_volume + c.sell_volume).sum();
        total_volume += volume;
        if cells.iter().filter(|c| c.is_active()).count() >= min_days {
            kept_volume += volume;
            keep.push(i);
        }
    }

    let mut remap = alloc::vec![u32::MAX; panel.n_investors()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old as usize] = new as u32;
    }
    let investors: Vec<Investor> = keep
        .iter()
        .map(|&i| panel.investors[i as usize].clone())
        .collect();
    let mut cells = Vec::new();
    let mut offsets = Vec::with_capacity(keep.len() + 1);
    offsets.push(0);
    for &old in &keep {
        cells.extend(panel.cells_of(old).iter().map(|c| Cell {
            investor: remap[old as usize],
            ..*c
        }));
        offsets.push(cells.len());
    }
    let report = RestrictionReport {
        min_days,
        kept: keep.len(),
        dropped: panel.n_investors() - keep.len(),
        retained_volume_share: if total_volume > 0.0 {
            kept_volume / total_volume
        } else {
            0.0
        },
    };
    Ok((
        TransactionPanel {
            calendar: panel.calendar.clone(),
            investors,
            stocks: panel.stocks.clone(),
            cells,
            offsets,
        },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    TakeoverBid,
}

impl EventType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "takeover_bid" | "takeover" | "opa" => Some(EventType::TakeoverBid),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::TakeoverBid => "takeover_bid",
        }
    }
}

/// Trading direction that profits from the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Buy,
    Sell,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" => Some(Direction::Buy),
            "sell" => Some(Direction::Sell),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Buy => "buy",
            Direction::Sell => "sell",
        }
    }

    /// Feature-space corner of maximal rewarding trading.
    pub fn target(self) -> [f64; 3] {
        match self {
            Direction::Buy => [1.0, 1.0, 1.0],
            Direction::Sell => [-1.0, 1.0, -1.0],
        }
    }
}

/// A price sensitive event with its reference period `[ref_start, pse_date]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseEvent {
    pub stock: String,
    pub event_type: EventType,
    pub pse_date: NaiveDate,
    pub ref_start: NaiveDate,
    /// Offer price `p_TB` in Euro/share.
    pub offer_price: f64,
    pub direction: Direction,
}

impl PseEvent {
    pub fn new(
        stock: impl Into<String>,
        event_type: EventType,
        pse_date: NaiveDate,
        ref_start: NaiveDate,
        offer_price: f64,
        direction: Direction,
    ) -> Result<Self> {
        let ev = Self {
            stock: stock.into(),
            event_type,
            pse_date,
            ref_start,
            offer_price,
            direction,
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stock.is_empty() {
            return Err(Error::InvalidEvent("empty stock".into()));
        }
        if self.ref_start > self.pse_date {
            return Err(Error::InvalidEvent(format!(
                "reference period starts {} after the event date {}",
                self.ref_start, self.pse_date
            )));
        }
        if !(self.offer_price.is_finite() && self.offer_price > 0.0) {
            return Err(Error::InvalidEvent(format!(
                "offer price must be positive (got {})",
                self.offer_price
            )));
        }
        if self.event_type == EventType::TakeoverBid && self.direction != Direction::Buy {
            return Err(Error::InvalidEvent(
                "takeover bids reward buying; direction must be buy".into(),
            ));
        }
        Ok(())
    }

    /// Checks an explicitly supplied reference-period end against the event
    /// date.
    pub fn check_reference_end(&self, ref_end: NaiveDate) -> Result<()> {
        if ref_end != self.pse_date {
            return Err(Error::InvalidEvent(format!(
                "reference period ends {} but the event date is {}",
                ref_end, self.pse_date
            )));
        }
        Ok(())
    }

    /// Inclusive calendar index range of the reference period within `panel`.
    pub fn reference_days(&self, panel: &TransactionPanel) -> Result<(usize, usize)> {
        let start = panel.first_day_on_or_after(self.ref_start);
        let end = panel.last_day_on_or_before(self.pse_date);
        match (start, end) {
            (Some(s), Some(e)) if s <= e => Ok((s, e)),
            _ => Err(Error::InvalidEvent(format!(
                "reference period {} - {} has no trading day in the panel calendar",
                self.ref_start, self.pse_date
            ))),
        }
    }
}

/// Validates events and sorts them by event date (then stock).
pub fn sort_events(mut events: Vec<PseEvent>) -> Result<Vec<PseEvent>> {
    for ev in &events {
        ev.validate()?;
    }
    events.sort_by(|a, b| (a.pse_date, &a.stock).cmp(&(b.pse_date, &b.stock)));
    Ok(events)
}
