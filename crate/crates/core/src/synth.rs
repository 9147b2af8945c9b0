//! Synthetic transaction panels with planted insiders and insider rings,
//! and precision/recall scoring against the planted truth.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discontinuity::DiscontinuityClass;
use crate::exec;
use crate::math;
use crate::panel::{
    Direction, EventType, InvestorType, PanelBuilder, PriceFields, PseEvent, TransactionPanel, TransactionRecord,
};
use crate::{Error, Result};

pub const SYNTH_VENUE: &str = "MTA";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, what: &str, min: f64, max: f64) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && min <= self.lo && self.lo <= self.hi && self.hi <= max) {
            return Err(Error::InvalidScenario(format!(
                "{what} range [{}, {}] must satisfy {min} <= lo <= hi <= {max}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    fn sample_log(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (a, b) = (math::ln(self.lo), math::ln(self.hi));
        math::exp(if b > a { rng.random_range(a..b) } else { a })
    }
}

/// Relative weights of the investor types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMix {
    pub household: f64,
    pub investment_firm: f64,
    pub legal_entity: f64,
}

impl Default for TypeMix {
    fn default() -> Self {
        Self {
            household: 0.8,
            investment_firm: 0.05,
            legal_entity: 0.15,
        }
    }
}

impl TypeMix {
    fn sample(&self, rng: &mut ChaCha8Rng) -> InvestorType {
        let total = self.household + self.investment_firm + self.legal_entity;
        let u = rng.random::<f64>() * total;
        if u < self.household {
            InvestorType::Household
        } else if u < self.household + self.investment_firm {
            InvestorType::InvestmentFirm
        } else {
            InvestorType::LegalEntity
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Individual,
    Ring,
}

impl InjectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectionKind::Individual => "individual",
            InjectionKind::Ring => "ring",
        }
    }
}

/// Planted insiders. Individuals each buy on `buy_days` days of their own;
/// ring members all buy on the same `buy_days` days, chosen to overlap
/// other rings' days as little as the period allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: InjectionKind,
    /// Number of individual insiders, or ring members.
    pub size: usize,
    /// First day (calendar index) eligible for insider buying; defaults to
    /// the start of the reference period.
    #[serde(default)]
    pub start_day: Option<usize>,
    pub buy_days: usize,
    /// Shares bought per buy day.
    #[serde(default = "insider_volume")]
    pub volume: Range,
    /// Share of the insider's daily Euro amount spent on the target stock.
    #[serde(default = "one")]
    pub concentration: f64,
}

fn one() -> f64 {
    1.0
}

fn insider_volume() -> Range {
    Range::new(2_000.0, 20_000.0)
}

impl Injection {
    pub fn individuals(size: usize, buy_days: usize) -> Self {
        Self {
            kind: InjectionKind::Individual,
            size,
            start_day: None,
            buy_days,
            volume: insider_volume(),
            concentration: 1.0,
        }
    }

    pub fn ring(size: usize, buy_days: usize) -> Self {
        Self {
            kind: InjectionKind::Ring,
            ..Self::individuals(size, buy_days)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseSpec {
    /// Calendar index of the event; defaults to `n_days - 6`.
    #[serde(default)]
    pub pse_day: Option<usize>,
    /// Length of the reference period, event day included.
    pub ref_days: usize,
    pub offer_price: f64,
}

impl Default for PseSpec {
    fn default() -> Self {
        Self {
            pse_day: None,
            ref_days: 20,
            offer_price: 13.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Total traders, injected ones included.
    pub n_traders: usize,
    pub n_stocks: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub target: String,
    pub types: TypeMix,
    /// Daily probability of trading the target, drawn per trader.
    pub activity: Range,
    /// Daily probability of trading some other stock, drawn per trader.
    pub other_activity: Range,
    /// Daily probability of a mixed (equal buy and sell) day, per trader.
    pub mixed: Range,
    /// Typical shares per trade, log-uniform per trader.
    pub volume: Range,
    pub base_price: f64,
    /// Probability that a day has a market-wide direction every active
    /// background trader follows on the target.
    pub market_mood: f64,
    pub pse: PseSpec,
    pub injections: Vec<Injection>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_traders: 2_000,
            n_stocks: 5,
            n_days: 250,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 2).expect("valid date"),
            target: "IT0000000001".into(),
            types: TypeMix::default(),
            activity: Range::new(0.05, 0.3),
            other_activity: Range::new(0.02, 0.2),
            mixed: Range::new(0.0, 0.15),
            volume: Range::new(50.0, 5_000.0),
            base_price: 10.0,
            market_mood: 0.0,
            pse: PseSpec::default(),
            injections: Vec::new(),
        }
    }
}

/// Stock codes `IT0000000001`, `IT0000000002`, ...; the target replaces
/// the first one.
fn stock_codes(cfg: &ScenarioConfig) -> Vec<String> {
    let mut out = vec![cfg.target.clone()];
    let mut k = 2u64;
    while out.len() < cfg.n_stocks {
        let code = format!("IT{k:010}");
        if code != cfg.target {
            out.push(code);
        }
        k += 1;
    }
    out
}

/// Weekdays from `start` on.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    pse_day: usize,
    ref_start: usize,
}

impl ScenarioConfig {
    pub fn n_injected(&self) -> usize {
        self.injections.iter().map(|inj| inj.size).sum()
    }

    fn layout(&self) -> Result<Layout> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n_days < 2 || self.n_stocks == 0 || self.n_traders == 0 {
            return bad("need at least 2 days, 1 stock and 1 trader".into());
        }
        if self.target.is_empty() {
            return bad("empty target stock code".into());
        }
        self.activity.check("activity", 0.0, 1.0)?;
        self.other_activity.check("other_activity", 0.0, 1.0)?;
        self.mixed.check("mixed", 0.0, 1.0)?;
        self.volume.check("volume", 1.0, f64::MAX)?;
        if !(self.base_price > 0.0 && self.pse.offer_price > 0.0) {
            return bad("prices must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.market_mood) {
            return bad(format!("market_mood must lie in [0, 1] (got {})", self.market_mood));
        }
        let t = &self.types;
        if t.household < 0.0 || t.investment_firm < 0.0 || t.legal_entity < 0.0 || t.household + t.investment_firm + t.legal_entity <= 0.0 {
            return bad("type mix weights must be non-negative with a positive sum".into());
        }
        let pse_day = self.pse.pse_day.unwrap_or(self.n_days.saturating_sub(6));
        if pse_day >= self.n_days {
            return bad(format!("event day {pse_day} outside the {}-day calendar", self.n_days));
        }
        if self.pse.ref_days == 0 || self.pse.ref_days > pse_day {
            return bad(format!(
                "reference period of {} days does not fit before event day {pse_day}",
                self.pse.ref_days
            ));
        }
        let ref_start = pse_day + 1 - self.pse.ref_days;
        if self.n_injected() > self.n_traders {
            return bad(format!(
                "{} injected traders exceed the {} traders of the scenario",
                self.n_injected(),
                self.n_traders
            ));
        }
        for (k, inj) in self.injections.iter().enumerate() {
            if inj.size == 0 || (inj.kind == InjectionKind::Ring && inj.size < 2) {
                return bad(format!("injection {k}: rings need at least 2 members, individuals at least 1"));
            }
            let start = inj.start_day.unwrap_or(ref_start);
            if start < ref_start || start >= pse_day {
                return bad(format!(
                    "injection {k}: start day {start} outside the reference period {ref_start}..{pse_day}"
                ));
            }
            if inj.buy_days == 0 || inj.buy_days > pse_day - start {
                return bad(format!(
                    "injection {k}: {} buy days do not fit between day {start} and the event day {pse_day}",
                    inj.buy_days
                ));
            }
            inj.volume.check("injection volume", 1.0, f64::MAX)?;
            if !(inj.concentration > 0.0 && inj.concentration <= 1.0) {
                return bad(format!("injection {k}: concentration must lie in (0, 1]"));
            }
            if inj.concentration < 1.0 && self.n_stocks < 2 {
                return bad(format!("injection {k}: concentration below 1 needs a second stock"));
            }
        }
        Ok(Layout { pse_day, ref_start })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub investor_id: String,
    pub kind: InjectionKind,
    pub ring: Option<u32>,
    pub days: Vec<NaiveDate>,
    pub expected_class: DiscontinuityClass,
    pub expected_suspect_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub stock: String,
    pub pse_day: usize,
    pub ref_start_day: usize,
    /// Sorted by investor id.
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn ids(&self, kind: InjectionKind) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.investor_id.clone())
            .collect()
    }

    /// Members of each ring, indexed by ring id.
    pub fn rings(&self) -> Vec<Vec<String>> {
        let mut rings: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for e in &self.entries {
            if let Some(r) = e.ring {
                rings.entry(r).or_default().push(e.investor_id.clone());
            }
        }
        rings.into_values().collect()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub panel: TransactionPanel,
    pub pse: PseEvent,
    pub truth: GroundTruth,
}

/// Role of a trader slot.
#[derive(Debug, Clone)]
enum Role {
    Background,
    Insider {
        kind: InjectionKind,
        ring: Option<u32>,
        injection: usize,
        /// Shared buy days (rings) or `None` to draw per trader.
        days: Option<Vec<usize>>,
    },
}

struct Market<'a> {
    cfg: &'a ScenarioConfig,
    layout: Layout,
    calendar: Vec<NaiveDate>,
    stocks: Vec<String>,
    prices: Vec<f64>,
    /// Per day: `Some(true)` for a buying mood, `Some(false)` for selling.
    mood: Vec<Option<bool>>,
}

impl Market<'_> {
    fn target_price(&self, day: usize) -> f64 {
        if day >= self.layout.pse_day {
            self.cfg.pse.offer_price
        } else {
            self.prices[0]
        }
    }

    fn record(&self, id: &str, kind: InvestorType, stock: usize, day: usize, buy: u64, sell: u64) -> TransactionRecord {
        let price = if stock == 0 { self.target_price(day) } else { self.prices[stock] };
        let amount = |q: u64| math::round(q as f64 * price * 100.0) / 100.0;
        let some = |q: u64| (q > 0).then_some(price);
        TransactionRecord {
            investor_id: id.to_string(),
            investor_type: kind,
            venue: SYNTH_VENUE.into(),
            stock: self.stocks[stock].clone(),
            day: self.calendar[day],
            buy_volume: buy as f64,
            sell_volume: sell as f64,
            buy_amount: amount(buy),
            sell_amount: amount(sell),
            buy_contracts: (buy > 0) as u64,
            sell_contracts: (sell > 0) as u64,
            prices: PriceFields {
                first: Some(price),
                last: Some(price),
                min: Some(price),
                max: Some(price),
                avg_buy: some(buy),
                avg_sell: some(sell),
            },
        }
    }

    fn other_stock(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        (self.stocks.len() > 1).then(|| rng.random_range(1..self.stocks.len()))
    }

    fn background(&self, id: &str, rng: &mut ChaCha8Rng) -> (InvestorType, Vec<TransactionRecord>) {
        let cfg = self.cfg;
        let kind = cfg.types.sample(rng);
        let rate = cfg.activity.sample(rng);
        let other_rate = cfg.other_activity.sample(rng);
        let mixed = cfg.mixed.sample(rng);
        let p_buy = match rng.random_range(0..3) {
            0 => rng.random_range(0.65..0.95),
            1 => rng.random_range(0.05..0.35),
            _ => rng.random_range(0.35..0.65),
        };
        let scale = cfg.volume.sample_log(rng);
        let mut out = Vec::new();
        for day in 0..self.calendar.len() {
            if rng.random::<f64>() < rate {
                let q = shares(scale, rng);
                let (buy, sell) = if rng.random::<f64>() < mixed {
                    (q, q)
                } else {
                    let buying = match self.mood[day] {
                        Some(up) => up,
                        None => rng.random::<f64>() < p_buy,
                    };
                    if buying {
                        (q, 0)
                    } else {
                        (0, q)
                    }
                };
                out.push(self.record(id, kind, 0, day, buy, sell));
            }
            if rng.random::<f64>() < other_rate {
                if let Some(s) = self.other_stock(rng) {
                    let q = shares(scale, rng);
                    let (buy, sell) = if rng.random::<bool>() { (q, 0) } else { (0, q) };
                    out.push(self.record(id, kind, s, day, buy, sell));
                }
            }
        }
        (kind, out)
    }

    fn insider(
        &self,
        id: &str,
        inj: &Injection,
        shared: Option<&[usize]>,
        rng: &mut ChaCha8Rng,
    ) -> (InvestorType, Vec<usize>, Vec<TransactionRecord>) {
        let cfg = self.cfg;
        let kind = cfg.types.sample(rng);
        let start = inj.start_day.unwrap_or(self.layout.ref_start);
        let days = match shared {
            Some(d) => d.to_vec(),
            None => pick_days(start, self.layout.pse_day, inj.buy_days, rng),
        };
        let other_rate = cfg.other_activity.sample(rng);
        let mut out = Vec::new();
        // Ordinary activity elsewhere before the reference period.
        for day in 0..self.layout.ref_start {
            if rng.random::<f64>() < other_rate {
                if let Some(s) = self.other_stock(rng) {
                    let q = shares(cfg.volume.sample_log(rng), rng);
                    let (buy, sell) = if rng.random::<bool>() { (q, 0) } else { (0, q) };
                    out.push(self.record(id, kind, s, day, buy, sell));
                }
            }
        }
        for &day in &days {
            let q = math::round(inj.volume.sample(rng)).max(1.0) as u64;
            out.push(self.record(id, kind, 0, day, q, 0));
            if inj.concentration < 1.0 {
                let s = self.other_stock(rng).expect("validated: a second stock exists");
                let target_amount = q as f64 * self.target_price(day);
                let other = target_amount * (1.0 - inj.concentration) / inj.concentration;
                let oq = math::round(other / self.prices[s]).max(1.0) as u64;
                out.push(self.record(id, kind, s, day, oq, 0));
            }
        }
        (kind, days, out)
    }
}

fn shares(scale: f64, rng: &mut ChaCha8Rng) -> u64 {
    math::round(scale * rng.random_range(0.5..1.5)).max(1.0) as u64
}

/// `count` distinct sorted days from `start..end`.
fn pick_days(start: usize, end: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (start..end).collect();
    pool.shuffle(rng);
    pool.truncate(count);
    pool.sort_unstable();
    pool
}

/// Like [`pick_days`], preferring days fewer earlier rings trade on so
/// that distinct rings keep distinct schedules.
fn pick_ring_days(start: usize, end: usize, count: usize, load: &mut [u32], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (start..end).collect();
    pool.shuffle(rng);
    pool.sort_by_key(|&d| load[d]);
    pool.truncate(count);
    pool.sort_unstable();
    for &d in &pool {
        load[d] += 1;
    }
    pool
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates the scenario. Every trader draws from its own random stream,
/// so the output does not depend on the number of workers.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    let layout = cfg.layout()?;
    let calendar = business_days(cfg.start_date, cfg.n_days);
    let stocks = stock_codes(cfg);
    let mut global = rng_for(cfg.seed, 0);

    let mut prices = vec![cfg.base_price];
    for _ in 1..cfg.n_stocks {
        prices.push(math::round(global.random_range(2.0..50.0) * 100.0) / 100.0);
    }
    let mood = (0..cfg.n_days)
        .map(|_| {
            let active = global.random::<f64>() < cfg.market_mood;
            let up = global.random::<bool>();
            active.then_some(up)
        })
        .collect();

    let n_bg = cfg.n_traders - cfg.n_injected();
    let mut roles = vec![Role::Background; n_bg];
    let mut ring_id = 0u32;
    let mut ring_load = vec![0u32; cfg.n_days];
    for (k, inj) in cfg.injections.iter().enumerate() {
        let (ring, days) = match inj.kind {
            InjectionKind::Individual => (None, None),
            InjectionKind::Ring => {
                let start = inj.start_day.unwrap_or(layout.ref_start);
                let days = pick_ring_days(start, layout.pse_day, inj.buy_days, &mut ring_load, &mut global);
                ring_id += 1;
                (Some(ring_id), Some(days))
            }
        };
        for _ in 0..inj.size {
            roles.push(Role::Insider {
                kind: inj.kind,
                ring,
                injection: k,
                days: days.clone(),
            });
        }
    }

    let mut numbers: Vec<usize> = (0..cfg.n_traders).collect();
    numbers.shuffle(&mut global);
    let width = cfg.n_traders.to_string().len().max(6);
    let ids: Vec<String> = numbers.iter().map(|n| format!("INV{n:0width$}")).collect();

    let market = Market {
        cfg,
        layout,
        calendar,
        stocks,
        prices,
        mood,
    };
    let generated = exec::map_indexed(cfg.n_traders, |slot| {
        let mut rng = rng_for(cfg.seed, slot as u64 + 1);
        match &roles[slot] {
            Role::Background => {
                let (_, recs) = market.background(&ids[slot], &mut rng);
                (recs, None)
            }
            Role::Insider {
                kind,
                ring,
                injection,
                days,
            } => {
                let inj = &cfg.injections[*injection];
                let (_, days, recs) = market.insider(&ids[slot], inj, days.as_deref(), &mut rng);
                let entry = TruthEntry {
                    investor_id: ids[slot].clone(),
                    kind: *kind,
                    ring: *ring,
                    days: days.iter().map(|&d| market.calendar[d]).collect(),
                    expected_class: DiscontinuityClass::HardDiscontinuous,
                    expected_suspect_cluster: *kind == InjectionKind::Ring,
                };
                (recs, Some(entry))
            }
        }
    });

    let mut builder = PanelBuilder::new().with_calendar(market.calendar.iter().copied());
    let mut entries = Vec::new();
    for (recs, entry) in generated {
        for r in recs {
            builder.push(r)?;
        }
        entries.extend(entry);
    }
    entries.sort_by(|a, b| a.investor_id.cmp(&b.investor_id));
    let panel = builder.build()?;
    let pse = PseEvent::new(
        cfg.target.clone(),
        EventType::TakeoverBid,
        market.calendar[layout.pse_day],
        market.calendar[layout.ref_start],
        cfg.pse.offer_price,
        Direction::Buy,
    )?;
    Ok(Scenario {
        panel,
        pse,
        truth: GroundTruth {
            stock: cfg.target.clone(),
            pse_day: layout.pse_day,
            ref_start_day: layout.ref_start,
            entries,
        },
    })
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    math::sqrt(-2.0 * math::ln(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// `per_blob` isotropic Gaussian points around each centre, in blob order.
pub fn gaussian_blobs(seed: u64, centres: &[[f64; 3]], per_blob: usize, sd: f64) -> (Vec<[f64; 3]>, Vec<u32>) {
    let mut rng = rng_for(seed, 0);
    let mut points = Vec::with_capacity(centres.len() * per_blob);
    let mut labels = Vec::with_capacity(points.capacity());
    for (b, c) in centres.iter().enumerate() {
        for _ in 0..per_blob {
            points.push([c[0] + sd * normal(&mut rng), c[1] + sd * normal(&mut rng), c[2] + sd * normal(&mut rng)]);
            labels.push(b as u32);
        }
    }
    (points, labels)
}

/// Undirected unit-weight planted-partition graph: `blocks` groups of
/// `size` nodes, edge probability `p_in` within and `p_out` across groups.
pub fn planted_blocks(seed: u64, blocks: usize, size: usize, p_in: f64, p_out: f64) -> (usize, Vec<(u32, u32, f64)>, Vec<u32>) {
    let mut rng = rng_for(seed, 0);
    let n = blocks * size;
    let truth: Vec<u32> = (0..n).map(|v| (v / size) as u32).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if truth[u] == truth[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u as u32, v as u32, 1.0));
            }
        }
    }
    (n, edges, truth)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `None` when nothing was detected.
    pub precision: Option<f64>,
    /// `None` when there is nothing to detect.
    pub recall: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pipeline: String,
    pub overall: Metrics,
    /// Per injection kind: true positives and misses among that kind's
    /// traders; false positives are the detections matching no planted
    /// trader, shared by every kind.
    pub per_kind: BTreeMap<String, Metrics>,
}

/// Scores a set of flagged investor ids against the planted truth.
pub fn evaluate(pipeline: &str, detected: &[String], truth: &GroundTruth) -> Evaluation {
    let detected: BTreeSet<&str> = detected.iter().map(String::as_str).collect();
    let planted: BTreeSet<&str> = truth.entries.iter().map(|e| e.investor_id.as_str()).collect();
    let fp = detected.difference(&planted).count();
    let tp = detected.intersection(&planted).count();
    let overall = Metrics::from_counts(tp, fp, planted.len() - tp);
    let mut per_kind = BTreeMap::new();
    for kind in [InjectionKind::Individual, InjectionKind::Ring] {
        let ids: Vec<&str> = truth
            .entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.investor_id.as_str())
            .collect();
        if ids.is_empty() {
            continue;
        }
        let hit = ids.iter().filter(|id| detected.contains(*id)).count();
        per_kind.insert(kind.as_str().to_string(), Metrics::from_counts(hit, fp, ids.len() - hit));
    }
    Evaluation {
        pipeline: pipeline.to_string(),
        overall,
        per_kind,
    }
}
