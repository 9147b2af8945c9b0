//! Rolling windows and the three per-window trading features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::panel::{build_positions, PositionSeries, TransactionPanel};
use crate::{Error, Result};

/// Inclusive calendar index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, day: usize) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub length: usize,
    pub step: usize,
    pub first_day: usize,
    pub last_day: usize,
    pub windows: Vec<Window>,
}

impl WindowGrid {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn last(&self) -> Window {
        *self.windows.last().expect("grid has at least two windows")
    }

    /// Windows sharing no day with the final window.
    pub fn past_disjoint(&self) -> Vec<usize> {
        let last = self.last();
        (0..self.windows.len())
            .filter(|&w| !self.windows[w].overlaps(&last))
            .collect()
    }
}

/// Windows of `length` days rolled forward by `step` from `first_day`,
/// plus a closing window ending exactly at `last_day` when the roll does not
/// land on it.
pub fn make_windows_by_index(
    n_days: usize,
    length: usize,
    step: usize,
    first_day: usize,
    last_day: usize,
) -> Result<WindowGrid> {
    if length == 0 || step == 0 {
        return Err(Error::InvalidWindows("window length and step must be >= 1".into()));
    }
    if first_day >= last_day || last_day >= n_days {
        return Err(Error::InvalidWindows(format!(
            "need first day < last day within the calendar (got {first_day}..{last_day} of {n_days})"
        )));
    }
    if last_day + 1 - first_day < length {
        return Err(Error::InvalidWindows(format!(
            "span of {} days is shorter than the window length {length}",
            last_day + 1 - first_day
        )));
    }
    let mut windows = Vec::new();
    let mut start = first_day;
    while start + length - 1 <= last_day {
        windows.push(Window {
            start,
            end: start + length - 1,
        });
        start += step;
    }
    if windows.last().map(|w| w.end) != Some(last_day) {
        windows.push(Window {
            start: last_day + 1 - length,
            end: last_day,
        });
    }
    if windows.len() < 2 {
        return Err(Error::InvalidWindows(format!(
            "only {} window fits; at least 2 are required",
            windows.len()
        )));
    }
    Ok(WindowGrid {
        length,
        step,
        first_day,
        last_day,
        windows,
    })
}

/// Date-based front end of [`make_windows_by_index`]; `t1` snaps forward and
/// `ts` backward to the nearest trading day.
pub fn make_windows(
    calendar: &[NaiveDate],
    length: usize,
    step: usize,
    t1: NaiveDate,
    ts: NaiveDate,
) -> Result<WindowGrid> {
    let first = calendar.partition_point(|d| *d < t1);
    let last = calendar
        .partition_point(|d| *d <= ts)
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidWindows(format!("no trading day on or before {ts}")))?;
    if first >= calendar.len() {
        return Err(Error::InvalidWindows(format!("no trading day on or after {t1}")));
    }
    make_windows_by_index(calendar.len(), length, step, first, last)
}

/// Features of one investor in one window. Raw values are in Euro; after
/// [`rescale`] turnover and exposure lie in `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Signed turnover `A`.
    pub turnover: f64,
    /// Magnitudo `a`, the stock's share of the investor's traded Euro.
    pub magnitudo: f64,
    /// Maximum exposure `E`.
    pub exposure: f64,
    pub active: bool,
}

impl FeatureVector {
    pub fn point(&self) -> [f64; 3] {
        [self.turnover, self.magnitudo, self.exposure]
    }
}

/// Whether the rescaling maxima include the final window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleScope {
    #[default]
    AllWindows,
    /// Maxima from the history only; final-window values are clamped.
    ExcludeFinal,
}

/// Per-(window, investor) features for one stock.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube {
    pub stock: u32,
    pub grid: WindowGrid,
    pub n_investors: usize,
    /// Row-major `[window][investor]`.
    pub values: Vec<FeatureVector>,
}

impl FeatureCube {
    pub fn get(&self, window: usize, investor: u32) -> &FeatureVector {
        &self.values[window * self.n_investors + investor as usize]
    }

    pub fn window(&self, window: usize) -> &[FeatureVector] {
        &self.values[window * self.n_investors..(window + 1) * self.n_investors]
    }

    /// Active investors of a window with their points, ascending by id.
    pub fn active_points(&self, window: usize) -> (Vec<u32>, Vec<[f64; 3]>) {
        let mut ids = Vec::new();
        let mut pts = Vec::new();
        for (i, f) in self.window(window).iter().enumerate() {
            if f.active {
                ids.push(i as u32);
                pts.push(f.point());
            }
        }
        (ids, pts)
    }
}

/// Raw Euro features of every investor for one window.
///
/// An investor is active if it traded any stock in the window, and enters
/// the stock's clustering only if it either traded the stock in the window
/// or had traded it at some point before the window ends.
pub fn raw_features(
    panel: &TransactionPanel,
    positions: &PositionSeries,
    stock: u32,
    window: Window,
) -> Result<Vec<FeatureVector>> {
    (0..panel.n_investors() as u32)
        .map(|i| investor_window(panel, positions, stock, i, window))
        .collect()
}

fn investor_window(
    panel: &TransactionPanel,
    positions: &PositionSeries,
    stock: u32,
    investor: u32,
    w: Window,
) -> Result<FeatureVector> {
    let mut gross_all = 0.0;
    let mut active_any = false;
    for c in panel.cells_of(investor) {
        if w.contains(c.day as usize) {
            gross_all += c.gross_amount();
            active_any |= c.is_active();
        }
    }
    let on_stock = panel.cells_on(investor, stock);
    let mut turnover = 0.0;
    let mut gross = 0.0;
    let mut seen = false;
    for c in on_stock {
        let d = c.day as usize;
        if d > w.end {
            break;
        }
        seen = true;
        if d >= w.start {
            turnover += c.net_amount();
            gross += c.gross_amount();
        }
    }
    if !active_any || !seen {
        return Ok(FeatureVector::default());
    }
    if gross_all <= 0.0 {
        return Err(Error::Consistency(format!(
            "investor #{investor} is active in window {}..{} with zero traded amount",
            w.start, w.end
        )));
    }
    let (_, exposure) = positions.max_abs_in(investor, w.start, w.end);
    Ok(FeatureVector {
        turnover,
        magnitudo: gross / gross_all,
        exposure,
        active: true,
    })
}

/// Divides turnover and exposure by each investor's maximum absolute value
/// across windows; an all-zero series stays zero.
pub fn rescale(
    stock: u32,
    grid: WindowGrid,
    n_investors: usize,
    mut raw: Vec<FeatureVector>,
    scope: RescaleScope,
) -> FeatureCube {
    let m = grid.len();
    assert_eq!(raw.len(), m * n_investors, "raw features must cover the grid");
    let history = match scope {
        RescaleScope::AllWindows => m,
        RescaleScope::ExcludeFinal => m - 1,
    };
    for i in 0..n_investors {
        let (mut max_a, mut max_e) = (0.0f64, 0.0f64);
        for w in 0..history {
            let f = &raw[w * n_investors + i];
            max_a = max_a.max(libm::fabs(f.turnover));
            max_e = max_e.max(libm::fabs(f.exposure));
        }
        for w in 0..m {
            let f = &mut raw[w * n_investors + i];
            f.turnover = normalize(f.turnover, max_a);
            f.exposure = normalize(f.exposure, max_e);
        }
    }
    FeatureCube {
        stock,
        grid,
        n_investors,
        values: raw,
    }
}

fn normalize(x: f64, max: f64) -> f64 {
    if max > 0.0 {
        (x / max).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Builds the rescaled cube for `stock` over `grid`.
pub fn feature_cube(
    panel: &TransactionPanel,
    stock: u32,
    grid: WindowGrid,
    scope: RescaleScope,
) -> Result<FeatureCube> {
    let positions = build_positions(panel, stock)?;
    let n = panel.n_investors();
    let per_investor: Vec<Result<Vec<FeatureVector>>> = exec::map_indexed(n, |i| {
        grid.windows
            .iter()
            .map(|&w| investor_window(panel, &positions, stock, i as u32, w))
            .collect()
    });
    let mut raw = vec![FeatureVector::default(); grid.len() * n];
    for (i, series) in per_investor.into_iter().enumerate() {
        for (w, f) in series?.into_iter().enumerate() {
            raw[w * n + i] = f;
        }
    }
    Ok(rescale(stock, grid, n, raw, scope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::tests::{date, rec};
    use crate::panel::PanelBuilder;

    #[test]
    fn window_counts() {
        let g = make_windows_by_index(10, 5, 5, 0, 9).unwrap();
        assert_eq!(g.windows, vec![Window { start: 0, end: 4 }, Window { start: 5, end: 9 }]);

        let g = make_windows_by_index(40, 20, 5, 0, 39).unwrap();
        let mut oracle = Vec::new();
        for s in 0..40usize {
            if s % 5 == 0 && s + 19 <= 39 {
                oracle.push(Window { start: s, end: s + 19 });
            }
        }
        assert_eq!(g.windows, oracle);
        assert_eq!(g.len(), 5);

        let g = make_windows_by_index(43, 20, 5, 0, 42).unwrap();
        assert_eq!(g.last(), Window { start: 23, end: 42 });
        assert!(g.windows.iter().all(|w| w.len() == 20));
        assert!(make_windows_by_index(20, 20, 5, 0, 19).is_err());
    }

    #[test]
    fn raw_feature_arithmetic() {
        let d1 = date(2020, 1, 1);
        let d2 = date(2020, 1, 2);
        let d3 = date(2020, 1, 3);
        let mut b = PanelBuilder::new();
        b.push(rec("a", "J", "V", d1, 1.0, 60.0, 1.0, 40.0)).unwrap();
        b.push(rec("a", "K", "V", d1, 3.0, 300.0, 0.0, 0.0)).unwrap();
        b.push(rec("b", "J", "V", d1, 1.0, 10.0, 0.0, 0.0)).unwrap();
        b.push(rec("b", "J", "V", d2, 0.0, 0.0, 1.0, 35.0)).unwrap();
        b.push(rec("b", "J", "V", d3, 1.0, 45.0, 0.0, 0.0)).unwrap();
        let p = b.build().unwrap();
        let j = p.stock_index("J").unwrap();
        let pos = build_positions(&p, j).unwrap();
        let f = raw_features(&p, &pos, j, Window { start: 0, end: 2 }).unwrap();
        assert_eq!(f[0].turnover, 20.0);
        assert_eq!(f[0].magnitudo, 0.25);
        // b: positions (10, -25, 20) -> exposure -25
        assert_eq!(f[1].exposure, -25.0);
        assert_eq!(f[1].magnitudo, 1.0);
    }

    #[test]
    fn rescale_examples() {
        let grid = make_windows_by_index(3, 1, 1, 0, 2).unwrap();
        let raw: Vec<FeatureVector> = [60.0, -120.0, 30.0]
            .iter()
            .map(|&a| FeatureVector {
                turnover: a,
                magnitudo: 0.5,
                exposure: 0.0,
                active: true,
            })
            .collect();
        let cube = rescale(0, grid, 1, raw, RescaleScope::AllWindows);
        let a: Vec<f64> = cube.values.iter().map(|f| f.turnover).collect();
        assert_eq!(a, vec![0.5, -1.0, 0.25]);
        assert!(cube.values.iter().all(|f| f.exposure == 0.0 && f.magnitudo == 0.5));
    }

    #[test]
    fn inactive_investors_are_excluded() {
        let mut b = PanelBuilder::new();
        b.push(rec("a", "J", "V", date(2020, 1, 1), 1.0, 1.0, 0.0, 0.0)).unwrap();
        b.push(rec("z", "K", "V", date(2020, 1, 2), 1.0, 1.0, 0.0, 0.0)).unwrap();
        b.push(rec("z", "K", "V", date(2020, 1, 3), 1.0, 1.0, 0.0, 0.0)).unwrap();
        let p = b.build().unwrap();
        let grid = make_windows_by_index(3, 1, 1, 0, 2).unwrap();
        let cube = feature_cube(&p, 0, grid, RescaleScope::AllWindows).unwrap();
        assert!(cube.get(0, 0).active);
        assert!(!cube.get(1, 0).active);
        // never traded J
        assert!((0..3).all(|w| !cube.get(w, 1).active));
    }
}
