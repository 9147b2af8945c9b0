//! Exact discrete-distribution kernels shared by the pipelines.
//!
//! Hypergeometric tails are evaluated from a single log-space anchor term
//! followed by the exact ratio recurrence, always summing the shorter side
//! of the distribution (upper tail above the mean, complement of the lower
//! tail below it) so the absolute error stays near machine precision.

use alloc::vec;
use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::math;
use crate::{Error, Result};

/// Table of `ln k!` for `k = 0..=n`.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    table: Vec<f64>,
}

impl LogFactorials {
    pub fn new(n: usize) -> Self {
        let table = (0..=n)
            .map(|k| if k < 2 { 0.0 } else { math::ln_gamma(k as f64 + 1.0) })
            .collect();
        Self { table }
    }

    /// Largest `k` covered by the table.
    pub fn max(&self) -> usize {
        self.table.len() - 1
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.table[k]
    }

    #[inline]
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.table[n] - self.table[k] - self.table[n - k]
    }
}

/// Parameters of `H(X | total, successes, draws)`: the number of marked
/// items among `draws` picked without replacement from `total` items of
/// which `successes` are marked. The distribution is symmetric in
/// `successes` and `draws`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hypergeometric {
    pub total: u32,
    pub successes: u32,
    pub draws: u32,
}

impl Hypergeometric {
    pub fn new(total: u32, successes: u32, draws: u32) -> Result<Self> {
        if successes > total || draws > total {
            return Err(Error::Precondition(alloc::format!(
                "hypergeometric margins ({successes}, {draws}) exceed population {total}"
            )));
        }
        // Canonical orientation; the pmf is symmetric in the two margins.
        let (successes, draws) = if successes <= draws {
            (successes, draws)
        } else {
            (draws, successes)
        };
        Ok(Self {
            total,
            successes,
            draws,
        })
    }

    /// Smallest value in the support.
    pub fn support_min(&self) -> u32 {
        (self.successes + self.draws).saturating_sub(self.total)
    }

    /// Largest value in the support.
    pub fn support_max(&self) -> u32 {
        self.successes.min(self.draws)
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.successes as f64 * self.draws as f64 / self.total as f64
        }
    }

    fn ln_pmf(&self, lf: &LogFactorials, x: u32) -> f64 {
        let (t, a, b, x) = (
            self.total as usize,
            self.successes as usize,
            self.draws as usize,
            x as usize,
        );
        lf.ln_choose(a, x) + lf.ln_choose(t - a, b - x) - lf.ln_choose(t, b)
    }

    /// `P(X = x)`.
    pub fn pmf(&self, lf: &LogFactorials, x: u32) -> f64 {
        if x < self.support_min() || x > self.support_max() {
            return 0.0;
        }
        math::exp(self.ln_pmf(lf, x))
    }

    /// `pmf(x + 1) / pmf(x)`.
    #[inline]
    fn ratio_up(&self, x: u32) -> f64 {
        let (t, a, b, x) = (
            self.total as f64,
            self.successes as f64,
            self.draws as f64,
            x as f64,
        );
        (a - x) * (b - x) / ((x + 1.0) * (t - a - b + x + 1.0))
    }

    /// `pmf(x - 1) / pmf(x)`.
    #[inline]
    fn ratio_down(&self, x: u32) -> f64 {
        let (t, a, b, x) = (
            self.total as f64,
            self.successes as f64,
            self.draws as f64,
            x as f64,
        );
        x * (t - a - b + x) / ((a - x + 1.0) * (b - x + 1.0))
    }

    /// `sum_{x = from}^{max} pmf(x)` by upward recurrence.
    fn sum_up(&self, lf: &LogFactorials, from: u32) -> f64 {
        let hi = self.support_max();
        let mut term = self.pmf(lf, from);
        let mut sum = term;
        let mut x = from;
        while x < hi {
            let next = term * self.ratio_up(x);
            x += 1;
            if next <= term && next < sum * 1e-18 {
                break;
            }
            term = next;
            sum += term;
        }
        sum
    }

    /// `sum_{x = min}^{to} pmf(x)` by downward recurrence.
    fn sum_down(&self, lf: &LogFactorials, to: u32) -> f64 {
        let lo = self.support_min();
        let mut term = self.pmf(lf, to);
        let mut sum = term;
        let mut x = to;
        while x > lo {
            let next = term * self.ratio_down(x);
            x -= 1;
            if next <= term && next < sum * 1e-18 {
                break;
            }
            term = next;
            sum += term;
        }
        sum
    }

    /// Upper tail `P(X >= k)`.
    pub fn sf(&self, lf: &LogFactorials, k: u32) -> f64 {
        let (lo, hi) = (self.support_min(), self.support_max());
        if k <= lo {
            return 1.0;
        }
        if k > hi {
            return 0.0;
        }
        let p = if k as f64 > self.mean() {
            self.sum_up(lf, k)
        } else {
            1.0 - self.sum_down(lf, k - 1)
        };
        p.clamp(0.0, 1.0)
    }

    /// Lower tail `P(X <= k)`.
    pub fn cdf(&self, lf: &LogFactorials, k: u32) -> f64 {
        let (lo, hi) = (self.support_min(), self.support_max());
        if k < lo {
            return 0.0;
        }
        if k >= hi {
            return 1.0;
        }
        let p = if (k as f64) < self.mean() {
            self.sum_down(lf, k)
        } else {
            1.0 - self.sum_up(lf, k + 1)
        };
        p.clamp(0.0, 1.0)
    }
}

/// Validates the p-value arguments and returns the distribution.
fn checked(total: u32, a: u32, b: u32, k: u32, lf: &LogFactorials) -> Result<Hypergeometric> {
    if total as usize > lf.max() {
        return Err(Error::Precondition(alloc::format!(
            "log-factorial table covers {} but population is {total}",
            lf.max()
        )));
    }
    if k > a.min(b) {
        return Err(Error::Precondition(alloc::format!(
            "overlap {k} exceeds min({a}, {b})"
        )));
    }
    Hypergeometric::new(total, a, b)
}

/// `P(X >= k)` for `X ~ H(total, a, b)`; errors when `k > min(a, b)` or a
/// margin exceeds the population.
pub fn hypergeom_sf(lf: &LogFactorials, total: u32, a: u32, b: u32, k: u32) -> Result<f64> {
    Ok(checked(total, a, b, k, lf)?.sf(lf, k))
}

/// `P(X <= k)` for `X ~ H(total, a, b)`.
pub fn hypergeom_cdf(lf: &LogFactorials, total: u32, a: u32, b: u32, k: u32) -> Result<f64> {
    Ok(checked(total, a, b, k, lf)?.cdf(lf, k))
}

/// Memo for hypergeometric upper tails keyed on `(total, a, b, k)` with the
/// margins in canonical order. Lookups return exactly what
/// [`hypergeom_sf`] computes.
#[derive(Debug, Default, Clone)]
pub struct HypergeomMemo {
    cache: HashMap<(u32, u32, u32, u32), f64>,
    hits: u64,
}

impl HypergeomMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sf(&mut self, lf: &LogFactorials, total: u32, a: u32, b: u32, k: u32) -> Result<f64> {
        let dist = checked(total, a, b, k, lf)?;
        let key = (dist.total, dist.successes, dist.draws, k);
        if let Some(&p) = self.cache.get(&key) {
            self.hits += 1;
            return Ok(p);
        }
        let p = dist.sf(lf, k);
        self.cache.insert(key, p);
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }
}

/// Survival function of the chi-square distribution with one degree of
/// freedom.
pub fn chi2_sf_1dof(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    math::erfc(math::sqrt(x / 2.0)).clamp(0.0, 1.0)
}

/// Exact Poisson-Binomial pmf by sequential convolution.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; probs.len() + 1];
    pmf[0] = 1.0;
    for (n, &p) in probs.iter().enumerate() {
        let q = 1.0 - p;
        for k in (1..=n + 1).rev() {
            pmf[k] = pmf[k] * q + pmf[k - 1] * p;
        }
        pmf[0] *= q;
    }
    pmf
}

/// `P(S >= n)` for a Poisson-Binomial sum with the given success
/// probabilities. The convolution tracks counts `0..n` exactly and
/// accumulates all mass reaching `n` in an absorbing state, so the cost is
/// `O(len * n)`.
pub fn poisson_binomial_tail(probs: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if n > probs.len() {
        return 0.0;
    }
    let mut dp = vec![0.0; n + 1];
    dp[0] = 1.0;
    for (seen, &p) in probs.iter().enumerate() {
        let q = 1.0 - p;
        dp[n] += dp[n - 1] * p;
        let top = (seen + 1).min(n - 1);
        for k in (1..=top).rev() {
            dp[k] = dp[k] * q + dp[k - 1] * p;
        }
        dp[0] *= q;
    }
    dp[n].clamp(0.0, 1.0)
}

/// Bonferroni-corrected single-test threshold `alpha / n_tests`.
pub fn bonferroni(alpha: f64, n_tests: f64) -> f64 {
    if n_tests <= 0.0 {
        alpha
    } else {
        alpha / n_tests
    }
}

/// Benjamini-Hochberg threshold: sorts the p-values and returns
/// `p_(k*)` with `k* = max { k : p_(k) <= k alpha / n_tests }`, or `None`
/// when no rank qualifies. Tests that were never materialised are implicit
/// `p = 1` entries and only enter through `n_tests`.
pub fn fdr_threshold(p_values: &[f64], alpha: f64, n_tests: f64) -> Option<f64> {
    let n_tests = n_tests.max(p_values.len() as f64);
    let mut sorted: Vec<f64> = p_values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut best = None;
    for (idx, &p) in sorted.iter().enumerate() {
        let rank = (idx + 1) as f64;
        if p > alpha {
            break;
        }
        if p <= rank * alpha / n_tests {
            best = Some(p);
        }
    }
    best
}
