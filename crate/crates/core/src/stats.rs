//! Paired small-sample statistics: Cliff's delta and the Wilcoxon
//! signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("paired lengths differ: labels {labels}, x {x}, y {y}")]
    LengthMismatch { labels: usize, x: usize, y: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("exact enumeration supports at most {max} non-zero differences, got {n}")]
    TooLarge { n: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Per-class paired measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub labels: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSample {
    pub fn new(labels: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let s = Self { labels, x, y };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.x.len() || self.x.len() != self.y.len() {
            return Err(StatsError::LengthMismatch {
                labels: self.labels.len(),
                x: self.x.len(),
                y: self.y.len(),
            });
        }
        if self.x.is_empty() {
            return Err(StatsError::Empty("paired sample"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaBand {
    Negligible,
    Small,
    Medium,
    Large,
}

impl DeltaBand {
    pub fn of(delta: f64) -> Self {
        match delta.abs() {
            d if d < 0.147 => Self::Negligible,
            d if d < 0.33 => Self::Small,
            d if d < 0.474 => Self::Medium,
            _ => Self::Large,
        }
    }
}

fn check(name: &'static str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(StatsError::Empty(name));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(StatsError::NonFinite(name));
    }
    Ok(())
}

/// `(#{x_i > y_j} - #{x_i < y_j}) / (|x| |y|)`.
pub fn cliffs_delta(x: &[f64], y: &[f64]) -> Result<f64> {
    check("x", x)?;
    check("y", y)?;
    let mut score: i64 = 0;
    for a in x {
        for b in y {
            score += match a.partial_cmp(b) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    Ok(score as f64 / (x.len() * y.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMode {
    /// Exact for up to [`EXACT_DEFAULT_MAX_N`] non-zero differences,
    /// normal approximation above.
    Auto,
    Exact,
    NormalApprox,
}

pub const EXACT_DEFAULT_MAX_N: usize = 12;
const EXACT_HARD_MAX_N: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(R+, R-)`; `None` when every difference is zero.
    pub w: Option<f64>,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: WilcoxonMode,
    /// Number of non-zero differences.
    pub n_effective: usize,
    pub degenerate: bool,
}

/// Absolute differences ranked with mid-ranks. Ranks are returned doubled
/// so that ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // mean of 1-based ranks i+1..=j+1, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Signed-rank test on `x - y`, dropping zero differences.
///
/// The exact p-value is the share of the `2^n` sign assignments of the
/// observed ranks whose `min(R+, R-)` is at most the observed `W`; it is
/// computed by counting subset sums rather than literal enumeration.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], mode: WilcoxonMode) -> Result<Wilcoxon> {
    check("x", x)?;
    check("y", y)?;
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            labels: x.len(),
            x: x.len(),
            y: y.len(),
        });
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    let method = match mode {
        WilcoxonMode::Auto if n <= EXACT_DEFAULT_MAX_N => WilcoxonMode::Exact,
        WilcoxonMode::Auto => WilcoxonMode::NormalApprox,
        m => m,
    };
    if n == 0 {
        return Ok(Wilcoxon {
            w: None,
            p_value: 1.0,
            method,
            n_effective: 0,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w2 = plus.min(total - plus);
    let p_value = match method {
        WilcoxonMode::Exact => exact_p(&ranks, w2)?,
        _ => normal_p(&abs, w2),
    };
    Ok(Wilcoxon {
        w: Some(w2 as f64 / 2.0),
        p_value,
        method,
        n_effective: n,
        degenerate: false,
    })
}

fn exact_p(ranks: &[u64], w2: u64) -> Result<f64> {
    let n = ranks.len();
    if n > EXACT_HARD_MAX_N {
        return Err(StatsError::TooLarge { n, max: EXACT_HARD_MAX_N });
    }
    let total: u64 = ranks.iter().sum();
    // counts[s] = number of sign assignments with doubled R+ == s
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let extreme: u128 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| (s as u64).min(total - s as u64) <= w2)
        .map(|(_, &c)| c)
        .sum();
    Ok(extreme as f64 / 2f64.powi(n as i32))
}

fn normal_p(abs: &[f64], w2: u64) -> f64 {
    let n = abs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let w = w2 as f64 / 2.0;
    let z = ((mean - w).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

/// JSON report shape for a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub delta: f64,
    pub delta_band: DeltaBand,
    pub w_statistic: Option<f64>,
    pub p_value: f64,
    pub method: WilcoxonMode,
    pub n_effective: usize,
    pub degenerate: bool,
}

pub fn compare(sample: &PairedSample, mode: WilcoxonMode) -> Result<StatsReport> {
    sample.validate()?;
    let delta = cliffs_delta(&sample.x, &sample.y)?;
    let w = wilcoxon_signed_rank(&sample.x, &sample.y, mode)?;
    Ok(StatsReport {
        delta,
        delta_band: DeltaBand::of(delta),
        w_statistic: w.w,
        p_value: w.p_value,
        method: w.method,
        n_effective: w.n_effective,
        degenerate: w.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delta_examples() {
        assert_eq!(cliffs_delta(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cliffs_delta(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cliffs_delta(&[1.0, 3.0], &[2.0]).unwrap(), 0.0);
        assert!(cliffs_delta(&[], &[1.0]).is_err());
    }

    #[test]
    fn bands() {
        assert_eq!(DeltaBand::of(0.146), DeltaBand::Negligible);
        assert_eq!(DeltaBand::of(-0.147), DeltaBand::Small);
        assert_eq!(DeltaBand::of(0.33), DeltaBand::Medium);
        assert_eq!(DeltaBand::of(0.474), DeltaBand::Large);
    }

    #[test]
    fn three_positive_differences() {
        let r = wilcoxon_signed_rank(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0], WilcoxonMode::Exact).unwrap();
        assert_eq!(r.w, Some(0.0));
        assert_eq!(r.p_value, 0.25);
        assert_eq!(r.n_effective, 3);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0], WilcoxonMode::Auto).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.w, None);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn zeros_are_dropped_and_ties_share_ranks() {
        // differences 0, 1, -1, 2: ranks of |d| = 1.5, 1.5, 3
        let r = wilcoxon_signed_rank(&[0.0, 1.0, 0.0, 2.0], &[0.0, 0.0, 1.0, 0.0], WilcoxonMode::Exact).unwrap();
        assert_eq!(r.n_effective, 3);
        assert_eq!(r.w, Some(1.5));
        // R+ over 8 sign flips of {1.5,1.5,3}: 0,1.5,1.5,3,3,4.5,4.5,6; min(R+,6-R+) <= 1.5 for 6
        assert_eq!(r.p_value, 0.75);
    }

    #[test]
    fn auto_switches_above_twelve() {
        let x: Vec<f64> = (0..13).map(|i| i as f64 + 0.5).collect();
        let y = vec![0.0; 13];
        assert_eq!(wilcoxon_signed_rank(&x, &y, WilcoxonMode::Auto).unwrap().method, WilcoxonMode::NormalApprox);
        assert_eq!(wilcoxon_signed_rank(&x[..12], &y[..12], WilcoxonMode::Auto).unwrap().method, WilcoxonMode::Exact);
    }

    #[test]
    fn paired_sample_validation() {
        assert!(PairedSample::new(vec!["a".into()], vec![1.0], vec![]).is_err());
        assert!(PairedSample::new(vec![], vec![], vec![]).is_err());
        let s = PairedSample::new(vec!["a".into(), "b".into()], vec![0.9, 0.8], vec![0.5, 0.4]).unwrap();
        let r = compare(&s, WilcoxonMode::Auto).unwrap();
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.delta_band, DeltaBand::Large);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["delta", "delta_band", "w_statistic", "p_value", "method", "n_effective"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    fn ints(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-20i32..20).prop_map(f64::from), n)
    }

    proptest! {
        #[test]
        fn delta_is_antisymmetric(x in ints(1..20), y in ints(1..20)) {
            prop_assert_eq!(cliffs_delta(&x, &y).unwrap(), -cliffs_delta(&y, &x).unwrap());
        }

        #[test]
        fn shift_and_swap_invariance(pairs in prop::collection::vec((-20i32..20, -20i32..20), 1..16), c in -100i32..100) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let xs: Vec<f64> = x.iter().map(|v| v + c as f64).collect();
            let ys: Vec<f64> = y.iter().map(|v| v + c as f64).collect();
            prop_assert_eq!(cliffs_delta(&x, &y).unwrap(), cliffs_delta(&xs, &ys).unwrap());
            let a = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Auto).unwrap();
            let b = wilcoxon_signed_rank(&xs, &ys, WilcoxonMode::Auto).unwrap();
            let s = wilcoxon_signed_rank(&y, &x, WilcoxonMode::Auto).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a.p_value, s.p_value);
            prop_assert_eq!(a.w, s.w);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }
    }
}
