//! Population measurements: instant means, prediction accuracy, lifetime and
//! mortality distributions, and log-log slope ("effective index") fits.

use std::collections::BTreeMap;

use crate::engine::Strategy;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 3 non-empty bins in fit range, found {found}")]
    InsufficientData { found: usize },
    #[error("prediction accuracy is undefined at t1 = 0")]
    ZeroHorizon,
    #[error("bin edges must be positive and strictly increasing")]
    BadBins,
}

/// One instant snapshot of the population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientSample {
    pub tick: usize,
    pub mean_utility: f64,
    pub mean_age: f64,
    pub deaths_so_far: u64,
    pub passive_fraction: f64,
}

/// A completed incarnation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeathEvent {
    pub tick: usize,
    pub lifetime: usize,
    pub scale: usize,
    pub agent_id: usize,
    pub generation: u32,
}

/// Borrowed per-agent columns needed for the instant means.
#[derive(Debug, Clone, Copy)]
pub struct PopulationView<'a> {
    pub utilities: &'a [i64],
    pub birth_ticks: &'a [usize],
}

/// Instant population means at tick `t`: mean utility and mean age.
pub fn sample_transient(
    population: PopulationView<'_>,
    t: usize,
    deaths_so_far: u64,
    passive_fraction: f64,
) -> TransientSample {
    let n = population.utilities.len().max(1) as f64;
    let total_u: i64 = population.utilities.iter().sum();
    let total_age: u64 = population.birth_ticks.iter().map(|&b| (t - b) as u64).sum();
    TransientSample {
        tick: t,
        mean_utility: total_u as f64 / n,
        mean_age: total_age as f64 / n,
        deaths_so_far,
        passive_fraction,
    }
}

/// Fraction of correct one-step predictions implied by the accumulated mean
/// utility: `(t1 + ū) / (2 t1)`.
pub fn prediction_accuracy<F: Real>(mean_utility: F, t1: usize) -> Result<F, StatsError> {
    if t1 == 0 {
        return Err(StatsError::ZeroHorizon);
    }
    let t1 = F::from_count(t1 as u64);
    Ok((t1 + mean_utility) / (t1 + t1))
}

/// Histogram bins given by their edges; bin `i` is `[edges[i], edges[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBins<F> {
    edges: Vec<F>,
}

impl<F: Real> LogBins<F> {
    /// Geometric bins starting at `lo`, `per_decade` per factor of ten, with
    /// enough bins that `hi` falls inside the last one.
    pub fn covering(lo: F, hi: F, per_decade: u32) -> Result<Self, StatsError> {
        if !(lo > F::zero()) || !(hi >= lo) || per_decade == 0 {
            return Err(StatsError::BadBins);
        }
        let ten = F::lit(10.0);
        let per = F::lit(f64::from(per_decade));
        let mut edges = vec![lo];
        let mut k = 1u32;
        loop {
            let edge = lo * ten.powf(F::lit(f64::from(k)) / per);
            edges.push(edge);
            if edge > hi {
                break;
            }
            k += 1;
        }
        Ok(LogBins { edges })
    }

    /// Ten bins per decade, the default resolution.
    pub fn decades(lo: F, hi: F) -> Result<Self, StatsError> {
        Self::covering(lo, hi, 10)
    }

    pub fn from_edges(edges: Vec<F>) -> Result<Self, StatsError> {
        if edges.len() < 2 || !edges.iter().all(|e| e.is_finite()) || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(StatsError::BadBins);
        }
        Ok(LogBins { edges })
    }

    pub fn edges(&self) -> &[F] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, v: F) -> Option<usize> {
        if !(v >= self.edges[0]) || !(v < self.edges[self.edges.len() - 1]) {
            return None;
        }
        Some(self.edges.partition_point(|e| *e <= v) - 1)
    }

    /// Geometric centres; arithmetic when an edge is non-positive.
    pub fn centers(&self) -> Vec<F> {
        self.edges
            .windows(2)
            .map(|w| {
                if w[0] > F::zero() {
                    (w[0] * w[1]).sqrt()
                } else {
                    (w[0] + w[1]) / F::lit(2.0)
                }
            })
            .collect()
    }

    pub fn widths(&self) -> Vec<F> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn count<I: IntoIterator<Item = F>>(&self, values: I) -> Vec<u64> {
        let mut counts = vec![0u64; self.len()];
        for v in values {
            if let Some(i) = self.index_of(v) {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// Result of an ordinary least-squares fit of `log10 y` on `log10 x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit<F> {
    pub range: (F, F),
    pub slope: F,
    pub intercept: F,
    /// RMS residual in log10 space.
    pub residual: F,
    pub points: usize,
}

/// Fits a straight line through the positive points with `x` inside
/// `[lo, hi]`, in log10-log10 coordinates.
pub fn fit_log_log<F: Real>(xs: &[F], ys: &[F], range: (F, F)) -> Result<PowerLawFit<F>, StatsError> {
    let (lo, hi) = range;
    let pts: Vec<(F, F)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x >= lo && **x <= hi && **x > F::zero() && **y > F::zero())
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if pts.len() < 3 {
        return Err(StatsError::InsufficientData { found: pts.len() });
    }
    let n = F::from_count(pts.len() as u64);
    let mx = pts.iter().fold(F::zero(), |a, p| a + p.0) / n;
    let my = pts.iter().fold(F::zero(), |a, p| a + p.1) / n;
    let sxx = pts.iter().fold(F::zero(), |a, p| a + (p.0 - mx) * (p.0 - mx));
    let sxy = pts.iter().fold(F::zero(), |a, p| a + (p.0 - mx) * (p.1 - my));
    if sxx == F::zero() {
        return Err(StatsError::InsufficientData { found: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = pts.iter().fold(F::zero(), |a, p| {
        let r = p.1 - (intercept + slope * p.0);
        a + r * r
    });
    Ok(PowerLawFit {
        range,
        slope,
        intercept,
        residual: (sse / n).sqrt(),
        points: pts.len(),
    })
}

/// Binned density estimate: per-bin count divided by bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionEstimate<F> {
    pub bins: LogBins<F>,
    pub counts: Vec<u64>,
    pub densities: Vec<F>,
    pub fit: Option<PowerLawFit<F>>,
}

impl<F: Real> DistributionEstimate<F> {
    pub fn from_counts(bins: LogBins<F>, counts: Vec<u64>) -> Self {
        let densities = counts
            .iter()
            .zip(bins.widths())
            .map(|(&c, w)| F::from_count(c) / w)
            .collect();
        DistributionEstimate {
            bins,
            counts,
            densities,
            fit: None,
        }
    }

    pub fn centers(&self) -> Vec<F> {
        self.bins.centers()
    }

    pub fn mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn effective_index(&self) -> Option<F> {
        self.fit.map(|f| f.slope)
    }
}

/// Log-log slope of a density over `range`; the fit is also stored on `dist`.
pub fn fit_effective_index<F: Real>(
    dist: &mut DistributionEstimate<F>,
    range: (F, F),
) -> Result<PowerLawFit<F>, StatsError> {
    let fit = fit_log_log(&dist.centers(), &dist.densities, range)?;
    dist.fit = Some(fit);
    Ok(fit)
}

/// Joint (lifetime, scale) counts of completed incarnations.
#[derive(Debug, Clone, PartialEq)]
pub struct Hist2d<F> {
    pub lifetime_bins: LogBins<F>,
    pub scale_bins: LogBins<F>,
    /// Row-major: `counts[i * scale_bins.len() + j]`.
    pub counts: Vec<u64>,
}

impl<F: Real> Hist2d<F> {
    pub fn get(&self, lifetime_bin: usize, scale_bin: usize) -> u64 {
        self.counts[lifetime_bin * self.scale_bins.len() + scale_bin]
    }

    pub fn lifetime_marginal(&self) -> Vec<u64> {
        self.counts
            .chunks(self.scale_bins.len())
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn scale_marginal(&self) -> Vec<u64> {
        let cols = self.scale_bins.len();
        (0..cols)
            .map(|j| self.counts.iter().skip(j).step_by(cols).sum())
            .collect()
    }

    /// Adds another run's counts on identical bins.
    pub fn merge(&mut self, other: &Hist2d<F>) {
        assert_eq!(self.lifetime_bins, other.lifetime_bins);
        assert_eq!(self.scale_bins, other.scale_bins);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

pub fn lifetime_scale_hist2d<F: Real>(
    deaths: &[DeathEvent],
    lifetime_bins: LogBins<F>,
    scale_bins: LogBins<F>,
) -> Hist2d<F> {
    let cols = scale_bins.len();
    let mut counts = vec![0u64; lifetime_bins.len() * cols];
    for d in deaths {
        let li = lifetime_bins.index_of(F::from_count(d.lifetime as u64));
        let si = scale_bins.index_of(F::from_count(d.scale as u64));
        if let (Some(i), Some(j)) = (li, si) {
            counts[i * cols + j] += 1;
        }
    }
    Hist2d {
        lifetime_bins,
        scale_bins,
        counts,
    }
}

/// Completed-lifetime distribution with its complementary cumulative form.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeDistribution<F> {
    pub density: DistributionEstimate<F>,
    /// `P(L > bin centre)` over completed lifetimes.
    pub ccdf: Vec<F>,
    pub ccdf_fit: Option<PowerLawFit<F>>,
    /// Incarnations still alive at the end of the data, not in the density.
    pub censored: usize,
    sorted: Vec<usize>,
}

impl<F: Real> LifetimeDistribution<F> {
    /// Fraction of completed lifetimes strictly greater than `x`.
    pub fn ccdf_at(&self, x: F) -> F {
        if self.sorted.is_empty() {
            return F::zero();
        }
        let at_most = self.sorted.partition_point(|&l| F::from_count(l as u64) <= x);
        F::from_count((self.sorted.len() - at_most) as u64) / F::from_count(self.sorted.len() as u64)
    }

    pub fn completed(&self) -> usize {
        self.sorted.len()
    }

    pub fn fit_ccdf(&mut self, range: (F, F)) -> Result<PowerLawFit<F>, StatsError> {
        let fit = fit_log_log(&self.density.centers(), &self.ccdf, range)?;
        self.ccdf_fit = Some(fit);
        Ok(fit)
    }
}

pub fn lifetime_hist<F: Real>(deaths: &[DeathEvent], bins: LogBins<F>, censored: usize) -> LifetimeDistribution<F> {
    let mut sorted: Vec<usize> = deaths.iter().map(|d| d.lifetime).collect();
    sorted.sort_unstable();
    let counts = bins.count(sorted.iter().map(|&l| F::from_count(l as u64)));
    let density = DistributionEstimate::from_counts(bins, counts);
    let mut dist = LifetimeDistribution {
        ccdf: Vec::new(),
        density,
        ccdf_fit: None,
        censored,
        sorted,
    };
    dist.ccdf = dist.density.centers().into_iter().map(|c| dist.ccdf_at(c)).collect();
    dist
}

/// Number of deaths at each tick that saw at least one, in tick order.
pub fn deaths_per_tick(deaths: &[DeathEvent]) -> Vec<(usize, u64)> {
    let mut per: BTreeMap<usize, u64> = BTreeMap::new();
    for d in deaths {
        *per.entry(d.tick).or_default() += 1;
    }
    per.into_iter().collect()
}

/// Distribution of the per-tick death count over ticks with at least one
/// death. Counts are integral, so bins are unit-wide and centred on 1, 2, ....
#[derive(Debug, Clone, PartialEq)]
pub struct DeathRateDistribution<F> {
    pub density: DistributionEstimate<F>,
    pub ticks_with_deaths: usize,
    pub ticks_without_deaths: usize,
}

impl<F: Real> DeathRateDistribution<F> {
    /// `(count, density)` pairs for every count value `1..=max`.
    pub fn rows(&self) -> impl Iterator<Item = (u64, F)> + '_ {
        self.density
            .densities
            .iter()
            .enumerate()
            .map(|(i, d)| (i as u64 + 1, *d))
    }
}

pub fn deaths_per_tick_hist<F: Real>(deaths: &[DeathEvent], total_ticks: usize) -> DeathRateDistribution<F> {
    let per = deaths_per_tick(deaths);
    let max = per.iter().map(|p| p.1).max().unwrap_or(1);
    let half = F::lit(0.5);
    let edges = (0..=max).map(|k| F::from_count(k) + half).collect();
    let bins = LogBins::from_edges(edges).expect("unit bins are increasing");
    let mut counts = vec![0u64; max as usize];
    for &(_, c) in &per {
        counts[c as usize - 1] += 1;
    }
    DeathRateDistribution {
        density: DistributionEstimate::from_counts(bins, counts),
        ticks_with_deaths: per.len(),
        ticks_without_deaths: total_ticks.saturating_sub(per.len()),
    }
}

/// Fit ranges and log-log slopes reported for the three population types,
/// used as default fit ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexPreset {
    pub label: &'static str,
    pub lifetime_range: (f64, f64),
    pub lifetime_index: f64,
    pub deathrate_range: (f64, f64),
    pub deathrate_index: f64,
}

pub const NON_INTERACTING: IndexPreset = IndexPreset {
    label: "non-interacting",
    lifetime_range: (100.0, 10_000.0),
    lifetime_index: -0.50,
    deathrate_range: (1.0, 11.27),
    deathrate_index: -0.73,
};

pub const BM_TF: IndexPreset = IndexPreset {
    label: "BM-TF",
    lifetime_range: (17.0, 10_000.0),
    lifetime_index: -0.30,
    deathrate_range: (1.0, 11.64),
    deathrate_index: -0.83,
};

pub const RM_TF: IndexPreset = IndexPreset {
    label: "RM-TF",
    lifetime_range: (100.0, 10_000.0),
    lifetime_index: -0.40,
    deathrate_range: (1.0, 11.75),
    deathrate_index: -0.50,
};

impl IndexPreset {
    pub fn for_strategy(strategy: Strategy) -> IndexPreset {
        match strategy {
            Strategy::Independent => NON_INTERACTING,
            Strategy::Bm => BM_TF,
            Strategy::Rm | Strategy::BmRm => RM_TF,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn death(tick: usize, lifetime: usize, scale: usize) -> DeathEvent {
        DeathEvent {
            tick,
            lifetime,
            scale,
            agent_id: 0,
            generation: 0,
        }
    }

    #[test]
    fn fresh_population_sample() {
        let u = vec![10i64; 5];
        let b = vec![0usize; 5];
        let s = sample_transient(
            PopulationView {
                utilities: &u,
                birth_ticks: &b,
            },
            0,
            0,
            0.0,
        );
        assert_eq!(s.mean_utility, 10.0);
        assert_eq!(s.mean_age, 0.0);
    }

    #[test]
    fn two_agent_sample() {
        let s = sample_transient(
            PopulationView {
                utilities: &[9, 11],
                birth_ticks: &[0, 0],
            },
            100,
            0,
            0.0,
        );
        assert_eq!(s.mean_utility, 10.0);
        assert_eq!(s.mean_age, 100.0);
        let s = sample_transient(
            PopulationView {
                utilities: &[10, 30],
                birth_ticks: &[100, 0],
            },
            100,
            1,
            0.0,
        );
        assert_eq!(s.mean_utility, 20.0);
        assert_eq!(s.mean_age, 50.0);
    }

    #[test]
    fn pa_examples() {
        let pa: f64 = prediction_accuracy(3.5e5, 9_000_000).unwrap();
        assert!((pa - 0.519_444_444).abs() < 1e-6);
        assert_eq!(prediction_accuracy(0.0f64, 10).unwrap(), 0.5);
        assert_eq!(prediction_accuracy(10.0f64, 10).unwrap(), 1.0);
        assert_eq!(prediction_accuracy(1.0f32, 0), Err(StatsError::ZeroHorizon));
    }

    #[test]
    fn log_bins_cover_range() {
        let bins = LogBins::<f64>::decades(1.0, 1000.0).unwrap();
        assert_eq!(bins.len(), 31);
        assert_eq!(bins.index_of(1.0), Some(0));
        assert_eq!(bins.index_of(1000.0), Some(30));
        assert_eq!(bins.index_of(0.5), None);
        assert!(LogBins::<f64>::from_edges(vec![1.0, 1.0]).is_err());
        assert!(LogBins::<f64>::decades(0.0, 1.0).is_err());
    }

    #[test]
    fn flat_density_has_zero_slope() {
        let bins = LogBins::<f64>::decades(1.0, 1000.0).unwrap();
        let xs = bins.centers();
        let ys = vec![4.2; xs.len()];
        let fit = fit_log_log(&xs, &ys, (1.0, 1000.0)).unwrap();
        assert!(fit.slope.abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [1.0, 0.0, 1.0];
        assert_eq!(
            fit_log_log(&xs, &ys, (0.5, 5.0)),
            Err(StatsError::InsufficientData { found: 2 })
        );
    }

    #[test]
    fn lifetime_counts_and_ccdf() {
        let deaths = [death(10, 10, 5), death(20, 10, 5), death(300, 100, 5)];
        let bins = LogBins::<f64>::decades(1.0, 1000.0).unwrap();
        let dist = lifetime_hist(&deaths, bins.clone(), 2);
        let c10 = dist.density.counts[bins.index_of(10.0).unwrap()];
        let c100 = dist.density.counts[bins.index_of(100.0).unwrap()];
        assert_eq!((c10, c100), (2, 1));
        assert_eq!(dist.ccdf_at(9.0), 1.0);
        assert!((dist.ccdf_at(10.0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(dist.ccdf_at(100.0), 0.0);
        assert_eq!(dist.censored, 2);
        assert_eq!(dist.density.mass(), 3);
    }

    #[test]
    fn deathrate_counting() {
        let deaths = [death(5, 1, 1), death(5, 2, 1), death(9, 3, 1)];
        let d: DeathRateDistribution<f64> = deaths_per_tick_hist(&deaths, 10);
        assert_eq!(deaths_per_tick(&deaths), vec![(5, 2), (9, 1)]);
        assert_eq!(d.density.counts, vec![1, 1]);
        assert_eq!(d.ticks_with_deaths, 2);
        assert_eq!(d.ticks_without_deaths, 8);

        let single = [death(1, 1, 1), death(2, 1, 1), death(4, 1, 1)];
        let d: DeathRateDistribution<f64> = deaths_per_tick_hist(&single, 5);
        assert_eq!(d.density.counts, vec![3]);
        assert_eq!(d.rows().collect::<Vec<_>>(), vec![(1, 3.0)]);
    }

    #[test]
    fn hist2d_basics() {
        let lb = LogBins::<f64>::decades(1.0, 1e4).unwrap();
        let sb = LogBins::<f64>::decades(1.0, 1e5).unwrap();
        let h = lifetime_scale_hist2d(&[death(300, 250, 1000)], lb.clone(), sb.clone());
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
        assert_eq!(h.get(lb.index_of(250.0).unwrap(), sb.index_of(1000.0).unwrap()), 1);
        let empty = lifetime_scale_hist2d(&[], lb, sb);
        assert!(empty.counts.iter().all(|c| *c == 0));
    }

    #[test]
    fn table_presets() {
        assert_eq!(IndexPreset::for_strategy(Strategy::Independent).lifetime_index, -0.50);
        assert_eq!(IndexPreset::for_strategy(Strategy::Bm).deathrate_range, (1.0, 11.64));
        assert_eq!(IndexPreset::for_strategy(Strategy::Rm).deathrate_index, -0.50);
    }

    fn arb_deaths() -> impl proptest::strategy::Strategy<Value = Vec<DeathEvent>> {
        proptest::collection::vec((0usize..500, 1usize..5000, 1usize..100_000), 0..200)
            .prop_map(|v| v.into_iter().map(|(t, l, s)| death(t, l, s)).collect())
    }

    proptest! {
        #[test]
        fn exact_power_law_is_recovered(slope in -3.0f64..1.0, lo_exp in 0.0f64..2.0, decades in 1.0f64..3.0) {
            let lo = 10f64.powf(lo_exp);
            let hi = lo * 10f64.powf(decades);
            let bins = LogBins::decades(lo, hi).unwrap();
            let xs = bins.centers();
            let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(slope)).collect();
            let fit = fit_log_log(&xs, &ys, (lo, hi)).unwrap();
            prop_assert!((fit.slope - slope).abs() < 1e-9);
            prop_assert!(fit.residual < 1e-9);
        }

        #[test]
        fn pa_is_affine(u in -1e6f64..1e6, delta in -1e4f64..1e4, t1 in 1usize..10_000_000) {
            let a = prediction_accuracy(u + 2.0 * delta, t1).unwrap();
            let b = prediction_accuracy(u, t1).unwrap();
            prop_assert!(((a - b) - delta / t1 as f64).abs() < 1e-9);
        }

        #[test]
        fn histograms_ignore_event_order(mut deaths in arb_deaths(), seed in any::<u64>()) {
            let lb = LogBins::<f64>::decades(1.0, 1e4).unwrap();
            let sb = LogBins::<f64>::decades(1.0, 1e5).unwrap();
            let before = (
                lifetime_hist(&deaths, lb.clone(), 0),
                deaths_per_tick_hist::<f64>(&deaths, 500),
                lifetime_scale_hist2d(&deaths, lb.clone(), sb.clone()),
            );
            let n = deaths.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    deaths.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            prop_assert_eq!(before.0, lifetime_hist(&deaths, lb.clone(), 0));
            prop_assert_eq!(before.1, deaths_per_tick_hist::<f64>(&deaths, 500));
            prop_assert_eq!(before.2, lifetime_scale_hist2d(&deaths, lb, sb));
        }

        #[test]
        fn marginals_match_1d(deaths in arb_deaths()) {
            let lb = LogBins::<f64>::decades(1.0, 1e4).unwrap();
            let sb = LogBins::<f64>::decades(1.0, 1e5).unwrap();
            let h = lifetime_scale_hist2d(&deaths, lb.clone(), sb.clone());
            let l1 = lifetime_hist(&deaths, lb.clone(), 0);
            prop_assert_eq!(h.lifetime_marginal(), l1.density.counts);
            prop_assert_eq!(h.scale_marginal(), sb.count(deaths.iter().map(|d| d.scale as f64)));
            let per_tick: u64 = deaths_per_tick(&deaths).iter().map(|p| p.1).sum();
            prop_assert_eq!(per_tick as usize, deaths.len());
        }
    }
}
