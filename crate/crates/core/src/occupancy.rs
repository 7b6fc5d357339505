//! Occupancy statistics: step changes, state/gain/loss tallies per subdomain
//! and the pooled per-kind transition probabilities.
//!
//! Gains and losses are tagged with the state *after* the step, so
//! `delta_plus[i][j]` counts steps that arrived at `j` from `j - 1`. The
//! `departures` tally records the state *before* each counted step; pooling
//! under [`Convention::FromState`] uses it to turn the post-state tags into
//! probabilities of leaving a given state.

use crate::domain::{SubdomainKind, SUBDOMAINS};
use crate::dynamics::OccupancySeries;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest tolerated rare-event fraction per subdomain-step.
pub const MAX_RARE_EVENT_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccupancyError {
    #[error("counter shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("series needs at least two samples, got {0}")]
    TooShort(usize),
    #[error("rare-event fraction {fraction:.3e} exceeds {MAX_RARE_EVENT_FRACTION:e}; decrease dt")]
    TooManyRareEvents { fraction: f64 },
}

/// Per-step changes `c_i(t_k) = eta_i(t_k) - eta_i(t_{k-1})`, k = 1..=N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaSeries {
    pub changes: Vec<[i8; SUBDOMAINS]>,
    /// Number of (subdomain, step) pairs with |c| > 1.
    pub rare_events: u64,
}

pub fn delta_series(eta: &OccupancySeries) -> Result<DeltaSeries, OccupancyError> {
    if eta.len() < 2 {
        return Err(OccupancyError::TooShort(eta.len()));
    }
    let mut rare_events = 0;
    let changes = eta
        .samples
        .windows(2)
        .map(|w| {
            let mut c = [0i8; SUBDOMAINS];
            for i in 0..SUBDOMAINS {
                c[i] = w[1][i] as i8 - w[0][i] as i8;
                if c[i].abs() > 1 {
                    rare_events += 1;
                }
            }
            c
        })
        .collect();
    Ok(DeltaSeries { changes, rare_events })
}

/// State, gain and loss tallies for the nine subdomains over states `0..=n_states`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyCounters {
    pub n_states: usize,
    pub total_steps: u64,
    /// `g[i][j]`: steps at which subdomain `i + 1` held `j` particles.
    pub g: Vec<Vec<u64>>,
    pub delta_plus: Vec<Vec<u64>>,
    pub delta_minus: Vec<Vec<u64>>,
    /// `departures[i][j]`: counted steps that started in state `j`.
    pub departures: Vec<Vec<u64>>,
    pub rare_events: u64,
    pub rare_excluded: Vec<u64>,
    pub above_cap: Vec<u64>,
}

impl OccupancyCounters {
    pub fn zero(n_states: usize) -> Self {
        let table = || vec![vec![0u64; n_states + 1]; SUBDOMAINS];
        Self {
            n_states,
            total_steps: 0,
            g: table(),
            delta_plus: table(),
            delta_minus: table(),
            departures: table(),
            rare_events: 0,
            rare_excluded: vec![0; SUBDOMAINS],
            above_cap: vec![0; SUBDOMAINS],
        }
    }

    /// Record one step from `prev` to `next`.
    pub fn record_step(&mut self, prev: &[u8; SUBDOMAINS], next: &[u8; SUBDOMAINS]) {
        self.total_steps += 1;
        let cap = self.n_states;
        for i in 0..SUBDOMAINS {
            let (from, to) = (prev[i] as usize, next[i] as usize);
            let c = to as i64 - from as i64;
            if c.abs() > 1 {
                self.rare_events += 1;
                self.rare_excluded[i] += 1;
                continue;
            }
            if from <= cap {
                self.departures[i][from] += 1;
            }
            if to > cap {
                self.above_cap[i] += 1;
                continue;
            }
            self.g[i][to] += 1;
            match c {
                1 => self.delta_plus[i][to] += 1,
                -1 => self.delta_minus[i][to] += 1,
                _ => {}
            }
        }
    }

    fn check_shape(&self, other: &Self) -> Result<(), OccupancyError> {
        if self.n_states != other.n_states {
            return Err(OccupancyError::ShapeMismatch(format!(
                "n_states {} vs {}",
                self.n_states, other.n_states
            )));
        }
        let shape_ok = |t: &Vec<Vec<u64>>| t.len() == SUBDOMAINS && t.iter().all(|r| r.len() == self.n_states + 1);
        for c in [self, other] {
            if ![&c.g, &c.delta_plus, &c.delta_minus, &c.departures].into_iter().all(shape_ok)
                || c.rare_excluded.len() != SUBDOMAINS
                || c.above_cap.len() != SUBDOMAINS
            {
                return Err(OccupancyError::ShapeMismatch("malformed tables".into()));
            }
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn merge(&self, other: &Self) -> Result<Self, OccupancyError> {
        self.check_shape(other)?;
        let add = |a: &Vec<Vec<u64>>, b: &Vec<Vec<u64>>| -> Vec<Vec<u64>> {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
        };
        let add1 = |a: &Vec<u64>, b: &Vec<u64>| a.iter().zip(b).map(|(p, q)| p + q).collect();
        Ok(Self {
            n_states: self.n_states,
            total_steps: self.total_steps + other.total_steps,
            g: add(&self.g, &other.g),
            delta_plus: add(&self.delta_plus, &other.delta_plus),
            delta_minus: add(&self.delta_minus, &other.delta_minus),
            departures: add(&self.departures, &other.departures),
            rare_events: self.rare_events + other.rare_events,
            rare_excluded: add1(&self.rare_excluded, &other.rare_excluded),
            above_cap: add1(&self.above_cap, &other.above_cap),
        })
    }

    /// Restrict to states `0..=n_states`; higher states move into `above_cap`.
    pub fn truncated(&self, n_states: usize) -> Self {
        assert!(n_states <= self.n_states, "cannot widen counters from {} to {n_states}", self.n_states);
        let cut = |t: &Vec<Vec<u64>>| -> Vec<Vec<u64>> { t.iter().map(|r| r[..=n_states].to_vec()).collect() };
        let above_cap = (0..SUBDOMAINS)
            .map(|i| self.above_cap[i] + self.g[i][n_states + 1..].iter().sum::<u64>())
            .collect();
        Self {
            n_states,
            total_steps: self.total_steps,
            g: cut(&self.g),
            delta_plus: cut(&self.delta_plus),
            delta_minus: cut(&self.delta_minus),
            departures: cut(&self.departures),
            rare_events: self.rare_events,
            rare_excluded: self.rare_excluded.clone(),
            above_cap,
        }
    }

    /// Rare events per subdomain-step.
    pub fn rare_event_fraction(&self) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        self.rare_events as f64 / (self.total_steps as f64 * SUBDOMAINS as f64)
    }

    pub fn check_rare_events(&self) -> Result<(), OccupancyError> {
        let fraction = self.rare_event_fraction();
        if fraction > MAX_RARE_EVENT_FRACTION {
            return Err(OccupancyError::TooManyRareEvents { fraction });
        }
        Ok(())
    }

    /// Pooled state-occupancy distribution of a kind, `G[kind][j] / sum`.
    pub fn empirical_distribution(&self, kind: SubdomainKind) -> Vec<f64> {
        let mut pooled = vec![0u64; self.n_states + 1];
        for &i in kind.members() {
            for (acc, &x) in pooled.iter_mut().zip(&self.g[i - 1]) {
                *acc += x;
            }
        }
        let total: u64 = pooled.iter().sum();
        pooled
            .into_iter()
            .map(|x| if total == 0 { 0.0 } else { x as f64 / total as f64 })
            .collect()
    }

    fn pooled(&self, table: &[Vec<u64>], kind: SubdomainKind, j: usize) -> u64 {
        kind.members().iter().map(|&i| table[i - 1][j]).sum()
    }
}

/// Streaming form of [`accumulate`] fed one sample at a time.
#[derive(Debug, Clone)]
pub struct CounterAccumulator {
    counters: OccupancyCounters,
    prev: Option<[u8; SUBDOMAINS]>,
}

impl CounterAccumulator {
    pub fn new(n_states: usize) -> Self {
        Self { counters: OccupancyCounters::zero(n_states), prev: None }
    }

    pub fn push(&mut self, eta: &[u8; SUBDOMAINS]) {
        if let Some(prev) = self.prev {
            self.counters.record_step(&prev, eta);
        }
        self.prev = Some(*eta);
    }

    pub fn finish(self) -> OccupancyCounters {
        self.counters
    }
}

/// Tally a full occupancy series over steps k = 1..=N.
pub fn accumulate(eta: &OccupancySeries, n_states: usize) -> Result<OccupancyCounters, OccupancyError> {
    if eta.len() < 2 {
        return Err(OccupancyError::TooShort(eta.len()));
    }
    let mut acc = CounterAccumulator::new(n_states);
    for s in &eta.samples {
        acc.push(s);
    }
    Ok(acc.finish())
}

pub fn merge(a: &OccupancyCounters, b: &OccupancyCounters) -> Result<OccupancyCounters, OccupancyError> {
    a.merge(b)
}

/// How post-state tagged gain/loss counts become row probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Row `j` holds P(j -> j±1): arrivals at `j±1` from `j` over steps started in `j`.
    #[default]
    FromState,
    /// Ratios taken directly at the post-transition state: `delta±[j] / G[j]`.
    PostState,
}

/// Birth–death probabilities for one subdomain kind over states `0..=n_states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindProbabilities {
    pub kind: SubdomainKind,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub p_stay: Vec<f64>,
    /// False where the pooled denominator was zero; such rows have `p_stay = 1`.
    pub observed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledProbabilities {
    pub n_states: usize,
    pub convention: Convention,
    pub kinds: Vec<KindProbabilities>,
}

impl PooledProbabilities {
    pub fn kind(&self, kind: SubdomainKind) -> &KindProbabilities {
        &self.kinds[kind.ordinal()]
    }
}

/// Pool counters of the subdomains of each kind (ratio of sums).
pub fn pool(counters: &OccupancyCounters, convention: Convention) -> PooledProbabilities {
    let ns = counters.n_states;
    let kinds = SubdomainKind::ALL
        .into_iter()
        .map(|kind| {
            let mut kp = KindProbabilities {
                kind,
                p_plus: vec![0.0; ns + 1],
                p_minus: vec![0.0; ns + 1],
                p_stay: vec![1.0; ns + 1],
                observed: vec![false; ns + 1],
            };
            for j in 0..=ns {
                let (up, down, denom) = match convention {
                    Convention::PostState => (
                        counters.pooled(&counters.delta_plus, kind, j),
                        counters.pooled(&counters.delta_minus, kind, j),
                        counters.pooled(&counters.g, kind, j),
                    ),
                    Convention::FromState => (
                        if j < ns { counters.pooled(&counters.delta_plus, kind, j + 1) } else { 0 },
                        if j > 0 { counters.pooled(&counters.delta_minus, kind, j - 1) } else { 0 },
                        counters.pooled(&counters.departures, kind, j),
                    ),
                };
                if denom == 0 {
                    continue;
                }
                let d = denom as f64;
                kp.p_plus[j] = up as f64 / d;
                kp.p_minus[j] = down as f64 / d;
                kp.p_stay[j] = denom.saturating_sub(up + down) as f64 / d;
                kp.observed[j] = true;
            }
            kp
        })
        .collect();
    PooledProbabilities { n_states: ns, convention, kinds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Series where subdomain 1 follows `values` and the rest stay at 3.
    fn series_one(values: &[u8]) -> OccupancySeries {
        OccupancySeries {
            samples: values
                .iter()
                .map(|&v| {
                    let mut s = [3u8; SUBDOMAINS];
                    s[0] = v;
                    s
                })
                .collect(),
        }
    }

    #[test]
    fn deltas() {
        let d = delta_series(&series_one(&[3, 3, 4, 3])).unwrap();
        assert_eq!(d.changes.iter().map(|c| c[0]).collect::<Vec<_>>(), vec![0, 1, -1]);
        assert_eq!(d.rare_events, 0);
        let d = delta_series(&series_one(&[3, 3, 3])).unwrap();
        assert!(d.changes.iter().all(|c| c.iter().all(|&x| x == 0)));
        let d = delta_series(&series_one(&[3, 5])).unwrap();
        assert_eq!(d.changes[0][0], 2);
        assert_eq!(d.rare_events, 1);
        assert!(delta_series(&series_one(&[3])).is_err());
    }

    #[test]
    fn accumulate_examples() {
        let c = accumulate(&series_one(&[3, 3, 3]), 13).unwrap();
        assert_eq!(c.g[0][3], 2);
        assert!(c.delta_plus[0].iter().chain(&c.delta_minus[0]).all(|&x| x == 0));

        let c = accumulate(&series_one(&[3, 4]), 13).unwrap();
        assert_eq!(c.g[0][4], 1);
        assert_eq!(c.delta_plus[0][4], 1);
        assert_eq!(c.departures[0][3], 1);

        let c = accumulate(&series_one(&[3, 5, 5, 4]), 13).unwrap();
        assert_eq!(c.rare_events, 1);
        assert_eq!(c.rare_excluded[0], 1);
        assert_eq!(c.g[0][5], 1);
        assert_eq!(c.g[0][4], 1);
        assert_eq!(c.delta_minus[0][4], 1);
        assert_eq!(c.g[0].iter().sum::<u64>() + c.rare_excluded[0], 3);
    }

    #[test]
    fn states_above_cap_are_tallied_separately() {
        let c = accumulate(&series_one(&[4, 5, 6, 5]), 5).unwrap();
        assert_eq!(c.above_cap[0], 1);
        assert_eq!(c.g[0][5], 2);
        assert_eq!(c.delta_minus[0][5], 1);
        assert_eq!(c.departures[0][5], 1);
        assert_eq!(c.g[0].iter().sum::<u64>() + c.above_cap[0], 3);
    }

    /// Brute-force recount for one subdomain.
    fn recount(values: &[u8], ns: usize) -> (Vec<u64>, Vec<u64>, Vec<u64>, u64) {
        let (mut g, mut dp, mut dm, mut rare) = (vec![0; ns + 1], vec![0; ns + 1], vec![0; ns + 1], 0);
        for k in 1..values.len() {
            let c = values[k] as i32 - values[k - 1] as i32;
            let j = values[k] as usize;
            if c.abs() > 1 {
                rare += 1;
            } else if j <= ns {
                g[j] += 1;
                if c == 1 {
                    dp[j] += 1;
                }
                if c == -1 {
                    dm[j] += 1;
                }
            }
        }
        (g, dp, dm, rare)
    }

    proptest! {
        #[test]
        fn accumulate_matches_recount(values in prop::collection::vec(0u8..8, 2..200)) {
            let c = accumulate(&series_one(&values), 6).unwrap();
            let (g, dp, dm, rare) = recount(&values, 6);
            prop_assert_eq!(&c.g[0], &g);
            prop_assert_eq!(&c.delta_plus[0], &dp);
            prop_assert_eq!(&c.delta_minus[0], &dm);
            prop_assert_eq!(c.rare_events, rare);
            prop_assert_eq!(c.g[0].iter().sum::<u64>() + c.rare_excluded[0] + c.above_cap[0], c.total_steps);
            prop_assert_eq!(c.delta_plus[0][0], 0);
            for j in 0..=6 {
                prop_assert!(c.delta_plus[0][j] <= c.g[0][j]);
                prop_assert!(c.delta_minus[0][j] <= c.g[0][j]);
            }
        }

        #[test]
        fn merge_is_concatenation(
            a in prop::collection::vec(0u8..8, 2..100),
            b in prop::collection::vec(0u8..8, 2..100),
        ) {
            let ca = accumulate(&series_one(&a), 6).unwrap();
            let cb = accumulate(&series_one(&b), 6).unwrap();
            let ab = ca.merge(&cb).unwrap();
            prop_assert_eq!(&ab, &cb.merge(&ca).unwrap());
            // same as counting both event sets jointly
            let (g1, p1, m1, r1) = recount(&a, 6);
            let (g2, p2, m2, r2) = recount(&b, 6);
            let sum = |x: Vec<u64>, y: Vec<u64>| x.iter().zip(&y).map(|(p, q)| p + q).collect::<Vec<_>>();
            prop_assert_eq!(&ab.g[0], &sum(g1, g2));
            prop_assert_eq!(&ab.delta_plus[0], &sum(p1, p2));
            prop_assert_eq!(&ab.delta_minus[0], &sum(m1, m2));
            prop_assert_eq!(ab.rare_events, r1 + r2);
        }

        #[test]
        fn truncation_equals_direct_accumulation(values in prop::collection::vec(0u8..10, 2..200), ns in 1usize..9) {
            let wide = accumulate(&series_one(&values), 12).unwrap().truncated(ns);
            let direct = accumulate(&series_one(&values), ns).unwrap();
            prop_assert_eq!(wide, direct);
        }

        #[test]
        fn pooled_rows_are_probabilities(values in prop::collection::vec(0u8..8, 2..300)) {
            let c = accumulate(&series_one(&values), 7).unwrap();
            for conv in [Convention::FromState, Convention::PostState] {
                let p = pool(&c, conv);
                for kp in &p.kinds {
                    for j in 0..=7 {
                        let s = kp.p_plus[j] + kp.p_minus[j] + kp.p_stay[j];
                        prop_assert!((s - 1.0).abs() < 1e-12);
                        for x in [kp.p_plus[j], kp.p_minus[j], kp.p_stay[j]] {
                            prop_assert!((0.0..=1.0).contains(&x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn merge_identity_and_shape_errors() {
        let x = accumulate(&series_one(&[3, 4, 3, 2]), 13).unwrap();
        assert_eq!(x.merge(&OccupancyCounters::zero(13)).unwrap(), x);
        assert!(x.merge(&OccupancyCounters::zero(12)).is_err());
    }

    #[test]
    fn pool_arithmetic_post_state() {
        let mut c = OccupancyCounters::zero(5);
        c.g[4][2] = 4;
        c.delta_plus[4][2] = 1;
        c.delta_minus[4][2] = 1;
        let p = pool(&c, Convention::PostState);
        let kc = p.kind(SubdomainKind::Center);
        assert_eq!((kc.p_plus[2], kc.p_minus[2], kc.p_stay[2]), (0.25, 0.25, 0.5));
        assert!(kc.observed[2]);
        assert!(!kc.observed[3]);
        assert_eq!(kc.p_stay[3], 1.0);
    }

    #[test]
    fn pool_never_moving_state_stays() {
        let c = accumulate(&series_one(&[2, 2, 2, 2]), 5).unwrap();
        for conv in [Convention::FromState, Convention::PostState] {
            let p = pool(&c, conv);
            assert_eq!(p.kind(SubdomainKind::Corner).p_stay[2], 1.0);
        }
    }

    #[test]
    fn pooling_is_ratio_of_sums() {
        let mut c = OccupancyCounters::zero(4);
        // corner subdomains 1 and 3 with very different sample sizes
        c.g[0][2] = 10;
        c.delta_plus[0][2] = 5;
        c.g[2][2] = 90;
        c.delta_plus[2][2] = 9;
        let p = pool(&c, Convention::PostState);
        let ratio_of_sums = 14.0 / 100.0;
        let mean_of_ratios = (0.5 + 0.1) / 2.0;
        assert_eq!(p.kind(SubdomainKind::Corner).p_plus[2], ratio_of_sums);
        assert_ne!(p.kind(SubdomainKind::Corner).p_plus[2], mean_of_ratios);
    }

    #[test]
    fn from_state_pooling_reads_departures() {
        // 2 -> 3 -> 2 -> 2 -> 1
        let c = accumulate(&series_one(&[2, 3, 2, 2, 1]), 5).unwrap();
        let p = pool(&c, Convention::FromState);
        let k = p.kind(SubdomainKind::Corner);
        // three steps started at 2: one up, one stay, one down
        assert!((k.p_plus[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((k.p_minus[2] - 1.0 / 3.0).abs() < 1e-15);
        // the three untouched corners sit at 3 for all four steps
        assert!((k.p_minus[3] - 1.0 / 13.0).abs() < 1e-15);
        assert!(!k.observed[1]);
    }

    #[test]
    fn counters_json_is_integers_only() {
        let c = accumulate(&series_one(&[3, 4, 3, 5]), 6).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains('.'));
        let back: OccupancyCounters = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
