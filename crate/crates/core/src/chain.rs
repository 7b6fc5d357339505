//! Tridiagonal birth–death transition matrices per subdomain kind, their
//! stationary distributions and the N_s calibration sweep.

use crate::domain::SubdomainKind;
use crate::fitstats::{fit_constrained, FitError, FitOptions};
use crate::occupancy::{pool, Convention, OccupancyCounters, PooledProbabilities};
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROW_SUM_TOL: f64 = 1e-12;
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Parameter change below which an N_s increase counts as stable.
pub const NS_STABILITY_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("negative entry {value} in row {row} of the {kind} matrix")]
    NegativeEntry { kind: SubdomainKind, row: usize, value: f64 },
    #[error("reducible chain: states {lo}..={hi} do not communicate with the rest")]
    Reducible { lo: usize, hi: usize },
    #[error("no observed states")]
    Empty,
    #[error("singular system")]
    Singular,
    #[error("stationary residual {0:e} exceeds {RESIDUAL_TOL:e}")]
    Residual(f64),
    #[error("detailed-balance oracle inapplicable at states {from}->{to}")]
    OracleInapplicable { from: usize, to: usize },
}

/// Row `j` holds `sub[j]` at column `j - 1`, `diag[j]` at `j` and `sup[j]` at `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub kind: SubdomainKind,
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub observed: Vec<bool>,
    /// Rows whose stay probability absorbed boundary leakage.
    pub adjusted_rows: Vec<usize>,
}

impl TransitionMatrix {
    /// Build directly from per-row (down, stay, up) triples; every row counts as observed.
    pub fn from_rows(kind: SubdomainKind, rows: &[[f64; 3]]) -> Self {
        let n = rows.len();
        Self {
            kind,
            sub: rows.iter().enumerate().map(|(j, r)| if j == 0 { 0.0 } else { r[0] }).collect(),
            diag: rows.iter().map(|r| r[1]).collect(),
            sup: rows.iter().enumerate().map(|(j, r)| if j + 1 == n { 0.0 } else { r[2] }).collect(),
            observed: vec![true; n],
            adjusted_rows: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn n_states(&self) -> usize {
        self.size() - 1
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col == row {
            self.diag[row]
        } else if col + 1 == row {
            self.sub[row]
        } else if col == row + 1 {
            self.sup[row]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size()).map(|j| self.sub[j] + self.diag[j] + self.sup[j]).collect()
    }

    /// `pi * P` for a row vector `pi`.
    pub fn left_multiply(&self, pi: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|j| {
                let mut v = pi[j] * self.diag[j];
                if j > 0 {
                    v += pi[j - 1] * self.sup[j - 1];
                }
                if j + 1 < n {
                    v += pi[j + 1] * self.sub[j + 1];
                }
                v
            })
            .collect()
    }

    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.left_multiply(pi).iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Assemble the tridiagonal matrix of one kind from pooled probabilities.
///
/// The first row has no down entry and the last no up entry; any probability
/// mass that pointed outside the matrix is moved onto the diagonal.
pub fn assemble(pooled: &PooledProbabilities, kind: SubdomainKind) -> Result<TransitionMatrix, ChainError> {
    let kp = pooled.kind(kind);
    let ns = pooled.n_states;
    let mut m = TransitionMatrix {
        kind,
        sub: vec![0.0; ns + 1],
        diag: vec![0.0; ns + 1],
        sup: vec![0.0; ns + 1],
        observed: kp.observed.clone(),
        adjusted_rows: Vec::new(),
    };
    for j in 0..=ns {
        let down = if j > 0 { kp.p_minus[j] } else { 0.0 };
        let up = if j < ns { kp.p_plus[j] } else { 0.0 };
        let leak = (kp.p_minus[j] - down) + (kp.p_plus[j] - up);
        let stay = kp.p_stay[j] + leak;
        if leak > 0.0 {
            debug!("{kind} row {j}: stay {} -> {stay} absorbs boundary leakage", kp.p_stay[j]);
            m.adjusted_rows.push(j);
        }
        for value in [down, stay, up] {
            if value < 0.0 {
                return Err(ChainError::NegativeEntry { kind, row: j, value });
            }
        }
        m.sub[j] = down;
        m.diag[j] = stay;
        m.sup[j] = up;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub kind: SubdomainKind,
    pub pi: Vec<f64>,
    pub residual: f64,
}

impl StationaryDistribution {
    pub fn mean(&self) -> f64 {
        self.pi.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }
}

/// The recurrent class among observed states: a maximal run of states linked
/// in both directions with no probability flowing out of it.
fn recurrent_class(p: &TransitionMatrix) -> Result<(usize, usize), ChainError> {
    let n = p.size();
    let mut closed = Vec::new();
    let mut lo = 0;
    while lo < n {
        let mut hi = lo;
        while hi + 1 < n && p.sup[hi] > 0.0 && p.sub[hi + 1] > 0.0 {
            hi += 1;
        }
        let leaks_down = lo > 0 && p.sub[lo] > 0.0;
        let leaks_up = hi + 1 < n && p.sup[hi] > 0.0;
        if !leaks_down && !leaks_up && p.observed[lo..=hi].iter().any(|&o| o) {
            closed.push((lo, hi));
        }
        lo = hi + 1;
    }
    match closed.as_slice() {
        [] => Err(ChainError::Empty),
        [only] => Ok(*only),
        [_, second, ..] => Err(ChainError::Reducible { lo: second.0, hi: second.1 }),
    }
}

/// Copy of `p` in which flow from an observed state into an unobserved one
/// (a state entered but never left in the data) stays on the diagonal.
/// Observed states with no unit-step exits (left only through excluded
/// multi-state jumps) are treated as unobserved, repeatedly, as long as
/// another observed state remains.
fn without_unobserved_leaks(p: &TransitionMatrix) -> TransitionMatrix {
    let mut q = p.clone();
    let n = q.size();
    loop {
        for j in 0..n {
            if !q.observed[j] {
                continue;
            }
            if j + 1 < n && !q.observed[j + 1] && q.sup[j] > 0.0 {
                warn!("{} row {j}: dropping flow into unobserved state {}", q.kind, j + 1);
                q.diag[j] += q.sup[j];
                q.sup[j] = 0.0;
            }
            if j > 0 && !q.observed[j - 1] && q.sub[j] > 0.0 {
                warn!("{} row {j}: dropping flow into unobserved state {}", q.kind, j - 1);
                q.diag[j] += q.sub[j];
                q.sub[j] = 0.0;
            }
        }
        if q.observed.iter().filter(|&&o| o).count() < 2 {
            return q;
        }
        let trapped: Vec<usize> =
            (0..n).filter(|&j| q.observed[j] && q.sub[j] == 0.0 && q.sup[j] == 0.0).collect();
        if trapped.is_empty() || trapped.len() == q.observed.iter().filter(|&&o| o).count() {
            return q;
        }
        for j in trapped {
            warn!("{} state {j}: never left by a unit step, treated as unobserved", q.kind);
            q.observed[j] = false;
        }
    }
}

/// Solve `pi = pi P`, `sum(pi) = 1` directly.
///
/// Unobserved states, and observed states never left by a unit step, get
/// zero mass; any other disconnection is an error.
pub fn stationary(p: &TransitionMatrix) -> Result<StationaryDistribution, ChainError> {
    let effective = without_unobserved_leaks(p);
    let p = &effective;
    let (lo, hi) = recurrent_class(p)?;
    let m = hi - lo + 1;
    // (P^T - I) restricted to the class, last equation replaced by normalisation
    let mut a = DMatrix::<f64>::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            a[(r, c)] = p.get(lo + c, lo + r) - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..m {
        a[(m - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let x = a.lu().solve(&rhs).ok_or(ChainError::Singular)?;
    let mut pi = vec![0.0; p.size()];
    for k in 0..m {
        pi[lo + k] = x[k];
    }
    let residual = p.residual(&pi);
    if residual > RESIDUAL_TOL {
        return Err(ChainError::Residual(residual));
    }
    Ok(StationaryDistribution { kind: p.kind, pi, residual })
}

/// Closed-form stationary distribution of a birth–death chain:
/// `pi[j+1] = pi[j] * up[j] / down[j+1]` over the observed states.
pub fn detailed_balance_oracle(p: &TransitionMatrix) -> Result<StationaryDistribution, ChainError> {
    let observed: Vec<usize> = (0..p.size()).filter(|&j| p.observed[j]).collect();
    let (&lo, &hi) = match (observed.first(), observed.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ChainError::Empty),
    };
    let mut pi = vec![0.0; p.size()];
    pi[lo] = 1.0;
    for j in lo..hi {
        if p.sub[j + 1] <= 0.0 || p.sup[j] <= 0.0 {
            return Err(ChainError::OracleInapplicable { from: j, to: j + 1 });
        }
        pi[j + 1] = pi[j] * p.sup[j] / p.sub[j + 1];
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    let residual = p.residual(&pi);
    Ok(StationaryDistribution { kind: p.kind, pi, residual })
}

/// Power iteration from the uniform vector over observed states, applying
/// `P^(2^k)` at round `k` (the matrix is squared between rounds) so slowly
/// mixing chains converge in a few dozen rounds.
pub fn power_iteration(p: &TransitionMatrix, tol: f64, max_rounds: usize) -> StationaryDistribution {
    let n_obs = p.observed.iter().filter(|&&o| o).count().max(1);
    let mut pi = DVector::from_iterator(
        p.size(),
        p.observed.iter().map(|&o| if o { 1.0 / n_obs as f64 } else { 0.0 }),
    )
    .transpose();
    let mut q = p.to_dense();
    for _ in 0..max_rounds {
        let mut next = &pi * &q;
        let total: f64 = next.iter().sum();
        next /= total;
        let change = (&next - &pi).amax();
        pi = next;
        if change < tol {
            break;
        }
        q = &q * &q;
    }
    let pi: Vec<f64> = pi.iter().copied().collect();
    let residual = p.residual(&pi);
    StationaryDistribution { kind: p.kind, pi, residual }
}

/// One row of the N_s calibration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsTrial {
    pub n_states: usize,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsCalibration {
    pub kind: SubdomainKind,
    pub chosen: usize,
    pub stabilized: bool,
    pub table: Vec<NsTrial>,
    /// Candidates whose chain or fit failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

fn fit_for_ns(
    counters: &OccupancyCounters,
    kind: SubdomainKind,
    ns: usize,
    convention: Convention,
    options: &FitOptions,
) -> Result<NsTrial, String> {
    let pooled = pool(&counters.truncated(ns), convention);
    let matrix = assemble(&pooled, kind).map_err(|e| e.to_string())?;
    let pi = stationary(&matrix).map_err(|e| e.to_string())?;
    let fit = fit_constrained(&pi.pi, ns, options).map_err(|e: FitError| e.to_string())?;
    Ok(NsTrial { n_states: ns, mu: fit.params.mu, sigma: fit.params.sigma })
}

/// Smallest candidate N_s whose fitted (mu, sigma) move by less than
/// [`NS_STABILITY_TOL`] when N_s grows by one.
///
/// The counters must have been accumulated with at least `max(candidates) + 1` states.
pub fn calibrate_ns(
    counters: &OccupancyCounters,
    kind: SubdomainKind,
    candidates: &[usize],
    convention: Convention,
    options: &FitOptions,
) -> NsCalibration {
    let mut sizes: Vec<usize> = candidates
        .iter()
        .flat_map(|&c| [c, c + 1])
        .filter(|&c| c >= 1 && c <= counters.n_states)
        .collect();
    sizes.sort_unstable();
    sizes.dedup();

    let mut table = Vec::new();
    let mut failures = Vec::new();
    for ns in sizes {
        match fit_for_ns(counters, kind, ns, convention, options) {
            Ok(t) => table.push(t),
            Err(e) => failures.push((ns, e)),
        }
    }

    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let lookup = |ns: usize| table.iter().find(|t| t.n_states == ns);
    for &c in &sorted {
        if let (Some(a), Some(b)) = (lookup(c), lookup(c + 1)) {
            if (a.mu - b.mu).abs() < NS_STABILITY_TOL && (a.sigma - b.sigma).abs() < NS_STABILITY_TOL {
                return NsCalibration { kind, chosen: c, stabilized: true, table, failures };
            }
        }
    }
    let chosen = sorted.last().copied().unwrap_or(counters.n_states);
    warn!("{kind}: no N_s candidate stabilised; using {chosen}");
    NsCalibration { kind, chosen, stabilized: false, table, failures }
}
