use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DofAllocation, NetworkConfig, RngStream};

use super::{
    check_necessary, check_sufficient, FeasibilityReport, SubsetGuard, DEFAULT_RANK_TRIALS,
};

/// Which test an allocation must pass to count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Converse bounds: the result is an upper bound on the optimal sum DoF.
    NecessaryBound,
    /// Rank-based sufficient test: the result is achievable.
    SufficientCertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Largest admissible `Π (N + 1)` over all users.
    pub budget: u128,
    pub trials: usize,
    /// Every allocation is tested on the same channel draws.
    pub seed: u64,
    pub guard: SubsetGuard,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 5_000_000,
            trials: DEFAULT_RANK_TRIALS,
            seed: 0,
            guard: SubsetGuard::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub mode: SearchMode,
    pub d_sum: usize,
    pub allocation: DofAllocation,
    pub report: FeasibilityReport,
}

/// Both searches side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityResult {
    pub necessary: SearchOutcome,
    pub sufficient: SearchOutcome,
    /// The achievable sum meets the converse bound.
    pub optimal: bool,
    pub gap: usize,
}

fn search_space(config: &NetworkConfig) -> u128 {
    config
        .n_alpha
        .iter()
        .chain(&config.n_beta)
        .fold(1u128, |acc, &n| acc.saturating_mul(n as u128 + 1))
}

/// All vectors `d` with `0 ≤ d_i ≤ caps_i` and `Σd = total`, in descending
/// lexicographic order.
fn compositions(caps: &[usize], total: usize) -> Vec<Vec<usize>> {
    fn rec(
        caps: &[usize],
        suffix_cap: &[usize],
        left: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let i = cur.len();
        if i == caps.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let rest = suffix_cap[i + 1];
        let hi = caps[i].min(left);
        let lo = left.saturating_sub(rest);
        for d in (lo..=hi).rev() {
            cur.push(d);
            rec(caps, suffix_cap, left - d, cur, out);
            cur.pop();
        }
    }
    let mut suffix_cap = vec![0; caps.len() + 1];
    for i in (0..caps.len()).rev() {
        suffix_cap[i] = suffix_cap[i + 1] + caps[i];
    }
    let mut out = Vec::new();
    if total <= suffix_cap[0] {
        rec(
            caps,
            &suffix_cap,
            total,
            &mut Vec::with_capacity(caps.len()),
            &mut out,
        );
    }
    out
}

/// Largest sum of streams whose allocation passes the test selected by `mode`.
///
/// Allocations are visited by descending sum, then descending lexicographic
/// order of `(d_α1, …, d_αK, d_β1, …, d_βL)`; the first one that passes is
/// returned. Sums above `max(M_α, M_β)` are skipped since both tests bound
/// the total by it. The all-zero allocation always passes, so the search
/// terminates.
pub fn search_max_sum_dof(
    config: &NetworkConfig,
    mode: SearchMode,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    config.validate()?;
    let size = search_space(config);
    if size > opts.budget {
        return Err(Error::BudgetExceeded {
            size,
            budget: opts.budget,
        });
    }
    opts.guard.check(config.k() + config.l())?;
    let k = config.k();
    let caps: Vec<usize> = config
        .n_alpha
        .iter()
        .chain(&config.n_beta)
        .copied()
        .collect();
    let top = caps
        .iter()
        .sum::<usize>()
        .min(config.m_alpha.max(config.m_beta));
    let rng = RngStream::new(opts.seed, 0);

    let test = |dof: &DofAllocation| -> Result<Option<FeasibilityReport>> {
        if dof.alpha_total() > config.m_alpha || dof.beta_total() > config.m_beta {
            return Ok(None);
        }
        let report = match mode {
            SearchMode::NecessaryBound => check_necessary(config, dof, opts.guard)?,
            SearchMode::SufficientCertified => check_sufficient(config, dof, opts.trials, &rng)?,
        };
        Ok(report.verdict.then_some(report))
    };

    for total in (0..=top).rev() {
        let candidates: Vec<DofAllocation> = compositions(&caps, total)
            .into_iter()
            .map(|v| DofAllocation::new(v[..k].to_vec(), v[k..].to_vec()))
            .collect();
        let hit = candidates
            .par_iter()
            .map(|dof| test(dof).map(|r| r.map(|r| (dof.clone(), r))))
            .find_first(|r| !matches!(r, Ok(None)));
        if let Some(found) = hit {
            let (allocation, report) = found?.expect("filtered on Some");
            return Ok(SearchOutcome {
                mode,
                d_sum: total,
                allocation,
                report,
            });
        }
    }
    Err(Error::InvalidConfig(
        "no allocation passed, not even the empty one".into(),
    ))
}

/// Runs both searches; equal maxima certify optimality.
pub fn characterize(config: &NetworkConfig, opts: &SearchOptions) -> Result<OptimalityResult> {
    let necessary = search_max_sum_dof(config, SearchMode::NecessaryBound, opts)?;
    let sufficient = search_max_sum_dof(config, SearchMode::SufficientCertified, opts)?;
    let gap = necessary.d_sum.saturating_sub(sufficient.d_sum);
    Ok(OptimalityResult {
        optimal: gap == 0,
        gap,
        necessary,
        sufficient,
    })
}
