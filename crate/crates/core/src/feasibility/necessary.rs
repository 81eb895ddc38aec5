use crate::error::{Error, Result};
use crate::model::{validate_config, DofAllocation, NetworkConfig};

use super::{ConditionId, ConditionResult, FeasibilityReport, Witness};

pub const DEFAULT_MAX_SUBSET_USERS: usize = 20;

/// Limit on `K + L` for exhaustive subset enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetGuard {
    pub limit: usize,
    /// When `false` the limit is ignored.
    pub enforce: bool,
}

impl Default for SubsetGuard {
    fn default() -> Self {
        Self {
            limit: DEFAULT_MAX_SUBSET_USERS,
            enforce: true,
        }
    }
}

impl SubsetGuard {
    pub fn unlimited() -> Self {
        Self {
            limit: usize::MAX,
            enforce: false,
        }
    }

    pub(crate) fn check(&self, users: usize) -> Result<()> {
        if self.enforce && users > self.limit {
            return Err(Error::SizeGuard {
                users,
                limit: self.limit,
            });
        }
        Ok(())
    }
}

/// Optimal sum DoF of the two-user MIMO interference channel with
/// `(m1, n1)` and `(m2, n2)` transmit/receive antennas.
pub fn two_user_ic_dof(m1: usize, n1: usize, m2: usize, n2: usize) -> usize {
    (m1 + m2).min(n1 + n2).min(m1.max(n2)).min(m2.max(n1))
}

/// Sum DoF reached by switching one cell off.
pub fn single_cell_dof(config: &NetworkConfig) -> usize {
    let alpha = config.m_alpha.min(config.n_alpha.iter().sum());
    let beta = config.m_beta.min(config.n_beta.iter().sum());
    alpha.max(beta)
}

/// Network with the downlink and uplink cells exchanged.
pub fn dual_config(config: &NetworkConfig) -> NetworkConfig {
    config.dual()
}

/// 1-based user indices of the set bits of `mask`.
pub fn subset_indices(mask: usize, users: usize) -> Vec<usize> {
    (0..users)
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| i + 1)
        .collect()
}

/// Per-subset sums of per-user weight triples, indexed by bitmask.
///
/// Filled by walking the reflected Gray code so each step adds or removes a
/// single user.
pub(crate) fn subset_sums(weights: &[[i64; 3]]) -> Vec<[i64; 3]> {
    let n = weights.len();
    let mut table = vec![[0i64; 3]; 1 << n];
    let mut acc = [0i64; 3];
    let mut prev_gray = 0usize;
    for step in 1..(1usize << n) {
        let gray = step ^ (step >> 1);
        let flipped = (gray ^ prev_gray).trailing_zeros() as usize;
        let sign = if gray >> flipped & 1 == 1 { 1 } else { -1 };
        for (a, w) in acc.iter_mut().zip(&weights[flipped]) {
            *a += sign * w;
        }
        table[gray] = acc;
        prev_gray = gray;
    }
    table
}

/// First subset pair, ordered by `(α mask, β mask)`, violating `holds`.
pub(crate) fn first_violation(
    alpha: &[[i64; 3]],
    beta: &[[i64; 3]],
    holds: impl Fn(&[i64; 3], &[i64; 3]) -> Option<(i64, i64)>,
) -> Option<(usize, usize, i64, i64)> {
    for (ma, a) in alpha.iter().enumerate() {
        for (mb, b) in beta.iter().enumerate() {
            if let Some((lhs, rhs)) = holds(a, b) {
                return Some((ma, mb, lhs, rhs));
            }
        }
    }
    None
}

/// Weights `[d, N, d (N - d)]` for each user of one cell.
pub(crate) fn user_weights(d: &[usize], n: &[usize]) -> Vec<[i64; 3]> {
    d.iter()
        .zip(n)
        .map(|(&d, &n)| {
            let (d, n) = (d as i64, n as i64);
            [d, n, d * (n - d)]
        })
        .collect()
}

pub(crate) fn subset_condition(
    id: ConditionId,
    config: &NetworkConfig,
    alpha: &[[i64; 3]],
    beta: &[[i64; 3]],
    holds: impl Fn(&[i64; 3], &[i64; 3]) -> Option<(i64, i64)>,
) -> ConditionResult {
    let violation = first_violation(alpha, beta, holds);
    ConditionResult {
        id,
        pass: violation.is_none(),
        witness: violation.map(|(ma, mb, lhs, rhs)| Witness::Subsets {
            i_alpha: subset_indices(ma, config.k()),
            i_beta: subset_indices(mb, config.l()),
            lhs,
            rhs,
        }),
    }
}

/// Stream-count bound over user subsets: `Σd ≤ max(ΣN_α, ΣN_β)`.
pub(crate) fn user_subset_bound(a: &[i64; 3], b: &[i64; 3]) -> Option<(i64, i64)> {
    let (lhs, rhs) = (a[0] + b[0], a[1].max(b[1]));
    (lhs > rhs).then_some((lhs, rhs))
}

/// Equations vs variables over user subsets.
pub(crate) fn variable_count_bound(a: &[i64; 3], b: &[i64; 3]) -> Option<(i64, i64)> {
    let (lhs, rhs) = (a[0] * b[0], a[2] + b[2]);
    (lhs > rhs).then_some((lhs, rhs))
}

/// Evaluates all converse bounds on `dof`.
///
/// The two subset conditions enumerate all `2^K · 2^L` pairs; failures carry
/// the first violating pair in `(α mask, β mask)` order, with user 1 as the
/// least significant bit.
pub fn check_necessary(
    config: &NetworkConfig,
    dof: &DofAllocation,
    guard: SubsetGuard,
) -> Result<FeasibilityReport> {
    validate_config(config, dof)?;
    guard.check(config.k() + config.l())?;

    let (sa, sb) = (dof.alpha_total(), dof.beta_total());
    let alpha = subset_sums(&user_weights(&dof.d_alpha, &config.n_alpha));
    let beta = subset_sums(&user_weights(&dof.d_beta, &config.n_beta));

    let conditions = vec![
        ConditionResult::bound(ConditionId::AlphaStreams, sa, config.m_alpha),
        ConditionResult::bound(ConditionId::BetaStreams, sb, config.m_beta),
        ConditionResult::bound(
            ConditionId::BaseStations,
            sa + sb,
            config.m_alpha.max(config.m_beta),
        ),
        subset_condition(
            ConditionId::UserSubsets,
            config,
            &alpha,
            &beta,
            user_subset_bound,
        ),
        subset_condition(
            ConditionId::VariableCount,
            config,
            &alpha,
            &beta,
            variable_count_bound,
        ),
    ];
    Ok(FeasibilityReport::from_conditions(conditions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(m_a: usize, n_a: &[usize], m_b: usize, n_b: &[usize]) -> NetworkConfig {
        NetworkConfig::new(m_a, n_a.to_vec(), m_b, n_b.to_vec()).unwrap()
    }

    /// Direct evaluation of one subset pair, no Gray code.
    fn brute_subset_ok(
        config: &NetworkConfig,
        dof: &DofAllocation,
        ma: usize,
        mb: usize,
    ) -> (bool, bool) {
        let sel_a: Vec<usize> = (0..config.k()).filter(|i| ma >> i & 1 == 1).collect();
        let sel_b: Vec<usize> = (0..config.l()).filter(|i| mb >> i & 1 == 1).collect();
        let da: i64 = sel_a.iter().map(|&k| dof.d_alpha[k] as i64).sum();
        let db: i64 = sel_b.iter().map(|&l| dof.d_beta[l] as i64).sum();
        let na: i64 = sel_a.iter().map(|&k| config.n_alpha[k] as i64).sum();
        let nb: i64 = sel_b.iter().map(|&l| config.n_beta[l] as i64).sum();
        let mut eqs = 0i64;
        for &k in &sel_a {
            for &l in &sel_b {
                eqs += (dof.d_alpha[k] * dof.d_beta[l]) as i64;
            }
        }
        let vars: i64 = sel_a
            .iter()
            .map(|&k| (dof.d_alpha[k] * (config.n_alpha[k] - dof.d_alpha[k])) as i64)
            .chain(
                sel_b
                    .iter()
                    .map(|&l| (dof.d_beta[l] * (config.n_beta[l] - dof.d_beta[l])) as i64),
            )
            .sum();
        (da + db <= na.max(nb), eqs <= vars)
    }

    #[test]
    fn two_user_ic_examples() {
        assert_eq!(two_user_ic_dof(1, 1, 1, 1), 1);
        assert_eq!(two_user_ic_dof(2, 2, 2, 2), 2);
        assert_eq!(two_user_ic_dof(3, 2, 2, 3), 2);
    }

    #[test]
    fn single_cell_examples() {
        assert_eq!(single_cell_dof(&cfg(10, &[4, 6, 6], 13, &[3, 6])), 10);
        assert_eq!(single_cell_dof(&cfg(12, &[6, 6, 8], 16, &[6, 6])), 12);
        assert_eq!(single_cell_dof(&cfg(12, &[8, 8, 8, 8], 18, &[4, 4, 4])), 12);
    }

    #[test]
    fn dual_examples() {
        let c = cfg(10, &[4, 6, 6], 13, &[3, 6]);
        assert_eq!(dual_config(&c), cfg(13, &[3, 6], 10, &[4, 6, 6]));
        let s = cfg(4, &[2], 4, &[2]);
        assert_eq!(dual_config(&s), s);
    }

    #[test]
    fn example_one_sum_fourteen_fails_base_station_bound() {
        let c = cfg(10, &[4, 6, 6], 13, &[3, 6]);
        let r = check_necessary(&c, &"4,4,0;3,3".parse().unwrap(), SubsetGuard::default()).unwrap();
        assert!(!r.verdict);
        assert!(!r.passes(ConditionId::BaseStations));
        assert_eq!(
            r.condition(ConditionId::BaseStations).unwrap().witness,
            Some(Witness::Bound { lhs: 14, rhs: 13 })
        );
    }

    #[test]
    fn zero_allocation_passes() {
        let c = cfg(10, &[4, 6, 6], 13, &[3, 6]);
        let r = check_necessary(&c, &DofAllocation::zeros(&c), SubsetGuard::default()).unwrap();
        assert!(r.verdict);
    }

    #[test]
    fn smallest_network_passes_all() {
        let c = cfg(2, &[2], 2, &[2]);
        let r = check_necessary(&c, &"1;1".parse().unwrap(), SubsetGuard::default()).unwrap();
        assert!(r.verdict);
        assert_eq!(r.conditions.len(), 5);
    }

    #[test]
    fn subset_witness_is_first_in_mask_order() {
        // d = (1;1) with single antennas: {1}x{1} has 2 streams but max(1,1) = 1.
        let c = cfg(2, &[1], 2, &[1]);
        let r = check_necessary(&c, &"1;1".parse().unwrap(), SubsetGuard::default()).unwrap();
        let w = r
            .condition(ConditionId::UserSubsets)
            .unwrap()
            .witness
            .clone()
            .unwrap();
        assert_eq!(
            w,
            Witness::Subsets {
                i_alpha: vec![1],
                i_beta: vec![1],
                lhs: 2,
                rhs: 1
            }
        );
    }

    #[test]
    fn guard_trips_and_can_be_disabled() {
        let c = cfg(30, vec![1; 11].as_slice(), 30, vec![1; 10].as_slice());
        let d = DofAllocation::zeros(&c);
        assert!(matches!(
            check_necessary(&c, &d, SubsetGuard::default()),
            Err(Error::SizeGuard {
                users: 21,
                limit: 20
            })
        ));
        let small = cfg(30, vec![1; 3].as_slice(), 30, vec![1; 2].as_slice());
        let tight = SubsetGuard {
            limit: 4,
            enforce: true,
        };
        assert!(check_necessary(&small, &DofAllocation::zeros(&small), tight).is_err());
        let off = SubsetGuard {
            enforce: false,
            ..tight
        };
        assert!(
            check_necessary(&small, &DofAllocation::zeros(&small), off)
                .unwrap()
                .verdict
        );
    }

    #[test]
    fn gray_code_table_matches_direct_sums() {
        let w = vec![[1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12]];
        let t = subset_sums(&w);
        for (mask, sums) in t.iter().enumerate() {
            let mut want = [0; 3];
            for (i, wi) in w.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    for c in 0..3 {
                        want[c] += wi[c];
                    }
                }
            }
            assert_eq!(*sums, want, "mask {mask}");
        }
    }

    fn small_case() -> impl Strategy<Value = (NetworkConfig, DofAllocation)> {
        (
            1usize..9,
            prop::collection::vec(1usize..9, 1..4),
            1usize..9,
            prop::collection::vec(1usize..9, 1..4),
        )
            .prop_flat_map(|(ma, na, mb, nb)| {
                let da: Vec<_> = na.iter().map(|&n| 0..=n).collect();
                let db: Vec<_> = nb.iter().map(|&n| 0..=n).collect();
                (Just(NetworkConfig::new(ma, na, mb, nb).unwrap()), da, db)
            })
            .prop_map(|(c, da, db)| (c, DofAllocation::new(da, db)))
    }

    proptest! {
        #[test]
        fn subset_conditions_match_brute_force((c, d) in small_case()) {
            let r = check_necessary(&c, &d, SubsetGuard::default()).unwrap();
            let mut ok_d = true;
            let mut ok_e = true;
            for ma in 0..(1 << c.k()) {
                for mb in 0..(1 << c.l()) {
                    let (a, b) = brute_subset_ok(&c, &d, ma, mb);
                    ok_d &= a;
                    ok_e &= b;
                }
            }
            prop_assert_eq!(r.passes(ConditionId::UserSubsets), ok_d);
            prop_assert_eq!(r.passes(ConditionId::VariableCount), ok_e);
        }

        #[test]
        fn duality_preserves_necessary_verdict((c, d) in small_case()) {
            let a = check_necessary(&c, &d, SubsetGuard::default()).unwrap().verdict;
            let b = check_necessary(&c.dual(), &d.dual(), SubsetGuard::default()).unwrap().verdict;
            prop_assert_eq!(a, b);
        }

        #[test]
        fn failing_allocations_stay_failing_when_grown((c, d) in small_case(), bump in prop::collection::vec(0usize..3, 6)) {
            let mut up = d.clone();
            for (i, x) in up.d_alpha.iter_mut().chain(up.d_beta.iter_mut()).enumerate() {
                *x += bump[i % bump.len()];
            }
            for (x, &n) in up.d_alpha.iter_mut().zip(&c.n_alpha) { *x = (*x).min(n); }
            for (x, &n) in up.d_beta.iter_mut().zip(&c.n_beta) { *x = (*x).min(n); }
            prop_assume!(up.dominates(&d));
            let base = check_necessary(&c, &d, SubsetGuard::default()).unwrap().verdict;
            let grown = check_necessary(&c, &up, SubsetGuard::default()).unwrap().verdict;
            prop_assert!(base || !grown);
        }
    }
}
