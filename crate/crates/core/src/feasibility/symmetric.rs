//! Symmetric stream counts: `d_αk = d_α`, `d_βl = d_β`.
//!
//! When `d_β | N_αk - d_α` and `d_α | N_βl - d_β`, each free block `Ū_αk`
//! splits into `A_k` sub-blocks and each `V̄_βl` into `B_l` sub-blocks, all
//! of the same size as one interference block `F_kl`. Solvability then
//! reduces to a complete matching from the `F_kl` to the sub-blocks, which
//! also yields a channel realization whose Jacobian is a block permutation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_config, CMatrix, ChannelSet, DofAllocation, NetworkConfig};

use super::necessary::{subset_condition, subset_sums, user_weights, variable_count_bound};
use super::{
    check_necessary, maximum_matching, ConditionId, ConditionResult, FeasibilityReport,
    SubsetGuard, Witness,
};

/// Right-hand vertex of the Hall graph: a sub-block of a free variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "block", rename_all = "snake_case")]
pub enum VariableBlock {
    /// Sub-block `i` of `Ū_αk`.
    U { k: usize, i: usize },
    /// Sub-block `j` of `V̄_βl`.
    V { l: usize, j: usize },
}

/// Bipartite graph between the interference blocks `F_kl` (left) and the
/// variable sub-blocks (right). `F_kl` is adjacent to every sub-block of
/// `Ū_αk` and of `V̄_βl`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HallGraph {
    /// `A_k = (N_αk - d_α) / d_β`.
    pub a: Vec<usize>,
    /// `B_l = (N_βl - d_β) / d_α`.
    pub b: Vec<usize>,
    /// Left vertices `(k, l)` in row-major order.
    pub left: Vec<(usize, usize)>,
    pub right: Vec<VariableBlock>,
    pub adjacency: Vec<Vec<usize>>,
}

impl HallGraph {
    pub fn new(config: &NetworkConfig, d_alpha: usize, d_beta: usize) -> Result<Self> {
        if d_alpha == 0 || d_beta == 0 {
            return Err(Error::InvalidConfig(
                "symmetric stream counts must be at least 1".into(),
            ));
        }
        if let Some(w) = divisibility_violation(config, d_alpha, d_beta) {
            return Err(Error::Divisibility(describe(&w)));
        }
        let a: Vec<usize> = config
            .n_alpha
            .iter()
            .map(|&n| (n - d_alpha) / d_beta)
            .collect();
        let b: Vec<usize> = config
            .n_beta
            .iter()
            .map(|&n| (n - d_beta) / d_alpha)
            .collect();

        let mut right = Vec::new();
        let mut u_index = Vec::with_capacity(a.len());
        for (k, &ak) in a.iter().enumerate() {
            u_index.push(right.len());
            right.extend((0..ak).map(|i| VariableBlock::U { k, i }));
        }
        let mut v_index = Vec::with_capacity(b.len());
        for (l, &bl) in b.iter().enumerate() {
            v_index.push(right.len());
            right.extend((0..bl).map(|j| VariableBlock::V { l, j }));
        }

        let mut left = Vec::new();
        let mut adjacency = Vec::new();
        for k in 0..config.k() {
            for l in 0..config.l() {
                left.push((k, l));
                let mut nbrs: Vec<usize> = (u_index[k]..u_index[k] + a[k]).collect();
                nbrs.extend(v_index[l]..v_index[l] + b[l]);
                adjacency.push(nbrs);
            }
        }
        Ok(Self {
            a,
            b,
            left,
            right,
            adjacency,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HallOutcome {
    pub graph: HallGraph,
    /// Matched right vertex (index into `graph.right`) per left vertex.
    pub matching: Vec<Option<usize>>,
}

impl HallOutcome {
    pub fn complete(&self) -> bool {
        self.matching.iter().all(Option::is_some)
    }

    pub fn matched(&self) -> usize {
        self.matching.iter().flatten().count()
    }

    /// `(F_kl, sub-block)` pairs of a complete matching.
    pub fn assignment(&self) -> Option<Vec<((usize, usize), VariableBlock)>> {
        self.complete().then(|| {
            self.graph
                .left
                .iter()
                .zip(&self.matching)
                .map(|(&kl, m)| (kl, self.graph.right[m.expect("complete")]))
                .collect()
        })
    }
}

/// Decides whether every `F_kl` can be matched to its own variable sub-block.
pub fn hall_condition(
    config: &NetworkConfig,
    d_alpha: usize,
    d_beta: usize,
) -> Result<HallOutcome> {
    let graph = HallGraph::new(config, d_alpha, d_beta)?;
    let matching = maximum_matching(graph.right.len(), &graph.adjacency);
    Ok(HallOutcome { graph, matching })
}

fn divisibility_violation(
    config: &NetworkConfig,
    d_alpha: usize,
    d_beta: usize,
) -> Option<Witness> {
    let bad = |n: usize, own: usize, other: usize| n < own || !(n - own).is_multiple_of(other);
    if let Some(k) = config.n_alpha.iter().position(|&n| bad(n, d_alpha, d_beta)) {
        return Some(Witness::Divisibility {
            cell: "alpha",
            user: k + 1,
            antennas: config.n_alpha[k],
            d_own: d_alpha,
            d_other: d_beta,
        });
    }
    if let Some(l) = config.n_beta.iter().position(|&n| bad(n, d_beta, d_alpha)) {
        return Some(Witness::Divisibility {
            cell: "beta",
            user: l + 1,
            antennas: config.n_beta[l],
            d_own: d_beta,
            d_other: d_alpha,
        });
    }
    None
}

fn describe(w: &Witness) -> String {
    match w {
        Witness::Divisibility {
            cell,
            user,
            antennas,
            d_own,
            d_other,
        } => format!("{cell} user {user}: ({antennas} - {d_own}) is not a non-negative multiple of {d_other}"),
        other => format!("{other:?}"),
    }
}

/// Symmetric sufficient test.
///
/// Also runs the converse bounds on the expanded allocation; when both pass
/// the report is marked `certified_optimal`.
pub fn check_symmetric_sufficient(
    config: &NetworkConfig,
    d_alpha: usize,
    d_beta: usize,
    guard: SubsetGuard,
) -> Result<FeasibilityReport> {
    config.validate()?;
    if d_alpha == 0 || d_beta == 0 {
        return Err(Error::InvalidConfig(
            "symmetric stream counts must be at least 1".into(),
        ));
    }
    guard.check(config.k() + config.l())?;
    let (kk, ll) = (config.k(), config.l());
    let dof = DofAllocation::symmetric(config, d_alpha, d_beta);

    let divisibility = divisibility_violation(config, d_alpha, d_beta);
    let alpha = subset_sums(&user_weights(&dof.d_alpha, &config.n_alpha));
    let beta = subset_sums(&user_weights(&dof.d_beta, &config.n_beta));

    let mut variable_count = subset_condition(
        ConditionId::VariableCount,
        config,
        &alpha,
        &beta,
        variable_count_bound,
    );
    variable_count.id = ConditionId::SymVariableCount;

    let conditions = vec![
        ConditionResult::bound(ConditionId::SymAlphaStreams, kk * d_alpha, config.m_alpha),
        ConditionResult::bound(ConditionId::SymBetaStreams, ll * d_beta, config.m_beta),
        ConditionResult::bound(
            ConditionId::SymBaseStations,
            kk * d_alpha + ll * d_beta,
            config.m_alpha.max(config.m_beta),
        ),
        ConditionResult {
            id: ConditionId::SymDivisibility,
            pass: divisibility.is_none(),
            witness: divisibility,
        },
        variable_count,
    ];
    let mut report = FeasibilityReport::from_conditions(conditions);

    let necessary = match validate_config(config, &dof) {
        Ok(()) => check_necessary(config, &dof, guard)?.verdict,
        Err(_) => false,
    };
    report.necessary_passes = Some(necessary);
    report.certified_optimal = Some(report.verdict && necessary);
    Ok(report)
}

/// Cross channels for which the zero point solves the alignment equations
/// and the Jacobian there is a block permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecialRealization {
    /// Only `g_cross` is populated; direct channels and `G_β` are zero.
    pub channels: ChannelSet,
    pub assignment: Vec<((usize, usize), VariableBlock)>,
}

/// Builds the realization: `G1 = G4 = 0`, and inside `G3`/`G2` the sub-block
/// matched to `F_kl` is an identity while every other sub-block is zero.
pub fn construct_special_realization(
    config: &NetworkConfig,
    d_alpha: usize,
    d_beta: usize,
) -> Result<SpecialRealization> {
    let outcome = hall_condition(config, d_alpha, d_beta)?;
    let assignment = outcome.assignment().ok_or(Error::NoCompleteMatching {
        matched: outcome.matched(),
        required: outcome.graph.left.len(),
    })?;
    let mut channels = ChannelSet::zeros(config);
    for &((k, l), block) in &assignment {
        let g: &mut CMatrix = &mut channels.g_cross[k][l];
        match block {
            // G3 occupies rows d_α.., cols ..d_β; sub-block i is rows d_α + i d_β.
            VariableBlock::U { i, .. } => {
                g.view_mut((d_alpha + i * d_beta, 0), (d_beta, d_beta))
                    .fill_with_identity();
            }
            // G2 occupies rows ..d_α, cols d_β..; sub-block j is cols d_β + j d_α.
            VariableBlock::V { j, .. } => {
                g.view_mut((0, d_beta + j * d_alpha), (d_alpha, d_alpha))
                    .fill_with_identity();
            }
        }
    }
    Ok(SpecialRealization {
        channels,
        assignment,
    })
}

/// Every row has exactly one nonzero entry, equal to one, and no column has
/// more than one nonzero entry.
pub fn is_partial_permutation(m: &CMatrix) -> bool {
    let one = num_complex::Complex64::new(1.0, 0.0);
    let rows_ok = m.row_iter().all(|r| {
        let nz: Vec<_> = r.iter().filter(|x| x.norm() != 0.0).collect();
        nz.len() == 1 && *nz[0] == one
    });
    let cols_ok = m
        .column_iter()
        .all(|c| c.iter().filter(|x| x.norm() != 0.0).count() <= 1);
    rows_ok && cols_ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::build_alignment_matrix;
    use crate::linalg::numerical_rank;

    fn cfg(m_a: usize, n_a: &[usize], m_b: usize, n_b: &[usize]) -> NetworkConfig {
        NetworkConfig::new(m_a, n_a.to_vec(), m_b, n_b.to_vec()).unwrap()
    }

    fn example4() -> NetworkConfig {
        cfg(12, &[6, 6, 8], 16, &[6, 6])
    }

    #[test]
    fn example_four_passes() {
        let r = check_symmetric_sufficient(&example4(), 4, 2, SubsetGuard::default()).unwrap();
        assert!(r.verdict, "{r:?}");
        assert_eq!(r.necessary_passes, Some(true));
        assert_eq!(r.certified_optimal, Some(true));
        assert_eq!(DofAllocation::symmetric(&example4(), 4, 2).sum(), 16);
    }

    #[test]
    fn example_four_with_three_beta_streams_fails_divisibility() {
        let r = check_symmetric_sufficient(&example4(), 4, 3, SubsetGuard::default()).unwrap();
        assert!(!r.verdict);
        assert!(!r.passes(ConditionId::SymDivisibility));
        assert!(matches!(
            r.condition(ConditionId::SymDivisibility).unwrap().witness,
            Some(Witness::Divisibility {
                cell: "alpha",
                user: 1,
                ..
            })
        ));
    }

    #[test]
    fn example_four_single_streams_pass() {
        let r = check_symmetric_sufficient(&example4(), 1, 1, SubsetGuard::default()).unwrap();
        assert!(r.verdict);
    }

    #[test]
    fn example_four_graph_has_complete_matching() {
        let h = hall_condition(&example4(), 4, 2).unwrap();
        assert_eq!(h.graph.a, vec![1, 1, 2]);
        assert_eq!(h.graph.b, vec![1, 1]);
        assert_eq!(h.graph.left.len(), 6);
        assert_eq!(h.graph.right.len(), 6);
        assert!(h.complete());
    }

    #[test]
    fn no_right_vertices_means_no_matching() {
        let c = cfg(4, &[2, 2], 4, &[1]);
        let h = hall_condition(&c, 2, 1).unwrap();
        assert!(h.graph.right.is_empty());
        assert!(!h.complete());
        assert!(matches!(
            construct_special_realization(&c, 2, 1),
            Err(Error::NoCompleteMatching {
                matched: 0,
                required: 2
            })
        ));
    }

    #[test]
    fn single_edge_graph() {
        let c = cfg(2, &[2], 2, &[2]);
        let h = hall_condition(&c, 1, 1).unwrap();
        assert_eq!(h.matched(), 1);
        let s = construct_special_realization(&c, 1, 1).unwrap();
        let g = &s.channels.g_cross[0][0];
        // exactly one identity block, in G3 or G2; G1 and G4 zero
        assert_eq!(g[(0, 0)].norm(), 0.0);
        assert_eq!(g[(1, 1)].norm(), 0.0);
        assert_eq!(g[(1, 0)].norm() + g[(0, 1)].norm(), 1.0);
    }

    #[test]
    fn divisibility_error_for_hall() {
        assert!(matches!(
            hall_condition(&example4(), 4, 3),
            Err(Error::Divisibility(_))
        ));
    }

    #[test]
    fn example_four_realization_is_block_permutation() {
        let c = example4();
        let s = construct_special_realization(&c, 4, 2).unwrap();
        assert_eq!(s.assignment.len(), 6);
        let mut blocks: Vec<_> = s.assignment.iter().map(|(_, b)| *b).collect();
        blocks.sort_by_key(|b| format!("{b:?}"));
        blocks.dedup();
        assert_eq!(blocks.len(), 6);

        let dof = DofAllocation::symmetric(&c, 4, 2);
        let (g, layout) = build_alignment_matrix(&s.channels, &dof).unwrap();
        assert!(is_partial_permutation(&g));
        assert_eq!(numerical_rank(&g), layout.rows);
        for k in 0..c.k() {
            for l in 0..c.l() {
                let p = crate::model::partition_cross(&s.channels.g_cross[k][l], 4, 2).unwrap();
                assert_eq!(p.g1.norm(), 0.0);
                assert_eq!(p.g4.norm(), 0.0);
            }
        }
    }
}
