//! Feasibility of one-shot linear interference alignment.
//!
//! * [`check_necessary`]: the subset-based converse bounds.
//! * [`check_sufficient`]: bounds on the BS antenna counts plus a full-row-rank
//!   test of the linearized alignment system on random channel draws.
//! * [`check_symmetric_sufficient`] / [`hall_condition`]: the compact
//!   criterion for symmetric stream counts and its bipartite-matching form.
//! * [`search_max_sum_dof`]: largest sum of streams certified by either test.

mod alignment;
mod matching;
mod necessary;
mod search;
mod symmetric;

use serde::Serialize;

pub use alignment::{
    build_alignment_matrix, check_sufficient, AlignmentMatrixLayout, DEFAULT_RANK_TRIALS,
};
pub use matching::maximum_matching;
pub use necessary::{
    check_necessary, dual_config, single_cell_dof, subset_indices, two_user_ic_dof, SubsetGuard,
    DEFAULT_MAX_SUBSET_USERS,
};
pub use search::{
    characterize, search_max_sum_dof, OptimalityResult, SearchMode, SearchOptions, SearchOutcome,
};
pub use symmetric::{
    check_symmetric_sufficient, construct_special_realization, hall_condition,
    is_partial_permutation, HallGraph, HallOutcome, SpecialRealization, VariableBlock,
};

/// Identifier of one checked condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ConditionId {
    #[serde(rename = "8a")]
    AlphaStreams,
    #[serde(rename = "8b")]
    BetaStreams,
    #[serde(rename = "8c")]
    BaseStations,
    #[serde(rename = "8d")]
    UserSubsets,
    #[serde(rename = "8e")]
    VariableCount,
    #[serde(rename = "rank")]
    Rank,
    #[serde(rename = "13a")]
    SymAlphaStreams,
    #[serde(rename = "13b")]
    SymBetaStreams,
    #[serde(rename = "13c")]
    SymBaseStations,
    #[serde(rename = "13d")]
    SymDivisibility,
    #[serde(rename = "13e")]
    SymVariableCount,
}

impl ConditionId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionId::AlphaStreams => "8a",
            ConditionId::BetaStreams => "8b",
            ConditionId::BaseStations => "8c",
            ConditionId::UserSubsets => "8d",
            ConditionId::VariableCount => "8e",
            ConditionId::Rank => "rank",
            ConditionId::SymAlphaStreams => "13a",
            ConditionId::SymBetaStreams => "13b",
            ConditionId::SymBaseStations => "13c",
            ConditionId::SymDivisibility => "13d",
            ConditionId::SymVariableCount => "13e",
        }
    }
}

/// Why a rank condition failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RankFailure {
    /// More equations than variables: no channel can give full row rank.
    StructurallyImpossible,
    /// Full row rank was possible but not reached on a majority of draws.
    RankDeficient,
}

/// Evidence attached to a failing condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Witness {
    /// Violating subset pair, 1-based user indices.
    Subsets {
        #[serde(rename = "I_alpha")]
        i_alpha: Vec<usize>,
        #[serde(rename = "I_beta")]
        i_beta: Vec<usize>,
        lhs: i64,
        rhs: i64,
    },
    Bound {
        lhs: usize,
        rhs: usize,
    },
    Rank {
        rows: usize,
        cols: usize,
        ranks: Vec<usize>,
        reason: RankFailure,
    },
    /// `(N - d_own) mod d_other != 0` for the given 1-based user.
    Divisibility {
        cell: &'static str,
        user: usize,
        antennas: usize,
        d_own: usize,
        d_other: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub id: ConditionId,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl ConditionResult {
    pub(crate) fn bound(id: ConditionId, lhs: usize, rhs: usize) -> Self {
        let pass = lhs <= rhs;
        Self {
            id,
            pass,
            witness: (!pass).then_some(Witness::Bound { lhs, rhs }),
        }
    }
}

/// Outcome of the numerical rank test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSummary {
    pub rows: usize,
    pub cols: usize,
    /// Numerical rank reached on each channel draw, in draw order.
    pub trial_ranks: Vec<usize>,
    pub full_rank_trials: usize,
    pub structurally_impossible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub verdict: bool,
    pub conditions: Vec<ConditionResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<RankSummary>,
    /// Symmetric check only: whether the converse bounds also hold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub necessary_passes: Option<bool>,
    /// Symmetric check only: sufficient and necessary at once.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_optimal: Option<bool>,
}

impl FeasibilityReport {
    pub(crate) fn from_conditions(conditions: Vec<ConditionResult>) -> Self {
        Self {
            verdict: conditions.iter().all(|c| c.pass),
            conditions,
            rank: None,
            necessary_passes: None,
            certified_optimal: None,
        }
    }

    pub fn condition(&self, id: ConditionId) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.id == id)
    }

    pub fn passes(&self, id: ConditionId) -> bool {
        self.condition(id).is_some_and(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| !c.pass)
    }
}
