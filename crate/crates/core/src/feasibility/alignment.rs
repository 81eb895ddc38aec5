//! The linearized alignment system for the user-to-user interference.
//!
//! With `U_αk = [I; Ū_αk]` and `V_βl = [I; V̄_βl]`, entry `(m, n)` of
//! `U_αk^H G_αkl V_βl` is an affine-plus-bilinear function of the free blocks.
//! Its linear part, stacked over all `(k, l, m, n)`, is the alignment matrix:
//! row block `(k, l)` carries `diag[d_αk](G3^T)` in the `Ū_αk` columns and
//! `d_αk` stacked copies of `diag[d_βl](row m of G2)` in the `V̄_βl` columns.
//! Full row rank of this matrix on generic channels certifies that the
//! quadratic system is solvable.

use crate::error::{Error, Result};
use crate::linalg::{block_diag_repeat, numerical_rank};
use crate::model::{
    partition_cross, sample_channels, validate_config, CMatrix, ChannelSet, DofAllocation,
    NetworkConfig, RngStream,
};

use super::{ConditionId, ConditionResult, FeasibilityReport, RankFailure, RankSummary, Witness};

pub const DEFAULT_RANK_TRIALS: usize = 5;

/// Row and column bookkeeping of the alignment matrix. All indices 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrixLayout {
    d_alpha: Vec<usize>,
    d_beta: Vec<usize>,
    n_alpha: Vec<usize>,
    n_beta: Vec<usize>,
    row_start: Vec<usize>,
    u_col_start: Vec<usize>,
    v_col_start: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
}

impl AlignmentMatrixLayout {
    pub fn new(config: &NetworkConfig, dof: &DofAllocation) -> Result<Self> {
        validate_config(config, dof)?;
        let (k_users, l_users) = (config.k(), config.l());
        let mut row_start = Vec::with_capacity(k_users * l_users);
        let mut rows = 0;
        for k in 0..k_users {
            for l in 0..l_users {
                row_start.push(rows);
                rows += dof.d_alpha[k] * dof.d_beta[l];
            }
        }
        let mut cols = 0;
        let mut u_col_start = Vec::with_capacity(k_users);
        for k in 0..k_users {
            u_col_start.push(cols);
            cols += dof.d_alpha[k] * (config.n_alpha[k] - dof.d_alpha[k]);
        }
        let mut v_col_start = Vec::with_capacity(l_users);
        for l in 0..l_users {
            v_col_start.push(cols);
            cols += dof.d_beta[l] * (config.n_beta[l] - dof.d_beta[l]);
        }
        Ok(Self {
            d_alpha: dof.d_alpha.clone(),
            d_beta: dof.d_beta.clone(),
            n_alpha: config.n_alpha.clone(),
            n_beta: config.n_beta.clone(),
            row_start,
            u_col_start,
            v_col_start,
            rows,
            cols,
        })
    }

    /// Row of the equation for entry `(m, n)` of `U_αk^H G_αkl V_βl`.
    pub fn row_index(&self, k: usize, l: usize, m: usize, n: usize) -> usize {
        debug_assert!(m < self.d_alpha[k] && n < self.d_beta[l]);
        self.row_start[k * self.d_beta.len() + l] + m * self.d_beta[l] + n
    }

    /// First row of block `(k, l)`.
    pub fn row_block_start(&self, k: usize, l: usize) -> usize {
        self.row_start[k * self.d_beta.len() + l]
    }

    /// Column of the variable `conj(Ū_αk[j, m])`, i.e. entry `(m, j)` of `Ū_αk^H`.
    pub fn u_col(&self, k: usize, m: usize, j: usize) -> usize {
        self.u_col_start[k] + m * (self.n_alpha[k] - self.d_alpha[k]) + j
    }

    /// Column of the variable `V̄_βl[i, n]`.
    pub fn v_col(&self, l: usize, n: usize, i: usize) -> usize {
        self.v_col_start[l] + n * (self.n_beta[l] - self.d_beta[l]) + i
    }

    pub fn u_block(&self, k: usize) -> (usize, usize) {
        (
            self.u_col_start[k],
            self.d_alpha[k] * (self.n_alpha[k] - self.d_alpha[k]),
        )
    }

    pub fn v_block(&self, l: usize) -> (usize, usize) {
        (
            self.v_col_start[l],
            self.d_beta[l] * (self.n_beta[l] - self.d_beta[l]),
        )
    }
}

/// Assembles the alignment matrix for one channel realization.
pub fn build_alignment_matrix(
    channels: &ChannelSet,
    dof: &DofAllocation,
) -> Result<(CMatrix, AlignmentMatrixLayout)> {
    let config = channels.check_consistent()?;
    let layout = AlignmentMatrixLayout::new(&config, dof)?;
    let mut g_alpha = CMatrix::zeros(layout.rows, layout.cols);

    for (k, row) in channels.g_cross.iter().enumerate() {
        let da = dof.d_alpha[k];
        for (l, g) in row.iter().enumerate() {
            let db = dof.d_beta[l];
            if da * db == 0 {
                continue;
            }
            let part = partition_cross(g, da, db)?;
            let r0 = layout.row_block_start(k, l);

            // diag[d_αk](G3^T)
            let g_prime = block_diag_repeat(&part.g3.transpose(), da);
            let (u0, _) = layout.u_block(k);
            g_alpha
                .view_mut((r0, u0), g_prime.shape())
                .copy_from(&g_prime);

            // rows m = 0..d_αk of diag[d_βl](G2[m])
            let (v0, vw) = layout.v_block(l);
            for m in 0..da {
                let block = block_diag_repeat(&part.g2.rows(m, 1).into_owned(), db);
                debug_assert_eq!(block.ncols(), vw);
                g_alpha
                    .view_mut((r0 + m * db, v0), block.shape())
                    .copy_from(&block);
            }
        }
    }
    Ok((g_alpha, layout))
}

fn base_station_conditions(config: &NetworkConfig, dof: &DofAllocation) -> Vec<ConditionResult> {
    let (sa, sb) = (dof.alpha_total(), dof.beta_total());
    vec![
        ConditionResult::bound(ConditionId::AlphaStreams, sa, config.m_alpha),
        ConditionResult::bound(ConditionId::BetaStreams, sb, config.m_beta),
        ConditionResult::bound(
            ConditionId::BaseStations,
            sa + sb,
            config.m_alpha.max(config.m_beta),
        ),
    ]
}

/// Sufficient test: BS bounds plus full row rank of the alignment matrix.
///
/// Trial `t` draws its channels from `rng.substream(t)`. The rank condition
/// passes when a strict majority of the `trials` draws give full row rank. An
/// alignment matrix without rows passes vacuously; one with more rows than
/// columns fails without sampling.
pub fn check_sufficient(
    config: &NetworkConfig,
    dof: &DofAllocation,
    trials: usize,
    rng: &RngStream,
) -> Result<FeasibilityReport> {
    validate_config(config, dof)?;
    if trials == 0 {
        return Err(Error::InvalidConfig(
            "the rank test needs at least one trial".into(),
        ));
    }
    let mut conditions = base_station_conditions(config, dof);
    let layout = AlignmentMatrixLayout::new(config, dof)?;
    let (rows, cols) = (layout.rows, layout.cols);

    let summary = if rows == 0 {
        RankSummary {
            rows,
            cols,
            trial_ranks: vec![0; trials],
            full_rank_trials: trials,
            structurally_impossible: false,
        }
    } else if rows > cols {
        RankSummary {
            rows,
            cols,
            trial_ranks: Vec::new(),
            full_rank_trials: 0,
            structurally_impossible: true,
        }
    } else {
        let trial_ranks: Vec<usize> = (0..trials as u64)
            .map(|t| {
                let channels = sample_channels(config, &rng.substream(t));
                build_alignment_matrix(&channels, dof).map(|(g, _)| numerical_rank(&g))
            })
            .collect::<Result<_>>()?;
        RankSummary {
            rows,
            cols,
            full_rank_trials: trial_ranks.iter().filter(|&&r| r == rows).count(),
            trial_ranks,
            structurally_impossible: false,
        }
    };

    let pass = 2 * summary.full_rank_trials > trials;
    conditions.push(ConditionResult {
        id: ConditionId::Rank,
        pass,
        witness: (!pass).then(|| Witness::Rank {
            rows,
            cols,
            ranks: summary.trial_ranks.clone(),
            reason: if summary.structurally_impossible {
                RankFailure::StructurallyImpossible
            } else {
                RankFailure::RankDeficient
            },
        }),
    });
    let mut report = FeasibilityReport::from_conditions(conditions);
    report.rank = Some(summary);
    Ok(report)
}
