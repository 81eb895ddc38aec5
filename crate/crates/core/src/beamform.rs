//! Precoder and postcoder construction.
//!
//! Step 1 aligns the user-to-user interference by alternating leakage
//! minimization over the α postcoders `U_αk` and the β precoders `V_βl`.
//! Step 2 zero-forces the remaining terms at the base stations with
//! pseudo-inverses, then every column is scaled to unit norm.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    full_rank_pinv, hstack, min_eigen_subspace, min_singular_value, random_orthonormal, vstack,
};
use crate::model::{validate_config, CMatrix, ChannelSet, DofAllocation, NetworkConfig, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    /// `U_αk`, `N_αk x d_αk`.
    pub u_alpha: Vec<CMatrix>,
    /// `V_αk`, `M_α x d_αk`.
    pub v_alpha: Vec<CMatrix>,
    /// `U_βl`, `M_β x d_βl`.
    pub u_beta: Vec<CMatrix>,
    /// `V_βl`, `N_βl x d_βl`.
    pub v_beta: Vec<CMatrix>,
}

/// Per-user transmit powers, linear scale. Each user splits its power
/// equally over its streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerProfile {
    pub p_alpha: Vec<f64>,
    pub p_beta: Vec<f64>,
}

impl PowerProfile {
    pub fn new(p_alpha: Vec<f64>, p_beta: Vec<f64>) -> Result<Self> {
        if let Some(p) = p_alpha
            .iter()
            .chain(&p_beta)
            .find(|p| !(**p >= 0.0) || !p.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "transmit power {p} is not a finite non-negative number"
            )));
        }
        Ok(Self { p_alpha, p_beta })
    }

    /// BS α spends `snr` in total, split evenly over its K users; every β
    /// user spends `snr`.
    pub fn from_snr(config: &NetworkConfig, snr: f64) -> Self {
        let k = config.k().max(1) as f64;
        Self {
            p_alpha: vec![snr / k; config.k()],
            p_beta: vec![snr; config.l()],
        }
    }

    /// As [`PowerProfile::from_snr`] with the SNR in dB; `-inf` gives zero power.
    pub fn from_snr_db(config: &NetworkConfig, snr_db: f64) -> Self {
        Self::from_snr(config, db_to_linear(snr_db))
    }

    /// Total power of BS α.
    pub fn total_alpha(&self) -> f64 {
        self.p_alpha.iter().sum()
    }

    /// Power per stream of user (α,k); zero when the user is inactive.
    pub fn per_stream_alpha(&self, k: usize, d: usize) -> f64 {
        per_stream(self.p_alpha[k], d)
    }

    pub fn per_stream_beta(&self, l: usize, d: usize) -> f64 {
        per_stream(self.p_beta[l], d)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn per_stream(p: f64, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        p / d as f64
    }
}

/// Total leakage `I^[i]` after every iteration, optionally per α user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageTrace {
    pub totals: Vec<f64>,
    /// `per_user[i][k]`; empty unless requested.
    pub per_user: Vec<Vec<f64>>,
    pub converged: bool,
}

impl LeakageTrace {
    pub fn initial(&self) -> Option<f64> {
        self.totals.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.totals.last().copied()
    }

    pub fn iterations(&self) -> usize {
        self.totals.len()
    }

    /// `iteration,total_leakage[,leakage_alpha_1,…]`, one row per iteration
    /// starting at 1.
    pub fn to_csv(&self) -> String {
        let users = self.per_user.first().map_or(0, Vec::len);
        let mut out = String::from("iteration,total_leakage");
        for k in 1..=users {
            out.push_str(&format!(",leakage_alpha_{k}"));
        }
        out.push('\n');
        for (i, total) in self.totals.iter().enumerate() {
            out.push_str(&format!("{},{}", i + 1, crate::format::sig(*total)));
            if let Some(row) = self.per_user.get(i) {
                for x in row {
                    out.push(',');
                    out.push_str(&crate::format::sig(*x));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub max_iters: usize,
    /// Stop once `I^[i] ≤ leakage_stop · I^[1]`.
    pub leakage_stop: f64,
    pub record_trace: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            leakage_stop: 1e-10,
            record_trace: false,
        }
    }
}

impl IterationOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.leakage_stop > 0.0) {
            return Err(Error::InvalidConfig("leakage_stop must be positive".into()));
        }
        Ok(())
    }
}

fn check_inputs(channels: &ChannelSet, dof: &DofAllocation) -> Result<NetworkConfig> {
    let config = channels.check_consistent()?;
    validate_config(&config, dof)?;
    Ok(config)
}

/// Random starting postcoders with orthonormal columns.
pub fn init_postcoders(
    config: &NetworkConfig,
    dof: &DofAllocation,
    rng: &RngStream,
) -> Result<Vec<CMatrix>> {
    validate_config(config, dof)?;
    let mut r = rng.rng();
    Ok(config
        .n_alpha
        .iter()
        .zip(&dof.d_alpha)
        .map(|(&n, &d)| random_orthonormal(n, d, &mut r))
        .collect())
}

/// Interference covariance seen from user (β,l):
/// `Σ_k (P_αk/d_αk) G_αkl^H U_αk (G_αkl^H U_αk)^H`.
pub fn covariance_tx(
    channels: &ChannelSet,
    u_alpha: &[CMatrix],
    powers: &PowerProfile,
    l: usize,
) -> CMatrix {
    let n = channels.h_beta[l].ncols();
    let mut c = CMatrix::zeros(n, n);
    for (k, u) in u_alpha.iter().enumerate() {
        let w = powers.per_stream_alpha(k, u.ncols());
        if w == 0.0 {
            continue;
        }
        let a = channels.g_cross[k][l].adjoint() * u;
        c += (&a * a.adjoint()).scale(w);
    }
    c
}

/// Interference covariance at user (α,k):
/// `Σ_l (P_βl/d_βl) G_αkl V_βl (G_αkl V_βl)^H`.
pub fn covariance_rx(
    channels: &ChannelSet,
    v_beta: &[CMatrix],
    powers: &PowerProfile,
    k: usize,
) -> CMatrix {
    let n = channels.h_alpha[k].nrows();
    let mut c = CMatrix::zeros(n, n);
    for (l, v) in v_beta.iter().enumerate() {
        let w = powers.per_stream_beta(l, v.ncols());
        if w == 0.0 {
            continue;
        }
        let a = &channels.g_cross[k][l] * v;
        c += (&a * a.adjoint()).scale(w);
    }
    c
}

/// Eigenvectors of the `d` smallest eigenvalues of `cov`, ascending.
pub fn update_v_beta(cov: &CMatrix, d: usize) -> Result<CMatrix> {
    min_eigen_subspace(cov, d)
}

/// Same rule as [`update_v_beta`], applied at the α users.
pub fn update_u_alpha(cov: &CMatrix, d: usize) -> Result<CMatrix> {
    min_eigen_subspace(cov, d)
}

/// `tr(U^H C U)`, clamped at zero.
fn leakage(u: &CMatrix, c: &CMatrix) -> f64 {
    if u.ncols() == 0 {
        return 0.0;
    }
    (u.adjoint() * c * u).trace().re.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub u_alpha: Vec<CMatrix>,
    pub v_beta: Vec<CMatrix>,
    pub trace: LeakageTrace,
}

/// Alternating leakage minimization.
///
/// Each iteration first recomputes every `V_βl` from the current `U_αk`,
/// then every `U_αk` from the new `V_βl`, and records
/// `I = Σ_k tr(U_αk^H C_αk U_αk)`. Non-convergence is reported through the
/// trace.
pub fn iterate_alignment(
    channels: &ChannelSet,
    dof: &DofAllocation,
    powers: &PowerProfile,
    opts: &IterationOptions,
    rng: &RngStream,
) -> Result<Alignment> {
    let config = check_inputs(channels, dof)?;
    opts.validate()?;
    check_powers(&config, powers)?;
    let mut u_alpha = init_postcoders(&config, dof, rng)?;
    let mut v_beta: Vec<CMatrix> = config
        .n_beta
        .iter()
        .map(|&n| CMatrix::zeros(n, 0))
        .collect();
    let mut trace = LeakageTrace {
        totals: Vec::new(),
        per_user: Vec::new(),
        converged: false,
    };

    for _ in 0..opts.max_iters {
        for l in 0..config.l() {
            let c = covariance_tx(channels, &u_alpha, powers, l);
            v_beta[l] = update_v_beta(&c, dof.d_beta[l])?;
        }
        let mut per_user = Vec::with_capacity(config.k());
        for k in 0..config.k() {
            let c = covariance_rx(channels, &v_beta, powers, k);
            u_alpha[k] = update_u_alpha(&c, dof.d_alpha[k])?;
            per_user.push(leakage(&u_alpha[k], &c));
        }
        let total: f64 = per_user.iter().sum();
        trace.totals.push(total);
        if opts.record_trace {
            trace.per_user.push(per_user);
        }
        if total <= opts.leakage_stop * trace.totals[0] {
            trace.converged = true;
            break;
        }
    }
    Ok(Alignment {
        u_alpha,
        v_beta,
        trace,
    })
}

fn check_powers(config: &NetworkConfig, powers: &PowerProfile) -> Result<()> {
    if powers.p_alpha.len() != config.k() || powers.p_beta.len() != config.l() {
        return Err(Error::DimensionMismatch {
            field: "powers".into(),
            detail: format!(
                "{} α and {} β entries for {} α and {} β users",
                powers.p_alpha.len(),
                powers.p_beta.len(),
                config.k(),
                config.l()
            ),
        });
    }
    Ok(())
}

/// Which base station is zero-forced first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `M_α ≥ M_β`: `U_β` handles the β intra-cell terms only, then `V_α`
    /// nulls its own users and BS β.
    UplinkFirst,
    /// `M_α < M_β`: `V_α` handles the α intra-cell terms only, then `U_β`
    /// nulls its own users and BS α.
    DownlinkFirst,
}

impl Branch {
    pub fn select(config: &NetworkConfig) -> Self {
        if config.m_alpha >= config.m_beta {
            Branch::UplinkFirst
        } else {
            Branch::DownlinkFirst
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Branch::UplinkFirst => "M_alpha >= M_beta",
            Branch::DownlinkFirst => "M_alpha < M_beta",
        }
    }
}

/// Right inverse of a wide matrix; a tall one has none.
fn right_inverse(m: &CMatrix) -> std::result::Result<CMatrix, f64> {
    if m.nrows() > m.ncols() {
        return Err(f64::INFINITY);
    }
    full_rank_pinv(m)
}

/// Left inverse of a tall matrix; a wide one has none.
fn left_inverse(m: &CMatrix) -> std::result::Result<CMatrix, f64> {
    if m.nrows() < m.ncols() {
        return Err(f64::INFINITY);
    }
    full_rank_pinv(m)
}

fn split_columns(m: &CMatrix, widths: &[usize]) -> Vec<CMatrix> {
    let mut at = 0;
    widths
        .iter()
        .map(|&w| {
            let block = m.columns(at, w).into_owned();
            at += w;
            block
        })
        .collect()
}

/// Splits consecutive row blocks and returns each block's adjoint.
fn split_rows_adjoint(m: &CMatrix, heights: &[usize]) -> Vec<CMatrix> {
    let mut at = 0;
    heights
        .iter()
        .map(|&h| {
            let block = m.rows(at, h).adjoint();
            at += h;
            block
        })
        .collect()
}

/// Zero-forcing of the base-station side: returns `(V_α, U_β)`.
///
/// The first base station in [`Branch`] order inverts only its own cell's
/// effective channels; the second also nulls the BS-to-BS link through the
/// matrices already fixed. Columns are not yet normalized.
pub fn zero_force_step2(
    channels: &ChannelSet,
    dof: &DofAllocation,
    u_alpha: &[CMatrix],
    v_beta: &[CMatrix],
) -> Result<(Vec<CMatrix>, Vec<CMatrix>)> {
    let config = check_inputs(channels, dof)?;
    let branch = Branch::select(&config);
    let singular = |condition: f64| Error::SingularSystem {
        branch: branch.name(),
        condition,
    };
    let (sa, sb) = (dof.alpha_total(), dof.beta_total());
    let (ma, mb) = (config.m_alpha, config.m_beta);

    // Σd x M_α stack of U_αk^H H_αk
    let alpha_rows: Vec<CMatrix> = u_alpha
        .iter()
        .zip(&channels.h_alpha)
        .map(|(u, h)| u.adjoint() * h)
        .collect();
    // M_β x Σd row of H_βl V_βl
    let beta_cols: Vec<CMatrix> = v_beta
        .iter()
        .zip(&channels.h_beta)
        .map(|(v, h)| h * v)
        .collect();

    match branch {
        Branch::UplinkFirst => {
            let h_beta = hstack(&beta_cols, mb);
            let u_beta_h = left_inverse(&h_beta).map_err(singular)?;
            let u_beta = split_rows_adjoint(&u_beta_h, &dof.d_beta);
            if sa == 0 {
                return Ok((
                    dof.d_alpha.iter().map(|_| CMatrix::zeros(ma, 0)).collect(),
                    u_beta,
                ));
            }
            let mut rows = alpha_rows;
            rows.push(&u_beta_h * &channels.g_bs);
            let h_alpha = vstack(&rows, ma);
            let inv = right_inverse(&h_alpha).map_err(singular)?;
            let v_alpha = split_columns(&inv.columns(0, sa).into_owned(), &dof.d_alpha);
            Ok((v_alpha, u_beta))
        }
        Branch::DownlinkFirst => {
            let h_alpha = vstack(&alpha_rows, ma);
            let v_all = right_inverse(&h_alpha).map_err(singular)?;
            let v_alpha = split_columns(&v_all, &dof.d_alpha);
            if sb == 0 {
                return Ok((
                    v_alpha,
                    dof.d_beta.iter().map(|_| CMatrix::zeros(mb, 0)).collect(),
                ));
            }
            let mut cols = beta_cols;
            cols.push(&channels.g_bs * &v_all);
            let h_beta = hstack(&cols, mb);
            let inv = left_inverse(&h_beta).map_err(singular)?;
            let u_beta = split_rows_adjoint(&inv.rows(0, sb).into_owned(), &dof.d_beta);
            Ok((v_alpha, u_beta))
        }
    }
}

fn normalize_columns(m: &CMatrix, name: &str) -> Result<CMatrix> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroColumn {
                matrix: name.into(),
                column: j + 1,
            });
        }
        col.unscale_mut(n);
    }
    Ok(out)
}

/// Scales every column of every matrix to unit norm.
pub fn normalize(b: &BeamformerSet) -> Result<BeamformerSet> {
    let each = |ms: &[CMatrix], name: &str| -> Result<Vec<CMatrix>> {
        ms.iter()
            .enumerate()
            .map(|(i, m)| normalize_columns(m, &format!("{name}{}", i + 1)))
            .collect()
    };
    Ok(BeamformerSet {
        u_alpha: each(&b.u_alpha, "U_α")?,
        v_alpha: each(&b.v_alpha, "V_α")?,
        u_beta: each(&b.u_beta, "U_β")?,
        v_beta: each(&b.v_beta, "V_β")?,
    })
}

/// How far a beamformer set is from satisfying the alignment conditions.
///
/// The interference entries are Frobenius norms over all terms of a
/// condition. The desired-signal margins are the smallest singular values of
/// `U_αk^H H_αk V_αk` and `U_βl^H H_βl V_βl`; inactive users have none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `U_αk^H G_αkl V_βl`, all k, l.
    #[serde(rename = "7a")]
    pub inter_alpha: f64,
    /// `U_βl^H G_β V_αk`, all k, l.
    #[serde(rename = "7b")]
    pub inter_beta: f64,
    /// `U_αk^H H_αk V_αi`, i ≠ k.
    #[serde(rename = "7c")]
    pub intra_alpha: f64,
    /// `U_βl^H H_βj V_βj`, j ≠ l.
    #[serde(rename = "7d")]
    pub intra_beta: f64,
    #[serde(rename = "7e")]
    pub desired_alpha: Vec<Option<f64>>,
    #[serde(rename = "7f")]
    pub desired_beta: Vec<Option<f64>>,
    /// Mean Frobenius norm of the channel matrices, for relative tolerances.
    pub channel_scale: f64,
}

impl ResidualReport {
    /// Largest of the zero-forced residuals (7b to 7d).
    pub fn zero_forced_max(&self) -> f64 {
        self.inter_beta.max(self.intra_alpha).max(self.intra_beta)
    }

    /// Smallest desired-signal margin over the active users.
    pub fn min_margin(&self) -> Option<f64> {
        self.desired_alpha
            .iter()
            .chain(&self.desired_beta)
            .flatten()
            .copied()
            .reduce(f64::min)
    }
}

pub fn residual_report(channels: &ChannelSet, b: &BeamformerSet) -> ResidualReport {
    let (kk, ll) = (b.u_alpha.len(), b.u_beta.len());
    let sq = |m: CMatrix| m.norm_squared();
    let mut inter_alpha = 0.0;
    let mut inter_beta = 0.0;
    let mut intra_alpha = 0.0;
    let mut intra_beta = 0.0;
    for k in 0..kk {
        for l in 0..ll {
            inter_alpha += sq(b.u_alpha[k].adjoint() * &channels.g_cross[k][l] * &b.v_beta[l]);
            inter_beta += sq(b.u_beta[l].adjoint() * &channels.g_bs * &b.v_alpha[k]);
        }
        for i in (0..kk).filter(|&i| i != k) {
            intra_alpha += sq(b.u_alpha[k].adjoint() * &channels.h_alpha[k] * &b.v_alpha[i]);
        }
    }
    for l in 0..ll {
        for j in (0..ll).filter(|&j| j != l) {
            intra_beta += sq(b.u_beta[l].adjoint() * &channels.h_beta[j] * &b.v_beta[j]);
        }
    }
    let desired_alpha = (0..kk)
        .map(|k| {
            min_singular_value(&(b.u_alpha[k].adjoint() * &channels.h_alpha[k] * &b.v_alpha[k]))
        })
        .collect();
    let desired_beta = (0..ll)
        .map(|l| min_singular_value(&(b.u_beta[l].adjoint() * &channels.h_beta[l] * &b.v_beta[l])))
        .collect();
    ResidualReport {
        inter_alpha: inter_alpha.sqrt(),
        inter_beta: inter_beta.sqrt(),
        intra_alpha: intra_alpha.sqrt(),
        intra_beta: intra_beta.sqrt(),
        desired_alpha,
        desired_beta,
        channel_scale: channels.mean_frobenius_norm(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub beamformers: BeamformerSet,
    pub trace: LeakageTrace,
    pub branch: Branch,
    pub residuals: ResidualReport,
}

/// Full pipeline: iterative alignment, zero-forcing, normalization.
pub fn construct(
    channels: &ChannelSet,
    dof: &DofAllocation,
    powers: &PowerProfile,
    opts: &IterationOptions,
    rng: &RngStream,
) -> Result<Construction> {
    let Alignment {
        u_alpha,
        v_beta,
        trace,
    } = iterate_alignment(channels, dof, powers, opts, rng)?;
    let (v_alpha, u_beta) = zero_force_step2(channels, dof, &u_alpha, &v_beta)?;
    let beamformers = normalize(&BeamformerSet {
        u_alpha,
        v_alpha,
        u_beta,
        v_beta,
    })?;
    let residuals = residual_report(channels, &beamformers);
    Ok(Construction {
        branch: Branch::select(&channels.config()),
        beamformers,
        trace,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_matrix, sample_channels};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn cfg(m_a: usize, n_a: &[usize], m_b: usize, n_b: &[usize]) -> NetworkConfig {
        NetworkConfig::new(m_a, n_a.to_vec(), m_b, n_b.to_vec()).unwrap()
    }

    fn sim() -> (NetworkConfig, DofAllocation) {
        let config = cfg(12, &[8, 8, 8, 8], 18, &[4, 4, 4]);
        let dof = DofAllocation::symmetric(&config, 3, 2);
        (config, dof)
    }

    fn orthonormality_error(m: &CMatrix) -> f64 {
        (m.adjoint() * m - CMatrix::identity(m.ncols(), m.ncols())).norm()
    }

    #[test]
    fn init_is_orthonormal_and_seed_dependent() {
        let config = cfg(4, &[3, 4], 4, &[2]);
        let dof: DofAllocation = "2,4;1".parse().unwrap();
        let u = init_postcoders(&config, &dof, &RngStream::new(1, 0)).unwrap();
        assert_eq!(u[1].shape(), (4, 4));
        for m in &u {
            assert!(orthonormality_error(m) < 1e-12);
        }
        for s in 0..100u64 {
            let a = init_postcoders(&config, &dof, &RngStream::new(2 * s, 0)).unwrap();
            let b = init_postcoders(&config, &dof, &RngStream::new(2 * s + 1, 0)).unwrap();
            assert_ne!(a, b);
        }
    }

    #[test]
    fn covariances_match_elementwise_sums() {
        let config = cfg(4, &[3, 2, 4], 5, &[3, 2]);
        let dof: DofAllocation = "1,2,2;2,1".parse().unwrap();
        let ch = sample_channels(&config, &RngStream::new(3, 0));
        let powers = PowerProfile::new(vec![1.0, 2.0, 0.5], vec![3.0, 0.7]).unwrap();
        let mut r = RngStream::new(4, 0).rng();
        let u: Vec<CMatrix> = (0..3)
            .map(|k| random_orthonormal(config.n_alpha[k], dof.d_alpha[k], &mut r))
            .collect();
        let v: Vec<CMatrix> = (0..2)
            .map(|l| random_orthonormal(config.n_beta[l], dof.d_beta[l], &mut r))
            .collect();

        for l in 0..2 {
            let got = covariance_tx(&ch, &u, &powers, l);
            let n = config.n_beta[l];
            for a in 0..n {
                for b in 0..n {
                    let mut want = Complex64::new(0.0, 0.0);
                    for k in 0..3 {
                        let g = &ch.g_cross[k][l];
                        let w = powers.p_alpha[k] / dof.d_alpha[k] as f64;
                        for p in 0..dof.d_alpha[k] {
                            let x: Complex64 = (0..g.nrows())
                                .map(|i| g[(i, a)].conj() * u[k][(i, p)])
                                .sum();
                            let y: Complex64 = (0..g.nrows())
                                .map(|i| g[(i, b)].conj() * u[k][(i, p)])
                                .sum();
                            want += x * y.conj() * w;
                        }
                    }
                    assert!((got[(a, b)] - want).norm() < 1e-12);
                }
            }
        }
        for k in 0..3 {
            let got = covariance_rx(&ch, &v, &powers, k);
            let n = config.n_alpha[k];
            for a in 0..n {
                for b in 0..n {
                    let mut want = Complex64::new(0.0, 0.0);
                    for l in 0..2 {
                        let g = &ch.g_cross[k][l];
                        let w = powers.p_beta[l] / dof.d_beta[l] as f64;
                        for p in 0..dof.d_beta[l] {
                            let x: Complex64 =
                                (0..g.ncols()).map(|j| g[(a, j)] * v[l][(j, p)]).sum();
                            let y: Complex64 =
                                (0..g.ncols()).map(|j| g[(b, j)] * v[l][(j, p)]).sum();
                            want += x * y.conj() * w;
                        }
                    }
                    assert!((got[(a, b)] - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_covariances_collapse() {
        let config = cfg(1, &[1], 1, &[1]);
        let mut ch = ChannelSet::zeros(&config);
        ch.g_cross[0][0][(0, 0)] = Complex64::new(0.6, 0.8) * 2.0;
        let one = CMatrix::from_element(1, 1, c(1.0));
        let powers = PowerProfile::new(vec![3.0], vec![5.0]).unwrap();
        assert!((covariance_tx(&ch, &[one.clone()], &powers, 0)[(0, 0)] - c(12.0)).norm() < 1e-12);
        assert!((covariance_rx(&ch, &[one.clone()], &powers, 0)[(0, 0)] - c(20.0)).norm() < 1e-12);
        let zero = PowerProfile::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(covariance_tx(&ch, &[one.clone()], &zero, 0).norm(), 0.0);
        assert_eq!(covariance_rx(&ch, &[one], &zero, 0).norm(), 0.0);
    }

    #[test]
    fn diagonal_covariance_picks_smallest_axis() {
        let cov =
            CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(5.0), c(1.0), c(3.0)]));
        let v = update_v_beta(&cov, 1).unwrap();
        assert!((v[(1, 0)] - c(1.0)).norm() < 1e-12);
        assert!(v[(0, 0)].norm() < 1e-12 && v[(2, 0)].norm() < 1e-12);
        let v = update_v_beta(&CMatrix::zeros(3, 3), 2).unwrap();
        assert!(orthonormality_error(&v) < 1e-12);
    }

    #[test]
    fn non_hermitian_covariance_is_rejected() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = c(1.0);
        assert!(matches!(
            update_v_beta(&m, 1),
            Err(Error::NotHermitian { .. })
        ));
    }

    proptest! {
        #[test]
        fn update_minimizes_rayleigh_quotient(seed in 0u64..1000, n in 1usize..6, d_raw in 0usize..6) {
            let d = d_raw.min(n);
            let mut r = RngStream::new(seed, 9).rng();
            let a = gaussian_matrix(n, n, &mut r);
            let cov = &a * a.adjoint();
            let v = update_v_beta(&cov, d).unwrap();
            prop_assert!(orthonormality_error(&v) < 1e-10);
            let (values, _) = crate::linalg::hermitian_eigh(&cov).unwrap();
            let excluded = values[d..].iter().copied().fold(f64::INFINITY, f64::min);
            for j in 0..d {
                let col = v.column(j);
                let q = (col.adjoint() * &cov * col)[(0, 0)].re;
                prop_assert!(q <= excluded + 1e-9 * values.last().unwrap().max(1.0));
            }
        }
    }

    #[test]
    fn zero_cross_channels_converge_after_one_iteration() {
        let (config, dof) = sim();
        let mut ch = sample_channels(&config, &RngStream::new(5, 0));
        for g in ch.g_cross.iter_mut().flatten() {
            g.fill(c(0.0));
        }
        let powers = PowerProfile::from_snr_db(&config, 30.0);
        let a = iterate_alignment(
            &ch,
            &dof,
            &powers,
            &IterationOptions::default(),
            &RngStream::new(6, 0),
        )
        .unwrap();
        assert_eq!(a.trace.totals, vec![0.0]);
        assert!(a.trace.converged);
    }

    #[test]
    fn infeasible_allocation_plateaus() {
        let config = cfg(2, &[2], 2, &[2]);
        let dof: DofAllocation = "2;2".parse().unwrap();
        let ch = sample_channels(&config, &RngStream::new(7, 0));
        let powers = PowerProfile::from_snr(&config, 1.0);
        let opts = IterationOptions {
            max_iters: 50,
            ..IterationOptions::default()
        };
        let a = iterate_alignment(&ch, &dof, &powers, &opts, &RngStream::new(8, 0)).unwrap();
        assert!(!a.trace.converged);
        assert_eq!(a.trace.iterations(), 50);
        // full-rank U and V leave the whole cross channel as leakage
        let expected = ch.g_cross[0][0].norm_squared() * 0.5;
        assert!((a.trace.last().unwrap() - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn leakage_trace_is_monotone_and_matches_definition() {
        let (config, dof) = sim();
        let ch = sample_channels(&config, &RngStream::new(11, 0));
        let powers = PowerProfile::from_snr_db(&config, 30.0);
        let opts = IterationOptions {
            max_iters: 200,
            record_trace: true,
            ..IterationOptions::default()
        };
        let a = iterate_alignment(&ch, &dof, &powers, &opts, &RngStream::new(12, 0)).unwrap();
        let t = &a.trace.totals;
        for w in t.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * t[0]);
        }
        for (row, total) in a.trace.per_user.iter().zip(t) {
            assert!((row.iter().sum::<f64>() - total).abs() <= 1e-12 * total.max(1.0));
        }
        let direct: f64 = (0..config.k())
            .map(|k| leakage(&a.u_alpha[k], &covariance_rx(&ch, &a.v_beta, &powers, k)))
            .sum();
        assert!((direct - t.last().unwrap()).abs() <= 1e-9 * t[0]);
        for m in a.u_alpha.iter().chain(&a.v_beta) {
            assert!(orthonormality_error(m) < 1e-10);
        }
    }

    #[test]
    fn iteration_is_deterministic() {
        let (config, dof) = sim();
        let ch = sample_channels(&config, &RngStream::new(13, 0));
        let powers = PowerProfile::from_snr_db(&config, 20.0);
        let opts = IterationOptions {
            max_iters: 30,
            ..IterationOptions::default()
        };
        let a = iterate_alignment(&ch, &dof, &powers, &opts, &RngStream::new(1, 1)).unwrap();
        let b = iterate_alignment(&ch, &dof, &powers, &opts, &RngStream::new(1, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn branch_predicate() {
        assert_eq!(
            Branch::select(&cfg(13, &[3, 6], 10, &[4, 6, 6])),
            Branch::UplinkFirst
        );
        assert_eq!(
            Branch::select(&cfg(10, &[4, 6, 6], 13, &[3, 6])),
            Branch::DownlinkFirst
        );
        assert_eq!(Branch::select(&cfg(4, &[2], 4, &[2])), Branch::UplinkFirst);
    }

    fn assert_zero_forced(config: &NetworkConfig, dof: &DofAllocation, seed: u64) -> Construction {
        let ch = sample_channels(config, &RngStream::new(seed, 0));
        let powers = PowerProfile::from_snr_db(config, 30.0);
        let out = construct(
            &ch,
            dof,
            &powers,
            &IterationOptions::default(),
            &RngStream::new(seed, 1),
        )
        .unwrap();
        let r = &out.residuals;
        assert!(r.zero_forced_max() <= 1e-8 * r.channel_scale, "{r:?}");
        for m in [
            &out.beamformers.u_alpha,
            &out.beamformers.v_alpha,
            &out.beamformers.u_beta,
            &out.beamformers.v_beta,
        ]
        .into_iter()
        .flatten()
        {
            for col in m.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
        }
        out
    }

    #[test]
    fn example_four_zero_forcing() {
        let config = cfg(12, &[6, 6, 8], 16, &[6, 6]);
        let dof = DofAllocation::symmetric(&config, 4, 2);
        let out = assert_zero_forced(&config, &dof, 21);
        assert_eq!(out.branch, Branch::DownlinkFirst);
        assert!(out.trace.converged);
        assert!(out.residuals.min_margin().unwrap() > 1e-3);
    }

    #[test]
    fn both_branches_zero_force() {
        let ex1 = cfg(10, &[4, 6, 6], 13, &[3, 6]);
        let dof: DofAllocation = "2,4,4;1,2".parse().unwrap();
        assert_eq!(
            assert_zero_forced(&ex1, &dof, 22).branch,
            Branch::DownlinkFirst
        );
        let dual = ex1.dual();
        assert_eq!(
            assert_zero_forced(&dual, &dof.dual(), 23).branch,
            Branch::UplinkFirst
        );
    }

    #[test]
    fn inactive_uplink_reduces_to_downlink_zero_forcing() {
        let config = cfg(6, &[2, 3], 4, &[2]);
        let dof: DofAllocation = "2,3;0".parse().unwrap();
        let out = assert_zero_forced(&config, &dof, 24);
        assert_eq!(out.beamformers.u_beta[0].shape(), (4, 0));
        assert_eq!(out.residuals.desired_beta, vec![None]);
        assert_eq!(out.residuals.inter_alpha, 0.0);
        assert!(out.residuals.min_margin().unwrap() > 1e-6);
    }

    #[test]
    fn singular_system_names_branch() {
        let config = cfg(4, &[2, 2], 2, &[1]);
        let dof: DofAllocation = "2,2;1".parse().unwrap();
        let ch = sample_channels(&config, &RngStream::new(25, 0));
        let u: Vec<CMatrix> = vec![CMatrix::identity(2, 2), CMatrix::identity(2, 2)];
        let v = vec![CMatrix::identity(1, 1)];
        // five rows against four BS antennas: no right inverse
        match zero_force_step2(&ch, &dof, &u, &v) {
            Err(Error::SingularSystem { branch, .. }) => assert_eq!(branch, "M_alpha >= M_beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalize_scales_columns_only() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(2.0);
        m[(1, 1)] = Complex64::new(0.0, 0.5);
        let b = BeamformerSet {
            u_alpha: vec![m.clone()],
            v_alpha: vec![],
            u_beta: vec![],
            v_beta: vec![],
        };
        let n = normalize(&b).unwrap();
        assert_eq!(n.u_alpha[0][(0, 0)], c(1.0));
        assert_eq!(n.u_alpha[0][(1, 1)], Complex64::new(0.0, 1.0));
        assert_eq!(normalize(&n).unwrap(), n);

        let mut z = m;
        z.column_mut(1).fill(c(0.0));
        let b = BeamformerSet {
            u_alpha: vec![],
            v_alpha: vec![],
            u_beta: vec![z],
            v_beta: vec![],
        };
        assert_eq!(
            normalize(&b),
            Err(Error::ZeroColumn {
                matrix: "U_β1".into(),
                column: 2
            })
        );
    }

    #[test]
    fn normalize_rescales_residuals_by_positive_factors() {
        let config = cfg(10, &[4, 6, 6], 13, &[3, 6]);
        let dof: DofAllocation = "2,4,4;1,2".parse().unwrap();
        let ch = sample_channels(&config, &RngStream::new(26, 0));
        let powers = PowerProfile::from_snr(&config, 100.0);
        let a = iterate_alignment(
            &ch,
            &dof,
            &powers,
            &IterationOptions::default(),
            &RngStream::new(27, 0),
        )
        .unwrap();
        let (v_alpha, u_beta) = zero_force_step2(&ch, &dof, &a.u_alpha, &a.v_beta).unwrap();
        let raw = BeamformerSet {
            u_alpha: a.u_alpha,
            v_alpha,
            u_beta,
            v_beta: a.v_beta,
        };
        let unit = normalize(&raw).unwrap();
        // U_β^H G_β V_α: entry (p,q) scales by 1/(|u_p| |v_q|)
        for k in 0..3 {
            for l in 0..2 {
                let before = raw.u_beta[l].adjoint() * &ch.g_bs * &raw.v_alpha[k];
                let after = unit.u_beta[l].adjoint() * &ch.g_bs * &unit.v_alpha[k];
                for p in 0..before.nrows() {
                    for q in 0..before.ncols() {
                        let s = raw.u_beta[l].column(p).norm() * raw.v_alpha[k].column(q).norm();
                        assert!(
                            (after[(p, q)] * s - before[(p, q)]).norm()
                                <= 1e-12 * before[(p, q)].norm().max(1e-300) + 1e-15
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn random_beamformers_leave_order_one_residuals() {
        let (config, dof) = sim();
        let ch = sample_channels(&config, &RngStream::new(28, 0));
        let mut r = RngStream::new(29, 0).rng();
        let b = BeamformerSet {
            u_alpha: config
                .n_alpha
                .iter()
                .zip(&dof.d_alpha)
                .map(|(&n, &d)| random_orthonormal(n, d, &mut r))
                .collect(),
            v_alpha: dof
                .d_alpha
                .iter()
                .map(|&d| random_orthonormal(config.m_alpha, d, &mut r))
                .collect(),
            u_beta: dof
                .d_beta
                .iter()
                .map(|&d| random_orthonormal(config.m_beta, d, &mut r))
                .collect(),
            v_beta: config
                .n_beta
                .iter()
                .zip(&dof.d_beta)
                .map(|(&n, &d)| random_orthonormal(n, d, &mut r))
                .collect(),
        };
        let rep = residual_report(&ch, &b);
        for x in [
            rep.inter_alpha,
            rep.inter_beta,
            rep.intra_alpha,
            rep.intra_beta,
        ] {
            assert!(x > 0.1, "{rep:?}");
        }
    }

    #[test]
    fn trace_csv_layout() {
        let t = LeakageTrace {
            totals: vec![2.0, 0.5],
            per_user: vec![vec![1.5, 0.5], vec![0.25, 0.25]],
            converged: false,
        };
        assert_eq!(
            t.to_csv(),
            "iteration,total_leakage,leakage_alpha_1,leakage_alpha_2\n1,2.00000000,1.50000000,0.500000000\n2,0.500000000,0.250000000,0.250000000\n"
        );
    }
}
