//! Achievable rates, Monte-Carlo SNR sweeps and the reference schemes.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::Serialize;

use crate::beamform::{construct, db_to_linear, BeamformerSet, IterationOptions, PowerProfile};
use crate::error::{Error, Result};
use crate::format::sig;
use crate::linalg::{condition_number, full_rank_pinv, ln_det_hpd};
use crate::model::{
    sample_channels, validate_config, CMatrix, ChannelSet, DofAllocation, NetworkConfig, RngStream,
};

/// Per-user rates in bits per channel use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateBreakdown {
    pub rate_alpha: Vec<f64>,
    pub rate_beta: Vec<f64>,
    pub sum: f64,
}

/// `Σ w · A A^H` over the given terms, as a `d x d` matrix.
fn covariance(d: usize, terms: impl IntoIterator<Item = (f64, CMatrix)>) -> CMatrix {
    let mut c = CMatrix::zeros(d, d);
    for (w, a) in terms {
        if w != 0.0 && a.ncols() > 0 {
            c += (&a * a.adjoint()).scale(w);
        }
    }
    c
}

/// `log2 det(I + C_d (I + C_i)^-1)`, evaluated as the difference of the
/// log-determinants of `I + C_i + C_d` and `I + C_i`.
fn log_det_rate(
    desired: &CMatrix,
    interference: &CMatrix,
    user: impl FnOnce() -> String,
) -> Result<f64> {
    let d = desired.nrows();
    if d == 0 {
        return Ok(0.0);
    }
    let base = CMatrix::identity(d, d) + interference;
    let full = &base + desired;
    match (ln_det_hpd(&full), ln_det_hpd(&base)) {
        (Some(a), Some(b)) if (a - b).is_finite() => Ok(((a - b) / LN_2).max(0.0)),
        _ => Err(Error::NumericalFailure {
            user: user(),
            condition: condition_number(&base),
        }),
    }
}

/// Rate of user (α,k) with all interference treated as noise.
pub fn user_rate_alpha(
    channels: &ChannelSet,
    b: &BeamformerSet,
    powers: &PowerProfile,
    k: usize,
) -> Result<f64> {
    let u_h = b.u_alpha[k].adjoint();
    let d = u_h.nrows();
    let eff = &u_h * &channels.h_alpha[k];
    let wa = |i: usize| powers.per_stream_alpha(i, b.v_alpha[i].ncols());
    let desired = covariance(d, [(wa(k), &eff * &b.v_alpha[k])]);
    let intra = (0..b.v_alpha.len())
        .filter(|&i| i != k)
        .map(|i| (wa(i), &eff * &b.v_alpha[i]));
    let inter = b.v_beta.iter().enumerate().map(|(l, v)| {
        (
            powers.per_stream_beta(l, v.ncols()),
            &u_h * &channels.g_cross[k][l] * v,
        )
    });
    let interference = covariance(d, intra.chain(inter));
    log_det_rate(&desired, &interference, || format!("α{}", k + 1))
}

/// Rate of user (β,l) at BS β with all interference treated as noise.
pub fn user_rate_beta(
    channels: &ChannelSet,
    b: &BeamformerSet,
    powers: &PowerProfile,
    l: usize,
) -> Result<f64> {
    let u_h = b.u_beta[l].adjoint();
    let d = u_h.nrows();
    let wb = |j: usize| powers.per_stream_beta(j, b.v_beta[j].ncols());
    let desired = covariance(d, [(wb(l), &u_h * &channels.h_beta[l] * &b.v_beta[l])]);
    let intra = (0..b.v_beta.len())
        .filter(|&j| j != l)
        .map(|j| (wb(j), &u_h * &channels.h_beta[j] * &b.v_beta[j]));
    let u_g = &u_h * &channels.g_bs;
    let inter = b
        .v_alpha
        .iter()
        .enumerate()
        .map(|(k, v)| (powers.per_stream_alpha(k, v.ncols()), &u_g * v));
    let interference = covariance(d, intra.chain(inter));
    log_det_rate(&desired, &interference, || format!("β{}", l + 1))
}

pub fn sum_rate(
    channels: &ChannelSet,
    b: &BeamformerSet,
    powers: &PowerProfile,
) -> Result<RateBreakdown> {
    let rate_alpha = (0..b.u_alpha.len())
        .map(|k| user_rate_alpha(channels, b, powers, k))
        .collect::<Result<Vec<_>>>()?;
    let rate_beta = (0..b.u_beta.len())
        .map(|l| user_rate_beta(channels, b, powers, l))
        .collect::<Result<Vec<_>>>()?;
    let sum = rate_alpha.iter().sum::<f64>() + rate_beta.iter().sum::<f64>();
    Ok(RateBreakdown {
        rate_alpha,
        rate_beta,
        sum,
    })
}

/// Capacity of a single-antenna link, `log2(1 + SNR)`.
pub fn baseline_point_to_point(snr_db: f64) -> f64 {
    (1.0 + db_to_linear(snr_db)).log2()
}

/// Spreads `total` streams over users one at a time, cycling in user order
/// and skipping users already at their cap.
pub fn round_robin(caps: &[usize], total: usize) -> Vec<usize> {
    let mut d = vec![0; caps.len()];
    let total = total.min(caps.iter().sum());
    let mut placed = 0;
    while placed < total {
        for (di, &cap) in d.iter_mut().zip(caps) {
            if placed < total && *di < cap {
                *di += 1;
                placed += 1;
            }
        }
    }
    d
}

fn top_left_singular(m: &CMatrix, d: usize) -> CMatrix {
    if d == 0 {
        return CMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    CMatrix::from_columns(&order[..d].iter().map(|&i| u.column(i)).collect::<Vec<_>>())
}

fn unit_columns(mut m: CMatrix) -> CMatrix {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c.unscale_mut(n);
        }
    }
    m
}

/// Sum rate of cell α alone: each user receives on the dominant left
/// singular vectors of its channel, BS α zero-forces across users.
fn single_cell_alpha(channels: &ChannelSet, powers: &PowerProfile, d: &[usize]) -> Result<f64> {
    let m = channels.g_bs.ncols();
    let u: Vec<CMatrix> = channels
        .h_alpha
        .iter()
        .zip(d)
        .map(|(h, &dk)| top_left_singular(h, dk))
        .collect();
    let rows: Vec<CMatrix> = u
        .iter()
        .zip(&channels.h_alpha)
        .map(|(u, h)| u.adjoint() * h)
        .collect();
    let inv = full_rank_pinv(&crate::linalg::vstack(&rows, m)).map_err(|condition| {
        Error::SingularSystem {
            branch: "single-cell downlink",
            condition,
        }
    })?;
    let mut at = 0;
    let v: Vec<CMatrix> = d
        .iter()
        .map(|&dk| {
            let block = unit_columns(inv.columns(at, dk).into_owned());
            at += dk;
            block
        })
        .collect();
    let b = BeamformerSet {
        u_alpha: u,
        v_alpha: v,
        u_beta: Vec::new(),
        v_beta: Vec::new(),
    };
    let rates = (0..d.len())
        .map(|k| user_rate_alpha(channels, &b, powers, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(rates.iter().sum())
}

/// Sum rate of cell β alone: each user transmits on the dominant right
/// singular vectors of its channel, BS β zero-forces across users.
fn single_cell_beta(channels: &ChannelSet, powers: &PowerProfile, d: &[usize]) -> Result<f64> {
    let m = channels.g_bs.nrows();
    let v: Vec<CMatrix> = channels
        .h_beta
        .iter()
        .zip(d)
        .map(|(h, &dl)| top_left_singular(&h.adjoint(), dl))
        .collect();
    let cols: Vec<CMatrix> = v.iter().zip(&channels.h_beta).map(|(v, h)| h * v).collect();
    let inv = full_rank_pinv(&crate::linalg::hstack(&cols, m)).map_err(|condition| {
        Error::SingularSystem {
            branch: "single-cell uplink",
            condition,
        }
    })?;
    let mut at = 0;
    let u: Vec<CMatrix> = d
        .iter()
        .map(|&dl| {
            let block = unit_columns(inv.rows(at, dl).adjoint());
            at += dl;
            block
        })
        .collect();
    let b = BeamformerSet {
        u_alpha: Vec::new(),
        v_alpha: Vec::new(),
        u_beta: u,
        v_beta: v,
    };
    let rates = (0..d.len())
        .map(|l| user_rate_beta(channels, &b, powers, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(rates.iter().sum())
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }
}

/// Mean sum rate of each cell operating alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingleCellBaseline {
    pub alpha: MeanEstimate,
    pub beta: MeanEstimate,
}

impl SingleCellBaseline {
    pub fn best(&self) -> f64 {
        self.alpha.mean.max(self.beta.mean)
    }
}

/// Both single-cell schemes over `trials` channel draws. Trial `t` uses the
/// same channels as trial `t` of [`monte_carlo_sweep`] with the same seed.
///
/// Each cell serves `min(M, ΣN)` streams spread by [`round_robin`]; BS α
/// spends `SNR` in total, every β user spends `SNR`.
pub fn single_cell_rates(
    config: &NetworkConfig,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<SingleCellBaseline> {
    config.validate()?;
    let d_alpha = round_robin(&config.n_alpha, config.m_alpha);
    let d_beta = round_robin(&config.n_beta, config.m_beta);
    let powers = PowerProfile::from_snr_db(config, snr_db);
    let draws = RngStream::new(seed, CHANNEL_STREAM);
    let per_trial: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let ch = sample_channels(config, &draws.substream(t));
            Ok((
                single_cell_alpha(&ch, &powers, &d_alpha)?,
                single_cell_beta(&ch, &powers, &d_beta)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (a, b): (Vec<f64>, Vec<f64>) = per_trial.into_iter().unzip();
    Ok(SingleCellBaseline {
        alpha: MeanEstimate::from_samples(&a),
        beta: MeanEstimate::from_samples(&b),
    })
}

/// Larger of the two single-cell mean sum rates.
pub fn baseline_single_cell(
    config: &NetworkConfig,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    Ok(single_cell_rates(config, snr_db, trials, seed)?.best())
}

const CHANNEL_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    /// Means over the successful trials; NaN when none succeeded.
    pub mean_sum_rate: f64,
    pub mean_rate_alpha: Vec<f64>,
    pub mean_rate_beta: Vec<f64>,
    pub baseline_single_cell: f64,
    pub baseline_p2p: f64,
    pub trials_ok: usize,
    pub trials_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config: NetworkConfig,
    pub dof: DofAllocation,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,mean_sum_rate");
        for k in 1..=self.config.k() {
            out.push_str(&format!(",mean_rate_alpha_{k}"));
        }
        for l in 1..=self.config.l() {
            out.push_str(&format!(",mean_rate_beta_{l}"));
        }
        out.push_str(",baseline_single_cell,baseline_p2p,trials_ok,trials_failed\n");
        for r in &self.rows {
            let mut fields = vec![sig(r.snr_db), sig(r.mean_sum_rate)];
            fields.extend(
                r.mean_rate_alpha
                    .iter()
                    .chain(&r.mean_rate_beta)
                    .map(|&x| sig(x)),
            );
            fields.push(sig(r.baseline_single_cell));
            fields.push(sig(r.baseline_p2p));
            fields.push(r.trials_ok.to_string());
            fields.push(r.trials_failed.to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep results serialize")
    }
}

fn mean_of(rates: &[&RateBreakdown], pick: impl Fn(&RateBreakdown) -> f64) -> f64 {
    if rates.is_empty() {
        return f64::NAN;
    }
    rates.iter().map(|r| pick(r)).sum::<f64>() / rates.len() as f64
}

/// Proposed scheme and baselines over an SNR grid.
///
/// Trial `t` draws its channels from substream `t` (shared by all grid
/// points) and its initial postcoders from a separate substream `t`. Powers
/// are `P_αk = SNR/K`, `P_βl = SNR`. Trials whose construction or rate
/// evaluation fails are counted and left out of the means. Means are taken
/// in trial order, so the result does not depend on the thread count.
pub fn monte_carlo_sweep(
    config: &NetworkConfig,
    dof: &DofAllocation,
    snr_grid_db: &[f64],
    trials: usize,
    opts: &IterationOptions,
    seed: u64,
) -> Result<SweepResult> {
    validate_config(config, dof)?;
    let draws = RngStream::new(seed, CHANNEL_STREAM);
    let inits = RngStream::new(seed, INIT_STREAM);
    let jobs: Vec<(usize, u64)> = (0..snr_grid_db.len())
        .flat_map(|g| (0..trials as u64).map(move |t| (g, t)))
        .collect();
    let outcomes: Vec<Result<RateBreakdown>> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let ch = sample_channels(config, &draws.substream(t));
            let powers = PowerProfile::from_snr_db(config, snr_grid_db[g]);
            let c = construct(&ch, dof, &powers, opts, &inits.substream(t))?;
            sum_rate(&ch, &c.beamformers, &powers)
        })
        .collect();

    let mut rows = Vec::with_capacity(snr_grid_db.len());
    for (g, &snr_db) in snr_grid_db.iter().enumerate() {
        let chunk = &outcomes[g * trials..(g + 1) * trials];
        let ok: Vec<&RateBreakdown> = chunk.iter().filter_map(|r| r.as_ref().ok()).collect();
        rows.push(SweepRow {
            snr_db,
            mean_sum_rate: mean_of(&ok, |r| r.sum),
            mean_rate_alpha: (0..config.k())
                .map(|k| mean_of(&ok, |r| r.rate_alpha[k]))
                .collect(),
            mean_rate_beta: (0..config.l())
                .map(|l| mean_of(&ok, |r| r.rate_beta[l]))
                .collect(),
            baseline_single_cell: baseline_single_cell(config, snr_db, trials, seed)?,
            baseline_p2p: baseline_point_to_point(snr_db),
            trials_ok: ok.len(),
            trials_failed: trials - ok.len(),
        });
    }
    Ok(SweepResult {
        config: config.clone(),
        dof: dof.clone(),
        trials,
        seed,
        rows,
    })
}
