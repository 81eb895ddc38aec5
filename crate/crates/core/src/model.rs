//! Network and stream configuration, channel realizations and the
//! cross-channel block partition.
//!
//! Cell α runs downlink: BS α (`m_alpha` antennas) serves `K` users with
//! `n_alpha[k]` antennas each. Cell β runs uplink: `L` users with
//! `n_beta[l]` antennas transmit to BS β (`m_beta` antennas). All indices in
//! this crate are 0-based; user `(α,1)` is index 0.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense complex matrix used for channels and beamformers.
pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(rename = "M_alpha")]
    pub m_alpha: usize,
    #[serde(rename = "N_alpha")]
    pub n_alpha: Vec<usize>,
    #[serde(rename = "M_beta")]
    pub m_beta: usize,
    #[serde(rename = "N_beta")]
    pub n_beta: Vec<usize>,
}

impl NetworkConfig {
    pub fn new(
        m_alpha: usize,
        n_alpha: Vec<usize>,
        m_beta: usize,
        n_beta: Vec<usize>,
    ) -> Result<Self> {
        let config = Self {
            m_alpha,
            n_alpha,
            m_beta,
            n_beta,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_alpha.is_empty() {
            return Err(Error::InvalidConfig(
                "N_alpha must list at least one user".into(),
            ));
        }
        if self.n_beta.is_empty() {
            return Err(Error::InvalidConfig(
                "N_beta must list at least one user".into(),
            ));
        }
        if self.m_alpha == 0 {
            return Err(Error::InvalidConfig("M_alpha must be at least 1".into()));
        }
        if self.m_beta == 0 {
            return Err(Error::InvalidConfig("M_beta must be at least 1".into()));
        }
        if let Some(k) = self.n_alpha.iter().position(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!(
                "N_α{} must be at least 1",
                k + 1
            )));
        }
        if let Some(l) = self.n_beta.iter().position(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!(
                "N_β{} must be at least 1",
                l + 1
            )));
        }
        Ok(())
    }

    /// Number of users in cell α.
    pub fn k(&self) -> usize {
        self.n_alpha.len()
    }

    /// Number of users in cell β.
    pub fn l(&self) -> usize {
        self.n_beta.len()
    }

    /// Swaps the roles of the two cells.
    pub fn dual(&self) -> NetworkConfig {
        NetworkConfig {
            m_alpha: self.m_beta,
            n_alpha: self.n_beta.clone(),
            m_beta: self.m_alpha,
            n_beta: self.n_alpha.clone(),
        }
    }
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},({}))x({},({}))",
            self.m_alpha,
            join(&self.n_alpha, ","),
            self.m_beta,
            join(&self.n_beta, ",")
        )
    }
}

/// Per-user stream counts. A zero entry marks an inactive user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DofAllocation {
    pub d_alpha: Vec<usize>,
    pub d_beta: Vec<usize>,
}

impl DofAllocation {
    pub fn new(d_alpha: Vec<usize>, d_beta: Vec<usize>) -> Self {
        Self { d_alpha, d_beta }
    }

    /// Same stream count for every user of a cell.
    pub fn symmetric(config: &NetworkConfig, d_alpha: usize, d_beta: usize) -> Self {
        Self {
            d_alpha: vec![d_alpha; config.k()],
            d_beta: vec![d_beta; config.l()],
        }
    }

    pub fn zeros(config: &NetworkConfig) -> Self {
        Self::symmetric(config, 0, 0)
    }

    pub fn alpha_total(&self) -> usize {
        self.d_alpha.iter().sum()
    }

    pub fn beta_total(&self) -> usize {
        self.d_beta.iter().sum()
    }

    pub fn sum(&self) -> usize {
        self.alpha_total() + self.beta_total()
    }

    /// Allocation for the dual network: the β streams become α streams.
    pub fn dual(&self) -> DofAllocation {
        DofAllocation {
            d_alpha: self.d_beta.clone(),
            d_beta: self.d_alpha.clone(),
        }
    }

    /// `true` when every entry is at least the corresponding entry of `other`.
    pub fn dominates(&self, other: &DofAllocation) -> bool {
        self.d_alpha.len() == other.d_alpha.len()
            && self.d_beta.len() == other.d_beta.len()
            && self.d_alpha.iter().zip(&other.d_alpha).all(|(a, b)| a >= b)
            && self.d_beta.iter().zip(&other.d_beta).all(|(a, b)| a >= b)
    }
}

impl fmt::Display for DofAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{};{}",
            join(&self.d_alpha, ","),
            join(&self.d_beta, ",")
        )
    }
}

impl FromStr for DofAllocation {
    type Err = Error;

    /// Parses `"3,3,3,3;2,2,2"`: α list, semicolon, β list.
    fn from_str(s: &str) -> Result<Self> {
        let (alpha, beta) = s.split_once(';').ok_or_else(|| {
            Error::Parse(format!(
                "dof string {s:?} needs a ';' between the α and β lists"
            ))
        })?;
        let parse_list = |part: &str, side: &str| -> Result<Vec<usize>> {
            part.split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    tok.parse::<usize>().map_err(|_| {
                        Error::Parse(format!("{side} entry {tok:?} in dof string {s:?} is not a non-negative integer"))
                    })
                })
                .collect()
        };
        Ok(Self {
            d_alpha: parse_list(alpha, "α")?,
            d_beta: parse_list(beta, "β")?,
        })
    }
}

/// Checks that `dof` matches `config` in length and never exceeds a user's
/// antenna count.
pub fn validate_config(config: &NetworkConfig, dof: &DofAllocation) -> Result<()> {
    config.validate()?;
    if dof.d_alpha.len() != config.k() {
        return Err(Error::DimensionMismatch {
            field: "d_alpha".into(),
            detail: format!(
                "has {} entries but the network has K = {} users",
                dof.d_alpha.len(),
                config.k()
            ),
        });
    }
    if dof.d_beta.len() != config.l() {
        return Err(Error::DimensionMismatch {
            field: "d_beta".into(),
            detail: format!(
                "has {} entries but the network has L = {} users",
                dof.d_beta.len(),
                config.l()
            ),
        });
    }
    for (k, (&d, &n)) in dof.d_alpha.iter().zip(&config.n_alpha).enumerate() {
        if d > n {
            return Err(Error::StreamOverflow {
                stream: format!("d_α{}", k + 1),
                antennas: format!("N_α{}", k + 1),
                d,
                n,
            });
        }
    }
    for (l, (&d, &n)) in dof.d_beta.iter().zip(&config.n_beta).enumerate() {
        if d > n {
            return Err(Error::StreamOverflow {
                stream: format!("d_β{}", l + 1),
                antennas: format!("N_β{}", l + 1),
                d,
                n,
            });
        }
    }
    Ok(())
}

/// Reproducible random stream: a seed plus a stream index.
///
/// Each `(seed, stream)` pair maps to an independent ChaCha20 keystream, so
/// parallel trials can each own a stream without sharing state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream keyed by `index`; distinct indices give distinct streams.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// One `CN(0,1)` draw: independent real and imaginary parts of variance 1/2.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. `CN(0,1)` entries, filled column-major.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let data: Vec<Complex64> = (0..rows * cols).map(|_| complex_gaussian(rng)).collect();
    CMatrix::from_vec(rows, cols, data)
}

/// One realization of every channel in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `H_αk`: BS α to user (α,k), `N_αk x M_α`.
    pub h_alpha: Vec<CMatrix>,
    /// `G_αkl`: user (β,l) to user (α,k), `N_αk x N_βl`, indexed `[k][l]`.
    pub g_cross: Vec<Vec<CMatrix>>,
    /// `H_βl`: user (β,l) to BS β, `M_β x N_βl`.
    pub h_beta: Vec<CMatrix>,
    /// `G_β`: BS α to BS β, `M_β x M_α`.
    pub g_bs: CMatrix,
}

impl ChannelSet {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            h_alpha: config
                .n_alpha
                .iter()
                .map(|&n| CMatrix::zeros(n, config.m_alpha))
                .collect(),
            g_cross: config
                .n_alpha
                .iter()
                .map(|&na| {
                    config
                        .n_beta
                        .iter()
                        .map(|&nb| CMatrix::zeros(na, nb))
                        .collect()
                })
                .collect(),
            h_beta: config
                .n_beta
                .iter()
                .map(|&n| CMatrix::zeros(config.m_beta, n))
                .collect(),
            g_bs: CMatrix::zeros(config.m_beta, config.m_alpha),
        }
    }

    pub fn k(&self) -> usize {
        self.h_alpha.len()
    }

    /// Network shape implied by the matrix dimensions.
    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            m_alpha: self.g_bs.ncols(),
            n_alpha: self.h_alpha.iter().map(|h| h.nrows()).collect(),
            m_beta: self.g_bs.nrows(),
            n_beta: self.h_beta.iter().map(|h| h.ncols()).collect(),
        }
    }

    /// Checks the dimensions for internal consistency.
    pub fn check_consistent(&self) -> Result<NetworkConfig> {
        let config = self.config();
        self.check_dims(&config)?;
        Ok(config)
    }

    pub fn l(&self) -> usize {
        self.h_beta.len()
    }

    /// Checks every matrix dimension against `config`.
    pub fn check_dims(&self, config: &NetworkConfig) -> Result<()> {
        let bad =
            |field: String, got: (usize, usize), want: (usize, usize)| Error::DimensionMismatch {
                field,
                detail: format!("is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1),
            };
        if self.h_alpha.len() != config.k()
            || self.g_cross.len() != config.k()
            || self.h_beta.len() != config.l()
        {
            return Err(Error::DimensionMismatch {
                field: "channels".into(),
                detail: "user counts do not match the configuration".into(),
            });
        }
        for (k, h) in self.h_alpha.iter().enumerate() {
            let want = (config.n_alpha[k], config.m_alpha);
            if h.shape() != want {
                return Err(bad(format!("H_α{}", k + 1), h.shape(), want));
            }
        }
        for (k, row) in self.g_cross.iter().enumerate() {
            if row.len() != config.l() {
                return Err(Error::DimensionMismatch {
                    field: format!("G_α{}·", k + 1),
                    detail: format!("has {} entries, expected {}", row.len(), config.l()),
                });
            }
            for (l, g) in row.iter().enumerate() {
                let want = (config.n_alpha[k], config.n_beta[l]);
                if g.shape() != want {
                    return Err(bad(format!("G_α{}{}", k + 1, l + 1), g.shape(), want));
                }
            }
        }
        for (l, h) in self.h_beta.iter().enumerate() {
            let want = (config.m_beta, config.n_beta[l]);
            if h.shape() != want {
                return Err(bad(format!("H_β{}", l + 1), h.shape(), want));
            }
        }
        let want = (config.m_beta, config.m_alpha);
        if self.g_bs.shape() != want {
            return Err(bad("G_β".into(), self.g_bs.shape(), want));
        }
        Ok(())
    }

    /// Iterates over every channel matrix in sampling order.
    pub fn iter(&self) -> impl Iterator<Item = &CMatrix> {
        self.h_alpha
            .iter()
            .chain(self.g_cross.iter().flatten())
            .chain(self.h_beta.iter())
            .chain(std::iter::once(&self.g_bs))
    }

    /// Mean Frobenius norm over all channel matrices.
    pub fn mean_frobenius_norm(&self) -> f64 {
        let (sum, count) = self
            .iter()
            .fold((0.0, 0usize), |(s, c), m| (s + m.norm(), c + 1));
        sum / count as f64
    }
}

/// Draws every channel entry i.i.d. `CN(0,1)`.
///
/// Draw order is fixed (H_α, then G_α row-major over (k,l), then H_β, then
/// G_β), so the result depends only on `(config, rng)`.
pub fn sample_channels(config: &NetworkConfig, rng: &RngStream) -> ChannelSet {
    let mut r = rng.rng();
    let h_alpha = config
        .n_alpha
        .iter()
        .map(|&n| gaussian_matrix(n, config.m_alpha, &mut r))
        .collect();
    let g_cross = config
        .n_alpha
        .iter()
        .map(|&na| {
            config
                .n_beta
                .iter()
                .map(|&nb| gaussian_matrix(na, nb, &mut r))
                .collect()
        })
        .collect();
    let h_beta = config
        .n_beta
        .iter()
        .map(|&n| gaussian_matrix(config.m_beta, n, &mut r))
        .collect();
    let g_bs = gaussian_matrix(config.m_beta, config.m_alpha, &mut r);
    ChannelSet {
        h_alpha,
        g_cross,
        h_beta,
        g_bs,
    }
}

/// The four blocks of a cross channel split at `(d_row, d_col)`:
/// `[g1 g2; g3 g4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlockPartition {
    pub g1: CMatrix,
    pub g2: CMatrix,
    pub g3: CMatrix,
    pub g4: CMatrix,
}

impl CrossBlockPartition {
    pub fn reassemble(&self) -> CMatrix {
        let (top, left) = (self.g1.nrows(), self.g1.ncols());
        let rows = top + self.g3.nrows();
        let cols = left + self.g2.ncols();
        let mut g = CMatrix::zeros(rows, cols);
        g.view_mut((0, 0), self.g1.shape()).copy_from(&self.g1);
        g.view_mut((0, left), self.g2.shape()).copy_from(&self.g2);
        g.view_mut((top, 0), self.g3.shape()).copy_from(&self.g3);
        g.view_mut((top, left), self.g4.shape()).copy_from(&self.g4);
        g
    }
}

pub fn partition_cross(g: &CMatrix, d_row: usize, d_col: usize) -> Result<CrossBlockPartition> {
    let (rows, cols) = g.shape();
    if d_row > rows || d_col > cols {
        return Err(Error::PartitionRange {
            rows,
            cols,
            d_row,
            d_col,
        });
    }
    let (lo_r, lo_c) = (rows - d_row, cols - d_col);
    Ok(CrossBlockPartition {
        g1: g.view((0, 0), (d_row, d_col)).into_owned(),
        g2: g.view((0, d_col), (d_row, lo_c)).into_owned(),
        g3: g.view((d_row, 0), (lo_r, d_col)).into_owned(),
        g4: g.view((d_row, d_col), (lo_r, lo_c)).into_owned(),
    })
}
