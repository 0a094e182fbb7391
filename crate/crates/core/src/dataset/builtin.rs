use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{parse_matrix_market, CollectiveData};
use crate::error::{Error, Result};

/// Environment variable naming a directory holding `ash608.mtx` / `gr_30_30.mtx`.
pub const DATA_DIR_ENV: &str = "IPG_DATA_DIR";

/// The 900 x 900 nine-point stencil on a 30 x 30 grid: 8 on the diagonal and
/// -1 for each of the (up to) eight neighbours. This is the structure and the
/// value pattern of the SuiteSparse `HB/gr_30_30` matrix (7744 nonzeros).
pub fn gr_30_30() -> DMatrix<f64> {
    const SIDE: usize = 30;
    let n = SIDE * SIDE;
    let mut m = DMatrix::zeros(n, n);
    for r in 0..SIDE {
        for c in 0..SIDE {
            let i = r * SIDE + c;
            m[(i, i)] = 8.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if (0..SIDE as i64).contains(&rr) && (0..SIDE as i64).contains(&cc) {
                        m[(i, rr as usize * SIDE + cc as usize)] = -1.0;
                    }
                }
            }
        }
    }
    m
}

const ASH608_SEED: u64 = 3;

/// Stand-in for the SuiteSparse `HB/ash608` least-squares matrix when the file
/// is not available: a 608 x 188 binary matrix with two ones per row (1216
/// nonzeros) and column counts between 4 and 10, drawn from a fixed seed.
///
/// `A^T A` is then the signless Laplacian of a random multigraph whose extreme
/// eigenvalues land near those implied by the published step sizes
/// (`lambda_1` near 15, `lambda_d` near 1.5).
pub fn ash608_surrogate() -> DMatrix<f64> {
    const ROWS: usize = 608;
    const COLS: usize = 188;
    const MIN_DEG: usize = 4;
    const MAX_DEG: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(ASH608_SEED);
    let mut degrees: Vec<usize> = (0..COLS).map(|_| rng.random_range(MIN_DEG..=MAX_DEG)).collect();
    loop {
        let total: usize = degrees.iter().sum();
        if total == 2 * ROWS {
            break;
        }
        let j = rng.random_range(0..COLS);
        if total > 2 * ROWS && degrees[j] > MIN_DEG {
            degrees[j] -= 1;
        } else if total < 2 * ROWS && degrees[j] < MAX_DEG {
            degrees[j] += 1;
        }
    }
    let mut slots: Vec<usize> = degrees
        .iter()
        .enumerate()
        .flat_map(|(j, &k)| std::iter::repeat_n(j, k))
        .collect();
    debug_assert_eq!(slots.len(), 2 * ROWS);
    slots.shuffle(&mut rng);
    // Break up rows that would hit the same column twice.
    loop {
        let bad: Vec<usize> = (0..ROWS).filter(|&r| slots[2 * r] == slots[2 * r + 1]).collect();
        if bad.is_empty() {
            break;
        }
        for r in bad {
            let other = rng.random_range(0..slots.len());
            slots.swap(2 * r + 1, other);
        }
    }
    let mut m = DMatrix::zeros(ROWS, COLS);
    for r in 0..ROWS {
        m[(r, slots[2 * r])] = 1.0;
        m[(r, slots[2 * r + 1])] = 1.0;
    }
    m
}

/// A random dense problem with a prescribed spectrum of `A^T A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    /// `lambda_1 / lambda_d` of `A^T A`; `lambda_d` is 1.
    pub condition: f64,
    pub seed: u64,
}

/// `A = U diag(s) V^T` with Haar-like orthonormal `U`, `V` and singular values
/// log-spaced so that the eigenvalues of `A^T A` run from 1 to `condition`.
pub fn synthetic_matrix(spec: &SyntheticSpec) -> Result<DMatrix<f64>> {
    if spec.cols == 0 || spec.rows < spec.cols {
        return Err(Error::Config(format!(
            "synthetic problem needs rows >= cols >= 1, got {} x {}",
            spec.rows, spec.cols
        )));
    }
    if spec.condition.is_nan() || spec.condition < 1.0 || spec.condition.is_infinite() {
        return Err(Error::Config(format!(
            "condition number must be finite and >= 1, got {}",
            spec.condition
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = gauss(spec.rows, spec.cols).qr().q();
    let v = gauss(spec.cols, spec.cols).qr().q();
    let sv = DVector::from_fn(spec.cols, |i, _| {
        if spec.cols == 1 {
            1.0
        } else {
            spec.condition.powf(i as f64 / (2.0 * (spec.cols - 1) as f64))
        }
    });
    Ok(u * DMatrix::from_diagonal(&sv) * v.transpose())
}

/// Where a run's collective input matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Ash608,
    Gr3030,
    Synthetic(SyntheticSpec),
    File(PathBuf),
}

impl DatasetSource {
    /// Accepts `ash608`, `gr_30_30`, `synthetic:N,d,cond,seed` or a path to
    /// a `.mtx` file.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ash608" => Ok(Self::Ash608),
            "gr_30_30" => Ok(Self::Gr3030),
            _ if s.starts_with("synthetic:") => {
                let parts: Vec<&str> = s["synthetic:".len()..].split(',').collect();
                let bad = || Error::Config(format!("expected synthetic:N,d,cond,seed, got `{s}`"));
                if parts.len() != 4 {
                    return Err(bad());
                }
                Ok(Self::Synthetic(SyntheticSpec {
                    rows: parts[0].trim().parse().map_err(|_| bad())?,
                    cols: parts[1].trim().parse().map_err(|_| bad())?,
                    condition: parts[2].trim().parse().map_err(|_| bad())?,
                    seed: parts[3].trim().parse().map_err(|_| bad())?,
                }))
            }
            _ if s.ends_with(".mtx") => Ok(Self::File(PathBuf::from(s))),
            _ => Err(Error::UnknownDataset(s.to_string())),
        }
    }

    /// Short name used in tables and for picking default parameters.
    pub fn label(&self) -> String {
        match self {
            Self::Ash608 => "ash608".into(),
            Self::Gr3030 => "gr_30_30".into(),
            Self::Synthetic(s) => format!("synthetic_{}x{}_c{}_s{}", s.rows, s.cols, s.condition, s.seed),
            Self::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }

    /// Loads the matrix and sets `b = A x*` with `x*` all ones.
    ///
    /// Named datasets are read from `<data_dir>/<name>.mtx` when such a file
    /// exists (`data_dir` defaults to `$IPG_DATA_DIR`); otherwise `gr_30_30` is
    /// generated exactly and `ash608` falls back to [`ash608_surrogate`].
    pub fn load(&self, data_dir: Option<&Path>) -> Result<CollectiveData> {
        let dir = data_dir
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
        let from_dir = |name: &str| {
            dir.as_ref()
                .map(|d| d.join(format!("{name}.mtx")))
                .filter(|p| p.is_file())
        };
        let (name, a) = match self {
            Self::Ash608 => match from_dir("ash608") {
                Some(p) => ("ash608".to_string(), parse_matrix_market(p)?),
                None => ("ash608-surrogate".to_string(), ash608_surrogate()),
            },
            Self::Gr3030 => match from_dir("gr_30_30") {
                Some(p) => ("gr_30_30".to_string(), parse_matrix_market(p)?),
                None => ("gr_30_30".to_string(), gr_30_30()),
            },
            Self::Synthetic(spec) => (self.label(), synthetic_matrix(spec)?),
            Self::File(p) => {
                if !p.is_file() {
                    return Err(Error::UnknownDataset(p.display().to_string()));
                }
                (self.label(), parse_matrix_market(p)?)
            }
        };
        CollectiveData::with_unit_solution(name, a)
    }
}
