//! Uniform linear array model: DOA grids, steering dictionaries, coherence
//! measurements and single-snapshot synthesis.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::CVector;

const COLUMN_NORM_TOL: f64 = 1e-12;

/// Hypothetical directions of arrival in degrees, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    angles_deg: Vec<f64>,
}

impl AngleGrid {
    /// Builds a grid from explicit angles.
    ///
    /// Angles must be strictly increasing and lie in `[-90, 90]`; the closed
    /// upper end admits the inclusive span grids.
    pub fn new(angles_deg: Vec<f64>) -> Result<Self> {
        if angles_deg.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 angles, got {}",
                angles_deg.len()
            )));
        }
        if let Some(bad) = angles_deg
            .iter()
            .find(|a| !a.is_finite() || **a < -90.0 || **a > 90.0)
        {
            return Err(Error::InvalidGrid(format!("angle {bad} outside [-90, 90]")));
        }
        if angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("angles must be strictly increasing".into()));
        }
        Ok(Self { angles_deg })
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }

    pub fn angle_deg(&self, index: usize) -> f64 {
        self.angles_deg[index]
    }

    /// Index of the grid angle nearest to `doa_deg` and the signed offset
    /// `doa_deg - grid[index]`. Returns `None` outside the grid extent.
    pub fn nearest(&self, doa_deg: f64) -> Option<(usize, f64)> {
        let first = self.angles_deg[0];
        let last = *self.angles_deg.last().unwrap();
        let slack = 1e-9;
        if !doa_deg.is_finite() || doa_deg < first - slack || doa_deg > last + slack {
            return None;
        }
        let pos = self.angles_deg.partition_point(|&a| a < doa_deg);
        let index = if pos == 0 {
            0
        } else if pos == self.angles_deg.len() {
            pos - 1
        } else {
            let below = doa_deg - self.angles_deg[pos - 1];
            let above = self.angles_deg[pos] - doa_deg;
            if above < below {
                pos
            } else {
                pos - 1
            }
        };
        Some((index, doa_deg - self.angles_deg[index]))
    }
}

/// `theta_m = (m-1) * 180 / M - 90` for `m = 1..=M`, covering `[-90, 90)`.
pub fn make_uniform_grid(count: usize) -> Result<AngleGrid> {
    if count < 2 {
        return Err(Error::InvalidGrid(format!("grid size {count} < 2")));
    }
    let step = 180.0 / count as f64;
    AngleGrid::new((0..count).map(|m| m as f64 * step - 90.0).collect())
}

/// Inclusive evenly spaced grid `lo, lo + step, ..., hi`.
pub fn make_span_grid(lo_deg: f64, hi_deg: f64, step_deg: f64) -> Result<AngleGrid> {
    if !(lo_deg < hi_deg) {
        return Err(Error::InvalidGrid(format!("lo {lo_deg} must be below hi {hi_deg}")));
    }
    if !(step_deg > 0.0) {
        return Err(Error::InvalidGrid(format!("step {step_deg} must be positive")));
    }
    let intervals = (hi_deg - lo_deg) / step_deg;
    let rounded = intervals.round();
    if (intervals - rounded).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "span {} is not an integral multiple of step {step_deg}",
            hi_deg - lo_deg
        )));
    }
    let n = rounded as usize;
    AngleGrid::new((0..=n).map(|k| lo_deg + k as f64 * step_deg).collect())
}

/// Complex `N x M` dictionary of unit-norm steering vectors, one column per
/// grid angle.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringDictionary {
    grid: AngleGrid,
    matrix: DMatrix<Complex64>,
}

impl SteeringDictionary {
    /// Wraps an arbitrary matrix whose columns already have unit norm.
    pub fn from_matrix(grid: AngleGrid, matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for a grid of {} angles",
                matrix.ncols(),
                grid.len()
            )));
        }
        if matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch("dictionary has no rows".into()));
        }
        for (m, col) in matrix.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > COLUMN_NORM_TOL {
                return Err(Error::DimensionMismatch(format!(
                    "column {m} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { grid, matrix })
    }

    pub fn sensors(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn grid(&self) -> &AngleGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn column(&self, m: usize) -> CVector {
        self.matrix.column(m).into_owned()
    }

    /// Columns listed in `indices`, in order.
    pub fn restrict(&self, indices: &[usize]) -> DMatrix<Complex64> {
        self.matrix.select_columns(indices)
    }
}

/// `A[n, m] = exp(j (n-1) pi sin(theta_m)) / sqrt(N)`.
pub fn build_ula_dictionary(grid: &AngleGrid, sensors: usize) -> Result<SteeringDictionary> {
    if sensors == 0 {
        return Err(Error::DimensionMismatch("array needs at least one sensor".into()));
    }
    let scale = 1.0 / (sensors as f64).sqrt();
    let spatial: Vec<f64> = grid
        .angles_deg()
        .iter()
        .map(|a| std::f64::consts::PI * a.to_radians().sin())
        .collect();
    let matrix = DMatrix::from_fn(sensors, grid.len(), |n, m| {
        Complex64::from_polar(scale, n as f64 * spatial[m])
    });
    SteeringDictionary::from_matrix(grid.clone(), matrix)
}

/// Basis coherence `a_i^H a_j`.
pub fn coherence(dict: &SteeringDictionary, i: usize, j: usize) -> Result<Complex64> {
    let len = dict.atoms();
    for index in [i, j] {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
    }
    Ok(dict.matrix.column(i).dotc(&dict.matrix.column(j)))
}

/// Largest entry magnitude of `A^H A - I`.
pub fn mutual_coherence(dict: &SteeringDictionary) -> f64 {
    let gram = dict.matrix.adjoint() * &dict.matrix;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let v = if i == j {
                gram[(i, j)] - Complex64::new(1.0, 0.0)
            } else {
                gram[(i, j)]
            };
            worst = worst.max(v.norm());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerUnit {
    Linear,
    Db,
}

/// Point sources: DOA in degrees, linear power, phase in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScene {
    doas_deg: Vec<f64>,
    powers: Vec<f64>,
    phases_rad: Vec<f64>,
}

impl SourceScene {
    pub fn new(
        doas_deg: Vec<f64>,
        powers: Vec<f64>,
        unit: PowerUnit,
        phases_rad: Vec<f64>,
    ) -> Result<Self> {
        if doas_deg.len() != powers.len() || doas_deg.len() != phases_rad.len() {
            return Err(Error::InvalidScene(format!(
                "{} DOAs, {} powers, {} phases",
                doas_deg.len(),
                powers.len(),
                phases_rad.len()
            )));
        }
        let powers: Vec<f64> = match unit {
            PowerUnit::Linear => powers,
            PowerUnit::Db => powers.iter().map(|db| 10f64.powf(db / 10.0)).collect(),
        };
        if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidScene(format!("power {p} must be positive")));
        }
        if doas_deg.iter().chain(&phases_rad).any(|v| !v.is_finite()) {
            return Err(Error::InvalidScene("non-finite DOA or phase".into()));
        }
        Ok(Self {
            doas_deg,
            powers,
            phases_rad,
        })
    }

    /// Scene with all phases zero.
    pub fn in_phase(doas_deg: Vec<f64>, powers: Vec<f64>, unit: PowerUnit) -> Result<Self> {
        let phases = vec![0.0; doas_deg.len()];
        Self::new(doas_deg, powers, unit, phases)
    }

    pub fn empty() -> Self {
        Self {
            doas_deg: Vec::new(),
            powers: Vec::new(),
            phases_rad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.doas_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doas_deg.is_empty()
    }

    pub fn doas_deg(&self) -> &[f64] {
        &self.doas_deg
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn phases_rad(&self) -> &[f64] {
        &self.phases_rad
    }

    /// Complex amplitude `sqrt(power) * exp(j phase)` of source `k`.
    pub fn amplitude(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.powers[k].sqrt(), self.phases_rad[k])
    }
}

/// A scene snapped onto the dictionary grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SnappedScene {
    /// Grid bin of each source, in scene order.
    pub bins: Vec<usize>,
    /// `doa - grid[bin]` in degrees.
    pub offsets_deg: Vec<f64>,
    /// Sparse source vector on the grid; co-located sources add.
    pub x: CVector,
}

pub fn snap_scene(dict: &SteeringDictionary, scene: &SourceScene) -> Result<SnappedScene> {
    let mut x = CVector::zeros(dict.atoms());
    let mut bins = Vec::with_capacity(scene.len());
    let mut offsets_deg = Vec::with_capacity(scene.len());
    for (k, &doa) in scene.doas_deg.iter().enumerate() {
        let (bin, offset) = dict.grid().nearest(doa).ok_or_else(|| {
            Error::InvalidScene(format!("DOA {doa} deg lies outside the angle grid"))
        })?;
        x[bin] += scene.amplitude(k);
        bins.push(bin);
        offsets_deg.push(offset);
    }
    Ok(SnappedScene {
        bins,
        offsets_deg,
        x,
    })
}

/// One noisy array snapshot `y = A x + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub y: CVector,
    pub sigma2: f64,
    pub seed: u64,
    pub truth: SnappedScene,
}

/// Draws `y = A x + n`.
///
/// Noise is i.i.d. circularly-symmetric complex normal with per-element
/// variance `sigma2`: a ChaCha20 stream seeded with `seed` feeds
/// `rand_distr::StandardNormal` (ziggurat), and each element is
/// `sqrt(sigma2 / 2) * (g_re + j g_im)` with the real draw first.
pub fn synthesize(
    dict: &SteeringDictionary,
    scene: &SourceScene,
    sigma2: f64,
    seed: u64,
) -> Result<Snapshot> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidScene(format!("noise variance {sigma2} must be >= 0")));
    }
    let truth = snap_scene(dict, scene)?;
    let mut y = dict.matrix() * &truth.x;
    if sigma2 > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let scale = (sigma2 / 2.0).sqrt();
        for v in y.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(scale * re, scale * im);
        }
    }
    Ok(Snapshot {
        y,
        sigma2,
        seed,
        truth,
    })
}

/// Noise variance giving `10 log10(||A x||^2 / (N sigma2)) = snr_db` for the
/// snapped scene.
pub fn sigma_for_snr(dict: &SteeringDictionary, scene: &SourceScene, snr_db: f64) -> Result<f64> {
    if scene.is_empty() {
        return Err(Error::UndefinedSnr);
    }
    let truth = snap_scene(dict, scene)?;
    let signal = (dict.matrix() * &truth.x).norm_squared();
    if signal == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    Ok(signal / (dict.sensors() as f64 * 10f64.powf(snr_db / 10.0)))
}
