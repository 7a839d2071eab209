//! Detector lattices and the first-order probability-map container shared by
//! the diffraction and imaging modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::BlochState;

/// Whether a grid lives in angle space (rad) or in the image plane (m).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Angular,
    Spatial,
}

/// Uniform square lattice of `n × n` pixel centres on `[-half_width, half_width]²`,
/// optionally restricted to a disk of radius `cut_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub half_width: f64,
    pub n: usize,
    pub cut_radius: Option<f64>,
}

impl Grid {
    pub fn new(kind: GridKind, half_width: f64, n: usize, cut_radius: Option<f64>) -> Result<Self> {
        if !(half_width > 0.0) || n < 2 {
            return Err(Error::Domain("grid needs half_width > 0 and n >= 2".into()));
        }
        if let Some(r) = cut_radius {
            if !(r > 0.0) {
                return Err(Error::Domain("cut radius must be positive".into()));
            }
        }
        Ok(Self { kind, half_width, n, cut_radius })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing() * self.spacing()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Centre coordinate of column (or row) `i`.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Pixel centre of flat index `j` (row-major, x fastest).
    pub fn center(&self, j: usize) -> (f64, f64) {
        (self.coord(j % self.n), self.coord(j / self.n))
    }

    pub fn inside(&self, j: usize) -> bool {
        match self.cut_radius {
            None => true,
            Some(r) => {
                let (x, y) = self.center(j);
                x.hypot(y) <= r
            }
        }
    }

    /// Largest radius reached by any pixel centre.
    pub fn max_radius(&self) -> f64 {
        let c = self.coord(self.n - 1);
        let r = c * std::f64::consts::SQRT_2;
        match self.cut_radius {
            Some(cut) => r.min(cut),
            None => r,
        }
    }

    fn same_as(&self, other: &Grid) -> bool {
        self.kind == other.kind
            && self.n == other.n
            && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
            && self.cut_radius == other.cut_radius
    }
}

/// First-order probability density `P = p0 + cx·⟨σx⟩ + cy·⟨σy⟩` sampled at
/// pixel centres. The ⟨σz⟩ coefficient vanishes identically for azimuthally
/// symmetric beams and is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap {
    pub grid: Grid,
    pub p0: Vec<f64>,
    pub cx: Vec<f64>,
    pub cy: Vec<f64>,
    /// Pixels inside the validity region; entries outside are zero.
    pub inside: Vec<bool>,
}

/// Total density with negative entries clipped, plus the clipping record.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedDensity {
    pub values: Vec<f64>,
    pub clipped: usize,
    /// Largest magnitude removed by clipping.
    pub worst: f64,
}

impl ProbabilityMap {
    pub fn check_same_grid(&self, other: &ProbabilityMap) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }

    /// Signal part `P₁ = cx·sx + cy·sy`.
    pub fn signal(&self, s: &BlochState) -> Vec<f64> {
        self.cx.iter().zip(&self.cy).map(|(x, y)| x * s.s[0] + y * s.s[1]).collect()
    }

    /// Total density for Bloch vector `s`, negative values clipped to zero.
    pub fn density(&self, s: &BlochState) -> ClippedDensity {
        let mut clipped = 0;
        let mut worst: f64 = 0.0;
        let values = self
            .p0
            .iter()
            .zip(self.signal(s))
            .map(|(p0, p1)| {
                let v = p0 + p1;
                if v < 0.0 {
                    clipped += 1;
                    worst = worst.max(-v);
                    0.0
                } else {
                    v
                }
            })
            .collect();
        ClippedDensity { values, clipped, worst }
    }

    /// `P_dr − P_ref`; `p0` cancels exactly.
    pub fn differential(&self, s_drive: &BlochState, s_ref: &BlochState) -> Vec<f64> {
        let dx = s_drive.s[0] - s_ref.s[0];
        let dy = s_drive.s[1] - s_ref.s[1];
        self.cx.iter().zip(&self.cy).map(|(x, y)| x * dx + y * dy).collect()
    }
}

/// Differential map between two Bloch states on one map.
pub fn differential_map(map: &ProbabilityMap, s_drive: &BlochState, s_ref: &BlochState) -> Vec<f64> {
    map.differential(s_drive, s_ref)
}

/// Differential map where the driven and reference states were simulated on
/// separate maps; they must share a grid.
pub fn differential_between(
    driven: &ProbabilityMap,
    s_drive: &BlochState,
    reference: &ProbabilityMap,
    s_ref: &BlochState,
) -> Result<Vec<f64>> {
    driven.check_same_grid(reference)?;
    let a = driven.density(s_drive).values;
    let b = reference.density(s_ref).values;
    Ok(a.iter().zip(&b).map(|(a, b)| a - b).collect())
}
