use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension affine map between latent `[-1, 1]` values and physical
/// units: `phys = latent * scale + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl NormStats {
    pub fn new(offset: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if offset.len() != scale.len() {
            return Err(Error::ShapeMismatch {
                expected: (1, offset.len()),
                found: (1, scale.len()),
            });
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normalization offset"));
        }
        if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidConfig(
                "normalization scale must be positive and finite".into(),
            ));
        }
        Ok(Self { offset, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Min-max statistics over `rows`; a half-range below `min_half_range`
    /// is widened to it so constant dimensions stay invertible.
    pub fn from_rows(rows: &[Vec<f64>], min_half_range: f64) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: (1, dim),
                    found: (1, r.len()),
                });
            }
            for (i, v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("dataset"));
                }
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        let offset = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (0.5 * (h - l)).max(min_half_range))
            .collect();
        Self::new(offset, scale)
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Φ for a single component.
    pub fn denormalize_value(&self, dim: usize, latent: f64) -> f64 {
        latent * self.scale[dim] + self.offset[dim]
    }

    /// Φ⁻ for a single component.
    pub fn normalize_value(&self, dim: usize, phys: f64) -> f64 {
        (phys - self.offset[dim]) / self.scale[dim]
    }

    pub fn normalize(&self, phys: &[f64]) -> Vec<f64> {
        phys.iter()
            .enumerate()
            .map(|(i, v)| self.normalize_value(i, *v))
            .collect()
    }

    pub fn denormalize(&self, latent: &[f64]) -> Vec<f64> {
        latent
            .iter()
            .enumerate()
            .map(|(i, v)| self.denormalize_value(i, *v))
            .collect()
    }

    /// Row-wise Φ over a chunk.
    pub fn denormalize_rows(&self, latent: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_cols(latent.ncols())?;
        let mut out = latent.clone();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.denormalize_value(i, *v);
            }
        }
        Ok(out)
    }

    /// Row-wise Φ⁻ over a chunk.
    pub fn normalize_rows(&self, phys: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_cols(phys.ncols())?;
        let mut out = phys.clone();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.normalize_value(i, *v);
            }
        }
        Ok(out)
    }

    fn check_cols(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: (1, self.dim()),
                found: (1, n),
            });
        }
        Ok(())
    }
}

/// Meaning of one action column.
///
/// Translation and rotation axes are per-step displacements; `Gripper` is an
/// absolute width command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionAxis {
    X,
    Y,
    Z,
    Rx,
    Ry,
    Rz,
    Gripper,
}

impl ActionAxis {
    /// Index into the 6-D correction vector, `None` for the gripper.
    pub fn cartesian_index(self) -> Option<usize> {
        match self {
            ActionAxis::X => Some(0),
            ActionAxis::Y => Some(1),
            ActionAxis::Z => Some(2),
            ActionAxis::Rx => Some(3),
            ActionAxis::Ry => Some(4),
            ActionAxis::Rz => Some(5),
            ActionAxis::Gripper => None,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, ActionAxis::Rx | ActionAxis::Ry | ActionAxis::Rz)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionAxis::X => "x",
            ActionAxis::Y => "y",
            ActionAxis::Z => "z",
            ActionAxis::Rx => "rx",
            ActionAxis::Ry => "ry",
            ActionAxis::Rz => "rz",
            ActionAxis::Gripper => "gripper",
        }
    }
}

/// Ordered list of action columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ActionAxis>", into = "Vec<ActionAxis>")]
pub struct ActionLayout {
    axes: Vec<ActionAxis>,
}

impl ActionLayout {
    pub fn new(axes: Vec<ActionAxis>) -> Result<Self> {
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate action axis {}",
                    a.name()
                )));
            }
        }
        for req in [ActionAxis::X, ActionAxis::Y, ActionAxis::Z, ActionAxis::Rx] {
            if !axes.contains(&req) {
                return Err(Error::InvalidConfig(format!(
                    "action layout lacks axis {}",
                    req.name()
                )));
            }
        }
        Ok(Self { axes })
    }

    /// `[dx, dy, dz, dθx]`
    pub fn translation_tilt() -> Self {
        Self {
            axes: vec![ActionAxis::X, ActionAxis::Y, ActionAxis::Z, ActionAxis::Rx],
        }
    }

    /// `[dx, dy, dz, dθx, g]`
    pub fn with_gripper() -> Self {
        Self {
            axes: vec![
                ActionAxis::X,
                ActionAxis::Y,
                ActionAxis::Z,
                ActionAxis::Rx,
                ActionAxis::Gripper,
            ],
        }
    }

    pub fn axes(&self) -> &[ActionAxis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn index_of(&self, axis: ActionAxis) -> Option<usize> {
        self.axes.iter().position(|a| *a == axis)
    }
}

impl TryFrom<Vec<ActionAxis>> for ActionLayout {
    type Error = Error;
    fn try_from(v: Vec<ActionAxis>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActionLayout> for Vec<ActionAxis> {
    fn from(l: ActionLayout) -> Self {
        l.axes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_to_unit_interval() {
        let rows = vec![vec![0.0, 5.0], vec![2.0, 5.0]];
        let s = NormStats::from_rows(&rows, 1e-3).unwrap();
        assert_eq!(s.normalize(&[0.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.normalize(&[2.0, 5.0]), vec![1.0, 0.0]);
        assert_eq!(s.scale()[1], 1e-3);
    }

    #[test]
    fn round_trip() {
        let s = NormStats::new(vec![0.3, -2.0], vec![0.07, 3.0]).unwrap();
        let a = [0.123, -4.5];
        let back = s.normalize(&s.denormalize(&a));
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(NormStats::new(vec![0.0], vec![0.0]).is_err());
        assert!(NormStats::from_rows(&[], 1e-3).is_err());
    }

    #[test]
    fn layout_checks() {
        assert!(ActionLayout::new(vec![ActionAxis::X, ActionAxis::Y]).is_err());
        assert!(ActionLayout::new(vec![
            ActionAxis::X,
            ActionAxis::Y,
            ActionAxis::Z,
            ActionAxis::Rx,
            ActionAxis::Rx
        ])
        .is_err());
        let l = ActionLayout::with_gripper();
        assert_eq!(l.index_of(ActionAxis::Gripper), Some(4));
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, r#"["x","y","z","rx","gripper"]"#);
        assert_eq!(serde_json::from_str::<ActionLayout>(&json).unwrap(), l);
    }
}
