//! Canonical Gaussian cloud, deformation field, and checkpoint persistence.

pub(crate) mod checkpoint;
mod field;

pub use checkpoint::{fnv1a64, Checkpoint, RngState, CONTAINER_VERSION};
pub use field::{DeformationField, FieldDescriptor, FieldEval, FieldGrads, FieldTape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`logistic`]. Input must lie strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Set of isotropic Gaussians with grayscale color, stored as parallel arrays.
///
/// Positions are flat, `dim` coordinates per Gaussian. Opacity is stored as a
/// logit so the optimizer works on an unbounded parameter; `opacity(i)` maps
/// it through the logistic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<f64>,
    /// Stable per-Gaussian scalar used to break compositing ties along the
    /// view axis when two projected depths coincide.
    pub depth_keys: Vec<f64>,
}

impl GaussianCloud {
    pub fn new(
        dim: usize,
        positions: Vec<f64>,
        log_scales: Vec<f64>,
        opacity_logits: Vec<f64>,
        colors: Vec<f64>,
        depth_keys: Vec<f64>,
    ) -> Result<Self> {
        let cloud = Self {
            dim,
            positions,
            log_scales,
            opacity_logits,
            colors,
            depth_keys,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.log_scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scales.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.log_scales[i].exp()
    }

    pub fn opacity(&self, i: usize) -> f64 {
        logistic(self.opacity_logits[i])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.len();
        if k == 0 {
            return Err(Error::Contract("cloud must contain at least one Gaussian".into()));
        }
        if self.dim == 0 {
            return Err(Error::Contract("cloud dimension must be positive".into()));
        }
        if self.positions.len() != k * self.dim
            || self.opacity_logits.len() != k
            || self.colors.len() != k
            || self.depth_keys.len() != k
        {
            return Err(Error::Contract(format!(
                "cloud arrays disagree on length (K = {k})"
            )));
        }
        for (name, arr) in [
            ("positions", &self.positions),
            ("log_scales", &self.log_scales),
            ("opacity_logits", &self.opacity_logits),
            ("colors", &self.colors),
            ("depth_keys", &self.depth_keys),
        ] {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptModel(format!("non-finite value in {name}")));
            }
        }
        if self.colors.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Contract("colors must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cloud(k: usize) -> GaussianCloud {
        GaussianCloud::new(
            2,
            vec![0.0; 2 * k],
            vec![-2.0; k],
            vec![0.0; k],
            vec![0.5; k],
            (0..k).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn logistic_and_logit_are_inverse() {
        for p in [1e-6, 0.25, 0.5, 0.75, 1.0 - 1e-6] {
            assert!((logistic(logit(p)) - p).abs() < 1e-12);
        }
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(800.0) <= 1.0);
    }

    #[test]
    fn cloud_validates_lengths() {
        let mut c = unit_cloud(3);
        assert_eq!(c.len(), 3);
        c.colors.pop();
        assert!(matches!(c.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn cloud_rejects_out_of_range_color() {
        let mut c = unit_cloud(2);
        c.colors[1] = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cloud_rejects_non_finite() {
        let mut c = unit_cloud(2);
        c.positions[0] = f64::NAN;
        assert!(matches!(c.validate(), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn opacity_maps_through_logistic() {
        let c = unit_cloud(1);
        assert!((c.opacity(0) - 0.5).abs() < 1e-15);
        assert!(c.opacity(0) > 0.0 && c.opacity(0) < 1.0);
    }
}
