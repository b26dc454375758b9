//! Deformation-smoothness priors, their warmup schedule, and the
//! jitter-weighted stochastic dropout.

mod kabsch;
mod knn;

pub use kabsch::{apply_rotation, kabsch_rotation};
pub use knn::{build_neighbor_graph, NeighborGraph, DISTANCE_FLOOR};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::renderer::DropMask;

/// Which quantity the smoothness prior penalizes per neighbor pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegVariant {
    /// Squared displacement difference over squared canonical distance.
    Strain,
    /// Same, on the network embedding instead of the displacement.
    OnEmbed,
    /// Residual after the best per-neighborhood rigid rotation, normalized.
    Arap,
    /// Squared displacement difference without the distance denominator.
    NoNorm,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtDropConfig {
    pub enabled: bool,
    /// Final drop rate reached at the end of the ramp window.
    pub p_max: f64,
    /// Ramp window in paper iteration units.
    pub window: (usize, usize),
    /// Scale each Gaussian's drop probability by its deformation-trajectory
    /// variance relative to the population mean.
    pub jitter_weighting: bool,
}

impl Default for PtDropConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            p_max: 0.3,
            window: (5_000, 12_000),
            jitter_weighting: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub variant: RegVariant,
    /// Target loss weight reached after warmup.
    pub lambda: f64,
    /// Neighbors per Gaussian in the canonical graph.
    pub k: usize,
    /// Denominator regularizer, world units squared.
    pub epsilon: f64,
    /// Gaussians sampled per training step (capped at K).
    pub sample_size: usize,
    /// Half-cosine warmup window in paper iteration units.
    pub warmup_window: (usize, usize),
    /// Graph rebuild cadence in paper iteration units.
    pub rebuild_interval: usize,
    pub ptdrop: PtDropConfig,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            variant: RegVariant::Off,
            lambda: 0.0,
            k: 8,
            epsilon: 1e-8,
            sample_size: 256,
            warmup_window: (3_000, 10_000),
            rebuild_interval: 500,
            ptdrop: PtDropConfig::default(),
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("regularizer k must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if self.warmup_window.0 >= self.warmup_window.1 {
            return Err(Error::Config("warmup window must be ordered".into()));
        }
        if !(0.0..1.0).contains(&self.ptdrop.p_max) {
            return Err(Error::Config("ptdrop p_max must lie in [0, 1)".into()));
        }
        if self.ptdrop.window.0 >= self.ptdrop.window.1 {
            return Err(Error::Config("ptdrop window must be ordered".into()));
        }
        if self.rebuild_interval < 1 {
            return Err(Error::Config("rebuild interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Half-cosine ramp from 0 to 1 across `[a, b)`.
fn half_cosine_ramp(iteration: usize, window: (usize, usize)) -> f64 {
    let (a, b) = window;
    debug_assert!(a < b, "ramp window must be ordered");
    if iteration < a {
        0.0
    } else if iteration >= b {
        1.0
    } else {
        let frac = (iteration - a) as f64 / (b - a) as f64;
        (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0
    }
}

/// Effective loss weight at `iteration`: 0 before the window, a half-cosine
/// ramp inside it, `lambda` after.
pub fn warmup_weight(iteration: usize, window: (usize, usize), lambda: f64) -> f64 {
    lambda * half_cosine_ramp(iteration, window)
}

/// Loss value plus gradients with respect to the displacements (and, for the
/// embedding variant, the embeddings). Canonical positions are constants.
#[derive(Debug, Clone)]
pub struct SmoothnessResult {
    pub loss: f64,
    /// `K x dim`; empty when the variant is off.
    pub d_displacements: Vec<f64>,
    /// `K x embed`; empty unless the embedding variant ran.
    pub d_embeddings: Vec<f64>,
}

impl SmoothnessResult {
    fn zero() -> Self {
        Self {
            loss: 0.0,
            d_displacements: Vec::new(),
            d_embeddings: Vec::new(),
        }
    }
}

/// Minibatch neighborhood smoothness penalty.
///
/// `loss = lambda_eff / (|sample| * k) * sum_{i in sample} sum_{j in N_k(i)} q_ij`
/// with `q_ij` chosen by the variant. Gradients flow only to the
/// displacements (and embeddings); the canonical positions in the
/// denominators are treated as constants so the prior shapes the motion
/// rather than the cloud.
pub fn smoothness_loss(
    variant: RegVariant,
    cloud: &GaussianCloud,
    displacements: &[f64],
    embeddings: &[f64],
    graph: &NeighborGraph,
    sample: &[usize],
    lambda_eff: f64,
    epsilon: f64,
) -> Result<SmoothnessResult> {
    if variant == RegVariant::Off || lambda_eff == 0.0 {
        return Ok(SmoothnessResult::zero());
    }
    let count = cloud.len();
    let dim = cloud.dim;
    if displacements.len() != count * dim {
        return Err(Error::Contract("displacement array length mismatch".into()));
    }
    let embed = if variant == RegVariant::OnEmbed {
        if count == 0 || embeddings.len() % count != 0 || embeddings.is_empty() {
            return Err(Error::Contract("embedding array length mismatch".into()));
        }
        embeddings.len() / count
    } else {
        0
    };
    if graph.rows() != count {
        return Err(Error::Contract("graph row count does not match cloud".into()));
    }
    if sample.iter().any(|&i| i >= count) {
        return Err(Error::Contract("sample index out of range".into()));
    }
    let k = graph.k();
    if sample.is_empty() || k == 0 {
        return Ok(SmoothnessResult::zero());
    }

    let scale = lambda_eff / (sample.len() * k) as f64;
    let mut loss = 0.0;
    let mut d_u = vec![0.0; count * dim];
    let mut d_h = vec![0.0; count * embed];

    match variant {
        RegVariant::Strain | RegVariant::NoNorm => {
            for &i in sample {
                let (idx, dist) = graph.row(i);
                for (&jr, &d2) in idx.iter().zip(dist) {
                    let j = jr as usize;
                    let w = match variant {
                        RegVariant::Strain => 1.0 / (d2 + epsilon),
                        _ => 1.0,
                    };
                    let mut q = 0.0;
                    for c in 0..dim {
                        let diff = displacements[i * dim + c] - displacements[j * dim + c];
                        q += diff * diff * w;
                        let g = 2.0 * scale * w * diff;
                        d_u[i * dim + c] += g;
                        d_u[j * dim + c] -= g;
                    }
                    loss += q;
                }
            }
        }
        RegVariant::OnEmbed => {
            for &i in sample {
                let (idx, dist) = graph.row(i);
                for (&jr, &d2) in idx.iter().zip(dist) {
                    let j = jr as usize;
                    let w = 1.0 / (d2 + epsilon);
                    for c in 0..embed {
                        let diff = embeddings[i * embed + c] - embeddings[j * embed + c];
                        loss += diff * diff * w;
                        let g = 2.0 * scale * w * diff;
                        d_h[i * embed + c] += g;
                        d_h[j * embed + c] -= g;
                    }
                }
            }
        }
        RegVariant::Arap => {
            arap_terms(
                cloud,
                displacements,
                graph,
                sample,
                scale,
                epsilon,
                &mut loss,
                &mut d_u,
            )?;
        }
        RegVariant::Off => unreachable!(),
    }

    Ok(SmoothnessResult {
        loss: loss * scale,
        d_displacements: d_u,
        d_embeddings: d_h,
    })
}

/// ARAP residuals with the rotation fitted per neighborhood.
///
/// In 2D the gradient is exact: the rotation angle's dependence on the
/// deformed offsets is differentiated through `atan2`. In 3D the rotation is
/// held fixed (the fit is unweighted while the loss is distance-weighted, so
/// the envelope argument does not apply exactly).
#[allow(clippy::too_many_arguments)]
fn arap_terms(
    cloud: &GaussianCloud,
    displacements: &[f64],
    graph: &NeighborGraph,
    sample: &[usize],
    scale: f64,
    epsilon: f64,
    loss: &mut f64,
    d_u: &mut [f64],
) -> Result<()> {
    let dim = cloud.dim;
    let mut canonical = Vec::new();
    let mut deformed = Vec::new();
    let mut rotated = vec![0.0; dim];

    for &i in sample {
        let (idx, dist) = graph.row(i);
        canonical.clear();
        deformed.clear();
        let xi = cloud.position(i);
        for &jr in idx {
            let j = jr as usize;
            let xj = cloud.position(j);
            for c in 0..dim {
                let a = xj[c] - xi[c];
                let b = a + displacements[j * dim + c] - displacements[i * dim + c];
                canonical.push(a);
                deformed.push(b);
            }
        }
        let (rot, degenerate) = kabsch_rotation(&canonical, &deformed, dim)?;

        // residuals and direct gradients
        let mut dphi = 0.0; // dLoss_i/dphi (2D only)
        let (mut cross, mut dot) = (0.0, 0.0);
        if dim == 2 && !degenerate {
            for m in 0..idx.len() {
                let a = &canonical[m * 2..m * 2 + 2];
                let b = &deformed[m * 2..m * 2 + 2];
                cross += a[0] * b[1] - a[1] * b[0];
                dot += a[0] * b[0] + a[1] * b[1];
            }
        }

        for (m, (&jr, &d2)) in idx.iter().zip(dist).enumerate() {
            let j = jr as usize;
            let w = 1.0 / (d2 + epsilon);
            let a = &canonical[m * dim..(m + 1) * dim];
            let b = &deformed[m * dim..(m + 1) * dim];
            apply_rotation(&rot, a, &mut rotated);
            let mut q = 0.0;
            for c in 0..dim {
                let r = rotated[c] - b[c];
                q += r * r;
                // dq/db = -2 w r, and b depends on u_j (+) and u_i (-)
                let g = -2.0 * scale * w * r;
                d_u[j * dim + c] += g;
                d_u[i * dim + c] -= g;
            }
            *loss += q * w;
            if dim == 2 && !degenerate {
                // dq/dphi through R' = d/dphi [[c,-s],[s,c]]
                let r0 = rotated[0] - b[0];
                let r1 = rotated[1] - b[1];
                let rp0 = -rot[2] * a[0] - rot[0] * a[1]; // (-s*a0 - c*a1)
                let rp1 = rot[0] * a[0] - rot[2] * a[1]; //  (c*a0 - s*a1)
                dphi += 2.0 * w * (r0 * rp0 + r1 * rp1);
            }
        }

        if dim == 2 && !degenerate {
            let denom = cross * cross + dot * dot;
            if denom > 0.0 {
                let dphi_dc = dot / denom;
                let dphi_dd = -cross / denom;
                for (m, &jr) in idx.iter().enumerate() {
                    let j = jr as usize;
                    let a = &canonical[m * 2..m * 2 + 2];
                    // dc/db = (-a_y, a_x), dd/db = (a_x, a_y)
                    let gx = scale * dphi * (dphi_dc * -a[1] + dphi_dd * a[0]);
                    let gy = scale * dphi * (dphi_dc * a[0] + dphi_dd * a[1]);
                    d_u[j * 2] += gx;
                    d_u[j * 2 + 1] += gy;
                    d_u[i * 2] -= gx;
                    d_u[i * 2 + 1] -= gy;
                }
            }
        }
    }
    Ok(())
}

/// Running mean/variance of each Gaussian's displacement across the
/// timesteps seen so far (single-pass Welford recurrence per component).
#[derive(Debug, Clone)]
pub struct JitterEstimate {
    dim: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: Vec<u64>,
}

impl JitterEstimate {
    pub fn new(count: usize, dim: usize) -> Self {
        Self {
            dim,
            mean: vec![0.0; count * dim],
            m2: vec![0.0; count * dim],
            count: vec![0; count],
        }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    /// Fold in the displacements observed at one more timestep.
    pub fn update(&mut self, displacements: &[f64]) {
        assert_eq!(displacements.len(), self.mean.len(), "jitter length mismatch");
        for i in 0..self.count.len() {
            self.count[i] += 1;
            let n = self.count[i] as f64;
            for c in 0..self.dim {
                let idx = i * self.dim + c;
                let x = displacements[idx];
                let delta = x - self.mean[idx];
                self.mean[idx] += delta / n;
                self.m2[idx] += delta * (x - self.mean[idx]);
            }
        }
    }

    /// Total population variance of Gaussian `i`'s trajectory (summed over
    /// components); 0 by convention with fewer than two samples.
    pub fn variance(&self, i: usize) -> f64 {
        if self.count[i] < 2 {
            return 0.0;
        }
        let n = self.count[i] as f64;
        (0..self.dim).map(|c| self.m2[i * self.dim + c] / n).sum()
    }

    pub fn mean_variance(&self) -> f64 {
        if self.count.is_empty() {
            return 0.0;
        }
        (0..self.count.len()).map(|i| self.variance(i)).sum::<f64>() / self.count.len() as f64
    }

    /// Resize across densify/prune; children inherit the parent's estimate.
    pub fn remap(&self, origins: &[crate::adc::Origin]) -> Self {
        let mut out = Self::new(origins.len(), self.dim);
        for (new_idx, origin) in origins.iter().enumerate() {
            let old = match *origin {
                crate::adc::Origin::Kept(o) | crate::adc::Origin::Child(o) => o,
            };
            for c in 0..self.dim {
                out.mean[new_idx * self.dim + c] = self.mean[old * self.dim + c];
                out.m2[new_idx * self.dim + c] = self.m2[old * self.dim + c];
            }
            out.count[new_idx] = self.count[old];
        }
        out
    }
}

/// Per-Gaussian drop probabilities for the stochastic dropout at `iteration`.
pub fn drop_probabilities(
    iteration: usize,
    count: usize,
    jitter: &JitterEstimate,
    p_max: f64,
    window: (usize, usize),
    jitter_weighting: bool,
) -> Vec<f64> {
    let base = p_max * half_cosine_ramp(iteration, window);
    if base == 0.0 {
        return vec![0.0; count];
    }
    let mean_var = jitter.mean_variance();
    (0..count)
        .map(|i| {
            let w = if jitter_weighting && mean_var > 0.0 {
                jitter.variance(i) / mean_var
            } else {
                1.0
            };
            (base * w).clamp(0.0, 0.95)
        })
        .collect()
}

/// Draw an independent keep/drop decision per Gaussian; kept Gaussians carry
/// a `1 / (1 - p)` opacity compensation so expected coverage is unchanged.
pub fn ptdrop_mask<R: Rng + ?Sized>(
    iteration: usize,
    count: usize,
    jitter: &JitterEstimate,
    p_max: f64,
    window: (usize, usize),
    jitter_weighting: bool,
    rng: &mut R,
) -> DropMask {
    assert_eq!(jitter.len(), count, "jitter arrays must have length K");
    let probs = drop_probabilities(iteration, count, jitter, p_max, window, jitter_weighting);
    let mut keep = vec![true; count];
    let mut opacity_scale = vec![1.0; count];
    for i in 0..count {
        let p = probs[i];
        if p > 0.0 && rng.gen::<f64>() < p {
            keep[i] = false;
        } else if p > 0.0 {
            opacity_scale[i] = 1.0 / (1.0 - p);
        }
    }
    DropMask { keep, opacity_scale }
}

/// Uniform sample of `count` distinct indices out of `population`
/// (partial Fisher-Yates).
pub fn sample_indices<R: Rng + ?Sized>(rng: &mut R, population: usize, count: usize) -> Vec<usize> {
    let take = count.min(population);
    let mut pool: Vec<usize> = (0..population).collect();
    for i in 0..take {
        let j = rng.gen_range(i..population);
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}
