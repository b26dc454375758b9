//! Adaptive density control: periodic split/clone/prune driven by
//! accumulated image-space positional gradients, with an optional
//! loss-rate-aware threshold and a soft cloud-size cap.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcConfig {
    /// Densification cadence, paper iteration units (scaled by the harness).
    pub interval: usize,
    /// Active window, paper iteration units.
    pub window: (usize, usize),
    /// Base gradient threshold. `None` asks the harness to calibrate it from
    /// a warmup quantile of observed gradients.
    pub base_threshold: Option<f64>,
    /// Multiplier on the resolved base threshold (the 2x / 0.5x ablations).
    pub threshold_scale: f64,
    /// Quantile of warmup gradient magnitudes used when calibrating.
    pub calibration_quantile: f64,
    /// Scale above which a qualifying Gaussian splits instead of cloning,
    /// world units.
    pub size_threshold: f64,
    /// Gaussians below this opacity are pruned.
    pub prune_opacity: f64,
    /// Children of a split shrink by this factor.
    pub split_scale_divisor: f64,
    /// Clone displacement as a multiple of the parent's scale.
    pub clone_offset: f64,
    pub enable_split: bool,
    pub enable_clone: bool,
    pub enable_prune: bool,
    /// Master switch; false disables every sub-operation.
    pub enable_all: bool,
    /// Loss-rate-aware threshold weight; 0 keeps the threshold constant.
    pub gad_lambda: f64,
    /// EMA factor for the per-iteration loss improvement.
    pub ema_rho: f64,
    /// Lower clamp for the improvement EMA.
    pub improvement_floor: f64,
    /// Soft cap on cloud size; 0 (or zero sharpness) disables.
    pub growthcap_k_max: usize,
    pub growthcap_sharpness: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            window: (500, 15_000),
            base_threshold: None,
            threshold_scale: 1.0,
            calibration_quantile: 0.7,
            size_threshold: 0.03,
            prune_opacity: 0.02,
            split_scale_divisor: 1.6,
            clone_offset: 0.5,
            enable_split: true,
            enable_clone: true,
            enable_prune: true,
            enable_all: true,
            gad_lambda: 0.0,
            ema_rho: 0.99,
            improvement_floor: 1e-8,
            growthcap_k_max: 0,
            growthcap_sharpness: 0.0,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval < 1 {
            return Err(Error::Config("densify interval must be >= 1".into()));
        }
        if self.window.0 >= self.window.1 {
            return Err(Error::Config("densify window must be ordered".into()));
        }
        if let Some(tau) = self.base_threshold {
            if !(tau > 0.0) {
                return Err(Error::Config("base threshold must be positive".into()));
            }
        }
        if !(self.threshold_scale > 0.0) {
            return Err(Error::Config("threshold scale must be positive".into()));
        }
        if !(self.split_scale_divisor > 1.0) {
            return Err(Error::Config("split scale divisor must exceed 1".into()));
        }
        if !(0.0..1.0).contains(&self.ema_rho) || self.ema_rho <= 0.0 {
            return Err(Error::Config("ema rho must lie in (0, 1)".into()));
        }
        if self.gad_lambda < 0.0 {
            return Err(Error::Config("gad lambda must be >= 0".into()));
        }
        if !(self.improvement_floor > 0.0) {
            return Err(Error::Config("improvement floor must be positive".into()));
        }
        Ok(())
    }
}

/// The nine ablation presets from the densification study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationPreset {
    Baseline,
    /// Disable all density control.
    A1,
    /// No split.
    A2,
    /// No clone.
    A3,
    /// No prune.
    A4,
    /// Half densification frequency.
    A5,
    /// Window end halved (early stop).
    A6,
    /// Threshold doubled.
    A7,
    /// Threshold halved.
    A8,
}

impl AblationPreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Some(Self::Baseline),
            "a1" => Some(Self::A1),
            "a2" => Some(Self::A2),
            "a3" => Some(Self::A3),
            "a4" => Some(Self::A4),
            "a5" => Some(Self::A5),
            "a6" => Some(Self::A6),
            "a7" => Some(Self::A7),
            "a8" => Some(Self::A8),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::A1 => "a1",
            Self::A2 => "a2",
            Self::A3 => "a3",
            Self::A4 => "a4",
            Self::A5 => "a5",
            Self::A6 => "a6",
            Self::A7 => "a7",
            Self::A8 => "a8",
        }
    }

    pub fn all() -> [Self; 9] {
        [
            Self::Baseline,
            Self::A1,
            Self::A2,
            Self::A3,
            Self::A4,
            Self::A5,
            Self::A6,
            Self::A7,
            Self::A8,
        ]
    }

    /// Apply this preset's overrides to a config.
    pub fn apply(&self, cfg: &mut AdcConfig) {
        match self {
            Self::Baseline => {}
            Self::A1 => cfg.enable_all = false,
            Self::A2 => cfg.enable_split = false,
            Self::A3 => cfg.enable_clone = false,
            Self::A4 => cfg.enable_prune = false,
            Self::A5 => cfg.interval *= 2,
            Self::A6 => cfg.window.1 /= 2,
            Self::A7 => cfg.threshold_scale = 2.0,
            Self::A8 => cfg.threshold_scale = 0.5,
        }
    }
}

/// Where each Gaussian of a resized cloud came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Same Gaussian, previously at this index.
    Kept(usize),
    /// New Gaussian (split child or clone) derived from this parent index.
    Child(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdcOp {
    Split,
    Clone,
    Prune,
    /// Prune would have emptied the cloud; the best survivor was kept.
    WarnKeepLast,
}

impl AdcOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Split => "split",
            Self::Clone => "clone",
            Self::Prune => "prune",
            Self::WarnKeepLast => "warn_keep_last",
        }
    }
}

/// One audit entry. Ids are stable across resizes (unlike indices).
#[derive(Debug, Clone, PartialEq)]
pub struct AdcEvent {
    pub iteration: usize,
    pub op: AdcOp,
    pub parent: u64,
    pub children: Vec<u64>,
    pub gbar: f64,
    pub tau: f64,
}

/// Mutable densification state: the loss-improvement EMA, per-Gaussian
/// gradient accumulators, stable ids, and the append-only audit log.
#[derive(Debug, Clone)]
pub struct AdcState {
    pub ema_improvement: f64,
    pub prev_loss: Option<f64>,
    gbar_sum: Vec<f64>,
    gbar_count: Vec<u32>,
    grad_dir: Vec<f64>,
    dim: usize,
    ids: Vec<u64>,
    next_id: u64,
    pub audit: Vec<AdcEvent>,
}

impl AdcState {
    pub fn new(count: usize, dim: usize, improvement_floor: f64) -> Self {
        Self {
            ema_improvement: improvement_floor,
            prev_loss: None,
            gbar_sum: vec![0.0; count],
            gbar_count: vec![0; count],
            grad_dir: vec![0.0; count * dim],
            dim,
            ids: (0..count as u64).collect(),
            next_id: count as u64,
            audit: Vec::new(),
        }
    }

    pub fn id_of(&self, index: usize) -> u64 {
        self.ids[index]
    }

    /// Fold one view's render gradients into the accumulators: the
    /// image-space gradient magnitude per Gaussian, whether it was observed,
    /// and the world-space splat position gradient (used as the clone
    /// direction).
    pub fn accumulate(&mut self, view_gradient: &[f64], observed: &[bool], position_grads: &[f64]) {
        assert_eq!(view_gradient.len(), self.gbar_sum.len());
        for i in 0..self.gbar_sum.len() {
            if observed[i] {
                self.gbar_sum[i] += view_gradient[i];
                self.gbar_count[i] += 1;
                for c in 0..self.dim {
                    self.grad_dir[i * self.dim + c] += position_grads[i * self.dim + c];
                }
            }
        }
    }

    /// Mean image-space gradient magnitude since the last reset.
    pub fn mean_gbar(&self, i: usize) -> f64 {
        if self.gbar_count[i] == 0 {
            0.0
        } else {
            self.gbar_sum[i] / self.gbar_count[i] as f64
        }
    }

    pub fn reset_accumulators(&mut self, count: usize) {
        self.gbar_sum = vec![0.0; count];
        self.gbar_count = vec![0; count];
        self.grad_dir = vec![0.0; count * self.dim];
    }

    /// EMA of the per-iteration loss improvement, clamped from below.
    pub fn update_ema(&mut self, loss: f64, rho: f64, floor: f64) {
        let improvement = match self.prev_loss {
            Some(prev) => (prev - loss).max(0.0),
            None => 0.0,
        };
        self.ema_improvement = rho * self.ema_improvement + (1.0 - rho) * improvement;
        self.ema_improvement = self.ema_improvement.max(floor);
        self.prev_loss = Some(loss);
    }
}

/// Loss-rate-aware densification threshold:
/// `tau = tau0 * (1 + lambda * K / (N * ema))`. Never below `tau0`.
pub fn gad_threshold(tau0: f64, lambda: f64, count: usize, train_pixels: usize, ema: f64) -> f64 {
    tau0 * (1.0 + lambda * count as f64 / (train_pixels as f64 * ema))
}

/// Fraction of qualifying candidates that densification serves as the cloud
/// approaches the cap: `1 / (1 + exp(sharpness * (K - K_max) / K_max))`.
pub fn growthcap_factor(count: usize, k_max: usize, sharpness: f64) -> f64 {
    debug_assert!(k_max > 0);
    let z = sharpness * (count as f64 - k_max as f64) / k_max as f64;
    1.0 / (1.0 + z.exp())
}

/// Summary of one densify/prune pass.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    /// Provenance of every Gaussian of the resized cloud; `None` when the
    /// pass changed nothing structurally.
    pub origins: Option<Vec<Origin>>,
    pub tau: f64,
    pub splits: usize,
    pub clones: usize,
    pub prunes: usize,
    pub kept_last: bool,
}

/// One densification pass: qualify by mean gradient against the (possibly
/// adaptive) threshold, split large / clone small qualifiers, then prune
/// low-opacity Gaussians. The caller is responsible for invoking this only on
/// schedule within the configured window.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    state: &mut AdcState,
    cfg: &AdcConfig,
    tau0: f64,
    train_pixels: usize,
    iteration: usize,
    rng: &mut R,
) -> DensifyOutcome {
    let k0 = cloud.len();
    let dim = cloud.dim;
    let tau = if cfg.gad_lambda > 0.0 {
        gad_threshold(tau0, cfg.gad_lambda, k0, train_pixels, state.ema_improvement)
    } else {
        tau0
    };

    if !cfg.enable_all {
        state.reset_accumulators(k0);
        return DensifyOutcome {
            origins: None,
            tau,
            splits: 0,
            clones: 0,
            prunes: 0,
            kept_last: false,
        };
    }

    // Qualified candidates ranked by mean gradient (ties by index) so the
    // growth cap serves the strongest signals first.
    let mut candidates: Vec<(f64, usize)> = (0..k0)
        .filter_map(|i| {
            let g = state.mean_gbar(i);
            (g > tau).then_some((g, i))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    if cfg.growthcap_sharpness > 0.0 && cfg.growthcap_k_max > 0 {
        let frac = growthcap_factor(k0, cfg.growthcap_k_max, cfg.growthcap_sharpness);
        let take = (frac * candidates.len() as f64).round() as usize;
        candidates.truncate(take);
    }

    let mut split_flag = vec![false; k0];
    let mut clone_flag = vec![false; k0];
    for &(_, i) in &candidates {
        if cloud.scale(i) > cfg.size_threshold {
            if cfg.enable_split {
                split_flag[i] = true;
            }
        } else if cfg.enable_clone {
            clone_flag[i] = true;
        }
    }

    let mut positions = Vec::with_capacity(cloud.positions.len());
    let mut log_scales = Vec::with_capacity(k0);
    let mut opacity_logits = Vec::with_capacity(k0);
    let mut colors = Vec::with_capacity(k0);
    let mut depth_keys = Vec::with_capacity(k0);
    let mut ids = Vec::with_capacity(k0);
    let mut origins = Vec::with_capacity(k0);

    for i in 0..k0 {
        if split_flag[i] {
            continue;
        }
        positions.extend_from_slice(cloud.position(i));
        log_scales.push(cloud.log_scales[i]);
        opacity_logits.push(cloud.opacity_logits[i]);
        colors.push(cloud.colors[i]);
        depth_keys.push(cloud.depth_keys[i]);
        ids.push(state.ids[i]);
        origins.push(Origin::Kept(i));
    }

    let mut splits = 0usize;
    let mut clones = 0usize;
    let mut events = Vec::new();
    for i in 0..k0 {
        if split_flag[i] {
            let sigma = cloud.scale(i);
            let mut children = Vec::with_capacity(2);
            for _ in 0..2 {
                for c in 0..dim {
                    let n: f64 = rng.sample(StandardNormal);
                    positions.push(cloud.position(i)[c] + sigma * n);
                }
                log_scales.push(cloud.log_scales[i] - cfg.split_scale_divisor.ln());
                opacity_logits.push(cloud.opacity_logits[i]);
                colors.push(cloud.colors[i]);
                depth_keys.push(cloud.depth_keys[i]);
                let id = state.next_id;
                state.next_id += 1;
                ids.push(id);
                children.push(id);
                origins.push(Origin::Child(i));
            }
            splits += 1;
            events.push(AdcEvent {
                iteration,
                op: AdcOp::Split,
                parent: state.ids[i],
                children,
                gbar: state.mean_gbar(i),
                tau,
            });
        } else if clone_flag[i] {
            let sigma = cloud.scale(i);
            let dir = {
                let g = &state.grad_dir[i * dim..(i + 1) * dim];
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    g.iter().map(|v| v / norm).collect::<Vec<f64>>()
                } else {
                    let mut d = vec![0.0; dim];
                    d[0] = 1.0;
                    d
                }
            };
            for c in 0..dim {
                positions.push(cloud.position(i)[c] + cfg.clone_offset * sigma * dir[c]);
            }
            log_scales.push(cloud.log_scales[i]);
            opacity_logits.push(cloud.opacity_logits[i]);
            colors.push(cloud.colors[i]);
            depth_keys.push(cloud.depth_keys[i]);
            let id = state.next_id;
            state.next_id += 1;
            ids.push(id);
            origins.push(Origin::Child(i));
            clones += 1;
            events.push(AdcEvent {
                iteration,
                op: AdcOp::Clone,
                parent: state.ids[i],
                children: vec![id],
                gbar: state.mean_gbar(i),
                tau,
            });
        }
    }

    // Prune low-opacity Gaussians, never emptying the cloud.
    let mut prunes = 0usize;
    let mut kept_last = false;
    if cfg.enable_prune {
        let n = log_scales.len();
        let mut keep: Vec<bool> = opacity_logits
            .iter()
            .map(|&l| crate::model::logistic(l) >= cfg.prune_opacity)
            .collect();
        if keep.iter().all(|k| !k) {
            let best = (0..n)
                .max_by(|&a, &b| {
                    opacity_logits[a]
                        .partial_cmp(&opacity_logits[b])
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap();
            keep[best] = true;
            kept_last = true;
            events.push(AdcEvent {
                iteration,
                op: AdcOp::WarnKeepLast,
                parent: ids[best],
                children: Vec::new(),
                gbar: 0.0,
                tau,
            });
        }
        let mut m = 0usize;
        for idx in 0..n {
            if keep[idx] {
                if m != idx {
                    for c in 0..dim {
                        positions[m * dim + c] = positions[idx * dim + c];
                    }
                    log_scales[m] = log_scales[idx];
                    opacity_logits[m] = opacity_logits[idx];
                    colors[m] = colors[idx];
                    depth_keys[m] = depth_keys[idx];
                    ids[m] = ids[idx];
                    origins[m] = origins[idx];
                }
                m += 1;
            } else {
                prunes += 1;
                let gbar = match origins[idx] {
                    Origin::Kept(old) => state.mean_gbar(old),
                    Origin::Child(_) => 0.0,
                };
                events.push(AdcEvent {
                    iteration,
                    op: AdcOp::Prune,
                    parent: ids[idx],
                    children: Vec::new(),
                    gbar,
                    tau,
                });
            }
        }
        positions.truncate(m * dim);
        log_scales.truncate(m);
        opacity_logits.truncate(m);
        colors.truncate(m);
        depth_keys.truncate(m);
        ids.truncate(m);
        origins.truncate(m);
    }

    let changed = splits + clones + prunes > 0;
    let new_k = log_scales.len();
    cloud.positions = positions;
    cloud.log_scales = log_scales;
    cloud.opacity_logits = opacity_logits;
    cloud.colors = colors;
    cloud.depth_keys = depth_keys;
    state.ids = ids;
    state.audit.extend(events);
    state.reset_accumulators(new_k);

    DensifyOutcome {
        origins: changed.then_some(origins),
        tau,
        splits,
        clones,
        prunes,
        kept_last,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{logit, GaussianCloud};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rows: &[(f64, f64, f64, f64)]) -> GaussianCloud {
        // (x, y, sigma, opacity)
        GaussianCloud::new(
            2,
            rows.iter().flat_map(|r| [r.0, r.1]).collect(),
            rows.iter().map(|r| r.2.ln()).collect(),
            rows.iter().map(|r| logit(r.3)).collect(),
            vec![0.5; rows.len()],
            (0..rows.len()).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    fn state_with_gbar(gbar: &[f64]) -> AdcState {
        let mut s = AdcState::new(gbar.len(), 2, 1e-8);
        for (i, &g) in gbar.iter().enumerate() {
            s.gbar_sum[i] = g;
            s.gbar_count[i] = 1;
        }
        s
    }

    #[test]
    fn ema_decays_toward_floor_on_constant_loss() {
        let mut s = AdcState::new(1, 2, 1e-8);
        s.ema_improvement = 0.5;
        for _ in 0..3000 {
            s.update_ema(1.0, 0.99, 1e-8);
        }
        assert!((s.ema_improvement - 1e-8).abs() < 1e-12);
    }

    #[test]
    fn ema_converges_to_constant_improvement() {
        let mut s = AdcState::new(1, 2, 1e-12);
        let c = 0.01;
        let mut loss = 100.0;
        for _ in 0..5000 {
            s.update_ema(loss, 0.99, 1e-12);
            loss -= c;
        }
        assert!((s.ema_improvement - c).abs() < 1e-6);
    }

    #[test]
    fn ema_one_step_hand_value() {
        let mut s = AdcState::new(1, 2, 0.0);
        s.ema_improvement = 0.0;
        s.prev_loss = Some(1.0);
        s.update_ema(0.9, 0.99, 0.0);
        assert!((s.ema_improvement - 0.001).abs() < 1e-15);
    }

    #[test]
    fn gad_threshold_worked_example() {
        assert_eq!(gad_threshold(2e-4, 0.0, 1000, 1_000_000, 1e-3), 2e-4);
        let tau = gad_threshold(2e-4, 1.0, 1000, 1_000_000, 1e-3);
        assert!((tau - 4e-4).abs() < 1e-18);
    }

    #[test]
    fn gad_threshold_is_linear_in_count() {
        let t1 = gad_threshold(2e-4, 1.0, 1000, 1_000_000, 1e-3) - 2e-4;
        let t2 = gad_threshold(2e-4, 1.0, 2000, 1_000_000, 1e-3) - 2e-4;
        assert!((t2 - 2.0 * t1).abs() < 1e-18);
    }

    #[test]
    fn gad_threshold_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng as _;
        for _ in 0..1000 {
            let tau0 = rng.gen_range(1e-5..1e-2);
            let lambda = rng.gen_range(0.001..10.0);
            let k = rng.gen_range(1..100_000);
            let n = rng.gen_range(1000..10_000_000);
            let ema = rng.gen_range(1e-8..1.0);
            let tau = gad_threshold(tau0, lambda, k, n, ema);
            assert!(tau >= tau0);
            assert!(gad_threshold(tau0, lambda, k + 1, n, ema) > tau);
            assert!(gad_threshold(tau0, lambda, k, n, ema * 2.0) < tau);
        }
    }

    #[test]
    fn growthcap_midpoint_and_monotonicity() {
        assert!((growthcap_factor(1000, 1000, 10.0) - 0.5).abs() < 1e-15);
        assert!(growthcap_factor(0, 1000, 10.0) > 1.0 - 1e-4);
        // within 1e-2 of full for K <= Kmax/2 at sharpness 10 (the plain
        // sigmoid gives 1/(1+e^-5) there)
        assert!(growthcap_factor(500, 1000, 10.0) > 1.0 - 1e-2);
        let mut prev = f64::INFINITY;
        for k in (0..3000).step_by(50) {
            let f = growthcap_factor(k, 1000, 10.0);
            assert!(f <= prev && f > 0.0 && f <= 1.0);
            prev = f;
        }
    }

    #[test]
    fn qualifying_large_gaussian_splits() {
        let mut c = cloud(&[(0.0, 0.0, 0.5, 0.8)]);
        let mut s = state_with_gbar(&[3e-4]);
        let cfg = AdcConfig {
            size_threshold: 0.1,
            split_scale_divisor: 1.6,
            ..AdcConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 2e-4, 1536, 100, &mut rng);
        assert_eq!(c.len(), 2);
        assert_eq!(out.splits, 1);
        for i in 0..2 {
            assert!((c.scale(i) - 0.5 / 1.6).abs() < 1e-12);
        }
        assert_eq!(s.audit.len(), 1);
        assert_eq!(s.audit[0].op, AdcOp::Split);
        assert_eq!(s.audit[0].children.len(), 2);
    }

    #[test]
    fn a2_disables_split_without_fallback_clone() {
        let mut c = cloud(&[(0.0, 0.0, 0.5, 0.8)]);
        let mut s = state_with_gbar(&[3e-4]);
        let mut cfg = AdcConfig {
            size_threshold: 0.1,
            ..AdcConfig::default()
        };
        AblationPreset::A2.apply(&mut cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 2e-4, 1536, 100, &mut rng);
        assert_eq!(c.len(), 1);
        assert_eq!(out.splits + out.clones, 0);
        assert!(s.audit.is_empty());
    }

    #[test]
    fn small_qualifier_clones_along_gradient() {
        let mut c = cloud(&[(0.0, 0.0, 0.05, 0.8)]);
        let mut s = state_with_gbar(&[3e-4]);
        s.grad_dir[0] = 2.0; // +x direction
        let cfg = AdcConfig {
            size_threshold: 0.1,
            clone_offset: 0.5,
            ..AdcConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 2e-4, 1536, 100, &mut rng);
        assert_eq!(c.len(), 2);
        assert_eq!(out.clones, 1);
        assert!((c.position(1)[0] - 0.5 * 0.05).abs() < 1e-12);
        assert_eq!(c.position(1)[1], 0.0);
    }

    #[test]
    fn low_opacity_gaussians_are_pruned() {
        let mut c = cloud(&[(0.0, 0.0, 0.05, 0.001), (1.0, 0.0, 0.05, 0.5)]);
        let mut s = state_with_gbar(&[0.0, 0.0]);
        let cfg = AdcConfig {
            prune_opacity: 0.005,
            ..AdcConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 2e-4, 1536, 100, &mut rng);
        assert_eq!(c.len(), 1);
        assert_eq!(out.prunes, 1);
        assert!((c.opacity(0) - 0.5).abs() < 1e-12);
        // remaining opacities respect the threshold
        for i in 0..c.len() {
            assert!(c.opacity(i) >= 0.005);
        }
    }

    #[test]
    fn prune_never_empties_the_cloud() {
        let mut c = cloud(&[(0.0, 0.0, 0.05, 0.001), (1.0, 0.0, 0.05, 0.002)]);
        let mut s = state_with_gbar(&[0.0, 0.0]);
        let cfg = AdcConfig {
            prune_opacity: 0.01,
            ..AdcConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 2e-4, 1536, 100, &mut rng);
        assert_eq!(c.len(), 1);
        assert!(out.kept_last);
        assert!((c.opacity(0) - 0.002).abs() < 1e-9);
        assert!(s.audit.iter().any(|e| e.op == AdcOp::WarnKeepLast));
    }

    #[test]
    fn disabled_adc_changes_nothing() {
        let mut c = cloud(&[(0.0, 0.0, 0.5, 0.001)]);
        let mut s = state_with_gbar(&[1.0]);
        let mut cfg = AdcConfig::default();
        AblationPreset::A1.apply(&mut cfg);
        let before = c.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 1e-9, 1536, 100, &mut rng);
        assert!(out.origins.is_none());
        assert_eq!(c, before);
        assert_eq!(s.mean_gbar(0), 0.0); // accumulators still reset
    }

    #[test]
    fn growthcap_limits_and_ranks_candidates() {
        // ten identical qualifying Gaussians, cap fraction ~0.5 at K = K_max
        let rows: Vec<(f64, f64, f64, f64)> =
            (0..10).map(|i| (i as f64, 0.0, 0.05, 0.8)).collect();
        let mut c = cloud(&rows);
        let gbars: Vec<f64> = (0..10).map(|i| 1e-3 + i as f64 * 1e-5).collect();
        let mut s = state_with_gbar(&gbars);
        let cfg = AdcConfig {
            growthcap_k_max: 10,
            growthcap_sharpness: 10.0,
            size_threshold: 0.1,
            ..AdcConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = densify_and_prune(&mut c, &mut s, &cfg, 1e-4, 1536, 100, &mut rng);
        assert_eq!(out.clones, 5); // round(0.5 * 10)
        // the served candidates are the five largest gradients (indices 5..9)
        let mut cloned_parents: Vec<u64> = s
            .audit
            .iter()
            .filter(|e| e.op == AdcOp::Clone)
            .map(|e| e.parent)
            .collect();
        cloned_parents.sort_unstable();
        assert_eq!(cloned_parents, vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn audit_log_reconciles_with_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        use rand::Rng as _;
        let rows: Vec<(f64, f64, f64, f64)> = (0..12)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.02..0.3),
                    rng.gen_range(0.01..0.9),
                )
            })
            .collect();
        let mut c = cloud(&rows);
        let k_init = c.len();
        let mut s = AdcState::new(k_init, 2, 1e-8);
        for pass in 0..6 {
            let k = c.len();
            s.reset_accumulators(k);
            for i in 0..k {
                s.gbar_sum[i] = rng.gen_range(0.0..4e-4);
                s.gbar_count[i] = 1;
                s.grad_dir[2 * i] = rng.gen_range(-1.0..1.0);
            }
            densify_and_prune(
                &mut c,
                &mut s,
                &AdcConfig::default(),
                2e-4,
                1536,
                100 * pass,
                &mut rng,
            );
        }
        let splits = s.audit.iter().filter(|e| e.op == AdcOp::Split).count();
        let clones = s.audit.iter().filter(|e| e.op == AdcOp::Clone).count();
        let prunes = s.audit.iter().filter(|e| e.op == AdcOp::Prune).count();
        assert_eq!(c.len() as i64, k_init as i64 + splits as i64 + clones as i64 - prunes as i64);
    }

    #[test]
    fn preset_overrides_match_their_definitions() {
        let base = AdcConfig::default();
        for preset in AblationPreset::all() {
            let mut cfg = base.clone();
            preset.apply(&mut cfg);
            match preset {
                AblationPreset::Baseline => assert_eq!(cfg, base),
                AblationPreset::A1 => assert!(!cfg.enable_all),
                AblationPreset::A2 => assert!(!cfg.enable_split),
                AblationPreset::A3 => assert!(!cfg.enable_clone),
                AblationPreset::A4 => assert!(!cfg.enable_prune),
                AblationPreset::A5 => assert_eq!(cfg.interval, base.interval * 2),
                AblationPreset::A6 => assert_eq!(cfg.window.1, base.window.1 / 2),
                AblationPreset::A7 => assert_eq!(cfg.threshold_scale, 2.0),
                AblationPreset::A8 => assert_eq!(cfg.threshold_scale, 0.5),
            }
            assert_eq!(AblationPreset::parse(preset.id()), Some(preset));
        }
    }
}
