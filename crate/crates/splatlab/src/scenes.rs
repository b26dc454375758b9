//! Synthetic dynamic ground-truth scenes and the monocular view protocol:
//! one camera pose per training timestep, held-out novel pose/time pairs for
//! test.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::{read_cloud, write_cloud, ByteReader, ByteWriter, KIND_SCENE};
use crate::model::{logit, GaussianCloud};
use crate::renderer::{render_displaced, Camera};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Whole cloud translates along a circular orbit (zero relative motion).
    RigidOrbit,
    /// Two rigid parts moving in opposition; strain concentrates at the joint.
    ArticulatedTwoPart,
    /// Three blobs bouncing with staggered phases.
    Bouncing,
}

impl GeneratorKind {
    pub fn id(&self) -> &'static str {
        match self {
            Self::RigidOrbit => "rigid_orbit",
            Self::ArticulatedTwoPart => "articulated",
            Self::Bouncing => "bouncing",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Self::RigidOrbit => 0,
            Self::ArticulatedTwoPart => 1,
            Self::Bouncing => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::RigidOrbit),
            1 => Ok(Self::ArticulatedTwoPart),
            2 => Ok(Self::Bouncing),
            other => Err(Error::Parse(format!("unknown generator tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub kind: GeneratorKind,
    /// Ground-truth Gaussian count.
    pub gaussian_count: usize,
    /// Peak displacement in world units.
    pub motion_amplitude: f64,
    pub train_views: usize,
    pub test_views: usize,
    pub image_width: usize,
    pub pixel_extent: f64,
    pub background: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            name: "rigid_orbit".into(),
            kind: GeneratorKind::RigidOrbit,
            gaussian_count: 48,
            motion_amplitude: 0.18,
            train_views: 24,
            test_views: 12,
            image_width: 64,
            pixel_extent: 0.04,
            background: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gaussian_count < 2 {
            return Err(Error::Config("scene needs at least two Gaussians".into()));
        }
        if self.train_views < 2 || self.test_views < 1 {
            return Err(Error::Config("need >= 2 train and >= 1 test views".into()));
        }
        if self.test_views > self.train_views.saturating_sub(1) {
            return Err(Error::Config(
                "test views must be at most train views - 1 (they interleave)".into(),
            ));
        }
        if self.image_width < 2 {
            return Err(Error::Config("image width must be >= 2".into()));
        }
        if !(self.pixel_extent > 0.0) {
            return Err(Error::Config("pixel extent must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        if self.motion_amplitude < 0.0 {
            return Err(Error::Config("motion amplitude must be >= 0".into()));
        }
        Ok(())
    }

    /// The three standard desk scenes, one per generator.
    pub fn stock(kind: GeneratorKind, seed: u64) -> Self {
        Self {
            name: kind.id().into(),
            kind,
            gaussian_count: match kind {
                GeneratorKind::RigidOrbit => 80,
                GeneratorKind::ArticulatedTwoPart => 64,
                GeneratorKind::Bouncing => 72,
            },
            seed,
            ..Self::default()
        }
    }

    pub fn camera_for(&self, angle: f64) -> Camera {
        Camera {
            angle,
            width: self.image_width,
            pixel_extent: self.pixel_extent,
            background: self.background,
        }
    }
}

/// Analytic ground-truth motion: a rigid translation per part.
///
/// Keeping each part's displacement constant across its Gaussians makes the
/// within-part strain exactly zero, so strain concentrates where neighbor
/// pairs straddle parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub kind: GeneratorKind,
    pub amplitude: f64,
    pub part_ids: Vec<usize>,
    /// Per-part parameters: a direction pair for the articulated generator,
    /// a phase for the bouncing one; unused for the rigid orbit.
    pub part_params: Vec<f64>,
}

impl Motion {
    /// Displacement of one part at time `t`.
    pub fn part_displacement(&self, part: usize, t: f64) -> [f64; 2] {
        let a = self.amplitude;
        let tau = std::f64::consts::TAU;
        match self.kind {
            GeneratorKind::RigidOrbit => {
                [a * ((tau * t).cos() - 1.0), a * (tau * t).sin()]
            }
            GeneratorKind::ArticulatedTwoPart => {
                let dx = self.part_params[2 * part];
                let dy = self.part_params[2 * part + 1];
                let s = (tau * t).sin();
                [a * s * dx, a * s * dy]
            }
            GeneratorKind::Bouncing => {
                let phase = self.part_params[part];
                let s = (tau * t + phase).sin().abs() - phase.sin().abs();
                [0.0, a * s]
            }
        }
    }

    /// Per-Gaussian displacements at time `t`, flat `K x 2`.
    pub fn displacements(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.part_ids.len() * 2);
        for &part in &self.part_ids {
            let d = self.part_displacement(part, t);
            out.push(d[0]);
            out.push(d[1]);
        }
        out
    }
}

/// Canonical cloud plus analytic motion: enough to re-render any view.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub cloud: GaussianCloud,
    pub motion: Motion,
}

impl GroundTruth {
    pub fn render(&self, cam: &Camera, t: f64) -> Result<Vec<f64>> {
        render_displaced(&self.cloud, &self.motion.displacements(t), cam, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub angle: f64,
    pub t: f64,
    pub image: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub spec: SceneSpec,
    pub train: Vec<ViewSample>,
    pub test: Vec<ViewSample>,
    pub ground_truth: GroundTruth,
}

/// Camera trajectory of the monocular protocol: a smooth arc, one pose per
/// training timestep.
pub fn trajectory_angle(t: f64) -> f64 {
    0.3 + std::f64::consts::PI * t
}

fn ground_truth_cloud(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> (GaussianCloud, Vec<usize>) {
    let k = spec.gaussian_count;
    let mut positions = Vec::with_capacity(2 * k);
    let mut part_ids = Vec::with_capacity(k);
    match spec.kind {
        GeneratorKind::RigidOrbit => {
            // a base slab with a smaller tower on top
            for i in 0..k {
                if i < (2 * k) / 3 {
                    positions.push(rng.gen_range(-0.45..0.45));
                    positions.push(rng.gen_range(-0.32..-0.05));
                } else {
                    positions.push(rng.gen_range(-0.18..0.18));
                    positions.push(rng.gen_range(-0.05..0.38));
                }
                part_ids.push(0);
            }
        }
        GeneratorKind::ArticulatedTwoPart => {
            // two limbs meeting at the origin
            for i in 0..k {
                let left = i < k / 2;
                let s: f64 = rng.gen_range(0.02..0.55);
                let sign = if left { -1.0 } else { 1.0 };
                positions.push(sign * s);
                positions.push(0.45 * s * sign + rng.gen_range(-0.06..0.06));
                part_ids.push(if left { 0 } else { 1 });
            }
        }
        GeneratorKind::Bouncing => {
            let centers = [(-0.45, -0.1), (0.0, 0.15), (0.45, -0.05)];
            for i in 0..k {
                let g = i % 3;
                let (cx, cy) = centers[g];
                let r: f64 = rng.gen_range(0.0..0.12);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                positions.push(cx + r * phi.cos());
                positions.push(cy + r * phi.sin());
                part_ids.push(g);
            }
        }
    }
    let log_scales: Vec<f64> = (0..k).map(|_| rng.gen_range(0.025_f64..0.06).ln()).collect();
    let opacity_logits: Vec<f64> = (0..k).map(|_| logit(rng.gen_range(0.55..0.9))).collect();
    let colors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.15..1.0)).collect();
    let depth_keys: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cloud = GaussianCloud::new(2, positions, log_scales, opacity_logits, colors, depth_keys)
        .expect("generated cloud is valid");
    (cloud, part_ids)
}

fn motion_params(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match spec.kind {
        GeneratorKind::RigidOrbit => Vec::new(),
        GeneratorKind::ArticulatedTwoPart => {
            // opposing, mostly vertical directions
            let dx: f64 = rng.gen_range(0.1..0.35);
            let norm = (dx * dx + 1.0).sqrt();
            vec![dx / norm, 1.0 / norm, -dx / norm, -1.0 / norm]
        }
        GeneratorKind::Bouncing => (0..3)
            .map(|g| g as f64 * std::f64::consts::FRAC_PI_3)
            .collect(),
    }
}

/// Deterministically generate the scene: ground truth, training views along
/// the camera trajectory (one per timestep), and held-out test views at
/// interleaved timesteps and offset poses.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (cloud, part_ids) = ground_truth_cloud(spec, &mut rng);
    let part_params = motion_params(spec, &mut rng);
    let motion = Motion {
        kind: spec.kind,
        amplitude: spec.motion_amplitude,
        part_ids,
        part_params,
    };
    let ground_truth = GroundTruth { cloud, motion };

    let n_train = spec.train_views;
    let mut train = Vec::with_capacity(n_train);
    for j in 0..n_train {
        let t = j as f64 / (n_train - 1) as f64;
        let angle = trajectory_angle(t);
        let image = ground_truth.render(&spec.camera_for(angle), t)?;
        train.push(ViewSample { angle, t, image });
    }

    // Test timesteps sit halfway between consecutive training timesteps,
    // spread evenly across the range; test poses are pushed off the training
    // trajectory by an alternating angular offset.
    let mut test = Vec::with_capacity(spec.test_views);
    let gaps = n_train - 1;
    for m in 0..spec.test_views {
        let a = (m * gaps) / spec.test_views;
        let t = (a as f64 + 0.5) / gaps as f64;
        let offset = if m % 2 == 0 { 0.08 } else { -0.08 };
        let angle = trajectory_angle(t) + offset;
        let image = ground_truth.render(&spec.camera_for(angle), t)?;
        test.push(ViewSample { angle, t, image });
    }

    Ok(SceneData {
        spec: spec.clone(),
        train,
        test,
        ground_truth,
    })
}

impl SceneData {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::with_header(KIND_SCENE);
        let spec_json = serde_json::to_vec(&self.spec)
            .map_err(|e| Error::Parse(format!("spec encode: {e}")))?;
        w.blob(&spec_json);
        write_cloud(&mut w, &self.ground_truth.cloud);
        w.u64(self.ground_truth.motion.kind.tag() as u64);
        w.f64(self.ground_truth.motion.amplitude);
        w.u64(self.ground_truth.motion.part_ids.len() as u64);
        for &p in &self.ground_truth.motion.part_ids {
            w.u64(p as u64);
        }
        w.f64_array(&self.ground_truth.motion.part_params);
        for views in [&self.train, &self.test] {
            w.u64(views.len() as u64);
            for v in views {
                w.f64(v.angle);
                w.f64(v.t);
                w.f64_array(&v.image);
            }
        }
        fs::write(path, w.finish())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path)?;
        let mut r = ByteReader::with_header(&data, KIND_SCENE)?;
        let spec: SceneSpec = serde_json::from_slice(&r.blob()?)
            .map_err(|e| Error::Parse(format!("spec decode: {e}")))?;
        let cloud = read_cloud(&mut r)?;
        let kind = GeneratorKind::from_tag(r.u64()? as u8)?;
        let amplitude = r.f64()?;
        let n_parts = r.u64()? as usize;
        let mut part_ids = Vec::with_capacity(n_parts);
        for _ in 0..n_parts {
            part_ids.push(r.u64()? as usize);
        }
        let part_params = r.f64_array()?;
        let read_views = |r: &mut ByteReader| -> Result<Vec<ViewSample>> {
            let n = r.u64()? as usize;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let angle = r.f64()?;
                let t = r.f64()?;
                let image = r.f64_array()?;
                out.push(ViewSample { angle, t, image });
            }
            Ok(out)
        };
        let train = read_views(&mut r)?;
        let test = read_views(&mut r)?;
        r.expect_eof()?;
        Ok(Self {
            spec,
            train,
            test,
            ground_truth: GroundTruth {
                cloud,
                motion: Motion {
                    kind,
                    amplitude,
                    part_ids,
                    part_params,
                },
            },
        })
    }
}
