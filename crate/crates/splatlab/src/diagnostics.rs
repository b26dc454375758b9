//! Post-hoc strain measurement on trained checkpoints and the percentile
//! comparisons between a baseline and a regularized run.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::regularizers::{build_neighbor_graph, NeighborGraph};
use crate::stats::linear_percentile;

/// Evaluation timesteps used when the caller does not supply any.
pub const DEFAULT_TIMESTEPS: [f64; 4] = [0.1, 0.35, 0.65, 0.9];

/// How the neighbor set for strain measurement is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborMode {
    /// Use the k the training graph used (read from the checkpoint's
    /// embedded config; falls back to 8 when absent).
    GraphK,
    /// Rebuild with an explicit k.
    ExhaustiveK(usize),
}

/// Per-Gaussian mean strain with summary percentiles.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainReport {
    pub per_gaussian: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p1: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
    pub timesteps: Vec<f64>,
    pub checkpoint_id: String,
    pub k_used: usize,
    pub k_shrunk: bool,
}

impl StrainReport {
    /// Assemble a report from raw per-Gaussian strains.
    pub fn from_values(
        mut per_gaussian: Vec<f64>,
        timesteps: Vec<f64>,
        checkpoint_id: String,
        k_used: usize,
        k_shrunk: bool,
    ) -> Result<Self> {
        if per_gaussian.is_empty() {
            return Err(Error::Contract("empty strain vector".into()));
        }
        if per_gaussian.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Contract("strains must be nonnegative".into()));
        }
        let mean = per_gaussian.iter().sum::<f64>() / per_gaussian.len() as f64;
        let mut sorted = per_gaussian.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let report = Self {
            mean,
            median: linear_percentile(&sorted, 50.0),
            p1: linear_percentile(&sorted, 1.0),
            p99: linear_percentile(&sorted, 99.0),
            min: sorted[0],
            max: *sorted.last().unwrap(),
            per_gaussian: std::mem::take(&mut per_gaussian),
            timesteps,
            checkpoint_id,
            k_used,
            k_shrunk,
        };
        Ok(report)
    }
}

/// Per-Gaussian k-NN strain of a displacement snapshot:
/// `(1/k) * sum_j ||u_i - u_j||^2 / ||x_i - x_j||^2` with the graph's stored
/// (floored) canonical distances.
pub fn strain_from_displacements(
    graph: &NeighborGraph,
    displacements: &[f64],
    dim: usize,
) -> Vec<f64> {
    let count = graph.rows();
    let mut out = vec![0.0; count];
    if graph.k() == 0 {
        return out;
    }
    for (i, s) in out.iter_mut().enumerate() {
        let (idx, dist) = graph.row(i);
        let mut acc = 0.0;
        for (&j, &d2) in idx.iter().zip(dist) {
            let j = j as usize;
            let mut du = 0.0;
            for c in 0..dim {
                let d = displacements[i * dim + c] - displacements[j * dim + c];
                du += d * d;
            }
            acc += du / d2;
        }
        *s = acc / idx.len() as f64;
    }
    out
}

#[derive(Deserialize)]
struct PartialReg {
    #[serde(default = "default_k")]
    k: usize,
}

#[derive(Deserialize)]
struct PartialConfig {
    #[serde(default)]
    reg: Option<PartialReg>,
}

fn default_k() -> usize {
    8
}

/// Query the checkpoint's deformation field at the given timesteps and
/// average the per-Gaussian k-NN strain over them. A cloud with `K <= k`
/// shrinks the neighborhood and flags the report.
pub fn measure_strain(
    ckpt: &Checkpoint,
    timesteps: &[f64],
    mode: NeighborMode,
) -> Result<StrainReport> {
    if timesteps.is_empty() {
        return Err(Error::Contract("need at least one timestep".into()));
    }
    if timesteps.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Contract("timesteps must lie in [0, 1]".into()));
    }
    let k = match mode {
        NeighborMode::ExhaustiveK(k) => k,
        NeighborMode::GraphK => serde_json::from_str::<PartialConfig>(&ckpt.config_json)
            .ok()
            .and_then(|c| c.reg.map(|r| r.k))
            .unwrap_or_else(default_k),
    };
    let graph = build_neighbor_graph(&ckpt.cloud, k, 0)?;
    let count = ckpt.cloud.len();
    let dim = ckpt.cloud.dim;
    let mut acc = vec![0.0; count];
    for &t in timesteps {
        let eval = ckpt.field.eval(&ckpt.cloud.positions, t)?;
        let s = strain_from_displacements(&graph, &eval.displacements, dim);
        for (a, v) in acc.iter_mut().zip(&s) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= timesteps.len() as f64;
    }
    StrainReport::from_values(
        acc,
        timesteps.to_vec(),
        ckpt.id(),
        graph.k(),
        graph.shrunk,
    )
}

/// Comparison of a regularized run's strain against a baseline's.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainComparison {
    /// `(1 - reg.mean / base.mean) * 100`; `None` when the baseline mean is 0.
    pub mean_reduction_pct: Option<f64>,
    pub median_reduction_pct: Option<f64>,
    /// Regularized median below the baseline's 1st percentile.
    pub median_below_base_p1: bool,
    /// Regularized 99th percentile below the baseline median.
    pub p99_below_base_median: bool,
    /// `base.median / reg.p99` (infinite when the regularized p99 is 0).
    pub base_median_over_reg_p99: f64,
}

pub fn strain_compare(base: &StrainReport, reg: &StrainReport) -> Result<StrainComparison> {
    if base.timesteps != reg.timesteps {
        return Err(Error::Contract(
            "strain reports were measured at different timesteps".into(),
        ));
    }
    let reduction = |b: f64, r: f64| (b != 0.0).then(|| (1.0 - r / b) * 100.0);
    Ok(StrainComparison {
        mean_reduction_pct: reduction(base.mean, reg.mean),
        median_reduction_pct: reduction(base.median, reg.median),
        median_below_base_p1: reg.median < base.p1,
        p99_below_base_median: reg.p99 < base.median,
        base_median_over_reg_p99: if reg.p99 == 0.0 {
            if base.median == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            base.median / reg.p99
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        logit, DeformationField, FieldDescriptor, GaussianCloud, RngState,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint_with(cloud: GaussianCloud, field: DeformationField) -> Checkpoint {
        let rng = ChaCha8Rng::seed_from_u64(0);
        Checkpoint::new(cloud, field, 0, RngState::capture(&rng), "{}".into())
    }

    fn simple_cloud(points: &[[f64; 2]]) -> GaussianCloud {
        let k = points.len();
        GaussianCloud::new(
            2,
            points.iter().flatten().copied().collect(),
            vec![-2.5; k],
            vec![logit(0.7); k],
            vec![0.5; k],
            (0..k).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    fn randomized_field(seed: u64) -> DeformationField {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = DeformationField::new(
            FieldDescriptor {
                fourier_features: 3,
                hidden_width: 16,
                embed_width: 8,
                ..FieldDescriptor::default()
            },
            &mut rng,
        )
        .unwrap();
        for p in f.params_mut().iter_mut() {
            if *p == 0.0 {
                *p = rng.gen_range(-0.3..0.3);
            }
        }
        f
    }

    #[test]
    fn zero_field_measures_zero_strain() {
        let cloud = simple_cloud(&[[0.0, 0.0], [0.5, 0.1], [0.2, 0.8], [0.9, 0.4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let field = DeformationField::new(FieldDescriptor::default(), &mut rng).unwrap();
        let ckpt = checkpoint_with(cloud, field);
        let r = measure_strain(&ckpt, &DEFAULT_TIMESTEPS, NeighborMode::ExhaustiveK(2)).unwrap();
        assert!(r.per_gaussian.iter().all(|s| *s == 0.0));
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.p99, 0.0);
        assert_eq!(r.max, 0.0);
    }

    #[test]
    fn pure_translation_field_has_zero_strain() {
        // final layer rewritten to a constant: u(x, t) = b3 exactly
        let cloud = simple_cloud(&[[0.0, 0.0], [0.5, 0.1], [0.2, 0.8], [0.9, 0.4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut field = DeformationField::new(FieldDescriptor::default(), &mut rng).unwrap();
        let n = field.params().len();
        field.params_mut()[n - 2] = 0.31;
        field.params_mut()[n - 1] = -0.87;
        let ckpt = checkpoint_with(cloud, field);
        let r = measure_strain(&ckpt, &[0.2, 0.8], NeighborMode::ExhaustiveK(3)).unwrap();
        assert!(r.per_gaussian.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn two_gaussian_hand_value() {
        // same numbers as the smoothness-loss hand case: strains are 0.25
        let cloud = simple_cloud(&[[0.0, 0.0], [2.0, 0.0]]);
        let graph = build_neighbor_graph(&cloud, 1, 0).unwrap();
        let u = vec![0.0, 0.0, 1.0, 0.0];
        let s = strain_from_displacements(&graph, &u, 2);
        assert!((s[0] - 0.25).abs() < 1e-12);
        assert!((s[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn strain_is_invariant_under_storage_permutation() {
        let pts = [[0.0, 0.0], [0.5, 0.1], [0.2, 0.8], [0.9, 0.4], [0.4, 0.5]];
        let field = randomized_field(3);
        let base = checkpoint_with(simple_cloud(&pts), field.clone());
        let r1 = measure_strain(&base, &[0.5], NeighborMode::ExhaustiveK(2)).unwrap();

        let perm = [3usize, 1, 4, 0, 2];
        let permuted: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
        let p = checkpoint_with(simple_cloud(&permuted), field);
        let r2 = measure_strain(&p, &[0.5], NeighborMode::ExhaustiveK(2)).unwrap();

        for (new_idx, &old_idx) in perm.iter().enumerate() {
            assert!((r2.per_gaussian[new_idx] - r1.per_gaussian[old_idx]).abs() < 1e-12);
        }
        assert!((r1.mean - r2.mean).abs() < 1e-12);
        assert!((r1.median - r2.median).abs() < 1e-12);
    }

    #[test]
    fn held_out_timesteps_give_comparable_strain_on_a_smooth_field() {
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|i| {
                let a = i as f64 * 0.21;
                [0.8 * a.cos(), 0.8 * a.sin()]
            })
            .collect();
        let ckpt = checkpoint_with(simple_cloud(&pts), randomized_field(9));
        let fixed = measure_strain(&ckpt, &DEFAULT_TIMESTEPS, NeighborMode::ExhaustiveK(4)).unwrap();
        let held_out =
            measure_strain(&ckpt, &[0.15, 0.4, 0.62, 0.88], NeighborMode::ExhaustiveK(4)).unwrap();
        assert!(fixed.mean > 0.0);
        let ratio = held_out.mean / fixed.mean;
        assert!(ratio > 0.2 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn summary_percentiles_are_ordered() {
        let r = StrainReport::from_values(
            vec![0.1, 3.0, 0.5, 0.7, 2.2, 0.05, 1.4],
            vec![0.5],
            "test".into(),
            3,
            false,
        )
        .unwrap();
        assert!(r.min <= r.p1 && r.p1 <= r.median && r.median <= r.p99 && r.p99 <= r.max);
    }

    #[test]
    fn identical_reports_compare_to_zero_reduction() {
        let r = StrainReport::from_values(
            vec![0.5, 1.0, 2.0, 4.0],
            vec![0.5],
            "a".into(),
            2,
            false,
        )
        .unwrap();
        let c = strain_compare(&r, &r).unwrap();
        assert_eq!(c.mean_reduction_pct, Some(0.0));
        assert_eq!(c.median_reduction_pct, Some(0.0));
        assert!(!c.median_below_base_p1);
        assert!(!c.p99_below_base_median);
    }

    #[test]
    fn published_mean_reduction_arithmetic() {
        // scene-set means: baseline 3.54 vs regularized 0.00922
        let base = StrainReport::from_values(vec![3.54; 4], vec![0.5], "b".into(), 2, false)
            .unwrap();
        let reg = StrainReport::from_values(vec![0.00922; 4], vec![0.5], "r".into(), 2, false)
            .unwrap();
        let c = strain_compare(&base, &reg).unwrap();
        let red = c.mean_reduction_pct.unwrap();
        assert!((red - 99.7395480225989).abs() < 1e-10);
        assert!((red - 99.74).abs() < 0.005);
    }

    #[test]
    fn percentile_booleans_and_ratio() {
        // base: p1 = 1, median = 2; reg: median = 0.5, p99 = 0.4
        let mut base = StrainReport::from_values(vec![1.0; 3], vec![0.5], "b".into(), 2, false)
            .unwrap();
        base.p1 = 1.0;
        base.median = 2.0;
        let mut reg = StrainReport::from_values(vec![1.0; 3], vec![0.5], "r".into(), 2, false)
            .unwrap();
        reg.median = 0.5;
        reg.p99 = 0.4;
        let c = strain_compare(&base, &reg).unwrap();
        assert!(c.median_below_base_p1);
        assert!(c.p99_below_base_median);
        assert!((c.base_median_over_reg_p99 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_mean_is_flagged_undefined() {
        let base =
            StrainReport::from_values(vec![0.0; 3], vec![0.5], "b".into(), 2, false).unwrap();
        let reg =
            StrainReport::from_values(vec![0.1; 3], vec![0.5], "r".into(), 2, false).unwrap();
        let c = strain_compare(&base, &reg).unwrap();
        assert!(c.mean_reduction_pct.is_none());
    }

    #[test]
    fn reduction_is_antisymmetric_in_sign() {
        let a = StrainReport::from_values(vec![2.0; 3], vec![0.5], "a".into(), 2, false).unwrap();
        let b = StrainReport::from_values(vec![0.5; 3], vec![0.5], "b".into(), 2, false).unwrap();
        let ab = strain_compare(&a, &b).unwrap().mean_reduction_pct.unwrap();
        let ba = strain_compare(&b, &a).unwrap().mean_reduction_pct.unwrap();
        // (1 - ratio) changes sign when the ratio inverts
        assert!(ab > 0.0 && ba < 0.0);
    }

    #[test]
    fn oversized_k_shrinks_and_flags() {
        let cloud = simple_cloud(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let ckpt = checkpoint_with(cloud, randomized_field(4));
        let r = measure_strain(&ckpt, &[0.5], NeighborMode::ExhaustiveK(10)).unwrap();
        assert!(r.k_shrunk);
        assert_eq!(r.k_used, 2);
    }

    #[test]
    fn graph_mode_reads_k_from_config() {
        let cloud = simple_cloud(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let mut ckpt = checkpoint_with(cloud, randomized_field(5));
        ckpt.config_json = r#"{"reg":{"k":2,"lambda":0.1},"seed":1}"#.into();
        let r = measure_strain(&ckpt, &[0.5], NeighborMode::GraphK).unwrap();
        assert_eq!(r.k_used, 2);
        // absent config falls back to the stock k (shrunk to K-1 here)
        ckpt.config_json = "{}".into();
        let r2 = measure_strain(&ckpt, &[0.5], NeighborMode::GraphK).unwrap();
        assert_eq!(r2.k_used, 3);
        assert!(r2.k_shrunk);
    }
}
