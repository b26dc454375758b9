//! Suite outputs: results CSV, audit/trajectory/strain CSVs, and the
//! key-value stats report.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::RunRecord;
use crate::adc::AdcEvent;
use crate::diagnostics::{strain_compare, StrainReport};
use crate::error::{Error, Result};
use crate::stats::{fit_count_gap, paired_effect, wilcoxon_exact, PairedSample};

/// Format a float with 17 significant digits, round-tripping bit-exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) const RESULTS_HEADER: &str = "scene,preset,seed,iterations,train_psnr,test_psnr,gap,final_K,mean_strain,median_strain,wall_ms,diverged";

/// Fixed-column results CSV, one row per run, floats at 17 significant digits.
pub fn write_results_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scene,
            r.preset,
            r.seed,
            r.iterations,
            fmt_f64(r.train_psnr),
            fmt_f64(r.test_psnr),
            fmt_f64(r.gap),
            r.final_k,
            fmt_f64(r.mean_strain),
            fmt_f64(r.median_strain),
            r.wall_ms,
            r.diverged,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a results CSV back into records (trajectory and hash columns are not
/// part of the CSV schema and come back empty).
pub fn read_results_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "unexpected results header: {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected 12",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad float '{s}': {e}")))
        };
        let parse_u = |s: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|e| Error::Parse(format!("bad integer '{s}': {e}")))
        };
        records.push(RunRecord {
            scene: fields[0].to_string(),
            preset: fields[1].to_string(),
            seed: parse_u(fields[2])?,
            iterations: parse_u(fields[3])? as usize,
            train_psnr: parse_f(fields[4])?,
            test_psnr: parse_f(fields[5])?,
            gap: parse_f(fields[6])?,
            final_k: parse_u(fields[7])? as usize,
            mean_strain: parse_f(fields[8])?,
            median_strain: parse_f(fields[9])?,
            wall_ms: parse_u(fields[10])?,
            diverged: fields[11] == "true",
            k_trajectory: Vec::new(),
            config_hash: String::new(),
        });
    }
    Ok(records)
}

/// Audit log CSV: iteration, op, parent id, child ids, gradient, threshold.
pub fn write_audit_csv(path: &Path, events: &[AdcEvent]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "iteration,op,parent,children,gbar,tau")?;
    for e in events {
        let children: Vec<String> = e.children.iter().map(|c| c.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.iteration,
            e.op.as_str(),
            e.parent,
            children.join(";"),
            fmt_f64(e.gbar),
            fmt_f64(e.tau),
        )?;
    }
    Ok(())
}

/// Cloud-size trajectory CSV (plot data).
pub fn write_ktraj_csv(path: &Path, trajectory: &[(usize, usize)]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "iteration,K")?;
    for (i, k) in trajectory {
        writeln!(out, "{i},{k}")?;
    }
    Ok(())
}

/// One strain report row of the suite.
#[derive(Debug, Clone)]
pub struct StrainRow {
    pub scene: String,
    pub preset: String,
    pub seed: u64,
    pub report: StrainReport,
}

/// Strain summary CSV: one row per run with mean/median/p1/p99 columns.
pub fn write_strain_csv(path: &Path, rows: &[StrainRow]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "scene,preset,seed,mean,median,p1,p99,min,max,k,timesteps")?;
    for r in rows {
        let ts: Vec<String> = r.report.timesteps.iter().map(|t| t.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scene,
            r.preset,
            r.seed,
            fmt_f64(r.report.mean),
            fmt_f64(r.report.median),
            fmt_f64(r.report.p1),
            fmt_f64(r.report.p99),
            fmt_f64(r.report.min),
            fmt_f64(r.report.max),
            r.report.k_used,
            ts.join(";"),
        )?;
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fraction of the cloud growth that happened before `midpoint`.
pub fn frontload_fraction(record: &RunRecord, midpoint: usize) -> Option<f64> {
    let traj = &record.k_trajectory;
    if traj.len() < 2 {
        return None;
    }
    let k0 = traj[0].1 as f64;
    let k_end = traj.last().unwrap().1 as f64;
    if k_end <= k0 {
        return None;
    }
    let k_mid = traj
        .iter()
        .take_while(|(i, _)| *i <= midpoint)
        .last()
        .map(|&(_, k)| k as f64)
        .unwrap_or(k0);
    Some((k_mid - k0) / (k_end - k0))
}

/// Key-value stats report: per-preset aggregates, paired comparisons against
/// the baseline, the count-gap fit over preset means, growth front-loading,
/// and strain-percentile comparisons.
pub fn format_stats_report(
    records: &[RunRecord],
    strain_rows: &[StrainRow],
    adc_window_midpoint: usize,
) -> String {
    let mut out = String::new();
    let mut presets: Vec<String> = Vec::new();
    for r in records {
        if !presets.contains(&r.preset) {
            presets.push(r.preset.clone());
        }
    }
    out.push_str("[suite]\n");
    out.push_str(&format!("runs = {}\n", records.len()));
    out.push_str(&format!("presets = {}\n", presets.join(",")));
    let diverged = records.iter().filter(|r| r.diverged).count();
    out.push_str(&format!("diverged = {diverged}\n\n"));

    let clean: Vec<&RunRecord> = records.iter().filter(|r| !r.diverged).collect();
    for preset in &presets {
        let rows: Vec<&&RunRecord> = clean.iter().filter(|r| &r.preset == preset).collect();
        if rows.is_empty() {
            continue;
        }
        let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
        let psnrs: Vec<f64> = rows.iter().map(|r| r.test_psnr).collect();
        let ks: Vec<f64> = rows.iter().map(|r| r.final_k as f64).collect();
        let strains: Vec<f64> = rows.iter().map(|r| r.mean_strain).collect();
        let (gm, gs) = mean_std(&gaps);
        let (pm, ps) = mean_std(&psnrs);
        let (km, _) = mean_std(&ks);
        let (sm, _) = mean_std(&strains);
        out.push_str(&format!("[preset {preset}]\n"));
        out.push_str(&format!("n = {}\n", rows.len()));
        out.push_str(&format!("gap_mean = {gm}\ngap_std = {gs}\n"));
        out.push_str(&format!("test_psnr_mean = {pm}\ntest_psnr_std = {ps}\n"));
        out.push_str(&format!("final_k_mean = {km}\n"));
        out.push_str(&format!("mean_strain = {sm}\n\n"));
    }

    // paired comparisons vs baseline, matched on (scene, seed)
    if presets.iter().any(|p| p == "baseline") {
        let key = |r: &RunRecord| (r.scene.clone(), r.seed);
        let baseline: Vec<&&RunRecord> =
            clean.iter().filter(|r| r.preset == "baseline").collect();
        for preset in presets.iter().filter(|p| *p != "baseline") {
            for (metric, get) in [
                ("gap", (|r: &RunRecord| r.gap) as fn(&RunRecord) -> f64),
                ("test_psnr", |r| r.test_psnr),
                ("final_k", |r| r.final_k as f64),
                ("mean_strain", |r| r.mean_strain),
            ] {
                let mut a = Vec::new();
                let mut b = Vec::new();
                let mut labels = Vec::new();
                for base in &baseline {
                    if let Some(other) = clean
                        .iter()
                        .find(|r| &r.preset == preset && key(r) == key(base))
                    {
                        let (va, vb) = (get(other), get(base));
                        if va.is_finite() && vb.is_finite() {
                            a.push(va);
                            b.push(vb);
                            labels.push(format!("{}_s{}", base.scene, base.seed));
                        }
                    }
                }
                if a.len() < 2 {
                    continue;
                }
                out.push_str(&format!(
                    "[compare preset={preset} baseline=baseline metric={metric}]\n"
                ));
                out.push_str(&format!("n = {}\n", a.len()));
                let sample = match PairedSample::new(a, b, labels) {
                    Ok(s) => s,
                    Err(e) => {
                        out.push_str(&format!("error = {e}\n\n"));
                        continue;
                    }
                };
                let (ma, _) = mean_std(&sample.a);
                let (mb, _) = mean_std(&sample.b);
                out.push_str(&format!("mean_{preset} = {ma}\nmean_baseline = {mb}\n"));
                match paired_effect(&sample) {
                    Ok(e) => {
                        out.push_str(&format!(
                            "mean_diff = {}\nt = {}\np_t = {}\ncohens_d = {}\n",
                            e.mean_diff, e.t, e.p, e.cohens_d
                        ));
                    }
                    Err(e) => out.push_str(&format!("t_error = {e}\n")),
                }
                match wilcoxon_exact(&sample) {
                    Ok(w) => {
                        out.push_str(&format!("w = {}\np_w = {}\nw_n = {}\n", w.w, w.p, w.n_used))
                    }
                    Err(e) => out.push_str(&format!("w_error = {e}\n")),
                }
                out.push('\n');
            }
        }
    }

    // count-gap fit across per-preset means
    let mut fit_records = Vec::new();
    for preset in &presets {
        let rows: Vec<&&RunRecord> = clean.iter().filter(|r| &r.preset == preset).collect();
        if rows.is_empty() {
            continue;
        }
        let (km, _) = mean_std(&rows.iter().map(|r| r.final_k as f64).collect::<Vec<_>>());
        let (gm, _) = mean_std(&rows.iter().map(|r| r.gap).collect::<Vec<_>>());
        if km.is_finite() && gm.is_finite() && km >= 1.0 {
            let mut rec = RunRecord::from_count_and_gap(km.round() as usize, gm);
            rec.preset = preset.clone();
            fit_records.push(rec);
        }
    }
    out.push_str("[count_gap_fit]\n");
    match fit_count_gap(&fit_records) {
        Ok(fit) => {
            out.push_str(&format!("points = {}\n", fit_records.len()));
            out.push_str(&format!(
                "slope_db_per_decade = {}\nintercept = {}\npearson_r = {}\nspearman_rho = {}\n",
                fit.slope, fit.intercept, fit.pearson, fit.spearman
            ));
            match fit.endpoint_dropped_r {
                Some(r) => out.push_str(&format!("endpoint_dropped_r = {r}\n")),
                None => out.push_str("endpoint_dropped_r = insufficient_points\n"),
            }
        }
        Err(e) => out.push_str(&format!("error = {e}\n")),
    }
    out.push('\n');

    // growth front-loading on baseline runs
    out.push_str("[frontloading]\n");
    out.push_str(&format!("window_midpoint = {adc_window_midpoint}\n"));
    for r in clean.iter().filter(|r| r.preset == "baseline") {
        if let Some(frac) = frontload_fraction(r, adc_window_midpoint) {
            out.push_str(&format!(
                "growth_before_midpoint_{}_s{} = {frac}\n",
                r.scene, r.seed
            ));
        }
    }
    out.push('\n');

    // strain percentile comparisons vs baseline
    for row in strain_rows.iter().filter(|r| r.preset != "baseline") {
        if let Some(base) = strain_rows
            .iter()
            .find(|b| b.preset == "baseline" && b.scene == row.scene && b.seed == row.seed)
        {
            if let Ok(cmp) = strain_compare(&base.report, &row.report) {
                out.push_str(&format!(
                    "[strain preset={} scene={} seed={}]\n",
                    row.preset, row.scene, row.seed
                ));
                match cmp.mean_reduction_pct {
                    Some(v) => out.push_str(&format!("mean_reduction_pct = {v}\n")),
                    None => out.push_str("mean_reduction_pct = undefined\n"),
                }
                match cmp.median_reduction_pct {
                    Some(v) => out.push_str(&format!("median_reduction_pct = {v}\n")),
                    None => out.push_str("median_reduction_pct = undefined\n"),
                }
                out.push_str(&format!(
                    "median_below_base_p1 = {}\np99_below_base_median = {}\nbase_median_over_reg_p99 = {}\n\n",
                    cmp.median_below_base_p1, cmp.p99_below_base_median, cmp.base_median_over_reg_p99
                ));
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scene: &str, preset: &str, seed: u64, gap: f64, k: usize) -> RunRecord {
        RunRecord {
            scene: scene.into(),
            preset: preset.into(),
            seed,
            iterations: 100,
            train_psnr: 30.0 + gap,
            test_psnr: 30.0,
            gap,
            final_k: k,
            mean_strain: 0.5,
            median_strain: 0.3,
            wall_ms: 12,
            diverged: false,
            k_trajectory: vec![(0, 8), (40, k / 2), (100, k)],
            config_hash: "abc".into(),
        }
    }

    #[test]
    fn results_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let records = vec![
            record("s1", "baseline", 0, 3.25, 120),
            record("s1", "a2", 0, 1.0, 40),
        ];
        write_results_csv(&path, &records).unwrap();
        let back = read_results_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].scene, "s1");
        assert_eq!(back[0].gap, 3.25);
        assert_eq!(back[1].final_k, 40);
        assert!(!back[0].diverged);
    }

    #[test]
    fn csv_floats_roundtrip_bit_exactly() {
        let vals = [
            0.1,
            1.0 / 3.0,
            6.18,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -0.0,
        ];
        for v in vals {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s}");
        }
    }

    #[test]
    fn frontload_fraction_reads_trajectory() {
        let r = record("s", "baseline", 0, 2.0, 100);
        // K: 8 -> 50 by iter 40, -> 100 at end; midpoint 60 sees 50
        let f = frontload_fraction(&r, 60).unwrap();
        assert!((f - (50.0 - 8.0) / (100.0 - 8.0)).abs() < 1e-12);
        assert!(frontload_fraction(&record("s", "b", 0, 1.0, 8), 60).is_none());
    }

    #[test]
    fn stats_report_contains_comparisons() {
        let records = vec![
            record("s1", "baseline", 0, 3.0, 100),
            record("s2", "baseline", 0, 4.0, 110),
            record("s3", "baseline", 0, 5.0, 120),
            record("s1", "a2", 0, 1.0, 30),
            record("s2", "a2", 0, 1.5, 35),
            record("s3", "a2", 0, 2.0, 40),
        ];
        let text = format_stats_report(&records, &[], 50);
        assert!(text.contains("[preset baseline]"));
        assert!(text.contains("[compare preset=a2 baseline=baseline metric=gap]"));
        assert!(text.contains("p_t = "));
        assert!(text.contains("p_w = "));
        assert!(text.contains("[count_gap_fit]"));
        assert!(text.contains("[frontloading]"));
    }
}
