//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so
//! the lines always reach stdout; exits nonzero if any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use apll_core::harness::{self, ExperimentConfig};
use apll_core::labelgen::{audit_generation, generate_adversary_aware, generate_standard};
use apll_core::verify::{self, ConsistencyReport, GradientCheckConfig, LadderConfig, Verdict};
use apll_core::{FlipProfile, GenerationMode, Result, RivalMatrix};

struct Line {
    id: u8,
    name: &'static str,
    ok: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn timed(id: u8, name: &'static str, budget_secs: u64, f: impl FnOnce() -> Result<(bool, String)>) -> Line {
    let start = Instant::now();
    let (ok, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Line {
        id,
        name,
        ok,
        detail,
        elapsed: start.elapsed(),
        budget: Duration::from_secs(budget_secs),
    }
}

fn report_detail(r: &ConsistencyReport) -> (bool, String) {
    let failing: Vec<String> = r
        .checks()
        .iter()
        .filter(|c| c.verdict == Verdict::Fail)
        .map(|c| format!("{} measured={:e} tolerance={:e}", c.name, c.measured, c.tolerance.unwrap_or(f64::NAN)))
        .collect();
    if !failing.is_empty() {
        return (false, format!("failing: {}", failing.join("; ")));
    }
    // passing upper bounds are the checks with measured/tolerance <= 1
    let tightest = r
        .checks()
        .iter()
        .filter_map(|c| c.tolerance.map(|t| (c, c.measured / t)))
        .filter(|(_, ratio)| *ratio <= 1.0)
        .max_by(|a, b| a.1.total_cmp(&b.1));
    let detail = match tightest {
        Some((c, _)) => format!("tightest {} measured={:e} tolerance={:e}", c.name, c.measured, c.tolerance.unwrap()),
        None => format!("{} checks passed", r.checks().len()),
    };
    (r.passed(), detail)
}

fn oracle() -> Result<(bool, String)> {
    Ok(report_detail(&verify::oracle_suite()?))
}

fn gradients() -> Result<(bool, String)> {
    let cfg = GradientCheckConfig::default();
    let report = verify::gradient_suite(&cfg, 20, 0, 1e-5)?;
    let shape_ok = cfg.classes == 3 && cfg.embedding_dim == 4 && cfg.batch == 8 && cfg.step == 1e-5;
    let (ok, detail) = report_detail(&report);
    Ok((ok && shape_ok, detail))
}

fn recovery() -> Result<(bool, String)> {
    let (report, rows) = verify::recovery_suite(0)?;
    let full = rows.iter().filter(|r| r.full_rank).count();
    let (ok, detail) = report_detail(&report);
    Ok((ok && full > 0, format!("{detail} full_rank_configs={full}/{}", rows.len())))
}

/// Inclusion and rival frequencies against closed-form expectations with
/// binomial 3σ bands.
fn generation() -> Result<(bool, String)> {
    let n = 100_000;
    let (c, q) = (5, 0.3);
    let rival = RivalMatrix::build(c, 2, 0.5)?;
    let profile = FlipProfile::new(q, FlipProfile::DEFAULT_PERTURBATION)?;
    let spec = apll_core::data::GaussianMixtureSpec::benchmark(c, c, 3.0, 7)?;
    let clean = spec.sample(n, 0)?;
    let standard = generate_standard(&clean, &profile, 7)?;
    let adversary = generate_adversary_aware(&clean, &rival, &profile, 7)?;
    let std_report = audit_generation(&standard)?;
    let adv_report = audit_generation(&adversary)?;

    let mut worst_z: f64 = 0.0;
    let mut true_rate_ok = true;
    for y in 0..c {
        let ny = adv_report.class_counts[y] as f64;
        let nys = std_report.class_counts[y] as f64;
        true_rate_ok &= adv_report.inclusion[[y, y]] == 1.0 && std_report.inclusion[[y, y]] == 1.0;
        let freq = adv_report.rival_frequency.as_ref().expect("adversary mode records rivals");
        for b in (0..c).filter(|&b| b != y) {
            let t = rival.entries()[[y, b]];
            for (p, observed, m) in [
                (q, std_report.inclusion[[y, b]], nys),
                (q + (1.0 - q) * t, adv_report.inclusion[[y, b]], ny),
                (t, freq[[y, b]], ny),
            ] {
                let sigma = (p * (1.0 - p) / m).sqrt();
                if sigma > 0.0 {
                    worst_z = worst_z.max((observed - p).abs() / sigma);
                } else if observed != p {
                    worst_z = f64::INFINITY;
                }
            }
        }
    }
    let grows = adv_report.mean_cardinality > std_report.mean_cardinality;
    Ok((
        worst_z <= 3.0 && true_rate_ok && grows,
        format!(
            "worst |z|={worst_z:.3} tolerance=3 true_label_rate_exact={true_rate_ok} mean_cardinality adversary={:.4} standard={:.4}",
            adv_report.mean_cardinality, std_report.mean_cardinality
        ),
    ))
}

fn ladder() -> Result<(bool, String)> {
    let cfg = LadderConfig::standard(0)?;
    let (report, points) = verify::classifier_consistency_ladder(&cfg)?;
    let mut medians = Vec::new();
    for &n in &cfg.sizes {
        let mut v: Vec<f64> = points.iter().filter(|p| p.n == n).map(|p| p.bayes_match).collect();
        v.sort_by(f64::total_cmp);
        medians.push(format!("n={n}:{:.4}", v.get(v.len() / 2).copied().unwrap_or(f64::NAN)));
    }
    let (ok, detail) = report_detail(&report);
    Ok((ok, format!("bayes_match medians {} | {detail}", medians.join(" "))))
}

/// Paired runs on the 10-class mixture at q = 0.5 ± 0.02 with the five-entry
/// rival preset.
fn ablation_config() -> ExperimentConfig {
    ExperimentConfig {
        classes: 10,
        dim: 16,
        separation: 3.0,
        train_size: 4000,
        test_size: 2000,
        mode: GenerationMode::AdversaryAware,
        q: 0.5,
        perturbation: 0.02,
        rival_support: 5,
        rival_weight: 0.2,
        encoder_widths: vec![64, 64],
        projection_hidden: 64,
        embedding_dim: 32,
        batch_size: 128,
        lr: 0.2,
        epochs: 40,
        warmup_epochs: Some(8),
        ..ExperimentConfig::default()
    }
}

fn ablation() -> Result<(bool, String)> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ablation_config();
    cfg.output_dir = dir.path().to_path_buf();
    let report = harness::cmd_ablate(&cfg, &[0, 1, 2, 3, 4])?;
    let (with, without) = (report.median_with(), report.median_without());
    let wins = report.rows.iter().filter(|r| r.with_transition >= r.without_transition).count();
    Ok((
        with >= without,
        format!("median with_T={with:.4} without_T={without:.4} paired_wins={wins}/5"),
    ))
}

fn atm() -> Result<(bool, String)> {
    Ok(report_detail(&verify::atm_suite(10_000, 1_000, 0)?))
}

fn determinism() -> Result<(bool, String)> {
    let root = tempfile::tempdir()?;
    let base = ExperimentConfig {
        classes: 5,
        dim: 6,
        train_size: 600,
        test_size: 300,
        q: 0.3,
        rival_support: 2,
        rival_weight: 0.5,
        encoder_widths: vec![32],
        projection_hidden: 16,
        embedding_dim: 16,
        batch_size: 64,
        lr: 0.05,
        epochs: 30,
        seed: 11,
        ..ExperimentConfig::default()
    };
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = base.clone();
        cfg.output_dir = root.path().join(run);
        harness::cmd_generate(&cfg)?;
        harness::cmd_train(&cfg)?;
        outputs.push((
            fs::read(cfg.output_dir.join(harness::METRICS))?,
            fs::read(cfg.output_dir.join(harness::CHECKPOINT))?,
            fs::read(cfg.output_dir.join(harness::TRAIN_PLL))?,
        ));
    }
    let same_metrics = outputs[0].0 == outputs[1].0;
    let same_rest = outputs[0].1 == outputs[1].1 && outputs[0].2 == outputs[1].2;
    let rows = String::from_utf8_lossy(&outputs[0].0).lines().count() - 1;
    Ok((
        same_metrics && same_rest && rows == 30,
        format!("metrics_identical={same_metrics} checkpoint_and_data_identical={same_rest} rows={rows}"),
    ))
}

fn risk() -> Result<(bool, String)> {
    let report = verify::risk_suite(0)?;
    let again = verify::risk_suite(0)?;
    let noisy = report.max_risk_deviation.unwrap_or(f64::NAN);
    let stable = (noisy - again.max_risk_deviation.unwrap_or(f64::NAN)).abs() <= 1e-12;
    let (ok, detail) = report_detail(&report);
    Ok((ok && stable, format!("{detail} noisy_deviation={noisy:.6} (reported)")))
}

fn main() -> ExitCode {
    // cargo passes libtest flags to every test binary; nothing here filters.
    let lines = [
        timed(1, "oracle equivalence", 5, oracle),
        timed(2, "gradient correctness", 30, gradients),
        timed(3, "posterior recovery", 10, recovery),
        timed(4, "generation statistics", 20, generation),
        timed(5, "classifier consistency ladder", 600, ladder),
        timed(6, "ablation direction", 900, ablation),
        timed(7, "ATM invariants", 30, atm),
        timed(8, "determinism", 120, determinism),
        timed(9, "risk-consistency probe", 60, risk),
    ];
    let mut all = true;
    for l in &lines {
        let in_time = l.elapsed <= l.budget;
        let ok = l.ok && in_time;
        all &= ok;
        println!(
            "criterion {} {}: {} | {} | {:.2}s of {}s",
            l.id,
            l.name,
            if ok { "PASS" } else { "FAIL" },
            l.detail,
            l.elapsed.as_secs_f64(),
            l.budget.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
