//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and
//! exits non-zero if any failed.

mod common;

use std::f64::consts::{E, LN_2, PI};
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use cemvc::data::{self, Benchmark};
use cemvc::eval;
use cemvc::infometrics;
use cemvc::model::{Architecture, ClusterTarget};
use cemvc::numcore::Matrix;
use cemvc::pipeline::{self, ClusteringResult, PipelineConfig};
use cemvc::weighting::WeightingMode;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const SEEDS: u64 = 20;
const NOISE: usize = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn config(seed: u64) -> PipelineConfig {
    PipelineConfig { seed, ..PipelineConfig::default() }
}

fn acc(r: &ClusteringResult) -> f64 {
    r.metrics.as_ref().expect("benchmark labels").acc
}

fn nmi(r: &ClusteringResult) -> f64 {
    r.metrics.as_ref().expect("benchmark labels").nmi
}

fn kde_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Matrix::from_fn(2000, 1, |_, _| rng.sample(StandardNormal));
    let h_normal = infometrics::kde_entropy(&normal).unwrap().value;
    let truth = 0.5 * (2.0 * PI * E).ln();
    let uniform = Matrix::from_fn(2000, 1, |_, _| rng.gen::<f64>());
    let h_uniform = infometrics::kde_entropy(&uniform).unwrap().value;
    let mut worst_scaling: f64 = 0.0;
    for c in [0.5, 2.0, -3.0, 10.0, 1e-3] {
        let scaled = normal.scale(c);
        let h = infometrics::kde_entropy(&scaled).unwrap().value;
        worst_scaling = worst_scaling.max((h - h_normal - c.abs().ln()).abs());
    }
    let elapsed = start.elapsed();
    let pass = (h_normal - truth).abs() <= 0.1
        && h_uniform.abs() <= 0.1
        && worst_scaling <= 1e-9
        && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "H(normal) = {h_normal:.4} (target {truth:.4}), H(uniform) = {h_uniform:.4}, scaling-law error {worst_scaling:.1e}, {:.2}s",
            secs(elapsed)
        ),
    )
}

fn conditional_entropy_ordering(bench: &Benchmark) -> Outcome {
    let start = Instant::now();
    let hits: Vec<bool> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let data = bench.noisy(seed).unwrap();
            let reps = pipeline::pretrained_latents(&data, &config(seed)).unwrap();
            let ce = pipeline::view_conditional_entropies(&reps).unwrap();
            let v = ce.values();
            (0..v.len()).filter(|&i| i != NOISE).all(|i| v[NOISE] > v[i])
        })
        .collect();
    let elapsed = start.elapsed();
    let count = hits.iter().filter(|&&h| h).count();
    outcome(
        count >= 19 && elapsed < Duration::from_secs(120),
        format!("noise view has maximal CE in {count}/{SEEDS} seeds, {:.1}s", secs(elapsed)),
    )
}

fn weight_ordering(noisy_runs: &[ClusteringResult]) -> Outcome {
    let count = noisy_runs
        .iter()
        .filter(|r| {
            let w = &r.traces[0].weights;
            (0..w.len()).filter(|&i| i != NOISE).all(|i| w[NOISE] < w[i])
        })
        .count();
    outcome(count >= 19, format!("noise weight is the strict minimum after the first update in {count}/{SEEDS} seeds"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_recon: f64 = 0.0;
    let mut worst_combined: f64 = 0.0;
    let instances = 25;
    for _ in 0..instances {
        let d_in = rng.gen_range(2..=6);
        let arch = Architecture {
            hidden: (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(2..=5)).collect(),
            latent_dim: rng.gen_range(1..=3),
        };
        let n = rng.gen_range(4..=10);
        let k = rng.gen_range(2..=4);
        let model = random_model(d_in, &arch, &mut rng);
        let x = gaussian_matrix(n, d_in, &mut rng);
        worst_recon = worst_recon.max(model_gradient_error(&model, &x, None, 0.0));
        let (target, centroids) = random_cluster_setup(&model, &x, k, &mut rng);
        let lambda = rng.gen_range(0.05..2.0);
        let cluster = ClusterTarget { target: &target, centroids: &centroids };
        worst_combined = worst_combined.max(model_gradient_error(&model, &x, Some(cluster), lambda));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_recon <= 1e-4 && worst_combined <= 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{instances} instances: max rel. error {worst_recon:.1e} (reconstruction), {worst_combined:.1e} (combined), {:.2}s",
            secs(elapsed)
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=50);
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        if eval::clustering_accuracy(&pred, &truth).unwrap() != brute_force_accuracy(&pred, &truth) {
            mismatches += 1;
        }
    }
    let a = [0, 1, 2, 2, 1, 0, 3];
    let self_nmi = infometrics::nmi(&a, &a).unwrap();
    let const_nmi = infometrics::nmi(&[0; 7], &a).unwrap();
    let hand = [0, 0, 1, 1];
    let mi = infometrics::mutual_information(&hand, &hand).unwrap();
    let hand_nmi = infometrics::nmi(&hand, &hand).unwrap();
    let pass = mismatches == 0 && self_nmi == 1.0 && const_nmi == 0.0 && (mi - LN_2).abs() < 1e-12 && hand_nmi == 1.0;
    outcome(
        pass,
        format!(
            "Hungarian vs exhaustive: {mismatches}/1000 mismatches; NMI(a,a) = {self_nmi}, NMI(const,a) = {const_nmi}, MI[[2,0],[0,2]] = {mi:.6}, NMI = {hand_nmi}"
        ),
    )
}

fn end_to_end(clean_runs: &[ClusteringResult], elapsed: Duration) -> Outcome {
    let count = clean_runs.iter().filter(|r| acc(r) >= 0.95 && nmi(r) >= 0.90).count();
    let mean_acc = clean_runs.iter().map(acc).sum::<f64>() / clean_runs.len() as f64;
    outcome(
        count >= 18 && elapsed <= Duration::from_secs(600),
        format!(
            "ACC >= 0.95 and NMI >= 0.90 in {count}/{SEEDS} seeds (mean ACC {mean_acc:.3}), {:.1}s",
            secs(elapsed)
        ),
    )
}

fn robustness(
    clean: &[ClusteringResult],
    noisy: &[ClusteringResult],
    base_clean: &[ClusteringResult],
    base_noisy: &[ClusteringResult],
) -> Outcome {
    let n = clean.len() as f64;
    let drops: Vec<f64> = clean.iter().zip(noisy).map(|(c, x)| acc(c) - acc(x)).collect();
    let base_drops: Vec<f64> = base_clean.iter().zip(base_noisy).map(|(c, x)| acc(c) - acc(x)).collect();
    let mean_drop = drops.iter().sum::<f64>() / n;
    let mean_base_drop = base_drops.iter().sum::<f64>() / n;
    let wins = drops.iter().zip(&base_drops).filter(|(d, b)| b > d).count();
    outcome(
        mean_drop <= 0.05 && wins >= 16,
        format!(
            "CE-MVC mean ACC drop {mean_drop:+.4}, shared baseline mean drop {mean_base_drop:+.4}; baseline drop > CE-MVC drop in {wins}/{SEEDS} seeds"
        ),
    )
}

fn ablation(results: &[Vec<(WeightingMode, ClusteringResult)>]) -> Outcome {
    let mean = |mode: WeightingMode| {
        results
            .iter()
            .map(|per_seed| acc(&per_seed.iter().find(|(m, _)| *m == mode).unwrap().1))
            .sum::<f64>()
            / results.len() as f64
    };
    let (a_nmi, a_enmi, a_ce) = (mean(WeightingMode::Nmi), mean(WeightingMode::Enmi), mean(WeightingMode::EnmiCe));
    outcome(
        a_ce >= a_enmi && a_enmi >= a_nmi && a_ce - a_nmi >= 0.01,
        format!("mean ACC nmi {a_nmi:.4}, enmi {a_enmi:.4}, enmi_ce {a_ce:.4} (enmi_ce - nmi = {:+.4})", a_ce - a_nmi),
    )
}

fn decoupling(bench: &Benchmark) -> Outcome {
    let data = bench.noisy(0).unwrap();
    let mut events = Vec::new();
    let observed = pipeline::run_cemvc_observed(&data, &config(0), |e| events.push(e.clone())).unwrap();
    let mut leaks = 0;
    let mut unchanged_self = 0;
    for e in &events {
        for j in 0..e.before.len() {
            if j == e.view {
                unchanged_self += (e.before[j] == e.after[j]) as usize;
            } else {
                leaks += (e.before[j] != e.after[j]) as usize;
            }
        }
    }
    let expected = observed.traces.len() * data.view_count();
    outcome(
        leaks == 0 && unchanged_self == 0 && events.len() == expected,
        format!(
            "{} finetune events over {} rounds: {leaks} foreign checksum changes, {unchanged_self} no-op finetunes",
            events.len(),
            observed.traces.len()
        ),
    )
}

fn determinism(bench: &Benchmark) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = data::save_multiview(&bench.noisy(0).unwrap(), &tmp.path().join("data")).unwrap();
    let runs = tmp.path().join("runs");
    let invoke = || {
        let out = Command::new(env!("CARGO_BIN_EXE_cemvc"))
            .args(["run", "--data", manifest.to_str().unwrap(), "--out", runs.to_str().unwrap(), "--seed", "7"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let dir = String::from_utf8(out.stdout).unwrap();
        std::path::PathBuf::from(dir.trim())
    };
    let (a, b) = (invoke(), invoke());
    let read = |d: &std::path::Path, f: &str| fs::read(d.join(f)).unwrap();
    let same_report = read(&a, "report.json") == read(&b, "report.json");
    let same_embedding = read(&a, "embedding_cemvc.csv") == read(&b, "embedding_cemvc.csv");
    outcome(
        a != b && same_report && same_embedding,
        format!("two cmd_run invocations: report identical = {same_report}, embedding identical = {same_embedding}"),
    )
}

fn report(id: u32, title: &str, o: &Outcome, failures: &mut Vec<u32>) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{verdict}] {title}: {}", o.detail);
    if !o.pass {
        failures.push(id);
    }
}

fn main() {
    let bench = Benchmark::noisy3view();
    let mut failures = Vec::new();
    println!("acceptance: preset {} ({SEEDS} seeds)", bench.name);

    report(1, "entropy oracle", &kde_oracles(), &mut failures);
    report(2, "conditional-entropy ordering", &conditional_entropy_ordering(&bench), &mut failures);

    let ablations: Vec<Vec<(WeightingMode, ClusteringResult)>> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| pipeline::run_ablation(&bench.noisy(seed).unwrap(), &config(seed)).unwrap())
        .collect();
    let noisy: Vec<ClusteringResult> = ablations
        .iter()
        .map(|per_seed| per_seed.iter().find(|(m, _)| *m == WeightingMode::EnmiCe).unwrap().1.clone())
        .collect();
    report(3, "weight ordering", &weight_ordering(&noisy), &mut failures);
    report(4, "gradient correctness", &gradient_checks(), &mut failures);
    report(5, "metric oracles", &metric_oracles(), &mut failures);

    let start = Instant::now();
    let clean: Vec<ClusteringResult> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| pipeline::run_cemvc(&bench.clean(seed).unwrap(), &config(seed)).unwrap())
        .collect();
    report(6, "end-to-end clustering", &end_to_end(&clean, start.elapsed()), &mut failures);

    let baseline: Vec<(ClusteringResult, ClusteringResult)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let cfg = config(seed);
            (
                pipeline::run_shared_baseline(&bench.clean(seed).unwrap(), &cfg).unwrap(),
                pipeline::run_shared_baseline(&bench.noisy(seed).unwrap(), &cfg).unwrap(),
            )
        })
        .collect();
    let (base_clean, base_noisy): (Vec<_>, Vec<_>) = baseline.into_iter().unzip();
    report(7, "noisy-view robustness", &robustness(&clean, &noisy, &base_clean, &base_noisy), &mut failures);
    report(8, "weighting ablation", &ablation(&ablations), &mut failures);
    report(9, "parameter decoupling", &decoupling(&bench), &mut failures);
    report(10, "determinism", &determinism(&bench), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
