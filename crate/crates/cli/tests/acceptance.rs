//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines show up under a plain
//! `cargo test`. Exits non-zero if any gating criterion fails.

#[path = "../../core/tests/common/golden.rs"]
mod golden;
#[path = "../../core/tests/common/oracles.rs"]
mod oracles;
#[path = "../../core/tests/common/scenarios.rs"]
mod scenarios;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use labelclust_core::exec::Execution;
use labelclust_core::llm::MockScript;
use labelclust_core::metrics::{
    accuracy_hungarian, ari_shuffle_null, build_contingency, score_partitions, Scores,
};
use labelclust_core::runner::{run_full, RunDir, RunOptions, REPORT_FILE};
use labelclust_core::{BackendKind, Dataset, RunConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hungarian_oracle() -> Check {
    let start = Instant::now();
    let cases = oracles::instances(2024, 240, 40, 7);
    let unequal_k = cases
        .iter()
        .filter(|(g, p)| {
            let k = |v: &[usize]| v.iter().collect::<std::collections::BTreeSet<_>>().len();
            k(g) != k(p)
        })
        .count();
    for (g, p) in &cases {
        let fast = accuracy_hungarian(&build_contingency(g, p).unwrap());
        let slow = oracles::brute_force_accuracy(g, p);
        ensure(fast == slow, || {
            format!("{fast} != {slow} on gold {g:?} pred {p:?}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(unequal_k > 0, || "no instance had K != K'".into())?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} instances, {unequal_k} with K != K', {elapsed:.2?}",
        cases.len()
    ))
}

fn metric_definitions() -> Check {
    for (g, _) in oracles::instances(7, 50, 60, 8) {
        let s = score_partitions(&g, &g).unwrap();
        ensure(
            s == Scores {
                acc: 1.0,
                nmi: 1.0,
                ari: 1.0,
            },
            || format!("identical partition scored {s:?}"),
        )?;
    }
    let s = score_partitions(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
    ensure(s.nmi.abs() < 1e-12 && (s.ari + 0.5).abs() < 1e-12, || {
        format!("2x2 independent case scored {s:?}")
    })?;
    let cases = oracles::instances(8, 150, 80, 9);
    for (g, p) in &cases {
        let t = build_contingency(g, p).unwrap();
        let (n, a) = (
            labelclust_core::metrics::nmi(&t),
            labelclust_core::metrics::ari(&t),
        );
        let (on, oa) = (oracles::direct_nmi(g, p), oracles::pair_counting_ari(g, p));
        ensure((n - on).abs() < 1e-12, || format!("NMI {n} vs oracle {on}"))?;
        ensure((a - oa).abs() < 1e-12, || format!("ARI {a} vs oracle {oa}"))?;
    }
    Ok(format!(
        "exact 1.0 on identical partitions, 2x2 gives NMI 0 / ARI -0.5, {} oracle instances",
        cases.len()
    ))
}

fn chance_correction() -> Check {
    let gold: Vec<usize> = (0..100).map(|i| i % 5).collect();
    let pred: Vec<usize> = (0..100).map(|i| (i / 20 + i % 3) % 5).collect();
    let null =
        ari_shuffle_null(&gold, &pred, 1000, 11, Execution::Parallel).map_err(|e| e.to_string())?;
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    ensure(mean.abs() <= 0.02, || format!("mean ARI {mean}"))?;
    Ok(format!("mean ARI {mean:+.5} over 1000 shuffles"))
}

fn relabel_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cases = oracles::instances(5, 50, 60, 7);
    for (g, p) in &cases {
        let base = score_partitions(g, p).unwrap();
        let permute = |v: &[usize], rng: &mut ChaCha8Rng| {
            let mut ids: Vec<usize> = (0..=*v.iter().max().unwrap()).collect();
            ids.shuffle(rng);
            v.iter().map(|&x| ids[x]).collect::<Vec<_>>()
        };
        let pp = permute(p, &mut rng);
        let gp = permute(g, &mut rng);
        for moved in [
            score_partitions(g, &pp).unwrap(),
            score_partitions(&gp, p).unwrap(),
        ] {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            ensure(
                close(base.acc, moved.acc)
                    && close(base.nmi, moved.nmi)
                    && close(base.ari, moved.ari),
                || format!("{base:?} vs {moved:?} on {g:?} / {p:?}"),
            )?;
        }
    }
    Ok(format!(
        "{} instances, predicted and gold ids permuted separately",
        cases.len()
    ))
}

fn run_in(
    dir: &Path,
    ds: &Dataset,
    config: &RunConfig,
    script: Option<MockScript>,
    resume: bool,
) -> Result<labelclust_core::runner::RunOutcome, String> {
    let options = RunOptions {
        mock_script: script,
        resume,
        ..RunOptions::default()
    };
    run_full(ds, config, &RunDir::new(dir), &options).map_err(|e| e.to_string())
}

fn oracle_run() -> Check {
    let ds = scenarios::fixture();
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run_in(tmp.path(), &ds, &scenarios::config(), None, false)?;
    let elapsed = start.elapsed();
    let r = out.report.ok_or("no report")?;
    ensure(r.acc == 1.0 && r.nmi == 1.0 && r.ari == 1.0, || {
        format!("scores {r:?}")
    })?;
    ensure(r.k_pred == 6 && r.unmatched_count == 0, || {
        format!("K'={} unmatched={}", r.k_pred, r.unmatched_count)
    })?;
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("ACC=NMI=ARI=1, K'=6, 0 unmatched, {elapsed:.2?}"))
}

fn noise_run() -> Check {
    let ds = scenarios::fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &ds,
        &scenarios::config(),
        Some(scenarios::noisy_script(&ds)),
        false,
    )?;
    let r = out.report.ok_or("no report")?;
    ensure(r.acc == 0.9, || format!("ACC {}", r.acc))?;
    Ok(format!(
        "ACC {} with 6 of 60 scripted into wrong clusters",
        r.acc
    ))
}

fn merge_bookkeeping() -> Check {
    let ds = scenarios::fixture();
    let config = RunConfig {
        example_fraction: 0.0,
        ..scenarios::config()
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &ds,
        &config,
        Some(scenarios::synonym_script(&ds)),
        false,
    )?;
    let s = &out.result.stats;
    let r = out.report.ok_or("no report")?;
    ensure(s.raw_label_count == 8, || {
        format!("{} raw labels", s.raw_label_count)
    })?;
    ensure(r.k_pred == 6 && r.granularity_diff == 0, || {
        format!("K'={} diff={}", r.k_pred, r.granularity_diff)
    })?;

    let garbage = MockScript {
        merge_response: Some(
            "Sure! Here are the merged labels: weather, alarms, and music.".into(),
        ),
        ..scenarios::synonym_script(&ds)
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &ds, &config, Some(garbage), false)?;
    let raw = out.result.generation.unique_labels.clone();
    ensure(out.result.stats.merge_fallback, || {
        "fallback not reported".into()
    })?;
    ensure(out.result.label_set.labels() == raw.as_slice(), || {
        "fallback output differs from input".into()
    })?;
    Ok("8 raw labels -> K'=6, diff 0; unparseable merge keeps the 8 inputs".into())
}

fn call_accounting() -> Check {
    let ds = scenarios::fixture();
    let tmp = tempfile::tempdir().unwrap();
    let cold = run_in(tmp.path(), &ds, &scenarios::config(), None, false)?;
    let s = &cold.result.stats;
    let expected_batches = ds.len().div_ceil(15) as u64;
    ensure(s.generation_calls == expected_batches, || {
        format!("{} generation calls", s.generation_calls)
    })?;
    ensure(s.classification_calls >= ds.len() as u64, || {
        format!("{} classification calls", s.classification_calls)
    })?;
    let report = std::fs::read(tmp.path().join(REPORT_FILE)).map_err(|e| e.to_string())?;
    let warm = run_in(tmp.path(), &ds, &scenarios::config(), None, true)?;
    ensure(warm.result.stats.backend_calls == 0, || {
        format!("warm run made {} calls", warm.result.stats.backend_calls)
    })?;
    let again = std::fs::read(tmp.path().join(REPORT_FILE)).map_err(|e| e.to_string())?;
    ensure(report == again, || "report changed on warm re-run".into())?;
    Ok(format!(
        "cold: {} generation / {} classification calls; warm: 0 backend calls, identical report",
        s.generation_calls, s.classification_calls
    ))
}

fn prompt_fidelity() -> Check {
    let bad = golden::mismatches();
    ensure(bad.is_empty(), || format!("mismatched: {bad:?}"))?;
    Ok(format!(
        "{} golden prompts byte-exact",
        golden::rendered_cases().len()
    ))
}

fn sweep(axis: &str, values: &str) -> Result<usize, String> {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sweep");
    let out = Command::new(env!("CARGO_BIN_EXE_labelclust"))
        .args(["sweep", "--dataset"])
        .arg(scenarios::fixture_path())
        .args(["--axis", axis, "--values", values, "--run-dir"])
        .arg(&dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let mut reader = csv::Reader::from_path(dir.join("sweep.csv")).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    for col in ["axis", "value", "acc", "nmi", "ari", "k_pred", "error"] {
        ensure(headers.iter().any(|h| h == col), || {
            format!("missing column {col}")
        })?;
    }
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let wanted: Vec<&str> = values.split(',').collect();
    ensure(rows.len() == wanted.len(), || {
        format!("{} rows for {} values", rows.len(), wanted.len())
    })?;
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for (row, value) in rows.iter().zip(&wanted) {
        ensure(row[col("error")].is_empty(), || {
            format!("{value}: {}", &row[col("error")])
        })?;
        ensure(
            row[col("value")].parse::<f64>().ok() == value.parse::<f64>().ok(),
            || format!("row value {}", &row[col("value")]),
        )?;
        row[col("acc")]
            .parse::<f64>()
            .map_err(|e| format!("acc for {value}: {e}"))?;
    }
    Ok(rows.len())
}

fn sweep_outputs() -> Check {
    let b = sweep("batch_size", "10,15,20")?;
    let f = sweep("example_fraction", "0.10,0.15,0.20,0.25")?;
    Ok(format!(
        "batch-size CSV with {b} rows, fraction CSV with {f} rows"
    ))
}

/// Only runs with LABELCLUST_LIVE=1; never gates the suite.
fn live_smoke() -> Option<Check> {
    if std::env::var("LABELCLUST_LIVE").ok().as_deref() != Some("1") {
        return None;
    }
    let full = scenarios::fixture();
    let rows = full.documents()[..12]
        .iter()
        .map(|d| (d.text.clone(), d.gold_label.clone()));
    let ds = Dataset::from_rows("live", rows).unwrap();
    let mut config = RunConfig {
        backend: BackendKind::Http,
        batch_size: 6,
        ..RunConfig::default()
    };
    if let Ok(url) = std::env::var("LABELCLUST_LIVE_BASE_URL") {
        config.base_url = url;
    }
    if let Ok(model) = std::env::var("LABELCLUST_LIVE_MODEL") {
        config.model_name = model;
    }
    let tmp = tempfile::tempdir().unwrap();
    Some(
        run_in(tmp.path(), &ds, &config, None, false).and_then(|out| {
            let r = out.report.ok_or("no report")?;
            ensure(
                (0.0..=1.0).contains(&r.acc) && (0.0..=1.0).contains(&r.nmi) && r.ari <= 1.0,
                || format!("{r:?}"),
            )?;
            Ok(format!(
                "ACC {:.3} NMI {:.3} ARI {:.3} K'={}",
                r.acc, r.nmi, r.ari, r.k_pred
            ))
        }),
    )
}

fn main() {
    let checks: [Criterion; 10] = [
        ("hungarian oracle equivalence", hungarian_oracle),
        ("metric definitional checks", metric_definitions),
        ("chance correction", chance_correction),
        ("relabeling invariance", relabel_invariance),
        ("end-to-end oracle run", oracle_run),
        ("controlled-noise run", noise_run),
        ("merge granularity bookkeeping", merge_bookkeeping),
        ("call accounting", call_accounting),
        ("prompt fidelity", prompt_fidelity),
        ("sweep outputs", sweep_outputs),
    ];
    let mut failed = 0;
    match live_smoke() {
        None => println!("SKIP live-backend smoke run: set LABELCLUST_LIVE=1 to enable (non-gating; published scores are not reproducible offline)"),
        Some(Ok(detail)) => println!("PASS live-backend smoke run: {detail} (non-gating)"),
        Some(Err(why)) => println!("FAIL live-backend smoke run: {why} (non-gating)"),
    }
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
