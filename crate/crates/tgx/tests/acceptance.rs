//! Acceptance suite. Every test prints one `PASS` or `FAIL` line to stderr
//! (uncaptured) and fails when its criterion is not met.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tgx::commands::read_metrics;
use tgx::config::ExperimentConfig;
use tgx::{pipeline, Run};
use tgx_core::autodiff::gradient_check;
use tgx_core::data::{self, TemporalGraph};
use tgx_core::dmd::DmdFit;
use tgx_core::metrics;
use tgx_core::model::{self, forward, loss_terms, Architecture, GcrnParams, ModelConfig, ParamVars};
use tgx_core::sindy::{self, Library, StlsqConfig, Term, THRESHOLD_GRID};

fn verdict(criterion: u8, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {criterion} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn acceptance_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml")
}

fn toy_graph(rng: &mut ChaCha8Rng) -> TemporalGraph {
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let edges = (0..4)
        .map(|_| pairs.iter().copied().filter(|_| rng.random_bool(0.6)).collect())
        .collect();
    let mut infected = [1u8, 0, 0];
    let features = (0..4)
        .map(|_| {
            let row = infected.to_vec();
            for x in infected.iter_mut() {
                if rng.random_bool(0.4) {
                    *x = 1;
                }
            }
            row
        })
        .collect();
    TemporalGraph {
        id: "toy".into(),
        num_nodes: 3,
        edges,
        features,
        label: u8::from(rng.random_bool(0.5)),
    }
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let arch = Architecture {
        input_dim: 1,
        hidden: 3,
        layers: 2,
        mlp_layers: 2,
    };
    let worst = std::cell::Cell::new(0.0f64);
    let mut runner = TestRunner::new(RunnerConfig {
        cases: 12,
        ..RunnerConfig::default()
    });
    let outcome = runner.run(&(any::<u64>(), 0.0f64..1.0), |(seed, beta)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tg = toy_graph(&mut rng);
        let params = GcrnParams::init(arch, seed);
        let cfg = ModelConfig {
            hidden: 3,
            layers: 2,
            mlp_layers: 2,
            beta,
            koopman_decay: 1e-2,
            ..ModelConfig::default()
        };
        let report = gradient_check(&params.to_tensors(), 1e-5, |tape, vars| {
            let bound = ParamVars::from_flat(vars, arch)?;
            let fwd = forward(tape, &bound, &tg)?;
            Ok(loss_terms(tape, &bound, &fwd, tg.label, &cfg)?.total)
        })
        .unwrap();
        worst.set(worst.get().max(report.max_relative_error));
        prop_assert!(report.max_relative_error < 1e-4, "{report:?}");
        Ok(())
    });
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient check",
        outcome.is_ok() && elapsed < Duration::from_secs(10),
        &format!("max relative error {:.2e} over 12 toy graphs, {:.2}s", worst.get(), elapsed.as_secs_f64()),
    );
}

fn rotation(theta: f64, v: [f64; 2]) -> [f64; 2] {
    [theta.cos() * v[0] - theta.sin() * v[1], theta.sin() * v[0] + theta.cos() * v[1]]
}

#[test]
fn criterion_2_dmd_recovers_linear_maps() {
    let start = Instant::now();
    let f = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let raw: Vec<Vec<f64>> = (0..f).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let fro = raw.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    // Frobenius norm 0.9 bounds the spectral radius below 1.
    let a: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| 0.9 * x / fro).collect()).collect();
    let trajectories: Vec<Vec<Vec<f64>>> = (0..10)
        .map(|_| {
            let mut x: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut traj = Vec::with_capacity(20);
            for _ in 0..20 {
                traj.push(x.clone());
                x = a.iter().map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
            }
            traj
        })
        .collect();
    let fit = DmdFit::fit_global(&trajectories, 1e-10).unwrap();
    let c = fit.operator_matrix();
    let err: f64 = (0..f)
        .flat_map(|r| (0..f).map(move |k| (r, k)))
        .map(|(r, k)| (c[(r, k)] - a[r][k]).powi(2))
        .sum::<f64>()
        .sqrt();
    let rel = err / 0.9;

    let angles = [0.3, 0.7, 1.1, 2.0];
    let nodes: Vec<Vec<Vec<f64>>> = (0..6)
        .map(|_| {
            let mut x: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut traj = Vec::with_capacity(30);
            for _ in 0..30 {
                traj.push(x.clone());
                x = angles
                    .iter()
                    .enumerate()
                    .flat_map(|(b, &th)| rotation(th, [x[2 * b], x[2 * b + 1]]))
                    .collect();
            }
            traj
        })
        .collect();
    let rot = DmdFit::fit_nodes(&nodes, 1e-10).unwrap();
    let unit = rot.eigenvalues.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        2,
        "DMD exactness",
        rel < 1e-6 && unit < 1e-8 && elapsed < Duration::from_secs(5),
        &format!(
            "relative operator error {rel:.2e} from 200 snapshots, rotation |lambda| - 1 up to {unit:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_3_sindy_recovers_sparse_neighbor_dynamics() {
    let start = Instant::now();
    let (steps, f) = (40, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 1e-4).unwrap();
    let mut traj: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| (0..steps).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    for t in 0..steps - 1 {
        for d in 0..f {
            let (h0, h1, h2) = (traj[0][t][d], traj[1][t][d], traj[2][t][d]);
            traj[0][t + 1][d] = 0.8 * h0 * h1 - 0.6 * h0 * h0 * h2 + noise.sample(&mut rng);
        }
    }
    let library = Library::new(0, &[1, 2, 3], 3).unwrap();
    let theta = library.design(&traj).unwrap();
    let y = sindy::targets(&traj[0]);
    let recovered: Vec<f64> = THRESHOLD_GRID
        .iter()
        .copied()
        .filter(|&eta| {
            let cfg = StlsqConfig {
                threshold: eta,
                ..StlsqConfig::default()
            };
            let r = sindy::stlsq(&theta, &y, &cfg).unwrap();
            library.terms.iter().zip(&r.coefficients).all(|(term, xi)| match term {
                Term::Cross(1) => (xi - 0.8).abs() < 1e-3,
                Term::CrossB(2) => (xi + 0.6).abs() < 1e-3,
                _ => *xi == 0.0,
            })
        })
        .collect();
    let elapsed = start.elapsed();
    verdict(
        3,
        "SINDy recovery",
        !recovered.is_empty() && elapsed < Duration::from_secs(30),
        &format!("exact support and coefficients at eta in {recovered:?}, {:.2}s", elapsed.as_secs_f64()),
    );
}

fn brute_force_auc(w: &[f64], mask: &[bool]) -> f64 {
    let mut score = 0.0;
    let mut pairs = 0usize;
    for (i, &p) in mask.iter().enumerate() {
        for (j, &q) in mask.iter().enumerate() {
            if p && !q {
                pairs += 1;
                score += if w[i] > w[j] {
                    1.0
                } else if w[i] == w[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    score / pairs as f64
}

#[test]
fn criterion_4_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut auc_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(4..40);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        mask[0] = true;
        mask[1] = false;
        // Coarse values so ties occur.
        let w: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8)) / 5.0).collect();
        let got = metrics::auc(&w, &mask).unwrap();
        auc_err = auc_err.max((got - brute_force_auc(&w, &mask)).abs());
    }

    let mut mw_gap = 0.0f64;
    for shift in [0.0, 0.3, 0.8, 1.5] {
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0) + shift).collect();
        let exact = metrics::mann_whitney_exact(&a, &b).unwrap().p;
        let normal = metrics::mann_whitney_normal(&a, &b).unwrap().p;
        mw_gap = mw_gap.max((exact - normal).abs());
    }

    // 3 nodes, 2 steps: ((0.5-1)^2 + 0 + (1-0)^2) / 3 and (0 + (0.25-1)^2 + 0) / 3.
    let brier = metrics::brier(&[vec![0.5, 0.0, 1.0], vec![0.0, 0.25, 1.0]], &[vec![1, 0, 0], vec![0, 1, 1]]).unwrap();
    let brier_ok = brier == vec![1.25 / 3.0, 0.5625 / 3.0];

    // tp 3, fp 1, fn 1.
    let truth = [false, true, true, false, false, true, true, false, false, false];
    let pred = [false, true, true, true, false, true, false, false, false, false];
    let f1_ok = metrics::f1(&pred, &truth) == 6.0 / 8.0;
    let baseline_ok = (metrics::f1_baseline(&truth) - 8.0 / 14.0).abs() < 1e-15;

    verdict(
        4,
        "metric oracles",
        auc_err <= 1e-12 && mw_gap < 0.02 && brier_ok && f1_ok && baseline_ok,
        &format!(
            "AUC vs pair counting max gap {auc_err:.1e} on 100 fixtures, MW exact vs normal at n=8 max gap {mw_gap:.4}, Brier {}, F1 {}",
            if brier_ok { "exact" } else { "mismatch" },
            if f1_ok && baseline_ok { "exact" } else { "mismatch" }
        ),
    );
}

fn run_stage(stage: &str, dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_tgx"))
        .args([stage, "--config"])
        .arg(acceptance_config())
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("tgx runs");
    assert!(
        out.status.success(),
        "tgx {stage}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn full_run(dir: &Path) -> Duration {
    let start = Instant::now();
    for stage in ["generate", "train", "explain", "evaluate"] {
        run_stage(stage, dir);
    }
    start.elapsed()
}

#[test]
fn criteria_5_and_7_end_to_end_and_determinism() {
    let first = tempfile::tempdir().unwrap();
    let elapsed = full_run(first.path());
    let run = Run::load(&acceptance_config(), None, first.path()).unwrap();
    let rows = read_metrics(&run.path(tgx::artifacts::METRICS), &run.hashes.evaluate).unwrap();
    let get = |name: &str| rows.iter().find(|r| r.metric == name).map(|r| r.mean).unwrap();
    let (acc, mw, f1w, f1b) = (get("accuracy"), get("mw_p"), get("f1_window"), get("f1_baseline"));
    let (e2, e3, node, tg) = (get("auc_edge2"), get("auc_edge3"), get("auc_node"), get("auc_tg"));
    let checks = [
        ("accuracy >= 0.90", acc >= 0.90),
        ("pooled MW p < 0.01", mw < 0.01),
        ("F1 window >= baseline + 0.2", f1w >= f1b + 0.2),
        ("AUC_edge3 >= 0.70", e3 >= 0.70),
        ("AUC_edge3 >= AUC_edge2 - 0.05", e3 >= e2 - 0.05),
        ("AUC_node >= 0.60", node >= 0.60),
        ("runtime <= 30 min", elapsed <= Duration::from_secs(30 * 60)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "accuracy {acc:.3}, MW p {mw:.2e}, F1 window {f1w:.3} vs baseline {f1b:.3}, AUC_edge2 {e2:.3}, AUC_edge3 {e3:.3}, AUC_TG {tg:.3}, AUC_node {node:.3}, {:.0}s{}",
        elapsed.as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    let pass5 = failed.is_empty();

    let second = tempfile::tempdir().unwrap();
    full_run(second.path());
    let a = std::fs::read(first.path().join(tgx::artifacts::METRICS)).unwrap();
    let b = std::fs::read(second.path().join(tgx::artifacts::METRICS)).unwrap();
    let pass7 = a == b;

    let line5 = std::panic::catch_unwind(|| verdict(5, "end-to-end desk-scale run", pass5, &detail));
    verdict(
        7,
        "determinism",
        pass7,
        &format!("metrics CSV of a full rerun is {} ({} bytes)", if pass7 { "byte-identical" } else { "different" }, a.len()),
    );
    if let Err(e) = line5 {
        std::panic::resume_unwind(e);
    }
}

#[test]
fn criterion_6_koopman_regularizer_lowers_linearity_residual() {
    let base = ExperimentConfig::load(&acceptance_config()).unwrap().resolve(None).unwrap();
    let graphs: Vec<TemporalGraph> = data::generate_dataset(&base.generator)
        .unwrap()
        .into_iter()
        .map(|r| r.graph)
        .collect();
    let residual = |beta: f64, seed: u64| {
        let cfg = ModelConfig {
            beta,
            seed,
            ..base.model.clone()
        };
        let outcome = model::train(&graphs, &cfg).unwrap();
        let embeddings = pipeline::encode_all(&graphs, &outcome.params).unwrap();
        pipeline::linearity_residual(&embeddings, &outcome.train_indices).unwrap()
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let (plain, regularized) = (residual(0.0, seed), residual(0.5, seed));
        wins += usize::from(regularized < plain);
        parts.push(format!("seed {seed}: {regularized:.3e} vs {plain:.3e}"));
    }
    verdict(
        6,
        "regularizer effect",
        wins >= 2,
        &format!("beta=0.5 residual below beta=0 in {wins} of 3 seeds ({})", parts.join("; ")),
    );
}
