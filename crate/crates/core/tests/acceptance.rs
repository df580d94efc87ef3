//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use swoks_core::agent::{Episode, Policy, PolicyBank, PolicyParams};
use swoks_core::eval::optimal_mapping;
use swoks_core::experiment::{greedy_return, run, sweep_beta_offline, ExperimentConfig};
use swoks_core::ot::{sample_unit_directions, sliced_wasserstein, wasserstein_1d, wasserstein_exact, PointSet};
use swoks_core::stats::{detect_shift, ks_critical, ks_pvalue, Sample};
use swoks_core::stream::{read_stream, write_stream, Experience, StreamRecord};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Minimum over all matchings, by enumerating permutations.
fn matching_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn go(i: usize, a: &[f64], b: &[f64], used: &mut [bool], acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, a, b, used, acc + (a[i] - b[j]).powi(2), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, a, b, &mut vec![false; b.len()], 0.0, &mut best);
    best.sqrt()
}

fn a1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=7);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sorted = wasserstein_1d(&a, &b).map_err(|e| e.to_string())?;
        let exact = wasserstein_exact(
            &PointSet::from_scalars(&a).unwrap(),
            &PointSet::from_scalars(&b).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((sorted - exact).abs()).max((sorted - matching_oracle(&a, &b)).abs());
    }
    check(worst <= 1e-9, format!("200 pairs, max |sorted - exact| = {worst:.2e}"))
}

fn sorted_w(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn a2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cloud = |mx: f64, sx: f64, sy: f64| -> Vec<[f64; 2]> {
        (0..64)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                [mx + sx * x, sy * y]
            })
            .collect()
    };
    let p = cloud(0.0, 1.0, 1.0);
    let q = cloud(1.5, 2.0, 0.5);
    let flat = |c: &[[f64; 2]]| PointSet::from_flat(c.iter().flatten().copied().collect(), 2).unwrap();
    let dirs = sample_unit_directions(2, 500, 7).unwrap();
    let mc = sliced_wasserstein(&flat(&p), &flat(&q), &dirs).map_err(|e| e.to_string())?;
    // the 1D distance is even in the direction, so half a turn covers the circle
    let k = 1000;
    let quad = (0..k)
        .map(|i| {
            let th = PI * (i as f64 + 0.5) / k as f64;
            let (c, s) = (th.cos(), th.sin());
            sorted_w(
                p.iter().map(|v| c * v[0] + s * v[1]).collect(),
                q.iter().map(|v| c * v[0] + s * v[1]).collect(),
            )
        })
        .sum::<f64>()
        / k as f64;
    let rel = (mc - quad).abs() / quad;
    check(rel <= 0.02, format!("monte carlo {mc:.5} vs quadrature {quad:.5}, relative error {rel:.4}"))
}

fn a3() -> Outcome {
    let c = ks_critical(125, 125, 0.001).map_err(|e| e.to_string())?;
    check((c - 0.24659).abs() <= 1e-4, format!("ks_critical(125, 125, 0.001) = {c:.6}"))
}

fn a4() -> Outcome {
    let mut worst = 0.0f64;
    for n in [10, 125, 1000] {
        for alpha in [0.05, 0.01, 0.001] {
            let c = ks_critical(n, n, alpha).map_err(|e| e.to_string())?;
            let p = ks_pvalue(c, n, n).map_err(|e| e.to_string())?;
            worst = worst.max((p - alpha / 2.0).abs());
        }
    }
    check(worst <= 1e-9, format!("max |p(critical) - alpha/2| = {worst:.2e}"))
}

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let trials = 1000;
    let mut rejections = 0;
    for _ in 0..trials {
        let mut draw = || Sample::new((0..125).map(|_| rng.sample::<f64, _>(StandardNormal).exp()).collect()).unwrap();
        let (new, old) = (draw(), draw());
        if detect_shift(&new, &old, 0.001, 1.0).map_err(|e| e.to_string())?.rejects(0.001) {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / trials as f64;
    check(rate <= 0.005, format!("{rejections}/{trials} null rejections, rate {rate:.4}"))
}

fn a6() -> Outcome {
    let cfg = ExperimentConfig::preset("desk").map_err(|e| e.to_string())?;
    let high = cfg.env.high_reward;
    let mut good = 0;
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for seed in 1..=5u64 {
        let out = run(&cfg, seed).map_err(|e| e.to_string())?;
        let labels = out.labels.len();
        let acc = out
            .trace
            .aligned_accuracy(Some(cfg.detector.stable_phase))
            .map_err(|e| e.to_string())?;
        notes.push(format!("seed {seed}: {labels} labels, acc {acc:.3}"));
        if labels != 4 {
            continue;
        }
        good += 1;
        if acc < 0.8 {
            failures.push(format!("seed {seed} accuracy {acc:.3} < 0.8"));
        }
        let mask = out.trace.exclusion_mask(cfg.detector.stable_phase);
        let mapping = optimal_mapping(&out.trace.predictions(), &out.trace.ground_truth(), Some(&mask))
            .map_err(|e| e.to_string())?;
        for label in &out.labels {
            let Some(task) = mapping.get(label) else {
                failures.push(format!("seed {seed} label {label} has no aligned task"));
                continue;
            };
            let score = greedy_return(&cfg, &out, *label, *task, 20).map_err(|e| e.to_string())?;
            if score != high {
                failures.push(format!("seed {seed} label {label} greedy return {score} on task {task}"));
            }
        }
    }
    if good < 3 {
        failures.push(format!("only {good}/5 seeds end with 4 labels"));
    }
    let mut detail = notes.join(", ");
    if !failures.is_empty() {
        detail = format!("{detail}; {}", failures.join("; "));
    }
    check(failures.is_empty(), detail)
}

/// Synthetic recording whose latent scale grows by 30% every segment.
fn graded_stream() -> Vec<StreamRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut records = Vec::new();
    let mut t = 0;
    for seg in 0..8 {
        let sigma = 0.3 * 1.3f64.powi(seg);
        for _ in 0..6000 {
            t += 1;
            let phi = (0..8).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            let action = usize::from(rng.random_bool(0.3));
            let reward = if action == 0 { 1.0 } else { -0.1 };
            records.push(StreamRecord {
                t,
                gt_task: seg as u32 + 1,
                reward,
                action,
                phi,
            });
        }
    }
    records
}

fn a7() -> Outcome {
    let mut buf = Vec::new();
    write_stream(&mut buf, &graded_stream()).map_err(|e| e.to_string())?;
    let records = read_stream(buf.as_slice()).map_err(|e| e.to_string())?;
    let mut det = ExperimentConfig::preset("desk").map_err(|e| e.to_string())?.detector;
    det.master_seed = 0;
    let counts = sweep_beta_offline(&records, &det, &[1.0, 1.1, 1.4]).map_err(|e| e.to_string())?;
    let n: Vec<usize> = counts.iter().map(|c| c.1).collect();
    check(
        n[0] >= n[1] && n[1] >= n[2] && n[2] < n[0],
        format!("new-task events for beta 1.0/1.1/1.4: {}/{}/{}", n[0], n[1], n[2]),
    )
}

fn params() -> PolicyParams {
    PolicyParams {
        latent_dim: 4,
        n_actions: 3,
        learning_rate: 0.1,
        baseline_decay: 0.05,
    }
}

fn random_episode(rng: &mut ChaCha8Rng) -> Episode {
    let len = rng.random_range(1..=4);
    (0..len)
        .map(|_| Experience {
            phi: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: rng.random_range(0..3),
            reward: rng.random_range(-1.0..1.0),
        })
        .collect()
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut bank = PolicyBank::new(params(), 50).map_err(|e| e.to_string())?;
    bank.get_or_create(1);
    let mut at_50 = None;
    for it in 1..=130u64 {
        let batch: Vec<Episode> = (0..4).map(|_| random_episode(&mut rng)).collect();
        bank.get_mut(1).unwrap().update(&batch).map_err(|e| e.to_string())?;
        bank.backup_if_due(1).map_err(|e| e.to_string())?;
        if it == 50 {
            at_50 = Some(bank.get(1).unwrap().clone());
        }
    }
    let ckpts = bank.checkpoint_iterations(1).map_err(|e| e.to_string())?;
    let rb = bank.rollback(1).map_err(|e| e.to_string())?;
    let restored = bank.get(1).unwrap();
    check(
        ckpts == vec![50, 100]
            && rb.restored_iteration == Some(50)
            && !rb.warning
            && Some(restored) == at_50.as_ref(),
        format!("checkpoints {ckpts:?}, detection at 130 restored {:?}", rb.restored_iteration),
    )
}

fn a9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mut policy = Policy::zeros(params()).unwrap();
        let w: Vec<f64> = (0..policy.weights().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        policy.set_weights(w.clone()).unwrap();
        let episodes = vec![random_episode(&mut rng)];
        let b = rng.random_range(-0.5..0.5);
        let grad = policy.gradient(&episodes, b).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let mut fd = vec![0.0; w.len()];
        for i in 0..w.len() {
            let mut probe = policy.clone();
            let mut wp = w.clone();
            wp[i] += h;
            probe.set_weights(wp).unwrap();
            let up = probe.surrogate(&episodes, b).unwrap();
            let mut wm = w.clone();
            wm[i] -= h;
            probe.set_weights(wm).unwrap();
            let down = probe.surrogate(&episodes, b).unwrap();
            fd[i] = (up - down) / (2.0 * h);
        }
        let diff = grad.iter().zip(&fd).map(|(g, f)| (g - f).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|f| f * f).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / norm);
    }
    check(worst <= 1e-4, format!("50 episodes, max relative error {worst:.2e}"))
}

fn a10() -> Outcome {
    let cfg = ExperimentConfig::preset("desk").map_err(|e| e.to_string())?;
    let a = run(&cfg, 11).map_err(|e| e.to_string())?;
    let b = run(&cfg, 11).map_err(|e| e.to_string())?;
    let same_trace = a.trace_csv().unwrap() == b.trace_csv().unwrap();
    let same_events = a.events_json().unwrap() == b.events_json().unwrap();
    check(
        same_trace && same_events,
        format!("trace identical: {same_trace}, events identical: {same_events}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("A1 OT oracle equivalence", a1),
        ("A2 SWD quadrature check", a2),
        ("A3 KS critical value", a3),
        ("A4 p-value consistency", a4),
        ("A5 null calibration", a5),
        ("A6 end-to-end desk run", a6),
        ("A7 beta monotonicity", a7),
        ("A8 rollback protocol", a8),
        ("A9 gradient check", a9),
        ("A10 determinism", a10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
