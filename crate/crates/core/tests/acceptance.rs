//! Acceptance checks. Runs as a plain binary (`harness = false`) so every
//! check prints one line whatever the outcome; exits non-zero if any fails.
//!
//!     cargo test -p dfl-trust-core --test acceptance

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dfl_trust_core::aggregation::{aggregate, AggregatorSpec};
use dfl_trust_core::attacks::{tom_objective_eval, AttackKind, Surface};
use dfl_trust_core::hsic::{hsic, threshold, Bandwidth, KernelSpec};
use dfl_trust_core::io::{read_rounds_csv, write_rounds_csv};
use dfl_trust_core::learning::{
    init_params, loss_and_grad, make_federated_data, DataSpec, GradEval, ModelSpec, Objective,
};
use dfl_trust_core::ledger::NodeId;
use dfl_trust_core::simulator::{attack_rejection_rate, rep_seed, run, sweep, Mode, RunConfig, SweepRow};
use dfl_trust_core::{HsicWindow, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BASE_SEED: u64 = 42;
const REPS: u32 = 5;

struct Check {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

// ---------------------------------------------------------------- oracles

type Matrix = Vec<Vec<f64>>;

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn gram(x: &[f64], k: &dyn Fn(f64, f64) -> f64) -> Matrix {
    x.iter().map(|&xi| x.iter().map(|&xj| k(xi, xj)).collect()).collect()
}

/// tr(K H L H) / (n-1)^2 with every matrix built out.
fn hsic_by_definition(a: &[f64], b: &[f64], k: &dyn Fn(f64, f64) -> f64) -> f64 {
    let n = a.len();
    let h: Matrix = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - 1.0 / n as f64).collect())
        .collect();
    let m = matmul(&matmul(&matmul(&gram(a, k), &h), &gram(b, k)), &h);
    let trace: f64 = (0..n).map(|i| m[i][i]).sum();
    (trace / ((n - 1) * (n - 1)) as f64).max(0.0)
}

fn median_abs_pair_diff(xs: &[f64]) -> f64 {
    let mut d = Vec::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            d.push((xs[i] - xs[j]).abs());
        }
    }
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn rbf(h: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| (-(x - y) * (x - y) / (2.0 * h * h)).exp()
}

fn sort_trim_mean(updates: &[Vec<f64>], beta: f64) -> Vec<f64> {
    let r = updates.len();
    let k = (beta * r as f64).floor() as usize;
    (0..updates[0].len())
        .map(|j| {
            let mut col: Vec<f64> = updates.iter().map(|u| u[j]).collect();
            col.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let kept = &col[k..r - k];
            let mut s = 0.0;
            for v in kept {
                s += v;
            }
            s / kept.len() as f64
        })
        .collect()
}

struct HalfSquare(usize);

impl Objective for HalfSquare {
    fn dim(&self) -> usize {
        self.0
    }

    fn loss_and_grad(&self, theta: &[f64]) -> GradEval {
        GradEval {
            loss: 0.5 * theta.iter().map(|v| v * v).sum::<f64>(),
            grad: ParamVector::from_vec_unchecked(theta.to_vec()),
        }
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn rows_mean(rows: &[SweepRow], mode: Mode, field: fn(&SweepRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter(|r| r.mode == mode).map(field).collect::<Option<_>>()?;
    (vals.len() == REPS as usize).then(|| mean(vals))
}

// ---------------------------------------------------------------- checks

fn hsic_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(3..=16);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();

        let lin = hsic(&a, &b, &KernelSpec::Linear, 4096).unwrap();
        worst = worst.max((lin - hsic_by_definition(&a, &b, &|x, y| x * y)).abs());
        let (ma, mb) = (mean(a.iter().copied()), mean(b.iter().copied()));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        worst = worst.max((lin - dot * dot / ((n - 1) * (n - 1)) as f64).abs());

        let h = if case % 2 == 0 {
            rng.random_range(0.2..3.0)
        } else {
            let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
            median_abs_pair_diff(&pooled)
        };
        let kernel = KernelSpec::Rbf {
            bandwidth: if case % 2 == 0 { Bandwidth::Fixed(h) } else { Bandwidth::Auto },
        };
        let got = hsic(&a, &b, &kernel, 4096).unwrap();
        worst = worst.max((got - hsic_by_definition(&a, &b, &rbf(h))).abs());
    }
    let elapsed = start.elapsed();
    Check {
        id: 1,
        name: "hsic matches the explicit Gram-matrix definition",
        pass: worst <= 1e-9 && elapsed < Duration::from_secs(5),
        detail: format!("max abs err {worst:.2e}, {:.2?}", elapsed),
    }
}

fn trimmed_mean_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let r = rng.random_range(1..=25);
        let d = rng.random_range(1..=12);
        let beta = if case < 10 { 0.0 } else { rng.random_range(0.0..0.5) };
        let updates: Vec<Vec<f64>> = (0..r).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let got = aggregate(&updates, &AggregatorSpec::trimmed_mean(beta)).unwrap();
        let want = sort_trim_mean(&updates, beta);
        for j in 0..d {
            worst = worst.max((got[j] - want[j]).abs());
        }
        if beta == 0.0 {
            for j in 0..d {
                let m = updates.iter().map(|u| u[j]).sum::<f64>() / r as f64;
                worst = worst.max((got[j] - m).abs());
            }
        }
    }
    Check {
        id: 2,
        name: "trimmed mean matches sort-trim-average",
        pass: worst <= 1e-12,
        detail: format!("max abs err {worst:.2e}"),
    }
}

fn threshold_arithmetic() -> Check {
    let w = HsicWindow::from_values(15, [0.5, 0.6, 0.7]);
    let half = threshold(&w, 0.5).unwrap();
    let zero = threshold(&w, 0.0).unwrap();
    let want = 0.5 - 0.5 * (0.02f64 / 3.0).sqrt();
    Check {
        id: 3,
        name: "threshold arithmetic",
        pass: (half - want).abs() < 1e-12 && (half - 0.459175).abs() < 1e-6 && zero == 0.5,
        detail: format!("tau(0.5) = {half:.9}, tau(0) = {zero}"),
    }
}

fn gradient_check() -> Check {
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let spec = ModelSpec {
            input_dim: 2 + (case % 4) as usize,
            hidden_dim: 3 + (case % 3) as usize,
            classes: 2 + (case % 3) as usize,
            ..ModelSpec::default()
        };
        let data = make_federated_data(
            case,
            &DataSpec {
                clients: 1,
                samples_per_client: 6,
                test_size: 1,
                input_dim: spec.input_dim,
                classes: spec.classes,
                ..DataSpec::default()
            },
        )
        .unwrap();
        let batch = &data.shards[0];
        let theta = init_params(&spec, 100 + case);
        let analytic = loss_and_grad(&theta, batch, &spec).grad;
        let step = 1e-5;
        let mut diff = 0.0;
        let mut norm = 0.0f64;
        for i in 0..theta.dim() {
            let mut up = theta.clone();
            up.as_mut_slice()[i] += step;
            let mut down = theta.clone();
            down.as_mut_slice()[i] -= step;
            let fd = (loss_and_grad(&up, batch, &spec).loss - loss_and_grad(&down, batch, &spec).loss) / (2.0 * step);
            diff += (analytic[i] - fd).powi(2);
            norm += analytic[i].powi(2).max(fd * fd);
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-12));
    }

    let theta = [0.3, -1.2, 2.0, 0.05];
    let mut stub_err = 0.0f64;
    for zeta in [0.0, 0.1, 0.5, 1.0] {
        let g = tom_objective_eval(&HalfSquare(theta.len()), &theta, zeta);
        for i in 0..theta.len() {
            stub_err = stub_err.max((g.grad[i] - (1.0 + 8.0 * zeta) * theta[i]).abs());
        }
    }
    Check {
        id: 4,
        name: "analytic gradients and the objective-attack stub",
        pass: worst <= 1e-5 && stub_err <= 1e-9,
        detail: format!("worst relative err {worst:.2e}, stub err {stub_err:.2e}"),
    }
}

fn csv_bytes(records: &[dfl_trust_core::simulator::RoundRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rounds_csv(records, &mut buf).unwrap();
    buf
}

fn determinism() -> Check {
    let cfg = RunConfig::default();
    let t0 = Instant::now();
    let a = run(&cfg).unwrap();
    let first = t0.elapsed();
    let b = run(&cfg).unwrap();
    let same_csv = csv_bytes(&a.records) == csv_bytes(&b.records);
    let same_tip = a.chain.tip_digest() == b.chain.tip_digest();
    Check {
        id: 5,
        name: "default audited run is reproducible",
        pass: same_csv && same_tip && first < Duration::from_secs(300),
        detail: format!("rounds.csv identical: {same_csv}, tip identical: {same_tip}, one run {first:.2?}"),
    }
}

fn sign_flip_base() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = BASE_SEED;
    cfg.attack.surface = Surface::AggregatorSide;
    cfg
}

fn ordering(rows: &[SweepRow]) -> Check {
    let acc = |m| rows_mean(rows, m, |r| r.mean_accuracy);
    let (b, t, u) = (acc(Mode::Benign), acc(Mode::Audited), acc(Mode::Unprotected));
    let (pass, detail) = match (b, t, u) {
        (Some(b), Some(t), Some(u)) => (
            b >= t && t >= u && b - t <= 0.05 && b - u >= 0.10,
            format!("mean accuracy benign {b:.4}, audited {t:.4}, unprotected {u:.4}"),
        ),
        _ => (false, "a run failed".to_string()),
    };
    Check {
        id: 6,
        name: "accuracy ordering under aggregator-side sign flipping",
        pass,
        detail,
    }
}

fn audit_potency() -> Check {
    let mut audited = 0usize;
    let mut rejected = 0usize;
    let mut failed = None;
    for std in [1.0, 2.0] {
        for rep in 0..3 {
            let mut cfg = RunConfig::default();
            cfg.seed = rep_seed(BASE_SEED, rep);
            cfg.attack.kind = AttackKind::GradManip;
            cfg.attack.noise_std = std;
            cfg.attack.surface = Surface::AggregatorSide;
            // enough Byzantine miners that selection alone cannot avoid them
            cfg.attack.byzantine_ratio = 0.5;
            match run(&cfg) {
                Ok(out) => {
                    let n = out
                        .records
                        .iter()
                        .flat_map(|r| &r.attempts)
                        .filter(|a| a.poisoned && a.verdict.is_some() && !a.forced)
                        .count();
                    if let Some(rate) = attack_rejection_rate(&out.records) {
                        audited += n;
                        rejected += (rate * n as f64).round() as usize;
                    }
                }
                Err(e) => failed = Some(e.to_string()),
            }
        }
    }
    let rate = rejected as f64 / audited.max(1) as f64;
    Check {
        id: 7,
        name: "audit rejects aggregator-side gradient noise",
        pass: failed.is_none() && audited > 0 && rate >= 0.90,
        detail: match failed {
            Some(e) => format!("run failed: {e}"),
            None => format!("{rejected}/{audited} poisoned proposals rejected ({:.1}%)", 100.0 * rate),
        },
    }
}

fn window_ablation(q15: &[SweepRow]) -> Check {
    let mut base = sign_flip_base();
    base.trust.q = 1;
    base.trust.ban_duration = 1;
    let q1 = sweep(&base, &[0.2], &[AttackKind::SignFlip], &[Mode::Audited], REPS);
    let p15 = rows_mean(q15, Mode::Audited, |r| r.pse_precision);
    let p1 = rows_mean(&q1, Mode::Audited, |r| r.pse_precision);
    let per_rep = |rows: &[SweepRow]| {
        rows.iter()
            .filter(|r| r.mode == Mode::Audited)
            .map(|r| r.pse_precision.map_or("-".into(), |p| format!("{p:.3}")))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let (pass, detail) = match (p15, p1) {
        (Some(a), Some(b)) => (
            a >= b,
            format!(
                "selection precision q=15 {a:.4} [{}], q=1 {b:.4} [{}]",
                per_rep(q15),
                per_rep(&q1)
            ),
        ),
        _ => (false, "a run failed".to_string()),
    };
    Check {
        id: 8,
        name: "longer score window selects at least as well",
        pass,
        detail,
    }
}

fn attack_inertness() -> Check {
    let mut clean = RunConfig::default();
    clean.rounds = clean.trust.warmup_rounds + 3;
    let warm = clean.trust.warmup_rounds;
    let reference = run(&clean).unwrap();
    let prefix = |out: &dfl_trust_core::simulator::RunOutput| {
        out.chain
            .blocks()
            .iter()
            .filter(|b| b.header.round <= warm)
            .map(|b| *b.hash())
            .collect::<Vec<_>>()
    };
    let want = prefix(&reference);
    let mut diverged = Vec::new();
    for kind in [AttackKind::LabelFlip, AttackKind::SignFlip, AttackKind::GradManip, AttackKind::Tom] {
        let mut cfg = clean.clone();
        cfg.attack.kind = kind;
        cfg.attack.byzantine_ratio = 0.2;
        cfg.attack.surface = Surface::Both;
        let out = run(&cfg).unwrap();
        if prefix(&out) != want {
            diverged.push(kind.to_string());
        }
    }
    Check {
        id: 9,
        name: "attacks leave warm-up blocks untouched",
        pass: diverged.is_empty() && !want.is_empty(),
        detail: if diverged.is_empty() {
            format!("{} warm-up blocks identical across 4 attacks", want.len())
        } else {
            format!("diverged: {}", diverged.join(", "))
        },
    }
}

fn ban_enforcement() -> Check {
    let mut cfg = RunConfig::default();
    cfg.rounds = 80;
    cfg.trust.ban_duration = 15;
    cfg.force_reject_rounds = vec![60];
    let out = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rounds.csv");
    write_rounds_csv(&out.records, std::fs::File::create(&path).unwrap()).unwrap();
    let rows = read_rounds_csv(std::fs::File::open(&path).unwrap()).unwrap();

    let r60 = rows.iter().find(|r| r.round == 60).unwrap();
    let Some((banned, label)) = r60.attempts.first().cloned() else {
        return Check {
            id: 10,
            name: "rejected aggregator stays banned",
            pass: false,
            detail: "no attempt recorded at round 60".into(),
        };
    };
    let mut violations: Vec<u64> = Vec::new();
    for r in rows.iter().filter(|r| (60..75).contains(&r.round)) {
        let later: Vec<NodeId> = if r.round == 60 {
            r.attempts.iter().skip(1).map(|a| a.0).collect()
        } else {
            let mut v: Vec<NodeId> = r.attempts.iter().map(|a| a.0).collect();
            v.extend(r.selected_aggregator);
            v
        };
        if later.contains(&banned) || (r.round > 60 && r.final_aggregator == Some(banned)) {
            violations.push(r.round);
        }
    }
    let back = rows.iter().any(|r| r.round >= 75 && r.attempts.iter().any(|a| a.0 == banned));
    Check {
        id: 10,
        name: "rejected aggregator stays banned",
        pass: label == "forced" && violations.is_empty(),
        detail: format!(
            "node {banned} rejected at 60, selected again in 60-74: {violations:?}, selectable again from 75: {back}"
        ),
    }
}

fn main() -> ExitCode {
    let mut checks = vec![hsic_oracle(), trimmed_mean_oracle(), threshold_arithmetic(), gradient_check(), determinism()];

    let rows = sweep(
        &sign_flip_base(),
        &[0.2],
        &[AttackKind::SignFlip],
        &[Mode::Benign, Mode::Audited, Mode::Unprotected],
        REPS,
    );
    checks.push(ordering(&rows));
    checks.push(audit_potency());
    checks.push(window_ablation(&rows));
    checks.push(attack_inertness());
    checks.push(ban_enforcement());

    let mut failed = 0;
    for c in &checks {
        println!(
            "criterion {:>2} {} : {} ({})",
            c.id,
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.pass);
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
