//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run a subset with e.g. `cargo test --test acceptance -- 2 6`. Failing
//! criteria are reported; the process exits nonzero on failure only when
//! `ACCEPTANCE_STRICT=1`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dptradeoff::acquisition::{AcquisitionConfig, PrefKgContext};
use dptradeoff::front::{
    map_fit, CurveKind, CurvePrior, FrontObservation, FrontParams, FrontParticle, FrontPosterior, NoiseScale,
    ResamplePolicy,
};
use dptradeoff::particles::WeightedParticles;
use dptradeoff::preference::{
    chebyshev, exp_linear_utility, linear_utility, CurveQuery, PrefPosterior, PreferenceWeights, TradeOffPoint,
};
use dptradeoff::scalar::{argmax_first, unit_grid, Scalar};
use dptradeoff::session::{
    oracle_check, oracle_eval, run_batch, run_loop, Arm, BatchReport, NormalizationSpec, Oracle, OracleKind,
    OracleSpec, SessionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

const SEEDS: u64 = 30;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "closed-form accuracy vs Monte Carlo", criterion_1),
        (2, "front posterior recovery", criterion_2),
        (3, "preference-learning ablation ordering", criterion_3),
        (4, "end-to-end regret direction", criterion_4),
        (5, "utility argmax geometry", criterion_5),
        (6, "simulated vs enumerated KG", criterion_6),
        (7, "learner temperature sensitivity", criterion_7),
        (8, "determinism", criterion_8),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let secs = start.elapsed().as_secs_f64();
        if !v.pass {
            failed.push(id);
        }
        println!(
            "criterion {id} [{name}]: {} ({}) [{secs:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed.is_empty() {
        println!("all criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("failed criteria: {failed:?}");
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn closed_form_config() -> SessionConfig<f64> {
    let mut cfg = SessionConfig::<f64>::default();
    cfg.oracle = OracleSpec { kind: OracleKind::ClosedFormLogistic { c: 5.0 }, noise_sigma: 0.01, delta: 1e-5 };
    cfg.normalization.eps_min = 0.01;
    cfg.normalization.eps_max = 0.5;
    cfg.loop_.num_steps = 20;
    cfg.user_model.temperature = 0.2;
    cfg
}

fn seeds() -> Vec<u64> {
    (0..SEEDS).collect()
}

fn final_metric(report: &BatchReport<f64>, arm: Arm, pick: fn(&dptradeoff::session::MetricRecord<f64>) -> Option<f64>) -> Vec<f64> {
    report.records_for(arm).map(|r| pick(r.metric_trace.last().expect("non-empty trace")).expect("metric present")).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_err(v: &[f64]) -> f64 {
    let m = mean(v);
    let n = v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = oracle_check(5.0, &[0.05, 0.1, 0.2, 0.5], 1_000_000, &mut rng).expect("valid arguments");
    let elapsed = start.elapsed();
    let detail = rows
        .iter()
        .map(|r| format!("eps {}: |diff| {:.2} SE", r.epsilon, (r.monte_carlo - r.closed_form).abs() / r.std_error))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(rows.iter().all(|r| r.pass) && elapsed < Duration::from_secs(30), format!("{detail}; {elapsed:.2?}"))
}

fn criterion_2() -> Verdict {
    let truth = FrontParams::sigmoid(0.93, 11.0, 0.02, 0.45).unwrap();
    let prior = CurvePrior::sigmoid_default();
    let policy = ResamplePolicy::default();
    let grid: Vec<f64> = unit_grid(201);
    let mut errors = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut post = FrontPosterior::init(CurveKind::Sigmoid, &prior, 4000, &mut rng).unwrap();
        let mut history = Vec::new();
        for _ in 0..40 {
            let p: f64 = rng.gen();
            let obs = FrontObservation::new(p, truth.eval(p) + 0.01 * f64::sample_standard_normal(&mut rng)).unwrap();
            history.push(obs);
            post = post.update(&obs).unwrap();
            post.rejuvenate(&policy, &prior, &history, &mut rng).unwrap();
        }
        let curve = post.mean_curve(&grid).unwrap();
        errors.push(curve.points.iter().map(|b| (b.mean - truth.eval(b.p)).abs()).fold(0.0, f64::max));
        slowest = slowest.max(start.elapsed());
    }
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    verdict(
        worst < 0.02 && slowest < Duration::from_secs(10),
        format!("max error over 5 seeds {worst:.4} (per seed {errors:.4?}); slowest run {slowest:.2?}"),
    )
}

fn criterion_3() -> Verdict {
    let mut cfg = closed_form_config();
    cfg.loop_.known_front = true;
    let arms = [Arm::CurveKg, Arm::RandomPairs, Arm::RandomCurve];
    let report = run_batch(&cfg, &seeds(), &arms).expect("batch runs");
    if !report.failures.is_empty() {
        return verdict(false, format!("seed failures: {:?}", report.failures));
    }
    let kg = final_metric(&report, Arm::CurveKg, |m| m.pref_error);
    let pairs = final_metric(&report, Arm::RandomPairs, |m| m.pref_error);
    let curves = final_metric(&report, Arm::RandomCurve, |m| m.pref_error);
    // One-sided paired t-test of random-pairs minus curve-KG.
    let diff: Vec<f64> = pairs.iter().zip(&kg).map(|(a, b)| a - b).collect();
    let t = mean(&diff) / std_err(&diff);
    let p = 1.0 - StudentsT::new(0.0, 1.0, diff.len() as f64 - 1.0).unwrap().cdf(t);
    let (mk, mp, mc) = (mean(&kg), mean(&pairs), mean(&curves));
    verdict(
        p < 0.05 && mk <= mc,
        format!("mean pref_error at step 20: curve-kg {mk:.4}, random-pairs {mp:.4}, random-curve {mc:.4}; paired t = {t:.2}, p = {p:.2e}"),
    )
}

fn criterion_4() -> Verdict {
    let cfg = closed_form_config();
    let report = run_batch(&cfg, &seeds(), &[Arm::CurveKg, Arm::RandomCurve]).expect("batch runs");
    if !report.failures.is_empty() {
        return verdict(false, format!("seed failures: {:?}", report.failures));
    }
    let at = |arm, step: usize| -> Vec<f64> {
        report.records_for(arm).map(|r| r.metric_trace[step - 1].regret.expect("simulation regret")).collect()
    };
    let kg2 = median(&at(Arm::CurveKg, 2));
    let kg20 = median(&at(Arm::CurveKg, 20));
    let rnd20 = median(&at(Arm::RandomCurve, 20));
    verdict(
        kg20 < kg2 && kg20 <= rnd20,
        format!(
            "median regret curve-kg step 2 {kg2:.4} -> step 20 {kg20:.4}; random step 20 {rnd20:.4}; means kg {:.4} random {:.4}",
            mean(&at(Arm::CurveKg, 20)),
            mean(&at(Arm::RandomCurve, 20))
        ),
    )
}

fn criterion_5() -> Verdict {
    // S-front: sigmoid fitted to noisy closed-form logistic accuracies.
    let norm = NormalizationSpec::new(0.01, 0.5, 0.5, 1.0).unwrap();
    let oracle =
        Oracle::new(OracleSpec { kind: OracleKind::ClosedFormLogistic { c: 5.0 }, noise_sigma: 0.01, delta: 1e-5 })
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let obs: Vec<_> =
        unit_grid::<f64>(30).into_iter().map(|p| oracle_eval(&oracle, &norm, p, &mut rng).unwrap()).collect();
    let fit = map_fit(&obs, CurveKind::Sigmoid).unwrap().params;
    let grid: Vec<f64> = unit_grid(201);
    let alpha: Vec<f64> = grid.iter().map(|&p| fit.eval_clamped(p)).collect();
    let last = grid.len() - 1;

    let mut linear_ends = 0;
    let mut exp_ends = 0;
    let mut cheb = Vec::new();
    let weights: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    for &w1 in &weights {
        let w = PreferenceWeights::new(w1).unwrap();
        let points = grid.iter().zip(&alpha).map(|(&p, &a)| TradeOffPoint { p, alpha: a });
        let lin: Vec<f64> = points.clone().map(|y| linear_utility(&y, &w).unwrap()).collect();
        let exl: Vec<f64> = points
            .clone()
            .map(|y| exp_linear_utility(norm.denormalize_privacy(y.p).unwrap(), norm.denormalize_accuracy(y.alpha), &w).unwrap())
            .collect();
        let ch: Vec<f64> = points.map(|y| chebyshev(y.p, y.alpha, &w)).collect();
        let ends = |v: &[f64]| matches!(argmax_first(v), Some(i) if i == 0 || i == last);
        linear_ends += ends(&lin) as usize;
        exp_ends += ends(&exl) as usize;
        cheb.push(argmax_first(&ch).unwrap());
    }
    let n = weights.len() as f64;
    let mut interior: Vec<usize> = cheb.iter().copied().filter(|&i| i != 0 && i != last).collect();
    interior.dedup();
    let monotone = cheb.windows(2).all(|w| w[0] <= w[1]);
    let lin_frac = linear_ends as f64 / n;
    let exp_frac = exp_ends as f64 / n;
    verdict(
        lin_frac >= 0.9 && exp_frac >= 0.9 && interior.len() >= 5 && monotone,
        format!(
            "linear endpoint share {lin_frac:.3}, exp-linear endpoint share {exp_frac:.3}, chebyshev distinct interior argmaxes {}, monotone {monotone}",
            interior.len()
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = AcquisitionConfig::default();
    let mut worst_z: f64 = 0.0;
    let mut min_exact = f64::INFINITY;
    let mut ok = true;
    for _ in 0..20 {
        let nf = rng.gen_range(1..=8);
        let front_values: Vec<_> = (0..nf)
            .map(|_| FrontParticle {
                params: FrontParams::sigmoid(rng.gen_range(0.3..1.0), rng.gen_range(1.0..40.0), rng.gen_range(-0.1..0.2), rng.gen_range(0.1..0.9))
                    .unwrap(),
                sigma: NoiseScale(rng.gen_range(0.01..0.1)),
            })
            .collect();
        let front_lw = (0..nf).map(|_| rng.gen_range(-2.0..0.0)).collect();
        let front = FrontPosterior::from_particles(WeightedParticles::from_log_weights(front_values, front_lw).unwrap());
        let np = rng.gen_range(2..=8);
        let pref_values = (0..np).map(|_| PreferenceWeights::new(rng.gen_range(0.02..0.98)).unwrap()).collect();
        let pref_lw = (0..np).map(|_| rng.gen_range(-2.0..0.0)).collect();
        let pref = PrefPosterior::from_particles(WeightedParticles::from_log_weights(pref_values, pref_lw).unwrap());
        let a = TradeOffPoint::new(rng.gen(), rng.gen()).unwrap();
        let b = TradeOffPoint::new(rng.gen(), rng.gen()).unwrap();
        let query = CurveQuery::pair(a, b);

        let ctx = PrefKgContext::new(&front, &pref, &cfg);
        let exact: f64 = ctx.kg_exact(0, &query, 0.2).unwrap().kg_value;
        let mc = ctx.kg_simulated(0, &query, 0.2, 4096, &mut rng).unwrap();
        let se = mc.std_error();
        let diff = (mc.kg_value - exact).abs();
        ok &= diff <= 3.0 * se + 1e-12 && exact >= -1e-12;
        if se > 0.0 {
            worst_z = worst_z.max(diff / se);
        }
        min_exact = min_exact.min(exact);
    }
    verdict(ok, format!("20 instances, worst |MC - exact| = {worst_z:.2} SE, smallest exact KG {min_exact:.3e}"))
}

fn criterion_7() -> Verdict {
    let mut results = Vec::new();
    for t in [0.1, 0.2, 0.3] {
        let mut cfg = closed_form_config();
        cfg.loop_.known_front = true;
        cfg.user_model.learner_temperature = Some(t);
        let report = run_batch(&cfg, &seeds(), &[Arm::CurveKg]).expect("batch runs");
        if !report.failures.is_empty() {
            return verdict(false, format!("seed failures at T = {t}: {:?}", report.failures));
        }
        let v = final_metric(&report, Arm::CurveKg, |m| m.pref_error);
        results.push((t, mean(&v), std_err(&v)));
    }
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let pooled = (results[i].2.powi(2) + results[j].2.powi(2)).sqrt();
            let z = (results[i].1 - results[j].1).abs() / pooled;
            worst = worst.max(z);
            ok &= z <= 2.0;
        }
    }
    let summary =
        results.iter().map(|(t, m, se)| format!("T={t}: {m:.4} +/- {se:.4}")).collect::<Vec<_>>().join(", ");
    verdict(ok, format!("{summary}; largest pairwise gap {worst:.2} pooled SE"))
}

fn criterion_8() -> Verdict {
    let cfg = closed_form_config();
    let mut same = true;
    for (arm, seed) in [(Arm::CurveKg, 11), (Arm::RandomPairs, 12)] {
        let a = run_loop(&cfg, arm, seed).map_err(|f| f.error.to_string());
        let b = run_loop(&cfg, arm, seed).map_err(|f| f.error.to_string());
        match (a, b) {
            (Ok(a), Ok(b)) => {
                same &= serde_json::to_string(&a.metric_trace).unwrap() == serde_json::to_string(&b.metric_trace).unwrap();
                same &= a.to_json() == b.to_json();
            }
            (a, b) => return verdict(false, format!("run failed: {:?} / {:?}", a.err(), b.err())),
        }
    }
    verdict(same, "two runs per (config, seed) for curve-kg and random-pairs; metric traces and records byte-identical")
}
