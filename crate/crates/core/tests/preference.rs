use dptradeoff::front::FrontParams;
use dptradeoff::particles::WeightedParticles;
use dptradeoff::preference::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn w(x: f64) -> PreferenceWeights<f64> {
    PreferenceWeights::new(x).unwrap()
}

fn query_strategy() -> impl Strategy<Value = CurveQuery<f64>> {
    (0.05f64..1.0, 0.5f64..50.0, -0.1f64..0.2, 0.0f64..1.0, 2usize..40)
        .prop_map(|(l, k, b, c, q)| CurveQuery::from_curve(FrontParams::sigmoid(l, k, b, c).unwrap(), q).unwrap())
}

fn exp_sum(lp: &[f64]) -> f64 {
    lp.iter().map(|x| x.exp()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn choice_probabilities_normalize(query in query_strategy(), w1 in 0.01f64..0.99, t in 1e-3f64..10.0) {
        let lp = choice_log_probs(&query, &w(w1), t).unwrap();
        prop_assert_eq!(lp.len(), query.len());
        prop_assert!((exp_sum(&lp) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance(us in prop::collection::vec(-2.0f64..2.0, 2..30), shift in -50.0f64..50.0, t in 0.05f64..2.0) {
        let shifted: Vec<f64> = us.iter().map(|u| u + shift).collect();
        let a = log_softmax(&us, t);
        let b = log_softmax(&shifted, t);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.exp() - y.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_ratio_equals_likelihood_ratio(
        seed in any::<u64>(),
        query in query_strategy(),
        pick in any::<prop::sample::Index>(),
        t in 0.05f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = PrefPosterior::init(16, [2.0, 2.0], &mut rng).unwrap();
        let j = pick.index(query.len());
        let rec = ChoiceRecord::new(query.clone(), j).unwrap();
        let after = post.update(&rec, t).unwrap();
        let vals = post.particles.values();
        for a in 0..vals.len() {
            for b in 0..vals.len() {
                let lhs = after.particles.log_weights()[a] - after.particles.log_weights()[b];
                let la = choice_log_probs(&query, &vals[a], t).unwrap()[j];
                let lb = choice_log_probs(&query, &vals[b], t).unwrap()[j];
                prop_assert!((lhs - (la - lb)).abs() < 1e-9 * (1.0 + (la - lb).abs()));
            }
        }
    }

    #[test]
    fn batch_equals_sequential(seed in any::<u64>(), picks in prop::collection::vec((query_strategy(), any::<prop::sample::Index>()), 1..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = PrefPosterior::init(32, [2.0, 2.0], &mut rng).unwrap();
        let recs: Vec<_> = picks.iter().map(|(q, i)| ChoiceRecord::new(q.clone(), i.index(q.len())).unwrap()).collect();
        let batch = post.update_batch(&recs, 0.2).unwrap();
        let mut seq = post.clone();
        for r in &recs {
            seq = seq.update(r, 0.2).unwrap();
        }
        for (x, y) in batch.particles.weights().iter().zip(seq.particles.weights()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn chebyshev_optimum_moves_right_with_w1(query in query_strategy(), a in 0.02f64..0.98, b in 0.02f64..0.98) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let i_lo = argmax_option(&query.utilities(&w(lo))).unwrap();
        let i_hi = argmax_option(&query.utilities(&w(hi))).unwrap();
        prop_assert!(i_lo <= i_hi);
    }
}

#[test]
fn repeated_informative_choice_shrinks_ess() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut post = PrefPosterior::init(256, [2.0, 2.0], &mut rng).unwrap();
    let query = CurveQuery::from_curve(FrontParams::sigmoid(0.9, 10.0, 0.05, 0.5).unwrap(), 21).unwrap();
    let rec = ChoiceRecord::new(query, 12).unwrap();
    let mut last = post.effective_sample_size();
    for _ in 0..10 {
        post = post.update(&rec, 0.2).unwrap();
        let ess = post.effective_sample_size();
        assert!(ess < last, "{ess} !< {last}");
        last = ess;
    }
}

#[test]
fn simulated_choices_follow_the_model() {
    let query = CurveQuery::from_curve(FrontParams::sigmoid(0.9, 10.0, 0.05, 0.5).unwrap(), 6).unwrap();
    let ww = w(0.45);
    let probs: Vec<f64> = choice_log_probs(&query, &ww, 0.2).unwrap().iter().map(|x| x.exp()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 200_000;
    let mut counts = vec![0usize; query.len()];
    for _ in 0..n {
        counts[simulate_choice(&query, &ww, 0.2, &mut rng).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(&probs) {
        let freq = *c as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se + 1e-12, "{freq} vs {p}");
    }
}

#[test]
fn pref_error_is_particle_order_free() {
    let vals = vec![w(0.2), w(0.5), w(0.9)];
    let lw = vec![-1.0, -0.3, -2.0];
    let a = PrefPosterior::from_particles(WeightedParticles::from_log_weights(vals.clone(), lw.clone()).unwrap());
    let b = PrefPosterior::from_particles(
        WeightedParticles::from_log_weights(vals.into_iter().rev().collect(), lw.into_iter().rev().collect()).unwrap(),
    );
    let truth = w(0.6);
    assert!((pref_error(&a, &truth) - pref_error(&b, &truth)).abs() < 1e-15);
}
