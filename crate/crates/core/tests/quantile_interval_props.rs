use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use stagecp::intervals::{interval_separate, interval_signed, interval_split_conformal, interval_unified};
use stagecp::predictors::fit_ols;
use stagecp::quantiles::{signed_lower_quantile, signed_upper_quantile};
use stagecp::synth::{generate, ScenarioKind, ScenarioSpec};
use stagecp::{
    conformal_quantile, split_dataset, weighted_quantile, AbstentionPolicy, ConformalSet, QuantileLevel, ScalingConfig,
    ScoredPoint, Seed, SortedScores, TwoStageModel, TwoStagePipeline,
};

fn lv(x: f64) -> QuantileLevel {
    QuantileLevel::new(x).unwrap()
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..100.0f64, 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn quantile_non_increasing_in_level(s in scores(), l1 in -0.2..1.2f64, l2 in -0.2..1.2f64) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        prop_assert!(conformal_quantile(&s, lv(hi)).unwrap() <= conformal_quantile(&s, lv(lo)).unwrap());
    }

    #[test]
    fn unit_weights_reduce_exactly(s in scores(), level in -0.2..1.2f64) {
        let w = vec![1.0; s.len()];
        prop_assert_eq!(weighted_quantile(&s, &w, lv(level)).unwrap(), conformal_quantile(&s, lv(level)).unwrap());
    }

    #[test]
    fn sorted_scores_agree(s in scores(), level in -0.2..1.2f64) {
        prop_assert_eq!(SortedScores::new(&s).unwrap().quantile(lv(level)), conformal_quantile(&s, lv(level)).unwrap());
    }

    #[test]
    fn width_monotone_in_coefficients_and_levels(
        comps in proptest::collection::vec((0.0..10.0f64, 0.0..10.0f64), 5..40),
        a1 in 0.0..=1.0f64, a2 in 0.0..=1.0f64, b1 in 0.0..=1.0f64, b2 in 0.0..=1.0f64,
        c1 in 0.0..0.5f64, c2 in 0.0..0.5f64, d1 in 0.0..0.5f64, d2 in 0.0..0.5f64,
    ) {
        let conf: Vec<ScoredPoint> = comps
            .iter()
            .enumerate()
            .map(|(i, &(dr1, r2))| ScoredPoint::new(i as i64, 0.0, -r2, -(r2 + dr1)))
            .collect();
        let set = ConformalSet::new(&conf).unwrap();
        let sort = |x: f64, y: f64| if x <= y { (x, y) } else { (y, x) };
        let ((a_lo, a_hi), (b_lo, b_hi)) = (sort(a1, a2), sort(b1, b2));
        let ((c_lo, c_hi), (d_lo, d_hi)) = (sort(c1, c2), sort(d1, d2));
        let hw = |a, b, c, d| set.unified(&ScalingConfig::new(a, b, c, d, 0.1).unwrap(), 0.0).half_width;
        prop_assert!(hw(a_lo, b1, c1, d1) <= hw(a_hi, b1, c1, d1));
        prop_assert!(hw(a1, b_lo, c1, d1) <= hw(a1, b_hi, c1, d1));
        prop_assert!(hw(a1, b1, c_hi, d1) <= hw(a1, b1, c_lo, d1));
        prop_assert!(hw(a1, b1, c1, d_hi) <= hw(a1, b1, c1, d_lo));
        prop_assert_eq!(set.unified(&ScalingConfig::new(1.0, 1.0, c1, d1, 0.1).unwrap(), 2.0), set.separate(lv(c1), lv(d1), 2.0));
    }
}

#[test]
fn exchangeable_coverage_of_conformal_quantile() {
    let mut rng = Seed(11).rng();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (trials, m, alpha) = (10_000, 19, 0.1);
    let mut hits = 0usize;
    for _ in 0..trials {
        let s: Vec<f64> = (0..m).map(|_| f64::abs(normal.sample(&mut rng))).collect();
        let q = conformal_quantile(&s, lv(alpha)).unwrap();
        if f64::abs(normal.sample(&mut rng)) <= q {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    let se = (0.9 * 0.1 / trials as f64).sqrt();
    assert!(p >= 1.0 - alpha - 3.0 * se, "coverage {p}");
}

#[test]
fn ols_is_permutation_invariant_and_exact_on_noiseless_data() {
    let mut rng = Seed(3).rng();
    let inputs: Vec<[f64; 2]> = (0..50).map(|_| [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>()]).collect();
    let targets: Vec<[f64; 1]> = inputs.iter().map(|v| [1.5 * v[0] - 2.0 * v[1] + 0.25]).collect();
    let fitted = fit_ols(&inputs, &targets).unwrap();
    assert!((fitted.weight(0, 0) - 1.5).abs() < 1e-8);
    assert!((fitted.weight(0, 1) + 2.0).abs() < 1e-8);
    assert!((fitted.intercept()[0] - 0.25).abs() < 1e-8);

    let noisy: Vec<[f64; 1]> = targets.iter().map(|t| [t[0] + rng.random::<f64>() - 0.5]).collect();
    let base = fit_ols(&inputs, &noisy).unwrap();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut rng);
    let shuffled_in: Vec<[f64; 2]> = order.iter().map(|&i| inputs[i]).collect();
    let shuffled_out: Vec<[f64; 1]> = order.iter().map(|&i| noisy[i]).collect();
    let perm = fit_ols(&shuffled_in, &shuffled_out).unwrap();
    let diff = base
        .weights()
        .iter()
        .chain(base.intercept())
        .zip(perm.weights().iter().chain(perm.intercept()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "max diff {diff}");
}

/// Brute-force two-tail order statistics on a hand-built set of 9 signed
/// downstream residuals, no upstream error.
#[test]
fn signed_interval_brute_force() {
    let r2 = [-2.0, -1.0, 1.0, 2.0, 3.0, -3.0, 0.5, -0.5, 4.0];
    let conf: Vec<ScoredPoint> = r2.iter().enumerate().map(|(i, &r)| ScoredPoint::new(i as i64, r, 0.0, 0.0)).collect();
    let set = ConformalSet::new(&conf).unwrap();
    let cfg = ScalingConfig::new(1.0, 1.0, 0.2, 0.2, 0.1).unwrap();
    let iv = set.signed(&cfg, 10.0).unwrap();
    // tails 0.1: rank ceil(10 * 0.9) = 9 of 9, the extreme values
    let mut sorted = r2.to_vec();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(iv.bounds(), (10.0 + sorted[0], 10.0 + sorted[8]));
    assert_eq!(signed_upper_quantile(&r2, 0.1).unwrap(), 4.0);
    assert_eq!(signed_lower_quantile(&r2, 0.1).unwrap(), -3.0);
    // tails 0.25: rank ceil(10 * 0.75) = 8
    let cfg = ScalingConfig::new(1.0, 1.0, 0.5, 0.5, 0.1).unwrap();
    assert_eq!(set.signed(&cfg, 0.0).unwrap().bounds(), (sorted[1], sorted[7]));
}

fn iid_split(seed: Seed) -> (TwoStagePipeline, Vec<stagecp::TripletPoint>, Vec<stagecp::TripletPoint>) {
    let spec = ScenarioSpec::new(ScenarioKind::IidLinear, 1000 + 500 + 2000, 1000, seed);
    let pts = generate(&spec).unwrap();
    let split = split_dataset(&pts, 1000, 500, 0).unwrap();
    let p = TwoStagePipeline::fit(split.train).unwrap();
    (p, split.conf.to_vec(), pts[1500..].to_vec())
}

fn coverage<F: Fn(&[f64]) -> stagecp::PredictionInterval>(test: &[stagecp::TripletPoint], build: F) -> f64 {
    let hits = test.iter().filter(|z| build(&z.w).covers(z.y, AbstentionPolicy::Reporting)).count();
    hits as f64 / test.len() as f64
}

#[test]
fn separate_interval_meets_component_guarantee() {
    let (c, d) = (0.05, 0.05);
    let (p, conf, test) = iid_split(Seed(21));
    let set = ConformalSet::new(&p.score_all(&conf).unwrap()).unwrap();
    let cov = coverage(&test, |w| set.separate(lv(c), lv(d), p.predict_pipeline(w).unwrap().1));
    let target = 1.0 - c - d;
    let se = (target * (1.0 - target) / test.len() as f64).sqrt();
    assert!(cov >= target - 3.0 * se, "coverage {cov}");
    let direct = interval_separate(&p, &conf, lv(c), lv(d), &test[0].w).unwrap();
    assert_eq!(direct, set.separate(lv(c), lv(d), p.predict_pipeline(&test[0].w).unwrap().1));
}

#[test]
fn scaled_unit_interval_meets_two_alpha_guarantee() {
    let alpha = 0.1;
    let (p, conf, test) = iid_split(Seed(22));
    let cfg = ScalingConfig::scaled_at(1.0, 1.0, alpha).unwrap();
    let cov = coverage(&test, |w| interval_unified(&p, &conf, &cfg, w).unwrap());
    let target = 1.0 - 2.0 * alpha;
    let se = (target * (1.0 - target) / test.len() as f64).sqrt();
    assert!(cov >= target - 3.0 * se, "coverage {cov}");
    let sc = coverage(&test, |w| interval_split_conformal(&p, &conf, lv(alpha), w).unwrap());
    assert!(sc >= 1.0 - alpha - 3.0 * (0.09 / test.len() as f64).sqrt(), "split conformal {sc}");
    assert!(interval_signed(&p, &conf, &cfg, &test[0].w).is_ok());
}
