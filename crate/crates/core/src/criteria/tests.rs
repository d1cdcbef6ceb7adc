use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal};

use super::*;
use crate::propagate::{propagate_path, PathModel};

fn sampled<D: Distribution<f64>>(d: D, n: usize, seed: u64) -> DelayLaw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DelayLaw::empirical((0..n).map(|_| d.sample(&mut rng)).collect()).unwrap()
}

fn exp_marked_variance(mu: f64, x: f64) -> f64 {
    let q = (-x / mu).exp();
    mu * mu - q * x * x * (1.0 + q)
}

#[test]
fn c1_holds_at_twice_the_mean() {
    let laws = [
        DelayLaw::exponential_mean(700.0).unwrap(),
        DelayLaw::exponential(0.4, 1e-3).unwrap(),
        sampled(Gamma::new(2.5, 300.0).unwrap(), 5000, 1),
        DelayLaw::discrete([(0.0, 0.5), (10.0, 0.3), (400.0, 0.2)]).unwrap(),
    ];
    for law in &laws {
        for r in 1..=6 {
            let (holds, rhs) = check_c1(law, 2.0 * law.mean(), r).unwrap();
            assert!(holds && rhs <= 2.0 * law.mean());
        }
    }
}

#[test]
fn c1_degenerate_law_always_holds() {
    for x in [1e-3, 1.0, 1e6] {
        assert_eq!(check_c1(&DelayLaw::zero(), x, 3).unwrap(), (true, 0.0));
    }
    assert!(check_c1(&DelayLaw::zero(), 0.0, 1).is_err());
}

#[test]
fn c1_is_only_sufficient() {
    let mu = 1000.0;
    let law = DelayLaw::exponential_mean(mu).unwrap();
    let (holds, rhs) = check_c1(&law, mu, 1).unwrap();
    assert!(!holds);
    assert!((rhs / mu - 2.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((rhs / mu - 1.462).abs() < 1e-3);
    assert!(variance_after_marking(&law, mu, 1).unwrap() < law.variance());
}

#[test]
fn exponential_closed_form_against_monte_carlo() {
    let mu = 1500.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let exp = rand_distr::Exp::new(1.0 / mu).unwrap();
    for x in [400.0, 1500.0, 3000.0] {
        let n = 400_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let d: f64 = exp.sample(&mut rng);
            let c = if d >= x { d - x } else { d };
            s1 += c;
            s2 += c * c;
        }
        let mc = s2 / n as f64 - (s1 / n as f64).powi(2);
        let want = exp_marked_variance(mu, x);
        assert!((mc - want).abs() < 0.02 * want, "x={x}: {mc} vs {want}");
        let got = variance_after_marking(&DelayLaw::exponential_mean(mu).unwrap(), x, 1).unwrap();
        assert!((got - want).abs() < 1e-9 * want);
    }
}

#[test]
fn variance_after_marking_examples() {
    let law = DelayLaw::discrete([(0.0, 0.5), (1.5, 0.5)]).unwrap();
    assert!((variance_after_marking(&law, 1.0, 1).unwrap() - 0.0625).abs() < 1e-15);
    assert!((variance_after_marking(&law, 2.0, 3).unwrap() - law.variance()).abs() < 1e-15);
    assert!((mean_after_marking(&law, 1.0, 1).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn variance_after_marking_matches_one_hop_path() {
    let laws = [
        DelayLaw::exponential(0.3, 1.0 / 900.0).unwrap(),
        sampled(LogNormal::new(6.0, 0.8).unwrap(), 3000, 2),
    ];
    for law in &laws {
        for (r, n) in [(1, 1), (2, 2), (3, 5)] {
            let x = 450.0;
            let path = PathModel::new(vec![law.clone()], x, r, n).unwrap();
            let p = propagate_path(&path).unwrap();
            let want = variance_after_marking(law, x, r).unwrap();
            assert!((p.error_law.variance() - want).abs() < 1e-6 * want, "R={r}");
        }
    }
}

#[test]
fn c2_examples() {
    let a = DelayLaw::exponential_mean(2000.0).unwrap();
    let b = DelayLaw::exponential_mean(1000.0).unwrap();
    for x in [10.0, 800.0, 5000.0] {
        for r in 1..=4 {
            assert!(check_c2(&a, &b, x, r).unwrap());
        }
    }
    assert!(!check_c2(&a, &a, 500.0, 2).unwrap());
    let req = DelayLaw::discrete([(0.0, 0.5), (4.0, 0.5)]).unwrap();
    let resp = DelayLaw::discrete([(0.0, 0.1), (1.0, 0.9)]).unwrap();
    assert!(!check_c2(&req, &resp, 0.5, 1).unwrap());
    assert!(check_c2(&b, &a, 500.0, 1).is_err());
}

#[test]
fn c3_upper_bound_formula() {
    let req = DelayLaw::discrete([(0.0, 0.5), (4.0, 0.5)]).unwrap();
    let resp = DelayLaw::discrete([(0.0, 0.8), (4.0, 0.2)]).unwrap();
    // d = 1.2, g = 0.3
    let (holds, ub) = check_c3(&req, &resp, 3.0, 1).unwrap();
    assert!((ub - 8.0).abs() < 1e-12);
    assert!(holds);
    let (holds, ub) = check_c3(&req, &resp, 5.0, 1).unwrap();
    assert_eq!(ub, f64::INFINITY);
    assert!(holds);
}

#[test]
fn c3_matches_bias_reduction() {
    let req = sampled(Gamma::new(2.0, 900.0).unwrap(), 20_000, 3);
    let resp = sampled(Gamma::new(1.5, 700.0).unwrap(), 20_000, 4);
    let before = (req.mean() - resp.mean()).powi(2);
    for r in [1, 2, 4] {
        let mut agree = 0;
        for i in 1..400 {
            let x = 25.0 * f64::from(i);
            if !check_c2(&req, &resp, x, r).unwrap() {
                continue;
            }
            let (holds, ub) = check_c3(&req, &resp, x, r).unwrap();
            if (x - ub).abs() < 1e-6 * x {
                continue;
            }
            let after = bias_after_marking(&req, &resp, x, r).unwrap();
            assert_eq!(holds, after < before, "x={x} R={r}");
            agree += 1;
        }
        assert!(agree > 100);
    }
}

#[test]
fn bias_term_matches_monte_carlo() {
    // C' = x Σ_r (1{A > rx} - 1{B > rx}); the mean term shrinks iff 0 < E[C'] < 2 E[A - B]
    let ga = Gamma::new(2.0, 500.0).unwrap();
    let gb = Gamma::new(2.0, 300.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (x, r) = (400.0, 2u32);
    let n = 400_000;
    let mut c_prime = 0.0;
    for _ in 0..n {
        let (a, b): (f64, f64) = (ga.sample(&mut rng), gb.sample(&mut rng));
        for k in 1..=r {
            let t = f64::from(k) * x;
            c_prime += x * (f64::from(u8::from(a > t)) - f64::from(u8::from(b > t)));
        }
    }
    c_prime /= n as f64;
    let c = 1000.0 - 600.0;
    let shrinks = 0.0 < c_prime && c_prime < 2.0 * c;
    let a_law = sampled(ga, 50_000, 5);
    let b_law = sampled(gb, 50_000, 6);
    let before = (a_law.mean() - b_law.mean()).powi(2);
    let after = bias_after_marking(&a_law, &b_law, x, r).unwrap();
    assert_eq!(shrinks, after < before);
    let exact_c_prime = x * super::tail_gap(&a_law, &b_law, x, r).unwrap();
    assert!((exact_c_prime - c_prime).abs() < 0.03 * c_prime);
}

#[test]
fn improvement_region_examples() {
    assert_eq!(improvement_region_fraction(&DelayLaw::zero(), 2, RegionMode::Sufficient).unwrap(), 1.0);
    let law = DelayLaw::exponential_mean(1000.0).unwrap();
    for r in 1..=4 {
        assert_eq!(improvement_region_fraction(&law, r, RegionMode::Actual).unwrap(), 1.0);
        let f = improvement_region_fraction(&law, r, RegionMode::Sufficient).unwrap();
        assert!(f > 0.0 && f < 1.0);
        let lb = ir_lower_bound(&law, r).unwrap().unwrap();
        assert!(check_c1(&law, lb * (1.0 + 1e-9), r).unwrap().0);
        assert!(!check_c1(&law, lb * (1.0 - 1e-6), r).unwrap().0);
        assert!((f - (threshold_range(&law) - lb) / threshold_range(&law)).abs() < 1e-12);
    }
}

#[test]
fn report_flags_equal_means() {
    let law = DelayLaw::exponential(0.2, 1e-3).unwrap();
    let rep = evaluate_conditions(&law, &law, 3000.0, 1).unwrap();
    assert!(rep.a1_regime);
    assert!(!rep.c2_holds);
    assert!(rep.c1_holds);
    assert!(rep.ir_fraction >= 0.0 && rep.ir_fraction <= 1.0);
    assert_eq!(rep.c1_holds, rep.delta_star_ns >= rep.ir_lower_bound);
}

#[test]
fn second_hop_marking_reduces_total_error() {
    // equal-mean directions: MSE is the variance sum over 4, per hop independent
    let hops = [
        DelayLaw::exponential(0.3, 1.0 / 800.0).unwrap(),
        DelayLaw::exponential(0.5, 1.0 / 1200.0).unwrap(),
        sampled(Gamma::new(3.0, 250.0).unwrap(), 5000, 9),
    ];
    let total = |marked: &[bool]| -> f64 {
        hops.iter()
            .zip(marked)
            .map(|(h, &m)| {
                let x = 2.0 * h.mean();
                if m {
                    variance_after_marking(h, x, 2).unwrap()
                } else {
                    h.variance()
                }
            })
            .sum::<f64>()
            / 2.0
    };
    let none = total(&[false, false, false]);
    for i in 0..3 {
        let mut one = [false; 3];
        one[i] = true;
        assert!(total(&one) < none);
        for j in 0..3 {
            if j != i {
                let mut two = one;
                two[j] = true;
                assert!(total(&two) < total(&one));
            }
        }
    }
}

fn arb_law() -> impl Strategy<Value = DelayLaw> {
    prop_oneof![
        (0.0..0.9f64, 50.0..3000.0f64).prop_map(|(z, m)| DelayLaw::exponential(z, 1.0 / m).unwrap()),
        (0.5..5.0f64, 50.0..800.0f64, any::<u64>())
            .prop_map(|(k, s, seed)| sampled(Gamma::new(k, s).unwrap(), 500, seed)),
        (4.0..7.0f64, 0.2..1.5f64, any::<u64>())
            .prop_map(|(m, s, seed)| sampled(LogNormal::new(m, s).unwrap(), 500, seed)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn c1_is_sound(law in arb_law(), frac in 0.0..1.0f64, levels in 1u32..=6) {
        let x = (0.05 + 0.95 * frac) * threshold_range(&law);
        let (holds, _) = check_c1(&law, x, levels).unwrap();
        prop_assume!(holds && law.ccdf(x).unwrap() > 0.0);
        prop_assert!(variance_after_marking(&law, x, levels).unwrap() < law.variance());
    }

    #[test]
    fn more_levels_never_hurt_where_c1_holds(law in arb_law(), frac in 0.0..1.0f64) {
        let x = (0.05 + 0.95 * frac) * threshold_range(&law);
        let mut last = law.variance();
        for r in 1..=6 {
            if !check_c1(&law, x, r).unwrap().0 {
                continue;
            }
            let v = variance_after_marking(&law, x, r).unwrap();
            prop_assert!(v <= last * (1.0 + 1e-12));
            last = v;
        }
    }

    #[test]
    fn fractions_stay_in_unit_interval(law in arb_law(), levels in 1u32..=6) {
        for mode in [RegionMode::Sufficient, RegionMode::Actual] {
            let f = improvement_region_fraction(&law, levels, mode).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
