mod common;

use common::*;
use hybridloss::loss::{self, LossVariant, MixWeights};
use hybridloss::nn::Activation;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn output_activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Sigmoid), Just(Activation::Softmax)]
}

fn variant() -> impl Strategy<Value = LossVariant> {
    (0..9usize).prop_map(|i| LossVariant::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backprop_matches_finite_differences(seed in any::<u64>(), act in output_activation(), v in variant()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng, act, v);
        let s = check_gradients(&case);
        prop_assert!(s.worst_rel <= FD_REL_TOL, "{v} {act}: worst relative error {}", s.worst_rel);
    }

    #[test]
    fn pure_weights_give_pure_signals(seed in any::<u64>(), act in output_activation()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng, act, LossVariant::Ce100Se0);
        let trace = case.net.forward(case.x.view()).unwrap();
        let se = loss::grad_output(case.t.view(), &trace, MixWeights::SE_ONLY, &case.norms).unwrap();
        let direct = loss::grad_se(case.t.view(), &trace).unwrap().mapv(|g| g / case.norms.max_se);
        prop_assert_eq!(se, direct);
        let ce = loss::grad_output(case.t.view(), &trace, MixWeights::CE_ONLY, &case.norms).unwrap();
        let direct = loss::grad_ce(case.t.view(), &trace).unwrap().mapv(|g| g / case.norms.max_ce);
        prop_assert_eq!(ce, direct);
    }

    #[test]
    fn hybrid_loss_is_linear_in_the_weights(seed in any::<u64>(), act in output_activation(), s in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng, act, LossVariant::Ce50Se50);
        let o = case.net.predict(case.x.view()).unwrap();
        let w = MixWeights::new(s, 1.0 - s).unwrap();
        let mixed = loss::eval_hybrid(case.t.view(), o.view(), case.form, w, &case.norms).unwrap();
        let se = loss::eval_se(case.t.view(), o.view()).unwrap() / case.norms.max_se;
        let ce = loss::eval_ce(case.t.view(), o.view(), case.form).unwrap() / case.norms.max_ce;
        prop_assert!((mixed - (s * se + (1.0 - s) * ce)).abs() <= 1e-12 * (1.0 + mixed.abs()));
    }
}

#[test]
fn deterministic_sweep_over_all_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for round in 0..40 {
        let act = if round % 2 == 0 { Activation::Sigmoid } else { Activation::Softmax };
        for v in LossVariant::ALL {
            let s = check_gradients(&random_case(&mut rng, act, v));
            assert!(s.worst_rel <= FD_REL_TOL, "{v} {act}: {}", s.worst_rel);
            checked += s.checked;
        }
    }
    assert!(checked > 1000);
}
