use nalgebra::DMatrix;
use proptest::prelude::*;

use fluctlab::channels::{random_channel, KrausChannel, RandomChannel};
use fluctlab::feedback::{jsu_error_check, mutual_information, ErrorModel, FeedbackProtocol};
use fluctlab::fluctuation::{crooks_check, jarzynski_check};
use fluctlab::random::{random_density, random_hermitian, seeded_rng};
use fluctlab::sweep::{feedback_instance, random_bistochastic};
use fluctlab::twopoint::{conditional_probs, delta_histogram, gibbs, DeltaSign, JointDistribution};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn unital_channels_satisfy_the_identity(seed: u64, d in 2usize..=4, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let mut rng = seeded_rng(seed);
        let ch = random_bistochastic(d, &mut rng);
        let (a, b) = (random_hermitian(d, &mut rng), random_hermitian(d, &mut rng));
        let r = jarzynski_check(&ch, &a, &b, alpha, beta, 1e-9).unwrap();
        prop_assert!(r.holds, "gap {}", r.relative_gap);
    }

    #[test]
    fn any_channel_holds_at_zero_output_parameter(seed: u64, din in 1usize..=3, dout in 1usize..=4, alpha in -2.0f64..2.0) {
        let mut rng = seeded_rng(seed);
        let ch = random_channel(RandomChannel::Stinespring { dim_in: din, dim_out: dout, env: 4 }, &mut rng).unwrap();
        let (a, b) = (random_hermitian(din, &mut rng), random_hermitian(dout, &mut rng));
        let r = jarzynski_check(&ch, &a, &b, alpha, 0.0, 1e-9).unwrap();
        let expected = din as f64 / gibbs(&a, alpha).unwrap().partition_function();
        prop_assert!(r.holds);
        prop_assert!((r.rhs - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn adjoint_is_an_involution(seed: u64, din in 1usize..=3, dout in 1usize..=3, env in 1usize..=3) {
        prop_assume!(dout * env >= din);
        let ch = random_channel(RandomChannel::Stinespring { dim_in: din, dim_out: dout, env }, &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(ch.adjoint().adjoint(), ch);
    }

    #[test]
    fn compose_and_tensor_preserve_trace(seed: u64, d in 1usize..=3) {
        let mut rng = seeded_rng(seed);
        let f = random_channel(RandomChannel::Stinespring { dim_in: d, dim_out: d, env: 2 }, &mut rng).unwrap();
        let g = random_channel(RandomChannel::Stinespring { dim_in: d, dim_out: d, env: 2 }, &mut rng).unwrap();
        prop_assert!(KrausChannel::compose(&f, &g).unwrap().report().is_tp);
        let t = KrausChannel::tensor(&f, &g).unwrap();
        prop_assert!(t.report().is_tp);
        let rho = random_density(d * d, &mut rng);
        let out = t.apply(&rho).unwrap();
        prop_assert!((out.trace() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn histograms_carry_all_mass(seed: u64, d in 2usize..=4, alpha in -2.0f64..2.0) {
        let mut rng = seeded_rng(seed);
        let ch = random_bistochastic(d, &mut rng);
        let (a, b) = (random_hermitian(d, &mut rng), random_hermitian(d, &mut rng));
        let (sa, sb) = (a.spectrum().unwrap(), b.spectrum().unwrap());
        let g = gibbs(&a, alpha).unwrap();
        let joint = JointDistribution::from_input(g.density(), &sa, conditional_probs(&ch, &sa, &sb).unwrap()).unwrap();
        for sign in [DeltaSign::OutputMinusInput, DeltaSign::InputMinusOutput] {
            prop_assert!((delta_histogram(&joint, sign).total_mass() - 1.0).abs() <= 1e-12);
        }
        let r = crooks_check(&ch, &a, &b, alpha, 1e-9).unwrap();
        prop_assert!(r.holds, "residual {}", r.max_residual);
    }

    #[test]
    fn mutual_information_is_nonnegative(cells in proptest::collection::vec(0.0f64..1.0, 9)) {
        let total: f64 = cells.iter().sum();
        prop_assume!(total > 1e-6);
        let joint = DMatrix::from_row_slice(3, 3, &cells) / total;
        prop_assert!(mutual_information(&joint).average >= -1e-12);
        let pm: Vec<f64> = joint.row_iter().map(|r| r.sum()).collect();
        let pn: Vec<f64> = joint.column_iter().map(|c| c.sum()).collect();
        let product = DMatrix::from_fn(3, 3, |i, j| pm[i] * pn[j]);
        prop_assert!(mutual_information(&product).average.abs() <= 1e-12);
    }

    #[test]
    fn identity_registration_changes_nothing(seed: u64) {
        let p = feedback_instance(&mut seeded_rng(seed), false, false);
        let q = FeedbackProtocol { error_model: Some(ErrorModel::identity(p.measurement.outcomes())), ..p.clone() };
        let (a, b) = (jsu_error_check(&p, 1e-9).unwrap(), jsu_error_check(&q, 1e-9).unwrap());
        prop_assert_eq!(a.joint, b.joint);
        prop_assert_eq!(a.generalized_average.to_bits(), b.generalized_average.to_bits());
        prop_assert_eq!(a.gamma_tilde.to_bits(), b.gamma_tilde.to_bits());
    }

    #[test]
    fn channel_json_is_bit_exact(seed: u64, d in 1usize..=3, env in 1usize..=3) {
        let ch = random_channel(RandomChannel::Stinespring { dim_in: d, dim_out: d, env }, &mut seeded_rng(seed)).unwrap();
        let (back, _) = KrausChannel::from_json_str(&ch.to_json_string()).unwrap();
        prop_assert_eq!(back, ch);
    }
}
