use lightning_core::fixture::{format_fixture, parse_fixture};
use lightning_core::verify::{compare, stream_chunks};
use lightning_core::{
    attention_inputs, decay_mask, oracle_backward, oracle_forward, random_matrix,
    recurrent_forward, tiled_backward, tiled_forward, upstream_grad, Decay, Matrix, Seed,
};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn within(candidate: &Matrix<f64>, reference: &Matrix<f64>, tol: f64) -> Result<(), TestCaseError> {
    let r = compare(candidate, reference, tol).unwrap();
    prop_assert!(r.passed, "{}", r);
    Ok(())
}

prop_compose! {
    fn problem()(n in 1usize..48, d in 1usize..9, extra in 0usize..4,
                 lambda in prop_oneof![Just(1.0), Just(0.5), 0.3f64..1.0],
                 seed in any::<u64>()) -> (usize, usize, usize, f64, u64) {
        (n, d, d + extra, lambda, seed)
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn mask_structure(n in 1usize..40, lambda in 0.05f64..=1.0) {
        let m = decay_mask::<f64>(n, Decay::new(lambda).unwrap()).m;
        for s in 0..n {
            prop_assert_eq!(m.get(s, s), 1.0);
            for t in s + 1..n {
                prop_assert_eq!(m.get(s, t), 0.0);
            }
            if s + 1 < n {
                for t in 0..=s {
                    prop_assert_eq!(m.get(s, t) * lambda, m.get(s + 1, t));
                }
            }
        }
    }

    #[test]
    fn oracle_and_recurrence_agree((n, d, dv, lambda, seed) in problem()) {
        let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
        let decay = Decay::new(lambda).unwrap();
        let o = oracle_forward(&q, &k, &v, decay).unwrap();
        let (r, st) = recurrent_forward(&q, &k, &v, decay).unwrap();
        within(&r, &o, 1e-11)?;
        prop_assert_eq!(st.tokens_absorbed, n);
    }

    #[test]
    fn tiled_matches_oracle_for_any_block((n, d, dv, lambda, seed) in problem(), block in 1usize..60) {
        let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
        let d_out = upstream_grad::<f64>(n, dv, Seed(seed));
        let decay = Decay::new(lambda).unwrap();
        let o = oracle_forward(&q, &k, &v, decay).unwrap();
        let t = tiled_forward(&q, &k, &v, decay, block).unwrap();
        within(&t.output, &o, 1e-10)?;

        let g = oracle_backward(&q, &k, &v, &d_out, decay).unwrap();
        let tg = tiled_backward(&q, &k, &v, &d_out, decay, block).unwrap();
        within(&tg.dq, &g.dq, 1e-10)?;
        within(&tg.dk, &g.dk, 1e-10)?;
        within(&tg.dv, &g.dv, 1e-10)?;
    }

    #[test]
    fn block_size_invariance((n, d, dv, lambda, seed) in problem(), b1 in 1usize..20, b2 in 1usize..70) {
        let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
        let decay = Decay::new(lambda).unwrap();
        let a = tiled_forward(&q, &k, &v, decay, b1).unwrap();
        let b = tiled_forward(&q, &k, &v, decay, b2).unwrap();
        within(&a.output, &b.output, 1e-10)?;
    }

    #[test]
    fn any_partition_streams_to_the_one_shot_result(
        (n, d, dv, lambda, seed) in problem(),
        block in 1usize..12,
        cuts in proptest::collection::vec(1usize..20, 1..12),
    ) {
        let mut lengths = Vec::new();
        let mut left = n;
        for c in cuts {
            if left == 0 { break; }
            let l = c.min(left);
            lengths.push(l);
            left -= l;
        }
        if left > 0 { lengths.push(left); }
        let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
        let decay = Decay::new(lambda).unwrap();
        let one = tiled_forward(&q, &k, &v, decay, block).unwrap();
        let (s, st) = stream_chunks(&q, &k, &v, decay, block, &lengths).unwrap();
        within(&s, &one.output, 1e-10)?;
        prop_assert_eq!(st.tokens_absorbed, n);
    }

    #[test]
    fn unit_decay_is_cumulative_linear_attention((n, d, dv, _l, seed) in problem()) {
        let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
        let o = oracle_forward(&q, &k, &v, Decay::new(1.0).unwrap()).unwrap();
        let mut prefix = vec![0.0; d * dv];
        let mut expected = Vec::with_capacity(n * dv);
        for t in 0..n {
            for i in 0..d {
                for j in 0..dv {
                    prefix[i * dv + j] += k.get(t, i) * v.get(t, j);
                }
            }
            for j in 0..dv {
                expected.push((0..d).map(|i| q.get(t, i) * prefix[i * dv + j]).sum::<f64>());
            }
        }
        within(&o, &Matrix::new(n, dv, expected).unwrap(), 1e-10)?;
    }

    #[test]
    fn repeated_calls_are_pure((n, d, dv, lambda, seed) in problem(), block in 1usize..16) {
        let (q, k, v) = attention_inputs::<f64>(n, d, dv, Seed(seed));
        let snapshot = (q.clone(), k.clone(), v.clone());
        let decay = Decay::new(lambda).unwrap();
        let a = tiled_forward(&q, &k, &v, decay, block).unwrap();
        let b = tiled_forward(&q, &k, &v, decay, block).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!((q, k, v), snapshot);
    }

    #[test]
    fn fixture_round_trip(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
        let m = random_matrix::<f64>(rows, cols, Seed(seed));
        prop_assert_eq!(parse_fixture::<f64>(&format_fixture(&m)).unwrap(), m.clone());
        prop_assert_eq!(random_matrix::<f64>(rows, cols, Seed(seed)), m);
        let s = random_matrix::<f32>(rows, cols, Seed(seed));
        prop_assert_eq!(parse_fixture::<f32>(&format_fixture(&s)).unwrap(), s);
    }
}
