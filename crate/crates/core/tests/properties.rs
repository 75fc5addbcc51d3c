//! Randomized invariants over generated inputs: transform round trips and
//! energy, generator laws, normalization bounds, and dataset structure.

use proptest::prelude::*;

use wersa_core::spectral::{
    linear_attention, phi, NormMode, RInit, RandomFeatureMap, WhichR, DENOM_EPS,
};
use wersa_core::tensor::Tensor;
use wersa_core::wavelet::{dwt_packed, idwt_packed, packed_blocks, padded_len};
use wersa_core::model::{make_toy_task, MARKER_TOKEN};
use wersa_core::RngState;

fn tensor_in(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let len: usize = shape.iter().product();
    prop::collection::vec(lo..hi, len)
        .prop_map(move |data| Tensor::new(shape.clone(), data).expect("matching length"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_roundtrip_and_energy_hold_for_any_signal(
        n in 1usize..48,
        d in 1usize..4,
        levels in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let x = wersa_core::tensor::sample_gaussian(&mut rng, &[1, 2, n, d]);
        let packed = dwt_packed(&x, levels).unwrap();
        let back = idwt_packed(&packed, levels, n).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
        let ex = x.frobenius_norm().powi(2);
        let ep = packed.frobenius_norm().powi(2);
        prop_assert!((ex - ep).abs() <= 1e-9 * ex.max(1e-12));
    }

    #[test]
    fn haar_is_linear(
        n in 1usize..32,
        levels in 1usize..3,
        a in -4.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let mut rng = RngState::new(seed);
        let x = wersa_core::tensor::sample_gaussian(&mut rng, &[1, 1, n, 2]);
        let y = wersa_core::tensor::sample_gaussian(&mut rng, &[1, 1, n, 2]);
        let lhs = dwt_packed(&x.scale(a).add(&y).unwrap(), levels).unwrap();
        let rhs = dwt_packed(&x, levels).unwrap().scale(a)
            .add(&dwt_packed(&y, levels).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn packed_blocks_tile_the_padded_length(n in 1usize..4096, levels in 1usize..6) {
        let padded = padded_len(n, levels).unwrap();
        let blocks = packed_blocks(padded, levels);
        prop_assert_eq!(blocks.len(), levels + 1);
        let total: usize = blocks.iter().map(|&(_, len)| len).sum();
        prop_assert_eq!(total, padded);
        // Blocks are contiguous and ordered.
        let mut cursor = 0;
        for &(off, len) in &blocks {
            prop_assert_eq!(off, cursor);
            cursor = off + len;
        }
    }

    #[test]
    fn bounded_draws_respect_the_bound(seed in any::<u64>(), bound in 1usize..1000) {
        let mut rng = RngState::new(seed);
        for _ in 0..50 {
            prop_assert!(rng.next_below(bound) < bound);
        }
    }

    #[test]
    fn shuffle_is_a_permutation(seed in any::<u64>(), len in 0usize..64) {
        let mut items: Vec<usize> = (0..len).collect();
        let mut rng = RngState::new(seed);
        rng.shuffle(&mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        let expect: Vec<usize> = (0..len).collect();
        prop_assert_eq!(sorted, expect);
    }

    #[test]
    fn generator_state_is_position_not_history(seed in any::<u64>()) {
        let mut a = RngState::new(seed);
        for _ in 0..7 {
            a.next_u64();
        }
        let mut b = RngState::from_parts(seed, 7);
        prop_assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn softmax_rows_are_distributions(x in tensor_in(vec![3, 5], -30.0, 30.0)) {
        let y = x.softmax_lastdim();
        for row in y.data().chunks_exact(5) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn normalized_attention_stays_inside_the_value_range(
        q in tensor_in(vec![1, 1, 6, 3], -2.0, 2.0),
        k in tensor_in(vec![1, 1, 6, 3], -2.0, 2.0),
        v in tensor_in(vec![1, 1, 6, 3], -5.0, 5.0),
        seed in any::<u64>(),
    ) {
        let map = RandomFeatureMap::sample(
            &mut RngState::new(seed), 1, 3, 8, 1.0, RInit::Gaussian, false,
        );
        let pq = phi(&q, &map, WhichR::Q).unwrap();
        let pk = phi(&k, &map, WhichR::K).unwrap();
        let out = linear_attention(&pq, &pk, &v, NormMode::Denominator, DENOM_EPS, None).unwrap();
        // Weights are nonnegative and sum to at most 1, so outputs cannot
        // escape the per-column value envelope.
        let vmax = v.data().iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        for &o in out.data() {
            prop_assert!(o.abs() <= vmax + 1e-9, "out {o} vs bound {vmax}");
        }
    }

    #[test]
    fn toy_labels_always_match_the_marker_segment(
        seed in any::<u64>(),
        classes in prop::sample::select(vec![2usize, 4]),
        size in 1usize..40,
    ) {
        let n = 64;
        let data = make_toy_task(seed, n, size, classes, 16);
        prop_assert_eq!(data.len(), size);
        for s in &data {
            let markers: Vec<usize> = s
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == MARKER_TOKEN)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(markers.len(), 1);
            prop_assert_eq!(markers[0] / (n / classes), s.label);
            prop_assert!(s.tokens.iter().all(|&t| t < 16 && t != 0));
        }
    }
}
