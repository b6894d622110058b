//! Property tests for the cross-module invariants.

use proptest::prelude::*;

use slstm::compress::{apply_mask, load_stats, prune_magnitude, PePartition, PruneMask};
use slstm::encode::{decode_csc, encode_csc, unpack_word};
use slstm::matrix::DenseMatrix;
use slstm::quantize::{quantize_slice, FixedFormat, QuantizedTensor};
use slstm::simulate::{simulate_spmv, PushMode};

fn arb_matrix() -> impl Strategy<Value = DenseMatrix> {
    (1usize..24, 1usize..20).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |values| DenseMatrix::new(rows, cols, values).unwrap())
    })
}

/// Masked quantized tensor plus a PE count for codec round trips.
fn arb_encodable() -> impl Strategy<Value = (QuantizedTensor, PruneMask, usize)> {
    (1usize..64, 1usize..24).prop_flat_map(|(rows, cols)| {
        (
            proptest::collection::vec(-2047i32..=2047, rows * cols),
            proptest::collection::vec(any::<bool>(), rows * cols),
            1usize..=rows.min(6),
        )
            .prop_map(move |(integers, kept, n_pe)| {
                (
                    QuantizedTensor {
                        rows,
                        cols,
                        integers,
                        format: FixedFormat::new(12, 4).unwrap(),
                    },
                    PruneMask {
                        rows,
                        cols,
                        kept,
                        target_density: 0.5,
                    },
                    n_pe,
                )
            })
    })
}

proptest! {
    /// decode(encode(x)) restores exactly the mask-kept values.
    #[test]
    fn csc_round_trip((q, mask, n_pe) in arb_encodable()) {
        let (encoded, stats) = encode_csc(&q, &mask, n_pe).unwrap();
        let decoded = decode_csc(&encoded).unwrap();
        for i in 0..q.rows * q.cols {
            let expected = if mask.kept[i] { q.integers[i] } else { 0 };
            prop_assert_eq!(decoded.integers[i], expected);
        }
        // Every index field fits four bits; padding words only ever carry
        // the maximum index.
        let mut pad_count = 0u64;
        for stream in &encoded.pe_streams {
            for &w in &stream.words {
                let (weight, idx) = unpack_word(w);
                prop_assert!(idx <= 15);
                if weight == 0 && idx == 15 {
                    pad_count += 1;
                }
            }
        }
        prop_assert!(pad_count >= stats.padding_words);
    }

    /// A lower-density magnitude mask keeps a subset of a higher one.
    #[test]
    fn magnitude_masks_nest(m in arb_matrix(), lo in 0.05f64..0.5, hi in 0.5f64..1.0) {
        let sparse = prune_magnitude(&m, lo).unwrap();
        let dense = prune_magnitude(&m, hi).unwrap();
        for (s, d) in sparse.kept.iter().zip(&dense.kept) {
            prop_assert!(!s || *d);
        }
    }

    /// Per-PE counts always sum to the mask total, and masking twice is the
    /// same as masking once.
    #[test]
    fn mask_accounting(m in arb_matrix(), density in 0.05f64..1.0, n_pe in 1usize..6) {
        let n_pe = n_pe.min(m.rows());
        let mask = prune_magnitude(&m, density).unwrap();
        let part = PePartition::new(n_pe).unwrap();
        let stats = load_stats(&mask, part).unwrap();
        prop_assert_eq!(stats.per_pe_nnz.iter().sum::<usize>(), mask.nnz());

        let once = apply_mask(&m, &mask).unwrap();
        let twice = apply_mask(&once, &mask).unwrap();
        prop_assert_eq!(once, twice);
    }

    /// Quantization error stays within half a unit in the last place for
    /// in-range values.
    #[test]
    fn quantize_half_ulp(values in proptest::collection::vec(-30.0f64..30.0, 1..64)) {
        let fmt = FixedFormat::new(12, 5).unwrap();
        let q = quantize_slice(&values, fmt);
        let half_ulp = 0.5 / fmt.scale();
        let max = fmt.to_real(fmt.max_code());
        let min = fmt.to_real(fmt.min_code());
        for (&v, &code) in values.iter().zip(&q) {
            if v > min && v < max {
                prop_assert!((v - fmt.to_real(code)).abs() <= half_ulp + 1e-12);
            }
        }
    }

    /// Every stored word costs exactly one PE cycle; utilization rises (or
    /// holds) with queue depth; the makespan never beats the work bound.
    #[test]
    fn spmv_conservation_and_depth_monotonicity((q, mask, n_pe) in arb_encodable()) {
        let (encoded, _) = encode_csc(&q, &mask, n_pe).unwrap();
        let mut last = -1.0f64;
        for depth in [1usize, 2, 4, 8] {
            let sim = simulate_spmv(&encoded, depth, PushMode::Broadcast);
            prop_assert_eq!(sim.per_pe_busy.iter().sum::<u64>(), encoded.total_words());
            prop_assert!(sim.utilization >= last - 1e-12);
            prop_assert!(sim.utilization <= 1.0 + 1e-12);
            let max_work = sim.per_pe_busy.iter().copied().max().unwrap_or(0);
            prop_assert!(sim.makespan >= max_work);
            last = sim.utilization;
        }
    }
}
