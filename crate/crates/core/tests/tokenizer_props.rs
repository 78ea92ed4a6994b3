use ndarray::Array4;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stat_core::data::{TactileTensor, TensorShape};
use stat_core::tokenizer::{detokenize, tokenize, TokenSequence, TubeletConfig, TubeletGrid};
use stat_core::StatError;

fn tensor_from(shape: TensorShape, seed: u64) -> TactileTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array4::from_shape_fn(shape.dims(), |_| rng.random_range(-3.0..3.0));
    TactileTensor::new(values, 30.0).unwrap()
}

/// Shape and tubelet config with every axis divisible.
fn legal() -> impl Strategy<Value = (TensorShape, TubeletConfig, u64)> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4, any::<u64>()).prop_map(
        |(c, l, p, nt, nh, nw, seed)| (TensorShape::new(c, l * nt, p * nh, p * nw), TubeletConfig::new(l, p), seed),
    )
}

#[test]
fn desk_and_paper_grids() {
    let g = TubeletGrid::new(TensorShape::new(1, 45, 32, 32), TubeletConfig::new(5, 4)).unwrap();
    assert_eq!((g.n_tube, g.n_space, g.n_temp), (576, 64, 9));
    assert_eq!(45 * 32 * 32 / (5 * 4 * 4), 576);
    let g = TubeletGrid::new(TensorShape::new(1, 20, 16, 16), TubeletConfig::new(5, 4)).unwrap();
    assert_eq!((g.n_tube, g.n_space, g.n_temp), (64, 16, 4));
    let g = TubeletGrid::new(TensorShape::new(3, 10, 8, 8), TubeletConfig::new(5, 4)).unwrap();
    assert_eq!((g.n_tube, g.n_space, g.n_temp), (24, 12, 2));
}

#[test]
fn single_tubelet_holds_everything() {
    let t = tensor_from(TensorShape::new(1, 5, 4, 4), 3);
    let (grid, tubelets) = tokenize(&t, TubeletConfig::new(5, 4)).unwrap();
    assert_eq!(grid.n_tube, 1);
    assert_eq!(tubelets[0].values, t.values().iter().copied().collect::<Vec<_>>());
}

#[test]
fn indivisible_axes_rejected() {
    let err = TubeletGrid::new(TensorShape::new(1, 44, 32, 32), TubeletConfig::new(5, 4)).unwrap_err();
    assert_eq!(err.to_string(), "T not divisible by L");
    assert!(TubeletGrid::new(TensorShape::new(1, 45, 30, 32), TubeletConfig::new(5, 4)).is_err());
    assert!(TubeletGrid::new(TensorShape::new(1, 45, 32, 30), TubeletConfig::new(5, 4)).is_err());
}

#[test]
fn missing_tubelet_reported() {
    let t = tensor_from(TensorShape::new(1, 10, 8, 8), 1);
    let (grid, mut tubelets) = tokenize(&t, TubeletConfig::new(5, 4)).unwrap();
    tubelets.remove(5);
    let err = detokenize(&grid, &tubelets).unwrap_err();
    assert!(matches!(err, StatError::MissingIndex(5)));
    assert!(err.to_string().starts_with("missing index"));
    let dup = tubelets[0].clone();
    tubelets.push(dup);
    assert!(detokenize(&grid, &tubelets).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_follow_the_formula((shape, cfg, _) in legal()) {
        let g = TubeletGrid::new(shape, cfg).unwrap();
        let (c, t, h, w) = shape.dims();
        prop_assert_eq!(g.n_tube, c * t * h * w / (cfg.frames * cfg.patch * cfg.patch));
        prop_assert_eq!(g.n_space, c * h * w / (cfg.patch * cfg.patch));
        prop_assert_eq!(g.n_temp, t / cfg.frames);
        prop_assert_eq!(g.n_tube, g.n_space * g.n_temp);
    }

    #[test]
    fn round_trip_and_shuffled_reassembly((shape, cfg, seed) in legal()) {
        let t = tensor_from(shape, seed);
        let (grid, mut tubelets) = tokenize(&t, cfg).unwrap();
        prop_assert_eq!(&detokenize(&grid, &tubelets).unwrap(), &t);
        tubelets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&detokenize(&grid, &tubelets).unwrap(), &t);
    }

    #[test]
    fn tubelets_partition_the_tensor((shape, cfg, seed) in legal()) {
        let t = tensor_from(shape, seed);
        let (_, tubelets) = tokenize(&t, cfg).unwrap();
        let mut from_tubelets: Vec<f64> = tubelets.iter().flat_map(|x| x.values.iter().copied()).collect();
        let mut from_tensor: Vec<f64> = t.values().iter().copied().collect();
        from_tubelets.sort_by(f64::total_cmp);
        from_tensor.sort_by(f64::total_cmp);
        prop_assert_eq!(from_tubelets, from_tensor);
    }

    /// Each tubelet against a direct read of the block it claims to cover.
    #[test]
    fn tubelet_contents_match_direct_indexing((shape, cfg, seed) in legal()) {
        let t = tensor_from(shape, seed);
        let (grid, tubelets) = tokenize(&t, cfg).unwrap();
        let (l, p) = (cfg.frames, cfg.patch);
        let (patch_rows, patch_cols) = (shape.rows / p, shape.cols / p);
        for (seq, tb) in tubelets.iter().enumerate() {
            prop_assert_eq!(tb.sequence_index, seq);
            prop_assert_eq!(seq, tb.temporal_index * grid.n_space + tb.spatial_index);
            let device = tb.spatial_index / (patch_rows * patch_cols);
            let within = tb.spatial_index % (patch_rows * patch_cols);
            let (r0, c0) = ((within / patch_cols) * p, (within % patch_cols) * p);
            let mut k = 0;
            for f in 0..l {
                for i in 0..p {
                    for j in 0..p {
                        let v = t.values()[[device, tb.temporal_index * l + f, r0 + i, c0 + j]];
                        prop_assert_eq!(tb.values[k], v);
                        k += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn index_split_is_a_bijection((shape, cfg, _) in legal()) {
        let g = TubeletGrid::new(shape, cfg).unwrap();
        let mut seen = vec![false; g.n_tube];
        for ks in 0..g.n_space {
            for kt in 0..g.n_temp {
                let seq = g.sequence_index(ks, kt);
                prop_assert!(!seen[seq]);
                seen[seq] = true;
                prop_assert_eq!(g.split_index(seq), (ks, kt));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shared_spatial_index_iff_same_patch((shape, cfg, _) in legal()) {
        let g = TubeletGrid::new(shape, cfg).unwrap();
        for a in 0..g.n_tube {
            for b in 0..g.n_tube {
                let (sa, _) = g.split_index(a);
                let (sb, _) = g.split_index(b);
                prop_assert_eq!(sa == sb, g.patch_origin(sa) == g.patch_origin(sb));
            }
        }
    }

    #[test]
    fn token_matrix_matches_tubelets((shape, cfg, seed) in legal()) {
        let t = tensor_from(shape, seed);
        let (grid, tubelets) = tokenize(&t, cfg).unwrap();
        let direct = TokenSequence::from_tensor(&t, &grid).unwrap();
        prop_assert_eq!(direct, TokenSequence::from_tubelets(&tubelets).unwrap());
    }
}
