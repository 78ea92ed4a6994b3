use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use stat_core::autodiff::Tape;
use stat_core::encoder::{Encoder, EncoderConfig, LAYER_NORM_EPS};
use stat_core::params::ParameterStore;
use stat_core::rng::StreamRng;

fn build(layers: usize, heads: usize, head_dim: usize, dropout: f64, seed: u64) -> (ParameterStore, Encoder) {
    let mut store = ParameterStore::new();
    let mut rng = StreamRng::seed_from_u64(seed);
    let dim = heads * head_dim;
    let config = EncoderConfig { layers, dim, heads, ff_dim: 2 * dim, dropout, seed };
    let encoder = Encoder::new(&mut store, config, &mut rng).unwrap();
    // Larger weights than the default init so attention is far from uniform.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(".w") {
            let shape = store.get(id).dim();
            let fresh = Array2::from_shape_fn(shape, |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.4 * z
            });
            store.get_mut(id).assign(&fresh);
        }
    }
    (store, encoder)
}

fn input(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = StreamRng::seed_from_u64(seed ^ 0xABCD);
    Array2::from_shape_fn((rows, dim), |_| StandardNormal.sample(&mut rng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shape_is_preserved(layers in 1usize..4, heads in 1usize..4, head_dim in 1usize..5, rows in 1usize..12, seed in any::<u64>()) {
        let (store, enc) = build(layers, heads, head_dim, 0.0, seed);
        let x = input(rows, heads * head_dim, seed);
        let out = enc.encode(&store, &x).unwrap();
        prop_assert_eq!(out.output.dim(), x.dim());
        prop_assert_eq!(out.layers.len(), layers);
    }

    #[test]
    fn attention_rows_are_distributions(heads in 1usize..4, rows in 2usize..10, seed in any::<u64>()) {
        let (store, enc) = build(2, heads, 4, 0.0, seed);
        let out = enc.encode(&store, &input(rows, heads * 4, seed)).unwrap();
        for layer in &out.layers {
            prop_assert_eq!(layer.attention.len(), heads);
            for a in &layer.attention {
                for row in a.rows() {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                    prop_assert!(row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(seed in any::<u64>()) {
        let (store, enc) = build(3, 2, 4, 0.0, seed);
        let x = input(7, 8, seed);
        let out = enc.encode(&store, &x).unwrap();
        for (row, got) in x.rows().into_iter().zip(out.layers[0].normalized.rows()) {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            for (v, g) in row.iter().zip(got) {
                prop_assert!(((v - mean) / (var + LAYER_NORM_EPS).sqrt() - g).abs() < 1e-12);
            }
        }
        // The epsilon makes every normalized variance v / (v + eps), just below one.
        for layer in &out.layers {
            for row in layer.normalized.rows() {
                let mean = row.mean().unwrap();
                let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!(var < 1.0 && var > 0.99, "variance {}", var);
            }
        }
    }

    /// Without any position information self-attention cannot tell rows
    /// apart: permuting rows 1.. permutes the output the same way.
    #[test]
    fn permutation_equivariance_without_positions(seed in any::<u64>()) {
        let (store, enc) = build(2, 2, 4, 0.0, seed);
        let x = input(7, 8, seed);
        let base = enc.encode(&store, &x).unwrap().output;
        let mut order: Vec<usize> = (1..7).collect();
        order.shuffle(&mut StreamRng::seed_from_u64(seed));
        let mut permuted = x.clone();
        for (dst, &src) in order.iter().enumerate() {
            permuted.row_mut(dst + 1).assign(&x.row(src));
        }
        let out = enc.encode(&store, &permuted).unwrap().output;
        for j in 0..8 {
            prop_assert!((out[[0, j]] - base[[0, j]]).abs() < 1e-12);
        }
        for (dst, &src) in order.iter().enumerate() {
            for j in 0..8 {
                prop_assert!((out[[dst + 1, j]] - base[[src, j]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn deterministic_without_dropout() {
    let (store, enc) = build(2, 2, 4, 0.1, 3);
    let x = input(6, 8, 3);
    let a = enc.encode(&store, &x).unwrap();
    let b = enc.encode(&store, &x).unwrap();
    assert_eq!(a, b);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let pass = enc.forward(&mut tape, &store, v, None).unwrap();
    assert_eq!(tape.value(pass.output), &a.output);
}

#[test]
fn dropout_changes_outputs_reproducibly() {
    let (store, enc) = build(2, 2, 4, 0.3, 3);
    let x = input(6, 8, 3);
    let run = |seed: u64| {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let mut rng = StreamRng::seed_from_u64(seed);
        let pass = enc.forward(&mut tape, &store, v, Some(&mut rng)).unwrap();
        tape.value(pass.output).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert_ne!(run(1), enc.encode(&store, &x).unwrap().output);
}

#[test]
fn wrong_width_rejected() {
    let (store, enc) = build(1, 2, 4, 0.0, 0);
    assert!(enc.encode(&store, &input(3, 6, 0)).is_err());
    let mut bad = input(3, 8, 0);
    bad[[1, 1]] = f64::NAN;
    assert!(enc.encode(&store, &bad).is_err());
}
