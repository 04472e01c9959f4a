use proptest::prelude::*;
use rand::Rng;
use shadingnet_core::ops::{Activation, Conv2dConfig};
use shadingnet_core::rng::chacha;
use shadingnet_core::{Shape, Tape, Tensor};

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = chacha(seed);
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_extent_formula(h in 1usize..12, w in 1usize..12, k in prop::sample::select(vec![1usize, 3, 5]),
                           stride in 1usize..3, padding in 0usize..3, dilation in 1usize..3, seed in any::<u64>()) {
        let cfg = Conv2dConfig { stride, padding, dilation };
        let span = dilation * (k - 1) + 1;
        let mut tape = Tape::new();
        let x = tape.constant(random(Shape::new(1, 2, h, w), seed));
        let wt = tape.constant(random(Shape::new(3, 2, k, k), seed ^ 1));
        let out = tape.conv2d(x, wt, None, cfg);
        if h + 2 * padding < span || w + 2 * padding < span {
            prop_assert!(out.is_err());
        } else {
            let s = tape.shape(out.unwrap());
            prop_assert_eq!((s.h, s.w), ((h + 2 * padding - span) / stride + 1, (w + 2 * padding - span) / stride + 1));
        }
    }

    #[test]
    fn same_padding_preserves_extent(h in 1usize..10, w in 1usize..10, k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..4) {
        let mut tape = Tape::new();
        let x = tape.constant(random(Shape::new(1, 1, h, w), 0));
        let wt = tape.constant(random(Shape::new(1, 1, k, k), 1));
        let y = tape.conv2d(x, wt, None, Conv2dConfig::same(k, d)).unwrap();
        prop_assert_eq!(tape.shape(y), Shape::new(1, 1, h, w));
    }

    #[test]
    fn second_backward_doubles(seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.leaf(random(Shape::new(2, 2, 4, 4), seed).with_grad());
        let wt = tape.leaf(random(Shape::new(3, 2, 3, 3), seed ^ 1).with_grad());
        let y = tape.conv2d(x, wt, None, Conv2dConfig::same(3, 1)).unwrap();
        let y = tape.activation(y, Activation::Sigmoid);
        let y = tape.upsample_bilinear2x(y);
        let l = tape.mean(y);
        tape.backward(l).unwrap();
        let first = (tape.grad(x).unwrap().to_vec(), tape.grad(wt).unwrap().to_vec());
        tape.backward(l).unwrap();
        for (a, b) in tape.grad(x).unwrap().iter().zip(&first.0).chain(tape.grad(wt).unwrap().iter().zip(&first.1)) {
            prop_assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn forward_is_deterministic_and_finite(seed in any::<u64>()) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(random(Shape::new(2, 4, 6, 6), seed));
            let k = tape.constant(random(Shape::vector(5), seed ^ 2));
            let g = tape.eca_gate(x, k).unwrap();
            let u = tape.upsample_bilinear2x(g);
            let r = tape.activation(u, Activation::LeakyRelu(0.01));
            tape.value(r).clone()
        };
        let a = run();
        prop_assert!(a.all_finite());
        let b = run();
        prop_assert_eq!(a.data(), b.data());
    }
}
