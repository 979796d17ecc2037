use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfn_tensor::optim::{Adam, LrSchedule};
use tfn_tensor::{attention_probs, checkpoint, Conv2dSpec, Graph, ParamStore, Tensor};

fn vals(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-3.0f32..3.0, n)
}

fn attn_case() -> impl Strategy<Value = (usize, usize, usize, usize, Vec<f32>, Vec<f32>, Vec<f32>)> {
    (1usize..4, 1usize..7, 1usize..7, 1usize..6).prop_flat_map(|(g, nq, nk, d)| {
        (
            Just(g),
            Just(nq),
            Just(nk),
            Just(d),
            vals(g * nq * d),
            vals(g * nk * d),
            vals(g * nk * d),
        )
    })
}

proptest! {
    #[test]
    fn attention_rows_are_distributions_and_outputs_in_hull((g, nq, nk, d, q, k, v) in attn_case()) {
        for gi in 0..g {
            let probs = attention_probs(&q[gi * nq * d..(gi + 1) * nq * d], &k[gi * nk * d..(gi + 1) * nk * d], nq, nk, d);
            for row in probs.chunks(nk) {
                let s: f64 = row.iter().map(|&p| p as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
        let mut gr = Graph::<f32>::detached();
        let qn = gr.constant(Tensor::new(&[g, nq, d], q).unwrap());
        let kn = gr.constant(Tensor::new(&[g, nk, d], k).unwrap());
        let vn = gr.constant(Tensor::new(&[g, nk, d], v.clone()).unwrap());
        let o = gr.attention(qn, kn, vn, None).unwrap();
        let out = gr.value(o).data();
        for gi in 0..g {
            for c in 0..d {
                let col = (0..nk).map(|j| v[(gi * nk + j) * d + c]);
                let lo = col.clone().fold(f32::INFINITY, f32::min);
                let hi = col.fold(f32::NEG_INFINITY, f32::max);
                for i in 0..nq {
                    let y = out[(gi * nq + i) * d + c];
                    prop_assert!(y >= lo - 1e-5 && y <= hi + 1e-5, "{y} outside [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic(seed in 0u64..1000, h in 3usize..9, w in 3usize..9) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ParamStore::<f32>::new();
            let x = s.add_uniform("x", &[2, 3, h, w], 1.0, &mut rng).unwrap();
            let k = s.add_uniform("k", &[3, 1, 3, 3], 1.0, &mut rng).unwrap();
            let pw = s.add_uniform("pw", &[4, 3, 1, 1], 1.0, &mut rng).unwrap();
            let lw = s.add_uniform("lw", &[w, 5], 1.0, &mut rng).unwrap();
            let mut g = Graph::no_grad(&s);
            let (x, k, pw, lw) = (g.param(x), g.param(k), g.param(pw), g.param(lw));
            let y = g.conv2d(x, k, None, Conv2dSpec::same(3, 1, 3)).unwrap();
            let y = g.conv2d(y, pw, None, Conv2dSpec::same(1, 1, 1)).unwrap();
            let y = g.gelu(y);
            let y = g.linear(y, lw, None).unwrap();
            let y = g.reshape(y, &[8, h, 5]).unwrap();
            let y = g.attention(y, y, y, None).unwrap();
            g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise(seed in 0u64..1000, steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::<f32>::new();
        let w = s.add_uniform("w", &[3, 2], 1.0, &mut rng).unwrap();
        let x = Tensor::new(&[4, 3], (0..12).map(|i| i as f32 * 0.1).collect()).unwrap();
        let before = s.value(w).clone();
        let mut opt = Adam::new(LrSchedule::new(0.0, 10, 0.1));
        for _ in 0..steps {
            let grads = {
                let mut g = Graph::new(&s);
                let xn = g.constant(x.clone());
                let wn = g.param(w);
                let y = g.linear(xn, wn, None).unwrap();
                let y2 = g.mul(y, y).unwrap();
                let l = g.sum(y2);
                g.backward(l).unwrap()
            };
            prop_assert!(grads.all_finite());
            opt.step(&mut s, &grads).unwrap();
        }
        prop_assert_eq!(s.value(w), &before);
    }

    #[test]
    fn schedule_is_bounded_and_peaks(peak in 1e-6f64..1.0, total in 1usize..500, frac in 0.0f64..0.5) {
        let s = LrSchedule::new(peak, total, frac);
        let lrs: Vec<f64> = (0..=total + 3).map(|k| s.lr_at_step(k)).collect();
        let max = lrs.iter().copied().fold(0.0, f64::max);
        prop_assert!((max - peak).abs() <= peak * 1e-12);
        prop_assert!(lrs.iter().all(|&l| l >= 0.0 && l <= peak * (1.0 + 1e-12)));
        prop_assert_eq!(s.lr_at_step(total), 0.0);
        prop_assert_eq!(s.lr_at_step(total + 3), 0.0);
    }

    #[test]
    fn tensor_length_matches_shape(shape in prop::collection::vec(0usize..5, 0..4), extra in 1usize..3) {
        let n: usize = shape.iter().product();
        prop_assert!(Tensor::<f32>::new(&shape, vec![0.0; n]).is_ok());
        prop_assert!(Tensor::<f32>::new(&shape, vec![0.0; n + extra]).is_err());
    }

    #[test]
    fn checkpoint_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..3), 1..5), seed in 0u64..100) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::<f32>::new();
        for (i, sh) in shapes.iter().enumerate() {
            s.add_uniform(&format!("t{i}"), sh, 2.0, &mut rng).unwrap();
        }
        let stem = dir.path().join("w");
        checkpoint::save(&s, &stem, "").unwrap();
        let back = checkpoint::read(&stem).unwrap();
        prop_assert_eq!(back.len(), shapes.len());
        for (e, t) in back {
            let id = s.require(&e.name).unwrap();
            prop_assert_eq!(s.value(id), &t);
        }
    }
}

#[test]
fn every_reachable_gradient_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::<f32>::new();
    let x = s.add_uniform("x", &[2, 4, 6], 1.0, &mut rng).unwrap();
    let g1 = s.add_const("g", &[6], 1.0).unwrap();
    let b1 = s.add_const("b", &[6], 0.0).unwrap();
    let mut g = Graph::new(&s);
    let (xn, gn, bn) = (g.param(x), g.param(g1), g.param(b1));
    let y = g.layer_norm(xn, gn, bn, 1e-5).unwrap();
    let y = g.attention(y, y, y, None).unwrap();
    let y = g.softmax(y).unwrap();
    let l = g.mean(y);
    let grads = g.backward(l).unwrap();
    assert!(grads.all_finite());
    for id in [x, g1, b1] {
        assert_eq!(grads.param(id).unwrap().shape(), s.value(id).shape());
    }
}
