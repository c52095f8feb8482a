use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use varfield::numerics::{softmax_rows, GradCheck, Graph, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

type Reference = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

/// Checks the graph's reverse-mode gradient for input `which` against
/// central differences (step 1e-3) of an independent f64 reference forward.
/// The scalar probed is a fixed random weighting of the outputs.
fn check_op(
    inputs: &[Tensor],
    which: usize,
    build: &dyn Fn(&mut Graph, &[Var]) -> Var,
    reference: &Reference,
    seed: u64,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let weights = Tensor::randn(g.value(out).shape().to_vec(), 1.0, &mut rng(seed));
    let grads = g.backward_with(vec![(out, weights.clone())]).unwrap();
    let analytic = grads.get_or_zeros(&g, vars[which]);

    let as_f64 = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let expected = reference(&inputs.iter().map(as_f64).collect::<Vec<_>>());
    for (a, b) in g.value(out).data().iter().zip(&expected) {
        assert!((*a as f64 - b).abs() <= 1e-4 * (1.0 + b.abs()), "forward {a} vs {b}");
    }
    let report = GradCheck::with_step(1e-3)
        .run(
            |x| {
                let mut xs: Vec<Vec<f64>> = inputs.iter().map(as_f64).collect();
                xs[which] = as_f64(x);
                Ok(reference(&xs)
                    .iter()
                    .zip(weights.data())
                    .map(|(y, w)| y * *w as f64)
                    .sum())
            },
            &analytic,
            &inputs[which],
        )
        .unwrap();
    report.max_relative_error
}

mod reference {
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    pub fn gelu(x: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
    }

    pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let d = g.len();
        x.chunks(d)
            .flat_map(|row| {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let istd = 1.0 / (var + 1e-5).sqrt();
                row.iter()
                    .enumerate()
                    .map(move |(j, v)| (v - mean) * istd * g[j] + b[j])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn attention(q: &[f64], k: &[f64], v: &[f64], d: usize, heads: usize) -> Vec<f64> {
        let (lq, lk) = (q.len() / d, k.len() / d);
        let dh = d / heads;
        let mut out = vec![0.0f64; lq * d];
        for h in 0..heads {
            for i in 0..lq {
                let mut scores = vec![0.0f64; lk];
                for j in 0..lk {
                    for c in h * dh..(h + 1) * dh {
                        scores[j] += q[i * d + c] * k[j * d + c];
                    }
                    scores[j] /= (dh as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for j in 0..lk {
                    for c in h * dh..(h + 1) * dh {
                        out[i * d + c] += exps[j] / total * v[j * d + c];
                    }
                }
            }
        }
        out
    }
}

#[test]
fn matmul_gradient_is_ones_times_b_transposed() {
    let mut r = rng(1);
    let a = Tensor::randn([5, 7], 1.0, &mut r);
    let b = Tensor::randn([7, 3], 1.0, &mut r);
    let mut g = Graph::new();
    let (va, vb) = (g.param(a.clone()), g.param(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    let expected = Tensor::ones([5, 3]).matmul(&b.transpose().unwrap()).unwrap();
    assert!(grads.get(va).unwrap().max_abs_diff(&expected) < 1e-5);

    for which in 0..2 {
        let err = check_op(
            &[a.clone(), b.clone()],
            which,
            &|g, v| g.matmul(v[0], v[1]).unwrap(),
            &|x| reference::matmul(&x[0], &x[1], 5, 7, 3),
            2,
        );
        assert!(err <= 1e-3, "rel err {err}");
    }
}

#[test]
fn finite_differences_agree_for_every_op() {
    let mut r = rng(7);
    let x = Tensor::randn([4, 6], 1.0, &mut r);
    let y = Tensor::randn([4, 6], 1.0, &mut r);
    let w = Tensor::randn([6, 5], 0.5, &mut r);
    let b = Tensor::randn([5], 0.5, &mut r);
    let gain = Tensor::randn([6], 1.0, &mut r);
    let bias = Tensor::randn([6], 1.0, &mut r);
    let table = Tensor::randn([5, 3], 1.0, &mut r);
    let target = Tensor::randn([4, 6], 1.0, &mut r);
    let z = Tensor::randn([5, 5], 1.0, &mut r);
    let t64: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();

    type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
    type Ref = Box<Reference>;
    let cases: Vec<(&str, Vec<Tensor>, Build, Ref)> = vec![
        (
            "linear",
            vec![x.clone(), w.clone(), b.clone()],
            Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap()),
            Box::new(|x| {
                let mut out = reference::matmul(&x[0], &x[1], 4, 6, 5);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += x[2][i % 5];
                }
                out
            }),
        ),
        (
            "add",
            vec![x.clone(), y.clone()],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
            Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect()),
        ),
        (
            "sub",
            vec![x.clone(), y.clone()],
            Box::new(|g, v| g.sub(v[0], v[1]).unwrap()),
            Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a - b).collect()),
        ),
        (
            "mul",
            vec![x.clone(), y.clone()],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
            Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect()),
        ),
        (
            "scale",
            vec![x.clone()],
            Box::new(|g, v| g.scale(v[0], -1.5)),
            Box::new(|x| x[0].iter().map(|a| -1.5 * a).collect()),
        ),
        (
            "gelu",
            vec![x.clone()],
            Box::new(|g, v| g.gelu(v[0])),
            Box::new(|x| x[0].iter().map(|&a| reference::gelu(a)).collect()),
        ),
        (
            "layer_norm",
            vec![x.clone(), gain.clone(), bias.clone()],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2]).unwrap()),
            Box::new(|x| reference::layer_norm(&x[0], &x[1], &x[2])),
        ),
        (
            "concat+slice+gather",
            vec![x.clone(), z.clone()],
            Box::new(|g, v| {
                let s = g.slice_cols(v[1], 1, 3).unwrap();
                let s = g.gather_rows(s, &[0, 2, 3, 4]).unwrap();
                g.concat_cols(&[v[0], s]).unwrap()
            }),
            Box::new(|x| {
                let mut out = Vec::new();
                for (r, zr) in [0usize, 2, 3, 4].iter().enumerate() {
                    out.extend_from_slice(&x[0][r * 6..r * 6 + 6]);
                    out.extend_from_slice(&x[1][zr * 5 + 1..zr * 5 + 4]);
                }
                out
            }),
        ),
        (
            "gather",
            vec![table.clone()],
            Box::new(|g, v| g.gather_rows(v[0], &[4, 0, 4, 1]).unwrap()),
            Box::new(|x| [4usize, 0, 4, 1].iter().flat_map(|&r| x[0][r * 3..r * 3 + 3].to_vec()).collect()),
        ),
        (
            "mean",
            vec![x.clone()],
            Box::new(|g, v| g.mean(v[0])),
            Box::new(|x| vec![x[0].iter().sum::<f64>() / 24.0]),
        ),
        (
            "mse",
            vec![x.clone()],
            Box::new(move |g, v| g.mse(v[0], target.clone()).unwrap()),
            Box::new(move |x| {
                vec![x[0].iter().zip(&t64).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 24.0]
            }),
        ),
    ];
    for (name, inputs, build, reference) in &cases {
        for which in 0..inputs.len() {
            let err = check_op(inputs, which, build.as_ref(), reference.as_ref(), 11);
            assert!(err <= 1e-3, "{name} input {which}: rel err {err}");
        }
    }
}

#[test]
fn attention_gradients_agree() {
    let mut r = rng(3);
    let q = Tensor::randn([3, 8], 1.0, &mut r);
    let k = Tensor::randn([4, 8], 1.0, &mut r);
    let v = Tensor::randn([4, 8], 1.0, &mut r);
    for which in 0..3 {
        let err = check_op(
            &[q.clone(), k.clone(), v.clone()],
            which,
            &|g, x| g.attention(x[0], x[1], x[2], 2).unwrap(),
            &|x| reference::attention(&x[0], &x[1], &x[2], 8, 2),
            5,
        );
        assert!(err <= 1e-3, "attention input {which}: rel err {err}");
    }
}

#[test]
fn attention_matches_scalar_reference() {
    let mut r = rng(9);
    let q = Tensor::randn([3, 8], 1.0, &mut r);
    let k = Tensor::randn([4, 8], 1.0, &mut r);
    let v = Tensor::randn([4, 8], 1.0, &mut r);
    let mut g = Graph::new();
    let (a, b, c) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = g.attention(a, b, c, 2).unwrap();
    let as_f64 = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let reference = reference::attention(&as_f64(&q), &as_f64(&k), &as_f64(&v), 8, 2);
    for (x, y) in g.value(out).data().iter().zip(&reference) {
        assert!((*x as f64 - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn attention_single_key_and_zero_query() {
    let mut r = rng(4);
    let v = Tensor::randn([1, 4], 1.0, &mut r);
    let mut g = Graph::new();
    let q = g.constant(Tensor::randn([3, 4], 1.0, &mut r));
    let k = g.constant(Tensor::randn([1, 4], 1.0, &mut r));
    let vv = g.constant(v.clone());
    let out = g.attention(q, k, vv, 2).unwrap();
    for i in 0..3 {
        assert_eq!(g.value(out).row(i), v.data());
    }

    let v = Tensor::randn([5, 4], 1.0, &mut r);
    let q = g.constant(Tensor::zeros([2, 4]));
    let k = g.constant(Tensor::randn([5, 4], 1.0, &mut r));
    let vv = g.constant(v.clone());
    let out = g.attention(q, k, vv, 1).unwrap();
    for c in 0..4 {
        let mean: f32 = (0..5).map(|j| v.data()[j * 4 + c]).sum::<f32>() / 5.0;
        assert!((g.value(out).data()[c] - mean).abs() < 1e-6);
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut g = Graph::new();
    let q = g.constant(Tensor::zeros([2, 6]));
    assert!(matches!(
        g.attention(q, q, q, 4),
        Err(varfield::Error::Config(_))
    ));
}

#[test]
fn layer_norm_cases() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::ones([2]));
    let zeros = g.constant(Tensor::zeros([2]));
    let x = g.constant(Tensor::new([2, 2], vec![3.0, 3.0, 1.0, -1.0]).unwrap());
    let y = g.layer_norm(x, ones, zeros).unwrap();
    let out = g.value(y).data();
    assert_eq!(&out[..2], &[0.0, 0.0]);
    assert!((out[2] - 1.0).abs() < 1e-4 && (out[3] + 1.0).abs() < 1e-4);

    let mut r = rng(12);
    let x = g.constant(Tensor::randn([4, 8], 3.0, &mut r));
    let ones = g.constant(Tensor::ones([8]));
    let zeros = g.constant(Tensor::zeros([8]));
    let y = g.layer_norm(x, ones, zeros).unwrap();
    for row in g.value(y).data().chunks(8) {
        let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() <= 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-4, "var {var}");
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(8);
    let mut t = Tensor::randn([6, 9], 4.0, &mut r);
    softmax_rows(t.data_mut(), 9);
    for row in t.data().chunks(9) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() <= 1e-6);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn unused_leaves_get_zero_gradients() {
    let mut g = Graph::new();
    let a = g.param(Tensor::ones([2]));
    let unused = g.param(Tensor::ones([3]));
    let s = g.sum(a);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.get_or_zeros(&g, unused), Tensor::zeros([3]));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn attention_outputs_are_convex_combinations(seed in 0u64..1000, lq in 1usize..5, lk in 1usize..6) {
            let mut r = rng(seed);
            let q = Tensor::randn([lq, 4], 2.0, &mut r);
            let k = Tensor::randn([lk, 4], 2.0, &mut r);
            let v = Tensor::randn([lk, 4], 1.0, &mut r);
            let mut g = Graph::new();
            let (a, b, c) = (g.constant(q), g.constant(k), g.constant(v.clone()));
            let out = g.attention(a, b, c, 2).unwrap();
            for i in 0..lq {
                for col in 0..4 {
                    let lo = (0..lk).map(|j| v.data()[j * 4 + col]).fold(f32::MAX, f32::min);
                    let hi = (0..lk).map(|j| v.data()[j * 4 + col]).fold(f32::MIN, f32::max);
                    let o = g.value(out).data()[i * 4 + col];
                    prop_assert!(o >= lo - 1e-5 && o <= hi + 1e-5);
                }
            }
        }

        #[test]
        fn linear_gradients_match_differences(seed in 0u64..1000) {
            let mut r = rng(seed);
            let x = Tensor::randn([3, 4], 1.0, &mut r);
            let w = Tensor::randn([4, 2], 1.0, &mut r);
            for which in 0..2 {
                let err = check_op(&[x.clone(), w.clone()], which, &|g, v| {
                    let h = g.linear(v[0], v[1], None).unwrap();
                    g.gelu(h)
                }, &|x| reference::matmul(&x[0], &x[1], 3, 4, 2).into_iter().map(reference::gelu).collect(), seed);
                prop_assert!(err <= 1e-3, "rel err {}", err);
            }
        }
    }
}
