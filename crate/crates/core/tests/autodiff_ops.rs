use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spider_recon::autodiff::gradcheck::check_gradients;
use spider_recon::autodiff::{AutodiffError, BilinearTap, ParamStore, Tape, Tensor, Var};

mod support;
use support::*;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn assert_check(inputs: &[Tensor<f64>], seed: u64, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>) {
    let c = check_gradients(inputs, H, |t, v| {
        let out = f(t, v)?;
        weighted_sum(t, out, seed)
    })
    .unwrap();
    let e = c.max_relative_error();
    assert!(e < TOL, "relative error {e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn elementwise_binary_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = small_shape(&mut rng);
        let a = rand_tensor(&mut rng, &s);
        let b = rand_tensor(&mut rng, &s);
        let d = away_from_zero(&mut rng, &s);
        assert_check(&[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1]));
        assert_check(&[a.clone(), b.clone()], seed, |t, v| t.sub(v[0], v[1]));
        assert_check(&[a.clone(), b], seed, |t, v| t.mul(v[0], v[1]));
        assert_check(&[a, d], seed, |t, v| t.div(v[0], v[1]));
    }

    #[test]
    fn elementwise_unary_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = small_shape(&mut rng);
        let a = rand_tensor(&mut rng, &s);
        let k = away_from_zero(&mut rng, &s);
        let p = positive(&mut rng, &s);
        let c = rng.gen_range(-2.0..2.0);
        assert_check(&[a.clone()], seed, |t, v| t.scale(v[0], c));
        assert_check(&[a.clone()], seed, |t, v| t.add_scalar(v[0], c));
        assert_check(&[a.clone()], seed, |t, v| t.exp(v[0]));
        assert_check(&[k.clone()], seed, |t, v| t.abs(v[0]));
        assert_check(&[k], seed, |t, v| t.relu(v[0]));
        assert_check(&[p], seed, |t, v| t.log(v[0]));
        let n = a.numel();
        assert_check(&[a], seed, |t, v| t.reshape(v[0], &[n]));
    }

    #[test]
    fn reductions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = small_shape(&mut rng);
        let a = rand_tensor(&mut rng, &s);
        assert_check(&[a.clone()], seed, |t, v| t.sum(v[0]));
        assert_check(&[a], seed, |t, v| t.mean(v[0]));
    }

    #[test]
    fn linear_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
        let x = rand_tensor(&mut rng, &[m, k]);
        let w = rand_tensor(&mut rng, &[k, n]);
        let b = rand_tensor(&mut rng, &[n]);
        assert_check(&[x.clone(), w.clone(), b], seed, |t, v| t.linear(v[0], v[1], Some(v[2])));
        assert_check(&[x, w], seed, |t, v| t.linear(v[0], v[1], None));
    }

    #[test]
    fn conv2d_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nb, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        for k in [1, 3] {
            let x = rand_tensor(&mut rng, &[nb, cin, h, w]);
            let wt = rand_tensor(&mut rng, &[cout, cin, k, k]);
            let b = rand_tensor(&mut rng, &[cout]);
            assert_check(&[x, wt, b], seed, |t, v| t.conv2d(v[0], v[1], Some(v[2])));
        }
    }

    #[test]
    fn pooling_and_upsampling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nb, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
        let (h, w) = (2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4));
        let x = rand_tensor(&mut rng, &[nb, c, h, w]);
        assert_check(&[x.clone()], seed, |t, v| t.avg_pool2(v[0]));
        assert_check(&[x], seed, |t, v| t.upsample2(v[0]));
    }

    #[test]
    fn concat_and_narrow(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = small_shape(&mut rng);
        let axis = rng.gen_range(0..s.len());
        let a = rand_tensor(&mut rng, &s);
        s[axis] = rng.gen_range(1..4);
        let b = rand_tensor(&mut rng, &s);
        assert_check(&[a.clone(), b], seed, |t, v| t.concat(&[v[0], v[1]], axis));
        let len = a.shape[axis];
        let start = rng.gen_range(0..len);
        let take = rng.gen_range(1..=len - start);
        assert_check(&[a], seed, |t, v| t.narrow(v[0], axis, start, take));
    }

    #[test]
    fn softmax_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = small_shape(&mut rng);
        let a = rand_tensor(&mut rng, &s);
        assert_check(&[a], seed, |t, v| t.softmax(v[0]));
    }

    #[test]
    fn gather_rows_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, f) = (rng.gen_range(1..6), rng.gen_range(1..4));
        let table = rand_tensor(&mut rng, &[r, f]);
        let idx: Vec<u32> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0..r as u32)).collect();
        assert_check(&[table], seed, |t, v| t.gather_rows(v[0], idx.clone()));
    }

    #[test]
    fn bilinear_sample_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(2..6), rng.gen_range(2..6));
        let map = rand_tensor(&mut rng, &[c, h, w]);
        let taps: Vec<Option<BilinearTap<f64>>> = (0..rng.gen_range(1..8))
            .map(|_| {
                if rng.gen_bool(0.2) {
                    None
                } else {
                    Some(BilinearTap {
                        x0: rng.gen_range(0..w as u32 - 1),
                        y0: rng.gen_range(0..h as u32 - 1),
                        fx: rng.gen(),
                        fy: rng.gen(),
                    })
                }
            })
            .collect();
        assert_check(&[map], seed, |t, v| t.bilinear_sample(v[0], taps.clone()));
    }

    #[test]
    fn trilinear_blend_op(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, f) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let x = rand_tensor(&mut rng, &[8 * p, f]);
        let w: Vec<f64> = (0..8 * p).map(|_| rng.gen()).collect();
        assert_check(&[x], seed, |t, v| t.trilinear_blend(v[0], w.clone()));
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let w = rand_tensor(&mut rng, &[4, 2]);
        let grad = |ca: f64, cb: f64| {
            let mut t = Tape::new();
            let xv = t.variable(x.clone()).unwrap();
            let wv = t.constant(w.clone()).unwrap();
            let y = t.linear(xv, wv, None).unwrap();
            let l1 = t.sum(y).unwrap();
            let sq = t.mul(xv, xv).unwrap();
            let l2 = t.mean(sq).unwrap();
            let a1 = t.scale(l1, ca).unwrap();
            let b2 = t.scale(l2, cb).unwrap();
            let l = t.add(a1, b2).unwrap();
            t.gradients(l).unwrap().get(xv).unwrap().to_vec()
        };
        let (g1, g2, g) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(a, b));
        for k in 0..g.len() {
            prop_assert!((g[k] - (a * g1[k] + b * g2[k])).abs() < 1e-12);
        }
    }
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (nb, cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (cout, k) = (w.shape[0], w.shape[2]);
    let p = (k / 2) as isize;
    let mut out = vec![0.0; nb * cout * h * wd];
    for n in 0..nb {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p;
                                let sx = xx as isize + kx as isize - p;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    s += w.data[((co * cin + ci) * k + ky) * k + kx]
                                        * x.data[((n * cin + ci) * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                    }
                    out[((n * cout + co) * h + y) * wd + xx] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[2, 3, 5, 4]);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
    let b = rand_tensor(&mut rng, &[4]);
    let mut t = Tape::new();
    let (xv, wv, bv) = (t.constant(x.clone()).unwrap(), t.constant(w.clone()).unwrap(), t.constant(b.clone()).unwrap());
    let y = t.conv2d(xv, wv, Some(bv)).unwrap();
    let want = naive_conv(&x, &w, &b.data);
    for (a, e) in t.value(y).unwrap().data.iter().zip(&want) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn identity_kernel_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[1, 2, 4, 5]);
    let mut w = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
    w.data[4] = 1.0; // out 0 <- in 0 centre
    w.data[3 * 9 + 4] = 1.0; // out 1 <- in 1 centre
    let mut t = Tape::new();
    let xv = t.constant(x.clone()).unwrap();
    let wv = t.constant(w).unwrap();
    let y = t.conv2d(xv, wv, None).unwrap();
    assert_eq!(t.value(y).unwrap().data, x.data);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[3])).unwrap();
    let y = t.softmax(x).unwrap();
    for &v in &t.value(y).unwrap().data {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn bilinear_at_integer_pixel_returns_that_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let map = rand_tensor(&mut rng, &[3, 4, 5]);
    let mut t = Tape::new();
    let m = t.constant(map.clone()).unwrap();
    let y = t.bilinear_sample(m, vec![Some(BilinearTap { x0: 2, y0: 1, fx: 0.0, fy: 0.0 }), None]).unwrap();
    let v = &t.value(y).unwrap().data;
    for c in 0..3 {
        assert_eq!(v[c], map.data[c * 20 + 5 + 2]);
        assert_eq!(v[3 + c], 0.0);
    }
}

#[test]
fn sum_gradient_is_all_ones_and_relu_kink_is_zero() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::new(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap()).unwrap();
    let s = t.sum(x).unwrap();
    assert_eq!(t.gradients(s).unwrap().get(x).unwrap(), &[1.0; 4]);
    let r = t.relu(x).unwrap();
    let s = t.sum(r).unwrap();
    assert_eq!(t.gradients(s).unwrap().get(x).unwrap(), &[0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn parameter_gradients_accumulate_and_unused_stay_zero() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    let unused = store.add("b", Tensor::new(&[1], vec![5.0]).unwrap()).unwrap();
    for _ in 0..2 {
        let mut t = Tape::new();
        let av = t.param(&store, a).unwrap();
        let sq = t.mul(av, av).unwrap();
        let l = t.sum(sq).unwrap();
        t.backward(l, &mut store).unwrap();
    }
    assert_eq!(store.get(a).grad, vec![4.0, 8.0]);
    assert_eq!(store.get(unused).grad, vec![0.0]);
}

#[test]
fn errors_are_reported() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = t.constant(Tensor::zeros(&[3, 2])).unwrap();
    let e = t.add(a, b).unwrap_err();
    assert!(matches!(e, AutodiffError::Shape(ref m) if m.contains("add") && m.contains("[2, 3]")));
    assert!(matches!(t.gradients(a), Err(AutodiffError::Usage(_))));
    let mut other = Tape::<f64>::new();
    let s = other.constant(Tensor::scalar(1.0)).unwrap();
    assert!(matches!(t.gradients(s), Err(AutodiffError::Usage(_))));
    let z = t.constant(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(t.log(z), Err(AutodiffError::NonFinite { op: "log" })));
}

#[test]
fn same_inputs_give_identical_bits() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let mut t = Tape::new();
        let xv = t.variable(x).unwrap();
        let wv = t.variable(w).unwrap();
        let y = t.conv2d(xv, wv, None).unwrap();
        let y = t.avg_pool2(y).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.gradients(s).unwrap();
        (t.value(s).unwrap().item().to_bits(), g.get(wv).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
