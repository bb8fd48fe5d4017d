use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_grad::check::{numeric_grad, relative_error};
use siftleak_grad::{ConvGeom, Tape, Tensor, Var};

const TOL: f64 = 1e-6;
const H: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    // Keep values away from the kinks of relu / abs.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Max relative error between tape gradients and central differences for every input.
fn check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; input.numel()]);
        let numeric = numeric_grad(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, inp)| {
                        let v = if j == k { Tensor::new(inp.shape(), x.to_vec()).unwrap() } else { inp.clone() };
                        t.leaf(v, false)
                    })
                    .collect();
                let l = build(&mut t, &vs);
                t.value(l).item()
            },
            input.data(),
            H,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Reduces any tensor to a scalar through a fixed random projection.
fn project(t: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(t.shape_of(v), &mut rng);
    let w = t.constant(w);
    let p = t.mul(v, w).unwrap();
    t.sum(p)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let a = random(&[2, 3, 4], &mut r);
    let b = random(&[2, 3, 4], &mut r);
    let s = random(&[1], &mut r);
    let cases: Vec<(&str, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>)> = vec![
        ("add", Box::new(|t, v| { let o = t.add(v[0], v[1]).unwrap(); project(t, o, 9) })),
        ("sub", Box::new(|t, v| { let o = t.sub(v[0], v[1]).unwrap(); project(t, o, 9) })),
        ("mul", Box::new(|t, v| { let o = t.mul(v[0], v[1]).unwrap(); project(t, o, 9) })),
        ("scale", Box::new(|t, v| { let o = t.scale(v[0], -2.5); project(t, o, 9) })),
        ("sub_scalar", Box::new(|t, v| { let o = t.sub_scalar(v[0], v[2]).unwrap(); project(t, o, 9) })),
        ("relu", Box::new(|t, v| { let o = t.relu(v[0]); project(t, o, 9) })),
        ("leaky_relu", Box::new(|t, v| { let o = t.leaky_relu(v[0], 0.2); project(t, o, 9) })),
        ("sigmoid", Box::new(|t, v| { let o = t.sigmoid(v[0]); project(t, o, 9) })),
        ("log_sigmoid", Box::new(|t, v| { let o = t.log_sigmoid(v[0]); project(t, o, 9) })),
        ("log", Box::new(|t, v| { let p = t.mul(v[0], v[0]).unwrap(); let o = t.log(p); project(t, o, 9) })),
        ("mean", Box::new(|t, v| { let o = t.mul(v[0], v[1]).unwrap(); t.mean(o) })),
        ("abs_sum", Box::new(|t, v| { let o = t.sub(v[0], v[1]).unwrap(); t.abs_sum(o) })),
        ("sq_sum", Box::new(|t, v| { let o = t.sub(v[0], v[1]).unwrap(); t.sq_sum(o) })),
    ];
    for (name, f) in cases {
        let e = check(&[a.clone(), b.clone(), s.clone()], f);
        assert!(e < TOL, "{name}: relative error {e}");
    }
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(2);
    for &(stride, pad, k, h) in &[(1, 1, 3, 5), (2, 1, 4, 8), (1, 0, 4, 6), (2, 0, 3, 7)] {
        let x = random(&[2, 3, h, h], &mut r);
        let w = random(&[4, 3, k, k], &mut r);
        let b = random(&[4], &mut r);
        let g = ConvGeom { stride, pad };
        let e = check(&[x, w, b], |t, v| {
            let o = t.conv2d(v[0], v[1], Some(v[2]), g).unwrap();
            project(t, o, 3)
        });
        assert!(e < TOL, "conv s{stride} p{pad} k{k}: {e}");
    }
}

#[test]
fn deconv2d_gradients() {
    let mut r = rng(3);
    for &(stride, pad, k, h) in &[(2, 1, 4, 4), (1, 1, 3, 5), (2, 0, 2, 3)] {
        let x = random(&[2, 3, h, h], &mut r);
        let w = random(&[3, 2, k, k], &mut r);
        let b = random(&[2], &mut r);
        let g = ConvGeom { stride, pad };
        let e = check(&[x, w, b], |t, v| {
            let o = t.deconv2d(v[0], v[1], Some(v[2]), g).unwrap();
            project(t, o, 4)
        });
        assert!(e < TOL, "deconv s{stride} p{pad} k{k}: {e}");
    }
}

#[test]
fn normalization_gradients() {
    let mut r = rng(4);
    let x = random(&[2, 3, 3, 4], &mut r);
    let e = check(&[x], |t, v| {
        let o = t.instance_norm(v[0], 1e-5).unwrap();
        project(t, o, 5)
    });
    assert!(e < TOL, "instance_norm: {e}");

    let x = random(&[5, 4], &mut r);
    let gamma = random(&[4], &mut r);
    let beta = random(&[4], &mut r);
    let e = check(&[x.clone(), gamma.clone(), beta.clone()], |t, v| {
        let (o, _) = t.batch_norm(v[0], v[1], v[2], 1e-5).unwrap();
        project(t, o, 6)
    });
    assert!(e < TOL, "batch_norm: {e}");
    let e = check(&[x, gamma, beta], |t, v| {
        let o = t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3, 0.0], &[1.0, 0.5, 2.0, 0.7], 1e-5).unwrap();
        project(t, o, 6)
    });
    assert!(e < TOL, "batch_norm_eval: {e}");
}

#[test]
fn structural_ops() {
    let mut r = rng(5);
    let x = random(&[3, 5], &mut r);
    let w = random(&[4, 5], &mut r);
    let b = random(&[4], &mut r);
    let e = check(&[x, w, b], |t, v| {
        let o = t.linear(v[0], v[1], v[2]).unwrap();
        project(t, o, 7)
    });
    assert!(e < TOL, "linear: {e}");

    let a = random(&[2, 2, 3, 3], &mut r);
    let c = random(&[2, 1, 3, 3], &mut r);
    let e = check(&[a.clone(), c.clone()], |t, v| {
        let o = t.concat(v[0], v[1]).unwrap();
        project(t, o, 8)
    });
    assert!(e < TOL, "concat: {e}");
    let e = check(&[c], |t, v| {
        let o = t.tile_channels(v[0], 3).unwrap();
        project(t, o, 8)
    });
    assert!(e < TOL, "tile: {e}");
    let e = check(&[a], |t, v| {
        let o = t.gram(v[0]).unwrap();
        project(t, o, 8)
    });
    assert!(e < TOL, "gram: {e}");

    let logits = random(&[4, 6], &mut r);
    let e = check(&[logits], |t, v| t.softmax_cross_entropy(v[0], &[0, 5, 2, 2]).unwrap());
    assert!(e < TOL, "softmax_cross_entropy: {e}");
}

#[test]
fn composite_graph() {
    let mut r = rng(6);
    let x = random(&[1, 2, 8, 8], &mut r);
    let w1 = random(&[3, 2, 4, 4], &mut r);
    let w2 = random(&[6, 2, 4, 4], &mut r);
    let target = random(&[1, 2, 8, 8], &mut r);
    let e = check(&[x, w1, w2, target], |t, v| {
        let h = t.conv2d(v[0], v[1], None, ConvGeom { stride: 2, pad: 1 }).unwrap();
        let h = t.instance_norm(h, 1e-5).unwrap();
        let h = t.leaky_relu(h, 0.2);
        let skip = t.concat(h, h).unwrap();
        let y = t.deconv2d(skip, v[2], None, ConvGeom { stride: 2, pad: 1 }).unwrap();
        let y = t.sigmoid(y);
        let d = t.sub(y, v[3]).unwrap();
        let l1 = t.abs_sum(d);
        let g = t.gram(y).unwrap();
        let l2 = t.sq_sum(g);
        t.add(l1, l2).unwrap()
    });
    assert!(e < TOL, "composite: {e}");
}

#[test]
fn conv_and_deconv_are_adjoint() {
    let mut r = rng(7);
    let x = random(&[2, 3, 8, 8], &mut r);
    let w = random(&[5, 3, 4, 4], &mut r);
    let y = random(&[2, 5, 4, 4], &mut r);
    let g = ConvGeom { stride: 2, pad: 1 };
    let mut t = Tape::<f64>::new();
    let (xv, wv, yv) = (t.constant(x.clone()), t.constant(w), t.constant(y.clone()));
    let cx = t.conv2d(xv, wv, None, g).unwrap();
    let dy = t.deconv2d(yv, wv, None, g).unwrap();
    assert_eq!(t.shape_of(dy), x.shape());
    let lhs: f64 = t.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(t.value(dy).data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn conv_matches_direct_sum() {
    let mut r = rng(8);
    let x = random(&[1, 2, 5, 6], &mut r);
    let w = random(&[3, 2, 3, 3], &mut r);
    let g = ConvGeom { stride: 2, pad: 1 };
    let mut t = Tape::<f64>::new();
    let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
    let o = t.conv2d(xv, wv, None, g).unwrap();
    assert_eq!(t.shape_of(o), &[1, 3, 3, 3]);
    let out = t.value(o).data();
    let xg = |c: usize, yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= 5 || xx >= 6 { 0.0 } else { x.data()[(c * 5 + yy as usize) * 6 + xx as usize] }
    };
    for oc in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut s = 0.0;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = w.data()[((oc * 2 + c) * 3 + ky) * 3 + kx];
                            s += wv * xg(c, (oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                        }
                    }
                }
                assert!((out[(oc * 3 + oy) * 3 + ox] - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn instance_norm_ignores_affine_input_changes() {
    let mut r = rng(9);
    let x = random(&[1, 2, 4, 4], &mut r);
    let shifted = Tensor::new(x.shape(), x.data().iter().map(|v| 3.0 * v + 7.0).collect()).unwrap();
    let mut t = Tape::<f64>::new();
    let (a, b) = (t.constant(x), t.constant(shifted));
    let na = t.instance_norm(a, 1e-5).unwrap();
    let nb = t.instance_norm(b, 1e-5).unwrap();
    for (p, q) in t.value(na).data().iter().zip(t.value(nb).data()) {
        assert!((p - q).abs() < 1e-4);
    }
    for plane in t.value(na).data().chunks(16) {
        let m: f64 = plane.iter().sum::<f64>() / 16.0;
        let v: f64 = plane.iter().map(|p| (p - m).powi(2)).sum::<f64>() / 16.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-3);
    }
}

#[test]
fn gram_by_hand() {
    // Two channels on a 1x2 plane: F = [[1, 2], [3, 4]], normalizer C*H*W = 4.
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::new(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let g = t.gram(a).unwrap();
    assert_eq!(t.value(g).data(), &[5.0 / 4.0, 11.0 / 4.0, 11.0 / 4.0, 25.0 / 4.0]);
}

#[test]
fn detached_values_stop_gradients() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
    let d = t.detach(x);
    let p = t.mul(x, d).unwrap();
    let l = t.sum(p);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
    assert!(g.get(d).is_none());
}

#[test]
fn fan_out_accumulates() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::scalar(3.0), true);
    let a = t.mul(x, x).unwrap();
    let b = t.add(a, x).unwrap();
    let g = t.backward(b).unwrap();
    assert_eq!(g.get(x).unwrap(), &[7.0]);
}

#[test]
fn shape_errors() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[3, 2]));
    assert!(t.add(a, b).is_err());
    assert!(t.conv2d(a, b, None, ConvGeom { stride: 1, pad: 0 }).is_err());
    let one = t.constant(Tensor::zeros(&[1, 1, 1, 1]));
    assert!(t.instance_norm(one, 1e-5).is_err());
    let nonscalar = t.add(a, a).unwrap();
    assert!(t.backward(nonscalar).is_err());
}

#[test]
fn random_small_graphs_match_finite_differences() {
    let mut r = rng(10);
    for trial in 0..20 {
        let x = random(&[1, 2, 4, 4], &mut r);
        let w = random(&[2, 2, 3, 3], &mut r);
        let ops: Vec<u8> = (0..6).map(|_| r.random_range(0..5)).collect();
        let e = check(&[x, w], |t, v| {
            let mut h = v[0];
            for &op in &ops {
                h = match op {
                    0 => t.conv2d(h, v[1], None, ConvGeom { stride: 1, pad: 1 }).unwrap(),
                    1 => t.sigmoid(h),
                    2 => t.instance_norm(h, 1e-5).unwrap(),
                    3 => t.scale(h, 0.7),
                    _ => t.mul(h, h).unwrap(),
                };
            }
            project(t, h, trial)
        });
        assert!(e < 1e-5, "ops {ops:?}: {e}");
    }
}
