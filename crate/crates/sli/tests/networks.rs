use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_grad::{Tape, Tensor};
use siftleak_sli::nets::MIN_DISCRIMINATOR_SIDE;
use siftleak_sli::{NetworkSpec, PatchGan, PerceptNet, Role, SliError, UNet};

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn generator_shapes_follow_roles() {
    for (role, cin, cout) in [(Role::G1, 128, 1), (Role::G2, 129, 3), (Role::G2Prime, 1, 3)] {
        let spec = NetworkSpec::for_role(role, 4, 8);
        assert_eq!((spec.input_channels, spec.output_channels), (cin, cout));
        let net = UNet::<f32>::new(spec, 3).unwrap();
        let out = net.infer(random(&[1, cin, 64, 64], 1, 0.0, 1.0).cast()).unwrap();
        assert_eq!(out.shape(), &[1, cout, 64, 64]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0), "{role:?} leaves (0, 1)");
    }
}

#[test]
fn default_toy_generator_on_full_size_input() {
    let net = UNet::<f32>::new(NetworkSpec::for_role(Role::G1, 4, 32), 0).unwrap();
    let out = net.infer(random(&[1, 128, 64, 64], 2, -0.2, 0.2).cast()).unwrap();
    assert_eq!(out.shape(), &[1, 1, 64, 64]);
}

#[test]
fn generator_rejects_indivisible_or_mismatched_input() {
    let net = UNet::<f32>::new(NetworkSpec::for_role(Role::G2Prime, 4, 4), 0).unwrap();
    assert!(matches!(net.infer(Tensor::zeros(&[1, 1, 60, 64])), Err(SliError::Shape(_))));
    assert!(matches!(net.infer(Tensor::zeros(&[1, 1, 16, 16])), Err(SliError::Shape(_))));
    assert!(matches!(net.infer(Tensor::zeros(&[1, 3, 64, 64])), Err(SliError::Shape(_))));
}

#[test]
fn initialization_is_seeded() {
    let spec = NetworkSpec::for_role(Role::G1, 2, 4);
    let a = UNet::<f32>::new(spec, 5).unwrap();
    let b = UNet::<f32>::new(spec, 5).unwrap();
    let c = UNet::<f32>::new(spec, 6).unwrap();
    assert_eq!(a.params.named_f32(""), b.params.named_f32(""));
    assert_ne!(a.params.named_f32(""), c.params.named_f32(""));
}

fn logits(d: &PatchGan<f64>, x: Tensor<f64>) -> Tensor<f64> {
    let mut t = Tape::new();
    let p = d.params.bind(&mut t, false);
    let x = t.constant(x);
    let y = d.forward(&mut t, &p, x).unwrap();
    t.value(y).clone()
}

#[test]
fn discriminator_emits_patch_map() {
    let d = PatchGan::<f64>::new(NetworkSpec::for_role(Role::D2, 0, 8), 1).unwrap();
    let l = logits(&d, random(&[1, 3, 64, 64], 3, 0.0, 1.0));
    assert_eq!(l.shape(), &[1, 1, 14, 14]);
    let small = MIN_DISCRIMINATOR_SIDE - 1;
    let mut t = Tape::new();
    let p = d.params.bind(&mut t, false);
    let x = t.constant(Tensor::zeros(&[1, 3, small, 64]));
    assert!(matches!(d.forward(&mut t, &p, x), Err(SliError::Shape(_))));
}

/// Logit positions whose receptive field never reaches the zero padding of a 64x64 input.
const INTERIOR: std::ops::RangeInclusive<usize> = 3..=10;

#[test]
fn discriminator_is_shift_equivariant_in_the_interior() {
    let d = PatchGan::<f64>::new(NetworkSpec::for_role(Role::D1, 0, 4), 2).unwrap();
    let patch = random(&[16, 16], 4, 0.0, 1.0);
    let place = |off: usize| {
        let mut data = vec![0.0; 64 * 64];
        for y in 0..16 {
            for x in 0..16 {
                data[(24 + off + y) * 64 + 24 + off + x] = patch.data()[y * 16 + x];
            }
        }
        Tensor::new(&[1, 1, 64, 64], data).unwrap()
    };
    // Total stride is 4, so a 4 pixel shift moves the map by one cell.
    let a = logits(&d, place(0));
    let b = logits(&d, place(4));
    for i in 3..=9 {
        for j in 3..=9 {
            let va = a.data()[i * 14 + j];
            let vb = b.data()[(i + 1) * 14 + j + 1];
            assert!((va - vb).abs() < 1e-9, "({i},{j}): {va} vs {vb}");
        }
    }
}

#[test]
fn discriminator_constant_input_gives_constant_interior() {
    let d = PatchGan::<f64>::new(NetworkSpec::for_role(Role::D2, 0, 4), 3).unwrap();
    let l = logits(&d, Tensor::full(&[1, 3, 64, 64], 0.6));
    let v0 = l.data()[3 * 14 + 3];
    for i in INTERIOR {
        for j in INTERIOR {
            assert!((l.data()[i * 14 + j] - v0).abs() < 1e-9);
        }
    }
}

#[test]
fn percept_net_stage_shapes() {
    let net = PerceptNet::<f64>::new(0).unwrap();
    let mut t = Tape::new();
    let p = net.params.bind(&mut t, false);
    let x = t.constant(random(&[1, 1, 16, 16], 5, 0.0, 1.0));
    let f = net.features(&mut t, &p, x).unwrap();
    let shapes: Vec<_> = f.iter().map(|&v| t.shape_of(v).to_vec()).collect();
    assert_eq!(shapes, vec![vec![1, 16, 8, 8], vec![1, 32, 4, 4], vec![1, 64, 2, 2]]);
}
