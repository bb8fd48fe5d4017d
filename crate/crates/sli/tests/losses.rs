use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_grad::check::{numeric_grad, relative_error};
use siftleak_grad::{Tape, Tensor, Var};
use siftleak_sli::losses::{self, generator_total, GeneratorTerms};
use siftleak_sli::{LossWeights, NetworkSpec, PatchGan, PerceptNet, Role, UNet};

const TOL: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Relative error of the tape gradient w.r.t. `inputs[k]` for every `k`.
fn grad_error(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    grad_error_h(inputs, 1e-4, build)
}

/// Objectives routed through ReLU stages use a smaller step so that no probe
/// straddles a kink of the piecewise-linear activation.
fn grad_error_h(inputs: &[Tensor<f64>], h: f64, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, inp) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; inp.numel()]);
        let numeric = numeric_grad(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| t.constant(if j == k { Tensor::new(v.shape(), x.to_vec()).unwrap() } else { v.clone() }))
                    .collect();
                let l = build(&mut t, &vs);
                t.value(l).item()
            },
            inp.data(),
            h,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn value(build: impl FnOnce(&mut Tape<f64>) -> Var) -> f64 {
    let mut t = Tape::new();
    let v = build(&mut t);
    t.value(v).item()
}

#[test]
fn recon_values_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = random(&[1, 3, 6, 6], &mut rng, 0.0, 1.0);
    let off = Tensor::new(gt.shape(), gt.data().iter().map(|v| v + 0.5).collect()).unwrap();
    assert_eq!(value(|t| { let (a, b) = (t.constant(gt.clone()), t.constant(gt.clone())); losses::recon(t, a, b).unwrap() }), 0.0);
    let v = value(|t| { let (a, b) = (t.constant(off.clone()), t.constant(gt.clone())); losses::recon(t, a, b).unwrap() });
    assert!((v - 0.5).abs() < 1e-12);
    let out = random(&[1, 3, 6, 6], &mut rng, 0.0, 1.0);
    let e = grad_error(&[out, gt], |t, v| losses::recon(t, v[0], v[1]).unwrap());
    assert!(e < TOL, "{e}");
}

#[test]
fn perceptual_and_style_values_and_gradients() {
    let net = PerceptNet::<f64>::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for channels in [1, 3] {
        let out = random(&[1, channels, 12, 12], &mut rng, 0.0, 1.0);
        let gt = random(&[1, channels, 12, 12], &mut rng, 0.0, 1.0);
        for use_style in [false, true] {
            let f = |t: &mut Tape<f64>, a: Var, b: Var| {
                let p = net.params.bind(t, false);
                if use_style { losses::style(t, &net, &p, a, b).unwrap() } else { losses::perceptual(t, &net, &p, a, b).unwrap() }
            };
            let same = value(|t| { let (a, b) = (t.constant(gt.clone()), t.constant(gt.clone())); f(t, a, b) });
            assert_eq!(same, 0.0);
            let diff = value(|t| { let (a, b) = (t.constant(out.clone()), t.constant(gt.clone())); f(t, a, b) });
            assert!(diff > 0.0);
            let e = grad_error_h(&[out.clone(), gt.clone()], 1e-6, |t, v| f(t, v[0], v[1]));
            assert!(e < TOL, "channels {channels} style {use_style}: {e}");
        }
    }
}

#[test]
fn gram_of_orthogonal_channels_is_scaled_identity() {
    // Three channels with disjoint supports of equal energy on a 2x2 plane.
    let data = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::new(&[1, 3, 2, 2], data).unwrap());
    let g = t.gram(a).unwrap();
    let expected: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 / 12.0 } else { 0.0 }).collect();
    assert_eq!(t.value(g).data(), expected.as_slice());
}

#[test]
fn ragan_fixed_point_and_limits() {
    let same = Tensor::full(&[1, 1, 5, 5], 0.7);
    let mut t = Tape::<f64>::new();
    let (r, f) = (t.constant(same.clone()), t.constant(same));
    let (ld, lg) = losses::ragan(&mut t, r, f).unwrap();
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    assert!((t.value(ld).item() - two_ln2).abs() < 1e-6);
    assert!((t.value(lg).item() - two_ln2).abs() < 1e-6);

    let mut t = Tape::<f64>::new();
    let r = t.constant(Tensor::full(&[1, 1, 3, 3], 60.0));
    let f = t.constant(Tensor::full(&[1, 1, 3, 3], -60.0));
    let (ld, lg) = losses::ragan(&mut t, r, f).unwrap();
    assert!(t.value(ld).item() < 1e-12);
    assert!(t.value(lg).item() > 100.0 && t.value(lg).item().is_finite());
}

#[test]
fn ragan_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let real = random(&[1, 1, 4, 5], &mut rng, -2.0, 2.0);
    let fake = random(&[1, 1, 4, 5], &mut rng, -2.0, 2.0);
    let ed = grad_error(&[real.clone(), fake.clone()], |t, v| losses::ragan(t, v[0], v[1]).unwrap().0);
    let eg = grad_error(&[real, fake], |t, v| losses::ragan(t, v[0], v[1]).unwrap().1);
    assert!(ed < TOL && eg < TOL, "{ed} {eg}");
}

#[test]
fn totals_are_weighted_sums() {
    let comps = [0.3, 0.7, 0.11, 1.9];
    let w = LossWeights::default();
    let mut t = Tape::<f64>::new();
    let [r, p, s, g] = comps.map(|c| t.constant(Tensor::scalar(c)));
    let stage1 = generator_total(&mut t, &w, &GeneratorTerms { recon: r, perceptual: p, style: None, adversarial: g }).unwrap();
    let stage2 = generator_total(&mut t, &w, &GeneratorTerms { recon: r, perceptual: p, style: Some(s), adversarial: g }).unwrap();
    let hand1 = 100.0 * 0.3 + 1.0 * 0.7 + 0.2 * 1.9;
    assert!((t.value(stage1).item() - hand1).abs() < 1e-6);
    assert!((t.value(stage2).item() - (hand1 + 10.0 * 0.11)).abs() < 1e-6);

    let only_r = LossWeights { lambda_p: 0.0, lambda_s: 0.0, lambda_g: 0.0, ..w };
    let v = generator_total(&mut t, &only_r, &GeneratorTerms { recon: r, perceptual: p, style: Some(s), adversarial: g }).unwrap();
    assert!((t.value(v).item() - 30.0).abs() < 1e-12);
    let zero = t.constant(Tensor::scalar(0.0));
    let v = generator_total(&mut t, &w, &GeneratorTerms { recon: zero, perceptual: zero, style: Some(zero), adversarial: zero }).unwrap();
    assert_eq!(t.value(v).item(), 0.0);
    assert!(LossWeights { lambda_g: -1.0, ..w }.validate().is_err());
}

/// Full stage-2 generator objective through tiny networks, against finite
/// differences in the generator input and the discriminator-free path.
#[test]
fn full_generator_objective_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g2 = UNet::<f64>::new(NetworkSpec::for_role(Role::G2Prime, 2, 2), 1).unwrap();
    let d2 = PatchGan::<f64>::new(NetworkSpec::for_role(Role::D2, 0, 2), 1).unwrap();
    let percept = PerceptNet::<f64>::new(1).unwrap();
    let x = random(&[1, 1, 16, 16], &mut rng, 0.0, 1.0);
    let gt = random(&[1, 3, 16, 16], &mut rng, 0.0, 1.0);
    let w = LossWeights::default();
    let e = grad_error_h(&[x, gt], 1e-6, |t, v| {
        let pg = g2.params.bind(t, false);
        let pd = d2.params.bind(t, false);
        let pp = percept.params.bind(t, false);
        let out = g2.forward(t, &pg, v[0]).unwrap();
        let real = d2.forward(t, &pd, v[1]).unwrap();
        let fake = d2.forward(t, &pd, out).unwrap();
        let (_, adversarial) = losses::ragan(t, real, fake).unwrap();
        let recon = losses::recon(t, out, v[1]).unwrap();
        let perceptual = losses::perceptual(t, &percept, &pp, out, v[1]).unwrap();
        let style = Some(losses::style(t, &percept, &pp, out, v[1]).unwrap());
        generator_total(t, &w, &GeneratorTerms { recon, perceptual, style, adversarial }).unwrap()
    });
    assert!(e < 1e-5, "{e}");
}
