use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siftleak_coord::{train_region_classifier, ClassifierConfig, CoordError, DescriptorClassifier, RegionClassifier};
use siftleak_core::Descriptor;
use siftleak_grad::check::{numeric_grad, relative_error};
use siftleak_grad::{Tape, Tensor};

/// Class `c` lights up components `16c..16c+16`; small noise elsewhere.
fn separable(n: usize, classes: usize, seed: u64) -> (Vec<Descriptor>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut descs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % classes;
        let mut d = Descriptor::default();
        for (k, v) in d.0.iter_mut().enumerate() {
            *v = rng.random_range(0.0..0.05) + if k / 16 == c { 0.2 } else { 0.0 };
        }
        descs.push(d);
        labels.push(c);
    }
    (descs, labels)
}

#[test]
fn fits_separable_corpus() {
    let (descs, labels) = separable(100, 8, 1);
    let cfg = ClassifierConfig { steps: 500, ..ClassifierConfig::default() };
    let (clf, log) = train_region_classifier(&descs, &labels, &cfg).unwrap();
    assert_eq!(clf.accuracy(&descs, &labels).unwrap(), 1.0);
    assert!(log.losses.last().unwrap() < &log.losses[0]);
    for p in clf.probabilities(&descs).unwrap() {
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    assert_eq!(clf.predict(&descs[3]), labels[3]);
}

#[test]
fn training_is_deterministic_and_checkpointable() {
    let (descs, labels) = separable(40, 3, 2);
    let cfg = ClassifierConfig { steps: 30, batch: 16, ..ClassifierConfig::default() };
    let (a, la) = train_region_classifier(&descs, &labels, &cfg).unwrap();
    let (b, lb) = train_region_classifier(&descs, &labels, &cfg).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.params.named_f32(""), b.params.named_f32(""));
    let path = std::env::temp_dir().join(format!("clf-{}.ckp", std::process::id()));
    a.save(&path).unwrap();
    let back = RegionClassifier::<f32>::load(&path).unwrap();
    assert_eq!(back.params.named_f32(""), a.params.named_f32(""));
    assert_eq!(back.probabilities(&descs).unwrap(), a.probabilities(&descs).unwrap());
    std::fs::remove_file(path).unwrap();
}

#[test]
fn rejects_single_class_and_bad_labels() {
    let (descs, _) = separable(10, 2, 3);
    let cfg = ClassifierConfig::default();
    assert!(matches!(train_region_classifier(&descs, &[4; 10], &cfg), Err(CoordError::Degenerate(_))));
    assert!(train_region_classifier(&descs, &[9; 10], &cfg).is_err());
    assert!(train_region_classifier(&descs, &[0; 3], &cfg).is_err());
}

#[test]
fn cross_entropy_gradient_through_the_network() {
    let clf = RegionClassifier::<f64>::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..4 * 128).map(|_| rng.random_range(0.0..0.3)).collect();
    let labels = [0, 3, 7, 3];
    let run = |x: &[f64], rg: bool| {
        let mut t = Tape::new();
        let p = clf.params.bind(&mut t, false);
        let xv = t.leaf(Tensor::new(&[4, 128], x.to_vec()).unwrap(), rg);
        let (l, _) = clf.logits(&mut t, &p, xv, true).unwrap();
        let loss = t.softmax_cross_entropy(l, &labels).unwrap();
        let v = t.value(loss).item();
        let g = if rg { t.backward(loss).unwrap().get(xv).unwrap().to_vec() } else { Vec::new() };
        (v, g)
    };
    let (_, analytic) = run(&x, true);
    // Small step: ReLU kinks sit everywhere in a batch-normalized stack.
    let numeric = numeric_grad(|p| run(p, false).0, &x, 1e-6);
    let e = relative_error(&analytic, &numeric);
    assert!(e < 1e-5, "{e}");
}
