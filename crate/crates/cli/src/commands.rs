use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use siftleak_coord::reference::{parse_category_map, pick_per_category};
use siftleak_coord::{
    estimate_descriptor_level, estimate_image_level, estimate_landmark, label_descriptors, train_region_classifier,
    ClassifierConfig, LandmarkSet, ReferenceEntry, ReferenceSet, RegionClassifier,
};
use siftleak_core::featmap::{build_binary_map, build_feature_map, subsample_features, DenseMap};
use siftleak_core::metrics::{evaluate_reconstruction, CSV_HEADER};
use siftleak_core::synth::toy_corpus;
use siftleak_core::{extract_lbp, extract_sift, to_grayscale, Descriptor, GrayImage, RgbImage, SiftFeatures, SiftParams};
use siftleak_sli::{train, SliModel, Stage, TrainConfig, TrainEvent, TrainItem, LOG_HEADER};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::outputs::Outputs;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "ppm"];

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ExtractSift(a) => extract_sift_cmd(&a),
        Command::ExtractLbp(a) => extract_lbp_cmd(&a),
        Command::BuildMap(a) => build_map(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::EstimateCoords(a) => estimate_coords(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::ToyCorpus(a) => toy(&a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("missing input file {}", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io(format!("missing input directory {}", path.display())))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Luminance of the RGB decode, so every command sees the same gray values.
fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(to_grayscale(&RgbImage::load(path)?))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        let ext = p.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
        if p.is_file() && IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Applies `f` to every item on up to `jobs` threads, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let parts: Vec<Vec<Result<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    parts.into_iter().flatten().collect()
}

fn extract_sift_cmd(a: &ExtractSiftArgs) -> Result<()> {
    require_file(&a.input)?;
    let mut out = Outputs::new();
    let path = out.file(&a.output)?;
    let feats = extract_sift(&load_gray(&a.input)?, &a.sift.params())?;
    feats.save(&path)?;
    eprintln!("{} keypoints", feats.len());
    out.commit();
    Ok(())
}

fn extract_lbp_cmd(a: &ExtractLbpArgs) -> Result<()> {
    require_file(&a.input)?;
    let mut out = Outputs::new();
    let path = out.file(&a.output)?;
    extract_lbp(&load_gray(&a.input)?).save(&path)?;
    out.commit();
    Ok(())
}

fn build_map(a: &BuildMapArgs) -> Result<()> {
    require_file(&a.input)?;
    let mut out = Outputs::new();
    let path = out.file(&a.output)?;
    eprintln!("seed={}", a.seed);
    let feats = subsample_features(&SiftFeatures::load(&a.input)?, a.fraction, a.seed)?;
    let map = if a.binary {
        DenseMap::Binary(build_binary_map(&feats)?)
    } else {
        DenseMap::Features(build_feature_map(&feats)?)
    };
    map.save(&path)?;
    eprintln!("{} of the keypoints kept", feats.len());
    out.commit();
    Ok(())
}

/// The `stage` value of a config, read before choosing which parser applies.
fn config_stage(text: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.split('#').next()?.split_once('='))
        .filter(|(k, _)| k.trim() == "stage")
        .map(|(_, v)| v.trim().to_string())
        .last()
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    require_dir(&a.input)?;
    let text = match &a.config {
        Some(p) => {
            require_file(p)?;
            read_text(p)?
        }
        None => String::new(),
    };
    let images = list_images(&a.input)?;
    if images.is_empty() {
        return Err(CliError::InvalidInput(format!("invalid input: no images in {}", a.input.display())));
    }
    let mut out = Outputs::new();
    out.dir(&a.output)?;
    if config_stage(&text).as_deref() == Some("classifier") {
        let r = train_classifier(a, &text, &images, &mut out);
        if r.is_ok() {
            out.commit();
        }
        return r;
    }

    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    eprintln!("seed={} stage={}", cfg.seed, cfg.stage.name());
    let config_path = out.file(&a.output.join("config.txt"))?;
    let log_path = out.file(&a.output.join("losses.csv"))?;
    let model_path = out.file(&a.output.join("model.ckp"))?;
    let params = a.sift.params();
    let corpus = images
        .iter()
        .map(|p| {
            let rgb = RgbImage::load(p)?;
            let feats = extract_sift(&to_grayscale(&rgb), &params)?;
            Ok(TrainItem::new(stem(p), &rgb, &feats)?)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::write(&config_path, cfg.to_text())?;

    let mut log = format!("{LOG_HEADER}\n");
    let mut ckpts = Vec::new();
    let total = cfg.steps + if cfg.stage == Stage::Full { cfg.pretrain_steps } else { 0 };
    let model = train(&corpus, &cfg, |ev| {
        match ev {
            TrainEvent::Step(row) => {
                log.push_str(&row.csv_row());
                log.push('\n');
                if row.step % 100 == 0 || row.step as usize == total {
                    eprintln!("step {} {} total={:.4}", row.step, row.phase.name(), row.total);
                }
            }
            TrainEvent::Checkpoint(m) => ckpts.push(m.clone()),
        }
        Ok(())
    })?;
    for m in &ckpts {
        let p = out.file(&a.output.join(format!("step_{:06}.ckp", m.step)))?;
        m.save(&p)?;
    }
    std::fs::write(&log_path, log)?;
    model.save(&model_path)?;
    out.commit();
    Ok(())
}

fn train_classifier(a: &TrainArgs, text: &str, images: &[PathBuf], out: &mut Outputs) -> Result<()> {
    let mut cfg = ClassifierConfig::parse(text)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    eprintln!("seed={} stage=classifier", cfg.seed);
    let mut descs: Vec<Descriptor> = Vec::new();
    let mut labels = Vec::new();
    let params = a.sift.params();
    let lmk_paths: Vec<PathBuf> = images.iter().map(|p| p.with_extension("lmk")).collect();
    for p in &lmk_paths {
        require_file(p)?;
    }
    let log_path = out.file(&a.output.join("losses.csv"))?;
    let model_path = out.file(&a.output.join("classifier.ckp"))?;
    for (img, lmk) in images.iter().zip(&lmk_paths) {
        let gray = load_gray(img)?;
        let landmarks = LandmarkSet::parse(&read_text(lmk)?)?;
        landmarks.check_bounds(gray.height(), gray.width())?;
        let feats = extract_sift(&gray, &params)?;
        labels.extend(label_descriptors(&feats, &landmarks));
        descs.extend(feats.descriptors);
    }
    let (clf, log) = train_region_classifier(&descs, &labels, &cfg)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l:.6}", i + 1);
    }
    std::fs::write(&log_path, csv)?;
    clf.save(&model_path)?;
    eprintln!("training accuracy {:.4} on {} descriptors", clf.accuracy(&descs, &labels)?, descs.len());
    Ok(())
}

fn default_lbp_path(output: &Path) -> PathBuf {
    output.with_file_name(format!("{}_lbp.png", stem(output)))
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    require_file(&a.model)?;
    require_file(&a.input)?;
    let mut out = Outputs::new();
    let img_path = out.file(&a.output)?;
    let model = SliModel::load(&a.model)?;
    let map = DenseMap::load(&a.input)?;
    match &map {
        DenseMap::Features(f) if model.g2.is_none() && model.g1.is_some() => {
            // An LBP-stage checkpoint: the estimate is the only output.
            model.estimate_lbp(f)?.save(&img_path)?;
        }
        _ => {
            let rec = model.reconstruct(&map)?;
            if let Some(lbp) = &rec.lbp {
                let lbp_path = out.file(&a.lbp_output.clone().unwrap_or_else(|| default_lbp_path(&a.output)))?;
                lbp.save(&lbp_path)?;
            }
            rec.image.save(&img_path)?;
        }
    }
    out.commit();
    Ok(())
}

fn load_reference_features(path: &Path, params: &SiftParams) -> Result<SiftFeatures> {
    require_file(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("sft")) {
        Ok(SiftFeatures::load(path)?)
    } else {
        Ok(extract_sift(&load_gray(path)?, params)?)
    }
}

fn estimate_coords(a: &EstimateArgs) -> Result<()> {
    require_file(&a.input)?;
    let mut out = Outputs::new();
    let path = out.file(&a.output)?;
    eprintln!("seed={}", a.seed);
    let query = SiftFeatures::load(&a.input)?.without_coordinates();
    let result = match a.method {
        Method::Reference => {
            let map_path = a.reference.as_ref().ok_or_else(|| CliError::Usage("--method reference needs --reference".into()))?;
            require_file(map_path)?;
            let base = map_path.parent().unwrap_or(Path::new(""));
            let map = parse_category_map(&read_text(map_path)?)?;
            let params = a.sift.params();
            let entries = pick_per_category(&map, a.seed)?
                .into_iter()
                .map(|id| Ok(ReferenceEntry { features: load_reference_features(&base.join(&id), &params)?, id }))
                .collect::<Result<Vec<_>>>()?;
            let refs = ReferenceSet::new(entries)?;
            match a.level {
                Level::Descriptor => estimate_descriptor_level(&query, &refs, a.seed)?,
                Level::Image => estimate_image_level(&query, &refs, a.seed)?,
            }
        }
        Method::Landmark => {
            let model = a.model.as_ref().ok_or_else(|| CliError::Usage("--method landmark needs --model".into()))?;
            let lmk = a.landmarks.as_ref().ok_or_else(|| CliError::Usage("--method landmark needs --landmarks".into()))?;
            require_file(model)?;
            require_file(lmk)?;
            let clf = RegionClassifier::<f32>::load(model)?;
            let prior = LandmarkSet::parse(&read_text(lmk)?)?;
            estimate_landmark(&query, &clf, &prior, a.seed)?
        }
    };
    result.save(&path)?;
    eprintln!("{} of {} descriptors placed", result.len(), query.len());
    out.commit();
    Ok(())
}

struct Pair {
    id: String,
    gt: PathBuf,
    recon: PathBuf,
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let pairs = if a.gt.is_dir() {
        require_dir(&a.recon)?;
        if a.matches.is_some() {
            return Err(CliError::Usage("--matches needs a single image pair".into()));
        }
        let pairs: Vec<Pair> = list_images(&a.gt)?
            .into_iter()
            .map(|gt| Pair { id: stem(&gt), recon: a.recon.join(gt.file_name().expect("listed file")), gt })
            .collect();
        if pairs.is_empty() {
            return Err(CliError::InvalidInput(format!("invalid input: no images in {}", a.gt.display())));
        }
        pairs
    } else {
        vec![Pair { id: a.id.clone().unwrap_or_else(|| stem(&a.gt)), gt: a.gt.clone(), recon: a.recon.clone() }]
    };
    for p in &pairs {
        require_file(&p.gt)?;
        require_file(&p.recon)?;
    }
    let mut out = Outputs::new();
    let csv_path = out.file(&a.output)?;
    let match_path = a.matches.as_ref().map(|p| out.file(p)).transpose()?;
    let params = a.sift.params();
    let records = parallel_map(&pairs, usize::from(a.jobs), |p| {
        let gt = RgbImage::load(&p.gt)?;
        let recon = RgbImage::load(&p.recon)?;
        Ok(evaluate_reconstruction(&gt, &recon, &params, a.threshold)?)
    })?;
    let mut csv = format!("{CSV_HEADER}\n");
    for (p, r) in pairs.iter().zip(&records) {
        csv.push_str(&r.csv_row(&p.id, &a.variant));
        csv.push('\n');
    }
    std::fs::write(&csv_path, &csv)?;
    if let Some(m) = match_path {
        std::fs::write(m, records[0].prm.match_lines())?;
    }
    print!("{csv}");
    out.commit();
    Ok(())
}

fn fraction_label(f: f64) -> String {
    format!("{f:.2}")
}

fn sweep(a: &SweepArgs) -> Result<()> {
    require_file(&a.model)?;
    require_file(&a.input)?;
    if a.fractions.is_empty() {
        return Err(CliError::Usage("--fractions is empty".into()));
    }
    if let Some(f) = a.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(CliError::InvalidParameter(format!("invalid parameter: fraction {f} outside (0, 1]")));
    }
    let mut out = Outputs::new();
    out.dir(&a.output)?;
    eprintln!("seed={}", a.seed);
    let csv_path = out.file(&a.output.join("sweep.csv"))?;
    let png_paths = a
        .fractions
        .iter()
        .map(|&f| out.file(&a.output.join(format!("recon_{}.png", fraction_label(f)))))
        .collect::<Result<Vec<_>>>()?;
    let model = SliModel::load(&a.model)?;
    let gt = RgbImage::load(&a.input)?;
    let params = a.sift.params();
    let feats = extract_sift(&to_grayscale(&gt), &params)?;
    let id = stem(&a.input);
    let jobs: Vec<(f64, &PathBuf)> = a.fractions.iter().copied().zip(&png_paths).collect();
    let rows = parallel_map(&jobs, usize::from(a.jobs), |&(f, path)| {
        let sub = subsample_features(&feats, f, a.seed)?;
        let map = if a.binary {
            DenseMap::Binary(build_binary_map(&sub)?)
        } else {
            DenseMap::Features(build_feature_map(&sub)?)
        };
        let rec = model.reconstruct(&map)?;
        // Save-then-reload keeps the scores identical to a separate evaluate run.
        rec.image.save(path)?;
        let saved = RgbImage::load(path)?;
        let r = evaluate_reconstruction(&gt, &saved, &params, a.threshold)?;
        Ok(r.csv_row(&id, &format!("fraction_{}", fraction_label(f))))
    })?;
    let mut csv = format!("{CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    std::fs::write(&csv_path, &csv)?;
    print!("{csv}");
    out.commit();
    Ok(())
}

fn toy(a: &ToyArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::InvalidParameter("invalid parameter: count must be positive".into()));
    }
    if a.size < 32 {
        return Err(CliError::InvalidParameter(format!("invalid parameter: size {} is below the 32 px SIFT minimum", a.size)));
    }
    let mut out = Outputs::new();
    out.dir(&a.output)?;
    eprintln!("seed={}", a.seed);
    for (i, img) in toy_corpus(a.count, a.size, a.seed).iter().enumerate() {
        let p = out.file(&a.output.join(format!("toy_{i:03}.png")))?;
        img.save(&p)?;
    }
    out.commit();
    Ok(())
}
