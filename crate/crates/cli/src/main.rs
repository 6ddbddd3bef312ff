use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use echovalve::annotate::{derive_bbox, parse_annotations, propagate, DEFAULT_FIXED_HEIGHT};
use echovalve::augment::ClassifyAugSpec;
use echovalve::datasetio::{
    assign_patients, frame_sample_record, parse_manifest, sample_frames, split_patients, write_manifest, Split,
    ViewClass, DEFAULT_GAP_MINUTES, DEFAULT_SPLIT_RATIOS,
};
use echovalve::metrics::{confusion, detection_record, join_images, parse_detection_records, Detection, GroundTruth};
use echovalve::nnet::{self, Checkpoint, MiniInceptionNet, NetSpec, Sample, TrainConfig};
use echovalve::phantom::{self, frame_file_name, PhantomConfig};
use echovalve::pipeline::{
    detection_report, render_overlay, run_frame, DetectorBackend, FrameKind, NetClassifier, OracleDetector,
    OverlayColors, PipelineConfig, StubFileDetector, TruthClassifier, ViewClassifier, CARTESIAN_SIZE,
};
use echovalve::scanconvert::{compute_mean, encode_mean, preprocess, scan_convert};
use echovalve::{Error, GrayImage};

const MANIFEST_FILE: &str = "manifest.txt";
const ANNOTATIONS_FILE: &str = "annotations.txt";

#[derive(Parser)]
#[command(name = "echovalve", version, about = "Echocardiogram view classification and valve localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: display frames, manifest, sector geometry and valve annotations.
    PhantomGen {
        /// Comma-separated view tokens; all views when omitted.
        #[arg(long, value_delimiter = ',')]
        views: Vec<String>,
        #[arg(long, default_value_t = 2)]
        clips_per_view: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 144)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        heartbeats: usize,
        #[arg(long, default_value_t = 50.0)]
        frame_rate: f64,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
    },
    /// Sample frames, scan-convert them and write image lists and ground truth.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the mean of all converted frames.
        #[arg(long)]
        emit_mean: Option<PathBuf>,
        /// Clip split file from `split`; writes one image list and ground-truth file per split.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Group clips into patients and split patients into train/validation/test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_GAP_MINUTES)]
        gap_minutes: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the view classifier on an image list.
    TrainClassifier {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 64)]
        input_size: usize,
        /// Apply random geometric and contrast augmentation during training.
        #[arg(long)]
        augment: bool,
    },
    /// Confusion matrix and accuracy of a classifier on an image list.
    EvalClassify {
        /// Checkpoint path, or `truth` for the label-reading reference classifier.
        #[arg(long)]
        ckpt: String,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Detection metrics table from detection and ground-truth records.
    EvalDetect {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Classify, detect and render every image of a list.
    RunPipeline {
        /// Checkpoint path, or `truth` for the label-reading reference classifier.
        #[arg(long)]
        ckpt: String,
        #[arg(long, value_parser = ["oracle", "file"])]
        detector: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        overlay_out: PathBuf,
        #[arg(long)]
        json_out: PathBuf,
        /// Ground truth for the oracle backend.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Stored detections for the file backend.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// All post-suppression detections as interchange records.
        #[arg(long)]
        detections_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inputs are scanner display frames that need scan conversion.
        #[arg(long)]
        display: bool,
    },
}

/// Failure classes mapped to exit codes 1 (user) and 2 (internal).
enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric(_) | Error::Shape(_) | Error::Backend { .. } | Error::Transform(_) => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::User(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn user(msg: impl Into<String>) -> Failure {
    Failure::User(msg.into())
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// One image of an image list: `image_id|relative_path|view`.
struct ListEntry {
    id: String,
    path: PathBuf,
    view: ViewClass,
}

fn read_list(path: &Path) -> std::result::Result<Vec<ListEntry>, Failure> {
    let text = read_text(path)?;
    let base = base_dir(path);
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 3 {
            return Err(user(format!(
                "{}:{}: expected image_id|path|view, found `{line}`",
                path.display(),
                n + 1
            )));
        }
        out.push(ListEntry {
            id: f[0].to_string(),
            path: base.join(f[1]),
            view: f[2].parse::<ViewClass>()?,
        });
    }
    if out.is_empty() {
        return Err(user(format!("{}: no images listed", path.display())));
    }
    Ok(out)
}

fn cmd_phantom_gen(
    views: &[String],
    clips_per_view: usize,
    seed: u64,
    out: &Path,
    shape: (usize, usize, usize, f64, f64),
) -> CmdResult {
    let views: Vec<ViewClass> = if views.is_empty() {
        ViewClass::ALL.to_vec()
    } else {
        views.iter().map(|v| v.trim().parse::<ViewClass>()).collect::<Result<_, _>>()?
    };
    if clips_per_view == 0 {
        return Err(user("--clips-per-view must be positive"));
    }
    let (width, height, heartbeats, frame_rate, noise) = shape;
    let start = chrono::NaiveDate::from_ymd_opt(2017, 3, 1)
        .and_then(|d| d.and_hms_opt(8, 0, 0))
        .expect("valid date");
    let mut metas = Vec::new();
    let mut annotations = Vec::new();
    let mut index = 0u64;
    // views interleave so each simulated patient is scanned in several views
    for _ in 0..clips_per_view {
        for &view in &views {
            // three clips per simulated patient, studies two hours apart
            let patient = index / 3;
            let acquired_at = start
                + chrono::Duration::hours(2 * patient as i64)
                + chrono::Duration::minutes(5 * (index % 3) as i64);
            let config = PhantomConfig {
                seed: seed.wrapping_mul(1_000_003).wrapping_add(index),
                display_width: width,
                display_height: height,
                view,
                heartbeats,
                frame_rate,
                noise_level: noise,
                clip_id: format!("clip{index:04}"),
                acquired_at,
            };
            let clip = phantom::gen_clip(&config)?;
            phantom::write_clip(&clip, out)?;
            metas.push(clip.meta);
            annotations.extend(clip.annotations);
            index += 1;
        }
    }
    write_text(&out.join(MANIFEST_FILE), &write_manifest(&metas))?;
    write_text(
        &out.join(ANNOTATIONS_FILE),
        &echovalve::annotate::write_annotations(&annotations),
    )?;
    println!("wrote {} clips to {}", metas.len(), out.display());
    Ok(())
}

fn image_id(clip: &str, frame: usize) -> String {
    format!("{clip}/{frame:04}")
}

fn cmd_preprocess(
    manifest: &Path,
    out: &Path,
    emit_mean: Option<&Path>,
    splits: Option<&Path>,
    seed: u64,
) -> CmdResult {
    let clips = parse_manifest(&read_text(manifest)?)?;
    let base = base_dir(manifest);
    let ann_path = base.join(ANNOTATIONS_FILE);
    let annotations = if ann_path.exists() {
        parse_annotations(&read_text(&ann_path)?)?
    } else {
        Vec::new()
    };
    let split_of: Option<BTreeMap<String, Split>> = match splits {
        Some(p) => {
            let mut m = BTreeMap::new();
            for (n, line) in read_text(p)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let f: Vec<&str> = line.split('|').collect();
                if f.len() != 3 {
                    return Err(user(format!("{}:{}: expected clip|patient|split", p.display(), n + 1)));
                }
                m.insert(f[0].to_string(), f[2].parse::<Split>()?);
            }
            Some(m)
        }
        None => None,
    };

    let mut frames_txt = String::new();
    let mut gt_txt = String::new();
    let mut split_gt: BTreeMap<&str, String> = BTreeMap::new();
    let mut lists: BTreeMap<&str, String> = BTreeMap::new();
    let mut converted = Vec::new();
    for clip in &clips {
        let frames = sample_frames(clip, seed)?;
        let _ = writeln!(frames_txt, "{}", frame_sample_record(&clip.clip_id, &frames));
        for &f in &frames {
            let src = base.join("frames").join(&clip.clip_id).join(frame_file_name(f));
            let img = GrayImage::read_pgm(&src)?;
            let cart = scan_convert(&img, CARTESIAN_SIZE, CARTESIAN_SIZE)?;
            let rel = format!("{}/{}", clip.clip_id, frame_file_name(f));
            cart.write_pgm(out.join(&rel))?;
            let line = format!("{}|{rel}|{}\n", image_id(&clip.clip_id, f), clip.view.token());
            lists.entry("all").or_default().push_str(&line);
            if let Some(s) = split_of.as_ref().and_then(|m| m.get(&clip.clip_id)) {
                lists.entry(s.token()).or_default().push_str(&line);
            }
            if emit_mean.is_some() {
                converted.push(cart);
            }
        }
        let clip_split = split_of.as_ref().and_then(|m| m.get(&clip.clip_id));
        for a in annotations.iter().filter(|a| a.clip_id == clip.clip_id) {
            let b = derive_bbox(a, DEFAULT_FIXED_HEIGHT, (CARTESIAN_SIZE, CARTESIAN_SIZE))?;
            for (f, bbox) in propagate(b, &frames) {
                let d = Detection {
                    bbox,
                    valve: a.valve,
                    score: 1.0,
                };
                let rec = detection_record(&image_id(&clip.clip_id, f), &d);
                let _ = writeln!(gt_txt, "{rec}");
                if let Some(s) = clip_split {
                    let _ = writeln!(split_gt.entry(s.token()).or_default(), "{rec}");
                }
            }
        }
    }
    write_text(&out.join("frames.txt"), &frames_txt)?;
    write_text(&out.join("ground_truth.txt"), &gt_txt)?;
    for (name, text) in &split_gt {
        write_text(&out.join(format!("ground_truth_{name}.txt")), text)?;
    }
    for (name, text) in &lists {
        let file = if *name == "all" {
            "images.txt".to_string()
        } else {
            format!("images_{name}.txt")
        };
        write_text(&out.join(file), text)?;
    }
    if let Some(p) = emit_mean {
        let mean = compute_mean(&converted)?;
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(p, encode_mean(&mean)).map_err(|e| Error::io(p, e))?;
    }
    println!("converted {} clips into {}", clips.len(), out.display());
    Ok(())
}

fn cmd_split(manifest: &Path, seed: u64, gap_minutes: i64, out: &Path) -> CmdResult {
    if gap_minutes < 0 {
        return Err(user("--gap-minutes must be non-negative"));
    }
    let clips = parse_manifest(&read_text(manifest)?)?;
    let patients = assign_patients(&clips, chrono::Duration::minutes(gap_minutes))?;
    let splits = split_patients(&patients, DEFAULT_SPLIT_RATIOS, seed)?;
    write_text(out, &splits.to_records())?;
    let mut clip_lines = String::new();
    for (clip, p) in &patients.ordered {
        let s = splits.split_of(*p).expect("every patient is split");
        let _ = writeln!(clip_lines, "{clip}|{p}|{}", s.token());
    }
    let mut side = out.as_os_str().to_owned();
    side.push(".clips");
    write_text(Path::new(&side), &clip_lines)?;
    let (tr, va, te) = splits.sizes();
    println!("patients: {tr} train, {va} validation, {te} test");
    Ok(())
}

fn load_samples(
    list: &[ListEntry],
    classes: usize,
    size: usize,
) -> std::result::Result<Vec<(GrayImage, usize)>, Failure> {
    list.iter()
        .map(|e| {
            let label = e.view.index();
            if label >= classes {
                return Err(user(format!("label {} outside {classes} classes", e.view)));
            }
            Ok((GrayImage::read_pgm(&e.path)?.resize(size, size), label))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    train: &Path,
    val: &Path,
    epochs: usize,
    seed: u64,
    out: &Path,
    batch_size: usize,
    input_size: usize,
    augment: bool,
) -> CmdResult {
    let spec = NetSpec {
        input_size,
        ..NetSpec::default()
    };
    spec.validate()?;
    let train_raw = load_samples(&read_list(train)?, spec.classes, input_size)?;
    let val_raw = load_samples(&read_list(val)?, spec.classes, input_size)?;
    let mean = compute_mean(&train_raw.iter().map(|s| s.0.clone()).collect::<Vec<_>>())?;
    let prep = |v: Vec<(GrayImage, usize)>| -> Result<Vec<Sample>, Error> {
        v.into_iter()
            .map(|(img, label)| {
                Ok(Sample {
                    image: preprocess(&img, &mean)?,
                    label,
                })
            })
            .collect()
    };
    let train_set = prep(train_raw)?;
    let val_set = prep(val_raw)?;
    let mut net = MiniInceptionNet::new(spec, seed)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        seed,
        augment: augment.then(ClassifyAugSpec::default),
        ..TrainConfig::default()
    };
    let report = nnet::train(&mut net, &train_set, &val_set, &cfg)?;
    let mut log = String::from("# epoch|train_loss|val_loss|val_acc\n");
    for e in &report.log {
        let _ = writeln!(log, "{}", e.to_record());
    }
    let mut ck = Checkpoint { net, mean };
    ck.save(out)?;
    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".log");
    write_text(Path::new(&log_path), &log)?;
    match report.best_epoch {
        Some(e) => println!("kept epoch {e} of {epochs}"),
        None => println!("no epochs run; saved the initial weights"),
    }
    Ok(())
}

fn classifier_for(ckpt: &str, list: &[ListEntry]) -> std::result::Result<Box<dyn ViewClassifier>, Failure> {
    if ckpt == "truth" {
        let views = list.iter().map(|e| (e.id.clone(), e.view)).collect();
        Ok(Box::new(TruthClassifier { views }))
    } else {
        Ok(Box::new(NetClassifier::new(Checkpoint::load(ckpt)?)?))
    }
}

fn cmd_eval_classify(ckpt: &str, test: &Path, report: &Path) -> CmdResult {
    let list = read_list(test)?;
    let mut clf = classifier_for(ckpt, &list)?;
    let mut preds = Vec::with_capacity(list.len());
    for e in &list {
        let img = GrayImage::read_pgm(&e.path)?;
        let p = clf.classify(&e.id, &img)?;
        let v = ViewClass::from_index(nnet::argmax(&p)).expect("scores cover every view");
        preds.push((e.view, v));
    }
    let cm = confusion(&preds);
    let text = cm.render();
    write_text(report, &text)?;
    println!("overall accuracy {:.3} on {} images", cm.overall_accuracy(), list.len());
    Ok(())
}

fn cmd_eval_detect(detections: &Path, ground_truth: &Path, report: &Path) -> CmdResult {
    let dets = parse_detection_records(&read_text(detections)?)?;
    let gts = parse_detection_records(&read_text(ground_truth)?)?;
    let images = join_images(&dets, &gts);
    let rep = detection_report(&images)?;
    let text = rep.render();
    write_text(report, &text)?;
    print!("{text}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run_pipeline(
    ckpt: &str,
    detector: &str,
    input: &Path,
    overlay_out: &Path,
    json_out: &Path,
    ground_truth: Option<&Path>,
    detections: Option<&Path>,
    detections_out: Option<&Path>,
    jitter: f64,
    seed: u64,
    display: bool,
) -> CmdResult {
    let list = read_list(input)?;
    let mut clf = classifier_for(ckpt, &list)?;
    let mut backend: Box<dyn DetectorBackend> = match detector {
        "oracle" => {
            let p = ground_truth.ok_or_else(|| user("--detector oracle needs --ground-truth"))?;
            if !(jitter >= 0.0) {
                return Err(user("--jitter must be non-negative"));
            }
            let gt = parse_detection_records(&read_text(p)?)?
                .into_iter()
                .map(|(id, v)| {
                    let g = v
                        .into_iter()
                        .map(|d| GroundTruth {
                            bbox: d.bbox,
                            valve: d.valve,
                        })
                        .collect();
                    (id, g)
                })
                .collect();
            Box::new(OracleDetector::new(gt, jitter, seed))
        }
        _ => {
            let p = detections.ok_or_else(|| user("--detector file needs --detections"))?;
            Box::new(StubFileDetector::from_records(&read_text(p)?)?)
        }
    };
    let kind = if display { FrameKind::Display } else { FrameKind::Cartesian };
    let cfg = PipelineConfig::default();
    let colors = OverlayColors::default();
    let mut json = String::new();
    let mut records = String::new();
    fs::create_dir_all(overlay_out).map_err(|e| Error::io(overlay_out, e))?;
    for e in &list {
        let img = GrayImage::read_pgm(&e.path)?;
        let result = run_frame(&e.id, &img, kind, clf.as_mut(), backend.as_mut(), &cfg)?;
        let line = serde_json::to_string(&result.to_record()).map_err(|err| Failure::Internal(err.to_string()))?;
        json.push_str(&line);
        json.push('\n');
        for d in &result.all_detections {
            let _ = writeln!(records, "{}", detection_record(&e.id, d));
        }
        let shown = if display {
            scan_convert(&img, cfg.output_size, cfg.output_size)?
        } else {
            img
        };
        let overlay = render_overlay(&shown, &result, &colors);
        overlay.write_ppm(overlay_out.join(format!("{}.ppm", e.id.replace(['/', '\\'], "_"))))?;
    }
    write_text(json_out, &json)?;
    if let Some(p) = detections_out {
        write_text(p, &records)?;
    }
    println!("processed {} images", list.len());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::PhantomGen {
            views,
            clips_per_view,
            seed,
            out,
            width,
            height,
            heartbeats,
            frame_rate,
            noise,
        } => cmd_phantom_gen(
            &views,
            clips_per_view,
            seed,
            &out,
            (width, height, heartbeats, frame_rate, noise),
        ),
        Command::Preprocess {
            manifest,
            out,
            emit_mean,
            splits,
            seed,
        } => cmd_preprocess(&manifest, &out, emit_mean.as_deref(), splits.as_deref(), seed),
        Command::Split {
            manifest,
            seed,
            gap_minutes,
            out,
        } => cmd_split(&manifest, seed, gap_minutes, &out),
        Command::TrainClassifier {
            train,
            val,
            epochs,
            seed,
            out,
            batch_size,
            input_size,
            augment,
        } => cmd_train(&train, &val, epochs, seed, &out, batch_size, input_size, augment),
        Command::EvalClassify { ckpt, test, report } => cmd_eval_classify(&ckpt, &test, &report),
        Command::EvalDetect {
            detections,
            ground_truth,
            report,
        } => cmd_eval_detect(&detections, &ground_truth, &report),
        Command::RunPipeline {
            ckpt,
            detector,
            input,
            overlay_out,
            json_out,
            ground_truth,
            detections,
            detections_out,
            jitter,
            seed,
            display,
        } => cmd_run_pipeline(
            &ckpt,
            &detector,
            &input,
            &overlay_out,
            &json_out,
            ground_truth.as_deref(),
            detections.as_deref(),
            detections_out.as_deref(),
            jitter,
            seed,
            display,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
