use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{GeneratorMode, RunConfig};
use super::{Context, EvalArgs, RenderArgs, ReproduceArgs, Stage, SweepArgs, SynthArgs, TrainArgs};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_masks, dataset_digest, evaluate_maps, process_image, render_panel, source_pairs, EvalReport, EvalSetup,
    ImageEval, MaskKind, Scorer, Synthesizer,
};
use crate::models::{
    train_toy_cgan, train_toy_segnet, DetectorModel, DiscriminatorModel, GeneratorModel, HeadKind, SegModel,
};
use crate::nn::Checkpoint;
use crate::patches::{build_triplets, Triplet};
use crate::rng::{rng_for, stream};
use crate::store::{load_dataset, save_dataset, write_rgb_png, Manifest};
use crate::toyworld::{generate_item, ClassSet, LabeledImage};
use crate::training::{balanced_pair_f1, lambda_sweep, sweep_csv, train_detector, SweepRow};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance written next to every run's `config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub stage: String,
    pub version: String,
    pub dataset_hash: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn out_line(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

/// Create `dir`, or empty it when `force` is set. A non-empty directory
/// without `force` is an input error.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::invalid(format!(
                    "{} exists and is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            if dir.parent().is_none() {
                return Err(Error::invalid("refusing to clear a filesystem root"));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Order-preserving map over `items` on up to `jobs` scoped threads.
pub fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

fn resolve_paths(ctx: &Context, cfg: &mut RunConfig) {
    let p = &mut cfg.paths;
    for slot in [&mut p.dataset, &mut p.held_out, &mut p.gan_run, &mut p.seg_run] {
        if let Some(path) = slot.as_mut() {
            *path = ctx.resolve(path);
        }
    }
}

fn write_run_header(dir: &Path, cfg: &RunConfig, stage: &str, dataset_hash: &str) -> Result<()> {
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    let meta = RunMeta {
        stage: stage.to_string(),
        version: VERSION.to_string(),
        dataset_hash: dataset_hash.to_string(),
    };
    write_text(
        &dir.join("run.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
}

/// Generate and write a dataset described by the `[dataset]` and `[patches]`
/// sections.
pub fn synth_dataset(ctx: &Context, cfg: &RunConfig, dir: &Path, force: bool, out: &mut dyn Write) -> Result<Manifest> {
    cfg.validate()?;
    let spec = cfg.dataset_spec();
    if spec.count == 0 {
        return Err(Error::invalid("--n must be at least 1"));
    }
    let classes = ClassSet::default();
    prepare_out(dir, force)?;
    let indices: Vec<usize> = (0..spec.count).collect();
    let images = par_map(ctx.jobs, &indices, |&i| generate_item(&spec, &classes, i))?;
    save_dataset(dir, &spec, &classes, &images)?;
    let mut counts: BTreeMap<u8, u64> = BTreeMap::new();
    for im in &images {
        for &l in &im.labels.data {
            *counts.entry(l).or_default() += 1;
        }
    }
    let total: u64 = counts.values().sum();
    out_line(out, format!("wrote {} images to {}", images.len(), dir.display()))?;
    out_line(out, "class  pixels      fraction  ood")?;
    for id in classes.all_ids() {
        let n = counts.get(&id).copied().unwrap_or(0);
        out_line(
            out,
            format!(
                "{id:>5}  {n:>10}  {:>8.5}  {}",
                n as f64 / total as f64,
                if classes.is_ood(id) { "yes" } else { "no" }
            ),
        )?;
    }
    crate::store::load_manifest(dir)
}

pub fn cmd_synth(ctx: &Context, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_ref().map(|p| ctx.resolve(p)).as_deref())?;
    let d = &mut cfg.dataset;
    d.n = a.n.unwrap_or(d.n);
    d.seed = a.seed.unwrap_or(d.seed);
    d.ood_rate = a.ood_rate.unwrap_or(d.ood_rate);
    d.corrupt_rate = a.corrupt_rate.unwrap_or(d.corrupt_rate);
    d.size = a.size.unwrap_or(d.size);
    d.n_objects = a.n_objects.unwrap_or(d.n_objects);
    cfg.patches.patch_size = a.patch_size.unwrap_or(cfg.patches.patch_size);
    synth_dataset(ctx, &cfg, &ctx.resolve(&a.out), a.force, out).map(|_| ())
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.paths
        .dataset
        .as_deref()
        .ok_or_else(|| Error::invalid("no dataset: pass --dataset or set paths.dataset"))
}

/// Training and held-out images: `paths.held_out` when set, otherwise the
/// tail `held_out_fraction` of the dataset.
fn load_splits(cfg: &RunConfig) -> Result<(ClassSet, Vec<LabeledImage>, Vec<LabeledImage>)> {
    let (m, mut images) = load_dataset(dataset_path(cfg)?)?;
    if let Some(h) = &cfg.paths.held_out {
        let (hm, held) = load_dataset(h)?;
        if hm.classes != m.classes {
            return Err(Error::invalid("held-out split uses a different class set"));
        }
        return Ok((m.classes, images, held));
    }
    let n = images.len();
    let n_held = ((n as f64 * cfg.dataset.held_out_fraction).round() as usize).max(1);
    if n_held >= n {
        return Err(Error::invalid(format!("{n} images are too few to hold out {n_held}")));
    }
    let held = images.split_off(n - n_held);
    Ok((m.classes, images, held))
}

fn gan_checkpoint(cfg: &RunConfig, file: &str, why: &str) -> Result<Checkpoint> {
    let dir = cfg
        .paths
        .gan_run
        .as_ref()
        .ok_or_else(|| Error::MissingCheckpoint(format!("{why} needs {file} from a gan run; set paths.gan_run")))?;
    Checkpoint::load(&dir.join(file))
}

fn load_generator(cfg: &RunConfig, classes: &ClassSet) -> Result<Option<GeneratorModel<f32>>> {
    match cfg.generator.mode {
        GeneratorMode::Oracle => Ok(None),
        GeneratorMode::Learned => Ok(Some(GeneratorModel::from_checkpoint(
            &gan_checkpoint(cfg, "generator.ckpt", "generator mode learned")?,
            classes,
        )?)),
    }
}

fn load_discriminator(cfg: &RunConfig, head: HeadKind) -> Result<Option<DiscriminatorModel<f32>>> {
    if !head.needs_discriminator() {
        return Ok(None);
    }
    let ck = gan_checkpoint(cfg, "discriminator.ckpt", &format!("head {head}"))?;
    Ok(Some(DiscriminatorModel::from_checkpoint(&ck)?))
}

fn synthesizer(g: &Option<GeneratorModel<f32>>) -> Synthesizer<'_> {
    g.as_ref().map_or(Synthesizer::Oracle, Synthesizer::Learned)
}

/// Triplets from aligned (real, synthetic) pairs of the images without OoD
/// objects, deterministically subsampled to `max_triplets`.
fn make_triplets(
    cfg: &RunConfig,
    images: &[LabeledImage],
    classes: &ClassSet,
    synth: &Synthesizer<'_>,
    seed: u64,
) -> Result<(Vec<Triplet>, usize)> {
    let clean: Vec<LabeledImage> = images
        .iter()
        .filter(|im| !im.labels.data.iter().any(|&l| classes.is_ood(l)))
        .cloned()
        .collect();
    if clean.is_empty() {
        return Err(Error::invalid("every training image contains OoD objects"));
    }
    let (real, syn) = source_pairs(&clean, synth, classes, seed)?;
    let tcfg = crate::patches::TripletConfig {
        seed,
        ..cfg.triplet_config()
    };
    let set = build_triplets(&real, &syn, &tcfg)?;
    let mut triplets = set.triplets;
    if let Some(max) = cfg.patches.max_triplets {
        if max < triplets.len() {
            let mut idx: Vec<usize> = (0..triplets.len()).collect();
            idx.shuffle(&mut rng_for(seed, stream::SUBSAMPLE, 0));
            let mut keep = idx[..max].to_vec();
            keep.sort_unstable();
            let mut it = keep.into_iter().peekable();
            triplets = triplets
                .into_iter()
                .enumerate()
                .filter(|(i, _)| it.next_if_eq(i).is_some())
                .map(|(_, t)| t)
                .collect();
        }
    }
    if triplets.is_empty() {
        return Err(Error::Training("no triplets passed the semantic-difference gate".into()));
    }
    Ok((triplets, set.skipped))
}

/// Run one training stage with an already merged configuration.
pub fn train_stage(cfg: &RunConfig, stage: Stage, dir: &Path, force: bool, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    match stage {
        Stage::Seg => {
            let (classes, train, held) = load_splits(cfg)?;
            prepare_out(dir, force)?;
            write_run_header(dir, cfg, "seg", &dataset_digest(&train))?;
            let (model, report) = train_toy_segnet(&train, &held, &classes, &cfg.seg_config())?;
            model.to_checkpoint().save(&dir.join("segnet.ckpt"))?;
            let csv: String = std::iter::once("epoch,loss\n".to_string())
                .chain(report.loss_curve.iter().enumerate().map(|(e, l)| format!("{},{l:.8}\n", e + 1)))
                .collect();
            write_text(&dir.join("loss.csv"), &csv)?;
            let summary = json!({
                "held_out_accuracy": report.held_out_accuracy,
                "accuracy_gate": report.accuracy_gate,
                "passed": report.passed(),
                "train_images": train.len(),
                "held_out_images": held.len(),
            });
            write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
            out_line(
                out,
                format!(
                    "seg: held-out pixel accuracy {:.4} (gate {})",
                    report.held_out_accuracy, report.accuracy_gate
                ),
            )?;
            report.check()
        }
        Stage::Gan => {
            let (classes, train, held) = load_splits(cfg)?;
            prepare_out(dir, force)?;
            write_run_header(dir, cfg, "gan", &dataset_digest(&train))?;
            let (g, d, report) = train_toy_cgan(&train, &held, &classes, &cfg.cgan_config())?;
            g.to_checkpoint().save(&dir.join("generator.ckpt"))?;
            d.to_checkpoint().save(&dir.join("discriminator.ckpt"))?;
            let mut csv = String::from("epoch,l1,disc_loss\n");
            for (e, l1) in report.l1_curve.iter().enumerate() {
                let dl = report.disc_curve.get(e).map_or(String::new(), |v| format!("{v:.8}"));
                csv.push_str(&format!("{},{l1:.8},{dl}\n", e + 1));
            }
            write_text(&dir.join("l1.csv"), &csv)?;
            let summary = json!({
                "held_out_l1": report.held_out_l1,
                "l1_gate": report.l1_gate,
                "passed": report.passed(),
                "train_images": report.train_images,
                "held_out_images": report.held_out_images,
            });
            write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
            out_line(
                out,
                format!("gan: held-out L1 {:.4} (gate {})", report.held_out_l1, report.l1_gate),
            )?;
            report.check()
        }
        Stage::Detector => {
            let head = cfg.head()?;
            let disc = load_discriminator(cfg, head)?;
            let (m, images) = load_dataset(dataset_path(cfg)?)?;
            let generator = load_generator(cfg, &m.classes)?;
            prepare_out(dir, force)?;
            write_run_header(dir, cfg, "detector", &dataset_digest(&images))?;
            let (triplets, skipped) =
                make_triplets(cfg, &images, &m.classes, &synthesizer(&generator), cfg.train.seed)?;
            let mut model = DetectorModel::new(cfg.detector_config()?, cfg.train.seed, disc.as_ref())?;
            let curve = train_detector(&triplets, &mut model, &cfg.train_config(), &m.classes, Some(dir))?;
            model.to_checkpoint().save(&dir.join("detector.ckpt"))?;
            let last = curve.last().expect("at least one epoch");
            let summary = json!({
                "head": head.as_str(),
                "triplets": triplets.len(),
                "skipped_anchors": skipped,
                "epochs": curve.len(),
                "final_loss": last.mean_loss,
            });
            write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
            out_line(
                out,
                format!(
                    "detector {head}: {} triplets, {} epochs, final loss {:.6}",
                    triplets.len(),
                    curve.len(),
                    last.mean_loss
                ),
            )
        }
    }
}

pub fn cmd_train(ctx: &Context, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_ref().map(|p| ctx.resolve(p)).as_deref())?;
    if a.dataset.is_some() {
        cfg.paths.dataset = a.dataset.clone();
    }
    if a.held_out.is_some() {
        cfg.paths.held_out = a.held_out.clone();
    }
    if a.gan_run.is_some() {
        cfg.paths.gan_run = a.gan_run.clone();
    }
    if let Some(h) = &a.head {
        cfg.detector.head = h.clone();
    }
    cfg.train.lambda_d = a.lambda_d.unwrap_or(cfg.train.lambda_d);
    if let Some(e) = a.epochs {
        match a.stage {
            Stage::Seg => cfg.segnet.epochs = e,
            Stage::Gan => cfg.generator.epochs = e,
            Stage::Detector => cfg.train.epochs = e,
        }
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        cfg.generator.seed = s;
        cfg.segnet.seed = s;
    }
    resolve_paths(ctx, &mut cfg);
    train_stage(&cfg, a.stage, &ctx.resolve(&a.out), a.force, out)
}

/// A trained detector run: its resolved configuration and final weights.
pub fn load_detector_run(dir: &Path) -> Result<(RunConfig, DetectorModel<f32>)> {
    let cfg = RunConfig::load(&dir.join("config.toml"))?;
    let model = DetectorModel::from_checkpoint(&Checkpoint::load(&dir.join("detector.ckpt"))?)?;
    Ok((cfg, model))
}

fn load_segnet(cfg: &RunConfig, classes: &ClassSet) -> Result<Option<SegModel<f32>>> {
    if !cfg.segnet.use_for_eval {
        return Ok(None);
    }
    let dir = cfg
        .paths
        .seg_run
        .as_ref()
        .ok_or_else(|| Error::MissingCheckpoint("segnet.use_for_eval needs paths.seg_run".into()))?;
    Ok(Some(SegModel::from_checkpoint(
        &Checkpoint::load(&dir.join("segnet.ckpt"))?,
        classes,
    )?))
}

/// Process the first `limit` images of a dataset through a detector run.
fn run_pipeline<R>(
    ctx: &Context,
    run: &Path,
    dataset: &Path,
    limit: Option<usize>,
    finish: impl FnOnce(&EvalSetup<'_>, Vec<ImageEval>) -> Result<R>,
) -> Result<R> {
    let (cfg, model) = load_detector_run(run)?;
    let (m, images) = load_dataset(dataset)?;
    let generator = load_generator(&cfg, &m.classes)?;
    let segnet = load_segnet(&cfg, &m.classes)?;
    let setup = EvalSetup {
        synthesizer: synthesizer(&generator),
        segnet: segnet.as_ref(),
        seed: cfg.train.seed,
        chunk: cfg.eval.chunk,
        ..EvalSetup::new(Scorer::Model(&model), &m.classes)
    };
    let images = &images[..limit.unwrap_or(images.len()).min(images.len())];
    let evals = par_map(ctx.jobs, images, |im| process_image(&setup, im))?;
    finish(&setup, evals)
}

/// Evaluate a detector run on a dataset and write the JSON report.
pub fn eval_run(ctx: &Context, run: &Path, dataset: &Path, kind: MaskKind, report_path: &Path) -> Result<EvalReport> {
    let report = run_pipeline(ctx, run, dataset, None, |setup, evals| {
        if evals.is_empty() {
            return Err(Error::invalid("empty evaluation set"));
        }
        evaluate_maps(setup, &evals, kind)
    })?;
    write_text(report_path, &report.to_json())?;
    Ok(report)
}

pub fn report_line(r: &EvalReport) -> String {
    let mut s = format!(
        "{:<13} {:<8} auc {:.4}  best_f1 {:.4} @ {:.2}  f1@0.5 {:.4}  pixels {}+/{}-",
        r.detector, r.mask_kind, r.auc, r.best_f1.1, r.best_f1.0, r.f1_at_half, r.positives, r.negatives
    );
    if let Some(e) = &r.entropy_baseline {
        s.push_str(&format!("  | entropy auc {:.4} best_f1 {:.4}", e.auc, e.best_f1.1));
    }
    s
}

pub fn cmd_eval(ctx: &Context, a: &EvalArgs, out: &mut dyn Write) -> Result<EvalReport> {
    let kind: MaskKind = a.mask.parse()?;
    let report = eval_run(
        ctx,
        &ctx.resolve(&a.run),
        &ctx.resolve(&a.dataset),
        kind,
        &ctx.resolve(&a.report),
    )?;
    out_line(out, report_line(&report))?;
    Ok(report)
}

/// Write `n` panels named `<id>.png`.
pub fn render_run(ctx: &Context, run: &Path, dataset: &Path, dir: &Path, n: usize, force: bool) -> Result<Vec<PathBuf>> {
    prepare_out(dir, force)?;
    run_pipeline(ctx, run, dataset, Some(n), |setup, evals| {
        evals
            .iter()
            .map(|e| {
                let masks = build_masks(&e.image, setup.classes)?;
                let panel = render_panel(&e.image.rgb, &e.synthetic, &e.map, &masks)?;
                let path = dir.join(format!("{}.png", e.image.id));
                write_rgb_png(&path, &panel)?;
                Ok(path)
            })
            .collect()
    })
}

pub fn cmd_render(ctx: &Context, a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let dir = ctx.resolve(&a.out);
    let written = render_run(ctx, &ctx.resolve(&a.run), &ctx.resolve(&a.dataset), &dir, a.n, a.force)?;
    out_line(out, format!("wrote {} panels to {}", written.len(), dir.display()))
}

/// Detector sweep over `lambda_d`; each value is scored by best F1 on a
/// class-balanced set of held-out pairs.
pub fn sweep_lambda(cfg: &RunConfig, values: &[f64], dir: &Path, force: bool, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let head = cfg.head()?;
    let disc = load_discriminator(cfg, head)?;
    let (classes, train, held) = load_splits(cfg)?;
    let generator = load_generator(cfg, &classes)?;
    let synth = synthesizer(&generator);
    prepare_out(dir, force)?;
    write_run_header(dir, cfg, "sweep", &dataset_digest(&train))?;
    let (train_t, _) = make_triplets(cfg, &train, &classes, &synth, cfg.train.seed)?;
    let (eval_t, _) = make_triplets(
        &RunConfig {
            patches: crate::cli::config::PatchSection {
                max_triplets: None,
                ..cfg.patches.clone()
            },
            ..cfg.clone()
        },
        &held,
        &classes,
        &synth,
        cfg.train.seed.wrapping_add(1),
    )?;
    let rows = lambda_sweep(
        &train_t,
        &cfg.detector_config()?,
        disc.as_ref(),
        &cfg.train_config(),
        &classes,
        values,
        |m| Ok(balanced_pair_f1(m, &eval_t, &classes)?.best.1),
    )?;
    write_text(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    out_line(out, "lambda_d  best_f1   final_loss")?;
    for r in &rows {
        let line = match (&r.f1, &r.final_loss, &r.error) {
            (Some(f), Some(l), _) => format!("{:<8}  {f:.4}    {l:.6}", r.lambda_d),
            (_, _, e) => format!("{:<8}  failed: {}", r.lambda_d, e.as_deref().unwrap_or("unknown")),
        };
        out_line(out, line)?;
    }
    Ok(rows)
}

pub fn cmd_sweep(ctx: &Context, a: &SweepArgs, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    if a.param != "lambda_d" {
        return Err(Error::invalid(format!("cannot sweep {:?}; only lambda_d is supported", a.param)));
    }
    if a.values.is_empty() {
        return Err(Error::invalid("--values is empty"));
    }
    let mut cfg = RunConfig::load_or_default(a.config.as_ref().map(|p| ctx.resolve(p)).as_deref())?;
    if a.dataset.is_some() {
        cfg.paths.dataset = a.dataset.clone();
    }
    if a.held_out.is_some() {
        cfg.paths.held_out = a.held_out.clone();
    }
    resolve_paths(ctx, &mut cfg);
    sweep_lambda(&cfg, &a.values, &ctx.resolve(&a.out), a.force, out)
}

/// synth (train and test) → seg → gan → one detector per configured head →
/// eval against every mask → render.
pub fn reproduce(ctx: &Context, base: &RunConfig, dir: &Path, force: bool, out: &mut dyn Write) -> Result<()> {
    base.validate()?;
    prepare_out(dir, force)?;
    write_text(&dir.join("config.toml"), &base.to_toml())?;
    let train_dir = dir.join("data/train");
    let test_dir = dir.join("data/test");
    out_line(out, "== synth")?;
    synth_dataset(ctx, base, &train_dir, false, out)?;
    let mut test_cfg = base.clone();
    test_cfg.dataset.n = base.reproduce.test_n;
    test_cfg.dataset.seed = base.dataset.seed.wrapping_add(1);
    test_cfg.dataset.ood_rate = base.reproduce.test_ood_rate;
    test_cfg.dataset.corrupt_rate = base.reproduce.test_corrupt_rate;
    synth_dataset(ctx, &test_cfg, &test_dir, false, out)?;

    let mut cfg = base.clone();
    cfg.paths.dataset = Some(train_dir.clone());
    cfg.paths.held_out = None;
    let seg_dir = dir.join("runs/seg");
    let gan_dir = dir.join("runs/gan");
    // A missed quality gate is reported but does not stop the chain; the
    // checkpoints are written either way.
    let gated = |stage, dir: &Path, out: &mut dyn Write| match train_stage(&cfg, stage, dir, false, out) {
        Err(Error::Training(msg)) => out_line(out, format!("warning: {msg}")),
        r => r,
    };
    out_line(out, "== train seg")?;
    gated(Stage::Seg, &seg_dir, out)?;
    out_line(out, "== train gan")?;
    gated(Stage::Gan, &gan_dir, out)?;
    cfg.paths.seg_run = Some(seg_dir);
    cfg.paths.gan_run = Some(gan_dir);

    let mut summary = String::from("head,mask,auc,best_f1,entropy_auc,error\n");
    for head in &base.reproduce.heads {
        let head: HeadKind = head.parse()?;
        let mut hcfg = cfg.clone();
        hcfg.detector.head = head.to_string();
        let run = dir.join(format!("runs/detector-{head}"));
        out_line(out, format!("== train detector {head}"))?;
        train_stage(&hcfg, Stage::Detector, &run, false, out)?;
        for kind in MaskKind::ALL {
            let report = dir.join(format!("reports/{head}_{kind}.json"));
            match eval_run(ctx, &run, &test_dir, kind, &report) {
                Ok(r) => {
                    out_line(out, report_line(&r))?;
                    let ent = r.entropy_baseline.as_ref().map_or(String::new(), |e| format!("{:.6}", e.auc));
                    summary.push_str(&format!("{head},{kind},{:.6},{:.6},{ent},\n", r.auc, r.best_f1.1));
                }
                Err(e @ Error::UndefinedMetric(_)) => {
                    out_line(out, format!("{head} {kind}: {e}"))?;
                    summary.push_str(&format!("{head},{kind},,,,{e}\n"));
                }
                Err(e) => return Err(e),
            }
        }
        if base.reproduce.render_n > 0 {
            render_run(ctx, &run, &test_dir, &dir.join(format!("panels/{head}")), base.reproduce.render_n, false)?;
        }
    }
    write_text(&dir.join("summary.csv"), &summary)?;
    out_line(out, format!("summary written to {}", dir.join("summary.csv").display()))
}

pub fn cmd_reproduce(ctx: &Context, a: &ReproduceArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_ref().map(|p| ctx.resolve(p)).as_deref())?;
    resolve_paths(ctx, &mut cfg);
    reproduce(ctx, &cfg, &ctx.resolve(&a.out), a.force, out)
}
