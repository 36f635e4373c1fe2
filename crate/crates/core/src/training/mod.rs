//! Detector objective and training loop.

mod loss;

pub use loss::{detector_loss, detector_loss_grad, detector_loss_parts, literal_objective, LossParts, DEFAULT_EPS};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::{f1_sweep, F1Sweep, F1_THRESHOLDS};
use crate::models::{epoch_order, DetectorConfig, DetectorModel, DiscriminatorModel, PairBatch};
use crate::nn::{Adam, Real, Tensor};
use crate::patches::{Patch, Triplet};
use crate::rng::{mix, stream};
use crate::toyworld::ClassSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_d: f64,
    pub lr: f64,
    /// Triplets per step; each contributes one positive and one negative pair.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_d: 1.0,
            lr: 1e-3,
            batch_size: 16,
            epochs: 5,
            seed: 0,
            eps: DEFAULT_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d > 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::invalid(format!("lambda_d {} must be positive", self.lambda_d)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(Error::invalid(format!("eps {} outside (0, 1e-3]", self.eps)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lambda_d = {}\nlr = {}\nbatch_size = {}\nepochs = {}\nseed = {}\neps = {}\n",
            self.lambda_d, self.lr, self.batch_size, self.epochs, self.seed, self.eps
        )
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pos_term: f64,
    pub neg_term: f64,
}

/// Per-pair score: the patch mean for per-pixel heads, the scalar otherwise.
fn pair_scores<T: Real>(out: &Tensor<T>) -> Vec<f64> {
    let len = out.sample_len() as f64;
    (0..out.n)
        .map(|i| out.sample(i).iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / len)
        .collect()
}

/// Loss of a batch whose first `n_pos` pairs are positives and the rest
/// negatives.
pub fn batch_loss<T: Real>(
    model: &DetectorModel<T>,
    batch: &PairBatch<T>,
    n_pos: usize,
    lambda_d: f64,
    eps: f64,
) -> Result<LossParts> {
    let scores = pair_scores(&model.forward(batch)?);
    detector_loss_parts(&scores[..n_pos], &scores[n_pos..], lambda_d, eps)
}

/// Like [`batch_loss`], also accumulating parameter gradients into `model`.
pub fn batch_loss_backward<T: Real>(
    model: &mut DetectorModel<T>,
    batch: &PairBatch<T>,
    n_pos: usize,
    lambda_d: f64,
    eps: f64,
) -> Result<LossParts> {
    let (out, cache) = model.forward_train(batch)?;
    let scores = pair_scores(&out);
    let (pos, neg) = scores.split_at(n_pos);
    let parts = detector_loss_parts(pos, neg, lambda_d, eps)?;
    let (gp, gn) = detector_loss_grad(pos, neg, lambda_d, eps);
    let per = out.sample_len();
    let mut d_out = out.map(|_| T::zero());
    for (i, g) in gp.iter().chain(&gn).enumerate() {
        let v = T::lit(g / per as f64);
        d_out.sample_mut(i).iter_mut().for_each(|x| *x = v);
    }
    model.backward(cache, d_out);
    Ok(parts)
}

/// Stack positives then negatives of the given triplets into one batch.
pub fn triplet_batch<T: Real>(triplets: &[&Triplet], classes: Option<&ClassSet>) -> Result<PairBatch<T>> {
    let mut pairs: Vec<(&Patch, &Patch)> = triplets.iter().map(|t| (&t.anchor, &t.positive)).collect();
    pairs.extend(triplets.iter().map(|t| (&t.anchor, &t.negative)));
    PairBatch::from_patches(&pairs, classes)
}

/// Scores of (real, synthetic) pairs, evaluated in chunks.
pub fn score_pairs<T: Real>(
    model: &DetectorModel<T>,
    pairs: &[(&Patch, &Patch)],
    classes: &ClassSet,
    chunk: usize,
) -> Result<Vec<f64>> {
    let cond = model.head_kind().needs_discriminator().then_some(classes);
    let mut out = Vec::with_capacity(pairs.len());
    for c in pairs.chunks(chunk.max(1)) {
        out.extend(pair_scores(&model.forward(&PairBatch::from_patches(c, cond)?)?));
    }
    Ok(out)
}

/// Best-threshold F1 on a class-balanced pair set: each triplet contributes
/// its aligned pair (label `false`) and its mismatched pair (label `true`).
pub fn balanced_pair_f1(model: &DetectorModel<f32>, triplets: &[Triplet], classes: &ClassSet) -> Result<F1Sweep> {
    let mut pairs: Vec<(&Patch, &Patch)> = triplets.iter().map(|t| (&t.anchor, &t.positive)).collect();
    pairs.extend(triplets.iter().map(|t| (&t.anchor, &t.negative)));
    let scores = score_pairs(model, &pairs, classes, 64)?;
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i >= triplets.len()).collect();
    f1_sweep(&scores, &labels, F1_THRESHOLDS)
}

/// Mini-batch Adam on the detector objective with (anchor, positive) as
/// positive pairs and (anchor, negative) as negative pairs.
///
/// The visiting order of epoch `e` depends only on `(seed, e)`. With `out`
/// set, writes `config.txt`, `checkpoints/epoch_NNN.ckpt` and `loss.csv`
/// there. The discriminator head has no trainable parameters: its curve is
/// the forward-only loss.
pub fn train_detector(
    triplets: &[Triplet],
    model: &mut DetectorModel<f32>,
    cfg: &TrainConfig,
    classes: &ClassSet,
    out: Option<&Path>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets to train on"));
    }
    let p = model.config.patch_size;
    if let Some(t) = triplets.iter().find(|t| t.anchor.size != p) {
        return Err(Error::invalid(format!(
            "triplet patch size {} differs from detector patch size {p}",
            t.anchor.size
        )));
    }
    let cond = model.head_kind().needs_discriminator().then_some(classes);
    let trainable = model.params().iter().any(|p| !p.frozen) && model.head_param_count() > 0;
    let ckpt_dir = out.map(|d| d.join("checkpoints"));
    if let (Some(dir), Some(ck)) = (out, ckpt_dir.as_ref()) {
        fs::create_dir_all(ck).map_err(|e| Error::io(ck, e))?;
        let echo = format!("{}{}", model.config_echo(), cfg.to_kv());
        let path = dir.join("config.txt");
        fs::write(&path, echo).map_err(|e| Error::io(&path, e))?;
    }
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(triplets.len(), mix(&[cfg.seed, stream::SHUFFLE]), epoch);
        let (mut loss, mut pos, mut neg, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Triplet> = chunk.iter().map(|&i| &triplets[i]).collect();
            let batch = triplet_batch::<f32>(&items, cond)?;
            let parts = if trainable {
                let parts = batch_loss_backward(model, &batch, items.len(), cfg.lambda_d, cfg.eps)?;
                opt.step(model.params_mut());
                parts
            } else {
                batch_loss(model, &batch, items.len(), cfg.lambda_d, cfg.eps)?
            };
            if !parts.total.is_finite() {
                return Err(Error::Training(format!(
                    "loss is not finite at epoch {} step {steps}",
                    epoch + 1
                )));
            }
            loss += parts.total;
            pos += parts.pos_term;
            neg += parts.neg_term;
            steps += 1;
        }
        let k = steps as f64;
        curve.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: loss / k,
            pos_term: pos / k,
            neg_term: neg / k,
        });
        if let Some(ck) = &ckpt_dir {
            model
                .to_checkpoint()
                .save(&ck.join(format!("epoch_{:03}.ckpt", epoch + 1)))?;
        }
    }
    if let Some(dir) = out {
        let path = dir.join("loss.csv");
        fs::write(&path, loss_csv(&curve)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(curve)
}

pub fn loss_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,mean_loss,pos_term,neg_term\n");
    for e in curve {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.mean_loss, e.pos_term, e.neg_term);
    }
    s
}

/// One row of a λ_D sweep. A failed run keeps its error and the sweep goes on.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda_d: f64,
    pub f1: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

/// Train one detector per λ_D (fresh init from a seed derived from the
/// value's index) and score each with `eval_fn`.
pub fn lambda_sweep(
    triplets: &[Triplet],
    detector: &DetectorConfig,
    discriminator: Option<&DiscriminatorModel<f32>>,
    train: &TrainConfig,
    classes: &ClassSet,
    values: &[f64],
    mut eval_fn: impl FnMut(&DetectorModel<f32>) -> Result<f64>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &lambda_d in values {
        let mut run = || -> Result<(f64, f64)> {
            let cfg = TrainConfig {
                lambda_d,
                ..train.clone()
            };
            let dcfg = DetectorConfig {
                lambda_d,
                ..detector.clone()
            };
            let mut model = DetectorModel::new(dcfg, train.seed, discriminator)?;
            let curve = train_detector(triplets, &mut model, &cfg, classes, None)?;
            Ok((eval_fn(&model)?, curve.last().unwrap().mean_loss))
        };
        rows.push(match run() {
            Ok((f1, loss)) => SweepRow {
                lambda_d,
                f1: Some(f1),
                final_loss: Some(loss),
                error: None,
            },
            Err(e) => SweepRow {
                lambda_d,
                f1: None,
                final_loss: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda_d,f1,final_loss,error\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.lambda_d,
            opt(r.f1),
            opt(r.final_loss),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HeadKind;
    use crate::patches::{build_triplets, SourceImage, TripletConfig};
    use crate::toyworld::{generate_dataset, render_from_labels, DatasetSpec, SceneSpec};
    use std::sync::Arc;

    pub(crate) fn toy_triplets(n_images: usize, p: usize, seed: u64) -> Vec<Triplet> {
        let c = ClassSet::default();
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, p),
            count: n_images,
            seed,
            ood_rate: 0.0,
            ..DatasetSpec::default()
        };
        let data = generate_dataset(&spec, &c).unwrap();
        let real: Vec<SourceImage> = data
            .iter()
            .map(|im| SourceImage {
                id: Arc::from(im.id.as_str()),
                rgb: im.rgb.clone(),
                labels: im.labels.clone(),
            })
            .collect();
        let syn: Vec<SourceImage> = data
            .iter()
            .map(|im| SourceImage {
                id: Arc::from(im.id.as_str()),
                rgb: render_from_labels(&im.labels, &c, im.render_seed ^ 1, im.noise_level).unwrap(),
                labels: im.labels.clone(),
            })
            .collect();
        let cfg = TripletConfig {
            patch_size: p,
            tau: 0.5,
            seed,
            max_tries: 200,
        };
        build_triplets(&real, &syn, &cfg).unwrap().triplets
    }

    fn small(head: HeadKind) -> DetectorConfig {
        DetectorConfig {
            head,
            patch_size: 16,
            base_filters: 2,
            conv_layers: 4,
            lambda_d: 1.0,
        }
    }

    #[test]
    fn curve_length_and_determinism() {
        let trip = toy_triplets(4, 16, 3);
        let c = ClassSet::default();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut a = DetectorModel::new(small(HeadKind::Resize), 1, None).unwrap();
        let mut b = a.clone();
        let ca = train_detector(&trip, &mut a, &cfg, &c, None).unwrap();
        let cb = train_detector(&trip, &mut b, &cfg, &c, None).unwrap();
        assert_eq!(ca.len(), 3);
        assert_eq!(ca, cb);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_mismatched_input_rejected() {
        let c = ClassSet::default();
        let mut m = DetectorModel::new(small(HeadKind::FullyConnected), 1, None).unwrap();
        let cfg = TrainConfig::default();
        assert!(train_detector(&[], &mut m, &cfg, &c, None).is_err());
        let trip = toy_triplets(2, 32, 1);
        assert!(train_detector(&trip, &mut m, &cfg, &c, None).is_err());
    }

    #[test]
    fn run_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let trip = toy_triplets(2, 16, 2);
        let c = ClassSet::default();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut m = DetectorModel::new(small(HeadKind::Deconv), 1, None).unwrap();
        train_detector(&trip, &mut m, &cfg, &c, Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,mean_loss,pos_term,neg_term"));
        for e in 1..=2 {
            assert!(dir.path().join(format!("checkpoints/epoch_{e:03}.ckpt")).exists());
        }
        let config = fs::read_to_string(dir.path().join("config.txt")).unwrap();
        assert!(config.contains("head = deconv") && config.contains("lambda_d = 1"));
    }

    #[test]
    fn transfer_head_keeps_frozen_trunk() {
        let trip = toy_triplets(2, 16, 4);
        let c = ClassSet::default();
        let d = DiscriminatorModel::<f32>::new(c.num_in_dist(), 2, 9);
        let mut m = DetectorModel::new(
            DetectorConfig {
                head: HeadKind::TransferLearning,
                ..small(HeadKind::TransferLearning)
            },
            1,
            Some(&d),
        )
        .unwrap();
        let frozen_before: Vec<Vec<f32>> = m
            .params()
            .iter()
            .filter(|p| p.frozen)
            .map(|p| p.value.clone())
            .collect();
        assert_eq!(frozen_before.len(), 6);
        let head_before: Vec<Vec<f32>> = m
            .params()
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.clone())
            .collect();
        // gradients never reach frozen parameters
        let items: Vec<&Triplet> = trip.iter().take(4).collect();
        let batch = triplet_batch::<f32>(&items, Some(&c)).unwrap();
        batch_loss_backward(&mut m, &batch, 4, 1.0, DEFAULT_EPS).unwrap();
        for p in m.params().iter().filter(|p| p.frozen) {
            assert!(p.grad.iter().all(|&g| g == 0.0), "{}", p.name);
        }
        m.zero_grad();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        train_detector(&trip, &mut m, &cfg, &c, None).unwrap();
        let frozen_after: Vec<Vec<f32>> = m
            .params()
            .iter()
            .filter(|p| p.frozen)
            .map(|p| p.value.clone())
            .collect();
        let bits = |v: &Vec<Vec<f32>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&frozen_before), bits(&frozen_after));
        let head_after: Vec<Vec<f32>> = m
            .params()
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.clone())
            .collect();
        assert_ne!(head_before, head_after);
    }

    #[test]
    fn discriminator_head_trains_nothing_but_reports_curve() {
        let trip = toy_triplets(2, 16, 5);
        let c = ClassSet::default();
        let d = DiscriminatorModel::<f32>::new(c.num_in_dist(), 2, 9);
        let mut m = DetectorModel::new(small(HeadKind::Discriminator), 1, Some(&d)).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let curve = train_detector(&trip, &mut m, &cfg, &c, None).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(m, before);
        assert!((curve[0].mean_loss - curve[1].mean_loss).abs() < 1e-9);
    }

    #[test]
    fn sweep_singleton_and_failure_rows() {
        let trip = toy_triplets(2, 16, 6);
        let c = ClassSet::default();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let rows = lambda_sweep(&trip, &small(HeadKind::FullyConnected), None, &cfg, &c, &[1.0], |_| Ok(0.5)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].f1, Some(0.5));
        let rows = lambda_sweep(&trip, &small(HeadKind::FullyConnected), None, &cfg, &c, &[1.0, -1.0], |_| Ok(0.5)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].error.is_some() && rows[1].f1.is_none());
        assert_eq!(sweep_csv(&rows).lines().count(), 3);
    }

    /// Analytic parameter gradients of the loss vs central differences for the
    /// three trainable detector heads on a 16×16 instance. A mismatch is
    /// tolerated only where the ±h step changes a rectifier or pooling regime.
    #[test]
    fn head_gradients_match_finite_differences() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_for(2, 0, 0);
        let mut random = || Tensor::from_vec(2, 3, 16, 16, (0..2 * 768).map(|_| rng.gen_range(0.0..1.0)).collect());
        let batch = PairBatch {
            real: random(),
            synthetic: random(),
            condition: None,
        };
        for head in [HeadKind::Resize, HeadKind::Deconv, HeadKind::FullyConnected] {
            let mut m = DetectorModel::<f64>::new(small(head), 11, None).unwrap();
            batch_loss_backward(&mut m, &batch, 1, 1.3, DEFAULT_EPS).unwrap();
            let base = m.regime(&batch).unwrap();
            let h = 1e-4;
            let (mut checked, mut kinks) = (0, 0);
            for k in 0..m.params().len() {
                let len = m.params()[k].len();
                for i in (0..len).step_by((len / 40).max(1)) {
                    let analytic = m.params()[k].grad[i];
                    let orig = m.params()[k].value[i];
                    m.params_mut()[k].value[i] = orig + h;
                    let fp = batch_loss(&m, &batch, 1, 1.3, DEFAULT_EPS).unwrap().total;
                    let rp = m.regime(&batch).unwrap();
                    m.params_mut()[k].value[i] = orig - h;
                    let fm = batch_loss(&m, &batch, 1, 1.3, DEFAULT_EPS).unwrap().total;
                    let rm = m.regime(&batch).unwrap();
                    m.params_mut()[k].value[i] = orig;
                    checked += 1;
                    let fd = (fp - fm) / (2.0 * h);
                    let scale = analytic.abs().max(fd.abs()).max(1e-6);
                    if (analytic - fd).abs() / scale < 1e-3 {
                        continue;
                    }
                    // a mismatch is only excused when the step straddles a kink
                    assert!(
                        rp != base || rm != base,
                        "{head} {}[{i}]: {analytic} vs {fd}",
                        m.params()[k].name
                    );
                    kinks += 1;
                }
            }
            assert!(kinks * 10 < checked, "{head}: {kinks} kinks vs {checked} checked");
        }
    }
}
