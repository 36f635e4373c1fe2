use super::gan::parse_widths;
use super::{epoch_order, rgb_tensor, UNet};
use crate::error::{Error, Result};
use crate::grid::{Grid, ProbField, RgbImage};
use crate::nn::{Adam, Checkpoint, Param, Real, Tensor};
use crate::rng::{rng_for, stream};
use crate::toyworld::{ClassSet, LabeledImage, Prediction};

/// Toy segmentation network: rgb → distribution over in-distribution classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel<T> {
    pub classes: ClassSet,
    pub net: UNet<T>,
}

impl<T: Real> SegModel<T> {
    pub fn new(classes: &ClassSet, widths: [usize; 4], seed: u64) -> Self {
        let mut net = UNet::new("seg", 3, classes.num_in_dist(), widths, Vec::new());
        net.init(&mut rng_for(seed, stream::INIT, 3));
        SegModel {
            classes: classes.clone(),
            net,
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }

    /// Per-pixel class distribution and its argmax. Every output id is
    /// in-distribution: there is no OoD channel.
    pub fn predict(&self, rgb: &RgbImage) -> Result<Prediction> {
        if rgb.height % 8 != 0 || rgb.width % 8 != 0 {
            return Err(Error::invalid(format!(
                "segmentation input {}x{} must be a multiple of 8",
                rgb.height, rgb.width
            )));
        }
        let logits = self.net.forward(&rgb_tensor(rgb));
        let (h, w, c) = (rgb.height, rgb.width, self.classes.num_in_dist());
        let plane = h * w;
        let mut probs = ProbField {
            height: h,
            width: w,
            classes: c,
            data: vec![0.0; plane * c],
        };
        let mut labels = Grid::filled(h, w, 0u8);
        let mut row = vec![0.0f64; c];
        for i in 0..plane {
            for (k, r) in row.iter_mut().enumerate() {
                *r = logits.data[k * plane + i].to_f64().unwrap();
            }
            softmax_in_place(&mut row);
            let mut best = 0;
            for k in 0..c {
                probs.data[i * c + k] = row[k] as f32;
                if row[k] > row[best] {
                    best = k;
                }
            }
            labels.data[i] = self.classes.in_dist_ids[best];
        }
        Ok(Prediction { labels, probs })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let w = self.net.widths;
        let ids: Vec<String> = self.classes.in_dist_ids.iter().map(|i| i.to_string()).collect();
        let config = format!(
            "widths = {},{},{},{}\nin_dist_ids = {}\n",
            w[0],
            w[1],
            w[2],
            w[3],
            ids.join(",")
        );
        Checkpoint::from_params("segnet", &config, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint, classes: &ClassSet) -> Result<Self> {
        if ck.kind != "segnet" {
            return Err(Error::invalid(format!("expected a segnet checkpoint, got {}", ck.kind)));
        }
        let ids: Vec<String> = classes.in_dist_ids.iter().map(|i| i.to_string()).collect();
        if ck.config_value("in_dist_ids") != Some(ids.join(",").as_str()) {
            return Err(Error::invalid("segnet checkpoint was trained on a different class set"));
        }
        let mut m = SegModel::new(classes, parse_widths(ck)?, 0);
        ck.load_into(m.net.params_mut())?;
        Ok(m)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegConfig {
    pub widths: [usize; 4],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Held-out in-distribution pixel accuracy the net must reach.
    pub accuracy_gate: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            widths: [8, 16, 32, 32],
            epochs: 10,
            batch_size: 4,
            lr: 3e-3,
            seed: 0,
            accuracy_gate: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    /// Mean training cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
    pub held_out_accuracy: f64,
    pub accuracy_gate: f64,
}

impl SegReport {
    pub fn passed(&self) -> bool {
        self.held_out_accuracy >= self.accuracy_gate
    }

    pub fn check(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::Training(format!(
                "segmentation held-out accuracy {:.4} below gate {}",
                self.held_out_accuracy, self.accuracy_gate
            )))
        }
    }
}

/// Fraction of in-distribution pixels whose argmax matches the label.
pub fn pixel_accuracy(model: &SegModel<f32>, images: &[LabeledImage]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for im in images {
        let pred = model.predict(&im.rgb)?;
        for (&p, &t) in pred.labels.data.iter().zip(&im.labels.data) {
            if !model.classes.is_ood(t) {
                total += 1;
                hit += (p == t) as usize;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no in-distribution pixels".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// Train with per-pixel softmax cross-entropy; OoD pixels carry no loss.
pub fn train_toy_segnet(
    train: &[LabeledImage],
    held_out: &[LabeledImage],
    classes: &ClassSet,
    cfg: &SegConfig,
) -> Result<(SegModel<f32>, SegReport)> {
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::invalid("segmentation training needs train and held-out images"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    let mut model = SegModel::<f32>::new(classes, cfg.widths, cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let c = classes.num_in_dist();
    let mut report = SegReport {
        loss_curve: Vec::new(),
        held_out_accuracy: f64::NAN,
        accuracy_gate: cfg.accuracy_gate,
    };
    let mut row = vec![0.0f64; c];
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let first = &train[chunk[0]];
            let (h, w) = (first.height(), first.width());
            let plane = h * w;
            let mut x = Tensor::zeros(chunk.len(), 3, h, w);
            for (i, &k) in chunk.iter().enumerate() {
                if train[k].height() != h || train[k].width() != w {
                    return Err(Error::invalid("training images differ in size"));
                }
                x.sample_mut(i).copy_from_slice(&rgb_tensor::<f32>(&train[k].rgb).data);
            }
            let (logits, cache) = model.net.forward_train(x);
            let mut grad = logits.map(|_| 0.0);
            let counted: usize = chunk
                .iter()
                .map(|&k| train[k].labels.data.iter().filter(|&&l| !classes.is_ood(l)).count())
                .sum();
            if counted == 0 {
                continue;
            }
            let norm = 1.0 / counted as f64;
            let mut loss = 0.0;
            for (i, &k) in chunk.iter().enumerate() {
                let s = logits.sample(i);
                let g = grad.sample_mut(i);
                for (p, &label) in train[k].labels.data.iter().enumerate() {
                    let Some(target) = classes.channel_of(label) else {
                        continue;
                    };
                    for (ch, r) in row.iter_mut().enumerate() {
                        *r = s[ch * plane + p] as f64;
                    }
                    softmax_in_place(&mut row);
                    loss -= row[target].max(1e-12).ln() * norm;
                    for ch in 0..c {
                        let onehot = if ch == target { 1.0 } else { 0.0 };
                        g[ch * plane + p] = ((row[ch] - onehot) * norm) as f32;
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!("segmentation loss is not finite at epoch {epoch}")));
            }
            model.net.backward(cache, grad, false);
            opt.step(model.net.params_mut());
            loss_sum += loss;
            batches += 1;
        }
        report.loss_curve.push(loss_sum / batches.max(1) as f64);
    }
    report.held_out_accuracy = pixel_accuracy(&model, held_out)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{generate_dataset, DatasetSpec, SceneSpec};

    fn data() -> Vec<LabeledImage> {
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, 32),
            count: 6,
            seed: 11,
            ood_rate: 0.5,
            ..DatasetSpec::default()
        };
        generate_dataset(&spec, &ClassSet::default()).unwrap()
    }

    #[test]
    fn rows_sum_to_one_and_ids_in_distribution() {
        let c = ClassSet::default();
        let m = SegModel::<f32>::new(&c, [4, 4, 8, 8], 1);
        for im in data() {
            let p = m.predict(&im.rgb).unwrap();
            p.probs.check_normalized(1e-6).unwrap();
            assert!(p.labels.data.iter().all(|&l| !c.is_ood(l) && c.contains(l)));
        }
    }

    #[test]
    fn short_training_reduces_loss_and_is_deterministic() {
        let c = ClassSet::default();
        let d = data();
        let cfg = SegConfig {
            widths: [4, 8, 8, 8],
            epochs: 4,
            batch_size: 2,
            ..SegConfig::default()
        };
        let (m, r) = train_toy_segnet(&d[..4], &d[4..], &c, &cfg).unwrap();
        assert!(r.loss_curve.last().unwrap() < &r.loss_curve[0], "{:?}", r.loss_curve);
        assert!((0.0..=1.0).contains(&r.held_out_accuracy));
        let (m2, _) = train_toy_segnet(&d[..4], &d[4..], &c, &cfg).unwrap();
        assert_eq!(m, m2);
        let back = SegModel::from_checkpoint(&m.to_checkpoint(), &c).unwrap();
        assert_eq!(back, m);
    }
}
