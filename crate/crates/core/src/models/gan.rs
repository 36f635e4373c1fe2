use super::{epoch_order, one_hot_into, rgb_tensor, tensor_rgb, UNet};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, RgbImage};
use crate::nn::{Adam, Checkpoint, Conv2d, Layer, Param, Real, Sequential, Tensor};
use crate::rng::{rng_for, stream};
use crate::toyworld::{ClassSet, LabeledImage};

const GAN_EPS: f64 = 1e-7;

/// Conditional patch discriminator: (one-hot labels ‖ rgb) → grid of realism
/// scores at 1/8 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel<T> {
    /// Number of label channels of the condition.
    pub classes: usize,
    pub base: usize,
    /// The three stride-2 convolutions (with activations).
    pub trunk: Sequential<T>,
    tail: Sequential<T>,
}

pub struct DiscriminatorCache<T> {
    trunk: Vec<Tensor<T>>,
    tail: Vec<Tensor<T>>,
}

impl<T: Real> DiscriminatorModel<T> {
    pub fn new(classes: usize, base: usize, seed: u64) -> Self {
        let d = base;
        let mut trunk = Sequential::new(vec![
            Layer::Conv(Conv2d::new("disc.conv0", classes + 3, d, 4, 2, 1)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new("disc.conv1", d, 2 * d, 4, 2, 1)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new("disc.conv2", 2 * d, 4 * d, 4, 2, 1)),
            Layer::LeakyRelu(0.2),
        ]);
        let mut tail = Sequential::new(vec![
            Layer::Conv(Conv2d::new("disc.out", 4 * d, 1, 3, 1, 1)),
            Layer::Sigmoid,
        ]);
        let mut rng = rng_for(seed, stream::INIT, 1);
        trunk.init(&mut rng);
        tail.init(&mut rng);
        DiscriminatorModel {
            classes,
            base,
            trunk,
            tail,
        }
    }

    /// Input: `N×(C+3)×H×W` with H, W multiples of 8.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.tail.forward(&self.trunk.forward(x))
    }

    pub fn forward_train(&self, x: Tensor<T>) -> (Tensor<T>, DiscriminatorCache<T>) {
        let trunk = self.trunk.forward_cached(x);
        let tail = self.tail.forward_cached(trunk.last().unwrap().clone());
        (tail.last().unwrap().clone(), DiscriminatorCache { trunk, tail })
    }

    pub fn backward(&mut self, cache: DiscriminatorCache<T>, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let g = self.tail.backward(&cache.tail, dy, true).unwrap();
        self.trunk.backward(&cache.trunk, g, need_dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.trunk.params();
        v.extend(self.tail.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.trunk.params_mut();
        v.extend(self.tail.params_mut());
        v
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = format!("classes = {}\nbase = {}\n", self.classes, self.base);
        Checkpoint::from_params("discriminator", &config, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "discriminator" {
            return Err(Error::invalid(format!("expected a discriminator checkpoint, got {}", ck.kind)));
        }
        let classes = parse_usize(ck, "classes")?;
        let base = parse_usize(ck, "base")?;
        let mut d = DiscriminatorModel::new(classes, base, 0);
        ck.load_into(d.params_mut())?;
        Ok(d)
    }
}

pub(crate) fn parse_usize(ck: &Checkpoint, key: &str) -> Result<usize> {
    ck.config_value(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::invalid(format!("{} checkpoint config lacks {key}", ck.kind)))
}

pub(crate) fn parse_widths(ck: &Checkpoint) -> Result<[usize; 4]> {
    let raw = ck
        .config_value("widths")
        .ok_or_else(|| Error::invalid(format!("{} checkpoint config lacks widths", ck.kind)))?;
    let v: Vec<usize> = raw
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad widths {raw:?}")))?;
    v.try_into().map_err(|_| Error::invalid(format!("widths {raw:?} must have 4 entries")))
}

/// Conditional generator: one-hot in-distribution labels → rgb in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel<T> {
    pub classes: ClassSet,
    pub net: UNet<T>,
}

impl<T: Real> GeneratorModel<T> {
    pub fn new(classes: &ClassSet, widths: [usize; 4], seed: u64) -> Self {
        let mut net = UNet::new("gen", classes.num_in_dist(), 3, widths, vec![Layer::Sigmoid]);
        net.init(&mut rng_for(seed, stream::INIT, 2));
        GeneratorModel {
            classes: classes.clone(),
            net,
        }
    }

    /// One-hot encode a batch of label maps. OoD ids have no channel and are
    /// rejected.
    pub fn encode(&self, labels: &[&LabelMap]) -> Result<Tensor<T>> {
        let first = labels.first().ok_or_else(|| Error::invalid("empty label batch"))?;
        let mut t = Tensor::zeros(labels.len(), self.classes.num_in_dist(), first.height, first.width);
        for (i, l) in labels.iter().enumerate() {
            if !l.same_shape(first) {
                return Err(Error::invalid("label maps differ in shape within a batch"));
            }
            one_hot_into(l, &self.classes, t.sample_mut(i))?;
        }
        Ok(t)
    }

    pub fn generate(&self, labels: &LabelMap) -> Result<RgbImage> {
        if labels.height % 8 != 0 || labels.width % 8 != 0 {
            return Err(Error::invalid(format!(
                "generator input {}x{} must be a multiple of 8",
                labels.height, labels.width
            )));
        }
        Ok(tensor_rgb(&self.net.forward(&self.encode(&[labels])?)))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
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
        Checkpoint::from_params("generator", &config, &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint, classes: &ClassSet) -> Result<Self> {
        if ck.kind != "generator" {
            return Err(Error::invalid(format!("expected a generator checkpoint, got {}", ck.kind)));
        }
        let ids: Vec<String> = classes.in_dist_ids.iter().map(|i| i.to_string()).collect();
        if ck.config_value("in_dist_ids") != Some(ids.join(",").as_str()) {
            return Err(Error::invalid("generator checkpoint was trained on a different class set"));
        }
        let mut g = GeneratorModel::new(classes, parse_widths(ck)?, 0);
        ck.load_into(g.net.params_mut())?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CganConfig {
    pub widths: [usize; 4],
    pub disc_base: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the L1 term in adversarial mode.
    pub lambda_l1: f64,
    pub adversarial: bool,
    pub seed: u64,
    /// Held-out mean L1 the generator must reach.
    pub l1_gate: f64,
}

impl Default for CganConfig {
    fn default() -> Self {
        CganConfig {
            widths: [8, 16, 32, 32],
            disc_base: 8,
            epochs: 12,
            batch_size: 4,
            lr: 2e-3,
            lambda_l1: 100.0,
            adversarial: false,
            seed: 0,
            l1_gate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CganReport {
    /// Mean training L1 per epoch.
    pub l1_curve: Vec<f64>,
    /// Mean discriminator loss per epoch (adversarial mode only).
    pub disc_curve: Vec<f64>,
    pub held_out_l1: f64,
    pub train_images: usize,
    pub held_out_images: usize,
    pub l1_gate: f64,
}

impl CganReport {
    pub fn passed(&self) -> bool {
        self.held_out_l1 <= self.l1_gate
    }

    /// Error when the held-out L1 misses the gate.
    pub fn check(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::Training(format!(
                "generator held-out L1 {:.4} above gate {}",
                self.held_out_l1, self.l1_gate
            )))
        }
    }
}

fn in_dist_only<'a>(images: &'a [LabeledImage], classes: &ClassSet) -> Vec<&'a LabeledImage> {
    images
        .iter()
        .filter(|im| im.labels.data.iter().all(|&l| !classes.is_ood(l)))
        .collect()
}

fn rgb_batch<T: Real>(images: &[&LabeledImage]) -> Tensor<T> {
    let parts: Vec<Tensor<T>> = images.iter().map(|im| rgb_tensor(&im.rgb)).collect();
    let first = &parts[0];
    let mut t = Tensor::zeros(parts.len(), 3, first.h, first.w);
    for (i, p) in parts.iter().enumerate() {
        t.sample_mut(i).copy_from_slice(&p.data);
    }
    t
}

/// Mean |G(labels) − rgb| over all pixels and channels.
pub fn mean_l1(generator: &GeneratorModel<f32>, images: &[&LabeledImage]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for im in images {
        let x = generator.encode(&[&im.labels])?;
        let y = generator.net.forward(&x);
        let target = rgb_tensor::<f32>(&im.rgb);
        sum += y
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>();
        count += y.data.len();
    }
    if count == 0 {
        return Err(Error::invalid("no in-distribution images to measure"));
    }
    Ok(sum / count as f64)
}

/// Train the toy conditional generator on label → rgb pairs. Images that
/// contain OoD ids are skipped (the generator has no channel for them).
///
/// Without `adversarial` the objective is plain L1 to the rendered image;
/// with it, a pix2pix-style objective: the discriminator minimizes binary
/// cross-entropy on (real → 1, generated → 0) and the generator minimizes
/// `BCE(D(G), 1) + λ_L1·L1`.
pub fn train_toy_cgan(
    train: &[LabeledImage],
    held_out: &[LabeledImage],
    classes: &ClassSet,
    cfg: &CganConfig,
) -> Result<(GeneratorModel<f32>, DiscriminatorModel<f32>, CganReport)> {
    let train = in_dist_only(train, classes);
    let held = in_dist_only(held_out, classes);
    if train.is_empty() || held.is_empty() {
        return Err(Error::invalid("generator training needs in-distribution train and held-out images"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    let mut generator = GeneratorModel::<f32>::new(classes, cfg.widths, cfg.seed);
    let mut disc = DiscriminatorModel::<f32>::new(classes.num_in_dist(), cfg.disc_base, cfg.seed);
    let mut g_opt = Adam::new(cfg.lr);
    let mut d_opt = Adam::new(cfg.lr * 0.5);
    let mut report = CganReport {
        l1_curve: Vec::new(),
        disc_curve: Vec::new(),
        held_out_l1: f64::NAN,
        train_images: train.len(),
        held_out_images: held.len(),
        l1_gate: cfg.l1_gate,
    };
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut l1_sum, mut d_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&LabeledImage> = chunk.iter().map(|&i| train[i]).collect();
            let labels: Vec<&LabelMap> = items.iter().map(|im| &im.labels).collect();
            let cond = generator.encode(&labels)?;
            let target = rgb_batch::<f32>(&items);
            let (fake, cache) = generator.net.forward_train(cond.clone());
            let n = fake.data.len() as f32;
            let mut l1 = 0.0f64;
            let mut d_fake = fake.map(|_| 0.0);
            let w_l1 = if cfg.adversarial { cfg.lambda_l1 as f32 } else { 1.0 };
            for i in 0..fake.data.len() {
                let diff = fake.data[i] - target.data[i];
                l1 += diff.abs() as f64;
                d_fake.data[i] = w_l1 * diff.signum() / n;
            }
            l1 /= n as f64;
            if cfg.adversarial {
                // discriminator step on real and detached fake
                let real_in = Tensor::concat_channels(&[&cond, &target]);
                let fake_in = Tensor::concat_channels(&[&cond, &fake]);
                let (pr, cr) = disc.forward_train(real_in);
                let (pf, cf) = disc.forward_train(fake_in.clone());
                let m = pr.data.len() as f32;
                let eps = GAN_EPS as f32;
                let mut d_loss = 0.0f64;
                let gr = pr.map(|p| -1.0 / p.clamp(eps, 1.0 - eps) / m);
                let gf = pf.map(|p| 1.0 / (1.0 - p).clamp(eps, 1.0) / m);
                for (&a, &b) in pr.data.iter().zip(&pf.data) {
                    d_loss -= (a.clamp(eps, 1.0) as f64).ln() + ((1.0 - b).clamp(eps, 1.0) as f64).ln();
                }
                d_sum += d_loss / m as f64;
                disc.backward(cr, gr, false);
                disc.backward(cf, gf, false);
                d_opt.step(disc.params_mut());
                // generator adversarial gradient through the updated discriminator
                let (pg, cg) = disc.forward_train(fake_in);
                let gg = pg.map(|p| -1.0 / p.clamp(eps, 1.0) / m);
                let dx = disc.backward(cg, gg, true).unwrap();
                disc.params_mut().into_iter().for_each(|p| p.zero_grad());
                let [_, d_rgb]: [Tensor<f32>; 2] = dx
                    .split_channels(&[classes.num_in_dist(), 3])
                    .try_into()
                    .unwrap();
                d_fake.data.iter_mut().zip(&d_rgb.data).for_each(|(a, &b)| *a += b);
            }
            if !l1.is_finite() {
                return Err(Error::Training(format!("generator loss is not finite at epoch {epoch}")));
            }
            generator.net.backward(cache, d_fake, false);
            g_opt.step(generator.net.params_mut());
            l1_sum += l1;
            batches += 1;
        }
        report.l1_curve.push(l1_sum / batches as f64);
        if cfg.adversarial {
            let d = d_sum / batches as f64;
            if !d.is_finite() {
                return Err(Error::Training(format!("discriminator loss is not finite at epoch {epoch}")));
            }
            report.disc_curve.push(d);
        }
    }
    report.held_out_l1 = mean_l1(&generator, &held)?;
    if !report.held_out_l1.is_finite() {
        return Err(Error::Training("generator held-out L1 is not finite".into()));
    }
    if !cfg.adversarial {
        // a quick realism fit so discriminator-based heads have something to use
        fit_discriminator(&mut disc, &generator, &train, cfg)?;
    }
    Ok((generator, disc, report))
}

/// Train only the discriminator against a fixed generator: real renders → 1,
/// generator outputs and renders paired with shuffled labels → 0.
fn fit_discriminator(
    disc: &mut DiscriminatorModel<f32>,
    generator: &GeneratorModel<f32>,
    train: &[&LabeledImage],
    cfg: &CganConfig,
) -> Result<()> {
    let mut opt = Adam::new(cfg.lr * 0.5);
    let eps = GAN_EPS as f32;
    let epochs = (cfg.epochs / 2).max(1);
    for epoch in 0..epochs {
        let order = epoch_order(train.len(), cfg.seed ^ 0xd15c, epoch);
        for chunk in order.chunks(cfg.batch_size.max(2)) {
            let items: Vec<&LabeledImage> = chunk.iter().map(|&i| train[i]).collect();
            let labels: Vec<&LabelMap> = items.iter().map(|im| &im.labels).collect();
            let cond = generator.encode(&labels)?;
            let target = rgb_batch::<f32>(&items);
            // mismatched pairs: rotate the rgb batch by one
            let mut shifted = target.clone();
            let k = target.sample_len();
            for i in 0..target.n {
                let j = (i + 1) % target.n;
                shifted.data[i * k..(i + 1) * k].copy_from_slice(target.sample(j));
            }
            for (rgb, label) in [(&target, 1.0f32), (&shifted, 0.0)] {
                if label == 0.0 && target.n < 2 {
                    continue;
                }
                let (p, cache) = disc.forward_train(Tensor::concat_channels(&[&cond, rgb]));
                let m = p.data.len() as f32;
                let g = p.map(|v| {
                    if label == 1.0 {
                        -1.0 / v.clamp(eps, 1.0) / m
                    } else {
                        1.0 / (1.0 - v).clamp(eps, 1.0) / m
                    }
                });
                if p.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Training("discriminator output is not finite".into()));
                }
                disc.backward(cache, g, false);
            }
            opt.step(disc.params_mut());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{generate_dataset, DatasetSpec, SceneSpec};

    #[test]
    fn generator_rejects_ood_ids() {
        let c = ClassSet::default();
        let g = GeneratorModel::<f32>::new(&c, [4, 4, 4, 4], 0);
        let mut labels = LabelMap::filled(64, 64, 1);
        labels.set(3, 3, c.ood_ids[0]);
        let err = g.generate(&labels).unwrap_err();
        assert!(err.to_string().contains("no input channel"), "{err}");
    }

    #[test]
    fn generator_shape_and_range() {
        let c = ClassSet::default();
        let g = GeneratorModel::<f32>::new(&c, [4, 4, 8, 8], 3);
        let labels = LabelMap::from_vec(64, 64, (0..64 * 64).map(|i| (i / 500 % 8) as u8).collect()).unwrap();
        let x = g.encode(&[&labels]).unwrap();
        let y = g.net.forward(&x);
        assert_eq!(y.shape(), [1, 3, 64, 64]);
        assert!(y.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn discriminator_grid_shape_and_range() {
        let d = DiscriminatorModel::<f32>::new(8, 4, 0);
        let y = d.forward(&Tensor::zeros(2, 11, 32, 64));
        assert_eq!(y.shape(), [2, 1, 4, 8]);
        assert!(y.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn checkpoints_round_trip() {
        let c = ClassSet::default();
        let g = GeneratorModel::<f32>::new(&c, [4, 4, 8, 8], 5);
        assert_eq!(GeneratorModel::from_checkpoint(&g.to_checkpoint(), &c).unwrap(), g);
        let d = DiscriminatorModel::<f32>::new(8, 4, 5);
        assert_eq!(DiscriminatorModel::from_checkpoint(&d.to_checkpoint()).unwrap(), d);
    }

    #[test]
    fn short_l1_training_reduces_loss() {
        let c = ClassSet::default();
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, 32),
            count: 6,
            seed: 4,
            ood_rate: 0.0,
            ..DatasetSpec::default()
        };
        let data = generate_dataset(&spec, &c).unwrap();
        let cfg = CganConfig {
            widths: [4, 8, 8, 8],
            epochs: 4,
            batch_size: 2,
            ..CganConfig::default()
        };
        let (g, _, report) = train_toy_cgan(&data[..4], &data[4..], &c, &cfg).unwrap();
        assert!(report.l1_curve.last().unwrap() < &report.l1_curve[0]);
        assert!(report.held_out_l1.is_finite());
        let (g2, _, _) = train_toy_cgan(&data[..4], &data[4..], &c, &cfg).unwrap();
        assert_eq!(g, g2, "training must be deterministic");
    }
}
