use std::fmt;
use std::str::FromStr;

use super::{one_hot_into, receptive_field, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::nn::{Activations, Checkpoint, Conv2d, ConvTranspose2d, Layer, Linear, Param, Real, Sequential, Tensor};
use crate::patches::Patch;
use crate::rng::{rng_for, stream};
use crate::toyworld::ClassSet;

/// Width of the two hidden fully-connected layers of the scalar heads.
pub const FC_HIDDEN: [usize; 2] = [1024, 256];

/// Decision network on top of the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// 1×1 convolution, sigmoid, bilinear resize to patch size.
    Resize,
    /// Two stride-2 transposed convolutions back to patch size.
    Deconv,
    /// Fully-connected stack to a single score.
    FullyConnected,
    /// Frozen first three discriminator layers plus a fully-connected stack.
    TransferLearning,
    /// The pretrained discriminator itself, no training.
    Discriminator,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::Resize,
        HeadKind::Deconv,
        HeadKind::FullyConnected,
        HeadKind::TransferLearning,
        HeadKind::Discriminator,
    ];

    /// Whether the head emits one score per pixel (vs one per patch).
    pub fn is_per_pixel(self) -> bool {
        matches!(self, HeadKind::Resize | HeadKind::Deconv)
    }

    pub fn needs_discriminator(self) -> bool {
        matches!(self, HeadKind::TransferLearning | HeadKind::Discriminator)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Resize => "resize",
            HeadKind::Deconv => "deconv",
            HeadKind::FullyConnected => "fc",
            HeadKind::TransferLearning => "transfer",
            HeadKind::Discriminator => "discriminator",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "resize" => HeadKind::Resize,
            "deconv" | "deconvolution" => HeadKind::Deconv,
            "fc" | "fully-connected" | "fullyconnected" => HeadKind::FullyConnected,
            "transfer" | "transfer-learning" => HeadKind::TransferLearning,
            "discriminator" | "disc" => HeadKind::Discriminator,
            other => return Err(Error::invalid(format!("unknown head {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub head: HeadKind,
    pub patch_size: usize,
    pub base_filters: usize,
    /// Number of 3×3 convolutions in the extractor, 4..=7. Stacks are
    /// (2, 2, 3) truncated; both pooling stages are always present.
    pub conv_layers: usize,
    /// Weight of the positive-pair term the model was trained with.
    pub lambda_d: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            head: HeadKind::FullyConnected,
            patch_size: 64,
            base_filters: 16,
            conv_layers: 7,
            lambda_d: 1.0,
        }
    }
}

impl DetectorConfig {
    /// Channel widths of the extractor convolutions.
    pub fn widths(&self) -> Vec<usize> {
        let b = self.base_filters;
        [b, b, 2 * b, 2 * b, 4 * b, 4 * b, 4 * b][..self.conv_layers].to_vec()
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths().last().unwrap()
    }

    /// `(kernel, stride)` list of the extractor, pools included.
    pub fn extractor_windows(&self) -> Vec<(usize, usize)> {
        let mut w = Vec::new();
        for i in 0..self.conv_layers {
            w.push((3, 1));
            if i == 1 || i == 3 {
                w.push((2, 2));
            }
        }
        w
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.extractor_windows()).0
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p < 8 || p % 4 != 0 {
            return Err(Error::invalid(format!("patch size {p} must be a multiple of 4 and at least 8")));
        }
        if !(4..=7).contains(&self.conv_layers) {
            return Err(Error::invalid(format!("conv_layers {} outside 4..=7", self.conv_layers)));
        }
        if self.base_filters == 0 {
            return Err(Error::invalid("base_filters must be positive"));
        }
        if !(self.lambda_d > 0.0) {
            return Err(Error::invalid(format!("lambda_d {} must be positive", self.lambda_d)));
        }
        if self.head.needs_discriminator() {
            if p % 8 != 0 {
                return Err(Error::invalid(format!(
                    "patch size {p} must be a multiple of 8 for discriminator-based heads"
                )));
            }
        } else if self.receptive_field() > p {
            return Err(Error::invalid(format!(
                "extractor receptive field {} exceeds patch size {p}; use fewer conv layers",
                self.receptive_field()
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "head = {}\npatch_size = {}\nbase_filters = {}\nconv_layers = {}\nlambda_d = {}\n",
            self.head, self.patch_size, self.base_filters, self.conv_layers, self.lambda_d
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.config_value(k)
                .ok_or_else(|| Error::invalid(format!("checkpoint config lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid(format!("checkpoint config {k} is not an integer")))
        };
        Ok(DetectorConfig {
            head: get("head")?.parse()?,
            patch_size: num("patch_size")?,
            base_filters: num("base_filters")?,
            conv_layers: num("conv_layers")?,
            lambda_d: get("lambda_d")?
                .parse()
                .map_err(|_| Error::invalid("checkpoint lambda_d is not a number"))?,
        })
    }
}

/// A batch of (real, synthetic) patch pairs in network layout.
#[derive(Debug, Clone)]
pub struct PairBatch<T> {
    pub real: Tensor<T>,
    pub synthetic: Tensor<T>,
    /// One-hot labels of the synthetic patches; only built for
    /// discriminator-based heads.
    pub condition: Option<Tensor<T>>,
}

impl<T: Real> PairBatch<T> {
    pub fn from_patches(pairs: &[(&Patch, &Patch)], classes: Option<&ClassSet>) -> Result<Self> {
        let p = pairs
            .first()
            .map(|(r, _)| r.size)
            .ok_or_else(|| Error::invalid("empty pair batch"))?;
        let n = pairs.len();
        let mut real = Tensor::zeros(n, 3, p, p);
        let mut synthetic = Tensor::zeros(n, 3, p, p);
        let mut condition = classes.map(|c| Tensor::zeros(n, c.num_in_dist(), p, p));
        for (i, (r, s)) in pairs.iter().enumerate() {
            if r.size != p || s.size != p {
                return Err(Error::invalid("patch sizes differ within a batch"));
            }
            write_chw(r, real.sample_mut(i));
            write_chw(s, synthetic.sample_mut(i));
            if let (Some(cond), Some(classes)) = (condition.as_mut(), classes) {
                one_hot_into(&s.labels, classes, cond.sample_mut(i))?;
            }
        }
        Ok(PairBatch {
            real,
            synthetic,
            condition,
        })
    }

    pub fn len(&self) -> usize {
        self.real.n
    }

    pub fn is_empty(&self) -> bool {
        self.real.n == 0
    }
}

fn write_chw<T: Real>(p: &Patch, dst: &mut [T]) {
    let plane = p.size * p.size;
    for i in 0..plane {
        for ch in 0..3 {
            dst[ch * plane + i] = T::lit(p.rgb[i * 3 + ch] as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Head<T> {
    Conv(Sequential<T>),
    Transfer { trunk: Sequential<T>, fc: Sequential<T> },
    Discriminator(DiscriminatorModel<T>),
}

/// Activations kept between [`DetectorModel::forward_train`] and
/// [`DetectorModel::backward`].
pub struct DetectorCache<T> {
    extractor: Option<Activations<T>>,
    head: Option<Activations<T>>,
}

/// Dissimilarity detector: maps (real, synthetic) patch pairs to scores in
/// [0,1], per pixel or per patch depending on the head.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel<T> {
    pub config: DetectorConfig,
    pub version: String,
    extractor: Sequential<T>,
    head: Head<T>,
}

fn fc_stack<T: Real>(prefix: &str, inputs: usize) -> Vec<Layer<T>> {
    vec![
        Layer::Flatten,
        Layer::Linear(Linear::new(&format!("{prefix}.fc0"), inputs, FC_HIDDEN[0])),
        Layer::Relu,
        Layer::Linear(Linear::new(&format!("{prefix}.fc1"), FC_HIDDEN[0], FC_HIDDEN[1])),
        Layer::Relu,
        Layer::Linear(Linear::new(&format!("{prefix}.fc2"), FC_HIDDEN[1], 1)),
        Layer::Sigmoid,
    ]
}

impl<T: Real> DetectorModel<T> {
    /// Build and initialize a detector. Discriminator-based heads copy the
    /// given discriminator.
    pub fn new(config: DetectorConfig, seed: u64, discriminator: Option<&DiscriminatorModel<T>>) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, stream::INIT, 0);
        let p = config.patch_size;
        let b = config.base_filters;
        let mut extractor = Sequential::new(Vec::new());
        if !config.head.needs_discriminator() {
            let mut cin = 6;
            for (i, &w) in config.widths().iter().enumerate() {
                extractor
                    .layers
                    .push(Layer::Conv(Conv2d::new(&format!("extractor.conv{i}"), cin, w, 3, 1, 1)));
                extractor.layers.push(Layer::Relu);
                if i == 1 || i == 3 {
                    extractor.layers.push(Layer::MaxPool2);
                }
                cin = w;
            }
            extractor.init(&mut rng);
        }
        let f = config.feature_channels();
        let q = p / 4;
        let head = match config.head {
            HeadKind::Resize => Head::Conv(Sequential::new(vec![
                Layer::Conv(Conv2d::new("head.conv", f, 1, 1, 1, 0)),
                Layer::Sigmoid,
                Layer::Bilinear(4),
            ])),
            HeadKind::Deconv => Head::Conv(Sequential::new(vec![
                Layer::ConvT(ConvTranspose2d::new("head.deconv0", f, 2 * b, 4, 2, 1)),
                Layer::Relu,
                Layer::ConvT(ConvTranspose2d::new("head.deconv1", 2 * b, 1, 4, 2, 1)),
                Layer::Sigmoid,
            ])),
            HeadKind::FullyConnected => Head::Conv(Sequential::new(fc_stack("head", f * q * q))),
            HeadKind::TransferLearning => {
                let disc = discriminator.ok_or_else(|| {
                    Error::MissingCheckpoint("transfer head needs a trained discriminator".into())
                })?;
                let mut trunk = disc.trunk.clone();
                for p in trunk.params_mut() {
                    p.name = p.name.replacen("disc.", "trunk.", 1);
                }
                trunk.freeze();
                let (c, h, w) = trunk.output_shape((disc.classes + 3, p, p));
                Head::Transfer {
                    trunk,
                    fc: Sequential::new(fc_stack("head", 2 * c * h * w)),
                }
            }
            HeadKind::Discriminator => Head::Discriminator(
                discriminator
                    .ok_or_else(|| {
                        Error::MissingCheckpoint("discriminator head needs a trained discriminator".into())
                    })?
                    .clone(),
            ),
        };
        let mut model = DetectorModel {
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            extractor,
            head,
        };
        match &mut model.head {
            Head::Conv(s) => s.init(&mut rng),
            Head::Transfer { fc, .. } => fc.init(&mut rng),
            Head::Discriminator(_) => {}
        }
        Ok(model)
    }

    pub fn head_kind(&self) -> HeadKind {
        self.config.head
    }

    /// Shape `(h, w)` of each patch's output.
    pub fn output_size(&self) -> (usize, usize) {
        if self.config.head.is_per_pixel() {
            (self.config.patch_size, self.config.patch_size)
        } else {
            (1, 1)
        }
    }

    pub fn extractor(&self) -> &Sequential<T> {
        &self.extractor
    }

    /// Features of the convolutional extractor for a batch.
    pub fn features(&self, batch: &PairBatch<T>) -> Tensor<T> {
        self.extractor
            .forward(&Tensor::concat_channels(&[&batch.real, &batch.synthetic]))
    }

    fn check_batch(&self, batch: &PairBatch<T>) -> Result<()> {
        let p = self.config.patch_size;
        for t in [&batch.real, &batch.synthetic] {
            if t.c != 3 || t.h != p || t.w != p {
                return Err(Error::invalid(format!(
                    "detector expects {p}x{p} rgb patches, got {}x{}x{}",
                    t.c, t.h, t.w
                )));
            }
        }
        if self.config.head.needs_discriminator() && batch.condition.is_none() {
            return Err(Error::invalid("discriminator-based heads need label conditioning"));
        }
        Ok(())
    }

    /// Scores for a batch: `N×1×P×P` for per-pixel heads, `N×1×1×1` otherwise.
    pub fn forward(&self, batch: &PairBatch<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        Ok(match &self.head {
            Head::Conv(head) => head.forward(&self.features(batch)),
            Head::Transfer { trunk, fc } => {
                let cond = batch.condition.as_ref().unwrap();
                let fr = trunk.forward(&Tensor::concat_channels(&[cond, &batch.real]));
                let fs = trunk.forward(&Tensor::concat_channels(&[cond, &batch.synthetic]));
                fc.forward(&Tensor::concat_channels(&[&fr, &fs]))
            }
            Head::Discriminator(d) => discriminator_score(d, batch),
        })
    }

    pub fn forward_train(&self, batch: &PairBatch<T>) -> Result<(Tensor<T>, DetectorCache<T>)> {
        self.check_batch(batch)?;
        Ok(match &self.head {
            Head::Conv(head) => {
                let ext = self
                    .extractor
                    .forward_cached(Tensor::concat_channels(&[&batch.real, &batch.synthetic]));
                let acts = head.forward_cached(ext.last().unwrap().clone());
                let out = acts.last().unwrap().clone();
                (
                    out,
                    DetectorCache {
                        extractor: Some(ext),
                        head: Some(acts),
                    },
                )
            }
            Head::Transfer { trunk, fc } => {
                let cond = batch.condition.as_ref().unwrap();
                let fr = trunk.forward(&Tensor::concat_channels(&[cond, &batch.real]));
                let fs = trunk.forward(&Tensor::concat_channels(&[cond, &batch.synthetic]));
                let acts = fc.forward_cached(Tensor::concat_channels(&[&fr, &fs]));
                let out = acts.last().unwrap().clone();
                (
                    out,
                    DetectorCache {
                        extractor: None,
                        head: Some(acts),
                    },
                )
            }
            Head::Discriminator(d) => (
                discriminator_score(d, batch),
                DetectorCache {
                    extractor: None,
                    head: None,
                },
            ),
        })
    }

    /// Accumulate parameter gradients for `d_out` (same shape as the output).
    pub fn backward(&mut self, cache: DetectorCache<T>, d_out: Tensor<T>) {
        match &mut self.head {
            Head::Conv(head) => {
                let head_acts = cache.head.expect("cache from forward_train");
                let d_feat = head.backward(&head_acts, d_out, true).unwrap();
                let ext_acts = cache.extractor.expect("cache from forward_train");
                self.extractor.backward(&ext_acts, d_feat, false);
            }
            Head::Transfer { fc, .. } => {
                let acts = cache.head.expect("cache from forward_train");
                // the frozen trunk needs no gradient at all
                fc.backward(&acts, d_out, false);
            }
            Head::Discriminator(_) => {}
        }
    }

    /// Piecewise-linear regime of every rectifier and pool for a batch; see
    /// [`Sequential::regime`].
    pub fn regime(&self, batch: &PairBatch<T>) -> Result<Vec<u8>> {
        let (_, cache) = self.forward_train(batch)?;
        let mut v = Vec::new();
        if let Some(a) = &cache.extractor {
            v.extend(self.extractor.regime(a));
        }
        if let Some(a) = &cache.head {
            match &self.head {
                Head::Conv(h) => v.extend(h.regime(a)),
                Head::Transfer { fc, .. } => v.extend(fc.regime(a)),
                Head::Discriminator(_) => {}
            }
        }
        Ok(v)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.extractor.params();
        match &self.head {
            Head::Conv(h) => v.extend(h.params()),
            Head::Transfer { trunk, fc } => {
                v.extend(trunk.params());
                v.extend(fc.params());
            }
            Head::Discriminator(d) => v.extend(d.params()),
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.extractor.params_mut();
        match &mut self.head {
            Head::Conv(h) => v.extend(h.params_mut()),
            Head::Transfer { trunk, fc } => {
                v.extend(trunk.params_mut());
                v.extend(fc.params_mut());
            }
            Head::Discriminator(d) => v.extend(d.params_mut()),
        }
        v
    }

    /// Parameters of the decision network only.
    pub fn head_param_count(&self) -> usize {
        match &self.head {
            Head::Conv(h) => h.param_count(),
            Head::Transfer { fc, .. } => fc.param_count(),
            Head::Discriminator(_) => 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Config echo written into checkpoints. Discriminator-based heads also
    /// record the discriminator geometry.
    pub fn config_echo(&self) -> String {
        let mut s = self.config.to_kv();
        s.push_str(&format!("version = {}\n", self.version));
        let disc = match &self.head {
            Head::Transfer { trunk, .. } => match &trunk.layers[0] {
                Layer::Conv(c) => Some((c.cin - 3, c.cout)),
                _ => None,
            },
            Head::Discriminator(d) => Some((d.classes, d.base)),
            Head::Conv(_) => None,
        };
        if let Some((classes, base)) = disc {
            s.push_str(&format!("disc_classes = {classes}\ndisc_base = {base}\n"));
        }
        s
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params("detector", &self.config_echo(), &self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "detector" {
            return Err(Error::invalid(format!("expected a detector checkpoint, got {}", ck.kind)));
        }
        let config = DetectorConfig::from_checkpoint(ck)?;
        let disc = if config.head.needs_discriminator() {
            let num = |k: &str| -> Result<usize> {
                ck.config_value(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("checkpoint config lacks {k}")))
            };
            Some(DiscriminatorModel::new(num("disc_classes")?, num("disc_base")?, 0))
        } else {
            None
        };
        let mut model = DetectorModel::new(config, 0, disc.as_ref())?;
        ck.load_into(model.params_mut())?;
        if let Some(v) = ck.config_value("version") {
            model.version = v.to_string();
        }
        Ok(model)
    }
}

/// `1 − mean(D(condition, real))` per patch: high when the discriminator does
/// not accept the real patch as a rendering of the predicted labels.
fn discriminator_score<T: Real>(d: &DiscriminatorModel<T>, batch: &PairBatch<T>) -> Tensor<T> {
    let cond = batch.condition.as_ref().unwrap();
    let grid = d.forward(&Tensor::concat_channels(&[cond, &batch.real]));
    let mut out = Tensor::zeros(grid.n, 1, 1, 1);
    let len = T::lit(grid.sample_len() as f64);
    for i in 0..grid.n {
        let mean = grid.sample(i).iter().copied().sum::<T>() / len;
        out.data[i] = T::one() - mean;
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::Rng as _;

    use super::*;
    use crate::grid::Grid;
    use crate::patches::{Origin, Source};

    fn cfg(head: HeadKind, p: usize) -> DetectorConfig {
        DetectorConfig {
            head,
            patch_size: p,
            base_filters: 4,
            conv_layers: if p >= 40 { 7 } else { 6.min(p / 8 + 2) },
            lambda_d: 1.0,
        }
    }

    fn random_patch(p: usize, seed: u64) -> Patch {
        let mut rng = rng_for(seed, 99, 0);
        Patch {
            size: p,
            rgb: (0..p * p * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
            labels: Grid::filled(p, p, (seed % 8) as u8),
            origin: Origin {
                image: Arc::from("t"),
                row: 0,
                col: 0,
            },
            source: Source::Real,
        }
    }

    fn batch<T: Real>(p: usize, n: usize, seed: u64, classes: Option<&ClassSet>) -> PairBatch<T> {
        let pats: Vec<(Patch, Patch)> = (0..n)
            .map(|i| (random_patch(p, seed + 2 * i as u64), random_patch(p, seed + 2 * i as u64 + 1)))
            .collect();
        let refs: Vec<(&Patch, &Patch)> = pats.iter().map(|(a, b)| (a, b)).collect();
        PairBatch::from_patches(&refs, classes).unwrap()
    }

    #[test]
    fn output_shapes_per_head() {
        for p in [32, 64, 128] {
            for head in [HeadKind::Resize, HeadKind::Deconv, HeadKind::FullyConnected] {
                let c = DetectorConfig {
                    conv_layers: if p >= 40 { 7 } else { 6 },
                    ..cfg(head, p)
                };
                let m = DetectorModel::<f32>::new(c, 1, None).unwrap();
                let out = m.forward(&batch(p, 2, 3, None)).unwrap();
                let (h, w) = m.output_size();
                assert_eq!((out.n, out.c, out.h, out.w), (2, 1, h, w), "{head} P={p}");
                if head == HeadKind::FullyConnected {
                    assert_eq!((h, w), (1, 1));
                } else {
                    assert_eq!((h, w), (p, p));
                }
            }
        }
    }

    #[test]
    fn feature_map_shape() {
        let c = DetectorConfig {
            base_filters: 4,
            ..DetectorConfig::default()
        };
        let m = DetectorModel::<f32>::new(c, 0, None).unwrap();
        let f = m.features(&batch(64, 1, 0, None));
        assert_eq!((f.c, f.h, f.w), (16, 16, 16));
        assert_eq!(DetectorConfig::default().receptive_field(), 40);
    }

    #[test]
    fn receptive_field_gate() {
        let c = DetectorConfig {
            patch_size: 32,
            ..DetectorConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(DetectorConfig { conv_layers: 6, ..c.clone() }.validate().is_ok());
        assert!(DetectorConfig { patch_size: 30, ..c }.validate().is_err());
    }

    #[test]
    fn pair_order_matters() {
        let m = DetectorModel::<f32>::new(cfg(HeadKind::FullyConnected, 64), 5, None).unwrap();
        for s in 0..5 {
            let b = batch::<f32>(64, 1, 10 * s, None);
            let swapped = PairBatch {
                real: b.synthetic.clone(),
                synthetic: b.real.clone(),
                condition: None,
            };
            let f1 = m.features(&b);
            let f2 = m.features(&swapped);
            let diff = f1
                .data
                .iter()
                .zip(&f2.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(diff > 0.0);
        }
    }

    #[test]
    fn resize_constant_features_constant_map() {
        let m = DetectorModel::<f64>::new(cfg(HeadKind::Resize, 32), 2, None).unwrap();
        if let Head::Conv(head) = &m.head {
            let feats = Tensor::from_vec(1, 16, 8, 8, vec![0.3; 16 * 64]);
            let out = head.forward(&feats);
            assert!(out.data.iter().all(|&v| (v - out.data[0]).abs() < 1e-12));
            assert_eq!((out.h, out.w), (32, 32));
        } else {
            unreachable!()
        }
    }

    #[test]
    fn outputs_in_unit_interval_under_fuzzing() {
        for head in [HeadKind::Resize, HeadKind::Deconv, HeadKind::FullyConnected] {
            let m = DetectorModel::<f32>::new(cfg(head, 32), 7, None).unwrap();
            for k in 0..10 {
                // 100 random pairs per head across batches
                let out = m.forward(&batch(32, 10, 1000 * k, None)).unwrap();
                assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)), "{head}");
            }
        }
    }

    #[test]
    fn deconv_has_more_head_parameters_than_resize() {
        let r = DetectorModel::<f32>::new(cfg(HeadKind::Resize, 64), 0, None).unwrap();
        let d = DetectorModel::<f32>::new(cfg(HeadKind::Deconv, 64), 0, None).unwrap();
        assert!(d.head_param_count() > r.head_param_count());
    }

    #[test]
    fn zero_fc_gives_one_half() {
        let mut m = DetectorModel::<f32>::new(cfg(HeadKind::FullyConnected, 32), 0, None).unwrap();
        for p in m.params_mut() {
            if p.name.starts_with("head.") {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let out = m.forward(&batch(32, 3, 0, None)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn fc_outputs_distinct_under_random_init() {
        let m = DetectorModel::<f64>::new(cfg(HeadKind::FullyConnected, 32), 3, None).unwrap();
        let out = m.forward(&batch(32, 100, 0, None)).unwrap();
        let mut v = out.data.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in v.windows(2) {
            assert!(w[1] - w[0] > 1e-12, "collision {w:?}");
        }
    }

    #[test]
    fn discriminator_heads_need_a_discriminator() {
        for head in [HeadKind::TransferLearning, HeadKind::Discriminator] {
            match DetectorModel::<f32>::new(cfg(head, 32), 0, None) {
                Err(Error::MissingCheckpoint(_)) => {}
                other => panic!("{head}: {other:?}"),
            }
        }
    }

    #[test]
    fn discriminator_head_is_one_minus_mean() {
        let classes = ClassSet::default();
        let mut d = DiscriminatorModel::<f64>::new(8, 4, 0);
        // force the final logit to a constant via the bias
        for p in d.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let set_bias = |d: &mut DiscriminatorModel<f64>, b: f64| {
            let last = d.params_mut().into_iter().last().unwrap();
            last.value[0] = b;
        };
        set_bias(&mut d, 50.0);
        let m = DetectorModel::new(cfg(HeadKind::Discriminator, 32), 0, Some(&d)).unwrap();
        let out = m.forward(&batch(32, 2, 0, Some(&classes))).unwrap();
        assert!(out.data.iter().all(|&v| v.abs() < 1e-12));
        set_bias(&mut d, -50.0);
        let m = DetectorModel::new(cfg(HeadKind::Discriminator, 32), 0, Some(&d)).unwrap();
        let out = m.forward(&batch(32, 2, 0, Some(&classes))).unwrap();
        assert!(out.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DetectorModel::<f32>::new(cfg(HeadKind::Deconv, 32), 4, None).unwrap();
        let ck = m.to_checkpoint();
        let back = DetectorModel::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back, m);

        let classes = ClassSet::default();
        let d = DiscriminatorModel::<f32>::new(8, 4, 1);
        let t = DetectorModel::new(cfg(HeadKind::TransferLearning, 32), 4, Some(&d)).unwrap();
        let back = DetectorModel::<f32>::from_checkpoint(&t.to_checkpoint()).unwrap();
        let b = batch(32, 2, 0, Some(&classes));
        assert_eq!(back.forward(&b).unwrap(), t.forward(&b).unwrap());
    }
}
