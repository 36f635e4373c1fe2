use crate::nn::{Activations, Conv2d, Layer, Param, Real, Sequential, Tensor};
use crate::rng::Rng;

/// Small encoder-decoder with three pooling stages and concatenated skips.
/// Input height and width must be multiples of 8.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: [usize; 4],
    e1: Sequential<T>,
    e2: Sequential<T>,
    e3: Sequential<T>,
    bottom: Sequential<T>,
    d3: Sequential<T>,
    d2: Sequential<T>,
    d1: Sequential<T>,
}

pub struct UNetCache<T> {
    e1: Activations<T>,
    e2: Activations<T>,
    e3: Activations<T>,
    bottom: Activations<T>,
    d3: Activations<T>,
    d2: Activations<T>,
    d1: Activations<T>,
}

fn conv<T: Real>(name: String, cin: usize, cout: usize) -> Layer<T> {
    Layer::Conv(Conv2d::new(&name, cin, cout, 3, 1, 1))
}

fn add_into<T: Real>(acc: &mut Tensor<T>, other: &Tensor<T>) {
    acc.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
}

impl<T: Real> UNet<T> {
    /// `output` layers are appended after the final 1×1 convolution
    /// (e.g. a sigmoid).
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, widths: [usize; 4], output: Vec<Layer<T>>) -> Self {
        let [w0, w1, w2, w3] = widths;
        let n = |s: &str| format!("{prefix}.{s}");
        let mut d1 = vec![
            conv(n("d1.conv"), w1 + w0, w0),
            Layer::Relu,
            Layer::Conv(Conv2d::new(&n("out"), w0, out_channels, 1, 1, 0)),
        ];
        d1.extend(output);
        UNet {
            in_channels,
            out_channels,
            widths,
            e1: Sequential::new(vec![conv(n("e1.conv"), in_channels, w0), Layer::Relu]),
            e2: Sequential::new(vec![Layer::MaxPool2, conv(n("e2.conv"), w0, w1), Layer::Relu]),
            e3: Sequential::new(vec![Layer::MaxPool2, conv(n("e3.conv"), w1, w2), Layer::Relu]),
            bottom: Sequential::new(vec![
                Layer::MaxPool2,
                conv(n("bottom.conv"), w2, w3),
                Layer::Relu,
                Layer::Nearest(2),
            ]),
            d3: Sequential::new(vec![conv(n("d3.conv"), w3 + w2, w2), Layer::Relu, Layer::Nearest(2)]),
            d2: Sequential::new(vec![conv(n("d2.conv"), w2 + w1, w1), Layer::Relu, Layer::Nearest(2)]),
            d1: Sequential::new(d1),
        }
    }

    fn stages(&self) -> [&Sequential<T>; 7] {
        [&self.e1, &self.e2, &self.e3, &self.bottom, &self.d3, &self.d2, &self.d1]
    }

    fn stages_mut(&mut self) -> [&mut Sequential<T>; 7] {
        [
            &mut self.e1,
            &mut self.e2,
            &mut self.e3,
            &mut self.bottom,
            &mut self.d3,
            &mut self.d2,
            &mut self.d1,
        ]
    }

    pub fn init(&mut self, rng: &mut Rng) {
        self.stages_mut().into_iter().for_each(|s| s.init(rng));
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.stages().into_iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.stages_mut().into_iter().flat_map(|s| s.params_mut()).collect()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_train(x.clone()).0
    }

    pub fn forward_train(&self, x: Tensor<T>) -> (Tensor<T>, UNetCache<T>) {
        assert!(x.h % 8 == 0 && x.w % 8 == 0, "unet input {}x{} not a multiple of 8", x.h, x.w);
        assert_eq!(x.c, self.in_channels, "unet input channels");
        let e1 = self.e1.forward_cached(x);
        let e2 = self.e2.forward_cached(e1.last().unwrap().clone());
        let e3 = self.e3.forward_cached(e2.last().unwrap().clone());
        let bottom = self.bottom.forward_cached(e3.last().unwrap().clone());
        let d3 = self
            .d3
            .forward_cached(Tensor::concat_channels(&[bottom.last().unwrap(), e3.last().unwrap()]));
        let d2 = self
            .d2
            .forward_cached(Tensor::concat_channels(&[d3.last().unwrap(), e2.last().unwrap()]));
        let d1 = self
            .d1
            .forward_cached(Tensor::concat_channels(&[d2.last().unwrap(), e1.last().unwrap()]));
        let out = d1.last().unwrap().clone();
        (
            out,
            UNetCache {
                e1,
                e2,
                e3,
                bottom,
                d3,
                d2,
                d1,
            },
        )
    }

    /// Accumulate parameter gradients for `dy`; the input gradient is
    /// returned only when `need_dx`.
    pub fn backward(&mut self, cache: UNetCache<T>, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let [w0, w1, w2, w3] = self.widths;
        let g = self.d1.backward(&cache.d1, dy, true).unwrap();
        let [g_d2, mut g_e1]: [Tensor<T>; 2] = g.split_channels(&[w1, w0]).try_into().unwrap();
        let g = self.d2.backward(&cache.d2, g_d2, true).unwrap();
        let [g_d3, mut g_e2]: [Tensor<T>; 2] = g.split_channels(&[w2, w1]).try_into().unwrap();
        let g = self.d3.backward(&cache.d3, g_d3, true).unwrap();
        let [g_b, mut g_e3]: [Tensor<T>; 2] = g.split_channels(&[w3, w2]).try_into().unwrap();
        let g = self.bottom.backward(&cache.bottom, g_b, true).unwrap();
        add_into(&mut g_e3, &g);
        let g = self.e3.backward(&cache.e3, g_e3, true).unwrap();
        add_into(&mut g_e2, &g);
        let g = self.e2.backward(&cache.e2, g_e2, true).unwrap();
        add_into(&mut g_e1, &g);
        self.e1.backward(&cache.e1, g_e1, need_dx)
    }
}
