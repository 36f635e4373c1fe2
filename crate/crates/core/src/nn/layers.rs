use rand::Rng as _;

use super::{gemm, Real, Tensor};
use crate::rng::Rng;

/// A named trainable array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Frozen parameters never accumulate gradients and are skipped by the
    /// optimizer.
    pub frozen: bool,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape,
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    fn init_uniform(&mut self, rng: &mut Rng, bound: f64) {
        for v in &mut self.value {
            *v = T::lit(rng.gen_range(-bound..bound));
        }
    }
}

/// Geometry of a 2-D sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Unfold one `c×h×w` sample into a `(c·k·k) × (oh·ow)` column matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, win: Window, cols: &mut Vec<T>) {
    let (oh, ow) = (win.out_len(h), win.out_len(w));
    cols.clear();
    cols.resize(c * win.k * win.k * oh * ow, T::zero());
    let mut row = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..win.k {
            for kj in 0..win.k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into a `c×h×w` sample.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, win: Window, x: &mut [T]) {
    let (oh, ow) = (win.out_len(h), win.out_len(w));
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..win.k {
            for kj in 0..win.k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * win.stride + ki) as isize - win.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * win.stride + kj) as isize - win.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub win: Window,
    /// `cout × (cin·k·k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            cin,
            cout,
            win: Window { k, stride, pad },
            weight: Param::zeros(format!("{name}.weight"), vec![cout, cin, k, k]),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.win == Window { k: 1, stride: 1, pad: 0 }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: input channels", self.weight.name);
        let (oh, ow) = (self.win.out_len(x.h), self.win.out_len(x.w));
        let ckk = self.cin * self.win.k * self.win.k;
        let mut y = Tensor::zeros(x.n, self.cout, oh, ow);
        let mut cols = Vec::new();
        for i in 0..x.n {
            let out = y.sample_mut(i);
            for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            let src = if self.is_pointwise() {
                x.sample(i)
            } else {
                im2col(x.sample(i), x.c, x.h, x.w, self.win, &mut cols);
                &cols
            };
            gemm(self.cout, ckk, oh * ow, &self.weight.value, false, src, false, T::one(), out);
        }
        y
    }

    fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (oh, ow) = (dy.h, dy.w);
        let ckk = self.cin * self.win.k * self.win.k;
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        let mut cols = Vec::new();
        let mut dcols = vec![T::zero(); ckk * oh * ow];
        for i in 0..x.n {
            let g = dy.sample(i);
            if !self.weight.frozen {
                let src = if self.is_pointwise() {
                    x.sample(i)
                } else {
                    im2col(x.sample(i), x.c, x.h, x.w, self.win, &mut cols);
                    &cols
                };
                gemm(self.cout, oh * ow, ckk, g, false, src, true, T::one(), &mut self.weight.grad);
                for (o, chunk) in g.chunks(oh * ow).enumerate() {
                    self.bias.grad[o] += chunk.iter().copied().sum::<T>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                if self.is_pointwise() {
                    gemm(ckk, self.cout, oh * ow, &self.weight.value, true, g, false, T::zero(), dx.sample_mut(i));
                } else {
                    gemm(ckk, self.cout, oh * ow, &self.weight.value, true, g, false, T::zero(), &mut dcols);
                    col2im(&dcols, x.c, x.h, x.w, self.win, dx.sample_mut(i));
                }
            }
        }
        dx
    }
}

/// Transposed convolution, the adjoint of [`Conv2d`] with the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub win: Window,
    /// `cin × (cout·k·k)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvTranspose2d {
            cin,
            cout,
            win: Window { k, stride, pad },
            weight: Param::zeros(format!("{name}.weight"), vec![cin, cout, k, k]),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.win.stride + self.win.k - 2 * self.win.pad
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "{}: input channels", self.weight.name);
        let (oh, ow) = (self.out_len(x.h), self.out_len(x.w));
        let ckk = self.cout * self.win.k * self.win.k;
        let mut y = Tensor::zeros(x.n, self.cout, oh, ow);
        let mut cols = vec![T::zero(); ckk * x.h * x.w];
        for i in 0..x.n {
            gemm(ckk, self.cin, x.h * x.w, &self.weight.value, true, x.sample(i), false, T::zero(), &mut cols);
            let out = y.sample_mut(i);
            for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            col2im(&cols, self.cout, oh, ow, self.win, out);
        }
        y
    }

    fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let ckk = self.cout * self.win.k * self.win.k;
        let hw = x.h * x.w;
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        let mut dcols = Vec::new();
        for i in 0..x.n {
            let g = dy.sample(i);
            im2col(g, dy.c, dy.h, dy.w, self.win, &mut dcols);
            if !self.weight.frozen {
                gemm(self.cin, hw, ckk, x.sample(i), false, &dcols, true, T::one(), &mut self.weight.grad);
                for (o, chunk) in g.chunks(dy.h * dy.w).enumerate() {
                    self.bias.grad[o] += chunk.iter().copied().sum::<T>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                gemm(self.cin, ckk, hw, &self.weight.value, false, &dcols, false, T::zero(), dx.sample_mut(i));
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: Param::zeros(format!("{name}.weight"), vec![outputs, inputs]),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.sample_len(), self.inputs, "{}: input size", self.weight.name);
        let mut y = Tensor::zeros(x.n, self.outputs, 1, 1);
        for i in 0..x.n {
            y.sample_mut(i).copy_from_slice(&self.bias.value);
        }
        gemm(x.n, self.inputs, self.outputs, &x.data, false, &self.weight.value, true, T::one(), &mut y.data);
        y
    }

    fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        if !self.weight.frozen {
            gemm(self.outputs, x.n, self.inputs, &dy.data, true, &x.data, false, T::one(), &mut self.weight.grad);
            for i in 0..dy.n {
                for (b, &g) in self.bias.grad.iter_mut().zip(dy.sample(i)) {
                    *b += g;
                }
            }
        }
        need_dx.then(|| {
            let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
            gemm(x.n, self.outputs, self.inputs, &dy.data, false, &self.weight.value, false, T::zero(), &mut dx.data);
            dx
        })
    }
}

/// Interpolation taps for align-corners bilinear resampling of one axis.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            if input == 1 || output == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (input - 1) as f64 / (output - 1) as f64;
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Network building block. Parameterless layers carry only their settings.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
    Linear(Linear<T>),
    /// 2×2 max pooling, stride 2.
    MaxPool2,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Flatten,
    /// Bilinear upsampling by an integer factor, corners aligned: output
    /// pixel `o` samples input coordinate `o·(in−1)/(out−1)`.
    Bilinear(usize),
    /// Nearest-neighbour upsampling by an integer factor.
    Nearest(usize),
}

impl<T: Real> Layer<T> {
    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::ConvT(l) => vec![&l.weight, &l.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvT(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Uniform He initialization of weights, zero biases.
    pub fn init(&mut self, rng: &mut Rng) {
        let fan_in = match self {
            Layer::Conv(l) => l.cin * l.win.k * l.win.k,
            Layer::ConvT(l) => (l.cin * l.win.k * l.win.k / (l.win.stride * l.win.stride)).max(1),
            Layer::Linear(l) => l.inputs,
            _ => return,
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut ps = self.params_mut();
        ps[0].init_uniform(rng, bound);
        ps[1].value.iter_mut().for_each(|v| *v = T::zero());
    }

    /// Output `(c, h, w)` for an input of the given shape.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Layer::Conv(l) => (l.cout, l.win.out_len(h), l.win.out_len(w)),
            Layer::ConvT(l) => (l.cout, l.out_len(h), l.out_len(w)),
            Layer::Linear(l) => (l.outputs, 1, 1),
            Layer::MaxPool2 => (c, h / 2, w / 2),
            Layer::Flatten => (c * h * w, 1, 1),
            Layer::Bilinear(f) | Layer::Nearest(f) => (c, h * f, w * f),
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Sigmoid => (c, h, w),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::ConvT(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::MaxPool2 => {
                let (oh, ow) = (x.h / 2, x.w / 2);
                let mut y = Tensor::zeros(x.n, x.c, oh, ow);
                for i in 0..x.n {
                    let src = x.sample(i);
                    let dst = y.sample_mut(i);
                    for ch in 0..x.c {
                        let p = &src[ch * x.h * x.w..];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let a = 2 * oy * x.w + 2 * ox;
                                let m = p[a].max(p[a + 1]).max(p[a + x.w]).max(p[a + x.w + 1]);
                                dst[(ch * oh + oy) * ow + ox] = m;
                            }
                        }
                    }
                }
                y
            }
            Layer::Relu => x.map(|v| v.max(T::zero())),
            Layer::LeakyRelu(s) => {
                let s = T::lit(*s);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            Layer::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
            Layer::Flatten => x.clone().reshape(x.sample_len(), 1, 1),
            Layer::Bilinear(f) => {
                let (oh, ow) = (x.h * f, x.w * f);
                let (ty, tx) = (bilinear_taps(x.h, oh), bilinear_taps(x.w, ow));
                let mut y = Tensor::zeros(x.n, x.c, oh, ow);
                for i in 0..x.n {
                    let src = x.sample(i);
                    let dst = y.sample_mut(i);
                    for ch in 0..x.c {
                        let p = &src[ch * x.h * x.w..(ch + 1) * x.h * x.w];
                        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                            let wy = T::lit(wy);
                            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                                let wx = T::lit(wx);
                                let top = p[y0 * x.w + x0] * (T::one() - wx) + p[y0 * x.w + x1] * wx;
                                let bot = p[y1 * x.w + x0] * (T::one() - wx) + p[y1 * x.w + x1] * wx;
                                dst[(ch * oh + oy) * ow + ox] = top * (T::one() - wy) + bot * wy;
                            }
                        }
                    }
                }
                y
            }
            Layer::Nearest(f) => {
                let (oh, ow) = (x.h * f, x.w * f);
                let mut y = Tensor::zeros(x.n, x.c, oh, ow);
                for i in 0..x.n {
                    let src = x.sample(i);
                    let dst = y.sample_mut(i);
                    for ch in 0..x.c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dst[(ch * oh + oy) * ow + ox] = src[(ch * x.h + oy / f) * x.w + ox / f];
                            }
                        }
                    }
                }
                y
            }
        }
    }

    /// Accumulate parameter gradients and return the input gradient when
    /// `need_dx`. `x` and `y` are this layer's cached input and output.
    pub fn backward(&mut self, x: &Tensor<T>, y: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(x, dy, need_dx),
            Layer::ConvT(l) => l.backward(x, dy, need_dx),
            Layer::Linear(l) => l.backward(x, dy, need_dx),
            _ if !need_dx => None,
            Layer::MaxPool2 => {
                let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
                let (oh, ow) = (dy.h, dy.w);
                for i in 0..x.n {
                    let src = x.sample(i);
                    let g = dy.sample(i);
                    let dst = dx.sample_mut(i);
                    for ch in 0..x.c {
                        let off = ch * x.h * x.w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let a = off + 2 * oy * x.w + 2 * ox;
                                // first maximum in scan order gets the gradient
                                let mut best = a;
                                for cand in [a + 1, a + x.w, a + x.w + 1] {
                                    if src[cand] > src[best] {
                                        best = cand;
                                    }
                                }
                                dst[best] += g[(ch * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
                Some(dx)
            }
            Layer::Relu => Some(Tensor {
                data: x
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
                ..dy.clone()
            }),
            Layer::LeakyRelu(s) => {
                let s = T::lit(*s);
                Some(Tensor {
                    data: x
                        .data
                        .iter()
                        .zip(&dy.data)
                        .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
                        .collect(),
                    ..dy.clone()
                })
            }
            Layer::Sigmoid => Some(Tensor {
                data: y
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&v, &g)| g * v * (T::one() - v))
                    .collect(),
                ..dy.clone()
            }),
            Layer::Flatten => Some(dy.clone().reshape(x.c, x.h, x.w)),
            Layer::Bilinear(_) => {
                let (ty, tx) = (bilinear_taps(x.h, dy.h), bilinear_taps(x.w, dy.w));
                let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
                for i in 0..x.n {
                    let g = dy.sample(i);
                    let dst = dx.sample_mut(i);
                    for ch in 0..x.c {
                        let p = &mut dst[ch * x.h * x.w..(ch + 1) * x.h * x.w];
                        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                            let wy = T::lit(wy);
                            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                                let wx = T::lit(wx);
                                let v = g[(ch * dy.h + oy) * dy.w + ox];
                                p[y0 * x.w + x0] += v * (T::one() - wy) * (T::one() - wx);
                                p[y0 * x.w + x1] += v * (T::one() - wy) * wx;
                                p[y1 * x.w + x0] += v * wy * (T::one() - wx);
                                p[y1 * x.w + x1] += v * wy * wx;
                            }
                        }
                    }
                }
                Some(dx)
            }
            Layer::Nearest(f) => {
                let f = *f;
                let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
                for i in 0..x.n {
                    let g = dy.sample(i);
                    let dst = dx.sample_mut(i);
                    for ch in 0..x.c {
                        for oy in 0..dy.h {
                            for ox in 0..dy.w {
                                dst[(ch * x.h + oy / f) * x.w + ox / f] += g[(ch * dy.h + oy) * dy.w + ox];
                            }
                        }
                    }
                }
                Some(dx)
            }
        }
    }
}
