use super::{Layer, Param, Real, Tensor};
use crate::rng::Rng;

/// A chain of layers with cached-activation backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

/// Activations recorded by [`Sequential::forward_cached`]: `acts[0]` is the
/// input and `acts[i + 1]` the output of layer `i`.
pub type Activations<T> = Vec<Tensor<T>>;

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn init(&mut self, rng: &mut Rng) {
        self.layers.iter_mut().for_each(|l| l.init(rng));
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur);
        }
        cur
    }

    pub fn forward_cached(&self, x: Tensor<T>) -> Activations<T> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for l in &self.layers {
            let y = l.forward(acts.last().unwrap());
            acts.push(y);
        }
        acts
    }

    /// Backpropagate `dy` (gradient w.r.t. the last activation). Returns the
    /// input gradient only when `need_dx`.
    pub fn backward(&mut self, acts: &Activations<T>, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let mut grad = dy;
        let n = self.layers.len();
        for i in (0..n).rev() {
            let want = need_dx || i > 0;
            match self.layers[i].backward(&acts[i], &acts[i + 1], &grad, want) {
                Some(g) => grad = g,
                None => return None,
            }
        }
        Some(grad)
    }

    /// Linear region the recorded activations lie in: one code per rectifier
    /// input (sign) and per pooling window (position of the maximum). Equal
    /// regimes at two points mean the chain is smooth between them.
    pub fn regime(&self, acts: &Activations<T>) -> Vec<u8> {
        let mut out = Vec::new();
        for (l, x) in self.layers.iter().zip(acts) {
            match l {
                Layer::Relu | Layer::LeakyRelu(_) => out.extend(x.data.iter().map(|&v| (v > T::zero()) as u8)),
                Layer::MaxPool2 => {
                    let plane = x.h * x.w;
                    for nc in 0..x.n * x.c {
                        let p = &x.data[nc * plane..];
                        for oy in 0..x.h / 2 {
                            for ox in 0..x.w / 2 {
                                let a = 2 * oy * x.w + 2 * ox;
                                let cand = [a, a + 1, a + x.w, a + x.w + 1];
                                let best = (0..4).fold(0, |b, k| if p[cand[k]] > p[cand[b]] { k } else { b });
                                out.push(best as u8);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn output_shape(&self, mut shape: (usize, usize, usize)) -> (usize, usize, usize) {
        for l in &self.layers {
            shape = l.output_shape(shape);
        }
        shape
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn freeze(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.frozen = true);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
