use super::Real;

/// Dense NCHW batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn reshape(mut self, c: usize, h: usize, w: usize) -> Self {
        assert_eq!(c * h * w, self.sample_len(), "reshape size");
        self.c = c;
        self.h = h;
        self.w = w;
        self
    }

    /// Concatenate along channels; batch and spatial dims must match.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Self {
        let first = parts[0];
        let c: usize = parts.iter().map(|p| p.c).sum();
        let mut out = Tensor::zeros(first.n, c, first.h, first.w);
        for i in 0..first.n {
            let mut offset = 0;
            for p in parts {
                assert!(p.n == first.n && p.h == first.h && p.w == first.w, "concat shape");
                let s = p.sample(i);
                out.sample_mut(i)[offset..offset + s.len()].copy_from_slice(s);
                offset += s.len();
            }
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor<T>> {
        assert_eq!(sizes.iter().sum::<usize>(), self.c, "split sizes");
        let plane = self.h * self.w;
        let mut out: Vec<Tensor<T>> = sizes
            .iter()
            .map(|&c| Tensor::zeros(self.n, c, self.h, self.w))
            .collect();
        for i in 0..self.n {
            let mut offset = 0;
            for (k, &c) in sizes.iter().enumerate() {
                out[k]
                    .sample_mut(i)
                    .copy_from_slice(&self.sample(i)[offset * plane..(offset + c) * plane]);
                offset += c;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
        }
    }
}
