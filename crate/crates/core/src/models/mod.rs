//! The dissimilarity detector and the small stand-ins for the segmentation
//! network and the conditional generator/discriminator pair.

mod detector;
mod gan;
mod segnet;
mod unet;

pub use detector::{DetectorCache, DetectorConfig, DetectorModel, HeadKind, PairBatch};
pub use gan::{mean_l1, train_toy_cgan, CganConfig, CganReport, DiscriminatorModel, GeneratorModel};
pub use segnet::{pixel_accuracy, train_toy_segnet, SegConfig, SegModel, SegReport};
pub use unet::{UNet, UNetCache};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, RgbImage};
use rand::seq::SliceRandom;

use crate::nn::{Real, Tensor};
use crate::rng::{rng_for, stream};
use crate::toyworld::ClassSet;

/// Receptive field and cumulative stride of a chain of `(kernel, stride)`
/// windows, via `r ← r + (k − 1)·j`, `j ← j·s`.
pub fn receptive_field(windows: &[(usize, usize)]) -> (usize, usize) {
    windows
        .iter()
        .fold((1, 1), |(r, j), &(k, s)| (r + (k - 1) * j, j * s))
}

/// Append one-hot planes of `labels` (over in-distribution channels) for one
/// sample. Ids without a channel are rejected.
pub(crate) fn one_hot_into<T: Real>(labels: &LabelMap, classes: &ClassSet, dst: &mut [T]) -> Result<()> {
    let plane = labels.height * labels.width;
    let c = classes.num_in_dist();
    assert_eq!(dst.len(), c * plane);
    dst.iter_mut().for_each(|v| *v = T::zero());
    let mut lut = [usize::MAX; 256];
    for (ch, &id) in classes.in_dist_ids.iter().enumerate() {
        lut[id as usize] = ch;
    }
    for (i, &id) in labels.data.iter().enumerate() {
        let ch = lut[id as usize];
        if ch == usize::MAX {
            return Err(Error::invalid(format!(
                "label id {id} has no input channel (only in-distribution ids can be encoded)"
            )));
        }
        dst[ch * plane + i] = T::one();
    }
    Ok(())
}

/// Deterministic visiting order of `n` items for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, stream::SHUFFLE, epoch as u64));
    order
}

/// 8-bit interleaved rgb to a `1×3×H×W` tensor in [0,1].
pub(crate) fn rgb_tensor<T: Real>(img: &RgbImage) -> Tensor<T> {
    let plane = img.height * img.width;
    let mut t = Tensor::zeros(1, 3, img.height, img.width);
    for i in 0..plane {
        for ch in 0..3 {
            t.data[ch * plane + i] = T::lit(img.data[i * 3 + ch] as f64 / 255.0);
        }
    }
    t
}

/// First sample of a `N×3×H×W` tensor in [0,1] to 8-bit rgb.
pub(crate) fn tensor_rgb<T: Real>(t: &Tensor<T>) -> RgbImage {
    let plane = t.h * t.w;
    let mut img = RgbImage::new(t.h, t.w);
    for i in 0..plane {
        for ch in 0..3 {
            let v = t.data[ch * plane + i].to_f64().unwrap().clamp(0.0, 1.0);
            img.data[i * 3 + ch] = (v * 255.0).round() as u8;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_prefix_receptive_field() {
        // seven 3x3 convs in stacks (2, 2, 3) with two 2x2/2 pools between
        let c = (3, 1);
        let p = (2, 2);
        let ops = [c, c, p, c, c, p, c, c, c];
        assert_eq!(receptive_field(&ops), (40, 4));
        assert_eq!(receptive_field(&ops[..6]), (16, 4));
    }
}
