use rand::seq::index;
use rand::Rng;

use super::{Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

pub const AUGMENT_PAD: usize = 4;

fn count_for(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// `round(ratio·n)` distinct indices in `0..n`, sorted ascending.
pub fn sample_subset_indices<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("subset ratio {ratio} outside (0, 1]")));
    }
    let mut idx = index::sample(rng, n, count_for(ratio, n)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Uniform sample without replacement of `round(ratio·N)` examples.
pub fn sample_subset<R: Rng + ?Sized>(dataset: &Dataset, ratio: f64, rng: &mut R) -> Result<Dataset> {
    Ok(dataset.select(&sample_subset_indices(dataset.len(), ratio, rng)?))
}

/// Relabels exactly `round(ratio·N)` uniformly chosen examples with labels
/// drawn uniformly over all classes. Returns the new dataset and the sorted
/// positions that were selected.
pub fn inject_label_noise_with_indices<R: Rng + ?Sized>(
    dataset: &Dataset,
    noise_ratio: f64,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&noise_ratio) {
        return Err(Error::InvalidArgument(format!("noise ratio {noise_ratio} outside [0, 1]")));
    }
    let mut chosen = index::sample(rng, dataset.len(), count_for(noise_ratio, dataset.len())).into_vec();
    chosen.sort_unstable();
    let mut labels = dataset.labels().to_vec();
    for &i in &chosen {
        labels[i] = rng.random_range(0..dataset.num_classes());
    }
    Ok((dataset.with_labels(labels)?, chosen))
}

pub fn inject_label_noise<R: Rng + ?Sized>(dataset: &Dataset, noise_ratio: f64, rng: &mut R) -> Result<Dataset> {
    Ok(inject_label_noise_with_indices(dataset, noise_ratio, rng)?.0)
}

/// Mirrors one flattened image left to right.
pub fn flip_horizontal(image: &[f64], shape: ImageShape) -> Vec<f64> {
    let (h, w, c) = shape;
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * c;
            let dst = (y * w + (w - 1 - x)) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    out
}

/// Zero-pads by `pad` on every side and crops the `h × w` window whose top
/// left corner sits at `(dy, dx)` in the padded image.
pub fn pad_crop(image: &[f64], shape: ImageShape, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let (h, w, c) = shape;
    let mut out = vec![0.0; image.len()];
    for y in 0..h {
        let sy = (y + dy).wrapping_sub(pad);
        if sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = (x + dx).wrapping_sub(pad);
            if sx >= w {
                continue;
            }
            let src = (sy * w + sx) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&image[src..src + c]);
        }
    }
    out
}

/// Per image: flip with probability 0.5, then a random crop of the
/// 4-pixel zero-padded image.
pub fn augment_batch<R: Rng + ?Sized>(batch: &Tensor2, image_shape: Option<ImageShape>, rng: &mut R) -> Result<Tensor2> {
    let shape = image_shape.ok_or_else(|| Error::InvalidArgument("augmentation needs image-shaped data".into()))?;
    if shape.0 * shape.1 * shape.2 != batch.cols() {
        return Err(Error::shape("augment_batch", shape.0 * shape.1 * shape.2, batch.cols()));
    }
    let mut out = batch.clone();
    for r in 0..batch.rows() {
        let flip = rng.random_bool(0.5);
        let dy = rng.random_range(0..=2 * AUGMENT_PAD);
        let dx = rng.random_range(0..=2 * AUGMENT_PAD);
        let img = if flip {
            flip_horizontal(batch.row(r), shape)
        } else {
            batch.row(r).to_vec()
        };
        out.row_mut(r).copy_from_slice(&pad_crop(&img, shape, AUGMENT_PAD, dy, dx));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn toy(n: usize, classes: usize) -> Dataset {
        let x = Tensor2::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(x, (0..n).map(|i| i % classes).collect(), classes, None).unwrap()
    }

    #[test]
    fn subset_sizes() {
        let mut rng = stream_rng(0, Stream::Subset, 0);
        assert_eq!(sample_subset_indices(60000, 0.1, &mut rng).unwrap().len(), 6000);
        let d = toy(50, 5);
        let full = sample_subset(&d, 1.0, &mut rng).unwrap();
        assert_eq!(full, d);
        assert!(sample_subset(&d, 0.0, &mut rng).is_err());
        let a = sample_subset_indices(1000, 0.2, &mut stream_rng(1, Stream::Subset, 0)).unwrap();
        let b = sample_subset_indices(1000, 0.2, &mut stream_rng(2, Stream::Subset, 0)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn noise_exact_count() {
        let d = toy(1000, 10);
        let (noisy, chosen) = inject_label_noise_with_indices(&d, 0.5, &mut stream_rng(0, Stream::Noise, 0)).unwrap();
        assert_eq!(chosen.len(), 500);
        for i in 0..1000 {
            if chosen.binary_search(&i).is_err() {
                assert_eq!(noisy.labels()[i], d.labels()[i]);
            }
        }
        assert_eq!(inject_label_noise(&d, 0.0, &mut stream_rng(0, Stream::Noise, 0)).unwrap(), d);
    }

    #[test]
    fn flip_and_crop_identities() {
        let shape = (3, 4, 2);
        let img: Vec<f64> = (0..24).map(f64::from).collect();
        assert_eq!(flip_horizontal(&flip_horizontal(&img, shape), shape), img);
        assert_ne!(flip_horizontal(&img, shape), img);
        assert_eq!(pad_crop(&img, shape, 4, 4, 4), img);
        let shifted = pad_crop(&img, shape, 4, 4, 5);
        // window moved one pixel right: column 0 now holds source column 1
        assert_eq!(&shifted[0..2], &img[2..4]);
        assert_eq!(&shifted[6..8], &[0.0, 0.0]);
    }

    #[test]
    fn augment_preserves_shape_and_rejects_flat_data() {
        let batch = Tensor2::filled(5, 16, 1.0);
        let out = augment_batch(&batch, Some((4, 4, 1)), &mut stream_rng(0, Stream::Augment, 0)).unwrap();
        assert_eq!(out.shape(), batch.shape());
        assert!(augment_batch(&batch, None, &mut stream_rng(0, Stream::Augment, 0)).is_err());
    }
}
