//! Frame preprocessing: resize, scale to [0, 1], remove the dataset mean.

use crate::data::image::Image;
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Element, Tensor};

/// Per-channel dataset mean of pixels scaled to [0, 1].
pub type ChannelMean = [f64; 3];

fn check_rgb(img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::format("<frame>", format!("expected an RGB frame, got {} channel(s)", img.channels)));
    }
    Ok(())
}

/// The frame resized to `size × size`, values in [0, 1].
pub fn resized_unit(img: &Image, size: usize) -> Result<Vec<f32>> {
    check_rgb(img)?;
    let unit: Vec<f32> = img.data.iter().map(|&v| v as f32 / 255.0).collect();
    if img.width == size && img.height == size {
        return Ok(unit);
    }
    Ok(kernels::bilinear_forward(&unit, [1, img.height, img.width, 3], size, size))
}

/// `(1, size, size, 3)` tensor with the channel mean subtracted.
pub fn preprocess_frame<T: Element>(img: &Image, size: usize, mean: &ChannelMean) -> Result<Tensor<T>> {
    let unit = resized_unit(img, size)?;
    let data = unit
        .chunks(3)
        .flat_map(|p| (0..3).map(move |c| T::c(p[c] as f64 - mean[c])))
        .collect();
    Tensor::new(&[1, size, size, 3], data)
}

/// Mean of every resized pixel of `frames`, per channel.
pub fn dataset_mean<'a>(frames: impl IntoIterator<Item = &'a Image>, size: usize) -> Result<ChannelMean> {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for img in frames {
        for p in resized_unit(img, size)?.chunks(3) {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data("cannot compute the mean of zero frames".into()));
    }
    Ok(sum.map(|s| s / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gray_frame_becomes_zero() {
        let img = Image::rgb(4, 4, vec![51; 48]).unwrap();
        let mean = dataset_mean([&img], 8).unwrap();
        let t: Tensor<f32> = preprocess_frame(&img, 8, &mean).unwrap();
        assert_eq!(t.shape(), [1, 8, 8, 3]);
        assert!(t.data().iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn same_size_is_identity() {
        let data: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let img = Image::rgb(4, 4, data.clone()).unwrap();
        let t: Tensor<f64> = preprocess_frame(&img, 4, &[0.0; 3]).unwrap();
        let want: Vec<f64> = data.iter().map(|&v| (v as f32 / 255.0) as f64).collect();
        assert_eq!(t.data(), want.as_slice());
    }

    #[test]
    fn gray_input_is_rejected() {
        let img = Image::new(2, 2, 1, vec![0; 4]).unwrap();
        assert!(matches!(preprocess_frame::<f32>(&img, 4, &[0.0; 3]), Err(Error::Format { .. })));
    }
}
