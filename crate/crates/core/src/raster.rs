//! Planar multi-channel images with values in `[0, 1]` and 8-bit PNG I/O.

use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Image stored channel-major: `data[(c * height + y) * width + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T: Scalar> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(shape_err!("{} values for a {channels}x{height}x{width} image", data.len()));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Image { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[C, H, W]`
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossless()).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Rounds to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Self {
        self.map(|v| T::of(to_u8(v.to_f64_lossless()) as f64 / 255.0))
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }

    /// Copy of the window with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Self> {
        if y + height > self.height || x + width > self.width {
            return Err(invalid!(
                "crop {height}x{width} at ({y}, {x}) exceeds a {}x{} image",
                self.height,
                self.width
            ));
        }
        Ok(Image::from_fn(self.channels, height, width, |c, yy, xx| self.get(c, y + yy, x + xx)))
    }

    /// Batch of one, `[1, C, H, W]`.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.channels, self.height, self.width], self.data.clone()).expect("shape matches data")
    }

    /// Stacks equally sized images into `[N, C, H, W]`.
    pub fn batch(images: &[&Image<T>]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| invalid!("cannot batch zero images"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if im.shape() != first.shape() {
                return Err(shape_err!("batch mixes {:?} and {:?} images", first.shape(), im.shape()));
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::new(&[images.len(), first.channels, first.height, first.width], data)
    }

    /// Sample `n` of a `[N, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [batch, c, h, w] = t.dims4()?;
        if n >= batch {
            return Err(shape_err!("sample {n} of a batch of {batch}"));
        }
        let len = c * h * w;
        Image::new(c, h, w, t.data()[n * len..(n + 1) * len].to_vec())
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Image::from_fn(3, h, w, |c, y, x| T::of(img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0))
    }

    /// 8-bit RGB rendering; single-channel images are replicated to gray.
    pub fn to_rgb8(&self) -> Result<RgbImage> {
        if self.channels != 1 && self.channels != 3 {
            return Err(invalid!("cannot render a {}-channel image as RGB", self.channels));
        }
        Ok(RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| to_u8(self.get(c.min(self.channels - 1), y as usize, x as usize).to_f64_lossless());
            image::Rgb([px(0), px(1), px(2)])
        }))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?.save(path).map_err(|e| Error::image(path, e))
    }

    /// Places images side by side with a `gap`-pixel white separator.
    pub fn hstack(images: &[&Image<T>], gap: usize) -> Result<Self> {
        let first = images.first().ok_or_else(|| invalid!("nothing to stack"))?;
        let (c, h) = (first.channels, first.height);
        if images.iter().any(|im| im.channels != c || im.height != h) {
            return Err(shape_err!("stacked images must share channels and height"));
        }
        let width = images.iter().map(|im| im.width).sum::<usize>() + gap * (images.len() - 1);
        let mut out = Image::filled(c, h, width, T::one());
        let mut x0 = 0;
        for im in images {
            for ch in 0..c {
                for y in 0..h {
                    let dst = (ch * h + y) * width + x0;
                    out.data[dst..dst + im.width].copy_from_slice(&im.plane(ch)[y * im.width..(y + 1) * im.width]);
                }
            }
            x0 += im.width + gap;
        }
        Ok(out)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Center-crops to a square and resizes to `size`×`size` (triangle filter).
pub fn square_resize(img: &RgbImage, size: u32) -> RgbImage {
    let side = img.width().min(img.height());
    let x = (img.width() - side) / 2;
    let y = (img.height() - side) / 2;
    let cropped = image::imageops::crop_imm(img, x, y, side, side).to_image();
    if side == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size, size, FilterType::Triangle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_batching() {
        let a = Image::<f64>::from_fn(2, 2, 3, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(a.get(1, 1, 2), 112.0);
        assert_eq!(a.plane(1)[5], 112.0);
        let t = Image::batch(&[&a, &a]).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2, 3]);
        assert_eq!(Image::from_tensor(&t, 1).unwrap(), a);
        assert!(Image::from_tensor(&t, 2).is_err());
    }

    #[test]
    fn quantize_matches_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let a = Image::<f64>::from_fn(3, 4, 5, |c, y, x| ((c + 2 * y + 3 * x) as f64 * 0.0371).fract());
        a.save_png(&path).unwrap();
        assert_eq!(Image::<f64>::load_png(&path).unwrap(), a.quantized());
    }

    #[test]
    fn hstack_widths() {
        let a = Image::<f64>::filled(3, 4, 5, 0.0);
        let s = Image::hstack(&[&a, &a, &a], 2).unwrap();
        assert_eq!(s.shape(), [3, 4, 19]);
        assert_eq!(s.get(0, 0, 5), 1.0);
        assert_eq!(s.get(0, 0, 7), 0.0);
    }
}
