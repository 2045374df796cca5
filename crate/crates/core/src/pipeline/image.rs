//! Image ingestion and pixel-level splitting.

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::nn::Tensor;

/// 8-bit pixels in row-major, channel-interleaved order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Image> {
        if !(channels == 1 || channels == 3) || pixels.len() != width * height * channels {
            return Err(Error::Format(format!(
                "{} bytes do not form a {width}x{height} image with {channels} channels",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Reads an 8-bit PGM/PPM or PNG file as `channels` channels.
    pub fn load(path: &Path, channels: usize) -> Result<Image> {
        Image::from_dynamic(open(path)?, channels)
    }

    /// Reads an image keeping gray as one channel and anything in color as three.
    pub fn load_native(path: &Path) -> Result<Image> {
        let img = open(path)?;
        let channels = if img.color().has_color() { 3 } else { 1 };
        Image::from_dynamic(img, channels)
    }

    fn from_dynamic(img: DynamicImage, channels: usize) -> Result<Image> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match channels {
            1 => Image::new(w, h, 1, img.into_luma8().into_raw()),
            3 => Image::new(w, h, 3, img.into_rgb8().into_raw()),
            c => Err(Error::Config(format!("images have 1 or 3 channels, not {c}"))),
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, self.pixels.clone()).expect("validated size"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, self.pixels.clone()).expect("validated size"))
        }
    }

    /// Writes binary PGM (gray) or PPM (RGB).
    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        self.to_dynamic()
            .save_with_format(path, ImageFormat::Pnm)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn resized(&self, width: usize, height: usize) -> Image {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let img = self
            .to_dynamic()
            .resize_exact(width as u32, height as u32, FilterType::Triangle);
        Image::from_dynamic(img, self.channels).expect("channel count preserved")
    }

    /// `[C, H, W]` tensor of `pixel / 255`, resized to the network input.
    pub fn to_tensor(&self, shape: [usize; 3], codec: &FixedPointCodec) -> Result<Tensor> {
        let [c, h, w] = shape;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "network takes {c} channels, image has {}",
                self.channels
            )));
        }
        let img = self.resized(w, h);
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for i in 0..h * w {
                data.push(codec.encode(img.pixels[i * c + ch] as f64 / 255.0)?);
            }
        }
        Tensor::new(shape, data)
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let format = ImageFormat::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::Format(format!(
            "{}: only PGM/PPM and PNG are supported",
            path.display()
        )));
    }
    image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Splits every pixel into `s1` uniform in `[0, 255]` and `s2 = v - s1 mod 256`.
pub fn split_image<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> (Image, Image) {
    let s1: Vec<u8> = img.pixels.iter().map(|_| rng.gen()).collect();
    let s2 = img.pixels.iter().zip(&s1).map(|(&v, &a)| v.wrapping_sub(a)).collect();
    let wrap = |pixels| Image { pixels, ..img.clone() };
    (wrap(s1), wrap(s2))
}

pub fn reconstruct_image(s1: &Image, s2: &Image) -> Result<Image> {
    if (s1.width, s1.height, s1.channels) != (s2.width, s2.height, s2.channels) {
        return Err(Error::Shape("share images differ in size".into()));
    }
    Image::new(
        s1.width,
        s1.height,
        s1.channels,
        s1.pixels
            .iter()
            .zip(&s2.pixels)
            .map(|(&a, &b)| a.wrapping_add(b))
            .collect(),
    )
}
