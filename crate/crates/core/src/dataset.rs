//! Image + binary-mask corpora: loading, resizing, synthetic generation and
//! rain-overlaid benchmark copies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagebuf::FloatImage;
use crate::model::check_input_size;
use crate::rain::{self, RainParams};

/// Stored 8-bit masks are foreground at or above this value.
pub const MASK_THRESHOLD: u8 = 128;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Binary mask, row-major, values 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| (v >= MASK_THRESHOLD) as u8).collect(),
        }
    }

    /// 0/255 grayscale image.
    pub fn to_gray(&self) -> GrayImage {
        let raw = self.data.iter().map(|&v| v * 255).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    /// Nearest-neighbour resize (half-pixel centres).
    pub fn resize(&self, width: usize, height: usize) -> Mask {
        let map = |dst: usize, src: usize, len: usize| {
            (((dst as f64 + 0.5) * src as f64 / len as f64).floor() as usize).min(src - 1)
        };
        let cols: Vec<usize> = (0..width).map(|x| map(x, self.width, width)).collect();
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = map(y, self.height, height);
            data.extend(cols.iter().map(|&sx| self.data[sy * self.width + sx]));
        }
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub mask: Mask,
    pub source_id: String,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.image.width() as usize, self.image.height() as usize)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `images/` and `masks/` directories paired by file stem.
    PairedFolders,
    /// `name.png` next to `name_mask.png`.
    SuffixMatched,
    /// Paired folders when `images/` exists, suffix matching otherwise.
    #[default]
    Auto,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub layout: Layout,
    /// Skip unreadable files (recording them) instead of failing.
    pub skip_unreadable: bool,
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    /// Files that could not be decoded, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn has_image_ext(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && has_image_ext(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn find_with_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads every image/mask pair under `root`, ordered by image path.
pub fn load_corpus(root: &Path, opts: LoadOptions) -> Result<Corpus> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let layout = match opts.layout {
        Layout::Auto if root.join("images").is_dir() => Layout::PairedFolders,
        Layout::Auto => Layout::SuffixMatched,
        l => l,
    };
    let pairs: Vec<(PathBuf, Option<PathBuf>)> = match layout {
        Layout::PairedFolders => {
            let masks = root.join("masks");
            list_images(&root.join("images"))?
                .into_iter()
                .map(|img| {
                    let m = find_with_stem(&masks, &stem(&img));
                    (img, m)
                })
                .collect()
        }
        _ => list_images(root)?
            .into_iter()
            .filter(|p| !stem(p).ends_with("_mask"))
            .map(|img| {
                let m = find_with_stem(root, &format!("{}_mask", stem(&img)));
                (img, m)
            })
            .collect(),
    };
    let missing: Vec<String> = pairs
        .iter()
        .filter(|(_, m)| m.is_none())
        .map(|(i, _)| i.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("no mask found for: {}", missing.join(", "))));
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("empty corpus at {}", root.display())));
    }

    let mut corpus = Corpus::default();
    for (img_path, mask_path) in pairs {
        let mask_path = mask_path.expect("checked above");
        let loaded = decode(&img_path).and_then(|img| Ok((img, decode(&mask_path)?)));
        let (img, mask) = match loaded {
            Ok(v) => v,
            Err(e) if opts.skip_unreadable => {
                corpus.skipped.push((img_path, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let image = img.to_rgb8();
        let mask = Mask::from_gray(&mask.to_luma8());
        if (image.width() as usize, image.height() as usize) != (mask.width, mask.height) {
            return Err(Error::Data(format!(
                "{}: image is {}x{} but mask is {}x{}",
                img_path.display(),
                image.width(),
                image.height(),
                mask.width,
                mask.height
            )));
        }
        corpus.samples.push(Sample {
            image,
            mask,
            source_id: stem(&img_path),
        });
    }
    if corpus.samples.is_empty() {
        return Err(Error::Data(format!("no readable samples at {}", root.display())));
    }
    Ok(corpus)
}

/// Stretches the sample to `width x height`: bilinear for the image,
/// nearest-neighbour for the mask.
pub fn resize_sample(sample: &Sample, width: usize, height: usize) -> Result<Sample> {
    check_input_size(width, height)?;
    if sample.size() == (width, height) {
        return Ok(sample.clone());
    }
    let image = FloatImage::from_rgb8(&sample.image).resize(height, width).to_rgb8();
    Ok(Sample {
        image,
        mask: sample.mask.resize(width, height),
        source_id: sample.source_id.clone(),
    })
}

/// Mixes a base seed with stream indices (splitmix64 finalizer per step).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Rains on one (already resized) image with a dedicated seed.
pub fn rain_image(image: &RgbImage, seed: u64, streak_color: f64) -> Result<(RgbImage, RainParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, params) = rain::add_rain(&FloatImage::from_rgb8(image), streak_color, &mut rng)?;
    Ok((out.to_rgb8(), params))
}

/// One line of a benchmark `manifest.txt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_id: String,
    pub image: String,
    pub mask: String,
    pub seed: u64,
    pub params: RainParams,
}

fn write_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a rain-overlaid copy of `samples` resized to `width x height`.
///
/// Output: `images/<id>.png`, untouched (resized) `masks/<id>.png`, and
/// `manifest.txt` with one JSON record per image. Image `i` is rained with
/// seed `derive_seed(seed, [i])`, so the result depends only on the corpus,
/// the seed and the size.
pub fn build_add_rain_benchmark(
    samples: &[Sample],
    out_dir: &Path,
    seed: u64,
    width: usize,
    height: usize,
    streak_color: f64,
) -> Result<Vec<ManifestRecord>> {
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let resized = resize_sample(sample, width, height)?;
        let image_seed = derive_seed(seed, &[i as u64]);
        let (rained, params) = rain_image(&resized.image, image_seed, streak_color)?;
        let name = format!("{}.png", sample.source_id);
        write_png(&rained, &images.join(&name))?;
        write_png(&resized.mask.to_gray(), &masks.join(&name))?;
        records.push(ManifestRecord {
            source_id: sample.source_id.clone(),
            image: format!("images/{name}"),
            mask: format!("masks/{name}"),
            seed: image_seed,
            params,
        });
    }
    let path = out_dir.join("manifest.txt");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in &records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}

/// Random-shape corpus: a smooth dark background with one to three filled
/// ellipses or rectangles in saturated colours as foreground.
pub fn synthetic_corpus(n: usize, width: usize, height: usize, seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(20.0..110.0));
            let grad: [f64; 2] = [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)];
            let mut img = vec![0u8; width * height * 3];
            let mut mask = vec![0u8; width * height];
            for y in 0..height {
                for x in 0..width {
                    let t = grad[0] * x as f64 / width as f64 + grad[1] * y as f64 / height as f64;
                    for c in 0..3 {
                        let noise = rng.random_range(-6.0..6.0);
                        img[(y * width + x) * 3 + c] = (base[c] + t + noise).clamp(0.0, 255.0) as u8;
                    }
                }
            }
            for _ in 0..rng.random_range(1..=3) {
                let cx = rng.random_range(0.2..0.8) * width as f64;
                let cy = rng.random_range(0.2..0.8) * height as f64;
                let rx = rng.random_range(0.08..0.25) * width as f64;
                let ry = rng.random_range(0.08..0.25) * height as f64;
                let ellipse = rng.random_bool(0.5);
                let hue = rng.random_range(0..3);
                let color: [f64; 3] = std::array::from_fn(|c| if c == hue { 230.0 } else { 60.0 });
                for y in 0..height {
                    for x in 0..width {
                        let dx = (x as f64 + 0.5 - cx) / rx;
                        let dy = (y as f64 + 0.5 - cy) / ry;
                        let inside = if ellipse {
                            dx * dx + dy * dy <= 1.0
                        } else {
                            dx.abs() <= 1.0 && dy.abs() <= 1.0
                        };
                        if inside {
                            mask[y * width + x] = 1;
                            for c in 0..3 {
                                let noise = rng.random_range(-6.0..6.0);
                                img[(y * width + x) * 3 + c] = (color[c] + noise).clamp(0.0, 255.0) as u8;
                            }
                        }
                    }
                }
            }
            Sample {
                image: RgbImage::from_raw(width as u32, height as u32, img).expect("buffer size"),
                mask: Mask {
                    width,
                    height,
                    data: mask,
                },
                source_id: format!("synthetic_{i:05}"),
            }
        })
        .collect()
}

/// Writes samples in the paired-folder layout (`images/`, `masks/`).
pub fn write_corpus(samples: &[Sample], root: &Path) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for s in samples {
        let name = format!("{}.png", s.source_id);
        write_png(&s.image, &images.join(&name))?;
        write_png(&s.mask.to_gray(), &masks.join(&name))?;
    }
    Ok(())
}
