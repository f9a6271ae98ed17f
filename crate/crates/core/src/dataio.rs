//! Raster I/O (binary PGM/PPM), dataset manifests, and the deterministic
//! synthetic benchmark generator.
//!
//! The benchmark is a desk-scale stand-in for real surface/scene corpora:
//! normal images are smooth two-grating textures; anomalous test images carry
//! one small patch of out-of-band texture or uniform noise, with an exact
//! pixel mask. Everything is a pure function of the seed, byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::Tensor;

/// Side length of generated benchmark images.
pub const SYNTH_SIDE: usize = 32;

/// Inclusive bounds of the anomalous patch size.
pub const PATCH_MIN: usize = 6;
pub const PATCH_MAX: usize = 10;

/// Number of pseudo-video groups the test split is striped across.
const TEST_GROUPS: usize = 4;

/// 8-bit raster image, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

/// Errors from raster parsing, manifest handling, and generation.
#[derive(Debug)]
pub enum DataError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed PGM/PPM content; `offset` is the byte position.
    Format {
        offset: usize,
        message: String,
    },
    InvalidImage {
        message: String,
    },
    EmptyManifest {
        path: PathBuf,
    },
    ManifestSyntax {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// Train split may contain only normal samples.
    ProtocolViolation {
        path: PathBuf,
        line: usize,
        message: String,
    },
    MissingFiles {
        paths: Vec<PathBuf>,
    },
    MaskMismatch {
        image: PathBuf,
        mask: PathBuf,
        image_dims: (usize, usize),
        mask_dims: (usize, usize),
    },
    InvalidArg {
        message: String,
    },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            DataError::Format { offset, message } => {
                write!(f, "raster format error at byte {offset}: {message}")
            }
            DataError::InvalidImage { message } => write!(f, "invalid image: {message}"),
            DataError::EmptyManifest { path } => {
                write!(f, "manifest {} contains no entries", path.display())
            }
            DataError::ManifestSyntax {
                path,
                line,
                message,
            } => write!(f, "{}:{line}: {message}", path.display()),
            DataError::ProtocolViolation {
                path,
                line,
                message,
            } => write!(f, "{}:{line}: {message}", path.display()),
            DataError::MissingFiles { paths } => {
                write!(f, "missing files:")?;
                for p in paths {
                    write!(f, " {}", p.display())?;
                }
                Ok(())
            }
            DataError::MaskMismatch {
                image,
                mask,
                image_dims,
                mask_dims,
            } => write!(
                f,
                "mask {} is {}x{} but image {} is {}x{}",
                mask.display(),
                mask_dims.0,
                mask_dims.1,
                image.display(),
                image_dims.0,
                image_dims.1
            ),
            DataError::InvalidArg { message } => write!(f, "invalid argument: {message}"),
        }
    }
}

impl std::error::Error for DataError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            DataError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidImage {
                message: format!("dimensions must be positive, got {width}x{height}"),
            });
        }
        if channels != 1 && channels != 3 {
            return Err(DataError::InvalidImage {
                message: format!("channels must be 1 or 3, got {channels}"),
            });
        }
        if pixels.len() != width * height * channels {
            return Err(DataError::InvalidImage {
                message: format!(
                    "pixel count {} does not match {width}x{height}x{channels}",
                    pixels.len()
                ),
            });
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// `(h, w, c)` tensor scaled to [0, 1] (255 maps to 1.0).
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Tensor::new(vec![self.height, self.width, self.channels], data).unwrap()
    }

    /// Quantizes a `(h, w, c)` tensor back to 8 bits, clamping to [0, 1].
    pub fn from_tensor(t: &Tensor) -> Result<Self, DataError> {
        let dims = t
            .expect_rank("raster tensor", 3)
            .map_err(|e| DataError::InvalidImage {
                message: e.to_string(),
            })?;
        let pixels = t
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RasterImage::new(dims[1], dims[0], dims[2], pixels)
    }

    /// Serializes to binary PGM (1 channel) or PPM (3 channels), maxval 255.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses binary PGM/PPM with maxval 255; '#' header comments allowed.
    pub fn decode(bytes: &[u8]) -> Result<Self, DataError> {
        let mut cur = PnmCursor { buf: bytes, pos: 0 };
        let (magic, magic_off) = cur.token()?;
        let channels = match magic {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(DataError::Format {
                    offset: magic_off,
                    message: format!("bad magic '{other}' (expected P5 or P6)"),
                })
            }
        };
        let width = cur.number("width")?;
        let height = cur.number("height")?;
        let (maxval_txt, maxval_off) = cur.token()?;
        if maxval_txt != "255" {
            return Err(DataError::Format {
                offset: maxval_off,
                message: format!("unsupported maxval {maxval_txt} (only 255)"),
            });
        }
        cur.single_whitespace()?;

        let expected = width * height * channels;
        let available = bytes.len() - cur.pos;
        if available < expected {
            return Err(DataError::Format {
                offset: bytes.len(),
                message: format!(
                    "payload truncated: expected {expected} bytes, found {available}"
                ),
            });
        }
        if available > expected {
            return Err(DataError::Format {
                offset: cur.pos + expected,
                message: format!("{} trailing bytes after payload", available - expected),
            });
        }
        let pixels = bytes[cur.pos..cur.pos + expected].to_vec();
        RasterImage::new(width, height, channels, pixels)
    }
}

/// Byte cursor over a PNM header.
struct PnmCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PnmCursor<'a> {
    fn skip_separators(&mut self) {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    /// Next whitespace-delimited token plus its byte offset.
    fn token(&mut self) -> Result<(&'a str, usize), DataError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DataError::Format {
                offset: start,
                message: "unexpected end of header".to_string(),
            });
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .map(|s| (s, start))
            .map_err(|_| DataError::Format {
                offset: start,
                message: "non-ASCII header token".to_string(),
            })
    }

    fn number(&mut self, what: &str) -> Result<usize, DataError> {
        let (txt, off) = self.token()?;
        let value: usize = txt.parse().map_err(|_| DataError::Format {
            offset: off,
            message: format!("bad {what} '{txt}'"),
        })?;
        if value == 0 {
            return Err(DataError::Format {
                offset: off,
                message: format!("{what} must be positive"),
            });
        }
        Ok(value)
    }

    /// Exactly one whitespace byte separates the header from the payload.
    fn single_whitespace(&mut self) -> Result<(), DataError> {
        if self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(DataError::Format {
                offset: self.pos,
                message: "expected whitespace before payload".to_string(),
            })
        }
    }
}

pub fn load_raster(path: &Path) -> Result<RasterImage, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    RasterImage::decode(&bytes)
}

pub fn save_raster(img: &RasterImage, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, img.encode()).map_err(io_err(path))
}

/// Which half of the corpus a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train or test)")),
        }
    }
}

/// One dataset record. Paths are absolute after loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub group: String,
    pub label: u8,
    pub mask: Option<PathBuf>,
}

/// A validated list of samples for one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

/// Parses and validates a manifest: line format
/// `split path group label [mask_path]`, paths relative to the manifest's
/// directory. The train split must be all-normal, every referenced file must
/// exist, and masks must match their image's dimensions.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut split: Option<Split> = None;
    let mut entries = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(DataError::ManifestSyntax {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "expected 'split path group label [mask]', got {} fields",
                    fields.len()
                ),
            });
        }
        let line_split: Split = fields[0].parse().map_err(|e| DataError::ManifestSyntax {
            path: path.to_path_buf(),
            line: line_no,
            message: e,
        })?;
        match split {
            None => split = Some(line_split),
            Some(s) if s == line_split => {}
            Some(s) => {
                return Err(DataError::ManifestSyntax {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("mixed splits: manifest is {s}, line says {line_split}"),
                })
            }
        }
        let label: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::ManifestSyntax {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("bad label '{other}', expected 0 or 1"),
                })
            }
        };
        if line_split == Split::Train && label == 1 {
            return Err(DataError::ProtocolViolation {
                path: path.to_path_buf(),
                line: line_no,
                message: "train split must contain only normal samples (label 0): \
                          one-class training never sees anomalies"
                    .to_string(),
            });
        }
        entries.push(ManifestEntry {
            image: base.join(fields[1]),
            group: fields[2].to_string(),
            label,
            mask: fields.get(4).map(|m| base.join(m)),
        });
    }

    let split = split.ok_or_else(|| DataError::EmptyManifest {
        path: path.to_path_buf(),
    })?;

    let mut missing = Vec::new();
    for entry in &entries {
        if !entry.image.is_file() {
            missing.push(entry.image.clone());
        }
        if let Some(mask) = &entry.mask {
            if !mask.is_file() {
                missing.push(mask.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(DataError::MissingFiles { paths: missing });
    }

    for entry in &entries {
        if let Some(mask_path) = &entry.mask {
            let image = load_raster(&entry.image)?;
            let mask = load_raster(mask_path)?;
            if (image.width, image.height) != (mask.width, mask.height) {
                return Err(DataError::MaskMismatch {
                    image: entry.image.clone(),
                    mask: mask_path.clone(),
                    image_dims: (image.width, image.height),
                    mask_dims: (mask.width, mask.height),
                });
            }
        }
    }

    Ok(DatasetManifest { split, entries })
}

/// Writes a manifest, relativizing paths under the manifest's directory.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DataError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut text = String::new();
    for entry in &manifest.entries {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .map(|r| r.to_path_buf())
                .unwrap_or_else(|_| p.to_path_buf())
        };
        text.push_str(&format!(
            "{} {} {} {}",
            manifest.split,
            rel(&entry.image).display(),
            entry.group,
            entry.label
        ));
        if let Some(mask) = &entry.mask {
            text.push_str(&format!(" {}", rel(mask).display()));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Loads every image of a manifest as `(h, w, c)` tensors, in entry order.
pub fn manifest_tensors(manifest: &DatasetManifest) -> Result<Vec<Tensor>, DataError> {
    manifest
        .entries
        .iter()
        .map(|e| Ok(load_raster(&e.image)?.to_tensor()))
        .collect()
}

/// One sinusoidal grating summed over the image.
struct Grating {
    freq: f64,
    angle: f64,
    phase: f64,
    amplitude: f64,
}

impl Grating {
    fn sample(rng: &mut ChaCha8Rng, freq_lo: f64, freq_hi: f64, amplitude: f64) -> Self {
        Grating {
            freq: rng.gen_range(freq_lo..freq_hi),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            amplitude,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let along = x * self.angle.cos() + y * self.angle.sin();
        self.amplitude
            * (std::f64::consts::TAU * self.freq * along / SYNTH_SIDE as f64 + self.phase).sin()
    }
}

fn normal_texture(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let amp1 = rng.gen_range(0.15..0.25);
    let g1 = Grating::sample(rng, 1.5, 4.0, amp1);
    let amp2 = rng.gen_range(0.15..0.25);
    let g2 = Grating::sample(rng, 1.5, 4.0, amp2);
    let mut values = Vec::with_capacity(SYNTH_SIDE * SYNTH_SIDE);
    for i in 0..SYNTH_SIDE {
        for j in 0..SYNTH_SIDE {
            let (x, y) = (j as f64, i as f64);
            let v = 0.5 + g1.at(x, y) + g2.at(x, y) + rng.gen_range(-0.02..0.02);
            values.push(v.clamp(0.0, 1.0));
        }
    }
    values
}

/// Stamps one out-of-band patch into `values`, returning the binary mask.
fn stamp_anomaly(values: &mut [f64], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let size = rng.gen_range(PATCH_MIN..=PATCH_MAX);
    let row = rng.gen_range(0..=SYNTH_SIDE - size);
    let col = rng.gen_range(0..=SYNTH_SIDE - size);
    let textured: bool = rng.gen();
    let grating = Grating::sample(rng, 8.0, 12.0, 0.35);

    let mut mask = vec![0u8; SYNTH_SIDE * SYNTH_SIDE];
    for i in row..row + size {
        for j in col..col + size {
            let v = if textured {
                0.5 + grating.at(j as f64, i as f64)
            } else {
                rng.gen_range(0.0..1.0)
            };
            values[i * SYNTH_SIDE + j] = v.clamp(0.0, 1.0);
            mask[i * SYNTH_SIDE + j] = 255;
        }
    }
    mask
}

fn quantize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Generates the full benchmark corpus under `out_dir`: PGM images, masks for
/// anomalous frames, and `train.manifest` / `test.manifest`. Byte-identical
/// for identical seeds. Exactly `round(n_test * anomaly_fraction)` test
/// frames are anomalous; the train split is entirely normal.
pub fn synth_generate(
    out_dir: &Path,
    n_train: usize,
    n_test: usize,
    anomaly_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest), DataError> {
    if n_train == 0 || n_test == 0 {
        return Err(DataError::InvalidArg {
            message: format!("n_train and n_test must be >= 1, got {n_train}/{n_test}"),
        });
    }
    if !(0.0..=1.0).contains(&anomaly_fraction) {
        return Err(DataError::InvalidArg {
            message: format!(
                "anomaly_fraction must lie in [0, 1], got {anomaly_fraction}"
            ),
        });
    }

    let train_dir = out_dir.join("train");
    let test_dir = out_dir.join("test");
    std::fs::create_dir_all(&train_dir).map_err(io_err(&train_dir))?;
    std::fs::create_dir_all(&test_dir).map_err(io_err(&test_dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut train_entries = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let image = RasterImage::new(
            SYNTH_SIDE,
            SYNTH_SIDE,
            1,
            quantize(&normal_texture(&mut rng)),
        )?;
        let path = train_dir.join(format!("img_{i:05}.pgm"));
        save_raster(&image, &path)?;
        train_entries.push(ManifestEntry {
            image: path,
            group: "train".to_string(),
            label: 0,
            mask: None,
        });
    }

    // exact anomaly count via a seeded shuffle of the frame indices
    let n_anomalous = (n_test as f64 * anomaly_fraction).round() as usize;
    let mut anomalous = vec![false; n_test];
    let mut order: Vec<usize> = (0..n_test).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    for &idx in order.iter().take(n_anomalous) {
        anomalous[idx] = true;
    }

    let mut test_entries = Vec::with_capacity(n_test);
    for (i, &is_anomalous) in anomalous.iter().enumerate() {
        let mut values = normal_texture(&mut rng);
        let mask = if is_anomalous {
            Some(stamp_anomaly(&mut values, &mut rng))
        } else {
            None
        };
        let image = RasterImage::new(SYNTH_SIDE, SYNTH_SIDE, 1, quantize(&values))?;
        let image_path = test_dir.join(format!("img_{i:05}.pgm"));
        save_raster(&image, &image_path)?;

        let mask_path = match mask {
            Some(mask_pixels) => {
                let mask_img = RasterImage::new(SYNTH_SIDE, SYNTH_SIDE, 1, mask_pixels)?;
                let p = test_dir.join(format!("mask_{i:05}.pgm"));
                save_raster(&mask_img, &p)?;
                Some(p)
            }
            None => None,
        };
        test_entries.push(ManifestEntry {
            image: image_path,
            group: format!("v{}", i % TEST_GROUPS),
            label: u8::from(is_anomalous),
            mask: mask_path,
        });
    }

    let train = DatasetManifest {
        split: Split::Train,
        entries: train_entries,
    };
    let test = DatasetManifest {
        split: Split::Test,
        entries: test_entries,
    };
    save_manifest(&train, &out_dir.join("train.manifest"))?;
    save_manifest(&test, &out_dir.join("test.manifest"))?;
    Ok((train, test))
}
