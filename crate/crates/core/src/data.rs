//! Hyperspectral cubes, RGB images, the camera forward model, and a seeded
//! synthetic dataset generator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageReader, RgbImage as PngImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, format_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const CUBE_HEADER_LEN: usize = 16;
pub const DEFAULT_BANDS: usize = 31;
pub const MANIFEST_NAME: &str = "manifest.txt";

/// Hyperspectral image, band-major then row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HSCube {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl HSCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bands * height * width {
            return dim_err(format!(
                "cube {bands}x{height}x{width} needs {} values, got {}",
                bands * height * width,
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!(
                "cube value {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self {
            bands,
            height,
            width,
            data: vec![0.0; bands * height * width],
        }
    }

    /// Builds a cube from a `(1, bands, h, w)` tensor, clamping to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 {
            return dim_err(format!("cube tensors must have batch size 1, got {s}"));
        }
        let data = t
            .data()
            .iter()
            .map(|v| v.as_f64().clamp(0.0, 1.0) as f32)
            .collect();
        Ok(Self {
            bands: s.c,
            height: s.h,
            width: s.w,
            data,
        })
    }

    /// `(1, bands, h, w)` tensor view.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, self.bands, self.height, self.width],
            self.data.iter().map(|&v| T::cast_from(v as f64)).collect(),
        )
        .expect("cube dimensions are consistent")
    }

    pub fn spectrum(&self, y: usize, x: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        (0..self.bands)
            .map(|b| self.data[b * plane + y * self.width + x])
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CUBE_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(CUBE_MAGIC);
        for d in [self.bands, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(format_err(
                0,
                format!("truncated header: {} bytes", bytes.len()),
            ));
        }
        if &bytes[..4] != CUBE_MAGIC {
            return Err(format_err(0, "bad magic, expected \"HSC1\""));
        }
        if bytes.len() < CUBE_HEADER_LEN {
            return Err(format_err(
                bytes.len() as u64,
                format!(
                    "truncated header: {} of {CUBE_HEADER_LEN} bytes",
                    bytes.len()
                ),
            ));
        }
        let dim =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (bands, height, width) = (dim(0), dim(1), dim(2));
        let payload = bands
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| {
                format_err(4, format!("dimensions {bands}x{height}x{width} overflow"))
            })?;
        let body = &bytes[CUBE_HEADER_LEN..];
        if body.len() != payload {
            let at = (CUBE_HEADER_LEN + body.len().min(payload)) as u64;
            let what = if body.len() < payload {
                "truncated payload"
            } else {
                "trailing bytes"
            };
            return Err(format_err(
                at,
                format!(
                    "{what}: expected {payload} payload bytes, found {}",
                    body.len()
                ),
            ));
        }
        let data: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(format_err(
                (CUBE_HEADER_LEN + 4 * i) as u64,
                format!("value {} outside [0, 1]", data[i]),
            ));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }
}

pub fn write_cube(cube: &HSCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cube.to_bytes())?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HSCube> {
    HSCube::from_bytes(&fs::read(path)?)
}

/// Planar RGB image (`3 x h x w`) with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return dim_err(format!(
                "rgb {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, 3, self.height, self.width],
            self.data.iter().map(|&v| T::cast_from(v as f64)).collect(),
        )
        .expect("rgb dimensions are consistent")
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }
}

/// Byte to unit range.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Unit range to byte, rounding half up and saturating outside `[0, 1]`.
pub fn unit_to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Reads an 8-bit RGB raster (PNG) into `[0, 1]`.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = ImageReader::open(path)?.with_guessed_format()?.decode()?;
    if img.color() != ColorType::Rgb8 {
        return Err(format_err(
            0,
            format!(
                "{}: unsupported color type {:?}, expected 8-bit RGB",
                path.display(),
                img.color()
            ),
        ));
    }
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + i] = byte_to_unit(px.0[c]);
        }
    }
    RgbImage::new(h, w, data)
}

pub fn write_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let plane = img.height * img.width;
    let png = PngImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = y as usize * img.width + x as usize;
        image::Rgb([
            unit_to_byte(img.data[i]),
            unit_to_byte(img.data[plane + i]),
            unit_to_byte(img.data[2 * plane + i]),
        ])
    });
    png.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Linear map from a spectrum to RGB; each row is a convex weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraResponse {
    bands: usize,
    /// Row-major `3 x bands`, rows ordered R, G, B.
    matrix: Vec<f64>,
}

impl CameraResponse {
    /// Normalizes each row of a non-negative `3 x bands` matrix to sum to 1.
    pub fn new(bands: usize, matrix: Vec<f64>) -> Result<Self> {
        if bands == 0 || matrix.len() != 3 * bands {
            return dim_err(format!(
                "camera response needs 3x{bands} entries, got {}",
                matrix.len()
            ));
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data(
                "camera response entries must be finite and non-negative".into(),
            ));
        }
        let mut matrix = matrix;
        for row in matrix.chunks_mut(bands) {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::Data("camera response row sums to zero".into()));
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self { bands, matrix })
    }

    /// Three Gaussian sensitivities (sigma 4 bands) centered at bands
    /// 25 (R), 15 (G) and 5 (B) of 31, scaled proportionally for other counts.
    pub fn gaussian(bands: usize) -> Self {
        let scale = bands as f64 / DEFAULT_BANDS as f64;
        let mut m = Vec::with_capacity(3 * bands);
        for center in [25.0, 15.0, 5.0] {
            let (mu, sigma) = (center * scale, 4.0 * scale);
            m.extend((0..bands).map(|b| {
                let d = b as f64 - mu;
                (-d * d / (2.0 * sigma * sigma)).exp()
            }));
        }
        Self::new(bands, m).expect("gaussian response is valid")
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.matrix[channel * self.bands..(channel + 1) * self.bands]
    }
}

impl Default for CameraResponse {
    fn default() -> Self {
        Self::gaussian(DEFAULT_BANDS)
    }
}

/// Projects every pixel spectrum through the camera response.
pub fn project_rgb(cube: &HSCube, resp: &CameraResponse) -> Result<RgbImage> {
    if cube.bands != resp.bands {
        return dim_err(format!(
            "cube has {} bands, camera response expects {}",
            cube.bands, resp.bands
        ));
    }
    let plane = cube.height * cube.width;
    let mut data = vec![0.0f32; 3 * plane];
    for c in 0..3 {
        let row = resp.row(c);
        for i in 0..plane {
            let v: f64 = row
                .iter()
                .enumerate()
                .map(|(b, &w)| w * cube.data[b * plane + i] as f64)
                .sum();
            data[c * plane + i] = v as f32;
        }
    }
    RgbImage::new(cube.height, cube.width, data)
}

/// Parameters of the synthetic scene generator. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub seed: u64,
    pub blobs_per_image: (usize, usize),
    /// Blob support radius as a fraction of the shorter image side.
    pub radius: (f64, f64),
    /// Spectral peak position, in band units.
    pub center_band: (f64, f64),
    /// Spectral Gaussian sigma, in band units.
    pub spectral_width: (f64, f64),
    pub amplitude: (f64, f64),
    /// Flat reflectance floor shared by every band of an image.
    pub background: (f64, f64),
}

impl SynthSpec {
    pub fn new(count: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            count,
            height,
            width,
            bands: DEFAULT_BANDS,
            seed,
            blobs_per_image: (3, 6),
            radius: (0.15, 0.4),
            center_band: (3.0, 27.0),
            spectral_width: (3.0, 7.0),
            amplitude: (0.3, 0.75),
            background: (0.08, 0.2),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Compactly supported smooth bump `(1 - r^2)^2` for `r < 1`.
fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (1.0 - r2) * (1.0 - r2)
    } else {
        0.0
    }
}

/// One synthetic scene: a flat background plus spatial bumps, each with a
/// Gaussian spectral profile, clamped to `[0, 1]`.
///
/// Image `index` draws from its own ChaCha stream, so images are
/// independent of generation order.
pub fn generate_cube(spec: &SynthSpec, index: usize) -> HSCube {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (h, w, bands) = (spec.height, spec.width, spec.bands);
    let plane = h * w;
    let background = draw(&mut rng, spec.background);
    let mut acc = vec![background; bands * plane];
    let side = h.min(w) as f64;
    let n_blobs = {
        let (lo, hi) = spec.blobs_per_image;
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    for _ in 0..n_blobs {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let radius = draw(&mut rng, spec.radius) * side;
        let mu = draw(&mut rng, spec.center_band);
        let sigma = draw(&mut rng, spec.spectral_width);
        let amp = draw(&mut rng, spec.amplitude);
        let profile: Vec<f64> = (0..bands)
            .map(|b| {
                let d = b as f64 - mu;
                amp * (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 + 0.5 - cy) / radius;
                let dx = (x as f64 + 0.5 - cx) / radius;
                let a = bump(dy * dy + dx * dx);
                if a > 0.0 {
                    for (b, p) in profile.iter().enumerate() {
                        acc[b * plane + y * w + x] += a * p;
                    }
                }
            }
        }
    }
    let data = acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    HSCube {
        bands,
        height: h,
        width: w,
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    /// Relative to the manifest's directory.
    pub rgb: PathBuf,
    pub cube: PathBuf,
}

/// Line-delimited `index,rgb-path,cube-path` records after a `#` header
/// carrying the generator seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub seed: Option<u64>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# hsrecon manifest");
        if let Some(seed) = self.seed {
            let _ = write!(s, " seed={seed}");
        }
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.index, e.rgb.display(), e.cube.display());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(header) = line.strip_prefix('#') {
                for tok in header.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("seed=") {
                        seed = v.parse().ok();
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [index, rgb, cube] = fields[..] else {
                return Err(Error::Data(format!(
                    "manifest line {}: expected index,rgb,cube",
                    lineno + 1
                )));
            };
            let index = index.parse().map_err(|_| {
                Error::Data(format!("manifest line {}: bad index {index:?}", lineno + 1))
            })?;
            entries.push(ManifestEntry {
                index,
                rgb: rgb.into(),
                cube: cube.into(),
            });
        }
        Ok(Self { seed, entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Writes `count` cube/RGB pairs plus `manifest.txt` into `out_dir`;
/// returns the manifest path.
pub fn generate_dataset(
    spec: &SynthSpec,
    resp: &CameraResponse,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        seed: Some(spec.seed),
        entries: Vec::with_capacity(spec.count),
    };
    for index in 0..spec.count {
        let cube = generate_cube(spec, index);
        let rgb = project_rgb(&cube, resp)?;
        let entry = ManifestEntry {
            index,
            rgb: format!("rgb_{index:04}.png").into(),
            cube: format!("cube_{index:04}.hsc").into(),
        };
        write_cube(&cube, dir.join(&entry.cube))?;
        write_rgb(&rgb, dir.join(&entry.rgb))?;
        manifest.entries.push(entry);
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text())?;
    Ok(path)
}

/// An RGB input and its hyperspectral target, both `(1, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: Tensor<f32>,
    pub cube: Tensor<f32>,
}

impl Sample {
    /// Pairs a cube with its exact (unquantized) projection.
    pub fn from_cube(cube: &HSCube, resp: &CameraResponse) -> Result<Self> {
        Ok(Self {
            rgb: project_rgb(cube, resp)?.to_tensor(),
            cube: cube.to_tensor(),
        })
    }

    pub fn height(&self) -> usize {
        self.rgb.shape().h
    }

    pub fn width(&self) -> usize {
        self.rgb.shape().w
    }
}

/// Loads every manifest pair; RGB comes from the stored 8-bit images.
pub fn load_samples(manifest_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| {
            let cube = read_cube(dir.join(&e.cube))?;
            let rgb = read_rgb(dir.join(&e.rgb))?;
            if (rgb.height, rgb.width) != (cube.height, cube.width) {
                return Err(Error::Data(format!(
                    "pair {}: rgb {}x{} vs cube {}x{}",
                    e.index, rgb.height, rgb.width, cube.height, cube.width
                )));
            }
            Ok(Sample {
                rgb: rgb.to_tensor(),
                cube: cube.to_tensor(),
            })
        })
        .collect()
}
