//! Synthetic paired degradations (Gaussian blur, rain streaks), clean-image
//! generation, PNG dataset layout, and deterministic patch sampling.
//!
//! Images live as (3,H,W) float tensors in [0,1]; datasets are two sibling
//! directories `input/` and `target/` with identical PNG filenames plus a
//! `spec.txt` describing how the inputs were degraded.

use std::fs;
use std::path::Path;

use ndarray::{Array2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    Blur,
    Rain,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DegradationSpec {
    pub mode: DegradationMode,
    /// Blur: sigma sampled uniformly from this range.
    pub blur_sigma: (f64, f64),
    /// Blur: odd kernel extent.
    pub blur_kernel: usize,
    pub rain_count: (usize, usize),
    pub rain_angle_deg: (f64, f64),
    pub rain_length: (usize, usize),
    pub rain_intensity: (f64, f64),
    /// Additive Gaussian noise; 0 disables it.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            mode: DegradationMode::Blur,
            blur_sigma: (1.0, 2.0),
            blur_kernel: 9,
            rain_count: (8, 24),
            rain_angle_deg: (60.0, 120.0),
            rain_length: (8, 20),
            rain_intensity: (0.2, 0.6),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0 <= r.1;
        if !ordered(self.blur_sigma) || self.blur_sigma.0 < 0.0 {
            return Err(Error::Config("blur_sigma range is empty or negative".into()));
        }
        if self.blur_kernel.is_multiple_of(2) || self.blur_kernel == 0 {
            return Err(Error::Config("blur_kernel must be odd".into()));
        }
        if self.rain_count.0 > self.rain_count.1
            || self.rain_length.0 > self.rain_length.1
            || !ordered(self.rain_angle_deg)
            || !ordered(self.rain_intensity)
        {
            return Err(Error::Config("rain parameter range is empty".into()));
        }
        if self.rain_intensity.0 < 0.0 {
            return Err(Error::Config("rain intensity must be nonnegative".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Deterministic RNG for a (seed, step) pair; used everywhere a stream of
/// work items must be reproducible and resumable mid-sequence.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn sample_range_f(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..r.1)
    }
}

fn sample_range_u(rng: &mut ChaCha8Rng, r: (usize, usize)) -> usize {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

/// Normalized Gaussian kernel; sigma 0 degenerates to a centered delta.
pub fn gaussian_kernel(sigma: f64, k: usize) -> Array2<f64> {
    assert!(k % 2 == 1);
    let half = (k / 2) as isize;
    let mut w = Array2::zeros((k, k));
    if sigma == 0.0 {
        w[[half as usize, half as usize]] = 1.0;
        return w;
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            let di = i as isize - half;
            let dj = j as isize - half;
            let v = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
            w[[i, j]] = v;
            sum += v;
        }
    }
    w.mapv_inplace(|v| v / sum);
    w
}

fn convolve_replicate(img: &Tensor, kernel: &Array2<f64>) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let k = kernel.shape()[0];
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(IxDyn(&[c, h, w]));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for u in 0..k {
                    for v in 0..k {
                        let si = (i as isize + u as isize - half).clamp(0, h as isize - 1);
                        let sj = (j as isize + v as isize - half).clamp(0, w as isize - 1);
                        acc += kernel[[u, v]] * img[[ch, si as usize, sj as usize]];
                    }
                }
                out[[ch, i, j]] = acc;
            }
        }
    }
    out
}

fn gaussian_noise(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn add_noise_and_clamp(mut img: Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if sigma > 0.0 {
        for v in img.iter_mut() {
            *v += sigma * gaussian_noise(rng);
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Gaussian blur with a sampled sigma, replicate padding, optional noise.
pub fn synth_blur(clean: &Tensor, spec: &DegradationSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let sigma = sample_range_f(rng, spec.blur_sigma);
    let kernel = gaussian_kernel(sigma, spec.blur_kernel);
    let blurred = convolve_replicate(clean, &kernel);
    add_noise_and_clamp(blurred, spec.noise_sigma, rng)
}

/// Additive bright streaks with sampled count/angle/length/intensity.
pub fn synth_rain(clean: &Tensor, spec: &DegradationSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let (h, w) = (clean.shape()[1], clean.shape()[2]);
    let mut out = clean.clone();
    let count = sample_range_u(rng, spec.rain_count);
    for _ in 0..count {
        let angle = sample_range_f(rng, spec.rain_angle_deg).to_radians();
        let len = sample_range_u(rng, spec.rain_length).max(1);
        let intensity = sample_range_f(rng, spec.rain_intensity);
        let ci = rng.gen_range(0..h) as f64;
        let cj = rng.gen_range(0..w) as f64;
        let (di, dj) = (angle.sin(), angle.cos());
        for t in 0..len {
            let ti = ci + di * t as f64 - di * len as f64 / 2.0;
            let tj = cj + dj * t as f64 - dj * len as f64 / 2.0;
            let (pi, pj) = (ti.round() as isize, tj.round() as isize);
            if pi < 0 || pj < 0 || pi >= h as isize || pj >= w as isize {
                continue;
            }
            for c in 0..3 {
                out[[c, pi as usize, pj as usize]] += intensity;
            }
        }
    }
    add_noise_and_clamp(out, spec.noise_sigma, rng)
}

pub fn degrade(clean: &Tensor, spec: &DegradationSpec, rng: &mut ChaCha8Rng) -> Tensor {
    match spec.mode {
        DegradationMode::Blur => synth_blur(clean, spec, rng),
        DegradationMode::Rain => synth_rain(clean, spec, rng),
    }
}

/// Structured clean image: smooth color gradient plus random soft-edged
/// rectangles and disks, so restoration has edges and flats to recover.
pub fn generate_clean(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let mut img = Tensor::zeros(IxDyn(&[3, h, w]));
    let base: [f64; 3] = [rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6)];
    let grad: [f64; 3] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    let horizontal: bool = rng.gen();
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let t = if horizontal {
                    j as f64 / w.max(1) as f64
                } else {
                    i as f64 / h.max(1) as f64
                };
                img[[c, i, j]] = base[c] + grad[c] * t;
            }
        }
    }
    let shapes = rng.gen_range(4..9);
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let ci = rng.gen_range(0..h);
        let cj = rng.gen_range(0..w);
        let r = rng.gen_range((h.min(w) / 10).max(2)..(h.min(w) / 3).max(3));
        let disk: bool = rng.gen();
        for i in 0..h {
            for j in 0..w {
                let inside = if disk {
                    let di = i as f64 - ci as f64;
                    let dj = j as f64 - cj as f64;
                    di * di + dj * dj <= (r * r) as f64
                } else {
                    i.abs_diff(ci) <= r && j.abs_diff(cj) <= r
                };
                if inside {
                    for c in 0..3 {
                        img[[c, i, j]] = 0.5 * img[[c, i, j]] + 0.5 * color[c];
                    }
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Repeated 2x2 averaging; level 0 is the input itself.
pub fn pyramid_tensor(img: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let div = 1 << (levels - 1);
    if h % div != 0 || w % div != 0 {
        return Err(Error::Input(format!(
            "image {h}x{w} not divisible by {div} for a {levels}-level pyramid"
        )));
    }
    let mut out = vec![img.clone()];
    for l in 1..levels {
        let prev = &out[l - 1];
        let (ph, pw) = (prev.shape()[1] / 2, prev.shape()[2] / 2);
        let mut next = Tensor::zeros(IxDyn(&[c, ph, pw]));
        for ch in 0..c {
            for i in 0..ph {
                for j in 0..pw {
                    next[[ch, i, j]] = 0.25
                        * (prev[[ch, 2 * i, 2 * j]]
                            + prev[[ch, 2 * i, 2 * j + 1]]
                            + prev[[ch, 2 * i + 1, 2 * j]]
                            + prev[[ch, 2 * i + 1, 2 * j + 1]]);
                }
            }
        }
        out.push(next);
    }
    Ok(out)
}

// --- PNG IO ------------------------------------------------------------

pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Tensor::zeros(IxDyn(&[3, h as usize, w as usize]));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

pub fn save_png(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img[[c, y as usize, x as usize]].clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path)
        .map_err(|e| Error::Input(format!("cannot write image {}: {e}", path.display())))
}

// --- dataset layout -----------------------------------------------------

pub struct Dataset {
    pub names: Vec<String>,
    /// (degraded, clean) pairs, index-aligned with `names`.
    pub pairs: Vec<(Tensor, Tensor)>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let input_dir = dir.join("input");
        let target_dir = dir.join("target");
        if !input_dir.is_dir() || !target_dir.is_dir() {
            return Err(Error::Input(format!(
                "dataset at {} must contain input/ and target/ directories",
                dir.display()
            )));
        }
        let mut names: Vec<String> = fs::read_dir(&input_dir)
            .map_err(|e| Error::io(&input_dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::Input(format!("no PNG files in {}", input_dir.display())));
        }
        let mut pairs = Vec::with_capacity(names.len());
        for name in &names {
            let tpath = target_dir.join(name);
            if !tpath.is_file() {
                return Err(Error::Input(format!("missing target for {name}")));
            }
            let inp = load_png(&input_dir.join(name))?;
            let tgt = load_png(&tpath)?;
            if inp.shape() != tgt.shape() {
                return Err(Error::Input(format!("size mismatch for {name}")));
            }
            pairs.push((inp, tgt));
        }
        Ok(Dataset { names, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Writes `count` synthetic pairs of extent `size` plus `spec.txt`.
pub fn write_dataset(dir: &Path, count: usize, size: usize, spec: &DegradationSpec) -> Result<()> {
    spec.validate()?;
    let input_dir = dir.join("input");
    let target_dir = dir.join("target");
    fs::create_dir_all(&input_dir).map_err(|e| Error::io(&input_dir, e))?;
    fs::create_dir_all(&target_dir).map_err(|e| Error::io(&target_dir, e))?;
    for idx in 0..count {
        let mut rng = step_rng(spec.seed, idx as u64);
        let clean = generate_clean(&mut rng, size, size);
        let degraded = degrade(&clean, spec, &mut rng);
        let name = format!("pair_{idx:04}.png");
        save_png(&target_dir.join(&name), &clean)?;
        save_png(&input_dir.join(&name), &degraded)?;
    }
    let spec_path = dir.join("spec.txt");
    let text = toml::to_string_pretty(spec)
        .map_err(|e| Error::Config(format!("cannot serialize degradation spec: {e}")))?;
    fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(())
}

pub fn read_spec(dir: &Path) -> Result<DegradationSpec> {
    let path = dir.join("spec.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("bad spec.txt: {e}")))
}

// --- patch sampling -----------------------------------------------------

pub struct PatchSampler<'a> {
    dataset: &'a Dataset,
    patch: usize,
    flips: bool,
}

impl<'a> PatchSampler<'a> {
    pub fn new(dataset: &'a Dataset, patch: usize, flips: bool) -> Result<Self> {
        if !patch.is_multiple_of(8) {
            return Err(Error::Input(format!("patch size {patch} not divisible by 8")));
        }
        for (name, (inp, _)) in dataset.names.iter().zip(dataset.pairs.iter()) {
            if inp.shape()[1] < patch || inp.shape()[2] < patch {
                return Err(Error::Input(format!("{name} smaller than patch size {patch}")));
            }
        }
        Ok(PatchSampler { dataset, patch, flips })
    }

    /// A (degraded, clean) batch of aligned random crops for a training
    /// step, a pure function of (seed, step).
    pub fn batch(&self, seed: u64, step: u64, batch_size: usize) -> (Tensor, Tensor, Vec<String>) {
        let p = self.patch;
        let mut inp = Tensor::zeros(IxDyn(&[batch_size, 3, p, p]));
        let mut tgt = Tensor::zeros(IxDyn(&[batch_size, 3, p, p]));
        let mut ids = Vec::with_capacity(batch_size);
        let mut rng = step_rng(seed, step);
        for b in 0..batch_size {
            let idx = rng.gen_range(0..self.dataset.len());
            let (din, dtg) = &self.dataset.pairs[idx];
            let (h, w) = (din.shape()[1], din.shape()[2]);
            let i0 = if h == p { 0 } else { rng.gen_range(0..=h - p) };
            let j0 = if w == p { 0 } else { rng.gen_range(0..=w - p) };
            let flip_h = self.flips && rng.gen::<bool>();
            let flip_v = self.flips && rng.gen::<bool>();
            for c in 0..3 {
                for i in 0..p {
                    for j in 0..p {
                        let si = if flip_v { i0 + p - 1 - i } else { i0 + i };
                        let sj = if flip_h { j0 + p - 1 - j } else { j0 + j };
                        inp[[b, c, i, j]] = din[[c, si, sj]];
                        tgt[[b, c, i, j]] = dtg[[c, si, sj]];
                    }
                }
            }
            ids.push(format!("{}@{},{}", self.dataset.names[idx], i0, j0));
        }
        (inp, tgt, ids)
    }
}
