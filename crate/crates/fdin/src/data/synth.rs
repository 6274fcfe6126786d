//! Deterministic synthetic inpainted-clip generator. Each clip is a static
//! textured background with a moving elliptical object; the object's region
//! is overwritten per frame by one of three fill methods, and the ground
//! truth mask is exactly the set of 8-bit pixels the fill changed.
//!
//! The three fills target the artifact families a frequency-domain detector
//! keys on: Gaussian-blur fill and harmonic diffusion fill produce
//! low-frequency smoothing, temporal copy produces copy periodicity.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRecord, Split};
use super::io::{write_frame_png, write_mask_png};
use crate::error::{FdinError, Result};

const MAX_GEOMETRY_ATTEMPTS: usize = 100;
const AREA_FRACTION_BOUNDS: (f64, f64) = (0.05, 0.40);
/// Frames to look back for the temporal-copy fill (wrapping around at the
/// start of the clip).
const TEMPORAL_COPY_LAG: usize = 4;
const DIFFUSION_TOL: f32 = 1e-4;
const DIFFUSION_MAX_SWEEPS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMethod {
    BlurFill,
    DiffusionFill,
    TemporalCopy,
}

impl FillMethod {
    pub const ALL: [FillMethod; 3] = [
        FillMethod::BlurFill,
        FillMethod::DiffusionFill,
        FillMethod::TemporalCopy,
    ];
}

impl fmt::Display for FillMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillMethod::BlurFill => write!(f, "blur_fill"),
            FillMethod::DiffusionFill => write!(f, "diffusion_fill"),
            FillMethod::TemporalCopy => write!(f, "temporal_copy"),
        }
    }
}

impl FromStr for FillMethod {
    type Err = FdinError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur_fill" => Ok(FillMethod::BlurFill),
            "diffusion_fill" => Ok(FillMethod::DiffusionFill),
            "temporal_copy" => Ok(FillMethod::TemporalCopy),
            other => Err(FdinError::Config(format!(
                "unknown fill method {other:?} (expected blur_fill, diffusion_fill, or temporal_copy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub seed: u64,
    pub n_clips: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub method: FillMethod,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.h < 16 || self.w < 16 {
            return Err(FdinError::Config(format!(
                "synthetic frames need h, w >= 16, got {}x{}",
                self.h, self.w
            )));
        }
        if self.t == 0 {
            return Err(FdinError::Config("clips need at least one frame".into()));
        }
        if self.method == FillMethod::TemporalCopy && self.t < 2 {
            return Err(FdinError::Config(
                "temporal_copy needs clips of at least 2 frames".into(),
            ));
        }
        if self.n_clips == 0 {
            return Err(FdinError::Config("n_clips must be at least 1".into()));
        }
        Ok(())
    }
}

/// One generated clip, kept in 8-bit space so the mask/diff contract holds
/// exactly on the files written to disk.
pub struct SynthClip {
    /// Pristine frames `(3, H, W)` before inpainting.
    pub original: Vec<Array3<u8>>,
    /// Frames with the object region overwritten by the fill method.
    pub inpainted: Vec<Array3<u8>>,
    /// `(T, H, W)` in {0, 1}: exactly the pixels where original and
    /// inpainted frames differ in any channel.
    pub masks: Array3<u8>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

fn bilinear_field(rng: &mut ChaCha8Rng, h: usize, w: usize, grid: usize, lo: f32, hi: f32) -> Array2<f32> {
    let coarse = Array2::from_shape_fn((grid, grid), |_| rng.gen_range(lo..hi));
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f32 / h as f32 * (grid - 1) as f32;
        let fx = x as f32 / w as f32 * (grid - 1) as f32;
        let (y0, x0) = (fy as usize, fx as usize);
        let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
        let (ay, ax) = (fy - y0 as f32, fx - x0 as f32);
        coarse[[y0, x0]] * (1.0 - ay) * (1.0 - ax)
            + coarse[[y1, x0]] * ay * (1.0 - ax)
            + coarse[[y0, x1]] * (1.0 - ay) * ax
            + coarse[[y1, x1]] * ay * ax
    })
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<f32> {
    let mut bg = Array3::zeros((3, h, w));
    for c in 0..3 {
        let field = bilinear_field(rng, h, w, 5, 0.2, 0.8);
        bg.index_axis_mut(ndarray::Axis(0), c).assign(&field);
    }
    // two mid-frequency gratings shared across channels
    for _ in 0..2 {
        let amp: f32 = rng.gen_range(0.02..0.06);
        let fx: f32 = rng.gen_range(0.15..0.6);
        let fy: f32 = rng.gen_range(0.15..0.6);
        let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    bg[[c, y, x]] += amp * (fx * x as f32 + fy * y as f32 + phase).sin();
                }
            }
        }
    }
    // static fine-grain texture
    for v in bg.iter_mut() {
        *v = (*v + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
    }
    bg
}

fn quantize(frame: &Array3<f32>) -> Array3<u8> {
    frame.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Reflecting 1D motion inside [lo, hi].
fn bounce(mut pos: f64, mut vel: f64, lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(pos);
        pos += vel;
        if pos < lo {
            pos = 2.0 * lo - pos;
            vel = -vel;
        }
        if pos > hi {
            pos = 2.0 * hi - pos;
            vel = -vel;
        }
        pos = pos.clamp(lo, hi);
    }
    out
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (2.0 * sigma).ceil() as i64;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(frame: &Array3<f32>, sigma: f32) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let mut tmp = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x as i64 + i as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += kv * frame[[ci, y, xx]];
                }
                tmp[[ci, y, x]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y as i64 + i as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp[[ci, yy, x]];
                }
                out[[ci, y, x]] = acc;
            }
        }
    }
    out
}

/// Harmonic fill: Gauss-Seidel sweeps of 4-neighbor averaging inside the
/// region, with original pixels as boundary values, until the largest
/// update falls below `DIFFUSION_TOL`.
fn diffusion_fill(frame: &mut Array3<f32>, region: &Array2<bool>) {
    let (c, h, w) = frame.dim();
    let cells: Vec<(usize, usize)> = region
        .indexed_iter()
        .filter_map(|((y, x), &inside)| inside.then_some((y, x)))
        .collect();
    if cells.is_empty() {
        return;
    }
    for ci in 0..c {
        // seed the interior with the boundary mean
        let mut boundary_sum = 0.0f32;
        let mut boundary_n = 0usize;
        for &(y, x) in &cells {
            for (ny, nx) in neighbors(y, x, h, w) {
                if !region[[ny, nx]] {
                    boundary_sum += frame[[ci, ny, nx]];
                    boundary_n += 1;
                }
            }
        }
        let seed = if boundary_n > 0 {
            boundary_sum / boundary_n as f32
        } else {
            0.5
        };
        for &(y, x) in &cells {
            frame[[ci, y, x]] = seed;
        }
        for _ in 0..DIFFUSION_MAX_SWEEPS {
            let mut max_delta = 0.0f32;
            for &(y, x) in &cells {
                let mut acc = 0.0f32;
                let mut n = 0usize;
                for (ny, nx) in neighbors(y, x, h, w) {
                    acc += frame[[ci, ny, nx]];
                    n += 1;
                }
                let new = acc / n as f32;
                max_delta = max_delta.max((new - frame[[ci, y, x]]).abs());
                frame[[ci, y, x]] = new;
            }
            if max_delta < DIFFUSION_TOL {
                break;
            }
        }
    }
}

fn neighbors(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut v = Vec::with_capacity(4);
    if y > 0 {
        v.push((y - 1, x));
    }
    if y + 1 < h {
        v.push((y + 1, x));
    }
    if x > 0 {
        v.push((y, x - 1));
    }
    if x + 1 < w {
        v.push((y, x + 1));
    }
    v.into_iter()
}

/// One generation attempt; `None` means the geometry failed the per-frame
/// area-fraction bounds and the caller should redraw.
fn try_generate(
    rng: &mut ChaCha8Rng,
    t: usize,
    h: usize,
    w: usize,
    method: FillMethod,
) -> Option<SynthClip> {
    let bg = background(rng, h, w);

    // object geometry: area fraction inside the bounds with margin
    let area_frac: f64 = rng.gen_range(0.08..0.30);
    let aspect: f64 = rng.gen_range(0.6..1.6);
    let area = area_frac * (h * w) as f64;
    let ry = (area / (std::f64::consts::PI * aspect)).sqrt();
    let rx = aspect * ry;
    if 2.0 * rx + 4.0 >= w as f64 || 2.0 * ry + 4.0 >= h as f64 {
        return None;
    }
    let cx0 = rng.gen_range(rx + 2.0..w as f64 - rx - 2.0);
    let cy0 = rng.gen_range(ry + 2.0..h as f64 - ry - 2.0);
    let speed = rng.gen_range(0.8..3.0);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let xs = bounce(cx0, speed * angle.cos(), rx + 2.0, w as f64 - rx - 2.0, t);
    let ys = bounce(cy0, speed * angle.sin(), ry + 2.0, h as f64 - ry - 2.0, t);

    // object appearance in object-local coordinates
    let color = [
        rng.gen_range(0.0f32..1.0),
        rng.gen_range(0.0f32..1.0),
        rng.gen_range(0.0f32..1.0),
    ];
    let stripe_fx: f32 = rng.gen_range(0.3..1.0);
    let stripe_fy: f32 = rng.gen_range(0.3..1.0);
    let stripe_phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);

    let mut original_f = Vec::with_capacity(t);
    let mut regions = Vec::with_capacity(t);
    for ti in 0..t {
        let e = Ellipse {
            cx: xs[ti],
            cy: ys[ti],
            rx,
            ry,
        };
        let mut frame = bg.clone();
        let mut region = Array2::from_elem((h, w), false);
        for y in 0..h {
            for x in 0..w {
                if e.contains(y, x) {
                    region[[y, x]] = true;
                    let ly = y as f32 - e.cy as f32;
                    let lx = x as f32 - e.cx as f32;
                    let stripe =
                        0.12 * (stripe_fx * lx + stripe_fy * ly + stripe_phase).sin();
                    for c in 0..3 {
                        frame[[c, y, x]] = (color[c] + stripe).clamp(0.0, 1.0);
                    }
                }
            }
        }
        original_f.push(frame);
        regions.push(region);
    }
    let original: Vec<Array3<u8>> = original_f.iter().map(quantize).collect();

    let mut inpainted = Vec::with_capacity(t);
    for ti in 0..t {
        let mut frame = original[ti].mapv(|v| v as f32 / 255.0);
        let region = &regions[ti];
        match method {
            FillMethod::BlurFill => {
                let blurred = gaussian_blur(&frame, 4.0);
                for ((y, x), &inside) in region.indexed_iter() {
                    if inside {
                        for c in 0..3 {
                            frame[[c, y, x]] = blurred[[c, y, x]];
                        }
                    }
                }
            }
            FillMethod::DiffusionFill => diffusion_fill(&mut frame, region),
            FillMethod::TemporalCopy => {
                // 4 steps earlier, wrapping at the clip start; when the
                // wrap would land on the frame itself, shorten the lag
                let lag = match TEMPORAL_COPY_LAG % t {
                    0 => t - 1,
                    l => l,
                };
                let src = &original[(ti + t - lag) % t];
                for ((y, x), &inside) in region.indexed_iter() {
                    if inside {
                        for c in 0..3 {
                            frame[[c, y, x]] = src[[c, y, x]] as f32 / 255.0;
                        }
                    }
                }
            }
        }
        inpainted.push(quantize(&frame));
    }

    let mut masks = Array3::<u8>::zeros((t, h, w));
    for ti in 0..t {
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                let differs = (0..3).any(|c| original[ti][[c, y, x]] != inpainted[ti][[c, y, x]]);
                if differs {
                    masks[[ti, y, x]] = 1;
                    count += 1;
                }
            }
        }
        let frac = count as f64 / (h * w) as f64;
        if !(AREA_FRACTION_BOUNDS.0..=AREA_FRACTION_BOUNDS.1).contains(&frac) {
            return None;
        }
    }
    Some(SynthClip {
        original,
        inpainted,
        masks,
    })
}

/// Generate one clip deterministically. Each clip index gets its own
/// ChaCha stream of the master seed, so clips are independent of
/// generation order.
pub fn synth_clip(
    seed: u64,
    clip_idx: usize,
    t: usize,
    h: usize,
    w: usize,
    method: FillMethod,
) -> Result<SynthClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(clip_idx as u64 + 1);
    for _ in 0..MAX_GEOMETRY_ATTEMPTS {
        if let Some(clip) = try_generate(&mut rng, t, h, w, method) {
            return Ok(clip);
        }
    }
    Err(FdinError::SynthRejection {
        clip: clip_idx,
        attempts: MAX_GEOMETRY_ATTEMPTS,
    })
}

/// Generate `n_clips` clips under `out_dir` (frames, masks, and a
/// `manifest.tsv`), returning the manifest. Byte-identical for identical
/// arguments.
pub fn synth_generate(params: &SynthParams, out_dir: &Path, split: Split) -> Result<DatasetManifest> {
    params.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| FdinError::io(format!("create {}", out_dir.display()), e))?;
    let records: Vec<ManifestRecord> = (0..params.n_clips)
        .into_par_iter()
        .map(|i| -> Result<ManifestRecord> {
            let clip = synth_clip(params.seed, i, params.t, params.h, params.w, params.method)?;
            let clip_id = format!("clip_{i:03}");
            let frame_dir = out_dir.join(&clip_id).join("frames");
            let mask_dir = out_dir.join(&clip_id).join("masks");
            std::fs::create_dir_all(&frame_dir)
                .map_err(|e| FdinError::io(format!("create {}", frame_dir.display()), e))?;
            std::fs::create_dir_all(&mask_dir)
                .map_err(|e| FdinError::io(format!("create {}", mask_dir.display()), e))?;
            for ti in 0..params.t {
                write_frame_png(
                    &frame_dir.join(format!("frame_{ti:05}.png")),
                    &clip.inpainted[ti],
                )?;
                let plane = clip.masks.index_axis(ndarray::Axis(0), ti).to_owned();
                write_mask_png(&mask_dir.join(format!("mask_{ti:05}.png")), &plane)?;
            }
            Ok(ManifestRecord {
                clip_id,
                frame_dir,
                mask_dir,
                frame_count: params.t,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { records };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
