//! Synthetic audio-visual clip generator with controlled artifact injection.
//!
//! Real clips couple a procedural "face" to a synthesized waveform: the mouth
//! region darkens with the audio amplitude envelope, so the two streams share
//! semantics. Injectors plant three artifact families: a visual blending seam,
//! an audio spectral spike with amplitude quantization, and a cross-stream
//! temporal misalignment that leaves each stream clean in isolation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: &str = "cad-manifest-1";
pub const CLIP_META_FORMAT_VERSION: &str = "cad-clip-meta-1";

/// Forgery category of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Real,
    VisualOnly,
    AudioOnly,
    BothSpecific,
    Misaligned,
    Combined,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Real,
        Category::VisualOnly,
        Category::AudioOnly,
        Category::BothSpecific,
        Category::Misaligned,
        Category::Combined,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Category::Real => "real",
            Category::VisualOnly => "visual",
            Category::AudioOnly => "audio",
            Category::BothSpecific => "both",
            Category::Misaligned => "misaligned",
            Category::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Result<Category> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(Category::Real),
            "visual" | "visual_only" => Ok(Category::VisualOnly),
            "audio" | "audio_only" => Ok(Category::AudioOnly),
            "both" | "both_specific" => Ok(Category::BothSpecific),
            "misaligned" => Ok(Category::Misaligned),
            "combined" => Ok(Category::Combined),
            other => Err(Error::InvalidArgument(format!("unknown category {other}"))),
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Category::Real => "REAL",
            Category::VisualOnly => "VISUAL_ONLY",
            Category::AudioOnly => "AUDIO_ONLY",
            Category::BothSpecific => "BOTH_SPECIFIC",
            Category::Misaligned => "MISALIGNED",
            Category::Combined => "COMBINED",
        };
        f.write_str(s)
    }
}

/// Ground-truth label plus the injection parameters actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeryLabel {
    pub category: Category,
    pub is_fake: bool,
    pub artifact_params: BTreeMap<String, f64>,
}

impl ForgeryLabel {
    pub fn real() -> Self {
        ForgeryLabel { category: Category::Real, is_fake: false, artifact_params: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_fake != (self.category != Category::Real) {
            return Err(Error::InvalidArgument(format!(
                "label says is_fake={} but category is {}",
                self.is_fake, self.category
            )));
        }
        if self.category == Category::Misaligned
            && self.artifact_params.get("offset_frames").map(|v| *v == 0.0).unwrap_or(true)
        {
            return Err(Error::InvalidArgument(
                "MISALIGNED label requires a nonzero offset_frames parameter".into(),
            ));
        }
        Ok(())
    }
}

/// Tensor geometry shared by all clips of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipGeometry {
    pub frames: usize,
    pub frame_size: usize,
    pub channels: usize,
    pub audio_len: usize,
    pub sample_rate: f64,
}

impl Default for ClipGeometry {
    fn default() -> Self {
        ClipGeometry { frames: 16, frame_size: 32, channels: 3, audio_len: 8000, sample_rate: 8000.0 }
    }
}

impl ClipGeometry {
    pub fn frame_len(&self) -> usize {
        self.frame_size * self.frame_size * self.channels
    }

    pub fn frames_len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn samples_per_frame(&self) -> usize {
        self.audio_len / self.frames
    }
}

/// One synthetic sample: frame stack in [0,1], waveform in [-1,1], label.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaClip {
    pub clip_id: String,
    pub seed: u64,
    pub geom: ClipGeometry,
    pub frames: Vec<f32>,
    pub waveform: Vec<f32>,
    pub label: ForgeryLabel,
}

impl MediaClip {
    pub fn pixel(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        let g = &self.geom;
        self.frames[((t * g.frame_size + y) * g.frame_size + x) * g.channels + c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.geom.frames_len() {
            return Err(Error::Shape(format!(
                "frame tensor has {} values, expected {}",
                self.frames.len(),
                self.geom.frames_len()
            )));
        }
        if self.waveform.len() != self.geom.audio_len {
            return Err(Error::Shape(format!(
                "waveform has {} samples, expected {}",
                self.waveform.len(),
                self.geom.audio_len
            )));
        }
        if self.frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("frame values outside [0,1]".into()));
        }
        if self.waveform.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Numeric("waveform values outside [-1,1]".into()));
        }
        self.label.validate()
    }
}

/// Per-category clip counts for a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoryCounts {
    pub real: usize,
    pub visual_only: usize,
    pub audio_only: usize,
    pub both_specific: usize,
    pub misaligned: usize,
    pub combined: usize,
}

impl Default for CategoryCounts {
    fn default() -> Self {
        // 400 clips balanced over the six categories
        CategoryCounts {
            real: 67,
            visual_only: 67,
            audio_only: 67,
            both_specific: 67,
            misaligned: 66,
            combined: 66,
        }
    }
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.real + self.visual_only + self.audio_only + self.both_specific + self.misaligned + self.combined
    }

    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Real => self.real,
            Category::VisualOnly => self.visual_only,
            Category::AudioOnly => self.audio_only,
            Category::BothSpecific => self.both_specific,
            Category::Misaligned => self.misaligned,
            Category::Combined => self.combined,
        }
    }
}

/// Full generator configuration; a dataset is a pure function of this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub geometry: ClipGeometry,
    pub counts: CategoryCounts,
    pub seed: u64,
    /// visual seam strength range (uniform per clip)
    pub visual_strength: [f64; 2],
    /// audio spike strength range (uniform per clip)
    pub audio_strength: [f64; 2],
    /// misalignment offset magnitude range in frames (inclusive)
    pub offset_frames: [i64; 2],
    pub spike_freq_hz: f64,
    pub pixel_noise: f64,
    pub audio_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            geometry: ClipGeometry::default(),
            counts: CategoryCounts::default(),
            seed: 7,
            visual_strength: [0.3, 1.0],
            audio_strength: [0.25, 1.0],
            offset_frames: [3, 8],
            spike_freq_hz: 1812.5,
            pixel_noise: 0.02,
            audio_noise: 0.005,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.frames == 0 || g.frame_size < 8 || g.channels == 0 || g.audio_len == 0 {
            return Err(Error::Config("geometry fields must be positive (frame_size >= 8)".into()));
        }
        if g.audio_len % g.frames != 0 {
            return Err(Error::Config(format!(
                "audio_len {} must be divisible by frames {}",
                g.audio_len, g.frames
            )));
        }
        for (name, [lo, hi]) in [("visual_strength", self.visual_strength), ("audio_strength", self.audio_strength)] {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] must sit inside (0, 1]")));
            }
        }
        let [olo, ohi] = self.offset_frames;
        let half = (g.frames / 2) as i64;
        if !(1 <= olo && olo <= ohi && ohi <= half) {
            return Err(Error::Config(format!(
                "offset_frames range [{olo}, {ohi}] must sit inside [1, {half}]"
            )));
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Seed for the clip at `index` within a dataset.
pub fn clip_seed(dataset_seed: u64, index: usize) -> u64 {
    splitmix(dataset_seed ^ splitmix(index as u64))
}

struct ClipLatents {
    bg: [f64; 3],
    grad: [f64; 2],
    face_cx: f64,
    face_cy: f64,
    face_r: f64,
    motion_amp: f64,
    motion_freq: f64,
    motion_phase: f64,
    carrier_hz: f64,
    carrier_phase: f64,
    env_f1: f64,
    env_p1: f64,
    env_f2: f64,
    env_p2: f64,
}

impl ClipLatents {
    fn draw(rng: &mut ChaCha8Rng, geom: &ClipGeometry) -> Self {
        let n = geom.frame_size as f64;
        ClipLatents {
            bg: [rng.gen_range(0.15..0.40), rng.gen_range(0.15..0.40), rng.gen_range(0.20..0.45)],
            grad: [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)],
            face_cx: n * 0.5 + rng.gen_range(-3.0..3.0),
            face_cy: n * 0.48 + rng.gen_range(-3.0..3.0),
            face_r: n * rng.gen_range(0.26..0.32),
            motion_amp: rng.gen_range(0.5..1.5),
            motion_freq: rng.gen_range(0.5..1.5),
            motion_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            carrier_hz: rng.gen_range(150.0..450.0),
            carrier_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            env_f1: rng.gen_range(1.7..2.3),
            env_p1: rng.gen_range(0.0..std::f64::consts::TAU),
            env_f2: rng.gen_range(0.6..1.1),
            env_p2: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Shared amplitude envelope in [0.12, 1.0] at time `t` seconds.
    fn envelope(&self, t: f64) -> f64 {
        let a = 0.5 + 0.5 * (std::f64::consts::TAU * self.env_f1 * t + self.env_p1).sin();
        let b = 0.6 + 0.4 * (std::f64::consts::TAU * self.env_f2 * t + self.env_p2).sin();
        0.12 + 0.88 * a * b
    }
}

/// Generate a coherent "real" clip; deterministic per (config geometry, seed).
pub fn generate_real(cfg: &GeneratorConfig, seed: u64) -> MediaClip {
    let geom = cfg.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat = ClipLatents::draw(&mut rng, &geom);
    let sr = geom.sample_rate;
    let duration = geom.audio_len as f64 / sr;
    let frame_dt = duration / geom.frames as f64;

    let mut waveform = Vec::with_capacity(geom.audio_len);
    for n in 0..geom.audio_len {
        let t = n as f64 / sr;
        let env = lat.envelope(t);
        let carrier = (std::f64::consts::TAU * lat.carrier_hz * t + lat.carrier_phase).sin();
        let noise = (rng.gen::<f64>() - 0.5) * 2.0 * cfg.audio_noise;
        waveform.push(((0.7 * env * carrier + noise).clamp(-1.0, 1.0)) as f32);
    }

    let n = geom.frame_size;
    let mut frames = Vec::with_capacity(geom.frames_len());
    for fi in 0..geom.frames {
        let t_mid = (fi as f64 + 0.5) * frame_dt;
        let env = lat.envelope(t_mid);
        let cx = lat.face_cx
            + lat.motion_amp * (std::f64::consts::TAU * lat.motion_freq * t_mid + lat.motion_phase).sin();
        let cy = lat.face_cy
            + 0.4 * lat.motion_amp * (std::f64::consts::TAU * lat.motion_freq * t_mid * 0.7 + lat.motion_phase * 1.3).cos();
        let mouth_cy = cy + 0.45 * lat.face_r;
        let mouth_rx = 0.50 * lat.face_r;
        let mouth_ry = (0.12 + 0.28 * env) * lat.face_r;
        let eye_dx = 0.38 * lat.face_r;
        let eye_cy = cy - 0.30 * lat.face_r;
        let eye_r = 0.13 * lat.face_r;
        for y in 0..n {
            for x in 0..n {
                let (xf, yf) = (x as f64, y as f64);
                let base = [
                    lat.bg[0] + lat.grad[0] * xf / n as f64,
                    lat.bg[1] + lat.grad[1] * yf / n as f64,
                    lat.bg[2] + lat.grad[0] * yf / n as f64,
                ];
                let d_face = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
                let face_alpha = smooth_edge(lat.face_r - d_face);
                let skin = [0.76, 0.62, 0.50];
                let mut px = [0.0; 3];
                for c in 0..3 {
                    px[c] = base[c] * (1.0 - face_alpha) + skin[c] * face_alpha;
                }
                // eyes
                for side in [-1.0, 1.0] {
                    let d_eye = ((xf - (cx + side * eye_dx)).powi(2) + (yf - eye_cy).powi(2)).sqrt();
                    let a = smooth_edge(eye_r - d_eye) * face_alpha;
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + 0.12 * a;
                    }
                }
                // mouth: darkness tracks the audio envelope
                let me = ((xf - cx) / mouth_rx).powi(2) + ((yf - mouth_cy) / mouth_ry).powi(2);
                if me < 1.0 {
                    let open = 0.20 + 0.80 * env;
                    let a = (1.0 - me) * open * face_alpha;
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + 0.06 * a;
                    }
                }
                for (c, v) in px.iter().enumerate() {
                    let noise = (rng.gen::<f64>() - 0.5) * 2.0 * cfg.pixel_noise;
                    let _ = c;
                    frames.push((v + noise).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }

    MediaClip {
        clip_id: format!("clip_{seed:016x}"),
        seed,
        geom,
        frames,
        waveform,
        label: ForgeryLabel::real(),
    }
}

fn smooth_edge(d: f64) -> f64 {
    // 1-pixel anti-aliased edge
    (d + 0.5).clamp(0.0, 1.0)
}

fn category_after_visual(c: Category) -> Category {
    match c {
        Category::Real | Category::VisualOnly => Category::VisualOnly,
        Category::AudioOnly | Category::BothSpecific => Category::BothSpecific,
        Category::Misaligned | Category::Combined => Category::Combined,
    }
}

fn category_after_audio(c: Category) -> Category {
    match c {
        Category::Real | Category::AudioOnly => Category::AudioOnly,
        Category::VisualOnly | Category::BothSpecific => Category::BothSpecific,
        Category::Misaligned | Category::Combined => Category::Combined,
    }
}

fn category_after_misalignment(c: Category) -> Category {
    match c {
        Category::Real | Category::Misaligned => Category::Misaligned,
        _ => Category::Combined,
    }
}

/// Add a blending-boundary seam (bright border ring plus high-frequency
/// checker texture) to every frame. The audio stream is untouched.
pub fn inject_visual_artifact(clip: &MediaClip, strength: f64) -> Result<MediaClip> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "visual strength {strength} outside (0, 1]"
        )));
    }
    let geom = clip.geom;
    let n = geom.frame_size;
    let mut rng = ChaCha8Rng::seed_from_u64(clip.seed ^ 0x5ea1_5ea1_5ea1_5ea1);
    let w = rng.gen_range(8..=12.min(n - 8));
    let h = rng.gen_range(8..=12.min(n - 8));
    let x0 = rng.gen_range(2..n - w - 2);
    let y0 = rng.gen_range(2..n - h - 2);

    let mut out = clip.clone();
    for t in 0..geom.frames {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let on_border = y < y0 + 2 || y >= y0 + h - 2 || x < x0 + 2 || x >= x0 + w - 2;
                let checker = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                let delta = if on_border { 0.30 * strength } else { 0.15 * strength * checker };
                for c in 0..geom.channels {
                    let idx = ((t * n + y) * n + x) * geom.channels + c;
                    out.frames[idx] = (out.frames[idx] as f64 + delta).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    out.label.category = category_after_visual(clip.label.category);
    out.label.is_fake = true;
    out.label.artifact_params.insert("visual_strength".into(), strength);
    out.label.artifact_params.insert("seam_x".into(), x0 as f64);
    out.label.artifact_params.insert("seam_y".into(), y0 as f64);
    Ok(out)
}

/// Add a fixed-frequency spectral spike plus amplitude quantization to the
/// waveform. Frames are untouched.
pub fn inject_audio_artifact(clip: &MediaClip, strength: f64, spike_freq_hz: f64) -> Result<MediaClip> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "audio strength {strength} outside (0, 1]"
        )));
    }
    let geom = clip.geom;
    let mut rng = ChaCha8Rng::seed_from_u64(clip.seed ^ 0xa0d1_0a0d_10a0_d10a);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let levels = (40.0 - 28.0 * strength).round().max(6.0);

    let mut out = clip.clone();
    for (i, v) in out.waveform.iter_mut().enumerate() {
        let t = i as f64 / geom.sample_rate;
        let spike = 0.25 * strength * (std::f64::consts::TAU * spike_freq_hz * t + phase).sin();
        let mixed = *v as f64 * (1.0 - 0.25 * strength) + spike;
        let quantized = (mixed * levels).round() / levels;
        *v = quantized.clamp(-1.0, 1.0) as f32;
    }
    out.label.category = category_after_audio(clip.label.category);
    out.label.is_fake = true;
    out.label.artifact_params.insert("audio_strength".into(), strength);
    out.label.artifact_params.insert("spike_freq_hz".into(), spike_freq_hz);
    Ok(out)
}

/// Circularly shift the waveform by whole frames, desynchronizing the audio
/// envelope from the mouth motion while leaving each stream's own statistics
/// intact. Frames are untouched.
pub fn inject_misalignment(clip: &MediaClip, offset_frames: i64) -> Result<MediaClip> {
    let half = (clip.geom.frames / 2) as i64;
    if offset_frames == 0 || offset_frames.abs() > half {
        return Err(Error::InvalidArgument(format!(
            "offset {offset_frames} outside 1..={half} in magnitude"
        )));
    }
    let spf = clip.geom.samples_per_frame() as i64;
    let len = clip.geom.audio_len as i64;
    let shift = (offset_frames * spf).rem_euclid(len) as usize;

    let mut out = clip.clone();
    out.waveform.rotate_left(shift);
    out.label.category = category_after_misalignment(clip.label.category);
    out.label.is_fake = true;
    out.label.artifact_params.insert("offset_frames".into(), offset_frames as f64);
    Ok(out)
}

// ---------------------------------------------------------------------------
// measurement helpers (also used by the detector checks and tests)
// ---------------------------------------------------------------------------

/// Mean darkness of the window under the face centroid, per frame. Tracks
/// mouth openness on generated clips; the window follows the face so small
/// motions do not leak into the series.
pub fn measure_mouth_aperture(clip: &MediaClip) -> Vec<f64> {
    let g = &clip.geom;
    let n = g.frame_size;
    (0..g.frames)
        .map(|t| {
            // face centroid from bright (skin-like) pixels in the red channel
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let w = (clip.pixel(t, y, x, 0) as f64 - 0.55).max(0.0);
                    sx += w * x as f64;
                    sy += w * y as f64;
                    sw += w;
                }
            }
            if sw < 1e-9 {
                return 0.0;
            }
            let (cx, cy) = (sx / sw, sy / sw);
            // window sits fully inside the face disc, under its centroid
            let r = n as f64 * 0.29;
            let half_w = (0.6 * r).round() as i64;
            let y_lo = (cy + 0.02 * r).round() as i64;
            let y_hi = (cy + 0.95 * r).round() as i64;
            let mut acc = 0.0;
            let mut count = 0.0;
            for y in y_lo..=y_hi {
                for x in (cx as i64 - half_w)..=(cx as i64 + half_w) {
                    if y < 0 || y >= n as i64 || x < 0 || x >= n as i64 {
                        continue;
                    }
                    for c in 0..g.channels {
                        acc += 1.0 - clip.pixel(t, y as usize, x as usize, c) as f64;
                        count += 1.0;
                    }
                }
            }
            if count == 0.0 {
                0.0
            } else {
                acc / count
            }
        })
        .collect()
}

/// Per-frame mean absolute amplitude of the waveform.
pub fn audio_envelope(clip: &MediaClip) -> Vec<f64> {
    let spf = clip.geom.samples_per_frame();
    clip.waveform
        .chunks(spf)
        .take(clip.geom.frames)
        .map(|seg| seg.iter().map(|v| v.abs() as f64).sum::<f64>() / seg.len() as f64)
        .collect()
}

/// Pearson correlation at lag zero.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Coupling between the rendered mouth and the audio envelope.
pub fn mouth_audio_correlation(clip: &MediaClip) -> f64 {
    pearson(&measure_mouth_aperture(clip), &audio_envelope(clip))
}

/// Single-bin DFT magnitude at `freq_hz` (Goertzel-style direct projection).
pub fn goertzel_magnitude(waveform: &[f32], freq_hz: f64, sample_rate: f64) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (i, &v) in waveform.iter().enumerate() {
        let ang = std::f64::consts::TAU * freq_hz * i as f64 / sample_rate;
        re += v as f64 * ang.cos();
        im += v as f64 * ang.sin();
    }
    (re * re + im * im).sqrt()
}

/// Spectral-spike score: magnitude at the spike frequency relative to the
/// RMS magnitude of a probe grid away from it. Clean clips stay near 1.
pub fn spectral_spike_score(waveform: &[f32], spike_freq_hz: f64, sample_rate: f64) -> f64 {
    let probes: Vec<f64> = (0..20)
        .map(|k| 500.0 + 150.0 * k as f64)
        .filter(|f| (f - spike_freq_hz).abs() > 200.0)
        .collect();
    let spike = goertzel_magnitude(waveform, spike_freq_hz, sample_rate);
    let mut acc = 0.0;
    for f in &probes {
        let m = goertzel_magnitude(waveform, *f, sample_rate);
        acc += m * m;
    }
    let baseline = (acc / probes.len() as f64).sqrt().max(1e-9);
    spike / baseline
}

/// Seam-energy score: strongest local correlation with the checkerboard
/// texture over sliding 4x4 windows, averaged across frames.
pub fn seam_energy_score(clip: &MediaClip) -> f64 {
    let g = &clip.geom;
    let n = g.frame_size;
    let mut total = 0.0;
    for t in 0..g.frames {
        let mut best: f64 = 0.0;
        let mut y = 0;
        while y + 4 <= n {
            let mut x = 0;
            while x + 4 <= n {
                let mut acc = 0.0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        let sign = if (x + dx + y + dy) % 2 == 0 { 1.0 } else { -1.0 };
                        let mut v = 0.0;
                        for c in 0..g.channels {
                            v += clip.pixel(t, y + dy, x + dx, c) as f64;
                        }
                        acc += sign * v / g.channels as f64;
                    }
                }
                best = best.max((acc / 16.0).abs());
                x += 2;
            }
            y += 2;
        }
        total += best;
    }
    total / g.frames as f64
}

/// Decision thresholds for the two unimodal artifact checks.
pub const SEAM_SCORE_THRESHOLD: f64 = 0.035;
pub const SPIKE_SCORE_THRESHOLD: f64 = 8.0;

/// True when the visual stream shows seam/checker energy.
pub fn visual_artifact_detected(clip: &MediaClip) -> bool {
    seam_energy_score(clip) > SEAM_SCORE_THRESHOLD
}

/// True when the audio stream shows the spectral spike.
pub fn audio_artifact_detected(clip: &MediaClip, spike_freq_hz: f64) -> bool {
    spectral_spike_score(&clip.waveform, spike_freq_hz, clip.geom.sample_rate) > SPIKE_SCORE_THRESHOLD
}

// ---------------------------------------------------------------------------
// dataset build / io
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub seed: u64,
    pub frames_path: String,
    pub audio_path: String,
    pub meta_path: String,
    pub label: ForgeryLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub generator_config: GeneratorConfig,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipMeta {
    format_version: String,
    frames_shape: [usize; 4],
    audio_len: usize,
    dtype: String,
    layout: String,
}

/// Generate the clip at position `index` of the dataset described by `cfg`.
/// Pure function of (config, index); clips can be produced in any order.
pub fn generate_clip(cfg: &GeneratorConfig, category: Category, index: usize) -> Result<MediaClip> {
    let seed = clip_seed(cfg.seed, index);
    let base = generate_real(cfg, seed);
    let mut art_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1f0_a271_fac7_0a11);
    let draw_strength = |rng: &mut ChaCha8Rng, range: [f64; 2]| {
        if range[0] >= range[1] { range[0] } else { rng.gen_range(range[0]..range[1]) }
    };
    let draw_offset = |rng: &mut ChaCha8Rng, range: [i64; 2]| {
        let mag = if range[0] >= range[1] { range[0] } else { rng.gen_range(range[0]..=range[1]) };
        if rng.gen::<bool>() { mag } else { -mag }
    };
    let mut clip = match category {
        Category::Real => base,
        Category::VisualOnly => {
            let s = draw_strength(&mut art_rng, cfg.visual_strength);
            inject_visual_artifact(&base, s)?
        }
        Category::AudioOnly => {
            let s = draw_strength(&mut art_rng, cfg.audio_strength);
            inject_audio_artifact(&base, s, cfg.spike_freq_hz)?
        }
        Category::BothSpecific => {
            let sv = draw_strength(&mut art_rng, cfg.visual_strength);
            let sa = draw_strength(&mut art_rng, cfg.audio_strength);
            inject_audio_artifact(&inject_visual_artifact(&base, sv)?, sa, cfg.spike_freq_hz)?
        }
        Category::Misaligned => {
            let o = draw_offset(&mut art_rng, cfg.offset_frames);
            inject_misalignment(&base, o)?
        }
        Category::Combined => {
            let o = draw_offset(&mut art_rng, cfg.offset_frames);
            let shifted = inject_misalignment(&base, o)?;
            if art_rng.gen::<bool>() {
                let s = draw_strength(&mut art_rng, cfg.visual_strength);
                inject_visual_artifact(&shifted, s)?
            } else {
                let s = draw_strength(&mut art_rng, cfg.audio_strength);
                inject_audio_artifact(&shifted, s, cfg.spike_freq_hz)?
            }
        }
    };
    clip.clip_id = format!("clip_{index:05}_{}", category.slug());
    Ok(clip)
}

fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::NotFound(format!("tensor file {}: {e}", path.display())))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{} is not a float32 blob", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Generate all clips, write tensors + sidecars + `manifest.json`.
pub fn build_dataset(cfg: &GeneratorConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if cfg.counts.total() == 0 {
        return Err(Error::InvalidArgument("dataset would contain zero clips".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(cfg.counts.total());
    let mut index = 0usize;
    for category in Category::ALL {
        for _ in 0..cfg.counts.get(category) {
            let clip = generate_clip(cfg, category, index)?;
            let frames_path = format!("{}.frames.f32", clip.clip_id);
            let audio_path = format!("{}.audio.f32", clip.clip_id);
            let meta_path = format!("{}.meta.json", clip.clip_id);
            write_f32(&out_dir.join(&frames_path), &clip.frames)?;
            write_f32(&out_dir.join(&audio_path), &clip.waveform)?;
            let g = clip.geom;
            let meta = ClipMeta {
                format_version: CLIP_META_FORMAT_VERSION.to_string(),
                frames_shape: [g.frames, g.frame_size, g.frame_size, g.channels],
                audio_len: g.audio_len,
                dtype: "f32".into(),
                layout: "row_major".into(),
            };
            let mut f = fs::File::create(out_dir.join(&meta_path))?;
            serde_json::to_writer_pretty(&mut f, &meta)?;
            f.write_all(b"\n")?;
            entries.push(ManifestEntry {
                clip_id: clip.clip_id.clone(),
                seed: clip.seed,
                frames_path,
                audio_path,
                meta_path,
                label: clip.label.clone(),
            });
            index += 1;
        }
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION.to_string(),
        generator_config: cfg.clone(),
        entries,
    };
    let mut f = fs::File::create(out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

/// Load and validate a manifest: version, unique ids, referenced files exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::NotFound(format!("manifest {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "manifest format {} (expected {})",
            manifest.format_version, MANIFEST_FORMAT_VERSION
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut seen = std::collections::BTreeSet::new();
    for e in &manifest.entries {
        if !seen.insert(&e.clip_id) {
            return Err(Error::Format(format!("duplicate clip id {}", e.clip_id)));
        }
        e.label.validate()?;
        for rel in [&e.frames_path, &e.audio_path, &e.meta_path] {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(Error::NotFound(format!("referenced file missing: {}", p.display())));
            }
        }
    }
    Ok(manifest)
}

/// Load one clip's tensors given the manifest's directory.
pub fn load_clip(dir: &Path, manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<MediaClip> {
    let geom = manifest.generator_config.geometry;
    let meta_text = fs::read_to_string(dir.join(&entry.meta_path))?;
    let meta: ClipMeta = serde_json::from_str(&meta_text)?;
    if meta.format_version != CLIP_META_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "clip meta format {} (expected {})",
            meta.format_version, CLIP_META_FORMAT_VERSION
        )));
    }
    let expect_shape = [geom.frames, geom.frame_size, geom.frame_size, geom.channels];
    if meta.frames_shape != expect_shape {
        return Err(Error::Shape(format!(
            "clip {} shape {:?} does not match dataset geometry {:?}",
            entry.clip_id, meta.frames_shape, expect_shape
        )));
    }
    let clip = MediaClip {
        clip_id: entry.clip_id.clone(),
        seed: entry.seed,
        geom,
        frames: read_f32(&dir.join(&entry.frames_path))?,
        waveform: read_f32(&dir.join(&entry.audio_path))?,
        label: entry.label.clone(),
    };
    clip.validate()?;
    Ok(clip)
}

pub fn dataset_path(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig::default()
    }

    #[test]
    fn real_clip_is_deterministic_and_seed_sensitive() {
        let a = generate_real(&cfg(), 0);
        let b = generate_real(&cfg(), 0);
        assert_eq!(a, b);
        let c = generate_real(&cfg(), 1);
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn real_clip_mouth_tracks_envelope() {
        for seed in 0..8 {
            let clip = generate_real(&cfg(), seed);
            let r = mouth_audio_correlation(&clip);
            assert!(r >= 0.9, "seed {seed}: correlation {r}");
        }
    }

    #[test]
    fn dbg_aperture() {
        let c = cfg();
        let clip = generate_real(&c, 3);
        let ap = measure_mouth_aperture(&clip);
        let env = audio_envelope(&clip);
        for t in 0..16 {
            println!("{t:2} ap={:.4} env={:.4}", ap[t], env[t]);
        }
        println!("r = {}", pearson(&ap, &env));
    }

    #[test]
    fn real_clip_values_in_range() {
        let clip = generate_real(&cfg(), 3);
        clip.validate().unwrap();
    }

    #[test]
    fn visual_artifact_leaves_audio_alone_and_grows_with_strength() {
        let base = generate_real(&cfg(), 5);
        assert!(inject_visual_artifact(&base, 0.0).is_err());
        assert!(inject_visual_artifact(&base, 1.1).is_err());
        let mut deltas = Vec::new();
        for s in [0.2, 0.5, 0.9] {
            let forged = inject_visual_artifact(&base, s).unwrap();
            assert_eq!(forged.waveform, base.waveform);
            assert_eq!(forged.label.category, Category::VisualOnly);
            assert!(forged.label.is_fake);
            let l2: f64 = forged
                .frames
                .iter()
                .zip(&base.frames)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            deltas.push(l2);
        }
        assert!(deltas[0] < deltas[1] && deltas[1] < deltas[2], "{deltas:?}");
    }

    #[test]
    fn audio_artifact_leaves_frames_alone_and_spikes_spectrum() {
        let base = generate_real(&cfg(), 6);
        let forged = inject_audio_artifact(&base, 0.5, cfg().spike_freq_hz).unwrap();
        assert_eq!(forged.frames, base.frames);
        assert_eq!(forged.label.category, Category::AudioOnly);
        let clean = goertzel_magnitude(&base.waveform, cfg().spike_freq_hz, base.geom.sample_rate);
        let spiked = goertzel_magnitude(&forged.waveform, cfg().spike_freq_hz, base.geom.sample_rate);
        assert!(spiked >= 3.0 * clean, "clean {clean}, spiked {spiked}");
        // determinism per (seed, strength)
        let again = inject_audio_artifact(&base, 0.5, cfg().spike_freq_hz).unwrap();
        assert_eq!(forged, again);
    }

    #[test]
    fn misalignment_rejects_zero_and_oversized_offsets() {
        let base = generate_real(&cfg(), 7);
        assert!(inject_misalignment(&base, 0).is_err());
        assert!(inject_misalignment(&base, 9).is_err());
        assert!(inject_misalignment(&base, -9).is_err());
        assert!(inject_misalignment(&base, 8).is_ok());
    }

    #[test]
    fn misalignment_preserves_frames_and_breaks_sync() {
        let base = generate_real(&cfg(), 8);
        let shifted = inject_misalignment(&base, 4).unwrap();
        assert_eq!(shifted.frames, base.frames);
        assert_eq!(shifted.label.category, Category::Misaligned);
        let r = mouth_audio_correlation(&shifted);
        assert!(r < 0.5, "correlation after shift {r}");
        // single-stream statistics preserved: sample histogram is a permutation
        let mut a = base.waveform.clone();
        let mut b = shifted.waveform.clone();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn misaligned_clips_pass_both_unimodal_detectors() {
        let c = cfg();
        for seed in 0..6 {
            let base = generate_real(&c, 100 + seed);
            let shifted = inject_misalignment(&base, 5).unwrap();
            assert!(!visual_artifact_detected(&shifted), "seed {seed}");
            assert!(!audio_artifact_detected(&shifted, c.spike_freq_hz), "seed {seed}");
            let seamed = inject_visual_artifact(&base, 0.5).unwrap();
            assert!(visual_artifact_detected(&seamed), "seed {seed}");
            let spiked = inject_audio_artifact(&base, 0.5, c.spike_freq_hz).unwrap();
            assert!(audio_artifact_detected(&spiked, c.spike_freq_hz), "seed {seed}");
        }
    }

    #[test]
    fn dataset_build_is_deterministic() {
        let mut small = cfg();
        small.counts = CategoryCounts {
            real: 3,
            visual_only: 2,
            audio_only: 2,
            both_specific: 0,
            misaligned: 3,
            combined: 0,
        };
        small.seed = 7;
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = build_dataset(&small, dir_a.path()).unwrap();
        let _ = build_dataset(&small, dir_b.path()).unwrap();
        assert_eq!(ma.entries.len(), 10);
        let bytes_a = fs::read(dir_a.path().join("manifest.json")).unwrap();
        let bytes_b = fs::read(dir_b.path().join("manifest.json")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        // per-category counts match the config exactly
        let count = |cat| ma.entries.iter().filter(|e| e.label.category == cat).count();
        assert_eq!(count(Category::Real), 3);
        assert_eq!(count(Category::VisualOnly), 2);
        assert_eq!(count(Category::AudioOnly), 2);
        assert_eq!(count(Category::Misaligned), 3);
        // reload roundtrip
        let loaded = load_manifest(&dir_a.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, ma);
        let clip = load_clip(dir_a.path(), &loaded, &loaded.entries[0]).unwrap();
        clip.validate().unwrap();
    }

    #[test]
    fn dataset_rejects_zero_total() {
        let mut c = cfg();
        c.counts = CategoryCounts { real: 0, visual_only: 0, audio_only: 0, both_specific: 0, misaligned: 0, combined: 0 };
        let dir = tempfile::tempdir().unwrap();
        assert!(build_dataset(&c, dir.path()).is_err());
    }

    #[test]
    fn combined_clips_stack_misalignment_with_one_specific_artifact() {
        let c = cfg();
        let clip = generate_clip(&c, Category::Combined, 42).unwrap();
        assert_eq!(clip.label.category, Category::Combined);
        assert!(clip.label.artifact_params.contains_key("offset_frames"));
        let has_visual = clip.label.artifact_params.contains_key("visual_strength");
        let has_audio = clip.label.artifact_params.contains_key("audio_strength");
        assert!(has_visual ^ has_audio);
    }
}
