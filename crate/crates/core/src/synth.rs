//! Seeded synthetic traffic-camera-like video.
//!
//! Textured rectangles of two classes drift across a static background,
//! bouncing off the image border. Transient bars occlude them for a few
//! frames; frames can additionally be motion-blurred and noised. Everything
//! is a pure function of the scene specification.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{self, BBox, GroundTruthRecord};
use crate::rng::Rng;
use crate::tensor::{io, Tensor};

pub const NUM_CLASSES: usize = 2;
/// Largest per-frame displacement of an object center, in pixels.
pub const MAX_STEP_PX: f32 = 3.0;
const PLACEMENT_RETRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub length: usize,
    /// Inclusive object count range.
    pub objects: (usize, usize),
    /// Inclusive range of an object's shorter side, in pixels.
    pub size: (f32, f32),
    pub max_speed: f32,
    /// Per-frame random velocity perturbation, in pixels.
    pub jitter: f32,
    pub occluders: (usize, usize),
    pub occluder_opacity: (f32, f32),
    /// Inclusive range of frames an occluder stays in place.
    pub dwell: (usize, usize),
    pub blur_prob: f32,
    /// Half-width of the horizontal box blur.
    pub blur_radius: usize,
    pub noise_sigma: f32,
}

impl SceneSpec {
    pub fn new(seed: u64, height: usize, width: usize, length: usize) -> Self {
        Self {
            seed,
            height,
            width,
            length,
            objects: (1, 3),
            size: (12.0, 20.0),
            max_speed: 2.0,
            jitter: 0.3,
            occluders: (0, 0),
            occluder_opacity: (0.7, 1.0),
            dwell: (3, 8),
            blur_prob: 0.0,
            blur_radius: 1,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("scene spec: {}", m)));
        if self.height == 0 || self.width == 0 || self.length == 0 {
            return bad("image size and length must be positive");
        }
        if self.objects.0 > self.objects.1
            || self.occluders.0 > self.occluders.1
            || self.dwell.0 > self.dwell.1
        {
            return bad("inverted range");
        }
        if !(self.size.0 > 0.0 && self.size.0 <= self.size.1) {
            return bad("object size range must be positive and ordered");
        }
        if self.dwell.0 == 0 {
            return bad("occluders must dwell at least one frame");
        }
        if self.max_speed < 0.0 || self.jitter < 0.0 || self.noise_sigma < 0.0 {
            return bad("negative motion or noise parameter");
        }
        Ok(())
    }
}

/// One labelled object on one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtObject {
    pub track: usize,
    pub class: usize,
    pub bbox: BBox,
    pub occluded_fraction: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: usize,
    /// `3×H×W` frames in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub gt: Vec<Vec<GtObject>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn records(&self) -> Vec<GroundTruthRecord> {
        self.gt
            .iter()
            .enumerate()
            .flat_map(|(t, objs)| {
                objs.iter().map(move |o| GroundTruthRecord {
                    sequence_id: self.id,
                    frame_id: t,
                    class: o.class,
                    x_min: o.bbox.x_min,
                    y_min: o.bbox.y_min,
                    x_max: o.bbox.x_max,
                    y_max: o.bbox.y_max,
                    occluded_fraction: o.occluded_fraction,
                })
            })
            .collect()
    }
}

/// Axis-aligned bar drawn over frames `start ..= end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub rect: BBox,
    pub start: usize,
    pub end: usize,
    pub opacity: f32,
    pub shade: f32,
}

impl Occluder {
    pub fn active(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

#[derive(Clone, Debug)]
struct Track {
    class: usize,
    w: f32,
    h: f32,
    /// Top-left corner per frame.
    path: Vec<(f32, f32)>,
    colors: [[f32; 3]; 2],
}

fn color(rng: &mut Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.range(lo, hi), rng.range(lo, hi), rng.range(lo, hi)]
}

fn pixel_inside(b: &BBox, x: usize, y: usize) -> bool {
    let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
    px >= b.x_min && px < b.x_max && py >= b.y_min && py < b.y_max
}

/// Pixels whose centers fall inside `b`, as `(x, y)` pairs.
fn pixels(b: &BBox, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let x0 = (b.x_min - 0.5).ceil().max(0.0) as usize;
    let y0 = (b.y_min - 0.5).ceil().max(0.0) as usize;
    let x1 = ((b.x_max - 0.5).ceil().max(0.0) as usize).min(width);
    let y1 = ((b.y_max - 0.5).ceil().max(0.0) as usize).min(height);
    (y0..y1)
        .flat_map(move |y| (x0..x1).map(move |x| (x, y)))
        .filter(move |&(x, y)| pixel_inside(b, x, y))
}

/// Fraction of `obj`'s pixels covered by any of `occluders`.
pub fn occluded_fraction(obj: &BBox, occluders: &[BBox], width: usize, height: usize) -> f32 {
    let (mut total, mut covered) = (0usize, 0usize);
    for (x, y) in pixels(obj, width, height) {
        total += 1;
        if occluders.iter().any(|o| pixel_inside(o, x, y)) {
            covered += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        covered as f32 / total as f32
    }
}

fn make_tracks(spec: &SceneSpec, rng: &mut Rng) -> Result<Vec<Track>> {
    let (w_img, h_img) = (spec.width as f32, spec.height as f32);
    let count = rng.range_usize(spec.objects.0, spec.objects.1);
    let mut tracks: Vec<Track> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.range_usize(0, NUM_CLASSES - 1);
        let s = rng.range(spec.size.0, spec.size.1).round().max(1.0);
        // Class 0 is wide, class 1 is tall.
        let (w, h) = if class == 0 {
            ((s * 1.5).round(), s)
        } else {
            (s, (s * 1.4).round())
        };
        if w >= w_img || h >= h_img {
            return Err(Error::Invalid(format!(
                "object {}×{} does not fit a {}×{} image",
                w, h, w_img, h_img
            )));
        }
        let mut start = None;
        for _ in 0..PLACEMENT_RETRIES {
            let x = rng.range(0.0, w_img - w).round();
            let y = rng.range(0.0, h_img - h).round();
            let candidate = BBox::new(x, y, x + w, y + h);
            let clear = tracks.iter().all(|t| {
                let (tx, ty) = t.path[0];
                candidate.intersection(&BBox::new(tx, ty, tx + t.w, ty + t.h)) == 0.0
            });
            if clear {
                start = Some((x, y));
                break;
            }
        }
        let (mut x, mut y) = start.ok_or_else(|| {
            Error::Invalid(format!("could not place {} objects without overlap", count))
        })?;
        let angle = rng.range(0.0, std::f32::consts::TAU);
        let speed = rng.range(0.0, spec.max_speed.min(MAX_STEP_PX));
        let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
        let colors = if class == 0 {
            [color(rng, 0.55, 1.0), color(rng, 0.0, 0.35)]
        } else {
            [color(rng, 0.05, 0.35), color(rng, 0.6, 0.95)]
        };
        let mut path = Vec::with_capacity(spec.length);
        path.push((x, y));
        for _ in 1..spec.length {
            let (mut dx, mut dy) = (vx, vy);
            if spec.jitter > 0.0 {
                dx += rng.range(-spec.jitter, spec.jitter);
                dy += rng.range(-spec.jitter, spec.jitter);
            }
            let norm = (dx * dx + dy * dy).sqrt();
            if norm > MAX_STEP_PX {
                dx *= MAX_STEP_PX / norm;
                dy *= MAX_STEP_PX / norm;
            }
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0.0 || nx > w_img - w {
                vx = -vx;
            }
            if ny < 0.0 || ny > h_img - h {
                vy = -vy;
            }
            x = nx.clamp(0.0, w_img - w);
            y = ny.clamp(0.0, h_img - h);
            path.push((x, y));
        }
        tracks.push(Track {
            class,
            w,
            h,
            path,
            colors,
        });
    }
    Ok(tracks)
}

fn make_occluders(spec: &SceneSpec, tracks: &[Track], rng: &mut Rng) -> Vec<Occluder> {
    let count = rng.range_usize(spec.occluders.0, spec.occluders.1);
    (0..count)
        .map(|_| {
            let dwell = rng.range_usize(spec.dwell.0, spec.dwell.1).min(spec.length);
            let start = rng.range_usize(0, spec.length - dwell);
            let vertical = rng.bernoulli(0.5);
            let opacity = rng.range(spec.occluder_opacity.0, spec.occluder_opacity.1);
            let shade = rng.range(0.25, 0.6);
            // Aim the bar at an object's position on the first dwell frame.
            let (cx, cy, thick) = if tracks.is_empty() {
                let c = (
                    rng.range(0.0, spec.width as f32),
                    rng.range(0.0, spec.height as f32),
                );
                (c.0, c.1, 6.0)
            } else {
                let tr = &tracks[rng.range_usize(0, tracks.len() - 1)];
                let (x, y) = tr.path[start];
                let along = if vertical { tr.w } else { tr.h };
                (
                    x + tr.w / 2.0,
                    y + tr.h / 2.0,
                    (along * rng.range(0.4, 0.8)).round().max(2.0),
                )
            };
            let rect = if vertical {
                BBox::new(
                    (cx - thick / 2.0).round(),
                    0.0,
                    (cx + thick / 2.0).round(),
                    spec.height as f32,
                )
            } else {
                BBox::new(
                    0.0,
                    (cy - thick / 2.0).round(),
                    spec.width as f32,
                    (cy + thick / 2.0).round(),
                )
            };
            Occluder {
                rect,
                start,
                end: start + dwell - 1,
                opacity,
                shade,
            }
        })
        .collect()
}

fn background(spec: &SceneSpec, rng: &mut Rng) -> Vec<f32> {
    let (h, w) = (spec.height, spec.width);
    let top = color(rng, 0.2, 0.6);
    let bottom = color(rng, 0.2, 0.6);
    let mut img = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        let a = y as f32 / (h.max(2) - 1) as f32;
        for x in 0..w {
            let grain = 0.04 * (rng.uniform() - 0.5);
            for c in 0..3 {
                img[(c * h + y) * w + x] =
                    (top[c] * (1.0 - a) + bottom[c] * a + grain).clamp(0.0, 1.0);
            }
        }
    }
    img
}

fn texture(track: &Track, lx: usize, ly: usize) -> [f32; 3] {
    let pick = if track.class == 0 {
        (ly / 2) % 2
    } else {
        (lx / 3 + ly / 3) % 2
    };
    track.colors[pick]
}

fn box_blur_rows(img: &mut [f32], w: usize, radius: usize) {
    let mut row = vec![0.0f32; w];
    for line in img.chunks_exact_mut(w) {
        row.copy_from_slice(line);
        for (x, out) in line.iter_mut().enumerate() {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            *out = row[lo..=hi].iter().sum::<f32>() / (hi - lo + 1) as f32;
        }
    }
}

/// Renders a scene: frames and per-frame ground truth.
pub fn generate(spec: &SceneSpec) -> Result<(Vec<Tensor>, Vec<Vec<GtObject>>)> {
    spec.validate()?;
    let rng = Rng::new(spec.seed);
    let tracks = make_tracks(spec, &mut rng.fork(1))?;
    let occluders = make_occluders(spec, &tracks, &mut rng.fork(2));
    generate_with(spec, &tracks, &occluders, &mut rng.fork(3))
}

/// Renders with explicit occluders; used to script occlusion events.
pub fn generate_with_occluders(
    spec: &SceneSpec,
    occluders: &[Occluder],
) -> Result<(Vec<Tensor>, Vec<Vec<GtObject>>)> {
    spec.validate()?;
    let rng = Rng::new(spec.seed);
    let tracks = make_tracks(spec, &mut rng.fork(1))?;
    generate_with(spec, &tracks, occluders, &mut rng.fork(3))
}

fn generate_with(
    spec: &SceneSpec,
    tracks: &[Track],
    occluders: &[Occluder],
    rng: &mut Rng,
) -> Result<(Vec<Tensor>, Vec<Vec<GtObject>>)> {
    let (h, w) = (spec.height, spec.width);
    let bg = background(spec, &mut rng.fork(1));
    let mut frame_rng = rng.fork(2);
    let mut frames = Vec::with_capacity(spec.length);
    let mut gt = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let mut img = bg.clone();
        let mut objs = Vec::with_capacity(tracks.len());
        for (id, tr) in tracks.iter().enumerate() {
            let (x, y) = tr.path[t];
            let bbox = BBox::new(x, y, x + tr.w, y + tr.h);
            for (px, py) in pixels(&bbox, w, h) {
                let col = texture(
                    tr,
                    (px as f32 + 0.5 - x) as usize,
                    (py as f32 + 0.5 - y) as usize,
                );
                for c in 0..3 {
                    img[(c * h + py) * w + px] = col[c];
                }
            }
            objs.push((id, tr.class, bbox));
        }
        let active: Vec<&Occluder> = occluders.iter().filter(|o| o.active(t)).collect();
        for o in &active {
            for (px, py) in pixels(&o.rect, w, h) {
                for c in 0..3 {
                    let v = &mut img[(c * h + py) * w + px];
                    *v = (1.0 - o.opacity) * *v + o.opacity * o.shade;
                }
            }
        }
        if spec.blur_prob > 0.0 && frame_rng.bernoulli(spec.blur_prob) && spec.blur_radius > 0 {
            box_blur_rows(&mut img, w, spec.blur_radius);
        }
        if spec.noise_sigma > 0.0 {
            for v in img.iter_mut() {
                *v = (*v + spec.noise_sigma * frame_rng.normal()).clamp(0.0, 1.0);
            }
        }
        let rects: Vec<BBox> = active.iter().map(|o| o.rect).collect();
        gt.push(
            objs.into_iter()
                .map(|(track, class, bbox)| GtObject {
                    track,
                    class,
                    bbox,
                    occluded_fraction: occluded_fraction(&bbox, &rects, w, h),
                })
                .collect(),
        );
        frames.push(Tensor::new(&[3, h, w], img)?);
    }
    Ok((frames, gt))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Easy,
    OcclusionHeavy,
    SmallObjects,
}

impl Profile {
    pub const ALL: [Profile; 3] = [
        Profile::Easy,
        Profile::OcclusionHeavy,
        Profile::SmallObjects,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Easy => "easy",
            Profile::OcclusionHeavy => "occlusion_heavy",
            Profile::SmallObjects => "small_objects",
        }
    }

    /// Scene template for this profile; the seed is filled in per sequence.
    /// Object sizes are quoted for 64×64 frames and scale with `size`.
    pub fn scene(self, size: usize, length: usize) -> SceneSpec {
        let base = SceneSpec::new(0, size, size, length);
        let k = size as f32 / 64.0;
        let spec = match self {
            Profile::Easy => SceneSpec {
                noise_sigma: 0.02,
                ..base
            },
            Profile::OcclusionHeavy => SceneSpec {
                occluders: (4, 6),
                occluder_opacity: (0.85, 1.0),
                dwell: (2, 4),
                blur_prob: 0.3,
                blur_radius: 2,
                noise_sigma: 0.08,
                ..base
            },
            Profile::SmallObjects => SceneSpec {
                objects: (2, 4),
                size: (6.0, 10.0),
                occluders: (0, 1),
                noise_sigma: 0.03,
                ..base
            },
        };
        SceneSpec {
            size: (spec.size.0 * k, spec.size.1 * k),
            ..spec
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown profile '{}'", s)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub length: usize,
    pub size: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            train: 20,
            val: 4,
            test: 6,
            length: 40,
            size: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub profile: Profile,
    pub seed: u64,
    pub config: SuiteConfig,
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sequence] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn height(&self) -> usize {
        self.config.size
    }

    pub fn width(&self) -> usize {
        self.config.size
    }

    /// SHA-256 over frame bits and ground truth of every split, in order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for split in Split::ALL {
            hasher.update(split.as_str().as_bytes());
            for seq in self.split(split) {
                hasher.update((seq.id as u64).to_le_bytes());
                for f in &seq.frames {
                    for v in f.data() {
                        hasher.update(v.to_bits().to_le_bytes());
                    }
                }
                for r in seq.records() {
                    for v in [r.sequence_id, r.frame_id, r.class] {
                        hasher.update((v as u64).to_le_bytes());
                    }
                    for v in [r.x_min, r.y_min, r.x_max, r.y_max, r.occluded_fraction] {
                        hasher.update(v.to_bits().to_le_bytes());
                    }
                }
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Generates a fixed train/val/test suite. Sequence ids are unique across
/// splits: train first, then validation, then test.
pub fn benchmark_suite(profile: Profile, seed: u64) -> Result<Dataset> {
    benchmark_suite_with(profile, seed, SuiteConfig::default())
}

pub fn benchmark_suite_with(profile: Profile, seed: u64, config: SuiteConfig) -> Result<Dataset> {
    let root = Rng::new(seed);
    let template = profile.scene(config.size, config.length);
    let make = |id: usize| -> Result<Sequence> {
        let spec = SceneSpec {
            seed: root.fork(id as u64).next_u64(),
            ..template
        };
        let (frames, gt) = generate(&spec)?;
        Ok(Sequence { id, frames, gt })
    };
    let ids = |lo: usize, n: usize| (lo..lo + n).map(make).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        profile,
        seed,
        config,
        train: ids(0, config.train)?,
        val: ids(config.train, config.val)?,
        test: ids(config.train + config.val, config.test)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    Fftn,
    Ppm,
}

impl FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fftn" => Ok(Self::Fftn),
            "ppm" => Ok(Self::Ppm),
            _ => Err(Error::Invalid(format!("unknown frame format '{}'", s))),
        }
    }
}

impl FrameFormat {
    fn extension(self) -> &'static str {
        match self {
            FrameFormat::Fftn => "fftn",
            FrameFormat::Ppm => "ppm",
        }
    }
}

/// `dataset.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub profile: Profile,
    pub seed: u64,
    pub config: SuiteConfig,
    pub frame_format: FrameFormat,
    pub num_classes: usize,
    pub hash: String,
    pub sequences: Vec<(Split, usize)>,
}

pub const DATASET_META: &str = "dataset.json";
pub const GT_FILE: &str = "gt.csv";

pub fn sequence_dir(root: &Path, split: Split, id: usize) -> PathBuf {
    root.join(split.as_str()).join(format!("seq_{:04}", id))
}

pub fn write_ppm(path: &Path, frame: &Tensor) -> Result<()> {
    let (c, h, w) = match frame.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::Invalid(format!(
                "PPM needs a 3×H×W frame, got {:?}",
                s
            )))
        }
    };
    if c != 3 {
        return Err(Error::Invalid("PPM needs three channels".into()));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", w, h)?;
    let d = frame.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            bytes.push((d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let bad = || Error::Format(format!("{} is not a binary 8-bit PPM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| bad())?
                .to_string(),
        );
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let body = bytes.get(pos..pos + 3 * w * h).ok_or_else(bad)?;
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + i] = body[3 * i + ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes frames, per-split `gt.csv` and `dataset.json` under `root`.
pub fn save_dataset(ds: &Dataset, root: &Path, format: FrameFormat) -> Result<DatasetMeta> {
    let mut sequences = Vec::new();
    for split in Split::ALL {
        let split_dir = root.join(split.as_str());
        fs::create_dir_all(&split_dir)?;
        let mut records = Vec::new();
        for seq in ds.split(split) {
            let dir = sequence_dir(root, split, seq.id);
            fs::create_dir_all(&dir)?;
            for (t, f) in seq.frames.iter().enumerate() {
                let path = dir.join(format!("frame_{:04}.{}", t, format.extension()));
                match format {
                    FrameFormat::Fftn => io::save(&path, f)?,
                    FrameFormat::Ppm => write_ppm(&path, f)?,
                }
            }
            records.extend(seq.records());
            sequences.push((split, seq.id));
        }
        let mut out = BufWriter::new(fs::File::create(split_dir.join(GT_FILE))?);
        eval::write_ground_truth(&mut out, &records)?;
        out.flush()?;
    }
    let meta = DatasetMeta {
        profile: ds.profile,
        seed: ds.seed,
        config: ds.config,
        frame_format: format,
        num_classes: NUM_CLASSES,
        hash: ds.content_hash(),
        sequences,
    };
    fs::write(
        root.join(DATASET_META),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(meta)
}

pub fn load_meta(root: &Path) -> Result<DatasetMeta> {
    let path = root.join(DATASET_META);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {}", path.display(), e)))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the sequences of one split; frames sorted by index.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<Sequence>> {
    let meta = load_meta(root)?;
    let records = eval::load_ground_truth(root.join(split.as_str()).join(GT_FILE))?;
    let ext = meta.frame_format.extension();
    let mut out = Vec::new();
    for &(s, id) in meta.sequences.iter().filter(|(s, _)| *s == split) {
        let dir = sequence_dir(root, s, id);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == ext));
        files.sort();
        let frames = files
            .iter()
            .map(|p| match meta.frame_format {
                FrameFormat::Fftn => io::load(p),
                FrameFormat::Ppm => read_ppm(p),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gt = vec![Vec::new(); frames.len()];
        for r in records.iter().filter(|r| r.sequence_id == id) {
            let slot = gt.get_mut(r.frame_id).ok_or_else(|| {
                Error::Format(format!(
                    "ground truth for missing frame {} of sequence {}",
                    r.frame_id, id
                ))
            })?;
            let track = slot.len();
            slot.push(GtObject {
                track,
                class: r.class,
                bbox: r.bbox(),
                occluded_fraction: r.occluded_fraction,
            });
        }
        out.push(Sequence { id, frames, gt });
    }
    Ok(out)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let meta = load_meta(root)?;
    Ok(Dataset {
        profile: meta.profile,
        seed: meta.seed,
        config: meta.config,
        train: load_split(root, Split::Train)?,
        val: load_split(root, Split::Val)?,
        test: load_split(root, Split::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quiet(seed: u64) -> SceneSpec {
        SceneSpec {
            jitter: 0.0,
            ..SceneSpec::new(seed, 64, 64, 20)
        }
    }

    #[test]
    fn zero_objects_background_only() {
        let spec = SceneSpec {
            objects: (0, 0),
            ..quiet(1)
        };
        let (frames, gt) = generate(&spec).unwrap();
        assert_eq!(frames.len(), 20);
        assert!(gt.iter().all(|g| g.is_empty()));
        assert!(frames.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn static_object_keeps_its_box() {
        let spec = SceneSpec {
            objects: (1, 1),
            max_speed: 0.0,
            ..quiet(2)
        };
        let (frames, gt) = generate(&spec).unwrap();
        assert!(gt
            .iter()
            .all(|g| g.len() == 1 && g[0].bbox == gt[0][0].bbox));
        assert!(frames.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn scripted_occluder_marks_exactly_its_frames() {
        let spec = SceneSpec {
            objects: (1, 1),
            max_speed: 0.0,
            ..quiet(3)
        };
        let (_, gt) = generate(&spec).unwrap();
        let b = gt[0][0].bbox;
        let occ = Occluder {
            rect: BBox::new(b.x_min, 0.0, b.x_min + 4.0, 64.0),
            start: 10,
            end: 12,
            opacity: 1.0,
            shade: 0.3,
        };
        let (frames, gt) = generate_with_occluders(&spec, &[occ]).unwrap();
        for (t, g) in gt.iter().enumerate() {
            let occluded = g[0].occluded_fraction > 0.0;
            assert_eq!(occluded, (10..=12).contains(&t), "frame {}", t);
        }
        let expected = 4.0 / b.width();
        assert!((gt[11][0].occluded_fraction - expected).abs() < 1e-6);
        assert_ne!(frames[9], frames[10]);
    }

    #[test]
    fn occlusion_fraction_pixel_oracle() {
        let obj = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(
            occluded_fraction(&obj, &[BBox::new(2.0, 0.0, 10.0, 10.0)], 16, 16),
            0.5
        );
        assert_eq!(
            occluded_fraction(&obj, &[BBox::new(0.0, 0.0, 4.0, 4.0)], 16, 16),
            1.0
        );
        assert_eq!(occluded_fraction(&obj, &[], 16, 16), 0.0);
    }

    #[test]
    fn unsatisfiable_placement_errors() {
        let spec = SceneSpec {
            objects: (5, 5),
            size: (30.0, 30.0),
            ..quiet(4)
        };
        assert!(generate(&spec).is_err());
        assert!(generate(&SceneSpec {
            length: 0,
            ..quiet(4)
        })
        .is_err());
    }

    #[test]
    fn ppm_round_trip_quantises() {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor::from_fn(&[3, 4, 5], |i| (i % 256) as f32 / 255.0);
        let p = dir.path().join("f.ppm");
        write_ppm(&p, &f).unwrap();
        let back = read_ppm(&p).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-6);
    }

    #[test]
    fn profile_definitions() {
        let easy = Profile::Easy.scene(64, 40);
        assert_eq!(easy.occluders, (0, 0));
        assert!(easy.size.0 >= 12.0);
        assert_eq!(
            "occlusion_heavy".parse::<Profile>().unwrap(),
            Profile::OcclusionHeavy
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scenes_are_deterministic_and_well_formed(seed in 0u64..1000, profile in 0usize..3) {
            let spec = SceneSpec { seed, ..Profile::ALL[profile].scene(64, 12) };
            let (frames, gt) = generate(&spec).unwrap();
            let (frames2, gt2) = generate(&spec).unwrap();
            prop_assert_eq!(&frames, &frames2);
            prop_assert_eq!(&gt, &gt2);
            for f in &frames {
                prop_assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            for g in &gt {
                for o in g {
                    prop_assert!(o.bbox.is_valid());
                    prop_assert!(o.bbox.x_min >= 0.0 && o.bbox.y_min >= 0.0);
                    prop_assert!(o.bbox.x_max <= 64.0 && o.bbox.y_max <= 64.0);
                    prop_assert!((0.0..=1.0).contains(&o.occluded_fraction));
                }
            }
            for p in gt.windows(2) {
                for (a, b) in p[0].iter().zip(&p[1]) {
                    let (ax, ay) = a.bbox.center();
                    let (bx, by) = b.bbox.center();
                    prop_assert!(((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() <= MAX_STEP_PX + 1e-4);
                }
            }
        }
    }
}
