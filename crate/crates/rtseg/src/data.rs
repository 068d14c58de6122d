//! Dataset reading/writing and the synthetic RGB-thermal scene generator.
//!
//! On-disk layout (normative for the CLI):
//!
//! ```text
//! root/rgb/<name>.png       8-bit 3-channel
//! root/thermal/<name>.png   8-bit 1-channel
//! root/labels/<name>.png    8-bit 1-channel, raw class ids (no palette)
//! root/<split>.txt          one basename per line, ordered
//! ```
//!
//! Labels are class ids 0..=8 plus 255 for ignore. The generator paints
//! seeded rectangles and ellipses whose thermal emissivity separates classes
//! regardless of illumination, while night mode collapses RGB contrast —
//! thermal carries the signal when the lights go out.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoder::ImageRaster;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::{IGNORE_LABEL, NUM_CLASSES};

/// Class id → name, in fixed order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "car",
    "person",
    "bike",
    "curve",
    "stop",
    "guardrail",
    "cone",
    "bump",
];

pub fn class_id(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == name)
}

/// H×W grid of class ids; validates every value on construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    ids: Vec<u8>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, ids: Vec<u8>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(Error::shape(format!(
                "label grid {height}x{width} needs {} ids, got {}",
                height * width,
                ids.len()
            )));
        }
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= NUM_CLASSES && id != IGNORE_LABEL {
                return Err(Error::data(format!(
                    "label id {id} at pixel ({}, {}) outside 0..{NUM_CLASSES} ∪ {{{IGNORE_LABEL}}}",
                    i / width,
                    i % width
                )));
            }
        }
        Ok(LabelGrid { height, width, ids })
    }

    pub fn filled(height: usize, width: usize, id: u8) -> Self {
        LabelGrid {
            height,
            width,
            ids: vec![id; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, id: u8) {
        self.ids[y * self.width + x] = id;
    }
}

/// One aligned RGB / thermal / label triple.
#[derive(Debug, Clone)]
pub struct SegmentationSample {
    pub rgb: ImageRaster,
    pub thermal: ImageRaster,
    pub labels: LabelGrid,
    pub name: String,
}

impl SegmentationSample {
    pub fn new(
        rgb: ImageRaster,
        thermal: ImageRaster,
        labels: LabelGrid,
        name: impl Into<String>,
    ) -> Result<Self> {
        let dims = (rgb.height(), rgb.width());
        if dims != (thermal.height(), thermal.width()) || dims != (labels.height(), labels.width()) {
            return Err(Error::shape(format!(
                "sample rasters disagree: rgb {dims:?}, thermal {:?}, labels {:?}",
                (thermal.height(), thermal.width()),
                (labels.height(), labels.width())
            )));
        }
        if rgb.channels() != 3 || thermal.channels() != 1 {
            return Err(Error::shape(format!(
                "sample needs 3-channel rgb and 1-channel thermal, got {} and {}",
                rgb.channels(),
                thermal.channels()
            )));
        }
        Ok(SegmentationSample {
            rgb,
            thermal,
            labels,
            name: name.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }
}

// ── Synthetic scenes ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Illumination {
    Day,
    Night,
}

impl std::str::FromStr for Illumination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Illumination::Day),
            "night" => Ok(Illumination::Night),
            other => Err(Error::config(format!(
                "unknown illumination {other}; expected day or night"
            ))),
        }
    }
}

/// Night collapses RGB class-background contrast by this factor while
/// thermal emissivity is illumination-invariant.
pub const NIGHT_CONTRAST: f64 = 0.1;

/// Night multiplies RGB sensor noise by this factor.
pub const NIGHT_RGB_NOISE: f64 = 2.5;

/// Per-class thermal emissivity: every foreground class sits at least 0.35
/// away from the background, so thermal separates classes at any hour.
pub const DEFAULT_EMISSIVITY: [f64; NUM_CLASSES] =
    [0.05, 0.75, 0.95, 0.55, 0.45, 0.65, 0.50, 0.85, 0.40];

/// Per-class daytime RGB color.
pub const DEFAULT_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.35, 0.35, 0.35], // background: asphalt gray
    [0.70, 0.15, 0.15], // car
    [0.20, 0.30, 0.75], // person
    [0.15, 0.65, 0.20], // bike
    [0.85, 0.80, 0.20], // curve
    [0.90, 0.50, 0.10], // stop
    [0.70, 0.70, 0.72], // guardrail
    [1.00, 0.45, 0.00], // cone
    [0.55, 0.20, 0.60], // bump
];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub emissivity: [f64; NUM_CLASSES],
    pub colors: [[f64; 3]; NUM_CLASSES],
    pub illumination: Illumination,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            min_objects: 3,
            max_objects: 6,
            emissivity: DEFAULT_EMISSIVITY,
            colors: DEFAULT_COLORS,
            illumination: Illumination::Day,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene: resolution must be positive"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::config(format!(
                "scene: min_objects {} exceeds max_objects {}",
                self.min_objects, self.max_objects
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("scene: noise must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// One placed object; later shapes paint over earlier ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedShape {
    pub class: u8,
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub half: (f64, f64),
}

impl PlacedShape {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.center.0) / self.half.0;
        let dx = (x as f64 + 0.5 - self.center.1) / self.half.1;
        match self.kind {
            ShapeKind::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
        }
    }
}

/// The seeded geometry draw for a scene; `generate_scene` paints exactly
/// these shapes in order, so re-rendering them reproduces the labels.
pub fn scene_geometry(spec: &SceneSpec) -> Vec<PlacedShape> {
    let mut rng = Rng::new(spec.seed).child(0);
    let span = spec.max_objects - spec.min_objects;
    let count = spec.min_objects + if span > 0 { rng.below(span + 1) } else { 0 };
    let min_dim = spec.height.min(spec.width) as f64;
    (0..count)
        .map(|_| {
            let class = 1 + rng.below(NUM_CLASSES - 1) as u8;
            let kind = if rng.uniform() < 0.5 {
                ShapeKind::Rectangle
            } else {
                ShapeKind::Ellipse
            };
            let half = (
                rng.range(min_dim / 10.0, min_dim / 3.5),
                rng.range(min_dim / 10.0, min_dim / 3.5),
            );
            let center = (
                rng.range(0.0, spec.height as f64),
                rng.range(0.0, spec.width as f64),
            );
            PlacedShape {
                class,
                kind,
                center,
                half,
            }
        })
        .collect()
}

/// Seeded synthetic sample: labels rendered exactly from the geometry,
/// thermal from per-class emissivity plus noise, RGB from per-class color
/// under the spec's illumination.
pub fn generate_scene(spec: &SceneSpec) -> Result<SegmentationSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let shapes = scene_geometry(spec);
    let mut labels = LabelGrid::filled(h, w, 0);
    for shape in &shapes {
        let y0 = (shape.center.0 - shape.half.0).floor().max(0.0) as usize;
        let y1 = ((shape.center.0 + shape.half.0).ceil() as usize).min(h);
        let x0 = (shape.center.1 - shape.half.1).floor().max(0.0) as usize;
        let x1 = ((shape.center.1 + shape.half.1).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                if shape.contains(y, x) {
                    labels.set(y, x, shape.class);
                }
            }
        }
    }

    let mut noise_rng = Rng::new(spec.seed).child(1);
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let mut thermal = vec![0.0; h * w];
    for (i, t) in thermal.iter_mut().enumerate() {
        let class = labels.ids()[i] as usize;
        *t = clamp(spec.emissivity[class] + noise_rng.normal(0.0, spec.noise));
    }

    let (contrast, rgb_noise) = match spec.illumination {
        Illumination::Day => (1.0, spec.noise),
        Illumination::Night => (NIGHT_CONTRAST, spec.noise * NIGHT_RGB_NOISE),
    };
    let bg = spec.colors[0];
    let mut rgb = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        let class = labels.ids()[i] as usize;
        for c in 0..3 {
            let value = bg[c] + contrast * (spec.colors[class][c] - bg[c])
                + noise_rng.normal(0.0, rgb_noise);
            rgb[c * h * w + i] = clamp(value);
        }
    }

    SegmentationSample::new(
        ImageRaster::new(3, h, w, rgb)?,
        ImageRaster::new(1, h, w, thermal)?,
        labels,
        format!("scene_{:08}", spec.seed),
    )
}

// ── PNG round trips ─────────────────────────────────────────────────

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn raster_to_rgb8(img: &ImageRaster) -> image::RgbImage {
    let (h, w) = (img.height(), img.width());
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([
            quantize(img.pixel(0, y, x)),
            quantize(img.pixel(1, y, x)),
            quantize(img.pixel(2, y, x)),
        ])
    })
}

fn raster_to_luma8(img: &ImageRaster) -> image::GrayImage {
    let (h, w) = (img.height(), img.width());
    image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(img.pixel(0, y as usize, x as usize))])
    })
}

fn load_png(path: &Path, what: &str, name: &str) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| {
        Error::data(format!(
            "cannot load {what} raster for {name} at {}: {e}",
            path.display()
        ))
    })
}

fn split_file(root: &Path, split: &str) -> PathBuf {
    root.join(format!("{split}.txt"))
}

/// Load every sample listed in `root/<split>.txt`, in file order.
pub fn load_dataset(root: &Path, split: &str) -> Result<Vec<SegmentationSample>> {
    let list_path = split_file(root, split);
    let listing = fs::read_to_string(&list_path).map_err(|e| {
        Error::data(format!("cannot read split file {}: {e}", list_path.display()))
    })?;
    let mut samples = Vec::new();
    for name in listing.lines().map(str::trim).filter(|l| !l.is_empty()) {
        samples.push(load_sample(root, name)?);
    }
    Ok(samples)
}

/// Load one sample by basename from the standard layout.
pub fn load_sample(root: &Path, name: &str) -> Result<SegmentationSample> {
    let rgb_img = load_png(&root.join("rgb").join(format!("{name}.png")), "rgb", name)?.to_rgb8();
    let (w, h) = (rgb_img.width() as usize, rgb_img.height() as usize);
    let mut rgb = vec![0.0; 3 * h * w];
    for (x, y, px) in rgb_img.enumerate_pixels() {
        for c in 0..3 {
            rgb[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }

    let thr_img = load_png(
        &root.join("thermal").join(format!("{name}.png")),
        "thermal",
        name,
    )?
    .to_luma8();
    let mut thermal = vec![0.0; (thr_img.height() * thr_img.width()) as usize];
    let tw = thr_img.width() as usize;
    for (x, y, px) in thr_img.enumerate_pixels() {
        thermal[y as usize * tw + x as usize] = px.0[0] as f64 / 255.0;
    }

    let lbl_img = load_png(
        &root.join("labels").join(format!("{name}.png")),
        "labels",
        name,
    )?
    .to_luma8();
    let ids: Vec<u8> = lbl_img.pixels().map(|p| p.0[0]).collect();

    SegmentationSample::new(
        ImageRaster::new(3, h, w, rgb)?,
        ImageRaster::new(
            1,
            thr_img.height() as usize,
            thr_img.width() as usize,
            thermal,
        )?,
        LabelGrid::new(lbl_img.height() as usize, lbl_img.width() as usize, ids)
            .map_err(|e| Error::data(format!("{name}: {e}")))?,
        name,
    )
}

/// Write samples in the standard layout plus a split file listing them in
/// order. Labels round-trip losslessly; images within 1/255.
pub fn write_dataset(samples: &[SegmentationSample], root: &Path, split: &str) -> Result<()> {
    for sub in ["rgb", "thermal", "labels"] {
        fs::create_dir_all(root.join(sub))?;
    }
    let mut listing = String::new();
    for sample in samples {
        let name = &sample.name;
        raster_to_rgb8(&sample.rgb)
            .save(root.join("rgb").join(format!("{name}.png")))
            .map_err(|e| Error::data(format!("writing rgb/{name}.png: {e}")))?;
        raster_to_luma8(&sample.thermal)
            .save(root.join("thermal").join(format!("{name}.png")))
            .map_err(|e| Error::data(format!("writing thermal/{name}.png: {e}")))?;
        let (h, w) = (sample.labels.height(), sample.labels.width());
        let lbl = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([sample.labels.get(y as usize, x as usize)])
        });
        lbl.save(root.join("labels").join(format!("{name}.png")))
            .map_err(|e| Error::data(format!("writing labels/{name}.png: {e}")))?;
        listing.push_str(name);
        listing.push('\n');
    }
    fs::write(split_file(root, split), listing)?;
    Ok(())
}

/// Load a standalone 3-channel raster (for `predict`).
pub fn read_rgb_raster(path: &Path) -> Result<ImageRaster> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot load rgb raster {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut values = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            values[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    ImageRaster::new(3, h, w, values)
}

/// Load a standalone 1-channel raster (for `predict`).
pub fn read_thermal_raster(path: &Path) -> Result<ImageRaster> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot load thermal raster {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut values = vec![0.0; h * w];
    for (x, y, px) in img.enumerate_pixels() {
        values[y as usize * w + x as usize] = px.0[0] as f64 / 255.0;
    }
    ImageRaster::new(1, h, w, values)
}

/// Write a label grid as an 8-bit single-channel raster.
pub fn write_label_raster(path: &Path, labels: &LabelGrid) -> Result<()> {
    let img = image::GrayImage::from_fn(labels.width() as u32, labels.height() as u32, |x, y| {
        image::Luma([labels.get(y as usize, x as usize)])
    });
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
}

/// Mean per-channel contrast between a class's pixels and background pixels;
/// the generator's regression tests and the book both use this measure.
pub fn class_contrast(values: &ImageRaster, labels: &LabelGrid, class: u8) -> Option<f64> {
    let ch = values.channels();
    let mut class_sum = vec![0.0; ch];
    let mut class_n = 0usize;
    let mut bg_sum = vec![0.0; ch];
    let mut bg_n = 0usize;
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let id = labels.get(y, x);
            if id == class {
                for (c, s) in class_sum.iter_mut().enumerate() {
                    *s += values.pixel(c, y, x);
                }
                class_n += 1;
            } else if id == 0 {
                for (c, s) in bg_sum.iter_mut().enumerate() {
                    *s += values.pixel(c, y, x);
                }
                bg_n += 1;
            }
        }
    }
    if class_n == 0 || bg_n == 0 {
        return None;
    }
    let contrast = (0..ch)
        .map(|c| (class_sum[c] / class_n as f64 - bg_sum[c] / bg_n as f64).abs())
        .sum::<f64>()
        / ch as f64;
    Some(contrast)
}
