//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.jsonl                 one DatasetRecord per line
//! <root>/annotations/frame_000000.json  polygons of one frame
//! <root>/masks/frame_000000.png         union of all objects
//! <root>/masks/frame_000000_c0.png      objects of class 0
//! <root>/images/frame_000000.png        rendered camera image (optional)
//! <root>/overlays/frame_000000.png      image with mask outline (optional)
//! ```
//!
//! Every file is written to a temporary name and renamed into place, and a
//! frame is appended to the manifest only after all of its files exist.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageFormat, RgbImage};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::camera::{CameraModel, RangeEstimate};
use crate::error::{Error, Result};
use crate::geometry::{pose_delta, PoseVector, RigidTransform};
use crate::propagation::{FrameAnnotation, PolygonAnnotation};
use crate::raster::{rasterize_polygons, Mask};

pub const MANIFEST: &str = "manifest.jsonl";

/// Polygon coordinates are stored with this many fractional digits.
pub const COORD_DECIMALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationMethod {
    Odometry,
    Fiducial,
}

impl std::fmt::Display for LocalizationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LocalizationMethod::Odometry => "odometry",
            LocalizationMethod::Fiducial => "fiducial",
        })
    }
}

pub fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn serialize_fixed_polygon<S: Serializer>(
    polygon: &[[f64; 2]],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let raw: Vec<[Box<RawValue>; 2]> = polygon
        .iter()
        .map(|p| {
            let f = |v: f64| {
                RawValue::from_string(format!("{v:.COORD_DECIMALS$}"))
                    .map_err(serde::ser::Error::custom)
            };
            Ok([f(p[0])?, f(p[1])?])
        })
        .collect::<std::result::Result<_, S::Error>>()?;
    raw.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationObject {
    pub class_id: u32,
    #[serde(serialize_with = "serialize_fixed_polygon")]
    pub polygon: Vec<[f64; 2]>,
}

/// Annotation file contents, fields in their serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub frame_id: u64,
    pub pose: [f64; 6],
    pub pose_delta: [f64; 6],
    pub distance_m: f64,
    pub method: LocalizationMethod,
    pub objects: Vec<AnnotationObject>,
}

impl AnnotationFile {
    pub fn to_frame(&self) -> Result<FrameAnnotation> {
        let polygons = self
            .objects
            .iter()
            .map(|o| {
                PolygonAnnotation::new(
                    o.class_id,
                    o.polygon.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameAnnotation {
            frame_id: self.frame_id,
            polygons,
            camera_pose: RigidTransform::from_pose_vector(&PoseVector::from_array(self.pose)),
            timestamp: None,
            hidden: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("<annotation>", e))
    }
}

/// Rounds every vertex to the stored precision.
pub fn quantize_frame(frame: &FrameAnnotation) -> FrameAnnotation {
    let mut out = frame.clone();
    for p in &mut out.polygons {
        for v in &mut p.vertices {
            v.x = quantize(v.x);
            v.y = quantize(v.y);
        }
    }
    out
}

/// Union mask of every polygon, clipped to the image.
pub fn rasterize_mask(frame: &FrameAnnotation, cam: &CameraModel) -> Mask {
    rasterize_polygons(
        frame.polygons.iter().map(|p| p.vertices.as_slice()),
        cam.width,
        cam.height,
    )
}

/// One mask per class present in the frame.
pub fn class_masks(frame: &FrameAnnotation, cam: &CameraModel) -> BTreeMap<u32, Mask> {
    let mut out: BTreeMap<u32, Mask> = BTreeMap::new();
    for p in &frame.polygons {
        out.entry(p.class_id)
            .or_insert_with(|| Mask::new(cam.width, cam.height))
            .fill(&crate::raster::polygon_spans(&p.vertices, cam.width, cam.height));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMaskPath {
    pub class_id: u32,
    pub path: String,
}

/// Manifest line. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub frame_id: u64,
    pub image_path: Option<String>,
    pub mask_path: String,
    pub class_mask_paths: Vec<ClassMaskPath>,
    pub annotation_path: String,
    pub overlay_path: Option<String>,
    pub pose_used: PoseVector,
    pub pose_delta: [f64; 6],
    pub range_estimate: RangeEstimate,
    pub localization_method: LocalizationMethod,
}

/// Everything needed to emit one frame.
pub struct FrameOutput<'a> {
    pub frame: &'a FrameAnnotation,
    pub initial_pose: &'a PoseVector,
    pub range: &'a RangeEstimate,
    pub method: LocalizationMethod,
    pub image: Option<&'a RgbImage>,
    pub overlay: bool,
}

fn frame_stem(frame_id: u64) -> String {
    format!("frame_{frame_id:06}")
}

fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn encode_png(data: &[u8], w: u32, h: u32, color: ExtendedColorType, path: &Path) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut buf, data, w, h, color, ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            source: e,
        }
    })?;
    Ok(buf.into_inner())
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = encode_png(mask.data(), mask.width(), mask.height(), ExtendedColorType::L8, path)?;
    write_atomic(path, &bytes)
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<()> {
    let bytes = encode_png(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8, path)?;
    write_atomic(path, &bytes)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Mask::from_raw(w, h, img.into_raw())
}

pub fn read_annotation_file(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn read_annotation(path: &Path) -> Result<FrameAnnotation> {
    read_annotation_file(path)?.to_frame()
}

/// Builds the annotation file for a (quantized) frame.
pub fn annotation_for(
    frame: &FrameAnnotation,
    initial_pose: &PoseVector,
    distance_m: f64,
    method: LocalizationMethod,
) -> Result<AnnotationFile> {
    let pose = frame.camera_pose.to_pose_vector()?;
    Ok(AnnotationFile {
        frame_id: frame.frame_id,
        pose: pose.to_array(),
        pose_delta: pose_delta(&pose, initial_pose).0,
        distance_m,
        method,
        objects: frame
            .polygons
            .iter()
            .map(|p| AnnotationObject {
                class_id: p.class_id,
                polygon: p.vertices.iter().map(|v| [v.x, v.y]).collect(),
            })
            .collect(),
    })
}

/// Writes frames and appends their records to `manifest.jsonl`.
///
/// [`DatasetWriter::write_frame`] only needs `&self` and may run on many
/// threads; [`DatasetWriter::append`] is the single sequencer for the manifest.
pub struct DatasetWriter {
    root: PathBuf,
    cam: CameraModel,
    manifest: File,
}

impl DatasetWriter {
    pub fn create(root: &Path, cam: &CameraModel) -> Result<Self> {
        for sub in ["annotations", "masks", "images", "overlays"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let path = root.join(MANIFEST);
        let manifest = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            cam: cam.clone(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_frame(&self, out: &FrameOutput<'_>) -> Result<DatasetRecord> {
        let id = out.frame.frame_id;
        self.write_frame_inner(out).map_err(|e| e.in_frame(id))
    }

    fn write_frame_inner(&self, out: &FrameOutput<'_>) -> Result<DatasetRecord> {
        let frame = quantize_frame(out.frame);
        let stem = frame_stem(frame.frame_id);
        let rel = |sub: &str, name: String| format!("{sub}/{name}");

        let annotation = annotation_for(&frame, out.initial_pose, out.range.mean, out.method)?;
        let annotation_path = rel("annotations", format!("{stem}.json"));
        write_atomic(&self.root.join(&annotation_path), (annotation.to_json()? + "\n").as_bytes())?;

        let mask = rasterize_mask(&frame, &self.cam);
        let mask_path = rel("masks", format!("{stem}.png"));
        write_mask_png(&self.root.join(&mask_path), &mask)?;

        let mut class_mask_paths = Vec::new();
        for (class_id, m) in class_masks(&frame, &self.cam) {
            let path = rel("masks", format!("{stem}_c{class_id}.png"));
            write_mask_png(&self.root.join(&path), &m)?;
            class_mask_paths.push(ClassMaskPath { class_id, path });
        }

        let mut image_path = None;
        let mut overlay_path = None;
        if let Some(img) = out.image {
            let p = rel("images", format!("{stem}.png"));
            write_rgb_png(&self.root.join(&p), img)?;
            image_path = Some(p);
            if out.overlay {
                let p = rel("overlays", format!("{stem}.png"));
                write_rgb_png(&self.root.join(&p), &crate::simulator::overlay(img, &mask))?;
                overlay_path = Some(p);
            }
        }

        Ok(DatasetRecord {
            frame_id: frame.frame_id,
            image_path,
            mask_path,
            class_mask_paths,
            annotation_path,
            overlay_path,
            pose_used: PoseVector::from_array(annotation.pose),
            pose_delta: annotation.pose_delta,
            range_estimate: *out.range,
            localization_method: out.method,
        })
    }

    pub fn append(&mut self, record: &DatasetRecord) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let line = serde_json::to_string(record).map_err(|e| Error::json(&path, e))?;
        writeln!(self.manifest, "{line}").map_err(|e| Error::io(&path, e))?;
        self.manifest.flush().map_err(|e| Error::io(&path, e))
    }
}

pub fn read_manifest(root: &Path) -> Result<Vec<DatasetRecord>> {
    let path = root.join(MANIFEST);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(&path, e))?);
    }
    Ok(out)
}
