use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use super::{objects_from_mask, ObjectAnnotation, Sample};
use crate::error::{Error, Result};
use crate::raster::{GrayImage, LabelMask, Plane};

pub const MANIFEST_SCHEMA: &str = "bseg-manifest/1";

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Any supported raster as 8-bit gray; colour goes through integer BT.601 luma.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(u32::from);
                ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
            })
            .collect(),
    };
    Plane::from_vec(w, h, data)
}

/// Writes binary PGM (P5) for `.pgm`, otherwise the format implied by the extension.
pub fn save_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.data(), w, h, ExtendedColorType::L8)
            .map_err(|e| image_err(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    } else {
        image::save_buffer(path, img.data(), w, h, ExtendedColorType::L8).map_err(|e| image_err(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative paths resolve against the manifest's directory.
    pub image: String,
    pub mask: String,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    schema: String,
    classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(classes: Vec<String>, base_dir: impl Into<PathBuf>) -> Self {
        Manifest {
            classes,
            records: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Reads a JSON-lines manifest. A first line carrying `schema` declares the
/// class names; without it classes are named `class0`, `class1`, ...
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut classes: Option<Vec<String>> = None;
    let mut records = Vec::new();
    let mut record_lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        if records.is_empty() && classes.is_none() && value.get("schema").is_some() {
            let header: ManifestHeader = serde_json::from_value(value)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if header.schema != MANIFEST_SCHEMA {
                return Err(Error::format(
                    path,
                    format!("unsupported schema {:?}, expected {MANIFEST_SCHEMA:?}", header.schema),
                ));
            }
            classes = Some(header.classes);
            continue;
        }
        let record: ManifestRecord = serde_json::from_value(value)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        records.push(record);
        record_lines.push(i + 1);
    }
    let classes = classes.unwrap_or_else(|| {
        let n = records
            .iter()
            .flat_map(|r| r.objects.iter().map(|o| o.class_id + 1))
            .max()
            .unwrap_or(1);
        (0..n).map(|i| format!("class{i}")).collect()
    });
    for (record, line) in records.iter().zip(&record_lines) {
        if let Some(o) = record.objects.iter().find(|o| o.class_id >= classes.len()) {
            return Err(Error::format(
                path,
                format!("line {line}: class {} but only {} classes declared", o.class_id, classes.len()),
            ));
        }
    }
    Ok(Manifest {
        classes,
        records,
        base_dir,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = ManifestHeader {
        schema: MANIFEST_SCHEMA.into(),
        classes: manifest.classes.clone(),
    };
    let mut write_line = |json: String| writeln!(out, "{json}").map_err(|e| Error::io(path, e));
    write_line(serde_json::to_string(&header)?)?;
    for r in &manifest.records {
        write_line(serde_json::to_string(r)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.pgm` and `<stem>_mask.pgm` into `dir`.
pub fn write_sample(dir: impl AsRef<Path>, stem: &str, sample: &Sample) -> Result<ManifestRecord> {
    let dir = dir.as_ref();
    let image = format!("{stem}.pgm");
    let mask = format!("{stem}_mask.pgm");
    save_gray(dir.join(&image), &sample.image)?;
    save_gray(dir.join(&mask), &sample.mask)?;
    Ok(ManifestRecord {
        image,
        mask,
        objects: sample.objects.clone(),
    })
}

/// File name of the manifest written by [`write_dataset`].
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes `scene_00000.pgm`, `scene_00000_mask.pgm`, ... and
/// [`MANIFEST_FILE`] into `dir`, creating it if needed. Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample], classes: Vec<String>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new(classes, dir);
    for (i, s) in samples.iter().enumerate() {
        manifest.records.push(write_sample(dir, &format!("scene_{i:05}"), s)?);
    }
    let path = dir.join(MANIFEST_FILE);
    write_manifest(&path, &manifest)?;
    Ok(path)
}

fn load_pair(image_path: &Path, mask_path: &Path) -> Result<(GrayImage, LabelMask)> {
    let image = load_gray(image_path)?;
    let mask = load_gray(mask_path)?;
    if image.dims() != mask.dims() {
        return Err(Error::format(
            mask_path,
            format!(
                "mask is {}x{} but image {} is {}x{}",
                mask.width(),
                mask.height(),
                image_path.display(),
                image.width(),
                image.height()
            ),
        ));
    }
    Ok((image, mask))
}

/// Loads every record of a manifest. Records without objects get them from
/// the mask's connected components.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(manifest_path)?;
    let samples = manifest
        .records
        .iter()
        .map(|r| {
            let mask_path = manifest.resolve(&r.mask);
            let (image, mask) = load_pair(&manifest.resolve(&r.image), &mask_path)?;
            if let Some(&v) = mask.data().iter().find(|&&v| v as usize > manifest.classes.len()) {
                return Err(Error::format(
                    &mask_path,
                    format!("label {v} exceeds the {} declared classes", manifest.classes.len()),
                ));
            }
            if r.objects.is_empty() {
                Sample::from_mask(image, mask)
            } else {
                Sample::new(image, mask, r.objects.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

/// A benchmark image with a binary mask; any non-zero mask pixel is a
/// barcode of class 0 and each connected blob is one object.
pub fn load_benchmark_pair(image_path: impl AsRef<Path>, mask_path: impl AsRef<Path>) -> Result<Sample> {
    let (image, mask) = load_pair(image_path.as_ref(), mask_path.as_ref())?;
    let mask = mask.map(|v| u8::from(v != 0));
    let objects = objects_from_mask(&mask);
    Sample::new(image, mask, objects)
}
