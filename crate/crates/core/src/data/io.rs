use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::{Mask, PolypSample};
use crate::error::{Error, Result};

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

/// Reads a mask and binarizes it at 128.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img: GrayImage = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    Ok(Mask::from_gray(&img))
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    mask.to_gray().save(path).map_err(|e| image_err(path, e))
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_png = Path::new(&name)
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn read_id_map(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut map = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let (name, id) = match (row.get(0), row.get(1)) {
            (Some(n), Some(i)) => (n.trim().to_string(), i.trim()),
            _ => return Err(Error::Data(format!("{}: rows need filename,polyp_id", path.display()))),
        };
        let id: usize = id
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad polyp id {id:?} for {name}", path.display())))?;
        if map.insert(name.clone(), id).is_some() {
            return Err(Error::Data(format!("{}: duplicate entry {name}", path.display())));
        }
    }
    Ok(map)
}

/// PNG files directly inside `dir`, sorted by name.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(png_names(dir)?.into_iter().map(|n| dir.join(n)).collect())
}

/// PNG frames of `image_dir` paired by filename with masks in `mask_dir`,
/// sorted by filename. Without an id map every frame is its own polyp.
pub fn load_dataset(image_dir: &Path, mask_dir: &Path, id_map: Option<&Path>) -> Result<Vec<PolypSample>> {
    let names = png_names(image_dir)?;
    if names.is_empty() {
        log::warn!("no PNG frames in {}", image_dir.display());
    }
    let ids = id_map.map(read_id_map).transpose()?;
    if let Some(ids) = &ids {
        if let Some(unknown) = ids.keys().find(|k| names.binary_search(k).is_err()) {
            return Err(Error::Data(format!("id map entry {unknown} names no frame")));
        }
    }
    let mut out = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let mask_path = mask_dir.join(name);
        if !mask_path.is_file() {
            return Err(Error::Data(format!("missing mask for {name}")));
        }
        let image = read_rgb(&image_dir.join(name))?;
        let mask = read_mask(&mask_path)?;
        if image.dimensions() != mask.dimensions() {
            return Err(Error::Data(format!(
                "{name}: image {:?} and mask {:?} differ in size",
                image.dimensions(),
                mask.dimensions()
            )));
        }
        let polyp_id = match &ids {
            Some(ids) => *ids
                .get(name)
                .ok_or_else(|| Error::Data(format!("{name} has no polyp id in the id map")))?,
            None => i,
        };
        out.push(PolypSample {
            image,
            mask,
            polyp_id,
            source_name: name.clone(),
        });
    }
    Ok(out)
}

/// Writes frames, masks and an id map in the layout [`load_dataset`] reads.
pub fn write_dataset(samples: &[PolypSample], root: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let id_path = root.join("id_map.csv");
    let mut w = csv::Writer::from_path(&id_path)?;
    w.write_record(["filename", "polyp_id"])?;
    for s in samples {
        write_rgb(&images.join(&s.source_name), &s.image)?;
        write_mask(&masks.join(&s.source_name), &s.mask)?;
        w.write_record([s.source_name.as_str(), &s.polyp_id.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&id_path, e))?;
    Ok((images, masks, id_path))
}
