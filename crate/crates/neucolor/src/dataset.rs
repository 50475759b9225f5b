//! On-disk dataset layout:
//!
//! ```text
//! DIR/images/*.png        8-bit RGB, indexed in filename order
//! DIR/masks/*.png         optional, same names; gray > 127 is foreground
//! DIR/cameras.json        {"scale_mat": [16], "frames": [{"image", "intrinsics": [9], "world_to_camera": [16]}]}
//! ```
//!
//! Matrices are row-major. `scale_mat` is a similarity mapping world
//! coordinates into the normalized frame where the object lies inside the
//! unit sphere; loaded poses are expressed in that frame.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use neucolor_core::dataset::{Dataset, Image};
use neucolor_core::geometry::{CameraPose, Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_string};

pub const CAMERAS_FILE: &str = "cameras.json";
pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: String,
    pub intrinsics: [f64; 9],
    pub world_to_camera: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasFile {
    pub scale_mat: [f64; 16],
    pub frames: Vec<FrameEntry>,
}

pub const IDENTITY4: [f64; 16] = [
    1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
];

/// `x_n = scale · rotation · x_w + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub offset: Vec3,
}

impl Similarity {
    pub fn from_rows(m: &[f64; 16]) -> std::result::Result<Self, String> {
        if m[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err("last row must be (0, 0, 0, 1)".into());
        }
        let a = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let det = a.determinant();
        if !(det > 1e-300) || !det.is_finite() {
            return Err("not invertible or not orientation preserving".into());
        }
        let scale = det.cbrt();
        let rotation = a / scale;
        if (rotation.transpose() * rotation - Mat3::identity()).norm() > 1e-6 {
            return Err("not a similarity (rotation times uniform scale plus offset)".into());
        }
        Ok(Self {
            scale,
            rotation,
            offset: Vec3::new(m[3], m[7], m[11]),
        })
    }

    pub fn to_rows(&self) -> [f64; 16] {
        let a = self.rotation * self.scale;
        [
            a[(0, 0)], a[(0, 1)], a[(0, 2)], self.offset.x,
            a[(1, 0)], a[(1, 1)], a[(1, 2)], self.offset.y,
            a[(2, 0)], a[(2, 1)], a[(2, 2)], self.offset.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }
}

fn rigid_from_rows(m: &[f64; 16]) -> std::result::Result<(Mat3, Vec3), String> {
    if m[12..] != [0.0, 0.0, 0.0, 1.0] {
        return Err("last row must be (0, 0, 0, 1)".into());
    }
    let r = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    if (r.transpose() * r - Mat3::identity()).norm() > 1e-6 || r.determinant() < 0.0 {
        return Err("rotation block is not a proper rotation".into());
    }
    Ok((r, Vec3::new(m[3], m[7], m[11])))
}

fn rigid_to_rows(r: &Mat3, t: &Vec3) -> [f64; 16] {
    [
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        0.0, 0.0, 0.0, 1.0,
    ]
}

/// A world-frame camera expressed in the normalized frame.
pub fn pose_from_world(
    world_to_camera: &[f64; 16],
    intrinsics: &[f64; 9],
    scale: &Similarity,
) -> std::result::Result<CameraPose, String> {
    let (rw, tw) = rigid_from_rows(world_to_camera)?;
    let k = Mat3::from_row_slice(intrinsics);
    if k.try_inverse().is_none() || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
        return Err("intrinsics must be an invertible upper-triangular pinhole matrix".into());
    }
    let rn = rw * scale.rotation.transpose();
    let tn = tw * scale.scale - rn * scale.offset;
    Ok(CameraPose::from_rotation(&rn, tn, k))
}

/// Inverse of [`pose_from_world`].
pub fn pose_to_world(pose: &CameraPose, scale: &Similarity) -> std::result::Result<[f64; 16], String> {
    let rn = pose.rotation().map_err(|e| e.to_string())?;
    let rw = rn * scale.rotation;
    let tw = (rn * scale.offset + pose.translation) / scale.scale;
    Ok(rigid_to_rows(&rw, &tw))
}

/// A dataset read from disk together with its normalization transform.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub scale_mat: [f64; 16],
}

fn png_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    Ok((w, h, pixels))
}

fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.pixels().map(|p| p.0[0] > 127).collect()))
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let cam_path = dir.join(CAMERAS_FILE);
    let cams: CamerasFile =
        serde_json::from_str(&read_string(&cam_path)?).map_err(|e| Error::format(&cam_path, e.to_string()))?;
    let scale = Similarity::from_rows(&cams.scale_mat).map_err(|e| Error::format(&cam_path, format!("scale_mat: {e}")))?;
    let mut by_name: BTreeMap<&str, &FrameEntry> = BTreeMap::new();
    for f in &cams.frames {
        if by_name.insert(f.image.as_str(), f).is_some() {
            return Err(Error::format(&cam_path, format!("duplicate camera for {}", f.image)));
        }
    }
    let img_dir = dir.join(IMAGES_DIR);
    let names = png_files(&img_dir)?;
    if names.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", img_dir.display())));
    }
    for f in &cams.frames {
        if names.binary_search(&f.image).is_err() {
            return Err(Error::Dataset(format!("camera entry {} has no image in {}", f.image, img_dir.display())));
        }
    }
    let mask_dir = dir.join(MASKS_DIR);
    let has_masks = mask_dir.is_dir();
    let mut ds = Dataset::default();
    for name in &names {
        let frame = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Dataset(format!("image {name} has no camera in {}", cam_path.display())))?;
        let pose = pose_from_world(&frame.world_to_camera, &frame.intrinsics, &scale)
            .map_err(|e| Error::format(&cam_path, format!("camera for {name}: {e}")))?;
        let path = img_dir.join(name);
        let (width, height, pixels) = read_rgb(&path)?;
        let mask = if has_masks {
            let mpath = mask_dir.join(name);
            let (mw, mh, bits) = read_mask(&mpath)?;
            if (mw, mh) != (width, height) {
                return Err(Error::format(&mpath, format!("mask is {mw}x{mh} but image is {width}x{height}")));
            }
            Some(bits)
        } else {
            None
        };
        ds.names.push(name.clone());
        ds.images.push(Image {
            width,
            height,
            pixels,
            mask,
        });
        ds.poses.push(pose);
    }
    Ok(LoadedDataset {
        dataset: ds,
        scale_mat: cams.scale_mat,
    })
}

pub fn encode_png_rgb(width: usize, height: usize, pixels: &[[u8; 3]]) -> Vec<u8> {
    let raw: Vec<u8> = pixels.iter().flatten().copied().collect();
    let img = image::RgbImage::from_raw(width as u32, height as u32, raw).expect("pixel count matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_png_mask(width: usize, height: usize, mask: &[bool]) -> Vec<u8> {
    let raw: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, raw).expect("pixel count matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    atomic_write(path, &encode_png_rgb(width, height, pixels))
}

pub fn read_png(path: &Path) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    read_rgb(path)
}

/// Writes the layout above. Names default to `000.png`, `001.png`, ...
pub fn save_dataset(dir: &Path, ds: &Dataset, scale_mat: &[f64; 16]) -> Result<()> {
    let scale = Similarity::from_rows(scale_mat).map_err(|e| Error::Config(format!("scale_mat: {e}")))?;
    let mut frames = Vec::with_capacity(ds.len());
    for (i, (img, pose)) in ds.images.iter().zip(&ds.poses).enumerate() {
        let name = ds.names.get(i).cloned().unwrap_or_else(|| format!("{i:03}.png"));
        write_png(&dir.join(IMAGES_DIR).join(&name), img.width, img.height, &img.pixels)?;
        if let Some(mask) = &img.mask {
            atomic_write(&dir.join(MASKS_DIR).join(&name), &encode_png_mask(img.width, img.height, mask))?;
        }
        let k = pose.intrinsics;
        frames.push(FrameEntry {
            image: name,
            intrinsics: [
                k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(1, 0)], k[(1, 1)], k[(1, 2)], k[(2, 0)], k[(2, 1)], k[(2, 2)],
            ],
            world_to_camera: pose_to_world(pose, &scale).map_err(Error::Dataset)?,
        });
    }
    let file = CamerasFile {
        scale_mat: *scale_mat,
        frames,
    };
    let json = serde_json::to_string_pretty(&file).expect("camera file serializes");
    atomic_write(&dir.join(CAMERAS_FILE), json.as_bytes())
}

/// Paths of the PNG files in a directory, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(png_files(dir)?.into_iter().map(|n| dir.join(n)).collect())
}
