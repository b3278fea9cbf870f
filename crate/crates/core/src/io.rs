//! File formats: 8-bit PNG, 32-bit PFM, ASCII PLY, JSON poses and frame bundles.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::build::ColoredPointCloud;
use crate::enhance::PseudoGT;
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image, RgbImage};
use crate::model::{quat_from_wxyz, quat_to_wxyz, CameraPose, FrameRgbd, GaussianMap, Intrinsics, Vec3};
use crate::render::RenderedViews;

fn image_err(e: impl std::fmt::Display) -> Error {
    Error::Image(e.to_string())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = ::image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, p) in buf.pixels_mut().enumerate() {
        let c = img.data[i];
        *p = ::image::Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]);
    }
    buf.save_with_format(path, ::image::ImageFormat::Png).map_err(image_err)
}

/// Gray PNG of `img / max`, clamped to `[0, 1]`.
pub fn write_png_gray(path: &Path, img: &GrayImage, max: f64) -> Result<()> {
    if !(max > 0.0) {
        return Err(Error::InvalidInput(format!("PNG normalization must be positive, got {max}")));
    }
    let mut buf = ::image::GrayImage::new(img.width as u32, img.height as u32);
    for (i, p) in buf.pixels_mut().enumerate() {
        *p = ::image::Luma([to_u8(img.data[i] / max)]);
    }
    buf.save_with_format(path, ::image::ImageFormat::Png).map_err(image_err)
}

pub fn read_png_rgb(path: &Path) -> Result<RgbImage> {
    let img = ::image::open(path).map_err(image_err)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        data,
    })
}

/// Single-channel little-endian PFM (`Pf`, negative scale, rows bottom to top).
pub fn write_pfm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = Vec::with_capacity(32 + 4 * img.len());
    write!(out, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            out.extend_from_slice(&(img.get(x, y) as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<GrayImage> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = Vec::new();
    for _ in 0..3 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Image("PFM header truncated".into()));
        }
        header.push(line.trim().to_string());
    }
    if header[0] != "Pf" {
        return Err(Error::Image(format!("only grayscale PFM is supported, found {:?}", header[0])));
    }
    let dims: Vec<usize> = header[1].split_whitespace().map(|t| t.parse().map_err(image_err)).collect::<Result<_>>()?;
    let [w, h] = dims[..] else {
        return Err(Error::Image(format!("bad PFM size line {:?}", header[1])));
    };
    let scale: f64 = header[2].parse().map_err(image_err)?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != 4 * w * h {
        return Err(Error::Image(format!("PFM holds {} bytes, expected {}", raw.len(), 4 * w * h)));
    }
    let mut img = Image::new(w, h, 0.0);
    for (i, c) in raw.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        img.set(i % w, h - 1 - i / w, v as f64);
    }
    Ok(img)
}

pub fn write_ply(path: &Path, cloud: &ColoredPointCloud) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        s.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, to_u8(c[0]), to_u8(c[1]), to_u8(c[2])));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Gaussian centers and colors as a point cloud.
pub fn map_points(map: &GaussianMap) -> ColoredPointCloud {
    let mut cloud = ColoredPointCloud::default();
    for g in &map.gaussians {
        cloud.points.push(g.position);
        cloud.colors.push(g.color);
        cloud.source_frame.push(0);
    }
    cloud
}

/// Camera pose as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Camera-to-world rotation `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// Camera center in world coordinates.
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
}

impl From<&CameraPose> for PoseRecord {
    fn from(p: &CameraPose) -> Self {
        let t = p.center();
        Self {
            rotation: quat_to_wxyz(&p.rotation),
            translation: [t.x, t.y, t.z],
            intrinsics: p.intrinsics,
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<CameraPose> {
        let pose = CameraPose::new(quat_from_wxyz(self.rotation), Vec3::from(self.translation), self.intrinsics);
        pose.check()?;
        Ok(pose)
    }
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Reads a pose file holding one pose record, a list of them, or frame metadata.
pub fn load_poses(path: &Path) -> Result<Vec<CameraPose>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PoseRecord),
        Many(Vec<PoseRecord>),
        Frame { pose: PoseRecord },
    }
    let records = match load_json::<OneOrMany>(path)? {
        OneOrMany::One(r) | OneOrMany::Frame { pose: r } => vec![r],
        OneOrMany::Many(v) => v,
    };
    records.iter().map(PoseRecord::to_pose).collect()
}

pub fn save_poses(path: &Path, poses: &[CameraPose]) -> Result<()> {
    save_json(path, &poses.iter().map(PoseRecord::from).collect::<Vec<_>>())
}

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    pose: PoseRecord,
    contributor_id: u32,
}

fn frame_stem(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:05}"))
}

/// Writes `frame_NNNNN.{png,pfm,json}` per frame. PNG colors are 8-bit.
pub fn save_frames(dir: &Path, frames: &[FrameRgbd]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let stem = frame_stem(dir, i);
        write_png_rgb(&stem.with_extension("png"), &f.color)?;
        write_pfm(&stem.with_extension("pfm"), &f.depth)?;
        save_json(
            &stem.with_extension("json"),
            &FrameMeta {
                pose: PoseRecord::from(&f.pose),
                contributor_id: f.contributor_id,
            },
        )?;
    }
    Ok(())
}

/// Loads every `frame_*.json` bundle of `dir` in file-name order.
pub fn load_frames(dir: &Path) -> Result<Vec<FrameRgbd>> {
    let mut metas: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("frame_"))
        })
        .collect();
    metas.sort();
    if metas.is_empty() {
        return Err(Error::InsufficientData(format!("no frame bundles in {}", dir.display())));
    }
    metas
        .iter()
        .map(|m| {
            let meta: FrameMeta = load_json(m)?;
            let pose = meta.pose.to_pose()?;
            let color = read_png_rgb(&m.with_extension("png"))?;
            let depth = read_pfm(&m.with_extension("pfm"))?;
            let frame = FrameRgbd {
                color,
                depth,
                pose,
                contributor_id: meta.contributor_id,
            };
            frame.check()?;
            Ok(frame)
        })
        .collect()
}

/// Color PNG plus depth and opacity as PFM (or normalized PNG when `pfm` is false).
pub fn save_rendered(stem: &Path, views: &RenderedViews, pfm: bool) -> Result<()> {
    write_png_rgb(&stem.with_extension("png"), &views.color)?;
    let depth = stem.with_file_name(format!("{}_depth", file_stem(stem)));
    let opacity = stem.with_file_name(format!("{}_opacity", file_stem(stem)));
    if pfm {
        write_pfm(&depth.with_extension("pfm"), &views.depth)?;
        write_pfm(&opacity.with_extension("pfm"), &views.opacity)?;
    } else {
        let max = views.depth.data.iter().cloned().fold(0.0, f64::max).max(1e-9);
        write_png_gray(&depth.with_extension("png"), &views.depth, max)?;
        write_png_gray(&opacity.with_extension("png"), &views.opacity, 1.0)?;
    }
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_string()
}

#[derive(Serialize)]
struct PseudoEntry {
    pose: PoseRecord,
    holes: usize,
}

#[derive(Serialize)]
struct PseudoManifest {
    tau: f64,
    /// Indices of requested poses whose view was dropped.
    skipped: Vec<usize>,
    views: Vec<PseudoEntry>,
}

/// `pseudo_NNNN.png`, `_depth.pfm`, `_confidence.pfm` per view and a `manifest.json`.
pub fn save_pseudo_gt(dir: &Path, set: &[PseudoGT], tau: f64, skipped: &[usize]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut views = Vec::with_capacity(set.len());
    for (i, p) in set.iter().enumerate() {
        let stem = dir.join(format!("pseudo_{i:04}"));
        write_png_rgb(&stem.with_extension("png"), &p.image)?;
        write_pfm(&dir.join(format!("pseudo_{i:04}_depth.pfm")), &p.depth)?;
        write_pfm(&dir.join(format!("pseudo_{i:04}_confidence.pfm")), &p.confidence)?;
        views.push(PseudoEntry {
            pose: PoseRecord::from(&p.pose),
            holes: p.holes.data.iter().filter(|h| **h).count(),
        });
    }
    save_json(
        &dir.join("manifest.json"),
        &PseudoManifest {
            tau,
            skipped: skipped.to_vec(),
            views,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Quat;

    #[test]
    fn pfm_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| x as f64 * 0.25 - y as f64 * 1.5);
        let p = dir.path().join("d.pfm");
        write_pfm(&p, &img).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), img);
        fs::write(&p, b"PF\n1 1\n-1\n\0\0\0\0").unwrap();
        assert!(read_pfm(&p).is_err());
    }

    #[test]
    fn frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let k = Intrinsics {
            fx: 6.0,
            fy: 6.0,
            cx: 3.5,
            cy: 2.5,
            width: 8,
            height: 6,
        };
        let pose = CameraPose::look_at(Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 0.5, 0.3), Vec3::z(), k);
        let frame = FrameRgbd {
            color: Image::from_fn(k.width, k.height, |x, y| [x as f64 / 8.0, y as f64 / 6.0, 0.5]),
            depth: Image::from_fn(k.width, k.height, |x, _| 1.0 + x as f64 * 0.125),
            pose,
            contributor_id: 2,
        };
        save_frames(dir.path(), std::slice::from_ref(&frame)).unwrap();
        let back = load_frames(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].depth, frame.depth);
        assert_eq!(back[0].contributor_id, 2);
        assert!((back[0].pose.center() - pose.center()).norm() < 1e-12);
        for (a, b) in back[0].color.data.iter().zip(&frame.color.data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn single_pose_file_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.json");
        let pose = CameraPose::new(Quat::identity(), Vec3::new(0.5, 0.5, 0.5), Intrinsics::desk_default());
        save_json(&p, &PoseRecord::from(&pose)).unwrap();
        assert_eq!(load_poses(&p).unwrap(), vec![pose]);
    }

    #[test]
    fn ply_header_counts_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = ColoredPointCloud {
            points: vec![Vec3::zeros(), Vec3::x()],
            colors: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            source_frame: vec![0, 0],
        };
        let p = dir.path().join("c.ply");
        write_ply(&p, &cloud).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("element vertex 2"));
        assert_eq!(text.lines().count(), 10 + 2);
    }
}
