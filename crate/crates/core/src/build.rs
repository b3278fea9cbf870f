//! Point clouds from RGB-D frames, voxel anchors, the initial global map and the
//! auxiliary virtual map.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::KdTree;
use crate::model::{FrameRgbd, Gaussian, GaussianMap, Quat, Vec3};

pub const DEFAULT_EPSILON: f64 = 0.03;
pub const DEFAULT_GAUSSIANS_PER_ANCHOR: usize = 10;
pub const DEFAULT_LIFT_STRIDE: usize = 4;
pub const INITIAL_OPACITY: f64 = 0.1;
/// Neighbors used for the density-based scale of virtual-map Gaussians.
pub const VIRTUAL_KNN: usize = 3;
const MIN_VIRTUAL_SCALE: f64 = 1e-4;
/// Nearest camera depth at which an anchor counts as observed.
pub const SEEN_MIN_DEPTH: f64 = 0.05;
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    /// Index of the frame each point was lifted from.
    pub source_frame: Vec<u32>,
}

impl ColoredPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: ColoredPointCloud) {
        self.points.extend(other.points);
        self.colors.extend(other.colors);
        self.source_frame.extend(other.source_frame);
    }

    pub fn check(&self) -> Result<()> {
        if self.points.len() != self.colors.len() || self.points.len() != self.source_frame.len() {
            return Err(Error::InvalidInput("point cloud arrays differ in length".into()));
        }
        if self.points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("point cloud contains NaN".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub epsilon: f64,
    pub occupied: BTreeSet<[i32; 3]>,
}

impl VoxelGrid {
    pub fn cell_of(&self, p: &Vec3) -> [i32; 3] {
        cell_of(p, self.epsilon)
    }

    pub fn center(&self, cell: &[i32; 3]) -> Vec3 {
        Vec3::new(cell[0] as f64, cell[1] as f64, cell[2] as f64) * self.epsilon
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn anchor_positions(&self) -> Vec<Vec3> {
        self.occupied.iter().map(|c| self.center(c)).collect()
    }
}

/// Round-to-nearest grid cell.
pub fn cell_of(p: &Vec3, epsilon: f64) -> [i32; 3] {
    [
        (p.x / epsilon).round() as i32,
        (p.y / epsilon).round() as i32,
        (p.z / epsilon).round() as i32,
    ]
}

/// One point per sampled pixel with valid depth.
pub fn lift_rgbd(frame: &FrameRgbd, frame_index: u32, stride: usize) -> ColoredPointCloud {
    let stride = stride.max(1);
    let mut cloud = ColoredPointCloud::default();
    for y in (0..frame.depth.height).step_by(stride) {
        for x in (0..frame.depth.width).step_by(stride) {
            let d = frame.depth.get(x, y);
            if !(d > 0.0) || !d.is_finite() {
                continue;
            }
            cloud.points.push(frame.pose.lift_pixel(x as f64, y as f64, d));
            cloud.colors.push(frame.color.get(x, y));
            cloud.source_frame.push(frame_index);
        }
    }
    cloud
}

/// Lifts every frame in parallel and concatenates in frame order.
pub fn lift_frames(frames: &[FrameRgbd], stride: usize) -> ColoredPointCloud {
    let parts: Vec<_> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| lift_rgbd(f, i as u32, stride))
        .collect();
    let mut cloud = ColoredPointCloud::default();
    for p in parts {
        cloud.extend(p);
    }
    cloud
}

pub fn voxelize(cloud: &ColoredPointCloud, epsilon: f64) -> Result<VoxelGrid> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("voxel size must be positive, got {epsilon}")));
    }
    Ok(VoxelGrid {
        epsilon,
        occupied: cloud.points.iter().map(|p| cell_of(p, epsilon)).collect(),
    })
}

/// Initial Gaussians of one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialAnchor {
    pub cell: [i32; 3],
    pub gaussians: Vec<Gaussian>,
    /// `true` when the normal came from local PCA, `false` for the viewing-direction fallback.
    pub pca_normal: bool,
}

/// In-plane standard deviation of the initial flats: twice the radius at which `K`
/// discs would tile the voxel face, so neighbors overlap and leave no gaps.
pub fn initial_flat_scale(epsilon: f64, k: usize) -> f64 {
    2.0 * epsilon / (std::f64::consts::PI * k as f64).sqrt()
}

/// Seeds `K` flat Gaussians per occupied voxel.
///
/// The flats lie on the voxel's PCA plane, spread on a sunflower pattern of radius `ε/2`
/// around the point centroid, with the voxel's mean color and opacity
/// [`INITIAL_OPACITY`]. `frame_centers[i]` is the camera center of frame `i`; it orients
/// normals and serves as the fallback when PCA is not available.
pub fn init_anchors(
    grid: &VoxelGrid,
    cloud: &ColoredPointCloud,
    k: usize,
    frame_centers: &[Vec3],
) -> Result<Vec<InitialAnchor>> {
    if k == 0 {
        return Err(Error::InvalidInput("need at least one Gaussian per anchor".into()));
    }
    cloud.check()?;
    let mut members: HashMap<[i32; 3], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let c = grid.cell_of(p);
        if grid.occupied.contains(&c) {
            members.entry(c).or_default().push(i);
        }
    }
    let cells: Vec<[i32; 3]> = grid.occupied.iter().copied().collect();
    cells
        .par_iter()
        .map(|cell| {
            let idx = members
                .get(cell)
                .ok_or_else(|| Error::InvalidInput(format!("voxel {cell:?} has no points")))?;
            Ok(seed_anchor(*cell, idx, cloud, k, grid.epsilon, frame_centers))
        })
        .collect()
}

fn seed_anchor(
    cell: [i32; 3],
    idx: &[usize],
    cloud: &ColoredPointCloud,
    k: usize,
    epsilon: f64,
    frame_centers: &[Vec3],
) -> InitialAnchor {
    let n = idx.len() as f64;
    let centroid = idx.iter().map(|&i| cloud.points[i]).sum::<Vec3>() / n;
    let mut color = [0.0; 3];
    for &i in idx {
        for c in 0..3 {
            color[c] += cloud.colors[i][c] / n;
        }
    }
    let mut view = Vec3::zeros();
    for &i in idx {
        if let Some(center) = frame_centers.get(cloud.source_frame[i] as usize) {
            let d = center - cloud.points[i];
            if d.norm() > 0.0 {
                view += d.normalize();
            }
        }
    }
    let view = if view.norm() > 1e-12 { view.normalize() } else { Vec3::z() };

    let (normal, pca_normal) = match pca_normal(idx.iter().map(|&i| &cloud.points[i])) {
        Some(n) => (if n.dot(&view) < 0.0 { -n } else { n }, true),
        None => (view, false),
    };
    let rotation = rotation_to_normal(&normal);
    let e1 = rotation * Vec3::x();
    let e2 = rotation * Vec3::y();
    let scale = initial_flat_scale(epsilon, k);
    let gaussians = (0..k)
        .map(|j| {
            let r = 0.5 * epsilon * (j as f64 / k as f64).sqrt();
            let theta = j as f64 * GOLDEN_ANGLE;
            let pos = centroid + (e1 * theta.cos() + e2 * theta.sin()) * r;
            Gaussian::flat(pos, [scale, scale], rotation, INITIAL_OPACITY, color)
        })
        .collect();
    InitialAnchor {
        cell,
        gaussians,
        pca_normal,
    }
}

/// Unit normal of the best-fit plane, or `None` for fewer than 3 points or collinear data.
pub fn pca_normal<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Option<Vec3> {
    let pts: Vec<&Vec3> = points.collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mean = pts.iter().copied().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = *p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(l2 > 0.0) || l1 <= 1e-9 * l2 || l1 - l0 <= 1e-9 * l2 {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).normalize())
}

/// Rotation taking the local z axis onto `normal`.
pub fn rotation_to_normal(normal: &Vec3) -> Quat {
    let n = normal.normalize();
    UnitQuaternion::rotation_between(&Vec3::z(), &n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI))
}

/// Global map built from initial anchors, in grid order.
pub fn init_global_map(anchors: Vec<InitialAnchor>, k: usize, epsilon: f64) -> Result<GaussianMap> {
    let mut map = GaussianMap::empty(k, epsilon);
    for a in anchors {
        map.push_anchor(a.cell, a.gaussians)?;
    }
    Ok(map)
}

/// Isotropic, fully opaque map lifted directly from the frames.
///
/// Each point becomes a Gaussian whose scale is the mean distance to its
/// [`VIRTUAL_KNN`] nearest neighbors. Every Gaussian is its own anchor (`K = 1`).
pub fn build_virtual_map(frames: &[FrameRgbd], stride: usize, epsilon: f64) -> Result<GaussianMap> {
    if frames.is_empty() {
        return Err(Error::InsufficientData("no frames".into()));
    }
    virtual_map_from_cloud(&lift_frames(frames, stride), epsilon)
}

pub fn virtual_map_from_cloud(cloud: &ColoredPointCloud, epsilon: f64) -> Result<GaussianMap> {
    cloud.check()?;
    if cloud.len() <= VIRTUAL_KNN {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least {}",
            cloud.len(),
            VIRTUAL_KNN + 1
        )));
    }
    let tree = KdTree::new(&cloud.points);
    let scales: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nn = tree.nearest(&cloud.points[i], VIRTUAL_KNN, Some(i));
            let mean = nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64;
            mean.max(MIN_VIRTUAL_SCALE)
        })
        .collect();
    let mut map = GaussianMap::empty(1, epsilon);
    for i in 0..cloud.len() {
        let g = Gaussian::isotropic(cloud.points[i], scales[i], 1.0, cloud.colors[i]);
        map.push_anchor(cell_of(&cloud.points[i], epsilon), vec![g])?;
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Visibility {
    Seen,
    Unseen,
}

/// Frustum and occlusion test of one position against one frame.
pub fn seen_by(p: &Vec3, frame: &FrameRgbd, epsilon: f64) -> bool {
    let pr = frame.pose.project(p);
    if !pr.in_frustum || pr.depth < SEEN_MIN_DEPTH {
        return false;
    }
    let x = pr.u.round().clamp(0.0, (frame.depth.width - 1) as f64) as usize;
    let y = pr.v.round().clamp(0.0, (frame.depth.height - 1) as f64) as usize;
    let surface = frame.depth.get(x, y);
    surface > 0.0 && pr.depth <= surface + epsilon
}

/// Per anchor (in grid order): seen iff some frame observes its center unoccluded.
pub fn classify_seen(grid: &VoxelGrid, frames: &[FrameRgbd]) -> Vec<Visibility> {
    classify_positions(&grid.anchor_positions(), frames, grid.epsilon)
}

pub fn classify_positions(positions: &[Vec3], frames: &[FrameRgbd], epsilon: f64) -> Vec<Visibility> {
    positions
        .par_iter()
        .map(|p| {
            if frames.iter().any(|f| seen_by(p, f, epsilon)) {
                Visibility::Seen
            } else {
                Visibility::Unseen
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::model::{CameraPose, Intrinsics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_frame(depth: f64) -> FrameRgbd {
        let k = Intrinsics::desk_default();
        FrameRgbd {
            color: Image::from_fn(k.width, k.height, |x, y| [x as f64 / 64.0, y as f64 / 48.0, 0.5]),
            depth: Image::new(k.width, k.height, depth),
            pose: CameraPose::new(Quat::identity(), Vec3::zeros(), k),
            contributor_id: 0,
        }
    }

    #[test]
    fn lift_center_pixel() {
        let mut f = flat_frame(0.0);
        let k = Intrinsics {
            fx: 40.0,
            fy: 40.0,
            cx: 4.0,
            cy: 3.0,
            width: 9,
            height: 7,
        };
        f.pose.intrinsics = k;
        f.color = Image::new(9, 7, [0.1, 0.2, 0.3]);
        f.depth = Image::new(9, 7, 0.0);
        f.depth.set(4, 3, 2.0);
        let c = lift_rgbd(&f, 0, 1);
        assert_eq!(c.points, vec![Vec3::new(0.0, 0.0, 2.0)]);
        assert_eq!(c.colors, vec![[0.1, 0.2, 0.3]]);
        f.depth = Image::new(9, 7, 0.0);
        assert!(lift_rgbd(&f, 0, 1).is_empty());
    }

    #[test]
    fn lift_then_project_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = flat_frame(1.0);
        f.pose = CameraPose::look_at(Vec3::new(0.2, 0.1, 0.3), Vec3::new(1.0, 2.0, 0.5), Vec3::z(), f.pose.intrinsics);
        for _ in 0..200 {
            let x = rng.random_range(0..64);
            let y = rng.random_range(0..48);
            f.depth.set(x, y, rng.random_range(0.2..4.0));
        }
        let cloud = lift_rgbd(&f, 0, 1);
        for p in &cloud.points {
            let pr = f.pose.project(p);
            assert!((pr.u - pr.u.round()).abs() < 1e-6 && (pr.v - pr.v.round()).abs() < 1e-6);
            let d = f.depth.get(pr.u.round() as usize, pr.v.round() as usize);
            assert!((pr.depth - d).abs() < 1e-6);
        }
    }

    #[test]
    fn voxelize_rounds_per_component() {
        let cloud = ColoredPointCloud {
            points: vec![Vec3::new(0.014, -0.016, 0.0)],
            colors: vec![[0.0; 3]],
            source_frame: vec![0],
        };
        let g = voxelize(&cloud, 0.03).unwrap();
        let anchors = g.anchor_positions();
        assert_eq!(anchors.len(), 1);
        assert!((anchors[0] - Vec3::new(0.0, -0.03, 0.0)).norm() < 1e-15);
        let on_grid = ColoredPointCloud {
            points: vec![Vec3::new(0.06, 0.09, -0.03)],
            colors: vec![[0.0; 3]],
            source_frame: vec![0],
        };
        assert_eq!(voxelize(&on_grid, 0.03).unwrap().occupied.into_iter().next().unwrap(), [2, 3, -1]);
        assert!(voxelize(&cloud, 0.0).is_err());
    }

    #[test]
    fn voxelize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = ColoredPointCloud {
            points: (0..3000).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect(),
            colors: vec![[0.0; 3]; 3000],
            source_frame: vec![0; 3000],
        };
        let g = voxelize(&cloud, 0.03).unwrap();
        let again = ColoredPointCloud {
            points: g.anchor_positions(),
            colors: vec![[0.0; 3]; g.len()],
            source_frame: vec![0; g.len()],
        };
        assert_eq!(voxelize(&again, 0.03).unwrap(), g);
        assert!(g.len() <= cloud.len());
    }

    fn planar_cloud(n: usize, seed: u64) -> ColoredPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ColoredPointCloud {
            points: (0..n)
                .map(|_| Vec3::new(rng.random_range(-0.014..0.014), rng.random_range(-0.014..0.014), 0.0))
                .collect(),
            colors: (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
            source_frame: vec![0; n],
        }
    }

    #[test]
    fn init_single_point_single_gaussian() {
        let cloud = ColoredPointCloud {
            points: vec![Vec3::new(0.005, 0.002, 0.001)],
            colors: vec![[0.3, 0.6, 0.9]],
            source_frame: vec![0],
        };
        let grid = voxelize(&cloud, 0.03).unwrap();
        let a = init_anchors(&grid, &cloud, 1, &[Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(a.len(), 1);
        let g = &a[0].gaussians[0];
        assert!((g.position - cloud.points[0]).norm() < 1e-15);
        assert_eq!(g.color, [0.3, 0.6, 0.9]);
        assert!(!a[0].pca_normal);
        // fallback normal points to the camera
        assert!(g.normal().dot(&Vec3::z()) > 0.99);
    }

    #[test]
    fn init_planar_pca_normal() {
        let cloud = planar_cloud(20, 2);
        let grid = voxelize(&cloud, 0.03).unwrap();
        let a = init_anchors(&grid, &cloud, 10, &[Vec3::new(0.1, 0.0, -1.0)]).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a[0].pca_normal);
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &cloud.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        lo -= Vec3::repeat(0.03);
        hi += Vec3::repeat(0.03);
        let anchor = grid.center(&a[0].cell);
        assert_eq!(a[0].gaussians.len(), 10);
        for g in &a[0].gaussians {
            // normal is ±z, oriented towards the camera below the plane
            assert!((g.normal().z + 1.0).abs() < 1e-9);
            assert_eq!(g.opacity, INITIAL_OPACITY);
            let offset = g.position - anchor;
            let p = anchor + offset;
            assert!((0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i]));
            g.check().unwrap();
        }
    }

    #[test]
    fn virtual_map_on_grid_has_grid_spacing() {
        let s = 0.05;
        let mut cloud = ColoredPointCloud::default();
        for x in 0..6 {
            for y in 0..5 {
                for z in 0..4 {
                    cloud.points.push(Vec3::new(x as f64, y as f64, z as f64) * s);
                    cloud.colors.push([0.5; 3]);
                    cloud.source_frame.push(0);
                }
            }
        }
        let m = virtual_map_from_cloud(&cloud, 0.03).unwrap();
        assert_eq!(m.len(), 120);
        for g in &m.gaussians {
            assert!((g.scale.x - s).abs() < 1e-6, "{}", g.scale.x);
            assert_eq!(g.opacity, 1.0);
            assert_eq!(g.rotation, Quat::identity());
            g.check().unwrap();
        }
    }

    #[test]
    fn virtual_map_needs_points() {
        let mut f = flat_frame(0.0);
        f.depth.set(3, 3, 1.0);
        f.depth.set(4, 3, 1.0);
        assert!(matches!(build_virtual_map(&[f.clone()], 1, 0.03), Err(Error::InsufficientData(_))));
        f.depth.set(3, 4, 1.0);
        f.depth.set(4, 4, 1.0);
        let m = build_virtual_map(&[f], 1, 0.03).unwrap();
        assert!(m.gaussians.iter().all(|g| g.scale.x > 0.0 && g.scale.x.is_finite()));
    }

    #[test]
    fn seen_classification() {
        let f = flat_frame(2.0);
        let positions = vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 3.0)];
        let vis = classify_positions(&positions, &[f], 0.03);
        assert_eq!(vis, vec![Visibility::Seen, Visibility::Unseen, Visibility::Unseen]);
    }
}
