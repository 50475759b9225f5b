//! Mesh and image metrics: unit normalization, ICP, squared chamfer in cm²,
//! PSNR and SSIM.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::SVD;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Mat3, Vec3};
use crate::mesher::Mesh;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Squared meters to squared centimeters.
pub const M2_TO_CM2: f64 = 1e4;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("empty mesh")]
    EmptyMesh,
    #[error("empty point set")]
    EmptyPointSet,
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("image sizes differ: {0} vs {1} pixels")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub chamfer_cm2: f64,
    pub icp_iterations: usize,
    pub icp_rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn bounding_box(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Scales and translates points so the bounding box is centered at the
/// origin with longest side 1.
pub fn normalize_points(points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>, EvalError> {
    if points.is_empty() {
        return Err(EvalError::EmptyPointSet);
    }
    let (lo, hi) = bounding_box(points);
    let side = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(side > 0.0) || !side.is_finite() {
        return Err(EvalError::Degenerate("bounding box has zero extent"));
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    Ok(points
        .iter()
        .map(|p| [(p[0] - center[0]) / side, (p[1] - center[1]) / side, (p[2] - center[2]) / side])
        .collect())
}

/// [`normalize_points`] on the vertices; the connectivity is kept.
pub fn normalize_mesh(mesh: &Mesh) -> Result<Mesh, EvalError> {
    if mesh.vertices.is_empty() {
        return Err(EvalError::EmptyMesh);
    }
    Ok(Mesh {
        vertices: normalize_points(&mesh.vertices)?,
        triangles: mesh.triangles.clone(),
    })
}

fn triangle_area(mesh: &Mesh, t: &[u32; 3]) -> f64 {
    let [a, b, c] = t.map(|i| Vec3::from(mesh.vertices[i as usize]));
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Draws `n` points uniformly by area from the surface.
pub fn sample_surface<R: Rng>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<Vec<[f64; 3]>, EvalError> {
    if mesh.triangles.is_empty() {
        return Err(EvalError::EmptyMesh);
    }
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| triangle_area(mesh, t)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| EvalError::Degenerate("mesh has zero area"))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = mesh.triangles[pick.sample(rng)];
        let [a, b, c] = t.map(|i| Vec3::from(mesh.vertices[i as usize]));
        let r1 = num_traits::Float::sqrt(rng.random::<f64>());
        let r2 = rng.random::<f64>();
        let p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
        out.push([p.x, p.y, p.z]);
    }
    Ok(out)
}

const KD_LEAF: usize = 8;

/// Static k-d tree over a point set for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    index: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            index: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= KD_LEAF {
            return;
        }
        let (bl, bh) = bounding_box(&self.points[lo..hi]);
        let axis = (0..3)
            .max_by(|&a, &b| (bh[a] - bl[a]).total_cmp(&(bh[b] - bl[b])))
            .unwrap_or(0);
        let mid = lo + (hi - lo) / 2;
        let mut order: Vec<usize> = (lo..hi).collect();
        order.select_nth_unstable_by(mid - lo, |&i, &j| self.points[i][axis].total_cmp(&self.points[j][axis]));
        let pts: Vec<[f64; 3]> = order.iter().map(|&i| self.points[i]).collect();
        let idx: Vec<usize> = order.iter().map(|&i| self.index[i]).collect();
        self.points[lo..hi].copy_from_slice(&pts);
        self.index[lo..hi].copy_from_slice(&idx);
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Index (into the construction slice) and squared distance of the
    /// nearest point. Panics on an empty tree.
    pub fn nearest(&self, q: &[f64; 3]) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest query on an empty tree");
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.points.len(), &mut best);
        (self.index[best.0], best.1)
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi - lo <= KD_LEAF {
            for i in lo..hi {
                let d = dist2(q, &self.points[i]);
                if d < best.1 {
                    *best = (i, d);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let d = dist2(q, &self.points[mid]);
        if d < best.1 {
            *best = (mid, d);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[mid][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        if diff * diff < best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn mean_nn_dist2(from: &[[f64; 3]], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest(p).1).sum::<f64>() / from.len() as f64
}

/// Symmetric mean squared nearest-neighbor distance, in cm² for inputs in meters.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyPointSet);
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok((mean_nn_dist2(a, &tb) + mean_nn_dist2(b, &ta)) * M2_TO_CM2)
}

/// Rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vec3::from(*p) + self.translation;
        [q.x, q.y, q.z]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        num_traits::Float::acos(c)
    }
}

fn centroid(points: &[[f64; 3]]) -> Vec3 {
    let mut c = Vec3::zeros();
    for p in points {
        c += Vec3::from(*p);
    }
    c / points.len() as f64
}

/// Least-squares rigid fit with `T(src[i]) ≈ dst[i]`.
pub fn kabsch(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<RigidTransform, EvalError> {
    assert_eq!(src.len(), dst.len());
    if src.len() < 3 {
        return Err(EvalError::Degenerate("fewer than three correspondences"));
    }
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (Vec3::from(*s) - cs) * (Vec3::from(*d) - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(EvalError::Degenerate("SVD failed")),
    };
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

fn check_spread(points: &[[f64; 3]]) -> Result<(), EvalError> {
    if points.len() < 3 {
        return Err(EvalError::Degenerate("fewer than three points"));
    }
    let c = centroid(points);
    let mut cov = Mat3::zeros();
    for p in points {
        let d = Vec3::from(*p) - c;
        cov += d * d.transpose();
    }
    let sv = cov.singular_values();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(EvalError::Degenerate("points are collinear"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps the source onto the target.
    pub transform: RigidTransform,
    pub iterations: usize,
    pub rmse: f64,
    /// RMSE at the start of each iteration, then the final value.
    pub rmse_history: Vec<f64>,
}

/// Point-to-point ICP. Stops when the RMSE improves by less than `tol` or
/// after `max_iters` refits.
pub fn icp_align(
    source: &[[f64; 3]],
    target: &[[f64; 3]],
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult, EvalError> {
    if source.is_empty() || target.is_empty() {
        return Err(EvalError::EmptyPointSet);
    }
    check_spread(source)?;
    check_spread(target)?;
    let tree = KdTree::new(target);
    let mut transform = RigidTransform::identity();
    let mut history = Vec::new();
    let mut matched = vec![[0.0; 3]; source.len()];
    let match_all = |t: &RigidTransform, matched: &mut [[f64; 3]]| -> f64 {
        let mut sum = 0.0;
        for (m, p) in matched.iter_mut().zip(source) {
            let (j, d) = tree.nearest(&t.apply(p));
            *m = target[j];
            sum += d;
        }
        num_traits::Float::sqrt(sum / source.len() as f64)
    };
    let mut rmse = match_all(&transform, &mut matched);
    history.push(rmse);
    let mut iterations = 0;
    while iterations < max_iters {
        let candidate = kabsch(source, &matched)?;
        let mut next_matched = vec![[0.0; 3]; source.len()];
        let next = match_all(&candidate, &mut next_matched);
        iterations += 1;
        if next > rmse {
            break;
        }
        let improvement = rmse - next;
        transform = candidate;
        matched = next_matched;
        rmse = next;
        history.push(rmse);
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult {
        transform,
        iterations,
        rmse,
        rmse_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChamferOptions {
    pub samples: usize,
    /// Use mesh vertices instead of area-weighted surface samples.
    pub vertices_only: bool,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    pub seed: u64,
}

impl Default for ChamferOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            vertices_only: false,
            icp_max_iters: 50,
            icp_tol: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferReport {
    pub chamfer_cm2: f64,
    pub icp_iterations: usize,
    pub icp_rmse: f64,
}

/// Unit-normalized point set of a mesh per `opts`.
pub fn mesh_points(mesh: &Mesh, opts: &ChamferOptions, stream: u64) -> Result<Vec<[f64; 3]>, EvalError> {
    let mesh = normalize_mesh(mesh)?;
    if opts.vertices_only {
        return Ok(mesh.vertices);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    sample_surface(&mesh, opts.samples, &mut rng)
}

/// ICP-aligns `pred` onto `gt` and returns their chamfer distance. Both are
/// expected to be unit-normalized already.
pub fn aligned_chamfer(
    pred: &[[f64; 3]],
    gt: &[[f64; 3]],
    opts: &ChamferOptions,
) -> Result<ChamferReport, EvalError> {
    let icp = icp_align(pred, gt, opts.icp_max_iters, opts.icp_tol)?;
    let moved: Vec<[f64; 3]> = pred.iter().map(|p| icp.transform.apply(p)).collect();
    Ok(ChamferReport {
        chamfer_cm2: chamfer_distance(&moved, gt)?,
        icp_iterations: icp.iterations,
        icp_rmse: icp.rmse,
    })
}

/// Normalize both meshes, sample, align `pred` onto `gt`, then measure.
/// Both meshes draw from the same random stream, so identical inputs give 0.
pub fn mesh_chamfer(pred: &Mesh, gt: &Mesh, opts: &ChamferOptions) -> Result<ChamferReport, EvalError> {
    let a = mesh_points(pred, opts, 0)?;
    let b = mesh_points(gt, opts, 0)?;
    aligned_chamfer(&a, &b, opts)
}

fn check_dims(a: usize, b: usize, w: usize, h: usize) -> Result<(), EvalError> {
    if a != w * h || b != w * h {
        return Err(EvalError::DimensionMismatch(a.max(b), w * h));
    }
    Ok(())
}

/// `−10 log₁₀(MSE)` over all channels; capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::DimensionMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptyPointSet);
    }
    let mut sum = 0.0;
    for (p, q) in a.iter().zip(b) {
        for k in 0..3 {
            let d = p[k] - q[k];
            sum += d * d;
        }
    }
    let mse = sum / (3 * a.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * num_traits::Float::log10(mse)).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) * 0.5;
    let w: Vec<f64> = (0..size)
        .map(|i| num_traits::Float::exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w × h` plane with a 1-D kernel.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over channels and valid window positions, for values in
/// `[0, 1]`. The window shrinks to the image when smaller than 11 pixels.
pub fn ssim(a: &[[f64; 3]], b: &[[f64; 3]], width: usize, height: usize) -> Result<f64, EvalError> {
    check_dims(a.len(), b.len(), width, height)?;
    if a.is_empty() {
        return Err(EvalError::EmptyPointSet);
    }
    let mut size = SSIM_WINDOW.min(width).min(height);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = a.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let (mx, _, _) = filter_valid(&x, width, height, &k);
        let (my, _, _) = filter_valid(&y, width, height, &k);
        let (sxx, _, _) = filter_valid(&xx, width, height, &k);
        let (syy, _, _) = filter_valid(&yy, width, height, &k);
        let (sxy, _, _) = filter_valid(&xy, width, height, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
            let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}
