//! Zero-level-set extraction and per-vertex colors.

mod tables;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::fields::{ParamStore, Variant};
use crate::nn::{Matrix, Real};
use tables::{EDGE_TABLE, TRI_TABLE};

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// `[−1, 1]³`, the normalized scene volume.
    pub const UNIT: Aabb = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };
}

impl Default for Aabb {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Scalar samples on a regular lattice, `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    pub fn point(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        lattice_point(&self.bounds, self.resolution, [x, y, z])
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }

    /// Evaluates `f` on every lattice point, one `z` slice per call.
    pub fn sample(resolution: usize, bounds: Aabb, mut f: impl FnMut(&[[f64; 3]]) -> Vec<f64>) -> Self {
        assert!(resolution >= 2, "grid resolution must be at least 2");
        let mut values = Vec::with_capacity(resolution * resolution * resolution);
        let mut slice = Vec::with_capacity(resolution * resolution);
        for z in 0..resolution {
            slice.clear();
            for y in 0..resolution {
                for x in 0..resolution {
                    slice.push(lattice_point(&bounds, resolution, [x, y, z]));
                }
            }
            let v = f(&slice);
            assert_eq!(v.len(), slice.len());
            values.extend(v);
        }
        Self {
            resolution,
            bounds,
            values,
        }
    }
}

fn lattice_point(b: &Aabb, res: usize, i: [usize; 3]) -> [f64; 3] {
    core::array::from_fn(|k| b.min[k] + (b.max[k] - b.min[k]) * i[k] as f64 / (res - 1) as f64)
}

/// Evaluates the learned SDF on a lattice.
pub fn extract_sdf_grid<T: Real>(params: &ParamStore<T>, resolution: usize, bounds: Aabb) -> SdfGrid {
    SdfGrid::sample(resolution, bounds, |pts| {
        let m = Matrix::from_vec(
            pts.len(),
            3,
            pts.iter().flat_map(|p| p.map(T::lit)).collect(),
        );
        params
            .field
            .sdf_forward(&params.values, &m, false, false)
            .s
            .iter()
            .map(|v| v.as_f64())
            .collect()
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
}

impl ColoredMesh {
    pub fn mesh(&self) -> Mesh {
        Mesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
        }
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Polygonizes `{s = iso}` with linear interpolation along sign-changing
/// edges. Vertices are shared between cells, so closed surfaces inside the
/// grid come out watertight. Faces wind counter-clockwise seen from the
/// positive side.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> Mesh {
    let r = grid.resolution;
    let mut mesh = Mesh::default();
    // Lattice edge (lower corner index, axis) -> vertex id.
    let mut edge_vertex: BTreeMap<(usize, u8), u32> = BTreeMap::new();
    for z in 0..r - 1 {
        for y in 0..r - 1 {
            for x in 0..r - 1 {
                let corner = |c: usize| [x + CORNERS[c][0], y + CORNERS[c][1], z + CORNERS[c][2]];
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for c in 0..8 {
                    let [i, j, k] = corner(c);
                    vals[c] = grid.get(i, j, k);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut ids = [0u32; 12];
                for (e, &(a, b)) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (corner(a), corner(b));
                    let lo = if ca <= cb { ca } else { cb };
                    let axis = (0..3).find(|&k| ca[k] != cb[k]).expect("edge spans one axis") as u8;
                    let key = (grid.index(lo[0], lo[1], lo[2]), axis);
                    ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[a], vals[b]);
                        let t = if (vb - va).abs() > 1e-300 { ((iso - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                        let pa = grid.point(ca[0], ca[1], ca[2]);
                        let pb = grid.point(cb[0], cb[1], cb[2]);
                        mesh.vertices.push(core::array::from_fn(|k| pa[k] + t * (pb[k] - pa[k])));
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [ids[tri[0] as usize], ids[tri[2] as usize], ids[tri[1] as usize]];
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    mesh
}

/// How vertex colors are read from a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ColorMode {
    /// `c_g(x)` of a color_neus model.
    Global,
    /// The view-dependent baseline network queried with `d = −g/‖g‖`.
    Intermediate,
    /// `c_g(x)` of a model trained without the relight network.
    Naive,
}

impl ColorMode {
    pub fn name(self) -> &'static str {
        match self {
            ColorMode::Global => "global",
            ColorMode::Intermediate => "intermediate",
            ColorMode::Naive => "naive",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "global" => Some(ColorMode::Global),
            "intermediate" => Some(ColorMode::Intermediate),
            "naive" => Some(ColorMode::Naive),
            _ => None,
        }
    }

    fn accepts(self, v: Variant) -> bool {
        matches!(
            (self, v),
            (ColorMode::Global, Variant::ColorNeus | Variant::Naive)
                | (ColorMode::Naive, Variant::Naive)
                | (ColorMode::Intermediate, Variant::NeusBaseline)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MeshError {
    #[error("color mode {mode} is incompatible with a {variant} model")]
    VariantMismatch {
        mode: &'static str,
        variant: &'static str,
    },
}

const COLOR_CHUNK: usize = 4096;

/// Per-vertex colors in the requested mode.
pub fn extract_vertex_colors<T: Real>(
    params: &ParamStore<T>,
    vertices: &[[f64; 3]],
    mode: ColorMode,
) -> Result<Vec<[f64; 3]>, MeshError> {
    let variant = params.field.variant();
    if !mode.accepts(variant) {
        return Err(MeshError::VariantMismatch {
            mode: mode.name(),
            variant: variant.name(),
        });
    }
    let mut out = Vec::with_capacity(vertices.len());
    for chunk in vertices.chunks(COLOR_CHUNK) {
        let pts = Matrix::from_vec(chunk.len(), 3, chunk.iter().flat_map(|p| p.map(T::lit)).collect());
        let sdf = params.field.sdf_forward(&params.values, &pts, true, false);
        let colors = match mode {
            ColorMode::Global | ColorMode::Naive => {
                // Directions are unused on this path; pass zeros.
                let zero = Matrix::zeros(chunk.len(), 3);
                let c = params.field.color_forward(&params.values, &pts, &zero, &sdf, false);
                c.global.expect("global color head")
            }
            ColorMode::Intermediate => {
                let mut dirs = Matrix::zeros(chunk.len(), 3);
                for r in 0..chunk.len() {
                    let g = sdf.gradients.row(r);
                    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    if n > T::zero() {
                        for k in 0..3 {
                            dirs.set(r, k, -g[k] / n);
                        }
                    }
                }
                params.field.color_forward(&params.values, &pts, &dirs, &sdf, false).color
            }
        };
        for r in 0..chunk.len() {
            let c = colors.row(r);
            out.push([0, 1, 2].map(|k| c[k].as_f64().clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

/// Grid evaluation, marching cubes, then vertex colors.
pub fn extract_colored_mesh<T: Real>(
    params: &ParamStore<T>,
    resolution: usize,
    bounds: Aabb,
    mode: ColorMode,
) -> Result<ColoredMesh, MeshError> {
    if !mode.accepts(params.field.variant()) {
        return Err(MeshError::VariantMismatch {
            mode: mode.name(),
            variant: params.field.variant().name(),
        });
    }
    let grid = extract_sdf_grid(params, resolution, bounds);
    let mesh = marching_cubes(&grid, 0.0);
    let colors = extract_vertex_colors(params, &mesh.vertices, mode)?;
    Ok(ColoredMesh {
        vertices: mesh.vertices,
        triangles: mesh.triangles,
        colors,
    })
}

/// Face normal (unnormalized) of a triangle.
pub fn face_normal(v: &[[f64; 3]], t: &[u32; 3]) -> [f64; 3] {
    let a = v[t[0] as usize];
    let b = v[t[1] as usize];
    let c = v[t[2] as usize];
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    [u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]]
}
