//! Simplicial meshes (1D segments, 2D triangles) with face adjacency,
//! boundary tags, material regions, and periodic face pairing.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("non-positive target edge length h = {0}")]
    NonPositiveH(f64),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("malformed mesh file (line {line}): {msg}")]
    Malformed { line: usize, msg: String },
    #[error("element {elem} has non-positive signed volume {volume:e}")]
    Inverted { elem: usize, volume: f64 },
    #[error("face shared by more than two elements: vertices {0:?}")]
    NonManifold(Vec<usize>),
    #[error("boundary face ({elem}, {face}) carries no tag")]
    UntaggedFace { elem: usize, face: usize },
    #[error(
        "periodic pairing along {axis}: face ({elem}, {face}) has no partner; \
         vertex {vertex} at {coords:?} has no translated counterpart"
    )]
    UnpairedFace {
        axis: Axis,
        elem: usize,
        face: usize,
        vertex: usize,
        coords: Vec<f64>,
    },
    #[error("periodic pairing along {axis}: {min} faces on the min surface but {max} on the max surface")]
    PairCountMismatch { axis: Axis, min: usize, max: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mesh coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }

    pub fn min_tag(self) -> BoundaryTag {
        match self {
            Axis::X => BoundaryTag::XMin,
            Axis::Y => BoundaryTag::YMin,
        }
    }

    pub fn max_tag(self) -> BoundaryTag {
        match self {
            Axis::X => BoundaryTag::XMax,
            Axis::Y => BoundaryTag::YMax,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum BoundaryTag {
    XMin,
    XMax,
    YMin,
    YMax,
    ZTop,
    ZBottom,
    Electrode,
    PmlOuter,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 8] = [
        BoundaryTag::XMin,
        BoundaryTag::XMax,
        BoundaryTag::YMin,
        BoundaryTag::YMax,
        BoundaryTag::ZTop,
        BoundaryTag::ZBottom,
        BoundaryTag::Electrode,
        BoundaryTag::PmlOuter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::XMin => "x_min",
            BoundaryTag::XMax => "x_max",
            BoundaryTag::YMin => "y_min",
            BoundaryTag::YMax => "y_max",
            BoundaryTag::ZTop => "z_top",
            BoundaryTag::ZBottom => "z_bottom",
            BoundaryTag::Electrode => "electrode",
            BoundaryTag::PmlOuter => "pml_outer",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoundaryTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown boundary tag `{s}`"))
    }
}

/// Material region of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Region {
    /// Photoconductive layer (drift-diffusion is solved here).
    Semiconductor,
    /// Non-dispersive dielectric (e.g. substrate).
    Dielectric,
    Metal,
    Vacuum,
    Pml,
}

impl Region {
    pub fn id(self) -> usize {
        match self {
            Region::Semiconductor => 0,
            Region::Dielectric => 1,
            Region::Metal => 2,
            Region::Vacuum => 3,
            Region::Pml => 4,
        }
    }

    pub fn from_id(id: usize) -> Option<Region> {
        Some(match id {
            0 => Region::Semiconductor,
            1 => Region::Dielectric,
            2 => Region::Metal,
            3 => Region::Vacuum,
            4 => Region::Pml,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Semiconductor => "semiconductor",
            Region::Dielectric => "dielectric",
            Region::Metal => "metal",
            Region::Vacuum => "vacuum",
            Region::Pml => "pml",
        }
    }
}

impl FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        (0..5)
            .filter_map(Region::from_id)
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown region `{s}`"))
    }
}

/// What lies across one element face.
#[derive(Debug, Clone, PartialEq)]
pub enum FaceRef {
    Interior {
        elem: usize,
        face: usize,
        /// `perm[i]` is the neighbor-face vertex slot holding this face's vertex `i`.
        perm: Vec<usize>,
    },
    Boundary(BoundaryTag),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
    regions: Vec<Region>,
    faces: Vec<Vec<FaceRef>>,
}

/// Local vertex slots of face `f` of a `dim`-simplex.
pub fn face_vertex_slots(dim: usize, f: usize) -> Vec<usize> {
    match dim {
        1 => vec![f],
        2 => vec![f, (f + 1) % 3],
        _ => unreachable!("unsupported dimension"),
    }
}

impl Mesh {
    /// Assembles a mesh from raw parts. Every boundary face must be present in
    /// `tags`; adjacency is computed by matching face vertex sets.
    pub fn from_parts(
        dim: usize,
        vertices: Vec<[f64; 2]>,
        elements: Vec<Vec<usize>>,
        regions: Vec<Region>,
        tags: &HashMap<(usize, usize), BoundaryTag>,
    ) -> Result<Mesh, MeshError> {
        if !(dim == 1 || dim == 2) {
            return Err(MeshError::Degenerate(format!("dimension {dim} not supported")));
        }
        if elements.len() != regions.len() {
            return Err(MeshError::Degenerate("region count differs from element count".into()));
        }
        if elements.is_empty() {
            return Err(MeshError::Degenerate("mesh has no elements".into()));
        }
        for (k, el) in elements.iter().enumerate() {
            if el.len() != dim + 1 {
                return Err(MeshError::Degenerate(format!(
                    "element {k} has {} vertices, expected {}",
                    el.len(),
                    dim + 1
                )));
            }
            if let Some(&v) = el.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::Degenerate(format!("element {k} references missing vertex {v}")));
            }
        }
        let mut mesh = Mesh {
            dim,
            vertices,
            elements,
            regions,
            faces: Vec::new(),
        };
        for k in 0..mesh.elements.len() {
            let vol = mesh.signed_volume(k);
            if vol <= 0.0 {
                return Err(MeshError::Inverted { elem: k, volume: vol });
            }
        }

        let nf = dim + 1;
        let mut by_key: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for k in 0..mesh.elements.len() {
            for f in 0..nf {
                let mut key = mesh.face_vertices(k, f);
                key.sort_unstable();
                by_key.entry(key).or_default().push((k, f));
            }
        }
        let mut faces = vec![vec![FaceRef::Boundary(BoundaryTag::ZTop); nf]; mesh.elements.len()];
        for (key, owners) in &by_key {
            match owners.as_slice() {
                [(k, f)] => {
                    let tag = tags
                        .get(&(*k, *f))
                        .copied()
                        .ok_or(MeshError::UntaggedFace { elem: *k, face: *f })?;
                    faces[*k][*f] = FaceRef::Boundary(tag);
                }
                [(k1, f1), (k2, f2)] => {
                    let a = mesh.face_vertices(*k1, *f1);
                    let b = mesh.face_vertices(*k2, *f2);
                    let perm_ab: Vec<usize> =
                        a.iter().map(|v| b.iter().position(|w| w == v).unwrap()).collect();
                    let perm_ba: Vec<usize> =
                        b.iter().map(|v| a.iter().position(|w| w == v).unwrap()).collect();
                    faces[*k1][*f1] = FaceRef::Interior {
                        elem: *k2,
                        face: *f2,
                        perm: perm_ab,
                    };
                    faces[*k2][*f2] = FaceRef::Interior {
                        elem: *k1,
                        face: *f1,
                        perm: perm_ba,
                    };
                }
                _ => return Err(MeshError::NonManifold(key.clone())),
            }
        }
        mesh.faces = faces;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn element(&self, k: usize) -> &[usize] {
        &self.elements[k]
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn region(&self, k: usize) -> Region {
        self.regions[k]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn face(&self, k: usize, f: usize) -> &FaceRef {
        &self.faces[k][f]
    }

    pub fn face_tag(&self, k: usize, f: usize) -> Option<BoundaryTag> {
        match &self.faces[k][f] {
            FaceRef::Boundary(t) => Some(*t),
            FaceRef::Interior { .. } => None,
        }
    }

    /// Global vertex indices of face `f` of element `k`, in local face order.
    pub fn face_vertices(&self, k: usize, f: usize) -> Vec<usize> {
        face_vertex_slots(self.dim, f)
            .into_iter()
            .map(|s| self.elements[k][s])
            .collect()
    }

    /// All boundary faces carrying `tag`.
    pub fn faces_with_tag(&self, tag: BoundaryTag) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in 0..self.n_elements() {
            for f in 0..self.n_faces_per_element() {
                if self.face_tag(k, f) == Some(tag) {
                    out.push((k, f));
                }
            }
        }
        out
    }

    pub fn signed_volume(&self, k: usize) -> f64 {
        let el = &self.elements[k];
        match self.dim {
            1 => self.vertices[el[1]][0] - self.vertices[el[0]][0],
            _ => {
                let [x0, y0] = self.vertices[el[0]];
                let [x1, y1] = self.vertices[el[1]];
                let [x2, y2] = self.vertices[el[2]];
                0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
            }
        }
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.signed_volume(k)).sum()
    }

    pub fn element_centroid(&self, k: usize) -> [f64; 2] {
        let el = &self.elements[k];
        let n = el.len() as f64;
        let mut c = [0.0; 2];
        for &v in el {
            c[0] += self.vertices[v][0] / n;
            c[1] += self.vertices[v][1] / n;
        }
        c
    }

    pub fn face_centroid(&self, k: usize, f: usize) -> [f64; 2] {
        let vs = self.face_vertices(k, f);
        let n = vs.len() as f64;
        let mut c = [0.0; 2];
        for v in vs {
            c[0] += self.vertices[v][0] / n;
            c[1] += self.vertices[v][1] / n;
        }
        c
    }

    /// Outward unit normal of a face (mesh coordinates).
    pub fn face_normal(&self, k: usize, f: usize) -> [f64; 2] {
        match self.dim {
            1 => [if f == 0 { -1.0 } else { 1.0 }, 0.0],
            _ => {
                let vs = self.face_vertices(k, f);
                let [xa, ya] = self.vertices[vs[0]];
                let [xb, yb] = self.vertices[vs[1]];
                let (tx, ty) = (xb - xa, yb - ya);
                let len = (tx * tx + ty * ty).sqrt();
                // counter-clockwise elements: outward normal is the tangent rotated by -90°
                [ty / len, -tx / len]
            }
        }
    }

    /// Bounding box (min, max) of the vertex coordinates.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for a in 0..self.dim {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        for a in self.dim..2 {
            lo[a] = 0.0;
            hi[a] = 0.0;
        }
        (lo, hi)
    }

    fn edge_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.elements.iter().flat_map(move |el| {
            let n = el.len();
            (0..n).flat_map(move |i| {
                ((i + 1)..n).map(move |j| {
                    let a = self.vertices[el[i]];
                    let b = self.vertices[el[j]];
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
            })
        })
    }

    pub fn min_edge(&self) -> f64 {
        self.edge_lengths().fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge(&self) -> f64 {
        self.edge_lengths().fold(0.0, f64::max)
    }

    /// Extracts the elements satisfying `keep` into a new mesh. Faces cut from
    /// discarded neighbors become boundary faces tagged by `cut_tag(normal)`.
    /// Returns the sub-mesh and the parent element index of each new element.
    pub fn submesh(
        &self,
        keep: impl Fn(Region) -> bool,
        cut_tag: impl Fn([f64; 2]) -> BoundaryTag,
    ) -> Result<(Mesh, Vec<usize>), MeshError> {
        let parent: Vec<usize> = (0..self.n_elements()).filter(|&k| keep(self.regions[k])).collect();
        if parent.is_empty() {
            return Err(MeshError::Degenerate("sub-mesh selection is empty".into()));
        }
        let mut new_index = vec![usize::MAX; self.n_elements()];
        for (i, &k) in parent.iter().enumerate() {
            new_index[k] = i;
        }
        let mut vmap = vec![usize::MAX; self.n_vertices()];
        let mut vertices = Vec::new();
        let mut elements = Vec::with_capacity(parent.len());
        for &k in &parent {
            let el = self.elements[k]
                .iter()
                .map(|&v| {
                    if vmap[v] == usize::MAX {
                        vmap[v] = vertices.len();
                        vertices.push(self.vertices[v]);
                    }
                    vmap[v]
                })
                .collect();
            elements.push(el);
        }
        let mut tags = HashMap::new();
        for (i, &k) in parent.iter().enumerate() {
            for f in 0..self.n_faces_per_element() {
                match &self.faces[k][f] {
                    FaceRef::Boundary(t) => {
                        tags.insert((i, f), *t);
                    }
                    FaceRef::Interior { elem, .. } if new_index[*elem] == usize::MAX => {
                        tags.insert((i, f), cut_tag(self.face_normal(k, f)));
                    }
                    FaceRef::Interior { .. } => {}
                }
            }
        }
        let regions = parent.iter().map(|&k| self.regions[k]).collect();
        let sub = Mesh::from_parts(self.dim, vertices, elements, regions, &tags)?;
        Ok((sub, parent))
    }

    /// Returns a copy with every vertex coordinate multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Mesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            v[0] *= s;
            v[1] *= s;
        }
        m
    }

    /// Checks the mutual-consistency invariant of interior faces.
    pub fn check_adjacency(&self) -> Result<(), String> {
        for k in 0..self.n_elements() {
            for f in 0..self.n_faces_per_element() {
                if let FaceRef::Interior { elem, face, perm } = &self.faces[k][f] {
                    match &self.faces[*elem][*face] {
                        FaceRef::Interior { elem: e2, face: f2, perm: p2 }
                            if *e2 == k && *f2 == f =>
                        {
                            if perm.iter().enumerate().any(|(i, &j)| p2[j] != i) {
                                return Err(format!("inconsistent permutation at ({k}, {f})"));
                            }
                        }
                        _ => return Err(format!("face ({k}, {f}) not mirrored")),
                    }
                }
            }
        }
        Ok(())
    }

    // ----- file format -----

    /// Parses the plain-text `dgmesh` format.
    pub fn parse(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, msg: &str| MeshError::Malformed {
            line,
            msg: msg.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "dgmesh" {
            return Err(bad(ln, "expected `dgmesh <dim> <n_vertices> <n_elements>`"));
        }
        let parse_usize = |s: &str, line: usize| s.parse::<usize>().map_err(|_| bad(line, &format!("bad integer `{s}`")));
        let dim = parse_usize(h[1], ln)?;
        if !(dim == 1 || dim == 2) {
            return Err(bad(ln, "dimension must be 1 or 2"));
        }
        let nv = parse_usize(h[2], ln)?;
        let ne = parse_usize(h[3], ln)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| bad(0, "missing vertex lines"))?;
            let c: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(ln, &format!("bad coordinate `{s}`"))))
                .collect::<Result<_, _>>()?;
            if c.len() != dim {
                return Err(bad(ln, "vertex coordinate count differs from dim"));
            }
            vertices.push([c[0], if dim == 2 { c[1] } else { 0.0 }]);
        }
        let mut elements = Vec::with_capacity(ne);
        let mut regions = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = lines.next().ok_or_else(|| bad(0, "missing element lines"))?;
            let ids: Vec<usize> = l
                .split_whitespace()
                .map(|s| parse_usize(s, ln))
                .collect::<Result<_, _>>()?;
            if ids.len() != dim + 2 {
                return Err(bad(ln, "element line must list dim+1 vertices and a region id"));
            }
            let region = Region::from_id(ids[dim + 1]).ok_or_else(|| bad(ln, "unknown region id"))?;
            elements.push(ids[..=dim].to_vec());
            regions.push(region);
        }
        let mut tags = HashMap::new();
        for (ln, l) in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 4 || t[0] != "face" {
                return Err(bad(ln, "expected `face <elem> <local_face> <tag>`"));
            }
            let k = parse_usize(t[1], ln)?;
            let f = parse_usize(t[2], ln)?;
            if k >= ne || f > dim {
                return Err(bad(ln, "face reference out of range"));
            }
            let tag = t[3].parse::<BoundaryTag>().map_err(|e| bad(ln, &e))?;
            tags.insert((k, f), tag);
        }
        Mesh::from_parts(dim, vertices, elements, regions, &tags)
    }

    pub fn read(path: &Path) -> Result<Mesh, MeshError> {
        Mesh::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "dgmesh {} {} {}", self.dim, self.n_vertices(), self.n_elements()).unwrap();
        for v in &self.vertices {
            if self.dim == 1 {
                writeln!(s, "{:.17e}", v[0]).unwrap();
            } else {
                writeln!(s, "{:.17e} {:.17e}", v[0], v[1]).unwrap();
            }
        }
        for (el, r) in self.elements.iter().zip(&self.regions) {
            let ids: Vec<String> = el.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{} {}", ids.join(" "), r.id()).unwrap();
        }
        for k in 0..self.n_elements() {
            for f in 0..self.n_faces_per_element() {
                if let Some(t) = self.face_tag(k, f) {
                    writeln!(s, "face {k} {f} {t}").unwrap();
                }
            }
        }
        s
    }
}

// ----- structured generation -----

/// One layer of a structured mesh, stacked along the last mesh axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Layer {
    pub thickness: f64,
    pub region: Region,
    /// Target edge length across the layer.
    pub h: f64,
}

/// Structured description of an interval (1D) or rectangle (2D).
///
/// In 1D the layers follow each other along x. In 2D the x direction is
/// divided uniformly with `h_x` and the layers are stacked along y.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StructuredSpec {
    pub dim: usize,
    pub origin: [f64; 2],
    /// Extent along x (2D only).
    pub width: f64,
    pub h_x: f64,
    pub layers: Vec<Layer>,
    /// Tags on (axis-0 min, axis-0 max, axis-1 min, axis-1 max).
    pub tags: [BoundaryTag; 4],
}

impl StructuredSpec {
    pub fn interval(x0: f64, x1: f64, h: f64) -> Self {
        StructuredSpec {
            dim: 1,
            origin: [x0, 0.0],
            width: 0.0,
            h_x: h,
            layers: vec![Layer {
                thickness: x1 - x0,
                region: Region::Semiconductor,
                h,
            }],
            tags: [
                BoundaryTag::XMin,
                BoundaryTag::XMax,
                BoundaryTag::YMin,
                BoundaryTag::YMax,
            ],
        }
    }

    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, h: f64) -> Self {
        StructuredSpec {
            dim: 2,
            origin: [x0, y0],
            width: x1 - x0,
            h_x: h,
            layers: vec![Layer {
                thickness: y1 - y0,
                region: Region::Semiconductor,
                h,
            }],
            tags: [
                BoundaryTag::XMin,
                BoundaryTag::XMax,
                BoundaryTag::YMin,
                BoundaryTag::YMax,
            ],
        }
    }

    pub fn with_layers(mut self, layers: Vec<Layer>) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_tags(mut self, tags: [BoundaryTag; 4]) -> Self {
        self.tags = tags;
        self
    }

    pub fn with_region(mut self, region: Region) -> Self {
        for l in &mut self.layers {
            l.region = region;
        }
        self
    }
}

fn cells_for(length: f64, h: f64) -> usize {
    ((length / h) - 1e-9).ceil().max(1.0) as usize
}

/// Layer breakpoints and per-cell regions along the stacking axis.
fn stack(origin: f64, layers: &[Layer]) -> Result<(Vec<f64>, Vec<Region>), MeshError> {
    let mut coords = vec![origin];
    let mut regions = Vec::new();
    let mut pos = origin;
    for l in layers {
        if !(l.h > 0.0) {
            return Err(MeshError::NonPositiveH(l.h));
        }
        if !(l.thickness > 0.0) {
            return Err(MeshError::Degenerate(format!("layer thickness {} must be positive", l.thickness)));
        }
        let n = cells_for(l.thickness, l.h);
        for i in 1..=n {
            coords.push(pos + l.thickness * i as f64 / n as f64);
            regions.push(l.region);
        }
        pos += l.thickness;
        *coords.last_mut().unwrap() = pos;
    }
    Ok((coords, regions))
}

/// Generates a structured mesh. 2D rectangle cells are split into two
/// counter-clockwise triangles along the (min,min)–(max,max) diagonal.
pub fn build_structured(spec: &StructuredSpec) -> Result<Mesh, MeshError> {
    if spec.layers.is_empty() {
        return Err(MeshError::Degenerate("no layers".into()));
    }
    match spec.dim {
        1 => {
            let (xs, cell_regions) = stack(spec.origin[0], &spec.layers)?;
            let vertices: Vec<[f64; 2]> = xs.iter().map(|&x| [x, 0.0]).collect();
            let n = cell_regions.len();
            let elements = (0..n).map(|i| vec![i, i + 1]).collect();
            let mut tags = HashMap::new();
            tags.insert((0, 0), spec.tags[0]);
            tags.insert((n - 1, 1), spec.tags[1]);
            Mesh::from_parts(1, vertices, elements, cell_regions, &tags)
        }
        2 => {
            if !(spec.h_x > 0.0) {
                return Err(MeshError::NonPositiveH(spec.h_x));
            }
            if !(spec.width > 0.0) {
                return Err(MeshError::Degenerate(format!("width {} must be positive", spec.width)));
            }
            let nx = cells_for(spec.width, spec.h_x);
            let xs: Vec<f64> = (0..=nx)
                .map(|i| spec.origin[0] + spec.width * i as f64 / nx as f64)
                .collect();
            let (ys, row_regions) = stack(spec.origin[1], &spec.layers)?;
            let ny = row_regions.len();
            let vid = |i: usize, j: usize| j * (nx + 1) + i;
            let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
            for &y in &ys {
                for &x in &xs {
                    vertices.push([x, y]);
                }
            }
            let mut elements = Vec::with_capacity(2 * nx * ny);
            let mut regions = Vec::with_capacity(2 * nx * ny);
            let mut tags = HashMap::new();
            for j in 0..ny {
                for i in 0..nx {
                    let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                    let lower = elements.len();
                    // lower-right triangle: faces (v00,v10) bottom, (v10,v11) right, (v11,v00) diagonal
                    elements.push(vec![v00, v10, v11]);
                    // upper-left triangle: faces (v00,v11) diagonal, (v11,v01) top, (v01,v00) left
                    elements.push(vec![v00, v11, v01]);
                    regions.push(row_regions[j]);
                    regions.push(row_regions[j]);
                    if j == 0 {
                        tags.insert((lower, 0), spec.tags[2]);
                    }
                    if i == nx - 1 {
                        tags.insert((lower, 1), spec.tags[1]);
                    }
                    if j == ny - 1 {
                        tags.insert((lower + 1, 1), spec.tags[3]);
                    }
                    if i == 0 {
                        tags.insert((lower + 1, 2), spec.tags[0]);
                    }
                }
            }
            Mesh::from_parts(2, vertices, elements, regions, &tags)
        }
        d => Err(MeshError::Degenerate(format!("dimension {d} not supported"))),
    }
}

/// Either a structured description or a path to a `dgmesh` file.
#[derive(Debug, Clone)]
pub enum MeshSource<'a> {
    Structured(&'a StructuredSpec),
    File(&'a Path),
}

pub fn build_mesh(source: MeshSource<'_>) -> Result<Mesh, MeshError> {
    match source {
        MeshSource::Structured(s) => build_structured(s),
        MeshSource::File(p) => Mesh::read(p),
    }
}

// ----- periodic pairing -----

#[derive(Debug, Clone, PartialEq)]
pub struct FacePair {
    /// Face on the min surface.
    pub min: (usize, usize),
    /// Face on the max surface.
    pub max: (usize, usize),
    /// `perm[i]` is the max-face vertex slot matching min-face vertex `i`.
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacePairing {
    pub axis: Axis,
    /// Translation distance (unit-cell width along `axis`).
    pub width: f64,
    pub pairs: Vec<FacePair>,
}

impl FacePairing {
    /// Partner of a face and the vertex permutation from it to the partner.
    pub fn partner(&self, k: usize, f: usize) -> Option<((usize, usize), Vec<usize>)> {
        for p in &self.pairs {
            if p.min == (k, f) {
                return Some((p.max, p.perm.clone()));
            }
            if p.max == (k, f) {
                let mut inv = vec![0; p.perm.len()];
                for (i, &j) in p.perm.iter().enumerate() {
                    inv[j] = i;
                }
                return Some((p.min, inv));
            }
        }
        None
    }
}

/// Connects every face on the min surface of `axis` to its translate on the
/// max surface. Fails if the two surface triangulations are not congruent.
pub fn pair_periodic_faces(mesh: &Mesh, axis: Axis) -> Result<FacePairing, MeshError> {
    let a = axis.index();
    if a >= mesh.dim() {
        return Err(MeshError::Degenerate(format!("axis {axis} not present in a {}D mesh", mesh.dim())));
    }
    let mins = mesh.faces_with_tag(axis.min_tag());
    let maxs = mesh.faces_with_tag(axis.max_tag());
    if mins.len() != maxs.len() || mins.is_empty() {
        return Err(MeshError::PairCountMismatch {
            axis,
            min: mins.len(),
            max: maxs.len(),
        });
    }
    let (lo, hi) = mesh.bounds();
    let width = hi[a] - lo[a];
    let scale = (hi[0] - lo[0]).abs().max((hi[1] - lo[1]).abs()).max(1e-300);
    let tol = 1e-12 * scale;
    let same = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol;

    let mut used = vec![false; maxs.len()];
    let mut pairs = Vec::with_capacity(mins.len());
    for &(k, f) in &mins {
        let vs = mesh.face_vertices(k, f);
        let shifted: Vec<[f64; 2]> = vs
            .iter()
            .map(|&v| {
                let mut p = mesh.vertex(v);
                p[a] += width;
                p
            })
            .collect();
        let mut found = None;
        let mut best_missing = (0usize, 0usize);
        for (j, &(k2, f2)) in maxs.iter().enumerate() {
            if used[j] {
                continue;
            }
            let ws = mesh.face_vertices(k2, f2);
            let perm: Vec<Option<usize>> = shifted
                .iter()
                .map(|&p| ws.iter().position(|&w| same(p, mesh.vertex(w))))
                .collect();
            let hits = perm.iter().filter(|p| p.is_some()).count();
            if hits == perm.len() {
                found = Some((j, perm.into_iter().map(Option::unwrap).collect::<Vec<_>>()));
                break;
            }
            if hits > best_missing.0 {
                let miss = perm.iter().position(|p| p.is_none()).unwrap();
                best_missing = (hits, miss);
            }
        }
        match found {
            Some((j, perm)) => {
                used[j] = true;
                pairs.push(FacePair {
                    min: (k, f),
                    max: maxs[j],
                    perm,
                });
            }
            None => {
                let slot = best_missing.1;
                let v = vs[slot];
                let p = mesh.vertex(v);
                return Err(MeshError::UnpairedFace {
                    axis,
                    elem: k,
                    face: f,
                    vertex: v,
                    coords: p[..mesh.dim()].to_vec(),
                });
            }
        }
    }
    Ok(FacePairing { axis, width, pairs })
}
