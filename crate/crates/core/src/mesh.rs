//! Admissible two-point-flux meshes: uniform intervals, polygonal meshes,
//! Gmsh triangle import and a structured acute triangulation of the unit square.
//!
//! Every interior face stores its geometry as seen from its first cell `k`:
//! the unit normal points from `k` towards `l`, and the per-side distances are
//! signed so that a circumcenter lying outside its own triangle yields a
//! negative `d_k` while `d_sigma` stays positive.

use std::collections::HashMap;

use serde::Serialize;

pub type Point = [f64; 2];

/// Orthogonality tolerance (radians) for meshes generated in code.
pub const GENERATED_ORTHOGONALITY_TOL: f64 = 1e-8;
/// Orthogonality tolerance (radians) for imported meshes.
pub const IMPORTED_ORTHOGONALITY_TOL: f64 = 1e-6;
/// Geometric epsilon relative to the mesh size.
const GEOMETRIC_EPS_FACTOR: f64 = 1e-12;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("element {element} has unsupported type {kind} (only 3-node triangles are meshed)")]
    UnsupportedElement { element: usize, kind: usize },
    #[error("the mesh contains no triangles")]
    NoCells,
    #[error("degenerate face {face}: distance {distance:e} is not above the geometric epsilon {eps:e}")]
    Degenerate { face: usize, distance: f64, eps: f64 },
    #[error("edge ({0}, {1}) is shared by more than two cells")]
    NonManifold(usize, usize),
    #[error("face {face} violates orthogonality by {deviation:e} rad (tolerance {tolerance:e})")]
    Admissibility { face: usize, deviation: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FaceKind {
    Interior { k: usize, l: usize },
    Dirichlet { k: usize },
    Neumann { k: usize },
}

impl FaceKind {
    /// The cell the face geometry is oriented from.
    pub fn owner(&self) -> usize {
        match *self {
            FaceKind::Interior { k, .. } | FaceKind::Dirichlet { k } | FaceKind::Neumann { k } => k,
        }
    }

    pub fn is_boundary(&self) -> bool {
        !matches!(self, FaceKind::Interior { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub measure: f64,
    /// `|x_L - x_K|` for interior faces, `d_k` for boundary faces.
    pub d_sigma: f64,
    /// Signed distance from the owner's center to the face line.
    pub d_k: f64,
    /// Signed distance from the neighbour's center (interior faces only).
    pub d_l: Option<f64>,
    pub kind: FaceKind,
    /// Unit normal pointing out of the owner cell.
    pub normal: Point,
    pub midpoint: Point,
}

impl Face {
    /// `a_sigma = m_sigma / d_sigma`.
    pub fn transmissivity(&self) -> f64 {
        self.measure / self.d_sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellShape {
    Interval { a: f64, b: f64 },
    Polygon(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub measure: f64,
    /// The two-point-flux center `x_K`.
    pub center: Point,
    /// Barycenter of the cell, used for exact averaging of affine data.
    pub centroid: Point,
    pub diameter: f64,
    pub faces: Vec<usize>,
    pub shape: CellShape,
}

/// An admissible finite-volume mesh. Immutable after construction apart from
/// boundary retagging, which returns a new mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleMesh {
    dimension: usize,
    cells: Vec<Cell>,
    faces: Vec<Face>,
    mesh_size: f64,
    orthogonality_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Angle between `x_L - x_K` and the face normal, per face (0 on the boundary).
    pub face_deviations: Vec<f64>,
    pub max_deviation: f64,
    pub min_distance: f64,
    /// `max |d_sigma - (d_k + d_l)|` over interior faces.
    pub max_distance_mismatch: f64,
    pub mesh_size: f64,
    pub regularity: f64,
    pub domain_measure: f64,
    pub orthogonality_tolerance: f64,
    pub geometric_eps: f64,
    pub passes: bool,
}

impl AdmissibleMesh {
    /// Uniform mesh of `(0, length)` with `n_cells` cells; both end faces are
    /// tagged Dirichlet.
    pub fn interval(length: f64, n_cells: usize) -> Result<Self, MeshError> {
        if n_cells < 2 {
            return Err(MeshError::InvalidArgument(format!(
                "an interval mesh needs at least 2 cells, got {n_cells}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(MeshError::InvalidArgument(format!(
                "domain length must be positive, got {length}"
            )));
        }
        let h = length / n_cells as f64;
        let node = |j: usize| if j == n_cells { length } else { j as f64 * h };
        let cells = (0..n_cells)
            .map(|k| {
                let (a, b) = (node(k), node(k + 1));
                let mid = 0.5 * (a + b);
                Cell {
                    measure: b - a,
                    center: [mid, 0.0],
                    centroid: [mid, 0.0],
                    diameter: b - a,
                    faces: vec![k, k + 1],
                    shape: CellShape::Interval { a, b },
                }
            })
            .collect::<Vec<_>>();
        let mut faces = Vec::with_capacity(n_cells + 1);
        for j in 0..=n_cells {
            let x = node(j);
            let face = if j == 0 {
                let d = cells[0].center[0] - x;
                Face {
                    measure: 1.0,
                    d_sigma: d,
                    d_k: d,
                    d_l: None,
                    kind: FaceKind::Dirichlet { k: 0 },
                    normal: [-1.0, 0.0],
                    midpoint: [x, 0.0],
                }
            } else if j == n_cells {
                let d = x - cells[n_cells - 1].center[0];
                Face {
                    measure: 1.0,
                    d_sigma: d,
                    d_k: d,
                    d_l: None,
                    kind: FaceKind::Dirichlet { k: n_cells - 1 },
                    normal: [1.0, 0.0],
                    midpoint: [x, 0.0],
                }
            } else {
                let (xk, xl) = (cells[j - 1].center[0], cells[j].center[0]);
                Face {
                    measure: 1.0,
                    d_sigma: xl - xk,
                    d_k: x - xk,
                    d_l: Some(xl - x),
                    kind: FaceKind::Interior { k: j - 1, l: j },
                    normal: [1.0, 0.0],
                    midpoint: [x, 0.0],
                }
            };
            faces.push(face);
        }
        Ok(Self {
            dimension: 1,
            cells,
            faces,
            mesh_size: h,
            orthogonality_tolerance: GENERATED_ORTHOGONALITY_TOL,
        })
    }

    /// Builds a 2D mesh from polygonal cells and prescribed centers. Boundary
    /// faces are tagged Neumann. Fails on degenerate distances, but not on
    /// orthogonality: use [`AdmissibleMesh::validate_admissibility`] for that.
    pub fn from_polygons(
        vertices: &[Point],
        polygons: &[Vec<usize>],
        centers: &[Point],
        orthogonality_tolerance: f64,
    ) -> Result<Self, MeshError> {
        if polygons.is_empty() {
            return Err(MeshError::NoCells);
        }
        if centers.len() != polygons.len() {
            return Err(MeshError::InvalidArgument(format!(
                "{} centers given for {} cells",
                centers.len(),
                polygons.len()
            )));
        }

        let mut cells = Vec::with_capacity(polygons.len());
        for (idx, poly) in polygons.iter().enumerate() {
            if poly.len() < 3 {
                return Err(MeshError::InvalidArgument(format!("cell {idx} has fewer than 3 vertices")));
            }
            let mut pts: Vec<Point> = Vec::with_capacity(poly.len());
            for &v in poly {
                let p = *vertices.get(v).ok_or_else(|| {
                    MeshError::InvalidArgument(format!("cell {idx} references missing vertex {v}"))
                })?;
                pts.push(p);
            }
            let (area, centroid) = polygon_area_centroid(&pts);
            if area.abs() <= 0.0 {
                return Err(MeshError::InvalidArgument(format!("cell {idx} has zero area")));
            }
            if area < 0.0 {
                pts.reverse();
            }
            let diameter = pts
                .iter()
                .flat_map(|p| pts.iter().map(move |q| dist(*p, *q)))
                .fold(0.0, f64::max);
            cells.push(Cell {
                measure: area.abs(),
                center: centers[idx],
                centroid,
                diameter,
                faces: Vec::with_capacity(pts.len()),
                shape: CellShape::Polygon(pts),
            });
        }
        let mesh_size = cells.iter().map(|c| c.diameter).fold(0.0, f64::max);
        let eps = GEOMETRIC_EPS_FACTOR * mesh_size;

        // Vertex indices per cell in counter-clockwise order.
        let oriented: Vec<Vec<usize>> = polygons
            .iter()
            .map(|poly| {
                let pts: Vec<Point> = poly.iter().map(|&v| vertices[v]).collect();
                let mut p = poly.clone();
                if polygon_area_centroid(&pts).0 < 0.0 {
                    p.reverse();
                }
                p
            })
            .collect();

        let mut faces: Vec<Face> = Vec::new();
        let mut by_edge: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, poly) in oriented.iter().enumerate() {
            for j in 0..poly.len() {
                let (va, vb) = (poly[j], poly[(j + 1) % poly.len()]);
                let key = (va.min(vb), va.max(vb));
                match by_edge.get(&key) {
                    None => {
                        let (a, b) = (vertices[va], vertices[vb]);
                        let measure = dist(a, b);
                        let t = [(b[0] - a[0]) / measure, (b[1] - a[1]) / measure];
                        let normal = [t[1], -t[0]];
                        let midpoint = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                        let d_k = dot(sub(midpoint, cells[k].center), normal);
                        let id = faces.len();
                        faces.push(Face {
                            measure,
                            d_sigma: d_k,
                            d_k,
                            d_l: None,
                            kind: FaceKind::Neumann { k },
                            normal,
                            midpoint,
                        });
                        by_edge.insert(key, id);
                        cells[k].faces.push(id);
                    }
                    Some(&id) => {
                        let face = &mut faces[id];
                        let owner = match face.kind {
                            FaceKind::Neumann { k } => k,
                            _ => return Err(MeshError::NonManifold(key.0, key.1)),
                        };
                        let xk = cells[owner].center;
                        let xl = cells[k].center;
                        face.kind = FaceKind::Interior { k: owner, l: k };
                        face.d_l = Some(dot(sub(xl, face.midpoint), face.normal));
                        face.d_sigma = dist(xk, xl);
                        cells[k].faces.push(id);
                    }
                }
            }
        }

        for (id, face) in faces.iter().enumerate() {
            let reach = match face.kind {
                FaceKind::Interior { k, l } => dot(sub(cells[l].center, cells[k].center), face.normal),
                _ => face.d_k,
            };
            if !(reach > eps) || !(face.d_sigma > eps) {
                return Err(MeshError::Degenerate { face: id, distance: reach.min(face.d_sigma), eps });
            }
        }

        Ok(Self {
            dimension: 2,
            cells,
            faces,
            mesh_size,
            orthogonality_tolerance,
        })
    }

    /// Builds a triangle mesh with circumcenters as cell centers.
    pub fn from_triangles(vertices: &[Point], triangles: &[[usize; 3]], orthogonality_tolerance: f64) -> Result<Self, MeshError> {
        let mut centers = Vec::with_capacity(triangles.len());
        for (idx, t) in triangles.iter().enumerate() {
            let mut p = [[0.0; 2]; 3];
            for (slot, &v) in p.iter_mut().zip(t) {
                *slot = *vertices.get(v).ok_or_else(|| {
                    MeshError::InvalidArgument(format!("triangle {idx} references missing vertex {v}"))
                })?;
            }
            centers.push(circumcenter(p[0], p[1], p[2]).ok_or_else(|| {
                MeshError::InvalidArgument(format!("triangle {idx} is degenerate"))
            })?);
        }
        let polygons: Vec<Vec<usize>> = triangles.iter().map(|t| t.to_vec()).collect();
        Self::from_polygons(vertices, &polygons, &centers, orthogonality_tolerance)
    }

    /// Structured acute triangulation of the unit square: `ny` rows of
    /// near-equilateral triangles, odd node rows shifted by half a column and
    /// closed with right triangles on the vertical sides. Admissible with
    /// circumcenters as centers.
    pub fn acute_unit_square(nx: usize, ny: usize) -> Result<Self, MeshError> {
        let (vertices, triangles) = acute_square_triangulation(nx, ny)?;
        let mesh = Self::from_triangles(&vertices, &triangles, GENERATED_ORTHOGONALITY_TOL)?;
        mesh.ensure_admissible()?;
        Ok(mesh)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// `h_T`, the largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn geometric_eps(&self) -> f64 {
        GEOMETRIC_EPS_FACTOR * self.mesh_size
    }

    pub fn orthogonality_tolerance(&self) -> f64 {
        self.orthogonality_tolerance
    }

    pub fn domain_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    /// `zeta_T = max_K max(card E_K, max_sigma diam(K) / |d_K sigma|)`.
    pub fn regularity(&self) -> f64 {
        let mut zeta: f64 = 0.0;
        for (k, cell) in self.cells.iter().enumerate() {
            zeta = zeta.max(cell.faces.len() as f64);
            for &f in &cell.faces {
                let face = &self.faces[f];
                let d = match face.kind {
                    FaceKind::Interior { l, .. } if l == k => face.d_l.unwrap_or(face.d_k),
                    _ => face.d_k,
                };
                let ratio = if d.abs() > 0.0 { cell.diameter / d.abs() } else { f64::INFINITY };
                zeta = zeta.max(ratio);
            }
        }
        zeta
    }

    /// The cell across `face` from `cell`, if the face is interior.
    pub fn neighbor(&self, cell: usize, face: usize) -> Option<usize> {
        match self.faces[face].kind {
            FaceKind::Interior { k, l } if k == cell => Some(l),
            FaceKind::Interior { k, l } if l == cell => Some(k),
            _ => None,
        }
    }

    pub fn has_dirichlet_face(&self) -> bool {
        self.faces.iter().any(|f| matches!(f.kind, FaceKind::Dirichlet { .. }))
    }

    /// Retags every boundary face: Dirichlet if `selected(midpoint)`, Neumann otherwise.
    pub fn with_dirichlet_where(&self, selected: impl Fn(Point) -> bool) -> Self {
        let mut mesh = self.clone();
        for face in &mut mesh.faces {
            if let FaceKind::Dirichlet { k } | FaceKind::Neumann { k } = face.kind {
                face.kind = if selected(face.midpoint) {
                    FaceKind::Dirichlet { k }
                } else {
                    FaceKind::Neumann { k }
                };
            }
        }
        mesh
    }

    pub fn validate_admissibility(&self) -> ValidationReport {
        let mut face_deviations = Vec::with_capacity(self.faces.len());
        let mut min_distance = f64::INFINITY;
        let mut max_distance_mismatch: f64 = 0.0;
        for face in &self.faces {
            min_distance = min_distance.min(face.d_sigma);
            let deviation = match face.kind {
                FaceKind::Interior { k, l } => {
                    let v = sub(self.cells[l].center, self.cells[k].center);
                    let cross = v[0] * face.normal[1] - v[1] * face.normal[0];
                    let along = dot(v, face.normal);
                    max_distance_mismatch = max_distance_mismatch
                        .max((face.d_sigma - (face.d_k + face.d_l.unwrap_or(0.0))).abs());
                    min_distance = min_distance.min(along);
                    cross.abs().atan2(along)
                }
                _ => {
                    max_distance_mismatch = max_distance_mismatch.max((face.d_sigma - face.d_k).abs());
                    0.0
                }
            };
            face_deviations.push(deviation);
        }
        let max_deviation = face_deviations.iter().copied().fold(0.0, f64::max);
        let eps = self.geometric_eps();
        let passes = max_deviation <= self.orthogonality_tolerance && min_distance > eps;
        ValidationReport {
            face_deviations,
            max_deviation,
            min_distance,
            max_distance_mismatch,
            mesh_size: self.mesh_size,
            regularity: self.regularity(),
            domain_measure: self.domain_measure(),
            orthogonality_tolerance: self.orthogonality_tolerance,
            geometric_eps: eps,
            passes,
        }
    }

    fn ensure_admissible(&self) -> Result<(), MeshError> {
        let report = self.validate_admissibility();
        if report.passes {
            return Ok(());
        }
        if let Some((face, &deviation)) = report
            .face_deviations
            .iter()
            .enumerate()
            .find(|(_, &d)| d > self.orthogonality_tolerance)
        {
            return Err(MeshError::Admissibility { face, deviation, tolerance: self.orthogonality_tolerance });
        }
        let face = self
            .faces
            .iter()
            .position(|f| f.d_sigma <= report.geometric_eps)
            .unwrap_or(0);
        Err(MeshError::Degenerate { face, distance: report.min_distance, eps: report.geometric_eps })
    }

    /// Native JSON export with `cells` and `faces` arrays.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct CellOut<'a> {
            measure: f64,
            center: Point,
            faces: &'a [usize],
        }
        #[derive(Serialize)]
        struct FaceOut {
            measure: f64,
            d_sigma: f64,
            kind: &'static str,
            neighbors: Vec<usize>,
        }
        let cells: Vec<CellOut> = self
            .cells
            .iter()
            .map(|c| CellOut { measure: c.measure, center: c.center, faces: &c.faces })
            .collect();
        let faces: Vec<FaceOut> = self
            .faces
            .iter()
            .map(|f| {
                let (kind, neighbors) = match f.kind {
                    FaceKind::Interior { k, l } => ("interior", vec![k, l]),
                    FaceKind::Dirichlet { k } => ("dirichlet", vec![k]),
                    FaceKind::Neumann { k } => ("neumann", vec![k]),
                };
                FaceOut { measure: f.measure, d_sigma: f.d_sigma, kind, neighbors }
            })
            .collect();
        serde_json::json!({ "dimension": self.dimension, "cells": cells, "faces": faces })
    }
}

/// Parses a Gmsh MSH 2.2 ASCII triangle mesh. Points and line elements are
/// skipped; any other element type is rejected. Boundary faces come out
/// tagged Neumann.
pub fn import_simplicial_mesh(msh_text: &str) -> Result<AdmissibleMesh, MeshError> {
    let (vertices, triangles) = parse_msh22(msh_text)?;
    let mesh = AdmissibleMesh::from_triangles(&vertices, &triangles, IMPORTED_ORTHOGONALITY_TOL)?;
    mesh.ensure_admissible()?;
    Ok(mesh)
}

/// Element types that carry no cells and are skipped: 2- and 3-node lines, points.
const SKIPPED_ELEMENT_TYPES: [usize; 3] = [1, 8, 15];
const TRIANGLE_ELEMENT_TYPE: usize = 2;

fn parse_msh22(text: &str) -> Result<(Vec<Point>, Vec<[usize; 3]>), MeshError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut vertices: Vec<Point> = Vec::new();
    let mut node_index: HashMap<usize, usize> = HashMap::new();
    let mut triangles = Vec::new();
    let mut seen_format = false;

    fn parse<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T, MeshError> {
        tok.and_then(|t| t.parse().ok()).ok_or_else(|| MeshError::Parse {
            line,
            message: format!("expected {what}"),
        })
    }
    fn expect_end<'a>(
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        tag: &str,
    ) -> Result<(), MeshError> {
        match lines.next() {
            Some((_, l)) if l == tag => Ok(()),
            Some((n, l)) => Err(MeshError::Parse { line: n, message: format!("expected {tag}, found {l:?}") }),
            None => Err(MeshError::Parse { line: 0, message: format!("missing {tag}") }),
        }
    }

    while let Some((n, line)) = lines.next() {
        match line {
            "" => continue,
            "$MeshFormat" => {
                let (ln, header) = lines.next().ok_or(MeshError::Parse { line: n, message: "missing format header".into() })?;
                let mut tok = header.split_whitespace();
                let version: String = parse(ln, tok.next(), "format version")?;
                let file_type: usize = parse(ln, tok.next(), "file type")?;
                if !version.starts_with("2.2") || file_type != 0 {
                    return Err(MeshError::Parse { line: ln, message: format!("unsupported format {header:?}, expected 2.2 0 8") });
                }
                expect_end(&mut lines, "$EndMeshFormat")?;
                seen_format = true;
            }
            "$Nodes" => {
                let (ln, count) = lines.next().ok_or(MeshError::Parse { line: n, message: "missing node count".into() })?;
                let count: usize = parse(ln, Some(count), "node count")?;
                for _ in 0..count {
                    let (ln, l) = lines.next().ok_or(MeshError::Parse { line: n, message: "truncated $Nodes".into() })?;
                    let mut tok = l.split_whitespace();
                    let id: usize = parse(ln, tok.next(), "node id")?;
                    let x: f64 = parse(ln, tok.next(), "x coordinate")?;
                    let y: f64 = parse(ln, tok.next(), "y coordinate")?;
                    node_index.insert(id, vertices.len());
                    vertices.push([x, y]);
                }
                expect_end(&mut lines, "$EndNodes")?;
            }
            "$Elements" => {
                let (ln, count) = lines.next().ok_or(MeshError::Parse { line: n, message: "missing element count".into() })?;
                let count: usize = parse(ln, Some(count), "element count")?;
                for _ in 0..count {
                    let (ln, l) = lines.next().ok_or(MeshError::Parse { line: n, message: "truncated $Elements".into() })?;
                    let mut tok = l.split_whitespace();
                    let id: usize = parse(ln, tok.next(), "element id")?;
                    let kind: usize = parse(ln, tok.next(), "element type")?;
                    let n_tags: usize = parse(ln, tok.next(), "tag count")?;
                    for _ in 0..n_tags {
                        let _: i64 = parse(ln, tok.next(), "element tag")?;
                    }
                    if SKIPPED_ELEMENT_TYPES.contains(&kind) {
                        continue;
                    }
                    if kind != TRIANGLE_ELEMENT_TYPE {
                        return Err(MeshError::UnsupportedElement { element: id, kind });
                    }
                    let mut tri = [0usize; 3];
                    for slot in &mut tri {
                        let node: usize = parse(ln, tok.next(), "triangle node")?;
                        *slot = *node_index.get(&node).ok_or_else(|| MeshError::Parse {
                            line: ln,
                            message: format!("unknown node {node}"),
                        })?;
                    }
                    triangles.push(tri);
                }
                expect_end(&mut lines, "$EndElements")?;
            }
            other if other.starts_with("$End") => {
                return Err(MeshError::Parse { line: n, message: format!("unexpected {other}") });
            }
            other if other.starts_with('$') => {
                // unknown section: skip to its end marker
                let end = format!("$End{}", &other[1..]);
                loop {
                    match lines.next() {
                        Some((_, l)) if l == end => break,
                        Some(_) => {}
                        None => return Err(MeshError::Parse { line: n, message: format!("missing {end}") }),
                    }
                }
            }
            _ => return Err(MeshError::Parse { line: n, message: format!("unexpected content {line:?}") }),
        }
    }
    if !seen_format {
        return Err(MeshError::Parse { line: 1, message: "missing $MeshFormat section".into() });
    }
    if triangles.is_empty() {
        return Err(MeshError::NoCells);
    }
    Ok((vertices, triangles))
}

fn acute_square_triangulation(nx: usize, ny: usize) -> Result<(Vec<Point>, Vec<[usize; 3]>), MeshError> {
    if nx < 2 || ny < 1 {
        return Err(MeshError::InvalidArgument(format!("need nx >= 2 and ny >= 1, got {nx} x {ny}")));
    }
    let hx = 1.0 / nx as f64;
    let hy = 1.0 / ny as f64;
    if hy <= 0.5 * hx {
        return Err(MeshError::InvalidArgument(format!(
            "row height {hy} must exceed half the column width {hx} for acute triangles"
        )));
    }
    // Even rows: nodes at j*hx, j = 0..=nx. Odd rows: 0, (j+1/2)hx for j < nx, 1.
    let mut vertices = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(ny + 1);
    for r in 0..=ny {
        let y = if r == ny { 1.0 } else { r as f64 * hy };
        let xs: Vec<f64> = if r % 2 == 0 {
            (0..=nx).map(|j| if j == nx { 1.0 } else { j as f64 * hx }).collect()
        } else {
            std::iter::once(0.0)
                .chain((0..nx).map(|j| (j as f64 + 0.5) * hx))
                .chain(std::iter::once(1.0))
                .collect()
        };
        rows.push(xs.iter().map(|&x| {
            vertices.push([x, y]);
            vertices.len() - 1
        }).collect());
    }
    let mut triangles = Vec::new();
    for r in 0..ny {
        // `flat` has nx+1 nodes, `shifted` has nx+2 nodes; shifted[j+1] sits above
        // the middle of flat[j]..flat[j+1].
        let (flat, shifted, flat_below) = if r % 2 == 0 {
            (&rows[r], &rows[r + 1], true)
        } else {
            (&rows[r + 1], &rows[r], false)
        };
        let mut push = |a: usize, b: usize, c: usize| {
            if flat_below { triangles.push([a, b, c]) } else { triangles.push([a, c, b]) }
        };
        // left closing right triangle
        push(flat[0], shifted[1], shifted[0]);
        for j in 0..nx {
            push(flat[j], flat[j + 1], shifted[j + 1]);
            if j + 1 < nx {
                push(flat[j + 1], shifted[j + 2], shifted[j + 1]);
            }
        }
        // right closing right triangle
        push(flat[nx], shifted[nx + 1], shifted[nx]);
    }
    Ok((vertices, triangles))
}

/// MSH 2.2 ASCII text of [`AdmissibleMesh::acute_unit_square`]'s triangulation,
/// including the boundary line elements Gmsh would write.
pub fn acute_unit_square_msh(nx: usize, ny: usize) -> Result<String, MeshError> {
    use std::fmt::Write;
    let (vertices, triangles) = acute_square_triangulation(nx, ny)?;
    let mut boundary: Vec<[usize; 2]> = Vec::new();
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    let mut order = Vec::new();
    for t in &triangles {
        for j in 0..3 {
            let (a, b) = (t[j], t[(j + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let c = count.entry(key).or_insert(0);
            if *c == 0 {
                order.push((key, [a, b]));
            }
            *c += 1;
        }
    }
    for (key, edge) in order {
        if count[&key] == 1 {
            boundary.push(edge);
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "$MeshFormat\n2.2 0 8\n$EndMeshFormat");
    let _ = writeln!(out, "$Nodes\n{}", vertices.len());
    for (i, p) in vertices.iter().enumerate() {
        let _ = writeln!(out, "{} {:?} {:?} 0", i + 1, p[0], p[1]);
    }
    let _ = writeln!(out, "$EndNodes\n$Elements\n{}", boundary.len() + triangles.len());
    let mut id = 1;
    for e in &boundary {
        let _ = writeln!(out, "{id} 1 2 1 1 {} {}", e[0] + 1, e[1] + 1);
        id += 1;
    }
    for t in &triangles {
        let _ = writeln!(out, "{id} 2 2 2 1 {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        id += 1;
    }
    let _ = writeln!(out, "$EndElements");
    Ok(out)
}

/// Circumcenter of a triangle, `None` if the vertices are collinear.
pub fn circumcenter(a: Point, b: Point, c: Point) -> Option<Point> {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    if d == 0.0 {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    Some([a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d])
}

/// Signed area (positive for counter-clockwise) and barycenter of a polygon.
pub fn polygon_area_centroid(pts: &[Point]) -> (f64, Point) {
    let n = pts.len();
    let origin = pts[0];
    let mut area2 = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = sub(pts[i], origin);
        let q = sub(pts[(i + 1) % n], origin);
        let cross = p[0] * q[1] - q[0] * p[1];
        area2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    let area = 0.5 * area2;
    if area2 == 0.0 {
        return (0.0, origin);
    }
    (area, [origin[0] + cx / (3.0 * area2), origin[1] + cy / (3.0 * area2)])
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_four_cells() {
        let mesh = AdmissibleMesh::interval(1.0, 4).unwrap();
        assert_eq!(mesh.n_cells(), 4);
        for c in mesh.cells() {
            assert_eq!(c.measure, 0.25);
        }
        let interior: Vec<_> = mesh.faces().iter().filter(|f| !f.kind.is_boundary()).collect();
        assert_eq!(interior.len(), 3);
        for f in interior {
            assert_eq!(f.transmissivity(), 4.0);
        }
        assert_eq!(mesh.faces().iter().filter(|f| matches!(f.kind, FaceKind::Dirichlet { .. })).count(), 2);
    }

    #[test]
    fn interval_two_cells() {
        let mesh = AdmissibleMesh::interval(1.0, 2).unwrap();
        let f = &mesh.faces()[1];
        assert_eq!(f.kind, FaceKind::Interior { k: 0, l: 1 });
        assert_eq!(f.d_sigma, 0.5);
        assert_eq!(f.measure, 1.0);
        assert_eq!(f.transmissivity(), 2.0);
        assert_eq!(mesh.faces()[0].transmissivity(), 4.0);
    }

    #[test]
    fn interval_rejects_single_cell() {
        assert!(matches!(AdmissibleMesh::interval(1.0, 1), Err(MeshError::InvalidArgument(_))));
        assert!(matches!(AdmissibleMesh::interval(1.0, 0), Err(MeshError::InvalidArgument(_))));
    }

    #[test]
    fn reference_grid_size() {
        let mesh = AdmissibleMesh::interval(1.0, 1_638_400).unwrap();
        assert_relative_eq!(mesh.mesh_size(), 1.0 / 1_638_400.0, max_relative = 1e-15);
        assert_relative_eq!(mesh.domain_measure(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn interval_validates_with_zero_deviation() {
        let report = AdmissibleMesh::interval(2.0, 16).unwrap().validate_admissibility();
        assert!(report.passes);
        assert_eq!(report.max_deviation, 0.0);
        assert_eq!(report.regularity, 2.0);
        assert_relative_eq!(report.domain_measure, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn right_triangles_have_coincident_circumcenters() {
        let vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let triangles = [[0, 1, 2], [0, 2, 3]];
        let c1 = circumcenter(vertices[0], vertices[1], vertices[2]).unwrap();
        let c2 = circumcenter(vertices[0], vertices[2], vertices[3]).unwrap();
        assert_relative_eq!(c1[0], 0.5);
        assert_relative_eq!(c2[1], 0.5);
        let err = AdmissibleMesh::from_triangles(&vertices, &triangles, IMPORTED_ORTHOGONALITY_TOL).unwrap_err();
        assert!(matches!(err, MeshError::Degenerate { face: 2, .. }), "{err:?}");
    }

    #[test]
    fn two_triangle_strip() {
        // equilateral triangle plus its mirror image across the shared edge
        let s = 3f64.sqrt() / 2.0;
        let vertices = [[0.0, 0.0], [1.0, 0.0], [0.5, s], [1.5, s]];
        let triangles = [[0, 1, 2], [1, 3, 2]];
        let mesh = AdmissibleMesh::from_triangles(&vertices, &triangles, IMPORTED_ORTHOGONALITY_TOL).unwrap();
        assert_eq!(mesh.n_cells(), 2);
        let shared: Vec<_> = mesh.faces().iter().filter(|f| !f.kind.is_boundary()).collect();
        assert_eq!(shared.len(), 1);
        let f = shared[0];
        // circumcenters are the centroids of the equilateral triangles
        let xk = [0.5, s / 3.0];
        let xl = [1.0, 2.0 * s / 3.0];
        let expected = 1.0 / dist(xk, xl);
        assert_relative_eq!(f.transmissivity(), expected, max_relative = 1e-14);
        assert_relative_eq!(f.d_sigma, f.d_k + f.d_l.unwrap(), max_relative = 1e-14);
        assert!(mesh.validate_admissibility().passes);
    }

    #[test]
    fn sheared_quads_with_centroids_fail_validation() {
        // two parallelograms sheared by 0.5 sharing a slanted edge
        let vertices = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.5, 1.0], [1.5, 1.0], [2.5, 1.0]];
        let polygons = vec![vec![0, 1, 4, 3], vec![1, 2, 5, 4]];
        let centers: Vec<Point> = polygons
            .iter()
            .map(|p| {
                let pts: Vec<Point> = p.iter().map(|&v| vertices[v]).collect();
                polygon_area_centroid(&pts).1
            })
            .collect();
        let mesh = AdmissibleMesh::from_polygons(&vertices, &polygons, &centers, GENERATED_ORTHOGONALITY_TOL).unwrap();
        let report = mesh.validate_admissibility();
        assert!(!report.passes);
        // x_L - x_K = (1, 0); the shared edge normal is (2, -1)/sqrt(5)
        assert_relative_eq!(report.max_deviation, (0.5f64).atan(), max_relative = 1e-12);
    }

    #[test]
    fn acute_square_is_admissible() {
        let mesh = AdmissibleMesh::acute_unit_square(8, 9).unwrap();
        let report = mesh.validate_admissibility();
        assert!(report.passes, "{report:?}");
        assert!(report.max_deviation < 1e-12);
        assert!(report.max_distance_mismatch < 1e-14);
        assert_relative_eq!(report.domain_measure, 1.0, max_relative = 1e-12);
        assert_eq!(mesh.n_cells(), 9 * (2 * 8 + 1));
    }

    #[test]
    fn msh_round_trip_of_generated_square() {
        let text = acute_unit_square_msh(6, 7).unwrap();
        let mesh = import_simplicial_mesh(&text).unwrap();
        assert_eq!(mesh.n_cells(), 7 * (2 * 6 + 1));
        assert!(mesh.faces().iter().filter(|f| f.kind.is_boundary()).all(|f| matches!(f.kind, FaceKind::Neumann { .. })));
        let direct = AdmissibleMesh::acute_unit_square(6, 7).unwrap();
        assert_eq!(direct.faces().len(), mesh.faces().len());
    }

    #[test]
    fn msh_rejects_quads() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n$Elements\n1\n1 3 2 0 1 1 2 3 4\n$EndElements\n";
        assert_eq!(import_simplicial_mesh(text).unwrap_err(), MeshError::UnsupportedElement { element: 1, kind: 3 });
    }

    #[test]
    fn msh_rejects_bad_header_and_truncation() {
        let text = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n";
        assert!(matches!(import_simplicial_mesh(text), Err(MeshError::Parse { .. })));
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n3\n1 0 0 0\n";
        assert!(matches!(import_simplicial_mesh(text), Err(MeshError::Parse { .. })));
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n";
        assert_eq!(import_simplicial_mesh(text).unwrap_err(), MeshError::NoCells);
    }

    #[test]
    fn retagging_by_midpoint() {
        let mesh = AdmissibleMesh::acute_unit_square(4, 4).unwrap();
        let tagged = mesh.with_dirichlet_where(|p| p[1] > 1.0 - 1e-12 && p[0] <= 0.5 + 1e-12);
        let dirichlet: Vec<_> = tagged
            .faces()
            .iter()
            .filter(|f| matches!(f.kind, FaceKind::Dirichlet { .. }))
            .collect();
        assert!(!dirichlet.is_empty());
        let length: f64 = dirichlet.iter().map(|f| f.measure).sum();
        assert_relative_eq!(length, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn json_export_lists_cells_and_faces() {
        let mesh = AdmissibleMesh::interval(1.0, 3).unwrap();
        let json = mesh.to_json();
        assert_eq!(json["cells"].as_array().unwrap().len(), 3);
        assert_eq!(json["faces"].as_array().unwrap().len(), 4);
        assert_eq!(json["faces"][1]["kind"], "interior");
        assert_eq!(json["faces"][1]["neighbors"], serde_json::json!([0, 1]));
        assert_eq!(json["faces"][0]["kind"], "dirichlet");
    }
}
