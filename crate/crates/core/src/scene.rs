//! Scene mesh container, exact nearest-vertex queries and ASCII OBJ I/O.

use std::io::{BufRead, Write};

use crate::error::SceneError;
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneMesh {
    pub vertices: Vec<Vec3>,
    /// Triangles as 0-based vertex indices.
    pub faces: Vec<[usize; 3]>,
}

impl SceneMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, SceneError> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.vertices.is_empty() {
            return Err(SceneError::EmptyMesh);
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(SceneError::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(SceneError::InvalidMesh(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn append(&mut self, other: &SceneMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    pub fn scaled(&self, s: f64) -> SceneMesh {
        SceneMesh {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn write_obj<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }

    /// Reads `v x y z` and `f i j k` records (1-based, `i/vt/vn` accepted).
    /// Other record types are skipped.
    pub fn read_obj<R: BufRead>(input: R) -> Result<Self, SceneError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let err = |message: String| SceneError::Parse {
                line: lineno,
                message,
            };
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let coords: Vec<f64> = tokens
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate `{t}`: {e}"))))
                        .collect::<Result<_, _>>()?;
                    if coords.len() != 3 {
                        return Err(err("vertex needs 3 coordinates".into()));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tokens
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or(t);
                            match head.parse::<usize>() {
                                Ok(i) if i >= 1 => Ok(i - 1),
                                _ => Err(err(format!("bad face index `{t}`"))),
                            }
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(err("face needs at least 3 vertices".into()));
                    }
                    // Fan-triangulate polygons.
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact nearest-vertex index: a kd-tree with median splits on the widest
/// axis. Ties are broken by the lowest vertex id.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub id: usize,
    pub vertex: Vec3,
    pub distance: f64,
}

impl SpatialIndex {
    pub fn build(mesh: &SceneMesh) -> Result<Self, SceneError> {
        mesh.validate()?;
        Ok(Self::from_points(&mesh.vertices))
    }

    fn from_points(vertices: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..vertices.len()).collect();
        let mut nodes = Vec::new();
        Self::build_node(vertices, &mut order, 0, vertices.len(), &mut nodes);
        Self {
            points: order.iter().map(|&i| vertices[i]).collect(),
            ids: order,
            nodes,
        }
    }

    fn build_node(
        vertices: &[Vec3],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let slot = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &order[start..end] {
            lo = lo.inf(&vertices[i]);
            hi = hi.sup(&vertices[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] == 0.0 {
            // All points coincide; no split can separate them.
            nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            vertices[a][axis].total_cmp(&vertices[b][axis]).then(a.cmp(&b))
        });
        let value = vertices[order[mid]][axis];
        nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = Self::build_node(vertices, order, start, mid, nodes);
        let right = Self::build_node(vertices, order, mid, end, nodes);
        nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest vertex to `p` (global minimum, lowest id on ties).
    pub fn nearest(&self, p: &Vec3) -> Nearest {
        let mut best = (f64::INFINITY, usize::MAX, 0usize);
        self.search(0, p, &mut best);
        let (d2, id, slot) = best;
        Nearest {
            id,
            vertex: self.points[slot],
            distance: d2.sqrt(),
        }
    }

    fn search(&self, node: usize, p: &Vec3, best: &mut (f64, usize, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d2 = (self.points[slot] - p).norm_squared();
                    let id = self.ids[slot];
                    if d2 < best.0 || (d2 == best.0 && id < best.1) {
                        *best = (d2, id, slot);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = p[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, p, best);
                // `<=` so equally distant points on the far side still compete
                // for the id tie-break.
                if delta * delta <= best.0 {
                    self.search(far, p, best);
                }
            }
        }
    }
}
