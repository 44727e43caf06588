//! Greedy-insertion terrain meshes.
//!
//! Starting from the two triangles spanning the grid corners, the sample with
//! the largest vertical deviation is inserted repeatedly into a Delaunay
//! triangulation until the error bound or the vertex budget is met. Vertex
//! positions are integer grid coordinates, so orientation, in-circle and the
//! per-row coverage of a triangle are all evaluated exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::raster::DemGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("bad mesh parameters: {0}")]
    BadParams(String),
    #[error("malformed mesh file: {0}")]
    Parse(String),
}

impl MeshError {
    pub fn name(&self) -> &'static str {
        match self {
            MeshError::BadParams(_) => "BadParams",
            MeshError::Parse(_) => "ParseError",
        }
    }
}

pub const DEFAULT_MAX_ERROR: f64 = 0.5;

/// Default vertex budget: one eighth of the samples, at least 4.
pub fn default_max_vertices(grid: &DemGrid) -> usize {
    (grid.values().len() / 8).max(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainMesh {
    /// `(column, row, elevation in meters)`.
    pub vertices: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    /// Counter-clockwise in `(column, row)` under the standard orientation
    /// determinant.
    pub triangles: Vec<[u32; 3]>,
    /// Largest deviation of any sample from the mesh.
    pub max_error_bound: f64,
    /// True when insertion stopped on the vertex budget rather than the bound.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    BinaryStl,
    Obj,
}

const NONE: u32 = u32::MAX;

type P = (i64, i64);

#[inline]
fn orient(a: P, b: P, c: P) -> i64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Positive when `d` lies strictly inside the circle through the
/// counter-clockwise triangle `a b c`.
fn incircle(a: P, b: P, c: P, d: P) -> i128 {
    let (adx, ady) = ((a.0 - d.0) as i128, (a.1 - d.1) as i128);
    let (bdx, bdy) = ((b.0 - d.0) as i128, (b.1 - d.1) as i128);
    let (cdx, cdy) = ((c.0 - d.0) as i128, (c.1 - d.1) as i128);
    (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [u32; 3],
    /// `n[i]` is the neighbor across the edge opposite `v[i]`.
    n: [u32; 3],
    version: u32,
    err: f64,
    sample: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    err: f64,
    sample: u32,
    tri: u32,
    version: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .total_cmp(&other.err)
            .then(other.sample.cmp(&self.sample))
            .then(self.tri.cmp(&other.tri))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Visits every sample `(x, y)` covered by the closed triangle.
fn for_each_covered(a: P, b: P, c: P, mut visit: impl FnMut(i64, i64)) {
    let ymin = a.1.min(b.1).min(c.1);
    let ymax = a.1.max(b.1).max(c.1);
    let xmin = a.0.min(b.0).min(c.0);
    let xmax = a.0.max(b.0).max(c.0);
    for y in ymin..=ymax {
        let (mut lo, mut hi) = (xmin, xmax);
        for (p, q) in [(a, b), (b, c), (c, a)] {
            // orient(p, q, (x, y)) = k - dy * (x - p.x) >= 0
            let k = (q.0 - p.0) * (y - p.1);
            let dy = q.1 - p.1;
            match dy.cmp(&0) {
                Ordering::Greater => hi = hi.min(p.0 + k.div_euclid(dy)),
                Ordering::Less => lo = lo.max(p.0 - k.div_euclid(-dy)),
                Ordering::Equal if k < 0 => hi = lo - 1,
                Ordering::Equal => {}
            }
        }
        for x in lo..=hi {
            visit(x, y);
        }
    }
}

#[inline]
fn interpolate(a: P, b: P, c: P, za: f64, zb: f64, zc: f64, x: i64, y: i64) -> f64 {
    let p = (x, y);
    let area = orient(a, b, c) as f64;
    let (wa, wb, wc) = (orient(b, c, p) as f64, orient(c, a, p) as f64, orient(a, b, p) as f64);
    (wa * za + wb * zb + wc * zc) / area
}

struct Builder<'a> {
    width: i64,
    z: &'a [f32],
    pts: Vec<P>,
    samples: Vec<u32>,
    tris: Vec<Tri>,
    heap: BinaryHeap<Candidate>,
    max_error: f64,
    dirty: Vec<u32>,
    flips: Vec<(u32, usize)>,
}

impl Builder<'_> {
    fn pos(&self, v: u32) -> P {
        self.pts[v as usize]
    }

    fn height(&self, v: u32) -> f64 {
        self.z[self.samples[v as usize] as usize] as f64
    }

    fn add_vertex(&mut self, sample: u32) -> u32 {
        let s = sample as i64;
        self.pts.push((s % self.width, s / self.width));
        self.samples.push(sample);
        (self.pts.len() - 1) as u32
    }

    fn new_tri(&mut self, v: [u32; 3], n: [u32; 3]) -> u32 {
        self.tris.push(Tri { v, n, version: 0, err: 0.0, sample: NONE });
        let id = (self.tris.len() - 1) as u32;
        self.dirty.push(id);
        id
    }

    fn set_tri(&mut self, t: u32, v: [u32; 3], n: [u32; 3]) {
        let tri = &mut self.tris[t as usize];
        tri.v = v;
        tri.n = n;
        tri.version += 1;
        self.dirty.push(t);
    }

    fn relink(&mut self, t: u32, from: u32, to: u32) {
        if t == NONE {
            return;
        }
        let n = &mut self.tris[t as usize].n;
        let slot = n.iter().position(|&x| x == from).expect("adjacency is symmetric");
        n[slot] = to;
    }

    fn scan(&mut self, t: u32) {
        let tri = self.tris[t as usize];
        let [a, b, c] = tri.v.map(|v| self.pos(v));
        let [za, zb, zc] = tri.v.map(|v| self.height(v));
        let (w, z) = (self.width, self.z);
        let (mut best, mut best_sample) = (0.0f64, NONE);
        for_each_covered(a, b, c, |x, y| {
            let s = (y * w + x) as u32;
            let e = (z[s as usize] as f64 - interpolate(a, b, c, za, zb, zc, x, y)).abs();
            if e > best || (e == best && best_sample != NONE && s < best_sample) {
                best = e;
                best_sample = s;
            }
        });
        let tri = &mut self.tris[t as usize];
        tri.err = best;
        tri.sample = best_sample;
        if best > self.max_error && best_sample != NONE {
            self.heap.push(Candidate { err: best, sample: best_sample, tri: t, version: tri.version });
        }
    }

    fn flush_dirty(&mut self) {
        let mut dirty = std::mem::take(&mut self.dirty);
        dirty.sort_unstable();
        dirty.dedup();
        for &t in &dirty {
            self.scan(t);
        }
        dirty.clear();
        self.dirty = dirty;
    }

    fn insert(&mut self, t: u32, sample: u32) {
        let p = self.add_vertex(sample);
        let pp = self.pos(p);
        let tri = self.tris[t as usize];
        let pos = tri.v.map(|v| self.pos(v));
        let on_edge = (0..3).find(|&i| orient(pos[(i + 1) % 3], pos[(i + 2) % 3], pp) == 0);
        match on_edge {
            None => self.split_interior(t, p),
            Some(i) => self.split_edge(t, i, p),
        }
        while let Some((t, i)) = self.flips.pop() {
            self.legalize(t, i);
        }
        self.flush_dirty();
    }

    fn split_interior(&mut self, t: u32, p: u32) {
        let Tri { v: [a, b, c], n: [na, nb, nc], .. } = self.tris[t as usize];
        let tb = self.new_tri([a, p, c], [NONE, nb, NONE]);
        let tc = self.new_tri([a, b, p], [NONE, NONE, nc]);
        self.set_tri(t, [p, b, c], [na, tb, tc]);
        self.tris[tb as usize].n = [t, nb, tc];
        self.tris[tc as usize].n = [t, tb, nc];
        self.relink(nb, t, tb);
        self.relink(nc, t, tc);
        self.flips.extend([(t, 0), (tb, 1), (tc, 2)]);
    }

    /// `p` lies on the edge of `t` opposite `v[i]`.
    fn split_edge(&mut self, t: u32, i: usize, p: u32) {
        let tri = self.tris[t as usize];
        let (a, b, c) = (tri.v[i], tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]);
        let (u, nb, nc) = (tri.n[i], tri.n[(i + 1) % 3], tri.n[(i + 2) % 3]);
        let t2 = self.new_tri([a, p, c], [NONE, nb, t]);
        self.relink(nb, t, t2);
        if u == NONE {
            self.set_tri(t, [a, b, p], [NONE, t2, nc]);
            self.flips.extend([(t, 2), (t2, 1)]);
            return;
        }
        let ut = self.tris[u as usize];
        let j = ut.n.iter().position(|&x| x == t).expect("adjacency is symmetric");
        let d = ut.v[j];
        let (ub, uc) = (ut.n[(j + 2) % 3], ut.n[(j + 1) % 3]);
        // u = (d, c, b); ub is across (d, c), uc across (b, d).
        let u2 = self.new_tri([d, p, b], [t, uc, u]);
        self.relink(uc, u, u2);
        self.set_tri(t, [a, b, p], [u2, t2, nc]);
        self.tris[t2 as usize].n = [u, nb, t];
        self.set_tri(u, [d, c, p], [t2, u2, ub]);
        self.flips.extend([(t, 2), (t2, 1), (u, 2), (u2, 1)]);
    }

    /// Restores the Delaunay property across the edge of `t` opposite `v[i]`,
    /// where `v[i]` is the newest vertex.
    fn legalize(&mut self, t: u32, i: usize) {
        let tri = self.tris[t as usize];
        let u = tri.n[i];
        if u == NONE {
            return;
        }
        let (p, b, c) = (tri.v[i], tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]);
        let ut = self.tris[u as usize];
        let j = ut.n.iter().position(|&x| x == t).expect("adjacency is symmetric");
        let d = ut.v[j];
        if incircle(self.pos(p), self.pos(b), self.pos(c), self.pos(d)) <= 0 {
            return;
        }
        let (nt_b, nt_c) = (tri.n[(i + 1) % 3], tri.n[(i + 2) % 3]);
        let (nu_c, nu_b) = (ut.n[(j + 1) % 3], ut.n[(j + 2) % 3]);
        self.set_tri(t, [p, b, d], [nu_c, u, nt_c]);
        self.set_tri(u, [p, d, c], [nu_b, nt_b, t]);
        self.relink(nu_c, u, t);
        self.relink(nt_b, t, u);
        self.flips.extend([(t, 0), (u, 0)]);
    }
}

/// Greedy insertion until every sample is within `max_error` meters of the
/// mesh or `max_vertices` vertices exist.
pub fn triangulate_greedy(grid: &DemGrid, max_error: f64, max_vertices: usize) -> Result<TerrainMesh, MeshError> {
    if !(max_error >= 0.0) || !max_error.is_finite() {
        return Err(MeshError::BadParams(format!("max_error must be a finite value >= 0, got {max_error}")));
    }
    if max_vertices < 4 {
        return Err(MeshError::BadParams(format!("max_vertices must be at least 4, got {max_vertices}")));
    }
    let (w, h) = (grid.width(), grid.height());
    let mut b = Builder {
        width: w as i64,
        z: grid.values(),
        pts: Vec::new(),
        samples: Vec::new(),
        tris: Vec::new(),
        heap: BinaryHeap::new(),
        max_error,
        dirty: Vec::new(),
        flips: Vec::new(),
    };
    let corners = [0, w - 1, w * h - 1, w * (h - 1)].map(|s| b.add_vertex(s as u32));
    b.new_tri([corners[0], corners[1], corners[2]], [NONE, 1, NONE]);
    b.new_tri([corners[0], corners[2], corners[3]], [NONE, NONE, 0]);
    b.flush_dirty();

    let mut budget_exhausted = false;
    while let Some(top) = b.heap.peek().copied() {
        if b.pts.len() >= max_vertices {
            budget_exhausted = true;
            break;
        }
        b.heap.pop();
        if b.tris[top.tri as usize].version != top.version {
            continue;
        }
        b.insert(top.tri, top.sample);
    }

    let max_error_bound = b.tris.iter().map(|t| t.err).fold(0.0, f64::max);
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    let vertices = b.pts.iter().zip(&b.samples).map(|(&(x, y), &s)| [x as f64, y as f64, grid.values()[s as usize] as f64]).collect();
    let uvs = b.pts.iter().map(|&(x, y)| [x as f64 / wf, 1.0 - y as f64 / hf]).collect();
    let triangles = b.tris.iter().map(|t| t.v).collect();
    Ok(TerrainMesh { vertices, uvs, triangles, max_error_bound, budget_exhausted })
}

/// Largest absolute difference between a sample and the mesh surface above it.
pub fn mesh_error(mesh: &TerrainMesh, grid: &DemGrid) -> f64 {
    let w = grid.width() as i64;
    let z = grid.values();
    let mut worst = 0.0f64;
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| {
            let p = mesh.vertices[v as usize];
            (p[0] as i64, p[1] as i64)
        });
        let [za, zb, zc] = t.map(|v| mesh.vertices[v as usize][2]);
        for_each_covered(a, b, c, |x, y| {
            let e = (z[(y * w + x) as usize] as f64 - interpolate(a, b, c, za, zb, zc, x, y)).abs();
            worst = worst.max(e);
        });
    }
    worst
}

pub fn export_mesh(mesh: &TerrainMesh, format: MeshFormat) -> Vec<u8> {
    match format {
        MeshFormat::BinaryStl => export_stl(mesh),
        MeshFormat::Obj => export_obj(mesh).into_bytes(),
    }
}

fn export_stl(mesh: &TerrainMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
    let mut header = [0u8; 80];
    let tag = b"floodmap terrain mesh";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| mesh.vertices[v as usize]);
        let (u, v) = ([b[0] - a[0], b[1] - a[1], b[2] - a[2]], [c[0] - a[0], c[1] - a[1], c[2] - a[2]]);
        let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let n = if len > 0.0 { n.map(|x| x / len) } else { [0.0, 0.0, 1.0] };
        for x in n.iter().chain(&a).chain(&b).chain(&c) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

fn export_obj(mesh: &TerrainMesh) -> String {
    let mut s = String::with_capacity(40 * (mesh.vertices.len() * 2 + mesh.triangles.len()));
    s.push_str("# floodmap terrain mesh\n");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.uvs {
        let _ = writeln!(s, "vt {} {}", t[0], t[1]);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
    }
    s
}

/// Positions, texture coordinates and zero-based faces read from OBJ text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjMesh {
    pub positions: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
}

pub fn parse_obj(text: &str) -> Result<ObjMesh, MeshError> {
    let mut mesh = ObjMesh::default();
    let num = |s: Option<&str>, line: usize| -> Result<f64, MeshError> {
        s.and_then(|s| s.parse().ok()).ok_or_else(|| MeshError::Parse(format!("line {line}: bad number")))
    };
    for (k, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => mesh.positions.push([num(parts.next(), k)?, num(parts.next(), k)?, num(parts.next(), k)?]),
            Some("vt") => mesh.uvs.push([num(parts.next(), k)?, num(parts.next(), k)?]),
            Some("f") => {
                let mut face = [0u32; 3];
                for slot in &mut face {
                    let idx: u32 = parts
                        .next()
                        .and_then(|p| p.split('/').next())
                        .and_then(|p| p.parse().ok())
                        .filter(|&i: &u32| i >= 1)
                        .ok_or_else(|| MeshError::Parse(format!("line {k}: bad face index")))?;
                    *slot = idx - 1;
                }
                mesh.faces.push(face);
            }
            _ => {}
        }
    }
    if let Some(bad) = mesh.faces.iter().flatten().find(|&&i| i as usize >= mesh.positions.len()) {
        return Err(MeshError::Parse(format!("face index {} out of range", bad + 1)));
    }
    Ok(mesh)
}
