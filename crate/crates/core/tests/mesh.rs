use floodmap_core::mesh::{mesh_error, triangulate_greedy, TerrainMesh};
use floodmap_core::raster::DemGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rough_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DemGrid {
    // Smooth bumps plus noise, in meters.
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(-20.0..20.0), rng.random_range(2.0..10.0))
        })
        .collect();
    let v = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let s: f64 = bumps.iter().map(|(cx, cy, a, r)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (r * r)).exp()).sum();
            (s + rng.random_range(-0.5..0.5)) as f32
        })
        .collect();
    DemGrid::new(w, h, 1.0, v).unwrap()
}

fn xy(m: &TerrainMesh, v: u32) -> (i64, i64) {
    let p = m.vertices[v as usize];
    (p[0] as i64, p[1] as i64)
}

fn orient(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> i64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Deviation at each sample, locating its triangle by exhaustive search.
fn brute_error(m: &TerrainMesh, g: &DemGrid) -> f64 {
    let mut worst = 0.0f64;
    for y in 0..g.height() as i64 {
        for x in 0..g.width() as i64 {
            let p = (x, y);
            let t = m
                .triangles
                .iter()
                .find(|t| {
                    let [a, b, c] = t.map(|v| xy(m, v));
                    orient(a, b, p) >= 0 && orient(b, c, p) >= 0 && orient(c, a, p) >= 0
                })
                .expect("every sample is covered");
            let [a, b, c] = t.map(|v| xy(m, v));
            let area = orient(a, b, c) as f64;
            let z = t.map(|v| m.vertices[v as usize][2]);
            let interp = (orient(b, c, p) as f64 * z[0] + orient(c, a, p) as f64 * z[1] + orient(a, b, p) as f64 * z[2]) / area;
            worst = worst.max((g.get(x as usize, y as usize) as f64 - interp).abs());
        }
    }
    worst
}

#[test]
fn meshes_are_valid_delaunay_triangulations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (w, h) = (rng.random_range(2..24), rng.random_range(2..24));
        let g = rough_grid(&mut rng, w, h);
        let m = triangulate_greedy(&g, 0.3, usize::MAX).unwrap();
        let mut area = 0;
        for t in &m.triangles {
            let [a, b, c] = t.map(|v| xy(&m, v));
            let o = orient(a, b, c);
            assert!(o > 0);
            area += o;
            for v in 0..m.vertices.len() as u32 {
                if t.contains(&v) {
                    continue;
                }
                let d = xy(&m, v);
                let det = {
                    let r = |p: (i64, i64)| ((p.0 - d.0) as i128, (p.1 - d.1) as i128);
                    let ((ax, ay), (bx, by), (cx, cy)) = (r(a), r(b), r(c));
                    (ax * ax + ay * ay) * (bx * cy - cx * by) + (bx * bx + by * by) * (cx * ay - ax * cy) + (cx * cx + cy * cy) * (ax * by - bx * ay)
                };
                assert!(det <= 0, "vertex {v} inside circumcircle of {t:?}");
            }
        }
        assert_eq!(area, 2 * (w as i64 - 1) * (h as i64 - 1));
        assert_eq!(m.triangles.len(), 2 * m.vertices.len() - 2 - hull_vertices(&m, w, h));
        let e = brute_error(&m, &g);
        assert_eq!(e, mesh_error(&m, &g));
        assert!(e <= 0.3);
        assert_eq!(e, m.max_error_bound);
    }
}

/// Vertices on the rectangle boundary (Euler: T = 2V - 2 - B).
fn hull_vertices(m: &TerrainMesh, w: usize, h: usize) -> usize {
    m.vertices
        .iter()
        .filter(|p| p[0] == 0.0 || p[1] == 0.0 || p[0] == (w - 1) as f64 || p[1] == (h - 1) as f64)
        .count()
}

#[test]
fn tighter_bounds_need_more_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = rough_grid(&mut rng, 40, 30);
    let counts: Vec<usize> =
        [4.0, 2.0, 1.0, 0.5, 0.25, 0.0].iter().map(|&e| triangulate_greedy(&g, e, usize::MAX).unwrap().vertices.len()).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    assert_eq!(*counts.last().unwrap(), 40 * 30);
}

#[test]
fn budget_stops_insertion() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = rough_grid(&mut rng, 32, 32);
    let m = triangulate_greedy(&g, 0.0, 50).unwrap();
    assert_eq!(m.vertices.len(), 50);
    assert!(m.budget_exhausted);
    assert_eq!(m.max_error_bound, mesh_error(&m, &g));
}
