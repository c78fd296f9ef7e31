//! Gaussian smoothing of class indicators and iso-surface extraction by
//! marching tetrahedra.

use std::collections::HashMap;
use std::io::Write;

use crate::grid::Grid3;
use crate::volume_io::Spacing;

/// 1-D Gaussian taps for radius `ceil(3σ)`.
fn taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect()
}

/// Indicator of `class`, blurred by a Gaussian of standard deviation `sigma`
/// voxels. Taps falling outside the grid are dropped and the rest
/// renormalized, so a constant field stays constant.
pub fn smooth_class_field(labels: &Grid3<u8>, class: u8, sigma: f64) -> Grid3<f32> {
    let mut field: Vec<f64> = labels.data().iter().map(|&l| (l == class) as u8 as f64).collect();
    let dims = labels.dims();
    if sigma > 0.0 {
        let k = taps(sigma);
        let r = (k.len() / 2) as isize;
        let strides = [dims[1] * dims[2], dims[2], 1];
        let mut out = vec![0.0; field.len()];
        for axis in 0..3 {
            let n = dims[axis] as isize;
            let st = strides[axis];
            for (idx, o) in out.iter_mut().enumerate() {
                let i = ((idx / st) % dims[axis]) as isize;
                let base = idx - i as usize * st;
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (t, &kv) in k.iter().enumerate() {
                    let j = i + t as isize - r;
                    if (0..n).contains(&j) {
                        acc += kv * field[base + j as usize * st];
                        wsum += kv;
                    }
                }
                *o = acc / wsum;
            }
            std::mem::swap(&mut field, &mut out);
        }
    }
    Grid3::from_vec(dims, field.into_iter().map(|v| v as f32).collect()).expect("same dims")
}

/// Triangle mesh of one class, vertices `(x, y, z)` in mm with `x` along W,
/// `y` along H and `z` along D.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassMesh {
    pub class: u8,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl ClassMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                let cross = [
                    b[1] * c[2] - b[2] * c[1],
                    b[2] * c[0] - b[0] * c[2],
                    b[0] * c[1] - b[1] * c[0],
                ];
                (a[0] * cross[0] + a[1] * cross[1] + a[2] * cross[2]) / 6.0
            })
            .sum()
    }

    pub fn write_ply(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "ply\nformat ascii 1.0")?;
        writeln!(out, "comment class {}", self.class)?;
        writeln!(out, "element vertex {}", self.vertices.len())?;
        writeln!(out, "property float x\nproperty float y\nproperty float z")?;
        writeln!(out, "element face {}", self.triangles.len())?;
        writeln!(out, "property list uchar int vertex_indices\nend_header")?;
        for v in &self.vertices {
            writeln!(out, "{} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn write_obj(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# class {}", self.class)?;
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

/// Cube corner offsets `(d, h, w)`, bit `i` of the index selecting each axis.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [0, 0, 1],
    [0, 1, 0],
    [0, 1, 1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Six tetrahedra around the 0–7 diagonal; neighboring cubes agree on
/// shared faces, so the surface is closed.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

/// Iso-surface of `field` at level `iso`. The field is treated as zero
/// outside the grid so surfaces of blobs touching the border are closed.
pub fn extract_mesh(field: &Grid3<f32>, iso: f64, spacing: Spacing, class: u8) -> ClassMesh {
    let [dn, hn, wn] = field.dims();
    // padded lookup: coordinates shifted by one
    let at = |p: [usize; 3]| -> f64 {
        if p.iter().any(|&c| c == 0) || p[0] > dn || p[1] > hn || p[2] > wn {
            0.0
        } else {
            field[[p[0] - 1, p[1] - 1, p[2] - 1]] as f64
        }
    };
    let sp = spacing.as_array();
    let pos = |p: [usize; 3]| -> [f64; 3] {
        [
            (p[2] as f64 - 1.0) * sp[2],
            (p[1] as f64 - 1.0) * sp[1],
            (p[0] as f64 - 1.0) * sp[0],
        ]
    };
    let key = |p: [usize; 3]| -> u64 { ((p[0] as u64) * (hn as u64 + 2) + p[1] as u64) * (wn as u64 + 2) + p[2] as u64 };

    let mut mesh = ClassMesh {
        class,
        ..Default::default()
    };
    let mut edge_vertex: HashMap<(u64, u64), u32> = HashMap::new();
    let mut vertex_on = |a: [usize; 3], b: [usize; 3], fa: f64, fb: f64, mesh: &mut ClassMesh| -> u32 {
        let (ka, kb) = (key(a), key(b));
        let k = if ka < kb { (ka, kb) } else { (kb, ka) };
        *edge_vertex.entry(k).or_insert_with(|| {
            let t = (iso - fa) / (fb - fa);
            let (pa, pb) = (pos(a), pos(b));
            mesh.vertices.push([
                pa[0] + t * (pb[0] - pa[0]),
                pa[1] + t * (pb[1] - pa[1]),
                pa[2] + t * (pb[2] - pa[2]),
            ]);
            (mesh.vertices.len() - 1) as u32
        })
    };

    for d in 0..=dn {
        for h in 0..=hn {
            for w in 0..=wn {
                let pts: [[usize; 3]; 8] = CORNERS.map(|c| [d + c[0], h + c[1], w + c[2]]);
                let vals: [f64; 8] = pts.map(at);
                let inside = vals.map(|v| v >= iso);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }
                for tet in TETS {
                    let ins: Vec<usize> = tet.iter().copied().filter(|&i| inside[i]).collect();
                    let outs: Vec<usize> = tet.iter().copied().filter(|&i| !inside[i]).collect();
                    if ins.is_empty() || outs.is_empty() {
                        continue;
                    }
                    let mut edge = |i: usize, o: usize, mesh: &mut ClassMesh| vertex_on(pts[i], pts[o], vals[i], vals[o], mesh);
                    let tris: Vec<[u32; 3]> = match (ins.len(), outs.len()) {
                        (1, 3) => vec![[
                            edge(ins[0], outs[0], &mut mesh),
                            edge(ins[0], outs[1], &mut mesh),
                            edge(ins[0], outs[2], &mut mesh),
                        ]],
                        (3, 1) => vec![[
                            edge(ins[0], outs[0], &mut mesh),
                            edge(ins[1], outs[0], &mut mesh),
                            edge(ins[2], outs[0], &mut mesh),
                        ]],
                        _ => {
                            // quad between the two inside and two outside corners
                            let a = edge(ins[0], outs[0], &mut mesh);
                            let b = edge(ins[0], outs[1], &mut mesh);
                            let c = edge(ins[1], outs[1], &mut mesh);
                            let e = edge(ins[1], outs[0], &mut mesh);
                            vec![[a, b, c], [a, c, e]]
                        }
                    };
                    // orient each triangle to face from inside to outside corners
                    let centroid = |idx: &[usize]| -> [f64; 3] {
                        let mut c = [0.0; 3];
                        for &i in idx {
                            let p = pos(pts[i]);
                            for k in 0..3 {
                                c[k] += p[k] / idx.len() as f64;
                            }
                        }
                        c
                    };
                    let (ci, co) = (centroid(&ins), centroid(&outs));
                    let dir = [co[0] - ci[0], co[1] - ci[1], co[2] - ci[2]];
                    for mut t in tris {
                        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                            continue;
                        }
                        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                        let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                        if n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2] < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let g = Grid3::from_fn([3, 4, 5], |d, h, w| ((d + h + w) % 3) as u8);
        let f = smooth_class_field(&g, 1, 0.0);
        for (a, b) in f.data().iter().zip(g.data()) {
            assert_eq!(*a, (*b == 1) as u8 as f32);
        }
    }

    #[test]
    fn constant_field_stays_one() {
        let g = Grid3::filled([5, 6, 7], 2u8);
        let f = smooth_class_field(&g, 2, 1.3);
        assert!(f.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn single_voxel_center_weight() {
        let mut g = Grid3::filled([9, 9, 9], 0u8);
        g[[4, 4, 4]] = 1;
        let f = smooth_class_field(&g, 1, 1.0);
        let k = taps(1.0);
        let w0 = k[k.len() / 2] / k.iter().sum::<f64>();
        assert!((f[[4, 4, 4]] as f64 - w0.powi(3)).abs() < 1e-6);
    }

    #[test]
    fn box_volume() {
        let g = Grid3::from_fn([12, 12, 12], |d, h, w| {
            ((2..10).contains(&d) && (3..9).contains(&h) && (1..11).contains(&w)) as u8
        });
        let f = smooth_class_field(&g, 1, 0.0);
        let m = extract_mesh(&f, 0.5, Spacing::isotropic(1.0).unwrap(), 1);
        let v = m.signed_volume();
        assert!((v - 480.0).abs() / 480.0 < 0.05, "{v}");
    }

    #[test]
    fn empty_field_gives_empty_mesh() {
        let f = Grid3::filled([4, 4, 4], 0f32);
        assert!(extract_mesh(&f, 0.5, Spacing::isotropic(1.0).unwrap(), 1).is_empty());
    }
}
