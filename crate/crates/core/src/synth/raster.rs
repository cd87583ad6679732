//! Pinhole z-buffer rasterizer for lit surface renders and vertex-splat
//! point renders.
//!
//! Screen coordinates are snapped to a fixed-point grid with
//! [`SUBPIXEL_BITS`] fractional bits and coverage is decided with exact
//! integer edge functions, so renders are bit-reproducible. Pixel `(i, j)`
//! is sampled at its center `(i + 0.5, j + 0.5)`. Depth ties keep the
//! earlier (lower-index) triangle or vertex.

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::mesh::{subdivide_mesh, TriMesh, DEFAULT_VERTEX_CAP};
use super::SynthError;
use crate::geometry::Pose;

pub const SUBPIXEL_BITS: u32 = 8;
const SUBPIXEL_SCALE: f64 = (1u32 << SUBPIXEL_BITS) as f64;
const HALF_PIXEL: i128 = 1 << (SUBPIXEL_BITS - 1);

pub const AMBIENT: f32 = 0.3;
pub const DIFFUSE: f32 = 0.7;

/// Relative depth bias (times `far - near`) used when testing point
/// splats against the surface depth.
pub const POINT_DEPTH_BIAS: f64 = 1e-4;

const NO_TRIANGLE: u32 = u32::MAX;

/// Direction the single light travels in (pointing from the light into the
/// scene), world frame.
pub fn light_direction() -> Vector3<f64> {
    Vector3::new(0.3, 0.5, -1.0).normalize()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_y: 70f64.to_radians(),
            near: 0.05,
            far: 50.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 16 || self.height < 16 {
            return Err(SynthError::Config(format!(
                "image size {}x{} below 16x16",
                self.width, self.height
            )));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(SynthError::Config(format!(
                "fov_y {} outside (0, pi)",
                self.fov_y
            )));
        }
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return Err(SynthError::Config(format!(
                "need 0 < near < far, got {} / {}",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        0.5 * f64::from(self.height) / (0.5 * self.fov_y).tan()
    }

    /// Projects a camera-frame point with `z > 0` to continuous pixel
    /// coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        let f = self.focal();
        (
            f * p.x / p.z + 0.5 * f64::from(self.width),
            f * p.y / p.z + 0.5 * f64::from(self.height),
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Per-pixel nearest surface: depth along the optical axis and the index of
/// the source triangle.
#[derive(Debug, Clone)]
pub struct SurfaceBuffer {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    pub triangle: Vec<u32>,
}

impl SurfaceBuffer {
    fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            triangle: vec![NO_TRIANGLE; n],
        }
    }

    pub fn triangle_at(&self, x: u32, y: u32) -> Option<u32> {
        let t = self.triangle[(y * self.width + x) as usize];
        (t != NO_TRIANGLE).then_some(t)
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
}

fn clip_near(poly: &[ClipVertex], near: f64) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a.p.z >= near;
        let b_in = b.p.z >= near;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (near - a.p.z) / (b.p.z - a.p.z);
            let mut p = a.p + (b.p - a.p) * t;
            p.z = near;
            out.push(ClipVertex { p });
        }
    }
    out
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: i128,
    y: i128,
    inv_z: f64,
}

fn edge(a: &ScreenVertex, b: &ScreenVertex, px: i128, py: i128) -> i128 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

/// Whether samples exactly on edge `a -> b` belong to a positively oriented
/// triangle. Antisymmetric in the edge direction, so a shared edge belongs to
/// exactly one of its two triangles.
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy < 0 || (dy == 0 && dx > 0)
}

fn to_fixed(v: f64) -> i128 {
    (v * SUBPIXEL_SCALE).round() as i128
}

fn rasterize_screen_triangle(
    buf: &mut SurfaceBuffer,
    mut v: [ScreenVertex; 3],
    tri_index: u32,
    intr: &CameraIntrinsics,
) {
    let mut area = edge(&v[0], &v[1], v[2].x, v[2].y);
    if area == 0 {
        return;
    }
    if area < 0 {
        v.swap(1, 2);
        area = -area;
    }
    let min_x = v.iter().map(|p| p.x).min().unwrap();
    let max_x = v.iter().map(|p| p.x).max().unwrap();
    let min_y = v.iter().map(|p| p.y).min().unwrap();
    let max_y = v.iter().map(|p| p.y).max().unwrap();
    let scale = SUBPIXEL_SCALE as i128;
    let first = |lo: i128| -> i128 { (lo - HALF_PIXEL).div_euclid(scale) + 1 };
    let last = |hi: i128| -> i128 { (hi - HALF_PIXEL).div_euclid(scale) };
    let x0 = first(min_x - 1).max(0);
    let x1 = last(max_x).min(i128::from(buf.width) - 1);
    let y0 = first(min_y - 1).max(0);
    let y1 = last(max_y).min(i128::from(buf.height) - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let own = [
        owns_edge(&v[1], &v[2]),
        owns_edge(&v[2], &v[0]),
        owns_edge(&v[0], &v[1]),
    ];
    let area_f = area as f64;
    for py in y0..=y1 {
        let sy = py * scale + HALF_PIXEL;
        for px in x0..=x1 {
            let sx = px * scale + HALF_PIXEL;
            let w = [
                edge(&v[1], &v[2], sx, sy),
                edge(&v[2], &v[0], sx, sy),
                edge(&v[0], &v[1], sx, sy),
            ];
            let inside = (0..3).all(|k| w[k] > 0 || (w[k] == 0 && own[k]));
            if !inside {
                continue;
            }
            let inv_z =
                (w[0] as f64 * v[0].inv_z + w[1] as f64 * v[1].inv_z + w[2] as f64 * v[2].inv_z)
                    / area_f;
            let z = 1.0 / inv_z;
            if !(z >= intr.near && z <= intr.far) {
                continue;
            }
            let idx = py as usize * buf.width as usize + px as usize;
            if z < buf.depth[idx] {
                buf.depth[idx] = z;
                buf.triangle[idx] = tri_index;
            }
        }
    }
}

/// Z-buffers every triangle of `mesh` seen from `pose`.
pub fn rasterize_surfaces(mesh: &TriMesh, pose: &Pose, intr: &CameraIntrinsics) -> SurfaceBuffer {
    let mut buf = SurfaceBuffer::new(intr.width, intr.height);
    let cam: Vec<Vector3<f64>> = mesh
        .positions
        .iter()
        .map(|p| pose.world_to_camera(p))
        .collect();
    let f = intr.focal();
    let (cx, cy) = (0.5 * f64::from(intr.width), 0.5 * f64::from(intr.height));
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let poly: Vec<ClipVertex> = tri
            .iter()
            .map(|&i| ClipVertex { p: cam[i as usize] })
            .collect();
        if poly.iter().all(|v| v.p.z < intr.near) || poly.iter().all(|v| v.p.z > intr.far) {
            continue;
        }
        let clipped = if poly.iter().all(|v| v.p.z >= intr.near) {
            poly
        } else {
            clip_near(&poly, intr.near)
        };
        if clipped.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = clipped
            .iter()
            .map(|c| ScreenVertex {
                x: to_fixed(f * c.p.x / c.p.z + cx),
                y: to_fixed(f * c.p.y / c.p.z + cy),
                inv_z: 1.0 / c.p.z,
            })
            .collect();
        for k in 1..screen.len() - 1 {
            rasterize_screen_triangle(
                &mut buf,
                [screen[0], screen[k], screen[k + 1]],
                t as u32,
                intr,
            );
        }
    }
    buf
}

fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Flat-shaded face colors: mean vertex albedo times ambient plus two-sided
/// Lambertian diffuse.
fn face_colors(mesh: &TriMesh) -> Vec<[u8; 3]> {
    let light = -light_direction();
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            let n = (b - a).cross(&(c - a));
            let nn = n.norm();
            let lambert = if nn > 0.0 {
                (n.dot(&light) / nn).abs() as f32
            } else {
                0.0
            };
            let shade = (AMBIENT + DIFFUSE * lambert).min(1.0);
            let tri = mesh.triangles[t];
            [0, 1, 2].map(|ch| {
                let albedo = tri
                    .iter()
                    .map(|&i| mesh.colors[i as usize][ch])
                    .sum::<f32>()
                    / 3.0;
                to_u8(albedo * shade)
            })
        })
        .collect()
}

fn shade_surfaces(mesh: &TriMesh, buf: &SurfaceBuffer) -> RgbImage {
    let colors = face_colors(mesh);
    let mut img = RgbImage::new(buf.width, buf.height);
    for (i, &t) in buf.triangle.iter().enumerate() {
        if t != NO_TRIANGLE {
            let x = i as u32 % buf.width;
            let y = i as u32 / buf.width;
            img.put_pixel(x, y, Rgb(colors[t as usize]));
        }
    }
    img
}

/// Lit surface render; background is black.
pub fn render_rgb(
    mesh: &TriMesh,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<RgbImage, SynthError> {
    intr.validate()?;
    let buf = rasterize_surfaces(mesh, pose, intr);
    Ok(shade_surfaces(mesh, &buf))
}

/// Splats every vertex of `points` that survives the surface depth test
/// against `surface` as one unlit pixel of its albedo.
pub fn splat_points(
    surface_mesh: &TriMesh,
    surface: &SurfaceBuffer,
    points: &TriMesh,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> RgbImage {
    let bias = POINT_DEPTH_BIAS * (intr.far - intr.near);
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut img = RgbImage::new(intr.width, intr.height);
    let mut plane_cache: Vec<Option<(Vector3<f64>, f64)>> =
        vec![None; surface_mesh.triangles.len()];
    for (p_world, color) in points.positions.iter().zip(&points.colors) {
        let p = pose.world_to_camera(p_world);
        if !(p.z >= intr.near && p.z <= intr.far) {
            continue;
        }
        let (u, v) = intr.project(&p);
        let (px, py) = (u.floor(), v.floor());
        if !(px >= 0.0 && py >= 0.0 && px < w as f64 && py < h as f64) {
            continue;
        }
        let idx = py as usize * w + px as usize;
        let tri = surface.triangle[idx];
        let surface_z = if tri == NO_TRIANGLE {
            f64::INFINITY
        } else {
            let plane = plane_cache[tri as usize].get_or_insert_with(|| {
                let [a, b, c] = surface_mesh.corners(tri as usize);
                let (a, b, c) = (
                    pose.world_to_camera(&a),
                    pose.world_to_camera(&b),
                    pose.world_to_camera(&c),
                );
                let n = (b - a).cross(&(c - a));
                (n, n.dot(&a))
            });
            let ray = Vector3::new(p.x / p.z, p.y / p.z, 1.0);
            let denom = plane.0.dot(&ray);
            let s = plane.1 / denom;
            if denom.abs() >= 1e-12 * plane.0.norm() && s > 0.0 {
                s
            } else {
                surface.depth[idx]
            }
        };
        if p.z > surface_z + bias {
            continue;
        }
        if p.z < depth[idx] {
            depth[idx] = p.z;
            img.put_pixel(px as u32, py as u32, Rgb(color.map(to_u8)));
        }
    }
    img
}

/// Point render: subdivides to `max_edge`, then splats the visible vertices.
pub fn render_pointcloud(
    mesh: &TriMesh,
    pose: &Pose,
    intr: &CameraIntrinsics,
    max_edge: f64,
) -> Result<RgbImage, SynthError> {
    intr.validate()?;
    let dense = subdivide_mesh(mesh, max_edge, DEFAULT_VERTEX_CAP)?;
    let surface = rasterize_surfaces(mesh, pose, intr);
    Ok(splat_points(mesh, &surface, &dense, pose, intr))
}

/// Renders RGB / point pairs of one scene, subdividing once.
#[derive(Debug, Clone)]
pub struct PairRenderer {
    mesh: TriMesh,
    dense: TriMesh,
    intr: CameraIntrinsics,
}

impl PairRenderer {
    pub fn new(
        mesh: TriMesh,
        intr: CameraIntrinsics,
        max_edge: f64,
        vertex_cap: usize,
    ) -> Result<Self, SynthError> {
        intr.validate()?;
        let dense = subdivide_mesh(&mesh, max_edge, vertex_cap)?;
        Ok(Self { mesh, dense, intr })
    }

    pub fn dense_vertex_count(&self) -> usize {
        self.dense.vertex_count()
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }

    /// `(rgb, pointcloud)`; identical to [`render_rgb`] and
    /// [`render_pointcloud`] at the same pose.
    pub fn render(&self, pose: &Pose) -> (RgbImage, RgbImage) {
        let surface = rasterize_surfaces(&self.mesh, pose, &self.intr);
        let rgb = shade_surfaces(&self.mesh, &surface);
        let pc = splat_points(&self.mesh, &surface, &self.dense, pose, &self.intr);
        (rgb, pc)
    }
}
