use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{Rgb, TriMesh};
use super::{mix_seed, SynthConfig, SynthError};
use crate::geometry::SceneBounds;

/// Clearance kept between objects and the room shell, meters.
const SHELL_CLEARANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Box,
    /// Thin slab hung parallel to a wall.
    Panel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Rotation about the vertical axis, radians.
    pub yaw: f64,
    pub color: Rgb,
}

impl SceneObject {
    fn corners(&self) -> [Vector3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        let [hx, hy, hz] = self.half_extents;
        let ctr = Vector3::from(self.center);
        let mut out = [Vector3::zeros(); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let lx = if k & 1 == 0 { -hx } else { hx };
            let ly = if k & 2 == 0 { -hy } else { hy };
            let lz = if k & 4 == 0 { -hz } else { hz };
            *slot = ctr + Vector3::new(c * lx - s * ly, s * lx + c * ly, lz);
        }
        out
    }

    /// Axis-aligned bounding box of the object.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let corners = self.corners();
        let mut lo = corners[0];
        let mut hi = corners[0];
        for p in &corners[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    fn append_to(&self, mesh: &mut TriMesh) {
        let v = self.corners();
        // corner index bits: x = 1, y = 2, z = 4
        const FACES: [[usize; 4]; 6] = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        for f in FACES {
            mesh.push_quad([v[f[0]], v[f[1]], v[f[2]], v[f[3]]], self.color);
        }
    }
}

/// Procedural room description; the mesh is a pure function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: usize,
    pub seed: u64,
    /// Room size in meters; the room spans `[0, size]` on each axis.
    pub room: [f64; 3],
    pub objects: Vec<SceneObject>,
    /// Floor, ceiling, then the walls at `y = 0`, `x = max`, `y = max`, `x = 0`.
    pub wall_palette: Vec<Rgb>,
}

impl SceneSpec {
    pub fn bounds(&self) -> SceneBounds {
        SceneBounds::new(Vector3::zeros(), Vector3::from(self.room))
            .expect("room sizes are positive")
    }

    /// Object bounding boxes grown by `margin` meters.
    pub fn keep_out_volumes(&self, margin: f64) -> Vec<SceneBounds> {
        self.objects
            .iter()
            .filter_map(|o| {
                let (lo, hi) = o.aabb();
                SceneBounds::new(lo - Vector3::repeat(margin), hi + Vector3::repeat(margin)).ok()
            })
            .collect()
    }
}

/// HSV with all components in `[0, 1]` to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - f64::from(i);
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

/// Hue band of a scene: scenes own disjoint slices of the hue circle, which
/// keeps their color statistics separable.
fn scene_color(rng: &mut ChaCha8Rng, scene_id: usize, num_scenes: usize) -> Rgb {
    let band = 1.0 / num_scenes as f64;
    let center = (scene_id as f64 + 0.5) * band;
    let h = center + rng.random_range(-0.35..0.35) * band;
    let s = rng.random_range(0.45..0.85);
    let v = rng.random_range(0.55..0.95);
    hsv_to_rgb(h, s, v)
}

/// Deterministic room for `scene_id`: floor, ceiling, four walls and
/// `min_objects..=max_objects` boxes and wall panels.
pub fn build_scene(
    scene_id: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<(SceneSpec, TriMesh, SceneBounds), SynthError> {
    config.validate()?;
    if scene_id >= config.num_scenes {
        return Err(SynthError::SceneOutOfRange {
            scene_id,
            num_scenes: config.num_scenes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, scene_id as u64));
    let room: [f64; 3] = std::array::from_fn(|i| {
        if config.room_max[i] > config.room_min[i] {
            rng.random_range(config.room_min[i]..config.room_max[i])
        } else {
            config.room_min[i]
        }
    });
    let wall_palette: Vec<Rgb> = (0..6)
        .map(|_| scene_color(&mut rng, scene_id, config.num_scenes))
        .collect();
    let n_objects = rng.random_range(config.min_objects..=config.max_objects);
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let color = scene_color(&mut rng, scene_id, config.num_scenes);
        let object = if rng.random_bool(0.65) {
            random_box(&mut rng, &room, color)
        } else {
            random_panel(&mut rng, &room, color)
        };
        objects.push(object);
    }
    let spec = SceneSpec {
        scene_id,
        seed,
        room,
        objects,
        wall_palette,
    };
    let mesh = mesh_from_spec(&spec);
    mesh.validate()?;
    Ok((spec.clone(), mesh, spec.bounds()))
}

fn random_box(rng: &mut ChaCha8Rng, room: &[f64; 3], color: Rgb) -> SceneObject {
    let max_half = [
        0.75f64.min(room[0] * 0.2),
        0.75f64.min(room[1] * 0.2),
        0.6f64.min(room[2] * 0.3),
    ];
    let half = [
        rng.random_range(0.2..max_half[0].max(0.21)),
        rng.random_range(0.2..max_half[1].max(0.21)),
        rng.random_range(0.2..max_half[2].max(0.21)),
    ];
    let yaw = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = yaw.sin_cos();
    let rx = c.abs() * half[0] + s.abs() * half[1];
    let ry = s.abs() * half[0] + c.abs() * half[1];
    let lo_x = rx + 0.1;
    let lo_y = ry + 0.1;
    let x = rng.random_range(lo_x..(room[0] - lo_x).max(lo_x + 1e-3));
    let y = rng.random_range(lo_y..(room[1] - lo_y).max(lo_y + 1e-3));
    SceneObject {
        kind: ObjectKind::Box,
        center: [x, y, SHELL_CLEARANCE + half[2]],
        half_extents: half,
        yaw,
        color,
    }
}

fn random_panel(rng: &mut ChaCha8Rng, room: &[f64; 3], color: Rgb) -> SceneObject {
    let wall = rng.random_range(0..4usize);
    let along = if wall % 2 == 0 { room[0] } else { room[1] };
    let half_w = rng.random_range(0.3..(0.2 * along).max(0.31));
    let half_h = rng.random_range(0.25..(0.3 * room[2]).max(0.26));
    let half_t = 0.03;
    let offset = rng.random_range(0.08..0.3);
    let t = rng.random_range((half_w + 0.1)..(along - half_w - 0.1).max(half_w + 0.1 + 1e-3));
    let z_lo = half_h + 0.3;
    let z_hi = (room[2] - half_h - 0.1).max(z_lo + 1e-3);
    let z = rng.random_range(z_lo..z_hi);
    let (center, yaw) = match wall {
        0 => ([t, offset + half_t, z], 0.0),
        1 => (
            [room[0] - offset - half_t, t, z],
            std::f64::consts::FRAC_PI_2,
        ),
        2 => ([t, room[1] - offset - half_t, z], 0.0),
        _ => ([offset + half_t, t, z], std::f64::consts::FRAC_PI_2),
    };
    SceneObject {
        kind: ObjectKind::Panel,
        center,
        half_extents: [half_w, half_t, half_h],
        yaw,
        color,
    }
}

/// Tessellates a scene: the room shell first, then objects in order.
pub fn mesh_from_spec(spec: &SceneSpec) -> TriMesh {
    let [lx, ly, lz] = spec.room;
    let p = |x: f64, y: f64, z: f64| Vector3::new(x, y, z);
    let pal = &spec.wall_palette;
    let mut mesh = TriMesh::new();
    mesh.push_quad(
        [
            p(0.0, 0.0, 0.0),
            p(lx, 0.0, 0.0),
            p(lx, ly, 0.0),
            p(0.0, ly, 0.0),
        ],
        pal[0],
    );
    mesh.push_quad(
        [
            p(0.0, 0.0, lz),
            p(0.0, ly, lz),
            p(lx, ly, lz),
            p(lx, 0.0, lz),
        ],
        pal[1],
    );
    mesh.push_quad(
        [
            p(0.0, 0.0, 0.0),
            p(0.0, 0.0, lz),
            p(lx, 0.0, lz),
            p(lx, 0.0, 0.0),
        ],
        pal[2],
    );
    mesh.push_quad(
        [
            p(lx, 0.0, 0.0),
            p(lx, 0.0, lz),
            p(lx, ly, lz),
            p(lx, ly, 0.0),
        ],
        pal[3],
    );
    mesh.push_quad(
        [
            p(lx, ly, 0.0),
            p(lx, ly, lz),
            p(0.0, ly, lz),
            p(0.0, ly, 0.0),
        ],
        pal[4],
    );
    mesh.push_quad(
        [
            p(0.0, ly, 0.0),
            p(0.0, ly, lz),
            p(0.0, 0.0, lz),
            p(0.0, 0.0, 0.0),
        ],
        pal[5],
    );
    for o in &spec.objects {
        o.append_to(&mut mesh);
    }
    mesh
}
