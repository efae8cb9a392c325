//! Procedural indoor scenes and the raycasting renderer.
//!
//! A scene is a rectangular room built from axis-aligned boxes: floor,
//! ceiling, four walls, and randomly placed furniture and wall panels.
//! Every surface carries a procedural cell texture so rendered frames
//! contain plenty of corners for the feature detector.

use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::raster::{depth_to_code, InstanceMap, Raster16, RgbImage, DEPTH_CODE_MAX};
use crate::rng::{self, purpose};

pub const CATEGORY_FLOOR: u16 = 1;
pub const CATEGORY_CEILING: u16 = 2;
pub const CATEGORY_WALL: u16 = 3;
pub const CATEGORY_TABLE: u16 = 4;
pub const CATEGORY_CABINET: u16 = 5;
pub const CATEGORY_SHELF: u16 = 6;
pub const CATEGORY_SOFA: u16 = 7;
pub const CATEGORY_COLUMN: u16 = 8;
pub const CATEGORY_PICTURE: u16 = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    /// Point containment with the box grown by `margin` on every side.
    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - margin && p[a] <= self.max[a] + margin)
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a] < self.max[a])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub bounds: Aabb,
    pub instance_id: u16,
    pub category_id: u16,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone)]
pub struct SceneParams {
    pub width: f64,
    pub depth: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 12.0,
            depth: 12.0,
            wall_height: 2.8,
            wall_thickness: 0.1,
            min_obstacles: 10,
            max_obstacles: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub seed: u64,
    pub floor_extent: FloorExtent,
    pub obstacles: Vec<Obstacle>,
    pub wall_height: f64,
}

impl SceneModel {
    /// True when `p` lies outside every box grown by `margin` and inside
    /// the room.
    pub fn is_free(&self, p: &Vector3<f64>, margin: f64) -> bool {
        let e = &self.floor_extent;
        let inside = p.x > e.x_min && p.x < e.x_max && p.y > e.y_min && p.y < e.y_max;
        inside && !self.obstacles.iter().any(|o| o.bounds.contains(p, margin))
    }

    pub fn category_of(&self, instance_id: u16) -> Option<u16> {
        self.obstacles
            .iter()
            .find(|o| o.instance_id == instance_id)
            .map(|o| o.category_id)
    }

    /// Nearest front-facing box surface along `origin + t * dir`, `t > 0`.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (index, ob) in self.obstacles.iter().enumerate() {
            for axis in 0..3 {
                if dir[axis] == 0.0 {
                    continue;
                }
                // a ray travelling +axis can only enter through the min face
                let (plane, normal_sign) = if dir[axis] > 0.0 {
                    (ob.bounds.min[axis], -1.0)
                } else {
                    (ob.bounds.max[axis], 1.0)
                };
                let t = (plane - origin[axis]) / dir[axis];
                if t <= 0.0 || best.as_ref().is_some_and(|b| t >= b.t) {
                    continue;
                }
                let p = origin + dir * t;
                let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
                let on_face = p[b] >= ob.bounds.min[b]
                    && p[b] <= ob.bounds.max[b]
                    && p[c] >= ob.bounds.min[c]
                    && p[c] <= ob.bounds.max[c];
                if on_face {
                    let mut normal = Vector3::zeros();
                    normal[axis] = normal_sign;
                    best = Some(Hit {
                        t,
                        obstacle: index,
                        point: p,
                        normal,
                        axis,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub obstacle: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub axis: usize,
}

impl fmt::Display for SceneModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.floor_extent;
        write!(
            f,
            "scene seed={} extent=[{}, {}]x[{}, {}] obstacles={}",
            self.seed,
            e.x_min,
            e.x_max,
            e.y_min,
            e.y_max,
            self.obstacles.len()
        )
    }
}

/// Builds a deterministic room for `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneModel> {
    if params.width < 6.0 || params.depth < 6.0 {
        return Err(Error::InvalidArgument(format!(
            "floor extent {}x{} below 6x6 m",
            params.width, params.depth
        )));
    }
    if params.min_obstacles > params.max_obstacles {
        return Err(Error::InvalidArgument(
            "min_obstacles exceeds max_obstacles".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[purpose::SCENE]);
    let (w, d, h, th) = (
        params.width,
        params.depth,
        params.wall_height,
        params.wall_thickness,
    );
    let extent = FloorExtent {
        x_min: 0.0,
        x_max: w,
        y_min: 0.0,
        y_max: d,
    };
    let mut obstacles = Vec::new();
    let mut push = |rng: &mut rng::StreamRng, min: Vector3<f64>, max: Vector3<f64>, category| {
        let albedo = [
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
        ];
        obstacles.push(Obstacle {
            bounds: Aabb::new(min, max),
            instance_id: obstacles.len() as u16 + 1,
            category_id: category,
            albedo,
        });
    };
    let v = Vector3::new;
    push(&mut rng, v(0.0, 0.0, -0.1), v(w, d, 0.0), CATEGORY_FLOOR);
    push(&mut rng, v(0.0, 0.0, h), v(w, d, h + 0.1), CATEGORY_CEILING);
    push(&mut rng, v(0.0, 0.0, 0.0), v(th, d, h), CATEGORY_WALL);
    push(&mut rng, v(w - th, 0.0, 0.0), v(w, d, h), CATEGORY_WALL);
    push(&mut rng, v(th, 0.0, 0.0), v(w - th, th, h), CATEGORY_WALL);
    push(&mut rng, v(th, d - th, 0.0), v(w - th, d, h), CATEGORY_WALL);

    let center = v(w / 2.0, d / 2.0, 1.25);
    let count = rng.random_range(params.min_obstacles..=params.max_obstacles);
    let mut placed = 0;
    while placed < count {
        let category = rng.random_range(CATEGORY_TABLE..=CATEGORY_PICTURE);
        let (sx, sy, sz) = match category {
            CATEGORY_TABLE => (
                rng.random_range(0.8..1.6),
                rng.random_range(0.6..1.0),
                rng.random_range(0.7..0.8),
            ),
            CATEGORY_CABINET => (
                rng.random_range(0.5..1.2),
                rng.random_range(0.4..0.6),
                rng.random_range(1.6..2.2),
            ),
            CATEGORY_SHELF => (
                rng.random_range(0.8..1.8),
                rng.random_range(0.3..0.45),
                rng.random_range(1.8..2.4),
            ),
            CATEGORY_SOFA => (
                rng.random_range(1.6..2.2),
                rng.random_range(0.8..1.0),
                rng.random_range(0.8..0.9),
            ),
            CATEGORY_COLUMN => {
                let s = rng.random_range(0.3..0.5);
                (s, s, h)
            }
            _ => (
                rng.random_range(0.6..1.4),
                0.03,
                rng.random_range(0.5..1.0),
            ),
        };
        let against_wall = matches!(
            category,
            CATEGORY_CABINET | CATEGORY_SHELF | CATEGORY_PICTURE
        ) || rng.random_bool(0.3);
        let z0 = if category == CATEGORY_PICTURE {
            rng.random_range(0.8..1.4)
        } else {
            0.0
        };
        let (min, max) = if against_wall {
            // long side runs along the chosen wall
            let wall = rng.random_range(0..4u8);
            match wall {
                0 | 1 => {
                    let y0 = rng.random_range(th..d - th - sx);
                    let x0 = if wall == 0 { th } else { w - th - sy };
                    (v(x0, y0, z0), v(x0 + sy, y0 + sx, z0 + sz))
                }
                _ => {
                    let x0 = rng.random_range(th..w - th - sx);
                    let y0 = if wall == 2 { th } else { d - th - sy };
                    (v(x0, y0, z0), v(x0 + sx, y0 + sy, z0 + sz))
                }
            }
        } else {
            let x0 = rng.random_range(1.0..w - 1.0 - sx);
            let y0 = rng.random_range(1.0..d - 1.0 - sy);
            (v(x0, y0, z0), v(x0 + sx, y0 + sy, z0 + sz))
        };
        let bounds = Aabb::new(min, max);
        if bounds.contains(&center, 0.5) {
            continue;
        }
        push(&mut rng, min, max, category);
        placed += 1;
    }
    Ok(SceneModel {
        seed,
        floor_extent: extent,
        obstacles,
        wall_height: h,
    })
}

/// Exact (unquantized) result for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    /// z-depth in meters, `None` when nothing is hit within range.
    pub z_depth: Option<f64>,
    pub instance_id: u16,
    pub rgb: [u8; 3],
}

/// Rasters produced by [`render`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: Raster16,
    pub instances: InstanceMap,
}

const AMBIENT: f64 = 0.35;
const BACKGROUND: [u8; 3] = [0, 0, 0];

fn light_dir() -> Vector3<f64> {
    Vector3::new(0.4, 0.25, 0.88).normalize()
}

fn hash64(mut h: u64, vals: &[i64]) -> u64 {
    for &v in vals {
        h ^= v as u64;
        h = h.wrapping_mul(0x100_0000_01B3).rotate_left(29);
        h ^= h >> 32;
        h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    h ^ (h >> 29)
}

/// Procedural brightness in [0.35, 1] for a surface point.
fn texture(scene_seed: u64, ob: &Obstacle, hit: &Hit) -> f64 {
    let base = hash64(scene_seed ^ 0xC0FF_EE00, &[ob.instance_id as i64]);
    let cell = 0.15 + 0.25 * ((base >> 11) as f64 / (1u64 << 53) as f64);
    let (b, c) = ((hit.axis + 1) % 3, (hit.axis + 2) % 3);
    let i = (hit.point[b] / cell).floor() as i64;
    let j = (hit.point[c] / cell).floor() as i64;
    let face = (hit.axis as i64) * 2 + (hit.normal[hit.axis] > 0.0) as i64;
    let h = hash64(base, &[face, i, j]);
    0.35 + 0.65 * ((h >> 11) as f64 / (1u64 << 53) as f64)
}

/// Casts the ray through pixel `(x, y)` (pixel centers at integers).
pub fn trace_pixel(
    scene: &SceneModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    x: u32,
    y: u32,
    depth_max: f64,
) -> PixelSample {
    let dir = pose.rotation.rotate(&k.pixel_ray(x as f64, y as f64));
    match scene.trace(&pose.translation, &dir) {
        Some(hit) if hit.t < depth_max => {
            let ob = &scene.obstacles[hit.obstacle];
            let shade = AMBIENT + (1.0 - AMBIENT) * hit.normal.dot(&light_dir()).max(0.0);
            let tex = texture(scene.seed, ob, &hit);
            let rgb = ob
                .albedo
                .map(|a| (255.0 * a * tex * shade).round().clamp(0.0, 255.0) as u8);
            PixelSample {
                z_depth: Some(hit.t),
                instance_id: ob.instance_id,
                rgb,
            }
        }
        _ => PixelSample {
            z_depth: None,
            instance_id: 0,
            rgb: BACKGROUND,
        },
    }
}

/// Renders color, normalized depth (`z / depth_max`, saturating at 1) and
/// instance rasters from camera-to-world `pose`.
pub fn render(
    scene: &SceneModel,
    pose: &Pose,
    k: &CameraIntrinsics,
    depth_max: f64,
) -> RenderedView {
    let (w, h) = (k.width, k.height);
    let rows: Vec<Vec<PixelSample>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| trace_pixel(scene, pose, k, x, y, depth_max))
                .collect()
        })
        .collect();
    let mut rgb = RgbImage::new(w, h);
    let mut depth = Raster16::filled(w, h, DEPTH_CODE_MAX);
    let mut instances = Raster16::new(w, h);
    for (y, row) in rows.iter().enumerate() {
        for (x, s) in row.iter().enumerate() {
            let (x, y) = (x as u32, y as u32);
            rgb.put(x, y, s.rgb);
            if let Some(z) = s.z_depth {
                depth.put(x, y, depth_to_code(z / depth_max));
            }
            instances.put(x, y, s.instance_id);
        }
    }
    RenderedView {
        rgb,
        depth,
        instances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_scene() -> SceneModel {
        SceneModel {
            seed: 0,
            floor_extent: FloorExtent {
                x_min: -10.0,
                x_max: 10.0,
                y_min: -10.0,
                y_max: 10.0,
            },
            obstacles: vec![Obstacle {
                bounds: Aabb::new(Vector3::new(5.0, -10.0, -5.0), Vector3::new(5.5, 10.0, 5.0)),
                instance_id: 1,
                category_id: CATEGORY_WALL,
                albedo: [0.5, 0.5, 0.5],
            }],
            wall_height: 5.0,
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(3, &p).unwrap(), generate_scene(3, &p).unwrap());
        assert_ne!(generate_scene(3, &p).unwrap(), generate_scene(4, &p).unwrap());
    }

    #[test]
    fn obstacle_count_and_containment() {
        let params = SceneParams {
            min_obstacles: 10,
            ..SceneParams::default()
        };
        let s = generate_scene(0, &params).unwrap();
        // six structural boxes plus furniture
        assert!(s.obstacles.len() - 6 >= 10);
        let e = &s.floor_extent;
        let mut ids = std::collections::HashSet::new();
        for o in &s.obstacles {
            let b = &o.bounds;
            assert!(b.is_valid());
            assert!(o.instance_id >= 1 && ids.insert(o.instance_id));
            // footprint overlaps the floor rectangle
            assert!(b.min.x < e.x_max && b.max.x > e.x_min);
            assert!(b.min.y < e.y_max && b.max.y > e.y_min);
            // and never leaves it
            assert!(b.min.x >= e.x_min && b.max.x <= e.x_max);
            assert!(b.min.y >= e.y_min && b.max.y <= e.y_max);
        }
        assert!(s.is_free(&Vector3::new(6.0, 6.0, 1.25), 0.3));
    }

    #[test]
    fn small_extent_rejected() {
        let params = SceneParams {
            width: 5.0,
            ..SceneParams::default()
        };
        assert!(generate_scene(0, &params).is_err());
    }

    #[test]
    fn wall_at_five_meters_reads_half_depth() {
        let scene = wall_scene();
        let k = CameraIntrinsics::from_fov(90.0, 64, 64).unwrap();
        // looking along +x from the origin; the principal point sits between
        // pixels, so sample the exact principal ray directly
        let pose = Pose::camera_at(Vector3::zeros(), 0.0);
        let dir = pose.rotation.rotate(&k.pixel_ray(k.cx, k.cy));
        let hit = scene.trace(&pose.translation, &dir).unwrap();
        assert!((hit.t / 10.0 - 0.5).abs() < 1e-12);
        let view = render(&scene, &pose, &k, 10.0);
        // pixels next to the principal point see the flat wall at z = 5 m too
        assert_eq!(view.depth.get(32, 32), depth_to_code(0.5));
        assert_eq!(view.instances.get(32, 32), 1);
    }

    #[test]
    fn empty_half_space_has_no_hits() {
        let scene = wall_scene();
        let k = CameraIntrinsics::from_fov(90.0, 32, 32).unwrap();
        let pose = Pose::camera_at(Vector3::zeros(), std::f64::consts::PI);
        let view = render(&scene, &pose, &k, 10.0);
        assert!(view.depth.data.iter().all(|&d| d == DEPTH_CODE_MAX));
        assert!(view.instances.data.iter().all(|&i| i == 0));
    }

    #[test]
    fn out_of_range_hit_is_void() {
        let mut scene = wall_scene();
        scene.obstacles[0].bounds.min.x = 12.0;
        scene.obstacles[0].bounds.max.x = 13.0;
        let k = CameraIntrinsics::from_fov(30.0, 16, 16).unwrap();
        let view = render(&scene, &Pose::camera_at(Vector3::zeros(), 0.0), &k, 10.0);
        assert!(view.instances.data.iter().all(|&i| i == 0));
    }
}
