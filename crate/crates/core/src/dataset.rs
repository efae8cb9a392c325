//! Point-grid dataset construction, on-disk format and summary statistics.
//!
//! Each grid "Point" holds six database frames sharing one camera center
//! (yaws 60 degrees apart) plus query frames sampled within a small disk
//! around it.
//!
//! Directory layout:
//!
//! ```text
//! manifest.txt                      key = value lines
//! scene.txt                         scene headers and box list
//! points/<point_id>/db_<k>.{rgb,depth,inst,pose}
//! queries/<point_id>/q_<k>.{rgb,depth,inst,pose}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::raster::{code_to_depth, DepthMap, InstanceMap, Raster16, RgbImage};
use crate::rng::{self, purpose};
use crate::scene::{self, Aabb, FloorExtent, Obstacle, SceneModel, SceneParams};

pub const DATABASE_FRAMES_PER_POINT: usize = 6;
pub const DATABASE_YAW_STEP_DEG: f64 = 60.0;
pub const FORMAT_TAG: &str = "pointloc-dataset/1";

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationParams {
    pub grid_spacing: f64,
    pub queries_per_point: usize,
    pub query_radius: f64,
    pub noise_factor: f64,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub camera_height: f64,
    pub depth_max: f64,
    /// Cameras closer than this to any box count as colliding.
    pub clearance: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            grid_spacing: 2.0,
            queries_per_point: 50,
            query_radius: 0.5,
            noise_factor: 0.02,
            fov_deg: 90.0,
            width: 256,
            height: 256,
            camera_height: 1.25,
            depth_max: 10.0,
            clearance: 0.3,
        }
    }
}

impl GenerationParams {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.fov_deg, self.width, self.height)
    }
}

/// One RGB-D observation with its ground-truth camera-to-world pose.
///
/// `frame_id` is `6 * point_id + k` for database frame `k` and the
/// per-point index `k` for query frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub instances: InstanceMap,
    pub pose: Pose,
    pub point_id: u32,
    pub frame_id: u32,
    pub is_database: bool,
}

impl Frame {
    pub fn width(&self) -> u32 {
        self.rgb.width
    }

    pub fn height(&self) -> u32 {
        self.rgb.height
    }

    /// Normalized depth in [0, 1] at pixel `(x, y)`.
    pub fn normalized_depth(&self, x: u32, y: u32) -> f64 {
        code_to_depth(self.depth.get(x, y))
    }
}

pub fn database_frame_id(point_id: u32, k: usize) -> u32 {
    point_id * DATABASE_FRAMES_PER_POINT as u32 + k as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPose {
    pub point_id: u32,
    pub pose: Pose,
    pub status: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointGroup {
    pub point_id: u32,
    pub scene: u32,
    pub center: Vector3<f64>,
    pub database_frames: Vec<Frame>,
    pub query_frames: Vec<Frame>,
}

impl PointGroup {
    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.database_frames.iter().chain(&self.query_frames)
    }
}

/// Counts of points, poses, categories, instances and maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetStats {
    pub points: usize,
    pub poses: usize,
    pub categories: usize,
    pub instances: usize,
    pub maps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSummary {
    pub seed: u64,
    pub stats: DatasetStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub totals: DatasetStats,
    pub scenes: Vec<SceneSummary>,
    pub params: GenerationParams,
    /// (point_id, scene index, query count) in storage order.
    pub points: Vec<(u32, u32, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub scenes: Vec<SceneModel>,
    pub groups: Vec<PointGroup>,
}

impl Dataset {
    pub fn database_frames(&self) -> impl Iterator<Item = &Frame> {
        self.groups.iter().flat_map(|g| &g.database_frames)
    }

    pub fn query_frames(&self) -> impl Iterator<Item = &Frame> {
        self.groups.iter().flat_map(|g| &g.query_frames)
    }
}

/// Regular grid nodes `x_min + i * spacing`, `y_min + j * spacing` inside
/// the closed floor rectangle, before collision filtering.
pub fn grid_candidates(extent: &FloorExtent, spacing: f64, z: f64) -> Vec<Vector3<f64>> {
    let count = |lo: f64, hi: f64| ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
    let (nx, ny) = (
        count(extent.x_min, extent.x_max),
        count(extent.y_min, extent.y_max),
    );
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(Vector3::new(
                extent.x_min + i as f64 * spacing,
                extent.y_min + j as f64 * spacing,
                z,
            ));
        }
    }
    out
}

/// Collision-free grid key poses, numbered from `first_point_id`. The base
/// yaw of each point comes from its own seeded stream.
pub fn generate_point_grid(
    scene: &SceneModel,
    params: &GenerationParams,
    seed: u64,
    first_point_id: u32,
) -> Result<Vec<KeyPose>> {
    if !(params.grid_spacing > 0.0) {
        return Err(Error::InvalidArgument("grid spacing must be > 0".into()));
    }
    let mut next = first_point_id;
    let mut out = Vec::new();
    for c in grid_candidates(&scene.floor_extent, params.grid_spacing, params.camera_height) {
        if !scene.is_free(&c, params.clearance) {
            continue;
        }
        let yaw = rng::stream(seed, &[purpose::BASE_YAW, next as u64]).random_range(0.0..TAU);
        out.push(KeyPose {
            point_id: next,
            pose: Pose::camera_at(c, yaw),
            status: 1,
        });
        next += 1;
    }
    Ok(out)
}

/// Adds `round(255 * factor * n)`, `n ~ N(0, 1)`, to every channel.
pub fn add_rgb_noise(rgb: &RgbImage, factor: f64, rng: &mut impl Rng) -> RgbImage {
    if factor == 0.0 {
        return rgb.clone();
    }
    let mut out = rgb.clone();
    for v in &mut out.data {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v as f64 + (255.0 * factor * n).round()).clamp(0.0, 255.0) as u8;
    }
    out
}

fn render_frame(
    scene: &SceneModel,
    pose: Pose,
    k: &CameraIntrinsics,
    params: &GenerationParams,
    seed: u64,
    point_id: u32,
    local_index: u64,
) -> (RgbImage, DepthMap, InstanceMap) {
    let view = scene::render(scene, &pose, k, params.depth_max);
    let mut noise_rng = rng::stream(seed, &[purpose::RGB_NOISE, point_id as u64, local_index]);
    let rgb = add_rgb_noise(&view.rgb, params.noise_factor, &mut noise_rng);
    (rgb, view.depth, view.instances)
}

/// Samples query poses for one key pose; colliding candidates are dropped,
/// not resampled.
pub fn sample_query_poses(
    scene: &SceneModel,
    key: &KeyPose,
    params: &GenerationParams,
    seed: u64,
) -> Vec<Pose> {
    let mut rng = rng::stream(seed, &[purpose::QUERIES, key.point_id as u64]);
    let c = key.pose.translation;
    let r = params.query_radius;
    let mut out = Vec::new();
    for _ in 0..params.queries_per_point {
        let (dx, dy) = loop {
            let dx = rng.random_range(-r..=r);
            let dy = rng.random_range(-r..=r);
            if dx * dx + dy * dy <= r * r {
                break (dx, dy);
            }
        };
        let yaw = rng.random_range(0.0..TAU);
        let p = Vector3::new(c.x + dx, c.y + dy, c.z);
        if scene.is_free(&p, params.clearance) {
            out.push(Pose::camera_at(p, yaw));
        }
    }
    out
}

/// Renders the six database views and the surviving query views of one
/// grid point.
pub fn generate_point_frames(
    scene: &SceneModel,
    scene_index: u32,
    key: &KeyPose,
    params: &GenerationParams,
    seed: u64,
) -> Result<PointGroup> {
    if !scene.is_free(&key.pose.translation, params.clearance) {
        return Err(Error::InvalidKeyPose);
    }
    let k = params.intrinsics()?;
    let center = key.pose.translation;
    let base_yaw = key.pose.camera_yaw();
    let pid = key.point_id;

    let database_frames = (0..DATABASE_FRAMES_PER_POINT)
        .into_par_iter()
        .map(|i| {
            let yaw = base_yaw + (i as f64 * DATABASE_YAW_STEP_DEG).to_radians();
            let pose = Pose::camera_at(center, yaw);
            let (rgb, depth, instances) = render_frame(scene, pose, &k, params, seed, pid, i as u64);
            Frame {
                rgb,
                depth,
                instances,
                pose,
                point_id: pid,
                frame_id: database_frame_id(pid, i),
                is_database: true,
            }
        })
        .collect();

    let query_poses = sample_query_poses(scene, key, params, seed);
    let query_frames = query_poses
        .into_par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let local = (DATABASE_FRAMES_PER_POINT + i) as u64;
            let (rgb, depth, instances) = render_frame(scene, pose, &k, params, seed, pid, local);
            Frame {
                rgb,
                depth,
                instances,
                pose,
                point_id: pid,
                frame_id: i as u32,
                is_database: false,
            }
        })
        .collect();

    Ok(PointGroup {
        point_id: pid,
        scene: scene_index,
        center,
        database_frames,
        query_frames,
    })
}

pub fn scene_seed(dataset_seed: u64, scene_index: u32) -> u64 {
    rng::stream(dataset_seed, &[purpose::SCENE, scene_index as u64]).random()
}

/// Generates `num_scenes` rooms and their point groups.
pub fn generate_dataset(
    seed: u64,
    num_scenes: u32,
    scene_params: &SceneParams,
    params: &GenerationParams,
) -> Result<Dataset> {
    if params.queries_per_point > 9999 {
        return Err(Error::InvalidArgument("at most 9999 queries per point".into()));
    }
    let mut scenes = Vec::new();
    let mut keys = Vec::new();
    for s in 0..num_scenes {
        let scene = scene::generate_scene(scene_seed(seed, s), scene_params)?;
        let first = keys.len() as u32;
        for key in generate_point_grid(&scene, params, seed, first)? {
            keys.push((s, key));
        }
        scenes.push(scene);
    }
    let groups = keys
        .par_iter()
        .map(|(s, key)| generate_point_frames(&scenes[*s as usize], *s, key, params, seed))
        .collect::<Result<Vec<_>>>()?;
    let manifest = build_manifest(seed, &scenes, &groups, params);
    Ok(Dataset {
        manifest,
        scenes,
        groups,
    })
}

/// Counts points, poses, observed categories and instances, and maps.
/// Instances are the distinct nonzero (scene, instance id) pairs present
/// in any instance raster; categories are resolved through `scenes`.
pub fn dataset_stats(groups: &[PointGroup], scenes: &[SceneModel]) -> DatasetStats {
    let mut instances = BTreeSet::new();
    let mut maps = BTreeSet::new();
    let mut poses = 0;
    for g in groups {
        maps.insert(g.scene);
        for f in g.frames() {
            poses += 1;
            let mut seen = [false; 1 << 16];
            for &id in &f.instances.data {
                if id != 0 && !seen[id as usize] {
                    seen[id as usize] = true;
                    instances.insert((g.scene, id));
                }
            }
        }
    }
    let categories: BTreeSet<u16> = instances
        .iter()
        .filter_map(|&(s, id)| scenes.get(s as usize).and_then(|sc| sc.category_of(id)))
        .collect();
    DatasetStats {
        points: groups.len(),
        poses,
        categories: categories.len(),
        instances: instances.len(),
        maps: maps.len(),
    }
}

pub fn build_manifest(
    seed: u64,
    scenes: &[SceneModel],
    groups: &[PointGroup],
    params: &GenerationParams,
) -> DatasetManifest {
    let per_scene = scenes
        .iter()
        .enumerate()
        .map(|(s, sc)| {
            let mine: Vec<PointGroup> = groups
                .iter()
                .filter(|g| g.scene == s as u32)
                .cloned()
                .collect();
            let mut stats = dataset_stats(&mine, scenes);
            stats.maps = 1;
            SceneSummary {
                seed: sc.seed,
                stats,
            }
        })
        .collect();
    let mut totals = dataset_stats(groups, scenes);
    totals.maps = scenes.len();
    DatasetManifest {
        seed,
        totals,
        scenes: per_scene,
        params: params.clone(),
        points: groups
            .iter()
            .map(|g| (g.point_id, g.scene, g.query_frames.len()))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// on-disk format

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(path, "missing file"),
        _ => Error::io(path, e),
    })
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "not UTF-8"))
}

fn frame_stem(dir: &Path, frame: &Frame, index: usize) -> PathBuf {
    if frame.is_database {
        dir.join("points")
            .join(frame.point_id.to_string())
            .join(format!("db_{index}"))
    } else {
        dir.join("queries")
            .join(frame.point_id.to_string())
            .join(format!("q_{index}"))
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_frame(dir: &Path, frame: &Frame, index: usize) -> Result<()> {
    let stem = frame_stem(dir, frame, index);
    write_file(&with_ext(&stem, "rgb"), &frame.rgb.encode())?;
    write_file(&with_ext(&stem, "depth"), &frame.depth.encode())?;
    write_file(&with_ext(&stem, "inst"), &frame.instances.encode())?;
    write_file(&with_ext(&stem, "pose"), format!("{}\n", frame.pose).as_bytes())
}

fn read_frame(stem: &Path, point_id: u32, frame_id: u32, is_database: bool) -> Result<Frame> {
    let p = with_ext(stem, "rgb");
    let rgb = RgbImage::decode(&read_file(&p)?, &p)?;
    let p = with_ext(stem, "depth");
    let depth = Raster16::decode(&read_file(&p)?, &p)?;
    let p = with_ext(stem, "inst");
    let instances = Raster16::decode(&read_file(&p)?, &p)?;
    let p = with_ext(stem, "pose");
    let text = read_text(&p)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let pose = match (lines.next(), lines.next()) {
        (Some(line), None) => line.parse::<Pose>().map_err(|m| Error::format(&p, m))?,
        _ => return Err(Error::format(&p, "expected exactly one pose line")),
    };
    let dims = (rgb.width, rgb.height);
    if (depth.width, depth.height) != dims || (instances.width, instances.height) != dims {
        return Err(Error::format(stem, "raster dimensions disagree"));
    }
    Ok(Frame {
        rgb,
        depth,
        instances,
        pose,
        point_id,
        frame_id,
        is_database,
    })
}

pub fn write_scenes(scenes: &[SceneModel]) -> String {
    let mut s = String::new();
    for (i, sc) in scenes.iter().enumerate() {
        let e = &sc.floor_extent;
        s += &format!(
            "scene {i} seed {} extent {} {} {} {} wall_height {}\n",
            sc.seed, e.x_min, e.x_max, e.y_min, e.y_max, sc.wall_height
        );
        for o in &sc.obstacles {
            let (a, b) = (&o.bounds.min, &o.bounds.max);
            s += &format!(
                "box {i} {} {} {} {} {} {} {} {} {} {} {}\n",
                o.instance_id,
                o.category_id,
                a.x,
                a.y,
                a.z,
                b.x,
                b.y,
                b.z,
                o.albedo[0],
                o.albedo[1],
                o.albedo[2]
            );
        }
    }
    s
}

pub fn parse_scenes(text: &str, path: &Path) -> Result<Vec<SceneModel>> {
    let mut scenes: Vec<SceneModel> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let err = |m: &str| Error::format(path, format!("line {}: {m}", n + 1));
        let toks: Vec<&str> = line.split_whitespace().collect();
        let f = |i: usize| -> Result<f64> {
            toks.get(i)
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| err("bad number"))
        };
        match toks.first() {
            None => continue,
            Some(&"scene") => {
                let expect = [(2, "seed"), (4, "extent"), (9, "wall_height")];
                if toks.len() != 11 || expect.iter().any(|&(i, k)| toks[i] != k) {
                    return Err(err("malformed scene header"));
                }
                if toks[1].parse::<usize>().ok() != Some(scenes.len()) {
                    return Err(err("scene indices must be consecutive from 0"));
                }
                scenes.push(SceneModel {
                    seed: toks[3].parse().map_err(|_| err("bad seed"))?,
                    floor_extent: FloorExtent {
                        x_min: f(5)?,
                        x_max: f(6)?,
                        y_min: f(7)?,
                        y_max: f(8)?,
                    },
                    obstacles: Vec::new(),
                    wall_height: f(10)?,
                });
            }
            Some(&"box") => {
                if toks.len() != 13 {
                    return Err(err("malformed box line"));
                }
                let s: usize = toks[1].parse().map_err(|_| err("bad scene index"))?;
                let scene = scenes
                    .get_mut(s)
                    .ok_or_else(|| err("box before its scene header"))?;
                let bounds = Aabb::new(
                    Vector3::new(f(4)?, f(5)?, f(6)?),
                    Vector3::new(f(7)?, f(8)?, f(9)?),
                );
                if !bounds.is_valid() {
                    return Err(err("box min must be below max"));
                }
                scene.obstacles.push(Obstacle {
                    bounds,
                    instance_id: toks[2].parse().map_err(|_| err("bad instance id"))?,
                    category_id: toks[3].parse().map_err(|_| err("bad category id"))?,
                    albedo: [f(10)?, f(11)?, f(12)?],
                });
            }
            Some(other) => return Err(err(&format!("unknown record {other:?}"))),
        }
    }
    if scenes.is_empty() {
        return Err(Error::format(path, "no scenes"));
    }
    Ok(scenes)
}

fn stats_lines(prefix: &str, s: &DatasetStats) -> String {
    format!(
        "{prefix}points = {}\n{prefix}poses = {}\n{prefix}categories = {}\n{prefix}instances = {}\n",
        s.points, s.poses, s.categories, s.instances
    )
}

pub fn write_manifest(m: &DatasetManifest) -> String {
    let p = &m.params;
    let mut s = format!("format = {FORMAT_TAG}\nseed = {}\nmaps = {}\n", m.seed, m.totals.maps);
    s += &stats_lines("", &m.totals);
    s += &format!(
        "grid_spacing = {}\nqueries_per_point = {}\nquery_radius = {}\nnoise_factor = {}\n\
         fov_deg = {}\nwidth = {}\nheight = {}\ncamera_height = {}\ndepth_max = {}\nclearance = {}\n",
        p.grid_spacing,
        p.queries_per_point,
        p.query_radius,
        p.noise_factor,
        p.fov_deg,
        p.width,
        p.height,
        p.camera_height,
        p.depth_max,
        p.clearance
    );
    for (i, sc) in m.scenes.iter().enumerate() {
        s += &format!("scene.{i}.seed = {}\n", sc.seed);
        s += &stats_lines(&format!("scene.{i}."), &sc.stats);
    }
    for &(pid, scene, nq) in &m.points {
        s += &format!("point.{pid} = {scene} {nq}\n");
    }
    s
}

/// Parses `key = value` lines, rejecting duplicates.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected key = value", n + 1)))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::format(path, format!("duplicate key {:?}", k.trim())));
        }
    }
    Ok(map)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let kv = parse_key_values(text, path)?;
    let get = |k: &str| -> Result<&str> {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(path, format!("missing key {k:?}")))
    };
    fn num<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::format(path, format!("bad value for {key:?}: {v:?}")))
    }
    let n = |k: &str| -> Result<usize> { num(path, k, get(k)?) };
    let x = |k: &str| -> Result<f64> { num(path, k, get(k)?) };
    if get("format")? != FORMAT_TAG {
        return Err(Error::format(path, "unsupported format tag"));
    }
    let stats = |prefix: &str, maps: usize| -> Result<DatasetStats> {
        Ok(DatasetStats {
            points: n(&format!("{prefix}points"))?,
            poses: n(&format!("{prefix}poses"))?,
            categories: n(&format!("{prefix}categories"))?,
            instances: n(&format!("{prefix}instances"))?,
            maps,
        })
    };
    let maps = n("maps")?;
    let totals = stats("", maps)?;
    let scenes = (0..maps)
        .map(|i| {
            Ok(SceneSummary {
                seed: num(path, "seed", get(&format!("scene.{i}.seed"))?)?,
                stats: stats(&format!("scene.{i}."), 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (k, v) in &kv {
        if let Some(pid) = k.strip_prefix("point.") {
            let pid: u32 = num(path, k, pid)?;
            let mut it = v.split_whitespace();
            let (Some(s), Some(q), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::format(path, format!("bad value for {k:?}")));
            };
            points.push((pid, num(path, k, s)?, num(path, k, q)?));
        }
    }
    points.sort_unstable();
    let params = GenerationParams {
        grid_spacing: x("grid_spacing")?,
        queries_per_point: n("queries_per_point")?,
        query_radius: x("query_radius")?,
        noise_factor: x("noise_factor")?,
        fov_deg: x("fov_deg")?,
        width: num(path, "width", get("width")?)?,
        height: num(path, "height", get("height")?)?,
        camera_height: x("camera_height")?,
        depth_max: x("depth_max")?,
        clearance: x("clearance")?,
    };
    Ok(DatasetManifest {
        seed: num(path, "seed", get("seed")?)?,
        totals,
        scenes,
        params,
        points,
    })
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for g in &dataset.groups {
        for sub in ["points", "queries"] {
            let d = dir.join(sub).join(g.point_id.to_string());
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    dataset
        .groups
        .par_iter()
        .try_for_each(|g| -> Result<()> {
            for (i, f) in g.database_frames.iter().enumerate() {
                write_frame(dir, f, i)?;
            }
            for (i, f) in g.query_frames.iter().enumerate() {
                write_frame(dir, f, i)?;
            }
            Ok(())
        })?;
    write_file(&dir.join("scene.txt"), write_scenes(&dataset.scenes).as_bytes())?;
    // manifest last: its presence marks a complete dataset
    write_file(
        &dir.join("manifest.txt"),
        write_manifest(&dataset.manifest).as_bytes(),
    )
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.txt");
    let manifest = parse_manifest(&read_text(&mpath)?, &mpath)?;
    let spath = dir.join("scene.txt");
    let scenes = parse_scenes(&read_text(&spath)?, &spath)?;
    if scenes.len() != manifest.totals.maps {
        return Err(Error::format(&mpath, "map count disagrees with scene.txt"));
    }
    let groups = manifest
        .points
        .par_iter()
        .map(|&(pid, scene, nq)| -> Result<PointGroup> {
            if scene as usize >= scenes.len() {
                return Err(Error::format(&mpath, format!("point {pid}: unknown scene {scene}")));
            }
            let pdir = dir.join("points").join(pid.to_string());
            let database_frames = (0..DATABASE_FRAMES_PER_POINT)
                .map(|k| {
                    read_frame(&pdir.join(format!("db_{k}")), pid, database_frame_id(pid, k), true)
                })
                .collect::<Result<Vec<_>>>()?;
            let qdir = dir.join("queries").join(pid.to_string());
            let query_frames = (0..nq)
                .map(|k| read_frame(&qdir.join(format!("q_{k}")), pid, k as u32, false))
                .collect::<Result<Vec<_>>>()?;
            Ok(PointGroup {
                point_id: pid,
                scene,
                center: database_frames[0].pose.translation,
                database_frames,
                query_frames,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let recount = dataset_stats(&groups, &scenes);
    let t = &manifest.totals;
    if (recount.points, recount.poses, recount.instances, recount.categories)
        != (t.points, t.poses, t.instances, t.categories)
    {
        return Err(Error::format(
            &mpath,
            format!("manifest counts {t:?} disagree with files on disk {recount:?}"),
        ));
    }
    Ok(Dataset {
        manifest,
        scenes,
        groups,
    })
}
