//! Retrieval, matching, back-projection and registration, end to end.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::dataset::{parse_key_values, Frame, GenerationParams, PointGroup};
use crate::error::{Error, Result};
use crate::eval::StageTimings;
use crate::features::{
    self, match_descriptors, to_grayscale, BinaryDescriptor, Features, Keypoint,
    DEFAULT_FAST_THRESHOLD, DEFAULT_MAX_KEYPOINTS,
};
use crate::geometry::{CameraIntrinsics, Pose, UnitQuaternion};
use crate::raster::{code_to_depth, DepthMap};
use crate::registration::{
    self, gnc_tls_register_with, icp_refine, ransac_register, umeyama, Correspondence3D,
};
use crate::retrieval::{self, embed, EmbeddingVariant, GlobalEmbedding, RetrievalIndex, Vocabulary};

/// Normalized depth at or above this is treated as "no return".
pub const SATURATED_DEPTH: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationMethod {
    /// Retrieval only: the answer is the retrieved frame's pose.
    None,
    Umeyama,
    Ransac,
    RansacIcp,
    Gnc,
}

impl fmt::Display for RegistrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegistrationMethod::None => "none",
            RegistrationMethod::Umeyama => "umeyama",
            RegistrationMethod::Ransac => "ransac",
            RegistrationMethod::RansacIcp => "ransac+icp",
            RegistrationMethod::Gnc => "gnc",
        })
    }
}

impl FromStr for RegistrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => RegistrationMethod::None,
            "umeyama" => RegistrationMethod::Umeyama,
            "ransac" => RegistrationMethod::Ransac,
            "ransac+icp" => RegistrationMethod::RansacIcp,
            "gnc" => RegistrationMethod::Gnc,
            _ => return Err(Error::InvalidArgument(format!("unknown registration method {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub name: String,
    pub retrieval: EmbeddingVariant,
    pub ratio: f64,
    pub mutual: bool,
    pub registration: RegistrationMethod,
    pub min_matches: usize,
    pub max_keypoints: usize,
    pub fast_threshold: u8,
    pub ransac_threshold: f64,
    pub ransac_iters: usize,
    pub ransac_seed: u64,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    /// Pixel stride when sampling depth maps into ICP clouds.
    pub icp_stride: u32,
    pub gnc_noise_bound: f64,
    pub gnc_factor: f64,
    pub hardware: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            name: "vlad+ransac+icp".into(),
            retrieval: EmbeddingVariant::Vlad,
            ratio: 0.8,
            mutual: true,
            registration: RegistrationMethod::RansacIcp,
            min_matches: 6,
            max_keypoints: DEFAULT_MAX_KEYPOINTS,
            fast_threshold: DEFAULT_FAST_THRESHOLD,
            ransac_threshold: registration::DEFAULT_RANSAC_THRESHOLD,
            ransac_iters: registration::DEFAULT_RANSAC_ITERS,
            ransac_seed: 0,
            icp_max_iters: 30,
            icp_tol: 1e-5,
            icp_stride: 4,
            gnc_noise_bound: registration::DEFAULT_NOISE_BOUND,
            gnc_factor: registration::DEFAULT_GNC_FACTOR,
            hardware: "unspecified".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.min_matches < 3 {
            return bad(format!("min_matches must be at least 3, got {}", self.min_matches));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad(format!("ratio must be in (0, 1], got {}", self.ratio));
        }
        if !(self.ransac_threshold > 0.0) || !(self.gnc_noise_bound > 0.0) {
            return bad("solver thresholds must be positive".into());
        }
        if !(self.gnc_factor > 1.0) {
            return bad(format!("gnc_factor must exceed 1, got {}", self.gnc_factor));
        }
        if self.icp_stride == 0 || self.max_keypoints == 0 {
            return bad("icp_stride and max_keypoints must be positive".into());
        }
        if self.name.contains(',') || self.name.contains('|') {
            return bad("configuration name may not contain ',' or '|'".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines; unknown keys are rejected, missing keys
    /// keep their defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let kv = parse_key_values(text, path)?;
        let mut c = PipelineConfig::default();
        let bad = |k: &str, v: &str| Error::format(path, format!("bad value {v:?} for {k}"));
        for (k, v) in &kv {
            let v = v.as_str();
            match k.as_str() {
                "name" => c.name = v.to_string(),
                "hardware" => c.hardware = v.to_string(),
                "retrieval" => c.retrieval = v.parse().map_err(|_| bad(k, v))?,
                "registration" => c.registration = v.parse().map_err(|_| bad(k, v))?,
                "ratio" => c.ratio = v.parse().map_err(|_| bad(k, v))?,
                "mutual" => c.mutual = v.parse().map_err(|_| bad(k, v))?,
                "min_matches" => c.min_matches = v.parse().map_err(|_| bad(k, v))?,
                "max_keypoints" => c.max_keypoints = v.parse().map_err(|_| bad(k, v))?,
                "fast_threshold" => c.fast_threshold = v.parse().map_err(|_| bad(k, v))?,
                "ransac_threshold" => c.ransac_threshold = v.parse().map_err(|_| bad(k, v))?,
                "ransac_iters" => c.ransac_iters = v.parse().map_err(|_| bad(k, v))?,
                "ransac_seed" => c.ransac_seed = v.parse().map_err(|_| bad(k, v))?,
                "icp_max_iters" => c.icp_max_iters = v.parse().map_err(|_| bad(k, v))?,
                "icp_tol" => c.icp_tol = v.parse().map_err(|_| bad(k, v))?,
                "icp_stride" => c.icp_stride = v.parse().map_err(|_| bad(k, v))?,
                "gnc_noise_bound" => c.gnc_noise_bound = v.parse().map_err(|_| bad(k, v))?,
                "gnc_factor" => c.gnc_factor = v.parse().map_err(|_| bad(k, v))?,
                _ => return Err(Error::format(path, format!("unknown key {k:?}"))),
            }
        }
        if !kv.contains_key("name") {
            c.name = format!("{}+{}", c.retrieval, c.registration);
        }
        c.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "name = {}\nretrieval = {}\nregistration = {}\nratio = {}\nmutual = {}\n\
             min_matches = {}\nmax_keypoints = {}\nfast_threshold = {}\n\
             ransac_threshold = {}\nransac_iters = {}\nransac_seed = {}\n\
             icp_max_iters = {}\nicp_tol = {}\nicp_stride = {}\n\
             gnc_noise_bound = {}\ngnc_factor = {}\nhardware = {}\n",
            self.name,
            self.retrieval,
            self.registration,
            self.ratio,
            self.mutual,
            self.min_matches,
            self.max_keypoints,
            self.fast_threshold,
            self.ransac_threshold,
            self.ransac_iters,
            self.ransac_seed,
            self.icp_max_iters,
            self.icp_tol,
            self.icp_stride,
            self.gnc_noise_bound,
            self.gnc_factor,
            self.hardware,
        )
    }
}

/// Camera model shared by every frame of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub intrinsics: CameraIntrinsics,
    pub depth_max: f64,
}

impl Sensor {
    pub fn from_params(params: &GenerationParams) -> Result<Self> {
        Ok(Sensor {
            intrinsics: params.intrinsics()?,
            depth_max: params.depth_max,
        })
    }

    /// Camera-frame point at pixel `(x, y)`, or `None` for missing depth.
    pub fn point_at(&self, depth: &DepthMap, x: u32, y: u32) -> Option<Vector3<f64>> {
        let d = code_to_depth(depth.get(x, y));
        if d == 0.0 || d >= SATURATED_DEPTH {
            return None;
        }
        self.intrinsics
            .backproject(x as f64, y as f64, d * self.depth_max)
            .ok()
    }

    /// Depth lookup at the keypoint's nearest pixel.
    pub fn keypoint_point(&self, depth: &DepthMap, kp: &Keypoint) -> Option<Vector3<f64>> {
        let x = kp.x.round();
        let y = kp.y.round();
        if x < 0.0 || y < 0.0 || x >= depth.width as f64 || y >= depth.height as f64 {
            return None;
        }
        self.point_at(depth, x as u32, y as u32)
    }

    /// Valid-depth points on a regular pixel lattice.
    pub fn cloud(&self, depth: &DepthMap, stride: u32) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for y in (0..depth.height).step_by(stride as usize) {
            for x in (0..depth.width).step_by(stride as usize) {
                if let Some(p) = self.point_at(depth, x, y) {
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseFrame {
    pub frame_id: u32,
    pub point_id: u32,
    pub pose: Pose,
    pub features: Features,
    pub depth: DepthMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationDatabase {
    pub sensor: Sensor,
    pub vocabulary: Vocabulary,
    pub index: RetrievalIndex,
    pub frames: Vec<DatabaseFrame>,
}

impl LocalizationDatabase {
    pub fn frame(&self, frame_id: u32) -> Option<&DatabaseFrame> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.frame_id)
            .ok()
            .map(|i| &self.frames[i])
    }
}

pub fn frame_features(frame: &Frame, config: &PipelineConfig) -> Features {
    features::extract(&to_grayscale(&frame.rgb), config.max_keypoints, config.fast_threshold)
}

/// Trains a vocabulary on the descriptors of every database frame and sets
/// IDF weights from the same frames.
pub fn train_vocabulary_on(
    groups: &[PointGroup],
    k: usize,
    seed: u64,
    config: &PipelineConfig,
) -> Result<Vocabulary> {
    let frames: Vec<&Frame> = groups.iter().flat_map(|g| &g.database_frames).collect();
    let per_frame: Vec<Vec<BinaryDescriptor>> = frames
        .par_iter()
        .map(|f| frame_features(f, config).descriptors)
        .collect();
    let all: Vec<BinaryDescriptor> = per_frame.iter().flatten().copied().collect();
    let mut vocab = retrieval::train_vocabulary(&all, k, seed, 30)?;
    vocab.compute_word_means(&all);
    vocab.compute_idf(&per_frame);
    Ok(vocab)
}

pub fn build_database(
    groups: &[PointGroup],
    vocabulary: &Vocabulary,
    config: &PipelineConfig,
    sensor: Sensor,
) -> Result<LocalizationDatabase> {
    config.validate()?;
    let frames: Vec<&Frame> = groups
        .iter()
        .flat_map(|g| &g.database_frames)
        .filter(|f| f.is_database)
        .collect();
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no database frames".into()));
    }
    let built: Vec<(DatabaseFrame, GlobalEmbedding)> = frames
        .par_iter()
        .map(|f| {
            let feats = frame_features(f, config);
            let e = embed(config.retrieval, &feats.descriptors, vocabulary);
            let db = DatabaseFrame {
                frame_id: f.frame_id,
                point_id: f.point_id,
                pose: f.pose,
                features: feats,
                depth: f.depth.clone(),
            };
            (db, e)
        })
        .collect();
    let mut built = built;
    built.sort_by_key(|(f, _)| f.frame_id);
    if built.windows(2).any(|w| w[0].0.frame_id == w[1].0.frame_id) {
        return Err(Error::InvalidArgument("duplicate database frame ids".into()));
    }
    let entries = built.iter().map(|(f, e)| (f.frame_id, e.clone())).collect();
    let index = RetrievalIndex::new(config.retrieval, entries)?;
    Ok(LocalizationDatabase {
        sensor,
        vocabulary: vocabulary.clone(),
        index,
        frames: built.into_iter().map(|(f, _)| f).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub query_id: u32,
    pub point_id: u32,
    pub pose: Pose,
    pub top1_frame_id: u32,
    pub top1_distance: f64,
    pub match_count: usize,
    pub inlier_count: usize,
    pub fallback: bool,
    pub timings: StageTimings,
}

struct Retrieved<'a> {
    features: Features,
    top1: &'a DatabaseFrame,
    distance: f64,
}

fn retrieve<'a>(
    db: &'a LocalizationDatabase,
    query: &Frame,
    config: &PipelineConfig,
    t: &mut StageTimings,
) -> Result<Retrieved<'a>> {
    if db.index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if config.retrieval != db.index.variant() {
        return Err(Error::InvalidArgument(format!(
            "config asks for {} retrieval but the database holds {} embeddings",
            config.retrieval,
            db.index.variant()
        )));
    }
    let clock = Instant::now();
    let features = frame_features(query, config);
    t.feature_extraction = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let e = embed(config.retrieval, &features.descriptors, &db.vocabulary);
    t.embedding_extraction = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (id, distance) = db.index.query_top1(&e)?;
    t.embedding_matching = clock.elapsed().as_secs_f64();
    let top1 = db.frame(id).expect("index and frames agree");
    Ok(Retrieved {
        features,
        top1,
        distance,
    })
}

fn fallback_result(query: &Frame, r: &Retrieved, match_count: usize, t: StageTimings) -> LocalizationResult {
    LocalizationResult {
        query_id: query.frame_id,
        point_id: query.point_id,
        pose: r.top1.pose,
        top1_frame_id: r.top1.frame_id,
        top1_distance: r.distance,
        match_count,
        inlier_count: 0,
        fallback: true,
        timings: t,
    }
}

/// The answer is the top-1 retrieved frame's pose.
pub fn retrieval_only_localize(
    db: &LocalizationDatabase,
    query: &Frame,
    config: &PipelineConfig,
) -> Result<LocalizationResult> {
    let start = Instant::now();
    let mut t = StageTimings::default();
    let r = retrieve(db, query, config, &mut t)?;
    t.total = start.elapsed().as_secs_f64();
    Ok(fallback_result(query, &r, 0, t))
}

/// Registers query-camera points into the retrieved camera. `Ok(None)`
/// means registration could not run or failed; the caller falls back.
fn register(
    corrs: &[Correspondence3D],
    db: &LocalizationDatabase,
    query: &Frame,
    top1: &DatabaseFrame,
    config: &PipelineConfig,
) -> Option<(Pose, usize)> {
    let res = match config.registration {
        RegistrationMethod::None => return None,
        RegistrationMethod::Umeyama => umeyama(corrs).ok().map(|p| (p, corrs.len())),
        RegistrationMethod::Ransac => {
            ransac_register(corrs, config.ransac_threshold, config.ransac_iters, config.ransac_seed)
                .ok()
                .map(|r| (r.pose, r.inlier_indices.len()))
        }
        RegistrationMethod::RansacIcp => {
            let r = ransac_register(corrs, config.ransac_threshold, config.ransac_iters, config.ransac_seed)
                .ok()?;
            let q_cloud = db.sensor.cloud(&query.depth, config.icp_stride);
            // the target is sampled twice as densely as the source
            let d_cloud = db.sensor.cloud(&top1.depth, (config.icp_stride / 2).max(1));
            let pose = if q_cloud.is_empty() || d_cloud.is_empty() {
                r.pose
            } else {
                icp_refine(&q_cloud, &d_cloud, &r.pose, config.icp_max_iters, config.icp_tol)
                    .map_or(r.pose, |i| i.pose)
            };
            Some((pose, r.inlier_indices.len()))
        }
        RegistrationMethod::Gnc => gnc_tls_register_with(corrs, config.gnc_noise_bound, config.gnc_factor)
            .ok()
            .map(|r| (r.pose, r.inlier_indices.len())),
    };
    res.filter(|(p, _)| p.is_finite())
}

/// Back-projected 3D pairs for descriptor matches with valid depth on
/// both sides.
pub fn match_correspondences(
    sensor: &Sensor,
    query_features: &Features,
    query_depth: &DepthMap,
    db_frame: &DatabaseFrame,
    config: &PipelineConfig,
) -> (usize, Vec<Correspondence3D>) {
    let matches = match_descriptors(
        &query_features.descriptors,
        &db_frame.features.descriptors,
        config.ratio,
        config.mutual,
    );
    let corrs = matches
        .iter()
        .filter_map(|m| {
            let q = sensor.keypoint_point(query_depth, &query_features.keypoints[m.query_index])?;
            let d = sensor.keypoint_point(&db_frame.depth, &db_frame.features.keypoints[m.db_index])?;
            Some(Correspondence3D::new(q, d))
        })
        .collect();
    (matches.len(), corrs)
}

pub fn localize(
    db: &LocalizationDatabase,
    query: &Frame,
    config: &PipelineConfig,
) -> Result<LocalizationResult> {
    if config.registration == RegistrationMethod::None {
        return retrieval_only_localize(db, query, config);
    }
    let start = Instant::now();
    let mut t = StageTimings::default();
    let r = retrieve(db, query, config, &mut t)?;

    let clock = Instant::now();
    let (match_count, corrs) = match_correspondences(&db.sensor, &r.features, &query.depth, r.top1, config);
    t.feature_matching = clock.elapsed().as_secs_f64();

    if corrs.len() < config.min_matches {
        t.total = start.elapsed().as_secs_f64();
        return Ok(fallback_result(query, &r, match_count, t));
    }
    let clock = Instant::now();
    let registered = register(&corrs, db, query, r.top1, config);
    t.pose_optimization = clock.elapsed().as_secs_f64();
    t.total = start.elapsed().as_secs_f64();
    let Some((relative, inliers)) = registered else {
        return Ok(fallback_result(query, &r, match_count, t));
    };
    Ok(LocalizationResult {
        query_id: query.frame_id,
        point_id: query.point_id,
        pose: compose_query_pose(&r.top1.pose, &relative),
        top1_frame_id: r.top1.frame_id,
        top1_distance: r.distance,
        match_count,
        inlier_count: inliers,
        fallback: false,
        timings: t,
    })
}

/// Query camera-to-world pose from the retrieved camera-to-world pose and
/// the registration mapping query-camera points into the retrieved camera.
pub fn compose_query_pose(db_pose: &Pose, relative: &Pose) -> Pose {
    db_pose.compose(relative)
}

/// Localizes every query in parallel; output order follows `queries`.
pub fn localize_all(
    db: &LocalizationDatabase,
    queries: &[&Frame],
    config: &PipelineConfig,
) -> Result<Vec<LocalizationResult>> {
    queries.par_iter().map(|q| localize(db, q, config)).collect()
}

pub const RESULTS_HEADER: &str =
    "query_id,point_id,top1_frame_id,fallback,tx,ty,tz,qw,qx,qy,qz,t_retr,t_match,t_reg";

/// Results file: a header line then one line per query. `t_retr` covers
/// embedding extraction and matching, `t_match` feature extraction and
/// matching, `t_reg` pose optimization. With `zero_timings` the timing
/// columns are written as 0 so the file depends on inputs alone.
pub fn write_results(results: &[LocalizationResult], zero_timings: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        let p = &r.pose;
        let q = p.rotation;
        let t = &r.timings;
        let (tr, tm, tg) = if zero_timings {
            (0.0, 0.0, 0.0)
        } else {
            (
                t.embedding_extraction + t.embedding_matching,
                t.feature_extraction + t.feature_matching,
                t.pose_optimization,
            )
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.query_id,
            r.point_id,
            r.top1_frame_id,
            r.fallback as u8,
            p.translation.x,
            p.translation.y,
            p.translation.z,
            q.w(),
            q.x(),
            q.y(),
            q.z(),
            tr,
            tm,
            tg
        ));
    }
    out
}

/// One parsed results row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub query_id: u32,
    pub point_id: u32,
    pub top1_frame_id: u32,
    pub fallback: bool,
    pub pose: Pose,
    pub t_retr: f64,
    pub t_match: f64,
    pub t_reg: f64,
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(Error::format(path, "missing results header")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: malformed row", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 14 {
            return Err(bad());
        }
        let int = |s: &str| s.parse::<u32>().map_err(|_| bad());
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(bad)
        };
        let fallback = match f[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        let t = Vector3::new(num(f[4])?, num(f[5])?, num(f[6])?);
        let (w, x, y, z) = (num(f[7])?, num(f[8])?, num(f[9])?, num(f[10])?);
        if w * w + x * x + y * y + z * z == 0.0 {
            return Err(bad());
        }
        rows.push(ResultRow {
            query_id: int(f[0])?,
            point_id: int(f[1])?,
            top1_frame_id: int(f[2])?,
            fallback,
            pose: Pose::new(UnitQuaternion::new(w, x, y, z), t),
            t_retr: num(f[11])?,
            t_match: num(f[12])?,
            t_reg: num(f[13])?,
        });
    }
    Ok(rows)
}

const DB_MAGIC: &[u8; 8] = b"PLOCDB01";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn pose(&mut self, p: &Pose) {
        for v in [
            p.translation.x,
            p.translation.y,
            p.translation.z,
            p.rotation.w(),
            p.rotation.x(),
            p.rotation.y(),
            p.rotation.z(),
        ] {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated database"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::format(self.path, "oversized block"))?;
        self.take(n)
    }
    fn pose(&mut self) -> Result<Pose> {
        let t = Vector3::new(self.f64()?, self.f64()?, self.f64()?);
        let (w, x, y, z) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let p = Pose::new(UnitQuaternion::new(w, x, y, z), t);
        if !p.is_finite() {
            return Err(Error::format(self.path, "non-finite pose"));
        }
        Ok(p)
    }
}

/// Binary database: magic, sensor, vocabulary, embedding variant, then per
/// frame its ids, pose, embedding, keypoints, descriptors and depth raster.
/// All integers and floats are big-endian.
pub fn encode_database(db: &LocalizationDatabase) -> Vec<u8> {
    let mut w = Writer(DB_MAGIC.to_vec());
    let k = &db.sensor.intrinsics;
    for v in [k.fx, k.fy, k.cx, k.cy] {
        w.f64(v);
    }
    w.u32(k.width);
    w.u32(k.height);
    w.f64(db.sensor.depth_max);
    w.bytes(&db.vocabulary.encode());
    w.u32(match db.index.variant() {
        EmbeddingVariant::Bow => 0,
        EmbeddingVariant::Vlad => 1,
    });
    w.u32(db.frames.len() as u32);
    for (f, (id, e)) in db.frames.iter().zip(db.index.entries()) {
        debug_assert_eq!(f.frame_id, *id);
        w.u32(f.frame_id);
        w.u32(f.point_id);
        w.pose(&f.pose);
        w.u32(e.values.len() as u32);
        for v in &e.values {
            w.f64(*v);
        }
        w.u32(f.features.len() as u32);
        for kp in &f.features.keypoints {
            for v in [kp.x, kp.y, kp.response, kp.orientation] {
                w.f64(v);
            }
        }
        for d in &f.features.descriptors {
            w.0.extend_from_slice(&d.to_bytes());
        }
        w.bytes(&f.depth.encode());
    }
    w.0
}

pub fn decode_database(bytes: &[u8], path: &Path) -> Result<LocalizationDatabase> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8).ok() != Some(&DB_MAGIC[..]) {
        return Err(Error::format(path, "not a localization database"));
    }
    let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let (width, height) = (r.u32()?, r.u32()?);
    let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy, width, height)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let depth_max = r.f64()?;
    if !(depth_max > 0.0) {
        return Err(Error::format(path, "depth range must be positive"));
    }
    let vocabulary = Vocabulary::decode(r.bytes()?, path)?;
    let variant = match r.u32()? {
        0 => EmbeddingVariant::Bow,
        1 => EmbeddingVariant::Vlad,
        v => return Err(Error::format(path, format!("unknown embedding variant {v}"))),
    };
    let n = r.u32()? as usize;
    let mut frames = Vec::with_capacity(n.min(1 << 16));
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let frame_id = r.u32()?;
        let point_id = r.u32()?;
        let pose = r.pose()?;
        let dim = r.u32()? as usize;
        let values = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let nk = r.u32()? as usize;
        let mut keypoints = Vec::with_capacity(nk.min(1 << 16));
        for _ in 0..nk {
            keypoints.push(Keypoint {
                x: r.f64()?,
                y: r.f64()?,
                response: r.f64()?,
                orientation: r.f64()?,
            });
        }
        let descriptors = (0..nk)
            .map(|_| Ok(BinaryDescriptor::from_bytes(r.take(32)?.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        let depth = DepthMap::decode(r.bytes()?, path)?;
        entries.push((frame_id, GlobalEmbedding { variant, values }));
        frames.push(DatabaseFrame {
            frame_id,
            point_id,
            pose,
            features: Features {
                keypoints,
                descriptors,
            },
            depth,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after database"));
    }
    if frames.windows(2).any(|w| w[0].frame_id >= w[1].frame_id) {
        return Err(Error::format(path, "frame ids must be strictly increasing"));
    }
    let index = RetrievalIndex::new(variant, entries).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(LocalizationDatabase {
        sensor: Sensor {
            intrinsics,
            depth_max,
        },
        vocabulary,
        index,
        frames,
    })
}
