//! Readers and writers for the on-disk interchange formats.
//!
//! All formats are line-oriented ASCII. Floats are written with Rust's
//! shortest round-trip formatting, so write/read cycles are bit-exact.
//! The exact grammars are documented in `docs/FORMATS.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geom::{
    CameraError, PinholeCamera, RigidTransform, SimilarityTransform, TransformError,
};
use crate::localization::{Keypoint, QueryFrame};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("toml error on {path}: {message}")]
    Toml { path: String, message: String },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// PLY-style labeled meshes and point clouds
// ---------------------------------------------------------------------------

/// In-memory form of the ASCII PLY subset used for meshes and clouds.
#[derive(Debug, Default, Clone)]
pub struct PlyData {
    pub vertices: Vec<Point3<f64>>,
    pub calyx_ids: Option<Vec<u32>>,
    pub visited: Option<Vec<u8>>,
    pub faces: Option<Vec<[u32; 3]>>,
    pub calyx_names: BTreeMap<u32, String>,
}

pub fn write_ply(path: &Path, data: &PlyData) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        for (id, name) in &data.calyx_names {
            writeln!(w, "comment calyx_name {id} {name}")?;
        }
        writeln!(w, "element vertex {}", data.vertices.len())?;
        writeln!(w, "property double x")?;
        writeln!(w, "property double y")?;
        writeln!(w, "property double z")?;
        if data.calyx_ids.is_some() {
            writeln!(w, "property int calyx_id")?;
        }
        if data.visited.is_some() {
            writeln!(w, "property uchar visited")?;
        }
        if let Some(faces) = &data.faces {
            writeln!(w, "element face {}", faces.len())?;
            writeln!(w, "property list uchar int vertex_indices")?;
        }
        writeln!(w, "end_header")?;
        for (i, v) in data.vertices.iter().enumerate() {
            write!(w, "{} {} {}", v.x, v.y, v.z)?;
            if let Some(ids) = &data.calyx_ids {
                write!(w, " {}", ids[i])?;
            }
            if let Some(vis) = &data.visited {
                write!(w, " {}", vis[i])?;
            }
            writeln!(w)?;
        }
        if let Some(faces) = &data.faces {
            for f in faces {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn read_ply(path: &Path) -> Result<PlyData, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();

    let mut expect = |want: &str| -> Result<(), FormatError> {
        match lines.next() {
            Some((n, line)) if line.trim() != want => {
                Err(parse_err(path, n + 1, format!("expected `{want}`, got `{line}`")))
            }
            None => Err(parse_err(path, 0, format!("missing `{want}`"))),
            _ => Ok(()),
        }
    };
    expect("ply")?;
    expect("format ascii 1.0")?;

    let mut vertex_count: Option<usize> = None;
    let mut face_count: Option<usize> = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut calyx_names = BTreeMap::new();
    let mut in_face_element = false;

    let mut body_start = 0usize;
    for (n, raw) in &mut lines {
        let line = raw.trim();
        if line == "end_header" {
            body_start = n + 1;
            break;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("comment") => {
                let rest: Vec<&str> = tokens.collect();
                if rest.first() == Some(&"calyx_name") && rest.len() >= 3 {
                    if let Ok(id) = rest[1].parse::<u32>() {
                        calyx_names.insert(id, rest[2..].join(" "));
                    }
                }
            }
            Some("element") => match (tokens.next(), tokens.next()) {
                (Some("vertex"), Some(count)) => {
                    vertex_count = Some(count.parse().map_err(|_| {
                        parse_err(path, n + 1, "invalid vertex count")
                    })?);
                    in_face_element = false;
                }
                (Some("face"), Some(count)) => {
                    face_count = Some(count.parse().map_err(|_| {
                        parse_err(path, n + 1, "invalid face count")
                    })?);
                    in_face_element = true;
                }
                _ => return Err(parse_err(path, n + 1, "unsupported element")),
            },
            Some("property") => {
                if in_face_element {
                    // Only the canonical index list is supported.
                    if line != "property list uchar int vertex_indices" {
                        return Err(parse_err(path, n + 1, "unsupported face property"));
                    }
                } else {
                    let rest: Vec<&str> = tokens.collect();
                    if rest.len() != 2 {
                        return Err(parse_err(path, n + 1, "malformed property"));
                    }
                    vertex_props.push(rest[1].to_string());
                }
            }
            _ => return Err(parse_err(path, n + 1, format!("unexpected header line `{line}`"))),
        }
    }

    let vertex_count =
        vertex_count.ok_or_else(|| parse_err(path, body_start, "missing vertex element"))?;
    let expected = ["x", "y", "z"];
    if vertex_props.len() < 3 || vertex_props[..3] != expected {
        return Err(parse_err(path, body_start, "vertex properties must start with x y z"));
    }
    let has_calyx = vertex_props.iter().any(|p| p == "calyx_id");
    let has_visited = vertex_props.iter().any(|p| p == "visited");

    let mut vertices = Vec::with_capacity(vertex_count);
    let mut calyx_ids = has_calyx.then(|| Vec::with_capacity(vertex_count));
    let mut visited = has_visited.then(|| Vec::with_capacity(vertex_count));

    for _ in 0..vertex_count {
        let (n, raw) = lines
            .next()
            .ok_or_else(|| parse_err(path, body_start, "unexpected end of vertex list"))?;
        let mut tokens = raw.split_whitespace();
        let mut next_f64 = |what: &str| -> Result<f64, FormatError> {
            tokens
                .next()
                .ok_or_else(|| parse_err(path, n + 1, format!("missing {what}")))?
                .parse::<f64>()
                .map_err(|_| parse_err(path, n + 1, format!("invalid {what}")))
        };
        let x = next_f64("x")?;
        let y = next_f64("y")?;
        let z = next_f64("z")?;
        vertices.push(Point3::new(x, y, z));
        if let Some(ids) = calyx_ids.as_mut() {
            let id = tokens
                .next()
                .ok_or_else(|| parse_err(path, n + 1, "missing calyx_id"))?
                .parse::<u32>()
                .map_err(|_| parse_err(path, n + 1, "invalid calyx_id"))?;
            ids.push(id);
        }
        if let Some(vis) = visited.as_mut() {
            let v = tokens
                .next()
                .ok_or_else(|| parse_err(path, n + 1, "missing visited flag"))?
                .parse::<u8>()
                .map_err(|_| parse_err(path, n + 1, "invalid visited flag"))?;
            vis.push(v);
        }
    }

    let faces = match face_count {
        None => None,
        Some(count) => {
            let mut faces = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, raw) = lines
                    .next()
                    .ok_or_else(|| parse_err(path, body_start, "unexpected end of face list"))?;
                let tokens: Vec<&str> = raw.split_whitespace().collect();
                if tokens.len() != 4 || tokens[0] != "3" {
                    return Err(parse_err(path, n + 1, "faces must be `3 i j k`"));
                }
                let mut idx = [0u32; 3];
                for (k, t) in tokens[1..].iter().enumerate() {
                    idx[k] = t
                        .parse::<u32>()
                        .map_err(|_| parse_err(path, n + 1, "invalid face index"))?;
                }
                faces.push(idx);
            }
            Some(faces)
        }
    };

    Ok(PlyData {
        vertices,
        calyx_ids,
        visited,
        faces,
        calyx_names,
    })
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), FormatError> {
    write_ply(
        path,
        &PlyData {
            vertices: cloud.points.clone(),
            ..Default::default()
        },
    )
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud, FormatError> {
    Ok(PointCloud::new(read_ply(path)?.vertices))
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

pub const TRAJECTORY_HEADER: &str =
    "frame_id,timestamp_s,status,qw,qx,qy,qz,tx_mm,ty_mm,tz_mm,inlier_count,inlier_ratio";

/// One row of a trajectory file. Poses are camera-from-world; frames without
/// a pose (status `unlocalized`) leave the pose columns empty.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub status: String,
    pub pose: Option<RigidTransform>,
    pub inlier_count: u32,
    pub inlier_ratio: f64,
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for row in rows {
            let pose_cols = match &row.pose {
                Some(p) => {
                    let [qw, qx, qy, qz] = p.quaternion_wxyz();
                    let t = p.translation();
                    format!("{},{},{},{},{},{},{}", qw, qx, qy, qz, t.x, t.y, t.z)
                }
                None => ",,,,,,".to_string(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.frame_id, row.timestamp_s, row.status, pose_cols, row.inlier_count, row.inlier_ratio
            )?;
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 {
            if line.trim() != TRAJECTORY_HEADER {
                return Err(parse_err(path, 1, "unexpected trajectory header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(parse_err(path, n + 1, format!("expected 12 columns, got {}", cols.len())));
        }
        let frame_id = cols[0]
            .parse::<u64>()
            .map_err(|_| parse_err(path, n + 1, "invalid frame_id"))?;
        let timestamp_s = cols[1]
            .parse::<f64>()
            .map_err(|_| parse_err(path, n + 1, "invalid timestamp"))?;
        let status = cols[2].to_string();
        let pose = if cols[3].is_empty() {
            None
        } else {
            let mut q = [0.0f64; 7];
            for (k, c) in cols[3..10].iter().enumerate() {
                q[k] = c
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, n + 1, "invalid pose column"))?;
            }
            Some(RigidTransform::from_quaternion_wxyz(
                q[0],
                q[1],
                q[2],
                q[3],
                Vector3::new(q[4], q[5], q[6]),
            )?)
        };
        let inlier_count = cols[10]
            .parse::<u32>()
            .map_err(|_| parse_err(path, n + 1, "invalid inlier_count"))?;
        let inlier_ratio = cols[11]
            .parse::<f64>()
            .map_err(|_| parse_err(path, n + 1, "invalid inlier_ratio"))?;
        rows.push(TrajectoryRow {
            frame_id,
            timestamp_s,
            status,
            pose,
            inlier_count,
            inlier_ratio,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Features files
// ---------------------------------------------------------------------------

pub const FEATURES_MAGIC: &str = "features 1";

/// Writes per-frame features. Reference videos carry 3D point ids on their
/// keypoints; query videos write `-1` there.
pub fn write_features(path: &Path, frames: &[QueryFrame]) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "{FEATURES_MAGIC}")?;
        for frame in frames {
            write!(w, "{},{},{}", frame.frame_id, frame.timestamp_s, frame.keypoints.len())?;
            for g in &frame.global_descriptor {
                write!(w, ",{g}")?;
            }
            writeln!(w)?;
            for kp in &frame.keypoints {
                write!(w, "{},{}", kp.pixel[0], kp.pixel[1])?;
                for d in &kp.descriptor {
                    write!(w, ",{d}")?;
                }
                match kp.point3d_id {
                    Some(id) => writeln!(w, ",{id}")?,
                    None => writeln!(w, ",-1")?,
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<QueryFrame>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == FEATURES_MAGIC => {}
        _ => return Err(parse_err(path, 1, format!("expected `{FEATURES_MAGIC}` header"))),
    }
    let mut frames = Vec::new();
    while let Some((n, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(parse_err(path, n + 1, "frame line needs id, timestamp, keypoint count"));
        }
        let frame_id = cols[0]
            .parse::<u64>()
            .map_err(|_| parse_err(path, n + 1, "invalid frame_id"))?;
        let timestamp_s = cols[1]
            .parse::<f64>()
            .map_err(|_| parse_err(path, n + 1, "invalid timestamp"))?;
        let n_keypoints = cols[2]
            .parse::<usize>()
            .map_err(|_| parse_err(path, n + 1, "invalid keypoint count"))?;
        let global_descriptor: Vec<f64> = cols[3..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(path, n + 1, "invalid global descriptor"))?;
        let mut keypoints = Vec::with_capacity(n_keypoints);
        for _ in 0..n_keypoints {
            let (kn, kline) = lines
                .next()
                .ok_or_else(|| parse_err(path, n + 1, "unexpected end of keypoint list"))?;
            let kcols: Vec<&str> = kline.split(',').collect();
            if kcols.len() < 3 {
                return Err(parse_err(path, kn + 1, "keypoint line needs u, v, descriptor, id"));
            }
            let u = kcols[0]
                .parse::<f64>()
                .map_err(|_| parse_err(path, kn + 1, "invalid u"))?;
            let v = kcols[1]
                .parse::<f64>()
                .map_err(|_| parse_err(path, kn + 1, "invalid v"))?;
            let descriptor: Vec<f64> = kcols[2..kcols.len() - 1]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(path, kn + 1, "invalid descriptor"))?;
            let id_str = kcols[kcols.len() - 1];
            let point3d_id = if id_str == "-1" {
                None
            } else {
                Some(
                    id_str
                        .parse::<u32>()
                        .map_err(|_| parse_err(path, kn + 1, "invalid point3d id"))?,
                )
            };
            keypoints.push(Keypoint {
                pixel: [u, v],
                descriptor,
                point3d_id,
            });
        }
        frames.push(QueryFrame {
            frame_id,
            timestamp_s,
            global_descriptor,
            keypoints,
        });
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Fiducial pairs CSV
// ---------------------------------------------------------------------------

pub fn read_fiducial_pairs(path: &Path) -> Result<Vec<(Point3<f64>, Point3<f64>)>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(',').collect();
        if cols.len() != 6 {
            return Err(parse_err(path, n + 1, "expected sx,sy,sz,tx,ty,tz"));
        }
        let mut v = [0.0f64; 6];
        for (k, c) in cols.iter().enumerate() {
            v[k] = c
                .parse::<f64>()
                .map_err(|_| parse_err(path, n + 1, "invalid coordinate"))?;
        }
        pairs.push((
            Point3::new(v[0], v[1], v[2]),
            Point3::new(v[3], v[4], v[5]),
        ));
    }
    Ok(pairs)
}

pub fn write_fiducial_pairs(
    path: &Path,
    pairs: &[(Point3<f64>, Point3<f64>)],
) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        for (s, t) in pairs {
            writeln!(w, "{},{},{},{},{},{}", s.x, s.y, s.z, t.x, t.y, t.z)?;
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Transform JSON
// ---------------------------------------------------------------------------

/// Serialized similarity (or rigid, when `scale` is 1) transform, plus
/// registration diagnostics when produced by ICP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformRecord {
    pub schema_version: u32,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx_mm: f64,
    pub ty_mm: f64,
    pub tz_mm: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_residual_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations_used: Option<u32>,
}

fn default_scale() -> f64 {
    1.0
}

impl TransformRecord {
    pub fn from_rigid(t: &RigidTransform) -> Self {
        let [qw, qx, qy, qz] = t.quaternion_wxyz();
        let tr = t.translation();
        Self {
            schema_version: 1,
            qw,
            qx,
            qy,
            qz,
            tx_mm: tr.x,
            ty_mm: tr.y,
            tz_mm: tr.z,
            scale: 1.0,
            mean_residual_mm: None,
            iterations_used: None,
        }
    }

    pub fn to_rigid(&self) -> Result<RigidTransform, TransformError> {
        RigidTransform::from_quaternion_wxyz(
            self.qw,
            self.qx,
            self.qy,
            self.qz,
            Vector3::new(self.tx_mm, self.ty_mm, self.tz_mm),
        )
    }

    pub fn to_similarity(&self) -> Result<SimilarityTransform, TransformError> {
        SimilarityTransform::new(self.to_rigid()?, self.scale)
    }
}

pub fn write_transform(path: &Path, record: &TransformRecord) -> Result<(), FormatError> {
    let json = serde_json::to_string_pretty(record).map_err(|e| FormatError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

pub fn read_transform(path: &Path) -> Result<TransformRecord, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Camera intrinsics TOML
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraRecord {
    pub fn from_camera(cam: &PinholeCamera) -> Self {
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        }
    }

    pub fn to_camera(&self) -> Result<PinholeCamera, CameraError> {
        PinholeCamera::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

pub fn write_camera(path: &Path, cam: &PinholeCamera) -> Result<(), FormatError> {
    let record = CameraRecord::from_camera(cam);
    let text = toml::to_string(&record).map_err(|e| FormatError::Toml {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_camera(path: &Path) -> Result<PinholeCamera, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let record: CameraRecord = toml::from_str(&text).map_err(|e| FormatError::Toml {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(record.to_camera()?)
}
