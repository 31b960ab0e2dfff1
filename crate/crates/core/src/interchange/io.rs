use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{
    rotation_from_row_major, rotation_to_row_major, vec3, CameraIntrinsics, CameraPoseSequence, InterchangeError,
    Mask, MaskSequence, PerceptionBundle, PointmapSequence, Pose, RgbFrames, Track, TrackPoint, TrackSet, VideoMeta,
};

pub const POINTMAP_MAGIC: &[u8; 8] = b"PDIBPMAP";
const HEADER_LEN: usize = 8 + 16;

#[derive(Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    poses: Option<Vec<PoseRecord>>,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    /// World-to-camera rotation, row-major.
    rotation: Vec<f64>,
    translation: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrackRow {
    track_id: u32,
    frame: usize,
    u: f64,
    v: f64,
    confidence: f64,
}

fn io_err(file: &Path, source: std::io::Error) -> InterchangeError {
    InterchangeError::Io { file: file.display().to_string(), source }
}

fn corrupt(file: &str, detail: impl Into<String>) -> InterchangeError {
    InterchangeError::CorruptTensor { file: file.to_string(), detail: detail.into() }
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<PerceptionBundle, InterchangeError> {
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        return Err(InterchangeError::MissingMeta(meta_path.display().to_string()));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: VideoMeta =
        serde_json::from_str(&text).map_err(|e| InterchangeError::invalid("meta.json", e.to_string()))?;
    meta.validate()?;

    let masks = load_masks(dir, &meta)?;
    let tracks = load_tracks(dir, &meta)?;
    let pointmaps = load_pointmaps(dir, &meta)?;
    let (intrinsics, poses) = load_camera(dir)?;
    let frames = load_frames(dir, &meta)?;

    let bundle = PerceptionBundle { meta, masks, tracks, pointmaps, intrinsics, poses, frames };
    bundle.validate()?;
    Ok(bundle)
}

fn load_masks(dir: &Path, meta: &VideoMeta) -> Result<MaskSequence, InterchangeError> {
    let mut masks = Vec::with_capacity(meta.frame_count);
    for t in 0..meta.frame_count {
        let rel = format!("masks/{t:06}.png");
        let path = dir.join(&rel);
        if !path.is_file() {
            return Err(InterchangeError::mismatch(&rel, format!("missing mask for frame {t} of {}", meta.frame_count)));
        }
        let img = image::open(&path).map_err(|e| corrupt(&rel, e.to_string()))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => return Err(corrupt(&rel, format!("expected 8-bit single channel, got {:?}", other.color()))),
        };
        let (w, h) = gray.dimensions();
        if w as usize != meta.width || h as usize != meta.height {
            return Err(InterchangeError::mismatch(
                &rel,
                format!("mask is {w}x{h}, expected {}x{}", meta.width, meta.height),
            ));
        }
        masks.push(Mask { width: meta.width, height: meta.height, data: gray.into_raw().into_iter().map(|p| p != 0).collect() });
    }
    Ok(MaskSequence { masks })
}

fn load_tracks(dir: &Path, meta: &VideoMeta) -> Result<TrackSet, InterchangeError> {
    let path = dir.join("tracks.csv");
    if !path.is_file() {
        return Ok(TrackSet::default());
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| corrupt("tracks.csv", e.to_string()))?;
    let mut tracks: Vec<Track> = Vec::new();
    for row in reader.deserialize::<TrackRow>() {
        let row = row.map_err(|e| corrupt("tracks.csv", e.to_string()))?;
        if row.frame >= meta.frame_count {
            return Err(InterchangeError::mismatch(
                "tracks.csv",
                format!("track {} references frame {} >= T", row.track_id, row.frame),
            ));
        }
        let idx = match tracks.iter().position(|t| t.id == row.track_id) {
            Some(i) => i,
            None => {
                tracks.push(Track {
                    id: row.track_id,
                    points: vec![TrackPoint { u: 0.0, v: 0.0, confidence: 0.0 }; meta.frame_count],
                });
                tracks.len() - 1
            }
        };
        tracks[idx].points[row.frame] = TrackPoint { u: row.u, v: row.v, confidence: row.confidence };
    }
    tracks.sort_by_key(|t| t.id);
    Ok(TrackSet { tracks })
}

fn read_tensor(dir: &Path, file: &str, channels: u32) -> Result<Option<([u32; 4], Vec<u8>)>, InterchangeError> {
    let path = dir.join(file);
    if !path.is_file() {
        return Ok(None);
    }
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != POINTMAP_MAGIC {
        return Err(corrupt(file, "bad magic or truncated header"));
    }
    let mut dims = [0u32; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 8 + 4 * i;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4-byte slice"));
    }
    if dims[3] != channels {
        return Err(InterchangeError::mismatch(file, format!("channel count {} != {channels}", dims[3])));
    }
    Ok(Some((dims, bytes[HEADER_LEN..].to_vec())))
}

fn load_pointmaps(dir: &Path, meta: &VideoMeta) -> Result<Option<PointmapSequence>, InterchangeError> {
    let Some((dims, payload)) = read_tensor(dir, "pointmap.bin", 3)? else {
        return Ok(None);
    };
    let [t, h, w, _] = dims.map(|d| d as usize);
    if t != meta.frame_count || h != meta.height || w != meta.width {
        return Err(InterchangeError::mismatch(
            "pointmap.bin",
            format!("header {t}x{h}x{w}, expected {}x{}x{}", meta.frame_count, meta.height, meta.width),
        ));
    }
    let n = t * h * w;
    if payload.len() != n * 3 * 4 {
        return Err(corrupt("pointmap.bin", format!("payload has {} bytes, expected {}", payload.len(), n * 12)));
    }
    let points: Vec<f32> =
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();

    let valid = match read_tensor(dir, "pointmap_valid.bin", 1)? {
        Some((vdims, vpayload)) => {
            if vdims[..3] != dims[..3] {
                return Err(InterchangeError::mismatch("pointmap_valid.bin", "header disagrees with pointmap.bin"));
            }
            if vpayload.len() != n {
                return Err(corrupt("pointmap_valid.bin", "payload length disagrees with header"));
            }
            let mut valid = Vec::with_capacity(n);
            for b in vpayload {
                match b {
                    0 => valid.push(false),
                    1 => valid.push(true),
                    other => return Err(corrupt("pointmap_valid.bin", format!("byte {other} is not 0/1"))),
                }
            }
            valid
        }
        None => points.chunks_exact(3).map(|p| p.iter().all(|x| x.is_finite())).collect(),
    };
    Ok(Some(PointmapSequence { frames: t, height: h, width: w, points, valid }))
}

fn load_camera(dir: &Path) -> Result<(Option<CameraIntrinsics>, Option<CameraPoseSequence>), InterchangeError> {
    let path = dir.join("camera.json");
    if !path.is_file() {
        return Ok((None, None));
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let cam: CameraFile =
        serde_json::from_str(&text).map_err(|e| InterchangeError::invalid("camera.json", e.to_string()))?;
    let k = CameraIntrinsics { fx: cam.fx, fy: cam.fy, cx: cam.cx, cy: cam.cy };
    let poses = match cam.poses {
        Some(records) => {
            let mut poses = Vec::with_capacity(records.len());
            for (t, rec) in records.iter().enumerate() {
                if rec.rotation.len() != 9 || rec.translation.len() != 3 {
                    return Err(InterchangeError::mismatch(
                        "camera.json",
                        format!("pose {t} needs 9 rotation and 3 translation entries"),
                    ));
                }
                poses.push(Pose { rotation: rotation_from_row_major(&rec.rotation), translation: vec3(&rec.translation) });
            }
            Some(CameraPoseSequence { poses })
        }
        None => None,
    };
    Ok((Some(k), poses))
}

fn load_frames(dir: &Path, meta: &VideoMeta) -> Result<Option<RgbFrames>, InterchangeError> {
    let fdir = dir.join("frames");
    if !fdir.is_dir() {
        return Ok(None);
    }
    let mut frames = Vec::with_capacity(meta.frame_count);
    for t in 0..meta.frame_count {
        let rel = format!("frames/{t:06}.png");
        let path = dir.join(&rel);
        if !path.is_file() {
            return Err(InterchangeError::mismatch(&rel, format!("missing RGB frame {t}")));
        }
        let img = image::open(&path).map_err(|e| corrupt(&rel, e.to_string()))?.to_rgb8();
        let (w, h) = img.dimensions();
        if w as usize != meta.width || h as usize != meta.height {
            return Err(InterchangeError::mismatch(&rel, format!("frame is {w}x{h}")));
        }
        frames.push(img.into_raw());
    }
    Ok(Some(RgbFrames { width: meta.width, height: meta.height, frames }))
}

fn tensor_header(dims: [u32; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(POINTMAP_MAGIC);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), InterchangeError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn save_png(path: &Path, rel: &str, res: image::ImageResult<()>) -> Result<(), InterchangeError> {
    res.map_err(|e| match e {
        image::ImageError::IoError(io) => io_err(path, io),
        other => corrupt(rel, other.to_string()),
    })
}

/// Writes a bundle directory in the canonical layout. Output bytes depend
/// only on the bundle contents.
pub fn write_bundle(bundle: &PerceptionBundle, dir: &Path) -> Result<(), InterchangeError> {
    bundle.validate()?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| io_err(dir, e))?;
    let meta = &bundle.meta;
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    write_file(&dir.join("meta.json"), text.as_bytes())?;

    for (t, m) in bundle.masks.masks.iter().enumerate() {
        let rel = format!("masks/{t:06}.png");
        let data: Vec<u8> = m.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img: ImageBuffer<Luma<u8>, _> =
            ImageBuffer::from_raw(m.width as u32, m.height as u32, data).expect("mask buffer size");
        let path = dir.join(&rel);
        save_png(&path, &rel, img.save(&path))?;
    }

    let tracks_path = dir.join("tracks.csv");
    let file = fs::File::create(&tracks_path).map_err(|e| io_err(&tracks_path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer
        .write_record(["track_id", "frame", "u", "v", "confidence"])
        .map_err(|e| corrupt("tracks.csv", e.to_string()))?;
    for track in &bundle.tracks.tracks {
        for (f, p) in track.points.iter().enumerate() {
            writer
                .write_record([track.id.to_string(), f.to_string(), p.u.to_string(), p.v.to_string(), p.confidence.to_string()])
                .map_err(|e| corrupt("tracks.csv", e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| io_err(&tracks_path, e))?;

    if let Some(pm) = &bundle.pointmaps {
        let dims = [pm.frames as u32, pm.height as u32, pm.width as u32];
        let mut bytes = tensor_header([dims[0], dims[1], dims[2], 3]);
        bytes.reserve(pm.points.len() * 4);
        for x in &pm.points {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        write_file(&dir.join("pointmap.bin"), &bytes)?;
        let mut vbytes = tensor_header([dims[0], dims[1], dims[2], 1]);
        vbytes.extend(pm.valid.iter().map(|&b| b as u8));
        write_file(&dir.join("pointmap_valid.bin"), &vbytes)?;
    }

    if let Some(k) = &bundle.intrinsics {
        let cam = CameraFile {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            poses: bundle.poses.as_ref().map(|ps| {
                ps.poses
                    .iter()
                    .map(|p| PoseRecord {
                        rotation: rotation_to_row_major(&p.rotation),
                        translation: p.translation.iter().copied().collect(),
                    })
                    .collect()
            }),
        };
        let text = serde_json::to_string_pretty(&cam).expect("camera serializes");
        let path = dir.join("camera.json");
        let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))?;
    }

    if let Some(fr) = &bundle.frames {
        fs::create_dir_all(dir.join("frames")).map_err(|e| io_err(dir, e))?;
        for (t, data) in fr.frames.iter().enumerate() {
            let rel = format!("frames/{t:06}.png");
            let img: ImageBuffer<Rgb<u8>, _> =
                ImageBuffer::from_raw(fr.width as u32, fr.height as u32, data.clone()).expect("frame buffer size");
            let path = dir.join(&rel);
            save_png(&path, &rel, img.save(&path))?;
        }
    }
    Ok(())
}
