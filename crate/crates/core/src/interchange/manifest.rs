use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Category, InterchangeError};

/// One video of a dataset manifest. `path` is relative to the manifest file
/// unless absolute. `category` and `source_model` override the bundle's meta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<String>,
    #[serde(default)]
    pub is_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
}

/// Reads `manifest.json`, resolving bundle paths against the manifest's
/// directory. Fails on duplicate or empty ids; unreadable bundles surface
/// later as per-video failures.
pub fn load_manifest(path: &Path) -> Result<Manifest, InterchangeError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| InterchangeError::Io { file: file.clone(), source })?;
    let mut manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| InterchangeError::invalid(&file, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    for entry in &mut manifest.videos {
        if entry.video_id.is_empty() {
            return Err(InterchangeError::invalid(&file, "empty video_id"));
        }
        if !seen.insert(entry.video_id.clone()) {
            return Err(InterchangeError::invalid(&file, format!("duplicate video_id {:?}", entry.video_id)));
        }
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), InterchangeError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|source| InterchangeError::Io { file: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, path: &str) -> ManifestEntry {
        ManifestEntry {
            video_id: id.into(),
            path: path.into(),
            category: Some(Category::CurvedMotion),
            source_model: Some("m".into()),
            is_ground_truth: false,
        }
    }

    #[test]
    fn resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        let m = Manifest { videos: vec![entry("a", "a")] };
        let p = dir.path().join("manifest.json");
        write_manifest(&m, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.videos[0].path, dir.path().join("a"));
    }

    #[test]
    fn rejects_duplicate_and_empty_ids() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        let p = dir.path().join("manifest.json");
        write_manifest(&Manifest { videos: vec![entry("a", "a"), entry("a", "a")] }, &p).unwrap();
        assert!(load_manifest(&p).is_err());
        write_manifest(&Manifest { videos: vec![entry("", "a")] }, &p).unwrap();
        assert!(load_manifest(&p).is_err());
        fs::write(&p, r#"{"videos":[{"video_id":"x","path":"a"}]}"#).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!((m.videos[0].category, m.videos[0].source_model.clone()), (None, None));
    }
}
