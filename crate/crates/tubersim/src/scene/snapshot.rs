//! Scene snapshot export/import for replaying identical worlds.
//!
//! Snapshots are single JSON documents with a version tag; the tuber list
//! round-trips exactly (f64 serialization is shortest-exact).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Scene;

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("cannot access snapshot file")]
    Io(#[from] std::io::Error),
    #[error("snapshot malformed")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported snapshot version {0} (expected {SNAPSHOT_VERSION})")]
    Version(u32),
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotDoc {
    version: u32,
    scene: Scene,
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<(), SnapshotError> {
    let doc = SnapshotDoc {
        version: SNAPSHOT_VERSION,
        scene: scene.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene, SnapshotError> {
    let doc: SnapshotDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    if doc.version != SNAPSHOT_VERSION {
        return Err(SnapshotError::Version(doc.version));
    }
    Ok(doc.scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{spawn_batch, CameraPose, ShapeProfile};

    #[test]
    fn snapshot_round_trip() {
        let scene = Scene::new(
            CameraPose { height_mm: 260.0 },
            120.0,
            spawn_batch(13, 5, &ShapeProfile::default()),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        save_scene(&path, &scene).unwrap();
        let loaded = load_scene(&path).unwrap();
        assert_eq!(scene, loaded);
    }

    #[test]
    fn rejects_future_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let text = r#"{"version": 99, "scene": {"camera": {"height_mm": 1.0}, "spawn_y_mm": 0.0, "tubers": []}}"#;
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_scene(&path), Err(SnapshotError::Version(99))));
    }
}
