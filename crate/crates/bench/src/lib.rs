//! Shared fixtures for the pipeline benchmarks.

use std::path::Path;

use dynotrack_core::io::SensorFrame;
use dynotrack_core::simulator::render_frame;
use dynotrack_core::simulator::scene::SceneSpec;

/// Loads a shipped scene by name.
pub fn scene(name: &str) -> SceneSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenes/{name}.json"));
    SceneSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// The first `n` sensor frames of `scene`, rendered in memory.
pub fn frames(scene: &SceneSpec, n: usize) -> Vec<SensorFrame> {
    (0..n)
        .map(|k| render_frame(scene, scene.frame_time(k), k).frame)
        .collect()
}
