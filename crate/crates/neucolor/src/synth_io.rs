//! Writes synthetic scenes in the dataset layout.

use std::path::Path;

use neucolor_core::synth::{generate, SceneSpec, SynthDataset};

use crate::dataset::{save_dataset, IDENTITY4};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_string};
use crate::ply::write_ply;

pub const TEST_DIR: &str = "test";
pub const GT_MESH_FILE: &str = "gt_mesh.ply";
pub const SPEC_FILE: &str = "scene.toml";

/// Training views go to `out`, held-out views to `out/test`, plus the
/// ground-truth mesh (per-vertex albedo) and the scene description.
pub fn emit_dataset(spec: &SceneSpec, out: &Path) -> Result<SynthDataset> {
    let synth = generate(spec)?;
    debug_assert_eq!(synth.gt_mesh.vertices.len(), synth.gt_mesh.colors.len());
    save_dataset(out, &synth.train, &IDENTITY4)?;
    save_dataset(&out.join(TEST_DIR), &synth.test, &IDENTITY4)?;
    write_ply(&synth.gt_mesh, &out.join(GT_MESH_FILE))?;
    let text = toml::to_string_pretty(spec).map_err(|e| Error::Config(e.to_string()))?;
    atomic_write(&out.join(SPEC_FILE), text.as_bytes())?;
    Ok(synth)
}

pub fn load_spec(path: &Path) -> Result<SceneSpec> {
    toml::from_str(&read_string(path)?).map_err(|e| Error::format(path, e.to_string().trim().replace('\n', " ")))
}

