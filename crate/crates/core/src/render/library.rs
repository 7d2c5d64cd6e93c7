use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mesh::TriangleMesh;

/// One row of the library manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub category: String,
    pub name: String,
    pub path: PathBuf,
    pub front: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryModel {
    pub name: String,
    pub mesh: TriangleMesh,
}

/// Meshes grouped by category; meshes are canonicalized on insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelLibrary {
    categories: BTreeMap<String, Vec<LibraryModel>>,
}

impl ModelLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: &str, name: &str, mesh: &TriangleMesh) {
        self.categories.entry(category.to_string()).or_default().push(LibraryModel { name: name.to_string(), mesh: mesh.canonicalized() });
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.keys().position(|c| c == category)
    }

    pub fn models(&self, category: &str) -> Result<&[LibraryModel]> {
        self.categories.get(category).map(Vec::as_slice).ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }

    pub fn find(&self, name: &str) -> Result<&LibraryModel> {
        self.categories.values().flatten().find(|m| m.name == name).ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Loads a JSON manifest; mesh paths are relative to the manifest's directory.
    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let entries: Vec<LibraryEntry> = serde_json::from_str(&text).map_err(|e| Error::Json { path: manifest.into(), source: e })?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut lib = Self::new();
        for e in entries {
            let mesh = TriangleMesh::load_obj(&base.join(&e.path), Vector3::from(e.front))?;
            lib.insert(&e.category, &e.name, &mesh);
        }
        if lib.is_empty() {
            return Err(Error::format(manifest, "library manifest lists no models"));
        }
        Ok(lib)
    }

    /// Writes each mesh as `<dir>/<name>.obj` plus `<dir>/library.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (cat, models) in &self.categories {
            for m in models {
                let file = PathBuf::from(format!("{}.obj", m.name));
                m.mesh.save_obj(&dir.join(&file))?;
                entries.push(LibraryEntry { category: cat.clone(), name: m.name.clone(), path: file, front: m.mesh.front.into() });
            }
        }
        let manifest = dir.join("library.json");
        let text = serde_json::to_string_pretty(&entries).expect("manifest serializes");
        std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}
