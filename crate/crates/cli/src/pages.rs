use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use walkdir::WalkDir;

use sketchdex_core::engine::PageSource;

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Images under `dir`, recursively, in path order.
pub fn images_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.with_context(|| format!("listing {}", dir.display()))?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

/// Page sources in path order; the title is the name of the containing directory.
pub fn discover(dir: &Path) -> Result<Vec<PageSource>> {
    Ok(images_in(dir)?
        .into_iter()
        .map(|p| {
            let title = p
                .parent()
                .and_then(|d| d.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            PageSource::new(p, title)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pages_are_sorted_and_titled_by_directory() {
        let dir = tempfile::tempdir().unwrap();
        for rel in ["b/2.png", "b/1.PNG", "a/x.jpg", "a/notes.txt", "c.jpeg"] {
            let p = dir.path().join(rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, b"").unwrap();
        }
        let found = discover(dir.path()).unwrap();
        let rel: Vec<(String, String)> = found
            .iter()
            .map(|s| {
                let r = s.path.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned();
                (r, s.title_id.clone())
            })
            .collect();
        let root = dir.path().file_name().unwrap().to_string_lossy().into_owned();
        assert_eq!(
            rel,
            vec![
                ("a/x.jpg".into(), "a".into()),
                ("b/1.PNG".into(), "b".into()),
                ("b/2.png".into(), "b".into()),
                ("c.jpeg".into(), root),
            ]
        );
    }
}
