use std::path::{Path, PathBuf};

use crate::audio::{load_wav, AudioClip};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BankClip {
    /// Path relative to the bank root, `/`-separated.
    pub id: String,
    /// First directory component under the root, `uncategorized` for top-level files.
    pub category: String,
    pub clip: AudioClip,
}

/// An ordered set of audio clips addressed by id: noise recordings or room
/// impulse responses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipBank {
    clips: Vec<BankClip>,
}

pub type NoiseBank = ClipBank;
pub type RirBank = ClipBank;

/// Recursively lists `*.wav` files under `dir` in sorted order.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in rd {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, &mut out)?;
    out.sort();
    Ok(out)
}

pub(crate) fn relative_id(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

impl ClipBank {
    pub fn new(mut clips: Vec<BankClip>) -> Self {
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        Self { clips }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut clips = Vec::new();
        for path in list_wavs(dir)? {
            let id = relative_id(dir, &path);
            let category = match id.split_once('/') {
                Some((head, _)) => head.to_string(),
                None => "uncategorized".to_string(),
            };
            clips.push(BankClip {
                id,
                category,
                clip: load_wav(&path)?,
            });
        }
        Ok(Self::new(clips))
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&BankClip> {
        self.clips
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.clips[i])
    }

    pub fn by_index(&self, i: usize) -> &BankClip {
        &self.clips[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BankClip> {
        self.clips.iter()
    }

    pub fn categories(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.clips.iter().map(|c| c.category.as_str()).collect();
        c.sort();
        c.dedup();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav;

    #[test]
    fn loads_nested_directories_with_categories() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("music")).unwrap();
        let clip = AudioClip::canonical(vec![0.1, -0.1, 0.2, 0.0]).unwrap();
        write_wav(dir.path().join("music/b.wav"), &clip).unwrap();
        write_wav(dir.path().join("a.wav"), &clip).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let bank = ClipBank::load(dir.path()).unwrap();
        assert_eq!(bank.len(), 2);
        assert_eq!(bank.by_index(0).id, "a.wav");
        assert_eq!(bank.get("music/b.wav").unwrap().category, "music");
        assert_eq!(bank.categories(), vec!["music", "uncategorized"]);
        assert!(bank.get("missing.wav").is_none());
    }
}
