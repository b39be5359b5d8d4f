//! On-disk STCVOL cache keyed by a SHA-256 of the inputs and parameters.

use std::path::PathBuf;

use log::{debug, warn};
use sha2::{Digest, Sha256};
use stereoconf::costvol::{decode_stcvol, save_cost_volume};
use stereoconf::{CostVolume, GrayImage};

pub struct VolumeCache {
    dir: PathBuf,
}

/// Incremental cache key.
pub struct Key(Sha256);

impl Key {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"stconf-cache-v1\0");
        h.update(stage.as_bytes());
        h.update([0]);
        Key(h)
    }

    pub fn image(mut self, img: &GrayImage) -> Self {
        self.0.update((img.width() as u64).to_le_bytes());
        self.0.update((img.height() as u64).to_le_bytes());
        self.0.update(img.pixels());
        self
    }

    pub fn number(mut self, v: u64) -> Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn json(mut self, v: &impl serde::Serialize) -> Self {
        let text = serde_json::to_string(v).expect("parameters serialize");
        self.0.update((text.len() as u64).to_le_bytes());
        self.0.update(text.as_bytes());
        self
    }

    pub fn hex(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl VolumeCache {
    pub fn new(dir: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    /// Returns the cached volume for `key` or computes and stores it.
    /// Unreadable entries are recomputed; failed writes only warn.
    pub fn get_or(
        &self,
        key: Key,
        compute: impl FnOnce() -> stereoconf::Result<CostVolume>,
    ) -> stereoconf::Result<CostVolume> {
        let path = self.dir.join(format!("{}.stcvol", key.hex()));
        if let Ok(bytes) = std::fs::read(&path) {
            match decode_stcvol(&bytes) {
                Ok(vol) => {
                    debug!("cache hit {}", path.display());
                    return Ok(vol);
                }
                Err(e) => warn!("ignoring corrupt cache file {}: {e}", path.display()),
            }
        }
        let vol = compute()?;
        if let Err(e) = save_cost_volume(&vol, &path) {
            warn!("cache write failed: {e}");
        }
        Ok(vol)
    }
}
