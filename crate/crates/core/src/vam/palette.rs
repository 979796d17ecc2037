//! Per-timestep overlay colours, one `R,G,B` triple per line.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

const ADE20K: &str = include_str!("../../data/ade20k_palette.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    /// RGB triples in timestep order.
    pub colors: Vec<[u8; 3]>,
    source: String,
}

impl Palette {
    /// First 80 colours of the ADE20k segmentation palette.
    pub fn ade20k() -> Self {
        Self::parse(ADE20K).expect("bundled palette is valid")
    }

    /// Parses `R,G,B` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |msg: String| Error::Parse { path: "palette".into(), line: i + 1, msg };
            if parts.len() != 3 {
                return Err(err(format!("expected R,G,B, got {line:?}")));
            }
            let mut c = [0u8; 3];
            for (k, p) in parts.iter().enumerate() {
                c[k] = p.parse().map_err(|_| err(format!("channel {p:?} is not an integer in 0..=255")))?;
            }
            colors.push(c);
        }
        if colors.is_empty() {
            return Err(Error::Data("palette has no entries".into()));
        }
        Ok(Self { colors, source: text.to_owned() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// `(B, G)` written for timestep `i`.
    pub fn blue_green(&self, i: usize) -> Option<(u8, u8)> {
        self.colors.get(i).map(|c| (c[2], c[1]))
    }

    pub fn distinct(&self) -> usize {
        let mut v = self.colors.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }

    /// Hex SHA-256 of the source text, recorded in model manifests.
    pub fn sha256(&self) -> String {
        Sha256::digest(self.source.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
