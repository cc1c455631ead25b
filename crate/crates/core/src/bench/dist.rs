//! Weighted object-size distributions.
//!
//! File format: one `size weight` pair per line, `#` starts a comment.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::ParseError;

#[derive(Debug, Clone)]
pub struct SizeDistribution {
    entries: Vec<(usize, f64)>,
    index: WeightedIndex<f64>,
}

impl PartialEq for SizeDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

/// Named presets, shaped after the dominant sizes of the programs they are
/// named after. The remaining mass is spread over small filler sizes.
pub const PRESETS: &[&str] = &["emacs-like", "hummingbird-like", "espresso-like"];

impl SizeDistribution {
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self, String> {
        if entries.is_empty() {
            return Err("a size distribution needs at least one entry".into());
        }
        if let Some(&(s, w)) = entries.iter().find(|&&(s, w)| s == 0 || w.is_nan() || w <= 0.0 || !w.is_finite()) {
            return Err(format!("bad entry: size {s} weight {w}"));
        }
        let index = WeightedIndex::new(entries.iter().map(|e| e.1)).map_err(|e| e.to_string())?;
        Ok(SizeDistribution { entries, index })
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ParseError { line: i + 1, msg };
            let mut it = line.split_whitespace();
            let size = it
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| err(format!("expected `size weight`, got {line:?}")))?;
            let weight = it
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| err(format!("expected `size weight`, got {line:?}")))?;
            if it.next().is_some() {
                return Err(err(format!("trailing fields in {line:?}")));
            }
            entries.push((size, weight));
        }
        Self::new(entries).map_err(|msg| ParseError { line: 0, msg })
    }

    pub fn preset(name: &str) -> Option<Self> {
        let e: &[(usize, f64)] = match name {
            "emacs-like" => &[
                (40, 51.0),
                (648, 15.0),
                (104, 11.0),
                (8, 3.0),
                (16, 4.0),
                (24, 4.0),
                (32, 4.0),
                (48, 3.0),
                (56, 2.0),
                (64, 2.0),
                (80, 1.0),
            ],
            "hummingbird-like" => &[
                (8, 25.0),
                (32, 23.0),
                (16, 11.0),
                (64, 10.0),
                (128, 8.0),
                (256, 7.0),
                (512, 5.0),
                (1024, 4.0),
                (2048, 3.0),
                (4096, 2.0),
                (8192, 1.0),
                (16384, 1.0),
            ],
            "espresso-like" => &[
                (8, 10.0),
                (16, 22.0),
                (24, 18.0),
                (32, 14.0),
                (48, 10.0),
                (64, 8.0),
                (96, 6.0),
                (128, 5.0),
                (256, 4.0),
                (512, 2.0),
                (1024, 1.0),
            ],
            _ => return None,
        };
        Self::new(e.to_vec()).ok()
    }

    /// Preset name or path of a distribution file.
    pub fn load(source: &str) -> Result<Self, String> {
        if let Some(d) = Self::preset(source) {
            return Ok(d);
        }
        let text = std::fs::read_to_string(source)
            .map_err(|e| format!("{source:?} is neither a preset ({}) nor a readable file: {e}", PRESETS.join(", ")))?;
        Self::parse(&text).map_err(|e| format!("{source}: {e}"))
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn max_size(&self) -> usize {
        self.entries.iter().map(|e| e.0).max().unwrap_or(0)
    }

    /// Drops sizes above `max`.
    pub fn clamp_to(&self, max: usize) -> Result<Self, String> {
        Self::new(self.entries.iter().copied().filter(|e| e.0 <= max).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.entries[self.index.sample(rng)].0
    }
}
