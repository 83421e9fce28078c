//! Frame windows and the compute-once feature cache.
//!
//! A target frame `t` is processed together with its neighbours. Indices that
//! fall outside the sequence are clamped, which duplicates the first or last
//! available frame. During sequential inference every frame's backbone output
//! is computed once and reused by all windows that contain it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Placement of the target frame within its window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WindowLayout {
    /// `t-n ..= t+n`, target in the middle.
    #[default]
    Symmetric,
    /// `t-2n ..= t`, target last.
    PastOnly,
}

impl WindowLayout {
    pub fn target_index(self, n: usize) -> usize {
        match self {
            WindowLayout::Symmetric => n,
            WindowLayout::PastOnly => 2 * n,
        }
    }
}

impl fmt::Display for WindowLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowLayout::Symmetric => "symmetric",
            WindowLayout::PastOnly => "past_only",
        })
    }
}

impl FromStr for WindowLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "past_only" => Ok(Self::PastOnly),
            _ => Err(Error::Invalid(format!("unknown window layout '{}'", s))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowIndex {
    pub t: usize,
    pub n: usize,
    pub layout: WindowLayout,
    /// `2n + 1` clamped frame indices in window order.
    pub indices: Vec<usize>,
}

impl WindowIndex {
    pub fn target_position(&self) -> usize {
        self.layout.target_index(self.n)
    }
}

/// Symmetric window around `t` in a sequence of `len` frames.
pub fn window_indices(t: usize, n: usize, len: usize) -> Result<WindowIndex> {
    window_indices_with(WindowLayout::Symmetric, t, n, len)
}

pub fn window_indices_with(
    layout: WindowLayout,
    t: usize,
    n: usize,
    len: usize,
) -> Result<WindowIndex> {
    if len == 0 || t >= len {
        return Err(Error::Invalid(format!(
            "frame {} outside sequence of length {}",
            t, len
        )));
    }
    let start = t as isize - layout.target_index(n) as isize;
    let last = len as isize - 1;
    let indices = (0..2 * n + 1)
        .map(|k| (start + k as isize).clamp(0, last) as usize)
        .collect();
    Ok(WindowIndex {
        t,
        n,
        layout,
        indices,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub computes: u64,
    pub evictions: u64,
}

impl CacheStats {
    pub const CSV_HEADER: &'static str = "sequence_id,frames,backbone_calls,hits,evictions";

    pub fn write_csv_row<W: Write>(
        &self,
        mut w: W,
        sequence_id: usize,
        frames: usize,
    ) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{}",
            sequence_id, frames, self.computes, self.hits, self.evictions
        )?;
        Ok(())
    }
}

/// Per-stream store of backbone outputs keyed by frame index.
///
/// When full, the lowest resident frame index is evicted first. A disabled
/// cache stores nothing and recomputes on every request.
#[derive(Debug)]
pub struct FeatureCache {
    capacity: usize,
    enabled: bool,
    entries: BTreeMap<usize, Arc<Tensor>>,
    stats: CacheStats,
}

impl FeatureCache {
    /// `capacity` must cover a whole window (`2n + 1`) for compute-once behaviour.
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("cache capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            enabled: true,
            entries: BTreeMap::new(),
            stats: CacheStats::default(),
        })
    }

    pub fn for_window(n: usize) -> Self {
        Self::new(2 * n + 1).expect("positive capacity")
    }

    pub fn disabled() -> Self {
        Self {
            capacity: 0,
            enabled: false,
            entries: BTreeMap::new(),
            stats: CacheStats::default(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.entries.contains_key(&frame)
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.stats = CacheStats::default();
    }

    pub fn get_or_compute<F>(&mut self, frame: usize, backbone: F) -> Result<Arc<Tensor>>
    where
        F: FnOnce(usize) -> Result<Tensor>,
    {
        if let Some(map) = self.entries.get(&frame) {
            self.stats.hits += 1;
            return Ok(Arc::clone(map));
        }
        let map = Arc::new(backbone(frame)?);
        self.stats.computes += 1;
        if self.enabled {
            while self.entries.len() >= self.capacity {
                self.entries.pop_first();
                self.stats.evictions += 1;
            }
            self.entries.insert(frame, Arc::clone(&map));
        }
        Ok(map)
    }
}

/// Backbone maps for the window around `t`, in window order.
///
/// Clamped duplicates share one allocation when the cache is enabled.
pub fn assemble_window<F>(
    cache: &mut FeatureCache,
    window: &WindowIndex,
    mut backbone: F,
) -> Result<Vec<Arc<Tensor>>>
where
    F: FnMut(usize) -> Result<Tensor>,
{
    window
        .indices
        .iter()
        .map(|&i| cache.get_or_compute(i, &mut backbone))
        .collect()
}
