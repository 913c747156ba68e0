//! Fixed-capacity replay memory of `(x, ô, y)` triples filled by reservoir
//! sampling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CocaError, Result};
use crate::ndmath::Rng;
use crate::net::ForwardTape;
use crate::streams::Image;

/// A stored sample with the raw logits the model produced when it first saw it.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub image: Image,
    pub logits: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    seen: usize,
    entries: Vec<BufferEntry>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            seen: 0,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Insertion attempts so far.
    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Reservoir step (Vitter's algorithm R): append while filling, then keep
    /// the new entry with probability B/(seen+1) in a uniform slot.
    /// Returns the slot written, if any.
    pub fn reservoir_insert(&mut self, entry: BufferEntry, rng: &mut Rng) -> Option<usize> {
        let slot = if self.entries.len() < self.capacity {
            self.entries.push(entry);
            Some(self.entries.len() - 1)
        } else if self.capacity > 0 {
            let j = rng.below(self.seen + 1);
            if j < self.capacity {
                self.entries[j] = entry;
                Some(j)
            } else {
                None
            }
        } else {
            None
        };
        self.seen += 1;
        slot
    }

    /// Indices of `m` uniformly drawn entries: without replacement when the
    /// buffer holds at least `m`, with replacement otherwise.
    pub fn sample_indices(&self, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let n = self.entries.len();
        if n == 0 {
            return Err(CocaError::EmptyBuffer);
        }
        if n < m {
            return Ok((0..m).map(|_| rng.below(n)).collect());
        }
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + rng.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(m);
        Ok(idx)
    }

    pub fn sample_replay(&self, m: usize, rng: &mut Rng) -> Result<Vec<&BufferEntry>> {
        Ok(self
            .sample_indices(m, rng)?
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }

    /// One JSON object per line: `{"label":..,"logits":[..],"image":[..],"height":..,"width":..}`.
    pub fn dump_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CocaError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, &EntryRecord::from(e))?;
            w.write_all(b"\n").map_err(|err| CocaError::io(path, err))?;
        }
        w.flush().map_err(|e| CocaError::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    label: usize,
    logits: Vec<f64>,
    height: usize,
    width: usize,
    image: Vec<f64>,
}

impl From<&BufferEntry> for EntryRecord {
    fn from(e: &BufferEntry) -> Self {
        Self {
            label: e.label,
            logits: e.logits.clone(),
            height: e.image.height,
            width: e.image.width,
            image: e.image.pixels.clone(),
        }
    }
}

/// Reads entries written by [`ReplayBuffer::dump_jsonl`].
pub fn read_buffer_dump(path: &Path) -> Result<Vec<BufferEntry>> {
    let file = File::open(path).map_err(|e| CocaError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CocaError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EntryRecord = serde_json::from_str(&line)?;
        out.push(BufferEntry {
            image: Image::new(r.height, r.width, r.image),
            logits: r.logits,
            label: r.label,
        });
    }
    Ok(out)
}

/// Raw class logits of sample `i` (pre-softmax), for storage as ô.
pub fn capture_logits(tape: &ForwardTape, i: usize) -> Result<Vec<f64>> {
    let logits = tape
        .logits
        .as_ref()
        .ok_or_else(|| CocaError::shape("tape with classifier logits", "no logits"))?;
    if i >= logits.rows() {
        return Err(CocaError::IndexOutOfRange {
            index: i,
            len: logits.rows(),
        });
    }
    Ok(logits.row(i).to_vec())
}
