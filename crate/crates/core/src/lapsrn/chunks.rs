//! Overlapping core + halo tiling of a volume and its inverse.

use ndarray::{s, Array3};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Cores of `core_size` tile the volume (the last core along an axis may be
/// shorter); every chunk is its core grown by `halo`, clipped at the borders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChunkGrid {
    pub shape: [usize; 3],
    pub core_size: usize,
    pub halo: usize,
}

/// One tile: the voxel range it covers and the core it owns, in source coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkExtent {
    pub start: [usize; 3],
    pub end: [usize; 3],
    pub core_start: [usize; 3],
    pub core_end: [usize; 3],
}

impl ChunkExtent {
    pub fn shape(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.end[a] - self.start[a])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub extent: ChunkExtent,
    pub data: Volume,
}

impl ChunkGrid {
    pub fn new(shape: [usize; 3], core_size: usize, halo: usize) -> Result<Self> {
        if core_size == 0 {
            return Err(Error::InvalidArgument("chunk core size must be positive".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("cannot tile {shape:?}")));
        }
        Ok(Self { shape, core_size, halo })
    }

    fn axis_cores(&self, axis: usize) -> Vec<(usize, usize)> {
        let n = self.shape[axis];
        (0..n).step_by(self.core_size).map(|s| (s, (s + self.core_size).min(n))).collect()
    }

    /// All tiles in z-major order.
    pub fn extents(&self) -> Vec<ChunkExtent> {
        let [cz, cy, cx] = [0, 1, 2].map(|a| self.axis_cores(a));
        let mut out = Vec::with_capacity(cz.len() * cy.len() * cx.len());
        for &z in &cz {
            for &y in &cy {
                for &x in &cx {
                    let core = [z, y, x];
                    let core_start = core.map(|c| c.0);
                    let core_end = core.map(|c| c.1);
                    let start = core_start.map(|c| c.saturating_sub(self.halo));
                    let end = [0, 1, 2].map(|a| (core_end[a] + self.halo).min(self.shape[a]));
                    out.push(ChunkExtent { start, end, core_start, core_end });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        (0..3).map(|a| self.shape[a].div_ceil(self.core_size)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn chunk_volume(v: &Volume, grid: &ChunkGrid) -> Result<Vec<Chunk>> {
    if v.shape() != grid.shape {
        return Err(Error::Shape(format!("volume {:?} vs grid {:?}", v.shape(), grid.shape)));
    }
    grid.extents()
        .into_iter()
        .map(|e| {
            let data = v.data().slice(s![e.start[0]..e.end[0], e.start[1]..e.end[1], e.start[2]..e.end[2]]).to_owned();
            Ok(Chunk { extent: e, data: v.with_data(data, v.domain())? })
        })
        .collect()
}

/// Reassembles chunks whose data were scaled by `scale` per axis (1 for plain
/// round trips). Each output voxel comes from the chunk owning it as core;
/// halo voxels are dropped.
pub fn assemble_chunks(chunks: &[Chunk], grid: &ChunkGrid, scale: usize) -> Result<Volume> {
    let expected = grid.extents();
    if chunks.len() != expected.len() {
        return Err(Error::InvalidArgument(format!("{} chunks for a grid of {}", chunks.len(), expected.len())));
    }
    let mut seen = vec![false; expected.len()];
    for c in chunks {
        let i = expected
            .iter()
            .position(|e| *e == c.extent)
            .ok_or_else(|| Error::InvalidArgument(format!("chunk {:?} is not on the grid", c.extent)))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("core at {:?} supplied twice", c.extent.core_start)));
        }
        let want = c.extent.shape().map(|d| d * scale);
        if c.data.shape() != want {
            return Err(Error::Shape(format!("chunk data {:?}, expected {want:?}", c.data.shape())));
        }
    }
    let first = &chunks[0].data;
    let mut out = Array3::<f32>::zeros(grid.shape.map(|d| d * scale));
    for c in chunks {
        let e = c.extent;
        let lo = [0, 1, 2].map(|a| (e.core_start[a] - e.start[a]) * scale);
        let len = [0, 1, 2].map(|a| (e.core_end[a] - e.core_start[a]) * scale);
        let src = c.data.data().slice(s![lo[0]..lo[0] + len[0], lo[1]..lo[1] + len[1], lo[2]..lo[2] + len[2]]);
        let o = e.core_start.map(|v| v * scale);
        out.slice_mut(s![o[0]..o[0] + len[0], o[1]..o[1] + len[1], o[2]..o[2] + len[2]]).assign(&src);
    }
    first.with_data(out, first.domain())
}
