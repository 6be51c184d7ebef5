//! Connected-component labeling for voxel masks.

use crate::error::{Error, Result};

/// Neighborhood definition for connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// 6-neighborhood: voxels sharing a face.
    Face,
    /// 18-neighborhood: faces and edges.
    Edge,
    /// 26-neighborhood: faces, edges, and corners.
    Vertex,
}

/// Default for component counting. Fluid retention and mucosal thickening
/// form visually contiguous regions even where slices touch only diagonally,
/// so the widest neighborhood is the default.
pub const DEFAULT_CONNECTIVITY: Connectivity = Connectivity::Vertex;

/// All 26 offsets, ordered so the first 6 are face neighbors and the first 18
/// are face plus edge neighbors.
const NEIGHBORS: [[i32; 3]; 26] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
    [-1, -1, 0],
    [-1, 1, 0],
    [1, -1, 0],
    [1, 1, 0],
    [-1, 0, -1],
    [-1, 0, 1],
    [1, 0, -1],
    [1, 0, 1],
    [0, -1, -1],
    [0, -1, 1],
    [0, 1, -1],
    [0, 1, 1],
    [-1, -1, -1],
    [-1, -1, 1],
    [-1, 1, -1],
    [-1, 1, 1],
    [1, -1, -1],
    [1, -1, 1],
    [1, 1, -1],
    [1, 1, 1],
];

impl Connectivity {
    pub fn neighbor_count(self) -> u32 {
        match self {
            Connectivity::Face => 6,
            Connectivity::Edge => 18,
            Connectivity::Vertex => 26,
        }
    }

    pub fn from_neighbor_count(n: u32) -> Result<Connectivity> {
        match n {
            6 => Ok(Connectivity::Face),
            18 => Ok(Connectivity::Edge),
            26 => Ok(Connectivity::Vertex),
            other => Err(Error::InvalidConnectivity(other)),
        }
    }

    fn offsets(self) -> &'static [[i32; 3]] {
        &NEIGHBORS[..self.neighbor_count() as usize]
    }
}

/// Count connected components among voxels selected by `foreground`.
pub fn count_components_where(
    foreground: impl Fn(usize) -> bool,
    dims: [usize; 3],
    connectivity: Connectivity,
) -> usize {
    let n = dims[0] * dims[1] * dims[2];
    let offsets = connectivity.offsets();
    let mut visited = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut components = 0;

    for seed in 0..n {
        if visited[seed] || !foreground(seed) {
            continue;
        }
        components += 1;
        visited[seed] = true;
        stack.push(seed);
        while let Some(idx) = stack.pop() {
            let i = (idx % dims[0]) as i32;
            let rest = idx / dims[0];
            let j = (rest % dims[1]) as i32;
            let k = (rest / dims[1]) as i32;
            for off in offsets {
                let ni = i + off[0];
                let nj = j + off[1];
                let nk = k + off[2];
                if ni < 0
                    || nj < 0
                    || nk < 0
                    || ni >= dims[0] as i32
                    || nj >= dims[1] as i32
                    || nk >= dims[2] as i32
                {
                    continue;
                }
                let nidx = ni as usize + dims[0] * (nj as usize + dims[1] * nk as usize);
                if !visited[nidx] && foreground(nidx) {
                    visited[nidx] = true;
                    stack.push(nidx);
                }
            }
        }
    }
    components
}

/// Count connected components of one label value.
pub fn count_components(
    labels: &[u8],
    dims: [usize; 3],
    code: u8,
    connectivity: Connectivity,
) -> usize {
    debug_assert_eq!(labels.len(), dims[0] * dims[1] * dims[2]);
    count_components_where(|i| labels[i] == code, dims, connectivity)
}
