//! Nested Cartesian coarse/fine grid hierarchy and region topology.
//!
//! The domain `[0, Lx] x [0, Ly]` carries a fine grid of `nx_fine x ny_fine`
//! cells nested exactly inside a coarse grid of `nx_coarse x ny_coarse`
//! blocks. Indexing is row-major from the lower-left corner for nodes, cells,
//! and edges. Edge numbering lists vertical edges (normal +x) first, then
//! horizontal edges (normal +y).

use crate::{Error, Result};

/// A set of coarse blocks (sorted, deduplicated block ids).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    blocks: Vec<usize>,
}

impl Region {
    pub fn new(mut blocks: Vec<usize>) -> Self {
        blocks.sort_unstable();
        blocks.dedup();
        Region { blocks }
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, block: usize) -> bool {
        self.blocks.binary_search(&block).is_ok()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.blocks.iter().all(|b| other.contains(*b))
    }
}

/// Nested coarse/fine Cartesian grid hierarchy with region topology.
///
/// Immutable after construction; safe to share read-only across workers.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    pub nx_fine: usize,
    pub ny_fine: usize,
    pub nx_coarse: usize,
    pub ny_coarse: usize,
    pub lx: f64,
    pub ly: f64,
    /// Fine cells per coarse block in x.
    pub fx: usize,
    /// Fine cells per coarse block in y.
    pub fy: usize,
    /// Fine cell extents.
    pub hx: f64,
    pub hy: f64,
    /// Per coarse block: fine cell ids it contains.
    block_cells: Vec<Vec<usize>>,
    /// Per coarse node: the neighborhood `omega_i` (blocks sharing the node).
    node_neighborhoods: Vec<Region>,
    /// Per coarse edge: the neighborhood `omega_E` (the <=2 blocks sharing it).
    edge_neighborhoods: Vec<Region>,
}

/// Builds the hierarchy. Fine counts must divide exactly by coarse counts.
pub fn build_hierarchy(
    nx_fine: usize,
    ny_fine: usize,
    nx_coarse: usize,
    ny_coarse: usize,
    lx: f64,
    ly: f64,
) -> Result<MeshHierarchy> {
    if nx_fine == 0 || ny_fine == 0 || nx_coarse == 0 || ny_coarse == 0 {
        return Err(Error::config("grid cell counts must be >= 1"));
    }
    if lx <= 0.0 || ly <= 0.0 {
        return Err(Error::config("domain extents must be positive"));
    }
    if nx_fine % nx_coarse != 0 {
        return Err(Error::config(format!(
            "fine count nx={nx_fine} not divisible by coarse count nx={nx_coarse}"
        )));
    }
    if ny_fine % ny_coarse != 0 {
        return Err(Error::config(format!(
            "fine count ny={ny_fine} not divisible by coarse count ny={ny_coarse}"
        )));
    }

    let fx = nx_fine / nx_coarse;
    let fy = ny_fine / ny_coarse;
    let hx = lx / nx_fine as f64;
    let hy = ly / ny_fine as f64;

    let n_blocks = nx_coarse * ny_coarse;
    let mut block_cells = Vec::with_capacity(n_blocks);
    for bj in 0..ny_coarse {
        for bi in 0..nx_coarse {
            let mut cells = Vec::with_capacity(fx * fy);
            for j in bj * fy..(bj + 1) * fy {
                for i in bi * fx..(bi + 1) * fx {
                    cells.push(j * nx_fine + i);
                }
            }
            block_cells.push(cells);
        }
    }

    let mut node_neighborhoods = Vec::with_capacity((nx_coarse + 1) * (ny_coarse + 1));
    for cj in 0..=ny_coarse {
        for ci in 0..=nx_coarse {
            let mut blocks = Vec::with_capacity(4);
            for bj in cj.saturating_sub(1)..=cj.min(ny_coarse - 1) {
                for bi in ci.saturating_sub(1)..=ci.min(nx_coarse - 1) {
                    if bj < cj + 1 && bi < ci + 1 {
                        blocks.push(bj * nx_coarse + bi);
                    }
                }
            }
            node_neighborhoods.push(Region::new(blocks));
        }
    }

    // vertical coarse edges, then horizontal
    let mut edge_neighborhoods = Vec::new();
    for cj in 0..ny_coarse {
        for ci in 0..=nx_coarse {
            let mut blocks = Vec::with_capacity(2);
            if ci > 0 {
                blocks.push(cj * nx_coarse + (ci - 1));
            }
            if ci < nx_coarse {
                blocks.push(cj * nx_coarse + ci);
            }
            edge_neighborhoods.push(Region::new(blocks));
        }
    }
    for cj in 0..=ny_coarse {
        for ci in 0..nx_coarse {
            let mut blocks = Vec::with_capacity(2);
            if cj > 0 {
                blocks.push((cj - 1) * nx_coarse + ci);
            }
            if cj < ny_coarse {
                blocks.push(cj * nx_coarse + ci);
            }
            edge_neighborhoods.push(Region::new(blocks));
        }
    }

    Ok(MeshHierarchy {
        nx_fine,
        ny_fine,
        nx_coarse,
        ny_coarse,
        lx,
        ly,
        fx,
        fy,
        hx,
        hy,
        block_cells,
        node_neighborhoods,
        edge_neighborhoods,
    })
}

impl MeshHierarchy {
    // ---- counts ----

    pub fn n_fine_nodes(&self) -> usize {
        (self.nx_fine + 1) * (self.ny_fine + 1)
    }

    pub fn n_fine_cells(&self) -> usize {
        self.nx_fine * self.ny_fine
    }

    /// Fine edges: vertical `(nx+1)*ny` first, then horizontal `nx*(ny+1)`.
    pub fn n_fine_edges(&self) -> usize {
        (self.nx_fine + 1) * self.ny_fine + self.nx_fine * (self.ny_fine + 1)
    }

    pub fn n_coarse_nodes(&self) -> usize {
        (self.nx_coarse + 1) * (self.ny_coarse + 1)
    }

    pub fn n_coarse_blocks(&self) -> usize {
        self.nx_coarse * self.ny_coarse
    }

    pub fn n_coarse_edges(&self) -> usize {
        (self.nx_coarse + 1) * self.ny_coarse + self.nx_coarse * (self.ny_coarse + 1)
    }

    // ---- fine indexing ----

    pub fn fine_node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx_fine + 1) + i
    }

    pub fn fine_node_coords(&self, node: usize) -> (f64, f64) {
        let i = node % (self.nx_fine + 1);
        let j = node / (self.nx_fine + 1);
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn fine_cell_id(&self, i: usize, j: usize) -> usize {
        j * self.nx_fine + i
    }

    pub fn fine_cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx_fine, cell / self.nx_fine)
    }

    /// Corner nodes of a fine cell, counter-clockwise from lower-left.
    pub fn fine_cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.fine_cell_ij(cell);
        [
            self.fine_node_id(i, j),
            self.fine_node_id(i + 1, j),
            self.fine_node_id(i + 1, j + 1),
            self.fine_node_id(i, j + 1),
        ]
    }

    /// True if the fine node lies on the outer boundary of the domain.
    pub fn fine_node_on_boundary(&self, node: usize) -> bool {
        let i = node % (self.nx_fine + 1);
        let j = node / (self.nx_fine + 1);
        i == 0 || j == 0 || i == self.nx_fine || j == self.ny_fine
    }

    /// Vertical fine edge at column `i in 0..=nx`, row `j in 0..ny`.
    pub fn fine_vedge_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx_fine + 1) + i
    }

    /// Horizontal fine edge at column `i in 0..nx`, row `j in 0..=ny`.
    pub fn fine_hedge_id(&self, i: usize, j: usize) -> usize {
        (self.nx_fine + 1) * self.ny_fine + j * self.nx_fine + i
    }

    pub fn fine_edge_is_vertical(&self, edge: usize) -> bool {
        edge < (self.nx_fine + 1) * self.ny_fine
    }

    /// Length of a fine edge.
    pub fn fine_edge_len(&self, edge: usize) -> f64 {
        if self.fine_edge_is_vertical(edge) {
            self.hy
        } else {
            self.hx
        }
    }

    /// Edges of a fine cell: `[left, right, bottom, top]`.
    pub fn fine_cell_edges(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.fine_cell_ij(cell);
        [
            self.fine_vedge_id(i, j),
            self.fine_vedge_id(i + 1, j),
            self.fine_hedge_id(i, j),
            self.fine_hedge_id(i, j + 1),
        ]
    }

    /// True if the fine edge lies on the outer boundary of the domain.
    pub fn fine_edge_on_boundary(&self, edge: usize) -> bool {
        if self.fine_edge_is_vertical(edge) {
            let i = edge % (self.nx_fine + 1);
            i == 0 || i == self.nx_fine
        } else {
            let h = edge - (self.nx_fine + 1) * self.ny_fine;
            let j = h / self.nx_fine;
            j == 0 || j == self.ny_fine
        }
    }

    // ---- coarse indexing ----

    pub fn coarse_node_id(&self, ci: usize, cj: usize) -> usize {
        cj * (self.nx_coarse + 1) + ci
    }

    pub fn coarse_node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx_coarse + 1), node / (self.nx_coarse + 1))
    }

    pub fn coarse_block_id(&self, bi: usize, bj: usize) -> usize {
        bj * self.nx_coarse + bi
    }

    pub fn coarse_block_ij(&self, block: usize) -> (usize, usize) {
        (block % self.nx_coarse, block / self.nx_coarse)
    }

    /// Fine node id of a coarse node.
    pub fn coarse_node_fine_node(&self, cnode: usize) -> usize {
        let (ci, cj) = self.coarse_node_ij(cnode);
        self.fine_node_id(ci * self.fx, cj * self.fy)
    }

    pub fn coarse_edge_is_vertical(&self, edge: usize) -> bool {
        edge < (self.nx_coarse + 1) * self.ny_coarse
    }

    /// True if the coarse edge lies on the outer boundary of the domain.
    pub fn coarse_edge_on_boundary(&self, edge: usize) -> bool {
        if self.coarse_edge_is_vertical(edge) {
            let ci = edge % (self.nx_coarse + 1);
            ci == 0 || ci == self.nx_coarse
        } else {
            let h = edge - (self.nx_coarse + 1) * self.ny_coarse;
            let cj = h / self.nx_coarse;
            cj == 0 || cj == self.ny_coarse
        }
    }

    /// Fine edge ids lying on a coarse edge, in ascending transverse order.
    pub fn coarse_edge_fine_edges(&self, edge: usize) -> Vec<usize> {
        if self.coarse_edge_is_vertical(edge) {
            let ci = edge % (self.nx_coarse + 1);
            let cj = edge / (self.nx_coarse + 1);
            (cj * self.fy..(cj + 1) * self.fy)
                .map(|j| self.fine_vedge_id(ci * self.fx, j))
                .collect()
        } else {
            let h = edge - (self.nx_coarse + 1) * self.ny_coarse;
            let ci = h % self.nx_coarse;
            let cj = h / self.nx_coarse;
            (ci * self.fx..(ci + 1) * self.fx)
                .map(|i| self.fine_hedge_id(i, cj * self.fy))
                .collect()
        }
    }

    // ---- regions ----

    pub fn block_cells(&self, block: usize) -> &[usize] {
        &self.block_cells[block]
    }

    /// Coarse neighborhood `omega_i` of a coarse node.
    pub fn node_neighborhood(&self, cnode: usize) -> &Region {
        &self.node_neighborhoods[cnode]
    }

    /// Coarse neighborhood `omega_E` of a coarse edge.
    pub fn edge_neighborhood(&self, edge: usize) -> &Region {
        &self.edge_neighborhoods[edge]
    }

    /// Extends a region by `layers` block-adjacency steps (8-neighbor
    /// adjacency, diagonals included), clipped to the domain.
    pub fn oversample(&self, region: &Region, layers: usize) -> Region {
        assert!(!region.is_empty(), "cannot oversample an empty region");
        let mut current: Vec<bool> = vec![false; self.n_coarse_blocks()];
        for b in region.blocks() {
            current[*b] = true;
        }
        for _ in 0..layers {
            let mut next = current.clone();
            for b in 0..current.len() {
                if !current[b] {
                    continue;
                }
                let (bi, bj) = self.coarse_block_ij(b);
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let ni = bi as i64 + di;
                        let nj = bj as i64 + dj;
                        if ni >= 0
                            && nj >= 0
                            && (ni as usize) < self.nx_coarse
                            && (nj as usize) < self.ny_coarse
                        {
                            next[nj as usize * self.nx_coarse + ni as usize] = true;
                        }
                    }
                }
            }
            current = next;
        }
        Region::new(
            current
                .iter()
                .enumerate()
                .filter_map(|(b, &on)| on.then_some(b))
                .collect(),
        )
    }

    /// All fine cells of a region, ascending.
    pub fn region_cells(&self, region: &Region) -> Vec<usize> {
        let mut cells: Vec<usize> = region
            .blocks()
            .iter()
            .flat_map(|b| self.block_cells[*b].iter().copied())
            .collect();
        cells.sort_unstable();
        cells
    }

    /// All fine nodes touching a region (corners of its cells), ascending.
    pub fn region_nodes(&self, region: &Region) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .region_cells(region)
            .iter()
            .flat_map(|c| self.fine_cell_nodes(*c))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Splits region nodes into (interior, boundary). A node is interior iff
    /// all four surrounding fine cells exist and belong to the region; nodes
    /// on the domain boundary are never interior.
    pub fn region_nodes_split(&self, region: &Region) -> (Vec<usize>, Vec<usize>) {
        let cells = self.region_cells(region);
        let mut in_region = vec![false; self.n_fine_cells()];
        for c in &cells {
            in_region[*c] = true;
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for node in self.region_nodes(region) {
            let i = node % (self.nx_fine + 1);
            let j = node / (self.nx_fine + 1);
            let mut is_interior = i > 0 && j > 0 && i < self.nx_fine && j < self.ny_fine;
            if is_interior {
                for (ci, cj) in [(i - 1, j - 1), (i, j - 1), (i - 1, j), (i, j)] {
                    if !in_region[self.fine_cell_id(ci, cj)] {
                        is_interior = false;
                        break;
                    }
                }
            }
            if is_interior {
                interior.push(node);
            } else {
                boundary.push(node);
            }
        }
        (interior, boundary)
    }

    /// Fine edges interior to a region: both adjacent cells in the region
    /// and the edge not on the domain boundary.
    pub fn region_interior_edges(&self, region: &Region) -> Vec<usize> {
        let cells = self.region_cells(region);
        let mut in_region = vec![false; self.n_fine_cells()];
        for c in &cells {
            in_region[*c] = true;
        }
        let mut edges = Vec::new();
        for c in &cells {
            for e in self.fine_cell_edges(*c) {
                if self.fine_edge_on_boundary(e) {
                    continue;
                }
                let (ca, cb) = self.fine_edge_cells(e);
                let ok = match (ca, cb) {
                    (Some(a), Some(b)) => in_region[a] && in_region[b],
                    _ => false,
                };
                if ok {
                    edges.push(e);
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// The two fine cells adjacent to a fine edge (`None` outside the domain).
    /// Vertical edges return (left, right); horizontal return (below, above).
    pub fn fine_edge_cells(&self, edge: usize) -> (Option<usize>, Option<usize>) {
        if self.fine_edge_is_vertical(edge) {
            let i = edge % (self.nx_fine + 1);
            let j = edge / (self.nx_fine + 1);
            let left = (i > 0).then(|| self.fine_cell_id(i - 1, j));
            let right = (i < self.nx_fine).then(|| self.fine_cell_id(i, j));
            (left, right)
        } else {
            let h = edge - (self.nx_fine + 1) * self.ny_fine;
            let i = h % self.nx_fine;
            let j = h / self.nx_fine;
            let below = (j > 0).then(|| self.fine_cell_id(i, j - 1));
            let above = (j < self.ny_fine).then(|| self.fine_cell_id(i, j))
                .filter(|_| j < self.ny_fine);
            (below, above)
        }
    }
}
