//! File formats: CSV emission (comma-separated, header row, floats at 17
//! significant digits), the binary basis cache, and run manifests.

use std::io::Read;
use std::path::Path;

use crate::gmsfem::{BasisCatalog, RegionBasisSet};
use crate::linalg::LocalVector;
use crate::mesh::MeshHierarchy;
use crate::sampler::SampleChain;
use crate::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a CSV file with a header row; cells are preformatted strings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a `ny x nx` grid field as CSV (top row first, matching the field
/// file convention).
pub fn write_grid_csv(path: &Path, values: &[f64], nx: usize, ny: usize) -> Result<()> {
    assert_eq!(values.len(), nx * ny, "grid size mismatch");
    let header: Vec<String> = (0..nx).map(|i| format!("c{i}")).collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::with_capacity(ny);
    for r in 0..ny {
        let j = ny - 1 - r;
        rows.push((0..nx).map(|i| fmt_float(values[j * nx + i])).collect());
    }
    write_csv(path, &header_refs, &rows)
}

/// Writes per-record chain data: one row per record with the active
/// candidate ids joined by semicolons.
pub fn write_chain_csv(
    path: &Path,
    chains: &[SampleChain],
    labels: &[(usize, usize)],
) -> Result<()> {
    let mut rows = Vec::new();
    for chain in chains {
        for rec in &chain.records {
            let active: Vec<String> = rec
                .selection
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, on)| **on)
                .map(|(c, _)| {
                    labels
                        .get(c)
                        .map(|(r, k)| format!("{r}:{k}"))
                        .unwrap_or_else(|| c.to_string())
                })
                .collect();
            rows.push(vec![
                chain.interval.to_string(),
                rec.iteration.to_string(),
                fmt_float(rec.residual_norm),
                rec.error.map(fmt_float).unwrap_or_default(),
                rec.error_snapshot.map(fmt_float).unwrap_or_default(),
                rec.n_active_columns.to_string(),
                active.join(";"),
            ]);
        }
    }
    write_csv(
        path,
        &[
            "interval",
            "iteration",
            "residual_norm",
            "error",
            "error_snapshot",
            "n_active",
            "active_candidates",
        ],
        &rows,
    )
}

/// Writes the run manifest: sorted resolved `key = value` lines.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut sorted: Vec<&(String, String)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::new();
    for (k, v) in sorted {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---- binary basis cache ----

const CACHE_MAGIC: &[u8; 8] = b"MSBASIS\0";
const CACHE_VERSION: u32 = 1;

/// Persists a basis catalog: header `{magic, version, region count}`, then
/// per region `{id, dof indices, column count, eigenvalues, column data}`
/// as little-endian 8-byte values. Columns hold the permanent, candidate,
/// and snapshot vectors in that order; eigenvalues are NaN for snapshot
/// columns (they carry none), which also encodes the offline/snapshot split.
pub fn save_catalog(path: &Path, catalog: &BasisCatalog, n_perm: usize) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(catalog.regions.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(n_perm as u64).to_le_bytes());
    for set in &catalog.regions {
        // union dof list of all columns in the region
        let mut dofs: Vec<usize> = Vec::new();
        let all = set
            .permanent
            .iter()
            .chain(&set.candidates)
            .chain(&set.snapshots);
        for col in all.clone() {
            dofs.extend_from_slice(&col.idx);
        }
        dofs.sort_unstable();
        dofs.dedup();

        let columns: Vec<&LocalVector> = all.collect();
        buf.extend_from_slice(&(set.region as u64).to_le_bytes());
        buf.extend_from_slice(&(dofs.len() as u64).to_le_bytes());
        for d in &dofs {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(columns.len() as u64).to_le_bytes());
        for k in 0..columns.len() {
            let lam = set.eigenvalues.get(k).copied().unwrap_or(f64::NAN);
            buf.extend_from_slice(&lam.to_le_bytes());
        }
        for col in columns {
            let mut dense = vec![0.0f64; dofs.len()];
            for (i, v) in col.idx.iter().zip(&col.val) {
                dense[dofs.binary_search(i).unwrap()] = *v;
            }
            for v in dense {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reloads a catalog written by [`save_catalog`]. The candidate count per
/// region is the eigenvalue count minus the stored permanent count;
/// remaining columns are snapshots.
pub fn load_catalog(path: &Path) -> Result<(BasisCatalog, usize)> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("cannot open basis cache {}: {e}", path.display())))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    let magic = cur.take(8)?;
    if magic != CACHE_MAGIC {
        return Err(Error::Load("basis cache: bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Load(format!(
            "basis cache: unsupported version {version}"
        )));
    }
    let n_regions = cur.u64()? as usize;
    let n_perm = cur.u64()? as usize;
    let mut regions = Vec::with_capacity(n_regions);
    for _ in 0..n_regions {
        let region = cur.u64()? as usize;
        let ndofs = cur.u64()? as usize;
        let mut dofs = Vec::with_capacity(ndofs);
        for _ in 0..ndofs {
            dofs.push(cur.u64()? as usize);
        }
        let ncols = cur.u64()? as usize;
        let mut eigenvalues = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            eigenvalues.push(cur.f64()?);
        }
        let n_offline = eigenvalues.iter().take_while(|v| !v.is_nan()).count();
        let mut columns = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for d in &dofs {
                let v = cur.f64()?;
                if v != 0.0 {
                    idx.push(*d);
                    val.push(v);
                }
            }
            columns.push(LocalVector::new(idx, val));
        }
        let n_p = n_perm.min(n_offline);
        let snapshots = columns.split_off(n_offline);
        let candidates = columns.split_off(n_p);
        regions.push(RegionBasisSet {
            region,
            eigenvalues: eigenvalues[..n_offline].to_vec(),
            permanent: columns,
            candidates,
            snapshots,
        });
    }
    Ok((
        BasisCatalog {
            regions,
            pou: None,
            solver_indexed: false,
        },
        n_perm,
    ))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Load("basis cache: truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---- field layout helpers for visualization ----

/// Expands interior CG dofs to the full node grid as `(ny+1) x (nx+1)`
/// values (zero on the boundary).
pub fn cg_field_to_grid(hierarchy: &MeshHierarchy, interior: &[f64]) -> (Vec<f64>, usize, usize) {
    let space = crate::fem::cg::CgSpace::new(hierarchy);
    let full = space.expand(interior, hierarchy);
    (full, hierarchy.nx_fine + 1, hierarchy.ny_fine + 1)
}

/// Cell-center x-velocity of a mixed interior-edge dof vector as an
/// `ny x nx` grid (average of the left/right edge fluxes per cell).
pub fn mixed_velocity_x_grid(
    hierarchy: &MeshHierarchy,
    velocity: &[f64],
) -> (Vec<f64>, usize, usize) {
    let space = crate::fem::mixed::MixedSpace::new(hierarchy);
    let full = space.expand(velocity, hierarchy);
    let mut grid = vec![0.0; hierarchy.n_fine_cells()];
    for cell in 0..hierarchy.n_fine_cells() {
        let [left, right, _, _] = hierarchy.fine_cell_edges(cell);
        grid[cell] = 0.5 * (full[left] + full[right]);
    }
    (grid, hierarchy.nx_fine, hierarchy.ny_fine)
}

/// Cell averages of a broken wave field as an `ny x nx` grid.
pub fn broken_to_grid(hierarchy: &MeshHierarchy, broken: &[f64]) -> (Vec<f64>, usize, usize) {
    (
        crate::fem::ipdg::cell_averages(hierarchy, broken),
        hierarchy.nx_fine,
        hierarchy.ny_fine,
    )
}
