//! Heterogeneous coefficient fields defined per fine cell, with an optional
//! time-dependent contrast law that rescales the field so its max/min ratio
//! follows `c0 * exp(r * t)`.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::MeshHierarchy;
use crate::{Error, Result};

/// How the field evolves in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeLaw {
    Constant,
    /// Max/min contrast grows as `c0 * exp(rate * t)`; the rescale is affine,
    /// anchored at the field minimum, preserving the spatial pattern.
    Contrast { c0: f64, rate: f64 },
}

/// Per-fine-cell positive coefficient values (row-major, bottom row first).
#[derive(Clone, Debug)]
pub struct CoefficientField {
    values: Vec<f64>,
    pub time_law: TimeLaw,
}

impl CoefficientField {
    pub fn new(values: Vec<f64>, time_law: TimeLaw) -> Result<Self> {
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(Error::Load(format!(
                "coefficient value {v} at cell {k} is not positive and finite"
            )));
        }
        Ok(CoefficientField { values, time_law })
    }

    pub fn uniform(n_cells: usize, value: f64) -> Self {
        CoefficientField {
            values: vec![value; n_cells],
            time_law: TimeLaw::Constant,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contrast(&self) -> f64 {
        self.max() / self.min()
    }

    /// Evaluates the field at time `t`.
    ///
    /// The constant law returns the field unchanged. The contrast law
    /// rescales values to `min + (v - min) * s` with `s` chosen so the
    /// max/min ratio equals `c0 * exp(rate * t)`; the minimum and the
    /// spatial pattern are preserved.
    pub fn evaluate_at(&self, t: f64) -> Result<CoefficientField> {
        assert!(t >= 0.0, "time must be nonnegative");
        match self.time_law {
            TimeLaw::Constant => Ok(self.clone()),
            TimeLaw::Contrast { c0, rate } => {
                let min = self.min();
                let max = self.max();
                if max - min <= 0.0 {
                    return Err(Error::Numerics(
                        "contrast law undefined for a degenerate (constant) field".into(),
                    ));
                }
                let target = c0 * (rate * t).exp();
                let scale = min * (target - 1.0) / (max - min);
                let values = self
                    .values
                    .iter()
                    .map(|v| min + (v - min) * scale)
                    .collect();
                Ok(CoefficientField {
                    values,
                    time_law: self.time_law,
                })
            }
        }
    }
}

/// Loads a field from a whitespace-separated text matrix of
/// `ny_fine` rows by `nx_fine` columns, top row first (image convention).
pub fn load_field(path: &Path, hierarchy: &MeshHierarchy) -> Result<CoefficientField> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    parse_field(&text, hierarchy)
}

pub fn parse_field(text: &str, hierarchy: &MeshHierarchy) -> Result<CoefficientField> {
    let (nx, ny) = (hierarchy.nx_fine, hierarchy.ny_fine);
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != ny {
        return Err(Error::Load(format!(
            "field has {} rows, expected ny_fine = {ny}",
            rows.len()
        )));
    }
    let mut values = vec![0.0; nx * ny];
    for (r, line) in rows.iter().enumerate() {
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != nx {
            return Err(Error::Load(format!(
                "field row {} has {} columns, expected nx_fine = {nx}",
                r + 1,
                entries.len()
            )));
        }
        // top row of the file is the top row of the grid
        let j = ny - 1 - r;
        for (c, ent) in entries.iter().enumerate() {
            let v: f64 = ent.parse().map_err(|_| {
                Error::Load(format!("unparseable entry at row {}, col {}", r + 1, c + 1))
            })?;
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Load(format!(
                    "non-positive entry {v} at row {}, col {}",
                    r + 1,
                    c + 1
                )));
            }
            values[j * nx + c] = v;
        }
    }
    CoefficientField::new(values, TimeLaw::Constant)
}

/// Writes a field in the same text-matrix format that `load_field` reads.
pub fn write_field(field: &CoefficientField, hierarchy: &MeshHierarchy) -> String {
    let (nx, ny) = (hierarchy.nx_fine, hierarchy.ny_fine);
    let mut out = String::new();
    for r in 0..ny {
        let j = ny - 1 - r;
        let row: Vec<String> = (0..nx)
            .map(|i| format!("{:.17e}", field.values()[j * nx + i]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parameters for the synthetic channelized field generator.
#[derive(Clone, Debug)]
pub struct FieldGenSpec {
    pub background: f64,
    pub contrast: f64,
    pub seed: u64,
    pub num_channels: usize,
}

/// Generates a synthetic high-contrast field: horizontal/vertical stripes
/// of 1-3 cells thickness plus a few rectangular inclusions, all at
/// `background * contrast`, from a seeded RNG.
pub fn generate_field(spec: &FieldGenSpec, hierarchy: &MeshHierarchy) -> CoefficientField {
    let (nx, ny) = (hierarchy.nx_fine, hierarchy.ny_fine);
    let mut values = vec![spec.background; nx * ny];
    let high = spec.background * spec.contrast;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for _ in 0..spec.num_channels {
        let horizontal = rng.random_bool(0.5);
        let thickness = 1 + rng.random_range(0..3usize);
        if horizontal {
            let j0 = rng.random_range(0..ny.saturating_sub(thickness).max(1));
            let span = nx / 2 + rng.random_range(0..nx / 2 + 1);
            let i0 = rng.random_range(0..(nx - span).max(1));
            for j in j0..(j0 + thickness).min(ny) {
                for i in i0..(i0 + span).min(nx) {
                    values[j * nx + i] = high;
                }
            }
        } else {
            let i0 = rng.random_range(0..nx.saturating_sub(thickness).max(1));
            let span = ny / 2 + rng.random_range(0..ny / 2 + 1);
            let j0 = rng.random_range(0..(ny - span).max(1));
            for j in j0..(j0 + span).min(ny) {
                for i in i0..(i0 + thickness).min(nx) {
                    values[j * nx + i] = high;
                }
            }
        }
    }
    // a few compact inclusions
    for _ in 0..(spec.num_channels / 2).max(1) {
        let w = 1 + rng.random_range(0..(nx / 8).max(1));
        let h = 1 + rng.random_range(0..(ny / 8).max(1));
        let i0 = rng.random_range(0..(nx - w).max(1));
        let j0 = rng.random_range(0..(ny - h).max(1));
        for j in j0..(j0 + h).min(ny) {
            for i in i0..(i0 + w).min(nx) {
                values[j * nx + i] = high;
            }
        }
    }

    CoefficientField {
        values,
        time_law: TimeLaw::Constant,
    }
}
