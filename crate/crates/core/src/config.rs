//! Run configuration: a flat `key = value` text format with dotted section
//! keys, environment-variable overrides, and defaults that are echoed into
//! the run manifest so outputs reproduce bit-exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::bayes::PosteriorVariant;
use crate::coeff::{generate_field, load_field, CoefficientField, FieldGenSpec, TimeLaw};
use crate::fem::FormulationTag;
use crate::gmsfem::BasisParams;
use crate::march::{InitialSpec, Problem, RegionMode, RunPlan, SamplerMethod, SourceSpec};
use crate::mesh::build_hierarchy;
use crate::{Error, Result};

/// Environment override prefix: `grid.fine` reads `BMFEM_GRID_FINE`.
pub const ENV_PREFIX: &str = "BMFEM_";

/// All recognized keys with their defaults (empty string = unset optional).
const KEY_DEFAULTS: &[(&str, &str)] = &[
    ("formulation", "cg"),
    ("grid.fine", "50x50"),
    ("grid.coarse", "5x5"),
    ("grid.lx", "1.0"),
    ("grid.ly", "1.0"),
    ("field.path", ""),
    ("field.background", "1.0"),
    ("field.contrast", "1000.0"),
    ("field.seed", "7"),
    ("field.num_channels", "5"),
    ("field.law", "constant"),
    ("field.contrast_rate", "250.0"),
    ("problem.source", "constant"),
    ("problem.source_amplitude", "1.0"),
    ("problem.source_cx", "0.3"),
    ("problem.source_cy", "0.3"),
    ("problem.source_width", "0.15"),
    ("problem.initial", "zero"),
    ("problem.initial_cx", "0.5"),
    ("problem.initial_cy", "0.5"),
    ("problem.initial_width", "0.2"),
    ("problem.initial_amplitude", "1.0"),
    ("time.t_end", "0.02"),
    ("time.intervals", "2"),
    ("time.substeps", "1"),
    ("time.steps_per_interval", "10"),
    ("time.wave_dt", "auto"),
    ("basis.n_perm", "2"),
    ("basis.n_candidates", "4"),
    ("basis.buffer", "4"),
    ("basis.oversample_layers", "1"),
    ("basis.candidates_from_snapshots", "false"),
    ("basis.cache", ""),
    ("bayes.sigma_l", "1e-3"),
    ("bayes.sigma_d", "1e-2"),
    ("bayes.n_regions", "4"),
    ("bayes.n_basis", "2"),
    ("bayes.region_mode", "top-fraction"),
    ("bayes.top_fraction", "0.3"),
    ("bayes.posterior", "auto"),
    ("sampler.method", "gibbs"),
    ("sampler.n_samples", "20"),
    ("sampler.n_sweeps", "30"),
    ("sampler.burn_in", "0.25"),
    ("sampler.seed", "0"),
    ("sampler.threads", "1"),
    ("fem.gamma", "10.0"),
    ("output.dir", "out"),
    ("output.oracle", "true"),
    ("output.snapshot_ref", "false"),
];

/// A resolved configuration: every known key has a value.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// All defaults, no file.
    pub fn defaults() -> Self {
        RunConfig {
            values: KEY_DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Parses a config file; unknown keys, bad syntax, and type errors are
    /// reported with their line numbers. Environment overrides
    /// (`BMFEM_<KEY>` with dots as underscores) apply afterwards.
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::defaults();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !cfg.values.contains_key(key) {
                return Err(Error::config(format!(
                    "line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            cfg.values.insert(key.to_string(), value.to_string());
        }
        cfg.apply_env_overrides();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_env_overrides(&mut self) {
        let keys: Vec<String> = self.values.keys().cloned().collect();
        for key in keys {
            let env_key = format!(
                "{ENV_PREFIX}{}",
                key.replace('.', "_").to_ascii_uppercase()
            );
            if let Ok(v) = std::env::var(&env_key) {
                self.values.insert(key, v);
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    /// Sorted resolved entries for the manifest.
    pub fn entries(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn usize_key(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| Error::config(format!("key `{key}`: expected an integer")))
    }

    fn f64_key(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::config(format!("key `{key}`: expected a number")))
    }

    fn bool_key(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::config(format!("key `{key}`: expected a bool, got `{v}`"))),
        }
    }

    fn grid_pair(&self, key: &str) -> Result<(usize, usize)> {
        let v = self.get(key);
        let (a, b) = v
            .split_once('x')
            .ok_or_else(|| Error::config(format!("key `{key}`: expected NxM, got `{v}`")))?;
        Ok((
            a.trim()
                .parse()
                .map_err(|_| Error::config(format!("key `{key}`: bad count `{a}`")))?,
            b.trim()
                .parse()
                .map_err(|_| Error::config(format!("key `{key}`: bad count `{b}`")))?,
        ))
    }

    pub fn formulation(&self) -> Result<FormulationTag> {
        match self.get("formulation") {
            "cg" => Ok(FormulationTag::Cg),
            "mixed" => Ok(FormulationTag::Mixed),
            "wave" | "ipdg" => Ok(FormulationTag::Ipdg),
            v => Err(Error::config(format!(
                "formulation: expected cg | mixed | wave, got `{v}`"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        self.formulation()?;
        self.grid_pair("grid.fine")?;
        self.grid_pair("grid.coarse")?;
        for k in [
            "grid.lx",
            "grid.ly",
            "field.background",
            "field.contrast",
            "field.contrast_rate",
            "time.t_end",
            "bayes.sigma_l",
            "bayes.sigma_d",
            "bayes.top_fraction",
            "sampler.burn_in",
            "fem.gamma",
        ] {
            self.f64_key(k)?;
        }
        for k in [
            "field.seed",
            "field.num_channels",
            "time.intervals",
            "time.substeps",
            "time.steps_per_interval",
            "basis.n_perm",
            "basis.n_candidates",
            "basis.buffer",
            "basis.oversample_layers",
            "bayes.n_regions",
            "bayes.n_basis",
            "sampler.n_samples",
            "sampler.n_sweeps",
            "sampler.seed",
            "sampler.threads",
        ] {
            self.usize_key(k)?;
        }
        if self.get("time.wave_dt") != "auto" {
            self.f64_key("time.wave_dt")?;
        }
        let rho = self.f64_key("bayes.top_fraction")?;
        if !(0.0 < rho && rho <= 1.0) {
            return Err(Error::config(format!(
                "bayes.top_fraction must lie in (0, 1], got {rho}"
            )));
        }
        if self.usize_key("time.intervals")? == 0 || self.usize_key("time.substeps")? == 0 {
            return Err(Error::config("time.intervals and time.substeps must be >= 1"));
        }
        Ok(())
    }

    /// Builds the mesh, loads or generates the field, and assembles the
    /// problem and run plan.
    pub fn build(&self) -> Result<(Problem, RunPlan)> {
        let (nx_f, ny_f) = self.grid_pair("grid.fine")?;
        let (nx_c, ny_c) = self.grid_pair("grid.coarse")?;
        let hierarchy = build_hierarchy(
            nx_f,
            ny_f,
            nx_c,
            ny_c,
            self.f64_key("grid.lx")?,
            self.f64_key("grid.ly")?,
        )?;

        let mut field: CoefficientField = if self.get("field.path").is_empty() {
            generate_field(
                &FieldGenSpec {
                    background: self.f64_key("field.background")?,
                    contrast: self.f64_key("field.contrast")?,
                    seed: self.usize_key("field.seed")? as u64,
                    num_channels: self.usize_key("field.num_channels")?,
                },
                &hierarchy,
            )
        } else {
            load_field(&PathBuf::from(self.get("field.path")), &hierarchy)?
        };
        field.time_law = match self.get("field.law") {
            "constant" => TimeLaw::Constant,
            "contrast" => TimeLaw::Contrast {
                c0: self.f64_key("field.contrast")?,
                rate: self.f64_key("field.contrast_rate")?,
            },
            v => {
                return Err(Error::config(format!(
                    "field.law: expected constant | contrast, got `{v}`"
                )))
            }
        };

        let source = match self.get("problem.source") {
            "none" => SourceSpec::None,
            "constant" => SourceSpec::Constant(self.f64_key("problem.source_amplitude")?),
            "pulse" => SourceSpec::Pulse {
                cx: self.f64_key("problem.source_cx")?,
                cy: self.f64_key("problem.source_cy")?,
                width: self.f64_key("problem.source_width")?,
                amplitude: self.f64_key("problem.source_amplitude")?,
            },
            v => {
                return Err(Error::config(format!(
                    "problem.source: expected none | constant | pulse, got `{v}`"
                )))
            }
        };
        let initial = match self.get("problem.initial") {
            "zero" => InitialSpec::Zero,
            "pulse" => InitialSpec::Pulse {
                cx: self.f64_key("problem.initial_cx")?,
                cy: self.f64_key("problem.initial_cy")?,
                width: self.f64_key("problem.initial_width")?,
                amplitude: self.f64_key("problem.initial_amplitude")?,
            },
            v => {
                return Err(Error::config(format!(
                    "problem.initial: expected zero | pulse, got `{v}`"
                )))
            }
        };

        let formulation = self.formulation()?;
        let posterior = match self.get("bayes.posterior") {
            "auto" => match formulation {
                FormulationTag::Ipdg => PosteriorVariant::AroundPrevious,
                _ => PosteriorVariant::AroundFixed,
            },
            "fixed" => PosteriorVariant::AroundFixed,
            "previous" => PosteriorVariant::AroundPrevious,
            v => {
                return Err(Error::config(format!(
                    "bayes.posterior: expected auto | fixed | previous, got `{v}`"
                )))
            }
        };
        let method = match self.get("sampler.method") {
            "sequential" => SamplerMethod::Sequential,
            "gibbs" => SamplerMethod::Gibbs,
            v => {
                return Err(Error::config(format!(
                    "sampler.method: expected sequential | gibbs, got `{v}`"
                )))
            }
        };
        let region_mode = match self.get("bayes.region_mode") {
            "top-fraction" => RegionMode::TopFraction(self.f64_key("bayes.top_fraction")?),
            "probabilistic" => RegionMode::Probabilistic,
            v => {
                return Err(Error::config(format!(
                    "bayes.region_mode: expected top-fraction | probabilistic, got `{v}`"
                )))
            }
        };

        let plan = RunPlan {
            formulation,
            t_end: self.f64_key("time.t_end")?,
            n_intervals: self.usize_key("time.intervals")?,
            substeps: self.usize_key("time.substeps")?,
            steps_per_interval: self.usize_key("time.steps_per_interval")?,
            wave_dt: match self.get("time.wave_dt") {
                "auto" => None,
                v => Some(v.parse().unwrap()),
            },
            gamma: self.f64_key("fem.gamma")?,
            posterior,
            method,
            n_samples: self.usize_key("sampler.n_samples")?,
            n_sweeps: self.usize_key("sampler.n_sweeps")?,
            burn_in: self.f64_key("sampler.burn_in")?,
            sigma_l: self.f64_key("bayes.sigma_l")?,
            sigma_d: self.f64_key("bayes.sigma_d")?,
            n_omega: self.usize_key("bayes.n_regions")?,
            n_basis: self.usize_key("bayes.n_basis")?,
            region_mode,
            basis: BasisParams {
                n_perm: self.usize_key("basis.n_perm")?,
                n_candidates: self.usize_key("basis.n_candidates")?,
                buffer: self.usize_key("basis.buffer")?,
                oversample_layers: self.usize_key("basis.oversample_layers")?,
                seed: self.usize_key("sampler.seed")? as u64,
                candidates_from_snapshots: self.bool_key("basis.candidates_from_snapshots")?,
            },
            seed: self.usize_key("sampler.seed")? as u64,
            threads: self.usize_key("sampler.threads")?,
            with_oracle: self.bool_key("output.oracle")?,
            with_snapshot_ref: self.bool_key("output.snapshot_ref")?,
        };

        Ok((
            Problem {
                hierarchy,
                field,
                source,
                initial,
            },
            plan,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse_str("formulation = cg\ngrid.fine = 20x20\ngrid.coarse = 4x4\n")
            .unwrap();
        let (problem, plan) = cfg.build().unwrap();
        assert_eq!(problem.hierarchy.nx_fine, 20);
        assert_eq!(plan.sigma_l, 1e-3);
        assert_eq!(plan.n_sweeps, 30);
    }

    #[test]
    fn sigma_l_is_read() {
        let cfg = RunConfig::parse_str("bayes.sigma_l = 1e-3\n").unwrap();
        let (_, plan) = cfg.build().unwrap();
        assert_eq!(plan.sigma_l, 1e-3);
    }

    #[test]
    fn wave_example_geometry() {
        let cfg = RunConfig::parse_str(
            "formulation = wave\ngrid.fine = 200x200\ngrid.coarse = 20x20\n",
        )
        .unwrap();
        let (problem, plan) = cfg.build().unwrap();
        assert_eq!(problem.hierarchy.nx_fine, 200);
        assert_eq!(problem.hierarchy.nx_coarse, 20);
        assert_eq!(plan.posterior, PosteriorVariant::AroundPrevious);
    }

    #[test]
    fn unknown_key_is_an_error_with_line_number() {
        let err = RunConfig::parse_str("grid.fine = 10x10\nnot.a.key = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("not.a.key"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = RunConfig::parse_str("time.t_end = soon\n").unwrap_err().to_string();
        assert!(err.contains("time.t_end"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse_str("# a comment\n\nformulation = mixed # trailing\n").unwrap();
        assert_eq!(cfg.get("formulation"), "mixed");
    }

    #[test]
    fn env_override_applies() {
        let key = "BMFEM_BAYES_SIGMA_L";
        std::env::set_var(key, "5e-4");
        let cfg = RunConfig::parse_str("formulation = cg\n").unwrap();
        std::env::remove_var(key);
        assert_eq!(cfg.get("bayes.sigma_l"), "5e-4");
    }

    #[test]
    fn entries_cover_every_key() {
        let cfg = RunConfig::defaults();
        assert_eq!(cfg.entries().len(), KEY_DEFAULTS.len());
    }
}
