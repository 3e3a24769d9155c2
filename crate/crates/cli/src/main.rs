//! Command-line driver: configuration ingestion, subcommand dispatch, run
//! persistence, and reproducibility plumbing.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime or numerical
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use bmfem::config::RunConfig;
use bmfem::diagnostics::{coverage_check, frequency_correlation};
use bmfem::fem::FormulationTag;
use bmfem::io::{
    broken_to_grid, cg_field_to_grid, fmt_float, mixed_velocity_x_grid, save_catalog, write_csv,
    write_chain_csv, write_grid_csv, write_manifest,
};
use bmfem::march::{self, RunOutput, SamplerMethod};

#[derive(Parser)]
#[command(
    name = "bmfem",
    about = "Multiscale finite elements with residual-driven Bayesian basis sampling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic channelized coefficient field file.
    GenerateField {
        /// Config file providing grid.* and field.* keys.
        #[arg(long, short)]
        config: PathBuf,
        /// Output path (defaults to `field.path` or `<output.dir>/field.txt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the fine reference (oracle) problem and write the final field.
    Reference {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Build the multiscale basis and persist it to the cache file.
    Basis {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// March the fixed (permanent-basis) solution and write its field and
    /// per-region residual norms.
    Fixed {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Run a posterior sampling pass and write all figure data as CSV.
    Sample {
        #[arg(long, short)]
        config: PathBuf,
        /// Overrides `sampler.method` from the config.
        #[arg(long, value_parser = ["sequential", "gibbs"])]
        method: Option<String>,
    },
    /// Print summary statistics of a finished run directory.
    Stats {
        /// A run directory written by `sample`.
        #[arg(long, short)]
        run: PathBuf,
    },
    /// Compare two run directories (frequency correlation, error summary).
    Compare {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenerateField { config, out } => generate_field(&config, out.as_deref()),
        Command::Reference { config } => reference(&config),
        Command::Basis { config } => basis(&config),
        Command::Fixed { config } => fixed(&config),
        Command::Sample { config, method } => sample(&config, method.as_deref()),
        Command::Stats { run } => stats(&run),
        Command::Compare { run_a, run_b } => compare(&run_a, &run_b),
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    RunConfig::parse_file(path).map_err(|e| anyhow!("{e}"))
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = PathBuf::from(cfg.get("output.dir"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_run_manifest(cfg: &RunConfig, dir: &Path, extra: &[(String, String)]) -> anyhow::Result<()> {
    let mut entries = cfg.entries();
    entries.push(("code.version".into(), env!("CARGO_PKG_VERSION").into()));
    entries.extend_from_slice(extra);
    write_manifest(&dir.join("manifest.txt"), &entries)?;
    Ok(())
}

fn generate_field(config: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let (problem, _) = cfg.build().map_err(|e| anyhow!("{e}"))?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None if !cfg.get("field.path").is_empty() => PathBuf::from(cfg.get("field.path")),
        None => out_dir(&cfg)?.join("field.txt"),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let text = bmfem::coeff::write_field(&problem.field, &problem.hierarchy);
    std::fs::write(&path, text)?;
    println!(
        "wrote {} ({}x{}, contrast {:.3e})",
        path.display(),
        problem.hierarchy.nx_fine,
        problem.hierarchy.ny_fine,
        problem.field.contrast()
    );
    Ok(())
}

fn reference(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let (problem, plan) = cfg.build().map_err(|e| anyhow!("{e}"))?;
    let dir = out_dir(&cfg)?;
    let h = &problem.hierarchy;
    let catalog = march::identity_catalog(&problem, plan.formulation);
    let trajectory = march::fixed_solution(&problem, &plan, &catalog).map_err(|e| anyhow!("{e}"))?;
    let final_state = trajectory.states.last().unwrap();
    let (grid, nx, ny) = match plan.formulation {
        FormulationTag::Cg => cg_field_to_grid(h, final_state),
        FormulationTag::Mixed => {
            // identity run stores pressures; emit the pressure grid
            (final_state.clone(), h.nx_fine, h.ny_fine)
        }
        FormulationTag::Ipdg => broken_to_grid(h, final_state),
    };
    write_grid_csv(&dir.join("reference_field.csv"), &grid, nx, ny)?;
    write_run_manifest(&cfg, &dir, &[("run.kind".into(), "reference".into())])?;
    println!("wrote {}", dir.join("reference_field.csv").display());
    Ok(())
}

fn basis(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let (problem, plan) = cfg.build().map_err(|e| anyhow!("{e}"))?;
    let dir = out_dir(&cfg)?;
    let field0 = problem.field.evaluate_at(0.0).map_err(|e| anyhow!("{e}"))?;
    let mut params = plan.basis;
    params.seed = bmfem::derive_seed(plan.seed, "basis", 0);
    let catalog = match plan.formulation {
        FormulationTag::Mixed => {
            bmfem::gmsfem::build_mixed_catalog(&problem.hierarchy, &field0, &params)
        }
        _ => bmfem::gmsfem::build_nodal_catalog(&problem.hierarchy, &field0, &params),
    }
    .map_err(|e| anyhow!("{e}"))?;
    let cache_path = if cfg.get("basis.cache").is_empty() {
        dir.join("basis.bin")
    } else {
        PathBuf::from(cfg.get("basis.cache"))
    };
    save_catalog(&cache_path, &catalog, params.n_perm)?;
    write_run_manifest(&cfg, &dir, &[("run.kind".into(), "basis".into())])?;
    println!(
        "built {} regions ({} permanent, {} candidate columns); cached at {}",
        catalog.regions.len(),
        catalog.n_permanent(),
        catalog.n_candidates(),
        cache_path.display()
    );
    Ok(())
}

fn fixed(config: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let (problem, mut plan) = cfg.build().map_err(|e| anyhow!("{e}"))?;
    let dir = out_dir(&cfg)?;
    // one cheap sweep to obtain the fixed anchor and region norms
    plan.method = SamplerMethod::Sequential;
    plan.n_samples = 1;
    let out = march::run(&problem, &plan).map_err(|e| anyhow!("{e}"))?;
    emit_field(&dir.join("fixed_field.csv"), &problem, &plan, out.fixed_final.as_deref().unwrap_or(&out.final_mean))?;
    let mut rows = Vec::new();
    for (n, norms) in out.norms_per_interval.iter().enumerate() {
        for (slot, (l2, sup)) in norms.l2.iter().zip(&norms.sup).enumerate() {
            rows.push(vec![
                n.to_string(),
                slot.to_string(),
                fmt_float(*l2),
                fmt_float(*sup),
                out.selections[n][slot].to_string(),
            ]);
        }
    }
    write_csv(
        &dir.join("region_norms.csv"),
        &["interval", "region_slot", "l2", "sup", "selected"],
        &rows,
    )?;
    write_run_manifest(&cfg, &dir, &[("run.kind".into(), "fixed".into())])?;
    println!("wrote {}", dir.join("fixed_field.csv").display());
    Ok(())
}

fn emit_field(
    path: &Path,
    problem: &march::Problem,
    plan: &march::RunPlan,
    field: &[f64],
) -> anyhow::Result<()> {
    let h = &problem.hierarchy;
    let (grid, nx, ny) = match plan.formulation {
        FormulationTag::Cg => cg_field_to_grid(h, field),
        FormulationTag::Mixed => mixed_velocity_x_grid(h, field),
        FormulationTag::Ipdg => broken_to_grid(h, field),
    };
    write_grid_csv(path, &grid, nx, ny)?;
    Ok(())
}

fn sample(config: &Path, method: Option<&str>) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(m) = method {
        cfg.set("sampler.method", m).map_err(|e| anyhow!("{e}"))?;
    }
    let (problem, plan) = cfg.build().map_err(|e| anyhow!("{e}"))?;
    let dir = out_dir(&cfg)?;
    let out = march::run(&problem, &plan).map_err(|e| anyhow!("{e}"))?;

    write_chain_csv(&dir.join("chain.csv"), &out.chains, &out.candidate_labels)?;

    // one file per figure analogue
    let mut residual_rows = Vec::new();
    let mut error_rows = Vec::new();
    let mut count_rows = Vec::new();
    for chain in &out.chains {
        for rec in &chain.records {
            residual_rows.push(vec![
                chain.interval.to_string(),
                rec.iteration.to_string(),
                fmt_float(rec.residual_norm),
            ]);
            if let Some(err) = rec.error {
                error_rows.push(vec![
                    chain.interval.to_string(),
                    rec.iteration.to_string(),
                    fmt_float(err),
                ]);
            }
            count_rows.push(vec![
                chain.interval.to_string(),
                rec.iteration.to_string(),
                rec.n_active_columns.to_string(),
            ]);
        }
    }
    write_csv(
        &dir.join("residual_vs_sample.csv"),
        &["interval", "iteration", "residual_norm"],
        &residual_rows,
    )?;
    write_csv(
        &dir.join("error_vs_sample.csv"),
        &["interval", "iteration", "rel_error"],
        &error_rows,
    )?;
    write_csv(
        &dir.join("basis_count.csv"),
        &["interval", "iteration", "n_active"],
        &count_rows,
    )?;

    let freq_rows: Vec<Vec<String>> = out
        .candidate_labels
        .iter()
        .zip(&out.final_frequencies)
        .map(|((region, k), f)| vec![region.to_string(), k.to_string(), fmt_float(*f)])
        .collect();
    write_csv(
        &dir.join("basis_frequency.csv"),
        &["region", "candidate", "frequency"],
        &freq_rows,
    )?;

    emit_field(&dir.join("mean_field.csv"), &problem, &plan, &out.final_mean)?;
    emit_field(&dir.join("std_field.csv"), &problem, &plan, &out.final_std)?;
    if let Some(oracle) = &out.oracle_final {
        emit_field(&dir.join("reference_field.csv"), &problem, &plan, oracle)?;
        let cov = coverage_check(&out.final_mean, &out.final_std, oracle);
        write_csv(
            &dir.join("coverage.csv"),
            &["k", "fraction"],
            &cov.iter()
                .enumerate()
                .map(|(k, f)| vec![(k + 1).to_string(), fmt_float(*f)])
                .collect::<Vec<_>>(),
        )?;
    }
    if let Some(fixedf) = &out.fixed_final {
        if plan.formulation != FormulationTag::Mixed {
            emit_field(&dir.join("fixed_field.csv"), &problem, &plan, fixedf)?;
        }
    }

    let mut extra = vec![("run.kind".into(), "sample".into())];
    if let Some(me) = out.mean_error {
        extra.push(("result.mean_error".into(), fmt_float(me)));
    }
    write_run_manifest(&cfg, &dir, &extra)?;

    println!(
        "{} sampling: {} intervals, {} records in the final chain",
        cfg.get("sampler.method"),
        out.chains.len(),
        out.chains.last().map(|c| c.records.len()).unwrap_or(0)
    );
    if let Some(me) = out.mean_error {
        println!("final mean relative error vs oracle: {me:.4}");
    }
    summarize(&out);
    Ok(())
}

fn summarize(out: &RunOutput) {
    for chain in &out.chains {
        let first = chain.records.first().map(|r| r.residual_norm).unwrap_or(0.0);
        let last = chain.records.last().map(|r| r.residual_norm).unwrap_or(0.0);
        let counts: Vec<usize> = chain.records.iter().map(|r| r.n_active_columns).collect();
        println!(
            "interval {}: residual {:.3e} -> {:.3e}, basis count {} -> {}",
            chain.interval,
            first,
            last,
            counts.first().unwrap_or(&0),
            counts.last().unwrap_or(&0)
        );
    }
}

fn read_column(path: &Path, column: &str) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty file", path.display()))?
        .split(',')
        .collect();
    let idx = header
        .iter()
        .position(|h| *h == column)
        .ok_or_else(|| anyhow!("{}: no column `{column}`", path.display()))?;
    let mut out = Vec::new();
    for line in lines {
        let cell = line.split(',').nth(idx).unwrap_or("");
        if !cell.is_empty() {
            out.push(cell.parse::<f64>().with_context(|| {
                format!("{}: unparseable value `{cell}` in `{column}`", path.display())
            })?);
        }
    }
    Ok(out)
}

fn stats(run: &Path) -> anyhow::Result<()> {
    let residuals = read_column(&run.join("residual_vs_sample.csv"), "residual_norm")?;
    let counts = read_column(&run.join("basis_count.csv"), "n_active")?;
    let errors = read_column(&run.join("error_vs_sample.csv"), "rel_error").unwrap_or_default();
    println!("records: {}", residuals.len());
    if let (Some(first), Some(last)) = (residuals.first(), residuals.last()) {
        println!("residual: first {first:.4e}, last {last:.4e}");
    }
    if !errors.is_empty() {
        let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        let last = errors.last().unwrap();
        println!("rel error: min {min:.4e}, last {last:.4e}");
    }
    if !counts.is_empty() {
        let max = counts.iter().cloned().fold(0.0, f64::max);
        println!("basis count: first {}, max {}", counts[0], max);
    }
    let cov_path = run.join("coverage.csv");
    if cov_path.exists() {
        let fracs = read_column(&cov_path, "fraction")?;
        if fracs.len() == 3 {
            println!(
                "coverage |mean - ref| <= k std: k=1 {:.3}, k=2 {:.3}, k=3 {:.3}",
                fracs[0], fracs[1], fracs[2]
            );
        }
    }
    Ok(())
}

fn compare(run_a: &Path, run_b: &Path) -> anyhow::Result<()> {
    let fa = read_column(&run_a.join("basis_frequency.csv"), "frequency")?;
    let fb = read_column(&run_b.join("basis_frequency.csv"), "frequency")?;
    if fa.len() != fb.len() {
        return Err(anyhow!(
            "frequency vectors differ in length ({} vs {}); runs must share a basis",
            fa.len(),
            fb.len()
        ));
    }
    let corr = frequency_correlation(&fa, &fb);
    println!("frequency correlation: {corr:.4}");
    for (name, run) in [("A", run_a), ("B", run_b)] {
        if let Ok(errors) = read_column(&run.join("error_vs_sample.csv"), "rel_error") {
            if let Some(last) = errors.last() {
                println!("run {name} ({}): last rel error {last:.4e}", run.display());
            }
        }
    }
    Ok(())
}
