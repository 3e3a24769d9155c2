//! Time-marching orchestration: the fixed (permanent-basis) trajectory, the
//! per-interval priors, and the two posterior variants over `[0, T]`.
//!
//! The parabolic formulations (CG and mixed) sample corrections around the
//! fixed solution; the wave formulation marches one trajectory per chain and
//! samples around the previous interval's state, re-solving the permanent
//! coefficients jointly with the candidates.

pub mod model;

use faer::Mat;

use crate::bayes::{basis_prior, region_prior, PosteriorSpec, PosteriorVariant, PriorModel};
use crate::coeff::{CoefficientField, TimeLaw};
use crate::fem::cg::{cg_operators, fine_solve_parabolic, CgOperators};
use crate::fem::ipdg::{assemble_broken_mass, assemble_ipdg, inject_nodal, BrokenMassInverse};
use crate::fem::mixed::{fine_solve_mixed, mixed_operators, MixedOperators};
use crate::fem::FormulationTag;
use crate::gmsfem::{build_mixed_catalog, build_nodal_catalog, BasisCatalog, BasisParams};
use crate::linalg::{LocalVector, SparseOperator};
use crate::mesh::MeshHierarchy;
use crate::residual::{region_norms, RegionNorms, ResidualVector, TestSpace};
use crate::sampler::{
    chain_statistics, gibbs_sample, sequential_sample, BasisSelection, CandidateRef,
    IntervalModel, IntervalSolution, RegionSelection, SampleChain, SampleRecord, SamplerConfig,
};
use crate::{derive_seed, Error, Result};

use model::{
    column_gram, edge_to_interior, nodal_to_broken, nodal_to_interior, reduced_cross,
    reduced_matrix, relative_error, solve_reduced_guarded, LinearIntervalModel,
    WaveIntervalModel,
};

/// Which sampler drives a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMethod {
    Sequential,
    Gibbs,
}

/// How regions are selected per interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionMode {
    /// Deterministic: the fraction of regions with the largest local
    /// residual norms.
    TopFraction(f64),
    /// Bernoulli draws with probability `alpha_hat /\ 1`.
    Probabilistic,
}

/// The source term f(x).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SourceSpec {
    None,
    Constant(f64),
    /// Gaussian bump `amplitude * exp(-((x-cx)^2+(y-cy)^2)/width^2)`.
    Pulse {
        cx: f64,
        cy: f64,
        width: f64,
        amplitude: f64,
    },
}

impl SourceSpec {
    fn node_values(&self, hierarchy: &MeshHierarchy) -> Vec<f64> {
        match self {
            SourceSpec::None => vec![0.0; hierarchy.n_fine_nodes()],
            SourceSpec::Constant(a) => vec![*a; hierarchy.n_fine_nodes()],
            SourceSpec::Pulse {
                cx,
                cy,
                width,
                amplitude,
            } => (0..hierarchy.n_fine_nodes())
                .map(|n| {
                    let (x, y) = hierarchy.fine_node_coords(n);
                    let r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    amplitude * (-r2 / (width * width)).exp()
                })
                .collect(),
        }
    }

    fn cell_values(&self, hierarchy: &MeshHierarchy) -> Vec<f64> {
        match self {
            SourceSpec::None => vec![0.0; hierarchy.n_fine_cells()],
            SourceSpec::Constant(a) => vec![*a; hierarchy.n_fine_cells()],
            SourceSpec::Pulse {
                cx,
                cy,
                width,
                amplitude,
            } => (0..hierarchy.n_fine_cells())
                .map(|c| {
                    let (i, j) = hierarchy.fine_cell_ij(c);
                    let x = (i as f64 + 0.5) * hierarchy.hx;
                    let y = (j as f64 + 0.5) * hierarchy.hy;
                    let r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    amplitude * (-r2 / (width * width)).exp()
                })
                .collect(),
        }
    }
}

/// The initial condition u(x, 0); the wave starts with zero velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialSpec {
    Zero,
    /// Gaussian pulse `amplitude * exp(-((x-cx)^2+(y-cy)^2)/width^2)`.
    Pulse {
        cx: f64,
        cy: f64,
        width: f64,
        amplitude: f64,
    },
}

impl InitialSpec {
    pub fn node_values(&self, hierarchy: &MeshHierarchy) -> Vec<f64> {
        match self {
            InitialSpec::Zero => vec![0.0; hierarchy.n_fine_nodes()],
            InitialSpec::Pulse {
                cx,
                cy,
                width,
                amplitude,
            } => (0..hierarchy.n_fine_nodes())
                .map(|n| {
                    let (x, y) = hierarchy.fine_node_coords(n);
                    let r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    amplitude * (-r2 / (width * width)).exp()
                })
                .collect(),
        }
    }

    fn cell_values(&self, hierarchy: &MeshHierarchy) -> Vec<f64> {
        match self {
            InitialSpec::Zero => vec![0.0; hierarchy.n_fine_cells()],
            InitialSpec::Pulse {
                cx,
                cy,
                width,
                amplitude,
            } => (0..hierarchy.n_fine_cells())
                .map(|c| {
                    let (i, j) = hierarchy.fine_cell_ij(c);
                    let x = (i as f64 + 0.5) * hierarchy.hx;
                    let y = (j as f64 + 0.5) * hierarchy.hy;
                    let r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    amplitude * (-r2 / (width * width)).exp()
                })
                .collect(),
        }
    }
}

/// The assembled problem a run works on.
#[derive(Clone, Debug)]
pub struct Problem {
    pub hierarchy: MeshHierarchy,
    pub field: CoefficientField,
    pub source: SourceSpec,
    pub initial: InitialSpec,
}

/// Everything that parameterizes a run.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub formulation: FormulationTag,
    pub t_end: f64,
    pub n_intervals: usize,
    /// Parabolic: implicit sub-steps per interval (default 1).
    pub substeps: usize,
    /// Wave: explicit fine steps per interval.
    pub steps_per_interval: usize,
    /// Wave fine step; `None` derives it from the stability estimate.
    pub wave_dt: Option<f64>,
    /// Interior-penalty parameter.
    pub gamma: f64,
    pub posterior: PosteriorVariant,
    pub method: SamplerMethod,
    pub n_samples: usize,
    pub n_sweeps: usize,
    pub burn_in: f64,
    pub sigma_l: f64,
    pub sigma_d: f64,
    pub n_omega: usize,
    pub n_basis: usize,
    pub region_mode: RegionMode,
    pub basis: BasisParams,
    pub seed: u64,
    pub threads: usize,
    /// Compute the fine oracle and per-record errors.
    pub with_oracle: bool,
    /// Compute the snapshot-space Galerkin reference per interval (the
    /// paper-style error baseline over the updated regions).
    pub with_snapshot_ref: bool,
}

impl RunPlan {
    pub fn defaults(formulation: FormulationTag) -> Self {
        RunPlan {
            formulation,
            t_end: 0.02,
            n_intervals: 2,
            substeps: 1,
            steps_per_interval: 10,
            wave_dt: None,
            gamma: 10.0,
            posterior: match formulation {
                FormulationTag::Ipdg => PosteriorVariant::AroundPrevious,
                _ => PosteriorVariant::AroundFixed,
            },
            method: SamplerMethod::Gibbs,
            n_samples: 20,
            n_sweeps: 30,
            burn_in: 0.25,
            sigma_l: 1e-3,
            sigma_d: 1e-2,
            n_omega: 4,
            n_basis: 2,
            region_mode: RegionMode::TopFraction(0.3),
            basis: BasisParams::default(),
            seed: 0,
            threads: 1,
            with_oracle: true,
            with_snapshot_ref: false,
        }
    }

    fn sampler_config(&self, interval: usize) -> SamplerConfig {
        SamplerConfig {
            n_samples: self.n_samples,
            n_sweeps: self.n_sweeps,
            burn_in_frac: self.burn_in,
            seed: derive_seed(self.seed, "interval", interval as u64),
            threads: self.threads,
        }
    }

    fn effective_burn_in(&self) -> f64 {
        match self.method {
            SamplerMethod::Gibbs => self.burn_in,
            SamplerMethod::Sequential => 0.0,
        }
    }
}

/// The outcome of a posterior run: per-interval chains plus the final-time
/// ensemble statistics in solver dofs.
pub struct RunOutput {
    pub formulation: FormulationTag,
    pub chains: Vec<SampleChain>,
    /// Candidate enumeration of the final interval: (region id, local index).
    pub candidate_labels: Vec<(usize, usize)>,
    /// Ensemble fields at the final time (burn-in already applied).
    pub final_fields: Vec<Vec<f64>>,
    pub final_mean: Vec<f64>,
    pub final_std: Vec<f64>,
    pub final_frequencies: Vec<f64>,
    pub oracle_final: Option<Vec<f64>>,
    pub fixed_final: Option<Vec<f64>>,
    pub error_op: SparseOperator,
    /// Relative error of the final mean field against the oracle.
    pub mean_error: Option<f64>,
    /// Relative error of the final mean field against the snapshot-space
    /// Galerkin reference (when requested).
    pub mean_error_snapshot: Option<f64>,
    pub norms_per_interval: Vec<RegionNorms>,
    pub selections: Vec<Vec<bool>>,
}

/// Dispatches a full posterior run per the plan.
pub fn run(problem: &Problem, plan: &RunPlan) -> Result<RunOutput> {
    match (plan.formulation, plan.posterior) {
        (FormulationTag::Cg | FormulationTag::Mixed, PosteriorVariant::AroundFixed) => {
            run_posterior_fixed(problem, plan)
        }
        (FormulationTag::Ipdg, PosteriorVariant::AroundPrevious) => {
            run_posterior_previous(problem, plan)
        }
        (f, p) => Err(Error::config(format!(
            "posterior variant {p:?} is not implemented for formulation {f:?} \
             (around-fixed: cg/mixed, around-previous: wave)"
        ))),
    }
}

// ---- region selection and priors ----

fn select_regions(norms: &[f64], mode: RegionMode) -> Vec<bool> {
    match mode {
        RegionMode::TopFraction(rho) => {
            let n = norms.len();
            let take = ((rho * n as f64).ceil() as usize).clamp(1, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| norms[*b].partial_cmp(&norms[*a]).unwrap().then(a.cmp(b)));
            let mut bits = vec![false; n];
            for i in &order[..take] {
                bits[*i] = true;
            }
            bits
        }
        RegionMode::Probabilistic => vec![true; norms.len()],
    }
}

fn build_prior(
    model: &dyn IntervalModel,
    global_norm: f64,
    ranking: &[f64],
    plan: &RunPlan,
) -> Result<PriorModel> {
    let region_probs = region_prior(ranking, global_norm, plan.n_omega)?;
    let base = model.base_residual();
    let mut candidate_probs = Vec::with_capacity(model.n_region_slots());
    for slot in 0..model.n_region_slots() {
        let images = model.candidate_images(slot);
        if images.is_empty() {
            candidate_probs.push(Vec::new());
            continue;
        }
        let slice = &base.coords[base.offsets[slot]..base.offsets[slot + 1]];
        candidate_probs.push(basis_prior(slice, &images, plan.n_basis)?);
    }
    Ok(PriorModel {
        region_probs,
        candidate_probs,
        n_omega: plan.n_omega,
        n_basis: plan.n_basis,
        local_norms: ranking.to_vec(),
    })
}

fn run_sampler(
    model: &(dyn IntervalModel + Sync),
    prior: &PriorModel,
    selection: &[bool],
    plan: &RunPlan,
    interval: usize,
) -> Result<SampleChain> {
    let cfg = plan.sampler_config(interval);
    let mode = match plan.region_mode {
        RegionMode::TopFraction(_) => RegionSelection::Fixed(selection.to_vec()),
        RegionMode::Probabilistic => RegionSelection::Probabilistic,
    };
    match plan.method {
        SamplerMethod::Sequential => sequential_sample(model, prior, &mode, &cfg, interval),
        SamplerMethod::Gibbs => {
            let posterior = PosteriorSpec::new(plan.posterior, plan.sigma_l);
            gibbs_sample(model, prior, &mode, &posterior, &cfg, interval)
        }
    }
}

// ---- catalog conversion ----

struct ConvertedCatalog {
    region_ids: Vec<usize>,
    permanent: Vec<LocalVector>,
    candidates: Vec<LocalVector>,
    cand_refs: Vec<CandidateRef>,
    test_columns: Vec<(usize, Vec<LocalVector>)>,
}

fn convert_catalog(
    catalog: &BasisCatalog,
    convert: impl Fn(&LocalVector) -> LocalVector,
) -> ConvertedCatalog {
    let convert = |col: &LocalVector| -> LocalVector {
        if catalog.solver_indexed {
            col.clone()
        } else {
            convert(col)
        }
    };
    let mut region_ids = Vec::new();
    let mut permanent = Vec::new();
    let mut candidates = Vec::new();
    let mut cand_refs = Vec::new();
    let mut test_columns = Vec::new();
    for (slot, set) in catalog.regions.iter().enumerate() {
        region_ids.push(set.region);
        for col in &set.permanent {
            permanent.push(convert(col));
        }
        for (k, col) in set.candidates.iter().enumerate() {
            candidates.push(convert(col));
            cand_refs.push(CandidateRef {
                region_slot: slot,
                local_index: k,
            });
        }
        let tests: Vec<LocalVector> = set.snapshots.iter().map(&convert).collect();
        test_columns.push((set.region, tests));
    }
    ConvertedCatalog {
        region_ids,
        permanent,
        candidates,
        cand_refs,
        test_columns,
    }
}

/// Builds the identity basis over all solver dofs of a formulation: the
/// permanent space is the full fine space, so every reduced solve
/// reproduces the fine one (the oracle-equivalence configuration).
pub fn identity_catalog(problem: &Problem, formulation: FormulationTag) -> BasisCatalog {
    let h = &problem.hierarchy;
    let n = match formulation {
        FormulationTag::Cg => crate::fem::cg::CgSpace::new(h).n_dofs(),
        FormulationTag::Mixed => crate::fem::mixed::MixedSpace::new(h).n_velocity_dofs(),
        FormulationTag::Ipdg => crate::fem::ipdg::n_broken_dofs(h),
    };
    let permanent: Vec<LocalVector> = (0..n)
        .map(|i| LocalVector::new(vec![i], vec![1.0]))
        .collect();
    BasisCatalog {
        regions: vec![crate::gmsfem::RegionBasisSet {
            region: 0,
            eigenvalues: Vec::new(),
            permanent,
            candidates: Vec::new(),
            snapshots: Vec::new(),
        }],
        pou: None,
        solver_indexed: true,
    }
}

fn build_catalog(
    problem: &Problem,
    plan: &RunPlan,
    field_n: &CoefficientField,
    interval: usize,
) -> Result<BasisCatalog> {
    let mut params = plan.basis;
    params.seed = derive_seed(plan.seed, "basis", interval as u64);
    match plan.formulation {
        FormulationTag::Cg | FormulationTag::Ipdg => {
            build_nodal_catalog(&problem.hierarchy, field_n, &params)
        }
        FormulationTag::Mixed => build_mixed_catalog(&problem.hierarchy, field_n, &params),
    }
}

// ---- posterior around the fixed solution (CG and mixed) ----

struct ParabolicIntervalPieces {
    model: LinearIntervalModel,
    fixed_end: Vec<f64>,
    oracle_end: Option<Vec<f64>>,
    /// Test-by-test reduced operator and test columns, kept when the
    /// snapshot reference is requested.
    snap_parts: Option<(Mat<f64>, Vec<LocalVector>)>,
}

/// Marches all intervals with the fixed (permanent-basis) solution as the
/// anchor, building the residual prior and sampling corrections per
/// interval.
pub fn run_posterior_fixed(problem: &Problem, plan: &RunPlan) -> Result<RunOutput> {
    let interval_len = plan.t_end / plan.n_intervals as f64;
    let dt = interval_len / plan.substeps as f64;

    let mut catalog_cache: Option<BasisCatalog> = None;
    let mut chains = Vec::new();
    let mut norms_all = Vec::new();
    let mut selections = Vec::new();
    let mut last: Option<ParabolicIntervalPieces> = None;

    let mut oracle_state: Option<Vec<f64>> = None;
    let mut fixed_state: Option<Vec<f64>> = None;

    for n in 0..plan.n_intervals {
        let t_left = n as f64 * interval_len;
        let field_n = problem.field.evaluate_at(t_left)?;
        if catalog_cache.is_none() || problem.field.time_law != TimeLaw::Constant {
            catalog_cache = Some(build_catalog(problem, plan, &field_n, n)?);
        }
        let catalog = catalog_cache.as_ref().unwrap();

        let pieces = match plan.formulation {
            FormulationTag::Cg => cg_interval(
                problem,
                plan,
                &field_n,
                catalog,
                dt,
                n,
                fixed_state.as_deref(),
                oracle_state.as_deref(),
            )?,
            FormulationTag::Mixed => mixed_interval(
                problem,
                plan,
                &field_n,
                catalog,
                dt,
                n,
                fixed_state.as_deref(),
                oracle_state.as_deref(),
            )?,
            FormulationTag::Ipdg => unreachable!("wave uses run_posterior_previous"),
        };

        let mut pieces = pieces;
        let norms = region_norms(pieces.model.base_residual());
        let selection = select_regions(&norms.l2, plan.region_mode);
        if let Some((t_full, test_cols)) = &pieces.snap_parts {
            pieces.model.snapshot_ref = Some(parabolic_snapshot_reference(
                &pieces.model,
                t_full,
                test_cols,
                &selection,
            )?);
        }
        let prior = build_prior(&pieces.model, norms.global, &norms.l2, plan)?;
        let chain = run_sampler(&pieces.model, &prior, &selection, plan, n)?;

        fixed_state = Some(pieces.fixed_end.clone());
        oracle_state = pieces.oracle_end.clone();
        norms_all.push(norms);
        selections.push(selection);
        chains.push(chain);
        last = Some(pieces);
    }

    let last = last.expect("at least one interval");
    let final_chain = chains.last().unwrap();
    let burn = plan.effective_burn_in();
    let stats = chain_statistics(&last.model, final_chain, burn);
    let final_fields = ensemble_fields(&last.model, final_chain, burn);
    let labels = candidate_labels(&last.model);
    let mean_error = last
        .model
        .oracle
        .as_ref()
        .map(|o| relative_error(&stats.mean, o, &last.model.error_op));
    let mean_error_snapshot = last
        .model
        .snapshot_ref
        .as_ref()
        .map(|r| relative_error(&stats.mean, r, &last.model.error_op));

    Ok(RunOutput {
        formulation: plan.formulation,
        chains,
        candidate_labels: labels,
        final_fields,
        final_mean: stats.mean,
        final_std: stats.std,
        final_frequencies: stats.frequencies,
        oracle_final: last.model.oracle.clone(),
        fixed_final: last.model.offset_field.clone(),
        error_op: last.model.error_op.clone(),
        mean_error,
        mean_error_snapshot,
        norms_per_interval: norms_all,
        selections,
    })
}

/// Galerkin solve over the snapshot span of the selected regions, anchored
/// on the fixed solution: the paper-style reference for sampled errors.
fn parabolic_snapshot_reference(
    model: &LinearIntervalModel,
    t_full: &Mat<f64>,
    test_cols: &[LocalVector],
    selection: &[bool],
) -> Result<Vec<f64>> {
    let mut idx = Vec::new();
    for (slot, on) in selection.iter().enumerate() {
        if *on {
            idx.extend(model.test_offsets[slot]..model.test_offsets[slot + 1]);
        }
    }
    let m = idx.len();
    let sys = Mat::from_fn(m, m, |i, j| t_full[(idx[i], idx[j])]);
    let rhs: Vec<f64> = idx.iter().map(|i| model.base_coords[*i]).collect();
    let beta = solve_reduced_guarded(&sys, &rhs, &vec![true; m])?;
    let mut field = model
        .offset_field
        .clone()
        .unwrap_or_else(|| vec![0.0; model.n_dofs]);
    for (b, i) in beta.iter().zip(&idx) {
        test_cols[*i].scatter_add(*b, &mut field);
    }
    Ok(field)
}

fn candidate_labels(model: &dyn IntervalModel) -> Vec<(usize, usize)> {
    model
        .candidates()
        .iter()
        .map(|c| (model.region_id(c.region_slot), c.local_index))
        .collect()
}

fn ensemble_fields(
    model: &(dyn IntervalModel + Sync),
    chain: &SampleChain,
    burn_in: f64,
) -> Vec<Vec<f64>> {
    let n = chain.records.len();
    let skip = (((n as f64) * burn_in).floor() as usize).min(n.saturating_sub(1));
    chain.records[skip..]
        .iter()
        .map(|rec| {
            let sol = IntervalSolution {
                active: rec.selection.candidates.clone(),
                beta: rec.selection.beta.clone(),
                residual: ResidualVector {
                    coords: Vec::new(),
                    offsets: vec![0],
                    interval: chain.interval,
                },
                residual_norm: rec.residual_norm,
            };
            model.reconstruct(&sol)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cg_interval(
    problem: &Problem,
    plan: &RunPlan,
    field_n: &CoefficientField,
    catalog: &BasisCatalog,
    dt: f64,
    interval: usize,
    fixed_prev: Option<&[f64]>,
    oracle_prev: Option<&[f64]>,
) -> Result<ParabolicIntervalPieces> {
    let h = &problem.hierarchy;
    let ops: CgOperators = cg_operators(h, field_n);
    let n = ops.space.n_dofs();
    let f_int = ops.space.restrict(&problem.source.node_values(h));
    let u0_int = ops.space.restrict(&problem.initial.node_values(h));

    let fixed_prev: Vec<f64> = fixed_prev.map(|s| s.to_vec()).unwrap_or_else(|| u0_int.clone());
    let oracle_prev: Vec<f64> = oracle_prev.map(|s| s.to_vec()).unwrap_or(u0_int);

    let oracle_end = if plan.with_oracle {
        let states = fine_solve_parabolic(
            &ops.mass,
            &ops.stiffness,
            &oracle_prev,
            &f_int,
            dt,
            plan.substeps,
        )?;
        Some(states.last().unwrap().dofs.clone())
    } else {
        None
    };

    let conv = convert_catalog(catalog, |c| nodal_to_interior(c, &ops.space));
    let apply_op = |col: &LocalVector, out: &mut [f64]| {
        let mut tmp = vec![0.0; out.len()];
        ops.mass.scatter_mul(&col.idx, &col.val, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t / dt;
        }
        ops.stiffness.scatter_mul(&col.idx, &col.val, out);
    };
    let apply_mass = |col: &LocalVector, out: &mut [f64]| {
        ops.mass.scatter_mul(&col.idx, &col.val, out);
    };

    // fixed trajectory across the interval: permanent-only reduced solves
    let reach = h.nx_fine + 2;
    let c_perm = reduced_matrix(&conv.permanent, n, reach, apply_op);
    let mut fix_prev_sub = fixed_prev.clone();
    let mut fix_curr = fixed_prev;
    for _ in 0..plan.substeps {
        let rhs_fine = step_rhs(&ops.mass, &f_int, &fix_curr, dt);
        let rhs: Vec<f64> = conv
            .permanent
            .iter()
            .map(|c| c.dot_dense(&rhs_fine))
            .collect();
        let droppable = vec![false; conv.permanent.len()];
        let gamma = solve_reduced_guarded(&c_perm, &rhs, &droppable)?;
        fix_prev_sub = fix_curr.clone();
        let mut next = vec![0.0; n];
        for (g, col) in gamma.iter().zip(&conv.permanent) {
            col.scatter_add(*g, &mut next);
        }
        fix_curr = next;
    }

    // residual functional of the fixed solution at the last sub-step
    let r_fix = crate::residual::cg_fine_residual(
        &ops.mass,
        &ops.stiffness,
        &vec![0.0; n],
        &fix_curr,
        &fix_prev_sub,
        &f_int,
        dt,
    );

    let test = TestSpace::build(conv.test_columns, &ops.mass);
    let base_coords: Vec<f64> = test.columns.iter().map(|c| c.dot_dense(&r_fix)).collect();
    let t_op = reduced_cross(&test.columns, &conv.candidates, n, reach, apply_op);
    let cand_images = reduced_cross(&test.columns, &conv.candidates, n, reach, apply_mass);
    let c_mat = reduced_matrix(&conv.candidates, n, reach, apply_op);
    let rhs: Vec<f64> = conv
        .candidates
        .iter()
        .map(|c| c.dot_dense(&r_fix))
        .collect();

    let mut all_columns = conv.permanent.clone();
    all_columns.extend(conv.candidates.iter().cloned());
    let gram = column_gram(&all_columns);
    let n_perm_total = conv.permanent.len();

    let snap_parts = plan.with_snapshot_ref.then(|| {
        let t_full = reduced_matrix(&test.columns, n, reach, apply_op);
        (t_full, test.columns.clone())
    });

    let base_residual = ResidualVector {
        coords: base_coords.clone(),
        offsets: test.offsets.clone(),
        interval,
    };

    let model = LinearIntervalModel {
        interval,
        region_ids: conv.region_ids,
        cands: conv.cand_refs,
        always_on: 0,
        columns: conv.candidates,
        c_mat,
        rhs,
        base_coords,
        t_op,
        test_offsets: test.offsets,
        cand_images,
        gram,
        gram_cand_offset: n_perm_total,
        gram_permanent: (0..n_perm_total).collect(),
        offset_field: Some(fix_curr.clone()),
        n_dofs: n,
        oracle: oracle_end.clone(),
        snapshot_ref: None,
        error_op: ops.mass.clone(),
        base_residual,
    };

    Ok(ParabolicIntervalPieces {
        model,
        fixed_end: fix_curr,
        oracle_end,
        snap_parts,
    })
}

fn step_rhs(mass: &SparseOperator, f: &[f64], u_prev: &[f64], dt: f64) -> Vec<f64> {
    let mut rhs = mass.matvec(f);
    let mu = mass.matvec(u_prev);
    for (r, m) in rhs.iter_mut().zip(&mu) {
        *r += m / dt;
    }
    rhs
}

#[allow(clippy::too_many_arguments)]
fn mixed_interval(
    problem: &Problem,
    plan: &RunPlan,
    field_n: &CoefficientField,
    catalog: &BasisCatalog,
    dt: f64,
    interval: usize,
    fixed_prev: Option<&[f64]>,
    oracle_prev: Option<&[f64]>,
) -> Result<ParabolicIntervalPieces> {
    let h = &problem.hierarchy;
    let ops: MixedOperators = mixed_operators(h, field_n);
    let nv = ops.mv.nrows();
    let nc = h.n_fine_cells();
    let f_cells = problem.source.cell_values(h);
    let u0_cells = problem.initial.cell_values(h);

    let fixed_prev: Vec<f64> = fixed_prev
        .map(|s| s.to_vec())
        .unwrap_or_else(|| u0_cells.clone());
    let oracle_prev: Vec<f64> = oracle_prev.map(|s| s.to_vec()).unwrap_or(u0_cells);

    let oracle_end_full = if plan.with_oracle {
        let states = fine_solve_mixed(&ops, &oracle_prev, &f_cells, dt, plan.substeps)?;
        Some(states.last().unwrap().dofs.clone())
    } else {
        None
    };

    let conv = convert_catalog(catalog, |c| edge_to_interior(c, &ops.space));
    let apply_mv = |col: &LocalVector, out: &mut [f64]| {
        ops.mv.scatter_mul(&col.idx, &col.val, out);
    };

    // fixed trajectory: permanent velocities coupled to coarse pressures
    let n_blocks = h.n_coarse_blocks();
    let n_perm_total = conv.permanent.len();
    let mv_pp = reduced_matrix(&conv.permanent, nv, usize::MAX, apply_mv);
    let mut bc_p = Mat::<f64>::zeros(n_blocks, n_perm_total);
    for (j, col) in conv.permanent.iter().enumerate() {
        let mut div = vec![0.0; nc];
        ops.b.scatter_mul(&col.idx, &col.val, &mut div);
        for k in 0..n_blocks {
            bc_p[(k, j)] = h.block_cells(k).iter().map(|c| div[*c]).sum();
        }
    }
    let block_area: Vec<f64> = (0..n_blocks)
        .map(|k| h.block_cells(k).len() as f64 * h.hx * h.hy)
        .collect();

    let mut fix_pressure = fixed_prev;
    let mut fix_velocity = vec![0.0; nv];
    for _ in 0..plan.substeps {
        let m = n_perm_total + n_blocks;
        let mut sys = Mat::<f64>::zeros(m, m);
        for i in 0..n_perm_total {
            for j in 0..n_perm_total {
                sys[(i, j)] = mv_pp[(i, j)];
            }
        }
        for k in 0..n_blocks {
            for j in 0..n_perm_total {
                sys[(j, n_perm_total + k)] = -bc_p[(k, j)];
                sys[(n_perm_total + k, j)] = bc_p[(k, j)];
            }
            sys[(n_perm_total + k, n_perm_total + k)] = block_area[k] / dt;
        }
        let mut rhs = vec![0.0; m];
        for k in 0..n_blocks {
            let mut s = 0.0;
            for c in h.block_cells(k) {
                s += h.hx * h.hy * (fix_pressure[*c] / dt + f_cells[*c]);
            }
            rhs[n_perm_total + k] = s;
        }
        let sol = crate::linalg::dense_solve(&sys, &rhs)?;
        fix_velocity = vec![0.0; nv];
        for (g, col) in sol[..n_perm_total].iter().zip(&conv.permanent) {
            col.scatter_add(*g, &mut fix_velocity);
        }
        let mut press = vec![0.0; nc];
        for k in 0..n_blocks {
            for c in h.block_cells(k) {
                press[*c] = sol[n_perm_total + k];
            }
        }
        fix_pressure = press;
    }

    // the model solves C beta = Phi^T (B^T u_fix - Mv V_fix)
    let r_fix: Vec<f64> = crate::residual::mixed_fine_residual(
        &ops.mv,
        &ops.bt,
        &vec![0.0; nv],
        &fix_velocity,
        &fix_pressure,
    )
    .iter()
    .map(|v| -v)
    .collect();

    let test = TestSpace::build(conv.test_columns, &ops.mv);
    let base_coords: Vec<f64> = test.columns.iter().map(|c| c.dot_dense(&r_fix)).collect();
    let t_op = reduced_cross(&test.columns, &conv.candidates, nv, usize::MAX, apply_mv);
    let cand_images = t_op.clone();
    let c_mat = reduced_matrix(&conv.candidates, nv, usize::MAX, apply_mv);
    let rhs: Vec<f64> = conv
        .candidates
        .iter()
        .map(|c| c.dot_dense(&r_fix))
        .collect();

    let mut all_columns = conv.permanent.clone();
    all_columns.extend(conv.candidates.iter().cloned());
    let gram = column_gram(&all_columns);

    let snap_parts = plan.with_snapshot_ref.then(|| {
        let t_full = reduced_matrix(&test.columns, nv, usize::MAX, apply_mv);
        (t_full, test.columns.clone())
    });

    let base_residual = ResidualVector {
        coords: base_coords.clone(),
        offsets: test.offsets.clone(),
        interval,
    };

    let oracle_velocity = oracle_end_full.as_ref().map(|s| s[..nv].to_vec());
    let model = LinearIntervalModel {
        interval,
        region_ids: conv.region_ids,
        cands: conv.cand_refs,
        always_on: 0,
        columns: conv.candidates,
        c_mat,
        rhs,
        base_coords,
        t_op,
        test_offsets: test.offsets,
        cand_images,
        gram,
        gram_cand_offset: n_perm_total,
        gram_permanent: (0..n_perm_total).collect(),
        offset_field: Some(fix_velocity),
        n_dofs: nv,
        oracle: oracle_velocity,
        snapshot_ref: None,
        error_op: ops.mv.clone(),
        base_residual,
    };

    Ok(ParabolicIntervalPieces {
        model,
        fixed_end: fix_pressure,
        oracle_end: oracle_end_full.map(|s| s[nv..].to_vec()),
        snap_parts,
    })
}

// ---- posterior around the previous time (wave) ----

/// Shared per-interval wave pieces, independent of the trajectory state.
struct WaveIntervalShared {
    region_ids: Vec<usize>,
    cand_refs: Vec<CandidateRef>,
    columns: std::sync::Arc<Vec<LocalVector>>,
    n_perm: usize,
    /// Column ranges of the appended snapshot columns, per region slot
    /// (empty when the snapshot reference is not requested).
    snap_ranges: Vec<std::ops::Range<usize>>,
    m_red: std::sync::Arc<Mat<f64>>,
    a_red: std::sync::Arc<Mat<f64>>,
    f_red: Vec<f64>,
    t_m: std::sync::Arc<Mat<f64>>,
    t_a: std::sync::Arc<Mat<f64>>,
    f_test: Vec<f64>,
    test: TestSpace,
    cand_images: std::sync::Arc<Mat<f64>>,
    gram: std::sync::Arc<Mat<f64>>,
    mass: SparseOperator,
    n_dofs: usize,
    dt: f64,
    n_steps: usize,
    oracle_end: Option<Vec<f64>>,
}

impl WaveIntervalShared {
    /// Snapshot-space reference: permanent plus all snapshot columns of the
    /// selected regions, marched from the same entering states.
    fn snapshot_reference(
        &self,
        model: &WaveIntervalModel,
        selection: &[bool],
    ) -> Result<Vec<f64>> {
        let mut cols: Vec<usize> = (0..self.n_perm).collect();
        for (slot, on) in selection.iter().enumerate() {
            if *on {
                cols.extend(self.snap_ranges[slot].clone());
            }
        }
        model.reference_on(&cols)
    }

    fn make_model(
        &self,
        interval: usize,
        u_curr: &[f64],
        u_prev: &[f64],
    ) -> Result<WaveIntervalModel> {
        let m_curr = self.mass.matvec(u_curr);
        let m_prev = self.mass.matvec(u_prev);
        let proj_curr: Vec<f64> = self.columns.iter().map(|c| c.dot_dense(&m_curr)).collect();
        let proj_prev: Vec<f64> = self.columns.iter().map(|c| c.dot_dense(&m_prev)).collect();
        let mut model = WaveIntervalModel {
            interval,
            region_ids: self.region_ids.clone(),
            cands: self.cand_refs.clone(),
            n_perm: self.n_perm,
            columns: std::sync::Arc::clone(&self.columns),
            m_red: std::sync::Arc::clone(&self.m_red),
            a_red: std::sync::Arc::clone(&self.a_red),
            f_red: self.f_red.clone(),
            t_m: std::sync::Arc::clone(&self.t_m),
            t_a: std::sync::Arc::clone(&self.t_a),
            f_test: self.f_test.clone(),
            test_offsets: self.test.offsets.clone(),
            cand_images: std::sync::Arc::clone(&self.cand_images),
            proj_curr,
            proj_prev,
            dt: self.dt,
            n_steps: self.n_steps,
            gram: std::sync::Arc::clone(&self.gram),
            n_dofs: self.n_dofs,
            oracle: self.oracle_end.clone(),
            snapshot_ref: None,
            error_op: self.mass.clone(),
            base_residual: ResidualVector {
                coords: vec![0.0; self.test.n_columns()],
                offsets: self.test.offsets.clone(),
                interval,
            },
        };
        let no_cands = vec![false; model.cands.len()];
        let base = model.solve_beta(&no_cands)?;
        model.base_residual = base.residual;
        Ok(model)
    }
}

/// Marches sequentially, refreshing priors per coarse interval from the
/// sampled trajectory's state; used for the wave formulation.
pub fn run_posterior_previous(problem: &Problem, plan: &RunPlan) -> Result<RunOutput> {
    let h = &problem.hierarchy;
    let interval_len = plan.t_end / plan.n_intervals as f64;
    let n_steps = plan.steps_per_interval;

    // fine step: given, or half the stability limit of the initial operator
    let field_0 = problem.field.evaluate_at(0.0)?;
    let a0 = assemble_ipdg(h, &field_0, plan.gamma);
    let minv = BrokenMassInverse::new(h);
    let lmax = crate::fem::ipdg::max_generalized_eigenvalue_estimate(&a0, &minv, 60);
    let dt = match plan.wave_dt {
        Some(v) => v,
        None => {
            let dt_stab = 2.0 / lmax.sqrt();
            // also fit the interval: n_steps per interval
            (0.5 * dt_stab).min(interval_len / n_steps as f64)
        }
    };
    if lmax > 0.0 && dt * dt >= 4.0 / lmax {
        return Err(Error::config(format!(
            "wave time step dt = {dt} violates the stability bound; require dt < {:.6e}",
            (4.0 / lmax).sqrt()
        )));
    }
    // the coarse interval spans exactly n_steps fine steps
    let n_intervals = plan.n_intervals;

    // broken initial levels: zero initial velocity
    let u0 = inject_nodal(h, &problem.initial.node_values(h));
    let f_broken = {
        let nodal = problem.source.node_values(h);
        inject_nodal(h, &nodal)
    };
    let mass = assemble_broken_mass(h);

    // oracle trajectory and per-interval shared pieces
    let mut shared_per_interval: Vec<WaveIntervalShared> = Vec::with_capacity(n_intervals);
    {
        let mut catalog_cache: Option<BasisCatalog> = None;
        let mut oracle_pair: Option<(Vec<f64>, Vec<f64>)> = if plan.with_oracle {
            Some((u0.clone(), u0.clone()))
        } else {
            None
        };
        for n in 0..n_intervals {
            let t_left = n as f64 * interval_len;
            let field_n = problem.field.evaluate_at(t_left)?;
            let a_dg = assemble_ipdg(h, &field_n, plan.gamma);
            if catalog_cache.is_none() || problem.field.time_law != TimeLaw::Constant {
                catalog_cache = Some(build_catalog(problem, plan, &field_n, n)?);
            }
            let catalog = catalog_cache.as_ref().unwrap();
            let conv = convert_catalog(catalog, |c| nodal_to_broken(c, h));
            let raw_snaps: Option<Vec<(usize, Vec<LocalVector>)>> =
                plan.with_snapshot_ref.then(|| conv.test_columns.clone());

            let oracle_end = match &mut oracle_pair {
                Some((curr, prev)) => {
                    // march n_steps explicitly from (curr, prev)
                    let mut c = curr.clone();
                    let mut p = prev.clone();
                    for _ in 0..n_steps {
                        let au = a_dg.matvec(&c);
                        let corr = minv.apply(&au);
                        let next: Vec<f64> = (0..c.len())
                            .map(|i| 2.0 * c[i] - p[i] + dt * dt * (f_broken[i] - corr[i]))
                            .collect();
                        p = std::mem::replace(&mut c, next);
                    }
                    *curr = c.clone();
                    *prev = p;
                    Some(c)
                }
                None => None,
            };

            let n_dofs = mass.nrows();
            let mut all_columns = conv.permanent.clone();
            all_columns.extend(conv.candidates.iter().cloned());
            let mut snap_ranges = vec![0..0; conv.region_ids.len()];
            if let Some(snaps) = &raw_snaps {
                for (slot, (_, cols)) in snaps.iter().enumerate() {
                    let start = all_columns.len();
                    all_columns.extend(cols.iter().cloned());
                    snap_ranges[slot] = start..all_columns.len();
                }
            }
            let apply_m = |col: &LocalVector, out: &mut [f64]| {
                mass.scatter_mul(&col.idx, &col.val, out);
            };
            let apply_a = |col: &LocalVector, out: &mut [f64]| {
                a_dg.scatter_mul(&col.idx, &col.val, out);
            };
            let reach = 4 * h.nx_fine + 8;
            let m_red = reduced_matrix(&all_columns, n_dofs, reach, apply_m);
            let a_red = reduced_matrix(&all_columns, n_dofs, reach, apply_a);
            let mf = mass.matvec(&f_broken);
            let f_red: Vec<f64> = all_columns.iter().map(|c| c.dot_dense(&mf)).collect();
            let test = TestSpace::build(conv.test_columns, &mass);
            let t_m = reduced_cross(&test.columns, &all_columns, n_dofs, reach, apply_m);
            let t_a = reduced_cross(&test.columns, &all_columns, n_dofs, reach, apply_a);
            let f_test: Vec<f64> = test.columns.iter().map(|c| c.dot_dense(&mf)).collect();
            let n_perm = conv.permanent.len();
            let n_cands = conv.candidates.len();
            let cand_images = Mat::from_fn(test.n_columns(), n_cands, |i, j| {
                t_m[(i, n_perm + j)]
            });
            // the dependence penalty only ever sees permanent + candidates
            let gram = column_gram(&all_columns[..n_perm + n_cands]);

            shared_per_interval.push(WaveIntervalShared {
                region_ids: conv.region_ids,
                cand_refs: conv.cand_refs,
                columns: std::sync::Arc::new(all_columns),
                n_perm,
                snap_ranges,
                m_red: std::sync::Arc::new(m_red),
                a_red: std::sync::Arc::new(a_red),
                f_red,
                t_m: std::sync::Arc::new(t_m),
                t_a: std::sync::Arc::new(t_a),
                f_test,
                test,
                cand_images: std::sync::Arc::new(cand_images),
                gram: std::sync::Arc::new(gram),
                mass: mass.clone(),
                n_dofs,
                dt,
                n_steps,
                oracle_end,
            });
        }
    }

    match plan.method {
        SamplerMethod::Gibbs => {
            // one trajectory; per interval a full Gibbs pass, the final sweep
            // feeds the next interval
            let mut chains = Vec::new();
            let mut norms_all = Vec::new();
            let mut selections = Vec::new();
            let mut models = Vec::new();
            let mut curr = u0.clone();
            let mut prev = u0.clone();
            for (n, shared) in shared_per_interval.iter().enumerate() {
                let mut model = shared.make_model(n, &curr, &prev)?;
                let norms = region_norms(model.base_residual());
                let selection = select_regions(&norms.sup, plan.region_mode);
                if plan.with_snapshot_ref {
                    model.snapshot_ref = Some(shared.snapshot_reference(&model, &selection)?);
                }
                let prior = build_prior(&model, norms.global, &norms.sup, plan)?;
                let chain = run_sampler(&model, &prior, &selection, plan, n)?;
                let last_rec = chain.records.last().unwrap();
                let last_sol = IntervalSolution {
                    active: last_rec.selection.candidates.clone(),
                    beta: last_rec.selection.beta.clone(),
                    residual: model.base_residual().clone(),
                    residual_norm: last_rec.residual_norm,
                };
                let (c, p) = model.exit_fine_states(&last_sol);
                curr = c;
                prev = p;
                chains.push(chain);
                norms_all.push(norms);
                selections.push(selection);
                models.push(model);
            }
            let final_model = models.last().unwrap();
            let final_chain = chains.last().unwrap();
            let burn = plan.effective_burn_in();
            let stats = chain_statistics(final_model, final_chain, burn);
            let final_fields = ensemble_fields(final_model, final_chain, burn);
            let mean_error = final_model
                .oracle
                .as_ref()
                .map(|o| relative_error(&stats.mean, o, &final_model.error_op));
            let mean_error_snapshot = final_model
                .snapshot_ref
                .as_ref()
                .map(|r| relative_error(&stats.mean, r, &final_model.error_op));
            Ok(RunOutput {
                formulation: plan.formulation,
                candidate_labels: candidate_labels(final_model),
                final_fields,
                final_mean: stats.mean,
                final_std: stats.std,
                final_frequencies: stats.frequencies,
                oracle_final: final_model.oracle.clone(),
                fixed_final: None,
                error_op: final_model.error_op.clone(),
                mean_error,
                mean_error_snapshot,
                norms_per_interval: norms_all,
                selections,
                chains,
            })
        }
        SamplerMethod::Sequential => run_wave_sequential(plan, &shared_per_interval, &u0),
    }
}

/// Sequential sampling in the previous-state posterior: independent
/// trajectories, each drawing a fresh selection per interval.
fn run_wave_sequential(
    plan: &RunPlan,
    shared: &[WaveIntervalShared],
    u0: &[f64],
) -> Result<RunOutput> {
    use rand::{RngExt, SeedableRng};
    let n_intervals = shared.len();
    let mut records_per_interval: Vec<Vec<SampleRecord>> =
        vec![Vec::with_capacity(plan.n_samples); n_intervals];
    let mut final_fields = Vec::with_capacity(plan.n_samples);
    let mut norms_first_traj: Vec<RegionNorms> = Vec::new();
    let mut selections_first_traj: Vec<Vec<bool>> = Vec::new();
    // labels and final outputs come from a model of the last interval
    let mut label_model: Option<WaveIntervalModel> = None;

    for traj in 0..plan.n_samples {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
            plan.seed,
            "trajectory",
            traj as u64,
        ));
        let mut curr = u0.to_vec();
        let mut prev = u0.to_vec();
        for (n, sh) in shared.iter().enumerate() {
            let mut model = sh.make_model(n, &curr, &prev)?;
            let norms = region_norms(model.base_residual());
            let selection = match plan.region_mode {
                RegionMode::TopFraction(_) => select_regions(&norms.sup, plan.region_mode),
                RegionMode::Probabilistic => {
                    let probs = region_prior(&norms.sup, norms.global, plan.n_omega)?;
                    probs
                        .iter()
                        .map(|p| rng.random_bool(p.clamp(0.0, 1.0)))
                        .collect()
                }
            };
            if plan.with_snapshot_ref {
                model.snapshot_ref = Some(sh.snapshot_reference(&model, &selection)?);
            }
            let prior = build_prior(&model, norms.global, &norms.sup, plan)?;
            let active: Vec<bool> = model
                .candidates()
                .iter()
                .map(|c| {
                    selection[c.region_slot]
                        && rng.random_bool(
                            prior.candidate_probs[c.region_slot][c.local_index].clamp(0.0, 1.0),
                        )
                })
                .collect();
            let sol = model.solve_beta(&active)?;
            let (error, error_snapshot) = model.errors(&sol);
            records_per_interval[n].push(SampleRecord {
                iteration: traj,
                selection: BasisSelection {
                    regions: selection.clone(),
                    candidates: sol.active.clone(),
                    beta: sol.beta.clone(),
                },
                residual_norm: sol.residual_norm,
                error,
                error_snapshot,
                n_active_columns: model.gram_columns(&sol.active).len(),
            });
            if traj == 0 {
                norms_first_traj.push(norms);
                selections_first_traj.push(selection);
            }
            if n == n_intervals - 1 {
                final_fields.push(model.reconstruct(&sol));
                if label_model.is_none() {
                    label_model = Some(model);
                }
                break;
            }
            let (c, p) = model.exit_fine_states(&sol);
            curr = c;
            prev = p;
        }
    }

    let label_model = label_model.expect("at least one trajectory");
    let chains: Vec<SampleChain> = records_per_interval
        .into_iter()
        .enumerate()
        .map(|(n, records)| SampleChain {
            interval: n,
            seed: plan.seed,
            records,
        })
        .collect();

    // ensemble statistics over trajectory-final fields
    let (mean, std) = mean_std(&final_fields);
    let final_chain = chains.last().unwrap();
    let mut freq = vec![0.0; label_model.candidates().len()];
    for rec in &final_chain.records {
        for (c, on) in rec.selection.candidates.iter().enumerate() {
            if *on {
                freq[c] += 1.0;
            }
        }
    }
    for f in &mut freq {
        *f /= final_chain.records.len() as f64;
    }
    let mean_error = label_model
        .oracle
        .as_ref()
        .map(|o| relative_error(&mean, o, &label_model.error_op));
    let mean_error_snapshot = label_model
        .snapshot_ref
        .as_ref()
        .map(|r| relative_error(&mean, r, &label_model.error_op));

    Ok(RunOutput {
        formulation: plan.formulation,
        candidate_labels: candidate_labels(&label_model),
        final_fields,
        final_mean: mean,
        final_std: std,
        final_frequencies: freq,
        oracle_final: label_model.oracle.clone(),
        fixed_final: None,
        error_op: label_model.error_op.clone(),
        mean_error,
        mean_error_snapshot,
        norms_per_interval: norms_first_traj,
        selections: selections_first_traj,
        chains,
    })
}

pub(crate) fn mean_std(fields: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    assert!(!fields.is_empty());
    let n = fields[0].len();
    let k = fields.len() as f64;
    let mut mean = vec![0.0; n];
    for f in fields {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / k;
        }
    }
    let mut var = vec![0.0; n];
    if fields.len() > 1 {
        for f in fields {
            for i in 0..n {
                var[i] += (f[i] - mean[i]) * (f[i] - mean[i]) / (k - 1.0);
            }
        }
    }
    (mean, var.iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Builds the first-interval reduced model for the CG or mixed formulation
/// (fixed-mode anchor from the initial data); used by validation suites
/// that exercise a single interval directly.
pub fn first_interval_model(problem: &Problem, plan: &RunPlan) -> Result<LinearIntervalModel> {
    let interval_len = plan.t_end / plan.n_intervals as f64;
    let dt = interval_len / plan.substeps as f64;
    let field_0 = problem.field.evaluate_at(0.0)?;
    let catalog = build_catalog(problem, plan, &field_0, 0)?;
    let pieces = match plan.formulation {
        FormulationTag::Cg => {
            cg_interval(problem, plan, &field_0, &catalog, dt, 0, None, None)?
        }
        FormulationTag::Mixed => {
            mixed_interval(problem, plan, &field_0, &catalog, dt, 0, None, None)?
        }
        FormulationTag::Ipdg => {
            return Err(Error::config(
                "first_interval_model covers the one-step formulations; use \
                 first_wave_model for the wave",
            ))
        }
    };
    Ok(pieces.model)
}

/// Builds the first-interval wave model from the initial data.
pub fn first_wave_model(problem: &Problem, plan: &RunPlan) -> Result<WaveIntervalModel> {
    let h = &problem.hierarchy;
    let interval_len = plan.t_end / plan.n_intervals as f64;
    let field_0 = problem.field.evaluate_at(0.0)?;
    let a_dg = assemble_ipdg(h, &field_0, plan.gamma);
    let mass = assemble_broken_mass(h);
    let minv = BrokenMassInverse::new(h);
    let lmax = crate::fem::ipdg::max_generalized_eigenvalue_estimate(&a_dg, &minv, 60);
    let dt = plan
        .wave_dt
        .unwrap_or(((2.0 / lmax.sqrt()) * 0.5).min(interval_len / plan.steps_per_interval as f64));
    let catalog = build_catalog(problem, plan, &field_0, 0)?;
    let conv = convert_catalog(&catalog, |c| nodal_to_broken(c, h));
    let n_dofs = mass.nrows();
    let mut all_columns = conv.permanent.clone();
    all_columns.extend(conv.candidates.iter().cloned());
    let apply_m = |col: &LocalVector, out: &mut [f64]| {
        mass.scatter_mul(&col.idx, &col.val, out);
    };
    let apply_a = |col: &LocalVector, out: &mut [f64]| {
        a_dg.scatter_mul(&col.idx, &col.val, out);
    };
    let u0 = inject_nodal(h, &problem.initial.node_values(h));
    let f_broken = inject_nodal(h, &problem.source.node_values(h));
    let reach = 4 * h.nx_fine + 8;
    let m_red = reduced_matrix(&all_columns, n_dofs, reach, apply_m);
    let a_red = reduced_matrix(&all_columns, n_dofs, reach, apply_a);
    let mf = mass.matvec(&f_broken);
    let f_red: Vec<f64> = all_columns.iter().map(|c| c.dot_dense(&mf)).collect();
    let test = TestSpace::build(conv.test_columns, &mass);
    let t_m = reduced_cross(&test.columns, &all_columns, n_dofs, reach, apply_m);
    let t_a = reduced_cross(&test.columns, &all_columns, n_dofs, reach, apply_a);
    let f_test: Vec<f64> = test.columns.iter().map(|c| c.dot_dense(&mf)).collect();
    let n_perm = conv.permanent.len();
    let n_cands = conv.candidates.len();
    let cand_images = Mat::from_fn(test.n_columns(), n_cands, |i, j| t_m[(i, n_perm + j)]);
    let gram = column_gram(&all_columns[..n_perm + n_cands]);
    let n_slots = conv.region_ids.len();
    let shared = WaveIntervalShared {
        region_ids: conv.region_ids,
        cand_refs: conv.cand_refs,
        columns: std::sync::Arc::new(all_columns),
        n_perm,
        snap_ranges: vec![0..0; n_slots],
        m_red: std::sync::Arc::new(m_red),
        a_red: std::sync::Arc::new(a_red),
        f_red,
        t_m: std::sync::Arc::new(t_m),
        t_a: std::sync::Arc::new(t_a),
        f_test,
        test,
        cand_images: std::sync::Arc::new(cand_images),
        gram: std::sync::Arc::new(gram),
        mass,
        n_dofs,
        dt,
        n_steps: plan.steps_per_interval,
        oracle_end: None,
    };
    shared.make_model(0, &u0, &u0)
}

// ---- the fixed solution as a standalone operation ----

/// Marches the whole horizon with the permanent basis only and returns the
/// states at interval ends. For CG the states are interior-dof vectors; for
/// mixed they are fine-cell pressures with the velocity at the final
/// interval; for the wave they are broken fields.
pub struct FixedTrajectory {
    pub states: Vec<Vec<f64>>,
    /// Mixed only: the fixed velocity at the final interval.
    pub velocity_final: Option<Vec<f64>>,
}

pub fn fixed_solution(
    problem: &Problem,
    plan: &RunPlan,
    catalog: &BasisCatalog,
) -> Result<FixedTrajectory> {
    let h = &problem.hierarchy;
    let interval_len = plan.t_end / plan.n_intervals as f64;
    let plan = {
        let mut p = plan.clone();
        p.with_oracle = false;
        p
    };
    let plan = &plan;
    match plan.formulation {
        FormulationTag::Cg => {
            let dt = interval_len / plan.substeps as f64;
            let mut states = Vec::new();
            let mut prev: Option<Vec<f64>> = None;
            for n in 0..plan.n_intervals {
                let field_n = problem.field.evaluate_at(n as f64 * interval_len)?;
                let pieces = cg_interval(
                    problem,
                    plan,
                    &field_n,
                    catalog,
                    dt,
                    n,
                    prev.as_deref(),
                    None,
                )?;
                prev = Some(pieces.fixed_end.clone());
                states.push(pieces.fixed_end);
            }
            Ok(FixedTrajectory {
                states,
                velocity_final: None,
            })
        }
        FormulationTag::Mixed => {
            let dt = interval_len / plan.substeps as f64;
            let mut states = Vec::new();
            let mut velocity_final = None;
            let mut prev: Option<Vec<f64>> = None;
            for n in 0..plan.n_intervals {
                let field_n = problem.field.evaluate_at(n as f64 * interval_len)?;
                let pieces = mixed_interval(
                    problem,
                    plan,
                    &field_n,
                    catalog,
                    dt,
                    n,
                    prev.as_deref(),
                    None,
                )?;
                prev = Some(pieces.fixed_end.clone());
                velocity_final = pieces.model.offset_field.clone();
                states.push(pieces.fixed_end);
            }
            Ok(FixedTrajectory {
                states,
                velocity_final,
            })
        }
        FormulationTag::Ipdg => {
            // permanent-only wave march, interval by interval
            let field_0 = problem.field.evaluate_at(0.0)?;
            let a0 = assemble_ipdg(h, &field_0, plan.gamma);
            let minv = BrokenMassInverse::new(h);
            let lmax = crate::fem::ipdg::max_generalized_eigenvalue_estimate(&a0, &minv, 60);
            let dt = plan
                .wave_dt
                .unwrap_or((0.5 * 2.0 / lmax.sqrt()).min(interval_len / plan.steps_per_interval as f64));
            let mass = assemble_broken_mass(h);
            let u0 = inject_nodal(h, &problem.initial.node_values(h));
            let f_broken = inject_nodal(h, &problem.source.node_values(h));
            let mut curr = u0.clone();
            let mut prev = u0;
            let mut states = Vec::new();
            for n in 0..plan.n_intervals {
                let field_n = problem.field.evaluate_at(n as f64 * interval_len)?;
                let a_dg = assemble_ipdg(h, &field_n, plan.gamma);
                let conv = convert_catalog(catalog, |c| nodal_to_broken(c, h));
                let n_dofs = mass.nrows();
                let apply_m = |col: &LocalVector, out: &mut [f64]| {
                    mass.scatter_mul(&col.idx, &col.val, out);
                };
                let apply_a = |col: &LocalVector, out: &mut [f64]| {
                    a_dg.scatter_mul(&col.idx, &col.val, out);
                };
                let reach = 4 * h.nx_fine + 8;
                let m_red = reduced_matrix(&conv.permanent, n_dofs, reach, apply_m);
                let a_red = reduced_matrix(&conv.permanent, n_dofs, reach, apply_a);
                let mf = mass.matvec(&f_broken);
                let f_red: Vec<f64> = conv.permanent.iter().map(|c| c.dot_dense(&mf)).collect();
                let mc = mass.matvec(&curr);
                let mp = mass.matvec(&prev);
                let pc: Vec<f64> = conv.permanent.iter().map(|c| c.dot_dense(&mc)).collect();
                let pp: Vec<f64> = conv.permanent.iter().map(|c| c.dot_dense(&mp)).collect();
                let m = conv.permanent.len();
                let llt = m_red
                    .llt(faer::Side::Lower)
                    .map_err(|_| Error::solver("fixed wave reduced mass not SPD"))?;
                let solve = |rhs: &[f64]| -> Vec<f64> {
                    let b = Mat::from_fn(m, 1, |i, _| rhs[i]);
                    let x = faer::linalg::solvers::Solve::solve(&llt, &b);
                    (0..m).map(|i| x[(i, 0)]).collect()
                };
                let mut bc = solve(&pc);
                let mut bp = solve(&pp);
                for _ in 0..plan.steps_per_interval {
                    let rhs: Vec<f64> = (0..m)
                        .map(|i| {
                            let mcur: f64 = (0..m).map(|j| m_red[(i, j)] * bc[j]).sum();
                            let mprev: f64 = (0..m).map(|j| m_red[(i, j)] * bp[j]).sum();
                            let acur: f64 = (0..m).map(|j| a_red[(i, j)] * bc[j]).sum();
                            2.0 * mcur - mprev + dt * dt * (f_red[i] - acur)
                        })
                        .collect();
                    let bn = solve(&rhs);
                    bp = std::mem::replace(&mut bc, bn);
                }
                curr = vec![0.0; n_dofs];
                prev = vec![0.0; n_dofs];
                for (k, col) in conv.permanent.iter().enumerate() {
                    col.scatter_add(bc[k], &mut curr);
                    col.scatter_add(bp[k], &mut prev);
                }
                let _ = n;
                states.push(curr.clone());
            }
            Ok(FixedTrajectory {
                states,
                velocity_final: None,
            })
        }
    }
}
