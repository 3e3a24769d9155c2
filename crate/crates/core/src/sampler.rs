//! Sequential (prior-draw) and full Gibbs sampling over basis selections.
//!
//! Both samplers operate on an [`IntervalModel`]: a reduced one-step (or
//! one-interval) system that can solve for the coefficients of any active
//! candidate set and report the resulting residual in test coordinates.
//! Region indicators are either held fixed (top-fraction selection) or drawn
//! from the prior; candidate indicators are drawn per realization
//! (sequential) or resampled bit by bit with the conditional flip
//! probability (Gibbs).

use faer::Mat;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bayes::{gibbs_flip_probability, gram_update_penalty, PosteriorSpec, PriorModel};
use crate::residual::ResidualVector;
use crate::{derive_seed, Result};

/// One candidate basis function in a model's flattened candidate list.
#[derive(Clone, Copy, Debug)]
pub struct CandidateRef {
    /// Region slot in the model's region ordering.
    pub region_slot: usize,
    /// Index within the region's candidate set.
    pub local_index: usize,
}

/// A solved configuration: indicator bits, coefficients, and the residual.
#[derive(Clone, Debug)]
pub struct IntervalSolution {
    /// Active candidate bits (the model's candidate ordering).
    pub active: Vec<bool>,
    /// Coefficients over the model's active solve columns.
    pub beta: Vec<f64>,
    pub residual: ResidualVector,
    pub residual_norm: f64,
}

/// Borrowed dense blocks of a one-step linear model, enabling the
/// incremental (rank-one Cholesky) Gibbs sweep.
pub struct LinearParts<'a> {
    /// Reduced operator over solve columns.
    pub c_mat: &'a Mat<f64>,
    pub rhs: &'a [f64],
    /// Test-by-solve-column images.
    pub t_op: &'a Mat<f64>,
    /// Affine part of the residual in test coordinates.
    pub base: &'a [f64],
    /// Leading solve columns active in every configuration.
    pub always_on: usize,
    pub offsets: &'a [usize],
}

/// The reduced system a sampler works against for one time interval.
pub trait IntervalModel {
    fn n_region_slots(&self) -> usize;
    fn region_id(&self, slot: usize) -> usize;
    fn candidates(&self) -> &[CandidateRef];

    /// Galerkin solve with the given candidate bits active (permanent basis
    /// always included), returning coefficients and the tested residual.
    fn solve_beta(&self, active: &[bool]) -> Result<IntervalSolution>;

    /// Normalized Gram matrix of all trial columns (permanent first).
    fn gram(&self) -> &Mat<f64>;
    /// Gram-matrix indices of the active basis for a candidate mask.
    fn gram_columns(&self, active: &[bool]) -> Vec<usize>;
    fn gram_column_of_candidate(&self, cand: usize) -> usize;

    /// Candidate images in the region's test-coordinate slice.
    fn candidate_images(&self, slot: usize) -> Vec<Vec<f64>>;
    /// Residual of the permanent-only configuration.
    fn base_residual(&self) -> &ResidualVector;

    /// Fine field for statistics (solver-dof layout).
    fn reconstruct(&self, sol: &IntervalSolution) -> Vec<f64>;
    /// Relative errors versus the fine oracle and the snapshot reference.
    fn errors(&self, sol: &IntervalSolution) -> (Option<f64>, Option<f64>);

    /// Dense blocks for the incremental Gibbs sweep; `None` falls back to
    /// full re-solves per flip.
    fn linear_parts(&self) -> Option<LinearParts<'_>> {
        None
    }
}

/// Binary indicators plus coefficients for one realization.
#[derive(Clone, Debug)]
pub struct BasisSelection {
    /// Region indicator bits (one per region slot).
    pub regions: Vec<bool>,
    /// Candidate indicator bits (the model's candidate ordering); a set bit
    /// implies its region bit is set.
    pub candidates: Vec<bool>,
    /// Coefficients over the active solve columns.
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub iteration: usize,
    pub selection: BasisSelection,
    pub residual_norm: f64,
    pub error: Option<f64>,
    pub error_snapshot: Option<f64>,
    /// Permanent plus active candidate column count.
    pub n_active_columns: usize,
}

/// Ordered records of one sampler run on one time interval.
#[derive(Clone, Debug)]
pub struct SampleChain {
    pub interval: usize,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

/// How region indicators are chosen.
#[derive(Clone, Debug)]
pub enum RegionSelection {
    /// Deterministic set (largest-residual regions), held for the interval.
    Fixed(Vec<bool>),
    /// Bernoulli draws from the prior region probabilities.
    Probabilistic,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub n_sweeps: usize,
    /// Fraction of leading records dropped by the statistics.
    pub burn_in_frac: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_samples: 20,
            n_sweeps: 30,
            burn_in_frac: 0.25,
            seed: 0,
            threads: 1,
        }
    }
}

fn draw_regions(prior: &PriorModel, mode: &RegionSelection, rng: &mut ChaCha8Rng) -> Vec<bool> {
    match mode {
        RegionSelection::Fixed(bits) => bits.clone(),
        RegionSelection::Probabilistic => prior
            .region_probs
            .iter()
            .map(|p| rng.random_bool(p.clamp(0.0, 1.0)))
            .collect(),
    }
}

fn draw_candidates<M: IntervalModel + ?Sized>(
    model: &M,
    prior: &PriorModel,
    regions: &[bool],
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    model
        .candidates()
        .iter()
        .map(|c| {
            regions[c.region_slot]
                && rng.random_bool(
                    prior.candidate_probs[c.region_slot][c.local_index].clamp(0.0, 1.0),
                )
        })
        .collect()
}

fn record_from<M: IntervalModel + ?Sized>(
    model: &M,
    iteration: usize,
    regions: Vec<bool>,
    sol: IntervalSolution,
) -> SampleRecord {
    let (error, error_snapshot) = model.errors(&sol);
    let n_active_columns = model.gram_columns(&sol.active).len();
    SampleRecord {
        iteration,
        selection: BasisSelection {
            regions,
            candidates: sol.active.clone(),
            beta: sol.beta.clone(),
        },
        residual_norm: sol.residual_norm,
        error,
        error_snapshot,
        n_active_columns,
    }
}

/// Independent draws from the prior: each realization draws region bits,
/// then candidate bits within selected regions, and solves for the
/// coefficients (the conditional mean given the indicators). Realizations
/// run concurrently up to `threads`, deterministically per seed.
pub fn sequential_sample<M: IntervalModel + Sync + ?Sized>(
    model: &M,
    prior: &PriorModel,
    mode: &RegionSelection,
    cfg: &SamplerConfig,
    interval: usize,
) -> Result<SampleChain> {
    let n = cfg.n_samples;
    let threads = cfg.threads.max(1).min(n.max(1));
    let mut records: Vec<Option<SampleRecord>> = vec![None; n];
    let mut empty_count = 0usize;

    let run_one = |i: usize| -> Result<(SampleRecord, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "realization", i as u64));
        let regions = draw_regions(prior, mode, &mut rng);
        let active = draw_candidates(model, prior, &regions, &mut rng);
        let was_empty = !active.iter().any(|b| *b);
        let sol = model.solve_beta(&active)?;
        Ok((record_from(model, i, regions, sol), was_empty))
    };

    if threads <= 1 {
        for (i, slot) in records.iter_mut().enumerate() {
            let (rec, empty) = run_one(i)?;
            empty_count += empty as usize;
            *slot = Some(rec);
        }
    } else {
        let indices: Vec<usize> = (0..n).collect();
        let results: Vec<Vec<(usize, Result<(SampleRecord, bool)>)>> =
            std::thread::scope(|scope| {
                indices
                    .chunks(n.div_ceil(threads))
                    .map(|chunk| {
                        let run = &run_one;
                        scope.spawn(move || {
                            chunk.iter().map(|i| (*i, run(*i))).collect::<Vec<_>>()
                        })
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .map(|h| h.join().expect("realization worker panicked"))
                    .collect()
            });
        for (i, res) in results.into_iter().flatten() {
            let (rec, empty) = res?;
            empty_count += empty as usize;
            records[i] = Some(rec);
        }
    }

    if empty_count > 0 {
        eprintln!(
            "note: {empty_count} of {n} realizations drew an empty selection \
             (permanent-only solution used)"
        );
    }
    Ok(SampleChain {
        interval,
        seed: cfg.seed,
        records: records.into_iter().map(|r| r.unwrap()).collect(),
    })
}

/// Full Gibbs sampling: starting from a prior draw, every sweep revisits
/// each candidate of the selected regions in fixed region-then-candidate
/// order, resampling its bit from the conditional probability that combines
/// prior odds, the residual change, and the linear-dependence penalty.
/// One record is emitted per sweep.
///
/// Linear models run through an incremental Cholesky sweep (each flip costs
/// `O(m^2)`); other models re-solve both configurations per flip.
pub fn gibbs_sample<M: IntervalModel + ?Sized>(
    model: &M,
    prior: &PriorModel,
    mode: &RegionSelection,
    posterior: &PosteriorSpec,
    cfg: &SamplerConfig,
    interval: usize,
) -> Result<SampleChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "gibbs", 0));
    // region bits drawn once and held fixed across sweeps
    let regions = draw_regions(prior, mode, &mut rng);
    let active = draw_candidates(model, prior, &regions, &mut rng);

    let records = if model.linear_parts().is_some() {
        gibbs_sweeps_fast(model, prior, &regions, active, posterior, cfg, &mut rng)?
    } else {
        gibbs_sweeps_generic(model, prior, &regions, active, posterior, cfg, &mut rng)?
    };

    Ok(SampleChain {
        interval,
        seed: cfg.seed,
        records,
    })
}

fn gibbs_sweeps_generic<M: IntervalModel + ?Sized>(
    model: &M,
    prior: &PriorModel,
    regions: &[bool],
    mut active: Vec<bool>,
    posterior: &PosteriorSpec,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleRecord>> {
    let mut current = model.solve_beta(&active)?;
    let sigma_l = posterior.sigma_l;
    let gram = model.gram();
    let mut records = Vec::with_capacity(cfg.n_sweeps);

    for sweep in 0..cfg.n_sweeps {
        for (c, cand) in model.candidates().iter().enumerate() {
            if !regions[cand.region_slot] {
                continue;
            }
            let alpha = prior.candidate_probs[cand.region_slot][cand.local_index];

            // solve the complementary configuration
            let mut other_active = active.clone();
            other_active[c] = !active[c];
            let other = model.solve_beta(&other_active)?;
            let (res_with, res_without) = if active[c] {
                (current.residual_norm, other.residual_norm)
            } else {
                (other.residual_norm, current.residual_norm)
            };

            // penalty for adding this candidate to the rest of the active set
            let mut rest = active.clone();
            rest[c] = false;
            let rest_cols = model.gram_columns(&rest);
            let penalty = gram_update_penalty(gram, &rest_cols, model.gram_column_of_candidate(c));

            let p = gibbs_flip_probability(
                alpha,
                res_without * res_without,
                res_with * res_with,
                penalty,
                sigma_l,
            );
            let set = rng.random_bool(p.clamp(0.0, 1.0));
            if set != active[c] {
                active = other_active;
                current = other;
            }
        }
        records.push(record_from(model, sweep, regions.to_vec(), current.clone()));
    }
    Ok(records)
}

/// Incremental sweep state for linear models: Cholesky factors of the
/// active reduced operator and of the active normalized Gram block are
/// updated and downdated per flip.
struct FastSweep<'a> {
    parts: LinearParts<'a>,
    solve_fact: crate::linalg::CholeskyUpdater,
    gram_fact: crate::linalg::CholeskyUpdater,
    gram: &'a Mat<f64>,
}

impl<'a> FastSweep<'a> {
    const PIVOT_TOL: f64 = 1e-12;

    fn cross_solve(&self, col: usize) -> Vec<f64> {
        self.solve_fact
            .order
            .iter()
            .map(|o| self.parts.c_mat[(*o, col)])
            .collect()
    }

    fn cross_gram(&self, col: usize) -> Vec<f64> {
        self.gram_fact
            .order
            .iter()
            .map(|o| self.gram[(*o, col)])
            .collect()
    }

    fn push_solve(&mut self, col: usize) -> bool {
        let cross = self.cross_solve(col);
        let diag = self.parts.c_mat[(col, col)];
        self.solve_fact
            .try_push(col, &cross, diag, Self::PIVOT_TOL * diag.abs().max(1e-300))
            .is_some()
    }

    fn push_gram(&mut self, col: usize) -> bool {
        let cross = self.cross_gram(col);
        self.gram_fact
            .try_push(col, &cross, self.gram[(col, col)], 1e-14)
            .is_some()
    }

    /// Solution and residual norm of the current factor set.
    fn solve_residual(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let rhs: Vec<f64> = self
            .solve_fact
            .order
            .iter()
            .map(|o| self.parts.rhs[*o])
            .collect();
        let beta = self.solve_fact.solve(&rhs);
        let nt = self.parts.base.len();
        let mut coords = self.parts.base.to_vec();
        for (k, col) in self.solve_fact.order.iter().enumerate() {
            let b = beta[k];
            if b != 0.0 {
                for (i, c) in coords.iter_mut().enumerate().take(nt) {
                    *c -= self.parts.t_op[(i, *col)] * b;
                }
            }
        }
        let norm = crate::linalg::norm2(&coords);
        (beta, coords, norm)
    }

    /// Dependence penalty for adding the gram column (factor must currently
    /// exclude it).
    fn penalty(&self, gram_col: usize) -> f64 {
        let cross = self.cross_gram(gram_col);
        self.gram_fact
            .probe_pivot(&cross, self.gram[(gram_col, gram_col)])
            .clamp(1e-300, 1.0)
    }

    /// Materializes an IntervalSolution with beta over ascending solve
    /// columns, as `solve_beta` would produce.
    fn materialize(&self, active: &[bool], interval: usize) -> IntervalSolution {
        let (beta_factor, coords, norm) = self.solve_residual();
        let mut order: Vec<(usize, f64)> = self
            .solve_fact
            .order
            .iter()
            .copied()
            .zip(beta_factor)
            .collect();
        // dropped (dependent) candidates appear with coefficient zero
        let mut cols: Vec<usize> = (0..self.parts.always_on).collect();
        for (k, on) in active.iter().enumerate() {
            if *on {
                cols.push(self.parts.always_on + k);
            }
        }
        order.sort_unstable_by_key(|(c, _)| *c);
        let mut beta = Vec::with_capacity(cols.len());
        let mut it = order.iter().peekable();
        for col in &cols {
            if it.peek().map(|(c, _)| c == col).unwrap_or(false) {
                beta.push(it.next().unwrap().1);
            } else {
                beta.push(0.0);
            }
        }
        IntervalSolution {
            active: active.to_vec(),
            beta,
            residual: ResidualVector {
                coords,
                offsets: self.parts.offsets.to_vec(),
                interval,
            },
            residual_norm: norm,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gibbs_sweeps_fast<M: IntervalModel + ?Sized>(
    model: &M,
    prior: &PriorModel,
    regions: &[bool],
    mut active: Vec<bool>,
    posterior: &PosteriorSpec,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleRecord>> {
    let parts = model.linear_parts().expect("fast path requires parts");
    let gram = model.gram();
    let mut sweep_state = FastSweep {
        parts,
        solve_fact: crate::linalg::CholeskyUpdater::new(),
        gram_fact: crate::linalg::CholeskyUpdater::new(),
        gram,
    };

    // initialize factors: always-on solve columns, permanent gram columns,
    // then the initially active candidates
    for col in 0..sweep_state.parts.always_on {
        if !sweep_state.push_solve(col) {
            return Err(crate::Error::solver(
                "permanent reduced block is numerically singular",
            ));
        }
    }
    let no_cands = vec![false; active.len()];
    for g in model.gram_columns(&no_cands) {
        // dependent permanent columns add no span; skip them in the penalty factor
        let _ = sweep_state.push_gram(g);
    }
    for c in 0..active.len() {
        if active[c] {
            let ok = sweep_state.push_solve(sweep_state.parts.always_on + c);
            if ok {
                let _ = sweep_state.push_gram(model.gram_column_of_candidate(c));
            } else {
                eprintln!("note: initial candidate {c} is dependent; dropped from the draw");
                active[c] = false;
            }
        }
    }

    let sigma_l = posterior.sigma_l;
    let mut current_norm = sweep_state.solve_residual().2;
    let mut records = Vec::with_capacity(cfg.n_sweeps);

    for sweep in 0..cfg.n_sweeps {
        for (c, cand) in model.candidates().iter().enumerate() {
            if !regions[cand.region_slot] {
                continue;
            }
            let alpha = prior.candidate_probs[cand.region_slot][cand.local_index];
            let solve_col = sweep_state.parts.always_on + c;
            let gram_col = model.gram_column_of_candidate(c);

            if !active[c] {
                // tentative add
                let added = sweep_state.push_solve(solve_col);
                let res_with = if added {
                    sweep_state.solve_residual().2
                } else {
                    current_norm // dependent column: guarded solve drops it
                };
                let penalty = sweep_state.penalty(gram_col);
                let p = gibbs_flip_probability(
                    alpha,
                    current_norm * current_norm,
                    res_with * res_with,
                    penalty,
                    sigma_l,
                );
                if rng.random_bool(p.clamp(0.0, 1.0)) {
                    active[c] = true;
                    if added {
                        current_norm = res_with;
                        let _ = sweep_state.push_gram(gram_col);
                    }
                } else if added {
                    // reject: the tentative column sits at the end
                    let last = sweep_state.solve_fact.len() - 1;
                    sweep_state.solve_fact.remove_at(last);
                }
            } else {
                // tentative remove
                let res_with = current_norm;
                let in_solve = sweep_state.solve_fact.position(solve_col);
                if let Some(p_solve) = in_solve {
                    sweep_state.solve_fact.remove_at(p_solve);
                }
                let res_without = sweep_state.solve_residual().2;
                if let Some(p_gram) = sweep_state.gram_fact.position(gram_col) {
                    sweep_state.gram_fact.remove_at(p_gram);
                }
                let penalty = sweep_state.penalty(gram_col);
                let p = gibbs_flip_probability(
                    alpha,
                    res_without * res_without,
                    res_with * res_with,
                    penalty,
                    sigma_l,
                );
                if rng.random_bool(p.clamp(0.0, 1.0)) {
                    // keep the candidate: restore the factors
                    if in_solve.is_some() && !sweep_state.push_solve(solve_col) {
                        eprintln!("note: candidate {c} became dependent on restore; dropped");
                        active[c] = false;
                        current_norm = res_without;
                        continue;
                    }
                    let _ = sweep_state.push_gram(gram_col);
                } else {
                    active[c] = false;
                    current_norm = res_without;
                }
            }
        }
        let sol = sweep_state.materialize(&active, 0);
        current_norm = sol.residual_norm;
        records.push(record_from(model, sweep, regions.to_vec(), sol));
    }
    Ok(records)
}

/// Pixel-wise mean/std of reconstructed fields, per-candidate inclusion
/// frequencies, and active column counts.
#[derive(Clone, Debug)]
pub struct ChainStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Inclusion frequency per candidate over the counted records.
    pub frequencies: Vec<f64>,
    /// Active column count per record (burn-in not trimmed here).
    pub counts: Vec<usize>,
    /// Records that entered the mean/std/frequency statistics.
    pub n_counted: usize,
}

/// Computes chain statistics; `burn_in_frac` of the leading records are
/// excluded from mean/std/frequencies (counts keep every record).
pub fn chain_statistics<M: IntervalModel + ?Sized>(
    model: &M,
    chain: &SampleChain,
    burn_in_frac: f64,
) -> ChainStats {
    assert!(!chain.records.is_empty(), "chain must be nonempty");
    let n = chain.records.len();
    let skip = (((n as f64) * burn_in_frac).floor() as usize).min(n - 1);
    let counted = &chain.records[skip..];

    let n_cands = model.candidates().len();
    let mut freq = vec![0.0; n_cands];
    let mut mean: Option<Vec<f64>> = None;
    let mut m2: Option<Vec<f64>> = None;
    let mut k = 0.0;
    for rec in counted {
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
        let field = model.reconstruct(&sol);
        k += 1.0;
        match (&mut mean, &mut m2) {
            (Some(mu), Some(s)) => {
                for i in 0..field.len() {
                    let d = field[i] - mu[i];
                    mu[i] += d / k;
                    s[i] += d * (field[i] - mu[i]);
                }
            }
            _ => {
                mean = Some(field.clone());
                m2 = Some(vec![0.0; field.len()]);
            }
        }
        for (c, on) in rec.selection.candidates.iter().enumerate() {
            if *on {
                freq[c] += 1.0;
            }
        }
    }
    let n_counted = counted.len();
    for f in &mut freq {
        *f /= n_counted as f64;
    }
    let mean = mean.unwrap();
    let std = m2
        .unwrap()
        .iter()
        .map(|s| {
            if n_counted > 1 {
                (s / (n_counted as f64 - 1.0)).max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    ChainStats {
        mean,
        std,
        frequencies: freq,
        counts: chain.records.iter().map(|r| r.n_active_columns).collect(),
        n_counted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::PosteriorVariant;

    /// A hand-built two-candidate model over a 3-dof space: permanent basis
    /// e0, candidates e1 and e2, diagonal operator. The exact posterior over
    /// the four configurations is enumerable.
    pub(crate) struct ToyModel {
        pub op: Vec<f64>,
        pub rhs: Vec<f64>,
        pub gram: Mat<f64>,
        pub cands: Vec<CandidateRef>,
        pub base: ResidualVector,
    }

    impl ToyModel {
        pub fn new() -> Self {
            let op = vec![2.0, 1.5, 3.0];
            let rhs = vec![1.0, 0.8, -0.9];
            let base = ResidualVector {
                coords: vec![0.0, rhs[1], rhs[2]],
                offsets: vec![0, 3],
                interval: 0,
            };
            ToyModel {
                op,
                rhs,
                gram: Mat::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 }),
                cands: vec![
                    CandidateRef {
                        region_slot: 0,
                        local_index: 0,
                    },
                    CandidateRef {
                        region_slot: 0,
                        local_index: 1,
                    },
                ],
                base,
            }
        }
    }

    impl IntervalModel for ToyModel {
        fn n_region_slots(&self) -> usize {
            1
        }
        fn region_id(&self, _slot: usize) -> usize {
            0
        }
        fn candidates(&self) -> &[CandidateRef] {
            &self.cands
        }
        fn solve_beta(&self, active: &[bool]) -> Result<IntervalSolution> {
            // trial columns: e0 always, e1/e2 when active; test = identity
            let mut cols = vec![0usize];
            for (k, on) in active.iter().enumerate() {
                if *on {
                    cols.push(k + 1);
                }
            }
            let mut u = vec![0.0; 3];
            let mut beta = Vec::new();
            for c in &cols {
                let b = self.rhs[*c] / self.op[*c];
                u[*c] = b;
                beta.push(b);
            }
            let coords: Vec<f64> = (0..3).map(|i| self.rhs[i] - self.op[i] * u[i]).collect();
            let norm = crate::linalg::norm2(&coords);
            Ok(IntervalSolution {
                active: active.to_vec(),
                beta,
                residual: ResidualVector {
                    coords,
                    offsets: vec![0, 3],
                    interval: 0,
                },
                residual_norm: norm,
            })
        }
        fn gram(&self) -> &Mat<f64> {
            &self.gram
        }
        fn gram_columns(&self, active: &[bool]) -> Vec<usize> {
            let mut cols = vec![0];
            for (k, on) in active.iter().enumerate() {
                if *on {
                    cols.push(k + 1);
                }
            }
            cols
        }
        fn gram_column_of_candidate(&self, cand: usize) -> usize {
            cand + 1
        }
        fn candidate_images(&self, _slot: usize) -> Vec<Vec<f64>> {
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]
        }
        fn base_residual(&self) -> &ResidualVector {
            &self.base
        }
        fn reconstruct(&self, sol: &IntervalSolution) -> Vec<f64> {
            let mut u = vec![0.0; 3];
            let mut k = 0;
            u[0] = sol.beta[k];
            k += 1;
            for (c, on) in sol.active.iter().enumerate() {
                if *on {
                    u[c + 1] = sol.beta[k];
                    k += 1;
                }
            }
            u
        }
        fn errors(&self, _sol: &IntervalSolution) -> (Option<f64>, Option<f64>) {
            (None, None)
        }
    }

    fn toy_prior() -> PriorModel {
        PriorModel {
            region_probs: vec![1.0],
            candidate_probs: vec![vec![0.5, 0.4]],
            n_omega: 1,
            n_basis: 1,
            local_norms: vec![1.0],
        }
    }

    #[test]
    fn sequential_is_deterministic_per_seed_and_thread_count() {
        let model = ToyModel::new();
        let prior = toy_prior();
        let cfg = SamplerConfig {
            n_samples: 12,
            seed: 5,
            ..Default::default()
        };
        let a =
            sequential_sample(&model, &prior, &RegionSelection::Probabilistic, &cfg, 0).unwrap();
        let b =
            sequential_sample(&model, &prior, &RegionSelection::Probabilistic, &cfg, 0).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.selection.candidates, rb.selection.candidates);
            assert_eq!(ra.residual_norm, rb.residual_norm);
        }
        let cfg4 = SamplerConfig { threads: 4, ..cfg };
        let c =
            sequential_sample(&model, &prior, &RegionSelection::Probabilistic, &cfg4, 0).unwrap();
        for (ra, rc) in a.records.iter().zip(&c.records) {
            assert_eq!(ra.selection.candidates, rc.selection.candidates);
        }
    }

    #[test]
    fn degenerate_priors_pin_the_selection() {
        let model = ToyModel::new();
        let mut prior = toy_prior();
        prior.candidate_probs = vec![vec![0.0, 0.0]];
        let cfg = SamplerConfig {
            n_samples: 5,
            seed: 1,
            ..Default::default()
        };
        let chain =
            sequential_sample(&model, &prior, &RegionSelection::Fixed(vec![true]), &cfg, 0)
                .unwrap();
        for rec in &chain.records {
            assert!(rec.selection.candidates.iter().all(|b| !b));
            assert_eq!(rec.n_active_columns, 1);
        }
        prior.candidate_probs = vec![vec![1.0, 1.0]];
        let chain =
            sequential_sample(&model, &prior, &RegionSelection::Fixed(vec![true]), &cfg, 0)
                .unwrap();
        let first = chain.records[0].residual_norm;
        for rec in &chain.records {
            assert!(rec.selection.candidates.iter().all(|b| *b));
            assert_eq!(rec.residual_norm, first);
        }
    }

    #[test]
    fn unselected_regions_never_contribute_candidates() {
        let model = ToyModel::new();
        let prior = toy_prior();
        let cfg = SamplerConfig {
            n_samples: 8,
            seed: 3,
            ..Default::default()
        };
        let chain =
            sequential_sample(&model, &prior, &RegionSelection::Fixed(vec![false]), &cfg, 0)
                .unwrap();
        for rec in &chain.records {
            assert!(rec.selection.candidates.iter().all(|b| !b));
        }
    }

    #[test]
    fn gibbs_saturates_under_tiny_sigma() {
        // with sigma_l -> 0 any residual reduction dominates: both candidates
        // reduce the residual, so the chain saturates to all-included
        let model = ToyModel::new();
        let prior = toy_prior();
        let posterior = PosteriorSpec::new(PosteriorVariant::AroundFixed, 1e-8);
        let cfg = SamplerConfig {
            n_sweeps: 10,
            seed: 9,
            ..Default::default()
        };
        let chain = gibbs_sample(
            &model,
            &prior,
            &RegionSelection::Fixed(vec![true]),
            &posterior,
            &cfg,
            0,
        )
        .unwrap();
        let last = chain.records.last().unwrap();
        assert!(last.selection.candidates.iter().all(|b| *b));
        assert!(last.residual_norm < 1e-12);
    }

    #[test]
    fn gibbs_with_huge_sigma_matches_prior_frequencies() {
        // likelihood washes out: flip probability reverts to the prior odds
        let model = ToyModel::new();
        let prior = toy_prior();
        let posterior = PosteriorSpec::new(PosteriorVariant::AroundFixed, 1e12);
        let cfg = SamplerConfig {
            n_sweeps: 4000,
            seed: 11,
            ..Default::default()
        };
        let chain = gibbs_sample(
            &model,
            &prior,
            &RegionSelection::Fixed(vec![true]),
            &posterior,
            &cfg,
            0,
        )
        .unwrap();
        let stats = chain_statistics(&model, &chain, 0.1);
        assert!(
            (stats.frequencies[0] - 0.5).abs() < 0.05,
            "{:?}",
            stats.frequencies
        );
        assert!(
            (stats.frequencies[1] - 0.4).abs() < 0.05,
            "{:?}",
            stats.frequencies
        );
    }

    #[test]
    fn chain_statistics_mean_std_and_counts() {
        let model = ToyModel::new();
        let prior = toy_prior();
        let cfg = SamplerConfig {
            n_samples: 40,
            seed: 13,
            burn_in_frac: 0.0,
            ..Default::default()
        };
        let chain =
            sequential_sample(&model, &prior, &RegionSelection::Fixed(vec![true]), &cfg, 0)
                .unwrap();
        let stats = chain_statistics(&model, &chain, 0.0);
        assert_eq!(stats.mean.len(), 3);
        // dof 0 is always solved exactly: mean = rhs/op, std = 0
        assert!((stats.mean[0] - 0.5).abs() < 1e-12);
        assert!(stats.std[0] < 1e-12);
        assert!(stats.std[1] > 0.0);
        assert_eq!(stats.counts.len(), 40);
    }

    #[test]
    fn constant_chain_has_zero_std() {
        let model = ToyModel::new();
        let mut prior = toy_prior();
        prior.candidate_probs = vec![vec![1.0, 1.0]];
        let cfg = SamplerConfig {
            n_samples: 6,
            seed: 2,
            ..Default::default()
        };
        let chain =
            sequential_sample(&model, &prior, &RegionSelection::Fixed(vec![true]), &cfg, 0)
                .unwrap();
        let stats = chain_statistics(&model, &chain, 0.0);
        for s in stats.std {
            assert!(s.abs() < 1e-14);
        }
        for f in stats.frequencies {
            assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn gibbs_kernel_matches_enumerated_stationary_distribution() {
        // the four states of the 2-candidate toy chain are enumerable: the
        // systematic-scan kernel's stationary distribution and asymptotic
        // variances come from the explicit 4x4 transition matrix
        let model = ToyModel::new();
        let prior = toy_prior();
        let sigma = 0.6;
        let posterior = PosteriorSpec::new(PosteriorVariant::AroundFixed, sigma);

        // state index: bit0 + 2*bit1
        let res_sq = |s: usize| -> f64 {
            let active = [s & 1 == 1, s & 2 == 2];
            let sol = model.solve_beta(&active).unwrap();
            sol.residual_norm.powi(2)
        };
        let alpha = [0.5, 0.4];
        // conditional probability that bit b is set, given the other bit
        let flip = |b: usize, other_on: bool| -> f64 {
            let other_mask = if other_on { if b == 0 { 2 } else { 1 } } else { 0 };
            let with = res_sq(other_mask | (1 << b));
            let without = res_sq(other_mask);
            gibbs_flip_probability(alpha[b], without, with, 1.0, sigma)
        };
        // one sweep: update bit0 | bit1, then bit1 | bit0
        let mut p = [[0.0f64; 4]; 4];
        for s in 0..4 {
            let b1 = s & 2 == 2;
            for new0 in [false, true] {
                let p0 = flip(0, b1);
                let w0 = if new0 { p0 } else { 1.0 - p0 };
                for new1 in [false, true] {
                    let p1 = flip(1, new0);
                    let w1 = if new1 { p1 } else { 1.0 - p1 };
                    let t = (new0 as usize) + 2 * (new1 as usize);
                    p[s][t] += w0 * w1;
                }
            }
        }
        // stationary distribution by power iteration of the 4-state chain
        let mut pi = [0.25f64; 4];
        for _ in 0..20_000 {
            let mut next = [0.0f64; 4];
            for s in 0..4 {
                for t in 0..4 {
                    next[t] += pi[s] * p[s][t];
                }
            }
            pi = next;
        }

        let n_sweeps = 100_000;
        let cfg = SamplerConfig {
            n_sweeps,
            seed: 17,
            ..Default::default()
        };
        let chain = gibbs_sample(
            &model,
            &prior,
            &RegionSelection::Fixed(vec![true]),
            &posterior,
            &cfg,
            0,
        )
        .unwrap();
        let mut occupancy = [0.0f64; 4];
        for rec in &chain.records {
            let s = rec.selection.candidates[0] as usize
                + 2 * (rec.selection.candidates[1] as usize);
            occupancy[s] += 1.0;
        }
        for o in &mut occupancy {
            *o /= n_sweeps as f64;
        }

        // asymptotic variance of each occupancy from the chain's
        // autocovariances: var = Var_pi(f) + 2 sum_k Cov(f(X_0), f(X_k))
        for s in 0..4 {
            let f: Vec<f64> = (0..4).map(|t| (t == s) as usize as f64).collect();
            let var0 = pi[s] * (1.0 - pi[s]);
            let mut cov_sum = 0.0;
            let mut pf: Vec<f64> = f.clone();
            for _ in 1..500 {
                let mut next = vec![0.0f64; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        next[a] += p[a][b] * pf[b];
                    }
                }
                pf = next;
                let cov: f64 =
                    (0..4).map(|a| pi[a] * f[a] * pf[a]).sum::<f64>() - pi[s] * pi[s];
                cov_sum += cov;
                if cov.abs() < 1e-14 {
                    break;
                }
            }
            let avar = (var0 + 2.0 * cov_sum).max(var0);
            let se = (avar / n_sweeps as f64).sqrt();
            assert!(
                (occupancy[s] - pi[s]).abs() <= 3.0 * se + 1e-12,
                "state {s}: occupancy {} vs pi {} (3se = {})",
                occupancy[s],
                pi[s],
                3.0 * se
            );
        }
    }
}
