//! Beam search over programs: expand the beam with transformation
//! candidates, rescore them (reusing likelihoods across
//! semantics-preserving moves), keep the best few per depth, and return the
//! best program seen anywhere.

use thiserror::Error;

use crate::antiunify::compressions;
use crate::dearg::{all_deargument_candidates, DeargError, ReplacementKind, ALL_KINDS};
use crate::likelihood::{log_likelihood, EnumerationLimits, LikelihoodError};
use crate::model::{generator_for_program, log_prior, ScoredProgram};
use crate::sexpr::SymbolGenerator;
use crate::treedom::{incorporate_data, IncorporationMode, Tree, TreeError};

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub alpha: f64,
    pub beam_width: usize,
    /// Expansion levels from the root; 0 returns the scored root.
    pub depth: usize,
    pub seed: u64,
    pub limits: EnumerationLimits,
    pub enabled_kinds: Vec<ReplacementKind>,
    pub incorporation_mode: IncorporationMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            alpha: 1.0,
            beam_width: 1,
            depth: 10,
            seed: 0,
            limits: EnumerationLimits::default(),
            enabled_kinds: ALL_KINDS.to_vec(),
            incorporation_mode: IncorporationMode::GaussianColors,
        }
    }
}

/// One beam member's scores, as recorded in the search trace.
#[derive(Clone, Debug)]
pub struct BeamEntry {
    pub size: usize,
    pub posterior: f64,
    pub log_prior: f64,
    pub log_likelihood: f64,
    pub semantics_preserved: bool,
}

/// Per-depth search record.
#[derive(Clone, Debug)]
pub struct DepthRecord {
    pub depth: usize,
    pub candidates: usize,
    pub beam: Vec<BeamEntry>,
}

impl DepthRecord {
    /// The transcript line format: an s-expression per depth.
    pub fn to_sexpr_string(&self) -> String {
        let mut beam = String::new();
        for e in &self.beam {
            beam.push_str(&format!(
                " (entry (size {}) (posterior {}) (prior {}) (likelihood {}) (preserved {}))",
                e.size, e.posterior, e.log_prior, e.log_likelihood, e.semantics_preserved
            ));
        }
        format!("(depth {} (candidates {}) (beam{}))", self.depth, self.candidates, beam)
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Dearg(#[from] DeargError),
    #[error("resource limit during search: {source}")]
    Resource { source: LikelihoodError, best_so_far: Option<Box<ScoredProgram>> },
}

/// All one-step transformations of a scored program: size-filtered
/// compressions (semantics preserved, likelihood inherited) followed by
/// every applicable deargumentation. Candidates that break the program
/// invariants are dropped.
pub fn neighbors(
    sp: &ScoredProgram,
    kinds: &[ReplacementKind],
    gen: &mut SymbolGenerator,
) -> Result<Vec<ScoredProgram>, SearchError> {
    let mut out = Vec::new();
    for cp in compressions(&sp.program, gen, false) {
        if cp.validate().is_ok() {
            out.push(ScoredProgram::from_transform(sp, cp, true));
        }
    }
    for dp in all_deargument_candidates(&sp.program, kinds)? {
        if dp.validate().is_ok() {
            out.push(ScoredProgram::from_transform(sp, dp, false));
        }
    }
    Ok(out)
}

fn rescore_one(
    sp: &ScoredProgram,
    targets: &[Tree],
    cfg: &SearchConfig,
) -> Result<ScoredProgram, LikelihoodError> {
    let lp = log_prior(&sp.program, cfg.alpha);
    let ll = if sp.semantics_preserved {
        sp.log_likelihood
    } else {
        // sequential across targets: a candidate that exhausts the limits
        // on one observation stops before wasting work on the rest
        crate::likelihood::log_likelihood_seq(&sp.program, targets, cfg.limits)?
    };
    Ok(ScoredProgram::new(sp.program.clone(), lp, ll, sp.semantics_preserved))
}

fn posterior_order(a: &ScoredProgram, b: &ScoredProgram) -> std::cmp::Ordering {
    b.posterior.total_cmp(&a.posterior).then_with(|| a.size().cmp(&b.size()))
}

/// Rescore a level's candidates, dropping any whose exact scoring exceeds
/// the enumeration limits: such a candidate cannot be compared on posterior,
/// so it leaves the race instead of ending it.
fn rescore_level(
    candidates: Vec<ScoredProgram>,
    targets: &[Tree],
    cfg: &SearchConfig,
) -> Vec<ScoredProgram> {
    #[cfg(feature = "parallel")]
    let scored: Vec<Option<ScoredProgram>> = {
        use rayon::prelude::*;
        candidates.par_iter().map(|sp| rescore_one(sp, targets, cfg).ok()).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scored: Vec<Option<ScoredProgram>> =
        candidates.iter().map(|sp| rescore_one(sp, targets, cfg).ok()).collect();

    let mut kept: Vec<ScoredProgram> = scored.into_iter().flatten().collect();
    kept.sort_by(posterior_order);
    kept
}

/// Rescore candidates (recomputing likelihood only where semantics changed)
/// and sort by posterior, breaking ties by smaller size and then by
/// generation order.
pub fn sort_by_posterior(
    targets: &[Tree],
    candidates: Vec<ScoredProgram>,
    cfg: &SearchConfig,
) -> Result<Vec<ScoredProgram>, LikelihoodError> {
    #[cfg(feature = "parallel")]
    let rescored: Result<Vec<ScoredProgram>, LikelihoodError> = {
        use rayon::prelude::*;
        candidates.par_iter().map(|sp| rescore_one(sp, targets, cfg)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rescored: Result<Vec<ScoredProgram>, LikelihoodError> =
        candidates.iter().map(|sp| rescore_one(sp, targets, cfg)).collect();

    let mut rescored = rescored?;
    rescored.sort_by(posterior_order);
    Ok(rescored)
}

fn better(a: &ScoredProgram, b: &ScoredProgram) -> bool {
    a.posterior > b.posterior || (a.posterior == b.posterior && a.size() < b.size())
}

/// Run the whole pipeline: incorporate the observations, expand and rescore
/// for `depth` levels, and return the best program visited anywhere along
/// with the per-depth trace. Deterministic given the configuration.
pub fn beam_search(
    targets: &[Tree],
    cfg: &SearchConfig,
) -> Result<(ScoredProgram, Vec<DepthRecord>), SearchError> {
    let init = incorporate_data(targets, cfg.incorporation_mode)?;
    let lp = log_prior(&init, cfg.alpha);
    let ll = log_likelihood(&init, targets, cfg.limits)
        .map_err(|source| SearchError::Resource { source, best_so_far: None })?;
    let root = ScoredProgram::new(init, lp, ll, false);

    let mut best = root.clone();
    let mut beam = vec![root];
    let mut records = Vec::new();

    for depth in 1..=cfg.depth {
        let mut candidates = Vec::new();
        for member in &beam {
            // fresh names per parent keep generated indices small; sibling
            // candidates live in separate programs, so reuse is harmless
            let mut gen = generator_for_program(&member.program);
            candidates.extend(neighbors(member, &cfg.enabled_kinds, &mut gen)?);
        }
        if candidates.is_empty() {
            break;
        }
        let candidate_count = candidates.len();
        let rescored = rescore_level(candidates, targets, cfg);
        if rescored.is_empty() {
            break;
        }
        beam = rescored.into_iter().take(cfg.beam_width.max(1)).collect();
        records.push(DepthRecord {
            depth,
            candidates: candidate_count,
            beam: beam
                .iter()
                .map(|sp| BeamEntry {
                    size: sp.size(),
                    posterior: sp.posterior,
                    log_prior: sp.log_prior,
                    log_likelihood: sp.log_likelihood,
                    semantics_preserved: sp.semantics_preserved,
                })
                .collect(),
        });
        for member in &beam {
            if better(member, &best) {
                best = member.clone();
            }
        }
    }
    Ok((best, records))
}
