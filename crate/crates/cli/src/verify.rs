//! Property suites behind `matinfo verify`.

use matinfo::collapse::{
    affine_regression_error, collapsed_features, lemma_instance, nc_check, nc_targets, simplex_etf,
    structure_matrix, verify_rank_bound,
};
use matinfo::linalg::gram;
use matinfo::losses::{GradientInstance, GradientTarget};
use matinfo::metrics::{effective_rank, hdr, matrix_entropy, mir};
use rayon::prelude::*;

use crate::error::CliResult;

pub const NC_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Nc,
    Lemmas,
    Gradients,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Nc => "nc",
            Suite::Lemmas => "lemmas",
            Suite::Gradients => "gradients",
        }
    }
}

/// Outcome of one instance: the largest error measured and, on failure, a
/// description.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub seed: u64,
    pub max_error: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: Vec<InstanceResult>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &InstanceResult> {
        self.instances.iter().filter(|r| r.failure.is_some())
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn max_error(&self) -> f64 {
        self.instances
            .iter()
            .map(|r| r.max_error)
            .fold(0.0, f64::max)
    }
}

/// Class count and ambient dimension for an NC instance.
pub fn nc_shape(seed: u64) -> (usize, usize) {
    let classes = 3 + (seed % 48) as usize;
    (classes, classes + (seed % 5) as usize)
}

fn check_nc(seed: u64) -> CliResult<InstanceResult> {
    let (c, d) = nc_shape(seed);
    let mut errors = Vec::new();

    let e = structure_matrix(-1.0 / (c as f64 - 1.0), c)?;
    let target_h = (c as f64 - 1.0).ln();
    errors.push(("structure entropy", (matrix_entropy(&e) - target_h).abs()));

    let means = simplex_etf(c, d, seed)?;
    let g = gram(&means)?;
    let target = nc_targets(c)?;
    errors.push(("ETF MIR", (mir(&g, &g)? - target.mir).abs()));
    errors.push(("ETF HDR", hdr(&g, &g)?));
    errors.push(("ETF entropy", (matrix_entropy(&g) - target.entropy).abs()));
    errors.push((
        "ETF erank",
        (effective_rank(&means)? - (c as f64 - 1.0)).abs(),
    ));

    let (features, weights) = collapsed_features(c, d, 3, seed)?;
    let report = nc_check(&features, &weights)?;
    errors.push(("NC1", report.nc1_residual));
    errors.push(("NC2", report.nc2_residual));
    errors.push(("NC3", report.nc3_residual));
    errors.push(("sample HDR", report.hdr_observed));
    let observed = report.mir_observed.unwrap_or(f64::NAN);
    errors.push(("sample MIR", (observed - target.mir).abs()));

    let max_error = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let bad: Vec<String> = errors
        .iter()
        .filter(|(_, err)| err.is_nan() || *err >= NC_TOL)
        .map(|(name, err)| format!("{name} error {err:.3e}"))
        .collect();
    Ok(InstanceResult {
        seed,
        max_error,
        failure: (!bad.is_empty()).then(|| format!("C={c} d={d}: {}", bad.join(", "))),
    })
}

fn check_lemmas(seed: u64) -> CliResult<InstanceResult> {
    let inst = lemma_instance(seed);
    let errors = affine_regression_error(&inst.z1, &inst.z2, &inst.y)?;
    let bound = verify_rank_bound(&inst.z1, &inst.z2)?;
    let mut bad = Vec::new();
    if !errors.transfer_bound_holds() {
        bad.push(format!(
            "transfer bound: err(Y|Z2) = {:.6e} > {:.6e}",
            errors.y_from_z2,
            errors.y_from_z1 + errors.w1_frobenius * errors.z1_from_z2
        ));
    }
    if !bound.lemma2_holds {
        bad.push(format!(
            "rank bound: lhs {:.6e} < {:.6e}",
            bound.lhs, bound.rhs_lemma2
        ));
    }
    if bound.theorem_holds == Some(false) {
        bad.push(format!(
            "rank ratio chain: {:.6e} <= {:.6e} <= {:.6e} violated",
            bound.rhs_lemma2, bound.rhs_intermediate, bound.rhs_theorem
        ));
    }
    // largest violation across the inequalities; zero when all hold
    let transfer_rhs = errors.y_from_z1 + errors.w1_frobenius * errors.z1_from_z2;
    let max_error = [
        errors.y_from_z2 - transfer_rhs,
        bound.rhs_lemma2 - bound.lhs,
        bound.rhs_lemma2 - bound.rhs_intermediate,
        bound.rhs_intermediate - bound.rhs_theorem,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(InstanceResult {
        seed,
        max_error,
        failure: (!bad.is_empty()).then(|| bad.join("; ")),
    })
}

fn check_gradients(seed: u64) -> CliResult<InstanceResult> {
    let inst = GradientInstance::sample(seed);
    let mut max_error: f64 = 0.0;
    let mut bad = Vec::new();
    for target in GradientTarget::ALL {
        let err = inst.check(target)?;
        max_error = max_error.max(err);
        if err.is_nan() || err >= GRADIENT_TOL {
            bad.push(format!("{} relative error {err:.3e}", target.name()));
        }
    }
    Ok(InstanceResult {
        seed,
        max_error,
        failure: (!bad.is_empty()).then(|| bad.join(", ")),
    })
}

/// Runs `instances` instances seeded `seed, seed + 1, ...`. Instances run
/// on the current rayon pool; results keep seed order.
pub fn run_suite(suite: Suite, instances: usize, seed: u64) -> CliResult<SuiteReport> {
    let check = match suite {
        Suite::Nc => check_nc,
        Suite::Lemmas => check_lemmas,
        Suite::Gradients => check_gradients,
    };
    let instances = (0..instances as u64)
        .into_par_iter()
        .map(|k| check(seed.wrapping_add(k)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(SuiteReport { suite, instances })
}
