use nalgebra::DVector;

use super::{solve_batch, SolveOptions};
use crate::envs::TimeState;
use crate::{Error, Problem, Result, Scalar};

/// Outcome of a `max_iter` calibration run.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub max_iter: usize,
    /// Per-probe iteration counts; probes that did not converge count as the cap.
    pub counts: Vec<usize>,
}

/// Nearest-rank percentile: the `ceil(p/100 * len)`-th smallest value.
pub fn nearest_rank_percentile(values: &[usize], percentile: f64) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Empty("percentile sample"));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Solves every probe with the iteration cap `cap` and returns the chosen
/// percentile of the observed iteration counts.
pub fn calibrate_max_iter<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    probes: &[TimeState<T>],
    warm_starts: &[Vec<DVector<T>>],
    cap: usize,
    percentile: f64,
    opts: &SolveOptions<T>,
) -> Result<Calibration> {
    if probes.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 10 probes, got {}",
            probes.len()
        )));
    }
    let opts = opts.with_max_iter(cap);
    let results = solve_batch(problem, probes, warm_starts, &opts)?;
    let mut counts = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        counts.push(if r.converged { r.iters_used } else { cap });
    }
    let max_iter = nearest_rank_percentile(&counts, percentile)?;
    Ok(Calibration { max_iter, counts })
}
