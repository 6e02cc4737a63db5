//! Constant-rate grid search: the brute-force route to an empirical optimum.

use crate::error::OracleError;

use super::Oracle;

/// Outcome of a grid search.
#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Grid value minimizing the evaluation score (ties go to the first).
    pub best_lr: f64,
    pub best_index: usize,
    /// Mean loss over the trailing evaluation window per grid point;
    /// `None` where the run diverged.
    pub final_losses: Vec<Option<f64>>,
}

/// Trains one independent constant-rate run per grid point, each from an
/// identically seeded fresh oracle, and scores it by the mean loss over the
/// last `eval_window` steps. Diverged runs are marked absent; if every run
/// diverges there is no optimum.
pub fn grid_search<O, F>(
    factory: F,
    lr_grid: &[f64],
    steps: u64,
    eval_window: u64,
) -> Result<GridOutcome, OracleError>
where
    O: Oracle,
    F: Fn() -> O,
{
    if lr_grid.is_empty() {
        return Err(OracleError::EmptyGrid);
    }
    let window = eval_window.clamp(1, steps.max(1));
    let mut final_losses = Vec::with_capacity(lr_grid.len());
    for &lr in lr_grid {
        let mut oracle = factory();
        let mut tail: Vec<f64> = Vec::with_capacity(window as usize);
        let mut diverged = false;
        for t in 0..steps {
            match oracle.step(lr) {
                Ok(loss) => {
                    if steps - t <= window {
                        tail.push(loss);
                    }
                }
                Err(OracleError::Diverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if diverged || tail.is_empty() {
            final_losses.push(None);
        } else {
            final_losses.push(Some(tail.iter().sum::<f64>() / tail.len() as f64));
        }
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, loss) in final_losses.iter().enumerate() {
        if let Some(l) = loss {
            if best.map_or(true, |(_, b)| *l < b) {
                best = Some((i, *l));
            }
        }
    }
    match best {
        Some((index, _)) => Ok(GridOutcome {
            best_lr: lr_grid[index],
            best_index: index,
            final_losses,
        }),
        None => Err(OracleError::NoOptimum),
    }
}
