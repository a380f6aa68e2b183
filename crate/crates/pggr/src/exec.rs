use pggr_core::ice::Executor;
use pggr_core::Result;
use rayon::prelude::*;

/// Maps jobs over the current rayon pool, collecting in index order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map(&self, n: usize, f: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Result<Vec<f64>> {
        (0..n).into_par_iter().map(f).collect()
    }
}
