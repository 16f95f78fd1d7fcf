//! Timed fits and thread-parallel maps over independent work items: ensemble
//! members and test points.

use std::thread;
use std::time::Instant;

use bowtie_core::ensemble::{fit_member, EnsembleModel};
use bowtie_core::linalg::Mat;
use bowtie_core::predict::predict_point;
use bowtie_core::svi::fit_svi;
use bowtie_core::{fit_cavi, CaviOptions, Dataset, FitResult, GlobalVariational, NetworkConfig, PredictOptions, PredictiveSummary, SparseMask, SviOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Inference algorithm and its settings.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Cavi(CaviOptions),
    Svi(SviOptions),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cavi(_) => "cavi",
            Method::Svi(_) => "svi",
        }
    }
}

/// Fits with a generator seeded from `config.seed` and records the wall time.
pub fn fit(config: &NetworkConfig, data: &Dataset, method: &Method) -> bowtie_core::Result<FitResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fit = match method {
        Method::Cavi(o) => fit_cavi(config, data, o, &mut rng)?,
        Method::Svi(o) => fit_svi(config, data, o, &mut rng)?,
    };
    fit.wall_time = start.elapsed().as_secs_f64();
    Ok(fit)
}

fn workers(items: usize) -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items).max(1)
}

/// Applies `f` to `0..n` on scoped threads, preserving order.
pub fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let chunk = n.div_ceil(workers(n));
    if n <= 1 || chunk >= n {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> =
            (0..n).step_by(chunk).map(|lo| s.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Vec<T>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    })
}

/// Predictive summaries of every row of `x`, optionally under a sparsity mask.
pub fn predict_many(
    global: &GlobalVariational,
    x: &Mat,
    options: &PredictOptions,
    mask: Option<&SparseMask>,
) -> bowtie_core::Result<Vec<PredictiveSummary>> {
    let masked = match mask {
        Some(m) => Some(m.apply(global)?),
        None => None,
    };
    let model = masked.as_ref().unwrap_or(global);
    par_map(x.rows(), |i| predict_point(model, x.row(i), options)).into_iter().collect()
}

/// Ensemble predictions of every row of `x`.
pub fn ensemble_predict_many(
    model: &EnsembleModel,
    x: &Mat,
    options: &PredictOptions,
) -> bowtie_core::Result<Vec<PredictiveSummary>> {
    par_map(x.rows(), |i| model.predict(x.row(i), options)).into_iter().collect()
}

/// `k` members fitted concurrently; identical to the sequential core routine.
pub fn fit_ensemble_parallel(
    config: &NetworkConfig,
    data: &Dataset,
    k: usize,
    zeta: f64,
    options: &CaviOptions,
) -> bowtie_core::Result<EnsembleModel> {
    let members = par_map(k, |i| {
        let start = Instant::now();
        let mut f = fit_member(config, data, options, i)?;
        f.wall_time = start.elapsed().as_secs_f64();
        Ok(f)
    })
    .into_iter()
    .collect::<bowtie_core::Result<Vec<_>>>()?;
    EnsembleModel::from_members(members, zeta)
}
