//! On-disk formats: model JSON, prediction tables, masks (JSON and DOT),
//! ensemble files and run manifests. Every write goes through a temporary file
//! that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bowtie_core::linalg::Mat;
use bowtie_core::state::{LayerGlobal, NormStats, WeightRow};
use bowtie_core::{
    FitResult, GigParams, GlobalVariational, InvGammaParams, NetworkConfig, PredictiveSummary, Priors, SparseMask,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::metrics::interval;

pub const MODEL_FORMAT: &str = "bowtie-model";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// One weight row: mean and packed lower triangle of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFile {
    pub mean: Vec<f64>,
    pub cov_lower: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub rows: Vec<RowFile>,
    pub noise: Vec<InvGammaParams>,
    pub tau: GigParams,
    pub psi: Vec<GigParams>,
}

/// Serialized trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub config: NetworkConfig,
    pub priors: Priors,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub normalization: Option<NormStats>,
    pub layers: Vec<LayerFile>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
    pub wall_time: f64,
}

/// A fit together with what is needed to apply it to raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub fit: FitResult,
    pub method: String,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub normalization: Option<NormStats>,
}

impl TrainedModel {
    pub fn to_file(&self) -> ModelFile {
        let layers = self
            .fit
            .global
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.rows.iter().map(|r| RowFile { mean: r.m.clone(), cov_lower: r.b.to_packed_lower() }).collect(),
                noise: l.noise.clone(),
                tau: l.tau,
                psi: l.psi.clone(),
            })
            .collect();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            method: self.method.clone(),
            config: self.fit.config.clone(),
            priors: self.fit.global.priors.clone(),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            normalization: self.normalization.clone(),
            layers,
            elbo_trace: self.fit.elbo_trace.clone(),
            converged: self.fit.converged,
            seed: self.fit.seed,
            wall_time: self.fit.wall_time,
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self, CliError> {
        if f.format != MODEL_FORMAT || f.version != FORMAT_VERSION {
            return Err(CliError::Input(format!("unsupported model format {} v{}", f.format, f.version)));
        }
        let layers = f
            .layers
            .into_iter()
            .map(|l| {
                let rows = l
                    .rows
                    .into_iter()
                    .map(|r| {
                        let b = Mat::from_packed_lower(r.mean.len(), &r.cov_lower)?;
                        Ok(WeightRow { m: r.mean, b })
                    })
                    .collect::<bowtie_core::Result<Vec<_>>>()?;
                Ok(LayerGlobal { rows, noise: l.noise, tau: l.tau, psi: l.psi })
            })
            .collect::<bowtie_core::Result<Vec<_>>>()?;
        let global = GlobalVariational { priors: f.priors, layers };
        if global.dims() != f.config.dims {
            return Err(CliError::Input(format!("layer shapes {:?} disagree with config {:?}", global.dims(), f.config.dims)));
        }
        Ok(TrainedModel {
            fit: FitResult {
                config: f.config,
                global,
                elbo_trace: f.elbo_trace,
                converged: f.converged,
                seed: f.seed,
                wall_time: f.wall_time,
            },
            method: f.method,
            feature_names: f.feature_names,
            target_names: f.target_names,
            normalization: f.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_file(read_json(path)?)
    }
}

/// ELBO trace as a two-column table.
pub fn write_trace(path: &Path, trace: &[f64]) -> Result<(), CliError> {
    let mut s = String::from("sweep,elbo\n");
    for (i, e) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{e:?}\n"));
    }
    write_atomic(path, s.as_bytes())
}

/// Prediction table: `index, mean_d, sd_d, lo_d, hi_d` for every output `d`.
pub fn write_predictions(
    path: &Path,
    target_names: &[String],
    summaries: &[PredictiveSummary],
    level: f64,
) -> Result<(), CliError> {
    let mut header = vec!["index".to_string()];
    for t in target_names {
        header.extend([format!("mean_{t}"), format!("sd_{t}"), format!("lo_{t}"), format!("hi_{t}")]);
    }
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
        for (i, s) in summaries.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            for d in 0..s.mean.len() {
                let (lo, hi) = interval(s.mean[d], s.variance[d], level);
                rec.extend([s.mean[d], s.variance[d].sqrt(), lo, hi].iter().map(|v| format!("{v:?}")));
            }
            w.write_record(&rec).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    write_atomic(path, &buf)
}

/// Draws table: `index, draw, <target>...`.
pub fn write_samples(path: &Path, target_names: &[String], samples: &[Mat]) -> Result<(), CliError> {
    let mut s = String::from("index,draw");
    for t in target_names {
        s.push(',');
        s.push_str(t);
    }
    s.push('\n');
    for (i, m) in samples.iter().enumerate() {
        for j in 0..m.rows() {
            s.push_str(&format!("{i},{j}"));
            for v in m.row(j) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
    }
    write_atomic(path, s.as_bytes())
}

/// Serialized mask: kept weights as `[layer, unit, input]` triples (1-based
/// layer, 0-based unit and input), plus threshold and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub dims: Vec<usize>,
    pub alpha: f64,
    pub kappa_hat: f64,
    pub kept: Vec<[usize; 3]>,
    pub kept_per_layer: Vec<usize>,
    pub total_per_layer: Vec<usize>,
    pub alive_per_layer: Vec<usize>,
}

impl MaskFile {
    pub fn from_mask(mask: &SparseMask) -> Self {
        let mut kept = Vec::new();
        for l in 1..mask.dims.len() {
            for d in 0..mask.dims[l] {
                for j in 0..mask.dims[l - 1] {
                    if mask.is_kept(l, d, j) {
                        kept.push([l, d, j]);
                    }
                }
            }
        }
        MaskFile {
            dims: mask.dims.clone(),
            alpha: mask.target_alpha,
            kappa_hat: mask.kappa_hat,
            kept,
            kept_per_layer: mask.kept_per_layer(),
            total_per_layer: mask.keep.iter().map(|k| k.len()).collect(),
            alive_per_layer: mask.alive_per_layer(),
        }
    }

    /// Rebuilds the mask; scores are not stored and come back as `NaN`.
    pub fn to_mask(&self) -> Result<SparseMask, CliError> {
        let dims = &self.dims;
        if dims.len() < 3 {
            return Err(CliError::Input(format!("mask dims {dims:?} too short")));
        }
        let mut keep: Vec<Vec<bool>> = (1..dims.len()).map(|l| vec![false; dims[l] * dims[l - 1]]).collect();
        for &[l, d, j] in &self.kept {
            if l == 0 || l >= dims.len() || d >= dims[l] || j >= dims[l - 1] {
                return Err(CliError::Input(format!("kept weight {:?} out of range for {dims:?}", [l, d, j])));
            }
            keep[l - 1][d * dims[l - 1] + j] = true;
        }
        let node_alive = bowtie_core::sparsify::structural_pass(dims, &mut keep);
        let scores = keep.iter().map(|k| vec![f64::NAN; k.len()]).collect();
        Ok(SparseMask { dims: dims.clone(), keep, node_alive, scores, kappa_hat: self.kappa_hat, target_alpha: self.alpha })
    }
}

/// Graphviz rendering of the surviving architecture.
pub fn mask_dot(mask: &SparseMask, feature_names: &[String], target_names: &[String]) -> String {
    let dims = &mask.dims;
    let depth = dims.len() - 2;
    let node = |l: usize, d: usize| format!("n{l}_{d}");
    let mut s = String::from("digraph network {\n  rankdir=LR;\n  node [shape=circle];\n");
    for (d, name) in feature_names.iter().enumerate() {
        s.push_str(&format!("  {} [label=\"{}\", shape=box];\n", node(0, d), name.replace('"', "'")));
    }
    for l in 1..=depth {
        for d in 0..dims[l] {
            if mask.node_alive[l - 1][d] {
                s.push_str(&format!("  {} [label=\"h{l}.{d}\"];\n", node(l, d)));
            }
        }
    }
    for (d, name) in target_names.iter().enumerate() {
        s.push_str(&format!("  {} [label=\"{}\", shape=doublecircle];\n", node(depth + 1, d), name.replace('"', "'")));
    }
    for l in 1..dims.len() {
        for d in 0..dims[l] {
            for j in 0..dims[l - 1] {
                if mask.is_kept(l, d, j) {
                    s.push_str(&format!("  {} -> {} [penwidth={:.2}];\n", node(l - 1, j), node(l, d), 1.0 + 4.0 * (mask.scores[l - 1][d * dims[l - 1] + j] - 0.5).max(0.0)));
                }
            }
        }
    }
    s.push_str("}\n");
    s
}

/// Ensemble file: member model paths (relative to the ensemble file) and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub members: Vec<PathBuf>,
    pub weights: Vec<f64>,
    pub zeta: f64,
    pub elbos: Vec<f64>,
    pub converged: Vec<bool>,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Option<NetworkConfig>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_seconds: f64,
    pub warnings: Vec<String>,
}

/// `<path>.manifest.json` next to a primary output.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// `<path>` with its extension replaced by `suffix`.
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let stem = primary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    primary.with_file_name(format!("{stem}{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_file_round_trip() {
        let mut mask = SparseMask::full(&[2, 3, 1]);
        mask.keep[0][0] = false;
        let f = MaskFile::from_mask(&mask);
        assert_eq!(f.kept.len(), 8);
        let back = f.to_mask().unwrap();
        assert_eq!(back.keep, mask.keep);
        assert_eq!(back.node_alive, mask.node_alive);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/model.json"), ".trace.csv"), PathBuf::from("out/model.trace.csv"));
        assert_eq!(manifest_path(Path::new("m.json")), PathBuf::from("m.json.manifest.json"));
    }
}
