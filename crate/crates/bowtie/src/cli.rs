//! Command-line interface: `train`, `predict`, `select`, `ensemble`, `eval`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bowtie_core::ensemble::EnsembleModel;
use bowtie_core::init::InitScheme;
use bowtie_core::predict::{predictive_local_fit, sample_predictive};
use bowtie_core::sparsify::select_nodes;
use bowtie_core::{CaviOptions, Dataset, NetworkConfig, PredictOptions, PredictiveSummary, PriorFamily, SparseMask, SviOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{apply_norm, dataset_table, input_stats, read_table, split_indices, write_table};
use crate::error::CliError;
use crate::formats::{
    manifest_path, read_json, sibling, write_json, write_predictions, write_samples, write_trace, EnsembleFile, Manifest,
    MaskFile, TrainedModel,
};
use crate::metrics::metrics;
use crate::parallel::{ensemble_predict_many, fit, fit_ensemble_parallel, predict_many, Method};

#[derive(Debug, Parser)]
#[command(name = "bowtie", version, about = "Variational Bayesian bow-tie neural networks for regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a network and write the model JSON, ELBO trace and manifest.
    Train(TrainArgs),
    /// Predictive mean, sd and credible bounds for new inputs.
    Predict(PredictArgs),
    /// Node selection at a target false discovery rate.
    Select(SelectArgs),
    /// Fit several networks from different starts and weight them by tempered ELBO.
    Ensemble(EnsembleArgs),
    /// RMSE, NLL and credible-interval coverage on labelled data.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriorArg {
    Ig,
    Gamma,
    Igauss,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Laplace,
    SpikeSlab,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Target column(s); repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<String>,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Units per hidden layer.
    #[arg(long, default_value_t = 20)]
    pub hidden: usize,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, value_enum, default_value_t = PriorArg::Ig)]
    pub prior: PriorArg,
    /// Gate temperature.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Prior variance of the biases.
    #[arg(long, default_value_t = 1.0)]
    pub bias_var: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Use stochastic variational inference instead of full coordinate ascent.
    #[arg(long)]
    pub svi: bool,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.7)]
    pub forgetting_rate: f64,
    /// Relative ELBO change regarded as converged.
    #[arg(long, default_value_t = 1e-5)]
    pub train_tol: f64,
    /// Maximum sweeps (SVI: iterations). Defaults to 2000 sweeps or 20000 iterations.
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// Keep the global shrinkage hyperparameter fixed.
    #[arg(long)]
    pub no_em: bool,
    #[arg(long, value_enum, default_value_t = InitArg::Laplace)]
    pub init: InitArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Hold out this fraction of rows (seeded by --seed) and write them to --holdout-out.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, requires = "holdout")]
    pub holdout_out: Option<PathBuf>,
    /// Model JSON to write.
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Trained model JSON.
    #[arg(long, conflicts_with = "ensemble", required_unless_present = "ensemble")]
    pub model: Option<PathBuf>,
    /// Ensemble file.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Predict from the masked model (requires --mask; single models only).
    #[arg(long, requires = "mask")]
    pub sparse: bool,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Relative predictive-ELBO change regarded as converged.
    #[arg(long, default_value_t = 1e-4)]
    pub predict_tol: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Inputs to predict at (columns matched by name).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// Also draw this many predictive samples per point (single models only).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target Bayesian false discovery rate.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value = "mask.json")]
    pub out: PathBuf,
    /// Graphviz output (default: next to --out with a .dot extension).
    #[arg(long)]
    pub dot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Number of members.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// ELBO tempering.
    #[arg(long, default_value_t = bowtie_core::ensemble::DEFAULT_ZETA)]
    pub zeta: f64,
    #[arg(long, default_value = "ensemble.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Credible level(s) for coverage.
    #[arg(long, value_delimiter = ',', default_value = "0.95")]
    pub ci_level: Vec<f64>,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let start = Instant::now();
    let command = match &cli.command {
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Select(_) => "select",
        Command::Ensemble(_) => "ensemble",
        Command::Eval(_) => "eval",
    };
    match dispatch(cli.command) {
        Ok(mut manifest) => {
            manifest.args = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
            manifest.wall_time_seconds = start.elapsed().as_secs_f64();
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            let primary = manifest.outputs.first().cloned().unwrap_or_else(|| PathBuf::from(command));
            match write_json(&manifest_path(&primary), &manifest) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn delimiter(c: char) -> Result<u8, CliError> {
    u8::try_from(c).map_err(|_| CliError::Usage(format!("delimiter '{c}' is not a single byte")))
}

fn manifest(command: &str) -> Manifest {
    Manifest {
        command: command.into(),
        args: Vec::new(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: None,
        config: None,
        outputs: Vec::new(),
        wall_time_seconds: 0.0,
        warnings: Vec::new(),
    }
}

fn dispatch(command: Command) -> Result<Manifest, CliError> {
    match command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Select(a) => select(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Eval(a) => eval(a),
    }
}

fn network_config(m: &ModelArgs, inputs: usize, outputs: usize) -> Result<NetworkConfig, CliError> {
    if m.depth == 0 || m.hidden == 0 {
        return Err(CliError::Usage("--depth and --hidden must be at least 1".into()));
    }
    let family = match m.prior {
        PriorArg::Ig => PriorFamily::Ig,
        PriorArg::Gamma => PriorFamily::Gamma,
        PriorArg::Igauss => PriorFamily::Igauss,
    };
    let mut c = NetworkConfig::new(inputs, &vec![m.hidden; m.depth], outputs).with_family(family);
    c.temperature = m.temperature;
    c.bias_var = m.bias_var;
    c.seed = m.seed;
    c.validate()?;
    Ok(c)
}

fn cavi_options(f: &FitArgs) -> CaviOptions {
    CaviOptions {
        elbo_tol_train: f.train_tol,
        max_sweeps: f.max_sweeps.unwrap_or(CaviOptions::default().max_sweeps),
        em_enabled: !f.no_em,
        init_scheme: match f.init {
            InitArg::Laplace => InitScheme::Laplace,
            InitArg::SpikeSlab => InitScheme::SpikeSlab,
        },
        ..CaviOptions::default()
    }
}

fn method(f: &FitArgs) -> Method {
    let cavi = cavi_options(f);
    if f.svi {
        Method::Svi(SviOptions {
            batch_size: f.batch_size,
            forgetting_rate: f.forgetting_rate,
            max_iters: f.max_sweeps.unwrap_or(SviOptions::default().max_iters),
            elbo_tol: f.train_tol,
            init_scheme: cavi.init_scheme,
            ..SviOptions::default()
        })
    } else {
        Method::Cavi(cavi)
    }
}

/// Reads the training table and normalizes its inputs. With `holdout`, a seeded
/// fraction of raw rows is set aside and returned separately.
fn training_data(d: &DataArgs, holdout: Option<f64>, seed: u64) -> Result<(Dataset, Option<Dataset>, Vec<String>), CliError> {
    if d.target.is_empty() {
        return Err(CliError::Usage("--target is required".into()));
    }
    let raw = read_table(&d.data, delimiter(d.delimiter)?)?.to_dataset(&d.target, None)?;
    let (mut train, held) = match holdout {
        Some(f) if !(f > 0.0 && f < 1.0) => return Err(CliError::Usage(format!("--holdout {f} not in (0, 1)"))),
        Some(f) => {
            let (tr, te) = split_indices(raw.len(), 1.0 - f, seed);
            (raw.subset(&tr), Some(raw.subset(&te)))
        }
        None => (raw, None),
    };
    let (stats, warnings) = input_stats(&train);
    apply_norm(&mut train, &stats);
    Ok((train, held, warnings))
}

fn train(a: TrainArgs) -> Result<Manifest, CliError> {
    let (data, held, warnings) = training_data(&a.data, a.holdout, a.model.seed)?;
    let config = network_config(&a.model, data.x.cols(), data.y.cols())?;
    let m = method(&a.fit);
    let result = fit(&config, &data, &m)?;
    let mut man = manifest("train");
    man.warnings = warnings;
    if !result.converged {
        man.warnings.push(format!("stopped after {} sweeps without converging", result.elbo_trace.len() - 1));
    }
    let model = TrainedModel {
        fit: result,
        method: m.name().into(),
        feature_names: data.feature_names.clone(),
        target_names: data.target_names.clone(),
        normalization: data.norm.clone(),
    };
    model.save(&a.out)?;
    let trace = sibling(&a.out, ".trace.csv");
    write_trace(&trace, &model.fit.elbo_trace)?;
    man.outputs = vec![a.out.clone(), trace];
    if let (Some(held), Some(path)) = (held, a.holdout_out) {
        write_table(&path, &dataset_table(&held), delimiter(a.data.delimiter)?)?;
        man.outputs.push(path);
    }
    man.seed = Some(config.seed);
    man.config = Some(config);
    Ok(man)
}

/// A single model or an ensemble, ready to predict from raw inputs.
enum Source {
    Single(TrainedModel, Option<SparseMask>),
    Ensemble(EnsembleModel, TrainedModel),
}

impl Source {
    fn load(s: &SourceArgs) -> Result<Source, CliError> {
        if let Some(path) = &s.ensemble {
            if s.sparse {
                return Err(CliError::Usage("--sparse applies to single models only".into()));
            }
            let file: EnsembleFile = read_json(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let models: Vec<TrainedModel> = file.members.iter().map(|m| TrainedModel::load(&base.join(m))).collect::<Result<_, _>>()?;
            let first = models.first().cloned().ok_or_else(|| CliError::Input("ensemble has no members".into()))?;
            if models.iter().any(|m| m.fit.config.dims != first.fit.config.dims || m.normalization != first.normalization) {
                return Err(CliError::Input("ensemble members disagree on shape or normalization".into()));
            }
            let members = models.into_iter().map(|m| m.fit).collect();
            let model = EnsembleModel { members, weights: file.weights, zeta: file.zeta };
            Ok(Source::Ensemble(model, first))
        } else {
            let model = TrainedModel::load(s.model.as_ref().expect("clap enforces --model or --ensemble"))?;
            let mask = match (&s.mask, s.sparse) {
                (Some(p), true) => {
                    let mask = read_json::<MaskFile>(p)?.to_mask()?;
                    Some(mask)
                }
                _ => None,
            };
            Ok(Source::Single(model, mask))
        }
    }

    fn meta(&self) -> &TrainedModel {
        match self {
            Source::Single(m, _) | Source::Ensemble(_, m) => m,
        }
    }

    /// Reads inputs by the model's feature names (plus `targets`, if given) and
    /// applies the stored normalization.
    fn dataset(&self, path: &Path, delim: u8, targets: &[String]) -> Result<Dataset, CliError> {
        let meta = self.meta();
        let mut d = read_table(path, delim)?.to_dataset(targets, Some(&meta.feature_names))?;
        if let Some(n) = &meta.normalization {
            apply_norm(&mut d, n);
        }
        Ok(d)
    }

    fn predict(&self, data: &Dataset, options: &PredictOptions) -> Result<Vec<PredictiveSummary>, CliError> {
        Ok(match self {
            Source::Single(m, mask) => predict_many(&m.fit.global, &data.x, options, mask.as_ref())?,
            Source::Ensemble(e, _) => ensemble_predict_many(e, &data.x, options)?,
        })
    }

    fn sparse_warning(&self) -> Option<String> {
        match self {
            Source::Single(_, Some(mask)) if mask.kept_count() == 0 => {
                Some("mask keeps no weights; predictions use the output biases only".into())
            }
            _ => None,
        }
    }
}

fn predict_options(s: &SourceArgs) -> PredictOptions {
    PredictOptions { tol: s.predict_tol, ..PredictOptions::default() }
}

fn predict(a: PredictArgs) -> Result<Manifest, CliError> {
    if !(a.ci_level > 0.0 && a.ci_level < 1.0) {
        return Err(CliError::Usage(format!("--ci-level {} not in (0, 1)", a.ci_level)));
    }
    let source = Source::load(&a.source)?;
    let data = source.dataset(&a.data, delimiter(a.delimiter)?, &[])?;
    let options = predict_options(&a.source);
    let summaries = source.predict(&data, &options)?;
    let meta = source.meta();
    write_predictions(&a.out, &meta.target_names, &summaries, a.ci_level)?;
    let mut man = manifest("predict");
    man.warnings.extend(source.sparse_warning());
    man.outputs.push(a.out.clone());
    if let Some(j) = a.samples {
        let Source::Single(model, mask) = &source else {
            return Err(CliError::Usage("--samples applies to single models only".into()));
        };
        let global = match mask {
            Some(m) => m.apply(&model.fit.global)?,
            None => model.fit.global.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let draws = (0..data.len())
            .map(|i| {
                let (obs, _) = predictive_local_fit(&global, data.x.row(i), &options)?;
                Ok(sample_predictive(&global, &obs, data.x.row(i), j, &mut rng))
            })
            .collect::<bowtie_core::Result<Vec<_>>>()?;
        let path = a.samples_out.unwrap_or_else(|| sibling(&a.out, ".samples.csv"));
        write_samples(&path, &meta.target_names, &draws)?;
        man.outputs.push(path);
        man.seed = Some(a.seed);
    }
    Ok(man)
}

fn select(a: SelectArgs) -> Result<Manifest, CliError> {
    let model = TrainedModel::load(&a.model)?;
    let mask = select_nodes(&model.fit.global, a.alpha)?;
    write_json(&a.out, &MaskFile::from_mask(&mask))?;
    let dot = a.dot.unwrap_or_else(|| sibling(&a.out, ".dot"));
    crate::formats::write_atomic(&dot, crate::formats::mask_dot(&mask, &model.feature_names, &model.target_names).as_bytes())?;
    let mut man = manifest("select");
    if mask.kept_count() == 0 {
        man.warnings.push(format!("no weight passes the false discovery rate {}", a.alpha));
    }
    man.outputs = vec![a.out, dot];
    man.config = Some(model.fit.config);
    Ok(man)
}

fn ensemble(a: EnsembleArgs) -> Result<Manifest, CliError> {
    if a.fit.svi {
        return Err(CliError::Usage("ensembles are fitted with coordinate ascent; drop --svi".into()));
    }
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let (data, _, warnings) = training_data(&a.data, None, a.model.seed)?;
    let config = network_config(&a.model, data.x.cols(), data.y.cols())?;
    let model = fit_ensemble_parallel(&config, &data, a.k, a.zeta, &cavi_options(&a.fit))?;
    let mut man = manifest("ensemble");
    man.warnings = warnings;
    let mut paths = Vec::new();
    for (i, member) in model.members.iter().enumerate() {
        let path = sibling(&a.out, &format!(".member{i}.json"));
        let tm = TrainedModel {
            fit: member.clone(),
            method: "cavi".into(),
            feature_names: data.feature_names.clone(),
            target_names: data.target_names.clone(),
            normalization: data.norm.clone(),
        };
        tm.save(&path)?;
        paths.push(PathBuf::from(path.file_name().expect("member path has a file name")));
        man.outputs.push(path);
    }
    for i in model.unconverged() {
        man.warnings.push(format!("member {i} did not converge"));
    }
    let file = EnsembleFile {
        members: paths,
        weights: model.weights.clone(),
        zeta: model.zeta,
        elbos: model.members.iter().map(|m| m.final_elbo()).collect(),
        converged: model.members.iter().map(|m| m.converged).collect(),
    };
    write_json(&a.out, &file)?;
    man.outputs.insert(0, a.out);
    man.seed = Some(config.seed);
    man.config = Some(config);
    Ok(man)
}

fn eval(a: EvalArgs) -> Result<Manifest, CliError> {
    let source = Source::load(&a.source)?;
    let targets = if a.data.target.is_empty() { source.meta().target_names.clone() } else { a.data.target.clone() };
    let data = source.dataset(&a.data.data, delimiter(a.data.delimiter)?, &targets)?;
    let summaries = source.predict(&data, &predict_options(&a.source))?;
    let report = metrics(&data.y, &summaries, &a.ci_level)?;
    write_json(&a.out, &report)?;
    let mut man = manifest("eval");
    man.warnings.extend(source.sparse_warning());
    man.outputs.push(a.out);
    Ok(man)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
