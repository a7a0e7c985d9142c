//! Configuration-driven experiments: data generation, federated training,
//! baselines, metrics CSVs, checkpoints and plots.
//!
//! A run directory contains:
//!
//! | file | contents |
//! |------|----------|
//! | `metrics.csv` | `experiment,method,layer,nmse_db,psnr_db` |
//! | `rounds.csv` | `layer,round,client_id,local_loss,bytes_sent` |
//! | `round_metrics.csv` | `layer,round,global_round,nmse_db` (test NMSE after each round) |
//! | `train_log.csv` | per-epoch training losses |
//! | `fed_cs.ckpt`, `lista.ckpt` | trained networks |
//! | `sensing_matrix.txt`, `test_set.txt` | problem instance |
//! | `nmse_vs_layers.svg`, `nmse_vs_rounds.svg` | plots |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{
    build_dataset, generate_sensing_matrix, load_matrix_file, partition_dataset, save_matrix_file,
    Dataset, MagnitudeDist, SensingMatrix,
};
use crate::error::{Error, Result};
use crate::federation::{evaluate, fed_cs_train_monitored, write_history_csv, FedConfig, FedOutcome};
use crate::ista::ista_batch;
use crate::lista::{forward_batch, Batch, NetworkParams};
use crate::metrics::{nmse_db, psnr};
use crate::plot::{self, render_series, PlotSpec, Series};
use crate::rng::derive_seed;
use crate::textio;
use crate::trainer::{train_centralized, TrainConfig, TrainStats};

const MATRIX_TAG: u64 = 1;
const TRAIN_TAG: u64 = 2;
const TEST_TAG: u64 = 3;
const MODEL_TAG: u64 = 4;

pub const METHOD_FED: &str = "fed_cs";
pub const METHOD_LISTA: &str = "lista";
pub const METHOD_ISTA: &str = "ista";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub m: usize,
    pub n: usize,
    pub p: f64,
    pub magnitude: MagnitudeDist,
    /// Pre-computed operator (for example a projected dictionary); its
    /// columns are normalized after loading.
    pub matrix_file: Option<PathBuf>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            m: 250,
            n: 500,
            p: 0.1,
            magnitude: MagnitudeDist::default(),
            matrix_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_per_client: usize,
    pub test_size: usize,
    /// Explicit per-client sample counts; overrides `train_per_client`.
    pub partition_sizes: Option<Vec<usize>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_per_client: 100,
            test_size: 1000,
            partition_sizes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    pub workers: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 10,
            rounds: 10,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub ista: bool,
    pub lista: bool,
    pub ista_lambda: Option<f64>,
    pub ista_step: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            ista: true,
            lista: true,
            ista_lambda: None,
            ista_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also report PSNR of the final estimates, with this peak value.
    pub psnr_peak: Option<f64>,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
            psnr_peak: None,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub problem: ProblemConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub federation: FederationConfig,
    pub baselines: BaselineConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            problem: ProblemConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            federation: FederationConfig::default(),
            baselines: BaselineConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative `matrix_file` is
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::parse(&textio::read_file(path)?)?;
        if let (Some(file), Some(dir)) = (&cfg.problem.matrix_file, path.parent()) {
            if file.is_relative() {
                cfg.problem.matrix_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.matrix_file.is_none() && (p.m == 0 || p.m >= p.n) {
            return Err(Error::Config(format!("need 0 < M < N, got M={}, N={}", p.m, p.n)));
        }
        if !(p.p > 0.0 && p.p < 1.0) {
            return Err(Error::Config(format!("p = {} is not in (0, 1)", p.p)));
        }
        let f = &self.federation;
        if f.clients == 0 || f.rounds == 0 || f.workers == 0 {
            return Err(Error::Config("clients, rounds and workers must be positive".into()));
        }
        match &self.data.partition_sizes {
            Some(sizes) if sizes.len() != f.clients => {
                return Err(Error::Config(format!("{} partition sizes for {} clients", sizes.len(), f.clients)))
            }
            Some(sizes) if sizes.contains(&0) => return Err(Error::Config("empty client partition".into())),
            None if self.data.train_per_client == 0 => {
                return Err(Error::Config("train_per_client must be positive".into()))
            }
            _ => {}
        }
        if self.data.test_size == 0 {
            return Err(Error::Config("test_size must be positive".into()));
        }
        if let Some(peak) = self.output.psnr_peak {
            if !(peak > 0.0) {
                return Err(Error::Config(format!("psnr_peak = {peak} is not positive")));
            }
        }
        self.train.validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, MODEL_TAG),
            ..self.train.clone()
        }
    }

    fn train_size(&self) -> usize {
        match &self.data.partition_sizes {
            Some(sizes) => sizes.iter().sum(),
            None => self.federation.clients * self.data.train_per_client,
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub experiment: String,
    pub method: String,
    pub layer: usize,
    pub nmse_db: f64,
    pub psnr_db: Option<f64>,
}

/// The fixed problem instance of a run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub a: SensingMatrix,
    pub train: Dataset,
    pub test: Dataset,
}

/// Builds the sensing matrix, training set and test set. The test set
/// depends only on the master seed and problem settings, so it is shared by
/// every run of a sweep.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let p = &cfg.problem;
    let a = match &p.matrix_file {
        Some(path) => SensingMatrix::from_unnormalized(load_matrix_file(path)?)?,
        None => generate_sensing_matrix(p.m, p.n, derive_seed(cfg.seed, MATRIX_TAG))?,
    };
    let train = build_dataset(&a, cfg.train_size(), p.p, &p.magnitude, derive_seed(cfg.seed, TRAIN_TAG))?;
    let test = build_dataset(&a, cfg.data.test_size, p.p, &p.magnitude, derive_seed(cfg.seed, TEST_TAG))?;
    Ok(Problem { a, train, test })
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub out_dir: PathBuf,
    pub records: Vec<MetricRecord>,
    pub fed: FedOutcome,
    pub fed_model: NetworkParams,
    pub lista_model: Option<NetworkParams>,
}

impl ExperimentReport {
    /// Per-layer NMSE of one method, in layer order.
    pub fn curve(&self, method: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.nmse_db)
            .collect()
    }

    pub fn summary(&self) -> String {
        let methods: Vec<&str> = [METHOD_FED, METHOD_LISTA, METHOD_ISTA]
            .into_iter()
            .filter(|m| self.records.iter().any(|r| r.method == *m))
            .collect();
        let mut out = format!("experiment `{}` (NMSE dB per layer)\n{:>6}", self.name, "layer");
        for m in &methods {
            write!(out, " {m:>10}").unwrap();
        }
        out.push('\n');
        let depth = self.curve(methods[0]).len();
        for layer in 0..depth {
            write!(out, "{:>6}", layer + 1).unwrap();
            for m in &methods {
                match self.curve(m).get(layer) {
                    Some(v) => write!(out, " {v:>10.3}").unwrap(),
                    None => write!(out, " {:>10}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        writeln!(
            out,
            "uploads: {} bytes over {} rounds, final models {} bytes",
            self.fed.round_bytes(),
            self.fed.history.len(),
            self.fed.final_upload_bytes.iter().sum::<usize>()
        )
        .unwrap();
        out
    }
}

fn psnr_of(peak: Option<f64>, truth: &Batch, est: &ndarray::Array2<f64>) -> Result<Option<f64>> {
    peak.map(|p| psnr(truth.x.view(), est.view(), p)).transpose()
}

fn method_records(
    name: &str,
    method: &str,
    truth: &Batch,
    estimates: &[ndarray::Array2<f64>],
    peak: Option<f64>,
) -> Result<Vec<MetricRecord>> {
    estimates
        .iter()
        .enumerate()
        .map(|(i, est)| {
            Ok(MetricRecord {
                experiment: name.to_string(),
                method: method.to_string(),
                layer: i + 1,
                nmse_db: nmse_db(truth.x.view(), est.view())?,
                psnr_db: psnr_of(peak, truth, est)?,
            })
        })
        .collect()
}

fn network_estimates(net: &NetworkParams, test: &Batch) -> Result<Vec<ndarray::Array2<f64>>> {
    let x0 = ndarray::Array2::zeros(test.x.dim());
    Ok(forward_batch(net, test.y.view(), x0.view())?.post)
}

pub fn write_metrics_csv(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["experiment", "method", "layer", "nmse_db", "psnr_db"])?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.method.clone(),
            r.layer.to_string(),
            r.nmse_db.to_string(),
            r.psnr_db.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse { line: i + 2, msg: format!("bad {what}") };
        let field = |j: usize| rec.get(j).ok_or_else(|| bad("row"));
        out.push(MetricRecord {
            experiment: field(0)?.to_string(),
            method: field(1)?.to_string(),
            layer: field(2)?.parse().map_err(|_| bad("layer"))?,
            nmse_db: field(3)?.parse().map_err(|_| bad("nmse_db"))?,
            psnr_db: match field(4)? {
                "" => None,
                v => Some(v.parse().map_err(|_| bad("psnr_db"))?),
            },
        });
    }
    Ok(out)
}

fn write_train_log(path: &Path, runs: &[(&str, &[TrainStats])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "layer", "client_id", "call", "stage", "epoch", "loss"])?;
    for (method, stats) in runs {
        let mut calls = std::collections::HashMap::new();
        for s in stats.iter() {
            let call = calls.entry((s.layer, s.client_id)).or_insert(0usize);
            *call += 1;
            for e in &s.losses {
                w.write_record([
                    method.to_string(),
                    s.layer.to_string(),
                    s.client_id.to_string(),
                    call.to_string(),
                    e.stage.to_string(),
                    e.epoch.to_string(),
                    e.loss.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_round_metrics(path: &Path, fed: &FedOutcome, rounds: usize) -> Result<Vec<(f64, f64)>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "round", "global_round", "nmse_db"])?;
    let mut points = Vec::new();
    for rec in &fed.history {
        let global = (rec.layer - 1) * rounds + rec.round;
        let nmse = rec.monitor_nmse_db.unwrap_or(f64::NAN);
        w.write_record([rec.layer.to_string(), rec.round.to_string(), global.to_string(), nmse.to_string()])?;
        points.push((global as f64, nmse));
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(points)
}

/// Runs federated training and the enabled baselines and writes every
/// artifact into `cfg.output.dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out_dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let problem = build_problem(cfg)?;
    let train_cfg = cfg.train_config();
    let test = Batch::from_dataset(&problem.test);
    let peak = cfg.output.psnr_peak;

    let partition = partition_dataset(
        &problem.train,
        cfg.federation.clients,
        cfg.data.partition_sizes.as_deref(),
    )?;
    let fed_cfg = FedConfig {
        train: train_cfg.clone(),
        rounds: cfg.federation.rounds,
        workers: cfg.federation.workers,
    };
    log::info!(
        "{}: federated training with K={} C={} L={} E={}",
        cfg.name, cfg.federation.clients, fed_cfg.rounds, train_cfg.layers, train_cfg.epochs
    );
    let fed = fed_cs_train_monitored(&problem.train, &partition, &problem.a, &fed_cfg, Some(&test))?;
    let mut records = method_records(&cfg.name, METHOD_FED, &test, &network_estimates(&fed.consensus, &test)?, peak)?;

    let lista_model = if cfg.baselines.lista {
        log::info!("{}: centralized layer-wise baseline", cfg.name);
        let (model, stats) = train_centralized(&problem.train, &problem.a, &train_cfg)?;
        records.extend(method_records(&cfg.name, METHOD_LISTA, &test, &network_estimates(&model, &test)?, peak)?);
        Some((model, stats))
    } else {
        None
    };

    if cfg.baselines.ista {
        let estimates = ista_batch(
            problem.a.entries().view(),
            test.y.view(),
            train_cfg.layers,
            cfg.baselines.ista_lambda,
            cfg.baselines.ista_step,
        )?;
        records.extend(method_records(&cfg.name, METHOD_ISTA, &test, &estimates, peak)?);
    }

    write_metrics_csv(&records, &out_dir.join("metrics.csv"))?;
    write_history_csv(&fed.history, &out_dir.join("rounds.csv"))?;
    let round_points = write_round_metrics(&out_dir.join("round_metrics.csv"), &fed, fed_cfg.rounds)?;
    let mut logs: Vec<(&str, &[TrainStats])> = vec![(METHOD_FED, &fed.stats)];
    if let Some((_, stats)) = &lista_model {
        logs.push((METHOD_LISTA, stats));
    }
    write_train_log(&out_dir.join("train_log.csv"), &logs)?;
    fed.consensus.save(&out_dir.join("fed_cs.ckpt"))?;
    if let Some((model, _)) = &lista_model {
        model.save(&out_dir.join("lista.ckpt"))?;
    }
    save_matrix_file(&out_dir.join("sensing_matrix.txt"), problem.a.entries())?;
    problem.test.save(&out_dir.join("test_set.txt"))?;

    if cfg.output.plots {
        let mut spec = PlotSpec::parse("layer:nmse_db:method")?;
        spec.title = format!("{}: NMSE vs layers", cfg.name);
        plot::write_svg(&out_dir.join("nmse_vs_layers.svg"), &plot::render_svg(&out_dir.join("metrics.csv"), &spec)?)?;
        let series: Vec<Series> = vec![(METHOD_FED.into(), round_points)];
        let svg = render_series(&format!("{}: NMSE vs communication rounds", cfg.name), "communication round", "nmse_db", &series);
        plot::write_svg(&out_dir.join("nmse_vs_rounds.svg"), &svg)?;
    }

    Ok(ExperimentReport {
        name: cfg.name.clone(),
        out_dir,
        records,
        fed_model: fed.consensus.clone(),
        fed,
        lista_model: lista_model.map(|(m, _)| m),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Clients,
    Epochs,
    Rounds,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Clients => "clients",
            SweepAxis::Epochs => "epochs",
            SweepAxis::Rounds => "rounds",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: usize) {
        match self {
            SweepAxis::Clients => {
                cfg.federation.clients = value;
                cfg.data.partition_sizes = None;
            }
            SweepAxis::Epochs => cfg.train.epochs = value,
            SweepAxis::Rounds => cfg.federation.rounds = value,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clients" => Ok(SweepAxis::Clients),
            "epochs" => Ok(SweepAxis::Epochs),
            "rounds" => Ok(SweepAxis::Rounds),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// Parses `1..10` (inclusive), `1,2,4`, or a single value.
pub fn parse_values(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("bad value list `{text}`"));
    let values: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub runs: Vec<ExperimentReport>,
}

impl SweepReport {
    /// Final-layer NMSE of `method` for every swept value.
    pub fn final_nmse(&self, method: &str) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.curve(method).last().copied().unwrap_or(f64::NAN))
            .collect()
    }
}

/// One run per value, each in `<dir>/<axis>_<value>`, plus `sweep.csv`,
/// an overlay of the per-layer curves, and final-layer NMSE against the
/// swept value.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("no sweep values".into()));
    }
    let base = cfg.output.dir.clone();
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    let mut runs = Vec::with_capacity(values.len());
    for &value in values {
        let mut run_cfg = cfg.clone();
        axis.apply(&mut run_cfg, value);
        run_cfg.name = format!("{}_{}_{value}", cfg.name, axis.name());
        run_cfg.output.dir = base.join(format!("{}_{value}", axis.name()));
        runs.push(run_experiment(&run_cfg)?);
    }

    let path = base.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["axis", "value", "method", "layer", "nmse_db"])?;
    for (value, run) in values.iter().zip(&runs) {
        for r in &run.records {
            w.write_record([axis.name().to_string(), value.to_string(), r.method.clone(), r.layer.to_string(), r.nmse_db.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let report = SweepReport { axis, values: values.to_vec(), runs };
    if cfg.output.plots {
        let overlay: Vec<Series> = values
            .iter()
            .zip(&report.runs)
            .map(|(v, run)| {
                let pts = run.curve(METHOD_FED).iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect();
                (format!("{}={v}", axis.name()), pts)
            })
            .collect();
        let svg = render_series(&format!("{}: NMSE vs layers by {}", cfg.name, axis.name()), "layer", "nmse_db", &overlay);
        plot::write_svg(&base.join("sweep_layers.svg"), &svg)?;
        let finals: Vec<Series> = [METHOD_FED, METHOD_LISTA, METHOD_ISTA]
            .into_iter()
            .filter(|m| report.runs[0].records.iter().any(|r| r.method == *m))
            .map(|m| {
                let pts = values.iter().zip(report.final_nmse(m)).map(|(&v, y)| (v as f64, y)).collect();
                (m.to_string(), pts)
            })
            .collect();
        let svg = render_series(&format!("{}: final-layer NMSE vs {}", cfg.name, axis.name()), axis.name(), "nmse_db", &finals);
        plot::write_svg(&base.join("sweep_final.svg"), &svg)?;
    }
    Ok(report)
}

/// Per-layer NMSE of a stored checkpoint on a stored dataset.
pub fn eval_files(checkpoint: &Path, dataset: &Path) -> Result<Vec<f64>> {
    let net = NetworkParams::load(checkpoint)?;
    let data = Dataset::load(dataset)?;
    evaluate(&net, &Batch::from_dataset(&data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = r#"
            name = "t"
            seed = 9
            [problem]
            m = 5
            n = 10
            p = 0.2
            magnitude = { kind = "uniform", low = 0.5, high = 1.5 }
            [data]
            train_per_client = 3
            test_size = 7
            [train]
            alpha0 = 1e-3
            alpha1 = 2e-4
            alpha2 = 2e-5
            epochs = 2
            layers = 2
            loss_mode = "last_layer"
            beta_mode = "literal_weight_scale"
            minibatch = 2
            init = { kind = "random", scale = 0.1 }
            [federation]
            clients = 2
            rounds = 1
            [baselines]
            lista = false
            [output]
            dir = "somewhere"
            plots = false
        "#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.problem.magnitude, MagnitudeDist::Uniform { low: 0.5, high: 1.5 });
        assert_eq!(cfg.train.minibatch, Some(2));
        assert_eq!(cfg.train.beta_mode, crate::trainer::BetaMode::LiteralWeightScale);
        assert!(!cfg.baselines.lista);
        assert_eq!(cfg.train_size(), 6);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("[train]\nalpha = 1").is_err());
        assert!(ExperimentConfig::parse("[train]\nseed = 1").is_err());
        assert!(ExperimentConfig::parse("[problem]\nm = 10\nn = 10").is_err());
        assert!(ExperimentConfig::parse("[problem]\np = 1.0").is_err());
        assert!(ExperimentConfig::parse("[federation]\nclients = 0").is_err());
        assert!(ExperimentConfig::parse("[federation]\nclients = 2\n[data]\npartition_sizes = [1]").is_err());
        assert!(ExperimentConfig::parse("").is_ok());
    }

    #[test]
    fn value_lists() {
        assert_eq!(parse_values("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_values("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_values("1, 2,4").unwrap(), vec![1, 2, 4]);
        assert_eq!(parse_values("7").unwrap(), vec![7]);
        assert!(parse_values("0..2").is_err());
        assert!(parse_values("a").is_err());
        assert!(parse_values("3..1").is_err());
        assert!("nodes".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn test_set_is_shared_across_client_counts() {
        let mut cfg = ExperimentConfig::parse("[problem]\nm = 4\nn = 8\n[data]\ntest_size = 5\ntrain_per_client = 2").unwrap();
        cfg.federation.clients = 1;
        let one = build_problem(&cfg).unwrap();
        cfg.federation.clients = 3;
        let three = build_problem(&cfg).unwrap();
        assert_eq!(one.test, three.test);
        assert_eq!(one.a, three.a);
        assert_eq!(one.train.samples(), &three.train.samples()[..2]);
    }
}
