//! Layer-wise federated training.
//!
//! For every layer the server initializes `Phi`, then runs `C` rounds in
//! which each client trains locally from the current consensus `Phi` and its
//! own earlier layers, uploads only its new layer, and the server replaces
//! `Phi` by the sample-weighted average. After the last layer every client
//! uploads its whole network once and the server averages those.
//!
//! Clients keep fine-tuning their earlier layers locally; those copies are
//! never re-synchronized until the final aggregation.

use std::path::Path;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{Dataset, Partition, SensingMatrix};
use crate::error::{Error, Result};
use crate::lista::{forward_batch, Batch, LayerParams, NetworkParams};
use crate::metrics::nmse_db;
use crate::trainer::{client_rng, init_next_layer, train_layer_local, TrainConfig, TrainStats};
use crate::rng::StreamRng;

const WEIGHT_SUM_TOL: f64 = 1e-12;

fn check_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(Error::mismatch(format!("{count} weights"), weights.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::param("weights", format!("{w} is not a non-negative number")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::WeightSum(sum));
    }
    Ok(())
}

/// Entrywise weighted average of layers. Accumulates in list order starting
/// from the first weighted term, so a single weight-1 input is reproduced
/// bit for bit.
pub fn aggregate_layer(phis: &[LayerParams], weights: &[f64]) -> Result<LayerParams> {
    let first = phis.first().ok_or(Error::Empty("layer list"))?;
    check_weights(weights, phis.len())?;
    for phi in &phis[1..] {
        if phi.v.dim() != first.v.dim() || phi.w.dim() != first.w.dim() {
            return Err(Error::mismatch(format!("{:?}", first.dims()), format!("{:?}", phi.dims())));
        }
    }
    let w0 = weights[0];
    let mut acc = LayerParams {
        v: first.v.mapv(|x| w0 * x),
        w: first.w.mapv(|x| w0 * x),
        theta: w0 * first.theta,
    };
    for (phi, &wk) in phis.iter().zip(weights).skip(1) {
        acc.v.scaled_add(wk, &phi.v);
        acc.w.scaled_add(wk, &phi.w);
        acc.theta += wk * phi.theta;
    }
    Ok(acc)
}

/// Layer-by-layer [`aggregate_layer`].
pub fn aggregate_network(thetas: &[NetworkParams], weights: &[f64]) -> Result<NetworkParams> {
    let first = thetas.first().ok_or(Error::Empty("network list"))?;
    check_weights(weights, thetas.len())?;
    for t in &thetas[1..] {
        if t.depth() != first.depth() || t.dims() != first.dims() {
            return Err(Error::mismatch(
                format!("depth {} with {:?}", first.depth(), first.dims()),
                format!("depth {} with {:?}", t.depth(), t.dims()),
            ));
        }
    }
    let (m, n) = first.dims();
    let layers = (0..first.depth())
        .map(|i| {
            let column: Vec<LayerParams> = thetas.iter().map(|t| t.layers()[i].clone()).collect();
            aggregate_layer(&column, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkParams::from_layers(m, n, layers)
}

/// Per-layer NMSE (dB) of `theta` on `test`, from zero initial estimates.
pub fn evaluate(theta: &NetworkParams, test: &Batch) -> Result<Vec<f64>> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let x0 = Array2::zeros(test.x.dim());
    let trace = forward_batch(theta, test.y.view(), x0.view())?;
    trace
        .post
        .iter()
        .map(|est| nmse_db(test.x.view(), est.view()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub train: TrainConfig,
    /// Communication rounds per layer.
    pub rounds: usize,
    /// Worker threads running clients; results do not depend on it.
    pub workers: usize,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.rounds == 0 {
            return Err(Error::param("rounds", "must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::param("workers", "must be positive"));
        }
        Ok(())
    }
}

/// One simulated client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub data: Batch,
    pub theta_local: NetworkParams,
    rng: StreamRng,
}

/// Upload from a client to the server.
#[derive(Debug, Clone)]
pub struct Message {
    pub client_id: usize,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub layer: usize,
    pub round: usize,
    /// Layer parameters as decoded by the server, by client id.
    pub sent: Vec<LayerParams>,
    pub bytes_sent: Vec<usize>,
    pub aggregated: LayerParams,
    pub local_loss: Vec<f64>,
    pub wall_clock: Duration,
    /// NMSE of the would-be consensus network after this round, when a
    /// monitor set was supplied.
    pub monitor_nmse_db: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub consensus: NetworkParams,
    pub history: Vec<RoundRecord>,
    /// Size of each client's final full-network upload.
    pub final_upload_bytes: Vec<usize>,
    /// `appended[l][k]`: fingerprint of the layer client `k` appended when
    /// layer `l + 1` closed.
    pub appended: Vec<Vec<u64>>,
    pub stats: Vec<TrainStats>,
}

impl FedOutcome {
    /// Total bytes uploaded during the per-layer rounds.
    pub fn round_bytes(&self) -> usize {
        self.history.iter().flat_map(|r| r.bytes_sent.iter()).sum()
    }
}

/// Layer-wise federated training over `partition` of `dataset`.
pub fn fed_cs_train(
    dataset: &Dataset,
    partition: &Partition,
    a: &SensingMatrix,
    cfg: &FedConfig,
) -> Result<FedOutcome> {
    fed_cs_train_monitored(dataset, partition, a, cfg, None)
}

pub fn fed_cs_train_monitored(
    dataset: &Dataset,
    partition: &Partition,
    a: &SensingMatrix,
    cfg: &FedConfig,
    monitor: Option<&Batch>,
) -> Result<FedOutcome> {
    cfg.validate()?;
    if partition.total() != dataset.len() {
        return Err(Error::mismatch(format!("partition of {} samples", dataset.len()), partition.total()));
    }
    if (dataset.measurement_dim(), dataset.signal_dim()) != (a.rows(), a.cols()) {
        return Err(Error::mismatch(format!("data for a {}x{} operator", a.rows(), a.cols()), format!("({}, {})", dataset.measurement_dim(), dataset.signal_dim())));
    }
    let (m, n) = (a.rows(), a.cols());
    let weights = partition.weights();
    let train = &cfg.train;

    let mut clients = (0..partition.clients())
        .map(|k| {
            let indices = partition.indices(k).to_vec();
            let data = Batch::from_dataset(&dataset.subset(&indices)?);
            Ok(ClientState {
                client_id: k,
                indices,
                data,
                theta_local: NetworkParams::empty(m, n),
                rng: client_rng(train.seed, k),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut history = Vec::with_capacity(train.layers * cfg.rounds);
    let mut appended = Vec::with_capacity(train.layers);
    let mut all_stats = Vec::new();

    for l in 1..=train.layers {
        let mut phi = init_next_layer(a, train, l)?;
        for round in 1..=cfg.rounds {
            let started = Instant::now();
            let (tx, rx) = mpsc::channel::<Message>();
            let results: Vec<Result<TrainStats>> = pool.install(|| {
                clients
                    .par_iter_mut()
                    .map(|client| {
                        let out = train_layer_local(
                            client.client_id,
                            l,
                            &client.theta_local,
                            &phi,
                            &client.data,
                            train,
                            &mut client.rng,
                        )?;
                        client.theta_local = out.theta_prev;
                        tx.send(Message {
                            client_id: client.client_id,
                            payload: out.phi.to_payload(),
                        })
                        .expect("server inbox open");
                        Ok(out.stats)
                    })
                    .collect()
            });
            drop(tx);
            let stats = results.into_iter().collect::<Result<Vec<_>>>()?;

            let mut inbox: Vec<Message> = rx.into_iter().collect();
            inbox.sort_by_key(|msg| msg.client_id);
            let bytes_sent: Vec<usize> = inbox.iter().map(|msg| msg.payload.len()).collect();
            let sent = inbox
                .iter()
                .map(|msg| LayerParams::from_payload(&msg.payload))
                .collect::<Result<Vec<_>>>()?;
            phi = aggregate_layer(&sent, &weights)?;

            let monitor_nmse_db = match monitor {
                Some(batch) => {
                    let locals: Vec<NetworkParams> = clients.iter().map(|c| c.theta_local.clone()).collect();
                    let mut net = aggregate_network(&locals, &weights)?;
                    net.push(phi.clone())?;
                    evaluate(&net, batch)?.last().copied()
                }
                None => None,
            };
            log::info!("layer {l} round {round}: aggregated {} uploads", sent.len());
            history.push(RoundRecord {
                layer: l,
                round,
                sent,
                bytes_sent,
                aggregated: phi.clone(),
                local_loss: stats.iter().map(|s| s.final_loss).collect(),
                wall_clock: started.elapsed(),
                monitor_nmse_db,
            });
            all_stats.extend(stats);
        }
        let mut fingerprints = Vec::with_capacity(clients.len());
        for client in &mut clients {
            client.theta_local.push(phi.clone())?;
            let last = client.theta_local.prefix(l).layers()[l - 1].clone();
            fingerprints.push(NetworkParams::from_layers(m, n, vec![last])?.fingerprint());
        }
        appended.push(fingerprints);
    }

    // Final upload of every client's full network.
    let uploads: Vec<Vec<u8>> = clients
        .iter()
        .map(|c| c.theta_local.to_checkpoint().into_bytes())
        .collect();
    let final_upload_bytes = uploads.iter().map(Vec::len).collect();
    let locals = uploads
        .iter()
        .map(|bytes| {
            let text = std::str::from_utf8(bytes).expect("checkpoint text is UTF-8");
            NetworkParams::from_checkpoint(text)
        })
        .collect::<Result<Vec<_>>>()?;
    let consensus = aggregate_network(&locals, &weights)?;

    Ok(FedOutcome {
        consensus,
        history,
        final_upload_bytes,
        appended,
        stats: all_stats,
    })
}

/// Round history as CSV: `layer,round,client_id,local_loss,bytes_sent`.
pub fn write_history_csv(history: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "round", "client_id", "local_loss", "bytes_sent"])?;
    for rec in history {
        for (k, (loss, bytes)) in rec.local_loss.iter().zip(&rec.bytes_sent).enumerate() {
            w.write_record([
                rec.layer.to_string(),
                rec.round.to_string(),
                k.to_string(),
                loss.to_string(),
                bytes.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, generate_sensing_matrix, partition_dataset, MagnitudeDist};
    use crate::lista::{init_layer, InitMode};
    use crate::trainer::train_centralized;

    fn layer(fill: f64, theta: f64) -> LayerParams {
        LayerParams {
            v: Array2::from_elem((4, 2), fill),
            w: Array2::from_elem((4, 4), fill),
            theta,
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = init_layer(2, 4, None, &InitMode::Random { scale: 1.0 }, 3).unwrap();
        assert_eq!(aggregate_layer(std::slice::from_ref(&a), &[1.0]).unwrap(), a);
        assert_eq!(aggregate_layer(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap(), a);
        let mixed = aggregate_layer(&[layer(0.0, 0.0), layer(1.0, 1.0)], &[0.25, 0.75]).unwrap();
        assert_eq!(mixed, layer(0.75, 0.75));
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        let a = layer(1.0, 0.1);
        assert!(aggregate_layer(&[], &[]).is_err());
        assert!(matches!(aggregate_layer(&[a.clone(), a.clone()], &[0.5, 0.6]), Err(Error::WeightSum(_))));
        assert!(aggregate_layer(&[a.clone(), a.clone()], &[1.5, -0.5]).is_err());
        assert!(aggregate_layer(&[a.clone()], &[0.5, 0.5]).is_err());
        let other = LayerParams::zeros(3, 4);
        assert!(aggregate_layer(&[a.clone(), other], &[0.5, 0.5]).is_err());
        let one = NetworkParams::from_layers(2, 4, vec![a.clone()]).unwrap();
        let two = NetworkParams::from_layers(2, 4, vec![a.clone(), a]).unwrap();
        assert!(aggregate_network(&[one, two], &[0.5, 0.5]).is_err());
    }

    fn setup(k: usize, per_client: usize) -> (SensingMatrix, Dataset, Partition) {
        let a = generate_sensing_matrix(6, 12, 5).unwrap();
        let ds = build_dataset(&a, k * per_client, 0.2, &MagnitudeDist::default(), 6).unwrap();
        let p = partition_dataset(&ds, k, None).unwrap();
        (a, ds, p)
    }

    fn cfg(rounds: usize, workers: usize) -> FedConfig {
        FedConfig {
            train: TrainConfig {
                alpha0: 5e-3,
                alpha1: 1e-3,
                alpha2: 1e-4,
                epochs: 5,
                layers: 3,
                seed: 17,
                ..TrainConfig::default()
            },
            rounds,
            workers,
        }
    }

    #[test]
    fn single_client_matches_centralized() {
        let (a, ds, p) = setup(1, 8);
        let fed = fed_cs_train(&ds, &p, &a, &cfg(1, 1)).unwrap();
        let (central, _) = train_centralized(&ds, &a, &cfg(1, 1).train).unwrap();
        assert_eq!(fed.consensus.to_checkpoint(), central.to_checkpoint());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (a, ds, p) = setup(3, 5);
        let one = fed_cs_train(&ds, &p, &a, &cfg(2, 1)).unwrap();
        let three = fed_cs_train(&ds, &p, &a, &cfg(2, 3)).unwrap();
        assert_eq!(one.consensus.to_checkpoint(), three.consensus.to_checkpoint());
    }

    #[test]
    fn duplicate_clients_agree_with_each_local_result() {
        let a = generate_sensing_matrix(6, 12, 5).unwrap();
        let half = build_dataset(&a, 5, 0.2, &MagnitudeDist::default(), 6).unwrap();
        let mut samples = half.samples().to_vec();
        samples.extend(half.samples().iter().cloned());
        let ds = Dataset::new(samples).unwrap();
        let p = partition_dataset(&ds, 2, None).unwrap();
        // Same seed for both shuffle streams is irrelevant in full-batch mode.
        let fed = fed_cs_train(&ds, &p, &a, &cfg(2, 1)).unwrap();
        let single = fed_cs_train(&half, &partition_dataset(&half, 1, None).unwrap(), &a, &cfg(2, 1)).unwrap();
        for (x, y) in fed
            .consensus
            .to_checkpoint()
            .split_whitespace()
            .zip(single.consensus.to_checkpoint().split_whitespace())
        {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn records_rounds_and_uploads() {
        let (a, ds, p) = setup(2, 4);
        let c = cfg(2, 2);
        let test = Batch::from_dataset(&ds);
        let out = fed_cs_train_monitored(&ds, &p, &a, &c, Some(&test)).unwrap();
        assert_eq!(out.history.len(), c.train.layers * c.rounds);
        for rec in &out.history {
            assert_eq!(rec.sent.len(), 2);
            for (phi, bytes) in rec.sent.iter().zip(&rec.bytes_sent) {
                assert_eq!(*bytes, phi.to_payload().len());
            }
            let again = aggregate_layer(&rec.sent, &p.weights()).unwrap();
            assert_eq!(again, rec.aggregated);
            assert!(rec.monitor_nmse_db.is_some());
        }
        for per_layer in &out.appended {
            assert!(per_layer.windows(2).all(|w| w[0] == w[1]));
        }
        assert_eq!(out.final_upload_bytes.len(), 2);
        assert_eq!(out.consensus.depth(), 3);
        let nmse = evaluate(&out.consensus, &test).unwrap();
        assert_eq!(nmse.len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        write_history_csv(&out.history, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2 * 2);
        assert!(text.starts_with("layer,round,client_id,local_loss,bytes_sent\n"));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (a, ds, _) = setup(2, 4);
        let wrong = partition_dataset(&ds.subset(&[0, 1, 2]).unwrap(), 1, None).unwrap();
        assert!(fed_cs_train(&ds, &wrong, &a, &cfg(1, 1)).is_err());
        let p = partition_dataset(&ds, 2, None).unwrap();
        assert!(fed_cs_train(&ds, &p, &a, &cfg(0, 1)).is_err());
        assert!(fed_cs_train(&ds, &p, &a, &cfg(1, 0)).is_err());
        assert!(evaluate(&NetworkParams::empty(6, 12), &Batch::from_dataset(&ds).select(&[])).is_err());
    }
}
