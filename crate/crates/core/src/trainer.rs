//! Three-stage layer-wise training run by each client.
//!
//! For layer `l`: the new layer alone is fitted on top of the frozen,
//! already-trained layers (rate `alpha0`); then the whole depth-`l` network is
//! fine-tuned at `alpha1` and again at `alpha2`. The decay factor `beta` is
//! applied once per call according to [`BetaMode`].

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SensingMatrix};
use crate::error::{Error, Result};
use crate::lista::{
    forward_batch, init_layer, loss_and_grad_from, Batch, GradientBundle, InitMode, LayerParams,
    LossScope, NetworkParams,
};
use crate::rng::{derive_seed, stream_rng, StreamRng};

const CLIENT_STREAM_TAG: u64 = 0xC11E;
const LAYER_INIT_TAG: u64 = 0x1A7E;

/// How the decaying rate is applied at the end of each layer's training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// During stages 2 and 3 of layer `l`, layer `i < l` trains at
    /// `alpha * beta^(l - i)`, so earlier layers drift slowly.
    #[default]
    LrDecay,
    /// Multiplies every weight of the depth-`l` network by `beta` after
    /// stage 3.
    LiteralWeightScale,
}

/// Update rule applied to each gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    /// `param -= alpha * grad`.
    #[default]
    Sgd,
    /// Adam with bias correction. Moments restart at every stage.
    Adam {
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn adam_beta1() -> f64 {
    0.9
}
fn adam_beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: adam_beta1(),
            beta2: adam_beta2(),
            eps: adam_eps(),
        }
    }
}

struct Moments {
    m: GradientBundle,
    v: GradientBundle,
    t: i32,
}

/// Applies one optimizer's steps to a network, keeping its state.
struct Stepper {
    opt: Optimizer,
    moments: Option<Moments>,
}

impl Stepper {
    fn new(opt: Optimizer) -> Self {
        Stepper { opt, moments: None }
    }

    fn step(&mut self, net: &mut NetworkParams, g: &GradientBundle, lrs: &[f64]) -> Result<usize> {
        let Optimizer::Adam { beta1, beta2, eps } = self.opt else {
            return net.descend(g, lrs);
        };
        let st = self.moments.get_or_insert_with(|| Moments {
            m: GradientBundle::zeros_like(net),
            v: GradientBundle::zeros_like(net),
            t: 0,
        });
        st.t += 1;
        let c1 = 1.0 - beta1.powi(st.t);
        let c2 = 1.0 - beta2.powi(st.t);
        let mut dir = GradientBundle::zeros_like(net);
        for (((m, v), g), d) in st.m.layers.iter_mut().zip(&mut st.v.layers).zip(&g.layers).zip(&mut dir.layers) {
            let pairs = [(&mut m.v, &mut v.v, &g.v, &mut d.v), (&mut m.w, &mut v.w, &g.w, &mut d.w)];
            for (mm, vv, gg, dd) in pairs {
                ndarray::Zip::from(mm).and(vv).and(gg).and(dd).for_each(|mm, vv, &gg, dd| {
                    *mm = beta1 * *mm + (1.0 - beta1) * gg;
                    *vv = beta2 * *vv + (1.0 - beta2) * gg * gg;
                    *dd = (*mm / c1) / ((*vv / c2).sqrt() + eps);
                });
            }
            m.theta = beta1 * m.theta + (1.0 - beta1) * g.theta;
            v.theta = beta2 * v.theta + (1.0 - beta2) * g.theta * g.theta;
            d.theta = (m.theta / c1) / ((v.theta / c2).sqrt() + eps);
        }
        net.descend(&dir, lrs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// Local epochs per stage.
    pub epochs: usize,
    pub layers: usize,
    /// Loss used by stages 2 and 3. Stage 1 always uses the last layer.
    pub loss_mode: LossScope,
    pub beta_mode: BetaMode,
    /// Minibatch size; `None` means one full-batch step per epoch.
    pub minibatch: Option<usize>,
    pub optimizer: Optimizer,
    /// Recipe for each freshly added layer.
    pub init: InitMode,
    /// Set programmatically; experiments derive it from their master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let alpha0 = 5e-4;
        TrainConfig {
            alpha0,
            alpha1: 0.2 * alpha0,
            alpha2: 0.02 * alpha0,
            beta: 0.3,
            epochs: 100,
            layers: 10,
            loss_mode: LossScope::AllLayers,
            beta_mode: BetaMode::LrDecay,
            minibatch: None,
            optimizer: Optimizer::Sgd,
            init: InitMode::Ista {
                lambda: 0.1,
                step: None,
                noise: 1e-4,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha0", self.alpha0), ("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} is not positive")));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::param("beta", format!("{} is not in (0, 1]", self.beta)));
        }
        if self.layers == 0 {
            return Err(Error::param("layers", "must be positive"));
        }
        if self.minibatch == Some(0) {
            return Err(Error::param("minibatch", "must be positive"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::param("optimizer", "Adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }

    /// Stage-2/3 learning-rate multiplier for layer `i` (1-based) while
    /// training layer `l`.
    pub fn layer_rate_scale(&self, i: usize, l: usize) -> f64 {
        match self.beta_mode {
            BetaMode::LrDecay => self.beta.powi((l - i) as i32),
            BetaMode::LiteralWeightScale => 1.0,
        }
    }
}

/// Stream used for minibatch shuffles by client `client_id`.
pub fn client_rng(seed: u64, client_id: usize) -> StreamRng {
    stream_rng(derive_seed(seed, CLIENT_STREAM_TAG), client_id as u64)
}

/// Seed for the initialization of layer `l`; shared by every client.
pub fn layer_init_seed(seed: u64, l: usize) -> u64 {
    derive_seed(seed, LAYER_INIT_TAG + l as u64)
}

pub fn init_next_layer(a: &SensingMatrix, cfg: &TrainConfig, l: usize) -> Result<LayerParams> {
    init_layer(a.rows(), a.cols(), Some(a), &cfg.init, layer_init_seed(cfg.seed, l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// 1, 2 or 3.
    pub stage: u8,
    pub epoch: usize,
    /// Sum of the losses seen by the epoch's steps, before each update.
    pub loss: f64,
}

/// Instrumentation of one `train_layer_local` call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub client_id: usize,
    pub layer: usize,
    /// Completed epochs in stages 1, 2 and 3.
    pub epoch_sweeps: [usize; 3],
    pub beta_applications: usize,
    pub clamps: usize,
    pub losses: Vec<EpochLoss>,
    /// Fingerprint of the earlier layers before and after stage 1.
    pub frozen_before: u64,
    pub frozen_after_stage1: u64,
    /// Training loss of the returned depth-`l` network on the client data.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub theta_prev: NetworkParams,
    pub phi: LayerParams,
    pub stats: TrainStats,
}

fn epoch_batches(n: usize, minibatch: Option<usize>, rng: &mut StreamRng) -> Option<Vec<Vec<usize>>> {
    let size = minibatch?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Some(order.chunks(size).map(<[usize]>::to_vec).collect())
}

/// Local layer-wise training of layer `l` (1-based) at one client.
pub fn train_layer_local(
    client_id: usize,
    l: usize,
    theta_prev: &NetworkParams,
    phi_init: &LayerParams,
    data: &Batch,
    cfg: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<LocalOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("client data"));
    }
    if l == 0 || theta_prev.depth() != l - 1 {
        return Err(Error::mismatch(
            format!("{} trained layers before layer {l}", l.saturating_sub(1)),
            theta_prev.depth(),
        ));
    }
    let (m, n) = theta_prev.dims();
    if phi_init.dims() != (m, n) {
        return Err(Error::mismatch(format!("layer with (M, N) = ({m}, {n})"), format!("{:?}", phi_init.dims())));
    }
    if data.x.nrows() != n || data.y.nrows() != m {
        return Err(Error::mismatch(format!("client data with (M, N) = ({m}, {n})"), format!("({}, {})", data.y.nrows(), data.x.nrows())));
    }

    let mut stats = TrainStats {
        client_id,
        layer: l,
        frozen_before: theta_prev.fingerprint(),
        ..TrainStats::default()
    };
    let samples = data.len();
    let zeros = Array2::zeros(data.x.dim());

    // Stage 1: new layer only, on the frozen prefix output.
    let prefix_out = forward_batch(theta_prev, data.y.view(), zeros.view())?
        .final_estimate()
        .clone();
    let mut head = NetworkParams::from_layers(m, n, vec![phi_init.clone()])?;
    let mut opt = Stepper::new(cfg.optimizer);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        match epoch_batches(samples, cfg.minibatch, rng) {
            None => {
                let (loss, g) = loss_and_grad_from(&head, data.y.view(), prefix_out.view(), data.x.view(), LossScope::LastLayer)?;
                stats.clamps += opt.step(&mut head, &g, &[cfg.alpha0])?;
                epoch_loss += loss;
            }
            Some(chunks) => {
                for cols in chunks {
                    let sub = data.select(&cols);
                    let x0 = prefix_out.select(ndarray::Axis(1), &cols);
                    let (loss, g) = loss_and_grad_from(&head, sub.y.view(), x0.view(), sub.x.view(), LossScope::LastLayer)?;
                    stats.clamps += opt.step(&mut head, &g, &[cfg.alpha0])?;
                    epoch_loss += loss;
                }
            }
        }
        stats.losses.push(EpochLoss { stage: 1, epoch, loss: epoch_loss });
        stats.epoch_sweeps[0] += 1;
    }
    stats.frozen_after_stage1 = theta_prev.fingerprint();

    // Stages 2 and 3: the whole depth-l network.
    let mut theta = theta_prev.clone();
    theta.push(head.pop().expect("one layer"))?;
    stats.beta_applications += usize::from(cfg.beta_mode == BetaMode::LrDecay);
    let scales: Vec<f64> = (1..=l).map(|i| cfg.layer_rate_scale(i, l)).collect();
    for (stage, alpha) in [(2u8, cfg.alpha1), (3u8, cfg.alpha2)] {
        let lrs: Vec<f64> = scales.iter().map(|s| alpha * s).collect();
        let mut opt = Stepper::new(cfg.optimizer);
        for epoch in 0..cfg.epochs {
            let mut epoch_loss = 0.0;
            match epoch_batches(samples, cfg.minibatch, rng) {
                None => {
                    let (loss, g) = loss_and_grad_from(&theta, data.y.view(), zeros.view(), data.x.view(), cfg.loss_mode)?;
                    stats.clamps += opt.step(&mut theta, &g, &lrs)?;
                    epoch_loss += loss;
                }
                Some(chunks) => {
                    for cols in chunks {
                        let sub = data.select(&cols);
                        let x0 = Array2::zeros(sub.x.dim());
                        let (loss, g) = loss_and_grad_from(&theta, sub.y.view(), x0.view(), sub.x.view(), cfg.loss_mode)?;
                        stats.clamps += opt.step(&mut theta, &g, &lrs)?;
                        epoch_loss += loss;
                    }
                }
            }
            stats.losses.push(EpochLoss { stage, epoch, loss: epoch_loss });
            stats.epoch_sweeps[usize::from(stage - 1)] += 1;
        }
    }

    if cfg.beta_mode == BetaMode::LiteralWeightScale {
        theta.scale(cfg.beta);
        stats.beta_applications += 1;
    }

    let trace = forward_batch(&theta, data.y.view(), zeros.view())?;
    stats.final_loss = trace
        .post
        .iter()
        .enumerate()
        .filter(|(i, _)| cfg.loss_mode == LossScope::AllLayers || i + 1 == l)
        .map(|(_, est)| (est - &data.x).iter().map(|v| v * v).sum::<f64>())
        .sum();

    let phi = theta.pop().expect("depth l >= 1");
    Ok(LocalOutcome {
        theta_prev: theta,
        phi,
        stats,
    })
}

/// Layer-wise training with all data in one place; equivalent to the
/// federated protocol with a single client and a single round.
pub fn train_centralized(
    dataset: &Dataset,
    a: &SensingMatrix,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, Vec<TrainStats>)> {
    cfg.validate()?;
    let data = Batch::from_dataset(dataset);
    let mut rng = client_rng(cfg.seed, 0);
    let mut theta = NetworkParams::empty(a.rows(), a.cols());
    let mut history = Vec::with_capacity(cfg.layers);
    for l in 1..=cfg.layers {
        let phi = init_next_layer(a, cfg, l)?;
        let out = train_layer_local(0, l, &theta, &phi, &data, cfg, &mut rng)?;
        theta = out.theta_prev;
        theta.push(out.phi)?;
        history.push(out.stats);
    }
    Ok((theta, history))
}
