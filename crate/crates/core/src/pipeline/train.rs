use diffcore::{AmsGrad, Graph, Mode, ParameterStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::model_window;
use super::segment::Segment;
use crate::error::{data, Error, Result};
use crate::models::{Architecture, Model, ModelConfig, ModelInput, Normalizer, Target, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Samples per batch; dyadic batches hold `batch_size / 2` pairs.
    pub batch_size: usize,
    pub patience: usize,
    pub optimizer: AmsGrad,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_arch(arch: Architecture) -> Self {
        Self {
            max_epochs: 200,
            batch_size: arch.default_batch_and_dropout().0,
            patience: 20,
            optimizer: AmsGrad::default(),
            seed: 0,
        }
    }
}

/// Windows, targets and partner links of a segment list, in model form.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub windows: Vec<Window>,
    pub targets: Vec<Target>,
    pub partner: Vec<Option<usize>>,
}

impl Prepared {
    pub fn new(cfg: &ModelConfig, segments: &[Segment]) -> Result<Self> {
        let h = cfg.train_horizon;
        let mut windows = Vec::with_capacity(segments.len());
        let mut targets = Vec::with_capacity(segments.len());
        for s in segments {
            if s.future.len() < h {
                return data(format!("segment has {} future frames, training needs {h}", s.future.len()));
            }
            windows.push(model_window(cfg, &s.obs, &s.extras)?);
            targets.push(Target::from_frames(s.last_obs(), &s.future[..h], &cfg.target_regions));
        }
        Ok(Self {
            windows,
            targets,
            partner: segments.iter().map(|s| s.partner).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn normalizer(&self) -> Result<Normalizer> {
        Normalizer::fit(&self.windows.iter().collect::<Vec<_>>(), &self.targets.iter().collect::<Vec<_>>())
    }

    fn inputs(&self, norm: &Normalizer) -> Result<Vec<ModelInput>> {
        self.windows.iter().map(|w| ModelInput::new(w, norm)).collect()
    }

    /// Batching units: single samples, or `[a, partner(a)]` pairs when dyadic.
    fn units(&self, dyadic: bool) -> Result<Vec<Vec<usize>>> {
        if !dyadic {
            return Ok((0..self.len()).map(|i| vec![i]).collect());
        }
        let units: Vec<Vec<usize>> = (0..self.len())
            .filter_map(|i| self.partner[i].filter(|&p| p > i).map(|p| vec![i, p]))
            .collect();
        if units.is_empty() {
            return Err(Error::NoData("dyadic training needs paired segments".into()));
        }
        Ok(units)
    }
}

/// A fresh model whose normaliser is fitted on the training segments.
pub fn init_model(cfg: &ModelConfig, train: &[Segment]) -> Result<Model> {
    if train.is_empty() {
        return Err(Error::NoData("training split".into()));
    }
    Model::new(cfg.clone(), Prepared::new(cfg, train)?.normalizer()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model with the weights of its best validation epoch.
    pub model: Model,
    pub history: History,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Partner positions inside a batch built from whole units.
fn batch_partner(units: &[&Vec<usize>]) -> Vec<usize> {
    let mut partner = Vec::new();
    let mut base = 0;
    for u in units {
        if u.len() == 2 {
            partner.extend([base + 1, base]);
        } else {
            partner.push(base);
        }
        base += u.len();
    }
    partner
}

/// Loss of one batch and its number of masked coordinates; `None` when nothing
/// in the batch is supervised.
fn batch_loss(model: &Model, g: &mut Graph, inputs: &[&ModelInput], targets: &[&Target], partner: &[usize]) -> Result<Option<(diffcore::Var, f64)>> {
    let h = model.config.train_horizon;
    let count: f64 = targets
        .iter()
        .map(|t| t.mask[..h * crate::models::POSE_WIDTH].iter().sum::<f64>())
        .sum();
    if count == 0.0 {
        return Ok(None);
    }
    let partner = model.config.fusion.is_dyadic().then_some(partner);
    let fwd = model.forward(g, inputs, partner, h)?;
    Ok(Some((model.loss(g, &fwd, targets)?, count)))
}

/// Count-weighted masked MSE over a prepared split, evaluation mode.
pub fn validation_loss(model: &Model, inputs: &[ModelInput], prep: &Prepared, batch_size: usize) -> Result<f64> {
    let units = prep.units(model.config.fusion.is_dyadic())?;
    let per_batch = (batch_size / units[0].len()).max(1);
    let (mut total, mut count) = (0.0, 0.0);
    for chunk in units.chunks(per_batch) {
        let refs: Vec<&Vec<usize>> = chunk.iter().collect();
        let idx: Vec<usize> = chunk.iter().flatten().copied().collect();
        let ins: Vec<&ModelInput> = idx.iter().map(|&i| &inputs[i]).collect();
        let tgs: Vec<&Target> = idx.iter().map(|&i| &prep.targets[i]).collect();
        let mut g = Graph::new(Mode::Eval, 0);
        if let Some((loss, n)) = batch_loss(model, &mut g, &ins, &tgs, &batch_partner(&refs))? {
            total += g.value(loss).data()[0] * n;
            count += n;
        }
    }
    if count == 0.0 {
        return Err(Error::NoData("validation split has no supervised coordinates".into()));
    }
    Ok(total / count)
}

pub fn train(model: Model, train: &[Segment], val: &[Segment], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, val, cfg, |_| {})
}

/// AMSGrad over shuffled batches with early stopping on the validation loss.
/// `on_epoch` sees every epoch's record as soon as it is complete.
pub fn train_with(
    mut model: Model,
    train: &[Segment],
    val: &[Segment],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::NoData("training needs non-empty train and validation splits".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch size and epoch limit must be positive".into()));
    }
    let mc = model.config.clone();
    let dyadic = mc.fusion.is_dyadic();
    let train_prep = Prepared::new(&mc, train)?;
    let val_prep = Prepared::new(&mc, val)?;
    let train_inputs = train_prep.inputs(&model.normalizer)?;
    let val_inputs = val_prep.inputs(&model.normalizer)?;
    let mut units = train_prep.units(dyadic)?;
    // a split smaller than one batch becomes a single batch
    let per_batch = (cfg.batch_size / units[0].len()).clamp(1, units.len());

    let mut state = TrainState {
        epoch: 0,
        best_val: f64::INFINITY,
        best_epoch: 0,
        since_improvement: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut best: Option<ParameterStore> = None;
    let mut history = History::default();
    while state.epoch < cfg.max_epochs && state.since_improvement < cfg.patience.max(1) {
        state.epoch += 1;
        units.shuffle(&mut state.rng);
        let (mut total, mut count) = (0.0, 0.0);
        for chunk in units.chunks_exact(per_batch) {
            let refs: Vec<&Vec<usize>> = chunk.iter().collect();
            let idx: Vec<usize> = chunk.iter().flatten().copied().collect();
            let ins: Vec<&ModelInput> = idx.iter().map(|&i| &train_inputs[i]).collect();
            let tgs: Vec<&Target> = idx.iter().map(|&i| &train_prep.targets[i]).collect();
            let mut g = Graph::new(Mode::Train, state.rng.gen());
            let Some((loss, n)) = batch_loss(&model, &mut g, &ins, &tgs, &batch_partner(&refs))? else {
                continue;
            };
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!("training loss became {value} in epoch {}", state.epoch)));
            }
            g.backward(loss)?;
            let grads = g.param_gradients();
            if !grads.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {}", state.epoch)));
            }
            cfg.optimizer.step(&mut model.store, &grads)?;
            total += value * n;
            count += n;
        }
        let val_loss = validation_loss(&model, &val_inputs, &val_prep, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {val_loss} in epoch {}", state.epoch)));
        }
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: if count > 0.0 { total / count } else { f64::NAN },
            val_loss,
        };
        history.epochs.push(record);
        on_epoch(&record);
        if val_loss < state.best_val {
            state.best_val = val_loss;
            state.best_epoch = state.epoch;
            state.since_improvement = 0;
            best = Some(model.store.clone());
        } else {
            state.since_improvement += 1;
        }
    }
    if let Some(store) = best {
        model.store = store;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: state.best_epoch,
        best_val: state.best_val,
    })
}
