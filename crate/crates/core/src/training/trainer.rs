use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss, median_freq_weights, Adam, AdamConfig, ClassWeights, LossConfig, TrainError};
use crate::data::{augment, stack, AugmentConfig, Sample};
use crate::layers::BnMode;
use crate::network::Model;
use crate::seed::{derive_seed, rng_for};
use crate::tensor::Real;

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const PROJECTION_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Epochs without validation improvement before stopping; unset disables.
    pub patience: Option<usize>,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self { batch_size: 16, epochs: 50, seed: 0, checkpoint_every: 0, patience: None }
    }
}

impl TrainRun {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Invalid("batch_size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(TrainError::Invalid("patience must be at least 1 when set".into()));
        }
        Ok(())
    }
}

/// One optimizer step as written to the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    /// Seconds since the current process started training.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EarlyStop {
    pub best: Option<f64>,
    pub stale: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub val_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Resolves configured class weights, counting pixels over `samples` for
/// median-frequency balancing.
pub fn class_weights_for(cfg: &LossConfig, samples: &[Sample]) -> Result<[f64; 2], TrainError> {
    match cfg.class_weights {
        ClassWeights::Fixed(w) => Ok(w),
        ClassWeights::Median(_) => {
            let forged: u64 = samples.iter().map(|s| s.forged_pixels() as u64).sum();
            let total: u64 = samples.iter().map(|s| s.mask.len() as u64).sum();
            Ok(median_freq_weights(total - forged, forged)?)
        }
    }
}

pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub optimizer: Adam<T>,
    pub early_stop: EarlyStop,
    loss: LossConfig,
    weights: [f64; 2],
    run: TrainRun,
    augment: AugmentConfig,
}

impl<T: Real> Trainer<T> {
    /// `augment.enabled = false` trains on the samples as given.
    pub fn new(
        model: Model<T>,
        loss: LossConfig,
        adam: AdamConfig,
        run: TrainRun,
        augment: AugmentConfig,
        weights: [f64; 2],
    ) -> Result<Self, TrainError> {
        run.validate()?;
        loss.validate()?;
        if augment.enabled {
            augment.validate()?;
        }
        let optimizer = Adam::new(adam, model.params());
        Ok(Self { model, optimizer, early_stop: EarlyStop::default(), loss, weights, run, augment })
    }

    pub fn run(&self) -> &TrainRun {
        &self.run
    }

    pub fn weights(&self) -> [f64; 2] {
        self.weights
    }

    fn copies(&self) -> usize {
        if self.augment.enabled { self.augment.multiplicity } else { 1 }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        (n * self.copies()).div_ceil(self.run.batch_size)
    }

    /// Sample indices of every batch in `epoch`, in order.
    fn plan(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n * self.copies()).map(|i| i % n).collect();
        order.shuffle(&mut rng_for(self.run.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.chunks(self.run.batch_size).map(<[usize]>::to_vec).collect()
    }

    fn assemble(&self, data: &[Sample], batch: &[usize], epoch: usize, batch_index: usize) -> Result<Vec<Sample>, TrainError> {
        if !self.augment.enabled {
            return Ok(batch.iter().map(|&i| data[i].clone()).collect());
        }
        let base = (batch_index * self.run.batch_size) as u64;
        batch
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let seed = derive_seed(self.run.seed, &[AUGMENT_STREAM, epoch as u64, base + k as u64]);
                Ok(augment(&data[i], seed, &self.augment)?)
            })
            .collect()
    }

    /// One forward/backward/update/projection cycle. Returns the batch loss.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<f64, TrainError> {
        let (images, masks) = stack::<T>(batch)?;
        let out = self.model.forward(&images, BnMode::Train, true)?;
        let l = loss(&out.prob, &masks, &self.loss, self.weights)?;
        let value = l.item()?.as_f64();
        l.backward()?;
        let grads = out.param_grads();
        self.optimizer.step(self.model.params_mut(), &grads)?;
        let mut rng = rng_for(self.run.seed, &[PROJECTION_STREAM, self.optimizer.step]);
        self.model.project_constraints(&mut rng)?;
        self.model.apply_bn_updates(&out.bn_updates);
        Ok(value)
    }

    /// Mean loss over `data` with running batch-norm statistics.
    pub fn validation_loss(&self, data: &[Sample]) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for chunk in data.chunks(self.run.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let (images, masks) = stack::<T>(&refs)?;
            let out = self.model.forward(&images, BnMode::Infer, false)?;
            total += loss(&out.prob, &masks, &self.loss, self.weights)?.item()?.as_f64() * chunk.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    /// Trains until the epoch budget or patience runs out, resuming from the
    /// optimizer's step counter. `on_step` sees every record after the update.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_step: impl FnMut(&Self, &StepRecord) -> Result<(), TrainError>,
    ) -> Result<TrainOutcome, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let [h, w] = self.model.config().input_size;
        if let Some(s) = train.iter().chain(val).find(|s| (s.height, s.width) != (h, w)) {
            return Err(TrainError::Invalid(format!(
                "sample is {}x{} but the network expects {h}x{w}",
                s.height, s.width
            )));
        }
        let per_epoch = self.steps_per_epoch(train.len());
        let start = Instant::now();
        let mut outcome = TrainOutcome::default();
        if self.run.patience.is_some_and(|p| self.early_stop.stale >= p) {
            outcome.stopped_early = true;
            return Ok(outcome);
        }
        let first_epoch = (self.optimizer.step / per_epoch as u64) as usize;
        let mut skip = (self.optimizer.step % per_epoch as u64) as usize;
        for epoch in first_epoch..self.run.epochs {
            for (b, batch) in self.plan(train.len(), epoch).iter().enumerate().skip(skip) {
                let samples = self.assemble(train, batch, epoch, b)?;
                let refs: Vec<&Sample> = samples.iter().collect();
                let loss = self.step(&refs).map_err(|e| numerical_context(e, self.optimizer.step + 1, epoch, b))?;
                let record =
                    StepRecord { step: self.optimizer.step, epoch, loss, wall_time: start.elapsed().as_secs_f64() };
                // Early-stop state is final for the epoch when the hook sees its last step.
                if b + 1 == per_epoch {
                    if let (Some(patience), false) = (self.run.patience, val.is_empty()) {
                        let v = self.validation_loss(val)?;
                        outcome.val_losses.push(v);
                        let es = &mut self.early_stop;
                        if es.best.is_none_or(|best| v < best) {
                            *es = EarlyStop { best: Some(v), stale: 0 };
                        } else {
                            es.stale += 1;
                        }
                        outcome.stopped_early = es.stale >= patience;
                    }
                }
                on_step(self, &record)?;
                outcome.records.push(record);
            }
            skip = 0;
            if outcome.stopped_early {
                break;
            }
        }
        Ok(outcome)
    }
}

fn numerical_context(e: TrainError, step: u64, epoch: usize, batch: usize) -> TrainError {
    if e.is_numerical() {
        TrainError::Numerical { step, epoch, batch, msg: e.to_string() }
    } else {
        e
    }
}

/// Fits `model` on `data` with median or fixed class weights and no
/// augmentation or validation. Returns the trained model and its loss curve.
pub fn train<T: Real>(
    model: Model<T>,
    data: &[Sample],
    loss_cfg: &LossConfig,
    adam: AdamConfig,
    run: &TrainRun,
) -> Result<(Model<T>, Vec<StepRecord>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let weights = class_weights_for(loss_cfg, data)?;
    let no_aug = AugmentConfig { enabled: false, ..AugmentConfig::default() };
    let mut trainer = Trainer::new(model, loss_cfg.clone(), adam, run.clone(), no_aug, weights)?;
    let outcome = trainer.fit(data, &[], |_, _| Ok(()))?;
    Ok((trainer.model, outcome.records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, GenConfig};
    use crate::network::NetworkConfig;

    fn tiny() -> (NetworkConfig, Vec<Sample>) {
        let gen = GenConfig { size: [16, 16], forged_fraction: crate::data::Range::new(0.1, 0.4), ..GenConfig::default() };
        let samples = (0..4).map(|s| generate_sample(s, &gen).unwrap()).collect();
        (NetworkConfig::desk(16), samples)
    }

    fn run(batch_size: usize, epochs: usize, seed: u64) -> TrainRun {
        TrainRun { batch_size, epochs, seed, ..TrainRun::default() }
    }

    #[test]
    fn empty_dataset_rejected() {
        let (cfg, _) = tiny();
        let model = Model::<f64>::build(&cfg, 0).unwrap();
        let err = train(model, &[], &LossConfig::dice(), AdamConfig::default(), &run(2, 1, 0)).unwrap_err();
        assert!(matches!(err, TrainError::EmptyDataset));
    }

    #[test]
    fn one_step_lowers_the_loss_for_most_seeds() {
        let (cfg, samples) = tiny();
        let refs: Vec<&Sample> = samples.iter().collect();
        let mut decreased = 0;
        for seed in 0..10 {
            let model = Model::<f64>::build(&cfg, seed).unwrap();
            let no_aug = AugmentConfig { enabled: false, ..AugmentConfig::default() };
            let mut t = Trainer::new(model, LossConfig::dice(), AdamConfig::default(), run(4, 1, seed), no_aug, [1.0, 1.0])
                .unwrap();
            // Compare in the same batch-norm mode so only the update differs.
            let l0 = t.step(&refs).unwrap();
            let (images, masks) = stack::<f64>(&refs).unwrap();
            let out = t.model.forward(&images, BnMode::Train, false).unwrap();
            let l1 = loss(&out.prob, &masks, &LossConfig::dice(), [1.0, 1.0]).unwrap().item().unwrap();
            decreased += usize::from(l1 < l0);
        }
        assert!(decreased >= 9, "{decreased}/10");
    }

    #[test]
    fn identical_seeds_identical_curves() {
        let (cfg, samples) = tiny();
        let go = || {
            let model = Model::<f64>::build(&cfg, 3).unwrap();
            let aug = AugmentConfig { crop_prob: 0.5, crop_size: [16, 16], ..AugmentConfig::default() };
            let mut t = Trainer::new(model, LossConfig::dice(), AdamConfig::default(), run(3, 2, 5), aug, [1.0, 1.0]).unwrap();
            let o = t.fit(&samples, &[], |_, _| Ok(())).unwrap();
            (o.records.iter().map(|r| (r.step, r.epoch, r.loss.to_bits())).collect::<Vec<_>>(), t.model)
        };
        let (a, ma) = go();
        let (b, mb) = go();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }

    #[test]
    fn resume_continues_the_same_curve() {
        let (cfg, samples) = tiny();
        let make = |epochs| {
            let model = Model::<f64>::build(&cfg, 1).unwrap();
            Trainer::new(model, LossConfig::dice(), AdamConfig::default(), run(3, epochs, 2), AugmentConfig::default(), [1.0, 1.0])
                .unwrap()
        };
        let mut full = make(3);
        let all = full.fit(&samples, &[], |_, _| Ok(())).unwrap().records;
        // Stop after three steps by failing from the hook, then continue.
        let mut part = make(3);
        let err = part.fit(&samples, &[], |_, r| if r.step == 3 { Err(TrainError::Hook("stop".into())) } else { Ok(()) });
        assert!(matches!(err, Err(TrainError::Hook(_))));
        let rest = part.fit(&samples, &[], |_, _| Ok(())).unwrap().records;
        let tail: Vec<_> = all[3..].iter().map(|r| (r.step, r.epoch, r.loss.to_bits())).collect();
        let got: Vec<_> = rest.iter().map(|r| (r.step, r.epoch, r.loss.to_bits())).collect();
        assert_eq!(got, tail);
        assert_eq!(part.model, full.model);
    }

    #[test]
    fn constraints_hold_after_every_step() {
        let (cfg, samples) = tiny();
        let model = Model::<f64>::build(&cfg, 0).unwrap();
        let mut t = Trainer::new(model, LossConfig::dice(), AdamConfig { lr: 1e-2, ..AdamConfig::default() }, run(2, 2, 0), AugmentConfig::default(), [1.0, 1.0])
            .unwrap();
        t.fit(&samples, &[], |t, _| {
            for p in t.model.params().iter().filter(|p| p.role == crate::network::ParamRole::Constrained) {
                let shape: [usize; 4] = p.shape.clone().try_into().unwrap();
                assert!(crate::layers::constraint_residual(&p.data, shape).unwrap() < 1e-9);
            }
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn nan_aborts_with_batch_index() {
        let (cfg, samples) = tiny();
        let mut model = Model::<f64>::build(&cfg, 0).unwrap();
        let head = model.params_mut().iter_mut().find(|p| p.name == "head.bias").unwrap();
        head.data[0] = f64::INFINITY;
        let mut t = Trainer::new(model, LossConfig::dice(), AdamConfig::default(), run(2, 1, 0), AugmentConfig::default(), [1.0, 1.0])
            .unwrap();
        match t.fit(&samples, &[], |_, _| Ok(())) {
            Err(TrainError::Numerical { batch, epoch, step, .. }) => assert_eq!((batch, epoch, step), (0, 0, 1)),
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn median_weights_from_samples() {
        let (_, samples) = tiny();
        let w = class_weights_for(&LossConfig::dice(), &samples).unwrap();
        let forged: usize = samples.iter().map(Sample::forged_pixels).sum();
        let total = (samples.len() * 256) as f64;
        let f = [(total - forged as f64) / total, forged as f64 / total];
        let m = (f[0] + f[1]) / 2.0;
        assert!((w[0] - m / f[0]).abs() < 1e-12 && (w[1] - m / f[1]).abs() < 1e-12);
        let fixed = LossConfig { class_weights: ClassWeights::Fixed([2.0, 3.0]), ..LossConfig::dice() };
        assert_eq!(class_weights_for(&fixed, &samples).unwrap(), [2.0, 3.0]);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (cfg, samples) = tiny();
        let model = Model::<f64>::build(&cfg, 0).unwrap();
        let r = TrainRun { patience: Some(1), ..run(4, 50, 0) };
        // A huge learning rate makes validation loss erratic enough to stall.
        let mut t = Trainer::new(model, LossConfig::dice(), AdamConfig { lr: 0.5, ..AdamConfig::default() }, r, AugmentConfig::default(), [1.0, 1.0])
            .unwrap();
        let o = t.fit(&samples, &samples[..2], |_, _| Ok(())).unwrap();
        assert!(o.stopped_early);
        assert!(o.val_losses.len() < 50);
        assert_eq!(o.records.len(), o.val_losses.len());
    }
}
