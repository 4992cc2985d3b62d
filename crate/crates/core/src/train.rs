//! Mini-batch training of the encoder (and proxies, when the loss has them).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::encoder::{
    adamw_step, backward, forward_batch, init_params, init_proxies, Checkpoint, EncoderSpec,
    OptimState, ParamStore, Tensor, PROXY_SEMANTIC, PROXY_UNCERTAINTY,
};
use crate::error::{Error, Result};
use crate::loss::{self, LossWarning};
use crate::metric::{PairMetric, PairedEmbedding};
use crate::mixer::{mix_batch, ClassId, LabelSet, MixConfig};
use crate::sampler::MiningConfig;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub loss_mean: f64,
    /// Mean `||u||` over training samples with one label, after the epoch.
    pub u_norm_original: f64,
    /// Same for two-label training samples.
    pub u_norm_mixed: f64,
    pub n_original: usize,
    pub n_mixed: usize,
    /// Mixed samples appended by in-batch mixup this epoch.
    pub n_mixup: usize,
    pub clamp_events: usize,
    pub single_class_batches: usize,
    pub empty_triplet_batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    pub n_mixup: usize,
    pub clamp_events: usize,
    pub warnings: Vec<LossWarning>,
}

// splitmix64 finalizer: decorrelates per-step seeds derived from one base.
fn step_seed(base: u64, step: u64) -> u64 {
    let mut z = base ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Trainer {
    pub config: RunConfig,
    pub metric: PairMetric,
    pub spec: EncoderSpec,
    pub params: ParamStore,
    pub opt: OptimState,
    pub proxy_labels: Option<Vec<ClassId>>,
    pub step: u64,
    pub epoch: usize,
    train: Dataset,
    shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: &RunConfig, train: &Dataset) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::InvalidParameter(
                "training set needs at least 2 samples".into(),
            ));
        }
        let mut spec = config.encoder.clone();
        spec.input_dim = train.feature_dim();
        spec.validate()?;
        let mut params = init_params(&spec)?;
        let mut proxy_labels = None;
        if config.loss.variant.uses_proxies() {
            let classes = train.classes();
            let bank = init_proxies(&classes, spec.d_s, spec.d_u, config.train.proxy_seed)?;
            params.attach_proxies(&bank);
            proxy_labels = Some(classes);
        }
        params.freeze_uncertainty_head(config.train.freeze_uncertainty);
        let opt = OptimState::new(config.optimizer, &params);
        Ok(Self {
            config: config.clone(),
            metric: config.pair_metric(),
            spec,
            params,
            opt,
            proxy_labels,
            step: 0,
            epoch: 0,
            train: train.clone(),
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.train.shuffle_seed),
        })
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    /// One optimizer step on the given training-set rows.
    pub fn train_step(&mut self, rows: &[usize]) -> Result<StepOutput> {
        let features: Vec<Vec<f64>> = rows.iter().map(|&i| self.train.features[i].clone()).collect();
        let labels: Vec<LabelSet> = rows.iter().map(|&i| self.train.labels[i]).collect();
        let mix_cfg = MixConfig {
            rng_seed: step_seed(self.config.mix.rng_seed, self.step),
            ..self.config.mix
        };
        let batch = mix_batch(&features, &labels, &mix_cfg)?;
        let (emb, trace) = forward_batch(&self.spec, &self.params, &batch.features)?;
        let proxies = match &self.proxy_labels {
            Some(l) => self.params.proxies(l)?,
            None => None,
        };
        let mining = MiningConfig {
            rng_seed: step_seed(self.config.mining.rng_seed, self.step),
            ..self.config.mining
        };
        let (out, _) = loss::compute(
            &self.config.loss,
            &emb,
            &batch.labels,
            proxies.as_ref(),
            &self.metric,
            &mining,
        )?;
        if !out.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is {} at step {}",
                out.value, self.step
            )));
        }
        let mut grads = backward(&self.spec, &self.params, &trace, &out.grads)?;
        if let Some(pg) = &out.proxy_grads {
            for name in [PROXY_SEMANTIC, PROXY_UNCERTAINTY] {
                let t = self.params.get(name).expect("proxy tensors attached");
                grads.tensors.push(Tensor::zeros(name, t.shape.clone()));
            }
            grads.set_proxy_grads(pg)?;
        }
        adamw_step(&mut self.params, &grads, &mut self.opt)?;
        if !self.params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters diverged at step {}",
                self.step
            )));
        }
        self.step += 1;
        Ok(StepOutput {
            loss: out.value,
            n_mixup: batch.parents.len(),
            clamp_events: out.clamp_events,
            warnings: out.warnings,
        })
    }

    /// One pass over a fresh shuffle of the training set. A trailing batch
    /// with fewer than 2 rows is dropped.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0u64;
        let mut rec = EpochRecord {
            epoch: self.epoch + 1,
            steps: 0,
            loss_mean: 0.0,
            u_norm_original: 0.0,
            u_norm_mixed: 0.0,
            n_original: 0,
            n_mixed: 0,
            n_mixup: 0,
            clamp_events: 0,
            single_class_batches: 0,
            empty_triplet_batches: 0,
        };
        for rows in order.chunks(self.config.train.batch_size) {
            if rows.len() < 2 {
                continue;
            }
            let out = self.train_step(rows)?;
            loss_sum += out.loss;
            steps += 1;
            rec.n_mixup += out.n_mixup;
            rec.clamp_events += out.clamp_events;
            for w in out.warnings {
                match w {
                    LossWarning::SingleClassBatch => rec.single_class_batches += 1,
                    LossWarning::NoValidTriplets => rec.empty_triplet_batches += 1,
                }
            }
        }
        self.epoch += 1;
        rec.steps = steps;
        rec.loss_mean = if steps > 0 { loss_sum / steps as f64 } else { 0.0 };
        let emb = self.embed(&self.train.features)?;
        let (mut so, mut sm) = (0.0, 0.0);
        for (e, l) in emb.iter().zip(&self.train.labels) {
            if l.is_mixed() {
                sm += e.uncertainty_norm();
                rec.n_mixed += 1;
            } else {
                so += e.uncertainty_norm();
                rec.n_original += 1;
            }
        }
        rec.u_norm_original = if rec.n_original > 0 { so / rec.n_original as f64 } else { 0.0 };
        rec.u_norm_mixed = if rec.n_mixed > 0 { sm / rec.n_mixed as f64 } else { 0.0 };
        Ok(rec)
    }

    /// Runs `config.train.epochs` epochs, calling `on_epoch` after each.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::with_capacity(self.config.train.epochs);
        while self.epoch < self.config.train.epochs {
            let rec = self.run_epoch()?;
            on_epoch(self, &rec)?;
            log.push(rec);
        }
        Ok(log)
    }

    pub fn embed(&self, features: &[Vec<f64>]) -> Result<Vec<PairedEmbedding>> {
        Ok(forward_batch(&self.spec, &self.params, features)?.0)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            self.spec.clone(),
            self.params.clone(),
            self.step,
            self.epoch,
            self.config.seeds(),
            self.proxy_labels.clone(),
            serde_json::to_value(&self.config)?,
        ))
    }
}

/// Embeds features with the encoder stored in a checkpoint.
pub fn embed_with_checkpoint(ck: &Checkpoint, features: &[Vec<f64>]) -> Result<Vec<PairedEmbedding>> {
    Ok(forward_batch(&ck.header.spec, &ck.params, features)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_zero_shot, SyntheticSpec};

    fn tiny() -> (RunConfig, Dataset) {
        let mut cfg = RunConfig::default();
        cfg.data.synthetic = SyntheticSpec {
            n_classes: 4,
            samples_per_class: 16,
            feature_dim: 8,
            ..SyntheticSpec::default()
        };
        cfg.encoder.input_dim = 8;
        cfg.encoder.hidden_dims = vec![16];
        cfg.encoder.d_s = 8;
        cfg.encoder.d_u = 4;
        cfg.mining.n_dim = 8;
        cfg.train.epochs = 2;
        cfg.train.batch_size = 16;
        let ds = generate_synthetic(&cfg.data.synthetic).unwrap();
        let (train, _) = split_zero_shot(&ds, 0.5).unwrap();
        (cfg, train)
    }

    #[test]
    fn step_seeds_differ() {
        assert_ne!(step_seed(0, 0), step_seed(0, 1));
        assert_ne!(step_seed(1, 0), step_seed(0, 0));
    }

    #[test]
    fn every_loss_trains_a_few_steps() {
        let (mut cfg, train) = tiny();
        cfg.mix.mix_prob = 0.5;
        for v in crate::loss::LossVariant::ALL {
            cfg.loss = crate::loss::LossConfig::for_variant(v);
            let mut t = Trainer::new(&cfg, &train).unwrap();
            let log = t.fit(|_, _| Ok(())).unwrap();
            assert_eq!(log.len(), 2, "{}", v.name());
            assert!(log.iter().all(|r| r.loss_mean.is_finite()), "{}", v.name());
        }
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (mut cfg, train) = tiny();
        cfg.optimizer.lr = 1e6;
        cfg.train.epochs = 50;
        let mut t = Trainer::new(&cfg, &train).unwrap();
        assert!(matches!(t.fit(|_, _| Ok(())), Err(Error::NonFinite(_))));
    }
}
