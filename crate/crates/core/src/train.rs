//! Training loop and validation.
//!
//! Work over independent images goes through an [`Executor`]; results come
//! back in input order and are reduced sequentially, so the outcome does not
//! depend on how the executor schedules work.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::DetectionConfig;
use crate::detector::{detect, detection_loss, Detector, PostProcess};
use crate::error::Result;
use crate::eval::{coco_thresholds, evaluate_map, ApTable, Detection, GroundTruth};
use crate::graph::Graph;
use crate::params::{GradBuffer, ParamStore, Sgd};
use crate::scene::{
    assign_and_encode, derive_seed, generate_scene, make_proposals, scene_seed, ProposalConfig, Split, SyntheticScene,
};

/// Order-preserving map over independent work items.
pub trait Executor: Sync {
    fn map<T: Sync, R: Send>(&self, items: &[T], f: &(dyn Fn(&T) -> R + Sync)) -> Vec<R>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Sync, R: Send>(&self, items: &[T], f: &(dyn Fn(&T) -> R + Sync)) -> Vec<R> {
        items.iter().map(f).collect()
    }
}

const MODEL_SALT: u64 = 1;
const SHUFFLE_SALT: u64 = 2;
const EVAL_PROPOSAL_SALT: u64 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Parameter store, detector and SGD state for one configuration.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: DetectionConfig,
    pub store: ParamStore,
    pub detector: Detector,
    pub sgd: Sgd,
    pub steps_taken: usize,
}

impl Trainer {
    pub fn new(cfg: &DetectionConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, MODEL_SALT));
        let mut store = ParamStore::new();
        let detector = Detector::new(&mut store, cfg, &mut rng)?;
        let sgd = Sgd::new(&store, cfg.lr, cfg.momentum, cfg.weight_decay);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            detector,
            sgd,
            steps_taken: 0,
        })
    }

    /// Learning rate of the next step in `epoch` (1-based), including warm-up.
    pub fn lr_for_step(&self, epoch: usize) -> f32 {
        let base = self.cfg.lr_at_epoch(epoch);
        let w = self.cfg.warmup_steps;
        if w == 0 || self.steps_taken >= w {
            base
        } else {
            base * (self.steps_taken + 1) as f32 / w as f32
        }
    }

    /// Loss and parameter gradients of one scene.
    pub fn scene_gradient(&self, scene: &SyntheticScene, proposal_seed: u64) -> Result<(f64, GradBuffer)> {
        let proposals = make_proposals(scene, proposal_seed, &ProposalConfig::default());
        let sample = assign_and_encode(&proposals, &scene.objects);
        let mut graph = Graph::new();
        let trace = self.detector.forward(&mut graph, &self.store, &scene.image, &proposals)?;
        let loss = detection_loss(&mut graph, &trace.output, &sample, self.cfg.smooth_l1_beta)?;
        let grads = graph.backward(loss)?;
        let mut buffer = GradBuffer::zeros_like(&self.store);
        grads.accumulate_into(&mut buffer, 1.0);
        Ok((graph.value(loss)[0] as f64, buffer))
    }

    /// One SGD step on the mean loss of `batch`; returns that mean loss.
    pub fn step<E: Executor>(&mut self, exec: &E, batch: &[(&SyntheticScene, u64)], lr: f32) -> Result<f64> {
        let results = {
            let this = &*self;
            exec.map(batch, &|(scene, seed)| this.scene_gradient(scene, *seed))
        };
        let scale = 1.0 / batch.len() as f32;
        let mut total = GradBuffer::zeros_like(&self.store);
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            total.merge(&g, scale);
        }
        self.sgd.lr = lr;
        self.sgd.step(&mut self.store, &total);
        self.steps_taken += 1;
        Ok(loss / batch.len() as f64)
    }

    /// One pass over `scenes` in a seeded shuffled order.
    pub fn epoch<E: Executor>(&mut self, exec: &E, scenes: &[SyntheticScene], epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, SHUFFLE_SALT + 1000 * epoch as u64));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<(&SyntheticScene, u64)> = chunk
                .iter()
                .map(|&i| (&scenes[i], derive_seed(scenes[i].seed, epoch as u64)))
                .collect();
            let lr = self.lr_for_step(epoch);
            sum += self.step(exec, &batch, lr)?;
            steps += 1;
        }
        Ok(if steps == 0 { 0.0 } else { sum / steps as f64 })
    }
}

pub fn scene_seeds(cfg: &DetectionConfig, split: Split, count: usize) -> Vec<u64> {
    (0..count).map(|i| scene_seed(cfg.seed, split, i)).collect()
}

pub fn generate_scenes<E: Executor>(exec: &E, seeds: &[u64]) -> Vec<SyntheticScene> {
    exec.map(seeds, &|&s| generate_scene(s))
}

/// Proposals used at evaluation time for a scene: the same jittered-GT plus
/// random-negative recipe as training, on a dedicated seed stream.
pub fn eval_proposal_seed(scene: &SyntheticScene) -> u64 {
    derive_seed(scene.seed, EVAL_PROPOSAL_SALT)
}

/// Runs detection over `scenes` (image ids are scene positions) and scores it
/// at IoU 0.50:0.05:0.95.
pub fn evaluate<E: Executor>(
    exec: &E,
    detector: &Detector,
    store: &ParamStore,
    pp: &PostProcess,
    scenes: &[SyntheticScene],
) -> Result<ApTable> {
    let indexed: Vec<(usize, &SyntheticScene)> = scenes.iter().enumerate().collect();
    let per_image = exec.map(&indexed, &|&(i, scene)| {
        let proposals = make_proposals(scene, eval_proposal_seed(scene), &ProposalConfig::default());
        detect(detector, store, &scene.image, &proposals, i, pp)
    });
    let mut dets: Vec<Detection> = Vec::new();
    for r in per_image {
        dets.extend(r?);
    }
    let gts: Vec<GroundTruth> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.objects.iter().map(move |o| GroundTruth {
                image: i,
                class: o.class,
                bbox: o.bbox,
            })
        })
        .collect();
    Ok(evaluate_map(&dets, &gts, &coco_thresholds()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub history: Vec<EpochMetrics>,
}

/// Full schedule: `epochs` passes over the training split, validating after
/// each. `on_epoch` sees every row of the history as it is produced.
pub fn train<E: Executor>(
    cfg: &DetectionConfig,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let train_scenes = generate_scenes(exec, &scene_seeds(cfg, Split::Train, cfg.train_scenes));
    let val_scenes = generate_scenes(exec, &scene_seeds(cfg, Split::Val, cfg.val_scenes));
    let pp = PostProcess::from(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = trainer.epoch(exec, &train_scenes, epoch)?;
        let table = evaluate(exec, &trainer.detector, &trainer.store, &pp, &val_scenes)?;
        let m = EpochMetrics {
            epoch,
            loss,
            map: table.map(),
            ap50: table.ap50(),
            ap75: table.ap75(),
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(TrainOutcome { trainer, history })
}
