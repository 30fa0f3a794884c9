use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, backward, concat_batch, grid_sample, AdamConfig, Tensor};
use crate::checkpoint::NamedTensors;
use crate::error::TrainError;
use crate::imaging::fov_mask;
use crate::loss::{loss, LossKind};
use crate::photo::{self, PhotoNet, SkipEnable};
use crate::sim::SetupDataset;

use super::CompensationModel;

/// End-to-end training schedule. Defaults follow the full-scale recipe
/// (1,500 iterations, batch 48, lr 1e-3 decayed by 5x at iteration 1,000,
/// weight decay 1e-4); the desk profile shrinks the canonical frame and
/// batch for CPU runs.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay_at: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub loss_kind: LossKind,
    /// iterations trained with plain l1 before switching to `loss_kind`
    pub l1_warmup_iterations: usize,
    pub seed: u64,
    /// canonical frame (h, w)
    pub canonical: (usize, usize),
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1500,
            batch: 48,
            lr: 1e-3,
            lr_decay_at: 1000,
            lr_decay_factor: 0.2,
            weight_decay: 1e-4,
            loss_kind: LossKind::L1Ssim,
            l1_warmup_iterations: 0,
            seed: 0,
            canonical: (256, 256),
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    /// CPU-scale profile: 128x128 canonical frame, batch 8, 500 iterations.
    pub fn desk() -> Self {
        TrainConfig {
            iterations: 500,
            batch: 8,
            canonical: (128, 128),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        assert!(self.iterations == 0 || self.batch > 0, "batch must be positive");
        assert!(
            self.l1_warmup_iterations <= self.iterations,
            "warmup ({}) exceeds iterations ({})",
            self.l1_warmup_iterations,
            self.iterations
        );
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        if iter >= self.lr_decay_at {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }

    fn kind_at(&self, iter: usize) -> LossKind {
        if iter < self.l1_warmup_iterations {
            LossKind::L1
        } else {
            self.loss_kind
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub kind: LossKind,
}

pub struct TrainOutcome {
    pub model: CompensationModel,
    pub curve: Vec<TrainRecord>,
    /// FOV detected from the surface image, camera frame
    pub fov: crate::imaging::Mask,
}

/// Deterministic shuffled batch scheduler; the last partial batch of an
/// epoch is kept.
struct BatchScheduler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchScheduler {
    fn new(n: usize, seed: u64) -> Self {
        BatchScheduler {
            order: (0..n).collect(),
            cursor: n, // trigger shuffle on first use
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                if !out.is_empty() {
                    break; // keep the partial batch at the epoch boundary
                }
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Trains a compensation model end-to-end on one setup. `pretrained`
/// photometric weights, when given, replace the fresh initialization.
/// `on_checkpoint` fires every `checkpoint_every` iterations and at the
/// end.
pub fn train(
    dataset: &SetupDataset,
    n_train: usize,
    cfg: &TrainConfig,
    pretrained: Option<&NamedTensors>,
    mut on_checkpoint: impl FnMut(usize, &CompensationModel),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let n_train = n_train.min(dataset.train.len());
    if n_train == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let fov = fov_mask(&dataset.surface)?;
    let mut model = CompensationModel::init(&fov, cfg.canonical, cfg.seed)?;
    if let Some(named) = pretrained {
        load_photo(&mut model.photo, named);
    }

    let surface_t = dataset.surface.masked(&fov).to_tensor::<f32>();
    let cams: Vec<Tensor<f32>> = dataset.train[..n_train]
        .iter()
        .map(|(cam, _)| cam.masked(&fov).to_tensor::<f32>())
        .collect();
    let targets: Vec<Tensor<f32>> = dataset.train[..n_train]
        .iter()
        .map(|(_, prj)| prj.resize(cfg.canonical.0, cfg.canonical.1).to_tensor::<f32>())
        .collect();

    let mut sched = BatchScheduler::new(n_train, cfg.seed);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut last_checkpoint = 0usize;
    for iter in 0..cfg.iterations {
        let idx = sched.next_batch(cfg.batch);
        let x = concat_batch(&idx.iter().map(|&i| cams[i].clone()).collect::<Vec<_>>());
        let t = concat_batch(&idx.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>());
        let grid = model.warp.forward_grid();
        let xc = grid_sample(&x, &grid);
        let sc = grid_sample(&surface_t, &grid);
        let pred = model.photo.forward(&xc, &sc, SkipEnable::ALL);
        let kind = cfg.kind_at(iter);
        let l = loss(&pred, &t, kind);
        let lv = l.item() as f64;
        if !lv.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration: iter,
                last_checkpoint,
            });
        }
        for p in model.parameters_mut() {
            p.zero_grad();
        }
        backward(&l);
        let adam = AdamConfig {
            lr: cfg.lr_at(iter),
            weight_decay: cfg.weight_decay,
            ..Default::default()
        };
        adam_step(&mut model.parameters_mut(), &adam);
        if model.named_tensors().iter().any(|(_, t)| !t.all_finite()) {
            return Err(TrainError::NonFiniteLoss {
                iteration: iter,
                last_checkpoint,
            });
        }
        curve.push(TrainRecord {
            iteration: iter,
            loss: lv,
            lr: adam.lr,
            kind,
        });
        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            last_checkpoint = iter + 1;
            on_checkpoint(iter + 1, &model);
        }
    }
    on_checkpoint(cfg.iterations, &model);
    Ok(TrainOutcome { model, curve, fov })
}

fn load_photo(photo: &mut PhotoNet<f32>, named: &NamedTensors) {
    for p in photo.parameters_mut() {
        if let Some(e) = named.iter().find(|(n, _, _)| *n == p.name) {
            assert_eq!(
                e.1,
                p.tensor.shape(),
                "pretrained weight {} has shape {:?}, expected {:?}",
                p.name,
                e.1,
                p.tensor.shape()
            );
            p.load(&e.2);
        }
    }
}

/// Cross-setup pre-training of the photometric network alone, on planar
/// canonical-frame setups.
#[derive(Clone, Copy, Debug)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub canonical: (usize, usize),
    /// identity-autoencoder warm start (Eq-style zero-surface training)
    pub pre_init_iterations: usize,
    pub pre_init_images: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 2000,
            batch: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            canonical: (128, 128),
            pre_init_iterations: 500,
            pre_init_images: 64,
        }
    }
}

/// Trains the photometric net across setups; sampling pairs are already in
/// the canonical frame (setups are rendered planar with identity geometry
/// for pre-training). Returns the weights and the training curve.
pub fn pretrain(
    datasets: &[SetupDataset],
    cfg: &PretrainConfig,
) -> Result<(NamedTensors, Vec<TrainRecord>), TrainError> {
    if datasets.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut net = PhotoNet::<f32>::new(cfg.seed.wrapping_add(11));
    if cfg.pre_init_iterations > 0 {
        let imgs = crate::sim::sampling_images(
            cfg.seed.wrapping_add(13),
            cfg.pre_init_images,
            cfg.canonical,
        );
        photo::pre_init(&mut net, &imgs, cfg.pre_init_iterations, cfg.batch, cfg.seed)?;
    }

    let surfaces: Vec<Tensor<f32>> = datasets
        .iter()
        .map(|d| d.surface.resize(cfg.canonical.0, cfg.canonical.1).to_tensor::<f32>())
        .collect();
    let cams: Vec<Vec<Tensor<f32>>> = datasets
        .iter()
        .map(|d| {
            d.train
                .iter()
                .map(|(cam, _)| cam.resize(cfg.canonical.0, cfg.canonical.1).to_tensor::<f32>())
                .collect()
        })
        .collect();
    let targets: Vec<Vec<Tensor<f32>>> = datasets
        .iter()
        .map(|d| {
            d.train
                .iter()
                .map(|(_, prj)| prj.resize(cfg.canonical.0, cfg.canonical.1).to_tensor::<f32>())
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    let mut setup_order: Vec<usize> = (0..datasets.len()).collect();
    let mut setup_cursor = setup_order.len();
    let mut pair_scheds: Vec<BatchScheduler> = (0..datasets.len())
        .map(|k| BatchScheduler::new(datasets[k].train.len(), cfg.seed.wrapping_add(100 + k as u64)))
        .collect();

    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        if setup_cursor >= setup_order.len() {
            setup_order.shuffle(&mut rng);
            setup_cursor = 0;
        }
        let k = setup_order[setup_cursor];
        setup_cursor += 1;
        let idx = pair_scheds[k].next_batch(cfg.batch.min(datasets[k].train.len()));
        let x = concat_batch(&idx.iter().map(|&i| cams[k][i].clone()).collect::<Vec<_>>());
        let t = concat_batch(&idx.iter().map(|&i| targets[k][i].clone()).collect::<Vec<_>>());
        let pred = net.forward(&x, &surfaces[k], SkipEnable::ALL);
        let l = loss(&pred, &t, LossKind::L1Ssim);
        let lv = l.item() as f64;
        if !lv.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration: iter,
                last_checkpoint: 0,
            });
        }
        for p in net.parameters_mut() {
            p.zero_grad();
        }
        backward(&l);
        adam_step(&mut net.parameters_mut(), &adam);
        curve.push(TrainRecord {
            iteration: iter,
            loss: lv,
            lr: adam.lr,
            kind: LossKind::L1Ssim,
        });
    }
    let named: NamedTensors = net
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.values()))
        .collect();
    Ok((named, curve))
}
