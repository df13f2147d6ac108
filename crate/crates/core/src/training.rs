//! Adversarial training of one stage (or one baseline) at a time.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array3, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{OneStepDiscriminator, OneStepGenerator, OneStepVariant};
use crate::checkpoint::{Checkpoint, EpochLoss};
use crate::error::{Error, Result};
use crate::image_gan::{ImageDiscriminator, ImageGenerator};
use crate::nets::{Arch, Weights};
use crate::nn::{concat_channels, Adam, Bound, Graph, Mode, ParamSet, Var};
use crate::preprocess::{constraint_from_segmap, extract_attributes};
use crate::shape_gan::{ShapeDiscriminator, ShapeGenerator};
use crate::tensor::stack_rows;
use crate::text::{tokenize, TextEncoder, Vocabulary};
use crate::types::{LatentNoise, PersonRecord};

/// Probabilities are kept this far away from 0 and 1 inside logs.
pub const PROB_CLIP: f64 = 1e-7;

/// Which network pair a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Shape,
    Image,
    #[serde(rename = "one-step-8-7")]
    OneStep87,
    #[serde(rename = "one-step-8-4")]
    OneStep84,
    NonComp,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Shape,
        Stage::Image,
        Stage::OneStep87,
        Stage::OneStep84,
        Stage::NonComp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Shape => "shape",
            Stage::Image => "image",
            Stage::OneStep87 => "one-step-8-7",
            Stage::OneStep84 => "one-step-8-4",
            Stage::NonComp => "non-comp",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub resolution: usize,
    /// Base channel count of every network.
    pub width: usize,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Shape,
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            resolution: 32,
            width: 8,
            seed: 0,
            dataset: None,
            checkpoint_dir: None,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], with a one-line description each.
pub const CONFIG_KEYS: [(&str, &str); 11] = [
    ("stage", "shape | image | one-step-8-7 | one-step-8-4 | non-comp"),
    ("epochs", "passes over the dataset (default 30)"),
    ("batch_size", "records per update, at least 2 (default 16)"),
    ("learning_rate", "Adam step size (default 0.0002)"),
    ("beta1", "Adam first-moment decay (default 0.5)"),
    ("beta2", "Adam second-moment decay (default 0.999)"),
    ("resolution", "32 | 64 | 128 (default 32)"),
    ("width", "base channel count (default 8)"),
    ("seed", "master seed (default 0)"),
    ("dataset", "dataset directory"),
    ("checkpoint_dir", "where per-epoch checkpoints go"),
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "stage" => self.stage = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "resolution" => self.resolution = parse_num(key, value)?,
            "width" => self.width = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "dataset" => self.dataset = Some(value.into()),
            "checkpoint_dir" => self.checkpoint_dir = Some(value.into()),
            _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{k} must lie in [0, 1)")));
            }
        }
        self.arch().map(|_| ())
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::new(self.resolution, self.width)
    }

    /// FNV-1a over the canonical JSON form, as 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// `(loss_D, loss_G)` with probabilities clipped to `[1e-7, 1 - 1e-7]`.
/// The generator loss is the non-saturating `-mean(log d_fake)`.
pub fn gan_losses(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    let clip = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(clip(p))).sum::<f64>() / v.len() as f64;
    let loss_d = -mean(d_real, &|p| p.ln()) - mean(d_fake, &|p| (1.0 - p).ln());
    let loss_g = -mean(d_fake, &|p| p.ln());
    (loss_d, loss_g)
}

fn clip_bounds<F: crate::nn::Real>() -> (F, F) {
    (F::from_f64(PROB_CLIP), F::from_f64(1.0 - PROB_CLIP))
}

pub(crate) fn discriminator_loss<'g, F: crate::nn::Real>(real: Var<'g, F>, fake: Var<'g, F>) -> Var<'g, F> {
    let (lo, hi) = clip_bounds::<F>();
    let a = real.log_clamped(lo, hi).mean_all();
    let b = fake.one_minus().log_clamped(lo, hi).mean_all();
    a.add(b).scale(-F::one())
}

pub(crate) fn generator_loss<'g, F: crate::nn::Real>(fake: Var<'g, F>) -> Var<'g, F> {
    let (lo, hi) = clip_bounds::<F>();
    fake.log_clamped(lo, hi).mean_all().scale(-F::one())
}

/// Generator/discriminator pair of one stage.
#[derive(Debug, Clone)]
pub enum StageNets {
    Shape(ShapeGenerator, ShapeDiscriminator),
    Image(ImageGenerator, ImageDiscriminator),
    OneStep(OneStepGenerator, OneStepDiscriminator),
}

impl StageNets {
    pub fn new(stage: Stage, arch: Arch) -> Self {
        match stage {
            Stage::Shape => StageNets::Shape(ShapeGenerator::new(arch), ShapeDiscriminator::new(arch)),
            Stage::Image => StageNets::Image(ImageGenerator::new(arch), ImageDiscriminator::new(arch)),
            Stage::NonComp => StageNets::Image(
                ImageGenerator::non_compositional(arch),
                ImageDiscriminator::new(arch),
            ),
            Stage::OneStep87 | Stage::OneStep84 => {
                let v = one_step_variant(stage).unwrap();
                StageNets::OneStep(OneStepGenerator::new(arch, v), OneStepDiscriminator::new(arch, v))
            }
        }
    }

    pub fn init_generator(&self, rng: &mut ChaCha8Rng) -> Weights<f32> {
        match self {
            StageNets::Shape(g, _) => g.init(rng),
            StageNets::Image(g, _) => g.init(rng),
            StageNets::OneStep(g, _) => g.init(rng),
        }
    }

    pub fn init_discriminator(&self, rng: &mut ChaCha8Rng) -> Weights<f32> {
        match self {
            StageNets::Shape(_, d) => d.init(rng),
            StageNets::Image(_, d) => d.init(rng),
            StageNets::OneStep(_, d) => d.init(rng),
        }
    }

    /// Generator output for a batch: maps, composed images or plain images.
    pub fn generate<'g>(
        &self,
        b: &Bound<'g, f32>,
        z: Var<'g, f32>,
        cond: Var<'g, f32>,
        design: Var<'g, f32>,
    ) -> Var<'g, f32> {
        match self {
            StageNets::Shape(g, _) => g.forward(b, z, cond, design),
            StageNets::Image(g, _) => g.forward(b, z, cond, design, cond),
            StageNets::OneStep(g, _) => g.forward(b, z, cond, design),
        }
    }

    pub fn discriminate<'g>(
        &self,
        b: &Bound<'g, f32>,
        x: Var<'g, f32>,
        cond: Var<'g, f32>,
        design: Var<'g, f32>,
    ) -> Var<'g, f32> {
        match self {
            StageNets::Shape(_, d) => d.forward(b, x, cond, design),
            StageNets::Image(_, d) => d.forward(b, x, cond, design),
            StageNets::OneStep(_, d) => d.forward(b, x, cond, design),
        }
    }
}

pub fn one_step_variant(stage: Stage) -> Option<OneStepVariant> {
    match stage {
        Stage::OneStep87 => Some(OneStepVariant::Full),
        Stage::OneStep84 => Some(OneStepVariant::Merged),
        _ => None,
    }
}

/// Conditioning input of a stage for one record, `[C, h, w]`.
pub fn stage_condition(stage: Stage, record: &PersonRecord) -> Result<Array3<f32>> {
    let hwc = match stage {
        Stage::Shape => constraint_from_segmap(&record.segmap)?.into_probs(),
        Stage::Image | Stage::NonComp => record.segmap.probs().clone(),
        Stage::OneStep87 | Stage::OneStep84 => one_step_variant(stage).unwrap().prior(&record.segmap)?,
    };
    Ok(hwc.permuted_axes([2, 0, 1]).as_standard_layout().into_owned())
}

/// What the discriminator sees as real for one record, `[C, m, n]`.
pub fn stage_target(stage: Stage, record: &PersonRecord) -> Array3<f32> {
    let hwc = match stage {
        Stage::Shape => record.segmap.probs(),
        _ => record.image.pixels(),
    };
    hwc.view().permuted_axes([2, 0, 1]).as_standard_layout().into_owned()
}

/// A record reduced to the tensors training needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub tokens: Vec<usize>,
    pub attributes: Array1<f32>,
    pub cond: Array3<f32>,
    pub target: Array3<f32>,
}

pub fn prepare(stage: Stage, records: &[PersonRecord], vocab: &Vocabulary) -> Result<Vec<Prepared>> {
    records
        .iter()
        .map(|r| {
            Ok(Prepared {
                tokens: tokenize(&r.caption, vocab)?,
                attributes: extract_attributes(r),
                cond: stage_condition(stage, r)?,
                target: stage_target(stage, r),
            })
        })
        .collect()
}

fn stack_chw(items: &[&Array3<f32>]) -> ArrayD<f32> {
    let views: Vec<_> = items.iter().map(|a| a.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).unwrap().into_dyn()
}

/// A mini-batch in tensor form.
pub struct Batch {
    pub tokens: Vec<Vec<usize>>,
    pub attributes: ArrayD<f32>,
    pub cond: ArrayD<f32>,
    pub target: ArrayD<f32>,
}

impl Batch {
    pub fn gather(data: &[Prepared], idx: &[usize]) -> Batch {
        let items: Vec<&Prepared> = idx.iter().map(|&i| &data[i]).collect();
        Batch {
            tokens: items.iter().map(|p| p.tokens.clone()).collect(),
            attributes: stack_rows(&items.iter().map(|p| &p.attributes).collect::<Vec<_>>()),
            cond: stack_chw(&items.iter().map(|p| &p.cond).collect::<Vec<_>>()),
            target: stack_chw(&items.iter().map(|p| &p.target).collect::<Vec<_>>()),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Parameters and optimiser state of a run in progress.
pub struct TrainState {
    pub nets: StageNets,
    pub encoder: TextEncoder,
    pub generator: Weights<f32>,
    /// Discriminator and text-encoder parameters (both updated by the
    /// discriminator step), with the discriminator's buffers.
    pub critic: Weights<f32>,
    pub adam_g: Adam<f32>,
    pub adam_d: Adam<f32>,
}

/// Losses of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub loss_d: f64,
    pub loss_g: f64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Result<Self> {
        let arch = config.arch()?;
        let nets = StageNets::new(config.stage, arch);
        let encoder = TextEncoder::new(vocab.len());
        let generator = nets.init_generator(rng);
        let mut critic = nets.init_discriminator(rng);
        for (k, v) in encoder.init::<f32, _>(rng).iter() {
            critic.params.insert(k.clone(), v.clone());
        }
        let (lr, b1, b2) = (config.learning_rate, config.beta1, config.beta2);
        Ok(TrainState {
            adam_g: Adam::new(&generator.params, lr, b1, b2),
            adam_d: Adam::new(&critic.params, lr, b1, b2),
            nets,
            encoder,
            generator,
            critic,
        })
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, batch: &Batch, noise: ArrayD<f32>) -> StepLoss {
        let gen_graph = Graph::<f32>::new();
        let crit_graph = Graph::<f32>::new();

        let cb = Bound::new(&crit_graph, &self.critic.params, &self.critic.buffers, Mode::Train, true);
        let text = self.encoder.forward(&cb, &batch.tokens);
        let design = concat_channels(&[crit_graph.constant(batch.attributes.clone()), text]);

        let gb = Bound::new(&gen_graph, &self.generator.params, &self.generator.buffers, Mode::Train, true);
        let g_design = gen_graph.constant((*design.value()).clone());
        let g_cond = gen_graph.constant(batch.cond.clone());
        let fake = self
            .nets
            .generate(&gb, gen_graph.constant(noise), g_cond, g_design);

        // discriminator step on a detached fake
        let cond = crit_graph.constant(batch.cond.clone());
        let p_real = self
            .nets
            .discriminate(&cb, crit_graph.constant(batch.target.clone()), cond, design);
        let p_fake = self
            .nets
            .discriminate(&cb, crit_graph.constant((*fake.value()).clone()), cond, design);
        let loss_d = discriminator_loss(p_real, p_fake);
        let grads = crit_graph.backward(loss_d);
        let grads = cb.gradients(&grads);
        let loss_d = loss_d.scalar() as f64;
        self.critic.buffers = cb.into_buffers();
        self.adam_d.update(&mut self.critic.params, &grads);

        // generator step against the updated discriminator
        let db = Bound::new(&gen_graph, &self.critic.params, &self.critic.buffers, Mode::Train, false);
        let p = self.nets.discriminate(&db, fake, g_cond, g_design);
        let loss_g = generator_loss(p);
        let grads = gb.gradients(&gen_graph.backward(loss_g));
        self.critic.buffers = db.into_buffers();
        self.generator.buffers = gb.into_buffers();
        self.adam_g.update(&mut self.generator.params, &grads);

        StepLoss {
            loss_d,
            loss_g: loss_g.scalar() as f64,
        }
    }
}

/// Result of a full run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepLoss>,
}

fn noise_batch(n: usize, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    let zs: Vec<LatentNoise> = (0..n).map(|_| LatentNoise::sample_with(rng)).collect();
    let rows: Vec<&Array1<f32>> = zs.iter().map(|z| z.values()).collect();
    stack_rows(&rows)
}

/// Trains one stage. Writes `<stage>-epoch<NNN>.ckpt` and `<stage>.ckpt`
/// to the checkpoint directory after every epoch when one is configured.
pub fn train_stage(config: &TrainConfig, records: &[PersonRecord]) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::DatasetEmpty);
    }
    let (m, n) = records[0].dims();
    if let Some(r) = records.iter().find(|r| r.dims() != (config.resolution, config.resolution)) {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} records", config.resolution),
            actual: format!("{}x{}", r.dims().0, r.dims().1),
        });
    }
    debug_assert_eq!((m, n), (config.resolution, config.resolution));

    let vocab = Vocabulary::build(records.iter().map(|r| r.caption.as_str()));
    let data = prepare(config.stage, records, &vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainState::new(config, &vocab, &mut rng)?;
    let mut steps = Vec::new();
    let mut history = Vec::new();
    let mut checkpoint = None;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_steps = Vec::new();
        // a trailing batch of one cannot be batch-normalised
        for idx in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let batch = Batch::gather(&data, idx);
            let noise = noise_batch(batch.len(), &mut rng);
            let loss = state.step(&batch, noise);
            // clipped losses can stay finite while the weights overflow
            let finite = loss.loss_d.is_finite()
                && loss.loss_g.is_finite()
                && state.generator.params.all_finite()
                && state.critic.params.all_finite();
            if !finite {
                return Err(Error::NonFiniteLoss {
                    stage: config.stage.to_string(),
                    epoch,
                    step: steps.len() + 1,
                    loss_d: loss.loss_d,
                    loss_g: loss.loss_g,
                });
            }
            epoch_steps.push(loss);
            steps.push(loss);
        }
        let count = epoch_steps.len().max(1) as f64;
        history.push(EpochLoss {
            epoch,
            loss_d: epoch_steps.iter().map(|s| s.loss_d).sum::<f64>() / count,
            loss_g: epoch_steps.iter().map(|s| s.loss_g).sum::<f64>() / count,
        });
        log::info!(
            "{} epoch {epoch}/{}: loss_d {:.4} loss_g {:.4}",
            config.stage,
            config.epochs,
            history[epoch - 1].loss_d,
            history[epoch - 1].loss_g
        );
        let ckpt = Checkpoint::from_state(config, epoch, &history, &vocab, &state);
        if let Some(dir) = &config.checkpoint_dir {
            ckpt.save(&dir.join(format!("{}-epoch{epoch:03}.ckpt", config.stage)))?;
            ckpt.save(&dir.join(format!("{}.ckpt", config.stage)))?;
        }
        checkpoint = Some(ckpt);
    }
    let checkpoint = match checkpoint {
        Some(c) => c,
        None => Checkpoint::from_state(config, 0, &history, &vocab, &state),
    };
    Ok(TrainOutcome { checkpoint, steps })
}

/// Splits a critic parameter set into discriminator and encoder parts.
pub(crate) fn split_critic(critic: &ParamSet<f32>) -> (ParamSet<f32>, ParamSet<f32>) {
    let disc = critic.iter().filter(|(k, _)| !k.starts_with("text.")).map(|(k, v)| (k.clone(), v.clone())).collect();
    (disc, critic.filter_prefix("text."))
}
