//! Attribute-consistency evaluation: swap pairs, average precision, a
//! small attribute detector, and ranking statistics for rating studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_container, read_file, tensor_table, write_atomic, write_container};
use crate::error::{Error, Result};
use crate::image_gan::{image_batch, RGB};
use crate::nets::{Arch, Weights, LEAK};
use crate::nn::layers::{BatchNorm, Conv2d, Linear};
use crate::nn::{Adam, Bound, Graph, Mode, Window};
use crate::synth::{parse_caption, record_seed, structure_labels};
use crate::types::{ImageRGB, PersonRecord};

pub const STRUCTURE_ATTRIBUTES: [&str; 5] = ["long sleeves", "short sleeves", "has pants", "has shorts", "has skirt"];
pub const NUM_STRUCTURE: usize = STRUCTURE_ATTRIBUTES.len();

/// A seeded derangement of `0..n`: `pairs[i]` is the partner of `i`,
/// never `i` itself. Uniform over derangements (rejection sampling).
pub fn derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::TooFewIds(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Pairs every id with the id whose caption it borrows.
pub fn make_swap_pairs<T: Clone>(test_ids: &[T], seed: u64) -> Result<Vec<(T, T)>> {
    let perm = derangement(test_ids.len(), seed)?;
    Ok(test_ids
        .iter()
        .zip(&perm)
        .map(|(a, &b)| (a.clone(), test_ids[b].clone()))
        .collect())
}

/// Non-interpolated average precision over the score-descending ranking,
/// ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Mean of per-attribute APs.
pub fn mean_ap(aps: &[f64]) -> f64 {
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// Percent with one decimal, as tables print it.
pub fn percent(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Per-pixel class agreement helper: mean IoU over the given classes,
/// skipping classes absent from both maps.
pub fn mean_iou(a: &ndarray::Array2<u8>, b: &ndarray::Array2<u8>, classes: &[u8]) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut total = 0.0;
    let mut counted = 0;
    for &c in classes {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&x, &y) in a.iter().zip(b.iter()) {
            let (p, q) = (x == c, y == c);
            inter += (p && q) as usize;
            union += (p || q) as usize;
        }
        if union > 0 {
            total += inter as f64 / union as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        1.0
    } else {
        total / counted as f64
    }
}

/// Structural labels of a templated caption.
pub fn caption_structure(caption: &str) -> Result<[bool; NUM_STRUCTURE]> {
    parse_caption(caption)
        .map(|o| structure_labels(&o))
        .ok_or_else(|| Error::InvalidConfig(format!("caption outside the template: `{caption}`")))
}

/// Small classifier: three strided convolutions and a linear head.
#[derive(Debug, Clone)]
pub struct AttributeDetector {
    pub arch: Arch,
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm>,
    pub head: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub width: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            width: 8,
            seed: 0,
        }
    }
}

impl AttributeDetector {
    pub fn new(arch: Arch) -> Self {
        let w = arch.width;
        let widths = [w, 2 * w, 4 * w];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c = RGB;
        for (i, &out) in widths.iter().enumerate() {
            convs.push(Conv2d::new(format!("det.conv{i}"), c, out, Window::new(4, 2, 1), i == 0));
            if i > 0 {
                norms.push(BatchNorm::new(format!("det.conv{i}_bn"), out));
            }
            c = out;
        }
        let side = arch.resolution / 8;
        AttributeDetector {
            arch,
            convs,
            norms,
            head: Linear::new("det.head", c * side * side, NUM_STRUCTURE),
        }
    }

    pub fn init(&self, rng: &mut ChaCha8Rng) -> Weights<f32> {
        let mut w = Weights::default();
        for c in &self.convs {
            c.init(&mut w.params, rng);
        }
        for n in &self.norms {
            n.init(&mut w.params, &mut w.buffers, rng);
        }
        self.head.init(&mut w.params, rng);
        w
    }

    /// Logits `[N, 5]`.
    pub fn logits<'g>(&self, b: &Bound<'g, f32>, x: crate::nn::Var<'g, f32>) -> crate::nn::Var<'g, f32> {
        let mut h = x;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(b, h);
            if i > 0 {
                h = self.norms[i - 1].forward(b, h);
            }
            h = h.leaky_relu(LEAK as f32);
        }
        let n = h.shape()[0];
        let flat = h.value().len() / n;
        self.head.forward(b, h.reshape(&[n, flat]))
    }
}

/// Trained detector and its weights.
#[derive(Debug, Clone)]
pub struct Detector {
    pub net: AttributeDetector,
    pub weights: Weights<f32>,
}

#[derive(Serialize, Deserialize)]
struct DetectorManifest {
    kind: String,
    arch: Arch,
    config: DetectorConfig,
    tensors: Vec<crate::checkpoint::TensorEntry>,
}

fn label_tensor(labels: &[[bool; NUM_STRUCTURE]]) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(&[labels.len(), NUM_STRUCTURE]), |ix| labels[ix[0]][ix[1]] as u8 as f32)
}

impl Detector {
    /// Trains on images with their structural labels (binary cross-entropy).
    pub fn train(images: &[&ImageRGB], labels: &[[bool; NUM_STRUCTURE]], config: &DetectorConfig) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::DatasetEmpty);
        }
        let res = images[0].height();
        let net = AttributeDetector::new(Arch::new(res, config.width)?);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = net.init(&mut rng);
        let mut adam = Adam::new(&weights.params, config.learning_rate, 0.9, 0.999);
        let (lo, hi) = (1e-7f32, 1.0 - 1e-7f32);
        for epoch in 1..=config.epochs {
            let mut order: Vec<usize> = (0..images.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut steps = 0;
            for idx in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
                let g = Graph::new();
                let b = Bound::new(&g, &weights.params, &weights.buffers, Mode::Train, true);
                let x = g.constant(image_batch(&idx.iter().map(|&i| images[i]).collect::<Vec<_>>()));
                let y = label_tensor(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
                let p = net.logits(&b, x).sigmoid();
                let pos = p.log_clamped(lo, hi).mul(g.constant(y.clone()));
                let neg = p.one_minus().log_clamped(lo, hi).mul(g.constant(y.mapv(|v| 1.0 - v)));
                let loss = pos.add(neg).mean_all().scale(-1.0);
                let grads = b.gradients(&g.backward(loss));
                total += loss.scalar() as f64;
                steps += 1;
                weights.buffers = b.into_buffers();
                adam.update(&mut weights.params, &grads);
            }
            log::info!("detector epoch {epoch}: loss {:.4}", total / steps.max(1) as f64);
        }
        Ok(Detector { net, weights })
    }

    /// Attribute probabilities per image.
    pub fn predict(&self, images: &[&ImageRGB]) -> Vec<[f64; NUM_STRUCTURE]> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let g = Graph::new();
            let b = Bound::new(&g, &self.weights.params, &self.weights.buffers, Mode::Eval, false);
            let p = self.net.logits(&b, g.constant(image_batch(chunk))).sigmoid();
            let v = p.value();
            for i in 0..chunk.len() {
                let mut row = [0.0; NUM_STRUCTURE];
                for (k, r) in row.iter_mut().enumerate() {
                    *r = v[[i, k]] as f64;
                }
                out.push(row);
            }
        }
        out
    }

    pub fn save(&self, path: &Path, config: &DetectorConfig) -> Result<()> {
        let tensors: Vec<(String, &ArrayD<f32>)> = self
            .weights
            .params
            .iter()
            .map(|(k, v)| (format!("params/{k}"), v))
            .chain(self.weights.buffers.iter().map(|(k, v)| (format!("buffers/{k}"), v)))
            .collect();
        let manifest = DetectorManifest {
            kind: "attribute-detector".into(),
            arch: self.net.arch,
            config: *config,
            tensors: tensor_table(&tensors),
        };
        let json = serde_json::to_value(&manifest)?;
        write_atomic(path, &write_container(&json, &tensors))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (json, tensors) = read_container(&read_file(path)?)?;
        let manifest: DetectorManifest = serde_json::from_value(json)?;
        if manifest.kind != "attribute-detector" {
            return Err(Error::Checkpoint(format!("`{}` is not a detector", path.display())));
        }
        let mut weights = Weights::<f32>::default();
        for (name, t) in tensors {
            if let Some(k) = name.strip_prefix("params/") {
                weights.params.insert(k, t);
            } else if let Some(k) = name.strip_prefix("buffers/") {
                weights.buffers.insert(k, t);
            } else {
                return Err(Error::Checkpoint(format!("unknown tensor `{name}`")));
            }
        }
        Ok(Detector {
            net: AttributeDetector::new(manifest.arch),
            weights,
        })
    }
}

/// Anything that renders a person from a source record and a target's caption.
pub trait SwapGenerator {
    fn name(&self) -> String;
    fn generate(&self, source: &PersonRecord, target: &PersonRecord, seed: u64) -> Result<ImageRGB>;
}

/// The real target image: the protocol's upper bound.
pub struct RealTarget;

impl SwapGenerator for RealTarget {
    fn name(&self) -> String {
        "Original (upper bound)".into()
    }

    fn generate(&self, _source: &PersonRecord, target: &PersonRecord, _seed: u64) -> Result<ImageRGB> {
        Ok(target.image.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapProtocolResult {
    pub method: String,
    pub attributes: Vec<String>,
    pub aps: Vec<f64>,
    pub map: f64,
    /// `pairs[i]` is the test index whose caption item `i` received.
    pub pairs: Vec<usize>,
    pub predictions: Vec<[f64; NUM_STRUCTURE]>,
}

/// Scores a generator: each item is re-rendered with its partner's
/// caption and judged against the partner's structural labels.
pub fn run_swap_protocol(
    model: &dyn SwapGenerator,
    test: &[PersonRecord],
    detector: &Detector,
    seed: u64,
) -> Result<SwapProtocolResult> {
    let pairs = derangement(test.len(), seed)?;
    let labels: Vec<[bool; NUM_STRUCTURE]> = test.iter().map(|r| caption_structure(&r.caption)).collect::<Result<_>>()?;
    let mut images = Vec::with_capacity(test.len());
    for (i, &j) in pairs.iter().enumerate() {
        images.push(model.generate(&test[i], &test[j], record_seed(seed, i))?);
    }
    let predictions = detector.predict(&images.iter().collect::<Vec<_>>());
    let truth: Vec<[bool; NUM_STRUCTURE]> = pairs.iter().map(|&j| labels[j]).collect();
    let scores: Vec<Vec<f64>> = (0..NUM_STRUCTURE).map(|k| predictions.iter().map(|p| p[k]).collect()).collect();
    score_predictions(&model.name(), &scores, &truth, pairs, predictions)
}

fn score_predictions(
    method: &str,
    scores: &[Vec<f64>],
    truth: &[[bool; NUM_STRUCTURE]],
    pairs: Vec<usize>,
    predictions: Vec<[f64; NUM_STRUCTURE]>,
) -> Result<SwapProtocolResult> {
    let mut aps = Vec::with_capacity(NUM_STRUCTURE);
    for (k, s) in scores.iter().enumerate() {
        let l: Vec<bool> = truth.iter().map(|t| t[k]).collect();
        aps.push(average_precision(s, &l)?);
    }
    Ok(SwapProtocolResult {
        method: method.to_owned(),
        attributes: STRUCTURE_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        map: mean_ap(&aps),
        aps,
        pairs,
        predictions,
    })
}

/// The score-0.5-for-everything reference under the same pairing.
pub fn constant_baseline(test: &[PersonRecord], seed: u64) -> Result<SwapProtocolResult> {
    let pairs = derangement(test.len(), seed)?;
    let truth: Vec<[bool; NUM_STRUCTURE]> = pairs
        .iter()
        .map(|&j| caption_structure(&test[j].caption))
        .collect::<Result<_>>()?;
    let scores = vec![vec![0.5; test.len()]; NUM_STRUCTURE];
    let predictions = vec![[0.5; NUM_STRUCTURE]; test.len()];
    score_predictions("Constant 0.5", &scores, &truth, pairs, predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub seed: u64,
    pub test_items: usize,
    pub attributes: Vec<String>,
    pub results: Vec<SwapRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapRow {
    pub method: String,
    pub aps: Vec<f64>,
    pub map: f64,
}

impl SwapReport {
    pub fn new(seed: u64, test_items: usize, results: &[SwapProtocolResult]) -> Self {
        SwapReport {
            seed,
            test_items,
            attributes: STRUCTURE_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            results: results
                .iter()
                .map(|r| SwapRow {
                    method: r.method.clone(),
                    aps: r.aps.clone(),
                    map: r.map,
                })
                .collect(),
        }
    }

    /// Plain-text table, APs in percent with one decimal.
    pub fn table(&self) -> String {
        let mut cols: Vec<String> = vec!["Method".into()];
        cols.extend(self.attributes.iter().cloned());
        cols.push("mAP".into());
        let mut rows = vec![cols];
        for r in &self.results {
            let mut row = vec![r.method.clone()];
            row.extend(r.aps.iter().map(|&a| percent(a)));
            row.push(percent(r.map));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            writeln!(out, "{}", cells.join(" | ")).unwrap();
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                writeln!(out, "{}", rule.join("-|-")).unwrap();
            }
        }
        out
    }
}

/// One rating: a rater placed `method` at `rank` for `item_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub item_id: String,
    pub method: String,
    pub rank: usize,
}

/// Reads `item_id,method,rank` rows (with that header).
pub fn parse_ratings_csv(text: &str) -> Result<Vec<Rating>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::InvalidConfig(format!("ratings csv: {e}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingStats {
    pub methods: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// `frequency[m][r]`: how often method `m` got rank `r + 1`.
    pub frequency: Vec<Vec<usize>>,
    pub items: usize,
}

pub fn ranking_stats(ratings: &[Rating]) -> Result<RankingStats> {
    let methods: Vec<String> = ratings
        .iter()
        .map(|r| r.method.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = methods.len();
    let mut by_item: BTreeMap<&str, Vec<&Rating>> = BTreeMap::new();
    for r in ratings {
        by_item.entry(&r.item_id).or_default().push(r);
    }
    let mut ranks: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut frequency = vec![vec![0usize; k]; k];
    for (item, rs) in &by_item {
        let mut seen_rank = vec![false; k];
        let mut seen_method = vec![false; k];
        for r in rs {
            let m = methods.iter().position(|x| *x == r.method).unwrap();
            let ok = (1..=k).contains(&r.rank) && !seen_rank[r.rank - 1] && !seen_method[m];
            if !ok {
                return Err(Error::InvalidPermutation {
                    item: item.to_string(),
                    methods: k,
                });
            }
            seen_rank[r.rank - 1] = true;
            seen_method[m] = true;
            ranks[m].push(r.rank as f64);
            frequency[m][r.rank - 1] += 1;
        }
        if rs.len() != k {
            return Err(Error::InvalidPermutation {
                item: item.to_string(),
                methods: k,
            });
        }
    }
    let mean: Vec<f64> = ranks.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let std = ranks
        .iter()
        .zip(&mean)
        .map(|(v, &mu)| (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
        .collect();
    Ok(RankingStats {
        methods,
        mean,
        std,
        frequency,
        items: by_item.len(),
    })
}

impl RankingStats {
    pub fn table(&self) -> String {
        let mut out = String::from("Method | mean rank | std\n");
        for (i, m) in self.methods.iter().enumerate() {
            writeln!(out, "{m} | {:.3} | {:.3}", self.mean[i], self.std[i]).unwrap();
        }
        out
    }
}

/// Detector inputs from records: images and their caption-derived labels.
pub fn detector_data(records: &[PersonRecord]) -> Result<(Vec<&ImageRGB>, Vec<[bool; NUM_STRUCTURE]>)> {
    let labels = records.iter().map(|r| caption_structure(&r.caption)).collect::<Result<_>>()?;
    Ok((records.iter().map(|r| &r.image).collect(), labels))
}

/// Fraction of correct thresholded predictions, per attribute.
pub fn detector_accuracy(detector: &Detector, records: &[PersonRecord]) -> Result<Array1<f64>> {
    let (images, labels) = detector_data(records)?;
    let preds = detector.predict(&images);
    let mut acc = Array1::zeros(NUM_STRUCTURE);
    for (p, l) in preds.iter().zip(&labels) {
        for k in 0..NUM_STRUCTURE {
            acc[k] += ((p[k] >= 0.5) == l[k]) as u8 as f64;
        }
    }
    Ok(acc / records.len() as f64)
}
