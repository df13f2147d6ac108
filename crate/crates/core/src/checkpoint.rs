//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "RDCKPT\0\x01"
//! u64       manifest length L
//! L bytes   UTF-8 JSON manifest
//! ...       tensor data, f32 little-endian, at the offsets the manifest lists
//! ```
//!
//! Tensor names are prefixed `generator/params/`, `generator/buffers/`,
//! `discriminator/params/`, `discriminator/buffers/`, `encoder/`,
//! `adam_g/m/`, `adam_g/v/`, `adam_d/m/` and `adam_d/v/`. Offsets are in
//! bytes from the start of the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Arch, Weights};
use crate::nn::{Adam, Bound, Graph, Mode, ParamSet};
use crate::preprocess::design_coding_from_parts;
use crate::text::{encode_text, tokenize, TextEncoder, Vocabulary};
use crate::training::{split_critic, Stage, StageNets, TrainConfig, TrainState};
use crate::types::DesignCoding;

pub const MAGIC: &[u8; 8] = b"RDCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub stage: Stage,
    pub epoch: usize,
    pub config_hash: String,
    pub config: TrainConfig,
    pub arch: Arch,
    pub loss_history: Vec<EpochLoss>,
    pub vocab: Vec<String>,
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to run or resume one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub generator: Weights<f32>,
    pub discriminator: Weights<f32>,
    pub encoder: ParamSet<f32>,
    pub adam_g: Adam<f32>,
    pub adam_d: Adam<f32>,
}

impl Checkpoint {
    pub(crate) fn from_state(
        config: &TrainConfig,
        epoch: usize,
        history: &[EpochLoss],
        vocab: &Vocabulary,
        state: &TrainState,
    ) -> Self {
        let (disc, encoder) = split_critic(&state.critic.params);
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                stage: config.stage,
                epoch,
                config_hash: config.hash(),
                config: config.clone(),
                arch: config.arch().expect("validated config"),
                loss_history: history.to_vec(),
                vocab: vocab.tokens().to_vec(),
                adam_g_step: state.adam_g.step,
                adam_d_step: state.adam_d.step,
                tensors: Vec::new(),
            },
            generator: state.generator.clone(),
            discriminator: Weights {
                params: disc,
                buffers: state.critic.buffers.clone(),
            },
            encoder,
            adam_g: state.adam_g.clone(),
            adam_d: state.adam_d.clone(),
        }
    }

    pub fn stage(&self) -> Stage {
        self.manifest.stage
    }

    pub fn arch(&self) -> Arch {
        self.manifest.arch
    }

    pub fn nets(&self) -> StageNets {
        StageNets::new(self.stage(), self.arch())
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::from_tokens(self.manifest.vocab.clone()).expect("vocabulary validated on load")
    }

    pub fn text_encoder(&self) -> TextEncoder {
        TextEncoder::new(self.manifest.vocab.len())
    }

    /// 40-dim text vector of a caption under this stage's encoder.
    pub fn encode_caption(&self, caption: &str) -> Result<Array1<f32>> {
        let tokens = tokenize(caption, &self.vocab())?;
        Ok(encode_text(&tokens, &self.text_encoder(), &self.encoder))
    }

    pub fn design(&self, attributes: &Array1<f32>, caption: &str) -> Result<DesignCoding> {
        let text = self.encode_caption(caption)?;
        design_coding_from_parts(attributes, text.as_slice().unwrap())
    }

    /// Generator forward in evaluation mode on batched `[N, ...]` inputs.
    pub fn generate(&self, z: ArrayD<f32>, cond: ArrayD<f32>, design: ArrayD<f32>) -> ArrayD<f32> {
        let g = Graph::new();
        let b = Bound::new(&g, &self.generator.params, &self.generator.buffers, Mode::Eval, false);
        let out = self.nets().generate(&b, g.constant(z), g.constant(cond), g.constant(design));
        let v = out.value();
        (*v).clone()
    }

    fn named_tensors(&self) -> Vec<(String, &ArrayD<f32>)> {
        let sets: [(&str, &ParamSet<f32>); 9] = [
            ("generator/params/", &self.generator.params),
            ("generator/buffers/", &self.generator.buffers),
            ("discriminator/params/", &self.discriminator.params),
            ("discriminator/buffers/", &self.discriminator.buffers),
            ("encoder/", &self.encoder),
            ("adam_g/m/", &self.adam_g.first_moment),
            ("adam_g/v/", &self.adam_g.second_moment),
            ("adam_d/m/", &self.adam_d.first_moment),
            ("adam_d/v/", &self.adam_d.second_moment),
        ];
        sets.into_iter()
            .flat_map(|(p, set)| set.iter().map(move |(k, v)| (format!("{p}{k}"), v)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = self.manifest.clone();
        manifest.tensors.clear();
        let tensors = self.named_tensors();
        manifest.tensors = tensor_table(&tensors);
        write_container(&serde_json::to_value(&manifest).expect("manifest serialises"), &tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, tensors) = read_container(bytes)?;
        let mut manifest: Manifest = serde_json::from_value(json)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        Vocabulary::from_tokens(manifest.vocab.clone())?;
        let mut ckpt = Checkpoint {
            generator: Weights::default(),
            discriminator: Weights::default(),
            encoder: ParamSet::new(),
            adam_g: Adam::new(&ParamSet::new(), 0.0, 0.0, 0.0),
            adam_d: Adam::new(&ParamSet::new(), 0.0, 0.0, 0.0),
            manifest: manifest.clone(),
        };
        for (name, t) in tensors {
            let (set, key) = ckpt
                .slot(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
            set.insert(key, t);
        }
        let cfg = &manifest.config;
        for (adam, step) in [(&mut ckpt.adam_g, manifest.adam_g_step), (&mut ckpt.adam_d, manifest.adam_d_step)] {
            adam.lr = cfg.learning_rate;
            adam.beta1 = cfg.beta1;
            adam.beta2 = cfg.beta2;
            adam.step = step;
        }
        manifest.tensors.clear();
        ckpt.manifest = manifest;
        Ok(ckpt)
    }

    fn slot(&mut self, name: &str) -> Option<(&mut ParamSet<f32>, String)> {
        let prefixes: [(&str, &mut ParamSet<f32>); 9] = [
            ("generator/params/", &mut self.generator.params),
            ("generator/buffers/", &mut self.generator.buffers),
            ("discriminator/params/", &mut self.discriminator.params),
            ("discriminator/buffers/", &mut self.discriminator.buffers),
            ("encoder/", &mut self.encoder),
            ("adam_g/m/", &mut self.adam_g.first_moment),
            ("adam_g/v/", &mut self.adam_g.second_moment),
            ("adam_d/m/", &mut self.adam_d.first_moment),
            ("adam_d/v/", &mut self.adam_d.second_moment),
        ];
        for (p, set) in prefixes {
            if let Some(rest) = name.strip_prefix(p) {
                return Some((set, rest.to_owned()));
            }
        }
        None
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Loads and checks the stage.
    pub fn load_stage(path: &Path, expected: Stage) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.stage() != expected {
            return Err(Error::StageMismatch {
                expected: expected.to_string(),
                found: ckpt.stage().to_string(),
            });
        }
        Ok(ckpt)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// Writes through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a container file, mapping absence to `MissingCheckpoint`.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingCheckpoint(path.to_owned()));
    }
    Ok(fs::read(path)?)
}

/// Offsets of `tensors` laid out back to back.
pub fn tensor_table(tensors: &[(String, &ArrayD<f32>)]) -> Vec<TensorEntry> {
    let mut offset = 0u64;
    tensors
        .iter()
        .map(|(name, t)| {
            let len = t.len() as u64;
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len,
            };
            offset += len * 4;
            e
        })
        .collect()
}

/// Serialises a manifest (which must carry the `tensors` table of
/// [`tensor_table`]) followed by the tensor data.
pub fn write_container(manifest: &serde_json::Value, tensors: &[(String, &ArrayD<f32>)]) -> Vec<u8> {
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serialises");
    let data_len: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(16 + json.len() + data_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[derive(Deserialize)]
struct TableOnly {
    #[serde(default)]
    tensors: Vec<TensorEntry>,
}

/// Splits a container into its manifest and named tensors.
pub fn read_container(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, ArrayD<f32>)>)> {
    let bad = |why: String| Error::Checkpoint(why);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let value: serde_json::Value = serde_json::from_slice(json)?;
    let table: TableOnly = serde_json::from_value(value.clone())?;
    let data = &bytes[16 + len..];
    let mut out = Vec::with_capacity(table.tensors.len());
    for e in table.tensors {
        let start = e.offset as usize;
        let end = start + e.len as usize * 4;
        let raw = data
            .get(start..end)
            .ok_or_else(|| bad(format!("tensor `{}` out of bounds", e.name)))?;
        if e.shape.iter().product::<usize>() != e.len as usize {
            return Err(bad(format!("tensor `{}` shape disagrees with length", e.name)));
        }
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((e.name, ArrayD::from_shape_vec(IxDyn(&e.shape), values).unwrap()));
    }
    Ok((value, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize;
    use crate::tensor::stack_rows;
    use crate::training::{stage_condition, train_stage};
    use crate::types::LatentNoise;

    fn trained(stage: Stage) -> (Checkpoint, Vec<crate::types::PersonRecord>) {
        let records: Vec<_> = synthesize(4, 9, 32).into_iter().map(|(_, r)| r).collect();
        let cfg = TrainConfig {
            stage,
            epochs: 1,
            batch_size: 2,
            width: 2,
            ..TrainConfig::default()
        };
        (train_stage(&cfg, &records).unwrap().checkpoint, records)
    }

    fn forward(c: &Checkpoint, r: &crate::types::PersonRecord) -> ArrayD<f32> {
        let z = LatentNoise::sample(5);
        let design = c.design(&crate::preprocess::extract_attributes(r), &r.caption).unwrap();
        let cond = stage_condition(c.stage(), r).unwrap().insert_axis(ndarray::Axis(0)).into_dyn();
        c.generate(stack_rows(&[z.values()]), cond, stack_rows(&[design.values()]))
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for stage in Stage::ALL {
            let (c, records) = trained(stage);
            let path = dir.path().join(format!("{stage}.ckpt"));
            c.save(&path).unwrap();
            let back = Checkpoint::load_stage(&path, stage).unwrap();
            for ((n1, t1), (n2, t2)) in back.named_tensors().iter().zip(c.named_tensors().iter()) {
                assert_eq!(n1, n2);
                assert!(t1.iter().zip(t2.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "{n1}");
            }
            assert_eq!(back.manifest, c.manifest);
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), c.to_bytes());
            let (a, b) = (forward(&c, &records[0]), forward(&back, &records[0]));
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.ckpt");
        assert!(matches!(load_checkpoint(&missing), Err(Error::MissingCheckpoint(_))));
        let (c, _) = trained(Stage::Shape);
        let path = dir.path().join("shape.ckpt");
        c.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load_stage(&path, Stage::Image),
            Err(Error::StageMismatch { .. })
        ));
        let bytes = c.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_bytes(b"garbage garbage garbage"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn manifest_is_readable_json() {
        let (c, _) = trained(Stage::Image);
        let bytes = c.to_bytes();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        assert_eq!(v["stage"], "image");
        assert_eq!(v["epoch"], 1);
        assert_eq!(v["config_hash"], c.manifest.config.hash());
        let total: u64 = v["tensors"].as_array().unwrap().iter().map(|t| t["len"].as_u64().unwrap() * 4).sum();
        assert_eq!(16 + len + total as usize, bytes.len());
    }
}
