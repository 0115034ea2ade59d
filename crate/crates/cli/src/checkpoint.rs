//! Versioned binary checkpoint container.
//!
//! Layout, all little-endian:
//! `IMU4D\0\0` | u32 version | u32 section count | per section:
//! u16 name length, name, u64 offset, u64 length, u32 CRC-32 | payloads.

use std::path::Path;

use imu4d_core::model::{Model, ModelConfig, Stage, Vocabs};
use imu4d_core::nn::{AdamW, AdamWConfig, ParamStore, Tensor};
use imu4d_core::tokenizer::bins::{BinQuantizer, ChannelBins};
use imu4d_core::tokenizer::vq::{Codebook, VqAutoencoder};
use imu4d_core::tokenizer::{MotionTokenizer, TextVocab, TokenizerConfig};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::RunConfig;
use crate::error::{self, CliError, CliResult};

pub const MAGIC: &[u8; 7] = b"IMU4D\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Named byte sections in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Container {
    sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn push(&mut self, name: &str, payload: Vec<u8>) {
        self.sections.push((name.to_string(), payload));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.0.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.sections.iter().find(|s| s.0 == name).map(|s| s.1.as_slice())
    }

    fn require(&self, name: &str) -> CliResult<&[u8]> {
        self.get(name).ok_or_else(|| CliError::Corrupt(format!("missing section '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let table_len: usize = self.sections.iter().map(|(n, _)| 2 + n.len() + 8 + 8 + 4).sum();
        let mut offset = (MAGIC.len() + 8 + table_len) as u64;
        let mut out = Vec::with_capacity(offset as usize + self.sections.iter().map(|s| s.1.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
            offset += payload.len() as u64;
        }
        for (_, payload) in &self.sections {
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut d = Dec::new(bytes, "header");
        if d.take(MAGIC.len())? != MAGIC {
            return Err(CliError::Corrupt("not an imu4d checkpoint (bad magic)".into()));
        }
        let version = d.u32()?;
        if version != FORMAT_VERSION {
            return Err(CliError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let count = d.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let n = u16::from_le_bytes(d.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(d.take(n)?.to_vec()).map_err(|_| CliError::Corrupt("section name is not UTF-8".into()))?;
            table.push((name, d.u64()?, d.u64()?, d.u32()?));
        }
        let mut sections = Vec::with_capacity(table.len());
        let mut expected_offset = d.pos as u64;
        for (name, offset, len, crc) in table {
            let end = offset.checked_add(len).filter(|e| *e <= bytes.len() as u64);
            let Some(end) = end.filter(|_| offset == expected_offset) else {
                return Err(CliError::Corrupt(format!("section '{name}' extends outside the file")));
            };
            let payload = &bytes[offset as usize..end as usize];
            if crc32fast::hash(payload) != crc {
                return Err(CliError::ChecksumMismatch(name));
            }
            expected_offset = end;
            sections.push((name, payload.to_vec()));
        }
        if expected_offset != bytes.len() as u64 {
            return Err(CliError::Corrupt("trailing bytes after the last section".into()));
        }
        Ok(Container { sections })
    }
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.len(t.rows);
        self.len(t.cols);
        t.data.iter().for_each(|x| self.f64(*x));
    }
    fn params(&mut self, p: &ParamStore) {
        self.len(p.len());
        for id in p.ids() {
            self.str(p.name(id));
            self.u8(p.decays(id) as u8);
            self.tensor(p.get(id));
        }
    }
    fn bins(&mut self, b: &ChannelBins) {
        self.f64s(&b.edges);
        self.f64s(&b.centroids);
        self.f64(b.max_spread);
    }
}

struct Dec<'a> {
    b: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Dec<'a> {
    fn new(b: &'a [u8], section: &'static str) -> Self {
        Dec { b, pos: 0, section }
    }

    fn short(&self) -> CliError {
        CliError::Corrupt(format!("section '{}' is truncated", self.section))
    }

    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.b.len()).ok_or_else(|| self.short())?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> CliResult<usize> {
        let n = self.u64()?;
        if n.saturating_mul(unit.max(1) as u64) > (self.b.len() - self.pos) as u64 {
            return Err(self.short());
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> CliResult<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Corrupt(format!("section '{}' holds invalid UTF-8", self.section)))
    }
    fn f64s(&mut self) -> CliResult<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> CliResult<Tensor> {
        let rows = self.len(0)?;
        let cols = self.len(0)?;
        let n = rows.checked_mul(cols).filter(|n| n.saturating_mul(8) <= self.b.len() - self.pos).ok_or_else(|| self.short())?;
        let data = (0..n).map(|_| self.f64()).collect::<CliResult<Vec<_>>>()?;
        Ok(Tensor::from_vec(rows, cols, data))
    }
    fn params(&mut self) -> CliResult<ParamStore> {
        let n = self.len(1)?;
        let mut p = ParamStore::new();
        for _ in 0..n {
            let name = self.str()?;
            let decay = self.u8()? != 0;
            let t = self.tensor()?;
            if p.find(&name).is_some() {
                return Err(CliError::Corrupt(format!("duplicate parameter {name}")));
            }
            p.add(name, t, decay);
        }
        Ok(p)
    }
    fn bins(&mut self) -> CliResult<ChannelBins> {
        Ok(ChannelBins { edges: self.f64s()?, centroids: self.f64s()?, max_spread: self.f64()? })
    }
    fn toml<T: serde::de::DeserializeOwned>(&mut self) -> CliResult<T> {
        let s = self.str()?;
        toml::from_str(&s).map_err(|e| CliError::Corrupt(format!("section '{}': {e}", self.section)))
    }
    fn finish(self) -> CliResult<()> {
        if self.pos != self.b.len() {
            return Err(CliError::Corrupt(format!("section '{}' has trailing bytes", self.section)));
        }
        Ok(())
    }
}

fn toml_string<T: serde::Serialize>(v: &T) -> String {
    toml::to_string(v).expect("config serializes")
}

/// Model weights with the optimizer and sampler state needed to resume.
#[derive(Debug, Clone)]
pub struct TrainedState {
    pub model: Model,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    pub stage: Stage,
    pub steps: u64,
}

/// A fitted tokenizer and vocabulary, optionally with a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub tokenizer: MotionTokenizer,
    pub text: TextVocab,
    pub trained: Option<TrainedState>,
}

fn encode_tokenizer(t: &MotionTokenizer) -> Vec<u8> {
    let mut e = Enc::default();
    e.str(&toml_string(&t.config));
    e.len(t.vq.segment_dim);
    e.params(&t.vq.params);
    let cb = &t.vq.codebook;
    e.tensor(&cb.codes);
    e.f64s(&cb.ema_counts);
    e.tensor(&cb.ema_sums);
    e.len(cb.usage.len());
    cb.usage.iter().for_each(|u| e.u64(*u));
    e.len(t.bins.bins);
    for group in [&t.bins.mean, &t.bins.std] {
        e.len(group.len());
        group.iter().for_each(|b| e.bins(b));
    }
    e.0
}

fn decode_tokenizer(b: &[u8]) -> CliResult<MotionTokenizer> {
    let mut d = Dec::new(b, "tokenizer");
    let config: TokenizerConfig = d.toml()?;
    let segment_dim = d.len(0)?;
    let params = d.params()?;
    let codes = d.tensor()?;
    let ema_counts = d.f64s()?;
    let ema_sums = d.tensor()?;
    let n = d.len(8)?;
    let usage = (0..n).map(|_| d.u64()).collect::<CliResult<Vec<_>>>()?;
    let bins = d.len(0)?;
    let mut groups = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = d.len(1)?;
        groups.push((0..n).map(|_| d.bins()).collect::<CliResult<Vec<_>>>()?);
    }
    d.finish()?;
    let std = groups.pop().expect("two groups");
    let mean = groups.pop().expect("two groups");
    let vq = VqAutoencoder::from_parts(segment_dim, params, Codebook { codes, ema_counts, ema_sums, usage })?;
    Ok(MotionTokenizer { config, vq, bins: BinQuantizer { bins, mean, std } })
}

fn encode_vocab(v: &TextVocab) -> Vec<u8> {
    let mut e = Enc::default();
    e.len(v.len());
    v.tokens().iter().for_each(|t| e.str(t));
    e.0
}

fn decode_vocab(b: &[u8]) -> CliResult<TextVocab> {
    let mut d = Dec::new(b, "text_vocab");
    let n = d.len(8)?;
    let tokens = (0..n).map(|_| d.str()).collect::<CliResult<Vec<_>>>()?;
    d.finish()?;
    Ok(TextVocab::from_tokens(tokens)?)
}

fn encode_model(m: &Model) -> Vec<u8> {
    let mut e = Enc::default();
    e.str(&toml_string(&m.config));
    let v = &m.vocabs;
    for x in [v.codebook, v.bins, v.text, v.classes, v.root_window, v.codes_per_window] {
        e.len(x);
    }
    e.params(&m.params);
    e.0
}

fn decode_model(b: &[u8]) -> CliResult<Model> {
    let mut d = Dec::new(b, "model");
    let config: ModelConfig = d.toml()?;
    let mut v = [0usize; 6];
    for x in v.iter_mut() {
        *x = d.len(0)?;
    }
    let vocabs = Vocabs { codebook: v[0], bins: v[1], text: v[2], classes: v[3], root_window: v[4], codes_per_window: v[5] };
    let params = d.params()?;
    d.finish()?;
    Ok(Model::from_params(config, vocabs, params)?)
}

fn encode_optimizer(o: &AdamW) -> Vec<u8> {
    let mut e = Enc::default();
    e.str(&toml_string(&o.config));
    e.u64(o.step);
    e.len(o.m.len());
    o.m.iter().chain(&o.v).for_each(|t| e.tensor(t));
    e.0
}

fn decode_optimizer(b: &[u8], params: &ParamStore) -> CliResult<AdamW> {
    let mut d = Dec::new(b, "optimizer");
    let config: AdamWConfig = d.toml()?;
    let step = d.u64()?;
    let n = d.len(16)?;
    let m = (0..n).map(|_| d.tensor()).collect::<CliResult<Vec<_>>>()?;
    let v = (0..n).map(|_| d.tensor()).collect::<CliResult<Vec<_>>>()?;
    d.finish()?;
    let shapes_ok = n == params.len() && params.ids().all(|id| m[id.0].shape() == params.get(id).shape() && v[id.0].shape() == params.get(id).shape());
    if !shapes_ok {
        return Err(CliError::Corrupt("optimizer moments do not match the model parameters".into()));
    }
    Ok(AdamW { config, step, m, v })
}

fn encode_rng(r: &ChaCha8Rng) -> Vec<u8> {
    let mut e = Enc::default();
    e.0.extend_from_slice(&r.get_seed());
    e.u64(r.get_stream());
    e.0.extend_from_slice(&r.get_word_pos().to_le_bytes());
    e.0
}

fn decode_rng(b: &[u8]) -> CliResult<ChaCha8Rng> {
    let mut d = Dec::new(b, "rng");
    let seed: [u8; 32] = d.take(32)?.try_into().expect("32 bytes");
    let stream = d.u64()?;
    let pos = u128::from_le_bytes(d.take(16)?.try_into().expect("16 bytes"));
    d.finish()?;
    let mut r = ChaCha8Rng::from_seed(seed);
    r.set_stream(stream);
    r.set_word_pos(pos);
    Ok(r)
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push("config", self.config.to_toml().into_bytes());
        c.push("tokenizer", encode_tokenizer(&self.tokenizer));
        c.push("text_vocab", encode_vocab(&self.text));
        let mut meta = Enc::default();
        match &self.trained {
            None => meta.u8(0),
            Some(t) => {
                meta.u8(t.stage.number());
                meta.u64(t.steps);
                c.push("model", encode_model(&t.model));
                c.push("optimizer", encode_optimizer(&t.optimizer));
                c.push("rng", encode_rng(&t.rng));
            }
        }
        c.push("meta", meta.0);
        c
    }

    pub fn from_container(c: &Container) -> CliResult<Self> {
        let config_text = std::str::from_utf8(c.require("config")?).map_err(|_| CliError::Corrupt("config echo is not UTF-8".into()))?;
        let config = RunConfig::from_toml_with_env(config_text, std::iter::empty())?;
        let tokenizer = decode_tokenizer(c.require("tokenizer")?)?;
        let text = decode_vocab(c.require("text_vocab")?)?;
        let mut meta = Dec::new(c.require("meta")?, "meta");
        let stage = meta.u8()?;
        let trained = if stage == 0 {
            meta.finish()?;
            None
        } else {
            let stage = Stage::from_number(stage).ok_or_else(|| CliError::Corrupt(format!("unknown stage {stage}")))?;
            let steps = meta.u64()?;
            meta.finish()?;
            let model = decode_model(c.require("model")?)?;
            let optimizer = decode_optimizer(c.require("optimizer")?, &model.params)?;
            let rng = decode_rng(c.require("rng")?)?;
            Some(TrainedState { model, optimizer, rng, stage, steps })
        };
        Ok(Checkpoint { config, tokenizer, text, trained })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(b: &[u8]) -> CliResult<Self> {
        Self::from_container(&Container::from_bytes(b)?)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> CliResult<()> {
    error::write(path, ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::from_bytes(&error::read_bytes(path)?)
}
