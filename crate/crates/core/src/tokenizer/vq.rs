//! Vector-quantized autoencoder over fixed-length multichannel windows.
//!
//! The encoder is a strided temporal convolution (kernel = stride = the
//! downsample factor) followed by a pointwise layer; the decoder mirrors it.
//! Both are expressed as per-segment MLPs over flattened segments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Graph, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub code_dim: usize,
    pub hidden: usize,
    pub beta: f64,
    pub ema_decay: f64,
    pub steps: usize,
    /// Windows per optimization step.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            codebook_size: 512,
            code_dim: 64,
            hidden: 128,
            beta: 0.25,
            ema_decay: 0.99,
            steps: 2000,
            batch: 64,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// K × d code vectors.
    pub codes: Tensor,
    pub ema_counts: Vec<f64>,
    pub ema_sums: Tensor,
    /// Assignments accumulated since the last dead-code sweep.
    pub usage: Vec<u64>,
}

impl Codebook {
    pub fn from_codes(codes: Tensor) -> Self {
        let k = codes.rows;
        Codebook { ema_counts: vec![1.0; k], ema_sums: codes.clone(), usage: vec![0; k], codes }
    }

    pub fn len(&self) -> usize {
        self.codes.rows
    }

    pub fn is_empty(&self) -> bool {
        self.codes.rows == 0
    }

    /// Index of the closest code in squared Euclidean distance; ties go to the lower index.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.codes.rows {
            let d: f64 = self.codes.row(k).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn assign(&self, z: &Tensor) -> Vec<usize> {
        (0..z.rows).map(|r| self.nearest(z.row(r))).collect()
    }

    fn ema_update(&mut self, z: &Tensor, ids: &[usize], decay: f64) {
        let k = self.len();
        let d = self.codes.cols;
        let mut counts = vec![0.0; k];
        let mut sums = Tensor::zeros(k, d);
        for (r, &id) in ids.iter().enumerate() {
            counts[id] += 1.0;
            for (s, v) in sums.row_mut(id).iter_mut().zip(z.row(r)) {
                *s += v;
            }
            self.usage[id] += 1;
        }
        for i in 0..k {
            self.ema_counts[i] = decay * self.ema_counts[i] + (1.0 - decay) * counts[i];
        }
        for (s, n) in self.ema_sums.data.iter_mut().zip(&sums.data) {
            *s = decay * *s + (1.0 - decay) * n;
        }
        // Laplace smoothing keeps rarely used codes finite.
        let total: f64 = self.ema_counts.iter().sum();
        let eps = 1e-5;
        for i in 0..k {
            let n = (self.ema_counts[i] + eps) / (total + k as f64 * eps) * total;
            for c in 0..d {
                self.codes.data[i * d + c] = self.ema_sums.data[i * d + c] / n;
            }
        }
    }

    fn reseed(&mut self, code: usize, z: &[f64]) {
        self.codes.row_mut(code).copy_from_slice(z);
        self.ema_sums.row_mut(code).copy_from_slice(z);
        self.ema_counts[code] = 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layers {
    enc1: (ParamId, ParamId),
    enc2: (ParamId, ParamId),
    dec1: (ParamId, ParamId),
    dec2: (ParamId, ParamId),
}

/// Trained encoder, decoder and codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct VqAutoencoder {
    pub segment_dim: usize,
    pub params: ParamStore,
    pub codebook: Codebook,
    layers: Layers,
}

fn dense(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> (ParamId, ParamId) {
    let w = p.add(format!("{name}.w"), Tensor::randn(fan_in, fan_out, (1.0 / fan_in as f64).sqrt(), rng), true);
    let b = p.add(format!("{name}.b"), Tensor::zeros(1, fan_out), false);
    (w, b)
}

impl VqAutoencoder {
    fn init(segment_dim: usize, cfg: &VqConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new();
        let layers = Layers {
            enc1: dense(&mut p, "enc1", segment_dim, cfg.hidden, rng),
            enc2: dense(&mut p, "enc2", cfg.hidden, cfg.code_dim, rng),
            dec1: dense(&mut p, "dec1", cfg.code_dim, cfg.hidden, rng),
            dec2: dense(&mut p, "dec2", cfg.hidden, segment_dim, rng),
        };
        VqAutoencoder { segment_dim, params: p, codebook: Codebook::from_codes(Tensor::zeros(cfg.codebook_size, cfg.code_dim)), layers }
    }

    /// Rebuilds from stored parameters (names as produced by training).
    pub fn from_parts(segment_dim: usize, params: ParamStore, codebook: Codebook) -> Result<Self> {
        let find = |n: &str| params.find(n).ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {n}")));
        let pair = |n: &str| -> Result<(ParamId, ParamId)> { Ok((find(&format!("{n}.w"))?, find(&format!("{n}.b"))?)) };
        let layers = Layers { enc1: pair("enc1")?, enc2: pair("enc2")?, dec1: pair("dec1")?, dec2: pair("dec2")? };
        if params.get(layers.enc1.0).rows != segment_dim
            || params.get(layers.dec2.0).cols != segment_dim
            || params.get(layers.enc2.0).cols != codebook.codes.cols
        {
            return Err(Error::ShapeMismatch("autoencoder layer sizes".into()));
        }
        Ok(VqAutoencoder { segment_dim, params, codebook, layers })
    }

    fn mlp(g: &mut Graph, x: crate::nn::NodeId, l1: (ParamId, ParamId), l2: (ParamId, ParamId)) -> crate::nn::NodeId {
        let h = g.linear(x, l1.0, l1.1);
        let h = g.gelu(h);
        g.linear(h, l2.0, l2.1)
    }

    /// Continuous latents, one row per segment.
    pub fn encode_latents(&self, segments: &Tensor) -> Tensor {
        let mut g = Graph::new(&self.params);
        let x = g.input(segments.clone());
        let z = Self::mlp(&mut g, x, self.layers.enc1, self.layers.enc2);
        g.value(z).clone()
    }

    pub fn encode(&self, segments: &Tensor) -> Vec<usize> {
        self.codebook.assign(&self.encode_latents(segments))
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Tensor> {
        let k = self.codebook.len();
        if let Some(&id) = ids.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidToken { id, vocab: k });
        }
        let d = self.codebook.codes.cols;
        let mut q = Tensor::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            q.row_mut(r).copy_from_slice(self.codebook.codes.row(id));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(q);
        let y = Self::mlp(&mut g, x, self.layers.dec1, self.layers.dec2);
        Ok(g.value(y).clone())
    }

    /// Mean squared reconstruction error per element over `segments`.
    pub fn reconstruction_error(&self, segments: &Tensor) -> Result<f64> {
        let rec = self.decode(&self.encode(segments))?;
        Ok(rec.data.iter().zip(&segments.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / segments.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqReport {
    pub final_loss: f64,
    pub reconstruction: f64,
    pub reseeded: usize,
}

/// Rows of `windows` split into consecutive segments of `segment_dim` values.
pub fn segments_of(windows: &[Vec<f64>], segment_dim: usize) -> Tensor {
    let mut data = Vec::new();
    for w in windows {
        debug_assert_eq!(w.len() % segment_dim, 0);
        data.extend_from_slice(w);
    }
    let rows = data.len() / segment_dim;
    Tensor::from_vec(rows, segment_dim, data)
}

/// Trains encoder, decoder and codebook on flattened windows, each made of
/// `window.len() / segment_dim` segments.
pub fn train_vq(windows: &[Vec<f64>], segment_dim: usize, cfg: &VqConfig) -> Result<(VqAutoencoder, VqReport)> {
    if cfg.codebook_size < 2 {
        return Err(Error::InvalidConfig("codebook needs at least 2 codes".into()));
    }
    if windows.len() < 10 * cfg.codebook_size {
        return Err(Error::InsufficientData(format!(
            "{} windows for a codebook of {} (need 10 per code)",
            windows.len(),
            cfg.codebook_size
        )));
    }
    let seg_per_window = windows[0].len() / segment_dim;
    if seg_per_window == 0 || windows.iter().any(|w| w.len() != seg_per_window * segment_dim) {
        return Err(Error::ShapeMismatch("windows must share a length divisible by the segment size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VqAutoencoder::init(segment_dim, cfg, &mut rng);

    // Codebook starts at encoder outputs of randomly drawn segments.
    let all = segments_of(windows, segment_dim);
    let picks: Vec<usize> = (0..cfg.codebook_size).map(|_| rng.random_range(0..all.rows)).collect();
    let mut init = Tensor::zeros(picks.len(), segment_dim);
    for (r, &i) in picks.iter().enumerate() {
        init.row_mut(r).copy_from_slice(all.row(i));
    }
    model.codebook = Codebook::from_codes(model.encode_latents(&init));

    let opt_cfg = AdamWConfig { lr: cfg.lr, total_steps: cfg.steps, ..AdamWConfig::default() };
    let mut opt = AdamW::new(opt_cfg, &model.params);
    let batch = cfg.batch.clamp(1, windows.len());
    let steps_per_epoch = windows.len().div_ceil(batch);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut final_loss = f64::NAN;
    let mut reseeded = 0;
    let l = model.layers;
    for step in 0..cfg.steps {
        let mut rows = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            rows.push(windows[order[cursor]].clone());
            cursor += 1;
        }
        let x = segments_of(&rows, segment_dim);
        let n = x.rows;
        let (grads, z, ids, loss) = {
            let mut g = Graph::new(&model.params);
            let xin = g.input(x.clone());
            let z = VqAutoencoder::mlp(&mut g, xin, l.enc1, l.enc2);
            let zv = g.value(z).clone();
            let ids = model.codebook.assign(&zv);
            let mut q = Tensor::zeros(n, zv.cols);
            for (r, &id) in ids.iter().enumerate() {
                q.row_mut(r).copy_from_slice(model.codebook.codes.row(id));
            }
            let qn = g.straight_through(z, q.clone());
            let y = VqAutoencoder::mlp(&mut g, qn, l.dec1, l.dec2);
            let rec = g.mse(y, x, 1.0 / (n * segment_dim) as f64);
            let commit = g.mse(z, q, cfg.beta / (n * zv.cols) as f64);
            let total = g.sum(&[rec, commit]);
            let loss = g.value(total).scalar();
            (g.backward(total), zv, ids, loss)
        };
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("autoencoder loss at step {step}")));
        }
        final_loss = loss;
        let mut grads = grads;
        opt.update(&mut model.params, &mut grads);
        model.codebook.ema_update(&z, &ids, cfg.ema_decay);
        if (step + 1) % steps_per_epoch == 0 && step + 1 < cfg.steps {
            for k in 0..model.codebook.len() {
                if model.codebook.usage[k] == 0 {
                    let r = rng.random_range(0..z.rows);
                    model.codebook.reseed(k, z.row(r));
                    reseeded += 1;
                }
            }
            model.codebook.usage.iter_mut().for_each(|u| *u = 0);
        }
    }
    if !model.params.all_finite() || !model.codebook.codes.is_finite() {
        return Err(Error::Diverged("non-finite autoencoder parameters".into()));
    }
    let reconstruction = model.reconstruction_error(&all)?;
    Ok((model, VqReport { final_loss, reconstruction, reseeded }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn assignment_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cb = Codebook::from_codes(Tensor::randn(64, 8, 1.0, &mut rng));
        for _ in 0..1000 {
            let z: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dists: Vec<f64> =
                (0..64).map(|k| cb.codes.row(k).iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum()).collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let oracle = dists.iter().position(|d| *d == min).unwrap();
            assert_eq!(cb.nearest(&z), oracle);
        }
    }

    #[test]
    fn memorizes_single_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let windows = vec![w; 160];
        let cfg = VqConfig { codebook_size: 16, code_dim: 8, hidden: 32, steps: 500, batch: 8, lr: 5e-3, ..Default::default() };
        let (m, report) = train_vq(&windows, 8, &cfg).unwrap();
        assert!(report.reconstruction < 1e-3, "{report:?}");
        let seg = segments_of(&windows[..1], 8);
        assert_eq!(m.encode(&seg).len(), 4);
    }

    #[test]
    fn too_few_windows() {
        let windows = vec![vec![0.0; 8]; 10];
        let cfg = VqConfig { codebook_size: 4, ..Default::default() };
        assert!(matches!(train_vq(&windows, 4, &cfg), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn decode_rejects_unknown_ids() {
        let windows = vec![vec![0.5; 8]; 40];
        let cfg = VqConfig { codebook_size: 4, code_dim: 2, hidden: 4, steps: 2, ..Default::default() };
        let (m, _) = train_vq(&windows, 4, &cfg).unwrap();
        assert_eq!(m.decode(&[4]).unwrap_err(), Error::InvalidToken { id: 4, vocab: 4 });
    }

    fn clustered_windows(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..48).map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        (0..400)
            .map(|_| {
                let c = &centers[rng.random_range(0..centers.len())];
                c.iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect()
    }

    #[test]
    fn larger_codebook_does_not_hurt() {
        let mut small = Vec::new();
        let mut large = Vec::new();
        for seed in 0..3 {
            let windows = clustered_windows(100 + seed);
            for (k, out) in [(16, &mut small), (32, &mut large)] {
                let cfg = VqConfig { codebook_size: k, code_dim: 8, hidden: 32, steps: 400, batch: 16, lr: 3e-3, seed, ..Default::default() };
                out.push(train_vq(&windows, 8, &cfg).unwrap().1.reconstruction);
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[1]
        };
        let (s, l) = (median(&mut small), median(&mut large));
        assert!(l <= s, "K=32 {l} vs K=16 {s}");
    }
}
