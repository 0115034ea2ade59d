use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_MAX_N: usize = 4;

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(words: &[String], n: usize) -> Counts<'_> {
    let mut out = HashMap::new();
    if n > 0 && words.len() >= n {
        for g in words.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

fn bleu_single(cand: &[String], reference: &[String], n: usize) -> f64 {
    if cand.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let c = ngrams(cand, k);
        let r = ngrams(reference, k);
        let total: usize = c.values().sum();
        let clipped: usize = c.iter().map(|(g, &m)| m.min(r.get(g).copied().unwrap_or(0))).sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * bp * (log_sum / n as f64).exp()
}

/// Sentence BLEU@n (×100) against each reference separately; the best wins.
pub fn bleu(cand: &[String], references: &[Vec<String>], n: usize) -> f64 {
    references.iter().map(|r| bleu_single(cand, r, n)).fold(0.0, f64::max)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_single(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    100.0 * (1.0 + b2) * p * r / (r + b2 * p)
}

/// ROUGE-L F-measure (×100), best over references.
pub fn rouge_l(cand: &[String], references: &[Vec<String>]) -> f64 {
    references.iter().map(|r| rouge_single(cand, r)).fold(0.0, f64::max)
}

/// One candidate caption with its references.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

struct TfIdf {
    vecs: Vec<HashMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

/// CIDEr-D per sample and its mean (both on the conventional ×10 scale).
pub fn cider(corpus: &[CaptionPair]) -> Result<(Vec<f64>, f64)> {
    if corpus.len() < 2 {
        return Err(Error::CorpusTooSmall(corpus.len()));
    }
    // Document frequency: number of samples whose references contain the n-gram.
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for pair in corpus {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &pair.references {
            for n in 1..=CIDER_MAX_N {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (corpus.len() as f64).ln();
    let tfidf = |words: &[String]| -> TfIdf {
        let mut vecs = Vec::with_capacity(CIDER_MAX_N);
        let mut norms = Vec::with_capacity(CIDER_MAX_N);
        for n in 1..=CIDER_MAX_N {
            let v: HashMap<Vec<String>, f64> = ngrams(words, n)
                .into_iter()
                .map(|(g, c)| {
                    let d = df.get(g).copied().unwrap_or(0.0).max(1.0);
                    (g.to_vec(), c as f64 * (log_n - d.ln()))
                })
                .collect();
            norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
            vecs.push(v);
        }
        TfIdf { vecs, norms, len: words.len() }
    };
    let mut scores = Vec::with_capacity(corpus.len());
    for pair in corpus {
        let c = tfidf(&pair.candidate);
        let mut total = 0.0;
        for r in &pair.references {
            let r = tfidf(r);
            let delta = c.len as f64 - r.len as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut s = 0.0;
            for n in 0..CIDER_MAX_N {
                let dot: f64 = c.vecs[n].iter().map(|(g, v)| r.vecs[n].get(g).map_or(0.0, |rv| v.min(*rv) * rv)).sum();
                if c.norms[n] > 0.0 && r.norms[n] > 0.0 {
                    s += penalty * dot / (c.norms[n] * r.norms[n]);
                }
            }
            total += s / CIDER_MAX_N as f64;
        }
        let refs = pair.references.len().max(1) as f64;
        scores.push(10.0 * total / refs);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TextMetricsReport {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    /// CIDEr-D ×100.
    pub cider: f64,
}

impl TextMetricsReport {
    /// Corpus means. CIDEr needs at least two samples and is 0 otherwise.
    pub fn compute(corpus: &[CaptionPair]) -> Self {
        let n = corpus.len().max(1) as f64;
        let mean = |f: &dyn Fn(&CaptionPair) -> f64| corpus.iter().map(f).sum::<f64>() / n;
        TextMetricsReport {
            bleu1: mean(&|p| bleu(&p.candidate, &p.references, 1)),
            bleu4: mean(&|p| bleu(&p.candidate, &p.references, 4)),
            rouge_l: mean(&|p| rouge_l(&p.candidate, &p.references)),
            cider: cider(corpus).map(|(_, m)| 100.0 * m).unwrap_or(0.0),
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, f64, &'static str)> {
        vec![("text.bleu1", self.bleu1, ""), ("text.bleu4", self.bleu4, ""), ("text.rouge_l", self.rouge_l, ""), ("text.cider", self.cider, "")]
    }
}
