//! A synthetic few-shot classifier whose logits depend on a prompt vector.
//!
//! For example `i` with input offset `c_i`:
//! `logits_i(x) = W_out · tanh(M x + c_i) + b`, with `M` of rank `r`.
//! Distractor (non-verbalizer) tokens get a positive bias so that, at a random
//! prompt, most of the vocabulary mass sits outside the verbalizer set.

use serde::{Deserialize, Serialize};

use super::loss::{confidence_regularized_loss, cross_entropy_loss, LogitBundle};
use super::synthetic::dot;
use super::{EvalCounter, Objective};
use crate::error::{Error, Result};
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    #[default]
    Ce,
    Cr { beta: f64 },
}

impl LossKind {
    pub fn apply(self, bundle: &LogitBundle) -> Result<f64> {
        match self {
            Self::Ce => cross_entropy_loss(bundle),
            Self::Cr { beta } => confidence_regularized_loss(bundle, beta),
        }
    }
}

fn default_distractor_bias() -> f64 {
    3.0
}

fn default_output_scale() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitLandscapeSpec {
    pub ambient_dim: usize,
    pub vocab_size: usize,
    pub verbalizer_ids: Vec<usize>,
    pub rank: usize,
    pub n_examples: usize,
    pub seed: u64,
    #[serde(default = "default_distractor_bias")]
    pub distractor_bias: f64,
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
    #[serde(default)]
    pub loss: LossKind,
}

impl LogitLandscapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ambient_dim == 0 || self.rank == 0 || self.rank > self.ambient_dim {
            return Err(Error::InvalidSpec(format!(
                "need 0 < rank <= ambient_dim, got rank={} ambient_dim={}",
                self.rank, self.ambient_dim
            )));
        }
        if self.n_examples == 0 {
            return Err(Error::InvalidSpec("n_examples must be positive".into()));
        }
        if let LossKind::Cr { beta } = self.loss {
            if !(beta >= 0.0) || !beta.is_finite() {
                return Err(Error::InvalidSpec(format!("beta must be finite and >= 0, got {beta}")));
            }
        }
        // reuse the bundle checks for the verbalizer set
        LogitBundle {
            logits: vec![0.0; self.vocab_size],
            verbalizer_ids: self.verbalizer_ids.clone(),
            label_id: self.verbalizer_ids.first().copied().unwrap_or(0),
        }
        .validate()
    }
}

#[derive(Debug)]
pub struct LogitLandscape {
    spec: LogitLandscapeSpec,
    /// Row-major `r × d`.
    mixing: Vec<f64>,
    /// Row-major `|V| × r`.
    readout: Vec<f64>,
    bias: Vec<f64>,
    offsets: Vec<Vec<f64>>,
    labels: Vec<usize>,
    counter: EvalCounter,
}

impl LogitLandscape {
    pub fn new(spec: LogitLandscapeSpec) -> Result<Self> {
        spec.validate()?;
        let (d, r, v) = (spec.ambient_dim, spec.rank, spec.vocab_size);
        let mut rng = SeededStream::new(spec.seed);
        let mixing: Vec<f64> = rng.normal_vec(r * d).into_iter().map(|m| m / (d as f64).sqrt()).collect();
        let out = spec.output_scale / (r as f64).sqrt();
        let readout: Vec<f64> = rng.normal_vec(v * r).into_iter().map(|w| w * out).collect();
        let mut bias = vec![0.0; v];
        for (tok, b) in bias.iter_mut().enumerate() {
            let draw = rng.normal();
            if !spec.verbalizer_ids.contains(&tok) {
                *b = spec.distractor_bias + draw;
            }
        }
        let offsets = (0..spec.n_examples).map(|_| rng.normal_vec(r)).collect();
        let labels = (0..spec.n_examples)
            .map(|i| spec.verbalizer_ids[i % spec.verbalizer_ids.len()])
            .collect();
        Ok(Self {
            spec,
            mixing,
            readout,
            bias,
            offsets,
            labels,
            counter: EvalCounter::new(),
        })
    }

    pub fn spec(&self) -> &LogitLandscapeSpec {
        &self.spec
    }

    /// The same landscape scored with a different loss.
    pub fn with_loss(&self, loss: LossKind) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.loss = loss;
        Self::new(spec)
    }

    fn hidden_base(&self, x: &[f64]) -> Vec<f64> {
        self.mixing
            .chunks_exact(self.spec.ambient_dim)
            .map(|row| dot(row, x))
            .collect()
    }

    fn example_logits(&self, base: &[f64], i: usize) -> (Vec<f64>, Vec<f64>) {
        let hidden: Vec<f64> = base.iter().zip(&self.offsets[i]).map(|(a, c)| (a + c).tanh()).collect();
        let logits = self
            .readout
            .chunks_exact(self.spec.rank)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, &hidden) + b)
            .collect();
        (hidden, logits)
    }

    fn bundles_from_base(&self, base: &[f64]) -> Vec<(Vec<f64>, LogitBundle)> {
        (0..self.spec.n_examples)
            .map(|i| {
                let (hidden, logits) = self.example_logits(base, i);
                let bundle = LogitBundle {
                    logits,
                    verbalizer_ids: self.spec.verbalizer_ids.clone(),
                    label_id: self.labels[i],
                };
                (hidden, bundle)
            })
            .collect()
    }

    /// d loss / d logits for one bundle.
    fn logit_sensitivity(&self, bundle: &LogitBundle) -> Vec<f64> {
        let a = &bundle.logits;
        let w = &bundle.verbalizer_ids;
        let max_w = w.iter().map(|&i| a[i]).fold(f64::NEG_INFINITY, f64::max);
        let z_w: f64 = w.iter().map(|&i| (a[i] - max_w).exp()).sum();
        let mut grad = vec![0.0; a.len()];
        for &i in w {
            grad[i] = (a[i] - max_w).exp() / z_w;
        }
        grad[bundle.label_id] -= 1.0;
        if let LossKind::Cr { beta } = self.spec.loss {
            let max_v = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z_v: f64 = a.iter().map(|v| (v - max_v).exp()).sum();
            for (g, v) in grad.iter_mut().zip(a) {
                *g += beta * (v - max_v).exp() / z_v;
            }
            for &i in w {
                grad[i] -= beta * (a[i] - max_w).exp() / z_w;
            }
        }
        grad
    }
}

impl Objective for LogitLandscape {
    fn dim(&self) -> usize {
        self.spec.ambient_dim
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        let base = self.hidden_base(x);
        let mut total = 0.0;
        for (_, bundle) in self.bundles_from_base(&base) {
            total += self.spec.loss.apply(&bundle)?;
        }
        Ok(total / self.spec.n_examples as f64)
    }

    fn analytic_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (r, d) = (self.spec.rank, self.spec.ambient_dim);
        let base = self.hidden_base(x);
        let mut pre_grad = vec![0.0; r];
        for (hidden, bundle) in self.bundles_from_base(&base) {
            let dl = self.logit_sensitivity(&bundle);
            for (row, g) in self.readout.chunks_exact(r).zip(&dl) {
                if *g == 0.0 {
                    continue;
                }
                for k in 0..r {
                    pre_grad[k] += g * row[k] * (1.0 - hidden[k] * hidden[k]);
                }
            }
        }
        let scale = 1.0 / self.spec.n_examples as f64;
        let mut out = vec![0.0; d];
        for (row, g) in self.mixing.chunks_exact(d).zip(&pre_grad) {
            out.iter_mut().zip(row).for_each(|(o, m)| *o += scale * g * m);
        }
        Ok(out)
    }

    fn logit_bundles(&self, x: &[f64]) -> Result<Vec<LogitBundle>> {
        super::check_point(x, self.dim())?;
        let base = self.hidden_base(x);
        Ok(self.bundles_from_base(&base).into_iter().map(|(_, b)| b).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{gradient, GradientMode};

    fn spec(loss: LossKind) -> LogitLandscapeSpec {
        LogitLandscapeSpec {
            ambient_dim: 40,
            vocab_size: 30,
            verbalizer_ids: vec![3, 7],
            rank: 6,
            n_examples: 8,
            seed: 17,
            distractor_bias: 3.0,
            output_scale: 2.0,
            loss,
        }
    }

    #[test]
    fn mean_of_example_losses() {
        let f = LogitLandscape::new(spec(LossKind::Ce)).unwrap();
        let x = SeededStream::new(1).normal_vec(40);
        let bundles = f.logit_bundles(&x).unwrap();
        assert_eq!(bundles.len(), 8);
        let mean = bundles.iter().map(|b| cross_entropy_loss(b).unwrap()).sum::<f64>() / 8.0;
        assert!((f.evaluate(&x).unwrap() - mean).abs() < 1e-12);
        assert_eq!(f.evaluations(), 1);
    }

    #[test]
    fn cr_with_zero_beta_equals_ce() {
        let ce = LogitLandscape::new(spec(LossKind::Ce)).unwrap();
        let cr = ce.with_loss(LossKind::Cr { beta: 0.0 }).unwrap();
        let x = SeededStream::new(2).normal_vec(40);
        assert_eq!(ce.evaluate(&x).unwrap(), cr.evaluate(&x).unwrap());
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        for loss in [LossKind::Ce, LossKind::Cr { beta: 1.5 }] {
            let f = LogitLandscape::new(spec(loss)).unwrap();
            let x = SeededStream::new(4).normal_vec(40);
            let ga = gradient(&f, &x, GradientMode::Analytic).unwrap();
            let gf = gradient(&f, &x, GradientMode::CentralDifference { h: None }).unwrap();
            let num: f64 = ga.iter().zip(&gf).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = ga.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "{loss:?}: {}", num / den);
        }
    }

    #[test]
    fn distractors_dominate_at_random_prompt() {
        let f = LogitLandscape::new(spec(LossKind::Ce)).unwrap();
        let bundles = f.logit_bundles(&vec![0.0; 40]).unwrap();
        for b in bundles {
            let greater = b.logits.iter().filter(|&&a| a > b.logits[b.label_id]).count();
            assert!(greater > 0);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(LossKind::Ce);
        s.verbalizer_ids = vec![3, 30];
        assert!(LogitLandscape::new(s).is_err());
        let mut s = spec(LossKind::Cr { beta: -1.0 });
        s.loss = LossKind::Cr { beta: -1.0 };
        assert!(LogitLandscape::new(s).is_err());
        let mut s = spec(LossKind::Ce);
        s.rank = 41;
        assert!(LogitLandscape::new(s).is_err());
    }
}
