//! Conditional variational autoencoder over encoded traces.
//!
//! The encoder embeds activities, runs them (with interarrival times)
//! through an LSTM, maps every trace attribute through its own linear
//! layer and concatenates the results with the condition `c` before the
//! mean and log-variance heads. The decoder upsamples `[z; c]` and drives
//! two autoregressive LSTMs (activities, interarrival times) plus one
//! two-layer head per trace attribute.

mod checkpoint;
mod graph;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mat::{argmax, log_sum_exp};
use crate::nn::params::{normal_embedding, uniform_fan_in};
use crate::nn::{Mat, ParamStore, Tape};
use crate::preprocess::{EncodedTrace, EncodingSpec, RawTrace};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub(crate) use graph::Batch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub lstm_hidden: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    /// Width of the per-attribute encoder maps and decoder hidden layers.
    pub attr_hidden: usize,
    /// Width of the upsampled latent `z_U`.
    pub upsample_dim: usize,
    /// Activity labels, without the end-of-trace token.
    pub n_activities: usize,
    pub cat_arities: Vec<usize>,
    /// Numerical attributes including the arrival time.
    pub n_num_attrs: usize,
}

impl ModelConfig {
    /// Default sizes for the given encoding.
    pub fn for_encoding(spec: &EncodingSpec) -> Self {
        ModelConfig {
            embedding_size: 5,
            lstm_hidden: 200,
            latent_dim: 10,
            dropout: 0.05,
            attr_hidden: 32,
            upsample_dim: 200,
            n_activities: spec.n_activities(),
            cat_arities: spec.cat_arities(),
            n_num_attrs: spec.num_attrs.len(),
        }
    }

    /// Sets the LSTM width and keeps `z_U` the same size.
    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.lstm_hidden = hidden;
        self.upsample_dim = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embedding_size", self.embedding_size),
            ("lstm_hidden", self.lstm_hidden),
            ("latent_dim", self.latent_dim),
            ("attr_hidden", self.attr_hidden),
            ("upsample_dim", self.upsample_dim),
            ("n_activities", self.n_activities),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Validation(format!("model {name} must be positive")));
            }
        }
        if self.cat_arities.contains(&0) {
            return Err(Error::Validation("categorical attribute with no categories".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Activity classes predicted by the decoder (activities plus EOT).
    pub fn n_classes(&self) -> usize {
        self.n_activities + 1
    }

    pub fn eot(&self) -> usize {
        self.n_activities
    }

    /// Width of the encoder concatenation `[h; attributes; c]`.
    pub fn concat_dim(&self) -> usize {
        self.lstm_hidden + (self.cat_arities.len() + self.n_num_attrs) * self.attr_hidden + 1
    }

    /// Checks that an encoding produces inputs this model accepts.
    pub fn check_encoding(&self, spec: &EncodingSpec) -> Result<()> {
        if self.n_activities != spec.n_activities()
            || self.cat_arities != spec.cat_arities()
            || self.n_num_attrs != spec.num_attrs.len()
        {
            return Err(Error::Compatibility(
                "model sizes do not match the encoding".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(usize),
    Embedding,
}

/// Parameter positions inside the [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    enc_emb: usize,
    enc_wa: usize,
    enc_wt: usize,
    enc_wh: usize,
    enc_b: usize,
    /// embedding, weight, bias
    enc_cat: Vec<[usize; 3]>,
    /// weight, bias
    enc_num: Vec<[usize; 2]>,
    mu_w: usize,
    mu_b: usize,
    lv_w: usize,
    lv_b: usize,
    up_w: usize,
    up_b: usize,
    dec_emb: usize,
    act_wz: usize,
    act_wx: usize,
    act_wh: usize,
    act_b: usize,
    act_out_w: usize,
    act_out_b: usize,
    time_wz: usize,
    time_wt: usize,
    time_wa: usize,
    time_wh: usize,
    time_b: usize,
    time_out_w: usize,
    time_out_b: usize,
    /// hidden weight, hidden bias, output weight, output bias
    dec_cat: Vec<[usize; 4]>,
    dec_num: Vec<[usize; 4]>,
}

impl Layout {
    /// Walks the parameter list in a fixed order, asking `f` for the
    /// position of each `(name, rows, cols)` tensor.
    fn build(
        cfg: &ModelConfig,
        mut f: impl FnMut(String, usize, usize, Init) -> Result<usize>,
    ) -> Result<Layout> {
        let (e, h, l, a, u) = (
            cfg.embedding_size,
            cfg.lstm_hidden,
            cfg.latent_dim,
            cfg.attr_hidden,
            cfg.upsample_dim,
        );
        let g = 4 * h;
        let mut p = |name: &str, r: usize, c: usize, init: Init| f(name.to_string(), r, c, init);
        let enc_emb = p("enc.act_emb", cfg.n_activities, e, Init::Embedding)?;
        let enc_wa = p("enc.lstm.w_act", e, g, Init::Uniform(h))?;
        let enc_wt = p("enc.lstm.w_time", 1, g, Init::Uniform(h))?;
        let enc_wh = p("enc.lstm.w_hidden", h, g, Init::Uniform(h))?;
        let enc_b = p("enc.lstm.bias", 1, g, Init::Uniform(h))?;
        let mut enc_cat = Vec::new();
        for (j, &arity) in cfg.cat_arities.iter().enumerate() {
            enc_cat.push([
                p(&format!("enc.cat{j}.emb"), arity, e, Init::Embedding)?,
                p(&format!("enc.cat{j}.w"), e, a, Init::Uniform(e))?,
                p(&format!("enc.cat{j}.b"), 1, a, Init::Uniform(e))?,
            ]);
        }
        let mut enc_num = Vec::new();
        for j in 0..cfg.n_num_attrs {
            enc_num.push([
                p(&format!("enc.num{j}.w"), 1, a, Init::Uniform(1))?,
                p(&format!("enc.num{j}.b"), 1, a, Init::Uniform(1))?,
            ]);
        }
        let d = cfg.concat_dim();
        let mu_w = p("enc.mu.w", d, l, Init::Uniform(d))?;
        let mu_b = p("enc.mu.b", 1, l, Init::Uniform(d))?;
        let lv_w = p("enc.logvar.w", d, l, Init::Uniform(d))?;
        let lv_b = p("enc.logvar.b", 1, l, Init::Uniform(d))?;

        let up_w = p("dec.up.w", l + 1, u, Init::Uniform(l + 1))?;
        let up_b = p("dec.up.b", 1, u, Init::Uniform(l + 1))?;
        let dec_emb = p("dec.act_emb", cfg.n_classes(), e, Init::Embedding)?;
        let act_wz = p("dec.act.w_z", u, g, Init::Uniform(h))?;
        let act_wx = p("dec.act.w_prev", e, g, Init::Uniform(h))?;
        let act_wh = p("dec.act.w_hidden", h, g, Init::Uniform(h))?;
        let act_b = p("dec.act.bias", 1, g, Init::Uniform(h))?;
        let act_out_w = p("dec.act.out.w", h, cfg.n_classes(), Init::Uniform(h))?;
        let act_out_b = p("dec.act.out.b", 1, cfg.n_classes(), Init::Uniform(h))?;
        let time_wz = p("dec.time.w_z", u, g, Init::Uniform(h))?;
        let time_wt = p("dec.time.w_prev", 1, g, Init::Uniform(h))?;
        let time_wa = p("dec.time.w_act", e, g, Init::Uniform(h))?;
        let time_wh = p("dec.time.w_hidden", h, g, Init::Uniform(h))?;
        let time_b = p("dec.time.bias", 1, g, Init::Uniform(h))?;
        let time_out_w = p("dec.time.out.w", h, 1, Init::Uniform(h))?;
        let time_out_b = p("dec.time.out.b", 1, 1, Init::Uniform(h))?;
        let mut dec_cat = Vec::new();
        for (j, &arity) in cfg.cat_arities.iter().enumerate() {
            dec_cat.push([
                p(&format!("dec.cat{j}.w1"), u, a, Init::Uniform(u))?,
                p(&format!("dec.cat{j}.b1"), 1, a, Init::Uniform(u))?,
                p(&format!("dec.cat{j}.w2"), a, arity, Init::Uniform(a))?,
                p(&format!("dec.cat{j}.b2"), 1, arity, Init::Uniform(a))?,
            ]);
        }
        let mut dec_num = Vec::new();
        for j in 0..cfg.n_num_attrs {
            dec_num.push([
                p(&format!("dec.num{j}.w1"), u, a, Init::Uniform(u))?,
                p(&format!("dec.num{j}.b1"), 1, a, Init::Uniform(u))?,
                p(&format!("dec.num{j}.w2"), a, 1, Init::Uniform(a))?,
                p(&format!("dec.num{j}.b2"), 1, 1, Init::Uniform(a))?,
            ]);
        }
        Ok(Layout {
            enc_emb,
            enc_wa,
            enc_wt,
            enc_wh,
            enc_b,
            enc_cat,
            enc_num,
            mu_w,
            mu_b,
            lv_w,
            lv_b,
            up_w,
            up_b,
            dec_emb,
            act_wz,
            act_wx,
            act_wh,
            act_b,
            act_out_w,
            act_out_b,
            time_wz,
            time_wt,
            time_wa,
            time_wh,
            time_b,
            time_out_w,
            time_out_b,
            dec_cat,
            dec_num,
        })
    }
}

/// Diagonal Gaussian posterior `q(z | x, c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| (0.5 * l).exp()).collect()
    }
}

/// `z = μ + exp(½·log_var) ⊙ noise`.
pub fn reparameterize(post: &LatentPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != post.mu.len() || post.log_var.len() != post.mu.len() {
        return Err(Error::Validation(format!(
            "noise has {} entries, latent space has {}",
            noise.len(),
            post.mu.len()
        )));
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.log_var)
        .zip(noise)
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect())
}

/// KL divergence from the posterior to the standard normal prior.
pub fn kl_divergence(post: &LatentPosterior) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, l)| m * m + l.exp() - l - 1.0)
        .sum::<f64>()
}

/// Per-step and per-attribute decoder predictions for one trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderOutput {
    /// One row of `n_activities + 1` scores per step; the last class is EOT.
    pub activity_logits: Vec<Vec<f64>>,
    /// One normalized interarrival prediction per step.
    pub interarrivals_hat: Vec<f64>,
    pub cat_attr_logits: Vec<Vec<f64>>,
    /// Normalized numerical attributes; index 0 is the arrival time.
    pub num_attrs_hat: Vec<f64>,
    /// Free-running decoding hit `max_len` before emitting EOT.
    pub truncated: bool,
}

impl DecoderOutput {
    pub fn steps(&self) -> usize {
        self.activity_logits.len()
    }

    /// Argmax activity per step, up to and including the first EOT.
    pub fn activities(&self) -> Vec<usize> {
        let eot = self.activity_logits.first().map_or(0, |r| r.len() - 1);
        let mut out = Vec::with_capacity(self.steps());
        for row in &self.activity_logits {
            let a = argmax(row);
            out.push(a);
            if a == eot {
                break;
            }
        }
        out
    }

    /// Resolves categorical outputs by argmax.
    pub fn to_raw(&self, condition: bool) -> RawTrace {
        RawTrace {
            activity_ids: self.activities(),
            interarrivals: self.interarrivals_hat.clone(),
            cat_attr_ids: self.cat_attr_logits.iter().map(|r| argmax(r)).collect(),
            num_attrs: self.num_attrs_hat.clone(),
            condition,
        }
    }
}

/// Per-trace loss terms. `total = reconstruction + beta·kl`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub activity: f64,
    pub interarrival: f64,
    pub cat_attrs: f64,
    pub num_attrs: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn reconstruction(&self) -> f64 {
        self.activity + self.interarrival + self.cat_attrs + self.num_attrs
    }

    fn finish(mut self) -> Self {
        self.total = self.reconstruction() + self.beta * self.kl;
        self
    }

    /// Component-wise mean of several breakdowns (all with the same β).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown {
            beta: items.first().map_or(1.0, |b| b.beta),
            ..Default::default()
        };
        for b in items {
            acc.activity += b.activity / n;
            acc.interarrival += b.interarrival / n;
            acc.cat_attrs += b.cat_attrs / n;
            acc.num_attrs += b.num_attrs / n;
            acc.kl += b.kl / n;
        }
        acc.finish()
    }

    pub fn is_finite(&self) -> bool {
        [self.activity, self.interarrival, self.cat_attrs, self.num_attrs, self.kl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Loss of a teacher-forced decoder output against its target.
///
/// Activity cross-entropy covers every step including EOT; the squared
/// error on interarrivals covers the real events only (the EOT step has no
/// interarrival target).
pub fn loss(
    out: &DecoderOutput,
    target: &EncodedTrace,
    post: &LatentPosterior,
    beta: f64,
) -> Result<LossBreakdown> {
    let n = target.n_events();
    if out.activity_logits.len() != n + 1 || out.interarrivals_hat.len() < n {
        return Err(Error::Alignment(format!(
            "decoder produced {} steps for a trace of {n} events",
            out.activity_logits.len()
        )));
    }
    if out.cat_attr_logits.len() != target.cat_attr_ids.len()
        || out.num_attrs_hat.len() != target.num_attrs.len()
    {
        return Err(Error::Alignment("attribute counts differ".into()));
    }
    let xent = |row: &[f64], t: usize| log_sum_exp(row) - row[t];
    let activity = out
        .activity_logits
        .iter()
        .zip(&target.activity_ids)
        .map(|(row, &t)| xent(row, t))
        .sum();
    let interarrival = out.interarrivals_hat[..n]
        .iter()
        .zip(&target.interarrivals)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let cat_attrs = out
        .cat_attr_logits
        .iter()
        .zip(&target.cat_attr_ids)
        .map(|(row, &t)| xent(row, t))
        .sum();
    let num_attrs = out
        .num_attrs_hat
        .iter()
        .zip(&target.num_attrs)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(LossBreakdown {
        activity,
        interarrival,
        cat_attrs,
        num_attrs,
        kl: kl_divergence(post),
        beta,
        total: 0.0,
    }
    .finish())
}

/// How stochastic parts of a forward pass behave.
pub struct ForwardMode<'r> {
    /// Source for dropout masks and latent noise; `None` disables both and
    /// decodes from `z = μ`.
    pub rng: Option<&'r mut dyn RngCore>,
}

impl ForwardMode<'_> {
    pub fn deterministic() -> Self {
        ForwardMode { rng: None }
    }
}

/// Model parameters together with the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Cvae {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl Cvae {
    pub fn new(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, |name, r, c, init| {
            let m = match init {
                Init::Uniform(fan_in) => uniform_fan_in(r, c, fan_in, rng),
                Init::Embedding => normal_embedding(r, c, rng),
            };
            Ok(params.insert(name, m))
        })?;
        Ok(Cvae {
            config,
            params,
            layout,
        })
    }

    /// All parameters zero; useful for structural tests.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, |name, r, c, _| Ok(params.insert(name, Mat::zeros(r, c))))?;
        Ok(Cvae {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config, |name, r, c, _| {
            let i = params
                .position(&name)
                .ok_or_else(|| Error::Compatibility(format!("missing parameter `{name}`")))?;
            if params.at(i).shape() != (r, c) {
                return Err(Error::Compatibility(format!(
                    "parameter `{name}` has shape {:?}, expected ({r}, {c})",
                    params.at(i).shape()
                )));
            }
            Ok(i)
        })?;
        if !params.all_finite() {
            return Err(Error::Numeric("stored parameters are not finite".into()));
        }
        Ok(Cvae {
            config,
            params,
            layout,
        })
    }

    /// Posterior of every trace, in input order.
    pub fn encode(&self, batch: &[EncodedTrace]) -> Result<Vec<LatentPosterior>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&EncodedTrace> = batch.iter().collect();
        let b = Batch::new(&refs, &self.config)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let enc = self.encoder_graph(&mut tape, &vars, &b, &mut ForwardMode::deterministic());
        let (mu, lv) = (tape.value(enc.mu), tape.value(enc.log_var));
        if !mu.is_finite() {
            return Err(Error::Numeric("encoder mean head produced non-finite values".into()));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(
                "encoder log-variance head produced non-finite values".into(),
            ));
        }
        let mut out = vec![None; batch.len()];
        for (row, &orig) in b.order.iter().enumerate() {
            out[orig] = Some(LatentPosterior {
                mu: mu.row(row).to_vec(),
                log_var: lv.row(row).to_vec(),
            });
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    /// Decodes one latent vector. With a teacher the unroll has exactly
    /// `n + 1` steps; otherwise it stops at EOT or after `max_len` steps.
    pub fn decode(
        &self,
        z: &[f64],
        condition: bool,
        teacher: Option<&EncodedTrace>,
        max_len: usize,
    ) -> Result<DecoderOutput> {
        self.check_latent(z)?;
        match teacher {
            Some(t) => {
                let b = Batch::new(&[t], &self.config)?;
                let mut tape = Tape::new();
                let vars = self.params.bind(&mut tape);
                let zv = tape.leaf(Mat::row_vector(z.to_vec()));
                let c = f64::from(u8::from(condition));
                let dec = self.decoder_teacher_graph(
                    &mut tape,
                    &vars,
                    &b,
                    zv,
                    &[c],
                    true,
                    &mut ForwardMode::deterministic(),
                );
                Ok(self.collect_teacher(&tape, &dec, &b).pop().unwrap())
            }
            None => Ok(self
                .decode_free(&[z.to_vec()], &[condition], max_len)?
                .pop()
                .unwrap()),
        }
    }

    /// Free-running decoding of several latent vectors at once. Each row is
    /// computed independently of the others.
    pub fn decode_free(
        &self,
        zs: &[Vec<f64>],
        conditions: &[bool],
        max_len: usize,
    ) -> Result<Vec<DecoderOutput>> {
        if zs.len() != conditions.len() {
            return Err(Error::Validation("one condition per latent vector".into()));
        }
        for z in zs {
            self.check_latent(z)?;
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.free_running(zs, conditions, max_len))
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Validation(format!(
                "latent vector has {} entries, expected {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("latent vector is not finite".into()));
        }
        Ok(())
    }

    /// Mean loss over `batch` and, when `with_grads`, gradients of the mean
    /// objective for every parameter (store order).
    pub fn batch_loss(
        &self,
        batch: &[&EncodedTrace],
        beta: f64,
        mode: &mut ForwardMode,
        with_grads: bool,
    ) -> Result<(LossBreakdown, Option<Vec<Option<Mat>>>)> {
        if batch.is_empty() {
            return Err(Error::Empty("loss of an empty batch".into()));
        }
        let b = Batch::new(batch, &self.config)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let nodes = self.loss_graph(&mut tape, &vars, &b, beta, mode);
        let inv = 1.0 / batch.len() as f64;
        let breakdown = LossBreakdown {
            activity: tape.scalar(nodes.activity) * inv,
            interarrival: tape.scalar(nodes.interarrival) * inv,
            cat_attrs: tape.scalar(nodes.cat_attrs) * inv,
            num_attrs: tape.scalar(nodes.num_attrs) * inv,
            kl: tape.scalar(nodes.kl) * inv,
            beta,
            total: tape.scalar(nodes.total),
        };
        let grads = with_grads.then(|| {
            let mut g = tape.backward(nodes.total);
            vars.iter().map(|v| g.take(*v)).collect()
        });
        Ok((breakdown, grads))
    }

    /// Standard normal latent sample.
    pub fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.config.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }
}
