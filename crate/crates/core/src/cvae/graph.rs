//! Tape construction for the encoder, the teacher-forced decoder, the loss
//! and free-running decoding.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Cvae, DecoderOutput, ForwardMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::mat::argmax;
use crate::nn::{LstmInput, Mat, Tape, Var};
use crate::preprocess::EncodedTrace;

/// Traces ordered by decreasing length, so the traces still active at any
/// step form a prefix of the rows.
pub(crate) struct Batch<'a> {
    traces: Vec<&'a EncodedTrace>,
    /// `order[row]` is the caller's index of sorted row `row`.
    pub(crate) order: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub(crate) fn new(traces: &[&'a EncodedTrace], cfg: &ModelConfig) -> Result<Self> {
        for (i, t) in traces.iter().enumerate() {
            check_trace(t, cfg).map_err(|m| Error::Validation(format!("batch trace {i}: {m}")))?;
        }
        let mut order: Vec<usize> = (0..traces.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(traces[i].n_events()));
        Ok(Batch {
            traces: order.iter().map(|&i| traces[i]).collect(),
            order,
        })
    }

    fn len(&self) -> usize {
        self.traces.len()
    }

    fn n(&self, row: usize) -> usize {
        self.traces[row].n_events()
    }

    /// Rows whose event count satisfies `pred`; always a prefix.
    fn active(&self, pred: impl Fn(usize) -> bool) -> usize {
        self.traces.iter().take_while(|t| pred(t.n_events())).count()
    }

    fn conditions(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.condition).collect()
    }
}

fn check_trace(t: &EncodedTrace, cfg: &ModelConfig) -> std::result::Result<(), String> {
    let n = t.n_events();
    if n == 0 || t.activity_ids.len() != n + 1 || t.interarrivals.len() != n {
        return Err("expected n activities plus EOT and n interarrivals".into());
    }
    if t.activity_ids[n] != cfg.eot() || t.activity_ids[..n].iter().any(|&a| a >= cfg.n_activities) {
        return Err("activity indices out of range".into());
    }
    if t.cat_attr_ids.len() != cfg.cat_arities.len()
        || t.cat_attr_ids.iter().zip(&cfg.cat_arities).any(|(i, a)| i >= a)
    {
        return Err("categorical attributes do not match the model".into());
    }
    if t.num_attrs.len() != cfg.n_num_attrs {
        return Err("numerical attributes do not match the model".into());
    }
    let finite = t.interarrivals.iter().chain(&t.num_attrs).all(|v| v.is_finite());
    if !finite || !(t.condition == 0.0 || t.condition == 1.0) {
        return Err("non-finite values or condition outside {0, 1}".into());
    }
    Ok(())
}

pub(crate) struct EncoderNodes {
    pub(crate) mu: Var,
    pub(crate) log_var: Var,
    /// The condition column fed to the encoder concatenation.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) c: Var,
}

pub(crate) struct DecoderNodes {
    act_logits: Var,
    act_targets: Vec<usize>,
    /// First stacked row of every step.
    act_offsets: Vec<usize>,
    time_hat: Var,
    time_targets: Vec<f64>,
    time_offsets: Vec<usize>,
    /// Active rows of every timestamp step.
    time_counts: Vec<usize>,
    cat_logits: Vec<Var>,
    num_hat: Option<Var>,
}

pub(crate) struct LossNodes {
    pub(crate) activity: Var,
    pub(crate) interarrival: Var,
    pub(crate) cat_attrs: Var,
    pub(crate) num_attrs: Var,
    pub(crate) kl: Var,
    pub(crate) total: Var,
}

struct Heads {
    cat_logits: Vec<Var>,
    num_hat: Option<Var>,
}

impl Cvae {
    fn dropout(&self, t: &mut Tape, x: Var, mode: &mut ForwardMode) -> Var {
        let p = self.config.dropout;
        let Some(rng) = mode.rng.as_deref_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let (rows, cols) = t.value(x).shape();
        let keep = 1.0 / (1.0 - p);
        let mask = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        t.mul_const(x, Mat::from_vec(rows, cols, mask))
    }

    pub(crate) fn encoder_graph(
        &self,
        t: &mut Tape,
        v: &[Var],
        b: &Batch,
        mode: &mut ForwardMode,
    ) -> EncoderNodes {
        let l = &self.layout;
        let h = self.config.lstm_hidden;
        let mut states: Vec<Var> = Vec::with_capacity(b.n(0));
        for s in 0..b.n(0) {
            let k = b.active(|n| n > s);
            let ids: Vec<usize> = (0..k).map(|r| b.traces[r].activity_ids[s]).collect();
            let emb = t.gather(v[l.enc_emb], &ids);
            let gaps = t.leaf(Mat::column((0..k).map(|r| b.traces[r].interarrivals[s]).collect()));
            let inputs = [
                LstmInput::Proj {
                    x: emb,
                    w: v[l.enc_wa],
                },
                LstmInput::Proj {
                    x: gaps,
                    w: v[l.enc_wt],
                },
            ];
            let st = t.lstm_step(k, &inputs, states.last().copied(), v[l.enc_wh], v[l.enc_b]);
            states.push(st);
        }
        let last: Vec<(Var, usize)> = (0..b.len()).map(|r| (states[b.n(r) - 1], r)).collect();
        let hidden = t.pick_rows(&last, 0, h);
        let mut parts = vec![self.dropout(t, hidden, mode)];
        for (j, [emb, w, bias]) in l.enc_cat.iter().enumerate() {
            let ids: Vec<usize> = b.traces.iter().map(|tr| tr.cat_attr_ids[j]).collect();
            let e = t.gather(v[*emb], &ids);
            parts.push(t.linear(e, v[*w], v[*bias]));
        }
        for (j, [w, bias]) in l.enc_num.iter().enumerate() {
            let x = t.leaf(Mat::column(b.traces.iter().map(|tr| tr.num_attrs[j]).collect()));
            parts.push(t.linear(x, v[*w], v[*bias]));
        }
        let c = t.leaf(Mat::column(b.conditions()));
        parts.push(c);
        let joined = t.concat_cols(&parts);
        let mu = t.linear(joined, v[l.mu_w], v[l.mu_b]);
        let log_var = t.linear(joined, v[l.lv_w], v[l.lv_b]);
        EncoderNodes { mu, log_var, c }
    }

    /// Upsampled latent `z_U` from `z` (B×L) and the conditions.
    fn upsample(&self, t: &mut Tape, v: &[Var], z: Var, conditions: &[f64], mode: &mut ForwardMode) -> Var {
        let l = &self.layout;
        let c = t.leaf(Mat::column(conditions.to_vec()));
        let zc = t.concat_cols(&[z, c]);
        let zu = t.linear(zc, v[l.up_w], v[l.up_b]);
        self.dropout(t, zu, mode)
    }

    fn attribute_heads(&self, t: &mut Tape, v: &[Var], zu: Var) -> Heads {
        let l = &self.layout;
        let head = |t: &mut Tape, [w1, b1, w2, b2]: [usize; 4]| {
            let hidden = t.linear(zu, v[w1], v[b1]);
            let hidden = t.relu(hidden);
            t.linear(hidden, v[w2], v[b2])
        };
        let cat_logits = l.dec_cat.iter().map(|p| head(t, *p)).collect();
        let nums: Vec<Var> = l.dec_num.iter().map(|p| head(t, *p)).collect();
        let num_hat = (!nums.is_empty()).then(|| t.concat_cols(&nums));
        Heads { cat_logits, num_hat }
    }

    /// Teacher-forced decoder. Step `s` of the activity LSTM sees the
    /// embedding of the previous target activity (EOT at the first step);
    /// the timestamp LSTM sees the previous target interarrival and the
    /// current target activity. With `time_on_eot` the timestamp LSTM also
    /// runs on the EOT step, which has no target.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decoder_teacher_graph(
        &self,
        t: &mut Tape,
        v: &[Var],
        b: &Batch,
        z: Var,
        conditions: &[f64],
        time_on_eot: bool,
        mode: &mut ForwardMode,
    ) -> DecoderNodes {
        let l = &self.layout;
        let h = self.config.lstm_hidden;
        let eot = self.config.eot();
        let zu = self.upsample(t, v, z, conditions, mode);
        let pre_act = t.matmul(zu, v[l.act_wz]);
        let pre_time = t.matmul(zu, v[l.time_wz]);

        let (mut act_states, mut time_states) = (Vec::new(), Vec::new());
        let (mut act_targets, mut time_targets) = (Vec::new(), Vec::new());
        let (mut act_offsets, mut time_offsets) = (Vec::new(), Vec::new());
        let mut time_counts = Vec::new();
        for s in 0..=b.n(0) {
            let k = b.active(|n| n >= s);
            let prev: Vec<usize> = (0..k)
                .map(|r| if s == 0 { eot } else { b.traces[r].activity_ids[s - 1] })
                .collect();
            let emb = t.gather(v[l.dec_emb], &prev);
            let inputs = [
                LstmInput::Direct(pre_act),
                LstmInput::Proj {
                    x: emb,
                    w: v[l.act_wx],
                },
            ];
            let st = t.lstm_step(k, &inputs, act_states.last().copied(), v[l.act_wh], v[l.act_b]);
            act_states.push(st);
            act_offsets.push(act_targets.len());
            act_targets.extend((0..k).map(|r| b.traces[r].activity_ids[s]));

            let kt = if time_on_eot { k } else { b.active(|n| n > s) };
            if kt == 0 {
                continue;
            }
            let prev_gap = (0..kt)
                .map(|r| if s == 0 { 0.0 } else { b.traces[r].interarrivals[s - 1] })
                .collect();
            let gaps = t.leaf(Mat::column(prev_gap));
            let cur: Vec<usize> = (0..kt).map(|r| b.traces[r].activity_ids[s]).collect();
            let cur_emb = t.gather(v[l.dec_emb], &cur);
            let inputs = [
                LstmInput::Direct(pre_time),
                LstmInput::Proj {
                    x: gaps,
                    w: v[l.time_wt],
                },
                LstmInput::Proj {
                    x: cur_emb,
                    w: v[l.time_wa],
                },
            ];
            let st = t.lstm_step(kt, &inputs, time_states.last().copied(), v[l.time_wh], v[l.time_b]);
            time_states.push(st);
            time_offsets.push(time_targets.len());
            time_counts.push(kt);
            time_targets.extend((0..kt).map(|r| b.traces[r].interarrivals.get(s).copied().unwrap_or(0.0)));
        }

        let hs = t.vstack(&act_states, 0, h);
        let hs = self.dropout(t, hs, mode);
        let act_logits = t.linear(hs, v[l.act_out_w], v[l.act_out_b]);
        let ht = t.vstack(&time_states, 0, h);
        let ht = self.dropout(t, ht, mode);
        let time_hat = t.linear(ht, v[l.time_out_w], v[l.time_out_b]);
        let heads = self.attribute_heads(t, v, zu);
        DecoderNodes {
            act_logits,
            act_targets,
            act_offsets,
            time_hat,
            time_targets,
            time_offsets,
            time_counts,
            cat_logits: heads.cat_logits,
            num_hat: heads.num_hat,
        }
    }

    pub(crate) fn loss_graph(
        &self,
        t: &mut Tape,
        v: &[Var],
        b: &Batch,
        beta: f64,
        mode: &mut ForwardMode,
    ) -> LossNodes {
        let enc = self.encoder_graph(t, v, b, mode);
        let z = match mode.rng.as_deref_mut() {
            Some(rng) => {
                let (rows, cols) = t.value(enc.mu).shape();
                let noise = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
                t.reparam(enc.mu, enc.log_var, Mat::from_vec(rows, cols, noise))
            }
            None => enc.mu,
        };
        let dec = self.decoder_teacher_graph(t, v, b, z, &b.conditions(), false, mode);
        let activity = t.softmax_xent(dec.act_logits, &dec.act_targets);
        let interarrival = t.sq_err(dec.time_hat, &dec.time_targets);
        let cat_terms: Vec<(Var, f64)> = dec
            .cat_logits
            .iter()
            .enumerate()
            .map(|(j, logits)| {
                let targets: Vec<usize> = b.traces.iter().map(|tr| tr.cat_attr_ids[j]).collect();
                (t.softmax_xent(*logits, &targets), 1.0)
            })
            .collect();
        let cat_attrs = t.weighted_sum(&cat_terms);
        let num_attrs = match dec.num_hat {
            Some(p) => {
                let targets: Vec<f64> = b.traces.iter().flat_map(|tr| tr.num_attrs.iter().copied()).collect();
                t.sq_err(p, &targets)
            }
            None => t.weighted_sum(&[]),
        };
        let kl = t.kl_diag(enc.mu, enc.log_var);
        let inv = 1.0 / b.len() as f64;
        let total = t.weighted_sum(&[
            (activity, inv),
            (interarrival, inv),
            (cat_attrs, inv),
            (num_attrs, inv),
            (kl, beta * inv),
        ]);
        LossNodes {
            activity,
            interarrival,
            cat_attrs,
            num_attrs,
            kl,
            total,
        }
    }

    /// Per-trace outputs of a teacher-forced graph, in the caller's order.
    pub(crate) fn collect_teacher(&self, t: &Tape, dec: &DecoderNodes, b: &Batch) -> Vec<DecoderOutput> {
        let logits = t.value(dec.act_logits);
        let times = t.value(dec.time_hat);
        let mut out: Vec<Option<DecoderOutput>> = vec![None; b.len()];
        for r in 0..b.len() {
            let activity_logits = (0..=b.n(r)).map(|s| logits.row(dec.act_offsets[s] + r).to_vec()).collect();
            let interarrivals_hat = dec
                .time_offsets
                .iter()
                .zip(&dec.time_counts)
                .filter(|(_, &k)| k > r)
                .map(|(off, _)| times.data[off + r])
                .collect();
            out[b.order[r]] = Some(DecoderOutput {
                activity_logits,
                interarrivals_hat,
                cat_attr_logits: dec.cat_logits.iter().map(|c| t.value(*c).row(r).to_vec()).collect(),
                num_attrs_hat: dec.num_hat.map_or(Vec::new(), |p| t.value(p).row(r).to_vec()),
                truncated: false,
            });
        }
        out.into_iter().map(Option::unwrap).collect()
    }

    /// Autoregressive decoding: the argmax activity and the (non-negative)
    /// predicted interarrival of each step are fed to the next step.
    pub(crate) fn free_running(&self, zs: &[Vec<f64>], conditions: &[bool], max_len: usize) -> Vec<DecoderOutput> {
        let l = &self.layout;
        let h = self.config.lstm_hidden;
        let eot = self.config.eot();
        let rows = zs.len();
        let mut t = Tape::new();
        let v = self.params.bind(&mut t);
        let z = t.leaf(Mat::from_vec(rows, self.config.latent_dim, zs.concat()));
        let conds: Vec<f64> = conditions.iter().map(|&c| f64::from(u8::from(c))).collect();
        let mut mode = ForwardMode::deterministic();
        let zu = self.upsample(&mut t, &v, z, &conds, &mut mode);
        let pre_act = t.matmul(zu, v[l.act_wz]);
        let pre_time = t.matmul(zu, v[l.time_wz]);
        let heads = self.attribute_heads(&mut t, &v, zu);

        let mut out: Vec<DecoderOutput> = (0..rows)
            .map(|r| DecoderOutput {
                activity_logits: Vec::new(),
                interarrivals_hat: Vec::new(),
                cat_attr_logits: heads.cat_logits.iter().map(|c| t.value(*c).row(r).to_vec()).collect(),
                num_attrs_hat: heads.num_hat.map_or(Vec::new(), |p| t.value(p).row(r).to_vec()),
                truncated: true,
            })
            .collect();
        let mut prev = vec![eot; rows];
        let mut prev_gap = vec![0.0; rows];
        let (mut act_state, mut time_state) = (None, None);
        for _ in 0..max_len {
            if out.iter().all(|o| !o.truncated) {
                break;
            }
            let emb = t.gather(v[l.dec_emb], &prev);
            let inputs = [
                LstmInput::Direct(pre_act),
                LstmInput::Proj {
                    x: emb,
                    w: v[l.act_wx],
                },
            ];
            let st = t.lstm_step(rows, &inputs, act_state, v[l.act_wh], v[l.act_b]);
            act_state = Some(st);
            let hs = t.slice_cols(st, 0, h);
            let logits = t.linear(hs, v[l.act_out_w], v[l.act_out_b]);
            let cur: Vec<usize> = (0..rows).map(|r| argmax(t.value(logits).row(r))).collect();

            let gaps = t.leaf(Mat::column(prev_gap.clone()));
            let cur_emb = t.gather(v[l.dec_emb], &cur);
            let inputs = [
                LstmInput::Direct(pre_time),
                LstmInput::Proj {
                    x: gaps,
                    w: v[l.time_wt],
                },
                LstmInput::Proj {
                    x: cur_emb,
                    w: v[l.time_wa],
                },
            ];
            let st = t.lstm_step(rows, &inputs, time_state, v[l.time_wh], v[l.time_b]);
            time_state = Some(st);
            let ht = t.slice_cols(st, 0, h);
            let gap_hat = t.linear(ht, v[l.time_out_w], v[l.time_out_b]);

            for (r, o) in out.iter_mut().enumerate() {
                if !o.truncated {
                    continue;
                }
                o.activity_logits.push(t.value(logits).row(r).to_vec());
                o.interarrivals_hat.push(t.value(gap_hat).data[r]);
                if cur[r] == eot {
                    o.truncated = false;
                }
            }
            prev = cur;
            prev_gap = t.value(gap_hat).data.iter().map(|g| g.max(0.0)).collect();
        }
        out
    }
}
