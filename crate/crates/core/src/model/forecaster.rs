use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{Attention, BlockCtx, CrossBlock, DecoderBlock, DropRng, EncoderBlock, Init, Linear, Mlp};
use super::params::ParamStore;
use super::sample::PreparedSample;
use crate::autodiff::{GradCheckReport, Tape, Tensor, Var};
use crate::dct::DctPlan;
use crate::error::{Error, Result};
use crate::types::Point3;

#[derive(Clone, Debug)]
struct Layout {
    ped_embed: Mlp,
    veh_embed: Option<Mlp>,
    /// Agent-slot embedding table `(slots, D)`.
    ie: usize,
    encoder: Vec<EncoderBlock>,
    pvi: Vec<CrossBlock>,
    query_conv: Linear,
    decoder: Vec<DecoderBlock>,
    head: Mlp,
}

#[derive(Clone, Debug)]
pub struct ForecastModel {
    cfg: ModelConfig,
    params: ParamStore,
    layout: Layout,
    /// Sinusoidal temporal position table `(rows, D)`.
    tpe: Tensor,
    /// Orthonormal DCT basis `(N, N)`, row = frequency.
    out_basis: Tensor,
}

/// Output of one forward pass.
pub struct ForwardTrace {
    /// Predicted future displacements `(P, N, J * 3)` in meters.
    pub prediction: Var,
    /// Every attention weight tensor, named `<stage>.<block>.<kind>`.
    pub attention: Vec<(String, Var)>,
}

/// Sinusoidal table: even columns `sin(pos / 10000^(i/D))`, odd columns the cosine.
pub fn sinusoidal_table(rows: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for pos in 0..rows {
        for i in 0..dim {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_parts(vec![rows, dim], data)
}

/// Expands group-level bins to token level, `tokens` tokens per group.
fn expand_bins(group_bins: &[usize], nq: usize, nk: usize, tokens: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(nq * nk * tokens * tokens);
    for i in 0..nq {
        let row = &group_bins[i * nk..(i + 1) * nk];
        for _ in 0..tokens {
            for &b in row {
                out.extend(std::iter::repeat_n(b, tokens));
            }
        }
    }
    out
}

/// Absolute poses from a last observed pose and predicted displacements.
pub fn integrate(last_poses: &[Vec<Point3>], displacements: &Tensor) -> Vec<Vec<Vec<Point3>>> {
    let shape = displacements.shape();
    let (n, width) = (shape[1], shape[2]);
    let d = displacements.data();
    last_poses
        .iter()
        .enumerate()
        .map(|(p, last)| {
            let mut cur = last.clone();
            (0..n)
                .map(|t| {
                    let base = (p * n + t) * width;
                    for (j, pt) in cur.iter_mut().enumerate() {
                        for c in 0..3 {
                            pt[c] += d[base + 3 * j + c];
                        }
                    }
                    cur.clone()
                })
                .collect()
        })
        .collect()
}

impl ForecastModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let d = cfg.feature_dim;
        let bins = Some(cfg.trpe_bins);
        let layout = {
            let mut init = Init {
                store: &mut params,
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            let ped_embed = Mlp::new(&mut init, "ped_embed", cfg.body_partition.max_features(), d, d)?;
            let veh_embed = if cfg.use_vehicles {
                Some(Mlp::new(&mut init, "veh_embed", cfg.corner_grouping().features(), d, d)?)
            } else {
                None
            };
            let ie = init.normal("ie", &[cfg.agent_slots(), d], 0.5)?;
            let encoder = (0..cfg.encoder_blocks)
                .map(|i| {
                    Ok(EncoderBlock {
                        attn: Attention::new(&mut init, &format!("encoder.{i}.attn"), d, cfg.heads, bins)?,
                        ffn: Mlp::new(&mut init, &format!("encoder.{i}.ffn"), d, cfg.ffn_dim(), d)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pvi = if cfg.use_vehicles {
                (0..cfg.pvi_blocks)
                    .map(|i| {
                        Ok(CrossBlock {
                            attn: Attention::new(&mut init, &format!("pvi.{i}.attn"), d, cfg.heads, bins)?,
                            ffn: Mlp::new(&mut init, &format!("pvi.{i}.ffn"), d, cfg.ffn_dim(), d)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let query_conv = init.linear("query_conv", cfg.query_kernel * cfg.joint_count() * 3, d, true)?;
            let decoder = (0..cfg.decoder_blocks)
                .map(|i| {
                    Ok(DecoderBlock {
                        self_attn: Attention::new(&mut init, &format!("decoder.{i}.self"), d, cfg.heads, None)?,
                        cross_attn: Attention::new(&mut init, &format!("decoder.{i}.cross"), d, cfg.heads, None)?,
                        ffn: Mlp::new(&mut init, &format!("decoder.{i}.ffn"), d, cfg.ffn_dim(), d)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let head = Mlp::new(
                &mut init,
                "head",
                cfg.queries_per_pedestrian() * d,
                cfg.ffn_dim(),
                cfg.n_pred * cfg.joint_count() * 3,
            )?;
            Layout {
                ped_embed,
                veh_embed,
                ie,
                encoder,
                pvi,
                query_conv,
                decoder,
                head,
            }
        };
        // Zero output layer: the untrained model predicts a frozen pose.
        for t in [Some(layout.head.fc2.w), layout.head.fc2.b].into_iter().flatten() {
            params.get_mut(t).data_mut().fill(0.0);
        }
        let tpe = sinusoidal_table(cfg.dct_keep.max(cfg.queries_per_pedestrian()), d);
        let plan = DctPlan::new(cfg.n_pred, cfg.n_pred)?;
        let out_basis = Tensor::new(vec![cfg.n_pred, cfg.n_pred], plan.basis().to_vec())?;
        Ok(Self {
            cfg,
            params,
            layout,
            tpe,
            out_basis,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Index of the agent-slot embedding table in the parameter store.
    pub fn ie_param(&self) -> usize {
        self.layout.ie
    }

    /// Re-draws the zero-initialized output layer, e.g. for gradient checks.
    pub fn randomize_output_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in [Some(self.layout.head.fc2.w), self.layout.head.fc2.b].into_iter().flatten() {
            let p = self.params.get_mut(t);
            let fresh = Tensor::randn(p.shape(), 0.1, &mut rng);
            *p = fresh;
        }
    }

    fn position_rows(&self, tape: &mut Tape, groups: usize, per_group: usize) -> Var {
        let d = self.cfg.feature_dim;
        let mut data = Vec::with_capacity(groups * per_group * d);
        for _ in 0..groups {
            for l in 0..per_group {
                data.extend_from_slice(&self.tpe.data()[l * d..(l + 1) * d]);
            }
        }
        tape.constant(Tensor::from_parts(vec![groups * per_group, d], data))
    }

    fn slot_rows(&self, tape: &mut Tape, p: &[Var], slots: &[usize], per_slot: usize) -> Result<Var> {
        let rows: Vec<usize> = slots
            .iter()
            .flat_map(|&s| std::iter::repeat_n(s, per_slot))
            .collect();
        tape.gather_rows(p[self.layout.ie], &rows)
    }

    /// Pedestrian tokens after the embedding MLP, with IE and (optionally) TPE
    /// added; `(P * B_P * L, D)`.
    pub fn embed_pedestrians(&self, tape: &mut Tape, p: &[Var], s: &PreparedSample, with_tpe: bool) -> Result<Var> {
        let groups = self.cfg.body_partition.len();
        let l = self.cfg.dct_keep;
        let x = tape.constant(s.ped_features.clone());
        let mut h = self.layout.ped_embed.apply(tape, p, x)?;
        if with_tpe {
            let tpe = self.position_rows(tape, s.n_ped() * groups, l);
            h = tape.add(h, tpe)?;
        }
        let slots: Vec<usize> = (0..s.n_ped()).collect();
        let ie = self.slot_rows(tape, p, &slots, groups * l)?;
        tape.add(h, ie)
    }

    /// `H^p`: embedded pedestrian tokens through the encoder blocks.
    pub fn encode_pedestrians(
        &self,
        tape: &mut Tape,
        p: &[Var],
        s: &PreparedSample,
        rng: &mut DropRng,
        attention: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let mut x = self.embed_pedestrians(tape, p, s, true)?;
        let g = s.n_ped() * self.cfg.body_partition.len();
        let bins = expand_bins(&s.ped_group_bins, g, g, self.cfg.dct_keep);
        let mut ctx = BlockCtx {
            p,
            eps: self.cfg.layer_norm_eps,
            dropout: self.cfg.dropout,
            rng,
            weights: attention,
        };
        for (i, block) in self.layout.encoder.iter().enumerate() {
            x = block.apply(tape, &mut ctx, &format!("encoder.{i}"), x, &bins)?;
        }
        Ok(x)
    }

    /// `H^v`, or `None` for a pedestrian-only model or a sample without vehicles.
    pub fn encode_vehicles(&self, tape: &mut Tape, p: &[Var], s: &PreparedSample) -> Result<Option<Var>> {
        let (Some(embed), Some(features)) = (&self.layout.veh_embed, &s.veh_features) else {
            return Ok(None);
        };
        let groups = self.cfg.corner_grouping().len();
        let l = self.cfg.dct_keep;
        let x = tape.constant(features.clone());
        let h = embed.apply(tape, p, x)?;
        let tpe = self.position_rows(tape, s.n_veh() * groups, l);
        let h = tape.add(h, tpe)?;
        let slots: Vec<usize> = (0..s.n_veh()).map(|k| s.n_ped() + k).collect();
        let ie = self.slot_rows(tape, p, &slots, groups * l)?;
        Ok(Some(tape.add(h, ie)?))
    }

    /// Token-level TRPE bins between pedestrian and vehicle tokens.
    pub fn vehicle_token_bins(&self, s: &PreparedSample) -> Vec<usize> {
        let gq = s.n_ped() * self.cfg.body_partition.len();
        let gk = s.n_veh() * self.cfg.corner_grouping().len();
        expand_bins(&s.veh_group_bins, gq, gk, self.cfg.dct_keep)
    }

    /// `B_TRPE` of the first PVI block, `(heads, nq, nk)`.
    pub fn compute_trpe_bias(&self, tape: &mut Tape, p: &[Var], s: &PreparedSample) -> Result<Option<Var>> {
        let Some(block) = self.layout.pvi.first() else { return Ok(None) };
        let bins = self.vehicle_token_bins(s);
        let nq = s.n_ped() * self.cfg.body_partition.len() * self.cfg.dct_keep;
        let nk = bins.len() / nq;
        block.attn.bias(tape, p, &bins, nq, nk)
    }

    /// PVI-CA blocks: pedestrian tokens query vehicle tokens with the TRPE bias.
    pub fn pvi_cross_attention(
        &self,
        tape: &mut Tape,
        p: &[Var],
        hp: Var,
        hv: Var,
        bins: &[usize],
        rng: &mut DropRng,
        attention: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let mut ctx = BlockCtx {
            p,
            eps: self.cfg.layer_norm_eps,
            dropout: self.cfg.dropout,
            rng,
            weights: attention,
        };
        let mut x = hp;
        for (i, block) in self.layout.pvi.iter().enumerate() {
            x = block.apply(tape, &mut ctx, &format!("pvi.{i}"), x, hv, bins)?;
        }
        Ok(x)
    }

    /// Decoder plus output head; returns displacements `(P, N, J * 3)` in meters.
    pub fn decode_future(
        &self,
        tape: &mut Tape,
        p: &[Var],
        memory: Var,
        s: &PreparedSample,
        rng: &mut DropRng,
        attention: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let (n_ped, n_q, d) = (s.n_ped(), cfg.queries_per_pedestrian(), cfg.feature_dim);
        let mem_d = tape.shape(memory)[1];
        if mem_d != d {
            return Err(Error::shape("decode_future", format!("memory width {mem_d}, queries {d}")));
        }
        let windows = tape.constant(s.queries.clone());
        let mut q = self.layout.query_conv.apply(tape, p, windows)?;
        let tpe = self.position_rows(tape, n_ped, n_q);
        q = tape.add(q, tpe)?;
        let slots: Vec<usize> = (0..n_ped).collect();
        let ie = self.slot_rows(tape, p, &slots, n_q)?;
        q = tape.add(q, ie)?;
        let memory = tape.layer_norm(memory, cfg.layer_norm_eps);
        let mut ctx = BlockCtx {
            p,
            eps: cfg.layer_norm_eps,
            dropout: cfg.dropout,
            rng,
            weights: attention,
        };
        for (i, block) in self.layout.decoder.iter().enumerate() {
            q = block.apply(tape, &mut ctx, &format!("decoder.{i}"), q, memory)?;
        }
        let q = tape.layer_norm(q, cfg.layer_norm_eps);
        let q = tape.reshape(q, &[n_ped, n_q * d])?;
        let coeffs = self.layout.head.apply(tape, p, q)?;
        let width = cfg.joint_count() * 3;
        let coeffs = tape.reshape(coeffs, &[n_ped, cfg.n_pred, width])?;
        let coeffs = tape.transpose(coeffs, 1, 2)?;
        let basis = tape.constant(self.out_basis.clone());
        let disp = tape.matmul(coeffs, basis)?;
        let disp = tape.transpose(disp, 1, 2)?;
        Ok(tape.scale(disp, 1.0 / cfg.displacement_scale))
    }

    /// Full forward pass. Dropout is active only when `rng` is given.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], s: &PreparedSample, mut rng: DropRng) -> Result<ForwardTrace> {
        let mut attention = Vec::new();
        let hp = self.encode_pedestrians(tape, p, s, &mut rng, &mut attention)?;
        let memory = match self.encode_vehicles(tape, p, s)? {
            Some(hv) if !self.layout.pvi.is_empty() => {
                let bins = self.vehicle_token_bins(s);
                self.pvi_cross_attention(tape, p, hp, hv, &bins, &mut rng, &mut attention)?
            }
            _ => hp,
        };
        let prediction = self.decode_future(tape, p, memory, s, &mut rng, &mut attention)?;
        Ok(ForwardTrace {
            prediction,
            attention,
        })
    }

    /// Mean over pedestrians, frames and joints of the L2 error between
    /// predicted and true displacements.
    pub fn reconstruction_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
        if tape.shape(pred) != tape.shape(truth) {
            return Err(Error::shape(
                "reconstruction_loss",
                format!("{:?} vs {:?}", tape.shape(pred), tape.shape(truth)),
            ));
        }
        let n = tape.value(pred).len();
        if n % 3 != 0 {
            return Err(Error::shape("reconstruction_loss", "last axis is not xyz triples"));
        }
        let diff = tape.sub(pred, truth)?;
        let diff = tape.reshape(diff, &[n / 3, 3])?;
        let sq = tape.mul(diff, diff)?;
        let norm_sq = tape.sum_axis(sq, 1)?;
        let norm = tape.sqrt(norm_sq)?;
        Ok(tape.mean_all(norm))
    }

    fn loss_on(&self, store: &ParamStore, s: &PreparedSample, rng: DropRng) -> Result<(Tape, Vec<Var>, Var)> {
        let target = s
            .target
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{}: sample has no future to train on", s.key)))?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let trace = self.forward(&mut tape, &p, s, rng)?;
        let truth = tape.constant(target.clone());
        let loss = Self::reconstruction_loss(&mut tape, trace.prediction, truth)?;
        Ok((tape, p, loss))
    }

    /// Loss and per-parameter gradients (indexed like the store; `None` = zero).
    pub fn loss_and_gradients(&self, s: &PreparedSample, rng: DropRng) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let (tape, p, loss) = self.loss_on(&self.params, s, rng)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        Ok((value, p.iter().map(|v| grads.take(*v)).collect()))
    }

    /// Inference-mode loss.
    pub fn loss(&self, s: &PreparedSample) -> Result<f64> {
        let (tape, _, loss) = self.loss_on(&self.params, s, None)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Predicted displacements `(P, N, J * 3)` in inference mode.
    pub fn predict_displacements(&self, s: &PreparedSample) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let trace = self.forward(&mut tape, &p, s, None)?;
        Ok(tape.value(trace.prediction).clone())
    }

    /// Predicted absolute poses, `P x N x J`.
    pub fn predict(&self, s: &PreparedSample) -> Result<Vec<Vec<Vec<Point3>>>> {
        Ok(integrate(&s.last_poses, &self.predict_displacements(s)?))
    }

    /// Central-difference check of every parameter gradient of the mean
    /// loss over `samples`, with dropout off. Returns the report and the
    /// name of the parameter holding the worst element.
    pub fn gradient_check(&self, samples: &[PreparedSample], step: f64, tol: f64) -> Result<(GradCheckReport, String)> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset("gradient check needs a sample".into()));
        }
        let count = samples.len() as f64;
        let mean_loss = |store: &ParamStore| -> Result<f64> {
            let mut total = 0.0;
            for s in samples {
                let (tape, _, loss) = self.loss_on(store, s, None)?;
                total += tape.value(loss).data()[0];
            }
            Ok(total / count)
        };
        let mut analytic: Vec<Vec<f64>> = self.params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for s in samples {
            let (_, grads) = self.loss_and_gradients(s, None)?;
            for (acc, g) in analytic.iter_mut().zip(grads) {
                if let Some(g) = g {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v / count;
                    }
                }
            }
        }
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: (0, 0),
            checked: 0,
            tol,
        };
        let mut probe = self.params.clone();
        for (i, grad) in analytic.iter().enumerate() {
            for (e, &a) in grad.iter().enumerate() {
                let x0 = probe.get(i).data()[e];
                probe.get_mut(i).data_mut()[e] = x0 + step;
                let plus = mean_loss(&probe)?;
                probe.get_mut(i).data_mut()[e] = x0 - step;
                let minus = mean_loss(&probe)?;
                probe.get_mut(i).data_mut()[e] = x0;
                let err = crate::autodiff::relative_error(a, (plus - minus) / (2.0 * step));
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = (i, e);
                }
                report.checked += 1;
            }
        }
        let name = self.params.name(report.worst.0).to_string();
        Ok((report, name))
    }
}
