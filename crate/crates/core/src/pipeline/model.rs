//! Wiring of encoder, memory, routing, and heads into one forward pass.

use crate::encoder::{self, Encoder, EncoderConfig, Labels};
use crate::error::{Error, Result};
use crate::heads::{joint_loss, BinaryHeads, LossVars, MulticlassHead, PredictionBundle};
use crate::memory::{
    self, GateParameters, MemoryModulationConfig, MemoryState, MlpMemoryParameters,
};
use crate::num::store::ParameterStore;
use crate::num::tape::{Tape, Var};
use crate::num::Rng;
use crate::pipeline::config::TrainConfig;
use crate::routing::{
    argmax_route, gumbel_softmax_route, relaxed_mixture, GatingParameters, RoutingDecision,
    SpecialistPool, SpecialistSizes,
};
use crate::{Mode, Real};

/// Memory cell selected by the ablation flags.
enum MemoryKind {
    Gated(GateParameters),
    Mlp(MlpMemoryParameters),
    None,
}

/// The assembled model: parameter handles plus the configuration.
pub struct Model {
    pub cfg: TrainConfig,
    memory: MemoryKind,
    gating: GatingParameters,
    pool: SpecialistPool,
    bin_heads: BinaryHeads,
    multi_head: MulticlassHead,
    mod_cfg: MemoryModulationConfig,
}

/// Output of one user's forward pass.
pub struct UserForward {
    /// Present when labels were supplied.
    pub loss: Option<LossVars>,
    pub bundle: PredictionBundle,
    pub decision: RoutingDecision,
    /// Indices of the specialists that actually ran.
    pub evaluated_specialists: Vec<usize>,
}

impl Model {
    fn modulation_config(cfg: &TrainConfig) -> MemoryModulationConfig {
        MemoryModulationConfig {
            alpha: cfg.alpha,
            beta: cfg.beta,
            dropout: cfg.dropout,
            positional_coeff: cfg.positional_coeff,
            projection_width: cfg.projection_width,
        }
    }

    fn routed_width(cfg: &TrainConfig) -> usize {
        cfg.projection_width.unwrap_or(cfg.d)
    }

    fn sizes(cfg: &TrainConfig) -> SpecialistSizes {
        SpecialistSizes {
            mlp_hidden: cfg.mlp_hidden,
            recurrent_hidden: cfg.recurrent_hidden,
            conv_channels: cfg.conv_channels,
        }
    }

    /// Register every parameter the configuration calls for. The insertion
    /// order is fixed so identical (config, seed) pairs draw identical
    /// initial values.
    pub fn init(
        cfg: &TrainConfig,
        store: &mut ParameterStore<Real>,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        encoder::init_attention_query(store, cfg.d, rng)?;
        let memory = if cfg.no_memory {
            MemoryKind::None
        } else if cfg.mlp_memory {
            MemoryKind::Mlp(MlpMemoryParameters::init(store, cfg.d, rng)?)
        } else {
            MemoryKind::Gated(GateParameters::init(store, cfg.d, rng)?)
        };
        if let Some(width) = cfg.projection_width {
            memory::init_projection(store, cfg.d, width, rng)?;
        }
        let routed = Self::routed_width(cfg);
        let gating = GatingParameters::init(store, cfg.k, routed, cfg.lambda, rng)?;
        let pool = SpecialistPool::init(store, cfg.k, routed, cfg.d, cfg.h, Self::sizes(cfg), rng)?;
        let bin_heads = BinaryHeads::init(store, cfg.h, rng)?;
        let multi_head = MulticlassHead::init(store, cfg.h, rng)?;
        Ok(Model {
            cfg: cfg.clone(),
            memory,
            gating,
            pool,
            bin_heads,
            multi_head,
            mod_cfg: Self::modulation_config(cfg),
        })
    }

    /// Attach to a store restored from a checkpoint, verifying that every
    /// expected parameter is present.
    pub fn attach(cfg: &TrainConfig, store: &ParameterStore<Real>) -> Result<Self> {
        cfg.validate()?;
        if !store.contains(encoder::ATTN_QUERY) {
            return Err(Error::Checkpoint {
                field: format!("params.{}", encoder::ATTN_QUERY),
                msg: "missing".to_string(),
            });
        }
        let memory = if cfg.no_memory {
            MemoryKind::None
        } else if cfg.mlp_memory {
            MemoryKind::Mlp(MlpMemoryParameters::attach(store, cfg.d)?)
        } else {
            MemoryKind::Gated(GateParameters::attach(store, cfg.d)?)
        };
        let routed = Self::routed_width(cfg);
        let gating = GatingParameters::attach(store, cfg.k, routed, cfg.lambda)?;
        let pool = SpecialistPool::attach(cfg.k, routed, cfg.d, cfg.h, Self::sizes(cfg));
        let bin_heads = BinaryHeads::attach(store, cfg.h)?;
        let multi_head = MulticlassHead::attach(store, cfg.h)?;
        Ok(Model {
            cfg: cfg.clone(),
            memory,
            gating,
            pool,
            bin_heads,
            multi_head,
            mod_cfg: Self::modulation_config(cfg),
        })
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            provider: self.cfg.provider,
            d: self.cfg.d,
            pooling: self.cfg.effective_pooling(),
            max_tokens_per_user: self.cfg.max_tokens_per_user,
        }
    }

    pub fn encoder(&self) -> Encoder<Real> {
        Encoder::new(self.encoder_config())
    }

    /// Run the gated (or ablated) memory recurrence over the post horizon,
    /// producing the routed memory vector.
    #[allow(clippy::too_many_arguments)]
    fn memory_pass(
        &self,
        tape: &mut Tape<Real>,
        store: &ParameterStore<Real>,
        z: Var,
        horizon: usize,
        pe: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let m = match &self.memory {
            MemoryKind::None => z,
            MemoryKind::Gated(gp) => {
                let mut state = MemoryState::zero(tape, self.cfg.d);
                for _ in 0..horizon {
                    let (i, f, g) = gp.gate_forward(tape, store, z, state.m)?;
                    let (i2, f2) = memory::modulate_gates(tape, i, f, pe, &self.mod_cfg)?;
                    state = memory::memory_update(
                        tape,
                        &state,
                        i2,
                        f2,
                        g,
                        &self.mod_cfg,
                        mode,
                        horizon,
                        rng,
                    )?;
                }
                state.m
            }
            MemoryKind::Mlp(mp) => {
                let mut state = MemoryState::zero(tape, self.cfg.d);
                for _ in 0..horizon {
                    let core = mp.cell_forward(tape, store, z, state.m)?;
                    let m = memory::finish_update(
                        tape,
                        core,
                        &self.mod_cfg,
                        mode,
                        state.step,
                        horizon,
                        rng,
                    );
                    state = MemoryState {
                        m,
                        step: state.step + 1,
                    };
                }
                state.m
            }
        };
        memory::project_memory(tape, store, m, self.cfg.projection_width)
    }

    /// Full forward pass for one user. `pe` is the delayed prediction-error
    /// scalar from the previous training batch (zero at the start and in
    /// evaluation). `epoch` selects the routing temperature.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_user(
        &self,
        tape: &mut Tape<Real>,
        store: &ParameterStore<Real>,
        h_mat: &encoder::EmbeddingMatrix<Real>,
        labels: Option<Labels>,
        mode: Mode,
        pe: f64,
        epoch: usize,
        rng: &mut Rng,
    ) -> Result<UserForward> {
        let pe_eff = if self.cfg.no_pe { 0.0 } else { pe };
        let h = &h_mat.rows;
        let z = encoder::pool(tape, store, h_mat, self.cfg.effective_pooling())?;
        let m = self.memory_pass(tape, store, z, h.rows(), pe_eff, mode, rng)?;

        let scores = self.gating.suitability_scores(tape, store, m)?;
        let modulated = crate::routing::modulate_scores(tape, scores, pe_eff, self.cfg.lambda)?;
        let score_vals: Vec<f64> = tape.value(scores).values().to_vec();
        let mod_vals: Vec<f64> = tape.value(modulated).values().to_vec();
        let k = self.cfg.k;

        let (routed, relaxed, winner, evaluated): (Var, Vec<f64>, usize, Vec<usize>) =
            if self.cfg.random_routing {
                let winner = rng.below(k);
                let y = self.pool.specialist_forward(tape, store, winner, m, h)?;
                let mut one_hot = vec![0.0; k];
                one_hot[winner] = 1.0;
                (y, one_hot, winner, vec![winner])
            } else if self.cfg.soft_routing {
                let p = tape.softmax(modulated)?;
                let outputs: Result<Vec<Var>> = (0..k)
                    .map(|i| self.pool.specialist_forward(tape, store, i, m, h))
                    .collect();
                let outputs = outputs?;
                let y = relaxed_mixture(tape, p, &outputs)?;
                let relaxed = tape.value(p).values().to_vec();
                let winner = argmax_route(&mod_vals)?;
                (y, relaxed, winner, (0..k).collect())
            } else if mode == Mode::Train {
                let tau = self.cfg.schedule().temperature_at(epoch);
                let p = gumbel_softmax_route(tape, modulated, tau, rng)?;
                let outputs: Result<Vec<Var>> = (0..k)
                    .map(|i| self.pool.specialist_forward(tape, store, i, m, h))
                    .collect();
                let outputs = outputs?;
                let y = relaxed_mixture(tape, p, &outputs)?;
                let relaxed = tape.value(p).values().to_vec();
                let winner = argmax_route(&relaxed)?;
                (y, relaxed, winner, (0..k).collect())
            } else {
                // Strict argmax at inference: exactly one specialist runs.
                let winner = argmax_route(&mod_vals)?;
                let y = self.pool.specialist_forward(tape, store, winner, m, h)?;
                let mut one_hot = vec![0.0; k];
                one_hot[winner] = 1.0;
                (y, one_hot, winner, vec![winner])
            };

        let (bin_probs, bin_preds) = self.bin_heads.forward(tape, store, routed)?;
        let (type_probs, type_pred) = self.multi_head.forward(tape, store, routed)?;

        let loss = match labels {
            Some(l) => Some(joint_loss(tape, bin_probs, type_probs, &l, l.type_index())?),
            None => None,
        };

        let bundle = PredictionBundle {
            binary_probs: std::array::from_fn(|d| tape.value(bin_probs).values()[d]),
            binary_preds: bin_preds,
            type_probs: tape.value(type_probs).values().to_vec(),
            type_pred,
            loss_total: loss
                .as_ref()
                .map(|l| tape.value(l.total).as_scalar().unwrap())
                .unwrap_or(0.0),
            loss_binary: loss
                .as_ref()
                .map(|l| std::array::from_fn(|d| tape.value(l.binary[d]).as_scalar().unwrap()))
                .unwrap_or([0.0; 4]),
            loss_multiclass: loss
                .as_ref()
                .map(|l| tape.value(l.multiclass).as_scalar().unwrap())
                .unwrap_or(0.0),
            pe: 0.0,
        };

        Ok(UserForward {
            loss,
            bundle,
            decision: RoutingDecision {
                scores: score_vals,
                modulated: mod_vals,
                relaxed,
                winner,
            },
            evaluated_specialists: evaluated,
        })
    }
}

/// Encode every document once up front; embeddings depend only on the text
/// and the encoder config, never on trainable state.
pub fn encode_all(
    encoder: &Encoder<Real>,
    docs: &[crate::encoder::UserDocument],
) -> Result<std::collections::BTreeMap<String, encoder::EmbeddingMatrix<Real>>> {
    let mut out = std::collections::BTreeMap::new();
    for doc in docs {
        out.insert(doc.user_id.clone(), encoder.encode_user(doc)?);
    }
    Ok(out)
}
