//! Two-phase adversarial training, checkpointing and conversion.
//!
//! Each step draws one batch and performs one discriminator/classifier
//! update followed by one update of the converter side (generator, style
//! encoders, mapping networks). Randomness for step `t` comes from a
//! generator seeded by `(seed, t)`, so resuming from a checkpoint needs no
//! stored random state and reproduces the uninterrupted run exactly.

mod config;
pub mod pretrain;
mod state;

pub use config::{Ablation, LearningRates, PretrainConfig, TrainingConfig};
pub use state::{Converter, StyleSource, TrainState};

use crate::autodiff::{Graph, Var};
use crate::catalog::{fpm_mask, PairMask};
use crate::corpus::synth::rng_for;
use crate::corpus::{make_batch, Batch, Corpus, Split, TargetPolicy};
use crate::error::{Error, Result};
use crate::losses::{self, Side, Term};
use crate::metrics::{MetricsWriter, Record};
use crate::networks::{LatentCode, NetId};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.ckpt";

/// Random state for step `step`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    rng_for(seed, &[0x5354_4550, step])
}

/// Whether step `step` draws styles from the mapping networks (even steps)
/// or from reference utterances (odd steps).
pub fn uses_latents(step: u64) -> bool {
    step % 2 == 0
}

pub fn draw_batch(state: &TrainState, corpus: &Corpus, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let policy = if state.config.vdp {
        TargetPolicy::Virtual
    } else {
        TargetPolicy::SeenOnly
    };
    make_batch(corpus, state.config.batch_size, policy, state.config.crop_frames, rng)
}

fn latent_batch(rng: &mut ChaCha8Rng, b: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(b * dim);
    for _ in 0..b {
        data.extend(LatentCode::sample(dim, rng).vector);
    }
    Tensor::new(vec![b, dim], data)
}

/// Converter-side graph handles shared by both halves of a step.
struct Styles {
    sp: Var,
    em: Var,
    sp2: Var,
    em2: Var,
}

/// One training step on `batch`; `rng` supplies latent codes. Returns the
/// step's metrics. A non-finite discriminator loss aborts before any
/// update; a non-finite converter loss aborts after the discriminator update.
pub fn train_step(state: &mut TrainState, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Vec<Record>> {
    let step = state.step;
    let epoch = state.epoch();
    let cfg = state.config.clone();
    let schedule = cfg.schedule();
    let cls_on = epoch >= cfg.classifier_start_epoch;
    let latents = uses_latents(step);
    let b = batch.len();
    let catalog = state.catalog.clone();
    let m = &state.models;

    let src_heads: Vec<usize> = batch.source_pairs.iter().map(|p| catalog.flat_index(*p)).collect();
    let trg_heads: Vec<usize> = batch.target_pairs.iter().map(|p| catalog.flat_index(*p)).collect();
    let src_sp: Vec<usize> = batch.source_pairs.iter().map(|p| p.speaker).collect();
    let src_em: Vec<usize> = batch.source_pairs.iter().map(|p| p.emotion).collect();
    let trg_sp: Vec<usize> = batch.target_pairs.iter().map(|p| p.speaker).collect();
    let trg_em: Vec<usize> = batch.target_pairs.iter().map(|p| p.emotion).collect();
    let mask = if cfg.fpm {
        fpm_mask(&catalog, &batch.target_pairs)?
    } else {
        PairMask::all_kept(b)
    };
    let g_mask = if cfg.fpm && cfg.generator_fpm {
        mask.clone()
    } else {
        PairMask::all_kept(b)
    };

    // Converter-side forward pass up to the fake batch.
    let mut g = Graph::new();
    let p_gen = m.generator.params.bind(&mut g, true);
    let p_ssp = m.speaker_encoder.params.bind(&mut g, latents);
    let p_sem = m.emotion_encoder.params.bind(&mut g, latents);
    let p_msp = m.speaker_mapper.params.bind(&mut g, latents);
    let p_mem = m.emotion_mapper.params.bind(&mut g, latents);
    let p_pitch = m.pitch.params.bind(&mut g, false);
    let p_content = m.content.params.bind(&mut g, false);

    let x = g.constant(batch.source.clone());
    let styles = if latents {
        let dim = cfg.arch.latent_dim;
        let z = [
            latent_batch(rng, b, dim),
            latent_batch(rng, b, dim),
            latent_batch(rng, b, dim),
            latent_batch(rng, b, dim),
        ];
        let [z_sp, z_em, z_sp2, z_em2] = z.map(|t| g.constant(t));
        Styles {
            sp: m.speaker_mapper.forward(&mut g, &p_msp, z_sp, &trg_sp),
            em: m.emotion_mapper.forward(&mut g, &p_mem, z_em, &trg_em),
            sp2: m.speaker_mapper.forward(&mut g, &p_msp, z_sp2, &trg_sp),
            em2: m.emotion_mapper.forward(&mut g, &p_mem, z_em2, &trg_em),
        }
    } else {
        let refs = [&batch.ref_sp, &batch.ref_em, &batch.ref_sp2, &batch.ref_em2].map(|t| g.constant(t.clone()));
        Styles {
            sp: m.speaker_encoder.forward(&mut g, &p_ssp, refs[0], &trg_sp),
            em: m.emotion_encoder.forward(&mut g, &p_sem, refs[1], &trg_em),
            sp2: m.speaker_encoder.forward(&mut g, &p_ssp, refs[2], &trg_sp),
            em2: m.emotion_encoder.forward(&mut g, &p_sem, refs[3], &trg_em),
        }
    };
    let (f0_x, contour_x) = m.pitch.forward(&mut g, &p_pitch, x);
    let y = m.generator.forward(&mut g, &p_gen, x, f0_x, styles.sp, styles.em);
    let fake_value = g.value(y).clone();

    // Discriminator and classifier update on the detached fake batch.
    let mut records = Vec::with_capacity(16);
    let mut gd = Graph::new();
    let p_d = m.discriminator.params.bind(&mut gd, true);
    let p_csp = m.speaker_classifier.params.bind(&mut gd, cls_on);
    let p_cem = m.emotion_classifier.params.bind(&mut gd, cls_on);
    let real = gd.constant(batch.source.clone());
    let fake = gd.constant(fake_value);
    let d_adv = losses::adversarial_loss(
        &mut gd,
        &m.discriminator,
        &p_d,
        real,
        fake,
        &src_heads,
        &trg_heads,
        &mask,
        Side::Discriminator,
    )?;
    let mut d_terms = vec![(Term::Adv, d_adv)];
    if cls_on {
        let c = losses::source_classifier_loss(
            &mut gd,
            &m.speaker_classifier,
            &p_csp,
            &m.emotion_classifier,
            &p_cem,
            fake,
            &src_sp,
            &src_em,
        )?;
        d_terms.push((Term::AdvCls, c));
    }
    let d_total = losses::weighted_sum(&mut gd, &schedule, epoch as f64, &d_terms, Side::Discriminator);
    for &(t, v) in &d_terms {
        records.push(Record::new(step, format!("d/{}", t.name()), gd.value(v).item()));
    }
    let d_total_value = gd.value(d_total).item();
    records.push(Record::new(step, "d/total", d_total_value));
    check_finite(&records, step)?;
    let d_grads = gd.backward(d_total);
    let gd_d = m.discriminator.params.collect_grads(&d_grads, &p_d);
    let gd_c = cls_on.then(|| {
        (
            m.speaker_classifier.params.collect_grads(&d_grads, &p_csp),
            m.emotion_classifier.params.collect_grads(&d_grads, &p_cem),
        )
    });

    // Commit the discriminator side, then build the converter-side
    // objective against the updated networks.
    state.apply(NetId::Discriminator, &gd_d, cfg.lr.discriminator);
    if let Some((cs, ce)) = gd_c {
        state.apply(NetId::SpeakerClassifier, &cs, cfg.lr.classifier);
        state.apply(NetId::EmotionClassifier, &ce, cfg.lr.classifier);
    }
    let m = &state.models;
    let p_d2 = m.discriminator.params.bind(&mut g, false);
    let mut g_terms: Vec<(Term, Var)> = Vec::with_capacity(8);
    let adv = losses::adversarial_loss(
        &mut g,
        &m.discriminator,
        &p_d2,
        x,
        y,
        &src_heads,
        &trg_heads,
        &g_mask,
        Side::Generator,
    )?;
    g_terms.push((Term::Adv, adv));
    if cls_on {
        let ps = m.speaker_classifier.params.bind(&mut g, false);
        let pe = m.emotion_classifier.params.bind(&mut g, false);
        let l = losses::source_classifier_loss(
            &mut g,
            &m.speaker_classifier,
            &ps,
            &m.emotion_classifier,
            &pe,
            y,
            &trg_sp,
            &trg_em,
        )?;
        g_terms.push((Term::AdvCls, l));
    }
    let rec_sp = m.speaker_encoder.forward(&mut g, &p_ssp, y, &trg_sp);
    let rec_em = m.emotion_encoder.forward(&mut g, &p_sem, y, &trg_em);
    let sty = losses::style_reconstruction_loss(&mut g, styles.sp, rec_sp, styles.em, rec_em)?;
    g_terms.push((Term::Sty, sty));
    let (sp0, em0) = (styles.sp, styles.em);
    let ds = losses::style_diversification_loss(
        &mut g,
        |g, s, e| {
            if s == sp0 && e == em0 {
                y
            } else {
                m.generator.forward(g, &p_gen, x, f0_x, s, e)
            }
        },
        (styles.sp, styles.sp2),
        (styles.em, styles.em2),
    )?;
    g_terms.push((Term::Ds, ds));
    let (f0_y, contour_y) = m.pitch.forward(&mut g, &p_pitch, y);
    let f0 = losses::f0_consistency_loss(&mut g, contour_x, contour_y)?;
    g_terms.push((Term::F0, f0));
    let norm = losses::norm_consistency_loss(&mut g, x, y)?;
    g_terms.push((Term::Norm, norm));
    let asr = losses::speech_consistency_loss(&mut g, &m.content, &p_content, x, y)?;
    g_terms.push((Term::Asr, asr));
    let src_style_sp = m.speaker_encoder.forward(&mut g, &p_ssp, x, &src_sp);
    let src_style_em = m.emotion_encoder.forward(&mut g, &p_sem, x, &src_em);
    let back = m.generator.forward(&mut g, &p_gen, y, f0_y, src_style_sp, src_style_em);
    let cyc = losses::cycle_consistency_loss(&mut g, x, back)?;
    g_terms.push((Term::Cyc, cyc));
    let g_total = losses::weighted_sum(&mut g, &schedule, epoch as f64, &g_terms, Side::Generator);

    for &(t, v) in &g_terms {
        records.push(Record::new(step, format!("g/{}", t.name()), g.value(v).item()));
    }
    records.push(Record::new(step, "g/total", g.value(g_total).item()));
    records.push(Record::new(step, "w/f0", schedule.weight(Term::F0, epoch as f64)));
    records.push(Record::new(step, "w/norm", schedule.weight(Term::Norm, epoch as f64)));
    records.push(Record::new(step, "epoch", epoch as f64));
    check_finite(&records, step)?;

    let grads = g.backward(g_total);
    let gen_grads = m.generator.params.collect_grads(&grads, &p_gen);
    let enc_grads = latents.then(|| {
        [
            (
                NetId::SpeakerEncoder,
                m.speaker_encoder.params.collect_grads(&grads, &p_ssp),
            ),
            (
                NetId::EmotionEncoder,
                m.emotion_encoder.params.collect_grads(&grads, &p_sem),
            ),
            (
                NetId::SpeakerMapper,
                m.speaker_mapper.params.collect_grads(&grads, &p_msp),
            ),
            (
                NetId::EmotionMapper,
                m.emotion_mapper.params.collect_grads(&grads, &p_mem),
            ),
        ]
    });

    state.apply(NetId::Generator, &gen_grads, cfg.lr.generator);
    if let Some(groups) = enc_grads {
        for (id, gr) in groups {
            let lr = match id {
                NetId::SpeakerMapper | NetId::EmotionMapper => cfg.lr.mapping,
                _ => cfg.lr.style_encoder,
            };
            state.apply(id, &gr, lr);
        }
    }
    state.step += 1;
    Ok(records)
}

fn check_finite(records: &[Record], step: u64) -> Result<()> {
    match records.iter().find(|r| !r.value.is_finite()) {
        Some(r) => Err(Error::NonFinite {
            name: r.name.clone(),
            step,
        }),
        None => Ok(()),
    }
}

/// Draw the batch for the current step and train on it.
pub fn advance(state: &mut TrainState, corpus: &Corpus) -> Result<Vec<Record>> {
    let mut rng = step_rng(state.config.seed, state.step);
    let batch = draw_batch(state, corpus, &mut rng)?;
    train_step(state, &batch, &mut rng)
}

/// Options controlling a training run beyond its configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop (after checkpointing) once this many steps are done.
    pub stop_at: Option<u64>,
    /// Print one progress line every this many steps.
    pub log_every: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub last_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub pitch_mae: f64,
}

/// Pretrain the frozen networks when needed, then train to the configured
/// number of epochs, writing metrics and checkpoints under `run_dir`.
pub fn run_training(
    config: &TrainingConfig,
    corpus: &Corpus,
    run_dir: &Path,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    let state = TrainState::new(config.clone(), corpus)?;
    std::fs::create_dir_all(run_dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(run_dir, e))?;
    let writer = MetricsWriter::create(&run_dir.join(METRICS_FILE))?;
    continue_training(state, corpus, run_dir, writer, opts)
}

/// Continue the run in `run_dir` from its last checkpoint.
pub fn resume_training(corpus: &Corpus, run_dir: &Path, opts: &RunOptions) -> Result<TrainOutcome> {
    let ckpt = run_dir.join(CHECKPOINT_DIR).join(LAST_CHECKPOINT);
    let state = TrainState::load(&ckpt)?;
    state.check_corpus(corpus)?;
    let writer = MetricsWriter::resume(&run_dir.join(METRICS_FILE), state.step)?;
    continue_training(state, corpus, run_dir, writer, opts)
}

fn continue_training(
    mut state: TrainState,
    corpus: &Corpus,
    run_dir: &Path,
    mut writer: MetricsWriter,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    let last = ckpt_dir.join(LAST_CHECKPOINT);
    if !state.pretrained {
        let records = state.pretrain(corpus)?;
        writer.log_step(&records)?;
        state.save(&last)?;
    }
    let pitch_mae = pretrain::pitch_mae(&state.models.pitch, corpus, Split::Test);
    let gate = state.config.pretrain.pitch_mae_gate;
    let total = state.total_steps();
    let stop = opts.stop_at.unwrap_or(total).min(total);
    while state.step < stop {
        let records = match advance(&mut state, corpus) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                let _ = state.save(&ckpt_dir.join(DIAGNOSTIC_CHECKPOINT));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writer.log_step(&records)?;
        if let Some(every) = opts.log_every {
            if state.step % every == 0 {
                let get = |n: &str| records.iter().find(|r| r.name == n).map_or(f64::NAN, |r| r.value);
                eprintln!(
                    "step {:>6}/{total} epoch {:>4} d/total {:>9.4} g/total {:>9.4}",
                    state.step,
                    state.epoch(),
                    get("d/total"),
                    get("g/total")
                );
            }
        }
        let every = state.config.checkpoint_every;
        if every > 0 && state.step % every == 0 {
            state.save(&ckpt_dir.join(format!("step-{:07}.ckpt", state.step)))?;
            state.save(&last)?;
        }
    }
    state.save(&last)?;
    if pitch_mae > gate {
        return Err(Error::Gate(format!(
            "pitch extractor contour MAE {pitch_mae:.4} exceeds {gate}"
        )));
    }
    Ok(TrainOutcome {
        state,
        last_checkpoint: last,
        metrics: run_dir.join(METRICS_FILE),
        pitch_mae,
    })
}
