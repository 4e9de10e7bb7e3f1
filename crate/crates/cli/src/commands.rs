use crate::rundir::{self, RunLock};
use crate::{plot, ConvertArgs, EvaluateArgs, GenCorpusArgs, ModeArg, PresetArg, ReportArgs, TrainArgs};
use anyhow::{anyhow, bail, Context, Result};
use emovc::config::{Preset, RunConfig, RESOLVED_CONFIG};
use emovc::corpus::synth::mix_seed;
use emovc::corpus::{
    generate_corpus, read_features, split_corpus, write_features, Corpus, MelSpectrogram, Split, SynthParams, Utterance,
};
use emovc::eval::{self, ablation_csv, ablation_table, AblationRow, EvalReport, Probes};
use emovc::metrics::{read_metrics, series};
use emovc::trainer::{self, Converter, RunOptions, StyleSource, CHECKPOINT_DIR, LAST_CHECKPOINT, METRICS_FILE};
use emovc::{DomainCatalog, DomainPair};
use std::fs;
use std::path::{Path, PathBuf};

const CORPUS_FILES: [&str; 3] = ["features", "manifest.json", "catalog.toml"];
const TRAIN_OUTPUTS: [&str; 3] = [METRICS_FILE, CHECKPOINT_DIR, RESOLVED_CONFIG];

fn remove(dir: &Path, names: &[&str]) -> Result<()> {
    for name in names {
        let p = dir.join(name);
        let r = if p.is_dir() {
            fs::remove_dir_all(&p)
        } else {
            fs::remove_file(&p)
        };
        match r {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                return Err(e).with_context(|| format!("removing {}", p.display()));
            }
            _ => {}
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    if rundir::has_content(&a.out_dir)? && !a.force {
        bail!(
            "{} is not empty; pass --force to replace the corpus in it",
            a.out_dir.display()
        );
    }
    let catalog = DomainCatalog::with_neutral_only(a.speakers, a.emotions, &a.neutral_emotion, &a.neutral_only)?;
    let mut params = SynthParams::default();
    if let Some(n) = a.n_bins {
        params.n_bins = n;
    }
    let mut corpus = generate_corpus(&catalog, a.per_cell, &params, a.seed)?;
    split_corpus(&mut corpus, a.split, a.seed)?;
    remove(&a.out_dir, &CORPUS_FILES)?;
    corpus.save(&a.out_dir)?;
    println!(
        "wrote {} utterances ({} train, {} test) over {} seen pairs to {}",
        corpus.utterances().len(),
        corpus.indices(Split::Train).len(),
        corpus.indices(Split::Test).len(),
        catalog.num_seen(),
        a.out_dir.display()
    );
    println!("manifest sha256 {}", corpus.manifest_hash());
    Ok(())
}

fn parse_set(raw: &str) -> Result<(String, String)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{raw}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn train_overrides(a: &TrainArgs) -> Result<Vec<(String, String)>> {
    let mut out = a.set.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>>>()?;
    if let Some(p) = a.preset {
        let name = match p {
            PresetArg::Smoke => "smoke",
            PresetArg::Standard => "standard",
        };
        out.push(("preset".into(), name.into()));
    }
    if let Some(ab) = &a.ablation {
        out.push(("ablation".into(), ab.clone()));
    }
    let flags: [(&str, Option<String>); 8] = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("total_epochs", a.total_epochs.map(|v| v.to_string())),
        (
            "classifier_start_epoch",
            a.classifier_start_epoch.map(|v| v.to_string()),
        ),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("steps_per_epoch", a.steps_per_epoch.map(|v| v.to_string())),
        ("crop_frames", a.crop_frames.map(|v| v.to_string())),
        ("anneal_start_epoch", a.anneal_start_epoch.map(|v| format!("{v:?}"))),
        ("anneal_end_epoch", a.anneal_end_epoch.map(|v| format!("{v:?}"))),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            out.push((format!("train.{k}"), v));
        }
    }
    if let Some(v) = a.checkpoint_every {
        out.push(("train.checkpoint_every".into(), v.to_string()));
    }
    Ok(out)
}

fn corpus_of(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    match (flag, &cfg.corpus) {
        (Some(p), _) => absolute(p),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => {
            bail!("no corpus given: pass --corpus or set `corpus` in the configuration")
        }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let dir = rundir::resolve(&a.run);
    let opts = RunOptions {
        stop_at: a.stop_at,
        log_every: a.log_every,
    };
    if a.resume {
        let cfg_path = dir.join(RESOLVED_CONFIG);
        let cfg = RunConfig::load(&cfg_path)?;
        if train_overrides(&a)?.iter().any(|(k, _)| k.starts_with("train.")) {
            bail!(
                "--resume continues with {}; training flags cannot change it",
                cfg_path.display()
            );
        }
        let corpus = load_corpus(&corpus_of(&cfg, a.corpus.as_deref())?)?;
        let _lock = RunLock::acquire(&dir)?;
        let out = trainer::resume_training(&corpus, &dir, &opts)?;
        return summarize(&out);
    }

    let file = match &a.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let mut cfg = RunConfig::resolve(Preset::default(), file.as_deref(), &train_overrides(&a)?)?;
    cfg.corpus = Some(corpus_of(&cfg, a.corpus.as_deref())?);
    let problems = cfg.problems();
    if !problems.is_empty() {
        let list: String = problems.iter().map(|p| format!("\n  - {p}")).collect();
        bail!("invalid configuration:{list}");
    }
    let corpus = load_corpus(cfg.corpus.as_deref().expect("corpus set above"))?;

    let _lock = RunLock::acquire(&dir)?;
    let exists = TRAIN_OUTPUTS.iter().any(|n| dir.join(n).exists());
    if exists && !a.force {
        bail!(
            "{} already holds a run; pass --resume to continue it or --force to start over",
            dir.display()
        );
    }
    remove(&dir, &TRAIN_OUTPUTS)?;
    cfg.save(&dir.join(RESOLVED_CONFIG))?;
    let out = trainer::run_training(&cfg.train, &corpus, &dir, &opts)?;
    summarize(&out)
}

fn summarize(out: &trainer::TrainOutcome) -> Result<()> {
    println!(
        "step {}/{} (epoch {}); pitch contour MAE {:.4}; checkpoint {}",
        out.state.step,
        out.state.total_steps(),
        out.state.epoch(),
        out.pitch_mae,
        out.last_checkpoint.display()
    );
    Ok(())
}

fn last_checkpoint(run: &Path) -> PathBuf {
    run.join(CHECKPOINT_DIR).join(LAST_CHECKPOINT)
}

fn run_config(run: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(&run.join(RESOLVED_CONFIG))?)
}

/// Corpus from the flag, else from the run's configuration.
fn corpus_for(flag: Option<&Path>, run: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    let run = run.ok_or_else(|| anyhow!("pass --corpus"))?;
    run_config(run)?
        .corpus
        .ok_or_else(|| anyhow!("{} names no corpus; pass --corpus", run.join(RESOLVED_CONFIG).display()))
}

/// A reference utterance from `candidates`, chosen by `seed`.
fn pick<'c>(corpus: &'c Corpus, candidates: &[usize], seed: u64, what: &str) -> Result<&'c MelSpectrogram> {
    if candidates.is_empty() {
        bail!("the corpus has no train utterance for the {what} reference");
    }
    let i = candidates[(mix_seed(seed, &[candidates.len() as u64]) % candidates.len() as u64) as usize];
    Ok(corpus.utterances()[i].features())
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let run = a.run.as_deref().map(rundir::resolve);
    let ckpt = match (&a.checkpoint, &run) {
        (Some(c), _) => c.clone(),
        (None, Some(r)) => last_checkpoint(r),
        (None, None) => unreachable!("clap requires --run or --checkpoint"),
    };
    let conv = Converter::load(&ckpt)?;

    if a.sweep {
        let corpus = load_corpus(&corpus_for(a.corpus.as_deref(), run.as_deref())?)?;
        let out_dir = match (&a.out_dir, &run) {
            (Some(d), _) => d.clone(),
            (None, Some(r)) => r.join("converted"),
            (None, None) => bail!("pass --out-dir"),
        };
        let set = eval::conversion_sweep(&conv, &corpus, a.seed)?;
        eval::save_conversions(&out_dir, &set)?;
        println!("wrote {} conversions to {}", set.len(), out_dir.display());
        return Ok(());
    }

    let catalog = &conv.catalog;
    let target = DomainPair::new(
        catalog.speaker_index(a.speaker.as_deref().expect("clap requires --speaker"))?,
        catalog.emotion_index(a.emotion.as_deref().expect("clap requires --emotion"))?,
    );
    let input = a.input.as_deref().expect("clap requires --input");
    let out = a.out.as_deref().expect("clap requires --out");
    let x = read_features(input)?;
    let style = match a.mode {
        ModeArg::Mapped => StyleSource::mapped_from_seed(conv.models.arch.latent_dim, a.seed),
        ModeArg::Referenced => match (&a.ref_speaker, &a.ref_emotion) {
            (Some(s), Some(e)) => StyleSource::Referenced {
                speaker: read_features(s)?,
                emotion: read_features(e)?,
            },
            (None, None) => {
                let corpus = load_corpus(&corpus_for(a.corpus.as_deref(), run.as_deref())?)?;
                conv.check_catalog(corpus.catalog())?;
                let train = corpus.indices(Split::Train);
                let by = |f: &dyn Fn(&Utterance) -> bool| -> Vec<usize> {
                    train.iter().copied().filter(|&i| f(&corpus.utterances()[i])).collect()
                };
                let speaker = pick(&corpus, &by(&|u| u.speaker == target.speaker), a.seed, "speaker")?.clone();
                let emotion = pick(&corpus, &by(&|u| u.emotion == target.emotion), a.seed, "emotion")?.clone();
                StyleSource::Referenced { speaker, emotion }
            }
            _ => bail!("--ref-speaker and --ref-emotion go together"),
        },
    };
    let y = conv.convert(&x, target, &style)?;
    write_features(out, &y)?;
    println!(
        "converted {} to ({}, {}) into {}",
        input.display(),
        catalog.speakers()[target.speaker],
        catalog.emotions()[target.emotion],
        out.display()
    );
    Ok(())
}

/// Probes cached per seed under `out_dir`; retrained when the corpus or
/// probe settings differ.
fn probes_for(out_dir: &Path, corpus: &Corpus, cfg: &eval::ProbeConfig, seed: u64) -> Result<Probes> {
    let path = out_dir.join(format!("probes-{seed}.ckpt"));
    if path.exists() {
        let p = Probes::load(&path)?;
        if p.catalog_hash == corpus.catalog().hash_hex() && &p.config == cfg {
            return Ok(p);
        }
    }
    let p = Probes::train(corpus, cfg, seed)?;
    p.save(&path)?;
    Ok(p)
}

fn write_report(out_dir: &Path, r: &EvalReport) -> Result<()> {
    let table = r.to_table();
    print!("{table}");
    write(&out_dir.join(format!("{}.txt", r.label)), &table)?;
    write(&out_dir.join(format!("{}.csv", r.label)), &r.to_csv())
}

fn label_of(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let runs: Vec<PathBuf> = a.run.iter().map(|r| rundir::resolve(r)).collect();

    if let Some(conv_dir) = &a.converted {
        let corpus = load_corpus(
            a.corpus
                .as_deref()
                .ok_or_else(|| anyhow!("--converted needs --corpus"))?,
        )?;
        let out_dir = a.out_dir.clone().unwrap_or_else(|| conv_dir.join("eval"));
        fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let set = eval::load_conversions(conv_dir)?;
        for c in &set {
            corpus.catalog().check_pair(c.source)?;
            corpus.catalog().check_pair(c.target)?;
        }
        let seed = a.seed.unwrap_or_default();
        let probes = probes_for(&out_dir, &corpus, &eval::ProbeConfig::default(), seed)?;
        let report = eval::evaluate_set(&label_of(conv_dir), &probes, &corpus, &set)?;
        write_report(&out_dir, &report)?;
        return Ok(probes.check_gate()?);
    }

    let configs = runs.iter().map(|r| run_config(r)).collect::<Result<Vec<_>>>()?;
    let first = &configs[0];
    let corpus_dir = corpus_for(a.corpus.as_deref(), Some(&runs[0]))?;
    let corpus = load_corpus(&corpus_dir)?;
    let seed = a.seed.unwrap_or(first.eval.seed);
    let budget = |c: &RunConfig| (c.train.total_epochs, c.train.steps_per_epoch, c.train.batch_size);
    for (run, cfg) in runs.iter().zip(&configs).skip(1) {
        let theirs = match (&a.corpus, &cfg.corpus) {
            (Some(_), _) => corpus.manifest_hash(),
            (None, Some(p)) => load_corpus(p)?.manifest_hash(),
            (None, None) => bail!("{} names no corpus", run.display()),
        };
        if theirs != corpus.manifest_hash() {
            bail!(
                "mismatched corpora: {} and {} were trained on different data",
                runs[0].display(),
                run.display()
            );
        }
        if a.seed.is_none() && cfg.eval.seed != first.eval.seed {
            bail!(
                "{} and {} use different evaluation seeds; pass --seed",
                runs[0].display(),
                run.display()
            );
        }
        if budget(cfg) != budget(first) {
            bail!(
                "{} and {} have different training budgets",
                runs[0].display(),
                run.display()
            );
        }
    }

    let out_dir = a.out_dir.clone().unwrap_or_else(|| runs[0].join("eval"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let probes = probes_for(&out_dir, &corpus, &first.probe, seed)?;
    println!(
        "probes: emotion accuracy {:.4}, speaker accuracy {:.4} (gate {})",
        probes.emotion_accuracy, probes.speaker_accuracy, probes.config.accuracy_gate
    );
    let mut rows = Vec::new();
    for run in &runs {
        let conv = Converter::load(&last_checkpoint(run))?;
        let report = eval::evaluate(&label_of(run), &conv, &probes, &corpus, seed)?;
        write_report(&out_dir, &report)?;
        rows.push(AblationRow {
            name: report.label.clone(),
            report,
        });
    }
    if rows.len() > 1 {
        let table = ablation_table(&rows);
        print!("{table}");
        write(&out_dir.join("ablation.txt"), &table)?;
        write(&out_dir.join("ablation.csv"), &ablation_csv(&rows))?;
    }
    Ok(probes.check_gate()?)
}

pub fn report(a: ReportArgs) -> Result<()> {
    let run = rundir::resolve(&a.run);
    let records = read_metrics(&run.join(METRICS_FILE))?;
    let out_dir = a.out_dir.unwrap_or_else(|| run.join("plots"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let all = series(&records);
    for (name, points) in &all {
        plot::plot_series(&out_dir, name, points)?;
    }
    println!("wrote {} plots to {}", all.len(), out_dir.display());
    Ok(())
}
