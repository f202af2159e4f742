use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crysgen::corpus::{self, CorpusConfig};
use crysgen::crystal::{self, Composition, Crystal};
use crysgen::metrics::{self, EvalConfig};
use crysgen::proposer::{FileProposer, MarkovProposer, Propose};
use crysgen::rng;
use crysgen::sampler::{self, BatchFailure, BatchReport, GeneratedMaterial, SampleError, SamplerConfig};
use crysgen::text::{self, build_prompt, Prompt, PromptKind};
use crysgen::trainer::{self, Checkpoint, LossRecord};
use crysgen::Execution;

use crate::config::{
    Component, EvaluateCmdConfig, IngestConfig, InputFormat, Mode, ProposerChoice, SampleCmdConfig, TrainCmdConfig,
};
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PROPOSER_FILE: &str = "proposer.mkv";
pub const LOSS_LOG_FILE: &str = "loss_log.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const PAIRED_TARGETS_FILE: &str = "paired_targets.jsonl";

/// Creates `dir` and refuses to clobber any of `names` unless `force`.
fn prepare_outputs(dir: &Path, names: &[&str], force: bool) -> Result<(), CliError> {
    for name in names {
        let p = dir.join(name);
        if p.exists() && !force {
            return Err(CliError::Validation(format!(
                "{} already exists (pass --force to overwrite)",
                p.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_text(path, &text)
}

fn write_records(path: &Path, crystals: &[Crystal]) -> Result<(), CliError> {
    crystal::write_records(path, crystals).map_err(Into::into)
}

fn read_records(path: &Path) -> Result<Vec<Crystal>, CliError> {
    crystal::read_records(path).map_err(Into::into)
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(path, "no such file"))
    }
}

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// truncated checkpoint behind.
fn save_checkpoint(state: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("ckpt.tmp");
    state.save(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct Echo<'a, C: Serialize, T: Serialize> {
    run_config: &'a C,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    source: String,
    format: InputFormat,
    seed: u64,
    total: usize,
    train: usize,
    val: usize,
    test: usize,
    /// Input positions (0-based, in read order) of each split.
    indices: [&'a [usize]; 3],
}

/// Sizes of the 60/20/20 split.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 5;
    let val = n / 5;
    (train, val, n - train - val)
}

fn read_csv(path: &Path) -> Result<Vec<Crystal>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "cif")
        .ok_or_else(|| CliError::Validation(format!("{}: no `cif` column", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let cif = rec
            .get(col)
            .ok_or_else(|| CliError::Validation(format!("line {line}: missing cif field")))?;
        let c = text::parse(cif).map_err(|e| CliError::Validation(format!("line {line}: {e}")))?;
        out.push(c);
    }
    Ok(out)
}

pub fn ingest(cfg: &IngestConfig, force: bool) -> Result<(), CliError> {
    let (crystals, source) = match cfg.format {
        InputFormat::Synthetic => {
            let c = corpus::synthetic_perovskites(&CorpusConfig {
                size: cfg.synthetic_size,
                seed: cfg.seed,
                ..CorpusConfig::default()
            })
            .map_err(|e| CliError::Validation(e.to_string()))?;
            (c, "synthetic-perovskite".to_string())
        }
        fmt => {
            let input = cfg
                .input
                .as_ref()
                .ok_or_else(|| CliError::Validation("--input is required for this format".into()))?;
            require_file(input)?;
            let c = match fmt {
                InputFormat::Records => read_records(input)?,
                _ => read_csv(input)?,
            };
            (c, input.display().to_string())
        }
    };
    if crystals.is_empty() {
        return Err(CliError::Validation("input holds no records".into()));
    }
    let names = [
        "train.jsonl",
        "val.jsonl",
        "test.jsonl",
        "train.txt",
        "manifest.json",
        RUN_CONFIG_FILE,
    ];
    prepare_outputs(&cfg.out, &names, force)?;
    let mut order: Vec<usize> = (0..crystals.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(cfg.seed, &[8]));
    let (nt, nv, _) = split_sizes(crystals.len());
    let parts = [&order[..nt], &order[nt..nt + nv], &order[nt + nv..]];
    for (name, idx) in ["train.jsonl", "val.jsonl", "test.jsonl"].iter().zip(parts) {
        let set: Vec<Crystal> = idx.iter().map(|&i| crystals[i].clone()).collect();
        write_records(&cfg.out.join(name), &set)?;
        if *name == "train.jsonl" {
            let texts: Vec<String> = set.iter().map(text::serialize).collect();
            write_text(&cfg.out.join("train.txt"), &text::join_corpus(texts.iter().map(String::as_str)))?;
        }
    }
    let manifest = SplitManifest {
        source,
        format: cfg.format,
        seed: cfg.seed,
        total: crystals.len(),
        train: parts[0].len(),
        val: parts[1].len(),
        test: parts[2].len(),
        indices: parts,
    };
    write_json(
        &cfg.out.join("manifest.json"),
        &Echo {
            run_config: cfg,
            body: manifest,
        },
    )?;
    write_json(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct LossLog<'a> {
    steps: u64,
    log: &'a [LossRecord],
}

pub fn train(cfg: &TrainCmdConfig, resume: bool, force: bool, exec: Execution) -> Result<(), CliError> {
    require_file(&cfg.data)?;
    cfg.trainer.validate()?;
    let data = read_records(&cfg.data)?;
    if data.is_empty() {
        return Err(CliError::Validation(format!("{} holds no records", cfg.data.display())));
    }
    let diffusion = cfg.component != Component::Proposer;
    let proposer = cfg.component != Component::Diffusion;
    let mut names = vec![RUN_CONFIG_FILE];
    if diffusion {
        names.push(LOSS_LOG_FILE);
        if !resume {
            names.push(CHECKPOINT_FILE);
        }
    }
    if proposer {
        names.push(PROPOSER_FILE);
    }
    prepare_outputs(&cfg.out, &names, force)?;
    write_json(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;

    if proposer {
        let mk = MarkovProposer::train_on_crystals(&data, cfg.markov_order, cfg.max_attempts)?;
        let path = cfg.out.join(PROPOSER_FILE);
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| CliError::io(&path, e))?);
        mk.write_to(&mut w).map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    if diffusion {
        let ckpt = cfg.out.join(CHECKPOINT_FILE);
        let state = if resume && ckpt.exists() {
            let mut s = Checkpoint::load(&ckpt)?;
            if s.config.denoiser != cfg.trainer.denoiser || s.config.schedule != cfg.trainer.schedule {
                return Err(CliError::Validation(
                    "checkpoint architecture or schedule differs from the configuration".into(),
                ));
            }
            s.config.max_steps = cfg.trainer.max_steps;
            s.config.epochs = cfg.trainer.epochs;
            s
        } else {
            Checkpoint::init(&cfg.trainer, &data)?
        };
        let state = trainer::resume(state, &data, exec, |s| {
            save_checkpoint(s, &ckpt).map_err(|e| trainer::TrainError::Io(std::io::Error::other(e.to_string())))
        })?;
        save_checkpoint(&state, &ckpt)?;
        write_json(
            &cfg.out.join(LOSS_LOG_FILE),
            &Echo {
                run_config: cfg,
                body: LossLog {
                    steps: state.step,
                    log: &state.log,
                },
            },
        )?;
    }
    Ok(())
}

/// Parses `composition=<formula>` / `spacegroup=<n>` into a prompt.
pub fn parse_condition(cond: Option<&str>) -> Result<Prompt, CliError> {
    let kind = match cond {
        None => PromptKind::Unconditional,
        Some(c) => {
            let (key, value) = c
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("condition {c:?} is not key=value")))?;
            match key.trim() {
                "composition" => PromptKind::Composition(value.trim().to_string()),
                "spacegroup" => PromptKind::SpaceGroup(
                    value
                        .trim()
                        .parse()
                        .map_err(|_| CliError::Validation(format!("bad space group {value:?}")))?,
                ),
                other => return Err(CliError::Validation(format!("unknown condition key {other:?}"))),
            }
        }
    };
    build_prompt(kind).map_err(|e| CliError::Validation(e.to_string()))
}

#[derive(Serialize)]
struct SampleSummary {
    report: BatchReport,
    tau_used: usize,
    composition_match: Option<f64>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    index: usize,
    trace: &'a [sampler::TraceStep],
}

fn write_traces(path: &Path, items: &[GeneratedMaterial]) -> Result<(), CliError> {
    let mut out = String::new();
    for (index, g) in items.iter().enumerate() {
        if let Some(trace) = &g.trace {
            out.push_str(&serde_json::to_string(&TraceLine { index, trace }).expect("serializable"));
            out.push('\n');
        }
    }
    write_text(path, &out)
}

pub fn sample(cfg: &SampleCmdConfig, force: bool, exec: Execution) -> Result<(), CliError> {
    let ckpt_path = cfg.model.join(CHECKPOINT_FILE);
    require_file(&ckpt_path)?;
    if cfg.n == 0 {
        return Err(CliError::Validation("n must be >= 1".into()));
    }
    let state = Checkpoint::load(&ckpt_path)?;
    let sched = state.schedules()?;
    cfg.sampler.validate(&sched)?;
    let mut names = vec!["generated.jsonl", "batch_report.json", RUN_CONFIG_FILE];
    match cfg.mode {
        Mode::Gen => names.push("proposals.jsonl"),
        Mode::Csp => names.push(PAIRED_TARGETS_FILE),
    }
    if cfg.sampler.trace {
        names.push("traces.jsonl");
    }

    let (items, summary) = match cfg.mode {
        Mode::Gen => {
            let prompt = parse_condition(cfg.condition.as_deref())?;
            let proposer: Box<dyn Propose> = match cfg.proposer {
                ProposerChoice::Markov => {
                    let path = cfg.model.join(PROPOSER_FILE);
                    require_file(&path)?;
                    let f = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
                    Box::new(MarkovProposer::read_from(&mut BufReader::new(f))?)
                }
                ProposerChoice::File => {
                    let path = cfg
                        .proposer_file
                        .as_ref()
                        .ok_or_else(|| CliError::Validation("proposer_file is required".into()))?;
                    require_file(path)?;
                    Box::new(FileProposer::new(
                        read_records(path)?,
                        cfg.max_attempts,
                        path.display().to_string(),
                    )?)
                }
            };
            prepare_outputs(&cfg.out, &names, force)?;
            let batch = sampler::generate_batch(
                &prompt,
                cfg.n,
                proposer.as_ref(),
                &state.params,
                &sched,
                &state.lattice_norm,
                &cfg.sampler,
                exec,
            )?;
            let proposals: Vec<Crystal> = batch
                .items
                .iter()
                .filter_map(|g| g.proposal.as_ref().map(|p| p.crystal.clone()))
                .collect();
            write_records(&cfg.out.join("proposals.jsonl"), &proposals)?;
            let composition_match = match (prompt.target_composition(), batch.items.is_empty()) {
                (Some(target), false) => {
                    let gen: Vec<Crystal> = batch.items.iter().map(|g| g.crystal.clone()).collect();
                    Some(metrics::composition_match_rate(&gen, &vec![target; gen.len()])?)
                }
                _ => None,
            };
            let summary = SampleSummary {
                report: batch.report,
                tau_used: cfg.sampler.tau_for(&sched),
                composition_match,
            };
            (batch.items, summary)
        }
        Mode::Csp => {
            let path = cfg
                .targets
                .as_ref()
                .ok_or_else(|| CliError::Validation("targets is required in csp mode".into()))?;
            require_file(path)?;
            let targets = read_records(path)?;
            prepare_outputs(&cfg.out, &names, force)?;
            let results = crysgen::par::map(&targets, exec, |i, t| {
                let (_, seed) = sampler::item_seeds(cfg.sampler.seed, i);
                sampler::sample_csp(
                    t.atom_types(),
                    &state.params,
                    &sched,
                    &state.lattice_norm,
                    &SamplerConfig { seed, ..cfg.sampler },
                )
            });
            let mut report = BatchReport {
                requested: targets.len(),
                ..BatchReport::default()
            };
            let mut items = Vec::with_capacity(targets.len());
            let mut paired = Vec::with_capacity(targets.len());
            for (index, (r, t)) in results.into_iter().zip(&targets).enumerate() {
                match r {
                    Ok(g) => {
                        items.push(g);
                        paired.push(t.clone());
                    }
                    Err(e @ SampleError::NonFiniteState { .. }) => return Err(e.into()),
                    Err(e) => {
                        report.sampler_failures += 1;
                        report.failures.push(BatchFailure {
                            index,
                            stage: "sample".into(),
                            message: e.to_string(),
                        });
                    }
                }
            }
            report.generated = items.len();
            write_records(&cfg.out.join(PAIRED_TARGETS_FILE), &paired)?;
            let summary = SampleSummary {
                report,
                tau_used: sched.steps(),
                composition_match: None,
            };
            (items, summary)
        }
    };
    let gen: Vec<Crystal> = items.iter().map(|g| g.crystal.clone()).collect();
    write_records(&cfg.out.join("generated.jsonl"), &gen)?;
    if cfg.sampler.trace {
        write_traces(&cfg.out.join("traces.jsonl"), &items)?;
    }
    write_json(
        &cfg.out.join("batch_report.json"),
        &Echo {
            run_config: cfg,
            body: summary,
        },
    )?;
    write_json(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;
    Ok(())
}

fn read_formulas(path: &Path) -> Result<Vec<Composition>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Composition::parse_formula(l.trim())
                .map_err(|e| CliError::Validation(format!("{} line {}: {}", path.display(), i + 1, e.0)))
        })
        .collect()
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    metrics: &'a metrics::MetricsReport,
}

pub fn evaluate(cfg: &EvaluateCmdConfig, force: bool, exec: Execution) -> Result<(), CliError> {
    for p in [Some(&cfg.gen), Some(&cfg.reference), cfg.calibrate_from.as_ref(), cfg.targets.as_ref()]
        .into_iter()
        .flatten()
    {
        require_file(p)?;
    }
    cfg.tolerances.validate()?;
    let gen = read_records(&cfg.gen)?;
    let reference = read_records(&cfg.reference)?;
    let targets = cfg.targets.as_deref().map(read_formulas).transpose()?;
    let mut names = vec!["report.json", "report.txt", RUN_CONFIG_FILE];
    if cfg.emit_hist {
        names.extend(["hist_density.csv", "hist_nelem.csv"]);
    }
    prepare_outputs(&cfg.out, &names, force)?;
    let threshold = match &cfg.calibrate_from {
        Some(path) => {
            let train = read_records(path)?;
            let ft: Vec<Vec<f64>> = crysgen::par::map(&train, exec, |_, c| metrics::fingerprint(c));
            let fr: Vec<Vec<f64>> = crysgen::par::map(&reference, exec, |_, c| metrics::fingerprint(c));
            metrics::calibrate_threshold(&ft, &fr, cfg.calibrate_quantile, exec)?
        }
        None => cfg.coverage_threshold,
    };
    let eval = EvalConfig {
        mode: cfg.mode.into(),
        tolerances: cfg.tolerances,
        coverage_threshold: threshold,
    };
    let report = metrics::evaluate(&gen, &reference, &eval, targets.as_deref(), exec)?;
    write_json(
        &cfg.out.join("report.json"),
        &Echo {
            run_config: cfg,
            body: EvalOutput { metrics: &report },
        },
    )?;
    write_text(&cfg.out.join("report.txt"), &report.to_table())?;
    if cfg.emit_hist {
        let (dg, ng) = metrics::property_values(&gen);
        let (dr, nr) = metrics::property_values(&reference);
        write_text(&cfg.out.join("hist_density.csv"), &metrics::histogram_csv(&dg, &dr, cfg.hist_bins))?;
        let bins = ng.iter().chain(&nr).fold(1.0f64, |a, &b| a.max(b)) as usize;
        write_text(&cfg.out.join("hist_nelem.csv"), &metrics::histogram_csv(&ng, &nr, bins))?;
    }
    write_json(&cfg.out.join(RUN_CONFIG_FILE), cfg)?;
    Ok(())
}
