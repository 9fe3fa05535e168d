use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use juree_core::corpus::{ingest, stratified_split, IngestRecord};
use juree_core::evalkit::{compute_metrics, confusion, evaluate, latency_bench};
use juree_core::foundry::{
    augment_example, distance_filter, export_embeddings, generate_candidates, roundtrip_filter, run_round,
    uncertainty_triage, AugmentOp, Candidate, DistancePolicy, GenerateOptions, GenerationRecipe,
    HashingEmbedder, RoundConfig, Thesaurus, TriagePolicy,
};
use juree_core::judges::{
    multi_judge_classify, single_judge_classify, ChatClient, ChatEndpointConfig, Exemplar, HttpChatClient,
    JudgeConfig, JudgeMode,
};
use juree_core::jsonl;
use juree_core::testing::LexiconChat;
use juree_core::{Dataset, RiskLabel, Taxonomy};
use juree_gateway::{build_backend, GatewayConfig};

use crate::{ChatArgs, Command, JudgeKind, Stage};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Serve { config, bind } => {
            let mut cfg = GatewayConfig::load(&config)?;
            if let Some(b) = bind {
                cfg.bind = b;
                cfg.validate()?;
            }
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(juree_gateway::serve(cfg))
        }
        Command::Eval {
            dataset,
            backend,
            taxonomy,
            batch_size,
            csv,
        } => {
            let data = load_dataset(&dataset)?;
            let report = evaluate(&*build_backend(&backend)?, &data, &load_taxonomy(taxonomy)?, batch_size.max(1))?;
            if let Some(p) = csv {
                write_file(&p, &report.to_csv())?;
            }
            print_json(&report)
        }
        Command::Gen {
            recipe,
            n,
            seed,
            pool,
            out,
            retry_budget,
            chat,
        } => {
            if n == 0 {
                bail!("--n must be positive");
            }
            let mut recipes = GenerationRecipe::load_path(&recipe)?;
            if let Some(s) = seed {
                recipes.iter_mut().for_each(|r| r.seed = s);
            }
            let pool = load_dataset(&pool)?;
            let client = chat_client(&chat)?;
            let opts = GenerateOptions {
                retry_budget,
                ..Default::default()
            };
            let mut all: Vec<Candidate> = Vec::new();
            for r in &recipes {
                match generate_candidates(r, &pool, n, &*client, &opts) {
                    Ok(c) => all.extend(c),
                    Err(juree_core::foundry::FoundryError::Exhausted { partial, attempts }) => {
                        eprintln!(
                            "{}: retry budget exhausted after {attempts} calls, {} of {n} candidates",
                            r.recipe_id,
                            partial.len()
                        );
                        all.extend(partial);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            eprintln!("generated {} candidates from {} recipes", all.len(), recipes.len());
            write_output(out.as_deref(), &jsonl::to_string(&all))
        }
        Command::Filter {
            stage,
            input,
            seeds,
            out,
            report,
            tau_keep,
            tau_conflict,
            chat,
        } => {
            let mut cands: Vec<Candidate> =
                jsonl::read_path(&input).with_context(|| format!("reading {}", input.display()))?;
            let rep = match stage {
                Stage::Roundtrip => {
                    let client = chat_client(&chat)?;
                    let taxonomy = Taxonomy::default();
                    let cfg = JudgeConfig::new(&chat.model);
                    roundtrip_filter(&mut cands, |text| {
                        match single_judge_classify(text, &*client, &taxonomy, &cfg, JudgeMode::ZeroShot, None) {
                            Ok(o) if o.resolved => Ok(o.label),
                            Ok(_) => Err("judge output could not be parsed".to_string()),
                            Err(e) => Err(e.to_string()),
                        }
                    })
                }
                Stage::Distance => {
                    let seeds = seeds.context("--seeds is required for the distance stage")?;
                    let policy = DistancePolicy { tau_keep, tau_conflict };
                    distance_filter(&mut cands, &load_dataset(&seeds)?, &HashingEmbedder::default(), policy)?
                }
            };
            if let Some(p) = report {
                write_file(&p, &rep.to_jsonl())?;
            }
            eprintln!("{}", rep.summary());
            write_output(out.as_deref(), &jsonl::to_string(&cands))
        }
        Command::Triage {
            k,
            input,
            backend,
            margin,
            taxonomy,
            out,
        } => {
            let cands: Vec<Candidate> =
                jsonl::read_path(&input).with_context(|| format!("reading {}", input.display()))?;
            let live: Vec<Candidate> = cands.into_iter().filter(|c| c.is_live()).collect();
            let policy = TriagePolicy {
                margin_threshold: margin,
                top_k: k,
                ..Default::default()
            };
            let queue = uncertainty_triage(&live, &*build_backend(&backend)?, &load_taxonomy(taxonomy)?, policy)?;
            eprintln!("{} of {} candidates queued", queue.len(), live.len());
            write_output(out.as_deref(), &jsonl::to_string(&queue))
        }
        Command::Bench {
            dataset,
            batch_size,
            backend,
            warmup,
            repeat,
            batches_csv,
        } => {
            if batch_size == 0 {
                bail!("--batch-size must be positive");
            }
            let texts = load_dataset(&dataset)?.texts();
            let texts: Vec<String> = texts.iter().cycle().take(texts.len() * repeat.max(1)).cloned().collect();
            let mut backend = build_backend(&backend)?;
            let run = latency_bench(&mut backend, &texts, batch_size, warmup)?;
            if let Some(p) = batches_csv {
                write_file(&p, &run.batches_csv())?;
            }
            print_json(&run.report)
        }
        Command::Split {
            test_frac,
            seed,
            dataset,
            train,
            test,
        } => {
            let (tr, te) = stratified_split(&load_dataset(&dataset)?, test_frac, seed)?;
            tr.save(&train)?;
            te.save(&test)?;
            let counts = |d: &Dataset| {
                RiskLabel::ALL
                    .iter()
                    .map(|l| (l.as_str(), d.count(*l)))
                    .collect::<std::collections::BTreeMap<_, _>>()
            };
            print_json(&serde_json::json!({
                "train": {"total": tr.len(), "per_class": counts(&tr)},
                "test": {"total": te.len(), "per_class": counts(&te)},
            }))
        }
        Command::Ingest { input, out, taxonomy } => {
            let records: Vec<IngestRecord> =
                jsonl::read_path(&input).with_context(|| format!("reading {}", input.display()))?;
            let data = ingest(&records, &load_taxonomy(taxonomy)?)?;
            data.save(&out)?;
            eprintln!("{} records, {} examples after dedup", records.len(), data.len());
            Ok(())
        }
        Command::Round {
            seeds,
            recipe,
            n,
            out,
            backend,
            margin,
            k,
            chat,
        } => {
            if n == 0 {
                bail!("--n must be positive");
            }
            let mut cfg = RoundConfig::new(GenerationRecipe::load_path(&recipe)?, n, &chat.model);
            cfg.triage.margin_threshold = margin;
            cfg.triage.top_k = k;
            let client = chat_client(&chat)?;
            let output = run_round(
                &load_dataset(&seeds)?,
                &cfg,
                &*client,
                &*build_backend(&backend)?,
                &HashingEmbedder::default(),
                &Taxonomy::default(),
            )?;
            output.write_to(&out)?;
            print_json(&output.summary())
        }
        Command::Judge {
            dataset,
            mode,
            exemplars,
            taxonomy,
            chat,
        } => {
            let data = load_dataset(&dataset)?;
            let taxonomy = load_taxonomy(taxonomy)?;
            let client = chat_client(&chat)?;
            let exemplars: Option<Vec<Exemplar>> = match (&exemplars, mode) {
                (Some(p), _) => Some(jsonl::read_path(p).with_context(|| format!("reading {}", p.display()))?),
                (None, JudgeKind::FewShot) => bail!("--exemplars is required for few-shot mode"),
                (None, _) => None,
            };
            let cfg = JudgeConfig::new(&chat.model);
            let mut preds = Vec::with_capacity(data.len());
            let mut unresolved = 0usize;
            for ex in data.examples() {
                let outcome = match mode {
                    JudgeKind::ZeroShot => {
                        single_judge_classify(&ex.text, &*client, &taxonomy, &cfg, JudgeMode::ZeroShot, None)?
                    }
                    JudgeKind::FewShot => single_judge_classify(
                        &ex.text,
                        &*client,
                        &taxonomy,
                        &cfg,
                        JudgeMode::FewShot,
                        exemplars.as_deref(),
                    )?,
                    JudgeKind::Multi => multi_judge_classify(&ex.text, &*client, &taxonomy, &cfg)?,
                };
                unresolved += usize::from(!outcome.resolved);
                preds.push(outcome.label);
            }
            let report = compute_metrics(&confusion(&data.labels(), &preds)?)?;
            print_json(&serde_json::json!({"unresolved": unresolved, "metrics": report}))
        }
        Command::Augment {
            input,
            op,
            p,
            seed,
            out,
        } => {
            let op: AugmentOp = op.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            if !(0.0..=1.0).contains(&p) {
                bail!("--p must be in [0, 1]");
            }
            let data = load_dataset(&input)?;
            let thesaurus = Thesaurus::embedded();
            // copies the operation left unchanged add nothing
            let cands: Vec<Candidate> = data
                .examples()
                .iter()
                .enumerate()
                .map(|(i, ex)| (ex, augment_example(ex, op, p, seed.wrapping_add(i as u64), &thesaurus)))
                .filter(|(ex, c)| c.text() != ex.text)
                .map(|(_, c)| c)
                .collect();
            eprintln!("{} augmented candidates", cands.len());
            write_output(out.as_deref(), &jsonl::to_string(&cands))
        }
        Command::ExportEmbeddings { dataset, out } => {
            let data = load_dataset(&dataset)?;
            let mut buf = Vec::new();
            export_embeddings(&data, &HashingEmbedder::default(), &mut buf)?;
            write_output(out.as_deref(), &String::from_utf8(buf)?)
        }
    }
}

fn chat_client(args: &ChatArgs) -> Result<Box<dyn ChatClient>> {
    if args.stub {
        return Ok(Box::new(LexiconChat::default()));
    }
    let mut cfg = ChatEndpointConfig::from_env();
    cfg.audit_log = args.audit_log.clone();
    Ok(Box::new(HttpChatClient::new(cfg)?))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_taxonomy(path: Option<PathBuf>) -> Result<Taxonomy> {
    Ok(match path {
        Some(p) => Taxonomy::load_path(&p)?,
        None => Taxonomy::default(),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}
