mod args;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command, Eval, EvalCommon, Prepare, RetrievalData, TrainArgs};
use mtembed::data::toy::ToySpec;
use mtembed::data::{
    read_jsonl_file, write_jsonl, FailureKind, FailureRecord, LabeledRecord, PairRecord,
    QrelRecord, QualityThread, Record, ScoredPairRecord, TemplateBank, TextRecord, TupleRecord,
};
use mtembed::evaluation::{render_table, EvalReport};
use mtembed::pipeline::{
    self, ablation_report, class_tuples, classification_report, clustering_report, encode_records,
    failure_report, filter_pairs, gen_failures, mine_negatives, mrl_sweep_report,
    prepare_toy_corpus, quality_convert, retrieval_report, sts_report, write_atomic,
    write_embeddings_binary, write_json, PipelineError, ReportContext, RunConfig,
};
use mtembed::trainer::{load_checkpoint, save_checkpoint, Checkpoint, StageReport};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Prints `value` as JSON with `--json`, otherwise the human rendering.
fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) {
    let text = if json {
        serde_json::to_string_pretty(value).expect("output serializes")
    } else {
        human()
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", text.trim_end());
}

fn read<T: Record + serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    Ok(read_jsonl_file(path)?)
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_atomic(path, &buf)
}

/// Fails before any work when the output's directory is missing.
fn check_output(path: &Path) -> Result<(), PipelineError> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !dir.is_dir() {
        return Err(PipelineError::Usage(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let json = cli.json;
    match cli.command {
        Command::PrepareData(p) => prepare(json, p),
        Command::Pretrain(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let out = output_path(&cfg, &a, "stage1.ckpt")?;
            let (ck, report) = pipeline::pretrain(&cfg)?;
            finish_training(json, &ck, &report, &out)
        }
        Command::TrainPairs(a) => {
            let cfg = RunConfig::load(&a.train.config)?;
            let out = output_path(&cfg, &a.train, "stage2.ckpt")?;
            let ck = load_checkpoint(&a.model)?;
            let (ck, report) = pipeline::train_pairs(&cfg, ck)?;
            finish_training(json, &ck, &report, &out)
        }
        Command::TrainAdapter(a) => {
            let cfg = RunConfig::load(&a.from.train.config)?;
            let out = output_path(&cfg, &a.from.train, &format!("adapter-{}.ckpt", a.task))?;
            let ck = load_checkpoint(&a.from.model)?;
            let (ck, report) = pipeline::train_adapter(&cfg, ck, a.task)?;
            finish_training(json, &ck, &report, &out)
        }
        Command::Encode(a) => {
            check_output(&a.output)?;
            let ck = load_checkpoint(&a.model)?;
            let dim = a.dim.unwrap_or(ck.model.config().d_model);
            let records: Vec<TextRecord> = read(&a.input)?;
            let rows = encode_records(&ck, &records, a.task, dim, a.instructions)?;
            if a.binary {
                write_atomic(&a.output, &write_embeddings_binary(&rows))?;
            } else {
                write_records(&a.output, &rows)?;
            }
            let summary =
                serde_json::json!({ "encoded": rows.len(), "dim": dim, "output": a.output });
            emit(json, &summary, || {
                format!(
                    "encoded {} texts at dim {dim} into {}",
                    rows.len(),
                    a.output.display()
                )
            });
            Ok(())
        }
        Command::Eval(e) => eval(json, e),
    }
}

fn output_path(
    cfg: &RunConfig,
    a: &TrainArgs,
    default_name: &str,
) -> Result<PathBuf, PipelineError> {
    let path = match (&a.output, &cfg.output_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            dir.join(default_name)
        }
        (None, None) => {
            return Err(PipelineError::Usage(
                "pass --output or set output_dir in the config".into(),
            ))
        }
    };
    check_output(&path)?;
    Ok(path)
}

fn finish_training(
    json: bool,
    ck: &Checkpoint,
    report: &StageReport,
    out: &Path,
) -> Result<(), PipelineError> {
    save_checkpoint(ck, out)?;
    emit(json, report, || {
        let first = report.losses.first().copied().unwrap_or(f64::NAN);
        let last = report.losses.last().copied().unwrap_or(f64::NAN);
        let task = report.task.map(|t| format!(" ({t})")).unwrap_or_default();
        format!(
            "stage {}{task}: {} steps, {} skipped, loss {first:.4} -> {last:.4}; saved {}",
            report.stage.number(),
            report.steps,
            report.skipped,
            out.display()
        )
    });
    Ok(())
}

fn prepare(json: bool, p: Prepare) -> Result<(), PipelineError> {
    match p {
        Prepare::FilterPairs { input, output } => {
            check_output(&output)?;
            let pairs: Vec<PairRecord> = read(&input)?;
            let (kept, summary) = filter_pairs(&pairs);
            write_records(&output, &kept)?;
            emit(json, &summary, || {
                let rows: Vec<Vec<String>> = summary
                    .per_dataset
                    .iter()
                    .map(|(d, (k, r))| vec![d.clone(), k.to_string(), r.to_string()])
                    .collect();
                render_table(&["dataset", "kept", "dropped"], &rows)
            });
        }
        Prepare::MineNegatives {
            pairs,
            corpus,
            output,
            negatives,
            seed,
        } => {
            check_output(&output)?;
            let pairs: Vec<PairRecord> = read(&pairs)?;
            let corpus: Vec<TextRecord> = read(&corpus)?;
            let tuples = mine_negatives(&pairs, &corpus, negatives, seed)?;
            write_records(&output, &tuples)?;
            let summary = serde_json::json!({ "tuples": tuples.len(), "negatives": negatives });
            emit(json, &summary, || {
                format!(
                    "wrote {} tuples with {negatives} negatives each",
                    tuples.len()
                )
            });
        }
        Prepare::ClassTuples {
            input,
            output,
            seed,
        } => {
            check_output(&output)?;
            let labeled: Vec<LabeledRecord> = read(&input)?;
            let tuples = class_tuples(&labeled, seed)?;
            write_records(&output, &tuples)?;
            let summary = serde_json::json!({ "tuples": tuples.len() });
            emit(json, &summary, || {
                format!("wrote {} classification tuples", tuples.len())
            });
        }
        Prepare::QualityConvert {
            input,
            output,
            dataset,
            seed,
        } => {
            check_output(&output)?;
            let threads: Vec<QualityThread> = read(&input)?;
            let conv = quality_convert(&threads, &dataset, seed);
            write_records(&output, &conv.tuples)?;
            let summary =
                serde_json::json!({ "tuples": conv.tuples.len(), "skipped_threads": conv.skipped });
            emit(json, &summary, || {
                format!(
                    "wrote {} tuples; skipped {} threads with fewer than two answers",
                    conv.tuples.len(),
                    conv.skipped
                )
            });
        }
        Prepare::GenFailures {
            kind,
            n,
            seed,
            output,
            bank,
        } => {
            check_output(&output)?;
            let bank = match bank {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|source| PipelineError::Io {
                        path: p.display().to_string(),
                        source,
                    })?;
                    TemplateBank::from_json(&text)?
                }
                None => TemplateBank::builtin(),
            };
            let records = gen_failures(kind, n, &bank, seed)?;
            write_records(&output, &records)?;
            let summary = serde_json::json!({ "kind": kind, "records": records.len() });
            emit(json, &summary, || {
                format!("wrote {} {} records", records.len(), kind.as_str())
            });
        }
        Prepare::ToyCorpus { dir, seed } => {
            let files = prepare_toy_corpus(
                &dir,
                &ToySpec {
                    seed,
                    ..ToySpec::default()
                },
            )?;
            emit(json, &files, || {
                let rows: Vec<Vec<String>> = files
                    .files
                    .iter()
                    .map(|(k, v)| vec![k.clone(), v.display().to_string()])
                    .collect();
                format!(
                    "{}config: {}",
                    render_table(&["file", "path"], &rows),
                    files.config.display()
                )
            });
        }
    }
    Ok(())
}

struct Loaded {
    ck: Checkpoint,
    ctx: ReportContext,
    dim: usize,
}

fn load_for_eval(c: &EvalCommon) -> Result<Loaded, PipelineError> {
    if let Some(r) = &c.report {
        check_output(r)?;
    }
    let ck = load_checkpoint(&c.model)?;
    let run_id = c.run_id.clone().unwrap_or_else(|| {
        c.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let ctx = ReportContext {
        run_id,
        seed: c.seed.unwrap_or(ck.seed),
        timestamp: c.timestamp,
    };
    let dim = c.dim.unwrap_or(ck.model.config().d_model);
    Ok(Loaded { ck, ctx, dim })
}

type RetrievalInputs = (Vec<TextRecord>, Vec<TextRecord>, Vec<QrelRecord>);

fn retrieval_inputs(d: &RetrievalData) -> Result<RetrievalInputs, PipelineError> {
    Ok((read(&d.queries)?, read(&d.docs)?, read(&d.qrels)?))
}

fn emit_report(json: bool, report: &EvalReport, path: Option<&Path>) -> Result<(), PipelineError> {
    if let Some(p) = path {
        write_json(p, report)?;
    }
    emit(json, report, || report.to_table());
    Ok(())
}

/// Failure records, or tuples labeled as `case` when the lines have no `kind`.
fn failure_records(
    path: &Path,
    case: Option<FailureKind>,
) -> Result<Vec<FailureRecord>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let first: Option<serde_json::Value> = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str(l).ok());
    let tagged = first.as_ref().is_some_and(|v| v.get("kind").is_some());
    let records: Vec<FailureRecord> = if tagged {
        read(path)?
    } else {
        let kind = case.ok_or_else(|| {
            PipelineError::Usage(format!(
                "{} holds tuples; pass --case to say which failure kind",
                path.display()
            ))
        })?;
        let tuples: Vec<TupleRecord> = read(path)?;
        tuples
            .iter()
            .map(|t| FailureRecord::from_tuple(kind, t))
            .collect()
    };
    Ok(match case {
        Some(k) => records.into_iter().filter(|r| r.kind == k).collect(),
        None => records,
    })
}

fn eval(json: bool, e: Eval) -> Result<(), PipelineError> {
    match e {
        Eval::Retrieval {
            common,
            data,
            routing,
        } => {
            let l = load_for_eval(&common)?;
            let (q, d, qr) = retrieval_inputs(&data)?;
            let mode = routing.adapters.resolve(&l.ck.model);
            let r = retrieval_report(
                &l.ctx,
                &l.ck,
                mode,
                routing.instructions,
                &q,
                &d,
                &qr,
                l.dim,
                data.k,
            )?;
            emit_report(json, &r, common.report.as_deref())
        }
        Eval::Sts {
            common,
            pairs,
            task,
        } => {
            let l = load_for_eval(&common)?;
            let pairs: Vec<ScoredPairRecord> = read(&pairs)?;
            let r = sts_report(&l.ctx, &l.ck, task, &pairs, l.dim)?;
            emit_report(json, &r, common.report.as_deref())
        }
        Eval::Classification {
            common,
            train,
            test,
            task,
        } => {
            let l = load_for_eval(&common)?;
            let train: Vec<LabeledRecord> = read(&train)?;
            let test: Vec<LabeledRecord> = read(&test)?;
            let r = classification_report(&l.ctx, &l.ck, task, &train, &test, l.dim)?;
            emit_report(json, &r, common.report.as_deref())
        }
        Eval::Clustering {
            common,
            input,
            task,
        } => {
            let l = load_for_eval(&common)?;
            let labeled: Vec<LabeledRecord> = read(&input)?;
            let r = clustering_report(&l.ctx, &l.ck, task, &labeled, l.dim)?;
            emit_report(json, &r, common.report.as_deref())
        }
        Eval::MrlSweep {
            common,
            data,
            routing,
            dims,
        } => {
            let l = load_for_eval(&common)?;
            let (q, d, qr) = retrieval_inputs(&data)?;
            let dims = if dims.is_empty() {
                l.ck.model.config().mrl_dims.clone()
            } else {
                dims
            };
            let mode = routing.adapters.resolve(&l.ck.model);
            let sweep = mrl_sweep_report(
                &l.ctx,
                &l.ck,
                mode,
                routing.instructions,
                &q,
                &d,
                &qr,
                &dims,
                data.k,
            )?;
            if let Some(p) = &common.report {
                write_json(p, &sweep)?;
            }
            emit(json, &sweep, || {
                let names: Vec<&str> = sweep
                    .results
                    .first()
                    .map(|r| r.metrics.keys().map(String::as_str).collect())
                    .unwrap_or_default();
                let mut headers = vec!["dim"];
                headers.extend(&names);
                let rows: Vec<Vec<String>> = sweep
                    .results
                    .iter()
                    .map(|r| {
                        let mut row = vec![r.mrl_dim.to_string()];
                        row.extend(names.iter().map(|k| format!("{:.4}", r.metrics[*k])));
                        row
                    })
                    .collect();
                let deltas: Vec<Vec<String>> = sweep
                    .deltas
                    .iter()
                    .map(|d| {
                        vec![
                            format!("{} -> {}", d.from, d.to),
                            d.metric.clone(),
                            format!("{:+.4}", d.delta),
                        ]
                    })
                    .collect();
                format!(
                    "{}\n{}",
                    render_table(&headers, &rows),
                    render_table(&["dims", "metric", "delta"], &deltas)
                )
            });
            Ok(())
        }
        Eval::Ablation {
            shared,
            shared_instructions,
            separate,
            separate_instructions,
            data,
            dim,
            report,
        } => {
            if let Some(r) = &report {
                check_output(r)?;
            }
            let cks = [
                (false, false, load_checkpoint(&shared)?),
                (false, true, load_checkpoint(&shared_instructions)?),
                (true, false, load_checkpoint(&separate)?),
                (true, true, load_checkpoint(&separate_instructions)?),
            ];
            let (q, d, qr) = retrieval_inputs(&data)?;
            let dim = dim.unwrap_or(cks[0].2.model.config().d_model);
            let variants: Vec<(bool, bool, &Checkpoint)> =
                cks.iter().map(|(a, b, c)| (*a, *b, c)).collect();
            let rep = ablation_report(&variants, &q, &d, &qr, dim, data.k)?;
            if let Some(p) = &report {
                write_json(p, &rep)?;
            }
            emit(json, &rep, || rep.to_table());
            Ok(())
        }
        Eval::Failures {
            model,
            input,
            case,
            routing,
            dim,
            report,
        } => {
            if let Some(r) = &report {
                check_output(r)?;
            }
            let ck = load_checkpoint(&model)?;
            let records = failure_records(&input, case)?;
            let dim = dim.unwrap_or(ck.model.config().d_model);
            let mode = routing.adapters.resolve(&ck.model);
            let rep = failure_report(&ck, mode, routing.instructions, &records, dim)?;
            if let Some(p) = &report {
                write_json(p, &rep)?;
            }
            emit(json, &rep, || rep.to_table());
            Ok(())
        }
    }
}
