//! `aqa`: command-line surface for the adaptive-retrieval QA harness.
//!
//! Every command is deterministic given its inputs and seed, and writes a
//! `<out>.manifest.json` side file recording the configuration and input
//! digests. Primary outputs never contain timestamps; the manifest's
//! `timestamp` field is the only thing that varies between identical
//! invocations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use aqa_core::config::RunConfig;
use aqa_core::databuilder::{
    build_adapt_dataset, export_training_file, probe_model, probe_model_cached, ProbeCache,
};
use aqa_core::datamodel::{compute_stats, load_passages, load_qa_dataset, save_generic, Schema};
use aqa_core::normalize::MatchPolicy;
use aqa_core::pipeline::{decision_analysis, run_benchmark, DecisionBackends};
use aqa_core::popularity::{correctness_maps, split_dev_test, sweep_threshold, PopThreshold};
use aqa_core::report::{
    default_histogram_edges, observed_decision_split, popularity_histogram_from_traces, EvalReport,
};
use aqa_core::retriever::{build_index, load_index, save_index};
use aqa_core::trace::{load_traces, save_traces, Configuration};

#[derive(Parser)]
#[command(name = "aqa", version, about = "Adaptive-retrieval question answering harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a line-delimited passage corpus.
    BuildIndex {
        /// Passage corpus: one {id, title?, body} object per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe the backend on every question and export the training file.
    BuildDataset {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value = "generic")]
        schema: Schema,
        /// Run configuration file (backend, policy, run sections).
        #[arg(long)]
        backend: PathBuf,
        /// Optional configuration file whose [policy] section overrides
        /// the backend file's.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Probe cache; resumes an interrupted build.
        #[arg(long)]
        probe_cache: Option<PathBuf>,
    },
    /// Run one inference configuration over a dataset, writing traces.
    Run {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value = "generic")]
        schema: Schema,
        /// Which configuration to run: adaptive, never, always, popularity.
        #[arg(long)]
        config: Configuration,
        /// Index file; required except for the never configuration.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the [run] section's k.
        #[arg(long)]
        k: Option<usize>,
        /// Popularity threshold (a number, or "unbounded").
        #[arg(long)]
        threshold: Option<PopThreshold>,
    },
    /// Recompute the evaluation report from a trace file.
    Eval {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Where to write the report JSON; stdout gets the text table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tune the popularity threshold on a dev split.
    ThresholdSweep {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value = "popqa")]
        schema: Schema,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        ratio: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export the dev split (generic schema) for reproduction.
        #[arg(long)]
        dev_out: Option<PathBuf>,
        /// Export the held-out test split; evaluate the tuned threshold
        /// on it with `run --config popularity --threshold <best>`.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Cross-tabulate the adaptive decision against forced re-prompts.
    DecisionAnalysis {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value = "generic")]
        schema: Schema,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables and histogram data from a trace file.
    Report {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Comma-separated interior bucket edges, e.g. 10,100,1000.
        #[arg(long, value_delimiter = ',')]
        histogram_edges: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset statistics: question count and mean word lengths.
    Stats {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, default_value = "generic")]
        schema: Schema,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

/// Exit codes by error class (see README): 2 usage (clap), 3 config,
/// 4 I/O, 5 data/format, 6 backend.
fn exit_code(err: &anyhow::Error) -> i32 {
    use aqa_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config(_)) => 3,
        Some(E::Io { .. }) => 4,
        Some(
            E::MalformedLine { .. }
            | E::EmptyDataset { .. }
            | E::EmptyInput
            | E::DuplicatePassage { .. }
            | E::EmptyCorpus
            | E::UnknownPassage { .. }
            | E::IndexVersion { .. }
            | E::IndexChecksum { .. }
            | E::InvalidPrompt(_)
            | E::MissingPopularity { .. }
            | E::MissingCorrectness { .. }
            | E::MissingPassage { .. },
        ) => 5,
        Some(E::Backend { .. }) => 6,
        None => 1,
    }
}

/// Resolves the effective policy: --policy file if given, otherwise the
/// backend config's [policy] section, otherwise defaults.
fn resolve_policy(
    policy_path: Option<&Path>,
    backend_config: Option<&RunConfig>,
) -> anyhow::Result<MatchPolicy> {
    if let Some(path) = policy_path {
        return Ok(RunConfig::load(path)?.policy());
    }
    Ok(backend_config
        .map(|c| c.policy())
        .unwrap_or_default())
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

/// Side-file manifest written next to every primary output.
#[derive(Serialize)]
struct Manifest {
    command: String,
    inputs: BTreeMap<String, InputDigest>,
    parameters: serde_json::Value,
    timestamp_unix: u64,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    use sha2::{Digest, Sha256};
    let bytes =
        fs::read(path).with_context(|| format!("cannot digest {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn write_manifest(
    out: &Path,
    command: &str,
    inputs: &[(&str, &Path)],
    parameters: serde_json::Value,
) -> anyhow::Result<()> {
    let mut digests = BTreeMap::new();
    for (name, path) in inputs {
        digests.insert(
            name.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: sha256_file(path)?,
            },
        );
    }
    let manifest = Manifest {
        command: command.to_string(),
        inputs: digests,
        parameters,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = manifest_path(out);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::BuildIndex { corpus, out } => {
            let passages = load_passages(&corpus)?;
            let count = passages.len();
            let index = build_index(passages)?;
            save_index(&index, &out)?;
            write_manifest(
                &out,
                "build-index",
                &[("corpus", corpus.as_path())],
                serde_json::json!({}),
            )?;
            println!(
                "indexed {count} passages ({} terms) -> {}",
                index.postings.len(),
                out.display()
            );
            Ok(())
        }

        Command::BuildDataset {
            qa,
            schema,
            backend,
            policy,
            out,
            probe_cache,
        } => {
            let config = RunConfig::load(&backend)?;
            let match_policy = resolve_policy(policy.as_deref(), Some(&config))?;
            let records = load_qa_dataset(&qa, schema)?;
            let gateway = config.gateway()?;
            let mode = config.run.probe_prompt;

            let outcomes = match &probe_cache {
                Some(cache_path) => {
                    let mut cache = ProbeCache::open(cache_path)?;
                    probe_model_cached(
                        &records,
                        &gateway,
                        &match_policy,
                        mode,
                        config.run.workers,
                        &mut cache,
                    )?
                }
                None => probe_model(&records, &gateway, &match_policy, mode, config.run.workers)?,
            };

            let built = build_adapt_dataset(&records, &outcomes, config.run.missing_passage)?;
            let manifest = built.manifest(&match_policy, mode);
            export_training_file(&built.instances, &manifest, &out)?;
            write_manifest(
                &out,
                "build-dataset",
                &[("qa", qa.as_path()), ("backend", backend.as_path())],
                serde_json::json!({
                    "schema": schema,
                    "policy": match_policy,
                    "probe_prompt": mode,
                }),
            )?;
            println!(
                "{} instances ({} known, {} unknown, {} skipped; unknown fraction {:.4}) -> {}",
                manifest.instance_count,
                manifest.known_count,
                manifest.unknown_count,
                manifest.skipped_missing_passage,
                manifest.unknown_fraction,
                out.display()
            );
            Ok(())
        }

        Command::Run {
            qa,
            schema,
            config: configuration,
            index,
            backend,
            out,
            k,
            threshold,
        } => {
            let config = RunConfig::load(&backend)?;
            let policy = config.policy();
            let records = load_qa_dataset(&qa, schema)?;
            let gateway = config.gateway()?;
            let mut opts = config.run_options();
            if let Some(k) = k {
                opts.k = k;
            }
            opts.threshold = threshold;

            let loaded_index = index.as_deref().map(load_index).transpose()?;
            let run = run_benchmark(
                &records,
                configuration,
                &gateway,
                loaded_index.as_ref(),
                &policy,
                &opts,
            )?;

            save_traces(&run.traces, &out)?;
            let report_path = out.with_extension("report.json");
            write_json(&run.report, &report_path)?;

            let mut inputs: Vec<(&str, &Path)> =
                vec![("qa", qa.as_path()), ("backend", backend.as_path())];
            if let Some(index) = &index {
                inputs.push(("index", index.as_path()));
            }
            write_manifest(
                &out,
                "run",
                &inputs,
                serde_json::json!({
                    "schema": schema,
                    "configuration": configuration,
                    "options": opts,
                    "policy": policy,
                }),
            )?;

            print!("{}", run.report.render_text());
            println!("traces -> {}", out.display());
            println!("report -> {}", report_path.display());
            Ok(())
        }

        Command::Eval { traces, policy, out } => {
            let match_policy = resolve_policy(policy.as_deref(), None)?;
            let loaded = load_traces(&traces)?;
            let report = EvalReport::from_traces(&loaded, &match_policy)?;
            print!("{}", report.render_text());
            if let Some(out) = out {
                write_json(&report, &out)?;
                write_manifest(
                    &out,
                    "eval",
                    &[("traces", traces.as_path())],
                    serde_json::json!({ "policy": match_policy }),
                )?;
                println!("report -> {}", out.display());
            }
            Ok(())
        }

        Command::ThresholdSweep {
            qa,
            schema,
            index,
            backend,
            ratio,
            seed,
            out,
            dev_out,
            test_out,
        } => {
            let config = RunConfig::load(&backend)?;
            let policy = config.policy();
            let records = load_qa_dataset(&qa, schema)?;
            let gateway = config.gateway()?;
            let opts = config.run_options();
            let loaded_index = load_index(&index)?;

            let (dev, test) = split_dev_test(&records, ratio, seed)?;
            let (direct, retrieved) =
                correctness_maps(&dev, &gateway, &loaded_index, &policy, &opts)?;
            let sweep = sweep_threshold(&dev, &direct, &retrieved)?;

            print!("{}", sweep.render_text());
            println!("dev {} / test {} (ratio {ratio}, seed {seed})", dev.len(), test.len());
            if let Some(dev_out) = &dev_out {
                save_generic(&dev, dev_out)?;
                println!("dev split -> {}", dev_out.display());
            }
            if let Some(test_out) = &test_out {
                save_generic(&test, test_out)?;
                println!("test split -> {}", test_out.display());
            }
            if let Some(out) = out {
                write_json(&sweep, &out)?;
                write_manifest(
                    &out,
                    "threshold-sweep",
                    &[
                        ("qa", qa.as_path()),
                        ("index", index.as_path()),
                        ("backend", backend.as_path()),
                    ],
                    serde_json::json!({
                        "schema": schema,
                        "ratio": ratio,
                        "seed": seed,
                        "policy": policy,
                    }),
                )?;
                println!("sweep -> {}", out.display());
            }
            Ok(())
        }

        Command::DecisionAnalysis {
            qa,
            schema,
            index,
            backend,
            out,
        } => {
            let config = RunConfig::load(&backend)?;
            let policy = config.policy();
            let records = load_qa_dataset(&qa, schema)?;
            let gateway = config.gateway()?;
            let opts = config.run_options();
            let loaded_index = load_index(&index)?;

            let table = decision_analysis(
                &records,
                &DecisionBackends::single(gateway),
                &loaded_index,
                &policy,
                &opts,
            )?;

            print!("{}", table.render_text());
            if let Some(out) = out {
                write_json(&table, &out)?;
                write_manifest(
                    &out,
                    "decision-analysis",
                    &[
                        ("qa", qa.as_path()),
                        ("index", index.as_path()),
                        ("backend", backend.as_path()),
                    ],
                    serde_json::json!({ "schema": schema, "policy": policy }),
                )?;
                println!("table -> {}", out.display());
            }
            Ok(())
        }

        Command::Report {
            traces,
            policy,
            histogram_edges,
            out,
        } => {
            let match_policy = resolve_policy(policy.as_deref(), None)?;
            let loaded = load_traces(&traces)?;
            let report = EvalReport::from_traces(&loaded, &match_policy)?;

            print!("{}", report.render_text());

            let adaptive: Vec<_> = loaded
                .iter()
                .filter(|t| t.configuration == Configuration::Adaptive)
                .cloned()
                .collect();
            let split = (!adaptive.is_empty())
                .then(|| observed_decision_split(&adaptive, &match_policy));
            if let Some(split) = &split {
                println!(
                    "adaptive decisions: {} retrieve (acc {}), {} direct (acc {})",
                    split.retrieve_count,
                    fmt_opt_pct(split.retrieve_accuracy),
                    split.direct_count,
                    fmt_opt_pct(split.direct_accuracy),
                );
            }

            let with_pop: Vec<u64> = loaded.iter().filter_map(|t| t.popularity).collect();
            let histogram = if with_pop.is_empty() {
                None
            } else {
                let edges = histogram_edges
                    .unwrap_or_else(|| default_histogram_edges(with_pop.iter().copied()));
                Some(popularity_histogram_from_traces(&loaded, &edges)?)
            };
            if let Some(histogram) = &histogram {
                println!(
                    "{:<12} {:<12} {:>8} {:>12} {:>10}",
                    "pop_lower", "pop_upper", "count", "ret_fraction", "accuracy"
                );
                for bucket in &histogram.buckets {
                    println!(
                        "{:<12} {:<12} {:>8} {:>12} {:>10}",
                        bucket.lower,
                        bucket
                            .upper
                            .map(|u| u.to_string())
                            .unwrap_or_else(|| "inf".into()),
                        bucket.count,
                        fmt_opt_pct(bucket.ret_fraction),
                        fmt_opt_pct(bucket.accuracy),
                    );
                }
                if histogram.missing_popularity > 0 {
                    println!("({} traces without popularity)", histogram.missing_popularity);
                }
            }

            if let Some(out) = out {
                #[derive(Serialize)]
                struct FullReport<'a> {
                    report: &'a EvalReport,
                    #[serde(skip_serializing_if = "Option::is_none")]
                    adaptive_decision_split: Option<&'a aqa_core::report::ObservedDecisionSplit>,
                    #[serde(skip_serializing_if = "Option::is_none")]
                    histogram: Option<&'a aqa_core::report::PopularityHistogram>,
                }
                write_json(
                    &FullReport {
                        report: &report,
                        adaptive_decision_split: split.as_ref(),
                        histogram: histogram.as_ref(),
                    },
                    &out,
                )?;
                write_manifest(
                    &out,
                    "report",
                    &[("traces", traces.as_path())],
                    serde_json::json!({ "policy": match_policy }),
                )?;
                println!("report -> {}", out.display());
            }
            Ok(())
        }

        Command::Stats { qa, schema } => {
            let records = load_qa_dataset(&qa, schema)?;
            let stats = compute_stats(&records)?;
            println!("questions: {}", stats.question_count);
            println!("words/question: {:.2}", stats.mean_words_per_question);
            println!("words/answer: {:.2}", stats.mean_words_per_answer);
            Ok(())
        }
    }
}

fn fmt_opt_pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "-".to_string(),
    }
}
