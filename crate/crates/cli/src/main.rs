use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use atelier_core::bench::{
    aggregate_report, format_table, stability_sweep, BenchContext, HumanLog, PrompterSpec, RunConfig, Strategy,
    SweepGrid, TaskRunRecord,
};
use atelier_core::clients::{load_model_registry, ModelRegistry, RegistryConfig};
use atelier_core::judge::{EvaluationRecord, Judge, JudgeConfig, TaskContext, TemplateSet};
use atelier_core::memory::{build_memory, index_annotations, AnnotationSet, Exemplar, ExemplarMemory, MemorySkill};
use atelier_core::meta::{ablation_run, format_report, human_loo_baseline, meta_evaluate, AblationStrategy, GoldSet};
use atelier_core::task::{read_tasks, validate_task};
use atelier_core::{ImageData, Modality, Task};
use atelier_session::{
    export_log, plan_group_assignment, router, write_export, Group, Participant, ServiceConfig, SessionService,
    SystemClock,
};
use clap::{Args, Parser, Subcommand};
use tracing::{info, warn};

#[derive(Debug, Parser)]
#[command(name = "atelier", version, about = "Prompting-proficiency benchmark: judge, bench runner, meta-evaluation and study server")]
struct Cli {
    #[command(flatten)]
    models: ModelArgs,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model registry (TOML).
    #[arg(long, global = true, env = "ATELIER_REGISTRY", default_value = "registry.toml")]
    registry: PathBuf,
    /// Overrides the registry seed used by mock providers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Chat model used as the judge.
    #[arg(long, global = true, default_value = "judge")]
    judge: String,
    #[arg(long, global = true, default_value = "text-embed")]
    text_embedder: String,
    #[arg(long, global = true, default_value = "image-embed")]
    image_embedder: String,
    /// Directory holding one built memory per skill (`<dir>/<skill-id>`).
    #[arg(long, global = true, default_value = "memory")]
    memory: PathBuf,
    /// Template directory overriding the built-in judge and prompter templates.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Concurrent task runs or judge calls.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a task corpus against the construction rules.
    ValidateTasks {
        path: PathBuf,
        /// Writes the per-task violations as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Gate candidate exemplars on rater agreement and store the accepted ones.
    BuildMemory {
        #[arg(long)]
        skill: MemorySkill,
        /// Candidate exemplars, one JSON object per line.
        #[arg(long)]
        exemplars: PathBuf,
        /// Annotation sets (JSON array).
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        alpha_threshold: f64,
        /// Defaults to `<memory>/<skill>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for exemplar image paths; defaults to the annotations file's directory.
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Judge one prompt and image for a task and append the record.
    Evaluate {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "tasks.json")]
        tasks: PathBuf,
        #[arg(long)]
        prompt_file: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "cli")]
        prompter_id: String,
    },
    /// Run a prompter over tasks and backends with best-of-N selection.
    Bench {
        #[command(flatten)]
        prompter: PrompterArgs,
        /// Backend ids, comma separated or repeated.
        #[arg(long, required = true, value_delimiter = ',')]
        backend: Vec<String>,
        #[arg(long, default_value = "tasks.json")]
        tasks: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_images: usize,
        #[arg(long, default_value_t = 1)]
        n_prompts: usize,
        /// Human submissions exported by `export-log`; needed with `--prompter human`.
        #[arg(long)]
        human_log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep best-of-N pool sizes over nested prefixes.
    Stability {
        #[command(flatten)]
        prompter: PrompterArgs,
        #[arg(long)]
        backend: String,
        #[arg(long, default_value = "tasks.json")]
        tasks: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        grid_images: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        grid_prompts: Vec<usize>,
        /// Images per prompt on the prompt axis.
        #[arg(long, default_value_t = 4)]
        fixed_images: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agreement between judge records and the gold ratings.
    MetaEval {
        #[arg(long)]
        gold: PathBuf,
        /// A records file or a directory of `*.jsonl` files.
        #[arg(long)]
        records: PathBuf,
        /// Supplies categories for items that lack them.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Also report the leave-one-rater-out human baseline.
        #[arg(long)]
        human_baseline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-judge the gold items under one exemplar-selection strategy.
    Ablate {
        #[arg(long)]
        strategy: AblationStrategy,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "tasks.json")]
        tasks: PathBuf,
        /// Seed for random exemplar selection.
        #[arg(long, default_value_t = 0)]
        retrieval_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the study session API and the UI bundle.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        assignment_seed: u64,
        /// JSON array of `{anon_id, group}`.
        #[arg(long)]
        participants: PathBuf,
        #[arg(long, default_value = "session-data")]
        data_dir: PathBuf,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Root for target image paths; defaults to the tasks file's directory.
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Write the submission log sorted for the bench's human-log ingest.
    ExportLog {
        #[arg(long, default_value = "session-data")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PrompterArgs {
    /// A chat model id from the registry, `human`, or `direct`.
    #[arg(long)]
    prompter: String,
    #[arg(long)]
    strategy: Option<Strategy>,
}

impl PrompterArgs {
    fn spec(&self) -> Result<PrompterSpec> {
        match self.prompter.as_str() {
            "direct" => Ok(PrompterSpec::direct()),
            "human" => Ok(PrompterSpec::human(
                self.strategy.ok_or_else(|| anyhow!("--prompter human needs --strategy to pick the group"))?,
            )),
            model => Ok(PrompterSpec::mllm(
                model,
                self.strategy.ok_or_else(|| anyhow!("--prompter {model} needs --strategy novice|skilled"))?,
            )),
        }
    }
}

impl ModelArgs {
    fn registry(&self) -> Result<ModelRegistry> {
        let text = std::fs::read_to_string(&self.registry)
            .with_context(|| format!("cannot read registry {}", self.registry.display()))?;
        let source = match self.seed {
            Some(seed) => {
                let mut config: RegistryConfig = toml::from_str(&text).context("malformed registry")?;
                config.seed = seed;
                toml::to_string(&config)?
            }
            None => text,
        };
        Ok(load_model_registry(&source, |var| std::env::var(var).ok())?)
    }

    fn templates(&self) -> Result<Arc<TemplateSet>> {
        Ok(Arc::new(match &self.templates {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        }))
    }

    fn judge(&self, registry: &ModelRegistry) -> Result<Judge> {
        let mut judge = Judge::new(registry.chat(&self.judge)?)
            .with_embedders(registry.embedder(&self.text_embedder)?, registry.embedder(&self.image_embedder)?)
            .with_templates(self.templates()?)
            .with_config(JudgeConfig::default());
        for skill in MemorySkill::ALL {
            let dir = self.memory.join(skill.as_str());
            if dir.join(atelier_core::memory::MANIFEST_FILE).exists() {
                judge = judge.with_memory(Arc::new(ExemplarMemory::load(&dir)?));
            } else {
                warn!("no memory for {skill} under {}", self.memory.display());
            }
        }
        Ok(judge)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_contexts(path: &Path) -> Result<Vec<TaskContext>> {
    let root = parent_dir(path);
    read_tasks(path)
        .with_context(|| format!("cannot load tasks from {}", path.display()))?
        .into_iter()
        .map(|t| TaskContext::load(t, &root).map_err(Into::into))
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn write_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut body = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut body, r)?;
        body.push(b'\n');
    }
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn validate_tasks(path: &Path, report: Option<&Path>) -> Result<()> {
    let tasks = read_tasks(path).with_context(|| format!("cannot load tasks from {}", path.display()))?;
    let reports: Vec<_> = tasks.iter().map(validate_task).collect();
    let mut ids = std::collections::BTreeSet::new();
    let duplicates: Vec<&str> = tasks.iter().filter(|t| !ids.insert(&t.id)).map(|t| t.id.as_str()).collect();
    for r in reports.iter().filter(|r| !r.is_ok()) {
        for v in &r.violations {
            println!("{}: {v}", r.task_id);
        }
    }
    for id in &duplicates {
        println!("{id}: duplicate task id");
    }
    let bad = reports.iter().filter(|r| !r.is_ok()).count();
    println!("{} tasks, {} valid, {} with violations", tasks.len(), tasks.len() - bad, bad);
    if let Some(out) = report {
        write_json(out, &reports)?;
    }
    if bad > 0 || !duplicates.is_empty() {
        bail!("task corpus has violations");
    }
    Ok(())
}

async fn build_memory_cmd(
    models: &ModelArgs,
    skill: MemorySkill,
    exemplars: &Path,
    annotations: &Path,
    threshold: f64,
    out: Option<PathBuf>,
    image_root: Option<PathBuf>,
) -> Result<()> {
    let registry = models.registry()?;
    let embedder = match skill.modality() {
        Modality::Prompt => registry.embedder(&models.text_embedder)?,
        Modality::Image => registry.embedder(&models.image_embedder)?,
    };
    let raw = std::fs::read_to_string(exemplars).with_context(|| format!("cannot read {}", exemplars.display()))?;
    let candidates = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str::<Exemplar>(l).with_context(|| format!("{} line {}", exemplars.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<AnnotationSet> = serde_json::from_str(
        &std::fs::read_to_string(annotations).with_context(|| format!("cannot read {}", annotations.display()))?,
    )
    .with_context(|| format!("malformed annotations {}", annotations.display()))?;
    let root = image_root.unwrap_or_else(|| parent_dir(annotations));
    let root = std::path::absolute(&root)?;
    let (mut memory, report) =
        build_memory(skill, embedder.as_ref(), candidates, &index_annotations(sets)?, threshold, root).await?;
    memory.seal();
    let out = out.unwrap_or_else(|| models.memory.join(skill.as_str()));
    memory.save(&out)?;
    for (id, alpha) in &report.accepted {
        println!("accepted {id} alpha={alpha:.4}");
    }
    for r in &report.rejected {
        match r.alpha {
            Some(a) => println!("rejected {} alpha={a:.4}: {}", r.id, r.reason),
            None => println!("rejected {}: {}", r.id, r.reason),
        }
    }
    println!("{skill}: {} accepted, {} rejected, saved to {}", report.accepted.len(), report.rejected.len(), out.display());
    Ok(())
}

async fn evaluate(
    models: &ModelArgs,
    task_id: &str,
    tasks: &Path,
    prompt_file: &Path,
    image: &Path,
    out: &Path,
    prompter_id: &str,
) -> Result<()> {
    let registry = models.registry()?;
    let judge = models.judge(&registry)?;
    let task = read_tasks(tasks)?
        .into_iter()
        .find(|t| t.id == task_id)
        .ok_or_else(|| anyhow!("no task {task_id} in {}", tasks.display()))?;
    let ctx = TaskContext::load(task, &parent_dir(tasks))?;
    let prompt = std::fs::read_to_string(prompt_file).with_context(|| format!("cannot read {}", prompt_file.display()))?;
    let image = ImageData::read(image)?;
    let record = judge.evaluate_submission(&ctx, prompter_id, prompt.trim(), &image).await?;
    let mut line = serde_json::to_vec(&record)?;
    line.push(b'\n');
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .and_then(|mut f| f.write_all(&line))
        .with_context(|| format!("cannot append to {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn bench_context(models: &ModelArgs, registry: &ModelRegistry, spec: &PrompterSpec, backends: &[String]) -> Result<BenchContext> {
    let mut prompters = BTreeMap::new();
    if let Some(model) = &spec.model_id {
        prompters.insert(model.clone(), registry.chat(model)?);
    }
    let backends = backends
        .iter()
        .map(|b| Ok((b.clone(), registry.t2i(b)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(BenchContext {
        judge: Arc::new(models.judge(registry)?),
        prompters,
        backends,
        templates: models.templates()?,
    })
}

#[allow(clippy::too_many_arguments)]
async fn bench(
    models: &ModelArgs,
    prompter: &PrompterArgs,
    backends: Vec<String>,
    tasks: &Path,
    n_images: usize,
    n_prompts: usize,
    human_log: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let registry = models.registry()?;
    let spec = prompter.spec()?;
    let ctx = bench_context(models, &registry, &spec, &backends)?;
    let contexts = load_contexts(tasks)?;
    let run = RunConfig {
        n_prompts,
        n_images,
        backends,
        seed: registry.config.seed,
        workers: models.workers,
        ..RunConfig::default()
    };
    run.check()?;
    let records: Vec<TaskRunRecord> = match human_log {
        Some(path) => ctx.run_human(&spec, &HumanLog::load(path)?, &contexts, &run).await,
        None if spec.prompter_id.starts_with("human-") => bail!("--prompter human needs --human-log"),
        None => ctx.run_bench(&spec, &contexts, &run).await,
    };
    std::fs::create_dir_all(out)?;
    write_lines(&out.join("records.jsonl"), &records)?;
    let report = aggregate_report(&records);
    write_json(&out.join("report.json"), &report)?;
    let table = format_table(&report);
    std::fs::write(out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

async fn stability(
    models: &ModelArgs,
    prompter: &PrompterArgs,
    backend: String,
    tasks: &Path,
    grid: SweepGrid,
    out: &Path,
) -> Result<()> {
    let registry = models.registry()?;
    let spec = prompter.spec()?;
    let ctx = bench_context(models, &registry, &spec, std::slice::from_ref(&backend))?;
    let contexts = load_contexts(tasks)?;
    let run = RunConfig {
        backends: vec![backend.clone()],
        seed: registry.config.seed,
        workers: models.workers,
        ..RunConfig::default()
    };
    let table = stability_sweep(&ctx, &spec, &contexts, &backend, &grid, &run).await?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("stability.json"), &table)?;
    let f = |x: Option<f64>, digits: usize| x.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "n/a".into());
    let mut text = format!(
        "{} on {}\n{:<8}{:>10}{:>10}{:>16}{:>12}\n",
        table.prompter_id, table.backend_id, "axis", "prompts", "images", "Image Obj. (%)", "Image Subj."
    );
    for p in &table.points {
        text.push_str(&format!(
            "{:<8}{:>10}{:>10}{:>16}{:>12}\n",
            format!("{:?}", p.axis).to_lowercase(),
            p.n_prompts,
            p.n_images,
            f(p.image_objective, 1),
            f(p.image_subjective, 2)
        ));
    }
    for (task, reason) in &table.skipped {
        text.push_str(&format!("skipped {task}: {reason}\n"));
    }
    std::fs::write(out.join("stability.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Judge records from a file or directory. Bench run records contribute
/// their selected candidate.
fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut records = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let value: serde_json::Value =
                serde_json::from_str(line).with_context(|| format!("{} line {}", file.display(), i + 1))?;
            if value.get("candidates").is_some() {
                let run: TaskRunRecord = serde_json::from_value(value)?;
                records.extend(run.selected().cloned());
            } else {
                records.push(serde_json::from_value(value).with_context(|| format!("{} line {}", file.display(), i + 1))?);
            }
        }
    }
    Ok(records)
}

fn load_gold(path: &Path, tasks: Option<&[Task]>) -> Result<GoldSet> {
    let mut gold = GoldSet::load(path)?;
    if let Some(tasks) = tasks {
        gold.attach_categories(tasks);
    }
    Ok(gold)
}

fn meta_eval(gold: &Path, records: &Path, tasks: Option<&Path>, baseline: bool, out: Option<&Path>) -> Result<()> {
    let tasks = tasks.map(read_tasks).transpose()?;
    let gold = load_gold(gold, tasks.as_deref())?;
    let records = read_records(records)?;
    let report = meta_evaluate(&gold, &records)?;
    print!("{}", format_report(&report));
    let loo = if baseline {
        let loo = human_loo_baseline(&gold)?;
        println!("\nhuman leave-one-out baseline");
        print!("{}", format_report(&loo));
        Some(loo)
    } else {
        None
    };
    if let Some(out) = out {
        write_json(out, &serde_json::json!({ "judge": report, "human_baseline": loo }))?;
    }
    Ok(())
}

async fn ablate(
    models: &ModelArgs,
    strategy: AblationStrategy,
    k: usize,
    gold: &Path,
    tasks: &Path,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let registry = models.registry()?;
    let judge = models.judge(&registry)?;
    let contexts = load_contexts(tasks)?;
    let plain: Vec<Task> = contexts.iter().map(|c| c.task.clone()).collect();
    let gold_set = load_gold(gold, Some(&plain))?;
    let report = ablation_run(strategy, k, seed, &gold_set, &judge, &contexts, &parent_dir(gold), models.workers).await?;
    println!("{strategy:?} k={k}");
    print!("{}", format_report(&report.report));
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn serve(
    host: &str,
    port: u16,
    tasks: &Path,
    seed: u64,
    participants: &Path,
    data_dir: PathBuf,
    ui_dir: Option<PathBuf>,
    image_root: Option<PathBuf>,
) -> Result<()> {
    let tasks_list = read_tasks(tasks)?;
    let people: Vec<Participant> = serde_json::from_str(
        &std::fs::read_to_string(participants).with_context(|| format!("cannot read {}", participants.display()))?,
    )
    .with_context(|| format!("malformed participants file {}", participants.display()))?;
    let mut plans = BTreeMap::new();
    for group in [Group::Novice, Group::Skilled] {
        let members: Vec<Participant> = people.iter().filter(|p| p.group == group).cloned().collect();
        if !members.is_empty() {
            plans.extend(plan_group_assignment(&members, &tasks_list, seed).with_context(|| format!("{} group", group.as_str()))?);
        }
    }
    let service = SessionService::open(ServiceConfig {
        participants: people,
        plans,
        tasks: tasks_list,
        image_root: image_root.unwrap_or_else(|| parent_dir(tasks)),
        data_dir,
        clock: Arc::new(SystemClock),
    })?;
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(service), ui_dir)).await?;
    Ok(())
}

fn export(data_dir: &Path, out: &Path) -> Result<()> {
    let rows = export_log(data_dir)?;
    write_export(&rows, out)?;
    println!("exported {} submissions to {}", rows.len(), out.display());
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();
    let m = &cli.models;
    match cli.command {
        Command::ValidateTasks { path, report } => validate_tasks(&path, report.as_deref()),
        Command::BuildMemory {
            skill,
            exemplars,
            annotations,
            alpha_threshold,
            out,
            image_root,
        } => build_memory_cmd(m, skill, &exemplars, &annotations, alpha_threshold, out, image_root).await,
        Command::Evaluate {
            task,
            tasks,
            prompt_file,
            image,
            out,
            prompter_id,
        } => evaluate(m, &task, &tasks, &prompt_file, &image, &out, &prompter_id).await,
        Command::Bench {
            prompter,
            backend,
            tasks,
            n_images,
            n_prompts,
            human_log,
            out,
        } => bench(m, &prompter, backend, &tasks, n_images, n_prompts, human_log.as_deref(), &out).await,
        Command::Stability {
            prompter,
            backend,
            tasks,
            grid_images,
            grid_prompts,
            fixed_images,
            out,
        } => {
            let grid = SweepGrid {
                n_images: grid_images,
                n_prompts: grid_prompts,
                fixed_images,
            };
            stability(m, &prompter, backend, &tasks, grid, &out).await
        }
        Command::MetaEval {
            gold,
            records,
            tasks,
            human_baseline,
            out,
        } => meta_eval(&gold, &records, tasks.as_deref(), human_baseline, out.as_deref()),
        Command::Ablate {
            strategy,
            k,
            gold,
            tasks,
            retrieval_seed,
            out,
        } => ablate(m, strategy, k, &gold, &tasks, retrieval_seed, out.as_deref()).await,
        Command::Serve {
            port,
            host,
            tasks,
            assignment_seed,
            participants,
            data_dir,
            ui_dir,
            image_root,
        } => serve(&host, port, &tasks, assignment_seed, &participants, data_dir, ui_dir, image_root).await,
        Command::ExportLog { data_dir, out } => export(&data_dir, &out),
    }
}
