use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nbr::corpus::io::{
    read_corpus_ndjson, read_transactions_csv, read_vocab_json, write_corpus_ndjson, write_transactions_csv,
    write_vocab_json, ColumnMap, OrderSource,
};
use nbr::corpus::synth::{generate_synthetic, SynthConfig};
use nbr::corpus::{corpus_stats, ingest, preprocess, split, FilterConfig, SplitCorpus, Transaction};
use nbr::fairness::{bin_and_report, compute_traits, Axis};
use nbr::metrics::{evaluate, read_per_user_column, DEFAULT_KS, DEFAULT_MRR_K};
use nbr::recommend::{
    read_predictions_ndjson, top_personal_all, user_vectors, write_predictions_ndjson, HyperParams, Padding, TifuKnn,
};
use nbr::tuning::{grid_search, make_validation_split, random_search, DEFAULT_TRIALS};
use nbr::vectors::write_vectors_ndjson;

use crate::config::{ModelConfig, RunConfig, SynthSection};
use crate::{
    Cli, Command, CorpusOpts, EvaluateArgs, ExportArgs, FairnessArgs, HpOpts, IngestArgs, RecommendArgs, SynthArgs,
    SynthOpts, TuneArgs, Usage,
};

const DEFAULT_LIST_LEN: usize = 20;

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

struct Ctx {
    seed: Option<u64>,
    out_dir: PathBuf,
    config: RunConfig,
}

impl Ctx {
    fn seed(&self, command: &str) -> Result<u64> {
        self.seed.ok_or_else(|| usage(format!("`{command}` is stochastic and needs --seed (or `seed` in the config)")))
    }

    /// Output path: the explicit one, or `name` inside the output directory.
    fn output(&self, explicit: Option<&Path>, name: &str) -> Result<PathBuf> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => self.out_dir.join(name),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }
}

pub fn run(cli: Cli, config: RunConfig) -> Result<()> {
    if let Some(threads) = cli.threads.or(config.threads) {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(config.seed),
        out_dir: cli.out_dir.or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        config,
    };
    match cli.command {
        Command::Synth(args) => synth(&ctx, args),
        Command::Ingest(args) => ingest_cmd(&ctx, args),
        Command::Recommend(args) => recommend(&ctx, args),
        Command::Evaluate(args) => evaluate_cmd(&ctx, args),
        Command::Fairness(args) => fairness(&ctx, args),
        Command::Tune(args) => tune(&ctx, args),
        Command::ExportVectors(args) => export_vectors(&ctx, args),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} does not exist", path.display())))
    }
}

fn resolved(path: &Path) -> PathBuf {
    if let Ok(p) = path.canonicalize() {
        return p;
    }
    // Outputs may not exist yet; resolve their directory instead.
    match (path.parent(), path.file_name()) {
        (Some(parent), Some(name)) => {
            let parent = if parent.as_os_str().is_empty() { Path::new(".") } else { parent };
            parent.canonicalize().map(|p| p.join(name)).unwrap_or_else(|_| path.to_path_buf())
        }
        _ => path.to_path_buf(),
    }
}

/// Refuses to run when an output would overwrite one of the inputs.
fn check_distinct(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for output in outputs {
        let out = resolved(output);
        if let Some(input) = inputs.iter().find(|i| resolved(i) == out) {
            return Err(usage(format!("{} is both an input and an output", input.display())));
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    require_file(path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn vocab_path(opts: &CorpusOpts) -> PathBuf {
    opts.vocab.clone().unwrap_or_else(|| {
        opts.corpus
            .parent()
            .map(|p| p.join("vocab.json"))
            .unwrap_or_else(|| PathBuf::from("vocab.json"))
    })
}

fn load_corpus(opts: &CorpusOpts) -> Result<SplitCorpus> {
    let vocab_file = vocab_path(opts);
    let vocab = read_vocab_json(open(&vocab_file)?).with_context(|| format!("reading {}", vocab_file.display()))?;
    read_corpus_ndjson(open(&opts.corpus)?, vocab).with_context(|| format!("reading {}", opts.corpus.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn synth_config(ctx: &Ctx, opts: &SynthOpts, cfg: &SynthSection, command: &str) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    Ok(SynthConfig {
        seed: ctx.seed(command)?,
        n_users: opts.users.or(cfg.users).unwrap_or(d.n_users),
        n_items: opts.items.or(cfg.items).unwrap_or(d.n_items),
        baskets_per_user: (
            opts.min_baskets_per_user.or(cfg.min_baskets).unwrap_or(d.baskets_per_user.0),
            opts.max_baskets_per_user.or(cfg.max_baskets).unwrap_or(d.baskets_per_user.1),
        ),
        basket_size: (
            opts.min_size.or(cfg.min_size).unwrap_or(d.basket_size.0),
            opts.max_size.or(cfg.max_size).unwrap_or(d.basket_size.1),
        ),
        popularity_skew: opts.skew.or(cfg.skew).unwrap_or(d.popularity_skew),
        repeat_ratio: opts.repeat_ratio.or(cfg.repeat_ratio).unwrap_or(d.repeat_ratio),
        pool_size: opts.pool_size.or(cfg.pool_size).unwrap_or(d.pool_size),
    })
}

fn synth(ctx: &Ctx, args: SynthArgs) -> Result<()> {
    let config = synth_config(ctx, &args.synth, &ctx.config.synth, "synth")?;
    let rows = generate_synthetic(&config)?;
    let path = ctx.output(args.output.as_deref(), "transactions.csv")?;
    write_transactions_csv(create(&path)?, &rows)?;
    eprintln!("wrote {} transactions to {}", rows.len(), path.display());
    Ok(())
}

fn ingest_cmd(ctx: &Ctx, args: IngestArgs) -> Result<()> {
    let cfg = &ctx.config.ingest;
    let input = args.input.clone().or_else(|| cfg.input.clone());
    let corpus_path = ctx.output(None, "corpus.ndjson")?;
    let vocab_path = ctx.output(None, "vocab.json")?;
    let stats_path = ctx.output(None, "stats.json")?;

    let rows: Vec<Transaction> = if args.synthetic {
        generate_synthetic(&synth_config(ctx, &args.synth, &ctx.config.synth, "ingest --synthetic")?)?
    } else {
        let Some(input) = input else {
            return Err(usage("ingest needs --input or --synthetic"));
        };
        check_distinct(&[&input], &[&corpus_path, &vocab_path, &stats_path])?;
        let order = match (args.timestamp_col.clone().or(cfg.timestamp_col.clone()), args.order_col.clone().or(cfg.order_col.clone())) {
            (Some(_), Some(_)) => return Err(usage("give either a timestamp column or an order column, not both")),
            (Some(col), None) => OrderSource::Timestamp(col),
            (None, Some(col)) => OrderSource::BasketOrder(col),
            (None, None) => OrderSource::Detect,
        };
        let d = ColumnMap::default();
        let columns = ColumnMap {
            user_id: args.user_col.clone().or(cfg.user_col.clone()).unwrap_or(d.user_id),
            basket_id: args.basket_col.clone().or(cfg.basket_col.clone()).unwrap_or(d.basket_id),
            item_id: args.item_col.clone().or(cfg.item_col.clone()).unwrap_or(d.item_id),
            order,
        };
        read_transactions_csv(open(&input)?, &columns).with_context(|| format!("reading {}", input.display()))?
    };

    let mut filter = if args.no_filter {
        FilterConfig::passthrough()
    } else {
        match args.dataset.as_deref().or(cfg.dataset.as_deref()) {
            Some(name) => FilterConfig::for_dataset(name)?,
            None => FilterConfig::default(),
        }
    };
    if let Some(v) = args.min_baskets.or(cfg.min_baskets) {
        filter.min_baskets = v;
    }
    if let Some(v) = args.min_item_users.or(cfg.min_item_users) {
        filter.min_item_users = v;
    }
    if let Some(v) = args.min_basket_size.or(cfg.min_basket_size) {
        filter.min_basket_size = v;
    }
    filter.until_stable |= args.until_stable || cfg.until_stable.unwrap_or(false);

    let corpus = preprocess(&ingest(rows)?, &filter)?;
    let stats = corpus_stats(&corpus);
    let held_out = split(&corpus)?;
    write_corpus_ndjson(create(&corpus_path)?, &held_out)?;
    write_vocab_json(create(&vocab_path)?, &held_out.vocab)?;
    write_json(&stats_path, &stats)?;
    eprintln!(
        "{} users, {} items, {} baskets -> {}",
        stats.users,
        stats.items,
        stats.baskets,
        ctx.out_dir.display()
    );
    Ok(())
}

/// Hyperparameters from a file or preset, overridden field by field.
fn resolve_hp(opts: &HpOpts, cfg: &ModelConfig, need_knn: bool) -> Result<HyperParams> {
    let base = if let Some(file) = &opts.hp_file {
        let hp: HyperParams = serde_json::from_reader(open(file)?)
            .map_err(|e| usage(format!("invalid hyperparameter file {}: {e}", file.display())))?;
        Some(hp)
    } else if let Some(name) = opts.preset.as_deref().or(cfg.preset.as_deref()) {
        Some(HyperParams::preset(name)?)
    } else {
        None
    };
    let k = opts.k.or(cfg.k).or(base.map(|b| b.k));
    let r_b = opts.r_b.or(cfg.r_b).or(base.map(|b| b.decay.r_b));
    let r_g = opts.r_g.or(cfg.r_g).or(base.map(|b| b.decay.r_g));
    let m = opts.m.or(cfg.m).or(base.map(|b| b.decay.m));
    let alpha = opts.alpha.or(cfg.alpha).or(base.map(|b| b.alpha));
    let mut missing: Vec<&str> = Vec::new();
    for (name, set) in [("r-b", r_b.is_some()), ("r-g", r_g.is_some()), ("m", m.is_some())] {
        if !set {
            missing.push(name);
        }
    }
    if need_knn {
        for (name, set) in [("k", k.is_some()), ("alpha", alpha.is_some())] {
            if !set {
                missing.push(name);
            }
        }
    }
    if !missing.is_empty() {
        return Err(usage(format!(
            "missing hyperparameters: {}; give --preset, --hp-file or explicit flags",
            missing.join(", ")
        )));
    }
    let mut hp = HyperParams::new(k.unwrap_or(1), r_b.unwrap(), r_g.unwrap(), m.unwrap(), alpha.unwrap_or(1.0));
    if let Some(b) = base {
        hp.basket_size = b.basket_size;
    }
    hp.validate()?;
    Ok(hp)
}

enum Model {
    TopPersonal,
    TifuKnn,
}

fn parse_model(name: &str) -> Result<Model> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "top-personal" | "toppersonal" | "personal-top-frequency" => Ok(Model::TopPersonal),
        "tifuknn" | "tifu-knn" => Ok(Model::TifuKnn),
        other => Err(usage(format!("unknown model `{other}`; expected top-personal or tifuknn"))),
    }
}

fn recommend(ctx: &Ctx, args: RecommendArgs) -> Result<()> {
    let cfg = &ctx.config.model;
    let model = parse_model(
        args.model
            .as_deref()
            .or(cfg.name.as_deref())
            .ok_or_else(|| usage("recommend needs --model"))?,
    )?;
    let output = ctx.output(args.output.as_deref(), "predictions.ndjson")?;
    check_distinct(&[&args.corpus.corpus, &vocab_path(&args.corpus)], &[&output])?;
    let padding = if args.no_padding || cfg.no_padding.unwrap_or(false) {
        Padding::Disabled
    } else {
        Padding::Popularity
    };
    let k_items = args.k_items.or(cfg.k_items);
    if k_items == Some(0) {
        return Err(usage("--k-items must be at least 1"));
    }
    // Validate hyperparameters before the (possibly large) corpus is read.
    let hp = match model {
        Model::TifuKnn => {
            let mut hp = resolve_hp(&args.hp, cfg, true)?;
            if let Some(s) = k_items {
                hp.basket_size = s;
            }
            Some(hp)
        }
        Model::TopPersonal => None,
    };
    let corpus = load_corpus(&args.corpus)?;
    let predictions = match hp {
        Some(hp) => TifuKnn::fit(&corpus, hp)?.recommend_all(padding),
        None => top_personal_all(&corpus, k_items.unwrap_or(DEFAULT_LIST_LEN), padding),
    };
    write_predictions_ndjson(create(&output)?, &predictions)?;
    eprintln!("wrote {} prediction lists to {}", predictions.len(), output.display());
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx, args: EvaluateArgs) -> Result<()> {
    let cfg = &ctx.config.evaluate;
    let ks = args.ks.clone().or(cfg.ks.clone()).unwrap_or_else(|| DEFAULT_KS.to_vec());
    let mrr_k = args.mrr_k.or(cfg.mrr_k).unwrap_or(DEFAULT_MRR_K);
    let json_path = ctx.output(None, "metrics.json")?;
    let table_path = ctx.output(None, "metrics.txt")?;
    let per_user_path = ctx.output(None, "per_user.csv")?;
    check_distinct(
        &[&args.predictions, &args.corpus.corpus, &vocab_path(&args.corpus)],
        &[&json_path, &table_path, &per_user_path],
    )?;
    let corpus = load_corpus(&args.corpus)?;
    let predictions = read_predictions_ndjson(open(&args.predictions)?, Some(corpus.n_items()))
        .with_context(|| format!("reading {}", args.predictions.display()))?;
    let report = evaluate(&predictions, &corpus, &ks, mrr_k)?;
    let table = report.to_table();
    let mut out = create(&json_path)?;
    writeln!(out, "{}", report.to_json())?;
    out.flush()?;
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    report.write_per_user_csv(create(&per_user_path)?)?;
    print!("{table}");
    Ok(())
}

fn fairness(ctx: &Ctx, args: FairnessArgs) -> Result<()> {
    let axes: Vec<Axis> = if args.axis.is_empty() {
        Axis::ALL.to_vec()
    } else {
        args.axis.iter().map(|a| a.parse()).collect::<nbr::Result<_>>()?
    };
    let csv_paths = axes
        .iter()
        .map(|a| ctx.output(None, &format!("fairness_{}.csv", a.name())))
        .collect::<Result<Vec<_>>>()?;
    let json_path = ctx.output(None, "fairness.json")?;
    let mut outputs: Vec<&Path> = csv_paths.iter().map(PathBuf::as_path).collect();
    outputs.push(&json_path);
    check_distinct(&[&args.per_user, &args.corpus.corpus, &vocab_path(&args.corpus)], &outputs)?;

    let corpus = load_corpus(&args.corpus)?;
    let recalls: HashMap<String, f64> = read_per_user_column(open(&args.per_user)?, "recall_at_10")
        .with_context(|| format!("reading {}", args.per_user.display()))?;
    let traits = compute_traits(&corpus);
    let mut reports = Vec::with_capacity(axes.len());
    for (axis, path) in axes.iter().zip(&csv_paths) {
        let bins = bin_and_report(&traits, &recalls, *axis)?;
        bins.write_csv(create(path)?)?;
        eprintln!("{}: {} users binned -> {}", axis, bins.total_users(), path.display());
        reports.push(bins);
    }
    write_json(&json_path, &reports)
}

fn tune(ctx: &Ctx, args: TuneArgs) -> Result<()> {
    let cfg = &ctx.config.tune;
    let space = cfg.space.clone().unwrap_or_default();
    let basket_size = args.k_items.or(ctx.config.model.k_items).unwrap_or(DEFAULT_LIST_LEN);
    if basket_size == 0 {
        return Err(usage("--k-items must be at least 1"));
    }
    let grid = args.grid || cfg.grid.unwrap_or(false);
    let trials_path = ctx.output(None, "trials.csv")?;
    let best_path = ctx.output(None, "best_hp.json")?;
    check_distinct(&[&args.corpus.corpus, &vocab_path(&args.corpus)], &[&trials_path, &best_path])?;
    let seed = if grid { None } else { Some(ctx.seed("tune")?) };

    let corpus = load_corpus(&args.corpus)?;
    let split = make_validation_split(&corpus)?;
    if !split.excluded.is_empty() {
        eprintln!("{} user(s) with a single history basket left out of tuning", split.excluded.len());
    }
    let outcome = match seed {
        Some(seed) => {
            let n_trials = args.trials.or(cfg.trials).unwrap_or(DEFAULT_TRIALS);
            random_search(&split, &space, n_trials, seed, basket_size)?
        }
        None => grid_search(&split, &space, basket_size)?,
    };
    outcome.write_csv(create(&trials_path)?, !args.no_timing)?;
    write_json(&best_path, &outcome.best.hp)?;
    let hp = outcome.best.hp;
    println!(
        "best trial {}: k={} r_b={} r_g={} m={} alpha={} recall@10={:.4}",
        outcome.best.trial, hp.k, hp.decay.r_b, hp.decay.r_g, hp.decay.m, hp.alpha, outcome.best.recall_at_10
    );
    Ok(())
}

fn export_vectors(ctx: &Ctx, args: ExportArgs) -> Result<()> {
    let hp = resolve_hp(&args.hp, &ctx.config.model, false)?;
    let output = ctx.output(args.output.as_deref(), "vectors.ndjson")?;
    check_distinct(&[&args.corpus.corpus, &vocab_path(&args.corpus)], &[&output])?;
    let corpus = load_corpus(&args.corpus)?;
    let vectors = user_vectors(&corpus, &hp.decay)?;
    if vectors.is_empty() {
        return Err(nbr::Error::EmptyCorpus.into());
    }
    write_vectors_ndjson(create(&output)?, vectors.iter().map(|(id, v)| (id.as_str(), v)))?;
    eprintln!("wrote {} vectors to {}", vectors.len(), output.display());
    Ok(())
}
