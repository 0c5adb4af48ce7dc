//! The run / replay / metrics subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use harvest_core::llm::{
    CompletionProvider, HashProvider, LiveProvider, ProviderConfig, ScriptedProvider,
};
use harvest_core::log::EpisodeLog;
use harvest_core::metrics::{
    self, attack_target_share_batch, average_series, batch_summary, MetricSeries, Population,
};
use harvest_core::runtime::run_episode;
use harvest_core::scenario::ScenarioConfig;
use harvest_core::substrate::EntityKind;
use harvest_core::llm::HashEmbedder;

/// Errors carrying their exit code: 1 usage, 2 configuration, 3 runtime,
/// 4 verification.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m)
            | CliError::Config(m)
            | CliError::Runtime(m)
            | CliError::Verification(m) => write!(f, "{m}"),
        }
    }
}

pub struct RunArgs {
    pub scenario: String,
    pub reps: u32,
    pub seed: u64,
    pub provider: String,
    pub jobs: usize,
    pub out: String,
    pub endpoint: Option<String>,
    pub token_env: String,
    pub model: String,
    pub action_model: String,
}

enum ProviderChoice {
    Live,
    Scripted(String),
    Hash,
}

fn resolve_scenario(arg: &str) -> Result<ScenarioConfig, CliError> {
    if ScenarioConfig::library_names().contains(&arg) {
        return ScenarioConfig::from_library(arg).map_err(|e| CliError::Config(e.to_string()));
    }
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read scenario file {arg}: {e}")))?;
        return ScenarioConfig::from_toml(&text).map_err(|e| CliError::Config(e.to_string()));
    }
    Err(CliError::Config(format!(
        "unknown scenario `{arg}` (library: {})",
        ScenarioConfig::library_names().join(", ")
    )))
}

fn provider_setup(args: &RunArgs) -> Result<(ProviderChoice, ProviderConfig), CliError> {
    let mut config = ProviderConfig {
        token_env: args.token_env.clone(),
        default_model: args.model.clone(),
        action_model: args.action_model.clone(),
        ..ProviderConfig::default()
    };
    if let Some(endpoint) = &args.endpoint {
        config.endpoint = endpoint.clone();
    }
    let choice = match args.provider.as_str() {
        "live" => {
            // Fail before any episode starts, not in the middle of one.
            if std::env::var(&config.token_env).is_err() {
                return Err(CliError::Config(format!(
                    "live provider selected but ${} is not set",
                    config.token_env
                )));
            }
            ProviderChoice::Live
        }
        "hash-embed" => ProviderChoice::Hash,
        other => match other.strip_prefix("scripted:") {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read script file {path}: {e}"))
                })?;
                ProviderChoice::Scripted(text)
            }
            None => {
                return Err(CliError::Config(format!(
                    "unknown provider `{other}` (expected live, scripted:<file>, or hash-embed)"
                )))
            }
        },
    };
    Ok((choice, config))
}

fn make_provider(
    choice: &ProviderChoice,
    config: &ProviderConfig,
    dims: (i32, i32),
    seed: u64,
) -> Result<Box<dyn CompletionProvider>, CliError> {
    match choice {
        ProviderChoice::Live => Ok(Box::new(
            LiveProvider::new(config.clone()).map_err(|e| CliError::Config(e.to_string()))?,
        )),
        ProviderChoice::Scripted(text) => Ok(Box::new(ScriptedProvider::parse(text))),
        ProviderChoice::Hash => Ok(Box::new(HashProvider::new(dims.0, dims.1, seed))),
    }
}

fn episode_summary(log: &EpisodeLog, seed: u64) -> Result<serde_json::Value, CliError> {
    let as_runtime = |e: metrics::MetricsError| CliError::Runtime(e.to_string());
    let (terminal, _, end) = log
        .end()
        .ok_or_else(|| CliError::Runtime("episode log has no end record".into()))?;
    let focal = metrics::per_capita_reward(log, &Population::Focal).map_err(as_runtime)?;
    let attacks = metrics::attack_stats(log).map_err(as_runtime)?;
    let depletions = metrics::took_last_apple(log).map_err(as_runtime)?;
    let has_bots =
        log.header().map(|h| h.roster.iter().any(|e| e.kind == EntityKind::Bot)).unwrap_or(false);
    let bots = if has_bots {
        Some(metrics::per_capita_reward(log, &Population::Bots).map_err(as_runtime)?)
    } else {
        None
    };
    Ok(serde_json::json!({
        "seed": seed,
        "terminal": terminal,
        "rounds": end.round,
        "final_per_capita_focal": focal.points.last().map(|p| p.1),
        "final_per_capita_bots": bots.as_ref().and_then(|s| s.points.last().map(|p| p.1)),
        "attacks": attacks,
        "took_last_apple": depletions,
    }))
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let scenario = resolve_scenario(&args.scenario)?;
    let (choice, provider_config) = provider_setup(args)?;
    let out_dir = PathBuf::from(&args.out);
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;

    let map = scenario.map_ascii().map_err(|e| CliError::Config(e.to_string()))?;
    let rows = map.lines().filter(|l| !l.is_empty()).count() as i32;
    let cols = map.lines().next().map(|l| l.chars().count()).unwrap_or(0) as i32;

    let next = AtomicU32::new(0);
    let results: Mutex<Vec<(u64, EpisodeLog, PathBuf)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let jobs = args.jobs.max(1);

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(args.reps as usize) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= args.reps || failure.lock().unwrap().is_some() {
                    return;
                }
                let seed = args.seed + u64::from(i);
                let outcome = (|| -> Result<(u64, EpisodeLog, PathBuf), CliError> {
                    let mut provider = make_provider(&choice, &provider_config, (rows, cols), seed)?;
                    let embedder = HashEmbedder::default();
                    let log = run_episode(
                        &scenario,
                        seed,
                        provider.as_mut(),
                        &provider_config,
                        &embedder,
                    )
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                    let path = out_dir.join(format!("{}_{}.log", scenario.name, seed));
                    log.write_to(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
                    let summary = episode_summary(&log, seed)?;
                    let summary_path =
                        out_dir.join(format!("{}_{}.summary.json", scenario.name, seed));
                    fs::write(&summary_path, serde_json::to_string_pretty(&summary).unwrap())
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    Ok((seed, log, path))
                })();
                match outcome {
                    Ok(done) => results.lock().unwrap().push(done),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(seed, _, _)| *seed);
    for (seed, log, path) in &results {
        let (terminal, _, end) = log.end().expect("completed episodes have an end record");
        println!("{} seed={seed} terminal={terminal} rounds={}", path.display(), end.round);
    }
    let logs: Vec<EpisodeLog> = results.into_iter().map(|(_, log, _)| log).collect();
    let summary = batch_summary(&logs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = out_dir.join(format!("{}_summary.json", scenario.name));
    fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{}", path.display());
    Ok(())
}

pub fn cmd_replay(log_path: &str, quiet: bool) -> Result<(), CliError> {
    let text = fs::read_to_string(log_path)
        .map_err(|e| CliError::Config(format!("cannot read {log_path}: {e}")))?;
    let log = EpisodeLog::parse(&text)
        .map_err(|e| CliError::Verification(format!("log does not parse: {e}")))?;
    if let Some(header) = log.header() {
        println!(
            "scenario={} seed={} provider={}",
            header.scenario.name, header.seed, header.provider
        );
    }
    let state = log
        .replay_with(|state, record| {
            if quiet {
                return;
            }
            match &record.body {
                harvest_core::log::RecordBody::Header(_) => {
                    println!("round 0 (initial)\n{}", state.render_ascii());
                }
                harvest_core::log::RecordBody::Round { completed } => {
                    println!("round {completed}\n{}", state.render_ascii());
                }
                _ => {}
            }
        })
        .map_err(|e| CliError::Verification(e.to_string()))?;
    let (terminal, state_hash, _) = log.end().expect("verified log has an end record");
    println!("final ({terminal})\n{}", state.render_ascii());
    println!("verified: state hash {state_hash} ok, event stream ok");
    Ok(())
}

pub fn cmd_metrics(globs: &[String], out: &str) -> Result<(), CliError> {
    if globs.is_empty() {
        return Err(CliError::Usage("no log files or glob patterns given".into()));
    }
    let mut paths: Vec<PathBuf> = Vec::new();
    for pattern in globs {
        let matches =
            glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad glob {pattern}: {e}")))?;
        for entry in matches {
            match entry {
                Ok(path) if path.is_file() => paths.push(path),
                Ok(_) => {}
                Err(e) => return Err(CliError::Config(e.to_string())),
            }
        }
    }
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Err(CliError::Config("no logs match the given patterns".into()));
    }

    let mut logs = Vec::new();
    for path in &paths {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let log = EpisodeLog::parse(&text).map_err(|e| {
            CliError::Verification(format!("{} does not parse: {e}", path.display()))
        })?;
        logs.push(log);
    }
    let scenario_names: Vec<String> = logs
        .iter()
        .map(|l| {
            l.header()
                .map(|h| h.scenario.name.clone())
                .ok_or_else(|| CliError::Verification("log has no header".into()))
        })
        .collect::<Result<_, _>>()?;
    if scenario_names.windows(2).any(|w| w[0] != w[1]) {
        return Err(CliError::Config(format!(
            "logs mix scenarios: {}",
            {
                let mut names = scenario_names.clone();
                names.sort();
                names.dedup();
                names.join(", ")
            }
        )));
    }

    let out_dir = PathBuf::from(out);
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let as_runtime = |e: metrics::MetricsError| CliError::Runtime(e.to_string());

    let header = logs[0].header().unwrap().clone();
    let has_bots = header.roster.iter().any(|e| e.kind == EntityKind::Bot);
    let focal_names: Vec<String> = header
        .roster
        .iter()
        .filter(|e| e.kind == EntityKind::LlmAgent)
        .map(|e| e.id.clone())
        .collect();

    let mut written = Vec::new();
    let mut write = |name: &str, content: String| -> Result<(), CliError> {
        let path = out_dir.join(name);
        fs::write(&path, content).map_err(|e| CliError::Runtime(e.to_string()))?;
        written.push(path.display().to_string());
        Ok(())
    };

    // Per-capita reward and apple availability series, averaged by round
    // across the batch.
    let mut reward_series: Vec<MetricSeries> = Vec::new();
    let focal_per_log: Vec<MetricSeries> = logs
        .iter()
        .map(|l| metrics::per_capita_reward(l, &Population::Focal))
        .collect::<Result<_, _>>()
        .map_err(as_runtime)?;
    reward_series.extend(average_series(&focal_per_log));
    if has_bots {
        let bots_per_log: Vec<MetricSeries> = logs
            .iter()
            .map(|l| metrics::per_capita_reward(l, &Population::Bots))
            .collect::<Result<_, _>>()
            .map_err(as_runtime)?;
        reward_series.extend(average_series(&bots_per_log));
    }
    write("per_capita_reward.csv", metrics::series_to_csv(&reward_series))?;
    write(
        "per_capita_reward.svg",
        metrics::line_chart_svg("Per capita reward", &reward_series),
    )?;

    let apples_per_log: Vec<MetricSeries> = logs
        .iter()
        .map(metrics::apples_available)
        .collect::<Result<_, _>>()
        .map_err(as_runtime)?;
    let apples = average_series(&apples_per_log).into_iter().collect::<Vec<_>>();
    write("apples_available.csv", metrics::series_to_csv(&apples))?;
    write("apples_available.svg", metrics::line_chart_svg("Available apples", &apples))?;

    // Attack counts: mean and deviation per population across the batch.
    let stats_per_log: Vec<_> =
        logs.iter().map(metrics::attack_stats).collect::<Result<_, _>>().map_err(as_runtime)?;
    let mut attack_rows = String::from("population,attempted_mean,attempted_std,effective_mean,effective_std\n");
    let mut keys: Vec<String> = stats_per_log[0].keys().cloned().collect();
    keys.sort();
    for key in keys {
        let attempted: Vec<f64> =
            stats_per_log.iter().map(|s| f64::from(s[&key].attempted)).collect();
        let effective: Vec<f64> =
            stats_per_log.iter().map(|s| f64::from(s[&key].effective)).collect();
        let (a, e) = (metrics::mean_std(&attempted), metrics::mean_std(&effective));
        attack_rows.push_str(&format!("{key},{},{},{},{}\n", a.mean, a.std, e.mean, e.std));
    }
    write("attacks.csv", attack_rows)?;

    let depletions_per_log: Vec<_> =
        logs.iter().map(metrics::took_last_apple).collect::<Result<_, _>>().map_err(as_runtime)?;
    let mut depletion_rows = String::from("population,mean,std\n");
    let mut keys: Vec<String> = depletions_per_log[0].keys().cloned().collect();
    keys.sort();
    for key in keys {
        let values: Vec<f64> = depletions_per_log.iter().map(|c| f64::from(c[&key])).collect();
        let ms = metrics::mean_std(&values);
        depletion_rows.push_str(&format!("{key},{},{}\n", ms.mean, ms.std));
    }
    write("took_last_apple.csv", depletion_rows)?;

    // Last-apple approach indicator per focal agent; undefined ratios stay
    // null rather than zero.
    let mut last_apple_rows =
        String::from("agent,ratio_mean,defined_episodes,visible_ratio_mean,visible_defined_episodes\n");
    for agent in &focal_names {
        let stats: Vec<_> = logs
            .iter()
            .map(|l| metrics::last_apple_approach(l, agent))
            .collect::<Result<_, _>>()
            .map_err(as_runtime)?;
        let defined: Vec<f64> = stats.iter().filter_map(|s| s.ratio).collect();
        let visible_defined: Vec<f64> = stats.iter().filter_map(|s| s.visible_ratio).collect();
        let fmt_mean = |v: &[f64]| {
            if v.is_empty() {
                "null".to_string()
            } else {
                format!("{}", v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        last_apple_rows.push_str(&format!(
            "{agent},{},{},{},{}\n",
            fmt_mean(&defined),
            defined.len(),
            fmt_mean(&visible_defined),
            visible_defined.len()
        ));
    }
    write("last_apple_approach.csv", last_apple_rows)?;

    // Who the focal population aimed at, both aggregations.
    let mut shares = serde_json::Map::new();
    for entry in &header.roster {
        let agg = attack_target_share_batch(&logs, &focal_names, &entry.id).map_err(as_runtime)?;
        shares.insert(entry.id.clone(), serde_json::to_value(agg).unwrap());
    }

    let summary = batch_summary(&logs).map_err(as_runtime)?;
    let combined = serde_json::json!({
        "batch": summary,
        "attack_target_shares_by_focal": shares,
    });
    write("summary.json", serde_json::to_string_pretty(&combined).unwrap())?;

    for path in &written {
        println!("{path}");
    }
    Ok(())
}

pub fn cmd_scenarios() -> Result<(), CliError> {
    for name in ScenarioConfig::library_names() {
        println!("{name}");
    }
    Ok(())
}
