//! The `goalsteer` command line.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use goalsteer_core::config::BackendKind;
use goalsteer_core::harness::{
    aggregate, aggregate_csv, aggregate_table, desk_prompts, emit_sweep, load_prompts, read_records, records_to_jsonl,
    run_experiment, sweep_csv,
};
use goalsteer_core::policies::{Backends, SyntheticWorld, SyntheticWorldConfig};
use goalsteer_core::{validate_config, Catalog, Error, FilterKind, Method, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "goalsteer", version, about = "Budgeted goal-conditioned prompt search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration over every seed and prompt.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        prompts: PromptArgs,
        /// Episode records (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Aggregate table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the configuration at several response budgets K, for both filters.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        prompts: PromptArgs,
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        k_values: Vec<u64>,
        /// Sweep CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every episode record (JSONL).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Recompute aggregate tables from record files.
    Aggregate {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check a configuration and print the resolved values.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Prompt file, one prompt per line; the bundled desk set when omitted.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Use only the first N prompts.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Config file plus per-field overrides. Flags win over the file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML config file (dotted keys).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Start from the equal-budget preset of this method instead of the
    /// plain defaults.
    #[arg(long)]
    pub preset: Option<Method>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub filter: Option<FilterKind>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub width: Option<u64>,
    #[arg(long)]
    pub depth: Option<u64>,
    #[arg(long)]
    pub branch_n: Option<u64>,
    #[arg(long)]
    pub per_step_k: Option<u64>,
    #[arg(long)]
    pub reward_function: Option<String>,
    #[arg(long)]
    pub filter_reward: Option<String>,
    #[arg(long)]
    pub n_objectives: Option<usize>,
    /// Builtin catalog id or catalog file path.
    #[arg(long)]
    pub catalog: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// synthetic or http.
    #[arg(long)]
    pub backend: Option<String>,
    /// Any config key, e.g. `--set backend.optimizer.temperature=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl ConfigArgs {
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(v) = self.method {
            put("method", quoted(v.as_str()));
        }
        if let Some(v) = self.filter {
            put("filter", quoted(v.as_str()));
        }
        for (key, v) in [
            ("n", self.n),
            ("k", self.k),
            ("width", self.width),
            ("depth", self.depth),
            ("branch_n", self.branch_n),
            ("per_step_k", self.per_step_k),
        ] {
            if let Some(v) = v {
                put(key, v.to_string());
            }
        }
        if let Some(v) = &self.reward_function {
            put("reward_function", quoted(&v.to_ascii_uppercase().replace('-', "_")));
        }
        if let Some(v) = &self.filter_reward {
            put("filter_reward", quoted(&v.to_ascii_uppercase().replace('-', "_")));
        }
        if let Some(v) = self.n_objectives {
            put("n_objectives", v.to_string());
        }
        if let Some(v) = &self.catalog {
            put("catalog", quoted(v));
        }
        if let Some(v) = &self.seeds {
            let list: Vec<String> = v.iter().map(u64::to_string).collect();
            put("seeds", format!("[{}]", list.join(", ")));
        }
        if let Some(v) = self.parallelism {
            put("parallelism", v.to_string());
        }
        if let Some(v) = &self.backend {
            put("backend.kind", quoted(&v.to_ascii_lowercase()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::ConfigParse(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            put(k.trim(), v.trim().to_string());
        }
        Ok(out)
    }

    /// Parsed but not validated.
    pub fn load(&self) -> Result<RunConfig> {
        let base = match self.preset {
            Some(m) => RunConfig::preset(m, self.filter.unwrap_or(FilterKind::Heuristic)),
            None => RunConfig::default(),
        };
        RunConfig::load_over(&base, self.config.as_deref(), &self.overrides()?)
    }
}

/// Backends for `cfg`: the synthetic world or the HTTP clients.
pub fn build_backends(cfg: &RunConfig) -> Result<Backends> {
    match cfg.backend.kind {
        BackendKind::Synthetic => {
            let catalog = Catalog::resolve(&cfg.catalog)?;
            let world = SyntheticWorld::new(SyntheticWorldConfig::from_params(&cfg.backend.synthetic, catalog));
            Ok(world.backends(cfg.backend.response.model_id.clone()))
        }
        BackendKind::Http => Ok(goalsteer_http::http_backends(&cfg.backend)?),
    }
}

fn prompt_set(args: &PromptArgs) -> Result<Vec<String>> {
    let mut prompts = match &args.prompts {
        Some(p) => load_prompts(p)?,
        None => desk_prompts(),
    };
    if let Some(n) = args.limit {
        prompts.truncate(n);
    }
    if prompts.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    Ok(prompts)
}

fn valid(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = args.load()?;
    let problems = validate_config(&cfg);
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(problems))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs a parsed command, writing human output to `out`. Returns the
/// process exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = config.load()?;
            let problems = validate_config(&cfg);
            if problems.is_empty() {
                writeln!(out, "{}", cfg.to_toml_string())?;
                writeln!(out, "# config ok")?;
                Ok(0)
            } else {
                for p in problems {
                    writeln!(out, "invalid: {p}")?;
                }
                Ok(2)
            }
        }
        Command::Run {
            config,
            prompts,
            out: records_path,
            csv,
        } => {
            let cfg = valid(&config)?;
            let prompts = prompt_set(&prompts)?;
            let backends = build_backends(&cfg)?;
            let artifact = match &records_path {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p)?);
                    let a = run_experiment(&cfg, &prompts, &backends, Some(&mut w))?;
                    w.flush()?;
                    a
                }
                None => run_experiment(&cfg, &prompts, &backends, None)?,
            };
            write!(out, "{}", aggregate_table(&artifact.rows))?;
            if let Some(p) = csv {
                write_file(&p, &aggregate_csv(&artifact.rows))?;
            }
            for f in &artifact.failures {
                writeln!(out, "seed {} aborted after {} episodes: {}", f.seed, f.completed, f.error)?;
            }
            Ok(if artifact.failures.is_empty() { 0 } else { 1 })
        }
        Command::Sweep {
            config,
            prompts,
            k_values,
            out: csv_path,
            records,
        } => {
            let cfg = valid(&config)?;
            let prompts = prompt_set(&prompts)?;
            let backends = build_backends(&cfg)?;
            let result = emit_sweep(&cfg, &k_values, &prompts, &backends)?;
            let csv = sweep_csv(&result.rows);
            match csv_path {
                Some(p) => write_file(&p, &csv)?,
                None => write!(out, "{csv}")?,
            }
            if let Some(p) = records {
                write_file(&p, &records_to_jsonl(&result.records)?)?;
            }
            Ok(0)
        }
        Command::Aggregate { records, csv } => {
            let mut all = Vec::new();
            for p in &records {
                all.extend(read_records(BufReader::new(File::open(p)?))?);
            }
            let rows = aggregate(&all)?;
            write!(out, "{}", aggregate_table(&rows))?;
            if let Some(p) = csv {
                write_file(&p, &aggregate_csv(&rows))?;
            }
            Ok(0)
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
