//! Operator CLI: serve the mediator, run and validate blueprints, inspect
//! the store, and print the cost amortization tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};
use weft::cost::{
    break_even, crossing_99, emit_tables, engine_total, marginal_savings_pct, savings_pct,
    CostModelInputs,
};
use weft::engine::{RunResult, RunStatus, StepStatus};
use weft::pool::{ClientPool, PoolConfig};
use weft::rpc::{http_router, serve_stdio, McpService};
use weft::store::StoreError;
use weft::validate::Issue;
use weft::{
    parse_blueprint, validate_structure, validate_tools, Engine, Mediator, ValidationReport,
    WorkflowBlueprint, WorkflowStore,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_CONNECT: u8 = 3;
const EXIT_RUN_FAILED: u8 = 4;
const EXIT_NOT_FOUND: u8 = 5;
const EXIT_PARAM: u8 = 6;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransportArg {
    Stdio,
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Table,
    Appendix,
}

#[derive(Parser)]
#[command(
    name = "weft",
    version,
    about = "Workflow mediator for MCP: design orchestrations once, run them with one call"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the six workflow tools over MCP.
    Serve {
        /// Downstream server config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Store directory for blueprints and run records.
        #[arg(long, env = "WEFT_STORE", default_value = ".weft")]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = TransportArg::Stdio)]
        transport: TransportArg,
        /// Port for the http transport.
        #[arg(long, default_value_t = 8987)]
        port: u16,
    },
    /// Execute a stored workflow by id, or a blueprint file directly.
    Run {
        id_or_file: String,
        /// Workflow parameter as key=value; the value is parsed as JSON when
        /// possible, otherwise taken as a string. Repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Downstream server config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "WEFT_STORE", default_value = ".weft")]
        store: PathBuf,
        /// Print the run result as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check a blueprint file without saving it. Tool-existence checks run
    /// when a config is given.
    Validate {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// List stored workflows.
    List {
        #[arg(long, env = "WEFT_STORE", default_value = ".weft")]
        store: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Delete a stored workflow.
    Delete {
        id: String,
        #[arg(long, env = "WEFT_STORE", default_value = ".weft")]
        store: PathBuf,
    },
    /// Print the agent-vs-engine token amortization table.
    Cost {
        #[arg(long, value_enum, default_value_t = PresetArg::Table)]
        preset: PresetArg,
        /// Comma-separated run counts.
        #[arg(long, default_value = "1,2,5,10,50,365")]
        k: String,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::init();
    let code = match Cli::parse().command {
        Command::Serve {
            config,
            store,
            transport,
            port,
        } => cmd_serve(&config, &store, transport, port).await,
        Command::Run {
            id_or_file,
            params,
            config,
            store,
            json,
        } => cmd_run(&id_or_file, &params, &config, &store, json).await,
        Command::Validate { file, config, json } => cmd_validate(&file, config.as_deref(), json).await,
        Command::List { store, json } => cmd_list(&store, json),
        Command::Delete { id, store } => cmd_delete(&id, &store),
        Command::Cost { preset, k, csv } => cmd_cost(preset, &k, csv),
    };
    ExitCode::from(code)
}

async fn open_pool(path: &Path) -> Result<ClientPool, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read config {}: {e}", path.display());
        EXIT_CONFIG
    })?;
    let config = PoolConfig::parse(&text).map_err(|e| {
        eprintln!("bad config {}: {e}", path.display());
        EXIT_CONFIG
    })?;
    ClientPool::initialize(&config.servers).await.map_err(|e| {
        eprintln!("{e}");
        EXIT_CONNECT
    })
}

fn open_store(dir: &Path) -> Result<WorkflowStore, u8> {
    WorkflowStore::open(dir).map_err(|e| {
        eprintln!("cannot open store {}: {e}", dir.display());
        EXIT_CONFIG
    })
}

async fn cmd_serve(config: &Path, store: &Path, transport: TransportArg, port: u16) -> u8 {
    let pool = match open_pool(config).await {
        Ok(pool) => pool,
        Err(code) => return code,
    };
    let store = match open_store(store) {
        Ok(store) => store,
        Err(code) => return code,
    };
    let mediator: Arc<dyn McpService> = Arc::new(Mediator::new(Arc::new(store), Arc::new(pool)));
    match transport {
        TransportArg::Stdio => match serve_stdio(mediator).await {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("stdio transport failed: {e}");
                EXIT_CONNECT
            }
        },
        TransportArg::Http => {
            let listener = match tokio::net::TcpListener::bind(("127.0.0.1", port)).await {
                Ok(listener) => listener,
                Err(e) => {
                    eprintln!("cannot bind port {port}: {e}");
                    return EXIT_CONNECT;
                }
            };
            if let Ok(addr) = listener.local_addr() {
                eprintln!("listening on http://{addr}/mcp");
            }
            match axum::serve(listener, http_router(mediator)).await {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("http transport failed: {e}");
                    EXIT_CONNECT
                }
            }
        }
    }
}

fn parse_cli_params(pairs: &[String]) -> Result<Map<String, Value>, String> {
    let mut map = Map::new();
    for pair in pairs {
        let Some((key, raw)) = pair.split_once('=') else {
            return Err(format!("--param '{pair}' is not key=value"));
        };
        if key.is_empty() {
            return Err(format!("--param '{pair}' has an empty key"));
        }
        let value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        map.insert(key.to_owned(), value);
    }
    Ok(map)
}

fn load_blueprint_arg(id_or_file: &str, store: &WorkflowStore) -> Result<WorkflowBlueprint, u8> {
    if Path::new(id_or_file).is_file() {
        let text = std::fs::read_to_string(id_or_file).map_err(|e| {
            eprintln!("cannot read {id_or_file}: {e}");
            EXIT_CONFIG
        })?;
        return parse_blueprint(&text).map_err(|e| {
            eprintln!("{id_or_file}: {e}");
            EXIT_CONFIG
        });
    }
    store.load(id_or_file).map_err(|e| match e {
        StoreError::NotFound(_) => {
            eprintln!("no stored workflow or blueprint file named '{id_or_file}'");
            EXIT_NOT_FOUND
        }
        other => {
            eprintln!("{other}");
            EXIT_CONFIG
        }
    })
}

async fn cmd_run(
    id_or_file: &str,
    params: &[String],
    config: &Path,
    store: &Path,
    json: bool,
) -> u8 {
    let params = match parse_cli_params(params) {
        Ok(params) => params,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_PARAM;
        }
    };
    let store = match open_store(store) {
        Ok(store) => store,
        Err(code) => return code,
    };
    let bp = match load_blueprint_arg(id_or_file, &store) {
        Ok(bp) => bp,
        Err(code) => return code,
    };
    let pool = match open_pool(config).await {
        Ok(pool) => pool,
        Err(code) => return code,
    };
    let engine = Engine::new(Arc::new(pool));
    let result = match engine.execute(&bp, &params).await {
        Ok(result) => result,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_PARAM;
        }
    };
    if let Err(e) = store.record_run(&result) {
        log::warn!("run {} completed but was not recorded: {e}", result.run_id);
    }
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&result).expect("run result serializes")
        );
    } else {
        print_run(&result);
    }
    match result.status {
        RunStatus::Success => 0,
        RunStatus::Failure | RunStatus::Partial => EXIT_RUN_FAILED,
    }
}

fn status_word(status: StepStatus) -> &'static str {
    match status {
        StepStatus::Ok => "ok",
        StepStatus::Error => "error",
        StepStatus::Skipped => "skipped",
    }
}

fn print_run(result: &RunResult) {
    let status = match result.status {
        RunStatus::Success => "success",
        RunStatus::Failure => "failure",
        RunStatus::Partial => "partial",
    };
    println!("run {} of '{}': {status}", result.run_id, result.workflow_id);
    println!("{:<32} {:<8} {:>10} {:>9}", "STEP", "STATUS", "DURATION", "ATTEMPTS");
    for step in &result.step_results {
        println!(
            "{:<32} {:<8} {:>8}ms {:>9}",
            step.step_id,
            status_word(step.status),
            step.duration_ms,
            step.attempts
        );
        if let Some(error) = &step.error {
            println!("    {}", error.message);
        }
    }
    if let Some(errors) = &result.collected_errors {
        println!("collected errors: {}", errors.len());
    }
}

fn print_issues(report: &ValidationReport) {
    let line = |kind: &str, issue: &Issue| {
        println!("{kind:<8} {:<24} {}: {}", issue.code, issue.path, issue.message);
    };
    for issue in &report.errors {
        line("error", issue);
    }
    for issue in &report.warnings {
        line("warning", issue);
    }
    println!(
        "{} error(s), {} warning(s)",
        report.errors.len(),
        report.warnings.len()
    );
}

async fn cmd_validate(file: &Path, config: Option<&Path>, json: bool) -> u8 {
    let text = match std::fs::read_to_string(file) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            eprintln!("no such file: {}", file.display());
            return EXIT_NOT_FOUND;
        }
        Err(e) => {
            eprintln!("cannot read {}: {e}", file.display());
            return EXIT_CONFIG;
        }
    };
    let report = match parse_blueprint(&text) {
        Ok(bp) => {
            let mut report = validate_structure(&bp);
            if let Some(config) = config {
                let pool = match open_pool(config).await {
                    Ok(pool) => pool,
                    Err(code) => return code,
                };
                report.extend(validate_tools(&bp, &pool.catalog()));
            }
            report
        }
        Err(e) => ValidationReport {
            errors: vec![Issue {
                path: "$".into(),
                code: "invalid-blueprint".into(),
                message: e.to_string(),
            }],
            warnings: vec![],
        },
    };
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print_issues(&report);
    }
    if report.is_clean() {
        0
    } else {
        EXIT_RUN_FAILED
    }
}

fn cmd_list(store: &Path, json: bool) -> u8 {
    let store = match open_store(store) {
        Ok(store) => store,
        Err(code) => return code,
    };
    let summaries = match store.list() {
        Ok(summaries) => summaries,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summaries).expect("summaries serialize")
        );
        return 0;
    }
    println!("{:<28} {:<10} {:>5}  DESCRIPTION", "ID", "VERSION", "STEPS");
    for summary in &summaries {
        println!(
            "{:<28} {:<10} {:>5}  {}",
            summary.id,
            summary.version.as_deref().unwrap_or("-"),
            summary.step_count,
            summary.description.as_deref().unwrap_or("")
        );
    }
    0
}

fn cmd_delete(id: &str, store: &Path) -> u8 {
    let store = match open_store(store) {
        Ok(store) => store,
        Err(code) => return code,
    };
    match store.delete(id) {
        Ok(()) => {
            println!("deleted {id}");
            0
        }
        Err(StoreError::NotFound(_)) => {
            eprintln!("no workflow with id '{id}'");
            EXIT_NOT_FOUND
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

fn cmd_cost(preset: PresetArg, k: &str, csv: bool) -> u8 {
    let inputs = match preset {
        PresetArg::Table => CostModelInputs::table(),
        PresetArg::Appendix => CostModelInputs::appendix(),
    };
    let mut ks = Vec::new();
    for token in k.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token.parse::<u64>() {
            Ok(n) => ks.push(n),
            Err(_) => {
                eprintln!("--k entry '{token}' is not a run count");
                return EXIT_CONFIG;
            }
        }
    }
    if csv {
        print!("{}", emit_tables(&inputs, &ks));
        return 0;
    }
    let agent = inputs.agent_cost();
    println!("{:>6} {:>14} {:>13} {:>9}", "K", "agentTotal", "engineTotal", "savings%");
    for &k in &ks {
        println!(
            "{:>6} {:>14} {:>13} {:>9}",
            k,
            k * agent,
            engine_total(k, &inputs),
            savings_pct(k, &inputs)
        );
    }
    if !ks.is_empty() {
        println!();
        println!("one agent run: {agent} tokens; design once: {} tokens; per trigger: {} tokens", inputs.design_cost, inputs.exec_cost);
        println!("break-even: {:.4} of one agent run", break_even(&inputs));
        println!("marginal savings per run: {}%", marginal_savings_pct(&inputs));
        println!("99% savings reached at K = {}", crossing_99(&inputs));
    }
    0
}
