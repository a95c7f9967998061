use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use trustnet_core::PolicyTable;
use trustnet_harness::{
    check_idempotence, check_oracle, fuzz_urls, gen_world, run_corpus, seed_world, shipped_corpus,
    simulate_rate, ApiClient, World, WorldParams,
};
use trustnet_resolver::AimdConfig;
use trustnet_store::Store;

#[derive(Debug, Parser)]
#[command(
    name = "trustnet-harness",
    version,
    about = "Verification and operations tool"
)]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated world as newline-delimited records.
    GenWorld {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_sources: usize,
        #[arg(long, default_value_t = 3)]
        max_pages: usize,
        /// Output file; stdout if absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Compare the core rules with the brute-force oracle.
    CheckOracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random worlds on top of the exhaustive small-world sweep.
        #[arg(long, default_value_t = 1000)]
        random: usize,
    },
    /// Simulate the pacer against a domain with a fixed rate limit.
    SimulateRate {
        /// Requests per second the simulated domain admits.
        #[arg(long)]
        limit: f64,
        #[arg(long, default_value = "300s", value_parser = humantime_secs)]
        duration: Duration,
        #[arg(long, default_value = "60s", value_parser = humantime_secs)]
        warmup: Duration,
        /// Include the per-second trace.
        #[arg(long)]
        trace: bool,
    },
    /// Check canonicalization against an `input<TAB>expected` file.
    RunCorpus {
        /// Defaults to the shipped corpus.
        file: Option<PathBuf>,
        /// Also check idempotence on this many fuzzed URLs.
        #[arg(long, default_value_t = 500)]
        fuzz: usize,
    },
    /// Create a world's accounts and content in a running service.
    Seed {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        /// World file from gen-world.
        world: PathBuf,
    },
    /// Dump a database as newline-delimited records.
    Export {
        #[arg(long)]
        db: PathBuf,
    },
    /// Load records (an export or a world file) into a database.
    Import {
        #[arg(long)]
        db: PathBuf,
        file: PathBuf,
    },
}

fn humantime_secs(s: &str) -> Result<Duration, String> {
    let digits = s.trim_end_matches('s');
    digits
        .parse::<u64>()
        .map(Duration::from_secs)
        .map_err(|_| format!("expected seconds like \"300s\", got {s:?}"))
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(value).expect("reports serialize")
        );
    } else {
        print!("{}", text());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Ok(false) means the command ran but its check failed.
fn run(cli: Cli) -> anyhow::Result<bool> {
    let json = cli.json;
    match cli.command {
        Command::GenWorld {
            seed,
            max_sources,
            max_pages,
            out,
        } => {
            let params = WorldParams {
                max_sources,
                max_pages,
                ..WorldParams::default()
            };
            let world = gen_world(seed, &params);
            match out {
                Some(path) => {
                    let file = File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    world.write_ndjson(io::BufWriter::new(file))?;
                }
                None => world.write_ndjson(io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::CheckOracle { seed, random } => {
            let report = check_oracle(seed, random);
            emit(json, &report, || {
                let mut s = format!(
                    "{} worlds, {} comparisons, {} mismatches in {:.2}s\n",
                    report.worlds,
                    report.comparisons,
                    report.mismatches.len(),
                    report.elapsed.as_secs_f64()
                );
                for m in report.mismatches.iter().take(20) {
                    s += &format!(
                        "  {} viewer={} page={}: {}\n",
                        m.world, m.viewer, m.url_key, m.detail
                    );
                }
                s
            });
            Ok(report.passed())
        }
        Command::SimulateRate {
            limit,
            duration,
            warmup,
            trace,
        } => {
            let config = AimdConfig::default();
            let result = simulate_rate(limit, duration, &config)?;
            let steady = result.steady_state(warmup);
            #[derive(Serialize)]
            #[serde(rename_all = "camelCase")]
            struct Out<'a> {
                limit: f64,
                sent_count: u64,
                limited_count: u64,
                steady_state: &'a trustnet_harness::SteadyState,
                #[serde(skip_serializing_if = "Option::is_none")]
                samples: Option<&'a [trustnet_harness::RateSample]>,
            }
            let out = Out {
                limit,
                sent_count: result.sent_count,
                limited_count: result.limited_count,
                steady_state: &steady,
                samples: trace.then_some(result.samples.as_slice()),
            };
            emit(json, &out, || {
                let mut s = String::new();
                if trace {
                    for r in &result.samples {
                        s += &format!(
                            "{:>4}s sent={:<2} limited={:<2} rate={:.3}\n",
                            r.t, r.sent, r.limited, r.rate
                        );
                    }
                }
                s + &format!(
                    "limit {limit} req/s: after {}s sent {:.3} req/s, accepted {:.3} req/s, {:.2}% limited, rate in [{:.3}, {:.3}]\n",
                    steady.from_secs,
                    steady.sent_rate,
                    steady.accepted_rate,
                    steady.limited_fraction * 100.0,
                    steady.min_governor_rate,
                    steady.max_governor_rate
                )
            });
            Ok(true)
        }
        Command::RunCorpus { file, fuzz } => {
            let policies = PolicyTable::default();
            let path = file.unwrap_or_else(shipped_corpus);
            let report = run_corpus(&path, &policies)?;
            let idempotence = check_idempotence(&policies, &fuzz_urls(0, fuzz));
            #[derive(Serialize)]
            #[serde(rename_all = "camelCase")]
            struct Out<'a> {
                corpus: &'a trustnet_harness::CorpusReport,
                fuzzed: usize,
                idempotence_failures: &'a [trustnet_harness::IdempotenceFailure],
            }
            let out = Out {
                corpus: &report,
                fuzzed: fuzz,
                idempotence_failures: &idempotence,
            };
            emit(json, &out, || {
                let mut s = String::new();
                for w in &report.warnings {
                    s += &format!("warning: {w}\n");
                }
                for f in &report.failures {
                    s += &format!(
                        "{}:{}: {:?}\n    expected {}\n    got      {}\n",
                        path.display(),
                        f.line,
                        f.input,
                        f.expected,
                        f.actual
                    );
                }
                for f in &idempotence {
                    s += &format!(
                        "not idempotent: {:?} -> {} -> {}\n",
                        f.input, f.once, f.twice
                    );
                }
                s + &format!(
                    "{} cases, {} failed; {} fuzzed URLs, {} not idempotent\n",
                    report.cases,
                    report.failures.len(),
                    fuzz,
                    idempotence.len()
                )
            });
            Ok(report.passed() && idempotence.is_empty())
        }
        Command::Seed { server, world } => {
            let file =
                File::open(&world).with_context(|| format!("opening {}", world.display()))?;
            let world = World::read_ndjson(BufReader::new(file))?;
            let rt = tokio::runtime::Runtime::new()?;
            let report = rt.block_on(seed_world(&ApiClient::new(&server), &world))?;
            emit(json, &report, || {
                format!(
                    "seeded {} accounts, {} assessments, {} questions, {} shares (password {:?})\n",
                    report.accounts.len(),
                    report.assessments,
                    report.questions,
                    report.shares,
                    trustnet_harness::SEED_PASSWORD
                )
            });
            Ok(true)
        }
        Command::Export { db } => {
            let store = Store::open(&db).with_context(|| format!("opening {}", db.display()))?;
            let mut out = io::BufWriter::new(io::stdout().lock());
            let n = store.export(&mut out)?;
            out.flush()?;
            eprintln!("exported {n} records");
            Ok(true)
        }
        Command::Import { db, file } => {
            let store = Store::open(&db).with_context(|| format!("opening {}", db.display()))?;
            let open = || File::open(&file).with_context(|| format!("opening {}", file.display()));
            let first = io::BufRead::lines(BufReader::new(open()?))
                .next()
                .transpose()?
                .unwrap_or_default();
            let n = if first.contains("\"type\":\"world\"") {
                let world = World::read_ndjson(BufReader::new(open()?))?;
                let records = world
                    .to_records()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| (i + 1, r))
                    .collect();
                store.import_records(records)?
            } else {
                store.import(BufReader::new(open()?))?
            };
            emit(json, &serde_json::json!({"imported": n}), || {
                format!("imported {n} records\n")
            });
            Ok(true)
        }
    }
}
