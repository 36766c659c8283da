//! `emrc` command-line tool: validate topologies, generate backup
//! configurations and run recovery simulations.
//!
//! Exit codes: 0 success, 1 domain failure (topology not bi-connected,
//! configurations infeasible, simulation failed), 2 input error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use emrc::configgen::{coverage_report, generate, ConfigCount, ConfigError};
use emrc::forwarding::{Protocol, Timers};
use emrc::metrics::{write_delta_csv, write_packets_csv, RunManifest, Summary};
use emrc::sim::{run_mode, ReconvergenceRecord, Scenario, SimError, SimResult, Transition};
use emrc::{parse_topology, Graph};

#[derive(Parser)]
#[command(
    name = "emrc",
    version,
    about = "Multiple routing configurations with timeslot recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a topology and check that it is bi-connected.
    Validate {
        topology: PathBuf,
        /// Links are listed per direction instead of once per pair.
        #[arg(long)]
        directed: bool,
    },
    /// Generate backup configurations for a topology.
    Genconfig {
        topology: PathBuf,
        /// Number of backup configurations, or `auto` for the smallest that works.
        #[arg(long, default_value = "auto")]
        n: ConfigCount,
        /// Write the configuration JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        directed: bool,
    },
    /// Simulate a scenario.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Emrc)]
        mode: ModeArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario seed. Repeat for a sweep; each seed gets
        /// its own `seed-<n>` subdirectory.
        #[arg(long)]
        seed: Vec<u64>,
        /// Parallel runs for seed sweeps.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// `t_slot,t_probe,t_reconv` in microseconds.
        #[arg(long, value_parser = parse_timers)]
        timers: Option<Timers>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Emrc,
    Mrc,
    Both,
}

impl ModeArg {
    fn protocols(self) -> Vec<Protocol> {
        match self {
            ModeArg::Emrc => vec![Protocol::Emrc],
            ModeArg::Mrc => vec![Protocol::Mrc],
            ModeArg::Both => vec![Protocol::Mrc, Protocol::Emrc],
        }
    }
}

fn parse_timers(s: &str) -> Result<Timers, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [slot, probe, reconv] = parts.as_slice() else {
        return Err("expected t_slot,t_probe,t_reconv".into());
    };
    let num = |v: &str| {
        v.parse::<u64>()
            .map_err(|_| format!("bad timer value '{v}'"))
    };
    let t = Timers {
        t_slot: num(slot)?,
        t_probe: num(probe)?,
        t_reconv: num(reconv)?,
    };
    t.validate()?;
    Ok(t)
}

enum Failure {
    /// Exit code 1.
    Domain(anyhow::Error),
    /// Exit code 2.
    Input(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn domain<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Domain(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { topology, directed } => cmd_validate(&topology, directed),
        Command::Genconfig {
            topology,
            n,
            out,
            directed,
        } => cmd_genconfig(&topology, n, out.as_deref(), directed),
        Command::Run {
            scenario,
            mode,
            out,
            seed,
            jobs,
            timers,
        } => cmd_run(&scenario, mode, &out, &seed, jobs, timers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_topology(path: &Path, directed: bool) -> Result<Graph, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(input)?;
    parse_topology(&text, !directed)
        .with_context(|| format!("{}", path.display()))
        .map_err(input)
}

fn cmd_validate(path: &Path, directed: bool) -> CmdResult {
    let g = load_topology(path, directed)?;
    println!(
        "parsed: {} nodes, {} links",
        g.node_count(),
        g.undirected_links().count()
    );
    if g.is_biconnected() {
        println!("biconnected: yes");
        return Ok(());
    }
    let reason = match g.articulation_points().first() {
        Some(a) => format!("articulation node {a}"),
        None => "disconnected".to_string(),
    };
    println!("biconnected: no ({reason})");
    Err(domain(anyhow::anyhow!("topology is not bi-connected")))
}

fn cmd_genconfig(path: &Path, n: ConfigCount, out: Option<&Path>, directed: bool) -> CmdResult {
    let g = load_topology(path, directed)?;
    let cs = generate(&g, n).map_err(|e| match e {
        ConfigError::InsufficientConfigurations { n, component } => domain(anyhow::anyhow!(
            "{n} backup configurations are not enough: cannot isolate {component}"
        )),
        other => domain(other),
    })?;
    let json = serde_json::to_string_pretty(&cs.to_json()).expect("serializable");

    let report = coverage_report(&cs, &g);
    let mut summary = String::new();
    if n == ConfigCount::Auto {
        summary += &format!("n = {} (smallest that works)\n", cs.backup_count());
    } else {
        summary += &format!("n = {}\n", cs.backup_count());
    }
    summary += "config  isolated nodes  isolated links\n";
    for c in cs.backups() {
        let nodes: Vec<String> = c.isolated_nodes().iter().map(|n| n.to_string()).collect();
        let links: Vec<String> = c.isolated_links().iter().map(|k| k.to_string()).collect();
        summary += &format!(
            "{:>6}  {:<14}  {}\n",
            c.index(),
            nodes.join(" "),
            links.join(" ")
        );
    }
    summary += &format!(
        "coverage: {} nodes, {} links, {}\n",
        report.nodes.len(),
        report.links.len(),
        if report.is_exact() {
            "each isolated exactly once"
        } else {
            "NOT exact"
        }
    );

    match out {
        Some(p) => {
            fs::write(p, json + "\n")
                .with_context(|| format!("cannot write {}", p.display()))
                .map_err(input)?;
            print!("{summary}");
        }
        None => {
            eprint!("{summary}");
            println!("{json}");
        }
    }
    Ok(())
}

/// Summary file written per mode.
#[derive(Serialize)]
struct RunReport<'a> {
    mode: Protocol,
    seed: u64,
    summary: &'a Summary,
    reconvergences: &'a [ReconvergenceRecord],
    transitions: &'a [Transition],
}

fn cmd_run(
    path: &Path,
    mode: ModeArg,
    out: &Path,
    seeds: &[u64],
    jobs: usize,
    timers: Option<Timers>,
) -> CmdResult {
    let mut sc = Scenario::load(path).map_err(input)?;
    if let Some(t) = timers {
        sc.timers = t;
    }
    let runs: Vec<(u64, PathBuf)> = match seeds {
        [] => vec![(sc.seed, out.to_path_buf())],
        [s] => vec![(*s, out.to_path_buf())],
        many => many
            .iter()
            .map(|&s| (s, out.join(format!("seed-{s}"))))
            .collect(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(domain)?;
    let results: Vec<Result<Vec<(Protocol, Summary)>, Failure>> = pool.install(|| {
        runs.par_iter()
            .map(|(seed, dir)| {
                let mut sc = sc.clone();
                sc.seed = *seed;
                run_one(&sc, path, mode, dir)
            })
            .collect()
    });
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    for ((seed, dir), res) in runs.iter().zip(results) {
        for (protocol, s) in res? {
            let mean = s
                .mean_latency
                .map_or_else(|| "-".to_string(), |m| format!("{m:.1} us"));
            let _ = writeln!(
                lock,
                "{protocol} seed {seed}: injected {}, delivered {}, dropped {}, in flight {}, mean latency {mean} -> {}",
                s.injected,
                s.delivered,
                s.dropped,
                s.in_flight,
                dir.display()
            );
        }
    }
    Ok(())
}

fn run_one(
    sc: &Scenario,
    scenario_path: &Path,
    mode: ModeArg,
    dir: &Path,
) -> Result<Vec<(Protocol, Summary)>, Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(input)?;
    let protocols = mode.protocols();
    let mut results: Vec<(Protocol, SimResult)> = Vec::new();
    for &p in &protocols {
        let res = run_mode(sc, p).map_err(|e| match e {
            SimError::Scenario(e) => input(e),
            other => domain(other),
        })?;
        results.push((p, res));
    }
    let write = |name: &str, bytes: Vec<u8>| -> Result<(), Failure> {
        let p = dir.join(name);
        fs::write(&p, bytes)
            .with_context(|| format!("cannot write {}", p.display()))
            .map_err(input)
    };
    for (p, res) in &results {
        let mut csv = Vec::new();
        write_packets_csv(&res.records, &mut csv).map_err(domain)?;
        write(&format!("packets_{p}.csv"), csv)?;
        let report = RunReport {
            mode: *p,
            seed: sc.seed,
            summary: &res.summary,
            reconvergences: &res.reconvergences,
            transitions: &res.transitions,
        };
        let mut json = serde_json::to_vec_pretty(&report).expect("serializable");
        json.push(b'\n');
        write(&format!("summary_{p}.json"), json)?;
    }
    if let [(Protocol::Mrc, mrc), (Protocol::Emrc, emrc)] = results.as_slice() {
        let mut csv = Vec::new();
        write_delta_csv(&mrc.records, &emrc.records, &mut csv).map_err(domain)?;
        write("delta.csv", csv)?;
    }
    let manifest = RunManifest {
        scenario: Some(scenario_path.display().to_string()),
        topology: sc.topology_path.as_ref().map(|p| p.display().to_string()),
        modes: protocols,
        n: sc.n,
        timers: sc.timers,
        link_delay: sc.link_delay,
        detection_delay: sc.detection_delay,
        hold_capacity: sc.hold_capacity,
        seed: sc.seed,
        out_dir: dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("serializable");
    json.push(b'\n');
    write("manifest.json", json)?;
    Ok(results.into_iter().map(|(p, r)| (p, r.summary)).collect())
}
